//! Command layer behind the `eenas` binary: experiment orchestration
//! (train → constrained searches → report), benchmark/trace emission, and
//! thin scripting oracles over the library modules.
//!
//! Every command is a pure function of its inputs and seeds: rerunning with
//! the same config produces byte-identical CSV/JSON artifacts. Wall-clock
//! timestamps appear only in the sidecar `run.log`. An output directory
//! accepts one writer at a time, enforced with a `lock` file that is
//! removed when the command finishes.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{load_config, BackendConfig, ExperimentConfig, SearchJob};
use crate::cost::{breakdown, cost_of, supernet_cost, CostBreakdown, CostMetric, ModelDims};
use crate::distribution::{theta_table, CategoricalParams};
use crate::error::{Error, Result};
use crate::search::{
    distribution_search, ensure_feasible, evolutionary_search, random_search,
    DistributionSearchConfig, PenaltyForm, RewardConfig, SearchBackend, SearchResult,
};
use crate::space::{presets, ArchDesc, ArchitectureSpec, SearchSpace};
use crate::supernet::tabular::{LandscapeKind, TabularLandscape};
use crate::supernet::tasks::{derive_seed, Batch, TaskConfig};
use crate::supernet::SupernetConfig;
use crate::trainer::{
    history_csv, progress_report, report_csv, run, train, GateMode, NeuralBackend,
    TabularBackend, TrainBackend, TrainState,
};

/// Seed-derivation tags for the command layer, disjoint from the trainer's:
/// landscape generation, per-job search RNG, benchmark searcher repetitions,
/// benchmark trainer repetitions.
const LANDSCAPE_TAG: u64 = 0x4c41_4e44;
const SEARCH_RNG_TAG: u64 = 0x5352_4348;
const BENCH_SEARCH_TAG: u64 = 0x424e_5348;
const BENCH_TRAIN_TAG: u64 = 0x424e_5452;

/// Validation batches drawn when no explicit count is given.
pub const DEFAULT_VAL_BATCHES: usize = 8;

/// Holds the `lock` file inside an output directory: created exclusively on
/// acquire, removed on drop. A second writer fails with
/// [`Error::OutputLocked`] instead of interleaving artifacts.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join("lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::OutputLocked(dir.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Sidecar log — the only artifact carrying wall-clock timestamps, so that
/// everything else can be compared byte-for-byte across reruns. Logging
/// failures are ignored: the log must never abort a run.
struct RunLog {
    file: fs::File,
}

impl RunLog {
    fn open(dir: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(dir.join("run.log"))?;
        Ok(RunLog { file })
    }

    fn note(&mut self, msg: &str) {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let _ = writeln!(self.file, "[{secs}] {msg}");
    }
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    s.push('\n');
    Ok(s)
}

fn make_landscape(
    kind: LandscapeKind,
    space: SearchSpace,
    seed: u64,
    noise: f64,
) -> Result<TabularLandscape> {
    match kind {
        LandscapeKind::Planted => TabularLandscape::planted(space, seed, noise),
        LandscapeKind::Deceptive => TabularLandscape::deceptive(space, seed, noise),
    }
}

/// Instantiates the evaluation backend an experiment configures. The
/// tabular landscape's generative seed is derived from the experiment seed,
/// so one config always denotes one landscape.
pub fn build_backend(cfg: &ExperimentConfig) -> Result<TrainBackend> {
    match &cfg.backend {
        BackendConfig::Tabular { landscape, noise } => {
            let seed = derive_seed(cfg.seed, &[LANDSCAPE_TAG]);
            let landscape = make_landscape(*landscape, cfg.space.clone(), seed, *noise)?;
            Ok(TrainBackend::Tabular(Box::new(TabularBackend { landscape })))
        }
        BackendConfig::Neural { task, batch_size } => {
            let m = &cfg.model;
            let sup = SupernetConfig::new(
                cfg.space.clone(),
                m.vocab_size,
                m.embed_dim,
                m.seq_len,
                m.num_classes,
            )?;
            let task = TaskConfig::new(*task, m.vocab_size, m.seq_len, *batch_size)?;
            Ok(TrainBackend::Neural(Box::new(NeuralBackend::init(sup, task, cfg.seed)?)))
        }
    }
}

/// Most-likely architecture under θ: per variable the argmax option, ties
/// resolved to the earlier (larger) option.
pub fn argmax_arch(params: &CategoricalParams, space: &SearchSpace) -> Result<ArchitectureSpec> {
    let pick = |var: usize| {
        let p = &params.probs()[var];
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        space.options(var)[best]
    };
    let depth = pick(0);
    let max_depth = space.max_depth();
    let mut heads = Vec::with_capacity(max_depth);
    let mut inters = Vec::with_capacity(max_depth);
    for l in 0..max_depth {
        heads.push(pick(1 + 2 * l));
        inters.push(pick(2 + 2 * l));
    }
    ArchitectureSpec::new(depth, heads, inters, space)
}

/// Model geometry for pricing architectures when the checkpoint cannot
/// supply one (tabular backends carry no model dims). Neural checkpoints
/// ignore these and use the supernet's own dims.
#[derive(Debug, Clone, Copy)]
pub struct DimFlags {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub seq_len: usize,
}

impl DimFlags {
    fn to_dims(self, space: &SearchSpace) -> Result<ModelDims> {
        ModelDims::new(
            self.vocab_size,
            self.embed_dim,
            space.head_options()[0],
            self.seq_len,
            2,
        )
    }
}

/// Cost dims for a loaded state: the supernet's own geometry when neural,
/// the caller-supplied flags when tabular.
fn pricing_dims(state: &TrainState, flags: DimFlags) -> Result<ModelDims> {
    match &state.backend {
        TrainBackend::Neural(nb) => Ok(nb.config.dims()),
        TrainBackend::Tabular(_) => flags.to_dims(state.backend.space()),
    }
}

/// Validation batches for searching or evaluating `state`; empty for the
/// tabular backend, which scores architectures analytically.
fn val_batches_for(state: &TrainState, base_seed: u64, count: usize) -> Vec<Batch> {
    match &state.backend {
        TrainBackend::Neural(nb) => nb.task.val_batches(base_seed, count),
        TrainBackend::Tabular(_) => Vec::new(),
    }
}

/// Frozen-weight view of a training state for Stage-II search.
fn search_backend<'a>(
    state: &'a TrainState,
    dims: &'a ModelDims,
    val: &'a [Batch],
) -> SearchBackend<'a> {
    match &state.backend {
        TrainBackend::Neural(nb) => SearchBackend::Neural {
            weights: &nb.weights,
            config: &nb.config,
            val_batches: val,
        },
        TrainBackend::Tabular(tb) => SearchBackend::Tabular { landscape: &tb.landscape, dims },
    }
}

/// Budget parameters of one search run against a frozen backend.
fn reward_config_for(backend: &SearchBackend<'_>, job: &SearchJob) -> Result<RewardConfig> {
    let dims = backend.dims();
    let t_max = supernet_cost(backend.space(), &dims, job.metric);
    RewardConfig::new(job.omega, job.alpha, job.metric, t_max, job.penalty)
}

/// Runs one distribution-search job; the budget is validated for
/// feasibility first so an impossible Ω fails with the minimal cost named.
fn execute_search(
    backend: &SearchBackend<'_>,
    job: &SearchJob,
    rng_seed: u64,
) -> Result<SearchResult> {
    let rcfg = reward_config_for(backend, job)?;
    ensure_feasible(backend.space(), &backend.dims(), &rcfg)?;
    let scfg = DistributionSearchConfig::new(job.steps, job.samples_per_step, job.theta_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    distribution_search(backend, &rcfg, scfg, &mut rng)
}

/// Flat, script-friendly summary of one search run.
#[derive(Debug, Serialize)]
pub struct SearchReport {
    pub omega: u64,
    pub metric: String,
    pub penalty: String,
    pub alpha: f64,
    pub steps: usize,
    pub samples_per_step: usize,
    pub theta_lr: f64,
    pub seed: u64,
    pub architecture: String,
    pub depth: usize,
    pub accuracy: f64,
    pub cost: u64,
    pub reward: f64,
    pub feasible: bool,
    pub evaluations: usize,
}

fn search_report(job: &SearchJob, seed: u64, result: &SearchResult) -> SearchReport {
    let b = &result.best;
    SearchReport {
        omega: job.omega,
        metric: job.metric.to_string(),
        penalty: job.penalty.to_string(),
        alpha: job.alpha,
        steps: job.steps,
        samples_per_step: job.samples_per_step,
        theta_lr: job.theta_lr,
        seed,
        architecture: b.arch.to_string(),
        depth: b.arch.depth(),
        accuracy: b.accuracy,
        cost: b.cost,
        reward: b.reward,
        feasible: b.feasible,
        evaluations: result.evaluations,
    }
}

/// `step,step_best_reward,best_reward`: per-step batch best and running best.
fn trace_csv(result: &SearchResult) -> String {
    let mut out = String::from("step,step_best_reward,best_reward\n");
    let mut best = f64::NEG_INFINITY;
    for (i, &r) in result.reward_trace.iter().enumerate() {
        best = best.max(r);
        out.push_str(&format!("{i},{r},{best}\n"));
    }
    out
}

/// `rank,architecture,reward`: the final ten best distinct architectures.
fn top_csv(result: &SearchResult) -> String {
    let mut out = String::from("rank,architecture,reward\n");
    if let Some(last) = result.top_log.last() {
        for (rank, (arch, reward)) in last.iter().enumerate() {
            out.push_str(&format!("{},{arch},{reward}\n", rank + 1));
        }
    }
    out
}

/// Stage-I training from a config file — checkpointing every epoch — then
/// every configured `[search]` job against the frozen result. Artifacts:
/// `checkpoint.eesn`, `history.csv` (step level), `report.csv` (epoch
/// level), `theta.csv`, and per job `search_{i}.json`,
/// `search_{i}_trace.csv`, `search_{i}_top10.csv`, `search_{i}_theta.csv`,
/// summarized in `searches.csv`.
pub fn cmd_train(config_path: &Path) -> Result<()> {
    let cfg = load_config(config_path)?;
    let schedule = cfg.schedule()?;
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let mut log = RunLog::open(&cfg.output_dir)?;
    log.note(&format!("train start: seed {}", cfg.seed));

    // Validate every budget before paying for training.
    let backend = build_backend(&cfg)?;
    let probe_dims = match &backend {
        TrainBackend::Neural(nb) => nb.config.dims(),
        TrainBackend::Tabular(_) => cfg.model,
    };
    for job in &cfg.search_jobs {
        let t_max = supernet_cost(&cfg.space, &probe_dims, job.metric);
        let rcfg = RewardConfig::new(job.omega, job.alpha, job.metric, t_max, job.penalty)?;
        ensure_feasible(&cfg.space, &probe_dims, &rcfg)?;
    }

    let ckpt = cfg.output_dir.join("checkpoint.eesn");
    let mut state = TrainState::new(&cfg.space, &schedule, backend, &cfg.train)?;
    let history = run(&mut state, &schedule, &cfg.train, |st, _| checkpoint::save(st, &ckpt))?;
    fs::write(cfg.output_dir.join("history.csv"), history_csv(&history))?;
    let report = progress_report(&history);
    fs::write(cfg.output_dir.join("report.csv"), report_csv(&report))?;
    fs::write(cfg.output_dir.join("theta.csv"), theta_table(&state.params, &state.space))?;
    log.note("stage one finished");
    if let Some(last) = report.last() {
        println!(
            "trained {} epochs: mean loss {}, entropy {} nats",
            cfg.train.epochs, last.mean_loss, last.entropy
        );
    }
    println!("checkpoint: {}", ckpt.display());

    if cfg.search_jobs.is_empty() {
        log.note("train command finished (no search jobs)");
        return Ok(());
    }
    let dims = pricing_dims(&state, DimFlags {
        vocab_size: cfg.model.vocab_size,
        embed_dim: cfg.model.embed_dim,
        seq_len: cfg.model.seq_len,
    })?;
    let val = val_batches_for(&state, cfg.seed, DEFAULT_VAL_BATCHES);
    let backend = search_backend(&state, &dims, &val);
    let mut rows = String::from(
        "job,omega,metric,penalty,alpha,architecture,accuracy,cost,reward,feasible,evaluations\n",
    );
    for (i, job) in cfg.search_jobs.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &[SEARCH_RNG_TAG, i as u64]);
        let result = execute_search(&backend, job, seed)?;
        let rep = search_report(job, cfg.seed, &result);
        fs::write(cfg.output_dir.join(format!("search_{i}.json")), pretty_json(&rep)?)?;
        fs::write(cfg.output_dir.join(format!("search_{i}_trace.csv")), trace_csv(&result))?;
        fs::write(cfg.output_dir.join(format!("search_{i}_top10.csv")), top_csv(&result))?;
        if let Some(params) = &result.final_params {
            fs::write(
                cfg.output_dir.join(format!("search_{i}_theta.csv")),
                theta_table(params, backend.space()),
            )?;
        }
        rows.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{},{},{}\n",
            rep.omega,
            rep.metric,
            rep.penalty,
            rep.alpha,
            rep.architecture,
            rep.accuracy,
            rep.cost,
            rep.reward,
            rep.feasible,
            rep.evaluations
        ));
        log.note(&format!("search job {i} done"));
        println!(
            "search {i}: budget {} {} -> {} (accuracy {}, cost {}, feasible {})",
            rep.omega, rep.metric, rep.architecture, rep.accuracy, rep.cost, rep.feasible
        );
    }
    fs::write(cfg.output_dir.join("searches.csv"), rows)?;
    log.note("train command finished");
    Ok(())
}

/// Everything `eenas search` needs; flag defaults live in the binary and
/// match the `[search]` section defaults.
#[derive(Debug, Clone)]
pub struct SearchCmd {
    pub checkpoint: PathBuf,
    pub omega: u64,
    pub metric: CostMetric,
    pub steps: usize,
    pub samples_per_step: usize,
    pub theta_lr: f64,
    pub penalty: PenaltyForm,
    pub alpha: f64,
    pub seed: u64,
    pub val_seed: u64,
    pub val_batches: usize,
    pub dims: DimFlags,
    pub out: Option<PathBuf>,
}

/// Stage-II search against a frozen checkpoint: loads the state, runs one
/// distribution-search job, prints the summary JSON, and — with an output
/// directory — writes `result.json`, `trace.csv`, `top10.csv`, `theta.csv`.
/// The checkpoint file itself is never written to.
pub fn cmd_search(args: &SearchCmd) -> Result<()> {
    let state = checkpoint::load(&args.checkpoint)?;
    let dims = pricing_dims(&state, args.dims)?;
    let val = val_batches_for(&state, args.val_seed, args.val_batches);
    let backend = search_backend(&state, &dims, &val);
    let job = SearchJob {
        omega: args.omega,
        metric: args.metric,
        steps: args.steps,
        samples_per_step: args.samples_per_step,
        theta_lr: args.theta_lr,
        penalty: args.penalty,
        alpha: args.alpha,
    };
    let result = execute_search(&backend, &job, derive_seed(args.seed, &[SEARCH_RNG_TAG, 0]))?;
    if !result.best.feasible {
        return Err(Error::InvalidParameter(format!(
            "no feasible architecture sampled under budget {} {}; best candidate cost {}",
            args.omega, args.metric, result.best.cost
        )));
    }
    let report = search_report(&job, args.seed, &result);
    let json = pretty_json(&report)?;
    if let Some(dir) = &args.out {
        let _lock = DirLock::acquire(dir)?;
        let mut log = RunLog::open(dir)?;
        log.note(&format!("search: checkpoint {}", args.checkpoint.display()));
        fs::write(dir.join("result.json"), &json)?;
        fs::write(dir.join("trace.csv"), trace_csv(&result))?;
        fs::write(dir.join("top10.csv"), top_csv(&result))?;
        if let Some(params) = &result.final_params {
            fs::write(dir.join("theta.csv"), theta_table(params, backend.space()))?;
        }
        log.note("search finished");
    }
    print!("{json}");
    Ok(())
}

/// All feasible architectures achieving the maximal feasible accuracy —
/// the ground truth for evaluations-to-optimum accounting.
fn optimum_set(
    landscape: &TabularLandscape,
    dims: &ModelDims,
    rcfg: &RewardConfig,
) -> Result<HashSet<ArchitectureSpec>> {
    let space = landscape.space();
    let card = space.cardinality(true)?;
    let mut best = f64::NEG_INFINITY;
    let mut members = HashSet::new();
    for arch in space.enumerate(true, card)? {
        if cost_of(&arch, dims, rcfg.metric) >= rcfg.omega {
            continue;
        }
        let acc = landscape.accuracy(&arch);
        if acc > best {
            best = acc;
            members.clear();
        }
        if acc == best {
            members.insert(arch);
        }
    }
    if members.is_empty() {
        return Err(Error::InvalidParameter(
            "no feasible architecture exists under the benchmark budget".into(),
        ));
    }
    Ok(members)
}

/// First top-log index whose snapshot contains an optimum member.
fn found_index(result: &SearchResult, optimum: &HashSet<ArchitectureSpec>) -> Option<usize> {
    result
        .top_log
        .iter()
        .position(|snapshot| snapshot.iter().any(|(arch, _)| optimum.contains(arch)))
}

/// Median of already-sorted values; even lengths average the middle pair.
fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Interquartile range via Tukey hinges: quartiles are medians of the
/// lower/upper halves, the middle element excluded at odd lengths.
fn iqr_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let half = n / 2;
    median_sorted(&v[n - half..]) - median_sorted(&v[..half])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));
    v
}

/// Appends one `searchers.csv` row per emitted step. `entries_per_row`
/// groups trace entries so all methods report on a common step axis;
/// `evals_per_entry` converts trace indices into evaluation counts.
fn emit_searcher_rows(
    out: &mut String,
    method: &str,
    rep: usize,
    result: &SearchResult,
    entries_per_row: usize,
    evals_per_entry: usize,
) {
    let mut best = f64::NEG_INFINITY;
    let n = result.reward_trace.len();
    let mut step = 0;
    let mut i = 0;
    while i < n {
        let end = (i + entries_per_row).min(n);
        let step_best = result.reward_trace[i..end]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        best = best.max(step_best);
        let snap = &result.top_log[end - 1];
        let archs: Vec<String> = snap.iter().map(|(a, _)| a.to_string()).collect();
        let rewards: Vec<String> = snap.iter().map(|(_, r)| r.to_string()).collect();
        out.push_str(&format!(
            "{method},{rep},{step},{},{step_best},{best},{},{}\n",
            end * evals_per_entry,
            archs.join("|"),
            rewards.join("|"),
        ));
        step += 1;
        i = end;
    }
}

/// Searcher-versus-searcher and gate-mode comparison over seeded
/// repetitions, on a tabular backend with the first `[search]` budget.
///
/// Artifacts: `searchers.csv` (one row per method, repetition, and step,
/// with the running top-10), `searcher_summary.csv` (median/IQR of
/// evaluations-to-optimum — censored at the full budget when never found —
/// and of final best reward), `trainers.csv` (one row per gate mode and
/// repetition: the best loss observed across all sampled architectures and
/// the noise-free loss of the architecture the distribution settled on),
/// and `trainer_summary.csv` (median/IQR of both losses per mode).
pub fn cmd_benchmark(config_path: &Path) -> Result<()> {
    let cfg = load_config(config_path)?;
    let job = cfg.search_jobs.first().ok_or_else(|| {
        Error::InvalidParameter("benchmark needs a [search] section for its budget".into())
    })?;
    let BackendConfig::Tabular { landscape: kind, noise } = &cfg.backend else {
        return Err(Error::InvalidParameter(
            "benchmark compares methods on a tabular backend; configure one".into(),
        ));
    };
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let mut log = RunLog::open(&cfg.output_dir)?;
    let bench = &cfg.benchmark;
    log.note(&format!("benchmark start: {} repetitions", bench.repetitions));

    let landscape = make_landscape(
        *kind,
        cfg.space.clone(),
        derive_seed(cfg.seed, &[LANDSCAPE_TAG]),
        *noise,
    )?;
    let dims = cfg.model;
    let backend = SearchBackend::Tabular { landscape: &landscape, dims: &dims };
    let t_max = supernet_cost(&cfg.space, &dims, job.metric);
    let rcfg = RewardConfig::new(job.omega, job.alpha, job.metric, t_max, job.penalty)?;
    ensure_feasible(&cfg.space, &dims, &rcfg)?;
    let optimum = optimum_set(&landscape, &dims, &rcfg)?;
    let budget = bench.steps * bench.samples_per_step;

    let mut rows = String::from(
        "method,rep,step,evaluations,step_best_reward,best_reward,top_architectures,top_rewards\n",
    );
    let mut summary = String::from(
        "method,reps,found,median_evals_to_optimum,iqr_evals_to_optimum,\
         median_best_reward,iqr_best_reward\n",
    );
    for (mi, method) in ["distribution", "random", "evolutionary"].iter().enumerate() {
        let mut finals = Vec::with_capacity(bench.repetitions);
        let mut evals_to_opt = Vec::with_capacity(bench.repetitions);
        let mut found = 0usize;
        for rep in 0..bench.repetitions {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                &[BENCH_SEARCH_TAG, mi as u64, rep as u64],
            ));
            let (result, entries_per_row, evals_per_entry) = match mi {
                0 => {
                    let scfg = DistributionSearchConfig::new(
                        bench.steps,
                        bench.samples_per_step,
                        bench.theta_lr,
                    );
                    let r = distribution_search(&backend, &rcfg, scfg, &mut rng)?;
                    (r, 1, bench.samples_per_step)
                }
                1 => {
                    let r = random_search(&backend, &rcfg, budget, &mut rng)?;
                    (r, bench.samples_per_step, 1)
                }
                _ => {
                    let r = evolutionary_search(
                        &backend,
                        &rcfg,
                        bench.population,
                        bench.generations,
                        bench.mutation_rate,
                        &mut rng,
                    )?;
                    (r, 1, bench.population)
                }
            };
            emit_searcher_rows(&mut rows, method, rep, &result, entries_per_row, evals_per_entry);
            finals.push(result.best.reward);
            match found_index(&result, &optimum) {
                Some(i) => {
                    found += 1;
                    evals_to_opt.push(((i + 1) * evals_per_entry) as f64);
                }
                None => evals_to_opt.push(result.evaluations as f64),
            }
        }
        let ev = sorted(evals_to_opt);
        let fr = sorted(finals);
        summary.push_str(&format!(
            "{method},{},{found},{},{},{},{}\n",
            bench.repetitions,
            median_sorted(&ev),
            iqr_sorted(&ev),
            median_sorted(&fr),
            iqr_sorted(&fr)
        ));
        log.note(&format!("searcher {method} done"));
    }
    fs::write(cfg.output_dir.join("searchers.csv"), rows)?;
    fs::write(cfg.output_dir.join("searcher_summary.csv"), &summary)?;
    print!("{summary}");

    let schedule = cfg.schedule()?;
    let mut trows =
        String::from("mode,rep,seed,best_loss,chosen_loss,chosen_architecture,entropy\n");
    let mut tsummary = String::from(
        "mode,reps,median_best_loss,iqr_best_loss,median_chosen_loss,iqr_chosen_loss\n",
    );
    let modes = [GateMode::ExploitExplore, GateMode::ExploitOnly, GateMode::ExploreOnly];
    for (gi, mode) in modes.into_iter().enumerate() {
        let mut best_losses = Vec::with_capacity(bench.repetitions);
        let mut chosen_losses = Vec::with_capacity(bench.repetitions);
        for rep in 0..bench.repetitions {
            let mut tcfg = cfg.train.clone();
            tcfg.gate_mode = mode;
            tcfg.seed = derive_seed(cfg.seed, &[BENCH_TRAIN_TAG, gi as u64, rep as u64]);
            let backend =
                TrainBackend::Tabular(Box::new(TabularBackend { landscape: landscape.clone() }));
            let (state, history) = train(&cfg.space, &schedule, backend, &tcfg)?;
            // Best loss the run observed across all sampled architectures,
            // and the loss of the architecture the distribution settled on.
            let best = history
                .steps
                .iter()
                .flat_map(|r| r.losses.iter().copied())
                .fold(f64::INFINITY, f64::min);
            let arch = argmax_arch(&state.params, &state.space)?;
            let chosen = landscape.base_loss(&arch);
            trows.push_str(&format!(
                "{mode},{rep},{},{best},{chosen},{arch},{}\n",
                tcfg.seed,
                state.params.entropy()
            ));
            best_losses.push(best);
            chosen_losses.push(chosen);
        }
        let bl = sorted(best_losses);
        let cl = sorted(chosen_losses);
        tsummary.push_str(&format!(
            "{mode},{},{},{},{},{}\n",
            bench.repetitions,
            median_sorted(&bl),
            iqr_sorted(&bl),
            median_sorted(&cl),
            iqr_sorted(&cl)
        ));
        log.note(&format!("trainer mode {mode} done"));
    }
    fs::write(cfg.output_dir.join("trainers.csv"), trows)?;
    fs::write(cfg.output_dir.join("trainer_summary.csv"), &tsummary)?;
    print!("{tsummary}");
    log.note("benchmark finished");
    Ok(())
}

/// Arguments of `eenas enumerate`.
#[derive(Debug, Clone)]
pub struct EnumerateCmd {
    pub preset: String,
    pub dims: DimFlags,
    pub limit: u128,
    pub out: Option<PathBuf>,
}

fn preset_space(name: &str) -> Result<SearchSpace> {
    presets::by_name(name)
        .ok_or_else(|| Error::InvalidSpace(format!("unknown preset `{name}` (desk, bert)")))
}

/// Lists every architecture in a preset with its costs, in enumeration
/// order: `architecture,depth,params,params_with_embedding,flops`.
pub fn cmd_enumerate(args: &EnumerateCmd) -> Result<()> {
    let space = preset_space(&args.preset)?;
    let dims = args.dims.to_dims(&space)?;
    let mut out = String::from("architecture,depth,params,params_with_embedding,flops\n");
    for arch in space.enumerate(true, args.limit)? {
        let b = breakdown(&arch, &dims);
        out.push_str(&format!(
            "{arch},{},{},{},{}\n",
            arch.depth(),
            b.total_params_without_embedding,
            b.total_params_with_embedding,
            b.flops
        ));
    }
    match &args.out {
        Some(path) => fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

/// How a command names the architecture to act on.
#[derive(Debug, Clone)]
pub enum ArchChoice {
    /// Parse a `d…:h…:k…` description.
    Desc(String),
    /// The maximal (super-network) architecture.
    Max,
    /// The minimal architecture.
    Min,
    /// Most likely under a checkpoint's distribution.
    Argmax,
}

fn resolve_arch(
    choice: &ArchChoice,
    space: &SearchSpace,
    params: Option<&CategoricalParams>,
) -> Result<ArchitectureSpec> {
    match choice {
        ArchChoice::Desc(s) => s.parse::<ArchDesc>()?.into_arch(space),
        ArchChoice::Max => Ok(space.maximal_arch()),
        ArchChoice::Min => Ok(space.minimal_arch()),
        ArchChoice::Argmax => match params {
            Some(p) => argmax_arch(p, space),
            None => Err(Error::InvalidParameter(
                "the most-likely architecture needs a checkpoint".into(),
            )),
        },
    }
}

/// Arguments of `eenas cost`.
#[derive(Debug, Clone)]
pub struct CostCmd {
    pub preset: String,
    pub arch: ArchChoice,
    pub dims: DimFlags,
}

#[derive(Debug, Serialize)]
struct CostReport {
    architecture: String,
    depth: usize,
    params: u64,
    params_with_embedding: u64,
    flops: u64,
    supernet_params: u64,
    supernet_flops: u64,
    breakdown: CostBreakdown,
}

/// Itemized cost accounting for one architecture, as JSON on stdout.
pub fn cmd_cost(args: &CostCmd) -> Result<()> {
    let space = preset_space(&args.preset)?;
    let arch = resolve_arch(&args.arch, &space, None)?;
    let dims = args.dims.to_dims(&space)?;
    let b = breakdown(&arch, &dims);
    let report = CostReport {
        architecture: arch.to_string(),
        depth: arch.depth(),
        params: b.total_params_without_embedding,
        params_with_embedding: b.total_params_with_embedding,
        flops: b.flops,
        supernet_params: supernet_cost(&space, &dims, CostMetric::Params),
        supernet_flops: supernet_cost(&space, &dims, CostMetric::Flops),
        breakdown: b,
    };
    print!("{}", pretty_json(&report)?);
    Ok(())
}

/// Arguments of `eenas eval`.
#[derive(Debug, Clone)]
pub struct EvalCmd {
    pub checkpoint: PathBuf,
    pub arch: ArchChoice,
    pub val_seed: u64,
    pub val_batches: usize,
    pub dims: DimFlags,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    architecture: String,
    depth: usize,
    accuracy: f64,
    params: u64,
    flops: u64,
    val_seed: u64,
    val_batches: usize,
}

/// Inherited-weight accuracy of one architecture from a checkpoint, as
/// JSON on stdout. Deterministic per validation seed; the checkpoint is
/// only read.
pub fn cmd_eval(args: &EvalCmd) -> Result<()> {
    let state = checkpoint::load(&args.checkpoint)?;
    let dims = pricing_dims(&state, args.dims)?;
    let val = val_batches_for(&state, args.val_seed, args.val_batches);
    let backend = search_backend(&state, &dims, &val);
    let arch = resolve_arch(&args.arch, backend.space(), Some(&state.params))?;
    let accuracy = backend.accuracy(&arch)?;
    let b = breakdown(&arch, &dims);
    let report = EvalReport {
        architecture: arch.to_string(),
        depth: arch.depth(),
        accuracy,
        params: b.total_params_without_embedding,
        flops: b.flops,
        val_seed: args.val_seed,
        val_batches: val.len(),
    };
    print!("{}", pretty_json(&report)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::search::Candidate;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir()
            .join(format!("eenas-cli-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn lock_excludes_second_writer_and_clears_on_drop() {
        let dir = tmp_dir("lock");
        let first = DirLock::acquire(&dir).unwrap();
        match DirLock::acquire(&dir) {
            Err(Error::OutputLocked(p)) => assert!(p.contains("eenas-cli-lock")),
            other => panic!("expected OutputLocked, got {other:?}"),
        }
        drop(first);
        let again = DirLock::acquire(&dir).unwrap();
        drop(again);
        assert!(!dir.join("lock").exists());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn tukey_statistics_match_hand_values() {
        let v = sorted(vec![4.0, 1.0, 3.0, 2.0]);
        assert_eq!(median_sorted(&v), 2.5);
        assert_eq!(iqr_sorted(&v), 2.0);
        let v = sorted(vec![5.0, 3.0, 1.0, 2.0, 4.0]);
        assert_eq!(median_sorted(&v), 3.0);
        assert_eq!(iqr_sorted(&v), 3.0);
        assert_eq!(iqr_sorted(&[7.0]), 0.0);
    }

    #[test]
    fn argmax_arch_decodes_point_mass_and_breaks_ties_upward() {
        let space = presets::desk();
        let target = space.minimal_arch();
        let point = CategoricalParams::deterministic(&space, &target).unwrap();
        assert_eq!(argmax_arch(&point, &space).unwrap(), target);
        // Uniform θ ties every option; the largest one wins.
        let uniform = CategoricalParams::uniform_init(&space);
        assert_eq!(argmax_arch(&uniform, &space).unwrap(), space.maximal_arch());
    }

    #[test]
    fn trace_csv_tracks_running_best() {
        let space = presets::desk();
        let arch = space.minimal_arch();
        let result = SearchResult {
            best: Candidate {
                arch: arch.clone(),
                accuracy: 0.5,
                cost: 1,
                reward: 0.5,
                feasible: true,
            },
            reward_trace: vec![0.2, 0.5, 0.3],
            top_log: vec![vec![(arch.clone(), 0.5)]; 3],
            final_params: None,
            evaluations: 3,
        };
        assert_eq!(
            trace_csv(&result),
            "step,step_best_reward,best_reward\n0,0.2,0.2\n1,0.5,0.5\n2,0.3,0.5\n"
        );
        let top = top_csv(&result);
        assert!(top.starts_with("rank,architecture,reward\n1,"));
    }

    #[test]
    fn found_index_spots_first_snapshot_containing_an_optimum() {
        let space = presets::desk();
        let opt = space.minimal_arch();
        let other = space.maximal_arch();
        let mut optimum = HashSet::new();
        optimum.insert(opt.clone());
        let result = SearchResult {
            best: Candidate {
                arch: opt.clone(),
                accuracy: 1.0,
                cost: 1,
                reward: 1.0,
                feasible: true,
            },
            reward_trace: vec![0.1, 0.2, 0.3],
            top_log: vec![
                vec![(other.clone(), 0.1)],
                vec![(other.clone(), 0.1), (opt.clone(), 1.0)],
                vec![(opt.clone(), 1.0)],
            ],
            final_params: None,
            evaluations: 3,
        };
        assert_eq!(found_index(&result, &optimum), Some(1));
        let mut absent = HashSet::new();
        absent.insert(other.clone());
        let empty_log = SearchResult { top_log: vec![vec![(opt, 1.0)]], ..result };
        assert_eq!(found_index(&empty_log, &absent), None);
    }

    #[test]
    fn tabular_backend_is_a_pure_function_of_the_config() {
        let text = "\
[space]
preset = desk
[backend]
kind = tabular
[experiment]
output_dir = /tmp/unused
seed = 77
[train]
epochs = 2
steps_per_epoch = 2
";
        let cfg = parse_config(text).unwrap();
        let a = build_backend(&cfg).unwrap();
        let b = build_backend(&cfg).unwrap();
        let (TrainBackend::Tabular(a), TrainBackend::Tabular(b)) = (&a, &b) else {
            panic!("expected tabular backends");
        };
        assert_eq!(a.landscape.target(), b.landscape.target());
        assert_eq!(a.landscape.seed(), b.landscape.seed());
        // A different experiment seed denotes a different landscape.
        let other = parse_config(&text.replace("seed = 77", "seed = 78")).unwrap();
        let TrainBackend::Tabular(c) = build_backend(&other).unwrap() else {
            panic!("expected a tabular backend");
        };
        assert_ne!(a.landscape.seed(), c.landscape.seed());
    }
}
