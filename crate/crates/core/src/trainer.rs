//! Stage I — joint optimization of shared weights and the exploitation
//! distribution.
//!
//! Every step draws the exploit-explore gate once, samples λ architectures
//! from the gated distribution restricted to the currently active space,
//! evaluates all of them on the same mini-batch, updates the shared weights
//! with the averaged gradient under the union of the samples' active masks,
//! and applies one stochastic natural-gradient step to the distribution
//! using utility-transformed losses. Progressive-expansion events and the
//! matching distribution widening run at epoch boundaries only, so
//! within-epoch estimators see a stationary space; the controller refresh
//! (exploitation probability `K = ρ/ρ_max`) is keyed to epochs as well.
//!
//! The main loop is written per-step even though the schedule is keyed to
//! epochs: weight and distribution updates happen every step, while
//! expansion and controller refresh fire only when an epoch boundary is
//! crossed.
//!
//! Randomness is budgeted at a fixed rate — one gate draw plus λ·V variable
//! draws per step, independent of outcomes — so a run can be checkpointed
//! at any epoch boundary and resumed bit-exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::{
    controller_gate, natural_gradient_step, update_controller, utility_transform,
    CategoricalParams, ControllerState, GateChoice, UtilityMode,
};
use crate::error::{Error, Result};
use crate::space::{expand, ArchitectureSpec, ExpansionEvent, ExpansionSchedule, SearchSpace};
use crate::supernet::adam::{linear_decay, AdamState};
use crate::supernet::backward::gradients;
use crate::supernet::tabular::TabularLandscape;
use crate::supernet::tasks::{derive_seed, TaskConfig};
use crate::supernet::{init_weights, ActiveMask, SupernetConfig, SupernetWeights};

/// Seed-derivation tag for the supernet weight initialization.
const WEIGHT_INIT_TAG: u64 = 0x5749_4e54;
/// Seed-derivation tag for the trainer's own sampling stream.
const TRAINER_RNG_TAG: u64 = 0x5452_4e52;

/// How the per-step gate is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateMode {
    /// Bernoulli(K) with K refreshed from the entropy ratio (default).
    ExploitExplore,
    /// Ablation: always exploit (K ≡ 1).
    ExploitOnly,
    /// Ablation: always explore (K ≡ 0).
    ExploreOnly,
}

impl GateMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ee" => Some(GateMode::ExploitExplore),
            "exploit_only" => Some(GateMode::ExploitOnly),
            "explore_only" => Some(GateMode::ExploreOnly),
            _ => None,
        }
    }
}

impl std::fmt::Display for GateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GateMode::ExploitExplore => write!(f, "ee"),
            GateMode::ExploitOnly => write!(f, "exploit_only"),
            GateMode::ExploreOnly => write!(f, "explore_only"),
        }
    }
}

/// Stage-I hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Architectures sampled per step (the estimator batch).
    pub lambda: usize,
    /// Controller refresh interval, in epochs.
    pub update_interval: usize,
    /// Base weight learning rate; decays linearly to zero over the run.
    pub weight_lr: f64,
    /// Natural-gradient step size for the distribution.
    pub theta_lr: f64,
    pub utility_mode: UtilityMode,
    pub gate_mode: GateMode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::InvalidParameter(
                "epochs and steps_per_epoch must be at least 1".into(),
            ));
        }
        if self.lambda == 0 {
            return Err(Error::InvalidParameter("lambda must be at least 1".into()));
        }
        if self.update_interval == 0 {
            return Err(Error::InvalidParameter(
                "update_interval must be at least 1".into(),
            ));
        }
        for (name, v) in [("weight_lr", self.weight_lr), ("theta_lr", self.theta_lr)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Neural evaluation backend: elastic transformer + synthetic task.
#[derive(Debug, Clone)]
pub struct NeuralBackend {
    pub config: SupernetConfig,
    pub task: TaskConfig,
    pub weights: SupernetWeights,
    pub opt: AdamState,
}

impl NeuralBackend {
    /// Fresh weights drawn from the documented initialization using a seed
    /// derived from the training seed.
    pub fn init(config: SupernetConfig, task: TaskConfig, seed: u64) -> Result<Self> {
        if task.vocab_size != config.vocab_size
            || task.seq_len != config.seq_len
            || task.num_classes() != config.num_classes
        {
            return Err(Error::InvalidParameter(format!(
                "task shape ({}, {}, {}) does not match the supernet ({}, {}, {})",
                task.vocab_size,
                task.seq_len,
                task.num_classes(),
                config.vocab_size,
                config.seq_len,
                config.num_classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[WEIGHT_INIT_TAG]));
        let weights = init_weights(&config, &mut rng);
        let opt = AdamState::new(&config);
        Ok(NeuralBackend { config, task, weights, opt })
    }
}

/// Tabular evaluation backend: an analytic loss landscape, no weights.
#[derive(Debug, Clone)]
pub struct TabularBackend {
    pub landscape: TabularLandscape,
}

/// The two step evaluators the trainer can drive.
#[derive(Debug, Clone)]
pub enum TrainBackend {
    Neural(Box<NeuralBackend>),
    Tabular(Box<TabularBackend>),
}

impl TrainBackend {
    /// The full search space the backend was built for.
    pub fn space(&self) -> &SearchSpace {
        match self {
            TrainBackend::Neural(b) => b.config.space(),
            TrainBackend::Tabular(b) => b.landscape.space(),
        }
    }

    /// Estimator batch size used when the caller does not pick one: the
    /// neural backend pays a forward-backward per sample, the tabular one a
    /// table lookup.
    pub fn default_lambda(&self) -> usize {
        match self {
            TrainBackend::Neural(_) => 2,
            TrainBackend::Tabular(_) => 8,
        }
    }

    /// Evaluates the step's sampled architectures and, for the neural
    /// backend, applies the averaged masked weight update. Every sampled
    /// architecture sees the same mini-batch so the losses compare
    /// architectures rather than data noise.
    fn step_losses(
        &mut self,
        archs: &[ArchitectureSpec],
        epoch: usize,
        step: usize,
        config: &TrainConfig,
        total_steps: u64,
    ) -> Result<Vec<f64>> {
        let non_finite = |arch: &ArchitectureSpec, value: f64| Error::NonFiniteLoss {
            epoch,
            step,
            arch: arch.to_string(),
            value,
        };
        match self {
            TrainBackend::Tabular(b) => archs
                .iter()
                .map(|arch| {
                    let loss = b.landscape.loss(arch);
                    if loss.is_finite() { Ok(loss) } else { Err(non_finite(arch, loss)) }
                })
                .collect(),
            TrainBackend::Neural(b) => {
                let batch = b.task.train_batch(config.seed, epoch, step);
                let mut losses = Vec::with_capacity(archs.len());
                let mut averaged = SupernetWeights::zeros(&b.config);
                for arch in archs {
                    let (loss, grad) = gradients(&b.weights, &b.config, arch, &batch)?;
                    if !loss.is_finite() {
                        return Err(non_finite(arch, loss));
                    }
                    losses.push(loss);
                    averaged.scaled_add(&grad, 1.0 / archs.len() as f64);
                }
                let mask = ActiveMask::union_of(archs, &b.config);
                let lr = linear_decay(config.weight_lr, b.opt.step, total_steps);
                b.opt.step(&mut b.weights, &averaged, &mask, lr);
                Ok(losses)
            }
        }
    }
}

/// λ independent draws from the gated distribution over the active space.
pub fn sample_step<R: rand::Rng>(
    gate: GateChoice,
    params: &CategoricalParams,
    space: &SearchSpace,
    lambda: usize,
    rng: &mut R,
) -> Result<Vec<ArchitectureSpec>> {
    if lambda == 0 {
        return Err(Error::InvalidParameter("lambda must be at least 1".into()));
    }
    let uniform;
    let source = match gate {
        GateChoice::Exploit => params,
        GateChoice::Explore => {
            uniform = CategoricalParams::uniform_init(space);
            &uniform
        }
    };
    Ok((0..lambda).map(|_| source.sample(space, rng)).collect())
}

/// One step's trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub gate: GateChoice,
    /// Compact text encodings of the sampled architectures.
    pub archs: Vec<String>,
    pub losses: Vec<f64>,
    /// Distribution entropy after this step's update (nats).
    pub entropy: f64,
    /// Exploitation probability in force at this step.
    pub k: f64,
}

/// Complete training trace: one record per step plus the expansion events
/// that fired.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub expansions: Vec<ExpansionEvent>,
}

/// Everything that evolves during training; checkpointable at epoch
/// boundaries and sufficient for bit-exact resumption.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Currently active slice of the search space.
    pub space: SearchSpace,
    pub params: CategoricalParams,
    pub controller: ControllerState,
    pub backend: TrainBackend,
    pub rng: ChaCha8Rng,
    /// Next epoch the loop will execute.
    pub next_epoch: usize,
}

impl TrainState {
    /// Fresh state at epoch 0: the schedule's initial active space, a
    /// uniform distribution over it, and a freshly seeded sampler.
    pub fn new(
        space: &SearchSpace,
        schedule: &ExpansionSchedule,
        backend: TrainBackend,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let bound = backend.space();
        if bound.depth_options() != space.depth_options()
            || bound.head_options() != space.head_options()
            || bound.intermediate_options() != space.intermediate_options()
        {
            return Err(Error::InvalidSpace(
                "backend is bound to a different search space".into(),
            ));
        }
        let active = space.with_active_counts(schedule.initial())?;
        let params = CategoricalParams::uniform_init(&active);
        let controller = update_controller(&params, &active, config.update_interval);
        let rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[TRAINER_RNG_TAG]));
        Ok(TrainState { space: active, params, controller, backend, rng, next_epoch: 0 })
    }
}

/// Exploitation probability in force under a gate mode.
fn effective_k(controller_k: f64, mode: GateMode) -> f64 {
    match mode {
        GateMode::ExploitExplore => controller_k,
        GateMode::ExploitOnly => 1.0,
        GateMode::ExploreOnly => 0.0,
    }
}

/// Runs training from `state.next_epoch` to `config.epochs`, appending to a
/// fresh history. `on_epoch_end` fires after each completed epoch (state
/// already advanced) — the hook checkpointing uses; return an error to
/// abort.
pub fn run(
    state: &mut TrainState,
    schedule: &ExpansionSchedule,
    config: &TrainConfig,
    mut on_epoch_end: impl FnMut(&TrainState, &TrainHistory) -> Result<()>,
) -> Result<TrainHistory> {
    config.validate()?;
    let total_steps = (config.epochs * config.steps_per_epoch) as u64;
    let mut history = TrainHistory::default();
    while state.next_epoch < config.epochs {
        let epoch = state.next_epoch;
        // Expansion first, controller refresh second, so a refresh epoch
        // sees the widened support.
        let events = schedule.events_at(epoch);
        if !events.is_empty() {
            let wider = expand(&state.space, schedule, epoch);
            state.params = state.params.widen_to(&wider)?;
            state.space = wider;
            history.expansions.extend(events);
        }
        if epoch.is_multiple_of(config.update_interval) {
            state.controller =
                update_controller(&state.params, &state.space, config.update_interval);
        }
        let k = effective_k(state.controller.k, config.gate_mode);
        let gate_dist = ControllerState { k, ..state.controller };
        for step in 0..config.steps_per_epoch {
            let gate = controller_gate(&gate_dist, &mut state.rng);
            let archs =
                sample_step(gate, &state.params, &state.space, config.lambda, &mut state.rng)?;
            let losses =
                state.backend.step_losses(&archs, epoch, step, config, total_steps)?;
            // Ranking utilities are undefined for a single sample; a
            // one-sample step leaves the distribution untouched instead.
            let utilities = if config.utility_mode == UtilityMode::Ranking
                && config.lambda < 2
            {
                vec![0.0; losses.len()]
            } else {
                utility_transform(&losses, config.utility_mode)?
            };
            if config.theta_lr > 0.0 {
                let batch: Vec<(ArchitectureSpec, f64)> =
                    archs.iter().cloned().zip(utilities).collect();
                state.params =
                    natural_gradient_step(&state.params, &batch, config.theta_lr, &state.space)?;
            }
            history.steps.push(StepRecord {
                epoch,
                step,
                gate,
                archs: archs.iter().map(|a| a.to_string()).collect(),
                losses,
                entropy: state.params.entropy(),
                k,
            });
        }
        state.next_epoch += 1;
        on_epoch_end(state, &history)?;
    }
    Ok(history)
}

/// Full Stage-I run from scratch; returns the final state (weights and
/// distribution included) together with the step-level history.
pub fn train(
    space: &SearchSpace,
    schedule: &ExpansionSchedule,
    backend: TrainBackend,
    config: &TrainConfig,
) -> Result<(TrainState, TrainHistory)> {
    let mut state = TrainState::new(space, schedule, backend, config)?;
    let history = run(&mut state, schedule, config, |_, _| Ok(()))?;
    Ok((state, history))
}

/// Per-epoch aggregate of a training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Mean of all sampled losses in the epoch.
    pub mean_loss: f64,
    /// Distribution entropy after the epoch's last step.
    pub entropy: f64,
    /// Exploitation probability in force during the epoch.
    pub k: f64,
    /// Fraction of steps whose gate chose exploration.
    pub explore_fraction: f64,
}

/// Aggregates the history into one row per epoch.
pub fn progress_report(history: &TrainHistory) -> Vec<EpochSummary> {
    let steps = &history.steps;
    let mut rows = Vec::new();
    let mut i = 0;
    while i < steps.len() {
        let epoch = steps[i].epoch;
        let (mut loss_sum, mut loss_n, mut explores) = (0.0, 0usize, 0usize);
        let mut j = i;
        while j < steps.len() && steps[j].epoch == epoch {
            loss_sum += steps[j].losses.iter().sum::<f64>();
            loss_n += steps[j].losses.len();
            explores += usize::from(steps[j].gate == GateChoice::Explore);
            j += 1;
        }
        rows.push(EpochSummary {
            epoch,
            mean_loss: loss_sum / loss_n as f64,
            entropy: steps[j - 1].entropy,
            k: steps[i].k,
            explore_fraction: explores as f64 / (j - i) as f64,
        });
        i = j;
    }
    rows
}

/// Step-level CSV: `epoch,step,gate,k,entropy,archs,losses` with the λ
/// architectures and losses `|`-joined inside their columns.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,step,gate,k,entropy,archs,losses\n");
    for r in &history.steps {
        let gate = match r.gate {
            GateChoice::Exploit => "exploit",
            GateChoice::Explore => "explore",
        };
        let losses: Vec<String> = r.losses.iter().map(|l| l.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch,
            r.step,
            gate,
            r.k,
            r.entropy,
            r.archs.join("|"),
            losses.join("|")
        ));
    }
    out
}

/// Epoch-level CSV: `epoch,mean_loss,entropy,k,explore_fraction`.
pub fn report_csv(report: &[EpochSummary]) -> String {
    let mut out = String::from("epoch,mean_loss,entropy,k,explore_fraction\n");
    for r in report {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.mean_loss, r.entropy, r.k, r.explore_fraction
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::max_entropy;
    use crate::space::{presets, SearchSpace};
    use crate::supernet::tasks::TaskKind;

    fn tabular_backend(seed: u64) -> TrainBackend {
        TrainBackend::Tabular(Box::new(TabularBackend {
            landscape: TabularLandscape::planted(presets::desk(), seed, 0.0).unwrap(),
        }))
    }

    fn base_config() -> TrainConfig {
        TrainConfig {
            epochs: 4,
            steps_per_epoch: 5,
            lambda: 8,
            update_interval: 1,
            weight_lr: 0.0,
            theta_lr: 0.05,
            utility_mode: UtilityMode::Ranking,
            gate_mode: GateMode::ExploitExplore,
            seed: 42,
        }
    }

    #[test]
    fn history_has_one_record_per_step_and_report_one_per_epoch() {
        let space = presets::desk();
        let schedule = ExpansionSchedule::none(&space);
        let (_, history) =
            train(&space, &schedule, tabular_backend(1), &base_config()).unwrap();
        assert_eq!(history.steps.len(), 4 * 5);
        let report = progress_report(&history);
        assert_eq!(report.len(), 4);
        assert_eq!(report[0].epoch, 0);
        assert_eq!(report[3].epoch, 3);
    }

    #[test]
    fn zero_theta_lr_keeps_distribution_uniform_at_max_entropy() {
        let space = presets::desk();
        let schedule = ExpansionSchedule::none(&space);
        let mut config = base_config();
        config.theta_lr = 0.0;
        let (state, history) =
            train(&space, &schedule, tabular_backend(1), &config).unwrap();
        let expect = max_entropy(&space);
        let first = history.steps[0].entropy;
        assert!((first - expect).abs() < 1e-12);
        assert!(history.steps.iter().all(|r| r.entropy == first));
        assert_eq!(state.params, CategoricalParams::uniform_init(&space));
        // With uniform θ the controller holds K at the top of its range
        // (up to entropy-summation rounding).
        assert!(history.steps.iter().all(|r| r.k > 1.0 - 1e-12));
    }

    #[test]
    fn identical_seeds_reproduce_identical_histories() {
        let space = presets::desk();
        let schedule = ExpansionSchedule::progressive(&space, 4).unwrap();
        let (s1, h1) = train(&space, &schedule, tabular_backend(3), &base_config()).unwrap();
        let (s2, h2) = train(&space, &schedule, tabular_backend(3), &base_config()).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(s1.params, s2.params);
        let mut other = base_config();
        other.seed = 43;
        let (_, h3) = train(&space, &schedule, tabular_backend(3), &other).unwrap();
        assert_ne!(h1, h3);
    }

    #[test]
    fn forced_gate_modes_pin_k() {
        let space = presets::desk();
        let schedule = ExpansionSchedule::none(&space);
        for (mode, expect_k, expect_gate) in [
            (GateMode::ExploitOnly, 1.0, GateChoice::Exploit),
            (GateMode::ExploreOnly, 0.0, GateChoice::Explore),
        ] {
            let mut config = base_config();
            config.gate_mode = mode;
            let (_, history) =
                train(&space, &schedule, tabular_backend(5), &config).unwrap();
            assert!(history.steps.iter().all(|r| r.k == expect_k && r.gate == expect_gate));
        }
    }

    #[test]
    fn expansion_fires_at_boundaries_and_widens_support() {
        let space = presets::desk();
        let schedule = ExpansionSchedule::progressive(&space, 8).unwrap();
        let mut config = base_config();
        config.epochs = 8;
        let (state, history) =
            train(&space, &schedule, tabular_backend(7), &config).unwrap();
        assert_eq!(history.expansions, schedule.events().to_vec());
        assert!(state.space.is_fully_active());
        // Every sampled architecture was valid in the epoch's active space:
        // before the first expansion only the maximal configuration exists.
        let first_event = schedule.events()[0].epoch;
        let maximal = space.maximal_arch().to_string();
        for r in history.steps.iter().filter(|r| r.epoch < first_event) {
            assert!(r.archs.iter().all(|a| a == &maximal));
        }
        // After all events the distribution covers every option.
        assert_eq!(state.params.probs().len(), space.var_count());
        for var in 0..space.var_count() {
            assert_eq!(state.params.probs()[var].len(), space.options(var).len());
            assert!(state.params.probs()[var].iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn resume_from_epoch_boundary_matches_uninterrupted_run() {
        let space = presets::desk();
        let schedule = ExpansionSchedule::progressive(&space, 6).unwrap();
        let mut config = base_config();
        config.epochs = 6;
        // Uninterrupted run, snapshotting at the end of epoch 3.
        let mut snapshot: Option<TrainState> = None;
        let mut full_state =
            TrainState::new(&space, &schedule, tabular_backend(11), &config).unwrap();
        let full_history = run(&mut full_state, &schedule, &config, |st, _| {
            if st.next_epoch == 3 {
                snapshot = Some(st.clone());
            }
            Ok(())
        })
        .unwrap();
        // Resume the snapshot to completion.
        let mut resumed = snapshot.expect("epoch 3 reached");
        let tail = run(&mut resumed, &schedule, &config, |_, _| Ok(())).unwrap();
        assert_eq!(resumed.params, full_state.params);
        assert_eq!(resumed.controller, full_state.controller);
        assert_eq!(resumed.next_epoch, full_state.next_epoch);
        let tail_expected: Vec<_> = full_history
            .steps
            .iter()
            .filter(|r| r.epoch >= 3)
            .cloned()
            .collect();
        assert_eq!(tail.steps, tail_expected);
    }

    #[test]
    fn gate_frequency_tracks_constant_k() {
        // Sharpened θ gives a mid-range K; with a refresh only at epoch 0
        // and θ frozen, K stays constant and the explore rate must sit
        // within 3σ of 1−K.
        let space = presets::desk();
        let schedule = ExpansionSchedule::none(&space);
        let mut config = base_config();
        config.epochs = 1;
        config.steps_per_epoch = 4000;
        config.theta_lr = 0.0;
        let mut state =
            TrainState::new(&space, &schedule, tabular_backend(5), &config).unwrap();
        let mut probs = state.params.probs().to_vec();
        for v in &mut probs {
            if v.len() >= 2 {
                let spare: f64 = v[1..].iter().sum::<f64>() / 2.0;
                let k = v.len() as f64 - 1.0;
                v[0] += spare;
                for p in &mut v[1..] {
                    *p -= spare / k;
                }
            }
        }
        state.params = CategoricalParams::from_probs(probs, &space).unwrap();
        let history = run(&mut state, &schedule, &config, |_, _| Ok(())).unwrap();
        let k = history.steps[0].k;
        assert!(k > 0.2 && k < 0.98, "test needs a mid-range K, got {k}");
        let explores = history.steps.iter().filter(|r| r.gate == GateChoice::Explore).count();
        let freq = explores as f64 / history.steps.len() as f64;
        let sigma = (k * (1.0 - k) / history.steps.len() as f64).sqrt();
        assert!(
            (freq - (1.0 - k)).abs() <= 3.0 * sigma,
            "explore frequency {freq} vs expected {} (3σ = {})",
            1.0 - k,
            3.0 * sigma
        );
    }

    #[test]
    fn ee_mode_explores_more_as_entropy_collapses() {
        let space = presets::desk();
        let schedule = ExpansionSchedule::none(&space);
        let mut config = base_config();
        config.epochs = 40;
        config.steps_per_epoch = 10;
        config.theta_lr = 0.1;
        let (_, history) = train(&space, &schedule, tabular_backend(13), &config).unwrap();
        let report = progress_report(&history);
        let quarter = report.len() / 4;
        let first: f64 =
            report[..quarter].iter().map(|r| r.explore_fraction).sum::<f64>() / quarter as f64;
        let last: f64 = report[report.len() - quarter..]
            .iter()
            .map(|r| r.explore_fraction)
            .sum::<f64>()
            / quarter as f64;
        assert!(
            last > first,
            "exploration should rise as θ sharpens: first quarter {first}, last {last}"
        );
        // And entropy must actually have collapsed for the premise to hold.
        assert!(report.last().unwrap().entropy < report[0].entropy / 2.0);
    }

    #[test]
    fn single_architecture_space_with_lambda_one_trains_plainly() {
        let space = SearchSpace::new(vec![1], vec![2], vec![8]).unwrap();
        let sup = SupernetConfig::new(space.clone(), 8, 8, 6, 2).unwrap();
        let task = TaskConfig::new(TaskKind::MajorityToken, 8, 6, 16).unwrap();
        let backend =
            TrainBackend::Neural(Box::new(NeuralBackend::init(sup, task, 21).unwrap()));
        let config = TrainConfig {
            epochs: 6,
            steps_per_epoch: 8,
            lambda: 1,
            update_interval: 1,
            weight_lr: 5e-3,
            theta_lr: 0.05,
            utility_mode: UtilityMode::Ranking,
            gate_mode: GateMode::ExploitExplore,
            seed: 21,
        };
        let schedule = ExpansionSchedule::none(&space);
        let (state, history) = train(&space, &schedule, backend, &config).unwrap();
        // θ cannot move (single-sample ranking is a no-op) …
        assert_eq!(state.params, CategoricalParams::uniform_init(&space));
        // … and the loss trend is downward.
        let report = progress_report(&history);
        assert!(
            report.last().unwrap().mean_loss < report[0].mean_loss,
            "loss should fall: {} -> {}",
            report[0].mean_loss,
            report.last().unwrap().mean_loss
        );
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let space = SearchSpace::new(vec![1], vec![2], vec![8]).unwrap();
        let sup = SupernetConfig::new(space.clone(), 8, 8, 6, 2).unwrap();
        let task = TaskConfig::new(TaskKind::MajorityToken, 8, 6, 4).unwrap();
        let mut backend = NeuralBackend::init(sup, task, 3).unwrap();
        backend.weights.embedding.set(0, 0, f64::INFINITY);
        let config = TrainConfig { weight_lr: 1e-3, lambda: 1, ..base_config() };
        let schedule = ExpansionSchedule::none(&space);
        let err = train(&space, &schedule, TrainBackend::Neural(Box::new(backend)), &config)
            .unwrap_err();
        match err {
            Error::NonFiniteLoss { epoch, step, arch, .. } => {
                assert_eq!((epoch, step), (0, 0));
                assert_eq!(arch, "d1:h2:k8");
            }
            other => panic!("expected NonFiniteLoss, got {other}"),
        }
    }

    #[test]
    fn sample_step_contracts() {
        let space = presets::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arch = space.minimal_arch();
        let point = CategoricalParams::deterministic(&space, &arch).unwrap();
        let draws =
            sample_step(GateChoice::Exploit, &point, &space, 5, &mut rng).unwrap();
        assert_eq!(draws.len(), 5);
        assert!(draws.iter().all(|a| a == &arch));
        let explored =
            sample_step(GateChoice::Explore, &point, &space, 64, &mut rng).unwrap();
        assert!(explored.iter().any(|a| a != &arch));
        assert!(explored.iter().all(|a| a.is_active_in(&space)));
        assert!(sample_step(GateChoice::Exploit, &point, &space, 0, &mut rng).is_err());
    }

    #[test]
    fn csv_emission_is_stable_and_ordered() {
        let space = presets::desk();
        let schedule = ExpansionSchedule::none(&space);
        let (_, history) =
            train(&space, &schedule, tabular_backend(1), &base_config()).unwrap();
        let csv1 = history_csv(&history);
        let csv2 = history_csv(&history);
        assert_eq!(csv1, csv2);
        assert!(csv1.starts_with("epoch,step,gate,k,entropy,archs,losses\n"));
        assert_eq!(csv1.lines().count(), 1 + history.steps.len());
        let report = progress_report(&history);
        let rcsv = report_csv(&report);
        assert!(rcsv.starts_with("epoch,mean_loss,entropy,k,explore_fraction\n"));
        assert_eq!(rcsv.lines().count(), 1 + report.len());
    }
}
