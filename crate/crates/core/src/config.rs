//! Experiment configuration: a flat, sectioned key-value text format with
//! no external configuration language.
//!
//! ```text
//! # Full-line comments start with '#' or ';'.
//! [space]
//! preset = desk            # or inline: depths / heads / intermediates lists
//!
//! [backend]
//! kind = tabular           # tabular | neural
//! landscape = planted      # tabular: planted | deceptive
//!
//! [train]
//! epochs = 40
//! steps_per_epoch = 20
//!
//! [experiment]
//! output_dir = runs/demo
//! seed = 7
//!
//! [search]                 # repeat the section for one job per budget
//! omega = 12000
//! metric = params
//! ```
//!
//! Parsing is strict: unknown sections, unknown keys, duplicate keys, and
//! malformed values are all rejected with 1-based line numbers. Every
//! section other than `[search]` may appear at most once.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::cost::{CostMetric, ModelDims};
use crate::distribution::UtilityMode;
use crate::error::{Error, Result};
use crate::search::PenaltyForm;
use crate::space::{presets, ExpansionSchedule, SearchSpace};
use crate::supernet::tabular::LandscapeKind;
use crate::supernet::tasks::TaskKind;
use crate::trainer::{GateMode, TrainConfig};

/// Evaluation backend selected by `[backend]`.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendConfig {
    /// Analytic landscape; `noise` is the uniform observation-noise
    /// half-width. The dim fields only feed the cost model.
    Tabular { landscape: LandscapeKind, noise: f64 },
    /// Elastic transformer trained on a generated token task.
    Neural { task: TaskKind, batch_size: usize },
}

/// How the active space grows over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpansionKind {
    /// The whole space is active from epoch 0.
    None,
    /// One-shot curriculum: start minimal, activate one option at a time at
    /// evenly spaced epochs.
    Progressive,
}

impl ExpansionKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(ExpansionKind::None),
            "progressive" => Some(ExpansionKind::Progressive),
            _ => None,
        }
    }
}

/// One constraint-aware search job from a `[search]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchJob {
    pub omega: u64,
    pub metric: CostMetric,
    pub steps: usize,
    pub samples_per_step: usize,
    pub theta_lr: f64,
    pub penalty: PenaltyForm,
    pub alpha: f64,
}

/// Knobs of the searcher/trainer comparison harness, `[benchmark]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    /// Independent seeded repetitions per method.
    pub repetitions: usize,
    pub steps: usize,
    pub samples_per_step: usize,
    pub theta_lr: f64,
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            repetitions: 20,
            steps: 200,
            samples_per_step: 16,
            theta_lr: 0.15,
            population: 16,
            generations: 199,
            mutation_rate: 0.1,
        }
    }
}

/// A parsed experiment file: the space, the backend, Stage-I training
/// settings, Stage-II search jobs, and output plumbing.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub space: SearchSpace,
    pub backend: BackendConfig,
    pub train: TrainConfig,
    pub expansion: ExpansionKind,
    pub model: ModelDims,
    pub search_jobs: Vec<SearchJob>,
    pub benchmark: BenchmarkConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl ExperimentConfig {
    /// The expansion schedule the training run will follow.
    pub fn schedule(&self) -> Result<ExpansionSchedule> {
        match self.expansion {
            ExpansionKind::None => Ok(ExpansionSchedule::none(&self.space)),
            ExpansionKind::Progressive => {
                ExpansionSchedule::progressive(&self.space, self.train.epochs)
            }
        }
    }
}

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

/// One `key = value` entry with its source line.
#[derive(Debug)]
struct Entry {
    line: usize,
    value: String,
    consumed: bool,
}

/// A `[name]` block with its entries, keyed for single-pass consumption.
#[derive(Debug)]
struct Section {
    line: usize,
    entries: HashMap<String, Entry>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.get_mut(key).map(|e| {
            e.consumed = true;
            (e.line, e.value.clone())
        })
    }

    fn require(&mut self, key: &str) -> Result<(usize, String)> {
        self.take(key)
            .ok_or_else(|| config_err(self.line, format!("missing field `{key}`")))
    }

    /// Errors on the first entry no reader asked for — a typo'd key.
    fn finish(&self) -> Result<()> {
        let mut unknown: Vec<(&String, &Entry)> =
            self.entries.iter().filter(|(_, e)| !e.consumed).collect();
        unknown.sort_by_key(|(_, e)| e.line);
        if let Some((key, entry)) = unknown.first() {
            return Err(config_err(entry.line, format!("unknown key `{key}`")));
        }
        Ok(())
    }
}

fn parse_typed<T: std::str::FromStr>(line: usize, key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(line, format!("`{key}` must be {what}, got `{value}`")))
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|part| {
            let part = part.trim();
            part.parse().map_err(|_| {
                config_err(line, format!("`{key}` must be a comma-separated list of integers"))
            })
        })
        .collect()
}

/// Splits raw text into sections; only `[search]` may repeat.
fn split_sections(text: &str) -> Result<Vec<(String, Section)>> {
    let mut sections: Vec<(String, Section)> = Vec::new();
    let mut seen_once: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| config_err(line, "unterminated section header"))?
                .trim()
                .to_string();
            if name != "search" {
                if seen_once.contains(&name) {
                    return Err(config_err(line, format!("section [{name}] appears twice")));
                }
                seen_once.push(name.clone());
            }
            sections.push((name, Section { line, entries: HashMap::new() }));
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| config_err(line, "expected `key = value` or a section header"))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(config_err(line, "empty key"));
        }
        let (_, section) = sections
            .last_mut()
            .ok_or_else(|| config_err(line, "entry before any [section] header"))?;
        if section.entries.contains_key(&key) {
            return Err(config_err(line, format!("duplicate key `{key}` in this section")));
        }
        section.entries.insert(key, Entry { line, value, consumed: false });
    }
    Ok(sections)
}

fn read_space(section: &mut Section) -> Result<SearchSpace> {
    let preset = section.take("preset");
    let inline: Vec<_> =
        ["depths", "heads", "intermediates"].iter().map(|k| section.take(k)).collect();
    match (preset, &inline[..]) {
        (Some((line, name)), [None, None, None]) => presets::by_name(&name)
            .ok_or_else(|| config_err(line, format!("unknown space preset `{name}`"))),
        (None, [Some(_), Some(_), Some(_)]) => {
            let mut lists = Vec::new();
            for (key, slot) in ["depths", "heads", "intermediates"].iter().zip(&inline) {
                let (line, value) = slot.as_ref().expect("checked above");
                lists.push(parse_list(*line, key, value)?);
            }
            let mut it = lists.into_iter();
            let (depths, heads, inters) =
                (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
            SearchSpace::new(depths, heads, inters)
                .map_err(|e| config_err(section.line, e.to_string()))
        }
        (Some((line, _)), _) => Err(config_err(
            line,
            "`preset` and inline option lists are mutually exclusive",
        )),
        _ => Err(config_err(
            section.line,
            "give either `preset` or all of `depths`, `heads`, `intermediates`",
        )),
    }
}

fn read_enum<T>(
    section: &mut Section,
    key: &str,
    default: T,
    parse: impl Fn(&str) -> Option<T>,
    expected: &str,
) -> Result<T> {
    match section.take(key) {
        None => Ok(default),
        Some((line, value)) => parse(&value)
            .ok_or_else(|| config_err(line, format!("`{key}` must be one of {expected}"))),
    }
}

fn read_parsed<T: std::str::FromStr>(
    section: &mut Section,
    key: &str,
    default: T,
    what: &str,
) -> Result<T> {
    match section.take(key) {
        None => Ok(default),
        Some((line, value)) => parse_typed(line, key, &value, what),
    }
}

fn find_section<'a>(
    sections: &'a mut [(String, Section)],
    name: &str,
) -> Option<&'a mut Section> {
    sections.iter_mut().find(|(n, _)| n == name).map(|(_, s)| s)
}

/// Parses a complete experiment file. Every error carries the 1-based line
/// it was detected on.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut sections = split_sections(text)?;

    let space_section = find_section(&mut sections, "space")
        .ok_or_else(|| config_err(1, "missing section [space]"))?;
    let space = read_space(space_section)?;
    space_section.finish()?;

    let backend_section = find_section(&mut sections, "backend")
        .ok_or_else(|| config_err(1, "missing section [backend]"))?;
    let (kind_line, kind) = backend_section.require("kind")?;
    // Model dimensions are meaningful for both backends: the neural one
    // builds its supernet from them, the tabular one prices architectures.
    let vocab_size = read_parsed(backend_section, "vocab_size", 16usize, "a positive integer")?;
    let embed_dim = read_parsed(backend_section, "embed_dim", 32usize, "a positive integer")?;
    let seq_len = read_parsed(backend_section, "seq_len", 16usize, "a positive integer")?;
    let model = ModelDims::new(vocab_size, embed_dim, space.head_options()[0], seq_len, 2)
        .map_err(|e| config_err(backend_section.line, e.to_string()))?;
    let backend = match kind.as_str() {
        "tabular" => {
            let landscape = read_enum(
                backend_section,
                "landscape",
                LandscapeKind::Planted,
                LandscapeKind::parse,
                "planted | deceptive",
            )?;
            let noise = read_parsed(backend_section, "noise", 0.0f64, "a non-negative number")?;
            BackendConfig::Tabular { landscape, noise }
        }
        "neural" => {
            let task = read_enum(
                backend_section,
                "task",
                TaskKind::MajorityToken,
                TaskKind::parse,
                "t1 | majority | t2 | duplicate",
            )?;
            let batch_size =
                read_parsed(backend_section, "batch_size", 32usize, "a positive integer")?;
            BackendConfig::Neural { task, batch_size }
        }
        other => {
            return Err(config_err(kind_line, format!("unknown backend kind `{other}`")))
        }
    };
    backend_section.finish()?;

    let experiment_section = find_section(&mut sections, "experiment")
        .ok_or_else(|| config_err(1, "missing section [experiment]"))?;
    let (_, output_dir) = experiment_section.require("output_dir")?;
    let (seed_line, seed_text) = experiment_section.require("seed")?;
    let seed: u64 = parse_typed(seed_line, "seed", &seed_text, "an unsigned integer")?;
    experiment_section.finish()?;

    let train_section = find_section(&mut sections, "train")
        .ok_or_else(|| config_err(1, "missing section [train]"))?;
    let (epochs_line, epochs_text) = train_section.require("epochs")?;
    let epochs: usize = parse_typed(epochs_line, "epochs", &epochs_text, "a positive integer")?;
    let (spe_line, spe_text) = train_section.require("steps_per_epoch")?;
    let steps_per_epoch: usize =
        parse_typed(spe_line, "steps_per_epoch", &spe_text, "a positive integer")?;
    let default_lambda = match backend {
        BackendConfig::Tabular { .. } => 8,
        BackendConfig::Neural { .. } => 2,
    };
    let train = TrainConfig {
        epochs,
        steps_per_epoch,
        lambda: read_parsed(train_section, "lambda", default_lambda, "a positive integer")?,
        update_interval: read_parsed(train_section, "update_interval", 1, "a positive integer")?,
        weight_lr: read_parsed(train_section, "weight_lr", 5e-3, "a number")?,
        theta_lr: read_parsed(train_section, "theta_lr", 0.1, "a number")?,
        utility_mode: read_enum(
            train_section,
            "utility",
            UtilityMode::Ranking,
            UtilityMode::parse,
            "ranking | raw_loss",
        )?,
        gate_mode: read_enum(
            train_section,
            "gate",
            GateMode::ExploitExplore,
            GateMode::parse,
            "ee | exploit_only | explore_only",
        )?,
        seed,
    };
    let expansion = read_enum(
        train_section,
        "expansion",
        ExpansionKind::None,
        ExpansionKind::parse,
        "none | progressive",
    )?;
    train.validate().map_err(|e| config_err(train_section.line, e.to_string()))?;
    train_section.finish()?;

    let benchmark = match find_section(&mut sections, "benchmark") {
        None => BenchmarkConfig::default(),
        Some(section) => {
            let d = BenchmarkConfig::default();
            let b = BenchmarkConfig {
                repetitions: read_parsed(section, "repetitions", d.repetitions, "a positive integer")?,
                steps: read_parsed(section, "steps", d.steps, "a positive integer")?,
                samples_per_step: read_parsed(
                    section,
                    "samples_per_step",
                    d.samples_per_step,
                    "a positive integer",
                )?,
                theta_lr: read_parsed(section, "theta_lr", d.theta_lr, "a number")?,
                population: read_parsed(section, "population", d.population, "a positive integer")?,
                generations: read_parsed(section, "generations", d.generations, "a positive integer")?,
                mutation_rate: read_parsed(section, "mutation_rate", d.mutation_rate, "a number")?,
            };
            section.finish()?;
            b
        }
    };

    let mut search_jobs = Vec::new();
    for (name, section) in sections.iter_mut() {
        if name != "search" {
            continue;
        }
        let (omega_line, omega_text) = section.require("omega")?;
        let omega: u64 = parse_typed(omega_line, "omega", &omega_text, "an unsigned integer")?;
        let (metric_line, metric_text) = section.require("metric")?;
        let metric = CostMetric::parse(&metric_text)
            .ok_or_else(|| config_err(metric_line, "`metric` must be one of params | flops"))?;
        let job = SearchJob {
            omega,
            metric,
            steps: read_parsed(section, "steps", 150, "a positive integer")?,
            samples_per_step: read_parsed(section, "samples_per_step", 16, "a positive integer")?,
            theta_lr: read_parsed(section, "theta_lr", 0.15, "a number")?,
            penalty: read_enum(
                section,
                "penalty",
                PenaltyForm::AsWritten,
                PenaltyForm::parse,
                "as_written | violation_proportional",
            )?,
            alpha: read_parsed(section, "alpha", 2.0, "a positive number")?,
        };
        section.finish()?;
        search_jobs.push(job);
    }

    Ok(ExperimentConfig {
        space,
        backend,
        train,
        expansion,
        model,
        search_jobs,
        benchmark,
        output_dir: PathBuf::from(output_dir),
        seed,
    })
}

/// Reads and parses an experiment file from disk.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "\
# experiment demonstrating every section
[space]
preset = desk

[backend]
kind = tabular
landscape = deceptive
noise = 0.05

[train]
epochs = 12
steps_per_epoch = 20
lambda = 6
update_interval = 2
weight_lr = 2e-3
theta_lr = 0.2
utility = raw_loss
gate = exploit_only
expansion = progressive

[experiment]
output_dir = runs/demo
seed = 99

[benchmark]
repetitions = 5

[search]
omega = 12000
metric = params

[search]
omega = 300000
metric = flops
steps = 80
samples_per_step = 8
theta_lr = 0.3
penalty = violation_proportional
alpha = 1.5
";

    #[test]
    fn full_config_parses_every_field() {
        let cfg = parse_config(FULL).unwrap();
        assert_eq!(cfg.space, presets::desk());
        assert_eq!(
            cfg.backend,
            BackendConfig::Tabular { landscape: LandscapeKind::Deceptive, noise: 0.05 }
        );
        assert_eq!(cfg.train.epochs, 12);
        assert_eq!(cfg.train.steps_per_epoch, 20);
        assert_eq!(cfg.train.lambda, 6);
        assert_eq!(cfg.train.update_interval, 2);
        assert_eq!(cfg.train.weight_lr, 2e-3);
        assert_eq!(cfg.train.theta_lr, 0.2);
        assert_eq!(cfg.train.utility_mode, UtilityMode::RawLoss);
        assert_eq!(cfg.train.gate_mode, GateMode::ExploitOnly);
        assert_eq!(cfg.train.seed, 99);
        assert_eq!(cfg.expansion, ExpansionKind::Progressive);
        assert_eq!(cfg.model, ModelDims::new(16, 32, 4, 16, 2).unwrap());
        assert_eq!(cfg.benchmark.repetitions, 5);
        assert_eq!(cfg.benchmark.steps, BenchmarkConfig::default().steps);
        assert_eq!(cfg.output_dir, PathBuf::from("runs/demo"));
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.search_jobs.len(), 2);
        let j = &cfg.search_jobs[0];
        assert_eq!((j.omega, j.metric, j.steps), (12000, CostMetric::Params, 150));
        assert_eq!(j.penalty, PenaltyForm::AsWritten);
        let j = &cfg.search_jobs[1];
        assert_eq!((j.omega, j.metric, j.steps, j.samples_per_step), (300000, CostMetric::Flops, 80, 8));
        assert_eq!((j.theta_lr, j.penalty, j.alpha), (0.3, PenaltyForm::ViolationProportional, 1.5));
        assert!(cfg.schedule().is_ok());
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let text = "\
[space]
depths = 2,1
heads = 2,1
intermediates = 8,4

[backend]
kind = neural
task = t1

[train]
epochs = 3
steps_per_epoch = 5

[experiment]
output_dir = out
seed = 1
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.space, SearchSpace::new(vec![2, 1], vec![2, 1], vec![8, 4]).unwrap());
        assert_eq!(
            cfg.backend,
            BackendConfig::Neural { task: TaskKind::MajorityToken, batch_size: 32 }
        );
        assert_eq!(cfg.train.lambda, 2, "neural default estimator batch");
        assert_eq!(cfg.train.gate_mode, GateMode::ExploitExplore);
        assert_eq!(cfg.expansion, ExpansionKind::None);
        assert!(cfg.search_jobs.is_empty());
        assert_eq!(cfg.benchmark, BenchmarkConfig::default());
        // Tabular backends default lambda to 8.
        let tabular = text.replace("kind = neural\ntask = t1", "kind = tabular");
        assert_eq!(parse_config(&tabular).unwrap().train.lambda, 8);
    }

    fn expect_line(text: &str, line: usize, fragment: &str) {
        match parse_config(text) {
            Err(Error::Config { line: l, message }) => {
                assert_eq!(l, line, "wrong line for: {message}");
                assert!(
                    message.contains(fragment),
                    "message `{message}` does not mention `{fragment}`"
                );
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        // Unknown key, line 3.
        expect_line("[space]\npreset = desk\ntypo = 1\n", 3, "unknown key");
        // Duplicate key, line 3.
        expect_line("[space]\npreset = desk\npreset = bert\n", 3, "duplicate key");
        // Malformed entry, line 2.
        expect_line("[space]\npreset desk\n", 2, "key = value");
        // Entry before any section, line 1.
        expect_line("preset = desk\n", 1, "before any");
        // Unterminated header, line 1.
        expect_line("[space\n", 1, "unterminated");
        // Repeated non-search section, line 4.
        expect_line("[space]\npreset = desk\n\n[space]\n", 4, "appears twice");
        // Bad integer, line 7.
        let bad_seed = "[space]\npreset = desk\n[backend]\nkind = tabular\n[experiment]\noutput_dir = o\nseed = seven\n[train]\nepochs = 1\nsteps_per_epoch = 1\n";
        expect_line(bad_seed, 7, "unsigned integer");
        // Missing field lands on the section header.
        let missing =
            "[space]\npreset = desk\n[backend]\nkind = tabular\n[experiment]\nseed = 1\n[train]\nepochs = 1\nsteps_per_epoch = 1\n";
        expect_line(missing, 5, "missing field `output_dir`");
        // Unknown enum value.
        let bad_gate = "[space]\npreset = desk\n[backend]\nkind = tabular\n[experiment]\noutput_dir = o\nseed = 1\n[train]\nepochs = 1\nsteps_per_epoch = 1\ngate = sometimes\n";
        expect_line(bad_gate, 11, "ee | exploit_only | explore_only");
        // Invalid hyperparameter caught by TrainConfig validation.
        let bad_lr = "[space]\npreset = desk\n[backend]\nkind = tabular\n[experiment]\noutput_dir = o\nseed = 1\n[train]\nepochs = 1\nsteps_per_epoch = 1\nweight_lr = -1\n";
        expect_line(bad_lr, 8, "weight_lr");
    }

    #[test]
    fn space_requires_exactly_one_source() {
        let both = "[space]\npreset = desk\ndepths = 2\nheads = 2\nintermediates = 8\n";
        expect_line(both, 2, "mutually exclusive");
        let neither = "[space]\n";
        expect_line(neither, 1, "either `preset`");
        let partial = "[space]\ndepths = 2,1\n";
        expect_line(partial, 1, "either `preset`");
        let unknown = "[space]\npreset = galaxy\n";
        expect_line(unknown, 2, "unknown space preset");
    }

    #[test]
    fn missing_sections_are_named() {
        expect_line("", 1, "missing section [space]");
        expect_line("[space]\npreset = desk\n", 1, "missing section [backend]");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "\
; leading comment
[space]

# interior comment
preset = desk

[backend]
kind = tabular
[experiment]
output_dir = o
seed = 3
[train]
epochs = 2
steps_per_epoch = 2
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.epochs, 2);
    }
}
