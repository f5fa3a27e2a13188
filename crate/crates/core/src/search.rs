//! Stage II — constraint-sensitive search over a trained supernet.
//!
//! No fine-tuning happens here: every candidate is scored with weights
//! sliced directly out of the frozen supernet (or with a tabular
//! landscape's analytic accuracy), so one Stage-I run amortizes over any
//! number of constraint budgets. The primary searcher re-optimizes the
//! exploitation distribution against a constraint-sensitive reward; random
//! and evolutionary baselines share the exact evaluation path.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{cost_of, CostMetric, ModelDims};
use crate::distribution::{natural_gradient_step, utility_transform, CategoricalParams, UtilityMode};
use crate::error::{Error, Result};
use crate::space::{ArchitectureSpec, SearchSpace};
use crate::supernet::forward::batch_accuracy;
use crate::supernet::tabular::TabularLandscape;
use crate::supernet::tasks::Batch;
use crate::supernet::{extract_subnet, SupernetConfig, SupernetWeights};

/// Which branch the reward's penalty factor uses for over-budget candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyForm {
    /// `((t − Ω)/(T_M − Ω))^α` — the formula as published. Note that it
    /// *grows* with the violation, so a barely-infeasible candidate is
    /// punished harder than a maximal one; kept verbatim as the default.
    AsWritten,
    /// `((T_M − t)/(T_M − Ω))^α` — decreases with the violation instead.
    ViolationProportional,
}

impl PenaltyForm {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "as_written" => Some(PenaltyForm::AsWritten),
            "violation_proportional" => Some(PenaltyForm::ViolationProportional),
            _ => None,
        }
    }
}

impl std::fmt::Display for PenaltyForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PenaltyForm::AsWritten => write!(f, "as_written"),
            PenaltyForm::ViolationProportional => write!(f, "violation_proportional"),
        }
    }
}

/// The constraint-sensitive reward's fixed parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Budget, in `metric` units. Candidates strictly under it are feasible.
    pub omega: u64,
    /// Penalty exponent.
    pub alpha: f64,
    pub metric: CostMetric,
    /// Cost of the maximal (super-network) architecture.
    pub t_max: u64,
    pub penalty_form: PenaltyForm,
}

impl RewardConfig {
    pub fn new(
        omega: u64,
        alpha: f64,
        metric: CostMetric,
        t_max: u64,
        penalty_form: PenaltyForm,
    ) -> Result<Self> {
        if omega >= t_max {
            return Err(Error::InvalidParameter(format!(
                "budget Ω = {omega} must be below the supernet cost T_M = {t_max}"
            )));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "penalty exponent must be positive and finite, got {alpha}"
            )));
        }
        Ok(RewardConfig { omega, alpha, metric, t_max, penalty_form })
    }
}

/// Constraint-sensitive reward: accuracy untouched under the budget, scaled
/// by the configured penalty factor at or over it.
pub fn reward(acc: f64, t_m: u64, cfg: &RewardConfig) -> f64 {
    debug_assert!(t_m <= cfg.t_max, "candidate cost exceeds the supernet cost");
    if t_m < cfg.omega {
        return acc;
    }
    let span = (cfg.t_max - cfg.omega) as f64;
    let ratio = match cfg.penalty_form {
        PenaltyForm::AsWritten => (t_m - cfg.omega) as f64 / span,
        PenaltyForm::ViolationProportional => (cfg.t_max - t_m) as f64 / span,
    };
    acc * ratio.powf(cfg.alpha)
}

/// Errors out when no architecture in the space can satisfy the budget.
pub fn ensure_feasible(space: &SearchSpace, dims: &ModelDims, cfg: &RewardConfig) -> Result<()> {
    let min_cost = cost_of(&space.minimal_arch(), dims, cfg.metric);
    if min_cost >= cfg.omega {
        return Err(Error::InfeasibleConstraint { omega: cfg.omega, min_cost });
    }
    Ok(())
}

/// What the searchers score candidates against.
#[derive(Debug, Clone, Copy)]
pub enum SearchBackend<'a> {
    /// Frozen supernet weights evaluated on fixed validation batches.
    Neural {
        weights: &'a SupernetWeights,
        config: &'a SupernetConfig,
        val_batches: &'a [Batch],
    },
    /// Analytic landscape; accuracy is its loss rescaled into [0, 1].
    Tabular { landscape: &'a TabularLandscape, dims: &'a ModelDims },
}

impl SearchBackend<'_> {
    pub fn space(&self) -> &SearchSpace {
        match self {
            SearchBackend::Neural { config, .. } => config.space(),
            SearchBackend::Tabular { landscape, .. } => landscape.space(),
        }
    }

    pub fn dims(&self) -> ModelDims {
        match self {
            SearchBackend::Neural { config, .. } => config.dims(),
            SearchBackend::Tabular { dims, .. } => **dims,
        }
    }

    pub fn accuracy(&self, arch: &ArchitectureSpec) -> Result<f64> {
        match self {
            SearchBackend::Neural { weights, config, val_batches } => {
                evaluate_arch(weights, config, arch, val_batches)
            }
            SearchBackend::Tabular { landscape, .. } => Ok(landscape.accuracy(arch)),
        }
    }
}

/// Mean argmax accuracy of one architecture over validation batches, using
/// weights sliced from the frozen supernet. Purely forward — no gradients,
/// no weight mutation.
pub fn evaluate_arch(
    weights: &SupernetWeights,
    config: &SupernetConfig,
    arch: &ArchitectureSpec,
    val_batches: &[Batch],
) -> Result<f64> {
    if val_batches.is_empty() {
        return Err(Error::InvalidParameter(
            "evaluation needs at least one validation batch".into(),
        ));
    }
    let sub = extract_subnet(weights, arch, config)?;
    let mut total = 0.0;
    for batch in val_batches {
        total += batch_accuracy(&sub, batch)?;
    }
    Ok(total / val_batches.len() as f64)
}

/// One scored candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub arch: ArchitectureSpec,
    pub accuracy: f64,
    pub cost: u64,
    pub reward: f64,
    pub feasible: bool,
}

fn score(backend: &SearchBackend<'_>, arch: ArchitectureSpec, cfg: &RewardConfig) -> Result<Candidate> {
    let accuracy = backend.accuracy(&arch)?;
    let cost = cost_of(&arch, &backend.dims(), cfg.metric);
    let reward = reward(accuracy, cost, cfg);
    Ok(Candidate { arch, accuracy, cost, reward, feasible: cost < cfg.omega })
}

/// Rolling set of the ten best distinct architectures seen so far.
#[derive(Debug, Clone, Default)]
struct TopTen {
    entries: Vec<(ArchitectureSpec, f64)>,
}

impl TopTen {
    fn insert(&mut self, arch: &ArchitectureSpec, reward: f64) {
        if let Some(e) = self.entries.iter_mut().find(|(a, _)| a == arch) {
            e.1 = e.1.max(reward);
        } else {
            self.entries.push((arch.clone(), reward));
        }
        self.entries
            .sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite rewards"));
        self.entries.truncate(10);
    }

    fn snapshot(&self) -> Vec<(ArchitectureSpec, f64)> {
        self.entries.clone()
    }
}

/// Outcome of one search run. `best` is the highest-accuracy feasible
/// candidate when any feasible candidate was sampled, otherwise the
/// highest-reward candidate overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Candidate,
    /// Highest reward observed in each step's sample batch.
    pub reward_trace: Vec<f64>,
    /// Per step: the ten best (architecture, reward) pairs seen so far.
    pub top_log: Vec<Vec<(ArchitectureSpec, f64)>>,
    /// Final exploitation distribution (distribution search only).
    pub final_params: Option<CategoricalParams>,
    pub evaluations: usize,
}

/// Tracks the best-so-far under the feasibility-first rule.
#[derive(Debug, Clone, Default)]
struct BestTracker {
    best: Option<Candidate>,
}

impl BestTracker {
    fn offer(&mut self, cand: &Candidate) {
        let better = match &self.best {
            None => true,
            Some(cur) => match (cand.feasible, cur.feasible) {
                (true, false) => true,
                (false, true) => false,
                _ => cand.reward > cur.reward,
            },
        };
        if better {
            self.best = Some(cand.clone());
        }
    }

    fn take(self) -> Result<Candidate> {
        self.best.ok_or_else(|| {
            Error::InvalidParameter("search evaluated no candidates".into())
        })
    }
}

/// Knobs of the distribution searcher.
#[derive(Debug, Clone)]
pub struct DistributionSearchConfig {
    pub steps: usize,
    pub samples_per_step: usize,
    pub theta_lr: f64,
    pub utility_mode: UtilityMode,
    /// Starting distribution; `None` means uniform over the full space.
    pub theta_init: Option<CategoricalParams>,
}

impl DistributionSearchConfig {
    /// Ranking utilities and a uniform start; override fields to deviate.
    pub fn new(steps: usize, samples_per_step: usize, theta_lr: f64) -> Self {
        DistributionSearchConfig {
            steps,
            samples_per_step,
            theta_lr,
            utility_mode: UtilityMode::Ranking,
            theta_init: None,
        }
    }
}

/// Stage-II primary searcher: re-optimizes the exploitation distribution
/// against the constraint-sensitive reward with frozen weights.
///
/// `theta_init` defaults to the uniform distribution over the full space —
/// the Stage-I distribution optimized unconstrained loss and may exclude
/// every feasible region — but a trained θ can be passed to warm-start.
/// There is no exploration gate here; the probability floor retained by the
/// projection provides residual exploration.
pub fn distribution_search<R: Rng>(
    backend: &SearchBackend<'_>,
    cfg: &RewardConfig,
    search: DistributionSearchConfig,
    rng: &mut R,
) -> Result<SearchResult> {
    let DistributionSearchConfig { steps, samples_per_step, theta_lr, utility_mode, theta_init } =
        search;
    if steps == 0 || samples_per_step == 0 {
        return Err(Error::InvalidParameter(
            "distribution search needs at least one step and one sample per step".into(),
        ));
    }
    let space = backend.space();
    let mut params = match theta_init {
        Some(p) => {
            p.validate(space)?;
            p
        }
        None => CategoricalParams::uniform_init(space),
    };
    let mut tracker = BestTracker::default();
    let mut top = TopTen::default();
    let mut reward_trace = Vec::with_capacity(steps);
    let mut top_log = Vec::with_capacity(steps);
    let mut evaluations = 0;
    for _ in 0..steps {
        let mut scored = Vec::with_capacity(samples_per_step);
        for _ in 0..samples_per_step {
            let arch = params.sample(space, rng);
            let cand = score(backend, arch, cfg)?;
            tracker.offer(&cand);
            top.insert(&cand.arch, cand.reward);
            evaluations += 1;
            scored.push(cand);
        }
        let step_best = scored
            .iter()
            .map(|c| c.reward)
            .fold(f64::NEG_INFINITY, f64::max);
        reward_trace.push(step_best);
        top_log.push(top.snapshot());
        // Reward maximization through the minimizing update: feed the
        // negated rewards as losses.
        let utilities = if utility_mode == UtilityMode::Ranking && samples_per_step < 2 {
            vec![0.0; scored.len()]
        } else {
            let losses: Vec<f64> = scored.iter().map(|c| -c.reward).collect();
            utility_transform(&losses, utility_mode)?
        };
        if theta_lr > 0.0 {
            let batch: Vec<(ArchitectureSpec, f64)> = scored
                .into_iter()
                .map(|c| c.arch)
                .zip(utilities)
                .collect();
            params = natural_gradient_step(&params, &batch, theta_lr, space)?;
        }
    }
    Ok(SearchResult {
        best: tracker.take()?,
        reward_trace,
        top_log,
        final_params: Some(params),
        evaluations,
    })
}

/// Uniform sampling baseline with deduplication. A budget at or above the
/// space's cardinality degenerates to exhaustive enumeration.
pub fn random_search<R: Rng>(
    backend: &SearchBackend<'_>,
    cfg: &RewardConfig,
    budget: usize,
    rng: &mut R,
) -> Result<SearchResult> {
    if budget == 0 {
        return Err(Error::InvalidParameter(
            "random search needs a positive evaluation budget".into(),
        ));
    }
    let space = backend.space();
    let cardinality = space.cardinality(true)?;
    let mut tracker = BestTracker::default();
    let mut top = TopTen::default();
    let mut reward_trace = Vec::new();
    let mut top_log = Vec::new();
    let mut evaluations = 0;
    let mut consume = |arch: ArchitectureSpec,
                       tracker: &mut BestTracker,
                       top: &mut TopTen,
                       evaluations: &mut usize|
     -> Result<()> {
        let cand = score(backend, arch, cfg)?;
        tracker.offer(&cand);
        top.insert(&cand.arch, cand.reward);
        reward_trace.push(cand.reward);
        top_log.push(top.snapshot());
        *evaluations += 1;
        Ok(())
    };
    if budget as u128 >= cardinality {
        for arch in space.enumerate(true, cardinality)? {
            consume(arch, &mut tracker, &mut top, &mut evaluations)?;
        }
    } else {
        let uniform = CategoricalParams::uniform_init(space);
        let mut seen = HashSet::with_capacity(budget);
        while evaluations < budget {
            let arch = uniform.sample(space, rng);
            if !seen.insert(arch.clone()) {
                continue;
            }
            consume(arch, &mut tracker, &mut top, &mut evaluations)?;
        }
    }
    Ok(SearchResult {
        best: tracker.take()?,
        reward_trace,
        top_log,
        final_params: None,
        evaluations,
    })
}

/// Evolutionary baseline: tournament-of-two selection on reward, uniform
/// per-variable crossover, per-variable mutation to a uniformly random
/// active option, elitism of one.
pub fn evolutionary_search<R: Rng>(
    backend: &SearchBackend<'_>,
    cfg: &RewardConfig,
    population: usize,
    generations: usize,
    mutation_rate: f64,
    rng: &mut R,
) -> Result<SearchResult> {
    if population == 0 {
        return Err(Error::InvalidParameter("population must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&mutation_rate) {
        return Err(Error::InvalidParameter(format!(
            "mutation rate must lie in [0, 1], got {mutation_rate}"
        )));
    }
    let space = backend.space();
    let uniform = CategoricalParams::uniform_init(space);
    let mut tracker = BestTracker::default();
    let mut top = TopTen::default();
    let mut reward_trace = Vec::with_capacity(generations + 1);
    let mut top_log = Vec::with_capacity(generations + 1);
    let mut evaluations = 0;
    let mut record_generation =
        |pop: &[Candidate], tracker: &mut BestTracker, top: &mut TopTen, evals: &mut usize| {
            for cand in pop {
                tracker.offer(cand);
                top.insert(&cand.arch, cand.reward);
                *evals += 1;
            }
            let gen_best = pop.iter().map(|c| c.reward).fold(f64::NEG_INFINITY, f64::max);
            reward_trace.push(gen_best);
            top_log.push(top.snapshot());
        };
    let mut pop: Vec<Candidate> = (0..population)
        .map(|_| score(backend, uniform.sample(space, rng), cfg))
        .collect::<Result<_>>()?;
    record_generation(&pop, &mut tracker, &mut top, &mut evaluations);
    for _ in 0..generations {
        let elite = pop
            .iter()
            .max_by(|a, b| a.reward.partial_cmp(&b.reward).expect("finite rewards"))
            .expect("non-empty population")
            .clone();
        let mut next = Vec::with_capacity(population);
        while next.len() + 1 < population {
            let a = tournament(&pop, rng);
            let b = tournament(&pop, rng);
            let child = crossover_mutate(&a.arch, &b.arch, space, mutation_rate, rng)?;
            next.push(score(backend, child, cfg)?);
        }
        next.push(elite);
        pop = next;
        record_generation(&pop, &mut tracker, &mut top, &mut evaluations);
    }
    Ok(SearchResult {
        best: tracker.take()?,
        reward_trace,
        top_log,
        final_params: None,
        evaluations,
    })
}

fn tournament<'a, R: Rng>(pop: &'a [Candidate], rng: &mut R) -> &'a Candidate {
    let a = &pop[rng.gen_range(0..pop.len())];
    let b = &pop[rng.gen_range(0..pop.len())];
    if a.reward >= b.reward { a } else { b }
}

/// Uniform crossover on the decision variables followed by per-variable
/// mutation; the child is canonicalized by construction.
fn crossover_mutate<R: Rng>(
    a: &ArchitectureSpec,
    b: &ArchitectureSpec,
    space: &SearchSpace,
    mutation_rate: f64,
    rng: &mut R,
) -> Result<ArchitectureSpec> {
    let mut values = Vec::with_capacity(space.var_count());
    for var in 0..space.var_count() {
        let from_a = rng.gen::<f64>() < 0.5;
        let mut value = if from_a { a.var_value(var, space) } else { b.var_value(var, space) };
        if rng.gen::<f64>() < mutation_rate {
            let active = &space.options(var)[..space.active_count(var)];
            value = active[rng.gen_range(0..active.len())];
        }
        values.push(value);
    }
    let depth = values[0];
    let heads = (0..space.max_depth()).map(|l| values[1 + 2 * l]).collect();
    let inters = (0..space.max_depth()).map(|l| values[2 + 2 * l]).collect();
    ArchitectureSpec::new(depth, heads, inters, space)
}
