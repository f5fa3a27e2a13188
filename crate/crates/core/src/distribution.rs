//! The exploit-explore probability distribution group: a product of
//! independent categorical distributions over architecture decision
//! variables (the exploitation distribution), stochastic natural-gradient
//! updates in the expectation parameterization, the uniform exploration
//! distribution, entropies, and the dynamic Bernoulli controller that
//! chooses between the two distributions each step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{ArchitectureSpec, SearchSpace, VarKind};

/// Probability floor per active option, restored by projection after every
/// update. Prevents any option from becoming permanently unsampleable.
pub const P_MIN: f64 = 1e-3;

/// Simplex tolerance: every probability vector must sum to 1 within this.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// The exploitation distribution θ: one probability vector per decision
/// variable, indexed identically to the one-hot encoding's group order.
/// Entries for inactive options are exactly 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalParams {
    probs: Vec<Vec<f64>>,
}

impl CategoricalParams {
    /// Uniform distribution over the active options of every variable.
    pub fn uniform_init(space: &SearchSpace) -> Self {
        let probs = (0..space.var_count())
            .map(|var| {
                let n = space.active_count(var);
                let mut v = vec![0.0; space.options(var).len()];
                for p in v.iter_mut().take(n) {
                    *p = 1.0 / n as f64;
                }
                v
            })
            .collect();
        CategoricalParams { probs }
    }

    /// Point mass on one architecture (probability 1 on each of its
    /// choices). Used for degenerate initializations and tests; the floor
    /// only applies to updated distributions.
    pub fn deterministic(space: &SearchSpace, arch: &ArchitectureSpec) -> Result<Self> {
        let mut probs = Vec::with_capacity(space.var_count());
        for var in 0..space.var_count() {
            let idx = space.option_index(var, arch.var_value(var, space))?;
            let mut v = vec![0.0; space.options(var).len()];
            v[idx] = 1.0;
            probs.push(v);
        }
        Ok(CategoricalParams { probs })
    }

    /// Constructs from raw vectors, validating shape and simplex invariants
    /// against `space`.
    pub fn from_probs(probs: Vec<Vec<f64>>, space: &SearchSpace) -> Result<Self> {
        let params = CategoricalParams { probs };
        params.validate(space)?;
        Ok(params)
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn var_count(&self) -> usize {
        self.probs.len()
    }

    /// Checks shapes, nonnegativity, the simplex sum, and that inactive
    /// entries are exactly zero.
    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        if self.probs.len() != space.var_count() {
            return Err(Error::InvalidParameter(format!(
                "expected {} probability vectors, got {}",
                space.var_count(),
                self.probs.len()
            )));
        }
        for (var, v) in self.probs.iter().enumerate() {
            let opts = space.options(var).len();
            let active = space.active_count(var);
            if v.len() != opts {
                return Err(Error::InvalidParameter(format!(
                    "variable {var}: expected {opts} entries, got {}",
                    v.len()
                )));
            }
            if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "variable {var}: probabilities must be finite and nonnegative"
                )));
            }
            if v[active..].iter().any(|&p| p != 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "variable {var}: inactive options carry nonzero probability"
                )));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidParameter(format!(
                    "variable {var}: probabilities sum to {sum}, not 1"
                )));
            }
        }
        Ok(())
    }

    /// Draws one architecture: each decision variable is sampled
    /// independently by inverse CDF, then the result is canonicalized
    /// (inactive-layer entries overwritten with the largest option). Exactly
    /// one uniform variate is consumed per variable regardless of the
    /// outcome, so RNG consumption is reproducible.
    pub fn sample<R: Rng>(&self, space: &SearchSpace, rng: &mut R) -> ArchitectureSpec {
        let mut values = Vec::with_capacity(self.probs.len());
        for (var, v) in self.probs.iter().enumerate() {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &p) in v.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                acc += p;
                if u < acc {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave acc slightly below 1; fall back to the last
            // option with nonzero probability.
            let idx = chosen.unwrap_or_else(|| {
                v.iter().rposition(|&p| p > 0.0).expect("simplex has support")
            });
            values.push(space.options(var)[idx]);
        }
        let depth = values[0];
        let heads = (0..space.max_depth()).map(|l| values[1 + 2 * l]).collect();
        let inters = (0..space.max_depth()).map(|l| values[2 + 2 * l]).collect();
        ArchitectureSpec::new(depth, heads, inters, space)
            .expect("sampled values are drawn from the option lists")
    }

    /// Sum of per-variable log probabilities of the stored choices, taken
    /// over **all** decision variables including the canonical entries of
    /// inactive layers. A zero-probability choice yields `-inf`.
    pub fn log_likelihood(&self, arch: &ArchitectureSpec, space: &SearchSpace) -> Result<f64> {
        let mut ll = 0.0;
        for var in 0..space.var_count() {
            let idx = space.option_index(var, arch.var_value(var, space))?;
            let p = self.probs[var][idx];
            if p == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            ll += p.ln();
        }
        Ok(ll)
    }

    /// Strict variant of [`log_likelihood`](Self::log_likelihood): a
    /// zero-probability choice is an error instead of `-inf`.
    pub fn log_likelihood_strict(
        &self,
        arch: &ArchitectureSpec,
        space: &SearchSpace,
    ) -> Result<f64> {
        for var in 0..space.var_count() {
            let idx = space.option_index(var, arch.var_value(var, space))?;
            if self.probs[var][idx] == 0.0 {
                return Err(Error::ZeroProbability { var });
            }
        }
        self.log_likelihood(arch, space)
    }

    /// Probability that [`sample`](Self::sample) returns exactly this
    /// (canonical) architecture: the product over the depth variable and the
    /// per-layer variables of layers **below** `depth`. Draws for inactive
    /// layers are overwritten by canonicalization, so they marginalize out.
    /// Summed over an enumeration of the space this is a proper
    /// distribution.
    pub fn arch_probability(&self, arch: &ArchitectureSpec, space: &SearchSpace) -> Result<f64> {
        let depth_idx = space.option_index(0, arch.depth())?;
        let mut p = self.probs[0][depth_idx];
        for l in 0..arch.depth() {
            for var in [1 + 2 * l, 2 + 2 * l] {
                let idx = space.option_index(var, arch.var_value(var, space))?;
                p *= self.probs[var][idx];
            }
        }
        Ok(p)
    }

    /// Shannon entropy in nats, summed over variables.
    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .flat_map(|v| v.iter())
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    /// Widens θ to the active counts of `space_after` (which must be at
    /// least those the params were built for). Each newly activated option
    /// enters with mass `1/(2 * n)` where `n` is the active count after its
    /// activation, taken proportionally from the existing options. Variables
    /// already at the target width are untouched bit-for-bit.
    pub fn widen_to(&self, space_after: &SearchSpace) -> Result<CategoricalParams> {
        let mut probs = self.probs.clone();
        for (var, v) in probs.iter_mut().enumerate() {
            let target = space_after.active_count(var);
            let current = v.iter().filter(|&&p| p > 0.0).count();
            if target < current {
                return Err(Error::InvalidParameter(format!(
                    "variable {var}: cannot shrink active support from {current} to {target}"
                )));
            }
            if target == current {
                continue;
            }
            for n in current + 1..=target {
                let p_new = 1.0 / (2.0 * n as f64);
                for p in v.iter_mut().take(n - 1) {
                    *p *= 1.0 - p_new;
                }
                v[n - 1] = p_new;
            }
            project_to_floored_simplex(v, target);
        }
        Ok(CategoricalParams { probs })
    }
}

/// Entropy of the uniform distribution over the active support:
/// `Σ_var ln(active option count)`, in nats.
pub fn max_entropy(space: &SearchSpace) -> f64 {
    (0..space.var_count()).map(|var| (space.active_count(var) as f64).ln()).sum()
}

/// Projects one probability vector onto the simplex with the `P_MIN` floor:
/// entries at or below the floor are pinned to it and the remaining mass is
/// distributed proportionally over the others, repeating if the rescale
/// pushes further entries under the floor.
fn project_to_floored_simplex(v: &mut [f64], active: usize) {
    debug_assert!(active >= 1 && active <= v.len());
    if active == 1 {
        v[0] = 1.0;
        return;
    }
    debug_assert!(
        (active as f64) * P_MIN < 1.0,
        "floor must leave surplus mass over the active support"
    );
    let mut floored = vec![false; active];
    loop {
        let mut changed = false;
        for (i, f) in floored.iter_mut().enumerate() {
            if !*f && v[i] <= P_MIN {
                *f = true;
                v[i] = P_MIN;
                changed = true;
            }
        }
        let n_floored = floored.iter().filter(|&&f| f).count();
        if n_floored == active {
            // Only reachable if every entry collapsed; spread uniformly.
            for p in v.iter_mut().take(active) {
                *p = 1.0 / active as f64;
            }
            return;
        }
        let free_mass = 1.0 - n_floored as f64 * P_MIN;
        let free_sum: f64 =
            (0..active).filter(|&i| !floored[i]).map(|i| v[i]).sum();
        let scale = free_mass / free_sum;
        for i in 0..active {
            if !floored[i] {
                v[i] *= scale;
            }
        }
        if !changed && (0..active).all(|i| floored[i] || v[i] >= P_MIN) {
            return;
        }
        if (0..active).all(|i| floored[i] || v[i] > P_MIN) {
            return;
        }
    }
}

/// The Monte-Carlo natural-gradient estimate of the expected-loss objective
/// in the expectation parameterization:
/// `(1/λ) Σ_j u_j · (onehot(m_j) − θ)`, evaluated per variable and zero on
/// inactive options. This is the raw update direction consumed by
/// [`natural_gradient_step`]; it is exposed so estimator quality can be
/// measured against [`exact_natural_gradient`].
pub fn natural_gradient_estimate(
    params: &CategoricalParams,
    batch: &[(ArchitectureSpec, f64)],
    space: &SearchSpace,
) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty sample batch".into()));
    }
    let lambda = batch.len() as f64;
    let mut grad: Vec<Vec<f64>> =
        params.probs().iter().map(|v| vec![0.0; v.len()]).collect();
    for (arch, utility) in batch {
        for (var, gvar) in grad.iter_mut().enumerate() {
            let idx = space.option_index(var, arch.var_value(var, space))?;
            if idx >= space.active_count(var) {
                return Err(Error::InvalidArchitecture(format!(
                    "sample selects inactive option {idx} of variable {var}"
                )));
            }
            let theta = &params.probs()[var];
            let active = space.active_count(var);
            for i in 0..active {
                let onehot = if i == idx { 1.0 } else { 0.0 };
                gvar[i] += utility * (onehot - theta[i]) / lambda;
            }
        }
    }
    Ok(grad)
}

/// One stochastic natural-gradient step under the minimization convention:
/// `θ ← θ − lr · (1/λ) Σ_j u_j (onehot(m_j) − θ)`, followed by projection
/// onto the floored simplex. Positive utility (high loss) pushes probability
/// away from the sampled options. A batch whose utilities are all zero
/// returns θ unchanged bit-for-bit.
pub fn natural_gradient_step(
    params: &CategoricalParams,
    batch: &[(ArchitectureSpec, f64)],
    lr: f64,
    space: &SearchSpace,
) -> Result<CategoricalParams> {
    let grad = natural_gradient_estimate(params, batch, space)?;
    if grad.iter().all(|v| v.iter().all(|&g| g == 0.0)) {
        return Ok(params.clone());
    }
    let mut probs = params.probs().to_vec();
    for (var, v) in probs.iter_mut().enumerate() {
        let active = space.active_count(var);
        for i in 0..active {
            v[i] -= lr * grad[var][i];
        }
        project_to_floored_simplex(v, active);
    }
    Ok(CategoricalParams { probs })
}

/// Exact natural gradient by enumeration:
/// `Σ_m P(m) · loss(m) · (onehot(m) − θ)` over every distinct architecture,
/// with `P(m)` the canonical-architecture probability. This is the exact
/// expectation of [`natural_gradient_estimate`] under raw-loss utilities.
pub fn exact_natural_gradient<F>(
    params: &CategoricalParams,
    loss_oracle: F,
    space: &SearchSpace,
    limit: u128,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&ArchitectureSpec) -> f64,
{
    let mut grad: Vec<Vec<f64>> =
        params.probs().iter().map(|v| vec![0.0; v.len()]).collect();
    for arch in space.enumerate(true, limit)? {
        let p = params.arch_probability(&arch, space)?;
        let loss = loss_oracle(&arch);
        for (var, gvar) in grad.iter_mut().enumerate() {
            let idx = space.option_index(var, arch.var_value(var, space))?;
            let theta = &params.probs()[var];
            let active = space.active_count(var);
            for i in 0..active {
                let onehot = if i == idx { 1.0 } else { 0.0 };
                gvar[i] += p * loss * (onehot - theta[i]);
            }
        }
    }
    Ok(grad)
}

/// Exact expected loss under θ: `Σ_m P(m) · loss(m)` over the enumeration,
/// with canonical-architecture probabilities.
pub fn exact_expected_loss<F>(
    params: &CategoricalParams,
    loss_oracle: F,
    space: &SearchSpace,
    limit: u128,
) -> Result<f64>
where
    F: Fn(&ArchitectureSpec) -> f64,
{
    let mut total = 0.0;
    for arch in space.enumerate(true, limit)? {
        total += params.arch_probability(&arch, space)? * loss_oracle(&arch);
    }
    Ok(total)
}

/// How per-sample utilities are derived from losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UtilityMode {
    /// Rank-based: +1 for the worse half of the batch, −1 for the better
    /// half, 0 for the middle sample of an odd batch; ties share the average
    /// utility of their positions. Invariant under any strictly increasing
    /// transform of the losses.
    Ranking,
    /// Losses passed through unchanged.
    RawLoss,
}

impl UtilityMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ranking" => Some(UtilityMode::Ranking),
            "raw_loss" => Some(UtilityMode::RawLoss),
            _ => None,
        }
    }
}

impl std::fmt::Display for UtilityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UtilityMode::Ranking => write!(f, "ranking"),
            UtilityMode::RawLoss => write!(f, "raw_loss"),
        }
    }
}

/// Transforms a batch of losses into utilities per [`UtilityMode`].
/// Ranking mode requires at least two samples.
pub fn utility_transform(losses: &[f64], mode: UtilityMode) -> Result<Vec<f64>> {
    match mode {
        UtilityMode::RawLoss => Ok(losses.to_vec()),
        UtilityMode::Ranking => {
            let n = losses.len();
            if n < 2 {
                return Err(Error::InvalidParameter(format!(
                    "ranking utilities need at least 2 samples, got {n}"
                )));
            }
            if losses.iter().any(|l| !l.is_finite()) {
                return Err(Error::InvalidParameter(
                    "ranking utilities need finite losses".into(),
                ));
            }
            // Position utilities: −1 for the best floor(n/2), +1 for the
            // worst floor(n/2), 0 for the middle of an odd batch.
            let half = n / 2;
            let pos_utility = |pos: usize| -> f64 {
                if pos < half {
                    -1.0
                } else if pos >= n - half {
                    1.0
                } else {
                    0.0
                }
            };
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                losses[a].partial_cmp(&losses[b]).expect("finite losses")
            });
            let mut utilities = vec![0.0; n];
            // Tie groups share the mean utility of the positions they span.
            let mut start = 0;
            while start < n {
                let mut end = start + 1;
                while end < n && losses[order[end]] == losses[order[start]] {
                    end += 1;
                }
                let mean: f64 =
                    (start..end).map(pos_utility).sum::<f64>() / (end - start) as f64;
                for &sample in &order[start..end] {
                    utilities[sample] = mean;
                }
                start = end;
            }
            Ok(utilities)
        }
    }
}

/// State of the dynamic exploit-explore controller: the exploitation
/// probability `K` is the entropy ratio of the current exploitation
/// distribution to the uniform one over the same active support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// Exploitation probability, in [0, 1].
    pub k: f64,
    /// Epoch interval at which `k` is refreshed.
    pub update_interval: usize,
    /// Entropy of the exploitation distribution (nats).
    pub rho: f64,
    /// Entropy of the uniform distribution over the active support (nats).
    pub rho_max: f64,
}

/// Recomputes the controller from the current θ entropy:
/// `K = ρ/ρ_max` (clamped to [0, 1]), or 1 when `ρ_max` is 0.
pub fn update_controller(
    params: &CategoricalParams,
    space: &SearchSpace,
    update_interval: usize,
) -> ControllerState {
    let rho = params.entropy();
    let rho_max = max_entropy(space);
    let k = if rho_max > 0.0 { (rho / rho_max).clamp(0.0, 1.0) } else { 1.0 };
    ControllerState { k, update_interval, rho, rho_max }
}

/// Which distribution a step samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateChoice {
    /// Sample from the exploitation distribution θ.
    Exploit,
    /// Sample from the uniform distribution over the active space.
    Explore,
}

/// One Bernoulli(K) draw: `Exploit` with probability `state.k`.
pub fn controller_gate<R: Rng>(state: &ControllerState, rng: &mut R) -> GateChoice {
    if rng.gen::<f64>() < state.k {
        GateChoice::Exploit
    } else {
        GateChoice::Explore
    }
}

/// Human-readable snapshot of θ: one CSV row per option, including inactive
/// options (probability 0), under a `variable,option,probability` header.
/// Variables are labeled `depth`, `layer{l}.heads`, `layer{l}.inter`.
pub fn theta_table(params: &CategoricalParams, space: &SearchSpace) -> String {
    let mut out = String::from("variable,option,probability\n");
    for (var, probs) in params.probs().iter().enumerate() {
        let label = match space.var_kind(var) {
            VarKind::Depth => "depth".to_string(),
            VarKind::Heads(l) => format!("layer{l}.heads"),
            VarKind::Intermediate(l) => format!("layer{l}.inter"),
        };
        for (i, p) in probs.iter().enumerate() {
            let option = space.options(var)[i];
            out.push_str(&format!("{label},{option},{p}\n"));
        }
    }
    out
}
