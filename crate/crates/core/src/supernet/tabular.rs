//! Synthetic loss landscapes with analytically known optima.
//!
//! These replace the neural backend wherever a test or benchmark needs a
//! ground truth that can be verified by enumeration: the *planted* landscape
//! has a single global optimum with loss decreasing monotonically in the
//! Hamming distance to it, while the *deceptive* landscape slopes toward a
//! decoy architecture and hides the true optimum as an isolated needle far
//! away from the decoy — per-variable greedy descent provably lands in the
//! decoy's basin. Optional per-architecture observation noise is a
//! deterministic function of (landscape seed, architecture), so repeated
//! queries of the same candidate return the same value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tasks::derive_seed;
use crate::distribution::CategoricalParams;
use crate::error::{Error, Result};
use crate::space::{ArchitectureSpec, SearchSpace};

/// Enumeration guard for deceptive-landscape construction.
const DECEPTIVE_ENUM_LIMIT: u128 = 1_000_000;

/// How many target draws to attempt before declaring the space too small to
/// hide a needle away from the decoy.
const TARGET_DRAW_CAP: usize = 10_000;

/// FNV-1a 64 over a string, used to give every architecture its own noise
/// stream independent of query order.
fn fnv1a(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in s.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandscapeKind {
    /// Loss = Hamming distance to a hidden target; unimodal and smooth.
    Planted,
    /// Loss slopes toward a decoy (the maximal architecture) everywhere
    /// except at a hidden target far from it, where it drops to zero.
    Deceptive,
}

impl LandscapeKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "planted" => Some(LandscapeKind::Planted),
            "deceptive" => Some(LandscapeKind::Deceptive),
            _ => None,
        }
    }
}

impl std::fmt::Display for LandscapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LandscapeKind::Planted => write!(f, "planted"),
            LandscapeKind::Deceptive => write!(f, "deceptive"),
        }
    }
}

/// A fully synthetic evaluation backend over a search space.
#[derive(Debug, Clone)]
pub struct TabularLandscape {
    space: SearchSpace,
    kind: LandscapeKind,
    target: ArchitectureSpec,
    decoy: Option<ArchitectureSpec>,
    /// Largest Hamming distance from any architecture to the decoy.
    decoy_norm: f64,
    /// Supremum of the noise-free loss, used to convert losses to accuracies.
    max_base_loss: f64,
    noise: f64,
    seed: u64,
}

impl TabularLandscape {
    /// Unimodal landscape: loss of `m` is the number of decision variables
    /// on which `m` disagrees with a hidden uniformly drawn target.
    pub fn planted(space: SearchSpace, seed: u64, noise: f64) -> Result<Self> {
        validate_noise(noise)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x504c_4e54]));
        let target = CategoricalParams::uniform_init(&space).sample(&space, &mut rng);
        let max_base_loss = space.var_count() as f64;
        Ok(TabularLandscape {
            space,
            kind: LandscapeKind::Planted,
            target,
            decoy: None,
            decoy_norm: 0.0,
            max_base_loss,
            noise,
            seed,
        })
    }

    /// Deceptive landscape. The decoy is the maximal architecture; the
    /// hidden target is drawn until it disagrees with the decoy on at least
    /// half the decision variables (so the basin slopes away from it), and
    /// every architecture except the target scores
    /// `1 + d_H(m, decoy) / max_m d_H(m, decoy)` — lowest at the decoy,
    /// rising toward the target's neighborhood, with the target itself at 0.
    pub fn deceptive(space: SearchSpace, seed: u64, noise: f64) -> Result<Self> {
        validate_noise(noise)?;
        let decoy = space.maximal_arch();
        let needed = space.var_count().div_ceil(2);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x4443_5954]));
        let uniform = CategoricalParams::uniform_init(&space);
        let mut target = None;
        for _ in 0..TARGET_DRAW_CAP {
            let cand = uniform.sample(&space, &mut rng);
            if cand.hamming(&decoy) >= needed {
                target = Some(cand);
                break;
            }
        }
        let target = target.ok_or_else(|| {
            Error::InvalidSpace(format!(
                "no architecture at Hamming distance ≥ {needed} from the maximal \
                 architecture; the space is too small for a deceptive landscape"
            ))
        })?;
        let mut decoy_norm = 0usize;
        for arch in space.enumerate(false, DECEPTIVE_ENUM_LIMIT)? {
            decoy_norm = decoy_norm.max(arch.hamming(&decoy));
        }
        Ok(TabularLandscape {
            space,
            kind: LandscapeKind::Deceptive,
            target,
            decoy: Some(decoy),
            decoy_norm: decoy_norm as f64,
            max_base_loss: 2.0,
            noise,
            seed,
        })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn kind(&self) -> LandscapeKind {
        self.kind
    }

    /// The architecture with noise-free loss zero.
    pub fn target(&self) -> &ArchitectureSpec {
        &self.target
    }

    /// The basin attractor of the deceptive landscape.
    pub fn decoy(&self) -> Option<&ArchitectureSpec> {
        self.decoy.as_ref()
    }

    pub fn max_base_loss(&self) -> f64 {
        self.max_base_loss
    }

    /// The seed the landscape was generated from; together with the kind and
    /// noise level it reconstructs the landscape exactly.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Half-width of the uniform observation noise.
    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Noise-free loss.
    pub fn base_loss(&self, arch: &ArchitectureSpec) -> f64 {
        match self.kind {
            LandscapeKind::Planted => arch.hamming(&self.target) as f64,
            LandscapeKind::Deceptive => {
                if *arch == self.target {
                    0.0
                } else {
                    let decoy = self.decoy.as_ref().expect("deceptive landscape has a decoy");
                    1.0 + arch.hamming(decoy) as f64 / self.decoy_norm
                }
            }
        }
    }

    /// Observed loss: base loss plus a per-architecture deterministic
    /// perturbation uniform on `[−noise, +noise]`.
    pub fn loss(&self, arch: &ArchitectureSpec) -> f64 {
        let base = self.base_loss(arch);
        if self.noise == 0.0 {
            return base;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            &[0x4e4f_4953, fnv1a(&arch.to_string())],
        ));
        base + self.noise * (rng.gen::<f64>() * 2.0 - 1.0)
    }

    /// Observed accuracy in `[0, 1]`: the observed loss rescaled against the
    /// landscape's loss ceiling, so the target scores 1 (noise permitting).
    pub fn accuracy(&self, arch: &ArchitectureSpec) -> f64 {
        (1.0 - self.loss(arch) / self.max_base_loss).clamp(0.0, 1.0)
    }
}

fn validate_noise(noise: f64) -> Result<()> {
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "noise amplitude must be finite and non-negative, got {noise}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::presets;

    #[test]
    fn planted_target_has_zero_loss_and_unit_accuracy() {
        let scape = TabularLandscape::planted(presets::desk(), 11, 0.0).unwrap();
        assert_eq!(scape.base_loss(scape.target()), 0.0);
        assert_eq!(scape.accuracy(scape.target()), 1.0);
    }

    #[test]
    fn planted_loss_is_hamming_distance() {
        let scape = TabularLandscape::planted(presets::desk(), 11, 0.0).unwrap();
        let target = scape.target().clone();
        // A single-variable change must cost exactly 1.
        let space = scape.space().clone();
        let mut heads = target.heads().to_vec();
        let l = 0;
        let current = heads[l];
        let swapped = *space
            .head_options()
            .iter()
            .find(|&&h| h != current)
            .expect("more than one head option");
        heads[l] = swapped;
        let neighbor = ArchitectureSpec::new(
            target.depth(),
            heads,
            target.intermediates().to_vec(),
            &space,
        )
        .unwrap();
        assert_eq!(scape.base_loss(&neighbor), 1.0);
        // And every architecture's loss equals its encoded disagreement.
        for arch in space.enumerate(false, 10_000).unwrap().take(500) {
            assert_eq!(scape.base_loss(&arch), arch.hamming(&target) as f64);
        }
    }

    #[test]
    fn planted_is_seed_deterministic() {
        let a = TabularLandscape::planted(presets::desk(), 7, 0.0).unwrap();
        let b = TabularLandscape::planted(presets::desk(), 7, 0.0).unwrap();
        assert_eq!(a.target(), b.target());
        let others: Vec<_> = (0..5)
            .map(|s| TabularLandscape::planted(presets::desk(), s, 0.0).unwrap())
            .map(|l| l.target().clone())
            .collect();
        assert!(
            others.iter().any(|t| t != a.target()),
            "five different seeds all planted the same target"
        );
    }

    #[test]
    fn deceptive_target_sits_far_from_decoy() {
        for seed in 0..10 {
            let scape = TabularLandscape::deceptive(presets::desk(), seed, 0.0).unwrap();
            let needed = scape.space().var_count().div_ceil(2);
            let decoy = scape.decoy().unwrap();
            assert!(scape.target().hamming(decoy) >= needed);
            assert_eq!(scape.base_loss(scape.target()), 0.0);
            assert_eq!(scape.base_loss(decoy), 1.0);
        }
    }

    #[test]
    fn deceptive_losses_lie_in_the_documented_band() {
        let scape = TabularLandscape::deceptive(presets::desk(), 3, 0.0).unwrap();
        let target = scape.target().clone();
        let mut saw_max = false;
        for arch in scape.space().enumerate(false, 10_000).unwrap() {
            let loss = scape.base_loss(&arch);
            if arch == target {
                assert_eq!(loss, 0.0);
            } else {
                assert!((1.0..=2.0).contains(&loss), "loss {loss} outside [1, 2]");
                saw_max |= loss == 2.0;
            }
            let acc = scape.accuracy(&arch);
            assert!((0.0..=1.0).contains(&acc));
        }
        assert!(saw_max, "normalization never reaches the loss ceiling");
    }

    #[test]
    fn greedy_per_variable_descent_lands_in_the_basin_not_the_needle() {
        for seed in [0, 1, 2, 3, 4] {
            let scape = TabularLandscape::deceptive(presets::desk(), seed, 0.0).unwrap();
            let space = scape.space().clone();
            let all: Vec<_> = space.enumerate(false, 10_000).unwrap().collect();
            // Choose each variable independently by its conditional mean
            // loss — the strategy a collapse-prone optimizer approximates.
            let mut choices = Vec::new();
            for var in 0..space.var_count() {
                let best = space
                    .options(var)
                    .iter()
                    .map(|&opt| {
                        let (sum, n) = all
                            .iter()
                            .filter(|a| a.var_value(var, &space) == opt)
                            .fold((0.0, 0usize), |(s, n), a| (s + scape.base_loss(a), n + 1));
                        (opt, sum / n as f64)
                    })
                    .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite means"))
                    .map(|(opt, _)| opt)
                    .expect("non-empty options");
                choices.push(best);
            }
            let depth = choices[0];
            let heads = (0..space.max_depth()).map(|l| choices[1 + 2 * l]).collect();
            let inters = (0..space.max_depth()).map(|l| choices[2 + 2 * l]).collect();
            let greedy = ArchitectureSpec::new(depth, heads, inters, &space).unwrap();
            assert!(
                scape.base_loss(&greedy) >= 1.0,
                "seed {seed}: greedy descent found the needle {greedy}"
            );
        }
    }

    #[test]
    fn noise_is_bounded_and_reproducible() {
        let noisy = TabularLandscape::deceptive(presets::desk(), 5, 0.05).unwrap();
        let clean = TabularLandscape::deceptive(presets::desk(), 5, 0.0).unwrap();
        assert_eq!(noisy.target(), clean.target());
        for arch in noisy.space().enumerate(false, 10_000).unwrap().take(200) {
            let l1 = noisy.loss(&arch);
            let l2 = noisy.loss(&arch);
            assert_eq!(l1, l2, "noise must be a pure function of the candidate");
            assert!((l1 - clean.loss(&arch)).abs() <= 0.05 + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_noise() {
        assert!(TabularLandscape::planted(presets::desk(), 0, -0.1).is_err());
        assert!(TabularLandscape::planted(presets::desk(), 0, f64::NAN).is_err());
    }
}
