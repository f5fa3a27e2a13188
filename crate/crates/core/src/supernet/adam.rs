//! Adam with slice masking for weight-shared training.
//!
//! Only one region of the shared tensors is touched per step: the union of
//! the sampled architectures' active slices. Weights, first moments, and
//! second moments outside that region stay bit-identical, so training a
//! narrow architecture never perturbs capacity it does not use. Bias
//! correction uses the global step count, shared by all slices.

use serde::{Deserialize, Serialize};

use super::{ActiveMask, SupernetConfig, SupernetWeights};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates plus the global step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: SupernetWeights,
    pub v: SupernetWeights,
    pub step: u64,
}

/// Step-decayed learning rate: linear from `base` down to zero after
/// `total_steps` updates. `completed` counts already-applied steps, so the
/// first update runs at the full base rate.
pub fn linear_decay(base: f64, completed: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return base;
    }
    let remaining = total_steps.saturating_sub(completed) as f64;
    base * remaining / total_steps as f64
}

/// Per-step scalars of one Adam application: the learning rate plus the two
/// bias-correction denominators for the current global step.
#[derive(Clone, Copy)]
struct StepScalars {
    lr: f64,
    bc1: f64,
    bc2: f64,
}

/// Applies one Adam update to the masked entries of a single flat tensor.
fn update_slice(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    indices: impl Iterator<Item = usize>,
    s: StepScalars,
) {
    for i in indices {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
        let m_hat = m[i] / s.bc1;
        let v_hat = v[i] / s.bc2;
        w[i] -= s.lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

/// Flat indices of the leading `active_cols` columns of a row-major matrix.
fn col_block(rows: usize, cols: usize, active_cols: usize) -> impl Iterator<Item = usize> {
    (0..rows).flat_map(move |r| (r * cols)..(r * cols + active_cols))
}

impl AdamState {
    pub fn new(config: &SupernetConfig) -> Self {
        AdamState {
            m: SupernetWeights::zeros(config),
            v: SupernetWeights::zeros(config),
            step: 0,
        }
    }

    /// One masked update. `grads` must be full-shape (zeros outside the
    /// evaluated slices, as produced by the backward pass); entries outside
    /// `mask` are not read and not written.
    pub fn step(
        &mut self,
        weights: &mut SupernetWeights,
        grads: &SupernetWeights,
        mask: &ActiveMask,
        lr: f64,
    ) {
        self.step += 1;
        let s = StepScalars {
            lr,
            bc1: 1.0 - BETA1.powi(self.step as i32),
            bc2: 1.0 - BETA2.powi(self.step as i32),
        };
        let full = |w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            let len = w.len();
            update_slice(w, g, m, v, 0..len, s);
        };
        full(
            weights.embedding.data_mut(),
            grads.embedding.data(),
            self.m.embedding.data_mut(),
            self.v.embedding.data_mut(),
        );
        for l in 0..mask.depth {
            let aw = mask.attn_width[l];
            let fw = mask.ffn_width[l];
            let wl = &mut weights.layers[l];
            let gl = &grads.layers[l];
            let ml = &mut self.m.layers[l];
            let vl = &mut self.v.layers[l];
            let e = wl.wq.cols();
            let k_max = wl.w1.cols();
            // Q/K/V projections: all rows, leading `aw` columns; their
            // biases likewise.
            for (wm, gm, mm, vm) in [
                (&mut wl.wq, &gl.wq, &mut ml.wq, &mut vl.wq),
                (&mut wl.wk, &gl.wk, &mut ml.wk, &mut vl.wk),
                (&mut wl.wv, &gl.wv, &mut ml.wv, &mut vl.wv),
            ] {
                update_slice(
                    wm.data_mut(),
                    gm.data(),
                    mm.data_mut(),
                    vm.data_mut(),
                    col_block(e, e, aw),
                    s,
                );
            }
            for (wb, gb, mb, vb) in [
                (&mut wl.bq, &gl.bq, &mut ml.bq, &mut vl.bq),
                (&mut wl.bk, &gl.bk, &mut ml.bk, &mut vl.bk),
                (&mut wl.bv, &gl.bv, &mut ml.bv, &mut vl.bv),
            ] {
                update_slice(wb, gb, mb, vb, 0..aw, s);
            }
            // Output projection: leading `aw` rows (contiguous), full bias.
            update_slice(
                wl.wo.data_mut(),
                gl.wo.data(),
                ml.wo.data_mut(),
                vl.wo.data_mut(),
                0..aw * e,
                s,
            );
            full(&mut wl.bo, &gl.bo, &mut ml.bo, &mut vl.bo);
            // FFN: leading `fw` columns of w1 / rows of w2.
            update_slice(
                wl.w1.data_mut(),
                gl.w1.data(),
                ml.w1.data_mut(),
                vl.w1.data_mut(),
                col_block(e, k_max, fw),
                s,
            );
            update_slice(&mut wl.b1, &gl.b1, &mut ml.b1, &mut vl.b1, 0..fw, s);
            update_slice(
                wl.w2.data_mut(),
                gl.w2.data(),
                ml.w2.data_mut(),
                vl.w2.data_mut(),
                0..fw * e,
                s,
            );
            full(&mut wl.b2, &gl.b2, &mut ml.b2, &mut vl.b2);
            full(&mut wl.ln1_g, &gl.ln1_g, &mut ml.ln1_g, &mut vl.ln1_g);
            full(&mut wl.ln1_b, &gl.ln1_b, &mut ml.ln1_b, &mut vl.ln1_b);
            full(&mut wl.ln2_g, &gl.ln2_g, &mut ml.ln2_g, &mut vl.ln2_g);
            full(&mut wl.ln2_b, &gl.ln2_b, &mut ml.ln2_b, &mut vl.ln2_b);
        }
        full(
            weights.classifier_w.data_mut(),
            grads.classifier_w.data(),
            self.m.classifier_w.data_mut(),
            self.v.classifier_w.data_mut(),
        );
        full(
            &mut weights.classifier_b,
            &grads.classifier_b,
            &mut self.m.classifier_b,
            &mut self.v.classifier_b,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::presets;
    use crate::supernet::init_weights;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SupernetConfig {
        SupernetConfig::new(presets::desk(), 16, 32, 16, 2).unwrap()
    }

    fn ones_like(config: &SupernetConfig) -> SupernetWeights {
        let mut g = SupernetWeights::zeros(config);
        for name in g.tensor_names() {
            g.tensor_mut(&name).unwrap().fill(1.0);
        }
        g
    }

    #[test]
    fn zero_gradient_with_fresh_moments_is_identity() {
        let config = cfg();
        let w0 = init_weights(&config, &mut ChaCha8Rng::seed_from_u64(3));
        let mut w = w0.clone();
        let mut opt = AdamState::new(&config);
        let zeros = SupernetWeights::zeros(&config);
        opt.step(&mut w, &zeros, &ActiveMask::full(&config), 0.01);
        assert_eq!(w, w0);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_learning_rate_is_identity_but_moves_moments() {
        let config = cfg();
        let w0 = init_weights(&config, &mut ChaCha8Rng::seed_from_u64(3));
        let mut w = w0.clone();
        let mut opt = AdamState::new(&config);
        opt.step(&mut w, &ones_like(&config), &ActiveMask::full(&config), 0.0);
        assert_eq!(w, w0);
        assert!(opt.m.embedding.data().iter().all(|&m| m != 0.0));
    }

    #[test]
    fn first_step_moves_against_gradient_by_about_lr() {
        let config = cfg();
        let w0 = init_weights(&config, &mut ChaCha8Rng::seed_from_u64(3));
        let mut w = w0.clone();
        let mut opt = AdamState::new(&config);
        // Gradient of +1 everywhere: after bias correction the first Adam
        // step is −lr·g/(|g| + ε) ≈ −lr.
        opt.step(&mut w, &ones_like(&config), &ActiveMask::full(&config), 0.01);
        for (a, b) in w.embedding.data().iter().zip(w0.embedding.data()) {
            let delta = a - b;
            assert!((delta + 0.01).abs() < 1e-6, "unexpected step {delta}");
        }
    }

    #[test]
    fn updates_stay_inside_the_mask() {
        let config = cfg();
        let w0 = init_weights(&config, &mut ChaCha8Rng::seed_from_u64(3));
        let mut w = w0.clone();
        let mut opt = AdamState::new(&config);
        let arch = config.space().minimal_arch();
        let mask = ActiveMask::from_arch(&arch, &config);
        // Gradient deliberately violates the contract (nonzero everywhere);
        // masking must ignore everything outside the active slices.
        opt.step(&mut w, &ones_like(&config), &mask, 0.01);
        // Layers beyond the minimal depth: untouched weights and moments.
        for l in mask.depth..config.max_depth() {
            assert_eq!(w.layers[l], w0.layers[l]);
            assert_eq!(opt.m.layers[l], SupernetWeights::zeros(&config).layers[l]);
        }
        // Inside layer 0, columns beyond the single head's width survive.
        let aw = mask.attn_width[0];
        let e = config.embed_dim;
        for r in 0..e {
            for c in aw..e {
                assert_eq!(w.layers[0].wq.get(r, c), w0.layers[0].wq.get(r, c));
                assert_eq!(opt.m.layers[0].wq.get(r, c), 0.0);
            }
            for c in 0..aw {
                assert_ne!(w.layers[0].wq.get(r, c), w0.layers[0].wq.get(r, c));
            }
        }
        let fw = mask.ffn_width[0];
        for r in fw..config.k_max {
            assert_eq!(w.layers[0].w2.row(r), w0.layers[0].w2.row(r));
        }
        // Shared tensors always move.
        assert_ne!(w.embedding, w0.embedding);
        assert_ne!(w.classifier_w, w0.classifier_w);
    }

    #[test]
    fn linear_decay_endpoints() {
        assert_eq!(linear_decay(0.5, 0, 100), 0.5);
        assert!((linear_decay(0.5, 50, 100) - 0.25).abs() < 1e-15);
        assert_eq!(linear_decay(0.5, 100, 100), 0.0);
        assert_eq!(linear_decay(0.5, 150, 100), 0.0);
        assert_eq!(linear_decay(0.5, 7, 0), 0.5);
    }
}
