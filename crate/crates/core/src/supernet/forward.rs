//! Forward evaluation of sub-networks.
//!
//! The production path evaluates the compact sliced weights from
//! [`extract_subnet`](super::extract_subnet). An independent masked path
//! evaluates the full-width supernet tensors with inactive channels zeroed
//! at the points where slicing removes them; the two must agree to 1e-6,
//! which is asserted by the equivalence tests.
//!
//! Stack per layer (post-norm): multi-head self-attention over `h_l` heads
//! of fixed width `head_dim` with `1/sqrt(head_dim)` scaling → residual →
//! layer norm → FFN (`k_l` hidden units, GELU) → residual → layer norm.
//! Sequences carry no positional signal — both built-in tasks are
//! order-invariant — and are mean-pooled before the linear classifier and
//! cross-entropy loss.

use serde::{Deserialize, Serialize};

use super::linalg::{gelu, softmax_rows, Matrix};
use super::tasks::Batch;
use super::{SubnetWeights, SupernetConfig, SupernetWeights};
use crate::error::{Error, Result};
use crate::space::ArchitectureSpec;

/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-5;

/// Per-row layer-norm statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LnCache {
    /// Normalized input x̂ (before gain/shift), one row per position.
    pub xhat: Matrix,
    /// 1/sqrt(var + eps) per row.
    pub inv_std: Vec<f64>,
}

/// Applies layer norm row-wise: `y = g ⊙ (x − μ)/σ + b`.
pub fn layer_norm(x: &Matrix, gain: &[f64], shift: &[f64]) -> (Matrix, LnCache) {
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = Matrix::zeros(rows, cols);
    let mut xhat = Matrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(istd);
        for c in 0..cols {
            let xh = (row[c] - mean) * istd;
            xhat.set(r, c, xh);
            out.set(r, c, gain[c] * xh + shift[c]);
        }
    }
    (out, LnCache { xhat, inv_std })
}

/// Everything the backward pass needs from one layer's forward evaluation.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub x_in: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Softmax attention weights, one `[S × S]` matrix per (example, head).
    pub attn: Vec<Matrix>,
    pub ctx: Matrix,
    pub ln1: LnCache,
    pub x1: Matrix,
    /// FFN pre-activation.
    pub h_pre: Matrix,
    pub h: Matrix,
    pub ln2: LnCache,
    pub x2: Matrix,
}

/// Full forward trace of one batch through one sub-network.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x0: Matrix,
    pub layers: Vec<LayerCache>,
    pub pooled: Matrix,
    pub logits: Matrix,
    /// Softmax of the logits, used by the loss gradient.
    pub probs: Matrix,
}

/// Loss and raw outputs of a forward evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    pub loss: f64,
    /// `[batch_size × num_classes]` pre-softmax scores.
    pub logits: Vec<Vec<f64>>,
}

fn check_batch(batch: &Batch, vocab_size: usize, seq_len: usize, num_classes: usize) -> Result<()> {
    if batch.seq_len != seq_len {
        return Err(Error::InvalidParameter(format!(
            "batch sequence length {} does not match the model's {}",
            batch.seq_len, seq_len
        )));
    }
    if batch.tokens.len() != batch.batch_size * batch.seq_len
        || batch.labels.len() != batch.batch_size
    {
        return Err(Error::InvalidParameter("batch shape is inconsistent".into()));
    }
    if let Some(&t) = batch.tokens.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::InvalidParameter(format!(
            "token id {t} out of vocabulary (size {vocab_size})"
        )));
    }
    if let Some(&l) = batch.labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::InvalidParameter(format!(
            "label {l} out of range ({num_classes} classes)"
        )));
    }
    Ok(())
}

/// Multi-head attention context for compact `[BS × A]` projections: per
/// (example, head), scaled dot-product scores, row softmax, weighted sum.
fn attention_context(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    batch_size: usize,
    seq_len: usize,
    heads: usize,
    head_dim: usize,
) -> (Matrix, Vec<Matrix>) {
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut ctx = Matrix::zeros(batch_size * seq_len, heads * head_dim);
    let mut attn_all = Vec::with_capacity(batch_size * heads);
    for b in 0..batch_size {
        let row0 = b * seq_len;
        for h in 0..heads {
            let c0 = h * head_dim;
            let mut scores = Matrix::zeros(seq_len, seq_len);
            for s1 in 0..seq_len {
                for s2 in 0..seq_len {
                    let mut acc = 0.0;
                    for d in 0..head_dim {
                        acc += q.get(row0 + s1, c0 + d) * k.get(row0 + s2, c0 + d);
                    }
                    scores.set(s1, s2, acc * scale);
                }
            }
            softmax_rows(&mut scores);
            for s1 in 0..seq_len {
                for d in 0..head_dim {
                    let mut acc = 0.0;
                    for s2 in 0..seq_len {
                        acc += scores.get(s1, s2) * v.get(row0 + s2, c0 + d);
                    }
                    ctx.set(row0 + s1, c0 + d, acc);
                }
            }
            attn_all.push(scores);
        }
    }
    (ctx, attn_all)
}

/// Mean cross-entropy of `logits` against `labels`, with the softmax
/// probabilities returned for the backward pass.
fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let mut probs = logits.clone();
    softmax_rows(&mut probs);
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        loss -= probs.get(b, label).ln();
    }
    (loss / labels.len() as f64, probs)
}

/// Forward pass of a sliced sub-network, returning the full activation
/// trace. `vocab_size` bounds are checked against the embedding table.
pub fn forward_cached(sub: &SubnetWeights, batch: &Batch) -> Result<ForwardCache> {
    check_batch(batch, sub.embedding.rows(), sub.seq_len, sub.num_classes)?;
    let bs = batch.batch_size * batch.seq_len;
    let e = sub.embedding.cols();
    let mut x = Matrix::zeros(bs, e);
    for (i, &tok) in batch.tokens.iter().enumerate() {
        x.row_mut(i).copy_from_slice(sub.embedding.row(tok as usize));
    }
    let x0 = x.clone();
    let mut layers = Vec::with_capacity(sub.layers.len());
    for lw in &sub.layers {
        let x_in = x.clone();
        let mut q = x_in.matmul(&lw.wq);
        q.add_row_bias(&lw.bq);
        let mut k = x_in.matmul(&lw.wk);
        k.add_row_bias(&lw.bk);
        let mut v = x_in.matmul(&lw.wv);
        v.add_row_bias(&lw.bv);
        let (ctx, attn) = attention_context(
            &q,
            &k,
            &v,
            batch.batch_size,
            batch.seq_len,
            lw.heads,
            sub.head_dim,
        );
        let mut attn_out = ctx.matmul(&lw.wo);
        attn_out.add_row_bias(&lw.bo);
        let mut r1 = x_in.clone();
        r1.add_assign(&attn_out);
        let (x1, ln1) = layer_norm(&r1, &lw.ln1_g, &lw.ln1_b);
        let mut h_pre = x1.matmul(&lw.w1);
        h_pre.add_row_bias(&lw.b1);
        let mut h = h_pre.clone();
        for val in h.data_mut() {
            *val = gelu(*val);
        }
        let mut f = h.matmul(&lw.w2);
        f.add_row_bias(&lw.b2);
        let mut r2 = x1.clone();
        r2.add_assign(&f);
        let (x2, ln2) = layer_norm(&r2, &lw.ln2_g, &lw.ln2_b);
        x = x2.clone();
        layers.push(LayerCache { x_in, q, k, v, attn, ctx, ln1, x1, h_pre, h, ln2, x2 });
    }
    // Mean-pool positions, classify, cross-entropy.
    let mut pooled = Matrix::zeros(batch.batch_size, e);
    for b in 0..batch.batch_size {
        for s in 0..batch.seq_len {
            let row = x.row(b * batch.seq_len + s);
            let prow = pooled.row_mut(b);
            for (p, &v) in prow.iter_mut().zip(row) {
                *p += v;
            }
        }
        for p in pooled.row_mut(b) {
            *p /= batch.seq_len as f64;
        }
    }
    let mut logits = pooled.matmul(&sub.classifier_w);
    logits.add_row_bias(&sub.classifier_b);
    let (_, probs) = cross_entropy(&logits, &batch.labels);
    Ok(ForwardCache { x0, layers, pooled, logits, probs })
}

/// Loss and logits of a sliced sub-network on one batch.
pub fn forward(sub: &SubnetWeights, batch: &Batch) -> Result<ForwardOutput> {
    let cache = forward_cached(sub, batch)?;
    let (loss, _) = cross_entropy(&cache.logits, &batch.labels);
    let logits = (0..batch.batch_size)
        .map(|b| cache.logits.row(b).to_vec())
        .collect();
    Ok(ForwardOutput { loss, logits })
}

/// Fraction of examples whose arg-max logit matches the label.
pub fn batch_accuracy(sub: &SubnetWeights, batch: &Batch) -> Result<f64> {
    let out = forward(sub, batch)?;
    let correct = out
        .logits
        .iter()
        .zip(&batch.labels)
        .filter(|(row, &label)| {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .unwrap_or(0);
            argmax == label
        })
        .count();
    Ok(correct as f64 / batch.labels.len() as f64)
}

/// Independent oracle: evaluates `arch` on the **full-width** supernet
/// tensors, zeroing the channels that slicing would remove — Q/K/V columns
/// at and beyond `h_l · head_dim` are zeroed after projection (dead heads
/// then attend uniformly over zero values and contribute nothing), FFN
/// activations at and beyond `k_l` are zeroed after the bias add, and layers
/// at and beyond `depth` are skipped entirely (layer norms and biases are
/// not identity, so a dropped layer cannot be emulated by masking).
pub fn forward_masked(
    weights: &SupernetWeights,
    arch: &ArchitectureSpec,
    config: &SupernetConfig,
    batch: &Batch,
) -> Result<ForwardOutput> {
    check_batch(batch, config.vocab_size, config.seq_len, config.num_classes)?;
    let bs = batch.batch_size * batch.seq_len;
    let e = config.embed_dim;
    let h_max = config.space().head_options()[0];
    let mut x = Matrix::zeros(bs, e);
    for (i, &tok) in batch.tokens.iter().enumerate() {
        x.row_mut(i).copy_from_slice(weights.embedding.row(tok as usize));
    }
    for l in 0..arch.depth() {
        let lw = &weights.layers[l];
        let a = config.attn_width(arch.heads()[l]);
        let k_active = arch.intermediates()[l];
        let zero_cols = |m: &mut Matrix, from: usize| {
            for r in 0..m.rows() {
                for c in from..m.cols() {
                    m.set(r, c, 0.0);
                }
            }
        };
        let mut q = x.matmul(&lw.wq);
        q.add_row_bias(&lw.bq);
        zero_cols(&mut q, a);
        let mut k = x.matmul(&lw.wk);
        k.add_row_bias(&lw.bk);
        zero_cols(&mut k, a);
        let mut v = x.matmul(&lw.wv);
        v.add_row_bias(&lw.bv);
        zero_cols(&mut v, a);
        let (ctx, _) = attention_context(
            &q,
            &k,
            &v,
            batch.batch_size,
            batch.seq_len,
            h_max,
            config.head_dim,
        );
        let mut attn_out = ctx.matmul(&lw.wo);
        attn_out.add_row_bias(&lw.bo);
        let mut r1 = x.clone();
        r1.add_assign(&attn_out);
        let (x1, _) = layer_norm(&r1, &lw.ln1_g, &lw.ln1_b);
        let mut h_pre = x1.matmul(&lw.w1);
        h_pre.add_row_bias(&lw.b1);
        let mut h = h_pre;
        for val in h.data_mut() {
            *val = gelu(*val);
        }
        zero_cols(&mut h, k_active);
        let mut f = h.matmul(&lw.w2);
        f.add_row_bias(&lw.b2);
        let mut r2 = x1.clone();
        r2.add_assign(&f);
        let (x2, _) = layer_norm(&r2, &lw.ln2_g, &lw.ln2_b);
        x = x2;
    }
    let mut pooled = Matrix::zeros(batch.batch_size, e);
    for b in 0..batch.batch_size {
        for s in 0..batch.seq_len {
            let row = x.row(b * batch.seq_len + s);
            let prow = pooled.row_mut(b);
            for (p, &v) in prow.iter_mut().zip(row) {
                *p += v;
            }
        }
        for p in pooled.row_mut(b) {
            *p /= batch.seq_len as f64;
        }
    }
    let mut logits = pooled.matmul(&weights.classifier_w);
    logits.add_row_bias(&weights.classifier_b);
    let (loss, _) = cross_entropy(&logits, &batch.labels);
    let logits_vec = (0..batch.batch_size).map(|b| logits.row(b).to_vec()).collect();
    Ok(ForwardOutput { loss, logits: logits_vec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::CategoricalParams;
    use crate::space::presets;
    use crate::supernet::tasks::{TaskConfig, TaskKind};
    use crate::supernet::{extract_subnet, init_weights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (SupernetConfig, SupernetWeights, TaskConfig) {
        let cfg = SupernetConfig::new(presets::desk(), 16, 32, 16, 2).unwrap();
        let w = init_weights(&cfg, &mut ChaCha8Rng::seed_from_u64(40));
        let task = TaskConfig::new(TaskKind::MajorityToken, 16, 16, 8).unwrap();
        (cfg, w, task)
    }

    #[test]
    fn zero_classifier_gives_log_num_classes_loss() {
        let (cfg, mut w, task) = setup();
        w.classifier_w = Matrix::zeros(32, 2);
        w.classifier_b = vec![0.0, 0.0];
        let arch = cfg.space().maximal_arch();
        let sub = extract_subnet(&w, &arch, &cfg).unwrap();
        let out = forward(&sub, &task.batch(1)).unwrap();
        assert!((out.loss - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn permuting_batch_order_preserves_mean_loss() {
        let (cfg, w, task) = setup();
        let arch = cfg.space().maximal_arch();
        let sub = extract_subnet(&w, &arch, &cfg).unwrap();
        let batch = task.batch(2);
        let out = forward(&sub, &batch).unwrap();
        // Reverse the examples.
        let mut rev_tokens = Vec::new();
        let mut rev_labels = Vec::new();
        for b in (0..batch.batch_size).rev() {
            rev_tokens.extend_from_slice(
                &batch.tokens[b * batch.seq_len..(b + 1) * batch.seq_len],
            );
            rev_labels.push(batch.labels[b]);
        }
        let rev = Batch {
            tokens: rev_tokens,
            labels: rev_labels,
            batch_size: batch.batch_size,
            seq_len: batch.seq_len,
        };
        let out_rev = forward(&sub, &rev).unwrap();
        assert!((out.loss - out_rev.loss).abs() < 1e-12);
    }

    #[test]
    fn sliced_equals_masked_for_random_pairs() {
        let (cfg, w, task) = setup();
        let params = CategoricalParams::uniform_init(cfg.space());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..10 {
            let arch = params.sample(cfg.space(), &mut rng);
            let batch = task.batch(1000 + trial);
            let sub = extract_subnet(&w, &arch, &cfg).unwrap();
            let a = forward(&sub, &batch).unwrap();
            let b = forward_masked(&w, &arch, &cfg, &batch).unwrap();
            assert!(
                (a.loss - b.loss).abs() < 1e-6,
                "loss mismatch for {arch}: {} vs {}",
                a.loss,
                b.loss
            );
            for (ra, rb) in a.logits.iter().zip(&b.logits) {
                for (x, y) in ra.iter().zip(rb) {
                    assert!((x - y).abs() < 1e-6, "logit mismatch for {arch}");
                }
            }
        }
    }

    #[test]
    fn rejects_out_of_vocab_and_bad_labels() {
        let (cfg, w, task) = setup();
        let sub = extract_subnet(&w, &cfg.space().maximal_arch(), &cfg).unwrap();
        let mut batch = task.batch(5);
        batch.tokens[0] = 99;
        assert!(forward(&sub, &batch).is_err());
        let mut batch = task.batch(5);
        batch.labels[0] = 7;
        assert!(forward(&sub, &batch).is_err());
        let mut batch = task.batch(5);
        batch.seq_len = 8;
        assert!(forward(&sub, &batch).is_err());
    }

    #[test]
    fn accuracy_counts_argmax_matches() {
        let (cfg, mut w, task) = setup();
        // Rig the classifier to always predict class 0: accuracy must equal
        // the fraction of label-0 examples exactly.
        w.classifier_w = Matrix::zeros(32, 2);
        w.classifier_b = vec![1.0, 0.0];
        let sub = extract_subnet(&w, &cfg.space().minimal_arch(), &cfg).unwrap();
        let batch = task.batch(123);
        let zeros = batch.labels.iter().filter(|&&l| l == 0).count();
        let acc = batch_accuracy(&sub, &batch).unwrap();
        assert_eq!(acc, zeros as f64 / batch.labels.len() as f64);
    }
}
