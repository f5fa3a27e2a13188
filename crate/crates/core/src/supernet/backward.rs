//! Reverse-mode differentiation of the sliced forward pass.
//!
//! Gradients are computed on the compact sliced shapes and then scattered
//! into full-size tensors, so the result always has the supernet's layout:
//! entries outside the evaluated architecture's active slices are exactly
//! zero. That layout is what the masked optimizer consumes when several
//! sampled architectures share one mini-batch.

use super::forward::{forward_cached, ForwardCache, LnCache};
use super::linalg::{gelu_prime, Matrix};
use super::tasks::Batch;
use super::{extract_subnet, SubnetWeights, SupernetConfig, SupernetWeights};
use crate::error::Result;
use crate::space::ArchitectureSpec;

/// Mean cross-entropy recovered from cached softmax probabilities.
fn loss_from_cache(cache: &ForwardCache, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &label)| -cache.probs.get(b, label).ln())
        .sum();
    total / labels.len() as f64
}

/// Backward of `y = g ⊙ x̂ + b` over rows, returning `(dx, dgain, dshift)`.
fn ln_backward(dy: &Matrix, cache: &LnCache, gain: &[f64]) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (rows, cols) = (dy.rows(), dy.cols());
    let mut dx = Matrix::zeros(rows, cols);
    let mut dgain = vec![0.0; cols];
    let mut dshift = vec![0.0; cols];
    let inv_n = 1.0 / cols as f64;
    for r in 0..rows {
        let xhat = cache.xhat.row(r);
        let dyr = dy.row(r);
        let istd = cache.inv_std[r];
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for c in 0..cols {
            let dxh = dyr[c] * gain[c];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xhat[c];
            dgain[c] += dyr[c] * xhat[c];
            dshift[c] += dyr[c];
        }
        mean_dxh *= inv_n;
        mean_dxh_xh *= inv_n;
        for c in 0..cols {
            let dxh = dyr[c] * gain[c];
            dx.set(r, c, istd * (dxh - mean_dxh - xhat[c] * mean_dxh_xh));
        }
    }
    (dx, dgain, dshift)
}

/// Backward of scaled-dot-product attention for all (example, head) pairs,
/// returning gradients with respect to the compact Q/K/V projections.
fn attention_backward(
    dctx: &Matrix,
    cache: &super::forward::LayerCache,
    batch_size: usize,
    seq_len: usize,
    heads: usize,
    head_dim: usize,
) -> (Matrix, Matrix, Matrix) {
    let scale = 1.0 / (head_dim as f64).sqrt();
    let width = heads * head_dim;
    let bs = batch_size * seq_len;
    let mut dq = Matrix::zeros(bs, width);
    let mut dk = Matrix::zeros(bs, width);
    let mut dv = Matrix::zeros(bs, width);
    for b in 0..batch_size {
        let row0 = b * seq_len;
        for h in 0..heads {
            let c0 = h * head_dim;
            let attn = &cache.attn[b * heads + h];
            // ctx = attn · v  ⇒  dattn = dctx·vᵀ, dv = attnᵀ·dctx.
            let mut dattn = Matrix::zeros(seq_len, seq_len);
            for s1 in 0..seq_len {
                for s2 in 0..seq_len {
                    let mut acc = 0.0;
                    for d in 0..head_dim {
                        acc += dctx.get(row0 + s1, c0 + d) * cache.v.get(row0 + s2, c0 + d);
                    }
                    dattn.set(s1, s2, acc);
                }
            }
            for s2 in 0..seq_len {
                for d in 0..head_dim {
                    let mut acc = 0.0;
                    for s1 in 0..seq_len {
                        acc += attn.get(s1, s2) * dctx.get(row0 + s1, c0 + d);
                    }
                    dv.set(row0 + s2, c0 + d, acc);
                }
            }
            // Row-wise softmax Jacobian: ds = a ⊙ (da − ⟨da, a⟩).
            let mut dscores = Matrix::zeros(seq_len, seq_len);
            for s1 in 0..seq_len {
                let mut dot = 0.0;
                for j in 0..seq_len {
                    dot += dattn.get(s1, j) * attn.get(s1, j);
                }
                for s2 in 0..seq_len {
                    dscores.set(s1, s2, attn.get(s1, s2) * (dattn.get(s1, s2) - dot));
                }
            }
            // scores = scale · q·kᵀ  ⇒  dq = scale·ds·k, dk = scale·dsᵀ·q.
            for s1 in 0..seq_len {
                for d in 0..head_dim {
                    let mut acc = 0.0;
                    for s2 in 0..seq_len {
                        acc += dscores.get(s1, s2) * cache.k.get(row0 + s2, c0 + d);
                    }
                    dq.set(row0 + s1, c0 + d, acc * scale);
                }
            }
            for s2 in 0..seq_len {
                for d in 0..head_dim {
                    let mut acc = 0.0;
                    for s1 in 0..seq_len {
                        acc += dscores.get(s1, s2) * cache.q.get(row0 + s1, c0 + d);
                    }
                    dk.set(row0 + s2, c0 + d, acc * scale);
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Copies a compact gradient into the leading block of a full-size tensor.
fn paste(dst: &mut Matrix, src: &Matrix) {
    for r in 0..src.rows() {
        dst.row_mut(r)[..src.cols()].copy_from_slice(src.row(r));
    }
}

/// Loss and loss gradients of one architecture on one batch.
///
/// The returned [`SupernetWeights`] has the supernet's full shapes with the
/// gradient of the mean cross-entropy written into the architecture's
/// active slices and exact zeros everywhere else (including all tensors of
/// layers beyond the architecture's depth).
pub fn gradients(
    weights: &SupernetWeights,
    config: &SupernetConfig,
    arch: &ArchitectureSpec,
    batch: &Batch,
) -> Result<(f64, SupernetWeights)> {
    let sub = extract_subnet(weights, arch, config)?;
    let cache = forward_cached(&sub, batch)?;
    let loss = loss_from_cache(&cache, &batch.labels);
    let grads = backprop(&sub, &cache, batch, config);
    Ok((loss, grads))
}

fn backprop(
    sub: &SubnetWeights,
    cache: &ForwardCache,
    batch: &Batch,
    config: &SupernetConfig,
) -> SupernetWeights {
    let (b_sz, s_len) = (batch.batch_size, batch.seq_len);
    let num_classes = sub.num_classes;
    let mut grads = SupernetWeights::zeros(config);

    // Cross-entropy + softmax: dlogits = (p − onehot)/B.
    let mut dlogits = cache.probs.clone();
    for (b, &label) in batch.labels.iter().enumerate() {
        let v = dlogits.get(b, label) - 1.0;
        dlogits.set(b, label, v);
    }
    dlogits.scale(1.0 / b_sz as f64);
    debug_assert_eq!(dlogits.cols(), num_classes);

    grads.classifier_w = cache.pooled.matmul_tn(&dlogits);
    grads.classifier_b = dlogits.col_sums();
    let dpooled = dlogits.matmul_nt(&sub.classifier_w);

    // Mean pooling spreads each example's gradient evenly over positions.
    let e = sub.embedding.cols();
    let mut dx = Matrix::zeros(b_sz * s_len, e);
    for b in 0..b_sz {
        for s in 0..s_len {
            for c in 0..e {
                dx.set(b * s_len + s, c, dpooled.get(b, c) / s_len as f64);
            }
        }
    }

    for l in (0..sub.layers.len()).rev() {
        let lc = &cache.layers[l];
        let lw = &sub.layers[l];
        let gl = &mut grads.layers[l];

        let (dr2, dg2, dsh2) = ln_backward(&dx, &lc.ln2, &lw.ln2_g);
        gl.ln2_g.copy_from_slice(&dg2);
        gl.ln2_b.copy_from_slice(&dsh2);
        let mut dx1 = dr2.clone();
        let df = dr2;

        paste(&mut gl.w2, &lc.h.matmul_tn(&df));
        gl.b2.copy_from_slice(&df.col_sums());
        let dh = df.matmul_nt(&lw.w2);
        let mut dh_pre = dh;
        for (g, &pre) in dh_pre.data_mut().iter_mut().zip(lc.h_pre.data()) {
            *g *= gelu_prime(pre);
        }
        paste(&mut gl.w1, &lc.x1.matmul_tn(&dh_pre));
        gl.b1[..lw.ffn_width].copy_from_slice(&dh_pre.col_sums());
        dx1.add_assign(&dh_pre.matmul_nt(&lw.w1));

        let (dr1, dg1, dsh1) = ln_backward(&dx1, &lc.ln1, &lw.ln1_g);
        gl.ln1_g.copy_from_slice(&dg1);
        gl.ln1_b.copy_from_slice(&dsh1);
        let mut dx_in = dr1.clone();
        let dattn_out = dr1;

        paste(&mut gl.wo, &lc.ctx.matmul_tn(&dattn_out));
        gl.bo.copy_from_slice(&dattn_out.col_sums());
        let dctx = dattn_out.matmul_nt(&lw.wo);

        let (dq, dk, dv) =
            attention_backward(&dctx, lc, b_sz, s_len, lw.heads, sub.head_dim);
        paste(&mut gl.wq, &lc.x_in.matmul_tn(&dq));
        gl.bq[..lw.attn_width].copy_from_slice(&dq.col_sums());
        dx_in.add_assign(&dq.matmul_nt(&lw.wq));
        paste(&mut gl.wk, &lc.x_in.matmul_tn(&dk));
        gl.bk[..lw.attn_width].copy_from_slice(&dk.col_sums());
        dx_in.add_assign(&dk.matmul_nt(&lw.wk));
        paste(&mut gl.wv, &lc.x_in.matmul_tn(&dv));
        gl.bv[..lw.attn_width].copy_from_slice(&dv.col_sums());
        dx_in.add_assign(&dv.matmul_nt(&lw.wv));

        dx = dx_in;
    }

    // Embedding rows accumulate over every position where the token occurs.
    for (i, &tok) in batch.tokens.iter().enumerate() {
        let src = dx.row(i).to_vec();
        let dst = grads.embedding.row_mut(tok as usize);
        for (d, s) in dst.iter_mut().zip(&src) {
            *d += s;
        }
    }
    grads
}
