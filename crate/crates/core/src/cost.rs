//! Deterministic parameter-count and FLOPs accounting for elastic
//! transformer architectures.
//!
//! Counting conventions (fixed and documented here, asserted by the
//! shape-walking oracle tests):
//! - Parameters: exact tensor-element counts. Per active layer with
//!   attention width `A = h_l * head_dim`: query/key/value projections are
//!   `E×A` with bias `A` (3 of them), the output projection is `A×E` with
//!   bias `E`, the FFN pair is `E×k_l` and `k_l×E` with biases `k_l` and
//!   `E`, and the two layer norms carry `2E` each. The classifier is `E×C`
//!   with bias `C`; the token embedding (`V×E`) is architecture-invariant
//!   and excluded from constraint totals by default.
//! - FLOPs: `2 ×` multiply-accumulates of the dense matmuls at sequence
//!   length `S` — QKV projections `2·S·E·3A`, attention scores plus
//!   weighted sum `2·S²·A·2`, output projection `2·S·A·E`, FFN pair
//!   `2·S·E·k_l·2` — plus a classifier term charged in the same per-position
//!   units, `2·S·E·C`. Bias adds, softmax, layer norm, and pooling are
//!   excluded (dominant-term convention).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{ArchitectureSpec, SearchSpace};

/// Fixed model dimensions the cost of an architecture depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Width of a single attention head; `embed_dim / max(head_options)`.
    pub head_dim: usize,
    pub seq_len: usize,
    pub num_classes: usize,
}

impl ModelDims {
    /// Builds dims with `head_dim = embed_dim / head_max`; `embed_dim` must
    /// be divisible by `head_max`.
    pub fn new(
        vocab_size: usize,
        embed_dim: usize,
        head_max: usize,
        seq_len: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if head_max == 0 || !embed_dim.is_multiple_of(head_max) {
            return Err(Error::InvalidParameter(format!(
                "embed_dim {embed_dim} must be divisible by the maximum head count {head_max}"
            )));
        }
        if vocab_size == 0 || embed_dim == 0 || seq_len == 0 || num_classes == 0 {
            return Err(Error::InvalidParameter(
                "model dimensions must be positive".into(),
            ));
        }
        Ok(ModelDims {
            vocab_size,
            embed_dim,
            head_dim: embed_dim / head_max,
            seq_len,
            num_classes,
        })
    }
}

/// Which scalar cost a constraint is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostMetric {
    /// Parameter count excluding the architecture-invariant embedding.
    Params,
    /// FLOPs at the configured sequence length.
    Flops,
}

impl CostMetric {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "params" => Some(CostMetric::Params),
            "flops" => Some(CostMetric::Flops),
            _ => None,
        }
    }
}

impl std::fmt::Display for CostMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostMetric::Params => write!(f, "params"),
            CostMetric::Flops => write!(f, "flops"),
        }
    }
}

/// Itemized cost of one architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub embedding_params: u64,
    /// Per active layer, in layer order.
    pub attention_params: Vec<u64>,
    pub ffn_params: Vec<u64>,
    pub layer_norm_params: Vec<u64>,
    pub classifier_params: u64,
    pub total_params_with_embedding: u64,
    pub total_params_without_embedding: u64,
    /// FLOPs at `seq_len`.
    pub flops: u64,
    pub seq_len: usize,
}

/// Full itemized cost accounting for `arch`.
pub fn breakdown(arch: &ArchitectureSpec, dims: &ModelDims) -> CostBreakdown {
    let e = dims.embed_dim as u64;
    let mut attention = Vec::with_capacity(arch.depth());
    let mut ffn = Vec::with_capacity(arch.depth());
    let mut norms = Vec::with_capacity(arch.depth());
    for l in 0..arch.depth() {
        let a = (arch.heads()[l] * dims.head_dim) as u64;
        let k = arch.intermediates()[l] as u64;
        attention.push(3 * (e * a + a) + (a * e + e));
        ffn.push(e * k + k + k * e + e);
        norms.push(2 * 2 * e);
    }
    let classifier = e * dims.num_classes as u64 + dims.num_classes as u64;
    let embedding = dims.vocab_size as u64 * e;
    let encoder: u64 = attention.iter().sum::<u64>()
        + ffn.iter().sum::<u64>()
        + norms.iter().sum::<u64>();
    CostBreakdown {
        embedding_params: embedding,
        attention_params: attention,
        ffn_params: ffn,
        layer_norm_params: norms,
        classifier_params: classifier,
        total_params_with_embedding: embedding + encoder + classifier,
        total_params_without_embedding: encoder + classifier,
        flops: flops(arch, dims, dims.seq_len),
        seq_len: dims.seq_len,
    }
}

/// Parameter count of `arch`; the embedding table is included only when
/// `include_embedding` is set.
pub fn param_count(arch: &ArchitectureSpec, dims: &ModelDims, include_embedding: bool) -> u64 {
    let b = breakdown(arch, dims);
    if include_embedding {
        b.total_params_with_embedding
    } else {
        b.total_params_without_embedding
    }
}

/// FLOPs of one forward pass at sequence length `seq_len` under the
/// documented 2×MAC convention.
pub fn flops(arch: &ArchitectureSpec, dims: &ModelDims, seq_len: usize) -> u64 {
    let e = dims.embed_dim as u64;
    let s = seq_len as u64;
    let mut total = 0u64;
    for l in 0..arch.depth() {
        let a = (arch.heads()[l] * dims.head_dim) as u64;
        let k = arch.intermediates()[l] as u64;
        total += 2 * s * e * (3 * a); // Q, K, V projections
        total += 2 * s * s * a * 2; // attention scores + weighted sum
        total += 2 * s * a * e; // output projection
        total += 2 * s * e * k * 2; // FFN pair
    }
    total += 2 * s * e * dims.num_classes as u64; // classifier, per-position units
    total
}

/// Cost of `arch` in the given metric: parameter count without embedding,
/// or FLOPs at the configured sequence length.
pub fn cost_of(arch: &ArchitectureSpec, dims: &ModelDims, metric: CostMetric) -> u64 {
    match metric {
        CostMetric::Params => param_count(arch, dims, false),
        CostMetric::Flops => flops(arch, dims, dims.seq_len),
    }
}

/// Cost of the maximal architecture of `space` — the budget normalizer used
/// by the constraint-sensitive reward.
pub fn supernet_cost(space: &SearchSpace, dims: &ModelDims, metric: CostMetric) -> u64 {
    cost_of(&space.maximal_arch(), dims, metric)
}
