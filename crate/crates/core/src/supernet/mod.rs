//! Weight-shared evaluation backends.
//!
//! The elastic transformer keeps one set of maximal-dimension tensors; any
//! sub-architecture's weights are the leading slices of those tensors (the
//! first `h_l · head_dim` columns of the attention projections, the first
//! `k_l` units of the feed-forward pair), so no candidate ever owns weights
//! of its own. A tabular backend with analytically known optima provides
//! enumeration oracles for the search algorithms.

pub mod adam;
pub mod backward;
pub mod forward;
pub mod linalg;
pub mod tabular;
pub mod tasks;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::ModelDims;
use crate::error::{Error, Result};
use crate::space::{ArchitectureSpec, SearchSpace};
use linalg::Matrix;

/// Fixed hyper-shape of the elastic transformer, bound to a search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupernetConfig {
    space: SearchSpace,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    /// Width of one attention head: `embed_dim / max(head_options)`, fixed
    /// across architectures; head-count choices vary total attention width.
    pub head_dim: usize,
    /// Largest intermediate size — the allocated FFN width.
    pub k_max: usize,
}

impl SupernetConfig {
    pub fn new(
        space: SearchSpace,
        vocab_size: usize,
        embed_dim: usize,
        seq_len: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let h_max = space.head_options()[0];
        if embed_dim == 0 || !embed_dim.is_multiple_of(h_max) {
            return Err(Error::InvalidParameter(format!(
                "embed_dim {embed_dim} must be a positive multiple of the \
                 maximum head count {h_max}"
            )));
        }
        if vocab_size == 0 || seq_len == 0 || num_classes < 2 {
            return Err(Error::InvalidParameter(
                "vocab_size and seq_len must be positive; num_classes ≥ 2".into(),
            ));
        }
        let k_max = space.intermediate_options()[0];
        Ok(SupernetConfig {
            head_dim: embed_dim / h_max,
            k_max,
            space,
            vocab_size,
            embed_dim,
            seq_len,
            num_classes,
        })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    /// Replaces the bound space (e.g. with a different active mask); the
    /// option lists must be unchanged.
    pub fn with_space(&self, space: SearchSpace) -> Result<Self> {
        if space.depth_options() != self.space.depth_options()
            || space.head_options() != self.space.head_options()
            || space.intermediate_options() != self.space.intermediate_options()
        {
            return Err(Error::InvalidSpace(
                "cannot rebind a supernet to different option lists".into(),
            ));
        }
        let mut cfg = self.clone();
        cfg.space = space;
        Ok(cfg)
    }

    pub fn max_depth(&self) -> usize {
        self.space.max_depth()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            head_dim: self.head_dim,
            seq_len: self.seq_len,
            num_classes: self.num_classes,
        }
    }

    /// Attention width `h_l · head_dim` of a head-count choice.
    pub fn attn_width(&self, heads: usize) -> usize {
        heads * self.head_dim
    }
}

/// One encoder layer's maximal-dimension tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    /// Output projection, `[E × E]`; a sub-network uses the leading rows.
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
}

/// The shared maximal-dimension tensors. The same structure doubles as
/// gradient and optimizer-moment storage, since those are shape-congruent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupernetWeights {
    pub embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub classifier_w: Matrix,
    pub classifier_b: Vec<f64>,
}

/// Read-only view of one named tensor.
pub enum TensorView<'a> {
    Mat(&'a Matrix),
    Vector(&'a [f64]),
}

impl TensorView<'_> {
    pub fn len(&self) -> usize {
        match self {
            TensorView::Mat(m) => m.len(),
            TensorView::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            TensorView::Mat(m) => m.data(),
            TensorView::Vector(v) => v,
        }
    }
}

impl SupernetWeights {
    /// All-zero tensors of the configured shapes.
    pub fn zeros(config: &SupernetConfig) -> Self {
        let e = config.embed_dim;
        let k = config.k_max;
        let layer = || LayerWeights {
            wq: Matrix::zeros(e, e),
            bq: vec![0.0; e],
            wk: Matrix::zeros(e, e),
            bk: vec![0.0; e],
            wv: Matrix::zeros(e, e),
            bv: vec![0.0; e],
            wo: Matrix::zeros(e, e),
            bo: vec![0.0; e],
            w1: Matrix::zeros(e, k),
            b1: vec![0.0; k],
            w2: Matrix::zeros(k, e),
            b2: vec![0.0; e],
            ln1_g: vec![0.0; e],
            ln1_b: vec![0.0; e],
            ln2_g: vec![0.0; e],
            ln2_b: vec![0.0; e],
        };
        SupernetWeights {
            embedding: Matrix::zeros(config.vocab_size, e),
            layers: (0..config.max_depth()).map(|_| layer()).collect(),
            classifier_w: Matrix::zeros(e, config.num_classes),
            classifier_b: vec![0.0; config.num_classes],
        }
    }

    /// Visits every tensor in the stable registry order used by the
    /// checkpoint format and the finite-difference harness:
    /// `embedding`, then per layer `wq bq wk bk wv bv wo bo w1 b1 w2 b2
    /// ln1_g ln1_b ln2_g ln2_b`, then `classifier_w classifier_b`.
    pub fn for_each_tensor<'a>(&'a self, mut f: impl FnMut(String, TensorView<'a>)) {
        f("embedding".into(), TensorView::Mat(&self.embedding));
        for (l, lw) in self.layers.iter().enumerate() {
            f(format!("layer{l}.wq"), TensorView::Mat(&lw.wq));
            f(format!("layer{l}.bq"), TensorView::Vector(&lw.bq));
            f(format!("layer{l}.wk"), TensorView::Mat(&lw.wk));
            f(format!("layer{l}.bk"), TensorView::Vector(&lw.bk));
            f(format!("layer{l}.wv"), TensorView::Mat(&lw.wv));
            f(format!("layer{l}.bv"), TensorView::Vector(&lw.bv));
            f(format!("layer{l}.wo"), TensorView::Mat(&lw.wo));
            f(format!("layer{l}.bo"), TensorView::Vector(&lw.bo));
            f(format!("layer{l}.w1"), TensorView::Mat(&lw.w1));
            f(format!("layer{l}.b1"), TensorView::Vector(&lw.b1));
            f(format!("layer{l}.w2"), TensorView::Mat(&lw.w2));
            f(format!("layer{l}.b2"), TensorView::Vector(&lw.b2));
            f(format!("layer{l}.ln1_g"), TensorView::Vector(&lw.ln1_g));
            f(format!("layer{l}.ln1_b"), TensorView::Vector(&lw.ln1_b));
            f(format!("layer{l}.ln2_g"), TensorView::Vector(&lw.ln2_g));
            f(format!("layer{l}.ln2_b"), TensorView::Vector(&lw.ln2_b));
        }
        f("classifier_w".into(), TensorView::Mat(&self.classifier_w));
        f("classifier_b".into(), TensorView::Vector(&self.classifier_b));
    }

    /// Names in registry order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_tensor(|name, _| names.push(name));
        names
    }

    /// Mutable access to one tensor's backing slice by registry name.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        if name == "embedding" {
            return Some(self.embedding.data_mut());
        }
        if name == "classifier_w" {
            return Some(self.classifier_w.data_mut());
        }
        if name == "classifier_b" {
            return Some(&mut self.classifier_b);
        }
        let rest = name.strip_prefix("layer")?;
        let (idx, field) = rest.split_once('.')?;
        let l: usize = idx.parse().ok()?;
        let lw = self.layers.get_mut(l)?;
        Some(match field {
            "wq" => lw.wq.data_mut(),
            "bq" => &mut lw.bq,
            "wk" => lw.wk.data_mut(),
            "bk" => &mut lw.bk,
            "wv" => lw.wv.data_mut(),
            "bv" => &mut lw.bv,
            "wo" => lw.wo.data_mut(),
            "bo" => &mut lw.bo,
            "w1" => lw.w1.data_mut(),
            "b1" => &mut lw.b1,
            "w2" => lw.w2.data_mut(),
            "b2" => &mut lw.b2,
            "ln1_g" => &mut lw.ln1_g,
            "ln1_b" => &mut lw.ln1_b,
            "ln2_g" => &mut lw.ln2_g,
            "ln2_b" => &mut lw.ln2_b,
            _ => return None,
        })
    }

    /// Element-wise `self += scale · other`. The structures must have been
    /// built from the same configuration.
    pub fn scaled_add(&mut self, other: &SupernetWeights, scale: f64) {
        let mut views: Vec<&[f64]> = Vec::new();
        other.for_each_tensor(|_, view| match view {
            TensorView::Mat(m) => views.push(m.data()),
            TensorView::Vector(v) => views.push(v),
        });
        let mut next = 0;
        let mut add = |dst: &mut [f64]| {
            let src = views[next];
            next += 1;
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        };
        add(self.embedding.data_mut());
        for lw in &mut self.layers {
            add(lw.wq.data_mut());
            add(&mut lw.bq);
            add(lw.wk.data_mut());
            add(&mut lw.bk);
            add(lw.wv.data_mut());
            add(&mut lw.bv);
            add(lw.wo.data_mut());
            add(&mut lw.bo);
            add(lw.w1.data_mut());
            add(&mut lw.b1);
            add(lw.w2.data_mut());
            add(&mut lw.b2);
            add(&mut lw.ln1_g);
            add(&mut lw.ln1_b);
            add(&mut lw.ln2_g);
            add(&mut lw.ln2_b);
        }
        add(self.classifier_w.data_mut());
        add(&mut self.classifier_b);
    }

    /// FNV-1a 64 over every tensor's little-endian bytes in registry order.
    /// Used to assert that evaluation paths never mutate weights.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        self.for_each_tensor(|_, view| {
            for x in view.as_slice() {
                for byte in x.to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x1000_0000_01b3);
                }
            }
        });
        hash
    }
}

/// Documented random initialization: every weight matrix entry is uniform
/// on `(−s, s)` with `s = 1/sqrt(fan_in)` of the full-width tensor, biases
/// start at zero, and layer-norm parameters at gain 1 / shift 0. Draw order
/// follows the tensor registry, so equal seeds give identical weights.
pub fn init_weights<R: Rng>(config: &SupernetConfig, rng: &mut R) -> SupernetWeights {
    let e = config.embed_dim;
    let k = config.k_max;
    let mut w = SupernetWeights::zeros(config);
    let fill = |m: &mut Matrix, fan_in: usize, rng: &mut R| {
        let s = 1.0 / (fan_in as f64).sqrt();
        for x in m.data_mut() {
            *x = (rng.gen::<f64>() * 2.0 - 1.0) * s;
        }
    };
    fill(&mut w.embedding, e, rng);
    for l in 0..config.max_depth() {
        let lw = &mut w.layers[l];
        fill(&mut lw.wq, e, rng);
        fill(&mut lw.wk, e, rng);
        fill(&mut lw.wv, e, rng);
        fill(&mut lw.wo, e, rng);
        fill(&mut lw.w1, e, rng);
        fill(&mut lw.w2, k, rng);
        lw.ln1_g.fill(1.0);
        lw.ln2_g.fill(1.0);
    }
    fill(&mut w.classifier_w, e, rng);
    w
}

/// Which slices of the shared tensors an architecture (or a batch of them)
/// touches: per layer, the active attention width and FFN width, zero for
/// dropped layers. Embedding, classifier, and the layer norms of active
/// layers are always fully covered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveMask {
    /// Number of leading layers covered.
    pub depth: usize,
    /// Per layer `h_l · head_dim`; 0 beyond `depth`.
    pub attn_width: Vec<usize>,
    /// Per layer `k_l`; 0 beyond `depth`.
    pub ffn_width: Vec<usize>,
}

impl ActiveMask {
    pub fn from_arch(arch: &ArchitectureSpec, config: &SupernetConfig) -> Self {
        let md = config.max_depth();
        let mut attn = vec![0; md];
        let mut ffn = vec![0; md];
        for l in 0..arch.depth() {
            attn[l] = config.attn_width(arch.heads()[l]);
            ffn[l] = arch.intermediates()[l];
        }
        ActiveMask { depth: arch.depth(), attn_width: attn, ffn_width: ffn }
    }

    /// Mask covering every slice of every layer.
    pub fn full(config: &SupernetConfig) -> Self {
        ActiveMask::from_arch(&config.space().maximal_arch(), config)
    }

    /// Pointwise union: layer depth and per-layer widths take the maximum.
    pub fn union(&mut self, other: &ActiveMask) {
        self.depth = self.depth.max(other.depth);
        for l in 0..self.attn_width.len() {
            self.attn_width[l] = self.attn_width[l].max(other.attn_width[l]);
            self.ffn_width[l] = self.ffn_width[l].max(other.ffn_width[l]);
        }
    }

    pub fn union_of(archs: &[ArchitectureSpec], config: &SupernetConfig) -> Self {
        let mut mask = ActiveMask {
            depth: 0,
            attn_width: vec![0; config.max_depth()],
            ffn_width: vec![0; config.max_depth()],
        };
        for arch in archs {
            mask.union(&ActiveMask::from_arch(arch, config));
        }
        mask
    }
}

/// One layer of a materialized sub-network: leading slices of the shared
/// tensors, value-identical to the supernet's front portions.
#[derive(Debug, Clone)]
pub struct SubnetLayer {
    pub heads: usize,
    pub attn_width: usize,
    pub ffn_width: usize,
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
}

/// A sub-network's weights, sliced out of the supernet.
#[derive(Debug, Clone)]
pub struct SubnetWeights {
    pub arch: ArchitectureSpec,
    pub embedding: Matrix,
    pub layers: Vec<SubnetLayer>,
    pub classifier_w: Matrix,
    pub classifier_b: Vec<f64>,
    pub head_dim: usize,
    pub seq_len: usize,
    pub num_classes: usize,
}

/// Materializes the sub-network for `arch`: per active layer the first
/// `h_l · head_dim` columns of the Q/K/V projections (and rows of the output
/// projection) and the first `k_l` units of the FFN pair; layers at or
/// beyond `depth` are dropped. Layer norms, embedding, and classifier are
/// shared at full width.
pub fn extract_subnet(
    weights: &SupernetWeights,
    arch: &ArchitectureSpec,
    config: &SupernetConfig,
) -> Result<SubnetWeights> {
    // Revalidate against the bound space so stale architectures fail loudly.
    let arch = ArchitectureSpec::new(
        arch.depth(),
        arch.heads().to_vec(),
        arch.intermediates().to_vec(),
        config.space(),
    )?;
    let e = config.embed_dim;
    let mut layers = Vec::with_capacity(arch.depth());
    for l in 0..arch.depth() {
        let heads = arch.heads()[l];
        let a = config.attn_width(heads);
        let k = arch.intermediates()[l];
        let lw = &weights.layers[l];
        layers.push(SubnetLayer {
            heads,
            attn_width: a,
            ffn_width: k,
            wq: lw.wq.slice_block(e, a),
            bq: lw.bq[..a].to_vec(),
            wk: lw.wk.slice_block(e, a),
            bk: lw.bk[..a].to_vec(),
            wv: lw.wv.slice_block(e, a),
            bv: lw.bv[..a].to_vec(),
            wo: lw.wo.slice_block(a, e),
            bo: lw.bo.clone(),
            w1: lw.w1.slice_block(e, k),
            b1: lw.b1[..k].to_vec(),
            w2: lw.w2.slice_block(k, e),
            b2: lw.b2.clone(),
            ln1_g: lw.ln1_g.clone(),
            ln1_b: lw.ln1_b.clone(),
            ln2_g: lw.ln2_g.clone(),
            ln2_b: lw.ln2_b.clone(),
        });
    }
    Ok(SubnetWeights {
        arch,
        embedding: weights.embedding.clone(),
        layers,
        classifier_w: weights.classifier_w.clone(),
        classifier_b: weights.classifier_b.clone(),
        head_dim: config.head_dim,
        seq_len: config.seq_len,
        num_classes: config.num_classes,
    })
}
