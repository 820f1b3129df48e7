//! Dual-path message-passing encoder and the feature/edge decoders.
//!
//! Node features and per-edge positional representations are updated
//! together: attention weights blend with positions to gate feature
//! messages, and positions absorb the attention weights layer by layer.
//! Attention is either per-head GAT-style scores (softmax-normalized
//! over each neighborhood, broadcast across the head's channels) or
//! GatedGCN-style elementwise sigmoid gates.

pub mod losses;

use crate::corruption::CorruptedGraph;
use crate::error::{Error, Result};
use crate::spectral::{PositionMatrix, RbfParams};
use fcg_tensor::{ParamStore, Scalar, Tape, Tensor, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderVariant {
    Gat,
    GatedGcn,
}

impl std::str::FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gat" => Ok(EncoderVariant::Gat),
            "gatedgcn" => Ok(EncoderVariant::GatedGcn),
            other => Err(Error::Config(format!(
                "unknown encoder variant `{other}` (expected gat|gatedgcn)"
            ))),
        }
    }
}

impl std::fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EncoderVariant::Gat => write!(f, "gat"),
            EncoderVariant::GatedGcn => write!(f, "gatedgcn"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    /// Message-passing layers (L >= 1).
    pub layers: usize,
    /// Hidden width d_h.
    pub hidden: usize,
    /// Attention heads (GAT only; must divide `hidden`).
    pub heads: usize,
    /// Gaussian RBF kernel count feeding the position projection.
    pub rbf: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.hidden == 0 || self.rbf == 0 {
            return Err(Error::Config(
                "hidden width and RBF count must be >= 1".into(),
            ));
        }
        if self.variant == EncoderVariant::Gat && (self.heads == 0 || self.hidden % self.heads != 0)
        {
            return Err(Error::Config(format!(
                "hidden width {} must be divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

/// Negative slope used both inside attention scores and between layers.
const LEAKY_SLOPE: f64 = 0.2;

/// Encoder, decoder, and mask-token parameters with their config.
pub struct ModelParams<F: Scalar> {
    pub store: ParamStore<F>,
    pub cfg: EncoderConfig,
    pub feat_dim: usize,
    pub k_e: usize,
}

fn xavier<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<F> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| F::c(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(&[rows, cols], data).expect("xavier shape")
}

fn xavier_vec<F: Scalar>(rng: &mut ChaCha8Rng, len: usize) -> Tensor<F> {
    let bound = (6.0 / (len + 1) as f64).sqrt();
    let data = (0..len)
        .map(|_| F::c(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(&[len], data).expect("xavier shape")
}

/// Seeded initialization of all trainable tensors. The mask token
/// starts at zero; weight matrices are Xavier-uniform; biases are zero.
pub fn init_params<F: Scalar>(
    cfg: &EncoderConfig,
    feat_dim: usize,
    k_e: usize,
    seed: u64,
) -> Result<ModelParams<F>> {
    cfg.validate()?;
    if feat_dim == 0 || k_e == 0 {
        return Err(Error::Config("feature dim and K_e must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let dh = cfg.hidden;

    store.add("mask_token", Tensor::zeros(&[feat_dim]))?;

    let mlp = |store: &mut ParamStore<F>,
               rng: &mut ChaCha8Rng,
               prefix: &str,
               din: usize,
               dout: usize|
     -> Result<()> {
        store.add(format!("{prefix}.w0"), xavier(rng, din, dh))?;
        store.add(format!("{prefix}.b0"), Tensor::zeros(&[dh]))?;
        store.add(format!("{prefix}.w1"), xavier(rng, dh, dout))?;
        store.add(format!("{prefix}.b1"), Tensor::zeros(&[dout]))?;
        Ok(())
    };

    mlp(&mut store, &mut rng, "in_x", feat_dim, dh)?;
    mlp(&mut store, &mut rng, "in_p", cfg.rbf, dh)?;
    for l in 0..cfg.layers {
        store.add(format!("layer{l}.w"), xavier(&mut rng, dh, dh))?;
        if cfg.variant == EncoderVariant::Gat {
            store.add(format!("layer{l}.att_dst"), xavier_vec(&mut rng, dh))?;
            store.add(format!("layer{l}.att_src"), xavier_vec(&mut rng, dh))?;
        }
    }
    mlp(&mut store, &mut rng, "dec_node", dh, feat_dim)?;
    mlp(&mut store, &mut rng, "dec_edge", dh, k_e)?;

    Ok(ModelParams {
        store,
        cfg: cfg.clone(),
        feat_dim,
        k_e,
    })
}

/// Tape leaves for every parameter, resolvable by name.
pub struct BoundParams {
    ids: HashMap<String, TensorId>,
}

pub fn bind_params<F: Scalar>(tape: &mut Tape<F>, params: &ModelParams<F>) -> Result<BoundParams> {
    let mut ids = HashMap::new();
    for (pid, p) in params.store.entries() {
        ids.insert(p.name.clone(), tape.param(&params.store, pid)?);
    }
    Ok(BoundParams { ids })
}

impl BoundParams {
    pub fn get(&self, name: &str) -> TensorId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter `{name}`"))
    }
}

fn mlp2<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    prefix: &str,
    x: TensorId,
) -> Result<TensorId> {
    let h = tape.matmul(x, bound.get(&format!("{prefix}.w0")))?;
    let h = tape.add_row_vec(h, bound.get(&format!("{prefix}.b0")))?;
    let h = tape.relu(h)?;
    let o = tape.matmul(h, bound.get(&format!("{prefix}.w1")))?;
    Ok(tape.add_row_vec(o, bound.get(&format!("{prefix}.b1")))?)
}

/// Per-layer node and position representations plus the directed
/// message-edge structure they were computed over.
pub struct EncodedState {
    /// X^(0) .. X^(L), each `[N, d_h]`.
    pub x_layers: Vec<TensorId>,
    /// P^(0) .. P^(L), each `[M, d_h]` over the message edges.
    pub p_layers: Vec<TensorId>,
    /// Final representations `H = X^(L)`.
    pub h: TensorId,
    pub msg_src: Vec<usize>,
    pub msg_dst: Vec<usize>,
}

/// Directed message edges of a corrupted graph: both directions of
/// every retained edge, then one self-loop per node (positions use
/// distance 0 on the diagonal).
fn message_edges<F: Scalar>(
    cg: &CorruptedGraph<'_, F>,
    positions: &PositionMatrix<F>,
) -> (Vec<usize>, Vec<usize>, Vec<F>) {
    let n = cg.base.num_nodes();
    let m = 2 * cg.edges.len() + n;
    let mut src = Vec::with_capacity(m);
    let mut dst = Vec::with_capacity(m);
    let mut dist = Vec::with_capacity(m);
    for &(i, j) in &cg.edges {
        let eid = cg.base.edge_id(i, j).expect("retained edge exists in base");
        let d = positions.by_edge_id(eid);
        // Message j -> i.
        src.push(j);
        dst.push(i);
        dist.push(d);
        // Message i -> j.
        src.push(i);
        dst.push(j);
        dist.push(d);
    }
    for i in 0..n {
        src.push(i);
        dst.push(i);
        dist.push(F::zero());
    }
    (src, dst, dist)
}

pub fn encode<F: Scalar>(
    tape: &mut Tape<F>,
    cg: &CorruptedGraph<'_, F>,
    positions: &PositionMatrix<F>,
    rbf: &RbfParams<F>,
    params: &ModelParams<F>,
    bound: &BoundParams,
) -> Result<EncodedState> {
    let cfg = &params.cfg;
    if rbf.dim() != cfg.rbf {
        return Err(Error::Config(format!(
            "RBF grid has {} kernels but the encoder expects {}",
            rbf.dim(),
            cfg.rbf
        )));
    }
    if cg.base.feature_dim() != params.feat_dim {
        return Err(Error::Config(format!(
            "graph features have dim {} but the model was built for {}",
            cg.base.feature_dim(),
            params.feat_dim
        )));
    }
    let n = cg.base.num_nodes();
    let slope = F::c(LEAKY_SLOPE);

    let (msg_src, msg_dst, msg_dist) = message_edges(cg, positions);
    let m = msg_src.len();

    // RBF embedding of every message-edge distance (constant input).
    let mut rbf_rows = Vec::with_capacity(m);
    for &d in &msg_dist {
        rbf_rows.push(rbf.embed(d)?);
    }
    let rbf_const = tape.constant(Tensor::from_rows(&rbf_rows)?)?;

    // Masked feature matrix: token rows substituted on the tape so the
    // token receives gradients.
    let feats = tape.constant(cg.base.features().clone())?;
    let token = bound.get("mask_token");
    let x_tilde = tape.mask_rows(feats, token, &cg.masked_nodes)?;

    let mut x = mlp2(tape, bound, "in_x", x_tilde)?;
    let mut p = mlp2(tape, bound, "in_p", rbf_const)?;

    let mut x_layers = vec![x];
    let mut p_layers = vec![p];

    for l in 0..cfg.layers {
        let w = bound.get(&format!("layer{l}.w"));
        let xw = tape.matmul(x, w)?;

        let alpha = match cfg.variant {
            EncoderVariant::Gat => {
                let heads = cfg.heads;
                let ch = cfg.hidden / heads;
                // Per-head scalar scores: w^T [W x_i || W x_j] decomposes
                // into a destination and a source half.
                let mut half = |att: TensorId| -> Result<TensorId> {
                    let t = tape.mul_row_vec(xw, att)?;
                    let t = tape.reshape(t, &[n, heads, ch])?;
                    Ok(tape.sum_last_axis(t)?)
                };
                let s_dst = half(bound.get(&format!("layer{l}.att_dst")))?;
                let s_src = half(bound.get(&format!("layer{l}.att_src")))?;
                let e_dst = tape.gather_rows(s_dst, &msg_dst)?;
                let e_src = tape.gather_rows(s_src, &msg_src)?;
                let e = tape.add(e_dst, e_src)?;
                let e = tape.leaky_relu(e, slope)?;
                // Softmax over each destination's neighborhood, per head.
                // The max shift is a constant; softmax is invariant to it.
                let shift = segment_max_const(tape.value(e), &msg_dst, n);
                let shift = tape.constant(shift)?;
                let e = tape.sub(e, shift)?;
                let ex = tape.exp(e)?;
                let sums = tape.scatter_add_rows(ex, &msg_dst, n)?;
                let denom = tape.gather_rows(sums, &msg_dst)?;
                let alpha_h = tape.div(ex, denom)?;
                tape.expand_heads(alpha_h, ch)?
            }
            EncoderVariant::GatedGcn => {
                let a_dst = tape.gather_rows(xw, &msg_dst)?;
                let a_src = tape.gather_rows(xw, &msg_src)?;
                let sum = tape.add(a_dst, a_src)?;
                tape.sigmoid(sum)?
            }
        };

        // X_i^{(l+1)} = sum_j (alpha_ij + P_ij) ⊙ X_j^{(l)}
        let coeff = tape.add(alpha, p)?;
        let x_src = tape.gather_rows(x, &msg_src)?;
        let msg = tape.mul(coeff, x_src)?;
        let agg = tape.scatter_add_rows(msg, &msg_dst, n)?;
        x = tape.leaky_relu(agg, slope)?;

        // P^{(l+1)} = P^{(l)} + alpha
        p = tape.add(p, alpha)?;

        x_layers.push(x);
        p_layers.push(p);
    }

    Ok(EncodedState {
        h: x,
        x_layers,
        p_layers,
        msg_src,
        msg_dst,
    })
}

/// Segment-wise max over message edges grouped by destination,
/// broadcast back to edges. Used as a detached stabilizer inside the
/// neighborhood softmax.
fn segment_max_const<F: Scalar>(e: &Tensor<F>, dst: &[usize], n: usize) -> Tensor<F> {
    let h = e.shape()[1];
    let mut seg = Tensor::full(&[n, h], F::neg_infinity());
    for (row, &d) in dst.iter().enumerate() {
        for c in 0..h {
            let cur = seg.get2(d, c);
            seg.set2(d, c, cur.max(e.get2(row, c)));
        }
    }
    let mut out = Tensor::zeros(&[dst.len(), h]);
    for (row, &d) in dst.iter().enumerate() {
        for c in 0..h {
            out.set2(row, c, seg.get2(d, c));
        }
    }
    out
}

/// Map final representations back to the input feature space.
pub fn decode_nodes<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    h: TensorId,
) -> Result<TensorId> {
    mlp2(tape, bound, "dec_node", h)
}

/// Reconstruct spectral edge features for the given edges from node
/// representations: `Ē_ij = H_i ⊙ H_j`, then the edge decoder MLP.
/// Every requested edge must belong to `allowed`.
pub fn decode_edges<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    h: TensorId,
    edges: &[(usize, usize)],
    allowed: &std::collections::BTreeSet<(usize, usize)>,
) -> Result<TensorId> {
    for e in edges {
        if !allowed.contains(e) {
            return Err(Error::Contract(format!(
                "edge ({}, {}) is not part of the corrupted edge set",
                e.0, e.1
            )));
        }
    }
    let src: Vec<usize> = edges.iter().map(|&(i, _)| i).collect();
    let dst: Vec<usize> = edges.iter().map(|&(_, j)| j).collect();
    let hi = tape.gather_rows(h, &src)?;
    let hj = tape.gather_rows(h, &dst)?;
    let ebar = tape.mul(hi, hj)?;
    mlp2(tape, bound, "dec_edge", ebar)
}
