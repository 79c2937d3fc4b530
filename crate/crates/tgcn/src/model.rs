//! The forward computation: identity-based node embedding, the learnable
//! banded mixing matrix behind the M-product, stacked tensor graph
//! convolution layers evaluated in the transformed domain, and the
//! link-weight prediction head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::tensor::{
    band_lo, inverse_m_transform, m_transform, BandedLowerMatrix, Matrix, Tensor3,
};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation output `y = f(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation `{other}` (expected tanh or sigmoid)"
            ))),
        }
    }
}

/// Raw (pre-softmax) mixing values over a banded lower-triangular support.
/// Row `t` covers columns `band_lo(t)..=t`; materializing runs a stabilized
/// softmax over each row, so rows are probability distributions and the
/// diagonal is always strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    order: usize,
    band: usize,
    raw: Vec<f64>,
    offsets: Vec<usize>,
}

impl MixingMatrix {
    /// All raw values zero: uniform attention over each band row.
    pub fn new_uniform(order: usize, band: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("mixing order must be >= 1".into()));
        }
        if band == 0 || band > order {
            return Err(Error::InvalidArgument(format!(
                "band window must lie in [1, {order}], got {band}"
            )));
        }
        let mut offsets = Vec::with_capacity(order + 1);
        offsets.push(0);
        for t in 0..order {
            offsets.push(offsets[t] + (t - band_lo(t, band) + 1));
        }
        let raw = vec![0.0; offsets[order]];
        Ok(MixingMatrix {
            order,
            band,
            raw,
            offsets,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn band(&self) -> usize {
        self.band
    }

    /// Flat raw values, rows concatenated in order.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }

    /// Flat range of row `t` inside [`Self::raw`].
    pub fn row_range(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    /// Row-wise softmax over the band (max-subtracted for stability).
    pub fn materialize(&self) -> BandedLowerMatrix {
        let mut rows = Vec::with_capacity(self.order);
        for t in 0..self.order {
            let raw_row = &self.raw[self.row_range(t)];
            let max = raw_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = raw_row.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            rows.push(exps.iter().map(|&e| e / sum).collect());
        }
        BandedLowerMatrix::from_rows(self.order, self.band, rows)
            .expect("band layout is consistent by construction")
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    /// Layer widths `D_0..D_L` (embedding width first), length `layers + 1`.
    pub widths: Vec<usize>,
    /// Band window of the mixing matrix.
    pub window: usize,
    pub activation: Activation,
    /// Share one weight slice across all snapshots in every layer.
    pub tied_weights: bool,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self, snapshots: usize) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidArgument("need at least one layer".into()));
        }
        if self.widths.len() != self.layers + 1 {
            return Err(Error::InvalidArgument(format!(
                "widths must list D_0..D_L ({} values for {} layers), got {}",
                self.layers + 1,
                self.layers,
                self.widths.len()
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if self.window == 0 || self.window > snapshots {
            return Err(Error::InvalidArgument(format!(
                "band window must lie in [1, {snapshots}], got {}",
                self.window
            )));
        }
        Ok(())
    }

    pub fn embed_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        self.widths[self.layers]
    }
}

/// The full learnable parameter set: embedding, per-layer weight tensors,
/// prediction head, and the raw mixing values. Canonical block order is
/// `W_n, W_1..W_L, W_c, z, v, mixing`, row-major within each block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    /// Embedding `W_n`: `D_0 x N`.
    pub embed: Matrix,
    /// Layer weights `W_l`: `D_{l-1} x D_l x T`, or third extent 1 when tied.
    pub layer_weights: Vec<Tensor3>,
    /// Head concat weights `W_c`: `2 D_L x D_L`.
    pub head_concat: Matrix,
    /// Head bias `z`: length `D_L`.
    pub head_bias: Vec<f64>,
    /// Head regressor `v`: length `D_L`.
    pub head_regressor: Vec<f64>,
    pub mixing: MixingMatrix,
}

impl ModelParameters {
    /// Seeded initialization: symmetric uniform scaled by `1/sqrt(fan_in)`
    /// for the weight matrices, zero bias, small uniform regressor, zero
    /// raw mixing values (uniform band attention).
    pub fn init(config: &ModelConfig, nodes: usize, snapshots: usize) -> Result<Self> {
        config.validate(snapshots)?;
        if nodes == 0 {
            return Err(Error::InvalidArgument("need at least one node".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut uniform = |scale: f64| -> f64 { (rng.gen::<f64>() * 2.0 - 1.0) * scale };

        let d0 = config.embed_width();
        let dl = config.output_width();
        let mut embed = Matrix::zeros(d0, nodes);
        let scale = 1.0 / (nodes as f64).sqrt();
        for v in embed.data_mut() {
            *v = uniform(scale);
        }

        let t_w = if config.tied_weights { 1 } else { snapshots };
        let mut layer_weights = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let (d_in, d_out) = (config.widths[l], config.widths[l + 1]);
            let scale = 1.0 / (d_in as f64).sqrt();
            let mut w = Tensor3::zeros(d_in, d_out, t_w);
            for v in w.data_mut() {
                *v = uniform(scale);
            }
            layer_weights.push(w);
        }

        let mut head_concat = Matrix::zeros(2 * dl, dl);
        let scale = 1.0 / (2.0 * dl as f64).sqrt();
        for v in head_concat.data_mut() {
            *v = uniform(scale);
        }

        let head_bias = vec![0.0; dl];
        let mut head_regressor = vec![0.0; dl];
        for v in head_regressor.iter_mut() {
            *v = uniform(0.1);
        }

        let mixing = MixingMatrix::new_uniform(snapshots, config.window)?;
        Ok(ModelParameters {
            embed,
            layer_weights,
            head_concat,
            head_bias,
            head_regressor,
            mixing,
        })
    }

    pub fn node_count(&self) -> usize {
        self.embed.cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|(_, d)| d.len()).sum()
    }

    /// Parameter blocks in canonical order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        out.push(("W_n".to_string(), self.embed.data()));
        for (l, w) in self.layer_weights.iter().enumerate() {
            out.push((format!("W_{}", l + 1), w.data()));
        }
        out.push(("W_c".to_string(), self.head_concat.data()));
        out.push(("z".to_string(), &self.head_bias));
        out.push(("v".to_string(), &self.head_regressor));
        out.push(("mixing".to_string(), self.mixing.raw()));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        out.push(("W_n".to_string(), self.embed.data_mut()));
        for (l, w) in self.layer_weights.iter_mut().enumerate() {
            out.push((format!("W_{}", l + 1), w.data_mut()));
        }
        out.push(("W_c".to_string(), self.head_concat.data_mut()));
        out.push(("z".to_string(), self.head_bias.as_mut_slice()));
        out.push(("v".to_string(), self.head_regressor.as_mut_slice()));
        out.push(("mixing".to_string(), self.mixing.raw_mut()));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, data)| data.iter().all(|v| v.is_finite()))
    }
}

/// Embed the one-hot identity tensor: `X = N x2 W_n`, which collapses to a
/// broadcast since the contraction against one-hot rows just reads columns
/// of `W_n`. Result is `N x D_0 x T` with `X[i, d, t] = W_n[d, i]`.
pub fn embed_nodes(w_n: &Matrix, nodes: usize, snapshots: usize) -> Result<Tensor3> {
    if w_n.cols() != nodes {
        return Err(Error::Shape(format!(
            "embedding has {} columns but the graph has {} nodes",
            w_n.cols(),
            nodes
        )));
    }
    Ok(Tensor3::from_fn(nodes, w_n.rows(), snapshots, |i, d, _| {
        w_n.get(d, i)
    }))
}

/// Everything one layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    /// Input after mixing: `X x3 M`.
    pub input_mixed: Tensor3,
    /// Weights expanded to a full third extent (tied weights broadcast).
    pub weights_full: Tensor3,
    /// Weights after mixing: `W x3 M`.
    pub weights_mixed: Tensor3,
    /// `B_t = mixed_adj_t * input_mixed_t`.
    pub propagated: Tensor3,
    /// Pre-activation `G = (B fw W^) x3 M^-1`.
    pub preactivation: Tensor3,
    /// `F = act(G)`.
    pub output: Tensor3,
}

fn expand_tied(w: &Tensor3, snapshots: usize) -> Tensor3 {
    let (d_in, d_out, t_w) = w.dims();
    if t_w == snapshots {
        return w.clone();
    }
    debug_assert_eq!(t_w, 1);
    let mut full = Tensor3::zeros(d_in, d_out, snapshots);
    for t in 0..snapshots {
        full.slice_mut(t).copy_from_slice(w.slice(0));
    }
    full
}

/// One graph convolution layer evaluated in the transformed domain:
/// `act(((A~ x3 M) fw (X x3 M) fw (W x3 M)) x3 M^-1)`, with the mixed
/// adjacency applied sparse-times-dense per slice.
pub(crate) fn layer_forward(
    mixed_adj: &NormalizedAdjacency,
    x: &Tensor3,
    w: &Tensor3,
    m: &BandedLowerMatrix,
    activation: Activation,
) -> Result<LayerCache> {
    let (nodes, d_in, snapshots) = x.dims();
    let (w_in, d_out, w_t) = w.dims();
    if mixed_adj.node_count() != nodes || mixed_adj.snapshot_count() != snapshots {
        return Err(Error::Shape(format!(
            "adjacency is {}x{} slices but features are {}x{}",
            mixed_adj.node_count(),
            mixed_adj.snapshot_count(),
            nodes,
            snapshots
        )));
    }
    if w_in != d_in {
        return Err(Error::Shape(format!(
            "layer weights expect input width {w_in} but features have width {d_in}"
        )));
    }
    if w_t != snapshots && w_t != 1 {
        return Err(Error::Shape(format!(
            "layer weights carry {w_t} slices, expected {snapshots} (or 1 when tied)"
        )));
    }
    let weights_full = expand_tied(w, snapshots);
    let input_mixed = m_transform(x, m)?;
    let weights_mixed = m_transform(&weights_full, m)?;

    let mut propagated = Tensor3::zeros(nodes, d_in, snapshots);
    for t in 0..snapshots {
        let src = input_mixed.slice(t).to_vec();
        mixed_adj.spmm_slice(t, &src, d_in, propagated.slice_mut(t));
    }

    let mut transformed = Tensor3::zeros(nodes, d_out, snapshots);
    for t in 0..snapshots {
        let b = propagated.slice(t);
        let wt = weights_mixed.slice(t);
        let out = transformed.slice_mut(t);
        for i in 0..nodes {
            for o in 0..d_out {
                let mut acc = 0.0;
                for q in 0..d_in {
                    acc += b[i * d_in + q] * wt[q * d_out + o];
                }
                out[i * d_out + o] = acc;
            }
        }
    }

    let preactivation = inverse_m_transform(&transformed, m)?;
    let output = preactivation.map(|v| activation.apply(v));
    Ok(LayerCache {
        input_mixed,
        weights_full,
        weights_mixed,
        propagated,
        preactivation,
        output,
    })
}

/// One TGCN layer `act(A~ * X * W)` with `*` the M-product.
pub fn tgcn_layer(
    adj: &NormalizedAdjacency,
    x: &Tensor3,
    w: &Tensor3,
    m: &BandedLowerMatrix,
    activation: Activation,
) -> Result<Tensor3> {
    m.check_invertible()?;
    let mixed = adj.mix(m)?;
    Ok(layer_forward(&mixed, x, w, m, activation)?.output)
}

/// Full forward state, kept for reverse-mode gradients.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    pub embedded: Tensor3,
    pub mixing: BandedLowerMatrix,
    pub mixed_adj: NormalizedAdjacency,
    pub layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor3 {
        &self.layers.last().expect("at least one layer").output
    }
}

pub(crate) fn forward_with_cache(
    params: &ModelParameters,
    adj: &NormalizedAdjacency,
    config: &ModelConfig,
) -> Result<ForwardCache> {
    let nodes = adj.node_count();
    let snapshots = adj.snapshot_count();
    config.validate(snapshots)?;
    if params.layer_weights.len() != config.layers {
        return Err(Error::Shape(format!(
            "parameters carry {} layers but config expects {}",
            params.layer_weights.len(),
            config.layers
        )));
    }
    let mixing = params.mixing.materialize();
    let mixed_adj = adj.mix(&mixing)?;
    let embedded = embed_nodes(&params.embed, nodes, snapshots)?;
    let mut layers: Vec<LayerCache> = Vec::with_capacity(config.layers);
    for (l, w) in params.layer_weights.iter().enumerate() {
        let input = if l == 0 {
            &embedded
        } else {
            &layers[l - 1].output
        };
        layers.push(layer_forward(
            &mixed_adj,
            input,
            w,
            &mixing,
            config.activation,
        )?);
    }
    Ok(ForwardCache {
        embedded,
        mixing,
        mixed_adj,
        layers,
    })
}

/// Node representation tensor `F` of the stacked model,
/// `act(A~ * ... act(A~ * X * W_1) ... * W_L)` with one shared mixing
/// matrix across layers.
pub fn forward(
    params: &ModelParameters,
    adj: &NormalizedAdjacency,
    config: &ModelConfig,
) -> Result<Tensor3> {
    forward_with_cache(params, adj, config).map(|c| c.output().clone())
}

/// Predicted link weight from the representation rows of nodes `i` and `j`
/// at slice `t`:
/// `tanh(F_i .* F_j + [F_i | F_j] W_c + z) . v`.
pub fn predict_edge(
    f: &Tensor3,
    i: usize,
    j: usize,
    t: usize,
    w_c: &Matrix,
    z: &[f64],
    v: &[f64],
) -> Result<f64> {
    let (nodes, d, snapshots) = f.dims();
    if i >= nodes || j >= nodes || t >= snapshots {
        return Err(Error::InvalidArgument(format!(
            "edge index ({i}, {j}, {t}) outside {nodes} nodes x {snapshots} slices"
        )));
    }
    if w_c.dims() != (2 * d, d) || z.len() != d || v.len() != d {
        return Err(Error::Shape(format!(
            "head shapes must be ({}x{}), {}, {} for width {d}",
            w_c.rows(),
            w_c.cols(),
            z.len(),
            v.len()
        )));
    }
    let mut estimate = 0.0;
    for col in 0..d {
        let mut h = f.get(i, col, t) * f.get(j, col, t) + z[col];
        for q in 0..d {
            h += f.get(i, q, t) * w_c.get(q, col);
            h += f.get(j, q, t) * w_c.get(d + q, col);
        }
        estimate += h.tanh() * v[col];
    }
    Ok(estimate)
}
