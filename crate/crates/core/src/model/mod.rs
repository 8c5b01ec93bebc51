//! Spectrogram transformer with scale-adaptive attention and distance-weighted
//! auxiliary fusion.
//!
//! Token layout per sample: the `(32/patch)²` patch tokens in row-major patch
//! order followed by one fused auxiliary token, each plus its row of the
//! learnable positional table. Positional slots past the last token are
//! allocated but unused. Blocks are pre-norm:
//!
//! ```text
//! h = h + drop(attn(ln1(h)))
//! h = h + drop(mlp(ln2(h)))
//! ```
//!
//! The readout concatenates the mean patch token with the final auxiliary
//! token and passes it through layer norm, a ReLU hidden layer and a scalar
//! output. Everything is f64 with hand-written gradients.

mod checkpoint;
mod layers;
mod params;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_VERSION};
pub use layers::{gelu, gelu_grad, softmax_rows, LN_EPS};
pub use params::{BlockParams, Linear, ModelParams, Norm, TensorMut, TensorRef};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::CellId;
use layers::{
    attention_backward, attention_forward, dropout_mask, layer_norm, layer_norm_backward, linear,
    linear_backward, AttnShape, LnCache,
};

pub type ModelRng = rand_chacha::ChaCha8Rng;

pub fn model_rng(seed: u64) -> ModelRng {
    ModelRng::seed_from_u64(seed)
}

/// Parameter total quoted for the reference architecture. The layer shapes
/// implemented here do not add up to it; see [`parameter_report`].
pub const REFERENCE_PARAMETER_COUNT: usize = 1_960_000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("empty neighbourhood")]
    EmptyNeighborhood,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// `Σ w F / Σ w`, a weighted average of neighbour embeddings.
    Normalized,
    /// `Σ w F` as written, without the normalizing denominator.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub d_model: usize,
    pub patch: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mlp_ratio: f64,
    pub dropout: f64,
    pub pos_slots: usize,
    pub aux_dim: usize,
    pub head_hidden: usize,
    pub fusion: FusionMode,
    /// Initial fusion decay, per km.
    pub gamma_init_per_km: f64,
    /// When false the attention logits carry no scale-bias term at all.
    pub scale_adaptive: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            d_model: 128,
            patch: 4,
            n_blocks: 4,
            n_heads: 8,
            mlp_ratio: 4.0,
            dropout: 0.1,
            pos_slots: 100,
            aux_dim: 23,
            head_hidden: 128,
            fusion: FusionMode::Normalized,
            gamma_init_per_km: 0.02,
            scale_adaptive: true,
        }
    }
}

impl ModelConfig {
    /// Reduced stack for single-core desk runs. Patching, token layout,
    /// fusion and readout shape match the default; width, depth and head
    /// count shrink to `d_model = 32`, 2 blocks, 4 heads.
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            n_blocks: 2,
            n_heads: 4,
            head_hidden: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.patch == 0 || !self.image_size.is_multiple_of(self.patch) {
            return bad("patch must divide the image size");
        }
        if self.pos_slots < self.n_tokens() {
            return bad("pos_slots must cover every patch token plus the auxiliary token");
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return bad("mlp_ratio must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.gamma_init_per_km > 0.0) {
            return bad("gamma_init_per_km must be positive");
        }
        if self.aux_dim == 0 || self.head_hidden == 0 || self.n_blocks == 0 {
            return bad("aux_dim, head_hidden and n_blocks must be positive");
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn n_patches(&self) -> usize {
        self.patches_per_side().pow(2)
    }

    /// Patch tokens plus the auxiliary token.
    pub fn n_tokens(&self) -> usize {
        self.n_patches() + 1
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.d_model as f64 * self.mlp_ratio).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub cell: CellId,
    pub distance_km: f64,
    /// Standardized auxiliary features of the neighbour cell.
    pub features: Vec<f64>,
}

/// Location and fusion neighbourhood of one sample. `neighbors[0]` is the
/// target cell itself at distance 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoContext {
    pub lat: f64,
    pub lon: f64,
    pub month: u32,
    pub neighbors: Vec<Neighbor>,
}

impl GeoContext {
    pub fn new(
        lat: f64,
        lon: f64,
        month: u32,
        cell: CellId,
        features: Vec<f64>,
        others: Vec<Neighbor>,
    ) -> Self {
        let mut neighbors = Vec::with_capacity(others.len() + 1);
        neighbors.push(Neighbor {
            cell,
            distance_km: 0.0,
            features,
        });
        neighbors.extend(others);
        Self {
            lat,
            lon,
            month,
            neighbors,
        }
    }

    pub fn features(&self) -> &[f64] {
        &self.neighbors[0].features
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    /// Rows = scales, columns = time.
    pub spectrogram: Array2<f64>,
    pub scales: Vec<f64>,
    pub geo: GeoContext,
}

struct BlockCache {
    ln1: LnCache,
    l1: Array2<f64>,
    qkv: Array2<f64>,
    attn: Vec<f64>,
    o: Array2<f64>,
    m1: Option<Array2<f64>>,
    ln2: LnCache,
    l2: Array2<f64>,
    z: Array2<f64>,
    g: Array2<f64>,
    m2: Option<Array2<f64>>,
}

/// Activations retained for the backward pass.
pub struct ForwardCache {
    batch: usize,
    xp: Array2<f64>,
    aux_in: Array2<f64>,
    aux_z: Array2<f64>,
    aux_mask: Option<Array2<f64>>,
    aux_e: Array2<f64>,
    ranges: Vec<(usize, usize)>,
    dists: Vec<f64>,
    weights: Vec<f64>,
    fused: Array2<f64>,
    biases: Option<Vec<Array2<f64>>>,
    blocks: Vec<BlockCache>,
    readout: Array2<f64>,
    head_ln: LnCache,
    rn: Array2<f64>,
    u: Array2<f64>,
    ur: Array2<f64>,
    sh: AttnShape,
}

impl ForwardCache {
    /// Attention weights of one head, `tokens × tokens`.
    pub fn attention(&self, block: usize, sample: usize, head: usize) -> ArrayView2<'_, f64> {
        let t = self.sh.tokens;
        let off = (sample * self.sh.heads + head) * t * t;
        ArrayView2::from_shape((t, t), &self.blocks[block].attn[off..off + t * t])
            .expect("attention shape")
    }

    /// Fused auxiliary representation of each sample (`batch × d_model`).
    pub fn fused(&self) -> &Array2<f64> {
        &self.fused
    }

    /// Normalized fusion weights of sample `b` over its neighbour list.
    pub fn fusion_weights(&self, b: usize) -> Vec<f64> {
        let (lo, hi) = self.ranges[b];
        let w = &self.weights[lo..hi];
        let sum: f64 = w.iter().sum();
        w.iter().map(|x| x / sum).collect()
    }
}

/// Token-level state after embedding, before the transformer trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    /// `tokens × d_model`, positional rows already added.
    pub tokens: Array2<f64>,
    /// Log scale of each patch token (`None` for the auxiliary token).
    pub log_scales: Vec<Option<f64>>,
}

/// Flatten `p × p` patches in row-major patch order.
fn extract_patches(img: &Array2<f64>, patch: usize) -> Array2<f64> {
    let side = img.nrows() / patch;
    let mut out = Array2::zeros((side * side, patch * patch));
    for pr in 0..side {
        for pc in 0..side {
            let mut row = out.row_mut(pr * side + pc);
            for a in 0..patch {
                for b in 0..patch {
                    row[a * patch + b] = img[[pr * patch + a, pc * patch + b]];
                }
            }
        }
    }
    out
}

/// Log scale of each patch token: mean log scale of the rows it covers.
pub fn patch_log_scales(scales: &[f64], cfg: &ModelConfig) -> Vec<f64> {
    let side = cfg.patches_per_side();
    let mut out = Vec::with_capacity(cfg.n_patches());
    for pr in 0..side {
        let rows = &scales[pr * cfg.patch..(pr + 1) * cfg.patch];
        let ls = rows.iter().map(|s| s.ln()).sum::<f64>() / cfg.patch as f64;
        out.extend(std::iter::repeat_n(ls, side));
    }
    out
}

/// `B[i][j] = -|log s(i) - log s(j)|` between patch tokens, 0 if either token has no scale.
pub fn scale_bias(log_scales: &[Option<f64>]) -> Array2<f64> {
    let t = log_scales.len();
    Array2::from_shape_fn((t, t), |(i, j)| match (log_scales[i], log_scales[j]) {
        (Some(a), Some(b)) => -(a - b).abs(),
        _ => 0.0,
    })
}

/// Linear projection of non-overlapping patches (the strided-convolution embedding).
pub fn patch_embed(
    spectrogram: &Array2<f64>,
    patch: &Linear,
    cfg: &ModelConfig,
) -> Result<Array2<f64>, ModelError> {
    if spectrogram.dim() != (cfg.image_size, cfg.image_size) {
        return Err(ModelError::ShapeError(format!(
            "spectrogram is {:?}, expected {}x{}",
            spectrogram.dim(),
            cfg.image_size,
            cfg.image_size
        )));
    }
    Ok(linear(
        &extract_patches(spectrogram, cfg.patch).view(),
        patch,
    ))
}

/// One attention head on explicit `q`, `k`, `v` (`tokens × d_head`).
/// Returns the head output and its weight matrix.
pub fn attention_head(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    bias: Option<&Array2<f64>>,
    alpha: f64,
) -> (Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut logits = q.dot(&k.t()) * scale;
    if let Some(b) = bias {
        logits.scaled_add(alpha, b);
    }
    let n = logits.ncols();
    let mut w = logits.as_standard_layout().into_owned();
    softmax_rows(w.as_slice_mut().expect("standard layout"), n);
    (w.dot(v), w)
}

/// `ReLU(W x + b)` with dropout in training mode.
pub fn aux_embed(
    features: &[f64],
    aux: &Linear,
    dropout: f64,
    mode: Mode,
    rng: &mut ModelRng,
) -> Result<Array1<f64>, ModelError> {
    if features.len() != aux.w.nrows() {
        return Err(ModelError::ShapeError(format!(
            "expected {} features, got {}",
            aux.w.nrows(),
            features.len()
        )));
    }
    let x = Array2::from_shape_vec((1, features.len()), features.to_vec()).expect("row vector");
    let mut e = linear(&x.view(), aux).mapv(|v| v.max(0.0));
    if mode == Mode::Train && dropout > 0.0 {
        e *= &dropout_mask(e.dim(), dropout, rng);
    }
    Ok(e.row(0).to_owned())
}

/// Distance-weighted combination of neighbour embeddings with weights `exp(-γ d)`.
pub fn spatial_fusion(
    embeddings: &[Array1<f64>],
    distances_km: &[f64],
    gamma: f64,
    fusion: FusionMode,
) -> Result<Array1<f64>, ModelError> {
    if embeddings.is_empty() {
        return Err(ModelError::EmptyNeighborhood);
    }
    if embeddings.len() != distances_km.len() {
        return Err(ModelError::ShapeError(
            "one distance per neighbour embedding".into(),
        ));
    }
    let weights: Vec<f64> = distances_km.iter().map(|d| (-gamma * d).exp()).collect();
    let mut out = Array1::zeros(embeddings[0].len());
    for (e, w) in embeddings.iter().zip(&weights) {
        out.scaled_add(*w, e);
    }
    if fusion == FusionMode::Normalized {
        out /= weights.iter().sum::<f64>();
    }
    Ok(out)
}

/// Network configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Network {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = ModelParams::init(&config, &mut model_rng(seed));
        Ok(Self { config, params })
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }

    fn check_input(&self, input: &ModelInput) -> Result<(), ModelError> {
        let cfg = &self.config;
        if input.spectrogram.dim() != (cfg.image_size, cfg.image_size) {
            return Err(ModelError::ShapeError(format!(
                "spectrogram is {:?}",
                input.spectrogram.dim()
            )));
        }
        if input.scales.len() != cfg.image_size {
            return Err(ModelError::ShapeError(format!(
                "{} scales for {} rows",
                input.scales.len(),
                cfg.image_size
            )));
        }
        if input.geo.neighbors.is_empty() {
            return Err(ModelError::EmptyNeighborhood);
        }
        if let Some(n) = input
            .geo
            .neighbors
            .iter()
            .find(|n| n.features.len() != cfg.aux_dim)
        {
            return Err(ModelError::ShapeError(format!(
                "neighbour has {} features, expected {}",
                n.features.len(),
                cfg.aux_dim
            )));
        }
        Ok(())
    }

    /// Batched forward pass; returns scalar outputs and the backward cache.
    pub fn forward_batch(
        &self,
        inputs: &[&ModelInput],
        mode: Mode,
        rng: &mut ModelRng,
    ) -> Result<(Vec<f64>, ForwardCache), ModelError> {
        let cfg = &self.config;
        let p = &self.params;
        for inp in inputs {
            self.check_input(inp)?;
        }
        let batch = inputs.len();
        let np = cfg.n_patches();
        let t = cfg.n_tokens();
        let d = cfg.d_model;
        let drop = mode == Mode::Train && cfg.dropout > 0.0;

        // patch tokens
        let pp = cfg.patch * cfg.patch;
        let mut xp = Array2::zeros((batch * np, pp));
        for (b, inp) in inputs.iter().enumerate() {
            xp.slice_mut(s![b * np..(b + 1) * np, ..])
                .assign(&extract_patches(&inp.spectrogram, cfg.patch));
        }
        let pt = linear(&xp.view(), &p.patch);

        // auxiliary embeddings and fusion
        let total_nb: usize = inputs.iter().map(|i| i.geo.neighbors.len()).sum();
        let mut aux_in = Array2::zeros((total_nb, cfg.aux_dim));
        let mut ranges = Vec::with_capacity(batch);
        let mut dists = Vec::with_capacity(total_nb);
        let mut r = 0;
        for inp in inputs {
            let lo = r;
            for nb in &inp.geo.neighbors {
                aux_in
                    .row_mut(r)
                    .assign(&ndarray::ArrayView1::from(&nb.features[..]));
                dists.push(nb.distance_km);
                r += 1;
            }
            ranges.push((lo, r));
        }
        let aux_z = linear(&aux_in.view(), &p.aux);
        let mut aux_e = aux_z.mapv(|v| v.max(0.0));
        let aux_mask = drop.then(|| dropout_mask(aux_e.dim(), cfg.dropout, rng));
        if let Some(m) = &aux_mask {
            aux_e *= m;
        }
        let gamma = p.gamma();
        let weights: Vec<f64> = dists.iter().map(|dk| (-gamma * dk).exp()).collect();
        let mut fused = Array2::zeros((batch, d));
        for (b, &(lo, hi)) in ranges.iter().enumerate() {
            let mut f = fused.row_mut(b);
            for (j, w) in weights.iter().enumerate().take(hi).skip(lo) {
                f.scaled_add(*w, &aux_e.row(j));
            }
            if cfg.fusion == FusionMode::Normalized {
                let wsum: f64 = weights[lo..hi].iter().sum();
                f /= wsum;
            }
        }

        // token sequence with positions
        let mut h = Array2::zeros((batch * t, d));
        let pos = p.pos.slice(s![0..t, ..]);
        for b in 0..batch {
            let mut seq = h.slice_mut(s![b * t..(b + 1) * t, ..]);
            seq.slice_mut(s![0..np, ..])
                .assign(&pt.slice(s![b * np..(b + 1) * np, ..]));
            seq.row_mut(np).assign(&fused.row(b));
            seq += &pos;
        }

        let biases = cfg.scale_adaptive.then(|| {
            inputs
                .iter()
                .map(|inp| {
                    let mut ls: Vec<Option<f64>> = patch_log_scales(&inp.scales, cfg)
                        .into_iter()
                        .map(Some)
                        .collect();
                    ls.push(None);
                    scale_bias(&ls)
                })
                .collect::<Vec<_>>()
        });

        let sh = AttnShape {
            batch,
            tokens: t,
            heads: cfg.n_heads,
            d_model: d,
        };
        let (h, blocks) = self.trunk(h, biases.as_deref(), sh, drop, rng);

        let (out, readout, head_ln, rn, u, ur) = self.head(&h, batch)?;
        let cache = ForwardCache {
            batch,
            xp,
            aux_in,
            aux_z,
            aux_mask,
            aux_e,
            ranges,
            dists,
            weights,
            fused,
            biases,
            blocks,
            readout,
            head_ln,
            rn,
            u,
            ur,
            sh,
        };
        Ok((out, cache))
    }

    fn trunk(
        &self,
        mut h: Array2<f64>,
        biases: Option<&[Array2<f64>]>,
        sh: AttnShape,
        drop: bool,
        rng: &mut ModelRng,
    ) -> (Array2<f64>, Vec<BlockCache>) {
        let cfg = &self.config;
        let mut caches = Vec::with_capacity(cfg.n_blocks);
        for bp in &self.params.blocks {
            let (l1, ln1) = layer_norm(&h, &bp.ln1);
            let qkv = linear(&l1.view(), &bp.qkv);
            let alpha = bp.alpha.as_slice().expect("standard layout");
            let (o, attn) = attention_forward(&qkv, biases, alpha, sh);
            let mut y = linear(&o.view(), &bp.proj);
            let m1 = drop.then(|| dropout_mask(y.dim(), cfg.dropout, rng));
            if let Some(m) = &m1 {
                y *= m;
            }
            h += &y;
            let (l2, ln2) = layer_norm(&h, &bp.ln2);
            let z = linear(&l2.view(), &bp.fc1);
            let g = z.mapv(gelu);
            let mut mlp = linear(&g.view(), &bp.fc2);
            let m2 = drop.then(|| dropout_mask(mlp.dim(), cfg.dropout, rng));
            if let Some(m) = &m2 {
                mlp *= m;
            }
            h += &mlp;
            caches.push(BlockCache {
                ln1,
                l1,
                qkv,
                attn,
                o,
                m1,
                ln2,
                l2,
                z,
                g,
                m2,
            });
        }
        (h, caches)
    }

    #[allow(clippy::type_complexity)]
    fn head(
        &self,
        h: &Array2<f64>,
        batch: usize,
    ) -> Result<
        (
            Vec<f64>,
            Array2<f64>,
            LnCache,
            Array2<f64>,
            Array2<f64>,
            Array2<f64>,
        ),
        ModelError,
    > {
        let cfg = &self.config;
        let p = &self.params;
        let (t, np, d) = (cfg.n_tokens(), cfg.n_patches(), cfg.d_model);
        let mut readout = Array2::zeros((batch, 2 * d));
        for b in 0..batch {
            let seq = h.slice(s![b * t..(b + 1) * t, ..]);
            let pooled = seq
                .slice(s![0..np, ..])
                .mean_axis(Axis(0))
                .expect("non-empty");
            readout.slice_mut(s![b, 0..d]).assign(&pooled);
            readout.slice_mut(s![b, d..]).assign(&seq.row(np));
        }
        let (rn, head_ln) = layer_norm(&readout, &p.head_ln);
        let u = linear(&rn.view(), &p.head1);
        let ur = u.mapv(|v| v.max(0.0));
        let out = linear(&ur.view(), &p.head2);
        let out: Vec<f64> = out.column(0).to_vec();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteActivation("output head"));
        }
        Ok((out, readout, head_ln, rn, u, ur))
    }

    /// Gradients of `Σ_b dout[b] · out[b]` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, dout: &[f64]) -> ModelParams {
        let cfg = &self.config;
        let p = &self.params;
        let mut g = ModelParams::zeros(cfg);
        let batch = cache.batch;
        let (t, np, d) = (cfg.n_tokens(), cfg.n_patches(), cfg.d_model);

        // head
        let dout = Array2::from_shape_vec((batch, 1), dout.to_vec()).expect("batch column");
        let dur =
            linear_backward(&cache.ur.view(), &dout, &p.head2, &mut g.head2, true).expect("dx");
        let du = &dur * &cache.u.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let drn = linear_backward(&cache.rn.view(), &du, &p.head1, &mut g.head1, true).expect("dx");
        let dread = layer_norm_backward(&drn, &cache.head_ln, &p.head_ln, &mut g.head_ln);
        let _ = &cache.readout;
        let mut dh = Array2::zeros((batch * t, d));
        for b in 0..batch {
            let dpool = dread.slice(s![b, 0..d]).mapv(|v| v / np as f64);
            let mut seq = dh.slice_mut(s![b * t..(b + 1) * t, ..]);
            for i in 0..np {
                seq.row_mut(i).assign(&dpool);
            }
            seq.row_mut(np).assign(&dread.slice(s![b, d..]));
        }

        // trunk
        for (bi, bc) in cache.blocks.iter().enumerate().rev() {
            let bp = &p.blocks[bi];
            let gb = &mut g.blocks[bi];
            let mut dmlp = dh.clone();
            if let Some(m) = &bc.m2 {
                dmlp *= m;
            }
            let dg = linear_backward(&bc.g.view(), &dmlp, &bp.fc2, &mut gb.fc2, true).expect("dx");
            let dz = &dg * &bc.z.mapv(gelu_grad);
            let dl2 = linear_backward(&bc.l2.view(), &dz, &bp.fc1, &mut gb.fc1, true).expect("dx");
            dh += &layer_norm_backward(&dl2, &bc.ln2, &bp.ln2, &mut gb.ln2);

            let mut dy = dh.clone();
            if let Some(m) = &bc.m1 {
                dy *= m;
            }
            let do_ = linear_backward(&bc.o.view(), &dy, &bp.proj, &mut gb.proj, true).expect("dx");
            let dqkv = attention_backward(
                &bc.qkv,
                &bc.attn,
                &do_,
                cache.biases.as_deref(),
                gb.alpha.as_slice_mut().expect("standard layout"),
                cache.sh,
            );
            let dl1 =
                linear_backward(&bc.l1.view(), &dqkv, &bp.qkv, &mut gb.qkv, true).expect("dx");
            dh += &layer_norm_backward(&dl1, &bc.ln1, &bp.ln1, &mut gb.ln1);
        }

        // positions, patch tokens, fused token
        let mut dpt = Array2::zeros((batch * np, d));
        let mut dfused = Array2::zeros((batch, d));
        for b in 0..batch {
            let seq = dh.slice(s![b * t..(b + 1) * t, ..]);
            let mut gpos = g.pos.slice_mut(s![0..t, ..]);
            gpos += &seq;
            dpt.slice_mut(s![b * np..(b + 1) * np, ..])
                .assign(&seq.slice(s![0..np, ..]));
            dfused.row_mut(b).assign(&seq.row(np));
        }
        linear_backward(&cache.xp.view(), &dpt, &p.patch, &mut g.patch, false);

        // fusion
        let gamma = p.gamma();
        let mut de = Array2::zeros(cache.aux_e.dim());
        let mut dgamma = 0.0;
        for (b, &(lo, hi)) in cache.ranges.iter().enumerate() {
            let df = dfused.row(b);
            let w = &cache.weights[lo..hi];
            match cfg.fusion {
                FusionMode::Normalized => {
                    let wsum: f64 = w.iter().sum();
                    let f = cache.fused.row(b);
                    for j in lo..hi {
                        let wj = cache.weights[j];
                        de.row_mut(j).scaled_add(wj / wsum, &df);
                        let dw: f64 = df
                            .iter()
                            .zip(cache.aux_e.row(j).iter().zip(f.iter()))
                            .map(|(g, (e, fv))| g * (e - fv))
                            .sum::<f64>()
                            / wsum;
                        dgamma += dw * (-cache.dists[j] * wj);
                    }
                }
                FusionMode::Raw => {
                    for j in lo..hi {
                        let wj = cache.weights[j];
                        de.row_mut(j).scaled_add(wj, &df);
                        let dw: f64 = df
                            .iter()
                            .zip(cache.aux_e.row(j).iter())
                            .map(|(g, e)| g * e)
                            .sum();
                        dgamma += dw * (-cache.dists[j] * wj);
                    }
                }
            }
        }
        g.log_gamma[0] = dgamma * gamma;
        if let Some(m) = &cache.aux_mask {
            de *= m;
        }
        let dz = &de * &cache.aux_z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        linear_backward(&cache.aux_in.view(), &dz, &p.aux, &mut g.aux, false);
        g
    }

    /// Mean squared error over the batch and its gradient.
    pub fn loss_and_grad(
        &self,
        inputs: &[&ModelInput],
        targets: &[f64],
        mode: Mode,
        rng: &mut ModelRng,
    ) -> Result<(f64, ModelParams), ModelError> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(ModelError::ShapeError(
                "one target per input, at least one".into(),
            ));
        }
        let (out, cache) = self.forward_batch(inputs, mode, rng)?;
        let n = out.len() as f64;
        let resid: Vec<f64> = out.iter().zip(targets).map(|(o, y)| o - y).collect();
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
        let dout: Vec<f64> = resid.iter().map(|r| 2.0 * r / n).collect();
        Ok((loss, self.backward(&cache, &dout)))
    }

    pub fn forward(
        &self,
        input: &ModelInput,
        mode: Mode,
        rng: &mut ModelRng,
    ) -> Result<f64, ModelError> {
        Ok(self.forward_batch(&[input], mode, rng)?.0[0])
    }

    /// Eval-mode embedding stage of one sample.
    pub fn embed(&self, input: &ModelInput) -> Result<Embedded, ModelError> {
        self.check_input(input)?;
        let cfg = &self.config;
        let p = &self.params;
        let mut rng = model_rng(0);
        let pt = patch_embed(&input.spectrogram, &p.patch, cfg)?;
        let embeds = input
            .geo
            .neighbors
            .iter()
            .map(|nb| aux_embed(&nb.features, &p.aux, cfg.dropout, Mode::Eval, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let dists: Vec<f64> = input.geo.neighbors.iter().map(|n| n.distance_km).collect();
        let fused = spatial_fusion(&embeds, &dists, p.gamma(), cfg.fusion)?;
        let np = cfg.n_patches();
        let mut tokens = Array2::zeros((np + 1, cfg.d_model));
        tokens.slice_mut(s![0..np, ..]).assign(&pt);
        tokens.row_mut(np).assign(&fused);
        tokens += &p.pos.slice(s![0..np + 1, ..]);
        let mut log_scales: Vec<Option<f64>> = patch_log_scales(&input.scales, cfg)
            .into_iter()
            .map(Some)
            .collect();
        log_scales.push(None);
        Ok(Embedded { tokens, log_scales })
    }

    /// Eval-mode trunk and head on an embedded token sequence. The last token
    /// is treated as the auxiliary token; all others are pooled.
    pub fn readout_embedded(&self, emb: &Embedded) -> Result<f64, ModelError> {
        let cfg = &self.config;
        let t = emb.tokens.nrows();
        if t != cfg.n_tokens() || emb.log_scales.len() != t {
            return Err(ModelError::ShapeError("token count mismatch".into()));
        }
        let biases = cfg
            .scale_adaptive
            .then(|| vec![scale_bias(&emb.log_scales)]);
        let sh = AttnShape {
            batch: 1,
            tokens: t,
            heads: cfg.n_heads,
            d_model: cfg.d_model,
        };
        let mut rng = model_rng(0);
        let (h, _) = self.trunk(emb.tokens.clone(), biases.as_deref(), sh, false, &mut rng);
        Ok(self.head(&h, 1)?.0[0])
    }
}

/// Affine map between ppm and the standardized training target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn identity() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }

    /// Mean and population std; a constant target keeps unit scale.
    pub fn fit(targets: &[f64]) -> Self {
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let std = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            mean,
            std: if std > 0.0 && std.is_finite() {
                std
            } else {
                1.0
            },
        }
    }

    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn restore(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

/// A network together with the target scaling it was trained under.
/// Inputs and outputs are in ppm.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub net: Network,
    pub target: TargetScaler,
}

/// Samples per forward batch at inference time.
const PREDICT_CHUNK: usize = 32;

impl Regressor {
    pub fn predict(&self, input: &ModelInput) -> Result<f64, ModelError> {
        let mut rng = model_rng(0);
        Ok(self
            .target
            .restore(self.net.forward(input, Mode::Eval, &mut rng)?))
    }

    pub fn predict_batch(&self, inputs: &[&ModelInput]) -> Result<Vec<f64>, ModelError> {
        let mut rng = model_rng(0);
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(PREDICT_CHUNK) {
            let (z, _) = self.net.forward_batch(chunk, Mode::Eval, &mut rng)?;
            out.extend(z.into_iter().map(|v| self.target.restore(v)));
        }
        Ok(out)
    }

    /// Monte-Carlo dropout mean and std in ppm.
    pub fn predict_with_uncertainty(
        &self,
        input: &ModelInput,
        passes: usize,
        rng: &mut ModelRng,
    ) -> Result<(f64, f64), ModelError> {
        let (m, s) = predict_with_uncertainty(&self.net, input, passes, rng)?;
        Ok((self.target.restore(m), s * self.target.std))
    }
}

/// Monte-Carlo dropout: `passes` stochastic forward passes; sample mean and
/// sample standard deviation of the outputs.
pub fn predict_with_uncertainty(
    net: &Network,
    input: &ModelInput,
    passes: usize,
    rng: &mut ModelRng,
) -> Result<(f64, f64), ModelError> {
    if passes < 2 {
        return Err(ModelError::InvalidConfig(
            "at least two Monte-Carlo passes are required".into(),
        ));
    }
    if net.config.dropout == 0.0 {
        return Ok((net.forward(input, Mode::Eval, rng)?, 0.0));
    }
    // Passes are batched copies of the same input; each copy draws its own masks.
    let copies: Vec<&ModelInput> = std::iter::repeat_n(input, passes).collect();
    let (outs, _) = net.forward_batch(&copies, Mode::Train, rng)?;
    Ok(mean_std(&outs))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Human-readable parameter accounting, one tensor group per line.
pub fn parameter_report(net: &Network) -> String {
    let mut groups: Vec<(String, usize)> = Vec::new();
    for t in net.params.tensors() {
        let group = match t.name.split('.').next() {
            Some("blocks") => "blocks".to_string(),
            Some(other) => other.to_string(),
            None => t.name.clone(),
        };
        match groups.iter_mut().find(|(g, _)| *g == group) {
            Some((_, n)) => *n += t.data.len(),
            None => groups.push((group, t.data.len())),
        }
    }
    let total = net.n_params();
    let mut out = String::new();
    for (g, n) in &groups {
        out.push_str(&format!("{g:<8} {n:>10}\n"));
    }
    out.push_str(&format!("{:<8} {:>10}\n", "total", total));
    out.push_str(&format!(
        "reference total {} ({:.2} M); these layer shapes account for {:.2} M, ratio {:.3}\n",
        REFERENCE_PARAMETER_COUNT,
        REFERENCE_PARAMETER_COUNT as f64 / 1e6,
        total as f64 / 1e6,
        total as f64 / REFERENCE_PARAMETER_COUNT as f64
    ));
    out
}
