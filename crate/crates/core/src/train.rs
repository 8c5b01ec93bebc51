//! Deterministic training: spatially stratified split, AdamW with cosine
//! annealing, MSE on standardized targets and best-epoch checkpointing.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Stamp;
use crate::grid::CellId;
use crate::model::{
    Mode, ModelError, ModelInput, ModelParams, ModelRng, Network, Regressor, TargetScaler,
};

pub const MIN_SAMPLES: usize = 5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch in tensor {0}")]
    ShapeMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss diverged at epoch {epoch}: {detail}")]
    DivergedLoss { epoch: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Train fraction per spatial block.
    pub split: f64,
    /// Side of the stratification blocks, degrees.
    pub strat_block: f64,
    /// Cosine period in epochs; `None` uses `max_epochs`.
    pub anneal_t: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            batch: 32,
            max_epochs: 60,
            seed: 42,
            split: 0.8,
            strat_block: 5.0,
            anneal_t: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split must lie strictly between 0 and 1");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.strat_block > 0.0) {
            return bad("strat_block must be positive");
        }
        if self.max_epochs == 0 || self.anneal_t == Some(0) {
            return bad("max_epochs and anneal_t must be positive");
        }
        Ok(())
    }

    pub fn anneal_period(&self) -> usize {
        self.anneal_t.unwrap_or(self.max_epochs)
    }
}

/// Losses in ppm².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr_effective: f64,
}

/// Where a sample sits; samples sharing a cell always land in the same partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLocation {
    pub cell: CellId,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn block_key(lat: f64, lon: f64, side: f64) -> (i64, i64) {
    ((lat / side).floor() as i64, (lon / side).floor() as i64)
}

/// Partition sample indices by cell inside `strat_block`-degree blocks.
///
/// The distinct cells of each block are shuffled and the first
/// `round(split · n_cells)` go to training. Index lists come back sorted.
pub fn stratified_split(
    samples: &[SampleLocation],
    cfg: &TrainConfig,
) -> Result<Split, TrainError> {
    cfg.validate()?;
    if samples.len() < MIN_SAMPLES {
        return Err(TrainError::TooFewSamples(samples.len()));
    }
    let mut blocks: BTreeMap<(i64, i64), Vec<CellId>> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    for s in samples {
        if seen.insert(s.cell) {
            blocks
                .entry(block_key(s.lat, s.lon, cfg.strat_block))
                .or_default()
                .push(s.cell);
        }
    }
    let mut rng = ModelRng::seed_from_u64(cfg.seed);
    let mut train_cells = std::collections::BTreeSet::new();
    for cells in blocks.values_mut() {
        cells.shuffle(&mut rng);
        let n_train = (cfg.split * cells.len() as f64).round() as usize;
        train_cells.extend(cells[..n_train].iter().copied());
    }
    let (train, test) = (0..samples.len()).partition(|&i| train_cells.contains(&samples[i].cell));
    Ok(Split { train, test })
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, TrainError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TrainError::LengthMismatch(pred.len(), target.len()));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let t = cfg.anneal_period() as f64;
    cfg.lr * (1.0 + (std::f64::consts::PI * epoch as f64 / t).cos()) / 2.0
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One AdamW update on a flat tensor. `step` is the 1-based step count.
pub fn adamw_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    wd: f64,
) -> Result<(), TrainError> {
    if grad.len() != theta.len() || m.len() != theta.len() || v.len() != theta.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} parameters, {} gradients",
            theta.len(),
            grad.len()
        )));
    }
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..theta.len() {
        theta[i] -= lr * wd * theta[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        theta[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Moment buffers shaped like the network parameters.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: ModelParams,
    v: ModelParams,
    step: u64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(net: &Network, weight_decay: f64) -> Self {
        Self {
            m: ModelParams::zeros(&net.config),
            v: ModelParams::zeros(&net.config),
            step: 0,
            weight_decay,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        lr: f64,
    ) -> Result<(), TrainError> {
        self.step += 1;
        let g = grads.tensors();
        let mut p = params.tensors_mut();
        let mut m = self.m.tensors_mut();
        let mut v = self.v.tensors_mut();
        if g.len() != p.len() || m.len() != p.len() {
            return Err(TrainError::ShapeMismatch("tensor count".into()));
        }
        for i in 0..p.len() {
            if g[i].shape != p[i].shape {
                return Err(TrainError::ShapeMismatch(p[i].name.clone()));
            }
            adamw_update(
                p[i].data,
                g[i].data,
                m[i].data,
                v[i].data,
                self.step,
                lr,
                self.weight_decay,
            )?;
        }
        Ok(())
    }
}

/// Everything [`fit`] hands back besides the trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

fn epoch_rng(seed: u64, epoch: usize) -> ModelRng {
    let mut rng = ModelRng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

const EVAL_CHUNK: usize = 32;

fn eval_mse(net: &Network, inputs: &[&ModelInput], z: &[f64]) -> Result<f64, TrainError> {
    let mut rng = crate::model::model_rng(0);
    let mut pred = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_CHUNK) {
        pred.extend(net.forward_batch(chunk, Mode::Eval, &mut rng)?.0);
    }
    mse_loss(&pred, z)
}

fn diverged(epoch: usize, e: impl std::fmt::Display) -> TrainError {
    TrainError::DivergedLoss {
        epoch,
        detail: e.to_string(),
    }
}

/// Train `net` and return the best epoch's parameters with the loss curve.
///
/// The kept epoch minimizes validation loss, or training loss when no
/// validation set is given. Targets are standardized with training statistics
/// and the returned [`Regressor`] undoes that at prediction time.
pub fn fit(
    net: Network,
    train: (&[ModelInput], &[f64]),
    val: Option<(&[ModelInput], &[f64])>,
    cfg: &TrainConfig,
) -> Result<(Regressor, FitReport), TrainError> {
    fit_with_callback(net, train, val, cfg, |_| {})
}

/// [`fit`] with a hook called after every epoch.
pub fn fit_with_callback(
    mut net: Network,
    train: (&[ModelInput], &[f64]),
    val: Option<(&[ModelInput], &[f64])>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Regressor, FitReport), TrainError> {
    cfg.validate()?;
    let (xs, ys) = train;
    if xs.len() != ys.len() {
        return Err(TrainError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(TrainError::TooFewSamples(0));
    }
    if let Some((vx, vy)) = val {
        if vx.len() != vy.len() {
            return Err(TrainError::LengthMismatch(vx.len(), vy.len()));
        }
    }
    let val = val.filter(|(vx, _)| !vx.is_empty());
    let scaler = TargetScaler::fit(ys);
    let var = scaler.std * scaler.std;
    let zs: Vec<f64> = ys.iter().map(|y| scaler.standardize(*y)).collect();
    let train_refs: Vec<&ModelInput> = xs.iter().collect();
    let val_refs: Option<(Vec<&ModelInput>, Vec<f64>)> = val.map(|(vx, vy)| {
        (
            vx.iter().collect(),
            vy.iter().map(|y| scaler.standardize(*y)).collect(),
        )
    });

    let mut opt = AdamW::new(&net, cfg.weight_decay);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 0..cfg.max_epochs {
        let lr = cosine_lr(epoch, cfg);
        let mut rng = epoch_rng(cfg.seed, epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&ModelInput> = chunk.iter().map(|&i| &xs[i]).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| zs[i]).collect();
            let (loss, grads) = net
                .loss_and_grad(&batch, &targets, Mode::Train, &mut rng)
                .map_err(|e| diverged(epoch, e))?;
            if !loss.is_finite() {
                return Err(diverged(epoch, "non-finite batch loss"));
            }
            opt.step(&mut net.params, &grads, lr)?;
        }
        if !net.params.all_finite() {
            return Err(diverged(epoch, "non-finite parameters"));
        }
        let train_loss = eval_mse(&net, &train_refs, &zs).map_err(|e| diverged(epoch, e))? * var;
        let val_loss = match &val_refs {
            Some((vx, vz)) => Some(eval_mse(&net, vx, vz).map_err(|e| diverged(epoch, e))? * var),
            None => None,
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(diverged(epoch, "non-finite epoch loss"));
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr_effective: lr,
        };
        on_epoch(&rec);
        history.push(rec);
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, net.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    net.params = params;
    Ok((
        Regressor {
            net,
            target: scaler,
        },
        FitReport {
            history,
            best_epoch,
        },
    ))
}

/// `epoch,train_ppm2,val_ppm2,lr`; an empty validation field means no validation set.
pub fn write_losses_csv<W: Write>(
    mut w: W,
    history: &[EpochRecord],
    stamp: &Stamp,
) -> std::io::Result<()> {
    writeln!(w, "{}", stamp.comment())?;
    writeln!(w, "epoch,train_ppm2,val_ppm2,lr")?;
    for r in history {
        let val = r.val_loss.map(|v| format!("{v:.9e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{:.9e},{},{:.9e}",
            r.epoch, r.train_loss, val, r.lr_effective
        )?;
    }
    Ok(())
}

/// One JSON object per epoch. The wall-clock field is the only
/// non-reproducible content among the training artifacts.
pub fn write_training_log<W: Write>(
    mut w: W,
    history: &[EpochRecord],
    stamp: &Stamp,
) -> Result<(), TrainError> {
    let now = chrono::Utc::now().to_rfc3339();
    for r in history {
        let line = serde_json::json!({
            "config_hash": stamp.config_hash,
            "seed": stamp.seed,
            "written_at": now,
            "epoch": r.epoch,
            "train_ppm2": r.train_loss,
            "val_ppm2": r.val_loss,
            "lr": r.lr_effective,
        });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let cfg = TrainConfig {
            max_epochs: 60,
            ..Default::default()
        };
        assert_eq!(cosine_lr(0, &cfg), 1e-4);
        assert!((cosine_lr(30, &cfg) - 5e-5).abs() < 1e-18);
        assert!((1..60).all(|e| cosine_lr(e, &cfg) <= cosine_lr(e - 1, &cfg)));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(
            mse_loss(&[1.0], &[1.0, 2.0]),
            Err(TrainError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn adam_zero_gradient_no_decay_is_noop() {
        let mut th = vec![0.5, -2.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        for s in 1..10 {
            adamw_update(&mut th, &[0.0, 0.0], &mut m, &mut v, s, 1e-3, 0.0).unwrap();
        }
        assert_eq!(th, vec![0.5, -2.0]);
        assert!(matches!(
            adamw_update(&mut th, &[0.0], &mut m, &mut v, 1, 1e-3, 0.0),
            Err(TrainError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn split_ten_in_one_block() {
        let samples: Vec<SampleLocation> = (0..10)
            .map(|i| SampleLocation {
                cell: CellId { row: i, col: 0 },
                lat: 51.0,
                lon: -99.0,
            })
            .collect();
        let s = stratified_split(&samples, &TrainConfig::default()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert_eq!(
            s,
            stratified_split(&samples, &TrainConfig::default()).unwrap()
        );
        assert!(matches!(
            stratified_split(&samples[..4], &TrainConfig::default()),
            Err(TrainError::TooFewSamples(4))
        ));
    }
}
