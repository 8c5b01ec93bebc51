//! Stage orchestration: aggregate, features, spectrograms, train, reconstruct, validate.
//!
//! Every stage is a plain function over in-memory data so the command-line
//! subcommands can run any prefix of the chain. [`run_pipeline`] runs them all
//! and writes the artifact directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::Stamp;
use crate::baseline::{baseline_idw, ObservedPoint, DEFAULT_IDW_POWER};
use crate::eval::{
    multi_radius_validate, regression_metrics, residual_stats, seasonal_cycle_fidelity,
    truth_comparison, HoldoutSection, RadiusPreset, RadiusValidation, SeasonalFidelity,
    StationSeries, TruthComparison, ValidationReport,
};
use crate::features::{
    build_feature_vector, EnvTable, FeatureError, FeatureInfo, FeatureScaler, FeatureVector,
    REGISTRY,
};
use crate::field::{write_field_csv, FieldRecord, Provenance};
use crate::geo::{degrees_to_km, great_circle_km};
use crate::grid::{
    aggregate, read_soundings_csv, write_cells_csv, write_soundings_csv, CellId, GridCellSeries,
    GridSpec,
};
use crate::model::{
    model_rng, parameter_report, Checkpoint, GeoContext, ModelConfig, ModelError, ModelInput,
    Neighbor, Network, Regressor,
};
use crate::plot::{histogram_svg, line_svg, scatter_svg};
use crate::synth::{synth_generate, write_station_daily_csv, SyntheticScenario, TruthField};
use crate::train::{
    fit, stratified_split, write_losses_csv, write_training_log, FitReport, SampleLocation, Split,
    TrainConfig, TrainError,
};
use crate::wavelet::{default_scales, monthly_spectrogram, MorletBank, Spectrogram};

/// Environment variable the command line reads as the output directory.
pub const OUTPUT_DIR_ENV: &str = "XCO2_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Synth,
    Load,
    Aggregate,
    Features,
    Spectrogram,
    Train,
    Reconstruct,
    Validate,
    Poultry,
    Write,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Synth => "synth",
            Stage::Load => "load",
            Stage::Aggregate => "aggregate",
            Stage::Features => "features",
            Stage::Spectrogram => "spectrogram",
            Stage::Train => "train",
            Stage::Reconstruct => "reconstruct",
            Stage::Validate => "validate",
            Stage::Poultry => "poultry",
            Stage::Write => "write",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Failure class; decides the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Divergence,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Divergence => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("stage {stage} failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, kind: ErrorKind, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    pub fn config(stage: Stage, message: impl fmt::Display) -> Self {
        Self::new(stage, ErrorKind::Config, message)
    }

    pub fn data(stage: Stage, message: impl fmt::Display) -> Self {
        Self::new(stage, ErrorKind::Data, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

fn train_error(e: TrainError) -> PipelineError {
    let kind = match &e {
        TrainError::InvalidConfig(_) | TrainError::Model(ModelError::InvalidConfig(_)) => {
            ErrorKind::Config
        }
        TrainError::DivergedLoss { .. } | TrainError::Model(ModelError::NonFiniteActivation(_)) => {
            ErrorKind::Divergence
        }
        _ => ErrorKind::Data,
    };
    PipelineError::new(Stage::Train, kind, e)
}

fn model_error(stage: Stage, e: ModelError) -> PipelineError {
    let kind = match &e {
        ModelError::InvalidConfig(_) => ErrorKind::Config,
        ModelError::NonFiniteActivation(_) => ErrorKind::Divergence,
        _ => ErrorKind::Data,
    };
    PipelineError::new(stage, kind, e)
}

/// Files to read instead of generating a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    pub soundings: PathBuf,
    pub env: PathBuf,
    #[serde(default)]
    pub station: Option<StationInput>,
    /// Known reference field, enabling truth comparisons.
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationInput {
    pub path: PathBuf,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub grid: GridSpec,
    /// Registry to check the feature layout against; written fresh when absent.
    pub feature_registry: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub radii: RadiusPreset,
    /// Used when `inputs` is absent. Its grid is replaced by `grid`.
    pub scenario: SyntheticScenario,
    pub inputs: Option<InputPaths>,
    pub output_dir: PathBuf,
    /// Overrides the seed of every stage.
    pub seed: u64,
    pub mc_passes: usize,
    /// Fusion neighbours per sample besides the cell itself.
    pub neighbors: usize,
    pub idw_power: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            feature_registry: None,
            model: ModelConfig::desk(),
            train: TrainConfig {
                lr: 1e-3,
                max_epochs: 40,
                ..TrainConfig::default()
            },
            radii: RadiusPreset::default(),
            scenario: SyntheticScenario::default(),
            inputs: None,
            output_dir: PathBuf::from("out"),
            seed: 42,
            mc_passes: 32,
            neighbors: 4,
            idw_power: DEFAULT_IDW_POWER,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text)
            .map_err(|e| PipelineError::config(Stage::Config, format!("config json: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| {
            PipelineError::config(Stage::Config, format!("{}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    /// Copy with the seed pushed into every stage and the grid shared with the scenario.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.train.seed = c.seed;
        c.scenario.grid = c.grid;
        c
    }

    /// Checks values and that every referenced path exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::config(Stage::Config, m));
        self.grid
            .validate()
            .map_err(|e| PipelineError::config(Stage::Config, e))?;
        self.model
            .validate()
            .map_err(|e| PipelineError::config(Stage::Config, e))?;
        self.train
            .validate()
            .map_err(|e| PipelineError::config(Stage::Config, e))?;
        self.scenario
            .validate()
            .map_err(|e| PipelineError::config(Stage::Config, e))?;
        if self.model.aux_dim != REGISTRY.len() {
            return bad(format!(
                "model aux_dim {} does not match {} features",
                self.model.aux_dim,
                REGISTRY.len()
            ));
        }
        if self.mc_passes < 2 {
            return bad("mc_passes must be at least 2".into());
        }
        if !(self.idw_power > 0.0) {
            return bad("idw_power must be positive".into());
        }
        let mut paths: Vec<&Path> = Vec::new();
        if let Some(p) = &self.feature_registry {
            paths.push(p);
        }
        if let Some(inp) = &self.inputs {
            paths.push(&inp.soundings);
            paths.push(&inp.env);
            if let Some(s) = &inp.station {
                paths.push(&s.path);
            }
            if let Some(t) = &inp.truth {
                paths.push(t);
            }
        }
        for p in paths {
            if !p.exists() {
                return bad(format!("referenced path {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Hash over everything that affects results; the output directory is excluded.
    pub fn stamp(&self) -> Stamp {
        let mut c = self.effective();
        c.output_dir = PathBuf::new();
        Stamp::of(&c, c.seed)
    }
}

/// Registry file layout: the stamp plus the ordered feature list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryFile {
    pub config_hash: String,
    pub seed: u64,
    pub features: Vec<RegistryEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub index: usize,
    pub name: String,
}

impl From<&FeatureInfo> for RegistryEntry {
    fn from(f: &FeatureInfo) -> Self {
        Self {
            index: f.index,
            name: f.name.to_string(),
        }
    }
}

/// Accepts either a bare feature list or a [`RegistryFile`]; the order must match the built-in one.
pub fn check_registry(text: &str) -> Result<(), PipelineError> {
    let entries: Vec<RegistryEntry> = match serde_json::from_str::<RegistryFile>(text) {
        Ok(f) => f.features,
        Err(_) => serde_json::from_str(text).map_err(|e| {
            PipelineError::config(Stage::Features, format!("feature registry: {e}"))
        })?,
    };
    let expected: Vec<RegistryEntry> = REGISTRY.iter().map(RegistryEntry::from).collect();
    if entries != expected {
        return Err(PipelineError::config(
            Stage::Features,
            "feature registry does not match the built-in feature order",
        ));
    }
    Ok(())
}

/// One cell-month.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub cell: CellId,
    pub month: u32,
    /// Observed monthly mean, if any sounding fell in that cell-month.
    pub target: Option<f64>,
}

/// Everything the model consumes, for every cell of the grid.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub grid: GridSpec,
    pub cells: BTreeMap<CellId, GridCellSeries>,
    /// Unscaled predictors per (cell, month).
    pub features: BTreeMap<(CellId, u32), FeatureVector>,
    pub spectrograms: BTreeMap<CellId, Spectrogram>,
    /// Nearest other cells with great-circle distance in km, closest first.
    pub neighbors: BTreeMap<CellId, Vec<(CellId, f64)>>,
}

pub fn aggregate_stage(
    soundings: &[crate::grid::SoundingRecord],
    grid: &GridSpec,
) -> Result<BTreeMap<CellId, GridCellSeries>, PipelineError> {
    let cells = aggregate(soundings, grid).map_err(|e| PipelineError::data(Stage::Aggregate, e))?;
    if cells.is_empty() {
        return Err(PipelineError::data(
            Stage::Aggregate,
            "no soundings fell inside the grid",
        ));
    }
    Ok(cells)
}

/// Predictors for every cell-month of the grid; any missing row is an error.
pub fn features_stage(
    grid: &GridSpec,
    env: &EnvTable,
) -> Result<BTreeMap<(CellId, u32), FeatureVector>, PipelineError> {
    let centroid = grid.midpoint();
    let mut out = BTreeMap::new();
    for cell in grid.cells() {
        for month in 1..=12u32 {
            let row = env.get(&(cell, month)).ok_or_else(|| {
                PipelineError::data(
                    Stage::Features,
                    FeatureError::MissingEnvironment {
                        row: cell.row,
                        col: cell.col,
                        month,
                        missing: "row".into(),
                    },
                )
            })?;
            let v = build_feature_vector(cell, month, row, grid, centroid)
                .map_err(|e| PipelineError::data(Stage::Features, e))?;
            out.insert((cell, month), v);
        }
    }
    Ok(out)
}

/// One spectrogram per grid cell. A never-observed cell falls back to the
/// climatology around the mean of all observed cells.
pub fn spectrogram_stage(
    grid: &GridSpec,
    cells: &BTreeMap<CellId, GridCellSeries>,
) -> Result<BTreeMap<CellId, Spectrogram>, PipelineError> {
    let err = |e: crate::wavelet::WaveletError| PipelineError::data(Stage::Spectrogram, e);
    let bank = MorletBank::new(&default_scales()).map_err(err)?;
    let global = cells.values().map(|c| c.mean).sum::<f64>() / cells.len().max(1) as f64;
    let mut out = BTreeMap::new();
    for cell in grid.cells() {
        let spec = match cells.get(&cell) {
            Some(s) => monthly_spectrogram(&s.monthly, Some(s.mean), &bank),
            None => monthly_spectrogram(&[None; 12], Some(global), &bank),
        }
        .map_err(err)?;
        out.insert(cell, spec);
    }
    Ok(out)
}

/// `k` nearest other cells by centre distance; ties go to the lower cell id.
pub fn nearest_cells(grid: &GridSpec, k: usize) -> BTreeMap<CellId, Vec<(CellId, f64)>> {
    let all: Vec<(CellId, (f64, f64))> = grid.cells().map(|c| (c, grid.cell_center(c))).collect();
    all.iter()
        .map(|&(c, (lat, lon))| {
            let mut d: Vec<(CellId, f64)> = all
                .iter()
                .filter(|(o, _)| *o != c)
                .map(|&(o, (la, lo))| (o, great_circle_km(lat, lon, la, lo)))
                .collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(k);
            (c, d)
        })
        .collect()
}

impl Dataset {
    pub fn build(
        grid: GridSpec,
        cells: BTreeMap<CellId, GridCellSeries>,
        env: &EnvTable,
        neighbors: usize,
    ) -> Result<Self, PipelineError> {
        let features = features_stage(&grid, env)?;
        let spectrograms = spectrogram_stage(&grid, &cells)?;
        Ok(Self {
            neighbors: nearest_cells(&grid, neighbors),
            grid,
            cells,
            features,
            spectrograms,
        })
    }

    /// Every cell-month of the grid in cell, then month order.
    pub fn samples(&self) -> Vec<Sample> {
        self.grid
            .cells()
            .flat_map(|cell| {
                (1..=12u32).map(move |month| Sample {
                    cell,
                    month,
                    target: self
                        .cells
                        .get(&cell)
                        .and_then(|s| s.monthly[month as usize - 1]),
                })
            })
            .collect()
    }

    pub fn observed(&self) -> Vec<Sample> {
        self.samples()
            .into_iter()
            .filter(|s| s.target.is_some())
            .collect()
    }

    fn scaled(&self, scaler: &FeatureScaler, cell: CellId, month: u32) -> Vec<f64> {
        scaler
            .transform(&self.features[&(cell, month)])
            .values
            .to_vec()
    }

    pub fn input(&self, scaler: &FeatureScaler, cell: CellId, month: u32) -> ModelInput {
        let (lat, lon) = self.grid.cell_center(cell);
        let others = self.neighbors[&cell]
            .iter()
            .map(|&(c, d)| Neighbor {
                cell: c,
                distance_km: d,
                features: self.scaled(scaler, c, month),
            })
            .collect();
        let spec = &self.spectrograms[&cell];
        ModelInput {
            spectrogram: spec.intensity.clone(),
            scales: spec.scales.clone(),
            geo: GeoContext::new(
                lat,
                lon,
                month,
                cell,
                self.scaled(scaler, cell, month),
                others,
            ),
        }
    }
}

/// Trained model together with the feature scaling it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint: Checkpoint,
    pub feature_scaler: FeatureScaler,
}

impl ModelBundle {
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string(self).map_err(|e| PipelineError::data(Stage::Write, e))?;
        fs::write(path, text)
            .map_err(|e| PipelineError::data(Stage::Write, format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::config(Stage::Load, format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::data(Stage::Load, format!("model bundle: {e}")))
    }

    pub fn regressor(&self) -> Result<Regressor, PipelineError> {
        self.checkpoint
            .clone()
            .into_regressor()
            .map_err(|e| model_error(Stage::Load, e))
    }
}

pub struct Trained {
    pub model: Regressor,
    pub scaler: FeatureScaler,
    pub report: FitReport,
    /// Observed samples; `split` indexes into this list.
    pub samples: Vec<Sample>,
    pub split: Split,
}

impl Trained {
    pub fn bundle(&self, stamp: &Stamp) -> Result<ModelBundle, PipelineError> {
        Ok(ModelBundle {
            config_hash: stamp.config_hash.clone(),
            seed: stamp.seed,
            checkpoint: Checkpoint::from_regressor(&self.model)
                .map_err(|e| model_error(Stage::Write, e))?,
            feature_scaler: self.scaler.clone(),
        })
    }
}

/// Split observed cell-months by cell, scale features on the training side and fit.
/// The test side doubles as the validation set for checkpoint selection.
pub fn train_stage(
    ds: &Dataset,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<Trained, PipelineError> {
    let samples = ds.observed();
    let locs: Vec<SampleLocation> = samples
        .iter()
        .map(|s| {
            let (lat, lon) = ds.grid.cell_center(s.cell);
            SampleLocation {
                cell: s.cell,
                lat,
                lon,
            }
        })
        .collect();
    let split = stratified_split(&locs, train).map_err(train_error)?;
    let train_rows: Vec<FeatureVector> = split
        .train
        .iter()
        .map(|&i| ds.features[&(samples[i].cell, samples[i].month)])
        .collect();
    let scaler =
        FeatureScaler::fit(&train_rows).map_err(|e| PipelineError::data(Stage::Train, e))?;
    let build = |idx: &[usize]| -> (Vec<ModelInput>, Vec<f64>) {
        idx.iter()
            .map(|&i| {
                (
                    ds.input(&scaler, samples[i].cell, samples[i].month),
                    samples[i].target.unwrap_or_default(),
                )
            })
            .unzip()
    };
    let (tx, ty) = build(&split.train);
    let (vx, vy) = build(&split.test);
    let net = Network::new(model.clone(), train.seed).map_err(|e| model_error(Stage::Train, e))?;
    let (model, report) = fit(net, (&tx, &ty), Some((&vx, &vy)), train).map_err(train_error)?;
    Ok(Trained {
        model,
        scaler,
        report,
        samples,
        split,
    })
}

/// Observed cell-months pass through untouched; every gap gets the Monte-Carlo
/// dropout mean and spread. Covers the whole grid.
pub fn reconstruct(
    model: &Regressor,
    scaler: &FeatureScaler,
    ds: &Dataset,
    passes: usize,
    seed: u64,
) -> Result<Vec<FieldRecord>, PipelineError> {
    let mut rng = model_rng(seed);
    rng.set_stream(u64::from(u32::MAX));
    let mut out = Vec::with_capacity(ds.grid.n_cells() * 12);
    for s in ds.samples() {
        if !ds.features.contains_key(&(s.cell, s.month)) {
            return Err(PipelineError::data(
                Stage::Reconstruct,
                format!(
                    "missing features for cell ({}, {}) month {}",
                    s.cell.row, s.cell.col, s.month
                ),
            ));
        }
        let (lat, lon) = ds.grid.cell_center(s.cell);
        let (xco2, uncertainty, provenance) = match s.target {
            Some(v) => {
                let c = &ds.cells[&s.cell];
                let n = c.monthly_count[s.month as usize - 1].max(1) as f64;
                (v, c.sigma_mean / n.sqrt(), Provenance::Observed)
            }
            None => {
                let input = ds.input(scaler, s.cell, s.month);
                let (m, sd) = model
                    .predict_with_uncertainty(&input, passes, &mut rng)
                    .map_err(|e| model_error(Stage::Reconstruct, e))?;
                (m, sd, Provenance::Reconstructed)
            }
        };
        out.push(FieldRecord {
            row: s.cell.row,
            col: s.cell.col,
            lat,
            lon,
            month: s.month,
            xco2,
            uncertainty,
            provenance,
        });
    }
    Ok(out)
}

/// IDW estimate for every reconstructed record, in field order, anchored on
/// the same-month observed records of the field.
pub fn idw_for_gaps(field: &[FieldRecord], power: f64) -> Result<Vec<f64>, PipelineError> {
    let mut anchors: BTreeMap<u32, Vec<ObservedPoint>> = BTreeMap::new();
    for r in field
        .iter()
        .filter(|r| r.provenance == Provenance::Observed)
    {
        anchors.entry(r.month).or_default().push(ObservedPoint {
            lat: r.lat,
            lon: r.lon,
            value: r.xco2,
        });
    }
    field
        .iter()
        .filter(|r| r.provenance == Provenance::Reconstructed)
        .map(|r| {
            let pts = anchors.get(&r.month).map(Vec::as_slice).unwrap_or(&[]);
            baseline_idw(pts, r.lat, r.lon, power)
                .map_err(|e| PipelineError::data(Stage::Validate, e))
        })
        .collect()
}

/// Monthly mean of the field within `radius_deg` of a point.
pub fn regional_monthly(
    field: &[FieldRecord],
    lat: f64,
    lon: f64,
    radius_deg: f64,
) -> [Option<f64>; 12] {
    let limit = degrees_to_km(radius_deg);
    let mut acc = [(0.0, 0usize); 12];
    for r in field
        .iter()
        .filter(|r| great_circle_km(lat, lon, r.lat, r.lon) <= limit)
    {
        let a = &mut acc[r.month as usize - 1];
        a.0 += r.xco2;
        a.1 += 1;
    }
    acc.map(|(s, n)| (n > 0).then(|| s / n as f64))
}

pub fn holdout_section(pred: &[f64], obs: &[f64]) -> Result<HoldoutSection, PipelineError> {
    let err = |e| PipelineError::data(Stage::Validate, e);
    let metrics = regression_metrics(pred, obs).map_err(err)?;
    let res: Vec<f64> = pred.iter().zip(obs).map(|(p, o)| p - o).collect();
    let residuals = residual_stats(&res).map_err(err)?;
    Ok(HoldoutSection {
        metrics,
        residuals,
        reliability_index: None,
    })
}

/// Radius table and seasonal fidelity; the cycle uses the middle radius of the preset.
pub fn station_sections(
    field: &[FieldRecord],
    station: &StationSeries,
    radii: &[f64],
) -> Result<(Vec<RadiusValidation>, SeasonalFidelity), PipelineError> {
    let err = |e| PipelineError::data(Stage::Validate, e);
    let rows = multi_radius_validate(field, station, radii).map_err(err)?;
    let mid = radii[radii.len() / 2];
    let recon = regional_monthly(field, station.lat, station.lon, mid);
    let seasonal = seasonal_cycle_fidelity(&recon, &station.monthly).map_err(err)?;
    Ok((rows, seasonal))
}

/// Model and IDW against the known field on every reconstructed cell-month.
pub fn truth_sections(
    field: &[FieldRecord],
    truth: &TruthField,
    power: f64,
) -> Result<Vec<TruthComparison>, PipelineError> {
    let gaps: Vec<&FieldRecord> = field
        .iter()
        .filter(|r| r.provenance == Provenance::Reconstructed)
        .collect();
    if gaps.is_empty() {
        return Ok(Vec::new());
    }
    let mut t = Vec::with_capacity(gaps.len());
    for r in &gaps {
        t.push(truth.get(r.cell(), r.month).ok_or_else(|| {
            PipelineError::data(
                Stage::Validate,
                format!("truth lacks cell ({}, {})", r.row, r.col),
            )
        })?);
    }
    let model: Vec<f64> = gaps.iter().map(|r| r.xco2).collect();
    let idw = idw_for_gaps(field, power)?;
    let err = |e| PipelineError::data(Stage::Validate, e);
    Ok(vec![
        truth_comparison("model", &model, &t).map_err(err)?,
        truth_comparison("idw", &idw, &t).map_err(err)?,
    ])
}

/// What a run produced, beyond the files themselves.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub stamp: Stamp,
    pub output_dir: PathBuf,
    pub report: ValidationReport,
    pub fit: FitReport,
    pub field: Vec<FieldRecord>,
    pub artifacts: Vec<PathBuf>,
}

impl PipelineOutcome {
    pub fn truth(&self, method: &str) -> Option<&TruthComparison> {
        self.report
            .truth_comparison
            .iter()
            .find(|t| t.method == method)
    }
}

/// Input data for a run, generated or read from disk.
pub struct RunInputs {
    pub soundings: Vec<crate::grid::SoundingRecord>,
    pub env: EnvTable,
    pub station: Option<StationSeries>,
    pub truth: Option<TruthField>,
    pub synthetic: Option<crate::synth::SyntheticData>,
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<RunInputs, PipelineError> {
    let Some(inp) = &cfg.inputs else {
        let data = synth_generate(&cfg.scenario, cfg.seed)
            .map_err(|e| PipelineError::config(Stage::Synth, e))?;
        return Ok(RunInputs {
            soundings: data.soundings.clone(),
            env: data.env.clone(),
            station: Some(data.station.clone()),
            truth: Some(data.truth.clone()),
            synthetic: Some(data),
        });
    };
    let open = |p: &Path| {
        fs::File::open(p)
            .map_err(|e| PipelineError::config(Stage::Load, format!("{}: {e}", p.display())))
    };
    let soundings = read_soundings_csv(open(&inp.soundings)?).map_err(|e| {
        PipelineError::data(
            Stage::Aggregate,
            format!("{}: {e}", inp.soundings.display()),
        )
    })?;
    let env = crate::features::read_env_csv(open(&inp.env)?)
        .map_err(|e| PipelineError::data(Stage::Features, format!("{}: {e}", inp.env.display())))?;
    let station = match &inp.station {
        Some(s) => Some(
            StationSeries::read_csv(&s.name, s.lat, s.lon, open(&s.path)?).map_err(|e| {
                PipelineError::data(Stage::Validate, format!("{}: {e}", s.path.display()))
            })?,
        ),
        None => None,
    };
    let truth =
        match &inp.truth {
            Some(p) => Some(TruthField::read_csv(open(p)?).map_err(|e| {
                PipelineError::data(Stage::Validate, format!("{}: {e}", p.display()))
            })?),
            None => None,
        };
    Ok(RunInputs {
        soundings,
        env,
        station,
        truth,
        synthetic: None,
    })
}

/// Collects artifact paths while writing them.
pub struct ArtifactWriter {
    dir: PathBuf,
    stamp: Stamp,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, stamp: Stamp) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir)
            .map_err(|e| PipelineError::config(Stage::Write, format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            stamp,
            written: Vec::new(),
        })
    }

    pub fn stamp(&self) -> &Stamp {
        &self.stamp
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Render into memory, then write the file in one go.
    pub fn write<E: fmt::Display>(
        &mut self,
        name: &str,
        render: impl FnOnce(&mut Vec<u8>, &Stamp) -> Result<(), E>,
    ) -> Result<PathBuf, PipelineError> {
        let mut buf = Vec::new();
        render(&mut buf, &self.stamp)
            .map_err(|e| PipelineError::data(Stage::Write, format!("{name}: {e}")))?;
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| PipelineError::data(Stage::Write, e))?;
        }
        fs::write(&path, buf)
            .map_err(|e| PipelineError::data(Stage::Write, format!("{}: {e}", path.display())))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<PathBuf, PipelineError> {
        self.write(name, |w, _| w.write_all(body.as_bytes()))
    }

    pub fn into_written(self) -> Vec<PathBuf> {
        self.written
    }
}

/// Stamp comment line followed by whatever `body` renders.
fn stamped<E: fmt::Display>(
    w: &mut Vec<u8>,
    stamp: &Stamp,
    body: impl FnOnce(&mut Vec<u8>) -> Result<(), E>,
) -> Result<(), String> {
    writeln!(w, "{}", stamp.comment()).map_err(|e| e.to_string())?;
    body(w).map_err(|e| e.to_string())
}

/// P2 image with the stamp as a header comment.
fn stamped_pgm(w: &mut Vec<u8>, stamp: &Stamp, s: &Spectrogram) -> Result<(), String> {
    let mut raw = Vec::new();
    s.write_pgm(&mut raw).map_err(|e| e.to_string())?;
    let body = String::from_utf8(raw).map_err(|e| e.to_string())?;
    let rest = body.strip_prefix("P2\n").unwrap_or(&body);
    write!(w, "P2\n{}\n{rest}", stamp.comment()).map_err(|e| e.to_string())
}

pub fn write_features_csv(
    w: &mut Vec<u8>,
    stamp: &Stamp,
    features: &BTreeMap<(CellId, u32), FeatureVector>,
) -> Result<(), String> {
    stamped(w, stamp, |w| -> Result<(), csv::Error> {
        let mut cw = csv::Writer::from_writer(w);
        let mut header = vec!["row".to_string(), "col".into(), "month".into()];
        header.extend(FeatureVector::names().iter().map(|n| n.to_string()));
        cw.write_record(&header)?;
        for ((c, m), v) in features {
            let mut rec = vec![c.row.to_string(), c.col.to_string(), m.to_string()];
            rec.extend(v.values.iter().map(|x| format!("{x:.8}")));
            cw.write_record(&rec)?;
        }
        cw.flush()?;
        Ok(())
    })
}

pub fn registry_file(stamp: &Stamp) -> String {
    let f = RegistryFile {
        config_hash: stamp.config_hash.clone(),
        seed: stamp.seed,
        features: REGISTRY.iter().map(RegistryEntry::from).collect(),
    };
    serde_json::to_string_pretty(&f).expect("registry serializes") + "\n"
}

/// Loss curve, scatter, residual histogram and monthly cycle.
pub fn write_plots(
    out: &mut ArtifactWriter,
    fit: &FitReport,
    holdout: Option<(&[f64], &[f64])>,
    field: &[FieldRecord],
    station: Option<&StationSeries>,
    radius_deg: f64,
) -> Result<(), PipelineError> {
    let epochs: Vec<f64> = fit.history.iter().map(|r| r.epoch as f64).collect();
    let train: Vec<Option<f64>> = fit.history.iter().map(|r| Some(r.train_loss)).collect();
    let val: Vec<Option<f64>> = fit.history.iter().map(|r| r.val_loss).collect();
    out.write("loss_curve.svg", |w, s| {
        w.write_all(
            line_svg(
                &epochs,
                &[("train", train), ("validation", val)],
                "Loss",
                "epoch",
                "MSE (ppm^2)",
                s,
            )
            .as_bytes(),
        )
    })?;
    if let Some((pred, obs)) = holdout {
        let res: Vec<f64> = pred.iter().zip(obs).map(|(p, o)| p - o).collect();
        out.write("scatter.svg", |w, s| {
            w.write_all(scatter_svg(obs, pred, "Hold-out predictions", s).as_bytes())
        })?;
        out.write("residual_hist.svg", |w, s| {
            w.write_all(histogram_svg(&res, 30, "Hold-out residuals", s).as_bytes())
        })?;
    }
    let months: Vec<f64> = (1..=12).map(f64::from).collect();
    let (lat, lon, label) = match station {
        Some(st) => (st.lat, st.lon, st.name.clone()),
        None => {
            let (la, lo) = field.first().map(|r| (r.lat, r.lon)).unwrap_or_default();
            (la, lo, "none".into())
        }
    };
    let mut series = vec![(
        "reconstructed",
        regional_monthly(field, lat, lon, radius_deg).to_vec(),
    )];
    if let Some(st) = station {
        series.push(("station", st.monthly.to_vec()));
    }
    let title = format!("Monthly cycle within {radius_deg} deg of {label}");
    out.write("monthly_cycle.svg", |w, s| {
        w.write_all(line_svg(&months, &series, &title, "month", "XCO2 (ppm)", s).as_bytes())
    })?;
    Ok(())
}

/// Run every stage and write the artifact directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    let cfg = config.effective();
    cfg.validate()?;
    if let Some(p) = &cfg.feature_registry {
        let text = fs::read_to_string(p)
            .map_err(|e| PipelineError::config(Stage::Features, format!("{}: {e}", p.display())))?;
        check_registry(&text)?;
    }
    let stamp = cfg.stamp();
    let mut out = ArtifactWriter::new(&cfg.output_dir, stamp.clone())?;
    out.text(
        "config.json",
        &(serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n"),
    )?;

    let inputs = load_inputs(&cfg)?;
    if let Some(data) = &inputs.synthetic {
        out.write("soundings.csv", |w, s| {
            stamped(w, s, |w| write_soundings_csv(w, &data.soundings))
        })?;
        out.write("env.csv", |w, s| {
            stamped(w, s, |w| crate::features::write_env_csv(w, &data.env))
        })?;
        out.write("truth.csv", |w, s| data.truth.write_csv(w, s))?;
        out.write("station.csv", |w, s| data.station.write_csv(w, s))?;
        out.write("station_daily.csv", |w, s| {
            write_station_daily_csv(w, &data.station_daily, s)
        })?;
    }

    let cells = aggregate_stage(&inputs.soundings, &cfg.grid)?;
    out.write("cells.csv", |w, s| {
        stamped(w, s, |w| write_cells_csv(w, &cells, &cfg.grid))
    })?;

    let ds = Dataset::build(cfg.grid, cells, &inputs.env, cfg.neighbors)?;
    let registry = registry_file(&stamp);
    out.text("feature_registry.json", &registry)?;
    out.write("features.csv", |w, s| {
        write_features_csv(w, s, &ds.features)
    })?;
    for (c, spec) in &ds.spectrograms {
        out.write(
            &format!("spectrograms/r{:03}_c{:03}.pgm", c.row, c.col),
            |w, s| stamped_pgm(w, s, spec),
        )?;
    }

    let trained = train_stage(&ds, &cfg.model, &cfg.train)?;
    out.write("losses.csv", |w, s| {
        write_losses_csv(w, &trained.report.history, s)
    })?;
    out.write("train_log.jsonl", |w, s| {
        write_training_log(w, &trained.report.history, s)
    })?;
    out.write("parameters.txt", |w, s| {
        write!(
            w,
            "{}\n{}",
            s.comment(),
            parameter_report(&trained.model.net)
        )
    })?;
    trained.bundle(&stamp)?.save(&out.path("model.json"))?;

    let test_inputs: Vec<ModelInput> = trained
        .split
        .test
        .iter()
        .map(|&i| {
            ds.input(
                &trained.scaler,
                trained.samples[i].cell,
                trained.samples[i].month,
            )
        })
        .collect();
    let refs: Vec<&ModelInput> = test_inputs.iter().collect();
    let pred = trained
        .model
        .predict_batch(&refs)
        .map_err(|e| model_error(Stage::Validate, e))?;
    let obs: Vec<f64> = trained
        .split
        .test
        .iter()
        .map(|&i| trained.samples[i].target.unwrap_or_default())
        .collect();

    let field = reconstruct(
        &trained.model,
        &trained.scaler,
        &ds,
        cfg.mc_passes,
        cfg.seed,
    )?;
    out.write("field.csv", |w, s| write_field_csv(w, &field, s))?;

    let holdout = if obs.len() >= 4 {
        Some(holdout_section(&pred, &obs)?)
    } else {
        None
    };
    let radii = cfg.radii.radii();
    let (radius_validation, seasonal_cycle) = match &inputs.station {
        Some(st) => {
            let (rows, seasonal) = station_sections(&field, st, &radii)?;
            (rows, Some(seasonal))
        }
        None => (Vec::new(), None),
    };
    let truth_comparison = match &inputs.truth {
        Some(t) => truth_sections(&field, t, cfg.idw_power)?,
        None => Vec::new(),
    };
    let report = ValidationReport {
        config_hash: stamp.config_hash.clone(),
        seed: stamp.seed,
        holdout,
        station: inputs.station.as_ref().map(|s| s.name.clone()),
        radius_validation,
        seasonal_cycle,
        truth_comparison,
    };
    out.write("validation_report.json", |w, _| report.write_json(w))?;
    out.write("report.csv", |w, _| report.write_csv(w))?;
    write_plots(
        &mut out,
        &trained.report,
        Some((&pred, &obs)),
        &field,
        inputs.station.as_ref(),
        radii[radii.len() / 2],
    )?;

    let mut artifacts = out.into_written();
    artifacts.push(cfg.output_dir.join("model.json"));
    Ok(PipelineOutcome {
        stamp,
        output_dir: cfg.output_dir,
        report,
        fit: trained.report,
        field,
        artifacts,
    })
}
