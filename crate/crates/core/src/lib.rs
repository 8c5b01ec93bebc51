//! Gap-filling of gridded XCO₂ from sparse satellite soundings.
//!
//! Soundings are binned onto a regular grid, each cell's monthly series is
//! turned into a Morlet wavelet spectrogram, and a small vision transformer
//! with scale-adaptive attention and distance-weighted neighbour fusion
//! predicts the cell-months that clouds left empty. [`pipeline`] wires the
//! stages together; [`synth`] generates scenarios with a known truth.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod baseline;
pub mod eval;
pub mod features;
pub mod field;
pub mod geo;
pub mod grid;
pub mod model;
pub mod pipeline;
pub mod plot;
pub mod poultry;
pub mod synth;
pub mod train;
pub mod wavelet;

pub use artifact::Stamp;
pub use baseline::{baseline_idw, BaselineError, ObservedPoint};
pub use eval::{EvalError, RadiusPreset, RadiusValidation, StationSeries, ValidationReport};
pub use features::{
    EnvTable, EnvironmentalRow, FeatureError, FeatureScaler, FeatureVector, N_FEATURES, REGISTRY,
};
pub use field::{FieldRecord, Provenance};
pub use grid::{
    aggregate, assign_cell, CellId, GridCellSeries, GridError, GridSpec, SoundingRecord,
};
pub use model::{
    Checkpoint, FusionMode, GeoContext, Mode, ModelConfig, ModelError, ModelInput, Neighbor,
    Network, Regressor, TargetScaler,
};
pub use pipeline::{
    run_pipeline, ErrorKind, PipelineConfig, PipelineError, PipelineOutcome, Stage,
};
pub use poultry::{DensityClass, PoultryError, Region};
pub use synth::{synth_generate, SynthError, SyntheticData, SyntheticScenario, TruthField};
pub use train::{fit, stratified_split, EpochRecord, FitReport, Split, TrainConfig, TrainError};
pub use wavelet::{cwt_morlet, MorletBank, Spectrogram, WaveletError};
