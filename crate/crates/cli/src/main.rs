//! `xco2`: run single stages or the whole reconstruction pipeline.
//!
//! Exit status: 0 success, 2 configuration error, 3 data error, 4 numeric divergence.

mod overrides;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xco2_core::eval::RadiusPreset;
use xco2_core::features::read_env_csv;
use xco2_core::field::read_field_csv;
use xco2_core::grid::{read_soundings_csv, write_cells_csv};
use xco2_core::model::parameter_report;
use xco2_core::pipeline::{
    aggregate_stage, features_stage, load_inputs, registry_file, spectrogram_stage,
    station_sections, train_stage, truth_sections, write_features_csv, ArtifactWriter, Dataset,
    InputPaths, ModelBundle, StationInput, OUTPUT_DIR_ENV,
};
use xco2_core::poultry::{attach_regional_xco2, density_report, read_regions_csv, ClassifyMode};
use xco2_core::synth::write_station_daily_csv;
use xco2_core::train::{write_losses_csv, write_training_log};
use xco2_core::{run_pipeline, PipelineConfig, PipelineError, Stage, ValidationReport};

#[derive(Parser)]
#[command(
    name = "xco2",
    version,
    about = "Gap-filling of gridded XCO2 with wavelet spectrograms and a transformer"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON pipeline config; defaults apply to absent fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config field, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed for synthesis, initialisation, batching and dropout.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for every artifact of the run.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    /// Peak learning rate.
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Maximum training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Station validation radii: 1/3/5 or 0.5/1.5/2.5 degrees.
    #[arg(long, global = true, value_enum)]
    radii: Option<Radii>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Radii {
    Wide,
    Narrow,
}

#[derive(Args, Default)]
struct Inputs {
    /// Soundings CSV; without it the synthetic scenario is generated.
    #[arg(long)]
    soundings: Option<PathBuf>,
    /// Environmental CSV, required together with `--soundings`.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Station `month,xco2_ppm` CSV.
    #[arg(long, requires_all = ["station_lat", "station_lon"])]
    station: Option<PathBuf>,
    /// Station latitude, degrees.
    #[arg(long, allow_negative_numbers = true)]
    station_lat: Option<f64>,
    /// Station longitude, degrees.
    #[arg(long, allow_negative_numbers = true)]
    station_lon: Option<f64>,
    #[arg(long, default_value = "station")]
    station_name: String,
    /// Reference field `row,col,month,xco2_ppm` CSV for truth comparisons.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic scenario: soundings, environment, truth, station.
    Synth,
    /// Bin soundings onto the grid and write cell statistics.
    Aggregate {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Build the 23 predictors for every cell-month.
    Features {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Write one wavelet spectrogram per cell.
    Spectrogram {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Train on observed cell-months and save the model bundle.
    Train {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Fill every gap cell-month with a trained model.
    Reconstruct {
        #[command(flatten)]
        inputs: Inputs,
        /// Model bundle; defaults to `model.json` in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare a field against the station and, when known, the truth.
    Validate {
        #[command(flatten)]
        inputs: Inputs,
        /// Field CSV; defaults to `field.csv` in the output directory.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Classify regions by facility density and tabulate seasonal XCO2.
    Poultry {
        /// `name,area_km2,mean_lat,facility_count`.
        #[arg(long)]
        regions: PathBuf,
        /// `name,month,xco2_ppm`.
        #[arg(long)]
        xco2: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "fixed")]
        mode: Mode,
    },
    /// Run every stage end to end.
    Pipeline {
        #[command(flatten)]
        inputs: Inputs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fixed,
    Tertile,
}

fn config_error(msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::config(Stage::Config, msg)
}

fn build_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let base = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut cfg = overrides::apply(&base, &common.sets)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(lr) = common.lr {
        cfg.train.lr = lr;
    }
    if let Some(e) = common.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(r) = common.radii {
        cfg.radii = match r {
            Radii::Wide => RadiusPreset::Wide,
            Radii::Narrow => RadiusPreset::Narrow,
        };
    }
    Ok(cfg.effective())
}

fn with_inputs(mut cfg: PipelineConfig, inputs: &Inputs) -> Result<PipelineConfig, PipelineError> {
    match (&inputs.soundings, &inputs.env) {
        (Some(s), Some(e)) => {
            let station = match (&inputs.station, inputs.station_lat, inputs.station_lon) {
                (Some(path), Some(lat), Some(lon)) => Some(StationInput {
                    path: path.clone(),
                    name: inputs.station_name.clone(),
                    lat,
                    lon,
                }),
                _ => None,
            };
            cfg.inputs = Some(InputPaths {
                soundings: s.clone(),
                env: e.clone(),
                station,
                truth: inputs.truth.clone(),
            });
        }
        (None, None) => {}
        _ => return Err(config_error("--soundings and --env must be given together")),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open(p: &Path, stage: Stage) -> Result<fs::File, PipelineError> {
    fs::File::open(p).map_err(|e| PipelineError::config(stage, format!("{}: {e}", p.display())))
}

fn stamped<E: std::fmt::Display>(
    w: &mut Vec<u8>,
    s: &xco2_core::Stamp,
    body: impl FnOnce(&mut Vec<u8>) -> Result<(), E>,
) -> Result<(), String> {
    use std::io::Write;
    writeln!(w, "{}", s.comment()).map_err(|e| e.to_string())?;
    body(w).map_err(|e| e.to_string())
}

fn dataset(
    cfg: &PipelineConfig,
) -> Result<(Dataset, xco2_core::pipeline::RunInputs), PipelineError> {
    let inputs = load_inputs(cfg)?;
    let cells = aggregate_stage(&inputs.soundings, &cfg.grid)?;
    Ok((
        Dataset::build(cfg.grid, cells, &inputs.env, cfg.neighbors)?,
        inputs,
    ))
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, PipelineError> {
    let cfg = build_config(&cli.common)?;
    match cli.command {
        Command::Pipeline { inputs } => {
            let cfg = with_inputs(cfg, &inputs)?;
            let outcome = run_pipeline(&cfg)?;
            for t in &outcome.report.truth_comparison {
                println!(
                    "truth {}: rmse {:.4} ppm, within 1 ppm {:.1}% (n={})",
                    t.method,
                    t.rmse,
                    100.0 * t.within_1ppm,
                    t.n
                );
            }
            Ok(outcome.artifacts)
        }
        Command::Synth => {
            let mut cfg = cfg;
            cfg.inputs = None;
            cfg.validate()?;
            let stamp = cfg.stamp();
            let data = load_inputs(&cfg)?.synthetic.expect("synthetic inputs");
            let mut out = ArtifactWriter::new(&cfg.output_dir, stamp)?;
            out.write("soundings.csv", |w, s| {
                stamped(w, s, |w| {
                    xco2_core::grid::write_soundings_csv(w, &data.soundings)
                })
            })?;
            out.write("env.csv", |w, s| {
                stamped(w, s, |w| xco2_core::features::write_env_csv(w, &data.env))
            })?;
            out.write("truth.csv", |w, s| data.truth.write_csv(w, s))?;
            out.write("station.csv", |w, s| data.station.write_csv(w, s))?;
            out.write("station_daily.csv", |w, s| {
                write_station_daily_csv(w, &data.station_daily, s)
            })?;
            println!("passes {} clouded {}", data.passes, data.clouded_passes);
            Ok(out.into_written())
        }
        Command::Aggregate { inputs } => {
            let stamp = cfg.stamp();
            let soundings = match &inputs.soundings {
                Some(p) => read_soundings_csv(open(p, Stage::Aggregate)?).map_err(|e| {
                    PipelineError::data(Stage::Aggregate, format!("{}: {e}", p.display()))
                })?,
                None => load_inputs(&with_inputs(cfg.clone(), &inputs)?)?.soundings,
            };
            let cells = aggregate_stage(&soundings, &cfg.grid)?;
            let mut out = ArtifactWriter::new(&cfg.output_dir, stamp)?;
            out.write("cells.csv", |w, s| {
                stamped(w, s, |w| write_cells_csv(w, &cells, &cfg.grid))
            })?;
            Ok(out.into_written())
        }
        Command::Features { inputs } => {
            let stamp = cfg.stamp();
            let env = match &inputs.env {
                Some(p) => read_env_csv(open(p, Stage::Features)?).map_err(|e| {
                    PipelineError::data(Stage::Features, format!("{}: {e}", p.display()))
                })?,
                None => load_inputs(&with_inputs(cfg.clone(), &inputs)?)?.env,
            };
            let features = features_stage(&cfg.grid, &env)?;
            let mut out = ArtifactWriter::new(&cfg.output_dir, stamp.clone())?;
            out.write("features.csv", |w, s| write_features_csv(w, s, &features))?;
            out.text("feature_registry.json", &registry_file(&stamp))?;
            Ok(out.into_written())
        }
        Command::Spectrogram { inputs } => {
            let stamp = cfg.stamp();
            let soundings = match &inputs.soundings {
                Some(p) => read_soundings_csv(open(p, Stage::Spectrogram)?).map_err(|e| {
                    PipelineError::data(Stage::Aggregate, format!("{}: {e}", p.display()))
                })?,
                None => load_inputs(&with_inputs(cfg.clone(), &inputs)?)?.soundings,
            };
            let cells = aggregate_stage(&soundings, &cfg.grid)?;
            let specs = spectrogram_stage(&cfg.grid, &cells)?;
            let mut out = ArtifactWriter::new(&cfg.output_dir, stamp)?;
            for (c, spec) in &specs {
                out.write(
                    &format!("spectrograms/r{:03}_c{:03}.csv", c.row, c.col),
                    |w, s| stamped(w, s, |w| spec.write_csv(w)),
                )?;
            }
            Ok(out.into_written())
        }
        Command::Train { inputs } => {
            let cfg = with_inputs(cfg, &inputs)?;
            let stamp = cfg.stamp();
            let (ds, _) = dataset(&cfg)?;
            let trained = train_stage(&ds, &cfg.model, &cfg.train)?;
            let mut out = ArtifactWriter::new(&cfg.output_dir, stamp.clone())?;
            out.write("losses.csv", |w, s| {
                write_losses_csv(w, &trained.report.history, s)
            })?;
            out.write("train_log.jsonl", |w, s| {
                write_training_log(w, &trained.report.history, s)
            })?;
            out.write("parameters.txt", |w, s| {
                use std::io::Write;
                write!(
                    w,
                    "{}\n{}",
                    s.comment(),
                    parameter_report(&trained.model.net)
                )
            })?;
            let model_path = out.path("model.json");
            trained.bundle(&stamp)?.save(&model_path)?;
            println!(
                "best epoch {} of {}",
                trained.report.best_epoch,
                trained.report.history.len()
            );
            let mut written = out.into_written();
            written.push(model_path);
            Ok(written)
        }
        Command::Reconstruct { inputs, model } => {
            let cfg = with_inputs(cfg, &inputs)?;
            let stamp = cfg.stamp();
            let path = model.unwrap_or_else(|| cfg.output_dir.join("model.json"));
            let bundle = ModelBundle::load(&path)?;
            let regressor = bundle.regressor()?;
            let (ds, _) = dataset(&cfg)?;
            let field = xco2_core::pipeline::reconstruct(
                &regressor,
                &bundle.feature_scaler,
                &ds,
                cfg.mc_passes,
                cfg.seed,
            )?;
            let mut out = ArtifactWriter::new(&cfg.output_dir, stamp)?;
            out.write("field.csv", |w, s| {
                xco2_core::field::write_field_csv(w, &field, s)
            })?;
            println!(
                "reconstructed fraction {:.3}",
                xco2_core::field::reconstructed_fraction(&field)
            );
            Ok(out.into_written())
        }
        Command::Validate { inputs, field } => {
            let cfg = with_inputs(cfg, &inputs)?;
            let stamp = cfg.stamp();
            let path = field.unwrap_or_else(|| cfg.output_dir.join("field.csv"));
            let field = read_field_csv(open(&path, Stage::Validate)?).map_err(|e| {
                PipelineError::data(Stage::Validate, format!("{}: {e}", path.display()))
            })?;
            let run_inputs = load_inputs(&cfg)?;
            let radii = cfg.radii.radii();
            let (radius_validation, seasonal_cycle) = match &run_inputs.station {
                Some(st) => {
                    let (rows, seasonal) = station_sections(&field, st, &radii)?;
                    (rows, Some(seasonal))
                }
                None => (Vec::new(), None),
            };
            let truth_comparison = match &run_inputs.truth {
                Some(t) => truth_sections(&field, t, cfg.idw_power)?,
                None => Vec::new(),
            };
            let report = ValidationReport {
                config_hash: stamp.config_hash.clone(),
                seed: stamp.seed,
                holdout: None,
                station: run_inputs.station.as_ref().map(|s| s.name.clone()),
                radius_validation,
                seasonal_cycle,
                truth_comparison,
            };
            for r in &report.radius_validation {
                println!("{}° {}", r.radius_deg, r.format_row());
            }
            let mut out = ArtifactWriter::new(&cfg.output_dir, stamp)?;
            out.write("validation_report.json", |w, _| report.write_json(w))?;
            out.write("report.csv", |w, _| report.write_csv(w))?;
            Ok(out.into_written())
        }
        Command::Poultry {
            regions,
            xco2,
            mode,
        } => {
            let stamp = cfg.stamp();
            let err = |e: xco2_core::PoultryError| PipelineError::data(Stage::Poultry, e);
            let mut rs = read_regions_csv(open(&regions, Stage::Poultry)?).map_err(err)?;
            if let Some(p) = &xco2 {
                attach_regional_xco2(&mut rs, open(p, Stage::Poultry)?).map_err(err)?;
            }
            let mode = match mode {
                Mode::Fixed => ClassifyMode::Fixed,
                Mode::Tertile => ClassifyMode::Tertile,
            };
            let report = density_report(&rs, mode).map_err(err)?;
            let table = report.seasonal_table();
            print!("{table}");
            if let Some(c) = &report.correlation {
                println!(
                    "density vs XCO2: r = {:.3}, r2 = {:.3} ({} of variance)",
                    c.r,
                    c.r2,
                    c.variance_explained_label()
                );
            }
            let mut out = ArtifactWriter::new(&cfg.output_dir, stamp)?;
            out.write("density_report.csv", |w, s| report.write_csv(w, s))?;
            out.write("seasonal_table.txt", |w, s| {
                use std::io::Write;
                write!(w, "{}\n{table}", s.comment())
            })?;
            Ok(out.into_written())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
