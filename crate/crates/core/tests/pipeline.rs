use std::collections::BTreeMap;

use xco2_core::field::reconstructed_fraction;
use xco2_core::grid::write_soundings_csv;
use xco2_core::pipeline::{aggregate_stage, reconstruct, train_stage, Dataset};
use xco2_core::{
    assign_cell, run_pipeline, synth_generate, CellId, GridSpec, ModelConfig, PipelineConfig,
    Provenance, SyntheticScenario, TrainConfig,
};

fn small_grid() -> GridSpec {
    GridSpec {
        lat_max: 51.0,
        lon_max: -99.0,
        ..GridSpec::default()
    }
}

fn quiet(gap_fraction: f64) -> SyntheticScenario {
    SyntheticScenario {
        grid: small_grid(),
        gap_fraction,
        noise_sigma: 0.0,
        hotspots: vec![],
        ..SyntheticScenario::default()
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    }
}

fn dataset(s: &SyntheticScenario, seed: u64) -> Dataset {
    let data = synth_generate(s, seed).unwrap();
    let cells = aggregate_stage(&data.soundings, &s.grid).unwrap();
    Dataset::build(s.grid, cells, &data.env, 4).unwrap()
}

#[test]
fn noiseless_soundings_aggregate_to_truth() {
    let s = quiet(0.0);
    let data = synth_generate(&s, 3).unwrap();
    let mut by_cell: BTreeMap<(CellId, u32), Vec<f64>> = BTreeMap::new();
    for r in &data.soundings {
        let t = s.year_fraction(r.time);
        assert!((r.xco2 - s.truth(r.lat, r.lon, t)).abs() < 1e-12);
        by_cell
            .entry((assign_cell(r.lat, r.lon, &s.grid).unwrap(), r.month()))
            .or_default()
            .push(r.xco2);
    }
    let cells = aggregate_stage(&data.soundings, &s.grid).unwrap();
    assert_eq!(cells.len(), s.grid.n_cells());
    for ((cell, month), v) in by_cell {
        let mean = cells[&cell].monthly[month as usize - 1].unwrap();
        assert!((mean - v.iter().sum::<f64>() / v.len() as f64).abs() < 1e-9);
        // soundings fly near mid-month, so the monthly means stay close to the daily-mean truth
        assert!((mean - data.truth.get(cell, month).unwrap()).abs() < 0.5);
    }
}

#[test]
fn station_amplitude_matches_configuration() {
    let s = SyntheticScenario {
        seasonal_amplitude: 4.46,
        station_noise_sigma: 0.0,
        ..quiet(0.3)
    };
    let data = synth_generate(&s, 1).unwrap();
    let v: Vec<f64> = data.station_daily.iter().map(|d| d.1).collect();
    let hi = v.iter().copied().fold(f64::MIN, f64::max);
    let lo = v.iter().copied().fold(f64::MAX, f64::min);
    assert!((hi - lo - 8.92).abs() < 0.01, "peak-to-trough {}", hi - lo);
}

#[test]
fn same_seed_same_csv() {
    let s = SyntheticScenario {
        grid: small_grid(),
        ..SyntheticScenario::default()
    };
    let csv = |seed| {
        let mut buf = Vec::new();
        write_soundings_csv(&mut buf, &synth_generate(&s, seed).unwrap().soundings).unwrap();
        buf
    };
    assert_eq!(csv(9), csv(9));
    assert_ne!(csv(9), csv(10));
}

#[test]
fn gap_free_reconstruction_is_the_observations() {
    let ds = dataset(&quiet(0.0), 4);
    let t = train_stage(&ds, &ModelConfig::desk(), &quick()).unwrap();
    let field = reconstruct(&t.model, &t.scaler, &ds, 4, 4).unwrap();
    assert_eq!(field.len(), ds.grid.n_cells() * 12);
    assert_eq!(reconstructed_fraction(&field), 0.0);
    for r in &field {
        assert_eq!(r.provenance, Provenance::Observed);
        assert_eq!(
            Some(r.xco2),
            ds.cells[&r.cell()].monthly[r.month as usize - 1]
        );
    }
}

#[test]
fn gaps_are_filled_with_positive_uncertainty() {
    let ds = dataset(
        &SyntheticScenario {
            grid: small_grid(),
            gap_fraction: 0.4,
            ..SyntheticScenario::default()
        },
        5,
    );
    let t = train_stage(&ds, &ModelConfig::desk(), &quick()).unwrap();
    let field = reconstruct(&t.model, &t.scaler, &ds, 8, 5).unwrap();
    let mut seen: BTreeMap<CellId, usize> = BTreeMap::new();
    for r in &field {
        *seen.entry(r.cell()).or_default() += 1;
        assert!(r.xco2.is_finite());
        match r.provenance {
            Provenance::Reconstructed => assert!(r.uncertainty > 0.0),
            Provenance::Observed => assert_eq!(
                Some(r.xco2),
                ds.cells[&r.cell()].monthly[r.month as usize - 1]
            ),
        }
    }
    assert_eq!(seen.len(), ds.grid.n_cells());
    assert!(seen.values().all(|&n| n == 12));
    assert!(reconstructed_fraction(&field) > 0.0);
}

#[test]
fn small_run_is_reproducible() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig {
            output_dir: dir.path().to_path_buf(),
            grid: small_grid(),
            ..PipelineConfig::default()
        };
        cfg.train.max_epochs = 3;
        let o = run_pipeline(&cfg).unwrap();
        let read = |f: &str| std::fs::read(o.output_dir.join(f)).unwrap();
        (
            read("losses.csv"),
            read("validation_report.json"),
            read("field.csv"),
            o.stamp.config_hash.clone(),
        )
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
}
