//! Synthetic scenario: a seasonal field with Gaussian enhancements, sampled
//! along diagonal swaths under Bernoulli cloud masking, with matching
//! environmental covariates and a densely sampled ground station.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Stamp;
use crate::eval::StationSeries;
use crate::features::{EnvTable, EnvironmentalRow};
use crate::geo::central_angle_deg;
use crate::grid::{CellId, GridError, GridSpec, SoundingRecord};

type SynthRng = rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("truth row {row}: {reason}")]
    InvalidTruth { row: usize, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub lat: f64,
    pub lon: f64,
    /// Peak enhancement, ppm.
    pub amplitude: f64,
    /// Gaussian e-folding width, degrees of arc.
    pub sigma_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScenario {
    pub grid: GridSpec,
    pub year: i32,
    pub background: f64,
    /// Coefficient of the annual sinusoid; peak-to-trough is twice this.
    pub seasonal_amplitude: f64,
    pub swath_width_deg: f64,
    /// Longitude shift of a track per degree of latitude.
    pub track_slope: f64,
    /// Probability that a cell is clouded out on a given pass.
    pub gap_fraction: f64,
    pub hotspots: Vec<Hotspot>,
    /// Per-sounding retrieval noise, ppm.
    pub noise_sigma: f64,
    pub soundings_per_pass: usize,
    /// Defaults to the grid midpoint.
    pub station: Option<(f64, f64)>,
    pub station_noise_sigma: f64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        let grid = GridSpec::default();
        Self {
            hotspots: vec![
                Hotspot {
                    lat: 51.0,
                    lon: -98.0,
                    amplitude: 2.5,
                    sigma_deg: 0.5,
                },
                Hotspot {
                    lat: 52.2,
                    lon: -99.2,
                    amplitude: 1.6,
                    sigma_deg: 0.4,
                },
            ],
            grid,
            year: 2024,
            background: 418.0,
            seasonal_amplitude: 4.46,
            swath_width_deg: 0.75,
            track_slope: 0.4,
            gap_fraction: 0.3,
            noise_sigma: 0.3,
            soundings_per_pass: 4,
            station: None,
            station_noise_sigma: 0.0,
        }
    }
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.grid.validate()?;
        let bad = |m: &str| Err(SynthError::InvalidScenario(m.into()));
        if !(0.0..1.0).contains(&self.gap_fraction) {
            return bad("gap_fraction must lie in [0, 1)");
        }
        if !(self.seasonal_amplitude >= 0.0) || self.hotspots.iter().any(|h| !(h.amplitude >= 0.0))
        {
            return bad("amplitudes must be non-negative");
        }
        if self.hotspots.iter().any(|h| !(h.sigma_deg > 0.0)) {
            return bad("hotspot widths must be positive");
        }
        if !(self.noise_sigma >= 0.0) || !(self.station_noise_sigma >= 0.0) {
            return bad("noise sigmas must be non-negative");
        }
        if !(self.swath_width_deg > 0.0) || !self.track_slope.is_finite() {
            return bad("swath width must be positive and track slope finite");
        }
        if self.soundings_per_pass == 0 {
            return bad("soundings_per_pass must be at least 1");
        }
        if NaiveDate::from_ymd_opt(self.year, 1, 1).is_none() {
            return bad("year out of range");
        }
        Ok(())
    }

    pub fn station_location(&self) -> (f64, f64) {
        self.station.unwrap_or_else(|| self.grid.midpoint())
    }

    /// Sum of hotspot enhancements at a point.
    pub fn enhancement(&self, lat: f64, lon: f64) -> f64 {
        self.hotspots
            .iter()
            .map(|h| {
                let d = central_angle_deg(lat, lon, h.lat, h.lon);
                h.amplitude * (-d * d / (2.0 * h.sigma_deg * h.sigma_deg)).exp()
            })
            .sum()
    }

    /// Noise-free field at a point and year fraction `t`.
    pub fn truth(&self, lat: f64, lon: f64, t: f64) -> f64 {
        self.background
            + self.seasonal_amplitude * (2.0 * PI * t - PI / 2.0).sin()
            + self.enhancement(lat, lon)
    }

    fn year_bounds(&self) -> (DateTime<Utc>, f64) {
        let start = Utc.with_ymd_and_hms(self.year, 1, 1, 0, 0, 0).unwrap();
        let end = Utc.with_ymd_and_hms(self.year + 1, 1, 1, 0, 0, 0).unwrap();
        (start, (end - start).num_seconds() as f64)
    }

    /// Fraction of the scenario year elapsed at `time`.
    pub fn year_fraction(&self, time: DateTime<Utc>) -> f64 {
        let (start, len) = self.year_bounds();
        (time - start).num_seconds() as f64 / len
    }

    fn days_in_month(&self, month: u32) -> u32 {
        let next = if month == 12 {
            NaiveDate::from_ymd_opt(self.year + 1, 1, 1)
        } else {
            NaiveDate::from_ymd_opt(self.year, month + 1, 1)
        };
        next.unwrap().pred_opt().unwrap().day()
    }

    /// Monthly mean of the daily (noon UTC) truth at a point.
    pub fn monthly_truth(&self, lat: f64, lon: f64, month: u32) -> f64 {
        let n = self.days_in_month(month);
        (1..=n)
            .map(|d| {
                let t = Utc.with_ymd_and_hms(self.year, month, d, 12, 0, 0).unwrap();
                self.truth(lat, lon, self.year_fraction(t))
            })
            .sum::<f64>()
            / n as f64
    }
}

/// Reference value of every cell-month: monthly mean truth at the cell centre.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TruthField {
    pub cells: BTreeMap<CellId, [f64; 12]>,
}

impl TruthField {
    pub fn get(&self, cell: CellId, month: u32) -> Option<f64> {
        self.cells.get(&cell).map(|m| m[month as usize - 1])
    }

    /// `row,col,month,xco2_ppm`.
    pub fn write_csv<W: Write>(&self, mut w: W, stamp: &Stamp) -> std::io::Result<()> {
        writeln!(w, "{}", stamp.comment())?;
        writeln!(w, "row,col,month,xco2_ppm")?;
        for (c, months) in &self.cells {
            for (m, v) in months.iter().enumerate() {
                writeln!(w, "{},{},{},{v:.6}", c.row, c.col, m + 1)?;
            }
        }
        Ok(())
    }

    /// Inverse of [`TruthField::write_csv`]; every listed cell needs all twelve months.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SynthError> {
        #[derive(Deserialize)]
        struct Row {
            row: usize,
            col: usize,
            month: u32,
            xco2_ppm: f64,
        }
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut partial: BTreeMap<CellId, [Option<f64>; 12]> = BTreeMap::new();
        for (i, row) in rd.deserialize::<Row>().enumerate() {
            let r = row?;
            if !(1..=12).contains(&r.month) || !r.xco2_ppm.is_finite() {
                return Err(SynthError::InvalidTruth {
                    row: i,
                    reason: format!("month {} value {}", r.month, r.xco2_ppm),
                });
            }
            partial.entry(CellId::new(r.row, r.col)).or_default()[r.month as usize - 1] =
                Some(r.xco2_ppm);
        }
        let mut cells = BTreeMap::new();
        for (c, months) in partial {
            if months.iter().any(Option::is_none) {
                return Err(SynthError::InvalidTruth {
                    row: 0,
                    reason: format!("cell ({}, {}) lacks a month", c.row, c.col),
                });
            }
            cells.insert(c, months.map(|v| v.unwrap_or_default()));
        }
        Ok(Self { cells })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub soundings: Vec<SoundingRecord>,
    pub env: EnvTable,
    pub truth: TruthField,
    /// Monthly means of the daily station record.
    pub station: StationSeries,
    pub station_daily: Vec<(NaiveDate, f64)>,
    /// Passes that were scheduled, and those masked by cloud.
    pub passes: usize,
    pub clouded_passes: usize,
}

/// Overpass hour, UTC.
const OVERPASS_HOUR: u32 = 19;
/// Days around mid-month on which the tracks of a month fly.
const TRACK_DAY_BASE: u32 = 13;
const TRACK_DAY_SPREAD: u32 = 5;

/// Cross-track coordinate of a point: constant along a track.
fn cross_track(s: &SyntheticScenario, lat: f64, lon: f64) -> f64 {
    lon - s.track_slope * (lat - s.grid.lat_min)
}

/// Track index covering each cell in `month`. Track boundaries shift every
/// month so cells change swath partners through the year.
fn track_of(s: &SyntheticScenario, cell: CellId, month: u32) -> i64 {
    let (lat, lon) = s.grid.cell_center(cell);
    let shift = ((month as f64 * 0.381_966).fract()) * s.swath_width_deg;
    ((cross_track(s, lat, lon) - s.grid.lon_min + shift) / s.swath_width_deg).floor() as i64
}

fn noise(rng: &mut SynthRng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
    } else {
        0.0
    }
}

fn environment(s: &SyntheticScenario, rng: &mut SynthRng) -> EnvTable {
    let max_enh = s
        .hotspots
        .iter()
        .map(|h| h.amplitude)
        .sum::<f64>()
        .max(1e-9);
    let mut table = BTreeMap::new();
    for cell in s.grid.cells() {
        let (lat, lon) = s.grid.cell_center(cell);
        let elev =
            350.0 + 60.0 * (lat - s.grid.lat_min) - 25.0 * (lon - s.grid.lon_min) + noise(rng, 5.0);
        let slope = rng.random::<f64>() * 4.0;
        // cropland share tracks the emission enhancement, so it is informative
        let crop =
            (0.15 + 0.75 * s.enhancement(lat, lon) / max_enh + noise(rng, 0.01)).clamp(0.0, 1.0);
        for month in 1..=12u32 {
            let t = (month as f64 - 0.5) / 12.0;
            let season = (2.0 * PI * t - PI / 2.0).sin();
            let ndvi = (0.35 + 0.3 * season + noise(rng, 0.02)).clamp(0.0, 1.0);
            table.insert(
                (cell, month),
                EnvironmentalRow {
                    row: cell.row,
                    col: cell.col,
                    month,
                    temp_k: Some(
                        278.0 + 14.0 * season - 0.6 * (lat - s.grid.lat_min) + noise(rng, 0.5),
                    ),
                    precip_mm: Some((45.0 + 25.0 * season + noise(rng, 5.0)).max(0.0)),
                    wind_ms: Some((4.5 - 1.0 * season + noise(rng, 0.4)).max(0.0)),
                    pressure_pa: Some(101_325.0 - 11.8 * elev + noise(rng, 40.0)),
                    ndvi: Some(ndvi),
                    evi: Some(0.62 * ndvi + noise(rng, 0.01)),
                    elev_m: Some(elev),
                    slope_deg: Some(slope),
                    cropland_frac: Some(crop),
                },
            );
        }
    }
    table
}

/// Generate every artifact of a scenario. Same scenario and seed, same output.
pub fn synth_generate(s: &SyntheticScenario, seed: u64) -> Result<SyntheticData, SynthError> {
    s.validate()?;
    let mut rng = SynthRng::seed_from_u64(seed);
    let cs = s.grid.cell_size;
    let mut soundings = Vec::new();
    let (mut passes, mut clouded) = (0, 0);
    for month in 1..=12u32 {
        for cell in s.grid.cells() {
            let track = track_of(s, cell, month);
            let day = TRACK_DAY_BASE + track.rem_euclid(TRACK_DAY_SPREAD as i64) as u32;
            passes += 1;
            if rng.random::<f64>() < s.gap_fraction {
                clouded += 1;
                continue;
            }
            let (lat_c, lon_c) = s.grid.cell_center(cell);
            for k in 0..s.soundings_per_pass {
                let lat = lat_c + (rng.random::<f64>() - 0.5) * 0.98 * cs;
                let lon = lon_c + (rng.random::<f64>() - 0.5) * 0.98 * cs;
                let time = Utc
                    .with_ymd_and_hms(s.year, month, day, OVERPASS_HOUR, 30, 0)
                    .unwrap()
                    + chrono::Duration::seconds(k as i64);
                let t = s.year_fraction(time);
                soundings.push(SoundingRecord {
                    lat,
                    lon,
                    time,
                    xco2: s.truth(lat, lon, t) + noise(&mut rng, s.noise_sigma),
                    sigma: s.noise_sigma,
                });
            }
        }
    }
    let env = environment(s, &mut rng);
    let truth = TruthField {
        cells: s
            .grid
            .cells()
            .map(|c| {
                let (lat, lon) = s.grid.cell_center(c);
                (
                    c,
                    std::array::from_fn(|m| s.monthly_truth(lat, lon, m as u32 + 1)),
                )
            })
            .collect(),
    };
    let (slat, slon) = s.station_location();
    let mut station_daily = Vec::new();
    let mut day = NaiveDate::from_ymd_opt(s.year, 1, 1).unwrap();
    while day.year() == s.year {
        let t = Utc.from_utc_datetime(&day.and_hms_opt(12, 0, 0).unwrap());
        station_daily.push((
            day,
            s.truth(slat, slon, s.year_fraction(t)) + noise(&mut rng, s.station_noise_sigma),
        ));
        day = day.succ_opt().unwrap();
    }
    let monthly = std::array::from_fn(|m| {
        let v: Vec<f64> = station_daily
            .iter()
            .filter(|(d, _)| d.month() == m as u32 + 1)
            .map(|(_, v)| *v)
            .collect();
        Some(v.iter().sum::<f64>() / v.len() as f64)
    });
    let station = StationSeries {
        name: "synthetic-station".into(),
        lat: slat,
        lon: slon,
        monthly,
    };
    Ok(SyntheticData {
        soundings,
        env,
        truth,
        station,
        station_daily,
        passes,
        clouded_passes: clouded,
    })
}

pub fn write_station_daily_csv<W: Write>(
    mut w: W,
    daily: &[(NaiveDate, f64)],
    stamp: &Stamp,
) -> std::io::Result<()> {
    writeln!(w, "{}", stamp.comment())?;
    writeln!(w, "date,xco2_ppm")?;
    for (d, v) in daily {
        writeln!(w, "{d},{v:.6}")?;
    }
    Ok(())
}
