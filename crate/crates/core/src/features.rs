//! Engineered and environmental predictors for one (cell, month) sample.
//!
//! The registry below fixes the order of the 23 auxiliary inputs. Engineered
//! terms come first, environmental passthroughs last.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::central_angle_deg;
use crate::grid::{CellId, GridSpec};

pub const N_FEATURES: usize = 23;

/// Spatial e-folding scale of the centroid distance-decay weight, degrees.
pub const DECAY_SCALE_DEG: f64 = 5.0;

/// Year length used by the harmonic encodings, days.
pub const YEAR_DAYS: f64 = 365.25;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("day of year {0} outside 1..=366")]
    DomainError(f64),
    #[error("month {0} outside 1..=12")]
    InvalidMonth(u32),
    #[error(
        "environmental row for cell ({row}, {col}) month {month} is incomplete: missing {missing}"
    )]
    MissingEnvironment {
        row: usize,
        col: usize,
        month: u32,
        missing: String,
    },
    #[error("feature {index} ({name}) is constant over the training set")]
    ConstantFeature { index: usize, name: &'static str },
    #[error("training set is empty")]
    EmptyTraining,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FeatureInfo {
    pub index: usize,
    pub name: &'static str,
    pub source: &'static str,
}

const fn fi(index: usize, name: &'static str, source: &'static str) -> FeatureInfo {
    FeatureInfo {
        index,
        name,
        source,
    }
}

pub const REGISTRY: [FeatureInfo; N_FEATURES] = [
    fi(0, "sin_annual", "temporal_harmonic"),
    fi(1, "cos_annual", "temporal_harmonic"),
    fi(2, "sin_semiannual", "temporal_harmonic"),
    fi(3, "cos_semiannual", "temporal_harmonic"),
    fi(4, "summer_weight", "seasonal_indicator"),
    fi(5, "lat_sq", "geo_interaction"),
    fi(6, "lon_sq", "geo_interaction"),
    fi(7, "lat_lon", "geo_interaction"),
    fi(8, "dlat_centroid", "geo_interaction"),
    fi(9, "dlon_centroid", "geo_interaction"),
    fi(10, "dist_centroid_deg", "geo_interaction"),
    fi(11, "distance_decay", "distance_decay"),
    fi(12, "lat_x_sin_annual", "space_time_cross"),
    fi(13, "lon_x_cos_annual", "space_time_cross"),
    fi(14, "temperature_k", "meteorology"),
    fi(15, "precipitation_mm", "meteorology"),
    fi(16, "wind_speed_ms", "meteorology"),
    fi(17, "surface_pressure_pa", "meteorology"),
    fi(18, "ndvi", "vegetation"),
    fi(19, "evi", "vegetation"),
    fi(20, "elevation_m", "topography"),
    fi(21, "slope_deg", "topography"),
    fi(22, "cropland_fraction", "land_cover"),
];

/// Registry as pretty JSON (`features.json`).
pub fn registry_json() -> String {
    serde_json::to_string_pretty(&REGISTRY.to_vec()).expect("registry serializes")
}

/// sin/cos of the annual and semi-annual cycles at `t = doy / 365.25`.
pub fn temporal_harmonics(day_of_year: f64) -> Result<[f64; 4], FeatureError> {
    if !(1.0..=366.0).contains(&day_of_year) {
        return Err(FeatureError::DomainError(day_of_year));
    }
    let t = day_of_year / YEAR_DAYS;
    let a = 2.0 * PI * t;
    Ok([a.sin(), a.cos(), (2.0 * a).sin(), (2.0 * a).cos()])
}

/// Day of year at the centre of a calendar month on the 365.25-day axis.
pub fn month_center_doy(month: u32) -> Result<f64, FeatureError> {
    if !(1..=12).contains(&month) {
        return Err(FeatureError::InvalidMonth(month));
    }
    Ok(YEAR_DAYS * (month as f64 - 0.5) / 12.0)
}

/// Vegetation-active weighting: full in JJA, half in the shoulder months.
pub fn summer_weight(month: u32) -> f64 {
    match month {
        6..=8 => 1.0,
        5 | 9 => 0.5,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoInteractions {
    pub lat_sq: f64,
    pub lon_sq: f64,
    pub lat_lon: f64,
    pub dlat: f64,
    pub dlon: f64,
    /// Great-circle angle to the centroid, degrees of arc.
    pub d_centroid: f64,
}

pub fn geo_interactions(lat: f64, lon: f64, centroid: (f64, f64)) -> GeoInteractions {
    GeoInteractions {
        lat_sq: lat * lat,
        lon_sq: lon * lon,
        lat_lon: lat * lon,
        dlat: lat - centroid.0,
        dlon: lon - centroid.1,
        d_centroid: central_angle_deg(lat, lon, centroid.0, centroid.1),
    }
}

pub fn distance_decay(d_centroid_deg: f64) -> f64 {
    (-d_centroid_deg / DECAY_SCALE_DEG).exp()
}

/// Environmental predictors for one (cell, month); `None` marks a missing value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvironmentalRow {
    pub row: usize,
    pub col: usize,
    pub month: u32,
    pub temp_k: Option<f64>,
    pub precip_mm: Option<f64>,
    pub wind_ms: Option<f64>,
    pub pressure_pa: Option<f64>,
    pub ndvi: Option<f64>,
    pub evi: Option<f64>,
    pub elev_m: Option<f64>,
    pub slope_deg: Option<f64>,
    pub cropland_frac: Option<f64>,
}

impl EnvironmentalRow {
    pub fn cell(&self) -> CellId {
        CellId::new(self.row, self.col)
    }

    fn values(&self) -> [(&'static str, Option<f64>); 9] {
        [
            ("temp_k", self.temp_k),
            ("precip_mm", self.precip_mm),
            ("wind_ms", self.wind_ms),
            ("pressure_pa", self.pressure_pa),
            ("ndvi", self.ndvi),
            ("evi", self.evi),
            ("elev_m", self.elev_m),
            ("slope_deg", self.slope_deg),
            ("cropland_frac", self.cropland_frac),
        ]
    }

    pub fn complete(&self) -> Result<[f64; 9], FeatureError> {
        let vals = self.values();
        let mut out = [0.0; 9];
        let mut missing = Vec::new();
        for (i, (name, v)) in vals.iter().enumerate() {
            match v {
                Some(x) if x.is_finite() => out[i] = *x,
                _ => missing.push(*name),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(FeatureError::MissingEnvironment {
                row: self.row,
                col: self.col,
                month: self.month,
                missing: missing.join(","),
            })
        }
    }
}

pub type EnvTable = BTreeMap<(CellId, u32), EnvironmentalRow>;

pub fn read_env_csv<R: Read>(reader: R) -> Result<EnvTable, FeatureError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = BTreeMap::new();
    for row in rdr.deserialize::<EnvironmentalRow>() {
        let row = row?;
        if !(1..=12).contains(&row.month) {
            return Err(FeatureError::InvalidMonth(row.month));
        }
        out.insert((row.cell(), row.month), row);
    }
    Ok(out)
}

pub fn write_env_csv<W: Write>(writer: W, table: &EnvTable) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "row",
        "col",
        "month",
        "temp_k",
        "precip_mm",
        "wind_ms",
        "pressure_pa",
        "ndvi",
        "evi",
        "elev_m",
        "slope_deg",
        "cropland_frac",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.5}")).unwrap_or_default();
    for r in table.values() {
        let mut rec = vec![r.row.to_string(), r.col.to_string(), r.month.to_string()];
        rec.extend(r.values().iter().map(|(_, v)| fmt(*v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; N_FEATURES],
}

impl FeatureVector {
    pub fn names() -> [&'static str; N_FEATURES] {
        REGISTRY.map(|f| f.name)
    }
}

/// Assemble the 23 predictors for the sample at `cell`, `month`.
pub fn build_feature_vector(
    cell: CellId,
    month: u32,
    env: &EnvironmentalRow,
    spec: &GridSpec,
    centroid: (f64, f64),
) -> Result<FeatureVector, FeatureError> {
    let env_vals = env.complete()?;
    let (lat, lon) = spec.cell_center(cell);
    let h = temporal_harmonics(month_center_doy(month)?)?;
    let g = geo_interactions(lat, lon, centroid);
    let mut v = [0.0; N_FEATURES];
    v[..4].copy_from_slice(&h);
    v[4] = summer_weight(month);
    v[5] = g.lat_sq;
    v[6] = g.lon_sq;
    v[7] = g.lat_lon;
    v[8] = g.dlat;
    v[9] = g.dlon;
    v[10] = g.d_centroid;
    v[11] = distance_decay(g.d_centroid);
    v[12] = lat * h[0];
    v[13] = lon * h[1];
    v[14..].copy_from_slice(&env_vals);
    debug_assert!(v.iter().all(|x| x.is_finite()));
    Ok(FeatureVector { values: v })
}

/// Per-feature standardization fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(train: &[FeatureVector]) -> Result<Self, FeatureError> {
        if train.is_empty() {
            return Err(FeatureError::EmptyTraining);
        }
        let n = train.len() as f64;
        let mut mean = vec![0.0; N_FEATURES];
        let mut std = vec![0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            let m = train.iter().map(|v| v.values[k]).sum::<f64>() / n;
            let var = train.iter().map(|v| (v.values[k] - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if !(s > 1e-12 * (1.0 + m.abs())) {
                return Err(FeatureError::ConstantFeature {
                    index: k,
                    name: REGISTRY[k].name,
                });
            }
            mean[k] = m;
            std[k] = s;
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, v: &FeatureVector) -> FeatureVector {
        FeatureVector {
            values: std::array::from_fn(|k| (v.values[k] - self.mean[k]) / self.std[k]),
        }
    }

    pub fn inverse(&self, z: &FeatureVector) -> FeatureVector {
        FeatureVector {
            values: std::array::from_fn(|k| z.values[k] * self.std[k] + self.mean[k]),
        }
    }
}

/// Fit on `train`, then scale every row of `all` with the training statistics.
pub fn fit_apply_scaler(
    train: &[FeatureVector],
    all: &[FeatureVector],
) -> Result<(Vec<FeatureVector>, FeatureScaler), FeatureError> {
    let scaler = FeatureScaler::fit(train)?;
    Ok((all.iter().map(|v| scaler.transform(v)).collect(), scaler))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(cell: CellId, month: u32) -> EnvironmentalRow {
        EnvironmentalRow {
            row: cell.row,
            col: cell.col,
            month,
            temp_k: Some(280.0),
            precip_mm: Some(2.0),
            wind_ms: Some(4.0),
            pressure_pa: Some(98_000.0),
            ndvi: Some(0.4),
            evi: Some(0.3),
            elev_m: Some(450.0),
            slope_deg: Some(1.5),
            cropland_frac: Some(0.6),
        }
    }

    #[test]
    fn harmonics_quarter_and_half_cycle() {
        let h = temporal_harmonics(0.25 * YEAR_DAYS).unwrap();
        let expect = [1.0, 0.0, 0.0, -1.0];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{h:?}");
        }
        let h = temporal_harmonics(0.5 * YEAR_DAYS).unwrap();
        assert!(h[0].abs() < 1e-12 && (h[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonics_unit_circle_and_domain() {
        for doy in 1..=366 {
            let h = temporal_harmonics(doy as f64).unwrap();
            assert!((h[0] * h[0] + h[1] * h[1] - 1.0).abs() < 1e-12);
            assert!((h[2] * h[2] + h[3] * h[3] - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            temporal_harmonics(0.0),
            Err(FeatureError::DomainError(_))
        ));
        assert!(temporal_harmonics(366.5).is_err());
    }

    #[test]
    fn geo_terms() {
        let g = geo_interactions(2.0, 3.0, (2.0, 3.0));
        assert_eq!((g.lat_sq, g.lon_sq, g.lat_lon), (4.0, 9.0, 6.0));
        assert_eq!((g.dlat, g.dlon, g.d_centroid), (0.0, 0.0, 0.0));
    }

    #[test]
    fn decay_values() {
        assert_eq!(distance_decay(0.0), 1.0);
        assert!((distance_decay(5.0) - 0.367_879_441_171_442_3).abs() < 1e-12);
        let w: Vec<f64> = (0..100).map(|i| distance_decay(i as f64 * 0.3)).collect();
        assert!(w.windows(2).all(|p| p[1] < p[0]));
        assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn registry_is_complete_and_ordered() {
        assert_eq!(REGISTRY.len(), N_FEATURES);
        for (i, f) in REGISTRY.iter().enumerate() {
            assert_eq!(f.index, i);
        }
        let parsed: serde_json::Value = serde_json::from_str(&registry_json()).unwrap();
        assert_eq!(parsed.as_array().unwrap().len(), 23);
        assert_eq!(parsed[22]["name"], "cropland_fraction");
    }

    #[test]
    fn feature_vector_layout() {
        let spec = GridSpec::new(-1.0, 1.0, 10.0, 12.0, 0.25).unwrap();
        let cell = CellId::new(3, 5);
        let (lat, lon) = spec.cell_center(cell);
        let fv = build_feature_vector(cell, 7, &env(cell, 7), &spec, (0.0, 11.0)).unwrap();
        let again = build_feature_vector(cell, 7, &env(cell, 7), &spec, (0.0, 11.0)).unwrap();
        assert_eq!(fv, again);
        assert_eq!(fv.values[4], 1.0);
        assert!((fv.values[12] - lat * fv.values[0]).abs() < 1e-15);
        assert!((fv.values[13] - lon * fv.values[1]).abs() < 1e-15);
        assert_eq!(fv.values[22], 0.6);
        assert_eq!(fv.values[17], 98_000.0);
    }

    #[test]
    fn equatorial_cross_term_vanishes() {
        // cell centred on the equator
        let spec = GridSpec::new(-0.125, 0.125, 0.0, 1.0, 0.25).unwrap();
        let cell = CellId::new(0, 2);
        assert_eq!(spec.cell_center(cell).0, 0.0);
        let fv = build_feature_vector(cell, 4, &env(cell, 4), &spec, spec.midpoint()).unwrap();
        assert_eq!(fv.values[12], 0.0);
    }

    #[test]
    fn incomplete_env_is_rejected() {
        let spec = GridSpec::default();
        let cell = CellId::new(0, 0);
        let mut e = env(cell, 1);
        e.ndvi = None;
        e.slope_deg = Some(f64::NAN);
        match build_feature_vector(cell, 1, &e, &spec, spec.midpoint()) {
            Err(FeatureError::MissingEnvironment { missing, .. }) => {
                assert_eq!(missing, "ndvi,slope_deg")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scaler_constant_and_two_point() {
        let v = FeatureVector {
            values: [1.0; N_FEATURES],
        };
        assert!(matches!(
            FeatureScaler::fit(&[v, v, v]),
            Err(FeatureError::ConstantFeature { index: 0, .. })
        ));
        assert!(matches!(
            FeatureScaler::fit(&[]),
            Err(FeatureError::EmptyTraining)
        ));

        let a = FeatureVector {
            values: [0.0; N_FEATURES],
        };
        let b = FeatureVector {
            values: [2.0; N_FEATURES],
        };
        let (scaled, scaler) = fit_apply_scaler(&[a, b], &[a, b]).unwrap();
        assert!(scaled[0].values.iter().all(|&x| (x + 1.0).abs() < 1e-15));
        assert!(scaled[1].values.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        assert_eq!(scaler.inverse(&scaled[1]), b);
    }

    #[test]
    fn env_csv_roundtrip_with_missing() {
        let mut t = EnvTable::new();
        let mut e = env(CellId::new(1, 2), 3);
        e.evi = None;
        t.insert((e.cell(), 3), e);
        let mut buf = Vec::new();
        write_env_csv(&mut buf, &t).unwrap();
        let back = read_env_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }
}
