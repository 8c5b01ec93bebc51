//! Regression and residual metrics, two-sample tests, station matching at
//! several radii and seasonal-cycle agreement.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Stamp;
use crate::features::N_FEATURES;
use crate::field::FieldRecord;
use crate::geo::{degrees_to_km, great_circle_km};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {need} values, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("observations are constant")]
    ConstantObservations,
    #[error("residual variance is zero")]
    DegenerateVariance,
    #[error("empty sample")]
    EmptySample,
    #[error("pooled variance is zero")]
    ZeroPooledVariance,
    #[error("no reconstructed cells within {radius_deg} degrees of the station")]
    NoMatchedCells { radius_deg: f64 },
    #[error("only {0} overlapping months, need 3")]
    InsufficientOverlap(usize),
    #[error("invalid station row: {0}")]
    InvalidStationRow(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Predictor count used by adjusted R².
pub const ADJUSTED_R2_PREDICTORS: usize = N_FEATURES;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn central_moment(v: &[f64], m: f64, k: i32) -> f64 {
    v.iter().map(|x| (x - m).powi(k)).sum::<f64>() / v.len() as f64
}

/// Linear-interpolation percentile, `q` in [0, 1], on sorted data.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    percentile_sorted(&s, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub r2: f64,
    /// `None` when there are too few samples for the predictor count.
    pub adjusted_r2: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub mean_bias: f64,
    pub median_bias: f64,
    pub bias_std: f64,
    pub n: usize,
}

pub fn regression_metrics(pred: &[f64], obs: &[f64]) -> Result<RegressionMetrics, EvalError> {
    if pred.len() != obs.len() {
        return Err(EvalError::LengthMismatch(pred.len(), obs.len()));
    }
    let n = pred.len();
    if n < 2 {
        return Err(EvalError::InsufficientData { need: 2, got: n });
    }
    let om = mean(obs);
    let ss_tot: f64 = obs.iter().map(|o| (o - om).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ConstantObservations);
    }
    let resid: Vec<f64> = pred.iter().zip(obs).map(|(p, o)| p - o).collect();
    let ss_res: f64 = resid.iter().map(|r| r * r).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    let p = ADJUSTED_R2_PREDICTORS;
    let adjusted_r2 = (n > p + 1).then(|| 1.0 - (1.0 - r2) * (n - 1) as f64 / (n - p - 1) as f64);
    let mean_bias = mean(&resid);
    Ok(RegressionMetrics {
        r2,
        adjusted_r2,
        mae: resid.iter().map(|r| r.abs()).sum::<f64>() / n as f64,
        rmse: (ss_res / n as f64).sqrt(),
        mean_bias,
        median_bias: median(&resid),
        bias_std: central_moment(&resid, mean_bias, 2).sqrt(),
        n,
    })
}

/// Moments use the population convention; kurtosis is non-excess (normal = 3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub p95_abs: f64,
    pub p99_abs: f64,
    pub max_abs: f64,
    pub coverage_1ppm: f64,
    pub coverage_2ppm: f64,
    pub coverage_2p5ppm: f64,
    pub ci95_halfwidth: f64,
    pub n: usize,
}

/// Share of residuals with `|r| <= band`.
pub fn coverage(residuals: &[f64], band: f64) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    residuals.iter().filter(|r| r.abs() <= band).count() as f64 / residuals.len() as f64
}

pub fn residual_stats(residuals: &[f64]) -> Result<ResidualStats, EvalError> {
    let n = residuals.len();
    if n < 4 {
        return Err(EvalError::InsufficientData { need: 4, got: n });
    }
    let m = mean(residuals);
    let m2 = central_moment(residuals, m, 2);
    if m2 == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    let std = m2.sqrt();
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    abs.sort_by(f64::total_cmp);
    Ok(ResidualStats {
        mean: m,
        std,
        skewness: central_moment(residuals, m, 3) / m2.powf(1.5),
        kurtosis: central_moment(residuals, m, 4) / (m2 * m2),
        p95_abs: percentile_sorted(&abs, 0.95),
        p99_abs: percentile_sorted(&abs, 0.99),
        max_abs: abs[n - 1],
        coverage_1ppm: coverage(residuals, 1.0),
        coverage_2ppm: coverage(residuals, 2.0),
        coverage_2p5ppm: coverage(residuals, 2.5),
        ci95_halfwidth: 1.96 * std,
        n,
    })
}

/// Terms of the asymptotic Kolmogorov series.
pub const KS_SERIES_TERMS: usize = 100;

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Jacobi-theta form of the CDF converges fast for small arguments.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=KS_SERIES_TERMS)
            .map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp())
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        2.0 * (1..=KS_SERIES_TERMS)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum::<f64>()
    };
    p.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64), EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    Ok((d, kolmogorov_sf(ne.sqrt() * d)))
}

/// Standardized mean difference with the pooled `(n_a + n_b − 2)` variance.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(EvalError::InsufficientData {
                need: 2,
                got: s.len(),
            });
        }
    }
    let (ma, mb) = (mean(a), mean(b));
    let ssa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let ssb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    let pooled = ((ssa + ssb) / (a.len() + b.len() - 2) as f64).sqrt();
    if pooled == 0.0 {
        return Err(EvalError::ZeroPooledVariance);
    }
    Ok((ma - mb) / pooled)
}

/// Ground-station monthly series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSeries {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub monthly: [Option<f64>; 12],
}

#[derive(Debug, Deserialize)]
struct StationRow {
    month: u32,
    xco2_ppm: f64,
}

impl StationSeries {
    /// `month,xco2_ppm` rows; months outside 1..=12 are rejected.
    pub fn read_csv<R: Read>(name: &str, lat: f64, lon: f64, reader: R) -> Result<Self, EvalError> {
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut monthly = [None; 12];
        for row in rd.deserialize() {
            let row: StationRow = row?;
            if !(1..=12).contains(&row.month) || !row.xco2_ppm.is_finite() {
                return Err(EvalError::InvalidStationRow(format!(
                    "month {} value {}",
                    row.month, row.xco2_ppm
                )));
            }
            monthly[row.month as usize - 1] = Some(row.xco2_ppm);
        }
        Ok(Self {
            name: name.to_string(),
            lat,
            lon,
            monthly,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W, stamp: &Stamp) -> Result<(), EvalError> {
        writeln!(w, "{}", stamp.comment())?;
        writeln!(w, "month,xco2_ppm")?;
        for (m, v) in self.monthly.iter().enumerate() {
            if let Some(v) = v {
                writeln!(w, "{},{v:.6}", m + 1)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusPreset {
    /// 1°, 3°, 5°.
    #[default]
    Wide,
    /// 0.5°, 1.5°, 2.5°.
    Narrow,
}

impl RadiusPreset {
    pub fn radii(self) -> Vec<f64> {
        match self {
            RadiusPreset::Wide => vec![1.0, 3.0, 5.0],
            RadiusPreset::Narrow => vec![0.5, 1.5, 2.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusValidation {
    pub radius_deg: f64,
    pub station_mean: f64,
    pub recon_mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Percent of the station mean.
    pub nrmse: f64,
    pub ks_d: Option<f64>,
    pub ks_p: f64,
    pub cohens_d: Option<f64>,
    pub n_matched: usize,
    pub n_steps: usize,
}

impl RadiusValidation {
    /// Row from already-aggregated statistics, as tabulated in station comparisons.
    pub fn from_summary(
        radius_deg: f64,
        station_mean: f64,
        recon_mean: f64,
        rmse: f64,
        ks_p: f64,
    ) -> Self {
        Self {
            radius_deg,
            station_mean,
            recon_mean,
            bias: recon_mean - station_mean,
            rmse,
            nrmse: 100.0 * rmse / station_mean,
            ks_d: None,
            ks_p,
            cohens_d: None,
            n_matched: 0,
            n_steps: 0,
        }
    }

    /// `bias / rmse / nrmse / ks_p`.
    pub fn format_row(&self) -> String {
        format!(
            "{:.2} / {:.2} / {:.3} / {:.3}",
            self.bias, self.rmse, self.nrmse, self.ks_p
        )
    }
}

/// Cells whose centres lie within `radius_deg` (great-circle) of the station.
pub fn matched_cells(
    field: &[FieldRecord],
    lat: f64,
    lon: f64,
    radius_deg: f64,
) -> Vec<(usize, usize)> {
    let limit = degrees_to_km(radius_deg);
    let mut cells: Vec<(usize, usize)> = field
        .iter()
        .filter(|r| great_circle_km(lat, lon, r.lat, r.lon) <= limit)
        .map(|r| (r.row, r.col))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    cells
}

/// Compare the station series with the mean reconstructed field inside each radius.
pub fn multi_radius_validate(
    field: &[FieldRecord],
    station: &StationSeries,
    radii: &[f64],
) -> Result<Vec<RadiusValidation>, EvalError> {
    radii
        .iter()
        .map(|&radius_deg| {
            let limit = degrees_to_km(radius_deg);
            let mut per_month: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
            let mut cells = std::collections::BTreeSet::new();
            for r in field
                .iter()
                .filter(|r| great_circle_km(station.lat, station.lon, r.lat, r.lon) <= limit)
            {
                cells.insert((r.row, r.col));
                let e = per_month.entry(r.month).or_insert((0.0, 0));
                e.0 += r.xco2;
                e.1 += 1;
            }
            let pairs: Vec<(f64, f64)> = per_month
                .iter()
                .filter_map(|(m, (sum, n))| {
                    station.monthly[*m as usize - 1].map(|s| (sum / *n as f64, s))
                })
                .collect();
            if cells.is_empty() || pairs.is_empty() {
                return Err(EvalError::NoMatchedCells { radius_deg });
            }
            let recon: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let stat: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let diffs: Vec<f64> = pairs.iter().map(|(r, s)| r - s).collect();
            let (station_mean, recon_mean) = (mean(&stat), mean(&recon));
            let rmse = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
            let (ks_d, ks_p) = ks_two_sample(&recon, &stat)?;
            Ok(RadiusValidation {
                radius_deg,
                station_mean,
                recon_mean,
                bias: mean(&diffs),
                rmse,
                nrmse: 100.0 * rmse / station_mean,
                ks_d: Some(ks_d),
                ks_p,
                cohens_d: cohens_d(&recon, &stat).ok(),
                n_matched: cells.len(),
                n_steps: pairs.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalFidelity {
    pub r: f64,
    pub r2: f64,
    pub rmse: f64,
    /// OLS of reconstructed on station: `recon = slope · station + intercept`.
    pub slope: f64,
    pub intercept: f64,
    pub monthly_bias: [Option<f64>; 12],
    pub n_months: usize,
}

/// Pearson correlation of paired samples; `None` if either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn seasonal_cycle_fidelity(
    recon: &[Option<f64>; 12],
    station: &[Option<f64>; 12],
) -> Result<SeasonalFidelity, EvalError> {
    let mut monthly_bias = [None; 12];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for m in 0..12 {
        if let (Some(r), Some(s)) = (recon[m], station[m]) {
            monthly_bias[m] = Some(r - s);
            xs.push(s);
            ys.push(r);
        }
    }
    if xs.len() < 3 {
        return Err(EvalError::InsufficientOverlap(xs.len()));
    }
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(EvalError::ConstantObservations);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let r = pearson(&xs, &ys).unwrap_or(0.0);
    let rmse = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - x).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(SeasonalFidelity {
        r,
        r2: r * r,
        rmse,
        slope,
        intercept: my - slope * mx,
        monthly_bias,
        n_months: xs.len(),
    })
}

/// Field-level comparison against the station-free synthetic truth, when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthComparison {
    pub method: String,
    pub rmse: f64,
    pub within_1ppm: f64,
    pub n: usize,
}

pub fn truth_comparison(
    method: &str,
    pred: &[f64],
    truth: &[f64],
) -> Result<TruthComparison, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let n = pred.len();
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    let within = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| (*p - *t).abs() <= 1.0)
        .count();
    Ok(TruthComparison {
        method: method.to_string(),
        rmse: (sq / n as f64).sqrt(),
        within_1ppm: within as f64 / n as f64,
        n,
    })
}

/// Hold-out section: regression metrics plus residual distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSection {
    pub metrics: RegressionMetrics,
    pub residuals: ResidualStats,
    /// Left empty: no formula for this index is configured.
    pub reliability_index: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config_hash: String,
    pub seed: u64,
    pub holdout: Option<HoldoutSection>,
    pub station: Option<String>,
    pub radius_validation: Vec<RadiusValidation>,
    pub seasonal_cycle: Option<SeasonalFidelity>,
    pub truth_comparison: Vec<TruthComparison>,
}

impl ValidationReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    /// Flat `section,key,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        writeln!(
            w,
            "{}",
            Stamp::new(self.config_hash.clone(), self.seed).comment()
        )?;
        writeln!(w, "section,key,value")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        if let Some(h) = &self.holdout {
            let m = &h.metrics;
            for (k, v) in [
                ("r2", Some(m.r2)),
                ("adjusted_r2", m.adjusted_r2),
                ("mae", Some(m.mae)),
                ("rmse", Some(m.rmse)),
                ("mean_bias", Some(m.mean_bias)),
                ("median_bias", Some(m.median_bias)),
                ("bias_std", Some(m.bias_std)),
                ("n", Some(m.n as f64)),
            ] {
                writeln!(w, "holdout,{k},{}", opt(v))?;
            }
            let r = &h.residuals;
            for (k, v) in [
                ("mean", r.mean),
                ("std", r.std),
                ("skewness", r.skewness),
                ("kurtosis", r.kurtosis),
                ("p95_abs", r.p95_abs),
                ("p99_abs", r.p99_abs),
                ("max_abs", r.max_abs),
                ("coverage_1ppm", r.coverage_1ppm),
                ("coverage_2ppm", r.coverage_2ppm),
                ("coverage_2p5ppm", r.coverage_2p5ppm),
                ("ci95_halfwidth", r.ci95_halfwidth),
            ] {
                writeln!(w, "residuals,{k},{v}")?;
            }
            writeln!(
                w,
                "residuals,reliability_index,{}",
                opt(h.reliability_index)
            )?;
        }
        for rv in &self.radius_validation {
            let sec = format!("radius_{}", rv.radius_deg);
            for (k, v) in [
                ("station_mean", Some(rv.station_mean)),
                ("recon_mean", Some(rv.recon_mean)),
                ("bias", Some(rv.bias)),
                ("rmse", Some(rv.rmse)),
                ("nrmse", Some(rv.nrmse)),
                ("ks_d", rv.ks_d),
                ("ks_p", Some(rv.ks_p)),
                ("cohens_d", rv.cohens_d),
                ("n_matched", Some(rv.n_matched as f64)),
                ("n_steps", Some(rv.n_steps as f64)),
            ] {
                writeln!(w, "{sec},{k},{}", opt(v))?;
            }
        }
        if let Some(s) = &self.seasonal_cycle {
            for (k, v) in [
                ("r", s.r),
                ("r2", s.r2),
                ("rmse", s.rmse),
                ("slope", s.slope),
                ("intercept", s.intercept),
            ] {
                writeln!(w, "seasonal_cycle,{k},{v}")?;
            }
            for (m, b) in s.monthly_bias.iter().enumerate() {
                writeln!(w, "seasonal_cycle,bias_month_{},{}", m + 1, opt(*b))?;
            }
        }
        for t in &self.truth_comparison {
            writeln!(w, "truth_{},rmse,{}", t.method, t.rmse)?;
            writeln!(w, "truth_{},within_1ppm,{}", t.method, t.within_1ppm)?;
            writeln!(w, "truth_{},n,{}", t.method, t.n)?;
        }
        Ok(())
    }
}
