//! Complex-Morlet CWT spectrograms of per-cell annual series.
//!
//! A cell's monthly means are placed on a 32-sample annual axis (`t = k / 32`),
//! gaps are filled with a climatological sinusoid, and the modulus of the
//! Morlet transform over 32 log-spaced scales is min-max normalized and
//! quantized to 8-bit levels. Rows of the spectrogram are scales, columns are
//! time.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_TIME: usize = 32;
pub const N_SCALES: usize = 32;
pub const MORLET_OMEGA0: f64 = 6.0;
/// Climatological seasonal amplitude used for gap filling, ppm.
pub const CLIM_AMPLITUDE: f64 = 3.0;
pub const CLIM_PHASE: f64 = -PI / 2.0;
pub const MIN_SCALE: f64 = 2.0;
pub const MAX_SCALE: f64 = 16.0;
/// Kernel half-width in units of scale; the Gaussian envelope is below 2e-8 beyond it.
const KERNEL_CUTOFF: f64 = 6.0;

#[derive(Debug, Error)]
pub enum WaveletError {
    #[error("series must have {expected} samples, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("no observed samples and no baseline mean supplied")]
    NoBaseline,
    #[error("invalid scale {0}: scales must be positive and finite")]
    InvalidScale(f64),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A gap-free 32-sample annual series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTimeSeries {
    pub values: Vec<f64>,
    /// `true` where the value is a climatological fill.
    pub gap_mask: Vec<bool>,
}

impl CellTimeSeries {
    pub fn fill_fraction(&self) -> f64 {
        self.gap_mask.iter().filter(|&&g| g).count() as f64 / self.gap_mask.len() as f64
    }
}

/// Time of sample `k` as a fraction of the year.
pub fn sample_time(k: usize) -> f64 {
    k as f64 / N_TIME as f64
}

/// Climatological cycle around `mean` at year fraction `t`.
pub fn climatology(mean: f64, t: f64) -> f64 {
    mean + CLIM_AMPLITUDE * (2.0 * PI * t + CLIM_PHASE).sin()
}

/// Place twelve calendar-month means on the 32-sample axis.
///
/// A sample is observed iff the month containing it is observed. Its value is
/// interpolated linearly (periodically) between the neighbouring month centres
/// when the bracketing month is also observed, else it takes the containing
/// month's value.
pub fn resample_monthly(monthly: &[Option<f64>; 12]) -> Vec<Option<f64>> {
    (0..N_TIME)
        .map(|k| {
            let t = sample_time(k);
            let containing = ((t * 12.0).floor() as usize).min(11);
            let own = monthly[containing]?;
            let p = t * 12.0 - 0.5;
            let lo = p.floor();
            let frac = p - lo;
            let m0 = (lo as i64).rem_euclid(12) as usize;
            let m1 = (m0 + 1) % 12;
            Some(match (monthly[m0], monthly[m1]) {
                (Some(a), Some(b)) => a + frac * (b - a),
                _ => own,
            })
        })
        .collect()
}

/// Fill missing samples with the climatological sinusoid around the baseline.
///
/// The baseline is `cell_mean` when supplied, otherwise the mean of the
/// observed samples. Observed samples pass through unchanged.
pub fn climatological_fill(
    samples: &[Option<f64>],
    cell_mean: Option<f64>,
) -> Result<CellTimeSeries, WaveletError> {
    if samples.len() != N_TIME {
        return Err(WaveletError::WrongLength {
            expected: N_TIME,
            got: samples.len(),
        });
    }
    let observed: Vec<f64> = samples.iter().flatten().copied().collect();
    if let Some(i) = samples
        .iter()
        .position(|s| s.is_some_and(|v| !v.is_finite()))
    {
        return Err(WaveletError::NonFinite(i));
    }
    let baseline = match cell_mean {
        Some(m) => m,
        None if !observed.is_empty() => observed.iter().sum::<f64>() / observed.len() as f64,
        None => return Err(WaveletError::NoBaseline),
    };
    let mut values = Vec::with_capacity(N_TIME);
    let mut gap_mask = Vec::with_capacity(N_TIME);
    for (k, s) in samples.iter().enumerate() {
        match s {
            Some(v) => {
                values.push(*v);
                gap_mask.push(false);
            }
            None => {
                values.push(climatology(baseline, sample_time(k)));
                gap_mask.push(true);
            }
        }
    }
    Ok(CellTimeSeries { values, gap_mask })
}

/// 32 logarithmically spaced scales from 2 to 16 samples.
pub fn default_scales() -> Vec<f64> {
    let ratio = (MAX_SCALE / MIN_SCALE).ln();
    (0..N_SCALES)
        .map(|i| MIN_SCALE * (ratio * i as f64 / (N_SCALES - 1) as f64).exp())
        .collect()
}

/// Complex Morlet mother wavelet `π^(-1/4) e^(iω₀u) e^(-u²/2)`.
pub fn morlet(u: f64) -> Complex64 {
    let env = PI.powf(-0.25) * (-0.5 * u * u).exp();
    Complex64::from_polar(env, MORLET_OMEGA0 * u)
}

/// Mirror index into `0..n` without repeating the edge sample.
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let r = i.rem_euclid(period);
    (if r >= n as i64 { period - r } else { r }) as usize
}

/// Precomputed, truncated Morlet kernels for a fixed scale grid.
#[derive(Debug, Clone)]
pub struct MorletBank {
    scales: Vec<f64>,
    /// `kernels[s][j + half[s]] = ψ*(j / s) / √s`.
    kernels: Vec<Vec<Complex64>>,
    half: Vec<usize>,
}

impl MorletBank {
    pub fn new(scales: &[f64]) -> Result<Self, WaveletError> {
        let mut kernels = Vec::with_capacity(scales.len());
        let mut half = Vec::with_capacity(scales.len());
        for &s in scales {
            if !(s > 0.0) || !s.is_finite() {
                return Err(WaveletError::InvalidScale(s));
            }
            let h = (KERNEL_CUTOFF * s).ceil() as usize;
            let norm = 1.0 / s.sqrt();
            let k: Vec<Complex64> = (-(h as i64)..=h as i64)
                .map(|j| morlet(j as f64 / s).conj() * norm)
                .collect();
            kernels.push(k);
            half.push(h);
        }
        Ok(Self {
            scales: scales.to_vec(),
            kernels,
            half,
        })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Coefficients, rows = scales, columns = time shifts.
    pub fn transform(&self, x: &[f64]) -> Array2<Complex64> {
        let n = x.len();
        let mut out = Array2::from_elem((self.scales.len(), n), Complex64::new(0.0, 0.0));
        for (si, kernel) in self.kernels.iter().enumerate() {
            let h = self.half[si] as i64;
            for tau in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (kj, w) in kernel.iter().enumerate() {
                    let idx = tau as i64 + kj as i64 - h;
                    acc += w * x[reflect_index(idx, n)];
                }
                out[[si, tau]] = acc;
            }
        }
        out
    }
}

/// CWT with complex Morlet kernels and reflection padding.
pub fn cwt_morlet(x: &[f64], scales: &[f64]) -> Result<Array2<Complex64>, WaveletError> {
    Ok(MorletBank::new(scales)?.transform(x))
}

/// Normalized 8-bit CWT modulus image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    /// Rows = scales, columns = time; values in `{0, 1/255, ..., 1}`.
    pub intensity: Array2<f64>,
    pub scales: Vec<f64>,
    pub fill_fraction: f64,
}

impl Spectrogram {
    pub fn zeros(scales: Vec<f64>) -> Self {
        Self {
            intensity: Array2::zeros((scales.len(), N_TIME)),
            scales,
            fill_fraction: 0.0,
        }
    }

    /// Integer levels 0..=255.
    pub fn levels(&self) -> Array2<u8> {
        self.intensity.mapv(|v| (v * 255.0).round() as u8)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), WaveletError> {
        for row in self.intensity.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Plain (P2) grayscale PGM, maxval 255; the top row is the largest scale.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), WaveletError> {
        let levels = self.levels();
        let (rows, cols) = levels.dim();
        writeln!(w, "P2\n{cols} {rows}\n255")?;
        for r in (0..rows).rev() {
            let line: Vec<String> = (0..cols).map(|c| levels[[r, c]].to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Min-max normalize `|c|` and quantize to 256 levels. Constant modulus maps to zeros.
pub fn to_spectrogram(
    coefficients: &Array2<Complex64>,
    scales: &[f64],
    fill_fraction: f64,
) -> Spectrogram {
    let modulus = coefficients.mapv(|c| c.norm());
    let lo = modulus.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = modulus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let intensity = if !(range > 0.0) || !range.is_finite() {
        Array2::zeros(modulus.dim())
    } else {
        modulus.mapv(|m| (255.0 * (m - lo) / range).round() / 255.0)
    };
    Spectrogram {
        intensity,
        scales: scales.to_vec(),
        fill_fraction,
    }
}

/// Demean a filled series, transform it and normalize the modulus.
pub fn series_spectrogram(series: &CellTimeSeries, bank: &MorletBank) -> Spectrogram {
    let mean = series.values.iter().sum::<f64>() / series.values.len() as f64;
    let centred: Vec<f64> = series.values.iter().map(|v| v - mean).collect();
    let coeffs = bank.transform(&centred);
    to_spectrogram(&coeffs, bank.scales(), series.fill_fraction())
}

/// Monthly means through resampling, climatological fill and CWT.
pub fn monthly_spectrogram(
    monthly: &[Option<f64>; 12],
    cell_mean: Option<f64>,
    bank: &MorletBank,
) -> Result<Spectrogram, WaveletError> {
    let series = climatological_fill(&resample_monthly(monthly), cell_mean)?;
    Ok(series_spectrogram(&series, bank))
}
