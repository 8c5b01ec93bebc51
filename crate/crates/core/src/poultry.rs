//! Facility density per region, density classes and how regional XCO₂
//! statistics vary across them.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Stamp;
use crate::eval::percentile_sorted;
use crate::grid::Season;

#[derive(Debug, Error)]
pub enum PoultryError {
    #[error("invalid region {name}: {reason}")]
    InvalidRegion { name: String, reason: String },
    #[error("region {0} has no positive latitude correction")]
    PolarRegion(String),
    #[error("need at least 3 regions, got {0}")]
    TooFewRegions(usize),
    #[error("input is constant")]
    ConstantInput,
    #[error("need at least {need} paired values, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("need at least 2 seasons, got {0}")]
    InsufficientSeasons(usize),
    #[error("month {0} missing from series")]
    MissingMonth(u32),
    #[error("unknown region {0} in XCO2 table")]
    UnknownRegion(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub area_km2: f64,
    pub mean_lat: f64,
    pub facility_count: u64,
    pub monthly_xco2: [Option<f64>; 12],
}

impl Region {
    pub fn new(name: &str, area_km2: f64, mean_lat: f64, facility_count: u64) -> Self {
        Self {
            name: name.into(),
            area_km2,
            mean_lat,
            facility_count,
            monthly_xco2: [None; 12],
        }
    }

    /// Mean over the months present.
    pub fn mean_xco2(&self) -> Option<f64> {
        let v: Vec<f64> = self.monthly_xco2.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Facilities per km², corrected by `cos(mean_lat)`.
pub fn facility_density(region: &Region) -> Result<f64, PoultryError> {
    let invalid = |reason: &str| PoultryError::InvalidRegion {
        name: region.name.clone(),
        reason: reason.into(),
    };
    if !(region.area_km2 > 0.0) || !region.area_km2.is_finite() {
        return Err(invalid("area must be positive"));
    }
    if !region.mean_lat.is_finite() {
        return Err(invalid("latitude must be finite"));
    }
    let c = region.mean_lat.to_radians().cos();
    if region.mean_lat.abs() >= 90.0 || c <= 0.0 {
        return Err(PoultryError::PolarRegion(region.name.clone()));
    }
    Ok(region.facility_count as f64 / (region.area_km2 * c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityClass {
    Low,
    Medium,
    High,
}

impl DensityClass {
    pub const ALL: [DensityClass; 3] =
        [DensityClass::High, DensityClass::Medium, DensityClass::Low];

    pub fn label(self) -> &'static str {
        match self {
            DensityClass::Low => "low",
            DensityClass::Medium => "medium",
            DensityClass::High => "high",
        }
    }
}

/// `ρ < low` is low, `low ≤ ρ < high` medium, `ρ ≥ high` high.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

impl Thresholds {
    pub const FIXED: Thresholds = Thresholds {
        low: 0.00075,
        high: 0.0015,
    };

    /// 33rd and 67th percentiles of the supplied densities.
    pub fn tertiles(densities: &[f64]) -> Result<Self, PoultryError> {
        if densities.len() < 3 {
            return Err(PoultryError::TooFewRegions(densities.len()));
        }
        let mut s = densities.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            low: percentile_sorted(&s, 0.33),
            high: percentile_sorted(&s, 0.67),
        })
    }

    pub fn classify(&self, density: f64) -> DensityClass {
        if density < self.low {
            DensityClass::Low
        } else if density < self.high {
            DensityClass::Medium
        } else {
            DensityClass::High
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifyMode {
    #[default]
    Fixed,
    Tertile,
}

pub fn classify(
    density: f64,
    mode: ClassifyMode,
    all_densities: &[f64],
) -> Result<DensityClass, PoultryError> {
    Ok(thresholds_for(mode, all_densities)?.classify(density))
}

pub fn thresholds_for(mode: ClassifyMode, densities: &[f64]) -> Result<Thresholds, PoultryError> {
    match mode {
        ClassifyMode::Fixed => Ok(Thresholds::FIXED),
        ClassifyMode::Tertile => Thresholds::tertiles(densities),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub r2: f64,
    pub n: usize,
}

impl Correlation {
    /// Share of variance explained, rounded to a whole percent: `~19%`.
    pub fn variance_explained_label(&self) -> String {
        format!("~{:.0}%", 100.0 * self.r2)
    }
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<Correlation, PoultryError> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(PoultryError::InsufficientData {
            need: 3,
            got: x.len().min(y.len()),
        });
    }
    let r = crate::eval::pearson(x, y).ok_or(PoultryError::ConstantInput)?;
    Ok(Correlation {
        r,
        r2: r * r,
        n: x.len(),
    })
}

/// Peak-to-trough over the seasons present.
pub fn seasonal_amplitude(seasonal_means: &[Option<f64>]) -> Result<f64, PoultryError> {
    let v: Vec<f64> = seasonal_means.iter().flatten().copied().collect();
    if v.len() < 2 {
        return Err(PoultryError::InsufficientSeasons(v.len()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// `value(to) − value(from)`, months 1-based.
pub fn monthly_transition(
    series: &[Option<f64>; 12],
    from_month: u32,
    to_month: u32,
) -> Result<f64, PoultryError> {
    let get = |m: u32| {
        if !(1..=12).contains(&m) {
            return Err(PoultryError::MissingMonth(m));
        }
        series[m as usize - 1].ok_or(PoultryError::MissingMonth(m))
    };
    Ok(get(to_month)? - get(from_month)?)
}

/// Mean of the available months in each season, in [`Season::ALL`] order.
pub fn seasonal_means(monthly: &[Option<f64>; 12]) -> [Option<f64>; 4] {
    std::array::from_fn(|si| {
        let season = Season::ALL[si];
        let v: Vec<f64> = (1..=12u32)
            .filter(|m| Season::of_month(*m) == season)
            .filter_map(|m| monthly[m as usize - 1])
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonCell {
    pub mean: f64,
    /// Sample std across regions; 0 for a single region.
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSeasonal {
    pub class: DensityClass,
    /// Winter, spring, summer, fall.
    pub seasons: [Option<SeasonCell>; 4],
    pub amplitude: Option<f64>,
    /// Mean across the class of each month.
    pub monthly: [Option<f64>; 12],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub name: String,
    pub density: f64,
    pub class: DensityClass,
    pub mean_xco2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub thresholds: Thresholds,
    pub regions: Vec<RegionRow>,
    pub correlation: Option<Correlation>,
    pub classes: Vec<ClassSeasonal>,
}

fn cell_of(values: &[f64]) -> Option<SeasonCell> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(SeasonCell { mean, std, n })
}

pub fn density_report(
    regions: &[Region],
    mode: ClassifyMode,
) -> Result<DensityReport, PoultryError> {
    let densities = regions
        .iter()
        .map(facility_density)
        .collect::<Result<Vec<_>, _>>()?;
    let thresholds = thresholds_for(mode, &densities)?;
    let rows: Vec<RegionRow> = regions
        .iter()
        .zip(&densities)
        .map(|(r, &d)| RegionRow {
            name: r.name.clone(),
            density: d,
            class: thresholds.classify(d),
            mean_xco2: r.mean_xco2(),
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.mean_xco2.map(|m| (r.density, m)))
        .unzip();
    let correlation = pearson_r(&xs, &ys).ok();
    let classes = DensityClass::ALL
        .iter()
        .map(|&class| {
            let members: Vec<&Region> = regions
                .iter()
                .zip(&rows)
                .filter(|(_, row)| row.class == class)
                .map(|(r, _)| r)
                .collect();
            let per_region: Vec<[Option<f64>; 4]> = members
                .iter()
                .map(|r| seasonal_means(&r.monthly_xco2))
                .collect();
            let seasons: [Option<SeasonCell>; 4] = std::array::from_fn(|s| {
                cell_of(&per_region.iter().filter_map(|m| m[s]).collect::<Vec<_>>())
            });
            let means: Vec<Option<f64>> = seasons.iter().map(|c| c.map(|c| c.mean)).collect();
            let monthly = std::array::from_fn(|m| {
                cell_of(
                    &members
                        .iter()
                        .filter_map(|r| r.monthly_xco2[m])
                        .collect::<Vec<_>>(),
                )
                .map(|c| c.mean)
            });
            ClassSeasonal {
                class,
                seasons,
                amplitude: seasonal_amplitude(&means).ok(),
                monthly,
            }
        })
        .collect();
    Ok(DensityReport {
        thresholds,
        regions: rows,
        correlation,
        classes,
    })
}

impl DensityReport {
    /// `name,density_per_km2,class,mean_xco2_ppm`.
    pub fn write_csv<W: Write>(&self, mut w: W, stamp: &Stamp) -> Result<(), PoultryError> {
        writeln!(w, "{}", stamp.comment())?;
        writeln!(w, "name,density_per_km2,class,mean_xco2_ppm")?;
        for r in &self.regions {
            let m = r.mean_xco2.map(|v| format!("{v:.4}")).unwrap_or_default();
            writeln!(w, "{},{:.6},{},{m}", r.name, r.density, r.class.label())?;
        }
        Ok(())
    }

    /// Seasons down, classes across, `mean ± std (n=k)` cells and a final amplitude row.
    pub fn seasonal_table(&self) -> String {
        let mut out = String::from("Season");
        for c in &self.classes {
            out.push_str(&format!("\t{}", c.class.label()));
        }
        out.push('\n');
        for (si, season) in Season::ALL.iter().enumerate() {
            out.push_str(season.label());
            for c in &self.classes {
                match c.seasons[si] {
                    Some(cell) => out.push_str(&format!(
                        "\t{:.2} ± {:.2} (n={})",
                        cell.mean, cell.std, cell.n
                    )),
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out.push_str("Amplitude");
        for c in &self.classes {
            match c.amplitude {
                Some(a) => out.push_str(&format!("\t{a:.2}")),
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
        out
    }
}

#[derive(Debug, Deserialize)]
struct RegionCsvRow {
    name: String,
    area_km2: f64,
    mean_lat: f64,
    facility_count: u64,
}

#[derive(Debug, Deserialize)]
struct XcoCsvRow {
    name: String,
    month: u32,
    xco2_ppm: f64,
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

/// Regions from `name,area_km2,mean_lat,facility_count`.
pub fn read_regions_csv<R: Read>(r: R) -> Result<Vec<Region>, PoultryError> {
    reader(r)
        .deserialize()
        .map(|row| {
            let row: RegionCsvRow = row?;
            Ok(Region::new(
                &row.name,
                row.area_km2,
                row.mean_lat,
                row.facility_count,
            ))
        })
        .collect()
}

/// Attach `name,month,xco2_ppm` rows to the matching regions.
pub fn attach_regional_xco2<R: Read>(regions: &mut [Region], r: R) -> Result<(), PoultryError> {
    let index: BTreeMap<String, usize> = regions
        .iter()
        .enumerate()
        .map(|(i, r)| (r.name.clone(), i))
        .collect();
    for row in reader(r).deserialize() {
        let row: XcoCsvRow = row?;
        let i = *index
            .get(&row.name)
            .ok_or_else(|| PoultryError::UnknownRegion(row.name.clone()))?;
        if !(1..=12).contains(&row.month) {
            return Err(PoultryError::MissingMonth(row.month));
        }
        regions[i].monthly_xco2[row.month as usize - 1] = Some(row.xco2_ppm);
    }
    Ok(())
}

pub fn write_regions_csv<W: Write>(
    mut w: W,
    regions: &[Region],
    stamp: &Stamp,
) -> Result<(), PoultryError> {
    writeln!(w, "{}", stamp.comment())?;
    writeln!(w, "name,area_km2,mean_lat,facility_count")?;
    for r in regions {
        writeln!(
            w,
            "{},{},{},{}",
            r.name, r.area_km2, r.mean_lat, r.facility_count
        )?;
    }
    Ok(())
}

pub fn write_regional_xco2_csv<W: Write>(
    mut w: W,
    regions: &[Region],
    stamp: &Stamp,
) -> Result<(), PoultryError> {
    writeln!(w, "{}", stamp.comment())?;
    writeln!(w, "name,month,xco2_ppm")?;
    for r in regions {
        for (m, v) in r.monthly_xco2.iter().enumerate() {
            if let Some(v) = v {
                writeln!(w, "{},{},{v:.4}", r.name, m + 1)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_examples() {
        assert!(
            (facility_density(&Region::new("a", 1000.0, 0.0, 100)).unwrap() - 0.1).abs() < 1e-15
        );
        assert!(
            (facility_density(&Region::new("b", 1000.0, 60.0, 100)).unwrap() - 0.2).abs() < 1e-12
        );
        assert!(matches!(
            facility_density(&Region::new("p", 10.0, 90.0, 1)),
            Err(PoultryError::PolarRegion(_))
        ));
        assert!(matches!(
            facility_density(&Region::new("z", 0.0, 45.0, 1)),
            Err(PoultryError::InvalidRegion { .. })
        ));
    }

    #[test]
    fn fixed_thresholds() {
        let t = Thresholds::FIXED;
        assert_eq!(t.classify(0.0005), DensityClass::Low);
        assert_eq!(t.classify(0.0012), DensityClass::Medium);
        assert_eq!(t.classify(0.0176), DensityClass::High);
        assert_eq!(t.classify(0.0015), DensityClass::High);
        assert_eq!(t.classify(0.00075), DensityClass::Medium);
    }

    #[test]
    fn tertiles_of_three() {
        let d = [1.0, 2.0, 3.0];
        let classes: Vec<_> = d
            .iter()
            .map(|&x| classify(x, ClassifyMode::Tertile, &d).unwrap())
            .collect();
        assert_eq!(
            classes,
            vec![DensityClass::Low, DensityClass::Medium, DensityClass::High]
        );
        assert!(matches!(
            Thresholds::tertiles(&[1.0, 2.0]),
            Err(PoultryError::TooFewRegions(2))
        ));
    }

    #[test]
    fn amplitude_and_transition() {
        assert_eq!(seasonal_amplitude(&[Some(1.0), Some(1.0)]).unwrap(), 0.0);
        assert!(matches!(
            seasonal_amplitude(&[Some(1.0), None]),
            Err(PoultryError::InsufficientSeasons(1))
        ));
        let flat = [Some(410.0); 12];
        assert_eq!(monthly_transition(&flat, 3, 4).unwrap(), 0.0);
        let mut s = [None; 12];
        s[2] = Some(1.0);
        assert!(matches!(
            monthly_transition(&s, 3, 4),
            Err(PoultryError::MissingMonth(4))
        ));
    }

    #[test]
    fn variance_label() {
        let c = Correlation {
            r: 0.434,
            r2: 0.434 * 0.434,
            n: 14,
        };
        assert_eq!(c.variance_explained_label(), "~19%");
    }
}
