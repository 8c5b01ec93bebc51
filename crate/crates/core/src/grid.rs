//! Sounding-to-grid binning on a regular plate-carrée degree grid.
//!
//! Soundings are assigned to the cell whose lower-left corner is the floor of
//! their offset from the grid origin. Per-cell statistics are computed from the
//! retained value list after a total-order sort, so results do not depend on
//! record order or on how the input was partitioned.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("point ({lat}, {lon}) lies outside the grid extent")]
    OutOfExtent { lat: f64, lon: f64 },
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Minimum accepted XCO₂ retrieval (ppm).
pub const XCO2_MIN: f64 = 300.0;
/// Maximum accepted XCO₂ retrieval (ppm).
pub const XCO2_MAX: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub cell_size: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lat_min: 50.0,
            lat_max: 53.0,
            lon_min: -100.0,
            lon_max: -97.0,
            cell_size: 0.25,
        }
    }
}

/// Grid cell index; `row` counts up from `lat_min`, `col` from `lon_min`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub row: usize,
    pub col: usize,
}

impl CellId {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl GridSpec {
    pub fn new(
        lat_min: f64,
        lat_max: f64,
        lon_min: f64,
        lon_max: f64,
        cell_size: f64,
    ) -> Result<Self, GridError> {
        let spec = Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            cell_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let finite = [
            self.lat_min,
            self.lat_max,
            self.lon_min,
            self.lon_max,
            self.cell_size,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(GridError::InvalidSpec("non-finite bound".into()));
        }
        if self.lat_min >= self.lat_max {
            return Err(GridError::InvalidSpec(
                "lat_min must be below lat_max".into(),
            ));
        }
        if self.lon_min >= self.lon_max {
            return Err(GridError::InvalidSpec(
                "lon_min must be below lon_max".into(),
            ));
        }
        if self.cell_size <= 0.0 {
            return Err(GridError::InvalidSpec("cell_size must be positive".into()));
        }
        if self.lat_min < -90.0
            || self.lat_max > 90.0
            || self.lon_min < -180.0
            || self.lon_max > 180.0
        {
            return Err(GridError::InvalidSpec(
                "extent exceeds geographic bounds".into(),
            ));
        }
        Ok(())
    }

    fn axis_cells(extent: f64, cell: f64) -> usize {
        // Tolerate representation error: 3.0 / 0.25 must give 12, not 13.
        let ratio = extent / cell;
        let rounded = ratio.round();
        let n = if (ratio - rounded).abs() < 1e-9 {
            rounded
        } else {
            ratio.ceil()
        };
        (n as usize).max(1)
    }

    pub fn n_rows(&self) -> usize {
        Self::axis_cells(self.lat_max - self.lat_min, self.cell_size)
    }

    pub fn n_cols(&self) -> usize {
        Self::axis_cells(self.lon_max - self.lon_min, self.cell_size)
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows() * self.n_cols()
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    pub fn cell_center(&self, cell: CellId) -> (f64, f64) {
        (
            self.lat_min + (cell.row as f64 + 0.5) * self.cell_size,
            self.lon_min + (cell.col as f64 + 0.5) * self.cell_size,
        )
    }

    /// Midpoint of the extent, the default centroid for distance features.
    pub fn midpoint(&self) -> (f64, f64) {
        (
            (self.lat_min + self.lat_max) / 2.0,
            (self.lon_min + self.lon_max) / 2.0,
        )
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        let cols = self.n_cols();
        (0..self.n_rows()).flat_map(move |r| (0..cols).map(move |c| CellId::new(r, c)))
    }
}

/// Nearest-neighbour binning of a point onto the grid.
///
/// Points on the upper lat/lon boundary clamp into the last row/column so the
/// grid partitions the closed extent.
pub fn assign_cell(lat: f64, lon: f64, spec: &GridSpec) -> Result<CellId, GridError> {
    if !lat.is_finite() || !lon.is_finite() || !spec.contains(lat, lon) {
        return Err(GridError::OutOfExtent { lat, lon });
    }
    let row = (((lat - spec.lat_min) / spec.cell_size).floor() as usize).min(spec.n_rows() - 1);
    let col = (((lon - spec.lon_min) / spec.cell_size).floor() as usize).min(spec.n_cols() - 1);
    Ok(CellId { row, col })
}

/// One satellite retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundingRecord {
    pub lat: f64,
    pub lon: f64,
    #[serde(rename = "time_iso8601")]
    pub time: DateTime<Utc>,
    #[serde(rename = "xco2_ppm")]
    pub xco2: f64,
    #[serde(rename = "sigma_ppm")]
    pub sigma: f64,
}

impl SoundingRecord {
    /// Range checks applied before aggregation.
    pub fn check(&self) -> Result<(), String> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("latitude {} outside [-90, 90]", self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("longitude {} outside [-180, 180]", self.lon));
        }
        if !(XCO2_MIN..=XCO2_MAX).contains(&self.xco2) {
            return Err(format!(
                "xco2 {} outside [{XCO2_MIN}, {XCO2_MAX}] ppm",
                self.xco2
            ));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(format!(
                "sigma {} must be finite and non-negative",
                self.sigma
            ));
        }
        Ok(())
    }

    /// Calendar month, 1..=12, in UTC.
    pub fn month(&self) -> u32 {
        self.time.month()
    }

    pub fn day_of_year(&self) -> u32 {
        self.time.ordinal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoyMetrics {
    pub first: u32,
    pub last: u32,
    pub mean: f64,
}

/// Aggregate statistics for one grid cell.
///
/// `std` is the population standard deviation (divide by n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCellSeries {
    pub cell: CellId,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    /// Calendar-month means; `None` where no sounding fell in that month.
    pub monthly: [Option<f64>; 12],
    pub monthly_count: [usize; 12],
    /// Mean retrieval uncertainty of the cell's soundings.
    pub sigma_mean: f64,
    pub doy: DoyMetrics,
}

impl GridCellSeries {
    pub fn observed_months(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.monthly
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|x| (i as u32 + 1, x)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Obs {
    xco2: f64,
    sigma: f64,
    month: u32,
    doy: u32,
}

impl Obs {
    fn total_cmp(&self, other: &Self) -> Ordering {
        self.xco2
            .total_cmp(&other.xco2)
            .then(self.doy.cmp(&other.doy))
            .then(self.month.cmp(&other.month))
            .then(self.sigma.total_cmp(&other.sigma))
    }
}

/// Mergeable per-cell partial state; holds the raw observations so the median
/// and the sort-ordered sums are exact after any merge order.
#[derive(Debug, Clone, Default)]
pub struct CellAccumulator {
    obs: Vec<Obs>,
}

impl CellAccumulator {
    pub fn push(&mut self, rec: &SoundingRecord) {
        self.obs.push(Obs {
            xco2: rec.xco2,
            sigma: rec.sigma,
            month: rec.month(),
            doy: rec.day_of_year(),
        });
    }

    pub fn merge(&mut self, other: CellAccumulator) {
        self.obs.extend(other.obs);
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn finish(mut self, cell: CellId) -> Option<GridCellSeries> {
        if self.obs.is_empty() {
            return None;
        }
        self.obs.sort_by(Obs::total_cmp);
        let n = self.obs.len();
        let values: Vec<f64> = self.obs.iter().map(|o| o.xco2).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            0.5 * (values[n / 2 - 1] + values[n / 2])
        };

        let mut sums = [0.0f64; 12];
        let mut counts = [0usize; 12];
        for o in &self.obs {
            sums[o.month as usize - 1] += o.xco2;
            counts[o.month as usize - 1] += 1;
        }
        let mut monthly = [None; 12];
        for m in 0..12 {
            if counts[m] > 0 {
                monthly[m] = Some(sums[m] / counts[m] as f64);
            }
        }
        let doys = self.obs.iter().map(|o| o.doy);
        let first = doys.clone().min().unwrap_or(0);
        let last = doys.clone().max().unwrap_or(0);
        let doy_mean = doys.map(f64::from).sum::<f64>() / n as f64;
        let sigma_mean = self.obs.iter().map(|o| o.sigma).sum::<f64>() / n as f64;

        Some(GridCellSeries {
            cell,
            mean,
            median,
            std: var.sqrt(),
            min: values[0],
            max: values[n - 1],
            count: n,
            monthly,
            monthly_count: counts,
            sigma_mean,
            doy: DoyMetrics {
                first,
                last,
                mean: doy_mean,
            },
        })
    }
}

/// Partial aggregation state for a chunk of records.
pub fn accumulate(
    records: &[SoundingRecord],
    spec: &GridSpec,
) -> Result<BTreeMap<CellId, CellAccumulator>, GridError> {
    let mut acc: BTreeMap<CellId, CellAccumulator> = BTreeMap::new();
    for rec in records {
        let cell = assign_cell(rec.lat, rec.lon, spec)?;
        acc.entry(cell).or_default().push(rec);
    }
    Ok(acc)
}

/// Bin records and compute per-cell statistics. Cells without records are absent.
pub fn aggregate(
    records: &[SoundingRecord],
    spec: &GridSpec,
) -> Result<BTreeMap<CellId, GridCellSeries>, GridError> {
    aggregate_partitioned(&[records], spec)
}

/// Same result as [`aggregate`] for any partitioning of the input.
pub fn aggregate_partitioned(
    chunks: &[&[SoundingRecord]],
    spec: &GridSpec,
) -> Result<BTreeMap<CellId, GridCellSeries>, GridError> {
    let mut merged: BTreeMap<CellId, CellAccumulator> = BTreeMap::new();
    for chunk in chunks {
        for (cell, part) in accumulate(chunk, spec)? {
            merged.entry(cell).or_default().merge(part);
        }
    }
    Ok(merged
        .into_iter()
        .filter_map(|(cell, acc)| acc.finish(cell).map(|s| (cell, s)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Fall,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Fall];

    /// DJF / MAM / JJA / SON.
    pub fn of_month(month: u32) -> Season {
        match month {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Fall,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Season::Winter => "Winter",
            Season::Spring => "Spring",
            Season::Summer => "Summer",
            Season::Fall => "Fall",
        }
    }

    pub fn months_label(self) -> &'static str {
        match self {
            Season::Winter => "December-February",
            Season::Spring => "March-May",
            Season::Summer => "June-August",
            Season::Fall => "September-November",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SeasonFractions {
    pub winter: f64,
    pub spring: f64,
    pub summer: f64,
    pub fall: f64,
}

impl SeasonFractions {
    pub fn get(&self, season: Season) -> f64 {
        match season {
            Season::Winter => self.winter,
            Season::Spring => self.spring,
            Season::Summer => self.summer,
            Season::Fall => self.fall,
        }
    }

    pub fn total(&self) -> f64 {
        self.winter + self.spring + self.summer + self.fall
    }

    /// Tab-separated table in descending share order, one `Season\tMonths\tPct%` row each.
    pub fn format_table(&self) -> String {
        let mut seasons = Season::ALL.to_vec();
        seasons.sort_by(|a, b| self.get(*b).total_cmp(&self.get(*a)));
        let mut out = String::from("Season\tMonths\tObservation Percentage (%)\n");
        for s in seasons {
            out.push_str(&format!(
                "{}\t{}\t{:.1}%\n",
                s.label(),
                s.months_label(),
                100.0 * self.get(s)
            ));
        }
        out
    }
}

/// Share of records falling in each meteorological season. All zeros for empty input.
pub fn seasonal_histogram(records: &[SoundingRecord]) -> SeasonFractions {
    seasonal_histogram_months(records.iter().map(SoundingRecord::month))
}

pub fn seasonal_histogram_months(months: impl IntoIterator<Item = u32>) -> SeasonFractions {
    let mut counts = [0usize; 4];
    for m in months {
        counts[Season::of_month(m) as usize] += 1;
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return SeasonFractions::default();
    }
    let f = |i: usize| counts[i] as f64 / n as f64;
    SeasonFractions {
        winter: f(0),
        spring: f(1),
        summer: f(2),
        fall: f(3),
    }
}

/// Read soundings from CSV (`lat,lon,time_iso8601,xco2_ppm,sigma_ppm`), applying range checks.
/// Lines starting with `#` are ignored.
pub fn read_soundings_csv<R: Read>(reader: R) -> Result<Vec<SoundingRecord>, GridError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (index, row) in rdr.deserialize::<SoundingRecord>().enumerate() {
        let rec = row?;
        rec.check()
            .map_err(|reason| GridError::InvalidRecord { index, reason })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_soundings_csv<W: Write>(
    writer: W,
    records: &[SoundingRecord],
) -> Result<(), GridError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lat", "lon", "time_iso8601", "xco2_ppm", "sigma_ppm"])?;
    for r in records {
        w.write_record([
            format!("{:.5}", r.lat),
            format!("{:.5}", r.lon),
            r.time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            format!("{:.4}", r.xco2),
            format!("{:.4}", r.sigma),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write `row,col,lat_center,lon_center,mean,median,std,min,max,count,m01..m12`.
pub fn write_cells_csv<W: Write>(
    writer: W,
    cells: &BTreeMap<CellId, GridCellSeries>,
    spec: &GridSpec,
) -> Result<(), GridError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = [
        "row",
        "col",
        "lat_center",
        "lon_center",
        "mean",
        "median",
        "std",
        "min",
        "max",
        "count",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=12).map(|m| format!("m{m:02}")));
    w.write_record(&header)?;
    for s in cells.values() {
        let (lat, lon) = spec.cell_center(s.cell);
        let mut row = vec![
            s.cell.row.to_string(),
            s.cell.col.to_string(),
            format!("{lat:.4}"),
            format!("{lon:.4}"),
            format!("{:.4}", s.mean),
            format!("{:.4}", s.median),
            format!("{:.4}", s.std),
            format!("{:.4}", s.min),
            format!("{:.4}", s.max),
            s.count.to_string(),
        ];
        row.extend(
            s.monthly
                .iter()
                .map(|m| m.map(|v| format!("{v:.4}")).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn rec(lat: f64, lon: f64, month: u32, xco2: f64) -> SoundingRecord {
        SoundingRecord {
            lat,
            lon,
            time: Utc.with_ymd_and_hms(2024, month, 15, 12, 0, 0).unwrap(),
            xco2,
            sigma: 0.5,
        }
    }

    fn spec() -> GridSpec {
        GridSpec::new(40.0, 45.0, -100.0, -90.0, 0.25).unwrap()
    }

    #[test]
    fn cell_counts_use_ceiling() {
        let s = spec();
        assert_eq!((s.n_rows(), s.n_cols()), (20, 40));
        let odd = GridSpec::new(0.0, 1.1, 0.0, 1.0, 0.25).unwrap();
        assert_eq!((odd.n_rows(), odd.n_cols()), (5, 4));
        let thirds = GridSpec::new(50.0, 53.0, -100.0, -97.0, 0.25).unwrap();
        assert_eq!(thirds.n_cells(), 144);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(1.0, 1.0, 0.0, 1.0, 0.25).is_err());
        assert!(GridSpec::new(0.0, 1.0, 2.0, 1.0, 0.25).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn assign_corner_and_floor() {
        let s = spec();
        assert_eq!(assign_cell(40.0, -100.0, &s).unwrap(), CellId::new(0, 0));
        assert_eq!(
            assign_cell(40.30, -100.0 + 0.55, &s).unwrap(),
            CellId::new(1, 2)
        );
        assert_eq!(assign_cell(45.0, -90.0, &s).unwrap(), CellId::new(19, 39));
        assert!(matches!(
            assign_cell(45.01, -95.0, &s),
            Err(GridError::OutOfExtent { .. })
        ));
        assert!(assign_cell(f64::NAN, -95.0, &s).is_err());
    }

    #[test]
    fn singleton_stats() {
        let out = aggregate(&[rec(40.1, -99.9, 7, 418.0)], &spec()).unwrap();
        let c = &out[&CellId::new(0, 0)];
        assert_eq!(
            (c.mean, c.median, c.min, c.max, c.std, c.count),
            (418.0, 418.0, 418.0, 418.0, 0.0, 1)
        );
        assert_eq!(c.monthly[6], Some(418.0));
        assert_eq!(c.monthly.iter().filter(|m| m.is_some()).count(), 1);
    }

    #[test]
    fn three_value_stats_population_std() {
        let recs = [
            rec(40.1, -99.9, 1, 421.0),
            rec(40.1, -99.9, 1, 417.0),
            rec(40.2, -99.8, 3, 419.0),
        ];
        let out = aggregate(&recs, &spec()).unwrap();
        let c = &out[&CellId::new(0, 0)];
        assert!((c.mean - 419.0).abs() < 1e-12);
        assert_eq!(c.median, 419.0);
        // population variance: (4 + 0 + 4) / 3
        assert!((c.std - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!((c.min, c.max, c.count), (417.0, 421.0, 3));
        assert_eq!(c.monthly[0], Some(419.0));
        assert_eq!(c.monthly[2], Some(419.0));
        assert_eq!(c.monthly_count[0], 2);
    }

    #[test]
    fn empty_input_empty_map() {
        assert!(aggregate(&[], &spec()).unwrap().is_empty());
        assert_eq!(seasonal_histogram(&[]).total(), 0.0);
    }

    #[test]
    fn season_fractions() {
        let july: Vec<_> = (0..5)
            .map(|i| rec(40.1, -99.9, 7, 410.0 + i as f64))
            .collect();
        let h = seasonal_histogram(&july);
        assert_eq!((h.summer, h.winter, h.spring, h.fall), (1.0, 0.0, 0.0, 0.0));
        let monthly: Vec<_> = (1..=12).map(|m| rec(40.1, -99.9, m, 410.0)).collect();
        let h = seasonal_histogram(&monthly);
        for s in Season::ALL {
            assert_eq!(h.get(s), 0.25);
        }
    }

    #[test]
    fn season_table_format() {
        let f = SeasonFractions {
            winter: 0.019,
            spring: 0.268,
            summer: 0.565,
            fall: 0.148,
        };
        let table = f.format_table();
        let rows: Vec<&str> = table.lines().collect();
        assert_eq!(rows[1], "Summer\tJune-August\t56.5%");
        assert_eq!(rows[2], "Spring\tMarch-May\t26.8%");
        assert_eq!(rows[3], "Fall\tSeptember-November\t14.8%");
        assert_eq!(rows[4], "Winter\tDecember-February\t1.9%");
    }

    #[test]
    fn csv_roundtrip_and_checks() {
        let recs = vec![rec(40.1, -99.9, 7, 418.25), rec(41.0, -95.0, 2, 420.5)];
        let mut buf = Vec::new();
        write_soundings_csv(&mut buf, &recs).unwrap();
        let back = read_soundings_csv(buf.as_slice()).unwrap();
        assert_eq!(back, recs);

        let bad = "lat,lon,time_iso8601,xco2_ppm,sigma_ppm\n40,-99,2024-01-01T00:00:00Z,600,0.5\n";
        assert!(matches!(
            read_soundings_csv(bad.as_bytes()),
            Err(GridError::InvalidRecord { index: 0, .. })
        ));
        let garbage = "lat,lon,time_iso8601,xco2_ppm,sigma_ppm\nx,y,z,w,v\n";
        assert!(matches!(
            read_soundings_csv(garbage.as_bytes()),
            Err(GridError::Csv(_))
        ));
    }

    #[test]
    fn cells_csv_has_empty_missing_months() {
        let s = spec();
        let out = aggregate(&[rec(40.1, -99.9, 7, 418.0)], &s).unwrap();
        let mut buf = Vec::new();
        write_cells_csv(&mut buf, &out, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(
            lines[0].starts_with("row,col,lat_center,lon_center,mean,median,std,min,max,count,m01")
        );
        assert!(lines[0].ends_with("m12"));
        assert_eq!(
            lines[1],
            "0,0,40.1250,-99.8750,418.0000,418.0000,0.0000,418.0000,418.0000,1,,,,,,,418.0000,,,,,"
        );
    }
}
