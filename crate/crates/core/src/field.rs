//! Gap-free monthly field: one record per cell and month.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Stamp;
use crate::grid::CellId;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Observed,
    Reconstructed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub row: usize,
    pub col: usize,
    pub lat: f64,
    pub lon: f64,
    pub month: u32,
    #[serde(rename = "xco2_ppm")]
    pub xco2: f64,
    #[serde(rename = "uncertainty_ppm")]
    pub uncertainty: f64,
    pub provenance: Provenance,
}

impl FieldRecord {
    pub fn cell(&self) -> CellId {
        CellId {
            row: self.row,
            col: self.col,
        }
    }
}

/// Share of records flagged reconstructed.
pub fn reconstructed_fraction(field: &[FieldRecord]) -> f64 {
    if field.is_empty() {
        return 0.0;
    }
    field
        .iter()
        .filter(|r| r.provenance == Provenance::Reconstructed)
        .count() as f64
        / field.len() as f64
}

pub fn write_field_csv<W: Write>(
    mut w: W,
    field: &[FieldRecord],
    stamp: &Stamp,
) -> Result<(), FieldError> {
    writeln!(w, "{}", stamp.comment())?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record([
        "row",
        "col",
        "lat",
        "lon",
        "month",
        "xco2_ppm",
        "uncertainty_ppm",
        "provenance",
    ])?;
    for r in field {
        let prov = match r.provenance {
            Provenance::Observed => "observed",
            Provenance::Reconstructed => "reconstructed",
        };
        cw.write_record([
            r.row.to_string(),
            r.col.to_string(),
            format!("{:.4}", r.lat),
            format!("{:.4}", r.lon),
            r.month.to_string(),
            format!("{:.6}", r.xco2),
            format!("{:.6}", r.uncertainty),
            prov.to_string(),
        ])?;
    }
    cw.flush()?;
    Ok(())
}

pub fn read_field_csv<R: Read>(reader: R) -> Result<Vec<FieldRecord>, FieldError> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    Ok(rd.deserialize().collect::<Result<Vec<FieldRecord>, _>>()?)
}
