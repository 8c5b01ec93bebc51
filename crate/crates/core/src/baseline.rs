//! Inverse-distance weighting, the conventional gap-filling reference.

use thiserror::Error;

use crate::geo::great_circle_km;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("no observed cells to interpolate from")]
    NoObservations,
    #[error("power must be positive, got {0}")]
    InvalidPower(f64),
}

pub const DEFAULT_IDW_POWER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedPoint {
    pub lat: f64,
    pub lon: f64,
    pub value: f64,
}

/// `Σ v_i d_i^-p / Σ d_i^-p` over great-circle distances; a zero-distance
/// observation is returned exactly.
pub fn baseline_idw(
    observed: &[ObservedPoint],
    lat: f64,
    lon: f64,
    power: f64,
) -> Result<f64, BaselineError> {
    if observed.is_empty() {
        return Err(BaselineError::NoObservations);
    }
    if !(power > 0.0) {
        return Err(BaselineError::InvalidPower(power));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for p in observed {
        let d = great_circle_km(lat, lon, p.lat, p.lon);
        if d == 0.0 {
            return Ok(p.value);
        }
        let w = d.powf(-power);
        num += w * p.value;
        den += w;
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_hit_and_symmetry() {
        let obs = [
            ObservedPoint {
                lat: 50.0,
                lon: -99.0,
                value: 410.0,
            },
            ObservedPoint {
                lat: 50.0,
                lon: -98.0,
                value: 420.0,
            },
        ];
        assert_eq!(baseline_idw(&obs, 50.0, -99.0, 2.0).unwrap(), 410.0);
        // the meridian through -98.5 is equidistant from both points
        assert!((baseline_idw(&obs, 50.0, -98.5, 2.0).unwrap() - 415.0).abs() < 1e-9);
        assert_eq!(
            baseline_idw(&[], 0.0, 0.0, 2.0),
            Err(BaselineError::NoObservations)
        );
    }
}
