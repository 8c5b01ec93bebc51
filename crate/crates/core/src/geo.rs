//! Spherical-earth helpers shared by the grid, feature and fusion code.

/// Mean earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle central angle between two points, in degrees of arc (haversine form).
pub fn central_angle_deg(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    (2.0 * h.sqrt().min(1.0).asin()).to_degrees()
}

/// Great-circle distance in km.
pub fn great_circle_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    degrees_to_km(central_angle_deg(lat1, lon1, lat2, lon2))
}

/// Arc length on the mean sphere for an angle given in degrees.
pub fn degrees_to_km(angle_deg: f64) -> f64 {
    angle_deg.to_radians() * EARTH_RADIUS_KM
}
