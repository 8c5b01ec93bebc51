//! Shared fixtures for the benchmarks.

use ndarray::Array2;
use rand::Rng;
use xco2_core::model::{model_rng, GeoContext, ModelInput, Neighbor};
use xco2_core::wavelet::default_scales;
use xco2_core::CellId;

/// `n` random model inputs with four fusion neighbours each.
pub fn random_inputs(n: usize, seed: u64) -> Vec<ModelInput> {
    let mut rng = model_rng(seed);
    (0..n)
        .map(|i| {
            let spectrogram = Array2::from_shape_simple_fn((32, 32), || rng.random::<f64>());
            let f: Vec<f64> = (0..23).map(|_| rng.random::<f64>() - 0.5).collect();
            let others = (1..=4)
                .map(|k| Neighbor {
                    cell: CellId::new(k, 0),
                    distance_km: 25.0 * k as f64,
                    features: f.clone(),
                })
                .collect();
            ModelInput {
                spectrogram,
                scales: default_scales(),
                geo: GeoContext::new(
                    51.0,
                    -98.5,
                    (i % 12) as u32 + 1,
                    CellId::new(0, 0),
                    f,
                    others,
                ),
            }
        })
        .collect()
}
