use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{distances_from_coords, Dataset, DatasetOptions, DistanceMetric};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph::{KernelConfig, SensorGraph};

/// Parameters of the synthetic diffusion process
/// `x_{t+1} = (1 - beta) x_t + beta A x_t + amplitude sin(2 pi t / period + phase_i) + noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub beta: f64,
    pub period: f64,
    pub amplitude: f64,
    pub noise_std: f64,
    /// Phase gradient along x: `phase_i = 2 pi wave_number x_i`, which makes
    /// the periodic drive a wave travelling across the unit square.
    pub wave_number: f64,
    /// Discarded warm-up steps.
    pub burn_in: usize,
    /// Placements with any pair closer than this are re-drawn.
    pub min_separation: f64,
    pub kernel: KernelConfig,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            beta: 0.3,
            period: 48.0,
            amplitude: 1.0,
            noise_std: 0.1,
            wave_number: 0.5,
            burn_in: 96,
            min_separation: 1e-3,
            kernel: KernelConfig::default(),
        }
    }
}

fn place_sensors(n: usize, min_sep: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    loop {
        let coords: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let degenerate = (0..n).any(|i| {
            (i + 1..n).any(|j| DistanceMetric::Euclidean.distance(coords[i], coords[j]) < min_sep)
        });
        if !degenerate {
            return coords;
        }
    }
}

/// Generates a spatially correlated dataset on sensors scattered over the
/// unit square. Deterministic per seed.
pub fn synth_generate(
    n_sensors: usize,
    n_steps: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Dataset> {
    if n_sensors < 8 {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs at least 8 sensors, got {n_sensors}"
        )));
    }
    if !(params.period > 0.0) || !(params.noise_std >= 0.0) {
        return Err(Error::Config(
            "synthetic period must be positive and noise nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = place_sensors(n_sensors, params.min_separation, &mut rng);
    let dist = distances_from_coords(&coords, DistanceMetric::Euclidean);
    let ids: Vec<String> = (0..n_sensors).map(|i| format!("s{i:03}")).collect();
    let graph =
        SensorGraph::from_distances(ids, Some(coords.clone()), dist, &params.kernel, false)?;

    let noise = Normal::new(0.0, params.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let phase: Vec<f64> = coords
        .iter()
        .map(|c| 2.0 * std::f64::consts::PI * params.wave_number * c[0])
        .collect();
    let mut x: Vec<f64> = (0..n_sensors)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let total = params.burn_in + n_steps;
    let mut readings = Matrix::zeros(n_steps, n_sensors);
    for t in 0..total {
        if t >= params.burn_in {
            readings.row_mut(t - params.burn_in).copy_from_slice(&x);
        }
        let mut next = vec![0.0; n_sensors];
        for i in 0..n_sensors {
            let diffused: f64 = graph
                .adj_fwd
                .row(i)
                .iter()
                .zip(&x)
                .map(|(a, v)| a * v)
                .sum();
            let drive = params.amplitude
                * (2.0 * std::f64::consts::PI * t as f64 / params.period + phase[i]).sin();
            let eps = if params.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            next[i] = (1.0 - params.beta) * x[i] + params.beta * diffused + drive + eps;
        }
        x = next;
    }
    Dataset::new(
        readings,
        None,
        None,
        "1-step".into(),
        graph,
        &DatasetOptions {
            sensor_split_seed: seed,
            ..DatasetOptions::default()
        },
    )
}
