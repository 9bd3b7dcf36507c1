//! Gaussian linear-regression problems.

use drago_core::model::DatasetMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Features and true weights are standard normal; `y = X w_true + noise · eps`.
pub fn synthesize_problem(n: usize, d: usize, noise_sigma: f64, seed: u64) -> Result<DatasetMatrix> {
    if n == 0 || d == 0 {
        return Err(BenchError::Config(format!("synthetic data needs n, d ≥ 1, got n = {n}, d = {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let w_true: Vec<f64> = (0..d).map(|_| draw()).collect();
    let x: Vec<f64> = (0..n * d).map(|_| draw()).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let clean: f64 = x[i * d..(i + 1) * d].iter().zip(&w_true).map(|(a, b)| a * b).sum();
            clean + noise_sigma * draw()
        })
        .collect();
    Ok(DatasetMatrix::regression(x, n, d, y)?)
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<DatasetMatrix> {
        synthesize_problem(self.n, self.d, self.noise, self.seed)
    }
}
