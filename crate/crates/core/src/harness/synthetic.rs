use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data_io::{Dataset, TaskKind};
use crate::error::{Error, Result};

/// Regression data with a purely multiplicative signal:
/// `y = x1 * x2 + e`, `e ~ N(0, (0.05 * std(x1 * x2))^2)`, all `x_j ~ U(-1, 1)`.
/// Columns `x3..` are distractors.
pub fn synthetic_product(n: usize, n_features: usize, seed: u64) -> Result<Dataset> {
    if n_features < 2 {
        return Err(Error::InvalidArgument("need at least x1 and x2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..n_features)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let signal: Vec<f64> = (0..n).map(|i| cols[0][i] * cols[1][i]).collect();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let sd = (signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let noise = Normal::new(0.0, 0.05 * sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let y = signal.iter().map(|s| s + noise.sample(&mut rng)).collect();
    let names = (1..=n_features).map(|j| format!("x{j}")).collect();
    Dataset::new(cols, names, y, TaskKind::Regression)
}
