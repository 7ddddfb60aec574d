//! Closed-form ridge regression on standardised columns.

use super::scaling::Standardizer;
use crate::data_io::TaskKind;
use crate::error::{Error, Result};

/// In-place Cholesky solve of the SPD system `a x = b` (`a` is `p x p`, row-major).
fn cholesky_solve(mut a: Vec<f64>, p: usize, b: &[f64]) -> Result<Vec<f64>> {
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > 0.0) {
            return Err(Error::Evaluation("singular ridge system".into()));
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    let mut z = b.to_vec();
    for i in 0..p {
        for k in 0..i {
            z[i] -= a[i * p + k] * z[k];
        }
        z[i] /= a[i * p + i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            z[i] -= a[k * p + i] * z[k];
        }
        z[i] /= a[i * p + i];
    }
    Ok(z)
}

/// Ridge model. Classification fits one-vs-rest indicator targets and
/// predicts the arg-max class.
#[derive(Debug, Clone)]
pub struct Ridge {
    scaler: Standardizer,
    intercepts: Vec<f64>,
    weights: Vec<Vec<f64>>,
    classes: Option<Vec<f64>>,
}

impl Ridge {
    pub fn fit(x: &[Vec<f64>], y: &[f64], task: TaskKind, alpha: f64) -> Result<Self> {
        if x.is_empty() || x[0].is_empty() {
            return Err(Error::InvalidArgument("empty design matrix".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument("ridge alpha must be > 0".into()));
        }
        let scaler = Standardizer::fit(x);
        let z = scaler.transform(x);
        let p = z[0].len();
        let mut gram = vec![0.0; p * p];
        for row in &z {
            for i in 0..p {
                for j in 0..=i {
                    gram[i * p + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                gram[j * p + i] = gram[i * p + j];
            }
            gram[i * p + i] += alpha;
        }
        let targets: Vec<Vec<f64>>;
        let classes = match task {
            TaskKind::Regression => {
                targets = vec![y.to_vec()];
                None
            }
            TaskKind::Classification => {
                let mut cls = y.to_vec();
                cls.sort_by(f64::total_cmp);
                cls.dedup();
                if cls.len() < 2 {
                    return Err(Error::Evaluation(
                        "single-class training fold for classification".into(),
                    ));
                }
                targets = cls
                    .iter()
                    .map(|c| y.iter().map(|v| if v == c { 1.0 } else { 0.0 }).collect())
                    .collect();
                Some(cls)
            }
        };
        let mut intercepts = Vec::with_capacity(targets.len());
        let mut weights = Vec::with_capacity(targets.len());
        for t in &targets {
            let mean = t.iter().sum::<f64>() / t.len() as f64;
            let mut rhs = vec![0.0; p];
            for (row, v) in z.iter().zip(t) {
                for (r, zi) in rhs.iter_mut().zip(row) {
                    *r += zi * (v - mean);
                }
            }
            weights.push(cholesky_solve(gram.clone(), p, &rhs)?);
            intercepts.push(mean);
        }
        Ok(Self {
            scaler,
            intercepts,
            weights,
            classes,
        })
    }

    fn scores(&self, row: &[f64]) -> Vec<f64> {
        let z = self.scaler.transform_row(row);
        self.weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| b + w.iter().zip(&z).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter()
            .map(|row| {
                let s = self.scores(row);
                match &self.classes {
                    None => s[0],
                    Some(cls) => {
                        let mut best = 0;
                        for c in 1..s.len() {
                            if s[c] > s[best] {
                                best = c;
                            }
                        }
                        cls[best]
                    }
                }
            })
            .collect()
    }
}
