//! Brute-force k-nearest neighbours on standardised columns.

use super::scaling::Standardizer;
use crate::data_io::TaskKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Knn {
    scaler: Standardizer,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    k: usize,
    task: TaskKind,
}

impl Knn {
    pub fn fit(x: &[Vec<f64>], y: &[f64], task: TaskKind, k: usize) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidArgument("empty design matrix".into()));
        }
        if k == 0 || k > x.len() {
            return Err(Error::InvalidArgument(format!(
                "k_neighbors = {k} with {} training rows",
                x.len()
            )));
        }
        let scaler = Standardizer::fit(x);
        Ok(Self {
            x: scaler.transform(x),
            scaler,
            y: y.to_vec(),
            k,
            task,
        })
    }

    /// Indices of the `k` nearest rows; equal distances favour lower indices.
    pub fn neighbours(&self, row: &[f64]) -> Vec<usize> {
        let q = self.scaler.transform_row(row);
        let mut d: Vec<(f64, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(self.k).map(|(_, i)| i).collect()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter()
            .map(|row| {
                let nb = self.neighbours(row);
                match self.task {
                    TaskKind::Regression => {
                        nb.iter().map(|&i| self.y[i]).sum::<f64>() / nb.len() as f64
                    }
                    TaskKind::Classification => {
                        let mut labels: Vec<f64> = nb.iter().map(|&i| self.y[i]).collect();
                        labels.sort_by(f64::total_cmp);
                        let mut best = (labels[0], 0usize);
                        let mut i = 0;
                        while i < labels.len() {
                            let j = labels[i..].iter().take_while(|&&v| v == labels[i]).count();
                            if j > best.1 {
                                best = (labels[i], j);
                            }
                            i += j;
                        }
                        best.0
                    }
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_nn_returns_duplicate_label() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 5.0], vec![2.0, 1.0]];
        let y = vec![4.0, 9.0, 2.0];
        let m = Knn::fit(&x, &y, TaskKind::Classification, 1).unwrap();
        assert_eq!(m.predict(&[vec![1.0, 5.0]]), vec![9.0]);
        let r = Knn::fit(&x, &y, TaskKind::Regression, 1).unwrap();
        assert_eq!(r.predict(&[vec![2.0, 1.0]]), vec![2.0]);
    }

    #[test]
    fn ties_prefer_lower_rows() {
        let x = vec![vec![-1.0], vec![1.0], vec![3.0]];
        let m = Knn::fit(&x, &[0.0, 1.0, 1.0], TaskKind::Classification, 1).unwrap();
        assert_eq!(m.neighbours(&[0.0]), vec![0]);
    }

    #[test]
    fn rejects_large_k() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(Knn::fit(&x, &[0.0, 1.0], TaskKind::Regression, 3).is_err());
    }
}
