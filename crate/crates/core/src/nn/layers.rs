use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::Mat;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
/// Added to the logits of invalid actions.
pub const MASK_PENALTY: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

/// Affine map `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.insert_uniform(format!("{name}.w"), in_dim, out_dim, in_dim, rng);
        let b = bias.then(|| store.insert_uniform(format!("{name}.b"), 1, out_dim, in_dim, rng));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Mat) -> Result<Mat> {
        if x.cols() != self.in_dim {
            return Err(Error::Shape(format!(
                "linear expects {} inputs, got {}",
                self.in_dim,
                x.cols()
            )));
        }
        let mut y = x.matmul(store.value(self.w));
        if let Some(b) = self.b {
            let bias = store.value(b).data();
            for i in 0..y.rows() {
                for (v, bi) in y.row_mut(i).iter_mut().zip(bias) {
                    *v += bi;
                }
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, store: &mut ParamStore, x: &Mat, dy: &Mat) -> Mat {
        store.accumulate(self.w, &x.t_matmul(dy));
        if let Some(b) = self.b {
            store.accumulate_row(b, &dy.sum_rows());
        }
        dy.matmul_t(store.value(self.w))
    }
}

pub fn leaky_relu(x: &Mat) -> Mat {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
        .collect();
    Mat::from_vec(x.rows(), x.cols(), data)
}

pub fn leaky_relu_backward(x: &Mat, dy: &Mat) -> Mat {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { LEAKY_SLOPE * g })
        .collect();
    Mat::from_vec(x.rows(), x.cols(), data)
}

/// Per-row layer normalisation with learned gain and shift.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.insert(format!("{name}.gamma"), Mat::from_vec(1, dim, vec![1.0; dim]));
        let beta = store.insert(format!("{name}.beta"), Mat::zeros(1, dim));
        Self { gamma, beta, dim }
    }

    pub fn forward(&self, store: &ParamStore, x: &Mat) -> (Mat, LayerNormCache) {
        let d = x.cols() as f64;
        let gamma = store.value(self.gamma).data();
        let beta = store.value(self.beta).data();
        let mut xhat = Mat::zeros(x.rows(), x.cols());
        let mut y = Mat::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let r = x.row(i);
            let mean = r.iter().sum::<f64>() / d;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..x.cols() {
                let h = (r[j] - mean) * is;
                xhat[(i, j)] = h;
                y[(i, j)] = gamma[j] * h + beta[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &LayerNormCache, dy: &Mat) -> Mat {
        let (n, d) = dy.shape();
        let gamma = store.value(self.gamma).data().to_vec();
        let mut dgamma = vec![0.0; d];
        let mut dx = Mat::zeros(n, d);
        for i in 0..n {
            let g = dy.row(i);
            let xh = cache.xhat.row(i);
            let dxhat: Vec<f64> = g.iter().zip(&gamma).map(|(a, b)| a * b).collect();
            let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for j in 0..d {
                dgamma[j] += g[j] * xh[j];
                dx[(i, j)] = cache.inv_std[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
        }
        store.accumulate_row(self.gamma, &dgamma);
        store.accumulate_row(self.beta, &dy.sum_rows());
        dx
    }
}

/// Softmax after adding [`MASK_PENALTY`] to invalid entries.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    Ok(masked_log_softmax(logits, mask)?.iter().map(|v| v.exp()).collect())
}

pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::Shape(format!(
            "{} logits vs {} mask bits",
            logits.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&b| b) {
        return Err(Error::InvalidArgument("mask leaves no valid action".into()));
    }
    let shifted: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&z, &ok)| if ok { z } else { z + MASK_PENALTY })
        .collect();
    let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = shifted.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(shifted.iter().map(|z| z - max - lse).collect())
}

/// Feed-forward stack with LeakyReLU between layers (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of each layer; for layers > 0 this is the activation output.
    inputs: Vec<Mat>,
    /// Pre-activation outputs of every non-final layer.
    pre: Vec<Mat>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").out_dim
    }

    pub fn forward(&self, store: &ParamStore, x: &Mat) -> Result<(Mat, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(store, &h)?;
            inputs.push(h);
            if i + 1 < self.layers.len() {
                h = leaky_relu(&z);
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &MlpCache, dy: &Mat) -> Mat {
        let mut g = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                g = leaky_relu_backward(&cache.pre[i], &g);
            }
            g = self.layers[i].backward(store, &cache.inputs[i], &g);
        }
        g
    }
}
