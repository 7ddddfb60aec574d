use rand::Rng;

use super::tensor::Mat;

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameters with gradient and Adam moment buffers of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    grads: Vec<Mat>,
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let (r, c) = value.shape();
        self.names.push(name.into());
        self.values.push(value);
        self.grads.push(Mat::zeros(r, c));
        self.m.push(Mat::zeros(r, c));
        self.v.push(Mat::zeros(r, c));
        ParamId(self.values.len() - 1)
    }

    /// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) initialisation.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Mat::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar parameter count.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Mat {
        &self.grads[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        self.grads[id.0].add_assign(g);
    }

    pub fn accumulate_row(&mut self, id: ParamId, g: &[f64]) {
        let grad = &mut self.grads[id.0];
        assert_eq!(grad.rows(), 1);
        for (a, b) in grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn grads_finite(&self) -> bool {
        self.grads.iter().all(Mat::is_finite)
    }

    pub fn values_finite(&self) -> bool {
        self.values.iter().all(Mat::is_finite)
    }

    /// Flat view over all parameter scalars in store order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.values.iter().flat_map(|m| m.data().iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|m| m.data().iter().copied()).collect()
    }

    /// Scalar `k` in flat order.
    pub fn scalar_mut(&mut self, mut k: usize) -> &mut f64 {
        for m in &mut self.values {
            let n = m.data().len();
            if k < n {
                return &mut m.data_mut()[k];
            }
            k -= n;
        }
        panic!("scalar index out of range");
    }

    /// Bias-corrected Adam update; parameters with zero gradient history stay put.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.values.len() {
            let g = self.grads[i].data();
            let m = self.m[i].data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = self.v[i].data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let m = self.m[i].data();
            let v = self.v[i].data();
            let w = self.values[i].data_mut();
            for ((wi, mi), vi) in w.iter_mut().zip(m).zip(v) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *wi -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }

    /// Replaces all values (used when restoring checkpoints or snapshots).
    pub fn load_values(&mut self, values: Vec<Mat>) {
        assert_eq!(values.len(), self.values.len());
        for (old, new) in self.values.iter().zip(&values) {
            assert_eq!(old.shape(), new.shape());
        }
        self.values = values;
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }
}
