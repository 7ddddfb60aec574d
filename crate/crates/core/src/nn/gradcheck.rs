//! Central finite-difference checks for the analytic backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::attention::{EncoderBlock, TokenEncoder};
use super::layers::{leaky_relu, leaky_relu_backward, LayerNorm, Linear, Mlp};
use super::params::ParamStore;
use super::tensor::Mat;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
/// Denominator floor so that gradients near zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// One kernel or network checked over several random instances.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn new(name: &str, errors: &[f64]) -> Self {
        let max = errors.iter().copied().fold(0.0, f64::max);
        Self {
            name: name.to_owned(),
            instances: errors.len(),
            max_rel_error: max,
            passed: max < REL_TOLERANCE && errors.iter().all(|e| e.is_finite()),
        }
    }
}

/// Compares the gradients already accumulated in `store` against central
/// differences of `loss` over every parameter scalar.
pub fn check_params<F>(store: &ParamStore, loss: F) -> f64
where
    F: Fn(&ParamStore) -> f64,
{
    let analytic = store.flat_grads();
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *probe.scalar_mut(k);
        *probe.scalar_mut(k) = orig + FD_STEP;
        let up = loss(&probe);
        *probe.scalar_mut(k) = orig - FD_STEP;
        let down = loss(&probe);
        *probe.scalar_mut(k) = orig;
        worst = worst.max(relative_error(a, (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Same as [`check_params`] for an input matrix.
pub fn check_input<F>(x: &Mat, analytic: &Mat, loss: F) -> f64
where
    F: Fn(&Mat) -> f64,
{
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for k in 0..x.data().len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + FD_STEP;
        let up = loss(&probe);
        probe.data_mut()[k] = orig - FD_STEP;
        let down = loss(&probe);
        probe.data_mut()[k] = orig;
        worst = worst.max(relative_error(analytic.data()[k], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

pub fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Random input bounded away from the LeakyReLU kink.
fn kink_free_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Mat::from_vec(rows, cols, data)
}

fn weighted_sum(out: &Mat, weights: &Mat) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Runs one instance: builds a module with `build`, forwards a random
/// input, backpropagates `dL/dout = R`, and checks both the parameter and
/// the input gradients.
fn check_module<B, Fw, Bw>(rng: &mut ChaCha8Rng, x: Mat, build: B, fwd: Fw, bwd: Bw) -> f64
where
    B: FnOnce(&mut ParamStore, &mut ChaCha8Rng),
    Fw: Fn(&ParamStore, &Mat) -> Mat,
    Bw: Fn(&mut ParamStore, &Mat, &Mat) -> Mat,
{
    let mut store = ParamStore::new();
    build(&mut store, rng);
    let out = fwd(&store, &x);
    let r = random_mat(rng, out.rows(), out.cols());
    let dx = bwd(&mut store, &x, &r);
    let p = check_params(&store, |s| weighted_sum(&fwd(s, &x), &r));
    let i = check_input(&x, &dx, |xx| weighted_sum(&fwd(&store, xx), &r));
    p.max(i)
}

/// Finite-difference suite for every kernel, `instances` random shapes each.
pub fn kernel_suite(instances: usize, seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut linear = Vec::new();
    let mut lrelu = Vec::new();
    let mut ln = Vec::new();
    let mut mlp = Vec::new();
    let mut block = Vec::new();
    let mut encoder = Vec::new();
    for _ in 0..instances {
        let (n, din, dout) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..6));

        let x = random_mat(&mut rng, n, din);
        let cell = std::cell::OnceCell::new();
        linear.push(check_module(
            &mut rng,
            x,
            |s, r| {
                cell.set(Linear::new(s, "l", din, dout, true, r)).unwrap();
            },
            |s, x| cell.get().unwrap().forward(s, x).unwrap(),
            |s, x, g| cell.get().unwrap().backward(s, x, g),
        ));

        let x = kink_free_mat(&mut rng, n, din);
        let r = random_mat(&mut rng, n, din);
        let dx = leaky_relu_backward(&x, &r);
        lrelu.push(check_input(&x, &dx, |xx| weighted_sum(&leaky_relu(xx), &r)));

        let x = random_mat(&mut rng, n, din + 1);
        let cell = std::cell::OnceCell::new();
        ln.push(check_module(
            &mut rng,
            x,
            |s, r| {
                let l = LayerNorm::new(s, "ln", din + 1);
                // perturb the affine so gamma/beta gradients are exercised off identity
                for id in [l.gamma, l.beta] {
                    let m = random_mat(r, 1, din + 1);
                    s.value_mut(id).add_assign(&m);
                }
                cell.set(l).unwrap();
            },
            |s, x| cell.get().unwrap().forward(s, x).0,
            |s, x, g| {
                let l = cell.get().unwrap();
                let (_, c) = l.forward(s, x);
                l.backward(s, &c, g)
            },
        ));

        let x = random_mat(&mut rng, n, din);
        let cell = std::cell::OnceCell::new();
        mlp.push(check_module(
            &mut rng,
            x,
            |s, r| {
                cell.set(Mlp::new(s, "m", &[din, 7, 5, dout], r)).unwrap();
            },
            |s, x| cell.get().unwrap().forward(s, x).unwrap().0,
            |s, x, g| {
                let m = cell.get().unwrap();
                let (_, c) = m.forward(s, x).unwrap();
                m.backward(s, &c, g)
            },
        ));

        let heads = [1, 2, 4][rng.gen_range(0..3)];
        let d = 8;
        let x = random_mat(&mut rng, n + 1, d);
        let cell = std::cell::OnceCell::new();
        block.push(check_module(
            &mut rng,
            x,
            |s, r| {
                cell.set(EncoderBlock::new(s, "b", d, heads, r).unwrap()).unwrap();
            },
            |s, x| cell.get().unwrap().forward(s, x).unwrap().0,
            |s, x, g| {
                let b = cell.get().unwrap();
                let (_, c) = b.forward(s, x).unwrap();
                b.backward(s, &c, g)
            },
        ));

        let x = random_mat(&mut rng, n + 1, 7);
        let ctx: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cell = std::cell::OnceCell::new();
        encoder.push(check_module(
            &mut rng,
            x,
            |s, r| {
                cell.set(TokenEncoder::new(s, "e", 7, Some(5), 8, 2, 2, r).unwrap()).unwrap();
            },
            |s, x| cell.get().unwrap().forward(s, x, Some(&ctx)).unwrap().0,
            |s, x, g| {
                let e = cell.get().unwrap();
                let (_, c) = e.forward(s, x, Some(&ctx)).unwrap();
                e.backward(s, &c, g)
            },
        ));
    }
    vec![
        GradCheckReport::new("linear", &linear),
        GradCheckReport::new("leaky_relu", &lrelu),
        GradCheckReport::new("layernorm", &ln),
        GradCheckReport::new("mlp", &mlp),
        GradCheckReport::new("encoder_block", &block),
        GradCheckReport::new("token_encoder", &encoder),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_match_finite_differences() {
        for r in kernel_suite(5, 17) {
            assert!(r.passed, "{} max rel error {}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 2e-12) < 1e-5);
    }
}
