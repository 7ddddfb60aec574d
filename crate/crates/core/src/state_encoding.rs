//! Agent observations: per-feature descriptors, operation one-hots, and the
//! fixed-length critic state `[stats (49) | attention summary (49)]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::feature_space::{Feature, FeaturePool, Operation, NUM_OPS};
use crate::nn::{EncoderBlock, EncoderCache, Linear, Mat, ParamStore};

/// mean, std, min, max, Q1, Q2, Q3
pub const DESC_DIM: usize = 7;
pub const STATS_DIM: usize = DESC_DIM * DESC_DIM;
pub const ATTN_DIM: usize = 49;
pub const CRITIC_DIM: usize = STATS_DIM + ATTN_DIM;
pub const Z_CLAMP: f64 = 5.0;

/// Quantile by linear interpolation between order statistics of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// The seven summary statistics of a non-empty sample (population std).
pub fn describe(values: &[f64]) -> [f64; DESC_DIM] {
    assert!(!values.is_empty(), "describe on empty sample");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    [
        mean,
        var.sqrt(),
        sorted[0],
        sorted[sorted.len() - 1],
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.75),
    ]
}

pub fn feature_descriptor(f: &Feature) -> [f64; DESC_DIM] {
    describe(f.values())
}

/// `sign(x) * ln(1 + |x|)`; compresses descriptor magnitudes (values may
/// reach 1e12) before they enter a network.
pub fn signed_log(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// One descriptor row per pool feature.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorMatrix {
    rows: Vec<[f64; DESC_DIM]>,
}

impl DescriptorMatrix {
    pub fn from_pool(pool: &FeaturePool) -> Self {
        Self {
            rows: pool.features().iter().map(feature_descriptor).collect(),
        }
    }

    pub fn from_rows(rows: Vec<[f64; DESC_DIM]>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64; DESC_DIM] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[[f64; DESC_DIM]] {
        &self.rows
    }

    /// `N x 7` network input with [`signed_log`] applied.
    pub fn network_input(&self) -> Mat {
        let data = self.rows.iter().flatten().map(|&v| signed_log(v)).collect();
        Mat::from_vec(self.rows.len(), DESC_DIM, data)
    }

    /// Network-space descriptor of one row.
    pub fn network_row(&self, i: usize) -> [f64; DESC_DIM] {
        self.rows[i].map(signed_log)
    }
}

/// The 7x7 column-statistics matrix, flattened with the descriptor column as
/// the outer index and the statistic as the inner index.
pub fn raw_stats(desc: &DescriptorMatrix) -> Result<[f64; STATS_DIM]> {
    if desc.is_empty() {
        return Err(Error::InvalidArgument("empty descriptor matrix".into()));
    }
    let mut out = [0.0; STATS_DIM];
    let mut col = Vec::with_capacity(desc.len());
    for c in 0..DESC_DIM {
        col.clear();
        col.extend(desc.rows.iter().map(|r| r[c]));
        out[c * DESC_DIM..(c + 1) * DESC_DIM].copy_from_slice(&describe(&col));
    }
    Ok(out)
}

/// Per-entry Welford running mean/variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNormalizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|m| (m / self.count as f64).max(0.0)).collect()
    }

    pub fn observe(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// z-score with the current counters, clamped to `±Z_CLAMP`. Identity
    /// when nothing has been observed; entries with (near) zero variance are
    /// only centred.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.count == 0 {
            return x.to_vec();
        }
        let var = self.variance();
        x.iter()
            .zip(&self.mean)
            .zip(var)
            .map(|((&v, &m), s2)| {
                let sd = if s2 > 1e-12 { s2.sqrt() } else { 1.0 };
                ((v - m) / sd).clamp(-Z_CLAMP, Z_CLAMP)
            })
            .collect()
    }
}

/// Normalised statistics half of the critic state. Counters are updated with
/// the raw vector before it is normalised so that the very first state is
/// already centred.
pub fn stats_branch(desc: &DescriptorMatrix, norm: &mut RunningNormalizer) -> Result<Vec<f64>> {
    let raw = raw_stats(desc)?;
    norm.observe(&raw);
    Ok(norm.apply(&raw))
}

/// Same as [`stats_branch`] with frozen counters.
pub fn stats_branch_frozen(desc: &DescriptorMatrix, norm: &RunningNormalizer) -> Result<Vec<f64>> {
    Ok(norm.apply(&raw_stats(desc)?))
}

/// Descriptor tokens -> one attention block -> mean|max pooling -> 49.
#[derive(Debug, Clone)]
pub struct AttnBranch {
    embed: Linear,
    block: EncoderBlock,
    proj: Linear,
}

#[derive(Debug, Clone)]
pub struct AttnCache {
    tokens: Mat,
    block: EncoderCache,
    pooled: Mat,
    argmax: Vec<usize>,
    n: usize,
}

impl AttnBranch {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            embed: Linear::new(store, &format!("{name}.embed"), DESC_DIM, d_model, true, rng),
            block: EncoderBlock::new(store, &format!("{name}.block"), d_model, n_heads, rng)?,
            proj: Linear::new(store, &format!("{name}.proj"), 2 * d_model, ATTN_DIM, true, rng),
        })
    }

    /// `tokens` is the `N x 7` network input of a [`DescriptorMatrix`].
    pub fn forward(&self, store: &ParamStore, tokens: &Mat) -> Result<(Vec<f64>, AttnCache)> {
        if tokens.rows() == 0 {
            return Err(Error::InvalidArgument("attention branch needs >= 1 token".into()));
        }
        let emb = self.embed.forward(store, tokens)?;
        let (h, block) = self.block.forward(store, &emb)?;
        let (n, d) = h.shape();
        let mut pooled = vec![0.0; 2 * d];
        let mut argmax = vec![0; d];
        for j in 0..d {
            let mut best = h[(0, j)];
            let mut sum = 0.0;
            for i in 0..n {
                let v = h[(i, j)];
                sum += v;
                if v > best {
                    best = v;
                    argmax[j] = i;
                }
            }
            pooled[j] = sum / n as f64;
            pooled[d + j] = best;
        }
        let pooled = Mat::row_vector(&pooled);
        let z = self.proj.forward(store, &pooled)?;
        Ok((
            z.into_data(),
            AttnCache {
                tokens: tokens.clone(),
                block,
                pooled,
                argmax,
                n,
            },
        ))
    }

    /// Accumulates parameter gradients; returns `dL/dtokens`.
    pub fn backward(&self, store: &mut ParamStore, cache: &AttnCache, dz: &[f64]) -> Mat {
        let dpooled = self.proj.backward(store, &cache.pooled, &Mat::row_vector(dz));
        let d = cache.argmax.len();
        let mut dh = Mat::zeros(cache.n, d);
        for j in 0..d {
            let g_mean = dpooled[(0, j)] / cache.n as f64;
            for i in 0..cache.n {
                dh[(i, j)] += g_mean;
            }
            dh[(cache.argmax[j], j)] += dpooled[(0, d + j)];
        }
        let demb = self.block.backward(store, &cache.block, &dh);
        self.embed.backward(store, &cache.tokens, &demb)
    }
}

/// The two halves of the critic input.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    pub stats: Vec<f64>,
    pub attn: Vec<f64>,
}

impl CriticState {
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.stats.len() + self.attn.len());
        v.extend_from_slice(&self.stats);
        v.extend_from_slice(&self.attn);
        v
    }
}

/// Builds the 98-dim critic state and updates the normaliser.
pub fn critic_state(
    pool: &FeaturePool,
    norm: &mut RunningNormalizer,
    branch: &AttnBranch,
    store: &ParamStore,
) -> Result<CriticState> {
    let desc = DescriptorMatrix::from_pool(pool);
    let stats = stats_branch(&desc, norm)?;
    let (attn, _) = branch.forward(store, &desc.network_input())?;
    Ok(CriticState { stats, attn })
}

pub fn op_onehot(op_index: usize) -> Result<[f64; NUM_OPS]> {
    Operation::from_index(op_index)?;
    let mut v = [0.0; NUM_OPS];
    v[op_index] = 1.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn descriptor_examples() {
        assert_eq!(describe(&[2.0, 2.0, 2.0]), [2.0, 0.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
        let d = describe(&[1.0, 2.0, 3.0, 4.0]);
        let expect = [2.5, 1.25f64.sqrt(), 1.0, 4.0, 1.75, 2.5, 3.25];
        assert!(close(&d, &expect, 1e-12));
        assert_eq!(describe(&[4.0, 1.0, 3.0, 2.0]), d);
    }

    #[test]
    fn descriptor_quantiles_match_rank_oracle() {
        // oracle: explicit h = (n-1)q interpolation over a separately sorted copy
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in 1..40 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut s = x.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let d = describe(&x);
            for (slot, q) in [(4, 0.25), (5, 0.5), (6, 0.75)] {
                let h = (n - 1) as f64 * q;
                let (lo, frac) = (h as usize, h - (h as usize) as f64);
                let hi = (lo + 1).min(n - 1);
                let want = s[lo] * (1.0 - frac) + s[hi] * frac;
                assert!((d[slot] - want).abs() < 1e-12);
            }
            assert!(d[2] <= d[4] && d[4] <= d[5] && d[5] <= d[6] && d[6] <= d[3]);
        }
    }

    #[test]
    fn normalizer_identity_then_zscore() {
        let mut n = RunningNormalizer::new(2);
        assert_eq!(n.apply(&[3.0, -7.0]), vec![3.0, -7.0]);
        n.observe(&[1.0, 10.0]);
        n.observe(&[3.0, 10.0]);
        let z = n.apply(&[3.0, 10.0]);
        assert!((z[0] - 1.0).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
        assert_eq!(n.apply(&[1e9, 10.0])[0], Z_CLAMP);
        assert!(n.variance().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn identical_features_have_zero_spread() {
        let rows = vec![[1.0, 2.0, 0.0, 3.0, 1.0, 1.5, 2.0]; 5];
        let raw = raw_stats(&DescriptorMatrix::from_rows(rows)).unwrap();
        for c in 0..DESC_DIM {
            assert_eq!(raw[c * DESC_DIM + 1], 0.0);
        }
    }

    #[test]
    fn branches_have_fixed_width_and_are_order_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let branch = AttnBranch::new(&mut store, "a", 16, 4, &mut rng).unwrap();
        for n in [1, 2, 37] {
            let rows: Vec<[f64; 7]> = (0..n)
                .map(|_| std::array::from_fn(|_| rng.gen_range(-3.0..3.0)))
                .collect();
            let desc = DescriptorMatrix::from_rows(rows.clone());
            let raw = raw_stats(&desc).unwrap();
            let (z, _) = branch.forward(&store, &desc.network_input()).unwrap();
            assert_eq!(z.len(), ATTN_DIM);
            let mut perm = rows;
            perm.shuffle(&mut rng);
            let pdesc = DescriptorMatrix::from_rows(perm);
            assert!(close(&raw, &raw_stats(&pdesc).unwrap(), 1e-9));
            let (pz, _) = branch.forward(&store, &pdesc.network_input()).unwrap();
            assert!(close(&z, &pz, 1e-6));
        }
    }

    #[test]
    fn onehot_contract() {
        let e0 = op_onehot(0).unwrap();
        assert_eq!(e0[0], 1.0);
        assert_eq!(e0.iter().sum::<f64>(), 1.0);
        let e5 = op_onehot(5).unwrap();
        assert_eq!(e0.iter().zip(&e5).map(|(a, b)| a * b).sum::<f64>(), 0.0);
        assert!(op_onehot(NUM_OPS).is_err());
    }
}
