//! Multi-head self-attention encoder blocks over an unordered token set.
//!
//! Block layout (post-norm, no positional terms):
//!
//! ```text
//! A   = concat_j softmax(Q_j K_j^T / sqrt(d/h)) V_j
//! Y1  = LN1(H + A W_o + b_o)
//! out = LN2(Y1 + W_2 lrelu(W_1 Y1 + b_1) + b_2)
//! ```

use rand::Rng;

use super::layers::{leaky_relu, leaky_relu_backward, LayerNorm, LayerNormCache, Linear};
use super::params::ParamStore;
use super::tensor::Mat;
use crate::error::{Error, Result};

fn softmax_rows(s: &Mat) -> Mat {
    let mut out = Mat::zeros(s.rows(), s.cols());
    for i in 0..s.rows() {
        let r = s.row(i);
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = r.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = e.iter().sum();
        for (o, v) in out.row_mut(i).iter_mut().zip(e) {
            *o = v / z;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub d_model: usize,
    pub n_heads: usize,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    h: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Attention weights per head, each `N x N`.
    attn: Vec<Mat>,
    concat: Mat,
    ln1: LayerNormCache,
    y1: Mat,
    f1: Mat,
    g: Mat,
    ln2: LayerNormCache,
}

impl EncoderCache {
    pub fn attention_weights(&self) -> &[Mat] {
        &self.attn
    }
}

impl EncoderBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::Shape(format!(
                "d_model {d_model} not divisible by {n_heads} heads"
            )));
        }
        let d_ff = 2 * d_model;
        Ok(Self {
            d_model,
            n_heads,
            wq: Linear::new(store, &format!("{name}.wq"), d_model, d_model, false, rng),
            wk: Linear::new(store, &format!("{name}.wk"), d_model, d_model, false, rng),
            wv: Linear::new(store, &format!("{name}.wv"), d_model, d_model, false, rng),
            wo: Linear::new(store, &format!("{name}.wo"), d_model, d_model, true, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model),
            ff1: Linear::new(store, &format!("{name}.ff1"), d_model, d_ff, true, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), d_ff, d_model, true, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model),
        })
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn forward(&self, store: &ParamStore, h: &Mat) -> Result<(Mat, EncoderCache)> {
        if h.cols() != self.d_model || h.rows() == 0 {
            return Err(Error::Shape(format!(
                "encoder expects N x {} input, got {:?}",
                self.d_model,
                h.shape()
            )));
        }
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.wq.forward(store, h)?;
        let k = self.wk.forward(store, h)?;
        let v = self.wv.forward(store, h)?;
        let mut concat = Mat::zeros(h.rows(), self.d_model);
        let mut attn = Vec::with_capacity(self.n_heads);
        for j in 0..self.n_heads {
            let (qj, kj, vj) = (
                q.col_slice(j * dh, dh),
                k.col_slice(j * dh, dh),
                v.col_slice(j * dh, dh),
            );
            let a = softmax_rows(&qj.matmul_t(&kj).scale(scale));
            concat.set_col_slice(j * dh, &a.matmul(&vj));
            attn.push(a);
        }
        let x1 = h.add(&self.wo.forward(store, &concat)?);
        let (y1, ln1) = self.ln1.forward(store, &x1);
        let f1 = self.ff1.forward(store, &y1)?;
        let g = leaky_relu(&f1);
        let x2 = y1.add(&self.ff2.forward(store, &g)?);
        let (out, ln2) = self.ln2.forward(store, &x2);
        Ok((
            out,
            EncoderCache {
                h: h.clone(),
                q,
                k,
                v,
                attn,
                concat,
                ln1,
                y1,
                f1,
                g,
                ln2,
            },
        ))
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &EncoderCache, dout: &Mat) -> Mat {
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let dx2 = self.ln2.backward(store, &cache.ln2, dout);
        let dg = self.ff2.backward(store, &cache.g, &dx2);
        let df1 = leaky_relu_backward(&cache.f1, &dg);
        let mut dy1 = self.ff1.backward(store, &cache.y1, &df1);
        dy1.add_assign(&dx2);
        let dx1 = self.ln1.backward(store, &cache.ln1, &dy1);
        let dconcat = self.wo.backward(store, &cache.concat, &dx1);

        let n = cache.h.rows();
        let mut dq = Mat::zeros(n, self.d_model);
        let mut dk = Mat::zeros(n, self.d_model);
        let mut dv = Mat::zeros(n, self.d_model);
        for j in 0..self.n_heads {
            let a = &cache.attn[j];
            let qj = cache.q.col_slice(j * dh, dh);
            let kj = cache.k.col_slice(j * dh, dh);
            let vj = cache.v.col_slice(j * dh, dh);
            let doj = dconcat.col_slice(j * dh, dh);
            dv.set_col_slice(j * dh, &a.t_matmul(&doj));
            let da = doj.matmul_t(&vj);
            let mut ds = Mat::zeros(n, n);
            for r in 0..n {
                let dot: f64 = da.row(r).iter().zip(a.row(r)).map(|(x, y)| x * y).sum();
                for c in 0..n {
                    ds[(r, c)] = a[(r, c)] * (da[(r, c)] - dot) * scale;
                }
            }
            dq.set_col_slice(j * dh, &ds.matmul(&kj));
            dk.set_col_slice(j * dh, &ds.t_matmul(&qj));
        }
        let mut dh_in = dx1;
        dh_in.add_assign(&self.wq.backward(store, &cache.h, &dq));
        dh_in.add_assign(&self.wk.backward(store, &cache.h, &dk));
        dh_in.add_assign(&self.wv.backward(store, &cache.h, &dv));
        dh_in
    }
}

/// Token embedding followed by a stack of encoder blocks. An optional
/// context vector is embedded and added to every token embedding.
#[derive(Debug, Clone)]
pub struct TokenEncoder {
    embed: Linear,
    context: Option<Linear>,
    blocks: Vec<EncoderBlock>,
}

#[derive(Debug, Clone)]
pub struct TokenEncoderCache {
    tokens: Mat,
    context: Option<Mat>,
    blocks: Vec<EncoderCache>,
}

impl TokenEncoderCache {
    pub fn blocks(&self) -> &[EncoderCache] {
        &self.blocks
    }
}

impl TokenEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        token_dim: usize,
        context_dim: Option<usize>,
        d_model: usize,
        n_heads: usize,
        n_blocks: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embed = Linear::new(store, &format!("{name}.embed"), token_dim, d_model, true, rng);
        let context = context_dim
            .map(|c| Linear::new(store, &format!("{name}.context"), c, d_model, false, rng));
        let blocks = (0..n_blocks)
            .map(|i| EncoderBlock::new(store, &format!("{name}.block{i}"), d_model, n_heads, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            embed,
            context,
            blocks,
        })
    }

    pub fn d_model(&self) -> usize {
        self.embed.out_dim
    }

    pub fn token_dim(&self) -> usize {
        self.embed.in_dim
    }

    pub fn context_dim(&self) -> Option<usize> {
        self.context.map(|c| c.in_dim)
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        tokens: &Mat,
        context: Option<&[f64]>,
    ) -> Result<(Mat, TokenEncoderCache)> {
        let mut h = self.embed.forward(store, tokens)?;
        let ctx = match (self.context, context) {
            (Some(lin), Some(c)) => {
                let cm = Mat::row_vector(c);
                let e = lin.forward(store, &cm)?;
                for i in 0..h.rows() {
                    for (v, a) in h.row_mut(i).iter_mut().zip(e.row(0)) {
                        *v += a;
                    }
                }
                Some(cm)
            }
            (None, None) => None,
            _ => return Err(Error::Shape("context presence does not match encoder".into())),
        };
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward(store, &h)?;
            caches.push(c);
            h = next;
        }
        Ok((
            h,
            TokenEncoderCache {
                tokens: tokens.clone(),
                context: ctx,
                blocks: caches,
            },
        ))
    }

    /// Returns `dL/dtokens`.
    pub fn backward(&self, store: &mut ParamStore, cache: &TokenEncoderCache, dout: &Mat) -> Mat {
        let mut g = dout.clone();
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = b.backward(store, c, &g);
        }
        if let (Some(lin), Some(cm)) = (self.context, &cache.context) {
            let dctx = Mat::row_vector(&g.sum_rows());
            lin.backward(store, cm, &dctx);
        }
        self.embed.backward(store, &cache.tokens, &g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let block = EncoderBlock::new(&mut store, "b", 8, 2, &mut rng).unwrap();
        let h = random_mat(&mut rng, 1, 8);
        let (_, cache) = block.forward(&store, &h).unwrap();
        for a in cache.attention_weights() {
            assert_eq!(a.shape(), (1, 1));
            assert!((a[(0, 0)] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn block_is_row_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let block = EncoderBlock::new(&mut store, "b", 8, 4, &mut rng).unwrap();
        let h = random_mat(&mut rng, 6, 8);
        let perm = [3, 0, 5, 1, 4, 2];
        let (out, _) = block.forward(&store, &h).unwrap();
        let (out_p, _) = block.forward(&store, &h.permute_rows(&perm)).unwrap();
        assert!(out.permute_rows(&perm).max_abs_diff(&out_p) < 1e-12);
    }

    #[test]
    fn rejects_bad_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(EncoderBlock::new(&mut store, "b", 10, 4, &mut rng).is_err());
    }
}
