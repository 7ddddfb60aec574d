//! The three policies (head feature, operation, tail feature) and the value
//! network(s). Each network owns its [`ParamStore`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::{RunConfig, Variant};
use crate::error::{Error, Result};
use crate::feature_space::{MaskVector, Operation, NUM_OPS};
use crate::nn::gradcheck::{check_input, check_params, random_mat, GradCheckReport};
use crate::nn::{checkpoint, masked_log_softmax, Linear, Mat, Mlp, MlpCache, ParamStore, TokenEncoder, TokenEncoderCache};
use crate::state_encoding::{op_onehot, AttnBranch, AttnCache, DESC_DIM, STATS_DIM};

/// Mask bits of f1 followed by its network-space descriptor.
pub const OP_INPUT_DIM: usize = NUM_OPS + DESC_DIM;
/// Descriptor of f1 followed by the op one-hot.
pub const TAIL_CONTEXT_DIM: usize = DESC_DIM + NUM_OPS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub op_hidden: usize,
    pub critic_hidden: usize,
}

impl NetConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            d_model: cfg.d_model,
            n_heads: cfg.n_heads,
            n_layers: cfg.n_encoder_layers,
            op_hidden: cfg.op_hidden,
            critic_hidden: cfg.critic_hidden,
        }
    }

    /// Tiny shapes for gradient checks.
    pub fn small() -> Self {
        Self {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            op_hidden: 8,
            critic_hidden: 8,
        }
    }
}

/// Inverse-CDF draw from `probs`; returns the index and `ln p[index]`.
pub fn sample<R: Rng>(probs: &[f64], rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_valid = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_valid = i;
        acc += p;
        if u < acc {
            return (i, p.ln());
        }
    }
    (last_valid, probs[last_valid].ln())
}

/// Argmax with ties broken towards the lowest index.
pub fn greedy(probs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    (best, probs[best].ln())
}

/// A masked categorical distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub logits: Vec<f64>,
    pub mask: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Categorical {
    pub fn new(logits: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let log_probs = masked_log_softmax(&logits, &mask)?;
        let probs = log_probs.iter().map(|v| v.exp()).collect();
        Ok(Self {
            logits,
            mask,
            log_probs,
            probs,
        })
    }

    /// Entropy over valid actions.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|((p, lp), _)| p * lp)
            .sum::<f64>()
    }
}

/// Attention set-policy emitting one logit per pool feature.
#[derive(Debug, Clone)]
pub struct FeaturePolicy {
    pub store: ParamStore,
    enc: TokenEncoder,
    score: Linear,
}

#[derive(Debug, Clone)]
pub struct FeatureCache {
    enc: TokenEncoderCache,
    h: Mat,
}

impl FeaturePolicy {
    fn build<R: Rng>(name: &str, context: Option<usize>, net: &NetConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let enc = TokenEncoder::new(
            &mut store,
            &format!("{name}.enc"),
            DESC_DIM,
            context,
            net.d_model,
            net.n_heads,
            net.n_layers,
            rng,
        )?;
        let score = Linear::new(&mut store, &format!("{name}.score"), net.d_model, 1, true, rng);
        Ok(Self { store, enc, score })
    }

    pub fn head<R: Rng>(net: &NetConfig, rng: &mut R) -> Result<Self> {
        Self::build("head", None, net, rng)
    }

    /// Tail policy: conditioned on `[Rep(f1) | onehot(op)]`.
    pub fn tail<R: Rng>(net: &NetConfig, rng: &mut R) -> Result<Self> {
        Self::build("tail", Some(TAIL_CONTEXT_DIM), net, rng)
    }

    pub fn is_tail(&self) -> bool {
        self.enc.context_dim().is_some()
    }

    pub fn forward_with(
        &self,
        store: &ParamStore,
        tokens: &Mat,
        context: Option<&[f64]>,
    ) -> Result<(Vec<f64>, FeatureCache)> {
        if tokens.rows() == 0 {
            return Err(Error::InvalidArgument("feature policy needs >= 1 feature".into()));
        }
        let (h, enc) = self.enc.forward(store, tokens, context)?;
        let logits = self.score.forward(store, &h)?.into_data();
        Ok((logits, FeatureCache { enc, h }))
    }

    /// Logits, one per token row.
    pub fn forward(&self, tokens: &Mat, context: Option<&[f64]>) -> Result<(Vec<f64>, FeatureCache)> {
        self.forward_with(&self.store, tokens, context)
    }

    pub fn distribution(&self, tokens: &Mat, context: Option<&[f64]>, mask: Vec<bool>) -> Result<Categorical> {
        Categorical::new(self.forward(tokens, context)?.0, mask)
    }

    /// Accumulates `dL/dlogits` into the store; returns `dL/dtokens`.
    pub fn backward_with(&self, store: &mut ParamStore, cache: &FeatureCache, dlogits: &[f64]) -> Mat {
        let dy = Mat::from_vec(dlogits.len(), 1, dlogits.to_vec());
        let dh = self.score.backward(store, &cache.h, &dy);
        self.enc.backward(store, &cache.enc, &dh)
    }

    pub fn backward(&mut self, cache: &FeatureCache, dlogits: &[f64]) -> Mat {
        let mut store = std::mem::take(&mut self.store);
        let dx = self.backward_with(&mut store, cache, dlogits);
        self.store = store;
        dx
    }
}

/// Tail mask: every feature, except f1 itself for sub/div.
pub fn tail_mask(n: usize, f1: usize, op: Operation) -> Vec<bool> {
    (0..n).map(|i| !(op.forbids_self_pair() && i == f1)).collect()
}

pub fn tail_context(f1_desc: &[f64; DESC_DIM], op: Operation) -> Vec<f64> {
    let mut v = f1_desc.to_vec();
    v.extend_from_slice(&op_onehot(op.index()).expect("valid op"));
    v
}

pub fn op_input(mask: &MaskVector, f1_desc: &[f64; DESC_DIM]) -> Vec<f64> {
    let mut v = mask.as_f64().to_vec();
    v.extend_from_slice(f1_desc);
    v
}

/// Two-layer MLP over `[mask | Rep(f1)]` producing 16 logits.
#[derive(Debug, Clone)]
pub struct OperationPolicy {
    pub store: ParamStore,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct OpCache {
    mlp: MlpCache,
}

impl OperationPolicy {
    pub fn new<R: Rng>(net: &NetConfig, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "op", &[OP_INPUT_DIM, net.op_hidden, NUM_OPS], rng);
        Self { store, mlp }
    }

    pub fn forward_with(&self, store: &ParamStore, input: &[f64]) -> Result<(Vec<f64>, OpCache)> {
        let (out, mlp) = self.mlp.forward(store, &Mat::row_vector(input))?;
        Ok((out.into_data(), OpCache { mlp }))
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, OpCache)> {
        self.forward_with(&self.store, input)
    }

    pub fn distribution(&self, input: &[f64], mask: &MaskVector) -> Result<Categorical> {
        Categorical::new(self.forward(input)?.0, mask.0.to_vec())
    }

    pub fn backward_with(&self, store: &mut ParamStore, cache: &OpCache, dlogits: &[f64]) -> Mat {
        self.mlp.backward(store, &cache.mlp, &Mat::row_vector(dlogits))
    }

    pub fn backward(&mut self, cache: &OpCache, dlogits: &[f64]) -> Mat {
        let mut store = std::mem::take(&mut self.store);
        let dx = self.backward_with(&mut store, cache, dlogits);
        self.store = store;
        dx
    }
}

/// Value network: optional attention branch, then a 4-layer MLP.
#[derive(Debug, Clone)]
pub struct Critic {
    pub store: ParamStore,
    attn: Option<AttnBranch>,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct CriticCache {
    attn: Option<AttnCache>,
    mlp: MlpCache,
}

impl Critic {
    /// `with_attn = false` gives the 49-dim statistics-only critic.
    pub fn new<R: Rng>(name: &str, net: &NetConfig, with_attn: bool, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let attn = if with_attn {
            Some(AttnBranch::new(&mut store, &format!("{name}.attn"), net.d_model, net.n_heads, rng)?)
        } else {
            None
        };
        let input = if with_attn { crate::state_encoding::CRITIC_DIM } else { STATS_DIM };
        let h = net.critic_hidden;
        let mlp = Mlp::new(&mut store, &format!("{name}.mlp"), &[input, h, h, h, 1], rng);
        Ok(Self { store, attn, mlp })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn param_count(&self) -> usize {
        self.store.n_scalars()
    }

    /// Zeroes the output layer so the value is 0 for every state.
    pub fn zero_output(&mut self) {
        let last = *self.mlp.layers.last().expect("non-empty");
        self.store.value_mut(last.w).fill(0.0);
        if let Some(b) = last.b {
            self.store.value_mut(b).fill(0.0);
        }
    }

    pub fn forward_with(&self, store: &ParamStore, stats: &[f64], tokens: &Mat) -> Result<(f64, CriticCache)> {
        if stats.len() != STATS_DIM {
            return Err(Error::Shape(format!("critic expects {STATS_DIM} stats, got {}", stats.len())));
        }
        let mut input = stats.to_vec();
        let attn = match &self.attn {
            Some(a) => {
                let (z, c) = a.forward(store, tokens)?;
                input.extend_from_slice(&z);
                Some(c)
            }
            None => None,
        };
        let (v, mlp) = self.mlp.forward(store, &Mat::row_vector(&input))?;
        Ok((v[(0, 0)], CriticCache { attn, mlp }))
    }

    pub fn forward(&self, stats: &[f64], tokens: &Mat) -> Result<(f64, CriticCache)> {
        self.forward_with(&self.store, stats, tokens)
    }

    /// Returns `dL/dstats`.
    pub fn backward_with(&self, store: &mut ParamStore, cache: &CriticCache, dv: f64) -> Vec<f64> {
        let dx = self.mlp.backward(store, &cache.mlp, &Mat::from_vec(1, 1, vec![dv]));
        if let (Some(a), Some(c)) = (&self.attn, &cache.attn) {
            a.backward(store, c, &dx.data()[STATS_DIM..]);
        }
        dx.data()[..STATS_DIM].to_vec()
    }

    pub fn backward(&mut self, cache: &CriticCache, dv: f64) -> Vec<f64> {
        let mut store = std::mem::take(&mut self.store);
        let dx = self.backward_with(&mut store, cache, dv);
        self.store = store;
        dx
    }
}

/// All networks of one run.
#[derive(Debug, Clone)]
pub struct Agents {
    pub head: FeaturePolicy,
    pub op: OperationPolicy,
    pub tail: FeaturePolicy,
    /// One shared critic, or one per agent (head, op, tail) without sharing.
    pub critics: Vec<Critic>,
    pub variant: Variant,
}

impl Agents {
    pub fn new(net: &NetConfig, variant: Variant, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a6e7);
        let head = FeaturePolicy::head(net, &mut rng)?;
        let op = OperationPolicy::new(net, &mut rng);
        let tail = FeaturePolicy::tail(net, &mut rng)?;
        let critics = match variant {
            Variant::NoSharedCritic => ["critic_head", "critic_op", "critic_tail"]
                .iter()
                .map(|n| Critic::new(n, net, true, &mut rng))
                .collect::<Result<_>>()?,
            Variant::StatsOnly => vec![Critic::new("critic", net, false, &mut rng)?],
            Variant::Full | Variant::NoDecomp => vec![Critic::new("critic", net, true, &mut rng)?],
        };
        Ok(Self {
            head,
            op,
            tail,
            critics,
            variant,
        })
    }

    pub fn critic_param_count(&self) -> usize {
        self.critics.iter().map(Critic::param_count).sum()
    }

    pub fn critic_input_dim(&self) -> usize {
        self.critics[0].input_dim()
    }

    fn stores(&mut self) -> Vec<(String, &mut ParamStore)> {
        let mut v = vec![
            ("head".to_owned(), &mut self.head.store),
            ("op".to_owned(), &mut self.op.store),
            ("tail".to_owned(), &mut self.tail.store),
        ];
        for (i, c) in self.critics.iter_mut().enumerate() {
            v.push((format!("critic{i}"), &mut c.store));
        }
        v
    }

    /// Writes `ep_<episode>_<net>.{bin,json}` for every network.
    pub fn save_snapshot(&mut self, dir: &Path, episode: usize) -> Result<()> {
        for (name, store) in self.stores() {
            checkpoint::save(store, &dir.join(format!("ep_{episode:04}_{name}")))?;
        }
        Ok(())
    }

    pub fn load_snapshot(&mut self, dir: &Path, episode: usize) -> Result<()> {
        for (name, store) in self.stores() {
            checkpoint::load(store, &dir.join(format!("ep_{episode:04}_{name}")))?;
        }
        Ok(())
    }
}

fn weighted(out: &[f64], w: &[f64]) -> f64 {
    out.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Finite-difference checks of every full network (parameters and inputs)
/// on `instances` random pools.
pub fn network_suite(instances: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    let net = NetConfig::small();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut head_e, mut op_e, mut tail_e, mut critic_e) = (vec![], vec![], vec![], vec![]);
    for _ in 0..instances {
        let n = rng.gen_range(1..6);
        let tokens = random_mat(&mut rng, n, DESC_DIM);

        let mut head = FeaturePolicy::head(&net, &mut rng)?;
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = head.forward(&tokens, None)?;
        let dx = head.backward(&cache, &r);
        let loss = |s: &ParamStore, x: &Mat| weighted(&head.forward_with(s, x, None).unwrap().0, &r);
        let p = check_params(&head.store, |s| loss(s, &tokens));
        let i = check_input(&tokens, &dx, |x| loss(&head.store, x));
        head_e.push(p.max(i));

        let mut tail = FeaturePolicy::tail(&net, &mut rng)?;
        let ctx: Vec<f64> = (0..TAIL_CONTEXT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = tail.forward(&tokens, Some(&ctx))?;
        let dx = tail.backward(&cache, &r);
        let loss = |s: &ParamStore, x: &Mat| weighted(&tail.forward_with(s, x, Some(&ctx)).unwrap().0, &r);
        let p = check_params(&tail.store, |s| loss(s, &tokens));
        let i = check_input(&tokens, &dx, |x| loss(&tail.store, x));
        tail_e.push(p.max(i));

        let mut op = OperationPolicy::new(&net, &mut rng);
        let input = random_mat(&mut rng, 1, OP_INPUT_DIM);
        let r16: Vec<f64> = (0..NUM_OPS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = op.forward(input.data())?;
        let dx = op.backward(&cache, &r16);
        let loss = |s: &ParamStore, x: &Mat| weighted(&op.forward_with(s, x.data()).unwrap().0, &r16);
        let p = check_params(&op.store, |s| loss(s, &input));
        let i = check_input(&input, &dx, |x| loss(&op.store, x));
        op_e.push(p.max(i));

        let mut critic = Critic::new("critic", &net, true, &mut rng)?;
        let stats = random_mat(&mut rng, 1, STATS_DIM);
        let (_, cache) = critic.forward(stats.data(), &tokens)?;
        let ds = Mat::row_vector(&critic.backward(&cache, 1.0));
        let loss = |s: &ParamStore, x: &Mat| critic.forward_with(s, x.data(), &tokens).unwrap().0;
        let p = check_params(&critic.store, |s| loss(s, &stats));
        let i = check_input(&stats, &ds, |x| loss(&critic.store, x));
        critic_e.push(p.max(i));
    }
    Ok(vec![
        GradCheckReport::new("head_policy", &head_e),
        GradCheckReport::new("op_policy", &op_e),
        GradCheckReport::new("tail_policy", &tail_e),
        GradCheckReport::new("critic", &critic_e),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        random_mat(rng, n, DESC_DIM)
    }

    #[test]
    fn sample_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample(&[1.0, 0.0, 0.0], &mut rng), (0, 0.0));
        let draws = 100_000;
        let ones = (0..draws).filter(|_| sample(&[0.3, 0.7], &mut rng).0 == 1).count();
        assert!((ones as f64 / draws as f64 - 0.7).abs() < 0.01);
        assert_eq!(greedy(&[0.2, 0.5, 0.3]).0, 1);
        assert_eq!(greedy(&[0.5, 0.5]).0, 0);
        let probs = [0.1, 0.6, 0.3];
        for _ in 0..50 {
            let (i, lp) = sample(&probs, &mut rng);
            assert_eq!(lp, probs[i].ln());
        }
    }

    #[test]
    fn head_policy_shapes_and_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = NetConfig::small();
        let head = FeaturePolicy::head(&net, &mut rng).unwrap();
        let one = head.distribution(&tokens(&mut rng, 1), None, vec![true]).unwrap();
        assert_eq!(one.probs, vec![1.0]);
        let t = tokens(&mut rng, 6);
        let d = head.distribution(&t, None, vec![true; 6]).unwrap();
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let perm = [2, 5, 0, 1, 4, 3];
        let dp = head.distribution(&t.permute_rows(&perm), None, vec![true; 6]).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert!((dp.probs[i] - d.probs[p]).abs() < 1e-6);
        }
    }

    #[test]
    fn tail_self_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tail = FeaturePolicy::tail(&NetConfig::small(), &mut rng).unwrap();
        let t = tokens(&mut rng, 5);
        let ctx = tail_context(&[0.0; DESC_DIM], Operation::Sub);
        let d = tail.distribution(&t, Some(&ctx), tail_mask(5, 3, Operation::Sub)).unwrap();
        assert!(d.probs[3] < 1e-8);
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(tail_mask(5, 3, Operation::Mul).iter().all(|&b| b));
        assert!(tail.distribution(&tokens(&mut rng, 1), Some(&ctx), tail_mask(1, 0, Operation::Div)).is_err());
    }

    #[test]
    fn op_policy_respects_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = NetConfig::small();
        let mut mask = MaskVector([false; NUM_OPS]);
        mask.set(Operation::Mul, true);
        for _ in 0..20 {
            let op = OperationPolicy::new(&net, &mut rng);
            let input: Vec<f64> = (0..OP_INPUT_DIM).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let d = op.distribution(&input, &mask).unwrap();
            assert!(d.probs[Operation::Mul.index()] > 1.0 - 1e-8);
            assert_eq!(d, op.distribution(&input, &mask).unwrap());
        }
    }

    #[test]
    fn critic_zero_output_and_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = NetConfig::small();
        let mut c = Critic::new("c", &net, true, &mut rng).unwrap();
        c.zero_output();
        let t = tokens(&mut rng, 3);
        assert_eq!(c.forward(&[0.3; STATS_DIM], &t).unwrap().0, 0.0);
        assert_eq!(c.input_dim(), 98);
        assert!(c.forward(&[0.0; 10], &t).is_err());
        let s = Critic::new("s", &net, false, &mut rng).unwrap();
        assert_eq!(s.input_dim(), 49);
    }

    #[test]
    fn variants_build_expected_critics() {
        let net = NetConfig::small();
        let full = Agents::new(&net, Variant::Full, 0).unwrap();
        let sep = Agents::new(&net, Variant::NoSharedCritic, 0).unwrap();
        let stats = Agents::new(&net, Variant::StatsOnly, 0).unwrap();
        assert_eq!(sep.critics.len(), 3);
        assert_eq!(sep.critic_param_count(), 3 * full.critic_param_count());
        assert_eq!(stats.critic_input_dim(), 49);
        assert_eq!(full.critic_input_dim(), 98);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = NetConfig::small();
        let mut a = Agents::new(&net, Variant::Full, 1).unwrap();
        a.save_snapshot(dir.path(), 3).unwrap();
        let mut b = Agents::new(&net, Variant::Full, 2).unwrap();
        b.load_snapshot(dir.path(), 3).unwrap();
        assert_eq!(a.head.store.values(), b.head.store.values());
        assert_eq!(a.critics[0].store.values(), b.critics[0].store.values());
        let mut c = Agents::new(&net, Variant::StatsOnly, 2).unwrap();
        assert!(c.load_snapshot(dir.path(), 3).is_err());
    }

    #[test]
    fn networks_match_finite_differences() {
        for r in network_suite(3, 11).unwrap() {
            assert!(r.passed, "{} max rel error {}", r.name, r.max_rel_error);
        }
    }
}
