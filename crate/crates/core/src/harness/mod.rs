//! Experiment loop, baselines, traces and report files.

mod baseline;
mod report;
mod synthetic;

use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{run_baseline, run_baseline_on_split, BaselineKind};
pub use report::{emit_reports, RunSummary};
pub use synthetic::synthetic_product;

use crate::agents::{op_input, sample, tail_context, tail_mask, Agents, Categorical, NetConfig};
use crate::data_io::{split, Dataset, RunConfig, Variant};
use crate::downstream::{evaluate, reward_from_score, score_holdout, EvalProtocol, EvalResult};
use crate::error::{Error, Result};
use crate::feature_space::{
    apply_binary, apply_unary, init_pool, AddOutcome, Feature, FeaturePool, MaskVector, Operation, ProvenanceFile,
};
use crate::happo::{sequential_update, Step, TailRecord, TrainHyper, Trajectory, UpdateReport};
use crate::measures::pool_info_scores;
use crate::state_encoding::{stats_branch, DescriptorMatrix, RunningNormalizer, STATS_DIM};

/// Unary trace rows carry this in the second-operand column.
pub const NO_OPERAND: &str = "--";

/// One crossing step. `delta` is the change of the downstream score against
/// the previous step of the same episode (the original pool before step 1);
/// `cumulative` is the running sum of `delta` within the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode: usize,
    pub step: usize,
    pub f1: String,
    pub op: String,
    pub f2: String,
    pub new_feature: String,
    pub outcome: String,
    pub pool_size: usize,
    pub score: f64,
    pub delta: f64,
    pub cumulative: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub episode_best: f64,
    pub running_best: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub method: String,
    pub variant: Option<Variant>,
    pub seed: u64,
    pub config: RunConfig,
    /// Train-CV score of the original columns.
    pub original_score: f64,
    /// Best train-CV score over every evaluated pool.
    pub best_score: f64,
    pub best_episode: usize,
    pub best_step: usize,
    /// Held-out score of the best pool using its top-k columns.
    pub test_score_topk: f64,
    /// Held-out score of the best pool using all of its columns.
    pub test_score_full: f64,
    pub original_test_score: f64,
    pub best_features: Vec<String>,
    pub best_selected: Vec<usize>,
    pub eval_calls: usize,
    pub episodes_run: usize,
    pub curve: Vec<CurvePoint>,
    pub trace: Vec<TraceRecord>,
    pub updates: Vec<UpdateReport>,
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub best_pool: Option<FeaturePool>,
}

/// Downstream scoring with a memo keyed by the selected columns. Every call
/// counts toward the budget whether or not it hits the memo.
pub struct Evaluator {
    proto: EvalProtocol,
    k: usize,
    memo: HashMap<Vec<String>, EvalResult>,
    pub calls: usize,
}

impl Evaluator {
    pub fn new(proto: EvalProtocol, k: usize) -> Self {
        Self {
            proto,
            k,
            memo: HashMap::new(),
            calls: 0,
        }
    }

    pub fn protocol(&self) -> &EvalProtocol {
        &self.proto
    }

    pub fn eval(&mut self, pool: &FeaturePool) -> Result<EvalResult> {
        self.calls += 1;
        let selected = crate::measures::select_features(pool, self.k, self.proto.selection, self.proto.exec)?;
        let key: Vec<String> = selected.iter().map(|&i| pool.get(i).key().to_owned()).collect();
        if let Some(hit) = self.memo.get(&key) {
            let mut r = hit.clone();
            r.selected = selected;
            return Ok(r);
        }
        let r = evaluate(pool, self.k, &self.proto)?;
        self.memo.insert(key, r.clone());
        Ok(r)
    }
}

/// Tracks the best pool seen so far.
pub(crate) struct BestTracker {
    pub score: f64,
    pub episode: usize,
    pub step: usize,
    pub pool: FeaturePool,
    pub selected: Vec<usize>,
}

impl BestTracker {
    pub fn new(pool: &FeaturePool, r: &EvalResult) -> Self {
        Self {
            score: r.score,
            episode: 0,
            step: 0,
            pool: pool.clone(),
            selected: r.selected.clone(),
        }
    }

    pub fn offer(&mut self, pool: &FeaturePool, r: &EvalResult, episode: usize, step: usize) {
        if r.score > self.score {
            self.score = r.score;
            self.episode = episode;
            self.step = step;
            self.pool = pool.clone();
            self.selected = r.selected.clone();
        }
    }
}

/// Recomputes every pool feature on other rows with the same original columns.
pub fn materialize(pool: &FeaturePool, originals: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    pool.features().iter().map(|f| Ok(f.expr().evaluate(originals)?.0)).collect()
}

fn rows_of(cols: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    let n = cols.first().map_or(0, Vec::len);
    (0..n).map(|r| idx.iter().map(|&j| cols[j][r]).collect()).collect()
}

/// Held-out scores (top-k columns, all columns) of `pool` fitted on its own
/// rows and scored on `test`.
pub fn holdout_scores(pool: &FeaturePool, selected: &[usize], test: &Dataset, proto: &EvalProtocol) -> Result<(f64, f64)> {
    let test_cols = materialize(pool, test.columns())?;
    let all: Vec<usize> = (0..pool.len()).collect();
    let score = |idx: &[usize]| {
        score_holdout(
            &pool.design_matrix(idx),
            pool.target(),
            &rows_of(&test_cols, idx),
            test.target(),
            test.task(),
            proto,
        )
    };
    Ok((score(selected)?, score(&all)?))
}

pub(crate) fn info_terms(pool: &FeaturePool, selected: &[usize]) -> Result<(f64, f64)> {
    let s = pool_info_scores(pool, selected)?;
    Ok((s.redundancy, s.relevance))
}

/// Applies `op` to pool features `f1` (and `f2`) and offers the result to the pool.
pub fn apply_action(pool: &mut FeaturePool, f1: usize, op: Operation, f2: Option<usize>) -> Result<(String, AddOutcome)> {
    let feature: Feature = match f2 {
        Some(j) => apply_binary(op, pool.get(f1), pool.get(j))?,
        None => apply_unary(op, pool.get(f1))?,
    };
    let name = feature.name().to_owned();
    let outcome = pool.add_feature(feature)?;
    Ok((name, outcome))
}

pub(crate) fn outcome_tag(o: &AddOutcome) -> &'static str {
    match o {
        AddOutcome::Accepted { evicted: None } => "accepted",
        AddOutcome::Accepted { evicted: Some(_) } => "accepted_evicting",
        AddOutcome::Duplicate => "duplicate",
        AddOutcome::Constant => "constant",
        AddOutcome::Collinear { .. } => "collinear",
    }
}

/// Operation mask for f1; sub/div need a second, distinct feature.
pub fn op_mask_for(pool: &FeaturePool, f1: usize) -> MaskVector {
    let mut mask = pool.get(f1).mask();
    if pool.len() == 1 {
        mask.set(Operation::Sub, false);
        mask.set(Operation::Div, false);
    }
    mask
}

/// Per-episode step bookkeeping shared by the learner and the RDG baseline.
pub(crate) struct EpisodeTrace {
    pub episode: usize,
    prev: f64,
    cumulative: f64,
    pub records: Vec<TraceRecord>,
}

impl EpisodeTrace {
    pub fn new(episode: usize, baseline: f64) -> Self {
        Self {
            episode,
            prev: baseline,
            cumulative: 0.0,
            records: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, step: usize, f1: &str, op: Operation, f2: Option<&str>, new_feature: String, outcome: &AddOutcome, pool_size: usize, score: f64, reward: f64) {
        let delta = score - self.prev;
        self.cumulative += delta;
        self.prev = score;
        self.records.push(TraceRecord {
            episode: self.episode,
            step,
            f1: f1.to_owned(),
            op: op.name().to_owned(),
            f2: f2.unwrap_or(NO_OPERAND).to_owned(),
            new_feature,
            outcome: outcome_tag(outcome).to_owned(),
            pool_size,
            score,
            delta,
            cumulative: self.cumulative,
            reward,
        });
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Splits `ds` with the configured fraction and runs the learner.
pub fn run_experiment(cfg: &RunConfig, ds: &Dataset) -> Result<RunReport> {
    let (train, test) = split(ds, cfg.train_fraction, cfg.seed)?;
    Ok(run_on_split(cfg, &train, &test)?.0)
}

/// Runs the learner on a given split and returns the trained networks too.
pub fn run_on_split(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<(RunReport, Agents)> {
    cfg.validate()?;
    if train.task() != test.task() || train.feature_names() != test.feature_names() {
        return Err(Error::InvalidDataset("train and test splits disagree".into()));
    }
    let start = Instant::now();
    let proto = EvalProtocol::from_config(cfg, train.task());
    let mut evaluator = Evaluator::new(proto, cfg.top_k);
    let base = init_pool(train, cfg.max_pool_size)?;
    let base_eval = evaluator.eval(&base)?;
    let mut best = BestTracker::new(&base, &base_eval);

    let net = NetConfig::from_run(cfg);
    let mut agents = Agents::new(&net, cfg.variant, cfg.seed)?;
    let hyper = TrainHyper::from_config(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut norm = RunningNormalizer::new(STATS_DIM);

    let mut trace = Vec::new();
    let mut curve: Vec<CurvePoint> = Vec::new();
    let mut updates = Vec::new();
    let mut since_improvement = 0;
    let mut episodes_run = 0;

    for ep in 0..cfg.episodes {
        episodes_run += 1;
        let best_before = best.score;
        let mut pool = base.clone();
        let ep_base = evaluator.eval(&pool)?;
        let mut prev_score = ep_base.score;
        let mut ep_trace = EpisodeTrace::new(ep, ep_base.score);
        let mut traj = Trajectory::default();
        let mut ep_best = ep_base.score;

        for step in 0..cfg.steps_per_episode {
            let desc = DescriptorMatrix::from_pool(&pool);
            let tokens = desc.network_input();
            let stats = stats_branch(&desc, &mut norm)?;
            let values = agents
                .critics
                .iter()
                .map(|c| Ok(c.forward(&stats, &tokens)?.0))
                .collect::<Result<Vec<f64>>>()?;

            let n = pool.len();
            let head = agents.head.distribution(&tokens, None, vec![true; n])?;
            let (f1, _) = sample(&head.probs, &mut rng);

            let mask = op_mask_for(&pool, f1);
            let f1_desc = desc.network_row(f1);
            let op_in = op_input(&mask, &f1_desc);
            let op_dist = agents.op.distribution(&op_in, &mask)?;
            let (op_idx, _) = sample(&op_dist.probs, &mut rng);
            let op = Operation::from_index(op_idx)?;
            if !mask.is_valid(op) {
                return Err(Error::MaskViolation {
                    op: op.name(),
                    feature: pool.get(f1).name().to_owned(),
                });
            }

            let tail = if op.is_binary() {
                let ctx = tail_context(&f1_desc, op);
                let tmask = tail_mask(n, f1, op);
                let d: Categorical = agents.tail.distribution(&tokens, Some(&ctx), tmask.clone())?;
                let (f2, _) = sample(&d.probs, &mut rng);
                Some(TailRecord {
                    context: ctx,
                    mask: tmask,
                    action: f2,
                    log_prob: d.log_probs[f2],
                })
            } else {
                None
            };

            let f1_name = pool.get(f1).name().to_owned();
            let f2_name = tail.as_ref().map(|t| pool.get(t.action).name().to_owned());
            let (new_name, outcome) = apply_action(&mut pool, f1, op, tail.as_ref().map(|t| t.action))?;
            let r = evaluator.eval(&pool)?;
            let reward = reward_from_score(&r, cfg.reward_mode, prev_score);
            let (id, iv) = info_terms(&pool, &r.selected)?;
            best.offer(&pool, &r, ep, step + 1);
            ep_best = ep_best.max(r.score);
            ep_trace.push(step + 1, &f1_name, op, f2_name.as_deref(), new_name, &outcome, pool.len(), r.score, reward);
            prev_score = r.score;

            traj.steps.push(Step {
                stats,
                tokens,
                head_action: f1,
                head_log_prob: head.log_probs[f1],
                op_input: op_in,
                op_mask: mask,
                op_action: op_idx,
                op_log_prob: op_dist.log_probs[op_idx],
                tail,
                values,
                reward,
                id,
                iv,
            });
        }

        let (mut upd, _) = sequential_update(&mut agents, &traj, &hyper)?;
        upd.episode = ep;
        upd.best_score = best.score;
        updates.push(upd);
        let running = best.score;
        curve.push(CurvePoint {
            episode: ep,
            episode_best: ep_best,
            running_best: running,
            mean_reward: mean(&traj.steps.iter().map(|s| s.reward).collect::<Vec<_>>()),
        });
        trace.extend(ep_trace.records);

        if best.score > best_before {
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if let Some(p) = cfg.early_stop_patience {
            if since_improvement >= p {
                log::info!("early stop after {} episodes without improvement", p);
                break;
            }
        }
    }

    let report = finish_report("haft", Some(cfg.variant), cfg, &base, base_eval.score, best, test, evaluator.protocol(), evaluator.calls, episodes_run, curve, trace, updates, start)?;
    Ok((report, agents))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn finish_report(
    method: &str,
    variant: Option<Variant>,
    cfg: &RunConfig,
    base: &FeaturePool,
    original_score: f64,
    best: BestTracker,
    test: &Dataset,
    proto: &EvalProtocol,
    eval_calls: usize,
    episodes_run: usize,
    curve: Vec<CurvePoint>,
    trace: Vec<TraceRecord>,
    updates: Vec<UpdateReport>,
    start: Instant,
) -> Result<RunReport> {
    let (test_topk, test_full) = holdout_scores(&best.pool, &best.selected, test, proto)?;
    let base_sel = crate::measures::select_features(base, cfg.top_k, proto.selection, proto.exec)?;
    let (orig_test, _) = holdout_scores(base, &base_sel, test, proto)?;
    Ok(RunReport {
        method: method.to_owned(),
        variant,
        seed: cfg.seed,
        config: cfg.clone(),
        original_score,
        best_score: best.score,
        best_episode: best.episode,
        best_step: best.step,
        test_score_topk: test_topk,
        test_score_full: test_full,
        original_test_score: orig_test,
        best_features: best.pool.names(),
        best_selected: best.selected.clone(),
        eval_calls,
        episodes_run,
        curve,
        trace,
        updates,
        wall_time_secs: start.elapsed().as_secs_f64(),
        best_pool: Some(best.pool),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub score: f64,
    pub per_fold: Vec<f64>,
    pub n_features: usize,
    pub rejected: usize,
}

/// Rebuilds a provenance file's features on `ds` (originals matched by
/// name) and scores the top-k columns with the configured protocol.
pub fn replay(prov: &ProvenanceFile, ds: &Dataset, cfg: &RunConfig) -> Result<ReplayReport> {
    let cols = prov
        .originals
        .iter()
        .map(|name| {
            ds.feature_names()
                .iter()
                .position(|n| n == name)
                .map(|j| ds.column(j).to_vec())
                .ok_or_else(|| Error::InvalidDataset(format!("column {name:?} missing from replay data")))
        })
        .collect::<Result<Vec<_>>>()?;
    let base = Dataset::new(cols.clone(), prov.originals.clone(), ds.target().to_vec(), ds.task())?;
    let mut pool = init_pool(&base, cfg.max_pool_size.max(prov.features.len() + prov.originals.len()))?;
    let mut rejected = 0;
    for entry in prov.features.iter().filter(|e| !e.expr.is_original()) {
        let (values, report) = entry.expr.evaluate(&cols)?;
        if !pool.add_feature(Feature::new(values, entry.expr.clone(), report)?)?.is_accepted() {
            rejected += 1;
        }
    }
    let proto = EvalProtocol::from_config(cfg, ds.task());
    let r = evaluate(&pool, cfg.top_k, &proto)?;
    Ok(ReplayReport {
        score: r.score,
        per_fold: r.per_fold,
        n_features: pool.len(),
        rejected,
    })
}
