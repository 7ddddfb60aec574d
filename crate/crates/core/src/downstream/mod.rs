//! Downstream scoring of a candidate feature set.
//!
//! [`evaluate`] picks the top-k columns of a pool, runs deterministic
//! k-fold CV with the configured model, and returns the mean metric. That
//! number is the score every agent receives as reward.

mod forest;
mod knn;
mod linear;
mod scaling;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use forest::{DecisionTree, ForestParams, RandomForest};
pub use knn::Knn;
pub use linear::Ridge;
pub use scaling::Standardizer;

use crate::data_io::{DownstreamModel, EvalScheme, RewardMode, RunConfig, SelectionCriterion, TaskKind};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::feature_space::FeaturePool;
use crate::measures::{f1_score, one_minus_rae, select_features};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MacroF1,
    OneMinusRae,
}

impl Metric {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Classification => Metric::MacroF1,
            TaskKind::Regression => Metric::OneMinusRae,
        }
    }

    pub fn compute(self, y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
        match self {
            Metric::MacroF1 => f1_score(y_true, y_pred),
            Metric::OneMinusRae => one_minus_rae(y_true, y_pred),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalProtocol {
    pub model: DownstreamModel,
    pub folds: usize,
    pub seed: u64,
    pub metric: Metric,
    pub scheme: EvalScheme,
    pub selection: SelectionCriterion,
    pub forest: ForestParams,
    pub ridge_alpha: f64,
    pub knn_k: usize,
    pub exec: Exec,
}

impl EvalProtocol {
    pub fn new(model: DownstreamModel, task: TaskKind, seed: u64) -> Self {
        Self {
            model,
            folds: 5,
            seed,
            metric: Metric::for_task(task),
            scheme: EvalScheme::Cv,
            selection: SelectionCriterion::Mi,
            forest: ForestParams::default(),
            ridge_alpha: 1.0,
            knn_k: 5,
            exec: Exec::Parallel,
        }
    }

    pub fn from_config(cfg: &RunConfig, task: TaskKind) -> Self {
        Self {
            model: cfg.downstream_model,
            folds: cfg.folds,
            seed: cfg.seed,
            metric: Metric::for_task(task),
            scheme: cfg.eval_scheme,
            selection: cfg.selection,
            forest: ForestParams {
                n_trees: cfg.rf_trees,
                max_depth: cfg.rf_max_depth,
                min_samples_split: 2,
            },
            ridge_alpha: cfg.ridge_alpha,
            knn_k: cfg.knn_k,
            exec: cfg.exec,
        }
    }

    fn check(&self, task: TaskKind) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidArgument("folds must be >= 2".into()));
        }
        if self.metric != Metric::for_task(task) {
            return Err(Error::Evaluation(format!(
                "metric {:?} does not fit task {:?}",
                self.metric, task
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub score: f64,
    pub per_fold: Vec<f64>,
    /// Pool indices of the columns that were scored.
    pub selected: Vec<usize>,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// A fitted downstream model.
#[derive(Debug, Clone)]
pub enum Model {
    Forest(RandomForest),
    Ridge(Ridge),
    Knn(Knn),
}

impl Model {
    pub fn fit(
        x: &[Vec<f64>],
        y: &[f64],
        task: TaskKind,
        proto: &EvalProtocol,
        seed: u64,
    ) -> Result<Self> {
        if task == TaskKind::Classification {
            let first = y.first().copied();
            if y.iter().all(|v| Some(*v) == first) {
                return Err(Error::Evaluation(
                    "degenerate fold: single class in training rows".into(),
                ));
            }
        }
        Ok(match proto.model {
            DownstreamModel::RandomForest => {
                Model::Forest(RandomForest::fit(x, y, task, proto.forest, seed, proto.exec)?)
            }
            DownstreamModel::Ridge => Model::Ridge(Ridge::fit(x, y, task, proto.ridge_alpha)?),
            DownstreamModel::Knn => Model::Knn(Knn::fit(x, y, task, proto.knn_k.min(x.len()))?),
        })
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        match self {
            Model::Forest(m) => m.predict(x),
            Model::Ridge(m) => m.predict(x),
            Model::Knn(m) => m.predict(x),
        }
    }
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Seed-keyed fold id per row; stratified by class for classification.
pub fn fold_assignment(y: &[f64], task: TaskKind, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match task {
        TaskKind::Regression => vec![(0..y.len()).collect()],
        TaskKind::Classification => {
            let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for (i, &v) in y.iter().enumerate() {
                by_class.entry(v as i64).or_default().push(i);
            }
            by_class.into_values().collect()
        }
    };
    let mut fold = vec![0; y.len()];
    let mut offset = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for (pos, &i) in g.iter().enumerate() {
            fold[i] = (offset + pos) % folds;
        }
        offset += g.len();
    }
    fold
}

/// Cross-validated (or holdout) score of a row-major design matrix.
pub fn evaluate_matrix(
    x: &[Vec<f64>],
    y: &[f64],
    task: TaskKind,
    proto: &EvalProtocol,
) -> Result<(f64, Vec<f64>)> {
    proto.check(task)?;
    if x.is_empty() || x[0].is_empty() {
        return Err(Error::Evaluation("no columns to evaluate".into()));
    }
    let fold = fold_assignment(y, task, proto.folds, proto.seed);
    let n_eval = match proto.scheme {
        EvalScheme::Cv => proto.folds,
        EvalScheme::Holdout => 1,
    };
    let per_fold = proto.exec.map_range(n_eval, |k| -> Result<f64> {
        let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, row) in x.iter().enumerate() {
            if fold[i] == k {
                xte.push(row.clone());
                yte.push(y[i]);
            } else {
                xtr.push(row.clone());
                ytr.push(y[i]);
            }
        }
        if xte.is_empty() || xtr.is_empty() {
            return Err(Error::Evaluation(format!("fold {k} is empty")));
        }
        let model = Model::fit(&xtr, &ytr, task, proto, mix_seed(proto.seed, k as u64))?;
        proto.metric.compute(&yte, &model.predict(&xte))
    });
    let per_fold: Vec<f64> = per_fold.into_iter().collect::<Result<_>>()?;
    let score = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
    Ok((score, per_fold))
}

/// Scores the top-k columns of `pool` against its target.
pub fn evaluate(pool: &FeaturePool, k: usize, proto: &EvalProtocol) -> Result<EvalResult> {
    if pool.is_empty() {
        return Err(Error::Evaluation("empty pool".into()));
    }
    let start = Instant::now();
    let selected = select_features(pool, k, proto.selection, proto.exec)?;
    let x = pool.design_matrix(&selected);
    let (score, per_fold) = evaluate_matrix(&x, pool.target(), pool.task(), proto)?;
    Ok(EvalResult {
        score,
        per_fold,
        selected,
        wall_time: start.elapsed(),
    })
}

/// Fits on training rows and scores on held-out rows.
pub fn score_holdout(
    x_train: &[Vec<f64>],
    y_train: &[f64],
    x_test: &[Vec<f64>],
    y_test: &[f64],
    task: TaskKind,
    proto: &EvalProtocol,
) -> Result<f64> {
    proto.check(task)?;
    let model = Model::fit(x_train, y_train, task, proto, proto.seed)?;
    proto.metric.compute(y_test, &model.predict(x_test))
}

/// Shared per-step reward. In `Delta` mode `previous` is the score of the
/// previous step (the original pool's score at step 1).
pub fn reward_from_score(result: &EvalResult, mode: RewardMode, previous: f64) -> f64 {
    match mode {
        RewardMode::Absolute => result.score,
        RewardMode::Delta => result.score - previous,
    }
}
