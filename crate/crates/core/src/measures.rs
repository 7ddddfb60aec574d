//! Histogram mutual information, redundancy/relevance scores, top-k
//! selection and the two evaluation metrics.
//!
//! MI is the plug-in estimate over quantile bins, in nats. Feature columns
//! use `min(20, ceil(sqrt(n)))` bins; classification labels are used as
//! their own codes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data_io::{SelectionCriterion, TaskKind};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::feature_space::FeaturePool;

pub const MAX_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscretizedColumn {
    codes: Vec<usize>,
    n_bins: usize,
}

impl DiscretizedColumn {
    pub fn new(codes: Vec<usize>, n_bins: usize) -> Result<Self> {
        if n_bins == 0 || codes.iter().any(|&c| c >= n_bins) {
            return Err(Error::InvalidArgument("codes out of bin range".into()));
        }
        Ok(Self { codes, n_bins })
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Bin count used for continuous columns of length `n`.
pub fn default_bins(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).clamp(1, MAX_BINS)
}

/// Bins at empirical quantiles. Edges that coincide (ties) or equal the
/// minimum are dropped, so the realised bin count may be smaller.
pub fn quantile_discretize(x: &[f64], n_bins: usize) -> Result<DiscretizedColumn> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("cannot discretize an empty vector".into()));
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be >= 1".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = Vec::with_capacity(n_bins);
    for b in 1..n_bins {
        let pos = (b * n).div_ceil(n_bins).min(n - 1);
        let e = sorted[pos];
        if e > sorted[0] && edges.last().map_or(true, |&last| e > last) {
            edges.push(e);
        }
    }
    let codes = x
        .iter()
        .map(|v| edges.partition_point(|&e| e <= *v))
        .collect();
    DiscretizedColumn::new(codes, edges.len() + 1)
}

/// Maps distinct values (ascending) onto `0..k`. Labels `{0, 1}` map to themselves.
pub fn label_codes(y: &[f64]) -> Result<DiscretizedColumn> {
    if y.is_empty() {
        return Err(Error::InvalidArgument("cannot discretize an empty vector".into()));
    }
    let mut distinct: Vec<f64> = y.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let codes = y
        .iter()
        .map(|v| distinct.partition_point(|d| d < v))
        .collect();
    DiscretizedColumn::new(codes, distinct.len())
}

pub fn discretize_feature(x: &[f64]) -> Result<DiscretizedColumn> {
    quantile_discretize(x, default_bins(x.len()))
}

pub fn discretize_target(y: &[f64], task: TaskKind) -> Result<DiscretizedColumn> {
    match task {
        TaskKind::Classification => label_codes(y),
        TaskKind::Regression => discretize_feature(y),
    }
}

/// Plug-in MI over the joint histogram, in nats, clamped at 0.
pub fn mutual_info(a: &DiscretizedColumn, b: &DiscretizedColumn) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "MI of columns with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let (ka, kb) = (a.n_bins, b.n_bins);
    let mut joint = vec![0u32; ka * kb];
    let mut pa = vec![0u32; ka];
    let mut pb = vec![0u32; kb];
    for (&i, &j) in a.codes.iter().zip(&b.codes) {
        joint[i * kb + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let n = a.len() as f64;
    let mut mi = 0.0;
    for i in 0..ka {
        if pa[i] == 0 {
            continue;
        }
        for j in 0..kb {
            let c = joint[i * kb + j];
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            mi += pij * (c as f64 * n / (pa[i] as f64 * pb[j] as f64)).ln();
        }
    }
    Ok(mi.max(0.0))
}

/// Plug-in entropy in nats.
pub fn entropy(a: &DiscretizedColumn) -> f64 {
    let mut counts = vec![0u32; a.n_bins];
    for &c in &a.codes {
        counts[c] += 1;
    }
    let n = a.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Redundancy/relevance of a feature subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoScores {
    pub redundancy: f64,
    pub relevance: f64,
}

/// Mean MI over all ordered pairs of the subset, diagonal included.
pub fn redundancy_id(subset: &[&DiscretizedColumn]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("redundancy of an empty subset".into()));
    }
    let n = subset.len();
    let mut total = 0.0;
    for i in 0..n {
        total += mutual_info(subset[i], subset[i])?;
        for j in i + 1..n {
            total += 2.0 * mutual_info(subset[i], subset[j])?;
        }
    }
    Ok(total / (n * n) as f64)
}

/// Mean label MI over the subset.
pub fn relevance_iv(subset: &[&DiscretizedColumn], y: &DiscretizedColumn) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("relevance of an empty subset".into()));
    }
    let total: f64 = subset
        .iter()
        .map(|c| mutual_info(c, y))
        .sum::<Result<f64>>()?;
    Ok(total / subset.len() as f64)
}

pub fn info_scores(subset: &[&DiscretizedColumn], y: &DiscretizedColumn) -> Result<InfoScores> {
    Ok(InfoScores {
        redundancy: redundancy_id(subset)?,
        relevance: relevance_iv(subset, y)?,
    })
}

/// Indices of the `min(k, n)` highest scores, descending; ties go to the
/// lower index.
pub fn top_k_by_score(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k.min(scores.len()));
    idx
}

/// Greedy max-relevance min-redundancy: at each step pick the candidate
/// maximising `MI(f; y) - mean_{s in S} MI(f; s)`.
pub fn mrmr_select(
    columns: &[&DiscretizedColumn],
    label_mi: &[f64],
    k: usize,
    exec: Exec,
) -> Result<Vec<usize>> {
    let n = columns.len();
    let k = k.min(n);
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut redundancy_sum = vec![0.0; n];
    let mut taken = vec![false; n];
    while selected.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..n).filter(|&j| !taken[j]) {
            let penalty = if selected.is_empty() {
                0.0
            } else {
                redundancy_sum[j] / selected.len() as f64
            };
            let score = label_mi[j] - penalty;
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        let (pick, _) = best.expect("candidates remain while selected < k");
        taken[pick] = true;
        selected.push(pick);
        let gains = exec.map_range(n, |j| {
            if taken[j] {
                Ok(0.0)
            } else {
                mutual_info(columns[j], columns[pick])
            }
        });
        for (acc, g) in redundancy_sum.iter_mut().zip(gains) {
            *acc += g?;
        }
    }
    Ok(selected)
}

/// Top-k pool indices by label MI (descending, older feature wins ties).
pub fn top_k_select(pool: &FeaturePool, k: usize) -> Vec<usize> {
    top_k_by_score(pool.label_mi(), k)
}

/// Column selection used by the downstream evaluation.
pub fn select_features(
    pool: &FeaturePool,
    k: usize,
    criterion: SelectionCriterion,
    exec: Exec,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    match criterion {
        SelectionCriterion::Mi => Ok(top_k_select(pool, k)),
        SelectionCriterion::Mrmr => {
            let cols: Vec<&DiscretizedColumn> = pool.features().iter().map(|f| f.codes()).collect();
            mrmr_select(&cols, pool.label_mi(), k, exec)
        }
    }
}

/// Redundancy and relevance of the given pool columns.
pub fn pool_info_scores(pool: &FeaturePool, idx: &[usize]) -> Result<InfoScores> {
    let cols: Vec<&DiscretizedColumn> = idx.iter().map(|&i| pool.get(i).codes()).collect();
    info_scores(&cols, pool.target_codes())
}

/// Macro-averaged F1 over the union of labels seen in truth and
/// prediction. A class with `precision + recall = 0` scores 0.
pub fn f1_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Shape(format!(
            "f1 on vectors of length {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    // (tp, fp, fn) per class
    let mut counts: BTreeMap<i64, (usize, usize, usize)> = BTreeMap::new();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let (t, p) = (t.round() as i64, p.round() as i64);
        if t == p {
            counts.entry(t).or_default().0 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(t).or_default().2 += 1;
        }
    }
    let total: f64 = counts
        .values()
        .map(|&(tp, fp, fn_)| {
            let denom = 2 * tp + fp + fn_;
            if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / counts.len() as f64)
}

/// `1 - sum|y - y_hat| / sum|y - mean(y)|`.
pub fn one_minus_rae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Shape(format!(
            "1-RAE on vectors of length {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let denom: f64 = y_true.iter().map(|y| (y - mean).abs()).sum();
    if denom == 0.0 {
        return Err(Error::Evaluation("1-RAE undefined for constant target".into()));
    }
    let num: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs()).sum();
    Ok(1.0 - num / denom)
}
