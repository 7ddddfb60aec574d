//! Tabular ingestion, run configuration and deterministic splitting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV_VAR: &str = "HAFT_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl TaskKind {
    /// Accepts the CLI spellings `cls`/`reg` as well as the full names.
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cls" | "classification" | "c" => Ok(TaskKind::Classification),
            "reg" | "regression" | "r" => Ok(TaskKind::Regression),
            other => Err(Error::InvalidArgument(format!("unknown task kind {other:?}"))),
        }
    }
}

/// Immutable table of original features plus target.
///
/// Features are stored column-major since every consumer works per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    feature_names: Vec<String>,
    target: Vec<f64>,
    task: TaskKind,
}

impl Dataset {
    /// Builds and validates a dataset. Requires at least 10 rows, 2 feature
    /// columns, finite values, and integral labels with two or more classes
    /// for classification.
    pub fn new(
        columns: Vec<Vec<f64>>,
        feature_names: Vec<String>,
        target: Vec<f64>,
        task: TaskKind,
    ) -> Result<Self> {
        let ds = Self::new_unchecked(columns, feature_names, target, task)?;
        if ds.n_rows() < 10 {
            return Err(Error::InvalidDataset(format!(
                "need at least 10 rows, got {}",
                ds.n_rows()
            )));
        }
        Ok(ds)
    }

    fn new_unchecked(
        columns: Vec<Vec<f64>>,
        feature_names: Vec<String>,
        target: Vec<f64>,
        task: TaskKind,
    ) -> Result<Self> {
        if columns.len() != feature_names.len() {
            return Err(Error::InvalidDataset(
                "feature name count does not match column count".into(),
            ));
        }
        if columns.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 feature columns, got {}",
                columns.len()
            )));
        }
        let n = target.len();
        if let Some(bad) = columns.iter().position(|c| c.len() != n) {
            return Err(Error::InvalidDataset(format!(
                "column {:?} has {} rows, target has {n}",
                feature_names[bad],
                columns[bad].len()
            )));
        }
        if columns.iter().flatten().chain(&target).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite value".into()));
        }
        if task == TaskKind::Classification {
            if target.iter().any(|v| v.fract() != 0.0) {
                return Err(Error::InvalidDataset(
                    "classification target must hold integer class labels".into(),
                ));
            }
            let mut classes: Vec<i64> = target.iter().map(|&v| v as i64).collect();
            classes.sort_unstable();
            classes.dedup();
            if classes.len() < 2 {
                return Err(Error::InvalidDataset(
                    "classification target needs at least 2 classes".into(),
                ));
            }
        }
        Ok(Self {
            columns,
            feature_names,
            target,
            task,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    /// Rows `idx` in the given order. Only structural checks apply to the
    /// result (a small test split may hold fewer than 10 rows).
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let columns = self
            .columns
            .iter()
            .map(|c| idx.iter().map(|&i| c[i]).collect())
            .collect();
        let target = idx.iter().map(|&i| self.target[i]).collect();
        Self::new_unchecked(columns, self.feature_names.clone(), target, self.task)
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "none" | "?"
    )
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Reads a header-row CSV. Missing feature cells are imputed with the column
/// median; constant columns are kept.
pub fn load_table(path: &Path, target_column: &str, task: TaskKind) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::TargetNotFound(target_column.to_owned()))?;
    if header.len() - 1 < 2 {
        return Err(Error::InvalidDataset(format!(
            "need at least 2 feature columns, got {}",
            header.len() - 1
        )));
    }

    let mut raw: Vec<Vec<Option<f64>>> = vec![Vec::new(); header.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (j, cell) in record.iter().enumerate() {
            let parsed = if is_missing(cell) {
                None
            } else {
                Some(cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::NonNumeric {
                        column: header[j].clone(),
                        row,
                        value: cell.to_owned(),
                    }
                })?)
            };
            raw[j].push(parsed);
        }
    }

    let target: Vec<f64> = raw[target_idx]
        .iter()
        .enumerate()
        .map(|(row, v)| {
            v.ok_or_else(|| {
                Error::InvalidDataset(format!("missing target value at row {row}"))
            })
        })
        .collect::<Result<_>>()?;

    let mut columns = Vec::with_capacity(header.len() - 1);
    let mut names = Vec::with_capacity(header.len() - 1);
    for (j, col) in raw.into_iter().enumerate() {
        if j == target_idx {
            continue;
        }
        let mut present: Vec<f64> = col.iter().flatten().copied().collect();
        let fill = median(&mut present);
        columns.push(col.into_iter().map(|v| v.unwrap_or(fill)).collect());
        names.push(header[j].clone());
    }
    Dataset::new(columns, names, target, task)
}

/// Deterministic, seed-keyed shuffle split. Classification splits are
/// stratified per class. Returned row orders are ascending.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = split_indices(ds, train_fraction, seed)?;
    Ok((ds.subset(&train_idx)?, ds.subset(&test_idx)?))
}

pub fn split_indices(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match ds.task() {
        TaskKind::Regression => vec![(0..ds.n_rows()).collect()],
        TaskKind::Classification => {
            let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for (i, &y) in ds.target().iter().enumerate() {
                by_class.entry(y as i64).or_default().push(i);
            }
            by_class.into_values().collect()
        }
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut group in groups {
        group.shuffle(&mut rng);
        let n_train = (train_fraction * group.len() as f64).round() as usize;
        if ds.task() == TaskKind::Classification && (n_train == 0 || n_train == group.len()) {
            return Err(Error::Split(format!(
                "a class with {} samples cannot populate both splits",
                group.len()
            )));
        }
        train.extend_from_slice(&group[..n_train]);
        test.extend_from_slice(&group[n_train..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split("a split would be empty".into()));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Shared critic with advantage decomposition.
    Full,
    /// One critic per agent.
    NoSharedCritic,
    /// Shared critic, every agent trained on the raw joint advantage.
    NoDecomp,
    /// Critic sees only the 49-dim statistics half of the state.
    StatsOnly,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownstreamModel {
    RandomForest,
    Ridge,
    Knn,
}

/// How the per-step reward is derived from the downstream score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// The score itself.
    Absolute,
    /// Score minus the previous step's score (baseline pool at step 1).
    Delta,
}

/// Where the redundancy/relevance terms enter training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapingMode {
    /// Folded into the per-step reward as `- beta_id * Id + beta_iv * Iv`.
    ShapedReward,
    /// Added to the policy loss value as constants (no gradient).
    LossConstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalScheme {
    /// k-fold cross-validation on the training split.
    Cv,
    /// Single seed-keyed holdout (1/folds of the rows).
    Holdout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    /// Plain label mutual information.
    Mi,
    /// Greedy max-relevance min-redundancy.
    Mrmr,
}

/// Full run configuration. Every key is optional in the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub seed: u64,
    pub variant: Variant,
    pub downstream_model: DownstreamModel,
    pub top_k: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    /// Policy learning rate (head, operation, tail).
    pub lr: f64,
    pub lr_critic: f64,
    pub entropy_coef: f64,
    pub beta_id: f64,
    pub beta_iv: f64,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub op_hidden: usize,
    pub critic_hidden: usize,
    pub epochs_per_update: usize,
    pub folds: usize,
    pub eval_scheme: EvalScheme,
    pub selection: SelectionCriterion,
    pub train_fraction: f64,
    pub max_pool_size: usize,
    pub reward_mode: RewardMode,
    pub shaping_mode: ShapingMode,
    /// Stop after this many episodes without a best-score improvement.
    pub early_stop_patience: Option<usize>,
    /// Cap on generated candidates for the expansion-reduction baseline.
    pub erg_budget: usize,
    pub rf_trees: usize,
    pub rf_max_depth: usize,
    pub ridge_alpha: f64,
    pub knn_k: usize,
    pub exec: crate::exec::Exec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            steps_per_episode: 25,
            seed: 0,
            variant: Variant::Full,
            downstream_model: DownstreamModel::RandomForest,
            top_k: 20,
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            lr: 1e-3,
            lr_critic: 1e-3,
            entropy_coef: 0.01,
            beta_id: 0.05,
            beta_iv: 0.05,
            d_model: 32,
            n_heads: 4,
            n_encoder_layers: 2,
            op_hidden: 64,
            critic_hidden: 64,
            epochs_per_update: 4,
            folds: 5,
            eval_scheme: EvalScheme::Cv,
            selection: SelectionCriterion::Mi,
            train_fraction: 0.8,
            max_pool_size: 512,
            reward_mode: RewardMode::Absolute,
            shaping_mode: ShapingMode::ShapedReward,
            early_stop_patience: None,
            erg_budget: 200,
            rf_trees: 50,
            rf_max_depth: 8,
            ridge_alpha: 1.0,
            knn_k: 5,
            exec: crate::exec::Exec::Parallel,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.episodes < 1 {
            return fail("episodes must be >= 1".into());
        }
        if self.steps_per_episode < 1 {
            return fail("steps_per_episode must be >= 1".into());
        }
        if self.top_k < 1 {
            return fail("top_k must be >= 1".into());
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.clip_eps > 0.0) {
            return fail(format!("clip_eps must be > 0, got {}", self.clip_eps));
        }
        for (name, v) in [("lr", self.lr), ("lr_critic", self.lr_critic)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("entropy_coef", self.entropy_coef),
            ("beta_id", self.beta_id),
            ("beta_iv", self.beta_iv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.n_encoder_layers < 1 || self.op_hidden < 1 || self.critic_hidden < 1 {
            return fail("network sizes must be >= 1".into());
        }
        if self.epochs_per_update < 1 {
            return fail("epochs_per_update must be >= 1".into());
        }
        if self.folds < 2 {
            return fail("folds must be >= 2".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must lie in (0, 1)".into());
        }
        if self.max_pool_size < 2 {
            return fail("max_pool_size must be >= 2".into());
        }
        if self.rf_trees < 1 || self.rf_max_depth < 1 || self.knn_k < 1 || self.erg_budget < 1 {
            return fail("model sizes must be >= 1".into());
        }
        if !(self.ridge_alpha > 0.0) {
            return fail("ridge_alpha must be > 0".into());
        }
        Ok(())
    }

    /// Applies `HAFT_SEED` when it is set to an integer.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV_VAR) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV_VAR}={raw:?} is not an integer")))?;
        }
        Ok(())
    }
}

/// Parses a JSON configuration string. Blank input yields the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = if text.trim().is_empty() {
        RunConfig::default()
    } else {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn small_csv() -> String {
        let mut s = String::from("a,b,y\n");
        for i in 0..12 {
            s.push_str(&format!("{},{},{}\n", i, 2 * i, i % 2));
        }
        s
    }

    #[test]
    fn parses_three_column_table() {
        let f = write_tmp(&small_csv());
        let ds = load_table(f.path(), "y", TaskKind::Classification).unwrap();
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.feature_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.n_rows(), 12);
    }

    #[test]
    fn imputes_median() {
        let mut s = String::from("a,b,y\n1,0,0\n2,0,1\n,0,0\n4,0,1\n");
        for i in 0..8 {
            s.push_str(&format!("{},{},{}\n", 2, i, i % 2));
        }
        let f = write_tmp(&s);
        let ds = load_table(f.path(), "y", TaskKind::Classification).unwrap();
        // Non-missing values: 1,2,4 plus eight 2s -> median 2.
        assert_eq!(ds.column(0)[2], 2.0);

        let mut just = vec![1.0, 2.0, 4.0];
        assert_eq!(median(&mut just), 2.0);
    }

    #[test]
    fn missing_target_column() {
        let f = write_tmp(&small_csv());
        let err = load_table(f.path(), "z", TaskKind::Regression).unwrap_err();
        assert!(err.to_string().contains("target column not found"));
    }

    #[test]
    fn rejects_non_numeric_and_missing_file() {
        let f = write_tmp("a,b,y\n1,x,0\n");
        assert!(matches!(
            load_table(f.path(), "y", TaskKind::Regression),
            Err(Error::NonNumeric { .. })
        ));
        assert!(matches!(
            load_table(Path::new("/nonexistent/file.csv"), "y", TaskKind::Regression),
            Err(Error::Io { .. })
        ));
        let one_feature = write_tmp("a,y\n1,0\n");
        assert!(load_table(one_feature.path(), "y", TaskKind::Regression).is_err());
    }

    #[test]
    fn loading_is_deterministic() {
        let f = write_tmp(&small_csv());
        let a = load_table(f.path(), "y", TaskKind::Regression).unwrap();
        let b = load_table(f.path(), "y", TaskKind::Regression).unwrap();
        assert_eq!(a, b);
    }

    fn balanced(n: usize) -> Dataset {
        let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| (i * 7 % 13) as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        Dataset::new(vec![a, b], vec!["a".into(), "b".into()], y, TaskKind::Classification)
            .unwrap()
    }

    #[test]
    fn split_partitions_and_reproduces() {
        let ds = balanced(100);
        let (tr, te) = split_indices(&ds, 0.8, 42).unwrap();
        assert_eq!(tr.len(), 80);
        assert_eq!(te.len(), 20);
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(&ds, 0.8, 42).unwrap(), (tr.clone(), te));
        assert_ne!(split_indices(&ds, 0.8, 43).unwrap().0, tr);
    }

    #[test]
    fn split_stratifies() {
        let ds = balanced(40);
        let (train, test) = split(&ds, 0.5, 7).unwrap();
        let ones = |d: &Dataset| d.target().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ones(&train), 10);
        assert_eq!(ones(&test), 10);
        assert_eq!(train.n_rows(), 20);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let ds = balanced(20);
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.0, 0).is_err());
    }

    #[test]
    fn split_rejects_tiny_class() {
        let a: Vec<f64> = (0..12).map(f64::from).collect();
        let mut y = vec![0.0; 12];
        y[0] = 1.0;
        let ds = Dataset::new(
            vec![a.clone(), a],
            vec!["a".into(), "b".into()],
            y,
            TaskKind::Classification,
        )
        .unwrap();
        assert!(matches!(split(&ds, 0.8, 1), Err(Error::Split(_))));
    }

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.episodes, 100);
        assert_eq!(cfg.steps_per_episode, 25);
        assert_eq!(cfg.top_k, 20);
        assert_eq!(cfg.gamma, 0.99);
        assert_eq!(cfg.lambda, 0.95);
        assert_eq!(cfg.clip_eps, 0.2);
        assert_eq!(cfg.n_encoder_layers, 2);

        let cfg = parse_config(r#"{"episodes": 5}"#).unwrap();
        assert_eq!(cfg.episodes, 5);
        assert_eq!(cfg.steps_per_episode, 25);

        assert!(matches!(parse_config(r#"{"clip_eps": -0.1}"#), Err(Error::Config(_))));
        assert!(matches!(parse_config(r#"{"bogus": 1}"#), Err(Error::Config(_))));
        assert!(parse_config(r#"{"d_model": 30, "n_heads": 4}"#).is_err());
        assert!(parse_config(r#"{"gamma": 1.5}"#).is_err());
    }

    #[test]
    fn config_file_round_trip() {
        let cfg = parse_config(r#"{"episodes": 3, "variant": "no-decomp", "lr": 0.0001}"#)
            .unwrap();
        let f = write_tmp(&serde_json::to_string(&cfg).unwrap());
        assert_eq!(load_config(f.path()).unwrap(), cfg);
        let empty = write_tmp("");
        assert_eq!(load_config(empty.path()).unwrap(), RunConfig::default());
    }

    #[test]
    fn task_and_variant_parsing() {
        assert_eq!(TaskKind::parse("cls").unwrap(), TaskKind::Classification);
        assert_eq!(TaskKind::parse("reg").unwrap(), TaskKind::Regression);
        assert_eq!(Variant::parse("no-shared-critic").unwrap(), Variant::NoSharedCritic);
        assert_eq!(Variant::parse("stats-only").unwrap(), Variant::StatsOnly);
        assert!(Variant::parse("nope").is_err());
    }
}
