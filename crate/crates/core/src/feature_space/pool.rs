use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{Expr, Feature};
use crate::data_io::{Dataset, TaskKind};
use crate::error::{Error, Result};
use crate::measures::{discretize_target, mutual_info, DiscretizedColumn};

/// Features whose absolute correlation with a pool member exceeds this are rejected.
pub const COLLINEAR_THRESHOLD: f64 = 0.999;

/// Why a candidate was or was not added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AddOutcome {
    Accepted { evicted: Option<usize> },
    Duplicate,
    Constant,
    Collinear { with: usize },
}

impl AddOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, AddOutcome::Accepted { .. })
    }
}

/// The current feature set: originals first, then generated features in
/// the order they were accepted.
#[derive(Debug, Clone)]
pub struct FeaturePool {
    features: Vec<Feature>,
    label_mi: Vec<f64>,
    keys: HashSet<String>,
    target: Vec<f64>,
    target_codes: DiscretizedColumn,
    task: TaskKind,
    n_original: usize,
    max_size: usize,
}

/// A pool holding exactly the dataset's original columns.
pub fn init_pool(ds: &Dataset, max_size: usize) -> Result<FeaturePool> {
    FeaturePool::from_dataset(ds, max_size)
}

impl FeaturePool {
    pub fn from_dataset(ds: &Dataset, max_size: usize) -> Result<Self> {
        let target_codes = discretize_target(ds.target(), ds.task())?;
        let mut pool = Self {
            features: Vec::with_capacity(ds.n_features()),
            label_mi: Vec::with_capacity(ds.n_features()),
            keys: HashSet::new(),
            target: ds.target().to_vec(),
            target_codes,
            task: ds.task(),
            n_original: ds.n_features(),
            max_size: max_size.max(ds.n_features()),
        };
        for (j, name) in ds.feature_names().iter().enumerate() {
            let f = Feature::original(j, name, ds.column(j).to_vec())?;
            pool.push(f)?;
        }
        Ok(pool)
    }

    fn push(&mut self, f: Feature) -> Result<()> {
        if f.len() != self.target.len() {
            return Err(Error::Shape(format!(
                "feature {} has {} rows, pool has {}",
                f.name(),
                f.len(),
                self.target.len()
            )));
        }
        self.label_mi.push(mutual_info(f.codes(), &self.target_codes)?);
        self.keys.insert(f.key().to_owned());
        self.features.push(f);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_original(&self) -> usize {
        self.n_original
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn get(&self, i: usize) -> &Feature {
        &self.features[i]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn target_codes(&self) -> &DiscretizedColumn {
        &self.target_codes
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    /// Cached `MI(f; y)` per feature, in pool order.
    pub fn label_mi(&self) -> &[f64] {
        &self.label_mi
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.keys.contains(key)
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name().to_owned()).collect()
    }

    /// Appends `f` unless it duplicates a provenance key, is constant, or is
    /// nearly collinear with an existing feature. When the pool is full, the
    /// generated feature with the lowest label MI is evicted first.
    pub fn add_feature(&mut self, f: Feature) -> Result<AddOutcome> {
        if self.keys.contains(f.key()) {
            return Ok(AddOutcome::Duplicate);
        }
        if f.is_constant() {
            return Ok(AddOutcome::Constant);
        }
        if let Some(with) = self
            .features
            .iter()
            .position(|g| f.correlation(g).abs() > COLLINEAR_THRESHOLD)
        {
            return Ok(AddOutcome::Collinear { with });
        }
        let mut evicted = None;
        if self.features.len() >= self.max_size {
            let victim = (self.n_original..self.features.len())
                .min_by(|&a, &b| self.label_mi[a].total_cmp(&self.label_mi[b]).then(a.cmp(&b)));
            match victim {
                Some(v) => {
                    let gone = self.features.remove(v);
                    self.label_mi.remove(v);
                    self.keys.remove(gone.key());
                    evicted = Some(v);
                }
                None => return Err(Error::InvalidArgument("pool is full of originals".into())),
            }
        }
        self.push(f)?;
        Ok(AddOutcome::Accepted { evicted })
    }

    /// The selected columns as row-major `rows x idx.len()` data.
    pub fn design_matrix(&self, idx: &[usize]) -> Vec<Vec<f64>> {
        let n = self.target.len();
        (0..n)
            .map(|r| idx.iter().map(|&j| self.features[j].values()[r]).collect())
            .collect()
    }

    /// Writes one column per feature with traceable names as headers.
    pub fn export_csv(&self, path: &Path, idx: Option<&[usize]>) -> Result<()> {
        let all: Vec<usize> = (0..self.len()).collect();
        let idx = idx.unwrap_or(&all);
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(idx.iter().map(|&j| self.features[j].name()))?;
        for r in 0..self.target.len() {
            w.write_record(idx.iter().map(|&j| self.features[j].values()[r].to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// JSON sidecar mapping each exported name to its expression tree.
    pub fn provenance(&self, idx: Option<&[usize]>) -> ProvenanceFile {
        let all: Vec<usize> = (0..self.len()).collect();
        let idx = idx.unwrap_or(&all);
        ProvenanceFile {
            originals: self.features[..self.n_original]
                .iter()
                .map(|f| f.name().to_owned())
                .collect(),
            features: idx
                .iter()
                .map(|&j| ProvenanceEntry {
                    name: self.features[j].name().to_owned(),
                    key: self.features[j].key().to_owned(),
                    expr: self.features[j].expr().clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ProvenanceEntry {
    pub name: String,
    pub key: String,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ProvenanceFile {
    pub originals: Vec<String>,
    pub features: Vec<ProvenanceEntry>,
}

impl ProvenanceFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_space::{apply_binary, apply_unary, Operation};

    fn dataset() -> Dataset {
        let n = 30;
        let a: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 - 3.0).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64 + 0.5).collect();
        let y: Vec<f64> = a.iter().zip(&b).map(|(x, z)| x * z).collect();
        Dataset::new(vec![a, b], vec!["a".into(), "b".into()], y, TaskKind::Regression).unwrap()
    }

    #[test]
    fn init_holds_originals() {
        let pool = init_pool(&dataset(), 512).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.names(), vec!["a", "b"]);
        assert!(pool.features().iter().all(|f| f.is_original()));
        assert!(pool.features().iter().all(|f| f.expr().depth() == 0));
    }

    #[test]
    fn dedup_constant_and_append() {
        let mut pool = init_pool(&dataset(), 512).unwrap();
        let ab = apply_binary(Operation::Mul, pool.get(0), pool.get(1)).unwrap();
        let ba = apply_binary(Operation::Mul, pool.get(1), pool.get(0)).unwrap();
        assert!(pool.add_feature(ab.clone()).unwrap().is_accepted());
        assert_eq!(pool.len(), 3);
        assert_eq!(pool.add_feature(ab).unwrap(), AddOutcome::Duplicate);
        assert_eq!(pool.add_feature(ba).unwrap(), AddOutcome::Duplicate);
        let zero = apply_binary(Operation::Sub, pool.get(0), pool.get(0)).unwrap();
        assert_eq!(pool.add_feature(zero).unwrap(), AddOutcome::Constant);
        let scaled = apply_unary(Operation::MinmaxScale, pool.get(0)).unwrap();
        assert_eq!(pool.add_feature(scaled).unwrap(), AddOutcome::Collinear { with: 0 });
        assert_eq!(pool.len(), 3);
    }

    #[test]
    fn eviction_keeps_originals() {
        let mut pool = init_pool(&dataset(), 3).unwrap();
        let f1 = apply_unary(Operation::Sin, pool.get(0)).unwrap();
        let f2 = apply_unary(Operation::Cos, pool.get(1)).unwrap();
        assert!(pool.add_feature(f1).unwrap().is_accepted());
        let out = pool.add_feature(f2).unwrap();
        assert_eq!(out, AddOutcome::Accepted { evicted: Some(2) });
        assert_eq!(pool.len(), 3);
        assert!(pool.get(0).is_original() && pool.get(1).is_original());
        assert_eq!(pool.get(2).name(), "cos(b)");
    }

    #[test]
    fn export_round_trip() {
        let mut pool = init_pool(&dataset(), 512).unwrap();
        let ab = apply_binary(Operation::Div, pool.get(0), pool.get(1)).unwrap();
        pool.add_feature(apply_unary(Operation::Sigmoid, &ab).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        pool.export_csv(&dir.path().join("f.csv"), None).unwrap();
        let text = fs::read_to_string(dir.path().join("f.csv")).unwrap();
        assert!(text.starts_with("a,b,sigmoid([a]/[b])"));
        let prov = pool.provenance(None);
        prov.write(&dir.path().join("p.json")).unwrap();
        let back = ProvenanceFile::read(&dir.path().join("p.json")).unwrap();
        assert_eq!(back, prov);
        for e in &back.features {
            assert_eq!(Expr::parse(&e.name, &back.originals).unwrap(), e.expr);
        }
    }
}
