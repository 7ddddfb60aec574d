//! The evolving feature pool: operations, traceable provenance, validity
//! masks and numeric hygiene.

mod expr;
mod ops;
mod pool;

use serde::{Deserialize, Serialize};

pub use expr::Expr;
pub use ops::{valid_mask, Arity, MaskVector, Operation, NUM_OPS, ZERO_EPS};
pub use pool::{init_pool, AddOutcome, FeaturePool, ProvenanceEntry, ProvenanceFile, COLLINEAR_THRESHOLD};

use crate::error::{Error, Result};
use crate::measures::{discretize_feature, DiscretizedColumn};

/// Magnitude bound applied to every generated value.
pub const VALUE_BOUND: f64 = 1e12;

/// Counts of replacements made by [`hygiene`] (and guarded divisions).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HygieneReport {
    pub nan: usize,
    pub pos_inf: usize,
    pub neg_inf: usize,
    pub clamped: usize,
    pub div_guarded: usize,
}

impl HygieneReport {
    pub fn is_empty(&self) -> bool {
        *self == HygieneReport::default()
    }

    /// Replacements that changed a non-finite value.
    pub fn non_finite(&self) -> usize {
        self.nan + self.pos_inf + self.neg_inf
    }

    pub fn merge(&mut self, other: &HygieneReport) {
        self.nan += other.nan;
        self.pos_inf += other.pos_inf;
        self.neg_inf += other.neg_inf;
        self.clamped += other.clamped;
        self.div_guarded += other.div_guarded;
    }
}

/// NaN -> 0, +Inf -> 1e12, -Inf -> -1e12, then clamp to [-1e12, 1e12].
pub fn hygiene(mut values: Vec<f64>) -> (Vec<f64>, HygieneReport) {
    let mut report = HygieneReport::default();
    for v in values.iter_mut() {
        if v.is_nan() {
            *v = 0.0;
            report.nan += 1;
        } else if *v == f64::INFINITY {
            *v = VALUE_BOUND;
            report.pos_inf += 1;
        } else if *v == f64::NEG_INFINITY {
            *v = -VALUE_BOUND;
            report.neg_inf += 1;
        } else if v.abs() > VALUE_BOUND {
            *v = v.clamp(-VALUE_BOUND, VALUE_BOUND);
            report.clamped += 1;
        }
    }
    (values, report)
}

/// One column of the pool with its provenance and cached summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    values: Vec<f64>,
    expr: Expr,
    name: String,
    key: String,
    mean: f64,
    std: f64,
    codes: DiscretizedColumn,
    hygiene: HygieneReport,
}

impl Feature {
    /// Wraps values that already passed hygiene.
    pub fn new(values: Vec<f64>, expr: Expr, hygiene: HygieneReport) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("feature has no rows".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(expr.name()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let codes = discretize_feature(&values)?;
        Ok(Self {
            name: expr.name(),
            key: expr.canonical_key(),
            values,
            expr,
            mean,
            std,
            codes,
            hygiene,
        })
    }

    pub fn original(index: usize, name: &str, values: Vec<f64>) -> Result<Self> {
        let (values, report) = hygiene(values);
        Self::new(values, Expr::original(index, name), report)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn is_original(&self) -> bool {
        self.expr.is_original()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }

    pub fn codes(&self) -> &DiscretizedColumn {
        &self.codes
    }

    pub fn hygiene_report(&self) -> &HygieneReport {
        &self.hygiene
    }

    pub fn mask(&self) -> MaskVector {
        valid_mask(&self.values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Pearson correlation; 0 when either side is constant.
    pub fn correlation(&self, other: &Feature) -> f64 {
        if self.std == 0.0 || other.std == 0.0 {
            return 0.0;
        }
        let n = self.values.len() as f64;
        let cov = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - self.mean) * (b - other.mean))
            .sum::<f64>()
            / n;
        cov / (self.std * other.std)
    }
}

/// Applies a unary operation. Fails when the feature's mask rules it out.
pub fn apply_unary(op: Operation, f: &Feature) -> Result<Feature> {
    if op.is_binary() {
        return Err(Error::InvalidArgument(format!("{op} is binary")));
    }
    if !f.mask().is_valid(op) {
        return Err(Error::MaskViolation {
            op: op.name(),
            feature: f.name().to_owned(),
        });
    }
    let (values, report) = hygiene(ops::unary_raw(op, f.values()));
    Feature::new(
        values,
        Expr::Unary {
            op,
            arg: Box::new(f.expr().clone()),
        },
        report,
    )
}

/// Applies a binary operation; zero denominators yield 0.
pub fn apply_binary(op: Operation, lhs: &Feature, rhs: &Feature) -> Result<Feature> {
    if !op.is_binary() {
        return Err(Error::InvalidArgument(format!("{op} is unary")));
    }
    if lhs.len() != rhs.len() {
        return Err(Error::Shape(format!(
            "operand lengths {} and {} differ",
            lhs.len(),
            rhs.len()
        )));
    }
    let (raw, guarded) = ops::binary_raw(op, lhs.values(), rhs.values());
    let (values, mut report) = hygiene(raw);
    report.div_guarded = guarded;
    Feature::new(
        values,
        Expr::Binary {
            op,
            lhs: Box::new(lhs.expr().clone()),
            rhs: Box::new(rhs.expr().clone()),
        },
        report,
    )
}
