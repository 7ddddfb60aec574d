use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of operations; the width of masks and one-hot encodings.
pub const NUM_OPS: usize = 16;

/// Values with magnitude below this are treated as zero denominators.
pub const ZERO_EPS: f64 = 1e-12;
const TAN_POLE_EPS: f64 = 1e-6;
const EXP_MAX_INPUT: f64 = 50.0;
const POWER_MAX_INPUT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Unary,
    Binary,
}

/// The fixed operation set. The discriminant is the one-hot position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Sqrt = 0,
    Square,
    Cos,
    Sin,
    Tan,
    Exp,
    Cube,
    Log,
    Reciprocal,
    QuantileTransform,
    MinmaxScale,
    Sigmoid,
    Add,
    Sub,
    Mul,
    Div,
}

impl Operation {
    pub const ALL: [Operation; NUM_OPS] = [
        Operation::Sqrt,
        Operation::Square,
        Operation::Cos,
        Operation::Sin,
        Operation::Tan,
        Operation::Exp,
        Operation::Cube,
        Operation::Log,
        Operation::Reciprocal,
        Operation::QuantileTransform,
        Operation::MinmaxScale,
        Operation::Sigmoid,
        Operation::Add,
        Operation::Sub,
        Operation::Mul,
        Operation::Div,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("operation id {i} out of range")))
    }

    pub fn arity(self) -> Arity {
        if self.index() >= Operation::Add.index() {
            Arity::Binary
        } else {
            Arity::Unary
        }
    }

    pub fn is_binary(self) -> bool {
        self.arity() == Arity::Binary
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, Operation::Add | Operation::Mul)
    }

    /// Operations whose self-pairing yields a constant (`x-x`, `x/x`).
    pub fn forbids_self_pair(self) -> bool {
        matches!(self, Operation::Sub | Operation::Div)
    }

    pub fn name(self) -> &'static str {
        match self {
            Operation::Sqrt => "sqrt",
            Operation::Square => "square",
            Operation::Cos => "cos",
            Operation::Sin => "sin",
            Operation::Tan => "tan",
            Operation::Exp => "exp",
            Operation::Cube => "cube",
            Operation::Log => "log",
            Operation::Reciprocal => "reciprocal",
            Operation::QuantileTransform => "quantile_transform",
            Operation::MinmaxScale => "minmax_scale",
            Operation::Sigmoid => "sigmoid",
            Operation::Add => "add",
            Operation::Sub => "sub",
            Operation::Mul => "mul",
            Operation::Div => "div",
        }
    }

    /// Infix symbol used in binary feature names.
    pub fn symbol(self) -> Option<char> {
        match self {
            Operation::Add => Some('+'),
            Operation::Sub => Some('-'),
            Operation::Mul => Some('*'),
            Operation::Div => Some('/'),
            _ => None,
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            '+' => Some(Operation::Add),
            '-' => Some(Operation::Sub),
            '*' => Some(Operation::Mul),
            '/' => Some(Operation::Div),
            _ => None,
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|op| op.name() == s)
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-feature validity of every operation; bit `i` refers to `Operation::ALL[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskVector(pub [bool; NUM_OPS]);

impl MaskVector {
    pub fn all_valid() -> Self {
        Self([true; NUM_OPS])
    }

    pub fn is_valid(&self, op: Operation) -> bool {
        self.0[op.index()]
    }

    pub fn set(&mut self, op: Operation, valid: bool) {
        self.0[op.index()] = valid;
    }

    pub fn count_valid(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn as_f64(&self) -> [f64; NUM_OPS] {
        self.0.map(|b| if b { 1.0 } else { 0.0 })
    }
}

fn near_tan_pole(v: f64) -> bool {
    let r = (v - PI / 2.0) / PI;
    (r - r.round()).abs() * PI < TAN_POLE_EPS
}

/// Validity mask for a (hygienic) feature column.
///
/// Binary operations are always marked valid here; operand-specific checks
/// happen when they are applied.
pub fn valid_mask(values: &[f64]) -> MaskVector {
    let mut mask = MaskVector::all_valid();
    if values.is_empty() {
        return mask;
    }
    let (mut min, mut max, mut max_abs) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    let mut near_zero = false;
    let mut near_pole = false;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        max_abs = max_abs.max(v.abs());
        near_zero |= v.abs() < ZERO_EPS;
        near_pole |= near_tan_pole(v);
    }
    mask.set(Operation::Sqrt, min >= 0.0);
    mask.set(Operation::Log, min > 0.0);
    mask.set(Operation::Reciprocal, !near_zero);
    mask.set(Operation::Tan, !near_pole);
    mask.set(Operation::Exp, max <= EXP_MAX_INPUT);
    mask.set(Operation::Square, max_abs <= POWER_MAX_INPUT);
    mask.set(Operation::Cube, max_abs <= POWER_MAX_INPUT);
    mask.set(Operation::QuantileTransform, min != max);
    mask
}

/// Average-rank empirical CDF mapped onto [0, 1].
fn quantile_transform(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.5; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = 0.5 * (i + j) as f64 / (n - 1) as f64;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn minmax_scale(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - min) / range).collect()
}

/// Raw element-wise unary transform (before hygiene).
pub(crate) fn unary_raw(op: Operation, values: &[f64]) -> Vec<f64> {
    let map = |f: fn(f64) -> f64| values.iter().map(|&v| f(v)).collect();
    match op {
        Operation::Sqrt => map(f64::sqrt),
        Operation::Square => map(|v| v * v),
        Operation::Cos => map(f64::cos),
        Operation::Sin => map(f64::sin),
        Operation::Tan => map(f64::tan),
        Operation::Exp => map(f64::exp),
        Operation::Cube => map(|v| v * v * v),
        Operation::Log => map(f64::ln),
        Operation::Reciprocal => map(f64::recip),
        Operation::QuantileTransform => quantile_transform(values),
        Operation::MinmaxScale => minmax_scale(values),
        Operation::Sigmoid => map(|v| 1.0 / (1.0 + (-v).exp())),
        _ => unreachable!("binary operation {op} applied as unary"),
    }
}

/// Raw element-wise binary transform; returns values and the number of
/// guarded zero denominators.
pub(crate) fn binary_raw(op: Operation, lhs: &[f64], rhs: &[f64]) -> (Vec<f64>, usize) {
    let mut guarded = 0;
    let out = lhs
        .iter()
        .zip(rhs)
        .map(|(&a, &b)| match op {
            Operation::Add => a + b,
            Operation::Sub => a - b,
            Operation::Mul => a * b,
            Operation::Div => {
                if b.abs() < ZERO_EPS {
                    guarded += 1;
                    0.0
                } else {
                    a / b
                }
            }
            _ => unreachable!("unary operation {op} applied as binary"),
        })
        .collect();
    (out, guarded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operation_table_shape() {
        assert_eq!(Operation::ALL.len(), 16);
        let unary = Operation::ALL.iter().filter(|o| !o.is_binary()).count();
        assert_eq!(unary, 12);
        for (i, op) in Operation::ALL.iter().enumerate() {
            assert_eq!(op.index(), i);
            assert_eq!(Operation::from_index(i).unwrap(), *op);
            assert_eq!(Operation::from_name(op.name()), Some(*op));
        }
        assert!(Operation::from_index(16).is_err());
    }

    #[test]
    fn sqrt_masked_for_negative() {
        let m = valid_mask(&[-1.0, 4.0]);
        assert!(!m.is_valid(Operation::Sqrt));
        assert!(!m.is_valid(Operation::Log));
    }

    #[test]
    fn positive_feature_all_unary_valid() {
        let m = valid_mask(&[1.0, 2.0, 3.0]);
        assert_eq!(m.count_valid(), NUM_OPS);
    }

    #[test]
    fn constant_masks_quantile() {
        let m = valid_mask(&[2.0, 2.0, 2.0]);
        assert!(!m.is_valid(Operation::QuantileTransform));
        assert!(m.is_valid(Operation::MinmaxScale));
    }

    #[test]
    fn guard_rules() {
        assert!(!valid_mask(&[0.0, 1.0]).is_valid(Operation::Reciprocal));
        assert!(!valid_mask(&[0.0, 1.0]).is_valid(Operation::Log));
        assert!(valid_mask(&[0.0, 1.0]).is_valid(Operation::Sqrt));
        assert!(!valid_mask(&[PI / 2.0]).is_valid(Operation::Tan));
        assert!(!valid_mask(&[-PI / 2.0 + 1e-8]).is_valid(Operation::Tan));
        assert!(valid_mask(&[1.0]).is_valid(Operation::Tan));
        assert!(!valid_mask(&[51.0]).is_valid(Operation::Exp));
        assert!(!valid_mask(&[-2e10]).is_valid(Operation::Cube));
        let m = valid_mask(&[-5.0, 0.0]);
        for op in [Operation::Add, Operation::Sub, Operation::Mul, Operation::Div] {
            assert!(m.is_valid(op));
        }
    }

    #[test]
    fn unary_arithmetic() {
        assert_eq!(unary_raw(Operation::Square, &[1.0, 2.0, 3.0]), vec![1.0, 4.0, 9.0]);
        assert_eq!(unary_raw(Operation::MinmaxScale, &[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(unary_raw(Operation::Sigmoid, &[0.0]), vec![0.5]);
        assert_eq!(
            unary_raw(Operation::QuantileTransform, &[30.0, 10.0, 20.0, 20.0]),
            vec![1.0, 0.0, 0.5, 0.5]
        );
    }

    #[test]
    fn binary_arithmetic() {
        assert_eq!(binary_raw(Operation::Mul, &[1.0, 2.0], &[3.0, 4.0]).0, vec![3.0, 8.0]);
        let (v, g) = binary_raw(Operation::Div, &[1.0, 2.0], &[0.0, 2.0]);
        assert_eq!(v, vec![0.0, 1.0]);
        assert_eq!(g, 1);
        assert_eq!(binary_raw(Operation::Sub, &[3.0, -1.0], &[3.0, -1.0]).0, vec![0.0, 0.0]);
    }
}
