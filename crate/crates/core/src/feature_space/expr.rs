//! Provenance trees and the traceable-name grammar.
//!
//! ```text
//! name   := original | unary "(" name ")" | "[" name "]" sym "[" name "]"
//! sym    := "+" | "-" | "*" | "/"
//! ```

use serde::{Deserialize, Serialize};

use super::ops::{binary_raw, unary_raw, Operation};
use super::{hygiene, HygieneReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expr {
    Original {
        index: usize,
        name: String,
    },
    Unary {
        op: Operation,
        arg: Box<Expr>,
    },
    Binary {
        op: Operation,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl Expr {
    pub fn original(index: usize, name: impl Into<String>) -> Self {
        Expr::Original {
            index,
            name: name.into(),
        }
    }

    pub fn is_original(&self) -> bool {
        matches!(self, Expr::Original { .. })
    }

    /// Human-readable traceable name, e.g. `sin([a]*[b])`.
    pub fn name(&self) -> String {
        match self {
            Expr::Original { name, .. } => name.clone(),
            Expr::Unary { op, arg } => format!("{}({})", op.name(), arg.name()),
            Expr::Binary { op, lhs, rhs } => format!(
                "[{}]{}[{}]",
                lhs.name(),
                op.symbol().expect("binary op has a symbol"),
                rhs.name()
            ),
        }
    }

    /// Key used for deduplication. Operands of commutative operations are
    /// sorted so `[a]*[b]` and `[b]*[a]` collide.
    pub fn canonical_key(&self) -> String {
        match self {
            Expr::Original { index, .. } => format!("#{index}"),
            Expr::Unary { op, arg } => format!("{}({})", op.name(), arg.canonical_key()),
            Expr::Binary { op, lhs, rhs } => {
                let (mut a, mut b) = (lhs.canonical_key(), rhs.canonical_key());
                if op.is_commutative() && b < a {
                    std::mem::swap(&mut a, &mut b);
                }
                format!("{}({},{})", op.name(), a, b)
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Original { .. } => 0,
            Expr::Unary { arg, .. } => 1 + arg.depth(),
            Expr::Binary { lhs, rhs, .. } => 1 + lhs.depth().max(rhs.depth()),
        }
    }

    /// Recomputes the feature from original columns. Each intermediate goes
    /// through hygiene; the reports are accumulated.
    pub fn evaluate(&self, originals: &[Vec<f64>]) -> Result<(Vec<f64>, HygieneReport)> {
        let mut report = HygieneReport::default();
        let values = self.eval_inner(originals, &mut report)?;
        Ok((values, report))
    }

    fn eval_inner(&self, originals: &[Vec<f64>], report: &mut HygieneReport) -> Result<Vec<f64>> {
        let raw = match self {
            Expr::Original { index, name } => {
                return originals.get(*index).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!("original feature {name:?} (#{index}) missing"))
                })
            }
            Expr::Unary { op, arg } => unary_raw(*op, &arg.eval_inner(originals, report)?),
            Expr::Binary { op, lhs, rhs } => {
                let l = lhs.eval_inner(originals, report)?;
                let r = rhs.eval_inner(originals, report)?;
                let (v, guarded) = binary_raw(*op, &l, &r);
                report.div_guarded += guarded;
                v
            }
        };
        let (clean, r) = hygiene(raw);
        report.merge(&r);
        Ok(clean)
    }

    /// Parses a traceable name back into a tree over `original_names`.
    pub fn parse(name: &str, original_names: &[String]) -> Result<Expr> {
        if let Some(index) = original_names.iter().position(|n| n == name) {
            return Ok(Expr::original(index, name));
        }
        if let Some(rest) = name.strip_prefix('[') {
            let close = matching_bracket(rest).ok_or_else(|| Error::Parse(name.to_owned()))?;
            let lhs = &rest[..close];
            let after = &rest[close + 1..];
            let mut chars = after.chars();
            let op = chars
                .next()
                .and_then(Operation::from_symbol)
                .ok_or_else(|| Error::Parse(name.to_owned()))?;
            let tail = chars.as_str();
            let rhs = tail
                .strip_prefix('[')
                .and_then(|t| t.strip_suffix(']'))
                .ok_or_else(|| Error::Parse(name.to_owned()))?;
            if matching_bracket(&tail[1..]) != Some(tail.len() - 2) {
                return Err(Error::Parse(name.to_owned()));
            }
            return Ok(Expr::Binary {
                op,
                lhs: Box::new(Expr::parse(lhs, original_names)?),
                rhs: Box::new(Expr::parse(rhs, original_names)?),
            });
        }
        if let Some(open) = name.find('(') {
            if let (Some(op), Some(inner)) = (
                Operation::from_name(&name[..open]),
                name[open + 1..].strip_suffix(')'),
            ) {
                if !op.is_binary() {
                    return Ok(Expr::Unary {
                        op,
                        arg: Box::new(Expr::parse(inner, original_names)?),
                    });
                }
            }
        }
        Err(Error::Parse(name.to_owned()))
    }
}

/// Index of the `]` closing an already-consumed `[`.
fn matching_bracket(s: &str) -> Option<usize> {
    let mut depth = 1usize;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names() -> Vec<String> {
        vec!["a".into(), "b".into(), "ma6".into()]
    }

    #[test]
    fn names_and_keys() {
        let a = Expr::original(0, "a");
        let b = Expr::original(1, "b");
        let ab = Expr::Binary {
            op: Operation::Mul,
            lhs: Box::new(a.clone()),
            rhs: Box::new(b.clone()),
        };
        let ba = Expr::Binary {
            op: Operation::Mul,
            lhs: Box::new(b.clone()),
            rhs: Box::new(a.clone()),
        };
        assert_eq!(ab.name(), "[a]*[b]");
        assert_eq!(ab.canonical_key(), ba.canonical_key());
        let sub_ab = Expr::Binary {
            op: Operation::Sub,
            lhs: Box::new(a.clone()),
            rhs: Box::new(b.clone()),
        };
        let sub_ba = Expr::Binary {
            op: Operation::Sub,
            lhs: Box::new(b),
            rhs: Box::new(a),
        };
        assert_ne!(sub_ab.canonical_key(), sub_ba.canonical_key());
        let s = Expr::Unary {
            op: Operation::Sin,
            arg: Box::new(ab),
        };
        assert_eq!(s.name(), "sin([a]*[b])");
        assert_eq!(s.depth(), 2);
    }

    #[test]
    fn parse_rejects_garbage() {
        for bad in ["c", "[a]*b", "[a]^[b]", "foo(a)", "sin(a", "[a]*[b]x", "add(a)"] {
            assert!(Expr::parse(bad, &names()).is_err(), "{bad}");
        }
    }

    #[test]
    fn evaluates_nested() {
        let originals = vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![0.0, 0.0]];
        let e = Expr::parse("square([a]/[b])", &names()).unwrap();
        let (v, rep) = e.evaluate(&originals).unwrap();
        assert_eq!(v, vec![1.0 / 9.0, 0.0]);
        assert_eq!(rep.div_guarded, 1);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = (0usize..3).prop_map(|i| Expr::original(i, names()[i].clone()));
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (0usize..12, inner.clone()).prop_map(|(o, a)| Expr::Unary {
                    op: Operation::ALL[o],
                    arg: Box::new(a)
                }),
                (12usize..16, inner.clone(), inner).prop_map(|(o, l, r)| Expr::Binary {
                    op: Operation::ALL[o],
                    lhs: Box::new(l),
                    rhs: Box::new(r)
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn name_parses_back(e in arb_expr()) {
            let parsed = Expr::parse(&e.name(), &names()).unwrap();
            prop_assert_eq!(parsed, e);
        }
    }
}
