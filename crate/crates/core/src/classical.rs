//! Local-hidden-variable bound by exhaustive enumeration of deterministic
//! strategies, plus the piecewise closed form it is checked against.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::BellExpression;
use crate::error::{Error, Result};
use crate::matrix::MAX_PARTIES;

/// ±1 value for every (party, setting).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicStrategy {
    assignments: Vec<[i8; 2]>,
}

impl DeterministicStrategy {
    pub fn new(assignments: Vec<[i8; 2]>) -> Result<Self> {
        if assignments.iter().flatten().any(|&v| v != 1 && v != -1) {
            return Err(Error::InvalidArgument("strategy entries must be ±1".into()));
        }
        Ok(Self { assignments })
    }

    /// Strategy number `index` in lexicographic order over the 2n entries,
    /// party-major, with −1 before +1.
    pub fn from_index(n: usize, index: u64) -> Self {
        let bits = 2 * n;
        let assignments = (0..n)
            .map(|p| {
                let v = |s: usize| {
                    if (index >> (bits - 1 - (2 * p + s))) & 1 == 1 {
                        1
                    } else {
                        -1
                    }
                };
                [v(0), v(1)]
            })
            .collect();
        Self { assignments }
    }

    pub fn index(&self) -> u64 {
        self.assignments
            .iter()
            .flatten()
            .fold(0u64, |acc, &v| (acc << 1) | u64::from(v > 0))
    }

    pub fn assignments(&self) -> &[[i8; 2]] {
        &self.assignments
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }
}

/// Terms as (coefficient, bitmask of strategy-index bits they read).
fn term_masks(expr: &BellExpression) -> Vec<(f64, u64)> {
    let bits = 2 * expr.n();
    expr.terms()
        .iter()
        .filter(|(_, &c)| c != 0.0)
        .map(|(sel, &c)| {
            let mask = sel
                .slots()
                .iter()
                .enumerate()
                .filter_map(|(p, s)| s.setting().map(|x| 1u64 << (bits - 1 - (2 * p + x))))
                .fold(0, |a, b| a | b);
            (c, mask)
        })
        .collect()
}

#[inline]
fn value_at(terms: &[(f64, u64)], index: u64) -> f64 {
    terms
        .iter()
        .map(|&(c, m)| {
            if (m & !index).count_ones().is_multiple_of(2) {
                c
            } else {
                -c
            }
        })
        .sum()
}

/// Exact maximum over all 4^n deterministic strategies; the lowest index
/// wins ties.
pub fn lhv_bound_enumerated(expr: &BellExpression) -> Result<(f64, DeterministicStrategy)> {
    let n = expr.n();
    if n > MAX_PARTIES {
        return Err(Error::TooLarge(format!(
            "4^{n} strategies; at most {MAX_PARTIES} parties"
        )));
    }
    let terms = term_masks(expr);
    let total = 1u64 << (2 * n);
    let chunk = 1u64 << 12;
    let (value, index) = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(total);
            let mut best = (f64::NEG_INFINITY, lo);
            for i in lo..hi {
                let v = value_at(&terms, i);
                if v > best.0 {
                    best = (v, i);
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, u64::MAX),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );
    Ok((value, DeterministicStrategy::from_index(n, index)))
}

fn check_formula_arity(n: usize) -> Result<()> {
    if (3..=MAX_PARTIES).contains(&n) {
        Ok(())
    } else {
        Err(Error::BadArity {
            n,
            min: 3,
            max: MAX_PARTIES,
        })
    }
}

/// Lower end of the α range where the closed form holds.
pub fn alpha_l(n: usize) -> Result<f64> {
    check_formula_arity(n)?;
    let n = n as f64;
    Ok(
        (2.0 * n * n - 2.0 * n * (n * n - 2.0 * n + 2.0).sqrt() + n - 1.0)
            / (4.0 * n * n - 5.0 * n + 1.0),
    )
}

/// Piecewise closed form; `None` for α ≤ α_L where no formula is known.
pub fn lhv_bound_formula(n: usize, alpha: f64) -> Result<Option<f64>> {
    let al = alpha_l(n)?;
    let m = (n - 1) as f64;
    Ok(if alpha <= al {
        None
    } else if alpha <= 1.0 / m {
        Some(2.0 - m * (alpha - 1.0))
    } else {
        Some(m * (alpha + 1.0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bell::build_bell;
    use approx::assert_abs_diff_eq;

    /// Oracle: plain nested evaluation through the symbolic table.
    fn brute(expr: &BellExpression) -> f64 {
        let n = expr.n();
        (0..1u64 << (2 * n))
            .map(|i| expr.eval_deterministic(DeterministicStrategy::from_index(n, i).assignments()))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn known_values() {
        assert_eq!(
            lhv_bound_enumerated(&build_bell(3, 1.0).unwrap())
                .unwrap()
                .0,
            4.0
        );
        assert_eq!(
            lhv_bound_enumerated(&build_bell(3, 0.5).unwrap())
                .unwrap()
                .0,
            3.0
        );
        assert_eq!(
            lhv_bound_enumerated(&build_bell(2, 1.0).unwrap())
                .unwrap()
                .0,
            2.0
        );
        assert_abs_diff_eq!(
            lhv_bound_enumerated(&build_bell(3, 10.0).unwrap())
                .unwrap()
                .0,
            22.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn witness_attains_value_and_is_first() {
        let e = build_bell(4, 0.7).unwrap();
        let (v, w) = lhv_bound_enumerated(&e).unwrap();
        assert_eq!(e.eval_deterministic(w.assignments()), v);
        for i in 0..w.index() {
            assert!(
                e.eval_deterministic(DeterministicStrategy::from_index(4, i).assignments()) < v
            );
        }
        assert_abs_diff_eq!(v, brute(&e), epsilon = 1e-12);
    }

    #[test]
    fn index_round_trip() {
        for i in [0u64, 1, 37, 63] {
            assert_eq!(DeterministicStrategy::from_index(3, i).index(), i);
        }
        assert_eq!(
            DeterministicStrategy::from_index(2, 0).assignments(),
            &[[-1, -1], [-1, -1]]
        );
        assert_eq!(
            DeterministicStrategy::from_index(2, 1).assignments(),
            &[[-1, -1], [-1, 1]]
        );
    }

    #[test]
    fn alpha_l_values() {
        assert_abs_diff_eq!(
            alpha_l(3).unwrap(),
            (20.0 - 6.0 * 5f64.sqrt()) / 22.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            alpha_l(4).unwrap(),
            (35.0 - 8.0 * 10f64.sqrt()) / 45.0,
            epsilon = 1e-15
        );
        for n in 3..=12 {
            let a = alpha_l(n).unwrap();
            assert!(a > 0.0 && a < 1.0 / (n - 1) as f64);
        }
        assert!(alpha_l(2).is_err());
    }

    #[test]
    fn formula_branches() {
        assert_eq!(lhv_bound_formula(3, 10.0).unwrap(), Some(22.0));
        assert_eq!(lhv_bound_formula(3, 0.5).unwrap(), Some(3.0));
        assert_eq!(lhv_bound_formula(3, 0.2).unwrap(), None);
        let a = alpha_l(3).unwrap() + 1e-3;
        let f = lhv_bound_formula(3, a).unwrap().unwrap();
        assert_abs_diff_eq!(
            f,
            lhv_bound_enumerated(&build_bell(3, a).unwrap()).unwrap().0,
            epsilon = 1e-12
        );
    }
}
