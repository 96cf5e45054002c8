//! The stabilizer-type Bell expression family.
//!
//! Each GHZ stabilizer generator is mapped to a Bell correlator by replacing
//! its Pauli factors with combinations of the parties' observables, and the
//! expression is the sum over generators.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::behavior::Behavior;
use crate::error::{Error, Result};
use crate::matrix::{kron_all, ComplexMatrix, MAX_PARTIES};
use crate::quantum::ObservableSet;

/// Which observable a party contributes to a correlator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    Setting0,
    Setting1,
    Absent,
}

impl Slot {
    pub fn symbol(self) -> char {
        match self {
            Slot::Setting0 => '0',
            Slot::Setting1 => '1',
            Slot::Absent => '⊥',
        }
    }

    pub fn setting(self) -> Option<usize> {
        match self {
            Slot::Setting0 => Some(0),
            Slot::Setting1 => Some(1),
            Slot::Absent => None,
        }
    }

    fn from_symbol(c: char) -> Option<Self> {
        match c {
            '0' => Some(Slot::Setting0),
            '1' => Some(Slot::Setting1),
            '⊥' | '_' => Some(Slot::Absent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SettingSelector(Vec<Slot>);

impl SettingSelector {
    pub fn new(slots: Vec<Slot>) -> Self {
        Self(slots)
    }

    /// A full setting tuple from per-party setting bits.
    pub fn full(settings: &[usize]) -> Self {
        Self(
            settings
                .iter()
                .map(|&s| {
                    if s == 0 {
                        Slot::Setting0
                    } else {
                        Slot::Setting1
                    }
                })
                .collect(),
        )
    }

    /// Full setting tuple encoded in an integer, party 0 as the most significant bit.
    pub fn from_index(n: usize, index: usize) -> Self {
        let bits: Vec<usize> = (0..n).map(|p| (index >> (n - 1 - p)) & 1).collect();
        Self::full(&bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.0
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|s| *s != Slot::Absent)
    }

    /// Parties that carry an observable.
    pub fn involved(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, s)| **s != Slot::Absent)
            .map(|(p, _)| p)
    }

    /// Setting-tuple index with absent parties pinned to setting 0.
    pub fn setting_index(&self) -> usize {
        self.0
            .iter()
            .fold(0, |acc, s| (acc << 1) | s.setting().unwrap_or(0))
    }

    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| {
                Slot::from_symbol(c)
                    .ok_or_else(|| Error::BadSelector(format!("unknown symbol {c:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for SettingSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            write!(f, "{}", s.symbol())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Z,
}

/// Generators of the N-qubit GHZ stabilizer group: X…X and Z₁Zᵢ for i ≥ 2.
pub fn ghz_stabilizer_generators(n: usize) -> Vec<Vec<Pauli>> {
    let mut gens = vec![vec![Pauli::X; n]];
    for i in 1..n {
        let mut g = vec![Pauli::I; n];
        g[0] = Pauli::Z;
        g[i] = Pauli::Z;
        gens.push(g);
    }
    gens
}

/// Linear combination of one party's observables replacing a Pauli factor.
fn substitute(party: usize, pauli: Pauli, alpha: f64) -> Vec<(Slot, f64)> {
    match (party, pauli) {
        (_, Pauli::I) => vec![(Slot::Absent, 1.0)],
        (0, Pauli::X) => vec![(Slot::Setting0, 1.0), (Slot::Setting1, 1.0)],
        (0, Pauli::Z) => vec![(Slot::Setting0, alpha), (Slot::Setting1, -1.0)],
        (_, Pauli::X) => vec![(Slot::Setting0, 1.0)],
        (_, Pauli::Z) => vec![(Slot::Setting1, 1.0)],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellExpression {
    n: usize,
    alpha: f64,
    terms: BTreeMap<SettingSelector, f64>,
}

impl BellExpression {
    /// Arbitrary coefficient table over `n` parties.
    pub fn from_terms(n: usize, alpha: f64, terms: BTreeMap<SettingSelector, f64>) -> Result<Self> {
        check_arity(n)?;
        if let Some(bad) = terms.keys().find(|s| s.len() != n) {
            return Err(Error::BadSelector(format!(
                "selector {bad} has length {} but n = {n}",
                bad.len()
            )));
        }
        Ok(Self { n, alpha, terms })
    }

    /// Substitutes party observables into every generator of `generators`
    /// and sums the expanded products.
    pub fn from_stabilizers(n: usize, alpha: f64, generators: &[Vec<Pauli>]) -> Result<Self> {
        check_arity(n)?;
        if !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite, got {alpha}"
            )));
        }
        let mut terms = BTreeMap::new();
        for g in generators {
            if g.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "generator of length {} for {n} parties",
                    g.len()
                )));
            }
            let mut partial: Vec<(Vec<Slot>, f64)> = vec![(Vec::with_capacity(n), 1.0)];
            for (party, &p) in g.iter().enumerate() {
                let subs = substitute(party, p, alpha);
                partial = partial
                    .into_iter()
                    .flat_map(|(slots, c)| {
                        subs.iter().map(move |&(s, k)| {
                            let mut next = slots.clone();
                            next.push(s);
                            (next, c * k)
                        })
                    })
                    .collect();
            }
            for (slots, c) in partial {
                *terms.entry(SettingSelector(slots)).or_insert(0.0) += c;
            }
        }
        Ok(Self { n, alpha, terms })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn terms(&self) -> &BTreeMap<SettingSelector, f64> {
        &self.terms
    }

    pub fn coefficient(&self, s: &SettingSelector) -> f64 {
        self.terms.get(s).copied().unwrap_or(0.0)
    }

    /// Value of the expression on a deterministic ±1 assignment
    /// (`values[party][setting]`).
    pub fn eval_deterministic(&self, values: &[[i8; 2]]) -> f64 {
        self.terms
            .iter()
            .map(|(sel, &c)| {
                let sign: i32 = sel
                    .slots()
                    .iter()
                    .enumerate()
                    .filter_map(|(p, s)| s.setting().map(|x| values[p][x] as i32))
                    .product();
                c * sign as f64
            })
            .sum()
    }

    /// The Bell operator for concrete observables.
    pub fn to_operator(&self, obs: &ObservableSet) -> Result<ComplexMatrix> {
        if obs.n() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "expression has {} parties, observables {}",
                self.n,
                obs.n()
            )));
        }
        let dim = 1usize << self.n;
        let id = ComplexMatrix::identity(2);
        let locals: Vec<[ComplexMatrix; 2]> = (0..self.n)
            .map(|p| [obs.observable(p, 0), obs.observable(p, 1)])
            .collect();
        let mut total = ComplexMatrix::zeros(dim, dim);
        for (sel, &c) in &self.terms {
            if c == 0.0 {
                continue;
            }
            let factors: Vec<&ComplexMatrix> = sel
                .slots()
                .iter()
                .enumerate()
                .map(|(p, s)| match s.setting() {
                    Some(x) => &locals[p][x],
                    None => &id,
                })
                .collect();
            total = &total + &kron_all(factors).scale(c);
        }
        Ok(total)
    }

    /// Σ_s c_s E_s with correlators read off a no-signalling behavior.
    pub fn eval_on_behavior(&self, b: &Behavior) -> Result<f64> {
        if b.n() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "expression has {} parties, behavior {}",
                self.n,
                b.n()
            )));
        }
        b.check_no_signalling(crate::behavior::NO_SIGNALLING_TOL)?;
        Ok(self
            .terms
            .iter()
            .map(|(sel, &c)| c * b.correlator(sel))
            .sum())
    }

    /// Canonical JSON: selector string to coefficient, sorted by selector.
    pub fn to_canonical_json(&self) -> String {
        let map: BTreeMap<String, f64> = self
            .terms
            .iter()
            .map(|(s, &c)| (s.to_string(), c))
            .collect();
        serde_json::to_string(&map).expect("finite coefficients serialize")
    }
}

/// B_N(α) for `n` parties.
pub fn build_bell(n: usize, alpha: f64) -> Result<BellExpression> {
    BellExpression::from_stabilizers(n, alpha, &ghz_stabilizer_generators(n))
}

fn check_arity(n: usize) -> Result<()> {
    if (2..=MAX_PARTIES).contains(&n) {
        Ok(())
    } else {
        Err(Error::BadArity {
            n,
            min: 2,
            max: MAX_PARTIES,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::born_behavior;
    use crate::matrix::{ghz_state, hermitian_eig};
    use crate::quantum::optimal_angles;
    use approx::assert_abs_diff_eq;

    fn sel(s: &str) -> SettingSelector {
        SettingSelector::parse(s).unwrap()
    }

    #[test]
    fn term_table_matches_family() {
        for n in 2..=8 {
            let alpha = 0.37;
            let e = build_bell(n, alpha).unwrap();
            assert_eq!(e.terms().len(), 2 + 2 * (n - 1));
            let mut full0 = vec![Slot::Setting0; n];
            assert_eq!(e.coefficient(&SettingSelector::new(full0.clone())), 1.0);
            full0[0] = Slot::Setting1;
            assert_eq!(e.coefficient(&SettingSelector::new(full0)), 1.0);
            for i in 1..n {
                let mut s = vec![Slot::Absent; n];
                s[i] = Slot::Setting1;
                s[0] = Slot::Setting0;
                assert_eq!(e.coefficient(&SettingSelector::new(s.clone())), alpha);
                s[0] = Slot::Setting1;
                assert_eq!(e.coefficient(&SettingSelector::new(s)), -1.0);
            }
        }
    }

    #[test]
    fn three_party_terms() {
        let e = build_bell(3, 1.0).unwrap();
        let expect = [
            ("000", 1.0),
            ("100", 1.0),
            ("01⊥", 1.0),
            ("11⊥", -1.0),
            ("0⊥1", 1.0),
            ("1⊥1", -1.0),
        ];
        assert_eq!(e.terms().len(), expect.len());
        for (s, c) in expect {
            assert_eq!(e.coefficient(&sel(s)), c, "{s}");
        }
        assert_eq!(build_bell(4, 2.0).unwrap().terms().len(), 8);
    }

    #[test]
    fn two_party_is_relabelled_alpha_chsh() {
        // αA10A20 + A10A21 + A11A20 − A11A21 evaluated on the relabelled
        // assignment (−a10, a11, −a21, −a20) reproduces B_2.
        let alpha = 0.8;
        let e = build_bell(2, alpha).unwrap();
        let chsh = |b: [[i8; 2]; 2]| {
            let f = |x: i8| x as f64;
            alpha * f(b[0][0] * b[1][0]) + f(b[0][0] * b[1][1]) + f(b[0][1] * b[1][0])
                - f(b[0][1] * b[1][1])
        };
        for s in 0..16u32 {
            let v = |b: u32| if (s >> b) & 1 == 1 { -1i8 } else { 1 };
            let ours = [[v(0), v(1)], [v(2), v(3)]];
            let relabelled = [[-ours[0][0], ours[0][1]], [-ours[1][1], -ours[1][0]]];
            assert_abs_diff_eq!(
                e.eval_deterministic(&ours),
                chsh(relabelled),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn rejects_bad_arity() {
        assert!(matches!(build_bell(1, 1.0), Err(Error::BadArity { .. })));
    }

    #[test]
    fn operator_properties() {
        let obs = optimal_angles(3, 1.0).unwrap();
        let op = build_bell(3, 1.0).unwrap().to_operator(&obs).unwrap();
        assert!(op.is_hermitian(1e-12));
        assert!(op.trace().norm() < 1e-12);
        let top = hermitian_eig(&op).unwrap().max_value();
        assert_abs_diff_eq!(top, 2.0 * 5f64.sqrt(), epsilon = 1e-9);

        let zero = BellExpression::from_terms(3, 1.0, BTreeMap::new()).unwrap();
        let z = zero.to_operator(&obs).unwrap();
        assert!(z.entries().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn behavior_evaluation() {
        let e = build_bell(3, 1.0).unwrap();
        let obs = optimal_angles(3, 1.0).unwrap();
        let b = born_behavior(&ghz_state(3).unwrap().into(), &obs).unwrap();
        assert_abs_diff_eq!(
            e.eval_on_behavior(&b).unwrap(),
            2.0 * 5f64.sqrt(),
            epsilon = 1e-10
        );
        let uniform = Behavior::uniform(3);
        assert_abs_diff_eq!(e.eval_on_behavior(&uniform).unwrap(), 0.0, epsilon = 1e-15);
        let det = Behavior::deterministic(&[[1, 1], [1, 1], [1, 1]]);
        assert_abs_diff_eq!(e.eval_on_behavior(&det).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(e.eval_deterministic(&[[1, 1], [1, 1], [1, 1]]), 2.0);
    }

    #[test]
    fn canonical_json_is_sorted() {
        let json = build_bell(3, 1.0).unwrap().to_canonical_json();
        assert_eq!(
            json,
            r#"{"000":1.0,"01⊥":1.0,"0⊥1":1.0,"100":1.0,"11⊥":-1.0,"1⊥1":-1.0}"#
        );
    }
}
