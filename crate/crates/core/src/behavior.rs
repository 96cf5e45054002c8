//! Conditional outcome tables p(a₁…a_N | x₁…x_N) and the Born rule.
//!
//! Setting and outcome tuples are packed into integers with party 0 as the
//! most significant bit. Outcome bit 0 corresponds to the +1 eigenvalue.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bell::SettingSelector;
use crate::error::{Error, Result};
use crate::matrix::{apply_local, ComplexMatrix, StateVector};
use crate::quantum::ObservableSet;

pub const NO_SIGNALLING_TOL: f64 = 1e-9;
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Largest party count for which a full density matrix is accepted.
pub const MAX_DENSE_PARTIES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    n: usize,
    /// `table[x * 2^n + a]`.
    table: Vec<f64>,
}

impl Behavior {
    pub fn from_table(n: usize, table: Vec<f64>) -> Result<Self> {
        let b = Self::from_table_unchecked(n, table)?;
        b.validate()?;
        Ok(b)
    }

    fn from_table_unchecked(n: usize, table: Vec<f64>) -> Result<Self> {
        let size = 1usize << (2 * n);
        if table.len() != size {
            return Err(Error::DimensionMismatch(format!(
                "behavior for {n} parties needs {size} entries, got {}",
                table.len()
            )));
        }
        Ok(Self { n, table })
    }

    pub fn uniform(n: usize) -> Self {
        let size = 1usize << (2 * n);
        Self {
            n,
            table: vec![1.0 / (1usize << n) as f64; size],
        }
    }

    /// Local deterministic strategy, `values[party][setting]` ∈ {±1}.
    pub fn deterministic(values: &[[i8; 2]]) -> Self {
        let n = values.len();
        let d = 1usize << n;
        let mut table = vec![0.0; d * d];
        for x in 0..d {
            let a = (0..n).fold(0usize, |acc, p| {
                let setting = (x >> (n - 1 - p)) & 1;
                (acc << 1) | usize::from(values[p][setting] < 0)
            });
            table[x * d + a] = 1.0;
        }
        Self { n, table }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_tuples(&self) -> usize {
        1 << self.n
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.table[x * self.num_tuples() + a]
    }

    /// Outcome distribution for setting tuple `x`.
    pub fn distribution(&self, x: usize) -> &[f64] {
        let d = self.num_tuples();
        &self.table[x * d..(x + 1) * d]
    }

    /// `w·self + (1−w)·other`.
    pub fn mix(&self, other: &Behavior, w: f64) -> Result<Behavior> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch(
                "mixing behaviors of different size".into(),
            ));
        }
        Ok(Behavior {
            n: self.n,
            table: self
                .table
                .iter()
                .zip(&other.table)
                .map(|(a, b)| w * a + (1.0 - w) * b)
                .collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.num_tuples();
        for x in 0..d {
            let dist = self.distribution(x);
            if let Some(bad) = dist.iter().find(|&&p| !(-1e-12..=1.0 + 1e-12).contains(&p)) {
                return Err(Error::InvalidBehavior(format!(
                    "entry {bad} outside [0, 1] at x = {x}"
                )));
            }
            let s: f64 = dist.iter().sum();
            if (s - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidBehavior(format!("p(·|x = {x}) sums to {s}")));
            }
        }
        self.check_no_signalling(NO_SIGNALLING_TOL)
    }

    /// No party's input changes the joint distribution of the others.
    pub fn check_no_signalling(&self, tol: f64) -> Result<()> {
        let n = self.n;
        let d = self.num_tuples();
        for party in 0..n {
            let bit = 1usize << (n - 1 - party);
            for x in (0..d).filter(|x| x & bit == 0) {
                for a in (0..d).filter(|a| a & bit == 0) {
                    let m0 = self.prob(x, a) + self.prob(x, a | bit);
                    let m1 = self.prob(x | bit, a) + self.prob(x | bit, a | bit);
                    if (m0 - m1).abs() > tol {
                        return Err(Error::InvalidBehavior(format!(
                            "party {party}'s setting shifts the others' marginal by {:.3e}",
                            (m0 - m1).abs()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// ⟨∏ A⟩ over the parties present in `sel`; absent parties are
    /// marginalized at setting 0.
    pub fn correlator(&self, sel: &SettingSelector) -> f64 {
        let n = self.n;
        let x = sel.setting_index();
        let mask = sel.involved().fold(0usize, |m, p| m | (1 << (n - 1 - p)));
        self.distribution(x)
            .iter()
            .enumerate()
            .map(|(a, &p)| {
                if (a & mask).count_ones() % 2 == 0 {
                    p
                } else {
                    -p
                }
            })
            .sum()
    }

    /// Single-party outcome distribution for `party` measuring `setting`
    /// (other parties at setting 0).
    pub fn marginal(&self, party: usize, setting: usize) -> [f64; 2] {
        let n = self.n;
        let bit = 1usize << (n - 1 - party);
        let x = if setting == 1 { bit } else { 0 };
        let mut out = [0.0; 2];
        for (a, &p) in self.distribution(x).iter().enumerate() {
            out[usize::from(a & bit != 0)] += p;
        }
        out
    }

    /// Total-variation distance, maximized over setting tuples.
    pub fn tv_distance(&self, other: &Behavior) -> f64 {
        (0..self.num_tuples())
            .map(|x| {
                0.5 * self
                    .distribution(x)
                    .iter()
                    .zip(other.distribution(x))
                    .map(|(p, q)| (p - q).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// A multi-qubit state handed to the Born rule.
#[derive(Debug, Clone)]
pub enum QuantumState {
    Pure(StateVector),
    Mixed(ComplexMatrix),
    /// v·|GHZ⟩⟨GHZ| + (1−v)·I/2^n without materializing the density matrix.
    NoisyGhz {
        n: usize,
        visibility: f64,
    },
}

impl From<StateVector> for QuantumState {
    fn from(v: StateVector) -> Self {
        QuantumState::Pure(v)
    }
}

impl From<ComplexMatrix> for QuantumState {
    fn from(m: ComplexMatrix) -> Self {
        QuantumState::Mixed(m)
    }
}

impl QuantumState {
    pub fn maximally_mixed(n: usize) -> Self {
        QuantumState::Mixed(ComplexMatrix::identity(1 << n).scale(1.0 / (1usize << n) as f64))
    }

    fn dim(&self) -> usize {
        match self {
            QuantumState::Pure(v) => v.dim(),
            QuantumState::Mixed(m) => m.rows(),
            QuantumState::NoisyGhz { n, .. } => 1 << n,
        }
    }
}

/// Rows are ⟨+|, ⟨−| of the observable, so applying it rotates into its eigenbasis.
fn eigenbasis_rotation(obs: &ObservableSet, party: usize, setting: usize) -> ComplexMatrix {
    let half = 0.5 * obs.angle(party, setting);
    let (s, c) = half.sin_cos();
    ComplexMatrix::from_real(2, 2, &[c, s, -s, c]).expect("2x2")
}

pub fn born_behavior(state: &QuantumState, obs: &ObservableSet) -> Result<Behavior> {
    let n = obs.n();
    let d = 1usize << n;
    if state.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "state of dimension {} for {n} parties",
            state.dim()
        )));
    }
    match state {
        QuantumState::NoisyGhz { visibility, .. } => {
            let v = *visibility;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::BadRange {
                    value: v,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
            let ghz = crate::matrix::ghz_state(n)?;
            let pure = born_behavior(&QuantumState::Pure(ghz), obs)?;
            return pure.mix(&Behavior::uniform(n), v);
        }
        QuantumState::Mixed(_) if n > MAX_DENSE_PARTIES => {
            return Err(Error::TooLarge(format!(
                "density matrices are limited to {MAX_DENSE_PARTIES} parties"
            )));
        }
        _ => {}
    }
    let dims = vec![2usize; n];
    let mut table = vec![0.0; d * d];
    for x in 0..d {
        let rotations: Vec<ComplexMatrix> = (0..n)
            .map(|p| eigenbasis_rotation(obs, p, (x >> (n - 1 - p)) & 1))
            .collect();
        let probs: Vec<f64> = match state {
            QuantumState::Pure(v) => {
                let mut amps = v.amplitudes().to_vec();
                for (p, r) in rotations.iter().enumerate() {
                    amps = apply_local(&amps, &dims, p, r);
                }
                amps.iter().map(|a| a.norm_sqr()).collect()
            }
            QuantumState::Mixed(rho) => {
                // diag(U ρ U†): rotate columns, then rows.
                let mut cols: Vec<Vec<Complex64>> = (0..d)
                    .map(|j| (0..d).map(|i| rho.get(i, j)).collect())
                    .collect();
                for col in cols.iter_mut() {
                    for (p, r) in rotations.iter().enumerate() {
                        *col = apply_local(col, &dims, p, r);
                    }
                }
                (0..d)
                    .map(|a| {
                        let mut row: Vec<Complex64> = (0..d).map(|j| cols[j][a].conj()).collect();
                        for (p, r) in rotations.iter().enumerate() {
                            row = apply_local(&row, &dims, p, r);
                        }
                        row[a].re
                    })
                    .collect()
            }
            QuantumState::NoisyGhz { .. } => unreachable!(),
        };
        table[x * d..(x + 1) * d].copy_from_slice(&probs);
    }
    Behavior::from_table(n, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::ghz_state;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn ghz_in_z_basis() {
        let obs = ObservableSet::uniform(3, [0.0, 0.0]);
        let b = born_behavior(&ghz_state(3).unwrap().into(), &obs).unwrap();
        for x in 0..8 {
            for a in 0..8 {
                let expect = if a == 0 || a == 7 { 0.5 } else { 0.0 };
                assert_abs_diff_eq!(b.prob(x, a), expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn ghz_in_x_basis_is_even_parity_uniform() {
        let obs = ObservableSet::uniform(3, [FRAC_PI_2, FRAC_PI_2]);
        let b = born_behavior(&ghz_state(3).unwrap().into(), &obs).unwrap();
        for a in 0..8usize {
            let expect = if a.count_ones() % 2 == 0 { 0.25 } else { 0.0 };
            assert_abs_diff_eq!(b.prob(0, a), expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn maximally_mixed_gives_uniform() {
        let obs = ObservableSet::uniform(3, [0.3, 1.1]);
        let b = born_behavior(&QuantumState::maximally_mixed(3), &obs).unwrap();
        assert!(b.tv_distance(&Behavior::uniform(3)) < 1e-14);
    }

    #[test]
    fn pure_and_dense_paths_agree() {
        let obs = ObservableSet::new(vec![[0.2, 1.3], [0.7, 2.9], [1.9, 0.4]]).unwrap();
        let g = ghz_state(3).unwrap();
        let a = born_behavior(&g.clone().into(), &obs).unwrap();
        let b = born_behavior(&ComplexMatrix::projector(&g).into(), &obs).unwrap();
        assert!(a.tv_distance(&b) < 1e-13);
        let noisy = born_behavior(
            &QuantumState::NoisyGhz {
                n: 3,
                visibility: 1.0,
            },
            &obs,
        )
        .unwrap();
        assert!(a.tv_distance(&noisy) < 1e-13);
    }

    #[test]
    fn rejects_signalling_table() {
        // Party 1 outputs party 0's setting.
        let mut t = vec![0.0; 16];
        t[0] = 1.0; // x=00 → a=00
        t[4] = 1.0; // x=01 → a=00
        t[8 + 1] = 1.0; // x=10 → a=01
        t[12 + 1] = 1.0; // x=11 → a=01
        assert!(matches!(
            Behavior::from_table(2, t),
            Err(Error::InvalidBehavior(_))
        ));
    }

    #[test]
    fn deterministic_table_round_trip() {
        let b = Behavior::deterministic(&[[1, -1], [-1, 1]]);
        b.validate().unwrap();
        assert_eq!(b.prob(0b00, 0b01), 1.0);
        assert_eq!(b.prob(0b10, 0b11), 1.0);
        assert_eq!(b.marginal(0, 1), [0.0, 1.0]);
    }
}
