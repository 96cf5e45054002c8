//! Quantum value of the Bell family: qubit observables in the X–Z plane,
//! the closed-form bound and its optimal realization, eigenvalue checks,
//! a multi-start angle search, and the block-state self-testing isometry.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::BellExpression;
use crate::error::{Error, Result};
use crate::matrix::{apply_local, ghz_state, max_eigenvalue, ComplexMatrix, StateVector};

/// Dense eigensolves are refused above this many parties.
pub const MAX_EIGEN_PARTIES: usize = 10;

/// Per-party pair of measurement angles; observable = cos θ σ_z + sin θ σ_x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSet {
    angles: Vec<[f64; 2]>,
}

impl ObservableSet {
    pub fn new(angles: Vec<[f64; 2]>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::BadArity {
                n: 0,
                min: 1,
                max: crate::matrix::MAX_PARTIES,
            });
        }
        if angles.iter().flatten().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite measurement angle".into(),
            ));
        }
        Ok(Self { angles })
    }

    /// Every party uses the same pair of angles.
    pub fn uniform(n: usize, pair: [f64; 2]) -> Self {
        Self {
            angles: vec![pair; n],
        }
    }

    pub fn n(&self) -> usize {
        self.angles.len()
    }

    pub fn angle(&self, party: usize, setting: usize) -> f64 {
        self.angles[party][setting]
    }

    pub fn angles(&self) -> &[[f64; 2]] {
        &self.angles
    }

    /// (cos θ, sin θ) coefficients of σ_z and σ_x.
    pub fn bloch(&self, party: usize, setting: usize) -> (f64, f64) {
        let (s, c) = self.angle(party, setting).sin_cos();
        (c, s)
    }

    pub fn observable(&self, party: usize, setting: usize) -> ComplexMatrix {
        let (c, s) = self.bloch(party, setting);
        ComplexMatrix::from_real(2, 2, &[c, s, s, -c]).expect("2x2")
    }

    fn flat(&self) -> Vec<f64> {
        self.angles.iter().flatten().copied().collect()
    }

    fn from_flat(x: &[f64]) -> Self {
        Self {
            angles: x.chunks(2).map(|c| [c[0], c[1]]).collect(),
        }
    }
}

fn check_parties(n: usize) -> Result<()> {
    if (2..=crate::matrix::MAX_PARTIES).contains(&n) {
        Ok(())
    } else {
        Err(Error::BadArity {
            n,
            min: 2,
            max: crate::matrix::MAX_PARTIES,
        })
    }
}

/// √(1+(n−1)²α²) + √(1+(n−1)²).
pub fn theorem1_bound(n: usize, alpha: f64) -> Result<f64> {
    check_parties(n)?;
    let m = (n - 1) as f64;
    Ok((1.0 + m * m * alpha * alpha).sqrt() + (1.0 + m * m).sqrt())
}

/// Angles of the GHZ realization attaining [`theorem1_bound`].
pub fn optimal_angles(n: usize, alpha: f64) -> Result<ObservableSet> {
    check_parties(n)?;
    let m = (n - 1) as f64;
    let mut angles = vec![[FRAC_PI_2, 0.0]; n];
    angles[0] = [1f64.atan2(m * alpha), 1f64.atan2(-m)];
    Ok(ObservableSet { angles })
}

fn check_dims(expr: &BellExpression, obs: &ObservableSet) -> Result<()> {
    if expr.n() != obs.n() {
        return Err(Error::DimensionMismatch(format!(
            "expression has {} parties, observables {}",
            expr.n(),
            obs.n()
        )));
    }
    if expr.n() > MAX_EIGEN_PARTIES {
        return Err(Error::TooLarge(format!(
            "eigensolve limited to {MAX_EIGEN_PARTIES} parties, got {}",
            expr.n()
        )));
    }
    Ok(())
}

/// Largest eigenvalue of the Bell operator for the given observables.
pub fn max_eigenvalue_bound(expr: &BellExpression, obs: &ObservableSet) -> Result<f64> {
    check_dims(expr, obs)?;
    max_eigenvalue(&expr.to_operator(obs)?)
}

/// ⟨GHZ|B̂|GHZ⟩.
pub fn ghz_expectation(expr: &BellExpression, obs: &ObservableSet) -> Result<f64> {
    check_dims(expr, obs)?;
    let ghz = ghz_state(expr.n())?;
    Ok(expr.to_operator(obs)?.expectation(&ghz))
}

/// Real Bell operator and the per-angle derivative operators needed for
/// Hellmann–Feynman gradients.
struct RealBellOperator<'a> {
    expr: &'a BellExpression,
    n: usize,
}

fn real_obs(theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, s], [s, -c]]
}

fn real_obs_derivative(theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[-s, c], [c, s]]
}

fn kron_real(factors: &[[[f64; 2]; 2]]) -> DMatrix<f64> {
    let mut acc = DMatrix::from_element(1, 1, 1.0);
    for f in factors {
        let d = acc.nrows();
        let mut next = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                let a = acc[(i, j)];
                if a == 0.0 {
                    continue;
                }
                for r in 0..2 {
                    for c in 0..2 {
                        next[(2 * i + r, 2 * j + c)] = a * f[r][c];
                    }
                }
            }
        }
        acc = next;
    }
    acc
}

const ID2: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

impl<'a> RealBellOperator<'a> {
    fn new(expr: &'a BellExpression) -> Self {
        Self { expr, n: expr.n() }
    }

    /// Operator with observable (p, s) replaced by its θ-derivative when
    /// `diff` is set; terms not containing (p, s) then drop out.
    fn build(&self, x: &[f64], diff: Option<(usize, usize)>) -> DMatrix<f64> {
        let d = 1usize << self.n;
        let mut total = DMatrix::zeros(d, d);
        for (sel, &c) in self.expr.terms() {
            if c == 0.0 {
                continue;
            }
            if let Some((p, s)) = diff {
                if sel.slots()[p].setting() != Some(s) {
                    continue;
                }
            }
            let factors: Vec<[[f64; 2]; 2]> = sel
                .slots()
                .iter()
                .enumerate()
                .map(|(p, slot)| match slot.setting() {
                    Some(s) if diff == Some((p, s)) => real_obs_derivative(x[2 * p + s]),
                    Some(s) => real_obs(x[2 * p + s]),
                    None => ID2,
                })
                .collect();
            total += kron_real(&factors) * c;
        }
        total
    }

    /// Largest eigenvalue and its gradient with respect to the 2n angles.
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let m = self.build(x, None);
        let eig = nalgebra::SymmetricEigen::new(m);
        let (k, &top) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
        let grad = (0..2 * self.n)
            .map(|i| {
                let dm = self.build(x, Some((i / 2, i % 2)));
                v.dot(&(&dm * &v))
            })
            .collect();
        (top, grad)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let m = self.build(x, None);
        nalgebra::SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// BFGS ascent on the largest eigenvalue with Armijo backtracking.
fn ascend(op: &RealBellOperator<'_>, start: Vec<f64>) -> (Vec<f64>, f64) {
    let dim = start.len();
    let mut x = start;
    let (mut f, mut g) = op.value_and_gradient(&x);
    let mut h = DMatrix::<f64>::identity(dim, dim);
    for _ in 0..500 {
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-10 {
            break;
        }
        let gv = DVector::from_vec(g.clone());
        let mut dir = &h * &gv;
        if dir.dot(&gv) <= 0.0 {
            h = DMatrix::identity(dim, dim);
            dir = gv.clone();
        }
        let slope = dir.dot(&gv);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x
                .iter()
                .zip(dir.iter())
                .map(|(a, d)| a + step * d)
                .collect();
            let ft = op.value(&trial);
            if ft >= f + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, _)) = accepted else { break };
        let (fn_, gn_) = op.value_and_gradient(&xn);
        let s = DVector::from_iterator(dim, xn.iter().zip(&x).map(|(a, b)| a - b));
        // ascent on f = descent on −f
        let y = DVector::from_iterator(dim, g.iter().zip(&gn_).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-14 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(dim, dim);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
        let improved = fn_ - f;
        x = xn;
        f = fn_;
        g = gn_;
        if improved.abs() < 1e-15 * f.abs().max(1.0) {
            break;
        }
    }
    (x, f)
}

/// Multi-start local search over measurement angles; starts are drawn from
/// `Xoshiro256PlusPlus::seed_from_u64(seed + k)` for start k.
pub fn optimize_angles(
    expr: &BellExpression,
    starts: usize,
    seed: u64,
) -> Result<(ObservableSet, f64)> {
    let n = expr.n();
    let initial: Vec<ObservableSet> = (0..starts.max(1))
        .map(|k| {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed.wrapping_add(k as u64));
            ObservableSet::from_flat(
                &(0..2 * n)
                    .map(|_| rng.random::<f64>() * TAU)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    optimize_angles_from(expr, &initial)
}

/// Local search from explicit starting observables; the earliest start
/// wins ties.
pub fn optimize_angles_from(
    expr: &BellExpression,
    starts: &[ObservableSet],
) -> Result<(ObservableSet, f64)> {
    if starts.is_empty() {
        return Err(Error::InvalidArgument("need at least one start".into()));
    }
    for s in starts {
        check_dims(expr, s)?;
    }
    let op = RealBellOperator::new(expr);
    let results: Vec<(Vec<f64>, f64)> = starts.par_iter().map(|s| ascend(&op, s.flat())).collect();
    let mut best = 0;
    for (k, r) in results.iter().enumerate() {
        if r.1 > results[best].1 {
            best = k;
        }
    }
    let (x, v) = &results[best];
    Ok((ObservableSet::from_flat(x), *v))
}

/// Direct sum of GHZ blocks with weights q over block-index tuples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    n: usize,
    blocks: Vec<(f64, Vec<usize>)>,
}

/// Blocks per party accepted by the self-test.
pub const MAX_BLOCKS_PER_PARTY: usize = 4;

impl BlockState {
    pub fn new(n: usize, blocks: Vec<(f64, Vec<usize>)>) -> Result<Self> {
        check_parties(n)?;
        if blocks.is_empty() {
            return Err(Error::BadBlocks("no blocks".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (q, idx) in &blocks {
            if !(q.is_finite() && *q >= 0.0) {
                return Err(Error::BadBlocks(format!("negative weight {q}")));
            }
            if idx.len() != n {
                return Err(Error::BadBlocks(format!(
                    "block tuple {idx:?} for {n} parties"
                )));
            }
            if idx.iter().any(|&k| k >= MAX_BLOCKS_PER_PARTY) {
                return Err(Error::BadBlocks(format!(
                    "block index in {idx:?} exceeds {MAX_BLOCKS_PER_PARTY} blocks per party"
                )));
            }
            if !seen.insert(idx.clone()) {
                return Err(Error::BadBlocks(format!("duplicate block tuple {idx:?}")));
            }
        }
        let total: f64 = blocks.iter().map(|b| b.0).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::BadBlocks(format!("weights sum to {total}")));
        }
        Ok(Self { n, blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[(f64, Vec<usize>)] {
        &self.blocks
    }

    /// Local dimension 2K, K = number of blocks used by any party.
    pub fn local_dim(&self) -> usize {
        2 * (1 + self
            .blocks
            .iter()
            .flat_map(|b| b.1.iter())
            .copied()
            .max()
            .unwrap_or(0))
    }

    /// ⊕ √q |GHZ⟩_k with |GHZ⟩_k = (|2k₁…2k_N⟩ + |2k₁+1…2k_N+1⟩)/√2.
    pub fn state(&self) -> Vec<Complex64> {
        let d = self.local_dim();
        let mut amps = vec![Complex64::new(0.0, 0.0); d.pow(self.n as u32)];
        for (q, ks) in &self.blocks {
            let even = ks.iter().fold(0, |acc, &k| acc * d + 2 * k);
            let odd = ks.iter().fold(0, |acc, &k| acc * d + 2 * k + 1);
            let a = (q / 2.0).sqrt();
            amps[even] += a;
            amps[odd] += a;
        }
        amps
    }
}

/// `A` repeated on every 2x2 block of a `d`-dimensional space.
fn block_diagonal(a: &ComplexMatrix, d: usize) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(d, d);
    for k in 0..d / 2 {
        for r in 0..2 {
            for c in 0..2 {
                out.set(2 * k + r, 2 * k + c, a.get(r, c));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTestReport {
    pub ancilla_fidelity: f64,
    /// Keyed "A{party}{setting}" with 1-based party labels.
    pub observable_fidelities: BTreeMap<String, f64>,
    pub bell_value: f64,
    pub theorem1_bound: f64,
}

impl SelfTestReport {
    pub fn min_fidelity(&self) -> f64 {
        self.observable_fidelities
            .values()
            .copied()
            .fold(self.ancilla_fidelity, f64::min)
    }
}

/// Per-party swap of the in-block qubit into a fresh ancilla:
/// |2k⟩|0⟩ ↦ |2k⟩|0⟩, |2k+1⟩|0⟩ ↦ |2k⟩|1⟩. Output index is
/// `primary * 2^n + ancilla`.
fn apply_isometry(amps: &[Complex64], n: usize, d: usize) -> Vec<Complex64> {
    let anc_dim = 1usize << n;
    let mut out = vec![Complex64::new(0.0, 0.0); amps.len() * anc_dim];
    for (idx, &a) in amps.iter().enumerate() {
        if a == Complex64::new(0.0, 0.0) {
            continue;
        }
        let mut rem = idx;
        let mut digits = vec![0usize; n];
        for p in (0..n).rev() {
            digits[p] = rem % d;
            rem /= d;
        }
        let primary = digits.iter().fold(0, |acc, &j| acc * d + 2 * (j / 2));
        let anc = digits.iter().fold(0, |acc, &j| (acc << 1) | (j % 2));
        out[primary * anc_dim + anc] += a;
    }
    out
}

/// Builds the block realization with the optimal observables on every
/// block, runs the isometry, and measures how well the output factorizes
/// as |junk⟩ ⊗ |GHZ⟩ (and |junk⟩ ⊗ A|GHZ⟩ for every observable).
pub fn selftest_verify(state: &BlockState, alpha: f64) -> Result<SelfTestReport> {
    let n = state.n();
    let d = state.local_dim();
    let primary_dim = d.pow(n as u32);
    if primary_dim * (1 << n) > 1 << 22 {
        return Err(Error::TooLarge(format!(
            "block realization of dimension {primary_dim}"
        )));
    }
    let obs = optimal_angles(n, alpha)?;
    let ghz = ghz_state(n)?;
    let anc_dim = 1usize << n;
    let dims = vec![d; n];
    let psi = state.state();

    let out = apply_isometry(&psi, n, d);
    let mut rho = ComplexMatrix::zeros(anc_dim, anc_dim);
    for p in 0..primary_dim {
        let row = &out[p * anc_dim..(p + 1) * anc_dim];
        for a in 0..anc_dim {
            for b in 0..anc_dim {
                let v = rho.get(a, b) + row[a] * row[b].conj();
                rho.set(a, b, v);
            }
        }
    }
    let ancilla_fidelity = rho.expectation(&ghz);

    let junk: Vec<Complex64> = (0..primary_dim)
        .map(|p| {
            (0..anc_dim)
                .map(|a| ghz.amplitudes()[a].conj() * out[p * anc_dim + a])
                .sum()
        })
        .collect();
    let junk = StateVector::normalized(junk)?;

    let mut observable_fidelities = BTreeMap::new();
    for party in 0..n {
        for setting in 0..2 {
            let local = obs.observable(party, setting);
            let tilde = block_diagonal(&local, d);
            let moved = apply_isometry(&apply_local(&psi, &dims, party, &tilde), n, d);
            let reference = apply_local(ghz.amplitudes(), &vec![2; n], party, &local);
            let target: Vec<Complex64> = junk
                .amplitudes()
                .iter()
                .flat_map(|j| reference.iter().map(move |r| j * r))
                .collect();
            let overlap: Complex64 = target.iter().zip(&moved).map(|(t, m)| t.conj() * m).sum();
            observable_fidelities.insert(format!("A{}{}", party + 1, setting), overlap.norm_sqr());
        }
    }

    let expr = crate::bell::build_bell(n, alpha)?;
    let mut bell_value = 0.0;
    for (sel, &c) in expr.terms() {
        let mut v = psi.clone();
        for (p, slot) in sel.slots().iter().enumerate() {
            if let Some(s) = slot.setting() {
                v = apply_local(&v, &dims, p, &block_diagonal(&obs.observable(p, s), d));
            }
        }
        let e: Complex64 = psi.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        bell_value += c * e.re;
    }

    Ok(SelfTestReport {
        ancilla_fidelity,
        observable_fidelities,
        bell_value,
        theorem1_bound: theorem1_bound(n, alpha)?,
    })
}

/// Random block state with up to `max_blocks` distinct tuples drawn from
/// `0..MAX_BLOCKS_PER_PARTY`; used by tests and the CLI.
pub fn random_block_state<R: Rng>(n: usize, max_blocks: usize, rng: &mut R) -> Result<BlockState> {
    let count = rng.random_range(1..=max_blocks.max(1));
    let mut tuples: Vec<Vec<usize>> = Vec::new();
    while tuples.len() < count {
        let t: Vec<usize> = (0..n)
            .map(|_| rng.random_range(0..MAX_BLOCKS_PER_PARTY))
            .collect();
        if !tuples.contains(&t) {
            tuples.push(t);
        }
    }
    let raw: Vec<f64> = (0..count).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let drift: f64 = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    BlockState::new(n, weights.into_iter().zip(tuples).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bell::build_bell;
    use approx::assert_abs_diff_eq;

    #[test]
    fn theorem1_values() {
        assert_abs_diff_eq!(
            theorem1_bound(3, 1.0).unwrap(),
            2.0 * 5f64.sqrt(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            theorem1_bound(3, 0.0).unwrap(),
            1.0 + 5f64.sqrt(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            theorem1_bound(6, 2.0).unwrap(),
            101f64.sqrt() + 26f64.sqrt(),
            epsilon = 1e-13
        );
        assert!(theorem1_bound(1, 1.0).is_err());
    }

    #[test]
    fn six_party_bound_matches_eigenvalue() {
        let e = build_bell(6, 2.0).unwrap();
        let v = max_eigenvalue_bound(&e, &optimal_angles(6, 2.0).unwrap()).unwrap();
        assert_abs_diff_eq!(v, 101f64.sqrt() + 26f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn optimal_observables_match_closed_form() {
        let obs = optimal_angles(3, 1.0).unwrap();
        let a10 = obs.observable(0, 0);
        let r5 = 5f64.sqrt();
        let expect =
            ComplexMatrix::from_real(2, 2, &[2.0 / r5, 1.0 / r5, 1.0 / r5, -2.0 / r5]).unwrap();
        assert!(a10.max_abs_diff(&expect) < 1e-12);
        let x = ComplexMatrix::pauli_x();
        let z = ComplexMatrix::pauli_z();
        for p in 1..3 {
            assert!(obs.observable(p, 0).max_abs_diff(&x) < 1e-12);
            assert!(obs.observable(p, 1).max_abs_diff(&z) < 1e-12);
        }
        // A11 = −(N−1)/√(1+(N−1)²) σz + 1/√(1+(N−1)²) σx
        let a11 = obs.observable(0, 1);
        let expect =
            ComplexMatrix::from_real(2, 2, &[-2.0 / r5, 1.0 / r5, 1.0 / r5, 2.0 / r5]).unwrap();
        assert!(a11.max_abs_diff(&expect) < 1e-12);
        // large α: A10 → σz
        let big = optimal_angles(4, 1e9).unwrap();
        assert!(big.observable(0, 0).max_abs_diff(&z) < 1e-9);
    }

    #[test]
    fn observables_are_involutions() {
        let obs = ObservableSet::new(vec![[0.3, 2.0], [1.0, -4.0]]).unwrap();
        for p in 0..2 {
            for s in 0..2 {
                let a = obs.observable(p, s);
                assert!((&a * &a).max_abs_diff(&ComplexMatrix::identity(2)) < 1e-12);
            }
        }
    }

    #[test]
    fn commuting_observables_stay_classical() {
        let e = build_bell(3, 1.0).unwrap();
        let v = max_eigenvalue_bound(&e, &ObservableSet::uniform(3, [0.0, 0.0])).unwrap();
        assert!(v <= 4.0 + 1e-12, "{v}");
    }

    #[test]
    fn tsirelson_for_two_parties() {
        let e = build_bell(2, 1.0).unwrap();
        let v = max_eigenvalue_bound(&e, &optimal_angles(2, 1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(v, 2.0 * 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn ghz_expectation_edge_cases() {
        let e = build_bell(3, 1.0).unwrap();
        let opt = optimal_angles(3, 1.0).unwrap();
        assert_abs_diff_eq!(
            ghz_expectation(&e, &opt).unwrap(),
            2.0 * 5f64.sqrt(),
            epsilon = 1e-12
        );
        let zero = BellExpression::from_terms(3, 1.0, Default::default()).unwrap();
        assert_eq!(ghz_expectation(&zero, &opt).unwrap(), 0.0);
    }

    #[test]
    fn search_from_optimum_stays_put() {
        let e = build_bell(3, 1.0).unwrap();
        let (_, v) = optimize_angles_from(&e, &[optimal_angles(3, 1.0).unwrap()]).unwrap();
        assert_abs_diff_eq!(v, 2.0 * 5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn search_reaches_bound() {
        let e = build_bell(3, 1.0).unwrap();
        let (_, v) = optimize_angles(&e, 20, 7).unwrap();
        let q = theorem1_bound(3, 1.0).unwrap();
        assert!(v <= q + 1e-9);
        assert!(v >= q - 1e-6, "{v} vs {q}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let e = build_bell(3, 0.7).unwrap();
        let op = RealBellOperator::new(&e);
        let x = vec![0.3, 1.2, 2.1, 0.4, 5.0, 0.9];
        let (_, g) = op.value_and_gradient(&x);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (op.value(&xp) - op.value(&xm)) / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn single_block_is_reference() {
        let st = BlockState::new(3, vec![(1.0, vec![0, 0, 0])]).unwrap();
        let r = selftest_verify(&st, 1.0).unwrap();
        assert_abs_diff_eq!(r.ancilla_fidelity, 1.0, epsilon = 1e-12);
        assert!(r.min_fidelity() > 1.0 - 1e-12);
        assert_abs_diff_eq!(r.bell_value, r.theorem1_bound, epsilon = 1e-12);
    }

    #[test]
    fn two_equal_blocks_saturate_bound() {
        let st = BlockState::new(3, vec![(0.5, vec![0, 0, 0]), (0.5, vec![1, 1, 1])]).unwrap();
        let r = selftest_verify(&st, 1.0).unwrap();
        assert_abs_diff_eq!(r.ancilla_fidelity, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.observable_fidelities["A11"], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.bell_value, 2.0 * 5f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn block_validation() {
        assert!(matches!(
            BlockState::new(3, vec![(0.6, vec![0, 0, 0])]),
            Err(Error::BadBlocks(_))
        ));
        assert!(matches!(
            BlockState::new(3, vec![(1.0, vec![0, 4, 0])]),
            Err(Error::BadBlocks(_))
        ));
        assert!(matches!(
            BlockState::new(3, vec![(0.5, vec![0, 0, 0]), (0.5, vec![0, 0, 0])]),
            Err(Error::BadBlocks(_))
        ));
        assert!(matches!(
            BlockState::new(3, vec![(1.0, vec![0, 0])]),
            Err(Error::BadBlocks(_))
        ));
    }
}
