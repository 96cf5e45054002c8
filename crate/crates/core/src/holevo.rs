//! Three-party Holevo analysis: GHZ-basis classes, Pauli correlation
//! tensors, the Horodecki-style Bell maximum, Eve's conditional spectrum,
//! and the entropy bound as a function of the observed Bell value.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{hermitian_eig, kron_all, ComplexMatrix, StateVector};

/// Binary entropy in bits, with 0·log 0 = 0.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::BadRange {
            value: p,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    Ok(term(p) + term(1.0 - p))
}

/// (|0 j k…⟩ + (−1)^i |1 j̄ k̄…⟩)/√2 for labels (i, j, k, …).
pub fn ghz_basis_vector(labels: &[u8]) -> Result<StateVector> {
    let n = labels.len();
    if !(2..=crate::matrix::MAX_PARTIES).contains(&n) || labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidArgument(format!(
            "bad GHZ-basis label {labels:?}"
        )));
    }
    let tail = labels[1..]
        .iter()
        .fold(0usize, |acc, &b| (acc << 1) | b as usize);
    let mask = (1usize << (n - 1)) - 1;
    let first = tail;
    let second = (1 << (n - 1)) | (!tail & mask);
    let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
    let r = std::f64::consts::FRAC_1_SQRT_2;
    amps[first] = Complex64::new(r, 0.0);
    amps[second] = Complex64::new(if labels[0] == 0 { r } else { -r }, 0.0);
    StateVector::new(amps)
}

/// The eight three-party Pauli products appearing in the Bell operator,
/// written as strings over {I, X, Z}.
pub const BELL_PAULI_PRODUCTS: [&str; 8] = ["XXX", "XXZ", "XZX", "XZZ", "ZXI", "ZZI", "ZIX", "ZIZ"];

fn pauli_product(word: &str) -> ComplexMatrix {
    let mats: Vec<ComplexMatrix> = word
        .chars()
        .map(|c| match c {
            'X' => ComplexMatrix::pauli_x(),
            'Y' => ComplexMatrix::pauli_y(),
            'Z' => ComplexMatrix::pauli_z(),
            _ => ComplexMatrix::identity(2),
        })
        .collect();
    kron_all(&mats)
}

/// Image of one basis vector under one Pauli product: ±ψ_labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisImage {
    pub sign: i8,
    pub labels: [u8; 3],
}

fn labels_of(index: usize) -> [u8; 3] {
    [
        (index >> 2) as u8 & 1,
        (index >> 1) as u8 & 1,
        index as u8 & 1,
    ]
}

/// Rows indexed by basis label (i j k as a binary number), columns by
/// [`BELL_PAULI_PRODUCTS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhzClassification {
    pub table: Vec<Vec<BasisImage>>,
    pub class1: Vec<[u8; 3]>,
    pub class2: Vec<[u8; 3]>,
}

/// Applies every Bell-operator Pauli product to every three-qubit GHZ
/// basis vector and splits the basis into the two invariant classes.
pub fn classify_ghz_basis(n: usize) -> Result<GhzClassification> {
    if n != 3 {
        return Err(Error::Unsupported(format!(
            "GHZ-basis classification is three-party only, got n = {n}"
        )));
    }
    let basis: Vec<StateVector> = (0..8)
        .map(|i| ghz_basis_vector(&labels_of(i)))
        .collect::<Result<_>>()?;
    let ops: Vec<ComplexMatrix> = BELL_PAULI_PRODUCTS
        .iter()
        .map(|w| pauli_product(w))
        .collect();
    let mut table = Vec::with_capacity(8);
    // union-find over the 8 labels
    let mut parent: Vec<usize> = (0..8).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            i = p[i];
        }
        i
    }
    for (i, psi) in basis.iter().enumerate() {
        let mut row = Vec::with_capacity(8);
        for op in &ops {
            let img = StateVector::from_unchecked(op.apply(psi.amplitudes()));
            let (j, overlap) = basis
                .iter()
                .enumerate()
                .map(|(j, b)| (j, b.inner(&img)))
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .expect("eight vectors");
            if (overlap.norm() - 1.0).abs() > 1e-12 || overlap.im.abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "operator image of ψ{i:03b} is not ±basis"
                )));
            }
            row.push(BasisImage {
                sign: if overlap.re > 0.0 { 1 } else { -1 },
                labels: labels_of(j),
            });
            let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
            parent[ri] = rj;
        }
        table.push(row);
    }
    let r0 = root(&mut parent, 0);
    let (mut class1, mut class2) = (Vec::new(), Vec::new());
    for i in 0..8 {
        if root(&mut parent, i) == r0 {
            class1.push(labels_of(i));
        } else {
            class2.push(labels_of(i));
        }
    }
    Ok(GhzClassification {
        table,
        class1,
        class2,
    })
}

/// λ|ψ_a⟩⟨ψ_a| + (1−λ)|ψ_b⟩⟨ψ_b|, b = a with the first label flipped.
pub fn saturating_state(labels: [u8; 3], lambda: f64) -> Result<ComplexMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::BadRange {
            value: lambda,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let a = ghz_basis_vector(&labels)?;
    let b = ghz_basis_vector(&[1 - labels[0], labels[1], labels[2]])?;
    Ok(&ComplexMatrix::projector(&a).scale(lambda)
        + &ComplexMatrix::projector(&b).scale(1.0 - lambda))
}

/// Pauli correlation matrix T plus, for three parties, the two-party
/// matrices with party 3 (`reduced_12`) or party 2 (`reduced_13`) traced out.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTensor {
    pub n: usize,
    pub full: DMatrix<f64>,
    pub reduced_12: Option<DMatrix<f64>>,
    pub reduced_13: Option<DMatrix<f64>>,
}

/// Tr(ρ σ_{l₁}⊗…⊗σ_{l_n}) with l ∈ {0: I, 1: X, 2: Y, 3: Z}.
pub fn pauli_expectation(rho: &ComplexMatrix, labels: &[usize]) -> f64 {
    let n = labels.len();
    let dim = 1usize << n;
    let mut flip = 0usize;
    for (p, &l) in labels.iter().enumerate() {
        if l == 1 || l == 2 {
            flip |= 1 << (n - 1 - p);
        }
    }
    let mut total = Complex64::new(0.0, 0.0);
    for b in 0..dim {
        // P|b⟩ = c(b)|b ⊕ flip⟩
        let mut c = Complex64::new(1.0, 0.0);
        for (p, &l) in labels.iter().enumerate() {
            let bit = (b >> (n - 1 - p)) & 1;
            match l {
                2 => {
                    c *= if bit == 0 {
                        Complex64::new(0.0, 1.0)
                    } else {
                        Complex64::new(0.0, -1.0)
                    }
                }
                3 if bit == 1 => c = -c,
                _ => {}
            }
        }
        total += c * rho.get(b, b ^ flip);
    }
    total.re
}

/// Builds T with rows over the first ⌊n/2⌋ parties and columns over the
/// rest, both in base-3 order of the Pauli labels.
pub fn correlation_tensor(rho: &ComplexMatrix, n: usize) -> Result<CorrelationTensor> {
    if !(2..=6).contains(&n) {
        return Err(Error::DimensionMismatch(format!(
            "correlation tensor supports 2..=6 parties, got {n}"
        )));
    }
    if rho.rows() != 1 << n || rho.cols() != 1 << n {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} density matrix for {n} qubits",
            rho.rows(),
            rho.cols()
        )));
    }
    let split = n / 2;
    let rows = 3usize.pow(split as u32);
    let cols = 3usize.pow((n - split) as u32);
    let mut full = DMatrix::zeros(rows, cols);
    let mut labels = vec![0usize; n];
    for m in 0..rows {
        for c in 0..cols {
            let mut r = m;
            for k in (0..split).rev() {
                labels[k] = r % 3 + 1;
                r /= 3;
            }
            let mut r = c;
            for k in (split..n).rev() {
                labels[k] = r % 3 + 1;
                r /= 3;
            }
            full[(m, c)] = pauli_expectation(rho, &labels);
        }
    }
    let reduced = |keep: usize| {
        DMatrix::from_fn(3, 3, |i, j| {
            let mut l = [i + 1, 0, 0];
            l[keep] = j + 1;
            pauli_expectation(rho, &l)
        })
    };
    let (reduced_12, reduced_13) = if n == 3 {
        (Some(reduced(1)), Some(reduced(2)))
    } else {
        (None, None)
    };
    Ok(CorrelationTensor {
        n,
        full,
        reduced_12,
        reduced_13,
    })
}

/// max over unit a, b, c of aᵀ T (b⊗c) for a 3×9 tensor, by alternating
/// closed-form updates from several seeded starts.
fn trilinear_max(t: &DMatrix<f64>) -> f64 {
    let contract_a = |b: &DVector<f64>, c: &DVector<f64>| {
        DVector::from_fn(3, |i, _| {
            (0..3)
                .flat_map(|j| (0..3).map(move |k| (j, k)))
                .map(|(j, k)| t[(i, 3 * j + k)] * b[j] * c[k])
                .sum()
        })
    };
    let contract_b = |a: &DVector<f64>, c: &DVector<f64>| {
        DVector::from_fn(3, |j, _| {
            (0..3)
                .flat_map(|i| (0..3).map(move |k| (i, k)))
                .map(|(i, k)| t[(i, 3 * j + k)] * a[i] * c[k])
                .sum()
        })
    };
    let contract_c = |a: &DVector<f64>, b: &DVector<f64>| {
        DVector::from_fn(3, |k, _| {
            (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| t[(i, 3 * j + k)] * a[i] * b[j])
                .sum()
        })
    };
    let unit = |v: DVector<f64>, fallback: &DVector<f64>| {
        let n = v.norm();
        if n > 1e-300 {
            v / n
        } else {
            fallback.clone()
        }
    };
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x5eed);
    let mut best = 0.0f64;
    for _ in 0..10 {
        let mut draw = || {
            unit(
                DVector::from_fn(3, |_, _| rng.random::<f64>() * 2.0 - 1.0),
                &DVector::from_vec(vec![1.0, 0.0, 0.0]),
            )
        };
        let mut a = draw();
        let mut b = draw();
        let mut c = draw();
        let mut value = f64::NEG_INFINITY;
        for _ in 0..500 {
            a = unit(contract_a(&b, &c), &a);
            b = unit(contract_b(&a, &c), &b);
            let next = contract_c(&a, &b);
            let v = next.norm();
            c = unit(next, &c);
            if (v - value).abs() < 1e-15 {
                value = v;
                break;
            }
            value = v;
        }
        best = best.max(value);
    }
    best
}

fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// (t₀, t₁, t₂) and the resulting Bell maximum 2√(t₀² + (t₁+t₂)²).
pub fn horodecki_terms(t: &CorrelationTensor) -> Result<(f64, f64, f64)> {
    let (Some(r12), Some(r13)) = (&t.reduced_12, &t.reduced_13) else {
        return Err(Error::Unsupported(
            "Horodecki maximum needs the three-party tensor".into(),
        ));
    };
    if t.full.shape() != (3, 9) {
        return Err(Error::Unsupported(format!(
            "tensor shape {:?}",
            t.full.shape()
        )));
    }
    // Correlations of Pauli products never exceed 1; clamping stops a
    // one-ulp overshoot from turning into √ε error when B is inverted.
    let unit = |v: f64| v.clamp(0.0, 1.0);
    Ok((
        unit(trilinear_max(&t.full)),
        unit(largest_singular_value(r12)),
        unit(largest_singular_value(r13)),
    ))
}

pub fn horodecki_bell_max(t: &CorrelationTensor) -> Result<f64> {
    let (t0, t1, t2) = horodecki_terms(t)?;
    Ok(2.0 * (t0 * t0 + (t1 + t2) * (t1 + t2)).sqrt())
}

/// Spectrum of Eve's state conditioned on one outcome of party 3 measuring
/// along cos θ′|0⟩ + sin θ′|1⟩, for the purification of ρ_λ.
pub fn eve_eigenvalues(lambda: f64, theta_prime: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::BadRange {
            value: lambda,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let q = 4.0 * lambda * (1.0 - lambda);
    let c = (2.0 * theta_prime).cos();
    let r = (1.0 - q + q * c * c).max(0.0).sqrt();
    Ok((0.5 * (1.0 + r), 0.5 * (1.0 - r)))
}

/// χ(ρ_λ) = h(λ) − h(Λ₊).
pub fn holevo_quantity(lambda: f64, theta_prime: f64) -> Result<f64> {
    let (plus, _) = eve_eigenvalues(lambda, theta_prime)?;
    Ok(binary_entropy(lambda)? - binary_entropy(plus)?)
}

/// Eve's conditional state built explicitly from the purification, for
/// cross-checking [`eve_eigenvalues`].
pub fn eve_conditional_state(lambda: f64, theta_prime: f64) -> Result<ComplexMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::BadRange {
            value: lambda,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let a = ghz_basis_vector(&[0, 0, 0])?;
    let b = ghz_basis_vector(&[1, 0, 0])?;
    // |φ⟩ on (P1 P2 P3) ⊗ E, E last
    let mut phi = vec![Complex64::new(0.0, 0.0); 16];
    for s in 0..8 {
        phi[2 * s] = a.amplitudes()[s] * lambda.sqrt();
        phi[2 * s + 1] = b.amplitudes()[s] * (1.0 - lambda).sqrt();
    }
    let (s, c) = theta_prime.sin_cos();
    let mut rho = ComplexMatrix::zeros(2, 2);
    // ⟨c|_3 φ, then trace out P1 P2
    for p12 in 0..4 {
        let v: Vec<Complex64> = (0..2)
            .map(|e| phi[2 * (2 * p12) + e] * c + phi[2 * (2 * p12 + 1) + e] * s)
            .collect();
        for i in 0..2 {
            for j in 0..2 {
                let x = rho.get(i, j) + v[i] * v[j].conj();
                rho.set(i, j, x);
            }
        }
    }
    let tr = rho.trace().re;
    Ok(rho.scale(1.0 / tr))
}

/// Eigenvalues of [`eve_conditional_state`], descending.
pub fn eve_eigenvalues_direct(lambda: f64, theta_prime: f64) -> Result<(f64, f64)> {
    let e = hermitian_eig(&eve_conditional_state(lambda, theta_prime)?)?;
    Ok((e.values[1], e.values[0]))
}

const RANGE_SLACK: f64 = 1e-12;

/// λ on the upper branch from a three-party Bell value in [4, 2√5].
pub fn lambda_of_bell(bell: f64) -> Result<f64> {
    let hi = 2.0 * 5f64.sqrt();
    if !(4.0 - RANGE_SLACK..=hi + RANGE_SLACK).contains(&bell) {
        return Err(Error::OutOfRange {
            value: bell,
            lo: 4.0,
            hi,
        });
    }
    Ok(0.5 * (1.0 + (bell * bell / 4.0 - 4.0).clamp(0.0, 1.0).sqrt()))
}

/// 2√((2λ−1)² + 4).
pub fn bell_of_lambda(lambda: f64) -> f64 {
    2.0 * ((2.0 * lambda - 1.0).powi(2) + 4.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolevoCurvePoint {
    pub bell_value: f64,
    pub chi_upper: f64,
    pub entropy_lower: f64,
}

/// χ ≤ h(½ + ½√(B²/4 − (n−1)²)) on B ∈ [2(n−1), 2√(1+(n−1)²)].
pub fn holevo_bound(bell: f64, n: usize) -> Result<HolevoCurvePoint> {
    if !(3..=crate::matrix::MAX_PARTIES).contains(&n) {
        return Err(Error::BadArity {
            n,
            min: 3,
            max: crate::matrix::MAX_PARTIES,
        });
    }
    let m = (n - 1) as f64;
    let lo = 2.0 * m;
    let hi = 2.0 * (1.0 + m * m).sqrt();
    if !(lo - RANGE_SLACK..=hi + RANGE_SLACK).contains(&bell) {
        return Err(Error::OutOfRange {
            value: bell,
            lo,
            hi,
        });
    }
    let r = (bell * bell / 4.0 - m * m).clamp(0.0, 1.0).sqrt();
    let chi = binary_entropy(0.5 + 0.5 * r)?;
    Ok(HolevoCurvePoint {
        bell_value: bell,
        chi_upper: chi,
        entropy_lower: 1.0 - chi,
    })
}

/// Runs the whole chain on a three-qubit state: correlation tensor,
/// Horodecki maximum, then the bound at that Bell value.
pub fn holevo_pipeline(rho: &ComplexMatrix) -> Result<HolevoCurvePoint> {
    let bell = horodecki_bell_max(&correlation_tensor(rho, 3)?)?;
    holevo_bound(bell, 3)
}

/// The four one-outcome entropy bounds compared against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComparisonCurve {
    ThisWork,
    Mabk,
    ParityChsh,
    Holz,
}

impl ComparisonCurve {
    pub const ALL: [ComparisonCurve; 4] =
        [Self::ThisWork, Self::Mabk, Self::ParityChsh, Self::Holz];

    pub fn id(self) -> &'static str {
        match self {
            Self::ThisWork => "this_work",
            Self::Mabk => "mabk",
            Self::ParityChsh => "parity_chsh",
            Self::Holz => "holz",
        }
    }

    /// (no violation, maximal violation) in the curve's own Bell variable.
    pub fn domain(self) -> (f64, f64) {
        match self {
            Self::ThisWork => (4.0, 2.0 * 5f64.sqrt()),
            Self::Mabk => (2.0 * 2f64.sqrt(), 4.0),
            Self::ParityChsh => (1.0, 2f64.sqrt()),
            Self::Holz => (1.0, 1.5),
        }
    }

    /// Argument p of h(p); `None` where the radical is negative or p
    /// leaves [0, 1].
    pub fn h_argument(self, m: f64) -> Option<f64> {
        let (radicand, f): (f64, fn(f64, f64) -> f64) = match self {
            Self::ThisWork => (m * m / 4.0 - 4.0, |_, r| 0.5 + 0.5 * r),
            Self::Mabk => (m * m / 8.0 - 1.0, |_, r| 0.5 + 0.5 * r),
            Self::ParityChsh => (m * m - 1.0, |_, r| 0.5 + 0.5 * r),
            Self::Holz => (m * m + 2.0 * m - 3.0, |m, r| 0.25 * (m + 1.0 + r)),
        };
        if radicand < -RANGE_SLACK {
            return None;
        }
        let p = f(m, radicand.max(0.0).sqrt());
        if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&p) {
            return None;
        }
        Some(p.clamp(0.0, 1.0))
    }

    /// 1 − h(p), or `None` outside the formula's domain.
    pub fn entropy(self, m: f64) -> Option<f64> {
        self.h_argument(m)
            .map(|p| 1.0 - binary_entropy(p).expect("clamped"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub bell_value: f64,
    pub chi: Option<f64>,
    pub entropy: Option<f64>,
    pub curve_id: String,
}

/// `points` evenly spaced Bell values across each curve's own domain.
pub fn comparison_curves(points: usize) -> Result<Vec<CurveRow>> {
    if points < 2 {
        return Err(Error::InvalidArgument(
            "need at least two points per curve".into(),
        ));
    }
    let mut rows = Vec::with_capacity(4 * points);
    for curve in ComparisonCurve::ALL {
        let (lo, hi) = curve.domain();
        for k in 0..points {
            let m = if k + 1 == points {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (points - 1) as f64
            };
            let entropy = curve.entropy(m);
            rows.push(CurveRow {
                bell_value: m,
                chi: entropy.map(|e| 1.0 - e),
                entropy,
                curve_id: curve.id().to_string(),
            });
        }
    }
    Ok(rows)
}

/// `points` evenly spaced values over the n-party bound's domain.
pub fn holevo_curve(n: usize, points: usize) -> Result<Vec<HolevoCurvePoint>> {
    if points < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    let m = (n.max(1) - 1) as f64;
    let lo = 2.0 * m;
    let hi = 2.0 * (1.0 + m * m).sqrt();
    (0..points)
        .map(|k| {
            let b = if k + 1 == points {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (points - 1) as f64
            };
            holevo_bound(b, n)
        })
        .collect()
}
