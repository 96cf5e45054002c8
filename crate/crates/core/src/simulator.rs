//! Monte-Carlo entropy source: noisy GHZ trials, empirical Bell estimates,
//! certified rates and Toeplitz extraction.
//!
//! Generator: Xoshiro256++ (`rand_xoshiro`), seeded with `seed_from_u64`
//! (SplitMix64 expansion of the 64-bit seed). Rounds are split into chunks
//! of [`CHUNK_ROUNDS`]; chunk k draws from the seeded generator advanced by
//! k calls to `jump()` (2^128 steps each), so the output does not depend on
//! the thread count. The Toeplitz seed bits come from the seeded generator
//! after one `long_jump()`. Uniform reals are `(next_u64() >> 11) · 2⁻⁵³`.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{born_behavior, Behavior, QuantumState};
use crate::bell::{BellExpression, SettingSelector};
use crate::classical::{lhv_bound_enumerated, lhv_bound_formula};
use crate::error::{Error, Result};
use crate::matrix::{ghz_state, ComplexMatrix};
use crate::npa::{guessing_bound, max_bell_value, BellConstraint, Target};
use crate::quantum::{theorem1_bound, ObservableSet};
use crate::randomness::optimal_guessing_probability;
use crate::sdp::InteriorPointSolver;

pub const CHUNK_ROUNDS: u64 = 1 << 16;
/// Minimum samples per correlator before a Bell estimate is reported.
pub const MIN_CORRELATOR_SAMPLES: usize = 100;
/// Bits subtracted from `rounds · rate` before extraction.
pub const SECURITY_SLACK_BITS: i64 = 128;
/// Standard errors the Bell estimate must clear above the classical bound.
pub const CONFIDENCE_SIGMAS: f64 = 4.0;

pub const IID_CAVEAT: &str = "entropy accounting is asymptotic and assumes i.i.d. rounds \
(rate x rounds); it is not a finite-size security proof";

fn uniform01(rng: &mut Xoshiro256PlusPlus) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Index drawn from an unnormalized cumulative table.
fn pick(cumulative: &[f64], u: f64) -> usize {
    let total = *cumulative.last().expect("non-empty table");
    let t = u * total;
    cumulative
        .partition_point(|&c| c <= t)
        .min(cumulative.len() - 1)
}

fn cumulate(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub visibility: f64,
}

impl NoiseModel {
    pub fn new(visibility: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(Error::BadRange {
                value: visibility,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(Self { visibility })
    }

    pub fn state(&self, n: usize) -> QuantumState {
        QuantumState::NoisyGhz {
            n,
            visibility: self.visibility,
        }
    }

    /// v·|GHZ⟩⟨GHZ| + (1−v)·I/2^n as a dense matrix.
    pub fn density_matrix(&self, n: usize) -> Result<ComplexMatrix> {
        let d = 1usize << n;
        let pure = ComplexMatrix::projector(&ghz_state(n)?).scale(self.visibility);
        let mixed = ComplexMatrix::identity(d).scale((1.0 - self.visibility) / d as f64);
        let mut out = pure;
        for i in 0..d {
            out.set(i, i, out.get(i, i) + mixed.get(i, i));
        }
        Ok(out)
    }
}

/// Distribution over packed setting tuples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDistribution {
    n: usize,
    weights: Vec<f64>,
}

impl InputDistribution {
    pub fn uniform(n: usize) -> Self {
        let d = 1usize << n;
        Self {
            n,
            weights: vec![1.0 / d as f64; d],
        }
    }

    /// Uniform, with `target` weighted `factor` times the other tuples.
    pub fn oversampled(n: usize, target: usize, factor: f64) -> Result<Self> {
        let d = 1usize << n;
        if target >= d {
            return Err(Error::BadIndex(format!(
                "setting tuple {target} for {n} parties"
            )));
        }
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "oversampling factor {factor}"
            )));
        }
        let total = (d - 1) as f64 + factor;
        let mut weights = vec![1.0 / total; d];
        weights[target] = factor / total;
        Ok(Self { n, weights })
    }

    pub fn from_weights(n: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != 1 << n {
            return Err(Error::DimensionMismatch(format!(
                "{} input weights for {n} parties",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "input weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("input weights sum to zero".into()));
        }
        Ok(Self {
            n,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub round: u64,
    /// Packed setting tuple, party 0 most significant.
    pub settings: usize,
    /// Packed outcome tuple; bit 1 is the −1 outcome.
    pub outcomes: usize,
}

impl TrialRecord {
    fn bits(v: usize, n: usize) -> String {
        (0..n)
            .map(|p| {
                if (v >> (n - 1 - p)) & 1 == 1 {
                    '1'
                } else {
                    '0'
                }
            })
            .collect()
    }

    /// `round x-bits a-bits`.
    pub fn to_line(&self, n: usize) -> String {
        format!(
            "{} {} {}",
            self.round,
            Self::bits(self.settings, n),
            Self::bits(self.outcomes, n)
        )
    }

    pub fn parse_line(line: &str, n: usize) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed trial record {line:?}"));
        let mut it = line.split_whitespace();
        let round = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let mut field = || -> Result<usize> {
            let s = it.next().ok_or_else(bad)?;
            if s.len() != n || !s.bytes().all(|b| b == b'0' || b == b'1') {
                return Err(bad());
            }
            Ok(s.bytes()
                .fold(0, |acc, b| (acc << 1) | usize::from(b == b'1')))
        };
        let settings = field()?;
        let outcomes = field()?;
        if it.next().is_some() {
            return Err(bad());
        }
        Ok(Self {
            round,
            settings,
            outcomes,
        })
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[TrialRecord], n: usize) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_line(n))?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R, n: usize) -> Result<Vec<TrialRecord>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| {
            let l = l.map_err(|e| Error::InvalidArgument(format!("reading records: {e}")))?;
            TrialRecord::parse_line(&l, n)
        })
        .collect()
}

/// i.i.d. rounds from the Born behaviour of the noisy GHZ state.
pub fn sample_trials(
    noise: NoiseModel,
    obs: &ObservableSet,
    inputs: &InputDistribution,
    rounds: u64,
    seed: u64,
) -> Result<Vec<TrialRecord>> {
    let n = obs.n();
    if inputs.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "input distribution for {} parties, observables for {n}",
            inputs.n()
        )));
    }
    if rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be at least 1".into()));
    }
    let behavior = born_behavior(&noise.state(n), obs)?;
    sample_behavior(&behavior, inputs, rounds, seed)
}

/// i.i.d. rounds from an arbitrary behaviour.
pub fn sample_behavior(
    behavior: &Behavior,
    inputs: &InputDistribution,
    rounds: u64,
    seed: u64,
) -> Result<Vec<TrialRecord>> {
    let n = behavior.n();
    if inputs.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "input distribution for {} parties, behaviour for {n}",
            inputs.n()
        )));
    }
    let input_cdf = cumulate(inputs.weights());
    let output_cdfs: Vec<Vec<f64>> = (0..behavior.num_tuples())
        .map(|x| cumulate(behavior.distribution(x)))
        .collect();
    let chunks = rounds.div_ceil(CHUNK_ROUNDS);
    let mut base = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut starts = Vec::with_capacity(chunks as usize);
    for _ in 0..chunks {
        starts.push(base.clone());
        base.jump();
    }
    let parts: Vec<Vec<TrialRecord>> = starts
        .into_par_iter()
        .enumerate()
        .map(|(k, mut rng)| {
            let lo = k as u64 * CHUNK_ROUNDS;
            let hi = (lo + CHUNK_ROUNDS).min(rounds);
            (lo..hi)
                .map(|round| {
                    let settings = pick(&input_cdf, uniform01(&mut rng));
                    let outcomes = pick(&output_cdfs[settings], uniform01(&mut rng));
                    TrialRecord {
                        round,
                        settings,
                        outcomes,
                    }
                })
                .collect()
        })
        .collect();
    Ok(parts.concat())
}

/// Counts (or expected counts) per setting/outcome pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    n: usize,
    /// `counts[x * 2^n + a]`.
    counts: Vec<f64>,
}

impl OutcomeCounts {
    pub fn from_records(n: usize, records: &[TrialRecord]) -> Self {
        let d = 1usize << n;
        let mut counts = vec![0.0; d * d];
        for r in records {
            counts[r.settings * d + r.outcomes] += 1.0;
        }
        Self { n, counts }
    }

    /// Expected counts of `rounds` draws.
    pub fn expected(behavior: &Behavior, inputs: &InputDistribution, rounds: f64) -> Self {
        let n = behavior.n();
        let d = 1usize << n;
        let mut counts = vec![0.0; d * d];
        for x in 0..d {
            for (a, p) in behavior.distribution(x).iter().enumerate() {
                counts[x * d + a] = rounds * inputs.weights()[x] * p;
            }
        }
        Self { n, counts }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Plug-in conditional distributions; setting tuples never seen are
    /// left uniform.
    pub fn to_behavior(&self) -> Result<Behavior> {
        let d = 1usize << self.n;
        let mut table = Vec::with_capacity(d * d);
        for x in 0..d {
            let row = &self.counts[x * d..(x + 1) * d];
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                table.extend(row.iter().map(|c| c / total));
            } else {
                table.extend(std::iter::repeat_n(1.0 / d as f64, d));
            }
        }
        Behavior::from_table(self.n, table)
    }

    /// (samples, Σ ±1) over rounds whose settings match `sel` on its parties.
    fn correlator_sums(&self, sel: &SettingSelector) -> (f64, f64) {
        let n = self.n;
        let d = 1usize << n;
        let mask = sel.involved().fold(0usize, |m, p| m | (1 << (n - 1 - p)));
        let want = sel.setting_index() & mask;
        let mut samples = 0.0;
        let mut sum = 0.0;
        for x in (0..d).filter(|x| x & mask == want) {
            for a in 0..d {
                let c = self.counts[x * d + a];
                samples += c;
                sum += if (a & mask).count_ones() % 2 == 0 {
                    c
                } else {
                    -c
                };
            }
        }
        (samples, sum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Plug-in Bell estimate. Each correlator pools every round whose settings
/// agree with it on the parties it involves; its variance is (1−E²)/m and
/// correlators are treated as independent when propagating the error.
pub fn empirical_bell_from_counts(
    counts: &OutcomeCounts,
    expr: &BellExpression,
) -> Result<BellEstimate> {
    if counts.n() != expr.n() {
        return Err(Error::DimensionMismatch(format!(
            "counts for {} parties, expression for {}",
            counts.n(),
            expr.n()
        )));
    }
    let mut estimate = 0.0;
    let mut variance = 0.0;
    for (sel, &coef) in expr.terms() {
        if sel.involved().next().is_none() {
            estimate += coef;
            continue;
        }
        let (m, s) = counts.correlator_sums(sel);
        if m < MIN_CORRELATOR_SAMPLES as f64 {
            return Err(Error::InsufficientData {
                correlator: sel.to_string(),
                samples: m as usize,
                required: MIN_CORRELATOR_SAMPLES,
            });
        }
        let e = s / m;
        estimate += coef * e;
        variance += coef * coef * (1.0 - e * e).max(0.0) / m;
    }
    Ok(BellEstimate {
        estimate,
        std_error: variance.sqrt(),
    })
}

pub fn empirical_bell(records: &[TrialRecord], expr: &BellExpression) -> Result<BellEstimate> {
    empirical_bell_from_counts(&OutcomeCounts::from_records(expr.n(), records), expr)
}

/// Bit string packed little-endian into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitString {
    len: usize,
    words: Vec<u64>,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                s.set(i, true);
            }
        }
        s
    }

    pub fn random(len: usize, rng: &mut Xoshiro256PlusPlus) -> Self {
        let mut words: Vec<u64> = (0..len.div_ceil(64)).map(|_| rng.next_u64()).collect();
        if !len.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (len % 64)) - 1;
            }
        }
        Self { len, words }
    }

    /// Outcome bits of every round in order, party 0 first.
    pub fn from_records(records: &[TrialRecord], n: usize) -> Self {
        let mut s = Self::zeros(records.len() * n);
        for (r, rec) in records.iter().enumerate() {
            for p in 0..n {
                if (rec.outcomes >> (n - 1 - p)) & 1 == 1 {
                    s.set(r * n + p, true);
                }
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        let bit = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    pub fn xor(&self, other: &Self) -> Result<Self> {
        if self.len != other.len {
            return Err(Error::DimensionMismatch(format!(
                "bit strings of length {} and {}",
                self.len, other.len
            )));
        }
        Ok(Self {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
        })
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Bytes with bit i at position i % 8 of byte i / 8.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.len.div_ceil(8));
        out
    }

    /// Copy shifted down by `r < 64` bits.
    fn shifted(&self, r: usize) -> Vec<u64> {
        (0..self.words.len())
            .map(|i| {
                let lo = self.words[i] >> r;
                let hi = if r == 0 {
                    0
                } else {
                    self.words.get(i + 1).copied().unwrap_or(0) << (64 - r)
                };
                lo | hi
            })
            .collect()
    }

    fn reversed(&self) -> Self {
        let mut out = Self::zeros(self.len);
        for i in 0..self.len {
            if self.get(i) {
                out.set(self.len - 1 - i, true);
            }
        }
        out
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// ℓ×m Toeplitz matrix over GF(2) with T[i][j] = s[i − j + m − 1], defined
/// by m + ℓ − 1 seed bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzExtractor {
    input_len: usize,
    output_len: usize,
    diagonals: BitString,
}

impl ToeplitzExtractor {
    pub fn new(input_len: usize, output_len: usize, diagonals: BitString) -> Result<Self> {
        if input_len == 0 || output_len == 0 {
            return Err(Error::InvalidArgument(
                "extractor dimensions must be positive".into(),
            ));
        }
        if diagonals.len() != input_len + output_len - 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} seed bits for a {output_len}x{input_len} Toeplitz matrix",
                diagonals.len()
            )));
        }
        Ok(Self {
            input_len,
            output_len,
            diagonals,
        })
    }

    /// Seed bits from the `seed` generator after one `long_jump()`.
    pub fn from_seed(input_len: usize, output_len: usize, seed: u64) -> Result<Self> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        rng.long_jump();
        let bits = BitString::random((input_len + output_len).saturating_sub(1), &mut rng);
        Self::new(input_len, output_len, bits)
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    /// Output bit i = ⊕ⱼ s[i + m − 1 − j]·rⱼ, i.e. the parity of
    /// s[i..i+m] against the reversed input.
    pub fn extract(&self, raw: &BitString) -> Result<BitString> {
        if raw.len() != self.input_len {
            return Err(Error::DimensionMismatch(format!(
                "raw string of {} bits for an extractor expecting {}",
                raw.len(),
                self.input_len
            )));
        }
        let rev = raw.reversed();
        let nw = rev.words.len();
        let shifts: Vec<Vec<u64>> = (0..64).map(|r| self.diagonals.shifted(r)).collect();
        let mut out = BitString::zeros(self.output_len);
        for i in 0..self.output_len {
            let window = &shifts[i % 64][i / 64..i / 64 + nw];
            // bits of the window past the input length meet zero padding in `rev`
            let parity = window
                .iter()
                .zip(&rev.words)
                .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones())
                & 1;
            if parity == 1 {
                out.set(i, true);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateSource {
    /// Moment-relaxation guessing bound at the lower confidence Bell value.
    Npa { level: usize },
    /// Closed-form guessing probability of the maximal violation.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionParams {
    pub rate_source: RateSource,
    /// Packed setting tuple whose outcomes are certified.
    pub target: usize,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self {
            rate_source: RateSource::Npa { level: 2 },
            target: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub n: usize,
    pub alpha: f64,
    pub rounds: u64,
    pub bell_estimate: f64,
    pub std_error: f64,
    pub bell_lower: f64,
    pub classical_bound: f64,
    pub quantum_bound: Option<f64>,
    pub rate_source: RateSource,
    pub target_settings: String,
    pub guessing_probability: f64,
    pub rate_per_round: f64,
    pub raw_bits: usize,
    pub output_bits: usize,
    pub security_slack_bits: i64,
    pub solver_residual: Option<f64>,
    pub caveat: String,
}

fn classical_bound(expr: &BellExpression) -> Result<f64> {
    match lhv_bound_formula(expr.n(), expr.alpha()) {
        Ok(Some(v)) => Ok(v),
        _ => lhv_bound_enumerated(expr).map(|(v, _)| v),
    }
}

/// Certifies a per-round rate from the records and hashes the raw outcome
/// bits down to ⌊rounds·rate⌋ − 128 bits.
pub fn certify_and_extract(
    records: &[TrialRecord],
    expr: &BellExpression,
    params: &ExtractionParams,
    seed: u64,
) -> Result<(BitString, ExtractionReport)> {
    let n = expr.n();
    if params.target >= 1 << n {
        return Err(Error::BadIndex(format!(
            "target setting tuple {} for {n} parties",
            params.target
        )));
    }
    let est = empirical_bell(records, expr)?;
    let classical = classical_bound(expr)?;
    let lower = est.estimate - CONFIDENCE_SIGMAS * est.std_error;
    if lower <= classical {
        return Err(Error::NoViolation {
            estimate: est.estimate,
            classical,
        });
    }
    let quantum = theorem1_bound(n, expr.alpha()).ok();
    let target_sel = SettingSelector::from_index(n, params.target);
    let (g, residual) = match params.rate_source {
        RateSource::ClosedForm => (optimal_guessing_probability(n, expr.alpha()), None),
        RateSource::Npa { level } => {
            let backend = InteriorPointSolver::default();
            let max = max_bell_value(expr, level, &backend)?;
            let beta = lower.min(max);
            let sol = guessing_bound(
                expr,
                beta,
                &Target::Global(target_sel.clone()),
                level,
                BellConstraint::AtLeast,
                Some(max),
                &backend,
            )?;
            (
                sol.objective.clamp(f64::MIN_POSITIVE, 1.0),
                Some(sol.primal_residual.max(sol.dual_residual)),
            )
        }
    };
    let rate = -g.log2();
    let rounds = records.len() as u64;
    let ell = (rounds as f64 * rate).floor() as i64 - SECURITY_SLACK_BITS;
    if ell <= 0 {
        return Err(Error::OutputTooShort(ell));
    }
    let raw = BitString::from_records(records, n);
    let ell = (ell as usize).min(raw.len());
    let extractor = ToeplitzExtractor::from_seed(raw.len(), ell, seed)?;
    let out = extractor.extract(&raw)?;
    let report = ExtractionReport {
        n,
        alpha: expr.alpha(),
        rounds,
        bell_estimate: est.estimate,
        std_error: est.std_error,
        bell_lower: lower,
        classical_bound: classical,
        quantum_bound: quantum,
        rate_source: params.rate_source,
        target_settings: target_sel.to_string(),
        guessing_probability: g,
        rate_per_round: rate,
        raw_bits: raw.len(),
        output_bits: ell,
        security_slack_bits: SECURITY_SLACK_BITS,
        solver_residual: residual,
        caveat: IID_CAVEAT.to_string(),
    };
    Ok((out, report))
}
