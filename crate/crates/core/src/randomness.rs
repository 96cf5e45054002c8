//! Guessing probabilities and min-entropies of behaviors, and the
//! certification report at the optimal GHZ realization.

use serde::{Deserialize, Serialize};

use crate::behavior::{born_behavior, Behavior, QuantumState};
use crate::bell::{build_bell, SettingSelector};
use crate::error::{Error, Result};
use crate::matrix::ghz_state;
use crate::quantum::optimal_angles;

/// max_a p(a|x) for a full setting tuple.
pub fn guessing_probability(b: &Behavior, x: &SettingSelector) -> Result<f64> {
    if x.len() != b.n() || !x.is_full() {
        return Err(Error::BadSelector(format!(
            "need a full {}-party setting tuple, got {x}",
            b.n()
        )));
    }
    Ok(b.distribution(x.setting_index())
        .iter()
        .copied()
        .fold(0.0, f64::max))
}

/// Largest −log₂ G over all setting tuples; the first tuple in
/// lexicographic order wins ties.
pub fn min_entropy_global(b: &Behavior) -> (f64, SettingSelector) {
    let n = b.n();
    let mut best = (f64::NEG_INFINITY, 0);
    for x in 0..b.num_tuples() {
        let g = b.distribution(x).iter().copied().fold(0.0, f64::max);
        let h = -g.log2();
        if h > best.0 {
            best = (h, x);
        }
    }
    (best.0, SettingSelector::from_index(n, best.1))
}

/// −log₂ of the largest outcome probability of one party's marginal.
pub fn min_entropy_local(b: &Behavior, party: usize, setting: usize) -> Result<f64> {
    if party >= b.n() || setting > 1 {
        return Err(Error::BadIndex(format!(
            "party {party}, setting {setting} for {} parties",
            b.n()
        )));
    }
    let m = b.marginal(party, setting);
    Ok(-m[0].max(m[1]).log2())
}

/// (1 + 1/√(1+(n−1)²α²)) / 2^n.
pub fn optimal_guessing_probability(n: usize, alpha: f64) -> f64 {
    let m = (n - 1) as f64;
    (1.0 + 1.0 / (1.0 + m * m * alpha * alpha).sqrt()) / (1u64 << n) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub n: usize,
    pub alpha: f64,
    pub bell_value: f64,
    pub guessing_probability_global: f64,
    pub min_entropy_global: f64,
    /// Indexed `[party][setting]`.
    pub min_entropy_local: Vec<[f64; 2]>,
    pub settings_used: String,
}

/// Report for a behavior: G and entropy at `target`, local entropies for
/// every party and setting.
pub fn cert_report(
    b: &Behavior,
    bell_value: f64,
    alpha: f64,
    target: &SettingSelector,
) -> Result<CertReport> {
    let g = guessing_probability(b, target)?;
    let local = (0..b.n())
        .map(|p| Ok([min_entropy_local(b, p, 0)?, min_entropy_local(b, p, 1)?]))
        .collect::<Result<Vec<_>>>()?;
    Ok(CertReport {
        n: b.n(),
        alpha,
        bell_value,
        guessing_probability_global: g,
        min_entropy_global: -g.log2(),
        min_entropy_local: local,
        settings_used: target.to_string(),
    })
}

/// Born behavior of GHZ at the optimal observables.
pub fn optimal_behavior(n: usize, alpha: f64) -> Result<Behavior> {
    born_behavior(
        &QuantumState::Pure(ghz_state(n)?),
        &optimal_angles(n, alpha)?,
    )
}

/// Certification at the optimal realization with target tuple (0,…,0).
pub fn certify_optimal(n: usize, alpha: f64) -> Result<CertReport> {
    let b = optimal_behavior(n, alpha)?;
    let bell = build_bell(n, alpha)?.eval_on_behavior(&b)?;
    cert_report(&b, bell, alpha, &SettingSelector::full(&vec![0; n]))
}
