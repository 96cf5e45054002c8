//! NPA moment relaxations for device-independent guessing probabilities.
//!
//! Letters are outcome-0 projectors P(party, setting). Eve is modelled as a
//! convex decomposition: one moment matrix per guess value, with the branch
//! weights summing to one and the weighted Bell values summing to the
//! observed value. Problems are lowered to [`StandardSdp`].

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::{BellExpression, SettingSelector};
use crate::error::{Error, Result};
use crate::sdp::{merge, BlockEntry, LinearForm, SdpBackend, SdpSolution, StandardSdp, VarEntry};

/// (party, setting) of an outcome-0 projector.
pub type Letter = (u8, u8);

/// A canonical operator word: letters sorted party-major (different
/// parties commute), with repeated adjacent letters merged (P² = P).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Word(Vec<Letter>);

impl Word {
    pub fn identity() -> Self {
        Word(Vec::new())
    }

    pub fn canonical(letters: &[Letter]) -> Self {
        let mut sorted: Vec<Letter> = letters.to_vec();
        // stable: keeps each party's own order
        sorted.sort_by_key(|l| l.0);
        sorted.dedup();
        Word(sorted)
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Adjoint: every party's sequence reversed.
    pub fn dagger(&self) -> Self {
        let mut rev = self.0.clone();
        rev.reverse();
        Word::canonical(&rev)
    }

    /// Representative shared by a word and its adjoint (moments are real).
    pub fn moment_key(&self) -> Self {
        let d = self.dagger();
        if d < *self {
            d
        } else {
            self.clone()
        }
    }

    /// u† v.
    pub fn product(u: &Word, v: &Word) -> Word {
        let mut letters = u.dagger().0;
        letters.extend_from_slice(&v.0);
        Word::canonical(&letters)
    }
}

impl std::fmt::Display for Word {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        for (i, (p, s)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "P{}{}", p + 1, s)?;
        }
        Ok(())
    }
}

/// Largest supported party count at levels 2 and 3.
pub const MAX_HIGH_LEVEL_PARTIES: usize = 4;

/// Canonical words of length ≤ `level`, identity first, then by length and
/// lexicographically.
pub fn build_words(n: usize, level: usize) -> Result<Vec<Word>> {
    if !(1..=3).contains(&level) {
        return Err(Error::InvalidArgument(format!(
            "NPA level must be 1, 2 or 3, got {level}"
        )));
    }
    if !(2..=crate::matrix::MAX_PARTIES).contains(&n) {
        return Err(Error::BadArity {
            n,
            min: 2,
            max: crate::matrix::MAX_PARTIES,
        });
    }
    if level >= 2 && n > MAX_HIGH_LEVEL_PARTIES || level == 3 && n > 3 {
        let letters = 2 * n;
        let estimate: usize = (0..=level).map(|l| letters.pow(l as u32)).sum();
        return Err(Error::TooLarge(format!(
            "level {level} with {n} parties (up to {estimate} raw words)"
        )));
    }
    let letters: Vec<Letter> = (0..n as u8).flat_map(|p| [(p, 0), (p, 1)]).collect();
    let mut frontier = vec![Vec::<Letter>::new()];
    let mut words = std::collections::BTreeSet::new();
    words.insert(Word::identity());
    for _ in 0..level {
        let mut next = Vec::with_capacity(frontier.len() * letters.len());
        for w in &frontier {
            for &l in &letters {
                let mut v = w.clone();
                v.push(l);
                words.insert(Word::canonical(&v));
                next.push(v);
            }
        }
        frontier = next;
    }
    let mut out: Vec<Word> = words.into_iter().collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}

/// Which outcomes Eve tries to guess.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// All parties' outcomes for a full setting tuple.
    Global(SettingSelector),
    /// One party's outcome for one setting.
    Local { party: usize, setting: usize },
}

/// How the observed Bell value enters the relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BellConstraint {
    /// Σ_e Bell_e = β.
    #[default]
    Equal,
    /// Σ_e Bell_e ≥ β.
    AtLeast,
}

/// A lowered moment problem together with its bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentProblem {
    pub n: usize,
    pub level: usize,
    pub words: Vec<Word>,
    /// Moment variables of one branch; branch e owns indices
    /// e·len .. (e+1)·len.
    pub moments: Vec<Word>,
    pub branches: usize,
    /// Level 3 is accepted but not part of the tested envelope.
    pub experimental: bool,
    pub sdp: StandardSdp,
}

/// Per-branch moment bookkeeping.
struct Moments {
    words: Vec<Word>,
    keys: Vec<Word>,
    index: HashMap<Word, usize>,
}

impl Moments {
    fn new(n: usize, level: usize) -> Result<Self> {
        let words = build_words(n, level)?;
        let mut keys = Vec::new();
        let mut index = HashMap::new();
        let mut add = |w: Word, keys: &mut Vec<Word>| {
            let k = w.moment_key();
            if !index.contains_key(&k) {
                index.insert(k.clone(), keys.len());
                keys.push(k);
            }
        };
        for u in &words {
            for v in &words {
                add(Word::product(u, v), &mut keys);
            }
        }
        // every product of single letters from distinct parties, needed by
        // probabilities and correlators outside the moment matrix
        for x in 0..1usize << n {
            for subset in 0..1usize << n {
                let letters: Vec<Letter> = (0..n)
                    .filter(|p| subset >> (n - 1 - p) & 1 == 1)
                    .map(|p| (p as u8, (x >> (n - 1 - p) & 1) as u8))
                    .collect();
                add(Word::canonical(&letters), &mut keys);
            }
        }
        Ok(Self { words, keys, index })
    }

    fn var(&self, w: &Word) -> usize {
        self.index[&w.moment_key()]
    }

    /// ⟨Π_{a=0} P · Π_{a=1} (1−P)⟩ over the given (letter, outcome) pairs.
    fn probability(&self, factors: &[(Letter, u8)]) -> LinearForm {
        let zeros: Vec<Letter> = factors.iter().filter(|f| f.1 == 0).map(|f| f.0).collect();
        let ones: Vec<Letter> = factors.iter().filter(|f| f.1 == 1).map(|f| f.0).collect();
        let mut form = Vec::new();
        for mask in 0..1usize << ones.len() {
            let mut letters = zeros.clone();
            let mut sign = 1.0;
            for (i, &l) in ones.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    letters.push(l);
                    sign = -sign;
                }
            }
            form.push((self.var(&Word::canonical(&letters)), sign));
        }
        merge(&mut form);
        form
    }

    /// ⟨Π (2P − 1)⟩.
    fn correlator(&self, letters: &[Letter]) -> LinearForm {
        let m = letters.len();
        let mut form = Vec::new();
        for mask in 0..1usize << m {
            let chosen: Vec<Letter> = (0..m)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| letters[i])
                .collect();
            let k = chosen.len();
            let coef = 2f64.powi(k as i32) * if (m - k).is_multiple_of(2) { 1.0 } else { -1.0 };
            form.push((self.var(&Word::canonical(&chosen)), coef));
        }
        merge(&mut form);
        form
    }

    fn bell(&self, expr: &BellExpression) -> LinearForm {
        let mut form = Vec::new();
        for (sel, &c) in expr.terms() {
            let letters: Vec<Letter> = sel
                .slots()
                .iter()
                .enumerate()
                .filter_map(|(p, s)| s.setting().map(|x| (p as u8, x as u8)))
                .collect();
            form.extend(
                self.correlator(&letters)
                    .into_iter()
                    .map(|(k, v)| (k, c * v)),
            );
        }
        merge(&mut form);
        form
    }
}

struct Builder {
    sdp: StandardSdp,
}

impl Builder {
    fn new(num_vars: usize) -> Self {
        Self {
            sdp: StandardSdp {
                num_vars,
                objective: vec![0.0; num_vars],
                objective_offset: 0.0,
                block_sizes: Vec::new(),
                constant: Vec::new(),
                coefficients: Vec::new(),
                equalities: Vec::new(),
                rhs: Vec::new(),
            },
        }
    }

    fn moment_block(&mut self, mom: &Moments, offset: usize) {
        let b = self.sdp.block_sizes.len();
        let d = mom.words.len();
        self.sdp.block_sizes.push(d);
        for r in 0..d {
            for c in r..d {
                let var = offset + mom.var(&Word::product(&mom.words[r], &mom.words[c]));
                self.sdp.coefficients.push(VarEntry {
                    var,
                    block: b,
                    row: r,
                    col: c,
                    value: 1.0,
                });
            }
        }
    }

    /// 1×1 block: form + constant ≥ 0.
    fn scalar_block(&mut self, form: &LinearForm, constant: f64) {
        let b = self.sdp.block_sizes.len();
        self.sdp.block_sizes.push(1);
        if constant != 0.0 {
            self.sdp.constant.push(BlockEntry {
                block: b,
                row: 0,
                col: 0,
                value: constant,
            });
        }
        for &(var, value) in form {
            self.sdp.coefficients.push(VarEntry {
                var,
                block: b,
                row: 0,
                col: 0,
                value,
            });
        }
    }

    fn equality(&mut self, form: LinearForm, rhs: f64) {
        self.sdp.equalities.push(form);
        self.sdp.rhs.push(rhs);
    }
}

fn shifted(form: &LinearForm, offset: usize) -> LinearForm {
    form.iter().map(|&(k, v)| (k + offset, v)).collect()
}

fn add_branch(builder: &mut Builder, mom: &Moments, n: usize, offset: usize) {
    builder.moment_block(mom, offset);
    for x in 0..1usize << n {
        for a in 0..1usize << n {
            let factors: Vec<(Letter, u8)> = (0..n)
                .map(|p| {
                    (
                        (p as u8, (x >> (n - 1 - p) & 1) as u8),
                        (a >> (n - 1 - p) & 1) as u8,
                    )
                })
                .collect();
            builder.scalar_block(&shifted(&mom.probability(&factors), offset), 0.0);
        }
    }
}

fn check_level(n: usize, level: usize) -> bool {
    level == 3 && n == 3
}

/// Single-branch relaxation maximizing the Bell expression.
pub fn build_max_bell_sdp(expr: &BellExpression, level: usize) -> Result<MomentProblem> {
    let n = expr.n();
    let mom = Moments::new(n, level)?;
    let k = mom.keys.len();
    let mut b = Builder::new(k);
    add_branch(&mut b, &mom, n, 0);
    b.equality(vec![(mom.var(&Word::identity()), 1.0)], 1.0);
    for (var, c) in mom.bell(expr) {
        b.sdp.objective[var] += c;
    }
    Ok(MomentProblem {
        n,
        level,
        words: mom.words,
        moments: mom.keys,
        branches: 1,
        experimental: check_level(n, level),
        sdp: b.sdp,
    })
}

/// Convex-decomposition relaxation of Eve's guessing probability at a
/// given Bell value.
pub fn build_guessing_sdp(
    expr: &BellExpression,
    bell_value: f64,
    target: &Target,
    level: usize,
    constraint: BellConstraint,
) -> Result<MomentProblem> {
    let n = expr.n();
    let branches = match target {
        Target::Global(sel) => {
            if sel.len() != n || !sel.is_full() {
                return Err(Error::BadSelector(format!(
                    "global target must be a full {n}-party tuple, got {sel}"
                )));
            }
            1usize << n
        }
        Target::Local { party, setting } => {
            if *party >= n || *setting > 1 {
                return Err(Error::BadIndex(format!(
                    "local target ({party}, {setting}) for {n} parties"
                )));
            }
            2
        }
    };
    let mom = Moments::new(n, level)?;
    let k = mom.keys.len();
    let mut b = Builder::new(k * branches);
    let bell = mom.bell(expr);
    let mut weight = Vec::new();
    let mut total_bell = Vec::new();
    for e in 0..branches {
        let offset = e * k;
        add_branch(&mut b, &mom, n, offset);
        weight.push((offset + mom.var(&Word::identity()), 1.0));
        total_bell.extend(shifted(&bell, offset));
        let guess = match target {
            Target::Global(sel) => {
                let x = sel.setting_index();
                let factors: Vec<(Letter, u8)> = (0..n)
                    .map(|p| {
                        (
                            (p as u8, (x >> (n - 1 - p) & 1) as u8),
                            (e >> (n - 1 - p) & 1) as u8,
                        )
                    })
                    .collect();
                mom.probability(&factors)
            }
            Target::Local { party, setting } => {
                mom.probability(&[((*party as u8, *setting as u8), e as u8)])
            }
        };
        for (var, c) in shifted(&guess, offset) {
            b.sdp.objective[var] += c;
        }
    }
    b.equality(weight, 1.0);
    merge(&mut total_bell);
    match constraint {
        BellConstraint::Equal => b.equality(total_bell, bell_value),
        BellConstraint::AtLeast => b.scalar_block(&total_bell, -bell_value),
    }
    Ok(MomentProblem {
        n,
        level,
        words: mom.words,
        moments: mom.keys,
        branches,
        experimental: check_level(n, level),
        sdp: b.sdp,
    })
}

pub fn solve(problem: &MomentProblem, backend: &dyn SdpBackend) -> Result<SdpSolution> {
    backend.solve(&problem.sdp)
}

/// Relaxed maximum of the Bell expression at `level`.
pub fn max_bell_value(
    expr: &BellExpression,
    level: usize,
    backend: &dyn SdpBackend,
) -> Result<f64> {
    Ok(solve(&build_max_bell_sdp(expr, level)?, backend)?.objective)
}

/// Relative distance below the relaxation maximum where the guessing
/// problem switches to an inequality constraint.
pub const ENDPOINT_MARGIN: f64 = 1e-7;

/// Slack allowed between an observed Bell value and the relaxed maximum.
pub const BELL_FEASIBILITY_SLACK: f64 = 1e-6;

/// Guessing-probability upper bound; refuses Bell values above the
/// relaxed maximum `max_bell` (pass `None` to compute it).
pub fn guessing_bound(
    expr: &BellExpression,
    bell_value: f64,
    target: &Target,
    level: usize,
    constraint: BellConstraint,
    max_bell: Option<f64>,
    backend: &dyn SdpBackend,
) -> Result<SdpSolution> {
    let max = match max_bell {
        Some(m) => m,
        None => max_bell_value(expr, level, backend)?,
    };
    if bell_value > max + BELL_FEASIBILITY_SLACK {
        return Err(Error::InfeasibleValue {
            value: bell_value,
            max,
        });
    }
    // The face at the relaxation maximum has no interior; a lower threshold
    // with an inequality still contains every behaviour at `bell_value`.
    // Wider margins are tried when the solver stalls on the nearly flat face.
    let scale = max.abs().max(1.0);
    if bell_value <= max - ENDPOINT_MARGIN * scale {
        return solve(
            &build_guessing_sdp(expr, bell_value, target, level, constraint)?,
            backend,
        );
    }
    let mut last = None;
    for widen in ENDPOINT_WIDENING {
        let threshold = max - ENDPOINT_MARGIN * widen * scale;
        match solve(
            &build_guessing_sdp(expr, threshold, target, level, BellConstraint::AtLeast)?,
            backend,
        ) {
            Err(e @ Error::MaxIterations { .. }) => last = Some(e),
            other => return other,
        }
    }
    Err(last.expect("at least one margin tried"))
}

/// Multiples of [`ENDPOINT_MARGIN`] tried in turn near the relaxation maximum.
pub const ENDPOINT_WIDENING: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub bell_value: f64,
    pub g_upper: f64,
    pub entropy_lower: f64,
    pub level: usize,
    pub solver_residual: f64,
}

/// Guessing bound and min-entropy over a grid of Bell values; grid points
/// are solved in parallel.
pub fn robustness_curve(
    expr: &BellExpression,
    level: usize,
    grid: &[f64],
    target: &Target,
    constraint: BellConstraint,
    backend: &dyn SdpBackend,
) -> Result<Vec<RobustnessRow>> {
    let max = max_bell_value(expr, level, backend)?;
    grid.par_iter()
        .map(|&beta| {
            let sol = guessing_bound(expr, beta, target, level, constraint, Some(max), backend)?;
            let g = sol.objective.clamp(0.0, 1.0);
            Ok(RobustnessRow {
                bell_value: beta,
                g_upper: g,
                entropy_lower: -g.log2(),
                level,
                solver_residual: sol.primal_residual.max(sol.dual_residual),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bell::build_bell;
    use crate::sdp::InteriorPointSolver;
    use approx::assert_abs_diff_eq;

    #[test]
    fn word_counts() {
        assert_eq!(build_words(3, 1).unwrap().len(), 7);
        assert_eq!(build_words(2, 1).unwrap().len(), 5);
        assert_eq!(build_words(3, 2).unwrap().len(), 25);
        assert_eq!(build_words(4, 2).unwrap().len(), 41);
        assert!(matches!(build_words(5, 2), Err(Error::TooLarge(_))));
        assert!(matches!(build_words(4, 3), Err(Error::TooLarge(_))));
        assert!(build_words(3, 4).is_err());
        assert_eq!(build_words(3, 1).unwrap()[0], Word::identity());
    }

    #[test]
    fn canonical_rules() {
        let w = Word::canonical(&[(1, 0), (0, 1), (1, 0), (0, 0)]);
        assert_eq!(w.letters(), &[(0, 1), (0, 0), (1, 0)]);
        assert_eq!(w.dagger().letters(), &[(0, 0), (0, 1), (1, 0)]);
        assert_eq!(Word::canonical(&[(0, 0), (0, 1), (0, 0)]).len(), 3);
    }

    #[test]
    fn tsirelson_at_level_one() {
        let v = max_bell_value(
            &build_bell(2, 1.0).unwrap(),
            1,
            &InteriorPointSolver::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(v, 2.0 * 2f64.sqrt(), epsilon = 1e-5);
    }

    #[test]
    fn classical_point_is_guessable() {
        let e = build_bell(2, 1.0).unwrap();
        let t = Target::Local {
            party: 0,
            setting: 0,
        };
        let s = guessing_bound(
            &e,
            2.0,
            &t,
            1,
            BellConstraint::Equal,
            None,
            &InteriorPointSolver::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(s.objective, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn chsh_local_randomness() {
        let e = build_bell(2, 1.0).unwrap();
        let t = Target::Local {
            party: 0,
            setting: 0,
        };
        let ipm = InteriorPointSolver::default();
        for s_val in [2.2, 2.5, 2.7, 2.0 * 2f64.sqrt()] {
            let oracle = 0.5 + 0.5 * (2.0 - s_val * s_val / 4.0).max(0.0).sqrt();
            let s = guessing_bound(
                &e,
                s_val,
                &t,
                2,
                BellConstraint::Equal,
                Some(2.0 * 2f64.sqrt()),
                &ipm,
            )
            .unwrap();
            let tol = if s_val > 2.8 { 1e-3 } else { 1e-5 };
            assert_abs_diff_eq!(s.objective, oracle, epsilon = tol);
            assert!(s.objective >= oracle - 1e-6);
        }
    }

    #[test]
    fn infeasible_value_refused() {
        let e = build_bell(2, 1.0).unwrap();
        let t = Target::Local {
            party: 0,
            setting: 0,
        };
        let r = guessing_bound(
            &e,
            3.0,
            &t,
            1,
            BellConstraint::Equal,
            None,
            &InteriorPointSolver::default(),
        );
        assert!(matches!(r, Err(Error::InfeasibleValue { .. })));
    }
}
