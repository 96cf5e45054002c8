use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use ghzrand::bell::{build_bell, SettingSelector};
use ghzrand::classical::{alpha_l, lhv_bound_enumerated, lhv_bound_formula};
use ghzrand::holevo::{comparison_curves, holevo_curve};
use ghzrand::matrix::MAX_PARTIES as MAX_ENUM_PARTIES;
use ghzrand::npa::{robustness_curve, BellConstraint, Target};
use ghzrand::quantum::{
    max_eigenvalue_bound, optimal_angles, optimize_angles, random_block_state, selftest_verify,
    theorem1_bound, SelfTestReport, MAX_EIGEN_PARTIES,
};
use ghzrand::randomness::{
    cert_report, optimal_behavior, optimal_guessing_probability, CertReport,
};
use ghzrand::sdp::{
    AdmmSolver, ExternalSolver, InteriorPointSolver, SdpBackend, EXTERNAL_SOLVER_ENV,
};
use ghzrand::simulator::{
    certify_and_extract, sample_trials, write_records, BitString, ExtractionParams,
    ExtractionReport, InputDistribution, NoiseModel, RateSource,
};

use crate::output::{emit, render, write_file, Cell, Format, Table};
use crate::{Command, ConstraintChoice, Failure, RateChoice, SolverChoice};

const LHV_TOL: f64 = 1e-9;
const EIGEN_TOL: f64 = 1e-9;
const SEARCH_TOL: f64 = 1e-6;
const FIDELITY_TOL: f64 = 1e-10;
/// Largest party count for which `bounds` runs the angle search.
const MAX_SEARCH_PARTIES: usize = 6;

pub fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Bounds {
            n,
            alpha,
            starts,
            seed,
            output,
        } => bounds(
            n,
            alpha,
            starts,
            seed,
            output.format.unwrap_or(Format::Json),
            output.out.as_deref(),
        ),
        Command::Certify {
            n,
            alpha,
            target,
            output,
        } => certify(
            n,
            alpha,
            target.as_deref(),
            output.format.unwrap_or(Format::Json),
            output.out.as_deref(),
        ),
        Command::HolevoCurve { n, points, output } => {
            let rows = holevo_curve(n, points)?;
            let art = render(output.format.unwrap_or(Format::Csv), &rows, || {
                let mut t = Table::new(vec!["bell_value", "chi_upper", "entropy_lower"]);
                for r in &rows {
                    t.push(vec![
                        r.bell_value.into(),
                        r.chi_upper.into(),
                        r.entropy_lower.into(),
                    ]);
                }
                t
            });
            emit(
                &art,
                output.out.as_deref(),
                &format!("{} points of the n={n} Holevo bound", rows.len()),
            )
        }
        Command::CompareFig4 { points, output } => {
            let rows = comparison_curves(points)?;
            let art = render(output.format.unwrap_or(Format::Csv), &rows, || {
                let mut t = Table::new(vec!["curve_id", "bell_value", "chi", "entropy"]);
                for r in &rows {
                    t.push(vec![
                        r.curve_id.as_str().into(),
                        r.bell_value.into(),
                        r.chi.into(),
                        r.entropy.into(),
                    ]);
                }
                t
            });
            emit(
                &art,
                output.out.as_deref(),
                &format!("{} rows across four curves", rows.len()),
            )
        }
        Command::Robustness {
            n,
            alpha,
            level,
            grid,
            target,
            party,
            constraint,
            solver,
            output,
        } => {
            let expr = build_bell(n, alpha)?;
            let grid = match grid {
                Some(g) => parse_grid(&g)?,
                None => {
                    let lo = classical_bound(n, alpha)?;
                    let hi = theorem1_bound(n, alpha)?;
                    linspace(lo, hi, 10)
                }
            };
            let bits = parse_target(target.as_deref(), n)?;
            let target = match party {
                Some(p) if p >= n => {
                    return Err(Failure::usage(format!("party {p} out of range for n={n}")))
                }
                Some(p) => Target::Local {
                    party: p,
                    setting: bits[p],
                },
                None => Target::Global(SettingSelector::full(&bits)),
            };
            let constraint = match constraint {
                ConstraintChoice::Equal => BellConstraint::Equal,
                ConstraintChoice::AtLeast => BellConstraint::AtLeast,
            };
            let backend = backend(solver)?;
            let rows =
                robustness_curve(&expr, level, &grid, &target, constraint, backend.as_ref())?;
            let art = render(output.format.unwrap_or(Format::Csv), &rows, || {
                let mut t = Table::new(vec![
                    "bell_value",
                    "g_upper",
                    "entropy_lower",
                    "level",
                    "solver_residual",
                ]);
                for r in &rows {
                    t.push(vec![
                        r.bell_value.into(),
                        r.g_upper.into(),
                        r.entropy_lower.into(),
                        r.level.into(),
                        r.solver_residual.into(),
                    ]);
                }
                t
            });
            emit(
                &art,
                output.out.as_deref(),
                &format!("{} grid points at level {level}", rows.len()),
            )
        }
        Command::Selftest {
            n,
            alpha,
            blocks,
            draws,
            seed,
            output,
        } => selftest(
            n,
            alpha,
            blocks,
            draws,
            seed,
            output.format.unwrap_or(Format::Json),
            output.out.as_deref(),
        ),
        Command::Simulate {
            n,
            alpha,
            visibility,
            rounds,
            seed,
            oversample,
            target,
            rate,
            level,
            records,
            raw,
            bits,
            output,
        } => {
            let sim = SimulateArgs {
                n,
                alpha,
                visibility,
                rounds,
                seed,
                oversample,
                rate,
                level,
            };
            simulate(
                sim,
                target.as_deref(),
                records.as_deref(),
                raw.as_deref(),
                bits.as_deref(),
                output.format.unwrap_or(Format::Json),
                output.out.as_deref(),
            )
        }
    }
}

fn backend(choice: SolverChoice) -> Result<Box<dyn SdpBackend>, Failure> {
    Ok(match choice {
        SolverChoice::Ipm => Box::new(InteriorPointSolver::default()),
        SolverChoice::Admm => Box::new(AdmmSolver::default()),
        SolverChoice::External => Box::new(ExternalSolver::from_env().ok_or_else(|| {
            Failure::usage(format!(
                "--solver external needs {EXTERNAL_SOLVER_ENV} to be set"
            ))
        })?),
    })
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| {
            if i + 1 == k {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (k - 1) as f64
            }
        })
        .collect()
}

fn parse_grid(s: &str) -> Result<Vec<f64>, Failure> {
    let bad = || {
        Failure::usage(format!(
            "bad grid {s:?}: expected lo:hi:count or a comma-separated list"
        ))
    };
    let num = |t: &str| t.trim().parse::<f64>().ok().filter(|v| v.is_finite());
    let grid = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, k] = parts.as_slice() else {
            return Err(bad());
        };
        let (lo, hi) = (num(lo).ok_or_else(bad)?, num(hi).ok_or_else(bad)?);
        let k: usize = k.trim().parse().map_err(|_| bad())?;
        if k < 2 || hi < lo {
            return Err(bad());
        }
        linspace(lo, hi, k)
    } else {
        s.split(',')
            .map(|t| num(t).ok_or_else(bad))
            .collect::<Result<Vec<_>, _>>()?
    };
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

/// Setting bits of a tuple such as "010"; all zeros when absent.
fn parse_target(s: Option<&str>, n: usize) -> Result<Vec<usize>, Failure> {
    let Some(s) = s else { return Ok(vec![0; n]) };
    if s.len() != n || !s.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(Failure::usage(format!(
            "target {s:?} must be {n} characters of 0/1"
        )));
    }
    Ok(s.bytes().map(|b| usize::from(b == b'1')).collect())
}

fn classical_bound(n: usize, alpha: f64) -> Result<f64, Failure> {
    if let Ok(Some(v)) = lhv_bound_formula(n, alpha) {
        return Ok(v);
    }
    Ok(lhv_bound_enumerated(&build_bell(n, alpha)?)?.0)
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

#[derive(Debug, Serialize)]
struct BoundsReport {
    n: usize,
    alpha: f64,
    alpha_lower_limit: Option<f64>,
    lhv_formula: Option<f64>,
    lhv_enumerated: Option<f64>,
    lhv_witness: Option<Vec<[i8; 2]>>,
    quantum_closed_form: f64,
    quantum_eigenvalue: Option<f64>,
    quantum_search: Option<f64>,
    /// The angle search found a value above the closed form.
    closed_form_exceeded: Option<bool>,
    checks: Vec<Check>,
}

fn bounds(
    n: usize,
    alpha: f64,
    starts: usize,
    seed: u64,
    format: Format,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let expr = build_bell(n, alpha)?;
    if starts == 0 {
        return Err(Failure::usage("--starts must be at least 1"));
    }
    let alpha_lower_limit = alpha_l(n).ok();
    let lhv_formula = lhv_bound_formula(n, alpha).ok().flatten();
    let (lhv_enumerated, lhv_witness) = if n <= MAX_ENUM_PARTIES {
        let (v, w) = lhv_bound_enumerated(&expr)?;
        (Some(v), Some(w.assignments().to_vec()))
    } else {
        (None, None)
    };
    let closed = theorem1_bound(n, alpha)?;
    let eigen = if n <= MAX_EIGEN_PARTIES {
        Some(max_eigenvalue_bound(&expr, &optimal_angles(n, alpha)?)?)
    } else {
        None
    };
    let search = if n <= MAX_SEARCH_PARTIES {
        Some(optimize_angles(&expr, starts, seed)?.1)
    } else {
        None
    };

    let mut checks = Vec::new();
    if let (Some(f), Some(e)) = (lhv_formula, lhv_enumerated) {
        checks.push(Check {
            name: "lhv_formula_vs_enumeration",
            passed: (f - e).abs() <= LHV_TOL,
            detail: format!("formula {f}, enumeration {e}"),
        });
    }
    if let Some(e) = eigen {
        checks.push(Check {
            name: "eigenvalue_at_optimal_angles",
            passed: (e - closed).abs() <= EIGEN_TOL,
            detail: format!("eigenvalue {e}, closed form {closed}"),
        });
    }
    if let Some(s) = search {
        checks.push(Check {
            name: "angle_search_reaches_closed_form",
            passed: s >= closed - SEARCH_TOL,
            detail: format!("search {s}, closed form {closed}"),
        });
    }
    let report = BoundsReport {
        n,
        alpha,
        alpha_lower_limit,
        lhv_formula,
        lhv_enumerated,
        lhv_witness,
        quantum_closed_form: closed,
        quantum_eigenvalue: eigen,
        quantum_search: search,
        closed_form_exceeded: search.map(|s| s > closed + EIGEN_TOL),
        checks,
    };
    let art = render(format, &report, || {
        let mut t = Table::new(vec!["quantity", "value"]);
        let witness = report.lhv_witness.as_ref().map(|w| {
            w.iter()
                .map(|[a, b]| format!("{a:+}{b:+}"))
                .collect::<Vec<_>>()
                .join(" ")
        });
        t.push(vec!["n".into(), n.into()]);
        t.push(vec!["alpha".into(), alpha.into()]);
        t.push(vec![
            "alpha_lower_limit".into(),
            report.alpha_lower_limit.into(),
        ]);
        t.push(vec!["lhv_formula".into(), report.lhv_formula.into()]);
        t.push(vec!["lhv_enumerated".into(), report.lhv_enumerated.into()]);
        t.push(vec![
            "lhv_witness".into(),
            witness.map_or(Cell::Empty, Cell::from),
        ]);
        t.push(vec!["quantum_closed_form".into(), closed.into()]);
        t.push(vec!["quantum_eigenvalue".into(), eigen.into()]);
        t.push(vec!["quantum_search".into(), search.into()]);
        for c in &report.checks {
            t.push(vec![c.name.into(), c.passed.into()]);
        }
        t
    });
    let lhv = report.lhv_formula.or(report.lhv_enumerated);
    let summary = format!(
        "n={n} alpha={alpha}: classical {} quantum {closed}",
        lhv.map_or("n/a".into(), |v| v.to_string())
    );
    emit(&art, out, &summary)?;
    if let Some(c) = report.checks.iter().find(|c| !c.passed) {
        return Err(Failure::cross_check(format!(
            "{} failed: {}",
            c.name, c.detail
        )));
    }
    Ok(())
}

fn certify(
    n: usize,
    alpha: f64,
    target: Option<&str>,
    format: Format,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let expr = build_bell(n, alpha)?;
    let bits = parse_target(target, n)?;
    let b = optimal_behavior(n, alpha)?;
    let bell = expr.eval_on_behavior(&b)?;
    let report: CertReport = cert_report(&b, bell, alpha, &SettingSelector::full(&bits))?;
    let art = render(format, &report, || {
        let mut t = Table::new(vec!["quantity", "value"]);
        t.push(vec!["n".into(), n.into()]);
        t.push(vec!["alpha".into(), alpha.into()]);
        t.push(vec!["bell_value".into(), report.bell_value.into()]);
        t.push(vec![
            "guessing_probability_global".into(),
            report.guessing_probability_global.into(),
        ]);
        t.push(vec![
            "min_entropy_global".into(),
            report.min_entropy_global.into(),
        ]);
        for (p, pair) in report.min_entropy_local.iter().enumerate() {
            for (s, v) in pair.iter().enumerate() {
                t.push(vec![
                    Cell::Text(format!("min_entropy_local_p{p}_s{s}")),
                    (*v).into(),
                ]);
            }
        }
        t.push(vec![
            "settings_used".into(),
            report.settings_used.as_str().into(),
        ]);
        t
    });
    emit(
        &art,
        out,
        &format!(
            "{:.6} bits of global min-entropy at {}",
            report.min_entropy_global, report.settings_used
        ),
    )?;
    if bits.iter().all(|&b| b == 0) {
        let closed = optimal_guessing_probability(n, alpha);
        if (report.guessing_probability_global - closed).abs() > 1e-9 {
            return Err(Failure::cross_check(format!(
                "Born-rule guessing probability {} differs from closed form {closed}",
                report.guessing_probability_global
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SelftestDraw {
    draw: usize,
    blocks: Vec<(f64, Vec<usize>)>,
    min_fidelity: f64,
    report: SelfTestReport,
}

fn selftest(
    n: usize,
    alpha: f64,
    blocks: usize,
    draws: usize,
    seed: u64,
    format: Format,
    out: Option<&Path>,
) -> Result<(), Failure> {
    if blocks == 0 || draws == 0 {
        return Err(Failure::usage("--blocks and --draws must be positive"));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(draws);
    for draw in 0..draws {
        let state = random_block_state(n, blocks, &mut rng)?;
        let report = selftest_verify(&state, alpha)?;
        rows.push(SelftestDraw {
            draw,
            blocks: state.blocks().to_vec(),
            min_fidelity: report.min_fidelity(),
            report,
        });
    }
    let art = render(format, &rows, || {
        let mut t = Table::new(vec![
            "draw",
            "blocks",
            "ancilla_fidelity",
            "min_fidelity",
            "bell_value",
            "closed_form",
        ]);
        for r in &rows {
            t.push(vec![
                r.draw.into(),
                r.blocks.len().into(),
                r.report.ancilla_fidelity.into(),
                r.min_fidelity.into(),
                r.report.bell_value.into(),
                r.report.theorem1_bound.into(),
            ]);
        }
        t
    });
    let worst = rows
        .iter()
        .map(|r| r.min_fidelity)
        .fold(f64::INFINITY, f64::min);
    emit(&art, out, &format!("{draws} draws, worst fidelity {worst}"))?;
    for r in &rows {
        if r.min_fidelity < 1.0 - FIDELITY_TOL {
            return Err(Failure::cross_check(format!(
                "draw {}: fidelity {}",
                r.draw, r.min_fidelity
            )));
        }
        if (r.report.bell_value - r.report.theorem1_bound).abs() > EIGEN_TOL {
            return Err(Failure::cross_check(format!(
                "draw {}: Bell value {} differs from {}",
                r.draw, r.report.bell_value, r.report.theorem1_bound
            )));
        }
    }
    Ok(())
}

struct SimulateArgs {
    n: usize,
    alpha: f64,
    visibility: f64,
    rounds: u64,
    seed: u64,
    oversample: f64,
    rate: RateChoice,
    level: usize,
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    visibility: f64,
    seed: u64,
    oversample: f64,
    extraction: ExtractionReport,
}

fn simulate(
    a: SimulateArgs,
    target: Option<&str>,
    records_path: Option<&Path>,
    raw_path: Option<&Path>,
    bits_path: Option<&Path>,
    format: Format,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let expr = build_bell(a.n, a.alpha)?;
    let bits = parse_target(target, a.n)?;
    let target = bits.iter().fold(0usize, |acc, &b| (acc << 1) | b);
    let noise = NoiseModel::new(a.visibility)?;
    let inputs = InputDistribution::oversampled(a.n, target, a.oversample)?;
    let obs = optimal_angles(a.n, a.alpha)?;
    let records = sample_trials(noise, &obs, &inputs, a.rounds, a.seed)?;
    if let Some(p) = records_path {
        let mut buf = Vec::new();
        write_records(&mut buf, &records, a.n).map_err(|e| Failure::usage(e.to_string()))?;
        write_file(p, &buf)?;
    }
    if let Some(p) = raw_path {
        write_file(p, &BitString::from_records(&records, a.n).to_bytes())?;
    }
    let rate_source = match a.rate {
        RateChoice::Npa => RateSource::Npa { level: a.level },
        RateChoice::ClosedForm => RateSource::ClosedForm,
    };
    let (extracted, report) = certify_and_extract(
        &records,
        &expr,
        &ExtractionParams {
            rate_source,
            target,
        },
        a.seed,
    )?;
    if let Some(p) = bits_path {
        write_file(p, &extracted.to_bytes())?;
    }
    let summary = SimulationSummary {
        visibility: a.visibility,
        seed: a.seed,
        oversample: a.oversample,
        extraction: report,
    };
    let art = render(format, &summary, || {
        let r = &summary.extraction;
        let mut t = Table::new(vec!["quantity", "value"]);
        let mut fields: BTreeMap<&str, Cell> = BTreeMap::new();
        fields.insert("n", r.n.into());
        fields.insert("alpha", r.alpha.into());
        fields.insert("visibility", summary.visibility.into());
        fields.insert("seed", summary.seed.into());
        fields.insert("rounds", r.rounds.into());
        fields.insert("bell_estimate", r.bell_estimate.into());
        fields.insert("std_error", r.std_error.into());
        fields.insert("bell_lower", r.bell_lower.into());
        fields.insert("classical_bound", r.classical_bound.into());
        fields.insert("quantum_bound", r.quantum_bound.into());
        fields.insert("guessing_probability", r.guessing_probability.into());
        fields.insert("rate_per_round", r.rate_per_round.into());
        fields.insert("raw_bits", r.raw_bits.into());
        fields.insert("output_bits", r.output_bits.into());
        fields.insert("target_settings", r.target_settings.as_str().into());
        fields.insert("caveat", r.caveat.as_str().into());
        for (k, v) in fields {
            t.push(vec![k.into(), v]);
        }
        t
    });
    let r = &summary.extraction;
    emit(
        &art,
        out,
        &format!(
            "Bell {:.6} ± {:.6}; rate {:.6} bits/round; {} bits extracted",
            r.bell_estimate, r.std_error, r.rate_per_round, r.output_bits
        ),
    )
}
