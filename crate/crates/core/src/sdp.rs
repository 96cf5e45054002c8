//! Block-diagonal SDPs in the standard primal form
//!
//! ```text
//! maximize    cᵀy + offset
//! subject to  F₀ + Σₖ yₖ Fₖ ⪰ 0   (block diagonal)
//!             A y = b
//! ```
//!
//! with a pluggable [`SdpBackend`]. Two backends are bundled: a first-order
//! splitting method ([`AdmmSolver`]) and a primal-dual interior-point method
//! ([`InteriorPointSolver`]).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse linear form over variables.
pub type LinearForm = Vec<(usize, f64)>;

pub(crate) fn merge(form: &mut LinearForm) {
    form.sort_by_key(|t| t.0);
    let mut out: LinearForm = Vec::with_capacity(form.len());
    for &(k, v) in form.iter() {
        match out.last_mut() {
            Some(last) if last.0 == k => last.1 += v,
            _ => out.push((k, v)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    *form = out;
}

/// One entry of a constraint block, upper triangle only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Coefficient of variable `var` in one block entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarEntry {
    pub var: usize,
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Standard-form SDP. JSON schema:
///
/// ```text
/// {
///   "num_vars": k,
///   "objective": [c_0, …, c_{k−1}],
///   "objective_offset": f,
///   "block_sizes": [d_0, d_1, …],
///   "constant": [{"block", "row", "col", "value"}, …],        // F₀, row ≤ col
///   "coefficients": [{"var", "block", "row", "col", "value"}, …],  // Fₖ, row ≤ col
///   "equalities": [[[var, coef], …], …],
///   "rhs": [b_0, …]
/// }
/// ```
///
/// Off-diagonal triplets stand for both (row, col) and (col, row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardSdp {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub block_sizes: Vec<usize>,
    pub constant: Vec<BlockEntry>,
    pub coefficients: Vec<VarEntry>,
    pub equalities: Vec<LinearForm>,
    pub rhs: Vec<f64>,
}

impl StandardSdp {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)
            .map_err(|e| Error::InvalidArgument(format!("SDP JSON: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars {
            return Err(Error::DimensionMismatch("objective length".into()));
        }
        if self.equalities.len() != self.rhs.len() {
            return Err(Error::DimensionMismatch("equality rows vs rhs".into()));
        }
        let in_block = |b: usize, r: usize, c: usize| {
            b < self.block_sizes.len() && r <= c && c < self.block_sizes[b]
        };
        if self
            .constant
            .iter()
            .any(|e| !in_block(e.block, e.row, e.col))
        {
            return Err(Error::DimensionMismatch(
                "constant entry outside its block".into(),
            ));
        }
        if self
            .coefficients
            .iter()
            .any(|e| e.var >= self.num_vars || !in_block(e.block, e.row, e.col))
        {
            return Err(Error::DimensionMismatch(
                "coefficient entry outside its block".into(),
            ));
        }
        if self
            .equalities
            .iter()
            .flatten()
            .any(|t| t.0 >= self.num_vars)
        {
            return Err(Error::DimensionMismatch(
                "equality references unknown variable".into(),
            ));
        }
        Ok(())
    }

    /// Evaluates F₀ + Σ yₖFₖ as dense symmetric blocks.
    pub fn blocks_at(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self
            .block_sizes
            .iter()
            .map(|&d| DMatrix::zeros(d, d))
            .collect();
        for e in &self.constant {
            out[e.block][(e.row, e.col)] += e.value;
        }
        for e in &self.coefficients {
            out[e.block][(e.row, e.col)] += e.value * y[e.var];
        }
        for m in &mut out {
            let d = m.nrows();
            for r in 0..d {
                for c in r + 1..d {
                    m[(c, r)] = m[(r, c)];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// |dual bound − objective| from the current multipliers.
    pub gap_estimate: f64,
    pub iterations: usize,
    pub y: Vec<f64>,
}

pub trait SdpBackend: Sync {
    fn solve(&self, problem: &StandardSdp) -> Result<SdpSolution>;
}

/// ADMM on the LMI form: alternates a least-squares step for y (with the
/// equalities enforced exactly) and a blockwise eigenvalue projection onto
/// the PSD cone, with residual-balancing step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmSolver {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_rho: f64,
}

impl Default for AdmmSolver {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_iterations: 200_000,
            initial_rho: 1.0,
        }
    }
}

/// Per-entry linear map y ↦ block entries, grouped for fast application.
struct LmiMap {
    sizes: Vec<usize>,
    /// (block, row, col, weight) per entry; weight 2 off the diagonal.
    entries: Vec<(usize, usize, usize, f64)>,
    constant: Vec<f64>,
    terms: Vec<Vec<(usize, f64)>>,
}

impl LmiMap {
    fn new(p: &StandardSdp) -> Self {
        let mut index: HashMap<(usize, usize, usize), usize> = HashMap::new();
        let mut entries = Vec::new();
        let mut constant = Vec::new();
        let mut terms: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut slot = |b: usize,
                        r: usize,
                        c: usize,
                        entries: &mut Vec<_>,
                        constant: &mut Vec<f64>,
                        terms: &mut Vec<Vec<_>>| {
            *index.entry((b, r, c)).or_insert_with(|| {
                entries.push((b, r, c, if r == c { 1.0 } else { 2.0 }));
                constant.push(0.0);
                terms.push(Vec::new());
                entries.len() - 1
            })
        };
        for e in &p.constant {
            let i = slot(
                e.block,
                e.row,
                e.col,
                &mut entries,
                &mut constant,
                &mut terms,
            );
            constant[i] += e.value;
        }
        for e in &p.coefficients {
            let i = slot(
                e.block,
                e.row,
                e.col,
                &mut entries,
                &mut constant,
                &mut terms,
            );
            terms[i].push((e.var, e.value));
        }
        for t in &mut terms {
            merge(t);
        }
        Self {
            sizes: p.block_sizes.clone(),
            entries,
            constant,
            terms,
        }
    }

    /// Entry values of F₀ + G y.
    fn apply(&self, y: &[f64]) -> Vec<f64> {
        self.terms
            .iter()
            .zip(&self.constant)
            .map(|(t, c0)| c0 + t.iter().map(|&(k, v)| v * y[k]).sum::<f64>())
            .collect()
    }

    /// Gᵀ M for a symmetric M given by its entry values.
    fn adjoint(&self, m: &[f64], num_vars: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_vars];
        for ((t, &(_, _, _, w)), &v) in self.terms.iter().zip(&self.entries).zip(m) {
            for &(k, c) in t {
                out[k] += w * c * v;
            }
        }
        out
    }

    fn norm(&self, m: &[f64]) -> f64 {
        self.entries
            .iter()
            .zip(m)
            .map(|(e, v)| e.3 * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Projects entry values (block-structured) onto the PSD cone.
    fn project(&self, m: &[f64], block_entries: &[Vec<usize>]) -> Vec<f64> {
        let mut out = vec![0.0; m.len()];
        for (b, idx) in block_entries.iter().enumerate() {
            let d = self.sizes[b];
            if d == 1 {
                for &i in idx {
                    out[i] = m[i].max(0.0);
                }
                continue;
            }
            let mut mat = DMatrix::zeros(d, d);
            for &i in idx {
                let (_, r, c, _) = self.entries[i];
                mat[(r, c)] = m[i];
                mat[(c, r)] = m[i];
            }
            let eig = nalgebra::SymmetricEigen::new(mat);
            if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
                for &i in idx {
                    out[i] = m[i];
                }
                continue;
            }
            let clipped = DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l| l.max(0.0)));
            let q = &eig.eigenvectors;
            let proj = q * DMatrix::from_diagonal(&clipped) * q.transpose();
            for &i in idx {
                let (_, r, c, _) = self.entries[i];
                out[i] = proj[(r, c)];
            }
        }
        out
    }
}

/// Dense Cholesky factors of GᵀG restricted to each connected group of
/// variables.
struct NormalSolver {
    groups: Vec<(Vec<usize>, nalgebra::Cholesky<f64, nalgebra::Dyn>)>,
}

impl NormalSolver {
    fn new(map: &LmiMap, num_vars: usize) -> Result<Self> {
        let mut parent: Vec<usize> = (0..num_vars).collect();
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut used = vec![false; num_vars];
        for t in &map.terms {
            for &(k, _) in t {
                used[k] = true;
            }
            for w in t.windows(2) {
                let (a, b) = (root(&mut parent, w[0].0), root(&mut parent, w[1].0));
                parent[a] = b;
            }
        }
        if let Some(k) = used.iter().position(|u| !u) {
            return Err(Error::InvalidArgument(format!(
                "variable {k} appears in no PSD block"
            )));
        }
        let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
        for k in 0..num_vars {
            let r = root(&mut parent, k);
            members.entry(r).or_default().push(k);
        }
        let mut local = vec![0usize; num_vars];
        let mut group_of = vec![0usize; num_vars];
        let mut lists: Vec<Vec<usize>> = members.into_values().collect();
        lists.sort();
        for (g, list) in lists.iter().enumerate() {
            for (i, &k) in list.iter().enumerate() {
                local[k] = i;
                group_of[k] = g;
            }
        }
        let mut mats: Vec<DMatrix<f64>> = lists
            .iter()
            .map(|l| DMatrix::zeros(l.len(), l.len()))
            .collect();
        for (t, e) in map.terms.iter().zip(&map.entries) {
            for &(a, ca) in t {
                for &(b, cb) in t {
                    mats[group_of[a]][(local[a], local[b])] += e.3 * ca * cb;
                }
            }
        }
        let groups = lists
            .into_iter()
            .zip(mats)
            .map(|(l, m)| {
                nalgebra::Cholesky::new(m).map(|c| (l, c)).ok_or_else(|| {
                    Error::InvalidArgument("PSD blocks do not determine every variable".into())
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { groups })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rhs.len()];
        for (list, chol) in &self.groups {
            let b = DVector::from_iterator(list.len(), list.iter().map(|&k| rhs[k]));
            let x = chol.solve(&b);
            for (i, &k) in list.iter().enumerate() {
                out[k] = x[i];
            }
        }
        out
    }
}

const RELAXATION: f64 = 1.6;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn apply_form(form: &LinearForm, y: &[f64]) -> f64 {
    form.iter().map(|&(k, v)| v * y[k]).sum()
}

impl SdpBackend for AdmmSolver {
    fn solve(&self, p: &StandardSdp) -> Result<SdpSolution> {
        p.validate()?;
        let nv = p.num_vars;
        let map = LmiMap::new(p);
        let normal = NormalSolver::new(&map, nv)?;
        let mut block_entries: Vec<Vec<usize>> = vec![Vec::new(); p.block_sizes.len()];
        for (i, e) in map.entries.iter().enumerate() {
            block_entries[e.0].push(i);
        }

        // Equality handling: y = y₀ − Z ν with Z = H⁻¹Aᵀ, (A Z) ν = A y₀ − b.
        let m = p.equalities.len();
        let z_cols: Vec<Vec<f64>> = p
            .equalities
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; nv];
                for &(k, v) in row {
                    dense[k] += v;
                }
                normal.solve(&dense)
            })
            .collect();
        let schur = DMatrix::from_fn(m, m, |i, j| apply_form(&p.equalities[i], &z_cols[j]));
        let schur_inv = if m > 0 {
            schur
                .clone()
                .pseudo_inverse(1e-12 * schur.norm().max(1.0))
                .map_err(|e| Error::Infeasible(format!("equality system: {e}")))?
        } else {
            DMatrix::zeros(0, 0)
        };

        let dim = map.entries.len();
        let mut s = vec![0.0; dim];
        let mut u = vec![0.0; dim];
        let mut y = vec![0.0; nv];
        let mut nu = DVector::zeros(m);
        let mut rho = self.initial_rho;
        let c_norm = dot(&p.objective, &p.objective).sqrt();
        let mut last = (f64::INFINITY, f64::INFINITY);
        for it in 1..=self.max_iterations {
            let v: Vec<f64> = s
                .iter()
                .zip(&u)
                .zip(&map.constant)
                .map(|((s, u), c)| s - u - c)
                .collect();
            let mut rhs = map.adjoint(&v, nv);
            for (r, c) in rhs.iter_mut().zip(&p.objective) {
                *r += c / rho;
            }
            let y0 = normal.solve(&rhs);
            if m > 0 {
                let resid = DVector::from_iterator(
                    m,
                    (0..m).map(|i| apply_form(&p.equalities[i], &y0) - p.rhs[i]),
                );
                nu = &schur_inv * resid;
                y = y0;
                for (j, col) in z_cols.iter().enumerate() {
                    for (yk, zk) in y.iter_mut().zip(col) {
                        *yk -= nu[j] * zk;
                    }
                }
            } else {
                y = y0;
            }
            let x = map.apply(&y);
            // over-relaxed ADMM
            let xr: Vec<f64> = x
                .iter()
                .zip(&s)
                .map(|(a, b)| RELAXATION * a + (1.0 - RELAXATION) * b)
                .collect();
            let xu: Vec<f64> = xr.iter().zip(&u).map(|(a, b)| a + b).collect();
            let s_new = map.project(&xu, &block_entries);
            let r: Vec<f64> = x.iter().zip(&s_new).map(|(a, b)| a - b).collect();
            let ds: Vec<f64> = s_new.iter().zip(&s).map(|(a, b)| a - b).collect();
            for ((ui, xi), si) in u.iter_mut().zip(&xr).zip(&s_new) {
                *ui += xi - si;
            }
            s = s_new;

            let primal = map.norm(&r);
            let dual = rho * dot(&map.adjoint(&ds, nv), &map.adjoint(&ds, nv)).sqrt();
            let eps_p = self.tolerance * (1.0 + map.norm(&x).max(map.norm(&s)));
            let eps_d = self.tolerance * (1.0 + c_norm.max(rho * map.norm(&u)));
            last = (primal, dual);
            if primal <= eps_p && dual <= eps_d {
                return Ok(self.finish(p, &map, y, &u, &nu, rho, primal, dual, it));
            }
            if it % 50 == 0 {
                let ratio = ((primal / eps_p) / (dual / eps_d).max(1e-300)).sqrt();
                let scale = ratio.clamp(0.1, 10.0);
                if !(0.2..=5.0).contains(&ratio) {
                    rho *= scale;
                    for ui in u.iter_mut() {
                        *ui /= scale;
                    }
                }
            }
        }
        let sol = self.finish(
            p,
            &map,
            y,
            &u,
            &nu,
            rho,
            last.0,
            last.1,
            self.max_iterations,
        );
        if sol.primal_residual > 1e-3 {
            return Err(Error::Infeasible(format!(
                "primal residual {:.3e} after {} iterations",
                sol.primal_residual, sol.iterations
            )));
        }
        Err(Error::MaxIterations {
            iterations: sol.iterations,
            primal: sol.primal_residual,
            dual: sol.dual_residual,
            objective: sol.objective,
        })
    }
}

impl AdmmSolver {
    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        p: &StandardSdp,
        map: &LmiMap,
        y: Vec<f64>,
        u: &[f64],
        nu: &DVector<f64>,
        rho: f64,
        primal: f64,
        dual: f64,
        iterations: usize,
    ) -> SdpSolution {
        let objective = dot(&p.objective, &y) + p.objective_offset;
        // Z = −ρU projected onto the PSD cone; bound ⟨Z, F₀⟩ + μᵀb.
        let z: Vec<f64> = u.iter().map(|v| -rho * v).collect();
        let mut block_entries: Vec<Vec<usize>> = vec![Vec::new(); map.sizes.len()];
        for (i, e) in map.entries.iter().enumerate() {
            block_entries[e.0].push(i);
        }
        let z = map.project(&z, &block_entries);
        let f0: f64 = map
            .entries
            .iter()
            .zip(&map.constant)
            .zip(&z)
            .map(|((e, c), zv)| e.3 * c * zv)
            .sum();
        let dual_bound =
            f0 + rho * nu.iter().zip(&p.rhs).map(|(a, b)| a * b).sum::<f64>() + p.objective_offset;
        SdpSolution {
            objective,
            primal_residual: primal,
            dual_residual: dual,
            gap_estimate: (dual_bound - objective).abs(),
            iterations,
            y,
        }
    }
}

/// Primal-dual path-following method (HKM direction with a Mehrotra
/// predictor-corrector). Equalities are kept as a saddle-point block on
/// top of the per-group normal equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteriorPointSolver {
    /// Target for relative primal, dual and gap residuals.
    pub tolerance: f64,
    /// Residual level accepted when progress stalls before `tolerance`.
    pub acceptable: f64,
    pub max_iterations: usize,
}

impl Default for InteriorPointSolver {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            acceptable: 1e-5,
            max_iterations: 200,
        }
    }
}

/// Sparse (row, col, value) entries of one coefficient matrix.
type Entries = Vec<(usize, usize, f64)>;

/// Per-block sparse coefficients, both triangles expanded.
struct BlockData {
    dim: usize,
    f0: DMatrix<f64>,
    /// var → entries (row, col, value)
    vars: Vec<(usize, Entries)>,
}

struct Structure {
    blocks: Vec<BlockData>,
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
    local: Vec<usize>,
}

impl Structure {
    fn new(p: &StandardSdp) -> Result<Self> {
        let nb = p.block_sizes.len();
        let mut f0: Vec<DMatrix<f64>> = p
            .block_sizes
            .iter()
            .map(|&d| DMatrix::zeros(d, d))
            .collect();
        for e in &p.constant {
            f0[e.block][(e.row, e.col)] += e.value;
            if e.row != e.col {
                f0[e.block][(e.col, e.row)] += e.value;
            }
        }
        let mut per_block: Vec<HashMap<usize, Entries>> = vec![HashMap::new(); nb];
        for e in &p.coefficients {
            let list = per_block[e.block].entry(e.var).or_default();
            list.push((e.row, e.col, e.value));
            if e.row != e.col {
                list.push((e.col, e.row, e.value));
            }
        }
        let blocks: Vec<BlockData> = per_block
            .into_iter()
            .zip(f0)
            .zip(&p.block_sizes)
            .map(|((m, f0), &dim)| {
                let mut vars: Vec<_> = m.into_iter().collect();
                vars.sort_by_key(|v| v.0);
                BlockData { dim, f0, vars }
            })
            .collect();

        let nv = p.num_vars;
        let mut parent: Vec<usize> = (0..nv).collect();
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut used = vec![false; nv];
        for b in &blocks {
            for w in b.vars.windows(2) {
                let (x, y) = (root(&mut parent, w[0].0), root(&mut parent, w[1].0));
                parent[x] = y;
            }
            for v in &b.vars {
                used[v.0] = true;
            }
        }
        if let Some(k) = used.iter().position(|u| !u) {
            return Err(Error::InvalidArgument(format!(
                "variable {k} appears in no PSD block"
            )));
        }
        let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
        for k in 0..nv {
            let r = root(&mut parent, k);
            members.entry(r).or_default().push(k);
        }
        let mut groups: Vec<Vec<usize>> = members.into_values().collect();
        groups.sort();
        let mut group_of = vec![0; nv];
        let mut local = vec![0; nv];
        for (g, list) in groups.iter().enumerate() {
            for (i, &k) in list.iter().enumerate() {
                group_of[k] = g;
                local[k] = i;
            }
        }
        Ok(Self {
            blocks,
            groups,
            group_of,
            local,
        })
    }

    /// F₀ + Σ yₖFₖ.
    fn affine(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .map(|b| {
                let mut m = b.f0.clone();
                for (k, entries) in &b.vars {
                    for &(r, c, v) in entries {
                        m[(r, c)] += v * y[*k];
                    }
                }
                m
            })
            .collect()
    }

    /// Σ yₖFₖ without F₀.
    fn linear(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .map(|b| {
                let mut m = DMatrix::zeros(b.dim, b.dim);
                for (k, entries) in &b.vars {
                    for &(r, c, v) in entries {
                        m[(r, c)] += v * y[*k];
                    }
                }
                m
            })
            .collect()
    }

    /// (⟨Fₖ, W⟩)ₖ.
    fn adjoint(&self, w: &[DMatrix<f64>], nv: usize) -> Vec<f64> {
        let mut out = vec![0.0; nv];
        for (b, wb) in self.blocks.iter().zip(w) {
            for (k, entries) in &b.vars {
                out[*k] += entries.iter().map(|&(r, c, v)| v * wb[(r, c)]).sum::<f64>();
            }
        }
        out
    }

    /// Per-group Schur matrices Mₖⱼ = Tr(Fₖ Z⁻¹ Fⱼ X).
    fn schur(&self, zinv: &[DMatrix<f64>], x: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let mut mats: Vec<DMatrix<f64>> = self
            .groups
            .iter()
            .map(|g| DMatrix::zeros(g.len(), g.len()))
            .collect();
        for ((b, zi), xb) in self.blocks.iter().zip(zinv).zip(x) {
            if b.dim == 1 {
                let s = zi[(0, 0)] * xb[(0, 0)];
                for (k, ek) in &b.vars {
                    let vk: f64 = ek.iter().map(|e| e.2).sum();
                    for (j, ej) in &b.vars {
                        let vj: f64 = ej.iter().map(|e| e.2).sum();
                        let g = self.group_of[*k];
                        mats[g][(self.local[*k], self.local[*j])] += vk * vj * s;
                    }
                }
                continue;
            }
            // Wⱼ = Z⁻¹ Fⱼ X, then Mₖⱼ = ⟨Fₖ, Wⱼ⟩
            for (j, ej) in &b.vars {
                let mut w = DMatrix::<f64>::zeros(b.dim, b.dim);
                for &(c, d, v) in ej {
                    // column c of Z⁻¹ times row d of X
                    for r in 0..b.dim {
                        let zc = zi[(r, c)] * v;
                        if zc == 0.0 {
                            continue;
                        }
                        for col in 0..b.dim {
                            w[(r, col)] += zc * xb[(d, col)];
                        }
                    }
                }
                let g = self.group_of[*j];
                for (k, ek) in &b.vars {
                    let val: f64 = ek.iter().map(|&(r, c, v)| v * w[(c, r)]).sum();
                    mats[g][(self.local[*k], self.local[*j])] += val;
                }
            }
        }
        mats
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest step in (0, 1] keeping `m + t·dm` positive definite, scaled by
/// `fraction`.
fn max_step(m: &[DMatrix<f64>], dm: &[DMatrix<f64>], fraction: f64) -> f64 {
    let mut step = 1.0f64;
    for (a, d) in m.iter().zip(dm) {
        if a.nrows() == 1 {
            if d[(0, 0)] < 0.0 {
                step = step.min(-fraction * a[(0, 0)] / d[(0, 0)]);
            }
            continue;
        }
        let Some(ch) = nalgebra::Cholesky::new(a.clone()) else {
            return 0.0;
        };
        let l = ch.l();
        let linv = l
            .clone()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::identity(a.nrows(), a.nrows()));
        let s = sym(&(&linv * d * linv.transpose()));
        let lmin = s
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if lmin < 0.0 {
            step = step.min(-fraction / lmin);
        }
    }
    step
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn fro(a: &[DMatrix<f64>]) -> f64 {
    inner(a, a).sqrt()
}

impl SdpBackend for InteriorPointSolver {
    fn solve(&self, p: &StandardSdp) -> Result<SdpSolution> {
        p.validate()?;
        let st = Structure::new(p)?;
        let nv = p.num_vars;
        let m = p.equalities.len();
        let total_dim: usize = p.block_sizes.iter().sum();
        let c_norm = dot(&p.objective, &p.objective).sqrt();
        let b_norm = dot(&p.rhs, &p.rhs).sqrt();
        let f0_norm = fro(&st.blocks.iter().map(|b| b.f0.clone()).collect::<Vec<_>>());

        let mut y = vec![0.0; nv];
        let mut lam = vec![0.0; m];
        let mut x: Vec<DMatrix<f64>> = p
            .block_sizes
            .iter()
            .map(|&d| DMatrix::identity(d, d))
            .collect();
        let mut z: Vec<DMatrix<f64>> = x.clone();

        let eq_matrix: Vec<Vec<f64>> = p
            .equalities
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; nv];
                for &(k, v) in row {
                    dense[k] += v;
                }
                dense
            })
            .collect();

        let mut best: Option<(f64, SdpSolution)> = None;
        let mut last_progress = 0;
        // stall = no halving of the worst residual since `last_progress`
        let mut progress_ref = f64::INFINITY;
        let mut short_steps = 0;
        for it in 1..=self.max_iterations {
            // residuals
            let fy = st.affine(&y);
            let rp: Vec<DMatrix<f64>> = z.iter().zip(&fy).map(|(a, b)| a - b).collect();
            let ax = st.adjoint(&x, nv);
            let mut rd = vec![0.0; nv];
            for k in 0..nv {
                rd[k] = ax[k] + p.objective[k];
            }
            for (row, l) in eq_matrix.iter().zip(&lam) {
                for k in 0..nv {
                    rd[k] -= row[k] * l;
                }
            }
            let req: Vec<f64> = (0..m).map(|i| dot(&eq_matrix[i], &y) - p.rhs[i]).collect();
            let primal_obj = dot(&p.objective, &y);
            let dual_obj = inner(
                &st.blocks.iter().map(|b| b.f0.clone()).collect::<Vec<_>>(),
                &x,
            ) + dot(&p.rhs, &lam);
            let p_inf = (fro(&rp) / (1.0 + f0_norm)).max(dot(&req, &req).sqrt() / (1.0 + b_norm));
            let d_inf = dot(&rd, &rd).sqrt() / (1.0 + c_norm);
            let gap = (dual_obj - primal_obj).abs() / (1.0 + primal_obj.abs() + dual_obj.abs());
            let worst = p_inf.max(d_inf).max(gap);
            let current = SdpSolution {
                objective: primal_obj + p.objective_offset,
                primal_residual: p_inf,
                dual_residual: d_inf,
                gap_estimate: (dual_obj - primal_obj).abs(),
                iterations: it - 1,
                y: y.clone(),
            };
            if worst < 0.5 * progress_ref {
                progress_ref = worst;
                last_progress = it;
            }
            if best.as_ref().is_none_or(|b| worst < b.0) {
                best = Some((worst, current.clone()));
            }
            if it - last_progress > 40 {
                break;
            }
            if worst < self.tolerance {
                return Ok(current);
            }
            let x_norm = fro(&x);
            if x_norm > 1e12 {
                return Err(Error::Infeasible(format!(
                    "dual iterate diverged (‖X‖ = {x_norm:.3e})"
                )));
            }

            let mu = inner(&x, &z) / total_dim as f64;
            let zinv: Option<Vec<DMatrix<f64>>> = z
                .iter()
                .map(|zb| nalgebra::Cholesky::new(zb.clone()).map(|c| c.inverse()))
                .collect();
            let Some(zinv) = zinv else {
                break;
            };
            let schur = st.schur(&zinv, &x);
            let chols: Option<Vec<_>> = schur
                .iter()
                .map(|mg| {
                    nalgebra::Cholesky::new(mg.clone()).or_else(|| {
                        let scale = mg.diagonal().max().max(1.0);
                        let mut reg = mg.clone();
                        for i in 0..reg.nrows() {
                            reg[(i, i)] += 1e-13 * scale;
                        }
                        nalgebra::Cholesky::new(reg)
                    })
                })
                .collect();
            let Some(chols) = chols else {
                break;
            };
            let solve_m = |rhs: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; nv];
                for (g, list) in st.groups.iter().enumerate() {
                    let b = DVector::from_iterator(list.len(), list.iter().map(|&k| rhs[k]));
                    let s = chols[g].solve(&b);
                    for (i, &k) in list.iter().enumerate() {
                        out[k] = s[i];
                    }
                }
                out
            };
            let apply_m = |v: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; nv];
                for (g, list) in st.groups.iter().enumerate() {
                    let b = DVector::from_iterator(list.len(), list.iter().map(|&k| v[k]));
                    let s = &schur[g] * b;
                    for (i, &k) in list.iter().enumerate() {
                        out[k] = s[i];
                    }
                }
                out
            };
            let minv_at: Vec<Vec<f64>> = eq_matrix.iter().map(|row| solve_m(row)).collect();
            let small = DMatrix::from_fn(m, m, |i, j| dot(&eq_matrix[i], &minv_at[j]));
            let small_inv = match small.clone().cholesky() {
                Some(c) => c.inverse(),
                None => small
                    .pseudo_inverse(1e-14)
                    .unwrap_or_else(|_| DMatrix::zeros(m, m)),
            };
            // M Δy + Aᵀ Δλ = r, A Δy = e, with a few rounds of refinement
            // against the unfactored operator.
            let saddle = |r: &[f64], e: &[f64]| -> (Vec<f64>, Vec<f64>) {
                let once = |r: &[f64], e: &[f64]| {
                    let v = solve_m(r);
                    let t =
                        DVector::from_iterator(m, (0..m).map(|i| dot(&eq_matrix[i], &v) - e[i]));
                    let dl = &small_inv * t;
                    let mut dy = v;
                    for (j, col) in minv_at.iter().enumerate() {
                        for k in 0..nv {
                            dy[k] -= dl[j] * col[k];
                        }
                    }
                    (dy, dl.iter().copied().collect::<Vec<f64>>())
                };
                let (mut dy, mut dl) = once(r, e);
                for _ in 0..3 {
                    let mut rr = apply_m(&dy);
                    for k in 0..nv {
                        rr[k] = r[k] - rr[k];
                    }
                    for (row, l) in eq_matrix.iter().zip(&dl) {
                        for k in 0..nv {
                            rr[k] -= row[k] * l;
                        }
                    }
                    let er: Vec<f64> = (0..m).map(|i| e[i] - dot(&eq_matrix[i], &dy)).collect();
                    let (cy, cl) = once(&rr, &er);
                    for k in 0..nv {
                        dy[k] += cy[k];
                    }
                    for (a, b) in dl.iter_mut().zip(cl) {
                        *a += b;
                    }
                }
                (dy, dl)
            };
            let neg_req: Vec<f64> = req.iter().map(|v| -v).collect();

            // Solves for (Δy, Δλ, ΔZ, ΔX) given the centring target and
            // the second-order correction.
            let direction = |sigma_mu: f64, corr: Option<&[DMatrix<f64>]>| {
                let zrx: Vec<DMatrix<f64>> = zinv
                    .iter()
                    .zip(&rp)
                    .zip(&x)
                    .map(|((zi, r), xb)| zi * r * xb)
                    .collect();
                let mut target: Vec<DMatrix<f64>> = zinv.iter().map(|zi| zi * sigma_mu).collect();
                for (t, a) in target.iter_mut().zip(&zrx) {
                    *t += a;
                }
                if let Some(cc) = corr {
                    for (t, a) in target.iter_mut().zip(cc) {
                        *t -= a;
                    }
                }
                let mut rhs = st.adjoint(&target, nv);
                for (r, c) in rhs.iter_mut().zip(&p.objective) {
                    *r += c;
                }
                for (row, l) in eq_matrix.iter().zip(&lam) {
                    for k in 0..nv {
                        rhs[k] -= row[k] * l;
                    }
                }
                let (dy, dlam) = saddle(&rhs, &neg_req);
                let lin = st.linear(&dy);
                let dz: Vec<DMatrix<f64>> = lin.iter().zip(&rp).map(|(a, r)| a - r).collect();
                let dx: Vec<DMatrix<f64>> = (0..x.len())
                    .map(|b| {
                        let mut h = &zinv[b] * sigma_mu - &x[b] - &zinv[b] * &dz[b] * &x[b];
                        if let Some(cc) = corr {
                            h -= &cc[b];
                        }
                        sym(&h)
                    })
                    .collect();
                (dy, dlam, dz, dx)
            };

            // predictor
            let (_, _, dz_a, dx_a) = direction(0.0, None);
            let ap = max_step(&z, &dz_a, 1.0);
            let ad = max_step(&x, &dx_a, 1.0);
            let xa: Vec<DMatrix<f64>> = x.iter().zip(&dx_a).map(|(a, d)| a + d * ad).collect();
            let za: Vec<DMatrix<f64>> = z.iter().zip(&dz_a).map(|(a, d)| a + d * ap).collect();
            let mu_aff = inner(&xa, &za) / total_dim as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let corr: Vec<DMatrix<f64>> = zinv
                .iter()
                .zip(&dz_a)
                .zip(&dx_a)
                .map(|((zi, dz), dx)| zi * dz * dx)
                .collect();

            // corrector
            let (dy, dlam, dz, dx) = direction(sigma * mu, Some(&corr));
            let ap = max_step(&z, &dz, 0.98);
            let ad = max_step(&x, &dx, 0.98);
            if ap.max(ad) < 1e-10 {
                break;
            }
            // one side pinned at the boundary: the linear algebra has hit
            // its accuracy floor
            short_steps = if ap.min(ad) < 1e-3 {
                short_steps + 1
            } else {
                0
            };
            if short_steps >= 5 {
                break;
            }
            for k in 0..nv {
                y[k] += ap * dy[k];
            }
            for (zb, d) in z.iter_mut().zip(&dz) {
                *zb += d * ap;
                *zb = sym(zb);
            }
            for (xb, d) in x.iter_mut().zip(&dx) {
                *xb += d * ad;
                *xb = sym(xb);
            }
            for (l, d) in lam.iter_mut().zip(&dlam) {
                *l += ad * d;
            }
        }
        let (worst, sol) = best.expect("at least one iteration");
        if worst < self.acceptable {
            return Ok(sol);
        }
        if sol.primal_residual > 1e-3 {
            return Err(Error::Infeasible(format!(
                "primal residual {:.3e} after {} iterations",
                sol.primal_residual, sol.iterations
            )));
        }
        Err(Error::MaxIterations {
            iterations: sol.iterations,
            primal: sol.primal_residual,
            dual: sol.dual_residual,
            objective: sol.objective,
        })
    }
}

/// Environment variable naming an external solver program.
pub const EXTERNAL_SOLVER_ENV: &str = "GHZRAND_SDP_SOLVER";

/// Delegates to a program that reads a [`StandardSdp`] as JSON on stdin and
/// writes an [`SdpSolution`] as JSON on stdout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalSolver {
    pub program: std::path::PathBuf,
}

impl ExternalSolver {
    pub fn from_env() -> Option<Self> {
        std::env::var_os(EXTERNAL_SOLVER_ENV)
            .filter(|p| !p.is_empty())
            .map(|p| Self { program: p.into() })
    }
}

impl SdpBackend for ExternalSolver {
    fn solve(&self, p: &StandardSdp) -> Result<SdpSolution> {
        use std::io::Write;
        use std::process::{Command, Stdio};
        p.validate()?;
        let fail = |msg: String| {
            Error::Unsupported(format!("external solver {}: {msg}", self.program.display()))
        };
        let mut child = Command::new(&self.program)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(p.to_json().as_bytes())
            .map_err(|e| fail(e.to_string()))?;
        let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!("exited with {}", out.status)));
        }
        let sol: SdpSolution =
            serde_json::from_slice(&out.stdout).map_err(|e| fail(format!("bad output: {e}")))?;
        if sol.y.len() != p.num_vars {
            return Err(fail(format!(
                "returned {} values for {} variables",
                sol.y.len(),
                p.num_vars
            )));
        }
        Ok(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trivial_problems() {
        // maximize t s.t. [1 − t] ⪰ 0
        let p = StandardSdp {
            num_vars: 1,
            objective: vec![1.0],
            objective_offset: 0.0,
            block_sizes: vec![1],
            constant: vec![BlockEntry {
                block: 0,
                row: 0,
                col: 0,
                value: 1.0,
            }],
            coefficients: vec![VarEntry {
                var: 0,
                block: 0,
                row: 0,
                col: 0,
                value: -1.0,
            }],
            equalities: vec![],
            rhs: vec![],
        };
        let s = AdmmSolver::default().solve(&p).unwrap();
        assert_abs_diff_eq!(s.objective, 1.0, epsilon = 1e-6);

        // maximize x₁₂ over 2×2 correlation matrices
        let p = StandardSdp {
            num_vars: 3,
            objective: vec![0.0, 1.0, 0.0],
            objective_offset: 0.0,
            block_sizes: vec![2],
            constant: vec![],
            coefficients: vec![
                VarEntry {
                    var: 0,
                    block: 0,
                    row: 0,
                    col: 0,
                    value: 1.0,
                },
                VarEntry {
                    var: 1,
                    block: 0,
                    row: 0,
                    col: 1,
                    value: 1.0,
                },
                VarEntry {
                    var: 2,
                    block: 0,
                    row: 1,
                    col: 1,
                    value: 1.0,
                },
            ],
            equalities: vec![vec![(0, 1.0)], vec![(2, 1.0)]],
            rhs: vec![1.0, 1.0],
        };
        let s = AdmmSolver::default().solve(&p).unwrap();
        assert_abs_diff_eq!(s.objective, 1.0, epsilon = 1e-6);
        let s = InteriorPointSolver::default().solve(&p).unwrap();
        assert_abs_diff_eq!(s.objective, 1.0, epsilon = 1e-8);
        let json = p.to_json();
        assert_eq!(StandardSdp::from_json(&json).unwrap(), p);
    }
}
