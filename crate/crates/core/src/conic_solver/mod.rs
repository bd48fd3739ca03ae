//! Block semidefinite programs over hermitian matrices.
//!
//! A problem has real variables `v`, grouped into blocks. Each block is a
//! hermitian matrix `X_b = Σ_k v_k B_k` expanded in an orthonormal basis of
//! some subspace, so subspace membership holds by construction. Constraints
//! are linear equalities `E v = f` and linear matrix inequalities
//! `F_0 + Σ_k v_k F_k ⪰ 0`; the objective `gᵀv + g_0` is minimized.
//!
//! Equalities are eliminated up front, hermitian blocks are embedded as real
//! symmetric ones of twice the side, and the result goes to a homogeneous
//! self-dual interior-point method.

mod dense;
mod ipm;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::tensor_ops::{c, max_abs, min_eigenvalue, CMat, ProductBasis, SparseHerm, SystemLabel, C64};
use dense::RMat;
use ipm::{Ipm, IpmOutput, IpmStatus, SpSym, StdBlock, StdForm};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Entries below this (relative) are dropped from sparse images.
const SPARSE_CUT: f64 = 1e-14;

/// Per variable, the sparse (row, col) image of a reduced LMI.
type SparseTerms = BTreeMap<usize, BTreeMap<(usize, usize), C64>>;
/// (row, col, value) of one LMI coefficient in the text format.
type Entry = (usize, usize, C64);
/// Relative pivot threshold of the equality elimination.
const PIVOT_TOL: f64 = 1e-10;
/// Floor for the internal tolerance when a solution has to be re-solved.
const MIN_INNER_TOL: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("tolerance {0} outside [1e-12, 1e-4]")]
    Tolerance(f64),
    #[error("unknown block {0}")]
    UnknownBlock(usize),
    #[error("side mismatch: expected {expected}, got {got}")]
    Side { expected: usize, got: usize },
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Psd,
    Free,
}

/// Orthonormal (w.r.t. Re tr(AB)) basis of a real subspace of hermitian
/// matrices of side `n`.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    pub tag: String,
    pub n: usize,
    pub elements: Vec<SparseHerm>,
    /// Ratio of the largest to the smallest Gram–Schmidt pivot norm among
    /// elements that had to be orthogonalized; 1 when none did.
    pub condition: f64,
}

impl SubspaceBasis {
    /// All hermitian operators on the given factors.
    pub fn full(systems: &[SystemLabel]) -> Self {
        let pb = ProductBasis::new(systems);
        let n = pb.elements.first().map_or(1, |e| e.n);
        SubspaceBasis { tag: "full".into(), n, elements: pb.elements, condition: 1.0 }
    }

    /// The one-dimensional space of real scalars (a 1×1 block).
    pub fn scalar() -> Self {
        SubspaceBasis {
            tag: "scalar".into(),
            n: 1,
            elements: vec![SparseHerm { n: 1, entries: vec![(0, 0, c(1.0, 0.0))] }],
            condition: 1.0,
        }
    }

    /// Range of the projector `f`, found by pushing the product basis of
    /// `systems` through it. Elements fixed by `f` are kept as is, elements
    /// annihilated are dropped, and anything else is orthogonalized.
    pub fn from_projector(systems: &[SystemLabel], tag: &str, f: impl Fn(&CMat) -> CMat) -> Self {
        let pb = ProductBasis::new(systems);
        let n = pb.elements.first().map_or(1, |e| e.n);
        let mut kept = Vec::new();
        let mut mixed = Vec::new();
        for e in pb.elements {
            let d = e.to_dense();
            let img = f(&d);
            if max_abs(&(&img - &d)) < 1e-10 {
                kept.push(e);
            } else if max_abs(&img) >= 1e-10 {
                mixed.push(img);
            }
        }
        let (n_acc, n_mixed) = (kept.len(), mixed.len());
        let basis = Self::orthonormalize(tag, n, kept, mixed);
        log::debug!(
            "subspace {tag}: {} elements ({n_acc} exact, {n_mixed} mixed), condition {:.3e}",
            basis.elements.len(),
            basis.condition
        );
        basis
    }

    /// Orthonormal basis of span(`vectors`).
    pub fn from_span(tag: &str, n: usize, vectors: Vec<CMat>) -> Self {
        Self::orthonormalize(tag, n, Vec::new(), vectors)
    }

    fn orthonormalize(tag: &str, n: usize, exact: Vec<SparseHerm>, extra: Vec<CMat>) -> Self {
        let mut dense_done: Vec<CMat> = Vec::new();
        let (mut big, mut small) = (0.0f64, f64::INFINITY);
        for v in extra {
            let v0 = frob(&v);
            let mut r = v;
            for _ in 0..2 {
                for e in &exact {
                    let p = e.trace_with(&r);
                    if p != 0.0 {
                        for &(i, j, x) in &e.entries {
                            r[(i, j)] -= x * p;
                        }
                    }
                }
                for q in &dense_done {
                    let p = re_dot(q, &r);
                    r -= q * c(p, 0.0);
                }
            }
            let nr = frob(&r);
            if nr > 1e-8 * v0.max(1e-300) {
                big = big.max(nr / v0);
                small = small.min(nr / v0);
                dense_done.push(r / c(nr, 0.0));
            }
        }
        let mut elements = exact;
        elements.extend(dense_done.iter().map(|m| SparseHerm::from_dense(m, SPARSE_CUT)));
        let condition = if small.is_finite() { big / small } else { 1.0 };
        SubspaceBasis { tag: tag.into(), n, elements, condition }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn expand(&self, coeffs: &[f64]) -> CMat {
        let mut m = CMat::zeros(self.n, self.n);
        for (e, &v) in self.elements.iter().zip(coeffs) {
            for &(i, j, x) in &e.entries {
                m[(i, j)] += x * v;
            }
        }
        m
    }

    /// Coefficients of the orthogonal projection of `m`.
    pub fn coordinates(&self, m: &CMat) -> Vec<f64> {
        self.elements.iter().map(|e| e.trace_with(m)).collect()
    }
}

fn re_dot(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

fn frob(a: &CMat) -> f64 {
    re_dot(a, a).sqrt()
}

#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub name: String,
    pub cone: Cone,
    pub basis: SubspaceBasis,
    pub offset: usize,
}

/// `constant + Σ v_k F_k`, all of side `n`.
#[derive(Debug, Clone)]
pub struct AffineExpr {
    pub n: usize,
    constant: CMat,
    terms: Vec<(usize, SparseHerm)>,
}

impl AffineExpr {
    pub fn zero(n: usize) -> Self {
        AffineExpr { n, constant: CMat::zeros(n, n), terms: Vec::new() }
    }

    pub fn add_constant(mut self, m: &CMat) -> Result<Self> {
        self.check(m.nrows())?;
        self.constant += m;
        Ok(self)
    }

    /// Adds `coeff · X_b`.
    pub fn add_block(mut self, p: &SdpProblem, b: usize, coeff: f64) -> Result<Self> {
        let blk = p.block(b)?;
        self.check(blk.basis.n)?;
        for (k, e) in blk.basis.elements.iter().enumerate() {
            let entries = e.entries.iter().map(|&(i, j, x)| (i, j, x * coeff)).collect();
            self.terms.push((blk.offset + k, SparseHerm { n: self.n, entries }));
        }
        Ok(self)
    }

    /// Adds `f(X_b)` for a linear map `f`.
    pub fn add_mapped(mut self, p: &SdpProblem, b: usize, f: impl Fn(&CMat) -> CMat) -> Result<Self> {
        let blk = p.block(b)?;
        for (k, e) in blk.basis.elements.iter().enumerate() {
            let img = f(&e.to_dense());
            self.check(img.nrows())?;
            let s = SparseHerm::from_dense(&img, SPARSE_CUT);
            if !s.entries.is_empty() {
                self.terms.push((blk.offset + k, s));
            }
        }
        Ok(self)
    }

    /// Adds `coeff · v · 1` for a scalar block `v`.
    pub fn add_scalar_identity(mut self, p: &SdpProblem, b: usize, coeff: f64) -> Result<Self> {
        let blk = p.block(b)?;
        if blk.basis.n != 1 || blk.basis.len() != 1 {
            return Err(SolverError::Malformed(format!("block {} is not scalar", blk.name)));
        }
        let entries = (0..self.n).map(|i| (i, i, c(coeff, 0.0))).collect();
        self.terms.push((blk.offset, SparseHerm { n: self.n, entries }));
        Ok(self)
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.n {
            return Err(SolverError::Side { expected: self.n, got: n });
        }
        Ok(())
    }
}

/// Modeling front end; `compile` turns it into a [`CompiledSdp`].
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    blocks: Vec<BlockSpec>,
    nvars: usize,
    lmis: Vec<AffineExpr>,
    eq_rows: Vec<Vec<(usize, f64)>>,
    eq_rhs: Vec<f64>,
    objective: BTreeMap<usize, f64>,
    objective_constant: f64,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, name: &str, cone: Cone, basis: SubspaceBasis) -> usize {
        let offset = self.nvars;
        self.nvars += basis.len();
        self.blocks.push(BlockSpec { name: name.into(), cone, basis, offset });
        self.blocks.len() - 1
    }

    pub fn block(&self, b: usize) -> Result<&BlockSpec> {
        self.blocks.get(b).ok_or(SolverError::UnknownBlock(b))
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    /// Requires `expr ⪰ 0`. Returns the index of its dual multiplier.
    pub fn add_psd(&mut self, expr: AffineExpr) -> usize {
        self.lmis.push(expr);
        self.blocks.iter().filter(|b| b.cone == Cone::Psd).count() + self.lmis.len() - 1
    }

    /// Requires `Re tr(P expr) = 0` for every `P` in `projection`, or for
    /// every matrix entry when no projection is given.
    pub fn add_equality(&mut self, expr: AffineExpr, projection: Option<&SubspaceBasis>) -> Result<()> {
        let n = expr.n;
        let probes: Vec<SparseHerm> = match projection {
            Some(b) => {
                expr.check(b.n)?;
                b.elements.clone()
            }
            None => {
                let mut v = Vec::new();
                for i in 0..n {
                    v.push(SparseHerm { n, entries: vec![(i, i, c(1.0, 0.0))] });
                    for j in i + 1..n {
                        v.push(SparseHerm { n, entries: vec![(i, j, c(1.0, 0.0)), (j, i, c(1.0, 0.0))] });
                        v.push(SparseHerm { n, entries: vec![(i, j, c(0.0, -1.0)), (j, i, c(0.0, 1.0))] });
                    }
                }
                v
            }
        };
        for pr in &probes {
            let mut row: BTreeMap<usize, f64> = BTreeMap::new();
            let lookup: HashMap<(usize, usize), C64> = pr.entries.iter().map(|&(i, j, x)| ((i, j), x)).collect();
            for (k, f) in &expr.terms {
                // Re tr(P F) = Re Σ P_ij F_ji
                let mut s = 0.0;
                for &(i, j, x) in &f.entries {
                    if let Some(p) = lookup.get(&(j, i)) {
                        s += (p * x).re;
                    }
                }
                if s != 0.0 {
                    *row.entry(*k).or_default() += s;
                }
            }
            let rhs = -pr.trace_with(&expr.constant);
            self.eq_rows.push(row.into_iter().filter(|e| e.1 != 0.0).collect());
            self.eq_rhs.push(rhs);
        }
        Ok(())
    }

    /// Requires `Σ coeff·v = rhs`.
    pub fn add_linear_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        let mut row: BTreeMap<usize, f64> = BTreeMap::new();
        for (k, v) in coeffs {
            *row.entry(k).or_default() += v;
        }
        self.eq_rows.push(row.into_iter().filter(|e| e.1 != 0.0).collect());
        self.eq_rhs.push(rhs);
    }

    /// Coefficients of `Re tr(weight · X_b)` in terms of the variables.
    pub fn trace_form(&self, b: usize, weight: &CMat) -> Result<Vec<(usize, f64)>> {
        let blk = self.block(b)?;
        if weight.nrows() != blk.basis.n {
            return Err(SolverError::Side { expected: blk.basis.n, got: weight.nrows() });
        }
        Ok(blk
            .basis
            .elements
            .iter()
            .enumerate()
            .map(|(k, e)| (blk.offset + k, e.trace_with(weight)))
            .filter(|e| e.1 != 0.0)
            .collect())
    }

    /// Adds `Re tr(weight · X_b)` to the objective.
    pub fn add_objective(&mut self, b: usize, weight: &CMat) -> Result<()> {
        for (k, v) in self.trace_form(b, weight)? {
            *self.objective.entry(k).or_default() += v;
        }
        Ok(())
    }

    pub fn add_objective_var(&mut self, var: usize, coeff: f64) {
        *self.objective.entry(var).or_default() += coeff;
    }

    pub fn add_objective_constant(&mut self, v: f64) {
        self.objective_constant += v;
    }

    pub fn compile(&self) -> CompiledSdp {
        let mut lmis = Vec::new();
        for blk in &self.blocks {
            if blk.cone == Cone::Psd {
                let terms = blk.basis.elements.iter().enumerate().map(|(k, e)| (blk.offset + k, e.clone())).collect();
                lmis.push(Lmi::from_terms(blk.basis.n, CMat::zeros(blk.basis.n, blk.basis.n), terms));
            }
        }
        for e in &self.lmis {
            lmis.push(Lmi::from_terms(e.n, e.constant.clone(), e.terms.clone()));
        }
        let mut objective = vec![0.0; self.nvars];
        for (&k, &v) in &self.objective {
            objective[k] += v;
        }
        CompiledSdp {
            nvars: self.nvars,
            objective,
            objective_constant: self.objective_constant,
            eq_rows: self.eq_rows.clone(),
            eq_rhs: self.eq_rhs.clone(),
            lmis,
        }
    }
}

/// `constant + Σ v_k F_k ⪰ 0`, terms sorted by variable with merged entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Lmi {
    pub n: usize,
    pub constant: CMat,
    pub terms: Vec<(usize, SparseHerm)>,
}

impl Lmi {
    fn from_terms(n: usize, constant: CMat, terms: Vec<(usize, SparseHerm)>) -> Self {
        let mut merged: BTreeMap<usize, BTreeMap<(usize, usize), C64>> = BTreeMap::new();
        for (k, f) in terms {
            let m = merged.entry(k).or_default();
            for (i, j, x) in f.entries {
                *m.entry((i, j)).or_default() += x;
            }
        }
        let terms = merged
            .into_iter()
            .map(|(k, m)| {
                (
                    k,
                    SparseHerm {
                        n,
                        entries: m.into_iter().filter(|e| e.1 != c(0.0, 0.0)).map(|((i, j), x)| (i, j, x)).collect(),
                    },
                )
            })
            .filter(|(_, s)| !s.entries.is_empty())
            .collect();
        Lmi { n, constant, terms }
    }

    pub fn evaluate(&self, v: &[f64]) -> CMat {
        let mut m = self.constant.clone();
        for (k, f) in &self.terms {
            for &(i, j, x) in &f.entries {
                m[(i, j)] += x * v[*k];
            }
        }
        m
    }
}

/// Basis-expanded problem: min gᵀv + g₀ s.t. E v = f, every LMI ⪰ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledSdp {
    pub nvars: usize,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub eq_rows: Vec<Vec<(usize, f64)>>,
    pub eq_rhs: Vec<f64>,
    pub lmis: Vec<Lmi>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SdpSolution {
    pub status: Status,
    /// Variables `v`.
    #[serde(skip)]
    pub variables: Vec<f64>,
    /// Block values `X_b`, in declaration order.
    #[serde(skip)]
    pub blocks: Vec<CMat>,
    /// One multiplier per LMI (PSD blocks first, then `add_psd` order).
    #[serde(skip)]
    pub lmi_duals: Vec<CMat>,
    /// One multiplier per equality row; zero on redundant rows.
    #[serde(skip)]
    pub eq_duals: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub schur_regularization: f64,
}

/// Checks `tol` and solves.
pub fn solve(problem: &SdpProblem, tol: f64, max_iter: usize) -> Result<SdpSolution> {
    let compiled = problem.compile();
    let mut sol = compiled.solve(tol, max_iter)?;
    sol.blocks =
        problem.blocks.iter().map(|b| b.basis.expand(&sol.variables[b.offset..b.offset + b.basis.len()])).collect();
    Ok(sol)
}

struct Elimination {
    /// (pivot column, other entries of the reduced row, reduced rhs)
    pivots: Vec<(usize, BTreeMap<usize, f64>, f64)>,
    independent: Vec<usize>,
}

fn eliminate(rows: &[Vec<(usize, f64)>], rhs: &[f64]) -> std::result::Result<Elimination, ()> {
    let mut pivots: Vec<(usize, BTreeMap<usize, f64>, f64)> = Vec::new();
    let mut pivot_of: HashMap<usize, usize> = HashMap::new();
    let mut independent = Vec::new();
    for (ri, (row, &f)) in rows.iter().zip(rhs).enumerate() {
        let scale = row.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
        let mut r: BTreeMap<usize, f64> = row.iter().copied().collect();
        let mut f = f;
        let hits: Vec<(usize, f64)> =
            r.iter().filter(|(k, _)| pivot_of.contains_key(k)).map(|(&k, &v)| (k, v)).collect();
        for (k, v) in hits {
            let (_, prow, pf) = &pivots[pivot_of[&k]];
            r.remove(&k);
            for (&l, &w) in prow {
                *r.entry(l).or_default() -= v * w;
            }
            f -= v * pf;
        }
        r.retain(|_, v| v.abs() > PIVOT_TOL * scale.max(1e-300) * 1e-3);
        let best = r.iter().fold(None, |acc: Option<(usize, f64)>, (&k, &v)| match acc {
            Some((_, bv)) if bv.abs() >= v.abs() => acc,
            _ => Some((k, v)),
        });
        match best {
            Some((k, v)) if v.abs() > PIVOT_TOL * scale => {
                r.remove(&k);
                for w in r.values_mut() {
                    *w /= v;
                }
                f /= v;
                // Clear column k from earlier pivot rows.
                for (_, prow, pf) in pivots.iter_mut() {
                    if let Some(a) = prow.remove(&k) {
                        for (&l, &w) in &r {
                            *prow.entry(l).or_default() -= a * w;
                        }
                        *pf -= a * f;
                    }
                }
                pivot_of.insert(k, pivots.len());
                pivots.push((k, r, f));
                independent.push(ri);
            }
            _ => {
                if f.abs() > 1e3 * PIVOT_TOL * (1.0 + scale) {
                    return Err(());
                }
            }
        }
    }
    Ok(Elimination { pivots, independent })
}

fn embed_entries(entries: &[(usize, usize, C64)], n: usize, complex: bool, sign: f64) -> SpSym {
    let mut out = Vec::with_capacity(entries.len() * if complex { 4 } else { 1 });
    for &(i, j, x) in entries {
        let (i, j) = (i as u32, j as u32);
        if x.re != 0.0 {
            out.push((i, j, sign * x.re));
            if complex {
                out.push((i + n as u32, j + n as u32, sign * x.re));
            }
        }
        if complex && x.im != 0.0 {
            out.push((i, j + n as u32, -sign * x.im));
            out.push((i + n as u32, j, sign * x.im));
        }
    }
    SpSym { entries: out }
}

fn embed_dense(m: &CMat, complex: bool) -> RMat {
    let n = m.nrows();
    if !complex {
        return RMat::from_fn(n, n, |i, j| m[(i, j)].re);
    }
    RMat::from_fn(2 * n, 2 * n, |i, j| {
        let x = m[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => x.re,
            (true, false) => -x.im,
            (false, true) => x.im,
        }
    })
}

fn unembed(x: &RMat, n: usize, complex: bool) -> CMat {
    if !complex {
        return CMat::from_fn(n, n, |i, j| c(x[(i, j)], 0.0));
    }
    CMat::from_fn(n, n, |i, j| c(x[(i, j)] + x[(i + n, j + n)], x[(i + n, j)] - x[(i, j + n)]))
}

impl CompiledSdp {
    fn validate(&self) -> Result<()> {
        if self.objective.len() != self.nvars || self.eq_rows.len() != self.eq_rhs.len() {
            return Err(SolverError::Malformed("inconsistent lengths".into()));
        }
        let bad_var = |k: usize| k >= self.nvars;
        if self.eq_rows.iter().flatten().any(|e| bad_var(e.0)) {
            return Err(SolverError::Malformed("equality references unknown variable".into()));
        }
        for l in &self.lmis {
            if l.constant.nrows() != l.n || super::tensor_ops::hermitian_defect(&l.constant) > 1e-10 {
                return Err(SolverError::Malformed("LMI constant not hermitian of the declared side".into()));
            }
            for (k, f) in &l.terms {
                if bad_var(*k) || f.entries.iter().any(|e| e.0 >= l.n || e.1 >= l.n) {
                    return Err(SolverError::Malformed("LMI term out of range".into()));
                }
                if super::tensor_ops::hermitian_defect(&f.to_dense()) > 1e-10 {
                    return Err(SolverError::Malformed("LMI term not hermitian".into()));
                }
            }
        }
        Ok(())
    }

    fn empty_solution(&self, status: Status) -> SdpSolution {
        SdpSolution {
            status,
            variables: vec![0.0; self.nvars],
            blocks: Vec::new(),
            lmi_duals: self.lmis.iter().map(|l| CMat::zeros(l.n, l.n)).collect(),
            eq_duals: vec![0.0; self.eq_rows.len()],
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            gap: f64::NAN,
            iterations: 0,
            schur_regularization: 0.0,
        }
    }

    pub fn solve(&self, tol: f64, max_iter: usize) -> Result<SdpSolution> {
        if !(1e-12..=1e-4).contains(&tol) {
            return Err(SolverError::Tolerance(tol));
        }
        self.validate()?;
        let Ok(elim) = eliminate(&self.eq_rows, &self.eq_rhs) else {
            return Ok(self.empty_solution(Status::PrimalInfeasible));
        };
        let is_pivot: Vec<bool> = {
            let mut v = vec![false; self.nvars];
            for p in &elim.pivots {
                v[p.0] = true;
            }
            v
        };

        // Substitute v_p = f_p − Σ_l R_pl v_l into objective and LMIs.
        let mut g = self.objective.clone();
        for (pc, row, _) in &elim.pivots {
            let gp = g[*pc];
            if gp != 0.0 {
                for (&l, &r) in row {
                    g[l] -= gp * r;
                }
            }
            g[*pc] = 0.0;
        }
        let mut red: Vec<(CMat, SparseTerms)> = Vec::new();
        for l in &self.lmis {
            let mut c0 = l.constant.clone();
            let mut terms: BTreeMap<usize, BTreeMap<(usize, usize), C64>> = BTreeMap::new();
            let by_var: HashMap<usize, &SparseHerm> = l.terms.iter().map(|(k, f)| (*k, f)).collect();
            for (k, f) in &l.terms {
                if !is_pivot[*k] {
                    let t = terms.entry(*k).or_default();
                    for &(i, j, x) in &f.entries {
                        *t.entry((i, j)).or_default() += x;
                    }
                }
            }
            for (pc, row, fp) in &elim.pivots {
                let Some(fm) = by_var.get(pc) else { continue };
                for &(i, j, x) in &fm.entries {
                    c0[(i, j)] += x * *fp;
                }
                for (&lv, &r) in row {
                    let t = terms.entry(lv).or_default();
                    for &(i, j, x) in &fm.entries {
                        *t.entry((i, j)).or_default() -= x * r;
                    }
                }
            }
            for t in terms.values_mut() {
                let big = t.values().map(|x| x.norm()).fold(0.0, f64::max);
                t.retain(|_, x| x.norm() > SPARSE_CUT * big.max(1e-300) && x.norm() > 1e-300);
            }
            terms.retain(|_, t| !t.is_empty());
            red.push((c0, terms));
        }

        // Free variables that appear in no LMI are fixed at zero.
        let mut used = vec![false; self.nvars];
        for (_, terms) in &red {
            for &k in terms.keys() {
                used[k] = true;
            }
        }
        let gscale = 1.0 + g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let unbounded = (0..self.nvars).any(|k| !is_pivot[k] && !used[k] && g[k].abs() > 1e-12 * gscale);
        let internal: Vec<usize> = (0..self.nvars).filter(|&k| used[k]).collect();
        let index_of: HashMap<usize, usize> = internal.iter().enumerate().map(|(i, &k)| (k, i)).collect();

        let mut std_blocks = Vec::new();
        let mut block_of_lmi: Vec<Option<(usize, bool)>> = Vec::new();
        for (li, (c0, terms)) in red.iter().enumerate() {
            let n = self.lmis[li].n;
            if terms.is_empty() {
                let scale = 1.0 + max_abs(c0);
                if min_eigenvalue(c0) < -tol * scale {
                    return Ok(self.empty_solution(Status::PrimalInfeasible));
                }
                block_of_lmi.push(None);
                continue;
            }
            let complex =
                c0.iter().any(|x| x.im != 0.0) || terms.values().flat_map(|t| t.values()).any(|x| x.im != 0.0);
            let vars: Vec<usize> = terms.keys().map(|k| index_of[k]).collect();
            let a = terms
                .values()
                .map(|t| {
                    let e: Vec<(usize, usize, C64)> = t.iter().map(|(&(i, j), &x)| (i, j, x)).collect();
                    embed_entries(&e, n, complex, -1.0)
                })
                .collect();
            block_of_lmi.push(Some((std_blocks.len(), complex)));
            std_blocks.push(StdBlock {
                n: if complex { 2 * n } else { n },
                c: embed_dense(c0, complex),
                vars,
                a,
                complex,
            });
        }
        let b: Vec<f64> = internal.iter().map(|&k| -g[k]).collect();
        let form = StdForm { blocks: std_blocks, b };

        if form.blocks.is_empty() {
            return Ok(self.finish(&elim, &internal, &block_of_lmi, unbounded, None));
        }
        // The interior-point stopping test works on scaled internal residuals.
        // An Optimal answer must also pass `verify_solution` on the user's
        // data, so tighten the internal tolerance until it does.
        let ipm = Ipm::new(&form);
        let mut inner = tol;
        let mut best: Option<(f64, SdpSolution)> = None;
        loop {
            let o = ipm.solve(inner, max_iter);
            log::debug!(
                "ipm: {:?} after {} iterations at tol {inner:.1e}, internal objectives {:.10e} / {:.10e}, gap {:.2e}",
                o.status,
                o.iterations,
                o.pobj,
                o.dobj,
                o.gap
            );
            let mut sol = self.finish(&elim, &internal, &block_of_lmi, unbounded, Some(&o));
            if !matches!(sol.status, Status::Optimal | Status::MaxIter) {
                return Ok(sol);
            }
            let rep = verify_solution(self, &sol, tol);
            if rep.ok {
                sol.status = Status::Optimal;
                return Ok(sol);
            }
            // Keep whichever attempt came closest.
            if best.as_ref().is_none_or(|(g, _)| rep.gap < *g) {
                best = Some((rep.gap, sol));
            }
            if o.status == IpmStatus::MaxIter || inner <= MIN_INNER_TOL {
                // Never report an iterate that fails verification as optimal.
                let mut sol = best.take().unwrap().1;
                sol.status = Status::MaxIter;
                return Ok(sol);
            }
            log::debug!("solution fails verification at {tol:.1e} (gap {:.2e}); tightening", rep.gap);
            inner = (inner * 0.1).max(MIN_INNER_TOL);
        }
    }

    fn finish(
        &self,
        elim: &Elimination,
        internal: &[usize],
        block_of_lmi: &[Option<(usize, bool)>],
        unbounded: bool,
        out: Option<&IpmOutput>,
    ) -> SdpSolution {
        let mut status = match out.map(|o| o.status) {
            None | Some(IpmStatus::Optimal) => Status::Optimal,
            Some(IpmStatus::DualInfeasible) => Status::PrimalInfeasible,
            Some(IpmStatus::PrimalInfeasible) => Status::DualInfeasible,
            Some(IpmStatus::MaxIter) => Status::MaxIter,
        };
        if unbounded && status == Status::Optimal {
            status = Status::DualInfeasible;
        }

        // Back to user variables.
        let mut v = vec![0.0; self.nvars];
        if let Some(o) = out {
            if matches!(status, Status::Optimal | Status::MaxIter) {
                for (i, &k) in internal.iter().enumerate() {
                    v[k] = o.y[i];
                }
            }
        }
        for (pc, row, f) in &elim.pivots {
            v[*pc] = f - row.iter().map(|(&l, &r)| r * v[l]).sum::<f64>();
        }
        let lmi_duals: Vec<CMat> = block_of_lmi
            .iter()
            .zip(&self.lmis)
            .map(|(bl, l)| match (bl, out) {
                (Some((j, cx)), Some(o)) => {
                    let mut y = unembed(&o.x[*j], l.n, *cx);
                    y = (&y + y.adjoint()) * c(0.5, 0.0);
                    y
                }
                _ => CMat::zeros(l.n, l.n),
            })
            .collect();

        // Equality multipliers from g = A*(Y) + Eᵀμ on the independent rows.
        let mut resid = self.objective.clone();
        for (l, y) in self.lmis.iter().zip(&lmi_duals) {
            for (k, f) in &l.terms {
                resid[*k] -= f.trace_with(y);
            }
        }
        let mut eq_duals = vec![0.0; self.eq_rows.len()];
        let m = elim.independent.len();
        if m > 0 {
            let rows: Vec<BTreeMap<usize, f64>> =
                elim.independent.iter().map(|&r| self.eq_rows[r].iter().copied().collect()).collect();
            let mut gram = RMat::zeros(m, m);
            for i in 0..m {
                for j in 0..=i {
                    let (a, bb) =
                        if rows[i].len() < rows[j].len() { (&rows[i], &rows[j]) } else { (&rows[j], &rows[i]) };
                    let s: f64 = a.iter().filter_map(|(k, x)| bb.get(k).map(|y| x * y)).sum();
                    gram[(i, j)] = s;
                    gram[(j, i)] = s;
                }
            }
            let rhs: Vec<f64> = rows.iter().map(|r| r.iter().map(|(&k, &x)| x * resid[k]).sum()).collect();
            if let Some(lf) = dense::chol_lower(&gram) {
                let mu = dense::cholesky_solve(&lf, &rhs);
                for (i, &r) in elim.independent.iter().enumerate() {
                    eq_duals[r] = mu[i];
                }
            }
        }

        let primal_objective = self.objective.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + self.objective_constant;
        // Same bookkeeping as `verify_solution`, so the reported gap is the checked one.
        let dual_objective = self.objective_constant
            - self.lmis.iter().zip(&lmi_duals).map(|(l, y)| re_dot(&l.constant, y)).sum::<f64>()
            + eq_duals.iter().zip(&self.eq_rhs).map(|(m, f)| m * f).sum::<f64>();
        let (pres, dres, gap) = match out {
            Some(o) => (
                o.dres,
                o.pres,
                (primal_objective - dual_objective).abs() / (1.0 + primal_objective.abs() + dual_objective.abs()),
            ),
            None => (0.0, 0.0, 0.0),
        };
        SdpSolution {
            status,
            variables: v,
            blocks: Vec::new(),
            lmi_duals,
            eq_duals,
            primal_objective,
            dual_objective,
            primal_residual: pres,
            dual_residual: dres,
            gap,
            iterations: out.map_or(0, |o| o.iterations),
            schur_regularization: out.map_or(0.0, |o| o.max_regularization),
        }
    }

    /// Magnitude of the problem data, used to scale verification tolerances.
    fn data_scale(&self) -> f64 {
        let g = self.objective.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let f = self.eq_rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let c0 = self.lmis.iter().map(|l| max_abs(&l.constant)).fold(0.0, f64::max);
        1.0 + g.max(f).max(c0)
    }

    /// Text dump listing every block, basis-expanded constraint and the
    /// objective. Floats are written in shortest round-trip form.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "causalwit-sdp 1");
        let _ = writeln!(s, "nvars {}", self.nvars);
        let _ = writeln!(s, "objective {:?}", self.objective_constant);
        for (k, v) in self.objective.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(s, "c {k} {v:?}");
            }
        }
        for (row, f) in self.eq_rows.iter().zip(&self.eq_rhs) {
            let _ = writeln!(s, "eq {f:?}");
            for (k, v) in row {
                let _ = writeln!(s, "e {k} {v:?}");
            }
        }
        for l in &self.lmis {
            let _ = writeln!(s, "lmi {}", l.n);
            for j in 0..l.n {
                for i in 0..l.n {
                    let x = l.constant[(i, j)];
                    if x != c(0.0, 0.0) {
                        let _ = writeln!(s, "f0 {i} {j} {:?} {:?}", x.re, x.im);
                    }
                }
            }
            for (k, f) in &l.terms {
                for &(i, j, x) in &f.entries {
                    let _ = writeln!(s, "f {k} {i} {j} {:?} {:?}", x.re, x.im);
                }
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut p = CompiledSdp {
            nvars: 0,
            objective: Vec::new(),
            objective_constant: 0.0,
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            lmis: Vec::new(),
        };
        let mut lmi_terms: Vec<BTreeMap<usize, Vec<Entry>>> = Vec::new();
        let mut seen_end = false;
        for (ln, line) in text.lines().enumerate() {
            let err = |msg: &str| SolverError::Parse { line: ln + 1, msg: msg.into() };
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.is_empty() {
                continue;
            }
            let num =
                |i: usize| -> Result<f64> { tok.get(i).and_then(|t| t.parse().ok()).ok_or_else(|| err("bad number")) };
            let idx =
                |i: usize| -> Result<usize> { tok.get(i).and_then(|t| t.parse().ok()).ok_or_else(|| err("bad index")) };
            match tok[0] {
                "causalwit-sdp" => {
                    if tok.get(1) != Some(&"1") {
                        return Err(err("unsupported version"));
                    }
                }
                "nvars" => {
                    p.nvars = idx(1)?;
                    p.objective = vec![0.0; p.nvars];
                }
                "objective" => p.objective_constant = num(1)?,
                "c" => {
                    let k = idx(1)?;
                    *p.objective.get_mut(k).ok_or_else(|| err("variable out of range"))? = num(2)?;
                }
                "eq" => {
                    p.eq_rows.push(Vec::new());
                    p.eq_rhs.push(num(1)?);
                }
                "e" => {
                    let row = p.eq_rows.last_mut().ok_or_else(|| err("entry before eq"))?;
                    row.push((idx(1)?, num(2)?));
                }
                "lmi" => {
                    let n = idx(1)?;
                    p.lmis.push(Lmi { n, constant: CMat::zeros(n, n), terms: Vec::new() });
                    lmi_terms.push(BTreeMap::new());
                }
                "f0" => {
                    let l = p.lmis.last_mut().ok_or_else(|| err("entry before lmi"))?;
                    let (i, j) = (idx(1)?, idx(2)?);
                    if i >= l.n || j >= l.n {
                        return Err(err("entry out of range"));
                    }
                    l.constant[(i, j)] = c(num(3)?, num(4)?);
                }
                "f" => {
                    let t = lmi_terms.last_mut().ok_or_else(|| err("entry before lmi"))?;
                    t.entry(idx(1)?).or_default().push((idx(2)?, idx(3)?, c(num(4)?, num(5)?)));
                }
                "end" => {
                    seen_end = true;
                    break;
                }
                other => return Err(err(&format!("unknown record {other}"))),
            }
        }
        if !seen_end {
            return Err(SolverError::Parse { line: text.lines().count(), msg: "missing end".into() });
        }
        for (l, t) in p.lmis.iter_mut().zip(lmi_terms) {
            l.terms = t.into_iter().map(|(k, entries)| (k, SparseHerm { n: l.n, entries })).collect();
        }
        p.validate()?;
        Ok(p)
    }
}

/// Residuals recomputed from the problem data and the returned point alone.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub equality_violation: f64,
    /// Per LMI: max(0, −λ_min(F(v))).
    pub lmi_violation: Vec<f64>,
    /// Per LMI: max(0, −λ_min(Y)).
    pub dual_psd_violation: Vec<f64>,
    /// max |g − A*(Y) − Eᵀμ|
    pub stationarity: f64,
    /// Per LMI: |⟨F(v), Y⟩| / n.
    pub complementarity: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    /// Tolerances above are multiplied by this (1 + largest data entry).
    pub scale: f64,
    pub ok: bool,
}

pub fn verify_solution(problem: &CompiledSdp, sol: &SdpSolution, tol: f64) -> VerifyReport {
    let v = &sol.variables;
    let mut eqv = 0.0f64;
    for (row, f) in problem.eq_rows.iter().zip(&problem.eq_rhs) {
        let s: f64 = row.iter().map(|(k, a)| a * v[*k]).sum();
        eqv = eqv.max((s - f).abs());
    }
    let mut lmi_violation = Vec::new();
    let mut dual_psd_violation = Vec::new();
    let mut complementarity = Vec::new();
    let mut stat = problem.objective.clone();
    let mut dual_obj = problem.objective_constant;
    for (l, y) in problem.lmis.iter().zip(&sol.lmi_duals) {
        let fv = l.evaluate(v);
        lmi_violation.push((-min_eigenvalue(&fv)).max(0.0));
        dual_psd_violation.push((-min_eigenvalue(y)).max(0.0));
        complementarity.push(re_dot(&fv, y).abs() / l.n as f64);
        for (k, f) in &l.terms {
            stat[*k] -= f.trace_with(y);
        }
        dual_obj -= re_dot(&l.constant, y);
    }
    for ((row, f), mu) in problem.eq_rows.iter().zip(&problem.eq_rhs).zip(&sol.eq_duals) {
        for (k, a) in row {
            stat[*k] -= a * mu;
        }
        dual_obj += mu * f;
    }
    let stationarity = stat.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let primal_obj = problem.objective.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() + problem.objective_constant;
    let gap = (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs() + dual_obj.abs());
    let scale = problem.data_scale();
    let lim = tol * scale;
    let ok = eqv <= lim
        && lmi_violation.iter().all(|&x| x <= lim)
        && dual_psd_violation.iter().all(|&x| x <= lim)
        && complementarity.iter().all(|&x| x <= lim)
        && stationarity <= lim
        && gap <= tol;
    VerifyReport {
        equality_violation: eqv,
        lmi_violation,
        dual_psd_violation,
        stationarity,
        complementarity,
        primal_objective: primal_obj,
        dual_objective: dual_obj,
        gap,
        scale,
        ok,
    }
}
