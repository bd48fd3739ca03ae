//! The quantum switch as a resource: commute/anticommute games turned into
//! witnesses, the OCB causal game, and causality checks on correlations
//! produced by the switch.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic_solver::{self as cs, AffineExpr, Cone, SdpProblem, SolverError, SubspaceBasis};
use crate::process_space::{switch_vector, PartyLayout, ProcessError, ProcessMatrix};
use crate::tensor_ops::{
    self, c, hermitian_part, max_abs, pauli, projector, CMat, CVec, LabeledOperator, SystemLabel, TensorError,
};
use crate::witness_engine::{
    self as we, born_table, ocb_instruments, order_basis, order_complement_basis, order_label, verify_witness,
    CausalWitness, Instrument, Scenario, SdpOptions, WitnessError, SEPARABLE_BELOW, WITNESS_TOL,
};

#[derive(Debug, Error)]
pub enum SwitchError {
    #[error(transparent)]
    Witness(#[from] WitnessError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("not a 2x2 unitary (defect {0:.3e})")]
    NotUnitary(f64),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("malformed correlation table: {0}")]
    Table(String),
    #[error("incomplete instrument {0} (defect {1:.3e})")]
    Incomplete(String, f64),
    #[error("causal bound {0} does not exceed the lower bound {1}")]
    Bound(f64, f64),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, SwitchError>;

/// Correlations within this distance of the mixture polytope count as a
/// bipartite mixture.
pub const MIXTURE_TOL: f64 = SEPARABLE_BELOW;

fn check_unitary(u: &CMat) -> Result<()> {
    if u.nrows() != 2 || u.ncols() != 2 {
        return Err(SwitchError::NotUnitary(f64::INFINITY));
    }
    let d = max_abs(&(u.adjoint() * u - CMat::identity(2, 2)));
    if d > 1e-10 {
        return Err(SwitchError::NotUnitary(d));
    }
    Ok(())
}

fn plus_minus(sign: bool) -> CVec {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let s = if sign { h } else { -h };
    CVec::from_vec(vec![c(h, 0.0), c(s, 0.0)])
}

// ---------------------------------------------------------------------------
// Games.

/// G^{U_A,U_B}_± = |U_A*⟩⟩⟨⟨U_A*| ⊗ |U_B*⟩⟩⟨⟨U_B*| ⊗ |±⟩⟨±| on the reduced
/// switch factors.
pub fn chiribella_term(ua: &CMat, ub: &CMat, plus: bool) -> Result<LabeledOperator> {
    check_unitary(ua)?;
    check_unitary(ub)?;
    Ok(LabeledOperator::new(PartyLayout::switch(true).systems(), term_raw(ua, ub, plus))?)
}

fn term_raw(ua: &CMat, ub: &CMat, plus: bool) -> CMat {
    let va = tensor_ops::cj_pure(ua);
    let vb = tensor_ops::cj_pure(ub);
    tensor_ops::kron_all(&[projector(&va), projector(&vb), projector(&plus_minus(plus))])
}

#[derive(Debug, Clone)]
pub struct GameWitness {
    pub op: LabeledOperator,
    /// Maximal success probability over separable processes, once computed.
    pub p_sep: Option<f64>,
    /// Bounds on tr(G·W) over all valid processes.
    pub t0: f64,
    pub t1: f64,
    pub n_samples: Option<usize>,
    pub seed: Option<u64>,
}

impl GameWitness {
    fn new(m: CMat) -> Self {
        let mut op = LabeledOperator::new(PartyLayout::switch(true).systems(), m).expect("reduced switch side");
        op.hermitize();
        GameWitness { op, p_sep: None, t0: 0.0, t1: 1.0, n_samples: None, seed: None }
    }

    pub fn value_on(&self, w: &ProcessMatrix) -> Result<f64> {
        Ok(we::witness_expectation(&self.op, &w.op)?)
    }
}

const MC_CHUNK: usize = 256;

fn mc_chunk(seed: u64, chunk: usize, count: usize) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut acc = CMat::zeros(32, 32);
    for _ in 0..count {
        let u = tensor_ops::haar_unitary(2, &mut rng);
        let t1: f64 = rng.random::<f64>() * two_pi;
        let t2: f64 = rng.random::<f64>() * two_pi;
        let diag = |t: f64| CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(t.cos(), t.sin())]));
        let ua = &u * diag(t1) * u.adjoint();
        let ub = &u * diag(t2) * u.adjoint();
        let v = tensor_ops::haar_unitary(2, &mut rng);
        let xa = &v * pauli('X') * v.adjoint();
        let zb = &v * pauli('Z') * v.adjoint();
        acc += term_raw(&ua, &ub, true) * c(0.5, 0.0);
        acc += term_raw(&xa, &zb, false) * c(0.5, 0.0);
    }
    acc
}

/// Monte Carlo estimate of the game averaged over Haar-random commuting and
/// anticommuting pairs. Samples are drawn in fixed chunks, chunk k from
/// stream k of the seeded generator, so the result does not depend on
/// `jobs`.
pub fn chiribella_witness_mc(n_samples: usize, seed: u64, jobs: usize) -> Result<GameWitness> {
    if n_samples == 0 {
        return Err(SwitchError::Invalid("need at least one sample".into()));
    }
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let size = |k: usize| MC_CHUNK.min(n_samples - k * MC_CHUNK);
    let jobs = jobs.clamp(1, chunks);
    let mut parts: Vec<Option<CMat>> = vec![None; chunks];
    if jobs == 1 {
        for (k, slot) in parts.iter_mut().enumerate() {
            *slot = Some(mc_chunk(seed, k, size(k)));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|t| {
                    s.spawn(move || {
                        (t..chunks).step_by(jobs).map(|k| (k, mc_chunk(seed, k, size(k)))).collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (k, m) in h.join().expect("worker panicked") {
                    parts[k] = Some(m);
                }
            }
        });
    }
    let mut g = CMat::zeros(32, 32);
    for m in parts.into_iter().flatten() {
        g += m;
    }
    let mut gw = GameWitness::new(g * c(1.0 / n_samples as f64, 0.0));
    gw.n_samples = Some(n_samples);
    gw.seed = Some(seed);
    Ok(gw)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SepBound {
    pub value: f64,
    /// Bound from the dual objective.
    pub dual_value: f64,
    pub gap: f64,
}

/// max tr(G·W) over normalized processes separable with respect to the
/// orders A<B<C and B<A<C.
pub fn p_succ_sep(g: &LabeledOperator, opts: &SdpOptions) -> Result<SepBound> {
    let layout = PartyLayout::switch(true);
    let sys = layout.systems();
    let (g, _) = g.aligned_to(&sys)?;
    let gm = hermitian_part(g.data());
    let n = gm.nrows();
    let mut p = SdpProblem::new();
    let mut trace = Vec::new();
    for o in Scenario::Tripartite.orders(&layout) {
        let b = p.add_block(&format!("W[{}]", order_label(&layout, &o)), Cone::Psd, order_basis(&layout, &sys, &o));
        p.add_objective(b, &(-&gm))?;
        trace.extend(p.trace_form(b, &CMat::identity(n, n))?);
    }
    p.add_linear_eq(trace, layout.d_o() as f64);
    let sol = we::solved(cs::solve(&p, opts.tol, opts.max_iter)?)?;
    Ok(SepBound { value: -sol.primal_objective, dual_value: -sol.dual_objective, gap: sol.gap })
}

/// The witness (p_sep·1/d_O − G)/(p_sep − T₀), with its certificate, and
/// the worst-case noise it tolerates on a process reaching T₁.
pub fn game_to_witness(g: &GameWitness, opts: &SdpOptions) -> Result<(CausalWitness, f64)> {
    let p = g.p_sep.ok_or_else(|| SwitchError::Invalid("causal bound not computed".into()))?;
    if p <= g.t0 {
        return Err(SwitchError::Bound(p, g.t0));
    }
    let layout = PartyLayout::switch(true);
    let (gop, _) = g.op.aligned_to(&layout.systems())?;
    let n = gop.dim();
    let d_o = layout.d_o() as f64;
    let s = (CMat::identity(n, n) * c(p / d_o, 0.0) - gop.data()) * c(1.0 / (p - g.t0), 0.0);
    let s = LabeledOperator::new(layout.systems(), hermitian_part(&s))?;
    let v = verify_witness(&s, &layout, WITNESS_TOL.max(10.0 * opts.tol), opts)?;
    let wit =
        v.witness.ok_or_else(|| SwitchError::Invalid(format!("game witness rejected (margin {:.3e})", v.margin)))?;
    Ok((wit, (g.t1 - p) / (p - g.t0)))
}

// ---------------------------------------------------------------------------
// Finite unitary set.

pub fn finite_unitaries() -> Vec<(String, CMat)> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (x, y, z) = (pauli('X'), pauli('Y'), pauli('Z'));
    let comb = |a: &CMat, b: &CMat, s: f64| (a + b * c(s, 0.0)) * c(h, 0.0);
    vec![
        ("1".into(), CMat::identity(2, 2)),
        ("X".into(), x.clone()),
        ("Y".into(), y.clone()),
        ("Z".into(), z.clone()),
        ("(X+Y)/√2".into(), comb(&x, &y, 1.0)),
        ("(X-Y)/√2".into(), comb(&x, &y, -1.0)),
        ("(X+Z)/√2".into(), comb(&x, &z, 1.0)),
        ("(X-Z)/√2".into(), comb(&x, &z, -1.0)),
        ("(Y+Z)/√2".into(), comb(&y, &z, 1.0)),
        ("(Y-Z)/√2".into(), comb(&y, &z, -1.0)),
    ]
}

pub type PairList = Vec<(usize, usize)>;

/// Ordered index pairs (i, j) of the finite set that commute, and those that
/// anticommute, found by scanning all pairs.
pub fn admissible_pairs() -> (PairList, PairList) {
    let us = finite_unitaries();
    let mut comm = Vec::new();
    let mut anti = Vec::new();
    for (i, (_, a)) in us.iter().enumerate() {
        for (j, (_, b)) in us.iter().enumerate() {
            let ab = a * b;
            let ba = b * a;
            if max_abs(&(&ab - &ba)) <= 1e-10 {
                comm.push((i, j));
            }
            if max_abs(&(&ab + &ba)) <= 1e-10 {
                anti.push((i, j));
            }
        }
    }
    (comm, anti)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub commuting: BTreeMap<(usize, usize), f64>,
    pub anticommuting: BTreeMap<(usize, usize), f64>,
}

impl WeightTable {
    pub fn uniform() -> Self {
        let (comm, anti) = admissible_pairs();
        let q = 1.0 / (comm.len() + anti.len()) as f64;
        WeightTable {
            commuting: comm.into_iter().map(|k| (k, q)).collect(),
            anticommuting: anti.into_iter().map(|k| (k, q)).collect(),
        }
    }

    pub fn total(&self) -> f64 {
        self.commuting.values().chain(self.anticommuting.values()).sum()
    }

    /// Weight sitting on pairs of the wrong kind.
    pub fn forbidden_mass(&self) -> f64 {
        let (comm, anti) = admissible_pairs();
        let off = |m: &BTreeMap<(usize, usize), f64>, ok: &[(usize, usize)]| -> f64 {
            m.iter().filter(|(k, _)| !ok.contains(k)).map(|(_, v)| v.abs()).sum()
        };
        off(&self.commuting, &comm) + off(&self.anticommuting, &anti)
    }
}

pub fn finite_witness(weights: &WeightTable) -> Result<GameWitness> {
    if weights.commuting.values().chain(weights.anticommuting.values()).any(|&q| q < -1e-12 || !q.is_finite()) {
        return Err(SwitchError::Weights("negative weight".into()));
    }
    if (weights.total() - 1.0).abs() > 1e-9 {
        return Err(SwitchError::Weights(format!("weights sum to {}", weights.total())));
    }
    if weights.forbidden_mass() > 1e-12 {
        return Err(SwitchError::Weights("weight on a pair that neither commutes nor anticommutes as required".into()));
    }
    let us = finite_unitaries();
    let mut g = CMat::zeros(32, 32);
    for (plus, table) in [(true, &weights.commuting), (false, &weights.anticommuting)] {
        for (&(i, j), &q) in table {
            if q != 0.0 {
                g += term_raw(&us[i].1, &us[j].1, plus) * c(q, 0.0);
            }
        }
    }
    Ok(GameWitness::new(g))
}

/// Weights on the finite set minimizing the causal bound p, subject to
/// p·1/d_O − G lying in the tripartite witness cone.
pub fn optimize_finite_weights(opts: &SdpOptions) -> Result<(WeightTable, SepBound)> {
    let layout = PartyLayout::switch(true);
    let sys = layout.systems();
    let n = tensor_ops::total_dim(&sys);
    let d_o = layout.d_o() as f64;
    let us = finite_unitaries();
    let (comm, anti) = admissible_pairs();
    let slots: Vec<(bool, (usize, usize))> =
        comm.iter().map(|&k| (true, k)).chain(anti.iter().map(|&k| (false, k))).collect();

    let mut p = SdpProblem::new();
    let pb = p.add_block("p", Cone::Free, SubspaceBasis::scalar());
    let qb: Vec<usize> = slots
        .iter()
        .map(|(s, (i, j))| p.add_block(&format!("q[{s},{i},{j}]"), Cone::Psd, SubspaceBasis::scalar()))
        .collect();
    let games: Vec<CMat> = slots.iter().map(|&(plus, (i, j))| term_raw(&us[i].1, &us[j].1, plus)).collect();
    for o in Scenario::Tripartite.orders(&layout) {
        let xb = p.add_block(
            &format!("X[{}]", order_label(&layout, &o)),
            Cone::Free,
            order_complement_basis(&layout, &sys, &o),
        );
        let mut e = AffineExpr::zero(n).add_scalar_identity(&p, pb, 1.0 / d_o)?.add_block(&p, xb, 1.0)?;
        for (b, g) in qb.iter().zip(&games) {
            e = e.add_mapped(&p, *b, |m| g * (-m[(0, 0)]))?;
        }
        p.add_psd(e);
    }
    let mut sum = Vec::new();
    for &b in &qb {
        sum.push((p.block(b)?.offset, 1.0));
    }
    p.add_linear_eq(sum, 1.0);
    p.add_objective_var(p.block(pb)?.offset, 1.0);
    let sol = we::solved(cs::solve(&p, opts.tol, opts.max_iter)?)?;

    let raw: Vec<f64> = qb.iter().map(|&b| sol.blocks[b][(0, 0)].re.max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w = WeightTable::default();
    for (&(plus, k), q) in slots.iter().zip(&raw) {
        let table = if plus { &mut w.commuting } else { &mut w.anticommuting };
        table.insert(k, q / total);
    }
    let bound = SepBound { value: sol.primal_objective, dual_value: sol.dual_objective, gap: sol.gap };
    Ok((w, bound))
}

// ---------------------------------------------------------------------------
// OCB game.

/// Success probability of the OCB game with uniform inputs:
/// ½[P(a = y | y' = 0) + P(b = x | y' = 1)].
pub fn ocb_game_value(w: &ProcessMatrix) -> Result<f64> {
    let l = &w.layout;
    let qubit = |s: &[SystemLabel]| s.len() == 1 && s[0].dim == 2;
    if l.parties.len() != 2 || !l.parties.iter().all(|p| qubit(&p.inputs) && qubit(&p.outputs)) {
        return Err(SwitchError::Invalid("the OCB game needs two parties with qubit input and output".into()));
    }
    let (alice, bob) = ocb_instruments(l);
    let t = born_table(w, &alice, &bob)?;
    let mut p = 0.0;
    for (&(x, yy, a, b), v) in &t.cells {
        let (y, yp) = (yy % 2, yy / 2);
        if (yp == 0 && a == y) || (yp == 1 && b == x) {
            p += v / 8.0;
        }
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Correlations.

/// V(U_A, U_B)(control ⊗ ψ) = |0⟩⊗U_B U_A ψ ⊗ … + |1⟩⊗U_A U_B ψ, on
/// [control, target].
pub fn apply_switch(ua: &CMat, ub: &CMat, psi: &CVec, control: &CVec) -> Result<CVec> {
    check_unitary(ua)?;
    check_unitary(ub)?;
    for v in [psi, control] {
        if v.len() != 2 || (v.norm_squared() - 1.0).abs() > 1e-10 {
            return Err(SwitchError::Invalid("states must be normalized qubit vectors".into()));
        }
    }
    let ab = ub * ua * psi;
    let ba = ua * ub * psi;
    let mut out = CVec::zeros(4);
    for t in 0..2 {
        out[t] = control[0] * ab[t];
        out[2 + t] = control[1] * ba[t];
    }
    Ok(out)
}

/// P(a, b, c | x, y, z), flattened with c fastest and x slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    pub inputs: [usize; 3],
    pub outputs: [usize; 3],
    pub probs: Vec<f64>,
}

impl CorrelationTable {
    pub fn zeros(inputs: [usize; 3], outputs: [usize; 3]) -> Self {
        let n = inputs.iter().chain(&outputs).product();
        CorrelationTable { inputs, outputs, probs: vec![0.0; n] }
    }

    pub fn index(&self, x: [usize; 3], a: [usize; 3]) -> usize {
        let [_, ny, nz] = self.inputs;
        let [na, nb, nc] = self.outputs;
        let s = (x[0] * ny + x[1]) * nz + x[2];
        ((s * na + a[0]) * nb + a[1]) * nc + a[2]
    }

    pub fn get(&self, x: [usize; 3], a: [usize; 3]) -> f64 {
        self.probs[self.index(x, a)]
    }

    fn settings(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, nz] = self.inputs;
        (0..nx * ny * nz).map(move |k| [k / (ny * nz), (k / nz) % ny, k % nz])
    }

    fn outcomes(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [na, nb, nc] = self.outputs;
        (0..na * nb * nc).map(move |k| [k / (nb * nc), (k / nc) % nb, k % nc])
    }

    /// Worst negativity or normalization defect over all settings.
    pub fn defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for x in self.settings() {
            let mut s = 0.0;
            for a in self.outcomes() {
                let p = self.get(x, a);
                worst = worst.max(-p);
                s += p;
            }
            worst = worst.max((s - 1.0).abs());
        }
        worst
    }

    /// P(a, b | x, y) at the given z, flattened as ((x·ny + y)·na + a)·nb + b.
    pub fn marginal_ab(&self, z: usize) -> Vec<f64> {
        let [nx, ny, _] = self.inputs;
        let [na, nb, nc] = self.outputs;
        let mut out = vec![0.0; nx * ny * na * nb];
        for x in 0..nx {
            for y in 0..ny {
                for a in 0..na {
                    for b in 0..nb {
                        out[((x * ny + y) * na + a) * nb + b] = (0..nc).map(|cc| self.get([x, y, z], [a, b, cc])).sum();
                    }
                }
            }
        }
        out
    }

    /// Largest change of the A, B marginal across z.
    pub fn z_deviation(&self) -> f64 {
        let m0 = self.marginal_ab(0);
        (1..self.inputs[2])
            .map(|z| self.marginal_ab(z).iter().zip(&m0).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> CorrelationJson {
        let mut table = BTreeMap::new();
        for x in self.settings() {
            let row: BTreeMap<String, f64> =
                self.outcomes().map(|a| (format!("{},{},{}", a[0], a[1], a[2]), self.get(x, a))).collect();
            table.insert(format!("{},{},{}", x[0], x[1], x[2]), row);
        }
        let named = |n: [usize; 3], k: [&str; 3]| k.iter().zip(n).map(|(k, v)| (k.to_string(), v)).collect();
        CorrelationJson {
            inputs: named(self.inputs, ["x", "y", "z"]),
            outputs: named(self.outputs, ["a", "b", "c"]),
            table,
        }
    }

    pub fn from_json(j: &CorrelationJson) -> Result<Self> {
        let size = |m: &BTreeMap<String, usize>, k: [&str; 3]| -> Result<[usize; 3]> {
            let mut out = [0; 3];
            for (o, key) in out.iter_mut().zip(k) {
                *o = *m.get(key).ok_or_else(|| SwitchError::Table(format!("missing size {key}")))?;
                if *o == 0 {
                    return Err(SwitchError::Table(format!("empty alphabet {key}")));
                }
            }
            Ok(out)
        };
        let mut t = CorrelationTable::zeros(size(&j.inputs, ["x", "y", "z"])?, size(&j.outputs, ["a", "b", "c"])?);
        let parse = |s: &str, lim: [usize; 3]| -> Result<[usize; 3]> {
            let v: Vec<usize> = s
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| SwitchError::Table(format!("bad key {s:?}")))?;
            if v.len() != 3 || v.iter().zip(lim).any(|(a, l)| *a >= l) {
                return Err(SwitchError::Table(format!("key {s:?} out of range")));
            }
            Ok([v[0], v[1], v[2]])
        };
        for (xs, row) in &j.table {
            let x = parse(xs, t.inputs)?;
            for (as_, p) in row {
                let a = parse(as_, t.outputs)?;
                let i = t.index(x, a);
                t.probs[i] = *p;
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationJson {
    pub inputs: BTreeMap<String, usize>,
    pub outputs: BTreeMap<String, usize>,
    pub table: BTreeMap<String, BTreeMap<String, f64>>,
}

fn check_instruments(set: &[Instrument]) -> Result<()> {
    if set.is_empty() {
        return Err(SwitchError::Invalid("empty instrument list".into()));
    }
    for i in set {
        let d = i.defect()?;
        if d > 1e-10 {
            return Err(SwitchError::Incomplete(i.label.clone(), d));
        }
        if i.systems() != set[0].systems() || i.elements.len() != set[0].elements.len() {
            return Err(SwitchError::Invalid("instruments of one party must share factors and outcome count".into()));
        }
    }
    Ok(())
}

/// Born-rule correlations of the full switch (target and control delivered
/// to C, who has no output) for the given instruments.
pub fn switch_correlations(
    alice: &[Instrument],
    bob: &[Instrument],
    charlie: &[Instrument],
    psi: &CVec,
) -> Result<CorrelationTable> {
    for set in [alice, bob, charlie] {
        check_instruments(set)?;
    }
    if !charlie[0].outputs.is_empty() {
        return Err(SwitchError::Invalid("the final party has no output".into()));
    }
    let order: Vec<SystemLabel> = [alice, bob, charlie].iter().flat_map(|s| s[0].systems()).collect();
    let names: Vec<&str> = order.iter().map(|s| s.name.as_str()).collect();
    let w = tensor_ops::permute_vector(&switch_vector(psi)?, &names)?;
    let mut t = CorrelationTable::zeros(
        [alice.len(), bob.len(), charlie.len()],
        [alice[0].elements.len(), bob[0].elements.len(), charlie[0].elements.len()],
    );
    for (x, ix) in alice.iter().enumerate() {
        for (y, iy) in bob.iter().enumerate() {
            for (z, iz) in charlie.iter().enumerate() {
                for (a, ma) in ix.elements.iter().enumerate() {
                    for (b, mb) in iy.elements.iter().enumerate() {
                        let mab = tensor_ops::kron_all(&[ma.clone(), mb.clone()]);
                        for (cc, mc) in iz.elements.iter().enumerate() {
                            let m = mab.kronecker(mc);
                            let v = w.data.dotc(&(&m * &w.data)).re;
                            let i = t.index([x, y, z], [a, b, cc]);
                            t.probs[i] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(t)
}

/// Bipartite correlations of the OCB instruments on W, with a trivial
/// third party.
pub fn ocb_correlations(w: &ProcessMatrix) -> Result<CorrelationTable> {
    let (alice, bob) = ocb_instruments(&w.layout);
    let born = born_table(w, &alice, &bob)?;
    let mut t = CorrelationTable::zeros([2, 4, 1], [2, 2, 1]);
    for (&(x, y, a, b), &p) in &born.cells {
        let i = t.index([x, y, 0], [a, b, 0]);
        t.probs[i] = p;
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Theorem4Verdict {
    pub z_independent: bool,
    pub z_deviation: f64,
    pub bipartite_mixture: bool,
    /// Optimal slack of the mixture LP; nonpositive iff the marginal is a
    /// mixture of one-way signalling correlations.
    pub mixture_slack: f64,
    pub causal: bool,
}

/// Sufficient test for causality of correlations with a final party C:
/// the A, B marginal must not depend on z, and must be a mixture of A≺B and
/// B≺A correlations.
pub fn check_causal_theorem4(t: &CorrelationTable, tol: f64, opts: &SdpOptions) -> Result<Theorem4Verdict> {
    if t.probs.len() != t.inputs.iter().chain(&t.outputs).product::<usize>() {
        return Err(SwitchError::Table("size does not match alphabets".into()));
    }
    let d = t.defect();
    if d > 1e-10 {
        return Err(SwitchError::Table(format!("not a probability table (defect {d:.3e})")));
    }
    let z_deviation = t.z_deviation();
    let dims = [t.inputs[0], t.inputs[1], t.outputs[0], t.outputs[1]];
    let slack = mixture_slack(&t.marginal_ab(0), dims, opts)?;
    let z_independent = z_deviation <= tol;
    let bipartite_mixture = slack <= MIXTURE_TOL;
    Ok(Theorem4Verdict {
        z_independent,
        z_deviation,
        bipartite_mixture,
        mixture_slack: slack,
        causal: z_independent && bipartite_mixture,
    })
}

fn cell(dims: [usize; 4], x: usize, y: usize, a: usize, b: usize) -> usize {
    ((x * dims[1] + y) * dims[2] + a) * dims[3] + b
}

/// min s such that P = P₁ + P₂ with P₁ + s ≥ 0, P₂ + s ≥ 0, P₁ not signalling
/// from B to A, P₂ not signalling from A to B, and P₁ of constant weight.
/// `p` is indexed as in `CorrelationTable::marginal_ab`; dims = [nx, ny, na, nb].
pub fn mixture_slack(p: &[f64], dims: [usize; 4], opts: &SdpOptions) -> Result<f64> {
    let [nx, ny, na, nb] = dims;
    if p.len() != nx * ny * na * nb {
        return Err(SwitchError::Table("marginal size mismatch".into()));
    }
    let mut sdp = SdpProblem::new();
    let s = sdp.add_block("s", Cone::Free, SubspaceBasis::scalar());
    let v: Vec<usize> =
        (0..p.len()).map(|i| sdp.add_block(&format!("p1[{i}]"), Cone::Free, SubspaceBasis::scalar())).collect();
    let one = |x: f64| CMat::from_element(1, 1, c(x, 0.0));
    for (i, &b) in v.iter().enumerate() {
        let e1 = AffineExpr::zero(1).add_block(&sdp, b, 1.0)?.add_block(&sdp, s, 1.0)?;
        sdp.add_psd(e1);
        let e2 = AffineExpr::zero(1).add_constant(&one(p[i]))?.add_block(&sdp, b, -1.0)?.add_block(&sdp, s, 1.0)?;
        sdp.add_psd(e2);
    }
    let off: Vec<usize> = v.iter().map(|&b| sdp.block(b).map(|bl| bl.offset)).collect::<std::result::Result<_, _>>()?;
    // B does not signal to A in P₁.
    for x in 0..nx {
        for a in 0..na {
            for y in 1..ny {
                let mut row = Vec::new();
                for b in 0..nb {
                    row.push((off[cell(dims, x, y, a, b)], 1.0));
                    row.push((off[cell(dims, x, 0, a, b)], -1.0));
                }
                sdp.add_linear_eq(row, 0.0);
            }
        }
    }
    // Constant weight of P₁.
    for x in 0..nx {
        for y in 0..ny {
            if x + y == 0 {
                continue;
            }
            let mut row = Vec::new();
            for a in 0..na {
                for b in 0..nb {
                    row.push((off[cell(dims, x, y, a, b)], 1.0));
                    row.push((off[cell(dims, 0, 0, a, b)], -1.0));
                }
            }
            sdp.add_linear_eq(row, 0.0);
        }
    }
    // A does not signal to B in P₂ = P − P₁.
    for y in 0..ny {
        for b in 0..nb {
            for x in 1..nx {
                let mut row = Vec::new();
                let mut rhs = 0.0;
                for a in 0..na {
                    row.push((off[cell(dims, x, y, a, b)], 1.0));
                    row.push((off[cell(dims, 0, y, a, b)], -1.0));
                    rhs += p[cell(dims, x, y, a, b)] - p[cell(dims, 0, y, a, b)];
                }
                sdp.add_linear_eq(row, rhs);
            }
        }
    }
    sdp.add_objective_var(sdp.block(s)?.offset, 1.0);
    let sol = cs::solve(&sdp, opts.tol, opts.max_iter)?;
    match sol.status {
        cs::Status::Optimal => Ok(sol.primal_objective),
        cs::Status::PrimalInfeasible => Ok(f64::INFINITY),
        st => Err(WitnessError::NotSolved(st).into()),
    }
}

/// Deterministic one-way signalling strategies: a = f(x), b = g(x, y) for
/// A≺B and b = h(y), a = k(x, y) for B≺A, without duplicates.
pub fn one_way_vertices(dims: [usize; 4]) -> Vec<Vec<f64>> {
    let [nx, ny, na, nb] = dims;
    let funcs = |domain: usize, range: usize| -> Vec<Vec<usize>> {
        let count = range.pow(domain as u32);
        (0..count)
            .map(|mut k| {
                (0..domain)
                    .map(|_| {
                        let d = k % range;
                        k /= range;
                        d
                    })
                    .collect()
            })
            .collect()
    };
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut push = |pa: &dyn Fn(usize, usize) -> usize, pb: &dyn Fn(usize, usize) -> usize| {
        let mut v = vec![0.0; nx * ny * na * nb];
        for x in 0..nx {
            for y in 0..ny {
                v[cell(dims, x, y, pa(x, y), pb(x, y))] = 1.0;
            }
        }
        if !out.contains(&v) {
            out.push(v);
        }
    };
    for f in funcs(nx, na) {
        for g in funcs(nx * ny, nb) {
            push(&|x, _| f[x], &|x, y| g[x * ny + y]);
        }
    }
    for h in funcs(ny, nb) {
        for k in funcs(nx * ny, na) {
            push(&|x, y| k[x * ny + y], &|_, y| h[y]);
        }
    }
    out
}

/// min max |P − Σ w_v V_v| over convex weights on the one-way signalling
/// vertices. Zero iff P is a bipartite mixture.
pub fn vertex_distance(p: &[f64], dims: [usize; 4], opts: &SdpOptions) -> Result<f64> {
    let verts = one_way_vertices(dims);
    if verts.len() > 4096 {
        return Err(SwitchError::Invalid("alphabets too large for vertex enumeration".into()));
    }
    let mut sdp = SdpProblem::new();
    let s = sdp.add_block("s", Cone::Free, SubspaceBasis::scalar());
    let w: Vec<usize> =
        (0..verts.len()).map(|k| sdp.add_block(&format!("w[{k}]"), Cone::Psd, SubspaceBasis::scalar())).collect();
    let one = |x: f64| CMat::from_element(1, 1, c(x, 0.0));
    for i in 0..p.len() {
        for sign in [1.0, -1.0] {
            let mut e = AffineExpr::zero(1).add_constant(&one(sign * p[i]))?.add_block(&sdp, s, 1.0)?;
            for (k, vert) in verts.iter().enumerate() {
                if vert[i] != 0.0 {
                    e = e.add_block(&sdp, w[k], -sign * vert[i])?;
                }
            }
            sdp.add_psd(e);
        }
    }
    let row: Vec<(usize, f64)> =
        w.iter().map(|&b| sdp.block(b).map(|bl| (bl.offset, 1.0))).collect::<std::result::Result<_, _>>()?;
    sdp.add_linear_eq(row, 1.0);
    sdp.add_objective_var(sdp.block(s)?.offset, 1.0);
    let sol = we::solved(cs::solve(&sdp, opts.tol, opts.max_iter)?)?;
    Ok(sol.primal_objective)
}

/// Random two-setting, two-outcome instruments for A, B and the final
/// party of the full switch.
pub fn random_switch_instruments<R: Rng + ?Sized>(rng: &mut R) -> (Vec<Instrument>, Vec<Instrument>, Vec<Instrument>) {
    let layout = PartyLayout::switch(false);
    let make = |p: &crate::process_space::Party, rng: &mut R| -> Vec<Instrument> {
        (0..2)
            .map(|k| Instrument::random(&format!("{}{k}", p.name), p.inputs.clone(), p.outputs.clone(), 2, rng))
            .collect()
    };
    let a = make(&layout.parties[0], rng);
    let b = make(&layout.parties[1], rng);
    let cc = make(&layout.parties[2], rng);
    (a, b, cc)
}
