//! Process matrices: party layouts, the validity projector L_V, causal-order
//! projectors, validity checks and the named processes (OCB, switch, noise).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor_ops::{
    self, c, cj_apply_raw, cj_from_map, dims_of, hermitian_part, max_abs, min_eigenvalue, pauli_string, CMat, CVec,
    IndexSplit, LabeledOperator, OperatorJson, PureVector, SystemLabel, TensorError, C64,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProcessError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("invalid process: {0}")]
    Invalid(String),
    #[error("noise weight must be nonnegative, got {0}")]
    NegativeNoise(f64),
    #[error(
        "λ = {0} is below √2−1: the ordered components would not be positive semidefinite, \
         so the explicit decomposition does not exist"
    )]
    BelowBoundary(f64),
    #[error("input state is not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("map is not CPTP: {0}")]
    NotCptp(String),
    #[error("unknown process name `{0}`")]
    UnknownName(String),
}

pub type Result<T> = std::result::Result<T, ProcessError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Party {
    pub name: String,
    pub inputs: Vec<SystemLabel>,
    /// Empty for a trivial (one-dimensional) output.
    pub outputs: Vec<SystemLabel>,
}

impl Party {
    pub fn new(name: &str, inputs: Vec<SystemLabel>, outputs: Vec<SystemLabel>) -> Self {
        Party { name: name.to_string(), inputs, outputs }
    }

    pub fn qubits(name: &str) -> Self {
        Party::new(name, vec![SystemLabel::new(format!("{name}_I"), 2)], vec![SystemLabel::new(format!("{name}_O"), 2)])
    }

    pub fn d_in(&self) -> usize {
        self.inputs.iter().map(|s| s.dim).product()
    }

    pub fn d_out(&self) -> usize {
        self.outputs.iter().map(|s| s.dim).product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartyLayout {
    pub parties: Vec<Party>,
}

impl PartyLayout {
    pub fn new(parties: Vec<Party>) -> Self {
        PartyLayout { parties }
    }

    /// A and B with qubit inputs and outputs.
    pub fn bipartite_qubits() -> Self {
        PartyLayout::new(vec![Party::qubits("A"), Party::qubits("B")])
    }

    /// Switch layout; C has no output. With `reduced`, C's input is the
    /// control qubit only.
    pub fn switch(reduced: bool) -> Self {
        let mut c_in = vec![SystemLabel::new("C_I^t", 2), SystemLabel::new("C_I^c", 2)];
        if reduced {
            c_in.remove(0);
        }
        PartyLayout::new(vec![Party::qubits("A"), Party::qubits("B"), Party::new("C", c_in, vec![])])
    }

    pub fn d_o(&self) -> usize {
        self.parties.iter().map(Party::d_out).product()
    }

    pub fn d_i(&self) -> usize {
        self.parties.iter().map(Party::d_in).product()
    }

    /// Canonical factor order: party by party, inputs then outputs.
    pub fn systems(&self) -> Vec<SystemLabel> {
        self.parties.iter().flat_map(|p| p.inputs.iter().chain(&p.outputs).cloned()).collect()
    }

    pub fn party(&self, name: &str) -> Option<usize> {
        self.parties.iter().position(|p| p.name == name)
    }

    /// Checks that `systems` holds exactly the layout's factors.
    pub fn check(&self, systems: &[SystemLabel]) -> Result<()> {
        let mine = self.systems();
        if mine.len() != systems.len() {
            return Err(ProcessError::Layout(format!(
                "layout has {} factors, operator has {}",
                mine.len(),
                systems.len()
            )));
        }
        for s in &mine {
            match systems.iter().find(|t| t.name == s.name) {
                Some(t) if t.dim == s.dim => {}
                Some(t) => {
                    return Err(ProcessError::Layout(format!(
                        "factor {} has dim {} in operator, {} in layout",
                        s.name, t.dim, s.dim
                    )))
                }
                None => return Err(ProcessError::Layout(format!("factor {} missing from operator", s.name))),
            }
        }
        Ok(())
    }

    fn mask(&self, systems: &[SystemLabel], labels: &[&SystemLabel]) -> u64 {
        labels.iter().fold(0u64, |m, l| {
            let i = systems.iter().position(|s| s.name == l.name).expect("layout checked");
            m | (1 << i)
        })
    }

    fn input_mask(&self, systems: &[SystemLabel], p: usize) -> u64 {
        self.mask(systems, &self.parties[p].inputs.iter().collect::<Vec<_>>())
    }

    fn output_mask(&self, systems: &[SystemLabel], p: usize) -> u64 {
        self.mask(systems, &self.parties[p].outputs.iter().collect::<Vec<_>>())
    }
}

// ---------------------------------------------------------------------------
// Polynomials in trace-and-replace maps. All such maps commute and compose
// as _X ∘ _Y = _{X∪Y}, so a polynomial is a map from factor masks to
// coefficients.

#[derive(Debug, Clone, PartialEq)]
pub struct TrPoly {
    pub terms: BTreeMap<u64, f64>,
}

impl TrPoly {
    pub fn identity() -> Self {
        TrPoly::single(0, 1.0)
    }

    pub fn single(mask: u64, coeff: f64) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(mask, coeff);
        TrPoly { terms }
    }

    pub fn add(&self, other: &TrPoly) -> TrPoly {
        let mut terms = self.terms.clone();
        for (&m, &v) in &other.terms {
            *terms.entry(m).or_insert(0.0) += v;
        }
        terms.retain(|_, v| *v != 0.0);
        TrPoly { terms }
    }

    pub fn scale(&self, s: f64) -> TrPoly {
        TrPoly { terms: self.terms.iter().map(|(&m, &v)| (m, v * s)).collect() }
    }

    pub fn compose(&self, other: &TrPoly) -> TrPoly {
        let mut terms = BTreeMap::new();
        for (&m1, &v1) in &self.terms {
            for (&m2, &v2) in &other.terms {
                *terms.entry(m1 | m2).or_insert(0.0) += v1 * v2;
            }
        }
        terms.retain(|_, v| *v != 0.0);
        TrPoly { terms }
    }

    pub fn apply_raw(&self, systems: &[SystemLabel], m: &CMat) -> CMat {
        let dims = dims_of(systems);
        let mut out = CMat::zeros(m.nrows(), m.ncols());
        for (&mask, &coeff) in &self.terms {
            let sel: Vec<bool> = (0..dims.len()).map(|i| mask & (1 << i) != 0).collect();
            let split = IndexSplit::new(&dims, &sel);
            out += tensor_ops::trace_replace_raw(m, &split) * c(coeff, 0.0);
        }
        out
    }

    pub fn apply(&self, w: &LabeledOperator) -> LabeledOperator {
        let mut out = w.with_data(self.apply_raw(w.systems(), w.data())).expect("same factors");
        if w.is_hermitian() {
            out.hermitize();
        }
        out
    }
}

/// L_V = 1 − ∏ᵢ(1 − A^i_O + A^i_I A^i_O) + ∏ᵢ A^i_I A^i_O.
pub fn lv_poly(layout: &PartyLayout, systems: &[SystemLabel]) -> TrPoly {
    let mut prod = TrPoly::identity();
    let mut all = 0u64;
    for p in 0..layout.parties.len() {
        let (mi, mo) = (layout.input_mask(systems, p), layout.output_mask(systems, p));
        all |= mi | mo;
        let factor = TrPoly::identity().add(&TrPoly::single(mo, -1.0)).add(&TrPoly::single(mi | mo, 1.0));
        prod = prod.compose(&factor);
    }
    TrPoly::identity().add(&prod.scale(-1.0)).add(&TrPoly::single(all, 1.0))
}

/// Projector onto processes compatible with the order `order[0] ≺ order[1] ≺ …`.
/// Party k contributes W − _{R}W + _{O_k R}W with R the factors of all later parties.
pub fn order_poly(layout: &PartyLayout, systems: &[SystemLabel], order: &[usize]) -> TrPoly {
    let mut out = TrPoly::identity();
    for (pos, &k) in order.iter().enumerate() {
        let rest = order[pos + 1..]
            .iter()
            .fold(0u64, |m, &j| m | layout.input_mask(systems, j) | layout.output_mask(systems, j));
        let ok = layout.output_mask(systems, k);
        let pk = TrPoly::identity().add(&TrPoly::single(rest, -1.0)).add(&TrPoly::single(ok | rest, 1.0));
        out = out.compose(&pk);
    }
    out
}

fn check_order(layout: &PartyLayout, order: &[usize]) -> Result<()> {
    let mut seen = vec![false; layout.parties.len()];
    if order.len() != seen.len() {
        return Err(ProcessError::Layout("order must list every party once".into()));
    }
    for &k in order {
        if k >= seen.len() || seen[k] {
            return Err(ProcessError::Layout("order is not a permutation of the parties".into()));
        }
        seen[k] = true;
    }
    Ok(())
}

/// Resolves party names to an order of indices.
pub fn order_by_names(layout: &PartyLayout, names: &[&str]) -> Result<Vec<usize>> {
    let order: Vec<usize> = names
        .iter()
        .map(|n| layout.party(n).ok_or_else(|| ProcessError::Layout(format!("unknown party {n}"))))
        .collect::<Result<_>>()?;
    check_order(layout, &order)?;
    Ok(order)
}

/// _{X_O} for the outputs X_O of `party` (the identity for a trivial output).
pub fn output_poly(layout: &PartyLayout, systems: &[SystemLabel], party: usize) -> TrPoly {
    TrPoly::single(layout.output_mask(systems, party), 1.0)
}

pub fn lv_project(w: &LabeledOperator, layout: &PartyLayout) -> Result<LabeledOperator> {
    layout.check(w.systems())?;
    Ok(lv_poly(layout, w.systems()).apply(w))
}

pub fn causal_order_project(w: &LabeledOperator, order: &[usize], layout: &PartyLayout) -> Result<LabeledOperator> {
    layout.check(w.systems())?;
    check_order(layout, order)?;
    Ok(order_poly(layout, w.systems(), order).apply(w))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessMatrix {
    pub op: LabeledOperator,
    pub layout: PartyLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub min_eigenvalue: f64,
    pub psd: bool,
    pub trace: f64,
    pub trace_ok: bool,
    pub subspace_residual: f64,
    pub subspace: bool,
    pub verdict: bool,
}

pub const VALIDITY_TOL: f64 = 1e-9;

impl ProcessMatrix {
    /// Pairs an operator with a layout; validity is not checked here.
    pub fn new(op: LabeledOperator, layout: PartyLayout) -> Result<Self> {
        layout.check(op.systems())?;
        Ok(ProcessMatrix { op, layout })
    }

    /// Like `new`, but rejects operators that fail `is_valid_process`.
    pub fn new_valid(op: LabeledOperator, layout: PartyLayout, tol: f64) -> Result<Self> {
        let p = Self::new(op, layout)?;
        let r = is_valid_process(&p.op, &p.layout, tol)?;
        if !r.verdict {
            return Err(ProcessError::Invalid(describe_failure(&r)));
        }
        Ok(p)
    }

    pub fn d_o(&self) -> usize {
        self.layout.d_o()
    }

    pub fn systems(&self) -> &[SystemLabel] {
        self.op.systems()
    }

    pub fn matrix(&self) -> &CMat {
        self.op.data()
    }

    pub fn is_bipartite(&self) -> bool {
        self.layout.parties.len() == 2
    }
}

fn describe_failure(r: &ValidityReport) -> String {
    let mut parts = Vec::new();
    if !r.psd {
        parts.push(format!("min eigenvalue {:.3e}", r.min_eigenvalue));
    }
    if !r.trace_ok {
        parts.push(format!("trace {}", r.trace));
    }
    if !r.subspace {
        parts.push(format!("L_V residual {:.3e}", r.subspace_residual));
    }
    parts.join(", ")
}

pub fn is_valid_process(w: &LabeledOperator, layout: &PartyLayout, tol: f64) -> Result<ValidityReport> {
    layout.check(w.systems())?;
    let m = hermitian_part(w.data());
    let min_eig = min_eigenvalue(&m);
    let trace = m.trace().re;
    let d_o = layout.d_o() as f64;
    let proj = lv_poly(layout, w.systems()).apply_raw(w.systems(), w.data());
    let residual = max_abs(&(w.data() - proj));
    let psd = min_eig >= -tol;
    let trace_ok = (trace - d_o).abs() <= tol * d_o;
    let subspace = residual <= tol;
    Ok(ValidityReport {
        min_eigenvalue: min_eig,
        psd,
        trace,
        trace_ok,
        subspace_residual: residual,
        subspace,
        verdict: psd && trace_ok && subspace,
    })
}

pub fn is_causally_ordered(w: &LabeledOperator, order: &[usize], layout: &PartyLayout, tol: f64) -> Result<bool> {
    let r = is_valid_process(w, layout, tol)?;
    if !r.verdict {
        return Err(ProcessError::Invalid(describe_failure(&r)));
    }
    let p = causal_order_project(w, order, layout)?;
    Ok(max_abs(&(w.data() - p.data())) <= tol)
}

// ---------------------------------------------------------------------------
// Named processes.

/// 1/d_I on every factor of the layout.
pub fn white_noise(layout: &PartyLayout) -> ProcessMatrix {
    let systems = layout.systems();
    let n = tensor_ops::total_dim(&systems);
    let data = CMat::identity(n, n) * c(1.0 / layout.d_i() as f64, 0.0);
    ProcessMatrix::new(LabeledOperator::new(systems, data).expect("layout factors"), layout.clone())
        .expect("layout factors")
}

fn ocb_terms() -> (CMat, CMat) {
    (pauli_string("1ZZ1"), pauli_string("Z1XZ"))
}

fn bipartite(data: CMat) -> ProcessMatrix {
    let layout = PartyLayout::bipartite_qubits();
    let op = LabeledOperator::new(layout.systems(), data).expect("16x16");
    ProcessMatrix::new(op, layout).expect("layout factors")
}

/// ¼[1 + (1ZZ1 + Z1XZ)/√2] on [A_I, A_O, B_I, B_O].
pub fn w_ocb() -> ProcessMatrix {
    let (t1, t2) = ocb_terms();
    let data = (CMat::identity(16, 16) + (t1 + t2) * c(std::f64::consts::FRAC_1_SQRT_2, 0.0)) * c(0.25, 0.0);
    bipartite(data)
}

/// (W_OCB + λ·1°)/(1+λ).
pub fn w_ocb_noisy(lambda: f64) -> Result<ProcessMatrix> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(ProcessError::NegativeNoise(lambda));
    }
    let w = w_ocb();
    let noise = white_noise(&w.layout);
    let data = (w.matrix() + noise.matrix() * c(lambda, 0.0)) * c(1.0 / (1.0 + lambda), 0.0);
    Ok(bipartite(data))
}

/// The explicit components with ½(W^{A≺B} + W^{B≺A}) = W_OCB(λ).
pub fn ocb_decomposition(lambda: f64) -> Result<(ProcessMatrix, ProcessMatrix)> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(ProcessError::NegativeNoise(lambda));
    }
    // A tiny slack so that λ = √2−1 computed in floating point is accepted.
    if lambda < std::f64::consts::SQRT_2 - 1.0 - 1e-12 {
        return Err(ProcessError::BelowBoundary(lambda));
    }
    let (t1, t2) = ocb_terms();
    let k = c(std::f64::consts::SQRT_2 / (1.0 + lambda), 0.0);
    let id = CMat::identity(16, 16);
    let ab = (&id + t1 * k) * c(0.25, 0.0);
    let ba = (&id + t2 * k) * c(0.25, 0.0);
    Ok((bipartite(ab), bipartite(ba)))
}

/// The switch process vector on [A_I, A_O, B_I, B_O, C_I^t, C_I^c].
pub fn switch_vector(psi: &CVec) -> Result<PureVector> {
    if psi.len() != 2 {
        return Err(ProcessError::Layout("target state must be a qubit".into()));
    }
    let n2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    if (n2 - 1.0).abs() > 1e-10 {
        return Err(ProcessError::NotNormalized(n2));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = CVec::zeros(64);
    for ai in 0..2 {
        for ao in 0..2 {
            for bi in 0..2 {
                for bo in 0..2 {
                    for t in 0..2 {
                        let idx0 = ((((ai * 2 + ao) * 2 + bi) * 2 + bo) * 2 + t) * 2;
                        // control |0⟩: ψ → A → B → target
                        if ao == bi && bo == t {
                            v[idx0] += psi[ai] * h;
                        }
                        // control |1⟩: ψ → B → A → target
                        if bo == ai && ao == t {
                            v[idx0 + 1] += psi[bi] * h;
                        }
                    }
                }
            }
        }
    }
    Ok(PureVector::new(PartyLayout::switch(false).systems(), v)?)
}

/// |w⟩⟨w|, or its partial trace over the target output C_I^t when `reduce`.
pub fn switch_process(psi: &CVec, reduce: bool) -> Result<ProcessMatrix> {
    let full = switch_vector(psi)?.projector();
    if !reduce {
        return ProcessMatrix::new(full, PartyLayout::switch(false));
    }
    let red = tensor_ops::partial_trace(&full, &["C_I^t"])?;
    ProcessMatrix::new(red, PartyLayout::switch(true))
}

pub fn default_psi() -> CVec {
    tensor_ops::ket(2, 0)
}

/// tr_C of a switch-type process, giving the bipartite A/B process.
pub fn trace_out_charlie(w: &ProcessMatrix) -> Result<ProcessMatrix> {
    let ci = w.layout.party("C").ok_or_else(|| ProcessError::Layout("no party C".into()))?;
    let cparty = &w.layout.parties[ci];
    if !cparty.outputs.is_empty() {
        return Err(ProcessError::Layout("party C must have a trivial output".into()));
    }
    let names: Vec<&str> = cparty.inputs.iter().map(|s| s.name.as_str()).collect();
    let op = tensor_ops::partial_trace(&w.op, &names)?;
    let mut layout = w.layout.clone();
    layout.parties.remove(ci);
    ProcessMatrix::new(op, layout)
}

/// A random process compatible with the given order: a state on the first
/// party's input, independent random channels from each party's output to
/// the next party's input, identity on the last party's output. Memoryless,
/// so not every ordered process arises this way.
pub fn random_ordered_process<R: rand::Rng + ?Sized>(
    layout: &PartyLayout,
    order: &[usize],
    rng: &mut R,
) -> Result<ProcessMatrix> {
    check_order(layout, order)?;
    let first = &layout.parties[order[0]];
    let mut pieces = vec![LabeledOperator::new(first.inputs.clone(), tensor_ops::random_state(first.d_in(), rng))?];
    for w in order.windows(2) {
        let (from, to) = (&layout.parties[w[0]], &layout.parties[w[1]]);
        let sys: Vec<SystemLabel> = from.outputs.iter().chain(&to.inputs).cloned().collect();
        pieces.push(LabeledOperator::new(sys, tensor_ops::random_channel_cj(from.d_out(), to.d_in(), rng))?);
    }
    let last = &layout.parties[*order.last().expect("nonempty order")];
    if !last.outputs.is_empty() {
        pieces.push(LabeledOperator::identity(last.outputs.clone())?);
    }
    let refs: Vec<&LabeledOperator> = pieces.iter().collect();
    let op = tensor_ops::tensor_all(&refs)?;
    let names: Vec<String> = layout.systems().iter().map(|s| s.name.clone()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut op = tensor_ops::permute_systems(&op, &names)?;
    op.hermitize();
    ProcessMatrix::new(op, layout.clone())
}

// ---------------------------------------------------------------------------
// Local pre- and post-processing.

/// A CPTP map given by its CJ matrix on `inputs ⊗ outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub cj: CMat,
    pub inputs: Vec<SystemLabel>,
    pub outputs: Vec<SystemLabel>,
}

impl Channel {
    pub fn d_in(&self) -> usize {
        self.inputs.iter().map(|s| s.dim).product()
    }

    pub fn d_out(&self) -> usize {
        self.outputs.iter().map(|s| s.dim).product()
    }

    pub fn unitary(u: &CMat, inputs: Vec<SystemLabel>, outputs: Vec<SystemLabel>) -> Self {
        let v = tensor_ops::cj_pure(u);
        Channel { cj: &v * v.adjoint(), inputs, outputs }
    }

    pub fn check_cptp(&self, tol: f64) -> Result<()> {
        let n = self.d_in() * self.d_out();
        if self.cj.nrows() != n {
            return Err(ProcessError::NotCptp("CJ matrix has the wrong side".into()));
        }
        let me = min_eigenvalue(&self.cj);
        if me < -tol {
            return Err(ProcessError::NotCptp(format!("CJ min eigenvalue {me:.3e}")));
        }
        let mut sys = self.inputs.clone();
        sys.extend(self.outputs.iter().cloned());
        let sel: Vec<bool> = (0..sys.len()).map(|i| i >= self.inputs.len()).collect();
        let split = IndexSplit::new(&dims_of(&sys), &sel);
        let mut red = CMat::zeros(split.kept_dim, split.kept_dim);
        for col in 0..n {
            for r in 0..n {
                if split.sel[r] == split.sel[col] {
                    red[(split.kept[r], split.kept[col])] += self.cj[(r, col)];
                }
            }
        }
        let dev = max_abs(&(red - CMat::identity(split.kept_dim, split.kept_dim)));
        if dev > tol {
            return Err(ProcessError::NotCptp(format!("tr_out deviates from identity by {dev:.3e}")));
        }
        Ok(())
    }
}

/// Maps applied by one party before (`pre`, acting on what the process
/// delivers) and after (`post`, producing what the process receives) its
/// own operation.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMaps {
    pub party: String,
    pub pre: Option<Channel>,
    pub post: Option<Channel>,
}

/// $(W): the process seen by parties that wrap their operations in the given
/// local maps, defined by tr[(C^A ⊗ …)·$(W)] = tr[(C^A_{123} ⊗ …)·W].
pub fn compose_local(w: &ProcessMatrix, maps: &[LocalMaps]) -> Result<ProcessMatrix> {
    let mut cur = w.clone();
    for lm in maps {
        cur = compose_one(&cur, lm)?;
    }
    Ok(cur)
}

fn compose_one(w: &ProcessMatrix, lm: &LocalMaps) -> Result<ProcessMatrix> {
    let pi = w.layout.party(&lm.party).ok_or_else(|| ProcessError::Layout(format!("unknown party {}", lm.party)))?;
    let party = w.layout.parties[pi].clone();
    let (d_in, d_out) = (party.d_in(), party.d_out());
    if let Some(pre) = &lm.pre {
        pre.check_cptp(1e-10)?;
        if pre.d_in() != d_in {
            return Err(ProcessError::Layout("pre-map input does not match the party input".into()));
        }
    }
    if let Some(post) = &lm.post {
        post.check_cptp(1e-10)?;
        if post.d_out() != d_out {
            return Err(ProcessError::Layout("post-map output does not match the party output".into()));
        }
    }
    let new_in = lm.pre.as_ref().map_or(party.inputs.clone(), |m| m.outputs.clone());
    let new_out = lm.post.as_ref().map_or(party.outputs.clone(), |m| m.inputs.clone());
    let (dn_in, dn_out) =
        (new_in.iter().map(|s| s.dim).product::<usize>(), new_out.iter().map(|s| s.dim).product::<usize>());

    // Bring the party's factors together, inputs then outputs.
    let own: Vec<&SystemLabel> = party.inputs.iter().chain(&party.outputs).collect();
    let names: Vec<&str> = w.op.names();
    let first = names.iter().position(|n| own.iter().any(|s| s.name == *n)).unwrap_or(0);
    let mut order: Vec<&str> = names.iter().copied().filter(|n| !own.iter().any(|s| s.name == *n)).collect();
    for (k, s) in own.iter().enumerate() {
        order.insert(first + k, s.name.as_str());
    }
    let wp = tensor_ops::permute_systems(&w.op, &order)?;

    // Superoperator: K[(b,a),(l,k)] = Λ(|a⟩⟨b|)[k,l], Λ(C) = CJ(post ∘ C ∘ pre).
    let d_old = d_in * d_out;
    let d_new = dn_in * dn_out;
    let mut kmat = CMat::zeros(d_new * d_new, d_old * d_old);
    for a in 0..d_new {
        for b in 0..d_new {
            let mut e = CMat::zeros(d_new, d_new);
            e[(a, b)] = c(1.0, 0.0);
            let lam = cj_from_map(d_in, d_out, |rho| {
                let r1 = match &lm.pre {
                    Some(m) => cj_apply_raw(&m.cj, rho).expect("checked dims"),
                    None => rho.clone(),
                };
                let r2 = cj_apply_raw(&e, &r1).expect("checked dims");
                match &lm.post {
                    Some(m) => cj_apply_raw(&m.cj, &r2).expect("checked dims"),
                    None => r2,
                }
            });
            for k in 0..d_old {
                for l in 0..d_old {
                    kmat[(b * d_new + a, l * d_old + k)] = lam[(k, l)];
                }
            }
        }
    }

    let old_sys = wp.systems().to_vec();
    let sel_old: Vec<bool> = old_sys.iter().map(|s| own.iter().any(|o| o.name == s.name)).collect();
    let split_old = IndexSplit::new(&dims_of(&old_sys), &sel_old);
    let mut new_sys: Vec<SystemLabel> = old_sys[..first].to_vec();
    new_sys.extend(new_in.iter().cloned());
    new_sys.extend(new_out.iter().cloned());
    new_sys.extend(old_sys[first + own.len()..].iter().cloned());
    let sel_new: Vec<bool> =
        (0..new_sys.len()).map(|i| i >= first && i < first + new_in.len() + new_out.len()).collect();
    let split_new = IndexSplit::new(&dims_of(&new_sys), &sel_new);
    let mut index_of = vec![0usize; split_new.kept_dim * d_new];
    for (j, (&k, &x)) in split_new.kept.iter().zip(&split_new.sel).enumerate() {
        index_of[k * d_new + x] = j;
    }
    let n_new = tensor_ops::total_dim(&new_sys);
    let mut out = CMat::zeros(n_new, n_new);
    let m = wp.data();
    for col in 0..m.ncols() {
        for r in 0..m.nrows() {
            let v = m[(r, col)];
            if v == c(0.0, 0.0) {
                continue;
            }
            let (kr, xr, kc, xc) = (split_old.kept[r], split_old.sel[r], split_old.kept[col], split_old.sel[col]);
            let kcol = xr * d_old + xc;
            for xr2 in 0..d_new {
                let rr = index_of[kr * d_new + xr2];
                for xc2 in 0..d_new {
                    let kv = kmat[(xr2 * d_new + xc2, kcol)];
                    if kv != c(0.0, 0.0) {
                        out[(rr, index_of[kc * d_new + xc2])] += kv * v;
                    }
                }
            }
        }
    }
    let mut op = LabeledOperator::new(new_sys, out)?;
    op.hermitize();
    let mut layout = w.layout.clone();
    layout.parties[pi].inputs = new_in;
    layout.parties[pi].outputs = new_out;
    ProcessMatrix::new(op, layout)
}

// ---------------------------------------------------------------------------
// Lookup by name and JSON.

/// "ocb", "ocb-noisy:λ", "switch", "switch-reduced", "white-noise".
pub fn named_process(name: &str) -> Result<ProcessMatrix> {
    if let Some(l) = name.strip_prefix("ocb-noisy:") {
        let lambda: f64 = l.parse().map_err(|_| ProcessError::UnknownName(name.to_string()))?;
        return w_ocb_noisy(lambda);
    }
    match name {
        "ocb" => Ok(w_ocb()),
        "switch" => switch_process(&default_psi(), false),
        "switch-reduced" => switch_process(&default_psi(), true),
        "white-noise" => Ok(white_noise(&PartyLayout::bipartite_qubits())),
        _ => Err(ProcessError::UnknownName(name.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorRef {
    One(String),
    Many(Vec<String>),
}

impl FactorRef {
    fn from_labels(labels: &[SystemLabel]) -> Self {
        if labels.len() == 1 {
            FactorRef::One(labels[0].name.clone())
        } else {
            FactorRef::Many(labels.iter().map(|s| s.name.clone()).collect())
        }
    }

    fn names(&self) -> Vec<String> {
        match self {
            FactorRef::One(s) => vec![s.clone()],
            FactorRef::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartyJson {
    pub party: String,
    #[serde(rename = "in")]
    pub input: FactorRef,
    #[serde(default)]
    pub out: Option<FactorRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessJson {
    #[serde(flatten)]
    pub operator: OperatorJson,
    pub layout: Vec<PartyJson>,
}

impl PartyLayout {
    pub fn to_json(&self) -> Vec<PartyJson> {
        self.parties
            .iter()
            .map(|p| PartyJson {
                party: p.name.clone(),
                input: FactorRef::from_labels(&p.inputs),
                out: if p.outputs.is_empty() { None } else { Some(FactorRef::from_labels(&p.outputs)) },
            })
            .collect()
    }

    /// Resolves factor names against the operator's `systems`.
    pub fn from_json(j: &[PartyJson], systems: &[SystemLabel]) -> Result<Self> {
        let find = |n: &str| -> Result<SystemLabel> {
            systems
                .iter()
                .find(|s| s.name == n)
                .cloned()
                .ok_or_else(|| ProcessError::Layout(format!("layout names unknown factor {n}")))
        };
        let mut parties = Vec::new();
        for p in j {
            let inputs = p.input.names().iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
            let outputs = match &p.out {
                Some(f) => f.names().iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?,
                None => vec![],
            };
            parties.push(Party::new(&p.party, inputs, outputs));
        }
        Ok(PartyLayout::new(parties))
    }
}

impl ProcessMatrix {
    pub fn to_json(&self) -> ProcessJson {
        ProcessJson { operator: self.op.to_json(), layout: self.layout.to_json() }
    }

    pub fn from_json(j: &ProcessJson) -> Result<Self> {
        let op = LabeledOperator::from_json(&j.operator)?;
        let layout = PartyLayout::from_json(&j.layout, op.systems())?;
        ProcessMatrix::new(op, layout)
    }
}

/// Convenience for tests and constructors: a qubit state from amplitudes.
pub fn qubit_state(a: C64, b: C64) -> CVec {
    CVec::from_vec(vec![a, b])
}
