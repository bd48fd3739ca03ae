//! Causal witnesses: robustness SDPs, separable decompositions and
//! certificate checks for the bipartite scenario and the tripartite one in
//! which the last party has no output.

mod ocb;

pub use ocb::{
    born_table, decompose_witness_ocb, estimate_from_probabilities, ocb_instruments, resample_table, s_ocb,
    standard_error, CoefficientTable, Instrument, OcbDecomposition, ProbabilityTable,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic_solver::{self as cs, AffineExpr, Cone, SdpProblem, SdpSolution, SolverError, Status, SubspaceBasis};
use crate::process_space::{
    compose_local, is_valid_process, lv_poly, order_poly, output_poly, w_ocb, Channel, LocalMaps, PartyJson,
    PartyLayout, ProcessError, ProcessMatrix, TrPoly,
};
use crate::tensor_ops::{
    self, c, hermitian_defect, hermitian_part, matrix_from_json, matrix_to_json, max_abs, min_eigenvalue, CMat,
    LabeledOperator, OperatorJson, SystemLabel, TensorError,
};

/// Robustness values below this count as separable.
pub const SEPARABLE_BELOW: f64 = 1e-6;
/// Default acceptance margin of `verify_witness`.
pub const WITNESS_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum WitnessError {
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("unsupported scenario: {0}")]
    Unsupported(String),
    #[error("solver stopped with status {0:?}")]
    NotSolved(Status),
    #[error("missing probability for cell {0}")]
    MissingCell(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, WitnessError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Tolerance of the validity check applied to input processes.
    pub validity_tol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions { tol: cs::DEFAULT_TOL, max_iter: cs::DEFAULT_MAX_ITER, validity_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "bipartite")]
    Bipartite,
    #[serde(rename = "tripartite-trivial-C_O")]
    Tripartite,
}

impl Scenario {
    pub fn detect(layout: &PartyLayout) -> Result<Self> {
        match layout.parties.len() {
            2 => Ok(Scenario::Bipartite),
            3 => {
                let trivial = layout.parties.iter().filter(|p| p.outputs.is_empty()).count();
                if trivial == 1 {
                    Ok(Scenario::Tripartite)
                } else {
                    Err(WitnessError::Unsupported("tripartite witnesses need exactly one party without output".into()))
                }
            }
            n => Err(WitnessError::Unsupported(format!("{n} parties"))),
        }
    }

    /// The two causal orders spanning the separable cone. In the tripartite
    /// case the party without output comes last.
    pub fn orders(self, layout: &PartyLayout) -> Vec<Vec<usize>> {
        match self {
            Scenario::Bipartite => vec![vec![0, 1], vec![1, 0]],
            Scenario::Tripartite => {
                let last = layout.parties.iter().position(|p| p.outputs.is_empty()).expect("detected");
                let rest: Vec<usize> = (0..3).filter(|&k| k != last).collect();
                vec![vec![rest[0], rest[1], last], vec![rest[1], rest[0], last]]
            }
        }
    }
}

pub fn order_label(layout: &PartyLayout, order: &[usize]) -> String {
    order.iter().map(|&k| layout.parties[k].name.as_str()).collect::<Vec<_>>().join("<")
}

/// Basis of the subspace fixed by the order projector.
pub fn order_basis(layout: &PartyLayout, systems: &[SystemLabel], order: &[usize]) -> SubspaceBasis {
    poly_basis(systems, &order_label(layout, order), &order_poly(layout, systems, order))
}

/// Basis of the kernel of the order projector.
pub fn order_complement_basis(layout: &PartyLayout, systems: &[SystemLabel], order: &[usize]) -> SubspaceBasis {
    let label = format!("{}^perp", order_label(layout, order));
    complement_basis(systems, &label, &order_poly(layout, systems, order))
}

fn poly_basis(systems: &[SystemLabel], tag: &str, poly: &TrPoly) -> SubspaceBasis {
    SubspaceBasis::from_projector(systems, tag, |m| poly.apply_raw(systems, m))
}

fn complement_basis(systems: &[SystemLabel], tag: &str, poly: &TrPoly) -> SubspaceBasis {
    SubspaceBasis::from_projector(systems, tag, |m| m - poly.apply_raw(systems, m))
}

fn check_valid(w: &ProcessMatrix, opts: &SdpOptions) -> Result<Scenario> {
    let scen = Scenario::detect(&w.layout)?;
    let r = is_valid_process(&w.op, &w.layout, opts.validity_tol)?;
    if !r.verdict {
        return Err(WitnessError::Process(ProcessError::Invalid(format!(
            "min eigenvalue {:.3e}, trace {}, L_V residual {:.3e}",
            r.min_eigenvalue, r.trace, r.subspace_residual
        ))));
    }
    Ok(scen)
}

pub(crate) fn solved(sol: SdpSolution) -> Result<SdpSolution> {
    if sol.status != Status::Optimal {
        return Err(WitnessError::NotSolved(sol.status));
    }
    Ok(sol)
}

fn op_on(systems: &[SystemLabel], m: CMat) -> LabeledOperator {
    let mut op = LabeledOperator::new(systems.to_vec(), m).expect("matching side");
    op.hermitize();
    op
}

// ---------------------------------------------------------------------------
// Witnesses and certificates.

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedPart {
    pub order: String,
    /// Positive part S^P.
    pub positive: CMat,
    /// Part annihilated by the order projector.
    pub orthogonal: CMat,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// S = S_P + S⊥ with _{A_O}S_P ⪰ 0, _{B_O}S_P ⪰ 0 and L_V(S⊥) = 0.
    Bipartite { positive: CMat, orthogonal: CMat },
    /// One decomposition per causal order.
    Tripartite { parts: Vec<OrderedPart> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalWitness {
    pub op: LabeledOperator,
    pub layout: PartyLayout,
    pub scenario: Scenario,
    pub certificate: Certificate,
    /// Optimal t of the membership SDP; nonnegative up to solver precision.
    pub margin: f64,
}

/// Worst violations of a certificate, recomputed from its matrices.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertificateCheck {
    pub reconstruction: f64,
    pub min_eigenvalue: f64,
    pub orthogonality: f64,
}

impl CertificateCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.reconstruction <= tol && self.min_eigenvalue >= -tol && self.orthogonality <= tol
    }
}

impl CausalWitness {
    pub fn check_certificate(&self) -> CertificateCheck {
        let sys = self.op.systems();
        let s = self.op.data();
        let mut rec = 0.0f64;
        let mut me = f64::INFINITY;
        let mut orth = 0.0f64;
        match &self.certificate {
            Certificate::Bipartite { positive, orthogonal } => {
                rec = max_abs(&(s - positive - orthogonal));
                for k in 0..2 {
                    let m = output_poly(&self.layout, sys, k).apply_raw(sys, positive);
                    me = me.min(min_eigenvalue(&hermitian_part(&m)));
                }
                orth = max_abs(&lv_poly(&self.layout, sys).apply_raw(sys, orthogonal));
            }
            Certificate::Tripartite { parts } => {
                for (part, order) in parts.iter().zip(self.scenario.orders(&self.layout)) {
                    rec = rec.max(max_abs(&(s - &part.positive - &part.orthogonal)));
                    me = me.min(min_eigenvalue(&hermitian_part(&part.positive)));
                    let p = order_poly(&self.layout, sys, &order);
                    orth = orth.max(max_abs(&p.apply_raw(sys, &part.orthogonal)));
                }
            }
        }
        CertificateCheck { reconstruction: rec, min_eigenvalue: me, orthogonality: orth }
    }
}

#[derive(Debug, Clone)]
pub struct Verification {
    pub accepted: bool,
    pub margin: f64,
    pub witness: Option<CausalWitness>,
    pub status: Status,
}

/// Decides membership of `s` in the cone of causal witnesses by maximizing
/// the smallest eigenvalue t over all admissible splittings. Accepted iff
/// t ≥ −tol, in which case the splitting is returned as certificate.
pub fn verify_witness(s: &LabeledOperator, layout: &PartyLayout, tol: f64, opts: &SdpOptions) -> Result<Verification> {
    layout.check(s.systems())?;
    if hermitian_defect(s.data()) > 1e-10 {
        return Err(WitnessError::Invalid("witness is not hermitian".into()));
    }
    let scen = Scenario::detect(layout)?;
    let sys = s.systems().to_vec();
    let n = s.dim();
    let sm = hermitian_part(s.data());
    let mut p = SdpProblem::new();
    let t = p.add_block("t", Cone::Free, SubspaceBasis::scalar());
    p.add_objective_var(p.block(t)?.offset, -1.0);
    let orders = scen.orders(layout);
    let mut xs = Vec::new();
    match scen {
        Scenario::Bipartite => {
            let lv = lv_poly(layout, &sys);
            let x = p.add_block("S_perp", Cone::Free, complement_basis(&sys, "L_V^perp", &lv));
            for k in 0..2 {
                let tr = output_poly(layout, &sys, k);
                let e = AffineExpr::zero(n)
                    .add_constant(&tr.apply_raw(&sys, &sm))?
                    .add_mapped(&p, x, |m| tr.apply_raw(&sys, m))?
                    .add_scalar_identity(&p, t, -1.0)?;
                p.add_psd(e);
            }
            xs.push(x);
        }
        Scenario::Tripartite => {
            for o in &orders {
                let label = order_label(layout, o);
                let x = p.add_block(&format!("S_perp[{label}]"), Cone::Free, order_complement_basis(layout, &sys, o));
                let e =
                    AffineExpr::zero(n).add_constant(&sm)?.add_block(&p, x, 1.0)?.add_scalar_identity(&p, t, -1.0)?;
                p.add_psd(e);
                xs.push(x);
            }
        }
    }
    let sol = cs::solve(&p, opts.tol, opts.max_iter)?;
    if !matches!(sol.status, Status::Optimal | Status::MaxIter) {
        return Ok(Verification { accepted: false, margin: f64::NEG_INFINITY, witness: None, status: sol.status });
    }
    let margin = sol.blocks[t][(0, 0)].re;
    let accepted = sol.status == Status::Optimal && margin >= -tol;
    let certificate = match scen {
        Scenario::Bipartite => {
            let x = &sol.blocks[xs[0]];
            Certificate::Bipartite { positive: &sm + x, orthogonal: -x }
        }
        Scenario::Tripartite => Certificate::Tripartite {
            parts: orders
                .iter()
                .zip(&xs)
                .map(|(o, &b)| {
                    let x = &sol.blocks[b];
                    OrderedPart { order: order_label(layout, o), positive: &sm + x, orthogonal: -x }
                })
                .collect(),
        },
    };
    let witness =
        accepted.then(|| CausalWitness { op: s.clone(), layout: layout.clone(), scenario: scen, certificate, margin });
    Ok(Verification { accepted, margin, witness, status: sol.status })
}

/// Re tr(S·W), after bringing S into W's factor order.
pub fn witness_expectation(s: &LabeledOperator, w: &LabeledOperator) -> Result<f64> {
    let (s, _) = s.aligned_to(w.systems())?;
    Ok(tensor_ops::trace_product(s.data(), w.data()).re)
}

// ---------------------------------------------------------------------------
// Robustness.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessKind {
    Generalized,
    Random,
}

/// W + noise = Σ components, each component fixed by its order projector.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Ω (generalized) or λ·1° (random).
    pub noise: LabeledOperator,
    /// tr(noise)/d_O.
    pub noise_weight: f64,
    pub components: Vec<(String, LabeledOperator)>,
}

#[derive(Debug, Clone)]
pub struct RobustnessResult {
    pub kind: RobustnessKind,
    pub value: f64,
    pub witness: CausalWitness,
    /// tr(S·W) recomputed from the witness.
    pub witness_value: f64,
    pub decomposition: Decomposition,
    pub gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
}

struct OrderBlocks {
    labels: Vec<String>,
    blocks: Vec<usize>,
}

fn add_order_blocks(p: &mut SdpProblem, w: &ProcessMatrix, scen: Scenario) -> OrderBlocks {
    let sys = w.systems().to_vec();
    let orders = scen.orders(&w.layout);
    let labels: Vec<String> = orders.iter().map(|o| order_label(&w.layout, o)).collect();
    let blocks = orders
        .iter()
        .zip(&labels)
        .map(|(o, l)| p.add_block(&format!("W[{l}]"), Cone::Psd, order_basis(&w.layout, &sys, o)))
        .collect();
    OrderBlocks { labels, blocks }
}

fn certify(s: CMat, w: &ProcessMatrix, opts: &SdpOptions) -> Result<CausalWitness> {
    let op = op_on(w.systems(), s);
    let v = verify_witness(&op, &w.layout, WITNESS_TOL.max(10.0 * opts.tol), opts)?;
    match v.witness {
        Some(wit) => Ok(wit),
        None => Err(WitnessError::Invalid(format!("optimal witness failed verification (margin {:.3e})", v.margin))),
    }
}

/// R_g(W): min tr(Ω)/d_O such that W + Ω is separable and Ω ⪰ 0 lies in
/// L_V. The witness is 1/d_O − L_V(Y) with Y the multiplier of Ω ⪰ 0.
pub fn generalized_robustness(w: &ProcessMatrix, opts: &SdpOptions) -> Result<RobustnessResult> {
    let scen = check_valid(w, opts)?;
    let sys = w.systems().to_vec();
    let n = w.op.dim();
    let d_o = w.d_o() as f64;
    let wm = hermitian_part(w.matrix());
    let mut p = SdpProblem::new();
    let ob = add_order_blocks(&mut p, w, scen);
    let ident = CMat::identity(n, n) * c(1.0 / d_o, 0.0);
    let mut omega = AffineExpr::zero(n);
    for &b in &ob.blocks {
        omega = omega.add_block(&p, b, 1.0)?;
        p.add_objective(b, &ident)?;
    }
    omega = omega.add_constant(&(-&wm))?;
    let omega_idx = p.add_psd(omega);
    p.add_objective_constant(-wm.trace().re / d_o);
    let sol = solved(cs::solve(&p, opts.tol, opts.max_iter)?)?;

    let y = &sol.lmi_duals[omega_idx];
    let s = &ident - lv_poly(&w.layout, &sys).apply_raw(&sys, y);
    let witness = certify(s, w, opts)?;
    let witness_value = witness_expectation(&witness.op, &w.op)?;
    let comps: Vec<CMat> = ob.blocks.iter().map(|&b| sol.blocks[b].clone()).collect();
    let noise = comps.iter().fold(-&wm, |acc, m| acc + m);
    let noise_weight = noise.trace().re / d_o;
    Ok(RobustnessResult {
        kind: RobustnessKind::Generalized,
        value: sol.primal_objective,
        witness,
        witness_value,
        decomposition: Decomposition {
            noise: op_on(&sys, noise),
            noise_weight,
            components: ob.labels.into_iter().zip(comps.into_iter().map(|m| op_on(&sys, m))).collect(),
        },
        gap: sol.gap,
        primal_objective: sol.primal_objective,
        dual_objective: sol.dual_objective,
        iterations: sol.iterations,
    })
}

/// R_r(W): min λ ≥ 0 such that W + λ·1° is separable. The witness is minus
/// the multiplier of the equality, expanded in the L_V basis.
pub fn random_robustness(w: &ProcessMatrix, opts: &SdpOptions) -> Result<RobustnessResult> {
    let scen = check_valid(w, opts)?;
    let sys = w.systems().to_vec();
    let n = w.op.dim();
    let d_i = w.layout.d_i() as f64;
    let d_o = w.d_o() as f64;
    let wm = hermitian_part(w.matrix());
    let mut p = SdpProblem::new();
    let ob = add_order_blocks(&mut p, w, scen);
    let lam = p.add_block("lambda", Cone::Psd, SubspaceBasis::scalar());
    let mut expr = AffineExpr::zero(n);
    for &b in &ob.blocks {
        expr = expr.add_block(&p, b, 1.0)?;
    }
    expr = expr.add_scalar_identity(&p, lam, -1.0 / d_i)?.add_constant(&(-&wm))?;
    let lv_basis = poly_basis(&sys, "L_V", &lv_poly(&w.layout, &sys));
    p.add_equality(expr, Some(&lv_basis))?;
    p.add_objective_var(p.block(lam)?.offset, 1.0);
    let sol = solved(cs::solve(&p, opts.tol, opts.max_iter)?)?;

    let s = -lv_basis.expand(&sol.eq_duals);
    let witness = certify(s, w, opts)?;
    let witness_value = witness_expectation(&witness.op, &w.op)?;
    let lambda = sol.blocks[lam][(0, 0)].re;
    let noise = CMat::identity(n, n) * c(lambda / d_i, 0.0);
    let comps: Vec<CMat> = ob.blocks.iter().map(|&b| sol.blocks[b].clone()).collect();
    Ok(RobustnessResult {
        kind: RobustnessKind::Random,
        value: sol.primal_objective,
        witness,
        witness_value,
        decomposition: Decomposition {
            noise: op_on(&sys, noise),
            noise_weight: lambda * n as f64 / d_i / d_o,
            components: ob.labels.into_iter().zip(comps.into_iter().map(|m| op_on(&sys, m))).collect(),
        },
        gap: sol.gap,
        primal_objective: sol.primal_objective,
        dual_objective: sol.dual_objective,
        iterations: sol.iterations,
    })
}

#[derive(Debug, Clone)]
pub struct SeparableParts {
    /// λ with W + λ·1° = Σ_k q_k W_k; zero up to solver precision.
    pub noise: f64,
    /// (order, q_k, normalized W_k); components of negligible weight are left out.
    pub components: Vec<(String, f64, ProcessMatrix)>,
    /// max |Σ q_k W_k − W|.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub enum Separability {
    Separable(SeparableParts),
    NotSeparable { witness: CausalWitness, value: f64 },
}

pub fn separable_decomposition(w: &ProcessMatrix, opts: &SdpOptions) -> Result<Separability> {
    let r = random_robustness(w, opts)?;
    if r.value >= SEPARABLE_BELOW {
        return Ok(Separability::NotSeparable { witness: r.witness, value: r.witness_value });
    }
    let d_o = w.d_o() as f64;
    let mut sum = CMat::zeros(w.op.dim(), w.op.dim());
    let mut components = Vec::new();
    for (label, m) in r.decomposition.components {
        let tr = m.trace().re;
        sum += m.data();
        let q = tr / d_o;
        if q > 1e-12 {
            let normalized = m.scale(1.0 / q);
            components.push((label, q, ProcessMatrix::new(normalized, w.layout.clone())?));
        }
    }
    let residual = max_abs(&(sum - w.matrix()));
    Ok(Separability::Separable(SeparableParts { noise: r.value, components, residual }))
}

// ---------------------------------------------------------------------------
// Monotonicity counterexample.

/// W₁ = W_OCB ⊗ 1/2 with an extra qubit A_I' in Alice's input, and $(W₁)
/// obtained by Alice discarding A_I' and preparing |0⟩ in its place.
pub fn monotonicity_processes() -> Result<(ProcessMatrix, ProcessMatrix)> {
    let base = w_ocb();
    let extra = SystemLabel::new("A_I'", 2);
    let half = LabeledOperator::new(vec![extra.clone()], CMat::identity(2, 2) * c(0.5, 0.0))?;
    let mut layout = base.layout.clone();
    layout.parties[0].inputs.push(extra.clone());
    let op = tensor_ops::tensor(&base.op, &half)?;
    let names: Vec<String> = layout.systems().iter().map(|s| s.name.clone()).collect();
    let order: Vec<&str> = names.iter().map(String::as_str).collect();
    let w1 = ProcessMatrix::new(tensor_ops::permute_systems(&op, &order)?, layout.clone())?;

    let inputs = layout.parties[0].inputs.clone();
    let reset = tensor_ops::cj_from_map(4, 4, |rho| {
        // tr_{A_I'}(ρ) ⊗ |0⟩⟨0|
        let mut out = CMat::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                out[(2 * i, 2 * j)] = rho[(2 * i, 2 * j)] + rho[(2 * i + 1, 2 * j + 1)];
            }
        }
        out
    });
    let pre = Channel { cj: reset, inputs: inputs.clone(), outputs: inputs };
    let mapped = compose_local(&w1, &[LocalMaps { party: "A".into(), pre: Some(pre), post: None }])?;
    Ok((w1, mapped))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MonotonicityReport {
    pub random_w1: f64,
    pub random_mapped: f64,
    pub generalized_w1: f64,
    pub generalized_mapped: f64,
}

pub fn rr_monotonicity_counterexample(opts: &SdpOptions) -> Result<MonotonicityReport> {
    let (w1, mapped) = monotonicity_processes()?;
    Ok(MonotonicityReport {
        random_w1: random_robustness(&w1, opts)?.value,
        random_mapped: random_robustness(&mapped, opts)?.value,
        generalized_w1: generalized_robustness(&w1, opts)?.value,
        generalized_mapped: generalized_robustness(&mapped, opts)?.value,
    })
}

// ---------------------------------------------------------------------------
// JSON.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderedPartJson {
    pub order: String,
    pub positive: Vec<Vec<[f64; 2]>>,
    pub orthogonal: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CertificateJson {
    Bipartite { positive: Vec<Vec<[f64; 2]>>, orthogonal: Vec<Vec<[f64; 2]>> },
    Tripartite { parts: Vec<OrderedPartJson> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessJson {
    #[serde(flatten)]
    pub operator: OperatorJson,
    pub layout: Vec<PartyJson>,
    pub scenario: Scenario,
    pub certificate: Option<CertificateJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

impl CausalWitness {
    pub fn to_json(&self) -> WitnessJson {
        let certificate = match &self.certificate {
            Certificate::Bipartite { positive, orthogonal } => CertificateJson::Bipartite {
                positive: matrix_to_json(positive),
                orthogonal: matrix_to_json(orthogonal),
            },
            Certificate::Tripartite { parts } => CertificateJson::Tripartite {
                parts: parts
                    .iter()
                    .map(|p| OrderedPartJson {
                        order: p.order.clone(),
                        positive: matrix_to_json(&p.positive),
                        orthogonal: matrix_to_json(&p.orthogonal),
                    })
                    .collect(),
            },
        };
        WitnessJson {
            operator: self.op.to_json(),
            layout: self.layout.to_json(),
            scenario: self.scenario,
            certificate: Some(certificate),
            margin: Some(self.margin),
        }
    }
}

/// The operator and layout of a witness file; any stored certificate is
/// ignored, since `verify_witness` recomputes one.
pub fn witness_from_json(j: &WitnessJson) -> Result<(LabeledOperator, PartyLayout)> {
    let op = LabeledOperator::from_json(&j.operator)?;
    let layout = PartyLayout::from_json(&j.layout, op.systems())?;
    layout.check(op.systems())?;
    if let Some(CertificateJson::Bipartite { positive, .. }) = &j.certificate {
        // Shape check only.
        matrix_from_json(positive)?;
    }
    Ok((op, layout))
}
