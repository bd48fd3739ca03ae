//! Measurement decomposition of the OCB witness and estimation of witness
//! values from outcome statistics.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use super::{Result, WitnessError};
use crate::process_space::{PartyLayout, ProcessMatrix};
use crate::tensor_ops::{
    self, c, kron_all, max_abs, min_eigenvalue, pauli, pauli_string, CMat, LabeledOperator, SystemLabel,
};

/// A quantum instrument: CJ matrices of the CP maps for each outcome, on
/// `inputs ⊗ outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instrument {
    pub label: String,
    pub inputs: Vec<SystemLabel>,
    pub outputs: Vec<SystemLabel>,
    pub elements: Vec<CMat>,
}

impl Instrument {
    pub fn systems(&self) -> Vec<SystemLabel> {
        self.inputs.iter().chain(&self.outputs).cloned().collect()
    }

    /// Worst violation of positivity and of trace preservation of the sum.
    pub fn defect(&self) -> Result<f64> {
        let sys = self.systems();
        let n = tensor_ops::total_dim(&sys);
        let mut worst = 0.0f64;
        let mut sum = CMat::zeros(n, n);
        for m in &self.elements {
            worst = worst.max(-min_eigenvalue(m));
            sum += m;
        }
        let op = LabeledOperator::new(sys, sum)?;
        let outs: Vec<&str> = self.outputs.iter().map(|s| s.name.as_str()).collect();
        let d_out: usize = self.outputs.iter().map(|s| s.dim).product();
        let replaced = tensor_ops::trace_and_replace(&op, &outs)?;
        let target = CMat::identity(n, n) * c(1.0 / d_out as f64, 0.0);
        Ok(worst.max(max_abs(&(replaced.data() - target))))
    }

    /// Random instrument from a Haar-random Stinespring isometry; the
    /// outcome register and a d_in-dimensional environment are discarded.
    pub fn random<R: Rng + ?Sized>(
        label: &str,
        inputs: Vec<SystemLabel>,
        outputs: Vec<SystemLabel>,
        outcomes: usize,
        rng: &mut R,
    ) -> Self {
        let d_in: usize = inputs.iter().map(|s| s.dim).product();
        let d_out: usize = outputs.iter().map(|s| s.dim).product();
        let k = d_in;
        let u = tensor_ops::haar_unitary(d_out * outcomes * k, rng);
        let elements = (0..outcomes)
            .map(|a| {
                let mut m = CMat::zeros(d_in * d_out, d_in * d_out);
                for e in 0..k {
                    let kraus = CMat::from_fn(d_out, d_in, |o, i| u[((a * d_out + o) * k + e, i)]);
                    let v = tensor_ops::cj_pure(&kraus);
                    m += &v * v.adjoint();
                }
                m
            })
            .collect();
        Instrument { label: label.to_string(), inputs, outputs, elements }
    }
}

fn half(sign: f64, p: char) -> CMat {
    (CMat::identity(2, 2) + pauli(p) * c(sign, 0.0)) * c(0.5, 0.0)
}

fn sign(k: usize) -> f64 {
    if k.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Alice's instruments indexed by x, Bob's by the combined setting
/// 2y' + y, each with outcomes a, b ∈ {0, 1}.
pub fn ocb_instruments(layout: &PartyLayout) -> (Vec<Instrument>, Vec<Instrument>) {
    let (pa, pb) = (&layout.parties[0], &layout.parties[1]);
    let alice = (0..2)
        .map(|x| Instrument {
            label: format!("x={x}"),
            inputs: pa.inputs.clone(),
            outputs: pa.outputs.clone(),
            elements: (0..2).map(|a| kron_all(&[half(sign(a), 'Z'), half(sign(x), 'Z')])).collect(),
        })
        .collect();
    let bob = (0..4)
        .map(|yy| {
            let (y, yp) = (yy % 2, yy / 2);
            let elements = (0..2)
                .map(|b| {
                    if yp == 0 {
                        kron_all(&[half(sign(b), 'X'), half(sign(y + b), 'Z')])
                    } else {
                        kron_all(&[half(sign(b), 'Z'), CMat::identity(2, 2) * c(0.5, 0.0)])
                    }
                })
                .collect();
            Instrument {
                label: format!("y={y},y'={yp}"),
                inputs: pb.inputs.clone(),
                outputs: pb.outputs.clone(),
                elements,
            }
        })
        .collect();
    (alice, bob)
}

/// ¼[1 − (1ZZ1 + Z1XZ)] on [A_I, A_O, B_I, B_O].
pub fn s_ocb() -> CMat {
    (CMat::identity(16, 16) - pauli_string("1ZZ1") - pauli_string("Z1XZ")) * c(0.25, 0.0)
}

/// Cell key (x, y, a, b); y is Bob's combined setting.
pub type Cell = (usize, usize, usize, usize);

fn cell_key(k: &Cell) -> String {
    format!("{},{},{},{}", k.0, k.1, k.2, k.3)
}

fn keyed<S: serde::Serializer>(m: &BTreeMap<Cell, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_map(m.iter().map(|(k, v)| (cell_key(k), v)))
}

/// tr(S·W) = constant + Σ γ_{x,y,a,b} P(a, b | x, y) for normalized W.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientTable {
    pub constant: f64,
    #[serde(serialize_with = "keyed")]
    pub gamma: BTreeMap<Cell, f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ProbabilityTable {
    #[serde(serialize_with = "keyed")]
    pub cells: BTreeMap<Cell, f64>,
}

#[derive(Debug, Clone)]
pub struct OcbDecomposition {
    pub alice: Vec<Instrument>,
    pub bob: Vec<Instrument>,
    pub coefficients: CoefficientTable,
    pub witness: CMat,
    /// The game operator G with S = 3·1° − 4G.
    pub game: CMat,
    /// max |S − (3·1° − 4G)|.
    pub residual: f64,
}

pub fn decompose_witness_ocb() -> OcbDecomposition {
    let layout = PartyLayout::bipartite_qubits();
    let (alice, bob) = ocb_instruments(&layout);
    let mut game = CMat::zeros(16, 16);
    let mut gamma = BTreeMap::new();
    for (x, ia) in alice.iter().enumerate() {
        for (yy, ib) in bob.iter().enumerate() {
            let (y, yp) = (yy % 2, yy / 2);
            for a in 0..2 {
                for b in 0..2 {
                    let win = if yp == 0 { a == y } else { b == x };
                    if win {
                        game += kron_all(&[ia.elements[a].clone(), ib.elements[b].clone()]) * c(0.125, 0.0);
                    }
                    gamma.insert((x, yy, a, b), if win { -0.5 } else { 0.0 });
                }
            }
        }
    }
    let witness = s_ocb();
    let noise = CMat::identity(16, 16) * c(0.25, 0.0);
    let residual = max_abs(&(&witness - (noise * c(3.0, 0.0) - &game * c(4.0, 0.0))));
    OcbDecomposition { alice, bob, coefficients: CoefficientTable { constant: 3.0, gamma }, witness, game, residual }
}

/// P(a, b | x, y) = tr[(A_{a|x} ⊗ B_{b|y})·W].
pub fn born_table(w: &ProcessMatrix, alice: &[Instrument], bob: &[Instrument]) -> Result<ProbabilityTable> {
    let order: Vec<SystemLabel> = alice[0].systems().into_iter().chain(bob[0].systems()).collect();
    let (wa, _) = w.op.aligned_to(&order)?;
    let mut cells = BTreeMap::new();
    for (x, ia) in alice.iter().enumerate() {
        for (y, ib) in bob.iter().enumerate() {
            for (a, ma) in ia.elements.iter().enumerate() {
                for (b, mb) in ib.elements.iter().enumerate() {
                    let m = kron_all(&[ma.clone(), mb.clone()]);
                    cells.insert((x, y, a, b), tensor_ops::trace_product(&m, wa.data()).re);
                }
            }
        }
    }
    Ok(ProbabilityTable { cells })
}

pub fn estimate_from_probabilities(coeffs: &CoefficientTable, table: &ProbabilityTable) -> Result<f64> {
    let mut v = coeffs.constant;
    for (k, g) in &coeffs.gamma {
        let p = table.cells.get(k).ok_or_else(|| WitnessError::MissingCell(cell_key(k)))?;
        v += g * p;
    }
    Ok(v)
}

fn settings(table: &ProbabilityTable) -> BTreeMap<(usize, usize), Vec<(Cell, f64)>> {
    let mut out: BTreeMap<(usize, usize), Vec<(Cell, f64)>> = BTreeMap::new();
    for (k, p) in &table.cells {
        out.entry((k.0, k.1)).or_default().push((*k, *p));
    }
    out
}

/// Relative frequencies from `shots` multinomial draws per setting.
pub fn resample_table<R: Rng + ?Sized>(table: &ProbabilityTable, shots: u64, rng: &mut R) -> Result<ProbabilityTable> {
    let mut cells = BTreeMap::new();
    for (_, outcomes) in settings(table) {
        let mut left = shots;
        let mut mass = 1.0f64;
        let last = outcomes.len() - 1;
        for (i, (k, p)) in outcomes.iter().enumerate() {
            let p = p.max(0.0);
            let n = if i == last || left == 0 {
                left
            } else {
                let q = (p / mass).clamp(0.0, 1.0);
                Binomial::new(left, q).map_err(|e| WitnessError::Invalid(e.to_string()))?.sample(rng)
            };
            cells.insert(*k, n as f64 / shots as f64);
            left -= n;
            mass -= p;
        }
    }
    Ok(ProbabilityTable { cells })
}

/// Standard error of the estimator with `shots` draws per setting.
pub fn standard_error(coeffs: &CoefficientTable, table: &ProbabilityTable, shots: u64) -> Result<f64> {
    let mut var = 0.0;
    for (_, outcomes) in settings(table) {
        let (mut m1, mut m2) = (0.0, 0.0);
        for (k, p) in outcomes {
            let g = coeffs.gamma.get(&k).copied().unwrap_or(0.0);
            m1 += g * p;
            m2 += g * g * p;
        }
        var += (m2 - m1 * m1) / shots as f64;
    }
    Ok(var.max(0.0).sqrt())
}
