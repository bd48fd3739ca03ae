//! Labeled tensor operators: Kronecker products, partial traces,
//! trace-and-replace maps, the CJ isomorphism and Haar sampling.
//!
//! Factor order is row-major: the first listed system is the most
//! significant digit of a matrix index.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Absolute tolerance for the hermitian flag.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("duplicate factor name `{0}`")]
    DuplicateFactor(String),
    #[error("unknown factor `{0}`")]
    UnknownFactor(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("new order is not a permutation of the operator's factors")]
    NotPermutation,
    #[error("factor `{0}` has dimension 0")]
    ZeroDim(String),
    #[error("malformed operator JSON: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemLabel {
    pub name: String,
    pub dim: usize,
}

impl SystemLabel {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        SystemLabel { name: name.into(), dim }
    }
}

pub fn total_dim(systems: &[SystemLabel]) -> usize {
    systems.iter().map(|s| s.dim).product()
}

fn check_systems(systems: &[SystemLabel]) -> Result<()> {
    for (i, s) in systems.iter().enumerate() {
        if s.dim == 0 {
            return Err(TensorError::ZeroDim(s.name.clone()));
        }
        if systems[..i].iter().any(|t| t.name == s.name) {
            return Err(TensorError::DuplicateFactor(s.name.clone()));
        }
    }
    Ok(())
}

/// Largest entry of `(m - m†)/2` in absolute value.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm() * 0.5;
            worst = worst.max(d);
        }
    }
    worst
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Eigenvalues of a hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let h = hermitian_part(m);
    let mut ev: Vec<f64> = h.clone().symmetric_eigenvalues().iter().copied().collect();
    if ev.iter().any(|x| !x.is_finite()) {
        // nalgebra's implicit QR occasionally breaks down (NaN) on matrices
        // with exact zero patterns, e.g. the rank-one switch projector. A fixed
        // unitary conjugation keeps the spectrum and removes the pattern.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        let q = haar_unitary(h.nrows(), &mut rng);
        let rotated = hermitian_part(&(q.adjoint() * &h * &q));
        ev = rotated.symmetric_eigenvalues().iter().copied().collect();
    }
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m)[0]
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

/// tr(a·b) without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledOperator {
    systems: Vec<SystemLabel>,
    data: CMat,
    hermitian: bool,
}

impl LabeledOperator {
    pub fn new(systems: Vec<SystemLabel>, data: CMat) -> Result<Self> {
        check_systems(&systems)?;
        let n = total_dim(&systems);
        if data.nrows() != n || data.ncols() != n {
            return Err(TensorError::Dimension(format!(
                "matrix is {}x{}, factors need side {n}",
                data.nrows(),
                data.ncols()
            )));
        }
        let hermitian = hermitian_defect(&data) <= HERMITIAN_TOL;
        Ok(LabeledOperator { systems, data, hermitian })
    }

    pub fn identity(systems: Vec<SystemLabel>) -> Result<Self> {
        let n = total_dim(&systems);
        Self::new(systems, CMat::identity(n, n))
    }

    /// Single-factor operator.
    pub fn single(name: &str, data: CMat) -> Result<Self> {
        let d = data.nrows();
        Self::new(vec![SystemLabel::new(name, d)], data)
    }

    pub fn systems(&self) -> &[SystemLabel] {
        &self.systems
    }

    pub fn data(&self) -> &CMat {
        &self.data
    }

    pub fn into_data(self) -> CMat {
        self.data
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn names(&self) -> Vec<&str> {
        self.systems.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.systems.iter().position(|s| s.name == name).ok_or_else(|| TensorError::UnknownFactor(name.to_string()))
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    /// Replace the data, keeping the factor list.
    pub fn with_data(&self, data: CMat) -> Result<Self> {
        Self::new(self.systems.clone(), data)
    }

    pub fn scale(&self, s: f64) -> Self {
        LabeledOperator {
            systems: self.systems.clone(),
            data: &self.data * C64::new(s, 0.0),
            hermitian: self.hermitian,
        }
    }

    /// Sum of two operators on the same factors (in the same order).
    pub fn add(&self, other: &LabeledOperator) -> Result<Self> {
        if self.systems != other.systems {
            return Err(TensorError::Dimension("factor lists differ".into()));
        }
        self.with_data(&self.data + &other.data)
    }

    /// Re-symmetrize to (M+M†)/2; returns the max-norm of the correction.
    pub fn hermitize(&mut self) -> f64 {
        let defect = hermitian_defect(&self.data);
        self.data = hermitian_part(&self.data);
        self.hermitian = true;
        defect
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.data)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.data)
    }

    /// Bring `self` to the factor order `order`. Returns the permuted operator
    /// together with an audit note when a permutation was actually applied.
    pub fn aligned_to(&self, order: &[SystemLabel]) -> Result<(Self, Option<String>)> {
        if self.systems == order {
            return Ok((self.clone(), None));
        }
        let names: Vec<&str> = order.iter().map(|s| s.name.as_str()).collect();
        let out = permute_systems(self, &names)?;
        if out.systems != order {
            return Err(TensorError::Dimension("factor dimensions differ".into()));
        }
        let note = format!("permuted [{}] -> [{}]", self.names().join(","), names.join(","));
        Ok((out, Some(note)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PureVector {
    pub systems: Vec<SystemLabel>,
    pub data: CVec,
}

impl PureVector {
    pub fn new(systems: Vec<SystemLabel>, data: CVec) -> Result<Self> {
        check_systems(&systems)?;
        if data.len() != total_dim(&systems) {
            return Err(TensorError::Dimension(format!(
                "vector has length {}, factors need {}",
                data.len(),
                total_dim(&systems)
            )));
        }
        Ok(PureVector { systems, data })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// |v⟩⟨v| as a labeled operator.
    pub fn projector(&self) -> LabeledOperator {
        let d = &self.data;
        let m = d * d.adjoint();
        LabeledOperator { systems: self.systems.clone(), data: m, hermitian: true }
    }
}

pub fn tensor(a: &LabeledOperator, b: &LabeledOperator) -> Result<LabeledOperator> {
    let mut systems = a.systems.clone();
    systems.extend(b.systems.iter().cloned());
    check_systems(&systems)?;
    Ok(LabeledOperator { systems, data: a.data.kronecker(&b.data), hermitian: a.hermitian && b.hermitian })
}

pub fn tensor_all(ops: &[&LabeledOperator]) -> Result<LabeledOperator> {
    let mut it = ops.iter();
    let first = it.next().ok_or_else(|| TensorError::Dimension("empty product".into()))?;
    let mut acc = (*first).clone();
    for op in it {
        acc = tensor(&acc, op)?;
    }
    Ok(acc)
}

/// Index bookkeeping for a split of the factors into "kept" and "selected".
/// For every full index it records the mixed-radix index over kept factors
/// and over selected factors.
pub(crate) struct IndexSplit {
    pub kept: Vec<usize>,
    pub sel: Vec<usize>,
    pub kept_dim: usize,
    pub sel_dim: usize,
}

impl IndexSplit {
    pub fn new(dims: &[usize], selected: &[bool]) -> Self {
        let n: usize = dims.iter().product();
        let kept_dim: usize = dims.iter().zip(selected).filter(|(_, &s)| !s).map(|(d, _)| *d).product();
        let sel_dim: usize = dims.iter().zip(selected).filter(|(_, &s)| s).map(|(d, _)| *d).product();
        let mut kept = vec![0; n];
        let mut sel = vec![0; n];
        let mut digits = vec![0usize; dims.len()];
        for idx in 0..n {
            let (mut k, mut s) = (0usize, 0usize);
            for (f, &d) in dims.iter().enumerate() {
                if selected[f] {
                    s = s * d + digits[f];
                } else {
                    k = k * d + digits[f];
                }
            }
            kept[idx] = k;
            sel[idx] = s;
            for f in (0..dims.len()).rev() {
                digits[f] += 1;
                if digits[f] < dims[f] {
                    break;
                }
                digits[f] = 0;
            }
        }
        IndexSplit { kept, sel, kept_dim, sel_dim }
    }
}

fn selection_mask(w: &LabeledOperator, subset: &[&str]) -> Result<Vec<bool>> {
    let mut mask = vec![false; w.systems.len()];
    for name in subset {
        mask[w.index_of(name)?] = true;
    }
    Ok(mask)
}

pub(crate) fn dims_of(systems: &[SystemLabel]) -> Vec<usize> {
    systems.iter().map(|s| s.dim).collect()
}

fn partial_trace_raw(m: &CMat, split: &IndexSplit) -> CMat {
    let n = m.nrows();
    let mut out = CMat::zeros(split.kept_dim, split.kept_dim);
    for c in 0..n {
        let (kc, sc) = (split.kept[c], split.sel[c]);
        for r in 0..n {
            if split.sel[r] == sc {
                out[(split.kept[r], kc)] += m[(r, c)];
            }
        }
    }
    out
}

pub fn partial_trace(w: &LabeledOperator, subset: &[&str]) -> Result<LabeledOperator> {
    let mask = selection_mask(w, subset)?;
    let split = IndexSplit::new(&dims_of(&w.systems), &mask);
    let data = partial_trace_raw(&w.data, &split);
    let systems: Vec<SystemLabel> = w.systems.iter().zip(&mask).filter(|(_, &s)| !s).map(|(l, _)| l.clone()).collect();
    Ok(LabeledOperator { systems, data, hermitian: w.hermitian })
}

/// Trace-and-replace on a raw matrix with a precomputed index split.
pub(crate) fn trace_replace_raw(m: &CMat, split: &IndexSplit) -> CMat {
    if split.sel_dim == 1 {
        return m.clone();
    }
    let reduced = partial_trace_raw(m, split);
    let n = m.nrows();
    let inv = 1.0 / split.sel_dim as f64;
    CMat::from_fn(n, n, |r, c| {
        if split.sel[r] == split.sel[c] {
            reduced[(split.kept[r], split.kept[c])] * inv
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// `(1^X/d_X) ⊗ tr_X W`, with X re-inserted at its original positions.
pub fn trace_and_replace(w: &LabeledOperator, subset: &[&str]) -> Result<LabeledOperator> {
    let mask = selection_mask(w, subset)?;
    let split = IndexSplit::new(&dims_of(&w.systems), &mask);
    Ok(LabeledOperator { systems: w.systems.clone(), data: trace_replace_raw(&w.data, &split), hermitian: w.hermitian })
}

/// Index map for a factor permutation: `map[new_index] = old_index`.
pub(crate) fn permutation_map(systems: &[SystemLabel], perm: &[usize]) -> Vec<usize> {
    let old_dims = dims_of(systems);
    let new_dims: Vec<usize> = perm.iter().map(|&p| old_dims[p]).collect();
    let n: usize = old_dims.iter().product();
    let mut strides = vec![1usize; old_dims.len()];
    for f in (0..old_dims.len().saturating_sub(1)).rev() {
        strides[f] = strides[f + 1] * old_dims[f + 1];
    }
    let mut map = vec![0; n];
    let mut digits = vec![0usize; perm.len()];
    for entry in map.iter_mut() {
        *entry = digits.iter().zip(perm).map(|(&d, &p)| d * strides[p]).sum();
        for f in (0..perm.len()).rev() {
            digits[f] += 1;
            if digits[f] < new_dims[f] {
                break;
            }
            digits[f] = 0;
        }
    }
    map
}

pub fn permute_systems(w: &LabeledOperator, new_order: &[&str]) -> Result<LabeledOperator> {
    if new_order.len() != w.systems.len() {
        return Err(TensorError::NotPermutation);
    }
    let mut perm = Vec::with_capacity(new_order.len());
    for name in new_order {
        let p = w.index_of(name).map_err(|_| TensorError::NotPermutation)?;
        if perm.contains(&p) {
            return Err(TensorError::NotPermutation);
        }
        perm.push(p);
    }
    let map = permutation_map(&w.systems, &perm);
    let n = w.dim();
    let data = CMat::from_fn(n, n, |i, j| w.data[(map[i], map[j])]);
    let systems = perm.iter().map(|&p| w.systems[p].clone()).collect();
    Ok(LabeledOperator { systems, data, hermitian: w.hermitian })
}

pub fn permute_vector(v: &PureVector, new_order: &[&str]) -> Result<PureVector> {
    let mut perm = Vec::new();
    for name in new_order {
        let p = v.systems.iter().position(|s| s.name == *name).ok_or(TensorError::NotPermutation)?;
        perm.push(p);
    }
    if perm.len() != v.systems.len() {
        return Err(TensorError::NotPermutation);
    }
    let map = permutation_map(&v.systems, &perm);
    let data = CVec::from_fn(map.len(), |i, _| v.data[map[i]]);
    PureVector::new(perm.iter().map(|&p| v.systems[p].clone()).collect(), data)
}

// ---------------------------------------------------------------------------
// Choi–Jamiołkowski isomorphism. Input factor first, output factor second.

/// |A*⟩⟩ = (1 ⊗ A*)|𝟙⟩⟩ for A: H_in → H_out (A is d_out × d_in).
pub fn cj_pure(a: &CMat) -> CVec {
    let (d_out, d_in) = (a.nrows(), a.ncols());
    let mut v = CVec::zeros(d_in * d_out);
    for j in 0..d_in {
        for k in 0..d_out {
            v[j * d_out + k] = a[(k, j)].conj();
        }
    }
    v
}

pub fn cj_pure_labeled(a: &CMat, input: &str, output: &str) -> Result<PureVector> {
    PureVector::new(vec![SystemLabel::new(input, a.ncols()), SystemLabel::new(output, a.nrows())], cj_pure(a))
}

/// Inverse of `cj_pure`: A|ψ⟩ = [(⟨ψ| ⊗ 1)|A*⟩⟩]*.
pub fn cj_pure_inverse(v: &CVec, d_in: usize, d_out: usize) -> Result<CMat> {
    if v.len() != d_in * d_out {
        return Err(TensorError::Dimension("CJ vector length".into()));
    }
    Ok(CMat::from_fn(d_out, d_in, |k, j| v[j * d_out + k].conj()))
}

/// Σ_k |K_k*⟩⟩⟨⟨K_k*| on [A_I, A_O].
pub fn cj_from_kraus(kraus: &[CMat]) -> Result<LabeledOperator> {
    let first = kraus.first().ok_or_else(|| TensorError::Dimension("no Kraus operators".into()))?;
    let (d_out, d_in) = (first.nrows(), first.ncols());
    let n = d_in * d_out;
    let mut m = CMat::zeros(n, n);
    for k in kraus {
        if k.nrows() != d_out || k.ncols() != d_in {
            return Err(TensorError::Dimension("inconsistent Kraus shapes".into()));
        }
        let v = cj_pure(k);
        m += &v * v.adjoint();
    }
    LabeledOperator::new(vec![SystemLabel::new("A_I", d_in), SystemLabel::new("A_O", d_out)], m)
}

/// CJ matrix of an arbitrary linear map given by its action:
/// M = Σ_{jk} |k⟩⟨j| ⊗ f(|j⟩⟨k|)^T.
pub fn cj_from_map(d_in: usize, d_out: usize, f: impl Fn(&CMat) -> CMat) -> CMat {
    let n = d_in * d_out;
    let mut m = CMat::zeros(n, n);
    for j in 0..d_in {
        for k in 0..d_in {
            let mut e = CMat::zeros(d_in, d_in);
            e[(j, k)] = C64::new(1.0, 0.0);
            let img = f(&e);
            for a in 0..d_out {
                for b in 0..d_out {
                    m[(k * d_out + a, j * d_out + b)] = img[(b, a)];
                }
            }
        }
    }
    m
}

/// Channel action [tr_in((ρ ⊗ 1)·M)]^T of a CJ matrix on [in, out].
pub fn cj_apply_raw(m: &CMat, rho: &CMat) -> Result<CMat> {
    let d_in = rho.nrows();
    if rho.ncols() != d_in || d_in == 0 || !m.nrows().is_multiple_of(d_in) || m.nrows() != m.ncols() {
        return Err(TensorError::Dimension("state does not match CJ input".into()));
    }
    let d_out = m.nrows() / d_in;
    let mut out = CMat::zeros(d_out, d_out);
    for j in 0..d_in {
        for jp in 0..d_in {
            let r = rho[(j, jp)];
            if r == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..d_out {
                for l in 0..d_out {
                    out[(k, l)] += r * m[(jp * d_out + l, j * d_out + k)];
                }
            }
        }
    }
    Ok(out)
}

pub fn cj_apply(m: &LabeledOperator, rho: &CMat) -> Result<CMat> {
    if m.systems.is_empty() || m.systems[0].dim != rho.nrows() {
        return Err(TensorError::Dimension("state does not match CJ input factor".into()));
    }
    cj_apply_raw(&m.data, rho)
}

/// Haar-random unitary: QR of a complex Ginibre matrix with the phases of
/// R's diagonal pushed into Q.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = CMat::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..dim {
            q[(i, j)] *= ph;
        }
    }
    q
}

/// Random mixed state: partial trace of a Haar-random pure state on d².
pub fn random_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMat {
    let u = haar_unitary(d * d, rng);
    CMat::from_fn(d, d, |i, j| (0..d).map(|e| u[(i * d + e, 0)] * u[(j * d + e, 0)].conj()).sum())
}

/// CJ matrix of a random CPTP map from a Haar-random Stinespring isometry
/// with a d_in-dimensional environment.
pub fn random_channel_cj<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> CMat {
    let k = d_in;
    let u = haar_unitary(d_out * k, rng);
    let mut m = CMat::zeros(d_in * d_out, d_in * d_out);
    for e in 0..k {
        let kraus = CMat::from_fn(d_out, d_in, |o, i| u[(o * k + e, i)]);
        let v = cj_pure(&kraus);
        m += &v * v.adjoint();
    }
    m
}

// ---------------------------------------------------------------------------
// Small fixed matrices.

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn pauli(p: char) -> CMat {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    match p {
        '1' | 'I' => CMat::from_row_slice(2, 2, &[o, z, z, o]),
        'X' => CMat::from_row_slice(2, 2, &[z, o, o, z]),
        'Y' => CMat::from_row_slice(2, 2, &[z, -i, i, z]),
        'Z' => CMat::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => panic!("unknown Pauli label {p}"),
    }
}

/// Kronecker product of Paulis, e.g. "1ZZ1".
pub fn pauli_string(s: &str) -> CMat {
    s.chars().fold(CMat::identity(1, 1), |acc, p| acc.kronecker(&pauli(p)))
}

pub fn ket(d: usize, k: usize) -> CVec {
    let mut v = CVec::zeros(d);
    v[k] = c(1.0, 0.0);
    v
}

pub fn projector(v: &CVec) -> CMat {
    v * v.adjoint()
}

pub fn kron_all(ms: &[CMat]) -> CMat {
    ms.iter().fold(CMat::identity(1, 1), |acc, m| acc.kronecker(m))
}

// ---------------------------------------------------------------------------
// Orthonormal hermitian product basis.

/// Hermitian matrix stored as its nonzero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHerm {
    pub n: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseHerm {
    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.n, self.n);
        for &(r, col, v) in &self.entries {
            m[(r, col)] += v;
        }
        m
    }

    /// Entries with modulus above `cut` times the largest one.
    pub fn from_dense(m: &CMat, cut: f64) -> Self {
        let big = max_abs(m);
        let mut entries = Vec::new();
        for col in 0..m.ncols() {
            for r in 0..m.nrows() {
                let v = m[(r, col)];
                if v.norm() > cut * big && v.norm() > 0.0 {
                    entries.push((r, col, v));
                }
            }
        }
        SparseHerm { n: m.nrows(), entries }
    }

    /// Re tr(self · m).
    pub fn trace_with(&self, m: &CMat) -> f64 {
        self.entries.iter().map(|&(r, col, v)| (v * m[(col, r)]).re).sum()
    }

    pub fn is_real(&self) -> bool {
        self.entries.iter().all(|e| e.2.im == 0.0)
    }
}

/// Generalized Gell-Mann basis of a d-level system, identity/√d first.
/// For d = 2 this is {1, X, Y, Z}/√2.
pub fn gell_mann_basis(d: usize) -> Vec<SparseHerm> {
    let mut out = Vec::with_capacity(d * d);
    let s = 1.0 / (d as f64).sqrt();
    out.push(SparseHerm { n: d, entries: (0..d).map(|i| (i, i, c(s, 0.0))).collect() });
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..d {
        for k in j + 1..d {
            out.push(SparseHerm { n: d, entries: vec![(j, k, c(h, 0.0)), (k, j, c(h, 0.0))] });
        }
    }
    for j in 0..d {
        for k in j + 1..d {
            out.push(SparseHerm { n: d, entries: vec![(j, k, c(0.0, -h)), (k, j, c(0.0, h))] });
        }
    }
    for l in 1..d {
        let norm = 1.0 / ((l * (l + 1)) as f64).sqrt();
        let mut entries: Vec<_> = (0..l).map(|j| (j, j, c(norm, 0.0))).collect();
        entries.push((l, l, c(-(l as f64) * norm, 0.0)));
        out.push(SparseHerm { n: d, entries });
    }
    out
}

/// Orthonormal basis of all hermitian operators on the given factors,
/// built as products of per-factor Gell-Mann elements. Element `k`
/// carries its per-factor labels in `labels[k]` (label 0 = identity).
pub struct ProductBasis {
    pub elements: Vec<SparseHerm>,
    pub labels: Vec<Vec<usize>>,
}

impl ProductBasis {
    pub fn new(systems: &[SystemLabel]) -> Self {
        let per: Vec<Vec<SparseHerm>> = systems.iter().map(|s| gell_mann_basis(s.dim)).collect();
        let mut elements = vec![SparseHerm { n: 1, entries: vec![(0, 0, c(1.0, 0.0))] }];
        let mut labels = vec![Vec::new()];
        for factor in &per {
            let d = factor[0].n;
            let mut next = Vec::with_capacity(elements.len() * factor.len());
            let mut next_labels = Vec::with_capacity(next.capacity());
            for (e, lab) in elements.iter().zip(&labels) {
                for (k, f) in factor.iter().enumerate() {
                    let mut entries = Vec::with_capacity(e.entries.len() * f.entries.len());
                    for &(r1, c1, v1) in &e.entries {
                        for &(r2, c2, v2) in &f.entries {
                            entries.push((r1 * d + r2, c1 * d + c2, v1 * v2));
                        }
                    }
                    next.push(SparseHerm { n: e.n * d, entries });
                    let mut l = lab.clone();
                    l.push(k);
                    next_labels.push(l);
                }
            }
            elements = next;
            labels = next_labels;
        }
        ProductBasis { elements, labels }
    }
}

// ---------------------------------------------------------------------------
// JSON.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorJson {
    pub systems: Vec<SystemLabel>,
    pub matrix: Vec<Vec<[f64; 2]>>,
}

pub fn matrix_to_json(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

pub fn matrix_from_json(rows: &[Vec<[f64; 2]>]) -> Result<CMat> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(TensorError::Json("matrix must be square".into()));
    }
    Ok(CMat::from_fn(n, n, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

impl LabeledOperator {
    pub fn to_json(&self) -> OperatorJson {
        OperatorJson { systems: self.systems.clone(), matrix: matrix_to_json(&self.data) }
    }

    pub fn from_json(j: &OperatorJson) -> Result<Self> {
        Self::new(j.systems.clone(), matrix_from_json(&j.matrix)?)
    }
}
