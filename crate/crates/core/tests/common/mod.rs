#![allow(dead_code)]

use causalwit::process_space::{lv_poly, PartyLayout, ProcessMatrix};
use causalwit::tensor_ops::{c, haar_unitary, CMat, LabeledOperator, SystemLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn q(name: &str) -> SystemLabel {
    SystemLabel::new(name, 2)
}

pub fn ginibre<R: Rng>(n: usize, m: usize, rng: &mut R) -> CMat {
    CMat::from_fn(n, m, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im)
    })
}

pub fn random_herm<R: Rng>(n: usize, rng: &mut R) -> CMat {
    let g = ginibre(n, n, rng);
    (&g + g.adjoint()) * c(0.5, 0.0)
}

pub fn random_psd<R: Rng>(n: usize, rng: &mut R) -> CMat {
    let g = ginibre(n, n, rng);
    &g * g.adjoint()
}

pub fn random_density<R: Rng>(n: usize, rng: &mut R) -> CMat {
    let p = random_psd(n, rng);
    let t = p.trace();
    p / t
}

pub fn random_unitary<R: Rng>(n: usize, rng: &mut R) -> CMat {
    haar_unitary(n, rng)
}

pub fn max_diff(a: &CMat, b: &CMat) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// A random valid process: white noise plus a small random element of the
/// valid subspace, scaled to stay positive.
pub fn random_valid_process<R: Rng>(layout: &PartyLayout, rng: &mut R) -> ProcessMatrix {
    let sys = layout.systems();
    let n: usize = sys.iter().map(|s| s.dim).product();
    let d_i = layout.d_i() as f64;
    let h = random_herm(n, rng);
    let mut x = lv_poly(layout, &sys).apply_raw(&sys, &h);
    let t = x.trace() / c(n as f64, 0.0);
    for i in 0..n {
        x[(i, i)] -= t;
    }
    let eig = causalwit::tensor_ops::hermitian_eigenvalues(&x);
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = rng.random::<f64>() * (1.0 / d_i) / lo.abs().max(1e-12);
    let w = CMat::identity(n, n) * c(1.0 / d_i, 0.0) + x * c(scale, 0.0);
    ProcessMatrix::new(LabeledOperator::new(sys, w).unwrap(), layout.clone()).unwrap()
}
