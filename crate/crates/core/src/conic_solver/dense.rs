//! Dense real kernels for the interior-point method.

use nalgebra::DMatrix;

pub type RMat = DMatrix<f64>;

const NB: usize = 64;

/// In-place lower Cholesky factor of a symmetric positive definite matrix.
/// Only the lower triangle of the result is meaningful. Right-looking and
/// blocked so the trailing update runs through gemm.
pub fn cholesky_in_place(a: &mut RMat) -> Result<(), usize> {
    let n = a.nrows();
    let mut k0 = 0;
    while k0 < n {
        let b = NB.min(n - k0);
        // Diagonal block, unblocked.
        for j in k0..k0 + b {
            let mut d = a[(j, j)];
            for p in k0..j {
                d -= a[(j, p)] * a[(j, p)];
            }
            if !(d.is_finite() && d > 0.0) {
                return Err(j);
            }
            let d = d.sqrt();
            a[(j, j)] = d;
            for i in j + 1..k0 + b {
                let mut s = a[(i, j)];
                for p in k0..j {
                    s -= a[(i, p)] * a[(j, p)];
                }
                a[(i, j)] = s / d;
            }
        }
        let r0 = k0 + b;
        if r0 == n {
            break;
        }
        let r = n - r0;
        // Panel: A21 ← A21 L11^{-T}, column by column.
        for j in k0..k0 + b {
            let djj = a[(j, j)];
            for p in k0..j {
                let ljp = a[(j, p)];
                if ljp != 0.0 {
                    for i in r0..n {
                        let v = a[(i, p)];
                        a[(i, j)] -= v * ljp;
                    }
                }
            }
            for i in r0..n {
                a[(i, j)] /= djj;
            }
        }
        // Trailing update A22 ← A22 − A21 A21ᵀ.
        let panel = a.view((r0, k0), (r, b)).clone_owned();
        let panel_t = panel.transpose();
        let mut trailing = a.view_mut((r0, r0), (r, r));
        trailing.gemm(-1.0, &panel, &panel_t, 1.0);
        k0 += b;
    }
    Ok(())
}

/// Solves L Lᵀ x = rhs given the factor from `cholesky_in_place`.
pub fn cholesky_solve(l: &RMat, rhs: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut x = rhs.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Lower Cholesky factor of a small dense SPD block (no blocking).
pub fn chol_lower(a: &RMat) -> Option<RMat> {
    let mut l = a.clone();
    cholesky_in_place(&mut l).ok()?;
    let n = l.nrows();
    for j in 0..n {
        for i in 0..j {
            l[(i, j)] = 0.0;
        }
    }
    Some(l)
}

pub fn symmetrize(a: &mut RMat) {
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn frob_dot(a: &RMat, b: &RMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// a·b·a for symmetric a and b, via two gemms.
pub fn sandwich(a: &RMat, b: &RMat) -> RMat {
    let n = a.nrows();
    let mut t = RMat::zeros(n, n);
    t.gemm(1.0, a, b, 0.0);
    let mut out = RMat::zeros(n, n);
    out.gemm(1.0, &t, a, 0.0);
    symmetrize(&mut out);
    out
}

pub fn matmul(a: &RMat, b: &RMat) -> RMat {
    let mut out = RMat::zeros(a.nrows(), b.ncols());
    out.gemm(1.0, a, b, 0.0);
    out
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(a: &RMat) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    let mut s = a.clone();
    symmetrize(&mut s);
    let ev = s.clone().symmetric_eigenvalues();
    if ev.iter().all(|x| x.is_finite()) {
        return ev.iter().copied().fold(f64::INFINITY, f64::min);
    }
    // Same breakdown workaround as in tensor_ops: rotate by a fixed orthogonal matrix.
    let n = s.nrows();
    let mut state = 0x9e3779b97f4a7c15u64;
    let g = RMat::from_fn(n, n, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    });
    let q = g.qr().q();
    let mut r = q.transpose() * &s * &q;
    symmetrize(&mut r);
    r.symmetric_eigenvalues().iter().copied().fold(f64::NAN, f64::min)
}
