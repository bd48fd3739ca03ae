//! Homogeneous self-dual interior-point method for real block SDPs
//!
//!   (P) min ⟨C,X⟩  s.t. ⟨A_k,X⟩ = b_k,  X ⪰ 0
//!   (D) max bᵀy    s.t. Z = C − Σ y_k A_k ⪰ 0
//!
//! with Nesterov–Todd scaling and a Mehrotra predictor–corrector. The
//! constraint matrices are sparse; every block is dense.

use super::dense::{self, cholesky_in_place, cholesky_solve, frob_dot, matmul, min_eig, sandwich, RMat};

/// Symmetric sparse matrix; both triangles are stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpSym {
    pub entries: Vec<(u32, u32, f64)>,
}

impl SpSym {
    pub fn dot(&self, x: &RMat) -> f64 {
        self.entries.iter().map(|&(r, c, v)| v * x[(r as usize, c as usize)]).sum()
    }

    pub fn add_to(&self, out: &mut RMat, s: f64) {
        for &(r, c, v) in &self.entries {
            out[(r as usize, c as usize)] += s * v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdBlock {
    pub n: usize,
    pub c: RMat,
    /// Global variable indices, strictly increasing.
    pub vars: Vec<usize>,
    pub a: Vec<SpSym>,
    /// Real embedding of a hermitian block, [[Re, −Im], [Im, Re]].
    pub complex: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdForm {
    pub blocks: Vec<StdBlock>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Optimal,
    /// (P) infeasible: a ray y with bᵀy > 0 and −Σ y_k A_k ⪰ 0.
    PrimalInfeasible,
    /// (D) infeasible: X ⪰ 0 with ⟨A_k,X⟩ = 0 and ⟨C,X⟩ < 0.
    DualInfeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct IpmOutput {
    pub status: IpmStatus,
    pub x: Vec<RMat>,
    pub y: Vec<f64>,
    pub z: Vec<RMat>,
    pub iterations: usize,
    pub pobj: f64,
    pub dobj: f64,
    pub pres: f64,
    pub dres: f64,
    pub gap: f64,
    /// Smallest diagonal regularization used on the Schur complement.
    pub max_regularization: f64,
}

struct Scaling {
    g: RMat,
    ginv: RMat,
    w: RMat,
    lam: Vec<f64>,
}

fn nt_scaling(x: &RMat, z: &RMat) -> Option<Scaling> {
    let n = x.nrows();
    let l = dense::chol_lower(x)?;
    let r = dense::chol_lower(z)?;
    let s = matmul(&r.transpose(), &l);
    let svd = s.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let lam: Vec<f64> = svd.singular_values.iter().copied().collect();
    if lam.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return None;
    }
    let mut lv = matmul(&l, &vt.transpose());
    let mut ginv = matmul(&u.transpose(), &r.transpose());
    for j in 0..n {
        let s = lam[j].sqrt();
        for i in 0..n {
            lv[(i, j)] /= s;
        }
        for k in 0..n {
            ginv[(j, k)] /= s;
        }
    }
    let w = matmul(&lv, &lv.transpose());
    let mut w = w;
    dense::symmetrize(&mut w);
    Some(Scaling { g: lv, ginv, w, lam })
}

pub struct Ipm<'a> {
    p: &'a StdForm,
    m: usize,
}

struct Dir {
    dx: Vec<RMat>,
    dy: Vec<f64>,
    dz: Vec<RMat>,
    dtau: f64,
    dkappa: f64,
}

impl<'a> Ipm<'a> {
    pub fn new(p: &'a StdForm) -> Self {
        Ipm { p, m: p.b.len() }
    }

    fn a_op(&self, x: &[RMat]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (blk, xj) in self.p.blocks.iter().zip(x) {
            for (&k, a) in blk.vars.iter().zip(&blk.a) {
                out[k] += a.dot(xj);
            }
        }
        out
    }

    fn at_op(&self, y: &[f64]) -> Vec<RMat> {
        self.p
            .blocks
            .iter()
            .map(|blk| {
                let mut out = RMat::zeros(blk.n, blk.n);
                for (&k, a) in blk.vars.iter().zip(&blk.a) {
                    if y[k] != 0.0 {
                        a.add_to(&mut out, y[k]);
                    }
                }
                out
            })
            .collect()
    }

    /// M_kl = Σ_j ⟨A_jk, W_j A_jl W_j⟩, upper triangle then mirrored.
    fn schur(&self, sc: &[Scaling]) -> RMat {
        let mut mm = RMat::zeros(self.m, self.m);
        for (blk, s) in self.p.blocks.iter().zip(sc) {
            let n = blk.n;
            if n == 1 {
                let w2 = s.w[(0, 0)] * s.w[(0, 0)];
                let vals: Vec<f64> = blk.a.iter().map(|a| a.entries.iter().map(|e| e.2).sum()).collect();
                for (li, &l) in blk.vars.iter().enumerate() {
                    for (ki, &k) in blk.vars[..=li].iter().enumerate() {
                        mm[(k, l)] += w2 * vals[ki] * vals[li];
                    }
                }
                continue;
            }
            let mut u = RMat::zeros(n, n);
            let mut q = RMat::zeros(n, n);
            for (li, &l) in blk.vars.iter().enumerate() {
                u.fill(0.0);
                // U = W A_l: column r of U gets v·W[:, c] for entry (c, r, v).
                for &(c, r, v) in &blk.a[li].entries {
                    let (c, r) = (c as usize, r as usize);
                    for i in 0..n {
                        u[(i, r)] += v * s.w[(i, c)];
                    }
                }
                q.gemm(1.0, &u, &s.w, 0.0);
                for (ki, &k) in blk.vars[..=li].iter().enumerate() {
                    mm[(k, l)] += blk.a[ki].dot(&q);
                }
            }
        }
        for j in 0..self.m {
            for i in 0..j {
                mm[(j, i)] = mm[(i, j)];
            }
        }
        mm
    }

    pub fn solve(&self, tol: f64, max_iter: usize) -> IpmOutput {
        let p = self.p;
        let nb = p.blocks.len();
        let nu: f64 = p.blocks.iter().map(|b| b.n as f64).sum();
        let mut x: Vec<RMat> = p.blocks.iter().map(|b| RMat::identity(b.n, b.n)).collect();
        let mut z = x.clone();
        let mut y = vec![0.0; self.m];
        let (mut tau, mut kappa) = (1.0f64, 1.0f64);
        let norm_b = p.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_c = p.blocks.iter().map(|b| frob_dot(&b.c, &b.c)).sum::<f64>().sqrt();
        let mut max_reg = 0.0f64;
        let mut best: Option<(f64, IpmOutput)> = None;

        for iter in 0..=max_iter {
            // Residuals of the homogeneous embedding.
            let ax = self.a_op(&x);
            let f1: Vec<f64> = ax.iter().zip(&p.b).map(|(a, b)| a - b * tau).collect();
            let aty = self.at_op(&y);
            let f2: Vec<RMat> = (0..nb).map(|j| &aty[j] + &z[j] - &p.blocks[j].c * tau).collect();
            let cx: f64 = (0..nb).map(|j| frob_dot(&p.blocks[j].c, &x[j])).sum();
            let by: f64 = p.b.iter().zip(&y).map(|(b, y)| b * y).sum();
            let f3 = cx - by + kappa;

            let pobj = cx / tau;
            let dobj = by / tau;
            let pres = f1.iter().map(|v| v * v).sum::<f64>().sqrt() / tau / (1.0 + norm_b);
            let dres = f2.iter().map(|m| frob_dot(m, m)).sum::<f64>().sqrt() / tau / (1.0 + norm_c);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

            let snapshot = |status| IpmOutput {
                status,
                x: x.iter().map(|m| m / tau).collect(),
                y: y.iter().map(|v| v / tau).collect(),
                z: z.iter().map(|m| m / tau).collect(),
                iterations: iter,
                pobj,
                dobj,
                pres,
                dres,
                gap,
                max_regularization: max_reg,
            };
            if pres <= tol && dres <= tol && gap <= tol {
                return snapshot(IpmStatus::Optimal);
            }
            // Infeasibility certificates (unnormalized iterates).
            let inf_tol = 10.0 * tol;
            if by > 0.0 {
                let ray: f64 = (0..nb)
                    .map(|j| {
                        let r = &aty[j] + &z[j];
                        frob_dot(&r, &r)
                    })
                    .sum::<f64>()
                    .sqrt();
                if ray / by <= inf_tol * (1.0 + norm_c) {
                    let mut out = snapshot(IpmStatus::PrimalInfeasible);
                    out.y = y.iter().map(|v| v / by).collect();
                    out.z = z.iter().map(|m| m / by).collect();
                    return out;
                }
            }
            if cx < 0.0 {
                let ray = ax.iter().map(|v| v * v).sum::<f64>().sqrt();
                if ray / (-cx) <= inf_tol * (1.0 + norm_b) {
                    let mut out = snapshot(IpmStatus::DualInfeasible);
                    out.x = x.iter().map(|m| m / (-cx)).collect();
                    return out;
                }
            }
            let merit = pres.max(dres).max(gap);
            if let Some((b, _)) = &best {
                // A late step that throws away several digits rarely recovers.
                if *b < 1e-6 && merit > 1e3 * *b {
                    log::debug!("ipm: residuals jumped from {b:.1e} to {merit:.1e} at iteration {iter}");
                    break;
                }
            }
            if best.as_ref().is_none_or(|(b, _)| merit < *b) {
                best = Some((merit, snapshot(IpmStatus::MaxIter)));
            }
            if iter == max_iter {
                break;
            }

            let sc: Vec<Scaling> = match (0..nb).map(|j| nt_scaling(&x[j], &z[j])).collect::<Option<Vec<_>>>() {
                Some(s) => s,
                None => {
                    log::debug!("ipm: NT scaling failed at iteration {iter}");
                    break;
                }
            };
            let mm = self.schur(&sc);
            let mut reg = 0.0;
            let diag_max = (0..self.m).map(|i| mm[(i, i)]).fold(0.0f64, f64::max).max(1e-300);
            let factor = loop {
                let mut trial = mm.clone();
                for i in 0..self.m {
                    trial[(i, i)] += reg;
                }
                match cholesky_in_place(&mut trial) {
                    Ok(()) => break Some(trial),
                    Err(_) if reg < 1e-6 * diag_max => {
                        reg = if reg == 0.0 { 1e-14 * diag_max } else { reg * 100.0 };
                    }
                    Err(_) => break None,
                }
            };
            let Some(lfac) = factor else {
                log::debug!("ipm: Schur complement not factorizable at iteration {iter}");
                break;
            };
            max_reg = max_reg.max(reg);
            // Near the end M is badly conditioned; a couple of refinement
            // sweeps against the unregularized M recover the lost digits.
            let schur_solve = |rhs: &[f64]| -> Vec<f64> {
                let mut sol = cholesky_solve(&lfac, rhs);
                for _ in 0..2 {
                    let r =
                        nalgebra::DVector::from_column_slice(rhs) - &mm * nalgebra::DVector::from_column_slice(&sol);
                    let d = cholesky_solve(&lfac, r.as_slice());
                    for (s, d) in sol.iter_mut().zip(d) {
                        *s += d;
                    }
                }
                sol
            };

            let wcw: Vec<RMat> = (0..nb).map(|j| sandwich(&sc[j].w, &p.blocks[j].c)).collect();
            let a_vec = self.a_op(&wcw);
            let ua = schur_solve(&a_vec);
            let ub = schur_solve(&p.b);
            let qv: Vec<f64> = ua.iter().zip(&ub).map(|(a, b)| a + b).collect();
            // ⟨C, WCW⟩ − aᵀM⁻¹a is the W-norm of C's residual off the range of Aᵀ.
            // Forming it as a difference loses every digit near the optimum.
            let atua = self.at_op(&ua);
            let atub = self.at_op(&ub);
            let c_res: Vec<RMat> = (0..nb).map(|j| &p.blocks[j].c - &atua[j]).collect();
            let c_off: f64 = (0..nb).map(|j| frob_dot(&c_res[j], &sandwich(&sc[j].w, &c_res[j]))).sum();
            let btub: f64 = p.b.iter().zip(&ub).map(|(b, u)| b * u).sum();
            let den = -c_off - btub - kappa / tau;
            let mu = ((0..nb).map(|j| frob_dot(&x[j], &z[j])).sum::<f64>() + tau * kappa) / (nu + 1.0);

            let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            // Newton system with general right-hand side:
            //   A(dx) − b dτ = r1,  Aᵀdy + dz − C dτ = r2,  ⟨C,dx⟩ − bᵀdy + dκ = r3,
            //   dx + W dz W = r4,  κ dτ + τ dκ = r5.
            let solve_gen = |r1: &[f64], r2: &[RMat], r3: f64, r4: &[RMat], r5: f64| -> Dir {
                let t: Vec<RMat> = (0..nb).map(|j| &r4[j] - sandwich(&sc[j].w, &r2[j])).collect();
                let at = self.a_op(&t);
                let rhs: Vec<f64> = (0..self.m).map(|k| r1[k] - at[k]).collect();
                let pv = schur_solve(&rhs);
                // ⟨C,t⟩ + (a − b)ᵀpv, regrouped around the residual of C.
                let rt: f64 = (0..nb).map(|j| frob_dot(&c_res[j], &t[j]) + frob_dot(&atub[j], &t[j])).sum();
                let dtau = (r3 - rt - dot(&ua, r1) + dot(&ub, r1) - r5 / tau) / den;
                let dy: Vec<f64> = pv.iter().zip(&qv).map(|(p, q)| p + dtau * q).collect();
                let atdy = self.at_op(&dy);
                let dz: Vec<RMat> = (0..nb).map(|j| &r2[j] - &atdy[j] + &p.blocks[j].c * dtau).collect();
                let dx: Vec<RMat> = (0..nb).map(|j| &r4[j] - sandwich(&sc[j].w, &dz[j])).collect();
                let dkappa = (r5 - kappa * dtau) / tau;
                Dir { dx, dy, dz, dtau, dkappa }
            };
            let solve_dir = |eta: f64, rc: &[RMat], r5: f64| -> Dir {
                let r4: Vec<RMat> = (0..nb)
                    .map(|j| {
                        let s = &sc[j];
                        let n = s.lam.len();
                        let d = RMat::from_fn(n, n, |i, k| 2.0 * rc[j][(i, k)] / (s.lam[i] + s.lam[k]));
                        sandwich_g(&s.g, &d)
                    })
                    .collect();
                let r1: Vec<f64> = f1.iter().map(|v| -eta * v).collect();
                let r2: Vec<RMat> = f2.iter().map(|m| m * (-eta)).collect();
                let r3 = -eta * f3;
                solve_gen(&r1, &r2, r3, &r4, r5)
            };

            let step = |d: &Dir| -> f64 {
                let mut alpha = f64::INFINITY;
                for (j, s) in sc.iter().enumerate() {
                    let n = s.lam.len();
                    let xt = sandwich_g(&s.ginv, &d.dx[j]);
                    let zt = sandwich_g(&s.g.transpose(), &d.dz[j]);
                    let sx = RMat::from_fn(n, n, |i, k| xt[(i, k)] / (s.lam[i] * s.lam[k]).sqrt());
                    let sz = RMat::from_fn(n, n, |i, k| zt[(i, k)] / (s.lam[i] * s.lam[k]).sqrt());
                    for e in [min_eig(&sx), min_eig(&sz)] {
                        if e < 0.0 {
                            alpha = alpha.min(-1.0 / e);
                        }
                    }
                }
                if d.dtau < 0.0 {
                    alpha = alpha.min(-tau / d.dtau);
                }
                if d.dkappa < 0.0 {
                    alpha = alpha.min(-kappa / d.dkappa);
                }
                alpha
            };

            // Predictor.
            let rc_aff: Vec<RMat> = sc
                .iter()
                .map(|s| {
                    RMat::from_diagonal(&nalgebra::DVector::from_iterator(s.lam.len(), s.lam.iter().map(|l| -l * l)))
                })
                .collect();
            let aff = solve_dir(1.0, &rc_aff, -tau * kappa);
            let alpha_aff = step(&aff).min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

            // Corrector.
            let rc: Vec<RMat> = (0..nb)
                .map(|j| {
                    let s = &sc[j];
                    let n = s.lam.len();
                    let xt = sandwich_g(&s.ginv, &aff.dx[j]);
                    let zt = sandwich_g(&s.g.transpose(), &aff.dz[j]);
                    let xz = matmul(&xt, &zt);
                    RMat::from_fn(n, n, |i, k| {
                        let base = if i == k { sigma * mu - s.lam[i] * s.lam[i] } else { 0.0 };
                        base - 0.5 * (xz[(i, k)] + xz[(k, i)])
                    })
                })
                .collect();
            let r5 = sigma * mu - tau * kappa - aff.dtau * aff.dkappa;
            let dir = solve_dir(1.0 - sigma, &rc, r5);
            let alpha = (0.99 * step(&dir)).min(1.0);

            for j in 0..nb {
                x[j] += &dir.dx[j] * alpha;
                z[j] += &dir.dz[j] * alpha;
                dense::symmetrize(&mut x[j]);
                dense::symmetrize(&mut z[j]);
                if p.blocks[j].complex {
                    // Rounding leaks into the anti-hermitian part, along which
                    // the embedded problem is degenerate.
                    project_complex(&mut x[j]);
                    project_complex(&mut z[j]);
                }
            }
            for (yk, dk) in y.iter_mut().zip(&dir.dy) {
                *yk += alpha * dk;
            }
            tau += alpha * dir.dtau;
            kappa += alpha * dir.dkappa;
        }
        best.map(|(_, o)| o).expect("at least one iterate")
    }
}

fn project_complex(m: &mut RMat) {
    let h = m.nrows() / 2;
    for i in 0..h {
        for k in 0..h {
            let re = 0.5 * (m[(i, k)] + m[(i + h, k + h)]);
            let im = 0.5 * (m[(i + h, k)] - m[(i, k + h)]);
            m[(i, k)] = re;
            m[(i + h, k + h)] = re;
            m[(i + h, k)] = im;
            m[(i, k + h)] = -im;
        }
    }
}

/// g·d·gᵀ.
fn sandwich_g(g: &RMat, d: &RMat) -> RMat {
    let t = matmul(g, d);
    let mut out = RMat::zeros(g.nrows(), g.nrows());
    out.gemm(1.0, &t, &g.transpose(), 0.0);
    dense::symmetrize(&mut out);
    out
}
