//! Primal-dual interior-point method with Mehrotra predictor-corrector and a
//! Riccati-structured KKT factorization (O(N) per iteration in the horizon
//! length).

use super::{KktResiduals, QpProblem, QpSolution, QpStatus};
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// On-demand Hessian regularization, escalated on factorization failure.
    pub reg_init: f64,
    pub reg_max: f64,
    /// Fraction-to-boundary scaling.
    pub step_frac: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 50,
            reg_init: 1e-6,
            reg_max: 1e-2,
            step_frac: 0.995,
        }
    }
}

/// Per-stage matrix factorization of one IP iteration (shared between the
/// predictor and corrector vector solves).
struct StageFactor {
    r_chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    /// F_ux = S_bar + B^T P_next A.
    f_ux: DMatrix<f64>,
    /// Riccati gain K = -F_uu^-1 F_ux.
    gain: DMatrix<f64>,
    /// Cost-to-go matrix.
    p: DMatrix<f64>,
}

pub struct QpSolver {
    pub settings: QpSettings,
}

impl Default for QpSolver {
    fn default() -> Self {
        Self {
            settings: QpSettings::default(),
        }
    }
}

struct Iterate {
    xs: Vec<DVector<f64>>,
    us: Vec<DVector<f64>>,
    nu: Vec<DVector<f64>>,
    lam: Vec<DVector<f64>>,
    t: Vec<DVector<f64>>,
}

struct Direction {
    dx: Vec<DVector<f64>>,
    du: Vec<DVector<f64>>,
    dnu: Vec<DVector<f64>>,
    dlam: Vec<DVector<f64>>,
    dt: Vec<DVector<f64>>,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&mut self, prob: &QpProblem, warm: Option<&QpSolution>) -> QpSolution {
        let n = prob.stages.len();
        assert!(n >= 1, "empty problem");
        let nc_total: usize = prob.total_inequalities();

        let warm_ok = |w: &QpSolution| {
            w.xs.len() == n
                && prob.stages.iter().enumerate().all(|(k, s)| {
                    w.xs[k].len() == s.nx()
                        && w.us[k].len() == s.nu()
                        && w.lam[k].len() == s.nc()
                        && w.slacks[k].len() == s.nc()
                })
        };
        // Initial iterate.
        let mut it = match warm {
            Some(w) if warm_ok(w) => Iterate {
                xs: w.xs.clone(),
                us: w.us.clone(),
                nu: w.nu.clone(),
                lam: w
                    .lam
                    .iter()
                    .map(|l| l.map(|v| v.max(1e-8)))
                    .collect(),
                t: w.slacks.iter().map(|t| t.map(|v| v.max(1e-8))).collect(),
            },
            _ => {
                let xs: Vec<_> = prob.stages.iter().map(|s| DVector::zeros(s.nx())).collect();
                let us: Vec<_> = prob.stages.iter().map(|s| DVector::zeros(s.nu())).collect();
                let nu: Vec<_> = prob.stages.iter().map(|s| DVector::zeros(s.nx())).collect();
                let mut lam = Vec::with_capacity(n);
                let mut t = Vec::with_capacity(n);
                for (k, st) in prob.stages.iter().enumerate() {
                    let resid = &st.ub - &st.cx * &xs[k] - &st.cu * &us[k];
                    t.push(resid.map(|v| v.max(1.0)));
                    lam.push(DVector::from_element(st.nc(), 1.0));
                }
                Iterate { xs, us, nu, lam, t }
            }
        };

        let mut reg = 0.0_f64;
        let mut iterations = 0;
        let mut status = QpStatus::MaxIterations;

        for iter in 0..self.settings.max_iters {
            iterations = iter;
            let kkt = self.residuals(prob, &it);
            let mu = if nc_total > 0 {
                it.lam
                    .iter()
                    .zip(&it.t)
                    .map(|(l, t)| l.dot(t))
                    .sum::<f64>()
                    / nc_total as f64
            } else {
                0.0
            };
            if kkt.max() <= self.settings.tol && mu <= self.settings.tol {
                status = QpStatus::Converged;
                break;
            }

            // Factor once per iteration; reuse for predictor and corrector.
            let factors = loop {
                match self.factorize(prob, &it, reg) {
                    Some(f) => break Some(f),
                    None => {
                        reg = if reg == 0.0 {
                            self.settings.reg_init
                        } else {
                            reg * 10.0
                        };
                        if reg > self.settings.reg_max {
                            break None;
                        }
                    }
                }
            };
            let factors = match factors {
                Some(f) => f,
                None => {
                    status = QpStatus::NumericalFailure;
                    break;
                }
            };

            // Predictor (affine) direction: r_comp = lam . t.
            let r_comp_aff: Vec<DVector<f64>> = it
                .lam
                .iter()
                .zip(&it.t)
                .map(|(l, t)| l.component_mul(t))
                .collect();
            let aff = self.solve_newton(prob, &it, &factors, &r_comp_aff);
            let (ap_aff, ad_aff) = step_lengths(&it, &aff, 1.0);
            let mu_aff = if nc_total > 0 {
                let mut acc = 0.0;
                for k in 0..n {
                    let lt = (&it.lam[k] + ad_aff * &aff.dlam[k])
                        .dot(&(&it.t[k] + ap_aff * &aff.dt[k]));
                    acc += lt;
                }
                acc / nc_total as f64
            } else {
                0.0
            };
            let sigma = if mu > 0.0 {
                (mu_aff / mu).powi(3).clamp(0.0, 1.0)
            } else {
                0.0
            };

            // Corrector: r_comp = lam . t + dlam_aff . dt_aff - sigma mu.
            let r_comp_cc: Vec<DVector<f64>> = (0..n)
                .map(|k| {
                    let mut rc = it.lam[k].component_mul(&it.t[k]);
                    rc += aff.dlam[k].component_mul(&aff.dt[k]);
                    rc.add_scalar_mut(-sigma * mu);
                    rc
                })
                .collect();
            let dir = self.solve_newton(prob, &it, &factors, &r_comp_cc);
            let (ap, ad) = step_lengths(&it, &dir, self.settings.step_frac);

            for k in 0..n {
                it.xs[k] += ap * &dir.dx[k];
                it.us[k] += ap * &dir.du[k];
                it.t[k] += ap * &dir.dt[k];
                it.nu[k] += ad * &dir.dnu[k];
                it.lam[k] += ad * &dir.dlam[k];
            }
        }

        let kkt = self.residuals(prob, &it);
        if status != QpStatus::Converged && kkt.max() <= self.settings.tol {
            status = QpStatus::Converged;
        }
        QpSolution {
            xs: it.xs,
            us: it.us,
            lam: it.lam,
            slacks: it.t,
            nu: it.nu,
            status,
            iterations,
            kkt,
        }
    }

    fn residuals(&self, prob: &QpProblem, it: &Iterate) -> KktResiduals {
        let n = prob.stages.len();
        let mut stat: f64 = 0.0;
        let mut eq: f64 = 0.0;
        let mut ineq: f64 = 0.0;
        let mut comp: f64 = 0.0;
        if let Some(x0) = &prob.x0 {
            eq = eq.max((&it.xs[0] - x0).amax());
        }
        for (k, st) in prob.stages.iter().enumerate() {
            let mut rx = &st.q * &it.xs[k] + st.s.transpose() * &it.us[k] + &st.q_lin
                + st.cx.transpose() * &it.lam[k];
            if k > 0 || prob.x0.is_some() {
                rx -= &it.nu[k];
            }
            let mut ru = &st.s * &it.xs[k] + &st.r * &it.us[k] + &st.r_lin
                + st.cu.transpose() * &it.lam[k];
            if k + 1 < n {
                rx += st.a.transpose() * &it.nu[k + 1];
                ru += st.b.transpose() * &it.nu[k + 1];
                let rdyn = &st.a * &it.xs[k] + &st.b * &it.us[k] + &st.c - &it.xs[k + 1];
                eq = eq.max(rdyn.amax());
            }
            stat = stat.max(rx.amax());
            if st.nu() > 0 {
                stat = stat.max(ru.amax());
            }
            if st.nc() > 0 {
                let ri = &st.cx * &it.xs[k] + &st.cu * &it.us[k] + &it.t[k] - &st.ub;
                ineq = ineq.max(ri.amax());
                comp = comp.max(it.lam[k].component_mul(&it.t[k]).amax());
            }
        }
        KktResiduals {
            stationarity: stat,
            eq_feasibility: eq,
            ineq_feasibility: ineq,
            complementarity: comp,
        }
    }

    /// Backward Riccati pass over the barrier-augmented cost matrices.
    fn factorize(&self, prob: &QpProblem, it: &Iterate, reg: f64) -> Option<Vec<StageFactor>> {
        let n = prob.stages.len();
        let mut factors: Vec<Option<StageFactor>> = (0..n).map(|_| None).collect();
        let mut p_next: Option<DMatrix<f64>> = None;

        for k in (0..n).rev() {
            let st = &prob.stages[k];
            let w: DVector<f64> = it.lam[k].component_div(&it.t[k]);
            // Barrier augmentation: H += C^T diag(w) C.
            let mut q_bar = st.q.clone();
            let mut s_bar = st.s.clone();
            let mut r_bar = st.r.clone();
            for i in 0..st.nc() {
                let wi = w[i];
                if wi == 0.0 {
                    continue;
                }
                let cxr = st.cx.row(i);
                let cur = st.cu.row(i);
                q_bar.ger(wi, &cxr.transpose(), &cxr.transpose(), 1.0);
                r_bar.ger(wi, &cur.transpose(), &cur.transpose(), 1.0);
                s_bar.ger(wi, &cur.transpose(), &cxr.transpose(), 1.0);
            }
            for i in 0..r_bar.nrows() {
                r_bar[(i, i)] += reg;
            }

            let (f_uu, f_ux, p) = match &p_next {
                Some(pn) => {
                    let pa = pn * &st.a;
                    let pb = pn * &st.b;
                    let f_uu = &r_bar + st.b.transpose() * &pb;
                    let f_ux = &s_bar + st.b.transpose() * &pa;
                    let p_partial = &q_bar + st.a.transpose() * &pa;
                    (f_uu, f_ux, p_partial)
                }
                None => (r_bar.clone(), s_bar.clone(), q_bar.clone()),
            };

            let (chol, gain, p_new) = if st.nu() > 0 {
                let chol = Cholesky::new(f_uu)?;
                let gain = -chol.solve(&f_ux);
                let p_new = &p + f_ux.transpose() * &gain;
                (Some(chol), gain, p_new)
            } else {
                (None, DMatrix::zeros(0, st.nx()), p.clone())
            };
            // Symmetrize cost-to-go against drift.
            let p_sym = (&p_new + p_new.transpose()) * 0.5;
            p_next = Some(p_sym.clone());
            factors[k] = Some(StageFactor {
                r_chol: chol,
                f_ux,
                gain,
                p: p_sym,
            });
        }
        Some(factors.into_iter().map(|f| f.unwrap()).collect())
    }

    /// Vector backward/forward pass for one right-hand side.
    fn solve_newton(
        &self,
        prob: &QpProblem,
        it: &Iterate,
        factors: &[StageFactor],
        r_comp: &[DVector<f64>],
    ) -> Direction {
        let n = prob.stages.len();
        // Residual vectors of the current iterate.
        let mut rx: Vec<DVector<f64>> = Vec::with_capacity(n);
        let mut ru: Vec<DVector<f64>> = Vec::with_capacity(n);
        let mut rdyn: Vec<DVector<f64>> = Vec::with_capacity(n.saturating_sub(1));
        let mut rineq: Vec<DVector<f64>> = Vec::with_capacity(n);
        for (k, st) in prob.stages.iter().enumerate() {
            let mut rxk = &st.q * &it.xs[k] + st.s.transpose() * &it.us[k] + &st.q_lin
                + st.cx.transpose() * &it.lam[k];
            if k > 0 || prob.x0.is_some() {
                rxk -= &it.nu[k];
            }
            let mut ruk = &st.s * &it.xs[k] + &st.r * &it.us[k] + &st.r_lin
                + st.cu.transpose() * &it.lam[k];
            if k + 1 < n {
                rxk += st.a.transpose() * &it.nu[k + 1];
                ruk += st.b.transpose() * &it.nu[k + 1];
                rdyn.push(&st.a * &it.xs[k] + &st.b * &it.us[k] + &st.c - &it.xs[k + 1]);
            }
            rineq.push(&st.cx * &it.xs[k] + &st.cu * &it.us[k] + &it.t[k] - &st.ub);
            rx.push(rxk);
            ru.push(ruk);
        }

        // Fold the inequality elimination into the cost gradients:
        // g += C^T T^-1 (lam . r_ineq - r_comp).
        let mut gx: Vec<DVector<f64>> = Vec::with_capacity(n);
        let mut gu: Vec<DVector<f64>> = Vec::with_capacity(n);
        for (k, st) in prob.stages.iter().enumerate() {
            let mut gxk = rx[k].clone();
            let mut guk = ru[k].clone();
            if st.nc() > 0 {
                let tinv_term = DVector::from_fn(st.nc(), |i, _| {
                    (it.lam[k][i] * rineq[k][i] - r_comp[k][i]) / it.t[k][i]
                });
                gxk += st.cx.transpose() * &tinv_term;
                guk += st.cu.transpose() * &tinv_term;
            }
            gx.push(gxk);
            gu.push(guk);
        }

        // Backward vector pass: p_vec_k = g_x + A^T (P c_hat + p_next) + F_ux^T kff.
        let mut p_vec: Vec<DVector<f64>> = vec![DVector::zeros(0); n];
        let mut kff: Vec<DVector<f64>> = vec![DVector::zeros(0); n];
        for k in (0..n).rev() {
            let st = &prob.stages[k];
            let f = &factors[k];
            let (f_u, q_vec) = if k + 1 < n {
                let chat = &rdyn[k];
                let pc_p = &factors[k + 1].p * chat + &p_vec[k + 1];
                let f_u = &gu[k] + st.b.transpose() * &pc_p;
                let q_vec = &gx[k] + st.a.transpose() * &pc_p;
                (f_u, q_vec)
            } else {
                (gu[k].clone(), gx[k].clone())
            };
            if st.nu() > 0 {
                let kf = -f.r_chol.as_ref().unwrap().solve(&f_u);
                p_vec[k] = q_vec + f.f_ux.transpose() * &kf;
                kff[k] = kf;
            } else {
                p_vec[k] = q_vec;
                kff[k] = DVector::zeros(0);
            }
        }

        // Forward pass. A free first state minimizes the cost-to-go directly.
        let mut dx: Vec<DVector<f64>> = vec![DVector::zeros(0); n];
        let mut du: Vec<DVector<f64>> = vec![DVector::zeros(0); n];
        let mut dnu: Vec<DVector<f64>> = vec![DVector::zeros(0); n];
        dx[0] = match &prob.x0 {
            Some(x0) => x0 - &it.xs[0],
            None => match Cholesky::new(factors[0].p.clone()) {
                Some(chol) => -chol.solve(&p_vec[0]),
                None => DVector::zeros(prob.stages[0].nx()),
            },
        };
        for k in 0..n {
            let st = &prob.stages[k];
            let f = &factors[k];
            du[k] = if st.nu() > 0 {
                &f.gain * &dx[k] + &kff[k]
            } else {
                DVector::zeros(0)
            };
            dnu[k] = if k == 0 && prob.x0.is_none() {
                DVector::zeros(st.nx())
            } else {
                &f.p * &dx[k] + &p_vec[k]
            };
            if k + 1 < n {
                dx[k + 1] = &st.a * &dx[k] + &st.b * &du[k] + &rdyn[k];
            }
        }

        // Recover dt and dlam.
        let mut dt: Vec<DVector<f64>> = Vec::with_capacity(n);
        let mut dlam: Vec<DVector<f64>> = Vec::with_capacity(n);
        for (k, st) in prob.stages.iter().enumerate() {
            if st.nc() == 0 {
                dt.push(DVector::zeros(0));
                dlam.push(DVector::zeros(0));
                continue;
            }
            let dtk = -(&rineq[k] + &st.cx * &dx[k] + &st.cu * &du[k]);
            let dlamk = DVector::from_fn(st.nc(), |i, _| {
                -(r_comp[k][i] + it.lam[k][i] * dtk[i]) / it.t[k][i]
            });
            dt.push(dtk);
            dlam.push(dlamk);
        }

        Direction {
            dx,
            du,
            dnu,
            dlam,
            dt,
        }
    }
}

fn step_lengths(it: &Iterate, dir: &Direction, frac: f64) -> (f64, f64) {
    let mut ap = 1.0_f64;
    let mut ad = 1.0_f64;
    for k in 0..it.t.len() {
        for i in 0..it.t[k].len() {
            if dir.dt[k][i] < 0.0 {
                ap = ap.min(-it.t[k][i] / dir.dt[k][i] * frac);
            }
            if dir.dlam[k][i] < 0.0 {
                ad = ad.min(-it.lam[k][i] / dir.dlam[k][i] * frac);
            }
        }
    }
    (ap.min(1.0), ad.min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn stage(
        nx: usize,
        nu: usize,
        q: Vec<f64>,
        r: Vec<f64>,
    ) -> super::super::QpStage {
        super::super::QpStage {
            q: DMatrix::from_row_slice(nx, nx, &q),
            s: DMatrix::zeros(nu, nx),
            r: DMatrix::from_row_slice(nu, nu, &r),
            q_lin: DVector::zeros(nx),
            r_lin: DVector::zeros(nu),
            a: DMatrix::zeros(0, nx),
            b: DMatrix::zeros(0, nu),
            c: DVector::zeros(0),
            cx: DMatrix::zeros(0, nx),
            cu: DMatrix::zeros(0, nu),
            ub: DVector::zeros(0),
        }
    }

    #[test]
    fn scalar_bound_qp_by_hand() {
        // min x^2 s.t. x >= 1: x* = 1, multiplier 2.
        let mut st = stage(1, 0, vec![2.0], vec![]);
        st.cx = DMatrix::from_row_slice(1, 1, &[-1.0]);
        st.cu = DMatrix::zeros(1, 0);
        st.ub = DVector::from_column_slice(&[-1.0]);
        let prob = QpProblem {
            stages: vec![st],
            x0: None,
        };
        let mut solver = QpSolver::default();
        let sol = solver.solve(&prob, None);
        assert_eq!(sol.status, QpStatus::Converged);
        assert_relative_eq!(sol.xs[0][0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.lam[0][0], 2.0, epsilon = 1e-6);
    }

    /// Dense KKT oracle for an equality-constrained (unconstrained in the
    /// inequality sense) two-stage LQR problem.
    #[test]
    fn two_stage_lqr_matches_dense_kkt() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.005, 0.1]);
        let c = DVector::from_column_slice(&[0.02, -0.01]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.2, 0.2, 1.0]);
        let r = DMatrix::from_row_slice(1, 1, &[0.5]);
        let x0 = DVector::from_column_slice(&[1.0, -0.5]);
        let q_lin = DVector::from_column_slice(&[0.1, -0.3]);

        let st0 = super::super::QpStage {
            q: q.clone(),
            s: DMatrix::zeros(1, 2),
            r: r.clone(),
            q_lin: q_lin.clone(),
            r_lin: DVector::zeros(1),
            a: a.clone(),
            b: b.clone(),
            c: c.clone(),
            cx: DMatrix::zeros(0, 2),
            cu: DMatrix::zeros(0, 1),
            ub: DVector::zeros(0),
        };
        let st1 = super::super::QpStage {
            q: q.clone(),
            s: DMatrix::zeros(0, 2),
            r: DMatrix::zeros(0, 0),
            q_lin: q_lin.clone(),
            r_lin: DVector::zeros(0),
            a: DMatrix::zeros(0, 2),
            b: DMatrix::zeros(0, 0),
            c: DVector::zeros(0),
            cx: DMatrix::zeros(0, 2),
            cu: DMatrix::zeros(0, 0),
            ub: DVector::zeros(0),
        };
        let prob = QpProblem {
            stages: vec![st0, st1],
            x0: Some(x0.clone()),
        };
        let mut solver = QpSolver::default();
        let sol = solver.solve(&prob, None);
        assert_eq!(sol.status, QpStatus::Converged);

        // Dense KKT: variables z = (x0, u0, x1), equalities x0 = x0bar and
        // x1 = A x0 + B u0 + c.
        let nz = 2 + 1 + 2;
        let ne = 2 + 2;
        let mut h = DMatrix::<f64>::zeros(nz, nz);
        h.view_mut((0, 0), (2, 2)).copy_from(&q);
        h.view_mut((2, 2), (1, 1)).copy_from(&r);
        h.view_mut((3, 3), (2, 2)).copy_from(&q);
        let mut g = DVector::<f64>::zeros(nz);
        g.rows_mut(0, 2).copy_from(&q_lin);
        g.rows_mut(3, 2).copy_from(&q_lin);
        let mut e = DMatrix::<f64>::zeros(ne, nz);
        e.view_mut((0, 0), (2, 2)).copy_from(&DMatrix::identity(2, 2));
        e.view_mut((2, 0), (2, 2)).copy_from(&a);
        e.view_mut((2, 2), (2, 1)).copy_from(&b);
        e.view_mut((2, 3), (2, 2)).copy_from(&(-DMatrix::<f64>::identity(2, 2)));
        let mut rhs_e = DVector::<f64>::zeros(ne);
        rhs_e.rows_mut(0, 2).copy_from(&x0);
        rhs_e.rows_mut(2, 2).copy_from(&(-&c));
        let mut kkt = DMatrix::<f64>::zeros(nz + ne, nz + ne);
        kkt.view_mut((0, 0), (nz, nz)).copy_from(&h);
        kkt.view_mut((0, nz), (nz, ne)).copy_from(&e.transpose());
        kkt.view_mut((nz, 0), (ne, nz)).copy_from(&e);
        let mut rhs = DVector::<f64>::zeros(nz + ne);
        rhs.rows_mut(0, nz).copy_from(&(-g));
        rhs.rows_mut(nz, ne).copy_from(&rhs_e);
        let z = kkt.lu().solve(&rhs).expect("dense solve");

        assert_relative_eq!(sol.xs[0][0], z[0], epsilon = 1e-10);
        assert_relative_eq!(sol.xs[0][1], z[1], epsilon = 1e-10);
        assert_relative_eq!(sol.us[0][0], z[2], epsilon = 1e-10);
        assert_relative_eq!(sol.xs[1][0], z[3], epsilon = 1e-10);
        assert_relative_eq!(sol.xs[1][1], z[4], epsilon = 1e-10);
    }

    fn random_stagewise_qp(seed: u64, n_stages: usize, nx: usize, nu: usize) -> QpProblem {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        for k in 0..n_stages {
            let last = k == n_stages - 1;
            let nuk = if last { 0 } else { nu };
            // PD cost via L L^T + diag.
            let l = DMatrix::from_fn(nx, nx, |_, _| rng.gen_range(-0.5..0.5));
            let mut q = &l * l.transpose();
            for i in 0..nx {
                q[(i, i)] += 1.0;
            }
            let mut r = DMatrix::zeros(nuk, nuk);
            for i in 0..nuk {
                r[(i, i)] = rng.gen_range(0.5..2.0);
            }
            let nc = 2;
            let cx = DMatrix::from_fn(nc, nx, |_, _| rng.gen_range(-1.0..1.0));
            let cu = DMatrix::from_fn(nc, nuk, |_, _| rng.gen_range(-1.0..1.0));
            // Zero is strictly feasible for ub > 0.
            let ub = DVector::from_fn(nc, |_, _| rng.gen_range(0.5..2.0));
            stages.push(super::super::QpStage {
                q,
                s: DMatrix::zeros(nuk, nx),
                r,
                q_lin: DVector::from_fn(nx, |_, _| rng.gen_range(-1.0..1.0)),
                r_lin: DVector::from_fn(nuk, |_, _| rng.gen_range(-1.0..1.0)),
                a: if last {
                    DMatrix::zeros(0, nx)
                } else {
                    DMatrix::from_fn(nx, nx, |i, j| {
                        if i == j {
                            1.0
                        } else {
                            rng.gen_range(-0.1..0.1)
                        }
                    })
                },
                b: if last {
                    DMatrix::zeros(0, nuk)
                } else {
                    DMatrix::from_fn(nx, nuk, |_, _| rng.gen_range(-0.3..0.3))
                },
                c: if last {
                    DVector::zeros(0)
                } else {
                    DVector::from_fn(nx, |_, _| rng.gen_range(-0.05..0.05))
                },
                cx,
                cu,
                ub,
            });
        }
        QpProblem {
            stages,
            x0: Some(DVector::from_fn(nx, |_, _| rng.gen_range(-0.2..0.2))),
        }
    }

    #[test]
    fn row_scaling_invariance() {
        let prob = random_stagewise_qp(42, 4, 3, 2);
        let mut solver = QpSolver::default();
        let sol1 = solver.solve(&prob, None);
        assert_eq!(sol1.status, QpStatus::Converged);

        let mut scaled = prob.clone();
        for st in &mut scaled.stages {
            for i in 0..st.nc() {
                let s = 7.5;
                for j in 0..st.nx() {
                    st.cx[(i, j)] *= s;
                }
                for j in 0..st.nu() {
                    st.cu[(i, j)] *= s;
                }
                st.ub[i] *= s;
            }
        }
        let sol2 = solver.solve(&scaled, None);
        assert_eq!(sol2.status, QpStatus::Converged);
        for k in 0..prob.stages.len() {
            let dx = (&sol1.xs[k] - &sol2.xs[k]).amax();
            assert!(dx < 1e-6, "stage {k}: primal drift {dx}");
        }
    }

    #[test]
    fn warm_start_resolves_quickly() {
        let prob = random_stagewise_qp(7, 6, 3, 2);
        let mut solver = QpSolver::default();
        let sol1 = solver.solve(&prob, None);
        assert_eq!(sol1.status, QpStatus::Converged);
        let sol2 = solver.solve(&prob, Some(&sol1));
        assert_eq!(sol2.status, QpStatus::Converged);
        assert!(
            sol2.iterations <= 2,
            "warm re-solve took {} iterations",
            sol2.iterations
        );
    }
}
