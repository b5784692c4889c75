//! Scalar homothetic tube: size dynamics, worst-case uncertainty drive and
//! constraint tightening.
//!
//! The tube size sigma follows sigma_dot = -(beta - L_E) sigma + f_sigma,
//! where f_sigma enumerates the uncertainty-box vertices exactly. Metric
//! evaluations outside the certified envelope clamp into its box and report
//! the event instead of failing; controller predictions may transiently exit
//! the certified region.

use crate::contraction::reduced::{self, ReducedState};
use crate::contraction::{ContractionCertificate, VehicleReducedSystem};
use crate::uncertainty;
use crate::vehicle::VehicleParams;
use nalgebra::DVector;
use std::fmt;

#[derive(Debug)]
pub enum TubeError {
    UnknownConstraint { index: usize, octagon_rows: usize },
    MetricNotPositive,
}

impl fmt::Display for TubeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownConstraint {
                index,
                octagon_rows,
            } => write!(
                f,
                "unknown tightened-constraint index {index} (octagon has {octagon_rows} rows)"
            ),
            Self::MetricNotPositive => write!(f, "metric not positive definite at query"),
        }
    }
}

impl std::error::Error for TubeError {}

/// Constraints the tube tightens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintId {
    DeviationUpper,
    DeviationLower,
    Octagon(usize),
}

/// c_j for a tightened constraint.
pub fn tightening_constant(
    id: ConstraintId,
    cert: &ContractionCertificate,
) -> Result<f64, TubeError> {
    match id {
        ConstraintId::DeviationUpper | ConstraintId::DeviationLower => Ok(cert.c_d),
        ConstraintId::Octagon(r) => cert.c_oct.get(r).copied().ok_or(TubeError::UnknownConstraint {
            index: r,
            octagon_rows: cert.c_oct.len(),
        }),
    }
}

/// Tightened one-sided constraint value h_j + c_j sigma (imposed <= 0).
pub fn tighten_constraint(
    h_value: f64,
    id: ConstraintId,
    sigma: f64,
    cert: &ContractionCertificate,
) -> Result<f64, TubeError> {
    Ok(h_value + tightening_constant(id, cert)? * sigma)
}

/// Metric-weighted norm of the disturbance realization
/// G(x)(theta - theta_bar) + E(x) e at one vertex pair. Returns the value and
/// whether the metric evaluation had to clamp into the envelope box.
pub fn f_sigma_dyn(
    x: &ReducedState,
    theta: &[f64; 2],
    e: &[f64; 2],
    cert: &ContractionCertificate,
    params: &VehicleParams,
) -> (f64, bool) {
    let (xc, clamped) = cert.envelope.clamp_box(x);
    let arr = xc.to_array();
    let tb = cert.uncertainty.theta_bar;
    let dtheta = [theta[0] - tb[0], theta[1] - tb[1]];
    let w5 = uncertainty::disturbance_term(
        arr[0],
        arr[1],
        arr[2],
        arr[3],
        arr[4],
        cert.envelope.v_x[0],
        params,
        &cert.uncertainty,
        &dtheta,
        e,
    );
    let v = DVector::from_column_slice(w5.as_slice());
    let w = cert.metric.w_at(&arr);
    let norm = match nalgebra::Cholesky::new(w) {
        Some(chol) => v.dot(&chol.solve(&v)).max(0.0).sqrt(),
        None => 0.0,
    };
    (norm, clamped)
}

/// f_sigma_dyn together with its gradient w.r.t. the reduced state (zeroed on
/// clamped coordinates).
pub fn f_sigma_dyn_grad(
    x: &ReducedState,
    theta: &[f64; 2],
    e: &[f64; 2],
    cert: &ContractionCertificate,
    params: &VehicleParams,
) -> (f64, [f64; 5], bool) {
    let (xc, clamped) = cert.envelope.clamp_box(x);
    let arr = xc.to_array();
    let tb = cert.uncertainty.theta_bar;
    let dtheta = [theta[0] - tb[0], theta[1] - tb[1]];
    let w5 = uncertainty::disturbance_term(
        arr[0],
        arr[1],
        arr[2],
        arr[3],
        arr[4],
        cert.envelope.v_x[0],
        params,
        &cert.uncertainty,
        &dtheta,
        e,
    );
    let v = DVector::from_column_slice(w5.as_slice());
    let (w, wgrads) = cert.metric.w_with_grads_at(&arr);
    let chol = match nalgebra::Cholesky::new(w) {
        Some(c) => c,
        None => return (0.0, [0.0; 5], clamped),
    };
    let y = chol.solve(&v); // y = M v
    let f = v.dot(&y).max(0.0).sqrt();
    if f < 1e-12 {
        return (f, [0.0; 5], clamped);
    }
    let jv = uncertainty::disturbance_jacobian(
        arr[0],
        arr[1],
        arr[2],
        arr[3],
        cert.envelope.v_x[0],
        params,
        &cert.uncertainty,
        &dtheta,
        e,
    );
    let mut grad = [0.0; 5];
    let xraw = x.to_array();
    for j in 0..5 {
        if xraw[j] != arr[j] {
            continue; // clamped coordinate: locally constant
        }
        // d||v||_M/dx_j = (y^T dv_j - 0.5 y^T dW_j y) / f  with y = M v.
        let mut t = 0.0;
        for r in 0..5 {
            t += y[r] * jv[(r, j)];
        }
        if let Some(pos) = cert.metric.args.iter().position(|&a| a == j) {
            t -= 0.5 * y.dot(&(&wgrads[pos] * &y));
        }
        grad[j] = t / f;
    }
    (f, grad, clamped)
}

/// Worst-case tube drive: exact maximum over the uncertainty-box vertices of
/// sum_k L_{G,k} |theta_k - theta_bar_k| sigma + f_sigma_dyn.
pub fn f_sigma(
    x: &ReducedState,
    sigma: f64,
    cert: &ContractionCertificate,
    params: &VehicleParams,
) -> (f64, bool) {
    let (tv, ev) = uncertainty::enumerate_vertices(&cert.uncertainty);
    let tb = cert.uncertainty.theta_bar;
    let mut best = 0.0_f64;
    let mut any_clamped = false;
    for th in &tv {
        let lg_term: f64 = cert
            .l_g
            .iter()
            .zip(th.iter().zip(tb.iter()))
            .map(|(lg, (t, b))| lg * (t - b).abs())
            .sum();
        for e in &ev {
            let (fd, clamped) = f_sigma_dyn(x, th, e, cert, params);
            any_clamped |= clamped;
            best = best.max(lg_term * sigma + fd);
        }
    }
    (best, any_clamped)
}

/// f_sigma split into its sigma-affine form: value at sigma, the coefficient
/// on sigma, and the state gradient of the dynamic part at the active vertex.
pub fn f_sigma_affine(
    x: &ReducedState,
    sigma: f64,
    cert: &ContractionCertificate,
    params: &VehicleParams,
) -> (f64, f64, [f64; 5], bool) {
    let (tv, ev) = uncertainty::enumerate_vertices(&cert.uncertainty);
    let tb = cert.uncertainty.theta_bar;
    let mut best = (f64::NEG_INFINITY, 0.0, [0.0; 2], [0.0; 2]);
    let mut any_clamped = false;
    for th in &tv {
        let lg_term: f64 = cert
            .l_g
            .iter()
            .zip(th.iter().zip(tb.iter()))
            .map(|(lg, (t, b))| lg * (t - b).abs())
            .sum();
        for e in &ev {
            let (fd, clamped) = f_sigma_dyn(x, th, e, cert, params);
            any_clamped |= clamped;
            let val = lg_term * sigma + fd;
            if val > best.0 {
                best = (val, lg_term, *th, *e);
            }
        }
    }
    if !best.0.is_finite() {
        return (0.0, 0.0, [0.0; 5], any_clamped);
    }
    let (_, grad, _) = f_sigma_dyn_grad(x, &best.2, &best.3, cert, params);
    (best.0, best.1, grad, any_clamped)
}

/// Tube-size dynamics sigma_dot = -(beta - L_E) sigma + f_sigma(x, sigma).
pub fn tube_dynamics(
    x: &ReducedState,
    sigma: f64,
    cert: &ContractionCertificate,
    params: &VehicleParams,
) -> f64 {
    let (fs, _) = f_sigma(x, sigma, cert, params);
    -cert.beta_eff() * sigma + fs
}

/// One Monte-Carlo containment rollout on the certified reduced model: the
/// perturbed trajectory runs under the ancillary differential feedback
/// K(x_nom) while sigma integrates Eq.-(11)-style dynamics along the nominal.
/// Returns (metric distance, sigma) sampled at every step.
#[allow(clippy::too_many_arguments)]
pub fn containment_rollout(
    sys: &VehicleReducedSystem,
    cert: &ContractionCertificate,
    x0: ReducedState,
    u_nominal: &dyn Fn(f64) -> [f64; 2],
    theta: &[f64; 2],
    e_signal: &dyn Fn(f64) -> [f64; 2],
    t_end: f64,
    dt: f64,
) -> Vec<(f64, f64)> {
    let params = &sys.params;
    let approx = &sys.approx;
    let nominal_rhs = |x: &[f64; 5], u: &[f64; 2]| -> [f64; 5] {
        reduced::surrogate_dynamics(&ReducedState::from_array(x), u, approx, params)
    };
    let perturbed_rhs = |x: &[f64; 5], u: &[f64; 2], e: &[f64; 2]| -> [f64; 5] {
        let mut f = reduced::surrogate_dynamics(&ReducedState::from_array(x), u, approx, params);
        let w = uncertainty::disturbance_term(
            x[0],
            x[1],
            x[2],
            x[3],
            x[4],
            cert.envelope.v_x[0],
            params,
            &cert.uncertainty,
            theta,
            e,
        );
        for i in 0..3 {
            f[i] += w[i];
        }
        f
    };

    let mut xn = x0.to_array();
    let mut xp = x0.to_array();
    let mut sigma = 0.0;
    let mut out = Vec::with_capacity((t_end / dt) as usize + 1);
    let steps = (t_end / dt).round() as usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        // Record metric distance vs sigma.
        let diff = DVector::from_iterator(5, (0..5).map(|i| xp[i] - xn[i]));
        let w = cert.metric.w_at(&xn);
        let dist = match nalgebra::Cholesky::new(w) {
            Some(chol) => diff.dot(&chol.solve(&diff)).max(0.0).sqrt(),
            None => f64::INFINITY,
        };
        out.push((dist, sigma));
        if k == steps {
            break;
        }

        let u = u_nominal(t);
        let e_t = e_signal(t);
        // Ancillary feedback around the nominal trajectory.
        let fb = |xn_s: &[f64; 5], xp_s: &[f64; 5], u0: &[f64; 2]| -> [f64; 2] {
            match cert.metric.k_at(xn_s) {
                Some(k_mat) => {
                    let d = DVector::from_iterator(5, (0..5).map(|i| xp_s[i] - xn_s[i]));
                    let du = k_mat * d;
                    [u0[0] + du[0], u0[1] + du[1]]
                }
                None => *u0,
            }
        };

        // RK4 on the coupled (nominal, perturbed, sigma) system.
        let mut kn = [[0.0; 5]; 4];
        let mut kp = [[0.0; 5]; 4];
        let mut ks = [0.0; 4];
        let coef = [0.0, 0.5, 0.5, 1.0];
        for stage in 0..4 {
            let mut xns = xn;
            let mut xps = xp;
            let mut ss = sigma;
            if stage > 0 {
                for i in 0..5 {
                    xns[i] += coef[stage] * dt * kn[stage - 1][i];
                    xps[i] += coef[stage] * dt * kp[stage - 1][i];
                }
                ss += coef[stage] * dt * ks[stage - 1];
            }
            kn[stage] = nominal_rhs(&xns, &u);
            let up = fb(&xns, &xps, &u);
            kp[stage] = perturbed_rhs(&xps, &up, &e_t);
            let xs = ReducedState::from_array(&xns);
            let (fs, _) = f_sigma(&xs, ss, cert, params);
            ks[stage] = -cert.beta_eff() * ss + fs;
        }
        for i in 0..5 {
            xn[i] += dt / 6.0 * (kn[0][i] + 2.0 * kn[1][i] + 2.0 * kn[2][i] + kn[3][i]);
            xp[i] += dt / 6.0 * (kp[0][i] + 2.0 * kp[1][i] + 2.0 * kp[2][i] + kp[3][i]);
        }
        sigma += dt / 6.0 * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3]);
        sigma = sigma.max(0.0);
    }
    out
}
