//! Shared independent oracles for the integration and acceptance tests.
//! Everything here deliberately avoids the implementation paths it checks.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use racetube_core::qp::QpProblem;
use racetube_core::track::TrackPath;
use racetube_core::vehicle::{
    continuous_dynamics, ControlRates, StateVector, VehicleParams, VehicleState,
};

/// Adaptive Runge-Kutta-Fehlberg 4(5) reference integration of the vehicle
/// model along a track, independent of the fixed-step RK4 under test.
pub fn reference_integrate(
    state: &VehicleState,
    rates: &ControlRates,
    params: &VehicleParams,
    track: &TrackPath,
    t_end: f64,
    tol: f64,
) -> VehicleState {
    let f = |x: &StateVector| -> StateVector {
        let st = VehicleState::from_vector(x);
        let kappa = track.curvature_at(st.s).expect("inside track");
        continuous_dynamics(&st, rates, kappa, params).expect("in model domain")
    };
    let mut x = state.to_vector();
    let mut t = 0.0;
    let mut h: f64 = 1e-3;
    while t < t_end {
        h = h.min(t_end - t);
        let k1 = f(&x);
        let k2 = f(&(x + h * (0.25 * k1)));
        let k3 = f(&(x + h * (3.0 / 32.0 * k1 + 9.0 / 32.0 * k2)));
        let k4 = f(&(x
            + h * (1932.0 / 2197.0 * k1 - 7200.0 / 2197.0 * k2 + 7296.0 / 2197.0 * k3)));
        let k5 = f(&(x
            + h * (439.0 / 216.0 * k1 - 8.0 * k2 + 3680.0 / 513.0 * k3 - 845.0 / 4104.0 * k4)));
        let k6 = f(&(x
            + h * (-8.0 / 27.0 * k1 + 2.0 * k2 - 3544.0 / 2565.0 * k3 + 1859.0 / 4104.0 * k4
                - 11.0 / 40.0 * k5)));
        let x5 = x
            + h * (16.0 / 135.0 * k1 + 6656.0 / 12825.0 * k3 + 28561.0 / 56430.0 * k4
                - 9.0 / 50.0 * k5
                + 2.0 / 55.0 * k6);
        let x4 = x
            + h * (25.0 / 216.0 * k1 + 1408.0 / 2565.0 * k3 + 2197.0 / 4104.0 * k4
                - 1.0 / 5.0 * k5);
        let err = (x5 - x4).amax().max(1e-16);
        if err <= tol {
            x = x5;
            t += h;
        }
        h = (0.9 * h * (tol / err).powf(0.2)).clamp(1e-7, 0.05);
    }
    VehicleState::from_vector(&x)
}

/// Dense active-set enumeration: the unique optimum of a strictly convex QP
/// is found by trying every active set, solving the equality-constrained
/// KKT system and checking primal feasibility plus multiplier signs.
/// Exponential in the inequality count; for small test problems only.
pub fn active_set_enumeration(prob: &QpProblem) -> Option<DVector<f64>> {
    // Flatten variables z = (x_0, u_0, ..., x_N, u_N).
    let n_stages = prob.stages.len();
    let mut offsets_x = Vec::with_capacity(n_stages);
    let mut offsets_u = Vec::with_capacity(n_stages);
    let mut nz = 0usize;
    for st in &prob.stages {
        offsets_x.push(nz);
        nz += st.nx();
        offsets_u.push(nz);
        nz += st.nu();
    }

    let mut h = DMatrix::<f64>::zeros(nz, nz);
    let mut g = DVector::<f64>::zeros(nz);
    for (k, st) in prob.stages.iter().enumerate() {
        let (ox, ou) = (offsets_x[k], offsets_u[k]);
        h.view_mut((ox, ox), (st.nx(), st.nx())).copy_from(&st.q);
        h.view_mut((ou, ou), (st.nu(), st.nu())).copy_from(&st.r);
        h.view_mut((ou, ox), (st.nu(), st.nx())).copy_from(&st.s);
        h.view_mut((ox, ou), (st.nx(), st.nu()))
            .copy_from(&st.s.transpose());
        g.rows_mut(ox, st.nx()).copy_from(&st.q_lin);
        g.rows_mut(ou, st.nu()).copy_from(&st.r_lin);
    }

    // Equalities: optional x_0 pin plus the dynamics rows.
    let mut eq_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    if let Some(x0) = &prob.x0 {
        for i in 0..prob.stages[0].nx() {
            let mut row = DVector::zeros(nz);
            row[offsets_x[0] + i] = 1.0;
            eq_rows.push((row, x0[i]));
        }
    }
    for k in 0..n_stages.saturating_sub(1) {
        let st = &prob.stages[k];
        let nxn = prob.stages[k + 1].nx();
        for i in 0..nxn {
            let mut row = DVector::zeros(nz);
            for j in 0..st.nx() {
                row[offsets_x[k] + j] = st.a[(i, j)];
            }
            for j in 0..st.nu() {
                row[offsets_u[k] + j] = st.b[(i, j)];
            }
            row[offsets_x[k + 1] + i] = -1.0;
            eq_rows.push((row, -st.c[i]));
        }
    }

    // Inequalities.
    let mut ineq_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for (k, st) in prob.stages.iter().enumerate() {
        for i in 0..st.nc() {
            let mut row = DVector::zeros(nz);
            for j in 0..st.nx() {
                row[offsets_x[k] + j] = st.cx[(i, j)];
            }
            for j in 0..st.nu() {
                row[offsets_u[k] + j] = st.cu[(i, j)];
            }
            ineq_rows.push((row, st.ub[i]));
        }
    }
    let n_ineq = ineq_rows.len();
    assert!(n_ineq <= 20, "enumeration oracle limited to small problems");

    let tol = 1e-9;
    for mask in 0..(1_u64 << n_ineq) {
        let active: Vec<usize> = (0..n_ineq).filter(|i| mask >> i & 1 == 1).collect();
        let ne = eq_rows.len() + active.len();
        let dim = nz + ne;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        kkt.view_mut((0, 0), (nz, nz)).copy_from(&h);
        rhs.rows_mut(0, nz).copy_from(&(-&g));
        for (r, (row, b)) in eq_rows
            .iter()
            .chain(active.iter().map(|&i| &ineq_rows[i]))
            .enumerate()
        {
            for j in 0..nz {
                kkt[(nz + r, j)] = row[j];
                kkt[(j, nz + r)] = row[j];
            }
            rhs[nz + r] = *b;
        }
        let sol = match kkt.lu().solve(&rhs) {
            Some(s) => s,
            None => continue,
        };
        let z = sol.rows(0, nz).into_owned();
        // KKT stationarity here reads H z + g + E^T nu + C_A^T lam = 0 for
        // rows c z <= d, so the active multipliers must be nonnegative.
        let mut ok = true;
        for idx in 0..active.len() {
            if sol[nz + eq_rows.len() + idx] < -tol {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        for (i, (row, b)) in ineq_rows.iter().enumerate() {
            if mask >> i & 1 == 1 {
                continue;
            }
            if row.dot(&z) > b + 1e-8 {
                ok = false;
                break;
            }
        }
        if ok {
            return Some(z);
        }
    }
    None
}
