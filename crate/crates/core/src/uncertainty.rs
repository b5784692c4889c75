//! Perturbed input-affine vehicle model.
//!
//! Tire-parameter uncertainty enters as additional lateral forces at both
//! axles, proportional to the respective lateral tire force (equivalent to a
//! +-2.5 % variation of the peak factor); force disturbances act at the CoG,
//! longitudinally scaled by the combined drive command and laterally as a
//! constant bound. Both are normalized so that theta and e live in [-1, 1]^2.

use crate::vehicle::{self, VehicleParams, VehicleState};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Rows of the reduced model: (v_x, v_y, psi_dot, delta, C).
pub const NR: usize = 5;

pub type GMatrix = SMatrix<f64, NR, 2>;
pub type EMatrix = SMatrix<f64, NR, 2>;

#[derive(Debug)]
pub enum UncertaintyError {
    OutsideBox { name: &'static str, value: [f64; 2] },
}

impl fmt::Display for UncertaintyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OutsideBox { name, value } => {
                write!(f, "{name} = ({}, {}) outside its unit box", value[0], value[1])
            }
        }
    }
}

impl std::error::Error for UncertaintyError {}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UncertaintySpec {
    /// Fractional tire-force uncertainty (peak-factor variation).
    pub theta_scale: f64,
    /// CoG force disturbance bound [N].
    pub force_scale: f64,
    /// Normalized parameter box, symmetric around `theta_bar`.
    #[serde(default = "unit_box")]
    pub theta_box: [[f64; 2]; 2],
    /// Normalized disturbance box.
    #[serde(default = "unit_box")]
    pub e_box: [[f64; 2]; 2],
    /// Nominal parameter (box center for the symmetric default).
    #[serde(default)]
    pub theta_bar: [f64; 2],
}

fn unit_box() -> [[f64; 2]; 2] {
    [[-1.0, 1.0], [-1.0, 1.0]]
}

impl Default for UncertaintySpec {
    fn default() -> Self {
        Self {
            theta_scale: 0.025,
            force_scale: 150.0,
            theta_box: unit_box(),
            e_box: unit_box(),
            theta_bar: [0.0, 0.0],
        }
    }
}

impl UncertaintySpec {
    /// Spec scaled by a factor on both boxes (0 gives the degenerate
    /// zero-uncertainty spec).
    pub fn scaled(&self, factor: f64) -> Self {
        let scale_box = |b: &[[f64; 2]; 2]| {
            [
                [b[0][0] * factor, b[0][1] * factor],
                [b[1][0] * factor, b[1][1] * factor],
            ]
        };
        Self {
            theta_box: scale_box(&self.theta_box),
            e_box: scale_box(&self.e_box),
            ..*self
        }
    }

    pub fn contains_theta(&self, theta: &[f64; 2]) -> bool {
        (0..2).all(|i| theta[i] >= self.theta_box[i][0] - 1e-12 && theta[i] <= self.theta_box[i][1] + 1e-12)
    }

    pub fn contains_e(&self, e: &[f64; 2]) -> bool {
        (0..2).all(|i| e[i] >= self.e_box[i][0] - 1e-12 && e[i] <= self.e_box[i][1] + 1e-12)
    }
}

/// Vertices of a 2-D box, counterclockwise from (lo, lo), deduplicated for
/// degenerate intervals.
fn box_vertices(b: &[[f64; 2]; 2]) -> Vec<[f64; 2]> {
    let raw = [
        [b[0][0], b[1][0]],
        [b[0][1], b[1][0]],
        [b[0][1], b[1][1]],
        [b[0][0], b[1][1]],
    ];
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(4);
    for v in raw {
        if !out.iter().any(|w| w[0] == v[0] && w[1] == v[1]) {
            out.push(v);
        }
    }
    out
}

/// Vertex lists (theta^i, e^j) of the uncertainty polytopes.
pub fn enumerate_vertices(spec: &UncertaintySpec) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    (box_vertices(&spec.theta_box), box_vertices(&spec.e_box))
}

/// Over-approximated slip angles used by the uncertainty input matrices:
/// linear in (v_y, psi_dot, delta) with the speed clamped from below to the
/// certification envelope minimum.
pub fn approx_slip_angles(
    v_x: f64,
    v_y: f64,
    psi_dot: f64,
    delta: f64,
    v_x_clamp: f64,
    params: &VehicleParams,
) -> (f64, f64) {
    let v = v_x.max(v_x_clamp);
    let alpha_f = delta - (v_y + params.l_f * psi_dot) / v;
    let alpha_r = -(v_y - params.l_r * psi_dot) / v;
    (alpha_f, alpha_r)
}

/// Parametric-uncertainty input matrix G(x) on the reduced model rows:
/// column k carries the axle-k lateral-force variation (theta_scale of the
/// linearized tire force, i.e. the stiffness slope at the over-approximated
/// slip) into (v_x_dot, v_y_dot, psi_ddot).
pub fn g_matrix(
    v_x: f64,
    v_y: f64,
    psi_dot: f64,
    delta: f64,
    v_x_clamp: f64,
    params: &VehicleParams,
    spec: &UncertaintySpec,
) -> GMatrix {
    let (alpha_f, alpha_r) = approx_slip_angles(v_x, v_y, psi_dot, delta, v_x_clamp, params);
    let (sd, cd) = delta.sin_cos();
    let m = params.m;
    let iz = params.i_z;
    let sc = spec.theta_scale;
    let front = alpha_f * params.pacejka_front.stiffness(params.f_z_front()) * sc;
    let rear = alpha_r * params.pacejka_rear.stiffness(params.f_z_rear()) * sc;

    let mut g = GMatrix::zeros();
    g[(0, 0)] = -front * sd / m;
    g[(1, 0)] = -front * cd / m;
    g[(1, 1)] = rear / m;
    g[(2, 0)] = params.l_f * front * cd / iz;
    g[(2, 1)] = -params.l_r * rear / iz;
    g
}

/// Disturbance input matrix E(x): the longitudinal channel is scaled by the
/// combined drive command C, the lateral channel is constant.
pub fn e_matrix(c_long: f64, params: &VehicleParams, spec: &UncertaintySpec) -> EMatrix {
    let mut e = EMatrix::zeros();
    e[(0, 0)] = c_long * spec.force_scale / params.m;
    e[(1, 1)] = spec.force_scale / params.m;
    e
}

/// Combined longitudinal command of a full state: C = T - B in [-1, 1].
pub fn combined_input(state: &VehicleState) -> f64 {
    state.throttle - state.brake
}

/// Analytic Jacobian of G(x) theta + E(x) e w.r.t. the reduced state
/// (v_x, v_y, psi_dot, delta, C).
#[allow(clippy::too_many_arguments)]
pub fn disturbance_jacobian(
    v_x: f64,
    v_y: f64,
    psi_dot: f64,
    delta: f64,
    v_x_clamp: f64,
    params: &VehicleParams,
    spec: &UncertaintySpec,
    theta: &[f64; 2],
    e: &[f64; 2],
) -> SMatrix<f64, NR, NR> {
    let p = params;
    let sc = spec.theta_scale;
    let vc = v_x.max(v_x_clamp);
    let active = v_x > v_x_clamp;
    let (sd, cd) = delta.sin_cos();
    let qf = v_y + p.l_f * psi_dot;
    let qr = v_y - p.l_r * psi_dot;
    let alpha_f = delta - qf / vc;
    // d alpha / d (v_x, v_y, psi_dot, delta, C)
    let dvx_f = if active { qf / (vc * vc) } else { 0.0 };
    let dvx_r = if active { qr / (vc * vc) } else { 0.0 };
    let daf = [dvx_f, -1.0 / vc, -p.l_f / vc, 1.0, 0.0];
    let dar = [dvx_r, -1.0 / vc, p.l_r / vc, 0.0, 0.0];
    let fzf = p.pacejka_front.stiffness(p.f_z_front()) * sc;
    let fzr = p.pacejka_rear.stiffness(p.f_z_rear()) * sc;
    let front = fzf * alpha_f;

    let mut j = SMatrix::<f64, NR, NR>::zeros();
    for col in 0..NR {
        let dfront = fzf * daf[col];
        let drear = fzr * dar[col];
        let (dsd, dcd) = if col == 3 { (cd, -sd) } else { (0.0, 0.0) };
        j[(0, col)] = -(dfront * sd + front * dsd) * theta[0] / p.m;
        j[(1, col)] = (-(dfront * cd + front * dcd) * theta[0] + drear * theta[1]) / p.m;
        j[(2, col)] =
            (p.l_f * (dfront * cd + front * dcd) * theta[0] - p.l_r * drear * theta[1]) / p.i_z;
    }
    // E(x) e contributes only d/dC of the longitudinal row.
    j[(0, 4)] += spec.force_scale * e[0] / p.m;
    j
}

/// Disturbance realization G(x) theta + E(x) e on the reduced rows.
pub fn disturbance_term(
    v_x: f64,
    v_y: f64,
    psi_dot: f64,
    delta: f64,
    c_long: f64,
    v_x_clamp: f64,
    params: &VehicleParams,
    spec: &UncertaintySpec,
    theta: &[f64; 2],
    e: &[f64; 2],
) -> SVector<f64, NR> {
    let g = g_matrix(v_x, v_y, psi_dot, delta, v_x_clamp, params, spec);
    let em = e_matrix(c_long, params, spec);
    g * SVector::<f64, 2>::from(*theta) + em * SVector::<f64, 2>::from(*e)
}

/// Full-model perturbed dynamics f(x) + B(x)u + G(x,u) theta + E(x) e, with
/// the reduced uncertainty rows embedded at (v_x, v_y, psi_dot).
#[allow(clippy::too_many_arguments)]
pub fn perturbed_dynamics(
    state: &VehicleState,
    rates: &crate::vehicle::ControlRates,
    kappa: f64,
    params: &VehicleParams,
    spec: &UncertaintySpec,
    v_x_clamp: f64,
    theta: &[f64; 2],
    e: &[f64; 2],
) -> Result<vehicle::StateVector, Box<dyn std::error::Error>> {
    if !spec.contains_theta(theta) {
        return Err(Box::new(UncertaintyError::OutsideBox {
            name: "theta",
            value: *theta,
        }));
    }
    if !spec.contains_e(e) {
        return Err(Box::new(UncertaintyError::OutsideBox {
            name: "e",
            value: *e,
        }));
    }
    let mut f = vehicle::continuous_dynamics(state, rates, kappa, params)?;
    let w = disturbance_term(
        state.v_x,
        state.v_y,
        state.psi_dot,
        state.delta,
        combined_input(state),
        v_x_clamp,
        params,
        spec,
        theta,
        e,
    );
    f[vehicle::IDX_VX] += w[0];
    f[vehicle::IDX_VY] += w[1];
    f[vehicle::IDX_PSIDOT] += w[2];
    Ok(f)
}
