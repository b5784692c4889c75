//! Dynamic single-track model in curvilinear coordinates.
//!
//! Nine states: `s, d, delta_psi, v_x, v_y, psi_dot, delta, T, B`. The
//! steering angle and the throttle/brake positions are part of the state; the
//! controller commands their rates, which makes the model input-affine.
//! Lateral tire forces follow the simplified Magic Formula, longitudinal
//! forces a linear throttle/brake map, and normal loads are static.

use crate::track::{TrackError, TrackPath};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::fmt;

pub const NX: usize = 9;
pub const NU: usize = 3;

pub const IDX_S: usize = 0;
pub const IDX_D: usize = 1;
pub const IDX_DPSI: usize = 2;
pub const IDX_VX: usize = 3;
pub const IDX_VY: usize = 4;
pub const IDX_PSIDOT: usize = 5;
pub const IDX_DELTA: usize = 6;
pub const IDX_T: usize = 7;
pub const IDX_B: usize = 8;

/// Denominator floor for 1 - d*kappa.
pub const EPS_GEOM: f64 = 1e-3;

pub type StateVector = SVector<f64, NX>;
pub type JacobianA = SMatrix<f64, NX, NX>;
pub type JacobianB = SMatrix<f64, NX, NU>;

#[derive(Debug)]
pub enum ModelError {
    SpeedBelowFloor { v_x: f64, floor: f64 },
    GeometricSingularity { denom: f64 },
    Track(TrackError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SpeedBelowFloor { v_x, floor } => {
                write!(f, "v_x = {v_x:.3} below model floor {floor:.3}")
            }
            Self::GeometricSingularity { denom } => {
                write!(f, "1 - d*kappa = {denom:.6}: beyond curvature center")
            }
            Self::Track(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TrackError> for ModelError {
    fn from(e: TrackError) -> Self {
        Self::Track(e)
    }
}

/// Magic Formula coefficients for one lumped axle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PacejkaAxle {
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl PacejkaAxle {
    /// F_y = F_z * D * sin(C * atan(B a - E (B a - atan(B a)))).
    pub fn lateral_force(&self, alpha: f64, f_z: f64) -> f64 {
        let ba = self.b * alpha;
        let inner = ba - self.e * (ba - ba.atan());
        f_z * self.d * (self.c * inner.atan()).sin()
    }

    /// dF_y/d alpha.
    pub fn lateral_force_slope(&self, alpha: f64, f_z: f64) -> f64 {
        let ba = self.b * alpha;
        let inner = ba - self.e * (ba - ba.atan());
        let d_inner = self.b * (1.0 - self.e) + self.e * self.b / (1.0 + ba * ba);
        f_z * self.d * (self.c * inner.atan()).cos() * self.c * d_inner / (1.0 + inner * inner)
    }

    /// Cornering stiffness at zero slip: F_z * D * C * B.
    pub fn stiffness(&self, f_z: f64) -> f64 {
        f_z * self.d * self.c * self.b
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Mass [kg].
    pub m: f64,
    /// Yaw inertia [kg m^2].
    pub i_z: f64,
    /// CoG to front axle [m].
    pub l_f: f64,
    /// CoG to rear axle [m].
    pub l_r: f64,
    pub g: f64,
    pub pacejka_front: PacejkaAxle,
    pub pacejka_rear: PacejkaAxle,
    /// Drive force gain [N] (F = C_T * T).
    pub c_t: f64,
    /// Front brake gain [N].
    pub c_bf: f64,
    /// Rear brake gain [N].
    pub c_br: f64,
    /// Rolling resistance [N].
    pub c_r0: f64,
    /// Aero drag [N s^2/m^2].
    pub c_r2: f64,
    /// Model validity floor on v_x [m/s].
    pub v_x_floor: f64,
}

impl VehicleParams {
    pub fn f_z_front(&self) -> f64 {
        self.l_r / (self.l_f + self.l_r) * self.m * self.g
    }

    pub fn f_z_rear(&self) -> f64 {
        self.l_f / (self.l_f + self.l_r) * self.m * self.g
    }

    pub fn validate(&self) -> Result<(), String> {
        let pos = [
            ("m", self.m),
            ("i_z", self.i_z),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("g", self.g),
            ("c_t", self.c_t),
            ("c_bf", self.c_bf),
            ("c_br", self.c_br),
            ("v_x_floor", self.v_x_floor),
        ];
        for (name, v) in pos {
            if v <= 0.0 {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.c_r0 < 0.0 || self.c_r2 < 0.0 {
            return Err("resistance coefficients must be nonnegative".into());
        }
        for (name, p) in [("front", &self.pacejka_front), ("rear", &self.pacejka_rear)] {
            if p.d <= 0.0 || p.c < 1.0 || p.b <= 0.0 {
                return Err(format!("pacejka_{name}: need D > 0, C >= 1, B > 0"));
            }
        }
        Ok(())
    }
}

impl Default for VehicleParams {
    /// Full-scale racecar-class defaults. The controller and all scenarios
    /// read these from config; they are implementer defaults, not telemetry.
    fn default() -> Self {
        Self {
            m: 1200.0,
            i_z: 1260.0,
            l_f: 1.51,
            l_r: 1.50,
            g: 9.81,
            pacejka_front: PacejkaAxle {
                b: 11.5,
                c: 1.7,
                d: 1.15,
                e: 0.96,
            },
            pacejka_rear: PacejkaAxle {
                b: 12.0,
                c: 1.75,
                d: 1.18,
                e: 0.97,
            },
            c_t: 4200.0,
            c_bf: 6200.0,
            c_br: 5800.0,
            c_r0: 48.0,
            c_r2: 0.72,
            v_x_floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub s: f64,
    pub d: f64,
    pub delta_psi: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub psi_dot: f64,
    pub delta: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl VehicleState {
    pub fn to_vector(&self) -> StateVector {
        SVector::from([
            self.s,
            self.d,
            self.delta_psi,
            self.v_x,
            self.v_y,
            self.psi_dot,
            self.delta,
            self.throttle,
            self.brake,
        ])
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            s: v[IDX_S],
            d: v[IDX_D],
            delta_psi: v[IDX_DPSI],
            v_x: v[IDX_VX],
            v_y: v[IDX_VY],
            psi_dot: v[IDX_PSIDOT],
            delta: v[IDX_DELTA],
            throttle: v[IDX_T],
            brake: v[IDX_B],
        }
    }
}

/// Input rates: steering rate and throttle/brake slew rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlRates {
    pub d_delta: f64,
    pub d_throttle: f64,
    pub d_brake: f64,
}

impl ControlRates {
    pub fn to_vector(&self) -> SVector<f64, NU> {
        SVector::from([self.d_delta, self.d_throttle, self.d_brake])
    }

    pub fn from_vector(v: &SVector<f64, NU>) -> Self {
        Self {
            d_delta: v[0],
            d_throttle: v[1],
            d_brake: v[2],
        }
    }
}

/// Front and rear slip angles (small-steering approximation).
pub fn slip_angles(state: &VehicleState, params: &VehicleParams) -> Result<(f64, f64), ModelError> {
    if state.v_x < params.v_x_floor {
        return Err(ModelError::SpeedBelowFloor {
            v_x: state.v_x,
            floor: params.v_x_floor,
        });
    }
    let alpha_f = state.delta - ((state.v_y + params.l_f * state.psi_dot) / state.v_x).atan();
    let alpha_r = -((state.v_y - params.l_r * state.psi_dot) / state.v_x).atan();
    Ok((alpha_f, alpha_r))
}

/// Front and rear longitudinal tire forces from throttle/brake positions.
pub fn longitudinal_forces(state: &VehicleState, params: &VehicleParams) -> (f64, f64) {
    let f_xf = -params.c_bf * state.brake - params.c_r0;
    let f_xr = params.c_t * state.throttle - params.c_br * state.brake - params.c_r0;
    (f_xf, f_xr)
}

/// Body-frame accelerations at the CoG.
pub fn body_accelerations(
    state: &VehicleState,
    params: &VehicleParams,
) -> Result<(f64, f64), ModelError> {
    let (alpha_f, alpha_r) = slip_angles(state, params)?;
    let f_yf = params.pacejka_front.lateral_force(alpha_f, params.f_z_front());
    let f_yr = params.pacejka_rear.lateral_force(alpha_r, params.f_z_rear());
    let (f_xf, f_xr) = longitudinal_forces(state, params);
    let (sd, cd) = state.delta.sin_cos();
    let a_x = (f_xr + f_xf * cd - f_yf * sd - params.c_r2 * state.v_x * state.v_x) / params.m;
    let a_y = (f_yr + f_yf * cd + f_xf * sd) / params.m;
    Ok((a_x, a_y))
}

/// Right-hand side of the model at fixed local curvature.
pub fn continuous_dynamics(
    state: &VehicleState,
    rates: &ControlRates,
    kappa: f64,
    params: &VehicleParams,
) -> Result<StateVector, ModelError> {
    let denom = 1.0 - state.d * kappa;
    if denom <= EPS_GEOM {
        return Err(ModelError::GeometricSingularity { denom });
    }
    let (alpha_f, alpha_r) = slip_angles(state, params)?;
    let f_yf = params.pacejka_front.lateral_force(alpha_f, params.f_z_front());
    let f_yr = params.pacejka_rear.lateral_force(alpha_r, params.f_z_rear());
    let (f_xf, f_xr) = longitudinal_forces(state, params);
    let (sd, cd) = state.delta.sin_cos();
    let a_x = (f_xr + f_xf * cd - f_yf * sd - params.c_r2 * state.v_x * state.v_x) / params.m;
    let a_y = (f_yr + f_yf * cd + f_xf * sd) / params.m;

    let (s_dpsi, c_dpsi) = state.delta_psi.sin_cos();
    let s_dot = (state.v_x * c_dpsi - state.v_y * s_dpsi) / denom;

    let mut f = StateVector::zeros();
    f[IDX_S] = s_dot;
    f[IDX_D] = state.v_x * s_dpsi + state.v_y * c_dpsi;
    f[IDX_DPSI] = state.psi_dot - kappa * s_dot;
    f[IDX_VX] = a_x + state.v_y * state.psi_dot;
    f[IDX_VY] = a_y - state.v_x * state.psi_dot;
    f[IDX_PSIDOT] =
        (f_yf * params.l_f * cd + f_xf * params.l_f * sd - f_yr * params.l_r) / params.i_z;
    f[IDX_DELTA] = rates.d_delta;
    f[IDX_T] = rates.d_throttle;
    f[IDX_B] = rates.d_brake;
    Ok(f)
}

/// Exact Jacobians of [`continuous_dynamics`] w.r.t. state and input, with
/// the curvature held at its local value.
pub fn dynamics_jacobians(
    state: &VehicleState,
    _rates: &ControlRates,
    kappa: f64,
    params: &VehicleParams,
) -> Result<(JacobianA, JacobianB), ModelError> {
    let denom = 1.0 - state.d * kappa;
    if denom <= EPS_GEOM {
        return Err(ModelError::GeometricSingularity { denom });
    }
    if state.v_x < params.v_x_floor {
        return Err(ModelError::SpeedBelowFloor {
            v_x: state.v_x,
            floor: params.v_x_floor,
        });
    }

    let vx = state.v_x;
    let q_f = (state.v_y + params.l_f * state.psi_dot) / vx;
    let q_r = (state.v_y - params.l_r * state.psi_dot) / vx;
    let alpha_f = state.delta - q_f.atan();
    let alpha_r = -q_r.atan();

    // d alpha / d(v_x, v_y, psi_dot); d alpha_f / d delta = 1.
    let wf = -1.0 / (1.0 + q_f * q_f);
    let wr = -1.0 / (1.0 + q_r * q_r);
    let daf = [wf * (-q_f / vx), wf / vx, wf * params.l_f / vx];
    let dar = [wr * (-q_r / vx), wr / vx, wr * (-params.l_r) / vx];

    let f_zf = params.f_z_front();
    let f_zr = params.f_z_rear();
    let f_yf = params.pacejka_front.lateral_force(alpha_f, f_zf);
    let g_f = params.pacejka_front.lateral_force_slope(alpha_f, f_zf);
    let g_r = params.pacejka_rear.lateral_force_slope(alpha_r, f_zr);
    let (f_xf, _f_xr) = longitudinal_forces(state, params);
    let (sd, cd) = state.delta.sin_cos();
    let m = params.m;
    let iz = params.i_z;

    // a_x/a_y partials over (v_x, v_y, psi_dot, delta, T, B).
    let mut dax = [0.0; 6];
    let mut day = [0.0; 6];
    for k in 0..3 {
        dax[k] = -sd * g_f * daf[k] / m;
        day[k] = (g_r * dar[k] + cd * g_f * daf[k]) / m;
    }
    dax[0] -= 2.0 * params.c_r2 * vx / m;
    dax[3] = (-f_xf * sd - f_yf * cd - sd * g_f) / m;
    day[3] = (cd * g_f - f_yf * sd + f_xf * cd) / m;
    dax[4] = params.c_t / m;
    dax[5] = (-params.c_br - params.c_bf * cd) / m;
    day[5] = -params.c_bf * sd / m;

    let (s_dpsi, c_dpsi) = state.delta_psi.sin_cos();
    let proj = vx * c_dpsi - state.v_y * s_dpsi;

    let mut a = JacobianA::zeros();

    // s_dot row.
    a[(IDX_S, IDX_D)] = proj * kappa / (denom * denom);
    a[(IDX_S, IDX_DPSI)] = (-vx * s_dpsi - state.v_y * c_dpsi) / denom;
    a[(IDX_S, IDX_VX)] = c_dpsi / denom;
    a[(IDX_S, IDX_VY)] = -s_dpsi / denom;

    // d_dot row.
    a[(IDX_D, IDX_DPSI)] = proj;
    a[(IDX_D, IDX_VX)] = s_dpsi;
    a[(IDX_D, IDX_VY)] = c_dpsi;

    // delta_psi_dot row = psi_dot - kappa * s_dot.
    for j in [IDX_D, IDX_DPSI, IDX_VX, IDX_VY] {
        a[(IDX_DPSI, j)] = -kappa * a[(IDX_S, j)];
    }
    a[(IDX_DPSI, IDX_PSIDOT)] = 1.0;

    // v_x_dot row = a_x + v_y psi_dot.
    a[(IDX_VX, IDX_VX)] = dax[0];
    a[(IDX_VX, IDX_VY)] = dax[1] + state.psi_dot;
    a[(IDX_VX, IDX_PSIDOT)] = dax[2] + state.v_y;
    a[(IDX_VX, IDX_DELTA)] = dax[3];
    a[(IDX_VX, IDX_T)] = dax[4];
    a[(IDX_VX, IDX_B)] = dax[5];

    // v_y_dot row = a_y - v_x psi_dot.
    a[(IDX_VY, IDX_VX)] = day[0] - state.psi_dot;
    a[(IDX_VY, IDX_VY)] = day[1];
    a[(IDX_VY, IDX_PSIDOT)] = day[2] - vx;
    a[(IDX_VY, IDX_DELTA)] = day[3];
    a[(IDX_VY, IDX_B)] = day[5];

    // psi_ddot row.
    for (k, j) in [IDX_VX, IDX_VY, IDX_PSIDOT].into_iter().enumerate() {
        a[(IDX_PSIDOT, j)] = (params.l_f * cd * g_f * daf[k] - params.l_r * g_r * dar[k]) / iz;
    }
    a[(IDX_PSIDOT, IDX_DELTA)] =
        (params.l_f * (cd * g_f - f_yf * sd) + f_xf * params.l_f * cd) / iz;
    a[(IDX_PSIDOT, IDX_B)] = -params.c_bf * params.l_f * sd / iz;

    let mut b = JacobianB::zeros();
    b[(IDX_DELTA, 0)] = 1.0;
    b[(IDX_T, 1)] = 1.0;
    b[(IDX_B, 2)] = 1.0;

    Ok((a, b))
}

/// Gradients of the body accelerations (a_x, a_y) w.r.t. the full state.
pub fn body_acceleration_gradients(
    state: &VehicleState,
    params: &VehicleParams,
) -> Result<(StateVector, StateVector), ModelError> {
    if state.v_x < params.v_x_floor {
        return Err(ModelError::SpeedBelowFloor {
            v_x: state.v_x,
            floor: params.v_x_floor,
        });
    }
    let vx = state.v_x;
    let q_f = (state.v_y + params.l_f * state.psi_dot) / vx;
    let q_r = (state.v_y - params.l_r * state.psi_dot) / vx;
    let alpha_f = state.delta - q_f.atan();
    let alpha_r = -q_r.atan();
    let wf = -1.0 / (1.0 + q_f * q_f);
    let wr = -1.0 / (1.0 + q_r * q_r);
    let daf = [wf * (-q_f / vx), wf / vx, wf * params.l_f / vx];
    let dar = [wr * (-q_r / vx), wr / vx, wr * (-params.l_r) / vx];
    let f_zf = params.f_z_front();
    let f_zr = params.f_z_rear();
    let f_yf = params.pacejka_front.lateral_force(alpha_f, f_zf);
    let g_f = params.pacejka_front.lateral_force_slope(alpha_f, f_zf);
    let g_r = params.pacejka_rear.lateral_force_slope(alpha_r, f_zr);
    let (f_xf, _) = longitudinal_forces(state, params);
    let (sd, cd) = state.delta.sin_cos();
    let m = params.m;

    let mut dax = StateVector::zeros();
    let mut day = StateVector::zeros();
    for (k, idx) in [IDX_VX, IDX_VY, IDX_PSIDOT].into_iter().enumerate() {
        dax[idx] = -sd * g_f * daf[k] / m;
        day[idx] = (g_r * dar[k] + cd * g_f * daf[k]) / m;
    }
    dax[IDX_VX] -= 2.0 * params.c_r2 * vx / m;
    dax[IDX_DELTA] = (-f_xf * sd - f_yf * cd - sd * g_f) / m;
    day[IDX_DELTA] = (cd * g_f - f_yf * sd + f_xf * cd) / m;
    dax[IDX_T] = params.c_t / m;
    dax[IDX_B] = (-params.c_br - params.c_bf * cd) / m;
    day[IDX_B] = -params.c_bf * sd / m;
    Ok((dax, day))
}

/// Curvature lookup used by the integrators. [`TrackPath`] is strict about
/// its domain; prediction horizons that run past the end of an open track
/// use the clamped variant.
pub trait KappaSource {
    fn kappa(&self, s: f64) -> Result<f64, TrackError>;

    /// Curvature and its arclength derivative (for exact discrete
    /// sensitivities).
    fn kappa_and_deriv(&self, s: f64) -> Result<(f64, f64), TrackError> {
        Ok((self.kappa(s)?, 0.0))
    }
}

impl KappaSource for TrackPath {
    fn kappa(&self, s: f64) -> Result<f64, TrackError> {
        self.curvature_at(s)
    }

    fn kappa_and_deriv(&self, s: f64) -> Result<(f64, f64), TrackError> {
        self.curvature_and_deriv_at(s)
    }
}

/// Clamps arclength queries into the track domain.
pub struct ClampedTrack<'a>(pub &'a TrackPath);

impl KappaSource for ClampedTrack<'_> {
    fn kappa(&self, s: f64) -> Result<f64, TrackError> {
        self.0
            .curvature_at(s.clamp(self.0.start_s(), self.0.end_s()))
    }

    fn kappa_and_deriv(&self, s: f64) -> Result<(f64, f64), TrackError> {
        if s < self.0.start_s() || s > self.0.end_s() {
            Ok((self.kappa(s)?, 0.0))
        } else {
            self.0.curvature_and_deriv_at(s)
        }
    }
}

/// Classical RK4 step with the curvature re-evaluated at each stage's s.
pub fn rk4_step(
    state: &VehicleState,
    rates: &ControlRates,
    params: &VehicleParams,
    path: &TrackPath,
    h: f64,
) -> Result<VehicleState, ModelError> {
    rk4_step_kappa(state, rates, params, path, h)
}

/// RK4 step over any curvature source.
pub fn rk4_step_kappa(
    state: &VehicleState,
    rates: &ControlRates,
    params: &VehicleParams,
    path: &dyn KappaSource,
    h: f64,
) -> Result<VehicleState, ModelError> {
    let x0 = state.to_vector();
    let eval = |x: &StateVector| -> Result<StateVector, ModelError> {
        let st = VehicleState::from_vector(x);
        let kappa = path.kappa(st.s)?;
        continuous_dynamics(&st, rates, kappa, params)
    };
    let k1 = eval(&x0)?;
    let k2 = eval(&(x0 + 0.5 * h * k1))?;
    let k3 = eval(&(x0 + 0.5 * h * k2))?;
    let k4 = eval(&(x0 + h * k3))?;
    let x1 = x0 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    Ok(VehicleState::from_vector(&x1))
}

/// RK4 step together with discrete sensitivities d x_{k+1} / d (x_k, u_k).
/// Stage Jacobians carry the chain term d kappa / d s so the discrete
/// linearization matches the integrator exactly.
pub fn rk4_step_with_sensitivities(
    state: &VehicleState,
    rates: &ControlRates,
    params: &VehicleParams,
    path: &dyn KappaSource,
    h: f64,
) -> Result<(VehicleState, JacobianA, JacobianB), ModelError> {
    let x0 = state.to_vector();
    let eval = |x: &StateVector| -> Result<(StateVector, JacobianA, JacobianB), ModelError> {
        let st = VehicleState::from_vector(x);
        let (kappa, dkappa) = path.kappa_and_deriv(st.s)?;
        let f = continuous_dynamics(&st, rates, kappa, params)?;
        let (mut a, b) = dynamics_jacobians(&st, rates, kappa, params)?;
        if dkappa != 0.0 {
            // df/ds += df/dkappa * dkappa/ds on the curvature-coupled rows.
            let den = 1.0 - st.d * kappa;
            let ds_dk = f[IDX_S] * st.d / den;
            a[(IDX_S, IDX_S)] += ds_dk * dkappa;
            a[(IDX_DPSI, IDX_S)] += (-f[IDX_S] - kappa * ds_dk) * dkappa;
        }
        Ok((f, a, b))
    };

    let id = JacobianA::identity();
    let (k1, a1, b1) = eval(&x0)?;
    let dk1x = a1;
    let dk1u = b1;
    let (k2, a2, b2) = eval(&(x0 + 0.5 * h * k1))?;
    let dk2x = a2 * (id + 0.5 * h * dk1x);
    let dk2u = a2 * (0.5 * h * dk1u) + b2;
    let (k3, a3, b3) = eval(&(x0 + 0.5 * h * k2))?;
    let dk3x = a3 * (id + 0.5 * h * dk2x);
    let dk3u = a3 * (0.5 * h * dk2u) + b3;
    let (k4, a4, b4) = eval(&(x0 + h * k3))?;
    let dk4x = a4 * (id + h * dk3x);
    let dk4u = a4 * (h * dk3u) + b4;

    let x1 = x0 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    let ax = id + (h / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x);
    let bu = (h / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u);
    Ok((VehicleState::from_vector(&x1), ax, bu))
}
