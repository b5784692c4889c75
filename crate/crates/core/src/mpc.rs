//! Real-time-iteration SQP path-tracking controller.
//!
//! Each control period performs a single Gauss-Newton SQP iteration around
//! the shifted previous solution: linearize the (optionally tube-augmented)
//! prediction model along the horizon, assemble the stage-wise QP with
//! slack-relaxed lateral-deviation and acceleration-octagon constraints, and
//! apply the first input of the updated sequence. In robust mode the
//! prediction model carries the scalar tube size as one extra state and the
//! relaxed constraints are tightened by c_j * sigma.

use crate::contraction::reduced::ReducedState;
use crate::contraction::ContractionCertificate;
use crate::qp::{QpProblem, QpSolution, QpSolver, QpStage, QpStatus};
use crate::track::TrackPath;
use crate::tube;
use crate::vehicle::{
    self, body_acceleration_gradients, ClampedTrack, ControlRates, VehicleParams, VehicleState,
    IDX_B, IDX_D, IDX_DELTA, IDX_DPSI, IDX_T, IDX_VX, IDX_VY, NX, NU,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    Nominal,
    Robust,
}

/// One acceleration-octagon row a_x + m * a_y <= c.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OctagonRow {
    pub m: f64,
    pub c: f64,
}

/// Tangent-line octagon inscribed in the friction circle of radius `a_max`,
/// normal angles spread over the lateral/drive quadrants.
pub fn regular_octagon(a_max: f64) -> Vec<OctagonRow> {
    (0..8)
        .map(|k| {
            let phi = (-78.75 + 22.5 * k as f64).to_radians();
            OctagonRow {
                m: phi.tan(),
                c: a_max / phi.cos(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcpConfig {
    /// Horizon stages.
    pub n: usize,
    /// Stage duration [s].
    pub h: f64,
    /// Output weights on (d, d_dot, v - v_ref).
    pub q: [f64; 3],
    /// Input-rate weights.
    pub r: [f64; 3],
    /// Terminal weight on d_dot.
    pub q_n: f64,
    pub octagon: Vec<OctagonRow>,
    pub delta_box: [f64; 2],
    pub rate_delta_box: [f64; 2],
    pub rate_throttle_box: [f64; 2],
    pub rate_brake_box: [f64; 2],
    pub slack_lin: f64,
    pub slack_quad: f64,
    /// Terminal speed bound factor on v_ref.
    pub v_planner_margin: f64,
    /// Tube size at the measured state.
    pub sigma0: f64,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            n: 36,
            h: 0.067,
            q: [0.8, 2.0, 0.6],
            r: [30.0, 4.0, 4.0],
            q_n: 20.0,
            octagon: regular_octagon(10.5),
            delta_box: [-0.38, 0.38],
            rate_delta_box: [-0.7, 0.7],
            rate_throttle_box: [-2.5, 2.5],
            rate_brake_box: [-2.5, 2.5],
            slack_lin: 1000.0,
            slack_quad: 2000.0,
            v_planner_margin: 1.05,
            sigma0: 0.0,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<(), String> {
        let horizon = self.n as f64 * self.h;
        if !(1.0..=4.0).contains(&horizon) {
            return Err(format!(
                "horizon N*h = {horizon:.2} s outside the supported 1-4 s range"
            ));
        }
        if self.q.iter().chain(self.r.iter()).any(|&w| w < 0.0) || self.q_n < 0.0 {
            return Err("weights must be nonnegative".into());
        }
        if self.octagon.is_empty() {
            return Err("octagon needs at least one row".into());
        }
        for row in &self.octagon {
            if row.c <= 0.0 {
                return Err("octagon must contain the origin (c > 0)".into());
            }
        }
        if self.slack_lin < 0.0 || self.slack_quad <= 0.0 {
            return Err("slack weights must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum MpcError {
    MissingCertificate,
    BadConfig(String),
    Model(vehicle::ModelError),
}

impl fmt::Display for MpcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingCertificate => write!(f, "robust mode requires a contraction certificate"),
            Self::BadConfig(s) => write!(f, "bad OCP config: {s}"),
            Self::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for MpcError {}

impl From<vehicle::ModelError> for MpcError {
    fn from(e: vehicle::ModelError) -> Self {
        Self::Model(e)
    }
}

/// Signed margins (>= 0 means satisfied) of every imposed constraint at one
/// stage; tightened constraints report their tightened margin.
#[derive(Debug, Clone, Serialize)]
pub struct StageMargins {
    pub d_upper: f64,
    pub d_lower: f64,
    pub octagon: Vec<f64>,
    pub delta_upper: f64,
    pub delta_lower: f64,
    pub throttle: [f64; 2],
    pub brake: [f64; 2],
    pub terminal_v: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ViolationSummary {
    pub count: usize,
    pub max_depth: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginReport {
    pub stages: Vec<StageMargins>,
    pub violations: ViolationSummary,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    /// Predicted states per stage (10th component = sigma in robust mode).
    pub xs: Vec<DVector<f64>>,
    /// Input rates per stage (N entries).
    pub us: Vec<ControlRates>,
    /// Tube-size trajectory (zeros in nominal mode).
    pub sigma: Vec<f64>,
    /// Slack values per stage.
    pub slacks: Vec<DVector<f64>>,
    pub cost: f64,
    pub margins: MarginReport,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    pub solve_time: Duration,
    /// Metric evaluations clamped into the certified envelope this solve.
    pub clamp_events: usize,
    /// Controller health: consecutive degraded cycles trigger the safe stop.
    pub degraded: bool,
}

pub struct RtiController {
    pub cfg: OcpConfig,
    params: VehicleParams,
    track: TrackPath,
    mode: ControllerMode,
    cert: Option<ContractionCertificate>,
    /// Linearization trajectory (absolute), N+1 states and N inputs.
    xs: Vec<DVector<f64>>,
    us: Vec<ControlRates>,
    warm: Option<QpSolution>,
    solver: QpSolver,
    initialized: bool,
    degraded_streak: usize,
    clamp_events: usize,
}

impl RtiController {
    pub fn new(
        cfg: OcpConfig,
        params: VehicleParams,
        track: TrackPath,
        mode: ControllerMode,
        cert: Option<ContractionCertificate>,
    ) -> Result<Self, MpcError> {
        cfg.validate().map_err(MpcError::BadConfig)?;
        if mode == ControllerMode::Robust && cert.is_none() {
            return Err(MpcError::MissingCertificate);
        }
        if let Some(c) = &cert {
            if c.c_oct.len() < cfg.octagon.len() {
                return Err(MpcError::BadConfig(format!(
                    "certificate carries {} octagon constants, config has {} rows",
                    c.c_oct.len(),
                    cfg.octagon.len()
                )));
            }
        }
        Ok(Self {
            cfg,
            params,
            track,
            mode,
            cert,
            xs: Vec::new(),
            us: Vec::new(),
            warm: None,
            solver: QpSolver::default(),
            initialized: false,
            degraded_streak: 0,
            clamp_events: 0,
        })
    }

    pub fn mode(&self) -> ControllerMode {
        self.mode
    }

    /// Number of states in the prediction model (9 nominal, 10 robust).
    pub fn prediction_dim(&self) -> usize {
        match self.mode {
            ControllerMode::Nominal => NX,
            ControllerMode::Robust => NX + 1,
        }
    }

    fn nx(&self) -> usize {
        self.prediction_dim()
    }

    /// Slack variables per stage: one shared for the deviation pair, one per
    /// octagon row.
    fn n_slack(&self) -> usize {
        1 + self.cfg.octagon.len()
    }

    /// Augmented one-step prediction with sensitivities.
    fn predict(
        &mut self,
        z: &DVector<f64>,
        rates: &ControlRates,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), MpcError> {
        let nx = self.nx();
        let clamped = ClampedTrack(&self.track);
        let state9 = VehicleState::from_vector(&vehicle::StateVector::from_iterator(
            z.iter().take(NX).copied(),
        ));
        let (next9, a9, b9) =
            vehicle::rk4_step_with_sensitivities(&state9, rates, &self.params, &clamped, self.cfg.h)?;

        let mut next = DVector::zeros(nx);
        let mut a = DMatrix::zeros(nx, nx);
        let mut b = DMatrix::zeros(nx, NU);
        let nv = next9.to_vector();
        for i in 0..NX {
            next[i] = nv[i];
            for j in 0..NX {
                a[(i, j)] = a9[(i, j)];
            }
            for j in 0..NU {
                b[(i, j)] = b9[(i, j)];
            }
        }

        if self.mode == ControllerMode::Robust {
            let cert = self.cert.as_ref().unwrap();
            // RK4 on the coupled (x9, sigma) system: the x stages re-run the
            // reduced extraction per stage.
            let h = self.cfg.h;
            let x0 = state9.to_vector();
            let eval9 = |x: &vehicle::StateVector| -> Result<vehicle::StateVector, MpcError> {
                let st = VehicleState::from_vector(x);
                let kappa = ClampedTrack(&self.track)
                    .0
                    .curvature_at(st.s.clamp(self.track.start_s(), self.track.end_s()))
                    .map_err(vehicle::ModelError::from)?;
                Ok(vehicle::continuous_dynamics(&st, rates, kappa, &self.params)?)
            };
            let sigma0 = z[NX];
            let mut clamp_hits = 0usize;
            // Stage values of x9 for the sigma stages.
            let k1 = eval9(&x0)?;
            let x_s2 = x0 + 0.5 * h * k1;
            let k2 = eval9(&x_s2)?;
            let x_s3 = x0 + 0.5 * h * k2;
            let k3 = eval9(&x_s3)?;
            let x_s4 = x0 + h * k3;

            let mut sdot = [0.0; 4];
            let mut dsig_dx9 = [[0.0; NX]; 4];
            let mut dsig_dsig = [0.0; 4];
            let stages = [x0, x_s2, x_s3, x_s4];
            let mut sig_stage = [sigma0; 4];
            for i in 0..4 {
                let st = VehicleState::from_vector(&stages[i]);
                let red = ReducedState::from_full(&st);
                let sig = match i {
                    0 => sigma0,
                    1 => sigma0 + 0.5 * h * sdot[0],
                    2 => sigma0 + 0.5 * h * sdot[1],
                    _ => sigma0 + h * sdot[2],
                };
                sig_stage[i] = sig;
                let (fs, lg_coeff, grad5, clamped_eval) =
                    tube::f_sigma_affine(&red, sig, cert, &self.params);
                if clamped_eval {
                    clamp_hits += 1;
                }
                sdot[i] = -cert.beta_eff() * sig + fs;
                dsig_dsig[i] = -cert.beta_eff() + lg_coeff;
                // Reduced gradient -> full-state columns.
                dsig_dx9[i][IDX_VX] = grad5[0];
                dsig_dx9[i][IDX_VY] = grad5[1];
                dsig_dx9[i][vehicle::IDX_PSIDOT] = grad5[2];
                dsig_dx9[i][IDX_DELTA] = grad5[3];
                dsig_dx9[i][IDX_T] = grad5[4];
                dsig_dx9[i][IDX_B] = -grad5[4];
            }
            self.clamp_events += clamp_hits;

            // Chain the sigma-row sensitivities through the RK4 stages. The
            // x9 stage sensitivities w.r.t. (x0, u) are re-derived alongside.
            let id = vehicle::JacobianA::identity();
            let jac9 = |x: &vehicle::StateVector| -> Result<(vehicle::JacobianA, vehicle::JacobianB), MpcError> {
                let st = VehicleState::from_vector(x);
                let kappa = self
                    .track
                    .curvature_at(st.s.clamp(self.track.start_s(), self.track.end_s()))
                    .map_err(vehicle::ModelError::from)?;
                Ok(vehicle::dynamics_jacobians(&st, rates, kappa, &self.params)?)
            };
            let (a1, b1) = jac9(&stages[0])?;
            let dx1 = a1;
            let du1 = b1;
            let (a2, b2) = jac9(&stages[1])?;
            let dx2 = a2 * (id + 0.5 * h * dx1);
            let du2 = a2 * (0.5 * h * du1) + b2;
            let (a3, b3) = jac9(&stages[2])?;
            let dx3 = a3 * (id + 0.5 * h * dx2);
            let du3 = a3 * (0.5 * h * du2) + b3;
            let stage_dx = [id, id + 0.5 * h * dx1, id + 0.5 * h * dx2, id + h * dx3];
            let stage_du = [
                vehicle::JacobianB::zeros(),
                0.5 * h * du1,
                0.5 * h * du2,
                h * du3,
            ];

            // d sigma_stage_i / d(x0, sigma0, u): forward accumulation.
            let mut ks_dx = [[0.0; NX]; 4];
            let mut ks_dsig = [0.0; 4];
            let mut ks_du = [[0.0; NU]; 4];
            for i in 0..4 {
                // d sigma at stage i w.r.t. inputs of the step.
                let (sig_dx, sig_dsig, sig_du): ([f64; NX], f64, [f64; NU]) = match i {
                    0 => ([0.0; NX], 1.0, [0.0; NU]),
                    _ => {
                        let c = if i == 3 { h } else { 0.5 * h };
                        let mut dx = [0.0; NX];
                        let mut du = [0.0; NU];
                        for j in 0..NX {
                            dx[j] = c * ks_dx[i - 1][j];
                        }
                        for j in 0..NU {
                            du[j] = c * ks_du[i - 1][j];
                        }
                        (dx, 1.0 + c * ks_dsig[i - 1], du)
                    }
                };
                // k_sigma_i = sdot(x_stage_i, sigma_stage_i):
                // d k / d x0 = dsig_dx9 * stage_dx + dsig_dsig * sig_dx.
                for j in 0..NX {
                    let mut acc = 0.0;
                    for r in 0..NX {
                        acc += dsig_dx9[i][r] * stage_dx[i][(r, j)];
                    }
                    ks_dx[i][j] = acc + dsig_dsig[i] * sig_dx[j];
                }
                for j in 0..NU {
                    let mut acc = 0.0;
                    for r in 0..NX {
                        acc += dsig_dx9[i][r] * stage_du[i][(r, j)];
                    }
                    ks_du[i][j] = acc + dsig_dsig[i] * sig_du[j];
                }
                ks_dsig[i] = dsig_dsig[i] * sig_dsig;
            }

            let sigma_next =
                (sigma0 + h / 6.0 * (sdot[0] + 2.0 * sdot[1] + 2.0 * sdot[2] + sdot[3])).max(0.0);
            next[NX] = sigma_next;
            for j in 0..NX {
                a[(NX, j)] =
                    h / 6.0 * (ks_dx[0][j] + 2.0 * ks_dx[1][j] + 2.0 * ks_dx[2][j] + ks_dx[3][j]);
            }
            a[(NX, NX)] =
                1.0 + h / 6.0 * (ks_dsig[0] + 2.0 * ks_dsig[1] + 2.0 * ks_dsig[2] + ks_dsig[3]);
            for j in 0..NU {
                b[(NX, j)] =
                    h / 6.0 * (ks_du[0][j] + 2.0 * ks_du[1][j] + 2.0 * ks_du[2][j] + ks_du[3][j]);
            }
        }
        Ok((next, a, b))
    }

    /// Initialize the linearization trajectory by rolling the model forward
    /// with zero rates.
    fn cold_start(&mut self, z0: &DVector<f64>) -> Result<(), MpcError> {
        let n = self.cfg.n;
        let mut xs = Vec::with_capacity(n + 1);
        xs.push(z0.clone());
        let zero = ControlRates::default();
        for k in 0..n {
            let (next, _, _) = self.predict(&xs[k], &zero)?;
            xs.push(next);
        }
        self.xs = xs;
        self.us = vec![zero; n];
        self.initialized = true;
        Ok(())
    }

    fn shift(&mut self) -> Result<(), MpcError> {
        let n = self.cfg.n;
        for k in 0..n {
            self.xs[k] = self.xs[k + 1].clone();
        }
        for k in 0..n - 1 {
            self.us[k] = self.us[k + 1];
        }
        // Terminal stage duplicated under the repeated last input.
        let (next, _, _) = self.predict(&self.xs[n - 1].clone(), &self.us[n - 1].clone())?;
        self.xs[n] = next;
        Ok(())
    }

    fn measured_vector(&self, measured: &VehicleState) -> DVector<f64> {
        let mut z = DVector::zeros(self.nx());
        let v = measured.to_vector();
        for i in 0..NX {
            z[i] = v[i];
        }
        if self.mode == ControllerMode::Robust {
            z[NX] = self.cfg.sigma0;
        }
        z
    }

    /// One linearize-solve-update cycle. Returns the rates to apply now.
    pub fn rti_step(
        &mut self,
        measured: &VehicleState,
    ) -> Result<(ControlRates, OcpSolution), MpcError> {
        self.cycle(measured, true)
    }

    /// Full-SQP iteration tool: re-linearize and re-solve around the current
    /// trajectory without the receding-horizon shift. Repeated calls at a
    /// frozen measurement converge to the OCP solution.
    pub fn resolve(
        &mut self,
        measured: &VehicleState,
    ) -> Result<(ControlRates, OcpSolution), MpcError> {
        self.cycle(measured, false)
    }

    fn cycle(
        &mut self,
        measured: &VehicleState,
        shift: bool,
    ) -> Result<(ControlRates, OcpSolution), MpcError> {
        let start = Instant::now();
        self.clamp_events = 0;
        let z0 = self.measured_vector(measured);
        if !self.initialized {
            self.cold_start(&z0)?;
        } else if shift {
            self.shift()?;
        }
        // Initial-value embedding: linearize at the shifted trajectory but
        // pin x_0 to the measurement.
        self.xs[0] = z0.clone();

        let prob = self.build_qp(&z0)?;
        let warm = self.warm.take();
        let sol = self.solver.solve(&prob, warm.as_ref());

        let degraded = sol.degraded();
        let (rates, applied_from_fallback) = if degraded {
            self.degraded_streak += 1;
            let fallback = if self.degraded_streak >= 3 {
                // Safe-stop ramp: wind steering rate to zero, close the
                // throttle, apply the brake.
                ControlRates {
                    d_delta: 0.0,
                    d_throttle: self.cfg.rate_throttle_box[0],
                    d_brake: self.cfg.rate_brake_box[1],
                }
            } else {
                // Second input of the previous plan.
                self.us.get(1).copied().unwrap_or_default()
            };
            (fallback, true)
        } else {
            self.degraded_streak = 0;
            // Full RTI step.
            let n = self.cfg.n;
            for k in 0..=n {
                self.xs[k] += &sol.xs[k];
            }
            for k in 0..n {
                let du = &sol.us[k];
                self.us[k] = ControlRates {
                    d_delta: self.us[k].d_delta + du[0],
                    d_throttle: self.us[k].d_throttle + du[1],
                    d_brake: self.us[k].d_brake + du[2],
                };
            }
            (self.us[0], false)
        };
        if !applied_from_fallback {
            self.warm = Some(sol.clone());
        }

        let margins = self.evaluate_margins();
        let sigma: Vec<f64> = if self.mode == ControllerMode::Robust {
            self.xs.iter().map(|z| z[NX]).collect()
        } else {
            vec![0.0; self.cfg.n + 1]
        };
        let cost = self.trajectory_cost();
        let slacks = sol
            .us
            .iter()
            .map(|u| {
                let ns = self.n_slack();
                if u.len() >= NU + ns {
                    DVector::from_iterator(ns, u.iter().skip(NU).copied())
                } else {
                    DVector::from_iterator(u.len().min(ns), u.iter().copied())
                }
            })
            .collect();

        let solution = OcpSolution {
            xs: self.xs.clone(),
            us: self.us.clone(),
            sigma,
            slacks,
            cost,
            margins,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            solve_time: start.elapsed(),
            clamp_events: self.clamp_events,
            degraded,
        };
        Ok((rates, solution))
    }

    fn track_query_s(&self, s: f64) -> f64 {
        if self.track.closed() {
            s
        } else {
            s.clamp(self.track.start_s(), self.track.end_s())
        }
    }

    fn stage_output(&self, z: &DVector<f64>) -> ([f64; 3], DMatrix<f64>) {
        let s = self.track_query_s(z[0]);
        let v_ref = self.track.v_ref_at(s).unwrap_or(1.0);
        let (sdp, cdp) = z[IDX_DPSI].sin_cos();
        let (vx, vy) = (z[IDX_VX], z[IDX_VY]);
        let v = (vx * vx + vy * vy).sqrt().max(1e-6);
        let d_dot = vx * sdp + vy * cdp;
        let y = [z[IDX_D], d_dot, v - v_ref];
        let mut jac = DMatrix::zeros(3, self.nx());
        jac[(0, IDX_D)] = 1.0;
        jac[(1, IDX_DPSI)] = vx * cdp - vy * sdp;
        jac[(1, IDX_VX)] = sdp;
        jac[(1, IDX_VY)] = cdp;
        jac[(2, IDX_VX)] = vx / v;
        jac[(2, IDX_VY)] = vy / v;
        (y, jac)
    }

    fn build_qp(&mut self, z0: &DVector<f64>) -> Result<QpProblem, MpcError> {
        let n = self.cfg.n;
        let nx = self.nx();
        let ns = self.n_slack();
        let robust = self.mode == ControllerMode::Robust;
        let mut stages = Vec::with_capacity(n + 1);

        for k in 0..=n {
            let zk = self.xs[k].clone();
            let terminal = k == n;
            let nu_k = if terminal { ns } else { NU + ns };

            // Cost.
            let mut q = DMatrix::zeros(nx, nx);
            let mut q_lin = DVector::zeros(nx);
            if terminal {
                let (y, jac) = self.stage_output(&zk);
                let jrow = jac.row(1);
                q += jrow.transpose() * self.cfg.q_n * &jrow;
                q_lin += jrow.transpose() * (self.cfg.q_n * y[1]);
            } else {
                let (y, jac) = self.stage_output(&zk);
                for i in 0..3 {
                    let jrow = jac.row(i);
                    q += jrow.transpose() * self.cfg.q[i] * &jrow;
                    q_lin += jrow.transpose() * (self.cfg.q[i] * y[i]);
                }
            }
            let mut r = DMatrix::zeros(nu_k, nu_k);
            let mut r_lin = DVector::zeros(nu_k);
            let slack_off = if terminal { 0 } else { NU };
            if !terminal {
                for i in 0..NU {
                    r[(i, i)] = self.cfg.r[i];
                }
                let u = [
                    self.us[k].d_delta,
                    self.us[k].d_throttle,
                    self.us[k].d_brake,
                ];
                for i in 0..NU {
                    r_lin[i] = self.cfg.r[i] * u[i];
                }
            }
            for i in 0..ns {
                r[(slack_off + i, slack_off + i)] = self.cfg.slack_quad;
                r_lin[slack_off + i] = self.cfg.slack_lin;
            }

            // Dynamics.
            let (a, b_dyn, c) = if terminal {
                (DMatrix::zeros(0, nx), DMatrix::zeros(0, nu_k), DVector::zeros(0))
            } else {
                let (next, a9, b9) = self.predict(&zk, &self.us[k].clone())?;
                let defect = &next - &self.xs[k + 1];
                let mut b_full = DMatrix::zeros(nx, nu_k);
                b_full.view_mut((0, 0), (nx, NU)).copy_from(&b9);
                (a9, b_full, defect)
            };

            // Inequalities.
            let s_query = self.track_query_s(zk[0]);
            let (d_min, d_max) = self.track.d_bounds_at(s_query).unwrap_or((-4.0, 4.0));
            let sigma_k = if robust { zk[NX] } else { 0.0 };
            let state9 = VehicleState::from_vector(&vehicle::StateVector::from_iterator(
                zk.iter().take(NX).copied(),
            ));
            let (a_x, a_y) = crate::vehicle::body_accelerations(&state9, &self.params)?;
            let (gax, gay) = body_acceleration_gradients(&state9, &self.params)?;

            let mut rows: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
            let cert = self.cert.as_ref();
            let c_d = cert.map(|c| c.c_d).unwrap_or(0.0);

            // Lateral deviation pair, shared slack 0.
            {
                let mut cx = vec![0.0; nx];
                cx[IDX_D] = 1.0;
                if robust {
                    cx[NX] = c_d;
                }
                let mut cu = vec![0.0; nu_k];
                cu[slack_off] = -1.0;
                let h_val = zk[IDX_D] - d_max + if robust { c_d * sigma_k } else { 0.0 };
                rows.push((cx, cu, -h_val));

                let mut cx = vec![0.0; nx];
                cx[IDX_D] = -1.0;
                if robust {
                    cx[NX] = c_d;
                }
                let mut cu = vec![0.0; nu_k];
                cu[slack_off] = -1.0;
                let h_val = d_min - zk[IDX_D] + if robust { c_d * sigma_k } else { 0.0 };
                rows.push((cx, cu, -h_val));
            }
            // Octagon rows, slack 1..=n_oct.
            for (ridx, row) in self.cfg.octagon.iter().enumerate() {
                let c_oct = cert.map(|c| c.c_oct[ridx]).unwrap_or(0.0);
                let mut cx = vec![0.0; nx];
                for j in 0..NX {
                    cx[j] = gax[j] + row.m * gay[j];
                }
                if robust {
                    cx[NX] = c_oct;
                }
                let mut cu = vec![0.0; nu_k];
                cu[slack_off + 1 + ridx] = -1.0;
                let h_val =
                    a_x + row.m * a_y - row.c + if robust { c_oct * sigma_k } else { 0.0 };
                rows.push((cx, cu, -h_val));
            }
            // Steering box (hard).
            for (sign, bound) in [(1.0, self.cfg.delta_box[1]), (-1.0, -self.cfg.delta_box[0])] {
                let mut cx = vec![0.0; nx];
                cx[IDX_DELTA] = sign;
                rows.push((cx, vec![0.0; nu_k], bound - sign * zk[IDX_DELTA]));
            }
            // Throttle/brake boxes (hard).
            for (idx, lo, hi) in [(IDX_T, 0.0, 1.0), (IDX_B, 0.0, 1.0)] {
                let mut cx = vec![0.0; nx];
                cx[idx] = 1.0;
                rows.push((cx, vec![0.0; nu_k], hi - zk[idx]));
                let mut cx = vec![0.0; nx];
                cx[idx] = -1.0;
                rows.push((cx, vec![0.0; nu_k], zk[idx] - lo));
            }
            // Input-rate boxes (hard).
            if !terminal {
                let boxes = [
                    self.cfg.rate_delta_box,
                    self.cfg.rate_throttle_box,
                    self.cfg.rate_brake_box,
                ];
                let u = [
                    self.us[k].d_delta,
                    self.us[k].d_throttle,
                    self.us[k].d_brake,
                ];
                for i in 0..NU {
                    let mut cu = vec![0.0; nu_k];
                    cu[i] = 1.0;
                    rows.push((vec![0.0; nx], cu, boxes[i][1] - u[i]));
                    let mut cu = vec![0.0; nu_k];
                    cu[i] = -1.0;
                    rows.push((vec![0.0; nx], cu, u[i] - boxes[i][0]));
                }
            }
            // Slack nonnegativity.
            for i in 0..ns {
                let mut cu = vec![0.0; nu_k];
                cu[slack_off + i] = -1.0;
                rows.push((vec![0.0; nx], cu, 0.0));
            }
            // Terminal planner speed bound (hard).
            if terminal {
                let v_ref = self.track.v_ref_at(s_query).unwrap_or(1.0);
                let v_planner = v_ref * self.cfg.v_planner_margin;
                let (vx, vy) = (zk[IDX_VX], zk[IDX_VY]);
                let v = (vx * vx + vy * vy).sqrt().max(1e-6);
                let mut cx = vec![0.0; nx];
                cx[IDX_VX] = vx / v;
                cx[IDX_VY] = vy / v;
                rows.push((cx, vec![0.0; nu_k], v_planner - v));
            }

            let nc = rows.len();
            let mut cx_m = DMatrix::zeros(nc, nx);
            let mut cu_m = DMatrix::zeros(nc, nu_k);
            let mut ub = DVector::zeros(nc);
            for (i, (cx, cu, bound)) in rows.into_iter().enumerate() {
                for j in 0..nx {
                    cx_m[(i, j)] = cx[j];
                }
                for j in 0..nu_k {
                    cu_m[(i, j)] = cu[j];
                }
                ub[i] = bound;
            }

            stages.push(QpStage {
                q,
                s: DMatrix::zeros(nu_k, nx),
                r,
                q_lin,
                r_lin,
                a,
                b: b_dyn,
                c,
                cx: cx_m,
                cu: cu_m,
                ub,
            });
        }

        Ok(QpProblem {
            stages,
            x0: Some(z0 - &self.xs[0]),
        })
    }

    /// Margins of the current (updated) trajectory.
    fn evaluate_margins(&self) -> MarginReport {
        evaluate_constraints(
            &self.xs,
            &self.cfg,
            &self.track,
            &self.params,
            if self.mode == ControllerMode::Robust {
                self.cert.as_ref()
            } else {
                None
            },
        )
    }

    fn trajectory_cost(&self) -> f64 {
        let mut cost = 0.0;
        for k in 0..self.cfg.n {
            let (y, _) = self.stage_output(&self.xs[k]);
            for i in 0..3 {
                cost += self.cfg.q[i] * y[i] * y[i];
            }
            let u = [
                self.us[k].d_delta,
                self.us[k].d_throttle,
                self.us[k].d_brake,
            ];
            for i in 0..NU {
                cost += self.cfg.r[i] * u[i] * u[i];
            }
        }
        let (y, _) = self.stage_output(&self.xs[self.cfg.n]);
        cost + self.cfg.q_n * y[1] * y[1]
    }
}

/// Signed margins of every constraint along a predicted trajectory; in
/// robust mode the deviation and octagon margins are the tightened ones.
pub fn evaluate_constraints(
    xs: &[DVector<f64>],
    cfg: &OcpConfig,
    track: &TrackPath,
    params: &VehicleParams,
    cert: Option<&ContractionCertificate>,
) -> MarginReport {
    let n = xs.len() - 1;
    let mut stages = Vec::with_capacity(n + 1);
    let mut violations = ViolationSummary::default();
    let mut tally = |m: f64| {
        if m < 0.0 {
            violations.count += 1;
            violations.max_depth = violations.max_depth.max(-m);
        }
        m
    };
    for (k, z) in xs.iter().enumerate() {
        let s = if track.closed() {
            z[0]
        } else {
            z[0].clamp(track.start_s(), track.end_s())
        };
        let (d_min, d_max) = track.d_bounds_at(s).unwrap_or((-4.0, 4.0));
        let sigma = if cert.is_some() && z.len() > NX { z[NX] } else { 0.0 };
        let c_d = cert.map(|c| c.c_d).unwrap_or(0.0);
        let state9 = VehicleState::from_vector(&vehicle::StateVector::from_iterator(
            z.iter().take(NX).copied(),
        ));
        let (a_x, a_y) = match crate::vehicle::body_accelerations(&state9, params) {
            Ok(v) => v,
            Err(_) => (0.0, 0.0),
        };
        let octagon: Vec<f64> = cfg
            .octagon
            .iter()
            .enumerate()
            .map(|(ridx, row)| {
                let c_oct = cert.map(|c| c.c_oct[ridx]).unwrap_or(0.0);
                tally(row.c - (a_x + row.m * a_y) - c_oct * sigma)
            })
            .collect();
        let terminal_v = if k == n {
            let v_ref = track.v_ref_at(s).unwrap_or(1.0);
            let v = (z[IDX_VX] * z[IDX_VX] + z[IDX_VY] * z[IDX_VY]).sqrt();
            Some(tally(v_ref * cfg.v_planner_margin - v))
        } else {
            None
        };
        stages.push(StageMargins {
            d_upper: tally(d_max - z[IDX_D] - c_d * sigma),
            d_lower: tally(z[IDX_D] - d_min - c_d * sigma),
            octagon,
            delta_upper: tally(cfg.delta_box[1] - z[IDX_DELTA]),
            delta_lower: tally(z[IDX_DELTA] - cfg.delta_box[0]),
            throttle: [tally(1.0 - z[IDX_T]), tally(z[IDX_T])],
            brake: [tally(1.0 - z[IDX_B]), tally(z[IDX_B])],
            terminal_v,
        });
    }
    MarginReport {
        stages,
        violations,
    }
}
