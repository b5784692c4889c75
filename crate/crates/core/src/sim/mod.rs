//! Closed-loop simulation against a perturbed plant.
//!
//! The plant integrates the full single-track model in the global frame at a
//! tenth of the control period, with its own (possibly shifted) tire
//! parameters, constant CoG force disturbances and an optional rear-grip
//! saturation zone. Each cycle projects the plant pose onto the raceline,
//! feeds the curvilinear state to the controller and applies the returned
//! input rates for one period.

pub mod svg;

use crate::contraction::reduced::ReducedState;
use crate::contraction::{ContractionCertificate, EnvelopeSpec};
use crate::mpc::{ControllerMode, MpcError, OcpConfig, RtiController};
use crate::track::{ProjectOptions, TrackError, TrackPath};
use crate::tube;
use crate::vehicle::{ControlRates, PacejkaAxle, VehicleParams, VehicleState};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub enum SimError {
    Track(TrackError),
    Mpc(MpcError),
    Config(String),
    Io(std::io::Error),
    Csv(csv::Error),
    Json(serde_json::Error),
    MismatchedTracks { a: String, b: String },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Track(e) => write!(f, "{e}"),
            Self::Mpc(e) => write!(f, "{e}"),
            Self::Config(s) => write!(f, "scenario config: {s}"),
            Self::Io(e) => write!(f, "sim io: {e}"),
            Self::Csv(e) => write!(f, "sim csv: {e}"),
            Self::Json(e) => write!(f, "sim json: {e}"),
            Self::MismatchedTracks { a, b } => {
                write!(f, "runs use different tracks: {a} vs {b}")
            }
        }
    }
}

impl std::error::Error for SimError {}

impl From<TrackError> for SimError {
    fn from(e: TrackError) -> Self {
        Self::Track(e)
    }
}

impl From<MpcError> for SimError {
    fn from(e: MpcError) -> Self {
        Self::Mpc(e)
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<csv::Error> for SimError {
    fn from(e: csv::Error) -> Self {
        Self::Csv(e)
    }
}

impl From<serde_json::Error> for SimError {
    fn from(e: serde_json::Error) -> Self {
        Self::Json(e)
    }
}

/// Multiplicative Pacejka shifts and constant CoG force disturbances applied
/// to the plant only.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlantPerturbation {
    #[serde(default = "one")]
    pub pacejka_b_scale: f64,
    #[serde(default = "one")]
    pub pacejka_c_scale: f64,
    #[serde(default = "one")]
    pub pacejka_d_scale: f64,
    #[serde(default = "one")]
    pub pacejka_e_scale: f64,
    /// Constant body-frame longitudinal force [N].
    #[serde(default)]
    pub dist_force_x_n: f64,
    /// Constant body-frame lateral force [N].
    #[serde(default)]
    pub dist_force_y_n: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for PlantPerturbation {
    fn default() -> Self {
        Self {
            pacejka_b_scale: 1.0,
            pacejka_c_scale: 1.0,
            pacejka_d_scale: 1.0,
            pacejka_e_scale: 1.0,
            dist_force_x_n: 0.0,
            dist_force_y_n: 0.0,
        }
    }
}

/// Rear-axle grip saturation over an arclength interval: lateral and
/// longitudinal rear forces capped at `fraction` of their nominal maxima.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SlipZone {
    pub s_start: f64,
    pub s_end: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Start arclength.
    #[serde(default)]
    pub start_s: f64,
    /// Initial speed as a fraction of v_ref(start_s).
    #[serde(default = "one")]
    pub start_speed_factor: f64,
    /// Stop when s exceeds track end minus this margin.
    #[serde(default = "default_end_margin")]
    pub end_margin: f64,
    /// Hard wall-clock cap on simulated time [s].
    #[serde(default = "default_duration")]
    pub max_duration: f64,
    #[serde(default)]
    pub perturbation: PlantPerturbation,
    #[serde(default)]
    pub slip_zone: Option<SlipZone>,
    #[serde(default)]
    pub seed: u64,
}

fn default_end_margin() -> f64 {
    20.0
}

fn default_duration() -> f64 {
    120.0
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        let p = &self.perturbation;
        for (name, v) in [
            ("pacejka_b_scale", p.pacejka_b_scale),
            ("pacejka_c_scale", p.pacejka_c_scale),
            ("pacejka_d_scale", p.pacejka_d_scale),
            ("pacejka_e_scale", p.pacejka_e_scale),
        ] {
            if v <= 0.0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if let Some(z) = &self.slip_zone {
            if !(0.0 < z.fraction && z.fraction <= 1.0) {
                return Err("slip fraction must be in (0, 1]".into());
            }
            if z.s_end <= z.s_start {
                return Err("slip zone must have s_end > s_start".into());
            }
        }
        if self.start_speed_factor <= 0.0 {
            return Err("start_speed_factor must be positive".into());
        }
        Ok(())
    }
}

/// Plant state in the global frame.
#[derive(Debug, Clone, Copy)]
pub struct PlantState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub psi_dot: f64,
    pub delta: f64,
    pub throttle: f64,
    pub brake: f64,
}

/// Plant model: perturbed parameters plus saturation caps derived from the
/// nominal parameters.
pub struct PlantModel {
    pub params: VehicleParams,
    pub dist_fx: f64,
    pub dist_fy: f64,
    /// Rear lateral/longitudinal force caps inside the slip zone.
    pub sat_fy_rear: f64,
    pub sat_fx_rear: f64,
}

impl PlantModel {
    pub fn build(nominal: &VehicleParams, pert: &PlantPerturbation, slip_fraction: f64) -> Self {
        let scale_axle = |a: &PacejkaAxle| PacejkaAxle {
            b: a.b * pert.pacejka_b_scale,
            c: a.c * pert.pacejka_c_scale,
            d: a.d * pert.pacejka_d_scale,
            e: a.e * pert.pacejka_e_scale,
        };
        let mut params = nominal.clone();
        params.pacejka_front = scale_axle(&nominal.pacejka_front);
        params.pacejka_rear = scale_axle(&nominal.pacejka_rear);
        Self {
            params,
            dist_fx: pert.dist_force_x_n,
            dist_fy: pert.dist_force_y_n,
            sat_fy_rear: slip_fraction * nominal.pacejka_rear.d * nominal.f_z_rear(),
            sat_fx_rear: slip_fraction * nominal.c_t.max(nominal.c_br),
        }
    }

    /// Full nonlinear plant dynamics in the global frame.
    fn dynamics(&self, z: &[f64; 9], rates: &ControlRates, slip_active: bool) -> [f64; 9] {
        let p = &self.params;
        let (v_x, v_y, psi_dot) = (z[3].max(p.v_x_floor), z[4], z[5]);
        let (delta, thr, brk) = (z[6], z[7].clamp(0.0, 1.0), z[8].clamp(0.0, 1.0));
        let alpha_f = delta - ((v_y + p.l_f * psi_dot) / v_x).atan();
        let alpha_r = -((v_y - p.l_r * psi_dot) / v_x).atan();
        let f_yf = p.pacejka_front.lateral_force(alpha_f, p.f_z_front());
        let mut f_yr = p.pacejka_rear.lateral_force(alpha_r, p.f_z_rear());
        let f_xf = -p.c_bf * brk - p.c_r0;
        let mut f_xr = p.c_t * thr - p.c_br * brk - p.c_r0;
        if slip_active {
            f_yr = f_yr.clamp(-self.sat_fy_rear, self.sat_fy_rear);
            f_xr = f_xr.clamp(-self.sat_fx_rear, self.sat_fx_rear);
        }
        let (sd, cd) = delta.sin_cos();
        let a_x =
            (f_xr + f_xf * cd - f_yf * sd - p.c_r2 * v_x * v_x + self.dist_fx) / p.m;
        let a_y = (f_yr + f_yf * cd + f_xf * sd + self.dist_fy) / p.m;
        let psi_ddot = (f_yf * p.l_f * cd + f_xf * p.l_f * sd - f_yr * p.l_r) / p.i_z;
        let (sp, cp) = z[2].sin_cos();
        [
            v_x * cp - v_y * sp,
            v_x * sp + v_y * cp,
            psi_dot,
            a_x + v_y * psi_dot,
            a_y - v_x * psi_dot,
            psi_ddot,
            rates.d_delta,
            rates.d_throttle,
            rates.d_brake,
        ]
    }

    /// Body accelerations of the plant at its current state (for violation
    /// accounting against the nominal octagon).
    pub fn accelerations(&self, st: &PlantState, slip_active: bool) -> (f64, f64) {
        let z = [
            st.x, st.y, st.psi, st.v_x, st.v_y, st.psi_dot, st.delta, st.throttle, st.brake,
        ];
        let f = self.dynamics(&z, &ControlRates::default(), slip_active);
        (f[3] - st.v_y * st.psi_dot, f[4] + st.v_x * st.psi_dot)
    }

    pub fn step(&self, st: &PlantState, rates: &ControlRates, h: f64, slip_active: bool) -> PlantState {
        let mut z = [
            st.x, st.y, st.psi, st.v_x, st.v_y, st.psi_dot, st.delta, st.throttle, st.brake,
        ];
        let substeps = 10;
        let dt = h / substeps as f64;
        for _ in 0..substeps {
            let k1 = self.dynamics(&z, rates, slip_active);
            let z2 = add(&z, &k1, dt / 2.0);
            let k2 = self.dynamics(&z2, rates, slip_active);
            let z3 = add(&z, &k2, dt / 2.0);
            let k3 = self.dynamics(&z3, rates, slip_active);
            let z4 = add(&z, &k3, dt);
            let k4 = self.dynamics(&z4, rates, slip_active);
            for i in 0..9 {
                z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            // Actuators saturate physically.
            z[7] = z[7].clamp(0.0, 1.0);
            z[8] = z[8].clamp(0.0, 1.0);
        }
        PlantState {
            x: z[0],
            y: z[1],
            psi: z[2],
            v_x: z[3],
            v_y: z[4],
            psi_dot: z[5],
            delta: z[6],
            throttle: z[7],
            brake: z[8],
        }
    }
}

fn add(z: &[f64; 9], k: &[f64; 9], h: f64) -> [f64; 9] {
    let mut out = *z;
    for i in 0..9 {
        out[i] += h * k[i];
    }
    out
}

/// One control cycle of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleRecord {
    pub t: f64,
    pub s: f64,
    pub d: f64,
    pub delta_psi: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub psi_dot: f64,
    pub delta: f64,
    pub throttle: f64,
    pub brake: f64,
    pub u_d_delta: f64,
    pub u_d_throttle: f64,
    pub u_d_brake: f64,
    /// Largest predicted tube size over the horizon.
    pub sigma_max: f64,
    pub sigma_end: f64,
    /// Worst-vertex dynamic tube drive at the measured state.
    pub f_sigma_dyn: f64,
    /// Largest predicted |a_y| over the horizon.
    pub ay_demand: f64,
    pub a_x: f64,
    pub a_y: f64,
    pub d_margin: f64,
    pub octagon_margin: f64,
    pub solve_us: f64,
    pub qp_iterations: usize,
    pub clamp_events: usize,
    pub degraded: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ViolationCount {
    pub count: usize,
    pub max_depth: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub track_id: String,
    pub completed: bool,
    pub failure: Option<String>,
    pub cycles: usize,
    pub sim_time: f64,
    /// Time to traverse from start_s to the end checkpoint.
    pub lap_time: Option<f64>,
    pub lateral_violations: ViolationCount,
    pub octagon_violations: ViolationCount,
    pub solve_us_median: f64,
    pub solve_us_p99: f64,
    pub clamp_events: usize,
    pub max_abs_psi_dot: f64,
    pub max_abs_d: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub cycles: Vec<CycleRecord>,
    pub summary: RunSummary,
}

/// Outcome of one simulation step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Running,
    Finished,
    Failed(String),
}

/// Stepwise closed-loop run; drives one controller against one plant.
pub struct SimRun {
    pub track: TrackPath,
    controller: RtiController,
    plant: PlantModel,
    slip_zone: Option<SlipZone>,
    state: PlantState,
    cert: Option<ContractionCertificate>,
    envelope_psi_dot: f64,
    nominal_params: VehicleParams,
    ocp: OcpConfig,
    scenario: ScenarioConfig,
    mode: ControllerMode,
    s_hint: f64,
    t: f64,
    end_s: f64,
    outcome: Option<StepOutcome>,
    pub cycles: Vec<CycleRecord>,
}

impl SimRun {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        track: TrackPath,
        params: VehicleParams,
        ocp: OcpConfig,
        envelope: &EnvelopeSpec,
        scenario: ScenarioConfig,
        mode: ControllerMode,
        cert: Option<ContractionCertificate>,
    ) -> Result<Self, SimError> {
        scenario.validate().map_err(SimError::Config)?;
        let controller = RtiController::new(
            ocp.clone(),
            params.clone(),
            track.clone(),
            mode,
            cert.clone(),
        )?;
        let plant = PlantModel::build(
            &params,
            &scenario.perturbation,
            scenario.slip_zone.map(|z| z.fraction).unwrap_or(1.0),
        );
        let s0 = scenario.start_s;
        let (x, y, psi) = track.global_pose_at(s0)?;
        let v0 = track.v_ref_at(s0)? * scenario.start_speed_factor;
        let kappa0 = track.curvature_at(s0)?;
        let state = PlantState {
            x,
            y,
            psi,
            v_x: v0,
            v_y: 0.0,
            psi_dot: v0 * kappa0,
            delta: 0.0,
            throttle: 0.0,
            brake: 0.0,
        };
        let end_s = track.end_s() - scenario.end_margin;
        Ok(Self {
            track,
            controller,
            plant,
            slip_zone: scenario.slip_zone,
            state,
            cert,
            envelope_psi_dot: envelope.psi_dot[1].abs(),
            nominal_params: params,
            ocp,
            scenario,
            mode,
            s_hint: s0,
            t: 0.0,
            end_s,
            outcome: None,
            cycles: Vec::new(),
        })
    }

    pub fn plant_state(&self) -> &PlantState {
        &self.state
    }

    /// One control period: project, solve, record, integrate.
    pub fn step(&mut self) -> Result<StepOutcome, SimError> {
        if let Some(out) = &self.outcome {
            return Ok(out.clone());
        }
        // Project the plant pose onto the raceline.
        let pose = match self.track.project(
            self.state.x,
            self.state.y,
            self.state.psi,
            Some(self.s_hint),
            &ProjectOptions::default(),
        ) {
            Ok(p) => p,
            Err(_) => {
                let out = StepOutcome::Failed("off_track".into());
                self.outcome = Some(out.clone());
                return Ok(out);
            }
        };
        self.s_hint = pose.s;

        // Domain failures.
        if self.state.v_x < self.nominal_params.v_x_floor {
            let out = StepOutcome::Failed("stall".into());
            self.outcome = Some(out.clone());
            return Ok(out);
        }
        if self.state.psi_dot.abs() > 1.5 * self.envelope_psi_dot {
            let out = StepOutcome::Failed("spin".into());
            self.outcome = Some(out.clone());
            return Ok(out);
        }
        let (d_min, d_max) = self.track.d_bounds_at(pose.s)?;
        if pose.d > d_max + 2.0 || pose.d < d_min - 2.0 {
            let out = StepOutcome::Failed("off_track".into());
            self.outcome = Some(out.clone());
            return Ok(out);
        }
        if pose.s >= self.end_s {
            let out = StepOutcome::Finished;
            self.outcome = Some(out.clone());
            return Ok(out);
        }
        if self.t >= self.scenario.max_duration {
            let out = StepOutcome::Failed("timeout".into());
            self.outcome = Some(out.clone());
            return Ok(out);
        }

        let measured = VehicleState {
            s: pose.s,
            d: pose.d,
            delta_psi: pose.delta_psi,
            v_x: self.state.v_x,
            v_y: self.state.v_y,
            psi_dot: self.state.psi_dot,
            delta: self.state.delta,
            throttle: self.state.throttle,
            brake: self.state.brake,
        };
        let (rates, sol) = self.controller.rti_step(&measured)?;

        // Plant-side accounting against the nominal constraint set.
        let slip_active = self
            .slip_zone
            .map(|z| pose.s >= z.s_start && pose.s <= z.s_end)
            .unwrap_or(false);
        let (a_x, a_y) = self.plant.accelerations(&self.state, slip_active);
        let d_margin = (d_max - pose.d).min(pose.d - d_min);
        let octagon_margin = self
            .ocp
            .octagon
            .iter()
            .map(|row| row.c - (a_x + row.m * a_y))
            .fold(f64::INFINITY, f64::min);
        let sigma_max = sol.sigma.iter().copied().fold(0.0, f64::max);
        let sigma_end = *sol.sigma.last().unwrap_or(&0.0);
        let f_dyn = match &self.cert {
            Some(cert) => {
                let red = ReducedState::from_full(&measured);
                let (tv, ev) = crate::uncertainty::enumerate_vertices(&cert.uncertainty);
                let mut best: f64 = 0.0;
                for th in &tv {
                    for e in &ev {
                        best = best.max(tube::f_sigma_dyn(&red, th, e, cert, &self.nominal_params).0);
                    }
                }
                best
            }
            None => 0.0,
        };
        let ay_demand = sol
            .xs
            .iter()
            .map(|z| {
                let st = VehicleState::from_vector(&crate::vehicle::StateVector::from_iterator(
                    z.iter().take(9).copied(),
                ));
                crate::vehicle::body_accelerations(&st, &self.nominal_params)
                    .map(|(_, ay)| ay.abs())
                    .unwrap_or(0.0)
            })
            .fold(0.0, f64::max);

        self.cycles.push(CycleRecord {
            t: self.t,
            s: pose.s,
            d: pose.d,
            delta_psi: pose.delta_psi,
            v_x: self.state.v_x,
            v_y: self.state.v_y,
            psi_dot: self.state.psi_dot,
            delta: self.state.delta,
            throttle: self.state.throttle,
            brake: self.state.brake,
            u_d_delta: rates.d_delta,
            u_d_throttle: rates.d_throttle,
            u_d_brake: rates.d_brake,
            sigma_max,
            sigma_end,
            f_sigma_dyn: f_dyn,
            ay_demand,
            a_x,
            a_y,
            d_margin,
            octagon_margin,
            solve_us: sol.solve_time.as_secs_f64() * 1e6,
            qp_iterations: sol.qp_iterations,
            clamp_events: sol.clamp_events,
            degraded: sol.degraded,
        });

        self.state = self.plant.step(&self.state, &rates, self.ocp.h, slip_active);
        self.t += self.ocp.h;
        Ok(StepOutcome::Running)
    }

    pub fn run_to_completion(&mut self) -> Result<(), SimError> {
        loop {
            match self.step()? {
                StepOutcome::Running => continue,
                _ => return Ok(()),
            }
        }
    }

    pub fn into_record(self) -> RunRecord {
        let outcome = self.outcome.unwrap_or(StepOutcome::Running);
        let (completed, failure) = match &outcome {
            StepOutcome::Finished => (true, None),
            StepOutcome::Failed(cause) => (false, Some(cause.clone())),
            StepOutcome::Running => (false, Some("incomplete".into())),
        };
        let mut lateral = ViolationCount::default();
        let mut octagon = ViolationCount::default();
        let mut solves: Vec<f64> = Vec::with_capacity(self.cycles.len());
        let mut max_psi_dot: f64 = 0.0;
        let mut max_d: f64 = 0.0;
        let mut clamp_total = 0;
        for c in &self.cycles {
            if c.d_margin < 0.0 {
                lateral.count += 1;
                lateral.max_depth = lateral.max_depth.max(-c.d_margin);
            }
            if c.octagon_margin < 0.0 {
                octagon.count += 1;
                octagon.max_depth = octagon.max_depth.max(-c.octagon_margin);
            }
            solves.push(c.solve_us);
            max_psi_dot = max_psi_dot.max(c.psi_dot.abs());
            max_d = max_d.max(c.d.abs());
            clamp_total += c.clamp_events;
        }
        let (median, p99) = percentiles(&mut solves);
        let sim_time = self.t;
        let lap_time = if completed { Some(sim_time) } else { None };
        RunRecord {
            summary: RunSummary {
                scenario: self.scenario.name.clone(),
                mode: match self.mode {
                    ControllerMode::Nominal => "nominal".into(),
                    ControllerMode::Robust => "robust".into(),
                },
                seed: self.scenario.seed,
                track_id: track_id(&self.track),
                completed,
                failure,
                cycles: self.cycles.len(),
                sim_time,
                lap_time,
                lateral_violations: lateral,
                octagon_violations: octagon,
                solve_us_median: median,
                solve_us_p99: p99,
                clamp_events: clamp_total,
                max_abs_psi_dot: max_psi_dot,
                max_abs_d: max_d,
            },
            cycles: self.cycles,
        }
    }
}

pub fn track_id(track: &TrackPath) -> String {
    format!(
        "len{:.1}_n{}_closed{}",
        track.length(),
        track.samples().len(),
        track.closed()
    )
}

fn percentiles(values: &mut [f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    values.sort_by(f64::total_cmp);
    let med = values[values.len() / 2];
    let p99 = values[((values.len() as f64 * 0.99) as usize).min(values.len() - 1)];
    (med, p99)
}

/// Run a scenario to completion.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    track: TrackPath,
    params: VehicleParams,
    ocp: OcpConfig,
    envelope: &EnvelopeSpec,
    scenario: ScenarioConfig,
    mode: ControllerMode,
    cert: Option<ContractionCertificate>,
) -> Result<RunRecord, SimError> {
    let mut run = SimRun::new(track, params, ocp, envelope, scenario, mode, cert)?;
    run.run_to_completion()?;
    Ok(run.into_record())
}

/// Spearman rank correlation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 3 {
        return 0.0;
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (rank_pos, &i) in idx.iter().enumerate() {
            r[i] = rank_pos as f64;
        }
        r
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx).powi(2);
        vy += (ry[i] - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Aligned-by-arclength comparison of runs sharing a track.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub summaries: Vec<RunSummary>,
    /// Common arclength grid.
    pub s_grid: Vec<f64>,
    /// Per run: d, v, psi_dot, sigma_max, f_sigma_dyn resampled onto s_grid.
    pub d_series: Vec<Vec<f64>>,
    pub v_series: Vec<Vec<f64>>,
    pub psi_dot_series: Vec<Vec<f64>>,
    pub sigma_series: Vec<Vec<f64>>,
    pub f_dyn_series: Vec<Vec<f64>>,
    /// Spearman rank correlation between predicted sigma and |a_y| demand.
    pub sigma_ay_correlation: Vec<f64>,
    /// Max |delta| between run 0 and run i on the shared grid (d series).
    pub d_delta_max: Vec<f64>,
}

pub fn compare_runs(records: &[RunRecord]) -> Result<CompareReport, SimError> {
    if records.is_empty() {
        return Err(SimError::Config("no runs to compare".into()));
    }
    let t0 = &records[0].summary.track_id;
    for r in records {
        if &r.summary.track_id != t0 {
            return Err(SimError::MismatchedTracks {
                a: t0.clone(),
                b: r.summary.track_id.clone(),
            });
        }
    }
    let s_lo = records
        .iter()
        .map(|r| r.cycles.first().map(|c| c.s).unwrap_or(0.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let s_hi = records
        .iter()
        .map(|r| r.cycles.last().map(|c| c.s).unwrap_or(0.0))
        .fold(f64::INFINITY, f64::min);
    let n_grid = 400;
    let s_grid: Vec<f64> = (0..n_grid)
        .map(|i| s_lo + (s_hi - s_lo) * i as f64 / (n_grid - 1) as f64)
        .collect();

    let resample = |r: &RunRecord, f: &dyn Fn(&CycleRecord) -> f64| -> Vec<f64> {
        let mut out = Vec::with_capacity(s_grid.len());
        let cycles = &r.cycles;
        let mut j = 0usize;
        for &s in &s_grid {
            while j + 1 < cycles.len() && cycles[j + 1].s < s {
                j += 1;
            }
            let v = if j + 1 < cycles.len() {
                let (s0, s1) = (cycles[j].s, cycles[j + 1].s);
                let t = if s1 > s0 { ((s - s0) / (s1 - s0)).clamp(0.0, 1.0) } else { 0.0 };
                f(&cycles[j]) * (1.0 - t) + f(&cycles[j + 1]) * t
            } else if let Some(c) = cycles.last() {
                f(c)
            } else {
                0.0
            };
            out.push(v);
        }
        out
    };

    let mut report = CompareReport {
        summaries: records.iter().map(|r| r.summary.clone()).collect(),
        s_grid: s_grid.clone(),
        d_series: Vec::new(),
        v_series: Vec::new(),
        psi_dot_series: Vec::new(),
        sigma_series: Vec::new(),
        f_dyn_series: Vec::new(),
        sigma_ay_correlation: Vec::new(),
        d_delta_max: Vec::new(),
    };
    for r in records {
        report.d_series.push(resample(r, &|c| c.d));
        report
            .v_series
            .push(resample(r, &|c| (c.v_x * c.v_x + c.v_y * c.v_y).sqrt()));
        report.psi_dot_series.push(resample(r, &|c| c.psi_dot));
        report.sigma_series.push(resample(r, &|c| c.sigma_max));
        report.f_dyn_series.push(resample(r, &|c| c.f_sigma_dyn));
        let sig: Vec<f64> = r.cycles.iter().map(|c| c.sigma_max).collect();
        let ay: Vec<f64> = r.cycles.iter().map(|c| c.ay_demand).collect();
        report.sigma_ay_correlation.push(spearman(&sig, &ay));
    }
    for i in 0..records.len() {
        let dmax = report.d_series[0]
            .iter()
            .zip(&report.d_series[i])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        report.d_delta_max.push(dmax);
    }
    Ok(report)
}

/// Write run artifacts (CSV series, JSON summary, SVG plots) into a directory.
pub fn write_run(record: &RunRecord, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("run.csv"))?;
    for c in &record.cycles {
        w.serialize(c)?;
    }
    w.flush()?;
    let f = std::fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &record.summary)?;

    let series = |f: &dyn Fn(&CycleRecord) -> f64| -> Vec<(f64, f64)> {
        record.cycles.iter().map(|c| (c.s, f(c))).collect()
    };
    svg::line_plot(
        &dir.join("d_vs_s.svg"),
        "lateral deviation",
        "s [m]",
        "d [m]",
        &[svg::Series {
            label: "d",
            points: series(&|c| c.d),
        }],
    )?;
    svg::line_plot(
        &dir.join("v_vs_s.svg"),
        "total speed",
        "s [m]",
        "v [m/s]",
        &[svg::Series {
            label: "v",
            points: series(&|c| (c.v_x * c.v_x + c.v_y * c.v_y).sqrt()),
        }],
    )?;
    svg::line_plot(
        &dir.join("psi_dot_vs_s.svg"),
        "yaw rate",
        "s [m]",
        "psi_dot [rad/s]",
        &[svg::Series {
            label: "psi_dot",
            points: series(&|c| c.psi_dot),
        }],
    )?;
    svg::line_plot(
        &dir.join("sigma_vs_s.svg"),
        "predicted tube size (max over horizon)",
        "s [m]",
        "sigma",
        &[
            svg::Series {
                label: "sigma_max",
                points: series(&|c| c.sigma_max),
            },
            svg::Series {
                label: "f_sigma_dyn",
                points: series(&|c| c.f_sigma_dyn),
            },
        ],
    )?;
    Ok(())
}

/// Read run artifacts back from a directory written by [`write_run`].
pub fn read_run(dir: &Path) -> Result<RunRecord, SimError> {
    let f = std::fs::File::open(dir.join("summary.json"))?;
    let summary: RunSummary = serde_json::from_reader(std::io::BufReader::new(f))?;
    let mut cycles = Vec::new();
    let mut r = csv::Reader::from_path(dir.join("run.csv"))?;
    for rec in r.deserialize() {
        cycles.push(rec?);
    }
    Ok(RunRecord { cycles, summary })
}

/// Write comparison artifacts into a directory.
pub fn write_comparison(report: &CompareReport, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    let f = std::fs::File::create(dir.join("comparison.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), report)?;

    let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
    let mut header = vec!["s".to_string()];
    for s in &report.summaries {
        for field in ["d", "v", "psi_dot", "sigma", "f_dyn"] {
            header.push(format!("{}_{}", field, s.mode));
        }
    }
    w.write_record(&header)?;
    for (i, &s) in report.s_grid.iter().enumerate() {
        let mut row = vec![format!("{s:.3}")];
        for r in 0..report.summaries.len() {
            row.push(format!("{:.6}", report.d_series[r][i]));
            row.push(format!("{:.6}", report.v_series[r][i]));
            row.push(format!("{:.6}", report.psi_dot_series[r][i]));
            row.push(format!("{:.6}", report.sigma_series[r][i]));
            row.push(format!("{:.6}", report.f_dyn_series[r][i]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    for (name, series, ylab) in [
        ("compare_d.svg", &report.d_series, "d [m]"),
        ("compare_v.svg", &report.v_series, "v [m/s]"),
        ("compare_psi_dot.svg", &report.psi_dot_series, "psi_dot [rad/s]"),
        ("compare_sigma.svg", &report.sigma_series, "sigma"),
    ] {
        let plots: Vec<svg::Series<'_>> = series
            .iter()
            .enumerate()
            .map(|(i, ys)| svg::Series {
                label: &report.summaries[i].mode,
                points: report.s_grid.iter().copied().zip(ys.iter().copied()).collect(),
            })
            .collect();
        svg::line_plot(&dir.join(name), name, "s [m]", ylab, &plots)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_perfect_and_inverse() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [2.0, 4.0, 9.0, 16.0, 25.0];
        let down = [10.0, 8.0, 3.0, 2.0, 1.0];
        assert!((spearman(&xs, &up) - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &down) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn compare_rejects_mismatched_tracks() {
        let mk = |track_id: &str| RunRecord {
            cycles: vec![],
            summary: RunSummary {
                scenario: "a".into(),
                mode: "nominal".into(),
                seed: 0,
                track_id: track_id.into(),
                completed: true,
                failure: None,
                cycles: 0,
                sim_time: 0.0,
                lap_time: None,
                lateral_violations: ViolationCount::default(),
                octagon_violations: ViolationCount::default(),
                solve_us_median: 0.0,
                solve_us_p99: 0.0,
                clamp_events: 0,
                max_abs_psi_dot: 0.0,
                max_abs_d: 0.0,
            },
        };
        let r1 = mk("t1");
        let r2 = mk("t2");
        assert!(matches!(
            compare_runs(&[r1, r2]),
            Err(SimError::MismatchedTracks { .. })
        ));
    }

    #[test]
    fn self_compare_zero_delta() {
        let cycles: Vec<CycleRecord> = (0..50)
            .map(|i| CycleRecord {
                t: i as f64 * 0.067,
                s: i as f64,
                d: (i as f64 * 0.1).sin(),
                delta_psi: 0.0,
                v_x: 15.0,
                v_y: 0.0,
                psi_dot: 0.0,
                delta: 0.0,
                throttle: 0.3,
                brake: 0.0,
                u_d_delta: 0.0,
                u_d_throttle: 0.0,
                u_d_brake: 0.0,
                sigma_max: 0.0,
                sigma_end: 0.0,
                f_sigma_dyn: 0.0,
                ay_demand: 0.0,
                a_x: 0.0,
                a_y: 0.0,
                d_margin: 1.0,
                octagon_margin: 1.0,
                solve_us: 100.0,
                qp_iterations: 5,
                clamp_events: 0,
                degraded: false,
            })
            .collect();
        let rec = RunRecord {
            summary: RunSummary {
                scenario: "s".into(),
                mode: "nominal".into(),
                seed: 1,
                track_id: "t".into(),
                completed: true,
                failure: None,
                cycles: cycles.len(),
                sim_time: 3.0,
                lap_time: Some(3.0),
                lateral_violations: ViolationCount::default(),
                octagon_violations: ViolationCount::default(),
                solve_us_median: 100.0,
                solve_us_p99: 100.0,
                clamp_events: 0,
                max_abs_psi_dot: 0.0,
                max_abs_d: 1.0,
            },
            cycles,
        };
        let report = compare_runs(&[rec.clone(), rec]).unwrap();
        assert!(report.d_delta_max[1] < 1e-12);
    }
}
