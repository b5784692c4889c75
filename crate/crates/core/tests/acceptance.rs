//! Acceptance suite: every release criterion runs here at its stated
//! tolerance and prints one PASS/FAIL line (use `--nocapture` to see the
//! lines for passing criteria).
//!
//!     cargo test -p racetube-core --test acceptance -- --nocapture

mod common;

use nalgebra::{DMatrix, DVector};
use racetube_core::config::AppConfig;
use racetube_core::contraction::constants::derive_constants;
use racetube_core::contraction::reduced::ReducedState;
use racetube_core::contraction::synthesis::{synthesize, SynthesisConfig};
use racetube_core::contraction::{
    ContractionCertificate, SynthesisError, UncertainSystem, VehicleReducedSystem,
};
use racetube_core::mpc::ControllerMode;
use racetube_core::qp::{QpProblem, QpSolver, QpStage, QpStatus};
use racetube_core::sim::{self, ScenarioConfig, SimRun, StepOutcome};
use racetube_core::track::generate_synthetic_track;
use racetube_core::tube;
use racetube_core::uncertainty;
use racetube_core::vehicle::{
    continuous_dynamics, dynamics_jacobians, rk4_step, ControlRates, VehicleState, NX,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn app_config() -> AppConfig {
    AppConfig::load(&configs_dir().join("default.toml")).expect("bundled config parses")
}

fn shipped_certificate() -> ContractionCertificate {
    ContractionCertificate::load(&configs_dir().join("certificate.json"))
        .expect("bundled certificate present")
}

fn criterion(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {id:02} ({name}): {} -- {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id:02} ({name}) failed: {detail}");
}

fn scenario(path: &str) -> ScenarioConfig {
    racetube_core::config::load_scenario(&configs_dir().join(path)).expect("scenario parses")
}

/// 1. RK4 self-convergence order on a 1 s hairpin segment.
#[test]
fn acceptance_01_rk4_convergence_order() {
    let cfg = app_config();
    let track = cfg.track.build(&configs_dir()).unwrap();
    let state = VehicleState {
        s: 175.0,
        d: 0.2,
        delta_psi: 0.02,
        v_x: 17.0,
        v_y: -0.3,
        psi_dot: 0.35,
        delta: 0.05,
        throttle: 0.3,
        brake: 0.0,
    };
    let rates = ControlRates {
        d_delta: 0.08,
        d_throttle: -0.3,
        d_brake: 0.2,
    };
    let integrate = |h: f64| -> DVector<f64> {
        let steps = (1.0 / h).round() as usize;
        let mut st = state;
        for _ in 0..steps {
            st = rk4_step(&st, &rates, &cfg.vehicle, &track, h).unwrap();
        }
        DVector::from_column_slice(st.to_vector().as_slice())
    };
    //

    let reference = integrate(0.067 / 64.0);
    let err_h = (integrate(0.067) - &reference).amax();
    let err_h2 = (integrate(0.067 / 2.0) - &reference).amax();
    let ratio = err_h / err_h2;
    criterion(
        1,
        "RK4 order",
        (12.0..=20.0).contains(&ratio),
        &format!("halving-step error ratio {ratio:.2} (theoretical 16)"),
    );
}

/// 2. Analytic dynamics Jacobians vs central finite differences.
#[test]
fn acceptance_02_jacobian_correctness() {
    let cfg = app_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rates = ControlRates {
        d_delta: 0.1,
        d_throttle: 0.3,
        d_brake: -0.2,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let st = VehicleState {
            s: rng.gen_range(0.0..400.0),
            d: rng.gen_range(-2.5..2.5),
            delta_psi: rng.gen_range(-0.4..0.4),
            v_x: rng.gen_range(6.0..28.0),
            v_y: rng.gen_range(-2.0..2.0),
            psi_dot: rng.gen_range(-1.0..1.0),
            delta: rng.gen_range(-0.3..0.3),
            throttle: rng.gen_range(0.0..1.0),
            brake: rng.gen_range(0.0..1.0),
        };
        let kappa = rng.gen_range(-0.05..0.05);
        let (a, _) = dynamics_jacobians(&st, &rates, kappa, &cfg.vehicle).unwrap();
        let x0 = st.to_vector();
        let f0 = continuous_dynamics(&st, &rates, kappa, &cfg.vehicle).unwrap();
        let scale = f0.amax().max(1.0);
        for j in 0..NX {
            let eps = 1e-6 * x0[j].abs().max(1.0);
            let mut xp = x0;
            xp[j] += eps;
            let mut xm = x0;
            xm[j] -= eps;
            let fp = continuous_dynamics(&VehicleState::from_vector(&xp), &rates, kappa, &cfg.vehicle)
                .unwrap();
            let fm = continuous_dynamics(&VehicleState::from_vector(&xm), &rates, kappa, &cfg.vehicle)
                .unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            for i in 0..NX {
                let rel = (a[(i, j)] - fd[i]).abs() / a[(i, j)].abs().max(1e-3 * scale).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    criterion(
        2,
        "Jacobian correctness",
        worst < 1e-5,
        &format!("worst relative deviation {worst:.2e} over 100 random states"),
    );
}

/// 3. Shipped certificate: zero LMI violations on a fresh held-out set.
#[test]
fn acceptance_03_certificate_validity() {
    let cfg = app_config();
    let cert = shipped_certificate();
    let sys = VehicleReducedSystem::new(
        cfg.vehicle.clone(),
        cfg.uncertainty,
        cfg.envelope.clone(),
    );
    // Fresh uniform samples, independent of the synthesis Halton stream.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut states = Vec::with_capacity(10_000);
    while states.len() < 10_000 {
        let unit: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
        if let Some(x) = sys.sample_state(&unit) {
            states.push(x);
        }
    }
    let (violations, worst, min_w, _max_w, _) =
        racetube_core::contraction::synthesis::validate_metric(
            &sys,
            &cert.metric,
            cert.beta,
            0.0,
            f64::INFINITY,
            &states,
        );
    let pairs = sys.theta_vertices().len() * sys.e_vertices().len();
    let pass = violations == 0 && cert.beta_eff() > 0.0 && min_w > 0.0 && pairs == 16;
    criterion(
        3,
        "certificate validity",
        pass,
        &format!(
            "{} samples x {pairs} vertex pairs: {violations} violations, worst eig {worst:.2e}, beta - L_E = {:.3}",
            states.len(),
            cert.beta_eff()
        ),
    );
}

/// 4. Constant-metric (degree-0) synthesis on the vehicle envelope fails.
#[test]
fn acceptance_04_constant_metric_infeasible() {
    let cfg = app_config();
    // Fewer samples than the shipped run: feasibility over a subset is
    // necessary for feasibility over the full set, so failure here is
    // conclusive for the full problem.
    let synth = SynthesisConfig {
        degree: 0,
        train_samples: 400,
        holdout_factor: 2,
        max_iters: 4000,
        ..cfg.synthesis.clone()
    };
    let sys = VehicleReducedSystem::new(
        cfg.vehicle.clone(),
        cfg.uncertainty,
        cfg.envelope.clone(),
    );
    let outcome = synthesize(&sys, &synth);
    let (pass, detail) = match outcome {
        Err(SynthesisError::Infeasible { beta, worst_eig, .. }) => (
            true,
            format!("degree-0 infeasible at beta = {beta:.2} (worst eig {worst_eig:.2e})"),
        ),
        Err(e) => (false, format!("unexpected failure mode: {e}")),
        Ok(out) => (false, format!("unexpectedly feasible with beta = {}", out.beta)),
    };
    criterion(4, "constant metric infeasible", pass, &detail);
}

/// 5. Monte-Carlo tube containment on the certified reduced model.
#[test]
fn acceptance_05_tube_containment() {
    let cfg = app_config();
    let cert = shipped_certificate();
    let sys = VehicleReducedSystem::new(
        cfg.vehicle.clone(),
        cfg.uncertainty,
        cfg.envelope.clone(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let x0 = ReducedState {
        v_x: 18.0,
        v_y: 0.0,
        psi_dot: 0.0,
        delta: 0.0,
        c_long: 0.1,
    };
    let mut total = 0usize;
    let mut contained = 0usize;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..500 {
        let theta = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let e1 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let e2 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let amp = rng.gen_range(0.0..0.04);
        let freq = rng.gen_range(0.5..2.0);
        let u_nom = move |t: f64| -> [f64; 2] {
            [amp * (freq * t).sin(), 0.15 * (0.8 * t).cos()]
        };
        let e_sig = move |t: f64| -> [f64; 2] {
            if t < 1.0 {
                e1
            } else {
                e2
            }
        };
        let series = tube::containment_rollout(&sys, &cert, x0, &u_nom, &theta, &e_sig, 2.0, 0.005);
        for (dist, sigma) in series {
            total += 1;
            let bound = sigma * 1.10 + 1e-9;
            if dist <= bound {
                contained += 1;
            }
            if sigma > 1e-9 {
                worst_ratio = worst_ratio.max(dist / sigma);
            }
        }
    }
    let frac = contained as f64 / total as f64;
    criterion(
        5,
        "tube containment",
        frac >= 0.99,
        &format!(
            "{:.2}% of {} time samples inside sigma*1.10 (worst ratio {worst_ratio:.3})",
            frac * 100.0,
            total
        ),
    );
}

/// 6. Robust prediction model has exactly one extra state.
#[test]
fn acceptance_06_single_additional_state() {
    let cfg = app_config();
    let cert = shipped_certificate();
    let track = cfg.track.build(&configs_dir()).unwrap();
    let nominal = racetube_core::mpc::RtiController::new(
        cfg.ocp.clone(),
        cfg.vehicle.clone(),
        track.clone(),
        ControllerMode::Nominal,
        None,
    )
    .unwrap();
    let robust = racetube_core::mpc::RtiController::new(
        cfg.ocp.clone(),
        cfg.vehicle.clone(),
        track,
        ControllerMode::Robust,
        Some(cert),
    )
    .unwrap();
    let pass = nominal.prediction_dim() == 9 && robust.prediction_dim() == 10;
    criterion(
        6,
        "single additional state",
        pass,
        &format!(
            "nominal {} -> robust {}",
            nominal.prediction_dim(),
            robust.prediction_dim()
        ),
    );
}

fn run_mode(
    cfg: &AppConfig,
    scen: &ScenarioConfig,
    mode: ControllerMode,
    cert: Option<ContractionCertificate>,
) -> sim::RunRecord {
    let track = cfg.track.build(&configs_dir()).unwrap();
    sim::run_closed_loop(
        track,
        cfg.vehicle.clone(),
        cfg.ocp.clone(),
        &cfg.envelope,
        scen.clone(),
        mode,
        cert,
    )
    .expect("run executes")
}

/// 7. Perturbed-plant comparison: nominal violates, robust does not, robust
/// is no faster through the corner.
#[test]
fn acceptance_07_perturbed_comparison() {
    let cfg = app_config();
    let cert = shipped_certificate();
    let scen = scenario("scenarios/hairpin_perturbed.toml");
    let nominal = run_mode(&cfg, &scen, ControllerMode::Nominal, None);
    let robust = run_mode(&cfg, &scen, ControllerMode::Robust, Some(cert));

    let nom_violations =
        nominal.summary.lateral_violations.count + nominal.summary.octagon_violations.count;
    let rob_violations =
        robust.summary.lateral_violations.count + robust.summary.octagon_violations.count;

    // Corner speed at the hairpin apex (s in the 250..290 arc).
    let apex_speed = |r: &sim::RunRecord| -> f64 {
        r.cycles
            .iter()
            .filter(|c| c.s >= 250.0 && c.s <= 290.0)
            .map(|c| (c.v_x * c.v_x + c.v_y * c.v_y).sqrt())
            .fold(0.0, f64::max)
    };
    let v_nom = apex_speed(&nominal);
    let v_rob = apex_speed(&robust);

    let pass = nom_violations >= 1 && rob_violations == 0 && v_rob <= v_nom + 1e-9;
    criterion(
        7,
        "perturbed-plant comparison",
        pass,
        &format!(
            "nominal CV = {nom_violations} (lat {} / oct {}), robust CV = {rob_violations}, apex speed {v_rob:.2} vs {v_nom:.2} m/s",
            nominal.summary.lateral_violations.count, nominal.summary.octagon_violations.count
        ),
    );
}

/// 8. Slip test: robust survives the rear-grip loss, nominal spins or leaves
/// the corridor.
#[test]
fn acceptance_08_slip_test() {
    let cfg = app_config();
    let cert = shipped_certificate();
    let scen = scenario("scenarios/hairpin_slip.toml");
    let nominal = run_mode(&cfg, &scen, ControllerMode::Nominal, None);
    let robust = run_mode(&cfg, &scen, ControllerMode::Robust, Some(cert));

    let nominal_diverged = matches!(
        nominal.summary.failure.as_deref(),
        Some("spin") | Some("off_track")
    ) || nominal.summary.lateral_violations.count > 0
        || nominal.summary.max_abs_psi_dot > cfg.envelope.psi_dot[1];
    let robust_ok = robust.summary.completed && robust.summary.max_abs_d <= 4.0;
    criterion(
        8,
        "slip test",
        nominal_diverged && robust_ok,
        &format!(
            "nominal: failure = {:?}, max |psi_dot| = {:.2}, lateral CV = {}; robust: completed = {}, max |d| = {:.2} m",
            nominal.summary.failure,
            nominal.summary.max_abs_psi_dot,
            nominal.summary.lateral_violations.count,
            robust.summary.completed,
            robust.summary.max_abs_d
        ),
    );
}

/// 9. Predicted tube size correlates with lateral grip demand along the lap.
#[test]
fn acceptance_09_tube_demand_correlation() {
    let cfg = app_config();
    let cert = shipped_certificate();
    let scen = scenario("scenarios/hairpin_perturbed.toml");
    let robust = run_mode(&cfg, &scen, ControllerMode::Robust, Some(cert));
    let sigma: Vec<f64> = robust.cycles.iter().map(|c| c.sigma_max).collect();
    let ay: Vec<f64> = robust.cycles.iter().map(|c| c.ay_demand).collect();
    let rho = sim::spearman(&sigma, &ay);
    criterion(
        9,
        "tube-demand correlation",
        rho > 0.5,
        &format!("Spearman rho = {rho:.3} over {} cycles", sigma.len()),
    );
}

/// 10. Robust-mode median solve time within 1.6x nominal on the same
/// scenario, cycles interleaved so background load hits both alike.
#[test]
fn acceptance_10_computational_overhead() {
    let cfg = app_config();
    let cert = shipped_certificate();
    let scen = scenario("scenarios/hairpin_nominal.toml");
    let track = cfg.track.build(&configs_dir()).unwrap();
    let mut nominal = SimRun::new(
        track.clone(),
        cfg.vehicle.clone(),
        cfg.ocp.clone(),
        &cfg.envelope,
        scen.clone(),
        ControllerMode::Nominal,
        None,
    )
    .unwrap();
    let mut robust = SimRun::new(
        track,
        cfg.vehicle.clone(),
        cfg.ocp.clone(),
        &cfg.envelope,
        scen,
        ControllerMode::Robust,
        Some(cert),
    )
    .unwrap();
    // Interleave the two control loops cycle by cycle.
    loop {
        let a = nominal.step().unwrap();
        let b = robust.step().unwrap();
        if a != StepOutcome::Running && b != StepOutcome::Running {
            break;
        }
    }
    let nom = nominal.into_record();
    let rob = robust.into_record();
    let ratio = rob.summary.solve_us_median / nom.summary.solve_us_median.max(1.0);
    criterion(
        10,
        "computational overhead",
        ratio <= 1.6 && nom.summary.completed && rob.summary.completed,
        &format!(
            "median solve {:.0} us robust vs {:.0} us nominal (ratio {ratio:.2})",
            rob.summary.solve_us_median, nom.summary.solve_us_median
        ),
    );
}

/// 11. Structured interior-point solutions match the dense active-set
/// enumeration oracle.
#[test]
fn acceptance_11_qp_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let prob = random_qp(&mut rng, 5, 4, 2);
        let mut solver = QpSolver::default();
        let sol = solver.solve(&prob, None);
        assert_eq!(sol.status, QpStatus::Converged, "case {case} did not converge");
        let oracle = common::active_set_enumeration(&prob).expect("oracle finds optimum");
        let mut off = 0usize;
        for (k, st) in prob.stages.iter().enumerate() {
            for i in 0..st.nx() {
                worst = worst.max((sol.xs[k][i] - oracle[off + i]).abs());
            }
            off += st.nx();
            for i in 0..st.nu() {
                worst = worst.max((sol.us[k][i] - oracle[off + i]).abs());
            }
            off += st.nu();
        }
    }
    criterion(
        11,
        "QP oracle equivalence",
        worst < 1e-7,
        &format!("max deviation {worst:.2e} over 100 random stage-wise QPs"),
    );
}

/// 12. Robust mode with zero uncertainty boxes reproduces the nominal
/// closed loop.
#[test]
fn acceptance_12_degenerate_robustification() {
    let cfg = app_config();
    let mut cert = shipped_certificate();
    cert.uncertainty = cert.uncertainty.scaled(0.0);
    let scen = scenario("scenarios/hairpin_nominal.toml");
    let nominal = run_mode(&cfg, &scen, ControllerMode::Nominal, None);
    let degenerate = run_mode(&cfg, &scen, ControllerMode::Robust, Some(cert));
    let n = nominal.cycles.len().min(degenerate.cycles.len());
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let a = &nominal.cycles[k];
        let b = &degenerate.cycles[k];
        for (x, y) in [
            (a.s, b.s),
            (a.d, b.d),
            (a.delta_psi, b.delta_psi),
            (a.v_x, b.v_x),
            (a.v_y, b.v_y),
            (a.psi_dot, b.psi_dot),
            (a.delta, b.delta),
            (a.throttle, b.throttle),
            (a.brake, b.brake),
        ] {
            worst = worst.max((x - y).abs());
        }
    }
    let pass = worst < 1e-6 && nominal.cycles.len() == degenerate.cycles.len();
    criterion(
        12,
        "degenerate robustification",
        pass,
        &format!(
            "max per-state deviation {worst:.2e} over {n} cycles (cycle counts {} vs {})",
            nominal.cycles.len(),
            degenerate.cycles.len()
        ),
    );
}

fn random_qp(rng: &mut ChaCha8Rng, n_stages: usize, nx: usize, nu: usize) -> QpProblem {
    let mut stages = Vec::new();
    for k in 0..n_stages {
        let last = k == n_stages - 1;
        let nuk = if last { 0 } else { nu };
        let l = DMatrix::from_fn(nx, nx, |_, _| rng.gen_range(-0.4..0.4));
        let mut q = &l * l.transpose();
        for i in 0..nx {
            q[(i, i)] += 1.0;
        }
        let mut r = DMatrix::zeros(nuk, nuk);
        for i in 0..nuk {
            r[(i, i)] = rng.gen_range(0.5..2.0);
        }
        // Two inequality rows per stage keeps the enumeration cheap (2^10).
        let nc = 2;
        stages.push(QpStage {
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
                        rng.gen_range(-0.15..0.15)
                    }
                })
            },
            b: if last {
                DMatrix::zeros(0, nuk)
            } else {
                DMatrix::from_fn(nx, nuk, |_, _| rng.gen_range(-0.4..0.4))
            },
            c: if last {
                DVector::zeros(0)
            } else {
                DVector::from_fn(nx, |_, _| rng.gen_range(-0.05..0.05))
            },
            cx: DMatrix::from_fn(nc, nx, |_, _| rng.gen_range(-1.0..1.0)),
            cu: DMatrix::from_fn(nc, nuk, |_, _| rng.gen_range(-1.0..1.0)),
            ub: DVector::from_fn(nc, |_, _| rng.gen_range(0.3..1.5)),
        });
    }
    QpProblem {
        stages,
        x0: Some(DVector::from_fn(nx, |_, _| rng.gen_range(-0.3..0.3))),
    }
}
