//! Integrator checks against an independent adaptive reference.

mod common;

use racetube_core::track::{generate_synthetic_track, hairpin_test_spec};
use racetube_core::vehicle::{rk4_step, ControlRates, VehicleParams, VehicleState};

/// One second of hairpin driving at the controller step size stays within
/// 1e-4 of an adaptive RKF45 reference in every state.
#[test]
fn rk4_close_to_adaptive_reference_over_hairpin_second() {
    let params = VehicleParams::default();
    let track = generate_synthetic_track(&hairpin_test_spec()).unwrap();
    let state = VehicleState {
        s: 180.0,
        d: -0.2,
        delta_psi: 0.04,
        v_x: 16.0,
        v_y: -0.4,
        psi_dot: 0.4,
        delta: 0.07,
        throttle: 0.25,
        brake: 0.0,
    };
    let rates = ControlRates {
        d_delta: 0.05,
        d_throttle: -0.1,
        d_brake: 0.05,
    };
    let h = 0.067;
    let steps = 15; // 1.005 s
    let mut st = state;
    for _ in 0..steps {
        st = rk4_step(&st, &rates, &params, &track, h).unwrap();
    }
    let reference = common::reference_integrate(
        &state,
        &rates,
        &params,
        &track,
        steps as f64 * h,
        1e-11,
    );
    let a = st.to_vector();
    let b = reference.to_vector();
    for i in 0..9 {
        let err = (a[i] - b[i]).abs();
        assert!(
            err < 1e-4,
            "state {i}: rk4 {} vs reference {} (err {err:.2e})",
            a[i],
            b[i]
        );
    }
}
