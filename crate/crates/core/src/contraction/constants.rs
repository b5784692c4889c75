//! Tube constants derived offline from a certified metric.
//!
//! All constants are metric-weighted maxima over the certification envelope,
//! estimated by dense deterministic sampling with a local pattern-search
//! refinement and inflated by a configured safety factor. The lateral
//! deviation state is not part of the reduced model; its tightening constant
//! is reconstructed worst-case from the deviation-rate gradient divided by
//! the effective tube contraction rate.

use super::reduced::{self, ReducedState};
use super::synthesis::{synthesize, Halton, SynthesisConfig};
use super::{
    ContractionCertificate, EnvelopeSpec, MetricPolynomial, SynthesisError, UncertainSystem,
    VehicleReducedSystem, CERTIFICATE_VERSION,
};
use crate::uncertainty::UncertaintySpec;
use crate::vehicle::VehicleParams;
use nalgebra::DMatrix;

/// sup ||J d||_M / ||d||_M with M = W^{-1}; equals the largest singular
/// value of Lw^{-1} J Lw where W = Lw Lw^T.
pub fn weighted_operator_norm(j: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(w.clone())?;
    let l = chol.l();
    let jl = j * &l;
    let n = l.solve_lower_triangular(&jl)?;
    Some(n.svd(false, false).singular_values.max())
}

/// Worst-case growth of a linear constraint over the tube cross-section:
/// sqrt(g^T M^{-1} g) = sqrt(g^T W g).
pub fn weighted_gradient_norm(g: &[f64], w: &DMatrix<f64>) -> f64 {
    let gv = nalgebra::DVector::from_column_slice(g);
    (gv.dot(&(w * &gv))).max(0.0).sqrt()
}

#[derive(Debug, Clone)]
pub struct DerivedConstants {
    pub l_e: f64,
    pub l_g: Vec<f64>,
    pub c_d: f64,
    pub c_oct: Vec<f64>,
}

fn collect_envelope_samples(
    sys: &VehicleReducedSystem,
    n: usize,
) -> Result<Vec<[f64; 5]>, SynthesisError> {
    let mut halton = Halton::new();
    let mut unit = [0.0; 5];
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        halton.next_point(5, &mut unit);
        if let Some(x) = sys.envelope.sample_from_unit(&unit, &sys.params) {
            out.push(x.to_array());
        }
        attempts += 1;
        if attempts > 200 * n + 1000 {
            return Err(SynthesisError::BadConfig(
                "envelope rejection rate too high while deriving constants".into(),
            ));
        }
    }
    Ok(out)
}

/// Coordinate pattern search maximizing f inside the envelope.
fn refine_max(
    sys: &VehicleReducedSystem,
    start: &[f64; 5],
    f: &mut dyn FnMut(&[f64; 5]) -> f64,
) -> f64 {
    let boxes = sys.envelope.boxes();
    let mut x = *start;
    let mut best = f(&x);
    let mut steps: Vec<f64> = boxes.iter().map(|b| 0.1 * (b[1] - b[0])).collect();
    for _ in 0..6 {
        for i in 0..5 {
            for dir in [-1.0, 1.0] {
                let mut cand = x;
                cand[i] = (cand[i] + dir * steps[i]).clamp(boxes[i][0], boxes[i][1]);
                let st = ReducedState::from_array(&cand);
                if !sys.envelope.in_slip_slabs(&st, &sys.params) {
                    continue;
                }
                let v = f(&cand);
                if v > best {
                    best = v;
                    x = cand;
                }
            }
        }
        for s in steps.iter_mut() {
            *s *= 0.5;
        }
    }
    best
}

/// Derive (L_E, L_G_k, c_d, c_oct) for a certified metric.
pub fn derive_constants(
    sys: &VehicleReducedSystem,
    metric: &MetricPolynomial,
    beta: f64,
    octagon: &[(f64, f64)],
    cfg: &SynthesisConfig,
) -> Result<DerivedConstants, SynthesisError> {
    let samples = collect_envelope_samples(sys, cfg.constants_samples)?;
    let n_theta = sys.theta_vertices()[0].len().max(1);
    let e_vertices = sys.e_vertices();

    let le_eval = |x: &[f64; 5]| -> f64 {
        let w = metric.w_at(x);
        let mut worst: f64 = 0.0;
        for e in &e_vertices {
            if e.is_empty() {
                continue;
            }
            let j = sys.disturbance_jacobian(x, &[0.0, 0.0], e);
            if let Some(v) = weighted_operator_norm(&j, &w) {
                worst = worst.max(v);
            }
        }
        worst
    };
    let lg_eval = |x: &[f64; 5], k: usize| -> f64 {
        let w = metric.w_at(x);
        let mut theta = [0.0, 0.0];
        theta[k] = 1.0;
        let j = sys.disturbance_jacobian(x, &theta, &[0.0, 0.0]);
        weighted_operator_norm(&j, &w).unwrap_or(0.0)
    };
    let oct_eval = |x: &[f64; 5], m_r: f64, metric: &MetricPolynomial| -> f64 {
        let st = ReducedState::from_array(x);
        let (dax, day) = reduced::exact_accel_gradients(&st, &sys.params);
        let g: Vec<f64> = (0..5).map(|i| dax[i] + m_r * day[i]).collect();
        weighted_gradient_norm(&g, &metric.w_at(x))
    };
    let d_eval = |x: &[f64; 5], metric: &MetricPolynomial| -> f64 {
        // d_dot = v_x sin(dpsi) + v_y cos(dpsi); worst case over |dpsi| bound.
        let sdp = sys.envelope.dpsi_max.sin();
        let w = metric.w_at(x);
        let mut worst: f64 = 0.0;
        for sign in [-1.0, 1.0] {
            let g = [sign * sdp, 1.0, 0.0, 0.0, 0.0];
            worst = worst.max(weighted_gradient_norm(&g, &w));
        }
        worst
    };

    // Sampled maxima with argmax tracking.
    let mut l_e = (0.0_f64, samples[0]);
    let mut l_g = vec![(0.0_f64, samples[0]); n_theta];
    let mut c_oct: Vec<(f64, [f64; 5])> = vec![(0.0, samples[0]); octagon.len()];
    let mut c_dot_d = (0.0_f64, samples[0]);
    for x in &samples {
        let v = le_eval(x);
        if v > l_e.0 {
            l_e = (v, *x);
        }
        for k in 0..n_theta {
            let v = lg_eval(x, k);
            if v > l_g[k].0 {
                l_g[k] = (v, *x);
            }
        }
        for (r, &(m_r, _)) in octagon.iter().enumerate() {
            let v = oct_eval(x, m_r, metric);
            if v > c_oct[r].0 {
                c_oct[r] = (v, *x);
            }
        }
        let v = d_eval(x, metric);
        if v > c_dot_d.0 {
            c_dot_d = (v, *x);
        }
    }

    // Local refinement and safety inflation.
    let sf = cfg.safety_factor;
    let l_e_final = sf * refine_max(sys, &l_e.1, &mut |x| le_eval(x));
    let mut l_g_final = Vec::with_capacity(n_theta);
    for k in 0..n_theta {
        l_g_final.push(sf * refine_max(sys, &l_g[k].1, &mut |x| lg_eval(x, k)));
    }
    let beta_eff = beta - l_e_final;
    if beta_eff <= 0.0 {
        return Err(SynthesisError::ConstantsInvalid {
            beta,
            l_e: l_e_final,
        });
    }
    let mut c_oct_final = Vec::with_capacity(octagon.len());
    for (r, &(m_r, _)) in octagon.iter().enumerate() {
        c_oct_final.push(sf * refine_max(sys, &c_oct[r].1, &mut |x| oct_eval(x, m_r, metric)));
    }
    let c_dot = sf * refine_max(sys, &c_dot_d.1, &mut |x| d_eval(x, metric));
    let c_d = c_dot / beta_eff;

    Ok(DerivedConstants {
        l_e: l_e_final,
        l_g: l_g_final,
        c_d,
        c_oct: c_oct_final,
    })
}

/// Full offline pipeline: metric search, constants, certificate assembly.
pub fn synthesize_vehicle_certificate(
    params: &VehicleParams,
    uspec: &UncertaintySpec,
    envelope: &EnvelopeSpec,
    octagon: &[(f64, f64)],
    cfg: &SynthesisConfig,
) -> Result<ContractionCertificate, SynthesisError> {
    let sys = VehicleReducedSystem::new(params.clone(), *uspec, envelope.clone());
    let out = synthesize(&sys, cfg)?;
    let consts = derive_constants(&sys, &out.metric, out.beta, octagon, cfg)?;
    Ok(ContractionCertificate {
        version: CERTIFICATE_VERSION,
        metric: out.metric,
        beta: out.beta,
        l_e: consts.l_e,
        l_g: consts.l_g,
        c_d: consts.c_d,
        c_oct: consts.c_oct,
        envelope: envelope.clone(),
        uncertainty: *uspec,
        validation: out.report,
    })
}
