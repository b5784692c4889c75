//! Control contraction metric search and certification for the reduced
//! uncertain vehicle model.
//!
//! The dual metric W(x) and differential feedback Y(x) are polynomial in
//! (v_x, v_y, psi_dot) up to total degree 4. Feasibility of the contraction
//! LMI is enforced on a low-discrepancy sample of the driving envelope times
//! all uncertainty-box vertices, maximizing the rate beta by bisection, and
//! the result is validated on a 10x denser held-out set. Certificates are
//! therefore high-confidence sampled certificates, not global proofs; the
//! validation report ships inside the certificate file.

pub mod constants;
pub mod lmi;
pub mod poly;
pub mod reduced;
pub mod synthesis;

pub use reduced::{PolynomialApprox, ReducedState};

use crate::uncertainty::{self, UncertaintySpec};
use crate::vehicle::VehicleParams;
use nalgebra::{Cholesky, DMatrix, Dyn};
use poly::PolyBasis;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

pub const CERTIFICATE_VERSION: u32 = 1;

#[derive(Debug)]
pub enum SynthesisError {
    Infeasible {
        beta: f64,
        worst_eig: f64,
        worst_sample: Vec<f64>,
    },
    ConstantsInvalid {
        beta: f64,
        l_e: f64,
    },
    BadConfig(String),
    Io(std::io::Error),
    Json(serde_json::Error),
    VersionMismatch {
        found: u32,
    },
}

impl fmt::Display for SynthesisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Infeasible {
                beta,
                worst_eig,
                worst_sample,
            } => write!(
                f,
                "no feasible metric at beta = {beta:.4}: worst residual eigenvalue {worst_eig:.3e} at sample {worst_sample:?}"
            ),
            Self::ConstantsInvalid { beta, l_e } => write!(
                f,
                "tube constants invalid: beta - L_E = {:.4} <= 0",
                beta - l_e
            ),
            Self::BadConfig(s) => write!(f, "bad synthesis config: {s}"),
            Self::Io(e) => write!(f, "certificate io: {e}"),
            Self::Json(e) => write!(f, "certificate json: {e}"),
            Self::VersionMismatch { found } => write!(
                f,
                "certificate version {found} unsupported (expected {CERTIFICATE_VERSION})"
            ),
        }
    }
}

impl std::error::Error for SynthesisError {}

impl From<std::io::Error> for SynthesisError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<serde_json::Error> for SynthesisError {
    fn from(e: serde_json::Error) -> Self {
        Self::Json(e)
    }
}

/// Certification region: box bounds on the reduced states plus a safe
/// driving envelope coupling lateral velocity and yaw rate through slip
/// limits at both axles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvelopeSpec {
    pub v_x: [f64; 2],
    pub v_y: [f64; 2],
    pub psi_dot: [f64; 2],
    pub delta: [f64; 2],
    pub c_long: [f64; 2],
    /// Front/rear slip-slab half widths [rad]: |v_y + l_f psi_dot| <= a_f * v_x.
    pub alpha_front_max: f64,
    pub alpha_rear_max: f64,
    /// Worst-case relative heading for the deviation-constraint reconstruction.
    pub dpsi_max: f64,
}

impl Default for EnvelopeSpec {
    fn default() -> Self {
        Self {
            v_x: [8.0, 28.0],
            v_y: [-1.5, 1.5],
            psi_dot: [-1.0, 1.0],
            delta: [-0.35, 0.35],
            c_long: [-1.0, 1.0],
            alpha_front_max: 0.12,
            alpha_rear_max: 0.10,
            dpsi_max: 0.25,
        }
    }
}

impl EnvelopeSpec {
    pub fn boxes(&self) -> [[f64; 2]; 5] {
        [self.v_x, self.v_y, self.psi_dot, self.delta, self.c_long]
    }

    pub fn contains(&self, x: &ReducedState, params: &VehicleParams) -> bool {
        let b = self.boxes();
        let a = x.to_array();
        for i in 0..5 {
            if a[i] < b[i][0] - 1e-12 || a[i] > b[i][1] + 1e-12 {
                return false;
            }
        }
        self.in_slip_slabs(x, params)
    }

    pub fn in_slip_slabs(&self, x: &ReducedState, params: &VehicleParams) -> bool {
        (x.v_y + params.l_f * x.psi_dot).abs() <= self.alpha_front_max * x.v_x + 1e-12
            && (x.v_y - params.l_r * x.psi_dot).abs() <= self.alpha_rear_max * x.v_x + 1e-12
    }

    /// Clamp the state into the envelope box (slip slabs are left alone);
    /// returns whether anything moved. The controller uses this when
    /// predictions transiently exit the certified region.
    pub fn clamp_box(&self, x: &ReducedState) -> (ReducedState, bool) {
        let b = self.boxes();
        let mut a = x.to_array();
        let mut clamped = false;
        for i in 0..5 {
            let c = a[i].clamp(b[i][0], b[i][1]);
            if c != a[i] {
                clamped = true;
                a[i] = c;
            }
        }
        (ReducedState::from_array(&a), clamped)
    }

    /// Map a unit-cube point into the box; None when outside the slip slabs.
    pub fn sample_from_unit(&self, u: &[f64; 5], params: &VehicleParams) -> Option<ReducedState> {
        let b = self.boxes();
        let mut a = [0.0; 5];
        for i in 0..5 {
            a[i] = b[i][0] + (b[i][1] - b[i][0]) * u[i];
        }
        let x = ReducedState::from_array(&a);
        if self.in_slip_slabs(&x, params) {
            Some(x)
        } else {
            None
        }
    }

    pub fn metric_arg_center_halfwidth(&self) -> ([f64; 3], [f64; 3]) {
        let c = [
            0.5 * (self.v_x[0] + self.v_x[1]),
            0.5 * (self.v_y[0] + self.v_y[1]),
            0.5 * (self.psi_dot[0] + self.psi_dot[1]),
        ];
        let h = [
            0.5 * (self.v_x[1] - self.v_x[0]),
            0.5 * (self.v_y[1] - self.v_y[0]),
            0.5 * (self.psi_dot[1] - self.psi_dot[0]),
        ];
        (c, h)
    }
}

/// Polynomial dual metric W(x) and differential feedback Y(x) sharing one
/// monomial basis over the metric arguments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricPolynomial {
    pub basis: PolyBasis,
    /// State indices the basis arguments refer to.
    pub args: Vec<usize>,
    pub nx: usize,
    pub nu: usize,
    /// Per-monomial packed upper-triangle coefficients of symmetric W.
    pub w_coeffs: Vec<Vec<f64>>,
    /// Per-monomial row-major nu x nx coefficients of Y.
    pub y_coeffs: Vec<Vec<f64>>,
}

pub fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub fn sym_index(n: usize, p: usize, q: usize) -> usize {
    debug_assert!(p <= q && q < n);
    p * n - (p * p - p) / 2 + (q - p)
}

impl MetricPolynomial {
    pub fn zeros(basis: PolyBasis, args: Vec<usize>, nx: usize, nu: usize) -> Self {
        let m = basis.len();
        Self {
            basis,
            args,
            nx,
            nu,
            w_coeffs: vec![vec![0.0; sym_len(nx)]; m],
            y_coeffs: vec![vec![0.0; nu * nx]; m],
        }
    }

    fn arg_values(&self, x: &[f64]) -> Vec<f64> {
        self.args.iter().map(|&i| x[i]).collect()
    }

    /// W(x) as a dense symmetric matrix.
    pub fn w_at(&self, x: &[f64]) -> DMatrix<f64> {
        let args = self.arg_values(x);
        let mut phi = vec![0.0; self.basis.len()];
        self.basis.eval(&args, &mut phi);
        let mut w = DMatrix::zeros(self.nx, self.nx);
        for (m, wm) in self.w_coeffs.iter().enumerate() {
            let f = phi[m];
            if f == 0.0 {
                continue;
            }
            for p in 0..self.nx {
                for q in p..self.nx {
                    let v = wm[sym_index(self.nx, p, q)] * f;
                    w[(p, q)] += v;
                    if p != q {
                        w[(q, p)] += v;
                    }
                }
            }
        }
        w
    }

    pub fn y_at(&self, x: &[f64]) -> DMatrix<f64> {
        let args = self.arg_values(x);
        let mut phi = vec![0.0; self.basis.len()];
        self.basis.eval(&args, &mut phi);
        let mut y = DMatrix::zeros(self.nu, self.nx);
        for (m, ym) in self.y_coeffs.iter().enumerate() {
            let f = phi[m];
            if f == 0.0 {
                continue;
            }
            for i in 0..self.nu {
                for j in 0..self.nx {
                    y[(i, j)] += ym[i * self.nx + j] * f;
                }
            }
        }
        y
    }

    /// W(x) together with its gradients w.r.t. the full-state indices in
    /// `self.args` (physical units).
    pub fn w_with_grads_at(&self, x: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let args = self.arg_values(x);
        let na = self.args.len();
        let mm = self.basis.len();
        let mut phi = vec![0.0; mm];
        let mut dphi = vec![vec![0.0; mm]; na];
        self.basis.eval_with_grad(&args, &mut phi, &mut dphi);
        let mut w = DMatrix::zeros(self.nx, self.nx);
        let mut grads = vec![DMatrix::zeros(self.nx, self.nx); na];
        for (m, wm) in self.w_coeffs.iter().enumerate() {
            for p in 0..self.nx {
                for q in p..self.nx {
                    let c = wm[sym_index(self.nx, p, q)];
                    if c == 0.0 {
                        continue;
                    }
                    let v = c * phi[m];
                    w[(p, q)] += v;
                    if p != q {
                        w[(q, p)] += v;
                    }
                    for j in 0..na {
                        let g = c * dphi[j][m];
                        grads[j][(p, q)] += g;
                        if p != q {
                            grads[j][(q, p)] += g;
                        }
                    }
                }
            }
        }
        (w, grads)
    }

    /// Cholesky factor of W(x); W must be positive definite on the envelope.
    pub fn w_cholesky(&self, x: &[f64]) -> Option<Cholesky<f64, Dyn>> {
        Cholesky::new(self.w_at(x))
    }

    /// Primal metric M(x) = W(x)^-1.
    pub fn m_at(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.w_cholesky(x).map(|c| c.inverse())
    }

    /// Ancillary differential feedback K(x) = Y(x) W(x)^-1.
    pub fn k_at(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let chol = self.w_cholesky(x)?;
        let y = self.y_at(x);
        // K = Y W^-1  <=>  K W = Y  <=>  W K^T = Y^T.
        let kt = chol.solve(&y.transpose());
        Some(kt.transpose())
    }

    /// Scale W and Y by a common positive factor (feasibility-preserving).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for wm in &mut out.w_coeffs {
            for v in wm.iter_mut() {
                *v *= factor;
            }
        }
        for ym in &mut out.y_coeffs {
            for v in ym.iter_mut() {
                *v *= factor;
            }
        }
        out
    }
}

/// Validation statistics stored with a certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub training_samples: usize,
    pub holdout_samples: usize,
    pub vertex_pairs: usize,
    pub violations: usize,
    /// Largest residual eigenvalue over the held-out set (must be <= 0).
    pub worst_eig: f64,
    /// Smallest W eigenvalue seen (must be >= w_lo).
    pub min_w_eig: f64,
    pub max_w_eig: f64,
}

/// Everything the online controller needs from the offline metric search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub version: u32,
    pub metric: MetricPolynomial,
    /// Contraction rate [1/s].
    pub beta: f64,
    /// Disturbance Lipschitz bound [1/s].
    pub l_e: f64,
    /// Per-parameter Lipschitz bounds L_{G,k} [1/s].
    pub l_g: Vec<f64>,
    /// Tightening constant for the lateral-deviation bounds.
    pub c_d: f64,
    /// Tightening constants for the acceleration octagon rows.
    pub c_oct: Vec<f64>,
    pub envelope: EnvelopeSpec,
    pub uncertainty: UncertaintySpec,
    pub validation: ValidationReport,
}

impl ContractionCertificate {
    /// Effective contraction rate of the tube dynamics.
    pub fn beta_eff(&self) -> f64 {
        self.beta - self.l_e
    }

    pub fn l_g_sum(&self) -> f64 {
        self.l_g.iter().sum()
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthesisError> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SynthesisError> {
        let f = std::fs::File::open(path)?;
        let cert: Self = serde_json::from_reader(std::io::BufReader::new(f))?;
        if cert.version != CERTIFICATE_VERSION {
            return Err(SynthesisError::VersionMismatch {
                found: cert.version,
            });
        }
        Ok(cert)
    }
}

/// Input-affine uncertain system f(x) + B(x)u + G(x)theta + E(x)e presented
/// to the metric search.
pub trait UncertainSystem {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    /// State indices the metric polynomial may depend on. The input matrix
    /// rows at these indices must vanish so that W_dot stays input-free.
    fn metric_args(&self) -> Vec<usize>;
    fn drift(&self, x: &[f64]) -> Vec<f64>;
    fn input_matrix(&self, x: &[f64]) -> DMatrix<f64>;
    /// A(x, theta, e) = df/dx + d(G theta)/dx + d(E e)/dx.
    fn a_matrix(&self, x: &[f64], theta: &[f64], e: &[f64]) -> DMatrix<f64>;
    /// G(x) theta + E(x) e.
    fn disturbance(&self, x: &[f64], theta: &[f64], e: &[f64]) -> Vec<f64>;
    fn theta_vertices(&self) -> Vec<Vec<f64>>;
    fn e_vertices(&self) -> Vec<Vec<f64>>;
    /// Map a unit-cube point into the certification region; None = rejected.
    fn sample_state(&self, unit: &[f64]) -> Option<Vec<f64>>;
}

/// The reduced vehicle model as an [`UncertainSystem`].
pub struct VehicleReducedSystem {
    pub params: VehicleParams,
    pub uspec: UncertaintySpec,
    pub envelope: EnvelopeSpec,
    pub approx: PolynomialApprox,
}

impl VehicleReducedSystem {
    pub fn new(params: VehicleParams, uspec: UncertaintySpec, envelope: EnvelopeSpec) -> Self {
        let v_center = 0.5 * (envelope.v_x[0] + envelope.v_x[1]);
        let delta_max = envelope.delta[1].abs().max(envelope.delta[0].abs());
        let approx = PolynomialApprox::build(&params, v_center, delta_max);
        Self {
            params,
            uspec,
            envelope,
            approx,
        }
    }

    fn v_clamp(&self) -> f64 {
        self.envelope.v_x[0]
    }

    /// Analytic Jacobian of G(x) theta + E(x) e w.r.t. the reduced state.
    pub fn disturbance_jacobian(&self, x: &[f64], theta: &[f64], e: &[f64]) -> DMatrix<f64> {
        let j = uncertainty::disturbance_jacobian(
            x[reduced::R_VX],
            x[reduced::R_VY],
            x[reduced::R_PSIDOT],
            x[reduced::R_DELTA],
            self.v_clamp(),
            &self.params,
            &self.uspec,
            &[theta[0], theta[1]],
            &[e[0], e[1]],
        );
        DMatrix::from_fn(reduced::NR, reduced::NR, |r, c| j[(r, c)])
    }
}

impl UncertainSystem for VehicleReducedSystem {
    fn nx(&self) -> usize {
        reduced::NR
    }

    fn nu(&self) -> usize {
        reduced::NU_R
    }

    fn metric_args(&self) -> Vec<usize> {
        vec![reduced::R_VX, reduced::R_VY, reduced::R_PSIDOT]
    }

    fn drift(&self, x: &[f64]) -> Vec<f64> {
        let xs = ReducedState::from_array(x);
        reduced::surrogate_dynamics(&xs, &[0.0, 0.0], &self.approx, &self.params).to_vec()
    }

    fn input_matrix(&self, _x: &[f64]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(reduced::NR, reduced::NU_R);
        b[(reduced::R_DELTA, 0)] = 1.0;
        b[(reduced::R_C, 1)] = 1.0;
        b
    }

    fn a_matrix(&self, x: &[f64], theta: &[f64], e: &[f64]) -> DMatrix<f64> {
        let xs = ReducedState::from_array(x);
        let j = reduced::surrogate_jacobian(&xs, &self.approx, &self.params);
        let mut a = DMatrix::zeros(reduced::NR, reduced::NR);
        for r in 0..reduced::NR {
            for c in 0..reduced::NR {
                a[(r, c)] = j[r][c];
            }
        }
        a += self.disturbance_jacobian(x, theta, e);
        a
    }

    fn disturbance(&self, x: &[f64], theta: &[f64], e: &[f64]) -> Vec<f64> {
        let w = uncertainty::disturbance_term(
            x[reduced::R_VX],
            x[reduced::R_VY],
            x[reduced::R_PSIDOT],
            x[reduced::R_DELTA],
            x[reduced::R_C],
            self.v_clamp(),
            &self.params,
            &self.uspec,
            &[theta[0], theta[1]],
            &[e[0], e[1]],
        );
        vec![w[0], w[1], w[2], 0.0, 0.0]
    }

    fn theta_vertices(&self) -> Vec<Vec<f64>> {
        uncertainty::enumerate_vertices(&self.uspec)
            .0
            .into_iter()
            .map(|v| v.to_vec())
            .collect()
    }

    fn e_vertices(&self) -> Vec<Vec<f64>> {
        uncertainty::enumerate_vertices(&self.uspec)
            .1
            .into_iter()
            .map(|v| v.to_vec())
            .collect()
    }

    fn sample_state(&self, unit: &[f64]) -> Option<Vec<f64>> {
        let u: [f64; 5] = [unit[0], unit[1], unit[2], unit[3], unit[4]];
        self.envelope
            .sample_from_unit(&u, &self.params)
            .map(|x| x.to_array().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_eval_and_scaling() {
        let basis = PolyBasis::total_degree(3, 2, vec![0.0; 3], vec![1.0; 3]);
        let mut m = MetricPolynomial::zeros(basis, vec![0, 1, 2], 5, 2);
        // W = I + 0.5 * z0 * e0 e0^T
        for p in 0..5 {
            m.w_coeffs[0][sym_index(5, p, p)] = 1.0;
        }
        m.w_coeffs[1][sym_index(5, 0, 0)] = 0.5; // first degree-1 monomial is z0
        let x = [0.4, 0.0, 0.0, 0.0, 0.0];
        let w = m.w_at(&x);
        assert_eq!(w[(0, 0)], 1.0 + 0.5 * 0.4);
        assert_eq!(w[(1, 1)], 1.0);
        let m2 = m.scaled(2.0);
        let w2 = m2.w_at(&x);
        assert!((w2[(0, 0)] - 2.0 * w[(0, 0)]).abs() < 1e-15);
    }

    #[test]
    fn w_grads_match_fd() {
        let basis = PolyBasis::total_degree(3, 3, vec![17.0, 0.0, 0.0], vec![10.0, 1.5, 1.0]);
        let mut m = MetricPolynomial::zeros(basis, vec![0, 1, 2], 5, 2);
        // Populate deterministic pseudo-random coefficients.
        let mut s = 1.0_f64;
        for wm in &mut m.w_coeffs {
            for v in wm.iter_mut() {
                s = (s * 1.1 + 0.3).rem_euclid(2.0);
                *v = s - 1.0;
            }
        }
        let x = [14.0, 0.5, -0.3, 0.1, 0.2];
        let (_, grads) = m.w_with_grads_at(&x);
        for j in 0..3 {
            let eps = 1e-6;
            let mut xp = x;
            xp[j] += eps;
            let mut xm = x;
            xm[j] -= eps;
            let wp = m.w_at(&xp);
            let wm_ = m.w_at(&xm);
            let fd = (wp - wm_) / (2.0 * eps);
            let diff = (&grads[j] - &fd).abs().max();
            assert!(diff < 1e-6, "grad {j} mismatch {diff}");
        }
    }

    #[test]
    fn disturbance_jacobian_matches_fd() {
        let sys = VehicleReducedSystem::new(
            VehicleParams::default(),
            UncertaintySpec::default(),
            EnvelopeSpec::default(),
        );
        let x = [15.0, 0.4, -0.5, 0.12, 0.3];
        let theta = [1.0, -1.0];
        let e = [1.0, 1.0];
        let j = sys.disturbance_jacobian(&x, &theta, &e);
        for col in 0..5 {
            let eps = 1e-7;
            let mut xp = x;
            xp[col] += eps;
            let mut xm = x;
            xm[col] -= eps;
            let fp = sys.disturbance(&xp, &theta, &e);
            let fm = sys.disturbance(&xm, &theta, &e);
            for row in 0..5 {
                let fd = (fp[row] - fm[row]) / (2.0 * eps);
                assert!(
                    (j[(row, col)] - fd).abs() < 1e-6,
                    "J[{row},{col}] {} vs {}",
                    j[(row, col)],
                    fd
                );
            }
        }
    }

    #[test]
    fn envelope_rejects_slip_violations() {
        let env = EnvelopeSpec::default();
        let p = VehicleParams::default();
        let ok = ReducedState {
            v_x: 20.0,
            v_y: 0.5,
            psi_dot: 0.3,
            delta: 0.1,
            c_long: 0.0,
        };
        assert!(env.contains(&ok, &p));
        let bad = ReducedState {
            v_x: 8.0,
            v_y: 1.5,
            psi_dot: 1.0,
            delta: 0.1,
            c_long: 0.0,
        };
        assert!(!env.contains(&bad, &p));
    }
}
