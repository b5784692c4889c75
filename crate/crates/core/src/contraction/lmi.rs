//! Contraction LMI residual in dual form.

use super::{MetricPolynomial, UncertainSystem};
use nalgebra::DMatrix;

/// Residual of the dual contraction condition
/// -W_dot + A W + W A^T + B Y + Y^T B^T + beta W <= 0
/// at one state/uncertainty realization. Feasibility means the maximum
/// eigenvalue of the returned symmetric matrix is nonpositive.
pub fn lmi_residual(
    sys: &dyn UncertainSystem,
    metric: &MetricPolynomial,
    beta: f64,
    x: &[f64],
    _u: &[f64],
    theta: &[f64],
    e: &[f64],
) -> DMatrix<f64> {
    let (w, grads) = metric.w_with_grads_at(x);
    let y = metric.y_at(x);
    let a = sys.a_matrix(x, theta, e);
    let b = sys.input_matrix(x);
    let drift = sys.drift(x);
    let dist = sys.disturbance(x, theta, e);

    // W depends only on states whose input-matrix rows vanish, so W_dot has
    // no input term.
    let mut w_dot = DMatrix::zeros(metric.nx, metric.nx);
    for (j, &arg) in metric.args.iter().enumerate() {
        let xd = drift[arg] + dist[arg];
        w_dot += &grads[j] * xd;
    }

    let aw = &a * &w;
    let by = &b * &y;
    let mut r = -w_dot + &aw + aw.transpose() + &by + by.transpose() + beta * &w;
    // Symmetrize against round-off.
    let rt = r.transpose();
    r += rt;
    r *= 0.5;
    r
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// Linear system with optional state-multiplicative parametric uncertainty:
/// x_dot = (A + sum_k theta_k DA_k) x + B u. Used by the synthesis tests and
/// as the simplest instantiation of [`UncertainSystem`].
pub struct UncertainLti {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub delta_a: Vec<DMatrix<f64>>,
    /// Vertices of each theta component: [-scale, scale].
    pub theta_scale: f64,
    /// Sampling box per state.
    pub state_box: Vec<[f64; 2]>,
    /// Metric argument indices (empty for a constant metric).
    pub args: Vec<usize>,
}

impl UncertainLti {
    pub fn stable(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self {
            a,
            b,
            delta_a: Vec::new(),
            theta_scale: 0.0,
            state_box: vec![[-1.0, 1.0]; n],
            args: Vec::new(),
        }
    }
}

impl UncertainSystem for UncertainLti {
    fn nx(&self) -> usize {
        self.a.nrows()
    }

    fn nu(&self) -> usize {
        self.b.ncols()
    }

    fn metric_args(&self) -> Vec<usize> {
        self.args.clone()
    }

    fn drift(&self, x: &[f64]) -> Vec<f64> {
        let xv = nalgebra::DVector::from_column_slice(x);
        (&self.a * xv).iter().copied().collect()
    }

    fn input_matrix(&self, _x: &[f64]) -> DMatrix<f64> {
        self.b.clone()
    }

    fn a_matrix(&self, _x: &[f64], theta: &[f64], _e: &[f64]) -> DMatrix<f64> {
        let mut a = self.a.clone();
        for (k, da) in self.delta_a.iter().enumerate() {
            a += da * theta[k];
        }
        a
    }

    fn disturbance(&self, x: &[f64], theta: &[f64], _e: &[f64]) -> Vec<f64> {
        let xv = nalgebra::DVector::from_column_slice(x);
        let mut d = nalgebra::DVector::zeros(self.nx());
        for (k, da) in self.delta_a.iter().enumerate() {
            d += da * &xv * theta[k];
        }
        d.iter().copied().collect()
    }

    fn theta_vertices(&self) -> Vec<Vec<f64>> {
        if self.delta_a.is_empty() {
            return vec![vec![]];
        }
        let k = self.delta_a.len();
        let mut out = Vec::with_capacity(1 << k);
        for mask in 0..(1_usize << k) {
            let v: Vec<f64> = (0..k)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        self.theta_scale
                    } else {
                        -self.theta_scale
                    }
                })
                .collect();
            out.push(v);
        }
        out
    }

    fn e_vertices(&self) -> Vec<Vec<f64>> {
        vec![vec![]]
    }

    fn sample_state(&self, unit: &[f64]) -> Option<Vec<f64>> {
        Some(
            self.state_box
                .iter()
                .zip(unit)
                .map(|(b, u)| b[0] + (b[1] - b[0]) * u)
                .collect(),
        )
    }
}
