//! Monomial basis for metric polynomials over a normalized box.

use serde::{Deserialize, Serialize};

/// Monomials of bounded total degree in a small number of variables,
/// evaluated in normalized coordinates z_i = (x_i - center_i) / halfwidth_i.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyBasis {
    /// Exponent multi-indices, one entry per monomial.
    pub exps: Vec<Vec<u8>>,
    pub center: Vec<f64>,
    pub halfwidth: Vec<f64>,
}

impl PolyBasis {
    /// All monomials in `nvars` variables up to `degree` total degree,
    /// graded-lexicographic order starting with the constant.
    pub fn total_degree(nvars: usize, degree: u8, center: Vec<f64>, halfwidth: Vec<f64>) -> Self {
        assert_eq!(center.len(), nvars);
        assert_eq!(halfwidth.len(), nvars);
        let mut exps: Vec<Vec<u8>> = vec![vec![0; nvars]];
        for d in 1..=degree {
            let mut stack = vec![(Vec::<u8>::new(), d)];
            while let Some((prefix, rem)) = stack.pop() {
                if prefix.len() + 1 == nvars {
                    let mut e = prefix.clone();
                    e.push(rem);
                    exps.push(e);
                } else if nvars == 0 {
                    break;
                } else {
                    // LIFO order yields monomials leading with the first
                    // variable: z0^d first within each total degree.
                    for k in 0..=rem {
                        let mut e = prefix.clone();
                        e.push(k);
                        stack.push((e, rem - k));
                    }
                }
            }
        }
        if nvars == 0 {
            exps = vec![vec![]];
        }
        Self {
            exps,
            center,
            halfwidth,
        }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn nvars(&self) -> usize {
        self.center.len()
    }

    pub fn normalize(&self, args: &[f64], z: &mut [f64]) {
        for i in 0..self.nvars() {
            z[i] = (args[i] - self.center[i]) / self.halfwidth[i];
        }
    }

    /// Evaluate every monomial at physical arguments `args`.
    pub fn eval(&self, args: &[f64], out: &mut [f64]) {
        let mut z = [0.0; 8];
        self.normalize(args, &mut z[..self.nvars()]);
        for (m, e) in self.exps.iter().enumerate() {
            let mut v = 1.0;
            for (i, &p) in e.iter().enumerate() {
                for _ in 0..p {
                    v *= z[i];
                }
            }
            out[m] = v;
        }
    }

    /// Evaluate monomials and their gradients w.r.t. the physical variables.
    /// `grad[j]` receives d phi_m / d x_j for every monomial m.
    pub fn eval_with_grad(&self, args: &[f64], out: &mut [f64], grad: &mut [Vec<f64>]) {
        let nv = self.nvars();
        let mut z = [0.0; 8];
        self.normalize(args, &mut z[..nv]);
        // Powers z_i^k for k up to the max degree.
        let mut pow = [[1.0; 8]; 8];
        for i in 0..nv {
            for k in 1..8 {
                pow[i][k] = pow[i][k - 1] * z[i];
            }
        }
        for (m, e) in self.exps.iter().enumerate() {
            let mut v = 1.0;
            for (i, &p) in e.iter().enumerate() {
                v *= pow[i][p as usize];
            }
            out[m] = v;
            for j in 0..nv {
                let p = e[j] as usize;
                if p == 0 {
                    grad[j][m] = 0.0;
                } else {
                    let mut g = p as f64 * pow[j][p - 1];
                    for (i, &q) in e.iter().enumerate() {
                        if i != j {
                            g *= pow[i][q as usize];
                        }
                    }
                    grad[j][m] = g / self.halfwidth[j];
                }
            }
        }
    }
}

/// Fit coefficients (monomial basis, degree 3) of f on [-a, a] by Chebyshev
/// interpolation; returns [b0, b1, b2, b3] with p(x) = b0 + b1 x + b2 x^2 + b3 x^3.
pub fn cheb3_fit(f: impl Fn(f64) -> f64, a: f64) -> [f64; 4] {
    const K: usize = 32;
    let mut c = [0.0; 4];
    for k in 0..4 {
        let mut acc = 0.0;
        for i in 0..K {
            let theta = std::f64::consts::PI * (i as f64 + 0.5) / K as f64;
            acc += f(a * theta.cos()) * (k as f64 * theta).cos();
        }
        c[k] = 2.0 * acc / K as f64;
    }
    c[0] *= 0.5;
    // T0 = 1, T1 = t, T2 = 2t^2 - 1, T3 = 4t^3 - 3t with t = x / a.
    let b0 = c[0] - c[2];
    let b1 = (c[1] - 3.0 * c[3]) / a;
    let b2 = 2.0 * c[2] / (a * a);
    let b3 = 4.0 * c[3] / (a * a * a);
    [b0, b1, b2, b3]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_count_deg4_3vars() {
        let b = PolyBasis::total_degree(3, 4, vec![0.0; 3], vec![1.0; 3]);
        // C(3 + 4, 4) = 35
        assert_eq!(b.len(), 35);
    }

    #[test]
    fn constant_basis() {
        let b = PolyBasis::total_degree(3, 0, vec![0.0; 3], vec![1.0; 3]);
        assert_eq!(b.len(), 1);
        let mut out = [0.0];
        b.eval(&[5.0, -3.0, 2.0], &mut out);
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = PolyBasis::total_degree(3, 4, vec![1.0, -2.0, 0.5], vec![2.0, 3.0, 1.5]);
        let x = [1.7, -3.1, 1.2];
        let mut val = vec![0.0; b.len()];
        let mut grad = vec![vec![0.0; b.len()]; 3];
        b.eval_with_grad(&x, &mut val, &mut grad);
        let eps = 1e-7;
        for j in 0..3 {
            let mut xp = x;
            xp[j] += eps;
            let mut xm = x;
            xm[j] -= eps;
            let mut vp = vec![0.0; b.len()];
            let mut vm = vec![0.0; b.len()];
            b.eval(&xp, &mut vp);
            b.eval(&xm, &mut vm);
            for m in 0..b.len() {
                let fd = (vp[m] - vm[m]) / (2.0 * eps);
                assert!(
                    (grad[j][m] - fd).abs() < 1e-6,
                    "grad[{j}][{m}] = {} vs fd {}",
                    grad[j][m],
                    fd
                );
            }
        }
    }

    #[test]
    fn cheb3_sin_cos_accuracy() {
        let s = cheb3_fit(f64::sin, 0.5);
        let c = cheb3_fit(f64::cos, 0.5);
        let mut max_err_s: f64 = 0.0;
        let mut max_err_c: f64 = 0.0;
        let mut x = -0.5;
        while x <= 0.5 {
            let ps = s[0] + s[1] * x + s[2] * x * x + s[3] * x * x * x;
            let pc = c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x;
            max_err_s = max_err_s.max((ps - x.sin()).abs());
            max_err_c = max_err_c.max((pc - x.cos()).abs());
            x += 1e-3;
        }
        assert!(max_err_s < 1e-3, "sin err {max_err_s}");
        assert!(max_err_c < 1e-3, "cos err {max_err_c}");
    }
}
