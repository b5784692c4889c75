//! Sampled-LMI synthesis of the dual metric.
//!
//! For fixed beta the contraction condition is linear in the (W, Y)
//! coefficients, so feasibility over a finite sample set is a convex problem:
//! we minimize a squared-hinge penalty on the worst residual eigenvalue per
//! sample/vertex (plus metric eigenvalue bounds) with Adam until the penalty
//! reaches zero. Beta is maximized by bisection, and the winning certificate
//! must additionally pass a 10x denser held-out validation with zero
//! violations; violating samples are folded back into the training set for a
//! bounded number of rounds.

use super::lmi;
use super::poly::PolyBasis;
use super::{
    sym_index, sym_len, MetricPolynomial, SynthesisError, UncertainSystem, ValidationReport,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Total degree of the metric polynomial basis.
    pub degree: u8,
    /// Required minimum contraction rate; synthesis fails below it.
    pub beta_min: f64,
    pub beta_max: f64,
    /// Relative bisection tolerance on beta.
    pub beta_tol: f64,
    pub train_samples: usize,
    pub holdout_factor: usize,
    /// Residual slack required on training samples (validation uses 0).
    pub margin: f64,
    /// Metric eigenvalue bounds on the envelope.
    pub w_lo: f64,
    pub w_hi: f64,
    pub max_iters: usize,
    pub lr: f64,
    pub seed: u64,
    pub max_cutting_rounds: usize,
    /// Inflation on sampled maxima when deriving tube constants.
    pub safety_factor: f64,
    /// Sample count for the constants derivation.
    pub constants_samples: usize,
    /// Print optimizer progress.
    #[serde(default)]
    pub verbose: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            degree: 4,
            beta_min: 0.4,
            beta_max: 6.0,
            beta_tol: 0.05,
            train_samples: 1200,
            holdout_factor: 10,
            margin: 0.02,
            w_lo: 0.05,
            w_hi: 100.0,
            max_iters: 6000,
            lr: 0.05,
            seed: 1,
            max_cutting_rounds: 5,
            safety_factor: 1.1,
            constants_samples: 4000,
            verbose: false,
        }
    }
}

/// Deterministic low-discrepancy point stream.
pub struct Halton {
    index: u64,
}

const HALTON_BASES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

impl Halton {
    pub fn new() -> Self {
        // Skip the earliest points; they cluster on box edges.
        Self { index: 20 }
    }

    fn radical_inverse(mut i: u64, base: u64) -> f64 {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    }

    pub fn next_point(&mut self, dims: usize, out: &mut [f64]) {
        self.index += 1;
        for d in 0..dims {
            out[d] = Self::radical_inverse(self.index, HALTON_BASES[d]);
        }
    }
}

impl Default for Halton {
    fn default() -> Self {
        Self::new()
    }
}

struct VertexData {
    a: DMatrix<f64>,
    /// drift + disturbance at the metric-argument rows.
    xdot_args: Vec<f64>,
}

struct SamplePoint {
    x: Vec<f64>,
    phi: Vec<f64>,
    dphi: Vec<Vec<f64>>,
    b: DMatrix<f64>,
    vertices: Vec<VertexData>,
}

fn collect_states(
    sys: &dyn UncertainSystem,
    n: usize,
    halton: &mut Halton,
) -> Result<Vec<Vec<f64>>, SynthesisError> {
    let mut states = Vec::with_capacity(n);
    let mut unit = vec![0.0; sys.nx()];
    let mut attempts = 0usize;
    while states.len() < n {
        halton.next_point(sys.nx(), &mut unit);
        if let Some(x) = sys.sample_state(&unit) {
            states.push(x);
        }
        attempts += 1;
        if attempts > 200 * n + 1000 {
            return Err(SynthesisError::BadConfig(
                "envelope rejection rate too high while sampling".into(),
            ));
        }
    }
    Ok(states)
}

fn build_points(
    sys: &dyn UncertainSystem,
    basis: &PolyBasis,
    args: &[usize],
    states: &[Vec<f64>],
) -> Vec<SamplePoint> {
    let theta_v = sys.theta_vertices();
    let e_v = sys.e_vertices();
    let mm = basis.len();
    let na = args.len();
    states
        .iter()
        .map(|x| {
            let arg_vals: Vec<f64> = args.iter().map(|&i| x[i]).collect();
            let mut phi = vec![0.0; mm];
            let mut dphi = vec![vec![0.0; mm]; na];
            basis.eval_with_grad(&arg_vals, &mut phi, &mut dphi);
            let drift = sys.drift(x);
            let mut vertices = Vec::with_capacity(theta_v.len() * e_v.len());
            for th in &theta_v {
                for ev in &e_v {
                    let a = sys.a_matrix(x, th, ev);
                    let dist = sys.disturbance(x, th, ev);
                    let xdot_args = args.iter().map(|&i| drift[i] + dist[i]).collect();
                    vertices.push(VertexData { a, xdot_args });
                }
            }
            SamplePoint {
                x: x.clone(),
                phi,
                dphi,
                b: sys.input_matrix(x),
                vertices,
            }
        })
        .collect()
}

/// Extreme eigenpair of a small symmetric matrix. Fixed-size fast path for
/// the hot loop (the metric search calls this tens of millions of times).
struct ExtremeEigs {
    lam_min: f64,
    lam_max: f64,
    v_min: [f64; 8],
    v_max: [f64; 8],
}

fn sym_extreme_eigs(m: &DMatrix<f64>) -> ExtremeEigs {
    let n = m.nrows();
    macro_rules! fixed {
        ($dim:literal) => {{
            let fm: nalgebra::SMatrix<f64, $dim, $dim> =
                nalgebra::SMatrix::from_iterator(m.iter().copied());
            let eig = fm.symmetric_eigen();
            let (mut lo, mut hi) = (0usize, 0usize);
            for k in 0..$dim {
                if eig.eigenvalues[k] < eig.eigenvalues[lo] {
                    lo = k;
                }
                if eig.eigenvalues[k] > eig.eigenvalues[hi] {
                    hi = k;
                }
            }
            let mut out = ExtremeEigs {
                lam_min: eig.eigenvalues[lo],
                lam_max: eig.eigenvalues[hi],
                v_min: [0.0; 8],
                v_max: [0.0; 8],
            };
            for k in 0..$dim {
                out.v_min[k] = eig.eigenvectors[(k, lo)];
                out.v_max[k] = eig.eigenvectors[(k, hi)];
            }
            out
        }};
    }
    match n {
        1 => ExtremeEigs {
            lam_min: m[(0, 0)],
            lam_max: m[(0, 0)],
            v_min: {
                let mut v = [0.0; 8];
                v[0] = 1.0;
                v
            },
            v_max: {
                let mut v = [0.0; 8];
                v[0] = 1.0;
                v
            },
        },
        2 => fixed!(2),
        3 => fixed!(3),
        4 => fixed!(4),
        5 => fixed!(5),
        6 => fixed!(6),
        _ => {
            let eig = m.clone().symmetric_eigen();
            let (mut lo, mut hi) = (0usize, 0usize);
            for k in 0..n {
                if eig.eigenvalues[k] < eig.eigenvalues[lo] {
                    lo = k;
                }
                if eig.eigenvalues[k] > eig.eigenvalues[hi] {
                    hi = k;
                }
            }
            let mut out = ExtremeEigs {
                lam_min: eig.eigenvalues[lo],
                lam_max: eig.eigenvalues[hi],
                v_min: [0.0; 8],
                v_max: [0.0; 8],
            };
            for k in 0..n.min(8) {
                out.v_min[k] = eig.eigenvectors[(k, lo)];
                out.v_max[k] = eig.eigenvectors[(k, hi)];
            }
            out
        }
    }
}

/// Flat parameter vector layout: all packed-W coefficients, then all Y.
struct Layout {
    nx: usize,
    nu: usize,
    m: usize,
    sym: usize,
    ny: usize,
}

impl Layout {
    fn new(nx: usize, nu: usize, m: usize) -> Self {
        Self {
            nx,
            nu,
            m,
            sym: sym_len(nx),
            ny: nu * nx,
        }
    }

    fn len(&self) -> usize {
        self.m * (self.sym + self.ny)
    }

    fn w(&self, m: usize, k: usize) -> usize {
        m * self.sym + k
    }

    fn y(&self, m: usize, i: usize, j: usize) -> usize {
        self.m * self.sym + m * self.ny + i * self.nx + j
    }
}

struct EvalResult {
    penalty: f64,
    /// Largest residual eigenvalue over all samples/vertices.
    worst_eig: f64,
    worst_idx: usize,
}

#[allow(clippy::too_many_arguments)]
fn penalty_and_grad(
    points: &[SamplePoint],
    layout: &Layout,
    beta: f64,
    margin: f64,
    w_lo: f64,
    w_hi: f64,
    params: &[f64],
    grad: Option<&mut [f64]>,
) -> EvalResult {
    let nx = layout.nx;
    let nu = layout.nu;
    let mm = layout.m;
    let mut pen = 0.0;
    let mut worst_eig = f64::NEG_INFINITY;
    let mut worst_idx = 0;
    let mut g = grad;

    let mut w = DMatrix::zeros(nx, nx);
    let mut y = DMatrix::zeros(nu, nx);
    let mut r = DMatrix::zeros(nx, nx);

    for (pi, pt) in points.iter().enumerate() {
        let na = pt.dphi.len();
        // Assemble W and Y.
        w.fill(0.0);
        y.fill(0.0);
        let mut wgrads: Vec<DMatrix<f64>> = vec![DMatrix::zeros(nx, nx); na];
        for m in 0..mm {
            let f = pt.phi[m];
            for p in 0..nx {
                for q in p..nx {
                    let c = params[layout.w(m, sym_index(nx, p, q))];
                    if c == 0.0 {
                        continue;
                    }
                    w[(p, q)] += c * f;
                    if p != q {
                        w[(q, p)] += c * f;
                    }
                    for j in 0..na {
                        let d = c * pt.dphi[j][m];
                        wgrads[j][(p, q)] += d;
                        if p != q {
                            wgrads[j][(q, p)] += d;
                        }
                    }
                }
            }
            for i in 0..nu {
                for jc in 0..nx {
                    y[(i, jc)] += params[layout.y(m, i, jc)] * f;
                }
            }
        }

        // Metric eigenvalue bounds.
        let eig_w = sym_extreme_eigs(&w);
        for (viol, v, sign) in [
            (w_lo - eig_w.lam_min, &eig_w.v_min, -1.0),
            (eig_w.lam_max - w_hi, &eig_w.v_max, 1.0),
        ] {
            if viol > 0.0 {
                pen += viol;
                if let Some(gr) = g.as_deref_mut() {
                    let f0 = sign;
                    for m in 0..mm {
                        let c = f0 * pt.phi[m];
                        if c == 0.0 {
                            continue;
                        }
                        for p in 0..nx {
                            for q in p..nx {
                                let s = if p == q {
                                    v[p] * v[p]
                                } else {
                                    2.0 * v[p] * v[q]
                                };
                                gr[layout.w(m, sym_index(nx, p, q))] += c * s;
                            }
                        }
                    }
                }
            }
        }

        // Residual per uncertainty vertex.
        let by = &pt.b * &y;
        for vtx in &pt.vertices {
            r.fill(0.0);
            for j in 0..na {
                let c = -vtx.xdot_args[j];
                for (dst, src) in r.iter_mut().zip(wgrads[j].iter()) {
                    *dst += c * *src;
                }
            }
            let aw = &vtx.a * &w;
            r += &aw;
            r += aw.transpose();
            r += &by;
            r += by.transpose();
            for (dst, src) in r.iter_mut().zip(w.iter()) {
                *dst += beta * *src;
            }

            let eig = sym_extreme_eigs(&r);
            let lmax = eig.lam_max;
            if lmax > worst_eig {
                worst_eig = lmax;
                worst_idx = pi;
            }
            let viol = lmax + margin;
            if viol > 0.0 {
                pen += viol;
                if let Some(gr) = g.as_deref_mut() {
                    let v = DVector::from_column_slice(&eig.v_max[..nx]);
                    let u = vtx.a.transpose() * &v;
                    let bv = pt.b.transpose() * &v;
                    let f0 = 1.0;
                    for m in 0..mm {
                        let phi = pt.phi[m];
                        let mut psi = 0.0;
                        for j in 0..na {
                            psi += pt.dphi[j][m] * vtx.xdot_args[j];
                        }
                        for p in 0..nx {
                            for q in p..nx {
                                let (svv, auv) = if p == q {
                                    (v[p] * v[p], 2.0 * u[p] * v[p])
                                } else {
                                    (2.0 * v[p] * v[q], 2.0 * (u[p] * v[q] + u[q] * v[p]))
                                };
                                let dl = phi * (auv + beta * svv) - psi * svv;
                                gr[layout.w(m, sym_index(nx, p, q))] += f0 * dl;
                            }
                        }
                        if phi != 0.0 {
                            for i in 0..nu {
                                let c = f0 * 2.0 * phi * bv[i];
                                if c == 0.0 {
                                    continue;
                                }
                                for jc in 0..nx {
                                    gr[layout.y(m, i, jc)] += c * v[jc];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    EvalResult {
        penalty: pen,
        worst_eig,
        worst_idx,
    }
}

struct RunOutcome {
    feasible: bool,
    worst_eig: f64,
    worst_idx: usize,
}

/// Adam descent on the penalty at fixed beta; params is updated in place to
/// the best point seen.
fn feasibility_run(
    points: &[SamplePoint],
    layout: &Layout,
    beta: f64,
    cfg: &SynthesisConfig,
    params: &mut Vec<f64>,
) -> RunOutcome {
    let n = layout.len();
    let mut grad = vec![0.0; n];
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut best = params.clone();
    let mut best_pen = f64::INFINITY;
    let mut best_iter = 0usize;
    let mut out = RunOutcome {
        feasible: false,
        worst_eig: f64::INFINITY,
        worst_idx: 0,
    };
    const STALL: usize = 800;

    for t in 1..=cfg.max_iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let res = penalty_and_grad(
            points,
            layout,
            beta,
            cfg.margin,
            cfg.w_lo,
            cfg.w_hi,
            params,
            Some(&mut grad),
        );
        if res.penalty < best_pen {
            best_pen = res.penalty;
            best.copy_from_slice(params);
            best_iter = t;
            out.worst_eig = res.worst_eig;
            out.worst_idx = res.worst_idx;
        }
        if res.penalty == 0.0 {
            if cfg.verbose {
                println!(
                    "  beta {beta:.3}: feasible after {t} iterations (worst eig {:.3e})",
                    res.worst_eig
                );
            }
            return RunOutcome {
                feasible: true,
                worst_eig: res.worst_eig,
                worst_idx: res.worst_idx,
            };
        }
        if cfg.verbose && t % 500 == 0 {
            println!(
                "  beta {beta:.3}: iter {t}, penalty {:.3e}, worst eig {:.3e}",
                res.penalty, res.worst_eig
            );
        }
        if t - best_iter > STALL {
            break;
        }
        let lr = cfg.lr / (1.0 + t as f64 / 4000.0);
        let b1: f64 = 0.9;
        let b2: f64 = 0.999;
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        for i in 0..n {
            m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
            m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] -= lr * (m1[i] / bc1) / ((m2[i] / bc2).sqrt() + 1e-9);
        }
    }
    params.copy_from_slice(&best);
    out
}

fn init_params(layout: &Layout, w_init: f64) -> Vec<f64> {
    let mut p = vec![0.0; layout.len()];
    for d in 0..layout.nx {
        p[layout.w(0, sym_index(layout.nx, d, d))] = w_init;
    }
    p
}

fn params_to_metric(
    layout: &Layout,
    basis: &PolyBasis,
    args: &[usize],
    params: &[f64],
) -> MetricPolynomial {
    let mut metric = MetricPolynomial::zeros(basis.clone(), args.to_vec(), layout.nx, layout.nu);
    for m in 0..layout.m {
        for k in 0..layout.sym {
            metric.w_coeffs[m][k] = params[layout.w(m, k)];
        }
        for i in 0..layout.nu {
            for j in 0..layout.nx {
                metric.y_coeffs[m][i * layout.nx + j] = params[layout.y(m, i, j)];
            }
        }
    }
    metric
}

pub struct SynthesisOutcome {
    pub metric: MetricPolynomial,
    pub beta: f64,
    pub report: ValidationReport,
}

/// Validate a metric on fresh samples: residual eigenvalues at every vertex
/// pair must be <= 0 and the metric bounds must hold.
pub fn validate_metric(
    sys: &dyn UncertainSystem,
    metric: &MetricPolynomial,
    beta: f64,
    w_lo: f64,
    w_hi: f64,
    states: &[Vec<f64>],
) -> (usize, f64, f64, f64, Vec<usize>) {
    let theta_v = sys.theta_vertices();
    let e_v = sys.e_vertices();
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    let mut min_w = f64::INFINITY;
    let mut max_w = f64::NEG_INFINITY;
    let mut violating_states = Vec::new();
    for (i, x) in states.iter().enumerate() {
        let w = metric.w_at(x);
        let eig_w = w.symmetric_eigen();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &l in eig_w.eigenvalues.iter() {
            lo = lo.min(l);
            hi = hi.max(l);
        }
        min_w = min_w.min(lo);
        max_w = max_w.max(hi);
        let mut bad = lo < w_lo || hi > w_hi;
        for th in &theta_v {
            for ev in &e_v {
                let r = lmi::lmi_residual(sys, metric, beta, x, &[], th, ev);
                let l = lmi::max_eig(&r);
                worst = worst.max(l);
                if l > 0.0 {
                    bad = true;
                }
            }
        }
        if bad {
            violations += 1;
            violating_states.push(i);
        }
    }
    (violations, worst, min_w, max_w, violating_states)
}

/// Search for a certified metric, maximizing beta by bisection over sampled
/// feasibility runs, then validating on a held-out set.
pub fn synthesize(
    sys: &dyn UncertainSystem,
    cfg: &SynthesisConfig,
) -> Result<SynthesisOutcome, SynthesisError> {
    if cfg.beta_min <= 0.0 || cfg.beta_max <= cfg.beta_min {
        return Err(SynthesisError::BadConfig(
            "need 0 < beta_min < beta_max".into(),
        ));
    }
    let args = sys.metric_args();
    let mut halton = Halton::new();
    let states = collect_states(sys, cfg.train_samples, &mut halton)?;

    // Basis normalization from the sampled envelope.
    let (center, halfwidth) = if args.is_empty() {
        (vec![], vec![])
    } else {
        let mut c = vec![0.0; args.len()];
        let mut h = vec![0.0; args.len()];
        for (j, &a) in args.iter().enumerate() {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for x in &states {
                lo = lo.min(x[a]);
                hi = hi.max(x[a]);
            }
            c[j] = 0.5 * (lo + hi);
            h[j] = (0.5 * (hi - lo)).max(1e-6);
        }
        (c, h)
    };
    let basis = PolyBasis::total_degree(args.len(), cfg.degree, center, halfwidth);
    let layout = Layout::new(sys.nx(), sys.nu(), basis.len());

    // The W_dot expression assumes the metric arguments are drift-only rows.
    for x in states.iter().take(1) {
        let b = sys.input_matrix(x);
        for &a in &args {
            for j in 0..sys.nu() {
                if b[(a, j)].abs() > 1e-12 {
                    return Err(SynthesisError::BadConfig(format!(
                        "metric argument state {a} has a nonzero input-matrix row"
                    )));
                }
            }
        }
    }

    let mut points = build_points(sys, &basis, &args, &states);
    let w_init = (cfg.w_lo * cfg.w_hi).sqrt().min(1.0).max(cfg.w_lo * 2.0);
    let mut params = init_params(&layout, w_init);

    // Feasibility at the required minimum rate.
    let first = feasibility_run(&points, &layout, cfg.beta_min, cfg, &mut params);
    if !first.feasible {
        return Err(SynthesisError::Infeasible {
            beta: cfg.beta_min,
            worst_eig: first.worst_eig,
            worst_sample: points[first.worst_idx].x.clone(),
        });
    }
    let mut beta_lo = cfg.beta_min;
    let mut beta_hi = cfg.beta_max;
    let mut best_params = params.clone();

    // Try the top first: if beta_max is feasible there is nothing to bisect.
    let mut probe = best_params.clone();
    let top = feasibility_run(&points, &layout, beta_hi, cfg, &mut probe);
    if top.feasible {
        beta_lo = beta_hi;
        best_params = probe;
    } else {
        while beta_hi - beta_lo > cfg.beta_tol * beta_lo {
            let mid = 0.5 * (beta_lo + beta_hi);
            let mut trial = best_params.clone();
            let run = feasibility_run(&points, &layout, mid, cfg, &mut trial);
            if run.feasible {
                beta_lo = mid;
                best_params = trial;
            } else {
                beta_hi = mid;
            }
        }
    }
    let mut beta = beta_lo;

    // Held-out validation with cutting rounds. Persistent holdout violations
    // (the sampled feasibility refusing to generalize) back the rate off;
    // shipping an invalid certificate is never an option.
    let holdout_n = cfg.train_samples * cfg.holdout_factor;
    let holdout = collect_states(sys, holdout_n, &mut halton)?;
    let mut metric = params_to_metric(&layout, &basis, &args, &best_params);
    let mut rounds_at_beta = 0usize;
    let mut last_violations = usize::MAX;
    loop {
        let (violations, worst, min_w, max_w, violating) =
            validate_metric(sys, &metric, beta, cfg.w_lo, cfg.w_hi, &holdout);
        if violations == 0 {
            let report = ValidationReport {
                training_samples: points.len(),
                holdout_samples: holdout.len(),
                vertex_pairs: sys.theta_vertices().len() * sys.e_vertices().len(),
                violations: 0,
                worst_eig: worst,
                min_w_eig: min_w,
                max_w_eig: max_w,
            };
            if cfg.verbose {
                println!(
                    "  validated beta {beta:.3} on {} holdout samples (worst eig {worst:.3e})",
                    holdout.len()
                );
            }
            return Ok(SynthesisOutcome {
                metric,
                beta,
                report,
            });
        }
        if cfg.verbose {
            println!(
                "  holdout at beta {beta:.3}: {violations} violating samples (worst eig {worst:.3e})"
            );
        }
        let stuck = rounds_at_beta >= cfg.max_cutting_rounds || violations >= last_violations;
        last_violations = violations;
        if stuck {
            beta *= 0.9;
            rounds_at_beta = 0;
            last_violations = usize::MAX;
            if beta < cfg.beta_min {
                let worst_state = violating
                    .first()
                    .map(|&i| holdout[i].clone())
                    .unwrap_or_default();
                return Err(SynthesisError::Infeasible {
                    beta,
                    worst_eig: worst,
                    worst_sample: worst_state,
                });
            }
        } else {
            rounds_at_beta += 1;
        }
        // Fold the worst violators into the training set and refit.
        let add: Vec<Vec<f64>> = violating
            .iter()
            .take(64)
            .map(|&i| holdout[i].clone())
            .collect();
        points.extend(build_points(sys, &basis, &args, &add));
        let run = feasibility_run(&points, &layout, beta, cfg, &mut best_params);
        if !run.feasible {
            beta *= 0.9;
            rounds_at_beta = 0;
            last_violations = usize::MAX;
            if beta < cfg.beta_min {
                return Err(SynthesisError::Infeasible {
                    beta,
                    worst_eig: run.worst_eig,
                    worst_sample: points[run.worst_idx].x.clone(),
                });
            }
            let run2 = feasibility_run(&points, &layout, beta, cfg, &mut best_params);
            if !run2.feasible {
                return Err(SynthesisError::Infeasible {
                    beta,
                    worst_eig: run2.worst_eig,
                    worst_sample: points[run2.worst_idx].x.clone(),
                });
            }
        }
        metric = params_to_metric(&layout, &basis, &args, &best_params);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contraction::lmi::UncertainLti;

    fn quick_cfg() -> SynthesisConfig {
        SynthesisConfig {
            degree: 0,
            beta_min: 0.1,
            beta_max: 4.0,
            beta_tol: 0.02,
            train_samples: 60,
            holdout_factor: 5,
            margin: 1e-3,
            w_lo: 0.05,
            w_hi: 50.0,
            max_iters: 3000,
            lr: 0.05,
            ..Default::default()
        }
    }

    #[test]
    fn halton_points_in_unit_cube() {
        let mut h = Halton::new();
        let mut p = [0.0; 5];
        for _ in 0..100 {
            h.next_point(5, &mut p);
            for &v in &p {
                assert!((0.0..1.0).contains(&v));
            }
        }
    }

    /// x_dot = -x with no input: the best rate certified by any metric is
    /// exactly 2 (Lyapunov oracle), and synthesis must land within 10 %.
    #[test]
    fn scalar_system_matches_lyapunov_bound() {
        let sys = UncertainLti::stable(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DMatrix::zeros(1, 1),
        );
        let out = synthesize(&sys, &quick_cfg()).expect("feasible");
        assert!(
            (out.beta - 2.0).abs() / 2.0 < 0.1,
            "beta = {} vs oracle 2.0",
            out.beta
        );
    }

    /// Rotation + uniform decay: eigenvalues -1 +- 4i, so the contraction
    /// rate cap is again -2 Re(lambda) = 2, now requiring a shaped metric.
    #[test]
    fn rotating_system_matches_eigen_bound() {
        let sys = UncertainLti::stable(
            DMatrix::from_row_slice(2, 2, &[-1.0, 4.0, -4.0, -1.0]),
            DMatrix::zeros(2, 1),
        );
        let out = synthesize(&sys, &quick_cfg()).expect("feasible");
        assert!(
            (out.beta - 2.0).abs() / 2.0 < 0.1,
            "beta = {} vs oracle 2.0",
            out.beta
        );
    }

    /// Stabilizable pair: synthesis must reach at least the rate certified by
    /// the LQR closed loop (Lyapunov equation oracle, computed here by hand
    /// for Q = I, R = 1).
    #[test]
    fn stabilizable_pair_beats_lqr_bound() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        // LQR via care iteration (Kleinman): P_{k+1} from Lyapunov solves.
        let q = DMatrix::<f64>::identity(2, 2);
        let mut k = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let mut p_cl = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..200 {
            let acl = &a - &b * &k;
            // Solve acl^T P + P acl = -(Q + K^T K) by vectorization.
            let qk = &q + k.transpose() * &k;
            let mut big = DMatrix::<f64>::zeros(4, 4);
            let mut rhs = DVector::<f64>::zeros(4);
            for i in 0..2 {
                for j in 0..2 {
                    let row = i * 2 + j;
                    rhs[row] = -qk[(i, j)];
                    for l in 0..2 {
                        big[(row, l * 2 + j)] += acl[(l, i)];
                        big[(row, i * 2 + l)] += acl[(l, j)];
                    }
                }
            }
            let sol = big.lu().solve(&rhs).unwrap();
            p_cl = DMatrix::from_fn(2, 2, |i, j| sol[i * 2 + j]);
            k = b.transpose() * &p_cl;
        }
        // Contraction rate certified by V = x^T P x on the closed loop:
        // min eig of (Q + K^T K) weighted by P: rate = lambda_min(P^-1 (Q+KK)).
        let qk = &q + k.transpose() * &k;
        let rate = (p_cl.clone().try_inverse().unwrap() * qk)
            .complex_eigenvalues()
            .iter()
            .map(|c| c.re)
            .fold(f64::INFINITY, f64::min);

        let sys = UncertainLti::stable(a, b);
        let mut cfg = quick_cfg();
        cfg.beta_max = 8.0;
        let out = synthesize(&sys, &cfg).expect("feasible");
        assert!(
            out.beta >= 0.9 * rate,
            "synthesized beta {} below 0.9x LQR-certified rate {}",
            out.beta,
            rate
        );
    }

    /// Enlarging the uncertainty box never increases the achievable rate.
    #[test]
    fn beta_monotone_in_uncertainty() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.5, -1.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let da = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mut betas = Vec::new();
        for scale in [0.0, 0.25, 0.5] {
            let sys = UncertainLti {
                a: a.clone(),
                b: b.clone(),
                delta_a: vec![da.clone()],
                theta_scale: scale,
                state_box: vec![[-1.0, 1.0]; 2],
                args: vec![],
            };
            let out = synthesize(&sys, &quick_cfg()).expect("feasible");
            betas.push(out.beta);
        }
        let tol = quick_cfg().beta_tol * betas[0] + 1e-6;
        assert!(betas[1] <= betas[0] + tol, "betas = {betas:?}");
        assert!(betas[2] <= betas[1] + tol, "betas = {betas:?}");
    }
}
