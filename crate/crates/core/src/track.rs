//! Reference raceline in arclength parameterization.
//!
//! A [`TrackPath`] stores samples of the reference line (position, heading,
//! curvature, speed profile, lateral bounds) over arclength `s`. Curvature is
//! interpolated with a shape-preserving monotone cubic so that it enters the
//! vehicle dynamics C1-continuously; positions are cubic Hermite with the
//! heading as tangent.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug)]
pub enum TrackError {
    NonMonotonicArclength { index: usize },
    CurvatureBoundConflict { index: usize },
    NonPositiveSpeed { index: usize },
    OutOfDomain { s: f64, length: f64 },
    ProjectionFailed { reason: String },
    ClosureGap { gap: f64 },
    BadSegment { reason: String },
    BadTrack { reason: String },
    Io(std::io::Error),
    Csv(csv::Error),
}

impl fmt::Display for TrackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonMonotonicArclength { index } => {
                write!(f, "arclength not strictly increasing at sample {index}")
            }
            Self::CurvatureBoundConflict { index } => write!(
                f,
                "|kappa| * max(|d_min|,|d_max|) >= 1 at sample {index}: curvilinear map degenerates"
            ),
            Self::NonPositiveSpeed { index } => {
                write!(f, "v_ref <= 0 at sample {index}")
            }
            Self::OutOfDomain { s, length } => {
                write!(f, "s = {s} outside open track domain [0, {length}]")
            }
            Self::ProjectionFailed { reason } => write!(f, "projection failed: {reason}"),
            Self::ClosureGap { gap } => {
                write!(f, "closed-track spec does not close (gap {gap:.6} m)")
            }
            Self::BadSegment { reason } => write!(f, "bad segment spec: {reason}"),
            Self::BadTrack { reason } => write!(f, "bad track: {reason}"),
            Self::Io(e) => write!(f, "track io: {e}"),
            Self::Csv(e) => write!(f, "track csv: {e}"),
        }
    }
}

impl std::error::Error for TrackError {}

impl From<std::io::Error> for TrackError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<csv::Error> for TrackError {
    fn from(e: csv::Error) -> Self {
        Self::Csv(e)
    }
}

/// One raceline sample. CSV column order matches the field order.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrackSample {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub kappa: f64,
    pub v_ref: f64,
    pub d_min: f64,
    pub d_max: f64,
}

/// Vehicle pose relative to the path: arclength, signed lateral offset
/// (left positive) and relative heading wrapped to (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvilinearPose {
    pub s: f64,
    pub d: f64,
    pub delta_psi: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectOptions {
    /// Local search window around the hint, meters of arclength.
    pub window: f64,
    /// Maximum lateral distance considered on-track.
    pub corridor: f64,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        // One horizon at top speed covers ~170 m; per-cycle motion is far
        // below 20 m, and the corridor comfortably exceeds any track width.
        Self {
            window: 20.0,
            corridor: 25.0,
        }
    }
}

/// Arclength-parameterized reference path. Immutable after construction.
#[derive(Debug, Clone)]
pub struct TrackPath {
    samples: Vec<TrackSample>,
    closed: bool,
    /// Unwrapped heading per sample (continuous, not reduced mod 2pi).
    heading_unwrapped: Vec<f64>,
    /// Monotone-cubic slope of kappa at each sample.
    kappa_slope: Vec<f64>,
}

impl TrackPath {
    pub fn from_samples(samples: Vec<TrackSample>, closed: bool) -> Result<Self, TrackError> {
        if samples.len() < 2 {
            return Err(TrackError::BadTrack {
                reason: "need at least two samples".into(),
            });
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].s <= w[0].s {
                return Err(TrackError::NonMonotonicArclength { index: i + 1 });
            }
        }
        for (i, sm) in samples.iter().enumerate() {
            let reach = sm.d_min.abs().max(sm.d_max.abs());
            if sm.kappa.abs() * reach >= 1.0 {
                return Err(TrackError::CurvatureBoundConflict { index: i });
            }
            if sm.v_ref <= 0.0 {
                return Err(TrackError::NonPositiveSpeed { index: i });
            }
        }
        if closed {
            let first = samples[0];
            let last = *samples.last().unwrap();
            let gap = ((last.x - first.x).powi(2) + (last.y - first.y).powi(2)).sqrt();
            let heading_gap = wrap_angle(last.heading - first.heading).abs();
            let kappa_gap = (last.kappa - first.kappa).abs();
            if gap > 1e-3 || heading_gap > 1e-3 || kappa_gap > 1e-6 {
                return Err(TrackError::ClosureGap {
                    gap: gap.max(heading_gap),
                });
            }
        }

        let heading_unwrapped = unwrap_headings(&samples);
        let kappa_slope = monotone_cubic_slopes(&samples, closed);
        Ok(Self {
            samples,
            closed,
            heading_unwrapped,
            kappa_slope,
        })
    }

    pub fn samples(&self) -> &[TrackSample] {
        &self.samples
    }

    pub fn closed(&self) -> bool {
        self.closed
    }

    pub fn start_s(&self) -> f64 {
        self.samples[0].s
    }

    pub fn end_s(&self) -> f64 {
        self.samples.last().unwrap().s
    }

    pub fn length(&self) -> f64 {
        self.end_s() - self.start_s()
    }

    /// Map s into the track domain. Closed tracks wrap; open tracks reject
    /// queries outside [start, end].
    fn domain_s(&self, s: f64) -> Result<f64, TrackError> {
        if !s.is_finite() {
            return Err(TrackError::OutOfDomain {
                s,
                length: self.length(),
            });
        }
        if self.closed {
            Ok(self.start_s() + (s - self.start_s()).rem_euclid(self.length()))
        } else if s < self.start_s() - 1e-9 || s > self.end_s() + 1e-9 {
            Err(TrackError::OutOfDomain {
                s,
                length: self.length(),
            })
        } else {
            Ok(s.clamp(self.start_s(), self.end_s()))
        }
    }

    /// Index of the interval [s_i, s_{i+1}] containing s (s already in domain).
    fn interval(&self, s: f64) -> usize {
        let idx = self
            .samples
            .partition_point(|sm| sm.s <= s)
            .saturating_sub(1);
        idx.min(self.samples.len() - 2)
    }

    /// C1 monotone-cubic interpolation of the sampled curvature.
    pub fn curvature_at(&self, s: f64) -> Result<f64, TrackError> {
        Ok(self.curvature_and_deriv_at(s)?.0)
    }

    /// Curvature and its arclength derivative d kappa / d s.
    pub fn curvature_and_deriv_at(&self, s: f64) -> Result<(f64, f64), TrackError> {
        let s = self.domain_s(s)?;
        let i = self.interval(s);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let h = b.s - a.s;
        let t = (s - a.s) / h;
        let (m0, m1) = (self.kappa_slope[i] * h, self.kappa_slope[i + 1] * h);
        let value = hermite(a.kappa, b.kappa, m0, m1, t);
        let deriv = hermite_deriv(a.kappa, b.kappa, m0, m1, t) / h;
        Ok((value, deriv))
    }

    pub fn v_ref_at(&self, s: f64) -> Result<f64, TrackError> {
        let s = self.domain_s(s)?;
        let i = self.interval(s);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let t = (s - a.s) / (b.s - a.s);
        Ok(a.v_ref + t * (b.v_ref - a.v_ref))
    }

    /// (d_min, d_max) at s, linearly interpolated.
    pub fn d_bounds_at(&self, s: f64) -> Result<(f64, f64), TrackError> {
        let s = self.domain_s(s)?;
        let i = self.interval(s);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let t = (s - a.s) / (b.s - a.s);
        Ok((
            a.d_min + t * (b.d_min - a.d_min),
            a.d_max + t * (b.d_max - a.d_max),
        ))
    }

    /// Reference point (x, y, heading) at arclength s. Positions are cubic
    /// Hermite with tangents from the heading; heading is Hermite with the
    /// curvature as derivative.
    pub fn global_pose_at(&self, s: f64) -> Result<(f64, f64, f64), TrackError> {
        let s = self.domain_s(s)?;
        let i = self.interval(s);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let h = b.s - a.s;
        let t = (s - a.s) / h;
        let (ha, hb) = (self.heading_unwrapped[i], self.heading_unwrapped[i + 1]);
        let x = hermite(a.x, b.x, h * ha.cos(), h * hb.cos(), t);
        let y = hermite(a.y, b.y, h * ha.sin(), h * hb.sin(), t);
        let heading = hermite(ha, hb, h * a.kappa, h * b.kappa, t);
        Ok((x, y, wrap_angle(heading)))
    }

    /// Inverse of the projection: global pose of a curvilinear pose.
    pub fn curvilinear_to_global(
        &self,
        pose: &CurvilinearPose,
    ) -> Result<(f64, f64, f64), TrackError> {
        let (x, y, heading) = self.global_pose_at(pose.s)?;
        let (nx, ny) = (-heading.sin(), heading.cos());
        Ok((
            x + pose.d * nx,
            y + pose.d * ny,
            wrap_angle(heading + pose.delta_psi),
        ))
    }

    /// Project a global pose onto the path: locally nearest arclength (seeded
    /// at `s_hint`, or a global search on cold start), signed lateral offset,
    /// wrapped relative heading.
    pub fn project(
        &self,
        x: f64,
        y: f64,
        heading: f64,
        s_hint: Option<f64>,
        opts: &ProjectOptions,
    ) -> Result<CurvilinearPose, TrackError> {
        let dist2 = |s: f64| -> f64 {
            let (px, py, _) = self.global_pose_at(s).expect("s kept in domain");
            (x - px).powi(2) + (y - py).powi(2)
        };

        // Coarse pass over candidate knots.
        let (lo, hi) = match s_hint {
            Some(hint) => {
                let hint = self.domain_s(hint).unwrap_or_else(|_| self.start_s());
                if self.closed {
                    (hint - opts.window, hint + opts.window)
                } else {
                    (
                        (hint - opts.window).max(self.start_s()),
                        (hint + opts.window).min(self.end_s()),
                    )
                }
            }
            None => (self.start_s(), self.end_s()),
        };
        let n_coarse = ((hi - lo) / 0.5).ceil().max(8.0) as usize;
        let mut best_s = lo;
        let mut best_d2 = f64::INFINITY;
        for k in 0..=n_coarse {
            let s = self.domain_s(lo + (hi - lo) * k as f64 / n_coarse as f64)?;
            let d2 = dist2(s);
            if d2 < best_d2 {
                best_d2 = d2;
                best_s = s;
            }
        }

        // Windowed search that bottoms out at the boundary without an interior
        // minimum means the vehicle is ahead of / behind the window.
        if s_hint.is_some() && !self.closed {
            let at_edge = (best_s - lo).abs() < 1e-9 && lo > self.start_s() + 1e-9
                || (best_s - hi).abs() < 1e-9 && hi < self.end_s() - 1e-9;
            if at_edge {
                return Err(TrackError::ProjectionFailed {
                    reason: format!("no local minimum inside window [{lo:.1}, {hi:.1}]"),
                });
            }
        }

        // Refine on the orthogonality residual g(s) = (q - p(s)) . t(s), the
        // same geometry the inverse map uses, so project o inverse = identity
        // up to root-finding tolerance. g decreases through the foot point
        // (g' ~ -(1 - d kappa) < 0), so a sign change brackets it.
        let ortho = |s: f64| -> f64 {
            let (px, py, ph) = self.global_pose_at(s).expect("s kept in domain");
            (x - px) * ph.cos() + (y - py) * ph.sin()
        };
        let step = (hi - lo) / n_coarse as f64;
        let (mut a, mut b) = (best_s - step, best_s + step);
        if !self.closed {
            a = a.max(self.start_s());
            b = b.min(self.end_s());
        }
        let (mut ga, mut gb) = (ortho(self.domain_s(a)?), ortho(self.domain_s(b)?));
        let s_star = if ga >= 0.0 && gb <= 0.0 {
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                let gm = ortho(self.domain_s(mid)?);
                if gm >= 0.0 {
                    a = mid;
                    ga = gm;
                } else {
                    b = mid;
                    gb = gm;
                }
            }
            let denom = ga - gb;
            if denom.abs() > 1e-300 {
                a + (b - a) * ga / denom
            } else {
                0.5 * (a + b)
            }
        } else {
            // No bracket (endpoint of an open track): fall back to the better end.
            if ga.abs() < gb.abs() {
                a
            } else {
                b
            }
        };
        let s_star = self.domain_s(s_star)?;
        let (px, py, ph) = self.global_pose_at(s_star)?;
        let (nx, ny) = (-ph.sin(), ph.cos());
        let d = (x - px) * nx + (y - py) * ny;
        if d.abs() > opts.corridor {
            return Err(TrackError::ProjectionFailed {
                reason: format!("lateral distance {:.2} m exceeds corridor", d.abs()),
            });
        }
        Ok(CurvilinearPose {
            s: s_star,
            d,
            delta_psi: wrap_angle(heading - ph),
        })
    }

    pub fn to_csv(&self, path: &Path) -> Result<(), TrackError> {
        let mut w = csv::Writer::from_path(path)?;
        for sm in &self.samples {
            w.serialize(sm)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv(path: &Path, closed: bool) -> Result<Self, TrackError> {
        let mut r = csv::Reader::from_path(path)?;
        let mut samples = Vec::new();
        for rec in r.deserialize() {
            samples.push(rec?);
        }
        Self::from_samples(samples, closed)
    }
}

fn hermite(p0: f64, p1: f64, m0: f64, m1: f64, t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * p0
        + (t3 - 2.0 * t2 + t) * m0
        + (-2.0 * t3 + 3.0 * t2) * p1
        + (t3 - t2) * m1
}

/// d/dt of [`hermite`].
fn hermite_deriv(p0: f64, p1: f64, m0: f64, m1: f64, t: f64) -> f64 {
    let t2 = t * t;
    (6.0 * t2 - 6.0 * t) * p0
        + (3.0 * t2 - 4.0 * t + 1.0) * m0
        + (-6.0 * t2 + 6.0 * t) * p1
        + (3.0 * t2 - 2.0 * t) * m1
}

fn unwrap_headings(samples: &[TrackSample]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut prev = samples[0].heading;
    out.push(prev);
    for sm in &samples[1..] {
        let next = prev + wrap_angle(sm.heading - prev);
        out.push(next);
        prev = next;
    }
    out
}

/// Fritsch-Carlson slopes: C1 interpolation of kappa without overshoot.
fn monotone_cubic_slopes(samples: &[TrackSample], closed: bool) -> Vec<f64> {
    let n = samples.len();
    let mut secant = Vec::with_capacity(n - 1);
    for w in samples.windows(2) {
        secant.push((w[1].kappa - w[0].kappa) / (w[1].s - w[0].s));
    }
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        if secant[i - 1] * secant[i] > 0.0 {
            m[i] = 0.5 * (secant[i - 1] + secant[i]);
        }
    }
    if closed && n > 2 {
        // Periodic seam: use wrap-around secants at both ends.
        let s_last = secant[n - 2];
        let s_first = secant[0];
        let end = if s_last * s_first > 0.0 {
            0.5 * (s_last + s_first)
        } else {
            0.0
        };
        m[0] = end;
        m[n - 1] = end;
    } else {
        m[0] = secant[0];
        m[n - 1] = secant[n - 2];
    }
    // Fritsch-Carlson limiter keeps the interpolant inside the data hull.
    for i in 0..n - 1 {
        if secant[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
        } else {
            let a = m[i] / secant[i];
            let b = m[i + 1] / secant[i];
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                m[i] = tau * a * secant[i];
                m[i + 1] = tau * b * secant[i];
            }
        }
    }
    m
}

/// Piece of a synthetic track: curvature ramps linearly over the segment
/// (straights and arcs are the constant special cases).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SegmentSpec {
    Straight { length: f64 },
    Arc { length: f64, kappa: f64 },
    Clothoid { length: f64, kappa_start: f64, kappa_end: f64 },
}

impl SegmentSpec {
    fn length(&self) -> f64 {
        match *self {
            Self::Straight { length } => length,
            Self::Arc { length, .. } => length,
            Self::Clothoid { length, .. } => length,
        }
    }

    fn kappa_at(&self, t: f64) -> f64 {
        match *self {
            Self::Straight { .. } => 0.0,
            Self::Arc { kappa, .. } => kappa,
            Self::Clothoid {
                length,
                kappa_start,
                kappa_end,
            } => kappa_start + (kappa_end - kappa_start) * t / length,
        }
    }

    /// Heading change from segment start to local arclength t.
    fn heading_delta(&self, t: f64) -> f64 {
        match *self {
            Self::Straight { .. } => 0.0,
            Self::Arc { kappa, .. } => kappa * t,
            Self::Clothoid {
                length,
                kappa_start,
                kappa_end,
            } => kappa_start * t + 0.5 * (kappa_end - kappa_start) * t * t / length,
        }
    }
}

/// Speed-profile limits used when generating a synthetic track.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub v_max: f64,
    pub v_min: f64,
    pub a_lat: f64,
    pub a_accel: f64,
    pub a_brake: f64,
}

impl Default for SpeedProfile {
    fn default() -> Self {
        Self {
            v_max: 28.0,
            v_min: 5.0,
            a_lat: 9.0,
            a_accel: 3.0,
            a_brake: 7.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackGenSpec {
    pub segments: Vec<SegmentSpec>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    /// Full corridor width; lateral bounds are +-width/2.
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub closed: bool,
    #[serde(default)]
    pub speed: SpeedProfile,
}

fn default_spacing() -> f64 {
    1.0
}

fn default_width() -> f64 {
    8.0
}

/// Build a sampled track from a segment list, integrating the clothoid
/// position with per-interval Gauss-Legendre quadrature.
pub fn generate_synthetic_track(spec: &TrackGenSpec) -> Result<TrackPath, TrackError> {
    if spec.segments.is_empty() {
        return Err(TrackError::BadSegment {
            reason: "empty segment list".into(),
        });
    }
    for seg in &spec.segments {
        if seg.length() <= 0.0 {
            return Err(TrackError::BadSegment {
                reason: "segment length must be positive".into(),
            });
        }
    }
    let total: f64 = spec.segments.iter().map(|s| s.length()).sum();
    let n = (total / spec.spacing).round().max(2.0) as usize;
    let ds = total / n as f64;

    // 5-point Gauss-Legendre nodes/weights on [0, 1].
    const GL_T: [f64; 5] = [
        0.046910077030668,
        0.230765344947158,
        0.5,
        0.769234655052842,
        0.953089922969332,
    ];
    const GL_W: [f64; 5] = [
        0.118463442528095,
        0.239314335249683,
        0.284444444444444,
        0.239314335249683,
        0.118463442528095,
    ];

    let heading_at = |s: f64| -> f64 {
        let mut acc = 0.0;
        let mut rem = s;
        for seg in &spec.segments {
            if rem <= seg.length() {
                return acc + seg.heading_delta(rem);
            }
            acc += seg.heading_delta(seg.length());
            rem -= seg.length();
        }
        acc
    };
    let kappa_at = |s: f64| -> f64 {
        let mut rem = s;
        for seg in &spec.segments {
            if rem <= seg.length() {
                return seg.kappa_at(rem);
            }
            rem -= seg.length();
        }
        spec.segments.last().unwrap().kappa_at(spec.segments.last().unwrap().length())
    };

    let mut samples = Vec::with_capacity(n + 1);
    let (mut x, mut y) = (0.0, 0.0);
    let half = spec.width / 2.0;
    for k in 0..=n {
        let s = k as f64 * ds;
        let kappa = kappa_at(s.min(total));
        if kappa.abs() * half >= 1.0 {
            return Err(TrackError::BadSegment {
                reason: format!("segment curvature {kappa} too tight for width {}", spec.width),
            });
        }
        samples.push(TrackSample {
            s,
            x,
            y,
            heading: wrap_angle(heading_at(s)),
            kappa,
            v_ref: 1.0, // filled by the speed profile below
            d_min: -half,
            d_max: half,
        });
        if k < n {
            let s0 = s;
            for (t, w) in GL_T.iter().zip(GL_W.iter()) {
                let th = heading_at(s0 + t * ds);
                x += w * ds * th.cos();
                y += w * ds * th.sin();
            }
        }
    }

    apply_speed_profile(&mut samples, &spec.speed, spec.closed);

    if spec.closed {
        let first = samples[0];
        let last = samples.last_mut().unwrap();
        let gap = ((last.x - first.x).powi(2) + (last.y - first.y).powi(2)).sqrt();
        if gap > 0.05 || wrap_angle(last.heading - first.heading).abs() > 1e-3 {
            return Err(TrackError::ClosureGap { gap });
        }
        // Snap the wrap sample exactly onto the start.
        last.x = first.x;
        last.y = first.y;
        last.heading = first.heading;
        last.kappa = first.kappa;
        last.v_ref = first.v_ref;
    }

    TrackPath::from_samples(samples, spec.closed)
}

fn apply_speed_profile(samples: &mut [TrackSample], sp: &SpeedProfile, closed: bool) {
    let n = samples.len();
    let mut v: Vec<f64> = samples
        .iter()
        .map(|sm| {
            let v_curv = if sm.kappa.abs() > 1e-9 {
                (sp.a_lat / sm.kappa.abs()).sqrt()
            } else {
                sp.v_max
            };
            v_curv.min(sp.v_max).max(sp.v_min)
        })
        .collect();
    let passes = if closed { 2 } else { 1 };
    for _ in 0..passes {
        for i in 1..n {
            let ds = samples[i].s - samples[i - 1].s;
            v[i] = v[i].min((v[i - 1] * v[i - 1] + 2.0 * sp.a_accel * ds).sqrt());
        }
        for i in (0..n - 1).rev() {
            let ds = samples[i + 1].s - samples[i].s;
            v[i] = v[i].min((v[i + 1] * v[i + 1] + 2.0 * sp.a_brake * ds).sqrt());
        }
        if closed {
            let vv = v[0].min(v[n - 1]);
            v[0] = vv;
            v[n - 1] = vv;
        }
    }
    for (sm, vi) in samples.iter_mut().zip(v) {
        sm.v_ref = vi.max(sp.v_min);
    }
}

/// Hairpin used throughout the bundled scenarios: approach straight, a
/// tightening entry, the hairpin itself and an exit straight.
pub fn hairpin_test_spec() -> TrackGenSpec {
    TrackGenSpec {
        segments: vec![
            SegmentSpec::Straight { length: 150.0 },
            SegmentSpec::Clothoid {
                length: 40.0,
                kappa_start: 0.0,
                kappa_end: 0.02,
            },
            SegmentSpec::Arc {
                length: 30.0,
                kappa: 0.02,
            },
            SegmentSpec::Clothoid {
                length: 30.0,
                kappa_start: 0.02,
                kappa_end: 0.055,
            },
            SegmentSpec::Arc {
                length: 40.0,
                kappa: 0.055,
            },
            SegmentSpec::Clothoid {
                length: 30.0,
                kappa_start: 0.055,
                kappa_end: 0.0,
            },
            SegmentSpec::Straight { length: 150.0 },
        ],
        spacing: 1.0,
        width: 8.0,
        closed: false,
        speed: SpeedProfile::default(),
    }
}
