//! Synthetic clouds: uniform samples in tubes around parametric surfaces, plus
//! uniform background outliers.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{dist, PointCloud, Truth};

const CURVE_GRID: usize = 4096;
const REFINE_STEPS: usize = 20;
const STALL_DRAWS: u64 = 10_000_000;
const STALL_RATE: f64 = 1e-6;

pub type CurveFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// A curve given by a map `t ↦ point` on `[t0, t1]`, tabulated for distance
/// queries and arclength sampling.
#[derive(Clone)]
pub struct ParamCurve {
    f: CurveFn,
    t0: f64,
    t1: f64,
    grid_t: Vec<f64>,
    grid_p: Vec<Vec<f64>>,
    cum_len: Vec<f64>,
}

impl fmt::Debug for ParamCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamCurve")
            .field("t0", &self.t0)
            .field("t1", &self.t1)
            .field("dim", &self.dim())
            .finish()
    }
}

impl ParamCurve {
    pub fn new(t0: f64, t1: f64, f: CurveFn) -> Self {
        let grid_t: Vec<f64> = (0..=CURVE_GRID)
            .map(|i| t0 + (t1 - t0) * i as f64 / CURVE_GRID as f64)
            .collect();
        let grid_p: Vec<Vec<f64>> = grid_t.iter().map(|&t| f(t)).collect();
        let mut cum_len = vec![0.0];
        for w in grid_p.windows(2) {
            cum_len.push(cum_len.last().unwrap() + dist(&w[0], &w[1]));
        }
        Self {
            f,
            t0,
            t1,
            grid_t,
            grid_p,
            cum_len,
        }
    }

    pub fn dim(&self) -> usize {
        self.grid_p[0].len()
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        (self.f)(t)
    }

    pub fn length(&self) -> f64 {
        *self.cum_len.last().unwrap()
    }

    /// Parameter at arclength `s` by linear interpolation of the tabulated lengths.
    pub fn t_at_length(&self, s: f64) -> f64 {
        let i = self.cum_len.partition_point(|&c| c < s).clamp(1, CURVE_GRID);
        let (a, b) = (self.cum_len[i - 1], self.cum_len[i]);
        let w = if b > a { ((s - a) / (b - a)).clamp(0.0, 1.0) } else { 0.0 };
        self.grid_t[i - 1] + w * (self.grid_t[i] - self.grid_t[i - 1])
    }

    fn derivative(&self, t: f64) -> Vec<f64> {
        let h = 1e-6 * (self.t1 - self.t0);
        let (a, b) = ((t - h).max(self.t0), (t + h).min(self.t1));
        let (pa, pb) = (self.eval(a), self.eval(b));
        pa.iter().zip(&pb).map(|(x, y)| (y - x) / (b - a)).collect()
    }

    /// Grid search followed by bisection on the sign of `⟨f(t) − x, f'(t)⟩`.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.grid_p.iter().enumerate() {
            let d = dist(p, x);
            if d < best.1 {
                best = (i, d);
            }
        }
        let (mut lo, mut hi) = (
            self.grid_t[best.0.saturating_sub(1)],
            self.grid_t[(best.0 + 1).min(CURVE_GRID)],
        );
        for _ in 0..REFINE_STEPS {
            let mid = 0.5 * (lo + hi);
            let p = self.eval(mid);
            let g: f64 = p.iter().zip(x).zip(self.derivative(mid)).map(|((p, x), d)| (p - x) * d).sum();
            if g > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        best.1.min(dist(&self.eval(0.5 * (lo + hi)), x))
    }

    fn bbox(&self) -> (Vec<f64>, Vec<f64>) {
        let dim = self.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in &self.grid_p {
            for k in 0..dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}

/// An underlying cluster surface.
#[derive(Debug, Clone)]
pub enum Surface {
    Circle { center: [f64; 2], radius: f64 },
    Segment { a: Vec<f64>, b: Vec<f64> },
    /// Circular arc from angle `start` over `span` radians (counterclockwise).
    /// A half-moon is an arc with span `π`.
    Arc { center: [f64; 2], radius: f64, start: f64, span: f64 },
    Sphere { center: Vec<f64>, radius: f64 },
    Ellipsoid { center: Vec<f64>, axes: Vec<f64> },
    Curve(ParamCurve),
}

fn angle_in_arc(theta: f64, start: f64, span: f64) -> bool {
    (theta - start).rem_euclid(2.0 * PI) <= span
}

impl Surface {
    pub fn dim(&self) -> usize {
        match self {
            Surface::Circle { .. } | Surface::Arc { .. } => 2,
            Surface::Segment { a, .. } => a.len(),
            Surface::Sphere { center, .. } => center.len(),
            Surface::Ellipsoid { center, .. } => center.len(),
            Surface::Curve(c) => c.dim(),
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self {
            Surface::Sphere { .. } | Surface::Ellipsoid { .. } => self.dim() - 1,
            _ => 1,
        }
    }

    /// Euclidean distance from `x` to the surface.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            Surface::Circle { center, radius } => (dist(x, center) - radius).abs(),
            Surface::Segment { a, b } => {
                let ab: Vec<f64> = a.iter().zip(b).map(|(p, q)| q - p).collect();
                let len2: f64 = ab.iter().map(|v| v * v).sum();
                let t = if len2 > 0.0 {
                    (x.iter().zip(a).zip(&ab).map(|((x, a), d)| (x - a) * d).sum::<f64>() / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let p: Vec<f64> = a.iter().zip(&ab).map(|(a, d)| a + t * d).collect();
                dist(x, &p)
            }
            Surface::Arc {
                center,
                radius,
                start,
                span,
            } => {
                let theta = (x[1] - center[1]).atan2(x[0] - center[0]);
                if angle_in_arc(theta, *start, *span) {
                    (dist(x, center) - radius).abs()
                } else {
                    let end = |a: f64| [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
                    dist(x, &end(*start)).min(dist(x, &end(start + span)))
                }
            }
            Surface::Sphere { center, radius } => (dist(x, center) - radius).abs(),
            Surface::Ellipsoid { center, axes } => ellipsoid_distance(x, center, axes),
            Surface::Curve(c) => c.distance(x),
        }
    }

    fn bbox(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Surface::Circle { center, radius } | Surface::Arc { center, radius, .. } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Surface::Segment { a, b } => (
                a.iter().zip(b).map(|(p, q)| p.min(*q)).collect(),
                a.iter().zip(b).map(|(p, q)| p.max(*q)).collect(),
            ),
            Surface::Sphere { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Surface::Ellipsoid { center, axes } => (
                center.iter().zip(axes).map(|(c, a)| c - a).collect(),
                center.iter().zip(axes).map(|(c, a)| c + a).collect(),
            ),
            Surface::Curve(c) => c.bbox(),
        }
    }

    fn as_curve(&self) -> Option<ParamCurve> {
        match self {
            Surface::Curve(c) => Some(c.clone()),
            Surface::Segment { a, b } => {
                let (a, b) = (a.clone(), b.clone());
                Some(ParamCurve::new(
                    0.0,
                    1.0,
                    Arc::new(move |t| a.iter().zip(&b).map(|(p, q)| p + t * (q - p)).collect()),
                ))
            }
            _ => None,
        }
    }

    /// A point drawn from the surface measure (arclength or area).
    fn sample_on(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Surface::Circle { center, radius } => {
                let a = rng.random_range(0.0..2.0 * PI);
                vec![center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            }
            Surface::Arc {
                center,
                radius,
                start,
                span,
            } => {
                let a = start + rng.random::<f64>() * span;
                vec![center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            }
            Surface::Segment { a, b } => {
                let t: f64 = rng.random();
                a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect()
            }
            Surface::Sphere { center, radius } => {
                let u = unit_gaussian(center.len(), rng);
                center.iter().zip(&u).map(|(c, u)| c + radius * u).collect()
            }
            Surface::Ellipsoid { center, axes } => {
                // sphere points reweighted by the area element of the axis scaling
                let amin = axes.iter().copied().fold(f64::INFINITY, f64::min);
                loop {
                    let u = unit_gaussian(center.len(), rng);
                    let w = amin * u.iter().zip(axes).map(|(u, a)| (u / a).powi(2)).sum::<f64>().sqrt();
                    if rng.random::<f64>() < w {
                        return center.iter().zip(&u).zip(axes).map(|((c, u), a)| c + a * u).collect();
                    }
                }
            }
            Surface::Curve(c) => {
                let s = rng.random::<f64>() * c.length();
                c.eval(c.t_at_length(s))
            }
        }
    }
}

/// Distance to the ellipsoid `Σ ((x_i − c_i)/a_i)² = 1` by bisection on the
/// Lagrange multiplier of the projection.
fn ellipsoid_distance(x: &[f64], center: &[f64], axes: &[f64]) -> f64 {
    let y: Vec<f64> = x.iter().zip(center).map(|(x, c)| (x - c).abs()).collect();
    let e2: Vec<f64> = axes.iter().map(|a| a * a).collect();
    let (imin, emin2) = e2
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, v)| if v < b.1 { (i, v) } else { b });
    let f = |t: f64| -> f64 {
        y.iter()
            .zip(axes)
            .zip(&e2)
            .map(|((y, a), e2)| (a * y / (t + e2)).powi(2))
            .sum::<f64>()
            - 1.0
    };
    let project = |t: f64| -> Vec<f64> { y.iter().zip(&e2).map(|(y, e2)| e2 * y / (t + e2)).collect() };
    let z = if y[imin] == 0.0 && {
        let lim: f64 = y
            .iter()
            .zip(axes)
            .zip(&e2)
            .filter(|((_, _), e2)| **e2 > emin2)
            .map(|((y, a), e2)| (a * y / (e2 - emin2)).powi(2))
            .sum();
        lim < 1.0
    } {
        let mut z: Vec<f64> = y
            .iter()
            .zip(&e2)
            .map(|(y, e2)| if *e2 > emin2 { e2 * y / (e2 - emin2) } else { 0.0 })
            .collect();
        let used: f64 = z.iter().zip(axes).map(|(z, a)| (z / a).powi(2)).sum();
        z[imin] = axes[imin] * (1.0 - used).max(0.0).sqrt();
        z
    } else {
        let norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let amax = axes.iter().copied().fold(0.0, f64::max);
        let mut lo = -emin2;
        let mut hi = amax * norm + 1e-300;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        project(0.5 * (lo + hi))
    };
    dist(&y, &z)
}

fn unit_gaussian(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            return g.into_iter().map(|v| v / n).collect();
        }
    }
}

fn uniform_ball(k: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let r = radius * rng.random::<f64>().powf(1.0 / k as f64);
    unit_gaussian(k, rng).into_iter().map(|v| v * r).collect()
}

fn in_open_cube(x: &[f64]) -> bool {
    x.iter().all(|&v| v > 0.0 && v < 1.0)
}

fn ball_volume(k: usize) -> f64 {
    match k {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / k as f64 * ball_volume(k - 2),
    }
}

struct StallGuard {
    draws: u64,
    accepted: u64,
}

impl StallGuard {
    fn new() -> Self {
        Self { draws: 0, accepted: 0 }
    }

    fn draw(&mut self) -> Result<()> {
        self.draws += 1;
        if self.draws >= STALL_DRAWS && (self.accepted as f64) < STALL_RATE * self.draws as f64 {
            return Err(Error::Sampling(format!(
                "{} of {} draws accepted; use a larger jitter or a smaller surface box",
                self.accepted, self.draws
            )));
        }
        Ok(())
    }
}

/// `n` points uniform in `{x ∈ (0,1)^D : dist(x, S) < τ}`; on `S` itself when `τ = 0`.
pub fn sample_tube(surface: &Surface, n: usize, tau: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    sample_tube_with(surface, n, tau, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_tube_with(surface: &Surface, n: usize, tau: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("jitter must be ≥ 0, got {tau}")));
    }
    if tau == 0.0 {
        return Ok((0..n).map(|_| surface.sample_on(rng)).collect());
    }
    if surface.dim() > 3 {
        if let Some(curve) = surface.as_curve() {
            return sample_curve_tube(&curve, n, tau, rng);
        }
    }
    let (lo, hi) = surface.bbox();
    let lo: Vec<f64> = lo.iter().map(|v| (v - tau).max(0.0)).collect();
    let hi: Vec<f64> = hi.iter().map(|v| (v + tau).min(1.0)).collect();
    let mut guard = StallGuard::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        guard.draw()?;
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| a + (b - a) * rng.random::<f64>()).collect();
        if in_open_cube(&x) && surface.distance(&x) < tau {
            guard.accepted += 1;
            out.push(x);
        }
    }
    Ok(out)
}

/// Tube sampling for curves in higher dimension, where box rejection is
/// hopeless: a normal disc at a uniform arclength position, accepted with
/// the tube's volume density `1 − ⟨u, κ⟩`, plus half-ball caps at the ends.
fn sample_curve_tube(curve: &ParamCurve, n: usize, tau: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let dim = curve.dim();
    let len = curve.length();
    let tube_vol = len * ball_volume(dim - 1) * tau.powi(dim as i32 - 1);
    let cap_vol = ball_volume(dim) * tau.powi(dim as i32);
    let p_cap = cap_vol / (cap_vol + tube_vol);
    let mut guard = StallGuard::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        guard.draw()?;
        let x = if rng.random::<f64>() < p_cap {
            let (t, sign) = if rng.random::<bool>() { (curve.t1, 1.0) } else { (curve.t0, -1.0) };
            let end = curve.eval(t);
            let tangent = normalized(&curve.derivative(t));
            let mut u = uniform_ball(dim, tau, rng);
            let along: f64 = u.iter().zip(&tangent).map(|(u, t)| u * t).sum::<f64>() * sign;
            if along < 0.0 {
                for (u, t) in u.iter_mut().zip(&tangent) {
                    *u += 2.0 * along * sign * t;
                }
            }
            end.iter().zip(&u).map(|(e, u)| e + u).collect::<Vec<f64>>()
        } else {
            let s = rng.random::<f64>() * len;
            let t = curve.t_at_length(s);
            let h = 1e-4 * (curve.t1 - curve.t0);
            let (ta, tb) = ((t - h).max(curve.t0), (t + h).min(curve.t1));
            let tangent = normalized(&curve.derivative(t));
            let speed = norm(&curve.derivative(t));
            let (da, db) = (normalized(&curve.derivative(ta)), normalized(&curve.derivative(tb)));
            let kappa: Vec<f64> = da.iter().zip(&db).map(|(a, b)| (b - a) / ((tb - ta) * speed)).collect();
            let basis = normal_basis(&tangent);
            let c = uniform_ball(dim - 1, tau, rng);
            let mut u = vec![0.0; dim];
            for (ci, b) in c.iter().zip(&basis) {
                for (u, b) in u.iter_mut().zip(b) {
                    *u += ci * b;
                }
            }
            let bend: f64 = u.iter().zip(&kappa).map(|(u, k)| u * k).sum();
            let accept = (1.0 - bend) / (1.0 + tau * norm(&kappa));
            if rng.random::<f64>() >= accept {
                continue;
            }
            let p = curve.eval(t);
            p.iter().zip(&u).map(|(p, u)| p + u).collect()
        };
        if in_open_cube(&x) {
            guard.accepted += 1;
            out.push(x);
        }
    }
    Ok(out)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Orthonormal basis of the complement of unit vector `t`.
fn normal_basis(t: &[f64]) -> Vec<Vec<f64>> {
    let dim = t.len();
    let mut basis: Vec<Vec<f64>> = vec![t.to_vec()];
    for k in 0..dim {
        if basis.len() == dim {
            break;
        }
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        for b in &basis {
            let c: f64 = v.iter().zip(b).map(|(v, b)| v * b).sum();
            v.iter_mut().zip(b).for_each(|(v, b)| *v -= c * b);
        }
        let n = norm(&v);
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis.remove(0);
    basis
}

/// `n` points from `a` toward `b` at fixed spacing.
pub fn sample_equispaced_segment(a: &[f64], b: &[f64], n: usize, spacing: f64) -> Result<Vec<Vec<f64>>> {
    let len = dist(a, b);
    if n > 1 && spacing * (n - 1) as f64 > len * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "{n} points at spacing {spacing} do not fit on a segment of length {len}"
        )));
    }
    let unit: Vec<f64> = if len > 0.0 {
        a.iter().zip(b).map(|(p, q)| (q - p) / len).collect()
    } else {
        vec![0.0; a.len()]
    };
    Ok((0..n)
        .map(|i| a.iter().zip(&unit).map(|(p, u)| p + spacing * i as f64 * u).collect())
        .collect())
}

/// Appends `n0` uniform points of `(0,1)^D` that keep clear of every surface by `delta0`.
pub fn add_outliers(cloud: &PointCloud, n0: usize, surfaces: &[Surface], delta0: f64, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if !(delta0 >= 0.0) {
        return Err(Error::Domain(format!("clearance must be ≥ 0, got {delta0}")));
    }
    let dim = cloud.dim();
    let mut guard = StallGuard::new();
    let mut coords = Vec::with_capacity(n0 * dim);
    let mut got = 0;
    while got < n0 {
        guard.draw()?;
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        if delta0 > 0.0 && surfaces.iter().any(|s| s.distance(&x) < delta0) {
            continue;
        }
        guard.accepted += 1;
        coords.extend(x);
        got += 1;
    }
    if n0 == 0 {
        return Ok(cloud.clone());
    }
    let extra = PointCloud::new(coords, dim)?.with_truth(vec![Truth::Outlier; n0])?;
    let base = if cloud.truth().is_some() {
        cloud.clone()
    } else {
        cloud.clone().with_truth(vec![Truth::Cluster(0); cloud.len()])?
    };
    base.concat(&extra)
}

/// Surfaces with per-surface counts, jitter and background outliers.
#[derive(Debug, Clone)]
pub struct GenerativeSpec {
    pub surfaces: Vec<(Surface, usize)>,
    pub tau: f64,
    pub n_outliers: usize,
    pub delta0: f64,
    pub seed: u64,
}

pub fn generate(spec: &GenerativeSpec) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec
        .surfaces
        .first()
        .map(|(s, _)| s.dim())
        .ok_or_else(|| Error::InvalidParams("no surfaces".into()))?;
    let mut coords = Vec::new();
    let mut truth = Vec::new();
    for (k, (surface, n)) in spec.surfaces.iter().enumerate() {
        if surface.dim() != dim {
            return Err(Error::InvalidParams("surfaces live in different dimensions".into()));
        }
        if *n == 0 {
            return Err(Error::InvalidParams(format!("surface {k} has no points")));
        }
        for p in sample_tube_with(surface, *n, spec.tau, &mut rng)? {
            coords.extend(p);
            truth.push(Truth::Cluster(k));
        }
    }
    let cloud = PointCloud::new(coords, dim)?.with_truth(truth)?;
    let surfaces: Vec<Surface> = spec.surfaces.iter().map(|(s, _)| s.clone()).collect();
    add_outliers(&cloud, spec.n_outliers, &surfaces, spec.delta0, &mut rng)
}

/// Outlier count giving `fraction` of the final cloud when added to `n_in` inliers.
pub fn outlier_count(n_in: usize, fraction: f64) -> usize {
    (n_in as f64 * fraction / (1.0 - fraction)).round() as usize
}

/// The built-in synthetic configurations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dataset {
    /// Three concentric circles, sparsely sampled.
    ThreeCircles,
    /// Horizontal segments `y = 0.5` and `y = 0.5 + delta`, 100 points each at spacing 0.01.
    TwoLines { delta: f64, tau: f64 },
    TwoMoons,
    /// A sphere with an ellipsoid inside it, in `R^3`.
    SphereEllipsoid,
    /// Two circular arcs crossing at a right angle.
    IntersectingCurves,
    /// Three disjoint gently bowed curves in `R^10`, 80 points each.
    CurvesD10 { tau: f64 },
    /// Two curved segments whose tips face each other 0.1 apart.
    TwoArcs,
}

pub const DATASET_NAMES: [&str; 7] = [
    "three_circles",
    "two_lines",
    "two_moons",
    "sphere_ellipsoid",
    "intersecting_curves",
    "curves_d10",
    "two_arcs",
];

impl Dataset {
    /// Looks up a dataset by name; `delta` and `tau` override the defaults where they apply.
    pub fn from_name(name: &str, delta: Option<f64>, tau: Option<f64>) -> Result<Self> {
        Ok(match name {
            "three_circles" => Dataset::ThreeCircles,
            "two_lines" => Dataset::TwoLines {
                delta: delta.unwrap_or(0.005),
                tau: tau.unwrap_or(0.0),
            },
            "two_moons" => Dataset::TwoMoons,
            "sphere_ellipsoid" => Dataset::SphereEllipsoid,
            "intersecting_curves" => Dataset::IntersectingCurves,
            "curves_d10" => Dataset::CurvesD10 {
                tau: tau.unwrap_or(0.01),
            },
            "two_arcs" => Dataset::TwoArcs,
            other => {
                return Err(Error::InvalidParams(format!(
                    "unknown dataset {other:?}; expected one of {}",
                    DATASET_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dataset::ThreeCircles => "three_circles",
            Dataset::TwoLines { .. } => "two_lines",
            Dataset::TwoMoons => "two_moons",
            Dataset::SphereEllipsoid => "sphere_ellipsoid",
            Dataset::IntersectingCurves => "intersecting_curves",
            Dataset::CurvesD10 { .. } => "curves_d10",
            Dataset::TwoArcs => "two_arcs",
        }
    }

    pub fn clusters(&self) -> usize {
        match self {
            Dataset::ThreeCircles | Dataset::CurvesD10 { .. } => 3,
            _ => 2,
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self {
            Dataset::SphereEllipsoid => 2,
            _ => 1,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Dataset::SphereEllipsoid => 3,
            Dataset::CurvesD10 { .. } => 10,
            _ => 2,
        }
    }

    /// Surfaces and per-surface point counts.
    pub fn surfaces(&self) -> Vec<(Surface, usize)> {
        match *self {
            Dataset::ThreeCircles => [(0.15, 80), (0.3, 160), (0.45, 240)]
                .iter()
                .map(|&(r, n)| (Surface::Circle { center: [0.5, 0.5], radius: r }, n))
                .collect(),
            Dataset::TwoLines { delta, .. } => vec![
                (Surface::Segment { a: vec![0.005, 0.5], b: vec![0.995, 0.5] }, 100),
                (Surface::Segment { a: vec![0.005, 0.5 + delta], b: vec![0.995, 0.5 + delta] }, 100),
            ],
            Dataset::TwoMoons => vec![
                (Surface::Arc { center: [0.35, 0.4], radius: 0.3, start: 0.0, span: PI }, 100),
                (Surface::Arc { center: [0.65, 0.55], radius: 0.3, start: PI, span: PI }, 100),
            ],
            Dataset::SphereEllipsoid => vec![
                (Surface::Sphere { center: vec![0.5; 3], radius: 0.4 }, 400),
                (Surface::Ellipsoid { center: vec![0.5; 3], axes: vec![0.3, 0.2, 0.1] }, 200),
            ],
            Dataset::IntersectingCurves => vec![
                (Surface::Arc { center: [0.5, 0.0], radius: 0.5, start: PI / 2.0 - 0.3, span: 0.6 }, 200),
                (Surface::Arc { center: [0.0, 0.5], radius: 0.5, start: -0.3, span: 0.6 }, 200),
            ],
            Dataset::CurvesD10 { .. } => d10_curves().into_iter().map(|c| (Surface::Curve(c), 80)).collect(),
            Dataset::TwoArcs => vec![
                (Surface::Arc { center: [0.5, 0.1], radius: 0.35, start: 0.35, span: PI - 0.7 }, 100),
                (Surface::Arc { center: [0.5, 0.9], radius: 0.35, start: PI + 0.35, span: PI - 0.7 }, 100),
            ],
        }
    }

    pub fn tau(&self) -> f64 {
        match *self {
            Dataset::TwoLines { tau, .. } | Dataset::CurvesD10 { tau } => tau,
            Dataset::TwoMoons => 0.01,
            Dataset::ThreeCircles => 0.015,
            Dataset::TwoArcs => 0.0,
            Dataset::SphereEllipsoid => 0.0,
            Dataset::IntersectingCurves => 0.0,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<PointCloud> {
        match *self {
            Dataset::TwoLines { delta, tau } => two_lines(delta, tau, seed),
            _ => generate(&GenerativeSpec {
                surfaces: self.surfaces(),
                tau: self.tau(),
                n_outliers: 0,
                delta0: 0.0,
                seed,
            }),
        }
    }

    /// The dataset plus uniform background points making up `fraction` of the result.
    /// Inliers depend on `seed` only; outliers on `outlier_seed`.
    pub fn generate_with_outliers(&self, seed: u64, fraction: f64, outlier_seed: u64) -> Result<PointCloud> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Domain(format!("outlier fraction must lie in [0,1), got {fraction}")));
        }
        let clean = self.generate(seed)?;
        let surfaces: Vec<Surface> = self.surfaces().into_iter().map(|(s, _)| s).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(outlier_seed);
        add_outliers(&clean, outlier_count(clean.len(), fraction), &surfaces, 0.0, &mut rng)
    }
}

pub fn named_dataset(name: &str, seed: u64) -> Result<PointCloud> {
    Dataset::from_name(name, None, None)?.generate(seed)
}

fn two_lines(delta: f64, tau: f64, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(200);
    let mut truth = Vec::with_capacity(200);
    for (k, y) in [0.5, 0.5 + delta].into_iter().enumerate() {
        for mut p in sample_equispaced_segment(&[0.005, y], &[0.995, y], 100, 0.01)? {
            if tau > 0.0 {
                p[1] += rng.random_range(-tau..tau);
            }
            rows.push(p);
            truth.push(Truth::Cluster(k));
        }
    }
    PointCloud::from_rows(&rows)?.with_truth(truth)
}

/// Three bowed curves through the 10-cube, each moving in every coordinate.
fn d10_curves() -> Vec<ParamCurve> {
    let s = 1.0 / 10f64.sqrt();
    let dirs: [[f64; 10]; 3] = [
        [s; 10],
        [s, -s, s, -s, s, -s, s, -s, s, -s],
        [s, s, -s, -s, s, s, -s, -s, s, s],
    ];
    let bows: [[f64; 10]; 3] = [
        [s, -s, s, -s, -s, s, -s, s, s, -s],
        [s, s, -s, -s, -s, -s, s, s, s, s],
        [s, -s, -s, s, s, -s, -s, s, -s, s],
    ];
    let offsets: [[f64; 10]; 3] = [
        [0.0; 10],
        [0.08, 0.08, 0.08, 0.08, 0.08, -0.08, -0.08, -0.08, -0.08, -0.08],
        [-0.08, 0.08, -0.08, 0.08, -0.08, 0.08, -0.08, 0.08, -0.08, 0.08],
    ];
    (0..3)
        .map(|k| {
            let (dir, bow, off) = (dirs[k], bows[k], offsets[k]);
            ParamCurve::new(
                -0.6,
                0.6,
                Arc::new(move |t: f64| {
                    let b = 0.01 * (PI * (t + 0.6) / 1.2).sin();
                    (0..10).map(|i| 0.5 + off[i] + t * dir[i] + b * bow[i]).collect()
                }),
            )
        })
        .collect()
}
