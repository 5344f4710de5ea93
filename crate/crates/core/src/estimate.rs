//! Intrinsic dimension and jitter from correlation curves.
//!
//! The pairwise curve `log Cor(ε)` has slope close to the intrinsic dimension
//! above the jitter and close to the ambient dimension below it; the scale of
//! the bend estimates `τ`. When points are too sparse to resolve the bend, the
//! multiway curve (fixed `ε`, varying flatness scale `η`) bends at the jitter
//! instead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{range_lists, TupleTable};
use crate::model::{dist, HoscParams, Kernel, PointCloud, Scale};
use crate::outliers::normalized_degree;
use crate::util::logspace;

/// Above this many points pair counts are recomputed per scale instead of sorted once.
const SORTED_PAIRS_MAX_N: usize = 6000;
/// Refuse multiway evaluations that would enumerate more tuples than this.
const MAX_TUPLES: f64 = 5e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveKind {
    Pairwise,
    Multiway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub log_scales: Vec<f64>,
    /// `-inf` where the count vanishes.
    pub log_corr: Vec<f64>,
    pub rho: f64,
    pub kind: CurveKind,
}

impl CorrelationCurve {
    fn finite(&self) -> (Vec<f64>, Vec<f64>) {
        self.log_scales
            .iter()
            .zip(&self.log_corr)
            .filter(|(_, c)| c.is_finite())
            .map(|(&s, &c)| (s, c))
            .unzip()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub d_hat: usize,
    pub tau_hat: f64,
    pub r_hat: i64,
    pub s_hat: Option<i64>,
    /// The bend was not resolved; `tau_hat` is only an upper bound.
    pub saturated: bool,
}

/// Counts ordered pairs within a distance, exactly.
pub struct PairCounter<'a> {
    cloud: &'a PointCloud,
    sorted: Option<Vec<f64>>,
}

impl<'a> PairCounter<'a> {
    pub fn new(cloud: &'a PointCloud) -> Self {
        let n = cloud.len();
        let sorted = (n <= SORTED_PAIRS_MAX_N).then(|| {
            let mut d: Vec<f64> = (0..n)
                .into_par_iter()
                .flat_map_iter(|i| (i + 1..n).map(move |j| dist(cloud.point(i), cloud.point(j))))
                .collect();
            d.sort_unstable_by(f64::total_cmp);
            d
        });
        Self { cloud, sorted }
    }

    pub fn count(&self, epsilon: f64) -> u64 {
        match &self.sorted {
            Some(d) => 2 * d.partition_point(|&v| v <= epsilon) as u64,
            None => {
                let c = self.cloud;
                let n = c.len();
                2 * (0..n)
                    .into_par_iter()
                    .map(|i| (i + 1..n).filter(|&j| dist(c.point(i), c.point(j)) <= epsilon).count() as u64)
                    .sum::<u64>()
            }
        }
    }

    /// Pairwise distances in increasing order, when kept.
    pub fn sorted(&self) -> Option<&[f64]> {
        self.sorted.as_deref()
    }
}

/// Number of ordered pairs `(i, j)`, `i ≠ j`, at distance at most `epsilon`.
pub fn pairwise_correlation(cloud: &PointCloud, epsilon: f64) -> u64 {
    PairCounter::new(cloud).count(epsilon)
}

pub fn pairwise_curve(cloud: &PointCloud, scales: &[f64], rho: f64) -> CorrelationCurve {
    let counter = PairCounter::new(cloud);
    CorrelationCurve {
        log_scales: scales.iter().map(|s| s.ln()).collect(),
        log_corr: scales.iter().map(|&s| (counter.count(s) as f64).ln()).collect(),
        rho,
        kind: CurveKind::Pairwise,
    }
}

/// Tuples of `ε`-neighborhoods, reusable across flatness scales.
struct MultiwayTable {
    table: TupleTable,
    epsilon: f64,
    m: usize,
}

impl MultiwayTable {
    fn new(cloud: &PointCloud, d: usize, m: usize, epsilon: f64) -> Result<Self> {
        let lists = range_lists(cloud, epsilon);
        let tuples: f64 = lists.iter().map(|l| crate::util::binomial(l.len(), m - 1)).sum();
        if tuples > MAX_TUPLES {
            return Err(Error::InvalidParams(format!(
                "ε = {epsilon} gives {tuples:.3e} tuples; use a smaller scale"
            )));
        }
        Ok(Self {
            table: TupleTable::new(cloud, lists, d, m),
            epsilon,
            m,
        })
    }

    fn corr(&self, eta: f64) -> f64 {
        self.table
            .degrees_for(Scale::Finite(self.epsilon), eta, Kernel::Simple)
            .iter()
            .map(|&deg| normalized_degree(deg, self.m))
            .sum()
    }
}

/// `Σ_i D_i^{1/(m−1)}` with indicator kernels and exact `ε`-neighborhoods.
/// Only `d`, `m`, `epsilon` and `eta` of `params` are used.
pub fn multiway_correlation(cloud: &PointCloud, params: &HoscParams) -> Result<f64> {
    let eps = params
        .epsilon
        .finite()
        .ok_or_else(|| Error::InvalidParams("multiway correlation needs a finite ε".into()))?;
    if params.m < params.d + 2 {
        return Err(Error::InvalidParams(format!("m ≥ d+2 violated (m={}, d={})", params.m, params.d)));
    }
    Ok(MultiwayTable::new(cloud, params.d, params.m, eps)?.corr(params.eta))
}

pub fn multiway_curve(cloud: &PointCloud, d: usize, m: usize, epsilon: f64, etas: &[f64], rho: f64) -> Result<CorrelationCurve> {
    let table = MultiwayTable::new(cloud, d, m, epsilon)?;
    Ok(CorrelationCurve {
        log_scales: etas.iter().map(|e| e.ln()).collect(),
        log_corr: etas.iter().map(|&e| table.corr(e).ln()).collect(),
        rho,
        kind: CurveKind::Multiway,
    })
}

/// Coarsest-to-finest scale index bound `r_N`, with the unknown intrinsic
/// dimension replaced by 1.
pub fn r_n(n: usize, rho: f64) -> i64 {
    let ln_n = (n as f64).ln();
    -((ln_n.ln() - ln_n) / rho.ln()).floor() as i64 - 2
}

/// Pairwise stage of the scale scan at `ε = ρ^{-r}`.
pub fn estimate_dim_and_jitter(cloud: &PointCloud, rho: f64) -> Result<EstimationResult> {
    let n = cloud.len();
    if n < 8 {
        return Err(Error::InvalidParams(format!("need at least 8 points, got {n}")));
    }
    if !(rho > 1.0) {
        return Err(Error::Domain(format!("ρ must exceed 1, got {rho}")));
    }
    let big_d = cloud.dim() as i64;
    let lr = rho.ln();
    let rn = r_n(n, rho);
    let counter = PairCounter::new(cloud);
    let a = |r: i64| (counter.count(rho.powi(-r as i32)) as f64).ln();
    if !a(3).is_finite() {
        return Err(Error::Domain(format!("no pairs within ρ^-3 = {}", rho.powi(-3))));
    }
    let mut hi = (rn - 2 * big_d).max(3);
    // stop where the curve drops to -inf
    let mut last = 3;
    while last < hi && a(last + 1).is_finite() {
        last += 1;
    }
    hi = hi.min(last);
    let found = (3..hi).find(|&r| (a(r) - a(r + 1)) / lr > big_d as f64 - 0.5);
    let r_hat = found.unwrap_or(hi);
    let d_hat = if r_hat == 3 {
        big_d
    } else {
        ((a(3) - a(r_hat)) / (r_hat as f64 * lr)).round() as i64
    };
    Ok(EstimationResult {
        d_hat: d_hat.clamp(1, big_d) as usize,
        tau_hat: rho.powi(-r_hat as i32),
        r_hat,
        s_hat: None,
        saturated: found.is_none(),
    })
}

/// Multiway stage: fixed `ε = ρ^{-r̂}`, flatness scales `ρ^{-r̂-s}`.
pub fn refine_tau_multiway(cloud: &PointCloud, d_hat: usize, r_hat: i64, rho: f64) -> Result<EstimationResult> {
    let n = cloud.len();
    let big_d = cloud.dim();
    if d_hat == 0 || d_hat >= big_d {
        return Err(Error::InvalidParams(format!("need 1 ≤ d̂ < D, got d̂={d_hat}, D={big_d}")));
    }
    if r_hat < 1 {
        return Err(Error::InvalidParams(format!("r̂ must be positive, got {r_hat}")));
    }
    let lr = rho.ln();
    let m = ((n as f64).ln() * lr * lr).ceil() as usize;
    let m = m.max(d_hat + 2).min(n.saturating_sub(2).max(d_hat + 2));
    let table = MultiwayTable::new(cloud, d_hat, m, rho.powi(-r_hat as i32))?;
    let b = |s: i64| table.corr(rho.powi(-(r_hat + s) as i32)).ln();
    let bs: Vec<f64> = (0..=r_hat).map(b).collect();
    let mut hi = r_hat;
    if let Some(first_inf) = bs.iter().position(|v| !v.is_finite()) {
        hi = hi.min(first_inf.saturating_sub(1) as i64);
    }
    let limit = big_d as f64 - d_hat as f64 - 0.5;
    let found = (0..hi).find(|&s| (bs[s as usize] - bs[s as usize + 1]) / lr > limit);
    let s_hat = found.unwrap_or(r_hat);
    Ok(EstimationResult {
        d_hat,
        tau_hat: rho.powi(-(r_hat + s_hat - 1) as i32),
        r_hat,
        s_hat: Some(s_hat),
        saturated: s_hat == r_hat,
    })
}

/// Both stages of the scan; the multiway stage runs only when the pairwise one saturates.
pub fn estimate_theoretical(cloud: &PointCloud, rho: f64) -> Result<EstimationResult> {
    let first = estimate_dim_and_jitter(cloud, rho)?;
    if !first.saturated || first.d_hat >= cloud.dim() {
        return Ok(first);
    }
    refine_tau_multiway(cloud, first.d_hat, first.r_hat, rho)
}

/// Least trimmed squares line through `(x, y)`; candidates are the lines
/// through every pair of points. Returns `(slope, intercept)`.
pub fn robust_fit(x: &[f64], y: &[f64], trim: f64) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::InvalidParams("abscissae and ordinates differ in length".into()));
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(Error::Domain(format!("trim fraction must lie in [0, 0.5), got {trim}")));
    }
    let n = x.len();
    let keep = (((1.0 - trim) * n as f64).ceil() as usize).clamp(1, n);
    let mut best: Option<(f64, f64, f64)> = None;
    let mut resid = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            if x[i] == x[j] {
                continue;
            }
            let slope = (y[j] - y[i]) / (x[j] - x[i]);
            let icpt = y[i] - slope * x[i];
            for k in 0..n {
                resid[k] = (y[k] - slope * x[k] - icpt).powi(2);
            }
            resid.sort_unstable_by(f64::total_cmp);
            let cost: f64 = resid[..keep].iter().sum();
            if best.is_none_or(|b| cost < b.0) {
                best = Some((cost, slope, icpt));
            }
        }
    }
    best.map(|(_, s, c)| (s, c))
        .ok_or_else(|| Error::InvalidParams("fewer than two distinct abscissae".into()))
}

/// Slope of the robust line through the finite part of a curve.
pub fn robust_slope(curve: &CorrelationCurve, trim: f64) -> Result<f64> {
    let (x, y) = curve.finite();
    Ok(robust_fit(&x, &y, trim)?.0)
}

/// Tunables of the curve-reading procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PracticalOptions {
    /// Grid points per doubling of the scale.
    pub steps_per_octave: usize,
    /// Local slopes are read over this many grid steps.
    pub window: usize,
    pub trim: f64,
    /// Counts below this many ordered pairs per point are too noisy to read a slope from.
    pub min_pairs_per_point: f64,
    /// Neighborhood size used to fix `ε` for the multiway curve.
    pub multiway_neighbors: f64,
    /// Octaves of `η` probed below `ε`.
    pub eta_octaves: usize,
}

impl Default for PracticalOptions {
    fn default() -> Self {
        Self {
            steps_per_octave: 4,
            window: 4,
            trim: 0.25,
            min_pairs_per_point: 0.5,
            multiway_neighbors: 6.0,
            eta_octaves: 16,
        }
    }
}

/// Estimate read off the curves directly: robust slope for the dimension,
/// steepening of the local slope for the jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PracticalEstimate {
    pub result: EstimationResult,
    pub pairwise: CorrelationCurve,
    pub multiway: Option<CorrelationCurve>,
}

/// Scans local slopes from coarse to fine and returns the grid index of the
/// coarse end of the first window steeper than `limit` (a count dropping to
/// zero counts as steep). The flag is false when the scan instead ran into
/// counts below `floor`, where slopes are too noisy to read.
fn find_bend(log_scales: &[f64], log_corr: &[f64], start: usize, window: usize, limit: f64, floor: f64) -> (usize, bool) {
    let mut i = start;
    while i >= window && log_corr[i] >= floor {
        let j = i - window;
        let slope = (log_corr[i] - log_corr[j]) / (log_scales[i] - log_scales[j]);
        if slope > limit {
            return (i, true);
        }
        i -= 1;
    }
    (i, false)
}

pub fn estimate_practical(cloud: &PointCloud, opts: &PracticalOptions) -> Result<PracticalEstimate> {
    let n = cloud.len();
    let big_d = cloud.dim();
    if n < 8 {
        return Err(Error::InvalidParams(format!("need at least 8 points, got {n}")));
    }
    if opts.steps_per_octave == 0 || opts.window == 0 {
        return Err(Error::InvalidParams("grid steps and window must be positive".into()));
    }
    let counter = PairCounter::new(cloud);
    let (lo, hi) = match counter.sorted() {
        Some(d) => (d.iter().copied().find(|&v| v > 0.0), d.last().copied()),
        None => {
            let all: Vec<f64> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| dist(cloud.point(i), cloud.point(j)))
                .collect();
            (
                all.iter().copied().filter(|&v| v > 0.0).reduce(f64::min),
                all.iter().copied().reduce(f64::max),
            )
        }
    };
    let (lo, hi) = match (lo, hi) {
        (Some(lo), Some(hi)) if hi > lo => (lo, hi),
        _ => return Err(Error::Domain("all points coincide".into())),
    };
    let steps = ((hi / lo).log2() * opts.steps_per_octave as f64).ceil() as usize + 1;
    // one extra step below the smallest distance so the curve reaches zero
    let scales = logspace(lo * 0.5f64.powf(1.0 / opts.steps_per_octave as f64), hi, steps + 1);
    let pairwise = CorrelationCurve {
        log_scales: scales.iter().map(|s| s.ln()).collect(),
        log_corr: scales.iter().map(|&s| (counter.count(s) as f64).ln()).collect(),
        rho: 2f64.powf(1.0 / opts.steps_per_octave as f64),
        kind: CurveKind::Pairwise,
    };
    let total = (n * (n - 1)) as f64;
    let floor = (opts.min_pairs_per_point * n as f64).ln();
    // linear range: at least the floor count, at most a tenth of all pairs
    let top = pairwise
        .log_corr
        .iter()
        .rposition(|&c| c <= (0.1 * total).ln())
        .unwrap_or(0);
    let fit_idx: Vec<usize> = (0..=top).filter(|&i| pairwise.log_corr[i] >= floor + 2f64.ln()).collect();
    let d_hat = if fit_idx.len() >= 2 {
        let x: Vec<f64> = fit_idx.iter().map(|&i| pairwise.log_scales[i]).collect();
        let y: Vec<f64> = fit_idx.iter().map(|&i| pairwise.log_corr[i]).collect();
        robust_fit(&x, &y, opts.trim)?.0.round().clamp(1.0, big_d as f64) as usize
    } else {
        big_d
    };
    let limit = 0.5 * (d_hat + big_d) as f64;
    let (r, resolved) = find_bend(&pairwise.log_scales, &pairwise.log_corr, top, opts.window, limit, floor);
    let mut result = EstimationResult {
        d_hat,
        tau_hat: pairwise.log_scales[r].exp(),
        r_hat: r as i64,
        s_hat: None,
        saturated: !resolved,
    };
    if resolved || d_hat >= big_d {
        return Ok(PracticalEstimate {
            result,
            pairwise,
            multiway: None,
        });
    }
    // fix ε at the smallest grid scale with the requested neighborhood size
    let eps_idx = pairwise
        .log_corr
        .iter()
        .position(|&c| c.exp() >= opts.multiway_neighbors * n as f64)
        .unwrap_or(top);
    let eps = pairwise.log_scales[eps_idx].exp();
    let m = d_hat + 2;
    let etas: Vec<f64> = (0..=opts.eta_octaves * opts.steps_per_octave)
        .rev()
        .map(|k| eps * 0.5f64.powf(k as f64 / opts.steps_per_octave as f64))
        .collect();
    let multiway = multiway_curve(cloud, d_hat, m, eps, &etas, pairwise.rho)?;
    let expected = ((big_d - d_hat) * (m - d_hat - 1)) as f64 / (m - 1) as f64;
    let (s, mw_resolved) = find_bend(
        &multiway.log_scales,
        &multiway.log_corr,
        etas.len() - 1,
        opts.window,
        0.5 * expected,
        floor,
    );
    result.tau_hat = multiway.log_scales[s].exp();
    result.s_hat = Some(s as i64);
    result.saturated = !mw_resolved;
    Ok(PracticalEstimate {
        result,
        pairwise,
        multiway: Some(multiway),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(cloud: &PointCloud, eps: f64) -> u64 {
        let mut c = 0;
        for i in 0..cloud.len() {
            for j in 0..cloud.len() {
                if i != j && dist(cloud.point(i), cloud.point(j)) <= eps {
                    c += 1;
                }
            }
        }
        c
    }

    fn uniform_square(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..2 * n).map(|_| rng.random::<f64>()).collect(), 2).unwrap()
    }

    #[test]
    fn three_point_count() {
        let c = PointCloud::new(vec![0.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(pairwise_correlation(&c, 1.5), 4);
        assert_eq!(pairwise_correlation(&c, 0.5), 0);
        assert_eq!(pairwise_correlation(&c, 2.0), 6);
    }

    #[test]
    fn counter_matches_brute_force() {
        let c = uniform_square(150, 1);
        let counter = PairCounter::new(&c);
        for eps in [0.0, 0.01, 0.05, 0.2, 1.5] {
            assert_eq!(counter.count(eps), brute(&c, eps));
        }
    }

    #[test]
    fn uniform_square_is_two_dimensional() {
        let c = uniform_square(1000, 2);
        let counter = PairCounter::new(&c);
        let slope = ((counter.count(0.08) as f64).ln() - (counter.count(0.02) as f64).ln()) / 4f64.ln();
        assert!((slope - 2.0).abs() < 0.2, "{slope}");
        let est = estimate_practical(&c, &PracticalOptions::default()).unwrap();
        assert_eq!(est.result.d_hat, 2);
    }

    #[test]
    fn collinear_multiway_golden() {
        let c = PointCloud::new(vec![0.0, 0.5, 0.1, 0.5, 0.2, 0.5, 0.3, 0.5], 2).unwrap();
        let mut p = HoscParams::practical(1, 2, 0.01);
        p.m = 3;
        p.epsilon = Scale::Finite(1.0);
        let v = multiway_correlation(&c, &p).unwrap();
        assert!((v - 4.0 * 12f64.sqrt()).abs() < 1e-12, "{v}");
        p.eta = 1e-30;
        assert_eq!(multiway_correlation(&c, &p).unwrap(), v);
        p.epsilon = Scale::Finite(0.05);
        assert_eq!(multiway_correlation(&c, &p).unwrap(), 0.0);
        p.epsilon = Scale::Infinite;
        assert!(multiway_correlation(&c, &p).is_err());
    }

    #[test]
    fn multiway_monotone_in_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = PointCloud::new((0..120).map(|_| rng.random::<f64>()).collect(), 2).unwrap();
        let mut p = HoscParams::practical(1, 2, 0.0);
        p.epsilon = Scale::Finite(0.3);
        let mut prev = 0.0;
        for eta in [1e-4, 1e-3, 1e-2, 1e-1] {
            p.eta = eta;
            let v = multiway_correlation(&c, &p).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn lts_cases() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((robust_fit(&x, &y, 0.0).unwrap().0 - 2.0).abs() < 1e-12);
        assert!((robust_fit(&x[..2], &y[..2], 0.0).unwrap().0 - 2.0).abs() < 1e-12);
        let mut y1: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
        y1[2] += 40.0;
        y1[7] -= 25.0;
        let (s, _) = robust_fit(&x, &y1, 0.25).unwrap();
        assert!((s - 1.0).abs() < 0.05, "{s}");
        assert!(robust_fit(&[1.0, 1.0], &[0.0, 2.0], 0.0).is_err());
        assert!(robust_fit(&x, &y, 0.5).is_err());
    }

    #[test]
    fn r_n_values() {
        assert_eq!(r_n(240, 2.0), 4);
        assert!(r_n(1_000_000, 2.0) > r_n(1000, 2.0));
    }

    #[test]
    fn coarse_scan_saturates_at_floor() {
        let c = uniform_square(300, 4);
        let est = estimate_dim_and_jitter(&c, 2.0).unwrap();
        assert!(est.saturated);
        assert_eq!(est.r_hat, 3);
        assert_eq!(est.d_hat, 2);
        assert_eq!(est.tau_hat, 0.125);
    }

    #[test]
    fn segment_slope_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = PointCloud::new((0..600).flat_map(|_| [rng.random::<f64>(), 0.5]).collect(), 2).unwrap();
        let curve = pairwise_curve(&c, &logspace(0.005, 0.1, 12), 2.0);
        let s = robust_slope(&curve, 0.25).unwrap();
        assert!((s - 1.0).abs() < 0.2, "{s}");
    }
}
