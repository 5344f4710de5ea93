//! Degree-based outlier identification.
//!
//! Points near a cluster surface collect many flat tuples and thus a large
//! degree; background points do not. All rules compare the normalized degree
//! `D_i^{1/(m−1)}` against a threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_knn, TupleTable};
use crate::model::{HoscParams, PointCloud, Scale};

/// Which threshold to apply to the normalized degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutlierRule {
    /// Relative to the largest normalized degree, scaled by `1/ρ`.
    O1,
    /// Absolute threshold `ρ N ε^d η^{D−d}`; needs a finite `ε`.
    O2,
    /// Flag the given fraction of points with the smallest degrees.
    Quantile(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    pub mask: Vec<bool>,
    /// Points with normalized degree `≤ threshold_used` are flagged. For the
    /// quantile rule ties at the threshold are split by index, so the mask is
    /// a prefix of those points.
    pub threshold_used: f64,
    pub normalized_degrees: Vec<f64>,
}

impl OutlierReport {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// `D^{1/(m−1)}` evaluated in log space; zero stays zero.
pub fn normalized_degree(degree: f64, m: usize) -> f64 {
    if degree <= 0.0 {
        0.0
    } else {
        (degree.ln() / (m.max(2) - 1) as f64).exp()
    }
}

fn normalize_all(degrees: &[f64], m: usize) -> Vec<f64> {
    degrees.iter().map(|&d| normalized_degree(d, m)).collect()
}

fn threshold_report(normalized: Vec<f64>, threshold: f64) -> OutlierReport {
    OutlierReport {
        mask: normalized.iter().map(|&v| v <= threshold).collect(),
        threshold_used: threshold,
        normalized_degrees: normalized,
    }
}

pub fn detect_o1(degrees: &[f64], m: usize, rho: f64) -> Result<OutlierReport> {
    if m < 2 || !(rho > 1.0) {
        return Err(Error::Domain(format!("need m ≥ 2 and ρ > 1, got m={m}, ρ={rho}")));
    }
    let normalized = normalize_all(degrees, m);
    let max = normalized.iter().copied().fold(0.0, f64::max);
    Ok(threshold_report(normalized, max / rho))
}

/// Scales at which the absolute rule is calibrated: `ε = (ρ log N / N)^{1/(2D−d)}`, `η = ε²`.
pub fn o2_scales(n: usize, d: usize, big_d: usize, rho: f64) -> (f64, f64) {
    let eps = (rho * (n as f64).ln() / n as f64).powf(1.0 / (2 * big_d - d) as f64);
    (eps, eps * eps)
}

#[allow(clippy::too_many_arguments)]
pub fn detect_o2(
    degrees: &[f64],
    m: usize,
    rho: f64,
    n: usize,
    epsilon: Scale,
    eta: f64,
    d: usize,
    big_d: usize,
) -> Result<OutlierReport> {
    let Scale::Finite(eps) = epsilon else {
        return Err(Error::Domain("the absolute degree rule needs a finite ε".into()));
    };
    if m < 2 || d >= big_d {
        return Err(Error::Domain(format!("need m ≥ 2 and d < D, got m={m}, d={d}, D={big_d}")));
    }
    let threshold = rho * n as f64 * eps.powi(d as i32) * eta.powi((big_d - d) as i32);
    Ok(threshold_report(normalize_all(degrees, m), threshold))
}

pub fn detect_quantile(degrees: &[f64], m: usize, fraction: f64) -> Result<OutlierReport> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Domain(format!("outlier fraction must lie in [0,1), got {fraction}")));
    }
    let normalized = normalize_all(degrees, m);
    let n = normalized.len();
    let count = (fraction * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| normalized[a].total_cmp(&normalized[b]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..count] {
        mask[i] = true;
    }
    let threshold_used = if count == 0 {
        f64::NEG_INFINITY
    } else {
        normalized[order[count - 1]]
    };
    Ok(OutlierReport {
        mask,
        threshold_used,
        normalized_degrees: normalized,
    })
}

/// `(mean inlier degree − mean outlier degree) / max degree`; zero when either
/// side is empty or all degrees vanish.
pub fn degree_gap_score(degrees: &[f64], mask: &[bool]) -> f64 {
    let max = degrees.iter().copied().fold(0.0, f64::max);
    let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
    for (&d, &o) in degrees.iter().zip(mask) {
        if o {
            sout += d;
            nout += 1;
        } else {
            sin += d;
            nin += 1;
        }
    }
    if max <= 0.0 || nin == 0 || nout == 0 {
        return 0.0;
    }
    (sin / nin as f64 - sout / nout as f64) / max
}

/// Index of the best score; ties go to the earliest entry.
pub(crate) fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Picks the flatness scale whose degrees best split into a high inlier group
/// and a low outlier group of the given size. Returns the scale and its score.
pub fn select_eta_outliers(cloud: &PointCloud, params: &HoscParams, eta_grid: &[f64], fraction: f64) -> Result<(f64, f64)> {
    if eta_grid.is_empty() {
        return Err(Error::InvalidParams("empty η grid".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain(format!("outlier fraction must lie in (0,1), got {fraction}")));
    }
    let index = build_knn(cloud, params.ell);
    let table = TupleTable::new(cloud, index.lists(), params.d, params.m);
    let mut grid = eta_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let scores = grid
        .iter()
        .map(|&eta| {
            let degrees = table.degrees_for(params.epsilon, eta, params.kernel);
            let report = detect_quantile(&degrees, params.m, fraction)?;
            Ok(degree_gap_score(&degrees, &report.mask))
        })
        .collect::<Result<Vec<f64>>>()?;
    let best = argmax_first(&scores);
    Ok((grid[best], scores[best]))
}
