//! Domain types shared by every stage of the pipeline, parameter validation and
//! the asymptotic parameter prescriptions.
//!
//! All logarithms in this crate are natural logarithms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outliers::OutlierRule;

/// Ground-truth label of a generated or ingested point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Truth {
    Cluster(usize),
    Outlier,
}

impl Truth {
    pub fn is_outlier(self) -> bool {
        matches!(self, Truth::Outlier)
    }

    pub fn cluster(self) -> Option<usize> {
        match self {
            Truth::Cluster(k) => Some(k),
            Truth::Outlier => None,
        }
    }
}

/// `N` points in `R^D`, stored row-major, with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<f64>,
    dim: usize,
    truth: Option<Vec<Truth>>,
}

impl PointCloud {
    /// Builds a cloud from row-major coordinates.
    pub fn new(coords: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Cloud("ambient dimension must be at least 1".into()));
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::Cloud(format!(
                "{} coordinates do not form rows of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Cloud(format!(
                "non-finite coordinate in row {}",
                pos / dim
            )));
        }
        Ok(Self {
            coords,
            dim,
            truth: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Cloud("rows have unequal lengths".into()));
        }
        Self::new(rows.concat(), dim)
    }

    pub fn with_truth(mut self, truth: Vec<Truth>) -> Result<Self> {
        if truth.len() != self.len() {
            return Err(Error::Cloud(format!(
                "{} truth labels for {} points",
                truth.len(),
                self.len()
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn truth(&self) -> Option<&[Truth]> {
        self.truth.as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Truth outlier flags, if truth is present.
    pub fn truth_outliers(&self) -> Option<Vec<bool>> {
        self.truth
            .as_ref()
            .map(|t| t.iter().map(|l| l.is_outlier()).collect())
    }

    /// Sub-cloud made of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> PointCloud {
        let mut coords = Vec::with_capacity(rows.len() * self.dim);
        for &i in rows {
            coords.extend_from_slice(self.point(i));
        }
        PointCloud {
            coords,
            dim: self.dim,
            truth: self
                .truth
                .as_ref()
                .map(|t| rows.iter().map(|&i| t[i]).collect()),
        }
    }

    /// Appends the rows of `other`; both clouds must carry truth or neither.
    pub fn concat(&self, other: &PointCloud) -> Result<PointCloud> {
        if other.dim != self.dim {
            return Err(Error::Cloud("dimension mismatch in concat".into()));
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        let truth = match (&self.truth, &other.truth) {
            (Some(a), Some(b)) => Some([a.as_slice(), b.as_slice()].concat()),
            (None, None) => None,
            _ => return Err(Error::Cloud("truth present on only one side".into())),
        };
        Ok(PointCloud {
            coords,
            dim: self.dim,
            truth,
        })
    }
}

/// Euclidean distance between two equal-length slices.
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Profile `φ` applied to a dimensionless ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `1{|s| < 1}`
    Simple,
    /// `exp(-s²)`
    #[default]
    Heat,
}

impl Kernel {
    pub fn eval(self, s: f64) -> f64 {
        match self {
            Kernel::Simple => {
                if s.abs() < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Heat => (-s * s).exp(),
        }
    }
}

/// A length scale that may be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scale {
    Finite(f64),
    /// No diameter cutoff; locality comes from the neighbor restriction alone.
    Infinite,
}

impl Scale {
    pub fn finite(self) -> Option<f64> {
        match self {
            Scale::Finite(v) => Some(v),
            Scale::Infinite => None,
        }
    }
}

/// How to pick the number of eigenvalues close to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KRule {
    /// Count eigenvalues above `1 - N^{-2}/rho`.
    Threshold,
    /// Largest gap among the leading eigenvalues.
    Gap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterCount {
    Fixed(usize),
    Auto(KRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum KmeansInit {
    #[default]
    PlusPlus,
    /// Greedy choice of rows with the smallest maximal cosine to the chosen centers.
    NearOrthogonal,
}

/// Every tunable of the higher-order pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoscParams {
    /// Approximation dimension.
    pub d: usize,
    /// Affinity order (tuple size).
    pub m: usize,
    /// Number of nearest neighbors each anchor draws tuples from.
    pub ell: usize,
    pub epsilon: Scale,
    /// Flatness scale.
    pub eta: f64,
    pub k: ClusterCount,
    pub kernel: Kernel,
    pub rho: f64,
    pub seed: u64,
    pub restarts: usize,
    pub init: KmeansInit,
    /// Degree-based outlier removal applied before normalization.
    pub outliers: Option<OutlierRule>,
}

impl HoscParams {
    /// Settings of the practical variant: heat kernel, no diameter cutoff.
    pub fn practical(d: usize, k: usize, eta: f64) -> Self {
        Self {
            d,
            m: d + 2,
            ell: 10,
            epsilon: Scale::Infinite,
            eta,
            k: ClusterCount::Fixed(k),
            kernel: Kernel::Heat,
            rho: 2.0,
            seed: 0,
            restarts: 10,
            init: KmeansInit::PlusPlus,
            outliers: None,
        }
    }
}

/// Checks `params` against itself and against `cloud`.
pub fn validate(params: &HoscParams, cloud: &PointCloud) -> Result<HoscParams> {
    let n = cloud.len();
    let big_d = cloud.dim();
    let fail = |msg: String| Err(Error::InvalidParams(msg));
    if params.d < 1 || params.d + 1 > big_d {
        return fail(format!(
            "1 ≤ d ≤ D−1 violated (d={}, D={big_d})",
            params.d
        ));
    }
    if params.m < params.d + 2 {
        return fail(format!(
            "m ≥ d+2 violated (m={}, d={})",
            params.m, params.d
        ));
    }
    if params.ell + 1 < params.m {
        return fail(format!(
            "ℓ ≥ m−1 violated (ℓ={}, m={})",
            params.ell, params.m
        ));
    }
    if params.ell + 1 > n {
        return fail(format!("ℓ ≤ N−1 violated (ℓ={}, N={n})", params.ell));
    }
    if let ClusterCount::Fixed(k) = params.k {
        if k == 0 || k > n {
            return fail(format!("1 ≤ K ≤ N violated (K={k}, N={n})"));
        }
    }
    if !(params.eta > 0.0) || !params.eta.is_finite() {
        return fail(format!("η > 0 violated (η={})", params.eta));
    }
    if let Scale::Finite(eps) = params.epsilon {
        if !(eps > 0.0) {
            return fail(format!("ε > 0 violated (ε={eps})"));
        }
    }
    if !(params.rho > 1.0) {
        return fail(format!("ρ > 1 violated (ρ={})", params.rho));
    }
    if params.restarts == 0 {
        return fail("restarts ≥ 1 violated".into());
    }
    Ok(params.clone())
}

/// `max(2, log log N)`.
pub fn default_rho(n: usize) -> f64 {
    let n = n.max(3) as f64;
    n.ln().ln().max(2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryDefaults {
    pub m: usize,
    pub epsilon: f64,
    pub eta: f64,
}

/// Order, locality and flatness scales prescribed by the consistency theory
/// for `n` points near `d`-dimensional surfaces in `R^D` with jitter `tau`.
pub fn theory_defaults(n: usize, d: usize, big_d: usize, tau: f64, rho: f64) -> Result<TheoryDefaults> {
    if !(rho > 1.0) {
        return Err(Error::Domain(format!("ρ must exceed 1, got {rho}")));
    }
    if n < 3 {
        return Err(Error::Domain(format!("need N ≥ 3, got {n}")));
    }
    if d < 1 || d >= big_d {
        return Err(Error::Domain(format!("need 1 ≤ d ≤ D−1, got d={d}, D={big_d}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("jitter must be ≥ 0, got {tau}")));
    }
    let log_n = (n as f64).ln();
    let upper = (log_n.floor() as usize).max(d + 2);
    let m = ((log_n / rho.ln().sqrt()).floor() as usize).clamp(d + 2, upper);

    let base = rho * rho * log_n / n as f64;
    let eps_intrinsic = base.powf(1.0 / d as f64);
    let eps_ambient = tau.powf(1.0 - d as f64 / big_d as f64) * base.powf(1.0 / big_d as f64);
    let epsilon = eps_intrinsic.max(eps_ambient);
    let eta = epsilon.min(tau + rho * epsilon * epsilon);
    Ok(TheoryDefaults { m, epsilon, eta })
}

/// Output of a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Cluster index per point, outliers included (assigned to the nearest inlier's cluster).
    pub labels: Vec<usize>,
    pub outlier_mask: Vec<bool>,
    /// Leading eigenvalues of the normalized affinity, descending.
    pub eigenvalues: Vec<f64>,
    pub chosen_eta: Option<f64>,
    /// Degrees of the affinity graph built on the full input.
    pub degrees: Vec<f64>,
    pub k: usize,
    /// Within-cluster sum of squares of the row-normalized embedding.
    pub embedding_spread: f64,
}
