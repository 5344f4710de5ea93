//! Benchmark sweeps over named datasets, replications and both algorithms.
//!
//! Each cell draws its data and k-means seeds from the master seed and its
//! coordinates alone, so running cells in parallel cannot change results.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{misclassification_rate, outlier_tpr};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::graph::PairScale;
use crate::model::{HoscParams, Kernel, PointCloud};
use crate::outliers::{argmax_first, degree_gap_score, detect_quantile, select_eta_outliers};
use crate::spectral::{HoscRunner, ScParams, ScRunner, select_eta};
use crate::util::logspace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        logspace(self.lo, self.hi, self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grids {
    pub eta: GridSpec,
    pub epsilon: GridSpec,
    pub local_ell: Vec<usize>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            eta: GridSpec { lo: 0.001, hi: 0.1, n: 20 },
            epsilon: GridSpec { lo: 0.001, hi: 0.25, n: 20 },
            local_ell: (5..=15).collect(),
        }
    }
}

impl Grids {
    pub fn pair_scales(&self) -> (Vec<PairScale>, Vec<PairScale>) {
        (
            self.epsilon.values().into_iter().map(PairScale::Fixed).collect(),
            self.local_ell.iter().map(|&l| PairScale::Local(l)).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoscSettings {
    pub ell: usize,
    pub kernel: Kernel,
    /// Tuple size; `d + 2` when absent.
    pub m: Option<usize>,
}

impl Default for HoscSettings {
    fn default() -> Self {
        Self {
            ell: 10,
            kernel: Kernel::Heat,
            m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// When set, background points are added and only the outlier TPR is scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier_fraction: Option<f64>,
}

impl DatasetEntry {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_name(&self.name, self.delta, self.tau)
    }

    pub fn label(&self) -> String {
        let mut s = self.name.clone();
        let mut extra = Vec::new();
        if let Some(d) = self.delta {
            extra.push(format!("delta={d}"));
        }
        if let Some(t) = self.tau {
            extra.push(format!("tau={t}"));
        }
        if let Some(f) = self.outlier_fraction {
            extra.push(format!("outliers={f}"));
        }
        if !extra.is_empty() {
            s.push_str(&format!("({})", extra.join(",")));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Hosc,
    Sc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    pub replications: usize,
    pub datasets: Vec<DatasetEntry>,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub hosc: HoscSettings,
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.datasets.is_empty() || self.algorithms.is_empty() {
            return bad("need at least one dataset and one algorithm".into());
        }
        for e in &self.datasets {
            e.dataset()?;
            if let Some(f) = e.outlier_fraction {
                if !(f > 0.0 && f < 1.0) {
                    return bad(format!("outlier_fraction must lie in (0,1), got {f}"));
                }
            }
        }
        let g = &self.grids;
        for spec in [g.eta, g.epsilon] {
            if !(spec.lo > 0.0 && spec.hi >= spec.lo && spec.n >= 1) {
                return bad(format!("invalid grid {spec:?}"));
            }
        }
        if g.local_ell.is_empty() || g.local_ell.contains(&0) {
            return bad("local_ell must list positive neighbor counts".into());
        }
        Ok(())
    }
}

/// Scale choices reported per cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Chosen {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_ell: Option<usize>,
}

impl Chosen {
    fn from_scale(s: PairScale) -> Self {
        match s {
            PairScale::Fixed(e) => Self {
                epsilon: Some(e),
                ..Self::default()
            },
            PairScale::Local(l) => Self {
                local_ell: Some(l),
                ..Self::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub replication: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misclassification_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_tpr: Option<f64>,
    pub chosen: Chosen,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub replications: usize,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misclassification_rate: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_tpr: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema: u32,
    pub seed: u64,
    pub replications: usize,
    pub records: Vec<CellRecord>,
    pub summary: Vec<SummaryRow>,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BenchOptions {
    /// Record per-cell wall time; makes the report nondeterministic.
    pub timings: bool,
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed derived from a parent seed and a sequence of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |s, &i| mix(s ^ mix(i.wrapping_add(1))))
}

/// Heat-kernel settings for a dataset with known intrinsic dimension and cluster count.
pub fn hosc_params_for(dataset: &Dataset, settings: &HoscSettings, seed: u64) -> HoscParams {
    let d = dataset.intrinsic_dim();
    let mut p = HoscParams::practical(d, dataset.clusters(), 0.01);
    p.m = settings.m.unwrap_or(d + 2);
    p.ell = settings.ell;
    p.kernel = settings.kernel;
    p.seed = seed;
    p
}

/// Clustering error of the higher-order method with `η` chosen by embedding tightness.
pub fn hosc_rate(cloud: &PointCloud, params: &HoscParams, eta_grid: &[f64]) -> Result<(f64, f64)> {
    let (eta, result) = select_eta(cloud, params, eta_grid)?;
    Ok((misclassification_rate(&result.labels, truth(cloud)?)?, eta))
}

/// Lowest clustering error of the pairwise method over all given scales.
pub fn sc_best_rate(cloud: &PointCloud, k: usize, seed: u64, scales: &[PairScale]) -> Result<(f64, PairScale)> {
    let mut params = ScParams::new(k);
    params.seed = seed;
    let runner = ScRunner::new(cloud, &params)?;
    let truth = truth(cloud)?;
    let mut best: Option<(f64, PairScale)> = None;
    let mut last_err = None;
    for &s in scales {
        match runner.run(s).and_then(|r| misclassification_rate(&r.labels, truth)) {
            Ok(rate) if best.is_none_or(|b| rate < b.0) => best = Some((rate, s)),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::InvalidParams("empty scale grid".into())))
}

/// Outlier TPR of the higher-order degrees when the known outlier share is flagged.
pub fn hosc_tpr(cloud: &PointCloud, params: &HoscParams, eta_grid: &[f64], fraction: f64) -> Result<(f64, f64)> {
    let (eta, _) = select_eta_outliers(cloud, params, eta_grid, fraction)?;
    let degrees = HoscRunner::new(cloud, params)?.degrees(eta);
    let mask = detect_quantile(&degrees, params.m, fraction)?.mask;
    Ok((outlier_tpr(&mask, &truth_mask(cloud)?)?, eta))
}

/// Pairwise-degree outlier TPR. Within each scale family the scale with the
/// widest inlier/outlier degree gap is used; the better family is reported.
pub fn sc_tpr(cloud: &PointCloud, families: &[Vec<PairScale>], fraction: f64) -> Result<(f64, PairScale)> {
    let runner = ScRunner::new(cloud, &ScParams::new(1))?;
    let truth = truth_mask(cloud)?;
    let mut best: Option<(f64, PairScale)> = None;
    for family in families.iter().filter(|f| !f.is_empty()) {
        let mut masks = Vec::with_capacity(family.len());
        let mut scores = Vec::with_capacity(family.len());
        for &s in family {
            let degrees = runner.degrees(s);
            let mask = detect_quantile(&degrees, 2, fraction)?.mask;
            scores.push(degree_gap_score(&degrees, &mask));
            masks.push(mask);
        }
        let i = argmax_first(&scores);
        let tpr = outlier_tpr(&masks[i], &truth)?;
        if best.is_none_or(|b| tpr > b.0) {
            best = Some((tpr, family[i]));
        }
    }
    best.ok_or_else(|| Error::InvalidParams("empty scale grid".into()))
}

fn truth(cloud: &PointCloud) -> Result<&[crate::model::Truth]> {
    cloud
        .truth()
        .ok_or_else(|| Error::InvalidParams("scoring needs truth labels".into()))
}

fn truth_mask(cloud: &PointCloud) -> Result<Vec<bool>> {
    cloud
        .truth_outliers()
        .ok_or_else(|| Error::InvalidParams("scoring needs truth labels".into()))
}

struct Cell {
    dataset: usize,
    algorithm: Algorithm,
    replication: usize,
}

/// Data for one replication. Outlier datasets keep the inliers fixed and
/// redraw only the background points.
pub fn replication_cloud(cfg: &BenchConfig, dataset: usize, replication: usize) -> Result<(PointCloud, u64)> {
    let entry = &cfg.datasets[dataset];
    let ds = entry.dataset()?;
    let rep_seed = derive_seed(cfg.seed, &[dataset as u64, replication as u64]);
    let cloud = match entry.outlier_fraction {
        Some(f) => ds.generate_with_outliers(derive_seed(cfg.seed, &[dataset as u64]), f, rep_seed)?,
        None => ds.generate(rep_seed)?,
    };
    Ok((cloud, rep_seed))
}

fn run_cell(cfg: &BenchConfig, cell: &Cell) -> CellRecord {
    let entry = &cfg.datasets[cell.dataset];
    let start = Instant::now();
    let mut record = CellRecord {
        dataset: entry.label(),
        algorithm: cell.algorithm,
        replication: cell.replication,
        seed: 0,
        misclassification_rate: None,
        outlier_tpr: None,
        chosen: Chosen::default(),
        error: None,
        wall_seconds: None,
    };
    let outcome = (|| -> Result<()> {
        let ds = entry.dataset()?;
        let (cloud, seed) = replication_cloud(cfg, cell.dataset, cell.replication)?;
        record.seed = seed;
        let algo_seed = derive_seed(seed, &[cell.algorithm as u64]);
        let eta_grid = cfg.grids.eta.values();
        let (fixed, local) = cfg.grids.pair_scales();
        match (cell.algorithm, entry.outlier_fraction) {
            (Algorithm::Hosc, None) => {
                let (rate, eta) = hosc_rate(&cloud, &hosc_params_for(&ds, &cfg.hosc, algo_seed), &eta_grid)?;
                record.misclassification_rate = Some(rate);
                record.chosen.eta = Some(eta);
            }
            (Algorithm::Hosc, Some(f)) => {
                let (tpr, eta) = hosc_tpr(&cloud, &hosc_params_for(&ds, &cfg.hosc, algo_seed), &eta_grid, f)?;
                record.outlier_tpr = Some(tpr);
                record.chosen.eta = Some(eta);
            }
            (Algorithm::Sc, None) => {
                let scales: Vec<PairScale> = fixed.into_iter().chain(local).collect();
                let (rate, s) = sc_best_rate(&cloud, ds.clusters(), algo_seed, &scales)?;
                record.misclassification_rate = Some(rate);
                record.chosen = Chosen::from_scale(s);
            }
            (Algorithm::Sc, Some(f)) => {
                let (tpr, s) = sc_tpr(&cloud, &[fixed, local], f)?;
                record.outlier_tpr = Some(tpr);
                record.chosen = Chosen::from_scale(s);
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        record.error = Some(e.to_string());
    }
    record.wall_seconds = Some(start.elapsed().as_secs_f64());
    record
}

fn summarize(cfg: &BenchConfig, records: &[CellRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for entry in &cfg.datasets {
        let label = entry.label();
        for &algorithm in &cfg.algorithms {
            let cell: Vec<&CellRecord> = records
                .iter()
                .filter(|r| r.dataset == label && r.algorithm == algorithm)
                .collect();
            if cell.is_empty() || rows.iter().any(|r: &SummaryRow| r.dataset == label && r.algorithm == algorithm) {
                continue;
            }
            let rates: Vec<f64> = cell.iter().filter_map(|r| r.misclassification_rate).collect();
            let tprs: Vec<f64> = cell.iter().filter_map(|r| r.outlier_tpr).collect();
            rows.push(SummaryRow {
                dataset: label.clone(),
                algorithm,
                replications: cell.len(),
                failures: cell.iter().filter(|r| r.error.is_some()).count(),
                misclassification_rate: Stat::of(&rates),
                outlier_tpr: Stat::of(&tprs),
            });
        }
    }
    rows
}

pub fn run_benchmark(cfg: &BenchConfig, opts: BenchOptions) -> Result<BenchmarkReport> {
    cfg.check()?;
    let mut cells = Vec::new();
    for dataset in 0..cfg.datasets.len() {
        for &algorithm in &cfg.algorithms {
            for replication in 0..cfg.replications {
                cells.push(Cell {
                    dataset,
                    algorithm,
                    replication,
                });
            }
        }
    }
    let mut records: Vec<CellRecord> = cells.par_iter().map(|c| run_cell(cfg, c)).collect();
    if !opts.timings {
        records.iter_mut().for_each(|r| r.wall_seconds = None);
    }
    let summary = summarize(cfg, &records);
    Ok(BenchmarkReport {
        schema: 1,
        seed: cfg.seed,
        replications: cfg.replications,
        records,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchConfig {
        BenchConfig::from_json(
            r#"{"seed": 7, "replications": 1,
                "datasets": [{"name": "two_lines", "delta": 0.025}],
                "algorithms": ["hosc"],
                "grids": {"eta": {"lo": 0.01, "hi": 0.1, "n": 3}}}"#,
        )
        .unwrap()
    }

    #[test]
    fn single_cell_report() {
        let r = run_benchmark(&tiny(), BenchOptions::default()).unwrap();
        assert_eq!(r.schema, 1);
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.summary.len(), 1);
        let rec = &r.records[0];
        assert!(rec.error.is_none(), "{:?}", rec.error);
        let rate = rec.misclassification_rate.unwrap();
        assert!((0.0..=1.0).contains(&rate));
        assert!(rec.wall_seconds.is_none());
        assert!(!r.to_json().unwrap().contains("wall_seconds"));
    }

    #[test]
    fn reproducible_json() {
        let a = run_benchmark(&tiny(), BenchOptions::default()).unwrap().to_json().unwrap();
        let b = run_benchmark(&tiny(), BenchOptions::default()).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failures_are_recorded() {
        let mut cfg = tiny();
        cfg.hosc.ell = 500;
        let r = run_benchmark(&cfg, BenchOptions::default()).unwrap();
        assert!(r.records[0].error.is_some());
        assert_eq!(r.summary[0].failures, 1);
    }

    #[test]
    fn bad_configs() {
        assert!(BenchConfig::from_json(r#"{"seed":1,"replications":0,"datasets":[{"name":"two_moons"}],"algorithms":["sc"]}"#).is_err());
        assert!(BenchConfig::from_json(r#"{"seed":1,"replications":1,"datasets":[{"name":"nope"}],"algorithms":["sc"]}"#).is_err());
        assert!(BenchConfig::from_json(r#"{"seed":1,"replications":1,"datasets":[],"algorithms":["sc"]}"#).is_err());
    }

    #[test]
    fn seeds_differ_per_index() {
        assert_ne!(derive_seed(1, &[0, 0]), derive_seed(1, &[0, 1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(5, &[2]), derive_seed(5, &[2]));
    }
}
