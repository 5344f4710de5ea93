//! Normalized spectral embedding, k-means, and the clustering pipelines built
//! on top of the affinity graphs.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_knn, build_sc_affinity, AffinityGraph, KdTree, NeighborIndex, PairScale, TupleTable};
use crate::model::{dist_sq, validate, ClusterCount, ClusterResult, HoscParams, KRule, Kernel, KmeansInit, PointCloud};
use crate::outliers::{detect_o1, detect_o2, detect_quantile, OutlierRule};

/// Default size above which the iterative eigensolver is used.
pub const DENSE_MAX: usize = 4096;
/// Largest size at which a failed iterative solve may fall back to dense.
const DENSE_FALLBACK_MAX: usize = 12_000;
const LANCZOS_TOL: f64 = 1e-11;
const ZERO_ROW: f64 = 1e-12;

/// Symmetric sparse matrix in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    /// From a square matrix; only nonzero entries are kept. Symmetry is the
    /// caller's responsibility.
    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let n = a.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in a {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(p) => self.vals[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|p| self.vals[p] * x[self.cols[p]])
                    .sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[p])] = self.vals[p];
            }
        }
        m
    }
}

/// `Z_ij = W_ij / sqrt(D_i D_j)`; rows and columns of isolated nodes stay zero.
pub fn normalize(graph: &AffinityGraph) -> SparseSym {
    let n = graph.n();
    let inv: Vec<f64> = graph
        .degrees()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(graph.nnz());
    let mut vals = Vec::with_capacity(graph.nnz());
    row_ptr.push(0);
    for i in 0..n {
        for (j, w) in graph.row(i) {
            let z = w * inv[i] * inv[j];
            if z != 0.0 {
                cols.push(j);
                vals.push(z);
            }
        }
        row_ptr.push(cols.len());
    }
    SparseSym { n, row_ptr, cols, vals }
}

/// Leading eigenpairs: eigenvalues descending, eigenvectors as the columns of an `N × k` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Matrices up to this size use the dense solver.
    pub dense_max: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { dense_max: DENSE_MAX }
    }
}

/// Flips each column so that its largest-magnitude entry (first one on ties) is positive.
fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0;
        for i in 0..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col.len() > 0 && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

pub fn top_eigs(z: &SparseSym, k: usize, opts: EigenOptions) -> Result<Eigenpairs> {
    let n = z.n();
    if k > n {
        return Err(Error::InvalidParams(format!("asked for {k} eigenpairs of a {n}×{n} matrix")));
    }
    let mut out = if n <= opts.dense_max {
        dense_top(z, k)
    } else {
        match lanczos_top(z, k) {
            Ok(p) => p,
            Err(_) if n <= DENSE_FALLBACK_MAX => dense_top(z, k),
            Err(e) => return Err(e),
        }
    };
    fix_signs(&mut out.vectors);
    Ok(out)
}

fn dense_top(z: &SparseSym, k: usize) -> Eigenpairs {
    let eig = SymmetricEigen::new(z.to_dense());
    let mut order: Vec<usize> = (0..z.n()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(k);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(z.n(), k, |r, c| eig.eigenvectors[(r, order[c])]);
    Eigenpairs { values, vectors }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn orthogonalize(w: &mut [f64], against: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in against {
            let c = dot(w, q);
            axpy(w, -c, q);
        }
    }
}

/// Lanczos with full reorthogonalization; converged leading Ritz pairs are
/// locked and later runs start orthogonal to them, which recovers repeated
/// eigenvalues.
fn lanczos_top(a: &SparseSym, k: usize) -> Result<Eigenpairs> {
    let n = a.n();
    let cap = (3 * k + 40).clamp(50, 300);
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2b_3c4d);
    let mut locked: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut start: Option<Vec<f64>> = None;
    let max_runs = 40 * k + 40;
    for _ in 0..max_runs {
        let locked_vecs: Vec<Vec<f64>> = locked.iter().map(|(_, v)| v.clone()).collect();
        let room = n - locked.len();
        if room == 0 {
            break;
        }
        let mut q = start.take().unwrap_or_else(|| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        orthogonalize(&mut q, &locked_vecs);
        let mut norm = dot(&q, &q).sqrt();
        if norm < 1e-8 {
            q = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            orthogonalize(&mut q, &locked_vecs);
            norm = dot(&q, &q).sqrt();
        }
        q.iter_mut().for_each(|x| *x /= norm);

        let steps = cap.min(room);
        let mut basis: Vec<Vec<f64>> = vec![q];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut last_beta = 0.0;
        for j in 0..steps {
            let mut w = a.matvec(&basis[j]);
            let aj = dot(&w, &basis[j]);
            alpha.push(aj);
            orthogonalize(&mut w, &basis);
            orthogonalize(&mut w, &locked_vecs);
            let bj = dot(&w, &w).sqrt();
            last_beta = bj;
            if bj < 1e-12 || j + 1 == steps {
                break;
            }
            beta.push(bj);
            w.iter_mut().for_each(|x| *x /= bj);
            basis.push(w);
        }
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c {
                beta[r]
            } else if c + 1 == r {
                beta[c]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
        let kth_locked = {
            let mut vals: Vec<f64> = locked.iter().map(|(v, _)| *v).collect();
            vals.sort_by(|x, y| y.total_cmp(x));
            vals.get(k.saturating_sub(1)).copied()
        };
        let mut newly = 0;
        let mut top_converged = None;
        for (rank, &c) in order.iter().enumerate() {
            let theta = eig.eigenvalues[c];
            let s = eig.eigenvectors.column(c);
            let bound = (last_beta * s[m - 1]).abs();
            let mut y = vec![0.0; n];
            for (i, qi) in basis.iter().enumerate().take(m) {
                axpy(&mut y, s[i], qi);
            }
            if bound > LANCZOS_TOL {
                if rank == 0 {
                    top_converged = Some(false);
                }
                start = Some(y);
                break;
            }
            let ny = dot(&y, &y).sqrt();
            y.iter_mut().for_each(|x| *x /= ny);
            if rank == 0 {
                top_converged = Some(true);
                if let Some(kth) = kth_locked {
                    if theta <= kth + LANCZOS_TOL {
                        return finish(locked, k);
                    }
                }
            }
            locked.push((theta, y));
            newly += 1;
            if locked.len() >= k + 2 {
                break;
            }
        }
        if newly == 0 && top_converged != Some(false) && start.is_none() {
            break;
        }
        if locked.len() == n {
            return finish(locked, k);
        }
    }
    if locked.len() >= k && locked.len() == n {
        return finish(locked, k);
    }
    Err(Error::Eigen(format!(
        "Lanczos did not converge to {k} eigenpairs (locked {})",
        locked.len()
    )))
}

fn finish(mut locked: Vec<(f64, Vec<f64>)>, k: usize) -> Result<Eigenpairs> {
    if locked.len() < k {
        return Err(Error::Eigen(format!("only {} of {k} eigenpairs converged", locked.len())));
    }
    locked.sort_by(|a, b| b.0.total_cmp(&a.0));
    locked.truncate(k);
    let n = locked[0].1.len();
    let values = locked.iter().map(|(v, _)| *v).collect();
    let vectors = DMatrix::from_fn(n, k, |r, c| locked[c].1[r]);
    Ok(Eigenpairs { values, vectors })
}

/// Rows of `u` scaled to unit norm; numerically zero rows stay zero.
pub fn row_normalize(u: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..u.nrows())
        .map(|i| {
            let row: Vec<f64> = u.row(i).iter().copied().collect();
            let norm = dot(&row, &row).sqrt();
            if norm <= ZERO_ROW {
                vec![0.0; row.len()]
            } else {
                row.iter().map(|x| x / norm).collect()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = dist_sq(x, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn init_plus_plus(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centers = vec![rows[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| dist_sq(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // never land on a zero-weight row through rounding
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(dist_sq(r, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        dot(a, b) / (na * nb)
    }
}

fn init_near_orthogonal(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut worst: Vec<f64> = rows.iter().map(|r| cosine(r, &rows[chosen[0]]).abs()).collect();
    while chosen.len() < k {
        let mut pick = None;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            match pick {
                None => pick = Some(i),
                Some(p) if worst[i] < worst[p] => pick = Some(i),
                _ => {}
            }
        }
        let p = pick.expect("k ≤ n");
        chosen.push(p);
        for (i, r) in rows.iter().enumerate() {
            worst[i] = worst[i].max(cosine(r, &rows[p]).abs());
        }
    }
    chosen.into_iter().map(|i| rows[i].clone()).collect()
}

fn lloyd(rows: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KmeansResult {
    let k = centers.len();
    let dim = rows[0].len();
    let mut labels = vec![0usize; rows.len()];
    for _ in 0..300 {
        let assign: Vec<(usize, f64)> = rows.par_iter().map(|r| nearest(r, &centers)).collect();
        for (l, a) in labels.iter_mut().zip(&assign) {
            *l = a.0;
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        // repair empty clusters with the worst-fit point of a multi-point cluster
        let mut dists: Vec<f64> = assign.iter().map(|a| a.1).collect();
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far: Option<usize> = None;
            for i in 0..rows.len() {
                if counts[labels[i]] > 1 && far.is_none_or(|f| dists[i] > dists[f]) {
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                labels[i] = c;
                counts[c] = 1;
                dists[i] = 0.0;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (r, &l) in rows.iter().zip(&labels) {
            axpy(&mut sums[l], 1.0, r);
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(dist_sq(&next, &centers[c]).sqrt());
            centers[c] = next;
        }
        if shift < 1e-9 {
            break;
        }
    }
    let labels: Vec<usize> = rows.iter().map(|r| nearest(r, &centers).0).collect();
    let labels = if labels.iter().collect::<std::collections::BTreeSet<_>>().len() < k.min(rows.len()) {
        // keep the repaired assignment when the final pass would empty a cluster
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        relabel_nonempty(rows, &centers, labels, counts)
    } else {
        labels
    };
    let inertia = within_ss(rows, &labels, k);
    KmeansResult { labels, inertia }
}

fn relabel_nonempty(rows: &[Vec<f64>], centers: &[Vec<f64>], mut labels: Vec<usize>, mut counts: Vec<usize>) -> Vec<usize> {
    for c in 0..centers.len() {
        if counts[c] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, r) in rows.iter().enumerate() {
            if counts[labels[i]] > 1 {
                let d = dist_sq(r, &centers[labels[i]]);
                if far.is_none_or(|f| d > f.1) {
                    far = Some((i, d));
                }
            }
        }
        if let Some((i, _)) = far {
            counts[labels[i]] -= 1;
            labels[i] = c;
            counts[c] = 1;
        }
    }
    labels
}

/// `Σ_k Σ_{i∈k} ‖x_i − mean_k‖²`.
pub fn within_ss(rows: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let dim = rows[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (r, &l) in rows.iter().zip(labels) {
        axpy(&mut sums[l], 1.0, r);
        counts[l] += 1;
    }
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|x| x / c.max(1) as f64).collect())
        .collect();
    rows.iter().zip(labels).map(|(r, &l)| dist_sq(r, &means[l])).sum()
}

/// Best-inertia k-means over `restarts` seeded runs.
pub fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64, restarts: usize, init: KmeansInit) -> Result<KmeansResult> {
    if rows.is_empty() || k == 0 || k > rows.len() {
        return Err(Error::InvalidParams(format!("k-means needs 1 ≤ K ≤ N, got K={k}, N={}", rows.len())));
    }
    if restarts == 0 {
        return Err(Error::InvalidParams("restarts ≥ 1 violated".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KmeansResult> = None;
    for _ in 0..restarts {
        let centers = match init {
            KmeansInit::PlusPlus => init_plus_plus(rows, k, &mut rng),
            KmeansInit::NearOrthogonal => init_near_orthogonal(rows, k, &mut rng),
        };
        let run = lloyd(rows, centers);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Number of clusters read off the leading eigenvalues; at least one.
pub fn estimate_k(eigenvalues: &[f64], n: usize, rho: f64, rule: KRule) -> usize {
    match rule {
        KRule::Threshold => {
            let cut = 1.0 - 1.0 / ((n as f64).powi(2) * rho);
            eigenvalues.iter().filter(|&&l| l > cut).count().max(1)
        }
        KRule::Gap => {
            let top = eigenvalues.len().min(10).min(n.saturating_sub(1));
            let mut best = (1, f64::NEG_INFINITY);
            for i in 0..top.saturating_sub(1) {
                let g = eigenvalues[i] - eigenvalues[i + 1];
                if g > best.1 {
                    best = (i + 1, g);
                }
            }
            best.0
        }
    }
}

/// Settings of the spectral step shared by both pipelines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSettings {
    pub k: ClusterCount,
    pub rho: f64,
    pub seed: u64,
    pub restarts: usize,
    pub init: KmeansInit,
    pub eigen: EigenOptions,
}

impl SpectralSettings {
    fn from_params(p: &HoscParams) -> Self {
        Self {
            k: p.k,
            rho: p.rho,
            seed: p.seed,
            restarts: p.restarts,
            init: p.init,
            eigen: EigenOptions::default(),
        }
    }
}

/// Embeds a graph, chooses K if needed and runs k-means.
/// Returns `(labels, eigenvalues, k, spread)` with `None` labels for
/// isolated nodes and zero embedding rows.
fn spectral_labels(graph: &AffinityGraph, s: &SpectralSettings) -> Result<(Vec<Option<usize>>, Vec<f64>, usize, f64)> {
    let active: Vec<usize> = (0..graph.n()).filter(|&i| graph.degrees()[i] > 0.0).collect();
    let na = active.len();
    if na == 0 {
        return Err(Error::InvalidParams("affinity graph has no edges".into()));
    }
    let sub = graph.subgraph(&active);
    let z = normalize(&sub);
    let wanted = match s.k {
        ClusterCount::Fixed(k) => {
            if k > na {
                return Err(Error::InvalidParams(format!(
                    "K={k} exceeds the {na} non-isolated points"
                )));
            }
            k.max(10.min(na))
        }
        ClusterCount::Auto(_) => 20.min(na),
    };
    let eig = top_eigs(&z, wanted, s.eigen)?;
    let k = match s.k {
        ClusterCount::Fixed(k) => k,
        ClusterCount::Auto(rule) => estimate_k(&eig.values, na, s.rho, rule).min(na),
    };
    let u = eig.vectors.columns(0, k).into_owned();
    let v = row_normalize(&u);
    let keep: Vec<usize> = (0..na).filter(|&i| v[i].iter().any(|&x| x != 0.0)).collect();
    if keep.len() < k {
        return Err(Error::InvalidParams(format!("K={k} exceeds the {} usable embedding rows", keep.len())));
    }
    let rows: Vec<Vec<f64>> = keep.iter().map(|&i| v[i].clone()).collect();
    let km = kmeans(&rows, k, s.seed, s.restarts, s.init)?;
    let mut labels = vec![None; graph.n()];
    for (r, &i) in keep.iter().enumerate() {
        labels[active[i]] = Some(km.labels[r]);
    }
    Ok((labels, eig.values, k, km.inertia))
}

/// Fills `None` labels with the label of the nearest labeled point.
fn fill_by_nearest(cloud: &PointCloud, labels: Vec<Option<usize>>) -> Vec<usize> {
    let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    if labeled.len() == labels.len() {
        return labels.into_iter().map(|l| l.expect("labeled")).collect();
    }
    let sub = cloud.select(&labeled);
    let tree = KdTree::new(&sub);
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            Some(l) => *l,
            None => {
                let (_, j) = tree.knn(cloud.point(i), 1, None)[0];
                labels[labeled[j]].expect("labeled")
            }
        })
        .collect()
}

/// Cached tuple fits for one cloud and parameter set; reruns at other
/// flatness scales only redo the cheap parts.
pub struct HoscRunner<'a> {
    cloud: &'a PointCloud,
    params: HoscParams,
    table: TupleTable,
}

impl<'a> HoscRunner<'a> {
    pub fn new(cloud: &'a PointCloud, params: &HoscParams) -> Result<Self> {
        let params = validate(params, cloud)?;
        let index = build_knn(cloud, params.ell);
        let table = TupleTable::new(cloud, index.lists(), params.d, params.m);
        Ok(Self { cloud, params, table })
    }

    pub fn params(&self) -> &HoscParams {
        &self.params
    }

    pub fn degrees(&self, eta: f64) -> Vec<f64> {
        self.table.degrees_for(self.params.epsilon, eta, self.params.kernel)
    }

    pub fn outlier_mask(&self, degrees: &[f64], eta: f64) -> Result<Vec<bool>> {
        let p = &self.params;
        let n = self.cloud.len();
        Ok(match p.outliers {
            None => vec![false; n],
            Some(OutlierRule::O1) => detect_o1(degrees, p.m, p.rho)?.mask,
            Some(OutlierRule::O2) => detect_o2(degrees, p.m, p.rho, n, p.epsilon, eta, p.d, self.cloud.dim())?.mask,
            Some(OutlierRule::Quantile(f)) => detect_quantile(degrees, p.m, f)?.mask,
        })
    }

    pub fn run(&self, eta: f64) -> Result<ClusterResult> {
        let p = &self.params;
        let graph = self.table.graph(p.epsilon, eta, p.kernel);
        let degrees = graph.degrees().to_vec();
        let mask = self.outlier_mask(&degrees, eta)?;
        let settings = SpectralSettings::from_params(p);
        let (labels, eigenvalues, k, spread) = if mask.iter().any(|&o| o) {
            let survivors: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
            if survivors.len() < p.m {
                return Err(Error::InvalidParams("too few points survive outlier removal".into()));
            }
            let sub = self.cloud.select(&survivors);
            let index = build_knn(&sub, p.ell.min(sub.len() - 1));
            let sub_graph = TupleTable::new(&sub, index.lists(), p.d, p.m).graph(p.epsilon, eta, p.kernel);
            let (sub_labels, ev, k, spread) = spectral_labels(&sub_graph, &settings)?;
            let mut labels = vec![None; mask.len()];
            for (s, &i) in survivors.iter().enumerate() {
                labels[i] = sub_labels[s];
            }
            (labels, ev, k, spread)
        } else {
            spectral_labels(&graph, &settings)?
        };
        Ok(ClusterResult {
            labels: fill_by_nearest(self.cloud, labels),
            outlier_mask: mask,
            eigenvalues,
            chosen_eta: Some(eta),
            degrees,
            k,
            embedding_spread: spread,
        })
    }
}

pub fn cluster_hosc(cloud: &PointCloud, params: &HoscParams) -> Result<ClusterResult> {
    HoscRunner::new(cloud, params)?.run(params.eta)
}

/// Runs each flatness scale and keeps the one with the tightest clusters in
/// the embedding; ties go to the smaller scale.
pub fn select_eta(cloud: &PointCloud, params: &HoscParams, eta_grid: &[f64]) -> Result<(f64, ClusterResult)> {
    let runner = HoscRunner::new(cloud, params)?;
    let mut grid = eta_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    select_min_spread(grid.into_iter().map(|eta| (eta, runner.run(eta))))
}

fn select_min_spread<T>(runs: impl Iterator<Item = (T, Result<ClusterResult>)>) -> Result<(T, ClusterResult)> {
    let mut best: Option<(T, ClusterResult)> = None;
    let mut last_err = None;
    for (key, run) in runs {
        match run {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.embedding_spread < b.1.embedding_spread) {
                    best = Some((key, r));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::InvalidParams("empty parameter grid".into())))
}

/// Settings of the pairwise baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScParams {
    pub kernel: Kernel,
    pub k: ClusterCount,
    /// Neighbors per point kept in the graph; `None` keeps all pairs.
    pub support: Option<usize>,
    pub rho: f64,
    pub seed: u64,
    pub restarts: usize,
    pub init: KmeansInit,
    /// Only the relative and quantile rules apply to pairwise degrees.
    pub outliers: Option<OutlierRule>,
}

impl ScParams {
    pub fn new(k: usize) -> Self {
        Self {
            kernel: Kernel::Heat,
            k: ClusterCount::Fixed(k),
            support: None,
            rho: 2.0,
            seed: 0,
            restarts: 10,
            init: KmeansInit::PlusPlus,
            outliers: None,
        }
    }
}

/// Pairwise graphs for one cloud, sharing the neighbor index across scales.
pub struct ScRunner<'a> {
    cloud: &'a PointCloud,
    params: ScParams,
    index: NeighborIndex,
}

impl<'a> ScRunner<'a> {
    pub fn new(cloud: &'a PointCloud, params: &ScParams) -> Result<Self> {
        if cloud.len() < 2 {
            return Err(Error::InvalidParams("need at least two points".into()));
        }
        if let ClusterCount::Fixed(k) = params.k {
            if k == 0 || k > cloud.len() {
                return Err(Error::InvalidParams(format!("1 ≤ K ≤ N violated (K={k}, N={})", cloud.len())));
            }
        }
        let support = params.support.unwrap_or(cloud.len() - 1);
        Ok(Self {
            cloud,
            params: *params,
            index: build_knn(cloud, support),
        })
    }

    pub fn graph(&self, scale: PairScale) -> AffinityGraph {
        build_sc_affinity(self.cloud, scale, self.params.kernel, &self.index)
    }

    /// Degrees without materializing the graph when every pair is kept.
    pub fn degrees(&self, scale: PairScale) -> Vec<f64> {
        let n = self.cloud.len();
        if self.index.k() + 1 != n {
            return self.graph(scale).degrees().to_vec();
        }
        let local: Option<Vec<f64>> = match scale {
            PairScale::Fixed(_) => None,
            PairScale::Local(ell) => {
                let pos = ell.clamp(1, n - 1) - 1;
                Some((0..n).map(|i| self.index.distances(i)[pos]).collect())
            }
        };
        let kernel = self.params.kernel;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut sum = 0.0;
                for (&j, &r) in self.index.neighbors(i).iter().zip(self.index.distances(i)) {
                    let eps = match (&local, scale) {
                        (Some(e), _) => (e[i] * e[j]).sqrt(),
                        (None, PairScale::Fixed(eps)) => eps,
                        _ => unreachable!(),
                    };
                    if eps > 0.0 && r > 0.0 {
                        sum += kernel.eval(r / eps);
                    }
                }
                sum
            })
            .collect()
    }

    pub fn run(&self, scale: PairScale) -> Result<ClusterResult> {
        let p = &self.params;
        let graph = self.graph(scale);
        let degrees = graph.degrees().to_vec();
        let mask = match p.outliers {
            None => vec![false; self.cloud.len()],
            Some(OutlierRule::O1) => detect_o1(&degrees, 2, p.rho)?.mask,
            Some(OutlierRule::Quantile(f)) => detect_quantile(&degrees, 2, f)?.mask,
            Some(OutlierRule::O2) => {
                return Err(Error::InvalidParams("the absolute degree rule needs multiway degrees".into()))
            }
        };
        let settings = SpectralSettings {
            k: p.k,
            rho: p.rho,
            seed: p.seed,
            restarts: p.restarts,
            init: p.init,
            eigen: EigenOptions::default(),
        };
        let survivors: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
        let (labels, eigenvalues, k, spread) = if survivors.len() < mask.len() {
            let sub = self.cloud.select(&survivors);
            let support = p.support.unwrap_or(sub.len() - 1).min(sub.len() - 1);
            let index = build_knn(&sub, support);
            let g = build_sc_affinity(&sub, scale, p.kernel, &index);
            let (sub_labels, ev, k, spread) = spectral_labels(&g, &settings)?;
            let mut labels = vec![None; mask.len()];
            for (s, &i) in survivors.iter().enumerate() {
                labels[i] = sub_labels[s];
            }
            (labels, ev, k, spread)
        } else {
            spectral_labels(&graph, &settings)?
        };
        Ok(ClusterResult {
            labels: fill_by_nearest(self.cloud, labels),
            outlier_mask: mask,
            eigenvalues,
            chosen_eta: None,
            degrees,
            k,
            embedding_spread: spread,
        })
    }
}

pub fn cluster_sc(cloud: &PointCloud, scale: PairScale, params: &ScParams) -> Result<ClusterResult> {
    ScRunner::new(cloud, params)?.run(scale)
}

/// The pairwise counterpart of [`select_eta`]: tightest embedding over the given scales.
pub fn select_sc_scale(cloud: &PointCloud, params: &ScParams, scales: &[PairScale]) -> Result<(PairScale, ClusterResult)> {
    let runner = ScRunner::new(cloud, params)?;
    select_min_spread(scales.iter().map(|&s| (s, runner.run(s))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(a: &[&[f64]]) -> SparseSym {
        SparseSym::from_dense(&a.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn graph(a: &[&[f64]]) -> AffinityGraph {
        AffinityGraph::from_dense(&a.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn normalize_edge() {
        let z = normalize(&graph(&[&[0.0, 1.0], &[1.0, 0.0]]));
        assert_eq!(z.get(0, 1), 1.0);
        let e = top_eigs(&z, 2, EigenOptions::default()).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-12);
        assert!((e.values[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_spectrum() {
        let z = normalize(&graph(&[&[0.0, 1.0, 1.0], &[1.0, 0.0, 1.0], &[1.0, 1.0, 0.0]]));
        let e = top_eigs(&z, 3, EigenOptions::default()).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-12);
        assert!((e.values[1] + 0.5).abs() < 1e-12);
        assert!((e.values[2] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_rows_zero() {
        let z = normalize(&graph(&[&[0.0, 2.0, 0.0], &[2.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]));
        assert_eq!(z.get(2, 2), 0.0);
        assert_eq!(z.get(0, 2), 0.0);
        assert!((z.get(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_spectrum_and_signs() {
        let z = sym(&[&[0.2, 0.0, 0.0], &[0.0, -0.7, 0.0], &[0.0, 0.0, 0.9]]);
        let e = top_eigs(&z, 3, EigenOptions::default()).unwrap();
        assert_eq!(e.values.len(), 3);
        assert!((e.values[0] - 0.9).abs() < 1e-15);
        assert!((e.values[1] - 0.2).abs() < 1e-15);
        assert!((e.values[2] + 0.7).abs() < 1e-15);
        assert_eq!(e.vectors[(2, 0)], 1.0);
    }

    fn random_sym(n: usize, seed: u64) -> SparseSym {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                a[i][j] = v / (n as f64).sqrt();
                a[j][i] = a[i][j];
            }
        }
        SparseSym::from_dense(&a)
    }

    #[test]
    fn dense_and_lanczos_agree() {
        let z = random_sym(200, 5);
        let dense = top_eigs(&z, 6, EigenOptions::default()).unwrap();
        let iter = top_eigs(&z, 6, EigenOptions { dense_max: 0 }).unwrap();
        for c in 0..6 {
            assert!((dense.values[c] - iter.values[c]).abs() < 1e-8);
            for r in 0..200 {
                assert!((dense.vectors[(r, c)] - iter.vectors[(r, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lanczos_finds_repeated_eigenvalue() {
        // three disjoint triangles: eigenvalue 1 three times
        let n = 9;
        let mut w = vec![vec![0.0; n]; n];
        for b in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        w[3 * b + i][3 * b + j] = 1.0;
                    }
                }
            }
        }
        let z = normalize(&AffinityGraph::from_dense(&w));
        let e = top_eigs(&z, 4, EigenOptions { dense_max: 0 }).unwrap();
        for c in 0..3 {
            assert!((e.values[c] - 1.0).abs() < 1e-10);
        }
        assert!((e.values[3] + 0.5).abs() < 1e-10);
    }

    #[test]
    fn kmeans_k_equals_n() {
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.6, 0.8]];
        let r = kmeans(&rows, 3, 1, 3, KmeansInit::PlusPlus).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut l = r.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_two_orthogonal_groups() {
        let mut rows = Vec::new();
        for i in 0..20 {
            let t = 0.01 * i as f64;
            rows.push(vec![t.cos(), t.sin()]);
            rows.push(vec![-t.sin(), t.cos()]);
        }
        for init in [KmeansInit::PlusPlus, KmeansInit::NearOrthogonal] {
            let r = kmeans(&rows, 2, 7, 5, init).unwrap();
            for i in 0..20 {
                assert_eq!(r.labels[2 * i], r.labels[0]);
                assert_eq!(r.labels[2 * i + 1], r.labels[1]);
            }
            assert_ne!(r.labels[0], r.labels[1]);
        }
    }

    #[test]
    fn kmeans_repairs_duplicates() {
        let rows = vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0]];
        let r = kmeans(&rows, 3, 0, 2, KmeansInit::PlusPlus).unwrap();
        let distinct: std::collections::BTreeSet<_> = r.labels.iter().collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn estimate_k_cases() {
        assert_eq!(estimate_k(&[1.0, 1.0, 1.0, 0.4, 0.3], 1000, 2.0, KRule::Threshold), 3);
        assert_eq!(estimate_k(&[0.9, 0.8], 1000, 2.0, KRule::Threshold), 1);
        assert_eq!(estimate_k(&[1.0, 0.99, 0.5, 0.4], 100, 2.0, KRule::Gap), 2);
    }

    #[test]
    fn blobs_split() {
        let mut rows = Vec::new();
        for i in 0..30 {
            let t = i as f64 * 0.001;
            rows.push(vec![0.2 + t, 0.2 + 0.5 * t]);
            rows.push(vec![0.8 - t, 0.8 - 0.5 * t]);
        }
        let cloud = PointCloud::from_rows(&rows).unwrap();
        let r = cluster_sc(&cloud, PairScale::Fixed(0.05), &ScParams::new(2)).unwrap();
        for i in 0..30 {
            assert_eq!(r.labels[2 * i], r.labels[0]);
            assert_eq!(r.labels[2 * i + 1], r.labels[1]);
        }
        assert_ne!(r.labels[0], r.labels[1]);
    }

    #[test]
    fn single_cluster() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![0.01 * i as f64, 0.3]).collect();
        let cloud = PointCloud::from_rows(&rows).unwrap();
        let p = HoscParams::practical(1, 1, 0.01);
        let r = cluster_hosc(&cloud, &p).unwrap();
        assert!(r.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn select_eta_single_grid() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![0.01 * (i % 20) as f64, if i < 20 { 0.1 } else { 0.6 }])
            .collect();
        let cloud = PointCloud::from_rows(&rows).unwrap();
        let p = HoscParams::practical(1, 2, 0.01);
        let (eta, r) = select_eta(&cloud, &p, &[0.02]).unwrap();
        assert_eq!(eta, 0.02);
        assert_eq!(r.chosen_eta, Some(0.02));
    }
}
