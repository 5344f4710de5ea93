//! Neighbor search and affinity-graph construction.
//!
//! Multiway affinities are accumulated over tuples anchored at each point: for
//! anchor `i` every `(m-1)`-subset `T` of its neighbor set contributes
//! `α({x_i} ∪ T)` to `W[i][j]` for each `j ∈ T`, after which `W ← W + Wᵀ`.
//! Tuple fits do not depend on the scales, so [`TupleTable`] keeps them and
//! rebuilds the graph cheaply for any `(ε, η, φ)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::flatness::{affinity_of_fit, fit_tuple, pair_affinity, TupleFit};
use crate::model::{dist_sq, HoscParams, Kernel, PointCloud, Scale};
use crate::util::for_each_combination;

/// Above this ambient dimension neighbor queries scan all points.
pub const KD_TREE_MAX_DIM: usize = 16;
const LEAF_SIZE: usize = 8;

/// `(squared distance, index)` ordered lexicographically, so equal distances
/// resolve to the lower index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

enum Node {
    Leaf(Vec<usize>),
    Split {
        dim: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Static kd-tree over the rows of a cloud.
pub struct KdTree<'a> {
    cloud: &'a PointCloud,
    root: Node,
}

impl<'a> KdTree<'a> {
    pub fn new(cloud: &'a PointCloud) -> Self {
        let idx: Vec<usize> = (0..cloud.len()).collect();
        let root = Self::build(cloud, idx);
        Self { cloud, root }
    }

    fn build(cloud: &PointCloud, mut idx: Vec<usize>) -> Node {
        if idx.len() <= LEAF_SIZE {
            return Node::Leaf(idx);
        }
        let dim = (0..cloud.dim())
            .map(|k| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = cloud.point(i)[k];
                    (lo.min(v), hi.max(v))
                });
                (hi - lo, k)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
            .map(|(_, k)| k)
            .unwrap_or(0);
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            cloud.point(a)[dim]
                .total_cmp(&cloud.point(b)[dim])
                .then(a.cmp(&b))
        });
        let value = cloud.point(idx[mid])[dim];
        let right = idx.split_off(mid);
        if idx.is_empty() {
            return Node::Leaf(right);
        }
        Node::Split {
            dim,
            value,
            left: Box::new(Self::build(cloud, idx)),
            right: Box::new(Self::build(cloud, right)),
        }
    }

    /// The `k` nearest rows to `query`, excluding `skip`, nearest first.
    pub fn knn(&self, query: &[f64], k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.knn_rec(&self.root, query, k, skip, &mut heap);
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.0.sqrt(), c.1)).collect()
    }

    fn knn_rec(
        &self,
        node: &Node,
        q: &[f64],
        k: usize,
        skip: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match node {
            Node::Leaf(ids) => {
                for &i in ids {
                    if Some(i) == skip {
                        continue;
                    }
                    let c = Candidate(dist_sq(q, self.cloud.point(i)), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, skip, heap);
                // ties at the plane may still hold lower-index candidates
                if heap.len() < k || diff * diff <= heap.peek().map(|c| c.0).unwrap_or(f64::INFINITY) {
                    self.knn_rec(far, q, k, skip, heap);
                }
            }
        }
    }

    /// Rows strictly within `radius` of `query`, excluding `skip`, by index.
    pub fn within(&self, query: &[f64], radius: f64, skip: Option<usize>) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_rec(&self.root, query, radius * radius, skip, &mut out);
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: &Node, q: &[f64], r2: f64, skip: Option<usize>, out: &mut Vec<usize>) {
        match node {
            Node::Leaf(ids) => out.extend(
                ids.iter()
                    .copied()
                    .filter(|&i| Some(i) != skip && dist_sq(q, self.cloud.point(i)) < r2),
            ),
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.within_rec(near, q, r2, skip, out);
                if diff * diff < r2 {
                    self.within_rec(far, q, r2, skip, out);
                }
            }
        }
    }
}

fn brute_knn(cloud: &PointCloud, i: usize, k: usize) -> Vec<(f64, usize)> {
    let q = cloud.point(i);
    let mut all: Vec<Candidate> = (0..cloud.len())
        .filter(|&j| j != i)
        .map(|j| Candidate(dist_sq(q, cloud.point(j)), j))
        .collect();
    all.sort();
    all.truncate(k);
    all.into_iter().map(|c| (c.0.sqrt(), c.1)).collect()
}

/// Exact `ℓ` nearest neighbors of every point.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    k: usize,
    neighbors: Vec<usize>,
    distances: Vec<f64>,
}

impl NeighborIndex {
    /// Neighbors per point, `min(ℓ, N−1)`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.neighbors.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }

    pub fn lists(&self) -> Vec<Vec<usize>> {
        (0..self.len()).map(|i| self.neighbors(i).to_vec()).collect()
    }
}

/// Exact Euclidean `ℓ`-NN; ties broken by lower index.
pub fn build_knn(cloud: &PointCloud, ell: usize) -> NeighborIndex {
    let n = cloud.len();
    let k = ell.min(n.saturating_sub(1));
    let rows: Vec<Vec<(f64, usize)>> = if cloud.dim() <= KD_TREE_MAX_DIM {
        let tree = KdTree::new(cloud);
        (0..n)
            .into_par_iter()
            .map(|i| tree.knn(cloud.point(i), k, Some(i)))
            .collect()
    } else {
        (0..n).into_par_iter().map(|i| brute_knn(cloud, i, k)).collect()
    };
    let mut neighbors = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for row in rows {
        for (d, j) in row {
            distances.push(d);
            neighbors.push(j);
        }
    }
    NeighborIndex {
        k,
        neighbors,
        distances,
    }
}

/// For every point, the other points strictly closer than `radius`.
pub fn range_lists(cloud: &PointCloud, radius: f64) -> Vec<Vec<usize>> {
    let n = cloud.len();
    if cloud.dim() <= KD_TREE_MAX_DIM {
        let tree = KdTree::new(cloud);
        (0..n)
            .into_par_iter()
            .map(|i| tree.within(cloud.point(i), radius, Some(i)))
            .collect()
    } else {
        let r2 = radius * radius;
        (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && dist_sq(cloud.point(i), cloud.point(j)) < r2)
                    .collect()
            })
            .collect()
    }
}

/// Sparse symmetric nonnegative weights with zero diagonal, in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    degrees: Vec<f64>,
}

impl AffinityGraph {
    /// Builds `W + Wᵀ` from directed entries `(i, j, w)` of `W`.
    pub fn from_directed(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut both = Vec::with_capacity(entries.len() * 2);
        for &(i, j, w) in entries {
            if i != j && w != 0.0 {
                both.push((i, j, w));
                both.push((j, i, w));
            }
        }
        Self::from_entries(n, both)
    }

    /// Builds from entries that already list both `(i, j)` and `(j, i)`.
    /// Duplicates are summed in input order.
    pub fn from_entries(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.retain(|&(i, j, w)| i != j && w != 0.0);
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, w) in entries {
            if last == Some((i, j)) {
                *vals.last_mut().expect("entry exists") += w;
            } else {
                cols.push(j);
                vals.push(w);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let degrees = (0..n)
            .map(|i| vals[row_ptr[i]..row_ptr[i + 1]].iter().sum())
            .collect();
        Self {
            n,
            row_ptr,
            cols,
            vals,
            degrees,
        }
    }

    pub fn from_dense(w: &[Vec<f64>]) -> Self {
        let n = w.len();
        let entries = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, w[i][j]))
            .collect();
        Self::from_entries(n, entries)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(column, weight)` pairs of row `i`, by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(p) => self.vals[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, w) in self.row(i) {
                row[j] = w;
            }
        }
        out
    }

    /// Induced subgraph on `keep` (in that order).
    pub fn subgraph(&self, keep: &[usize]) -> AffinityGraph {
        let mut pos = vec![usize::MAX; self.n];
        for (p, &i) in keep.iter().enumerate() {
            pos[i] = p;
        }
        let mut entries = Vec::new();
        for (p, &i) in keep.iter().enumerate() {
            for (j, w) in self.row(i) {
                if pos[j] != usize::MAX {
                    entries.push((p, pos[j], w));
                }
            }
        }
        Self::from_entries(keep.len(), entries)
    }

    /// Binary structure of the graph, i.e. `W_ij != 0`.
    pub fn support(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| (i, j)))
            .collect()
    }
}

/// Tuple fits for all anchored tuples of a neighbor structure.
pub struct TupleTable {
    n: usize,
    /// Per anchor: its neighbor list.
    lists: Vec<Vec<usize>>,
    /// Per anchor: member positions (into the anchor's list), `m−1` per tuple.
    members: Vec<Vec<u16>>,
    /// Per anchor: fit per tuple, `None` when two points coincide.
    fits: Vec<Vec<Option<TupleFit>>>,
}

impl TupleTable {
    /// Enumerates every `(m−1)`-subset of each anchor's neighbor list and fits
    /// a `d`-flat to the tuple.
    pub fn new(cloud: &PointCloud, lists: Vec<Vec<usize>>, d: usize, m: usize) -> Self {
        assert!(m >= 2, "tuples need at least two points");
        let per_anchor: Vec<(Vec<u16>, Vec<Option<TupleFit>>)> = lists
            .par_iter()
            .enumerate()
            .map(|(i, nbrs)| {
                assert!(nbrs.len() <= u16::MAX as usize, "neighbor list too long");
                let mut members = Vec::new();
                let mut fits = Vec::new();
                let mut pts: Vec<&[f64]> = Vec::with_capacity(m);
                for_each_combination(nbrs.len(), m - 1, |sub| {
                    pts.clear();
                    pts.push(cloud.point(i));
                    pts.extend(sub.iter().map(|&p| cloud.point(nbrs[p])));
                    members.extend(sub.iter().map(|&p| p as u16));
                    fits.push(fit_tuple(&pts, d));
                });
                (members, fits)
            })
            .collect();
        let (members, fits) = per_anchor.into_iter().unzip();
        Self {
            n: cloud.len(),
            lists,
            members,
            fits,
        }
    }

    pub fn tuple_count(&self) -> usize {
        self.fits.iter().map(Vec::len).sum()
    }

    /// Affinity graph for the given scales and kernel.
    pub fn graph(&self, epsilon: Scale, eta: f64, kernel: Kernel) -> AffinityGraph {
        let rows: Vec<Vec<(usize, usize, f64)>> = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let nbrs = &self.lists[i];
                let mut acc = vec![0.0; nbrs.len()];
                let fits = &self.fits[i];
                if !fits.is_empty() {
                    let width = self.members[i].len() / fits.len();
                    for (t, fit) in fits.iter().enumerate() {
                        let Some(fit) = fit else { continue };
                        let a = affinity_of_fit(fit, epsilon, eta, kernel);
                        if a == 0.0 {
                            continue;
                        }
                        for &p in &self.members[i][t * width..(t + 1) * width] {
                            acc[p as usize] += a;
                        }
                    }
                }
                nbrs.iter()
                    .zip(acc)
                    .filter(|(_, w)| *w != 0.0)
                    .map(|(&j, w)| (i, j, w))
                    .collect()
            })
            .collect();
        let entries: Vec<(usize, usize, f64)> = rows.into_iter().flatten().collect();
        AffinityGraph::from_directed(self.n, &entries)
    }

    /// Per-point degrees for each scale pair, without materializing graphs.
    pub fn degrees_for(&self, epsilon: Scale, eta: f64, kernel: Kernel) -> Vec<f64> {
        self.graph(epsilon, eta, kernel).degrees().to_vec()
    }
}

/// Multiway affinity graph restricted to the `ℓ`-NN of each anchor.
pub fn build_hosc_affinity(cloud: &PointCloud, index: &NeighborIndex, params: &HoscParams) -> AffinityGraph {
    TupleTable::new(cloud, index.lists(), params.d, params.m).graph(params.epsilon, params.eta, params.kernel)
}

/// Pairwise scale for the baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairScale {
    Fixed(f64),
    /// Per-point scale: distance to the `ℓ`-th neighbor; pair scale is the
    /// geometric mean of the two.
    Local(usize),
}

/// Pairwise affinity graph on pairs where one point is among the other's
/// neighbors in `support`.
pub fn build_sc_affinity(cloud: &PointCloud, scale: PairScale, kernel: Kernel, support: &NeighborIndex) -> AffinityGraph {
    let n = cloud.len();
    let local: Option<Vec<f64>> = match scale {
        PairScale::Fixed(_) => None,
        PairScale::Local(ell) => {
            let pos = ell.clamp(1, support.k().max(1)) - 1;
            Some(
                (0..n)
                    .map(|i| support.distances(i).get(pos).copied().unwrap_or(0.0))
                    .collect(),
            )
        }
    };
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| support.neighbors(i).iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let weights: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let eps = match (&local, scale) {
                (Some(e), _) => (e[i] * e[j]).sqrt(),
                (None, PairScale::Fixed(eps)) => eps,
                _ => unreachable!(),
            };
            if eps > 0.0 {
                pair_affinity(cloud.point(i), cloud.point(j), eps, kernel)
            } else {
                0.0
            }
        })
        .collect();
    let entries: Vec<(usize, usize, f64)> = pairs
        .iter()
        .zip(&weights)
        .flat_map(|(&(i, j), &w)| [(i, j, w), (j, i, w)])
        .collect();
    AffinityGraph::from_entries(n, entries)
}
