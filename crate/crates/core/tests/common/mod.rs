#![allow(dead_code)]

use hosc::flatness::tuple_affinity;
use hosc::model::{Kernel, PointCloud, Scale};
use nalgebra::DMatrix;
use rand::Rng;

fn ordered_walk(list: &[usize], len: usize, used: &mut Vec<bool>, seq: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if seq.len() == len {
        f(seq);
        return;
    }
    for p in 0..list.len() {
        if used[p] {
            continue;
        }
        used[p] = true;
        seq.push(list[p]);
        ordered_walk(list, len, used, seq, f);
        seq.pop();
        used[p] = false;
    }
}

/// Multiway affinity by summing over every ordered tuple `(i, j, k3, …, km)`
/// with `j, k3, …` distinct entries of the anchor's list, divided by
/// `(m−2)!` and symmetrized as `O + Oᵀ`.
pub fn ordered_tuple_affinity(
    cloud: &PointCloud,
    lists: &[Vec<usize>],
    d: usize,
    m: usize,
    epsilon: Scale,
    eta: f64,
    kernel: Kernel,
) -> Vec<Vec<f64>> {
    let n = cloud.len();
    let mut o = vec![vec![0.0; n]; n];
    for (i, list) in lists.iter().enumerate() {
        let mut used = vec![false; list.len()];
        let mut seq = Vec::new();
        ordered_walk(list, m - 1, &mut used, &mut seq, &mut |s| {
            let mut pts = vec![cloud.point(i)];
            pts.extend(s.iter().map(|&k| cloud.point(k)));
            o[i][s[0]] += tuple_affinity(&pts, d, epsilon, eta, kernel);
        });
    }
    let fact: f64 = (1..=m.saturating_sub(2)).map(|x| x as f64).product();
    (0..n)
        .map(|i| (0..n).map(|j| (o[i][j] + o[j][i]) / fact).collect())
        .collect()
}

/// Uniformly random rotation via QR of a Gaussian-like matrix.
pub fn random_rotation(dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| {
        let u: f64 = rng.random::<f64>().max(1e-300);
        let v: f64 = rng.random();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    });
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..dim {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

pub fn transform(points: &[Vec<f64>], rot: &DMatrix<f64>, shift: &[f64], scale: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            (0..p.len())
                .map(|r| scale * (0..p.len()).map(|c| rot[(r, c)] * p[c]).sum::<f64>() + shift[r])
                .collect()
        })
        .collect()
}

pub fn refs(points: &[Vec<f64>]) -> Vec<&[f64]> {
    points.iter().map(Vec::as_slice).collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || a == b
}
