//! Local linear-fit residuals of small point tuples and the affinities built on them.
//!
//! The production width is the root-mean-square distance of the tuple to its
//! best-fitting `d`-flat, obtained from the bottom singular values of the
//! centered tuple. [`lambda_minmax_oracle`] gives an independent upper bound on
//! the same quantity by restricting the flat to those spanned by `d + 1` tuple
//! points; it is used as a reference in tests.

use crate::model::{dist, Kernel, PointCloud, Scale};
use crate::util::for_each_combination;

/// Singular values below this fraction of the largest one count as zero.
const RANK_TOL: f64 = 1e-12;

/// Width and diameter of one tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TupleFit {
    pub rms_width: f64,
    pub diameter: f64,
}

/// Singular values of the `rows`-by-`cols` row-major matrix `a`, unordered.
///
/// One-sided Jacobi on whichever side has fewer vectors; small singular values
/// come out with relative accuracy, which plain Gram eigenvalues do not give.
pub fn singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    // `vecs` holds `count` vectors of length `len`, contiguous.
    let (count, len, mut vecs) = if rows <= cols {
        (rows, cols, a.to_vec())
    } else {
        let mut t = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = a[r * cols + c];
            }
        }
        (cols, rows, t)
    };
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..count {
            for j in i + 1..count {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for t in 0..len {
                    let (x, y) = (vecs[i * len + t], vecs[j * len + t]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..len {
                    let (x, y) = (vecs[i * len + k], vecs[j * len + k]);
                    vecs[i * len + k] = c * x - s * y;
                    vecs[j * len + k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    vecs.chunks_exact(len)
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

/// Root-mean-square distance of `points` to their best-fitting affine `d`-flat.
pub fn lambda_rms(points: &[&[f64]], d: usize) -> f64 {
    let m = points.len();
    if m <= d + 1 {
        return 0.0;
    }
    let dim = points[0].len();
    let mut centroid = vec![0.0; dim];
    for p in points {
        for (c, x) in centroid.iter_mut().zip(p.iter()) {
            *c += x;
        }
    }
    for c in &mut centroid {
        *c /= m as f64;
    }
    let mut centered = Vec::with_capacity(m * dim);
    for p in points {
        centered.extend(p.iter().zip(&centroid).map(|(x, c)| x - c));
    }
    rms_from_centered(&centered, m, dim, d)
}

fn rms_from_centered(centered: &[f64], m: usize, dim: usize, d: usize) -> f64 {
    let mut sv = singular_values(centered, m, dim);
    sv.sort_by(|a, b| b.total_cmp(a));
    let floor = sv.first().copied().unwrap_or(0.0) * RANK_TOL;
    let tail: f64 = sv
        .iter()
        .skip(d)
        .filter(|&&s| s > floor)
        .map(|s| s * s)
        .sum();
    (tail / m as f64).sqrt()
}

/// Largest pairwise distance.
pub fn diameter(points: &[&[f64]]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.max(dist(points[i], points[j]));
        }
    }
    best
}

/// True when two of the points are bitwise identical.
pub fn has_coincident(points: &[&[f64]]) -> bool {
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if points[i]
                .iter()
                .zip(points[j])
                .all(|(a, b)| a.to_bits() == b.to_bits())
            {
                return true;
            }
        }
    }
    false
}

/// Width and diameter, or `None` if the tuple has a repeated point.
pub fn fit_tuple(points: &[&[f64]], d: usize) -> Option<TupleFit> {
    if has_coincident(points) {
        return None;
    }
    Some(TupleFit {
        rms_width: lambda_rms(points, d),
        diameter: diameter(points),
    })
}

/// Multiway affinity of a fitted tuple.
pub fn affinity_of_fit(fit: &TupleFit, epsilon: Scale, eta: f64, kernel: Kernel) -> f64 {
    let flat = kernel.eval(fit.rms_width / eta);
    match epsilon {
        Scale::Finite(eps) => kernel.eval(fit.diameter / eps) * flat,
        Scale::Infinite => flat,
    }
}

/// Multiway affinity of `points`: zero on repeated points, otherwise the kernel
/// of the diameter over `epsilon` (when finite) times the kernel of the RMS
/// width over `eta`.
pub fn tuple_affinity(points: &[&[f64]], d: usize, epsilon: Scale, eta: f64, kernel: Kernel) -> f64 {
    match fit_tuple(points, d) {
        Some(fit) => affinity_of_fit(&fit, epsilon, eta, kernel),
        None => 0.0,
    }
}

/// Pairwise affinity: zero on identical points, else `φ(‖x−y‖/ε)`.
pub fn pair_affinity(x: &[f64], y: &[f64], epsilon: f64, kernel: Kernel) -> f64 {
    if x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits()) {
        return 0.0;
    }
    kernel.eval(dist(x, y) / epsilon)
}

/// Distance from `x` to the affine span of `base` (given as an origin and an
/// orthonormal basis).
fn dist_to_flat(x: &[f64], origin: &[f64], basis: &[Vec<f64>]) -> f64 {
    let mut r: Vec<f64> = x.iter().zip(origin).map(|(a, o)| a - o).collect();
    for b in basis {
        let c: f64 = r.iter().zip(b).map(|(u, v)| u * v).sum();
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri -= c * bi;
        }
    }
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Orthonormal basis of the directions spanned by `pts[1..] - pts[0]`,
/// dropping numerically dependent ones.
fn span_basis(pts: &[&[f64]], scale: f64) -> Vec<Vec<f64>> {
    let origin = pts[0];
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for p in &pts[1..] {
        let mut v: Vec<f64> = p.iter().zip(origin).map(|(a, o)| a - o).collect();
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = v.iter().zip(b).map(|(u, w)| u * w).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= c * bi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Min over all `(d+1)`-point subsets of the largest distance from any tuple
/// point to the subset's affine span.
///
/// Subsets spanning fewer than `d` dimensions are skipped unless every subset
/// is degenerate, in which case the lower-dimensional spans are used.
pub fn lambda_minmax_oracle(points: &[&[f64]], d: usize) -> f64 {
    let m = points.len();
    if m <= d + 1 {
        return 0.0;
    }
    let scale = diameter(points);
    let mut best_full = f64::INFINITY;
    let mut best_degenerate = f64::INFINITY;
    let mut subset: Vec<&[f64]> = Vec::with_capacity(d + 1);
    for_each_combination(m, d + 1, |idx| {
        subset.clear();
        subset.extend(idx.iter().map(|&i| points[i]));
        let basis = span_basis(&subset, scale);
        let worst = points
            .iter()
            .map(|x| dist_to_flat(x, subset[0], &basis))
            .fold(0.0f64, f64::max);
        if basis.len() >= d {
            best_full = best_full.min(worst);
        } else {
            best_degenerate = best_degenerate.min(worst);
        }
    });
    if best_full.is_finite() {
        best_full
    } else {
        best_degenerate
    }
}

/// Convenience: rows of `cloud` picked by index.
pub fn gather<'a>(cloud: &'a PointCloud, idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&i| cloud.point(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(v: &[[f64; 2]]) -> Vec<&[f64]> {
        v.iter().map(|r| r.as_slice()).collect()
    }

    /// Smallest eigenvalue of the 2×2 scatter matrix, in closed form.
    fn scatter_min_eig(pts: &[[f64; 2]]) -> f64 {
        let n = pts.len() as f64;
        let (mx, my) = (
            pts.iter().map(|p| p[0]).sum::<f64>() / n,
            pts.iter().map(|p| p[1]).sum::<f64>() / n,
        );
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for p in pts {
            let (x, y) = (p[0] - mx, p[1] - my);
            a += x * x;
            b += x * y;
            c += y * y;
        }
        let tr = a + c;
        let det = a * c - b * b;
        tr / 2.0 - ((tr / 2.0).powi(2) - det).sqrt()
    }

    #[test]
    fn at_most_d_plus_one_points_is_zero() {
        let pts = [[0.3, 0.1], [0.9, 0.7]];
        assert_eq!(lambda_rms(&rows(&pts), 1), 0.0);
        let pts3 = [[0.3, 0.1, 0.0], [0.9, 0.7, 0.2], [0.1, 0.5, 0.9]];
        let r: Vec<&[f64]> = pts3.iter().map(|r| r.as_slice()).collect();
        assert_eq!(lambda_rms(&r, 2), 0.0);
    }

    #[test]
    fn collinear_is_zero() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert_eq!(lambda_rms(&rows(&pts), 1), 0.0);
        assert_eq!(lambda_minmax_oracle(&rows(&pts), 1), 0.0);
    }

    #[test]
    fn triangle_matches_scatter_eigenvalue() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.3]];
        let expected = (scatter_min_eig(&pts) / 3.0).sqrt();
        // Frozen from the closed-form 2×2 eigenvalue above.
        assert!((expected - 0.141_421_356_237_309_5).abs() < 1e-12, "{expected}");
        let got = lambda_rms(&rows(&pts), 1);
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }

    #[test]
    fn triangle_minmax_by_enumeration() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.3]];
        // Lines through each pair; largest distance of the third point.
        let d01 = 0.3f64;
        let d02 = {
            // line through (0,0) and (0.5,0.3); distance of (1,0)
            0.3 / (0.25f64 + 0.09).sqrt()
        };
        let d12 = d02; // symmetric
        let expected = d01.min(d02).min(d12);
        let got = lambda_minmax_oracle(&rows(&pts), 1);
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
        assert!(lambda_rms(&rows(&pts), 1) <= got);
    }

    #[test]
    fn singular_values_of_known_matrix() {
        // diag(3, 2) padded with a zero row
        let a = [3.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        let mut sv = singular_values(&a, 3, 2);
        sv.sort_by(|x, y| y.total_cmp(x));
        assert!((sv[0] - 3.0).abs() < 1e-15 && (sv[1] - 2.0).abs() < 1e-15);
        let mut sv_t = singular_values(&[3.0, 0.0, 0.0, 0.0, 2.0, 0.0], 2, 3);
        sv_t.sort_by(|x, y| y.total_cmp(x));
        assert_eq!(sv.len(), sv_t.len());
    }

    #[test]
    fn tuple_affinity_cases() {
        let eps = Scale::Finite(1.0);
        // diameter 1.2 ≥ ε
        let wide = [[0.0, 0.0], [0.6, 0.0], [1.2, 0.0]];
        assert_eq!(tuple_affinity(&rows(&wide), 1, eps, 0.1, Kernel::Simple), 0.0);
        // collinear inside an ε/2 ball
        let tight = [[0.0, 0.0], [0.2, 0.0], [0.4, 0.0]];
        assert_eq!(tuple_affinity(&rows(&tight), 1, eps, 0.1, Kernel::Simple), 1.0);
        // thicker than η
        let thick = [[0.0, 0.0], [0.2, 0.3], [0.4, 0.0]];
        assert_eq!(tuple_affinity(&rows(&thick), 1, eps, 0.05, Kernel::Simple), 0.0);
        // repeated point
        let dup = [[0.0, 0.0], [0.2, 0.0], [0.0, 0.0]];
        assert_eq!(tuple_affinity(&rows(&dup), 1, eps, 10.0, Kernel::Heat), 0.0);
    }

    #[test]
    fn heat_at_eta_is_inverse_e() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.3]];
        let eta = lambda_rms(&rows(&pts), 1);
        let a = tuple_affinity(&rows(&pts), 1, Scale::Infinite, eta, Kernel::Heat);
        assert!((a - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn pair_affinity_cases() {
        assert_eq!(pair_affinity(&[0.1, 0.2], &[0.1, 0.2], 1.0, Kernel::Heat), 0.0);
        assert_eq!(pair_affinity(&[0.0, 0.0], &[0.5, 0.0], 1.0, Kernel::Simple), 1.0);
        let h = pair_affinity(&[0.0, 0.0], &[0.3, 0.4], 0.5, Kernel::Heat);
        assert!((h - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_subsets_fall_back() {
        // Three coincident-direction points with d = 2: every 3-subset spans a line.
        let pts: Vec<[f64; 3]> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let r: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        assert_eq!(lambda_minmax_oracle(&r, 2), 0.0);
        assert_eq!(lambda_rms(&r, 2), 0.0);
    }
}
