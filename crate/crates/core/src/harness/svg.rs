use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PointCloud;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 0.05;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    #[default]
    FirstTwo,
    Pca,
}

/// Top two principal directions of the centered cloud, as unit columns.
pub fn principal_axes(cloud: &PointCloud) -> (Vec<f64>, [Vec<f64>; 2]) {
    let dim = cloud.dim();
    let n = cloud.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in cloud.iter() {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for p in cloud.iter() {
        for a in 0..dim {
            for b in 0..dim {
                cov[(a, b)] += (p[a] - mean[a]) * (p[b] - mean[b]) / n;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |c: usize| -> Vec<f64> {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[c]).iter().copied().collect();
        let big = (0..dim).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
        if v[big] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    (mean, [axis(0), axis(1)])
}

fn project(cloud: &PointCloud, projection: Projection) -> Vec<[f64; 2]> {
    match projection {
        Projection::FirstTwo => cloud.iter().map(|p| [p[0], p[1]]).collect(),
        Projection::Pca => {
            let (mean, [u, v]) = principal_axes(cloud);
            cloud
                .iter()
                .map(|p| {
                    let c: Vec<f64> = p.iter().zip(&mean).map(|(x, m)| x - m).collect();
                    [
                        c.iter().zip(&u).map(|(a, b)| a * b).sum(),
                        c.iter().zip(&v).map(|(a, b)| a * b).sum(),
                    ]
                })
                .collect()
        }
    }
}

/// Scatter plot with one color per label; outliers drawn as black crosses.
pub fn render_svg(cloud: &PointCloud, labels: &[usize], outliers: &[bool], projection: Projection) -> Result<String> {
    if cloud.dim() < 2 {
        return Err(Error::InvalidParams("plotting needs at least two dimensions".into()));
    }
    if labels.len() != cloud.len() || (!outliers.is_empty() && outliers.len() != cloud.len()) {
        return Err(Error::InvalidParams("label count does not match the cloud".into()));
    }
    let pts = project(cloud, projection);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = (0..2).map(|k| (hi[k] - lo[k]).max(1e-12)).fold(0.0, f64::max);
    let (x0, y0) = (
        0.5 * (lo[0] + hi[0]) - span * (0.5 + MARGIN),
        0.5 * (lo[1] + hi[1]) - span * (0.5 + MARGIN),
    );
    let scale = SIZE / (span * (1.0 + 2.0 * MARGIN));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    for (i, p) in pts.iter().enumerate() {
        let x = (p[0] - x0) * scale;
        let y = SIZE - (p[1] - y0) * scale;
        if outliers.get(i).copied().unwrap_or(false) {
            let _ = writeln!(
                s,
                r#"<path d="M{:.2} {:.2}l6 6m0 -6l-6 6" stroke="black" stroke-width="1.2"/>"#,
                x - 3.0,
                y - 3.0
            );
        } else {
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{}"/>"#,
                PALETTE[labels[i] % PALETTE.len()]
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg_scatter(cloud: &PointCloud, labels: &[usize], outliers: &[bool], path: &Path, projection: Projection) -> Result<()> {
    std::fs::write(path, render_svg(cloud, labels, outliers, projection)?)?;
    Ok(())
}
