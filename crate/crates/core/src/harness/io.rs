//! Plain-text formats: point clouds, label files and correlation curves.
//!
//! A cloud file has a header `x0,...,x{D-1}` optionally followed by `label`;
//! labels are integers or the literal `outlier`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ClusterResult, PointCloud, Truth};

const OUTLIER: &str = "outlier";

pub fn write_cloud<W: Write>(cloud: &PointCloud, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..cloud.dim()).map(|k| format!("x{k}")).collect();
    if cloud.truth().is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (i, p) in cloud.iter().enumerate() {
        let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        if let Some(t) = cloud.truth() {
            row.push(match t[i] {
                Truth::Cluster(k) => k.to_string(),
                Truth::Outlier => OUTLIER.into(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(cloud: &PointCloud, path: &Path) -> Result<()> {
    write_cloud(cloud, File::create(path)?)
}

fn parse_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        msg: msg.into(),
    }
}

pub fn read_cloud<R: Read>(input: R) -> Result<PointCloud> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = r.headers()?.clone();
    let has_label = header.iter().last() == Some("label");
    let dim = header.len() - usize::from(has_label);
    for (k, name) in header.iter().take(dim).enumerate() {
        if name.trim() != format!("x{k}") {
            return Err(parse_err(1, format!("expected column x{k}, found {name:?}")));
        }
    }
    if dim == 0 {
        return Err(parse_err(1, "no coordinate columns"));
    }
    let mut coords = Vec::new();
    let mut truth = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        for field in rec.iter().take(dim) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite coordinate {field:?}")));
            }
            coords.push(v);
        }
        if has_label {
            let field = rec[dim].trim();
            truth.push(if field == OUTLIER {
                Truth::Outlier
            } else {
                Truth::Cluster(
                    field
                        .parse()
                        .map_err(|_| parse_err(line, format!("bad label {field:?}")))?,
                )
            });
        }
    }
    if coords.is_empty() {
        return Err(parse_err(2, "no data rows"));
    }
    let cloud = PointCloud::new(coords, dim)?;
    if has_label {
        cloud.with_truth(truth)
    } else {
        Ok(cloud)
    }
}

pub fn read_csv(path: &Path) -> Result<PointCloud> {
    read_cloud(File::open(path)?)
}

/// One row per point: `label,outlier` with the outlier flag as 0/1.
pub fn write_labels<W: Write>(result: &ClusterResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "outlier"])?;
    for (l, o) in result.labels.iter().zip(&result.outlier_mask) {
        w.write_record([l.to_string(), u8::from(*o).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a label file; the outlier column is optional.
pub fn read_labels<R: Read>(input: R) -> Result<(Vec<usize>, Vec<bool>)> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("label") {
        return Err(parse_err(1, "expected a label column"));
    }
    let has_mask = header.get(1) == Some("outlier");
    let mut labels = Vec::new();
    let mut mask = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        labels.push(rec[0].trim().parse().map_err(|_| parse_err(line, format!("bad label {:?}", &rec[0])))?);
        mask.push(has_mask && rec.get(1).map(str::trim) == Some("1"));
    }
    Ok((labels, mask))
}

/// Two columns `log_scale,log_corr`.
pub fn write_curve<W: Write>(log_scales: &[f64], log_corr: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["log_scale", "log_corr"])?;
    for (s, c) in log_scales.iter().zip(log_corr) {
        w.write_record([s.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cloud = PointCloud::new(vec![0.1, 1.0 / 3.0, 2e-17, 0.7], 2)
            .unwrap()
            .with_truth(vec![Truth::Cluster(1), Truth::Outlier])
            .unwrap();
        let mut buf = Vec::new();
        write_cloud(&cloud, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,label\n"));
        assert!(text.contains(",outlier"));
        assert_eq!(read_cloud(buf.as_slice()).unwrap(), cloud);
    }

    #[test]
    fn no_label_column() {
        let c = read_cloud("x0,x1\n0.5,0.25\n".as_bytes()).unwrap();
        assert_eq!(c.truth(), None);
        assert_eq!(c.point(0), &[0.5, 0.25]);
    }

    #[test]
    fn wrong_column_count_names_line() {
        let err = read_cloud("x0,x1\n0.5,0.25\n0.1\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        assert!(read_cloud("x0,x1\n0.5,abc\n".as_bytes()).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let r = ClusterResult {
            labels: vec![0, 2, 1],
            outlier_mask: vec![false, true, false],
            eigenvalues: vec![],
            chosen_eta: None,
            degrees: vec![],
            k: 3,
            embedding_spread: 0.0,
        };
        let mut buf = Vec::new();
        write_labels(&r, &mut buf).unwrap();
        let (l, m) = read_labels(buf.as_slice()).unwrap();
        assert_eq!(l, r.labels);
        assert_eq!(m, r.outlier_mask);
    }
}
