use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::error::{Error, Result};
use crate::model::Truth;

/// Largest label count for which every permutation is tried.
pub const EXHAUSTIVE_MAX: usize = 8;

fn confusion(pred: &[usize], truth: &[usize]) -> Vec<Vec<i64>> {
    let k = pred.iter().chain(truth).copied().max().map_or(1, |m| m + 1);
    let mut c = vec![vec![0i64; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        c[p][t] += 1;
    }
    c
}

fn best_matching_exhaustive(c: &[Vec<i64>]) -> i64 {
    fn rec(c: &[Vec<i64>], row: usize, used: &mut Vec<bool>, acc: i64, best: &mut i64) {
        if row == c.len() {
            *best = (*best).max(acc);
            return;
        }
        for col in 0..c.len() {
            if !used[col] {
                used[col] = true;
                rec(c, row + 1, used, acc + c[row][col], best);
                used[col] = false;
            }
        }
    }
    let mut best = 0;
    rec(c, 0, &mut vec![false; c.len()], 0, &mut best);
    best
}

fn best_matching_hungarian(c: &[Vec<i64>]) -> i64 {
    let m = Matrix::from_rows(c.iter().cloned()).expect("square confusion matrix");
    kuhn_munkres(&m).0
}

/// Fraction of points whose labels disagree under the best relabeling of
/// `pred`. Both inputs are plain label vectors of equal length.
pub fn misclassification(pred: &[usize], truth: &[usize]) -> Result<f64> {
    misclassification_with(pred, truth, None)
}

/// As [`misclassification`], forcing exhaustive (`Some(true)`) or Hungarian
/// (`Some(false)`) matching.
pub fn misclassification_with(pred: &[usize], truth: &[usize], exhaustive: Option<bool>) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidParams(format!(
            "{} predicted labels for {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let c = confusion(pred, truth);
    let matched = if exhaustive.unwrap_or(c.len() <= EXHAUSTIVE_MAX) {
        best_matching_exhaustive(&c)
    } else {
        best_matching_hungarian(&c)
    };
    Ok(1.0 - matched as f64 / pred.len() as f64)
}

/// Misclassification over the points that are not truth outliers.
pub fn misclassification_rate(pred: &[usize], truth: &[Truth]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidParams(format!(
            "{} predicted labels for {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let (p, t): (Vec<usize>, Vec<usize>) = pred
        .iter()
        .zip(truth)
        .filter_map(|(&p, t)| t.cluster().map(|t| (p, t)))
        .unzip();
    misclassification(&p, &t)
}

/// Share of truth outliers that were flagged.
pub fn outlier_tpr(pred_mask: &[bool], truth_mask: &[bool]) -> Result<f64> {
    if pred_mask.len() != truth_mask.len() {
        return Err(Error::InvalidParams("mask lengths differ".into()));
    }
    let truth = truth_mask.iter().filter(|&&t| t).count();
    if truth == 0 {
        return Err(Error::InvalidParams("no truth outliers".into()));
    }
    let hit = pred_mask.iter().zip(truth_mask).filter(|(&p, &t)| p && t).count();
    Ok(hit as f64 / truth as f64)
}
