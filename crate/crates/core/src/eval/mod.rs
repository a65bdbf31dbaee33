//! Accuracy metrics, per-class improvement tables, sweeps, and report files.

mod report;
mod sweep;

use serde::{Deserialize, Serialize};

use crate::data::{SplitLabel, SplitSpec};
use crate::numerics::{Matrix, Tensor};
use crate::{Error, Result};

pub use report::{
    classwise_csv, fmt_sig6, scatter_svg, split_report_csv, sweep_csv, sweep_svg,
    write_classwise_csv, write_split_report_csv, write_sweep_csv,
};
pub use sweep::{
    gamma_sweep, run_sweep, sweep_threads, topk_sweep, Experiment, RunResult, SweepRow,
};

/// Position of `label` when classes are sorted by descending score, ties
/// going to the lower class id. 0 is the top prediction.
pub fn label_rank(scores: &[f64], label: usize) -> usize {
    let s = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v > s || (v == s && c < label))
        .count()
}

fn check_k(scores: &Matrix, k: usize) -> Result<()> {
    if k == 0 || k > scores.cols() {
        return Err(Error::Config(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            scores.cols()
        )));
    }
    Ok(())
}

/// Fraction of rows whose label is among the `k` highest scores.
pub fn topk_accuracy(scores: &Matrix, labels: &[usize], k: usize) -> Result<f64> {
    check_k(scores, k)?;
    if scores.rows() != labels.len() {
        return Err(Error::shape("topk_accuracy", scores.rows(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Data("top-k accuracy of an empty sample set".into()));
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| label_rank(scores.row(r), y) < k)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub top1: f64,
    pub top5: f64,
    pub n: usize,
}

/// Accuracy per split; a split with no samples is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub few: Option<SplitMetrics>,
    pub medium: Option<SplitMetrics>,
    pub many: Option<SplitMetrics>,
    pub all: Option<SplitMetrics>,
}

impl SplitReport {
    pub fn get(&self, name: &str) -> Option<&SplitMetrics> {
        match name {
            "few" => self.few.as_ref(),
            "medium" => self.medium.as_ref(),
            "many" => self.many.as_ref(),
            "all" => self.all.as_ref(),
            _ => None,
        }
    }

    /// `(name, metrics)` in `few, medium, many, all` order.
    pub fn entries(&self) -> [(&'static str, Option<&SplitMetrics>); 4] {
        [
            ("few", self.few.as_ref()),
            ("medium", self.medium.as_ref()),
            ("many", self.many.as_ref()),
            ("all", self.all.as_ref()),
        ]
    }
}

/// Top-1 and top-5 (top-`N` when fewer than 5 classes) per split of the
/// sample's true class, plus all samples together.
pub fn split_report(scores: &Matrix, labels: &[usize], split: &SplitSpec) -> Result<SplitReport> {
    if scores.rows() != labels.len() {
        return Err(Error::shape("split_report", scores.rows(), labels.len()));
    }
    if scores.cols() != split.n_classes() {
        return Err(Error::shape(
            "split_report",
            scores.cols(),
            split.n_classes(),
        ));
    }
    let k5 = 5.min(scores.cols());
    let mut acc = [(0usize, 0usize, 0usize); 3];
    for (r, &y) in labels.iter().enumerate() {
        let rank = label_rank(scores.row(r), y);
        let slot = match split.label(y) {
            SplitLabel::Few => 0,
            SplitLabel::Medium => 1,
            SplitLabel::Many => 2,
        };
        acc[slot].0 += usize::from(rank < 1);
        acc[slot].1 += usize::from(rank < k5);
        acc[slot].2 += 1;
    }
    let metrics = |(t1, t5, n): (usize, usize, usize)| {
        (n > 0).then(|| SplitMetrics {
            top1: t1 as f64 / n as f64,
            top5: t5 as f64 / n as f64,
            n,
        })
    };
    let total = acc
        .iter()
        .fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok(SplitReport {
        few: metrics(acc[0]),
        medium: metrics(acc[1]),
        many: metrics(acc[2]),
        all: metrics(total),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseRow {
    pub class_id: usize,
    pub baseline_top1: f64,
    pub composed_top1: f64,
    pub delta: f64,
    pub nn_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseReport {
    pub rows: Vec<ClasswiseRow>,
    /// Spearman correlation of `nn_distance` against `delta`; `None` when
    /// either column is constant or there are fewer than two rows.
    pub spearman: Option<f64>,
}

/// Per-class top-1 before and after composition for each `(class,
/// nearest-neighbor distance)` in `classes`. Classes without samples are
/// skipped.
pub fn classwise_report(
    baseline: &Matrix,
    composed: &Matrix,
    labels: &[usize],
    classes: &[(usize, f64)],
) -> Result<ClasswiseReport> {
    if baseline.rows() != labels.len()
        || composed.rows() != labels.len()
        || baseline.cols() != composed.cols()
    {
        return Err(Error::shape(
            "classwise_report",
            baseline.shape(),
            composed.shape(),
        ));
    }
    let mut rows = Vec::with_capacity(classes.len());
    for &(class, nn_distance) in classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == class).collect();
        if idx.is_empty() {
            continue;
        }
        let top1 = |m: &Matrix| {
            idx.iter()
                .filter(|&&r| label_rank(m.row(r), class) == 0)
                .count() as f64
                / idx.len() as f64
        };
        let (b, c) = (top1(baseline), top1(composed));
        rows.push(ClasswiseRow {
            class_id: class,
            baseline_top1: b,
            composed_top1: c,
            delta: c - b,
            nn_distance,
        });
    }
    let dist: Vec<f64> = rows.iter().map(|r| r.nn_distance).collect();
    let delta: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    Ok(ClasswiseReport {
        spearman: spearman(&dist, &delta),
        rows,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of the average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
