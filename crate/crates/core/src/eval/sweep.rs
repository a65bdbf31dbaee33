use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classwise_report, split_report, ClasswiseReport, SplitReport};
use crate::alphanet::{fit, score_batch, AlphaConfig, AlphaModel, FitOutcome, TrainConfig};
use crate::data::{ClassifierBank, ComposedBank, FeatureDataset, Partition};
use crate::neighbors::ClassMeans;
use crate::{Error, Result};

/// Everything needed for one train-and-evaluate run.
#[derive(Clone, Debug)]
pub struct Experiment<'a> {
    pub dataset: &'a FeatureDataset,
    pub bank: Arc<ClassifierBank>,
    pub means: ClassMeans,
    pub alpha: AlphaConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub fit: FitOutcome,
    pub composed: ComposedBank,
    /// Test-partition report of the source bank.
    pub baseline: SplitReport,
    /// Test-partition report of the composed bank.
    pub report: SplitReport,
    pub classwise: ClasswiseReport,
}

impl Experiment<'_> {
    pub fn run(&self) -> Result<RunResult> {
        let model = AlphaModel::new(self.bank.clone(), &self.means, self.alpha.clone())?;
        let fit = fit(model, self.dataset, &self.train)?;
        let composed = fit.model.export_composed()?;
        let (x, y) = self.dataset.gather(&self.dataset.indices(Partition::Test));
        let base_scores = score_batch(&x, &self.bank)?;
        let comp_scores = score_batch(&x, composed.as_bank())?;
        let split = self.dataset.split();
        let distances: Vec<(usize, f64)> = fit
            .model
            .neighbor_sets()
            .iter()
            .map(|s| (s.target(), s.nearest_distance().unwrap_or(0.0)))
            .collect();
        Ok(RunResult {
            baseline: split_report(&base_scores, &y, split)?,
            report: split_report(&comp_scores, &y, split)?,
            classwise: classwise_report(&base_scores, &comp_scores, &y, &distances)?,
            composed,
            fit,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub report: SplitReport,
}

/// Worker count for sweeps: `ALPHANET_THREADS` if set, else the number of
/// available cores.
pub fn sweep_threads() -> Result<usize> {
    match std::env::var("ALPHANET_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "ALPHANET_THREADS must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `cell` on every value on a pool of `threads` workers. Results keep
/// the order of `values`; the first failing cell in that order wins.
pub fn run_sweep<T, R, F>(values: &[T], threads: usize, cell: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start sweep workers: {e}")))?;
    let results: Vec<Result<R>> = pool.install(|| values.par_iter().map(&cell).collect());
    results.into_iter().collect()
}

/// One full run per `γ`; everything else is shared.
pub fn gamma_sweep(exp: &Experiment<'_>, gammas: &[f64], threads: usize) -> Result<Vec<SweepRow>> {
    for &g in gammas {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {g}")));
        }
    }
    run_sweep(gammas, threads, |&g| {
        let mut e = exp.clone();
        e.alpha.gamma = g;
        Ok(SweepRow {
            param: g,
            report: e.run()?.report,
        })
    })
}

/// One full run per neighbor count `K`.
pub fn topk_sweep(exp: &Experiment<'_>, ks: &[usize], threads: usize) -> Result<Vec<SweepRow>> {
    let n_base = exp.dataset.split().n_base();
    if let Some(&k) = ks.iter().find(|&&k| k > n_base) {
        return Err(Error::Config(format!(
            "top-k {k} exceeds the {n_base} base classes"
        )));
    }
    run_sweep(ks, threads, |&k| {
        let mut e = exp.clone();
        e.alpha.top_k = k;
        Ok(SweepRow {
            param: k as f64,
            report: e.run()?.report,
        })
    })
}
