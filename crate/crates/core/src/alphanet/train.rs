use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_grads, score_batch, AlphaModel, SubModule};
use crate::data::{FeatureDataset, Partition};
use crate::eval::{split_report, SplitReport};
use crate::numerics::sgd_momentum_step;
use crate::{Error, Result};

const SAMPLER_STREAM: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// The learning rate is multiplied by `lr_decay` every `lr_step` epochs.
    pub lr_step: usize,
    pub lr_decay: f64,
    /// L2 penalty on sub-module parameters.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 0.1,
            momentum: 0.9,
            batch_size: 64,
            lr_step: 20,
            lr_decay: 0.1,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.lr_step == 0 {
            return Err(Error::Config(
                "batch_size and lr_step must be positive".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Step schedule; `epoch` counts from 0.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr * cfg.lr_decay.powi((epoch / cfg.lr_step) as i32)
}

/// Every few-class train sample plus as many base-class train samples drawn
/// without replacement, shuffled together.
pub fn sample_epoch(ds: &FeatureDataset, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let few = ds.x_few();
    let mut base = ds.x_base();
    if base.len() < few.len() {
        return Err(Error::Config(format!(
            "{} base samples cannot balance {} few samples",
            base.len(),
            few.len()
        )));
    }
    let (picked, _) = base.partial_shuffle(rng, few.len());
    let mut out = few;
    out.extend_from_slice(picked);
    out.shuffle(rng);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub val: SplitReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog(pub Vec<EpochRecord>);

impl TrainLog {
    pub fn records(&self) -> &[EpochRecord] {
        &self.0
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        for r in &self.0 {
            serde_json::to_writer(&mut out, r).expect("epoch records serialize");
            out.write_all(b"\n").expect("write to vec");
        }
        String::from_utf8(out).expect("json is utf-8")
    }
}

/// Mutable state of a training run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub velocities: Vec<SubModule>,
    pub rng: ChaCha8Rng,
    pub best_few_top1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_modules: Vec<SubModule>,
}

impl TrainState {
    pub fn new(model: &AlphaModel, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(SAMPLER_STREAM);
        TrainState {
            epoch: 0,
            velocities: model
                .modules()
                .iter()
                .map(|m| SubModule::zeros(m.input_len(), m.fc1_w.rows(), m.output_len()))
                .collect(),
            rng,
            best_few_top1: None,
            best_epoch: None,
            best_modules: model.modules().to_vec(),
        }
    }

    /// Records `modules` as the best so far if `few_top1` strictly improves.
    fn offer(&mut self, few_top1: f64, modules: &[SubModule]) -> bool {
        if self.best_few_top1.is_some_and(|b| few_top1 <= b) {
            return false;
        }
        self.best_few_top1 = Some(few_top1);
        self.best_epoch = Some(self.epoch);
        self.best_modules = modules.to_vec();
        true
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// The model at the epoch with the best few-split validation top-1.
    pub model: AlphaModel,
    pub log: TrainLog,
    pub best_epoch: Option<usize>,
    pub best_few_top1: Option<f64>,
}

fn val_report(model: &AlphaModel, ds: &FeatureDataset) -> Result<SplitReport> {
    let (x, y) = ds.gather(&ds.indices(Partition::Val));
    let composed = model.export_composed()?;
    let scores = score_batch(&x, composed.as_bank())?;
    split_report(&scores, &y, ds.split())
}

fn as_training(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::Numeric(_) | Error::DegenerateAlpha { .. } => Error::Training {
            epoch,
            batch,
            msg: e.to_string(),
        },
        other => other,
    }
}

/// Trains every sub-module with SGD and momentum and returns the snapshot
/// with the best few-split validation top-1 (ties keep the earlier epoch).
pub fn fit(model: AlphaModel, ds: &FeatureDataset, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    if ds.split() != model.bank().split() {
        return Err(Error::Config(
            "dataset and bank disagree on the class split".into(),
        ));
    }
    let mut model = model;
    let mut state = TrainState::new(&model, cfg);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let lr = lr_at(cfg, epoch);
        let order = sample_epoch(ds, &mut state.rng)?;
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = ds.gather(chunk);
            let out = loss_and_grads(&model, &x, &y).map_err(|e| as_training(epoch, b, e))?;
            total += out.loss * chunk.len() as f64;
            for ((m, g), v) in model
                .modules_mut()
                .iter_mut()
                .zip(out.grads)
                .zip(state.velocities.iter_mut())
            {
                let mut g = g;
                if cfg.weight_decay > 0.0 {
                    let p = m.flat();
                    let mut flat = g.flat();
                    flat.iter_mut()
                        .zip(&p)
                        .for_each(|(gi, pi)| *gi += cfg.weight_decay * pi);
                    g.set_flat(&flat);
                }
                sgd_momentum_step(&mut m.fc1_w, &g.fc1_w, &mut v.fc1_w, lr, cfg.momentum)?;
                sgd_momentum_step(&mut m.fc1_b, &g.fc1_b, &mut v.fc1_b, lr, cfg.momentum)?;
                sgd_momentum_step(&mut m.fc2_w, &g.fc2_w, &mut v.fc2_w, lr, cfg.momentum)?;
                sgd_momentum_step(&mut m.fc2_b, &g.fc2_b, &mut v.fc2_b, lr, cfg.momentum)?;
                if m.tensors()
                    .iter()
                    .any(|t| t.as_slice().iter().any(|p| !p.is_finite()))
                {
                    return Err(Error::Training {
                        epoch,
                        batch: b,
                        msg: "non-finite parameter after update".into(),
                    });
                }
            }
        }
        let val = val_report(&model, ds).map_err(|e| as_training(epoch, 0, e))?;
        if let Some(few) = &val.few {
            state.offer(few.top1, model.modules());
        }
        log.0.push(EpochRecord {
            epoch,
            loss: total / order.len().max(1) as f64,
            lr,
            val,
        });
    }
    if state.best_epoch.is_some() {
        model.modules_mut().clone_from_slice(&state.best_modules);
    }
    Ok(FitOutcome {
        model,
        log,
        best_epoch: state.best_epoch,
        best_few_top1: state.best_few_top1,
    })
}
