//! Synthetic long-tailed Gaussian-cluster datasets and the frozen baseline
//! classifier bank trained on them.
//!
//! Class `c` has train count `round(head * (tail/head)^(u^p))` with
//! `u = c / (N - 1)` and `p` the decay exponent, so class 0 gets
//! `head_count` samples, the last class `tail_count`, and the profile is
//! nonincreasing in between. Larger `p` keeps counts high for longer before
//! dropping into the tail.
//!
//! Base-class means are standard normal. Each few-class mean mixes a
//! randomly chosen base mean (its anchor) with a fresh draw:
//! `rho * anchor + (1 - rho) * fresh`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{
    assign_splits, ClassifierBank, FeatureDataset, Partition, SplitSpec, SplitThresholds,
};
use crate::numerics::{self, Matrix, Tensor, Vector};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Decay {
    /// See the module docs for the curve.
    Power { exponent: f64 },
    /// One train count per class.
    Explicit { counts: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub head_count: usize,
    pub tail_count: usize,
    pub decay: Decay,
    /// Per-coordinate standard deviation of samples around their class mean.
    pub spread: f64,
    /// Fraction of each few-class mean inherited from its anchor base mean.
    pub rho: f64,
    /// Optional per-few-class override of `rho`, in few-class order.
    pub few_rho: Option<Vec<f64>>,
    pub thresholds: SplitThresholds,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_classes: 50,
            feature_dim: 16,
            head_count: 200,
            tail_count: 5,
            decay: Decay::Power { exponent: 2.2 },
            spread: 1.0,
            rho: 0.7,
            few_rho: None,
            thresholds: SplitThresholds::default(),
            val_per_class: 20,
            test_per_class: 50,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.tail_count < 2 {
            return bad(format!("tail_count must be >= 2, got {}", self.tail_count));
        }
        if self.head_count <= self.tail_count {
            return bad(format!(
                "head_count {} must exceed tail_count {}",
                self.head_count, self.tail_count
            ));
        }
        if !(self.spread > 0.0) {
            return bad(format!("spread must be > 0, got {}", self.spread));
        }
        let rho_ok = |r: f64| (0.0..=1.0).contains(&r);
        if !rho_ok(self.rho) || self.few_rho.iter().flatten().any(|&r| !rho_ok(r)) {
            return bad("rho values must lie in [0, 1]".into());
        }
        match &self.decay {
            Decay::Power { exponent } if !(*exponent > 0.0) => {
                bad(format!("decay exponent must be > 0, got {exponent}"))
            }
            Decay::Explicit { counts } if counts.len() != self.n_classes => bad(format!(
                "{} explicit counts for {} classes",
                counts.len(),
                self.n_classes
            )),
            _ => self.thresholds.validate(),
        }
    }

    /// Train-sample count of every class.
    pub fn train_counts(&self) -> Vec<usize> {
        match &self.decay {
            Decay::Explicit { counts } => counts.clone(),
            Decay::Power { exponent } => {
                let (head, tail) = (self.head_count as f64, self.tail_count as f64);
                let last = (self.n_classes - 1) as f64;
                (0..self.n_classes)
                    .map(|c| {
                        let u = c as f64 / last;
                        (head * (tail / head).powf(u.powf(*exponent))).round() as usize
                    })
                    .collect()
            }
        }
    }
}

/// Everything [`generate`] produces.
#[derive(Clone, Debug)]
pub struct Generated {
    pub dataset: FeatureDataset,
    pub split: SplitSpec,
    /// True class means, one row per class.
    pub means: Matrix,
    /// For each class: the base class whose mean a few class inherited from.
    pub anchors: Vec<Option<usize>>,
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Independent RNG stream for one stage of generation.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate(cfg: &GenConfig) -> Result<Generated> {
    cfg.validate()?;
    let counts = cfg.train_counts();
    let split = assign_splits(&counts, &cfg.thresholds)?;
    let (base, few) = (split.base_classes(), split.few_classes());
    if few.is_empty() {
        return Err(Error::Config(format!(
            "no class has fewer than {} train samples; counts {:?}",
            cfg.thresholds.few_below, counts
        )));
    }
    if base.is_empty() {
        return Err(Error::Config("every class falls in the few split".into()));
    }
    if let Some(r) = &cfg.few_rho {
        if r.len() != few.len() {
            return Err(Error::Config(format!(
                "few_rho has {} entries for {} few classes",
                r.len(),
                few.len()
            )));
        }
    }

    let d = cfg.feature_dim;
    let mut base_rng = stream(cfg.seed, 1);
    let mut few_rng = stream(cfg.seed, 2);
    let mut sample_rng = stream(cfg.seed, 3);

    let mut means = Matrix::zeros(cfg.n_classes, d);
    for &c in &base {
        means
            .row_mut(c)
            .copy_from_slice(&normal_vec(&mut base_rng, d));
    }
    let mut anchors = vec![None; cfg.n_classes];
    for (j, &c) in few.iter().enumerate() {
        let rho = cfg.few_rho.as_ref().map_or(cfg.rho, |r| r[j]);
        let anchor = base[few_rng.random_range(0..base.len())];
        let fresh = normal_vec(&mut few_rng, d);
        let mixed: Vec<f64> = means
            .row(anchor)
            .iter()
            .zip(&fresh)
            .map(|(a, f)| rho * a + (1.0 - rho) * f)
            .collect();
        means.row_mut(c).copy_from_slice(&mixed);
        anchors[c] = Some(anchor);
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut parts = Vec::new();
    let plan = [
        (Partition::Train, None),
        (Partition::Val, Some(cfg.val_per_class)),
        (Partition::Test, Some(cfg.test_per_class)),
    ];
    for (part, per_class) in plan {
        for c in 0..cfg.n_classes {
            for _ in 0..per_class.unwrap_or(counts[c]) {
                let noise = normal_vec(&mut sample_rng, d);
                data.extend(
                    means
                        .row(c)
                        .iter()
                        .zip(&noise)
                        .map(|(m, z)| m + cfg.spread * z),
                );
                labels.push(c);
                parts.push(part);
            }
        }
    }
    let features = Matrix::new(labels.len(), d, data)?;
    let dataset = FeatureDataset::new(
        cfg.n_classes,
        features,
        labels,
        parts,
        &cfg.thresholds,
        format!("synthetic gaussian seed {}", cfg.seed),
    )?;
    Ok(Generated {
        split: dataset.split().clone(),
        dataset,
        means,
        anchors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epochs: 30,
            lr: 0.05,
            batch_size: 32,
            momentum: 0.9,
        }
    }
}

/// Jointly trains one linear classifier per class by minibatch softmax
/// cross-entropy over the (imbalanced) train partition.
pub fn train_baseline(
    ds: &FeatureDataset,
    cfg: &BaselineConfig,
    seed: u64,
) -> Result<ClassifierBank> {
    let train = ds.indices(Partition::Train);
    if train.is_empty() {
        return Err(Error::Data("train partition is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let (n, d) = (ds.n_classes(), ds.feature_dim());
    let mut w = Matrix::zeros(n, d);
    let mut b = Vector::zeros(n);
    let mut vw = Matrix::zeros(n, d);
    let mut vb = Vector::zeros(n);
    let mut gw = Matrix::zeros(n, d);
    let mut gb = Vector::zeros(n);
    let mut rng = stream(seed, 7);
    let mut order = train;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            gw.as_mut_slice().fill(0.0);
            gb.as_mut_slice().fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &i in chunk {
                let x = ds.feature(i);
                let scores = numerics::affine(&w, x, &b)?;
                let (l, g) = numerics::softmax_xent(&scores, ds.label(i))?;
                loss += l;
                for (c, gc) in g.iter().enumerate() {
                    let gc = gc * scale;
                    gb.as_mut_slice()[c] += gc;
                    for (dst, xv) in gw.row_mut(c).iter_mut().zip(x) {
                        *dst += gc * xv;
                    }
                }
            }
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch,
                    msg: format!("baseline loss is {loss}"),
                });
            }
            numerics::sgd_momentum_step(&mut w, &gw, &mut vw, cfg.lr, cfg.momentum)?;
            numerics::sgd_momentum_step(&mut b, &gb, &mut vb, cfg.lr, cfg.momentum)?;
        }
    }
    if w.as_slice()
        .iter()
        .chain(b.as_slice())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Training {
            epoch: cfg.epochs,
            batch: 0,
            msg: "baseline parameters are not finite".into(),
        });
    }
    ClassifierBank::new(
        w,
        b,
        ds.split().clone(),
        format!("baseline-logreg seed {seed}"),
    )
}
