//! Per-few-class sub-modules that learn how to recompose weak classifiers.
//!
//! For few class `i`, sub-module `A_i` maps the flattened PCA-reduced
//! classifiers of `i` and its `K` nearest base classes to `K + 1` raw
//! coefficients. Each forward pass then applies, exactly once and in this
//! order:
//!
//! 1. normalization by the sum of magnitudes,
//! 2. clamping (`|α_0| ≤ γ`, `|α_k| ≥ (1 − γ)/K` for `k ≥ 1`),
//! 3. composition `U_i = Σ α_k W_k`, `t_i = Σ α_k b_k` over the full-dimension
//!    classifiers.
//!
//! The stage order is enforced by the type parameter of [`AlphaVector`].

mod grad;
mod snapshot;
mod train;

use std::marker::PhantomData;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassifierBank, ComposedBank};
use crate::neighbors::{self, ClassMeans, NeighborSet, PcaProjection};
use crate::numerics::{self, Matrix, Tensor, Vector};
use crate::{Error, Result};

pub use grad::{loss_and_grads, BatchLoss};
pub use snapshot::{load_model, save_model};
pub use train::{
    fit, lr_at, sample_epoch, EpochRecord, FitOutcome, TrainConfig, TrainLog, TrainState,
};

/// Denominator smoothing for normalization outside strict mode.
pub const TRAIN_EPS: f64 = 1e-12;

/// Hyperparameters of the alpha model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaConfig {
    pub gamma: f64,
    pub top_k: usize,
    /// PCA output dimension `d`.
    pub reduced_dim: usize,
    /// Width of the first fc layer; `None` means `reduced_dim`.
    pub hidden: Option<usize>,
    pub leaky_slope: f64,
    /// Fail on an all-zero raw alpha instead of smoothing the denominator.
    pub strict_alpha: bool,
    pub init: InitConfig,
    pub seed: u64,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        AlphaConfig {
            gamma: 0.6,
            top_k: 5,
            reduced_dim: 8,
            hidden: None,
            leaky_slope: 0.01,
            strict_alpha: false,
            init: InitConfig::default(),
            seed: 0,
        }
    }
}

/// Initialization: weights uniform in `±1/√fan_in`, the second layer's
/// weights further scaled by `fc2_weight_scale`, and the second layer's bias
/// set to `[γ − m, (1 − γ + m)/K, …]` with `m = margin · γ` so training starts
/// just inside the clamp bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub fc2_weight_scale: f64,
    pub margin: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            fc2_weight_scale: 0.01,
            margin: 0.05,
        }
    }
}

impl AlphaConfig {
    pub fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or(self.reduced_dim)
    }

    pub fn norm_eps(&self) -> f64 {
        if self.strict_alpha {
            0.0
        } else {
            TRAIN_EPS
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.reduced_dim == 0 || self.hidden_width() == 0 {
            return Err(Error::Config(
                "reduced_dim and hidden width must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!(
                "leaky_slope must lie in [0, 1), got {}",
                self.leaky_slope
            )));
        }
        if !(self.init.margin >= 0.0 && self.init.margin < 1.0) {
            return Err(Error::Config(format!(
                "init margin must lie in [0, 1), got {}",
                self.init.margin
            )));
        }
        Ok(())
    }
}

pub trait Stage {
    const STAGE: AlphaStage;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaStage {
    Raw,
    Normalized,
    Clamped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Raw;
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Normalized;
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Clamped;

impl Stage for Raw {
    const STAGE: AlphaStage = AlphaStage::Raw;
}
impl Stage for Normalized {
    const STAGE: AlphaStage = AlphaStage::Normalized;
}
impl Stage for Clamped {
    const STAGE: AlphaStage = AlphaStage::Clamped;
}

/// Coefficients `α_0..α_K`; slot 0 weights the class's own classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaVector<S: Stage> {
    values: Vec<f64>,
    _stage: PhantomData<S>,
}

impl<S: Stage> AlphaVector<S> {
    fn wrap(values: Vec<f64>) -> Self {
        AlphaVector {
            values,
            _stage: PhantomData,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn stage(&self) -> AlphaStage {
        S::STAGE
    }

    pub fn abs_sum(&self) -> f64 {
        self.values.iter().map(|a| a.abs()).sum()
    }
}

impl AlphaVector<Raw> {
    pub fn raw(values: Vec<f64>) -> Self {
        Self::wrap(values)
    }
}

impl AlphaVector<Clamped> {
    /// Bypasses normalization and clamping, e.g. to force `[1, 0, …, 0]`.
    pub fn forced(values: Vec<f64>) -> Self {
        Self::wrap(values)
    }
}

/// `α / Σ|α|`. Fails when every raw coefficient is zero.
pub fn normalize_alpha(a: &AlphaVector<Raw>) -> Result<AlphaVector<Normalized>> {
    normalize_alpha_eps(a, 0.0)
}

/// Like [`normalize_alpha`] but with `eps` added to the denominator.
pub fn normalize_alpha_eps(a: &AlphaVector<Raw>, eps: f64) -> Result<AlphaVector<Normalized>> {
    numerics::abs_normalize(&a.values, eps)
        .map(AlphaVector::wrap)
        .ok_or(Error::DegenerateAlpha { class: None })
}

/// Applies both clamp bounds; the result is not renormalized.
pub fn clamp_alpha(a: &AlphaVector<Normalized>, gamma: f64) -> AlphaVector<Clamped> {
    AlphaVector::wrap(numerics::clamp_alpha_bounds(&a.values, gamma).0)
}

/// `(U, t) = (Σ α_k W_k, Σ α_k p_k)` over the full-dimension classifiers.
pub fn compose(a: &AlphaVector<Clamped>, nb: &NeighborSet) -> Result<(Vec<f64>, f64)> {
    if a.len() != nb.len() {
        return Err(Error::shape(
            "compose",
            format!("alpha[{}]", a.len()),
            format!("{} classifiers", nb.len()),
        ));
    }
    let mut u = vec![0.0; nb.full().cols()];
    for (k, &alpha) in a.values.iter().enumerate() {
        for (dst, w) in u.iter_mut().zip(nb.full().row(k)) {
            *dst += alpha * w;
        }
    }
    let t = numerics::dot(&a.values, nb.biases());
    Ok((u, t))
}

/// Two fully connected layers with a leaky ReLU in between. Weight matrices
/// are stored output-major (`out x in`).
#[derive(Clone, Debug, PartialEq)]
pub struct SubModule {
    pub fc1_w: Matrix,
    pub fc1_b: Vector,
    pub fc2_w: Matrix,
    pub fc2_b: Vector,
}

impl SubModule {
    pub fn zeros(input: usize, hidden: usize, outputs: usize) -> Self {
        SubModule {
            fc1_w: Matrix::zeros(hidden, input),
            fc1_b: Vector::zeros(hidden),
            fc2_w: Matrix::zeros(outputs, hidden),
            fc2_b: Vector::zeros(outputs),
        }
    }

    pub fn init(
        input: usize,
        hidden: usize,
        k: usize,
        cfg: &AlphaConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let mut m = SubModule::zeros(input, hidden, k + 1);
        let b1 = 1.0 / (input as f64).sqrt();
        let b2 = cfg.init.fc2_weight_scale / (hidden as f64).sqrt();
        m.fc1_w
            .as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-b1..=b1));
        m.fc1_b
            .as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-b1..=b1));
        m.fc2_w
            .as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-b2..=b2));
        let bias = m.fc2_b.as_mut_slice();
        if k == 0 {
            bias[0] = 1.0;
        } else {
            let shift = cfg.init.margin * cfg.gamma;
            bias[0] = cfg.gamma - shift;
            let rest = (1.0 - cfg.gamma + shift) / k as f64;
            bias[1..].iter_mut().for_each(|b| *b = rest);
        }
        m
    }

    pub fn input_len(&self) -> usize {
        self.fc1_w.cols()
    }

    pub fn output_len(&self) -> usize {
        self.fc2_w.rows()
    }

    pub fn tensors(&self) -> [&dyn Tensor; 4] {
        [&self.fc1_w, &self.fc1_b, &self.fc2_w, &self.fc2_b]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }

    /// All parameters, concatenated in `fc1_w, fc1_b, fc2_w, fc2_b` order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.as_slice().to_vec())
            .collect()
    }

    /// Inverse of [`SubModule::flat`].
    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for t in [
            &mut self.fc1_w as &mut dyn Tensor,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ] {
            let dst = t.as_mut_slice();
            dst.copy_from_slice(&flat[at..at + dst.len()]);
            at += dst.len();
        }
    }
}

/// Raw alphas for one flattened input.
pub fn submodule_forward(m: &SubModule, input: &[f64], slope: f64) -> Result<AlphaVector<Raw>> {
    if input.len() != m.input_len() {
        return Err(Error::shape(
            "submodule_forward",
            m.input_len(),
            input.len(),
        ));
    }
    let h = numerics::affine(&m.fc1_w, input, &m.fc1_b)?;
    let h = numerics::leaky_relu(&h, slope);
    Ok(AlphaVector::raw(numerics::affine(&m.fc2_w, &h, &m.fc2_b)?))
}

/// Every intermediate alpha of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaTrace {
    pub raw: AlphaVector<Raw>,
    pub normalized: AlphaVector<Normalized>,
    pub clamped: AlphaVector<Clamped>,
}

/// The trainable model: one sub-module per few class plus the frozen inputs
/// they read.
#[derive(Clone, Debug)]
pub struct AlphaModel {
    config: AlphaConfig,
    bank: Arc<ClassifierBank>,
    projection: PcaProjection,
    sets: Vec<NeighborSet>,
    modules: Vec<SubModule>,
}

impl AlphaModel {
    /// Fits the shared PCA on the bank's classifiers, selects neighbors from
    /// `means`, and initializes one sub-module per few class.
    pub fn new(bank: Arc<ClassifierBank>, means: &ClassMeans, config: AlphaConfig) -> Result<Self> {
        config.validate()?;
        let projection = neighbors::fit_classifier_pca(&bank, config.reduced_dim)?;
        let sets = neighbors::build_all(&bank, means, &projection, config.top_k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let input = (config.top_k + 1) * config.reduced_dim;
        let modules = sets
            .iter()
            .map(|_| {
                SubModule::init(
                    input,
                    config.hidden_width(),
                    config.top_k,
                    &config,
                    &mut rng,
                )
            })
            .collect();
        Ok(AlphaModel {
            config,
            bank,
            projection,
            sets,
            modules,
        })
    }

    pub fn from_parts(
        bank: Arc<ClassifierBank>,
        config: AlphaConfig,
        projection: PcaProjection,
        sets: Vec<NeighborSet>,
        modules: Vec<SubModule>,
    ) -> Result<Self> {
        config.validate()?;
        if sets.len() != modules.len() {
            return Err(Error::Integrity(format!(
                "{} neighbor sets but {} sub-modules",
                sets.len(),
                modules.len()
            )));
        }
        for (s, m) in sets.iter().zip(&modules) {
            if bank.split().is_base(s.target()) {
                return Err(Error::Integrity(format!(
                    "class {} is not a few class",
                    s.target()
                )));
            }
            if m.input_len() != s.flattened_input().len() || m.output_len() != s.len() {
                return Err(Error::Integrity(format!(
                    "sub-module for class {} does not match its neighbor set",
                    s.target()
                )));
            }
        }
        Ok(AlphaModel {
            config,
            bank,
            projection,
            sets,
            modules,
        })
    }

    pub fn config(&self) -> &AlphaConfig {
        &self.config
    }

    pub fn bank(&self) -> &ClassifierBank {
        &self.bank
    }

    pub fn bank_arc(&self) -> &Arc<ClassifierBank> {
        &self.bank
    }

    pub fn projection(&self) -> &PcaProjection {
        &self.projection
    }

    pub fn neighbor_sets(&self) -> &[NeighborSet] {
        &self.sets
    }

    pub fn modules(&self) -> &[SubModule] {
        &self.modules
    }

    pub fn modules_mut(&mut self) -> &mut [SubModule] {
        &mut self.modules
    }

    pub fn few_classes(&self) -> Vec<usize> {
        self.sets.iter().map(NeighborSet::target).collect()
    }

    /// Forward pass of sub-module `slot` through every alpha stage.
    pub fn alpha_trace(&self, slot: usize) -> Result<AlphaTrace> {
        let set = &self.sets[slot];
        let raw = submodule_forward(
            &self.modules[slot],
            &set.flattened_input(),
            self.config.leaky_slope,
        )?;
        let normalized =
            normalize_alpha_eps(&raw, self.config.norm_eps()).map_err(|e| match e {
                Error::DegenerateAlpha { .. } => Error::DegenerateAlpha {
                    class: Some(set.target()),
                },
                other => other,
            })?;
        let clamped = clamp_alpha(&normalized, self.config.gamma);
        Ok(AlphaTrace {
            raw,
            normalized,
            clamped,
        })
    }

    /// Composed few-class rows merged with the untouched base rows.
    pub fn export_composed(&self) -> Result<ComposedBank> {
        let rows = (0..self.sets.len())
            .map(|slot| {
                let trace = self.alpha_trace(slot)?;
                let (u, t) = compose(&trace.clamped, &self.sets[slot])?;
                Ok((self.sets[slot].target(), u, t))
            })
            .collect::<Result<Vec<_>>>()?;
        ComposedBank::from_source(&self.bank, &rows)
    }

    /// Composition with explicitly given alphas, one per few class.
    pub fn export_with_alphas(&self, alphas: &[AlphaVector<Clamped>]) -> Result<ComposedBank> {
        if alphas.len() != self.sets.len() {
            return Err(Error::shape(
                "export_with_alphas",
                self.sets.len(),
                alphas.len(),
            ));
        }
        let rows = alphas
            .iter()
            .zip(&self.sets)
            .map(|(a, s)| compose(a, s).map(|(u, t)| (s.target(), u, t)))
            .collect::<Result<Vec<_>>>()?;
        ComposedBank::from_source(&self.bank, &rows)
    }
}

/// `X Wᵀ + b` for every sample against every class of `bank`.
pub fn score_batch(features: &Matrix, bank: &ClassifierBank) -> Result<Matrix> {
    if features.cols() != bank.feature_dim() {
        return Err(Error::shape(
            "score_batch",
            features.shape(),
            bank.weights().shape(),
        ));
    }
    let n = bank.n_classes();
    let mut out = Matrix::zeros(features.rows(), n);
    for (r, x) in features.row_iter().enumerate() {
        let dst = out.row_mut(r);
        for (c, d) in dst.iter_mut().enumerate() {
            *d = numerics::dot(x, bank.weight(c)) + bank.bias(c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{assign_splits, SplitThresholds};

    #[test]
    fn normalize_examples() {
        let n = normalize_alpha(&AlphaVector::raw(vec![-1.0, 1.0, 2.0])).unwrap();
        assert_eq!(n.values(), &[-0.25, 0.25, 0.5]);
        assert_eq!(n.stage(), AlphaStage::Normalized);
        assert_eq!(
            normalize_alpha(&AlphaVector::raw(vec![5.0]))
                .unwrap()
                .values(),
            &[1.0]
        );
        let again = normalize_alpha(&AlphaVector::raw(n.values().to_vec())).unwrap();
        for (a, b) in n.values().iter().zip(again.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            normalize_alpha(&AlphaVector::raw(vec![0.0; 3])),
            Err(Error::DegenerateAlpha { class: None })
        ));
        assert!(normalize_alpha_eps(&AlphaVector::raw(vec![0.0; 3]), TRAIN_EPS).is_ok());
    }

    #[test]
    fn clamp_examples() {
        let n =
            normalize_alpha(&AlphaVector::raw(vec![0.9, 0.02, 0.02, 0.02, 0.02, 0.02])).unwrap();
        let c = clamp_alpha(&n, 0.6);
        assert_eq!(c.stage(), AlphaStage::Clamped);
        assert!((c.values()[0] - 0.6).abs() < 1e-15);
        assert!(c.values()[1..].iter().all(|v| (v - 0.08).abs() < 1e-15));

        let n = normalize_alpha(&AlphaVector::raw(vec![-0.7, 0.1, 0.1, 0.05, 0.05])).unwrap();
        assert_eq!(clamp_alpha(&n, 0.6).values()[0], -0.6);

        let n = normalize_alpha(&AlphaVector::raw(vec![0.9, 0.02, -0.08])).unwrap();
        assert_eq!(clamp_alpha(&n, 1.0).values(), n.values());
    }

    fn toy_set() -> NeighborSet {
        // Two classes in 2-D: class 0 is few, class 1 base.
        let split = assign_splits(&[5, 150], &SplitThresholds::default()).unwrap();
        let w = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = Vector::new(vec![2.0, 4.0]).unwrap();
        let bank = ClassifierBank::new(w, b, split, "toy").unwrap();
        let proj = neighbors::fit_classifier_pca(&bank, 1).unwrap();
        let nn = [neighbors::Neighbor {
            class: 1,
            distance: 1.0,
        }];
        neighbors::build_neighbor_set(&bank, &proj, &nn, 0).unwrap()
    }

    #[test]
    fn compose_examples() {
        let set = toy_set();
        let (u, t) = compose(&AlphaVector::forced(vec![0.5, 0.5]), &set).unwrap();
        assert_eq!(u, vec![0.5, 0.5]);
        assert_eq!(t, 3.0);
        let (u, t) = compose(&AlphaVector::forced(vec![1.0, 0.0]), &set).unwrap();
        assert_eq!((u, t), (vec![1.0, 0.0], 2.0));
        assert!(compose(&AlphaVector::forced(vec![1.0]), &set).is_err());
    }

    #[test]
    fn submodule_forward_examples() {
        let m = SubModule::zeros(4, 3, 2);
        assert_eq!(
            submodule_forward(&m, &[1.0, 2.0, 3.0, 4.0], 0.01)
                .unwrap()
                .values(),
            &[0.0, 0.0]
        );

        // Route input coordinate 2 straight through to output 1.
        let mut m = SubModule::zeros(4, 3, 2);
        m.fc1_w.set(0, 2, 1.0);
        m.fc2_w.set(1, 0, 1.0);
        let out = submodule_forward(&m, &[9.0, -1.0, 0.75, 3.0], 0.01).unwrap();
        assert_eq!(out.values(), &[0.0, 0.75]);
        assert!(submodule_forward(&m, &[1.0], 0.01).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let cfg = AlphaConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = SubModule::init(12, 4, 2, &cfg, &mut rng);
        let mut z = SubModule::zeros(12, 4, 3);
        z.set_flat(&m.flat());
        assert_eq!(z, m);
        assert_eq!(m.n_params(), 12 * 4 + 4 + 4 * 3 + 3);
    }

    #[test]
    fn init_starts_inside_clamp_bounds() {
        let cfg = AlphaConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = SubModule::init(48, 8, 5, &cfg, &mut rng);
        let x: Vec<f64> = (0..48).map(|i| (i as f64 * 0.7).sin()).collect();
        let raw = submodule_forward(&m, &x, cfg.leaky_slope).unwrap();
        let n = normalize_alpha(&raw).unwrap();
        assert!(n.values()[0].abs() < cfg.gamma);
        assert!(n.values()[1..]
            .iter()
            .all(|a| a.abs() > (1.0 - cfg.gamma) / 5.0));
    }

    #[test]
    fn config_validation() {
        assert!(AlphaConfig {
            gamma: 0.0,
            ..AlphaConfig::default()
        }
        .validate()
        .is_err());
        assert!(AlphaConfig {
            gamma: 1.0,
            ..AlphaConfig::default()
        }
        .validate()
        .is_ok());
        assert!(AlphaConfig {
            leaky_slope: 1.0,
            ..AlphaConfig::default()
        }
        .validate()
        .is_err());
        assert_eq!(
            AlphaConfig {
                hidden: Some(3),
                ..AlphaConfig::default()
            }
            .hidden_width(),
            3
        );
    }
}
