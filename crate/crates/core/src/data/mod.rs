//! Classifier banks, feature datasets, and the many/medium/few split.

mod store;
mod tensor_file;

use serde::{Deserialize, Serialize};

use crate::numerics::{self, Matrix, Tensor, Vector};
use crate::{Error, Result};

pub use store::{
    atomic_write, load_bank, load_composed, load_dataset, save_bank, save_composed, save_dataset,
    Manifest,
};
pub use tensor_file::{decode_tensor, encode_tensor, read_tensor, write_tensor, AnyTensor, MAGIC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Many,
    Medium,
    Few,
}

impl SplitLabel {
    pub fn is_base(self) -> bool {
        !matches!(self, SplitLabel::Few)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Many => "many",
            SplitLabel::Medium => "medium",
            SplitLabel::Few => "few",
        }
    }
}

/// Train-count thresholds: `many` iff count > `many_above`, `few` iff
/// count < `few_below`, `medium` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitThresholds {
    pub many_above: usize,
    pub few_below: usize,
}

impl Default for SplitThresholds {
    fn default() -> Self {
        SplitThresholds {
            many_above: 100,
            few_below: 20,
        }
    }
}

impl SplitThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.few_below > self.many_above + 1 {
            return Err(Error::Config(format!(
                "few threshold {} overlaps many threshold {}",
                self.few_below, self.many_above
            )));
        }
        Ok(())
    }

    pub fn label(&self, count: usize) -> SplitLabel {
        if count > self.many_above {
            SplitLabel::Many
        } else if count < self.few_below {
            SplitLabel::Few
        } else {
            SplitLabel::Medium
        }
    }
}

/// Per-class split labels together with the train counts they came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    labels: Vec<SplitLabel>,
    counts: Vec<usize>,
}

/// Labels every class from its train-sample count.
pub fn assign_splits(counts: &[usize], thresholds: &SplitThresholds) -> Result<SplitSpec> {
    if counts.is_empty() {
        return Err(Error::Config("no classes to split".into()));
    }
    thresholds.validate()?;
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("class {c} has no train samples")));
    }
    Ok(SplitSpec {
        labels: counts.iter().map(|&n| thresholds.label(n)).collect(),
        counts: counts.to_vec(),
    })
}

impl SplitSpec {
    /// Rebuilds a spec from stored labels, checking lengths only.
    pub fn from_parts(labels: Vec<SplitLabel>, counts: Vec<usize>) -> Result<Self> {
        if labels.len() != counts.len() {
            return Err(Error::Integrity(format!(
                "{} split labels but {} counts",
                labels.len(),
                counts.len()
            )));
        }
        Ok(SplitSpec { labels, counts })
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[SplitLabel] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn label(&self, class: usize) -> SplitLabel {
        self.labels[class]
    }

    pub fn is_base(&self, class: usize) -> bool {
        self.labels[class].is_base()
    }

    pub fn base_classes(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&c| self.is_base(c))
            .collect()
    }

    pub fn few_classes(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&c| !self.is_base(c))
            .collect()
    }

    pub fn n_base(&self) -> usize {
        self.labels.iter().filter(|l| l.is_base()).count()
    }

    pub fn n_few(&self) -> usize {
        self.n_classes() - self.n_base()
    }
}

/// Last layer of a frozen model: one weight row and one bias per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierBank {
    weights: Matrix,
    biases: Vector,
    split: SplitSpec,
    provenance: String,
}

impl ClassifierBank {
    pub fn new(
        weights: Matrix,
        biases: Vector,
        split: SplitSpec,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if weights.rows() != biases.len() || weights.rows() != split.n_classes() {
            return Err(Error::Integrity(format!(
                "bank has {} weight rows, {} biases, {} split labels",
                weights.rows(),
                biases.len(),
                split.n_classes()
            )));
        }
        Ok(ClassifierBank {
            weights,
            biases,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &Vector {
        &self.biases
    }

    pub fn weight(&self, class: usize) -> &[f64] {
        self.weights.row(class)
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.biases[class]
    }

    pub fn split(&self) -> &SplitSpec {
        &self.split
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// `W x + b` over all classes.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        numerics::affine(&self.weights, x, &self.biases)
    }
}

/// A bank in which the few-class rows have been replaced by composed
/// classifiers. Base rows are copied from the source untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedBank {
    bank: ClassifierBank,
}

impl ComposedBank {
    /// Copies `source` and overwrites the given few-class rows with
    /// `(class, classifier, bias)`.
    pub fn from_source(source: &ClassifierBank, rows: &[(usize, Vec<f64>, f64)]) -> Result<Self> {
        let mut weights = source.weights.clone();
        let mut biases = source.biases.clone();
        for (class, w, t) in rows {
            let class = *class;
            if class >= source.n_classes() {
                return Err(Error::Index {
                    index: class,
                    len: source.n_classes(),
                });
            }
            if source.split.is_base(class) {
                return Err(Error::Integrity(format!(
                    "class {class} is a base class and cannot be recomposed"
                )));
            }
            if w.len() != source.feature_dim() {
                return Err(Error::shape("compose row", source.feature_dim(), w.len()));
            }
            if !t.is_finite() || w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "composed row for class {class} is not finite"
                )));
            }
            weights.row_mut(class).copy_from_slice(w);
            biases.as_mut_slice()[class] = *t;
        }
        let bank = ClassifierBank {
            weights,
            biases,
            split: source.split.clone(),
            provenance: format!("composed from: {}", source.provenance),
        };
        Ok(ComposedBank { bank })
    }

    /// Wraps a bank loaded from disk.
    pub fn from_bank(bank: ClassifierBank) -> Self {
        ComposedBank { bank }
    }

    pub fn as_bank(&self) -> &ClassifierBank {
        &self.bank
    }

    pub fn into_bank(self) -> ClassifierBank {
        self.bank
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn code(self) -> u8 {
        match self {
            Partition::Train => 0,
            Partition::Val => 1,
            Partition::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Partition::Train),
            1 => Some(Partition::Val),
            2 => Some(Partition::Test),
            _ => None,
        }
    }
}

/// Labeled feature vectors tagged with a train/val/test partition. The split
/// is derived from per-class train counts.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    features: Matrix,
    labels: Vec<usize>,
    partitions: Vec<Partition>,
    split: SplitSpec,
    provenance: String,
}

impl FeatureDataset {
    pub fn new(
        n_classes: usize,
        features: Matrix,
        labels: Vec<usize>,
        partitions: Vec<Partition>,
        thresholds: &SplitThresholds,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let counts = check_samples(n_classes, &features, &labels, &partitions)?;
        let split = assign_splits(&counts, thresholds)?;
        Ok(FeatureDataset {
            features,
            labels,
            partitions,
            split,
            provenance: provenance.into(),
        })
    }

    /// Builds a dataset with a stored split, verifying its counts against the
    /// train partition.
    pub fn with_split(
        features: Matrix,
        labels: Vec<usize>,
        partitions: Vec<Partition>,
        split: SplitSpec,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let counts = check_samples(split.n_classes(), &features, &labels, &partitions)?;
        if counts != split.counts() {
            return Err(Error::Integrity(
                "stored class counts disagree with the train partition".into(),
            ));
        }
        Ok(FeatureDataset {
            features,
            labels,
            partitions,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.split.n_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn split(&self) -> &SplitSpec {
        &self.split
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn indices(&self, part: Partition) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.partitions[i] == part)
            .collect()
    }

    /// Train samples of base classes.
    pub fn x_base(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                self.partitions[i] == Partition::Train && self.split.is_base(self.labels[i])
            })
            .collect()
    }

    /// Train samples of few classes.
    pub fn x_few(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                self.partitions[i] == Partition::Train && !self.split.is_base(self.labels[i])
            })
            .collect()
    }

    /// Feature rows and labels of the given samples.
    pub fn gather(&self, idx: &[usize]) -> (Matrix, Vec<usize>) {
        let mut data = Vec::with_capacity(idx.len() * self.feature_dim());
        for &i in idx {
            data.extend_from_slice(self.feature(i));
        }
        let m =
            Matrix::new(idx.len(), self.feature_dim(), data).expect("rows share the dataset width");
        (m, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

fn check_samples(
    n_classes: usize,
    features: &Matrix,
    labels: &[usize],
    partitions: &[Partition],
) -> Result<Vec<usize>> {
    if features.rows() != labels.len() || labels.len() != partitions.len() {
        return Err(Error::Integrity(format!(
            "{} feature rows, {} labels, {} partition tags",
            features.rows(),
            labels.len(),
            partitions.len()
        )));
    }
    let mut counts = vec![0usize; n_classes];
    for (i, (&y, &p)) in labels.iter().zip(partitions).enumerate() {
        if y >= n_classes {
            return Err(Error::Data(format!(
                "sample {i} has label {y} but there are {n_classes} classes"
            )));
        }
        if p == Partition::Train {
            counts[y] += 1;
        }
    }
    Ok(counts)
}

impl Tensor for AnyTensor {
    fn shape(&self) -> numerics::Shape {
        match self {
            AnyTensor::Vector(v) => v.shape(),
            AnyTensor::Matrix(m) => m.shape(),
        }
    }
    fn as_slice(&self) -> &[f64] {
        match self {
            AnyTensor::Vector(v) => v.as_slice(),
            AnyTensor::Matrix(m) => m.as_slice(),
        }
    }
    fn as_mut_slice(&mut self) -> &mut [f64] {
        match self {
            AnyTensor::Vector(v) => v.as_mut_slice(),
            AnyTensor::Matrix(m) => m.as_mut_slice(),
        }
    }
}
