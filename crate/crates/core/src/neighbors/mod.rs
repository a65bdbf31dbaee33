//! Neighbor selection in class-mean feature space and assembly of the
//! sub-module inputs.
//!
//! Neighbors are chosen by euclidean distance between class mean features.
//! Classifiers are PCA-reduced only to form the sub-module input; composition
//! always uses the full-dimension rows kept alongside.

mod pca;

use serde::{Deserialize, Serialize};

use crate::data::{ClassifierBank, FeatureDataset, Partition, SplitSpec};
use crate::numerics::{self, Matrix};
use crate::{Error, Result};

pub use pca::{pca_fit, PcaProjection};

/// Per-class mean of train features, one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMeans(Matrix);

impl ClassMeans {
    pub fn new(means: Matrix) -> Self {
        ClassMeans(means)
    }

    pub fn n_classes(&self) -> usize {
        self.0.rows()
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        self.0.row(class)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

pub fn class_means(ds: &FeatureDataset) -> Result<ClassMeans> {
    let (n, d) = (ds.n_classes(), ds.feature_dim());
    let mut sums = Matrix::zeros(n, d);
    let mut counts = vec![0usize; n];
    for i in ds.indices(Partition::Train) {
        let y = ds.label(i);
        counts[y] += 1;
        for (s, x) in sums.row_mut(y).iter_mut().zip(ds.feature(i)) {
            *s += x;
        }
    }
    for (c, &k) in counts.iter().enumerate() {
        if k == 0 {
            return Err(Error::Data(format!("class {c} has no train samples")));
        }
        sums.row_mut(c).iter_mut().for_each(|s| *s /= k as f64);
    }
    Ok(ClassMeans(sums))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub class: usize,
    pub distance: f64,
}

/// The `k` base classes whose means are closest to `target`'s, nearest
/// first; equal distances go to the lower class id.
pub fn knn_base(
    means: &ClassMeans,
    split: &SplitSpec,
    target: usize,
    k: usize,
) -> Result<Vec<Neighbor>> {
    if target >= means.n_classes() {
        return Err(Error::Index {
            index: target,
            len: means.n_classes(),
        });
    }
    let candidates: Vec<usize> = split
        .base_classes()
        .into_iter()
        .filter(|&c| c != target)
        .collect();
    if k > candidates.len() {
        return Err(Error::Config(format!(
            "asked for {k} neighbors but only {} base classes are available",
            candidates.len()
        )));
    }
    let t = means.mean(target);
    let mut all: Vec<Neighbor> = candidates
        .into_iter()
        .map(|c| Neighbor {
            class: c,
            distance: numerics::squared_distance(t, means.mean(c)).sqrt(),
        })
        .collect();
    all.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.class.cmp(&b.class))
    });
    all.truncate(k);
    Ok(all)
}

/// Inputs for one few class: slot 0 is the class's own classifier, slots
/// `1..=K` its neighbors in distance order.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    target: usize,
    neighbors: Vec<Neighbor>,
    reduced: Matrix,
    full: Matrix,
    biases: Vec<f64>,
}

impl NeighborSet {
    pub fn target(&self) -> usize {
        self.target
    }

    pub fn neighbors(&self) -> &[Neighbor] {
        &self.neighbors
    }

    /// `K`, not counting the target itself.
    pub fn k(&self) -> usize {
        self.neighbors.len()
    }

    /// Number of input classifiers, `K + 1`.
    pub fn len(&self) -> usize {
        self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.biases.is_empty()
    }

    pub fn reduced_dim(&self) -> usize {
        self.reduced.cols()
    }

    /// PCA-reduced classifiers, one row per slot.
    pub fn reduced(&self) -> &Matrix {
        &self.reduced
    }

    /// Original full-dimension classifiers, one row per slot.
    pub fn full(&self) -> &Matrix {
        &self.full
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    /// `concat(V_0, ..., V_K)`, length `(K + 1) * d`. Biases are not part of
    /// the input.
    pub fn flattened_input(&self) -> Vec<f64> {
        numerics::Tensor::as_slice(&self.reduced).to_vec()
    }

    pub fn nearest_distance(&self) -> Option<f64> {
        self.neighbors.first().map(|n| n.distance)
    }
}

pub fn build_neighbor_set(
    bank: &ClassifierBank,
    proj: &PcaProjection,
    neighbors: &[Neighbor],
    target: usize,
) -> Result<NeighborSet> {
    if target >= bank.n_classes() {
        return Err(Error::Index {
            index: target,
            len: bank.n_classes(),
        });
    }
    let mut slots = Vec::with_capacity(neighbors.len() + 1);
    slots.push(target);
    for n in neighbors {
        if n.class >= bank.n_classes() || !bank.split().is_base(n.class) || n.class == target {
            return Err(Error::Integrity(format!(
                "neighbor {} of class {target} is not a base class",
                n.class
            )));
        }
        slots.push(n.class);
    }
    let mut reduced = Vec::with_capacity(slots.len());
    let mut full = Vec::with_capacity(slots.len());
    for &c in &slots {
        reduced.push(proj.apply(bank.weight(c))?);
        full.push(bank.weight(c).to_vec());
    }
    Ok(NeighborSet {
        target,
        neighbors: neighbors.to_vec(),
        reduced: Matrix::from_rows(&reduced)?,
        full: Matrix::from_rows(&full)?,
        biases: slots.iter().map(|&c| bank.bias(c)).collect(),
    })
}

/// Fits the shared PCA on all of the bank's weight rows.
pub fn fit_classifier_pca(bank: &ClassifierBank, d: usize) -> Result<PcaProjection> {
    pca_fit(bank.weights(), d)
}

/// Neighbor sets for every few class, sharing one projection.
pub fn build_all(
    bank: &ClassifierBank,
    means: &ClassMeans,
    proj: &PcaProjection,
    k: usize,
) -> Result<Vec<NeighborSet>> {
    bank.split()
        .few_classes()
        .into_iter()
        .map(|c| {
            let ids = knn_base(means, bank.split(), c, k)?;
            build_neighbor_set(bank, proj, &ids, c)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub class: usize,
    pub neighbors: Vec<Neighbor>,
}

/// Neighbor ids and distances as a JSON array, one record per few class.
pub fn neighbors_to_json(sets: &[NeighborSet]) -> String {
    let records: Vec<NeighborRecord> = sets
        .iter()
        .map(|s| NeighborRecord {
            class: s.target,
            neighbors: s.neighbors.clone(),
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("neighbor records serialize")
}

pub fn neighbors_from_json(text: &str) -> Result<Vec<NeighborRecord>> {
    serde_json::from_str(text).map_err(|e| Error::Integrity(format!("neighbor file: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{assign_splits, SplitThresholds};
    use crate::numerics::Vector;

    fn split_of(labels_few: &[bool]) -> SplitSpec {
        let counts: Vec<usize> = labels_few
            .iter()
            .map(|&f| if f { 5 } else { 150 })
            .collect();
        assign_splits(&counts, &SplitThresholds::default()).unwrap()
    }

    #[test]
    fn means_of_two_points_and_single_sample() {
        let f = Matrix::from_rows(&[[1.0, 1.0], [3.0, 3.0], [7.0, -2.0]]).unwrap();
        let ds = FeatureDataset::new(
            2,
            f,
            vec![0, 0, 1],
            vec![Partition::Train; 3],
            &SplitThresholds {
                many_above: 1,
                few_below: 1,
            },
            "",
        )
        .unwrap();
        let m = class_means(&ds).unwrap();
        assert_eq!(m.mean(0), &[2.0, 2.0]);
        assert_eq!(m.mean(1), &[7.0, -2.0]);
    }

    #[test]
    fn knn_one_dimensional() {
        let means = ClassMeans::new(Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap());
        let split = split_of(&[true, false, false, false]);
        let nn = knn_base(&means, &split, 0, 2).unwrap();
        assert_eq!(nn.iter().map(|n| n.class).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(nn[0].distance, 1.0);
        assert!(matches!(
            knn_base(&means, &split, 0, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn knn_tie_goes_to_lower_id() {
        let means = ClassMeans::new(Matrix::from_rows(&[[0.0], [-1.0], [1.0], [5.0]]).unwrap());
        let split = split_of(&[true, false, false, false]);
        let nn = knn_base(&means, &split, 0, 2).unwrap();
        assert_eq!(nn.iter().map(|n| n.class).collect::<Vec<_>>(), vec![1, 2]);
        let means = ClassMeans::new(Matrix::from_rows(&[[0.0], [1.0], [-1.0], [5.0]]).unwrap());
        let nn = knn_base(&means, &split, 0, 1).unwrap();
        assert_eq!(nn[0].class, 1);
    }

    fn toy_bank(n: usize, d: usize, few: &[bool]) -> ClassifierBank {
        let w = Matrix::new(
            n,
            d,
            (0..n * d).map(|i| ((i * 37 % 11) as f64) - 5.0).collect(),
        )
        .unwrap();
        let b = Vector::new((0..n).map(|i| i as f64 * 0.1).collect()).unwrap();
        ClassifierBank::new(w, b, split_of(few), "toy").unwrap()
    }

    #[test]
    fn neighbor_set_layout() {
        let few = [true, false, false, false, false, false, false, false];
        let bank = toy_bank(8, 6, &few);
        let proj = fit_classifier_pca(&bank, 3).unwrap();
        let means = ClassMeans::new(bank.weights().clone());
        let ids = knn_base(&means, bank.split(), 0, 5).unwrap();
        let set = build_neighbor_set(&bank, &proj, &ids, 0).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.flattened_input().len(), 18);
        assert_eq!(set.full().row(0), bank.weight(0));
        assert_eq!(set.biases()[0], bank.bias(0));
        for (k, n) in ids.iter().enumerate() {
            assert_eq!(set.full().row(k + 1), bank.weight(n.class));
            assert_eq!(set.biases()[k + 1], bank.bias(n.class));
            assert_eq!(
                set.reduced().row(k + 1),
                proj.apply(bank.weight(n.class)).unwrap().as_slice()
            );
        }
        let flat = set.flattened_input();
        assert_eq!(&flat[6..9], set.reduced().row(2));

        let empty = build_neighbor_set(&bank, &proj, &[], 0).unwrap();
        assert_eq!(empty.flattened_input(), proj.apply(bank.weight(0)).unwrap());

        let bad = [Neighbor {
            class: 0,
            distance: 0.0,
        }];
        assert!(matches!(
            build_neighbor_set(&bank, &proj, &bad, 1),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn neighbor_json_round_trip() {
        let few = [true, true, false, false, false];
        let bank = toy_bank(5, 4, &few);
        let proj = fit_classifier_pca(&bank, 2).unwrap();
        let means = ClassMeans::new(bank.weights().clone());
        let sets = build_all(&bank, &means, &proj, 2).unwrap();
        assert_eq!(sets.len(), 2);
        let text = neighbors_to_json(&sets);
        let back = neighbors_from_json(&text).unwrap();
        assert_eq!(back[1].class, 1);
        assert_eq!(back[1].neighbors, sets[1].neighbors());
    }
}
