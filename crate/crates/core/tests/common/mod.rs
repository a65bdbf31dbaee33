//! Brute-force oracles and random instances shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use alphanet::alphanet::{compose, score_batch, AlphaConfig, AlphaModel, AlphaVector, InitConfig};
use alphanet::data::{assign_splits, ClassifierBank, SplitLabel, SplitSpec, SplitThresholds};
use alphanet::eval::topk_accuracy;
use alphanet::neighbors::{build_neighbor_set, knn_base, pca_fit, ClassMeans, Neighbor};
use alphanet::numerics::{Matrix, Vector};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ORACLE_CASES: u32 = 256;

fn split_of(base: &[bool]) -> SplitSpec {
    let labels = base
        .iter()
        .map(|&b| if b { SplitLabel::Many } else { SplitLabel::Few })
        .collect();
    let counts = base.iter().map(|&b| if b { 200 } else { 5 }).collect();
    SplitSpec::from_parts(labels, counts).unwrap()
}

#[derive(Clone, Debug)]
pub struct KnnCase {
    pub means: Vec<Vec<f64>>,
    pub base: Vec<bool>,
    pub target: usize,
    pub k: usize,
}

/// Integer coordinates so that equal distances actually occur.
pub fn knn_case() -> impl Strategy<Value = KnnCase> {
    (3usize..12, 1usize..4).prop_flat_map(|(n, dim)| {
        (
            prop::collection::vec(
                prop::collection::vec((-3i32..=3).prop_map(f64::from), dim),
                n,
            ),
            prop::collection::vec(any::<bool>(), n),
            0..n,
            any::<prop::sample::Index>(),
        )
            .prop_map(|(means, mut base, target, k)| {
                base[0] = true;
                base[1] = true;
                let candidates = (0..base.len()).filter(|&c| base[c] && c != target).count();
                KnnCase {
                    means,
                    base,
                    target,
                    k: 1 + k.index(candidates),
                }
            })
    })
}

pub fn check_knn(case: &KnnCase) -> Result<(), TestCaseError> {
    let means = ClassMeans::new(Matrix::from_rows(&case.means).unwrap());
    let got = knn_base(&means, &split_of(&case.base), case.target, case.k).unwrap();

    let dist = |c: usize| -> f64 {
        case.means[case.target]
            .iter()
            .zip(&case.means[c])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let candidates: Vec<usize> = (0..case.means.len())
        .filter(|&c| case.base[c] && c != case.target)
        .collect();
    // a candidate's position is the number of candidates that beat it
    let mut want: Vec<(usize, usize)> = candidates
        .iter()
        .map(|&c| {
            let beaten_by = candidates
                .iter()
                .filter(|&&o| dist(o) < dist(c) || (dist(o) == dist(c) && o < c))
                .count();
            (beaten_by, c)
        })
        .filter(|&(pos, _)| pos < case.k)
        .collect();
    want.sort();

    prop_assert_eq!(got.len(), case.k);
    for (n, (g, &(pos, c))) in got.iter().zip(&want).enumerate() {
        prop_assert_eq!(pos, n);
        prop_assert_eq!(g.class, c);
        prop_assert!((g.distance - dist(c)).abs() <= 1e-12);
        prop_assert!(case.base[g.class] && g.class != case.target);
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TopkCase {
    pub scores: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub k: usize,
}

pub fn topk_case() -> impl Strategy<Value = TopkCase> {
    (1usize..20, 1usize..9).prop_flat_map(|(n, classes)| {
        (
            prop::collection::vec(
                prop::collection::vec((-3i32..=3).prop_map(f64::from), classes),
                n,
            ),
            prop::collection::vec(0..classes, n),
            1..=classes,
        )
            .prop_map(|(scores, labels, k)| TopkCase { scores, labels, k })
    })
}

pub fn check_topk(case: &TopkCase) -> Result<(), TestCaseError> {
    let m = Matrix::from_rows(&case.scores).unwrap();
    let got = topk_accuracy(&m, &case.labels, case.k).unwrap();
    let hits = case
        .scores
        .iter()
        .zip(&case.labels)
        .filter(|(row, &label)| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            order[..case.k].contains(&label)
        })
        .count();
    prop_assert_eq!(got, hits as f64 / case.labels.len() as f64);
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PcaCase {
    pub rows: Vec<Vec<f64>>,
    pub d: usize,
}

pub fn pca_case() -> impl Strategy<Value = PcaCase> {
    (2usize..16, 1usize..7).prop_flat_map(|(n, dim)| {
        (
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), n),
            1..=n.min(dim),
        )
            .prop_map(|(rows, d)| PcaCase { rows, d })
    })
}

/// Variance along each kept axis must equal the corresponding covariance
/// eigenvalue from an independent symmetric eigensolver.
pub fn check_pca(case: &PcaCase) -> Result<(), TestCaseError> {
    let (n, dim) = (case.rows.len(), case.rows[0].len());
    let proj = pca_fit(&Matrix::from_rows(&case.rows).unwrap(), case.d).unwrap();

    let x = DMatrix::from_fn(n, dim, |r, c| case.rows[r][c]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, dim, |r, c| x[(r, c)] - mean[c]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let mut eig: Vec<f64> = SymmetricEigen::new(cov.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let tol = 1e-9 * (1.0 + eig[0].abs());

    let projected: Vec<Vec<f64>> = case.rows.iter().map(|r| proj.apply(r).unwrap()).collect();
    for k in 0..case.d {
        let m = projected.iter().map(|p| p[k]).sum::<f64>() / n as f64;
        let var = projected.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        prop_assert!(
            (var - eig[k]).abs() <= tol,
            "axis {}: {} vs eigenvalue {}",
            k,
            var,
            eig[k]
        );
        prop_assert!((proj.variances()[k] - eig[k]).abs() <= tol);
    }
    prop_assert!((proj.total_variance() - cov.trace()).abs() <= tol);
    let a = DMatrix::from_fn(case.d, dim, |r, c| proj.axes().get(r, c));
    let gram = &a * a.transpose();
    prop_assert!((gram - DMatrix::identity(case.d, case.d)).abs().max() <= 1e-10);
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ComposeCase {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub k: usize,
    pub alpha: Vec<f64>,
    pub x: Vec<f64>,
}

/// The last class is few, every other class is base.
pub fn compose_case() -> impl Strategy<Value = ComposeCase> {
    (3usize..9, 1usize..6).prop_flat_map(|(n, dim)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim), n),
            prop::collection::vec(-1.0f64..1.0, n),
            1..n,
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-3.0f64..3.0, dim),
        )
            .prop_map(|(weights, biases, k, mut alpha, x)| {
                alpha.truncate(k + 1);
                ComposeCase {
                    weights,
                    biases,
                    k,
                    alpha,
                    x,
                }
            })
    })
}

pub fn check_compose(case: &ComposeCase) -> Result<(), TestCaseError> {
    let n = case.weights.len();
    let target = n - 1;
    let mut base = vec![true; n];
    base[target] = false;
    let bank = ClassifierBank::new(
        Matrix::from_rows(&case.weights).unwrap(),
        Vector::new(case.biases.clone()).unwrap(),
        split_of(&base),
        "oracle",
    )
    .unwrap();
    let neighbors: Vec<Neighbor> = (0..case.k)
        .map(|c| Neighbor {
            class: c,
            distance: c as f64,
        })
        .collect();
    let proj = pca_fit(bank.weights(), 1).unwrap();
    let set = build_neighbor_set(&bank, &proj, &neighbors, target).unwrap();
    let alpha = AlphaVector::forced(case.alpha.clone());
    let (u, t) = compose(&alpha, &set).unwrap();

    let slots: Vec<usize> = std::iter::once(target).chain(0..case.k).collect();
    let dim = case.x.len();
    let f = DMatrix::from_fn(slots.len(), dim, |r, c| case.weights[slots[r]][c]);
    let a = DVector::from_column_slice(&case.alpha);
    let want_u = f.transpose() * &a;
    let want_t: f64 = slots
        .iter()
        .zip(&case.alpha)
        .map(|(&s, a)| case.biases[s] * a)
        .sum();
    for (g, w) in u.iter().zip(want_u.iter()) {
        prop_assert!((g - w).abs() <= 1e-12, "{} vs {}", g, w);
    }
    prop_assert!((t - want_t).abs() <= 1e-12);

    // the composed score is the alpha-weighted sum of the slot scores
    let composed = alphanet::data::ComposedBank::from_source(&bank, &[(target, u, t)]).unwrap();
    let xm = Matrix::from_rows(std::slice::from_ref(&case.x)).unwrap();
    let s = score_batch(&xm, composed.as_bank()).unwrap().get(0, target);
    let src = bank.scores(&case.x).unwrap();
    let lin: f64 = slots
        .iter()
        .zip(&case.alpha)
        .map(|(&c, a)| a * src[c])
        .sum();
    prop_assert!((s - lin).abs() <= 1e-10);
    Ok(())
}

/// Three classes in 3-D: class 2 is few, classes 0 and 1 base.
pub fn toy_model(seed: u64) -> (AlphaModel, Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = assign_splits(&[150, 60, 5], &SplitThresholds::default()).unwrap();
    let w = Matrix::new(3, 3, (0..9).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let b = Vector::new((0..3).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
    let bank = Arc::new(ClassifierBank::new(w, b, split, "toy").unwrap());
    let means = ClassMeans::new(
        Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.9, 0.1, 0.0]]).unwrap(),
    );
    let cfg = AlphaConfig {
        gamma: 0.9,
        top_k: 1,
        reduced_dim: 2,
        hidden: Some(4),
        init: InitConfig {
            fc2_weight_scale: 1.0,
            margin: 0.3,
        },
        seed,
        ..AlphaConfig::default()
    };
    let model = AlphaModel::new(bank, &means, cfg).unwrap();
    let x = Matrix::new(6, 3, (0..18).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    (model, x, vec![0, 2, 1, 2, 2, 0])
}
