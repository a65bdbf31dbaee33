use std::sync::Arc;

use super::{AlphaModel, SubModule};
use crate::data::ClassifierBank;
use crate::numerics::{
    self, Affine, ClampAlpha, GradTape, LeakyRelu, Matrix, NodeId, Normalize, Primitive, Tensor,
};
use crate::{Error, Result};

/// `(U, t)` packed as `[U_0, .., U_{D-1}, t]` from input `[α]`.
struct Compose {
    full: Matrix,
    biases: Vec<f64>,
}

impl Primitive for Compose {
    fn name(&self) -> &'static str {
        "compose"
    }

    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        let a = inputs[0];
        if a.len() != self.full.rows() {
            return Err(Error::shape("compose", a.len(), self.full.rows()));
        }
        let mut out = vec![0.0; self.full.cols() + 1];
        for (k, &alpha) in a.iter().enumerate() {
            for (dst, w) in out.iter_mut().zip(self.full.row(k)) {
                *dst += alpha * w;
            }
        }
        out[self.full.cols()] = numerics::dot(a, &self.biases);
        Ok(out)
    }

    fn backward(&self, _inputs: &[&[f64]], _output: &[f64], grad_out: &[f64]) -> Vec<Vec<f64>> {
        let d = self.full.cols();
        let ga = (0..self.full.rows())
            .map(|k| numerics::dot(self.full.row(k), &grad_out[..d]) + grad_out[d] * self.biases[k])
            .collect();
        vec![ga]
    }
}

/// Mean softmax cross-entropy over a batch. Inputs are one packed `(U, t)`
/// per few class; base-class scores are precomputed constants.
struct ScoreXent {
    features: Matrix,
    labels: Vec<usize>,
    base_scores: Matrix,
    few: Vec<usize>,
}

impl ScoreXent {
    fn scores(&self, inputs: &[&[f64]], n: usize) -> Vec<f64> {
        let d = self.features.cols();
        let x = self.features.row(n);
        let mut s = self.base_scores.row(n).to_vec();
        for (slot, &c) in self.few.iter().enumerate() {
            let ut = inputs[slot];
            s[c] = numerics::dot(&ut[..d], x) + ut[d];
        }
        s
    }
}

impl Primitive for ScoreXent {
    fn name(&self) -> &'static str {
        "score_xent"
    }

    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        let mut total = 0.0;
        for (n, &y) in self.labels.iter().enumerate() {
            let (loss, _) = numerics::softmax_xent(&self.scores(inputs, n), y)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at sample {n}")));
            }
            total += loss;
        }
        Ok(vec![total / self.labels.len() as f64])
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], grad_out: &[f64]) -> Vec<Vec<f64>> {
        let d = self.features.cols();
        let scale = grad_out[0] / self.labels.len() as f64;
        let mut grads = vec![vec![0.0; d + 1]; self.few.len()];
        for (n, &y) in self.labels.iter().enumerate() {
            let (_, g) =
                numerics::softmax_xent(&self.scores(inputs, n), y).expect("checked in forward");
            let x = self.features.row(n);
            for (slot, &c) in self.few.iter().enumerate() {
                let gs = g[c] * scale;
                let dst = &mut grads[slot];
                for (a, xi) in dst[..d].iter_mut().zip(x) {
                    *a += gs * xi;
                }
                dst[d] += gs;
            }
        }
        grads
    }
}

/// Mean loss and per-sub-module gradients for one batch.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub loss: f64,
    pub grads: Vec<SubModule>,
}

struct ModuleNodes {
    fc1_w: NodeId,
    fc1_b: NodeId,
    fc2_w: NodeId,
    fc2_b: NodeId,
}

fn base_scores(bank: &ClassifierBank, features: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(features.rows(), bank.n_classes());
    for (r, x) in features.row_iter().enumerate() {
        for (c, s) in out.row_mut(r).iter_mut().enumerate() {
            *s = numerics::dot(x, bank.weight(c)) + bank.bias(c);
        }
    }
    out
}

/// Mean cross-entropy of the composed scores on `(features, labels)` and its
/// gradient with respect to every sub-module parameter.
pub fn loss_and_grads(
    model: &AlphaModel,
    features: &Matrix,
    labels: &[usize],
) -> Result<BatchLoss> {
    if labels.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if features.rows() != labels.len() {
        return Err(Error::shape(
            "loss_and_grads",
            features.rows(),
            labels.len(),
        ));
    }
    let bank: &Arc<ClassifierBank> = model.bank_arc();
    if features.cols() != bank.feature_dim() {
        return Err(Error::shape(
            "loss_and_grads",
            features.cols(),
            bank.feature_dim(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= bank.n_classes()) {
        return Err(Error::Index {
            index: bad,
            len: bank.n_classes(),
        });
    }
    let cfg = model.config();
    let mut tape = GradTape::new();
    let mut nodes = Vec::with_capacity(model.modules().len());
    let mut composed = Vec::with_capacity(model.modules().len());
    for (m, set) in model.modules().iter().zip(model.neighbor_sets()) {
        let ids = ModuleNodes {
            fc1_w: tape.leaf(m.fc1_w.as_slice().to_vec()),
            fc1_b: tape.leaf(m.fc1_b.as_slice().to_vec()),
            fc2_w: tape.leaf(m.fc2_w.as_slice().to_vec()),
            fc2_b: tape.leaf(m.fc2_b.as_slice().to_vec()),
        };
        let input = tape.leaf(set.flattened_input());
        let fc1 = Affine {
            rows: m.fc1_w.rows(),
            cols: m.fc1_w.cols(),
        };
        let h = tape.apply(fc1, &[ids.fc1_w, input, ids.fc1_b])?;
        let h = tape.apply(
            LeakyRelu {
                slope: cfg.leaky_slope,
            },
            &[h],
        )?;
        let fc2 = Affine {
            rows: m.fc2_w.rows(),
            cols: m.fc2_w.cols(),
        };
        let raw = tape.apply(fc2, &[ids.fc2_w, h, ids.fc2_b])?;
        let norm = tape
            .apply(
                Normalize {
                    eps: cfg.norm_eps(),
                },
                &[raw],
            )
            .map_err(|_| Error::DegenerateAlpha {
                class: Some(set.target()),
            })?;
        let clamped = tape.apply(ClampAlpha { gamma: cfg.gamma }, &[norm])?;
        let ut = tape.apply(
            Compose {
                full: set.full().clone(),
                biases: set.biases().to_vec(),
            },
            &[clamped],
        )?;
        nodes.push(ids);
        composed.push(ut);
    }
    let head = ScoreXent {
        features: features.clone(),
        labels: labels.to_vec(),
        base_scores: base_scores(bank, features),
        few: model.few_classes(),
    };
    let loss_node = tape.apply(head, &composed)?;
    let loss = tape.value(loss_node)[0];
    let grads = tape.backward(loss_node)?;
    let grads = model
        .modules()
        .iter()
        .zip(&nodes)
        .map(|(m, ids)| {
            let mut g = SubModule::zeros(m.input_len(), m.fc1_w.rows(), m.output_len());
            let flat: Vec<f64> = [
                grads.get_or_zeros(ids.fc1_w, m.fc1_w.as_slice().len()),
                grads.get_or_zeros(ids.fc1_b, m.fc1_b.len()),
                grads.get_or_zeros(ids.fc2_w, m.fc2_w.as_slice().len()),
                grads.get_or_zeros(ids.fc2_b, m.fc2_b.len()),
            ]
            .concat();
            g.set_flat(&flat);
            g
        })
        .collect();
    Ok(BatchLoss { loss, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphanet::{score_batch, AlphaConfig, AlphaVector};
    use crate::data::{assign_splits, SplitThresholds};
    use crate::neighbors::ClassMeans;
    use crate::numerics::{finite_diff_check, Vector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three classes in 3-D: class 2 is few, classes 0 and 1 base.
    pub(crate) fn toy_model(seed: u64) -> (AlphaModel, Matrix, Vec<usize>) {
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
            init: crate::alphanet::InitConfig {
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

    fn loss_at(model: &AlphaModel, flat: &[f64], x: &Matrix, y: &[usize]) -> f64 {
        let mut m = model.clone();
        m.modules_mut()[0].set_flat(flat);
        loss_and_grads(&m, x, y).unwrap().loss
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut checked = 0;
        for seed in 0..20 {
            let (model, x, y) = toy_model(seed);
            let trace = model.alpha_trace(0).unwrap();
            let (_, mask) =
                numerics::clamp_alpha_bounds(trace.normalized.values(), model.config().gamma);
            // finite differences are only meaningful away from clamp kinks
            let floor = (1.0 - model.config().gamma) / 1.0;
            let n = trace.normalized.values();
            if mask.0.iter().any(|&c| c)
                || (n[0].abs() - 0.9).abs() < 1e-3
                || (n[1].abs() - floor).abs() < 1e-3
            {
                continue;
            }
            let out = loss_and_grads(&model, &x, &y).unwrap();
            let flat = model.modules()[0].flat();
            let err = finite_diff_check(
                |p| loss_at(&model, p, &x, &y),
                &out.grads[0].flat(),
                &flat,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
            checked += 1;
        }
        assert!(
            checked >= 5,
            "only {checked} seeds away from clamp boundaries"
        );
    }

    #[test]
    fn loss_matches_composed_scores() {
        let (model, x, y) = toy_model(3);
        let composed = model.export_composed().unwrap();
        let s = score_batch(&x, composed.as_bank()).unwrap();
        let want: f64 = y
            .iter()
            .enumerate()
            .map(|(n, &c)| numerics::softmax_xent(s.row(n), c).unwrap().0)
            .sum::<f64>()
            / y.len() as f64;
        let got = loss_and_grads(&model, &x, &y).unwrap().loss;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn duplicate_batch_keeps_mean() {
        let (model, x, y) = toy_model(4);
        let rows: Vec<&[f64]> = x.row_iter().chain(x.row_iter()).collect();
        let x2 = Matrix::from_rows(&rows).unwrap();
        let y2 = [y.clone(), y.clone()].concat();
        let a = loss_and_grads(&model, &x, &y).unwrap().loss;
        let b = loss_and_grads(&model, &x2, &y2).unwrap().loss;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn dominant_label_has_tiny_loss() {
        let split = assign_splits(&[150, 150, 5], &SplitThresholds::default()).unwrap();
        let w = Matrix::from_rows(&[[40.0, 0.0], [0.0, 40.0], [0.0, 1.0]]).unwrap();
        let bank = Arc::new(ClassifierBank::new(w, Vector::zeros(3), split, "").unwrap());
        let means =
            ClassMeans::new(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.9]]).unwrap());
        let cfg = AlphaConfig {
            top_k: 1,
            reduced_dim: 1,
            ..AlphaConfig::default()
        };
        let model = AlphaModel::new(bank, &means, cfg).unwrap();
        let x = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let loss = loss_and_grads(&model, &x, &[0]).unwrap().loss;
        assert!(loss < 1e-8, "{loss}");
    }

    #[test]
    fn identity_alphas_leave_scores_unchanged() {
        let (model, x, _) = toy_model(5);
        let one = AlphaVector::forced(vec![1.0, 0.0]);
        let composed = model.export_with_alphas(&[one]).unwrap();
        assert_eq!(composed.as_bank().weights(), model.bank().weights());
        assert_eq!(composed.as_bank().biases(), model.bank().biases());
        let a = score_batch(&x, composed.as_bank()).unwrap();
        let b = score_batch(&x, model.bank()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strict_mode_reports_class() {
        let (mut model, x, y) = toy_model(6);
        let cfg = AlphaConfig {
            strict_alpha: true,
            ..model.config().clone()
        };
        for m in model.modules_mut() {
            let n = m.n_params();
            m.set_flat(&vec![0.0; n]);
        }
        let strict = AlphaModel::from_parts(
            model.bank_arc().clone(),
            cfg,
            model.projection().clone(),
            model.neighbor_sets().to_vec(),
            model.modules().to_vec(),
        )
        .unwrap();
        assert!(matches!(
            loss_and_grads(&strict, &x, &y),
            Err(Error::DegenerateAlpha { class: Some(2) })
        ));
        assert!(matches!(
            strict.alpha_trace(0),
            Err(Error::DegenerateAlpha { class: Some(2) })
        ));
        assert!(loss_and_grads(&model, &x, &y).is_ok());
    }

    #[test]
    fn rejects_empty_and_mismatched_batches() {
        let (model, x, _) = toy_model(7);
        assert!(matches!(
            loss_and_grads(&model, &Matrix::zeros(0, 3), &[]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            loss_and_grads(&model, &x, &[0]),
            Err(Error::Shape { .. })
        ));
    }
}
