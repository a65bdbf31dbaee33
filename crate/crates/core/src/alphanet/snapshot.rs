//! Model directory: `model.json` plus one tensor file per parameter array.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AlphaConfig, AlphaModel, SubModule};
use crate::data::{atomic_write, read_tensor, write_tensor, ClassifierBank};
use crate::neighbors::{build_neighbor_set, Neighbor, NeighborRecord, PcaProjection};
use crate::{Error, Result};

const MODEL_FILE: &str = "model.json";
const PARTS: [&str; 4] = ["fc1_w", "fc1_b", "fc2_w", "fc2_b"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    config: AlphaConfig,
    bank_provenance: String,
    pca_total_variance: f64,
    neighbors: Vec<NeighborRecord>,
}

fn part_file(slot: usize, part: &str) -> String {
    format!("module{slot:03}_{part}.alft")
}

pub fn save_model(dir: &Path, model: &AlphaModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = model.projection();
    write_tensor(&dir.join("pca_axes.alft"), p.axes())?;
    write_tensor(&dir.join("pca_mean.alft"), p.mean())?;
    write_tensor(
        &dir.join("pca_variances.alft"),
        &crate::numerics::Vector::new(p.variances().to_vec())?,
    )?;
    for (slot, m) in model.modules().iter().enumerate() {
        for (part, t) in PARTS.iter().zip(m.tensors()) {
            write_tensor(&dir.join(part_file(slot, part)), t)?;
        }
    }
    let manifest = ModelManifest {
        config: model.config().clone(),
        bank_provenance: model.bank().provenance().to_string(),
        pca_total_variance: p.total_variance(),
        neighbors: model
            .neighbor_sets()
            .iter()
            .map(|s| NeighborRecord {
                class: s.target(),
                neighbors: s.neighbors().to_vec(),
            })
            .collect(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("model manifest serializes");
    json.push(b'\n');
    atomic_write(&dir.join(MODEL_FILE), &json)
}

/// Loads a model saved by [`save_model`] against the bank it was trained on.
pub fn load_model(dir: &Path, bank: Arc<ClassifierBank>) -> Result<AlphaModel> {
    let path = dir.join(MODEL_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest =
        serde_json::from_slice(&text).map_err(|source| Error::Json { path, source })?;
    let projection = PcaProjection::from_parts(
        read_tensor(&dir.join("pca_axes.alft"))?.into_matrix()?,
        read_tensor(&dir.join("pca_mean.alft"))?.into_vector()?,
        read_tensor(&dir.join("pca_variances.alft"))?
            .into_vector()?
            .into_inner(),
        manifest.pca_total_variance,
    )?;
    if projection.input_dim() != bank.feature_dim() {
        return Err(Error::Integrity(format!(
            "model expects feature dim {}, bank has {}",
            projection.input_dim(),
            bank.feature_dim()
        )));
    }
    let mut sets = Vec::with_capacity(manifest.neighbors.len());
    let mut modules = Vec::with_capacity(manifest.neighbors.len());
    for (slot, rec) in manifest.neighbors.iter().enumerate() {
        let nn: Vec<Neighbor> = rec.neighbors.clone();
        sets.push(build_neighbor_set(&bank, &projection, &nn, rec.class)?);
        let mut t = PARTS
            .iter()
            .map(|part| read_tensor(&dir.join(part_file(slot, part))));
        let mut next = || t.next().expect("four parts");
        modules.push(SubModule {
            fc1_w: next()?.into_matrix()?,
            fc1_b: next()?.into_vector()?,
            fc2_w: next()?.into_matrix()?,
            fc2_b: next()?.into_vector()?,
        });
    }
    if sets.len() != bank.split().n_few() {
        return Err(Error::Integrity(format!(
            "model has {} sub-modules, bank has {} few classes",
            sets.len(),
            bank.split().n_few()
        )));
    }
    AlphaModel::from_parts(bank, manifest.config, projection, sets, modules)
}
