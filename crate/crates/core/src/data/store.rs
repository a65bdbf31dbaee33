//! Directory layout: one `manifest.json` plus one tensor file per array.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor_file::{read_tensor, write_tensor};
use super::{ClassifierBank, ComposedBank, FeatureDataset, Partition, SplitLabel, SplitSpec};
use crate::numerics::{Matrix, Vector};
use crate::{Error, Result};

const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub splits: Vec<SplitLabel>,
    pub counts: Vec<usize>,
    pub provenance: String,
    pub tensor_files: BTreeMap<String, String>,
}

impl Manifest {
    fn file(&self, key: &str) -> Result<&str> {
        self.tensor_files
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Integrity(format!("manifest lists no `{key}` tensor")))
    }

    fn split(&self) -> Result<SplitSpec> {
        if self.splits.len() != self.n_classes {
            return Err(Error::Integrity(format!(
                "manifest n_classes={} but {} split labels",
                self.n_classes,
                self.splits.len()
            )));
        }
        SplitSpec::from_parts(self.splits.clone(), self.counts.clone())
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(m).expect("manifest serializes");
    json.push(b'\n');
    atomic_write(&dir.join(MANIFEST), &json)
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&text).map_err(|source| Error::Json { path, source })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn save_bank(dir: &Path, bank: &ClassifierBank) -> Result<()> {
    create_dir(dir)?;
    write_tensor(&dir.join("weights.alft"), bank.weights())?;
    write_tensor(&dir.join("biases.alft"), bank.biases())?;
    write_manifest(
        dir,
        &Manifest {
            n_classes: bank.n_classes(),
            feature_dim: bank.feature_dim(),
            splits: bank.split().labels().to_vec(),
            counts: bank.split().counts().to_vec(),
            provenance: bank.provenance().to_string(),
            tensor_files: BTreeMap::from([
                ("weights".into(), "weights.alft".into()),
                ("biases".into(), "biases.alft".into()),
            ]),
        },
    )
}

pub fn load_bank(dir: &Path) -> Result<ClassifierBank> {
    let m = read_manifest(dir)?;
    let split = m.split()?;
    let weights = read_tensor(&dir.join(m.file("weights")?))?.into_matrix()?;
    let biases = read_tensor(&dir.join(m.file("biases")?))?.into_vector()?;
    if weights.rows() != m.n_classes || weights.cols() != m.feature_dim {
        return Err(Error::Integrity(format!(
            "manifest declares {}x{} but weights are {}x{}",
            m.n_classes,
            m.feature_dim,
            weights.rows(),
            weights.cols()
        )));
    }
    ClassifierBank::new(weights, biases, split, m.provenance)
}

pub fn save_composed(dir: &Path, bank: &ComposedBank) -> Result<()> {
    save_bank(dir, bank.as_bank())
}

pub fn load_composed(dir: &Path) -> Result<ComposedBank> {
    load_bank(dir).map(ComposedBank::from_bank)
}

fn index_tensor(values: impl Iterator<Item = usize>) -> Vector {
    Vector::new(values.map(|v| v as f64).collect()).expect("small integers are finite")
}

fn to_indices(v: &Vector, what: &str) -> Result<Vec<usize>> {
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            if x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64 {
                Ok(x as usize)
            } else {
                Err(Error::Integrity(format!(
                    "{what} entry {i} is not an index: {x}"
                )))
            }
        })
        .collect()
}

pub fn save_dataset(dir: &Path, ds: &FeatureDataset) -> Result<()> {
    create_dir(dir)?;
    write_tensor(&dir.join("features.alft"), ds.features())?;
    write_tensor(
        &dir.join("labels.alft"),
        &index_tensor(ds.labels().iter().copied()),
    )?;
    write_tensor(
        &dir.join("partitions.alft"),
        &index_tensor(ds.partitions().iter().map(|p| p.code() as usize)),
    )?;
    write_manifest(
        dir,
        &Manifest {
            n_classes: ds.n_classes(),
            feature_dim: ds.feature_dim(),
            splits: ds.split().labels().to_vec(),
            counts: ds.split().counts().to_vec(),
            provenance: ds.provenance().to_string(),
            tensor_files: BTreeMap::from([
                ("features".into(), "features.alft".into()),
                ("labels".into(), "labels.alft".into()),
                ("partitions".into(), "partitions.alft".into()),
            ]),
        },
    )
}

pub fn load_dataset(dir: &Path) -> Result<FeatureDataset> {
    let m = read_manifest(dir)?;
    let split = m.split()?;
    let features: Matrix = read_tensor(&dir.join(m.file("features")?))?.into_matrix()?;
    if features.cols() != m.feature_dim {
        return Err(Error::Integrity(format!(
            "manifest feature_dim={} but features have {} columns",
            m.feature_dim,
            features.cols()
        )));
    }
    let labels = to_indices(
        &read_tensor(&dir.join(m.file("labels")?))?.into_vector()?,
        "label",
    )?;
    let partitions = to_indices(
        &read_tensor(&dir.join(m.file("partitions")?))?.into_vector()?,
        "partition",
    )?
    .into_iter()
    .enumerate()
    .map(|(i, c)| {
        u8::try_from(c)
            .ok()
            .and_then(Partition::from_code)
            .ok_or_else(|| Error::Integrity(format!("sample {i} has unknown partition code {c}")))
    })
    .collect::<Result<Vec<_>>>()?;
    FeatureDataset::with_split(features, labels, partitions, split, m.provenance)
}
