use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use alphanet::alphanet::{fit, save_model, score_batch, AlphaModel};
use alphanet::data::{
    atomic_write, load_bank, load_composed, load_dataset, save_bank, save_composed, save_dataset,
    ClassifierBank, FeatureDataset, Partition,
};
use alphanet::datagen::{generate, train_baseline};
use alphanet::eval::{
    classwise_report, gamma_sweep, scatter_svg, split_report, sweep_svg, sweep_threads, topk_sweep,
    write_classwise_csv, write_split_report_csv, write_sweep_csv, Experiment,
};
use alphanet::neighbors::{class_means, knn_base, neighbors_to_json};
use alphanet::{Error, Result};

use crate::config::{Axis, RunConfig, RunRecord};

fn input(p: PathBuf, what: &str) -> Result<PathBuf> {
    if !p.exists() {
        return Err(Error::Config(format!(
            "{what} path does not exist: {}",
            p.display()
        )));
    }
    Ok(p)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.require("out", &cfg.out)?;
    std::fs::create_dir_all(&out).map_err(|source| Error::Io {
        path: out.clone(),
        source,
    })?;
    Ok(out)
}

fn dataset(cfg: &RunConfig) -> Result<FeatureDataset> {
    load_dataset(&input(cfg.require("dataset", &cfg.dataset)?, "dataset")?)
}

fn bank(cfg: &RunConfig, ds: &FeatureDataset) -> Result<Arc<ClassifierBank>> {
    let bank = load_bank(&input(cfg.require("bank", &cfg.bank)?, "bank")?)?;
    if bank.split() != ds.split() || bank.feature_dim() != ds.feature_dim() {
        return Err(Error::Integrity(
            "bank and dataset describe different classes".into(),
        ));
    }
    Ok(Arc::new(bank))
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("serializable");
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

fn record(out: &Path, command: &str, cfg: &RunConfig, started: Instant) -> Result<()> {
    let rec = RunRecord {
        command: command.into(),
        config: cfg.clone(),
        seed: cfg.seed,
        git_describe: git_describe(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    write_json(&out.join("run.json"), &rec)
}

pub fn datagen(cfg: &RunConfig) -> Result<()> {
    let t = Instant::now();
    let out = output_dir(cfg)?;
    let gen = generate(&cfg.datagen)?;
    save_dataset(&out, &gen.dataset)?;
    eprintln!(
        "wrote {} samples over {} classes ({} few) to {}",
        gen.dataset.len(),
        gen.dataset.n_classes(),
        gen.split.n_few(),
        out.display()
    );
    record(&out, "datagen", cfg, t)
}

pub fn baseline(cfg: &RunConfig) -> Result<()> {
    let t = Instant::now();
    let ds = dataset(cfg)?;
    let out = output_dir(cfg)?;
    let bank = train_baseline(&ds, &cfg.baseline, cfg.seed)?;
    save_bank(&out, &bank)?;
    record(&out, "baseline", cfg, t)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let t = Instant::now();
    let ds = dataset(cfg)?;
    let bank = bank(cfg, &ds)?;
    let out = output_dir(cfg)?;
    let means = class_means(&ds)?;
    let model = AlphaModel::new(bank, &means, cfg.alpha.clone())?;
    let fitted = fit(model, &ds, &cfg.train)?;
    for r in fitted.log.records() {
        let few = r.val.few.map_or(f64::NAN, |m| m.top1);
        eprintln!(
            "epoch {:3}  loss {:.4}  lr {:.0e}  val few top-1 {:.4}",
            r.epoch, r.loss, r.lr, few
        );
    }
    if let Some(e) = fitted.best_epoch {
        eprintln!("best epoch {e}");
    }
    save_model(&out.join("snapshot"), &fitted.model)?;
    save_composed(&out.join("composed"), &fitted.model.export_composed()?)?;
    atomic_write(
        &out.join("train_log.jsonl"),
        fitted.log.to_jsonl().as_bytes(),
    )?;
    let mut nn = neighbors_to_json(fitted.model.neighbor_sets());
    nn.push('\n');
    atomic_write(&out.join("neighbors.json"), nn.as_bytes())?;
    record(&out, "train", cfg, t)
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let t = Instant::now();
    let ds = dataset(cfg)?;
    let bank = bank(cfg, &ds)?;
    let composed = load_composed(&input(cfg.require("composed", &cfg.composed)?, "composed")?)?;
    if composed.as_bank().split() != ds.split() {
        return Err(Error::Integrity(
            "composed bank and dataset describe different classes".into(),
        ));
    }
    let out = output_dir(cfg)?;
    let (x, y) = ds.gather(&ds.indices(Partition::Test));
    let base_scores = score_batch(&x, &bank)?;
    let comp_scores = score_batch(&x, composed.as_bank())?;
    let means = class_means(&ds)?;
    let distances = ds
        .split()
        .few_classes()
        .into_iter()
        .map(|c| Ok((c, knn_base(&means, ds.split(), c, 1)?[0].distance)))
        .collect::<Result<Vec<_>>>()?;
    let composed_report = split_report(&comp_scores, &y, ds.split())?;
    write_split_report_csv(&out.join("split_report.csv"), &composed_report)?;
    write_split_report_csv(
        &out.join("split_report_baseline.csv"),
        &split_report(&base_scores, &y, ds.split())?,
    )?;
    let cw = classwise_report(&base_scores, &comp_scores, &y, &distances)?;
    write_classwise_csv(&out.join("classwise.csv"), &cw)?;
    atomic_write(&out.join("classwise.svg"), scatter_svg(&cw).as_bytes())?;
    for (name, m) in composed_report.entries() {
        if let Some(m) = m {
            eprintln!(
                "{name:>6}  top-1 {:.4}  top-5 {:.4}  n {}",
                m.top1, m.top5, m.n
            );
        }
    }
    record(&out, "eval", cfg, t)
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let t = Instant::now();
    let ds = dataset(cfg)?;
    let bank = bank(cfg, &ds)?;
    let out = output_dir(cfg)?;
    let exp = Experiment {
        dataset: &ds,
        means: class_means(&ds)?,
        bank,
        alpha: cfg.alpha.clone(),
        train: cfg.train.clone(),
    };
    let threads = sweep_threads()?;
    let grid = &cfg.sweep.grid;
    let rows = match cfg.sweep.axis {
        Axis::Gamma => gamma_sweep(&exp, grid, threads)?,
        Axis::Topk => {
            let ks = grid
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::Config(format!(
                            "top-k grid values must be whole numbers, got {v}"
                        )))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            topk_sweep(&exp, &ks, threads)?
        }
    };
    write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    atomic_write(
        &out.join("sweep.svg"),
        sweep_svg(&rows, cfg.sweep.axis.name()).as_bytes(),
    )?;
    record(&out, "sweep", cfg, t)
}
