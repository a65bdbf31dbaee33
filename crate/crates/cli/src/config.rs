use std::fs;
use std::path::{Path, PathBuf};

use alphanet::alphanet::{AlphaConfig, TrainConfig};
use alphanet::datagen::{BaselineConfig, Decay, GenConfig};
use alphanet::{Error, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Gamma,
    Topk,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Gamma => "gamma",
            Axis::Topk => "topk",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Axis,
    pub grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            axis: Axis::Gamma,
            grid: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

/// Effective configuration of one command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub composed: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub datagen: GenConfig,
    pub baseline: BaselineConfig,
    pub alpha: AlphaConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

/// What `run.json` holds; also accepted by `--config`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub git_describe: String,
    pub wall_time_secs: f64,
}

impl RunConfig {
    /// Reads either a bare config or a `run.json` record.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let value: serde_json::Value = serde_json::from_slice(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let parsed = if value.get("command").is_some() && value.get("config").is_some() {
            serde_json::from_value::<RunRecord>(value).map(|r| r.config)
        } else {
            serde_json::from_value::<RunConfig>(value)
        };
        parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Pushes the top-level seed into every stage and checks every section.
    pub fn finish(mut self) -> Result<Self> {
        self.datagen.seed = self.seed;
        self.alpha.seed = self.seed;
        self.train.seed = self.seed;
        self.datagen.validate()?;
        self.alpha.validate()?;
        self.train.validate()?;
        if self.baseline.epochs == 0 || self.baseline.batch_size == 0 || !(self.baseline.lr > 0.0) {
            return Err(Error::Config(
                "baseline epochs, batch size, and lr must be positive".into(),
            ));
        }
        if self.sweep.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        Ok(self)
    }

    pub fn require(&self, what: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        p.clone().ok_or_else(|| {
            Error::Config(format!("missing --{what} (or `{what}` in the config file)"))
        })
    }
}

/// A parsed `--grid` value.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid(pub Vec<f64>);

fn grid_arg(s: &str) -> std::result::Result<Grid, String> {
    parse_grid(s).map(Grid)
}

/// `a:b:step` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| format!("not a number: {t:?}"))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0) || b < a {
                return Err(format!("bad range {s:?}"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..n)
                .map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        [_] => s.split(',').map(num).collect(),
        _ => Err(format!(
            "grid must be `start:end:step` or a comma list, got {s:?}"
        )),
    }
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// JSON config file or a previous run.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub composed: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub head_count: Option<usize>,
    #[arg(long)]
    pub tail_count: Option<usize>,
    #[arg(long)]
    pub decay_exponent: Option<f64>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub val_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub many_above: Option<usize>,
    #[arg(long)]
    pub few_below: Option<usize>,

    #[arg(long)]
    pub baseline_epochs: Option<usize>,
    #[arg(long)]
    pub baseline_lr: Option<f64>,
    #[arg(long)]
    pub baseline_batch_size: Option<usize>,

    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub reduced_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub leaky_slope: Option<f64>,
    /// Fail on an all-zero alpha vector instead of smoothing it.
    #[arg(long)]
    pub strict_alpha: bool,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_step: Option<usize>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,

    #[arg(long, value_enum)]
    pub axis: Option<Axis>,
    /// `start:end:step` or `v1,v2,...`
    #[arg(long, value_parser = grid_arg)]
    pub grid: Option<Grid>,
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

impl Overrides {
    /// Defaults, then the config file, then flags.
    pub fn resolve(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, self.seed);
        for (dst, v) in [
            (&mut c.dataset, self.dataset),
            (&mut c.bank, self.bank),
            (&mut c.composed, self.composed),
            (&mut c.out, self.out),
        ] {
            if v.is_some() {
                *dst = v;
            }
        }
        let g = &mut c.datagen;
        set(&mut g.n_classes, self.n_classes);
        set(&mut g.feature_dim, self.feature_dim);
        set(&mut g.head_count, self.head_count);
        set(&mut g.tail_count, self.tail_count);
        if let Some(exponent) = self.decay_exponent {
            g.decay = Decay::Power { exponent };
        }
        set(&mut g.spread, self.spread);
        set(&mut g.rho, self.rho);
        set(&mut g.val_per_class, self.val_per_class);
        set(&mut g.test_per_class, self.test_per_class);
        set(&mut g.thresholds.many_above, self.many_above);
        set(&mut g.thresholds.few_below, self.few_below);

        let b = &mut c.baseline;
        set(&mut b.epochs, self.baseline_epochs);
        set(&mut b.lr, self.baseline_lr);
        set(&mut b.batch_size, self.baseline_batch_size);

        let a = &mut c.alpha;
        set(&mut a.gamma, self.gamma);
        set(&mut a.top_k, self.topk);
        set(&mut a.reduced_dim, self.reduced_dim);
        if self.hidden.is_some() {
            a.hidden = self.hidden;
        }
        set(&mut a.leaky_slope, self.leaky_slope);
        a.strict_alpha |= self.strict_alpha;

        let t = &mut c.train;
        set(&mut t.epochs, self.epochs);
        set(&mut t.lr, self.lr);
        set(&mut t.momentum, self.momentum);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.lr_step, self.lr_step);
        set(&mut t.lr_decay, self.lr_decay);
        set(&mut t.weight_decay, self.weight_decay);

        set(&mut c.sweep.axis, self.axis);
        set(&mut c.sweep.grid, self.grid.map(|g| g.0));
        c.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.1:0.9:0.1").unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[2], 0.3);
        assert_eq!(g[8], 0.9);
        assert_eq!(parse_grid("2,5,10").unwrap(), vec![2.0, 5.0, 10.0]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"alpha": {"gamma": 0.3, "top_k": 4}, "seed": 9}"#).unwrap();
        let o = Overrides {
            config: Some(path.clone()),
            gamma: Some(0.7),
            ..Overrides::default()
        };
        let c = o.resolve().unwrap();
        assert_eq!(c.alpha.gamma, 0.7);
        assert_eq!(c.alpha.top_k, 4);
        assert_eq!(c.alpha.reduced_dim, AlphaConfig::default().reduced_dim);
        assert_eq!((c.seed, c.train.seed, c.datagen.seed), (9, 9, 9));

        fs::write(&path, r#"{"alpha": {"gamma": 0.3, "bogus": 1}}"#).unwrap();
        let o = Overrides {
            config: Some(path),
            ..Overrides::default()
        };
        assert!(matches!(o.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn run_record_is_a_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let rec = RunRecord {
            command: "train".into(),
            config: RunConfig {
                seed: 3,
                ..RunConfig::default()
            },
            seed: 3,
            git_describe: "unknown".into(),
            wall_time_secs: 1.5,
        };
        fs::write(&path, serde_json::to_vec(&rec).unwrap()).unwrap();
        assert_eq!(RunConfig::from_file(&path).unwrap().seed, 3);
    }
}
