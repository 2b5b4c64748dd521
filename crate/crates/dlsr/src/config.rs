//! Run configuration: defaults, then a JSON file, then `DLSR_SEED`, then
//! command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use dlsr_core::search::SearchConfig;
use dlsr_core::search_space::SupernetConfig;
use dlsr_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "DLSR_SEED";
pub const RESOLVED_FILE: &str = "config.resolved.json";

/// Procedurally generated HR images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 20,
            height: 64,
            width: 64,
        }
    }
}

/// Where HR images come from and how they are cut into samples. These
/// fields take precedence over the matching search and training fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory of 8-bit RGB images; when absent a synthetic set is used.
    pub hr_dir: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub scale: usize,
    /// HR patch side; `None` keeps the search and training defaults.
    pub patch_size: Option<usize>,
    pub train_fraction: f64,
    /// Seeds the synthetic images and the train/held-out split.
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            hr_dir: None,
            synthetic: SyntheticSpec::default(),
            scale: 2,
            patch_size: None,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: SupernetConfig,
    pub search: SearchConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    /// Steps between periodic checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: SupernetConfig::default(),
            search: SearchConfig::default(),
            train: TrainConfig::default(),
            dataset: DatasetConfig::default(),
            checkpoint_every: 500,
        }
    }
}

/// Values given on the command line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub warmup: Option<u64>,
    pub batch_size: Option<usize>,
    pub patch_size: Option<usize>,
    pub scale: Option<usize>,
    pub channels: Option<usize>,
    pub cells: Option<usize>,
    pub hr_dir: Option<PathBuf>,
    pub mu: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub init_from: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("invalid run configuration")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Applies every seed source to both the search and the training run.
    fn set_seed(&mut self, seed: u64) {
        self.search.seed = seed;
        self.train.seed = seed;
        self.dataset.seed = seed;
    }

    /// File (or defaults), then `env_seed`, then `overrides`, then the
    /// dataset descriptor copied into the search and training sections.
    pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => Self::read(path)?,
            None => Self::default(),
        };
        if let Some(text) = env_seed {
            let seed = text
                .trim()
                .parse()
                .with_context(|| format!("{} must be an unsigned integer, got {:?}", SEED_ENV, text))?;
            cfg.set_seed(seed);
        }
        let o = overrides;
        if let Some(seed) = o.seed {
            cfg.set_seed(seed);
        }
        if let Some(steps) = o.steps {
            cfg.search.total_steps = steps;
            cfg.train.total_steps = steps;
        }
        if let Some(w) = o.warmup {
            cfg.search.warmup_steps = w;
        }
        if let Some(b) = o.batch_size {
            cfg.search.batch_size = b;
            cfg.train.batch_size = b;
        }
        if let Some(p) = o.patch_size {
            cfg.dataset.patch_size = Some(p);
        }
        if let Some(s) = o.scale {
            cfg.dataset.scale = s;
        }
        if let Some(c) = o.channels {
            cfg.network.channels = c;
        }
        if let Some(n) = o.cells {
            cfg.network.num_cells = n;
        }
        if let Some(dir) = &o.hr_dir {
            cfg.dataset.hr_dir = Some(dir.clone());
        }
        if let Some(mu) = o.mu {
            cfg.search.loss.mu = mu;
            cfg.train.loss.mu = mu;
        }
        if let Some(gamma) = o.gamma {
            cfg.search.loss.gamma = gamma;
        }
        if let Some(lambda) = o.lambda {
            cfg.search.loss.lambda_val = lambda;
        }
        if let Some(path) = &o.init_from {
            cfg.train.init_from = Some(path.display().to_string());
        }
        cfg.network.scale = cfg.dataset.scale;
        cfg.search.train_fraction = cfg.dataset.train_fraction;
        if let Some(p) = cfg.dataset.patch_size {
            cfg.search.hr_patch = p;
            cfg.train.hr_patch = Some(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the shared sections; the search and training sections are
    /// checked by the command that uses them.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (2..=4).contains(&self.dataset.scale),
            "scale must be 2, 3 or 4, got {}",
            self.dataset.scale
        );
        ensure!(
            self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0,
            "train_fraction must lie in (0, 1)"
        );
        self.network.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    /// Writes the resolved configuration into the run directory.
    pub fn echo(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join(RESOLVED_FILE);
        fs::write(&path, self.to_json()).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
