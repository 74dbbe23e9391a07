//! Run configuration, its stable hash and named random substreams.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::eval::{SplitMode, SplitSpec};
use crate::order::{BehaviorOrder, RankUniverse};
use crate::sampler::SamplerMode;
use crate::train::{AdamParams, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerChoice {
    #[default]
    Pobpr,
    Uniform,
    Mtl,
}

impl std::str::FromStr for SamplerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pobpr" => Ok(SamplerChoice::Pobpr),
            "uniform" => Ok(SamplerChoice::Uniform),
            "mtl" => Ok(SamplerChoice::Mtl),
            other => Err(format!("unknown sampler mode `{other}` (expected pobpr, uniform or mtl)")),
        }
    }
}

/// Hyperparameter grids for `sweep`. Empty lists fall back to the scalar
/// value of the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub tau: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lr: Vec<f64>,
    pub reg: Vec<f64>,
    pub max_cells: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid { tau: vec![], gamma: vec![], lr: vec![], reg: vec![], max_cells: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset name recorded in reports.
    pub name: String,
    /// One TSV file per behavior.
    pub datasets: BTreeMap<String, String>,
    /// Whether dataset files start with a header row.
    pub header: bool,
    /// Behavior levels in ascending importance.
    pub levels: Vec<Vec<String>>,
    pub rank_universe: RankUniverse,
    pub min_interactions: usize,
    pub tau: f64,
    pub gamma: f64,
    pub dim: usize,
    pub layers: usize,
    pub init_sigma: f64,
    pub lr: f64,
    pub reg: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sampler_mode: SamplerChoice,
    /// Per-behavior task weights for the `mtl` sampler; missing behaviors weigh 1.
    pub mtl_weights: BTreeMap<String, f64>,
    pub eval_every: usize,
    pub patience: usize,
    /// Fraction of training interactions held out for early stopping; 0 disables it.
    pub validation_fraction: f64,
    pub split: SplitMode,
    pub test_fraction: f64,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub deterministic: bool,
    pub output_dir: String,
    pub sweep: SweepGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "dataset".into(),
            datasets: BTreeMap::new(),
            header: false,
            levels: vec![],
            rank_universe: RankUniverse::AllSubsets,
            min_interactions: 0,
            tau: 1.0,
            gamma: 1.0,
            dim: 64,
            layers: 2,
            init_sigma: 0.1,
            lr: 1e-3,
            reg: 1e-4,
            epochs: 100,
            batch_size: 1024,
            sampler_mode: SamplerChoice::Pobpr,
            mtl_weights: BTreeMap::new(),
            eval_every: 5,
            patience: 10,
            validation_fraction: 0.1,
            split: SplitMode::Random,
            test_fraction: 0.2,
            ks: vec![20],
            seed: 2024,
            deterministic: true,
            output_dir: "runs".into(),
            sweep: SweepGrid::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative dataset and output paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in cfg.datasets.values_mut() {
            *p = resolve(base, p);
        }
        cfg.output_dir = resolve(base, &cfg.output_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn order(&self) -> Result<BehaviorOrder, Error> {
        Ok(BehaviorOrder::new(&self.levels)?)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let order = self.order()?;
        for b in order.behaviors() {
            if !self.datasets.contains_key(b) {
                return Err(Error::Config(format!("no dataset file for behavior `{b}`")));
            }
        }
        for b in self.datasets.keys() {
            order.index_of(b)?;
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be non-negative, got {}", self.tau)));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return Err(Error::Config(format!("init_sigma must be positive, got {}", self.init_sigma)));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be a non-empty list of positive cutoffs".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        self.train_config(&order)?.validate()?;
        Ok(())
    }

    /// Hex digest of the canonical JSON form, ignoring where outputs go and
    /// the sweep grid.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = String::new();
        canonical.sweep = SweepGrid::default();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { mode: self.split, test_fraction: self.test_fraction, seed: substream_seed(self.seed, "split") }
    }

    pub fn validation_split(&self) -> Option<SplitSpec> {
        (self.validation_fraction > 0.0).then(|| SplitSpec {
            mode: self.split,
            test_fraction: self.validation_fraction,
            seed: substream_seed(self.seed, "validation"),
        })
    }

    pub fn sampler(&self, order: &BehaviorOrder) -> SamplerMode {
        match self.sampler_mode {
            SamplerChoice::Pobpr => SamplerMode::PartialOrder,
            SamplerChoice::Uniform => SamplerMode::Uniform,
            SamplerChoice::Mtl => SamplerMode::MultiTask(
                order.behaviors().iter().map(|b| self.mtl_weights.get(b).copied().unwrap_or(1.0)).collect(),
            ),
        }
    }

    pub fn train_config(&self, order: &BehaviorOrder) -> Result<TrainConfig, Error> {
        Ok(TrainConfig {
            lr: self.lr,
            l2_reg: self.reg,
            epochs: self.epochs,
            batch_size: self.batch_size,
            gamma: self.gamma,
            seed: substream_seed(self.seed, "sampler"),
            sampler: self.sampler(order),
            adam: AdamParams::default(),
            eval_every: self.eval_every,
            patience: self.patience,
            eval_k: if self.ks.contains(&20) { 20 } else { self.ks[0] },
        })
    }

    /// Cutoff used when a single summary metric is needed.
    pub fn primary_k(&self) -> usize {
        if self.ks.contains(&20) {
            20
        } else {
            self.ks[0]
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        Path::new(&self.output_dir).join(self.hash())
    }
}

fn resolve(base: &Path, p: &str) -> String {
    let path = Path::new(p);
    if path.is_absolute() {
        p.to_string()
    } else {
        base.join(path).to_string_lossy().into_owned()
    }
}

/// Seed of the named substream derived from a master seed.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
