//! Declarative benchmark configuration (TOML).
//!
//! ```toml
//! output_dir = "out"                 # relative to this file
//! format = "md"                      # md | tex | csv
//! split = "high"                     # low | high | fixed
//! archs = ["gcn", "graph_transformer", "mlp"]
//! workers = 4                        # optional, defaults to available cores
//! cache_dir = "cache"                # remote embedding cache; TAGFORGE_CACHE wins
//!
//! [low_split]                        # used when split = "low"
//! per_class = 20
//! num_val = 500
//! num_test = 1000
//!
//! [high_split]                       # used when split = "high"
//! ratios = [0.6, 0.2, 0.2]
//!
//! [dataset]
//! kind = "planetoid"                 # or "synthetic" with generator fields
//! dir = "data"
//! name = "cora"
//!
//! [model]
//! layers = 4
//! hidden = 64
//! heads = 4
//! dropout = 0.5
//!
//! [train]
//! epochs = 300
//! patience = 10
//! lr = 0.01
//! weight_decay = 5e-4
//! seeds = [0, 1, 2, 3, 4]
//!
//! [[encoders]]
//! name = "tfidf"
//! kind = "tfidf"                     # tfidf | word | file | remote
//! vocab_size = 1433
//! ```
//!
//! Split seeds equal run seeds, so each seed sees its own random split.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::dataset::{generate_synthetic, load_planetoid, split_high, split_low, Dataset, SplitMask, SyntheticSpec};
use crate::error::{Error, Result};
use crate::features::EncoderSpec;
use crate::models::{Arch, ModelSpec};
use crate::train::TrainSpec;

pub const CACHE_ENV: &str = "TAGFORGE_CACHE";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    #[serde(alias = "markdown")]
    Md,
    #[serde(alias = "latex")]
    Tex,
    Csv,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(TableFormat::Md),
            "tex" | "latex" => Ok(TableFormat::Tex),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::Config(format!("unknown table format {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Low,
    #[default]
    High,
    /// The split file shipped with the dataset.
    Fixed,
}

impl fmt::Display for SplitChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitChoice::Low => "low",
            SplitChoice::High => "high",
            SplitChoice::Fixed => "fixed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowSplit {
    pub per_class: usize,
    pub num_val: usize,
    pub num_test: usize,
}

impl Default for LowSplit {
    fn default() -> Self {
        Self {
            per_class: 20,
            num_val: 500,
            num_test: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighSplit {
    pub ratios: [f64; 3],
}

impl Default for HighSplit {
    fn default() -> Self {
        Self { ratios: [0.6, 0.2, 0.2] }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Planetoid { dir: PathBuf, name: String },
}

/// Architecture hyper-parameters shared by every arch in the grid.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        let s = ModelSpec::new(Arch::Gcn, 1, 2);
        Self {
            layers: s.layers,
            hidden: s.hidden,
            heads: s.heads,
            dropout: s.dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct NamedEncoder {
    pub name: String,
    #[serde(flatten)]
    pub spec: EncoderSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub format: TableFormat,
    #[serde(default)]
    pub split: SplitChoice,
    #[serde(default)]
    pub low_split: LowSplit,
    #[serde(default)]
    pub high_split: HighSplit,
    pub archs: Vec<Arch>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub train: TrainSpec,
    pub encoders: Vec<NamedEncoder>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl BenchConfig {
    /// Parses `text`, resolving relative paths against `base`. Does not
    /// touch the filesystem; see [`BenchConfig::validate`].
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: BenchConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        resolve(base, &mut cfg.output_dir);
        if let DatasetSource::Planetoid { dir, .. } = &mut cfg.dataset {
            resolve(base, dir);
        }
        if let Some(c) = &mut cfg.cache_dir {
            resolve(base, c);
        }
        let env_cache = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        let default_cache = cfg.cache_dir.clone().unwrap_or_else(|| cfg.output_dir.join("cache"));
        for enc in &mut cfg.encoders {
            match &mut enc.spec {
                EncoderSpec::File { path } => resolve(base, path),
                EncoderSpec::Remote(r) => {
                    if let Some(c) = &mut r.cache_dir {
                        resolve(base, c);
                    }
                    if let Some(env) = &env_cache {
                        r.cache_dir = Some(env.clone());
                    } else if r.cache_dir.is_none() {
                        r.cache_dir = Some(default_cache.clone());
                    }
                }
                _ => {}
            }
        }
        Ok(cfg)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoders.is_empty() {
            return Err(Error::Config("at least one encoder is required".into()));
        }
        if self.archs.is_empty() {
            return Err(Error::Config("at least one architecture is required".into()));
        }
        let mut names = HashSet::new();
        for e in &self.encoders {
            if e.name.is_empty() || e.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid encoder name {:?}", e.name)));
            }
            if !names.insert(e.name.as_str()) {
                return Err(Error::Config(format!("duplicate encoder name {:?}", e.name)));
            }
            e.spec
                .validate()
                .map_err(|err| Error::Config(format!("encoder {}: {err}", e.name)))?;
        }
        let mut archs = HashSet::new();
        if let Some(a) = self.archs.iter().find(|a| !archs.insert(**a)) {
            return Err(Error::Config(format!("architecture {a} listed twice")));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.train.seeds.is_empty() {
            return Err(Error::Config("train.seeds is empty".into()));
        }
        for arch in &self.archs {
            self.model_spec(*arch, 1, 2)
                .validate()
                .map_err(|e| Error::Config(format!("model for {arch}: {e}")))?;
        }
        if let DatasetSource::Planetoid { dir, name } = &self.dataset {
            let labels = dir.join(format!("{name}.labels"));
            if !labels.is_file() {
                return Err(Error::Config(format!("dataset file {} not found", labels.display())));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self, arch: Arch, in_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            arch,
            layers: self.model.layers,
            hidden: self.model.hidden,
            heads: self.model.heads,
            dropout: self.model.dropout,
            in_dim,
            num_classes,
        }
    }

    pub fn encoder(&self, name: &str) -> Result<&NamedEncoder> {
        self.encoders.iter().find(|e| e.name == name).ok_or_else(|| {
            let known: Vec<_> = self.encoders.iter().map(|e| e.name.as_str()).collect();
            Error::Config(format!("no encoder named {name:?} (have {})", known.join(", ")))
        })
    }

    /// Where the prepared features of `enc` live. File encoders point at
    /// their own file.
    pub fn feature_path(&self, enc: &NamedEncoder) -> PathBuf {
        match &enc.spec {
            EncoderSpec::File { path } => path.clone(),
            _ => self.output_dir.join("features").join(format!("{}.emb", enc.name)),
        }
    }

    pub fn log_path(&self, encoder: &str, arch: Arch, seed: u64) -> PathBuf {
        self.output_dir.join("logs").join(format!("{encoder}_{arch}_seed{seed}.jsonl"))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSource::Synthetic(s) => generate_synthetic(s),
            DatasetSource::Planetoid { dir, name } => load_planetoid(dir, name),
        }
    }

    pub fn split_for(&self, dataset: &Dataset, seed: u64) -> Result<SplitMask> {
        match self.split {
            SplitChoice::Low => {
                let l = &self.low_split;
                split_low(&dataset.labels, l.per_class, l.num_val, l.num_test, seed)
            }
            SplitChoice::High => {
                let [a, b, c] = self.high_split.ratios;
                split_high(dataset.num_nodes(), (a, b, c), seed)
            }
            SplitChoice::Fixed => dataset
                .split
                .clone()
                .ok_or_else(|| Error::Config(format!("split = \"fixed\" but dataset {} has no split file", dataset.name))),
        }
    }
}
