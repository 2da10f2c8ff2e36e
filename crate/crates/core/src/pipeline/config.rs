use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::assign::{KMeansOptions, SinkhornOptions};
use crate::error::{Error, Result};
use crate::expr::PreprocessConfig;
use crate::graph::GraphOptions;
use crate::nn::AdamConfig;
use crate::objective::LossWeights;

/// Number of clusters: explicit, or the number of distinct ground-truth labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterCount {
    Fixed(usize),
    #[default]
    FromLabels,
}

impl FromStr for ClusterCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" | "from-labels" => Ok(ClusterCount::FromLabels),
            other => other
                .parse::<usize>()
                .map(ClusterCount::Fixed)
                .map_err(|_| Error::Config(format!("k must be an integer or \"auto\", got {other:?}"))),
        }
    }
}

impl fmt::Display for ClusterCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterCount::Fixed(k) => write!(f, "{k}"),
            ClusterCount::FromLabels => write!(f, "from-labels"),
        }
    }
}

impl Serialize for ClusterCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ClusterCount::Fixed(k) => s.serialize_u64(*k as u64),
            ClusterCount::FromLabels => s.serialize_str("from-labels"),
        }
    }
}

impl<'de> Deserialize<'de> for ClusterCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(k) => Ok(ClusterCount::Fixed(k)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetStrategy {
    /// Entropic optimal transport with mixing-proportion column constraints.
    #[default]
    Ot,
    /// Squared-frequency sharpening of Q.
    Sdcn,
}

/// Everything a training run needs. Field names are the JSON config keys;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preprocess: PreprocessConfig,
    /// Skip preprocessing entirely (input is already model-ready).
    pub skip_preprocess: bool,
    pub weights: LossWeights,
    pub k: ClusterCount,
    pub pretrain_epochs: usize,
    pub train_epochs: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub sinkhorn: SinkhornOptions,
    pub kmeans: KMeansOptions,
    pub graph: GraphOptions,
    /// Encoder widths; the decoder mirrors them.
    pub layers: Vec<usize>,
    pub target_strategy: TargetStrategy,
    pub target_refresh_every: usize,
    pub use_pmg: bool,
    pub use_smg: bool,
    pub use_ncut: bool,
    pub use_kl: bool,
    pub use_recon: bool,
    pub use_orthogonality: bool,
    /// Run the second phase as three consecutive blocks (cut, reconstruction,
    /// clustering) of `train_epochs` each instead of one joint block.
    pub sequential_phase2: bool,
    /// Single-threaded execution for bit-exact reproducibility.
    pub strict_sequential: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            skip_preprocess: false,
            weights: LossWeights::default(),
            k: ClusterCount::FromLabels,
            pretrain_epochs: 200,
            train_epochs: 200,
            seed: 0,
            optimizer: AdamConfig::default(),
            sinkhorn: SinkhornOptions::default(),
            kmeans: KMeansOptions::default(),
            graph: GraphOptions::default(),
            layers: vec![256, 16],
            target_strategy: TargetStrategy::Ot,
            target_refresh_every: 1,
            use_pmg: true,
            use_smg: true,
            use_ncut: true,
            use_kl: true,
            use_recon: true,
            use_orthogonality: true,
            sequential_phase2: false,
            strict_sequential: false,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optimizer.validate()?;
        self.preprocess.validate()?;
        if self.use_ncut && !(self.use_pmg || self.use_smg) {
            return Err(Error::Config("use_ncut needs at least one of use_pmg / use_smg".into()));
        }
        if self.pretrain_epochs == 0 || self.train_epochs == 0 {
            return Err(Error::Config("pretrain_epochs and train_epochs must be at least 1".into()));
        }
        if self.target_refresh_every == 0 {
            return Err(Error::Config("target_refresh_every must be at least 1".into()));
        }
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {:?}", self.layers)));
        }
        if let ClusterCount::Fixed(k) = self.k {
            if k < 2 {
                return Err(Error::Config(format!("k must be at least 2, got {k}")));
            }
        }
        if !(self.sinkhorn.tol > 0.0) || self.sinkhorn.max_iter == 0 {
            return Err(Error::Config("sinkhorn tol and max_iter must be positive".into()));
        }
        if self.graph.sparsify_top_k == Some(0) {
            return Err(Error::Config("sparsify_top_k must be positive".into()));
        }
        Ok(())
    }

    /// Graph balance after the channel switches: PMG only → 1, SMG only → 0.
    pub fn effective_alpha(&self) -> f64 {
        match (self.use_pmg, self.use_smg) {
            (true, false) => 1.0,
            (false, true) => 0.0,
            _ => self.weights.alpha,
        }
    }

    pub fn effective_gamma(&self) -> f64 {
        if self.use_orthogonality {
            self.weights.gamma
        } else {
            0.0
        }
    }
}
