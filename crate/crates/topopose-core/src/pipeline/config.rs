//! Model and training configuration, JSON-serializable with defaults so
//! config files may specify any subset of fields.

use crate::aggregation::{BackwardBranch, BlockKind};
use crate::serialization::SerializationMethod;
use crate::tensor::Real;
use crate::topology::TOPO_FEATURE_DIM;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKindConfig {
    TwinMamba,
    BiMamba,
    Attention,
}

impl From<BlockKindConfig> for BlockKind {
    fn from(k: BlockKindConfig) -> BlockKind {
        match k {
            BlockKindConfig::TwinMamba => BlockKind::TwinMamba,
            BlockKindConfig::BiMamba => BlockKind::BiMamba,
            BlockKindConfig::Attention => BlockKind::Attention,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackwardBranchConfig {
    /// Channel flip.
    Cf,
    /// Token flip.
    Tf,
    /// Random channel arrangement.
    Ra,
}

impl From<BackwardBranchConfig> for BackwardBranch {
    fn from(k: BackwardBranchConfig) -> BackwardBranch {
        match k {
            BackwardBranchConfig::Cf => BackwardBranch::ChannelFlip,
            BackwardBranchConfig::Tf => BackwardBranch::TokenFlip,
            BackwardBranchConfig::Ra => BackwardBranch::RandomArrangement,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input points per cloud after downsampling.
    pub n: usize,
    /// Keypoint count.
    pub n_k: usize,
    /// Neighborhood size for local aggregation and the point encoder.
    pub k: usize,
    /// Fused per-point feature width; must equal `d_r + d_p`.
    pub d: usize,
    /// Point-geometry feature width.
    pub d_p: usize,
    /// Appearance feature width.
    pub d_r: usize,
    /// Topological descriptor width (fixed by its layout).
    pub d_t: usize,
    /// Diagonal state size of the scan blocks.
    pub d_state: usize,
    /// Stream expansion factor of the scan blocks.
    pub expand: usize,
    pub n_blocks: usize,
    pub serialization: SerializationMethod,
    pub block_kind: BlockKindConfig,
    pub backward_branch: BackwardBranchConfig,
    /// Heatmap softmax temperature.
    pub temperature: Real,
    pub leaky_slope: Real,
    pub offsets_per_keypoint: usize,
    /// Keypoint diversity margin, meters.
    pub diversity_threshold: Real,
    /// Quantization depth per axis for curve serialization.
    pub bits: u8,
    /// Zero the topological descriptor block (ablation switch).
    pub use_topology: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 1024,
            n_k: 96,
            k: 16,
            d: 256,
            d_p: 128,
            d_r: 128,
            d_t: TOPO_FEATURE_DIM,
            d_state: 16,
            expand: 2,
            n_blocks: 6,
            serialization: SerializationMethod::Hilbert,
            block_kind: BlockKindConfig::TwinMamba,
            backward_branch: BackwardBranchConfig::Cf,
            temperature: 0.1,
            leaky_slope: 0.2,
            offsets_per_keypoint: 12,
            diversity_threshold: 0.01,
            bits: 10,
            use_topology: true,
        }
    }
}

impl ModelConfig {
    /// Desk-scale preset: every width scaled down for second-scale tests.
    pub fn micro() -> Self {
        ModelConfig {
            n: 128,
            n_k: 16,
            k: 4,
            d: 32,
            d_p: 16,
            d_r: 16,
            d_state: 4,
            n_blocks: 2,
            ..ModelConfig::default()
        }
    }

    pub fn inner_dim(&self) -> usize {
        self.expand * self.d
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d != self.d_r + self.d_p {
            return Err(ConfigError::Invalid(format!(
                "d ({}) must equal d_r + d_p ({} + {})",
                self.d, self.d_r, self.d_p
            )));
        }
        if self.d_t != TOPO_FEATURE_DIM {
            return Err(ConfigError::Invalid(format!(
                "d_t must be {TOPO_FEATURE_DIM} (2 entropies + 2×47 curve samples)"
            )));
        }
        if self.n_k <= self.k {
            return Err(ConfigError::Invalid(format!(
                "n_k ({}) must exceed the neighborhood size k ({})",
                self.n_k, self.k
            )));
        }
        for (name, v) in [
            ("n", self.n),
            ("n_k", self.n_k),
            ("k", self.k),
            ("d", self.d),
            ("d_p", self.d_p),
            ("d_r", self.d_r),
            ("d_state", self.d_state),
            ("expand", self.expand),
            ("offsets_per_keypoint", self.offsets_per_keypoint),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.temperature <= 0.0 {
            return Err(ConfigError::Invalid("temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Triangular cyclic learning rate bounds.
    pub lr_min: Real,
    pub lr_max: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub seed: u64,
    /// Gaussian point jitter augmentation (off by default at desk scale).
    pub augment: bool,
    /// Augmentation noise stddev in meters when enabled.
    pub noise_sigma: Real,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch: 8,
            lr_min: 2e-5,
            lr_max: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            augment: false,
            noise_sigma: 0.001,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lr_min <= 0.0 || self.lr_max <= self.lr_min {
            return Err(ConfigError::Invalid(format!(
                "learning-rate bounds must satisfy 0 < lr_min < lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(ConfigError::Invalid("steps and batch must be positive".into()));
        }
        Ok(())
    }

    /// Triangular wave between the bounds with period `steps / 4`.
    pub fn learning_rate(&self, step: usize) -> Real {
        let period = (self.steps / 4).max(2);
        let pos = (step % period) as Real / period as Real;
        let tri = 1.0 - (2.0 * pos - 1.0).abs();
        self.lr_min + (self.lr_max - self.lr_min) * tri
    }
}
