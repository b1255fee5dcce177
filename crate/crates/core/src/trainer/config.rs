use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SsrError};
use crate::model::{GraphGateMode, ModelConfig};
use crate::objective::LossWeights;
use crate::spectral::{PartitionScope, DEFAULT_DENSE_LIMIT};

/// Which interactions feed the Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumGraph {
    /// Training interactions only.
    #[default]
    Train,
    /// Every interaction, including validation and test.
    Full,
}

/// Every knob of a training run. Read from a flat TOML file; omitted keys
/// take their defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub bands: usize,
    pub rank: usize,
    pub gate_hidden: usize,
    pub mask_rate: f64,
    pub lambda_sbm: f64,
    pub eta_scr: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dense_limit: usize,
    pub k_trunc: usize,
    /// Masked views per batch for the consistency term.
    pub sbm_samples: usize,
    /// Negatives per contrastive anchor.
    pub scr_negatives: usize,
    /// Cap on distinct items per batch used as contrastive anchors.
    pub scr_items: usize,
    pub graph_gate: GraphGateMode,
    pub partition_scope: PartitionScope,
    pub spectrum_graph: SpectrumGraph,
    pub use_modalities: bool,
    pub spectral: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            bands: 4,
            rank: 8,
            gate_hidden: 32,
            mask_rate: 0.2,
            lambda_sbm: 0.01,
            eta_scr: 0.01,
            tau: 0.2,
            lr: 1e-3,
            batch_size: 2048,
            negatives_per_positive: 1,
            max_epochs: 1000,
            patience: 20,
            seed: 42,
            dense_limit: DEFAULT_DENSE_LIMIT,
            k_trunc: 256,
            sbm_samples: 1,
            scr_negatives: 8,
            scr_items: 256,
            graph_gate: GraphGateMode::Degree,
            partition_scope: PartitionScope::PerModality,
            spectrum_graph: SpectrumGraph::Train,
            use_modalities: true,
            spectral: true,
        }
    }
}

/// Learning rates searched by the tuning scripts.
pub const LR_GRID: [f64; 4] = [1e-4, 5e-4, 1e-3, 5e-3];

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| SsrError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let positive = [
            ("batch_size", self.batch_size),
            ("negatives_per_positive", self.negatives_per_positive),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("dense_limit", self.dense_limit),
            ("k_trunc", self.k_trunc),
            ("sbm_samples", self.sbm_samples),
            ("scr_negatives", self.scr_negatives),
            ("scr_items", self.scr_items),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(SsrError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.mask_rate) {
            return Err(SsrError::Config(format!("mask_rate {} outside [0, 1)", self.mask_rate)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(SsrError::Config(format!("lr {} must be finite and non-negative", self.lr)));
        }
        LossWeights { lambda: self.lambda_sbm, eta: self.eta_scr, tau: self.tau }
            .validate()
            .map_err(|e| SsrError::Config(e.to_string()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            bands: self.bands,
            rank: self.rank,
            gate_hidden: self.gate_hidden,
            graph_gate: self.graph_gate,
            partition_scope: self.partition_scope,
            use_modalities: self.use_modalities,
            spectral: self.spectral,
        }
    }

    /// Auxiliary terms act on frequency bands, so both are off without them.
    pub fn loss_weights(&self) -> LossWeights {
        if self.spectral {
            LossWeights { lambda: self.lambda_sbm, eta: self.eta_scr, tau: self.tau }
        } else {
            LossWeights { lambda: 0.0, eta: 0.0, tau: self.tau }
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Modalities removed: ID embeddings only.
    pub fn id_only(&self) -> Self {
        TrainConfig { use_modalities: false, ..self.clone() }
    }

    /// One band per signal, no masking or contrastive terms.
    pub fn no_spectral(&self) -> Self {
        TrainConfig { spectral: false, lambda_sbm: 0.0, eta_scr: 0.0, ..self.clone() }
    }
}
