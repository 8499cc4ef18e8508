use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::{AttentionSpec, ClassifierSpec, FfnSpec};
use crate::data::SyntheticConfig;
use crate::embedding::AutoencoderSpec;
use crate::error::{Error, Result};
use crate::fingerprint::digest_bytes;
use crate::graph::{GcnSpec, GraphConfig};
use crate::metrics::Task;
use crate::train::TrainConfig;

const LR_RANGE: (f64, f64) = (3e-4, 1e-3);
const BATCH_RANGE: (usize, usize) = (512, 16384);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderStage {
    pub latent_width: usize,
    pub encoder_widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for AutoencoderStage {
    fn default() -> Self {
        Self {
            latent_width: 256,
            encoder_widths: vec![128, 64],
            epochs: 20,
            batch_size: 512,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfnStage {
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for FfnStage {
    fn default() -> Self {
        Self {
            hidden1: 128,
            hidden2: 64,
            dropout: 0.0,
            epochs: 20,
            batch_size: 512,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionStage {
    /// Hidden width D of the token projection and attention block.
    pub model_width: usize,
    pub heads: usize,
    pub ff_widths: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for AttentionStage {
    fn default() -> Self {
        Self {
            model_width: 256,
            heads: 4,
            ff_widths: vec![128],
            dropout: 0.0,
            epochs: 20,
            batch_size: 512,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnStage {
    pub hidden: usize,
    pub dropout: f64,
    pub threshold: f64,
    pub max_edges: usize,
    pub per_node_cap: Option<usize>,
    /// Larger populations are subsampled to this many nodes before the
    /// graph is built.
    pub node_budget: usize,
    /// Full-graph steps.
    pub epochs: usize,
    pub lr: f64,
}

impl Default for GcnStage {
    fn default() -> Self {
        Self {
            hidden: 128,
            dropout: 0.3,
            threshold: 0.4,
            max_edges: 1000,
            per_node_cap: None,
            node_budget: 2000,
            epochs: 1500,
            lr: 1e-3,
        }
    }
}

/// Parameters for every stage. Loaded from TOML; every command writes the
/// resolved copy next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed. It replaces `synthetic.seed` when the config is resolved.
    pub seed: u64,
    pub task: Task,
    pub split_ratio: f64,
    pub synthetic: SyntheticConfig,
    pub autoencoder: AutoencoderStage,
    pub ffn: FfnStage,
    pub attention: AttentionStage,
    pub gcn: GcnStage,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: Task::Multiclass,
            split_ratio: 0.7,
            synthetic: SyntheticConfig::default(),
            autoencoder: AutoencoderStage::default(),
            ffn: FfnStage::default(),
            attention: AttentionStage::default(),
            gcn: GcnStage::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(cfg.resolved())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn resolved(mut self) -> Self {
        self.synthetic.seed = self.seed;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolved()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn fingerprint(&self) -> String {
        digest_bytes(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        self.synthetic.validate()?;
        self.graph_config().validate()?;
        if self.gcn.node_budget == 0 {
            return Err(Error::Config("gcn.node_budget must be positive".into()));
        }
        for t in [self.ae_training(), self.ffn_training(), self.attention_training()] {
            t.validate()?;
        }
        self.gcn_training().validate()?;
        self.classifier_spec(crate::classifiers::ClassifierKind::Ffn, 8)?.validate()?;
        self.classifier_spec(crate::classifiers::ClassifierKind::Attention, 8)?.validate()?;
        self.autoencoder_spec(8).validate()?;
        self.gcn_spec(8, self.task).validate()?;
        Ok(())
    }

    /// Settings outside the learning-rate and batch ranges used for the
    /// reference runs. These are allowed but reported.
    pub fn range_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let stages = [
            ("autoencoder", self.autoencoder.lr, Some(self.autoencoder.batch_size)),
            ("ffn", self.ffn.lr, Some(self.ffn.batch_size)),
            ("attention", self.attention.lr, Some(self.attention.batch_size)),
            ("gcn", self.gcn.lr, None),
        ];
        for (name, lr, batch) in stages {
            if !(LR_RANGE.0..=LR_RANGE.1).contains(&lr) {
                out.push(format!("{name}.lr = {lr} is outside [{}, {}]", LR_RANGE.0, LR_RANGE.1));
            }
            if let Some(b) = batch {
                if !(BATCH_RANGE.0..=BATCH_RANGE.1).contains(&b) {
                    out.push(format!("{name}.batch_size = {b} is outside [{}, {}]", BATCH_RANGE.0, BATCH_RANGE.1));
                }
            }
        }
        out
    }

    pub fn autoencoder_spec(&self, input_width: usize) -> AutoencoderSpec {
        AutoencoderSpec {
            input_width,
            latent_width: self.autoencoder.latent_width,
            encoder_widths: self.autoencoder.encoder_widths.clone(),
            ..AutoencoderSpec::default()
        }
    }

    pub fn ae_training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.autoencoder.epochs,
            batch_size: self.autoencoder.batch_size,
            lr: self.autoencoder.lr,
            seed: self.seed,
        }
    }

    pub fn ffn_training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.ffn.epochs,
            batch_size: self.ffn.batch_size,
            lr: self.ffn.lr,
            seed: self.seed,
        }
    }

    pub fn attention_training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.attention.epochs,
            batch_size: self.attention.batch_size,
            lr: self.attention.lr,
            seed: self.seed,
        }
    }

    /// Batch size is unused: the GCN trains on the full graph.
    pub fn gcn_training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.gcn.epochs,
            batch_size: TrainConfig::default().batch_size,
            lr: self.gcn.lr,
            seed: self.seed,
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            threshold: self.gcn.threshold,
            max_edges: self.gcn.max_edges,
            per_node_cap: self.gcn.per_node_cap,
        }
    }

    pub fn gcn_spec(&self, input_width: usize, task: Task) -> GcnSpec {
        GcnSpec {
            input_width,
            hidden: self.gcn.hidden,
            dropout: self.gcn.dropout,
            num_classes: task.num_classes(),
        }
    }

    /// Spec for `kind` on embeddings of width `input_width` for the configured task.
    pub fn classifier_spec(&self, kind: crate::classifiers::ClassifierKind, input_width: usize) -> Result<ClassifierSpec> {
        use crate::classifiers::ClassifierKind;
        let num_classes = self.task.num_classes();
        match kind {
            ClassifierKind::Ffn => Ok(ClassifierSpec::Ffn(FfnSpec {
                input_width,
                hidden1: self.ffn.hidden1,
                hidden2: self.ffn.hidden2,
                dropout: self.ffn.dropout,
                num_classes,
                ..FfnSpec::default()
            })),
            ClassifierKind::Attention => Ok(ClassifierSpec::Attention(AttentionSpec {
                token_count: input_width,
                model_width: self.attention.model_width,
                heads: self.attention.heads,
                ff_widths: self.attention.ff_widths.clone(),
                dropout: self.attention.dropout,
                num_classes,
            })),
            ClassifierKind::Gcn => Err(Error::Usage("the gcn is configured through gcn_spec".into())),
        }
    }

    pub fn training_for(&self, kind: crate::classifiers::ClassifierKind) -> TrainConfig {
        use crate::classifiers::ClassifierKind;
        match kind {
            ClassifierKind::Ffn => self.ffn_training(),
            ClassifierKind::Attention => self.attention_training(),
            ClassifierKind::Gcn => self.gcn_training(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        cfg.validate().unwrap();
        assert!(cfg.range_warnings().is_empty());
    }

    #[test]
    fn partial_toml_and_unknown_keys() {
        let cfg = RunConfig::from_toml("seed = 9\n[attention]\nheads = 2\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.synthetic.seed, 9);
        assert_eq!(cfg.attention.heads, 2);
        assert_eq!(cfg.attention.model_width, 256);
        assert!(matches!(RunConfig::from_toml("sede = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn ranges_are_reported_not_rejected() {
        let mut cfg = RunConfig::default();
        cfg.ffn.batch_size = 64;
        cfg.gcn.lr = 1e-2;
        cfg.validate().unwrap();
        assert_eq!(cfg.range_warnings().len(), 2);
    }
}
