//! The full model (encoder, interaction head, shared classifier) and its
//! checkpoint format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, TokenizedInstance, Vocabulary, DEFAULT_MAX_LEN};
use crate::encoder::{DeskEncoder, EncoderConfig};
use crate::nn::ModelError;
use crate::optim::OptimizerState;
use crate::psi::{MutualOp, PsiHead, SharedClassifier, HEAD_PREFIX};
use crate::tensor::{ParamGroup, ParamStore, Tape, Tensor};

pub const CHECKPOINT_FORMAT: &str = "psi-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub mutual_op: MutualOp,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            mutual_op: MutualOp::InteractiveMlp,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: DeskEncoder,
    /// `None` once the head has been stripped for inference.
    pub head: Option<PsiHead>,
    pub classifier: SharedClassifier,
}

impl PsiModel {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        let mut store = ParamStore::new();
        let encoder = DeskEncoder::init(config.encoder, &mut store, rng)?;
        let dim = config.encoder.output_dim;
        let head = PsiHead::init(config.mutual_op, dim, &mut store, rng)?;
        let classifier = SharedClassifier::init(&mut store, rng, dim)?;
        Ok(Self {
            config,
            store,
            encoder,
            head: Some(head),
            classifier,
        })
    }

    /// Binds to parameters already in `store`. The head is attached when its
    /// parameters are present (or it has none) and left out otherwise.
    pub fn attach(config: ModelConfig, store: ParamStore) -> Result<Self, ModelError> {
        let encoder = DeskEncoder::attach(config.encoder, &store)?;
        let dim = config.encoder.output_dim;
        let classifier = SharedClassifier::attach(&store, dim)?;
        let has_head_params = store.iter().any(|p| p.name.starts_with(HEAD_PREFIX));
        let head = if has_head_params || !config.mutual_op.has_params() {
            Some(PsiHead::attach(config.mutual_op, dim, &store)?)
        } else {
            None
        };
        Ok(Self {
            config,
            store,
            encoder,
            head,
            classifier,
        })
    }

    /// Copy with every interaction-head parameter removed.
    pub fn without_head(&self) -> Result<Self, ModelError> {
        let mut store = ParamStore::new();
        for p in self.store.iter().filter(|p| !p.name.starts_with(HEAD_PREFIX)) {
            store.insert(p.name.clone(), p.group, p.value.clone())?;
        }
        let mut model = Self::attach(self.config, store)?;
        model.head = None;
        Ok(model)
    }

    /// Semantic vector `v = F(x)`.
    pub fn vector(&self, instance: &TokenizedInstance) -> Result<Vec<f64>, ModelError> {
        self.encoder.extract(&self.store, instance)
    }

    /// Class probabilities through the encoder and shared classifier only.
    pub fn probabilities(&self, instance: &TokenizedInstance) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let v = self.encoder.forward(&mut tape, &self.store, instance)?;
        let p = self.classifier.classify(&mut tape, &self.store, v)?;
        Ok(tape.value(p).data().to_vec())
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub vocabulary: Vec<String>,
    pub params: Vec<ParamRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn from_model(model: &PsiModel, vocab: &Vocabulary, optimizer: Option<&OptimizerState>) -> Self {
        let params = model
            .store
            .iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                group: p.group,
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: model.config,
            vocabulary: vocab.tokens().to_vec(),
            params,
            optimizer: optimizer.cloned(),
        }
    }

    /// Drops the interaction head and any optimiser state.
    pub fn strip_head(&mut self) {
        self.params.retain(|p| !p.name.starts_with(HEAD_PREFIX));
        self.optimizer = None;
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let file = File::open(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Format(format!(
                "format {} version {}",
                ckpt.format, ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn restore(&self) -> Result<(PsiModel, Vocabulary), CheckpointError> {
        let vocab = Vocabulary::from_tokens(self.vocabulary.clone())?;
        if vocab.len() != self.model.encoder.vocab_size {
            return Err(CheckpointError::Format(format!(
                "vocabulary has {} tokens, encoder expects {}",
                vocab.len(),
                self.model.encoder.vocab_size
            )));
        }
        let mut store = ParamStore::new();
        for p in &self.params {
            let value = Tensor::new(p.shape.clone(), p.values.clone()).map_err(ModelError::from)?;
            store.insert(p.name.clone(), p.group, value).map_err(ModelError::from)?;
        }
        Ok((PsiModel::attach(self.model, store)?, vocab))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(op: MutualOp) -> PsiModel {
        let config = ModelConfig {
            encoder: EncoderConfig {
                vocab_size: 6,
                embed_dim: 4,
                hidden_dim: 5,
                output_dim: 3,
            },
            mutual_op: op,
            max_len: 8,
        };
        PsiModel::init(config, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(
            ["[PAD]", "[UNK]", "[SEP]", "a", "b", "c"].map(String::from).to_vec(),
        )
        .unwrap()
    }

    fn instance() -> TokenizedInstance {
        TokenizedInstance {
            token_ids: vec![3, 4, 2, 5, 0, 0, 0, 0],
            attention_length: 4,
            label: 1,
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = small(MutualOp::InteractiveMlp);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        Checkpoint::from_model(&model, &vocab(), None).save(&path).unwrap();
        let (restored, v) = Checkpoint::load(&path).unwrap().restore().unwrap();
        assert_eq!(restored, model);
        assert_eq!(v, vocab());
        assert_eq!(
            restored.probabilities(&instance()).unwrap(),
            model.probabilities(&instance()).unwrap()
        );
    }

    #[test]
    fn stripped_head_keeps_predictions() {
        let model = small(MutualOp::Individual);
        let mut ckpt = Checkpoint::from_model(&model, &vocab(), None);
        ckpt.strip_head();
        assert!(ckpt.params.iter().all(|p| !p.name.starts_with(HEAD_PREFIX)));
        let (restored, _) = ckpt.restore().unwrap();
        assert!(restored.head.is_none());
        assert_eq!(
            restored.probabilities(&instance()).unwrap(),
            model.probabilities(&instance()).unwrap()
        );
        let direct = model.without_head().unwrap();
        assert_eq!(direct.store.len() + 4, model.store.len());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = small(MutualOp::Sum);
        let mut ckpt = Checkpoint::from_model(&model, &vocab(), None);
        let fc1 = ckpt.params.iter_mut().find(|p| p.name == "encoder.fc1.weight").unwrap();
        fc1.shape = vec![4, 5];
        assert!(matches!(
            ckpt.restore(),
            Err(CheckpointError::Model(ModelError::ShapeMismatch { .. }))
        ));
    }

    #[test]
    fn wrong_format_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        let mut ckpt = Checkpoint::from_model(&small(MutualOp::Sum), &vocab(), None);
        ckpt.version = 99;
        ckpt.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::Format(_))));
    }
}
