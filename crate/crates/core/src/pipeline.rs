//! Run configuration and the load → encode → train → evaluate sequence
//! shared by the command line and the ablation harness.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    encode_all, load_dataset, split_of, AspectInstance, DataError, DatasetFormat, Split, TokenizedInstance,
    Vocabulary,
};
use crate::evaluator::EvalError;
use crate::model::{CheckpointError, ModelConfig, PsiModel};
use crate::nn::ModelError;
use crate::optim::OptimizerState;
use crate::trainer::{train, EpochRecord, TrainConfig, TrainError, TrainReport};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{split} split is empty")]
    EmptySplit { split: Split },
}

/// Everything a run needs. `model.encoder.vocab_size` is replaced by the size
/// of the vocabulary built from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/train.jsonl"),
            output_dir: PathBuf::from("runs/default"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let err = |message: String| RunError::Config {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Both splits, tokenised with a vocabulary built from the training split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub max_len: usize,
    pub train_records: Vec<AspectInstance>,
    pub test_records: Vec<AspectInstance>,
    pub train: Vec<TokenizedInstance>,
    pub test: Vec<TokenizedInstance>,
}

impl PreparedData {
    pub fn new(records: &[AspectInstance], max_len: usize) -> Result<Self, RunError> {
        let train_records = split_of(records, Split::Train);
        let test_records = split_of(records, Split::Test);
        if train_records.is_empty() {
            return Err(RunError::EmptySplit { split: Split::Train });
        }
        let vocab = Vocabulary::build(&train_records);
        Ok(Self {
            train: encode_all(&train_records, &vocab, max_len)?,
            test: encode_all(&test_records, &vocab, max_len)?,
            vocab,
            max_len,
            train_records,
            test_records,
        })
    }

    pub fn load(path: &Path, max_len: usize) -> Result<Self, RunError> {
        let records = load_dataset(path, DatasetFormat::from_path(path))?;
        Self::new(&records, max_len)
    }

    /// Test instances, or `None` when the test split is empty.
    pub fn eval_set(&self) -> Option<&[TokenizedInstance]> {
        (!self.test.is_empty()).then_some(self.test.as_slice())
    }
}

/// Model configuration with the vocabulary size filled in.
pub fn model_config(base: &ModelConfig, vocab: &Vocabulary) -> ModelConfig {
    let mut cfg = *base;
    cfg.encoder.vocab_size = vocab.len();
    cfg
}

/// Fresh model for `data`, initialised from `seed`.
pub fn init_model(model: &ModelConfig, seed: u64, data: &PreparedData) -> Result<PsiModel, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(PsiModel::init(model_config(model, &data.vocab), &mut rng)?)
}

/// Initialises a model from `train.seed` and trains it on `data`.
pub fn fit(
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &PreparedData,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(PsiModel, TrainReport, OptimizerState), RunError> {
    let mut model = init_model(model, train_cfg.seed, data)?;
    let (report, optimizers) = train(
        &mut model,
        &data.train_records,
        &data.train,
        data.eval_set(),
        train_cfg,
        on_epoch,
    )?;
    Ok((model, report, optimizers))
}
