//! Desk-scale semantic extractor: masked mean of token embeddings followed by
//! a two-layer tanh MLP.
//!
//! Mean pooling is order-invariant, so unlike a transformer backbone this
//! encoder does not distinguish permutations of the same tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TokenizedInstance;
use crate::nn::{lookup, uniform_matrix, Linear, ModelError};
use crate::tensor::{ParamGroup, ParamId, ParamStore, Tape, Var};

pub const EMBEDDING: &str = "encoder.embedding";
const FC1: &str = "encoder.fc1";
const FC2: &str = "encoder.fc2";
const EMBEDDING_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Dimension `D` of the semantic vector.
    pub output_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 3,
            embed_dim: 32,
            hidden_dim: 64,
            output_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("output_dim", self.output_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeskEncoder {
    pub config: EncoderConfig,
    pub embedding: ParamId,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl DeskEncoder {
    pub fn init(
        config: EncoderConfig,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let table = uniform_matrix(rng, config.vocab_size, config.embed_dim, EMBEDDING_INIT_SCALE)?;
        let embedding = store.insert(EMBEDDING, ParamGroup::Backbone, table)?;
        let fc1 = Linear::init(store, rng, FC1, ParamGroup::Backbone, config.embed_dim, config.hidden_dim)?;
        let fc2 = Linear::init(store, rng, FC2, ParamGroup::Backbone, config.hidden_dim, config.output_dim)?;
        Ok(Self {
            config,
            embedding,
            fc1,
            fc2,
        })
    }

    /// Binds to existing parameters, rejecting any shape that disagrees with
    /// `config`.
    pub fn attach(config: EncoderConfig, store: &ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            config,
            embedding: lookup(store, EMBEDDING, &[config.vocab_size, config.embed_dim])?,
            fc1: Linear::attach(store, FC1, config.embed_dim, config.hidden_dim)?,
            fc2: Linear::attach(store, FC2, config.hidden_dim, config.output_dim)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Records the forward pass for one instance on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        instance: &TokenizedInstance,
    ) -> Result<Var, ModelError> {
        let ids = instance.active_ids();
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        let table = tape.param(store, self.embedding);
        let pooled = tape.embedding_mean(table, ids)?;
        let h = self.fc1.forward(tape, store, pooled)?;
        let h = tape.tanh(h);
        let out = self.fc2.forward(tape, store, h)?;
        Ok(tape.tanh(out))
    }

    /// Semantic vector for one instance, computed on a throwaway tape.
    pub fn extract(&self, store: &ParamStore, instance: &TokenizedInstance) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, store, instance)?;
        Ok(tape.value(v).data().to_vec())
    }
}
