//! Layers shared by the encoder, the interaction head and the classifier.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::tensor::{ParamGroup, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("instance has no attended tokens")]
    EmptyInput,
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("configuration: {0}")]
    Config(String),
}

/// Looks up `name` and checks its shape.
pub(crate) fn lookup(store: &ParamStore, name: &str, shape: &[usize]) -> Result<ParamId, ModelError> {
    let id = store
        .id(name)
        .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
    let found = store.get(id).value.shape();
    if found != shape {
        return Err(ModelError::ShapeMismatch {
            name: name.to_string(),
            expected: shape.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(id)
}

/// `W·x + b` with `W: [out × in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights drawn from `N(0, 1/in_dim)`, zero bias.
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self, ModelError> {
        let std = (1.0 / in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| ModelError::Config(e.to_string()))?;
        let w: Vec<f64> = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
        let weight = store.insert(
            format!("{prefix}.weight"),
            group,
            Tensor::matrix(out_dim, in_dim, w)?,
        )?;
        let bias = store.insert(format!("{prefix}.bias"), group, Tensor::zeros(vec![out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn attach(
        store: &ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            weight: lookup(store, &format!("{prefix}.weight"), &[out_dim, in_dim])?,
            bias: lookup(store, &format!("{prefix}.bias"), &[out_dim])?,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let wx = tape.matmul(w, x)?;
        tape.add(wx, b)
    }
}

/// Two affine layers with a tanh in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        group: ParamGroup,
        dims: [usize; 3],
    ) -> Result<Self, ModelError> {
        Ok(Self {
            first: Linear::init(store, rng, &format!("{prefix}.fc1"), group, dims[0], dims[1])?,
            second: Linear::init(store, rng, &format!("{prefix}.fc2"), group, dims[1], dims[2])?,
        })
    }

    pub fn attach(store: &ParamStore, prefix: &str, dims: [usize; 3]) -> Result<Self, ModelError> {
        Ok(Self {
            first: Linear::attach(store, &format!("{prefix}.fc1"), dims[0], dims[1])?,
            second: Linear::attach(store, &format!("{prefix}.fc2"), dims[1], dims[2])?,
        })
    }

    /// Hidden layer only is squashed; the output is affine.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let h = self.first.forward(tape, store, x)?;
        let h = tape.tanh(h);
        self.second.forward(tape, store, h)
    }
}

/// Uniform `[-scale, scale]` matrix.
pub(crate) fn uniform_matrix(
    rng: &mut impl Rng,
    rows: usize,
    cols: usize,
    scale: f64,
) -> Result<Tensor, ModelError> {
    let dist = Uniform::new_inclusive(-scale, scale).map_err(|e| ModelError::Config(e.to_string()))?;
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Ok(Tensor::matrix(rows, cols, data)?)
}
