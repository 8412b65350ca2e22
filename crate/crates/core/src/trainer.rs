//! Training loop: balanced batch sampling, pair building, the PSI loss and two
//! Adam optimisers, with early stopping on the training loss.
//!
//! The baseline method trains the same encoder and classifier with plain
//! cross-entropy on single instances, drawn as shuffled minibatches of the
//! same size from the natural class distribution.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AspectInstance, TokenizedInstance};
use crate::evaluator::{evaluate, EvalError, Metrics};
use crate::model::PsiModel;
use crate::nn::ModelError;
use crate::optim::{AdamConfig, OptimizerState};
use crate::pairing::{build_pairs, sample_batch, Pair, PairingError, PairingKey, SamplingConfig};
use crate::psi::{pair_loss, single_loss, DEFAULT_EPSILON, DEFAULT_MU};
use crate::tensor::{Tape, TensorError, Var};

/// Stream of the training RNG; stream 0 is used for initialisation.
const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}, step {step}; batch sentences {sentence_ids:?}")]
    Divergence {
        what: &'static str,
        epoch: usize,
        step: usize,
        sentence_ids: Vec<String>,
    },
    #[error("model has no interaction head")]
    MissingHead,
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("{0} records but {1} encoded instances")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Psi,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub patience: usize,
    pub lr_backbone: f64,
    pub lr_psi: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub sampling: SamplingConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Psi,
            epochs: 20,
            patience: 5,
            lr_backbone: 1e-4,
            lr_psi: 2e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            mu: DEFAULT_MU,
            epsilon: DEFAULT_EPSILON,
            seed: 42,
            sampling: SamplingConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if !(self.lr_backbone > 0.0 && self.lr_psi > 0.0) || !self.lr_backbone.is_finite() || !self.lr_psi.is_finite() {
            return fail("learning rates must be positive");
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) || !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return fail("mu and epsilon must be finite and non-negative");
        }
        for cfg in [self.adam(self.lr_backbone), self.adam(self.lr_psi)] {
            cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        }
        self.sampling.validate()?;
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn optimizers(&self) -> OptimizerState {
        OptimizerState::new(self.adam(self.lr_backbone), self.adam(self.lr_psi))
    }

    pub fn batch_size(&self) -> usize {
        self.sampling.batch_size()
    }

    pub fn steps_per_epoch(&self, train_size: usize) -> usize {
        train_size.div_ceil(self.batch_size())
    }
}

/// Mean loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossSummary {
    pub total: f64,
    pub j_ce: f64,
    pub j_rk: f64,
}

impl LossSummary {
    fn mean(items: &[LossSummary]) -> Self {
        let n = items.len().max(1) as f64;
        Self {
            total: items.iter().map(|l| l.total).sum::<f64>() / n,
            j_ce: items.iter().map(|l| l.j_ce).sum::<f64>() / n,
            j_rk: items.iter().map(|l| l.j_rk).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub loss: LossSummary,
    pub skipped_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub stopping_epoch: usize,
    pub early_stopped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn final_metrics(&self) -> Option<&Metrics> {
        self.epochs.last().and_then(|e| e.metrics.as_ref())
    }
}

/// Pairs of one batch, with batch positions resolved to training indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTrace {
    pub epoch: usize,
    pub step: usize,
    pub batch: Vec<usize>,
    pub pairs: Vec<Pair>,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub loss: Option<LossSummary>,
    pub skipped: usize,
    pub trace: Option<BatchTrace>,
}

/// First epoch (1-based) at which training should stop, given the losses so
/// far: the last `patience` losses are all at least the one before them.
pub fn early_stop_epoch(losses: &[f64], patience: usize) -> Option<usize> {
    (patience + 1..=losses.len()).find(|&e| {
        let reference = losses[e - patience - 1];
        losses[e - patience..e].iter().all(|&l| l >= reference)
    })
}

/// Stateful loop over one model. Most callers want [`train`].
pub struct Trainer<'a> {
    pub model: &'a mut PsiModel,
    pub config: TrainConfig,
    pub optimizers: OptimizerState,
    keys: Vec<PairingKey>,
    records: &'a [AspectInstance],
    encoded: &'a [TokenizedInstance],
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    tape: Tape,
    epoch: usize,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a mut PsiModel,
        records: &'a [AspectInstance],
        encoded: &'a [TokenizedInstance],
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if records.len() != encoded.len() {
            return Err(TrainError::LengthMismatch(records.len(), encoded.len()));
        }
        if records.is_empty() {
            return Err(TrainError::EmptyTrainSet);
        }
        if config.method == Method::Psi && model.head.is_none() {
            return Err(TrainError::MissingHead);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAIN_STREAM);
        Ok(Self {
            model,
            optimizers: config.optimizers(),
            config,
            keys: records.iter().map(PairingKey::from).collect(),
            records,
            encoded,
            rng,
            order: Vec::new(),
            cursor: 0,
            tape: Tape::new(),
            epoch: 1,
            step: 0,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.config.steps_per_epoch(self.records.len())
    }

    fn diverged(&self, what: &'static str, batch: &[usize]) -> TrainError {
        TrainError::Divergence {
            what,
            epoch: self.epoch,
            step: self.step,
            sentence_ids: batch.iter().map(|&i| self.records[i].sentence_id.clone()).collect(),
        }
    }

    fn next_baseline_batch(&mut self) -> Vec<usize> {
        let size = self.config.batch_size();
        if self.cursor >= self.order.len() {
            self.order = (0..self.records.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }

    /// One optimisation step. Returns `loss: None` when every pair of the
    /// batch was skipped.
    pub fn step(&mut self, trace: bool) -> Result<StepOutcome, TrainError> {
        self.step += 1;
        self.tape.clear();
        let mut skipped = 0;
        let (batch, loss_var, summary, trace) = match self.config.method {
            Method::Psi => {
                let batch = sample_batch(&self.keys, &self.config.sampling, &mut self.rng)?;
                let vars = self.encode_batch(&batch)?;
                let vectors: Vec<Vec<f64>> =
                    vars.iter().map(|&v| self.tape.value(v).data().to_vec()).collect();
                let keys: Vec<PairingKey> = batch.iter().map(|&i| self.keys[i].clone()).collect();
                let set = build_pairs(&keys, &vectors, &self.config.sampling, &mut self.rng)?;
                let trace = trace.then(|| BatchTrace {
                    epoch: self.epoch,
                    step: self.step,
                    batch: batch.clone(),
                    pairs: set.pairs.clone(),
                    skipped: set.skipped,
                });
                skipped = set.skipped;
                if set.pairs.is_empty() {
                    return Ok(StepOutcome {
                        loss: None,
                        skipped,
                        trace,
                    });
                }
                let head = self.model.head.ok_or(TrainError::MissingHead)?;
                let mut totals = Vec::with_capacity(set.pairs.len());
                let mut parts = Vec::with_capacity(set.pairs.len());
                for pair in &set.pairs {
                    let pf = head.forward_pair(&mut self.tape, &self.model.store, vars[pair.a], vars[pair.b])?;
                    let labels = (self.encoded[batch[pair.a]].label, self.encoded[batch[pair.b]].label);
                    let (pl, _) = pair_loss(
                        &mut self.tape,
                        &self.model.store,
                        &pf,
                        &self.model.classifier,
                        labels,
                        self.config.mu,
                        self.config.epsilon,
                    )?;
                    totals.push(pl.total);
                    parts.push(LossSummary {
                        total: pl.breakdown.total,
                        j_ce: pl.breakdown.j_ce,
                        j_rk: pl.breakdown.j_rk,
                    });
                }
                let sum = self.tape.add_n(&totals)?;
                let loss = self.tape.scale(sum, 1.0 / totals.len() as f64);
                (batch, loss, LossSummary::mean(&parts), trace)
            }
            Method::Baseline => {
                let batch = self.next_baseline_batch();
                let vars = self.encode_batch(&batch)?;
                let mut losses = Vec::with_capacity(batch.len());
                let mut values = Vec::with_capacity(batch.len());
                for (&i, &v) in batch.iter().zip(&vars) {
                    let l = single_loss(
                        &mut self.tape,
                        &self.model.store,
                        &self.model.classifier,
                        v,
                        self.encoded[i].label,
                    )?;
                    values.push(self.tape.value(l).data()[0]);
                    losses.push(l);
                }
                let sum = self.tape.add_n(&losses)?;
                let loss = self.tape.scale(sum, 1.0 / losses.len() as f64);
                let j_ce = values.iter().sum::<f64>() / values.len() as f64;
                let summary = LossSummary {
                    total: j_ce,
                    j_ce,
                    j_rk: 0.0,
                };
                (batch, loss, summary, None)
            }
        };
        if !summary.total.is_finite() || !self.tape.value(loss_var).all_finite() {
            return Err(self.diverged("loss", &batch));
        }
        self.model.store.zero_grads();
        self.tape.backward(loss_var, &mut self.model.store)?;
        if self.model.store.iter().any(|p| !p.grad.all_finite()) {
            return Err(self.diverged("gradient", &batch));
        }
        self.optimizers.step(&mut self.model.store)?;
        if !self.model.store.all_finite() {
            return Err(self.diverged("parameter", &batch));
        }
        Ok(StepOutcome {
            loss: Some(summary),
            skipped,
            trace,
        })
    }

    fn encode_batch(&mut self, batch: &[usize]) -> Result<Vec<Var>, TrainError> {
        batch
            .iter()
            .map(|&i| {
                self.model
                    .encoder
                    .forward(&mut self.tape, &self.model.store, &self.encoded[i])
                    .map_err(TrainError::from)
            })
            .collect()
    }

    /// Runs one epoch and evaluates on `eval` when given.
    pub fn epoch(&mut self, eval: Option<&[TokenizedInstance]>) -> Result<EpochRecord, TrainError> {
        let steps = self.steps_per_epoch();
        let mut losses = Vec::with_capacity(steps);
        let mut skipped = 0;
        for _ in 0..steps {
            let out = self.step(false)?;
            skipped += out.skipped;
            losses.extend(out.loss);
        }
        let metrics = eval.map(|e| evaluate(self.model, e)).transpose()?;
        let record = EpochRecord {
            epoch: self.epoch,
            steps: losses.len(),
            loss: LossSummary::mean(&losses),
            skipped_pairs: skipped,
            metrics,
        };
        self.epoch += 1;
        self.step = 0;
        Ok(record)
    }

    /// Pair traces of the first `batches` steps. Parameters are updated as in
    /// ordinary training.
    pub fn trace(&mut self, batches: usize) -> Result<Vec<BatchTrace>, TrainError> {
        let mut traces = Vec::with_capacity(batches);
        for _ in 0..batches {
            traces.extend(self.step(true)?.trace);
        }
        Ok(traces)
    }
}

/// Trains `model` in place. `on_epoch` sees each record as it is produced.
pub fn train(
    model: &mut PsiModel,
    records: &[AspectInstance],
    encoded: &[TokenizedInstance],
    eval: Option<&[TokenizedInstance]>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(TrainReport, OptimizerState), TrainError> {
    let mut trainer = Trainer::new(model, records, encoded, *config)?;
    let mut epochs = Vec::new();
    let mut losses = Vec::new();
    let mut early_stopped = false;
    for _ in 0..config.epochs {
        let record = trainer.epoch(eval)?;
        on_epoch(&record);
        losses.push(record.loss.total);
        epochs.push(record);
        if early_stop_epoch(&losses, config.patience).is_some() {
            early_stopped = true;
            break;
        }
    }
    let report = TrainReport {
        method: config.method,
        seed: config.seed,
        stopping_epoch: epochs.len(),
        epochs,
        early_stopped,
        checkpoint: None,
    };
    Ok((report, trainer.optimizers))
}
