//! Pairwise semantic interaction head.
//!
//! For a pair of semantic vectors `(v1, v2)`:
//!
//! * a mutual vector `v_m` summarises the pair (learned MLP over the
//!   concatenation, or one of the elementwise ablation variants),
//! * gates `g_i = sigmoid(v_m ⊙ v_i)` pick out salient coordinates,
//! * four attentive vectors `v_i^self = v_i + v_i ⊙ g_i` and
//!   `v_i^other = v_i + v_i ⊙ g_j` go through the shared softmax classifier,
//! * the loss is cross-entropy plus a hinge that asks the self-gated score of
//!   the true class to beat the other-gated score by a margin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::nn::{Linear, Mlp, ModelError};
use crate::tensor::{ParamGroup, ParamStore, Tape, Tensor, TensorError, Var};

pub const DEFAULT_MU: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 0.05;

const CLASSIFIER: &str = "classifier";
const MUTUAL_MLP: &str = "psi.mutual";
const INDIVIDUAL_MLP: &str = "psi.individual";
/// Prefix shared by every interaction-head parameter (never the classifier).
pub const HEAD_PREFIX: &str = "psi.";

/// How the mutual vector is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutualOp {
    /// `MLP([v1, v2])`.
    InteractiveMlp,
    Sum,
    Product,
    /// `(v1 - v2)²`.
    SubtractSquare,
    /// No shared vector: each gate comes from its own `MLP(v_i)`.
    Individual,
}

impl MutualOp {
    /// Ablation order.
    pub const ALL: [MutualOp; 5] = [
        MutualOp::Individual,
        MutualOp::Sum,
        MutualOp::Product,
        MutualOp::SubtractSquare,
        MutualOp::InteractiveMlp,
    ];

    /// Whether the head owns trainable weights under this operation.
    pub fn has_params(self) -> bool {
        matches!(self, MutualOp::InteractiveMlp | MutualOp::Individual)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MutualOp::InteractiveMlp => "interactive_mlp",
            MutualOp::Sum => "sum",
            MutualOp::Product => "product",
            MutualOp::SubtractSquare => "subtract_square",
            MutualOp::Individual => "individual",
        }
    }
}

/// Hidden width of the mutual MLP for semantic dimension `dim`.
pub fn mutual_hidden_dim(dim: usize) -> usize {
    (dim / 2).max(4)
}

/// Softmax classifier `{W: [C × D], b: [C]}` used for every training
/// prediction and at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SharedClassifier {
    pub linear: Linear,
}

impl SharedClassifier {
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, dim: usize) -> Result<Self, ModelError> {
        Ok(Self {
            linear: Linear::init(store, rng, CLASSIFIER, ParamGroup::Head, dim, NUM_CLASSES)?,
        })
    }

    pub fn attach(store: &ParamStore, dim: usize) -> Result<Self, ModelError> {
        Ok(Self {
            linear: Linear::attach(store, CLASSIFIER, dim, NUM_CLASSES)?,
        })
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, v: Var) -> Result<Var, TensorError> {
        self.linear.forward(tape, store, v)
    }

    /// Score vector `softmax(W·v + b)`.
    pub fn classify(&self, tape: &mut Tape, store: &ParamStore, v: Var) -> Result<Var, TensorError> {
        let z = self.logits(tape, store, v)?;
        tape.softmax(z)
    }
}

/// The trainable part of the interaction head (empty for the elementwise
/// mutual operations).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsiHead {
    pub op: MutualOp,
    pub dim: usize,
    mlp: Option<Mlp>,
}

/// Every vector of one pair's forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairForward {
    pub v1: Var,
    pub v2: Var,
    /// `None` for [`MutualOp::Individual`].
    pub mutual: Option<Var>,
    pub g1: Var,
    pub g2: Var,
    pub v1_self: Var,
    pub v2_self: Var,
    pub v1_other: Var,
    pub v2_other: Var,
}

/// Four attentive vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentiveVectors {
    pub v1_self: Var,
    pub v2_self: Var,
    pub v1_other: Var,
    pub v2_other: Var,
}

/// Score vectors `p_i^self`, `p_i^other` of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub self_1: Vec<f64>,
    pub self_2: Vec<f64>,
    pub other_1: Vec<f64>,
    pub other_2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub j_ce: f64,
    pub j_rk: f64,
    pub total: f64,
    pub mu: f64,
    pub epsilon: f64,
}

/// Loss nodes of one pair together with their values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub total: Var,
    pub j_ce: Var,
    pub j_rk: Var,
    pub breakdown: LossBreakdown,
}

fn check_same(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    if ta.shape() != tb.shape() || !ta.is_vector() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: ta.shape().to_vec(),
            right: tb.shape().to_vec(),
        });
    }
    Ok(())
}

impl PsiHead {
    pub fn init(
        op: MutualOp,
        dim: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let hidden = mutual_hidden_dim(dim);
        let mlp = match op {
            MutualOp::InteractiveMlp => Some(Mlp::init(
                store,
                rng,
                MUTUAL_MLP,
                ParamGroup::Head,
                [2 * dim, hidden, dim],
            )?),
            MutualOp::Individual => Some(Mlp::init(
                store,
                rng,
                INDIVIDUAL_MLP,
                ParamGroup::Head,
                [dim, hidden, dim],
            )?),
            _ => None,
        };
        Ok(Self { op, dim, mlp })
    }

    pub fn attach(op: MutualOp, dim: usize, store: &ParamStore) -> Result<Self, ModelError> {
        let hidden = mutual_hidden_dim(dim);
        let mlp = match op {
            MutualOp::InteractiveMlp => Some(Mlp::attach(store, MUTUAL_MLP, [2 * dim, hidden, dim])?),
            MutualOp::Individual => Some(Mlp::attach(store, INDIVIDUAL_MLP, [dim, hidden, dim])?),
            _ => None,
        };
        Ok(Self { op, dim, mlp })
    }

    /// `v_m` for the pair, or `None` when the variant has no shared vector.
    pub fn mutual_vector(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        v1: Var,
        v2: Var,
    ) -> Result<Option<Var>, TensorError> {
        check_same(tape, "mutual_vector", v1, v2)?;
        let vm = match self.op {
            MutualOp::InteractiveMlp => {
                let joined = tape.concat(v1, v2)?;
                self.mlp_forward(tape, store, joined)?
            }
            MutualOp::Sum => tape.add(v1, v2)?,
            MutualOp::Product => tape.mul(v1, v2)?,
            MutualOp::SubtractSquare => {
                let d = tape.sub(v1, v2)?;
                tape.square(d)
            }
            MutualOp::Individual => return Ok(None),
        };
        Ok(Some(vm))
    }

    /// `g_i = sigmoid(v_m ⊙ v_i)`, or `sigmoid(f(v_i))` without a mutual vector.
    pub fn gates(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mutual: Option<Var>,
        v1: Var,
        v2: Var,
    ) -> Result<(Var, Var), TensorError> {
        check_same(tape, "gates", v1, v2)?;
        let mut gate = |v: Var| -> Result<Var, TensorError> {
            let pre = match mutual {
                Some(vm) => tape.mul(vm, v)?,
                None => self.mlp_forward(tape, store, v)?,
            };
            Ok(tape.sigmoid(pre))
        };
        let g1 = gate(v1)?;
        let g2 = gate(v2)?;
        Ok((g1, g2))
    }

    fn mlp_forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let mlp = self.mlp.as_ref().ok_or_else(|| {
            TensorError::InvalidArgument(format!("{} head has no MLP", self.op.as_str()))
        })?;
        mlp.forward(tape, store, x)
    }

    pub fn forward_pair(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        v1: Var,
        v2: Var,
    ) -> Result<PairForward, TensorError> {
        let mutual = self.mutual_vector(tape, store, v1, v2)?;
        let (g1, g2) = self.gates(tape, store, mutual, v1, v2)?;
        let av = attentive_vectors(tape, v1, v2, g1, g2)?;
        Ok(PairForward {
            v1,
            v2,
            mutual,
            g1,
            g2,
            v1_self: av.v1_self,
            v2_self: av.v2_self,
            v1_other: av.v1_other,
            v2_other: av.v2_other,
        })
    }
}

/// Residual gating: `v_i + v_i ⊙ g_i` and `v_i + v_i ⊙ g_j`.
pub fn attentive_vectors(
    tape: &mut Tape,
    v1: Var,
    v2: Var,
    g1: Var,
    g2: Var,
) -> Result<AttentiveVectors, TensorError> {
    let mut residual = |v: Var, g: Var| -> Result<Var, TensorError> {
        let gated = tape.mul(v, g)?;
        tape.add(v, gated)
    };
    Ok(AttentiveVectors {
        v1_self: residual(v1, g1)?,
        v2_self: residual(v2, g2)?,
        v1_other: residual(v1, g2)?,
        v2_other: residual(v2, g1)?,
    })
}

/// `Σ_i max(0, p_i^other(y_i) - p_i^self(y_i) + ε)`.
pub fn ranking_loss(preds: &PredictionSet, labels: (usize, usize), epsilon: f64) -> f64 {
    let hinge = |other: &[f64], own: &[f64], y: usize| (other[y] - own[y] + epsilon).max(0.0);
    hinge(&preds.other_1, &preds.self_1, labels.0) + hinge(&preds.other_2, &preds.self_2, labels.1)
}

/// Loss of one pair: mean cross-entropy over the four predictions plus
/// `mu` times the ranking hinge.
pub fn pair_loss(
    tape: &mut Tape,
    store: &ParamStore,
    pf: &PairForward,
    classifier: &SharedClassifier,
    labels: (usize, usize),
    mu: f64,
    epsilon: f64,
) -> Result<(PairLoss, PredictionSet), TensorError> {
    let predict = |tape: &mut Tape, v: Var, y: usize| -> Result<(Var, Var), TensorError> {
        let z = classifier.logits(tape, store, v)?;
        let (ce, _) = tape.softmax_cross_entropy(z, y)?;
        let p = tape.softmax(z)?;
        Ok((ce, p))
    };
    let (ce_s1, p_s1) = predict(tape, pf.v1_self, labels.0)?;
    let (ce_o1, p_o1) = predict(tape, pf.v1_other, labels.0)?;
    let (ce_s2, p_s2) = predict(tape, pf.v2_self, labels.1)?;
    let (ce_o2, p_o2) = predict(tape, pf.v2_other, labels.1)?;

    let ce_sum = tape.add_n(&[ce_s1, ce_o1, ce_s2, ce_o2])?;
    let j_ce = tape.scale(ce_sum, 0.25);

    let mut hinge = |other: Var, own: Var, y: usize| -> Result<Var, TensorError> {
        let po = tape.pick(other, y)?;
        let ps = tape.pick(own, y)?;
        let diff = tape.sub(po, ps)?;
        let shifted = tape.add_scalar(diff, epsilon);
        Ok(tape.relu(shifted))
    };
    let h1 = hinge(p_o1, p_s1, labels.0)?;
    let h2 = hinge(p_o2, p_s2, labels.1)?;
    let j_rk = tape.add(h1, h2)?;

    let weighted = tape.scale(j_rk, mu);
    let total = tape.add(j_ce, weighted)?;

    let value = |tape: &Tape, v: Var| tape.value(v).data()[0];
    let breakdown = LossBreakdown {
        j_ce: value(tape, j_ce),
        j_rk: value(tape, j_rk),
        total: value(tape, total),
        mu,
        epsilon,
    };
    let preds = PredictionSet {
        self_1: tape.value(p_s1).data().to_vec(),
        self_2: tape.value(p_s2).data().to_vec(),
        other_1: tape.value(p_o1).data().to_vec(),
        other_2: tape.value(p_o2).data().to_vec(),
    };
    Ok((
        PairLoss {
            total,
            j_ce,
            j_rk,
            breakdown,
        },
        preds,
    ))
}

/// Plain cross-entropy of a single instance through the shared classifier.
pub fn single_loss(
    tape: &mut Tape,
    store: &ParamStore,
    classifier: &SharedClassifier,
    v: Var,
    label: usize,
) -> Result<Var, TensorError> {
    let z = classifier.logits(tape, store, v)?;
    Ok(tape.softmax_cross_entropy(z, label)?.0)
}

/// Convenience: score vector for a plain slice.
pub fn classify_values(
    classifier: &SharedClassifier,
    store: &ParamStore,
    v: &[f64],
) -> Result<Vec<f64>, TensorError> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(v.to_vec()));
    let p = classifier.classify(&mut tape, store, x)?;
    Ok(tape.value(p).data().to_vec())
}
