//! Variant enumeration and comparison tables for the ablation studies.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Polarity;
use crate::model::ModelConfig;
use crate::pairing::{PairMode, Similarity, Strategy};
use crate::pipeline::{fit, PreparedData, RunError};
use crate::psi::MutualOp;
use crate::trainer::{LossSummary, Method, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    MutualOp,
    NpNs,
    Similarity,
    RankingReg,
    Strategy,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 5] = [
        AblationAxis::MutualOp,
        AblationAxis::NpNs,
        AblationAxis::Similarity,
        AblationAxis::RankingReg,
        AblationAxis::Strategy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::MutualOp => "mutual_op",
            AblationAxis::NpNs => "np_ns",
            AblationAxis::Similarity => "similarity",
            AblationAxis::RankingReg => "ranking_reg",
            AblationAxis::Strategy => "strategy",
        }
    }
}

impl FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown ablation axis {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn mutual_op_label(op: MutualOp) -> &'static str {
    match op {
        MutualOp::Individual => "Individual",
        MutualOp::Sum => "Sum",
        MutualOp::Product => "Product",
        MutualOp::SubtractSquare => "Subtract Square",
        MutualOp::InteractiveMlp => "Interactive MLP",
    }
}

pub const NP_NS_GRID: [(usize, usize); 6] = [(2, 3), (2, 4), (2, 5), (3, 3), (3, 4), (3, 5)];

/// Intra/inter mode pairs of the sentence-distance rows, in table order.
pub const DISTANCE_MODES: [(PairMode, PairMode); 8] = [
    (PairMode::Off, PairMode::Dissimilar),
    (PairMode::Off, PairMode::Similar),
    (PairMode::Dissimilar, PairMode::Off),
    (PairMode::Similar, PairMode::Off),
    (PairMode::Dissimilar, PairMode::Dissimilar),
    (PairMode::Similar, PairMode::Dissimilar),
    (PairMode::Dissimilar, PairMode::Similar),
    (PairMode::Similar, PairMode::Similar),
];

/// The variants of one axis. Everything not on the axis comes from the base
/// configuration.
pub fn variants(axis: AblationAxis, model: &ModelConfig, train: &TrainConfig) -> Vec<Variant> {
    let v = |label: String, model: ModelConfig, train: TrainConfig| Variant { label, model, train };
    match axis {
        AblationAxis::MutualOp => MutualOp::ALL
            .into_iter()
            .map(|op| v(mutual_op_label(op).into(), ModelConfig { mutual_op: op, ..*model }, *train))
            .collect(),
        AblationAxis::NpNs => NP_NS_GRID
            .into_iter()
            .map(|(np, ns)| {
                let mut t = *train;
                t.sampling.n_polarities = np;
                t.sampling.n_sentences = ns;
                v(format!("N_p={np} N_s={ns}"), *model, t)
            })
            .collect(),
        AblationAxis::Similarity => {
            let mut random = *train;
            random.sampling.similarity = Similarity::Random;
            let mut out = vec![v("Random".into(), *model, random)];
            for (intra, inter) in DISTANCE_MODES {
                let mut t = *train;
                t.sampling.similarity = Similarity::SentenceDistance;
                t.sampling.intra_mode = intra;
                t.sampling.inter_mode = inter;
                out.push(v(
                    format!("Sentence-Distance intra={} inter={}", intra.short(), inter.short()),
                    *model,
                    t,
                ));
            }
            out
        }
        AblationAxis::RankingReg => vec![
            v("Baseline".into(), *model, TrainConfig { method: Method::Baseline, ..*train }),
            v(
                "PSI without J_rk".into(),
                *model,
                TrainConfig {
                    method: Method::Psi,
                    mu: 0.0,
                    ..*train
                },
            ),
            v(
                "PSI with J_rk".into(),
                *model,
                TrainConfig {
                    method: Method::Psi,
                    mu: 1.0,
                    ..*train
                },
            ),
        ],
        AblationAxis::Strategy => Strategy::ALL
            .into_iter()
            .map(|s| {
                let mut t = *train;
                t.sampling.strategy = s;
                t.sampling.strict = false;
                v(s.as_str().into(), *model, t)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_accuracy: BTreeMap<Polarity, f64>,
    pub stopping_epoch: usize,
    pub epoch_losses: Vec<LossSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("variant\taccuracy\tmacro_f1\tpositive\tneutral\tnegative\tstopping_epoch\n");
        for r in &self.rows {
            let _ = write!(s, "{}\t{:.4}\t{:.4}", r.label, r.accuracy, r.macro_f1);
            for p in Polarity::ALL {
                let _ = write!(s, "\t{:.4}", r.per_class_accuracy[&p]);
            }
            let _ = writeln!(s, "\t{}", r.stopping_epoch);
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "| {} | Acc. | F1 | Pos. | Neu. | Neg. | Epochs |\n|---|---|---|---|---|---|---|\n",
            self.axis.as_str()
        );
        for r in &self.rows {
            let _ = write!(s, "| {} | {:.4} | {:.4} |", r.label, r.accuracy, r.macro_f1);
            for p in Polarity::ALL {
                let _ = write!(s, " {:.4} |", r.per_class_accuracy[&p]);
            }
            let _ = writeln!(s, " {} |", r.stopping_epoch);
        }
        s
    }
}

/// Trains and evaluates every variant of `axis` on the same data and seed.
/// Evaluation uses the test split, which must be non-empty.
pub fn run_ablation(
    axis: AblationAxis,
    model: &ModelConfig,
    train: &TrainConfig,
    data: &PreparedData,
    mut on_variant: impl FnMut(&AblationRow),
) -> Result<AblationTable, RunError> {
    if data.test.is_empty() {
        return Err(RunError::EmptySplit {
            split: crate::data::Split::Test,
        });
    }
    let mut rows = Vec::new();
    for variant in variants(axis, model, train) {
        let (_, report, _) = fit(&variant.model, &variant.train, data, |_| {})?;
        let metrics = report.final_metrics().expect("test split evaluated each epoch").clone();
        let row = AblationRow {
            label: variant.label,
            accuracy: metrics.accuracy,
            macro_f1: metrics.macro_f1,
            per_class_accuracy: metrics.per_class_accuracy,
            stopping_epoch: report.stopping_epoch,
            epoch_losses: report.epochs.iter().map(|e| e.loss).collect(),
        };
        on_variant(&row);
        rows.push(row);
    }
    Ok(AblationTable {
        axis,
        seed: train.seed,
        rows,
    })
}
