//! Learned pair scorers: aggregation, classifiers, and the metric head.

mod adam;
mod checkpoint;
mod classifier;
mod contrastive;
mod metric;
mod mlp;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, Adam, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, Model};
pub use classifier::{
    bce_loss_and_grad, logistic_objective, sigmoid, train_logistic, train_mlp_classifier, LogisticConfig,
    LogisticModel, MlpArch,
};
pub use contrastive::{mine_hard_triplets, ntxent_loss, PairLabels, PairTuples};
pub use metric::{train_metric_head, MetricConfig, MetricHead, MetricTrainLog, PairDataset};
pub use mlp::{flatten, Activation, Dense, Mlp, Tape, LEAKY_SLOPE};

use crate::error::{Error, Result};
use crate::scoring::PairScorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Cat,
    Mean,
    Diff,
}

impl Aggregator {
    pub fn output_dim(self, d: usize) -> usize {
        match self {
            Aggregator::Cat => 2 * d,
            Aggregator::Mean | Aggregator::Diff => d,
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Cat => "cat",
            Aggregator::Mean => "mean",
            Aggregator::Diff => "diff",
        })
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cat" => Ok(Aggregator::Cat),
            "mean" => Ok(Aggregator::Mean),
            "diff" => Ok(Aggregator::Diff),
            _ => Err(Error::InvalidArgument(format!("unknown aggregator {s:?}"))),
        }
    }
}

/// Combines two shot vectors into one classifier input.
pub fn aggregate(kind: Aggregator, u: &[f32], v: &[f32]) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(Error::dims(u.len(), v.len()));
    }
    let (u, v) = (u.iter().map(|&x| f64::from(x)), v.iter().map(|&x| f64::from(x)));
    Ok(match kind {
        Aggregator::Cat => u.chain(v).collect(),
        Aggregator::Mean => u.zip(v).map(|(a, b)| (a + b) / 2.0).collect(),
        Aggregator::Diff => u.zip(v).map(|(a, b)| (a - b).abs()).collect(),
    })
}

/// Aggregated features for every pair of a dataset, one row per pair.
pub fn pair_features(data: &PairDataset, kind: Aggregator) -> Result<Array2<f64>> {
    let d = data.features.ncols();
    let mut out = Array2::zeros((data.pairs.len(), kind.output_dim(d)));
    for (r, &(i, j, _)) in data.pairs.iter().enumerate() {
        let u: Vec<f32> = data.features.row(i).iter().map(|&x| x as f32).collect();
        let v: Vec<f32> = data.features.row(j).iter().map(|&x| x as f32).collect();
        out.row_mut(r).iter_mut().zip(aggregate(kind, &u, &v)?).for_each(|(o, x)| *o = x);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Softmax temperature; only the metric head uses it.
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Adam at lr 0.001 for 200 epochs with mini-batches of 200.
    pub fn classifier(seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            temperature: 1.0,
            batch_size: 200,
            epochs: 200,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite()
            && self.temperature > 0.0
            && self.temperature.is_finite()
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Logistic,
    Mlp(MlpArch),
}

impl FromStr for ClassifierKind {
    type Err = Error;

    /// `lr`, `mlp-s`, `mlp-m` or `mlp-l`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "logistic" => Ok(ClassifierKind::Logistic),
            other => match other.strip_prefix("mlp-") {
                Some(size) => Ok(ClassifierKind::Mlp(MlpArch::parse(size)?)),
                None => Err(Error::InvalidArgument(format!("unknown classifier {s:?}"))),
            },
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierKind::Logistic => f.write_str("lr"),
            ClassifierKind::Mlp(a) => write!(f, "mlp-{}", format!("{a:?}").to_lowercase()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierModel {
    Logistic(LogisticModel),
    Mlp(Mlp),
}

impl ClassifierModel {
    pub fn input_dim(&self) -> usize {
        match self {
            ClassifierModel::Logistic(m) => m.weights.len(),
            ClassifierModel::Mlp(m) => m.input_dim(),
        }
    }

    /// Probability of the positive class.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            ClassifierModel::Logistic(m) => m.predict_proba(x),
            ClassifierModel::Mlp(m) => {
                let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| Error::Internal(e.to_string()))?;
                Ok(sigmoid(m.forward(row.view())?[[0, 0]]))
            }
        }
    }
}

/// A classifier together with the aggregation it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct PairClassifier {
    pub model: ClassifierModel,
    pub aggregator: Aggregator,
}

pub fn classifier_score(model: &ClassifierModel, agg: Aggregator, r_i: &[f32], r_j: &[f32]) -> Result<f64> {
    let x = aggregate(agg, r_i, r_j)?;
    if x.len() != model.input_dim() {
        return Err(Error::dims(model.input_dim(), x.len()));
    }
    model.predict(&x)
}

impl PairScorer for PairClassifier {
    fn score(&self, a: &[f32], b: &[f32]) -> Result<f64> {
        classifier_score(&self.model, self.aggregator, a, b)
    }
}

pub fn train_classifier(
    data: &PairDataset,
    kind: ClassifierKind,
    aggregator: Aggregator,
    config: &TrainConfig,
) -> Result<PairClassifier> {
    let x = pair_features(data, aggregator)?;
    let y = data.labels();
    let model = match kind {
        ClassifierKind::Logistic => ClassifierModel::Logistic(train_logistic(x.view(), &y, &LogisticConfig::default())?),
        ClassifierKind::Mlp(arch) => ClassifierModel::Mlp(train_mlp_classifier(x.view(), &y, arch, config)?),
    };
    Ok(PairClassifier { model, aggregator })
}
