//! Model checkpoints.
//!
//! Layout, little endian: `b"MCMODEL\0"`, `u32` version, `u32` metadata
//! length, JSON metadata, then the parameters as `f32`. Parameters are
//! stored layer by layer, weights (row-major, `in × out`) before biases;
//! a logistic model is a single `d × 1` layer.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Dense, Mlp};
use super::{Aggregator, ClassifierModel, LogisticModel, MetricHead, PairClassifier, TrainConfig};
use crate::datastore::Task;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MCMODEL\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Classifier(PairClassifier),
    Metric(MetricHead),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub task: Option<Task>,
    pub encoder_name: Option<String>,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Logistic,
    MlpClassifier,
    MetricHead,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: Kind,
    layer_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aggregator: Option<Aggregator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoder_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<TrainConfig>,
    param_count: usize,
}

fn logistic_layers(m: &LogisticModel) -> Vec<Dense> {
    vec![Dense {
        w: Array2::from_shape_vec((m.weights.len(), 1), m.weights.to_vec()).expect("column"),
        b: Array1::from(vec![m.bias]),
    }]
}

impl Checkpoint {
    fn parts(&self) -> (Kind, Vec<usize>, Option<Activation>, Option<Aggregator>, Vec<f64>) {
        match &self.model {
            Model::Classifier(PairClassifier {
                model: ClassifierModel::Logistic(m),
                aggregator,
            }) => (
                Kind::Logistic,
                vec![m.weights.len(), 1],
                None,
                Some(*aggregator),
                super::flatten(&logistic_layers(m)),
            ),
            Model::Classifier(PairClassifier {
                model: ClassifierModel::Mlp(m),
                aggregator,
            }) => (
                Kind::MlpClassifier,
                m.layer_sizes(),
                Some(m.activation),
                Some(*aggregator),
                m.flat_params(),
            ),
            Model::Metric(h) => (
                Kind::MetricHead,
                h.mlp.layer_sizes(),
                Some(h.mlp.activation),
                None,
                h.mlp.flat_params(),
            ),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (kind, layer_sizes, activation, aggregator, params) = self.parts();
        let meta = Meta {
            kind,
            layer_sizes,
            activation,
            aggregator,
            task: self.task,
            encoder_name: self.encoder_name.clone(),
            train: self.train,
            param_count: params.len(),
        };
        let meta = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut buf = Vec::with_capacity(16 + meta.len() + 4 * params.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(&meta);
        for p in params {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a model checkpoint"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(8);
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let meta_len = word(12) as usize;
        let meta_end = 16usize.checked_add(meta_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated metadata"))?;
        let meta: Meta = serde_json::from_slice(&bytes[16..meta_end]).map_err(|e| bad(&format!("metadata: {e}")))?;
        let blob = &bytes[meta_end..];
        if blob.len() != 4 * meta.param_count {
            return Err(bad("parameter blob size mismatch"));
        }
        let params: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("non-finite model parameter".into()));
        }
        let build_mlp = |activation: Activation| -> Result<Mlp> {
            let mut mlp = Mlp::new(&meta.layer_sizes, activation, 0)?;
            mlp.set_flat_params(&params)?;
            Ok(mlp)
        };
        let model = match meta.kind {
            Kind::Logistic => {
                if meta.layer_sizes.len() != 2 || meta.layer_sizes[1] != 1 || params.len() != meta.layer_sizes[0] + 1 {
                    return Err(bad("bad logistic layout"));
                }
                let d = meta.layer_sizes[0];
                Model::Classifier(PairClassifier {
                    model: ClassifierModel::Logistic(LogisticModel {
                        weights: Array1::from(params[..d].to_vec()),
                        bias: params[d],
                    }),
                    aggregator: meta.aggregator.ok_or_else(|| bad("missing aggregator"))?,
                })
            }
            Kind::MlpClassifier => Model::Classifier(PairClassifier {
                model: ClassifierModel::Mlp(build_mlp(meta.activation.ok_or_else(|| bad("missing activation"))?)?),
                aggregator: meta.aggregator.ok_or_else(|| bad("missing aggregator"))?,
            }),
            Kind::MetricHead => Model::Metric(MetricHead {
                mlp: build_mlp(meta.activation.ok_or_else(|| bad("missing activation"))?)?,
            }),
        };
        Ok(Checkpoint {
            model,
            task: meta.task,
            encoder_name: meta.encoder_name,
            train: meta.train,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(ckpt: &Checkpoint) -> Checkpoint {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        Checkpoint::load(&path).unwrap()
    }

    fn quantize(mut ckpt: Checkpoint) -> Checkpoint {
        let q = |v: &mut f64| *v = *v as f32 as f64;
        match &mut ckpt.model {
            Model::Metric(h) => h.mlp.layers.iter_mut().for_each(|l| {
                l.w.iter_mut().for_each(q);
                l.b.iter_mut().for_each(q);
            }),
            Model::Classifier(c) => match &mut c.model {
                ClassifierModel::Mlp(m) => m.layers.iter_mut().for_each(|l| {
                    l.w.iter_mut().for_each(q);
                    l.b.iter_mut().for_each(q);
                }),
                ClassifierModel::Logistic(m) => {
                    m.weights.iter_mut().for_each(q);
                    q(&mut m.bias);
                }
            },
        }
        ckpt
    }

    #[test]
    fn all_kinds_roundtrip() {
        let cases = vec![
            Checkpoint {
                model: Model::Metric(MetricHead::new(6, 4, 3, 1).unwrap()),
                task: Some(Task::Frame),
                encoder_name: Some("clip".into()),
                train: Some(TrainConfig::classifier(2)),
            },
            Checkpoint {
                model: Model::Classifier(PairClassifier {
                    model: ClassifierModel::Mlp(Mlp::new(&[4, 3, 3, 1], Activation::Relu, 5).unwrap()),
                    aggregator: Aggregator::Cat,
                }),
                task: Some(Task::Motion),
                encoder_name: None,
                train: None,
            },
            Checkpoint {
                model: Model::Classifier(PairClassifier {
                    model: ClassifierModel::Logistic(LogisticModel {
                        weights: Array1::from(vec![0.1, -0.2, 0.3]),
                        bias: 0.7,
                    }),
                    aggregator: Aggregator::Diff,
                }),
                task: None,
                encoder_name: None,
                train: None,
            },
        ];
        for ckpt in cases {
            let back = roundtrip(&ckpt);
            assert_eq!(back, quantize(ckpt.clone()));
            assert_eq!(back.to_bytes(), ckpt.to_bytes());
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let ckpt = Checkpoint {
            model: Model::Metric(MetricHead::new(2, 2, 2, 0).unwrap()),
            task: None,
            encoder_name: None,
            train: None,
        };
        let bytes = ckpt.to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::from_bytes(b"garbage bytes here"), Err(Error::Format(_))));
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&wrong_version), Err(Error::Format(_))));
    }
}
