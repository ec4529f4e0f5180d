//! Pairwise similarity functions over shot representations.
//!
//! | name               | representation  | heuristic |
//! |--------------------|-----------------|-----------|
//! | `cosine_features`  | feature vector  |           |
//! | `face_count_equal` | face count      | h1        |
//! | `mask_iou`         | union mask      | h2        |
//! | `instance_iou`     | instance masks  | h3        |
//! | `flow_cosine`      | flow summary    | h4, h5    |
//! | `learned`          | feature vector  |           |

mod assignment;
mod masks;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use assignment::{hungarian, lexicographic_assignment};
pub use masks::{assign_instances, binary_iou, instance_iou, mask_iou, Assignment};

use crate::datastore::{FaceCount, FlowSummary, MaskSet, MoviePack};
use crate::dedup::cosine_unchecked;
use crate::error::{Error, Result};

/// A trained model that scores a pair of feature vectors.
pub trait PairScorer: Send + Sync {
    fn score(&self, a: &[f32], b: &[f32]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepresentationKind {
    Features,
    FaceCount,
    Masks,
    Flow,
}

/// A borrowed shot representation.
#[derive(Debug, Clone, Copy)]
pub enum Representation<'a> {
    Features(&'a [f32]),
    FaceCount(&'a FaceCount),
    Masks(&'a MaskSet),
    Flow(&'a FlowSummary),
}

impl Representation<'_> {
    pub fn kind(&self) -> RepresentationKind {
        match self {
            Representation::Features(_) => RepresentationKind::Features,
            Representation::FaceCount(_) => RepresentationKind::FaceCount,
            Representation::Masks(_) => RepresentationKind::Masks,
            Representation::Flow(_) => RepresentationKind::Flow,
        }
    }
}

#[derive(Clone)]
pub enum SimilarityFunction {
    CosineFeatures,
    FaceCountEqual,
    MaskIou,
    InstanceIou,
    FlowCosine,
    Learned(Arc<dyn PairScorer>),
}

impl fmt::Debug for SimilarityFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl SimilarityFunction {
    pub fn name(&self) -> &'static str {
        match self {
            SimilarityFunction::CosineFeatures => "cosine_features",
            SimilarityFunction::FaceCountEqual => "face_count_equal",
            SimilarityFunction::MaskIou => "mask_iou",
            SimilarityFunction::InstanceIou => "instance_iou",
            SimilarityFunction::FlowCosine => "flow_cosine",
            SimilarityFunction::Learned(_) => "learned",
        }
    }

    pub fn required_representation(&self) -> RepresentationKind {
        match self {
            SimilarityFunction::CosineFeatures | SimilarityFunction::Learned(_) => {
                RepresentationKind::Features
            }
            SimilarityFunction::FaceCountEqual => RepresentationKind::FaceCount,
            SimilarityFunction::MaskIou | SimilarityFunction::InstanceIou => RepresentationKind::Masks,
            SimilarityFunction::FlowCosine => RepresentationKind::Flow,
        }
    }

    /// Fetches the representation this function needs for one shot.
    /// `encoder` selects the feature pack for vector-based functions.
    pub fn representation<'a>(
        &self,
        pack: &'a MoviePack,
        encoder: Option<&str>,
        shot: u32,
    ) -> Result<Representation<'a>> {
        let missing = |what: &str| {
            Error::Validation(format!(
                "movie {} shot {shot}: no {what} representation",
                pack.movie_id
            ))
        };
        match self.required_representation() {
            RepresentationKind::Features => {
                let encoder = encoder.ok_or_else(|| {
                    Error::InvalidArgument(format!("{} needs an encoder name", self.name()))
                })?;
                pack.feature(encoder)?
                    .get(shot)
                    .map(Representation::Features)
                    .ok_or_else(|| missing(encoder))
            }
            RepresentationKind::FaceCount => pack
                .faces
                .as_ref()
                .and_then(|f| f.get(&shot))
                .map(Representation::FaceCount)
                .ok_or_else(|| missing("face count")),
            RepresentationKind::Masks => pack
                .masks
                .as_ref()
                .and_then(|m| m.get(&shot))
                .map(Representation::Masks)
                .ok_or_else(|| missing("mask")),
            RepresentationKind::Flow => pack
                .flows
                .as_ref()
                .and_then(|f| f.get(&shot))
                .map(Representation::Flow)
                .ok_or_else(|| missing("flow")),
        }
    }
}

impl FromStr for SimilarityFunction {
    type Err = Error;

    /// Parses a built-in function name or heuristic alias. `learned` needs a
    /// model and cannot be parsed.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cosine_features" | "cosine" => SimilarityFunction::CosineFeatures,
            "face_count_equal" | "h1" => SimilarityFunction::FaceCountEqual,
            "mask_iou" | "h2" => SimilarityFunction::MaskIou,
            "instance_iou" | "h3" => SimilarityFunction::InstanceIou,
            "flow_cosine" | "h4" | "h5" => SimilarityFunction::FlowCosine,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown similarity function {other:?}"
                )))
            }
        })
    }
}

/// 1 when both shots show the same number of faces (zero included), else 0.
pub fn face_count_score(a: &FaceCount, b: &FaceCount) -> f64 {
    if a.count == b.count {
        1.0
    } else {
        0.0
    }
}

/// Cosine of the two flattened flow fields.
pub fn flow_cosine(a: &FlowSummary, b: &FlowSummary) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::dims(
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    Ok(cosine_unchecked(&a.field, &b.field))
}

pub fn score_pair(f: &SimilarityFunction, a: Representation<'_>, b: Representation<'_>) -> Result<f64> {
    let required = f.required_representation();
    if a.kind() != required || b.kind() != required {
        return Err(Error::InvalidArgument(format!(
            "{} expects {:?} representations, got {:?} and {:?}",
            f.name(),
            required,
            a.kind(),
            b.kind()
        )));
    }
    match (f, a, b) {
        (SimilarityFunction::CosineFeatures, Representation::Features(u), Representation::Features(v)) => {
            crate::dedup::cosine(u, v)
        }
        (SimilarityFunction::Learned(model), Representation::Features(u), Representation::Features(v)) => {
            model.score(u, v)
        }
        (SimilarityFunction::FaceCountEqual, Representation::FaceCount(x), Representation::FaceCount(y)) => {
            Ok(face_count_score(x, y))
        }
        (SimilarityFunction::MaskIou, Representation::Masks(x), Representation::Masks(y)) => mask_iou(x, y),
        (SimilarityFunction::InstanceIou, Representation::Masks(x), Representation::Masks(y)) => {
            instance_iou(x, y)
        }
        (SimilarityFunction::FlowCosine, Representation::Flow(x), Representation::Flow(y)) => flow_cosine(x, y),
        _ => Err(Error::Internal("representation dispatch fell through".into())),
    }
}
