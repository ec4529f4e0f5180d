//! On-disk data model for movie packs and label files.
//!
//! A movie pack is a directory:
//!
//! ```text
//! manifest.json              {movie_id, fps, shots: [{shot_index, start_frame, end_frame}]}
//! features/<encoder>.bin     float32 LE, shape [n, dim]
//! features/<encoder>.json    {shape, dtype, order, shot_indices}
//! masks.json                 {width, height, shots: [{shot_index, instances: [rle, ...]}]}
//! flows.bin / flows.json     float32 LE, shape [n, H, W, 2]
//! faces.json                 [{shot_index, count}]
//! ```
//!
//! Shot indices are 1-based everywhere. Loading is strict: any violation
//! fails the whole load and nothing partial is returned.

mod labels;
mod mask;
mod pack;
mod tensor;

use std::collections::BTreeMap;

pub use labels::{load_labels, write_labels, LabeledPair, PairSource, Task};
pub use mask::{BitMask, MaskSet};
pub use pack::{load_movie_pack, load_packs_root, write_movie_pack};
pub use tensor::{read_tensor, write_tensor, TensorSidecar};

use crate::error::{Error, Result};

/// Encoders whose packs the loader accepts by name. Anything else must be
/// spelled `custom:<name>`. A `.metric` suffix marks embeddings produced by a
/// trained metric head.
pub const KNOWN_ENCODERS: &[&str] = &[
    "clip", "rn50", "en7", "r2p1d", "swin", "c4c", "yamnet", "dedup",
];

/// Encoder name used for center-frame embeddings consumed by deduplication.
pub const DEDUP_ENCODER: &str = "dedup";

pub const METRIC_SUFFIX: &str = ".metric";

pub fn validate_encoder_name(name: &str) -> Result<()> {
    let base = name.strip_suffix(METRIC_SUFFIX).unwrap_or(name);
    let ok = KNOWN_ENCODERS.contains(&base)
        || base
            .strip_prefix("custom:")
            .is_some_and(|rest| !rest.is_empty() && !rest.contains(['/', '\\']));
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!("unknown encoder name {name:?}")))
    }
}

/// One shot of one movie.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotRecord {
    pub movie_id: String,
    pub shot_index: u32,
    pub start_frame: u64,
    /// Exclusive.
    pub end_frame: u64,
    pub fps: f64,
    pub frame_count: u64,
}

impl ShotRecord {
    pub fn new(
        movie_id: impl Into<String>,
        shot_index: u32,
        start_frame: u64,
        end_frame: u64,
        fps: f64,
    ) -> Result<Self> {
        let movie_id = movie_id.into();
        if shot_index == 0 {
            return Err(Error::Validation(format!(
                "{movie_id}: shot indices are 1-based"
            )));
        }
        if end_frame <= start_frame {
            return Err(Error::Validation(format!(
                "{movie_id} shot {shot_index}: end_frame {end_frame} <= start_frame {start_frame}"
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Validation(format!("{movie_id}: fps must be positive")));
        }
        Ok(Self {
            movie_id,
            shot_index,
            start_frame,
            end_frame,
            fps,
            frame_count: end_frame - start_frame,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frame_count as f64 / self.fps
    }

    /// Frame offset (within the shot) of the center frame, `floor(l / 2)`.
    pub fn center_frame_offset(&self) -> u64 {
        self.frame_count / 2
    }
}

/// Checks uniqueness, ordering, non-overlap, and contiguity of a movie's
/// shots. Shots with consecutive indices must abut exactly; a gap in the
/// index sequence (a released subset) may leave a gap in frames.
pub fn validate_shots(shots: &[ShotRecord]) -> Result<()> {
    for pair in shots.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.shot_index <= a.shot_index {
            return Err(Error::Validation(format!(
                "{}: shot indices not strictly increasing ({} then {})",
                a.movie_id, a.shot_index, b.shot_index
            )));
        }
        if b.start_frame < a.end_frame {
            return Err(Error::Validation(format!(
                "{}: shots {} and {} overlap",
                a.movie_id, a.shot_index, b.shot_index
            )));
        }
        if b.shot_index == a.shot_index + 1 && b.start_frame != a.end_frame {
            return Err(Error::Validation(format!(
                "{}: shots {} and {} are not contiguous",
                a.movie_id, a.shot_index, b.shot_index
            )));
        }
    }
    Ok(())
}

/// Per-shot vectors of one movie under one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePack {
    pub movie_id: String,
    pub encoder_name: String,
    pub dim: usize,
    pub vectors: BTreeMap<u32, Vec<f32>>,
}

impl FeaturePack {
    pub fn new(
        movie_id: impl Into<String>,
        encoder_name: impl Into<String>,
        dim: usize,
        vectors: BTreeMap<u32, Vec<f32>>,
    ) -> Result<Self> {
        let pack = Self {
            movie_id: movie_id.into(),
            encoder_name: encoder_name.into(),
            dim,
            vectors,
        };
        pack.validate()?;
        Ok(pack)
    }

    pub fn validate(&self) -> Result<()> {
        validate_encoder_name(&self.encoder_name)?;
        if self.dim == 0 {
            return Err(Error::Validation("feature dim must be positive".into()));
        }
        for (shot, v) in &self.vectors {
            if v.len() != self.dim {
                return Err(Error::dims(
                    format!("{} components", self.dim),
                    format!("{} for shot {shot} of {}", v.len(), self.movie_id),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "{}/{}: non-finite component for shot {shot}",
                    self.movie_id, self.encoder_name
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, shot_index: u32) -> Option<&[f32]> {
        self.vectors.get(&shot_index).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Shot-level optical flow: the mean of per-frame-pair flow fields, stored as
/// `height × width × 2` (row-major over pixels, horizontal before vertical).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSummary {
    pub movie_id: String,
    pub shot_index: u32,
    pub width: u32,
    pub height: u32,
    pub field: Vec<f32>,
}

impl FlowSummary {
    pub fn new(
        movie_id: impl Into<String>,
        shot_index: u32,
        width: u32,
        height: u32,
        field: Vec<f32>,
    ) -> Result<Self> {
        let expected = width as usize * height as usize * 2;
        if width == 0 || height == 0 {
            return Err(Error::Validation("flow dimensions must be positive".into()));
        }
        if field.len() != expected {
            return Err(Error::dims(expected, field.len()));
        }
        if field.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "flow summary for shot {shot_index} has non-finite entries"
            )));
        }
        Ok(Self {
            movie_id: movie_id.into(),
            shot_index,
            width,
            height,
            field,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceCount {
    pub shot_index: u32,
    pub count: u32,
}

/// Everything loaded from one movie pack directory.
#[derive(Debug, Clone, PartialEq)]
pub struct MoviePack {
    pub movie_id: String,
    pub fps: f64,
    /// Sorted by `shot_index`.
    pub shots: Vec<ShotRecord>,
    pub features: BTreeMap<String, FeaturePack>,
    pub masks: Option<BTreeMap<u32, MaskSet>>,
    pub flows: Option<BTreeMap<u32, FlowSummary>>,
    pub faces: Option<BTreeMap<u32, FaceCount>>,
}

impl MoviePack {
    /// An empty pack with the given shots.
    pub fn new(movie_id: impl Into<String>, fps: f64, mut shots: Vec<ShotRecord>) -> Result<Self> {
        let movie_id = movie_id.into();
        shots.sort_by_key(|s| s.shot_index);
        if let Some(s) = shots.iter().find(|s| s.movie_id != movie_id) {
            return Err(Error::Validation(format!(
                "shot {} belongs to {:?}, not {movie_id:?}",
                s.shot_index, s.movie_id
            )));
        }
        validate_shots(&shots)?;
        Ok(Self {
            movie_id,
            fps,
            shots,
            features: BTreeMap::new(),
            masks: None,
            flows: None,
            faces: None,
        })
    }

    pub fn shot_indices(&self) -> Vec<u32> {
        self.shots.iter().map(|s| s.shot_index).collect()
    }

    pub fn has_shot(&self, shot_index: u32) -> bool {
        self.shots
            .binary_search_by_key(&shot_index, |s| s.shot_index)
            .is_ok()
    }

    pub fn feature(&self, encoder: &str) -> Result<&FeaturePack> {
        self.features.get(encoder).ok_or_else(|| {
            Error::Validation(format!(
                "movie {} has no {encoder:?} feature pack",
                self.movie_id
            ))
        })
    }

    /// Adds a feature pack after checking it refers only to known shots.
    pub fn insert_features(&mut self, pack: FeaturePack) -> Result<()> {
        pack.validate()?;
        if pack.movie_id != self.movie_id {
            return Err(Error::Validation(format!(
                "feature pack for {:?} added to movie {:?}",
                pack.movie_id, self.movie_id
            )));
        }
        if let Some(shot) = pack.vectors.keys().find(|s| !self.has_shot(**s)) {
            return Err(Error::Validation(format!(
                "{}/{}: shot_index {shot} absent from manifest",
                self.movie_id, pack.encoder_name
            )));
        }
        self.features.insert(pack.encoder_name.clone(), pack);
        Ok(())
    }
}
