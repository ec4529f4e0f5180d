//! Near-duplicate shot removal.
//!
//! Shot `j` is a duplicate when some earlier shot `i < j` has center-frame
//! embedding cosine similarity `>= threshold` with it. Every earlier shot is
//! compared, including ones that are themselves duplicates, so a removed shot
//! can still eliminate a later one.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{FeaturePack, ShotRecord};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Cosine similarity accumulated in `f64`. Zero when either vector has zero
/// norm.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dims(u.len(), v.len()));
    }
    Ok(cosine_unchecked(u, v))
}

#[inline]
pub(crate) fn cosine_unchecked(u: &[f32], v: &[f32]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0f64, 0f64, 0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupResult {
    pub movie_id: String,
    pub threshold: f64,
    pub removed: BTreeSet<u32>,
    pub kept: BTreeSet<u32>,
}

pub fn validate_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "dedup threshold must lie in (0, 1], got {threshold}"
        )))
    }
}

/// Splits the movie's shots into kept and removed sets.
///
/// `shots` is the full shot list of the movie; `pack` must carry an embedding
/// for every one of them.
pub fn deduplicate(pack: &FeaturePack, shots: &[ShotRecord], threshold: f64) -> Result<DedupResult> {
    validate_threshold(threshold)?;
    let mut indices: Vec<u32> = shots.iter().map(|s| s.shot_index).collect();
    indices.sort_unstable();
    indices.dedup();
    let vectors = indices
        .iter()
        .map(|i| {
            pack.get(*i).ok_or_else(|| {
                Error::Validation(format!(
                    "{}: no dedup embedding for shot {i}",
                    pack.movie_id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let duplicate: Vec<bool> = (0..vectors.len())
        .into_par_iter()
        .map(|j| (0..j).any(|i| cosine_unchecked(vectors[i], vectors[j]) >= threshold))
        .collect();

    let mut removed = BTreeSet::new();
    let mut kept = BTreeSet::new();
    for (idx, dup) in indices.into_iter().zip(duplicate) {
        if dup {
            removed.insert(idx);
        } else {
            kept.insert(idx);
        }
    }
    Ok(DedupResult {
        movie_id: pack.movie_id.clone(),
        threshold,
        removed,
        kept,
    })
}

/// Result that keeps every shot, for movies without dedup embeddings.
pub fn keep_all(movie_id: &str, shots: &[ShotRecord]) -> DedupResult {
    DedupResult {
        movie_id: movie_id.to_string(),
        threshold: 1.0,
        removed: BTreeSet::new(),
        kept: shots.iter().map(|s| s.shot_index).collect(),
    }
}
