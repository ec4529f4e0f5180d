//! Pair enumeration, exact top-K selection, and approximate retrieval.
//!
//! Ranked lists are ordered by score descending, then by
//! `(movie_id, shot_i, shot_j)` ascending, so output is reproducible
//! regardless of evaluation order or thread count.

mod hnsw;
mod index;
mod topk;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use hnsw::HnswParams;
pub use index::{build_index, build_index_with, top_k_ann, AnnIndex, AnnMode, AnnParams, IndexEntry};
pub use topk::{top_k_exact, top_k_exact_par, BoundedTopK, RankKey};

use crate::datastore::MoviePack;
use crate::dedup::DedupResult;
use crate::error::{Error, Result};
use crate::scoring::{score_pair, Representation, SimilarityFunction};

/// A scored candidate pair.
///
/// Intra-movie pairs have `shot_i < shot_j` and no `movie_j`. Cross-movie
/// pairs carry the second shot's movie in `movie_j` and are canonicalized so
/// that `(movie_id, shot_i) < (movie_j, shot_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub movie_id: String,
    pub shot_i: u32,
    pub shot_j: u32,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub movie_j: Option<String>,
}

impl ScoredPair {
    pub fn new(movie_id: impl Into<String>, shot_i: u32, shot_j: u32, score: f64) -> Self {
        Self {
            movie_id: movie_id.into(),
            shot_i,
            shot_j,
            score,
            movie_j: None,
        }
    }

    /// Identity of the pair, ignoring the score.
    pub fn key(&self) -> (&str, u32, Option<&str>, u32) {
        (&self.movie_id, self.shot_i, self.movie_j.as_deref(), self.shot_j)
    }

    fn second_movie(&self) -> &str {
        self.movie_j.as_deref().unwrap_or(&self.movie_id)
    }
}

/// Ranking order: `Less` means `a` ranks ahead of `b`.
pub fn rank_order(a: &ScoredPair, b: &ScoredPair) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.movie_id.cmp(&b.movie_id))
        .then_with(|| a.shot_i.cmp(&b.shot_i))
        .then_with(|| a.second_movie().cmp(b.second_movie()))
        .then_with(|| a.shot_j.cmp(&b.shot_j))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub pairs: Vec<ScoredPair>,
    pub k: usize,
}

#[derive(Serialize, Deserialize)]
struct RankedLine {
    movie_id: String,
    shot_i: u32,
    shot_j: u32,
    score: f64,
    rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    movie_j: Option<String>,
}

impl RankedList {
    /// Sorts `pairs` into ranking order and truncates to `k`.
    pub fn from_unsorted(mut pairs: Vec<ScoredPair>, k: usize) -> Self {
        pairs.sort_by(rank_order);
        pairs.truncate(k);
        Self { pairs, k }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// JSON lines `{movie_id, shot_i, shot_j, score, rank}` with 1-based rank.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (r, p) in self.pairs.iter().enumerate() {
            let line = RankedLine {
                movie_id: p.movie_id.clone(),
                shot_i: p.shot_i,
                shot_j: p.shot_j,
                score: p.score,
                rank: r + 1,
                movie_j: p.movie_j.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("ranked line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path, k: usize) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: RankedLine = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
            if row.rank != pairs.len() + 1 {
                return Err(Error::Format(format!(
                    "{}:{}: rank {} out of sequence",
                    path.display(),
                    n + 1,
                    row.rank
                )));
            }
            pairs.push(ScoredPair {
                movie_id: row.movie_id,
                shot_i: row.shot_i,
                shot_j: row.shot_j,
                score: row.score,
                movie_j: row.movie_j,
            });
        }
        Ok(Self { pairs, k })
    }
}

/// All `(i, j)` with `i < j` over the kept shots, in lexicographic order.
pub fn enumerate_pairs(kept: &DedupResult) -> impl Iterator<Item = (u32, u32)> + '_ {
    let shots: Vec<u32> = kept.kept.iter().copied().collect();
    let n = shots.len();
    (0..n).flat_map(move |a| {
        let shots = shots.clone();
        (a + 1..n).map(move |b| (shots[a], shots[b]))
    })
}

/// Exact top-K of one movie's kept shots under `function`.
///
/// Every kept shot's representation is fetched before scoring, so a missing
/// one fails the call instead of being skipped.
pub fn rank_movie(
    pack: &MoviePack,
    kept: &DedupResult,
    function: &SimilarityFunction,
    encoder: Option<&str>,
    k: usize,
) -> Result<RankedList> {
    if kept.movie_id != pack.movie_id {
        return Err(Error::InvalidArgument(format!(
            "dedup result for {} applied to movie {}",
            kept.movie_id, pack.movie_id
        )));
    }
    let shots: Vec<u32> = kept.kept.iter().copied().collect();
    let reprs: Vec<Representation<'_>> = shots
        .iter()
        .map(|&s| function.representation(pack, encoder, s))
        .collect::<Result<_>>()?;
    let slot = |shot: u32| shots.binary_search(&shot).expect("kept shot");
    top_k_exact_par(&pack.movie_id, &shots, |i, j| score_pair(function, reprs[slot(i)], reprs[slot(j)]), k)
}

/// Fraction of the exact list's pairs present in the approximate list.
///
/// The denominator is the exact list's length, which equals `k` whenever
/// at least `k` candidates exist.
pub fn recall_at_k(approx: &RankedList, exact: &RankedList) -> Result<f64> {
    if approx.k != exact.k {
        return Err(Error::InvalidArgument(format!(
            "recall needs equal k, got {} and {}",
            approx.k, exact.k
        )));
    }
    if exact.pairs.is_empty() {
        return Ok(if approx.pairs.is_empty() { 1.0 } else { 0.0 });
    }
    let truth: BTreeSet<_> = exact.pairs.iter().map(ScoredPair::key).collect();
    let hits = approx
        .pairs
        .iter()
        .map(ScoredPair::key)
        .collect::<BTreeSet<_>>()
        .intersection(&truth)
        .count();
    Ok(hits as f64 / exact.pairs.len() as f64)
}

/// Pairs of `primary` in rank order, followed by pairs of `secondary` not
/// already present. Scores keep their source function's scale.
pub fn union_with(primary: &RankedList, secondary: &RankedList) -> Vec<ScoredPair> {
    let seen: BTreeSet<_> = primary.pairs.iter().map(ScoredPair::key).collect();
    let mut out = primary.pairs.clone();
    out.extend(
        secondary
            .pairs
            .iter()
            .filter(|p| !seen.contains(&p.key()))
            .cloned(),
    );
    out
}
