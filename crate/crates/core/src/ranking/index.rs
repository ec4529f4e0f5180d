//! Approximate nearest-neighbour index over feature packs and its on-disk
//! form.
//!
//! File layout, little endian:
//! `b"MCANNIDX"`, `u32` version, `u32` header length, JSON header,
//! `count * dim` `f32` vectors, then for graph indexes one record per node:
//! `u8` layer count, and per layer a `u32` length followed by `u32` ids.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hnsw::{Hnsw, HnswParams, Points, Visited};
use super::topk::{BoundedTopK, RankKey};
use super::{RankedList, ScoredPair};
use crate::datastore::FeaturePack;
use crate::dedup::cosine_unchecked;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MCANNIDX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnMode {
    Hnsw,
    /// Brute-force per-shot search; results equal the exact path.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnParams {
    pub mode: AnnMode,
    pub hnsw: HnswParams,
}

impl Default for AnnParams {
    fn default() -> Self {
        Self {
            mode: AnnMode::Hnsw,
            hnsw: HnswParams::default(),
        }
    }
}

impl AnnParams {
    pub fn exhaustive() -> Self {
        Self {
            mode: AnnMode::Exhaustive,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexEntry {
    pub movie_id: String,
    pub shot_index: u32,
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder_name: String,
    dim: usize,
    params: AnnParams,
    entries: Vec<IndexEntry>,
    max_level: usize,
    entry_point: u32,
}

/// Frozen index. Entries are sorted by `(movie_id, shot_index)`, so entry
/// order coincides with ranked-list tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnIndex {
    encoder_name: String,
    dim: usize,
    params: AnnParams,
    entries: Vec<IndexEntry>,
    movie_of: Vec<u32>,
    raw: Vec<f32>,
    unit: Vec<f32>,
    graph: Option<Hnsw>,
}

fn normalize(raw: &[f32], dim: usize) -> Vec<f32> {
    let mut unit = raw.to_vec();
    for row in unit.chunks_mut(dim) {
        let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
        }
    }
    unit
}

fn movie_ordinals(entries: &[IndexEntry]) -> Vec<u32> {
    let mut ordinal = 0u32;
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if i > 0 && entries[i - 1].movie_id != e.movie_id {
                ordinal += 1;
            }
            ordinal
        })
        .collect()
}

/// Indexes every shot of every pack.
pub fn build_index(packs: &[&FeaturePack], params: AnnParams) -> Result<AnnIndex> {
    build_index_with(packs, |_, _| true, params)
}

/// Indexes the shots for which `keep(movie_id, shot_index)` holds, such as
/// the kept shots after deduplication.
pub fn build_index_with<K>(packs: &[&FeaturePack], keep: K, params: AnnParams) -> Result<AnnIndex>
where
    K: Fn(&str, u32) -> bool,
{
    let first = packs.first().ok_or_else(|| Error::InvalidArgument("empty index".into()))?;
    let mut movies = BTreeSet::new();
    for pack in packs {
        if pack.dim != first.dim {
            return Err(Error::dims(first.dim, pack.dim));
        }
        if pack.encoder_name != first.encoder_name {
            return Err(Error::InvalidArgument(format!(
                "mixed encoders {} and {}",
                first.encoder_name, pack.encoder_name
            )));
        }
        if !movies.insert(pack.movie_id.as_str()) {
            return Err(Error::InvalidArgument(format!("movie {} indexed twice", pack.movie_id)));
        }
    }
    if params.hnsw.m < 2 || params.hnsw.ef_construction == 0 || params.hnsw.ef_search == 0 {
        return Err(Error::InvalidArgument("m must be >= 2 and ef values >= 1".into()));
    }
    let mut rows: Vec<(IndexEntry, &[f32])> = Vec::new();
    for pack in packs {
        for (&shot, v) in &pack.vectors {
            if keep(&pack.movie_id, shot) {
                if v.len() != pack.dim {
                    return Err(Error::dims(pack.dim, v.len()));
                }
                rows.push((
                    IndexEntry {
                        movie_id: pack.movie_id.clone(),
                        shot_index: shot,
                    },
                    v.as_slice(),
                ));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty index".into()));
    }
    if rows.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument("too many entries".into()));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let dim = first.dim;
    let raw: Vec<f32> = rows.iter().flat_map(|r| r.1.iter().copied()).collect();
    let entries: Vec<IndexEntry> = rows.into_iter().map(|r| r.0).collect();
    let unit = normalize(&raw, dim);
    let graph = match params.mode {
        AnnMode::Hnsw => Some(Hnsw::build(Points { data: &unit, dim }, params.hnsw)),
        AnnMode::Exhaustive => None,
    };
    Ok(AnnIndex {
        encoder_name: first.encoder_name.clone(),
        dim,
        params,
        movie_of: movie_ordinals(&entries),
        entries,
        raw,
        unit,
        graph,
    })
}

impl AnnIndex {
    pub fn encoder_name(&self) -> &str {
        &self.encoder_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> AnnParams {
        self.params
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.raw[i * self.dim..(i + 1) * self.dim]
    }

    fn pair_key(&self, a: u32, b: u32) -> RankKey {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        RankKey {
            score: cosine_unchecked(self.vector(a as usize), self.vector(b as usize)),
            group: 0,
            a,
            b,
        }
    }

    fn to_pair(&self, key: &RankKey) -> ScoredPair {
        let (ea, eb) = (&self.entries[key.a as usize], &self.entries[key.b as usize]);
        let mut pair = ScoredPair::new(ea.movie_id.clone(), ea.shot_index, eb.shot_index, key.score);
        if ea.movie_id != eb.movie_id {
            pair.movie_j = Some(eb.movie_id.clone());
        }
        pair
    }

    /// Per-shot neighbour list of entry `q` as canonical pair keys.
    fn neighbours(&self, q: u32, k: usize, exclude_same_shot: bool, intra: bool, visited: &mut Visited) -> Vec<RankKey> {
        let movie = self.movie_of[q as usize];
        let admit = |i: u32| !(exclude_same_shot && i == q) && (!intra || self.movie_of[i as usize] == movie);
        let keys: Vec<RankKey> = match &self.graph {
            None => {
                let mut top = BoundedTopK::new(k);
                for i in 0..self.len() as u32 {
                    if admit(i) {
                        // Self-matches occupy a slot but never become pairs.
                        top.push(if i == q {
                            RankKey {
                                score: f64::INFINITY,
                                group: 0,
                                a: q,
                                b: q,
                            }
                        } else {
                            self.pair_key(q, i)
                        });
                    }
                }
                top.into_sorted_vec()
            }
            Some(graph) => {
                let points = Points {
                    data: &self.unit,
                    dim: self.dim,
                };
                let ef = self.params.hnsw.ef_search.max(k);
                graph
                    .search(points, points.row(q), k, ef, visited, &admit)
                    .into_iter()
                    .map(|c| {
                        if c.id == q {
                            RankKey {
                                score: f64::INFINITY,
                                group: 0,
                                a: q,
                                b: q,
                            }
                        } else {
                            self.pair_key(q, c.id)
                        }
                    })
                    .collect()
            }
        };
        keys.into_iter().filter(|key| key.a != key.b).collect()
    }

    /// Brute-force global top-K over all entry pairs.
    pub fn exact_top_k(&self, k: usize, intra_movie_only: bool) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        let n = self.len() as u32;
        let top = (0..n)
            .into_par_iter()
            .fold(
                || BoundedTopK::new(k),
                |mut top, a| {
                    for b in a + 1..n {
                        if !intra_movie_only || self.movie_of[a as usize] == self.movie_of[b as usize] {
                            top.push(self.pair_key(a, b));
                        }
                    }
                    top
                },
            )
            .reduce(|| BoundedTopK::new(k), BoundedTopK::merge);
        Ok(RankedList {
            pairs: top.into_sorted_vec().iter().map(|key| self.to_pair(key)).collect(),
            k,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            encoder_name: self.encoder_name.clone(),
            dim: self.dim,
            params: self.params,
            entries: self.entries.clone(),
            max_level: self.graph.as_ref().map_or(0, |g| g.max_level),
            entry_point: self.graph.as_ref().map_or(0, |g| g.entry),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Internal(e.to_string()))?;
        let mut buf = Vec::with_capacity(16 + header.len() + self.raw.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for x in &self.raw {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        if let Some(graph) = &self.graph {
            for layers in &graph.links {
                buf.push(layers.len() as u8);
                for list in layers {
                    buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
                    for id in list {
                        buf.extend_from_slice(&id.to_le_bytes());
                    }
                }
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(8).ok_or_else(|| bad("truncated"))? != MAGIC {
            return Err(bad("not an index file"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported index version {version}")));
        }
        let header_len = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len).ok_or_else(|| bad("truncated"))?)
            .map_err(|e| Error::json(path, e))?;
        let n = header.entries.len();
        if header.dim == 0 || n == 0 {
            return Err(bad("empty index"));
        }
        if header.entries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("entries not strictly sorted"));
        }
        let mut raw = Vec::with_capacity(n * header.dim);
        for _ in 0..n * header.dim {
            let x = r.f32().ok_or_else(|| bad("truncated vectors"))?;
            if !x.is_finite() {
                return Err(Error::Validation(format!("{}: non-finite vector value", path.display())));
            }
            raw.push(x);
        }
        let graph = match header.params.mode {
            AnnMode::Exhaustive => None,
            AnnMode::Hnsw => {
                let mut links = Vec::with_capacity(n);
                for _ in 0..n {
                    let layers = r.u8().ok_or_else(|| bad("truncated graph"))? as usize;
                    if layers == 0 || layers > header.max_level + 1 {
                        return Err(bad("bad layer count"));
                    }
                    let mut node = Vec::with_capacity(layers);
                    for _ in 0..layers {
                        let len = r.u32().ok_or_else(|| bad("truncated graph"))? as usize;
                        let mut list = Vec::with_capacity(len.min(n));
                        for _ in 0..len {
                            let id = r.u32().ok_or_else(|| bad("truncated graph"))?;
                            if id as usize >= n {
                                return Err(bad("neighbour id out of range"));
                            }
                            list.push(id);
                        }
                        node.push(list);
                    }
                    links.push(node);
                }
                let entry = header.entry_point;
                if entry as usize >= n || links[entry as usize].len() != header.max_level + 1 {
                    return Err(bad("bad entry point"));
                }
                Some(Hnsw {
                    params: header.params.hnsw,
                    links,
                    entry,
                    max_level: header.max_level,
                })
            }
        };
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(AnnIndex {
            unit: normalize(&raw, header.dim),
            movie_of: movie_ordinals(&header.entries),
            encoder_name: header.encoder_name,
            dim: header.dim,
            params: header.params,
            entries: header.entries,
            raw,
            graph,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Global top-K pairs from per-shot `k`-nearest-neighbour queries.
///
/// With `exclude_same_shot` false the query shot may occupy one of its own
/// `k` slots, as a plain nearest-neighbour lookup would; self-pairs are
/// always dropped from the output.
pub fn top_k_ann(index: &AnnIndex, k: usize, exclude_same_shot: bool, intra_movie_only: bool) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k > index.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds index size {}",
            index.len()
        )));
    }
    let n = index.len();
    let mut keys: Vec<RankKey> = (0..n as u32)
        .into_par_iter()
        .map_init(
            || Visited::new(n),
            |visited, q| index.neighbours(q, k, exclude_same_shot, intra_movie_only, visited),
        )
        .flatten_iter()
        .collect();
    keys.sort_unstable();
    keys.dedup_by(|x, y| x.a == y.a && x.b == y.b);
    keys.truncate(k);
    Ok(RankedList {
        pairs: keys.iter().map(|key| index.to_pair(key)).collect(),
        k,
    })
}
