//! Hierarchical navigable small-world graph over unit vectors.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Links per node on upper layers; layer 0 allows twice as many.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 128,
            seed: 0,
        }
    }
}

/// Row-major unit vectors; similarity is the dot product.
#[derive(Clone, Copy)]
pub(crate) struct Points<'a> {
    pub data: &'a [f32],
    pub dim: usize,
}

impl<'a> Points<'a> {
    pub fn row(&self, i: u32) -> &'a [f32] {
        let i = i as usize;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sim(&self, q: &[f32], i: u32) -> f32 {
        q.iter().zip(self.row(i)).map(|(a, b)| a * b).sum()
    }
}

/// Search candidate; greater means more similar, ties favour the lower id.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cand {
    pub sim: f32,
    pub id: u32,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Visited set reset in O(1) by bumping an epoch counter.
pub(crate) struct Visited {
    stamp: Vec<u32>,
    epoch: u32,
}

impl Visited {
    pub fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.fill(0);
            self.epoch = 1;
        }
    }

    fn insert(&mut self, i: u32) -> bool {
        let slot = &mut self.stamp[i as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Hnsw {
    pub params: HnswParams,
    /// `links[node][layer]`; a node lives on layers `0..links[node].len()`.
    pub links: Vec<Vec<Vec<u32>>>,
    pub entry: u32,
    pub max_level: usize,
}

impl Hnsw {
    pub fn build(points: Points<'_>, params: HnswParams) -> Self {
        let n = points.data.len() / points.dim.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let ml = 1.0 / (params.m.max(2) as f64).ln();
        let levels: Vec<usize> = (0..n)
            .map(|_| {
                let u: f64 = 1.0 - rng.random::<f64>();
                ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
            })
            .collect();
        let mut graph = Hnsw {
            params,
            links: levels.iter().map(|&l| vec![Vec::new(); l + 1]).collect(),
            entry: 0,
            max_level: levels.first().copied().unwrap_or(0),
        };
        let mut visited = Visited::new(n);
        for (q, &level) in levels.iter().enumerate().skip(1) {
            graph.insert(points, q as u32, level, &mut visited);
        }
        graph
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, points: Points<'_>, q: u32, level: usize, visited: &mut Visited) {
        let qv = points.row(q);
        let mut eps = vec![Cand {
            sim: points.sim(qv, self.entry),
            id: self.entry,
        }];
        for layer in (level + 1..=self.max_level).rev() {
            eps = self.search_layer(points, qv, &eps, 1, layer, visited, &|_| true);
        }
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(points, qv, &eps, self.params.ef_construction, layer, visited, &|_| true);
            let chosen = select_neighbors(points, &found, self.params.m);
            self.links[q as usize][layer] = chosen.iter().map(|c| c.id).collect();
            for c in &chosen {
                self.link(points, c.id, q, layer);
            }
            eps = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = q;
        }
    }

    /// Adds `to` to the adjacency of `from`, pruning if over capacity.
    fn link(&mut self, points: Points<'_>, from: u32, to: u32, layer: usize) {
        let cap = self.max_links(layer);
        let list = &mut self.links[from as usize][layer];
        list.push(to);
        if list.len() <= cap {
            return;
        }
        let base = points.row(from);
        let mut cands: Vec<Cand> = list
            .iter()
            .map(|&id| Cand {
                sim: points.sim(base, id),
                id,
            })
            .collect();
        cands.sort_unstable_by(|a, b| b.cmp(a));
        *list = select_neighbors(points, &cands, cap).iter().map(|c| c.id).collect();
    }

    /// Best-first search on one layer. Only nodes passing `keep` enter the
    /// result set, but all nodes are traversed. Returns best first.
    #[allow(clippy::too_many_arguments)]
    pub fn search_layer(
        &self,
        points: Points<'_>,
        q: &[f32],
        entries: &[Cand],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
        keep: &dyn Fn(u32) -> bool,
    ) -> Vec<Cand> {
        visited.reset();
        let ef = ef.max(1);
        let mut frontier: BinaryHeap<Cand> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e.id) {
                frontier.push(e);
                if keep(e.id) {
                    results.push(Reverse(e));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        while let Some(c) = frontier.pop() {
            if results.len() >= ef && c < results.peek().expect("non-empty").0 {
                break;
            }
            for &nb in &self.links[c.id as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Cand {
                    sim: points.sim(q, nb),
                    id: nb,
                };
                if results.len() < ef || cand > results.peek().expect("non-empty").0 {
                    frontier.push(cand);
                    if keep(nb) {
                        results.push(Reverse(cand));
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }
        }
        let mut out: Vec<Cand> = results.into_iter().map(|r| r.0).collect();
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    /// Approximate nearest neighbours of `q` among nodes passing `keep`.
    pub fn search(
        &self,
        points: Points<'_>,
        q: &[f32],
        k: usize,
        ef: usize,
        visited: &mut Visited,
        keep: &dyn Fn(u32) -> bool,
    ) -> Vec<Cand> {
        if self.links.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut eps = vec![Cand {
            sim: points.sim(q, self.entry),
            id: self.entry,
        }];
        for layer in (1..=self.max_level).rev() {
            eps = self.search_layer(points, q, &eps, 1, layer, visited, &|_| true);
        }
        let mut out = self.search_layer(points, q, &eps, ef.max(k), 0, visited, keep);
        out.truncate(k);
        out
    }
}

/// Diversity heuristic: keep a candidate only if it is closer to the base
/// than to every neighbour already kept. `cands` must be sorted best first.
fn select_neighbors(points: Points<'_>, cands: &[Cand], m: usize) -> Vec<Cand> {
    let mut chosen: Vec<Cand> = Vec::with_capacity(m);
    for &c in cands {
        if chosen.len() >= m {
            break;
        }
        let row = points.row(c.id);
        if chosen.iter().all(|s| points.sim(row, s.id) < c.sim) {
            chosen.push(c);
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_rows(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let row: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f32>().sqrt();
            data.extend(row.iter().map(|x| x / norm));
        }
        data
    }

    #[test]
    fn finds_itself_and_true_neighbours() {
        let dim = 16;
        let data = unit_rows(2000, dim, 1);
        let points = Points { data: &data, dim };
        let graph = Hnsw::build(points, HnswParams::default());
        let mut visited = Visited::new(2000);
        let mut hits = 0;
        let mut total = 0;
        for q in (0..2000u32).step_by(50) {
            let qv = points.row(q);
            let found = graph.search(points, qv, 10, 64, &mut visited, &|_| true);
            assert_eq!(found[0].id, q);
            let mut all: Vec<Cand> = (0..2000u32).map(|i| Cand { sim: points.sim(qv, i), id: i }).collect();
            all.sort_unstable_by(|a, b| b.cmp(a));
            let truth: Vec<u32> = all[..10].iter().map(|c| c.id).collect();
            hits += found.iter().filter(|c| truth.contains(&c.id)).count();
            total += 10;
        }
        assert!(hits as f64 / total as f64 > 0.95, "{hits}/{total}");
    }

    #[test]
    fn build_is_deterministic() {
        let data = unit_rows(300, 8, 2);
        let points = Points { data: &data, dim: 8 };
        let a = Hnsw::build(points, HnswParams::default());
        let b = Hnsw::build(points, HnswParams::default());
        assert_eq!(a, b);
        for (node, layers) in a.links.iter().enumerate() {
            for (layer, list) in layers.iter().enumerate() {
                assert!(list.len() <= a.max_links(layer));
                assert!(!list.contains(&(node as u32)));
            }
        }
    }

    #[test]
    fn filter_restricts_results() {
        let data = unit_rows(500, 8, 3);
        let points = Points { data: &data, dim: 8 };
        let graph = Hnsw::build(points, HnswParams::default());
        let mut visited = Visited::new(500);
        let found = graph.search(points, points.row(0), 20, 64, &mut visited, &|i| i % 2 == 1);
        assert_eq!(found.len(), 20);
        assert!(found.iter().all(|c| c.id % 2 == 1));
    }
}
