//! Average precision, movie-level splits, the random baseline, and the
//! seed-repeated experiment protocol.

mod experiment;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use experiment::{
    render_table, run_experiment, write_report, ExperimentConfig, ExperimentResult, Method,
};

use crate::datastore::{LabeledPair, Task};
use crate::error::{Error, Result};

/// Mean of precision@k over the ranks of the positives.
///
/// Items are ranked by score descending; equal scores keep their input
/// order (stable sort), so the result is deterministic under ties.
pub fn average_precision(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::dims(labels.len(), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::InvalidArgument("average precision needs a positive label".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / positives as f64)
}

/// AP with constant score vectors treated as uninformative: they score the
/// prevalence and are flagged, instead of depending on input order.
pub fn evaluate_scores(labels: &[bool], scores: &[f64]) -> Result<(f64, bool)> {
    let ap = average_precision(labels, scores)?;
    let constant = scores.windows(2).all(|w| w[0] == w[1]);
    if constant {
        let p = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
        Ok((p, true))
    } else {
        Ok((ap, false))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn side_of(&self, movie_id: &str) -> Option<Split> {
        if self.train.contains(movie_id) {
            Some(Split::Train)
        } else if self.val.contains(movie_id) {
            Some(Split::Val)
        } else if self.test.contains(movie_id) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Largest-remainder apportionment of `n` items by `ratios`, with every
/// part non-empty when `n >= ratios.len()`.
fn apportion(n: usize, ratios: [u32; 3]) -> [usize; 3] {
    let total: u64 = ratios.iter().map(|&r| u64::from(r)).sum();
    let mut counts = [0usize; 3];
    let mut rems = [(0u64, 0usize); 3];
    for (k, &r) in ratios.iter().enumerate() {
        let exact = n as u64 * u64::from(r);
        counts[k] = (exact / total) as usize;
        rems[k] = (exact % total, k);
    }
    let mut left = n - counts.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, k) in &rems {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    for k in 0..3 {
        if counts[k] == 0 {
            let donor = (0..3).max_by_key(|&d| (counts[d], std::cmp::Reverse(d))).expect("three parts");
            counts[donor] -= 1;
            counts[k] += 1;
        }
    }
    counts
}

/// Seeded shuffle of the sorted movie ids, partitioned by `ratios`.
pub fn split_movies(movie_ids: &[String], ratios: [u32; 3], seed: u64) -> Result<SplitAssignment> {
    let mut ids: Vec<String> = movie_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != movie_ids.len() {
        return Err(Error::InvalidArgument("duplicate movie ids".into()));
    }
    if ids.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 movies, got {}", ids.len())));
    }
    if ratios.contains(&0) {
        return Err(Error::InvalidArgument("split ratios must be positive".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [a, b, _] = apportion(ids.len(), ratios);
    let mut it = ids.into_iter();
    let train = it.by_ref().take(a).collect();
    let val = it.by_ref().take(b).collect();
    let test = it.collect();
    Ok(SplitAssignment { train, val, test })
}

/// Mean AP of uniform random scores over `rounds` label vectors of length
/// `n` with `round(p·n)` positives. Rounds use independent streams of one
/// seed, so the result does not depend on the thread count.
pub fn random_baseline_ap(n: usize, p: f64, rounds: usize, seed: u64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("prevalence must be in (0, 1), got {p}")));
    }
    let positives = (p * n as f64).round() as usize;
    if positives == 0 || positives > n {
        return Err(Error::InvalidArgument(format!("{n} items at prevalence {p} give no positives")));
    }
    if rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be positive".into()));
    }
    let labels: Vec<bool> = (0..n).map(|i| i < positives).collect();
    let aps = (0..rounds)
        .into_par_iter()
        .map(|round| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(round as u64);
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            average_precision(&labels, &scores)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(aps.iter().sum::<f64>() / rounds as f64)
}

/// Adds up to `per_title` random unlabeled pairs per movie as negatives.
///
/// Candidates are pairs of `shots[movie]` not already labeled for `task`.
/// Movies are visited in id order and each draws from its own stream.
pub fn add_random_negatives(
    labels: &[LabeledPair],
    shots: &BTreeMap<String, Vec<u32>>,
    task: Task,
    per_title: usize,
    seed: u64,
) -> Vec<LabeledPair> {
    let mut out = labels.to_vec();
    for (m, (movie, shot_list)) in shots.iter().enumerate() {
        let mut pool: Vec<u32> = shot_list.clone();
        pool.sort_unstable();
        pool.dedup();
        let n = pool.len();
        let taken: BTreeSet<(u32, u32)> = labels
            .iter()
            .filter(|l| l.task == task && &l.movie_id == movie)
            .map(|l| (l.shot_i.min(l.shot_j), l.shot_i.max(l.shot_j)))
            .collect();
        let total = n * n.saturating_sub(1) / 2;
        let free = total.saturating_sub(taken.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(m as u64);
        let chosen: Vec<(u32, u32)> = if free <= 2 * per_title {
            let mut all: Vec<(u32, u32)> = (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .map(|(a, b)| (pool[a], pool[b]))
                .filter(|p| !taken.contains(p))
                .collect();
            all.shuffle(&mut rng);
            all.truncate(per_title);
            all
        } else {
            let mut picked = BTreeSet::new();
            let mut chosen = Vec::with_capacity(per_title);
            while chosen.len() < per_title {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if a == b {
                    continue;
                }
                let pair = (pool[a.min(b)], pool[a.max(b)]);
                if !taken.contains(&pair) && picked.insert(pair) {
                    chosen.push(pair);
                }
            }
            chosen
        };
        out.extend(
            chosen
                .into_iter()
                .map(|(i, j)| LabeledPair::random_negative(movie.clone(), i, j, task)),
        );
    }
    out
}
