use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::{RankedList, ScoredPair};
use crate::error::{Error, Result};

/// Compact ranking key. `Less` ranks first: higher score, then smaller
/// `(group, a, b)`.
#[derive(Debug, Clone, Copy)]
pub struct RankKey {
    pub score: f64,
    pub group: u32,
    pub a: u32,
    pub b: u32,
}

impl PartialEq for RankKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for RankKey {}

impl PartialOrd for RankKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RankKey {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| (self.group, self.a, self.b).cmp(&(other.group, other.a, other.b)))
    }
}

/// Keeps the `k` smallest items seen so far in `O(k)` memory.
#[derive(Debug, Clone)]
pub struct BoundedTopK<T: Ord> {
    k: usize,
    heap: BinaryHeap<T>,
}

impl<T: Ord> BoundedTopK<T> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.saturating_add(1).min(1 << 20)),
        }
    }

    pub fn push(&mut self, item: T) {
        if self.k == 0 {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(item);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if item < *worst {
                *worst = item;
            }
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        for item in other.heap {
            self.push(item);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Items in ascending order.
    pub fn into_sorted_vec(self) -> Vec<T> {
        self.heap.into_sorted_vec()
    }
}

fn check_score(score: f64, i: u32, j: u32) -> Result<f64> {
    if score.is_finite() {
        Ok(score)
    } else {
        Err(Error::Validation(format!("pair ({i}, {j}) scored {score}")))
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::InvalidArgument("k must be positive".into()))
    } else {
        Ok(())
    }
}

fn materialize(movie_id: &str, keys: Vec<RankKey>, k: usize) -> RankedList {
    RankedList {
        pairs: keys
            .into_iter()
            .map(|key| ScoredPair::new(movie_id, key.a, key.b, key.score))
            .collect(),
        k,
    }
}

/// Exact top-K over the given pairs of one movie.
pub fn top_k_exact<I, F>(movie_id: &str, pairs: I, mut score: F, k: usize) -> Result<RankedList>
where
    I: IntoIterator<Item = (u32, u32)>,
    F: FnMut(u32, u32) -> Result<f64>,
{
    check_k(k)?;
    let mut top = BoundedTopK::new(k);
    for (i, j) in pairs {
        let s = check_score(score(i, j)?, i, j)?;
        top.push(RankKey {
            score: s,
            group: 0,
            a: i,
            b: j,
        });
    }
    Ok(materialize(movie_id, top.into_sorted_vec(), k))
}

/// Parallel exact top-K over all `i < j` pairs of `shots`, which must be
/// sorted ascending. Each worker keeps its own heap; heaps merge at the end.
/// The result is identical to [`top_k_exact`] for any thread count.
pub fn top_k_exact_par<F>(movie_id: &str, shots: &[u32], score: F, k: usize) -> Result<RankedList>
where
    F: Fn(u32, u32) -> Result<f64> + Sync,
{
    check_k(k)?;
    if shots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("shots must be strictly ascending".into()));
    }
    let top = (0..shots.len())
        .into_par_iter()
        .try_fold(
            || BoundedTopK::new(k),
            |mut top, a| {
                let i = shots[a];
                for &j in &shots[a + 1..] {
                    let s = check_score(score(i, j)?, i, j)?;
                    top.push(RankKey {
                        score: s,
                        group: 0,
                        a: i,
                        b: j,
                    });
                }
                Ok::<_, Error>(top)
            },
        )
        .try_reduce(|| BoundedTopK::new(k), |x, y| Ok(x.merge(y)))?;
    Ok(materialize(movie_id, top.into_sorted_vec(), k))
}
