//! Hard-triplet mining and the normalized temperature-scaled cross-entropy
//! loss over cosine similarities.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Positive relations among the items of a batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairLabels {
    pub n: usize,
    /// Unordered positive pairs stored as `(i, j)` with `i < j`.
    pub positives: BTreeSet<(usize, usize)>,
}

impl PairLabels {
    pub fn new(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut positives = BTreeSet::new();
        for (i, j) in pairs {
            if i == j || i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("bad positive pair ({i}, {j}) for {n} items")));
            }
            positives.insert((i.min(j), i.max(j)));
        }
        Ok(Self { n, positives })
    }

    pub fn is_positive(&self, i: usize, j: usize) -> bool {
        self.positives.contains(&(i.min(j), i.max(j)))
    }

    /// Positive partners of each item, ascending.
    fn partners(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n];
        for &(i, j) in &self.positives {
            out[i].push(j);
            out[j].push(i);
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        out
    }
}

/// Anchor-positive and anchor-negative index pairs fed to the loss.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairTuples {
    pub positive: Vec<(usize, usize)>,
    pub negative: Vec<(usize, usize)>,
}

impl PairTuples {
    /// Distinct anchor-positive and anchor-negative pairs of the triplets.
    pub fn from_triplets(triplets: &[(usize, usize, usize)]) -> Self {
        let positive: BTreeSet<_> = triplets.iter().map(|&(a, p, _)| (a, p)).collect();
        let negative: BTreeSet<_> = triplets.iter().map(|&(a, _, n)| (a, n)).collect();
        Self {
            positive: positive.into_iter().collect(),
            negative: negative.into_iter().collect(),
        }
    }
}

/// Row-wise L2 normalization; zero rows stay zero. Returns the unit rows
/// and the original norms.
fn normalize_rows(e: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<f64>) {
    let mut unit = e.to_owned();
    let mut norms = Vec::with_capacity(e.nrows());
    for mut row in unit.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
        norms.push(norm);
    }
    (unit, norms)
}

fn cos_matrix(e: ArrayView2<'_, f64>) -> Array2<f64> {
    let (unit, _) = normalize_rows(e);
    unit.dot(&unit.t())
}

/// All `(anchor, positive, negative)` with `cos(a, n) > cos(a, p)`.
///
/// Each positive pair is used with both members as anchor. A negative is
/// any other batch item not positively paired with the anchor. Output is
/// ordered by anchor, then positive, then negative.
pub fn mine_hard_triplets(embeddings: ArrayView2<'_, f64>, labels: &PairLabels) -> Result<Vec<(usize, usize, usize)>> {
    if embeddings.nrows() != labels.n {
        return Err(Error::dims(labels.n, embeddings.nrows()));
    }
    let sim = cos_matrix(embeddings);
    let partners = labels.partners();
    let mut out = Vec::new();
    for (a, ps) in partners.iter().enumerate() {
        for &p in ps {
            for n in 0..labels.n {
                if n != a && ps.binary_search(&n).is_err() && sim[[a, n]] > sim[[a, p]] {
                    out.push((a, p, n));
                }
            }
        }
    }
    Ok(out)
}

/// Mean over positive pairs `(a, p)` of
/// `−log(exp(s_ap/τ) / (exp(s_ap/τ) + Σ_n exp(s_an/τ)))`, where `n` ranges
/// over negative pairs sharing anchor `a` and `s` is cosine similarity.
/// Returns the loss and its gradient with respect to the raw embeddings.
pub fn ntxent_loss(embeddings: ArrayView2<'_, f64>, tuples: &PairTuples, temperature: f64) -> Result<(f64, Array2<f64>)> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    if tuples.positive.is_empty() {
        return Err(Error::InvalidArgument("no positive pair in batch".into()));
    }
    let rows = embeddings.nrows();
    if tuples
        .positive
        .iter()
        .chain(&tuples.negative)
        .any(|&(a, b)| a >= rows || b >= rows)
    {
        return Err(Error::InvalidArgument("pair index out of range".into()));
    }
    let (unit, norms) = normalize_rows(embeddings);
    let mut negatives: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, n) in &tuples.negative {
        negatives.entry(a).or_default().push(n);
    }
    let count = tuples.positive.len() as f64;
    let sim = |i: usize, j: usize| unit.row(i).dot(&unit.row(j));
    // ∂loss/∂unit accumulated as coefficients on unit-vector pairs.
    let mut d_unit = Array2::<f64>::zeros(unit.raw_dim());
    let mut loss = 0.0;
    let empty = Vec::new();
    for &(a, p) in &tuples.positive {
        let negs = negatives.get(&a).unwrap_or(&empty);
        let logits: Vec<f64> = std::iter::once(sim(a, p))
            .chain(negs.iter().map(|&n| sim(a, n)))
            .map(|s| s / temperature)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        loss += max + sum.ln() - logits[0];
        // ∂/∂s_x = (softmax_x − [x = p]) / τ, averaged over positives.
        for (idx, &other) in std::iter::once(&p).chain(negs).enumerate() {
            let weight = (logits[idx] - max).exp() / sum - if idx == 0 { 1.0 } else { 0.0 };
            let coef = weight / (temperature * count);
            let (ua, uo) = (unit.row(a).to_owned(), unit.row(other).to_owned());
            d_unit.row_mut(a).scaled_add(coef, &uo);
            d_unit.row_mut(other).scaled_add(coef, &ua);
        }
    }
    // Back through normalization: ∂/∂e = (g − û(û·g)) / ‖e‖.
    let mut grad = Array2::<f64>::zeros(unit.raw_dim());
    for i in 0..rows {
        if norms[i] > 0.0 {
            let u = unit.row(i);
            let g = d_unit.row(i);
            let proj = u.dot(&g);
            let mut out = grad.row_mut(i);
            out.assign(&g);
            out.scaled_add(-proj, &u);
            out /= norms[i];
        }
    }
    Ok((loss / count, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn closed_form_single_anchor() {
        let e = array![[1.0, 0.0], [2.0, 0.0], [0.0, 3.0]];
        let tuples = PairTuples {
            positive: vec![(0, 1)],
            negative: vec![(0, 2)],
        };
        let (loss, _) = ntxent_loss(e.view(), &tuples, 1.0).unwrap();
        assert!((loss - 0.31326168751822283405).abs() < 1e-15);
    }

    #[test]
    fn perfect_separation_limit() {
        let e = array![[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]];
        let tuples = PairTuples {
            positive: vec![(0, 1)],
            negative: vec![(0, 2)],
        };
        let (loss, _) = ntxent_loss(e.view(), &tuples, 0.01).unwrap();
        assert!(loss < 1e-80);
    }

    #[test]
    fn argument_errors() {
        let e = array![[1.0], [1.0]];
        assert!(ntxent_loss(e.view(), &PairTuples::default(), 1.0).is_err());
        let t = PairTuples {
            positive: vec![(0, 1)],
            negative: vec![],
        };
        assert!(ntxent_loss(e.view(), &t, 0.0).is_err());
        assert!(ntxent_loss(e.view(), &t, -1.0).is_err());
        let (loss, grad) = ntxent_loss(e.view(), &t, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn miner_rule() {
        // Anchor 0 positive with 1; item 2 is closer to 0 than 1 is.
        let e = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.1], [-1.0, 0.0]];
        let labels = PairLabels::new(4, [(0, 1)]).unwrap();
        let t = mine_hard_triplets(e.view(), &labels).unwrap();
        assert!(t.contains(&(0, 1, 2)));
        assert!(!t.iter().any(|&(_, _, n)| n == 3));
        let easy = array![[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, -1.0]];
        assert!(mine_hard_triplets(easy.view(), &labels).unwrap().is_empty());
    }

    #[test]
    fn miner_matches_triple_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let e = Array2::from_shape_simple_fn((10, 4), || StandardNormal.sample(&mut rng));
        let labels = PairLabels::new(10, [(0, 1), (2, 3), (0, 4), (5, 9), (6, 7)]).unwrap();
        let mined = mine_hard_triplets(e.view(), &labels).unwrap();
        let cos = |i: usize, j: usize| {
            let (a, b) = (e.row(i), e.row(j));
            a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
        };
        let mut oracle = Vec::new();
        for a in 0..10 {
            for p in 0..10 {
                for n in 0..10 {
                    if a != p && a != n && labels.is_positive(a, p) && !labels.is_positive(a, n) && cos(a, n) > cos(a, p) {
                        oracle.push((a, p, n));
                    }
                }
            }
        }
        assert_eq!(mined, oracle);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let e = Array2::from_shape_simple_fn((6, 3), || StandardNormal.sample(&mut rng));
            let tuples = PairTuples {
                positive: vec![(0, 1), (2, 3), (1, 0)],
                negative: vec![(0, 2), (0, 4), (2, 5), (1, 3), (1, 5)],
            };
            let tau = 0.5;
            let (_, grad) = ntxent_loss(e.view(), &tuples, tau).unwrap();
            let h = 1e-6;
            for idx in 0..e.len() {
                let (r, c) = (idx / 3, idx % 3);
                let mut plus = e.clone();
                plus[[r, c]] += h;
                let mut minus = e.clone();
                minus[[r, c]] -= h;
                let fd = (ntxent_loss(plus.view(), &tuples, tau).unwrap().0
                    - ntxent_loss(minus.view(), &tuples, tau).unwrap().0)
                    / (2.0 * h);
                let g = grad[[r, c]];
                assert!((g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()).max(1e-3), "{g} vs {fd}");
            }
        }
    }

    #[test]
    fn tuples_deduplicate() {
        let t = PairTuples::from_triplets(&[(0, 1, 2), (0, 1, 3), (1, 0, 2)]);
        assert_eq!(t.positive, vec![(0, 1), (1, 0)]);
        assert_eq!(t.negative, vec![(0, 2), (0, 3), (1, 2)]);
    }
}
