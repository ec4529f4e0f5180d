//! Embedding head trained with NT-Xent over mined hard triplets.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::contrastive::{mine_hard_triplets, ntxent_loss, PairLabels, PairTuples};
use super::mlp::{tensors, Activation, Mlp};
use super::TrainConfig;
use crate::datastore::{FeaturePack, LabeledPair, Task, METRIC_SUFFIX};
use crate::error::{Error, Result};

/// Labeled shot pairs with one feature row per distinct shot.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    /// `(movie_id, shot_index)` per feature row, sorted.
    pub items: Vec<(String, u32)>,
    pub features: Array2<f64>,
    /// `(row_i, row_j, positive)`.
    pub pairs: Vec<(usize, usize, bool)>,
}

impl PairDataset {
    /// Gathers features for every shot referenced by `labels`. `packs` holds
    /// one pack per movie, all from the same encoder.
    pub fn from_labels(packs: &[&FeaturePack], labels: &[LabeledPair]) -> Result<Self> {
        let by_movie: BTreeMap<&str, &FeaturePack> = packs.iter().map(|p| (p.movie_id.as_str(), *p)).collect();
        let dim = packs.first().map(|p| p.dim).unwrap_or(0);
        if packs.iter().any(|p| p.dim != dim) {
            return Err(Error::dims(dim, "mixed"));
        }
        let mut rows: BTreeMap<(String, u32), usize> = BTreeMap::new();
        for l in labels {
            rows.insert((l.movie_id.clone(), l.shot_i), 0);
            rows.insert((l.movie_id.clone(), l.shot_j), 0);
        }
        let mut features = Array2::zeros((rows.len(), dim));
        for (r, ((movie, shot), slot)) in rows.iter_mut().enumerate() {
            *slot = r;
            let v = by_movie
                .get(movie.as_str())
                .ok_or_else(|| Error::Validation(format!("no features for movie {movie}")))?
                .get(*shot)
                .ok_or_else(|| Error::Validation(format!("no features for movie {movie} shot {shot}")))?;
            features.row_mut(r).iter_mut().zip(v).for_each(|(d, &s)| *d = f64::from(s));
        }
        let pairs = labels
            .iter()
            .map(|l| {
                (
                    rows[&(l.movie_id.clone(), l.shot_i)],
                    rows[&(l.movie_id.clone(), l.shot_j)],
                    l.majority,
                )
            })
            .collect();
        Ok(Self {
            items: rows.into_keys().collect(),
            features,
            pairs,
        })
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.2).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub hidden: usize,
    pub output_dim: usize,
    pub train: TrainConfig,
}

impl MetricConfig {
    pub fn frame(seed: u64) -> Self {
        Self {
            hidden: 128,
            output_dim: 1024,
            train: TrainConfig {
                learning_rate: 3.147e-3,
                weight_decay: 1e-4,
                temperature: 7.362e-3,
                batch_size: 256,
                epochs: 300,
                seed,
            },
        }
    }

    pub fn motion(seed: u64) -> Self {
        Self {
            hidden: 256,
            output_dim: 1024,
            train: TrainConfig {
                learning_rate: 4.056e-4,
                weight_decay: 4.54e-4,
                temperature: 1.3412e-2,
                batch_size: 256,
                epochs: 100,
                seed,
            },
        }
    }

    pub fn for_task(task: Task, seed: u64) -> Self {
        match task {
            Task::Frame => Self::frame(seed),
            Task::Motion => Self::motion(seed),
        }
    }
}

/// `Linear → LeakyReLU → Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricHead {
    pub mlp: Mlp,
}

impl MetricHead {
    pub fn new(input_dim: usize, hidden: usize, output_dim: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(&[input_dim, hidden, output_dim], Activation::LeakyRelu, seed)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn embed_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.mlp.forward(x)
    }

    pub fn embed(&self, v: &[f32]) -> Result<Vec<f32>> {
        let x = Array2::from_shape_vec((1, v.len()), v.iter().map(|&x| f64::from(x)).collect())
            .map_err(|e| Error::Internal(e.to_string()))?;
        Ok(self.embed_batch(x.view())?.iter().map(|&x| x as f32).collect())
    }

    /// Embeds every vector of `pack`; the result's encoder gains the metric
    /// suffix.
    pub fn transform_pack(&self, pack: &FeaturePack) -> Result<FeaturePack> {
        let vectors = pack
            .vectors
            .iter()
            .map(|(&shot, v)| Ok((shot, self.embed(v)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        FeaturePack::new(
            pack.movie_id.clone(),
            format!("{}{METRIC_SUFFIX}", pack.encoder_name),
            self.output_dim(),
            vectors,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTrainLog {
    /// Mean loss over the batches of each epoch that produced triplets.
    pub epoch_loss: Vec<f64>,
    /// Batches with no positive pair or no hard triplet.
    pub skipped_batches: usize,
}

/// Trains a metric head on labeled pairs. Each batch of `batch_size` pairs
/// becomes a set of distinct shots with positive relations from the
/// positive pairs; hard triplets are mined on the current embeddings and the
/// loss is taken over their anchor-positive and anchor-negative pairs.
pub fn train_metric_head(data: &PairDataset, config: &MetricConfig) -> Result<(MetricHead, MetricTrainLog)> {
    config.train.validate()?;
    if data.pairs.is_empty() {
        return Err(Error::Validation("no training pairs".into()));
    }
    if !data.pairs.iter().any(|p| p.2) {
        return Err(Error::Validation("no positive training pairs".into()));
    }
    let cfg = &config.train;
    let mut head = MetricHead::new(data.features.ncols(), config.hidden, config.output_dim, cfg.seed)?;
    let mut opt = Adam::new(head.mlp.param_count(), cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.pairs.len()).collect();
    let mut log = MetricTrainLog::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut used) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let members: Vec<usize> = batch
                .iter()
                .flat_map(|&k| [data.pairs[k].0, data.pairs[k].1])
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let local = |row: usize| members.binary_search(&row).expect("member");
            let labels = PairLabels::new(
                members.len(),
                batch
                    .iter()
                    .filter(|&&k| data.pairs[k].2)
                    .map(|&k| (local(data.pairs[k].0), local(data.pairs[k].1))),
            )?;
            if labels.positives.is_empty() {
                log.skipped_batches += 1;
                continue;
            }
            let x = data.features.select(Axis(0), &members);
            let (emb, tape) = head.mlp.forward_tape(x.view())?;
            let triplets = mine_hard_triplets(emb.view(), &labels)?;
            if triplets.is_empty() {
                log.skipped_batches += 1;
                continue;
            }
            let (loss, d_emb) = ntxent_loss(emb.view(), &PairTuples::from_triplets(&triplets), cfg.temperature)?;
            let grads = head.mlp.backward(&tape, d_emb);
            opt.step(head.mlp.tensors_mut(), tensors(&grads))?;
            total += loss;
            used += 1;
        }
        log.epoch_loss.push(if used == 0 { 0.0 } else { total / used as f64 });
    }
    Ok((head, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Two clusters along one direction at different norms, so raw cosine
    /// cannot tell them apart; pairs within a cluster are positive.
    fn two_clusters(n: usize, dim: usize, seed: u64) -> PairDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let features = Array2::from_shape_fn((n, dim), |(i, j)| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let scale = if i % 2 == 0 { 1.0 } else { 3.0 };
            scale * c[j] + 0.3 * noise
        });
        let pairs = (0..4 * n)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n);
                while j == i {
                    j = rng.random_range(0..n);
                }
                (i, j, i % 2 == j % 2)
            })
            .collect();
        PairDataset {
            items: (0..n as u32).map(|i| ("m".to_string(), i)).collect(),
            features,
            pairs,
        }
    }

    fn small_config(epochs: usize) -> MetricConfig {
        MetricConfig {
            hidden: 16,
            output_dim: 8,
            train: TrainConfig {
                learning_rate: 3e-3,
                weight_decay: 1e-4,
                temperature: 0.1,
                batch_size: 64,
                epochs,
                seed: 3,
            },
        }
    }

    fn cos(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
        a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
    }

    fn ordered_fraction(emb: &Array2<f64>) -> f64 {
        let (mut good, mut total) = (0, 0);
        for i in 0..80 {
            for j in (i + 1)..80 {
                for k in 0..80 {
                    if k != i && k % 2 != i % 2 && j % 2 == i % 2 {
                        total += 1;
                        if cos(emb.row(i), emb.row(j)) > cos(emb.row(i), emb.row(k)) {
                            good += 1;
                        }
                    }
                }
            }
        }
        good as f64 / total as f64
    }

    #[test]
    fn separates_clusters() {
        let data = two_clusters(80, 6, 1);
        let (head, log) = train_metric_head(&data, &small_config(150)).unwrap();
        assert_eq!(log.epoch_loss.len(), 150);
        let emb = head.embed_batch(data.features.view()).unwrap();
        let before = ordered_fraction(&data.features);
        let after = ordered_fraction(&emb);
        assert!(before < 0.7, "{before}");
        assert!(after >= 0.95, "{before} -> {after}");
    }

    #[test]
    fn loss_falls_early() {
        let data = two_clusters(80, 6, 2);
        let (_, log) = train_metric_head(&data, &small_config(10)).unwrap();
        assert!(log.epoch_loss[9] < log.epoch_loss[0], "{:?}", log.epoch_loss);
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let data = two_clusters(10, 4, 3);
        let (head, _) = train_metric_head(&data, &small_config(0)).unwrap();
        assert_eq!(head, MetricHead::new(4, 16, 8, 3).unwrap());
    }

    #[test]
    fn empty_pairs_rejected() {
        let mut data = two_clusters(10, 4, 3);
        data.pairs.clear();
        assert!(train_metric_head(&data, &small_config(1)).is_err());
    }

    #[test]
    fn task_defaults() {
        let f = MetricConfig::frame(0);
        assert_eq!((f.hidden, f.output_dim, f.train.epochs, f.train.batch_size), (128, 1024, 300, 256));
        let m = MetricConfig::motion(0);
        assert_eq!((m.hidden, m.train.epochs), (256, 100));
        assert_eq!(m.train.temperature, 1.3412e-2);
    }

    #[test]
    fn transformed_pack_renamed() {
        let head = MetricHead::new(3, 4, 5, 0).unwrap();
        let pack = FeaturePack::new("m", "clip", 3, [(1, vec![1.0, 0.0, 0.5])].into_iter().collect()).unwrap();
        let out = head.transform_pack(&pack).unwrap();
        assert_eq!(out.encoder_name, "clip.metric");
        assert_eq!(out.dim, 5);
        assert_eq!(out.get(1).unwrap().len(), 5);
    }
}
