use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{add_random_negatives, evaluate_scores, split_movies, Split, SplitAssignment};
use crate::datastore::{FeaturePack, LabeledPair, MoviePack, Task};
use crate::dedup::cosine_unchecked;
use crate::error::{Error, Result};
use crate::learning::{
    pair_features, train_classifier, train_metric_head, Aggregator, ClassifierKind, MetricConfig, MetricHead,
    PairClassifier, PairDataset, TrainConfig,
};
use crate::scoring::{score_pair, SimilarityFunction};

#[derive(Debug, Clone)]
pub enum Method {
    /// A fixed similarity function; `encoder` is needed for feature cosine.
    Heuristic {
        function: SimilarityFunction,
        encoder: Option<String>,
    },
    Classifier {
        kind: ClassifierKind,
        aggregator: Aggregator,
        encoder: String,
    },
    /// Cosine similarity of metric-head embeddings.
    Metric { encoder: String },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Heuristic { function, encoder: Some(e) } => format!("{}/{e}", function.name()),
            Method::Heuristic { function, encoder: None } => function.name().to_string(),
            Method::Classifier {
                kind,
                aggregator,
                encoder,
            } => format!("{kind}-{aggregator}/{encoder}"),
            Method::Metric { encoder } => format!("metric/{encoder}"),
        }
    }

    fn encoder(&self) -> Option<&str> {
        match self {
            Method::Heuristic { encoder, .. } => encoder.as_deref(),
            Method::Classifier { encoder, .. } | Method::Metric { encoder } => Some(encoder),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub ratios: [u32; 3],
    /// Seeds the movie split and random-negative sampling.
    pub split_seed: u64,
    /// Random negatives added per movie; `None` disables augmentation.
    pub random_negatives: Option<usize>,
    /// Overrides the classifier defaults; the seed field is replaced per run.
    pub classifier_train: Option<TrainConfig>,
    /// Overrides the task's metric defaults; the seed field is replaced per run.
    pub metric: Option<MetricConfig>,
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            seeds: (0..5).collect(),
            ratios: [60, 20, 20],
            split_seed: 0,
            random_negatives: Some(50),
            classifier_train: None,
            metric: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub task: Task,
    pub method: String,
    pub ap_val_mean: f64,
    /// Population std over seeds; absent for untrained methods.
    pub ap_val_std: Option<f64>,
    pub ap_val_per_seed: Vec<f64>,
    pub ap_test: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_seed: Option<u64>,
    /// Set when a scored split had constant scores.
    pub degenerate: bool,
    pub val_pairs: usize,
    pub test_pairs: usize,
}

enum Trained {
    Classifier(PairClassifier),
    Metric(MetricHead),
}

impl Trained {
    fn score(&self, data: &PairDataset) -> Result<Vec<f64>> {
        match self {
            Trained::Classifier(c) => {
                let x = pair_features(data, c.aggregator)?;
                x.rows()
                    .into_iter()
                    .map(|row| c.model.predict(row.as_slice().expect("standard layout")))
                    .collect()
            }
            Trained::Metric(head) => {
                let emb = head.embed_batch(data.features.view())?;
                Ok(data
                    .pairs
                    .iter()
                    .map(|&(i, j, _)| {
                        let a: Vec<f32> = emb.row(i).iter().map(|&v| v as f32).collect();
                        let b: Vec<f32> = emb.row(j).iter().map(|&v| v as f32).collect();
                        cosine_unchecked(&a, &b)
                    })
                    .collect())
            }
        }
    }
}

fn labels_of(pairs: &[LabeledPair]) -> Vec<bool> {
    pairs.iter().map(|p| p.majority).collect()
}

fn check_split(name: &str, pairs: &[LabeledPair]) -> Result<()> {
    if !pairs.iter().any(|p| p.majority) {
        return Err(Error::Validation(format!("{name} split has no positive pairs ({} pairs)", pairs.len())));
    }
    Ok(())
}

fn heuristic_scores(
    function: &SimilarityFunction,
    encoder: Option<&str>,
    packs: &BTreeMap<&str, &MoviePack>,
    pairs: &[LabeledPair],
) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|p| {
            let pack = packs[p.movie_id.as_str()];
            let a = function.representation(pack, encoder, p.shot_i)?;
            let b = function.representation(pack, encoder, p.shot_j)?;
            score_pair(function, a, b)
        })
        .collect()
}

/// Shots per movie that carry the representation `method` needs.
fn scorable_shots(method: &Method, packs: &[MoviePack]) -> Result<BTreeMap<String, Vec<u32>>> {
    let mut out = BTreeMap::new();
    for pack in packs {
        let shots = match method {
            Method::Heuristic { function, encoder } => pack
                .shot_indices()
                .into_iter()
                .filter(|&s| function.representation(pack, encoder.as_deref(), s).is_ok())
                .collect(),
            _ => {
                let encoder = method.encoder().expect("learned methods name an encoder");
                pack.feature(encoder)?.vectors.keys().copied().collect()
            }
        };
        out.insert(pack.movie_id.clone(), shots);
    }
    Ok(out)
}

fn population_std(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Splits movies, trains one model per seed on the train split, scores the
/// validation split, and evaluates the best-validation model on test.
pub fn run_experiment(
    method: &Method,
    packs: &[MoviePack],
    labels: &[LabeledPair],
    config: &ExperimentConfig,
) -> Result<(ExperimentResult, SplitAssignment)> {
    if config.seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let by_id: BTreeMap<&str, &MoviePack> = packs.iter().map(|p| (p.movie_id.as_str(), p)).collect();
    if by_id.len() != packs.len() {
        return Err(Error::Validation("duplicate movie packs".into()));
    }
    let ids: Vec<String> = by_id.keys().map(|s| s.to_string()).collect();
    let split = split_movies(&ids, config.ratios, config.split_seed)?;

    let mut task_labels: Vec<LabeledPair> = labels.iter().filter(|l| l.task == config.task).cloned().collect();
    if let Some(m) = task_labels.iter().find(|l| !by_id.contains_key(l.movie_id.as_str())) {
        return Err(Error::Validation(format!("labels reference unknown movie {}", m.movie_id)));
    }
    if let Some(per_title) = config.random_negatives {
        let shots = scorable_shots(method, packs)?;
        task_labels = add_random_negatives(&task_labels, &shots, config.task, per_title, config.split_seed);
    }
    let mut parts: [Vec<LabeledPair>; 3] = Default::default();
    for l in task_labels {
        let slot = match split.side_of(&l.movie_id).expect("every movie is assigned") {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        };
        parts[slot].push(l);
    }
    let [train, val, test] = parts;
    check_split("validation", &val)?;
    check_split("test", &test)?;
    let (val_y, test_y) = (labels_of(&val), labels_of(&test));

    let base = |ap_val_per_seed: Vec<f64>, ap_val_std, ap_test, best_seed, degenerate| ExperimentResult {
        task: config.task,
        method: method.name(),
        ap_val_mean: ap_val_per_seed.iter().sum::<f64>() / ap_val_per_seed.len() as f64,
        ap_val_std,
        ap_val_per_seed,
        ap_test,
        best_seed,
        degenerate,
        val_pairs: val.len(),
        test_pairs: test.len(),
    };

    if let Method::Heuristic { function, encoder } = method {
        let (ap_val, dv) = evaluate_scores(&val_y, &heuristic_scores(function, encoder.as_deref(), &by_id, &val)?)?;
        let (ap_test, dt) = evaluate_scores(&test_y, &heuristic_scores(function, encoder.as_deref(), &by_id, &test)?)?;
        return Ok((base(vec![ap_val], None, ap_test, None, dv || dt), split));
    }

    check_split("train", &train)?;
    let encoder = method.encoder().expect("learned methods name an encoder");
    let features: Vec<&FeaturePack> = packs.iter().map(|p| p.feature(encoder)).collect::<Result<_>>()?;
    let train_data = PairDataset::from_labels(&features, &train)?;
    let val_data = PairDataset::from_labels(&features, &val)?;
    let test_data = PairDataset::from_labels(&features, &test)?;

    let runs: Vec<(f64, bool, Trained)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let model = match method {
                Method::Classifier { kind, aggregator, .. } => {
                    let train_config = TrainConfig {
                        seed,
                        ..config.classifier_train.unwrap_or_else(|| TrainConfig::classifier(seed))
                    };
                    Trained::Classifier(train_classifier(&train_data, *kind, *aggregator, &train_config)?)
                }
                Method::Metric { .. } => {
                    let mut metric = config.metric.unwrap_or_else(|| MetricConfig::for_task(config.task, seed));
                    metric.train.seed = seed;
                    Trained::Metric(train_metric_head(&train_data, &metric)?.0)
                }
                Method::Heuristic { .. } => unreachable!("handled above"),
            };
            let (ap, degenerate) = evaluate_scores(&val_y, &model.score(&val_data)?)?;
            Ok((ap, degenerate, model))
        })
        .collect::<Result<_>>()?;

    let aps: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let best = (0..runs.len()).fold(0, |b, i| if aps[i] > aps[b] { i } else { b });
    let (ap_test, test_degenerate) = evaluate_scores(&test_y, &runs[best].2.score(&test_data)?)?;
    let degenerate = test_degenerate || runs.iter().any(|r| r.1);
    let std = population_std(&aps);
    Ok((base(aps, Some(std), ap_test, Some(config.seeds[best]), degenerate), split))
}

pub fn write_report(path: &Path, results: &[ExperimentResult]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(results).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Fixed-width table of validation and test AP, one row per result.
pub fn render_table(results: &[ExperimentResult]) -> String {
    let width = results.iter().map(|r| r.method.len()).max().unwrap_or(0).max("method".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<6}  {:<width$}  {:>17}  {:>7}", "task", "method", "AP_val", "AP_test");
    for r in results {
        let val = match r.ap_val_std {
            Some(std) => format!("{:.3} ± {:.3}", r.ap_val_mean, std),
            None => format!("{:.3}", r.ap_val_mean),
        };
        let flag = if r.degenerate { "  (constant scores)" } else { "" };
        let _ = writeln!(
            out,
            "{:<6}  {:<width$}  {:>17}  {:>7.3}{flag}",
            r.task.to_string(),
            r.method,
            val,
            r.ap_test
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{FaceCount, PairSource, ShotRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Movies whose shots carry a 4-d feature; shots with the same parity
    /// share a direction and positive pairs are same-parity pairs.
    fn fixture(movies: usize, shots: u32) -> (Vec<MoviePack>, Vec<LabeledPair>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut packs = Vec::new();
        let mut labels = Vec::new();
        for m in 0..movies {
            let id = format!("m{m:02}");
            let records = (1..=shots)
                .map(|s| ShotRecord::new(id.clone(), s, u64::from(s) * 10, u64::from(s) * 10 + 10, 24.0).unwrap())
                .collect();
            let mut pack = MoviePack::new(id.clone(), 24.0, records).unwrap();
            let vectors = (1..=shots)
                .map(|s| {
                    let base = if s % 2 == 0 { [1.0, 0.2, 0.0, 0.0] } else { [0.0, 0.0, 1.0, 0.2] };
                    (s, base.iter().map(|b| b + rng.random_range(-0.6f32..0.6)).collect())
                })
                .collect();
            pack.insert_features(FeaturePack::new(id.clone(), "clip", 4, vectors).unwrap()).unwrap();
            pack.faces = Some((1..=shots).map(|s| (s, FaceCount { shot_index: s, count: 1 })).collect());
            packs.push(pack);
            for i in 1..=shots {
                for j in (i + 1..=shots).step_by(3) {
                    let positive = i % 2 == j % 2;
                    labels.push(LabeledPair {
                        movie_id: id.clone(),
                        shot_i: i,
                        shot_j: j,
                        task: Task::Frame,
                        votes: vec![positive],
                        majority: positive,
                        source: PairSource::H2,
                    });
                }
            }
        }
        (packs, labels)
    }

    fn config() -> ExperimentConfig {
        ExperimentConfig {
            random_negatives: None,
            ..ExperimentConfig::new(Task::Frame)
        }
    }

    #[test]
    fn heuristic_reports_single_value() {
        let (packs, labels) = fixture(10, 12);
        let method = Method::Heuristic {
            function: SimilarityFunction::CosineFeatures,
            encoder: Some("clip".into()),
        };
        let (r, split) = run_experiment(&method, &packs, &labels, &config()).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (6, 2, 2));
        assert_eq!(r.ap_val_per_seed.len(), 1);
        assert!(r.ap_val_std.is_none() && r.best_seed.is_none() && !r.degenerate);
        assert!(r.ap_test > 0.7, "{r:?}");
    }

    #[test]
    fn constant_scores_report_prevalence() {
        let (packs, labels) = fixture(10, 12);
        let method = Method::Heuristic {
            function: SimilarityFunction::FaceCountEqual,
            encoder: None,
        };
        let (r, split) = run_experiment(&method, &packs, &labels, &config()).unwrap();
        let test: Vec<&LabeledPair> = labels.iter().filter(|l| split.test.contains(&l.movie_id)).collect();
        let prevalence = test.iter().filter(|l| l.majority).count() as f64 / test.len() as f64;
        assert!(r.degenerate);
        assert_eq!(r.ap_test, prevalence);
        assert!(render_table(&[r]).contains("constant scores"));
    }

    #[test]
    fn logistic_seeds() {
        let (packs, labels) = fixture(10, 12);
        let method = Method::Classifier {
            kind: ClassifierKind::Logistic,
            aggregator: Aggregator::Diff,
            encoder: "clip".into(),
        };
        let (r, _) = run_experiment(&method, &packs, &labels, &config()).unwrap();
        assert_eq!(r.ap_val_per_seed.len(), 5);
        let std = r.ap_val_std.unwrap();
        let (lo, hi) = r.ap_val_per_seed.iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(std >= 0.0 && lo <= r.ap_val_mean && r.ap_val_mean <= hi);
        assert_eq!(r.best_seed, Some(0));
        assert_eq!(r.method, "lr-diff/clip");
    }

    #[test]
    fn mlp_and_metric_runs_are_deterministic() {
        let (packs, labels) = fixture(6, 10);
        let mut cfg = config();
        cfg.seeds = vec![3, 4];
        cfg.classifier_train = Some(TrainConfig {
            epochs: 5,
            ..TrainConfig::classifier(0)
        });
        let metric = MetricConfig::frame(0);
        cfg.metric = Some(MetricConfig {
            hidden: 8,
            output_dim: 8,
            train: TrainConfig {
                epochs: 3,
                batch_size: 32,
                ..metric.train
            },
        });
        for method in [
            Method::Classifier {
                kind: "mlp-s".parse().unwrap(),
                aggregator: Aggregator::Cat,
                encoder: "clip".into(),
            },
            Method::Metric { encoder: "clip".into() },
        ] {
            let a = run_experiment(&method, &packs, &labels, &cfg).unwrap().0;
            let b = run_experiment(&method, &packs, &labels, &cfg).unwrap().0;
            assert_eq!(a, b);
            assert_eq!(a.ap_val_per_seed.len(), 2);
            assert!(matches!(a.best_seed, Some(3 | 4)));
        }
    }

    #[test]
    fn random_negatives_are_added_per_movie() {
        let (packs, labels) = fixture(10, 12);
        let method = Method::Heuristic {
            function: SimilarityFunction::CosineFeatures,
            encoder: Some("clip".into()),
        };
        let plain = run_experiment(&method, &packs, &labels, &config()).unwrap().0;
        let mut cfg = config();
        cfg.random_negatives = Some(5);
        let augmented = run_experiment(&method, &packs, &labels, &cfg).unwrap().0;
        assert_eq!(augmented.val_pairs, plain.val_pairs + 10);
        assert_eq!(augmented.test_pairs, plain.test_pairs + 10);
    }

    #[test]
    fn empty_split_is_an_error() {
        let (packs, labels) = fixture(10, 12);
        let train_only: Vec<LabeledPair> = labels.into_iter().filter(|l| l.movie_id == "m00").collect();
        let method = Method::Heuristic {
            function: SimilarityFunction::CosineFeatures,
            encoder: Some("clip".into()),
        };
        assert!(run_experiment(&method, &packs, &train_only, &config()).is_err());
        assert!(run_experiment(&method, &packs[..2], &[], &config()).is_err());
    }

    #[test]
    fn report_json_schema() {
        let r = ExperimentResult {
            task: Task::Motion,
            method: "metric/r2p1d".into(),
            ap_val_mean: 0.2,
            ap_val_std: Some(0.01),
            ap_val_per_seed: vec![0.19, 0.21],
            ap_test: 0.22,
            best_seed: Some(1),
            degenerate: false,
            val_pairs: 10,
            test_pairs: 12,
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["task", "method", "ap_val_mean", "ap_val_std", "ap_val_per_seed", "ap_test"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["task"], "motion");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_report(&path, &[r.clone()]).unwrap();
        let back: Vec<ExperimentResult> = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!(back, vec![r]);
    }
}
