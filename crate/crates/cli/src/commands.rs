use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use matchcut::datastore::{load_labels, load_movie_pack, load_packs_root, LabeledPair, MoviePack, Task, DEDUP_ENCODER};
use matchcut::dedup::{deduplicate, keep_all, DedupResult};
use matchcut::evaluation::{
    add_random_negatives, render_table, run_experiment, split_movies, write_report, ExperimentConfig,
    ExperimentResult, Method,
};
use matchcut::learning::{
    train_classifier, train_metric_head, Aggregator, Checkpoint, ClassifierKind, MetricConfig, Model, PairDataset,
    TrainConfig,
};
use matchcut::ranking::{
    build_index_with, rank_movie, top_k_ann, union_with, AnnIndex, AnnMode, AnnParams, HnswParams, RankedList,
};
use matchcut::scoring::SimilarityFunction;
use matchcut::{Error, Result};

use crate::{Cli, Command, DedupArgs, MetricArgs, PackArg, TrainData};

const SPLIT_RATIOS: [u32; 3] = [60, 20, 20];

pub fn run(cli: Cli) -> Result<()> {
    let root = cli.data_root.as_deref();
    let seed = cli.seed;
    match cli.command {
        Command::Dedup { pack, threshold, out } => {
            let pack = load_pack(root, &pack)?;
            let result = deduplicate(pack.feature(DEDUP_ENCODER)?, &pack.shots, threshold)?;
            write_json(&out, &result)
        }
        Command::Topk {
            pack,
            sim,
            k,
            encoder,
            model,
            union_with: secondary,
            dedup,
            out,
        } => {
            let mut pack = load_pack(root, &pack)?;
            let kept = kept_shots(&pack, &dedup)?;
            let (function, enc) = resolve_function(&sim, encoder.clone(), model.as_deref(), &mut pack)?;
            let mut ranked = rank_movie(&pack, &kept, &function, enc.as_deref(), k)?;
            if let Some(name) = secondary {
                let (other, other_enc) = resolve_function(&name, encoder, None, &mut pack)?;
                let second = rank_movie(&pack, &kept, &other, other_enc.as_deref(), k)?;
                ranked = RankedList {
                    pairs: union_with(&ranked, &second),
                    k,
                };
            }
            ranked.write_jsonl(&out)
        }
        Command::Index {
            encoder,
            model,
            exhaustive,
            m,
            ef_construction,
            ef_search,
            dedup,
            out,
        } => {
            let mut packs = load_packs_root(&require_root(root)?)?;
            let kept: BTreeMap<String, BTreeSet<u32>> = packs
                .iter()
                .map(|p| Ok((p.movie_id.clone(), kept_shots(p, &dedup)?.kept)))
                .collect::<Result<_>>()?;
            let encoder = match model {
                Some(path) => {
                    let checkpoint = Checkpoint::load(&path)?;
                    let head = metric_head(&checkpoint)?;
                    let mut name = String::new();
                    for pack in &mut packs {
                        let transformed = head.transform_pack(pack.feature(&encoder)?)?;
                        name = transformed.encoder_name.clone();
                        pack.insert_features(transformed)?;
                    }
                    name
                }
                None => encoder,
            };
            let features = packs.iter().map(|p| p.feature(&encoder)).collect::<Result<Vec<_>>>()?;
            let params = AnnParams {
                mode: if exhaustive { AnnMode::Exhaustive } else { AnnMode::Hnsw },
                hnsw: HnswParams {
                    m,
                    ef_construction,
                    ef_search,
                    seed,
                },
            };
            let index = build_index_with(&features, |movie, shot| kept[movie].contains(&shot), params)?;
            index.save(&out)
        }
        Command::Query {
            index,
            k,
            intra_movie,
            include_self,
            out,
        } => {
            let index = AnnIndex::load(&index)?;
            top_k_ann(&index, k, !include_self, intra_movie)?.write_jsonl(&out)
        }
        Command::TrainClassifier {
            data,
            kind,
            aggregator,
            epochs,
            out,
        } => {
            let kind: ClassifierKind = kind.parse()?;
            let aggregator: Aggregator = aggregator.parse()?;
            let dataset = training_set(root, &data, seed)?;
            let mut config = TrainConfig::classifier(seed);
            if let Some(epochs) = epochs {
                config.epochs = epochs;
            }
            let model = train_classifier(&dataset, kind, aggregator, &config)?;
            Checkpoint {
                model: Model::Classifier(model),
                task: Some(data.task),
                encoder_name: Some(data.encoder.clone()),
                train: matches!(kind, ClassifierKind::Mlp(_)).then_some(config),
            }
            .save(&out)
        }
        Command::TrainMetric { data, metric, out } => {
            let dataset = training_set(root, &data, seed)?;
            let config = metric_config(data.task, seed, &metric);
            let (head, log) = train_metric_head(&dataset, &config)?;
            if let Some(loss) = log.epoch_loss.last() {
                eprintln!("final epoch loss {loss:.6}, skipped batches {}", log.skipped_batches);
            }
            Checkpoint {
                model: Model::Metric(head),
                task: Some(data.task),
                encoder_name: Some(data.encoder.clone()),
                train: Some(config.train),
            }
            .save(&out)
        }
        Command::Eval {
            task,
            labels,
            method,
            encoder,
            aggregator,
            runs,
            random_negatives,
            metric,
            out,
        } => {
            let root = require_root(root)?;
            let method = parse_method(&method, encoder, &aggregator)?;
            let packs = load_packs_root(&root)?;
            let pairs = load_task_labels(&root, labels.as_deref(), task, &packs)?;
            let config = ExperimentConfig {
                task,
                seeds: (seed..seed + runs).collect(),
                ratios: SPLIT_RATIOS,
                split_seed: seed,
                random_negatives: (random_negatives > 0).then_some(random_negatives),
                classifier_train: None,
                metric: Some(metric_config(task, seed, &metric)),
            };
            let (result, _) = run_experiment(&method, &packs, &pairs, &config)?;
            write_report(&out, std::slice::from_ref(&result))?;
            print!("{}", render_table(&[result]));
            Ok(())
        }
        Command::Report { inputs, out } => {
            let mut all: Vec<ExperimentResult> = Vec::new();
            for path in &inputs {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                let mut results: Vec<ExperimentResult> =
                    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
                all.append(&mut results);
            }
            if let Some(out) = out {
                write_report(&out, &all)?;
            }
            print!("{}", render_table(&all));
            Ok(())
        }
        Command::Selfcheck => {
            let checks = matchcut::selfcheck::run();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            if failed > 0 {
                return Err(Error::Internal(format!("{failed} of {} self-checks failed", checks.len())));
            }
            println!("{} checks passed", checks.len());
            Ok(())
        }
    }
}

fn require_root(root: Option<&Path>) -> Result<PathBuf> {
    root.map(Path::to_path_buf)
        .ok_or_else(|| Error::InvalidArgument("no data root: pass --data-root or set MATCHCUT_DATA_ROOT".into()))
}

fn load_pack(root: Option<&Path>, arg: &PackArg) -> Result<MoviePack> {
    let dir = match (&arg.pack, &arg.movie) {
        (Some(dir), _) => dir.clone(),
        (None, Some(movie)) => require_root(root)?.join(movie),
        (None, None) => return Err(Error::InvalidArgument("pass --pack or --movie".into())),
    };
    load_movie_pack(&dir)
}

fn kept_shots(pack: &MoviePack, args: &DedupArgs) -> Result<DedupResult> {
    if args.no_dedup {
        Ok(keep_all(&pack.movie_id, &pack.shots))
    } else {
        deduplicate(pack.feature(DEDUP_ENCODER)?, &pack.shots, args.threshold)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn metric_head(checkpoint: &Checkpoint) -> Result<&matchcut::learning::MetricHead> {
    match &checkpoint.model {
        Model::Metric(head) => Ok(head),
        Model::Classifier(_) => Err(Error::InvalidArgument("checkpoint holds a classifier, not a metric head".into())),
    }
}

/// Resolves a function name to a scorer. Metric checkpoints embed the
/// encoder's vectors into a new pack scored by cosine.
fn resolve_function(
    name: &str,
    encoder: Option<String>,
    model: Option<&Path>,
    pack: &mut MoviePack,
) -> Result<(SimilarityFunction, Option<String>)> {
    if name != "learned" {
        if model.is_some() {
            return Err(Error::InvalidArgument("--model applies only to --sim learned".into()));
        }
        return Ok((name.parse()?, encoder));
    }
    let path = model.ok_or_else(|| Error::InvalidArgument("--sim learned needs --model".into()))?;
    let checkpoint = Checkpoint::load(path)?;
    let encoder = encoder
        .or_else(|| checkpoint.encoder_name.clone())
        .ok_or_else(|| Error::InvalidArgument("--sim learned needs --encoder".into()))?;
    match checkpoint.model {
        Model::Classifier(classifier) => Ok((SimilarityFunction::Learned(Arc::new(classifier)), Some(encoder))),
        Model::Metric(head) => {
            let transformed = head.transform_pack(pack.feature(&encoder)?)?;
            let name = transformed.encoder_name.clone();
            pack.insert_features(transformed)?;
            Ok((SimilarityFunction::CosineFeatures, Some(name)))
        }
    }
}

fn parse_method(name: &str, encoder: Option<String>, aggregator: &str) -> Result<Method> {
    let need_encoder = || encoder.clone().ok_or_else(|| Error::InvalidArgument(format!("method {name} needs --encoder")));
    if name == "metric" {
        return Ok(Method::Metric { encoder: need_encoder()? });
    }
    if let Ok(kind) = name.parse::<ClassifierKind>() {
        return Ok(Method::Classifier {
            kind,
            aggregator: aggregator.parse()?,
            encoder: need_encoder()?,
        });
    }
    Ok(Method::Heuristic {
        function: name.parse()?,
        encoder,
    })
}

fn metric_config(task: Task, seed: u64, args: &MetricArgs) -> MetricConfig {
    let mut config = MetricConfig::for_task(task, seed);
    if let Some(h) = args.hidden {
        config.hidden = h;
    }
    if let Some(d) = args.output_dim {
        config.output_dim = d;
    }
    if let Some(b) = args.batch_size {
        config.train.batch_size = b;
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    config
}

fn load_task_labels(root: &Path, labels: Option<&Path>, task: Task, packs: &[MoviePack]) -> Result<Vec<LabeledPair>> {
    let path = labels.map(Path::to_path_buf).unwrap_or_else(|| root.join("labels.jsonl"));
    let known: BTreeSet<String> = packs.iter().map(|p| p.movie_id.clone()).collect();
    load_labels(&path, task, Some(&known))
}

/// Labels of the training-split movies, with random negatives when
/// configured, gathered into a feature dataset.
fn training_set(root: Option<&Path>, data: &TrainData, seed: u64) -> Result<PairDataset> {
    let root = require_root(root)?;
    let packs = load_packs_root(&root)?;
    let labels = load_task_labels(&root, data.labels.as_deref(), data.task, &packs)?;
    let ids: Vec<String> = packs.iter().map(|p| p.movie_id.clone()).collect();
    let split = split_movies(&ids, SPLIT_RATIOS, seed)?;
    let features = packs.iter().map(|p| p.feature(&data.encoder)).collect::<Result<Vec<_>>>()?;
    let labels = if data.random_negatives > 0 {
        let shots = features
            .iter()
            .map(|f| (f.movie_id.clone(), f.vectors.keys().copied().collect()))
            .collect();
        add_random_negatives(&labels, &shots, data.task, data.random_negatives, seed)
    } else {
        labels
    };
    let train: Vec<LabeledPair> = labels.into_iter().filter(|l| split.train.contains(&l.movie_id)).collect();
    PairDataset::from_labels(&features, &train)
}
