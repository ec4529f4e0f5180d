mod common;

use std::process::Output;

use common::{env, matchcut, ok, path, read, SHOTS};

#[test]
fn dedup_removes_the_copy_and_is_stable() {
    let e = env();
    let (a, b) = (path(&e, "a.json"), path(&e, "b.json"));
    ok(&e, &["dedup", "--movie", "tt0000", "--out", &a]);
    ok(&e, &["dedup", "--movie", "tt0000", "--threshold", "0.8", "--out", &b]);
    assert_eq!(read(&a), read(&b));
    let v: serde_json::Value = serde_json::from_slice(&read(&a)).unwrap();
    assert_eq!(v["removed"], serde_json::json!([2]));
    assert_eq!(v["kept"].as_array().unwrap().len(), SHOTS as usize - 1);
    assert_eq!(v["threshold"], 0.8);
}

#[test]
fn topk_writes_ranked_jsonl() {
    let e = env();
    let a = path(&e, "a.jsonl");
    ok(&e, &["topk", "--movie", "tt0001", "--sim", "instance_iou", "--k", "10", "--out", &a]);
    let text = String::from_utf8(read(&a)).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 10);
    for (r, row) in rows.iter().enumerate() {
        assert_eq!(row["rank"], r + 1);
        assert!(row["shot_i"].as_u64() < row["shot_j"].as_u64());
        assert_ne!(row["shot_i"], 2);
        assert_ne!(row["shot_j"], 2);
    }
    let scores: Vec<f64> = rows.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    let b = path(&e, "b.jsonl");
    ok(&e, &["topk", "--movie", "tt0001", "--sim", "h3", "--k", "10", "--out", &b]);
    assert_eq!(read(&a), read(&b));
}

#[test]
fn topk_union_appends_new_pairs() {
    let e = env();
    let (a, u) = (path(&e, "a.jsonl"), path(&e, "u.jsonl"));
    ok(&e, &["topk", "--movie", "tt0002", "--sim", "h2", "--k", "8", "--out", &a]);
    ok(&e, &["topk", "--movie", "tt0002", "--sim", "h2", "--k", "8", "--union-with", "h1", "--out", &u]);
    let base = String::from_utf8(read(&a)).unwrap();
    let union = String::from_utf8(read(&u)).unwrap();
    assert!(union.starts_with(&base));
    let n = union.lines().count();
    assert!((8..=16).contains(&n), "{n}");
}

#[test]
fn index_and_query_are_deterministic() {
    let e = env();
    let (i1, i2) = (path(&e, "1.idx"), path(&e, "2.idx"));
    ok(&e, &["index", "--encoder", "clip", "--seed", "7", "--out", &i1]);
    ok(&e, &["index", "--encoder", "clip", "--seed", "7", "--out", &i2]);
    assert_eq!(read(&i1), read(&i2));
    let (q1, q2) = (path(&e, "1.jsonl"), path(&e, "2.jsonl"));
    ok(&e, &["query", "--index", &i1, "--k", "20", "--out", &q1]);
    ok(&e, &["query", "--index", &i2, "--k", "20", "--out", &q2]);
    assert_eq!(read(&q1), read(&q2));
    assert_eq!(String::from_utf8(read(&q1)).unwrap().lines().count(), 20);

    let (x, q3) = (path(&e, "x.idx"), path(&e, "3.jsonl"));
    ok(&e, &["index", "--encoder", "clip", "--exhaustive", "--out", &x]);
    ok(&e, &["query", "--index", &x, "--k", "20", "--intra-movie", "--out", &q3]);
    let rows: Vec<serde_json::Value> =
        String::from_utf8(read(&q3)).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(rows.iter().all(|r| r.get("movie_j").is_none()));
}

#[test]
fn training_is_byte_identical_and_models_score_pairs() {
    let e = env();
    let (c1, c2) = (path(&e, "c1.bin"), path(&e, "c2.bin"));
    let classifier = ["train-classifier", "--task", "frame", "--encoder", "clip", "--kind", "mlp-s", "--epochs", "5"];
    ok(&e, &[&classifier[..], &["--seed", "3", "--out", &c1]].concat());
    ok(&e, &[&classifier[..], &["--seed", "3", "--out", &c2]].concat());
    assert_eq!(read(&c1), read(&c2));

    let (m1, m2) = (path(&e, "m1.bin"), path(&e, "m2.bin"));
    let metric = [
        "train-metric", "--task", "frame", "--encoder", "clip", "--hidden", "8", "--output-dim", "8", "--metric-epochs", "3",
    ];
    ok(&e, &[&metric[..], &["--out", &m1]].concat());
    ok(&e, &[&metric[..], &["--out", &m2]].concat());
    assert_eq!(read(&m1), read(&m2));

    for model in [&c1, &m1] {
        let (t1, t2) = (path(&e, "t1.jsonl"), path(&e, "t2.jsonl"));
        for t in [&t1, &t2] {
            ok(&e, &["topk", "--movie", "tt0003", "--sim", "learned", "--model", model, "--k", "6", "--out", t]);
        }
        assert_eq!(read(&t1), read(&t2));
        assert_eq!(String::from_utf8(read(&t1)).unwrap().lines().count(), 6);
    }
    let idx = path(&e, "metric.idx");
    ok(&e, &["index", "--encoder", "clip", "--model", &m1, "--exhaustive", "--out", &idx]);
}

#[test]
fn eval_and_report() {
    let e = env();
    let (h, lr, merged) = (path(&e, "h.json"), path(&e, "lr.json"), path(&e, "all.json"));
    let out = ok(&e, &["eval", "--task", "frame", "--method", "cosine", "--encoder", "clip", "--out", &h]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("cosine_features/clip"));
    let v: serde_json::Value = serde_json::from_slice(&read(&h)).unwrap();
    assert!(v[0]["ap_val_std"].is_null());
    for key in ["task", "method", "ap_val_mean", "ap_val_std", "ap_val_per_seed", "ap_test"] {
        assert!(v[0].get(key).is_some(), "{key}");
    }

    ok(&e, &["eval", "--task", "frame", "--method", "lr", "--encoder", "clip", "--aggregator", "diff", "--out", &lr]);
    let again = path(&e, "lr2.json");
    ok(&e, &["eval", "--task", "frame", "--method", "lr", "--encoder", "clip", "--aggregator", "diff", "--out", &again]);
    assert_eq!(read(&lr), read(&again));
    let v: serde_json::Value = serde_json::from_slice(&read(&lr)).unwrap();
    assert_eq!(v[0]["ap_val_per_seed"].as_array().unwrap().len(), 5);

    let out = ok(&e, &["report", &h, &lr, "--out", &merged]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 3);
    let all: serde_json::Value = serde_json::from_slice(&read(&merged)).unwrap();
    assert_eq!(all.as_array().unwrap().len(), 2);
}

#[test]
fn selfcheck_passes() {
    let e = env();
    let out = ok(&e, &["selfcheck"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("checks passed"));
}

fn error_of(out: &Output) -> serde_json::Value {
    serde_json::from_slice(out.stderr.trim_ascii()).unwrap()
}

#[test]
fn failures_exit_with_kind_codes() {
    let e = env();
    let o = path(&e, "x");
    let bad_k = matchcut(&e, &["topk", "--movie", "tt0000", "--sim", "h1", "--k", "0", "--out", &o]);
    assert_eq!(bad_k.status.code(), Some(2));
    assert_eq!(error_of(&bad_k)["error"], "invalid_argument");

    let unknown = matchcut(&e, &["topk", "--movie", "tt0000", "--sim", "nope", "--out", &o]);
    assert_eq!(unknown.status.code(), Some(2));

    let missing = matchcut(&e, &["dedup", "--movie", "absent", "--out", &o]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(error_of(&missing)["message"].as_str().unwrap().contains("absent"));

    let no_features = matchcut(&e, &["topk", "--movie", "tt0000", "--sim", "cosine", "--encoder", "swin", "--out", &o]);
    assert_eq!(no_features.status.code(), Some(3));

    let bad_flag = matchcut(&e, &["topk", "--bogus"]);
    assert_eq!(bad_flag.status.code(), Some(2));
}
