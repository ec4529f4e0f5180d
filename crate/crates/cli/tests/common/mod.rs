#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use matchcut::datastore::{
    write_labels, write_movie_pack, BitMask, FaceCount, FeaturePack, LabeledPair, MaskSet, MoviePack, PairSource,
    ShotRecord, Task,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MOVIES: usize = 10;
pub const SHOTS: u32 = 14;

/// Ten movies whose `clip` vectors cluster by shot parity; pairs with
/// `i + j` divisible by 4 are positive. Shot 2 duplicates shot 1 in the
/// dedup pack.
pub fn write_fixture(root: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut labels = Vec::new();
    for m in 0..MOVIES {
        let id = format!("tt{m:04}");
        let shots = (1..=SHOTS)
            .map(|s| ShotRecord::new(id.clone(), s, u64::from(s) * 24, u64::from(s) * 24 + 24, 24.0).unwrap())
            .collect();
        let mut pack = MoviePack::new(id.clone(), 24.0, shots).unwrap();
        let clip = (1..=SHOTS)
            .map(|s| {
                let centre = if s % 2 == 0 { [1.0f32, 0.3, 0.0, 0.0, 0.2, 0.0] } else { [0.0, 0.0, 1.0, 0.3, 0.0, 0.2] };
                (s, centre.iter().map(|c| c + rng.random_range(-0.5f32..0.5)).collect())
            })
            .collect();
        pack.insert_features(FeaturePack::new(id.clone(), "clip", 6, clip).unwrap()).unwrap();
        let mut dedup: std::collections::BTreeMap<u32, Vec<f32>> = (1..=SHOTS)
            .map(|s| (s, (0..SHOTS).map(|d| if d + 1 == s { 1.0 } else { 0.0 }).collect()))
            .collect();
        dedup.insert(2, dedup[&1].clone());
        pack.insert_features(FeaturePack::new(id.clone(), "dedup", SHOTS as usize, dedup).unwrap()).unwrap();
        pack.faces = Some((1..=SHOTS).map(|s| (s, FaceCount { shot_index: s, count: s % 3 })).collect());
        pack.masks = Some(
            (1..=SHOTS)
                .map(|s| {
                    let x = s % 4;
                    let px = [(x, 1), (x + 1, 1), (x, 2), (x + 1, 2)];
                    let set = MaskSet::new(id.clone(), s, 8, 8, vec![BitMask::from_pixels(8, 8, &px).unwrap()]).unwrap();
                    (s, set)
                })
                .collect(),
        );
        write_movie_pack(&pack, &root.join(&id)).unwrap();
        for i in 1..=SHOTS {
            for j in i + 1..=SHOTS {
                let positive = (i + j) % 4 == 0;
                labels.push(LabeledPair {
                    movie_id: id.clone(),
                    shot_i: i,
                    shot_j: j,
                    task: Task::Frame,
                    votes: vec![positive, positive, positive],
                    majority: positive,
                    source: PairSource::H2,
                });
            }
        }
    }
    write_labels(&root.join("labels.jsonl"), &labels).unwrap();
}

pub struct Env {
    _dir: tempfile::TempDir,
    pub root: PathBuf,
    pub out: PathBuf,
}

pub fn env() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let out = dir.path().join("out");
    std::fs::create_dir_all(&root).unwrap();
    std::fs::create_dir_all(&out).unwrap();
    write_fixture(&root);
    Env { _dir: dir, root, out }
}

pub fn matchcut(env: &Env, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matchcut"))
        .env("MATCHCUT_DATA_ROOT", &env.root)
        .args(args)
        .output()
        .unwrap()
}

pub fn ok(env: &Env, args: &[&str]) -> Output {
    let out = matchcut(env, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn path(env: &Env, name: &str) -> String {
    env.out.join(name).to_str().unwrap().to_string()
}

pub fn read(p: &str) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

