use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mask::{BitMask, MaskSet, MaskShotEntry, MasksFile};
use super::tensor::{read_tensor, write_tensor, TensorSidecar};
use super::{validate_encoder_name, FaceCount, FeaturePack, FlowSummary, MoviePack, ShotRecord};
use crate::error::{Error, Result};

const MANIFEST: &str = "manifest.json";
const FEATURES_DIR: &str = "features";
const MASKS: &str = "masks.json";
const FLOWS_BIN: &str = "flows.bin";
const FLOWS_JSON: &str = "flows.json";
const FACES: &str = "faces.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    movie_id: String,
    fps: f64,
    shots: Vec<ManifestShot>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestShot {
    shot_index: u32,
    start_frame: u64,
    end_frame: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FaceEntry {
    shot_index: u32,
    count: u32,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolves the row-to-shot mapping of a tensor file.
fn row_shots(pack: &MoviePack, meta: &TensorSidecar, what: &str) -> Result<Vec<u32>> {
    let rows = meta.shape.first().copied().unwrap_or(0);
    let indices = match &meta.shot_indices {
        Some(ix) => ix.clone(),
        None => pack.shot_indices(),
    };
    if indices.len() != rows {
        return Err(Error::Format(format!(
            "{what}: {rows} rows but {} shot indices",
            indices.len()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &s in &indices {
        if !pack.has_shot(s) {
            return Err(Error::Validation(format!(
                "{what}: shot_index {s} absent from manifest"
            )));
        }
        if !seen.insert(s) {
            return Err(Error::Validation(format!("{what}: shot_index {s} repeated")));
        }
    }
    Ok(indices)
}

fn load_features(dir: &Path, pack: &MoviePack) -> Result<Vec<FeaturePack>> {
    let features_dir = dir.join(FEATURES_DIR);
    if !features_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut sidecars: Vec<PathBuf> = fs::read_dir(&features_dir)
        .map_err(|e| Error::io(&features_dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(&features_dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    sidecars.sort();

    let mut packs = Vec::new();
    for sidecar in sidecars {
        let file_name = sidecar.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let encoder = file_name.trim_end_matches(".json").to_string();
        validate_encoder_name(&encoder)?;
        let bin = features_dir.join(format!("{encoder}.bin"));
        let (meta, values) = read_tensor(&bin, &sidecar)?;
        if meta.shape.len() != 2 {
            return Err(Error::Format(format!(
                "{}: feature tensors must be 2-D, got shape {:?}",
                sidecar.display(),
                meta.shape
            )));
        }
        let dim = meta.shape[1];
        let shots = row_shots(pack, &meta, &format!("features/{encoder}"))?;
        let vectors = shots
            .iter()
            .zip(values.chunks_exact(dim.max(1)))
            .map(|(&s, row)| (s, row.to_vec()))
            .collect();
        packs.push(FeaturePack::new(pack.movie_id.clone(), encoder, dim, vectors)?);
    }
    Ok(packs)
}

fn load_masks(path: &Path, pack: &MoviePack) -> Result<BTreeMap<u32, MaskSet>> {
    let file: MasksFile = read_json(path)?;
    let mut out = BTreeMap::new();
    for entry in file.shots {
        if !pack.has_shot(entry.shot_index) {
            return Err(Error::Validation(format!(
                "masks.json: shot_index {} absent from manifest",
                entry.shot_index
            )));
        }
        let instances = entry
            .instances
            .iter()
            .map(|rle| BitMask::from_rle(file.width, file.height, rle))
            .collect::<Result<Vec<_>>>()?;
        let set = MaskSet::new(
            pack.movie_id.clone(),
            entry.shot_index,
            file.width,
            file.height,
            instances,
        )?;
        if out.insert(entry.shot_index, set).is_some() {
            return Err(Error::Validation(format!(
                "masks.json: shot_index {} repeated",
                entry.shot_index
            )));
        }
    }
    Ok(out)
}

fn load_flows(dir: &Path, pack: &MoviePack) -> Result<BTreeMap<u32, FlowSummary>> {
    let sidecar = dir.join(FLOWS_JSON);
    let (meta, values) = read_tensor(&dir.join(FLOWS_BIN), &sidecar)?;
    let [_, h, w, c] = meta.shape[..] else {
        return Err(Error::Format(format!(
            "flows.json: expected shape [n, H, W, 2], got {:?}",
            meta.shape
        )));
    };
    if c != 2 || h == 0 || w == 0 {
        return Err(Error::Format(format!(
            "flows.json: expected shape [n, H, W, 2], got {:?}",
            meta.shape
        )));
    }
    let shots = row_shots(pack, &meta, "flows")?;
    shots
        .iter()
        .zip(values.chunks_exact(h * w * 2))
        .map(|(&s, field)| {
            FlowSummary::new(pack.movie_id.clone(), s, w as u32, h as u32, field.to_vec())
                .map(|f| (s, f))
        })
        .collect()
}

fn load_faces(path: &Path, pack: &MoviePack) -> Result<BTreeMap<u32, FaceCount>> {
    let entries: Vec<FaceEntry> = read_json(path)?;
    let mut out = BTreeMap::new();
    for e in entries {
        if !pack.has_shot(e.shot_index) {
            return Err(Error::Validation(format!(
                "faces.json: shot_index {} absent from manifest",
                e.shot_index
            )));
        }
        let face = FaceCount {
            shot_index: e.shot_index,
            count: e.count,
        };
        if out.insert(e.shot_index, face).is_some() {
            return Err(Error::Validation(format!(
                "faces.json: shot_index {} repeated",
                e.shot_index
            )));
        }
    }
    Ok(out)
}

/// Loads and validates a movie pack directory.
pub fn load_movie_pack(dir: &Path) -> Result<MoviePack> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::Format(format!("missing manifest in {}", dir.display())));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    let mut seen = std::collections::BTreeSet::new();
    let shots = manifest
        .shots
        .iter()
        .map(|s| {
            if !seen.insert(s.shot_index) {
                return Err(Error::Validation(format!(
                    "{}: shot_index {} repeated",
                    manifest.movie_id, s.shot_index
                )));
            }
            ShotRecord::new(
                manifest.movie_id.clone(),
                s.shot_index,
                s.start_frame,
                s.end_frame,
                manifest.fps,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    if shots.is_empty() {
        return Err(Error::Validation(format!("{}: manifest has no shots", manifest.movie_id)));
    }
    let mut pack = MoviePack::new(manifest.movie_id.clone(), manifest.fps, shots)?;

    for features in load_features(dir, &pack)? {
        pack.insert_features(features)?;
    }
    let masks_path = dir.join(MASKS);
    if masks_path.is_file() {
        pack.masks = Some(load_masks(&masks_path, &pack)?);
    }
    if dir.join(FLOWS_JSON).is_file() || dir.join(FLOWS_BIN).is_file() {
        pack.flows = Some(load_flows(dir, &pack)?);
    }
    let faces_path = dir.join(FACES);
    if faces_path.is_file() {
        pack.faces = Some(load_faces(&faces_path, &pack)?);
    }
    Ok(pack)
}

/// Loads every immediate subdirectory of `root` that holds a manifest,
/// in lexicographic directory order.
pub fn load_packs_root(root: &Path) -> Result<Vec<MoviePack>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format(format!("no movie packs under {}", root.display())));
    }
    dirs.iter().map(|d| load_movie_pack(d)).collect()
}

/// Writes a pack in the layout [`load_movie_pack`] reads.
pub fn write_movie_pack(pack: &MoviePack, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        movie_id: pack.movie_id.clone(),
        fps: pack.fps,
        shots: pack
            .shots
            .iter()
            .map(|s| ManifestShot {
                shot_index: s.shot_index,
                start_frame: s.start_frame,
                end_frame: s.end_frame,
            })
            .collect(),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;

    if !pack.features.is_empty() {
        let features_dir = dir.join(FEATURES_DIR);
        fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
        for (encoder, fp) in &pack.features {
            let indices: Vec<u32> = fp.vectors.keys().copied().collect();
            let values: Vec<f32> = fp.vectors.values().flatten().copied().collect();
            let meta = TensorSidecar::new(vec![indices.len(), fp.dim], Some(indices));
            write_tensor(
                &features_dir.join(format!("{encoder}.bin")),
                &features_dir.join(format!("{encoder}.json")),
                &meta,
                &values,
            )?;
        }
    }

    if let Some(masks) = &pack.masks {
        let (width, height) = masks
            .values()
            .next()
            .map(|m| (m.width(), m.height()))
            .unwrap_or((1, 1));
        let file = MasksFile {
            width,
            height,
            shots: masks
                .values()
                .map(|m| MaskShotEntry {
                    shot_index: m.shot_index,
                    instances: m.instances().iter().map(BitMask::to_rle).collect(),
                })
                .collect(),
        };
        write_json(&dir.join(MASKS), &file)?;
    }

    if let Some(flows) = &pack.flows {
        let (w, h) = flows
            .values()
            .next()
            .map(|f| (f.width as usize, f.height as usize))
            .unwrap_or((1, 1));
        if let Some(bad) = flows.values().find(|f| f.width as usize != w || f.height as usize != h) {
            return Err(Error::dims(format!("{w}x{h}"), format!("{}x{}", bad.width, bad.height)));
        }
        let indices: Vec<u32> = flows.keys().copied().collect();
        let values: Vec<f32> = flows.values().flat_map(|f| f.field.iter().copied()).collect();
        let meta = TensorSidecar::new(vec![indices.len(), h, w, 2], Some(indices));
        write_tensor(&dir.join(FLOWS_BIN), &dir.join(FLOWS_JSON), &meta, &values)?;
    }

    if let Some(faces) = &pack.faces {
        let entries: Vec<FaceEntry> = faces
            .values()
            .map(|f| FaceEntry {
                shot_index: f.shot_index,
                count: f.count,
            })
            .collect();
        write_json(&dir.join(FACES), &entries)?;
    }
    Ok(())
}
