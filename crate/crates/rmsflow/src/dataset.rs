//! Dataset directories: `scene_NNNNN.sfpr` files plus a `manifest.txt`
//! assigning every scene to the train, val or test split.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rmsflow_core::data::{gen_synthetic, ScenePair, SynthConfig};

use crate::format::{read_scene, write_scene, FormatError};
use crate::seeds;

pub const MANIFEST: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# rmsflow dataset v1: split scene_id file";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Self::Train),
            "val" => Some(Self::Val),
            "test" => Some(Self::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub scene_id: u64,
    pub file: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed manifest line")]
    Manifest { path: PathBuf, line: usize },
    #[error("dataset {0}: no manifest (run `rmsflow gen` first)")]
    Missing(PathBuf),
    #[error("scene generation failed: {0}")]
    Generate(#[from] rmsflow_core::Error),
}

/// Split sizes for `n` scenes: train and val rounded down, the rest test.
pub fn split_sizes(n: usize, train_fraction: f64, val_fraction: f64) -> (usize, usize, usize) {
    let train = ((n as f64 * train_fraction).round() as usize).min(n);
    let val = ((n as f64 * val_fraction).round() as usize).min(n - train);
    (train, val, n - train - val)
}

/// Assigns scenes to splits by ranking them on a seeded hash of their id.
pub fn assign_splits(n: usize, train_fraction: f64, val_fraction: f64, seed: u64) -> Vec<Split> {
    let (train, val, _) = split_sizes(n, train_fraction, val_fraction);
    let mut order: Vec<u64> = (0..n as u64).collect();
    order.sort_by_key(|&i| (seeds::derive(seed, "split", &[i]), i));
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i as usize] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

pub fn scene_file(id: u64) -> String {
    format!("scene_{id:05}.sfpr")
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Scene `id` of a generated dataset, reproducible on its own.
pub fn generate_scene(cfg: &SynthConfig, seed: u64, id: u64) -> Result<ScenePair, DatasetError> {
    let mut rng = seeds::rng(seed, "scene", &[id]);
    Ok(gen_synthetic(cfg, id, &mut rng)?)
}

/// Writes `n` scenes and the manifest into `dir`.
pub fn generate(
    dir: &Path,
    cfg: &SynthConfig,
    n: usize,
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
    threads: usize,
) -> Result<Vec<ManifestEntry>, DatasetError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let splits = assign_splits(n, train_fraction, val_fraction, seed);
    let ids: Vec<u64> = (0..n as u64).collect();
    crate::parallel::try_map(&ids, threads, |&id| -> Result<(), DatasetError> {
        let pair = generate_scene(cfg, seed, id)?;
        write_scene(&pair, &dir.join(scene_file(id)))?;
        Ok(())
    })?;
    let entries: Vec<ManifestEntry> = ids
        .iter()
        .map(|&id| ManifestEntry {
            split: splits[id as usize],
            scene_id: id,
            file: scene_file(id),
        })
        .collect();
    write_manifest(dir, &entries)?;
    Ok(entries)
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<(), DatasetError> {
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for e in entries {
        text.push_str(&format!("{} {} {}\n", e.split, e.scene_id, e.file));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(io(&path))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(DatasetError::Missing(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || DatasetError::Manifest {
            path: path.clone(),
            line: i + 1,
        };
        let mut parts = line.split_whitespace();
        let split = parts.next().and_then(Split::parse).ok_or_else(bad)?;
        let scene_id = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let file = parts.next().ok_or_else(bad)?.to_string();
        if parts.next().is_some() || file.contains('/') || file.contains('\\') {
            return Err(bad());
        }
        out.push(ManifestEntry { split, scene_id, file });
    }
    Ok(out)
}

/// All scenes of one split, in manifest order.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<ScenePair>, DatasetError> {
    read_manifest(dir)?
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| Ok(read_scene(&dir.join(&e.file), e.scene_id)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_ratios_are_exact() {
        let s = assign_splits(10, 0.6, 0.2, 3);
        let count = |k| s.iter().filter(|&&x| x == k).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (6, 2, 2));
        assert_eq!(s, assign_splits(10, 0.6, 0.2, 3));
    }
}
