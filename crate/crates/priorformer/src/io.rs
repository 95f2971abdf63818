//! Reading and writing `PFVF` feature files and `PFMP` parameter files.

use std::fs;
use std::path::{Path, PathBuf};

use priorformer_core::dataio::{decode_pfvf, encode_pfvf, FeatureSequence};
use priorformer_core::model::ModelParams;
use priorformer_core::params::{decode_params, encode_params};

use crate::Failure;

pub const FEATURE_EXTENSION: &str = "pfvf";

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|source| Failure::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|source| Failure::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The id of a sequence read from `path` is its file stem.
pub fn read_feature_file(path: &Path) -> Result<FeatureSequence, Failure> {
    let bytes = read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_pfvf(&bytes, id).map_err(|e| Failure::at(path, e))
}

pub fn write_feature_file(seq: &FeatureSequence, path: &Path) -> Result<(), Failure> {
    let bytes = encode_pfvf(seq).map_err(|e| Failure::at(path, e))?;
    write(path, &bytes)
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<(), Failure> {
    let bytes = encode_params(params).map_err(|e| Failure::at(path, e))?;
    write(path, &bytes)
}

pub fn load_params(path: &Path) -> Result<ModelParams, Failure> {
    let bytes = read(path)?;
    decode_params(&bytes).map_err(|e| Failure::at(path, e))
}

/// Every `*.pfvf` file directly inside `dir`, sorted by file name.
pub fn feature_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let io = |source| Failure::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == FEATURE_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Failure::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no .pfvf files"),
        });
    }
    Ok(files)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<FeatureSequence>, Failure> {
    feature_files(dir)?.iter().map(|p| read_feature_file(p)).collect()
}

/// Writes one file per sequence, named `<id>.pfvf`.
pub fn write_dataset(videos: &[FeatureSequence], dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    fs::create_dir_all(dir).map_err(|source| Failure::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    videos
        .iter()
        .map(|v| {
            let path = dir.join(format!("{}.{FEATURE_EXTENSION}", v.id));
            write_feature_file(v, &path).map(|_| path)
        })
        .collect()
}
