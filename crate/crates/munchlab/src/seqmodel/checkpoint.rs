//! Checkpoint files: a JSON header next to a raw little-endian f32 buffer.
//!
//! `name.json` carries architecture, vocabulary, tag, seed, the tensor
//! manifest, and a SHA-256 checksum of `name.bin`; loading re-derives the
//! manifest from the architecture and refuses mismatched shapes, sizes, or
//! checksums.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::arch::ModelArch;
use super::model::{Model, ModelTag};
use super::vocab::Vocabulary;
use super::ModelError;
use crate::hashutil::sha256_hex;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    tag: ModelTag,
    seed: u64,
    arch: ModelArch,
    vocab: Vocabulary,
    manifest: Vec<(String, Vec<usize>)>,
    param_count: usize,
    bin_checksum: String,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("json"), base.with_extension("bin"))
}

/// Writes `base.json` and `base.bin`.
pub fn save_checkpoint(model: &Model, base: &Path) -> Result<(), ModelError> {
    let (header_path, bin_path) = paths(base);
    if let Some(parent) = header_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut bin = Vec::with_capacity(model.param_count() * 4);
    for &p in model.params() {
        bin.extend_from_slice(&p.to_le_bytes());
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        tag: model.tag,
        seed: model.seed,
        arch: model.arch,
        vocab: model.vocab.clone(),
        manifest: model.arch.manifest(model.vocab.len()),
        param_count: model.param_count(),
        bin_checksum: sha256_hex(&bin),
    };
    fs::write(&bin_path, &bin)?;
    let mut buf = serde_json::to_vec_pretty(&header)?;
    buf.push(b'\n');
    fs::write(&header_path, buf)?;
    Ok(())
}

/// Loads a checkpoint pair written by `save_checkpoint`.
pub fn load_checkpoint(base: &Path) -> Result<Model, ModelError> {
    let (header_path, bin_path) = paths(base);
    let header: Header = serde_json::from_slice(&fs::read(&header_path)?)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(ModelError::CheckpointVersion {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let expected_manifest = header.arch.manifest(header.vocab.len());
    if header.manifest != expected_manifest {
        return Err(ModelError::ManifestMismatch(
            "stored tensor manifest does not match the stored architecture".into(),
        ));
    }
    let want = header.arch.param_count(header.vocab.len());
    if header.param_count != want {
        return Err(ModelError::ParamCount { got: header.param_count, want });
    }
    let bin = fs::read(&bin_path)?;
    if sha256_hex(&bin) != header.bin_checksum {
        return Err(ModelError::ChecksumMismatch { path: bin_path.display().to_string() });
    }
    if bin.len() != want * 4 {
        return Err(ModelError::ParamCount { got: bin.len() / 4, want });
    }
    let params: Vec<f32> = bin
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("chunks are 4 bytes")))
        .collect();
    Model::from_parts(header.arch, header.vocab, params, header.seed, header.tag)
}
