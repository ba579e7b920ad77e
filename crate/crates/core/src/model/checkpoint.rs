//! Checkpoint directory format.
//!
//! A checkpoint is a directory holding:
//!
//! - `config.json` — encoder config, vocabulary hash, step, seed
//! - `manifest.json` — `{name, shape, offset}` per tensor, in order
//! - `params.bin` — little-endian f32 values concatenated in manifest order
//! - `optim.bin` — optional Adam state (first moments, then second), same
//!   layout as `params.bin` twice; present when saved from training so a
//!   run can resume exactly

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::optim::{AdamHyper, OptimizerState};
use crate::model::params::{manifest, EncoderConfig, EncoderParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: EncoderConfig,
    pub vocab_sha256: String,
    pub step: u64,
    pub seed: u64,
}

fn write_tensors(path: &Path, slices: &[&[f32]]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for slice in slices {
        let mut buf = Vec::with_capacity(slice.len() * 4);
        for v in slice.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_tensors(path: &Path, slices: &mut [&mut [f32]]) -> Result<()> {
    let expected: usize = slices.iter().map(|s| s.len() * 4).sum();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(expected);
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut offset = 0;
    for slice in slices.iter_mut() {
        for v in slice.iter_mut() {
            *v = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
            offset += 4;
        }
    }
    Ok(())
}

pub fn save_checkpoint(
    dir: &Path,
    params: &EncoderParams<f32>,
    meta: &CheckpointMeta,
    optim: Option<&OptimizerState<f32>>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join("config.json");
    let config_json = serde_json::to_string_pretty(meta).expect("serializable meta");
    std::fs::write(&config_path, config_json).map_err(|e| Error::io(&config_path, e))?;

    let manifest_path = dir.join("manifest.json");
    let metas = manifest(&meta.config);
    let manifest_json = serde_json::to_string_pretty(&metas).expect("serializable manifest");
    std::fs::write(&manifest_path, manifest_json).map_err(|e| Error::io(&manifest_path, e))?;

    write_tensors(&dir.join("params.bin"), &params.slices())?;

    if let Some(state) = optim {
        let mut slices = state.m.slices();
        slices.extend(state.v.slices());
        write_tensors(&dir.join("optim.bin"), &slices)?;
    }
    Ok(())
}

pub fn load_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join("config.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    meta.config.validate()?;
    Ok(meta)
}

pub fn load_checkpoint(dir: &Path) -> Result<(EncoderParams<f32>, CheckpointMeta)> {
    let meta = load_meta(dir)?;

    // the stored manifest must agree with the config-derived one
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let stored: Vec<crate::model::params::TensorMeta> = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    let derived = manifest(&meta.config);
    if stored.len() != derived.len()
        || stored
            .iter()
            .zip(&derived)
            .any(|(s, d)| s.name != d.name || s.shape != d.shape || s.offset != d.offset)
    {
        return Err(Error::Checkpoint(format!(
            "{}: manifest does not match config",
            manifest_path.display()
        )));
    }

    let mut params = EncoderParams::<f32>::zeros(&meta.config);
    read_tensors(&dir.join("params.bin"), &mut params.slices_mut())?;
    Ok((params, meta))
}

pub fn has_optimizer_state(dir: &Path) -> bool {
    dir.join("optim.bin").exists()
}

pub fn load_optimizer_state(
    dir: &Path,
    config: &EncoderConfig,
    hyper: AdamHyper,
    step: u64,
) -> Result<OptimizerState<f32>> {
    let mut state = OptimizerState::new(config, hyper);
    {
        let mut slices = state.m.slices_mut();
        slices.extend(state.v.slices_mut());
        read_tensors(&dir.join("optim.bin"), &mut slices)?;
    }
    state.step = step;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            n_layers: 1,
            hidden: 8,
            n_heads: 2,
            ffn_dim: 12,
            max_positions: 6,
            vocab_size: 9,
            dropout: 0.1,
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let params = EncoderParams::<f32>::init(&config, 13).unwrap();
        let meta = CheckpointMeta {
            config: config.clone(),
            vocab_sha256: "ab".repeat(32),
            step: 17,
            seed: 99,
        };
        save_checkpoint(dir.path(), &params, &meta, None).unwrap();
        let (loaded, lmeta) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(lmeta.step, 17);
        assert_eq!(lmeta.seed, 99);
        assert_eq!(lmeta.config, config);
        assert!(!has_optimizer_state(dir.path()));
    }

    #[test]
    fn optimizer_state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let params = EncoderParams::<f32>::init(&config, 1).unwrap();
        let mut state = OptimizerState::new(&config, AdamHyper::default());
        state.m.token_emb[[3, 4]] = 0.25;
        state.v.head.out_bias[2] = 0.5;
        state.step = 5;
        let meta = CheckpointMeta {
            config: config.clone(),
            vocab_sha256: String::new(),
            step: 5,
            seed: 1,
        };
        save_checkpoint(dir.path(), &params, &meta, Some(&state)).unwrap();
        assert!(has_optimizer_state(dir.path()));
        let loaded =
            load_optimizer_state(dir.path(), &config, AdamHyper::default(), 5).unwrap();
        assert_eq!(loaded.m.token_emb[[3, 4]], 0.25);
        assert_eq!(loaded.v.head.out_bias[2], 0.5);
        assert_eq!(loaded.step, 5);
    }

    #[test]
    fn corrupt_length_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let params = EncoderParams::<f32>::init(&config, 1).unwrap();
        let meta = CheckpointMeta {
            config,
            vocab_sha256: String::new(),
            step: 0,
            seed: 0,
        };
        save_checkpoint(dir.path(), &params, &meta, None).unwrap();
        // truncate params.bin
        let p = dir.path().join("params.bin");
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }

    #[test]
    fn byte_identical_saves() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let params = EncoderParams::<f32>::init(&config, 8).unwrap();
        let meta = CheckpointMeta {
            config,
            vocab_sha256: "x".into(),
            step: 3,
            seed: 8,
        };
        save_checkpoint(dir_a.path(), &params, &meta, None).unwrap();
        save_checkpoint(dir_b.path(), &params, &meta, None).unwrap();
        for name in ["config.json", "manifest.json", "params.bin"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }
}
