//! Checkpoint directories: `config.json` plus one `params/<name>.bin` per
//! tensor in the bundle layer format (`RDBM` header, f32 LE row-major).
//! Parameters are rounded to f32 on save.

use std::fs;
use std::path::Path;

use super::params::{Checkpoint, Params, ToyConfig};
use crate::error::{Error, Result};
use crate::repr_store::{write_dir_atomically, write_file, ReprMatrix};

pub const CONFIG_FILE: &str = "config.json";
const PARAMS_DIR: &str = "params";

/// Writes a checkpoint directory, replacing an existing checkpoint at the
/// same path.
pub fn save_checkpoint(ckpt: &Checkpoint, destination: &Path) -> Result<()> {
    ckpt.config.validate()?;
    write_dir_atomically(destination, CONFIG_FILE, |staging| {
        let config = serde_json::to_vec_pretty(&ckpt.config).expect("config serializes");
        write_file(&staging.join(CONFIG_FILE), &config)?;
        let params = staging.join(PARAMS_DIR);
        fs::create_dir(&params).map_err(|e| Error::io(&params, e))?;
        for (name, _, t) in ckpt.params.named_tensors() {
            write_file(&params.join(format!("{name}.bin")), &ReprMatrix::from_dmatrix(t).encode())?;
        }
        Ok(())
    })
}

pub fn load_checkpoint(source: &Path) -> Result<Checkpoint> {
    let config_path = source.join(CONFIG_FILE);
    let raw = fs::read(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config: ToyConfig = serde_json::from_slice(&raw).map_err(|e| Error::Json {
        path: config_path.clone(),
        source: e,
    })?;
    config.validate()?;

    let mut params = Params::zeros(&config);
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _, _)| n).collect();
    for (name, (_, t)) in names.iter().zip(params.tensors_mut()) {
        let path = source.join(PARAMS_DIR).join(format!("{name}.bin"));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m = ReprMatrix::decode(&bytes, &path, Some(t.shape()))?;
        if m.first_non_finite().is_some() {
            return Err(Error::Numeric(format!("{}: non-finite parameter", path.display())));
        }
        *t = m.to_f64();
    }
    Ok(Checkpoint { config, params })
}

#[cfg(test)]
mod tests {
    use super::super::params::init_checkpoint;
    use super::*;

    #[test]
    fn round_trip_rounds_to_f32() {
        let config = ToyConfig {
            num_layers: 2,
            hidden_size: 4,
            num_heads: 2,
            vocab_size: 5,
            seq_len: 3,
            seed: 9,
        };
        let c = init_checkpoint(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        save_checkpoint(&c, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        for ((_, _, a), (_, _, b)) in loaded.params.named_tensors().into_iter().zip(c.params.named_tensors()) {
            assert_eq!(*a, b.map(|v| v as f32 as f64));
        }
        save_checkpoint(&loaded, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), loaded);

        let w = path.join(PARAMS_DIR).join("block_001.ff.w2.bin");
        let mut bytes = fs::read(&w).unwrap();
        bytes.pop();
        fs::write(&w, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Truncated { .. })));
    }
}
