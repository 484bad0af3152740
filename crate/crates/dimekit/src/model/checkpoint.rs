//! Self-describing binary checkpoint container.
//!
//! Layout (all integers little-endian u64, all floats little-endian f64):
//!
//! ```text
//! magic            8 bytes, b"DIMEKIT1"
//! config_len       u64, then config_len bytes of TOML-encoded ModelConfig
//! tensor_count     u64
//! per tensor:
//!   name_len       u64, then name_len bytes UTF-8
//!   trainable      1 byte (0 or 1)
//!   rows, cols     u64 each
//!   data           rows * cols f64 values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::Param;
use super::{ModelConfig, ParameterStore};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DIMEKIT1";

/// Write a model configuration and its parameters to `path`.
pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    store: &ParameterStore,
) -> Result<()> {
    store.validate_for(cfg)?;
    let config_text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Contract(format!("cannot serialize model config: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(config_text.len() as u64).to_le_bytes())?;
    w.write_all(config_text.as_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for p in store.params() {
        w.write_all(&(p.name.len() as u64).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&[u8::from(p.trainable)])?;
        w.write_all(&(p.tensor.rows() as u64).to_le_bytes())?;
        w.write_all(&(p.tensor.cols() as u64).to_le_bytes())?;
        for &v in p.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`]. The returned store is
/// validated against the embedded configuration.
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParameterStore)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Input(format!(
            "{} is not a model checkpoint (bad magic header)",
            path.display()
        )));
    }
    let config_len = read_u64(&mut r)? as usize;
    if config_len > 1 << 20 {
        return Err(Error::Input("checkpoint config section implausibly large".into()));
    }
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let config_text = String::from_utf8(config_bytes)
        .map_err(|_| Error::Input("checkpoint config is not valid UTF-8".into()))?;
    let cfg: ModelConfig = toml::from_str(&config_text)
        .map_err(|e| Error::Input(format!("invalid model config in checkpoint: {e}")))?;
    cfg.validate()?;

    let count = read_u64(&mut r)? as usize;
    let mut params = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::Input(format!("tensor {i} name implausibly long")));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Input(format!("tensor {i} name is not valid UTF-8")))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let trainable = match flag[0] {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Input(format!(
                    "tensor {name} has invalid trainable flag {other}"
                )))
            }
        };
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if rows.saturating_mul(cols) > 1 << 28 {
            return Err(Error::Input(format!("tensor {name} implausibly large")));
        }
        let mut data = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        params.push(Param { name, tensor: Tensor::new(rows, cols, data), trainable });
    }
    let store = ParameterStore::from_params(params);
    store.validate_for(&cfg)?;
    Ok((cfg, store))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisConfig;
    use crate::geometry::AtomicConfiguration;
    use crate::model::forward::forward_energy;
    use crate::model::InteractionKind;

    fn cfg() -> ModelConfig {
        ModelConfig {
            hidden_dim: 8,
            out_emb_dim: 6,
            triplet_dim: 4,
            num_blocks: 1,
            basis: BasisConfig { num_radial: 3, num_spherical: 2, ..Default::default() },
            num_elements: 8,
            mve_head: true,
            interaction_kind: InteractionKind::Hadamard,
            num_bilinear: 2,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = cfg();
        let store = ParameterStore::init(&cfg, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &store).unwrap();
        let (cfg2, store2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(store.len(), store2.len());
        for (a, b) in store.params().iter().zip(store2.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.trainable, b.trainable);
            assert_eq!(a.tensor, b.tensor, "tensor {} not bit-identical", a.name);
        }
        // and the model computes the same energy from the reload
        let config = AtomicConfiguration::new(
            vec![1, 8, 1],
            vec![[0.0, 0.0, 0.0], [0.96, 0.0, 0.0], [1.2, 0.9, 0.0]],
        )
        .unwrap();
        let e1 = forward_energy(&cfg, &store, &config).unwrap();
        let e2 = forward_energy(&cfg2, &store2, &config).unwrap();
        assert_eq!(e1.to_bits(), e2.to_bits());
    }

    #[test]
    fn bad_magic_is_rejected_as_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"NOTDIMEK plus trailing junk").unwrap();
        match load_checkpoint(&path) {
            Err(Error::Input(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_an_io_error() {
        let cfg = cfg();
        let store = ParameterStore::init(&cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &store).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Io(_))));
    }

    #[test]
    fn tampered_shape_fails_validation() {
        let cfg = cfg();
        let store = ParameterStore::init(&cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        // write a checkpoint whose tensors do not match the config
        let mut small = cfg.clone();
        small.hidden_dim = 4;
        let small_store = ParameterStore::init(&small, 2).unwrap();
        save_checkpoint(&path, &small, &small_store).unwrap();
        let (_, loaded) = load_checkpoint(&path).unwrap();
        assert!(loaded.validate_for(&cfg).is_err());
        assert!(store.validate_for(&cfg).is_ok());
    }
}
