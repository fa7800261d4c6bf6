//! Versioned checkpoint container: named parameter tensors plus optimizer
//! state and the hash of the config that produced them.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! magic    8   b"IIMTCKPT"
//! version  u16 (currently 1)
//! step     u64
//! hash_len u16, hash bytes        (sha256 of the canonical config)
//! meta_len u32, meta TOML utf8    (model spec, optimizer kind, lr, dtype)
//! n        u32
//! n x { name_len u16, name utf8, payload_len u64, payload }
//! ```
//!
//! Each payload is one tensor in the standard tensor file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelBundle, ModelSpec};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{Scalar, Tensor};
use crate::tensor_io::{decode_tensor, encode_tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IIMTCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelSpec,
    optimizer: OptimizerKind,
    learning_rate: f64,
    dtype: String,
}

/// Everything needed to resume a run at `step`.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub step: u64,
    pub config_hash: Vec<u8>,
    pub model: ModelBundle<T>,
    pub optimizer: Optimizer<T>,
}

pub fn save_checkpoint<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let meta = CheckpointMeta {
        model: ckpt.model.spec.clone(),
        optimizer: ckpt.optimizer.kind(),
        learning_rate: ckpt.optimizer.learning_rate(),
        dtype: format!("{:?}", T::dtype()),
    };
    let meta_str =
        toml::to_string(&meta).map_err(|e| Error::Format(format!("checkpoint meta: {e}")))?;

    let names = ckpt.model.param_names();
    let mut entries: Vec<(String, Vec<u8>)> = names
        .iter()
        .zip(ckpt.model.params())
        .map(|(n, t)| (format!("model.{n}"), encode_tensor(t)))
        .collect();
    for (name, t) in ckpt.optimizer.state_tensors(&names) {
        entries.push((name, encode_tensor(&t)));
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&ckpt.step.to_le_bytes())?;
    w.write_all(&(ckpt.config_hash.len() as u16).to_le_bytes())?;
    w.write_all(&ckpt.config_hash)?;
    w.write_all(&(meta_str.len() as u32).to_le_bytes())?;
    w.write_all(meta_str.as_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, payload) in entries {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(payload.len() as u64).to_le_bytes())?;
        w.write_all(&payload)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    if r.bytes(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let step = r.u64()?;
    let hash_len = r.u16()? as usize;
    let config_hash = r.bytes(hash_len)?;
    let meta_len = r.u32()? as usize;
    let meta_str = String::from_utf8(r.bytes(meta_len)?)
        .map_err(|e| Error::Format(format!("checkpoint meta utf8: {e}")))?;
    let meta: CheckpointMeta =
        toml::from_str(&meta_str).map_err(|e| Error::Format(format!("checkpoint meta: {e}")))?;
    if meta.dtype != format!("{:?}", T::dtype()) {
        return Err(Error::Format(format!(
            "checkpoint dtype {} does not match requested {:?}",
            meta.dtype,
            T::dtype()
        )));
    }

    let n = r.u32()? as usize;
    let mut entries: Vec<(String, Tensor<T>)> = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|e| Error::Format(format!("entry name utf8: {e}")))?;
        let payload_len = r.u64()? as usize;
        let payload = r.bytes(payload_len)?;
        entries.push((name, decode_tensor(&payload)?));
    }

    // Rebuild the model: init for structure, then overwrite every tensor.
    let mut model = ModelBundle::<T>::init(meta.model.clone(), 0)?;
    let names = model.param_names();
    {
        let mut params = model.params_mut();
        for (name, slot) in names.iter().zip(params.iter_mut()) {
            let key = format!("model.{name}");
            let stored = entries
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format(format!("checkpoint missing {key}")))?;
            if stored.shape() != slot.shape() {
                return Err(Error::dims(
                    format!("checkpoint entry {key}"),
                    slot.shape(),
                    stored.shape(),
                ));
            }
            **slot = stored.clone();
        }
    }

    let mut optimizer = Optimizer::<T>::new(meta.optimizer, meta.learning_rate);
    optimizer.restore_state(&names, &entries)?;

    Ok(Checkpoint {
        step,
        config_hash,
        model,
        optimizer,
    })
}

/// `ckpt_stepNNNNNN_HASH8.ckpt`
pub fn checkpoint_file_name(step: u64, config_hash: &[u8]) -> String {
    let hex: String = config_hash
        .iter()
        .take(4)
        .map(|b| format!("{b:02x}"))
        .collect();
    format!("ckpt_step{step:06}_{hex}.ckpt")
}
