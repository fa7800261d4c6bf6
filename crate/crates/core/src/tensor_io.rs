//! On-disk tensor format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4  b"IIMT"
//! version u16  (currently 1)
//! dtype   u8   (1 = f32, 2 = f64)
//! rank    u8
//! dims    rank x u64
//! data    numel x element, little-endian
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Scalar, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"IIMT";
pub const TENSOR_FORMAT_VERSION: u16 = 1;

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + t.shape().len() * 8 + t.numel() * T::dtype().size_bytes());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
    out.push(T::dtype().code());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.to_le_bytes(&mut out);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "tensor blob truncated: wanted {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Decode a tensor, converting the stored dtype to `T` if they differ.
pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (t, rest) = decode_tensor_prefix(bytes)?;
    if rest != 0 {
        return Err(Error::Format(format!(
            "{rest} trailing bytes after tensor data"
        )));
    }
    Ok(t)
}

/// Decode one tensor from the front of `bytes`; returns the tensor and the
/// number of unread trailing bytes. Used by container formats that pack
/// several tensors back to back.
pub fn decode_tensor_prefix<T: Scalar>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
    if version != TENSOR_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported tensor version {version}")));
    }
    let dtype = Dtype::from_code(cur.take(1)?[0])?;
    let rank = cur.take(1)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize);
    }
    let numel: usize = shape.iter().product();
    let elem = dtype.size_bytes();
    let raw = cur.take(numel * elem)?;

    let data: Vec<T> = match dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_slice(c).to_f64()))
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::from_le_slice(c)))
            .collect(),
    };
    Ok((Tensor::new(shape, data)?, bytes.len() - cur.pos))
}

pub fn save_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_tensor(t))?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_tensor(&bytes)
}
