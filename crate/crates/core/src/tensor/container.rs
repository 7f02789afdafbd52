//! `ZRT1` tensor container: magic, u32 LE header length, compact JSON
//! header `{name, axes, shape, dtype}`, raw little-endian element bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{checked_count, Axes, DType, Tensor, TensorError};

pub const ZRT_MAGIC: &[u8; 4] = b"ZRT1";

/// Upper bound for a tensor header; anything larger is treated as corrupt.
pub(crate) const MAX_HEADER_LEN: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub name: String,
    pub axes: Axes,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

impl TensorHeader {
    pub fn of(tensor: &Tensor) -> TensorHeader {
        TensorHeader {
            name: tensor.name().to_string(),
            axes: tensor.axes().clone(),
            shape: tensor.shape().to_vec(),
            dtype: tensor.dtype(),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("tensor header serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<TensorHeader, TensorError> {
        let header: TensorHeader = serde_json::from_slice(bytes)
            .map_err(|e| TensorError::Container(format!("bad tensor header: {e}")))?;
        if header.axes.len() != header.shape.len() {
            return Err(TensorError::Container(format!(
                "axes '{}' do not match shape {:?}",
                header.axes, header.shape
            )));
        }
        Ok(header)
    }

    /// Size of the element buffer described by this header.
    pub fn data_len(&self) -> Result<usize, TensorError> {
        checked_count(&self.shape)
            .and_then(|n| n.checked_mul(self.dtype.byte_width()))
            .ok_or_else(|| TensorError::Container(format!("shape {:?} overflows", self.shape)))
    }
}

pub fn write_zrt<W: Write>(tensor: &Tensor, mut out: W) -> Result<(), TensorError> {
    let header = TensorHeader::of(tensor).to_json();
    out.write_all(ZRT_MAGIC)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(tensor.bytes())?;
    Ok(())
}

pub fn read_zrt<R: Read>(mut input: R) -> Result<Tensor, TensorError> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic)?;
    if &magic != ZRT_MAGIC {
        return Err(TensorError::Container("bad magic, expected ZRT1".into()));
    }
    let mut len = [0u8; 4];
    read_exact(&mut input, &mut len)?;
    let header_len = u32::from_le_bytes(len) as usize;
    if header_len > MAX_HEADER_LEN {
        return Err(TensorError::Container(format!("header length {header_len} too large")));
    }
    let mut header = vec![0u8; header_len];
    read_exact(&mut input, &mut header)?;
    let header = TensorHeader::from_json(&header)?;
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let expected = header.data_len()?;
    if data.len() != expected {
        return Err(TensorError::Container(format!(
            "expected {expected} data bytes, found {}",
            data.len()
        )));
    }
    Tensor::new(header.name, header.axes, header.shape, header.dtype, data)
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<(), TensorError> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TensorError::Container("truncated container".into()),
        _ => TensorError::Io(e),
    })
}

pub fn write_zrt_file(tensor: &Tensor, path: &Path) -> Result<(), TensorError> {
    let mut buf = Vec::with_capacity(tensor.bytes().len() + 128);
    write_zrt(tensor, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_zrt_file(path: &Path) -> Result<Tensor, TensorError> {
    let bytes = fs::read(path)?;
    read_zrt(bytes.as_slice())
}
