//! Length-prefixed frames carrying a JSON header and raw tensor blocks.
//!
//! ```text
//! u32 LE  total length of everything after this field
//! u32 LE  header length, then compact JSON {"op", "request_id", "meta"}
//! repeated meta.tensor_count times:
//!   u32 LE  tensor header length, then JSON {"name", "axes", "shape", "dtype"}
//!   raw little-endian element bytes
//! ```

use std::fmt;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::tensor::{Tensor, TensorHeader};

const TENSOR_COUNT: &str = "tensor_count";
const MAX_JSON_LEN: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("truncated frame: {0}")]
    Truncated(String),
    #[error("frame length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid frame header: {0}")]
    BadHeader(String),
    #[error("invalid tensor block {index}: {message}")]
    BadTensor { index: usize, message: String },
    #[error("frame of {0} bytes exceeds the 4 GiB limit")]
    TooLarge(usize),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Op {
    Load,
    Run,
    Close,
    Ping,
    Ack,
    Nack,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Op::Load => "LOAD",
            Op::Run => "RUN",
            Op::Close => "CLOSE",
            Op::Ping => "PING",
            Op::Ack => "ACK",
            Op::Nack => "NACK",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameHeader {
    pub op: Op,
    pub request_id: u64,
    #[serde(default)]
    pub meta: Map<String, Value>,
}

impl FrameHeader {
    pub fn new(op: Op, request_id: u64) -> FrameHeader {
        FrameHeader {
            op,
            request_id,
            meta: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> FrameHeader {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.meta.get(key).and_then(Value::as_str)
    }
}

/// A decoded frame. `meta.tensor_count` is managed by the codec and never
/// appears in `header.meta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub header: FrameHeader,
    pub tensors: Vec<Tensor>,
}

impl Frame {
    pub fn new(header: FrameHeader, tensors: Vec<Tensor>) -> Frame {
        Frame { header, tensors }
    }
}

fn push_block(out: &mut Vec<u8>, block: &[u8]) -> Result<(), ProtocolError> {
    let len = u32::try_from(block.len()).map_err(|_| ProtocolError::TooLarge(block.len()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(block);
    Ok(())
}

pub fn encode_frame(header: &FrameHeader, tensors: &[Tensor]) -> Result<Vec<u8>, ProtocolError> {
    let mut header = header.clone();
    header.meta.insert(TENSOR_COUNT.to_string(), Value::from(tensors.len()));
    let json = serde_json::to_vec(&header).expect("frame header serializes");
    let mut out = vec![0u8; 4];
    push_block(&mut out, &json)?;
    for t in tensors {
        push_block(&mut out, &TensorHeader::of(t).to_json())?;
        out.extend_from_slice(t.bytes());
    }
    let total = out.len() - 4;
    let total = u32::try_from(total).map_err(|_| ProtocolError::TooLarge(total))?;
    out[..4].copy_from_slice(&total.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ProtocolError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.body.len()).ok_or_else(|| {
            ProtocolError::LengthMismatch(format!(
                "{what} needs {n} bytes at offset {}, body has {}",
                self.pos,
                self.body.len()
            ))
        })?;
        let s = &self.body[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn block(&mut self, what: &str) -> Result<&'a [u8], ProtocolError> {
        let len = u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize;
        if len > MAX_JSON_LEN {
            return Err(ProtocolError::LengthMismatch(format!("{what} length {len} exceeds limit")));
        }
        self.take(len, what)
    }
}

/// Decode the bytes following the length prefix.
pub fn decode_body(body: &[u8]) -> Result<Frame, ProtocolError> {
    let mut cur = Cursor { body, pos: 0 };
    let json = cur.block("frame header")?;
    let mut header: FrameHeader =
        serde_json::from_slice(json).map_err(|e| ProtocolError::BadHeader(e.to_string()))?;
    let count = match header.meta.remove(TENSOR_COUNT) {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| ProtocolError::BadHeader("meta.tensor_count is not an integer".into()))?,
        None => return Err(ProtocolError::BadHeader("meta.tensor_count is missing".into())),
    };
    let mut tensors = Vec::new();
    for index in 0..count as usize {
        if cur.pos == body.len() {
            return Err(ProtocolError::LengthMismatch(format!(
                "meta.tensor_count is {count} but only {index} tensors present"
            )));
        }
        let bad = |message: String| ProtocolError::BadTensor { index, message };
        let th = TensorHeader::from_json(cur.block("tensor header")?).map_err(|e| bad(e.to_string()))?;
        let len = th.data_len().map_err(|e| bad(e.to_string()))?;
        let data = cur.take(len, "tensor data")?.to_vec();
        tensors.push(Tensor::new(th.name, th.axes, th.shape, th.dtype, data).map_err(|e| bad(e.to_string()))?);
    }
    if cur.pos != body.len() {
        return Err(ProtocolError::LengthMismatch(format!(
            "{} trailing bytes after {count} tensors",
            body.len() - cur.pos
        )));
    }
    Ok(Frame { header, tensors })
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, ProtocolError> {
    if bytes.len() < 4 {
        return Err(ProtocolError::Truncated(format!("{} bytes, need a 4-byte prefix", bytes.len())));
    }
    let total = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = &bytes[4..];
    if body.len() < total {
        return Err(ProtocolError::Truncated(format!(
            "prefix announces {total} bytes, {} present",
            body.len()
        )));
    }
    if body.len() > total {
        return Err(ProtocolError::LengthMismatch(format!(
            "prefix announces {total} bytes, {} present",
            body.len()
        )));
    }
    decode_body(body)
}

/// Read one frame. `Ok(None)` on a clean end of stream before any byte of
/// a new frame.
pub fn read_frame<R: Read>(input: &mut R) -> Result<Option<Frame>, ProtocolError> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match input.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::Truncated("end of stream inside length prefix".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let total = u32::from_le_bytes(prefix) as u64;
    let mut body = Vec::new();
    input.take(total).read_to_end(&mut body)?;
    if (body.len() as u64) < total {
        return Err(ProtocolError::Truncated(format!(
            "end of stream after {} of {total} body bytes",
            body.len()
        )));
    }
    decode_body(&body).map(Some)
}

pub fn write_frame<W: Write>(output: &mut W, frame: &Frame) -> Result<(), ProtocolError> {
    output.write_all(&encode_frame(&frame.header, &frame.tensors)?)?;
    output.flush()?;
    Ok(())
}
