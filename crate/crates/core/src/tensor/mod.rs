//! Named-axes N-D tensor shared by every other module.
//!
//! Data is held as a contiguous row-major buffer (last axis fastest) of
//! little-endian element bytes. All layout operations therefore work on raw
//! bytes and are bit-exact for every dtype; only [`Tensor::cast`] and the
//! f64 accessors interpret element values.

mod axes;
mod container;
mod dtype;

use std::ops::Range;

use thiserror::Error;

pub use axes::{Axes, Axis};
pub use container::{read_zrt, read_zrt_file, write_zrt, write_zrt_file, TensorHeader, ZRT_MAGIC};
pub use dtype::DType;
pub(crate) use dtype::{read_scalar, write_scalar, Scalar};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad axes: {0}")]
    BadAxes(String),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("dtype mismatch: expected {expected}, found {found}")]
    DTypeMismatch { expected: DType, found: DType },
    #[error("unknown dtype '{0}'")]
    UnknownDType(String),
    #[error("malformed tensor container: {0}")]
    Container(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Rust primitive types that map onto a [`DType`].
pub trait Element: Copy + 'static {
    const DTYPE: DType;
    fn to_le(self, out: &mut Vec<u8>);
    fn from_le(bytes: &[u8]) -> Self;
}

macro_rules! element {
    ($t:ty, $d:expr) => {
        impl Element for $t {
            const DTYPE: DType = $d;
            fn to_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn from_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().unwrap())
            }
        }
    };
}

element!(i8, DType::I8);
element!(u8, DType::U8);
element!(i16, DType::I16);
element!(u16, DType::U16);
element!(i32, DType::I32);
element!(u32, DType::U32);
element!(i64, DType::I64);
element!(f32, DType::F32);
element!(f64, DType::F64);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    name: String,
    axes: Axes,
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<u8>,
}

pub(crate) fn checked_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s))
}

/// Row-major strides in elements.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Visit every multi-index of `shape` in row-major order.
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        f(&idx);
        let mut axis = shape.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

impl Tensor {
    /// Build a tensor from raw little-endian element bytes.
    pub fn new(
        name: impl Into<String>,
        axes: Axes,
        shape: Vec<usize>,
        dtype: DType,
        data: Vec<u8>,
    ) -> Result<Tensor, TensorError> {
        if axes.len() != shape.len() {
            return Err(TensorError::BadAxes(format!(
                "axes '{axes}' have rank {} but shape {:?} has rank {}",
                axes.len(),
                shape,
                shape.len()
            )));
        }
        let count = checked_count(&shape)
            .ok_or_else(|| TensorError::ShapeMismatch(format!("shape {shape:?} overflows")))?;
        let expected = count
            .checked_mul(dtype.byte_width())
            .ok_or_else(|| TensorError::ShapeMismatch(format!("shape {shape:?} overflows")))?;
        if data.len() != expected {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {shape:?} needs {count} elements ({expected} bytes of {dtype}), got {} bytes",
                data.len()
            )));
        }
        Ok(Tensor {
            name: name.into(),
            axes,
            shape,
            dtype,
            data,
        })
    }

    pub fn from_values<T: Element>(
        name: impl Into<String>,
        axes: Axes,
        shape: Vec<usize>,
        values: &[T],
    ) -> Result<Tensor, TensorError> {
        let mut data = Vec::with_capacity(values.len() * T::DTYPE.byte_width());
        for &v in values {
            v.to_le(&mut data);
        }
        Tensor::new(name, axes, shape, T::DTYPE, data)
    }

    /// Build a tensor of `dtype` from f64 values, converting with the
    /// same rules as [`Tensor::cast`].
    pub fn from_f64s(
        name: impl Into<String>,
        axes: Axes,
        shape: Vec<usize>,
        dtype: DType,
        values: &[f64],
    ) -> Result<Tensor, TensorError> {
        let mut data = Vec::with_capacity(values.len() * dtype.byte_width());
        for &v in values {
            write_scalar(dtype, Scalar::Float(v), &mut data);
        }
        Tensor::new(name, axes, shape, dtype, data)
    }

    pub fn zeros(
        name: impl Into<String>,
        axes: Axes,
        shape: Vec<usize>,
        dtype: DType,
    ) -> Result<Tensor, TensorError> {
        let count = checked_count(&shape)
            .ok_or_else(|| TensorError::ShapeMismatch(format!("shape {shape:?} overflows")))?;
        Tensor::new(name, axes, shape, dtype, vec![0u8; count * dtype.byte_width()])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn axes(&self) -> &Axes {
        &self.axes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Raw little-endian element bytes.
    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dtype.byte_width()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Tensor {
        self.name = name.into();
        self
    }

    /// Size along `axis`, if present.
    pub fn dim(&self, axis: Axis) -> Option<usize> {
        self.axes.position(axis).map(|i| self.shape[i])
    }

    fn flat_index(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &s) in index.iter().zip(&self.shape) {
            if i >= s {
                return None;
            }
            flat = flat * s + i;
        }
        Some(flat)
    }

    /// Element at a multi-index, widened to f64.
    pub fn get_f64(&self, index: &[usize]) -> Option<f64> {
        let flat = self.flat_index(index)?;
        let w = self.dtype.byte_width();
        Some(read_scalar(self.dtype, &self.data[flat * w..(flat + 1) * w]).as_f64())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.dtype.byte_width())
            .map(|b| read_scalar(self.dtype, b).as_f64())
            .collect()
    }

    /// Typed copy of the elements; fails if `T` does not match the dtype.
    pub fn to_vec<T: Element>(&self) -> Result<Vec<T>, TensorError> {
        if T::DTYPE != self.dtype {
            return Err(TensorError::DTypeMismatch {
                expected: T::DTYPE,
                found: self.dtype,
            });
        }
        Ok(self
            .data
            .chunks_exact(self.dtype.byte_width())
            .map(T::from_le)
            .collect())
    }

    /// Permute dimensions so the axes read `target`.
    pub fn reorder_axes(&self, target: &Axes) -> Result<Tensor, TensorError> {
        let perm = self.axes.permutation_to(target)?;
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let w = self.dtype.byte_width();
        let src_strides = strides(&self.shape);
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        for_each_index(&new_shape, |idx| {
            let src: usize = idx
                .iter()
                .zip(&perm)
                .map(|(&i, &p)| i * src_strides[p])
                .sum();
            data.extend_from_slice(&self.data[src * w..(src + 1) * w]);
        });
        Ok(Tensor {
            name: self.name.clone(),
            axes: target.clone(),
            shape: new_shape,
            dtype: self.dtype,
            data,
        })
    }

    /// Elementwise conversion. Float to integer rounds half to even and
    /// saturates (NaN becomes 0); integer to integer saturates.
    pub fn cast(&self, to: DType) -> Tensor {
        if to == self.dtype {
            return self.clone();
        }
        let w = self.dtype.byte_width();
        let mut data = Vec::with_capacity(self.len() * to.byte_width());
        for b in self.data.chunks_exact(w) {
            write_scalar(to, read_scalar(self.dtype, b), &mut data);
        }
        Tensor {
            name: self.name.clone(),
            axes: self.axes.clone(),
            shape: self.shape.clone(),
            dtype: to,
            data,
        }
    }

    /// Copy out the half-open per-axis `ranges`.
    pub fn slice(&self, ranges: &[Range<usize>]) -> Result<Tensor, TensorError> {
        if ranges.len() != self.shape.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "{} ranges for rank-{} tensor",
                ranges.len(),
                self.shape.len()
            )));
        }
        for (axis, (r, &s)) in ranges.iter().zip(&self.shape).enumerate() {
            if r.start > r.end || r.end > s {
                return Err(TensorError::OutOfBounds(format!(
                    "range {}..{} on axis {axis} of size {s}",
                    r.start, r.end
                )));
            }
        }
        let starts: Vec<isize> = ranges.iter().map(|r| r.start as isize).collect();
        let lens: Vec<usize> = ranges.iter().map(|r| r.end - r.start).collect();
        Ok(self.gather(&starts, &lens))
    }

    /// Like [`Tensor::slice`], but the window may extend past the tensor
    /// bounds; outside samples replicate the nearest edge element.
    ///
    /// Axes of size zero cannot be padded.
    pub fn slice_replicate(&self, starts: &[isize], lens: &[usize]) -> Result<Tensor, TensorError> {
        if starts.len() != self.shape.len() || lens.len() != self.shape.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "window rank does not match rank-{} tensor",
                self.shape.len()
            )));
        }
        for (axis, (&len, &s)) in lens.iter().zip(&self.shape).enumerate() {
            if s == 0 && len > 0 {
                return Err(TensorError::OutOfBounds(format!(
                    "cannot replicate along empty axis {axis}"
                )));
            }
        }
        Ok(self.gather(starts, lens))
    }

    fn gather(&self, starts: &[isize], lens: &[usize]) -> Tensor {
        let w = self.dtype.byte_width();
        let rank = self.shape.len();
        let src_strides = strides(&self.shape);
        let count = checked_count(lens).unwrap_or(0);
        let mut data = Vec::with_capacity(count * w);
        if rank == 0 || count == 0 {
            return Tensor {
                name: self.name.clone(),
                axes: self.axes.clone(),
                shape: lens.to_vec(),
                dtype: self.dtype,
                data,
            };
        }
        // copy whole runs along the last axis when they are in bounds
        let last = rank - 1;
        let outer: Vec<usize> = lens[..last].to_vec();
        let run_start = starts[last];
        let run_len = lens[last];
        let last_size = self.shape[last] as isize;
        let inside = run_start >= 0 && run_start + run_len as isize <= last_size;
        let clamp = |v: isize, size: usize| v.clamp(0, size as isize - 1) as usize;
        let mut visit = |idx: &[usize]| {
            let base: usize = idx
                .iter()
                .enumerate()
                .map(|(a, &i)| clamp(starts[a] + i as isize, self.shape[a]) * src_strides[a])
                .sum();
            if inside {
                let from = (base + run_start as usize) * w;
                data.extend_from_slice(&self.data[from..from + run_len * w]);
            } else {
                for j in 0..run_len {
                    let col = clamp(run_start + j as isize, self.shape[last]);
                    let from = (base + col) * w;
                    data.extend_from_slice(&self.data[from..from + w]);
                }
            }
        };
        if outer.is_empty() {
            visit(&[]);
        } else {
            for_each_index(&outer, |idx| visit(idx));
        }
        Tensor {
            name: self.name.clone(),
            axes: self.axes.clone(),
            shape: lens.to_vec(),
            dtype: self.dtype,
            data,
        }
    }

    /// Overwrite the region starting at `offsets` with `src`; every other
    /// element is left untouched.
    pub fn write_block(&mut self, src: &Tensor, offsets: &[usize]) -> Result<(), TensorError> {
        if src.dtype != self.dtype {
            return Err(TensorError::DTypeMismatch {
                expected: self.dtype,
                found: src.dtype,
            });
        }
        if src.axes != self.axes {
            return Err(TensorError::BadAxes(format!(
                "block axes '{}' differ from destination axes '{}'",
                src.axes, self.axes
            )));
        }
        if offsets.len() != self.shape.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "{} offsets for rank-{} tensor",
                offsets.len(),
                self.shape.len()
            )));
        }
        for (axis, ((&o, &n), &d)) in offsets.iter().zip(&src.shape).zip(&self.shape).enumerate() {
            if o.checked_add(n).is_none_or(|end| end > d) {
                return Err(TensorError::OutOfBounds(format!(
                    "block {o}..{} on axis {axis} of size {d}",
                    o.saturating_add(n)
                )));
            }
        }
        if src.is_empty() {
            return Ok(());
        }
        let w = self.dtype.byte_width();
        let rank = self.shape.len();
        let dst_strides = strides(&self.shape);
        let last = rank - 1;
        let run = src.shape[last] * w;
        let mut from = 0;
        let mut copy = |idx: &[usize]| {
            let dst: usize = idx
                .iter()
                .enumerate()
                .map(|(a, &i)| (offsets[a] + i) * dst_strides[a])
                .sum::<usize>()
                + offsets[last];
            self.data[dst * w..dst * w + run].copy_from_slice(&src.data[from..from + run]);
            from += run;
        };
        if rank == 1 {
            copy(&[]);
        } else {
            for_each_index(&src.shape[..last], |idx| copy(idx));
        }
        Ok(())
    }
}
