//! Dense row-major tensors and the differentiable operation set.
//!
//! Axis order is `(time, height, width, channel)` everywhere; 2D maps are
//! `(height, width, channel)`. Training runs in `f32`, gradient verification
//! in `f64`.

mod graph;
pub mod gradcheck;
pub mod kernels;

use std::fmt;

use crate::error::{Error, Result};

pub use graph::{Graph, GradientMap, Var};
pub use kernels::ResampleMode;

/// On-disk element type code of the tensor container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating-point element type usable in tensors and graphs.
pub trait Scalar:
    num_traits::Float
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes` holds exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
    fn to_bits_u64(self) -> u64;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
}

/// Dense row-major array with shape metadata.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shown = self.data.len().min(8);
        write!(f, "Tensor{:?} {:?}", self.shape, &self.data[..shown])?;
        if self.data.len() > shown {
            write!(f, " ..")?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::config("tensor shape must have at least one axis"));
    }
    if shape.contains(&0) {
        return Err(Error::config(format!("tensor dims must be positive, got {shape:?}")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::config(format!("tensor shape {shape:?} overflows")))
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel = check_shape(&shape)?;
        if numel != data.len() {
            return Err(Error::config(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Panics on an invalid shape; for internally computed shapes.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let numel = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(values: Vec<T>) -> Result<Self> {
        let n = values.len();
        Self::new(vec![n], values)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let numel = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::usage(format!(
                "item() on tensor with shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel = check_shape(shape)?;
        if numel != self.data.len() {
            return Err(Error::config(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.data.len() as f64)
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::config(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// True when shapes match and every element has the same bit pattern.
    pub fn bit_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }

    /// Slice along the leading axis.
    pub fn index_axis0(&self, i: usize) -> Result<Self> {
        if self.shape.len() < 2 || i >= self.shape[0] {
            return Err(Error::usage(format!(
                "index {i} out of range for leading axis of {:?}",
                self.shape
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::usage("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::config(format!(
                    "stack shape mismatch {:?} vs {:?}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }
}

/// 2D cross-correlation of an `H×W×Cin` map with a `k×k×Cin×Cout` kernel.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let k = g.constant(kernel.clone());
    let y = g.conv2d(x, k, stride, pad)?;
    Ok(g.value(y).clone())
}

/// 3D convolution with temporal stride 1 and temporal zero padding `(w_t-1)/2`.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    spatial_stride: usize,
    spatial_pad: usize,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let k = g.constant(kernel.clone());
    let y = g.conv3d(x, k, spatial_stride, spatial_pad)?;
    Ok(g.value(y).clone())
}

/// Mean over consecutive channel groups of size `group`.
pub fn avg_pool_channels<T: Scalar>(input: &Tensor<T>, group: usize) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let y = g.avg_pool_channels(x, group)?;
    Ok(g.value(y).clone())
}

/// Spatial resampling of an `h×w×c` map (leading axes are treated as batch).
pub fn resample<T: Scalar>(
    input: &Tensor<T>,
    target: (usize, usize),
    mode: ResampleMode,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let y = g.resample(x, target, mode)?;
    Ok(g.value(y).clone())
}
