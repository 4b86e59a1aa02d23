//! Dense N-dimensional tensors with reverse-mode automatic differentiation.
//!
//! The operator set is exactly what the axes-swapping network needs: 2D
//! convolution (3x3, stride 1, zero padding 1), ReLU, elementwise add/sub,
//! axis permutation, and scalar reductions, plus the Adam optimizer.
//! Training runs in `f32`; gradient verification against finite differences
//! uses the same code instantiated at `f64`.

mod adam;
mod conv;
mod graph;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, VarId};

use crate::error::{Error, Result};

/// Element type for tensors: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from a shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be >= 1, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape_mismatch(
                "tensor construction",
                &shape,
                &data.len(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
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

    /// True when the tensor holds exactly one element.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<T> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::InvalidArgument(format!(
                "expected a scalar tensor, got shape {:?}",
                self.shape
            )))
        }
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, &ix) in index.iter().enumerate() {
            debug_assert!(ix < self.shape[i]);
            off = off * self.shape[i] + ix;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Converts element-wise between scalar types (used to promote `f32`
    /// weights to `f64` for gradient verification).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
        }
    }

    /// Materializes `output[sigma(i)] = input[i]`, i.e. axis `order[k]` of
    /// the input becomes axis `k` of the output. The result is contiguous.
    pub fn permute_axes(&self, order: &[usize]) -> Result<Tensor<T>> {
        let n = self.shape.len();
        if !is_permutation(order, n) {
            return Err(Error::InvalidArgument(format!(
                "axis order {order:?} is not a permutation of 0..{n}"
            )));
        }
        let out_shape: Vec<usize> = order.iter().map(|&a| self.shape[a]).collect();
        let mut out = vec![T::zero(); self.data.len()];

        // Strides of the input axes as seen in output axis order.
        let in_strides = row_major_strides(&self.shape);
        let src_strides: Vec<usize> = order.iter().map(|&a| in_strides[a]).collect();

        let mut idx = vec![0usize; n];
        for slot in out.iter_mut() {
            let mut src = 0;
            for (d, &i) in idx.iter().enumerate() {
                src += i * src_strides[d];
            }
            *slot = self.data[src];
            // Odometer increment over the output shape.
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Tensor::new(out_shape, out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::shape_mismatch(
                "elementwise op",
                &self.shape,
                &other.shape,
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

pub(crate) fn is_permutation(order: &[usize], n: usize) -> bool {
    if order.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &a in order {
        if a >= n || seen[a] {
            return false;
        }
        seen[a] = true;
    }
    true
}

/// Inverse of a permutation given as `order[new_axis] = old_axis`.
pub fn invert_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; order.len()];
    for (new_axis, &old_axis) in order.iter().enumerate() {
        inv[old_axis] = new_axis;
    }
    inv
}
