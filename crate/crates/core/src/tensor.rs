//! Dense row-major tensors and the element type they range over.
//!
//! `Tensor<T>` is plain value storage: datasets, parameters, labels, and
//! anything else that does not need gradients lives here. Differentiable
//! computation happens on the [`crate::tape::Tape`], which stores its node
//! values as `Tensor`s.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Element dtype, as encoded in the on-disk tensor format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Floating element type. 32-bit is the training default, 64-bit is used by
/// the finite-difference oracles, which need the headroom.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Sum
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn dtype() -> Dtype;
    fn is_finite(self) -> bool;
    fn is_nan(self) -> bool;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn minimum(self, other: Self) -> Self;

    fn to_le_bytes(self, out: &mut Vec<u8>);
    fn from_le_slice(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn dtype() -> Dtype {
        Dtype::F32
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn is_nan(self) -> bool {
        f32::is_nan(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn maximum(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn minimum(self, other: Self) -> Self {
        f32::min(self, other)
    }
    fn to_le_bytes(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&f32::to_le_bytes(self));
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn dtype() -> Dtype {
        Dtype::F64
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn is_nan(self) -> bool {
        f64::is_nan(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn maximum(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn minimum(self, other: Self) -> Self {
        f64::min(self, other)
    }
    fn to_le_bytes(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&f64::to_le_bytes(self));
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Dense n-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Validation(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::ZERO; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Rank-2 tensor from explicit rows. Test and fixture convenience.
    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("from_rows: no rows".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Validation("from_rows: ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::ONE;
        }
        t
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

    /// Leading dimension, treated as the batch axis.
    pub fn batch_len(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Row width of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.cols();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// The single element of a scalar (one-element) tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    /// Index of the largest entry per row (rank 2). Ties resolve to the
    /// first occurrence.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let w = self.cols();
        (0..self.shape[0])
            .map(|i| {
                let row = &self.data[i * w..(i + 1) * w];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Gather whole rows of a rank-2 tensor.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor<T> {
        let w = self.cols();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![indices.len(), w],
            data,
        }
    }

    /// Per-row convex combination: `out[i] = lambda[i]*a[i] + (1-lambda[i])*b[i]`.
    pub fn mix_rows(a: &Tensor<T>, b: &Tensor<T>, lambda: &[T]) -> Result<Tensor<T>> {
        if a.shape != b.shape {
            return Err(Error::dims("mix_rows", &a.shape, &b.shape));
        }
        if a.rank() != 2 || a.shape[0] != lambda.len() {
            return Err(Error::Validation(format!(
                "mix_rows: {} lambda values for shape {:?}",
                lambda.len(),
                a.shape
            )));
        }
        let w = a.cols();
        let mut data = Vec::with_capacity(a.numel());
        for (i, &l) in lambda.iter().enumerate() {
            let inv = T::ONE - l;
            for j in 0..w {
                data.push(l * a.data[i * w + j] + inv * b.data[i * w + j]);
            }
        }
        Tensor::new(a.shape.clone(), data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// One-hot rows from class indices.
pub fn one_hot<T: Scalar>(labels: &[usize], class_count: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(vec![labels.len(), class_count]);
    for (i, &c) in labels.iter().enumerate() {
        if c >= class_count {
            return Err(Error::Validation(format!(
                "label {c} out of range for {class_count} classes"
            )));
        }
        t.data_mut()[i * class_count + c] = T::ONE;
    }
    Ok(t)
}

/// Class index per row of a one-hot tensor; errors unless each row has
/// exactly one 1 and zeros elsewhere.
pub fn one_hot_to_labels<T: Scalar>(t: &Tensor<T>) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(t.shape()[0]);
    for i in 0..t.shape()[0] {
        let row = t.row(i);
        let mut hit = None;
        for (j, &v) in row.iter().enumerate() {
            if v == T::ONE {
                if hit.is_some() {
                    return Err(Error::Validation(format!("row {i} has multiple 1s")));
                }
                hit = Some(j);
            } else if v != T::ZERO {
                return Err(Error::Validation(format!("row {i} is not one-hot")));
            }
        }
        out.push(hit.ok_or_else(|| Error::Validation(format!("row {i} has no 1")))?);
    }
    Ok(out)
}

// ── Rank-2 kernels shared by the tape's forward and backward passes ─────────

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    // ikj order: streams `b` and `out` rows, vectorizes well.
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// `out[m×k] += a[m×n] · bᵀ` where `b` is `k×n`.
pub(crate) fn matmul_nt_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    n: usize,
    k: usize,
) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::ZERO;
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out[k×n] += aᵀ · b` where `a` is `m×k`, `b` is `m×n`.
pub(crate) fn matmul_tn_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_element_invariant() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn one_hot_round_trip() {
        let t = one_hot::<f32>(&[2, 0, 1], 3).unwrap();
        assert_eq!(one_hot_to_labels(&t).unwrap(), vec![2, 0, 1]);
        let bad = Tensor::<f32>::from_rows(&[&[0.5, 0.5]]).unwrap();
        assert!(one_hot_to_labels(&bad).is_err());
    }

    #[test]
    fn mix_rows_midpoint_symmetry() {
        let a = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor::<f64>::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]).unwrap();
        let ab = Tensor::mix_rows(&a, &b, &[0.5, 0.5]).unwrap();
        let ba = Tensor::mix_rows(&b, &a, &[0.5, 0.5]).unwrap();
        assert_eq!(ab, ba);
    }
}
