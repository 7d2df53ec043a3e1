//! Rank-4 tensors in `(N, C, H, W)` layout and the primitive kernels that
//! operate on them.
//!
//! Kernels in [`kernels`] are plain functions over tensors. They do not record
//! anything; the autodiff tape in [`crate::autodiff`] calls them for both the
//! forward value and the backward pass.

pub mod kernels;

use std::fmt;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Axis, Error, Result};

/// Floating-point element type. `f32` is the working precision; `f64` is
/// used for gradient checking.
pub trait Scalar:
    Float + Default + Sum + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Bytes per element in the checkpoint payload.
    const BYTES: u8;

    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one element from exactly `Self::BYTES` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = alpha a b + beta c` on strided matrices.
    fn gemm(dims: Gemm, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);
}

/// Shapes and strides for [`Scalar::gemm`]: `a` is `m x k`, `b` is `k x n`,
/// `c` is `m x n`. Strides are `(row, column)` in elements.
#[derive(Clone, Copy, Debug)]
pub struct Gemm {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub c: (usize, usize),
}

impl Gemm {
    fn check(&self, a: usize, b: usize, c: usize) {
        let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
            if rows == 0 || cols == 0 {
                0
            } else {
                (rows - 1) * rs + (cols - 1) * cs + 1
            }
        };
        assert!(last(self.m, self.k, self.a) <= a, "gemm: a too short");
        assert!(last(self.k, self.n, self.b) <= b, "gemm: b too short");
        assert!(last(self.m, self.n, self.c) <= c, "gemm: c too short");
        // Distinct rows and columns of c must not alias.
        assert!(self.m <= 1 || self.n <= 1 || self.c.0 != self.c.1, "gemm: aliasing c strides");
    }
}

impl Scalar for f32 {
    const BYTES: u8 = 4;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    fn gemm(d: Gemm, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        d.check(a.len(), b.len(), c.len());
        // SAFETY: `check` bounds every index the kernel touches within the
        // three slices, and `c` is uniquely borrowed.
        unsafe {
            matrixmultiply::sgemm(
                d.m,
                d.k,
                d.n,
                alpha,
                a.as_ptr(),
                d.a.0 as isize,
                d.a.1 as isize,
                b.as_ptr(),
                d.b.0 as isize,
                d.b.1 as isize,
                beta,
                c.as_mut_ptr(),
                d.c.0 as isize,
                d.c.1 as isize,
            );
        }
    }
}

impl Scalar for f64 {
    const BYTES: u8 = 8;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    fn gemm(d: Gemm, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        d.check(a.len(), b.len(), c.len());
        // SAFETY: `check` bounds every index the kernel touches within the
        // three slices, and `c` is uniquely borrowed.
        unsafe {
            matrixmultiply::dgemm(
                d.m,
                d.k,
                d.n,
                alpha,
                a.as_ptr(),
                d.a.0 as isize,
                d.a.1 as isize,
                b.as_ptr(),
                d.b.0 as isize,
                d.b.1 as isize,
                beta,
                c.as_mut_ptr(),
                d.c.0 as isize,
                d.c.1 as isize,
            );
        }
    }
}

/// `(N, C, H, W)` extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview = &self.data[..self.data.len().min(8)];
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Contract(format!(
                "buffer of {} elements does not fill shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> T) -> Self {
        Tensor {
            shape,
            data: (0..shape.numel()).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    /// The `(n, c)` spatial plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        ensure_same_shape("add", self.shape, other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Channels `start..start + count`, copied.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.c {
            return Err(Error::dim(
                "slice_channels",
                Axis::Channels,
                self.shape.c,
                start + count,
            ));
        }
        let s = self.shape;
        let out_shape = Shape::new(s.n, count, s.h, s.w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s.n {
            let base = (n * s.c + start) * s.plane();
            data.extend_from_slice(&self.data[base..base + count * s.plane()]);
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// `count` samples starting at `start`, copied.
    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.n {
            return Err(Error::dim(
                "slice_batch",
                Axis::Batch,
                self.shape.n,
                start + count,
            ));
        }
        let per = self.shape.c * self.shape.plane();
        Ok(Tensor {
            shape: Shape::new(count, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[start * per..(start + count) * per].to_vec(),
        })
    }

    /// Concatenates along the batch axis.
    pub fn stack_batch(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("stack_batch of zero tensors".into()))?;
        let s = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let ts = t.shape;
            if ts.c != s.c {
                return Err(Error::dim("stack_batch", Axis::Channels, s.c, ts.c));
            }
            if ts.h != s.h {
                return Err(Error::dim("stack_batch", Axis::Height, s.h, ts.h));
            }
            if ts.w != s.w {
                return Err(Error::dim("stack_batch", Axis::Width, s.w, ts.w));
            }
            data.extend_from_slice(&t.data);
            n += ts.n;
        }
        Ok(Tensor {
            shape: Shape::new(n, s.c, s.h, s.w),
            data,
        })
    }
}

pub(crate) fn ensure_same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    let pairs = [
        (Axis::Batch, a.n, b.n),
        (Axis::Channels, a.c, b.c),
        (Axis::Height, a.h, b.h),
        (Axis::Width, a.w, b.w),
    ];
    for (axis, x, y) in pairs {
        if x != y {
            return Err(Error::dim(op, axis, x, y));
        }
    }
    Ok(())
}
