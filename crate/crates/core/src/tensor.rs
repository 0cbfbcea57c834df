//! Dense row-major arrays and the kernels everything else is built on.
//!
//! Layout is channels-last: an image is `[H, W, C]`, a batch `[N, H, W, C]`.
//! Convolution is lowered to a matrix product through [`im2col`]; its
//! gradient scatter is the adjoint [`col2im`].

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Element type of a [`Tensor`]. Implemented for `f32` (training and
/// inference) and `f64` (gradient-check harnesses).
pub trait Scalar:
    Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    /// Raw strided GEMM: `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    /// Pointers and strides must describe in-bounds matrices of the given
    /// dimensions, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Borrowed strided matrix. `transpose` is free.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a, T: Scalar> MatRef<'a, T> {
    /// Row-major contiguous view.
    pub(crate) fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub(crate) fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn rows_from(self, start: usize, count: usize) -> Self {
        Self {
            data: &self.data[start * self.row_stride..],
            rows: count,
            ..self
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0
            || self.cols == 0
            || (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
                < self.data.len()
    }
}

// Output rows per parallel task. Fixed so the split never depends on the
// thread count.
const GEMM_ROW_CHUNK: usize = 256;
const GEMM_PARALLEL_WORK: usize = 1 << 22;

/// `c = alpha * a * b + beta * c` with `c` row-major `[a.rows, b.cols]`.
pub(crate) fn gemm<T: Scalar>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner dimensions");
    assert_eq!(c.len(), m * n, "gemm output size");
    assert!(a.fits() && b.fits(), "gemm operand out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v = if beta == T::zero() {
                T::zero()
            } else {
                *v * beta
            };
        }
        return;
    }
    let run = |a: MatRef<'_, T>, c: &mut [T]| unsafe {
        // SAFETY: bounds checked by `fits` above; `c` is an exclusive borrow
        // and cannot alias the shared operands.
        T::gemm_raw(
            a.rows,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    };
    if m > GEMM_ROW_CHUNK && m * n * k >= GEMM_PARALLEL_WORK {
        c.par_chunks_mut(GEMM_ROW_CHUNK * n)
            .enumerate()
            .for_each(|(i, chunk)| {
                let rows = chunk.len() / n;
                run(a.rows_from(i * GEMM_ROW_CHUNK, rows), chunk);
            });
    } else {
        run(a, c);
    }
}

/// Dense row-major array with an immutable shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor rank must be at least 1"));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::shape(format!(
            "dimension {pos} of {shape:?} is zero; dimensions must be positive"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(format!("element count of {shape:?} overflows")))
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let len = checked_len(&shape)?;
        if data.len() != len {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Panics on an invalid shape; intended for shapes known to be valid.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = checked_len(&shape).expect("invalid tensor shape");
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let len = checked_len(&shape).expect("invalid tensor shape");
        Self {
            shape,
            data: (0..len).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the elements; the shape stays fixed.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterpret with a new shape of equal element count.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let len = checked_len(&shape)?;
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} elements) into {shape:?} ({len} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Flat row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::shape(format!(
                "index {index:?} has rank {}, tensor has rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::shape(format!(
                    "index {index:?} out of bounds for {:?}",
                    self.shape
                )));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    /// Inverse of [`Tensor::offset`].
    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        let mut index = vec![0; self.shape.len()];
        for (slot, &d) in index.iter_mut().zip(&self.shape).rev() {
            *slot = offset % d;
            offset /= d;
        }
        index
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
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
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Inner product accumulated in f64.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "compare")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of item `i` along the leading axis.
    pub fn index_axis0(&self, i: usize) -> Result<Self> {
        if self.rank() < 2 || i >= self.shape[0] {
            return Err(Error::shape(format!(
                "cannot take item {i} of {:?}",
                self.shape
            )));
        }
        let inner = self.data.len() / self.shape[0];
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.same_shape(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape, data })
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Rank-2 dimensions, or a shape error naming `what`.
    pub(crate) fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!(
                "{what} must be rank 2, got {:?}",
                self.shape
            ))),
        }
    }

    /// Rank-3 `[H, W, C]` dimensions, or a shape error naming `what`.
    pub(crate) fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape(format!(
                "{what} must be [H, W, C], got {:?}",
                self.shape
            ))),
        }
    }
}

/// `a [m, k] · b [k, n] -> [m, n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul lhs")?;
    let (k2, n) = b.dims2("matmul rhs")?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(
        T::one(),
        MatRef::new(a.data(), m, k),
        MatRef::new(b.data(), k, n),
        T::zero(),
        &mut out,
    );
    Tensor::new(vec![m, n], out)
}

/// Spatial padding rule for a stride-1 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero-pad so the output keeps the input's height and width.
    Same,
    /// No padding; each spatial axis shrinks by `k - 1`.
    Valid,
}

impl Padding {
    /// Zero rows/columns added before and after each spatial axis.
    /// Odd leftovers go after, as in the common deep-learning toolkits.
    pub fn pads(self, kernel: usize) -> (usize, usize) {
        match self {
            Padding::Same => {
                let before = (kernel - 1) / 2;
                (before, kernel - 1 - before)
            }
            Padding::Valid => (0, 0),
        }
    }

    /// Output `(H, W)` for an input of `(h, w)`.
    pub fn output_dims(self, h: usize, w: usize, kernel: usize) -> Result<(usize, usize)> {
        if kernel == 0 {
            return Err(Error::shape("kernel size must be positive"));
        }
        let (b, a) = self.pads(kernel);
        let (ph, pw) = (h + b + a, w + b + a);
        if ph < kernel || pw < kernel {
            return Err(Error::shape(format!(
                "{kernel}x{kernel} kernel larger than padded input {ph}x{pw}"
            )));
        }
        Ok((ph - kernel + 1, pw - kernel + 1))
    }
}

impl std::fmt::Display for Padding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        })
    }
}

/// Unfold receptive fields into rows: `[H, W, C] -> [Hout*Wout, k*k*C]`,
/// each row flattened in `(ky, kx, c)` order. Stride is 1.
pub fn im2col<T: Scalar>(input: &Tensor<T>, kernel: usize, padding: Padding) -> Result<Tensor<T>> {
    let (h, w, c) = input.dims3("im2col input")?;
    let (oh, ow) = padding.output_dims(h, w, kernel)?;
    let (pad, _) = padding.pads(kernel);
    let row_len = kernel * kernel * c;
    let mut cols = vec![T::zero(); oh * ow * row_len];
    let src = input.data();
    cols.par_chunks_mut(ow * row_len)
        .enumerate()
        .for_each(|(oy, out_row)| {
            for ox in 0..ow {
                let row = &mut out_row[ox * row_len..(ox + 1) * row_len];
                for ky in 0..kernel {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let s = (iy as usize * w + ix as usize) * c;
                        let d = (ky * kernel + kx) * c;
                        row[d..d + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        });
    Tensor::new(vec![oh * ow, row_len], cols)
}

/// Adjoint of [`im2col`]: scatter-add patch rows back into `[H, W, C]`,
/// dropping contributions that fall on padding.
pub fn col2im<T: Scalar>(
    cols: &Tensor<T>,
    input_shape: &[usize],
    kernel: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (h, w, c) = match *input_shape {
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::shape(format!(
                "col2im target must be [H, W, C], got {input_shape:?}"
            )))
        }
    };
    let (oh, ow) = padding.output_dims(h, w, kernel)?;
    let row_len = kernel * kernel * c;
    let (rows, width) = cols.dims2("col2im columns")?;
    if rows != oh * ow || width != row_len {
        return Err(Error::shape(format!(
            "col2im columns {:?} inconsistent with input {input_shape:?}, {kernel}x{kernel} {padding} (expected [{}, {row_len}])",
            cols.shape(),
            oh * ow
        )));
    }
    let (pad, _) = padding.pads(kernel);
    let src = cols.data();
    let mut out = vec![T::zero(); h * w * c];
    // Gather form: each output pixel sums the patch entries that read it, so
    // image rows can be filled independently.
    out.par_chunks_mut(w * c)
        .enumerate()
        .for_each(|(iy, img_row)| {
            for ky in 0..kernel {
                let oy = iy as isize + pad as isize - ky as isize;
                if oy < 0 || oy >= oh as isize {
                    continue;
                }
                let oy = oy as usize;
                for ix in 0..w {
                    let dst = &mut img_row[ix * c..(ix + 1) * c];
                    for kx in 0..kernel {
                        let ox = ix as isize + pad as isize - kx as isize;
                        if ox < 0 || ox >= ow as isize {
                            continue;
                        }
                        let s = (oy * ow + ox as usize) * row_len + (ky * kernel + kx) * c;
                        for (d, &v) in dst.iter_mut().zip(&src[s..s + c]) {
                            *d += v;
                        }
                    }
                }
            }
        });
    Tensor::new(input_shape.to_vec(), out)
}

/// I.i.d. uniform samples in `[lo, hi)`.
pub fn rng_uniform(
    rng: &mut SeededRng,
    shape: impl Into<Vec<usize>>,
    lo: f32,
    hi: f32,
) -> Result<Tensor<f32>> {
    if lo >= hi || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::arg(format!(
            "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
        )));
    }
    let shape = shape.into();
    let len = checked_len(&shape)?;
    let data = (0..len).map(|_| rng.uniform_f32(lo, hi)).collect();
    Tensor::new(shape, data)
}

/// He-normal initialisation: N(0, 2 / fan_in).
pub fn he_normal(rng: &mut SeededRng, shape: impl Into<Vec<usize>>, fan_in: usize) -> Tensor<f32> {
    let std_dev = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.normal(0.0, std_dev) as f32)
}
