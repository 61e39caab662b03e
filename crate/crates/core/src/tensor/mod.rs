//! Dense 5-D tensors in NCTHW layout and the primitive operations the layers
//! are built from: 3-D convolution, activations, nearest upsampling, and the
//! usual elementwise/reduction helpers. Every primitive with a backward pass
//! exposes an explicit adjoint function; there is no autodiff graph.

mod conv;
mod ops;

pub use conv::{conv3d_backward, conv3d_backward_input, conv3d_forward, ConvGeometry};
pub use ops::{
    activation, activation_backward, upsample3d_backward, upsample3d_nearest, Activation,
};

use crate::error::{Error, Result};
use std::fmt;

/// Element type for all tensors: f32 for training, f64 for gradient checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + Copy
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    const DTYPE: Dtype;

    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// C <- alpha * A * B + beta * C, row-major strides given explicitly.
    ///
    /// # Safety
    /// Pointers must address matrices of the stated dimensions and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Single,
    Double,
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::Single;

    fn of_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::Double;

    fn of_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dimensions (batch, channels, frames, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims5 {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims5 {
    pub fn new(n: usize, c: usize, t: usize, h: usize, w: usize) -> Self {
        Dims5 { n, c, t, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per frame volume (t*h*w).
    pub fn voxels(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }
}

impl fmt::Display for Dims5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}x{}", self.n, self.c, self.t, self.h, self.w)
    }
}

/// Dense 5-D tensor, row-major NCTHW.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5<T> {
    dims: Dims5,
    data: Vec<T>,
}

impl<T: Scalar> Tensor5<T> {
    pub fn zeros(dims: Dims5) -> Self {
        Tensor5 {
            dims,
            data: vec![T::zero(); dims.len()],
        }
    }

    pub fn filled(dims: Dims5, value: T) -> Self {
        Tensor5 {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims5, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(
                "Tensor5::from_vec",
                format!("{} elements", dims.len()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor5 { dims, data })
    }

    pub fn from_fn(dims: Dims5, f: impl FnMut(usize) -> T) -> Self {
        let data = (0..dims.len()).map(f).collect();
        Tensor5 { dims, data }
    }

    pub fn dims(&self) -> Dims5 {
        self.dims
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

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> usize {
        (((n * self.dims.c + c) * self.dims.t + t) * self.dims.h + h) * self.dims.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, t, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, t: usize, h: usize, w: usize) -> &mut T {
        let i = self.index(n, c, t, h, w);
        &mut self.data[i]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor5 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// self += other * s
    pub fn add_scaled(&mut self, other: &Self, s: T) -> Result<()> {
        self.check_same_dims(other, "add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * s;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "elementwise_add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "elementwise_sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, "elementwise_mul", |a, b| a * b)
    }

    fn zip(&self, other: &Self, context: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_dims(other, context)?;
        Ok(Tensor5 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn check_same_dims(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(context, self.dims, other.dims));
        }
        Ok(())
    }

    pub fn reduce(&self, kind: Reduction) -> T {
        // Accumulate in f64 so single-precision reductions stay accurate.
        let acc: f64 = match kind {
            Reduction::Sum | Reduction::Mean => self.data.iter().map(|v| v.as_f64()).sum(),
            Reduction::MeanAbs => self.data.iter().map(|v| v.as_f64().abs()).sum(),
        };
        let acc = match kind {
            Reduction::Sum => acc,
            Reduction::Mean | Reduction::MeanAbs => acc / self.data.len() as f64,
        };
        T::of_f64(acc)
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        let (a, b) = (self.dims, other.dims);
        if a.n != b.n || a.t != b.t || a.h != b.h || a.w != b.w {
            return Err(Error::shape("concat_channels", a, b));
        }
        let out_dims = Dims5::new(a.n, a.c + b.c, a.t, a.h, a.w);
        let vol = a.voxels();
        let mut out = Tensor5::zeros(out_dims);
        for n in 0..a.n {
            let dst_base = n * out_dims.c * vol;
            out.data[dst_base..dst_base + a.c * vol]
                .copy_from_slice(&self.data[n * a.c * vol..(n + 1) * a.c * vol]);
            out.data[dst_base + a.c * vol..dst_base + (a.c + b.c) * vol]
                .copy_from_slice(&other.data[n * b.c * vol..(n + 1) * b.c * vol]);
        }
        Ok(out)
    }

    /// Split a channel-concatenated tensor back into (first c_first channels, rest).
    pub fn split_channels(&self, c_first: usize) -> Result<(Self, Self)> {
        let d = self.dims;
        if c_first >= d.c {
            return Err(Error::shape(
                "split_channels",
                format!("c_first < {}", d.c),
                c_first,
            ));
        }
        let c_rest = d.c - c_first;
        let vol = d.voxels();
        let mut first = Tensor5::zeros(Dims5::new(d.n, c_first, d.t, d.h, d.w));
        let mut rest = Tensor5::zeros(Dims5::new(d.n, c_rest, d.t, d.h, d.w));
        for n in 0..d.n {
            let src = n * d.c * vol;
            first.data[n * c_first * vol..(n + 1) * c_first * vol]
                .copy_from_slice(&self.data[src..src + c_first * vol]);
            rest.data[n * c_rest * vol..(n + 1) * c_rest * vol]
                .copy_from_slice(&self.data[src + c_first * vol..src + d.c * vol]);
        }
        Ok((first, rest))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor5<U> {
        Tensor5 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    MeanAbs,
}

/// Minimal dense row-major matrix, used for Gram products and spectral norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("inner dim {}", a.cols),
            format!("inner dim {}", b.rows),
        ));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    unsafe {
        T::gemm(
            a.rows,
            a.cols,
            b.cols,
            T::one(),
            a.data.as_ptr(),
            a.cols as isize,
            1,
            b.data.as_ptr(),
            b.cols as isize,
            1,
            T::zero(),
            c.data.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
    Ok(c)
}
