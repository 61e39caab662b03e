//! 3-D convolution forward and its exact adjoints.
//!
//! The hot path lowers each sample to column tiles (im2col over whole output
//! rows) and runs GEMM on the tile, so most of the arithmetic happens inside
//! the packed matrix kernels. Backward reuses the same tiling: grad_weight is
//! `grad_out * col^T`, grad_input is `W^T * grad_out` scattered back through
//! col2im. Everything is sequential and therefore bitwise deterministic.

use super::{Dims5, Scalar, Tensor5};
use crate::error::{Error, Result};

/// Kernel/stride/padding/dilation for one 3-D convolution, ordered (t, h, w).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
    pub dilation: (usize, usize, usize),
}

impl ConvGeometry {
    pub fn new(kernel: (usize, usize, usize)) -> Self {
        ConvGeometry {
            kernel,
            stride: (1, 1, 1),
            padding: (0, 0, 0),
            dilation: (1, 1, 1),
        }
    }

    pub fn with_stride(mut self, stride: (usize, usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: (usize, usize, usize)) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_dilation(mut self, dilation: (usize, usize, usize)) -> Self {
        self.dilation = dilation;
        self
    }

    /// Padding that preserves dims for stride 1 (kernel-centered zero padding).
    pub fn same_padding(mut self) -> Self {
        let (kt, kh, kw) = self.kernel;
        let (dt, dh, dw) = self.dilation;
        self.padding = (dt * (kt - 1) / 2, dh * (kh - 1) / 2, dw * (kw - 1) / 2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (kt, kh, kw) = self.kernel;
        let (st, sh, sw) = self.stride;
        let (dt, dh, dw) = self.dilation;
        if kt == 0 || kh == 0 || kw == 0 || st == 0 || sh == 0 || sw == 0 {
            return Err(Error::InvalidGeometry(format!(
                "kernel and stride components must be >= 1: {self:?}"
            )));
        }
        if dt == 0 || dh == 0 || dw == 0 {
            return Err(Error::InvalidGeometry(format!(
                "dilation components must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn out_extent(&self, input: usize, axis: usize) -> Result<usize> {
        let (k, s, p, d) = match axis {
            0 => (
                self.kernel.0,
                self.stride.0,
                self.padding.0,
                self.dilation.0,
            ),
            1 => (
                self.kernel.1,
                self.stride.1,
                self.padding.1,
                self.dilation.1,
            ),
            _ => (
                self.kernel.2,
                self.stride.2,
                self.padding.2,
                self.dilation.2,
            ),
        };
        let span = input as isize + 2 * p as isize - (d * (k - 1)) as isize - 1;
        if span < 0 {
            return Err(Error::InvalidGeometry(format!(
                "non-positive output extent: input {input}, kernel {k}, stride {s}, pad {p}, dilation {d}"
            )));
        }
        Ok(span as usize / s + 1)
    }

    /// Output (t, h, w) for the given input extents.
    pub fn out_dims(&self, t: usize, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        Ok((
            self.out_extent(t, 0)?,
            self.out_extent(h, 1)?,
            self.out_extent(w, 2)?,
        ))
    }
}

fn check_conv_args<T: Scalar>(
    input: &Tensor5<T>,
    weight: &Tensor5<T>,
    bias: Option<&[T]>,
    geom: &ConvGeometry,
) -> Result<Dims5> {
    let id = input.dims();
    let wd = weight.dims();
    if wd.c != id.c {
        return Err(Error::shape("conv3d input channels", wd.c, id.c));
    }
    if (wd.t, wd.h, wd.w) != geom.kernel {
        return Err(Error::shape(
            "conv3d kernel dims",
            format!("{:?}", geom.kernel),
            format!("({}, {}, {})", wd.t, wd.h, wd.w),
        ));
    }
    if let Some(b) = bias {
        if b.len() != wd.n {
            return Err(Error::shape("conv3d bias length", wd.n, b.len()));
        }
    }
    let (ot, oh, ow) = geom.out_dims(id.t, id.h, id.w)?;
    Ok(Dims5::new(id.n, wd.n, ot, oh, ow))
}

/// Column-tile working set target, in elements. Tiles cover whole output rows.
const TILE_TARGET: usize = 1 << 22;

fn rows_per_tile(k_rows: usize, ow: usize) -> usize {
    (TILE_TARGET / (k_rows * ow)).max(1)
}

/// Per-axis loop bounds for one kernel tap: output coordinates whose sampled
/// input lands inside the frame. `off = d * tap - pad`.
#[inline]
fn valid_range(extent_in: usize, extent_out: usize, stride: usize, off: isize) -> (usize, usize) {
    // need 0 <= o*stride + off < extent_in
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let hi_num = extent_in as isize - off;
    if hi_num <= 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize).div_ceil(stride).min(extent_out);
    (lo.min(hi), hi)
}

struct ColLayout {
    in_c: usize,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
    padding: (usize, usize, usize),
    dilation: (usize, usize, usize),
    in_t: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl ColLayout {
    fn new<T: Scalar>(input: &Tensor5<T>, geom: &ConvGeometry, out: Dims5) -> Self {
        let id = input.dims();
        ColLayout {
            in_c: id.c,
            kernel: geom.kernel,
            stride: geom.stride,
            padding: geom.padding,
            dilation: geom.dilation,
            in_t: id.t,
            in_h: id.h,
            in_w: id.w,
            out_h: out.h,
            out_w: out.w,
        }
    }

    fn k_rows(&self) -> usize {
        self.in_c * self.kernel.0 * self.kernel.1 * self.kernel.2
    }

    /// Fill `col` (k_rows x ncols) for output rows [row0, row1), where an
    /// output row is one (ot, oy) pair of out_w columns.
    fn fill_tile<T: Scalar>(&self, sample: &[T], row0: usize, row1: usize, col: &mut [T]) {
        let ncols = (row1 - row0) * self.out_w;
        let (kt, kh, kw) = self.kernel;
        let (st, sh, sw) = self.stride;
        let (pt, ph, pw) = self.padding;
        let (dt, dh, dw) = self.dilation;
        let in_plane = self.in_h * self.in_w;
        let in_vol = self.in_t * in_plane;

        let mut kidx = 0;
        for ic in 0..self.in_c {
            let chan = &sample[ic * in_vol..(ic + 1) * in_vol];
            for tt in 0..kt {
                let off_t = (tt * dt) as isize - pt as isize;
                for yy in 0..kh {
                    let off_y = (yy * dh) as isize - ph as isize;
                    for xx in 0..kw {
                        let off_x = (xx * dw) as isize - pw as isize;
                        let dst_row = &mut col[kidx * ncols..(kidx + 1) * ncols];
                        let (ox_lo, ox_hi) = valid_range(self.in_w, self.out_w, sw, off_x);
                        for row in row0..row1 {
                            let ot = row / self.out_h;
                            let oy = row % self.out_h;
                            let dst = &mut dst_row
                                [(row - row0) * self.out_w..(row - row0 + 1) * self.out_w];
                            let it = ot as isize * st as isize + off_t;
                            let iy = oy as isize * sh as isize + off_y;
                            if it < 0
                                || it >= self.in_t as isize
                                || iy < 0
                                || iy >= self.in_h as isize
                                || ox_lo >= ox_hi
                            {
                                dst.fill(T::zero());
                                continue;
                            }
                            let src_base = it as usize * in_plane + iy as usize * self.in_w;
                            dst[..ox_lo].fill(T::zero());
                            dst[ox_hi..].fill(T::zero());
                            if sw == 1 {
                                let ix0 = (ox_lo as isize + off_x) as usize;
                                dst[ox_lo..ox_hi].copy_from_slice(
                                    &chan[src_base + ix0..src_base + ix0 + (ox_hi - ox_lo)],
                                );
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = (ox as isize * sw as isize + off_x) as usize;
                                    dst[ox] = chan[src_base + ix];
                                }
                            }
                        }
                        kidx += 1;
                    }
                }
            }
        }
    }

    /// Scatter-add `col` (k_rows x ncols) for output rows [row0, row1) back
    /// into the input sample gradient.
    fn scatter_tile<T: Scalar>(&self, col: &[T], row0: usize, row1: usize, grad: &mut [T]) {
        let ncols = (row1 - row0) * self.out_w;
        let (kt, kh, kw) = self.kernel;
        let (st, sh, sw) = self.stride;
        let (pt, ph, pw) = self.padding;
        let (dt, dh, dw) = self.dilation;
        let in_plane = self.in_h * self.in_w;
        let in_vol = self.in_t * in_plane;

        let mut kidx = 0;
        for ic in 0..self.in_c {
            let chan = &mut grad[ic * in_vol..(ic + 1) * in_vol];
            for tt in 0..kt {
                let off_t = (tt * dt) as isize - pt as isize;
                for yy in 0..kh {
                    let off_y = (yy * dh) as isize - ph as isize;
                    for xx in 0..kw {
                        let off_x = (xx * dw) as isize - pw as isize;
                        let src_row = &col[kidx * ncols..(kidx + 1) * ncols];
                        let (ox_lo, ox_hi) = valid_range(self.in_w, self.out_w, sw, off_x);
                        for row in row0..row1 {
                            let ot = row / self.out_h;
                            let oy = row % self.out_h;
                            let it = ot as isize * st as isize + off_t;
                            let iy = oy as isize * sh as isize + off_y;
                            if it < 0
                                || it >= self.in_t as isize
                                || iy < 0
                                || iy >= self.in_h as isize
                                || ox_lo >= ox_hi
                            {
                                continue;
                            }
                            let src =
                                &src_row[(row - row0) * self.out_w..(row - row0 + 1) * self.out_w];
                            let dst_base = it as usize * in_plane + iy as usize * self.in_w;
                            if sw == 1 {
                                let ix0 = (ox_lo as isize + off_x) as usize;
                                let dst =
                                    &mut chan[dst_base + ix0..dst_base + ix0 + (ox_hi - ox_lo)];
                                for (d, &s) in dst.iter_mut().zip(&src[ox_lo..ox_hi]) {
                                    *d += s;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = (ox as isize * sw as isize + off_x) as usize;
                                    chan[dst_base + ix] += src[ox];
                                }
                            }
                        }
                        kidx += 1;
                    }
                }
            }
        }
    }
}

/// out[n,o,t,y,x] = bias[o] + sum over (i, kt, kh, kw) of
/// weight[o,i,kt,kh,kw] * zero-padded input.
pub fn conv3d_forward<T: Scalar>(
    input: &Tensor5<T>,
    weight: &Tensor5<T>,
    bias: &[T],
    geom: &ConvGeometry,
) -> Result<Tensor5<T>> {
    let out_dims = check_conv_args(input, weight, Some(bias), geom)?;
    let layout = ColLayout::new(input, geom, out_dims);
    let k_rows = layout.k_rows();
    let oc = out_dims.c;
    let s_cols = out_dims.voxels();
    let out_rows_total = out_dims.t * out_dims.h;
    let tile_rows = rows_per_tile(k_rows, out_dims.w);
    let in_vol = input.dims().c * input.dims().voxels();

    let mut out: Tensor5<T> = Tensor5::zeros(out_dims);
    let mut col = vec![T::zero(); k_rows * tile_rows * out_dims.w];
    for n in 0..out_dims.n {
        let sample = &input.data()[n * in_vol..(n + 1) * in_vol];
        let out_base = n * oc * s_cols;
        let mut row0 = 0;
        while row0 < out_rows_total {
            let row1 = (row0 + tile_rows).min(out_rows_total);
            let ncols = (row1 - row0) * out_dims.w;
            layout.fill_tile(sample, row0, row1, &mut col[..k_rows * ncols]);
            unsafe {
                T::gemm(
                    oc,
                    k_rows,
                    ncols,
                    T::one(),
                    weight.data().as_ptr(),
                    k_rows as isize,
                    1,
                    col.as_ptr(),
                    ncols as isize,
                    1,
                    T::zero(),
                    out.data_mut()
                        .as_mut_ptr()
                        .add(out_base + row0 * out_dims.w),
                    s_cols as isize,
                    1,
                );
            }
            row0 = row1;
        }
        for o in 0..oc {
            let b = bias[o];
            if b != T::zero() {
                for v in &mut out.data_mut()[out_base + o * s_cols..out_base + (o + 1) * s_cols] {
                    *v += b;
                }
            }
        }
    }
    debug_assert!(out.all_finite());
    Ok(out)
}

fn check_grad_out<T: Scalar>(
    grad_out: &Tensor5<T>,
    input_dims: Dims5,
    weight: &Tensor5<T>,
    geom: &ConvGeometry,
) -> Result<Dims5> {
    let (ot, oh, ow) = geom.out_dims(input_dims.t, input_dims.h, input_dims.w)?;
    let expected = Dims5::new(input_dims.n, weight.dims().n, ot, oh, ow);
    if grad_out.dims() != expected {
        return Err(Error::shape(
            "conv3d_backward grad_out",
            expected,
            grad_out.dims(),
        ));
    }
    if weight.dims().c != input_dims.c {
        return Err(Error::shape(
            "conv3d_backward input channels",
            weight.dims().c,
            input_dims.c,
        ));
    }
    Ok(expected)
}

/// Exact adjoints of [`conv3d_forward`] with respect to input, weight and bias.
pub fn conv3d_backward<T: Scalar>(
    grad_out: &Tensor5<T>,
    input: &Tensor5<T>,
    weight: &Tensor5<T>,
    geom: &ConvGeometry,
) -> Result<(Tensor5<T>, Tensor5<T>, Vec<T>)> {
    let out_dims = check_grad_out(grad_out, input.dims(), weight, geom)?;
    let layout = ColLayout::new(input, geom, out_dims);
    let k_rows = layout.k_rows();
    let oc = out_dims.c;
    let s_cols = out_dims.voxels();
    let out_rows_total = out_dims.t * out_dims.h;
    let tile_rows = rows_per_tile(k_rows, out_dims.w);
    let in_vol = input.dims().c * input.dims().voxels();

    let mut grad_input = Tensor5::zeros(input.dims());
    let mut grad_weight = Tensor5::zeros(weight.dims());
    let mut grad_bias_acc = vec![0.0f64; oc];

    let mut col = vec![T::zero(); k_rows * tile_rows * out_dims.w];
    let mut col_grad = vec![T::zero(); k_rows * tile_rows * out_dims.w];
    for n in 0..out_dims.n {
        let sample = &input.data()[n * in_vol..(n + 1) * in_vol];
        let go_base = n * oc * s_cols;
        let mut row0 = 0;
        while row0 < out_rows_total {
            let row1 = (row0 + tile_rows).min(out_rows_total);
            let ncols = (row1 - row0) * out_dims.w;
            let go_ptr = unsafe { grad_out.data().as_ptr().add(go_base + row0 * out_dims.w) };

            // grad_weight += grad_out_tile (oc x ncols) * col_tile^T (ncols x K)
            layout.fill_tile(sample, row0, row1, &mut col[..k_rows * ncols]);
            unsafe {
                T::gemm(
                    oc,
                    ncols,
                    k_rows,
                    T::one(),
                    go_ptr,
                    s_cols as isize,
                    1,
                    col.as_ptr(),
                    1,
                    ncols as isize,
                    T::one(),
                    grad_weight.data_mut().as_mut_ptr(),
                    k_rows as isize,
                    1,
                );
            }

            // col_grad = W^T (K x oc) * grad_out_tile (oc x ncols), then col2im
            unsafe {
                T::gemm(
                    k_rows,
                    oc,
                    ncols,
                    T::one(),
                    weight.data().as_ptr(),
                    1,
                    k_rows as isize,
                    go_ptr,
                    s_cols as isize,
                    1,
                    T::zero(),
                    col_grad.as_mut_ptr(),
                    ncols as isize,
                    1,
                );
            }
            let gin = &mut grad_input.data_mut()[n * in_vol..(n + 1) * in_vol];
            layout.scatter_tile(&col_grad[..k_rows * ncols], row0, row1, gin);
            row0 = row1;
        }
        for o in 0..oc {
            let row = &grad_out.data()[go_base + o * s_cols..go_base + (o + 1) * s_cols];
            grad_bias_acc[o] += row.iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    let grad_bias = grad_bias_acc.into_iter().map(T::of_f64).collect();
    Ok((grad_input, grad_weight, grad_bias))
}

/// Adjoint with respect to the input only. Used where parameter gradients are
/// not needed (e.g. back-propagating a discriminator score into its input).
pub fn conv3d_backward_input<T: Scalar>(
    grad_out: &Tensor5<T>,
    input_dims: Dims5,
    weight: &Tensor5<T>,
    geom: &ConvGeometry,
) -> Result<Tensor5<T>> {
    let out_dims = check_grad_out(grad_out, input_dims, weight, geom)?;
    let mut layout_input = Tensor5::zeros(input_dims);
    let layout = ColLayout::new(&layout_input, geom, out_dims);
    let k_rows = layout.k_rows();
    let oc = out_dims.c;
    let s_cols = out_dims.voxels();
    let out_rows_total = out_dims.t * out_dims.h;
    let tile_rows = rows_per_tile(k_rows, out_dims.w);
    let in_vol = input_dims.c * input_dims.voxels();

    let mut col_grad = vec![T::zero(); k_rows * tile_rows * out_dims.w];
    for n in 0..out_dims.n {
        let go_base = n * oc * s_cols;
        let mut row0 = 0;
        while row0 < out_rows_total {
            let row1 = (row0 + tile_rows).min(out_rows_total);
            let ncols = (row1 - row0) * out_dims.w;
            unsafe {
                T::gemm(
                    k_rows,
                    oc,
                    ncols,
                    T::one(),
                    weight.data().as_ptr(),
                    1,
                    k_rows as isize,
                    grad_out.data().as_ptr().add(go_base + row0 * out_dims.w),
                    s_cols as isize,
                    1,
                    T::zero(),
                    col_grad.as_mut_ptr(),
                    ncols as isize,
                    1,
                );
            }
            let gin = &mut layout_input.data_mut()[n * in_vol..(n + 1) * in_vol];
            layout.scatter_tile(&col_grad[..k_rows * ncols], row0, row1, gin);
            row0 = row1;
        }
    }
    Ok(layout_input)
}
