//! Convolution kernels (im2col + GEMM) used by the tape.

use crate::error::{Result, TensorError};
use crate::scalar::{gemm, Mat, Scalar};

/// Geometry of a 2-D cross-correlation layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square odd kernel, stride 1, size-preserving padding, with bias.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self::same_rect(in_channels, out_channels, kernel, kernel)
    }

    /// Rectangular (e.g. `1 x n`) stride-1 kernel with size-preserving padding.
    pub fn same_rect(in_channels: usize, out_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride: 1,
            pad_h: kernel_h / 2,
            pad_w: kernel_w / 2,
            has_bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("stride", self.stride),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TensorError::Config(format!("conv {name} must be positive")));
            }
        }
        Ok(())
    }

    /// `floor((in + 2 pad - kernel) / stride) + 1` along each axis.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |name: &str, n: usize, pad: usize, k: usize| -> Result<usize> {
            let padded = n + 2 * pad;
            if padded < k {
                return Err(TensorError::shape(
                    "conv2d",
                    format!("{name}: padded input {padded} smaller than kernel {k}"),
                ));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((
            axis("height", h, self.pad_h, self.kernel_h)?,
            axis("width", w, self.pad_w, self.kernel_w)?,
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

/// Output columns `[lo, hi)` whose input column `ox * stride + kx - pad` is in range.
fn valid_cols(g: &Geometry, s: &ConvSpec, kx: usize) -> (usize, usize) {
    let lo = s.pad_w.saturating_sub(kx).div_ceil(s.stride).min(g.ow);
    let hi = if g.w + s.pad_w > kx {
        ((g.w + s.pad_w - kx - 1) / s.stride + 1).min(g.ow)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, s: &ConvSpec, cols: &mut [T]) {
    let p = g.oh * g.ow;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..s.kernel_h {
            for kx in 0..s.kernel_w {
                let row = (ci * s.kernel_h + ky) * s.kernel_w + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, s, kx);
                for oy in 0..g.oh {
                    let iy = (oy * s.stride + ky) as isize - s.pad_h as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if s.stride == 1 {
                        let start = lo + kx - s.pad_w;
                        out_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (ox, v) in out_row[lo..hi].iter_mut().enumerate() {
                            *v = src[(lo + ox) * s.stride + kx - s.pad_w];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &Geometry, s: &ConvSpec, dx: &mut [T]) {
    let p = g.oh * g.ow;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..s.kernel_h {
            for kx in 0..s.kernel_w {
                let row = (ci * s.kernel_h + ky) * s.kernel_w + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, s, kx);
                for oy in 0..g.oh {
                    let iy = (oy * s.stride + ky) as isize - s.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    if s.stride == 1 {
                        let start = lo + kx - s.pad_w;
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(&src_row[lo..hi]) {
                            *d = *d + v;
                        }
                    } else {
                        for ox in lo..hi {
                            let ix = ox * s.stride + kx - s.pad_w;
                            dst[ix] = dst[ix] + src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Checks `x` / weight / bias shapes against the spec, returning output dims.
pub(crate) fn check_conv2d(
    x_shape: &[usize],
    w_shape: &[usize],
    b_shape: Option<&[usize]>,
    s: &ConvSpec,
) -> Result<[usize; 4]> {
    s.validate()?;
    let [n, c, h, w] = match x_shape {
        &[n, c, h, w] => [n, c, h, w],
        other => {
            return Err(TensorError::shape("conv2d", format!("input must be 4-D, got {other:?}")))
        }
    };
    if c != s.in_channels {
        return Err(TensorError::shape(
            "conv2d",
            format!("input channels: spec expects {}, tensor has {c}", s.in_channels),
        ));
    }
    if w_shape != s.weight_shape() {
        return Err(TensorError::shape(
            "conv2d",
            format!("weight shape: spec expects {:?}, got {w_shape:?}", s.weight_shape()),
        ));
    }
    match (s.has_bias, b_shape) {
        (true, Some(b)) if b == [s.out_channels] => {}
        (false, None) => {}
        (true, Some(b)) => {
            return Err(TensorError::shape(
                "conv2d",
                format!("bias shape: expected [{}], got {b:?}", s.out_channels),
            ))
        }
        (true, None) => return Err(TensorError::shape("conv2d", "bias: spec declares a bias but none given")),
        (false, Some(_)) => return Err(TensorError::shape("conv2d", "bias: spec declares no bias")),
    }
    let (oh, ow) = s.output_size(h, w)?;
    Ok([n, s.out_channels, oh, ow])
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    x_shape: [usize; 4],
    weight: &[T],
    bias: Option<&[T]>,
    s: &ConvSpec,
    out_shape: [usize; 4],
) -> Vec<T> {
    let [n, c, h, w] = x_shape;
    let [_, co, oh, ow] = out_shape;
    let g = Geometry { c, h, w, oh, ow };
    let k = c * s.kernel_h * s.kernel_w;
    let p = oh * ow;
    let mut out = vec![T::zero(); n * co * p];
    let mut cols = if s.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for b in 0..n {
        let xb = &x[b * c * h * w..(b + 1) * c * h * w];
        let ob = &mut out[b * co * p..(b + 1) * co * p];
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                ob[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let cols_ref: &[T] = if s.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, s, &mut cols);
            &cols
        };
        gemm(Mat::new(weight, co, k), Mat::new(cols_ref, k, p), beta, ob, co, p);
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    x_shape: [usize; 4],
    weight: &[T],
    grad_out: &[T],
    out_shape: [usize; 4],
    s: &ConvSpec,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let [n, c, h, w] = x_shape;
    let [_, co, oh, ow] = out_shape;
    let g = Geometry { c, h, w, oh, ow };
    let k = c * s.kernel_h * s.kernel_w;
    let p = oh * ow;
    let (need_dx, need_dw, need_db) = need;
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); weight.len()]);
    let mut db = need_db.then(|| vec![T::zero(); co]);
    let pointwise = s.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    for b in 0..n {
        let gb = &grad_out[b * co * p..(b + 1) * co * p];
        if let Some(db) = db.as_mut() {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc = gb[o * p..(o + 1) * p].iter().fold(*acc, |a, &v| a + v);
            }
        }
        let xb = &x[b * c * h * w..(b + 1) * c * h * w];
        if let Some(dw) = dw.as_mut() {
            let cols_ref: &[T] = if pointwise {
                xb
            } else {
                im2col(xb, &g, s, &mut cols);
                &cols
            };
            gemm(Mat::new(gb, co, p), Mat::new(cols_ref, k, p).t(), T::one(), dw, co, k);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * c * h * w..(b + 1) * c * h * w];
            if pointwise {
                gemm(Mat::new(weight, co, k).t(), Mat::new(gb, co, p), T::one(), dxb, k, p);
            } else {
                gemm(Mat::new(weight, co, k).t(), Mat::new(gb, co, p), T::zero(), &mut cols, k, p);
                col2im_add(&cols, &g, s, dxb);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Length-preserving 1-D correlation along the last axis with zero padding.
pub(crate) fn conv1d_forward<T: Scalar>(x: &[T], len: usize, kernel: &[T]) -> Vec<T> {
    let half = (kernel.len() / 2) as isize;
    let mut out = vec![T::zero(); x.len()];
    for (row_in, row_out) in x.chunks(len).zip(out.chunks_mut(len)) {
        for (i, o) in row_out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (j, &kv) in kernel.iter().enumerate() {
                let src = i as isize + j as isize - half;
                if src >= 0 && (src as usize) < len {
                    acc = acc + kv * row_in[src as usize];
                }
            }
            *o = acc;
        }
    }
    out
}

pub(crate) fn conv1d_backward<T: Scalar>(
    x: &[T],
    len: usize,
    kernel: &[T],
    grad_out: &[T],
) -> (Vec<T>, Vec<T>) {
    let half = (kernel.len() / 2) as isize;
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    for ((row_in, row_g), row_dx) in x.chunks(len).zip(grad_out.chunks(len)).zip(dx.chunks_mut(len)) {
        for (i, &g) in row_g.iter().enumerate() {
            for (j, &kv) in kernel.iter().enumerate() {
                let src = i as isize + j as isize - half;
                if src >= 0 && (src as usize) < len {
                    let s = src as usize;
                    row_dx[s] = row_dx[s] + g * kv;
                    dk[j] = dk[j] + g * row_in[s];
                }
            }
        }
    }
    (dx, dk)
}
