//! Separable bicubic resampling with the Keys kernel (a = -0.5).

use crate::error::{Result, TensorError};
use crate::scalar::{gemm, Mat, Scalar};

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn keys_cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (KEYS_A + 2.0) * x * x * x - (KEYS_A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        KEYS_A * x * x * x - 5.0 * KEYS_A * x * x + 8.0 * KEYS_A * x - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Positive rational resampling factor `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scale {
    pub num: usize,
    pub den: usize,
}

impl Scale {
    pub fn up(factor: usize) -> Self {
        Scale { num: factor, den: 1 }
    }

    pub fn down(factor: usize) -> Self {
        Scale { num: 1, den: factor }
    }

    /// Target length for an input length; rejects non-integral results.
    pub fn apply(&self, n: usize) -> Result<usize> {
        if self.num == 0 || self.den == 0 {
            return Err(TensorError::Config(format!("scale {}/{} must be positive", self.num, self.den)));
        }
        if (n * self.num) % self.den != 0 {
            return Err(TensorError::shape(
                "bicubic_resize",
                format!("size {n} times {}/{} is not integral", self.num, self.den),
            ));
        }
        let out = n * self.num / self.den;
        if out == 0 {
            return Err(TensorError::shape("bicubic_resize", format!("size {n} collapses to zero")));
        }
        Ok(out)
    }
}

/// Dense `out x in` interpolation matrix for one axis.
///
/// Output sample `o` reads source coordinate `(o + 0.5) * in / out - 0.5`,
/// with taps clamped to the valid index range.
pub fn axis_weights(n_in: usize, n_out: usize) -> Vec<f64> {
    let ratio = n_in as f64 / n_out as f64;
    let mut m = vec![0.0; n_out * n_in];
    for o in 0..n_out {
        let src = (o as f64 + 0.5) * ratio - 0.5;
        let base = src.floor();
        let t = src - base;
        for tap in -1..=2_isize {
            let wgt = keys_cubic(t - tap as f64);
            let idx = (base as isize + tap).clamp(0, n_in as isize - 1) as usize;
            m[o * n_in + idx] += wgt;
        }
    }
    m
}

/// Precomputed separable resampling operator for one plane geometry.
#[derive(Clone, Debug)]
pub struct ResizePlan<T> {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    rows: Vec<T>,
    cols: Vec<T>,
}

impl<T: Scalar> ResizePlan<T> {
    pub fn new(in_h: usize, in_w: usize, scale: Scale) -> Result<Self> {
        let out_h = scale.apply(in_h)?;
        let out_w = scale.apply(in_w)?;
        Ok(Self::with_output(in_h, in_w, out_h, out_w))
    }

    pub fn with_output(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect();
        ResizePlan {
            in_h,
            in_w,
            out_h,
            out_w,
            rows: cast(axis_weights(in_h, out_h)),
            cols: cast(axis_weights(in_w, out_w)),
        }
    }

    /// Resamples `planes` consecutive `in_h x in_w` planes.
    pub fn forward(&self, x: &[T], planes: usize) -> Vec<T> {
        let (ih, iw, oh, ow) = (self.in_h, self.in_w, self.out_h, self.out_w);
        let mut out = vec![T::zero(); planes * oh * ow];
        let mut tmp = vec![T::zero(); ih * ow];
        for (src, dst) in x.chunks(ih * iw).zip(out.chunks_mut(oh * ow)) {
            gemm(Mat::new(src, ih, iw), Mat::new(&self.cols, ow, iw).t(), T::zero(), &mut tmp, ih, ow);
            gemm(Mat::new(&self.rows, oh, ih), Mat::new(&tmp, ih, ow), T::zero(), dst, oh, ow);
        }
        out
    }

    /// Adjoint of [`forward`](Self::forward).
    pub fn backward(&self, grad_out: &[T], planes: usize) -> Vec<T> {
        let (ih, iw, oh, ow) = (self.in_h, self.in_w, self.out_h, self.out_w);
        let mut dx = vec![T::zero(); planes * ih * iw];
        let mut tmp = vec![T::zero(); ih * ow];
        for (g, dst) in grad_out.chunks(oh * ow).zip(dx.chunks_mut(ih * iw)) {
            gemm(Mat::new(&self.rows, oh, ih).t(), Mat::new(g, oh, ow), T::zero(), &mut tmp, ih, ow);
            gemm(Mat::new(&tmp, ih, ow), Mat::new(&self.cols, ow, iw), T::zero(), dst, ih, iw);
        }
        dx
    }
}

/// Bicubic resize of planar data outside the tape.
pub fn resize_planes<T: Scalar>(data: &[T], planes: usize, h: usize, w: usize, scale: Scale) -> Result<(Vec<T>, usize, usize)> {
    if data.len() != planes * h * w {
        return Err(TensorError::shape(
            "bicubic_resize",
            format!("buffer of {} elements does not hold {planes} planes of {h}x{w}", data.len()),
        ));
    }
    let plan = ResizePlan::<T>::new(h, w, scale)?;
    Ok((plan.forward(data, planes), plan.out_h, plan.out_w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_interpolates_integer_nodes() {
        assert_eq!(keys_cubic(0.0), 1.0);
        assert_eq!(keys_cubic(1.0), 0.0);
        assert_eq!(keys_cubic(2.0), 0.0);
        assert_eq!(keys_cubic(-1.5), keys_cubic(1.5));
    }

    #[test]
    fn axis_rows_are_partitions_of_unity() {
        for (n_in, n_out) in [(4, 16), (16, 4), (5, 10), (7, 7)] {
            let m = axis_weights(n_in, n_out);
            for row in m.chunks(n_in) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "{n_in}->{n_out}: {s}");
            }
        }
    }

    #[test]
    fn same_size_resize_is_identity() {
        let data: Vec<f64> = (0..12).map(|v| v as f64 * 0.3).collect();
        let (out, h, w) = resize_planes(&data, 1, 3, 4, Scale { num: 3, den: 3 }).unwrap();
        assert_eq!((h, w), (3, 4));
        for (a, b) in out.iter().zip(&data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_integral_target_rejected() {
        assert!(Scale { num: 2, den: 3 }.apply(4).is_err());
        assert_eq!(Scale { num: 3, den: 2 }.apply(4).unwrap(), 6);
    }
}
