//! Patch extraction for strided convolutions on channel-major feature maps.
//!
//! Feature maps are stored `[C, B, H, W]`, so the patch matrix of a whole
//! batch is a single `[C*k*k, B*OH*OW]` matrix and every convolution is one
//! GEMM.

use crate::tensor::Scalar;

/// Geometry of a convolution from a `[c, b, h, w]` map to `[*, b, oh, ow]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output extent of a convolution over an `h x w` map.
    pub fn conv(c: usize, b: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        ConvGeom {
            c,
            b,
            h,
            w,
            oh,
            ow,
            k,
            stride,
            pad,
        }
    }

    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.b * self.oh * self.ow
    }

    pub fn input_len(&self) -> usize {
        self.c * self.b * self.h * self.w
    }

    /// Output indices `lo..hi` whose tap `kk` lands inside `0..extent`, and
    /// the input coordinate of output `lo`.
    #[inline]
    fn valid(&self, kk: usize, extent: usize, outs: usize) -> (usize, usize, usize) {
        let s = self.stride;
        let lo = self.pad.saturating_sub(kk).div_ceil(s);
        let hi = (extent + self.pad).saturating_sub(kk).div_ceil(s).min(outs);
        if lo >= hi {
            return (0, 0, 0);
        }
        (lo, hi, lo * s + kk - self.pad)
    }
}

pub fn im2col<T: Scalar>(input: &[T], g: &ConvGeom) -> Vec<T> {
    debug_assert_eq!(input.len(), g.input_len());
    let ncols = g.cols();
    let mut cols = vec![T::ZERO; g.rows() * ncols];
    let (plane, s) = (g.h * g.w, g.stride);
    for c in 0..g.c {
        for ki in 0..g.k {
            let (y_lo, y_hi, iy0) = g.valid(ki, g.h, g.oh);
            for kj in 0..g.k {
                let (x_lo, x_hi, ix0) = g.valid(kj, g.w, g.ow);
                let row = (c * g.k + ki) * g.k + kj;
                let out_row = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.b {
                    let src_plane = &input[(c * g.b + b) * plane..(c * g.b + b + 1) * plane];
                    for oy in y_lo..y_hi {
                        let iy = iy0 + (oy - y_lo) * s;
                        let dst = &mut out_row[(b * g.oh + oy) * g.ow + x_lo..(b * g.oh + oy) * g.ow + x_hi];
                        let src_row = &src_plane[iy * g.w + ix0..];
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = src_row[j * s];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch columns back onto a `[c, b, h, w]` map.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let ncols = g.cols();
    debug_assert_eq!(cols.len(), g.rows() * ncols);
    let mut out = vec![T::ZERO; g.input_len()];
    let (plane, s) = (g.h * g.w, g.stride);
    for c in 0..g.c {
        for ki in 0..g.k {
            let (y_lo, y_hi, iy0) = g.valid(ki, g.h, g.oh);
            for kj in 0..g.k {
                let (x_lo, x_hi, ix0) = g.valid(kj, g.w, g.ow);
                let row = (c * g.k + ki) * g.k + kj;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.b {
                    let dst_plane = &mut out[(c * g.b + b) * plane..(c * g.b + b + 1) * plane];
                    for oy in y_lo..y_hi {
                        let iy = iy0 + (oy - y_lo) * s;
                        let src = &src_row[(b * g.oh + oy) * g.ow + x_lo..(b * g.oh + oy) * g.ow + x_hi];
                        let dst_row = &mut dst_plane[iy * g.w + ix0..];
                        for (j, &v) in src.iter().enumerate() {
                            dst_row[j * s] += v;
                        }
                    }
                }
            }
        }
    }
    out
}
