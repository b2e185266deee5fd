//! Convolution geometry and the im2col/col2im pair.
//!
//! A transposed convolution is expressed through the convolution it is the
//! adjoint of: its output plays the role of the convolution's input image and
//! its input plays the role of the convolution's output. Both layer kinds
//! therefore share one [`ConvGeometry`].

use crate::nn::spec::{LayerKind, LayerSpec, Padding};
use crate::tensor::Real;

/// A convolution from an `image` side (`channels × h × w`) to a `grid` side
/// (`grid_h × grid_w`), with zero padding `pad_top`/`pad_left` before the
/// image (any remainder falls on the bottom/right).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_pad_before(image: usize, grid: usize, k: usize, stride: usize) -> usize {
    let total = ((grid - 1) * stride + k).saturating_sub(image);
    total / 2
}

impl ConvGeometry {
    /// Geometry for a spatial layer with per-example input `[C, H, W]` and
    /// output `[C', H', W']`.
    pub fn for_layer(spec: &LayerSpec, input: &[usize], output: &[usize]) -> Self {
        let [kh, kw] = spec.kernel;
        let s = spec.stride;
        let (channels, h, w, grid_h, grid_w) = match spec.kind {
            LayerKind::Conv => (input[0], input[1], input[2], output[1], output[2]),
            LayerKind::Deconv => (output[0], output[1], output[2], input[1], input[2]),
            LayerKind::FullyConnected => unreachable!("fully connected has no geometry"),
        };
        let (pad_top, pad_left) = match spec.padding {
            Padding::Valid => (0, 0),
            Padding::Same => (
                same_pad_before(h, grid_h, kh, s),
                same_pad_before(w, grid_w, kw, s),
            ),
        };
        ConvGeometry {
            channels,
            h,
            w,
            grid_h,
            grid_w,
            kh,
            kw,
            stride: s,
            pad_top,
            pad_left,
        }
    }

    /// Rows of the column matrix: `channels · kh · kw`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Columns of the column matrix: `grid_h · grid_w`.
    pub fn grid_len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.h * self.w
    }

    /// Grid positions `lo..hi` whose tap at kernel offset `k` lands inside
    /// the image (not in padding).
    #[inline]
    fn valid_range(k: usize, stride: usize, pad: usize, extent: usize, grid: usize) -> (usize, usize) {
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let hi = if extent + pad > k { (extent + pad - k).div_ceil(stride) } else { 0 };
        (lo.min(grid), hi.min(grid).max(lo.min(grid)))
    }

    /// `cols[(c, i, j), offset + (gy, gx)] = image[c, gy·s + i − pad_top, gx·s + j − pad_left]`
    /// where `cols` is row-major with row stride `ld`.
    pub fn im2col<T: Real>(&self, image: &[T], cols: &mut [T], ld: usize, offset: usize) {
        debug_assert_eq!(image.len(), self.image_len());
        let grid = self.grid_len();
        debug_assert!(offset + grid <= ld && cols.len() >= self.patch_len() * ld);
        let (s, gw) = (self.stride, self.grid_w);
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                let (ylo, yhi) = Self::valid_range(i, s, self.pad_top, self.h, self.grid_h);
                for j in 0..self.kw {
                    let (xlo, xhi) = Self::valid_range(j, s, self.pad_left, self.w, gw);
                    let dst = &mut cols[row * ld + offset..row * ld + offset + grid];
                    dst.fill(T::zero());
                    for gy in ylo..yhi {
                        let y = gy * s + i - self.pad_top;
                        let src = &plane[y * self.w..(y + 1) * self.w];
                        let out = &mut dst[gy * gw..(gy + 1) * gw];
                        if s == 1 {
                            let x0 = xlo + j - self.pad_left;
                            out[xlo..xhi].copy_from_slice(&src[x0..x0 + (xhi - xlo)]);
                        } else {
                            for gx in xlo..xhi {
                                out[gx] = src[gx * s + j - self.pad_left];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add columns back into
    /// `image` (which is accumulated into, not overwritten).
    pub fn col2im<T: Real>(&self, cols: &[T], image: &mut [T], ld: usize, offset: usize) {
        debug_assert_eq!(image.len(), self.image_len());
        let grid = self.grid_len();
        debug_assert!(offset + grid <= ld && cols.len() >= self.patch_len() * ld);
        let (s, gw) = (self.stride, self.grid_w);
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                let (ylo, yhi) = Self::valid_range(i, s, self.pad_top, self.h, self.grid_h);
                for j in 0..self.kw {
                    let (xlo, xhi) = Self::valid_range(j, s, self.pad_left, self.w, gw);
                    let src = &cols[row * ld + offset..row * ld + offset + grid];
                    for gy in ylo..yhi {
                        let y = gy * s + i - self.pad_top;
                        let dst = &mut plane[y * self.w..(y + 1) * self.w];
                        let inp = &src[gy * gw..(gy + 1) * gw];
                        if s == 1 {
                            let x0 = xlo + j - self.pad_left;
                            for (d, &v) in dst[x0..x0 + (xhi - xlo)].iter_mut().zip(&inp[xlo..xhi]) {
                                *d += v;
                            }
                        } else {
                            for gx in xlo..xhi {
                                dst[gx * s + j - self.pad_left] += inp[gx];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}
