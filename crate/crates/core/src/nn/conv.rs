//! im2col / col2im kernels shared by convolution and transposed convolution.

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (conv_out(self.height, self.kh, self.stride, self.pad), conv_out(self.width, self.kw, self.stride, self.pad))
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }
}

pub fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

pub fn conv_transpose_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size - 1) * stride + k - 2 * pad
}

/// Unfolds one `[C, H, W]` image into `[C*kh*kw, Ho*Wo]` columns.
pub fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    debug_assert_eq!(cols.len(), g.col_rows() * hw);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize { T::ZERO } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `img`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let line = &src[oy * wo..(oy + 1) * wo];
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += *v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}
