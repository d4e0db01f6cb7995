//! im2col convolution kernels for a single `[C, H, W]` sample.

use super::{matmul, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel_w) / self.stride + 1
    }

    /// Rows of the column matrix, `Cin·kh·kw`.
    pub fn col_rows(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds zero-padded patches into `col[(c,ky,kx), (oy,ox)]`.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeometry, input: &[T], col: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (h, w) = (g.height, g.width);
    debug_assert_eq!(col.len(), g.col_rows() * oh * ow);
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeometry, col: &[T], input_grad: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (h, w) = (g.height, g.width);
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &mut input_grad[c * h * w..(c + 1) * h * w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `out[Cout, P] = weight[Cout, K] · col[K, P] + bias`.
pub(crate) fn forward_sample<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out_channels: usize,
    col: &mut Vec<T>,
    out: &mut [T],
) {
    let k = g.col_rows();
    let p = g.col_cols();
    match bias {
        Some(b) => {
            for (co, chunk) in out.chunks_mut(p).enumerate() {
                chunk.fill(b[co]);
            }
        }
        None => out.fill(T::zero()),
    }
    if g.is_pointwise() {
        matmul(out_channels, k, p, weight, false, input, false, T::one(), out);
        return;
    }
    col.resize(k * p, T::zero());
    im2col(g, input, col);
    matmul(out_channels, k, p, weight, false, col, false, T::one(), out);
}

/// Accumulates the weight/bias gradients of one sample and, when
/// `input_grad` is given, writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_sample<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    out_channels: usize,
    out_grad: &[T],
    weight_grad: Option<&mut [T]>,
    bias_grad: Option<&mut [T]>,
    input_grad: Option<&mut [T]>,
    col: &mut Vec<T>,
) {
    let k = g.col_rows();
    let p = g.col_cols();
    if let Some(bg) = bias_grad {
        for (co, chunk) in out_grad.chunks(p).enumerate() {
            let s = chunk.iter().fold(T::zero(), |acc, &v| acc + v);
            bg[co] = bg[co] + s;
        }
    }
    let pointwise = g.is_pointwise();
    if let Some(wg) = weight_grad {
        if pointwise {
            matmul(out_channels, p, k, out_grad, false, input, true, T::one(), wg);
        } else {
            col.resize(k * p, T::zero());
            im2col(g, input, col);
            matmul(out_channels, p, k, out_grad, false, col, true, T::one(), wg);
        }
    }
    if let Some(ig) = input_grad {
        if pointwise {
            matmul(k, out_channels, p, weight, true, out_grad, false, T::one(), ig);
        } else {
            col.resize(k * p, T::zero());
            matmul(k, out_channels, p, weight, true, out_grad, false, T::zero(), col);
            col2im(g, col, ig);
        }
    }
}
