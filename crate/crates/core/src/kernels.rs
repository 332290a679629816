//! Convolution (im2col + GEMM) and pooling kernels on single NCHW samples.

use crate::layer::{ConvGeometry, PoolGeometry};
use crate::tensor::Scalar;

/// Unfolds one `[C, H, W]` sample into a `[C*kh*kw, oh*ow]` column matrix.
/// Row order is `(c, ky, kx)`, matching the `[O, C, kh, kw]` weight layout.
pub fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, cols: &mut [T]) {
    let p = oh * ow;
    debug_assert_eq!(cols.len(), g.patch_len() * p);
    let pad = g.padding as isize;
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= w as isize { T::ZERO } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a `[C, H, W]` gradient.
pub fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, dx: &mut [T]) {
    let p = oh * ow;
    let pad = g.padding as isize;
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `y[O, P] = W[O, K] · cols[K, P] + b`.
pub fn conv_from_cols<T: Scalar>(weights: &[T], bias: &[T], cols: &[T], g: &ConvGeometry, p: usize, y: &mut [T]) {
    let k = g.patch_len();
    let o = g.out_channels;
    for (oc, row) in y.chunks_exact_mut(p).enumerate() {
        row.iter_mut().for_each(|v| *v = bias[oc]);
    }
    T::gemm(o, k, p, T::ONE, weights, (k as isize, 1), cols, (p as isize, 1), T::ONE, y, (p as isize, 1));
}

/// Max pooling over one `[C, H, W]` sample. Padded cells never win.
/// `argmax` receives the flat input index of each output's maximum.
pub fn maxpool_forward<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &PoolGeometry,
    oh: usize,
    ow: usize,
    y: &mut [T],
    mut argmax: Option<&mut [u32]>,
) {
    let pad = g.padding as isize;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = 0usize;
                for ky in 0..g.window {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..g.window {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = ch * h * w + iy as usize * w + ix as usize;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                y[o] = best;
                if let Some(am) = argmax.as_deref_mut() {
                    am[o] = best_idx as u32;
                }
            }
        }
    }
}

/// Average pooling; each window is divided by its count of in-bounds cells.
pub fn avgpool_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, g: &PoolGeometry, oh: usize, ow: usize, y: &mut [T]) {
    avgpool_visit(c, h, w, g, oh, ow, |o, cells, count| {
        let mut s = T::ZERO;
        for &i in cells {
            s += x[i];
        }
        y[o] = s / T::of(count as f64);
    });
}

pub fn avgpool_backward<T: Scalar>(dy: &[T], c: usize, h: usize, w: usize, g: &PoolGeometry, oh: usize, ow: usize, dx: &mut [T]) {
    avgpool_visit(c, h, w, g, oh, ow, |o, cells, count| {
        let share = dy[o] / T::of(count as f64);
        for &i in cells {
            dx[i] += share;
        }
    });
}

fn avgpool_visit(c: usize, h: usize, w: usize, g: &PoolGeometry, oh: usize, ow: usize, mut f: impl FnMut(usize, &[usize], usize)) {
    let pad = g.padding as isize;
    let mut cells = Vec::with_capacity(g.window * g.window);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                cells.clear();
                for ky in 0..g.window {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..g.window {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            cells.push(ch * h * w + iy as usize * w + ix as usize);
                        }
                    }
                }
                f(ch * oh * ow + oy * ow + ox, &cells, cells.len());
            }
        }
    }
}
