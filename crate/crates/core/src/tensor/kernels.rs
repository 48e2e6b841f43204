// Slice-level kernels behind the tape operations. Layouts are NCHW, row-major.

use super::Element;

/// Geometry of a 2-D cross-correlation from `[b, cin, h, w]` to `[b, cout, ho, wo]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    pub fn col_cols(&self) -> usize {
        self.b * self.out_plane()
    }
}

/// Unfolds `x` into a `[cin·kh·kw, b·ho·wo]` matrix.
pub(crate) fn im2col<T: Element>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let cols_n = g.col_cols();
    let plane = g.out_plane();
    let mut cols = vec![T::zero(); g.col_rows() * cols_n];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let row_buf = &mut cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..g.b {
                    let src = &x[(b * g.cin + c) * g.h * g.w..(b * g.cin + c + 1) * g.h * g.w];
                    let dst = &mut row_buf[b * plane..(b + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let dst_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters (and sums) columns back into `[b, cin, h, w]`.
pub(crate) fn col2im<T: Element>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let cols_n = g.col_cols();
    let plane = g.out_plane();
    let mut x = vec![T::zero(); g.b * g.cin * g.h * g.w];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let row_buf = &cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..g.b {
                    let dst = &mut x[(b * g.cin + c) * g.h * g.w..(b * g.cin + c + 1) * g.h * g.w];
                    let src = &row_buf[b * plane..(b + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let src_row = &src[oy * g.wo..(oy + 1) * g.wo];
                        for (ox, s) in src_row.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[b, c, p]` → `[c, b·p]`
pub(crate) fn batch_to_channel_major<T: Element>(x: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x[(bi * c + ci) * p..(bi * c + ci + 1) * p];
            out[ci * b * p + bi * p..ci * b * p + (bi + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// `[c, b·p]` → `[b, c, p]`
pub(crate) fn channel_to_batch_major<T: Element>(x: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ci in 0..c {
        for bi in 0..b {
            let src = &x[ci * b * p + bi * p..ci * b * p + (bi + 1) * p];
            out[(bi * c + ci) * p..(bi * c + ci + 1) * p].copy_from_slice(src);
        }
    }
    out
}

pub(crate) fn add_channel_bias<T: Element>(out: &mut [T], bias: &[T], b: usize, c: usize, p: usize) {
    for bi in 0..b {
        for (ci, bv) in bias.iter().enumerate().take(c) {
            for v in &mut out[(bi * c + ci) * p..(bi * c + ci + 1) * p] {
                *v += *bv;
            }
        }
    }
}

pub(crate) fn channel_sums<T: Element>(g: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); c];
    for bi in 0..b {
        for (ci, s) in sums.iter_mut().enumerate() {
            for v in &g[(bi * c + ci) * p..(bi * c + ci + 1) * p] {
                *s += *v;
            }
        }
    }
    sums
}

pub(crate) fn conv2d_forward<T: Element>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let cols = im2col(x, g);
    let mut out2 = vec![T::zero(); g.cout * g.col_cols()];
    T::gemm(g.cout, g.col_rows(), g.col_cols(), w, false, &cols, false, &mut out2, false);
    let mut out = channel_to_batch_major(&out2, g.b, g.cout, g.out_plane());
    if let Some(bias) = bias {
        add_channel_bias(&mut out, bias, g.b, g.cout, g.out_plane());
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub dbias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Element>(
    x: &[T],
    w: &[T],
    dout: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let dout2 = batch_to_channel_major(dout, g.b, g.cout, g.out_plane());
    let dw = need.1.then(|| {
        let cols = im2col(x, g);
        let mut dw = vec![T::zero(); g.cout * g.col_rows()];
        T::gemm(g.cout, g.col_cols(), g.col_rows(), &dout2, false, &cols, true, &mut dw, false);
        dw
    });
    let dx = need.0.then(|| {
        let mut dcols = vec![T::zero(); g.col_rows() * g.col_cols()];
        T::gemm(g.col_rows(), g.cout, g.col_cols(), w, true, &dout2, false, &mut dcols, false);
        col2im(&dcols, g)
    });
    let dbias = need.2.then(|| channel_sums(dout, g.b, g.cout, g.out_plane()));
    ConvGrads { dx, dw, dbias }
}

/// Transposed convolution. `g` is the geometry of the *forward* convolution
/// whose input-gradient this computes: `g.cin` is the transposed output
/// channel count, `g.cout` the transposed input channel count.
pub(crate) fn conv_transpose2d_forward<T: Element>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
) -> Vec<T> {
    let x2 = batch_to_channel_major(x, g.b, g.cout, g.out_plane());
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    T::gemm(g.col_rows(), g.cout, g.col_cols(), w, true, &x2, false, &mut cols, false);
    let mut out = col2im(&cols, g);
    if let Some(bias) = bias {
        add_channel_bias(&mut out, bias, g.b, g.cin, g.h * g.w);
    }
    out
}

pub(crate) fn conv_transpose2d_backward<T: Element>(
    x: &[T],
    w: &[T],
    dout: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let dcols = im2col(dout, g);
    let dx = need.0.then(|| {
        let mut dx2 = vec![T::zero(); g.cout * g.col_cols()];
        T::gemm(g.cout, g.col_rows(), g.col_cols(), w, false, &dcols, false, &mut dx2, false);
        channel_to_batch_major(&dx2, g.b, g.cout, g.out_plane())
    });
    let dw = need.1.then(|| {
        let x2 = batch_to_channel_major(x, g.b, g.cout, g.out_plane());
        let mut dw = vec![T::zero(); g.cout * g.col_rows()];
        T::gemm(g.cout, g.col_cols(), g.col_rows(), &x2, false, &dcols, true, &mut dw, false);
        dw
    });
    let dbias = need.2.then(|| channel_sums(dout, g.b, g.cin, g.h * g.w));
    ConvGrads { dx, dw, dbias }
}

/// Offsets of the contiguous spatial planes forming each normalization group.
/// Batch mode: one group per channel spanning the batch. Instance mode: one
/// group per (sample, channel).
pub(crate) fn norm_groups(batch_mode: bool, b: usize, c: usize, p: usize) -> Vec<Vec<usize>> {
    if batch_mode {
        (0..c)
            .map(|ci| (0..b).map(|bi| (bi * c + ci) * p).collect())
            .collect()
    } else {
        (0..b * c).map(|i| vec![i * p]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(b: usize, cin: usize, h: usize, cout: usize, k: usize, stride: usize, pad: usize) -> ConvGeom {
        let ho = (h + 2 * pad - k) / stride + 1;
        ConvGeom {
            b,
            cin,
            h,
            w: h,
            cout,
            kh: k,
            kw: k,
            stride,
            pad,
            ho,
            wo: ho,
        }
    }

    /// Direct sliding-window cross-correlation.
    fn direct_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.b * g.cout * g.ho * g.wo];
        for b in 0..g.b {
            for co in 0..g.cout {
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let mut acc = 0.0;
                        for ci in 0..g.cin {
                            for i in 0..g.kh {
                                for j in 0..g.kw {
                                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + j) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    acc += x[((b * g.cin + ci) * g.h + iy as usize) * g.w + ix as usize]
                                        * w[((co * g.cin + ci) * g.kh + i) * g.kw + j];
                                }
                            }
                        }
                        out[((b * g.cout + co) * g.ho + oy) * g.wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_window_sum() {
        for &(stride, pad, k) in &[(1, 0, 3), (2, 1, 4), (1, 1, 3), (3, 2, 2)] {
            let g = geom(2, 3, 7, 4, k, stride, pad);
            let x: Vec<f64> = (0..2 * 3 * 49).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
            let w: Vec<f64> = (0..4 * 3 * k * k).map(|i| ((i * 104729) % 97) as f64 / 48.0 - 1.0).collect();
            let fast = conv2d_forward(&x, &w, None, &g);
            let slow = direct_conv(&x, &w, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layout_permutations_are_inverse() {
        let x: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let y = batch_to_channel_major(&x, 2, 3, 4);
        assert_eq!(channel_to_batch_major(&y, 2, 3, 4), x);
    }
}
