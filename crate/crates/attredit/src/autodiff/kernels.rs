//! Pure tensor kernels shared by the graph ops: im2col convolution,
//! pooling and nearest-neighbour up/downsampling. All operate on
//! per-sample `[C, H, W]` tensors in row-major f64.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

/// Spatial output size of a convolution (floor semantics).
pub fn conv_out_size(h: usize, k: usize, stride: usize, pad: usize) -> usize {
    let span = h + 2 * pad;
    assert!(span >= k, "kernel {k} larger than padded input {span}");
    (span - k) / stride + 1
}

/// Valid output range `[oj_start, oj_end)` for which
/// `oj*stride + kj - pad` stays inside `[0, w)`.
fn valid_range(kj: usize, stride: usize, pad: usize, w: usize, wo: usize) -> (usize, usize) {
    let start = if kj >= pad { 0 } else { (pad - kj).div_ceil(stride) };
    // largest oj with oj*stride + kj < w + pad
    let end = if w + pad > kj { ((w + pad - kj - 1) / stride + 1).min(wo) } else { 0 };
    (start.min(end), end)
}

/// Unfold `[C,H,W]` into a `[C*k*k, Ho*Wo]` patch matrix (zero padding).
pub fn im2col(x: &ArrayView3<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let mut col = Array2::<f64>::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        for ki in 0..k {
            let (oi_start, oi_end) = valid_range(ki, stride, pad, h, ho);
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let (oj_start, oj_end) = valid_range(kj, stride, pad, w, wo);
                if oj_start >= oj_end {
                    continue;
                }
                let count = oj_end - oj_start;
                let j0 = oj_start * stride + kj - pad;
                let j_span = (count - 1) * stride + 1;
                for oi in oi_start..oi_end {
                    let src_i = oi * stride + ki - pad;
                    let src = x.slice(ndarray::s![ci, src_i, j0..j0 + j_span; stride]);
                    let mut dst = col.slice_mut(ndarray::s![
                        row,
                        oi * wo + oj_start..oi * wo + oj_end
                    ]);
                    dst.assign(&src);
                }
            }
        }
    }
    col
}

/// Fold a `[C*k*k, Ho*Wo]` patch-gradient matrix back onto `[C,H,W]`,
/// summing overlapping contributions. Exact adjoint of [`im2col`].
pub fn col2im(
    col: &ArrayView2<f64>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<f64> {
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let mut out = Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for ki in 0..k {
            let (oi_start, oi_end) = valid_range(ki, stride, pad, h, ho);
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let (oj_start, oj_end) = valid_range(kj, stride, pad, w, wo);
                if oj_start >= oj_end {
                    continue;
                }
                let count = oj_end - oj_start;
                let j0 = oj_start * stride + kj - pad;
                let j_span = (count - 1) * stride + 1;
                for oi in oi_start..oi_end {
                    let src_i = oi * stride + ki - pad;
                    let src = col.slice(ndarray::s![row, oi * wo + oj_start..oi * wo + oj_end]);
                    let mut dst = out.slice_mut(ndarray::s![ci, src_i, j0..j0 + j_span; stride]);
                    dst += &src;
                }
            }
        }
    }
    out
}

/// 2x2 average pooling with stride 2. Requires even spatial size.
pub fn avg_pool2(x: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims, got {h}x{w}");
    let mut out = Array3::<f64>::zeros((c, h / 2, w / 2));
    for ci in 0..c {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                out[(ci, i, j)] = 0.25
                    * (x[(ci, 2 * i, 2 * j)]
                        + x[(ci, 2 * i, 2 * j + 1)]
                        + x[(ci, 2 * i + 1, 2 * j)]
                        + x[(ci, 2 * i + 1, 2 * j + 1)]);
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`]: spread each gradient cell over its 2x2 window.
pub fn avg_unpool2(g: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h2, w2) = g.dim();
    let mut out = Array3::<f64>::zeros((c, h2 * 2, w2 * 2));
    for ci in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let v = 0.25 * g[(ci, i, j)];
                out[(ci, 2 * i, 2 * j)] = v;
                out[(ci, 2 * i, 2 * j + 1)] = v;
                out[(ci, 2 * i + 1, 2 * j)] = v;
                out[(ci, 2 * i + 1, 2 * j + 1)] = v;
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut out = Array3::<f64>::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                let v = x[(ci, i, j)];
                out[(ci, 2 * i, 2 * j)] = v;
                out[(ci, 2 * i, 2 * j + 1)] = v;
                out[(ci, 2 * i + 1, 2 * j)] = v;
                out[(ci, 2 * i + 1, 2 * j + 1)] = v;
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sum each 2x2 window back to its source cell.
pub fn upsample2_adjoint(g: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h2, w2) = g.dim();
    assert!(h2 % 2 == 0 && w2 % 2 == 0);
    let mut out = Array3::<f64>::zeros((c, h2 / 2, w2 / 2));
    for ci in 0..c {
        for i in 0..h2 / 2 {
            for j in 0..w2 / 2 {
                out[(ci, i, j)] = g[(ci, 2 * i, 2 * j)]
                    + g[(ci, 2 * i, 2 * j + 1)]
                    + g[(ci, 2 * i + 1, 2 * j)]
                    + g[(ci, 2 * i + 1, 2 * j + 1)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand3(c: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let x = rand3(3, 6, 6, 1);
        let col = im2col(&x.view(), 3, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = Array2::from_shape_fn(col.dim(), |_| rng.gen_range(-1.0..1.0));
        let lhs: f64 = (&col * &y).sum();
        let back = col2im(&y.view(), 3, 6, 6, 3, 2, 1);
        let rhs: f64 = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn pooling_round_trip_shapes() {
        let x = rand3(2, 8, 8, 3);
        let p = avg_pool2(&x.view());
        assert_eq!(p.dim(), (2, 4, 4));
        let g = avg_unpool2(&p.view());
        assert_eq!(g.dim(), (2, 8, 8));
        let u = upsample2(&p.view());
        assert_eq!(u.dim(), (2, 8, 8));
        let d = upsample2_adjoint(&u.view());
        assert_eq!(d.dim(), (2, 4, 4));
        // nearest upsample then adjoint multiplies by window size
        for (a, b) in p.iter().zip(d.iter()) {
            assert!((4.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_out_sizes() {
        assert_eq!(conv_out_size(32, 3, 1, 1), 32);
        assert_eq!(conv_out_size(32, 3, 2, 1), 16);
        assert_eq!(conv_out_size(16, 3, 2, 1), 8);
        assert_eq!(conv_out_size(8, 3, 2, 1), 4);
    }
}
