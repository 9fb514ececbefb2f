//! Dense numeric kernels behind the autodiff tape: im2col convolution with
//! its two adjoints, fully-connected products, and nearest upsampling.
//!
//! Everything is f64, single-threaded, and structured so identical inputs
//! produce bit-identical outputs.

use ndarray::{Array1, Array2, Array4, ArrayView3, ArrayView4};

/// Output spatial size of a convolution.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfold one sample into a `[ic*kh*kw, oh*ow]` patch matrix (zero padding).
fn im2col(
    x: &ArrayView3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (ic, h, w) = x.dim();
    let mut cols = Array2::zeros((ic * kh * kw, oh * ow));
    for c in 0..ic {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * ow + ox]] = x[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Fold a patch-gradient matrix back onto the input grid (adjoint of im2col).
fn col2im(
    gcols: &Array2<f64>,
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> ndarray::Array3<f64> {
    let mut gx = ndarray::Array3::zeros((ic, h, w));
    for c in 0..ic {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        gx[[c, iy as usize, ix as usize]] += gcols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    gx
}

/// Batched convolution, NCHW in, `[oc, ic, kh, kw]` weights.
pub fn conv_fwd(
    x: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    b: Option<&Array1<f64>>,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (n, ic, h, wd) = x.dim();
    let (oc, wic, kh, kw) = w.dim();
    assert_eq!(ic, wic, "conv channel mismatch");
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(wd, kw, stride, pad);
    let wmat = w
        .to_shape((oc, ic * kh * kw))
        .expect("contiguous weight reshape")
        .to_owned();
    let mut out = Array4::zeros((n, oc, oh, ow));
    for i in 0..n {
        let cols = im2col(&x.index_axis(ndarray::Axis(0), i), kh, kw, stride, pad, oh, ow);
        let y = wmat.dot(&cols);
        for c in 0..oc {
            let bias = b.map_or(0.0, |b| b[c]);
            for oy in 0..oh {
                for ox in 0..ow {
                    out[[i, c, oy, ox]] = y[[c, oy * ow + ox]] + bias;
                }
            }
        }
    }
    out
}

/// Gradient of a convolution w.r.t. its input: the transposed convolution of
/// `gy` by `w`.
pub fn conv_dx(
    gy: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
    h: usize,
    wd: usize,
) -> Array4<f64> {
    let (n, oc, oh, ow) = gy.dim();
    let (woc, ic, kh, kw) = w.dim();
    assert_eq!(oc, woc, "conv_dx channel mismatch");
    let wmat = w
        .to_shape((oc, ic * kh * kw))
        .expect("contiguous weight reshape")
        .to_owned();
    let wmat_t = wmat.t().to_owned();
    let mut gx = Array4::zeros((n, ic, h, wd));
    for i in 0..n {
        let g = gy.index_axis(ndarray::Axis(0), i);
        let gmat = g
            .to_shape((oc, oh * ow))
            .expect("contiguous grad reshape")
            .to_owned();
        let gcols = wmat_t.dot(&gmat);
        let gxi = col2im(&gcols, ic, h, wd, kh, kw, stride, pad, oh, ow);
        gx.index_axis_mut(ndarray::Axis(0), i).assign(&gxi);
    }
    gx
}

/// Gradient of a convolution w.r.t. its weights.
pub fn conv_dw(
    x: &ArrayView4<f64>,
    gy: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
    kh: usize,
    kw: usize,
) -> Array4<f64> {
    let (n, ic, _, _) = x.dim();
    let (gn, oc, oh, ow) = gy.dim();
    assert_eq!(n, gn, "conv_dw batch mismatch");
    let mut gw_mat = Array2::zeros((oc, ic * kh * kw));
    for i in 0..n {
        let cols = im2col(&x.index_axis(ndarray::Axis(0), i), kh, kw, stride, pad, oh, ow);
        let g = gy.index_axis(ndarray::Axis(0), i);
        let gmat = g
            .to_shape((oc, oh * ow))
            .expect("contiguous grad reshape")
            .to_owned();
        gw_mat = gw_mat + gmat.dot(&cols.t());
    }
    gw_mat
        .into_shape_with_order((oc, ic, kh, kw))
        .expect("weight grad reshape")
}

/// Gradient of a convolution w.r.t. its bias: sum over batch and space.
pub fn conv_db(gy: &ArrayView4<f64>) -> Array1<f64> {
    let (n, oc, oh, ow) = gy.dim();
    let mut gb = Array1::zeros(oc);
    for i in 0..n {
        for c in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    gb[c] += gy[[i, c, oy, ox]];
                }
            }
        }
    }
    gb
}

/// Fully connected: `y = x W^T + b`, x `[n, f]`, W `[o, f]`.
pub fn linear_fwd(x: &Array2<f64>, w: &Array2<f64>, b: Option<&Array1<f64>>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    if let Some(b) = b {
        for mut row in y.rows_mut() {
            row += b;
        }
    }
    y
}

/// Depth-to-space (pixel shuffle) by factor 2: `[n, 4c, h, w] -> [n, c, 2h, 2w]`.
/// Channel block layout: output pixel (2y+dy, 2x+dx) reads channel
/// `c*4 + dy*2 + dx`.
pub fn depth_to_space2(x: &ArrayView4<f64>) -> Array4<f64> {
    let (n, c4, h, w) = x.dim();
    assert_eq!(c4 % 4, 0, "depth_to_space needs 4k channels");
    let c = c4 / 4;
    let mut out = Array4::zeros((n, c, h * 2, w * 2));
    for i in 0..n {
        for ch in 0..c {
            for dy in 0..2 {
                for dx in 0..2 {
                    let src_c = ch * 4 + dy * 2 + dx;
                    for y in 0..h {
                        for xx in 0..w {
                            out[[i, ch, 2 * y + dy, 2 * xx + dx]] = x[[i, src_c, y, xx]];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of `depth_to_space2` (a pure permutation, so also its inverse).
pub fn space_to_depth2(gy: &ArrayView4<f64>) -> Array4<f64> {
    let (n, c, h2, w2) = gy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Array4::zeros((n, c * 4, h, w));
    for i in 0..n {
        for ch in 0..c {
            for dy in 0..2 {
                for dx in 0..2 {
                    let src_c = ch * 4 + dy * 2 + dx;
                    for y in 0..h {
                        for xx in 0..w {
                            gx[[i, src_c, y, xx]] = gy[[i, ch, 2 * y + dy, 2 * xx + dx]];
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Nearest-neighbour 2x upsample.
pub fn upsample2(x: &ArrayView4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let mut out = Array4::zeros((n, c, h * 2, w * 2));
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = x[[i, ch, y, xx]];
                    out[[i, ch, 2 * y, 2 * xx]] = v;
                    out[[i, ch, 2 * y, 2 * xx + 1]] = v;
                    out[[i, ch, 2 * y + 1, 2 * xx]] = v;
                    out[[i, ch, 2 * y + 1, 2 * xx + 1]] = v;
                }
            }
        }
    }
    out
}

/// Adjoint of `upsample2`: sum each 2x2 block.
pub fn upsample2_adjoint(gy: &ArrayView4<f64>) -> Array4<f64> {
    let (n, c, h2, w2) = gy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Array4::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    gx[[i, ch, y, xx]] = gy[[i, ch, 2 * y, 2 * xx]]
                        + gy[[i, ch, 2 * y, 2 * xx + 1]]
                        + gy[[i, ch, 2 * y + 1, 2 * xx]]
                        + gy[[i, ch, 2 * y + 1, 2 * xx + 1]];
                }
            }
        }
    }
    gx
}
