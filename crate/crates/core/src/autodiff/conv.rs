//! Dense kernels behind the tape ops: im2col convolution, nearest-neighbor
//! upsampling, and group normalization. All tensors are CHW `f64`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, ArrayViewD, IxDyn};

/// Output spatial size of a convolution.
pub fn conv2d_shape(in_hw: (usize, usize), k: (usize, usize), stride: usize, pad: (usize, usize)) -> (usize, usize) {
    let h = (in_hw.0 + 2 * pad.0 - k.0) / stride + 1;
    let w = (in_hw.1 + 2 * pad.1 - k.1) / stride + 1;
    (h, w)
}

/// Unfold `(C, H, W)` into `(C*kh*kw, Ho*Wo)` with zero padding.
fn im2col(
    input: &ArrayViewD<f64>,
    k: (usize, usize),
    stride: usize,
    pad: (usize, usize),
    out: (usize, usize),
) -> Array2<f64> {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw) = k;
    let (ho, wo) = out;
    let mut cols = Array2::<f64>::zeros((c_in * kh * kw, ho * wo));
    let in_slice = input.as_slice().expect("im2col: non-contiguous input");
    let cols_slice = cols.as_slice_mut().unwrap();
    for c in 0..c_in {
        let plane = &in_slice[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let dst = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad.1 as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols_slice[dst + ox] = plane[iy * w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the transpose of im2col: fold `(C*kh*kw, Ho*Wo)` back into `(C, H, W)`.
fn col2im(
    dcols: &Array2<f64>,
    in_shape: &[usize],
    k: (usize, usize),
    stride: usize,
    pad: (usize, usize),
    out: (usize, usize),
) -> ArrayD<f64> {
    let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (kh, kw) = k;
    let (ho, wo) = out;
    let mut dinput = ArrayD::<f64>::zeros(IxDyn(in_shape));
    let din = dinput.as_slice_mut().unwrap();
    let dcols_slice = dcols.as_slice().expect("col2im: non-contiguous grad");
    for c in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = c * h * w + iy as usize * w;
                    let src = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad.1 as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        din[base + ix as usize] += dcols_slice[src + ox];
                    }
                }
            }
        }
    }
    dinput
}

/// Forward convolution; returns the output and, if requested, the im2col
/// matrix for reuse in the backward pass.
pub(crate) fn conv2d_forward(
    input: &ArrayD<f64>,
    weight: &ArrayD<f64>,
    bias: &ArrayD<f64>,
    stride: usize,
    pad: (usize, usize),
    keep_cols: bool,
) -> (ArrayD<f64>, Option<Array2<f64>>) {
    assert_eq!(input.ndim(), 3, "conv2d input must be CHW");
    assert_eq!(weight.ndim(), 4, "conv2d weight must be (Cout,Cin,kh,kw)");
    let (c_out, c_in) = (weight.shape()[0], weight.shape()[1]);
    assert_eq!(input.shape()[0], c_in, "conv2d channel mismatch");
    let k = (weight.shape()[2], weight.shape()[3]);
    let out = conv2d_shape((input.shape()[1], input.shape()[2]), k, stride, pad);

    let cols = im2col(&input.view(), k, stride, pad, out);
    let w2 = weight
        .view()
        .into_shape_with_order((c_out, c_in * k.0 * k.1))
        .unwrap();
    let mut y = w2.dot(&cols); // (Cout, Ho*Wo)
    for (mut row, &b) in y.rows_mut().into_iter().zip(bias.iter()) {
        row += b;
    }
    let value = y
        .into_shape_with_order(IxDyn(&[c_out, out.0, out.1]))
        .unwrap();
    (value, if keep_cols { Some(cols) } else { None })
}

/// Backward convolution. `cols` is the cached im2col matrix (recomputed when
/// absent). The input gradient is skipped when `need_dinput` is false.
pub(crate) fn conv2d_backward(
    g: &ArrayD<f64>,
    input: &ArrayD<f64>,
    weight: &ArrayD<f64>,
    stride: usize,
    pad: (usize, usize),
    cols: Option<&Array2<f64>>,
    need_dinput: bool,
) -> (Option<ArrayD<f64>>, ArrayD<f64>, ArrayD<f64>) {
    let (c_out, c_in) = (weight.shape()[0], weight.shape()[1]);
    let k = (weight.shape()[2], weight.shape()[3]);
    let out = (g.shape()[1], g.shape()[2]);
    let g2 = g
        .view()
        .into_shape_with_order((c_out, out.0 * out.1))
        .unwrap();

    let recomputed;
    let cols = match cols {
        Some(c) => c,
        None => {
            recomputed = im2col(&input.view(), k, stride, pad, out);
            &recomputed
        }
    };

    // general_mat_mul keeps the preallocated row-major layout; `dot` would
    // return a column-major result for 1x1 output maps, breaking the reshape
    let mut dw2 = Array2::<f64>::zeros((c_out, c_in * k.0 * k.1));
    general_mat_mul(1.0, &g2, &cols.t(), 0.0, &mut dw2);
    let dweight = dw2
        .into_shape_with_order(IxDyn(&[c_out, c_in, k.0, k.1]))
        .unwrap();
    let dbias = g2.sum_axis(ndarray::Axis(1)).into_dyn();

    let dinput = if need_dinput {
        let w2 = weight
            .view()
            .into_shape_with_order((c_out, c_in * k.0 * k.1))
            .unwrap();
        let dcols = w2.t().dot(&g2);
        Some(col2im(&dcols, input.shape(), k, stride, pad, out))
    } else {
        None
    };
    (dinput, dweight, dbias)
}

/// Nearest-neighbor 2x upsample of `(C, h, w)`, cropped to `(out_h, out_w)`.
pub(crate) fn upsample2_forward(input: &ArrayD<f64>, out_h: usize, out_w: usize) -> ArrayD<f64> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    assert!(out_h <= 2 * h && out_w <= 2 * w, "upsample target exceeds 2x source");
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[c, out_h, out_w]));
    let src = input.as_slice().unwrap();
    let dst = out.as_slice_mut().unwrap();
    for ci in 0..c {
        for y in 0..out_h {
            let sy = y / 2;
            let srow = ci * h * w + sy * w;
            let drow = ci * out_h * out_w + y * out_w;
            for x in 0..out_w {
                dst[drow + x] = src[srow + x / 2];
            }
        }
    }
    out
}

/// Backward of the 2x upsample: sum each output gradient into its source cell.
pub(crate) fn upsample2_backward(g: &ArrayD<f64>, in_shape: IxDyn) -> ArrayD<f64> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (out_h, out_w) = (g.shape()[1], g.shape()[2]);
    let mut din = ArrayD::<f64>::zeros(in_shape.clone());
    let src = g.as_slice().unwrap();
    let dst = din.as_slice_mut().unwrap();
    for ci in 0..c {
        for y in 0..out_h {
            let sy = y / 2;
            let drow = ci * h * w + sy * w;
            let srow = ci * out_h * out_w + y * out_w;
            for x in 0..out_w {
                dst[drow + x / 2] += src[srow + x];
            }
        }
    }
    din
}

/// Group normalization forward over `(C, H, W)`; returns per-group (mean, inv_std).
pub(crate) fn group_norm_forward(
    input: &ArrayD<f64>,
    gamma: &ArrayD<f64>,
    beta: &ArrayD<f64>,
    groups: usize,
    eps: f64,
) -> (ArrayD<f64>, Vec<(f64, f64)>) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    assert_eq!(c % groups, 0, "channels not divisible by groups");
    let per = c / groups;
    let n = (per * h * w) as f64;
    let src = input.as_slice().unwrap();
    let mut out = ArrayD::<f64>::zeros(input.raw_dim());
    let dst = out.as_slice_mut().unwrap();
    let gs = gamma.as_slice().unwrap();
    let bs = beta.as_slice().unwrap();
    let mut stats = Vec::with_capacity(groups);
    for gi in 0..groups {
        let span = gi * per * h * w..(gi + 1) * per * h * w;
        let mean = src[span.clone()].iter().sum::<f64>() / n;
        let var = src[span.clone()].iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + eps).sqrt();
        stats.push((mean, inv_std));
        for ci in 0..per {
            let ch = gi * per + ci;
            let (ga, be) = (gs[ch], bs[ch]);
            let base = ch * h * w;
            for i in 0..h * w {
                dst[base + i] = (src[base + i] - mean) * inv_std * ga + be;
            }
        }
    }
    (out, stats)
}

/// Group normalization backward.
pub(crate) fn group_norm_backward(
    g: &ArrayD<f64>,
    input: &ArrayD<f64>,
    gamma: &ArrayD<f64>,
    groups: usize,
    stats: &[(f64, f64)],
) -> (ArrayD<f64>, ArrayD<f64>, ArrayD<f64>) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let per = c / groups;
    let n = (per * h * w) as f64;
    let src = input.as_slice().unwrap();
    let gsl = g.as_slice().unwrap();
    let gas = gamma.as_slice().unwrap();

    let mut din = ArrayD::<f64>::zeros(input.raw_dim());
    let mut dgamma = ArrayD::<f64>::zeros(gamma.raw_dim());
    let mut dbeta = ArrayD::<f64>::zeros(gamma.raw_dim());
    let din_s = din.as_slice_mut().unwrap();
    let dg_s = dgamma.as_slice_mut().unwrap();
    let db_s = dbeta.as_slice_mut().unwrap();

    for gi in 0..groups {
        let (mean, inv_std) = stats[gi];
        // dnorm = g * gamma per channel; accumulate the two group-level sums.
        let mut sum_dnorm = 0.0;
        let mut sum_dnorm_xhat = 0.0;
        for ci in 0..per {
            let ch = gi * per + ci;
            let base = ch * h * w;
            for i in 0..h * w {
                let xhat = (src[base + i] - mean) * inv_std;
                let go = gsl[base + i];
                dg_s[ch] += go * xhat;
                db_s[ch] += go;
                let dn = go * gas[ch];
                sum_dnorm += dn;
                sum_dnorm_xhat += dn * xhat;
            }
        }
        for ci in 0..per {
            let ch = gi * per + ci;
            let base = ch * h * w;
            for i in 0..h * w {
                let xhat = (src[base + i] - mean) * inv_std;
                let dn = gsl[base + i] * gas[ch];
                din_s[base + i] = inv_std * (dn - sum_dnorm / n - xhat * sum_dnorm_xhat / n);
            }
        }
    }
    (din, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use crate::autodiff::{finite_difference, max_relative_error, Graph};
    use ndarray::{ArrayD, IxDyn};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_arr(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn conv2d_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = rand_arr(&[2, 5, 6], &mut rng);
        let w = rand_arr(&[3, 2, 3, 3], &mut rng);
        let b = rand_arr(&[3], &mut rng);

        let mut g = Graph::no_grad();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, bv, 1);
        assert_eq!(g.value(y).shape(), &[3, 5, 6]);

        // Direct nested-loop reference.
        for co in 0..3 {
            for oy in 0..5usize {
                for ox in 0..6usize {
                    let mut acc = b[IxDyn(&[co])];
                    for ci in 0..2 {
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let iy = oy as isize + ky as isize - 1;
                                let ix = ox as isize + kx as isize - 1;
                                if iy < 0 || iy >= 5 || ix < 0 || ix >= 6 {
                                    continue;
                                }
                                acc += x[IxDyn(&[ci, iy as usize, ix as usize])]
                                    * w[IxDyn(&[co, ci, ky, kx])];
                            }
                        }
                    }
                    let got = g.value(y)[IxDyn(&[co, oy, ox])];
                    assert!((got - acc).abs() < 1e-12, "mismatch at ({co},{oy},{ox})");
                }
            }
        }
    }

    #[test]
    fn conv2d_stride2_shape_and_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = rand_arr(&[2, 6, 6], &mut rng);
        let w = rand_arr(&[4, 2, 3, 3], &mut rng);
        let b = rand_arr(&[4], &mut rng);

        let run = |x: &ArrayD<f64>, w: &ArrayD<f64>, b: &ArrayD<f64>| {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let wv = g.leaf(w.clone());
            let bv = g.leaf(b.clone());
            let y = g.conv2d(xv, wv, bv, 2);
            let sq = g.mul(y, y);
            let loss = g.sum_all(sq);
            (g, xv, wv, bv, loss)
        };

        let (g, xv, wv, bv, loss) = run(&x, &w, &b);
        assert_eq!(g.value(loss).len(), 1);
        let grads = g.backward(loss);

        for (var, arr) in [(xv, &x), (wv, &w), (bv, &b)] {
            let analytic = grads.get(var).unwrap();
            let fd = finite_difference(
                &mut |p: &ArrayD<f64>| {
                    let (xp, wp, bp) = match var {
                        v if v == xv => (p.clone(), w.clone(), b.clone()),
                        v if v == wv => (x.clone(), p.clone(), b.clone()),
                        _ => (x.clone(), w.clone(), p.clone()),
                    };
                    let (g, _, _, _, loss) = run(&xp, &wp, &bp);
                    g.scalar_value(loss)
                },
                arr,
                1e-5,
            );
            let err = max_relative_error(analytic, &fd);
            assert!(err < 1e-6, "conv grad rel err {err:.3e}");
        }
    }

    #[test]
    fn conv2d_1x1_is_channel_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = rand_arr(&[3, 4, 4], &mut rng);
        let w = rand_arr(&[2, 3, 1, 1], &mut rng);
        let b = ArrayD::zeros(IxDyn(&[2]));
        let mut g = Graph::no_grad();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b));
        let y = g.conv2d(xv, wv, bv, 1);
        for y_i in 0..4 {
            for x_i in 0..4 {
                for co in 0..2 {
                    let want: f64 = (0..3)
                        .map(|ci| x[IxDyn(&[ci, y_i, x_i])] * w[IxDyn(&[co, ci, 0, 0])])
                        .sum();
                    assert!((g.value(y)[IxDyn(&[co, y_i, x_i])] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn upsample_nearest_replicates_and_grads_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let x = rand_arr(&[2, 3, 3], &mut rng);
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let up = g.upsample_nearest2(xv, 5, 6);
        assert_eq!(g.value(up).shape(), &[2, 5, 6]);
        for c in 0..2 {
            for y in 0..5 {
                for xx in 0..6 {
                    assert_eq!(
                        g.value(up)[IxDyn(&[c, y, xx])],
                        x[IxDyn(&[c, y / 2, xx / 2])]
                    );
                }
            }
        }
        let sq = g.mul(up, up);
        let loss = g.sum_all(sq);
        let grads = g.backward(loss);
        let fd = finite_difference(
            &mut |xp: &ArrayD<f64>| {
                let mut g = Graph::new();
                let xv = g.leaf(xp.clone());
                let up = g.upsample_nearest2(xv, 5, 6);
                let sq = g.mul(up, up);
                let l = g.sum_all(sq);
                g.scalar_value(l)
            },
            &x,
            1e-5,
        );
        assert!(max_relative_error(grads.get(xv).unwrap(), &fd) < 1e-6);
    }

    #[test]
    fn group_norm_normalizes_and_grads_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let x = rand_arr(&[4, 3, 3], &mut rng);
        let gamma = rand_arr(&[4], &mut rng).mapv(|v| 1.0 + 0.2 * v);
        let beta = rand_arr(&[4], &mut rng);

        // Unit gamma / zero beta: each group is zero-mean, unit-variance.
        {
            let mut g = Graph::no_grad();
            let xv = g.constant(x.clone());
            let ones = g.constant(ArrayD::from_elem(IxDyn(&[4]), 1.0));
            let zeros = g.constant(ArrayD::zeros(IxDyn(&[4])));
            let y = g.group_norm(xv, ones, zeros, 2, 1e-5);
            let v = g.value(y);
            for gi in 0..2 {
                let vals: Vec<f64> = (0..2)
                    .flat_map(|ci| {
                        let ch = gi * 2 + ci;
                        (0..9).map(move |i| (ch, i))
                    })
                    .map(|(ch, i)| v[IxDyn(&[ch, i / 3, i % 3])])
                    .collect();
                let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
                let var: f64 = vals.iter().map(|&z| (z - mean) * (z - mean)).sum::<f64>()
                    / vals.len() as f64;
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-4);
            }
        }

        let run = |x: &ArrayD<f64>, ga: &ArrayD<f64>, be: &ArrayD<f64>| {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let gv = g.leaf(ga.clone());
            let bv = g.leaf(be.clone());
            let y = g.group_norm(xv, gv, bv, 2, 1e-5);
            let e = g.exp(y);
            let loss = g.sum_all(e);
            (g, xv, gv, bv, loss)
        };
        let (g, xv, gv, bv, loss) = run(&x, &gamma, &beta);
        let grads = g.backward(loss);
        for (var, arr) in [(xv, &x), (gv, &gamma), (bv, &beta)] {
            let fd = finite_difference(
                &mut |p: &ArrayD<f64>| {
                    let (xp, gp, bp) = match var {
                        v if v == xv => (p.clone(), gamma.clone(), beta.clone()),
                        v if v == gv => (x.clone(), p.clone(), beta.clone()),
                        _ => (x.clone(), gamma.clone(), p.clone()),
                    };
                    let (g, _, _, _, loss) = run(&xp, &gp, &bp);
                    g.scalar_value(loss)
                },
                arr,
                1e-5,
            );
            let err = max_relative_error(grads.get(var).unwrap(), &fd);
            assert!(err < 1e-5, "group norm grad rel err {err:.3e}");
        }
    }
}
