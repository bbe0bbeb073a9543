//! 3D convolution primitives: forward, data gradient, and weight gradient.
//!
//! All three share one slab-chunked im2col scheme: output positions are
//! processed in bounded row-chunks so the unfolded column buffer never grows
//! with volume size. The GEMM inside each slab is the only hot loop.
//!
//! Layouts (row-major throughout):
//! - activations: (C, H, W, D), D fastest
//! - weights:     (C_out, C_in·k³), column index = ((ci·k + kh)·k + kw)·k + kd
//!
//! Transpose convolutions are expressed through these same routines by the
//! layer wrappers (forward = data gradient of the mirrored convolution).

use ndarray::{s, Array1, Array2, Array4, ArrayView2, Axis};

use super::Scalar;

/// Output edge length of a strided convolution.
pub fn conv_out_edge(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Bound on the column-buffer size; keeps peak memory flat for large volumes.
const MAX_SLAB_ELEMS: usize = 1 << 23;

fn slab_rows(rows: usize, out_h: usize, out_w: usize, out_d: usize) -> usize {
    let per_row = rows * out_w * out_d;
    (MAX_SLAB_ELEMS / per_row.max(1)).clamp(1, out_h)
}

struct Geometry {
    k: usize,
    stride: usize,
    pad: usize,
    in_shape: [usize; 3],
    out_shape: [usize; 3],
}

/// Gather the im2col block for output rows [oh0, oh1) into `cols`
/// with shape (C_in·k³, (oh1−oh0)·W'·D').
fn gather_cols<F: Scalar>(x: &Array4<F>, g: &Geometry, oh0: usize, oh1: usize, cols: &mut Array2<F>) {
    cols.fill(F::zero());
    let (c_in, k, stride, pad) = (x.shape()[0], g.k, g.stride, g.pad);
    let [h, w, d] = g.in_shape;
    let [_, out_w, out_d] = g.out_shape;
    let x_flat = x.as_slice().expect("standard layout");
    let cols_flat = cols.as_slice_mut().expect("standard layout");
    let l_slab = (oh1 - oh0) * out_w * out_d;

    for ci in 0..c_in {
        for kh in 0..k {
            for kw in 0..k {
                for kd in 0..k {
                    let row = ((ci * k + kh) * k + kw) * k + kd;
                    let row_base = row * l_slab;
                    for oh in oh0..oh1 {
                        let ih = (oh * stride + kh).wrapping_sub(pad);
                        if ih >= h {
                            continue;
                        }
                        for ow in 0..out_w {
                            let iw = (ow * stride + kw).wrapping_sub(pad);
                            if iw >= w {
                                continue;
                            }
                            let in_base = ((ci * h + ih) * w + iw) * d;
                            let out_base = row_base + ((oh - oh0) * out_w + ow) * out_d;
                            for od in 0..out_d {
                                let id = (od * stride + kd).wrapping_sub(pad);
                                if id < d {
                                    cols_flat[out_base + od] = x_flat[in_base + id];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the transpose of `gather_cols`: accumulate `cols` back into `gx`.
fn scatter_cols<F: Scalar>(gx: &mut Array4<F>, g: &Geometry, oh0: usize, oh1: usize, cols: &Array2<F>) {
    let (c_in, k, stride, pad) = (gx.shape()[0], g.k, g.stride, g.pad);
    let [h, w, d] = g.in_shape;
    let [_, out_w, out_d] = g.out_shape;
    let gx_flat = gx.as_slice_mut().expect("standard layout");
    let cols_flat = cols.as_slice().expect("standard layout");
    let l_slab = (oh1 - oh0) * out_w * out_d;

    for ci in 0..c_in {
        for kh in 0..k {
            for kw in 0..k {
                for kd in 0..k {
                    let row = ((ci * k + kh) * k + kw) * k + kd;
                    let row_base = row * l_slab;
                    for oh in oh0..oh1 {
                        let ih = (oh * stride + kh).wrapping_sub(pad);
                        if ih >= h {
                            continue;
                        }
                        for ow in 0..out_w {
                            let iw = (ow * stride + kw).wrapping_sub(pad);
                            if iw >= w {
                                continue;
                            }
                            let in_base = ((ci * h + ih) * w + iw) * d;
                            let out_base = row_base + ((oh - oh0) * out_w + ow) * out_d;
                            for od in 0..out_d {
                                let id = (od * stride + kd).wrapping_sub(pad);
                                if id < d {
                                    gx_flat[in_base + id] =
                                        gx_flat[in_base + id] + cols_flat[out_base + od];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry<F: Scalar>(x_shape: &[usize], k: usize, stride: usize, pad: usize, w: &ArrayView2<F>) -> Geometry {
    let c_in = x_shape[0];
    let rows = c_in * k * k * k;
    assert_eq!(
        w.shape()[1],
        rows,
        "weight columns {} do not match C_in·k³ = {rows}",
        w.shape()[1]
    );
    let in_shape = [x_shape[1], x_shape[2], x_shape[3]];
    let out_shape = [
        conv_out_edge(in_shape[0], k, stride, pad),
        conv_out_edge(in_shape[1], k, stride, pad),
        conv_out_edge(in_shape[2], k, stride, pad),
    ];
    Geometry {
        k,
        stride,
        pad,
        in_shape,
        out_shape,
    }
}

/// y[co, o] = Σ_{ci,kh,kw,kd} w[co, ·]·x[ci, o·s − p + κ] (+ bias).
pub fn conv3d_forward<F: Scalar>(
    x: &Array4<F>,
    w: &ArrayView2<F>,
    bias: Option<&Array1<F>>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let g = geometry(x.shape(), k, stride, pad, w);
    let c_out = w.shape()[0];
    let rows = w.shape()[1];
    let [out_h, out_w, out_d] = g.out_shape;
    let mut y = Array4::zeros((c_out, out_h, out_w, out_d));

    let chunk = slab_rows(rows, out_h, out_w, out_d);
    let mut oh0 = 0;
    while oh0 < out_h {
        let oh1 = (oh0 + chunk).min(out_h);
        let l_slab = (oh1 - oh0) * out_w * out_d;
        let mut cols = Array2::zeros((rows, l_slab));
        gather_cols(x, &g, oh0, oh1, &mut cols);
        let y_slab = w.dot(&cols);
        let target = y.slice_mut(s![.., oh0..oh1, .., ..]);
        let reshaped = y_slab
            .into_shape_with_order((c_out, oh1 - oh0, out_w, out_d))
            .expect("slab shape");
        ndarray::Zip::from(target).and(&reshaped).for_each(|t, &v| *t = v);
        oh0 = oh1;
    }

    if let Some(b) = bias {
        for (mut plane, &bv) in y.outer_iter_mut().zip(b.iter()) {
            plane.mapv_inplace(|v| v + bv);
        }
    }
    y
}

/// Gradient w.r.t. the input: gx = scatter(wᵀ·gy).
pub fn conv3d_backward_data<F: Scalar>(
    gy: &Array4<F>,
    w: &ArrayView2<F>,
    k: usize,
    stride: usize,
    pad: usize,
    in_shape: [usize; 4],
) -> Array4<F> {
    let g = geometry(&in_shape, k, stride, pad, w);
    let c_out = w.shape()[0];
    let [out_h, out_w, out_d] = g.out_shape;
    assert_eq!(
        gy.shape(),
        [c_out, out_h, out_w, out_d],
        "output-gradient shape"
    );
    let rows = w.shape()[1];
    let mut gx = Array4::zeros((in_shape[0], in_shape[1], in_shape[2], in_shape[3]));

    let chunk = slab_rows(rows, out_h, out_w, out_d);
    let mut oh0 = 0;
    while oh0 < out_h {
        let oh1 = (oh0 + chunk).min(out_h);
        let gy_slab = gy
            .slice(s![.., oh0..oh1, .., ..])
            .to_owned()
            .into_shape_with_order((c_out, (oh1 - oh0) * out_w * out_d))
            .expect("slab shape");
        let cols = w.t().dot(&gy_slab);
        scatter_cols(&mut gx, &g, oh0, oh1, &cols);
        oh0 = oh1;
    }
    gx
}

/// Gradients w.r.t. weight and bias: gw = gy·colsᵀ, gb = Σ gy.
pub fn conv3d_backward_weight<F: Scalar>(
    x: &Array4<F>,
    gy: &Array4<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Array2<F>, Array1<F>) {
    let c_in = x.shape()[0];
    let c_out = gy.shape()[0];
    let rows = c_in * k * k * k;
    let g = Geometry {
        k,
        stride,
        pad,
        in_shape: [x.shape()[1], x.shape()[2], x.shape()[3]],
        out_shape: [gy.shape()[1], gy.shape()[2], gy.shape()[3]],
    };
    debug_assert_eq!(g.out_shape[0], conv_out_edge(g.in_shape[0], k, stride, pad));
    let [out_h, out_w, out_d] = g.out_shape;

    let mut gw = Array2::zeros((c_out, rows));
    let mut gb = Array1::zeros(c_out);
    let chunk = slab_rows(rows, out_h, out_w, out_d);
    let mut oh0 = 0;
    while oh0 < out_h {
        let oh1 = (oh0 + chunk).min(out_h);
        let l_slab = (oh1 - oh0) * out_w * out_d;
        let mut cols = Array2::zeros((rows, l_slab));
        gather_cols(x, &g, oh0, oh1, &mut cols);
        let gy_slab = gy
            .slice(s![.., oh0..oh1, .., ..])
            .to_owned()
            .into_shape_with_order((c_out, l_slab))
            .expect("slab shape");
        gw = gw + gy_slab.dot(&cols.t());
        gb = gb + gy_slab.sum_axis(Axis(1));
        oh0 = oh1;
    }
    (gw, gb)
}
