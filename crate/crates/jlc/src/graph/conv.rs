//! Convolution kernels used by the graph ops.
//!
//! All loops are written so that every parallel work item owns a disjoint
//! slice of its output and performs its reductions in a fixed sequential
//! order. Results are therefore bit-identical whether or not rayon splits
//! the work.

use rayon::prelude::*;

use crate::tensor::Tensor;

/// out[b,oc,oy,ox] = bias[oc] + sum over (icl,ky,kx) of
///   x[b, base_ic+icl, oy*stride+ky-pad, ox*stride+kx-pad] * w[oc,icl,ky,kx]
pub fn conv2d_fwd(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor {
    let (b, cin, h, wd) = x.dims4();
    let (cout, cin_g, kh, kw) = w.dims4();
    assert_eq!(cin_g * groups, cin, "conv2d channel/group mismatch");
    assert_eq!(cout % groups, 0);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;

    let xs = x.data();
    let ws = w.data();
    let mut out = Tensor::zeros(&[b, cout, ho, wo]);
    let oc_per_g = cout / groups;

    out.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(plane, o)| {
            let bi = plane / cout;
            let oc = plane % cout;
            let g = oc / oc_per_g;
            if let Some(bt) = bias {
                let bv = bt.data()[oc];
                o.iter_mut().for_each(|v| *v = bv);
            }
            for icl in 0..cin_g {
                let ic = g * cin_g + icl;
                let x_plane = &xs[(bi * cin + ic) * h * wd..][..h * wd];
                let w_k = &ws[(oc * cin_g + icl) * kh * kw..][..kh * kw];
                for oy in 0..ho {
                    let orow = &mut o[oy * wo..][..wo];
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &x_plane[iy as usize * wd..][..wd];
                        for kx in 0..kw {
                            let wv = w_k[ky * kw + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let off = kx as isize - pad as isize;
                            for (ox, ov) in orow.iter_mut().enumerate() {
                                let ix = (ox * stride) as isize + off;
                                if ix >= 0 && ix < wd as isize {
                                    *ov += wv * xrow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Gradient of conv2d w.r.t. its input.
pub fn conv2d_bwd_x(
    gout: &Tensor,
    w: &Tensor,
    x_shape: &[usize],
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor {
    let (_b, cout, ho, wo) = gout.dims4();
    let (_, cin_g, kh, kw) = w.dims4();
    let (h, wd) = (x_shape[2], x_shape[3]);
    let cin = x_shape[1];
    let oc_per_g = cout / groups;

    let gs = gout.data();
    let ws = w.data();
    let mut gx = Tensor::zeros(x_shape);

    gx.data_mut()
        .par_chunks_mut(h * wd)
        .enumerate()
        .for_each(|(plane, gxp)| {
            let bi = plane / cin;
            let ic = plane % cin;
            let g = ic / cin_g;
            let icl = ic % cin_g;
            for ocl in 0..oc_per_g {
                let oc = g * oc_per_g + ocl;
                let g_plane = &gs[(bi * cout + oc) * ho * wo..][..ho * wo];
                let w_k = &ws[(oc * cin_g + icl) * kh * kw..][..kh * kw];
                for oy in 0..ho {
                    let grow = &g_plane[oy * wo..][..wo];
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let gxrow = &mut gxp[iy as usize * wd..][..wd];
                        for kx in 0..kw {
                            let wv = w_k[ky * kw + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let off = kx as isize - pad as isize;
                            for (ox, gv) in grow.iter().enumerate() {
                                let ix = (ox * stride) as isize + off;
                                if ix >= 0 && ix < wd as isize {
                                    gxrow[ix as usize] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        });
    gx
}

/// Gradient of conv2d w.r.t. its weight.
pub fn conv2d_bwd_w(
    gout: &Tensor,
    x: &Tensor,
    w_shape: &[usize],
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor {
    let (b, cin, h, wd) = x.dims4();
    let (bb, cout, ho, wo) = gout.dims4();
    assert_eq!(b, bb);
    let (cin_g, kh, kw) = (w_shape[1], w_shape[2], w_shape[3]);
    let oc_per_g = cout / groups;

    let gs = gout.data();
    let xs = x.data();
    let mut gw = Tensor::zeros(w_shape);

    gw.data_mut()
        .par_chunks_mut(cin_g * kh * kw)
        .enumerate()
        .for_each(|(oc, gwk)| {
            let g = oc / oc_per_g;
            for bi in 0..b {
                let g_plane = &gs[(bi * cout + oc) * ho * wo..][..ho * wo];
                for icl in 0..cin_g {
                    let ic = g * cin_g + icl;
                    let x_plane = &xs[(bi * cin + ic) * h * wd..][..h * wd];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let mut acc = 0.0;
                            for oy in 0..ho {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = &x_plane[iy as usize * wd..][..wd];
                                let grow = &g_plane[oy * wo..][..wo];
                                let off = kx as isize - pad as isize;
                                for (ox, gv) in grow.iter().enumerate() {
                                    let ix = (ox * stride) as isize + off;
                                    if ix >= 0 && ix < wd as isize {
                                        acc += gv * xrow[ix as usize];
                                    }
                                }
                            }
                            gwk[(icl * kh + ky) * kw + kx] += acc;
                        }
                    }
                }
            }
        });
    gw
}

/// Sum of gout over batch and spatial dims, one value per output channel.
pub fn conv2d_bwd_b(gout: &Tensor) -> Tensor {
    let (b, cout, ho, wo) = gout.dims4();
    let gs = gout.data();
    let mut gb = Tensor::zeros(&[cout]);
    let gbd = gb.data_mut();
    for bi in 0..b {
        for oc in 0..cout {
            let plane = &gs[(bi * cout + oc) * ho * wo..][..ho * wo];
            gbd[oc] += plane.iter().sum::<f64>();
        }
    }
    gb
}

/// Transposed convolution, weight layout [in_c, out_c, kh, kw].
/// out[b,oc, iy*stride - pad + ky, ix*stride - pad + kx] += x[b,ic,iy,ix] * w[ic,oc,ky,kx]
pub fn convt2d_fwd(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
    outpad: usize,
) -> Tensor {
    let (b, cin, h, wd) = x.dims4();
    let (cin_w, cout, kh, kw) = w.dims4();
    assert_eq!(cin, cin_w, "conv_transpose2d channel mismatch");
    let ho = (h - 1) * stride + kh + outpad - 2 * pad;
    let wo = (wd - 1) * stride + kw + outpad - 2 * pad;

    let xs = x.data();
    let ws = w.data();
    let mut out = Tensor::zeros(&[b, cout, ho, wo]);

    out.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(plane, o)| {
            let bi = plane / cout;
            let oc = plane % cout;
            if let Some(bt) = bias {
                let bv = bt.data()[oc];
                o.iter_mut().for_each(|v| *v = bv);
            }
            for ic in 0..cin {
                let x_plane = &xs[(bi * cin + ic) * h * wd..][..h * wd];
                let w_k = &ws[(ic * cout + oc) * kh * kw..][..kh * kw];
                for iy in 0..h {
                    let xrow = &x_plane[iy * wd..][..wd];
                    for ky in 0..kh {
                        let oy = (iy * stride + ky) as isize - pad as isize;
                        if oy < 0 || oy >= ho as isize {
                            continue;
                        }
                        let orow = &mut o[oy as usize * wo..][..wo];
                        for kx in 0..kw {
                            let wv = w_k[ky * kw + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let off = kx as isize - pad as isize;
                            for (ix, xv) in xrow.iter().enumerate() {
                                let ox = (ix * stride) as isize + off;
                                if ox >= 0 && ox < wo as isize {
                                    orow[ox as usize] += wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Gradient of conv_transpose2d w.r.t. its input (a conv-style gather of gout).
pub fn convt2d_bwd_x(
    gout: &Tensor,
    w: &Tensor,
    x_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor {
    let (_b, cout, ho, wo) = gout.dims4();
    let (cin, _, kh, kw) = w.dims4();
    let (h, wd) = (x_shape[2], x_shape[3]);

    let gs = gout.data();
    let ws = w.data();
    let mut gx = Tensor::zeros(x_shape);

    gx.data_mut()
        .par_chunks_mut(h * wd)
        .enumerate()
        .for_each(|(plane, gxp)| {
            let bi = plane / cin;
            let ic = plane % cin;
            for oc in 0..cout {
                let g_plane = &gs[(bi * cout + oc) * ho * wo..][..ho * wo];
                let w_k = &ws[(ic * cout + oc) * kh * kw..][..kh * kw];
                for iy in 0..h {
                    let gxrow = &mut gxp[iy * wd..][..wd];
                    for ky in 0..kh {
                        let oy = (iy * stride + ky) as isize - pad as isize;
                        if oy < 0 || oy >= ho as isize {
                            continue;
                        }
                        let grow = &g_plane[oy as usize * wo..][..wo];
                        for kx in 0..kw {
                            let wv = w_k[ky * kw + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let off = kx as isize - pad as isize;
                            for (ix, gxv) in gxrow.iter_mut().enumerate() {
                                let ox = (ix * stride) as isize + off;
                                if ox >= 0 && ox < wo as isize {
                                    *gxv += wv * grow[ox as usize];
                                }
                            }
                        }
                    }
                }
            }
        });
    gx
}

/// Gradient of conv_transpose2d w.r.t. its weight.
pub fn convt2d_bwd_w(
    gout: &Tensor,
    x: &Tensor,
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor {
    let (b, cin, h, wd) = x.dims4();
    let (_, cout, ho, wo) = gout.dims4();
    let (kh, kw) = (w_shape[2], w_shape[3]);

    let gs = gout.data();
    let xs = x.data();
    let mut gw = Tensor::zeros(w_shape);

    gw.data_mut()
        .par_chunks_mut(cout * kh * kw)
        .enumerate()
        .for_each(|(ic, gwp)| {
            for bi in 0..b {
                let x_plane = &xs[(bi * cin + ic) * h * wd..][..h * wd];
                for oc in 0..cout {
                    let g_plane = &gs[(bi * cout + oc) * ho * wo..][..ho * wo];
                    let gwk = &mut gwp[oc * kh * kw..][..kh * kw];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let mut acc = 0.0;
                            for iy in 0..h {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                if oy < 0 || oy >= ho as isize {
                                    continue;
                                }
                                let xrow = &x_plane[iy * wd..][..wd];
                                let grow = &g_plane[oy as usize * wo..][..wo];
                                let off = kx as isize - pad as isize;
                                for (ix, xv) in xrow.iter().enumerate() {
                                    let ox = (ix * stride) as isize + off;
                                    if ox >= 0 && ox < wo as isize {
                                        acc += xv * grow[ox as usize];
                                    }
                                }
                            }
                            gwk[ky * kw + kx] += acc;
                        }
                    }
                }
            }
        });
    gw
}
