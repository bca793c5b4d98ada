//! Direct convolution and transposed-convolution kernels.
//!
//! All kernels operate on `[C, D, H, W]` activations. 2D data travels as
//! `D = 1` with a depth-1 kernel, so a single code path serves both
//! dimensionalities. Padding is `(k - 1) / 2` per axis (odd kernels only),
//! which gives `ceil(n / s)` output sizes for stride `s` — no shape is ever
//! rejected by the kernels themselves. Transposed convolutions take an
//! explicit output size so the up path can mirror a down path whose sizes
//! were not divisible by the stride.

use crate::tensor::{Real, Tensor};

/// Geometry of a convolution, captured at record time.
#[derive(Clone, Debug)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub in_sp: [usize; 3],
    pub out_sp: [usize; 3],
    pub k: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn new<F: Real>(x: &Tensor<F>, w: &Tensor<F>, stride: [usize; 3]) -> Self {
        let [ci, d, h, wd] = x.dims4();
        let [co, ci_w, kd, kh, kw] = w.dims5();
        assert_eq!(ci, ci_w, "conv: weight C_in {} != input C {}", ci_w, ci);
        let k = [kd, kh, kw];
        let pad = [half(kd), half(kh), half(kw)];
        let in_sp = [d, h, wd];
        let mut out_sp = [0usize; 3];
        for a in 0..3 {
            assert!(k[a] % 2 == 1, "conv kernels must be odd-sized");
            out_sp[a] = (in_sp[a] + 2 * pad[a] - k[a]) / stride[a] + 1;
        }
        ConvGeom {
            c_in: ci,
            c_out: co,
            in_sp,
            out_sp,
            k,
            stride,
            pad,
        }
    }
}

/// Geometry of a transposed convolution. `w` is laid out `[C_in, C_out, k...]`.
#[derive(Clone, Debug)]
pub struct DeconvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub in_sp: [usize; 3],
    pub out_sp: [usize; 3],
    pub k: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl DeconvGeom {
    pub fn new<F: Real>(x: &Tensor<F>, w: &Tensor<F>, stride: [usize; 3], out_sp: [usize; 3]) -> Self {
        let [ci, d, h, wd] = x.dims4();
        let [ci_w, co, kd, kh, kw] = w.dims5();
        assert_eq!(ci, ci_w, "deconv: weight C_in {} != input C {}", ci_w, ci);
        let k = [kd, kh, kw];
        for kk in k {
            assert!(kk % 2 == 1, "deconv kernels must be odd-sized");
        }
        // Every output cell must be reachable: out <= s*(in-1) + k - pad.
        let pad = [half(kd), half(kh), half(kw)];
        let in_sp = [d, h, wd];
        for a in 0..3 {
            let reach = stride[a] * (in_sp[a] - 1) + k[a] - pad[a];
            assert!(
                out_sp[a] <= reach,
                "deconv target size {} exceeds reach {} on axis {}",
                out_sp[a],
                reach,
                a
            );
        }
        DeconvGeom {
            c_in: ci,
            c_out: co,
            in_sp,
            out_sp,
            k,
            stride,
            pad,
        }
    }
}

#[inline]
fn half(k: usize) -> usize {
    (k - 1) / 2
}

/// Output positions `o` in `[lo, hi)` such that `0 <= o*s + off < n_in`.
#[inline]
fn valid_range(n_out: usize, n_in: usize, s: usize, off: isize) -> (usize, usize) {
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(s)
    };
    let max_i = n_in as isize - 1 - off;
    if max_i < 0 {
        return (0, 0);
    }
    let hi = (max_i as usize) / s + 1;
    (lo.min(n_out), hi.min(n_out))
}

// Fused 3-tap row kernels for the common kernel-3 / pad-1 case: one pass per
// row instead of one per tap.

#[inline]
fn row_fwd3<F: Real>(out_row: &mut [F], in_row: &[F], w: [F; 3], sw: usize) {
    let wo = out_row.len();
    let wi = in_row.len();
    let edge = |out_row: &mut [F], ox: usize| {
        let base = ox * sw;
        let mut acc = F::zero();
        if base >= 1 {
            acc += w[0] * in_row[base - 1];
        }
        acc += w[1] * in_row[base];
        if base + 1 < wi {
            acc += w[2] * in_row[base + 1];
        }
        out_row[ox] += acc;
    };
    let lo = 1usize.min(wo);
    let hi = if wi >= 2 {
        ((wi - 2) / sw + 1).min(wo)
    } else {
        0
    };
    for ox in 0..lo {
        edge(out_row, ox);
    }
    if hi > lo {
        if sw == 1 {
            let n = hi - lo;
            let a = &in_row[lo - 1..lo - 1 + n];
            let b = &in_row[lo..lo + n];
            let c = &in_row[lo + 1..lo + 1 + n];
            for (((o, &x0), &x1), &x2) in out_row[lo..hi].iter_mut().zip(a).zip(b).zip(c) {
                *o += w[0] * x0 + w[1] * x1 + w[2] * x2;
            }
        } else {
            for (j, o) in out_row[lo..hi].iter_mut().enumerate() {
                let base = (lo + j) * sw;
                *o += w[0] * in_row[base - 1] + w[1] * in_row[base] + w[2] * in_row[base + 1];
            }
        }
    }
    for ox in hi.max(lo)..wo {
        edge(out_row, ox);
    }
}

#[inline]
fn row_bwd_data3<F: Real>(gin_row: &mut [F], gout_row: &[F], w: [F; 3], sw: usize) {
    let wi = gin_row.len();
    let wo = gout_row.len();
    if sw == 1 {
        // gather form with flipped taps: gin[i] += sum_k w[k] * gout[i - k + 1]
        debug_assert_eq!(wi, wo);
        for (i, gi) in gin_row.iter_mut().enumerate() {
            let mut acc = w[1] * gout_row[i];
            if i + 1 < wo {
                acc += w[0] * gout_row[i + 1];
            }
            if i >= 1 {
                acc += w[2] * gout_row[i - 1];
            }
            *gi += acc;
        }
    } else {
        for (ox, &g) in gout_row.iter().enumerate() {
            let base = ox * sw;
            if base >= 1 {
                gin_row[base - 1] += w[0] * g;
            }
            gin_row[base] += w[1] * g;
            if base + 1 < wi {
                gin_row[base + 1] += w[2] * g;
            }
        }
    }
}

// Fused row kernels for transposed convolution: the loop runs over input
// positions, touching output positions `ix*sw + {-1, 0, +1}`.

#[inline]
fn drow_bounds(wo: usize, wi: usize, sw: usize) -> (usize, usize) {
    let lo = 1usize.min(wi);
    let hi = if wo >= 2 {
        ((wo - 2) / sw + 1).min(wi)
    } else {
        0
    };
    (lo, hi.max(lo.min(wi)))
}

#[inline]
fn drow_fwd3<F: Real>(out_row: &mut [F], in_row: &[F], w: [F; 3], sw: usize) {
    let wo = out_row.len();
    let wi = in_row.len();
    let (lo, hi) = drow_bounds(wo, wi, sw);
    let edge = |out_row: &mut [F], ix: usize| {
        let xv = in_row[ix];
        let base = ix * sw;
        if base >= 1 && base - 1 < wo {
            out_row[base - 1] += w[0] * xv;
        }
        if base < wo {
            out_row[base] += w[1] * xv;
        }
        if base + 1 < wo {
            out_row[base + 1] += w[2] * xv;
        }
    };
    for ix in 0..lo {
        edge(out_row, ix);
    }
    for ix in lo..hi {
        let xv = in_row[ix];
        let base = ix * sw;
        out_row[base - 1] += w[0] * xv;
        out_row[base] += w[1] * xv;
        out_row[base + 1] += w[2] * xv;
    }
    for ix in hi..wi {
        edge(out_row, ix);
    }
}

#[inline]
fn drow_bwd_data3<F: Real>(gin_row: &mut [F], gout_row: &[F], w: [F; 3], sw: usize) {
    let wo = gout_row.len();
    let wi = gin_row.len();
    let (lo, hi) = drow_bounds(wo, wi, sw);
    let edge = |gin_row: &mut [F], ix: usize| {
        let base = ix * sw;
        let mut acc = F::zero();
        if base >= 1 && base - 1 < wo {
            acc += w[0] * gout_row[base - 1];
        }
        if base < wo {
            acc += w[1] * gout_row[base];
        }
        if base + 1 < wo {
            acc += w[2] * gout_row[base + 1];
        }
        gin_row[ix] += acc;
    };
    for ix in 0..lo {
        edge(gin_row, ix);
    }
    for (j, gi) in gin_row[lo..hi].iter_mut().enumerate() {
        let base = (lo + j) * sw;
        *gi += w[0] * gout_row[base - 1] + w[1] * gout_row[base] + w[2] * gout_row[base + 1];
    }
    for ix in hi..wi {
        edge(gin_row, ix);
    }
}

#[inline]
fn drow_bwd_weight3<F: Real>(acc: &mut [F; 3], gout_row: &[F], in_row: &[F], sw: usize) {
    let wo = gout_row.len();
    let wi = in_row.len();
    let (lo, hi) = drow_bounds(wo, wi, sw);
    let edge = |ix: usize, acc: &mut [F; 3]| {
        let xv = in_row[ix];
        let base = ix * sw;
        if base >= 1 && base - 1 < wo {
            acc[0] += xv * gout_row[base - 1];
        }
        if base < wo {
            acc[1] += xv * gout_row[base];
        }
        if base + 1 < wo {
            acc[2] += xv * gout_row[base + 1];
        }
    };
    for ix in 0..lo {
        edge(ix, acc);
    }
    let mut a0 = F::zero();
    let mut a1 = F::zero();
    let mut a2 = F::zero();
    for (j, &xv) in in_row[lo..hi].iter().enumerate() {
        let base = (lo + j) * sw;
        a0 += xv * gout_row[base - 1];
        a1 += xv * gout_row[base];
        a2 += xv * gout_row[base + 1];
    }
    acc[0] += a0;
    acc[1] += a1;
    acc[2] += a2;
    for ix in hi..wi {
        edge(ix, acc);
    }
}

#[inline]
fn row_bwd_weight3<F: Real>(acc: &mut [F; 3], gout_row: &[F], in_row: &[F], sw: usize) {
    let wi = in_row.len();
    let wo = gout_row.len();
    let hi = if wi >= 2 {
        ((wi - 2) / sw + 1).min(wo)
    } else {
        0
    };
    let lo = 1usize.min(wo);
    let handle_edge = |ox: usize, acc: &mut [F; 3]| {
        let g = gout_row[ox];
        let base = ox * sw;
        if base >= 1 {
            acc[0] += g * in_row[base - 1];
        }
        acc[1] += g * in_row[base];
        if base + 1 < wi {
            acc[2] += g * in_row[base + 1];
        }
    };
    for ox in 0..lo {
        handle_edge(ox, acc);
    }
    if hi > lo {
        let mut a0 = F::zero();
        let mut a1 = F::zero();
        let mut a2 = F::zero();
        if sw == 1 {
            let n = hi - lo;
            let xa = &in_row[lo - 1..lo - 1 + n];
            let xb = &in_row[lo..lo + n];
            let xc = &in_row[lo + 1..lo + 1 + n];
            for (((&g, &x0), &x1), &x2) in gout_row[lo..hi].iter().zip(xa).zip(xb).zip(xc) {
                a0 += g * x0;
                a1 += g * x1;
                a2 += g * x2;
            }
        } else {
            for (j, &g) in gout_row[lo..hi].iter().enumerate() {
                let base = (lo + j) * sw;
                a0 += g * in_row[base - 1];
                a1 += g * in_row[base];
                a2 += g * in_row[base + 1];
            }
        }
        acc[0] += a0;
        acc[1] += a1;
        acc[2] += a2;
    }
    for ox in hi.max(lo)..wo {
        handle_edge(ox, acc);
    }
}

pub fn conv_forward<F: Real>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>, g: &ConvGeom) -> Tensor<F> {
    let [di, hi, wi] = g.in_sp;
    let [dd, hh, ww] = g.out_sp;
    let out_sp_len = dd * hh * ww;
    let mut out = Tensor::zeros(&[g.c_out, dd, hh, ww]);
    assert_eq!(b.len(), g.c_out, "conv bias length");
    for co in 0..g.c_out {
        let bv = b.data()[co];
        for v in &mut out.data_mut()[co * out_sp_len..(co + 1) * out_sp_len] {
            *v = bv;
        }
    }
    let [sd, sh, sw] = g.stride;
    let kn = g.k[0] * g.k[1] * g.k[2];
    let fused = g.k[2] == 3 && g.pad[2] == 1;
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            let w_base = (co * g.c_in + ci) * kn;
            for zk in 0..g.k[0] {
                let zoff = zk as isize - g.pad[0] as isize;
                let (zlo, zhi) = valid_range(dd, di, sd, zoff);
                for yk in 0..g.k[1] {
                    let yoff = yk as isize - g.pad[1] as isize;
                    let (ylo, yhi) = valid_range(hh, hi, sh, yoff);
                    if fused {
                        let wt = [
                            w.data()[w_base + (zk * g.k[1] + yk) * 3],
                            w.data()[w_base + (zk * g.k[1] + yk) * 3 + 1],
                            w.data()[w_base + (zk * g.k[1] + yk) * 3 + 2],
                        ];
                        if wt == [F::zero(); 3] {
                            continue;
                        }
                        for oz in zlo..zhi {
                            let iz = (oz * sd) as isize + zoff;
                            for oy in ylo..yhi {
                                let iy = (oy * sh) as isize + yoff;
                                let in_base =
                                    ((ci * di + iz as usize) * hi + iy as usize) * wi;
                                let out_base = ((co * dd + oz) * hh + oy) * ww;
                                row_fwd3(
                                    &mut out.data_mut()[out_base..out_base + ww],
                                    &x.data()[in_base..in_base + wi],
                                    wt,
                                    sw,
                                );
                            }
                        }
                        continue;
                    }
                    for xk in 0..g.k[2] {
                        let xoff = xk as isize - g.pad[2] as isize;
                        let (xlo, xhi) = valid_range(ww, wi, sw, xoff);
                        let wv = w.data()[w_base + (zk * g.k[1] + yk) * g.k[2] + xk];
                        if wv == F::zero() {
                            continue;
                        }
                        for oz in zlo..zhi {
                            let iz = (oz * sd) as isize + zoff;
                            for oy in ylo..yhi {
                                let iy = (oy * sh) as isize + yoff;
                                let in_base =
                                    ((ci * di + iz as usize) * hi + iy as usize) * wi;
                                let out_base = ((co * dd + oz) * hh + oy) * ww;
                                let xrow = &x.data()[in_base..in_base + wi];
                                let orow = &mut out.data_mut()[out_base + xlo..out_base + xhi];
                                if sw == 1 {
                                    let ix0 = (xlo as isize + xoff) as usize;
                                    for (o, &xv) in
                                        orow.iter_mut().zip(&xrow[ix0..ix0 + (xhi - xlo)])
                                    {
                                        *o += wv * xv;
                                    }
                                } else {
                                    for (j, o) in orow.iter_mut().enumerate() {
                                        let ox = xlo + j;
                                        let ix = (ox * sw) as isize + xoff;
                                        *o += wv * xrow[ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_backward_data<F: Real>(gout: &Tensor<F>, w: &Tensor<F>, g: &ConvGeom) -> Tensor<F> {
    let [di, hi, wi] = g.in_sp;
    let [dd, hh, ww] = g.out_sp;
    let [sd, sh, sw] = g.stride;
    let kn = g.k[0] * g.k[1] * g.k[2];
    let fused = g.k[2] == 3 && g.pad[2] == 1;
    let mut gx = Tensor::zeros(&[g.c_in, di, hi, wi]);
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            let w_base = (co * g.c_in + ci) * kn;
            for zk in 0..g.k[0] {
                let zoff = zk as isize - g.pad[0] as isize;
                let (zlo, zhi) = valid_range(dd, di, sd, zoff);
                for yk in 0..g.k[1] {
                    let yoff = yk as isize - g.pad[1] as isize;
                    let (ylo, yhi) = valid_range(hh, hi, sh, yoff);
                    if fused {
                        let wt = [
                            w.data()[w_base + (zk * g.k[1] + yk) * 3],
                            w.data()[w_base + (zk * g.k[1] + yk) * 3 + 1],
                            w.data()[w_base + (zk * g.k[1] + yk) * 3 + 2],
                        ];
                        if wt == [F::zero(); 3] {
                            continue;
                        }
                        for oz in zlo..zhi {
                            let iz = (oz * sd) as isize + zoff;
                            for oy in ylo..yhi {
                                let iy = (oy * sh) as isize + yoff;
                                let in_base = ((ci * di + iz as usize) * hi + iy as usize) * wi;
                                let out_base = ((co * dd + oz) * hh + oy) * ww;
                                row_bwd_data3(
                                    &mut gx.data_mut()[in_base..in_base + wi],
                                    &gout.data()[out_base..out_base + ww],
                                    wt,
                                    sw,
                                );
                            }
                        }
                        continue;
                    }
                    for xk in 0..g.k[2] {
                        let xoff = xk as isize - g.pad[2] as isize;
                        let (xlo, xhi) = valid_range(ww, wi, sw, xoff);
                        let wv = w.data()[w_base + (zk * g.k[1] + yk) * g.k[2] + xk];
                        if wv == F::zero() {
                            continue;
                        }
                        for oz in zlo..zhi {
                            let iz = (oz * sd) as isize + zoff;
                            for oy in ylo..yhi {
                                let iy = (oy * sh) as isize + yoff;
                                let in_base =
                                    ((ci * di + iz as usize) * hi + iy as usize) * wi;
                                let out_base = ((co * dd + oz) * hh + oy) * ww;
                                let grow = &gout.data()[out_base + xlo..out_base + xhi];
                                if sw == 1 {
                                    let ix0 = (xlo as isize + xoff) as usize;
                                    let xrow =
                                        &mut gx.data_mut()[in_base + ix0..in_base + ix0 + (xhi - xlo)];
                                    for (o, &gv) in xrow.iter_mut().zip(grow) {
                                        *o += wv * gv;
                                    }
                                } else {
                                    for (j, &gv) in grow.iter().enumerate() {
                                        let ox = xlo + j;
                                        let ix = (ox * sw) as isize + xoff;
                                        gx.data_mut()[in_base + ix as usize] += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

pub fn conv_backward_weight<F: Real>(gout: &Tensor<F>, x: &Tensor<F>, g: &ConvGeom) -> Tensor<F> {
    let [di, hi, wi] = g.in_sp;
    let [dd, hh, ww] = g.out_sp;
    let [sd, sh, sw] = g.stride;
    let kn = g.k[0] * g.k[1] * g.k[2];
    let fused = g.k[2] == 3 && g.pad[2] == 1;
    let mut gw = Tensor::zeros(&[g.c_out, g.c_in, g.k[0], g.k[1], g.k[2]]);
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            let w_base = (co * g.c_in + ci) * kn;
            for zk in 0..g.k[0] {
                let zoff = zk as isize - g.pad[0] as isize;
                let (zlo, zhi) = valid_range(dd, di, sd, zoff);
                for yk in 0..g.k[1] {
                    let yoff = yk as isize - g.pad[1] as isize;
                    let (ylo, yhi) = valid_range(hh, hi, sh, yoff);
                    if fused {
                        let mut acc = [F::zero(); 3];
                        for oz in zlo..zhi {
                            let iz = (oz * sd) as isize + zoff;
                            for oy in ylo..yhi {
                                let iy = (oy * sh) as isize + yoff;
                                let in_base = ((ci * di + iz as usize) * hi + iy as usize) * wi;
                                let out_base = ((co * dd + oz) * hh + oy) * ww;
                                row_bwd_weight3(
                                    &mut acc,
                                    &gout.data()[out_base..out_base + ww],
                                    &x.data()[in_base..in_base + wi],
                                    sw,
                                );
                            }
                        }
                        let wb = w_base + (zk * g.k[1] + yk) * 3;
                        gw.data_mut()[wb] = acc[0];
                        gw.data_mut()[wb + 1] = acc[1];
                        gw.data_mut()[wb + 2] = acc[2];
                        continue;
                    }
                    for xk in 0..g.k[2] {
                        let xoff = xk as isize - g.pad[2] as isize;
                        let (xlo, xhi) = valid_range(ww, wi, sw, xoff);
                        let mut acc = F::zero();
                        for oz in zlo..zhi {
                            let iz = (oz * sd) as isize + zoff;
                            for oy in ylo..yhi {
                                let iy = (oy * sh) as isize + yoff;
                                let in_base =
                                    ((ci * di + iz as usize) * hi + iy as usize) * wi;
                                let out_base = ((co * dd + oz) * hh + oy) * ww;
                                let grow = &gout.data()[out_base + xlo..out_base + xhi];
                                if sw == 1 {
                                    let ix0 = (xlo as isize + xoff) as usize;
                                    let xrow = &x.data()[in_base + ix0..in_base + ix0 + (xhi - xlo)];
                                    for (&gv, &xv) in grow.iter().zip(xrow) {
                                        acc += gv * xv;
                                    }
                                } else {
                                    for (j, &gv) in grow.iter().enumerate() {
                                        let ox = xlo + j;
                                        let ix = (ox * sw) as isize + xoff;
                                        acc += gv * x.data()[in_base + ix as usize];
                                    }
                                }
                            }
                        }
                        gw.data_mut()[w_base + (zk * g.k[1] + yk) * g.k[2] + xk] = acc;
                    }
                }
            }
        }
    }
    gw
}

/// Bias gradient: sum of the output gradient over all spatial positions.
pub fn bias_grad<F: Real>(gout: &Tensor<F>) -> Tensor<F> {
    let [c, d, h, w] = gout.dims4();
    let sp = d * h * w;
    let mut gb = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut s = F::zero();
        for &v in &gout.data()[ch * sp..(ch + 1) * sp] {
            s += v;
        }
        gb.data_mut()[ch] = s;
    }
    gb
}

pub fn deconv_forward<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b: &Tensor<F>,
    g: &DeconvGeom,
) -> Tensor<F> {
    let [di, hi, wi] = g.in_sp;
    let [dd, hh, ww] = g.out_sp;
    let [sd, sh, sw] = g.stride;
    let kn = g.k[0] * g.k[1] * g.k[2];
    let out_sp_len = dd * hh * ww;
    let mut out = Tensor::zeros(&[g.c_out, dd, hh, ww]);
    assert_eq!(b.len(), g.c_out, "deconv bias length");
    for co in 0..g.c_out {
        let bv = b.data()[co];
        for v in &mut out.data_mut()[co * out_sp_len..(co + 1) * out_sp_len] {
            *v = bv;
        }
    }
    let fused = g.k[2] == 3 && g.pad[2] == 1;
    for ci in 0..g.c_in {
        for co in 0..g.c_out {
            let w_base = (ci * g.c_out + co) * kn;
            for zk in 0..g.k[0] {
                let zoff = zk as isize - g.pad[0] as isize;
                let (zlo, zhi) = valid_range(di, dd, sd, zoff);
                for yk in 0..g.k[1] {
                    let yoff = yk as isize - g.pad[1] as isize;
                    let (ylo, yhi) = valid_range(hi, hh, sh, yoff);
                    if fused {
                        let wb = w_base + (zk * g.k[1] + yk) * 3;
                        let wt = [w.data()[wb], w.data()[wb + 1], w.data()[wb + 2]];
                        if wt == [F::zero(); 3] {
                            continue;
                        }
                        for iz in zlo..zhi {
                            let oz = (iz * sd) as isize + zoff;
                            for iy in ylo..yhi {
                                let oy = (iy * sh) as isize + yoff;
                                let in_base = ((ci * di + iz) * hi + iy) * wi;
                                let out_base =
                                    ((co * dd + oz as usize) * hh + oy as usize) * ww;
                                drow_fwd3(
                                    &mut out.data_mut()[out_base..out_base + ww],
                                    &x.data()[in_base..in_base + wi],
                                    wt,
                                    sw,
                                );
                            }
                        }
                        continue;
                    }
                    for xk in 0..g.k[2] {
                        let xoff = xk as isize - g.pad[2] as isize;
                        let (xlo, xhi) = valid_range(wi, ww, sw, xoff);
                        let wv = w.data()[w_base + (zk * g.k[1] + yk) * g.k[2] + xk];
                        if wv == F::zero() {
                            continue;
                        }
                        for iz in zlo..zhi {
                            let oz = (iz * sd) as isize + zoff;
                            for iy in ylo..yhi {
                                let oy = (iy * sh) as isize + yoff;
                                let in_base = ((ci * di + iz) * hi + iy) * wi;
                                let out_base =
                                    ((co * dd + oz as usize) * hh + oy as usize) * ww;
                                let xrow = &x.data()[in_base + xlo..in_base + xhi];
                                if sw == 1 {
                                    let ox0 = (xlo as isize + xoff) as usize;
                                    let orow = &mut out.data_mut()
                                        [out_base + ox0..out_base + ox0 + (xhi - xlo)];
                                    for (o, &xv) in orow.iter_mut().zip(xrow) {
                                        *o += wv * xv;
                                    }
                                } else {
                                    for (j, &xv) in xrow.iter().enumerate() {
                                        let ix = xlo + j;
                                        let ox = (ix * sw) as isize + xoff;
                                        out.data_mut()[out_base + ox as usize] += wv * xv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn deconv_backward_data<F: Real>(gout: &Tensor<F>, w: &Tensor<F>, g: &DeconvGeom) -> Tensor<F> {
    let [di, hi, wi] = g.in_sp;
    let [dd, hh, ww] = g.out_sp;
    let [sd, sh, sw] = g.stride;
    let kn = g.k[0] * g.k[1] * g.k[2];
    let fused = g.k[2] == 3 && g.pad[2] == 1;
    let mut gx = Tensor::zeros(&[g.c_in, di, hi, wi]);
    for ci in 0..g.c_in {
        for co in 0..g.c_out {
            let w_base = (ci * g.c_out + co) * kn;
            for zk in 0..g.k[0] {
                let zoff = zk as isize - g.pad[0] as isize;
                let (zlo, zhi) = valid_range(di, dd, sd, zoff);
                for yk in 0..g.k[1] {
                    let yoff = yk as isize - g.pad[1] as isize;
                    let (ylo, yhi) = valid_range(hi, hh, sh, yoff);
                    if fused {
                        let wb = w_base + (zk * g.k[1] + yk) * 3;
                        let wt = [w.data()[wb], w.data()[wb + 1], w.data()[wb + 2]];
                        if wt == [F::zero(); 3] {
                            continue;
                        }
                        for iz in zlo..zhi {
                            let oz = (iz * sd) as isize + zoff;
                            for iy in ylo..yhi {
                                let oy = (iy * sh) as isize + yoff;
                                let in_base = ((ci * di + iz) * hi + iy) * wi;
                                let out_base =
                                    ((co * dd + oz as usize) * hh + oy as usize) * ww;
                                drow_bwd_data3(
                                    &mut gx.data_mut()[in_base..in_base + wi],
                                    &gout.data()[out_base..out_base + ww],
                                    wt,
                                    sw,
                                );
                            }
                        }
                        continue;
                    }
                    for xk in 0..g.k[2] {
                        let xoff = xk as isize - g.pad[2] as isize;
                        let (xlo, xhi) = valid_range(wi, ww, sw, xoff);
                        let wv = w.data()[w_base + (zk * g.k[1] + yk) * g.k[2] + xk];
                        if wv == F::zero() {
                            continue;
                        }
                        for iz in zlo..zhi {
                            let oz = (iz * sd) as isize + zoff;
                            for iy in ylo..yhi {
                                let oy = (iy * sh) as isize + yoff;
                                let in_base = ((ci * di + iz) * hi + iy) * wi;
                                let out_base =
                                    ((co * dd + oz as usize) * hh + oy as usize) * ww;
                                if sw == 1 {
                                    let ox0 = (xlo as isize + xoff) as usize;
                                    let grow =
                                        &gout.data()[out_base + ox0..out_base + ox0 + (xhi - xlo)];
                                    let xrow = &mut gx.data_mut()[in_base + xlo..in_base + xhi];
                                    for (o, &gv) in xrow.iter_mut().zip(grow) {
                                        *o += wv * gv;
                                    }
                                } else {
                                    for ix in xlo..xhi {
                                        let ox = (ix * sw) as isize + xoff;
                                        gx.data_mut()[in_base + ix] +=
                                            wv * gout.data()[out_base + ox as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

pub fn deconv_backward_weight<F: Real>(gout: &Tensor<F>, x: &Tensor<F>, g: &DeconvGeom) -> Tensor<F> {
    let [di, hi, wi] = g.in_sp;
    let [dd, hh, ww] = g.out_sp;
    let [sd, sh, sw] = g.stride;
    let kn = g.k[0] * g.k[1] * g.k[2];
    let fused = g.k[2] == 3 && g.pad[2] == 1;
    let mut gw = Tensor::zeros(&[g.c_in, g.c_out, g.k[0], g.k[1], g.k[2]]);
    for ci in 0..g.c_in {
        for co in 0..g.c_out {
            let w_base = (ci * g.c_out + co) * kn;
            for zk in 0..g.k[0] {
                let zoff = zk as isize - g.pad[0] as isize;
                let (zlo, zhi) = valid_range(di, dd, sd, zoff);
                for yk in 0..g.k[1] {
                    let yoff = yk as isize - g.pad[1] as isize;
                    let (ylo, yhi) = valid_range(hi, hh, sh, yoff);
                    if fused {
                        let mut acc = [F::zero(); 3];
                        for iz in zlo..zhi {
                            let oz = (iz * sd) as isize + zoff;
                            for iy in ylo..yhi {
                                let oy = (iy * sh) as isize + yoff;
                                let in_base = ((ci * di + iz) * hi + iy) * wi;
                                let out_base =
                                    ((co * dd + oz as usize) * hh + oy as usize) * ww;
                                drow_bwd_weight3(
                                    &mut acc,
                                    &gout.data()[out_base..out_base + ww],
                                    &x.data()[in_base..in_base + wi],
                                    sw,
                                );
                            }
                        }
                        let wb = w_base + (zk * g.k[1] + yk) * 3;
                        gw.data_mut()[wb] = acc[0];
                        gw.data_mut()[wb + 1] = acc[1];
                        gw.data_mut()[wb + 2] = acc[2];
                        continue;
                    }
                    for xk in 0..g.k[2] {
                        let xoff = xk as isize - g.pad[2] as isize;
                        let (xlo, xhi) = valid_range(wi, ww, sw, xoff);
                        let mut acc = F::zero();
                        for iz in zlo..zhi {
                            let oz = (iz * sd) as isize + zoff;
                            for iy in ylo..yhi {
                                let oy = (iy * sh) as isize + yoff;
                                let in_base = ((ci * di + iz) * hi + iy) * wi;
                                let out_base =
                                    ((co * dd + oz as usize) * hh + oy as usize) * ww;
                                for ix in xlo..xhi {
                                    let ox = (ix * sw) as isize + xoff;
                                    acc += x.data()[in_base + ix]
                                        * gout.data()[out_base + ox as usize];
                                }
                            }
                        }
                        gw.data_mut()[w_base + (zk * g.k[1] + yk) * g.k[2] + xk] = acc;
                    }
                }
            }
        }
    }
    gw
}

/// Output spatial size of one conv axis (`ceil(n / s)` for odd kernels).
pub fn conv_out_size(n: usize, k: usize, s: usize) -> usize {
    (n + 2 * half(k) - k) / s + 1
}
