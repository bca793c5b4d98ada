//! Backward-warp sampling kernels (bilinear / trilinear) with clamp-to-edge
//! border handling, plus their gradients with respect to source values and
//! flow values.
//!
//! Coordinates follow array index order: flow channel 0 displaces along the
//! slowest spatial axis. A sample at position `p` reads the source at
//! `p + flow(p)`; coordinates outside the grid are clamped to the border,
//! where the flow gradient is zero (the clamp is flat).

use crate::tensor::{Real, Tensor};

/// `out(p) = interp(src, p + flow(p))`. Flow channels: 2 for bilinear
/// (depth must be 1), 3 for trilinear.
pub fn warp_forward<F: Real>(src: &Tensor<F>, flow: &Tensor<F>) -> Tensor<F> {
    let [c, d, h, w] = src.dims4();
    let [fc, fd, fh, fw] = flow.dims4();
    assert_eq!(
        (fd, fh, fw),
        (d, h, w),
        "warp: flow spatial shape must equal source spatial shape"
    );
    let mut out = Tensor::zeros(src.shape());
    match fc {
        2 => {
            assert_eq!(d, 1, "2-channel flow requires depth-1 fields");
            bilinear_forward(src, flow, c, h, w, out.data_mut());
        }
        3 => trilinear_forward(src, flow, c, d, h, w, out.data_mut()),
        other => panic!("warp: flow must have 2 or 3 channels, got {}", other),
    }
    out
}

/// Gradients of `sum(gout * warp(src, flow))` with respect to `src` and `flow`.
pub fn warp_backward<F: Real>(
    gout: &Tensor<F>,
    src: &Tensor<F>,
    flow: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>) {
    let [c, d, h, w] = src.dims4();
    let fc = flow.dims4()[0];
    let mut gsrc = Tensor::zeros(src.shape());
    let mut gflow = Tensor::zeros(flow.shape());
    match fc {
        2 => bilinear_backward(gout, src, flow, c, h, w, gsrc.data_mut(), gflow.data_mut()),
        3 => trilinear_backward(
            gout,
            src,
            flow,
            c,
            d,
            h,
            w,
            gsrc.data_mut(),
            gflow.data_mut(),
        ),
        other => panic!("warp: flow must have 2 or 3 channels, got {}", other),
    }
    (gsrc, gflow)
}

#[inline]
fn clamp_coord<F: Real>(v: F, max: usize) -> (usize, usize, F, bool) {
    // Returns (i0, i1, frac, interior): interior is false when the raw
    // coordinate was clamped, making d(sample)/d(coord) zero.
    let top = F::of(max as f64);
    let zero = F::zero();
    let interior = v > zero && v < top;
    let cv = if v < zero {
        zero
    } else if v > top {
        top
    } else {
        v
    };
    let i0f = cv.floor();
    let i0 = i0f.as_f64() as usize;
    let i1 = (i0 + 1).min(max);
    (i0, i1, cv - i0f, interior)
}

fn bilinear_forward<F: Real>(src: &Tensor<F>, flow: &Tensor<F>, c: usize, h: usize, w: usize, out: &mut [F]) {
    let sp = h * w;
    let fy = &flow.data()[0..sp];
    let fx = &flow.data()[sp..2 * sp];
    let sd = src.data();
    let one = F::one();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let sy = F::of(y as f64) + fy[p];
            let sx = F::of(x as f64) + fx[p];
            let (y0, y1, ay, _) = clamp_coord(sy, h - 1);
            let (x0, x1, ax, _) = clamp_coord(sx, w - 1);
            let w00 = (one - ay) * (one - ax);
            let w01 = (one - ay) * ax;
            let w10 = ay * (one - ax);
            let w11 = ay * ax;
            for ch in 0..c {
                let base = ch * sp;
                out[base + p] = w00 * sd[base + y0 * w + x0]
                    + w01 * sd[base + y0 * w + x1]
                    + w10 * sd[base + y1 * w + x0]
                    + w11 * sd[base + y1 * w + x1];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn bilinear_backward<F: Real>(
    gout: &Tensor<F>,
    src: &Tensor<F>,
    flow: &Tensor<F>,
    c: usize,
    h: usize,
    w: usize,
    gsrc: &mut [F],
    gflow: &mut [F],
) {
    let sp = h * w;
    let fy = &flow.data()[0..sp];
    let fx = &flow.data()[sp..2 * sp];
    let sd = src.data();
    let gd = gout.data();
    let one = F::one();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let sy = F::of(y as f64) + fy[p];
            let sx = F::of(x as f64) + fx[p];
            let (y0, y1, ay, y_in) = clamp_coord(sy, h - 1);
            let (x0, x1, ax, x_in) = clamp_coord(sx, w - 1);
            let w00 = (one - ay) * (one - ax);
            let w01 = (one - ay) * ax;
            let w10 = ay * (one - ax);
            let w11 = ay * ax;
            let mut gy = F::zero();
            let mut gx = F::zero();
            for ch in 0..c {
                let base = ch * sp;
                let g = gd[base + p];
                let s00 = sd[base + y0 * w + x0];
                let s01 = sd[base + y0 * w + x1];
                let s10 = sd[base + y1 * w + x0];
                let s11 = sd[base + y1 * w + x1];
                gsrc[base + y0 * w + x0] += g * w00;
                gsrc[base + y0 * w + x1] += g * w01;
                gsrc[base + y1 * w + x0] += g * w10;
                gsrc[base + y1 * w + x1] += g * w11;
                gy += g * ((one - ax) * (s10 - s00) + ax * (s11 - s01));
                gx += g * ((one - ay) * (s01 - s00) + ay * (s11 - s10));
            }
            if y_in {
                gflow[p] += gy;
            }
            if x_in {
                gflow[sp + p] += gx;
            }
        }
    }
}

fn trilinear_forward<F: Real>(
    src: &Tensor<F>,
    flow: &Tensor<F>,
    c: usize,
    d: usize,
    h: usize,
    w: usize,
    out: &mut [F],
) {
    let sp = d * h * w;
    let fz = &flow.data()[0..sp];
    let fy = &flow.data()[sp..2 * sp];
    let fx = &flow.data()[2 * sp..3 * sp];
    let sd = src.data();
    let one = F::one();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let p = (z * h + y) * w + x;
                let sz = F::of(z as f64) + fz[p];
                let sy = F::of(y as f64) + fy[p];
                let sx = F::of(x as f64) + fx[p];
                let (z0, z1, az, _) = clamp_coord(sz, d - 1);
                let (y0, y1, ay, _) = clamp_coord(sy, h - 1);
                let (x0, x1, ax, _) = clamp_coord(sx, w - 1);
                for ch in 0..c {
                    let base = ch * sp;
                    let at = |zz: usize, yy: usize, xx: usize| sd[base + (zz * h + yy) * w + xx];
                    let c00 = at(z0, y0, x0) * (one - ax) + at(z0, y0, x1) * ax;
                    let c01 = at(z0, y1, x0) * (one - ax) + at(z0, y1, x1) * ax;
                    let c10 = at(z1, y0, x0) * (one - ax) + at(z1, y0, x1) * ax;
                    let c11 = at(z1, y1, x0) * (one - ax) + at(z1, y1, x1) * ax;
                    let c0 = c00 * (one - ay) + c01 * ay;
                    let c1 = c10 * (one - ay) + c11 * ay;
                    out[base + p] = c0 * (one - az) + c1 * az;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn trilinear_backward<F: Real>(
    gout: &Tensor<F>,
    src: &Tensor<F>,
    flow: &Tensor<F>,
    c: usize,
    d: usize,
    h: usize,
    w: usize,
    gsrc: &mut [F],
    gflow: &mut [F],
) {
    let sp = d * h * w;
    let fz = &flow.data()[0..sp];
    let fy = &flow.data()[sp..2 * sp];
    let fx = &flow.data()[2 * sp..3 * sp];
    let sd = src.data();
    let gd = gout.data();
    let one = F::one();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let p = (z * h + y) * w + x;
                let sz = F::of(z as f64) + fz[p];
                let sy = F::of(y as f64) + fy[p];
                let sx = F::of(x as f64) + fx[p];
                let (z0, z1, az, z_in) = clamp_coord(sz, d - 1);
                let (y0, y1, ay, y_in) = clamp_coord(sy, h - 1);
                let (x0, x1, ax, x_in) = clamp_coord(sx, w - 1);
                let bz = [one - az, az];
                let by = [one - ay, ay];
                let bx = [one - ax, ax];
                let zi = [z0, z1];
                let yi = [y0, y1];
                let xi = [x0, x1];
                let mut gz = F::zero();
                let mut gy = F::zero();
                let mut gx = F::zero();
                for ch in 0..c {
                    let base = ch * sp;
                    let g = gd[base + p];
                    for (iz, (&zz, &wz)) in zi.iter().zip(&bz).enumerate() {
                        for (iy, (&yy, &wy)) in yi.iter().zip(&by).enumerate() {
                            for (ix, (&xx, &wx)) in xi.iter().zip(&bx).enumerate() {
                                let idx = base + (zz * h + yy) * w + xx;
                                let sv = sd[idx];
                                gsrc[idx] += g * wz * wy * wx;
                                let dz = if iz == 0 { -one } else { one };
                                let dy = if iy == 0 { -one } else { one };
                                let dx = if ix == 0 { -one } else { one };
                                gz += g * sv * dz * wy * wx;
                                gy += g * sv * wz * dy * wx;
                                gx += g * sv * wz * wy * dx;
                            }
                        }
                    }
                }
                if z_in {
                    gflow[p] += gz;
                }
                if y_in {
                    gflow[sp + p] += gy;
                }
                if x_in {
                    gflow[2 * sp + p] += gx;
                }
            }
        }
    }
}
