//! Backward warping and fusion on fields — the geometric core of the
//! interpolation pipeline.
//!
//! `backward_warp(src, flow)(p) = interp(src, p + flow(p))` with bilinear
//! (2D) or trilinear (3D) resampling and clamp-to-edge borders. Flow is a
//! displacement in grid cells added to the target coordinate; positive axes
//! follow array index order. The same kernels back the differentiable graph
//! in [`crate::autodiff`]; this module exposes the plain field-level view.

use crate::autodiff::warp::warp_forward;
use crate::error::{FlintError, Result};
use crate::field::{FlowField, FusionMask, ScalarField};
use crate::tensor::Tensor;

fn check_flow(spatial: &[usize], flow: &FlowField) -> Result<()> {
    if flow.shape != spatial {
        return Err(FlintError::ShapeMismatch(format!(
            "flow spatial shape {:?} vs source {:?}",
            flow.shape, spatial
        )));
    }
    if flow.dims() != spatial.len() {
        return Err(FlintError::ShapeMismatch(format!(
            "flow channels {} must equal dimensionality {}",
            flow.dims(),
            spatial.len()
        )));
    }
    Ok(())
}

/// Warp a scalar field backward along `flow`.
pub fn backward_warp(source: &ScalarField, flow: &FlowField) -> Result<ScalarField> {
    check_flow(&source.shape, flow)?;
    let src: Tensor<f32> = source.to_tensor();
    let fl: Tensor<f32> = flow.to_tensor();
    let out = warp_forward(&src, &fl);
    let mut f = ScalarField::from_tensor(&out, &source.shape);
    f.member_id = source.member_id.clone();
    f.time_index = source.time_index;
    f.norm_range = source.norm_range;
    Ok(f)
}

/// Warp a flow field backward along `flow` (each channel resampled).
pub fn backward_warp_flow(source: &FlowField, flow: &FlowField) -> Result<FlowField> {
    check_flow(&source.shape, flow)?;
    let src: Tensor<f32> = source.to_tensor();
    let fl: Tensor<f32> = flow.to_tensor();
    let out = warp_forward(&src, &fl);
    let mut f = FlowField::from_tensor(&out, &source.shape);
    f.member_id = source.member_id.clone();
    f.time_index = source.time_index;
    Ok(f)
}

/// Blend two warped fields: `out = warp_s * M + warp_u * (1 - M)`.
pub fn fuse(warp_s: &ScalarField, warp_u: &ScalarField, mask: &FusionMask) -> Result<ScalarField> {
    if warp_s.shape != warp_u.shape || warp_s.shape != mask.shape {
        return Err(FlintError::ShapeMismatch(format!(
            "fuse shapes {:?} / {:?} / {:?}",
            warp_s.shape, warp_u.shape, mask.shape
        )));
    }
    let mut out = warp_s.clone();
    for ((o, &b), &m) in out.data.iter_mut().zip(&warp_u.data).zip(&mask.data) {
        *o = *o * m + b * (1.0 - m);
    }
    Ok(out)
}

/// Constant conditioning plane holding the normalized time `tau`.
pub fn make_tau_plane(tau: f32, shape: &[usize]) -> Result<ScalarField> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(FlintError::Contract(format!(
            "tau must lie in [0, 1], got {tau}"
        )));
    }
    Ok(ScalarField::new(
        shape.to_vec(),
        vec![tau; shape.iter().product()],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_field(r: &mut StdRng, shape: &[usize]) -> ScalarField {
        ScalarField::new(
            shape.to_vec(),
            (0..shape.iter().product()).map(|_| r.random_range(0.0..1.0)).collect(),
        )
    }

    fn rand_flow(r: &mut StdRng, shape: &[usize], mag: f32) -> FlowField {
        let dims = shape.len();
        let n: usize = shape.iter().product();
        FlowField::new(
            shape.to_vec(),
            (0..dims * n).map(|_| r.random_range(-mag..mag)).collect(),
        )
    }

    /// Independent per-cell interpolation oracle, 2D.
    pub fn oracle_2d(src: &ScalarField, flow: &FlowField) -> Vec<f32> {
        let (h, w) = (src.shape[0], src.shape[1]);
        let mut out = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let sy = (y as f32 + flow.data[p]).clamp(0.0, (h - 1) as f32);
                let sx = (x as f32 + flow.data[h * w + p]).clamp(0.0, (w - 1) as f32);
                let y0 = sy.floor() as usize;
                let x0 = sx.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let ay = sy - y0 as f32;
                let ax = sx - x0 as f32;
                out[p] = src.data[y0 * w + x0] * (1.0 - ay) * (1.0 - ax)
                    + src.data[y0 * w + x1] * (1.0 - ay) * ax
                    + src.data[y1 * w + x0] * ay * (1.0 - ax)
                    + src.data[y1 * w + x1] * ay * ax;
            }
        }
        out
    }

    /// Independent per-cell interpolation oracle, 3D.
    pub fn oracle_3d(src: &ScalarField, flow: &FlowField) -> Vec<f32> {
        let (d, h, w) = (src.shape[0], src.shape[1], src.shape[2]);
        let n = d * h * w;
        let mut out = vec![0.0f32; n];
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let p = (z * h + y) * w + x;
                    let sz = (z as f32 + flow.data[p]).clamp(0.0, (d - 1) as f32);
                    let sy = (y as f32 + flow.data[n + p]).clamp(0.0, (h - 1) as f32);
                    let sx = (x as f32 + flow.data[2 * n + p]).clamp(0.0, (w - 1) as f32);
                    let (z0, y0, x0) = (sz.floor() as usize, sy.floor() as usize, sx.floor() as usize);
                    let (z1, y1, x1) = ((z0 + 1).min(d - 1), (y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (az, ay, ax) = (sz - z0 as f32, sy - y0 as f32, sx - x0 as f32);
                    let mut acc = 0.0;
                    for (zz, wz) in [(z0, 1.0 - az), (z1, az)] {
                        for (yy, wy) in [(y0, 1.0 - ay), (y1, ay)] {
                            for (xx, wx) in [(x0, 1.0 - ax), (x1, ax)] {
                                acc += src.data[(zz * h + yy) * w + xx] * wz * wy * wx;
                            }
                        }
                    }
                    out[p] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn zero_flow_is_identity() {
        let mut r = StdRng::seed_from_u64(11);
        let f = rand_field(&mut r, &[7, 9]);
        let out = backward_warp(&f, &FlowField::zeros(&[7, 9])).unwrap();
        assert_eq!(out.data, f.data);
        let f3 = rand_field(&mut r, &[4, 5, 6]);
        let out = backward_warp(&f3, &FlowField::zeros(&[4, 5, 6])).unwrap();
        assert_eq!(out.data, f3.data);
    }

    #[test]
    fn integer_shift_matches_index_oracle() {
        let (h, w) = (6, 10);
        let mut src = ScalarField::zeros(&[h, w]);
        for (i, v) in src.data.iter_mut().enumerate() {
            *v = i as f32;
        }
        let mut flow = FlowField::zeros(&[h, w]);
        for p in 0..h * w {
            flow.data[h * w + p] = 3.0;
        }
        let out = backward_warp(&src, &flow).unwrap();
        for y in 0..h {
            for x in 0..w {
                let sx = (x + 3).min(w - 1);
                assert_eq!(out.data[y * w + x], src.data[y * w + sx]);
            }
        }
    }

    #[test]
    fn fractional_shift_is_neighbor_midpoint() {
        let w = 8;
        let mut src = ScalarField::zeros(&[1, w]);
        for (i, v) in src.data.iter_mut().enumerate() {
            *v = i as f32;
        }
        let mut flow = FlowField::zeros(&[1, w]);
        for p in 0..w {
            flow.data[w + p] = 0.5;
        }
        let out = backward_warp(&src, &flow).unwrap();
        for x in 0..w - 1 {
            let mid = (src.data[x] + src.data[x + 1]) / 2.0;
            assert!((out.data[x] - mid).abs() < 1e-6);
        }
        assert_eq!(out.data[w - 1], src.data[w - 1], "border clamps");
    }

    #[test]
    fn random_cases_match_oracle() {
        let mut r = StdRng::seed_from_u64(12);
        for _ in 0..25 {
            let f = rand_field(&mut r, &[9, 13]);
            let fl = rand_flow(&mut r, &[9, 13], 3.0);
            let out = backward_warp(&f, &fl).unwrap();
            for (a, b) in out.data.iter().zip(oracle_2d(&f, &fl)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        for _ in 0..8 {
            let f = rand_field(&mut r, &[5, 6, 7]);
            let fl = rand_flow(&mut r, &[5, 6, 7], 3.0);
            let out = backward_warp(&f, &fl).unwrap();
            for (a, b) in out.data.iter().zip(oracle_3d(&f, &fl)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn warped_values_stay_in_source_hull() {
        let mut r = StdRng::seed_from_u64(13);
        let f = rand_field(&mut r, &[12, 12]);
        let lo = f.data.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = f.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let fl = rand_flow(&mut r, &[12, 12], 5.0);
        let out = backward_warp(&f, &fl).unwrap();
        for &v in &out.data {
            assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
        }
    }

    #[test]
    fn fuse_endpoints_and_midpoint() {
        let a = ScalarField::new(vec![2, 2], vec![0.0; 4]);
        let b = ScalarField::new(vec![2, 2], vec![1.0; 4]);
        let m1 = FusionMask::new(vec![2, 2], vec![1.0; 4]).unwrap();
        let m0 = FusionMask::new(vec![2, 2], vec![0.0; 4]).unwrap();
        let mh = FusionMask::new(vec![2, 2], vec![0.5; 4]).unwrap();
        assert_eq!(fuse(&a, &b, &m1).unwrap().data, a.data);
        assert_eq!(fuse(&a, &b, &m0).unwrap().data, b.data);
        assert!(fuse(&a, &b, &mh).unwrap().data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn fused_values_stay_between_pair() {
        let mut r = StdRng::seed_from_u64(14);
        let a = rand_field(&mut r, &[6, 6]);
        let b = rand_field(&mut r, &[6, 6]);
        let m = FusionMask::new(
            vec![6, 6],
            (0..36).map(|_| r.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let out = fuse(&a, &b, &m).unwrap();
        for i in 0..36 {
            let lo = a.data[i].min(b.data[i]);
            let hi = a.data[i].max(b.data[i]);
            assert!(out.data[i] >= lo - 1e-6 && out.data[i] <= hi + 1e-6);
        }
    }

    #[test]
    fn tau_plane_values() {
        let p = make_tau_plane(0.5, &[4, 4]).unwrap();
        assert_eq!(p.data, vec![0.5; 16]);
        let z = make_tau_plane(0.0, &[2, 3]).unwrap();
        assert!(z.data.iter().all(|&v| v == 0.0));
        let o = make_tau_plane(1.0, &[2, 2, 2]).unwrap();
        assert_eq!(o.data, vec![1.0; 8]);
        assert!(make_tau_plane(1.5, &[2, 2]).is_err());
    }

    #[test]
    fn shape_contract_errors() {
        let f = ScalarField::zeros(&[4, 4]);
        let fl = FlowField::zeros(&[4, 5]);
        assert!(matches!(
            backward_warp(&f, &fl),
            Err(FlintError::ShapeMismatch(_))
        ));
    }
}
