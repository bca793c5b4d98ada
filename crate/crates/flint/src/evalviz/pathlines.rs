//! Pathline integration through time-indexed flow fields.
//!
//! Explicit midpoint (RK2) steps: `x' = x + F(x + F(x, k) * dt / 2, k) * dt`
//! with the flow bilinearly sampled in space and held piecewise-constant per
//! frame. Trajectories are clipped at the domain boundary; seeds outside the
//! domain are skipped with a warning.

use crate::error::{FlintError, Result};
use crate::field::FlowField;

use super::viz::{turbo, RgbImage};

pub type Polyline = Vec<[f64; 2]>;

fn sample_flow(flow: &FlowField, y: f64, x: f64) -> (f64, f64) {
    let (h, w) = (flow.shape[0], flow.shape[1]);
    let n = h * w;
    let cy = y.clamp(0.0, (h - 1) as f64);
    let cx = x.clamp(0.0, (w - 1) as f64);
    let y0 = cy.floor() as usize;
    let x0 = cx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ay = cy - y0 as f64;
    let ax = cx - x0 as f64;
    let at = |c: usize, yy: usize, xx: usize| flow.data[c * n + yy * w + xx] as f64;
    let lerp = |c: usize| {
        at(c, y0, x0) * (1.0 - ay) * (1.0 - ax)
            + at(c, y0, x1) * (1.0 - ay) * ax
            + at(c, y1, x0) * ay * (1.0 - ax)
            + at(c, y1, x1) * ay * ax
    };
    (lerp(0), lerp(1))
}

/// Integrate pathlines from `seeds` through `steps` frames of `flows`
/// (one flow per frame, displacement per frame). `substeps` subdivides each
/// frame interval; 1 reproduces the frame-resolution midpoint rule.
pub fn pathlines(
    flows: &[FlowField],
    seeds: &[[f64; 2]],
    steps: usize,
    substeps: usize,
) -> Result<Vec<Polyline>> {
    if flows.is_empty() {
        return Err(FlintError::EmptyInput("no flow fields for pathlines".into()));
    }
    if flows.len() < steps {
        return Err(FlintError::Contract(format!(
            "pathline integration over {steps} frames needs {steps} flows, got {}",
            flows.len()
        )));
    }
    if substeps == 0 {
        return Err(FlintError::Contract("substeps must be >= 1".into()));
    }
    let (h, w) = (flows[0].shape[0], flows[0].shape[1]);
    let inside = |p: [f64; 2]| {
        p[0] >= 0.0 && p[0] <= (h - 1) as f64 && p[1] >= 0.0 && p[1] <= (w - 1) as f64
    };
    let dt = 1.0 / substeps as f64;
    let mut out = Vec::new();
    for &seed in seeds {
        if !inside(seed) {
            eprintln!(
                "warning: pathline seed ({}, {}) outside domain; skipped",
                seed[0], seed[1]
            );
            continue;
        }
        let mut line: Polyline = vec![seed];
        let mut pos = seed;
        'frames: for flow in flows.iter().take(steps) {
            for _ in 0..substeps {
                let (ky, kx) = sample_flow(flow, pos[0], pos[1]);
                let mid = [pos[0] + 0.5 * ky * dt, pos[1] + 0.5 * kx * dt];
                let (my, mx) = sample_flow(flow, mid[0], mid[1]);
                let next = [pos[0] + my * dt, pos[1] + mx * dt];
                if !inside(next) {
                    break 'frames;
                }
                pos = next;
            }
            if (pos[0] - line.last().unwrap()[0]).abs() > 0.0
                || (pos[1] - line.last().unwrap()[1]).abs() > 0.0
            {
                line.push(pos);
            }
        }
        out.push(line);
    }
    Ok(out)
}

/// Render pathlines over a white background, one Turbo color per line.
pub fn render_pathlines(lines: &[Polyline], shape: &[usize]) -> RgbImage {
    let (h, w) = (shape[0], shape[1]);
    let mut img = RgbImage::blank(w, h, [255, 255, 255]);
    for (i, line) in lines.iter().enumerate() {
        let color = turbo(if lines.len() > 1 {
            i as f64 / (lines.len() - 1) as f64
        } else {
            0.5
        });
        for pair in line.windows(2) {
            img.line((pair[0][0], pair[0][1]), (pair[1][0], pair[1][1]), color);
        }
        if line.len() == 1 {
            img.put(line[0][0].round() as usize, line[0][1].round() as usize, color);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_flow(shape: &[usize], vy: f32, vx: f32) -> FlowField {
        let n: usize = shape.iter().product();
        let mut f = FlowField::zeros(shape);
        for p in 0..n {
            f.data[p] = vy;
            f.data[n + p] = vx;
        }
        f
    }

    /// Tangent velocity field of a rigid rotation about the grid center:
    /// v = omega * (dx, -dy). The analytic orbit is an exact circle.
    fn rotation_flow(n: usize, omega: f64) -> FlowField {
        let c = (n as f64 - 1.0) / 2.0;
        let mut f = FlowField::zeros(&[n, n]);
        for y in 0..n {
            for x in 0..n {
                let p = y * n + x;
                let dy = y as f64 - c;
                let dx = x as f64 - c;
                f.data[p] = (omega * dx) as f32;
                f.data[n * n + p] = (-omega * dy) as f32;
            }
        }
        f
    }

    #[test]
    fn zero_flow_stationary_polyline() {
        let flows = vec![FlowField::zeros(&[8, 8]); 5];
        let lines = pathlines(&flows, &[[3.0, 4.0]], 5, 1).unwrap();
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].len(), 1, "stationary seed, single vertex");
    }

    #[test]
    fn constant_flow_exact_endpoint() {
        let flows = vec![constant_flow(&[8, 4], 1.0, 0.0); 5];
        let lines = pathlines(&flows, &[[0.0, 0.0]], 5, 1).unwrap();
        let end = *lines[0].last().unwrap();
        assert_eq!(end, [5.0, 0.0], "midpoint rule is exact on constant flow");
        assert_eq!(lines[0].len(), 6);
    }

    #[test]
    fn seed_outside_domain_skipped() {
        let flows = vec![FlowField::zeros(&[4, 4]); 2];
        let lines = pathlines(&flows, &[[-1.0, 0.0], [1.0, 1.0]], 2, 1).unwrap();
        assert_eq!(lines.len(), 1);
    }

    #[test]
    fn rotation_orbit_closes_and_rk2_converges() {
        let n = 33;
        let period = 48usize;
        let omega = std::f64::consts::TAU / period as f64;
        let flow = rotation_flow(n, omega);
        let flows: Vec<FlowField> = vec![flow; period];
        let c = (n as f64 - 1.0) / 2.0;
        let seed = [c, c + 8.0];

        let endpoint_err = |substeps: usize| -> f64 {
            let lines = pathlines(&flows, &[seed], period, substeps).unwrap();
            let end = *lines[0].last().unwrap();
            ((end[0] - seed[0]).powi(2) + (end[1] - seed[1]).powi(2)).sqrt()
        };
        // one revolution returns within 2% of the orbit radius
        let e1 = endpoint_err(1);
        assert!(e1 < 0.02 * 8.0, "endpoint error {e1} exceeds 2% of radius");

        // RK2 is second order: halving the step shrinks the error ~4x
        let e2 = endpoint_err(2);
        let ratio = e1 / e2.max(1e-12);
        assert!(
            (2.5..6.0).contains(&ratio),
            "halving the step should shrink the endpoint error ~4x, got {ratio}"
        );
    }

    #[test]
    fn render_produces_nonblank_figure() {
        let flows = vec![constant_flow(&[16, 16], 0.5, 0.5); 8];
        let lines = pathlines(&flows, &[[2.0, 2.0], [8.0, 2.0]], 8, 1).unwrap();
        let img = render_pathlines(&lines, &[16, 16]);
        assert!(img.data.chunks(3).any(|px| px != [255, 255, 255]));
    }
}
