//! Minimal D2Q9 BGK lattice-Boltzmann simulation of flow past a cylinder.
//!
//! Single relaxation time collision, periodic top/bottom boundaries, fixed
//! equilibrium inflow on the left column, full bounce-back on cylinder
//! cells. Collision and streaming conserve mass exactly; only the inflow
//! column exchanges mass with the outside. Recorded flow is the lattice
//! velocity times the record stride, i.e. displacement in grid cells per
//! recorded frame interval.

use serde::{Deserialize, Serialize};

use crate::error::{FlintError, Result};
use crate::field::{FlowField, ScalarField};

use super::MemberData;

/// Lattice directions (dy, dx) and weights of the D2Q9 stencil.
const E: [(i64, i64); 9] = [
    (0, 0),
    (0, 1),
    (1, 0),
    (0, -1),
    (-1, 0),
    (1, 1),
    (1, -1),
    (-1, -1),
    (-1, 1),
];
/// Index of the direction opposite to `i`.
const OPP: [usize; 9] = [0, 3, 4, 1, 2, 7, 8, 5, 6];

/// D2Q9 weights, with the rest weight nudged so the f64 sum is exactly 1.
/// This makes the uniform rest state an exact fixed point of the update:
/// with sum(w) == 1, equilibrium(1, 0) reproduces the weights bit for bit.
fn weights() -> &'static [f64; 9] {
    static W: std::sync::OnceLock<[f64; 9]> = std::sync::OnceLock::new();
    W.get_or_init(|| {
        let mut w = [
            4.0 / 9.0,
            1.0 / 9.0,
            1.0 / 9.0,
            1.0 / 9.0,
            1.0 / 9.0,
            1.0 / 36.0,
            1.0 / 36.0,
            1.0 / 36.0,
            1.0 / 36.0,
        ];
        for _ in 0..8 {
            let s: f64 = w.iter().sum();
            if s == 1.0 {
                break;
            }
            w[0] += 1.0 - s;
        }
        w
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LbmParams {
    /// Grid (H, W): H is the cross-stream axis (periodic), W streamwise.
    pub grid: (usize, usize),
    /// Cylinder (center_y, center_x, radius) in cells; radius 0 disables it.
    pub cylinder: (f64, f64, f64),
    /// BGK relaxation time; kinematic viscosity is `(tau - 0.5) / 3`.
    pub tau_lbm: f64,
    /// Inflow speed in lattice units.
    pub u0: f64,
    pub steps: usize,
    pub warmup: usize,
    pub record_stride: usize,
}

impl LbmParams {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.grid;
        if h < 4 || w < 4 {
            return Err(FlintError::Config("LBM grid must be at least 4x4".into()));
        }
        if self.tau_lbm <= 0.5 {
            return Err(FlintError::Config(format!(
                "tau_lbm must exceed 0.5 for BGK stability, got {}",
                self.tau_lbm
            )));
        }
        if !(0.0..0.3).contains(&self.u0) {
            return Err(FlintError::Config(format!(
                "u0 must lie in [0, 0.3) for low-Mach validity, got {}",
                self.u0
            )));
        }
        let (cy, cx, r) = self.cylinder;
        if r > 0.0 {
            let inside = cy - r > 0.0
                && cy + r < (h - 1) as f64
                && cx - r > 0.0
                && cx + r < (w - 1) as f64;
            if !inside {
                return Err(FlintError::Config(
                    "cylinder must lie fully inside the grid".into(),
                ));
            }
        }
        if self.record_stride == 0 {
            return Err(FlintError::Config("record_stride must be >= 1".into()));
        }
        if self.steps < self.warmup {
            return Err(FlintError::Config("steps must cover the warmup".into()));
        }
        Ok(())
    }

    /// Number of frames recorded over the run.
    pub fn recorded_frames(&self) -> usize {
        (self.steps - self.warmup) / self.record_stride + 1
    }
}

/// Simulation state, stepped explicitly. Exposed so tests can drive the
/// collide/stream/boundary stages separately.
pub struct Lbm {
    pub params: LbmParams,
    /// Distributions, `f[i][y * w + x]`.
    f: Vec<Vec<f64>>,
    solid: Vec<bool>,
    scratch: Vec<Vec<f64>>,
    pub step_count: usize,
}

impl Lbm {
    pub fn new(params: &LbmParams) -> Result<Self> {
        params.validate()?;
        let (h, w) = params.grid;
        let n = h * w;
        let (cy, cx, r) = params.cylinder;
        let solid: Vec<bool> = (0..n)
            .map(|p| {
                if r <= 0.0 {
                    return false;
                }
                let y = (p / w) as f64;
                let x = (p % w) as f64;
                (y - cy).powi(2) + (x - cx).powi(2) <= r * r
            })
            .collect();
        // Uniform density, inflow velocity, and a deterministic cross-stream
        // perturbation (proportional to u0) that seeds vortex shedding.
        let mut f = vec![vec![0.0; n]; 9];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let uy = 0.02
                    * params.u0
                    * (std::f64::consts::TAU * y as f64 / h as f64).sin()
                    * (std::f64::consts::TAU * x as f64 / w as f64).cos();
                let eq = equilibrium(1.0, uy, params.u0);
                for i in 0..9 {
                    f[i][p] = eq[i];
                }
            }
        }
        Ok(Lbm {
            params: params.clone(),
            f,
            solid,
            scratch: vec![vec![0.0; n]; 9],
            step_count: 0,
        })
    }

    /// Total mass on the lattice.
    pub fn mass(&self) -> f64 {
        self.f.iter().map(|fi| fi.iter().sum::<f64>()).sum()
    }

    pub fn collide(&mut self) {
        let (h, w) = self.params.grid;
        let n = h * w;
        let inv_tau = 1.0 / self.params.tau_lbm;
        for p in 0..n {
            if self.solid[p] {
                continue;
            }
            let mut rho = 0.0;
            let mut my = 0.0;
            let mut mx = 0.0;
            for i in 0..9 {
                let v = self.f[i][p];
                rho += v;
                my += v * E[i].0 as f64;
                mx += v * E[i].1 as f64;
            }
            let uy = my / rho;
            let ux = mx / rho;
            let eq = equilibrium(rho, uy, ux);
            for i in 0..9 {
                self.f[i][p] -= (self.f[i][p] - eq[i]) * inv_tau;
            }
        }
    }

    /// Streaming with periodic wrap on both axes, then bounce-back on solid
    /// cells.
    pub fn stream_and_bounce(&mut self) {
        let (h, w) = self.params.grid;
        for i in 0..9 {
            let (dy, dx) = E[i];
            let src = &self.f[i];
            let dst = &mut self.scratch[i];
            for y in 0..h {
                let sy = ((y as i64 - dy).rem_euclid(h as i64)) as usize;
                for x in 0..w {
                    let sx = ((x as i64 - dx).rem_euclid(w as i64)) as usize;
                    dst[y * w + x] = src[sy * w + sx];
                }
            }
        }
        std::mem::swap(&mut self.f, &mut self.scratch);
        // Full bounce-back: reverse all populations on solid cells.
        let n = h * w;
        for p in 0..n {
            if !self.solid[p] {
                continue;
            }
            for i in 1..5 {
                let j = OPP[i];
                let a = self.f[i][p];
                self.f[i][p] = self.f[j][p];
                self.f[j][p] = a;
            }
            let a = self.f[5][p];
            self.f[5][p] = self.f[OPP[5]][p];
            self.f[OPP[5]][p] = a;
            let b = self.f[6][p];
            self.f[6][p] = self.f[OPP[6]][p];
            self.f[OPP[6]][p] = b;
        }
    }

    /// Impose equilibrium inflow on the left column.
    pub fn apply_inflow(&mut self) {
        let (h, w) = self.params.grid;
        let eq = equilibrium(1.0, 0.0, self.params.u0);
        for y in 0..h {
            let p = y * w;
            for i in 0..9 {
                self.f[i][p] = eq[i];
            }
        }
    }

    pub fn step(&mut self) -> Result<()> {
        self.collide();
        self.stream_and_bounce();
        self.apply_inflow();
        self.step_count += 1;
        if self.step_count % 20 == 0 && !self.is_finite() {
            return Err(FlintError::Diverged {
                step: self.step_count,
                detail: "non-finite distribution in LBM state".into(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.f.iter().all(|fi| fi.iter().all(|v| v.is_finite()))
    }

    /// Macroscopic density and velocity (uy, ux); solid cells report zero
    /// velocity.
    pub fn macroscopic(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (h, w) = self.params.grid;
        let n = h * w;
        let mut rho = vec![0.0; n];
        let mut uy = vec![0.0; n];
        let mut ux = vec![0.0; n];
        for p in 0..n {
            let mut r = 0.0;
            let mut my = 0.0;
            let mut mx = 0.0;
            for i in 0..9 {
                let v = self.f[i][p];
                r += v;
                my += v * E[i].0 as f64;
                mx += v * E[i].1 as f64;
            }
            rho[p] = r;
            if !self.solid[p] && r > 0.0 {
                uy[p] = my / r;
                ux[p] = mx / r;
            }
        }
        (rho, uy, ux)
    }

    /// Cross-stream velocity at a probe cell.
    pub fn probe_uy(&self, y: usize, x: usize) -> f64 {
        let (_, w) = self.params.grid;
        let p = y * w + x;
        let mut r = 0.0;
        let mut my = 0.0;
        for i in 0..9 {
            r += self.f[i][p];
            my += self.f[i][p] * E[i].0 as f64;
        }
        if self.solid[p] || r == 0.0 {
            0.0
        } else {
            my / r
        }
    }
}

fn equilibrium(rho: f64, uy: f64, ux: f64) -> [f64; 9] {
    let w = weights();
    let usq = 1.5 * (ux * ux + uy * uy);
    let mut eq = [0.0; 9];
    for i in 0..9 {
        let eu = E[i].0 as f64 * uy + E[i].1 as f64 * ux;
        eq[i] = w[i] * rho * (1.0 + 3.0 * eu + 4.5 * eu * eu - usq);
    }
    eq
}

/// Run the simulation and collect density + flow frames. Flow is stored as
/// displacement per recorded frame interval (velocity x record stride).
pub fn lbm_simulate(params: &LbmParams, _seed: u64) -> Result<MemberData> {
    let mut sim = Lbm::new(params)?;
    let (h, w) = params.grid;
    let stride = params.record_stride as f32;
    let mut density = Vec::new();
    let mut flow = Vec::new();
    let record = |sim: &Lbm, density: &mut Vec<ScalarField>, flow: &mut Vec<FlowField>| {
        let (rho, uy, ux) = sim.macroscopic();
        density.push(ScalarField::new(
            vec![h, w],
            rho.iter().map(|&v| v as f32).collect(),
        ));
        let mut data: Vec<f32> = Vec::with_capacity(2 * h * w);
        data.extend(uy.iter().map(|&v| v as f32 * stride));
        data.extend(ux.iter().map(|&v| v as f32 * stride));
        flow.push(FlowField::new(vec![h, w], data));
    };
    for step in 0..=params.steps {
        if step >= params.warmup && (step - params.warmup) % params.record_stride == 0 {
            if !sim.is_finite() {
                return Err(FlintError::Diverged {
                    step,
                    detail: "non-finite state at record point".into(),
                });
            }
            record(&sim, &mut density, &mut flow);
        }
        if step < params.steps {
            sim.step()?;
        }
    }
    Ok(MemberData {
        density,
        flow,
        warning_blob_exit: false,
    })
}
