//! Deterministic desk-scale ensemble generators.
//!
//! Three sources of ground truth: a D2Q9 lattice-Boltzmann flow-past-cylinder
//! simulator (`lbs-mini`), analytic Gaussian-blob advection with exact flow
//! (2D and 3D), and a Gaussian noise injector. All generators are
//! bit-reproducible under a fixed seed.

pub mod advect;
pub mod lbm;
pub mod noise;

use std::collections::BTreeMap;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveWriter, EnsembleArchive, FieldSpec, Manifest, MemberEntry};
use crate::error::{FlintError, Result};
use crate::field::{FlowField, ScalarField};

pub use advect::{advect_generate, AdvectParams, Blob, VelocitySpec};
pub use lbm::{lbm_simulate, LbmParams};
pub use noise::add_noise;

/// Density + flow frames produced for one ensemble member.
pub struct MemberData {
    pub density: Vec<ScalarField>,
    pub flow: Vec<FlowField>,
    /// Set when a blob trajectory leaves the grid interior by more than
    /// three widths (advection only).
    pub warning_blob_exit: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    LbsMini,
    AdvectConst,
    AdvectRot,
    Blob3d,
}

impl std::str::FromStr for Preset {
    type Err = FlintError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbs-mini" => Ok(Preset::LbsMini),
            "advect-const" => Ok(Preset::AdvectConst),
            "advect-rot" => Ok(Preset::AdvectRot),
            "blob3d" => Ok(Preset::Blob3d),
            other => Err(FlintError::Config(format!("unknown preset {other}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub preset: Preset,
    pub members: usize,
    pub timesteps: usize,
    pub seed: u64,
    /// Spatial shape override; preset default when None.
    pub grid: Option<Vec<usize>>,
    /// Velocity override for the advection presets.
    pub velocity: Option<Vec<f64>>,
    /// Blob width override for the advection presets.
    pub blob_sigma: Option<f64>,
    /// Gaussian noise applied to density after generation.
    pub noise_sigma: f64,
    /// Omit the flow field (unsupervised-style archive).
    pub with_flow: bool,
    pub overwrite: bool,
}

impl GenConfig {
    pub fn new(preset: Preset) -> Self {
        GenConfig {
            preset,
            members: match preset {
                Preset::LbsMini => 3,
                _ => 3,
            },
            timesteps: match preset {
                Preset::LbsMini => 60,
                Preset::Blob3d => 16,
                _ => 20,
            },
            seed: 7,
            grid: None,
            velocity: None,
            blob_sigma: None,
            noise_sigma: 0.0,
            with_flow: true,
            overwrite: false,
        }
    }

    fn grid_shape(&self) -> Vec<usize> {
        self.grid.clone().unwrap_or_else(|| match self.preset {
            Preset::LbsMini => vec![100, 400],
            Preset::Blob3d => vec![32, 32, 32],
            _ => vec![64, 64],
        })
    }
}

/// Generate an ensemble archive for a preset. Member parameters and the seed
/// are echoed into the manifest; all generation is deterministic in the seed.
pub fn generate(cfg: &GenConfig, out: impl AsRef<Path>) -> Result<EnsembleArchive> {
    let shape = cfg.grid_shape();
    let dims = shape.len();
    if cfg.members == 0 || cfg.timesteps == 0 {
        return Err(FlintError::Config("members and timesteps must be positive".into()));
    }

    let mut fields = BTreeMap::new();
    fields.insert(
        "density".to_string(),
        FieldSpec {
            dtype: "f32".into(),
            channels: 1,
            trim_end: 0,
        },
    );
    if cfg.with_flow {
        fields.insert(
            "flow".to_string(),
            FieldSpec {
                dtype: "f32".into(),
                channels: dims,
                trim_end: 0,
            },
        );
    }

    // Placeholder normalization; replaced with observed ranges before finish.
    let mut normalization = BTreeMap::new();
    normalization.insert("density".to_string(), [0.0f32, 1.0]);
    if cfg.with_flow {
        normalization.insert("flow".to_string(), [-1.0f32, 1.0]);
    }

    let manifest = Manifest {
        version: 1,
        dims,
        shape: shape.clone(),
        fields,
        members: Vec::new(),
        normalization,
        seed: cfg.seed,
    };
    let mut writer = ArchiveWriter::create(out, manifest, cfg.overwrite)?;

    let mut dens_range = (f32::INFINITY, f32::NEG_INFINITY);
    let mut flow_range = (f32::INFINITY, f32::NEG_INFINITY);

    for m in 0..cfg.members {
        let member_id = format!("m{m:03}");
        let member_seed = cfg.seed.wrapping_add(m as u64);
        let (data, params) = generate_member(cfg, &shape, member_seed)?;
        for f in &data.density {
            for &v in &f.data {
                dens_range.0 = dens_range.0.min(v);
                dens_range.1 = dens_range.1.max(v);
            }
        }
        if cfg.with_flow {
            for f in &data.flow {
                for &v in &f.data {
                    flow_range.0 = flow_range.0.min(v);
                    flow_range.1 = flow_range.1.max(v);
                }
            }
        }
        let mut params = params;
        if data.warning_blob_exit {
            params["warning_blob_exit"] = serde_json::json!(true);
        }
        params["seed"] = serde_json::json!(member_seed);
        if cfg.noise_sigma > 0.0 {
            params["noise_sigma"] = serde_json::json!(cfg.noise_sigma);
        }
        writer.manifest_mut().members.push(MemberEntry {
            id: member_id.clone(),
            timesteps: cfg.timesteps,
            params,
        });
        for (t, f) in data.density.iter().enumerate() {
            let mut f = f.clone();
            f.member_id = member_id.clone();
            f.time_index = t;
            writer.write_scalar("density", &f)?;
        }
        if cfg.with_flow {
            for (t, f) in data.flow.iter().enumerate() {
                let mut f = f.clone();
                f.member_id = member_id.clone();
                f.time_index = t;
                writer.write_flow("flow", &f)?;
            }
        }
    }

    let norm = writer.manifest_mut();
    norm.normalization.insert("density".into(), widen(dens_range));
    if cfg.with_flow {
        norm.normalization.insert("flow".into(), widen(flow_range));
    }
    let archive = writer.finish()?;

    if cfg.noise_sigma > 0.0 {
        // Noise is applied in place of the clean archive: regenerate into a
        // sibling temp dir, then swap.
        let tmp = archive.root.with_extension("noisy.tmp");
        let noisy = add_noise(&archive, cfg.noise_sigma, cfg.seed ^ 0x6e6f_6973, &tmp, true)?;
        std::fs::remove_dir_all(&archive.root)?;
        std::fs::rename(&noisy.root, &archive.root)?;
        return EnsembleArchive::open(&archive.root);
    }
    Ok(archive)
}

fn widen(range: (f32, f32)) -> [f32; 2] {
    let (mut lo, mut hi) = range;
    if !lo.is_finite() || !hi.is_finite() {
        return [0.0, 1.0];
    }
    if hi - lo < 1e-6 {
        lo -= 0.5;
        hi += 0.5;
    }
    [lo, hi]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(tag: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!(
            "flint-datagen-{tag}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ))
    }

    #[test]
    fn lbs_mini_preset_round_trips_member_params() {
        let mut cfg = GenConfig::new(Preset::LbsMini);
        cfg.members = 2;
        cfg.timesteps = 3;
        cfg.grid = Some(vec![20, 40]);
        cfg.seed = 13;
        let archive = generate(&cfg, tmp("lbs")).unwrap();
        let reopened = EnsembleArchive::open(&archive.root).unwrap();
        for m in &reopened.manifest.members {
            let radius = m.params["radius"].as_f64().unwrap();
            let tau = m.params["tau_lbm"].as_f64().unwrap();
            assert!(radius > 0.0, "member {} records cylinder radius", m.id);
            assert!(tau > 0.5, "member {} records relaxation time", m.id);
            assert_eq!(m.params["seed"].as_u64().unwrap(), 13 + m.id[1..].parse::<u64>().unwrap());
        }
        assert!(reopened.load_flow("m000", "flow", 2).is_ok());
    }

    #[test]
    fn blob3d_preset_generates_volumes_with_flow() {
        let mut cfg = GenConfig::new(Preset::Blob3d);
        cfg.members = 1;
        cfg.timesteps = 4;
        cfg.grid = Some(vec![12, 12, 12]);
        let archive = generate(&cfg, tmp("blob3d")).unwrap();
        assert_eq!(archive.manifest.dims, 3);
        let d = archive.load_scalar("m000", "density", 3).unwrap();
        assert_eq!(d.shape, vec![12, 12, 12]);
        let f = archive.load_flow("m000", "flow", 0).unwrap();
        assert_eq!(f.data.len(), 3 * 12 * 12 * 12);
        assert!(d.data.iter().any(|&v| v > 0.1), "blob present in volume");
    }

    #[test]
    fn advect_rot_preset_is_deterministic() {
        let mut cfg = GenConfig::new(Preset::AdvectRot);
        cfg.members = 1;
        cfg.timesteps = 3;
        cfg.grid = Some(vec![24, 24]);
        cfg.seed = 4;
        let a = generate(&cfg, tmp("rot-a")).unwrap();
        let b = generate(&cfg, tmp("rot-b")).unwrap();
        let fa = a.load_scalar("m000", "density", 2).unwrap();
        let fb = b.load_scalar("m000", "density", 2).unwrap();
        assert_eq!(fa.data, fb.data);
    }
}

fn generate_member(
    cfg: &GenConfig,
    shape: &[usize],
    seed: u64,
) -> Result<(MemberData, serde_json::Value)> {
    let mut rng = StdRng::seed_from_u64(seed);
    match cfg.preset {
        Preset::LbsMini => {
            let (h, w) = (shape[0], shape[1]);
            let radius = rng.random_range(0.08..0.12) * h as f64;
            let cy = rng.random_range(0.4..0.6) * h as f64;
            let cx = rng.random_range(0.2..0.3) * w as f64;
            let tau_lbm = rng.random_range(0.55..0.70);
            let u0 = rng.random_range(0.08..0.12);
            let record_stride = 10;
            let warmup = 1000;
            let params = LbmParams {
                grid: (h, w),
                cylinder: (cy, cx, radius),
                tau_lbm,
                u0,
                warmup,
                record_stride,
                steps: warmup + (cfg.timesteps - 1) * record_stride,
            };
            let data = lbm_simulate(&params, seed)?;
            let echo = serde_json::json!({
                "kind": "lbs-mini",
                "cylinder_cy": cy,
                "cylinder_cx": cx,
                "radius": radius,
                "tau_lbm": tau_lbm,
                "u0": u0,
                "warmup": warmup,
                "record_stride": record_stride,
                "steps": params.steps,
            });
            Ok((data, echo))
        }
        Preset::AdvectConst | Preset::Blob3d => {
            let dims = shape.len();
            let velocity = cfg.velocity.clone().unwrap_or_else(|| {
                if dims == 2 {
                    vec![1.5, -0.5]
                } else {
                    vec![0.5, 0.4, -0.3]
                }
            });
            let sigma = cfg
                .blob_sigma
                .unwrap_or(if dims == 2 { 5.0 } else { 3.0 });
            let t_last = (cfg.timesteps - 1) as f64;
            let mut center = Vec::with_capacity(dims);
            for (a, &n) in velocity.iter().zip(shape) {
                let margin = 3.0 * sigma;
                let lo = margin + (-a * t_last).max(0.0);
                let hi = (n as f64 - 1.0 - margin) - (a * t_last).max(0.0);
                let c = if hi > lo { rng.random_range(lo..hi) } else { n as f64 / 2.0 };
                center.push(c);
            }
            let params = AdvectParams {
                shape: shape.to_vec(),
                blobs: vec![Blob {
                    center: center.clone(),
                    sigma,
                    amplitude: 1.0,
                }],
                velocity: VelocitySpec::Constant(velocity.clone()),
                steps: cfg.timesteps,
            };
            let data = advect_generate(&params, seed)?;
            let echo = serde_json::json!({
                "kind": if dims == 2 { "advect-const" } else { "blob3d" },
                "velocity": velocity,
                "blob_center": center,
                "sigma": sigma,
            });
            Ok((data, echo))
        }
        Preset::AdvectRot => {
            let (h, w) = (shape[0], shape[1]);
            let pivot = [h as f64 / 2.0, w as f64 / 2.0];
            let omega = std::f64::consts::TAU / 60.0;
            let r = rng.random_range(0.18..0.28) * h.min(w) as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let center = vec![pivot[0] + r * phase.cos(), pivot[1] + r * phase.sin()];
            let params = AdvectParams {
                shape: shape.to_vec(),
                blobs: vec![Blob {
                    center: center.clone(),
                    sigma: cfg.blob_sigma.unwrap_or(4.0),
                    amplitude: 1.0,
                }],
                velocity: VelocitySpec::RigidRotation {
                    center: pivot,
                    omega,
                },
                steps: cfg.timesteps,
            };
            let data = advect_generate(&params, seed)?;
            let echo = serde_json::json!({
                "kind": "advect-rot",
                "omega": omega,
                "pivot": pivot,
                "blob_center": center,
            });
            Ok((data, echo))
        }
    }
}
