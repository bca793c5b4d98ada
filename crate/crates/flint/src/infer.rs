//! Batch inference: reconstruct the timesteps an every-R-th subsampling
//! removed, and estimate a flow field at every produced index.
//!
//! The input archive's frames are treated as original indices `0, R, 2R, ...`.
//! Between each stored pair (s, u) the model runs at `tau = j / R`; at a
//! stored index the stored field is copied and the flow comes from that index
//! and its successor at `tau = 0` (the final stored index has no successor,
//! so the flow output stops one frame short). No extrapolation: requested
//! times outside the covered range are errors.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::archive::{ArchiveWriter, EnsembleArchive, FieldSpec, Manifest, MemberEntry};
use crate::error::{FlintError, Result};
use crate::field::{denormalize_field, normalize_field, FlowField, ScalarField};
use crate::model::checkpoint::load_checkpoint;
use crate::model::net::forward;
use crate::model::params::ParameterSet;

#[derive(Clone, Debug)]
pub struct InferStats {
    pub timesteps: usize,
    pub seconds_per_timestep: f64,
}

/// Model-based interpolation of an every-R-th subsampled archive.
pub fn interpolate_range(
    checkpoint_dir: impl AsRef<Path>,
    archive: &EnsembleArchive,
    rate: usize,
    times: Option<&[usize]>,
    out_root: impl AsRef<Path>,
    overwrite: bool,
) -> Result<(EnsembleArchive, InferStats)> {
    if rate < 1 {
        return Err(FlintError::Config("rate must be >= 1".into()));
    }
    let (params, config, state) = load_checkpoint::<f32>(checkpoint_dir.as_ref())?;
    if config.dims != archive.manifest.dims {
        return Err(FlintError::Config(format!(
            "checkpoint dims {} vs archive dims {}",
            config.dims, archive.manifest.dims
        )));
    }
    let (lo, hi) = state.norm_range;
    let provenance = serde_json::json!({
        "checkpoint": checkpoint_dir.as_ref().display().to_string(),
        "checkpoint_epoch": state.epoch,
        "rate": rate,
        "source": archive.root.display().to_string(),
    });

    let mut manifest = output_manifest(archive, true);
    let started = Instant::now();
    let mut total_steps = 0usize;

    // Plan members first so the manifest is complete before writing.
    let mut plans: Vec<(String, Vec<usize>)> = Vec::new();
    for m in &archive.manifest.members {
        let t_sub = m.timesteps;
        if t_sub < 2 {
            return Err(FlintError::Contract(format!(
                "member {}: need at least two stored frames, got {t_sub}",
                m.id
            )));
        }
        let last = (t_sub - 1) * rate;
        let wanted: Vec<usize> = match times {
            None => (0..=last).collect(),
            Some(list) => {
                for &t in list {
                    if t > last {
                        return Err(FlintError::Contract(format!(
                            "requested t={t} outside [0, {last}] for member {} (no extrapolation)",
                            m.id
                        )));
                    }
                }
                let mut v = list.to_vec();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        let mut params_echo = provenance.clone();
        if times.is_some() {
            params_echo["times"] = serde_json::json!(wanted);
        }
        manifest.members.push(MemberEntry {
            id: m.id.clone(),
            timesteps: wanted.len(),
            params: params_echo,
        });
        plans.push((m.id.clone(), wanted));
    }

    let mut writer = ArchiveWriter::create(out_root, manifest, overwrite)?;
    let mut flow_range = (f32::INFINITY, f32::NEG_INFINITY);
    for (member, wanted) in &plans {
        let t_sub = archive.member(member).expect("planned member").timesteps;
        let last = (t_sub - 1) * rate;
        let n_slots = wanted.len();
        let outputs: Vec<Result<(usize, Option<ScalarField>, Option<FlowField>)>> = wanted
            .par_iter()
            .enumerate()
            .map(|(slot, &t_orig)| {
                let want_flow = slot + 1 < n_slots;
                predict_at(&params, archive, member, t_orig, rate, last, lo, hi, want_flow)
            })
            .collect();
        for (slot, out) in outputs.into_iter().enumerate() {
            let (t_orig, dens, flow) = out?;
            debug_assert_eq!(wanted[slot], t_orig);
            if let Some(mut d) = dens {
                d.member_id = member.clone();
                d.time_index = slot;
                writer.write_scalar("density_pred", &d)?;
                total_steps += 1;
            }
            if let Some(mut f) = flow {
                for &v in &f.data {
                    flow_range.0 = flow_range.0.min(v);
                    flow_range.1 = flow_range.1.max(v);
                }
                f.member_id = member.clone();
                f.time_index = slot;
                writer.write_flow("flow_pred", &f)?;
            }
        }
    }
    set_flow_norm(&mut writer, flow_range);
    let archive_out = writer.finish()?;
    let secs = started.elapsed().as_secs_f64();
    Ok((
        archive_out,
        InferStats {
            timesteps: total_steps,
            seconds_per_timestep: secs / total_steps.max(1) as f64,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn predict_at(
    params: &ParameterSet<f32>,
    archive: &EnsembleArchive,
    member: &str,
    t_orig: usize,
    rate: usize,
    last: usize,
    lo: f32,
    hi: f32,
    want_flow: bool,
) -> Result<(usize, Option<ScalarField>, Option<FlowField>)> {
    let k = t_orig / rate;
    let j = t_orig % rate;
    if j == 0 {
        // stored index: copy the field; flow from (k, k+1) at tau = 0
        let stored = archive.load_scalar(member, "density", k)?;
        if !want_flow || t_orig == last {
            return Ok((t_orig, Some(stored), None));
        }
        let d_s = normalize_field(&archive.load_scalar(member, "density", k)?, lo, hi)?;
        let d_u = normalize_field(&archive.load_scalar(member, "density", k + 1)?, lo, hi)?;
        let result = forward(params, &d_s, &d_u, 0.0, None)?;
        Ok((t_orig, Some(stored), Some(result.f_hat)))
    } else {
        let tau = j as f64 / rate as f64;
        let d_s = normalize_field(&archive.load_scalar(member, "density", k)?, lo, hi)?;
        let d_u = normalize_field(&archive.load_scalar(member, "density", k + 1)?, lo, hi)?;
        let result = forward(params, &d_s, &d_u, tau, None)?;
        let mut dens = result.d_hat;
        for v in &mut dens.data {
            *v = v.clamp(0.0, 1.0);
        }
        dens.norm_range = Some((lo, hi));
        let dens = denormalize_field(&dens)?;
        let flow = if want_flow { Some(result.f_hat) } else { None };
        Ok((t_orig, Some(dens), flow))
    }
}

/// Linear interpolation baseline: `D_t = (1 - tau) D_s + tau D_u`. Emits
/// density only.
pub fn linear_baseline(
    archive: &EnsembleArchive,
    rate: usize,
    out_root: impl AsRef<Path>,
    overwrite: bool,
) -> Result<EnsembleArchive> {
    if rate < 1 {
        return Err(FlintError::Config("rate must be >= 1".into()));
    }
    let mut manifest = output_manifest(archive, false);
    for m in &archive.manifest.members {
        if m.timesteps < 2 {
            return Err(FlintError::Contract(format!(
                "member {}: need at least two stored frames",
                m.id
            )));
        }
        manifest.members.push(MemberEntry {
            id: m.id.clone(),
            timesteps: (m.timesteps - 1) * rate + 1,
            params: serde_json::json!({ "baseline": "linear", "rate": rate }),
        });
    }
    let mut writer = ArchiveWriter::create(out_root, manifest, overwrite)?;
    for m in &archive.manifest.members {
        for k in 0..m.timesteps - 1 {
            let d_s = archive.load_scalar(&m.id, "density", k)?;
            let d_u = archive.load_scalar(&m.id, "density", k + 1)?;
            for j in 0..rate {
                let t_orig = k * rate + j;
                let tau = j as f32 / rate as f32;
                let mut out = d_s.clone();
                for (o, &b) in out.data.iter_mut().zip(&d_u.data) {
                    *o = (1.0 - tau) * *o + tau * b;
                }
                out.member_id = m.id.clone();
                out.time_index = t_orig;
                writer.write_scalar("density_pred", &out)?;
            }
        }
        let mut last = archive.load_scalar(&m.id, "density", m.timesteps - 1)?;
        last.member_id = m.id.clone();
        last.time_index = (m.timesteps - 1) * rate;
        writer.write_scalar("density_pred", &last)?;
    }
    writer.finish()
}

fn output_manifest(archive: &EnsembleArchive, with_flow: bool) -> Manifest {
    let dims = archive.manifest.dims;
    let mut fields = BTreeMap::new();
    fields.insert(
        "density_pred".to_string(),
        FieldSpec {
            dtype: "f32".into(),
            channels: 1,
            trim_end: 0,
        },
    );
    if with_flow {
        fields.insert(
            "flow_pred".to_string(),
            FieldSpec {
                dtype: "f32".into(),
                channels: dims,
                trim_end: 1,
            },
        );
    }
    let mut normalization = BTreeMap::new();
    let dens_norm = archive
        .manifest
        .normalization
        .get("density")
        .copied()
        .unwrap_or([0.0, 1.0]);
    normalization.insert("density_pred".to_string(), dens_norm);
    if with_flow {
        normalization.insert("flow_pred".to_string(), [-1.0, 1.0]);
    }
    Manifest {
        version: 1,
        dims,
        shape: archive.manifest.shape.clone(),
        fields,
        members: Vec::new(),
        normalization,
        seed: archive.manifest.seed,
    }
}

fn set_flow_norm(writer: &mut ArchiveWriter, range: (f32, f32)) {
    let (mut lo, mut hi) = range;
    if !lo.is_finite() || !hi.is_finite() {
        return;
    }
    if hi - lo < 1e-6 {
        lo -= 0.5;
        hi += 0.5;
    }
    writer
        .manifest_mut()
        .normalization
        .insert("flow_pred".into(), [lo, hi]);
}

pub fn checkpoint_id(pred: &EnsembleArchive) -> Option<String> {
    pred.manifest
        .members
        .first()
        .and_then(|m| m.params.get("checkpoint"))
        .and_then(|v| v.as_str())
        .map(|s| s.to_string())
}

pub fn provenance_rate(pred: &EnsembleArchive) -> Option<usize> {
    pred.manifest
        .members
        .first()
        .and_then(|m| m.params.get("rate"))
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
}

/// Subsample an archive: keep every R-th frame of each selected member
/// (a helper mirroring how evaluation inputs are produced).
pub fn subsample_archive(
    archive: &EnsembleArchive,
    rate: usize,
    members: Option<&[String]>,
    out_root: impl AsRef<Path>,
    overwrite: bool,
) -> Result<EnsembleArchive> {
    if rate < 1 {
        return Err(FlintError::Config("rate must be >= 1".into()));
    }
    let selected: Vec<MemberEntry> = archive
        .manifest
        .members
        .iter()
        .filter(|m| members.is_none_or(|ids| ids.iter().any(|id| *id == m.id)))
        .cloned()
        .collect();
    if selected.is_empty() {
        return Err(FlintError::Config("no members selected for subsampling".into()));
    }
    let mut manifest = archive.manifest.clone();
    manifest.members.clear();
    for m in &selected {
        let kept = (m.timesteps - 1) / rate + 1;
        let mut params = m.params.clone();
        if !params.is_object() {
            params = serde_json::json!({});
        }
        params["subsampled_rate"] = serde_json::json!(rate);
        manifest.members.push(MemberEntry {
            id: m.id.clone(),
            timesteps: kept,
            params,
        });
    }
    let mut writer = ArchiveWriter::create(out_root, manifest, overwrite)?;
    let fields: Vec<(String, usize)> = archive
        .manifest
        .fields
        .iter()
        .map(|(k, v)| (k.clone(), v.channels))
        .collect();
    for m in &selected {
        let kept = (m.timesteps - 1) / rate + 1;
        for (field, channels) in &fields {
            for k in 0..kept {
                let t_src = k * rate;
                if *channels == 1 {
                    let mut f = archive.load_scalar(&m.id, field, t_src)?;
                    f.member_id = m.id.clone();
                    f.time_index = k;
                    writer.write_scalar(field, &f)?;
                } else {
                    let mut f = archive.load_flow(&m.id, field, t_src)?;
                    f.member_id = m.id.clone();
                    f.time_index = k;
                    writer.write_flow(field, &f)?;
                }
            }
        }
    }
    writer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;
    use crate::datagen::{generate, GenConfig, Preset};
    use crate::model::checkpoint::{save_checkpoint, TrainingState};
    use crate::model::config::{Mode, ModelConfig};
    use crate::model::params::build_model;

    fn tmp(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!(
            "flint-infer-{tag}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ))
    }

    fn setup(tag: &str, timesteps: usize) -> (EnsembleArchive, PathBuf) {
        let mut cfg = GenConfig::new(Preset::AdvectConst);
        cfg.members = 1;
        cfg.timesteps = timesteps;
        cfg.grid = Some(vec![16, 16]);
        cfg.velocity = Some(vec![0.5, -0.25]);
        let archive = generate(&cfg, tmp(&format!("{tag}-data"))).unwrap();
        let config = ModelConfig {
            block_channels: vec![4, 4],
            teacher_channels: 4,
            ..ModelConfig::tiny(2, Mode::FlowSupervised)
        };
        let params = build_model::<f32>(&config, 0).unwrap();
        let ckpt = tmp(&format!("{tag}-ckpt"));
        save_checkpoint(
            &params,
            &TrainingState {
                epoch: 0,
                best_val: 1.0,
                norm_range: (0.0, 1.0),
            },
            &ckpt,
        )
        .unwrap();
        (archive, ckpt)
    }

    #[test]
    fn rate_two_produces_midpoint_and_flows() {
        let (archive, ckpt) = setup("r2", 2);
        let (out, stats) =
            interpolate_range(&ckpt, &archive, 2, None, tmp("r2-out"), false).unwrap();
        // frames {0, 2}: density at 0,1,2; flows at 0,1 only
        assert_eq!(out.member("m000").unwrap().timesteps, 3);
        assert_eq!(out.field_timesteps("m000", "density_pred").unwrap(), 3);
        assert_eq!(out.field_timesteps("m000", "flow_pred").unwrap(), 2);
        assert!(out.load_flow("m000", "flow_pred", 1).is_ok());
        assert!(out.load_flow("m000", "flow_pred", 2).is_err());
        assert!(stats.timesteps > 0);
        // zero-head model: interpolant at tau=0.5 is the average of the pair
        let d0 = archive.load_scalar("m000", "density", 0).unwrap();
        let d1 = archive.load_scalar("m000", "density", 1).unwrap();
        let mid = out.load_scalar("m000", "density_pred", 1).unwrap();
        for ((a, b), m) in d0.data.iter().zip(&d1.data).zip(&mid.data) {
            assert!((0.5 * (a + b) - m).abs() < 1e-5);
        }
        // stored index copied bit-exactly
        let copy0 = out.load_scalar("m000", "density_pred", 0).unwrap();
        assert_eq!(copy0.data, d0.data);
    }

    #[test]
    fn rate_six_interpolates_five_fractions() {
        let (archive, ckpt) = setup("r6", 2);
        let (out, _) = interpolate_range(&ckpt, &archive, 6, None, tmp("r6-out"), false).unwrap();
        assert_eq!(out.member("m000").unwrap().timesteps, 7);
        for t in 1..6 {
            assert!(out.load_scalar("m000", "density_pred", t).is_ok());
        }
    }

    #[test]
    fn explicit_times_and_no_extrapolation() {
        let (archive, ckpt) = setup("times", 3);
        let err = interpolate_range(&ckpt, &archive, 2, Some(&[5]), tmp("t-out"), false);
        assert!(matches!(err, Err(FlintError::Contract(_))));
        let (out, _) =
            interpolate_range(&ckpt, &archive, 2, Some(&[1, 3]), tmp("t-out2"), false).unwrap();
        assert_eq!(out.member("m000").unwrap().timesteps, 2);
    }

    #[test]
    fn linear_baseline_endpoints_and_midpoint() {
        let (archive, _) = setup("lin", 2);
        let out = linear_baseline(&archive, 2, tmp("lin-out"), false).unwrap();
        let d0 = archive.load_scalar("m000", "density", 0).unwrap();
        let d1 = archive.load_scalar("m000", "density", 1).unwrap();
        let p0 = out.load_scalar("m000", "density_pred", 0).unwrap();
        assert_eq!(p0.data, d0.data, "tau = 0 is D_s exactly");
        let mid = out.load_scalar("m000", "density_pred", 1).unwrap();
        for ((a, b), m) in d0.data.iter().zip(&d1.data).zip(&mid.data) {
            assert!((0.5 * (a + b) - m).abs() < 1e-6);
        }
        assert!(!out.has_field("flow_pred"), "baseline emits no flow");
    }

    #[test]
    fn dims_mismatch_rejected() {
        let (_, ckpt) = setup("dims", 2);
        let mut cfg = GenConfig::new(Preset::Blob3d);
        cfg.members = 1;
        cfg.timesteps = 3;
        cfg.grid = Some(vec![8, 8, 8]);
        let archive3 = generate(&cfg, tmp("dims-3d")).unwrap();
        assert!(matches!(
            interpolate_range(&ckpt, &archive3, 2, None, tmp("dims-out"), false),
            Err(FlintError::Config(_))
        ));
    }

    #[test]
    fn subsample_keeps_every_rth_frame() {
        let (archive, _) = setup("sub", 9);
        let sub = subsample_archive(&archive, 4, None, tmp("sub-out"), false).unwrap();
        assert_eq!(sub.member("m000").unwrap().timesteps, 3);
        let a = archive.load_scalar("m000", "density", 8).unwrap();
        let b = sub.load_scalar("m000", "density", 2).unwrap();
        assert_eq!(a.data, b.data);
    }
}
