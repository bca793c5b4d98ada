//! Gaussian noise injection on the density field of an archive.

use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::archive::{ArchiveWriter, EnsembleArchive};
use crate::error::{FlintError, Result};

/// Copy `src` to `out_root` with `density <- clamp(density + N(0, sigma^2), 0, 1)`.
/// Flow fields are copied untouched; `sigma == 0` produces a bit-identical
/// copy. The sigma and seed are recorded in every member's params.
pub fn add_noise(
    src: &EnsembleArchive,
    sigma: f64,
    seed: u64,
    out_root: impl AsRef<Path>,
    overwrite: bool,
) -> Result<EnsembleArchive> {
    if sigma < 0.0 {
        return Err(FlintError::Config("noise sigma must be >= 0".into()));
    }
    let mut manifest = src.manifest.clone();
    for m in &mut manifest.members {
        if !m.params.is_object() {
            m.params = serde_json::json!({});
        }
        m.params["noise_sigma"] = serde_json::json!(sigma);
        m.params["noise_seed"] = serde_json::json!(seed);
    }
    let mut writer = ArchiveWriter::create(out_root, manifest, overwrite)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let normal = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).map_err(|e| FlintError::Config(e.to_string()))?)
    } else {
        None
    };

    let members: Vec<String> = src.manifest.members.iter().map(|m| m.id.clone()).collect();
    let fields: Vec<String> = src.manifest.fields.keys().cloned().collect();
    for member in &members {
        for field in &fields {
            let steps = src.field_timesteps(member, field)?;
            let channels = src.manifest.fields[field].channels;
            for t in 0..steps {
                if field == "density" {
                    let mut f = src.load_scalar(member, field, t)?;
                    if let Some(n) = &normal {
                        for v in &mut f.data {
                            *v = (*v + n.sample(&mut rng) as f32).clamp(0.0, 1.0);
                        }
                    }
                    f.member_id = member.clone();
                    writer.write_scalar(field, &f)?;
                } else if channels == 1 {
                    let mut f = src.load_scalar(member, field, t)?;
                    f.member_id = member.clone();
                    writer.write_scalar(field, &f)?;
                } else {
                    let mut f = src.load_flow(member, field, t)?;
                    f.member_id = member.clone();
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
    use crate::datagen::{generate, GenConfig, Preset};

    fn tmp(tag: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!(
            "flint-noise-{tag}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ))
    }

    fn small_archive(tag: &str) -> EnsembleArchive {
        let mut cfg = GenConfig::new(Preset::AdvectConst);
        cfg.members = 1;
        cfg.timesteps = 3;
        cfg.grid = Some(vec![100, 400]);
        cfg.velocity = Some(vec![0.0, 0.0]);
        generate(&cfg, tmp(tag)).unwrap()
    }

    #[test]
    fn sigma_zero_is_bit_identical() {
        let src = small_archive("zero-src");
        let out = add_noise(&src, 0.0, 9, tmp("zero-dst"), false).unwrap();
        for t in 0..3 {
            let a = src.load_scalar("m000", "density", t).unwrap();
            let b = out.load_scalar("m000", "density", t).unwrap();
            assert_eq!(a.data, b.data);
            let fa = src.load_flow("m000", "flow", t).unwrap();
            let fb = out.load_flow("m000", "flow", t).unwrap();
            assert_eq!(fa.data, fb.data);
        }
    }

    #[test]
    fn noise_statistics_match_sigma() {
        // constant 0.5 density on a 100x400 grid: sample std within 5% of 0.025
        let dir = tmp("stats-src");
        let mut cfg = GenConfig::new(Preset::AdvectConst);
        cfg.members = 1;
        cfg.timesteps = 1;
        cfg.grid = Some(vec![100, 400]);
        cfg.velocity = Some(vec![0.0, 0.0]);
        let src = generate(&cfg, &dir).unwrap();
        // overwrite density with a constant 0.5 plane
        {
            let path = src.field_path("m000", "density", 0);
            let bytes: Vec<u8> = std::iter::repeat(0.5f32.to_le_bytes())
                .take(100 * 400)
                .flatten()
                .collect();
            std::fs::write(path, bytes).unwrap();
        }
        let out = add_noise(&src, 0.025, 3, tmp("stats-dst"), false).unwrap();
        let noisy = out.load_scalar("m000", "density", 0).unwrap();
        let n = noisy.data.len() as f64;
        let mean: f64 = noisy.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = noisy
            .data
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let std = var.sqrt();
        assert!(
            (std - 0.025).abs() / 0.025 < 0.05,
            "sample std {std} vs sigma 0.025"
        );
        // flow untouched
        let fa = src.load_flow("m000", "flow", 0).unwrap();
        let fb = out.load_flow("m000", "flow", 0).unwrap();
        assert_eq!(fa.data, fb.data);
    }

    #[test]
    fn same_seed_is_deterministic() {
        let src = small_archive("det-src");
        let a = add_noise(&src, 0.05, 42, tmp("det-a"), false).unwrap();
        let b = add_noise(&src, 0.05, 42, tmp("det-b"), false).unwrap();
        for t in 0..3 {
            assert_eq!(
                a.load_scalar("m000", "density", t).unwrap().data,
                b.load_scalar("m000", "density", t).unwrap().data
            );
        }
    }
}
