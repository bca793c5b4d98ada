//! External LPIPS plugin boundary.
//!
//! Perceptual similarity needs a pretrained network this crate does not
//! ship, so the metric is delegated to an external command: both fields are
//! written as 8-bit grayscale PNGs replicated to three channels, the command
//! is invoked with the two paths appended, and a single float is parsed from
//! its stdout. Failures surface as metric-unavailable, never as a fabricated
//! value.

use std::path::PathBuf;
use std::process::Command;

use crate::error::{FlintError, Result};
use crate::field::ScalarField;

use super::viz::write_rgb_png;

#[derive(Clone, Debug)]
pub struct LpipsPlugin {
    /// Command and fixed leading arguments.
    pub command: Vec<String>,
    /// Scratch directory for image pairs.
    pub work_dir: PathBuf,
}

impl LpipsPlugin {
    pub fn new(command: Vec<String>, work_dir: PathBuf) -> Result<Self> {
        if command.is_empty() {
            return Err(FlintError::Config("empty lpips plugin command".into()));
        }
        Ok(LpipsPlugin { command, work_dir })
    }

    /// Parse a whitespace-separated command line.
    pub fn from_spec(spec: &str, work_dir: PathBuf) -> Result<Self> {
        let parts: Vec<String> = spec.split_whitespace().map(|s| s.to_string()).collect();
        Self::new(parts, work_dir)
    }

    pub fn distance(&self, pred: &ScalarField, gt: &ScalarField) -> Result<f64> {
        if pred.dims() != 2 || gt.dims() != 2 {
            return Err(FlintError::Config("lpips plugin accepts 2D fields only".into()));
        }
        std::fs::create_dir_all(&self.work_dir)?;
        let pid = std::process::id();
        let p_path = self.work_dir.join(format!("lpips-{pid}-pred.png"));
        let g_path = self.work_dir.join(format!("lpips-{pid}-gt.png"));
        write_gray_as_rgb(pred, &p_path)?;
        write_gray_as_rgb(gt, &g_path)?;

        let output = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg(&p_path)
            .arg(&g_path)
            .output()
            .map_err(|e| {
                FlintError::MetricUnavailable(format!(
                    "lpips plugin {:?} failed to launch: {e}",
                    self.command[0]
                ))
            })?;
        let _ = std::fs::remove_file(&p_path);
        let _ = std::fs::remove_file(&g_path);
        if !output.status.success() {
            return Err(FlintError::MetricUnavailable(format!(
                "lpips plugin exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr)
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        stdout
            .split_whitespace()
            .find_map(|tok| tok.parse::<f64>().ok())
            .ok_or_else(|| {
                FlintError::MetricUnavailable(format!(
                    "lpips plugin produced no numeric output: {stdout:?}"
                ))
            })
    }
}

/// 8-bit grayscale, replicated to three channels (assumes a [0,1] field).
fn write_gray_as_rgb(field: &ScalarField, path: &std::path::Path) -> Result<()> {
    let (h, w) = (field.shape[0], field.shape[1]);
    let mut rgb = Vec::with_capacity(3 * h * w);
    for &v in &field.data {
        let byte = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        rgb.extend_from_slice(&[byte, byte, byte]);
    }
    write_rgb_png(path, w as u32, h as u32, &rgb)
}
