//! Architecture and loss configuration.

use serde::{Deserialize, Serialize};

use crate::error::{FlintError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Ground-truth flow available: reconstruction + flow loss.
    FlowSupervised,
    /// No flow supervision: reconstruction + distillation + photometric +
    /// regularization losses.
    FlowUnsupervised,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::FlowSupervised => write!(f, "flow-supervised"),
            Mode::FlowUnsupervised => write!(f, "flow-unsupervised"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = FlintError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flow-supervised" | "supervised" => Ok(Mode::FlowSupervised),
            "flow-unsupervised" | "unsupervised" => Ok(Mode::FlowUnsupervised),
            other => Err(FlintError::Config(format!("unknown mode {other}"))),
        }
    }
}

/// Scale factors of the loss components. Setting one to zero reproduces the
/// corresponding ablation configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(default = "d_one")]
    pub lambda_rec: f64,
    #[serde(default = "d_flow")]
    pub lambda_flow: f64,
    #[serde(default = "d_dis")]
    pub lambda_dis: f64,
    #[serde(default = "d_photo")]
    pub lambda_photo: f64,
    #[serde(default = "d_reg")]
    pub lambda_reg: f64,
    /// Exponential weight of per-block flow terms.
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    /// Optional flow smoothness term; off by default (it did not help on
    /// fields without sharp object boundaries).
    #[serde(default)]
    pub smoothness: bool,
    #[serde(default = "d_smooth")]
    pub lambda_smooth: f64,
}

fn d_one() -> f64 {
    1.0
}
fn d_flow() -> f64 {
    0.2
}
fn d_dis() -> f64 {
    1e-4
}
fn d_photo() -> f64 {
    1e-6
}
fn d_reg() -> f64 {
    1e-8
}
fn d_gamma() -> f64 {
    0.8
}
fn d_smooth() -> f64 {
    1e-6
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rec: 1.0,
            lambda_flow: 0.2,
            lambda_dis: 1e-4,
            lambda_photo: 1e-6,
            lambda_reg: 1e-8,
            gamma: 0.8,
            smoothness: false,
            lambda_smooth: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: usize,
    #[serde(default = "d_blocks")]
    pub num_blocks: usize,
    #[serde(default = "d_channels")]
    pub block_channels: Vec<usize>,
    #[serde(default = "d_teacher")]
    pub teacher_channels: usize,
    #[serde(default = "d_kernel")]
    pub kernel_size: usize,
    pub mode: Mode,
    #[serde(default)]
    pub loss_weights: LossWeights,
}

fn d_blocks() -> usize {
    4
}
fn d_channels() -> Vec<usize> {
    vec![256, 192, 192, 128]
}
fn d_teacher() -> usize {
    128
}
fn d_kernel() -> usize {
    3
}

impl ModelConfig {
    pub fn new(dims: usize, mode: Mode) -> Self {
        ModelConfig {
            dims,
            num_blocks: d_blocks(),
            block_channels: d_channels(),
            teacher_channels: d_teacher(),
            kernel_size: d_kernel(),
            mode,
            loss_weights: LossWeights::default(),
        }
    }

    /// Small architecture for smoke tests and examples.
    pub fn tiny(dims: usize, mode: Mode) -> Self {
        ModelConfig {
            dims,
            num_blocks: 2,
            block_channels: vec![32, 16],
            teacher_channels: 16,
            kernel_size: 3,
            mode,
            loss_weights: LossWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dims == 2 || self.dims == 3) {
            return Err(FlintError::Config(format!("dims must be 2 or 3, got {}", self.dims)));
        }
        if self.num_blocks < 2 {
            return Err(FlintError::Config("num_blocks must be >= 2".into()));
        }
        if self.block_channels.len() != self.num_blocks {
            return Err(FlintError::Config(format!(
                "block_channels has {} entries for {} blocks",
                self.block_channels.len(),
                self.num_blocks
            )));
        }
        if self.block_channels.iter().any(|&c| c == 0) || self.teacher_channels == 0 {
            return Err(FlintError::Config("channel counts must be positive".into()));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size < 3 {
            return Err(FlintError::Config("kernel_size must be odd and >= 3".into()));
        }
        let w = &self.loss_weights;
        if !(w.gamma > 0.0 && w.gamma < 1.0) {
            return Err(FlintError::Config(format!(
                "gamma must lie in (0, 1), got {}",
                w.gamma
            )));
        }
        for (name, v) in [
            ("lambda_rec", w.lambda_rec),
            ("lambda_flow", w.lambda_flow),
            ("lambda_dis", w.lambda_dis),
            ("lambda_photo", w.lambda_photo),
            ("lambda_reg", w.lambda_reg),
            ("lambda_smooth", w.lambda_smooth),
        ] {
            if v < 0.0 {
                return Err(FlintError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Student input channels: d_s, d_u, warp_s, warp_u, two flows, mask, tau.
    pub fn student_in_channels(&self) -> usize {
        6 + 2 * self.dims
    }

    /// Teacher sees the ground-truth field through one extra channel.
    pub fn teacher_in_channels(&self) -> usize {
        self.student_in_channels() + 1
    }

    /// Head output channels: two flow increments + mask logit increment.
    pub fn head_channels(&self) -> usize {
        2 * self.dims + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_architecture() {
        let c = ModelConfig::new(2, Mode::FlowSupervised);
        assert_eq!(c.num_blocks, 4);
        assert_eq!(c.block_channels, vec![256, 192, 192, 128]);
        assert_eq!(c.teacher_channels, 128);
        assert_eq!(c.loss_weights.lambda_flow, 0.2);
        assert_eq!(c.loss_weights.lambda_dis, 1e-4);
        assert_eq!(c.loss_weights.lambda_photo, 1e-6);
        assert_eq!(c.loss_weights.lambda_reg, 1e-8);
        assert_eq!(c.loss_weights.gamma, 0.8);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = ModelConfig::new(2, Mode::FlowSupervised);
        c.block_channels = vec![8, 8];
        assert!(c.validate().is_err(), "channel list length must equal N");
        let mut c = ModelConfig::new(2, Mode::FlowSupervised);
        c.loss_weights.gamma = 1.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(4, Mode::FlowSupervised);
        c.dims = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mode_round_trips_through_json() {
        let m: Mode = serde_json::from_str("\"flow-unsupervised\"").unwrap();
        assert_eq!(m, Mode::FlowUnsupervised);
        assert_eq!(serde_json::to_string(&Mode::FlowSupervised).unwrap(), "\"flow-supervised\"");
    }
}
