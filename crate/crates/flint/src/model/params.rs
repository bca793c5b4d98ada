//! Parameter storage, the per-block layer plan, and weight initialization.

use std::collections::HashMap;

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{FlintError, Result};
use crate::tensor::{Real, Tensor};

use super::config::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Alpha,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockTag {
    Student(usize),
    Teacher,
}

impl BlockTag {
    pub fn prefix(&self) -> String {
        match self {
            BlockTag::Student(i) => format!("block{i}"),
            BlockTag::Teacher => "teach".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerOp {
    Conv,
    Deconv,
}

/// One layer of the refinement block pipeline.
#[derive(Clone, Copy, Debug)]
pub struct LayerSpec {
    pub op: LayerOp,
    pub stride: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// PReLU follows every layer except the head.
    pub activated: bool,
    /// Zero-initialized output head.
    pub is_head: bool,
}

/// The layer sequence of one block: two stride-2 convs, three unit convs,
/// one stride-2 conv, three unit convs, a stride-2 deconv, three unit convs
/// (skip-summed with the activation after the first down-stage), and two
/// stride-2 deconvs, the last of which is the zero-initialized head.
pub fn block_layers(config: &ModelConfig, tag: BlockTag) -> Vec<LayerSpec> {
    let (c_in, width) = match tag {
        BlockTag::Student(i) => (config.student_in_channels(), config.block_channels[i]),
        BlockTag::Teacher => (config.teacher_in_channels(), config.teacher_channels),
    };
    let c = width;
    let head = config.head_channels();
    let mut layers = Vec::with_capacity(15);
    let mut push = |op, stride, c_in, c_out, activated, is_head| {
        layers.push(LayerSpec {
            op,
            stride,
            c_in,
            c_out,
            activated,
            is_head,
        });
    };
    push(LayerOp::Conv, 2, c_in, c, true, false);
    push(LayerOp::Conv, 2, c, c, true, false);
    for _ in 0..3 {
        push(LayerOp::Conv, 1, c, c, true, false);
    }
    push(LayerOp::Conv, 2, c, c, true, false);
    for _ in 0..3 {
        push(LayerOp::Conv, 1, c, c, true, false);
    }
    push(LayerOp::Deconv, 2, c, c, true, false);
    for _ in 0..3 {
        push(LayerOp::Conv, 1, c, c, true, false);
    }
    push(LayerOp::Deconv, 2, c, c, true, false);
    push(LayerOp::Deconv, 2, c, head, false, true);
    layers
}

/// Index of the layer whose activation feeds the residual skip (end of the
/// first down-stage) and of the layer whose output receives it.
pub const SKIP_FROM_LAYER: usize = 1;
pub const SKIP_INTO_LAYER: usize = 12;

#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub kind: ParamKind,
    pub block: BlockTag,
}

#[derive(Clone, Debug)]
pub struct ParameterSet<F> {
    pub params: Vec<Param<F>>,
    index: HashMap<String, usize>,
    pub config: ModelConfig,
}

impl<F: Real> ParameterSet<F> {
    pub fn get(&self, name: &str) -> Option<&Param<F>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn has_teacher(&self) -> bool {
        self.params.iter().any(|p| p.block == BlockTag::Teacher)
    }

    /// Drop teacher parameters (inference-only serialization).
    pub fn strip_teacher(&mut self) {
        self.params.retain(|p| p.block != BlockTag::Teacher);
        self.index = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
    }

    /// Convert parameter values between scalar types, bit-preserving through
    /// f64.
    pub fn cast<G: Real>(&self) -> ParameterSet<G> {
        ParameterSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Tensor::from_vec(
                        p.value.shape(),
                        p.value.iter().map(|&v| G::of(v.as_f64())).collect(),
                    ),
                    kind: p.kind,
                    block: p.block,
                })
                .collect(),
            index: self.index.clone(),
            config: self.config.clone(),
        }
    }
}

/// Construct all weights for the student blocks and the teacher block.
/// Heads are zero-initialized (first forward yields zero increments); other
/// weights draw from a seeded He-normal distribution.
pub fn build_model<F: Real>(config: &ModelConfig, seed: u64) -> Result<ParameterSet<F>> {
    config.validate()?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut params = Vec::new();
    let k = config.kernel_size;
    let kd = if config.dims == 3 { k } else { 1 };

    let mut tags: Vec<BlockTag> = (0..config.num_blocks).map(BlockTag::Student).collect();
    tags.push(BlockTag::Teacher);
    for tag in tags {
        for (j, layer) in block_layers(config, tag).iter().enumerate() {
            let prefix = format!("{}.layer{:02}", tag.prefix(), j);
            let wshape = match layer.op {
                LayerOp::Conv => vec![layer.c_out, layer.c_in, kd, k, k],
                LayerOp::Deconv => vec![layer.c_in, layer.c_out, kd, k, k],
            };
            let fan_in = (layer.c_in * kd * k * k) as f64;
            let weight = if layer.is_head {
                Tensor::zeros(&wshape)
            } else {
                let std = (2.0 / fan_in).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let n: usize = wshape.iter().product();
                Tensor::from_vec(
                    &wshape,
                    (0..n).map(|_| F::of(normal.sample(&mut rng))).collect(),
                )
            };
            params.push(Param {
                name: format!("{prefix}.weight"),
                value: weight,
                kind: ParamKind::Weight,
                block: tag,
            });
            params.push(Param {
                name: format!("{prefix}.bias"),
                value: Tensor::zeros(&[layer.c_out]),
                kind: ParamKind::Bias,
                block: tag,
            });
            if layer.activated {
                params.push(Param {
                    name: format!("{prefix}.alpha"),
                    value: Tensor::from_vec(&[1], vec![F::of(0.25)]),
                    kind: ParamKind::Alpha,
                    block: tag,
                });
            }
        }
    }
    let index = params
        .iter()
        .enumerate()
        .map(|(i, p): (usize, &Param<F>)| (p.name.clone(), i))
        .collect();
    Ok(ParameterSet {
        params,
        index,
        config: config.clone(),
    })
}

/// Parameters targeted by the L1 regularization loss: weight matrices (not
/// biases) of the last student block and the teacher block.
pub fn regularized_param_names<F: Real>(params: &ParameterSet<F>) -> Vec<String> {
    let last = params.config.num_blocks - 1;
    params
        .params
        .iter()
        .filter(|p| {
            p.kind == ParamKind::Weight
                && (p.block == BlockTag::Student(last) || p.block == BlockTag::Teacher)
        })
        .map(|p| p.name.clone())
        .collect()
}

impl<F: Real> ParameterSet<F> {
    pub fn validate_against(&self, other: &ParameterSet<F>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(FlintError::Config(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(FlintError::Config(format!(
                    "parameter mismatch at {} vs {}",
                    a.name, b.name
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Mode;

    #[test]
    fn enumerates_student_and_teacher_blocks() {
        let config = ModelConfig::new(2, Mode::FlowSupervised);
        let params: ParameterSet<f32> = build_model(&config, 1).unwrap();
        for b in 0..4 {
            assert!(params.get(&format!("block{b}.layer00.weight")).is_some());
            assert!(params.get(&format!("block{b}.layer14.weight")).is_some());
        }
        assert!(params.get("teach.layer00.weight").is_some());
        assert!(params.get("block4.layer00.weight").is_none());
        // last block and teacher share the nominal width 128
        assert_eq!(
            params.get("block3.layer01.weight").unwrap().value.shape()[0],
            128
        );
        assert_eq!(
            params.get("teach.layer01.weight").unwrap().value.shape()[0],
            128
        );
        // teacher first layer consumes one extra channel
        assert_eq!(
            params.get("teach.layer00.weight").unwrap().value.shape()[1],
            config.teacher_in_channels()
        );
    }

    #[test]
    fn heads_are_zero_initialized() {
        let config = ModelConfig::tiny(2, Mode::FlowSupervised);
        let params: ParameterSet<f64> = build_model(&config, 3).unwrap();
        for tag in ["block0", "block1", "teach"] {
            let w = &params.get(&format!("{tag}.layer14.weight")).unwrap().value;
            assert!(w.iter().all(|&v| v == 0.0));
            let b = &params.get(&format!("{tag}.layer14.bias")).unwrap().value;
            assert!(b.iter().all(|&v| v == 0.0));
            assert_eq!(w.shape()[1], config.head_channels());
        }
    }

    #[test]
    fn same_seed_identical_parameters() {
        let config = ModelConfig::tiny(3, Mode::FlowUnsupervised);
        let a: ParameterSet<f64> = build_model(&config, 9).unwrap();
        let b: ParameterSet<f64> = build_model(&config, 9).unwrap();
        for (x, y) in a.params.iter().zip(&b.params) {
            assert_eq!(x.value.data(), y.value.data(), "{}", x.name);
        }
        let c: ParameterSet<f64> = build_model(&config, 10).unwrap();
        assert!(
            a.params
                .iter()
                .zip(&c.params)
                .any(|(x, y)| x.value.data() != y.value.data()),
            "different seeds must differ"
        );
    }

    #[test]
    fn regularization_targets_last_student_and_teacher_weights() {
        let config = ModelConfig::tiny(2, Mode::FlowUnsupervised);
        let params: ParameterSet<f32> = build_model(&config, 0).unwrap();
        let names = regularized_param_names(&params);
        assert!(names.iter().all(|n| n.ends_with(".weight")));
        assert!(names.iter().all(|n| n.starts_with("block1") || n.starts_with("teach")));
        assert_eq!(names.len(), 2 * 15);
    }
}
