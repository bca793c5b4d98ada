//! The stacked-refinement forward pass.
//!
//! Block 0 consumes the raw inputs with zero placeholders for warps, flows,
//! and the mask logit; every later block backward-warps the inputs by the
//! running flow estimates, concatenates the running state, and adds its
//! predicted increments to the flows and the mask logit. After the last
//! student block the interpolant is the mask-blended pair of warped inputs
//! and the estimated flow is the time-forward flow. During training a
//! teacher block repeats the refinement step with the ground-truth
//! intermediate field concatenated as one extra channel.

use crate::autodiff::{Tape, Var};
use crate::error::{FlintError, Result};
use crate::field::{FlowField, FusionMask, ScalarField};
use crate::tensor::{Real, Tensor};

use super::params::{block_layers, BlockTag, LayerOp, ParameterSet, SKIP_FROM_LAYER, SKIP_INTO_LAYER};

/// Tape handles for one forward pass.
pub struct ForwardGraph {
    /// Running time-backward flow after each block (F^i, i = 0..N-1).
    pub block_f_ts: Vec<Var>,
    /// Running time-forward flow after each block.
    pub block_f_tu: Vec<Var>,
    /// Fusion mask after each block.
    pub block_mask: Vec<Var>,
    /// Warped inputs fed into each block (zero placeholders for block 0).
    pub input_warps: Vec<(Var, Var)>,
    /// Warps of the inputs by the final flows (used by the fusion).
    pub final_warp_s: Var,
    pub final_warp_u: Var,
    /// Final fusion mask.
    pub mask: Var,
    /// Interpolated scalar field.
    pub d_hat: Var,
    /// Estimated flow (time-forward flow of the last block).
    pub f_hat: Var,
    pub teacher: Option<TeacherGraph>,
    /// Leaf vars parallel to `ParameterSet::params` (None when a parameter
    /// was never placed on the tape).
    pub param_vars: Vec<Option<Var>>,
}

pub struct TeacherGraph {
    pub f_ts: Var,
    pub f_tu: Var,
    pub mask: Var,
    pub d_hat: Var,
    pub f_hat: Var,
}

/// Materialized forward outputs at field level.
pub struct BlockOutput {
    pub f_ts: FlowField,
    pub f_tu: FlowField,
    pub mask: FusionMask,
    pub block_index: usize,
}

pub struct TeacherOutput {
    pub f_ts: FlowField,
    pub f_tu: FlowField,
    pub mask: FusionMask,
    pub d_hat: ScalarField,
    pub f_hat: FlowField,
}

pub struct ForwardResult {
    pub blocks: Vec<BlockOutput>,
    pub warps: Vec<(ScalarField, ScalarField)>,
    pub d_hat: ScalarField,
    pub f_hat: FlowField,
    pub teacher: Option<TeacherOutput>,
}

/// Per-layer output spatial sizes for one block at a given input size.
fn stage_sizes(input: [usize; 3], dims: usize, k: usize) -> Vec<[usize; 3]> {
    let kd = if dims == 3 { k } else { 1 };
    let down = |sp: [usize; 3], stride: usize| -> [usize; 3] {
        let sd = if dims == 3 { stride } else { 1 };
        [
            crate::autodiff::conv::conv_out_size(sp[0], kd, sd),
            crate::autodiff::conv::conv_out_size(sp[1], k, stride),
            crate::autodiff::conv::conv_out_size(sp[2], k, stride),
        ]
    };
    let full = input;
    let a = down(full, 2);
    let b = down(a, 2);
    let c = down(b, 2);
    vec![
        a, b, b, b, b, c, c, c, c, b, b, b, b, a, full,
    ]
}

fn stride3(dims: usize, stride: usize) -> [usize; 3] {
    if dims == 3 {
        [stride, stride, stride]
    } else {
        [1, stride, stride]
    }
}

struct BlockIo {
    delta_f_ts: Var,
    delta_f_tu: Var,
    delta_logit: Var,
}

#[allow(clippy::too_many_arguments)]
fn run_block<F: Real>(
    tape: &mut Tape<F>,
    params: &ParameterSet<F>,
    param_vars: &mut [Option<Var>],
    tag: BlockTag,
    input: Var,
    sizes: &[[usize; 3]],
    dims: usize,
    trainable: bool,
) -> Result<BlockIo> {
    let layers = block_layers(&params.config, tag);
    let mut h = input;
    let mut skip: Option<Var> = None;
    for (j, layer) in layers.iter().enumerate() {
        let prefix = format!("{}.layer{:02}", tag.prefix(), j);
        let w = place_param(tape, params, param_vars, &format!("{prefix}.weight"), trainable)?;
        let b = place_param(tape, params, param_vars, &format!("{prefix}.bias"), trainable)?;
        h = match layer.op {
            LayerOp::Conv => tape.conv(h, w, b, stride3(dims, layer.stride)),
            LayerOp::Deconv => tape.deconv(h, w, b, stride3(dims, layer.stride), sizes[j]),
        };
        if layer.activated {
            let a = place_param(tape, params, param_vars, &format!("{prefix}.alpha"), trainable)?;
            h = tape.prelu(h, a);
        }
        if j == SKIP_FROM_LAYER {
            skip = Some(h);
        }
        if j == SKIP_INTO_LAYER {
            let s = skip.expect("skip recorded earlier in the block");
            h = tape.add(h, s);
        }
    }
    let head = h;
    let delta_f_ts = tape.slice_c(head, 0, dims);
    let delta_f_tu = tape.slice_c(head, dims, dims);
    let delta_logit = tape.slice_c(head, 2 * dims, 1);
    Ok(BlockIo {
        delta_f_ts,
        delta_f_tu,
        delta_logit,
    })
}

fn place_param<F: Real>(
    tape: &mut Tape<F>,
    params: &ParameterSet<F>,
    param_vars: &mut [Option<Var>],
    name: &str,
    trainable: bool,
) -> Result<Var> {
    let pos = params.position(name).ok_or_else(|| {
        FlintError::Config(format!("parameter {name} missing from checkpoint"))
    })?;
    if let Some(v) = param_vars[pos] {
        return Ok(v);
    }
    let value = params.params[pos].value.clone();
    let v = if trainable {
        tape.leaf(value)
    } else {
        tape.constant(value)
    };
    param_vars[pos] = Some(v);
    Ok(v)
}

/// Build the full forward graph on a tape.
pub fn forward_on_tape<F: Real>(
    tape: &mut Tape<F>,
    params: &ParameterSet<F>,
    d_s: &Tensor<F>,
    d_u: &Tensor<F>,
    tau: f64,
    d_t_gt: Option<&Tensor<F>>,
    trainable: bool,
) -> Result<ForwardGraph> {
    let config = &params.config;
    let dims = config.dims;
    if d_s.shape() != d_u.shape() {
        return Err(FlintError::ShapeMismatch(format!(
            "input shapes {:?} vs {:?}",
            d_s.shape(),
            d_u.shape()
        )));
    }
    if let Some(gt) = d_t_gt {
        if gt.shape() != d_s.shape() {
            return Err(FlintError::ShapeMismatch(
                "ground-truth field shape differs from inputs".into(),
            ));
        }
        if !params.has_teacher() {
            return Err(FlintError::Config(
                "teacher forward requested but teacher parameters are stripped".into(),
            ));
        }
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(FlintError::Contract(format!("tau must lie in [0, 1], got {tau}")));
    }
    let [_, dz, hy, wx] = d_s.dims4();
    let spatial = [dz, hy, wx];
    let strided: &[usize] = if dims == 3 { &spatial } else { &spatial[1..] };
    if strided.iter().any(|&n| n % 4 != 0) {
        return Err(FlintError::Config(format!(
            "spatial shape {:?} must be divisible by 4 (two stride-2 stages)",
            strided
        )));
    }

    let mut param_vars: Vec<Option<Var>> = vec![None; params.len()];
    let ds_var = tape.constant(d_s.clone());
    let du_var = tape.constant(d_u.clone());
    let tau_plane = tape.constant(Tensor::full(&[1, dz, hy, wx], F::of(tau)));
    let sizes = stage_sizes(spatial, dims, config.kernel_size);

    let flow_shape = [dims, dz, hy, wx];
    let mut f_ts = tape.constant(Tensor::zeros(&flow_shape));
    let mut f_tu = tape.constant(Tensor::zeros(&flow_shape));
    let mut logit = tape.constant(Tensor::zeros(&[1, dz, hy, wx]));

    let mut block_f_ts = Vec::with_capacity(config.num_blocks);
    let mut block_f_tu = Vec::with_capacity(config.num_blocks);
    let mut block_mask = Vec::with_capacity(config.num_blocks);
    let mut input_warps = Vec::with_capacity(config.num_blocks);

    for b in 0..config.num_blocks {
        let mask_in = tape.sigmoid(logit);
        let (warp_s, warp_u) = if b == 0 {
            let zs = tape.constant(Tensor::zeros(&[1, dz, hy, wx]));
            let zu = tape.constant(Tensor::zeros(&[1, dz, hy, wx]));
            (zs, zu)
        } else {
            (tape.warp(ds_var, f_ts), tape.warp(du_var, f_tu))
        };
        input_warps.push((warp_s, warp_u));
        let x = tape.concat(&[ds_var, du_var, warp_s, warp_u, f_ts, f_tu, mask_in, tau_plane]);
        let io = run_block(
            tape,
            params,
            &mut param_vars,
            BlockTag::Student(b),
            x,
            &sizes,
            dims,
            trainable,
        )?;
        f_ts = tape.add(f_ts, io.delta_f_ts);
        f_tu = tape.add(f_tu, io.delta_f_tu);
        logit = tape.add(logit, io.delta_logit);
        block_f_ts.push(f_ts);
        block_f_tu.push(f_tu);
        let m = tape.sigmoid(logit);
        block_mask.push(m);
    }

    let final_warp_s = tape.warp(ds_var, f_ts);
    let final_warp_u = tape.warp(du_var, f_tu);
    let mask = block_mask[config.num_blocks - 1];
    let d_hat = fuse_on_tape(tape, final_warp_s, final_warp_u, mask);
    let f_hat = f_tu;

    let teacher = if let Some(gt) = d_t_gt {
        let gt_var = tape.constant(gt.clone());
        let x = tape.concat(&[
            ds_var,
            du_var,
            final_warp_s,
            final_warp_u,
            f_ts,
            f_tu,
            mask,
            tau_plane,
            gt_var,
        ]);
        let io = run_block(
            tape,
            params,
            &mut param_vars,
            BlockTag::Teacher,
            x,
            &sizes,
            dims,
            trainable,
        )?;
        let t_f_ts = tape.add(f_ts, io.delta_f_ts);
        let t_f_tu = tape.add(f_tu, io.delta_f_tu);
        let t_logit = tape.add(logit, io.delta_logit);
        let t_mask = tape.sigmoid(t_logit);
        let t_warp_s = tape.warp(ds_var, t_f_ts);
        let t_warp_u = tape.warp(du_var, t_f_tu);
        let t_d_hat = fuse_on_tape(tape, t_warp_s, t_warp_u, t_mask);
        Some(TeacherGraph {
            f_ts: t_f_ts,
            f_tu: t_f_tu,
            mask: t_mask,
            d_hat: t_d_hat,
            f_hat: t_f_tu,
        })
    } else {
        None
    };

    Ok(ForwardGraph {
        block_f_ts,
        block_f_tu,
        block_mask,
        input_warps,
        final_warp_s,
        final_warp_u,
        mask,
        d_hat,
        f_hat,
        teacher,
        param_vars,
    })
}

/// `warp_s * M + warp_u * (1 - M)` on the tape.
fn fuse_on_tape<F: Real>(tape: &mut Tape<F>, warp_s: Var, warp_u: Var, mask: Var) -> Var {
    let a = tape.mul(warp_s, mask);
    let inv = tape.one_minus(mask);
    let b = tape.mul(warp_u, inv);
    tape.add(a, b)
}

/// Field-level forward pass (no gradients).
pub fn forward(
    params: &ParameterSet<f32>,
    d_s: &ScalarField,
    d_u: &ScalarField,
    tau: f64,
    d_t_gt: Option<&ScalarField>,
) -> Result<ForwardResult> {
    let mut tape: Tape<f32> = Tape::new();
    let ds = d_s.to_tensor();
    let du = d_u.to_tensor();
    let gt = d_t_gt.map(|f| f.to_tensor::<f32>());
    let graph = forward_on_tape(&mut tape, params, &ds, &du, tau, gt.as_ref(), false)?;
    let shape = &d_s.shape;
    let take_flow = |t: &Tape<f32>, v: Var| FlowField::from_tensor(t.value(v), shape);
    let take_scalar = |t: &Tape<f32>, v: Var| ScalarField::from_tensor(t.value(v), shape);
    let take_mask = |t: &Tape<f32>, v: Var| {
        FusionMask::new(
            shape.clone(),
            t.value(v).iter().map(|&x| x.clamp(0.0, 1.0)).collect(),
        )
        .expect("sigmoid output lies in (0, 1)")
    };
    let blocks = (0..params.config.num_blocks)
        .map(|b| BlockOutput {
            f_ts: take_flow(&tape, graph.block_f_ts[b]),
            f_tu: take_flow(&tape, graph.block_f_tu[b]),
            mask: take_mask(&tape, graph.block_mask[b]),
            block_index: b,
        })
        .collect();
    let warps = graph
        .input_warps
        .iter()
        .map(|&(a, b)| (take_scalar(&tape, a), take_scalar(&tape, b)))
        .collect();
    let teacher = graph.teacher.as_ref().map(|t| TeacherOutput {
        f_ts: take_flow(&tape, t.f_ts),
        f_tu: take_flow(&tape, t.f_tu),
        mask: take_mask(&tape, t.mask),
        d_hat: take_scalar(&tape, t.d_hat),
        f_hat: take_flow(&tape, t.f_hat),
    });
    Ok(ForwardResult {
        blocks,
        warps,
        d_hat: take_scalar(&tape, graph.d_hat),
        f_hat: take_flow(&tape, graph.f_hat),
        teacher,
    })
}
