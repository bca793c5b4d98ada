//! Loss components and the two mode-specific totals.
//!
//! All field norms are per-element means, which keeps the default weights
//! resolution-independent; the L1 regularizer over weight matrices is a raw
//! sum. Distillation treats the teacher flows as constants (stop-gradient):
//! the teacher is the target, never dragged toward the student.

use crate::autodiff::{Tape, Var};
use crate::error::{FlintError, Result};
use crate::model::config::{LossWeights, Mode};
use crate::model::net::ForwardGraph;
use crate::model::params::{ParamKind, ParameterSet};
use crate::model::BlockTag;
use crate::tensor::Real;

pub const CHARBONNIER_EPS: f64 = 1e-9;

/// Mean absolute difference.
fn l1_mean<F: Real>(tape: &mut Tape<F>, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let d = tape.abs(d);
    tape.mean_all(d)
}

/// Reconstruction loss: L1 to the ground truth for both the student and the
/// teacher interpolant.
pub fn loss_rec<F: Real>(tape: &mut Tape<F>, d_hat: Var, d_hat_teach: Var, d_gt: Var) -> Result<Var> {
    check_same(tape, d_hat, d_gt)?;
    check_same(tape, d_hat_teach, d_gt)?;
    let a = l1_mean(tape, d_gt, d_hat);
    let b = l1_mean(tape, d_gt, d_hat_teach);
    Ok(tape.add(a, b))
}

/// Supervised flow loss: exponentially weighted per-block L1 terms plus the
/// teacher term. Block `b` (0-based) carries weight `gamma^(N-1-b)`.
pub fn loss_flow<F: Real>(
    tape: &mut Tape<F>,
    block_flows: &[Var],
    f_teach: Var,
    f_gt: Var,
    gamma: f64,
) -> Result<Var> {
    if block_flows.is_empty() {
        return Err(FlintError::Contract("flow loss requires per-block flows".into()));
    }
    let n = block_flows.len();
    let mut total: Option<Var> = None;
    for (b, &f) in block_flows.iter().enumerate() {
        check_same(tape, f, f_gt)?;
        let term = l1_mean(tape, f_gt, f);
        let weighted = tape.scale(term, F::of(gamma.powi((n - 1 - b) as i32)));
        total = Some(match total {
            None => weighted,
            Some(t) => tape.add(t, weighted),
        });
    }
    check_same(tape, f_teach, f_gt)?;
    let teach = l1_mean(tape, f_gt, f_teach);
    Ok(tape.add(total.expect("non-empty"), teach))
}

/// Distillation loss: per-cell Euclidean distance between student and
/// (detached) teacher intermediate flows, both directions.
pub fn loss_dis<F: Real>(
    tape: &mut Tape<F>,
    student: (Var, Var),
    teacher: (Var, Var),
) -> Result<Var> {
    check_same(tape, student.0, teacher.0)?;
    check_same(tape, student.1, teacher.1)?;
    let mut total: Option<Var> = None;
    for (s, t) in [(student.0, teacher.0), (student.1, teacher.1)] {
        let t = tape.detach(t);
        let d = tape.sub(s, t);
        let n = tape.channel_norm(d);
        let m = tape.mean_all(n);
        total = Some(match total {
            None => m,
            Some(acc) => tape.add(acc, m),
        });
    }
    Ok(total.expect("two directions"))
}

/// Photometric loss on the last block: Charbonnier penalty between each input
/// and the interpolant resampled along the corresponding intermediate flow.
pub fn loss_photo<F: Real>(
    tape: &mut Tape<F>,
    flow_ts: Var,
    flow_tu: Var,
    d_s: Var,
    d_u: Var,
    d_hat: Var,
) -> Result<Var> {
    check_same(tape, d_s, d_hat)?;
    check_same(tape, d_u, d_hat)?;
    let eps = F::of(CHARBONNIER_EPS);
    let mut total: Option<Var> = None;
    for (d_j, v_j) in [(d_s, flow_ts), (d_u, flow_tu)] {
        let sampled = tape.warp(d_hat, v_j);
        let diff = tape.sub(d_j, sampled);
        let rho = tape.charbonnier(diff, eps);
        let m = tape.mean_all(rho);
        total = Some(match total {
            None => m,
            Some(acc) => tape.add(acc, m),
        });
    }
    Ok(tape.scale(total.expect("two directions"), F::of(0.5)))
}

/// Optional smoothness term: Charbonnier of one-cell flow differences along
/// each spatial axis (computed by warping with a constant unit displacement).
pub fn loss_smooth<F: Real>(tape: &mut Tape<F>, flow_ts: Var, flow_tu: Var) -> Var {
    let eps = F::of(CHARBONNIER_EPS);
    let dims = tape.value(flow_ts).dims4()[0];
    let shape = tape.value(flow_ts).shape().to_vec();
    let mut total: Option<Var> = None;
    for f in [flow_ts, flow_tu] {
        for axis in 0..dims {
            let mut shift = crate::tensor::Tensor::<F>::zeros(&shape);
            let sp: usize = shape[1..].iter().product();
            for v in &mut shift.data_mut()[axis * sp..(axis + 1) * sp] {
                *v = F::one();
            }
            let shift = tape.constant(shift);
            let moved = tape.warp(f, shift);
            let diff = tape.sub(f, moved);
            let rho = tape.charbonnier(diff, eps);
            let m = tape.mean_all(rho);
            total = Some(match total {
                None => m,
                Some(acc) => tape.add(acc, m),
            });
        }
    }
    total.expect("at least one axis")
}

/// L1 regularization over the weight matrices of the last student block and
/// the teacher block (raw sum, biases excluded).
pub fn loss_reg<F: Real>(
    tape: &mut Tape<F>,
    params: &ParameterSet<F>,
    param_vars: &[Option<Var>],
) -> Result<Var> {
    let last = params.config.num_blocks - 1;
    let mut total: Option<Var> = None;
    for (p, v) in params.params.iter().zip(param_vars) {
        let targeted = p.kind == ParamKind::Weight
            && (p.block == BlockTag::Student(last) || p.block == BlockTag::Teacher);
        if !targeted {
            continue;
        }
        let var = v.ok_or_else(|| {
            FlintError::Contract(format!(
                "regularized parameter {} is not on the tape",
                p.name
            ))
        })?;
        let a = tape.abs(var);
        let s = tape.sum_all(a);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s),
        });
    }
    total.ok_or_else(|| FlintError::Contract("no regularized parameters found".into()))
}

/// Components feeding [`loss_total`]. Values are tape scalars.
#[derive(Clone, Copy, Default)]
pub struct LossComponents {
    pub rec: Option<Var>,
    pub flow: Option<Var>,
    pub dis: Option<Var>,
    pub photo: Option<Var>,
    pub reg: Option<Var>,
    pub smooth: Option<Var>,
}

/// Scalar snapshot of the components for logging.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct LossValues {
    pub total: f64,
    pub rec: Option<f64>,
    pub flow: Option<f64>,
    pub dis: Option<f64>,
    pub photo: Option<f64>,
    pub reg: Option<f64>,
    pub smooth: Option<f64>,
}

/// Mode-specific total with the configured weights: reconstruction plus flow
/// (supervised), or reconstruction plus distillation, photometric, and
/// regularization (unsupervised). A missing required component is a contract
/// error; a component weighted zero may be absent.
pub fn loss_total<F: Real>(
    tape: &mut Tape<F>,
    mode: Mode,
    components: &LossComponents,
    weights: &LossWeights,
) -> Result<Var> {
    let mut terms: Vec<(Option<Var>, f64, &str)> = vec![(components.rec, weights.lambda_rec, "rec")];
    match mode {
        Mode::FlowSupervised => {
            terms.push((components.flow, weights.lambda_flow, "flow"));
        }
        Mode::FlowUnsupervised => {
            terms.push((components.dis, weights.lambda_dis, "dis"));
            terms.push((components.photo, weights.lambda_photo, "photo"));
            terms.push((components.reg, weights.lambda_reg, "reg"));
            if weights.smoothness {
                terms.push((components.smooth, weights.lambda_smooth, "smooth"));
            }
        }
    }
    let mut total: Option<Var> = None;
    for (var, lambda, name) in terms {
        if lambda == 0.0 {
            continue;
        }
        let var = var.ok_or_else(|| {
            FlintError::Contract(format!(
                "loss component {name} required for {mode} mode is missing"
            ))
        })?;
        let scaled = tape.scale(var, F::of(lambda));
        total = Some(match total {
            None => scaled,
            Some(acc) => tape.add(acc, scaled),
        });
    }
    total.ok_or_else(|| FlintError::Contract("all loss components weighted zero".into()))
}

/// Assemble components and total for one forward graph. `f_gt` is required
/// in flow-supervised mode; the teacher must be present.
#[allow(clippy::too_many_arguments)]
pub fn compute_losses<F: Real>(
    tape: &mut Tape<F>,
    graph: &ForwardGraph,
    params: &ParameterSet<F>,
    d_s: Var,
    d_u: Var,
    d_gt: Var,
    f_gt: Option<Var>,
    weights: &LossWeights,
    mode: Mode,
) -> Result<(Var, LossValues)> {
    let teacher = graph
        .teacher
        .as_ref()
        .ok_or_else(|| FlintError::Contract("training loss requires the teacher branch".into()))?;
    let mut comps = LossComponents {
        rec: Some(loss_rec(tape, graph.d_hat, teacher.d_hat, d_gt)?),
        ..Default::default()
    };
    match mode {
        Mode::FlowSupervised => {
            let f_gt = f_gt.ok_or_else(|| {
                FlintError::Config("flow-supervised training requires ground-truth flow".into())
            })?;
            comps.flow = Some(loss_flow(
                tape,
                &graph.block_f_tu,
                teacher.f_hat,
                f_gt,
                weights.gamma,
            )?);
        }
        Mode::FlowUnsupervised => {
            let n = graph.block_f_ts.len();
            comps.dis = Some(loss_dis(
                tape,
                (graph.block_f_ts[n - 1], graph.block_f_tu[n - 1]),
                (teacher.f_ts, teacher.f_tu),
            )?);
            comps.photo = Some(loss_photo(
                tape,
                graph.block_f_ts[n - 1],
                graph.block_f_tu[n - 1],
                d_s,
                d_u,
                graph.d_hat,
            )?);
            comps.reg = Some(loss_reg(tape, params, &graph.param_vars)?);
            if weights.smoothness {
                comps.smooth = Some(loss_smooth(
                    tape,
                    graph.block_f_ts[n - 1],
                    graph.block_f_tu[n - 1],
                ));
            }
        }
    }
    let total = loss_total(tape, mode, &comps, weights)?;
    let read = |v: Option<Var>| v.map(|x| tape.value(x).item().as_f64());
    let values = LossValues {
        total: tape.value(total).item().as_f64(),
        rec: read(comps.rec),
        flow: read(comps.flow),
        dis: read(comps.dis),
        photo: read(comps.photo),
        reg: read(comps.reg),
        smooth: read(comps.smooth),
    };
    Ok((total, values))
}

fn check_same<F: Real>(tape: &Tape<F>, a: Var, b: Var) -> Result<()> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(FlintError::ShapeMismatch(format!(
            "loss operands {:?} vs {:?}",
            tape.value(a).shape(),
            tape.value(b).shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_leaf(tape: &mut Tape<f64>, v: f64) -> Var {
        tape.leaf(Tensor::scalar(v))
    }

    fn plane(tape: &mut Tape<f64>, shape: &[usize], v: f64) -> Var {
        tape.leaf(Tensor::full(shape, v))
    }

    #[test]
    fn rec_zero_at_truth_and_constant_offsets() {
        let mut t = Tape::new();
        let gt = plane(&mut t, &[1, 1, 4, 4], 0.3);
        let same = plane(&mut t, &[1, 1, 4, 4], 0.3);
        let same2 = plane(&mut t, &[1, 1, 4, 4], 0.3);
        let l = loss_rec(&mut t, same, same2, gt).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let mut t = Tape::new();
        let gt = plane(&mut t, &[1, 1, 4, 4], 0.5);
        let hat = plane(&mut t, &[1, 1, 4, 4], 0.6); // +0.1
        let teach = plane(&mut t, &[1, 1, 4, 4], 0.3); // -0.2
        let l = loss_rec(&mut t, hat, teach, gt).unwrap();
        assert!((t.value(l).item() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn flow_loss_closed_form() {
        // N=4, gamma=0.8, constant per-element error e: (0.512+0.64+0.8+1.0)e + e
        let e = 0.25;
        let mut t = Tape::new();
        let f_gt = plane(&mut t, &[2, 1, 3, 3], 0.0);
        let blocks: Vec<Var> = (0..4).map(|_| plane(&mut t, &[2, 1, 3, 3], e)).collect();
        let teach = plane(&mut t, &[2, 1, 3, 3], e);
        let l = loss_flow(&mut t, &blocks, teach, f_gt, 0.8).unwrap();
        let expect = 3.952 * e;
        assert!(
            (t.value(l).item() - expect).abs() < 1e-9,
            "{} vs {}",
            t.value(l).item(),
            expect
        );
        // all flows equal gt -> 0
        let mut t = Tape::new();
        let f_gt = plane(&mut t, &[2, 1, 3, 3], 0.7);
        let blocks: Vec<Var> = (0..4).map(|_| plane(&mut t, &[2, 1, 3, 3], 0.7)).collect();
        let teach = plane(&mut t, &[2, 1, 3, 3], 0.7);
        let l = loss_flow(&mut t, &blocks, teach, f_gt, 0.8).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
        // gamma = 1 degenerates to the unweighted sum N*e + e
        let mut t = Tape::new();
        let f_gt = plane(&mut t, &[2, 1, 3, 3], 0.0);
        let blocks: Vec<Var> = (0..4).map(|_| plane(&mut t, &[2, 1, 3, 3], e)).collect();
        let teach = plane(&mut t, &[2, 1, 3, 3], e);
        let l = loss_flow(&mut t, &blocks, teach, f_gt, 1.0).unwrap();
        assert!((t.value(l).item() - 5.0 * e).abs() < 1e-12);
    }

    #[test]
    fn dis_per_cell_euclidean() {
        let sp = [2usize, 1, 4, 4];
        // teacher - student == (3,4) in both directions -> 5 + 5 = 10
        let mut t = Tape::new();
        let s0 = plane(&mut t, &sp, 0.0);
        let s1 = plane(&mut t, &sp, 0.0);
        let mk34 = {
            let mut v = Tensor::<f64>::zeros(&sp);
            let n = 16;
            for p in 0..n {
                v.data_mut()[p] = 3.0;
                v.data_mut()[n + p] = 4.0;
            }
            v
        };
        let t0 = t.leaf(mk34.clone());
        let t1 = t.leaf(mk34);
        let l = loss_dis(&mut t, (s0, s1), (t0, t1)).unwrap();
        assert!((t.value(l).item() - 10.0).abs() < 1e-12);

        // student equals teacher -> 0
        let mut t = Tape::new();
        let a = plane(&mut t, &sp, 0.4);
        let b = plane(&mut t, &sp, 0.4);
        let c = plane(&mut t, &sp, -0.2);
        let d = plane(&mut t, &sp, -0.2);
        let l = loss_dis(&mut t, (a, c), (b, d)).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        // one direction matches, other offset (0,1) -> 1
        let mut t = Tape::new();
        let s0 = plane(&mut t, &sp, 0.0);
        let s1 = plane(&mut t, &sp, 0.0);
        let t0 = plane(&mut t, &sp, 0.0);
        let off = {
            let mut v = Tensor::<f64>::zeros(&sp);
            for p in 0..16 {
                v.data_mut()[16 + p] = 1.0;
            }
            v
        };
        let t1 = t.leaf(off);
        let l = loss_dis(&mut t, (s0, s1), (t0, t1)).unwrap();
        assert!((t.value(l).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dis_stops_gradient_into_teacher() {
        let sp = [2usize, 1, 3, 3];
        let mut t = Tape::new();
        let s0 = plane(&mut t, &sp, 0.2);
        let s1 = plane(&mut t, &sp, -0.1);
        let t0 = plane(&mut t, &sp, 0.5);
        let t1 = plane(&mut t, &sp, 0.4);
        let l = loss_dis(&mut t, (s0, s1), (t0, t1)).unwrap();
        t.backward(l);
        assert!(t.grad(s0).is_some(), "student receives gradient");
        assert!(t.grad(t0).is_none(), "teacher is a constant target");
        assert!(t.grad(t1).is_none());
    }

    #[test]
    fn photo_epsilon_floor_and_linearity() {
        let sp = [1usize, 1, 4, 4];
        let fsp = [2usize, 1, 4, 4];
        let mut t = Tape::new();
        let d = plane(&mut t, &sp, 0.7);
        let d2 = plane(&mut t, &sp, 0.7);
        let dh = plane(&mut t, &sp, 0.7);
        let z0 = plane(&mut t, &fsp, 0.0);
        let z1 = plane(&mut t, &fsp, 0.0);
        let l = loss_photo(&mut t, z0, z1, d, d2, dh).unwrap();
        assert!((t.value(l).item() - 1e-9).abs() < 1e-15, "rho(0) = eps");

        // residual 0.003 everywhere, both directions -> ~0.003
        let mut t = Tape::new();
        let d = plane(&mut t, &sp, 0.503);
        let d2 = plane(&mut t, &sp, 0.503);
        let dh = plane(&mut t, &sp, 0.5);
        let z0 = plane(&mut t, &fsp, 0.0);
        let z1 = plane(&mut t, &fsp, 0.0);
        let l = loss_photo(&mut t, z0, z1, d, d2, dh).unwrap();
        assert!((t.value(l).item() - 0.003).abs() < 1e-10);

        // doubling residuals doubles the loss (asymptotic linearity)
        let mut t = Tape::new();
        let d = plane(&mut t, &sp, 0.506);
        let d2 = plane(&mut t, &sp, 0.506);
        let dh = plane(&mut t, &sp, 0.5);
        let z0 = plane(&mut t, &fsp, 0.0);
        let z1 = plane(&mut t, &fsp, 0.0);
        let l2 = loss_photo(&mut t, z0, z1, d, d2, dh).unwrap();
        assert!((t.value(l2).item() / 0.003 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn reg_raw_sum_and_homogeneity() {
        use crate::model::config::{Mode, ModelConfig};
        use crate::model::params::build_model;
        let config = ModelConfig {
            dims: 2,
            num_blocks: 2,
            block_channels: vec![4, 4],
            teacher_channels: 4,
            kernel_size: 3,
            mode: Mode::FlowUnsupervised,
            loss_weights: Default::default(),
        };
        let mut params = build_model::<f64>(&config, 0).unwrap();
        // zero all targeted weights -> 0
        for p in &mut params.params {
            for v in p.value.data_mut() {
                *v = 0.0;
            }
        }
        let mut tape = Tape::new();
        let mut vars: Vec<Option<Var>> = Vec::new();
        for p in &params.params {
            vars.push(Some(tape.leaf(p.value.clone())));
        }
        let l = loss_reg(&mut tape, &params, &vars).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        // ten ones in one targeted student weight -> 10; doubling doubles
        let pos = params.position("block1.layer02.weight").unwrap();
        for scale in [1.0, 2.0] {
            let mut tape = Tape::new();
            let mut vars: Vec<Option<Var>> = Vec::new();
            for (i, p) in params.params.iter().enumerate() {
                let mut v = p.value.clone();
                if i == pos {
                    for x in v.data_mut().iter_mut().take(10) {
                        *x = scale;
                    }
                }
                vars.push(Some(tape.leaf(v)));
            }
            let l = loss_reg(&mut tape, &params, &vars).unwrap();
            assert!((tape.value(l).item() - 10.0 * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn totals_match_reference_weights() {
        let w = LossWeights::default();
        let mut t = Tape::new();
        let comps = LossComponents {
            rec: Some(scalar_leaf(&mut t, 1.0)),
            flow: Some(scalar_leaf(&mut t, 5.0)),
            ..Default::default()
        };
        let l = loss_total(&mut t, Mode::FlowSupervised, &comps, &w).unwrap();
        assert_eq!(t.value(l).item(), 2.0, "rec + 0.2 * flow");

        let mut t = Tape::new();
        let comps = LossComponents {
            rec: Some(scalar_leaf(&mut t, 1.0)),
            dis: Some(scalar_leaf(&mut t, 1e4)),
            photo: Some(scalar_leaf(&mut t, 1e6)),
            reg: Some(scalar_leaf(&mut t, 1e8)),
            ..Default::default()
        };
        let l = loss_total(&mut t, Mode::FlowUnsupervised, &comps, &w).unwrap();
        assert_eq!(t.value(l).item(), 4.0, "unit contributions from each term");

        let mut t = Tape::new();
        let comps = LossComponents {
            rec: Some(scalar_leaf(&mut t, 0.0)),
            flow: Some(scalar_leaf(&mut t, 0.0)),
            ..Default::default()
        };
        let l = loss_total(&mut t, Mode::FlowSupervised, &comps, &w).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn zero_lambda_reproduces_ablation_configs() {
        // "no flow": supervised total with lambda_flow = 0 ignores the flow
        // component entirely (it may even be absent)
        let mut w = LossWeights::default();
        w.lambda_flow = 0.0;
        let mut t = Tape::new();
        let comps = LossComponents {
            rec: Some(scalar_leaf(&mut t, 1.25)),
            ..Default::default()
        };
        let l = loss_total(&mut t, Mode::FlowSupervised, &comps, &w).unwrap();
        assert_eq!(t.value(l).item(), 1.25);

        // "no rec": lambda_rec = 0
        let mut w = LossWeights::default();
        w.lambda_rec = 0.0;
        let mut t = Tape::new();
        let comps = LossComponents {
            rec: Some(scalar_leaf(&mut t, 100.0)),
            flow: Some(scalar_leaf(&mut t, 5.0)),
            ..Default::default()
        };
        let l = loss_total(&mut t, Mode::FlowSupervised, &comps, &w).unwrap();
        assert_eq!(t.value(l).item(), 1.0);

        // missing required component is a contract error
        let w = LossWeights::default();
        let mut t = Tape::new();
        let comps = LossComponents {
            rec: Some(scalar_leaf(&mut t, 1.0)),
            ..Default::default()
        };
        assert!(matches!(
            loss_total(&mut t, Mode::FlowSupervised, &comps, &w),
            Err(FlintError::Contract(_))
        ));
    }

    #[test]
    fn smoothness_term_behind_switch() {
        // constant flow: differences vanish, loss sits at the Charbonnier floor
        let fsp = [2usize, 1, 6, 6];
        let mut t: Tape<f64> = Tape::new();
        let a = plane(&mut t, &fsp, 0.4);
        let b = plane(&mut t, &fsp, -0.2);
        let l = loss_smooth(&mut t, a, b);
        assert!(t.value(l).item() < 1e-8, "constant flow is maximally smooth");

        // varying flow: strictly positive
        let mut t: Tape<f64> = Tape::new();
        let mut v = Tensor::<f64>::zeros(&fsp);
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = (i % 5) as f64 * 0.3;
        }
        let a = t.leaf(v);
        let b = plane(&mut t, &fsp, 0.0);
        let l = loss_smooth(&mut t, a, b);
        assert!(t.value(l).item() > 1e-3);

        // the switch: off by default, the total ignores the smooth component
        let w = LossWeights::default();
        assert!(!w.smoothness);
        let mut t: Tape<f64> = Tape::new();
        let comps = LossComponents {
            rec: Some(scalar_leaf(&mut t, 1.0)),
            dis: Some(scalar_leaf(&mut t, 0.0)),
            photo: Some(scalar_leaf(&mut t, 0.0)),
            reg: Some(scalar_leaf(&mut t, 0.0)),
            smooth: Some(scalar_leaf(&mut t, 1e9)),
            ..Default::default()
        };
        let total = loss_total(&mut t, Mode::FlowUnsupervised, &comps, &w).unwrap();
        assert_eq!(t.value(total).item(), 1.0, "smooth ignored when disabled");
        let mut w_on = w.clone();
        w_on.smoothness = true;
        w_on.lambda_smooth = 1e-9;
        let total = loss_total(&mut t, Mode::FlowUnsupervised, &comps, &w_on).unwrap();
        assert!((t.value(total).item() - 2.0).abs() < 1e-12, "smooth included when enabled");
    }

    #[test]
    fn components_are_nonnegative_on_random_inputs() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut r = StdRng::seed_from_u64(3);
        for _ in 0..10 {
            let mut t = Tape::new();
            let sp = [1usize, 1, 5, 5];
            let fsp = [2usize, 1, 5, 5];
            let rand_t = |t: &mut Tape<f64>, shape: &[usize], r: &mut StdRng| {
                let n: usize = shape.iter().product();
                t.leaf(Tensor::from_vec(
                    shape,
                    (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
                ))
            };
            let gt = rand_t(&mut t, &sp, &mut r);
            let hat = rand_t(&mut t, &sp, &mut r);
            let teach = rand_t(&mut t, &sp, &mut r);
            let l = loss_rec(&mut t, hat, teach, gt).unwrap();
            assert!(t.value(l).item() >= 0.0);
            let s0 = rand_t(&mut t, &fsp, &mut r);
            let s1 = rand_t(&mut t, &fsp, &mut r);
            let t0 = rand_t(&mut t, &fsp, &mut r);
            let t1 = rand_t(&mut t, &fsp, &mut r);
            let l = loss_dis(&mut t, (s0, s1), (t0, t1)).unwrap();
            assert!(t.value(l).item() >= 0.0);
        }
    }
}
