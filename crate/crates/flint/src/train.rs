//! Triplet sampling, the optimization loop, validation, and early stopping.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::EnsembleArchive;
use crate::autodiff::Tape;
use crate::error::{FlintError, Result};
use crate::field::{normalize_field, FlowField, ScalarField};
use crate::losses::{compute_losses, LossValues};
use crate::model::checkpoint::{save_checkpoint, TrainingState};
use crate::model::config::Mode;
use crate::model::net::forward_on_tape;
use crate::model::params::ParameterSet;
use crate::optim::{clip_global_norm, lr_schedule, AdamW};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitSpec {
    /// Explicit member ids per split.
    Members {
        train: Vec<String>,
        val: Vec<String>,
        #[serde(default)]
        test: Vec<String>,
    },
    /// Fractions of the (seed-shuffled) member list.
    Fractions { train: f64, val: f64, test: f64 },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResolvedSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn resolve(&self, archive: &EnsembleArchive, seed: u64) -> Result<ResolvedSplit> {
        let ids: Vec<String> = archive.manifest.members.iter().map(|m| m.id.clone()).collect();
        let split = match self {
            SplitSpec::Members { train, val, test } => {
                for id in train.iter().chain(val).chain(test) {
                    if !ids.contains(id) {
                        return Err(FlintError::Config(format!("unknown member {id} in split")));
                    }
                }
                ResolvedSplit {
                    train: train.clone(),
                    val: val.clone(),
                    test: test.clone(),
                }
            }
            SplitSpec::Fractions { train, val, test } => {
                if *train <= 0.0 || *val < 0.0 || *test < 0.0 || train + val + test > 1.0 + 1e-9 {
                    return Err(FlintError::Config("invalid split fractions".into()));
                }
                let mut shuffled = ids.clone();
                let mut r = StdRng::seed_from_u64(seed ^ 0x73706c69);
                shuffled.shuffle(&mut r);
                let n = shuffled.len();
                let n_train = ((n as f64 * train).round() as usize).clamp(1, n);
                let n_val = ((n as f64 * val).round() as usize).min(n - n_train);
                let n_val = if n_val == 0 && n > n_train { 1 } else { n_val };
                ResolvedSplit {
                    train: shuffled[..n_train].to_vec(),
                    val: shuffled[n_train..n_train + n_val].to_vec(),
                    test: shuffled[n_train + n_val..].to_vec(),
                }
            }
        };
        if split.train.is_empty() {
            return Err(FlintError::Config("empty training split".into()));
        }
        for id in &split.val {
            if split.train.contains(id) {
                return Err(FlintError::Config(format!(
                    "member {id} appears in both train and val splits"
                )));
            }
        }
        Ok(split)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// Default 32 in 2D, 2 in 3D.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Default 6e-4 in 2D, 1e-4 in 3D.
    #[serde(default)]
    pub lr_max: Option<f64>,
    /// Default 6e-6 in 2D, 1e-6 in 3D.
    #[serde(default)]
    pub lr_min: Option<f64>,
    #[serde(default = "d_window")]
    pub window: usize,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "d_samples")]
    pub samples_per_epoch: usize,
    #[serde(default = "d_val_samples")]
    pub val_samples: usize,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
}

fn d_epochs() -> usize {
    120
}
fn d_window() -> usize {
    12
}
fn d_patience() -> usize {
    30
}
fn d_samples() -> usize {
    2000
}
fn d_val_samples() -> usize {
    128
}
fn d_weight_decay() -> f64 {
    1e-4
}
fn d_clip() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: d_epochs(),
            batch_size: None,
            lr_max: None,
            lr_min: None,
            window: d_window(),
            patience: d_patience(),
            seed: 0,
            split: SplitSpec::default(),
            samples_per_epoch: d_samples(),
            val_samples: d_val_samples(),
            weight_decay: d_weight_decay(),
            clip_norm: d_clip(),
        }
    }
}

impl TrainConfig {
    pub fn batch_size_for(&self, dims: usize) -> usize {
        self.batch_size.unwrap_or(if dims == 3 { 2 } else { 32 })
    }

    pub fn lr_max_for(&self, dims: usize) -> f64 {
        self.lr_max.unwrap_or(if dims == 3 { 1e-4 } else { 6e-4 })
    }

    pub fn lr_min_for(&self, dims: usize) -> f64 {
        self.lr_min.unwrap_or(if dims == 3 { 1e-6 } else { 6e-6 })
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        if self.window < 2 {
            return Err(FlintError::Config("window must be >= 2".into()));
        }
        if self.patience == 0 {
            return Err(FlintError::Config("patience must be >= 1".into()));
        }
        let (lo, hi) = (self.lr_min_for(dims), self.lr_max_for(dims));
        if lo < 0.0 || hi < lo {
            return Err(FlintError::Config(format!(
                "learning rates must satisfy 0 <= final ({lo}) <= base ({hi})"
            )));
        }
        if self.samples_per_epoch == 0 || self.val_samples == 0 {
            return Err(FlintError::Config("sample counts must be positive".into()));
        }
        Ok(())
    }
}

/// Sampled triplet location within an archive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripletRef {
    pub member: String,
    pub s: usize,
    pub t: usize,
    pub u: usize,
    pub gap: usize,
}

impl TripletRef {
    pub fn tau(&self) -> f64 {
        (self.t - self.s) as f64 / (self.u - self.s) as f64
    }
}

/// One training unit with loaded (normalized) fields.
#[derive(Clone, Debug)]
pub struct SampleTriplet {
    pub d_s: ScalarField,
    pub d_u: ScalarField,
    pub d_t_gt: ScalarField,
    pub tau: f64,
    pub f_t_gt: Option<FlowField>,
    pub gap: usize,
}

/// Number of (s, u) pairs with `2 <= u - s <= window` in a `t_len`-frame
/// sequence.
pub fn pair_count(t_len: usize, window: usize) -> usize {
    if t_len < 3 {
        return 0;
    }
    let wmax = window.min(t_len - 1);
    (2..=wmax).map(|g| t_len - g).sum()
}

/// Uniformly sample triplet locations: member, then (s, u) uniform over all
/// admissible pairs, then t uniform strictly inside (s, u).
pub fn sample_triplet_refs(
    archive: &EnsembleArchive,
    members: &[String],
    window: usize,
    count: usize,
    rng: &mut StdRng,
) -> Result<Vec<TripletRef>> {
    let eligible: Vec<(&String, usize)> = members
        .iter()
        .filter_map(|id| {
            let t_len = archive.member(id).map(|m| m.timesteps)?;
            if t_len >= 3 {
                Some((id, t_len))
            } else {
                eprintln!("warning: member {id} has fewer than 3 timesteps; skipped");
                None
            }
        })
        .collect();
    if eligible.is_empty() {
        return Err(FlintError::EmptyInput(
            "no member with at least 3 timesteps in split".into(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (id, t_len) = eligible[rng.random_range(0..eligible.len())];
        let total = pair_count(t_len, window);
        let mut idx = rng.random_range(0..total);
        let wmax = window.min(t_len - 1);
        let mut gap = 2;
        loop {
            let n_here = t_len - gap;
            if idx < n_here {
                break;
            }
            idx -= n_here;
            gap += 1;
            debug_assert!(gap <= wmax);
        }
        let s = idx;
        let u = s + gap;
        let t = rng.random_range(s + 1..u);
        out.push(TripletRef {
            member: id.clone(),
            s,
            t,
            u,
            gap,
        });
    }
    Ok(out)
}

/// Deterministic triplet sampling with a fresh seed (the loop itself keeps
/// one RNG across epochs; this is the standalone entry point).
pub fn sample_triplets(
    archive: &EnsembleArchive,
    members: &[String],
    window: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<TripletRef>> {
    let mut rng = StdRng::seed_from_u64(seed);
    sample_triplet_refs(archive, members, window, count, &mut rng)
}

/// In-memory cache of the fields a training run touches.
pub struct DataCache {
    densities: HashMap<(String, usize), Arc<ScalarField>>,
    flows: HashMap<(String, usize), Arc<FlowField>>,
    pub norm_range: (f32, f32),
}

impl DataCache {
    /// Load every density (normalized by the training-split range) and flow
    /// frame of the given members.
    pub fn load(
        archive: &EnsembleArchive,
        members: &[String],
        norm_members: &[String],
        with_flow: bool,
    ) -> Result<DataCache> {
        // Normalization statistics come from the training split only.
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for id in norm_members {
            let steps = archive.field_timesteps(id, "density")?;
            for t in 0..steps {
                let f = archive.load_scalar(id, "density", t)?;
                for &v in &f.data {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(FlintError::Data("non-finite density in training split".into()));
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        let mut densities = HashMap::new();
        let mut flows = HashMap::new();
        for id in members {
            let steps = archive.field_timesteps(id, "density")?;
            for t in 0..steps {
                let f = archive.load_scalar(id, "density", t)?;
                let f = normalize_field(&f, lo, hi)?;
                densities.insert((id.clone(), t), Arc::new(f));
            }
            if with_flow && archive.has_field("flow") {
                let steps = archive.field_timesteps(id, "flow")?;
                for t in 0..steps {
                    flows.insert((id.clone(), t), Arc::new(archive.load_flow(id, "flow", t)?));
                }
            }
        }
        Ok(DataCache {
            densities,
            flows,
            norm_range: (lo, hi),
        })
    }

    pub fn density(&self, member: &str, t: usize) -> &ScalarField {
        &self.densities[&(member.to_string(), t)]
    }

    pub fn flow(&self, member: &str, t: usize) -> Option<&FlowField> {
        self.flows.get(&(member.to_string(), t)).map(|a| a.as_ref())
    }

    pub fn materialize(&self, r: &TripletRef, attach_flow: bool) -> SampleTriplet {
        SampleTriplet {
            d_s: self.density(&r.member, r.s).clone(),
            d_u: self.density(&r.member, r.u).clone(),
            d_t_gt: self.density(&r.member, r.t).clone(),
            tau: r.tau(),
            f_t_gt: if attach_flow {
                self.flow(&r.member, r.t).cloned()
            } else {
                None
            },
            gap: r.gap,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_val: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
    pub norm_range: (f32, f32),
    pub stopped_early: bool,
}

fn loss_for_sample<F: Real>(
    params: &ParameterSet<F>,
    sample: &SampleTriplet,
    mode: Mode,
    with_grad: bool,
) -> Result<(f64, LossValues, Vec<Option<Tensor<F>>>)> {
    let mut tape: Tape<F> = Tape::new();
    let ds = sample.d_s.to_tensor::<F>();
    let du = sample.d_u.to_tensor::<F>();
    let dgt = sample.d_t_gt.to_tensor::<F>();
    let graph = forward_on_tape(&mut tape, params, &ds, &du, sample.tau, Some(&dgt), with_grad)?;
    let ds_var = tape.constant(ds);
    let du_var = tape.constant(du);
    let dgt_var = tape.constant(dgt);
    let fgt_var = match (&sample.f_t_gt, mode) {
        (Some(f), Mode::FlowSupervised) => Some(tape.constant(f.to_tensor::<F>())),
        (None, Mode::FlowSupervised) => {
            return Err(FlintError::Config(
                "flow-supervised training requires ground-truth flow in the archive".into(),
            ))
        }
        _ => None,
    };
    let (total, values) = compute_losses(
        &mut tape,
        &graph,
        params,
        ds_var,
        du_var,
        dgt_var,
        fgt_var,
        &params.config.loss_weights,
        mode,
    )?;
    if !values.total.is_finite() {
        return Err(FlintError::Data(format!(
            "non-finite loss: {values:?}"
        )));
    }
    let grads = if with_grad {
        tape.backward(total);
        graph
            .param_vars
            .iter()
            .map(|v| v.and_then(|var| tape.grad(var).cloned()))
            .collect()
    } else {
        Vec::new()
    };
    Ok((values.total, values, grads))
}

/// Mean validation loss over a fixed triplet set.
fn validation_loss<F: Real>(
    params: &ParameterSet<F>,
    cache: &DataCache,
    triplets: &[TripletRef],
    mode: Mode,
    attach_flow: bool,
) -> Result<f64> {
    let losses: Vec<Result<f64>> = triplets
        .par_iter()
        .map(|r| {
            let sample = cache.materialize(r, attach_flow);
            loss_for_sample(params, &sample, mode, false).map(|(l, _, _)| l)
        })
        .collect();
    let mut acc = 0.0;
    for l in losses {
        acc += l?;
    }
    Ok(acc / triplets.len() as f64)
}

/// Train the model in place; returns the best checkpoint and history. The
/// best checkpoint (by validation loss of the active mode) is written to
/// `<out_dir>/checkpoint` and the per-epoch history to `<out_dir>/history.json`.
pub fn train_loop<F: Real>(
    params: &mut ParameterSet<F>,
    archive: &EnsembleArchive,
    tcfg: &TrainConfig,
    out_dir: impl AsRef<Path>,
) -> Result<TrainOutcome> {
    let out_dir = out_dir.as_ref();
    let mode = params.config.mode;
    let dims = params.config.dims;
    tcfg.validate(dims)?;
    if archive.manifest.dims != dims {
        return Err(FlintError::Config(format!(
            "model dims {} vs archive dims {}",
            dims, archive.manifest.dims
        )));
    }
    let supervised = mode == Mode::FlowSupervised;
    if supervised && !archive.has_field("flow") {
        return Err(FlintError::Config(
            "flow-supervised training requires a flow field in the archive".into(),
        ));
    }
    let split = tcfg.split.resolve(archive, tcfg.seed)?;
    if split.val.is_empty() {
        return Err(FlintError::Config("validation split is empty".into()));
    }

    let mut cached_members = split.train.clone();
    cached_members.extend(split.val.iter().cloned());
    let cache = DataCache::load(archive, &cached_members, &split.train, supervised)?;

    let mut rng = StdRng::seed_from_u64(tcfg.seed);
    let mut val_rng = StdRng::seed_from_u64(tcfg.seed ^ 0x56414c);
    let val_triplets =
        sample_triplet_refs(archive, &split.val, tcfg.window, tcfg.val_samples, &mut val_rng)?;

    let batch_size = tcfg.batch_size_for(dims);
    let lr_max = tcfg.lr_max_for(dims);
    let lr_min = tcfg.lr_min_for(dims);
    let mut opt: AdamW<F> = AdamW::new(params, tcfg.weight_decay);

    fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("checkpoint");
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut bad_epochs = 0;
    let mut stopped_early = false;

    for epoch in 0..tcfg.epochs {
        let lr = lr_schedule(epoch, tcfg.epochs, lr_max, lr_min);
        let refs = sample_triplet_refs(
            archive,
            &split.train,
            tcfg.window,
            tcfg.samples_per_epoch,
            &mut rng,
        )?;
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in refs.chunks(batch_size).enumerate() {
            let results: Vec<Result<(f64, LossValues, Vec<Option<Tensor<F>>>)>> = batch
                .par_iter()
                .map(|r| {
                    let sample = cache.materialize(r, supervised);
                    loss_for_sample(params, &sample, mode, true)
                })
                .collect();
            let mut grad_acc: Vec<Tensor<F>> = params
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
            let mut batch_loss = 0.0;
            for res in results {
                let (loss, values, grads) = res.map_err(|e| match e {
                    FlintError::Data(detail) => FlintError::Diverged {
                        step: epoch * refs.len() / batch_size.max(1) + batch_idx,
                        detail: format!("epoch {epoch} batch {batch_idx}: {detail}"),
                    },
                    other => other,
                })?;
                let _ = values;
                batch_loss += loss;
                for (acc, g) in grad_acc.iter_mut().zip(grads) {
                    if let Some(g) = g {
                        for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                }
            }
            let inv = F::of(1.0 / batch.len() as f64);
            for g in grad_acc.iter_mut() {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            clip_global_norm(&mut grad_acc, tcfg.clip_norm);
            opt.step(params, &grad_acc, lr);
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / refs.len() as f64;
        let val_loss = validation_loss(params, &cache, &val_triplets, mode, supervised)?;
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        write_history(out_dir, &history)?;

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            bad_epochs = 0;
            save_checkpoint(
                params,
                &TrainingState {
                    epoch,
                    best_val,
                    norm_range: cache.norm_range,
                },
                &ckpt_path,
            )?;
        } else {
            bad_epochs += 1;
            if bad_epochs >= tcfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    if !ckpt_path.exists() {
        // epochs == 0 or no finite validation: still emit a checkpoint
        save_checkpoint(
            params,
            &TrainingState {
                epoch: 0,
                best_val,
                norm_range: cache.norm_range,
            },
            &ckpt_path,
        )?;
    }
    Ok(TrainOutcome {
        best_val,
        best_epoch,
        history,
        checkpoint: ckpt_path,
        norm_range: cache.norm_range,
        stopped_early,
    })
}

fn write_history(out_dir: &Path, history: &[EpochRecord]) -> Result<()> {
    let tmp = out_dir.join("history.json.tmp");
    serde_json::to_writer_pretty(fs::File::create(&tmp)?, history)?;
    fs::rename(tmp, out_dir.join("history.json"))?;
    Ok(())
}
