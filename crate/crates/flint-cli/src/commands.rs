use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;

use flint::archive::EnsembleArchive;
use flint::datagen::{generate, GenConfig, Preset};
use flint::error::{FlintError, Result};
use flint::evalviz::{
    diff_map, flow_to_glyphs, flow_to_hsv, glyphs_to_svg, mid_slice, pathlines, render_density,
    render_glyphs, render_pathlines, Metric,
};
use flint::evalviz::metrics::evaluate_run;
use flint::evalviz::LpipsPlugin;
use flint::field::{FlowField, ScalarField};
use flint::infer::{interpolate_range, linear_baseline, provenance_rate, subsample_archive};
use flint::model::{build_model, Mode, ModelConfig};
use flint::train::{train_loop, SplitSpec, TrainConfig};

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct GenArgs {
    /// Preset: lbs-mini, advect-const, advect-rot, blob3d.
    #[arg(long, value_parser = clap::builder::ValueParser::new(|s: &str| s.parse::<Preset>().map_err(|e| e.to_string())))]
    preset: Preset,
    #[arg(long, default_value_t = 3)]
    members: usize,
    #[arg(long, default_value_t = 0)]
    timesteps: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Spatial shape override, e.g. 100x400 or 32x32x32.
    #[arg(long)]
    grid: Option<String>,
    /// Velocity override for advection presets, e.g. "1.5,-0.5".
    #[arg(long)]
    velocity: Option<String>,
    /// Blob width override for advection presets.
    #[arg(long)]
    blob_sigma: Option<f64>,
    /// Gaussian noise sigma applied to density after generation.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Omit the flow field (unsupervised-style archive).
    #[arg(long)]
    no_flow: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

pub fn run_gen(args: GenArgs) -> Result<()> {
    let mut cfg = GenConfig::new(args.preset);
    cfg.members = args.members;
    if args.timesteps > 0 {
        cfg.timesteps = args.timesteps;
    }
    cfg.seed = args.seed;
    cfg.noise_sigma = args.noise_sigma;
    cfg.with_flow = !args.no_flow;
    cfg.overwrite = args.overwrite;
    if let Some(g) = &args.grid {
        cfg.grid = Some(parse_grid(g)?);
    }
    if let Some(v) = &args.velocity {
        cfg.velocity = Some(parse_f64_list(v)?);
    }
    cfg.blob_sigma = args.blob_sigma;
    let archive = generate(&cfg, &args.out)?;
    println!(
        "wrote archive {} ({} members x {} timesteps, shape {:?}, seed {})",
        archive.root.display(),
        archive.manifest.members.len(),
        cfg.timesteps,
        archive.manifest.shape,
        cfg.seed
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// flow-supervised or flow-unsupervised. Required unless set in --config.
    #[arg(long)]
    mode: Option<String>,
    /// JSON config file; explicit flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_final: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples_per_epoch: Option<usize>,
    #[arg(long)]
    val_samples: Option<usize>,
    /// Number of refinement blocks.
    #[arg(long)]
    blocks: Option<usize>,
    /// Per-block channel widths, e.g. "256,192,192,128".
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    teacher_channels: Option<usize>,
    #[arg(long)]
    kernel: Option<usize>,
    /// Train/val/test member fractions, e.g. "0.6,0.2,0.2".
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    overwrite: bool,
}

pub fn run_train(args: TrainArgs) -> Result<()> {
    let archive = EnsembleArchive::open(&args.data)?;
    let dims = archive.manifest.dims;
    let prior = args.out.join("checkpoint").join("manifest.json");
    if prior.exists() && !args.overwrite {
        return Err(FlintError::Conflict(format!(
            "{} holds a previous run (pass --overwrite to replace)",
            args.out.display()
        )));
    }

    let file: serde_json::Value = match &args.config {
        Some(path) => serde_json::from_reader(std::fs::File::open(path)?)?,
        None => json!({}),
    };
    let mut tcfg: TrainConfig = serde_json::from_value(file.clone())?;
    let mode_str = args
        .mode
        .clone()
        .or_else(|| file.get("mode").and_then(|v| v.as_str()).map(String::from))
        .ok_or_else(|| FlintError::Config("mode is required (flag --mode or config key)".into()))?;
    let mode: Mode = mode_str.parse()?;

    let mut mcfg = ModelConfig::new(dims, mode);
    apply_model_file_keys(&mut mcfg, &file)?;
    if let Some(b) = args.blocks {
        mcfg.num_blocks = b;
        if mcfg.block_channels.len() != b {
            // keep the leading widths, extending with the last entry
            let last = *mcfg.block_channels.last().unwrap();
            mcfg.block_channels.resize(b, last);
        }
    }
    if let Some(c) = &args.channels {
        mcfg.block_channels = parse_usize_list(c)?;
        mcfg.num_blocks = mcfg.block_channels.len();
    }
    if let Some(t) = args.teacher_channels {
        mcfg.teacher_channels = t;
    }
    if let Some(k) = args.kernel {
        mcfg.kernel_size = k;
    }

    if let Some(v) = args.epochs {
        tcfg.epochs = v;
    }
    if let Some(v) = args.batch {
        tcfg.batch_size = Some(v);
    }
    if let Some(v) = args.lr {
        tcfg.lr_max = Some(v);
    }
    if let Some(v) = args.lr_final {
        tcfg.lr_min = Some(v);
    }
    if let Some(v) = args.window {
        tcfg.window = v;
    }
    if let Some(v) = args.patience {
        tcfg.patience = v;
    }
    if let Some(v) = args.seed {
        tcfg.seed = v;
    }
    if let Some(v) = args.samples_per_epoch {
        tcfg.samples_per_epoch = v;
    }
    if let Some(v) = args.val_samples {
        tcfg.val_samples = v;
    }
    if let Some(s) = &args.split {
        let f = parse_f64_list(s)?;
        if f.len() != 3 {
            return Err(FlintError::Config("--split takes three fractions".into()));
        }
        tcfg.split = SplitSpec::Fractions {
            train: f[0],
            val: f[1],
            test: f[2],
        };
    }

    println!(
        "config: {}",
        json!({
            "mode": mode.to_string(),
            "dims": dims,
            "epochs": tcfg.epochs,
            "batch": tcfg.batch_size_for(dims),
            "lr": tcfg.lr_max_for(dims),
            "lr_final": tcfg.lr_min_for(dims),
            "window": tcfg.window,
            "patience": tcfg.patience,
            "seed": tcfg.seed,
            "samples_per_epoch": tcfg.samples_per_epoch,
            "num_blocks": mcfg.num_blocks,
            "block_channels": mcfg.block_channels,
            "teacher_channels": mcfg.teacher_channels,
            "kernel_size": mcfg.kernel_size,
            "lambda_flow": mcfg.loss_weights.lambda_flow,
            "lambda_dis": mcfg.loss_weights.lambda_dis,
            "lambda_photo": mcfg.loss_weights.lambda_photo,
            "lambda_reg": mcfg.loss_weights.lambda_reg,
            "gamma": mcfg.loss_weights.gamma,
        })
    );

    let mut params = build_model::<f32>(&mcfg, tcfg.seed)?;
    let outcome = train_loop(&mut params, &archive, &tcfg, &args.out)?;
    println!(
        "best validation loss {:.6} at epoch {} ({} epochs run{}); checkpoint {}",
        outcome.best_val,
        outcome.best_epoch,
        outcome.history.len(),
        if outcome.stopped_early { ", stopped early" } else { "" },
        outcome.checkpoint.display()
    );
    Ok(())
}

fn apply_model_file_keys(mcfg: &mut ModelConfig, file: &serde_json::Value) -> Result<()> {
    if let Some(v) = file.get("blocks").and_then(|v| v.as_u64()) {
        mcfg.num_blocks = v as usize;
        let last = *mcfg.block_channels.last().unwrap();
        mcfg.block_channels.resize(v as usize, last);
    }
    if let Some(v) = file.get("channels").and_then(|v| v.as_array()) {
        mcfg.block_channels = v
            .iter()
            .map(|x| x.as_u64().map(|u| u as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| FlintError::Config("channels must be integers".into()))?;
        mcfg.num_blocks = mcfg.block_channels.len();
    }
    if let Some(v) = file.get("teacher_channels").and_then(|v| v.as_u64()) {
        mcfg.teacher_channels = v as usize;
    }
    if let Some(v) = file.get("kernel_size").and_then(|v| v.as_u64()) {
        mcfg.kernel_size = v as usize;
    }
    let w = &mut mcfg.loss_weights;
    let num = |key: &str| file.get(key).and_then(|v| v.as_f64());
    if let Some(v) = num("lambda_rec") {
        w.lambda_rec = v;
    }
    if let Some(v) = num("lambda_flow") {
        w.lambda_flow = v;
    }
    if let Some(v) = num("lambda_dis") {
        w.lambda_dis = v;
    }
    if let Some(v) = num("lambda_photo") {
        w.lambda_photo = v;
    }
    if let Some(v) = num("lambda_reg") {
        w.lambda_reg = v;
    }
    if let Some(v) = num("lambda_smooth") {
        w.lambda_smooth = v;
    }
    if let Some(v) = num("gamma") {
        w.gamma = v;
    }
    if let Some(v) = file.get("smoothness").and_then(|v| v.as_bool()) {
        w.smoothness = v;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// infer / baseline
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    rate: usize,
    /// Explicit original-scale indices to produce, e.g. "1,3,5".
    #[arg(long)]
    times: Option<String>,
    /// Treat --data as dense ground truth: keep every rate-th frame as the
    /// stored inputs (the subsampled archive is written next to --out).
    #[arg(long)]
    from_dense: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

pub fn run_infer(args: InferArgs) -> Result<()> {
    let mut archive = EnsembleArchive::open(&args.data)?;
    if args.from_dense {
        let inputs = sibling(&args.out, "inputs");
        archive = subsample_archive(&archive, args.rate, None, inputs, args.overwrite)?;
    }
    let times = match &args.times {
        Some(t) => Some(parse_usize_list(t)?),
        None => None,
    };
    let (out, stats) = interpolate_range(
        &args.checkpoint,
        &archive,
        args.rate,
        times.as_deref(),
        &args.out,
        args.overwrite,
    )?;
    println!(
        "wrote predictions {} ({} timesteps, {:.4} s/timestep)",
        out.root.display(),
        stats.timesteps,
        stats.seconds_per_timestep
    );
    Ok(())
}

#[derive(Args)]
pub struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    rate: usize,
    /// Treat --data as dense ground truth (see `infer --from-dense`).
    #[arg(long)]
    from_dense: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

pub fn run_baseline(args: BaselineArgs) -> Result<()> {
    let mut archive = EnsembleArchive::open(&args.data)?;
    if args.from_dense {
        let inputs = sibling(&args.out, "inputs");
        archive = subsample_archive(&archive, args.rate, None, inputs, args.overwrite)?;
    }
    let out = linear_baseline(&archive, args.rate, &args.out, args.overwrite)?;
    println!("wrote linear baseline {}", out.root.display());
    Ok(())
}

/// `<path>-<tag>` next to an output directory.
fn sibling(path: &Path, tag: &str) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "out".to_string());
    path.with_file_name(format!("{name}-{tag}"))
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Comma-separated metrics: psnr, epe, lpips.
    #[arg(long, value_delimiter = ',', value_parser = clap::builder::ValueParser::new(|s: &str| s.parse::<Metric>().map_err(|e| e.to_string())))]
    metrics: Vec<Metric>,
    /// Interpolation rate; defaults to the rate recorded in the predictions.
    #[arg(long)]
    rate: Option<usize>,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// External LPIPS command, e.g. "python lpips_plugin.py".
    #[arg(long)]
    lpips_cmd: Option<String>,
    #[arg(long)]
    overwrite: bool,
}

pub fn run_eval(args: EvalArgs) -> Result<()> {
    if args.metrics.is_empty() {
        return Err(FlintError::Config("at least one metric required".into()));
    }
    let pred = EnsembleArchive::open(&args.pred)?;
    let gt = EnsembleArchive::open(&args.gt)?;
    let rate = args
        .rate
        .or_else(|| provenance_rate(&pred))
        .ok_or_else(|| FlintError::Config("rate not given and not recorded in predictions".into()))?;
    let plugin = match &args.lpips_cmd {
        Some(spec) => Some(LpipsPlugin::from_spec(spec, std::env::temp_dir())?),
        None => None,
    };
    if args.out.exists() && !args.overwrite {
        return Err(FlintError::Conflict(format!(
            "{} exists (pass --overwrite to replace)",
            args.out.display()
        )));
    }
    let report = evaluate_run(&pred, &gt, &args.metrics, rate, plugin.as_ref())?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    serde_json::to_writer_pretty(std::fs::File::create(&args.out)?, &report)?;
    for (metric, mean) in &report.summary {
        match mean.as_f64() {
            Some(v) => println!("{metric}: {v:.6}"),
            None => println!("{metric}: null"),
        }
    }
    println!("wrote report {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// viz
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum VizStyle {
    Density,
    Hsv,
    Glyphs,
    Diff,
    Pathlines,
}

impl std::fmt::Display for VizStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", format!("{self:?}").to_lowercase())
    }
}

#[derive(Args)]
pub struct VizArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    style: VizStyle,
    /// Timesteps to render, e.g. "30" or "0,10,20".
    #[arg(long, value_delimiter = ',')]
    t: Vec<usize>,
    /// Member id (default: first member).
    #[arg(long)]
    member: Option<String>,
    #[arg(long, default_value = "figures")]
    out: PathBuf,
    /// Field override (density, density_pred, flow, flow_pred).
    #[arg(long)]
    field: Option<String>,
    /// Reference archive for diff maps.
    #[arg(long)]
    vs: Option<PathBuf>,
    /// Difference magnification.
    #[arg(long, default_value_t = 100.0)]
    magnify: f64,
    /// Glyph grid stride.
    #[arg(long, default_value_t = 8)]
    stride: usize,
    /// Glyph length scale.
    #[arg(long, default_value_t = 4.0)]
    scale: f64,
    /// Emit glyphs as SVG instead of PNG.
    #[arg(long)]
    svg: bool,
    /// HSV magnitude percentile cap.
    #[arg(long, default_value_t = 99.0)]
    percentile: f64,
    /// Pathline seed grid stride.
    #[arg(long, default_value_t = 12)]
    seed_stride: usize,
    /// Pathline integration length in frames (default: to the last flow).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    overwrite: bool,
}

pub fn run_viz(args: VizArgs) -> Result<()> {
    let archive = EnsembleArchive::open(&args.data)?;
    let member = match &args.member {
        Some(m) => m.clone(),
        None => archive
            .manifest
            .members
            .first()
            .map(|m| m.id.clone())
            .ok_or_else(|| FlintError::Config("archive has no members".into()))?,
    };
    if args.t.is_empty() {
        return Err(FlintError::Config("at least one --t required".into()));
    }
    std::fs::create_dir_all(&args.out)?;
    let mut written = Vec::new();
    match args.style {
        VizStyle::Density => {
            let field = pick_field(&archive, args.field.as_deref(), &["density", "density_pred"])?;
            let (lo, hi) = archive.norm_range(&field).unwrap_or((0.0, 1.0));
            for &t in &args.t {
                let f = slice2d(&archive.load_scalar(&member, &field, t)?)?;
                let img = render_density(&f, lo, hi)?;
                written.push(save_figure(&args, &member, t, "density", |p| img.save_png(p))?);
            }
        }
        VizStyle::Hsv => {
            let field = pick_field(&archive, args.field.as_deref(), &["flow", "flow_pred"])?;
            for &t in &args.t {
                let f = flow2d(&archive.load_flow(&member, &field, t)?)?;
                let img = flow_to_hsv(&f, args.percentile)?;
                written.push(save_figure(&args, &member, t, "hsv", |p| img.save_png(p))?);
            }
        }
        VizStyle::Glyphs => {
            let field = pick_field(&archive, args.field.as_deref(), &["flow", "flow_pred"])?;
            for &t in &args.t {
                let f = flow2d(&archive.load_flow(&member, &field, t)?)?;
                let glyphs = flow_to_glyphs(&f, args.stride, args.scale)?;
                if args.svg {
                    let svg = glyphs_to_svg(&glyphs, &f.shape);
                    written.push(save_figure_ext(&args, &member, t, "glyphs", "svg", |p| {
                        std::fs::write(p, &svg).map_err(FlintError::from)
                    })?);
                } else {
                    let img = render_glyphs(&glyphs, &f.shape);
                    written.push(save_figure(&args, &member, t, "glyphs", |p| img.save_png(p))?);
                }
            }
        }
        VizStyle::Diff => {
            let vs = args
                .vs
                .as_ref()
                .ok_or_else(|| FlintError::Config("diff style requires --vs <gt archive>".into()))?;
            let gt = EnsembleArchive::open(vs)?;
            let pred_field = pick_field(&archive, args.field.as_deref(), &["density_pred", "density"])?;
            let gt_field = pick_field(&gt, None, &["density", "density_pred"])?;
            for &t in &args.t {
                let a = slice2d(&archive.load_scalar(&member, &pred_field, t)?)?;
                let b = slice2d(&gt.load_scalar(&member, &gt_field, t)?)?;
                let img = diff_map(&a, &b, args.magnify)?;
                written.push(save_figure(&args, &member, t, "diff", |p| img.save_png(p))?);
            }
        }
        VizStyle::Pathlines => {
            let field = pick_field(&archive, args.field.as_deref(), &["flow", "flow_pred"])?;
            let t0 = args.t[0];
            let available = archive.field_timesteps(&member, &field)?;
            if t0 >= available {
                return Err(FlintError::Contract(format!(
                    "pathline start {t0} beyond available flow frames {available}"
                )));
            }
            let steps = args.steps.unwrap_or(available - t0).min(available - t0);
            let flows: Vec<FlowField> = (t0..t0 + steps)
                .map(|t| archive.load_flow(&member, &field, t).and_then(|f| flow2d(&f)))
                .collect::<Result<_>>()?;
            let shape = flows[0].shape.clone();
            let mut seeds = Vec::new();
            for y in (0..shape[0]).step_by(args.seed_stride.max(1)) {
                for x in (0..shape[1]).step_by(args.seed_stride.max(1)) {
                    seeds.push([y as f64, x as f64]);
                }
            }
            let lines = pathlines(&flows, &seeds, steps, 1)?;
            let img = render_pathlines(&lines, &shape);
            written.push(save_figure(&args, &member, t0, "pathlines", |p| img.save_png(p))?);
        }
    }
    for path in &written {
        println!("wrote figure {}", path.display());
    }
    Ok(())
}

fn save_figure(
    args: &VizArgs,
    member: &str,
    t: usize,
    style: &str,
    write: impl Fn(&Path) -> Result<()>,
) -> Result<PathBuf> {
    save_figure_ext(args, member, t, style, "png", write)
}

fn save_figure_ext(
    args: &VizArgs,
    member: &str,
    t: usize,
    style: &str,
    ext: &str,
    write: impl Fn(&Path) -> Result<()>,
) -> Result<PathBuf> {
    let path = args.out.join(format!("{member}_t{t:06}_{style}.{ext}"));
    if path.exists() && !args.overwrite {
        return Err(FlintError::Conflict(format!(
            "{} exists (pass --overwrite to replace)",
            path.display()
        )));
    }
    write(&path)?;
    Ok(path)
}

fn pick_field(
    archive: &EnsembleArchive,
    requested: Option<&str>,
    candidates: &[&str],
) -> Result<String> {
    if let Some(r) = requested {
        if !archive.has_field(r) {
            return Err(FlintError::Config(format!("archive has no field {r}")));
        }
        return Ok(r.to_string());
    }
    for c in candidates {
        if archive.has_field(c) {
            return Ok(c.to_string());
        }
    }
    Err(FlintError::Config(format!(
        "archive has none of the fields {candidates:?}"
    )))
}

/// Figures are 2D: volumes render as their middle slice.
fn slice2d(f: &ScalarField) -> Result<ScalarField> {
    mid_slice(f)
}

/// Mid-depth in-plane slice of a 3D flow (channels 1 and 2 at z = D/2).
fn flow2d(f: &FlowField) -> Result<FlowField> {
    if f.dims() == 2 {
        return Ok(f.clone());
    }
    let (d, h, w) = (f.shape[0], f.shape[1], f.shape[2]);
    let n = d * h * w;
    let z = d / 2;
    let mut out = FlowField::zeros(&[h, w]);
    let plane = h * w;
    out.data[..plane].copy_from_slice(&f.data[n + z * plane..n + (z + 1) * plane]);
    out.data[plane..].copy_from_slice(&f.data[2 * n + z * plane..2 * n + (z + 1) * plane]);
    out.member_id = f.member_id.clone();
    out.time_index = f.time_index;
    Ok(out)
}

// ---------------------------------------------------------------------------
// parsing helpers
// ---------------------------------------------------------------------------

fn parse_grid(s: &str) -> Result<Vec<usize>> {
    let parts: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| FlintError::Config(format!("bad grid spec {s}")))?;
    if !(parts.len() == 2 || parts.len() == 3) {
        return Err(FlintError::Config("grid must have 2 or 3 axes".into()));
    }
    Ok(parts)
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| FlintError::Config(format!("bad number list {s}")))
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| FlintError::Config(format!("bad integer list {s}")))
}
