//! `vpkit` command line.
//!
//! Exit codes: 0 success, 1 failed check, 2 I/O, 3 validation, 4 internal.
//! `--json` prints exactly one JSON document on stdout, errors included.
//! `--config <file>` supplies defaults as JSON: top-level `seed` and
//! `json`, plus one object per subcommand keyed by its name whose entries
//! are flag names, e.g. `{"score": {"theta-deg": 3}}`. Flags given on the
//! command line win.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use vpkit_core::detect::{detect_vps_in_image, RansacConfig};
use vpkit_core::edge::{vp_loss, VpLossConfig, WeightingMode};
use vpkit_core::gradcheck::{run_grad_check, GradCheckConfig};
use vpkit_core::guidance::mock::Counting;
use vpkit_core::guidance::{run_inpainting, uniform_steps, DiffusionSchedule, GuidanceWeights, LatentTensor};
use vpkit_core::mask::OutlinePair;
use vpkit_core::metrics::{score_image, AAReport, ImageResult};
use vpkit_core::outline::{extract_outlines, render_condition, sample_training_condition};
use vpkit_core::synth::box_scene;
use vpkit_core::{BinaryImage, CameraIntrinsics, HomogeneousPoint, LineSegment, Point2};

use crate::error::{AppError, AppResult};
use crate::io::{self, OutlineRecord};
use crate::predictor::parse_predictor;
use crate::service;
use crate::store::{AnnotationRecord, Fault, Store, SCHEMA_VERSION};

#[derive(Parser, Debug)]
#[command(name = "vpkit", version, about = "Vanishing-point consistency toolkit")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// JSON file of default flag values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print one machine-readable JSON document on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// VP alignment scores and loss of a predicted image against ground truth.
    #[command(args_override_self = true)]
    Score(ScoreArgs),
    /// Compare the analytic VP-loss gradient with central differences.
    #[command(args_override_self = true)]
    GradCheck(GradCheckArgs),
    /// Trace, simplify and select VP-aligned outlines from a segmentation map.
    #[command(args_override_self = true)]
    ExtractOutlines(ExtractArgs),
    /// Build the between-outline mask of an annotation record.
    #[command(args_override_self = true)]
    MakeMask(MakeMaskArgs),
    /// Detect vanishing points in one image.
    #[command(args_override_self = true)]
    DetectVps(DetectArgs),
    /// Angle accuracy of detected VPs against annotated targets.
    #[command(args_override_self = true)]
    EvalAa(EvalAaArgs),
    /// Masked inpainting loop with a stand-in noise predictor.
    #[command(args_override_self = true)]
    SimulateInpaint(InpaintArgs),
    /// Write projected wireframe-box images with their target VPs.
    #[command(args_override_self = true)]
    SynthBoxes(SynthArgs),
    /// Run the annotation HTTP service.
    #[command(args_override_self = true)]
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Sigmoid,
    Dot,
}

#[derive(Args, Debug, Clone)]
pub struct LossArgs {
    /// Angular threshold of the sigmoid weighting, degrees.
    #[arg(long, default_value_t = 5.0)]
    pub theta_deg: f64,
    /// Sigmoid steepness, per radian.
    #[arg(long, default_value_t = 50.0)]
    pub k: f64,
    #[arg(long, value_enum, default_value_t = Mode::Sigmoid)]
    pub mode: Mode,
    /// Edge pixels below this gradient magnitude are ignored.
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// Divide scores by the pixel count.
    #[arg(long)]
    pub normalize: bool,
}

impl LossArgs {
    pub fn config(&self) -> AppResult<VpLossConfig> {
        let cfg = VpLossConfig {
            theta_thresh: self.theta_deg.to_radians(),
            sigmoid_steepness: self.k,
            magnitude_epsilon: self.epsilon,
            weighting_mode: match self.mode {
                Mode::Sigmoid => WeightingMode::SigmoidThreshold,
                Mode::Dot => WeightingMode::DotProduct,
            },
            normalize_by_pixel_count: self.normalize,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// VP sidecar JSON `{"vps": [[x, y, w], ...]}`.
    #[arg(long)]
    pub vps: PathBuf,
    #[command(flatten)]
    pub loss: LossArgs,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 2)]
    pub vps_per_trial: usize,
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[command(flatten)]
    pub loss: LossArgs,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Single-channel label PNG.
    #[arg(long)]
    pub seg: PathBuf,
    #[arg(long)]
    pub vps: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub dp_eps: f64,
    #[arg(long, default_value_t = 5.0)]
    pub theta_deg: f64,
    #[arg(long, default_value_t = 1)]
    pub line_width: usize,
    /// Probability of keeping each selected edge in the condition image.
    #[arg(long, default_value_t = 1.0)]
    pub keep_prob: f64,
    /// Output name; defaults to the segmentation file stem.
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MakeMaskArgs {
    #[arg(long)]
    pub annotation: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the record's dilation radius.
    #[arg(long)]
    pub dilate: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// RANSAC configuration JSON; missing fields take defaults.
    #[arg(long)]
    pub ransac: Option<PathBuf>,
    /// Also write the result here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalAaArgs {
    #[arg(long)]
    pub images: PathBuf,
    /// Directory of `<id>.annotation.json` records holding the targets.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub fx: Option<f64>,
    #[arg(long)]
    pub fy: Option<f64>,
    #[arg(long)]
    pub cx: Option<f64>,
    #[arg(long)]
    pub cy: Option<f64>,
    /// Comma-separated, ascending, degrees.
    #[arg(long, default_value = "3,5,10")]
    pub thresholds: String,
    #[arg(long)]
    pub ransac: Option<PathBuf>,
    #[arg(long, default_value = "aa_report.json")]
    pub out: PathBuf,
    /// Per-image CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InpaintArgs {
    #[arg(long)]
    pub z0: PathBuf,
    /// Pixel mask PNG, resampled to the latent's last two dimensions.
    #[arg(long)]
    pub mask: PathBuf,
    /// Schedule JSON; defaults to 1000 scaled-linear steps.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub omega1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub omega2: f64,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value = "mock:zero")]
    pub predictor: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 384)]
    pub height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    AbortMidWrite,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, env = "VPKIT_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: String,
    #[arg(long, env = "VPKIT_IMAGES")]
    pub images: PathBuf,
    #[arg(long, env = "VPKIT_STORE")]
    pub store: PathBuf,
    #[arg(long, env = "VPKIT_RANSAC")]
    pub ransac: Option<PathBuf>,
    #[arg(long, hide = true, value_enum)]
    pub inject_fault: Option<FaultArg>,
}

/// Result of a successful command.
pub struct Outcome {
    pub json: Value,
    pub text: String,
    pub code: i32,
}

impl Outcome {
    fn ok(json: Value, text: String) -> Self {
        Self { json, text, code: 0 }
    }
}

enum ParseFailure {
    Clap(clap::Error),
    App(AppError),
}

impl From<clap::Error> for ParseFailure {
    fn from(e: clap::Error) -> Self {
        ParseFailure::Clap(e)
    }
}

impl From<AppError> for ParseFailure {
    fn from(e: AppError) -> Self {
        ParseFailure::App(e)
    }
}

fn config_token(key: &str, value: &Value) -> AppResult<Vec<OsString>> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(AppError::validation(format!("config value for {key:?} must be a string, number or list"))),
    };
    Ok(match value {
        Value::Bool(true) => vec![flag.into()],
        Value::Bool(false) | Value::Null => vec![],
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar).collect::<AppResult<_>>()?;
            vec![flag.into(), parts.join(",").into()]
        }
        other => vec![flag.into(), scalar(other)?.into()],
    })
}

fn parse(args: &[OsString]) -> Result<Cli, ParseFailure> {
    let matches = Cli::command().try_get_matches_from(args)?;
    let mut cli = Cli::from_arg_matches(&matches)?;
    let Some(path) = cli.config.clone() else { return Ok(cli) };
    let Value::Object(cfg) = io::read_json::<Value>(&path)? else {
        return Err(AppError::validation(format!("{}: config must be a JSON object", path.display())).into());
    };
    let (sub, sub_matches) = matches.subcommand().expect("subcommand is required");
    let mut injected = Vec::new();
    for (key, value) in &cfg {
        match key.as_str() {
            "seed" => {
                let explicit = [matches.value_source("seed"), sub_matches.value_source("seed")]
                    .contains(&Some(ValueSource::CommandLine));
                if !explicit {
                    cli.seed = value
                        .as_u64()
                        .ok_or_else(|| AppError::validation("config seed must be a non-negative integer"))?;
                }
            }
            "json" => cli.json |= value.as_bool().unwrap_or(false),
            k if k == sub => {
                let Value::Object(section) = value else {
                    return Err(AppError::validation(format!("config section {k:?} must be an object")).into());
                };
                for (flag, v) in section {
                    injected.extend(config_token(flag, v)?);
                }
            }
            k if Cli::command().find_subcommand(k).is_some() => {}
            k => return Err(AppError::validation(format!("unknown config key {k:?}")).into()),
        }
    }
    if injected.is_empty() {
        return Ok(cli);
    }
    let pos = args.iter().position(|a| a.to_str() == Some(sub)).expect("subcommand present in argv");
    let mut merged: Vec<OsString> = args[..=pos].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[pos + 1..]);
    let mut again = Cli::try_parse_from(&merged)?;
    again.seed = cli.seed;
    again.json = cli.json;
    Ok(again)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let json_requested = args.iter().any(|a| a == "--json");
    let report = |e: AppError, json: bool, out: &mut dyn Write, err: &mut dyn Write| {
        if json {
            let _ = writeln!(out, "{}", e.to_json());
        } else {
            let _ = writeln!(err, "error: {e}");
        }
        e.kind.exit_code()
    };
    let cli = match parse(&args) {
        Ok(cli) => cli,
        Err(ParseFailure::Clap(e)) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            if !json_requested {
                let _ = write!(err, "{}", e.render());
                return 3;
            }
            return report(AppError::validation(e.render().to_string().trim().to_string()), true, out, err);
        }
        Err(ParseFailure::App(e)) => return report(e, json_requested, out, err),
    };
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| dispatch(&cli, &mut *out)))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(AppError::internal(msg))
        });
    match result {
        Ok(o) => {
            if cli.json {
                let _ = writeln!(out, "{}", o.json);
            } else {
                let _ = write!(out, "{}", o.text);
            }
            o.code
        }
        Err(e) => report(e, cli.json, out, err),
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> AppResult<Outcome> {
    match &cli.command {
        Command::Score(a) => cmd_score(a),
        Command::GradCheck(a) => cmd_grad_check(a, cli.seed),
        Command::ExtractOutlines(a) => cmd_extract_outlines(a, cli.seed),
        Command::MakeMask(a) => cmd_make_mask(a),
        Command::DetectVps(a) => cmd_detect_vps(a, cli.seed),
        Command::EvalAa(a) => cmd_eval_aa(a, cli.seed),
        Command::SimulateInpaint(a) => cmd_simulate_inpaint(a, cli.seed),
        Command::SynthBoxes(a) => cmd_synth_boxes(a, cli.seed),
        Command::Serve(a) => cmd_serve(a, cli.seed, cli.json, out),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> AppResult<Value> {
    serde_json::to_value(v).map_err(|e| AppError::internal(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> AppResult<()> {
    io::atomic_write(path, bytes)
}

pub fn cmd_score(a: &ScoreArgs) -> AppResult<Outcome> {
    let cfg = a.loss.config()?;
    let pred = io::read_gray(&a.pred)?;
    let gt = io::read_gray(&a.gt)?;
    let vps = io::read_vps(&a.vps)?;
    let report = vp_loss(&pred, &gt, &vps, &cfg)?;
    let mut text = format!("loss {:.6e}\n", report.loss);
    for (i, (p, g)) in report.scores_pred.iter().zip(&report.scores_gt).enumerate() {
        text += &format!("vp {i}: pred {p:.6} gt {g:.6}\n");
    }
    Ok(Outcome::ok(to_value(&report)?, text))
}

pub fn cmd_grad_check(a: &GradCheckArgs, seed: u64) -> AppResult<Outcome> {
    let cfg = GradCheckConfig {
        size: a.size,
        trials: a.trials,
        vps_per_trial: a.vps_per_trial,
        step: a.step,
        probes: a.probes,
        tolerance: a.tolerance,
        seed,
    };
    let report = run_grad_check(&cfg, &a.loss.config()?)?;
    let text = format!(
        "grad-check {}: max relative error {:.3e} (tolerance {:e}, seed {seed})\n",
        if report.pass { "passed" } else { "FAILED" },
        report.max_rel_err,
        a.tolerance
    );
    Ok(Outcome { json: to_value(&report)?, text, code: if report.pass { 0 } else { 1 } })
}

pub fn cmd_extract_outlines(a: &ExtractArgs, seed: u64) -> AppResult<Outcome> {
    if a.line_width == 0 {
        return Err(AppError::validation("line width must be at least 1"));
    }
    let map = io::read_segmentation(&a.seg)?;
    let vps = io::read_vps(&a.vps)?;
    let id = match &a.id {
        Some(id) => id.clone(),
        None => a.seg.file_stem().and_then(|s| s.to_str()).unwrap_or("outlines").to_string(),
    };
    let edges = extract_outlines(&map, &vps, a.dp_eps, a.theta_deg.to_radians())?;
    let kept = sample_training_condition(&edges, a.keep_prob, seed)?;
    let cond = render_condition(&kept, map.width(), map.height(), a.line_width)?;
    let outlines: Vec<OutlineRecord> = edges.iter().map(OutlineRecord::from).collect();
    let outlines_path = a.out.join(format!("{id}.outlines.json"));
    let cond_path = a.out.join(format!("{id}.cond.png"));
    write_file(&outlines_path, &io::json_bytes(&outlines)?)?;
    write_file(&cond_path, &io::binary_png_bytes(&cond)?)?;
    let json = json!({
        "image_id": id,
        "seed": seed,
        "outlines_file": outlines_path,
        "cond_file": cond_path,
        "edges": edges.len(),
        "condition_edges": kept.len(),
    });
    let text = format!("{} edges ({} in condition, seed {seed}) -> {}\n", edges.len(), kept.len(), outlines_path.display());
    Ok(Outcome::ok(json, text))
}

pub fn cmd_make_mask(a: &MakeMaskArgs) -> AppResult<Outcome> {
    let record = AnnotationRecord::parse(&io::read_bytes(&a.annotation)?)?;
    record.validate()?;
    let report = record.mask(a.dilate)?;
    write_file(&a.out, &io::binary_png_bytes(&report.mask)?)?;
    let json = json!({
        "out": a.out,
        "width": report.mask.width(),
        "height": report.mask.height(),
        "dilation_px": a.dilate.unwrap_or(record.dilation_px),
        "set_pixels": report.mask.count(),
        "coverage": report.coverage,
        "skipped_pairs": report.skipped,
    });
    let text = format!("{} pixels set ({:.2}% coverage) -> {}\n", report.mask.count(), 100.0 * report.coverage, a.out.display());
    Ok(Outcome::ok(json, text))
}

fn ransac_config(path: Option<&Path>, seed: u64) -> AppResult<RansacConfig> {
    let mut cfg = match path {
        Some(p) => io::read_json::<RansacConfig>(p)?,
        None => RansacConfig::default(),
    };
    cfg.rng_seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_detect_vps(a: &DetectArgs, seed: u64) -> AppResult<Outcome> {
    let cfg = ransac_config(a.ransac.as_deref(), seed)?;
    let gray = io::read_gray(&a.image)?;
    let (segments, candidates) = detect_vps_in_image(&gray, &cfg)?;
    let json = json!({ "image": a.image, "seed": seed, "config": cfg, "segments": segments, "candidates": candidates });
    if let Some(out) = &a.out {
        write_file(out, &io::json_bytes(&json)?)?;
    }
    let mut text = format!("{} segments, {} vanishing points (seed {seed})\n", segments.len(), candidates.len());
    for c in &candidates {
        let [x, y, w] = c.vp.to_array();
        text += &format!("  [{x:.3}, {y:.3}, {w:.3}] inliers {} score {:.1}\n", c.inliers.len(), c.score);
    }
    Ok(Outcome::ok(json, text))
}

fn parse_thresholds(s: &str) -> AppResult<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| AppError::validation(format!("bad threshold {t:?}"))))
        .collect()
}

fn image_ids(dir: &Path) -> AppResult<Vec<(String, PathBuf)>> {
    let rd = std::fs::read_dir(dir).map_err(|e| AppError::from(e).context(dir.display()))?;
    let mut v: Vec<(String, PathBuf)> = rd
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| crate::store::IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect();
    v.sort();
    Ok(v)
}

pub fn cmd_eval_aa(a: &EvalAaArgs, seed: u64) -> AppResult<Outcome> {
    let thresholds = parse_thresholds(&a.thresholds)?;
    let cfg = ransac_config(a.ransac.as_deref(), seed)?;
    let fixed_k = match (a.fx, a.fy, a.cx, a.cy) {
        (Some(fx), Some(fy), Some(cx), Some(cy)) => Some(CameraIntrinsics::new(fx, fy, cx, cy)?),
        (None, None, None, None) => None,
        _ => return Err(AppError::validation("give all of --fx --fy --cx --cy or none")),
    };
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for (id, path) in image_ids(&a.images)? {
        let rec_path = a.annotations.join(format!("{id}.annotation.json"));
        if rec_path.is_file() {
            let record = AnnotationRecord::parse(&io::read_bytes(&rec_path)?).map_err(|e| e.context(rec_path.display()))?;
            jobs.push((id, path, record.target_vp));
        } else {
            skipped.push(id);
        }
    }
    if jobs.is_empty() {
        return Err(AppError::validation("no annotated images to evaluate"));
    }

    let evaluate = |(id, path, target): &(String, PathBuf, HomogeneousPoint)| -> AppResult<ImageResult> {
        let gray = io::read_gray(path)?;
        let k = fixed_k.unwrap_or_else(|| CameraIntrinsics::default_for_image(gray.width(), gray.height()));
        let (_, cands) = detect_vps_in_image(&gray, &cfg)?;
        let detected: Vec<HomogeneousPoint> = cands.iter().map(|c| c.vp).collect();
        Ok(score_image(id, "ransac", &detected, target, &k))
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let chunk = jobs.len().div_ceil(workers);
    let per_image: Vec<ImageResult> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs.chunks(chunk).map(|c| s.spawn(move || c.iter().map(evaluate).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect::<AppResult<Vec<_>>>()
    })?;

    let report = AAReport::build(per_image, &thresholds)?;
    write_file(&a.out, &io::json_bytes(&report)?)?;
    if let Some(csv) = &a.csv {
        let mut s = String::from("image_id,error_deg,detector,no_detection\n");
        for r in &report.per_image {
            s += &format!("{},{},{},{}\n", r.image_id, r.error_deg, r.detector, r.no_detection);
        }
        write_file(csv, s.as_bytes())?;
    }
    let json = json!({
        "report": a.out,
        "seed": seed,
        "evaluated": report.per_image.len(),
        "skipped": skipped,
        "aa_at": report.aa_at,
        "mean_error_deg": report.mean_error_deg,
    });
    let mut text = format!("{} images (seed {seed})\n", report.per_image.len());
    for (t, v) in thresholds.iter().zip(report.aa_at.values()) {
        text += &format!("  AA@{t}°: {v:.3}\n");
    }
    text += &format!("  mean error {:.3}°\n", report.mean_error_deg);
    Ok(Outcome::ok(json, text))
}

/// Nearest-neighbour resampling of a pixel mask onto a `width × height` grid.
pub fn resample_mask(mask: &BinaryImage, width: usize, height: usize) -> LatentTensor {
    let (mw, mh) = (mask.width(), mask.height());
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = (((y as f64 + 0.5) * mh as f64 / height as f64) as usize).min(mh - 1);
        for x in 0..width {
            let sx = (((x as f64 + 0.5) * mw as f64 / width as f64) as usize).min(mw - 1);
            data.push(if mask.get(sx, sy) { 1.0 } else { 0.0 });
        }
    }
    LatentTensor::new(vec![height, width], data).expect("length matches shape")
}

pub fn cmd_simulate_inpaint(a: &InpaintArgs, seed: u64) -> AppResult<Outcome> {
    let z0 = io::read_latent(&a.z0)?;
    let sched = match &a.schedule {
        Some(p) => io::read_schedule(p)?,
        None => DiffusionSchedule::latent_diffusion_default(),
    };
    let shape = z0.shape().to_vec();
    if shape.len() < 2 {
        return Err(AppError::validation("latent must have at least two dimensions"));
    }
    let mask_img = io::read_binary_png(&a.mask)?;
    if mask_img.width() == 0 || mask_img.height() == 0 {
        return Err(AppError::validation("mask is empty"));
    }
    let mask = resample_mask(&mask_img, shape[shape.len() - 1], shape[shape.len() - 2]);
    let weights = GuidanceWeights::new(a.omega1, a.omega2)?;
    let steps = uniform_steps(sched.timesteps(), a.steps)?;
    let mut predictor = parse_predictor(&a.predictor, &sched, &shape)?;
    let mut counting = Counting::new(&mut *predictor);
    let z = run_inpainting(&mut counting, &z0, &mask, &sched, weights, &steps, seed)?;
    write_file(&a.out, &io::encode_latent(&z))?;
    let diff = z.max_abs_diff(&z0)?;
    let json = json!({
        "out": a.out,
        "seed": seed,
        "predictor": a.predictor,
        "steps": steps,
        "predictor_calls": counting.calls,
        "max_abs_diff_from_z0": diff,
    });
    let text = format!(
        "{} steps, {} predictor calls, max |z - z0| = {diff:.3e} (seed {seed}) -> {}\n",
        steps.len(),
        counting.calls,
        a.out.display()
    );
    Ok(Outcome::ok(json, text))
}

/// `seg` rotated by `deg` about its midpoint.
fn rotate_about_midpoint(seg: &LineSegment, deg: f64) -> AppResult<LineSegment> {
    let m = seg.midpoint();
    let (s, c) = deg.to_radians().sin_cos();
    let rot = |p: Point2| Point2::new(m.x + c * (p.x - m.x) - s * (p.y - m.y), m.y + s * (p.x - m.x) + c * (p.y - m.y));
    Ok(LineSegment::new(rot(seg.p0()), rot(seg.p1()))?)
}

pub fn cmd_synth_boxes(a: &SynthArgs, seed: u64) -> AppResult<Outcome> {
    let mut written = Vec::new();
    for i in 0..a.count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let scene = box_scene(a.width, a.height, &mut rng)?;
        let id = format!("box_{i:03}");
        let desired = scene
            .segments
            .iter()
            .filter(|(_, f)| *f == 0)
            .map(|(s, _)| *s)
            .max_by(|x, y| x.length().total_cmp(&y.length()))
            .ok_or_else(|| AppError::internal("scene has no target-family segment"))?;
        let record = AnnotationRecord {
            schema_version: SCHEMA_VERSION,
            image_id: id.clone(),
            image_size: [a.width, a.height],
            target_vp: scene.target,
            pairs: vec![OutlinePair::new(rotate_about_midpoint(&desired, 3.0)?, desired)?],
            dilation_px: crate::store::DEFAULT_DILATION_PX,
            prompt: String::new(),
            created_at: None,
            updated_at: None,
        };
        write_file(&a.out.join(format!("{id}.png")), &io::gray_png_bytes(&scene.image)?)?;
        write_file(&a.out.join(format!("{id}.annotation.json")), &io::json_bytes(&record)?)?;
        written.push(id);
    }
    let text = format!("{} scenes (seed {seed}) -> {}\n", written.len(), a.out.display());
    Ok(Outcome::ok(json!({ "out": a.out, "seed": seed, "images": written }), text))
}

pub fn cmd_serve(a: &ServeArgs, seed: u64, json_mode: bool, out: &mut dyn Write) -> AppResult<Outcome> {
    let ransac = ransac_config(a.ransac.as_deref(), seed)?;
    let fault = a.inject_fault.map(|f| match f {
        FaultArg::AbortMidWrite => Fault::AbortMidWrite,
    });
    let store = Arc::new(Store::open(&a.images, &a.store, ransac)?.with_fault(fault));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.listen)
            .await
            .map_err(|e| AppError::io(format!("cannot listen on {}: {e}", a.listen)))?;
        let addr = listener.local_addr()?;
        if json_mode {
            let _ = writeln!(out, "{}", json!({ "listening": addr.to_string() }));
        } else {
            let _ = writeln!(out, "listening on http://{addr}");
        }
        let _ = out.flush();
        service::serve(listener, store, service::termination_signal()).await?;
        Ok::<_, AppError>(())
    })?;
    Ok(Outcome::ok(json!({ "status": "stopped" }), "stopped\n".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("vpkit").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_three() {
        assert_eq!(run_capture(&["score"]).0, 3);
        let (code, out, _) = run_capture(&["--json", "grad-check", "--size", "x"]);
        assert_eq!(code, 3);
        assert!(out.contains("validation_failed"));
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run_capture(&["--help"]).0, 0);
    }

    #[test]
    fn thresholds_parse() {
        assert_eq!(parse_thresholds("3, 5,10").unwrap(), [3.0, 5.0, 10.0]);
        assert!(parse_thresholds("3,,5").is_err());
    }

    #[test]
    fn mask_resampling_picks_nearest_pixel() {
        let mut m = BinaryImage::new(8, 8);
        for y in 0..4 {
            for x in 0..4 {
                m.set(x, y, true);
            }
        }
        let t = resample_mask(&m, 2, 2);
        assert_eq!(t.shape(), [2, 2]);
        assert_eq!(t.data(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn config_flags_are_defaults_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"seed": 7, "grad-check": {"size": 2}}"#).unwrap();
        let c = cfg.to_str().unwrap();
        let (code, out, _) = run_capture(&["--json", "--config", c, "grad-check"]);
        assert_eq!(code, 3, "{out}");
        assert!(out.contains("at least 4x4"));
        let (code, out, _) = run_capture(&["--json", "--config", c, "grad-check", "--size", "6", "--trials", "1", "--probes", "5"]);
        assert!(code == 0 || code == 1, "{out}");
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["config"]["size"], 6);
        assert_eq!(v["config"]["seed"], 7);
        let (_, out, _) = run_capture(&["--json", "--config", c, "grad-check", "--seed", "9", "--size", "6", "--trials", "1", "--probes", "5"]);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["config"]["seed"], 9);
        std::fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
        assert_eq!(run_capture(&["--config", c, "grad-check"]).0, 3);
    }
}
