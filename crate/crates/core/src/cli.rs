//! Command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::agent::{AgentVariant, ExplorationMode};
use crate::data::{self, build_index, export_voc, generate_synthetic, load_rgb, AnnotatedImage, Sample, SyntheticConfig};
use crate::env::{save_frame, ActionLogger, EnvConfig, EnvMode, Environment, LogRecord};
use crate::eval::{self, detect, evaluate_category, write_ap_csv, write_detections_jsonl, Detection, EvalError};
use crate::feature_client::ExternalExtractor;
use crate::features::{BackboneDescriptor, BuiltinExtractor, FeatureExtractor};
use crate::geometry::Action;
use crate::qnet::{self, CheckpointHeader, QNetwork};
#[cfg(test)]
use crate::qnet::FORMAT_VERSION;
use crate::saliency::{sweep_thresholds, write_sweep_csv, SaraConfig};
use crate::train::{train_category, BackboneChoice, ExperimentConfig, TrainOutputs};

type DynExtractor = Box<dyn FeatureExtractor + Send>;

#[derive(Debug, Parser)]
#[command(
    name = "boxrl",
    version = concat!(env!("CARGO_PKG_VERSION"), " (checkpoint format 1)"),
    about = "Saliency-initialised deep Q-learning object localisation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a class-specific agent
    Train(TrainArgs),
    /// Compute per-category AP and mAP from trained checkpoints
    Evaluate(EvaluateArgs),
    /// Localise one object in one image
    Detect(DetectArgs),
    /// Average IoU of the saliency initial box over thresholds and iterations
    Sweep(SweepArgs),
    /// Run one greedy episode and write its action log and/or frames
    RenderEpisode(RenderArgs),
    /// Write a synthetic planted-rectangle dataset in VOC layout
    ExportSynthetic(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backbone {
    Builtin,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Render {
    None,
    Log,
    Frames,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// VOC-layout dataset root
    #[arg(long)]
    data: Option<PathBuf>,
    /// split file name under ImageSets/Main
    #[arg(long, default_value = "trainval")]
    split: String,
    /// use N in-memory synthetic images instead of --data
    #[arg(long, conflicts_with = "data")]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    synthetic_seed: u64,
}

#[derive(Debug, Args)]
struct BackboneArgs {
    #[arg(long, value_enum)]
    backbone: Option<Backbone>,
    /// host:port of the feature service, required with --backbone external
    #[arg(long)]
    feature_service: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    category: Option<String>,
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    exploration: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_episodes: Option<usize>,
    /// SaRa initial box during training
    #[arg(long, value_enum)]
    sara: Option<Switch>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backbone: BackboneArgs,
    /// output directory for checkpoints, metrics and logs
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    render: Render,
    /// resume snapshot written by an earlier run
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoints: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// restrict to these categories (comma separated)
    #[arg(long, value_delimiter = ',')]
    categories: Vec<String>,
    /// pick checkpoints of this agent when several exist
    #[arg(long)]
    agent: Option<String>,
    /// environment parameters (the [env] table of an experiment config)
    #[arg(long)]
    config: Option<PathBuf>,
    /// SaRa initial box at inference (default: `sara_inference` of --config, else off)
    #[arg(long, value_enum)]
    sara: Option<Switch>,
    /// evaluate on every image, not only images containing the category
    #[arg(long)]
    all_images: bool,
    #[command(flatten)]
    backbone: BackboneArgs,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// AP CSV path (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines dump of every detection
    #[arg(long)]
    detections: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// category label for the output (defaults to the checkpoint's)
    #[arg(long)]
    category: Option<String>,
    #[arg(long, value_enum)]
    sara: Option<Switch>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    backbone: BackboneArgs,
    #[arg(long, value_enum, default_value = "none")]
    render: Render,
    #[arg(long, default_value = ".")]
    render_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// threshold list, either `a,b,c` or `start..end:step`
    #[arg(long, default_value = "0.1..1.0:0.1")]
    thresholds: String,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    iterations: Vec<usize>,
    /// only images and boxes of this category
    #[arg(long)]
    category: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// VOC annotation of the image, for IoU/recall in the log
    #[arg(long)]
    annotation: Option<PathBuf>,
    #[arg(long)]
    category: Option<String>,
    #[arg(long, value_enum)]
    sara: Option<Switch>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    backbone: BackboneArgs,
    #[arg(long, value_enum, default_value = "frames")]
    render: Render,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "trainval")]
    split: String,
    #[arg(long, default_value_t = 64)]
    min_side: u32,
    #[arg(long, default_value_t = 128)]
    max_side: u32,
}

/// Failure with a one-line message. Usage errors exit with 2, all others 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

fn runtime(context: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::RenderEpisode(a) => cmd_render(a),
        Command::ExportSynthetic(a) => cmd_export(a),
    }
}

fn load_samples(d: &DataArgs, category: Option<&str>) -> Result<Vec<Sample>, CliError> {
    match (&d.data, d.synthetic) {
        (_, Some(n)) => {
            if n == 0 {
                return Err(usage("--synthetic needs at least one image"));
            }
            Ok(generate_synthetic(n, SyntheticConfig::default(), d.synthetic_seed))
        }
        (Some(root), None) => {
            let index = build_index(root, &d.split).map_err(|e| runtime(format!("--data {}", root.display()), e))?;
            index
                .load_samples(category)
                .map_err(|e| runtime(format!("--data {}", root.display()), e))
        }
        (None, None) => Err(usage("one of --data or --synthetic is required")),
    }
}

fn open_extractor(b: &BackboneArgs, fallback: BackboneChoice, service: Option<&str>) -> Result<DynExtractor, CliError> {
    let choice = match b.backbone {
        Some(Backbone::Builtin) => BackboneChoice::Builtin,
        Some(Backbone::External) => BackboneChoice::External,
        None => fallback,
    };
    match choice {
        BackboneChoice::Builtin => Ok(Box::new(BuiltinExtractor::new())),
        BackboneChoice::External => {
            let addr = b
                .feature_service
                .as_deref()
                .or(service)
                .ok_or_else(|| usage("--backbone external requires --feature-service host:port"))?;
            let ext = ExternalExtractor::connect(addr, None).map_err(|e| runtime(format!("--feature-service {addr}"), e))?;
            eprintln!(
                "backbone {} ({}), state size {}",
                ext.descriptor().name,
                ext.descriptor().dim,
                ext.descriptor().state_dim()
            );
            Ok(Box::new(ext))
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| runtime("--config", e)),
        None => Ok(ExperimentConfig::default()),
    }
}

fn create_dir(dir: &Path, flag: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{flag} {}", dir.display()), e))
}

fn create_file(path: &Path, flag: &str) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{flag} {}", path.display()), e))
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(c) = a.category {
        config.category = c;
    }
    if config.category.is_empty() {
        return Err(usage("--category is required (or `category` in --config)"));
    }
    if let Some(v) = &a.agent {
        config.variant = v.parse::<AgentVariant>().map_err(|e| usage(format!("--agent: {e}")))?;
    }
    if let Some(x) = &a.exploration {
        config.exploration = x.parse::<ExplorationMode>().map_err(|e| usage(format!("--exploration: {e}")))?;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if a.max_episodes.is_some() {
        config.max_episodes = a.max_episodes;
    }
    if let Some(s) = a.sara {
        config.sara_trained = s.on();
    }
    if let Some(Backbone::External) = a.backbone.backbone {
        config.backbone = BackboneChoice::External;
    }
    if let Some(fs) = &a.backbone.feature_service {
        config.feature_service = Some(fs.clone());
    }
    let samples = load_samples(&a.data, Some(&config.category))?;
    let extractor = open_extractor(&a.backbone, config.backbone, config.feature_service.as_deref())?;
    create_dir(&a.out, "--out")?;
    let stem = format!("{}_{}", config.category, config.variant);
    let outputs = TrainOutputs {
        checkpoint_dir: Some(a.out.clone()),
        metrics_csv: Some(a.out.join(format!("{stem}_metrics.csv"))),
        action_log: match a.render {
            Render::None => None,
            _ => Some(a.out.join(format!("{stem}_actions.jsonl"))),
        },
        frames_dir: match a.render {
            Render::Frames => {
                let d = a.out.join(format!("{stem}_frames"));
                create_dir(&d, "--render frames")?;
                Some(d)
            }
            _ => None,
        },
        resume_from: a.resume.clone(),
    };
    let report = train_category(&samples, &config, extractor, &outputs).map_err(|e| runtime("train", e))?;
    if let Some(p) = &report.final_checkpoint {
        println!("{}", p.display());
    }
    Ok(())
}

/// `{category}_{variant}_ep{N}.qnet`
fn parse_checkpoint_name(name: &str) -> Option<(String, String, usize)> {
    let stem = name.strip_suffix(".qnet")?;
    let (rest, epoch) = stem.rsplit_once("_ep")?;
    let epoch = epoch.parse().ok()?;
    let (category, variant) = rest.rsplit_once('_')?;
    Some((category.to_string(), variant.to_string(), epoch))
}

fn latest_checkpoint(dir: &Path, category: &str, agent: Option<&str>) -> Result<Option<PathBuf>, CliError> {
    let mut found: Vec<(String, usize, PathBuf)> = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| runtime(format!("--checkpoints {}", dir.display()), e))?;
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some((c, v, ep)) = parse_checkpoint_name(&name) {
            if c == category && agent.map_or(true, |a| a == v) {
                found.push((v, ep, entry.path()));
            }
        }
    }
    let mut variants: Vec<&str> = found.iter().map(|(v, _, _)| v.as_str()).collect();
    variants.sort_unstable();
    variants.dedup();
    if variants.len() > 1 {
        return Err(usage(format!(
            "--checkpoints holds several agents for `{category}` ({}); choose one with --agent",
            variants.join(", ")
        )));
    }
    Ok(found.into_iter().max_by_key(|(_, ep, _)| *ep).map(|(_, _, p)| p))
}

fn env_for_inference(config: Option<&Path>, sara: Option<Switch>) -> Result<EnvConfig, CliError> {
    let c = load_config(config)?;
    Ok(EnvConfig {
        use_sara_initial_box: sara.map_or(c.sara_inference, Switch::on),
        ..c.env
    })
}

fn load_checked(path: &Path, backbone: &BackboneDescriptor) -> Result<(QNetwork<f32>, CheckpointHeader), CliError> {
    let (net, header) = qnet::load(path).map_err(|e| runtime(format!("--checkpoint {}", path.display()), e))?;
    if &header.backbone != backbone {
        return Err(runtime(
            format!("--checkpoint {}", path.display()),
            format!(
                "trained with backbone {} ({}), configured {} ({})",
                header.backbone.name, header.backbone.dim, backbone.name, backbone.dim
            ),
        ));
    }
    Ok((net, header))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let env_config = env_for_inference(a.config.as_deref(), a.sara)?;
    let samples = load_samples(&a.data, None)?;
    let mut categories: Vec<String> = if a.categories.is_empty() {
        let mut c: Vec<String> = samples
            .iter()
            .flat_map(|s| s.annotation.objects.iter().map(|o| o.category.clone()))
            .collect();
        c.sort();
        c.dedup();
        c
    } else {
        a.categories.clone()
    };
    if a.categories.is_empty() {
        // keep VOC's conventional order when evaluating a VOC set
        categories.sort_by_key(|c| data::VOC_CATEGORIES.iter().position(|v| v == c).unwrap_or(usize::MAX));
    }
    let probe = open_extractor(&a.backbone, BackboneChoice::Builtin, None)?;
    let backbone = probe.descriptor().clone();
    drop(probe);

    let mut rows = Vec::new();
    let mut detections: Vec<Detection> = Vec::new();
    for category in &categories {
        let Some(path) = latest_checkpoint(&a.checkpoints, category, a.agent.as_deref())? else {
            if a.categories.is_empty() {
                continue;
            }
            return Err(runtime(
                format!("--checkpoints {}", a.checkpoints.display()),
                format!("no checkpoint for `{category}`"),
            ));
        };
        let (net, _) = load_checked(&path, &backbone)?;
        let make_env = || -> Result<Environment<DynExtractor>, EvalError> {
            let ext = open_extractor(&a.backbone, BackboneChoice::Builtin, None)
                .map_err(|e| EvalError::Worker(e.to_string()))?;
            Ok(Environment::new(env_config.clone(), ext)?)
        };
        let result = evaluate_category(make_env, &net, &samples, category, a.all_images, a.jobs)
            .map_err(|e| runtime(format!("evaluate {category}"), e))?;
        detections.extend(result.runs.into_iter().map(|r| r.detection));
        rows.push((category.clone(), result.ap));
    }
    if rows.is_empty() {
        return Err(runtime(
            format!("--checkpoints {}", a.checkpoints.display()),
            "no checkpoint matches any category in the data",
        ));
    }
    match &a.out {
        Some(p) => {
            let mut w = create_file(p, "--out")?;
            write_ap_csv(&rows, &mut w).and_then(|_| w.flush()).map_err(|e| runtime("--out", e))?;
        }
        None => write_ap_csv(&rows, std::io::stdout().lock()).map_err(|e| runtime("stdout", e))?,
    }
    if let Some(p) = &a.detections {
        let mut w = create_file(p, "--detections")?;
        write_detections_jsonl(&detections, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| runtime("--detections", e))?;
    }
    Ok(())
}

fn single_sample(image: &Path, annotation: Option<&Path>) -> Result<Sample, CliError> {
    let img = load_rgb(image).map_err(|e| runtime("--image", e))?;
    let annotation = match annotation {
        Some(p) => {
            let xml = fs::read_to_string(p).map_err(|e| runtime(format!("--annotation {}", p.display()), e))?;
            data::parse_voc_annotation(&xml).map_err(|e| runtime(format!("--annotation {}", p.display()), e))?
        }
        None => AnnotatedImage {
            id: image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            path: image.to_path_buf(),
            width: img.width(),
            height: img.height(),
            objects: Vec::new(),
        },
    };
    Ok(Sample { annotation, image: img })
}

fn run_single(
    checkpoint: &Path,
    sample: &Sample,
    category: Option<&str>,
    env_config: EnvConfig,
    backbone: &BackboneArgs,
    render: Render,
    render_dir: &Path,
) -> Result<eval::DetectionRun, CliError> {
    let ext = open_extractor(backbone, BackboneChoice::Builtin, None)?;
    let (net, header) = load_checked(checkpoint, ext.descriptor())?;
    let category = category.unwrap_or(&header.metadata.category).to_string();
    let mut env = Environment::new(env_config, ext).map_err(|e| runtime("environment", e))?;
    if render == Render::Frames {
        create_dir(render_dir, "--out")?;
        return render_frames(&mut env, &net, sample, &category, render_dir);
    }
    let run = detect(&mut env, &net, sample, &category).map_err(|e| runtime("detect", e))?;
    if render == Render::Log {
        create_dir(render_dir, "--out")?;
        write_log(&run.log, &render_dir.join("actions.jsonl"))?;
    }
    Ok(run)
}

fn write_log(records: &[LogRecord], path: &Path) -> Result<(), CliError> {
    let mut logger = ActionLogger::new(create_file(path, "--render log")?);
    for r in records {
        logger.log(r).map_err(|e| runtime(path.display(), e))?;
    }
    logger.into_inner().flush().map_err(|e| runtime(path.display(), e))
}

/// Greedy episode that also writes a PNG per step and the action log.
fn render_frames(
    env: &mut Environment<DynExtractor>,
    net: &QNetwork<f32>,
    sample: &Sample,
    category: &str,
    dir: &Path,
) -> Result<eval::DetectionRun, CliError> {
    let run = detect(env, net, sample, category).map_err(|e| runtime("detect", e))?;
    let gts = sample.annotation.boxes_for(category);
    let (mut ep, _) = env
        .reset(&sample.image, &gts, EnvMode::Eval)
        .map_err(|e| runtime("render", e))?;
    save_frame(&ep, 0, dir).map_err(|e| runtime("render", e))?;
    for r in &run.log {
        env.step(&mut ep, r.action).map_err(|e| runtime("render", e))?;
        save_frame(&ep, 0, dir).map_err(|e| runtime("render", e))?;
    }
    write_log(&run.log, &dir.join("actions.jsonl"))?;
    Ok(run)
}

fn cmd_detect(a: DetectArgs) -> Result<(), CliError> {
    let env_config = env_for_inference(a.config.as_deref(), a.sara)?;
    let sample = single_sample(&a.image, None)?;
    let run = run_single(
        &a.checkpoint,
        &sample,
        a.category.as_deref(),
        env_config,
        &a.backbone,
        a.render,
        &a.render_dir,
    )?;
    let line = serde_json::to_string(&run.detection).map_err(|e| runtime("detect", e))?;
    println!("{line}");
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<(), CliError> {
    if a.render == Render::None {
        return Err(usage("render-episode needs --render log or --render frames"));
    }
    let env_config = env_for_inference(a.config.as_deref(), a.sara)?;
    let sample = single_sample(&a.image, a.annotation.as_deref())?;
    let run = run_single(
        &a.checkpoint,
        &sample,
        a.category.as_deref(),
        env_config,
        &a.backbone,
        a.render,
        &a.out,
    )?;
    let last = run.log.last().map(|r| r.action).unwrap_or(Action::Trigger);
    println!(
        "{} steps, final action {}, iou {:.6}, written to {}",
        run.steps,
        last,
        run.final_iou,
        a.out.display()
    );
    Ok(())
}

/// `0.1,0.3` or `0.1..1.0:0.1` (inclusive end).
fn parse_thresholds(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || usage(format!("--thresholds `{text}`: expected `a,b,c` or `start..end:step`"));
    let values = if let Some((range, step)) = text.split_once(':') {
        let (start, end) = range.split_once("..").ok_or_else(bad)?;
        let (start, end, step): (f64, f64, f64) = (
            start.trim().parse().map_err(|_| bad())?,
            end.trim().parse().map_err(|_| bad())?,
            step.trim().parse().map_err(|_| bad())?,
        );
        if step <= 0.0 || end < start {
            return Err(bad());
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((start + step * i as f64) * 1e9).round() / 1e9)
            .collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(usage(format!("--thresholds `{text}`: every threshold must lie in (0, 1]")));
    }
    Ok(values)
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    let thresholds = parse_thresholds(&a.thresholds)?;
    if a.iterations.iter().any(|&i| i == 0) {
        return Err(usage("--iterations values must be at least 1"));
    }
    let samples = load_samples(&a.data, a.category.as_deref())?;
    let dataset: Vec<_> = samples
        .iter()
        .map(|s| {
            let boxes = match &a.category {
                Some(c) => s.annotation.boxes_for(c),
                None => s.annotation.objects.iter().map(|o| o.bbox).collect(),
            };
            (&s.image, boxes)
        })
        .filter(|(_, b)| !b.is_empty())
        .collect();
    if dataset.is_empty() {
        return Err(runtime("sweep", "no annotated images to sweep over"));
    }
    let rows = sweep_thresholds(&dataset, &SaraConfig::default(), &thresholds, &a.iterations)
        .map_err(|e| runtime("sweep", e))?;
    match &a.out {
        Some(p) => {
            let mut w = create_file(p, "--out")?;
            write_sweep_csv(&rows, &mut w).and_then(|_| w.flush()).map_err(|e| runtime("--out", e))
        }
        None => write_sweep_csv(&rows, std::io::stdout().lock()).map_err(|e| runtime("stdout", e)),
    }
}

fn cmd_export(a: ExportArgs) -> Result<(), CliError> {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if a.min_side < 16 || a.max_side < a.min_side {
        return Err(usage("--min-side must be >= 16 and <= --max-side"));
    }
    let samples = generate_synthetic(
        a.count,
        SyntheticConfig {
            min_side: a.min_side,
            max_side: a.max_side,
        },
        a.seed,
    );
    export_voc(&samples, &a.out, &a.split).map_err(|e| runtime(format!("--out {}", a.out.display()), e))?;
    println!("{} images written to {}", samples.len(), a.out.display());
    Ok(())
}
