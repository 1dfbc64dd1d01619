//! Argument parsing and subcommand dispatch for the `sobelkey` binary.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use sobelkey::descriptor::{sample_descriptors, DesNet, DesNetConfig, DescriptorSet};
use sobelkey::detector::{detect, DetectConfig, KeypointSet, SobelNet, SobelNetConfig};
use sobelkey::eval::{
    evaluate, load_pair_dir, mutual_nn_match, synth_benchmark, write_pair_dir, Assignment, BenchmarkMode,
    EvalConfig, MatchList,
};
use sobelkey::image::io::{read_gray, write_pgm};
use sobelkey::synth::synth_dataset;
use sobelkey::train::{
    load_dataset, train_descriptor, train_detector, Checkpoint, Event, Stage, TrainConfig, TrainOutcome,
};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "sobelkey", version, about = "Sobel-fronted keypoint detection, description and evaluation")]
pub struct Cli {
    /// Worker threads for the library (defaults to all cores).
    #[arg(long, global = true, env = "SOBELKEY_THREADS")]
    pub threads: Option<usize>,
    /// Single-threaded, bitwise reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the SobelNet detector.
    TrainDetector(TrainArgs),
    /// Train the DesNet descriptor against a frozen detector (needs `detector=`).
    TrainDescriptor(TrainArgs),
    /// Detect keypoints in an image and write a keypoint file.
    Detect(DetectArgs),
    /// Compute descriptors at the keypoints of a keypoint file.
    Describe(DescribeArgs),
    /// Mutual nearest-neighbour matching of two descriptor files.
    Match(MatchArgs),
    /// Score a detector (and optionally a descriptor) on image pairs.
    Eval(EvalArgs),
    /// Print the multiplication count of a network at an input size.
    Flops(FlopsArgs),
    /// Write synthetic training images or benchmark pairs.
    SynthData(SynthArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Config file of `key=value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (`key=value`); repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for `seed=<n>`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output checkpoint path.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Checkpoint to resume from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Per-step loss log (CSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Print a progress line every N steps (0 silences them).
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Args, Debug)]
pub struct DetectorOpts {
    /// Score threshold as a fraction of the map maximum.
    #[arg(long, default_value_t = 0.1)]
    pub ratio: f32,
    /// NMS radius in pixels.
    #[arg(long, default_value_t = DetectConfig::HPATCHES_NMS_RADIUS)]
    pub nms: usize,
    /// Keypoint budget per image.
    #[arg(long, default_value_t = 5000)]
    pub max_kpts: usize,
}

impl DetectorOpts {
    fn config(&self) -> DetectConfig {
        DetectConfig {
            ratio: self.ratio,
            nms_radius: self.nms,
            max_kpts: self.max_kpts,
        }
    }
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Input image (PGM, PPM or PNG).
    pub image: PathBuf,
    /// Detector checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Output keypoint file.
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub detector: DetectorOpts,
}

#[derive(Args, Debug)]
pub struct DescribeArgs {
    /// Input image (PGM, PPM or PNG).
    pub image: PathBuf,
    /// Keypoint file of the image.
    #[arg(long)]
    pub kpts: PathBuf,
    /// Descriptor checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Output descriptor file.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    /// Descriptors of image A.
    pub desc_a: PathBuf,
    /// Descriptors of image B.
    pub desc_b: PathBuf,
    /// Output match file.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchMode {
    Viewpoint,
    Illumination,
    Mixed,
}

impl From<BenchMode> for BenchmarkMode {
    fn from(m: BenchMode) -> Self {
        match m {
            BenchMode::Viewpoint => BenchmarkMode::Viewpoint,
            BenchMode::Illumination => BenchmarkMode::Illumination,
            BenchMode::Mixed => BenchmarkMode::Mixed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AssignmentArg {
    Optimal,
    Greedy,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Pair directory, or `synth` for the generated benchmark.
    #[arg(long)]
    pub pairs: String,
    /// Number of synthetic pairs.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Seed of the synthetic benchmark.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side of synthetic images.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Kinds of synthetic pairs.
    #[arg(long, value_enum, default_value_t = BenchMode::Mixed)]
    pub mode: BenchMode,
    /// Detector checkpoint.
    #[arg(long)]
    pub detector: PathBuf,
    /// Descriptor checkpoint; without it only repeatability is scored.
    #[arg(long)]
    pub descriptor: Option<PathBuf>,
    #[command(flatten)]
    pub opts: DetectorOpts,
    /// Correspondence tolerance in pixels.
    #[arg(long, default_value_t = 5.0)]
    pub tol: f64,
    /// One-to-one assignment rule for possible matches.
    #[arg(long, value_enum, default_value_t = AssignmentArg::Optimal)]
    pub assignment: AssignmentArg,
    /// Write the CSV report here instead of printing it.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Net {
    Sobelnet,
    Desnet,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    /// Network to count.
    #[arg(long, value_enum)]
    pub net: Net,
    /// Input size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size)]
    pub size: (usize, usize),
    /// Also print the per-layer breakdown.
    #[arg(long)]
    pub layers: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of images (or pairs with --pairs).
    #[arg(short, long)]
    pub n: usize,
    /// Output directory.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Image side in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    /// Generator seed.
    pub seed: u64,
    /// Write benchmark pairs in pair-directory layout instead of single images.
    #[arg(long)]
    pub pairs: bool,
    /// Kinds of pairs written with --pairs.
    #[arg(long, value_enum, default_value_t = BenchMode::Mixed)]
    pub mode: BenchMode,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width `{w}`"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height `{h}`"))?;
    if w == 0 || h == 0 {
        return Err(format!("size must be positive, got `{s}`"));
    }
    Ok((w, h))
}

/// Invocation problems that are the caller's fault rather than the data's.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<sobelkey::Error>() {
            return match e {
                e if e.is_numeric() => EXIT_NUMERIC,
                sobelkey::Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

pub fn command() -> clap::Command {
    Cli::command()
}

/// Parses `argv` and runs; every failure is reported on stderr.
pub fn main_with<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The cause chain on one line, skipping causes already spelled out by their parent.
pub fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !prev.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        prev = text;
    }
    out
}

fn echo(pairs: &[(String, String)]) {
    for (k, v) in pairs {
        eprintln!("# {k}={v}");
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic { 1 } else { cli.threads.unwrap_or(0) };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .or_else(|e| if threads == 0 { Ok(()) } else { Err(e) })
        .context("configuring the thread pool")?;
    let common = vec![
        ("threads".to_string(), rayon::current_num_threads().to_string()),
        ("deterministic".to_string(), cli.deterministic.to_string()),
    ];
    match cli.command {
        Command::TrainDetector(a) => train(Stage::Detector, a, common),
        Command::TrainDescriptor(a) => train(Stage::Descriptor, a, common),
        Command::Detect(a) => cmd_detect(a, common),
        Command::Describe(a) => cmd_describe(a, common),
        Command::Match(a) => cmd_match(a, common),
        Command::Eval(a) => cmd_eval(a, common),
        Command::Flops(a) => cmd_flops(a, common),
        Command::SynthData(a) => cmd_synth(a, common),
    }
}

fn resolve_train_config(stage: Stage, a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::for_stage(stage);
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply(&text)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| usage(format!("--set {kv}: {e}")))?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if cfg.stage != stage {
        return Err(usage(format!(
            "config selects stage `{}` but the command trains the {}",
            cfg.stage.name(),
            stage.name()
        )));
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn train(stage: Stage, a: TrainArgs, common: Vec<(String, String)>) -> Result<()> {
    let cfg = resolve_train_config(stage, &a)?;
    echo(&common);
    for line in cfg.to_text().lines() {
        eprintln!("# {line}");
    }
    let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let images = load_dataset(&cfg.dataset, cfg.seed).context("loading the training images")?;
    let every = a.log_every;
    let mut monitor = |e: Event<'_>| match e {
        Event::Step(r) if every > 0 && (r.step % every == 0 || r.step == 1) => {
            let loss = r.total().map_or("-".to_string(), |l| format!("{l:.6}"));
            eprintln!("step {} loss {loss} ({:.0} ms)", r.step, r.wall_ms);
        }
        Event::Step(_) => {}
        Event::Eval { step, summary } => eprintln!(
            "eval {step}: rep {:.2} kpts {:.1}{}",
            summary.rep,
            summary.kpts,
            summary.mma.map_or(String::new(), |m| format!(" mma {m:.2}"))
        ),
        Event::Warning(w) => eprintln!("warning: {w}"),
    };
    let outcome: TrainOutcome = match stage {
        Stage::Detector => train_detector(&cfg, &images, resume.as_ref(), &mut monitor)?,
        Stage::Descriptor => {
            let path = cfg
                .detector
                .clone()
                .ok_or_else(|| usage("train-descriptor needs a frozen detector: set `detector=<checkpoint>`"))?;
            let det = load_checkpoint(&path)?
                .sobelnet()
                .with_context(|| format!("checkpoint {}", path.display()))?;
            train_descriptor(&cfg, &images, &det, resume.as_ref(), &mut monitor)?
        }
    };
    outcome
        .checkpoint
        .save(&a.output)
        .with_context(|| format!("saving checkpoint {}", a.output.display()))?;
    if let Some(log) = &a.log {
        outcome.write_log(log)?;
    }
    eprintln!(
        "wrote {} (step {}, {} warnings)",
        a.output.display(),
        outcome.checkpoint.step,
        outcome.warnings.len()
    );
    Ok(())
}

fn read_image(path: &Path) -> Result<sobelkey::image::GrayImage> {
    Ok(read_gray(path)?)
}

fn cmd_detect(a: DetectArgs, mut common: Vec<(String, String)>) -> Result<()> {
    let cfg = a.detector.config();
    common.extend([
        ("ckpt".into(), a.ckpt.display().to_string()),
        ("ratio".into(), cfg.ratio.to_string()),
        ("nms_radius".into(), cfg.nms_radius.to_string()),
        ("max_kpts".into(), cfg.max_kpts.to_string()),
    ]);
    echo(&common);
    let net = load_checkpoint(&a.ckpt)?.sobelnet()?;
    let img = read_image(&a.image)?;
    let kpts = detect(&img, &net, &cfg).with_context(|| format!("detecting on {}", a.image.display()))?;
    kpts.write(&a.output)?;
    eprintln!("{} keypoints -> {}", kpts.len(), a.output.display());
    Ok(())
}

fn cmd_describe(a: DescribeArgs, mut common: Vec<(String, String)>) -> Result<()> {
    common.push(("ckpt".into(), a.ckpt.display().to_string()));
    echo(&common);
    let net = load_checkpoint(&a.ckpt)?.desnet()?;
    let img = read_image(&a.image)?;
    let kpts = KeypointSet::read(&a.kpts)?;
    if (kpts.width, kpts.height) != (img.width(), img.height()) {
        bail!(
            "{}: keypoints are for a {}x{} image but {} is {}x{}",
            a.kpts.display(),
            kpts.width,
            kpts.height,
            a.image.display(),
            img.width(),
            img.height()
        );
    }
    let map = net.descriptor_map(&img)?;
    let set = sample_descriptors(&map, &kpts.coords())?;
    set.write(&a.output)?;
    eprintln!("{} descriptors of dim {} -> {}", set.len(), set.dim, a.output.display());
    Ok(())
}

fn cmd_match(a: MatchArgs, mut common: Vec<(String, String)>) -> Result<()> {
    common.push(("matcher".into(), "mutual-nn".into()));
    echo(&common);
    let da = DescriptorSet::read(&a.desc_a)?;
    let db = DescriptorSet::read(&a.desc_b)?;
    if da.dim != db.dim {
        bail!(
            "descriptor dims differ: {} has {}, {} has {}",
            a.desc_a.display(),
            da.dim,
            a.desc_b.display(),
            db.dim
        );
    }
    let list = MatchList {
        n_a: da.len(),
        n_b: db.len(),
        matches: mutual_nn_match(&da, &db),
    };
    list.write(&a.output)?;
    eprintln!("{} matches -> {}", list.matches.len(), a.output.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs, mut common: Vec<(String, String)>) -> Result<()> {
    let cfg = EvalConfig {
        detect: a.opts.config(),
        tol: a.tol,
        assignment: match a.assignment {
            AssignmentArg::Optimal => Assignment::Optimal,
            AssignmentArg::Greedy => Assignment::Greedy,
        },
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let pairs = if a.pairs == "synth" {
        if a.n == 0 {
            return Err(usage("--n must be at least 1"));
        }
        common.push((
            "pairs".into(),
            format!("synth n={} size={} mode={:?} seed={}", a.n, a.size, a.mode, a.seed),
        ));
        synth_benchmark(a.n, a.size, a.mode.into(), a.seed)?
    } else {
        common.push(("pairs".into(), a.pairs.clone()));
        load_pair_dir(&a.pairs)?
    };
    common.push(("detector".into(), a.detector.display().to_string()));
    if let Some(d) = &a.descriptor {
        common.push(("descriptor".into(), d.display().to_string()));
    }
    common.extend(cfg.echo());
    echo(&common);
    let det = load_checkpoint(&a.detector)?.sobelnet()?;
    let desc = match &a.descriptor {
        Some(p) => Some(load_checkpoint(p)?.desnet()?),
        None => None,
    };
    let report = evaluate(&det, desc.as_ref(), &pairs, &cfg)?;
    match &a.output {
        Some(path) => {
            std::fs::write(path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            print!("{}", report.to_table());
        }
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn cmd_flops(a: FlopsArgs, mut common: Vec<(String, String)>) -> Result<()> {
    let (w, h) = a.size;
    common.extend([
        ("net".into(), format!("{:?}", a.net).to_lowercase()),
        ("size".into(), format!("{w}x{h}")),
    ]);
    echo(&common);
    let (total, layers) = match a.net {
        Net::Sobelnet => {
            let c = SobelNetConfig::default();
            (SobelNet::count_multiplications(&c, w, h), SobelNet::multiplication_breakdown(&c, w, h))
        }
        Net::Desnet => {
            let c = DesNetConfig::default();
            (DesNet::count_multiplications(&c, w, h), DesNet::multiplication_breakdown(&c, w, h))
        }
    };
    if a.layers {
        for l in &layers {
            eprintln!("{l:?}");
        }
    }
    println!("{total}");
    Ok(())
}

fn cmd_synth(a: SynthArgs, mut common: Vec<(String, String)>) -> Result<()> {
    if a.n == 0 {
        return Err(usage("-n must be at least 1"));
    }
    common.extend([
        ("n".into(), a.n.to_string()),
        ("size".into(), a.size.to_string()),
        ("seed".into(), a.seed.to_string()),
        ("pairs".into(), a.pairs.to_string()),
    ]);
    echo(&common);
    if a.pairs {
        let pairs = synth_benchmark(a.n, a.size, a.mode.into(), a.seed)?;
        write_pair_dir(&a.output, &pairs)?;
    } else {
        let images = synth_dataset(a.n, a.size, a.size, a.seed)?;
        std::fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
        for (k, img) in images.iter().enumerate() {
            write_pgm(a.output.join(format!("{k:05}.pgm")), img)?;
        }
    }
    eprintln!("wrote {} {} to {}", a.n, if a.pairs { "pairs" } else { "images" }, a.output.display());
    Ok(())
}
