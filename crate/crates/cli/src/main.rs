//! `motion-wsod`: flow utilities, motion-driven selection, synthetic data,
//! gradient checks, toy training, evaluation and ablation.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors.

mod dataset;
mod defaults;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{ArgGroup, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use motion_wsod::ablation::{run_ablation, AblationConfig};
use motion_wsod::camnorm::{cluster_corners, corner_stats, subtract_background, CornerFraction};
use motion_wsod::eval::{evaluate, EvalItem};
use motion_wsod::flowio::{
    colorize, magnitude, normalize_magnitudes, read_flow_file_with, write_flow_file, write_gray_png, write_rgb_png,
    FlowField, NonFinitePolicy,
};
use motion_wsod::gradcheck::{check_contrastive, check_milhead, check_objective, report_table};
use motion_wsod::selection::{select_dataset, SelectionConfig, SelectionInput};
use motion_wsod::synth::BenchmarkConfig;
use motion_wsod::trainer::{train, Model, TrainConfig};
use motion_wsod::BBox;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum CliError {
    Clap(clap::Error),
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "motion-wsod",
    version,
    about = "Motion-augmented weakly-supervised detection toolkit"
)]
struct Cli {
    /// File of `key = value` lines supplying defaults for flags not given
    /// on the command line
    #[arg(long, global = true, value_name = "FILE")]
    defaults: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Optical flow utilities
    #[command(subcommand)]
    Flow(FlowCmd),
    /// Motion-driven training-image selection
    Select(SelectArgs),
    /// Synthetic benchmark data
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Train on a generated synthetic benchmark and report CorLoc
    TrainToy(TrainToyArgs),
    /// Run the motion / normalization / selection toggle grid
    Ablate(AblateArgs),
    /// Finite-difference checks of the analytic gradients
    Gradcheck(GradcheckArgs),
    /// CorLoc of a trained model on a generated dataset (RGB features only)
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct ReadOpts {
    /// Replace NaN/Inf flow components with 0 instead of failing
    #[arg(long)]
    zero_fill_nonfinite: bool,
}

impl ReadOpts {
    fn read(&self, path: &Path) -> CliResult<FlowField> {
        let policy = if self.zero_fill_nonfinite {
            NonFinitePolicy::ZeroFill
        } else {
            NonFinitePolicy::Reject
        };
        let (flow, filled) =
            read_flow_file_with(path, policy).with_context(|| format!("reading {}", path.display()))?;
        if filled > 0 {
            eprintln!(
                "warning: {}: replaced {filled} non-finite values with 0",
                path.display()
            );
        }
        Ok(flow)
    }
}

#[derive(Subcommand, Debug)]
enum FlowCmd {
    /// Color-code a .flo file as an RGB PNG (zero flow is white)
    Colorize {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        read: ReadOpts,
    },
    /// Write the max-normalized magnitude as a grayscale PNG
    Magnitude {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        read: ReadOpts,
    },
    /// Estimate camera motion from the corners and subtract it
    Normalize {
        input: PathBuf,
        output: PathBuf,
        /// Corner window size as a fraction of each dimension, in (0, 0.5]
        #[arg(long, default_value_t = 0.1, value_parser = parse_corner_fraction)]
        corner_fraction: f64,
        /// Write corner statistics and the background estimate as JSON
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
        #[command(flatten)]
        read: ReadOpts,
    },
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Directory containing `<image_id>.flo` files
    #[arg(long)]
    flows: PathBuf,
    /// JSON array of {"image_id": ..., "box": [x_min, y_min, x_max, y_max]}
    #[arg(long)]
    boxes: PathBuf,
    /// Minimum mean motion inside the box
    #[arg(long, default_value_t = SelectionConfig::DEFAULT_M)]
    m: f64,
    /// Minimum inside/outside motion ratio
    #[arg(long, default_value_t = SelectionConfig::DEFAULT_D)]
    d: f64,
    /// Output manifest, one JSON record per line in input order
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    read: ReadOpts,
}

#[derive(Subcommand, Debug)]
enum SynthCmd {
    /// Generate train/eval splits: flows, proposal features, labels manifest
    Generate {
        /// Benchmark config JSON; omitted fields take their defaults
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generate degraded flow (blur and failed estimates)
        #[arg(long)]
        degraded: bool,
    },
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ToyConfig {
    benchmark: BenchmarkConfig,
    train: TrainConfig,
}

#[derive(Args, Debug)]
struct TrainToyArgs {
    /// JSON with optional `benchmark` and `train` sections
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training report JSON
    #[arg(long)]
    out: PathBuf,
    /// Also write the learned model as JSON
    #[arg(long, value_name = "FILE")]
    model_out: Option<PathBuf>,
    /// Overrides the config seed (data and training)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Enable the motion branch
    #[arg(long)]
    motion: bool,
    /// Camera-normalize flow for the motion branch
    #[arg(long)]
    normalize: bool,
    /// Filter training images by motion
    #[arg(long)]
    selection: bool,
    /// Use degraded flow
    #[arg(long)]
    degraded: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Markdown table output
    #[arg(long)]
    out: PathBuf,
    /// Ablation config JSON (`seeds`, `benchmark`, `train`, `settings`)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use seeds 0..N instead of the configured list
    #[arg(long)]
    seeds: Option<u64>,
    /// Also write the full report as JSON
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Module {
    Milhead,
    Contrastive,
    Trainer,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("which").required(true).args(["module", "all"])))]
struct GradcheckArgs {
    #[arg(long, value_enum)]
    module: Option<Module>,
    /// Run every suite
    #[arg(long)]
    all: bool,
    /// Random instances per suite
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    instances: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Model JSON written by `train-toy --model-out`
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory written by `synth generate`
    #[arg(long)]
    data: PathBuf,
    /// Split to evaluate
    #[arg(long, default_value = "eval")]
    split: String,
    /// Report JSON (standard output when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_corner_fraction(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|e| format!("{e}"))?;
    CornerFraction::new(f).map(|c| c.get()).map_err(|e| e.to_string())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut s = serde_json::to_string_pretty(value).context("serializing")?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run_flow(cmd: FlowCmd) -> CliResult {
    match cmd {
        FlowCmd::Colorize { input, output, read } => {
            let flow = read.read(&input)?;
            write_rgb_png(&colorize(&flow), &output).with_context(|| format!("writing {}", output.display()))?;
        }
        FlowCmd::Magnitude { input, output, read } => {
            let flow = read.read(&input)?;
            let mag = magnitude(&flow);
            write_gray_png(&normalize_magnitudes(&mag), &output)
                .with_context(|| format!("writing {}", output.display()))?;
            println!(
                "{}",
                serde_json::json!({ "width": mag.width(), "height": mag.height(), "max": mag.max() })
            );
        }
        FlowCmd::Normalize {
            input,
            output,
            corner_fraction,
            report,
            read,
        } => {
            let flow = read.read(&input)?;
            let fraction = CornerFraction::new(corner_fraction).map_err(|e| CliError::Usage(e.to_string()))?;
            let corners = corner_stats(&flow, fraction);
            let background = cluster_corners(&corners);
            let normalized = subtract_background(&flow, &background);
            write_flow_file(&normalized, &output).with_context(|| format!("writing {}", output.display()))?;
            if let Some(path) = report {
                #[derive(Serialize)]
                struct Report<'a> {
                    corner_fraction: f64,
                    corners: &'a [motion_wsod::CornerStats; 4],
                    background: &'a motion_wsod::BackgroundEstimate,
                    background_magnitude: f64,
                }
                write_json(
                    &path,
                    &Report {
                        corner_fraction,
                        corners: &corners,
                        background: &background,
                        background_magnitude: background.magnitude(),
                    },
                )?;
            }
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxEntry {
    image_id: String,
    #[serde(rename = "box")]
    bbox: BBox,
}

fn run_select(a: SelectArgs) -> CliResult {
    let cfg = SelectionConfig::new(a.m, a.d).map_err(|e| CliError::Usage(e.to_string()))?;
    let entries: Vec<BoxEntry> = read_json(&a.boxes)?;
    let mut maps = Vec::with_capacity(entries.len());
    for e in &entries {
        if e.image_id.contains(['/', '\\']) || e.image_id.is_empty() {
            return Err(anyhow!("invalid image id `{}`", e.image_id).into());
        }
        if !e.bbox.is_finite() {
            return Err(anyhow!("{}: non-finite box", e.image_id).into());
        }
        let flow = a.read.read(&a.flows.join(format!("{}.flo", e.image_id)))?;
        maps.push(normalize_magnitudes(&magnitude(&flow)));
    }
    let inputs: Vec<SelectionInput<'_>> = entries
        .iter()
        .zip(&maps)
        .map(|(e, m)| SelectionInput {
            image_id: e.image_id.clone(),
            magnitudes: m,
            predicted_box: e.bbox,
        })
        .collect();
    let records = select_dataset(&inputs, &cfg);
    let mut out = String::new();
    for r in &records {
        out.push_str(&serde_json::to_string(r).context("serializing")?);
        out.push('\n');
    }
    fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    let kept = records.iter().filter(|r| r.selected).count();
    eprintln!("selected {kept} of {} images", records.len());
    Ok(())
}

fn run_synth(cmd: SynthCmd) -> CliResult {
    let SynthCmd::Generate {
        spec,
        out,
        seed,
        degraded,
    } = cmd;
    let mut cfg: BenchmarkConfig = match spec {
        Some(p) => read_json(&p)?,
        None => BenchmarkConfig::default(),
    };
    cfg.degraded |= degraded;
    cfg.validate().context("invalid benchmark spec")?;
    let bench = cfg.generate(seed).context("generating benchmark")?;
    let n = dataset::write_dataset(&out, &[("train", &bench.train), ("eval", &bench.eval)])?;
    eprintln!("wrote {n} images to {}", out.display());
    Ok(())
}

fn run_train_toy(a: TrainToyArgs) -> CliResult {
    let mut cfg: ToyConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ToyConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.use_motion |= a.motion || a.normalize;
    cfg.train.use_normalization |= a.normalize;
    cfg.train.use_selection |= a.selection;
    cfg.benchmark.degraded |= a.degraded;
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.benchmark.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let bench = cfg.benchmark.generate(cfg.train.seed).context("generating benchmark")?;
    let trained = train(&bench.train, &bench.eval, &cfg.train).context("training")?;
    write_json(&a.out, &trained.report)?;
    if let Some(p) = &a.model_out {
        write_json(p, &trained.model)?;
    }
    eprintln!(
        "corloc {:.3} on {} eval images ({} training images)",
        trained.report.corloc,
        bench.eval.len(),
        trained.report.train_images
    );
    Ok(())
}

fn run_ablate(a: AblateArgs) -> CliResult {
    let mut cfg: AblationConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => AblationConfig::default(),
    };
    if let Some(n) = a.seeds {
        cfg.seeds = (0..n).collect();
    }
    let report = run_ablation(&cfg).context("ablation")?;
    let table = report.to_markdown();
    fs::write(&a.out, &table).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    print!("{table}");
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> CliResult {
    let n = a.instances as usize;
    let want = |m: Module| a.all || a.module == Some(m);
    let mut reports = Vec::new();
    if want(Module::Milhead) {
        reports.push(check_milhead(n, a.seed));
    }
    if want(Module::Contrastive) {
        reports.push(check_contrastive(n, a.seed));
    }
    if want(Module::Trainer) {
        reports.push(check_objective(n, a.seed));
    }
    print!("{}", report_table(&reports));
    if reports.iter().any(|r| !r.passed) {
        return Err(anyhow!("gradient check failed").into());
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> CliResult {
    let model: Model = read_json(&a.model)?;
    model.head.validate().context("invalid model")?;
    let split = (a.split != "all").then_some(a.split.as_str());
    let entries = dataset::read_entries(&a.data, split)?;
    if entries.is_empty() {
        return Err(anyhow!("no images in split `{}`", a.split).into());
    }
    let proposals = entries
        .iter()
        .map(|e| dataset::read_proposals(&a.data, e))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let items = entries.iter().zip(&proposals).map(|(e, p)| EvalItem {
        proposals: p,
        labels: &e.labels,
        truth: &e.truth,
    });
    let report = evaluate(&model.head, items).context("evaluation")?;
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).context("serializing")?),
    }
    Ok(())
}

fn parse(argv: Vec<OsString>) -> CliResult<Cli> {
    let mut cmd = Cli::command();
    cmd.build();
    let matches = cmd.clone().try_get_matches_from(&argv).map_err(CliError::Clap)?;
    let matches = match matches.get_one::<PathBuf>("defaults") {
        Some(path) => {
            let pairs = defaults::read_pairs(path)?;
            let extra = defaults::extra_args(&cmd, &matches, &pairs)?;
            if extra.is_empty() {
                matches
            } else {
                let mut argv = argv;
                argv.extend(extra);
                cmd.clone().try_get_matches_from(argv).map_err(CliError::Clap)?
            }
        }
        None => matches,
    };
    Cli::from_arg_matches(&matches).map_err(CliError::Clap)
}

fn run(argv: Vec<OsString>) -> CliResult {
    let cli = parse(argv)?;
    match cli.command {
        Cmd::Flow(c) => run_flow(c),
        Cmd::Select(a) => run_select(a),
        Cmd::Synth(c) => run_synth(c),
        Cmd::TrainToy(a) => run_train_toy(a),
        Cmd::Ablate(a) => run_ablate(a),
        Cmd::Gradcheck(a) => run_gradcheck(a),
        Cmd::Eval(a) => run_eval(a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
