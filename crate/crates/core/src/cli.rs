//! Command-line surface behind the `vast` binary.
//!
//! Every subcommand writes its report to the supplied writer so the same code
//! path is exercised by tests and by the binary. Exit codes: 0 success,
//! 1 check failure, 2 usage or parse error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{analyze, report, FlopConvention, ReportFormat};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gradcheck::{corrupted_vjp_check, render_reports, run_scope, Scope};
use crate::harness::{evaluate, gen_toy_dataset, train, Split, TaskKind, ToyTask, TrainConfig};
use crate::models::{build_model, ModelSpec};
use crate::tnsr;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// File names written by `train-toy` into its output directory.
pub const CHECKPOINT_FILE: &str = "model.tnsr";
pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "log.csv";
pub const DATASET_FILE: &str = "dataset.tnsr";
pub const TRAIN_CONFIG_FILE: &str = "train.json";

#[derive(Debug, Parser)]
#[command(name = "vast", version, about = "Affine-shift vision models: analysis, gradient checks, toy training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameter and MAC accounting for a named model or a config file.
    Describe(DescribeArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Generate a toy dataset, train on it and write a checkpoint.
    TrainToy(TrainToyArgs),
    /// Run a checkpoint on a TNSR input tensor and print logits as JSON.
    Infer(InferArgs),
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    /// Model name such as ast-ti or vast-s.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub model: Option<String>,
    /// Model config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Square input side.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, default_value = "table")]
    pub format: ReportFormat,
    /// Evaluation views; multiplies the per-view MACs in the summary.
    #[arg(long, default_value_t = 1)]
    pub views: u64,
    /// Report FLOPs as two per multiply-accumulate instead of one.
    #[arg(long)]
    pub two_flops_per_mac: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "ops")]
    pub scope: Scope,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Append a check against a deliberately wrong VJP.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long, default_value = "temporal-order")]
    pub task: TaskKind,
    /// Model config JSON; defaults to a micro video model sized for the task.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 160)]
    pub samples: usize,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Seeds data generation and batching; model init uses the config seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    /// Model config JSON; defaults to config.json next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One clip [T,H,W,C] or a batch [N,T,H,W,C].
    #[arg(long)]
    pub input_tensor: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli.command, out) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } => EXIT_CHECK_FAILED,
        _ => EXIT_USAGE,
    }
}

/// Runs one command; `Ok(false)` means it ran but a check failed.
pub fn execute(command: &Command, out: &mut dyn Write) -> Result<bool> {
    match command {
        Command::Describe(a) => describe(a, out).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::TrainToy(a) => train_toy(a, out).map(|_| true),
        Command::Infer(a) => infer(a, out).map(|_| true),
    }
}

fn describe_spec(a: &DescribeArgs) -> Result<ModelSpec> {
    let mut spec = match (&a.model, &a.config) {
        (Some(name), _) => ModelSpec::named(name)?,
        (None, Some(path)) => ModelConfig::load(path)?.to_spec()?,
        (None, None) => return Err(Error::Usage("pass --model or --config".into())),
    };
    let frames = a.frames.unwrap_or(spec.input.frames);
    let side = a.resolution;
    let (h, w) = (side.unwrap_or(spec.input.height), side.unwrap_or(spec.input.width));
    spec = spec.with_input(frames, h, w);
    spec.validate()?;
    Ok(spec)
}

fn describe(a: &DescribeArgs, out: &mut dyn Write) -> Result<()> {
    if a.views == 0 {
        return Err(Error::Usage("--views must be at least 1".into()));
    }
    let spec = describe_spec(a)?;
    let stats = analyze(&spec, 1)?;
    let all_views = stats.macs * a.views;
    let convention = if a.two_flops_per_mac { FlopConvention::TwoFlopsPerMac } else { FlopConvention::Mac };
    let flops = stats.flops(convention);
    let text = match a.format {
        ReportFormat::Json => {
            let mut v = serde_json::to_value(&stats)?;
            v["views"] = a.views.into();
            v["macs_all_views"] = all_views.into();
            v["flops"] = flops.into();
            serde_json::to_string_pretty(&v)? + "\n"
        }
        ReportFormat::Table => {
            let mut t = report(&stats, a.format)?;
            if a.views > 1 {
                t.push_str(&format!("views {}  macs {:.2}G total\n", a.views, all_views as f64 / 1e9));
            }
            if a.two_flops_per_mac {
                t.push_str(&format!("flops {:.2}G (two per MAC)\n", flops as f64 / 1e9));
            }
            t
        }
        ReportFormat::Csv => report(&stats, a.format)?,
    };
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let mut reports = run_scope(a.scope, a.seed)?;
    if a.inject_fault {
        reports.push(corrupted_vjp_check(a.seed)?);
    }
    out.write_all(render_reports(&reports).as_bytes())?;
    Ok(reports.iter().all(|r| r.passed()))
}

/// Default model for toy training: micro video with a 2D stem at the task size.
pub fn toy_model_config(task: &ToyTask) -> ModelConfig {
    let spec = ModelSpec::named("vast-micro")
        .expect("micro is a known model")
        .with_input(task.frames, task.height, task.width)
        .with_classes(task.num_classes);
    ModelConfig::from_spec(&spec, 0)
}

fn train_toy(a: &TrainToyArgs, out: &mut dyn Write) -> Result<()> {
    let mut task = match a.task {
        TaskKind::TemporalOrder => ToyTask::temporal_order(a.samples, a.seed),
        TaskKind::StaticPattern => ToyTask::static_pattern(4, a.samples, a.seed),
    };
    let config = match &a.config {
        Some(path) => {
            let cfg = ModelConfig::load(path)?;
            let spec = cfg.to_spec()?;
            task.frames = spec.input.frames;
            task.height = spec.input.height;
            task.width = spec.input.width;
            task.channels = spec.input.channels;
            task.num_classes = spec.num_classes;
            cfg
        }
        None => toy_model_config(&task),
    };
    let spec = config.to_spec()?;
    let data = gen_toy_dataset(&task)?;
    let train_cfg = TrainConfig {
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut model = build_model(&spec, config.seed)?;
    let log = train(&mut model, &data, &train_cfg)?;

    std::fs::create_dir_all(&a.out)?;
    tnsr::write_tree(a.out.join(CHECKPOINT_FILE), &model.params.named_values())?;
    std::fs::write(a.out.join(CONFIG_FILE), config.to_json()?)?;
    std::fs::write(a.out.join(LOG_FILE), log.to_csv()?)?;
    std::fs::write(a.out.join(TRAIN_CONFIG_FILE), serde_json::to_string_pretty(&train_cfg)?)?;
    data.save(a.out.join(DATASET_FILE))?;

    let train_acc = evaluate(&model, &data.train)?.accuracy;
    let val = log.last(Split::Val).map(|r| r.acc);
    writeln!(out, "task {} train {} val {}", a.task, data.train.len(), data.val.len())?;
    writeln!(out, "train acc {train_acc:.4}")?;
    if let Some(acc) = val {
        writeln!(out, "val acc {acc:.4}")?;
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

#[derive(Serialize)]
struct InferOutput {
    logits: Vec<Vec<f32>>,
    argmax: Vec<usize>,
}

/// Loads a model from a checkpoint and its config JSON.
pub fn load_model(model_file: &Path, config: Option<&Path>) -> Result<crate::models::Model> {
    let config_path = match config {
        Some(p) => p.to_path_buf(),
        None => model_file.with_file_name(CONFIG_FILE),
    };
    let cfg = ModelConfig::load(&config_path)?;
    let mut model = build_model(&cfg.to_spec()?, cfg.seed)?;
    model.params.load_named(tnsr::read_tree(model_file)?)?;
    Ok(model)
}

fn infer(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model_file, a.config.as_deref())?;
    let mut x = tnsr::read_tensor(&a.input_tensor)?;
    if x.shape().len() == 4 {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        x = x.reshape(&shape)?;
    }
    let logits = model.predict(&x)?;
    let k = logits.shape()[1];
    let rows: Vec<Vec<f32>> = logits.data().chunks(k).map(<[f32]>::to_vec).collect();
    let argmax = rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > r[best] { i } else { best })
        })
        .collect();
    let text = serde_json::to_string(&InferOutput { logits: rows, argmax })?;
    writeln!(out, "{text}")?;
    Ok(())
}
