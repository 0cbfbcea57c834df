use std::ffi::OsString;
use std::io::IsTerminal;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use plantdoc_core::data::{
    generate_synthetic_dataset, load_classes, reference_classes, scan_manifest, AugmentConfig,
    ClassInfo,
};
use plantdoc_core::diagnosis::{predict_bytes, Prediction, StatusColor};
use plantdoc_core::eval::{compute_metrics, confusion, export_confusion_csv};
use plantdoc_core::model::{
    build_paper_network, checkpoint_from_bytes, export_frozen, load_checkpoint, summarize,
    ArchConfig, FrozenModel, Network,
};
use plantdoc_core::train::{evaluate_with_predictions, export_history_csv, fit_with, TrainConfig};
use plantdoc_core::SeededRng;

use crate::service::{self, ServiceConfig, DEFAULT_MAX_UPLOAD_BYTES, DEFAULT_TOP_K};

/// Environment variable holding the default model path.
pub const MODEL_ENV: &str = "PLANTDOC_MODEL";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "plantdoc", version, about = "Plant leaf disease classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a network on a class-per-directory image folder.
    Train(TrainArgs),
    /// Score a model on a labelled image folder.
    Eval(EvalArgs),
    /// Classify image files.
    Predict(PredictArgs),
    /// Freeze a checkpoint into a self-contained inference bundle.
    Export(ExportArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
    /// Write a synthetic leaf dataset.
    Synth(SynthArgs),
    /// Print the layer-by-layer architecture summary.
    Summary(SummaryArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    /// 256x256 input, five conv blocks.
    Paper,
    /// 64x64 input, four narrow conv blocks.
    Compact,
}

impl Arch {
    fn config(self, class_count: usize) -> ArchConfig {
        match self {
            Arch::Paper => ArchConfig {
                class_count,
                ..ArchConfig::paper()
            },
            Arch::Compact => ArchConfig::compact(class_count),
        }
    }
}

#[derive(Args, Debug)]
pub struct ClassesArg {
    /// JSON list of class records; defaults to the built-in 38 classes.
    #[arg(long = "classes-file")]
    pub classes_file: Option<PathBuf>,
}

impl ClassesArg {
    fn load(&self) -> anyhow::Result<Vec<ClassInfo>> {
        Ok(match &self.classes_file {
            Some(p) => load_classes(p)?,
            None => reference_classes(),
        })
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for checkpoints and history.csv.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f32,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Arch::Paper)]
    pub arch: Arch,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0.25)]
    pub dropout_conv: f32,
    #[arg(long, default_value_t = 0.5)]
    pub dropout_dense: f32,
    /// Train on images exactly as decoded.
    #[arg(long)]
    pub no_augment: bool,
    #[command(flatten)]
    pub classes: ClassesArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Frozen bundle (.pldm) or checkpoint (.pldc).
    #[arg(long, env = MODEL_ENV)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for metrics.json and confusion.csv.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[command(flatten)]
    pub classes: ClassesArg,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long, env = MODEL_ENV)]
    pub model: PathBuf,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    /// One JSON object per line instead of a table.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub no_color: bool,
    #[command(flatten)]
    pub classes: ClassesArg,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub classes: ClassesArg,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, env = MODEL_ENV)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = DEFAULT_MAX_UPLOAD_BYTES)]
    pub max_upload_bytes: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Serve static frontend files from this directory.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of classes, taken in class-index order.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub side: usize,
}

#[derive(Args, Debug)]
pub struct SummaryArgs {
    #[arg(long, value_enum, default_value_t = Arch::Paper)]
    pub arch: Arch,
    #[arg(long, default_value_t = 38)]
    pub class_count: usize,
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

pub fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Export(a) => export(a),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(a),
        Command::Summary(a) => {
            let net = match a.arch {
                Arch::Paper if a.class_count == 38 => build_paper_network(&mut SeededRng::new(0))?,
                arch => Network::build(&arch.config(a.class_count), &mut SeededRng::new(0))?,
            };
            println!("{}", summarize(&net));
            Ok(())
        }
    }
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let classes = a.classes.load()?;
    let manifest = scan_manifest(&a.data, &classes)?;
    let config = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        dropout_conv: a.dropout_conv,
        dropout_dense: a.dropout_dense,
        seed: a.seed,
        augment: (!a.no_augment).then(AugmentConfig::default),
        train_fraction: a.train_fraction,
        arch: a.arch.config(classes.len()),
        checkpoint_dir: Some(a.out.clone()),
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let history_path = a.out.join("history.csv");
    let mut history = Vec::new();
    let outcome = fit_with(&manifest, &config, |r| {
        history.push(*r);
        // keep the curve file current so an interrupted run still has it
        if let Err(e) = export_history_csv(&history, &history_path) {
            log::warn!("could not write {}: {e}", history_path.display());
        }
    })?;
    export_history_csv(&outcome.history, &history_path)?;
    println!(
        "trained {} epochs ({} steps); checkpoints and history in {}",
        outcome.history.len(),
        outcome.optimizer_steps,
        a.out.display()
    );
    if let Some(last) = outcome.history.last() {
        println!(
            "final: loss {:.4} accuracy {:.4} val_loss {:.4} val_accuracy {:.4}",
            last.loss, last.accuracy, last.val_loss, last.val_accuracy
        );
    }
    Ok(())
}

/// Load a frozen bundle, or freeze a checkpoint with the given classes.
pub fn load_model(path: &Path, classes: &ClassesArg) -> anyhow::Result<FrozenModel> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match FrozenModel::from_bytes(&bytes) {
        Ok(m) => Ok(m),
        Err(frozen_err) => match checkpoint_from_bytes(&bytes) {
            Ok(net) => Ok(FrozenModel::new(&net, &classes.load()?)?),
            Err(_) => Err(frozen_err).with_context(|| format!("loading {}", path.display())),
        },
    }
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model, &a.classes)?;
    let manifest = scan_manifest(&a.data, model.classes())?;
    let ((loss, _), predictions) =
        evaluate_with_predictions(model.network(), &manifest.samples, a.batch)?;
    let truth: Vec<usize> = manifest.samples.iter().map(|s| s.class_index).collect();
    let cm = confusion(&truth, &predictions, model.classes().len())?;
    let report = compute_metrics(&cm)?;
    let names: Vec<String> = model
        .classes()
        .iter()
        .map(ClassInfo::display_name)
        .collect();

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let json_path = a.out.join("metrics.json");
    std::fs::write(&json_path, report.to_json(&names)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    export_confusion_csv(&cm, &names, &a.out.join("confusion.csv"))?;
    print!("{}", report.to_table(&names)?);
    println!("Loss       {loss:.4}");
    println!(
        "wrote {} and {}",
        json_path.display(),
        a.out.join("confusion.csv").display()
    );
    Ok(())
}

fn paint(text: &str, color: StatusColor, enabled: bool) -> String {
    if !enabled {
        return text.to_string();
    }
    let code = match color {
        StatusColor::Green => 32,
        StatusColor::Red => 31,
    };
    format!("\x1b[{code}m{text}\x1b[0m")
}

/// One table row per prediction.
pub fn format_prediction_row(file: &str, p: &Prediction, color: bool) -> String {
    let status = if p.healthy { "Healthy" } else { "Diseased" };
    let line = format!(
        "{file}  {} {}  {}  {} {status}  {:.2} %",
        p.plant_emoji,
        p.plant,
        p.condition,
        p.status_emoji,
        p.confidence as f64 * 100.0
    );
    paint(&line, p.status_color, color)
}

fn predict(a: PredictArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model, &a.classes)?;
    let color =
        !a.no_color && std::env::var_os("NO_COLOR").is_none() && std::io::stdout().is_terminal();
    let mut failures = 0;
    for path in &a.images {
        let result = std::fs::read(path)
            .map_err(anyhow::Error::from)
            .and_then(|b| Ok(predict_bytes(&model, &b, a.top_k)?));
        match result {
            Ok(p) if a.json => println!("{}", serde_json::json!({ "file": path, "prediction": p })),
            Ok(p) => println!(
                "{}",
                format_prediction_row(&path.display().to_string(), &p, color)
            ),
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e:#}", path.display());
            }
        }
    }
    if failures > 0 {
        bail!(
            "{failures} of {} images could not be classified",
            a.images.len()
        );
    }
    Ok(())
}

fn export(a: ExportArgs) -> anyhow::Result<()> {
    let net = load_checkpoint(&a.checkpoint)?;
    let model = export_frozen(&net, &a.classes.load()?, &a.out)?;
    let size = std::fs::metadata(&a.out)?.len();
    println!(
        "wrote {} ({} parameters, {} classes, {:.1} MB)",
        a.out.display(),
        model.network().param_count(),
        model.classes().len(),
        size as f64 / 1e6
    );
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    if !a.model.is_file() {
        bail!("model file {} does not exist", a.model.display());
    }
    let config = ServiceConfig {
        addr: SocketAddr::new(a.host, a.port),
        model_path: a.model,
        max_upload_bytes: a.max_upload_bytes,
        top_k: a.top_k,
        static_dir: a.static_dir,
    };
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(service::serve(config))
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let written = generate_synthetic_dataset(
        &reference_classes(),
        a.classes,
        a.per_class,
        a.seed,
        &a.out,
        a.side,
    )?;
    println!("wrote {} images under {}", written.len(), a.out.display());
    Ok(())
}
