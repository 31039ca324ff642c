//! Command-line front end: argument parsing, config resolution and dispatch
//! to the library.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Deserialize;
use thiserror::Error;

use gan_translate::data::{build_shapes_dataset, load_image_folder, load_shapes_dataset, save_shapes_dataset, LabeledDataset, ShapesSpec};
use gan_translate::evaluation::{evaluate_run, EvalOptions, EvalReport};
use gan_translate::inference::{domain_grid, translate_directory, translate_file, write_sample_grid};
use gan_translate::model::DomainLabel;
use gan_translate::trainer::{
    continue_step1, continue_step2, load_checkpoint, load_checkpoint_for, load_latest, rng_stream, run_step1,
    run_step2, sample_latent, RunDir,
};
use gan_translate::RunConfig;

/// Environment variable naming the default run directory.
pub const RUN_ENV: &str = "GAN_TRANSLATE_RUN";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Key { key: String, message: String },

    #[error("config file {}: {message}", path.display())]
    File { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] gan_translate::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "gan-translate", version, about = "Unsupervised image-to-image translation with a conditional GAN and a latent encoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic circles/squares dataset.
    MakeData(MakeDataArgs),
    /// Step 1: train the conditional GAN.
    TrainGan(TrainArgs),
    /// Step 2: train the encoder against the frozen generator.
    TrainEncoder(TrainEncoderArgs),
    /// Translate an image file, or every image in a directory.
    Translate(TranslateArgs),
    /// Render a grid of fixed latents across every domain.
    Sample(SampleArgs),
    /// Compute the evaluation report for a run.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct RunArg {
    /// Run directory.
    #[arg(long, env = RUN_ENV, default_value = "run")]
    pub run: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML file with config keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct MakeDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub n_per_domain: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArg,
    /// Dataset directory (written by `make-data`, or one subdirectory per domain).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Continue from the run's step-1 checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct TrainEncoderArgs {
    #[command(flatten)]
    pub run: RunArg,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Continue from the run's step-2 checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub run: RunArg,
    /// Image file or directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub target_domain: usize,
    /// Output file, or output directory when `--input` is a directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub run: RunArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of latent rows.
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArg,
    /// Dataset not used for training; a judge classifier is trained on it
    /// and its held-out part is translated.
    #[arg(long)]
    pub data: PathBuf,
    /// Report path (default: `eval_report.json` in the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 99)]
    pub seed: u64,
}

fn key_error(key: &str, message: impl ToString) -> CliError {
    CliError::Key {
        key: key.to_string(),
        message: message.to_string(),
    }
}

/// Applies one key to `table`, checking the key exists and its value has the
/// right type for `RunConfig`.
fn apply_key(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    if !table.contains_key(key) {
        return Err(key_error(key, "unknown key"));
    }
    let mut trial = table.clone();
    trial.insert(key.to_string(), value.clone());
    RunConfig::deserialize(toml::Value::Table(trial)).map_err(|e| key_error(key, e.message()))?;
    table.insert(key.to_string(), value);
    Ok(())
}

/// Parses the right-hand side of `--set key=value` as a TOML value, falling
/// back to a bare string (`label_mode=one-hot`).
fn parse_flag_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Resolves a config: defaults, then `file`, then `overrides`
/// (`key=value` strings), each overriding the previous. The result is
/// validated.
pub fn parse_config(file: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let defaults = toml::Value::try_from(RunConfig::default()).expect("config serializes");
    let toml::Value::Table(mut table) = defaults else {
        unreachable!("config is a table")
    };
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let parsed: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::File {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })?;
        for (key, value) in parsed {
            apply_key(&mut table, &key, value)?;
        }
    }
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("`--set {item}` is not of the form KEY=VALUE")))?;
        apply_key(&mut table, key.trim(), parse_flag_value(raw.trim()))?;
    }
    let config = RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Usage(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Writes the fully resolved config into the run directory.
pub fn write_config(config: &RunConfig, run: &RunDir) -> CliResult<()> {
    fs::create_dir_all(&run.root)?;
    let text = toml::to_string(config).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::write(run.config_path(), text)?;
    Ok(())
}

/// A `make-data` directory, or a folder with one subdirectory per domain
/// (sorted by name, domain ids in that order).
pub fn load_dataset(dir: &Path, config: &RunConfig) -> CliResult<LabeledDataset> {
    if dir.join("spec.json").is_file() {
        return Ok(load_shapes_dataset(dir)?.0);
    }
    if !dir.is_dir() {
        return Err(gan_translate::Error::Missing {
            path: dir.to_path_buf(),
            what: "dataset directory".into(),
        }
        .into());
    }
    let mut subdirs: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    subdirs.sort();
    let domains: Vec<(String, usize)> = subdirs.into_iter().enumerate().map(|(i, s)| (s, i)).collect();
    Ok(load_image_folder(dir, &domains, config.image_size, config.channels)?)
}

fn require_checkpoint(path: &Path, what: &str) -> CliResult<()> {
    if path.join("manifest.json").is_file() {
        Ok(())
    } else {
        Err(gan_translate::Error::Missing {
            path: path.to_path_buf(),
            what: what.to_string(),
        }
        .into())
    }
}

pub fn make_data(args: &MakeDataArgs) -> CliResult<()> {
    let spec = ShapesSpec {
        n_per_domain: args.n_per_domain,
        seed: args.seed,
        ..ShapesSpec::default()
    };
    let ds = build_shapes_dataset(&spec)?;
    save_shapes_dataset(&ds, &spec, &args.out)?;
    info!("wrote {} images to {}", ds.len(), args.out.display());
    Ok(())
}

pub fn train_gan(args: &TrainArgs) -> CliResult<()> {
    let run = RunDir::new(&args.run.run);
    let config = parse_config(args.config.config.as_deref(), &args.config.overrides)?;
    let dataset = load_dataset(&args.data, &config)?;
    let has_step1 = run.step1_checkpoint().join("manifest.json").is_file();
    if args.resume {
        require_checkpoint(&run.step1_checkpoint(), "step-1 checkpoint to resume")?;
        let mut ckpt = load_checkpoint_for(&run.step1_checkpoint(), &config)?;
        ckpt.config = config.clone();
        write_config(&config, &run)?;
        continue_step1(&mut ckpt, &dataset, Some(&run), None)?;
    } else {
        if has_step1 {
            return Err(CliError::Usage(format!(
                "{} already holds a step-1 checkpoint; pass --resume or use another run directory",
                run.root.display()
            )));
        }
        write_config(&config, &run)?;
        run_step1(&dataset, &config, Some(&run))?;
    }
    info!("step-1 checkpoint at {}", run.step1_checkpoint().display());
    Ok(())
}

/// Config for commands on an existing run: the run's saved config unless
/// `--config` is given, plus overrides.
fn run_config(run: &RunDir, args: &ConfigArgs) -> CliResult<RunConfig> {
    let saved = run.config_path();
    let file = args.config.clone().or_else(|| saved.is_file().then_some(saved));
    parse_config(file.as_deref(), &args.overrides)
}

pub fn train_encoder(args: &TrainEncoderArgs) -> CliResult<()> {
    let run = RunDir::new(&args.run.run);
    require_checkpoint(&run.step1_checkpoint(), "step-1 checkpoint (run train-gan first)")?;
    let config = run_config(&run, &args.config)?;
    if args.resume && run.step2_checkpoint().join("manifest.json").is_file() {
        let mut ckpt = load_checkpoint_for(&run.step2_checkpoint(), &config)?;
        ckpt.config = config.clone();
        write_config(&config, &run)?;
        continue_step2(&mut ckpt, Some(&run), None)?;
    } else {
        let ckpt = load_checkpoint_for(&run.step1_checkpoint(), &config)?;
        write_config(&config, &run)?;
        run_step2(ckpt, &config, Some(&run))?;
    }
    info!("step-2 checkpoint at {}", run.step2_checkpoint().display());
    Ok(())
}

pub fn translate(args: &TranslateArgs) -> CliResult<()> {
    let run = RunDir::new(&args.run.run);
    require_checkpoint(&run.step2_checkpoint(), "step-2 checkpoint (run train-encoder first)")?;
    let ckpt = load_checkpoint(&run.step2_checkpoint())?;
    let encoder = ckpt
        .encoder
        .as_ref()
        .ok_or_else(|| CliError::Usage("step-2 checkpoint has no encoder".into()))?;
    let target = DomainLabel::new(args.target_domain, ckpt.config.num_domains)?;
    if args.input.is_dir() {
        let written = translate_directory(encoder, &ckpt.generator, &args.input, target, &args.out)?;
        info!("wrote {} images to {}", written.len(), args.out.display());
    } else {
        translate_file(encoder, &ckpt.generator, &args.input, target, &args.out)?;
    }
    Ok(())
}

pub fn sample(args: &SampleArgs) -> CliResult<()> {
    let run = RunDir::new(&args.run.run);
    require_checkpoint(&run.step1_checkpoint(), "step-1 checkpoint (run train-gan first)")?;
    let ckpt = load_latest(&run)?;
    let z = sample_latent(args.rows, ckpt.config.z_dim, &mut rng_stream(args.seed, 0))?;
    let images = domain_grid(&ckpt.generator, &z)?;
    write_sample_grid(&images, ckpt.config.num_domains, &args.out)?;
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<EvalReport> {
    let run = RunDir::new(&args.run.run);
    require_checkpoint(&run.step1_checkpoint(), "step-1 checkpoint (run train-gan first)")?;
    let ckpt = load_latest(&run)?;
    let dataset = load_dataset(&args.data, &ckpt.config)?;
    let options = EvalOptions {
        seed: args.seed,
        ..EvalOptions::default()
    };
    let report = evaluate_run(&ckpt, &dataset, &options)?;
    let out = args.out.clone().unwrap_or_else(|| run.report_path());
    report.write(&out)?;
    info!("report written to {}", out.display());
    Ok(report)
}

pub fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::MakeData(a) => make_data(a),
        Command::TrainGan(a) => train_gan(a),
        Command::TrainEncoder(a) => train_encoder(a),
        Command::Translate(a) => translate(a),
        Command::Sample(a) => sample(a),
        Command::Evaluate(a) => evaluate(a).map(|_| ()),
    }
}
