//! Command-line front end. [`dispatch`] parses arguments, runs one subcommand and returns
//! the process exit code: 0 on success, 1 on usage errors, 2 on data, checkpoint or
//! verification failures.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::geometry::flow_to_seg;
use crate::gradcheck;
use crate::io::flo::write_flo;
use crate::io::png::{read_image, write_image, write_mask};
use crate::metrics::evaluate_dataset;
use crate::msunet::{forward, read_checkpoint, write_checkpoint, Checkpoint};
use crate::synth::{generate_dataset, read_dataset, write_dataset, GenOptions, Sample};
use crate::train::{run_training, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "widecorrect", version, about = "Wide-angle portrait correction by predicted flow maps")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic distorted dataset.
    GenData(GenDataArgs),
    /// Train a model on labeled and optional unlabeled data.
    Train(TrainArgs),
    /// Correct a single image with a trained checkpoint.
    Correct(CorrectArgs),
    /// Score a checkpoint on an annotated dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples.
    #[arg(long)]
    pub count: usize,
    /// Fraction of samples that keep their labels.
    #[arg(long, default_value_t = 1.0)]
    pub labeled_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image size as HxW.
    #[arg(long, default_value = "64x48", value_parser = parse_size)]
    pub size: (usize, usize),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory; its labeled samples form the labeled set.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset directory whose samples are all used without labels.
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// JSON file with training settings; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines training log (default: `<out>.log.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Override the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write `<out>.epochNNNN` every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Train on labeled data only.
    #[arg(long)]
    pub supervised_only: bool,
    /// Drop the direction and range consistency terms.
    #[arg(long)]
    pub no_drc: bool,
    /// Drop the regression consistency terms.
    #[arg(long)]
    pub no_rc: bool,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the predicted flow as a .flo file.
    #[arg(long)]
    pub dump_flow: Option<PathBuf>,
    /// Write the predicted 3-class masks as an H×2W grayscale PNG of class ids
    /// (horizontal component left, vertical right).
    #[arg(long)]
    pub dump_mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub report: PathBuf,
    /// Optional per-sample CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check a single module instead of the whole suite.
    #[arg(long)]
    pub module: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("invalid dimension {v:?} in {s:?}"))
    };
    Ok((parse(h)?, parse(w)?))
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("io error on {}: {e}", path.display()))
}

/// Parses `argv` (including the program name), runs the subcommand and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Correct(a) => correct(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    if a.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.labeled_frac) {
        return Err(CliError::usage(format!("--labeled-frac must lie in [0, 1], got {}", a.labeled_frac)));
    }
    let (h, w) = a.size;
    if h < 16 || w < 16 {
        return Err(CliError::usage(format!("--size must be at least 16x16, got {h}x{w}")));
    }
    let samples = generate_dataset(a.count, a.labeled_frac, a.seed, &GenOptions::new(h, w))?;
    write_dataset(&samples, &a.out)?;
    println!(
        "wrote {} samples ({} labeled) to {}",
        samples.len(),
        samples.iter().filter(|s| s.is_labeled()).count(),
        a.out.display()
    );
    Ok(())
}

fn load_train_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("--config {}: {e}", path.display())))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| CliError::usage(format!("--config {}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.supervised_only |= a.supervised_only;
    cfg.use_drc &= !a.no_drc;
    cfg.use_rc &= !a.no_rc;
    if cfg.supervised_only && (a.no_drc || a.no_rc) {
        log::warn!("--no-drc/--no-rc have no effect with --supervised-only");
    }
    if a.checkpoint_every == Some(0) {
        return Err(CliError::usage("--checkpoint-every must be at least 1"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_sizes(samples: &[Sample], cfg: &TrainConfig, flag: &str) -> Result<(), CliError> {
    for s in samples {
        let d = &s.distorted;
        if d.height() != cfg.model.input_h || d.width() != cfg.model.input_w || d.channels() != cfg.model.in_channels {
            return Err(CliError::data(format!(
                "{flag}: sample {} is {}x{}x{}, model expects {}x{}x{}",
                s.id,
                d.channels(),
                d.height(),
                d.width(),
                cfg.model.in_channels,
                cfg.model.input_h,
                cfg.model.input_w
            )));
        }
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = load_train_config(&a)?;
    let (labeled, mut unlabeled): (Vec<Sample>, Vec<Sample>) = read_dataset(&a.data)?.into_iter().partition(|s| s.is_labeled());
    if labeled.is_empty() {
        return Err(CliError::data(format!("--data {}: no labeled samples", a.data.display())));
    }
    if let Some(dir) = &a.unlabeled {
        unlabeled.extend(read_dataset(dir)?.into_iter().map(Sample::into_unlabeled));
    }
    check_sizes(&labeled, &cfg, "--data")?;
    check_sizes(&unlabeled, &cfg, "--unlabeled")?;
    log::info!("training on {} labeled and {} unlabeled samples", labeled.len(), unlabeled.len());

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let file = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log_out = BufWriter::new(file);
    let total = cfg.pretrain_epochs + cfg.main_epochs;
    let outcome = run_training(&labeled, &unlabeled, &cfg, |record, state| {
        let line = serde_json::to_string(record).expect("epoch record serializes");
        writeln!(log_out, "{line}")
            .and_then(|_| log_out.flush())
            .map_err(|e| Error::io(&log_path, e))?;
        if let Some(every) = a.checkpoint_every {
            if record.epoch > 0 && (record.epoch % every == 0 || record.epoch == total) {
                let mut p = a.out.clone().into_os_string();
                p.push(format!(".epoch{:04}", record.epoch));
                write_checkpoint(Path::new(&p), &Checkpoint::new(cfg.model.clone(), state.weights.clone())?)?;
            }
        }
        Ok(())
    })?;
    let ckpt = Checkpoint::new(cfg.model.clone(), outcome.state.weights)?;
    write_checkpoint(&a.out, &ckpt)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "epoch {}: val epe {} lineacc {} shapeacc {}",
            last.epoch,
            fmt_opt(last.epe),
            fmt_opt(last.lineacc),
            fmt_opt(last.shapeacc)
        );
    }
    println!("checkpoint {} sha256 {}", a.out.display(), ckpt.checksum());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

fn correct(a: CorrectArgs) -> Result<(), CliError> {
    let ckpt = read_checkpoint(&a.ckpt)?;
    let image = read_image(&a.input)?;
    let cfg = &ckpt.config;
    if image.height() != cfg.input_h || image.width() != cfg.input_w || image.channels() != cfg.in_channels {
        return Err(CliError::data(format!(
            "--in {}: image is {}x{}x{}, checkpoint expects {}x{}x{}",
            a.input.display(),
            image.channels(),
            image.height(),
            image.width(),
            cfg.in_channels,
            cfg.input_h,
            cfg.input_w
        )));
    }
    let pred = forward(&ckpt.weights, cfg, std::slice::from_ref(&image))?;
    let flow = &pred.flows[0];
    let corrected = crate::geometry::warp_image(&image, flow)?;
    write_image(&a.out, &corrected)?;
    if let Some(path) = &a.dump_flow {
        write_flo(path, flow)?;
    }
    if let Some(path) = &a.dump_mask {
        let seg = pred.seg_logits[0].argmax();
        let (h, w) = (seg.height(), seg.width());
        let tiled = ndarray::Array2::from_shape_fn((h, 2 * w), |(i, j)| seg.data()[[j / w, i, j % w]]);
        write_mask(path, &tiled)?;
    }
    log::info!(
        "flow-derived class counts {:?}",
        flow_to_seg(flow, crate::geometry::DEFAULT_DELTA).map(|s| s.class_counts()).ok()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = read_checkpoint(&a.ckpt)?;
    let samples = read_dataset(&a.data)?;
    let cfg = TrainConfig {
        model: ckpt.config.clone(),
        ..TrainConfig::default()
    };
    check_sizes(&samples, &cfg, "--data")?;
    let report = evaluate_dataset(&samples, &ckpt.weights, &ckpt.config)?;
    fs::write(&a.report, report.to_json()).map_err(|e| io_err(&a.report, e))?;
    if let Some(path) = &a.csv {
        fs::write(path, report.to_csv()).map_err(|e| io_err(path, e))?;
    }
    println!(
        "{} samples: lineacc {} shapeacc {} epe {}",
        report.num_samples,
        fmt_opt(report.lineacc),
        fmt_opt(report.shapeacc),
        fmt_opt(report.epe)
    );
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<(), CliError> {
    if let Some(m) = &a.module {
        if !gradcheck::MODULES.contains(&m.as_str()) {
            return Err(CliError::usage(format!(
                "--module {m:?} is unknown; choose one of {}",
                gradcheck::MODULES.join(", ")
            )));
        }
    }
    let results = gradcheck::run(a.module.as_deref(), a.seed)?;
    println!("{:<20} {:>14} {:>10} {:>8}  status", "module", "max_rel_error", "tolerance", "entries");
    for r in &results {
        println!(
            "{:<20} {:>14.3e} {:>10.0e} {:>8}  {}",
            r.module,
            r.max_rel_error,
            r.tolerance,
            r.entries_checked,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).map(|r| r.module.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::data(format!("gradient check failed for {}", failed.join(", "))))
    }
}
