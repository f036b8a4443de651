use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use adventurer::harness::bench::{bench_scaling, write_bench_csv, BenchOptions, BenchSeries};
use adventurer::harness::data::{GratingSpec, ToyDataset};
use adventurer::harness::manifest::RunManifest;
use adventurer::harness::sweep::{ablation_sweep, Axis};
use adventurer::harness::train::{train_toy, TrainOptions};
use adventurer::harness::verify::{run_suite, Faults, SuiteReport, SUITES};
use adventurer::model::{count_params, Adventurer, Checkpoint, ModelConfig, ModelParams, Preset, TokenMixerKind};
use adventurer::params::ParamStore;
use adventurer::Error;
use clap::Parser;
use serde::Serialize;

use crate::{Cli, Command, Common};

/// Failure with its process exit code: 1 for failed checks or runs, 2 for
/// bad arguments or configs, 3 for I/O.
#[derive(Debug)]
pub enum CliError {
    Failure(String),
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Failure(m) | CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::UnknownKey { .. } => CliError::Usage(msg),
            Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Format(_)
            | Error::Version { .. }
            | Error::Truncated(_) => CliError::Io(msg),
            _ => CliError::Failure(msg),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type Outcome = std::result::Result<(), CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn resolve_config(common: &Common) -> Result<ModelConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ModelConfig::from_file(path)?,
        None => ModelConfig::micro(),
    };
    cfg.apply_overrides(&common.set)?;
    Ok(cfg)
}

/// Output directory plus the manifest that lists what went into it.
struct Run {
    out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn start(subcommand: &str, args: &[String], common: &Common) -> Result<Self, CliError> {
        fs::create_dir_all(&common.out).map_err(|e| io_err(&common.out, e))?;
        let mut manifest = RunManifest::new(subcommand, args.to_vec(), common.seed);
        if let Some(c) = &common.config {
            manifest.flags.insert("config".into(), c.display().to_string());
        }
        if !common.set.is_empty() {
            manifest.flags.insert("set".into(), common.set.join(" "));
        }
        Ok(Self {
            out: common.out.clone(),
            manifest,
        })
    }

    fn flag(&mut self, key: &str, value: impl ToString) {
        self.manifest.flags.insert(key.into(), value.to_string());
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.into());
        self.out.join(name)
    }

    fn write(&mut self, name: &str, text: &str) -> Outcome {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Outcome {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn config(&mut self, cfg: &ModelConfig) -> Outcome {
        let text = cfg.to_text();
        self.manifest.config = Some(text.clone());
        self.write("config.txt", &text)
    }

    fn finish(mut self) -> Outcome {
        let path = self.path("manifest.json");
        self.manifest.save(&path)?;
        Ok(())
    }
}

pub fn run(command: Command, args: Vec<String>) -> Outcome {
    match command {
        Command::Verify {
            suite,
            inject_fault,
            common,
        } => verify(&args, &suite, inject_fault.as_deref(), &common),
        Command::Bench {
            lengths,
            mixers,
            dim,
            repeats,
            max_len,
            common,
        } => bench(&args, &lengths, &mixers, dim, repeats, max_len, &common),
        Command::TrainToy {
            steps,
            lr,
            batch,
            count,
            common,
        } => train_cmd(&args, steps, lr, batch, count, &common),
        Command::Sweep {
            axes,
            steps,
            lr,
            batch,
            count,
            common,
        } => sweep(&args, &axes, steps, lr, batch, count, &common),
        Command::Params { name, preset, common } => params(&args, name.or(preset), &common),
        Command::Inspect { checkpoint, common } => inspect(&args, checkpoint.as_deref(), &common),
        Command::Replay { manifest, out } => replay(&manifest, out),
    }
}

fn verify(args: &[String], suites: &[String], fault: Option<&str>, common: &Common) -> Outcome {
    let faults = match fault {
        None => Faults::default(),
        Some("flip-off") => Faults { disable_flip: true },
        Some(f) => return Err(CliError::Usage(format!("unknown fault `{f}`; known faults: flip-off"))),
    };
    let names: Vec<&str> = if suites.is_empty() {
        SUITES.to_vec()
    } else {
        suites.iter().map(|s| s.trim()).collect()
    };
    if let Some(bad) = names.iter().find(|n| !SUITES.contains(n)) {
        return Err(CliError::Usage(format!(
            "unknown suite `{bad}`; known suites: {}",
            SUITES.join(", ")
        )));
    }
    let mut run = Run::start("verify", args, common)?;
    run.flag("suites", names.join(","));
    if let Some(f) = fault {
        run.flag("inject_fault", f);
    }
    let mut reports: Vec<SuiteReport> = Vec::new();
    for name in &names {
        let report = run_suite(name, common.seed, faults)?;
        match report.first_failure() {
            None => println!("PASS {:<18} {:>7.1}s", report.name, report.seconds),
            Some(why) => println!("FAIL {:<18} {:>7.1}s  {why}", report.name, report.seconds),
        }
        reports.push(report);
    }
    run.write_json("verify.json", &reports)?;
    run.finish()?;
    let failed: Vec<&SuiteReport> = reports.iter().filter(|r| !r.passed()).collect();
    match failed.first().and_then(|r| r.first_failure()) {
        None => {
            println!("{} suites passed", reports.len());
            Ok(())
        }
        Some(first) => Err(CliError::Failure(format!(
            "{} of {} suites failed; first: {first}",
            failed.len(),
            reports.len()
        ))),
    }
}

fn bench(
    args: &[String],
    lengths: &[usize],
    mixers: &[String],
    dim: usize,
    repeats: usize,
    max_len: usize,
    common: &Common,
) -> Outcome {
    if lengths.len() < 3 {
        return Err(CliError::Usage("--lengths needs at least three values".into()));
    }
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Usage("--lengths must be strictly increasing".into()));
    }
    if let Some(l) = lengths.iter().find(|&&l| l == 0 || l > max_len) {
        return Err(CliError::Usage(format!("length {l} is outside 1..={max_len}")));
    }
    if repeats < 5 {
        return Err(CliError::Usage("--repeats must be at least 5".into()));
    }
    let kinds = mixers
        .iter()
        .map(|m| m.trim().parse::<TokenMixerKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut run = Run::start("bench", args, common)?;
    run.flag("lengths", lengths.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","));
    run.flag("mixers", mixers.join(","));
    run.flag("dim", dim);
    run.flag("repeats", repeats);
    let opts = BenchOptions {
        dim,
        repeats,
        seed: common.seed,
        ..BenchOptions::default()
    };
    let mut series: Vec<BenchSeries> = Vec::new();
    for kind in kinds {
        let s = bench_scaling(kind, lengths, opts)?;
        for r in &s.records {
            match &r.failed {
                None => println!(
                    "{:<20} L={:<6} {:>10.3} ms {:>12} B {:>14} MACs",
                    r.config_id, r.len, r.ms_median, r.peak_bytes, r.macs
                ),
                Some(why) => println!("{:<20} L={:<6} failed: {why}", r.config_id, r.len),
            }
        }
        let fmt_slope = |s: Option<f64>| s.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        println!(
            "{:<20} time slope {}  memory slope {}",
            s.mixer,
            fmt_slope(s.time_slope),
            fmt_slope(s.memory_slope)
        );
        series.push(s);
    }
    let records: Vec<_> = series.iter().flat_map(|s| s.records.iter().cloned()).collect();
    let csv_path = run.path("bench.csv");
    write_bench_csv(&csv_path, &records)?;
    run.write_json("bench.json", &series)?;
    run.finish()
}

fn toy_data(cfg: &ModelConfig, seed: u64, count: usize) -> Result<ToyDataset, CliError> {
    if count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    Ok(ToyDataset::gratings(GratingSpec::new(seed, cfg.num_classes, count, cfg.image))?)
}

fn train_options(steps: usize, lr: f32, batch: usize, seed: u64) -> Result<TrainOptions, CliError> {
    if batch == 0 || !(lr.is_finite() && lr > 0.0) {
        return Err(CliError::Usage("--batch and --lr must be positive".into()));
    }
    Ok(TrainOptions {
        steps,
        lr,
        batch,
        seed,
        ..TrainOptions::default()
    })
}

#[derive(Serialize)]
struct TrainSummary {
    options: TrainOptions,
    final_loss: f32,
    final_acc: f32,
    fingerprint: String,
    macs_per_step: u64,
    params: usize,
}

fn train_cmd(args: &[String], steps: usize, lr: f32, batch: usize, count: usize, common: &Common) -> Outcome {
    let cfg = resolve_config(common)?;
    let opts = train_options(steps, lr, batch, common.seed)?;
    let data = toy_data(&cfg, common.seed, count)?;
    let mut run = Run::start("train-toy", args, common)?;
    run.flag("steps", steps);
    run.flag("lr", lr);
    run.flag("batch", batch);
    run.flag("count", count);
    run.config(&cfg)?;
    let (model, trace) = train_toy(&cfg, &data, opts)?;
    let mut csv = String::from("step,loss,lr,grad_norm\n");
    for (i, ((loss, lr), gn)) in trace.losses.iter().zip(&trace.lrs).zip(&trace.grad_norms).enumerate() {
        csv.push_str(&format!("{i},{loss},{lr},{gn}\n"));
    }
    run.write("trace.csv", &csv)?;
    run.write_json(
        "train.json",
        &TrainSummary {
            options: opts,
            final_loss: trace.final_loss,
            final_acc: trace.final_acc,
            fingerprint: format!("{:016x}", trace.fingerprint),
            macs_per_step: trace.macs_per_step,
            params: model.num_params(),
        },
    )?;
    let ckpt = run.path("model.ckpt");
    model.to_checkpoint().save(&ckpt)?;
    println!(
        "trained {} steps: final loss {:.4}, accuracy {:.3}",
        steps, trace.final_loss, trace.final_acc
    );
    run.finish()
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    args: &[String],
    axes: &[String],
    steps: usize,
    lr: f32,
    batch: usize,
    count: usize,
    common: &Common,
) -> Outcome {
    let axes = axes.iter().map(|a| a.parse::<Axis>()).collect::<Result<Vec<_>, _>>()?;
    let cfg = resolve_config(common)?;
    let opts = train_options(steps, lr, batch, common.seed)?;
    let data = toy_data(&cfg, common.seed, count)?;
    let mut run = Run::start("sweep", args, common)?;
    run.flag("axes", axes.iter().map(|a| a.name()).collect::<Vec<_>>().join(","));
    run.flag("steps", steps);
    run.flag("lr", lr);
    run.flag("batch", batch);
    run.flag("count", count);
    run.config(&cfg)?;
    let table = ablation_sweep(&cfg, &axes, &data, opts)?;
    for r in &table.rows {
        match &r.error {
            None => println!(
                "{:<40} loss {:.4}  acc {:.3}",
                r.settings.join(" / "),
                r.final_loss,
                r.final_acc
            ),
            Some(e) => println!("{:<40} error: {e}", r.settings.join(" / ")),
        }
    }
    let csv_path = run.path("sweep.csv");
    table.write_csv(&csv_path)?;
    run.write_json("sweep.json", &table)?;
    let failures = table.failures().count();
    run.finish()?;
    if failures > 0 {
        return Err(CliError::Failure(format!(
            "{failures} of {} sweep cells failed",
            table.rows.len()
        )));
    }
    Ok(())
}

fn params(args: &[String], preset: Option<String>, common: &Common) -> Outcome {
    let (label, cfg, target) = match preset {
        Some(name) => {
            let p: Preset = name.parse()?;
            let mut cfg = ModelConfig::preset(p);
            cfg.apply_overrides(&common.set)?;
            (p.to_string(), cfg, p.target_params().filter(|_| common.set.is_empty()))
        }
        None => ("config".to_string(), resolve_config(common)?, None),
    };
    let count = count_params(&cfg)?;
    let mut run = Run::start("params", args, common)?;
    run.flag("preset", &label);
    run.config(&cfg)?;
    match target {
        Some(t) => println!(
            "{label}: {count} parameters (reference {t}, {:+.2}%)",
            (count as f64 / t as f64 - 1.0) * 100.0
        ),
        None => println!("{label}: {count} parameters (no reference count)"),
    }
    run.finish()
}

fn print_layout(store: &ParamStore) {
    let width = store.names().iter().map(|n| n.len()).max().unwrap_or(4).max(4);
    println!("{:<width$}  {:<16}  {:>12}", "name", "shape", "numel");
    for (name, shape) in store.names().iter().zip(store.shapes()) {
        let numel: usize = shape.iter().product();
        println!("{name:<width$}  {:<16}  {numel:>12}", format!("{shape:?}"));
    }
    println!("{} tensors, {} parameters", store.len(), store.numel());
}

fn inspect(args: &[String], checkpoint: Option<&Path>, common: &Common) -> Outcome {
    let mut run = Run::start("inspect", args, common)?;
    match checkpoint {
        Some(path) => {
            let model = Adventurer::from_checkpoint(Checkpoint::load(path)?)?;
            run.flag("checkpoint", path.display());
            run.config(model.config())?;
            println!("checkpoint {} (seed {})", path.display(), model.seed());
            print!("{}", model.config().to_text());
            print_layout(&model.store);
        }
        None => {
            let cfg = resolve_config(common)?;
            run.config(&cfg)?;
            let mut store = ParamStore::shapes_only();
            ModelParams::declare(&mut store, &cfg)?;
            print!("{}", cfg.to_text());
            print_layout(&store);
        }
    }
    run.finish()
}

/// Drops any `--out` from recorded arguments.
fn strip_out(args: &[String]) -> Vec<String> {
    let mut kept = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept
}

fn replay(path: &Path, out: Option<PathBuf>) -> Outcome {
    let manifest = RunManifest::load(path)?;
    let mut args = manifest.args.clone();
    if let Some(dir) = out {
        args = strip_out(&args);
        args.push("--out".into());
        args.push(dir.display().to_string());
    }
    let cli = Cli::try_parse_from(std::iter::once("adventurer".to_string()).chain(args.iter().cloned()))
        .map_err(|e| CliError::Usage(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(CliError::Usage("a manifest cannot replay another replay".into()));
    }
    println!("replaying: adventurer {}", args.join(" "));
    run(cli.command, args)
}
