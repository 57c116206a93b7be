//! Command-line surface and experiment harness.
//!
//! Subcommands: `gen-data`, `ingest-off`, `train`, `eval`, `report`, and
//! `sweep`. Every training invocation writes a run manifest (the fully
//! resolved plan, seeds, and config digest) to its output directory before
//! the first epoch, so any emitted table can be traced back to its inputs.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 I/O error,
//! 3 numeric divergence, 4 file-format error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::mesh::ingest_off_tree;
use crate::data::pcds::{read_dataset, write_dataset};
use crate::data::{generate_synthetic, Dataset, Primitive, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::config::{canonical, load_model_config, mini, render_model_config};
use crate::model::{Scale, Supernet, SupernetSpec};
use crate::report;
use crate::trainer::{
    self, config_digest, evaluate, load_checkpoint, read_metrics_csv, BetaMode, Mode,
    RunSummary, Seeds, TrainPlan,
};

#[derive(Parser)]
#[command(
    name = "tinypoint",
    version,
    about = "Compress point-cloud classifiers: augmentation-trained tiny nets plus distillation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic primitive-shape dataset (PCDS directory).
    GenData(GenDataArgs),
    /// Sample point clouds from an OFF mesh tree laid out as
    /// <root>/<class>/<train|test>/*.off.
    IngestOff(IngestOffArgs),
    /// Train one pipeline mode on a PCDS dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Emit cost/accuracy tables (Markdown or CSV).
    Report(ReportArgs),
    /// Run a canned experiment sweep and aggregate the results.
    Sweep(SweepArgs),
}

/// Entry point used by the binary: parses, dispatches, maps errors to exit
/// codes.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too and must exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData(args) => cmd_gen_data(args),
        Cmd::IngestOff(args) => cmd_ingest_off(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Report(args) => cmd_report(args),
        Cmd::Sweep(args) => cmd_sweep(args),
    }
}

// ---------------------------------------------------------------------------
// Shared pieces

/// Model architecture source: built-in preset or a TOML file (file wins).
#[derive(Args)]
struct ModelArgs {
    /// Model architecture TOML; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in architecture: "mini" (desk scale) or "canonical".
    #[arg(long, default_value = "mini")]
    preset: String,
}

impl ModelArgs {
    fn resolve(&self) -> Result<SupernetSpec> {
        if let Some(path) = &self.config {
            return load_model_config(path);
        }
        match self.preset.as_str() {
            "mini" => Ok(mini()),
            "canonical" => Ok(canonical()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}'; expected 'mini' or 'canonical'"
            ))),
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write a file via a temporary sibling plus rename, so readers never see a
/// half-written manifest.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn parse_scale_list(s: &str) -> Result<Vec<Scale>> {
    s.split(',')
        .map(|part| Scale::from_str(part.trim()))
        .collect()
}

// ---------------------------------------------------------------------------
// gen-data

#[derive(Args)]
struct GenDataArgs {
    /// Comma-separated class list.
    #[arg(
        long,
        default_value = "sphere,cube,cylinder,cone,torus,tetrahedron,ellipsoid,disk"
    )]
    classes: String,
    #[arg(long, default_value_t = 50)]
    train_per_class: usize,
    #[arg(long, default_value_t = 20)]
    test_per_class: usize,
    /// Points per cloud.
    #[arg(long, default_value_t = 256)]
    points: usize,
    /// Gaussian jitter std-dev applied before rotation and normalization.
    #[arg(long, default_value_t = 0.02)]
    sigma: f32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory (PCDS layout: manifest.toml + train/test files).
    #[arg(long)]
    out: PathBuf,
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let classes = args
        .classes
        .split(',')
        .map(|s| Primitive::from_str(s.trim()))
        .collect::<Result<Vec<_>>>()?;
    let spec = SyntheticSpec {
        classes,
        train_per_class: args.train_per_class,
        test_per_class: args.test_per_class,
        points_per_cloud: args.points,
        noise_sigma: args.sigma,
    };
    let ds = generate_synthetic(&spec, args.seed)?;
    write_dataset(&ds, &args.out, Some(args.seed))?;
    println!(
        "wrote {}: {} classes ({}), {} train / {} test clouds, {} points each",
        args.out.display(),
        ds.num_classes(),
        ds.class_names.join(","),
        ds.train.len(),
        ds.test.len(),
        ds.points_per_cloud
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest-off

#[derive(Args)]
struct IngestOffArgs {
    /// Root of the mesh tree: <root>/<class>/<train|test>/*.off.
    #[arg(long)]
    root: PathBuf,
    /// Points sampled per mesh.
    #[arg(long, default_value_t = 256)]
    points: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory (PCDS layout).
    #[arg(long)]
    out: PathBuf,
}

fn cmd_ingest_off(args: IngestOffArgs) -> Result<()> {
    let ds = ingest_off_tree(&args.root, args.points, args.seed)?;
    write_dataset(&ds, &args.out, Some(args.seed))?;
    println!(
        "wrote {}: {} classes ({}), {} train / {} test clouds, {} points each",
        args.out.display(),
        ds.num_classes(),
        ds.class_names.join(","),
        ds.train.len(),
        ds.test.len(),
        ds.points_per_cloud
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Pipeline mode: teacher, tiny, netaug, kd, two-stage, hint, mutual,
    /// or end2end.
    #[arg(long)]
    mode: String,
    /// PCDS dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints, metrics, and the run manifest.
    #[arg(long)]
    out: PathBuf,
    /// Epochs for stage-1-style loops (teacher/tiny/netaug/mutual/end2end
    /// and the first half of two-stage).
    #[arg(long, default_value_t = 30)]
    epochs: u32,
    /// Epochs for distillation loops (kd/hint and the second half of
    /// two-stage).
    #[arg(long, default_value_t = 30)]
    epochs2: u32,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Base Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Multiplicative learning-rate decay factor.
    #[arg(long, default_value_t = 0.7)]
    lr_decay: f64,
    /// Epochs between learning-rate decays.
    #[arg(long, default_value_t = 20)]
    lr_step: u32,
    /// Tiny-loss weight at the start of a stage-1 schedule.
    #[arg(long, default_value_t = 0.9)]
    beta_start: f64,
    /// Tiny-loss weight at the end of a stage-1 schedule.
    #[arg(long, default_value_t = 0.5)]
    beta_end: f64,
    /// Hold the tiny-loss weight constant at this value instead.
    #[arg(long)]
    beta: Option<f64>,
    /// Distillation blend weight.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Distillation temperature.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Distillation-free warm-up epochs (end2end mode).
    #[arg(long, default_value_t = 10)]
    warmup: u32,
    /// Width options per sampling menu; defaults to the model's own count.
    #[arg(long)]
    expand_ratio: Option<usize>,
    /// Master seed; init/data/subnet streams derive from it.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Teacher checkpoint (required by kd/two-stage/hint, and by end2end
    /// past warm-up, whenever alpha > 0).
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Checkpoint to initialize the student from.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Load checkpoints whose config digest does not match this model.
    #[arg(long)]
    allow_digest_mismatch: bool,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    quiet: bool,
}

impl TrainArgs {
    fn build_plan(&self, spec: &SupernetSpec, mode: Mode) -> TrainPlan {
        let mut plan = TrainPlan::new(mode, self.out.clone());
        plan.epochs_stage1 = self.epochs;
        plan.epochs_stage2 = self.epochs2;
        plan.batch_size = self.batch_size;
        plan.adam.lr = self.lr;
        plan.lr_decay = self.lr_decay;
        plan.lr_step_epochs = self.lr_step;
        match self.beta {
            Some(b) => {
                plan.beta_mode = BetaMode::Static;
                plan.beta_start = b;
                plan.beta_end = b;
            }
            None => {
                plan.beta_mode = BetaMode::Linear;
                plan.beta_start = self.beta_start;
                plan.beta_end = self.beta_end;
            }
        }
        plan.kd.alpha = self.alpha;
        plan.kd.temperature = self.temperature;
        plan.warmup_epochs = self.warmup;
        plan.expand_ratio = self.expand_ratio.unwrap_or(spec.width_options);
        plan.seeds = Seeds::from_master(self.seed);
        plan.teacher_checkpoint = self.teacher.clone();
        plan.init_checkpoint = self.init.clone();
        plan.allow_digest_mismatch = self.allow_digest_mismatch;
        plan.quiet = self.quiet;
        plan
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let spec = args.model.resolve()?;
    let mode = Mode::from_str(&args.mode)?;
    let ds = read_dataset(&args.data)?;
    let plan = args.build_plan(&spec, mode);
    plan.validate()?;

    std::fs::create_dir_all(&plan.out_dir).map_err(|e| Error::io(&plan.out_dir, e))?;
    let digest = config_digest(&render_model_config(&spec)?);
    let manifest_path = plan.out_dir.join("run_manifest.toml");
    let mut manifest = RunManifest::new(&plan, &spec, &args.data, digest, args.seed, &ds);
    write_atomic(&manifest_path, &manifest.render()?)?;

    let summary = trainer::run(&plan, &spec, &ds)?;

    manifest.finish(&summary);
    write_atomic(&manifest_path, &manifest.render()?)?;
    for stage in &summary.stages {
        println!(
            "{}: {} epochs, best test OA {:.4}, final test OA {:.4} -> {}",
            stage.name,
            stage.epochs,
            stage.best_test_oa,
            stage.final_test_oa,
            stage.checkpoint_path.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// PCDS dataset directory (test split is used).
    #[arg(long)]
    data: PathBuf,
    /// Width selection to evaluate: "tiny" or "full".
    #[arg(long, default_value = "tiny")]
    selection: String,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Load checkpoints whose config digest does not match this model.
    #[arg(long)]
    allow_digest_mismatch: bool,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let spec = args.model.resolve()?;
    let ds = read_dataset(&args.data)?;
    let digest = config_digest(&render_model_config(&spec)?);
    let ckpt = load_checkpoint(&args.checkpoint)?;
    if ckpt.config_digest != digest && !args.allow_digest_mismatch {
        return Err(Error::Config(format!(
            "checkpoint {} was written for a different model configuration; \
             pass --allow-digest-mismatch to load it anyway",
            args.checkpoint.display()
        )));
    }
    let mut net = Supernet::new(spec, 0)?;
    net.load_state(&ckpt.tensors)?;
    let sel = match args.selection.as_str() {
        "tiny" => net.tiny_selection(),
        "full" => net.full_selection(),
        other => {
            return Err(Error::Config(format!(
                "unknown selection '{other}'; expected 'tiny' or 'full'"
            )))
        }
    };
    let stats = evaluate(&net, &sel, &ds.test, args.batch_size)?;
    println!(
        "oa={:.4} ce={:.6} clouds={} selection={} widths={}",
        stats.oa,
        stats.ce,
        ds.test.len(),
        args.selection,
        sel.describe(&net)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Input cloud size the FLOPs column assumes.
    #[arg(long, default_value_t = 1024)]
    points: usize,
    /// Comma-separated width scales for the cost-only rows.
    #[arg(long, default_value = "1,1/4,1/8")]
    scales: String,
    /// Accuracy row: label=scale=metrics.csv (repeatable).
    #[arg(long = "csv")]
    csvs: Vec<String>,
    /// Label of a row the ΔAcc column is measured against (repeatable).
    #[arg(long)]
    baseline: Vec<String>,
    /// Output format: "markdown" or "csv".
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let spec = args.model.resolve()?;
    let mut rows = report::cost_rows(&spec, &parse_scale_list(&args.scales)?, args.points)?;
    for item in &args.csvs {
        let mut parts = item.splitn(3, '=');
        let (label, scale, path) = match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(s), Some(p)) if !l.is_empty() => (l, s, p),
            _ => {
                return Err(Error::Config(format!(
                    "bad --csv '{item}'; expected label=scale=path"
                )))
            }
        };
        let mut row =
            report::cost_row(label.to_string(), &spec, Scale::from_str(scale)?, args.points)?;
        row.oa = report::best_test_oa(&read_metrics_csv(Path::new(path))?);
        rows.push(row);
    }
    let title = format!("Cost and accuracy: {}", spec.name);
    let text = match args.format.as_str() {
        "markdown" => report::render_markdown(&title, args.points, &rows, &args.baseline)?,
        "csv" => report::render_csv(&title, args.points, &rows, &args.baseline)?,
        other => {
            return Err(Error::Config(format!(
                "unknown format '{other}'; expected 'markdown' or 'csv'"
            )))
        }
    };
    match &args.out {
        Some(path) => write_atomic(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Which sweep: "mode", "temperature", or "scale".
    #[arg(long)]
    sweep: String,
    /// PCDS dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory; each sub-run gets its own subdirectory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: u32,
    #[arg(long, default_value_t = 30)]
    epochs2: u32,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// First master seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Master seeds per row: seed, seed+1, ….
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Teacher checkpoint (mode and temperature sweeps; the scale sweep
    /// trains its own per-scale teachers).
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    warmup: u32,
    /// Run up to N independent sub-runs concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Suppress per-epoch progress lines of the sub-runs.
    #[arg(long)]
    quiet: bool,
}

impl SweepArgs {
    fn base_plan(&self, spec: &SupernetSpec, mode: Mode, out: PathBuf, master: u64) -> TrainPlan {
        let mut plan = TrainPlan::new(mode, out);
        plan.epochs_stage1 = self.epochs;
        plan.epochs_stage2 = self.epochs2;
        plan.batch_size = self.batch_size;
        plan.kd.alpha = self.alpha;
        plan.warmup_epochs = self.warmup;
        plan.expand_ratio = spec.width_options;
        plan.seeds = Seeds::from_master(master);
        plan.teacher_checkpoint = self.teacher.clone();
        plan.quiet = self.quiet;
        plan
    }

    fn masters(&self) -> Vec<u64> {
        (0..self.seeds.max(1)).map(|k| self.seed + k).collect()
    }
}

/// A sweep sub-job: returns the final test accuracy of each run it owns.
/// Jobs borrow the shared immutable dataset, hence the lifetime.
type Job<'a> = Box<dyn FnOnce() -> Result<Vec<f64>> + Send + 'a>;

/// Run jobs in waves of at most `parallel`; results keep their row index.
fn execute_jobs(
    jobs: Vec<(usize, Job<'_>)>,
    parallel: usize,
) -> Vec<(usize, Result<Vec<f64>>)> {
    let width = parallel.max(1);
    let mut queue = jobs;
    let mut results = Vec::with_capacity(queue.len());
    while !queue.is_empty() {
        let take = width.min(queue.len());
        let wave: Vec<(usize, Job<'_>)> = queue.drain(..take).collect();
        let wave_results: Vec<(usize, Result<Vec<f64>>)> = std::thread::scope(|s| {
            let handles: Vec<_> = wave
                .into_iter()
                .map(|(idx, job)| s.spawn(move || (idx, job())))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        });
        results.extend(wave_results);
    }
    results
}

fn final_oa(summary: &RunSummary) -> Result<f64> {
    summary
        .stages
        .last()
        .map(|s| s.final_test_oa)
        .ok_or_else(|| Error::Contract("run produced no stages".to_string()))
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let spec = args.model.resolve()?;
    let ds = read_dataset(&args.data)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut labels: Vec<String> = Vec::new();
    let mut jobs: Vec<(usize, Job<'_>)> = Vec::new();
    let baseline: Option<String>;

    match args.sweep.as_str() {
        "mode" => {
            let modes = [
                Mode::TinyBaseline,
                Mode::NetaugOnly,
                Mode::KdOnly,
                Mode::TwoStage,
                Mode::Hint,
                Mode::Mutual,
                Mode::End2End,
            ];
            baseline = Some(Mode::TinyBaseline.name().to_string());
            for mode in modes {
                let row = labels.len();
                labels.push(mode.name().to_string());
                for master in args.masters() {
                    let out = args.out.join(mode.name()).join(format!("seed{master}"));
                    let plan = args.base_plan(&spec, mode, out, master);
                    plan.validate().map_err(|e| {
                        Error::Config(format!("mode sweep row '{}': {e}", mode.name()))
                    })?;
                    let spec = spec.clone();
                    let ds = &ds;
                    jobs.push((
                        row,
                        Box::new(move || {
                            let summary = trainer::run(&plan, &spec, ds)?;
                            Ok(vec![final_oa(&summary)?])
                        }),
                    ));
                }
            }
        }
        "temperature" => {
            baseline = Some("T=1".to_string());
            for t in [1.0, 2.0, 5.0, 10.0, 15.0, 20.0] {
                let row = labels.len();
                labels.push(format!("T={t}"));
                for master in args.masters() {
                    let out = args.out.join(format!("t{t}")).join(format!("seed{master}"));
                    let mut plan = args.base_plan(&spec, Mode::KdOnly, out, master);
                    plan.kd.temperature = t;
                    plan.validate().map_err(|e| {
                        Error::Config(format!("temperature sweep row T={t}: {e}"))
                    })?;
                    let spec = spec.clone();
                    let ds = &ds;
                    jobs.push((
                        row,
                        Box::new(move || {
                            let summary = trainer::run(&plan, &spec, ds)?;
                            Ok(vec![final_oa(&summary)?])
                        }),
                    ));
                }
            }
        }
        "scale" => {
            // Each width scale is a different weight-sharing ladder, so each
            // row trains its own teacher before its two-stage runs; one job
            // owns the whole row to keep that dependency inside one thread.
            baseline = Some("1/2".to_string());
            for (num, den) in [(1u32, 2u32), (1, 4), (1, 8)] {
                let scale = Scale { num, den };
                let row = labels.len();
                labels.push(scale.to_string());
                let mut row_spec = spec.clone();
                row_spec.tiny_scale = scale;
                row_spec.validate().map_err(|e| {
                    Error::Config(format!("scale sweep row {scale}: {e}"))
                })?;
                let row_dir = args.out.join(format!("scale{num}-{den}"));
                let masters = args.masters();
                let mut teacher_plan = args.base_plan(
                    &row_spec,
                    Mode::Teacher,
                    row_dir.join("teacher"),
                    masters[0],
                );
                teacher_plan.teacher_checkpoint = None;
                let student_plans: Vec<TrainPlan> = masters
                    .iter()
                    .map(|&master| {
                        let mut plan = args.base_plan(
                            &row_spec,
                            Mode::TwoStage,
                            row_dir.join(format!("seed{master}")),
                            master,
                        );
                        // Filled in once the row's teacher exists.
                        plan.teacher_checkpoint =
                            Some(row_dir.join("teacher").join("ckpt_teacher.t3dn"));
                        plan
                    })
                    .collect();
                let ds = &ds;
                jobs.push((
                    row,
                    Box::new(move || {
                        trainer::run(&teacher_plan, &row_spec, ds)?;
                        let mut oas = Vec::with_capacity(student_plans.len());
                        for plan in &student_plans {
                            let summary = trainer::run(plan, &row_spec, ds)?;
                            oas.push(final_oa(&summary)?);
                        }
                        Ok(oas)
                    }),
                ));
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown sweep '{other}'; expected 'mode', 'temperature', or 'scale'"
            )))
        }
    }

    let results = execute_jobs(jobs, args.parallel);
    let mut oas_per_row: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    let mut first_error: Option<Error> = None;
    for (row, outcome) in results {
        match outcome {
            Ok(oas) => oas_per_row[row].extend(oas),
            Err(e) => {
                eprintln!("sweep row '{}' failed: {e}", labels[row]);
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }

    let rows: Vec<report::SweepRow> = labels
        .iter()
        .zip(&oas_per_row)
        .filter(|(_, oas)| !oas.is_empty())
        .map(|(label, oas)| report::SweepRow { label: label.clone(), oas: oas.clone() })
        .collect();
    if !rows.is_empty() {
        let base = baseline
            .as_deref()
            .filter(|b| rows.iter().any(|r| r.label == *b));
        let title = format!("{} sweep: {}", args.sweep, spec.name);
        let md = report::render_sweep_markdown(&title, &rows, base)?;
        let csv = report::render_sweep_csv(&title, &rows, base)?;
        write_atomic(&args.out.join(format!("sweep_{}.md", args.sweep)), &md)?;
        write_atomic(&args.out.join(format!("sweep_{}.csv", args.sweep)), &csv)?;
        print!("{md}");
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Run manifest

#[derive(Serialize)]
struct RunManifest {
    run: ManifestRun,
    seeds: ManifestSeeds,
    plan: ManifestPlan,
    inputs: ManifestInputs,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    outputs: Vec<ManifestOutput>,
}

#[derive(Serialize)]
struct ManifestRun {
    tool_version: String,
    mode: String,
    status: String,
    started_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    finished_unix: Option<u64>,
    out_dir: String,
}

// Decimal strings: TOML integers are i64 and the derived streams use the
// full u64 range.
#[derive(Serialize)]
struct ManifestSeeds {
    master: String,
    init: String,
    data: String,
    subnet: String,
}

#[derive(Serialize)]
struct ManifestPlan {
    epochs_stage1: u32,
    epochs_stage2: u32,
    batch_size: usize,
    lr: f64,
    lr_decay: f64,
    lr_step_epochs: u32,
    beta_mode: String,
    beta_start: f64,
    beta_end: f64,
    alpha: f64,
    temperature: f64,
    warmup_epochs: u32,
    expand_ratio: usize,
    allow_digest_mismatch: bool,
}

#[derive(Serialize)]
struct ManifestInputs {
    data_dir: String,
    dataset_name: String,
    classes: usize,
    train_clouds: usize,
    test_clouds: usize,
    points_per_cloud: usize,
    model_name: String,
    model_config_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    teacher_checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_checkpoint: Option<String>,
}

#[derive(Serialize)]
struct ManifestOutput {
    stage: String,
    metrics_csv: String,
    checkpoint: String,
    epochs: u32,
    best_test_oa: f64,
    final_test_oa: f64,
}

impl RunManifest {
    fn new(
        plan: &TrainPlan,
        spec: &SupernetSpec,
        data_dir: &Path,
        digest: [u8; 32],
        master: u64,
        ds: &Dataset,
    ) -> Self {
        RunManifest {
            run: ManifestRun {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                mode: plan.mode.name().to_string(),
                status: "running".to_string(),
                started_unix: unix_now(),
                finished_unix: None,
                out_dir: plan.out_dir.display().to_string(),
            },
            seeds: ManifestSeeds {
                master: master.to_string(),
                init: plan.seeds.init.to_string(),
                data: plan.seeds.data.to_string(),
                subnet: plan.seeds.subnet.to_string(),
            },
            plan: ManifestPlan {
                epochs_stage1: plan.epochs_stage1,
                epochs_stage2: plan.epochs_stage2,
                batch_size: plan.batch_size,
                lr: plan.adam.lr,
                lr_decay: plan.lr_decay,
                lr_step_epochs: plan.lr_step_epochs,
                beta_mode: match plan.beta_mode {
                    BetaMode::Static => "static".to_string(),
                    BetaMode::Linear => "linear".to_string(),
                },
                beta_start: plan.beta_start,
                beta_end: plan.beta_end,
                alpha: plan.kd.alpha,
                temperature: plan.kd.temperature,
                warmup_epochs: plan.warmup_epochs,
                expand_ratio: plan.expand_ratio,
                allow_digest_mismatch: plan.allow_digest_mismatch,
            },
            inputs: ManifestInputs {
                data_dir: data_dir.display().to_string(),
                dataset_name: ds.name.clone(),
                classes: ds.num_classes(),
                train_clouds: ds.train.len(),
                test_clouds: ds.test.len(),
                points_per_cloud: ds.points_per_cloud,
                model_name: spec.name.clone(),
                model_config_digest: hex(&digest),
                teacher_checkpoint: plan
                    .teacher_checkpoint
                    .as_ref()
                    .map(|p| p.display().to_string()),
                init_checkpoint: plan
                    .init_checkpoint
                    .as_ref()
                    .map(|p| p.display().to_string()),
            },
            outputs: Vec::new(),
        }
    }

    fn finish(&mut self, summary: &RunSummary) {
        self.run.status = "finished".to_string();
        self.run.finished_unix = Some(unix_now());
        self.outputs = summary
            .stages
            .iter()
            .map(|s| ManifestOutput {
                stage: s.name.clone(),
                metrics_csv: s.metrics_path.display().to_string(),
                checkpoint: s.checkpoint_path.display().to_string(),
                epochs: s.epochs,
                best_test_oa: s.best_test_oa,
                final_test_oa: s.final_test_oa,
            })
            .collect();
    }

    fn render(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize run manifest: {e}")))
    }
}
