//! One binary for the whole pipeline: record a trace, inspect it, fit a
//! curve, derive a schedule, run the simulator against it, score the result.
//!
//! Every subcommand is deterministic given its inputs and seed, so repeated
//! invocations write identical bytes. Exit codes: 0 success, 1 usage or
//! file-access error, 2 malformed data, 3 internal failure.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use magcache_core::cache::{
    derive_schedule, save_schedule, CacheConfig, CacheError, ErrorModel, Preset,
};
use magcache_core::calibrate::{
    calibrate_from_trace, load_curve, save_curve, CurveError, MagnitudeCurve,
};
use magcache_core::flowsim::{
    batch_value_range, render_image, sample_baseline, sample_cached, FlowSimError, SimSpec,
};
use magcache_core::image::{read_pgm, write_pgm, GrayImage};
use magcache_core::metrics::{mse, psnr, save_report, ssim, QualityReport};
use magcache_core::stats::MagnitudeStats;
use magcache_core::trace::{read_trace, write_trace, ResidualTrace};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

type CmdResult<T> = Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn bad_data(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: message.into(),
    }
}

fn internal(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INTERNAL,
        message: message.into(),
    }
}

#[derive(Parser)]
#[command(
    name = "magcache",
    version,
    about = "Adaptive residual caching for flow samplers"
)]
struct Cli {
    /// Override the simulator seed from the spec file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress notes on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Work with recorded residual traces.
    #[command(subcommand)]
    Trace(TraceCommand),
    /// Emit per-step statistics of a trace as CSV, optionally with a chart.
    Stats(StatsArgs),
    /// Fit a magnitude curve from a recorded trace.
    Calibrate(CalibrateArgs),
    /// Derive a skip schedule from a curve and a budget.
    Schedule(ScheduleArgs),
    /// Run baseline and cached samplers with one seed and score the result.
    Simulate(SimulateArgs),
    /// Compare two directories of PGM images pairwise by file name.
    Evaluate(EvaluateArgs),
    /// Run a grid of budgets against one baseline, one CSV row each.
    Sweep(SweepArgs),
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Sample the simulator once and record the residual trace.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Simulator spec JSON; built-in defaults apply when omitted.
    #[arg(long)]
    sim: Option<PathBuf>,

    /// Output trace path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Recorded trace to analyze.
    #[arg(long)]
    trace: PathBuf,

    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Also render the three series as an SVG line chart.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Recorded trace to calibrate from.
    #[arg(long)]
    trace: PathBuf,

    /// Steps that must always be computed, comma separated.
    #[arg(long, value_delimiter = ',')]
    pin: Vec<usize>,

    /// Provenance note stored in the curve file.
    #[arg(long)]
    note: Option<String>,

    /// Output curve path.
    #[arg(long)]
    out: PathBuf,
}

/// Budget flags shared by every command that builds a cache config.
#[derive(Args)]
struct BudgetArgs {
    /// Named starting point: open-sora-fast, open-sora-slow, wan-fast, wan-slow.
    #[arg(long)]
    preset: Option<String>,

    /// Accumulated-error budget; a number or "unbounded".
    #[arg(long)]
    delta: Option<String>,

    /// Longest allowed run of consecutive skips.
    #[arg(long = "K")]
    max_skip: Option<usize>,

    /// Fraction of early steps that always compute.
    #[arg(long)]
    retain: Option<f64>,

    /// Extra pinned steps, comma separated.
    #[arg(long, value_delimiter = ',')]
    pin: Vec<usize>,

    /// Error accounting: multiplicative or naive.
    #[arg(long)]
    error_model: Option<String>,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Calibrated curve to schedule against.
    #[arg(long)]
    curve: PathBuf,

    #[command(flatten)]
    budget: BudgetArgs,

    /// Output schedule path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulator spec JSON; built-in defaults apply when omitted.
    #[arg(long)]
    sim: Option<PathBuf>,

    /// Calibrated curve driving the skip decisions.
    #[arg(long)]
    curve: PathBuf,

    #[command(flatten)]
    budget: BudgetArgs,

    /// Report JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Also record the baseline residual trace here.
    #[arg(long)]
    baseline_out: Option<PathBuf>,

    /// Write per-element PGM renders into baseline/ and cached/ under this directory.
    #[arg(long)]
    images_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reference image directory.
    #[arg(long)]
    a: PathBuf,

    /// Candidate image directory.
    #[arg(long)]
    b: PathBuf,

    /// Summary JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Simulator spec JSON; built-in defaults apply when omitted.
    #[arg(long)]
    sim: Option<PathBuf>,

    /// Calibrated curve driving the skip decisions.
    #[arg(long)]
    curve: PathBuf,

    /// Budgets to test, comma separated; each a number or "unbounded".
    #[arg(long, value_delimiter = ',', required = true)]
    deltas: Vec<String>,

    /// Skip caps to test, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    ks: Vec<usize>,

    /// Fraction of early steps that always compute.
    #[arg(long)]
    retain: Option<f64>,

    /// Error accounting: multiplicative or naive.
    #[arg(long)]
    error_model: Option<String>,

    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn run(cli: &Cli) -> CmdResult<()> {
    match &cli.command {
        Command::Trace(TraceCommand::Generate(args)) => cmd_generate(args, cli.seed, cli.quiet),
        Command::Stats(args) => cmd_stats(args, cli.quiet),
        Command::Calibrate(args) => cmd_calibrate(args, cli.quiet),
        Command::Schedule(args) => cmd_schedule(args, cli.quiet),
        Command::Simulate(args) => cmd_simulate(args, cli.seed, cli.quiet),
        Command::Evaluate(args) => cmd_evaluate(args, cli.quiet),
        Command::Sweep(args) => cmd_sweep(args, cli.seed, cli.quiet),
    }
}

fn note(quiet: bool, message: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", message.as_ref());
    }
}

// ---- file plumbing ----

fn open_input(path: &Path) -> CmdResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| usage(format!("cannot open {}: {e}", path.display())))
}

fn create_output(path: &Path) -> CmdResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| usage(format!("cannot create {}: {e}", path.display())))
}

fn finish_output(sink: &mut BufWriter<File>, path: &Path) -> CmdResult<()> {
    sink.flush()
        .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn write_text(out: &Option<PathBuf>, text: &str) -> CmdResult<()> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| internal(format!("stdout: {e}"))),
    }
}

fn load_trace_file(path: &Path) -> CmdResult<ResidualTrace> {
    read_trace(open_input(path)?).map_err(|e| bad_data(format!("{}: {e}", path.display())))
}

fn load_curve_file(path: &Path) -> CmdResult<MagnitudeCurve> {
    load_curve(open_input(path)?).map_err(|e| bad_data(format!("{}: {e}", path.display())))
}

fn load_sim_spec(path: &Option<PathBuf>, seed: Option<u64>) -> CmdResult<SimSpec> {
    let mut spec = match path {
        Some(p) => {
            SimSpec::load(open_input(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SimSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    Ok(spec)
}

// ---- budget resolution ----

fn parse_delta(text: &str) -> CmdResult<f64> {
    if text == "unbounded" {
        return Ok(f64::INFINITY);
    }
    text.parse::<f64>().map_err(|_| {
        usage(format!(
            "--delta must be a number or \"unbounded\", got {text:?}"
        ))
    })
}

fn parse_error_model(text: &str) -> CmdResult<ErrorModel> {
    text.parse().map_err(|e: CacheError| usage(e.to_string()))
}

/// Turns the shared flags into a config: preset first, explicit flags on top.
fn resolve_budget(args: &BudgetArgs) -> CmdResult<CacheConfig> {
    let base = match &args.preset {
        Some(name) => Some(
            name.parse::<Preset>()
                .map_err(|e: CacheError| usage(e.to_string()))?
                .config(),
        ),
        None => None,
    };
    let delta = match &args.delta {
        Some(text) => parse_delta(text)?,
        None => base
            .as_ref()
            .map(|c| c.delta)
            .ok_or_else(|| usage("provide --preset or an explicit --delta"))?,
    };
    let max_skip = match args.max_skip {
        Some(k) => k,
        None => base
            .as_ref()
            .map(|c| c.max_skip)
            .ok_or_else(|| usage("provide --preset or an explicit --K"))?,
    };
    let retain = args
        .retain
        .unwrap_or_else(|| base.as_ref().map_or(0.2, |c| c.retain_fraction));
    let mut config = CacheConfig::new(delta, max_skip, retain).map_err(|e| usage(e.to_string()))?;
    config.error_model = match &args.error_model {
        Some(text) => parse_error_model(text)?,
        None => base.map_or(ErrorModel::Multiplicative, |c| c.error_model),
    };
    config.pinned_steps = args.pin.iter().copied().collect();
    Ok(config)
}

// ---- subcommands ----

fn cmd_generate(args: &GenerateArgs, seed: Option<u64>, quiet: bool) -> CmdResult<()> {
    let spec = load_sim_spec(&args.sim, seed)?;
    let (gmm, sampler) = spec.build().map_err(|e| usage(e.to_string()))?;
    let (_, trace) =
        sample_baseline(&gmm, &sampler, spec.seed).map_err(|e| internal(e.to_string()))?;
    let mut sink = create_output(&args.out)?;
    write_trace(&trace, &mut sink)
        .map_err(|e| usage(format!("cannot write {}: {e}", args.out.display())))?;
    finish_output(&mut sink, &args.out)?;
    note(
        quiet,
        format!(
            "wrote {} ({} steps, {} tokens, {} channels)",
            args.out.display(),
            trace.num_steps(),
            trace.num_tokens(),
            trace.num_channels()
        ),
    );
    Ok(())
}

fn cmd_stats(args: &StatsArgs, quiet: bool) -> CmdResult<()> {
    let trace = load_trace_file(&args.trace)?;
    let stats = MagnitudeStats::compute(&trace)
        .map_err(|e| bad_data(format!("{}: {e}", args.trace.display())))?;

    let mut csv = String::from("step,gamma,sigma,cos_dist\n");
    for t in 0..trace.num_steps() {
        let _ = writeln!(
            csv,
            "{t},{:.16e},{:.16e},{:.16e}",
            stats.gamma[t], stats.sigma[t], stats.cos_dist[t]
        );
    }
    write_text(&args.out, &csv)?;
    if let Some(path) = &args.out {
        note(
            quiet,
            format!("wrote {} ({} rows)", path.display(), trace.num_steps()),
        );
    }

    if let Some(path) = &args.svg {
        let chart = render_chart(&stats.gamma, &stats.sigma, &stats.cos_dist);
        fs::write(path, chart)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        note(quiet, format!("wrote {}", path.display()));
    }
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs, quiet: bool) -> CmdResult<()> {
    let trace = load_trace_file(&args.trace)?;
    let pins: BTreeSet<usize> = args.pin.iter().copied().collect();
    let note_text = args
        .note
        .clone()
        .unwrap_or_else(|| format!("calibrated from {}", args.trace.display()));
    let curve = calibrate_from_trace(&trace, pins, note_text).map_err(|e| match &e {
        CurveError::Stats(_) => bad_data(format!("{}: {e}", args.trace.display())),
        _ => usage(e.to_string()),
    })?;
    let mut sink = create_output(&args.out)?;
    save_curve(&curve, &mut sink)
        .map_err(|e| usage(format!("cannot write {}: {e}", args.out.display())))?;
    finish_output(&mut sink, &args.out)?;
    note(
        quiet,
        format!("wrote {} ({} steps)", args.out.display(), curve.num_steps()),
    );
    Ok(())
}

fn cmd_schedule(args: &ScheduleArgs, quiet: bool) -> CmdResult<()> {
    let config = resolve_budget(&args.budget)?;
    let curve = load_curve_file(&args.curve)?;
    let schedule = derive_schedule(&curve, &config).map_err(|e| match &e {
        CacheError::InvalidConfig(_) => usage(e.to_string()),
        _ => bad_data(e.to_string()),
    })?;
    let mut sink = create_output(&args.out)?;
    save_schedule(&schedule, &mut sink)
        .map_err(|e| usage(format!("cannot write {}: {e}", args.out.display())))?;
    finish_output(&mut sink, &args.out)?;
    note(
        quiet,
        format!(
            "wrote {} ({} of {} steps computed, speedup {:.3})",
            args.out.display(),
            schedule.computed_count,
            schedule.num_steps(),
            schedule.model_call_speedup
        ),
    );
    Ok(())
}

/// Renders one batch as per-element images over a shared value range.
fn render_batch(samples: &[f64], batch: usize, side: usize, lo: f64, hi: f64) -> Vec<GrayImage> {
    let dim = side * side;
    (0..batch)
        .map(|n| render_image(&samples[n * dim..(n + 1) * dim], side, lo, hi))
        .collect()
}

fn write_image_dir(dir: &Path, images: &[GrayImage]) -> CmdResult<()> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    for (n, image) in images.iter().enumerate() {
        let path = dir.join(format!("element_{n:03}.pgm"));
        let mut sink = create_output(&path)?;
        write_pgm(image, &mut sink)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        finish_output(&mut sink, &path)?;
    }
    Ok(())
}

/// Mean quality of a cached batch against the matching baseline renders.
fn batch_quality(base: &[GrayImage], cached: &[GrayImage]) -> CmdResult<(f64, f64, f64)> {
    let mut psnr_total = 0.0;
    let mut ssim_total = 0.0;
    let mut mse_total = 0.0;
    for (a, b) in base.iter().zip(cached) {
        psnr_total += psnr(a, b, 1.0).map_err(|e| bad_data(e.to_string()))?;
        ssim_total += ssim(a, b).map_err(|e| bad_data(e.to_string()))?;
        mse_total += mse(a, b).map_err(|e| bad_data(e.to_string()))?;
    }
    let count = base.len() as f64;
    Ok((psnr_total / count, ssim_total / count, mse_total / count))
}

fn map_sim_error(e: FlowSimError) -> Failure {
    match &e {
        FlowSimError::CurveMismatch { .. } => bad_data(e.to_string()),
        FlowSimError::Cache(CacheError::InvalidConfig(_)) | FlowSimError::InvalidSpec(_) => {
            usage(e.to_string())
        }
        _ => internal(e.to_string()),
    }
}

fn cmd_simulate(args: &SimulateArgs, seed: Option<u64>, quiet: bool) -> CmdResult<()> {
    let spec = load_sim_spec(&args.sim, seed)?;
    let (gmm, sampler) = spec.build().map_err(|e| usage(e.to_string()))?;
    let curve = load_curve_file(&args.curve)?;
    let config = resolve_budget(&args.budget)?;

    let (x_base, trace) =
        sample_baseline(&gmm, &sampler, spec.seed).map_err(|e| internal(e.to_string()))?;
    if let Some(path) = &args.baseline_out {
        let mut sink = create_output(path)?;
        write_trace(&trace, &mut sink)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        finish_output(&mut sink, path)?;
    }
    let (x_cached, log) =
        sample_cached(&gmm, &sampler, &curve, &config, spec.seed).map_err(map_sim_error)?;

    let (lo, hi) = batch_value_range(&x_base);
    let base_images = render_batch(&x_base, sampler.batch, spec.dim_side, lo, hi);
    let cached_images = render_batch(&x_cached, sampler.batch, spec.dim_side, lo, hi);
    if let Some(dir) = &args.images_out {
        write_image_dir(&dir.join("baseline"), &base_images)?;
        write_image_dir(&dir.join("cached"), &cached_images)?;
    }

    let (psnr_db, ssim_mean, mse_mean) = batch_quality(&base_images, &cached_images)?;
    let report = QualityReport {
        psnr_db,
        ssim: ssim_mean,
        mse: mse_mean,
        computed_steps: log.model_calls,
        total_steps: sampler.num_steps,
        model_call_speedup: sampler.num_steps as f64 / log.model_calls as f64,
        lpips: None,
    };
    match &args.out {
        Some(path) => {
            let mut sink = create_output(path)?;
            save_report(&report, &mut sink)
                .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
            finish_output(&mut sink, path)?;
        }
        None => {
            save_report(&report, io::stdout().lock())
                .map_err(|e| internal(format!("stdout: {e}")))?;
        }
    }
    note(
        quiet,
        format!(
            "{} of {} steps computed, psnr {:.2} dB, ssim {:.4}",
            log.model_calls, sampler.num_steps, psnr_db, ssim_mean
        ),
    );
    Ok(())
}

#[derive(Serialize)]
struct DirComparison {
    psnr_db: f64,
    ssim: f64,
    mse: f64,
    pairs: usize,
}

fn list_pgm_names(dir: &Path) -> CmdResult<Vec<String>> {
    let entries =
        fs::read_dir(dir).map_err(|e| usage(format!("cannot read {}: {e}", dir.display())))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| usage(format!("cannot read {}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".pgm") {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(usage(format!("{} contains no .pgm files", dir.display())));
    }
    Ok(names)
}

fn load_pgm_file(path: &Path) -> CmdResult<GrayImage> {
    read_pgm(open_input(path)?).map_err(|e| bad_data(format!("{}: {e}", path.display())))
}

fn cmd_evaluate(args: &EvaluateArgs, quiet: bool) -> CmdResult<()> {
    let names_a = list_pgm_names(&args.a)?;
    let names_b = list_pgm_names(&args.b)?;
    if names_a != names_b {
        return Err(bad_data(format!(
            "directories hold different image sets ({} vs {} files)",
            names_a.len(),
            names_b.len()
        )));
    }
    let mut psnr_total = 0.0;
    let mut ssim_total = 0.0;
    let mut mse_total = 0.0;
    for name in &names_a {
        let a = load_pgm_file(&args.a.join(name))?;
        let b = load_pgm_file(&args.b.join(name))?;
        psnr_total += psnr(&a, &b, 1.0).map_err(|e| bad_data(format!("{name}: {e}")))?;
        ssim_total += ssim(&a, &b).map_err(|e| bad_data(format!("{name}: {e}")))?;
        mse_total += mse(&a, &b).map_err(|e| bad_data(format!("{name}: {e}")))?;
    }
    let count = names_a.len() as f64;
    let summary = DirComparison {
        psnr_db: psnr_total / count,
        ssim: ssim_total / count,
        mse: mse_total / count,
        pairs: names_a.len(),
    };
    let mut text = serde_json::to_string_pretty(&summary)
        .map_err(|e| internal(format!("serialize summary: {e}")))?;
    text.push('\n');
    write_text(&args.out, &text)?;
    note(
        quiet,
        format!(
            "{} pairs, psnr {:.2} dB, ssim {:.4}",
            summary.pairs, summary.psnr_db, summary.ssim
        ),
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs, seed: Option<u64>, quiet: bool) -> CmdResult<()> {
    let spec = load_sim_spec(&args.sim, seed)?;
    let (gmm, sampler) = spec.build().map_err(|e| usage(e.to_string()))?;
    let curve = load_curve_file(&args.curve)?;
    let retain = args.retain.unwrap_or(0.2);
    let error_model = match &args.error_model {
        Some(text) => parse_error_model(text)?,
        None => ErrorModel::Multiplicative,
    };

    let (x_base, _) =
        sample_baseline(&gmm, &sampler, spec.seed).map_err(|e| internal(e.to_string()))?;
    let (lo, hi) = batch_value_range(&x_base);
    let base_images = render_batch(&x_base, sampler.batch, spec.dim_side, lo, hi);

    let mut csv = String::from("delta,K,computed_steps,speedup,psnr,ssim,mse\n");
    for delta_text in &args.deltas {
        let delta = parse_delta(delta_text)?;
        for &k in &args.ks {
            let mut config =
                CacheConfig::new(delta, k, retain).map_err(|e| usage(e.to_string()))?;
            config.error_model = error_model;
            let (x_cached, log) =
                sample_cached(&gmm, &sampler, &curve, &config, spec.seed).map_err(map_sim_error)?;
            let cached_images = render_batch(&x_cached, sampler.batch, spec.dim_side, lo, hi);
            let (psnr_db, ssim_mean, mse_mean) = batch_quality(&base_images, &cached_images)?;
            let speedup = sampler.num_steps as f64 / log.model_calls as f64;
            let _ = writeln!(
                csv,
                "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                delta_text.trim(),
                k,
                log.model_calls,
                speedup,
                psnr_db,
                ssim_mean,
                mse_mean
            );
        }
    }
    write_text(&args.out, &csv)?;
    note(
        quiet,
        format!(
            "{} configurations against one baseline",
            args.deltas.len() * args.ks.len()
        ),
    );
    Ok(())
}

// ---- chart rendering ----

/// A fixed-size SVG line chart of the three per-step series. Hand rolled so
/// repeated runs produce identical bytes.
fn render_chart(gamma: &[f64], sigma: &[f64], cos_dist: &[f64]) -> String {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 360.0;
    const LEFT: f64 = 56.0;
    const RIGHT: f64 = 624.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 320.0;

    let series: [(&str, &str, &[f64]); 3] = [
        ("gamma", "#2563eb", gamma),
        ("sigma", "#dc2626", sigma),
        ("cos_dist", "#16a34a", cos_dist),
    ];

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, _, values) in &series {
        for &v in *values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let lo = lo - pad;
    let hi = hi + pad;

    let steps = gamma.len();
    let x_of = |t: usize| LEFT + (RIGHT - LEFT) * t as f64 / (steps - 1).max(1) as f64;
    let y_of = |v: f64| BOTTOM - (BOTTOM - TOP) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        svg,
        "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{BOTTOM}\" stroke=\"#111111\" stroke-width=\"1\"/>"
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{LEFT}\" y1=\"{BOTTOM}\" x2=\"{RIGHT}\" y2=\"{BOTTOM}\" stroke=\"#111111\" stroke-width=\"1\"/>"
    );
    for frac in [0.0, 0.5, 1.0] {
        let value = lo + frac * (hi - lo);
        let _ = writeln!(
            svg,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{value:.3}</text>",
            LEFT - 6.0,
            y_of(value) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">0</text>",
        x_of(0),
        BOTTOM + 16.0
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
        x_of(steps - 1),
        BOTTOM + 16.0,
        steps - 1
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">step</text>",
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 32.0
    );
    for (i, (name, color, values)) in series.iter().enumerate() {
        let mut points = String::new();
        for (t, &v) in values.iter().enumerate() {
            let sep = if t == 0 { "" } else { " " };
            let _ = write!(points, "{sep}{:.2},{:.2}", x_of(t), y_of(v));
        }
        let _ = writeln!(
            svg,
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{points}\"/>"
        );
        let legend_x = LEFT + 12.0 + 120.0 * i as f64;
        let _ = writeln!(
            svg,
            "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            legend_x,
            TOP + 10.0,
            legend_x + 18.0,
            TOP + 10.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\">{name}</text>",
            legend_x + 24.0,
            TOP + 14.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
