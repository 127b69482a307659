//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tmrfi_core::campaign::{Calibration, CampaignSummary, PhaseSampling, ScenarioKind, ScenarioRunner};
use tmrfi_core::engine::{self, FaultVariant, InputStream, TimingParams};
use tmrfi_core::optics::ThresholdModel;

use crate::error::AppError;
use crate::formats;
use crate::runner::{default_workers, run_scenarios, Experiment, ThresholdSource};

#[derive(Debug, Parser)]
#[command(name = "tmrfi", version, about = "Laser fault-injection campaigns against TMR shift registers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "TMRFI_SEED", global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the register layout and write it as JSON.
    Build {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fire a single shot and report its classification.
    Shoot(ShootArgs),
    /// Run every scenario of the config over its power and duration grid.
    Campaign {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "TMRFI_WORKERS")]
        workers: Option<usize>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Threshold JSON, either a bare model or a calibration report.
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Fit flip-flop thresholds to the config's calibration targets.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<output.dir>/<prefix>_thresholds.json`.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ShootArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scenario supplying stage, frequency, input and objective; the first
    /// one when omitted.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub power: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub duration: f64,
    /// Spot center; overrides the scenario target.
    #[arg(long, requires = "y", allow_negative_numbers = true)]
    pub x: Option<f64>,
    #[arg(long, requires = "x", allow_negative_numbers = true)]
    pub y: Option<f64>,
    /// Fixed clock phase in ns; overrides the scenario phase sampling.
    #[arg(long, allow_negative_numbers = true)]
    pub phase: Option<f64>,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Writes the shot as a one-row CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Writes the observed output trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

fn load(common: &Common) -> Result<Experiment, AppError> {
    let mut e = Experiment::load(&common.config)?;
    if let Some(seed) = common.seed {
        e.config.seed = seed;
    }
    Ok(e)
}

/// Accepts either a bare threshold model or a full calibration report.
pub fn read_thresholds(path: &Path) -> Result<ThresholdModel, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
    if let Ok(c) = serde_json::from_str::<Calibration>(&text) {
        return Ok(c.model);
    }
    let model: ThresholdModel =
        serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
    model.validate()?;
    Ok(model)
}

fn resolve_thresholds(e: &Experiment, file: Option<&Path>) -> Result<ThresholdSource, AppError> {
    match file {
        Some(p) => Ok(ThresholdSource::Explicit(read_thresholds(p)?)),
        None => e.thresholds(),
    }
}

fn describe_source(src: &ThresholdSource, out: &mut dyn Write) -> std::io::Result<()> {
    let (label, m) = match src {
        ThresholdSource::Explicit(m) => ("given", *m),
        ThresholdSource::Calibrated(c) => ("calibrated", c.model),
        ThresholdSource::Default(m) => ("default", *m),
    };
    writeln!(
        out,
        "thresholds ({label}): ff power {:.4} dose {:.3}, voter power {:.4} dose {:.3}",
        m.ff.power, m.ff.dose, m.voter.power, m.voter.dose
    )
}

fn io(e: std::io::Error) -> AppError {
    AppError::io(Path::new("<stdout>"), e)
}

pub fn cmd_build(common: &Common, out_path: &Path, out: &mut dyn Write) -> Result<(), AppError> {
    let e = load(common)?;
    formats::write_file(out_path, formats::layout_json(&e.layout)?.as_bytes())?;
    writeln!(
        out,
        "{} stages: {} flip-flops, {} voters -> {}",
        e.layout.stages(),
        e.layout.ff_count(),
        e.layout.voter_count(),
        out_path.display()
    )
    .map_err(io)
}

pub fn cmd_shoot(args: &ShootArgs, out: &mut dyn Write) -> Result<(), AppError> {
    let e = load(&args.common)?;
    let src = resolve_thresholds(&e, args.thresholds.as_deref())?;
    let mut spec = e.config.scenario(args.scenario.as_deref())?.at_point(args.power, args.duration);
    if let (Some(x), Some(y)) = (args.x, args.y) {
        spec.kind = ScenarioKind::Custom { x_um: x, y_um: y };
    }
    if let Some(phase_ns) = args.phase {
        spec.phase = PhaseSampling::Fixed { phase_ns };
    }
    let ctx = e.context(src.model());
    let runner = ScenarioRunner::new(ctx, &spec)?;
    let induced = runner.induced(args.power, args.duration)?;
    let shot = runner.shot(args.power, args.duration)?;

    let w = &mut *out;
    describe_source(&src, w).map_err(io)?;
    let (x, y) = runner.center();
    writeln!(
        w,
        "scenario {}: stage {}, {} MHz, input '{}', objective {}",
        spec.name, spec.target_stage, spec.freq_mhz, spec.input_bit as u8, spec.objective
    )
    .map_err(io)?;
    writeln!(
        w,
        "pulse at ({x:.3}, {y:.3}) um, power {} %, duration {} ns, trigger {} ns",
        args.power,
        args.duration,
        runner.trigger_ns()
    )
    .map_err(io)?;
    writeln!(w, "induced faults: {}", induced.len()).map_err(io)?;
    for f in &induced {
        let kind = e.layout.cell(f.cell).map_or("?", |c| c.kind.name());
        let what = match f.variant {
            FaultVariant::IllumUpset { .. } => "upset",
            FaultVariant::VoterSet { .. } => "voter SET",
            FaultVariant::StuckState { .. } => "stuck",
        };
        writeln!(w, "  {} {kind} {what}", f.cell).map_err(io)?;
    }
    writeln!(w, "class: {}", shot.class.kind()).map_err(io)?;
    if let Some(b) = shot.class.burst_len() {
        writeln!(w, "burst length: {b}").map_err(io)?;
    }
    writeln!(
        w,
        "repeatability: {:.2} ({}/{} repetitions faulted)",
        shot.repeatability, shot.faulting_reps, shot.repetitions
    )
    .map_err(io)?;

    if let Some(p) = &args.csv {
        formats::write_file(p, &formats::shots_csv(std::slice::from_ref(&shot))?)?;
    }
    if let Some(p) = &args.trace {
        let timing = TimingParams::from_mhz(spec.freq_mhz, shot.phase_ns, e.config.timing.delta_ns)?;
        let mut faults = induced.clone();
        faults.extend_from_slice(&spec.injected);
        let input = InputStream::constant(spec.input_bit);
        let trace = engine::run(&e.layout, &input, timing, &faults, runner.num_edges())?;
        formats::write_file(p, &formats::trace_csv(&trace)?)?;
    }
    Ok(())
}

/// Paths written by a campaign.
#[derive(Debug, Clone)]
pub struct CampaignFiles {
    pub shots: PathBuf,
    pub summary: PathBuf,
    pub table: PathBuf,
    pub config: PathBuf,
}

pub fn campaign_files(dir: &Path, prefix: &str) -> CampaignFiles {
    CampaignFiles {
        shots: dir.join(format!("{prefix}_shots.csv")),
        summary: dir.join(format!("{prefix}_summary.json")),
        table: dir.join(format!("{prefix}_table.md")),
        config: dir.join(format!("{prefix}_config.json")),
    }
}

pub fn cmd_campaign(
    common: &Common,
    workers: Option<usize>,
    out_dir: Option<&Path>,
    thresholds: Option<&Path>,
    out: &mut dyn Write,
) -> Result<CampaignSummary, AppError> {
    let e = load(common)?;
    if e.config.scenarios.is_empty() {
        return Err(AppError::Config("config defines no scenarios".into()));
    }
    let src = resolve_thresholds(&e, thresholds)?;
    let model = src.model();
    let workers = workers.unwrap_or_else(default_workers).max(1);
    let result = run_scenarios(e.context(model), &e.config.scenarios, workers)?;

    let dir = out_dir.map_or_else(|| e.config.output.dir.clone(), Path::to_path_buf);
    let files = campaign_files(&dir, &e.config.output.prefix);
    formats::write_file(&files.shots, &formats::shots_csv(&result.shots)?)?;
    formats::write_file(&files.summary, formats::summary_json(&model, &result.summary)?.as_bytes())?;
    formats::write_file(&files.table, formats::summary_markdown(&result.summary).as_bytes())?;
    // The archived config pins the thresholds actually used.
    let mut archived = e.config.clone();
    archived.optics.thresholds = Some(model);
    formats::write_file(&files.config, serde_json::to_string_pretty(&archived)?.as_bytes())?;

    describe_source(&src, out).map_err(io)?;
    writeln!(out, "{} shots over {} scenarios", result.shots.len(), e.config.scenarios.len()).map_err(io)?;
    formats::summary_text(&result.summary, &mut *out).map_err(io)?;
    for p in [&files.shots, &files.summary, &files.table, &files.config] {
        writeln!(out, "wrote {}", p.display()).map_err(io)?;
    }
    Ok(result.summary)
}

fn report_calibration(c: &Calibration, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "ff power threshold {:.6}, dose threshold {:.6} (tolerance {} %)",
        c.model.ff.power, c.model.ff.dose, c.tolerance_pct
    )?;
    writeln!(out, "freq_mhz objective input duration_ns observed simulated residual")?;
    for r in &c.residuals {
        let t = &r.target;
        writeln!(
            out,
            "{:>8} {:>9} {:>5} {:>11} {:>8} {:>9} {:>+8}",
            t.freq_mhz,
            t.objective,
            t.input_bit as u8,
            t.duration_ns,
            t.min_power_pct,
            r.simulated_min_pct.map_or("none".into(), |p| p.to_string()),
            r.residual_pct
        )?;
    }
    Ok(())
}

pub fn cmd_calibrate(common: &Common, out_path: Option<&Path>, out: &mut dyn Write) -> Result<Calibration, AppError> {
    let e = load(common)?;
    match e.calibrate() {
        Ok(c) => {
            let path = out_path.map_or_else(
                || e.config.output.dir.join(format!("{}_thresholds.json", e.config.output.prefix)),
                Path::to_path_buf,
            );
            formats::write_file(&path, serde_json::to_string_pretty(&c)?.as_bytes())?;
            report_calibration(&c, out).map_err(io)?;
            writeln!(out, "wrote {}", path.display()).map_err(io)?;
            Ok(c)
        }
        Err(AppError::Core(tmrfi_core::Error::CalibrationInfeasible(best))) => {
            writeln!(out, "no threshold pair fits every target; best fit:").map_err(io)?;
            report_calibration(&best, out).map_err(io)?;
            Err(AppError::Core(tmrfi_core::Error::CalibrationInfeasible(best)))
        }
        Err(other) => Err(other),
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), AppError> {
    match &cli.command {
        Command::Build { common, out: path } => cmd_build(common, path, out),
        Command::Shoot(args) => cmd_shoot(args, out),
        Command::Campaign { common, workers, out_dir, thresholds } => {
            cmd_campaign(common, *workers, out_dir.as_deref(), thresholds.as_deref(), out).map(|_| ())
        }
        Command::Calibrate { common, out: path } => cmd_calibrate(common, path.as_deref(), out).map(|_| ()),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
