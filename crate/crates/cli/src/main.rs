use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use mimu_core::calib::{calibrate_with, CalibrationInput, CalibrationOptions, CalibrationResult};
use mimu_core::harness::{emit_report, run_experiment_with, write_atomic, ExperimentPlan, Variant};
use mimu_core::preint::{keyframe_ranges, Preintegrator, VimuState};
use mimu_core::series::ingest_csv;
use mimu_core::sim::{noise_pair_from_toml_str, simulate_array, SimConfig};
use mimu_core::so3::{quat_from_rotation, quat_to_wxyz, Rot3, Vec3};
use mimu_core::vimu::{build_fusion, fuse_series, midpoint_frame, virtual_covariances, VimuSidecar, VirtualSeries};
use mimu_core::{Error, ImuSeries};

/// Multi-IMU pipeline: simulate, calibrate, fuse, preintegrate, evaluate.
#[derive(Parser, Debug)]
#[command(name = "mimu", version)]
struct Cli {
    /// Raise log verbosity (-v info, -vv debug). `MIMU_LOG` takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate every IMU of the array into `<out>/imu_<i>.csv`.
    Simulate(SimulateArgs),
    /// Estimate the extrinsic between two IMUs.
    Calibrate(CalibrateArgs),
    /// Fuse two calibrated IMUs into a virtual IMU at their midpoint.
    Fuse(FuseArgs),
    /// Preintegrate a virtual IMU between keyframes.
    Preintegrate(PreintegrateArgs),
    /// Run the variant comparison experiment.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct Overrides {
    /// Config override as `dotted.key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn collect(&self, extra: &[(&str, Option<f64>)]) -> Vec<String> {
        let mut out = self.set.clone();
        if let Some(seed) = self.seed {
            out.push(format!("seed={seed}"));
        }
        for (key, value) in extra {
            if let Some(v) = value {
                out.push(format!("{key}={v:?}"));
            }
        }
        out
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Simulation TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    freq: Option<f64>,
    /// Duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    imu_a: PathBuf,
    #[arg(long)]
    imu_b: PathBuf,
    /// Noise TOML: one spec for both sensors, or `[a]` and `[b]` tables.
    #[arg(long)]
    noise: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Use only the first N seconds of the overlap.
    #[arg(long)]
    window_secs: Option<f64>,
    /// Jointly re-fit the rotation after the two stages.
    #[arg(long)]
    refine: bool,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[arg(long)]
    imu_a: PathBuf,
    #[arg(long)]
    imu_b: PathBuf,
    /// Calibration JSON written by `calibrate`.
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    noise: PathBuf,
    /// Virtual IMU CSV; the sidecar goes next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PreintegrateArgs {
    /// Virtual IMU CSV written by `fuse`.
    #[arg(long)]
    vimu: PathBuf,
    /// Sidecar JSON; defaults to the CSV path with a `.json` extension.
    #[arg(long)]
    vimu_config: Option<PathBuf>,
    /// Keyframe interval in seconds.
    #[arg(long, default_value_t = 0.5)]
    interval: f64,
    /// JSON-lines output, one record per interval.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Experiment plan TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for samples.jsonl, report.json, plot_data.csv, failures.log.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated variant names, e.g. `1-imu-true,2-imu-calibrated`.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Vec<Variant>,
    /// 100 samples × 5000 sequences instead of the plan's counts.
    #[arg(long)]
    full_scale: bool,
    #[command(flatten)]
    overrides: Overrides,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("input file `{}` does not exist", path.display())))
    }
}

fn require_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Failure::Usage(format!(
            "output directory `{}` does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Domain(e.into()))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Domain(Error::Format(e.to_string())))
}

fn load_pair(imu_a: &Path, imu_b: &Path, noise: &Path) -> CliResult<CalibrationInput> {
    let (na, nb) = noise_pair_from_toml_str(&read_text(noise)?)?;
    let mut series = ingest_csv(&[imu_a, imu_b])?;
    let b = series.pop().expect("two series");
    let a = series.pop().expect("two series");
    Ok(CalibrationInput::new(a, b, na, nb)?)
}

fn simulate(args: &SimulateArgs) -> CliResult {
    if let Some(path) = &args.config {
        require_file(path)?;
    }
    let text = match &args.config {
        Some(path) => read_text(path)?,
        None => String::new(),
    };
    let overrides = args
        .overrides
        .collect(&[("freq", args.freq), ("duration", args.duration)]);
    let cfg = SimConfig::from_toml_str(&text, &overrides)?;
    info!("simulating {} IMUs, {} samples each", cfg.imus.len(), cfg.sample_count());
    let out = simulate_array(&cfg)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Failure::Domain(e.into()))?;
    let resolved = toml::to_string(&cfg).map_err(|e| Failure::Domain(Error::Format(e.to_string())))?;
    for (i, series) in out.series.iter().enumerate() {
        let mut buf = Vec::new();
        series.write_csv(&mut buf)?;
        write_atomic(&args.out.join(format!("imu_{i}.csv")), &buf)?;
    }
    write_atomic(&args.out.join("sim.toml"), resolved.as_bytes())?;
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> CliResult {
    for p in [&args.imu_a, &args.imu_b, &args.noise] {
        require_file(p)?;
    }
    require_parent(&args.out)?;
    let mut input = load_pair(&args.imu_a, &args.imu_b, &args.noise)?;
    if let Some(secs) = args.window_secs {
        input = input.window(secs)?;
    }
    info!("calibrating on {} samples", input.len());
    let res = calibrate_with(
        &input,
        &CalibrationOptions {
            refine_pass: args.refine,
        },
    )?;
    write_atomic(&args.out, to_json(&res)?.as_bytes())?;
    Ok(())
}

fn fuse(args: &FuseArgs) -> CliResult {
    for p in [&args.imu_a, &args.imu_b, &args.calib, &args.noise] {
        require_file(p)?;
    }
    require_parent(&args.out)?;
    let calib = CalibrationResult::from_json(&read_text(&args.calib)?)?;
    let input = load_pair(&args.imu_a, &args.imu_b, &args.noise)?;
    let config = midpoint_frame(&calib.extrinsic, input.noise_a, input.noise_b);
    let fm = build_fusion(&config)?;
    let fused = fuse_series(&config, &fm, &[input.series_a, input.series_b], None)?;
    let sidecar = VimuSidecar {
        noise: virtual_covariances(&config, &fm),
        config,
    };
    let mut buf = Vec::new();
    fused.to_imu_series()?.write_csv(&mut buf)?;
    let sidecar_json = to_json(&sidecar)?;
    write_atomic(&args.out, &buf)?;
    write_atomic(&args.out.with_extension("json"), sidecar_json.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct DeltaRecord {
    index: usize,
    start_ns: i64,
    end_ns: i64,
    dt: f64,
    samples: usize,
    delta_rot_wxyz: [f64; 4],
    delta_vel: [f64; 3],
    delta_pos: [f64; 3],
    /// Diagonal of the 9×9 covariance, ordered rotation, velocity, position.
    cov_diag: [f64; 9],
}

fn preintegrate(args: &PreintegrateArgs) -> CliResult {
    let sidecar_path = args.vimu_config.clone().unwrap_or_else(|| args.vimu.with_extension("json"));
    require_file(&args.vimu)?;
    require_file(&sidecar_path)?;
    require_parent(&args.out)?;
    let sidecar = VimuSidecar::from_json(&read_text(&sidecar_path)?)?;
    let series = VirtualSeries::from_imu_series(&ImuSeries::load_csv(&args.vimu)?)?;
    let fm = build_fusion(&sidecar.config)?;
    let pre = Preintegrator::new(&sidecar.config, &fm, &sidecar.noise, series.freq)?;
    let ranges = keyframe_ranges(series.len(), series.freq, args.interval)?;
    if ranges.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} samples do not fill one {} s interval",
            series.len(),
            args.interval
        ))
        .into());
    }
    let state = VimuState {
        rot: Rot3::identity(),
        pos: Vec3::zeros(),
        vel: Vec3::zeros(),
        bias_g: Vec3::zeros(),
        bias_a: Vec3::zeros(),
    };
    let period_ns = 1e9 / series.freq;
    let mut out = String::new();
    for (index, range) in ranges.into_iter().enumerate() {
        let d = pre.preintegrate(&series.samples[range.clone()], &state)?;
        let record = DeltaRecord {
            index,
            start_ns: series.start_ns + (range.start as f64 * period_ns).round() as i64,
            end_ns: series.start_ns + (range.end as f64 * period_ns).round() as i64,
            dt: d.dt,
            samples: d.count,
            delta_rot_wxyz: quat_to_wxyz(&quat_from_rotation(&d.delta_rot)),
            delta_vel: d.delta_vel.into(),
            delta_pos: d.delta_pos.into(),
            cov_diag: d.cov.diagonal().into(),
        };
        out.push_str(&serde_json::to_string(&record).map_err(|e| Failure::Domain(Error::Format(e.to_string())))?);
        out.push('\n');
    }
    write_atomic(&args.out, out.as_bytes())?;
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> CliResult {
    if let Some(path) = &args.config {
        require_file(path)?;
    }
    let text = match &args.config {
        Some(path) => read_text(path)?,
        None => String::new(),
    };
    let mut plan = ExperimentPlan::from_toml_str(&text, &args.overrides.collect(&[]))?;
    if !args.variants.is_empty() {
        plan.variants = args.variants.clone();
    }
    if args.full_scale {
        plan = plan.full_scale();
    }
    info!(
        "evaluating {} variants, {} samples × {} sequences",
        plan.variants.len(),
        plan.samples,
        plan.sequences
    );

    std::fs::create_dir_all(&args.out).map_err(|e| Failure::Domain(e.into()))?;
    let tmp = tempfile::NamedTempFile::new_in(&args.out).map_err(|e| Failure::Domain(e.into()))?;
    let mut stream = BufWriter::new(tmp);
    let report = run_experiment_with(&plan, |record| {
        let line = serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(stream, "{line}")?;
        stream.flush()?;
        Ok(())
    })?;
    let tmp = stream.into_inner().map_err(|e| Failure::Domain(e.into_error().into()))?;
    emit_report(&report, &args.out)?;
    tmp.persist(args.out.join("samples.jsonl"))
        .map_err(|e| Failure::Domain(e.error.into()))?;
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Fuse(a) => fuse(a),
        Command::Preintegrate(a) => preintegrate(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MIMU_LOG", level)).init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            let payload = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{payload}");
            ExitCode::from(1)
        }
    }
}
