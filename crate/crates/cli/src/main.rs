use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use sobar::airframe::{AirframeModel, FrameConfig};
use sobar::calibration::{
    calibrate, default_calibration, CalibratedModel, CalibrationSet, FitOptions, FrameKey, FrameKind, Quantity,
    TargetFile,
};
use sobar::contact::{drop_test, drop_trajectory, wall_collision, wall_trajectory, ImpactMetrics};
use sobar::dynamics::{InertialParams, Trajectory, DEFAULT_ARM_OFFSET, GRAVITY};
use sobar::mission::Phase;
use sobar::perch::{lateral_offsets, run_perch, PerchOutcome};
use sobar::runlog::{decimate, write_csv, write_events, RunHeader, RunRow};
use sobar::scenario::{sha256_hex, LoadedScenario, Pressure};
use sobar::wrench::{analyze, Certificate, WrenchScenario};

/// Time simulated after the impact in rigid-body drop logs (s).
const DROP_LOG_TAIL: f64 = 0.3;
const WALL_LOG_DURATION: f64 = 0.3;
/// Row spacing of impact logs (s).
const IMPACT_LOG_INTERVAL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "sobar", version, about = "Soft-bodied perching quadrotor simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for randomized trials.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (file for calibrate-contact).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct FrameArgs {
    /// rigid or soft.
    #[arg(long)]
    frame: String,
    /// Arm pressure: kPa as a bare number, or with a kPa/Pa suffix.
    #[arg(long)]
    pressure: Option<String>,
    /// Frame layout: plus or x.
    #[arg(long, default_value = "plus")]
    config: String,
    /// Contact calibration file (defaults to the shipped one).
    #[arg(long)]
    calibration: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Vertical drop tests on the calibrated frame contact.
    DropTest {
        #[command(flatten)]
        frame: FrameArgs,
        /// Drop height (m).
        #[arg(long)]
        height: f64,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Full perching missions from a scenario file.
    Perch {
        /// Scenario file.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the scenario's trial count.
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Horizontal wall strike on the calibrated frame contact.
    Collide {
        #[command(flatten)]
        frame: FrameArgs,
        /// Approach speed (m/s).
        #[arg(long, default_value_t = 2.0)]
        speed: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Grasp wrench space and force-closure verdict for a wrench scenario.
    WrenchHull {
        /// Wrench scenario file
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Beam bending across the modulus table.
    BeamCalib {
        /// Pressures to report (kPa); defaults to the table entries.
        #[arg(long, value_delimiter = ',')]
        pressure: Vec<f64>,
        /// Tip load (N).
        #[arg(long, default_value_t = sobar::airframe::CHARACTERIZATION_LOAD)]
        load: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Fit contact models to drop-test targets.
    CalibrateContact {
        /// Targets file.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    /// Exit 1: the scenario ran but did not succeed.
    Scenario(String),
    /// Exit 2: bad configuration or input.
    Config(String),
}

type Outcome = Result<(), Failure>;

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::DropTest { frame, height, trials, common } => cmd_drop(&frame, height, trials, &common),
        Command::Perch { config, trials, common } => cmd_perch(&config, trials, &common),
        Command::Collide { frame, speed, common } => cmd_collide(&frame, speed, &common),
        Command::WrenchHull { config, common } => cmd_wrench(&config, &common),
        Command::BeamCalib { pressure, load, common } => cmd_beam(&pressure, load, &common),
        Command::CalibrateContact { config, common } => cmd_calibrate(&config, &common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Scenario(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn out_dir(common: &Common) -> Result<Option<PathBuf>, Failure> {
    match &common.out {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Failure::Config(format!("{}: {e}", d.display())))?;
            Ok(Some(d.clone()))
        }
        None => Ok(None),
    }
}

fn csv_bytes(hash: &str, rows: &[RunRow]) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write_csv(&mut buf, &RunHeader::new(hash), rows).map_err(|e| Failure::Scenario(e.to_string()))?;
    Ok(buf)
}

fn samples_to_rows(t: &Trajectory) -> Vec<RunRow> {
    let rows: Vec<RunRow> = t.samples.iter().map(RunRow::from_sample).collect();
    decimate(&rows, IMPACT_LOG_INTERVAL)
}

fn resolve_frame(args: &FrameArgs) -> Result<(CalibratedModel, AirframeModel), Failure> {
    let kind = FrameKind::parse(&args.frame)
        .ok_or_else(|| Failure::Config(format!("unknown frame {:?}; available: rigid, soft", args.frame)))?;
    let config = FrameConfig::parse(&args.config)
        .ok_or_else(|| Failure::Config(format!("unknown frame config {:?}; available: plus, x", args.config)))?;
    let set = match &args.calibration {
        Some(p) => CalibrationSet::from_toml(&read(p)?).map_err(config_err)?,
        None => default_calibration(),
    };
    let key = match kind {
        FrameKind::Rigid => FrameKey::rigid(config),
        FrameKind::Soft => {
            let text = args.pressure.as_deref().ok_or_else(|| Failure::Config("soft frame needs --pressure".into()))?;
            let kpa = match text.parse::<f64>() {
                Ok(v) => v,
                Err(_) => Pressure::parse(text).map_err(config_err)?.kpa(),
            };
            FrameKey::soft(kpa, config)
        }
    };
    let model = set.lookup(&key).map_err(config_err)?.clone();
    let airframe = match kind {
        FrameKind::Rigid => AirframeModel::rigid(config),
        FrameKind::Soft => AirframeModel::soft(key.pressure_kpa.unwrap_or_default(), config),
    };
    airframe.validate().map_err(config_err)?;
    Ok((model, airframe))
}

fn params_for(model: &CalibratedModel) -> InertialParams {
    InertialParams::point_mass_arms(model.mass, DEFAULT_ARM_OFFSET)
}

const METRIC_HEADER: [&str; 8] = [
    "trial",
    "impact_speed_mps",
    "impact_time_ms",
    "peak_force_n",
    "peak_accel_mps2",
    "rebound_speed_mps",
    "restitution",
    "max_compression_mm",
];

fn metric_record(label: &str, m: &ImpactMetrics) -> Vec<String> {
    vec![
        label.to_string(),
        format!("{:.4}", m.impact_speed),
        format!("{:.3}", m.impact_time * 1e3),
        format!("{:.2}", m.peak_force),
        format!("{:.2}", m.peak_accel),
        format!("{:.4}", m.rebound_speed),
        format!("{:.4}", m.restitution()),
        format!("{:.3}", m.max_compression * 1e3),
    ]
}

fn mean_metrics(ms: &[ImpactMetrics]) -> ImpactMetrics {
    let n = ms.len() as f64;
    let avg = |f: fn(&ImpactMetrics) -> f64| ms.iter().map(f).sum::<f64>() / n;
    ImpactMetrics {
        impact_speed: avg(|m| m.impact_speed),
        impact_time: avg(|m| m.impact_time),
        peak_force: avg(|m| m.peak_force),
        peak_accel: avg(|m| m.peak_accel),
        rebound_speed: avg(|m| m.rebound_speed),
        max_compression: avg(|m| m.max_compression),
        energy_absorbed: avg(|m| m.energy_absorbed),
        damping_work: avg(|m| m.damping_work),
        residual_spring_energy: avg(|m| m.residual_spring_energy),
    }
}

fn metrics_table(ms: &[ImpactMetrics]) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = ms.iter().enumerate().map(|(i, m)| metric_record(&i.to_string(), m)).collect();
    if !ms.is_empty() {
        rows.push(metric_record("mean", &mean_metrics(ms)));
    }
    rows
}

fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", header.join("\t"));
    for r in rows {
        let _ = writeln!(out, "{}", r.join("\t"));
    }
}

fn table_csv(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(config_err)?;
    for r in rows {
        w.write_record(r).map_err(config_err)?;
    }
    w.into_inner().map_err(config_err)
}

fn experiment_hash(model: &CalibratedModel, extra: &[(&str, f64)]) -> String {
    let doc = serde_json::json!({ "model": model, "inputs": extra });
    sha256_hex(doc.to_string().as_bytes())
}

fn cmd_drop(args: &FrameArgs, height: f64, trials: usize, common: &Common) -> Outcome {
    let (model, _) = resolve_frame(args)?;
    if !(height > 0.0) {
        return Err(Failure::Config(format!("height must be positive, got {height}")));
    }
    let params = params_for(&model);
    // Every trial is the same deterministic drop; trials exist for table parity
    // with repeated physical drops.
    let results: Vec<(ImpactMetrics, Trajectory)> = (0..trials)
        .into_par_iter()
        .map(|_| {
            let m = drop_test(&model.contact, height, model.mass, GRAVITY).map_err(|e| e.to_string())?;
            let t = drop_trajectory(&model.contact, height, &params, DROP_LOG_TAIL).map_err(|e| e.to_string())?;
            Ok((m, t))
        })
        .collect::<Result<_, String>>()
        .map_err(Failure::Scenario)?;
    let metrics: Vec<ImpactMetrics> = results.iter().map(|r| r.0).collect();
    let table = metrics_table(&metrics);
    print_table(&METRIC_HEADER, &table);
    if let Some(dir) = out_dir(common)? {
        write_file(&dir.join("drop_metrics.csv"), &table_csv(&METRIC_HEADER, &table)?)?;
        let hash = experiment_hash(&model, &[("height", height)]);
        for (i, (_, t)) in results.iter().enumerate() {
            write_file(&dir.join(format!("drop_trial_{i:03}.csv")), &csv_bytes(&hash, &samples_to_rows(t))?)?;
        }
    }
    Ok(())
}

fn cmd_collide(args: &FrameArgs, speed: f64, common: &Common) -> Outcome {
    let (model, _) = resolve_frame(args)?;
    if !(speed > 0.0) {
        return Err(Failure::Config(format!("speed must be positive, got {speed}")));
    }
    let params = params_for(&model);
    let m = wall_collision(&model.contact, model.mass, speed).map_err(|e| Failure::Scenario(e.to_string()))?;
    let traj = wall_trajectory(&model.contact, speed, &params, WALL_LOG_DURATION)
        .map_err(|e| Failure::Scenario(e.to_string()))?;
    let table = vec![metric_record("0", &m)];
    print_table(&METRIC_HEADER, &table);
    if let Some(dir) = out_dir(common)? {
        write_file(&dir.join("collide_metrics.csv"), &table_csv(&METRIC_HEADER, &table)?)?;
        let hash = experiment_hash(&model, &[("speed", speed)]);
        write_file(&dir.join("collide_trial_000.csv"), &csv_bytes(&hash, &samples_to_rows(&traj))?)?;
    }
    Ok(())
}

fn cmd_perch(path: &Path, trials: Option<usize>, common: &Common) -> Outcome {
    let scenario = LoadedScenario::load(path).map_err(config_err)?;
    let run = &scenario.config.run;
    let seed = common.seed.unwrap_or(run.seed);
    let offsets = lateral_offsets(seed, trials.unwrap_or(run.trials), run.lateral_noise);
    let setups = offsets.iter().map(|&o| scenario.perch_setup(o)).collect::<Result<Vec<_>, _>>().map_err(config_err)?;
    let outcomes: Vec<PerchOutcome> = setups
        .par_iter()
        .map(run_perch)
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Scenario(e.to_string()))?;

    println!("trial\tlateral_offset_m\tverdict\timpact_speed_mps\tpeak_grasp_load_n\tcapacity_n\tphases");
    for (i, o) in outcomes.iter().enumerate() {
        let phases: Vec<&str> = o.phase_sequence().iter().map(|p| p.label()).collect();
        println!(
            "{i}\t{:+.4}\t{}\t{}\t{:.1}\t{:.2}\t{}",
            o.lateral_offset,
            o.verdict.label(),
            o.stats.impact_speed.map_or("-".into(), |v| format!("{v:.3}")),
            o.stats.peak_grasp_load,
            o.stats.capacity,
            phases.join(">"),
        );
    }
    let done = outcomes.iter().filter(|o| o.verdict == Phase::Done).count();
    println!("successes {done}/{}", outcomes.len());

    if let Some(dir) = out_dir(common)? {
        for (i, o) in outcomes.iter().enumerate() {
            let rows: Vec<RunRow> = o.rows.iter().map(RunRow::from).collect();
            write_file(&dir.join(format!("perch_trial_{i:03}.csv")), &csv_bytes(&scenario.hash, &rows)?)?;
            let mut ev = Vec::new();
            write_events(&mut ev, &o.events).map_err(|e| Failure::Scenario(e.to_string()))?;
            write_file(&dir.join(format!("perch_trial_{i:03}.events.jsonl")), &ev)?;
        }
        let summary = serde_json::json!({
            "config_sha256": scenario.hash,
            "seed": seed,
            "successes": done,
            "trials": outcomes.iter().map(|o| serde_json::json!({
                "lateral_offset": o.lateral_offset,
                "verdict": o.verdict,
                "stats": o.stats,
            })).collect::<Vec<_>>(),
        });
        write_file(&dir.join("perch_summary.json"), serde_json::to_string_pretty(&summary).map_err(config_err)?.as_bytes())?;
    }
    if done == outcomes.len() {
        Ok(())
    } else {
        Err(Failure::Scenario(format!("{} of {} trials failed", outcomes.len() - done, outcomes.len())))
    }
}

fn cmd_wrench(path: &Path, common: &Common) -> Outcome {
    let s = WrenchScenario::from_toml(&read(path)?).map_err(config_err)?;
    let a = analyze(&s).map_err(config_err)?;
    println!("scenario {}", a.name);
    println!("external fx={:.4} fy=[{:.4}, {:.4}] tau={:.4}", a.external.fx, a.external.fy_min, a.external.fy_max, a.external.tau);
    println!("verdict {:?}", a.verdict);
    for (i, c) in a.endpoint_closures.iter().enumerate() {
        match &c.certificate {
            Certificate::Coefficients(w) => println!("endpoint {i}: {:?} coefficients {w:?}", c.verdict),
            Certificate::Separator { normal, margin } => {
                println!("endpoint {i}: {:?} separator n={normal:?} margin={margin:.6}", c.verdict)
            }
        }
    }
    println!("origin_margin {:.6}", a.origin_margin);
    println!("hull_vertices {}", a.hull.vertices.len());
    for v in &a.hull.vertices {
        println!("{:.6}\t{:.6}\t{:.6}", v.fx, v.fy, v.tau);
    }
    if let Some(dir) = out_dir(common)? {
        write_file(&dir.join("wrench.json"), serde_json::to_string_pretty(&a).map_err(config_err)?.as_bytes())?;
    }
    Ok(())
}

fn cmd_beam(pressures: &[f64], load: f64, common: &Common) -> Outcome {
    let table = sobar::airframe::default_modulus_table();
    let list: Vec<f64> =
        if pressures.is_empty() { table.iter().map(|p| p.pressure_kpa).collect() } else { pressures.to_vec() };
    let header = ["pressure_kpa", "modulus_pa", "tip_deflection_mm", "tip_angle_deg", "thrust_loss_coeff"];
    let mut rows = Vec::new();
    for p in list {
        let a = AirframeModel::soft(p, FrameConfig::Plus);
        let e = a.modulus().map_err(config_err)?;
        let d = a.beam_deflection(load).map_err(config_err)?;
        rows.push(vec![
            format!("{p}"),
            format!("{e:.6e}"),
            format!("{:.4}", d.tip_deflection * 1e3),
            format!("{:.4}", d.tip_angle.to_degrees()),
            format!("{:.5}", d.thrust_loss_coeff),
        ]);
    }
    print_table(&header, &rows);
    if let Some(dir) = out_dir(common)? {
        write_file(&dir.join("beam.csv"), &table_csv(&header, &rows)?)?;
    }
    Ok(())
}

fn cmd_calibrate(path: &Path, common: &Common) -> Outcome {
    let targets = TargetFile::from_toml(&read(path)?).map_err(config_err)?;
    let set = calibrate(&targets.targets, &FitOptions::default()).map_err(config_err)?;
    println!("group\theight_m\tquantity\ttarget\tsimulated\trelative_error");
    for m in &set.models {
        for r in &m.residuals {
            let (name, scale) = match r.quantity {
                Quantity::ImpactTime => ("impact_time_ms", 1e3),
                Quantity::PeakForce => ("peak_force_n", 1.0),
            };
            println!(
                "{}\t{}\t{name}\t{:.2}\t{:.2}\t{:+.4}",
                m.key(),
                r.height,
                r.target * scale,
                r.simulated * scale,
                r.relative_error
            );
        }
    }
    if let Some(out) = &common.out {
        let file = if out.extension().is_some() { out.clone() } else { out.join("contact_calibration.toml") };
        if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(config_err)?;
        }
        write_file(&file, set.to_toml().as_bytes())?;
    }
    Ok(())
}
