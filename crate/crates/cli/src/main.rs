//! `tbswap`: run swapping and Franson scenarios, fit fringes, simulate
//! delay drift and print rate budgets.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 runtime
//! failure, 3 selftest failure.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tbswap_core::analysis::{drift_statistics, entanglement_verdict, fit_fringe, FringeData};
use tbswap_core::channel::{generate_drift, Weather, WeatherPreset};
use tbswap_core::detection::write_clicks_csv;
use tbswap_core::io::{content_hash, to_json_with_meta, Provenance};
use tbswap_core::mc::{
    calibrate_filter_loss, effective_phase_noise_scale, phase_noise_sigma, rate_budget, run_scenario,
    run_scenario_spooled, RunSummary, CENTRAL,
};
use tbswap_core::scenario::{Experiment, ScenarioConfig};
use tbswap_core::selftest::run_selftest;
use tbswap_core::stabilization::{run_delay_loop, DelayLoopConfig};
use tbswap_core::Error;

#[derive(Parser)]
#[command(name = "tbswap", version, about = "Time-bin entanglement swapping simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario: summary.json, fringe CSVs and heralds.csv.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write every simulated click to clicks.csv.
        #[arg(long)]
        spool: bool,
    },
    /// Derive calibration values (insertion loss for a target rate, phase-noise scale).
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Target event rate per hour for the insertion-loss fit.
        #[arg(long, default_value_t = 3.0)]
        target_per_h: f64,
    },
    /// Fit a fringe CSV (control_value, counts, seconds) and write fit.json.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Expected fringe period in control units.
        #[arg(long, default_value_t = std::f64::consts::TAU)]
        period: f64,
    },
    /// Simulate delay drift and the stabilization loop: drift.csv, residual_stats.json.
    Drift {
        /// rainy, cloudy or sunny; ignored when --config is given.
        #[arg(long, default_value = "cloudy")]
        weather: String,
        /// Take weather and loop settings from a scenario's [drift] section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 24.0)]
        hours: f64,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run with the loop open.
        #[arg(long)]
        open_loop: bool,
    },
    /// Analytic rate budget: rate_budget.json.
    Rates {
        #[command(flatten)]
        common: Common,
    },
    /// Fast invariant checks; exit code 3 on failure.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

enum Failure {
    Input(String),
    Runtime(String),
    Selftest,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::IncompatibleSources(_) => Failure::Input(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Res<T = ()> = Result<T, Failure>;

fn load(common: &Common) -> Res<ScenarioConfig> {
    let mut cfg = ScenarioConfig::from_file(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Res<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, meta: &Provenance, body: &T) -> Res {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), to_json_with_meta(meta, body)? + "\n")?;
    Ok(())
}

fn heralds_csv(s: &RunSummary, dir: &Path, meta: &Provenance) -> Res {
    let rows = s.points.iter().map(|p| {
        let t = &p.tally;
        vec![
            p.control,
            p.duration_s,
            t.frames as f64,
            t.eligible_frames as f64,
            t.simulated_frames as f64,
            t.heralds as f64,
            t.would_be_psi_plus as f64,
            t.unheraldable as f64,
            t.threefold as f64,
            t.class_total(CENTRAL) as f64,
        ]
    });
    tbswap_core::io::write_csv(
        create(dir, "heralds.csv")?,
        Some(&meta.comment()),
        &[
            "control_value",
            "seconds",
            "frames",
            "eligible_frames",
            "simulated_frames",
            "heralds",
            "would_be_psi_plus",
            "unheraldable",
            "threefold",
            "central_events",
        ],
        rows,
    )?;
    Ok(())
}

fn cmd_run(common: &Common, spool: bool) -> Res {
    let cfg = load(common)?;
    let meta = Provenance::new(cfg.config_hash(), cfg.seed);
    let (summary, clicks) = if spool {
        run_scenario_spooled(&cfg, common.workers)?
    } else {
        (run_scenario(&cfg, common.workers)?, Vec::new())
    };
    let out = &common.out;
    write_json(out, "summary.json", &meta, &summary)?;
    let fringe = summary.same_port_fringe();
    let (name, empty) = match cfg.experiment {
        Experiment::Swapping => ("fringe_fourfold.csv", "fringe_twofold.csv"),
        _ => ("fringe_twofold.csv", "fringe_fourfold.csv"),
    };
    let note = format!("{}\nsame-port central-slot counts", meta.comment());
    fringe.write_csv(create(out, name)?, Some(&note))?;
    FringeData::default().write_csv(create(out, empty)?, Some(&format!("{}\nnot measured by this experiment", meta.comment())))?;
    heralds_csv(&summary, out, &meta)?;
    if spool {
        write_clicks_csv(create(out, "clicks.csv")?, Some(&meta.comment()), &clicks)?;
    }
    println!(
        "{}: {} points, {} heralds, {} central events, {:.4} heralds/s",
        summary.name,
        summary.points.len(),
        summary.totals.heralds,
        summary.totals.class_total(CENTRAL),
        summary.heralds_per_s
    );
    Ok(())
}

fn cmd_calibrate(common: &Common, target: f64) -> Res {
    let cfg = load(common)?;
    let meta = Provenance::new(cfg.config_hash(), cfg.seed);
    let budget = rate_budget(&cfg)?;
    let filter = calibrate_filter_loss(&cfg, target)?;
    let mut cal = cfg.clone();
    cal.channels.phase_noise = true;
    let body = json!({
        "target_events_per_h": target,
        "current_events_per_h": budget.events_per_h,
        "filter_db": filter,
        "phase_noise_sigma_rad": [phase_noise_sigma(&cfg.alice), phase_noise_sigma(&cfg.bob)],
        "phase_noise_scale": effective_phase_noise_scale(&cal)?,
        "phase_noise_target": cfg.channels.phase_noise_target,
        "thermal_coefficient_rad_per_c": cfg.sweep.calibration.coefficient_rad_per_c,
    });
    write_json(&common.out, "calibration.json", &meta, &body)?;
    println!("filter_db = {filter:.3} for {target}/h (now {:.3}/h)", budget.events_per_h);
    Ok(())
}

fn cmd_fit(data: &Path, out: &Path, period: f64) -> Res {
    let text = fs::read(data).map_err(|e| Failure::Input(format!("{}: {e}", data.display())))?;
    let fringe = FringeData::read_csv(text.as_slice())?;
    let fit = fit_fringe(&fringe, period)?;
    let verdict = entanglement_verdict(&fit);
    let meta = Provenance::new(content_hash(&fringe), 0);
    write_json(out, "fit.json", &meta, &json!({ "fit": fit, "verdict": verdict }))?;
    println!("V = {:.4} ± {:.4} ({:?})", fit.visibility, fit.visibility_err, verdict.verdict);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_drift(
    weather: &str,
    config: Option<&Path>,
    out: &Path,
    hours: f64,
    dt: f64,
    seed: u64,
    open_loop: bool,
) -> Res {
    let (preset, mut loop_cfg) = match config {
        Some(p) => {
            let cfg = ScenarioConfig::from_file(p)?;
            (cfg.drift.weather, cfg.drift.stabilization)
        }
        None => {
            let w: Weather = weather.parse().map_err(|e: Error| Failure::Input(e.to_string()))?;
            (WeatherPreset::preset(w), DelayLoopConfig::default())
        }
    };
    if open_loop {
        loop_cfg.enabled = false;
    }
    let hash = content_hash(&json!({ "preset": preset, "loop": loop_cfg, "hours": hours, "dt": dt }));
    let meta = Provenance::new(hash, seed);
    let trace = generate_drift(&preset, hours * 3600.0, dt, seed)?;
    let log = run_delay_loop(&trace, &loop_cfg, seed)?;
    log.write_csv(create(out, "drift.csv")?, Some(&meta.comment()))?;
    let raw = drift_statistics(&trace)?;
    let residual = drift_statistics(&log.residual_trace())?;
    let body = json!({
        "weather": preset.label,
        "loop_enabled": loop_cfg.enabled,
        "open_loop": raw,
        "residual": residual,
        "saturation_events": log.saturation_events,
    });
    write_json(out, "residual_stats.json", &meta, &body)?;
    println!(
        "{:?}: peak-to-peak {:.1} ps, residual sigma {:.2} ps",
        preset.label, raw.peak_to_peak_ps, residual.sigma_ps
    );
    Ok(())
}

fn cmd_rates(common: &Common) -> Res {
    let cfg = load(common)?;
    let meta = Provenance::new(cfg.config_hash(), cfg.seed);
    let b = rate_budget(&cfg)?;
    write_json(&common.out, "rate_budget.json", &meta, &b)?;
    for it in &b.items {
        match it.loss_db {
            Some(db) => println!("{:<24} {:>12.4e}  ({db:.2} dB)", it.name, it.factor),
            None => println!("{:<24} {:>12.4e}", it.name, it.factor),
        }
    }
    println!("heralds/s {:.4}  events/h {:.4}", b.heralds_per_s, b.events_per_h);
    Ok(())
}

fn cmd_selftest(out: Option<&Path>, seed: u64) -> Res {
    let report = run_selftest(seed);
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(dir) = out {
        write_json(dir, "selftest.json", &Provenance::new("selftest", seed), &report)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Selftest)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let res = match &cli.cmd {
        Cmd::Run { common, spool } => cmd_run(common, *spool),
        Cmd::Calibrate { common, target_per_h } => cmd_calibrate(common, *target_per_h),
        Cmd::Fit { data, out, period } => cmd_fit(data, out, *period),
        Cmd::Drift { weather, config, out, hours, dt, seed, open_loop } => {
            cmd_drift(weather, config.as_deref(), out, *hours, *dt, *seed, *open_loop)
        }
        Cmd::Rates { common } => cmd_rates(common),
        Cmd::Selftest { out, seed } => cmd_selftest(out.as_deref(), *seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Selftest) => {
            eprintln!("selftest failed");
            ExitCode::from(3)
        }
    }
}
