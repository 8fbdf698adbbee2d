//! `powercast`: workload-driven system power prediction.
//!
//! Subcommands cover the whole loop: generate a synthetic trace, train the
//! model stack on one window, predict and evaluate on another, and monitor
//! the model fit for failure alarms.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use powercast::aggregate;
use powercast::anomaly::{self, AlarmKind};
use powercast::config::{parse_time, Config};
use powercast::error::Error;
use powercast::evaluate::{reports_for_models, window_values, EvaluationReport};
use powercast::ingest;
use powercast::pipeline::{self, predict_all_jobs, train_models};
use powercast::synth::{self, FaultSpec, GeneratorSpec};
use powercast::syslayer::predict_system;
use powercast::trace::{build_grid, Timestamp, ALIGN_WINDOW_AFTER, ALIGN_WINDOW_BEFORE, DEFAULT_GRID_STEP};
use powercast::Result;

#[derive(Parser)]
#[command(name = "powercast", version, about = "Workload-driven system power prediction for hybrid clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace with known ground truth.
    Synth(SynthArgs),
    /// Train per-user job models and the linear system layer.
    Train(RunArgs),
    /// Predict component and system power series from workload.
    Predict(RunArgs),
    /// Evaluate all three model layers on the test window.
    Evaluate(RunArgs),
    /// Scan the test window for fit-degradation and node-outage alarms.
    Monitor(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for the generated CSV tables and idle.cfg.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    nodes: u32,
    #[arg(long, default_value_t = 7)]
    days: u32,
    #[arg(long, default_value_t = 10)]
    users: u32,
    #[arg(long, default_value_t = 50)]
    jobs_per_user: u32,
    /// True component-to-system slope.
    #[arg(long, default_value_t = 1.5)]
    slope: f64,
    /// True component-to-system intercept in watts.
    #[arg(long, default_value_t = 2000.0)]
    intercept: f64,
    /// Relative measurement noise (0 disables noise).
    #[arg(long, default_value_t = 0.0)]
    noise_rel: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Inject a full outage at this time (epoch seconds or ISO-8601).
    #[arg(long)]
    outage_at: Option<String>,
    /// Seconds of system-power drift before the outage.
    #[arg(long, default_value_t = 7200)]
    drift_lead: i64,
    /// Relative drift amplitude reached right before the outage.
    #[arg(long, default_value_t = 0.0)]
    drift_magnitude: f64,
}

#[derive(Args)]
struct RunArgs {
    /// key=value run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Window overrides, epoch seconds or ISO-8601.
    #[arg(long)]
    train_start: Option<String>,
    #[arg(long)]
    train_end: Option<String>,
    #[arg(long)]
    test_start: Option<String>,
    #[arg(long)]
    test_end: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Monitor(args) => cmd_monitor(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Usage(_) => 2,
            _ => 1,
        });
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = GeneratorSpec {
        nodes: args.nodes,
        days: args.days,
        users: args.users,
        jobs_per_user: args.jobs_per_user,
        true_system_slope: args.slope,
        true_system_intercept: args.intercept,
        noise_rel: args.noise_rel,
        seed: args.seed,
    };
    let (mut trace, _) = synth::generate(&spec)?;
    if let Some(outage) = &args.outage_at {
        trace = synth::inject_fault(
            trace,
            &FaultSpec {
                outage_at: parse_time(outage)?,
                drift_lead: args.drift_lead,
                drift_magnitude: args.drift_magnitude,
            },
        )?;
    }
    trace.write_files(&args.out_dir)?;
    println!(
        "wrote {} jobs over [{}, {}] to {}",
        trace.jobs.len(),
        trace.grid.start(),
        trace.grid.end(),
        args.out_dir.display()
    );
    Ok(())
}

fn load_config(args: &RunArgs) -> Result<Config> {
    let mut cfg = Config::from_file(&args.config)?;
    if let Some(dir) = &args.out_dir {
        cfg.out_dir = dir.clone();
    }
    let override_window =
        |window: &mut Option<(i64, i64)>, start: &Option<String>, end: &Option<String>, name: &str| -> Result<()> {
            if start.is_none() && end.is_none() {
                return Ok(());
            }
            let base = window.unwrap_or((i64::MIN, i64::MIN));
            let lo = start.as_ref().map(|s| parse_time(s)).transpose()?.unwrap_or(base.0);
            let hi = end.as_ref().map(|s| parse_time(s)).transpose()?.unwrap_or(base.1);
            if lo == i64::MIN || hi == i64::MIN {
                return Err(Error::Usage(format!("{name} window needs both start and end")));
            }
            *window = Some((lo, hi));
            Ok(())
        };
    override_window(&mut cfg.train_window, &args.train_start, &args.train_end, "train")?;
    override_window(&mut cfg.test_window, &args.test_start, &args.test_end, "test")?;
    Ok(cfg)
}

/// Load the four tables and reconcile them onto a grid spanning the
/// measurements plus any configured windows.
fn load_dataset(cfg: &Config) -> Result<ingest::ReconciledDataset> {
    let jobs = ingest::load_jobs(&cfg.jobs)?;
    let allocations = ingest::load_allocations(&cfg.allocations)?;
    let component = ingest::load_component_power(&cfg.component_power)?;
    let system = ingest::load_system_power(&cfg.system_power)?;
    let idle = ingest::load_idle_table(&cfg.idle)?;

    let step = DEFAULT_GRID_STEP;
    let (mut lo, mut hi) = (i64::MAX, i64::MIN);
    for t in component.iter().chain(&system).map(|s| s.at.secs()) {
        // earliest and latest grid points whose alignment window sees this sample
        let first = (t - ALIGN_WINDOW_AFTER).div_euclid(step) * step
            + if (t - ALIGN_WINDOW_AFTER).rem_euclid(step) == 0 { 0 } else { step };
        lo = lo.min(first);
        hi = hi.max((t + ALIGN_WINDOW_BEFORE).div_euclid(step) * step);
    }
    if lo > hi {
        return Err(Error::Config("no power measurements in the input tables".into()));
    }
    for window in [cfg.train_window, cfg.test_window].into_iter().flatten() {
        lo = lo.min(window.0.div_euclid(step) * step);
        hi = hi.max((window.1 - 1).div_euclid(step) * step);
    }
    lo = lo.max(0);

    let grid = build_grid(Timestamp::new(lo)?, Timestamp::new(hi)?, step)?;
    ingest::reconcile(jobs, allocations, &component, &system, grid, idle)
}

fn cmd_train(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let window = cfg
        .train_window
        .ok_or_else(|| Error::Usage("train window required (train.start/train.end)".into()))?;
    let dataset = load_dataset(&cfg)?;
    let models = train_models(&dataset, window, &cfg.train)?;
    pipeline::save_models(&cfg.out_dir, &models)?;
    let mut svr = 0;
    let mut eam = 0;
    for m in models.users.values() {
        match m.tag() {
            powercast::jobpower::VariantTag::Svr => svr += 1,
            _ => eam += 1,
        }
    }
    println!(
        "trained {} user models ({svr} svr, {eam} average), lm slope={} intercept={}, train nrmse={:.6}",
        models.users.len(),
        models.lm.slope,
        models.lm.intercept,
        models.train_nrmse
    );
    Ok(())
}

fn cmd_predict(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let dataset = load_dataset(&cfg)?;
    let models = pipeline::load_models(&cfg.out_dir)?;
    let predictions = predict_all_jobs(&dataset, &models)?;
    let pred_comp = aggregate::predicted_component_series(&predictions, &dataset, &dataset.idle)?;
    let pred_sys = predict_system(&models.lm, &pred_comp);

    let window = cfg
        .test_window
        .unwrap_or((dataset.grid.start().secs(), dataset.grid.end().secs() + 1));
    let series_dir = cfg.out_dir.join("series");
    std::fs::create_dir_all(&series_dir).map_err(|e| Error::Io { path: series_dir.clone(), source: e })?;
    pipeline::write_series_csv(
        &series_dir.join("component_predicted.csv"),
        &window_values(&pred_comp.values, window),
    )?;
    pipeline::write_series_csv(&series_dir.join("system_predicted.csv"), &window_values(&pred_sys.values, window))?;
    println!("wrote predicted series for [{}, {}) to {}", window.0, window.1, series_dir.display());
    Ok(())
}

fn cmd_evaluate(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let test = cfg
        .test_window
        .ok_or_else(|| Error::Usage("test window required (test.start/test.end)".into()))?;
    let dataset = load_dataset(&cfg)?;
    let models = pipeline::load_models(&cfg.out_dir)?;
    let (reports, series) = reports_for_models(&dataset, &models, test)?;

    let reports_dir = cfg.out_dir.join("reports");
    std::fs::create_dir_all(&reports_dir).map_err(|e| Error::Io { path: reports_dir.clone(), source: e })?;

    let mut csv = String::from("layer,nrmse,r2,pearson,n_points\n");
    let mut print_layer = |name: &str, r: &EvaluationReport| {
        csv.push_str(&format!("{name},{},{},{},{}\n", r.nrmse, r.r_squared, r.pearson, r.n_points));
        println!(
            "{name}: nrmse={:.6} r2={:.6} pearson={:.6} n={}",
            r.nrmse, r.r_squared, r.pearson, r.n_points
        );
    };
    print_layer("step1", &reports.step1);
    print_layer("step2", &reports.step2);
    print_layer("combined", &reports.combined);
    let eval_path = reports_dir.join("evaluation.csv");
    std::fs::write(&eval_path, csv).map_err(|e| Error::Io { path: eval_path, source: e })?;

    for (name, triples) in [
        ("step1_series.csv", &series.step1),
        ("step2_series.csv", &series.step2),
        ("combined_series.csv", &series.combined),
    ] {
        let mut out = String::from("ts,measured,predicted\n");
        for (t, m, p) in triples {
            out.push_str(&format!("{t},{m},{p}\n"));
        }
        let path = reports_dir.join(name);
        std::fs::write(&path, out).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(())
}

fn cmd_monitor(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let window = cfg
        .test_window
        .ok_or_else(|| Error::Usage("monitor window required (test.start/test.end)".into()))?;
    let dataset = load_dataset(&cfg)?;
    let models = pipeline::load_models(&cfg.out_dir)?;

    let measured_comp = aggregate::measured_component_series(&dataset);
    let meas_comp = window_values(&measured_comp.values, window);
    let meas_sys = window_values(&dataset.system_power, window);
    let est_sys: BTreeMap<i64, f64> = meas_comp.iter().map(|(&t, &x)| (t, models.lm.apply(x))).collect();

    let fit = anomaly::rolling_nrmse(&est_sys, &meas_sys, cfg.anomaly_window_secs, &dataset.grid, cfg.anomaly_min_points);
    let fit = anomaly::WindowedFitSeries { window_secs: fit.window_secs, values: window_values(&fit.values, window) };
    let downs: BTreeMap<i64, usize> = dataset
        .grid
        .points()
        .filter(|&t| t >= window.0 && t < window.1)
        .map(|t| (t, anomaly::down_node_count(&dataset, t)))
        .collect();

    let thresholds = cfg.alarm_thresholds(models.train_nrmse);
    let events = anomaly::detect_alarms(&fit, &downs, dataset.nodes.len(), &thresholds);

    let mut csv = String::from("ts,kind,detail\n");
    for e in &events {
        let kind = match e.kind {
            AlarmKind::FitDegradation => "fit_degradation",
            AlarmKind::MassNodeDown => "mass_node_down",
        };
        println!("{} {kind} {}", e.at, e.detail);
        csv.push_str(&format!("{},{kind},{}\n", e.at, e.detail));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io { path: cfg.out_dir.clone(), source: e })?;
    let path = cfg.out_dir.join("alarms.csv");
    std::fs::write(&path, csv).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    println!("{} alarms written to {}", events.len(), path.display());
    Ok(())
}
