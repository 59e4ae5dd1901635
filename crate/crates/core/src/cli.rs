//! `evsched` command line: scenario generation, single runs, forecasting,
//! method comparison and the exhaustive oracle cross-check.
//!
//! Exit codes: 0 success, 2 input error, 3 runtime or solver error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::convenience::total_convenience_j2;
use crate::domain::{Scenario, TimeGrid};
use crate::eval::oracle::{brute_force_schedule, tiny_instance, TinySpec};
use crate::eval::{
    avg_charging_time, compare_methods, generate_scenario, synthetic_base_load,
    write_comparison_csv, BaseLoad, CompareConfig, EvalError, ScenarioSpec,
};
use crate::forecast::ingest::LoadHistory;
use crate::forecast::metrics::seasonal_average_ahead;
use crate::forecast::synthetic::SyntheticLoadParams;
use crate::forecast::{
    fit_arima, forecast, mape, ArimaOrders, ForecastError, ForecasterKind, DEFAULT_PREVAVG_DAYS,
};
use crate::pricing::total_cost_j1;
use crate::qpsolver::{assemble_p1, solve_p1, SolverOptions};
use crate::scheduler::{
    check_feasibility, run_csa, run_method, unmet_demand, write_schedule_csv, write_slots_csv,
    ChargingSchedule, Method, RunContext, RunReport, FEASIBILITY_TOL,
};

pub const METRICS_SCHEMA: &str = "# evsched metrics v1";
pub const FORECAST_SCHEMA: &str = "# evsched forecast v1";
pub const ORACLE_SCHEMA: &str = "# evsched oracle v1";

/// Days of synthetic base load generated ahead of the scheduled day.
const DEFAULT_HISTORY_DAYS: usize = 14;
/// Allowed gap between the online cost and the offline optimum, in solver tolerances.
const ORACLE_TOL_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("writing {}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "evsched", version, about = "Online EV charging scheduler")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded scenario file.
    Generate(GenerateArgs),
    /// Schedule one scenario with one method.
    Run(RunArgs),
    /// Fit a seasonal ARIMA to a load history and score it on a held-out tail.
    Forecast(ForecastArgs),
    /// Compare all methods over EV counts and merit weights.
    Compare(CompareArgs),
    /// Cross-check solver and online cost against exhaustive search on a tiny instance.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ForecasterArg {
    Arima,
    Prevavg,
    Oracle,
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    /// Scenario spec as JSON; fields left out take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec's EV count.
    #[arg(long)]
    pub num_evs: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl SpecArgs {
    fn load(&self) -> Result<ScenarioSpec, CliError> {
        let mut spec = match &self.spec {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| input(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<ScenarioSpec>(&text)
                    .map_err(|e| input(format!("{}: {e}", path.display())))?
            }
            None => ScenarioSpec::default(),
        };
        if let Some(n) = self.num_evs {
            spec.num_evs = n;
        }
        spec.seed = self.seed;
        spec.validate().map_err(input)?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct BaseArgs {
    /// Base-load history, `timestamp,load_kw`; the last full day is scheduled.
    #[arg(long)]
    pub load_csv: Option<PathBuf>,
    /// Days of synthetic history when no load file is given.
    #[arg(long, default_value_t = DEFAULT_HISTORY_DAYS)]
    pub history_days: usize,
    #[arg(long, value_enum, default_value_t = ForecasterArg::Arima)]
    pub forecaster: ForecasterArg,
    /// Seasonal ARIMA orders `p,d,q,P,D,Q,m`.
    #[arg(long, default_value = "1,1,1,1,1,1,96")]
    pub orders: ArimaOrders,
    #[arg(long, default_value_t = DEFAULT_PREVAVG_DAYS)]
    pub prevavg_days: usize,
    /// Solver tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

impl BaseArgs {
    fn solver(&self) -> Result<SolverOptions, CliError> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(input(format!("--tol must be positive, got {}", self.tol)));
        }
        Ok(SolverOptions {
            tol: self.tol,
            ..SolverOptions::default()
        })
    }

    fn forecaster(&self) -> ForecasterKind {
        match self.forecaster {
            ForecasterArg::Arima => ForecasterKind::Arima(self.orders),
            ForecasterArg::Prevavg => ForecasterKind::PrevAvg {
                num_days: self.prevavg_days,
            },
            ForecasterArg::Oracle => ForecasterKind::Oracle,
        }
    }

    fn base_load(&self, grid: &TimeGrid, seed: u64) -> Result<BaseLoad, CliError> {
        match &self.load_csv {
            Some(path) => {
                let h = LoadHistory::from_path(path, grid)
                    .map_err(|e| input(format!("{}: {e}", path.display())))?;
                let (history, actual) = h
                    .split_last_day(grid)
                    .map_err(|e| input(format!("{}: {e}", path.display())))?;
                Ok(BaseLoad { history, actual })
            }
            None => Ok(synthetic_base_load(
                grid,
                self.history_days,
                &SyntheticLoadParams::default(),
                seed,
            )),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file; generated from the spec options when absent.
    #[arg(long, conflicts_with_all = ["spec", "num_evs"])]
    pub scenario: Option<PathBuf>,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub base: BaseArgs,
    #[arg(long, default_value_t = Method::Csa)]
    pub method: Method,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub load_csv: PathBuf,
    #[arg(long, default_value = "1,1,1,1,1,1,96")]
    pub orders: ArimaOrders,
    #[arg(long, default_value_t = 96)]
    pub horizon: usize,
    /// Trailing slots withheld from fitting and used for scoring; defaults to the horizon.
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_PREVAVG_DAYS)]
    pub prevavg_days: usize,
    /// Forecast CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub base: BaseArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "25,50,75,100,125,150")]
    pub ev_counts: Vec<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 2)]
    pub num_evs: usize,
    #[arg(long, default_value_t = 4)]
    pub slots: usize,
    /// Energy grid of the enumeration, kWh.
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    /// Largest demand in grid steps.
    #[arg(long, default_value_t = 12)]
    pub max_units: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Result CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_entry() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EVSCHED_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Oracle(a) => cmd_oracle(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("creating {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("creating {}: {e}", dir.display())))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let spec = args.spec.load()?;
    let scenario = generate_scenario(&spec).map_err(input)?;
    scenario.save(&args.out).map_err(runtime)?;
    log::info!("wrote {} EVs to {}", scenario.evs.len(), args.out.display());
    Ok(())
}

/// Scores of one finished run.
struct Metrics {
    j1: String,
    j2: String,
    charge_slots: String,
    charge_min: String,
    unmet: usize,
    status: String,
}

fn metrics(
    schedule: &ChargingSchedule,
    scenario: &Scenario,
    actual: &[f64],
) -> Result<Metrics, EvalError> {
    let unmet = unmet_demand(schedule, &scenario.evs, FEASIBILITY_TOL).len();
    let (charge_slots, charge_min) =
        match avg_charging_time(schedule, &scenario.evs, &scenario.grid) {
            Ok(c) => (c.slots.to_string(), c.minutes.to_string()),
            Err(EvalError::Incomplete(_)) => (String::new(), String::new()),
            Err(e) => return Err(e),
        };
    let status = match check_feasibility(
        schedule,
        &scenario.evs,
        &scenario.grid,
        actual,
        FEASIBILITY_TOL,
    ) {
        Err(v) => format!("infeasible: {v}"),
        Ok(()) if unmet > 0 => "incomplete".into(),
        Ok(()) => "ok".into(),
    };
    Ok(Metrics {
        j1: total_cost_j1(schedule, actual, &scenario.tariff)?.to_string(),
        j2: total_convenience_j2(schedule, &scenario.evs, &scenario.grid)?.to_string(),
        charge_slots,
        charge_min,
        unmet,
        status,
    })
}

fn write_metrics(
    path: &Path,
    method: Method,
    forecaster: &str,
    num_evs: usize,
    m: &Metrics,
    report: Option<&RunReport>,
) -> Result<(), CliError> {
    let mut out = create(path)?;
    let io = write_err(path);
    writeln!(out, "{METRICS_SCHEMA}").map_err(&io)?;
    let mut w = csv::Writer::from_writer(out);
    let csv_io = |e: csv::Error| runtime(format!("writing {}: {e}", path.display()));
    w.write_record([
        "method",
        "forecaster",
        "num_evs",
        "j1",
        "j2",
        "avg_charge_slots",
        "avg_charge_min",
        "unmet_evs",
        "solver_fallbacks",
        "warnings",
        "status",
    ])
    .map_err(csv_io)?;
    w.write_record([
        method.to_string(),
        forecaster.to_string(),
        num_evs.to_string(),
        m.j1.clone(),
        m.j2.clone(),
        m.charge_slots.clone(),
        m.charge_min.clone(),
        m.unmet.to_string(),
        report.map_or(String::new(), |r| r.solver_fallbacks().to_string()),
        report.map_or(String::new(), |r| r.warnings.len().to_string()),
        m.status.clone(),
    ])
    .map_err(csv_io)?;
    w.flush().map_err(io)
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let scenario = match &args.scenario {
        Some(path) => {
            Scenario::load(path).map_err(|e| input(format!("{}: {e}", path.display())))?
        }
        None => generate_scenario(&args.spec.load()?).map_err(input)?,
    };
    let solver = args.base.solver()?;
    let base = args.base.base_load(&scenario.grid, args.spec.seed)?;
    create_dir(&args.out_dir)?;
    let kind = args.base.forecaster();
    let metrics_path = args.out_dir.join("metrics.csv");
    let failed = |msg: String| -> CliError {
        let m = Metrics {
            j1: String::new(),
            j2: String::new(),
            charge_slots: String::new(),
            charge_min: String::new(),
            unmet: scenario.evs.len(),
            status: format!("error: {msg}"),
        };
        match write_metrics(
            &metrics_path,
            args.method,
            kind.name(),
            scenario.evs.len(),
            &m,
            None,
        ) {
            Ok(()) => CliError::Runtime(msg),
            Err(e) => e,
        }
    };
    let forecaster = kind
        .build(&base.history, &base.actual, scenario.grid.num_slots)
        .map_err(|e| failed(format!("forecaster: {e}")))?;
    let ctx = RunContext {
        grid: &scenario.grid,
        tariff: &scenario.tariff,
        evs: &scenario.evs,
        history: &base.history,
        actual: &base.actual,
        forecaster: forecaster.as_ref(),
        solver,
    };
    let (schedule, report) = run_method(args.method, &ctx).map_err(|e| failed(e.to_string()))?;

    let path = args.out_dir.join("schedule.csv");
    let mut out = create(&path)?;
    write_schedule_csv(&mut out, &schedule).map_err(write_err(&path))?;
    out.flush().map_err(write_err(&path))?;
    let path = args.out_dir.join("slots.csv");
    let mut out = create(&path)?;
    write_slots_csv(&mut out, &report).map_err(write_err(&path))?;
    out.flush().map_err(write_err(&path))?;

    let m = metrics(&schedule, &scenario, &base.actual).map_err(|e| failed(e.to_string()))?;
    write_metrics(
        &metrics_path,
        args.method,
        kind.name(),
        scenario.evs.len(),
        &m,
        Some(&report),
    )?;
    println!(
        "{} with {} EVs: j1 {} j2 {} avg charge {} min, status {}",
        args.method,
        scenario.evs.len(),
        m.j1,
        m.j2,
        m.charge_min,
        m.status
    );
    if m.status.starts_with("infeasible") {
        return Err(runtime(format!("schedule check failed: {}", m.status)));
    }
    Ok(())
}

pub fn cmd_forecast(args: &ForecastArgs) -> Result<(), CliError> {
    let grid = TimeGrid::default();
    let h = LoadHistory::from_path(&args.load_csv, &grid)
        .map_err(|e| input(format!("{}: {e}", args.load_csv.display())))?;
    let holdout = args.holdout.unwrap_or(args.horizon);
    let n = h.energy.len();
    if holdout >= n {
        return Err(input(format!(
            "holdout of {holdout} slots leaves nothing to fit in {n} slots"
        )));
    }
    let train = &h.energy[..n - holdout];
    let predicted = if args.horizon == 0 {
        Vec::new()
    } else {
        let fit = |e: ForecastError| match e {
            ForecastError::InsufficientHistory { .. } | ForecastError::InvalidOrders(_) => input(e),
            _ => runtime(e),
        };
        let model = fit_arima(train, args.orders).map_err(fit)?;
        forecast(&model, train, args.horizon).map_err(fit)?
    };
    let scored = predicted.len().min(holdout);
    let tail = &h.energy[n - holdout..];

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let to_kw = |e: f64| e / grid.slot_hours;
    let io = |e: std::io::Error| runtime(format!("writing forecast: {e}"));
    writeln!(out, "{FORECAST_SCHEMA}").map_err(io)?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let csv_io = |e: csv::Error| runtime(format!("writing forecast: {e}"));
        w.write_record(["timestamp", "forecast_kw", "actual_kw"])
            .map_err(csv_io)?;
        for (k, f) in predicted.iter().enumerate() {
            w.write_record([
                h.timestamp(n - holdout + k)
                    .format("%Y-%m-%dT%H:%M:%S")
                    .to_string(),
                to_kw(*f).to_string(),
                tail.get(k).map_or(String::new(), |a| to_kw(*a).to_string()),
            ])
            .map_err(csv_io)?;
        }
        w.flush().map_err(io)?;
    }
    out.flush().map_err(io)?;

    if scored > 0 {
        let actual = &tail[..scored];
        let arima = mape(&predicted[..scored], actual).map_err(runtime)?;
        let benchmark =
            seasonal_average_ahead(train, args.prevavg_days, args.orders.season, scored)
                .and_then(|p| mape(&p, actual));
        match benchmark {
            Ok(b) => eprintln!("MAPE arima {arima:.4}% prevavg {b:.4}% over {scored} slots"),
            Err(e) => eprintln!("MAPE arima {arima:.4}% over {scored} slots (prevavg: {e})"),
        }
    }
    Ok(())
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let spec = args.spec.load()?;
    if args.ev_counts.is_empty() || args.alpha.is_empty() {
        return Err(input("need at least one EV count and one alpha"));
    }
    if let Some(a) = args.alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(input(format!("alpha {a} outside [0, 1]")));
    }
    let base = args.base.base_load(&spec.grid, spec.seed)?;
    let cfg = CompareConfig {
        spec,
        alphas: args.alpha.clone(),
        ev_counts: args.ev_counts.clone(),
        forecaster: args.base.forecaster(),
        solver: args.base.solver()?,
    };
    let cells = compare_methods(&cfg, &base).map_err(|e| match e {
        EvalError::Forecast(_) => runtime(e),
        _ => input(e),
    })?;
    create_dir(&args.out_dir)?;
    let path = args.out_dir.join("comparison.csv");
    let mut out = create(&path)?;
    write_comparison_csv(&mut out, &cells, &args.alpha).map_err(write_err(&path))?;
    out.flush().map_err(write_err(&path))?;
    let ok = cells.iter().filter(|c| c.result.is_ok()).count();
    println!("{ok} of {} cells succeeded", cells.len());
    if ok == 0 {
        return Err(runtime("every comparison cell failed"));
    }
    Ok(())
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<(), CliError> {
    if !(args.tol.is_finite() && args.tol > 0.0) {
        return Err(input(format!("--tol must be positive, got {}", args.tol)));
    }
    let inst = tiny_instance(&TinySpec {
        num_evs: args.num_evs,
        num_slots: args.slots,
        step_kwh: args.step,
        max_units: args.max_units,
        all_at_start: true,
        seed: args.seed,
    })
    .map_err(input)?;
    let solver = SolverOptions {
        tol: args.tol,
        ..SolverOptions::default()
    };
    let brute = brute_force_schedule(&inst.evs, &inst.base, &inst.tariff, &inst.grid, args.step)
        .map_err(runtime)?
        .ok_or_else(|| runtime("generated instance has no grid schedule"))?;

    let state = crate::domain::FleetState::new(&inst.evs);
    let end = inst.evs.iter().map(|e| e.deadline_slot).max().unwrap_or(1);
    let (qp, _) = assemble_p1(
        &inst.evs,
        &state,
        &inst.grid,
        &inst.tariff,
        1,
        &inst.base[..end],
    )
    .map_err(runtime)?;
    let offline = solve_p1(&qp, &solver).map_err(runtime)?;

    let forecaster = ForecasterKind::Oracle
        .build(&[], &inst.base, inst.grid.num_slots)
        .map_err(runtime)?;
    let ctx = RunContext {
        grid: &inst.grid,
        tariff: &inst.tariff,
        evs: &inst.evs,
        history: &[],
        actual: &inst.base,
        forecaster: forecaster.as_ref(),
        solver,
    };
    let (schedule, _) = run_csa(&ctx).map_err(runtime)?;
    let online = total_cost_j1(&schedule, &inst.base, &inst.tariff).map_err(runtime)?;

    let solver_gap = offline.objective - brute.min_cost;
    let solver_ok = solver_gap <= args.tol.max(brute.resolution_bound);
    let online_gap = (online - offline.objective).abs();
    let online_ok = online_gap <= ORACLE_TOL_FACTOR * args.tol * offline.objective.abs().max(1.0);

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let io = |e: std::io::Error| runtime(format!("writing oracle result: {e}"));
    writeln!(out, "{ORACLE_SCHEMA}").map_err(io)?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let csv_io = |e: csv::Error| runtime(format!("writing oracle result: {e}"));
        w.write_record(["quantity", "value"]).map_err(csv_io)?;
        for (k, v) in [
            ("brute_force_min_cost", brute.min_cost.to_string()),
            ("resolution_bound", brute.resolution_bound.to_string()),
            ("solver_cost", offline.objective.to_string()),
            ("online_cost", online.to_string()),
            ("solver_within_bound", solver_ok.to_string()),
            ("online_matches_solver", online_ok.to_string()),
        ] {
            w.write_record([k, v.as_str()]).map_err(csv_io)?;
        }
        w.flush().map_err(io)?;
    }
    out.flush().map_err(io)?;
    if !(solver_ok && online_ok) {
        return Err(runtime(format!(
            "cross-check failed: solver gap {solver_gap:e}, online gap {online_gap:e}"
        )));
    }
    Ok(())
}
