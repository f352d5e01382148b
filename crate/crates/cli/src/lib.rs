//! Command implementations behind the `gridalloc` binary.
//!
//! Every command writes its primary artifact (CSV, or JSON for `solve`) to
//! `--out` and a JSON summary to standard error.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gridalloc::game::enumerate_game;
use gridalloc::log_linear::{batch_run, run};
use gridalloc::oracle::gibbs_comparison;
use gridalloc::robustness::{consistency_check, robustness_report};
use gridalloc::steady_state::solve;
use gridalloc::{Configuration, DampingParams, Error, GameContext, Scenario, TemperatureSchedule};

/// Reference values published for the bundled six-unit fixture.
pub const REFERENCE_ALPHA_FLOOR: f64 = 0.8142;
pub const REFERENCE_NETWORK_MARGIN: f64 = 0.4723;

/// Potential at or above this counts as having reached the optimum.
pub const HIT_THRESHOLD: f64 = -1e-3;

#[derive(Debug, Parser)]
#[command(name = "gridalloc", version, about = "Allocation of machines and converters on radial grids")]
pub struct Cli {
    /// Network document path, or `paper6` for the bundled fixture.
    #[arg(long, global = true, default_value = "paper6")]
    pub network: String,

    /// Uniform susceptance drop applied to every line.
    #[arg(long, global = true, default_value_t = 0.0)]
    pub delta: f64,

    /// Output path, `-` for standard output.
    #[arg(long, global = true, default_value = "-")]
    pub out: String,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Override the machine damping from the document.
    #[arg(long = "damping-m", global = true)]
    pub damping_m: Option<f64>,

    /// Override the converter damping from the document.
    #[arg(long = "damping-c", global = true)]
    pub damping_c: Option<f64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady state of one configuration.
    Solve(SolveArgs),
    /// Run log-linear learning.
    Learn(LearnArgs),
    /// Tabulate every configuration of the game.
    Enumerate,
    /// Robustness margins against a uniform susceptance drop.
    Margin(MarginArgs),
    /// Exact stationary distribution against the Gibbs distribution.
    Gibbs(GibbsArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Configuration string such as `MCCCCM`.
    #[arg(long)]
    pub config: String,

    /// Exit with status 3 when the steady state is infeasible.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// `linear:<c>`, `const-eta:<v>` or `const-tau:<v>`.
    #[arg(long, default_value = "linear:5")]
    pub schedule: String,

    #[arg(long, default_value_t = 300)]
    pub steps: u64,

    /// Number of independent runs with seeds `seed, seed+1, ...`.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,

    /// Initial configuration; all machines by default.
    #[arg(long)]
    pub initial: Option<String>,
}

#[derive(Debug, Args)]
pub struct MarginArgs {
    #[arg(long, default_value_t = 1.5)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct GibbsArgs {
    /// Comma-separated inverse temperatures.
    #[arg(long, value_delimiter = ',', default_value = "1,5,20")]
    pub eta: Vec<f64>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::SizeGuard { .. } => 4,
            _ => 2,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError { code: 1, message: e.to_string() }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError { code: 1, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Formats with 9 significant digits, `inf` for infinities.
pub fn sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn json_number(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(sig9(x))
    }
}

struct Loaded {
    scenario: Scenario,
    is_fixture: bool,
}

fn load(cli: &Cli, io: &mut Streams) -> CliResult<Loaded> {
    let (mut scenario, is_fixture) = if cli.network == "paper6" {
        (Scenario::paper6(), true)
    } else {
        let text = std::fs::read_to_string(&cli.network)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", cli.network)))?;
        (Scenario::from_json(&text)?, false)
    };
    if cli.damping_m.is_some() || cli.damping_c.is_some() {
        scenario.damping = DampingParams::new(
            cli.damping_m.unwrap_or(scenario.damping.machine),
            cli.damping_c.unwrap_or(scenario.damping.converter),
        )?;
    }
    if !scenario.damping.is_conventional() {
        io.warn("machine damping does not exceed converter damping")?;
    }
    Ok(Loaded { scenario, is_fixture })
}

fn game(loaded: &Loaded, delta: f64) -> CliResult<GameContext> {
    let s = &loaded.scenario;
    let targets = s
        .targets
        .clone()
        .ok_or_else(|| CliError::validation("network document has no targets"))?;
    Ok(GameContext::new(s.network.clone(), s.damping, targets, delta)?)
}

fn parse_config(text: &str, n: usize) -> CliResult<Configuration> {
    let cfg: Configuration = text.parse()?;
    if cfg.len() != n {
        return Err(Error::ConfigLength { expected: n, got: cfg.len() }.into());
    }
    Ok(cfg)
}

/// Standard output and standard error of one invocation.
pub struct Streams<'a> {
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

impl Streams<'_> {
    fn sink(&mut self, out: &str) -> CliResult<Box<dyn Write + '_>> {
        if out == "-" {
            Ok(Box::new(&mut *self.stdout))
        } else {
            Ok(Box::new(File::create(PathBuf::from(out))?))
        }
    }

    fn csv(&mut self, out: &str) -> CliResult<csv::Writer<Box<dyn Write + '_>>> {
        Ok(csv::Writer::from_writer(self.sink(out)?))
    }

    fn warn(&mut self, message: &str) -> CliResult<()> {
        writeln!(self.stderr, "warning: {message}")?;
        Ok(())
    }

    fn summary(&mut self, value: serde_json::Value) -> CliResult<()> {
        let text = serde_json::to_string_pretty(&value).expect("summary serializes");
        writeln!(self.stderr, "{text}")?;
        Ok(())
    }
}

pub fn run_cli(cli: &Cli, io: &mut Streams) -> CliResult<()> {
    match &cli.command {
        Command::Solve(args) => cmd_solve(cli, args, io),
        Command::Learn(args) => cmd_learn(cli, args, io),
        Command::Enumerate => cmd_enumerate(cli, io),
        Command::Margin(args) => cmd_margin(cli, args, io),
        Command::Gibbs(args) => cmd_gibbs(cli, args, io),
    }
}

/// Parses `args` (without the program name) and runs the command, returning
/// the process exit code.
pub fn execute<S: AsRef<str>>(args: &[S], io: &mut Streams) -> i32 {
    let argv = std::iter::once("gridalloc").chain(args.iter().map(|a| a.as_ref()));
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(io.stderr, "{}", e.render());
                return 2;
            }
            let _ = write!(io.stdout, "{}", e.render());
            return 0;
        }
    };
    match run_cli(&cli, io) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn cmd_solve(cli: &Cli, args: &SolveArgs, io: &mut Streams) -> CliResult<()> {
    let loaded = load(cli, io)?;
    let net = &loaded.scenario.network;
    let cfg = parse_config(&args.config, net.node_count())?;
    let ss = solve(net, &cfg, &loaded.scenario.damping, cli.delta)?;
    let report = json!({
        "config": cfg.to_string(),
        "delta": ss.delta,
        "omega0": ss.omega0,
        "injections": ss.injections,
        "edge_flows": ss.edge_flows,
        "sine_diffs": ss.sine_diffs,
        "angle_diffs": ss.angle_diffs,
        "feasible": ss.feasible,
        "cohesiveness": ss.cohesiveness,
    });
    let mut out = io.sink(&cli.out)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))?;
    out.flush()?;
    drop(out);
    if args.strict && !ss.feasible {
        return Err(CliError { code: 3, message: "steady state violates flow feasibility".into() });
    }
    Ok(())
}

fn cmd_learn(cli: &Cli, args: &LearnArgs, io: &mut Streams) -> CliResult<()> {
    let schedule: TemperatureSchedule = args.schedule.parse()?;
    if args.runs == 0 {
        return Err(CliError::validation("--runs must be at least 1"));
    }
    let loaded = load(cli, io)?;
    let ctx = game(&loaded, cli.delta)?;
    let net = ctx.network();
    let initial = match &args.initial {
        Some(text) => parse_config(text, net.node_count())?,
        None => Configuration::all_machines(net.node_count()),
    };

    if args.runs == 1 {
        let trace = run(&ctx, &initial, &schedule, args.steps, cli.seed)?;
        let report = enumerate_game(&ctx)?;
        let mut w = io.csv(&cli.out)?;
        w.write_record(["t", "eta", "chosen_unit", "cfg", "potential", "feasible"])?;
        for s in &trace.steps {
            w.write_record([
                s.t.to_string(),
                sig9(s.eta),
                net.node_id(s.chosen_unit).to_string(),
                s.cfg.to_string(),
                sig9(s.potential),
                s.feasible.to_string(),
            ])?;
        }
        w.flush()?;
        drop(w);
        io.summary(json!({
            "seed": trace.seed,
            "schedule": schedule.to_string(),
            "steps": args.steps,
            "final_cfg": trace.final_cfg.to_string(),
            "final_potential": trace.final_potential(),
            "first_hit": trace.first_hitting_time(HIT_THRESHOLD),
            "success": report.is_maximizer(&trace.final_cfg),
        }))?;
        return Ok(());
    }

    let seeds: Vec<u64> = (0..args.runs).map(|k| cli.seed.wrapping_add(k)).collect();
    let batch = batch_run(&ctx, &initial, &schedule, args.steps, &seeds)?;
    let hits = batch.hitting_times(HIT_THRESHOLD);
    let mut w = io.csv(&cli.out)?;
    w.write_record(["seed", "final_cfg", "final_potential", "first_hit", "success"])?;
    for ((trace, hit), ok) in batch.traces.iter().zip(&hits).zip(&batch.successes) {
        w.write_record([
            trace.seed.to_string(),
            trace.final_cfg.to_string(),
            sig9(trace.final_potential()),
            hit.map_or(String::new(), |t| t.to_string()),
            ok.to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);
    let hit_count = hits.iter().flatten().count();
    io.summary(json!({
        "runs": args.runs,
        "schedule": schedule.to_string(),
        "steps": args.steps,
        "success_rate": batch.success_rate,
        "mean_final_potential": batch.mean_final_potential,
        "runs_hitting_threshold": hit_count,
        "mean_first_hit": (hit_count > 0)
            .then(|| hits.iter().flatten().sum::<u64>() as f64 / hit_count as f64),
    }))?;
    Ok(())
}

fn cmd_enumerate(cli: &Cli, io: &mut Streams) -> CliResult<()> {
    let loaded = load(cli, io)?;
    let ctx = game(&loaded, cli.delta)?;
    let report = enumerate_game(&ctx)?;
    let mut w = io.csv(&cli.out)?;
    w.write_record(["cfg", "potential", "is_nash", "is_maximizer", "feasible"])?;
    for r in &report.records {
        w.write_record([
            r.cfg.to_string(),
            sig9(r.potential),
            r.is_nash.to_string(),
            r.is_maximizer.to_string(),
            r.feasible.to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);
    io.summary(json!({
        "configurations": report.records.len(),
        "max_potential": report.max_potential(),
        "maximizers": report.maximizers().map(|r| r.cfg.to_string()).collect::<Vec<_>>(),
        "maximizer_count": report.maximizers().count(),
        "nash_count": report.nash_equilibria().count(),
    }))?;
    Ok(())
}

fn cmd_margin(cli: &Cli, args: &MarginArgs, io: &mut Streams) -> CliResult<()> {
    if !(args.alpha.is_finite() && args.alpha > 0.0) {
        return Err(CliError::validation(format!("alpha must be positive, got {}", args.alpha)));
    }
    let loaded = load(cli, io)?;
    let ctx0 = game(&loaded, 0.0)?;
    let report = robustness_report(&ctx0, args.alpha)?;
    if args.alpha <= report.calibrated_alpha_floor {
        io.warn(&format!(
            "alpha below calibrated floor ({} <= {})",
            args.alpha,
            sig9(report.calibrated_alpha_floor)
        ))?;
    }
    let mut w = io.csv(&cli.out)?;
    w.write_record(["cfg", "margin_closed_form", "margin_exact", "delta_flow_limit", "effective_margin"])?;
    for r in &report.records {
        w.write_record([
            r.cfg.to_string(),
            sig9(r.margin_closed_form),
            sig9(r.margin_exact),
            sig9(r.delta_flow_limit),
            sig9(r.effective_margin),
        ])?;
    }
    w.flush()?;
    drop(w);

    let consistency = consistency_check(&ctx0, args.alpha, 1e-6)?;
    let game_report = enumerate_game(&ctx0)?;
    let max_abs_potential = game_report.records.iter().map(|r| r.potential.abs()).fold(0.0, f64::max);
    let all_machines = Configuration::all_machines(ctx0.node_count());
    let all_machine_abs_potential = ctx0.potential(&all_machines)?.abs();
    let mut out = json!({
        "alpha": args.alpha,
        "calibrated_alpha_floor": report.calibrated_alpha_floor,
        "network_margin": json_number(report.network_margin),
        "network_margin_exact": json_number(report.network_margin_exact),
        "max_abs_potential": max_abs_potential,
        "all_machine_abs_potential": all_machine_abs_potential,
        "consistency": {
            "configurations": consistency.configurations,
            "max_bisection_gap": consistency.max_bisection_gap,
            "flips_tested": consistency.flips_tested,
            "flip_failures": consistency.flip_failures.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "passed": consistency.passed(1e-9),
        },
    });
    if loaded.is_fixture {
        out["reference"] = json!({
            "alpha_floor": REFERENCE_ALPHA_FLOOR,
            "network_margin": REFERENCE_NETWORK_MARGIN,
            "alpha_floor_deviation": report.calibrated_alpha_floor - REFERENCE_ALPHA_FLOOR,
            "network_margin_deviation": report.network_margin - REFERENCE_NETWORK_MARGIN,
            "note": "computed with steady-state sines held at their unperturbed values; \
                     the reference floor is close to all_machine_abs_potential",
        });
    }
    io.summary(out)?;
    Ok(())
}

fn cmd_gibbs(cli: &Cli, args: &GibbsArgs, io: &mut Streams) -> CliResult<()> {
    if args.eta.is_empty() {
        return Err(CliError::validation("at least one --eta value is required"));
    }
    let loaded = load(cli, io)?;
    let ctx = game(&loaded, cli.delta)?;
    let comparisons = args
        .eta
        .iter()
        .map(|&eta| gibbs_comparison(&ctx, eta))
        .collect::<Result<Vec<_>, _>>()?;

    let single = comparisons.len() == 1;
    let mut header = vec!["state_index".to_string(), "cfg_string".to_string()];
    for c in &comparisons {
        if single {
            header.push("stationary_prob".into());
            header.push("gibbs_prob".into());
        } else {
            header.push(format!("stationary_prob_eta={}", c.eta));
            header.push(format!("gibbs_prob_eta={}", c.eta));
        }
    }
    let mut w = io.csv(&cli.out)?;
    w.write_record(&header)?;
    let n = ctx.node_count();
    for k in 0..(1usize << n) {
        let mut row = vec![k.to_string(), Configuration::from_index(k, n).to_string()];
        for c in &comparisons {
            row.push(sig9(c.stationary[k]));
            row.push(sig9(c.gibbs[k]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    drop(w);

    let masses: Vec<f64> = comparisons.iter().map(|c| c.maximizer_mass).collect();
    io.summary(json!({
        "delta": cli.delta,
        "maximizers": comparisons[0]
            .potential_maximizers
            .iter()
            .map(|&k| Configuration::from_index(k, n).to_string())
            .collect::<Vec<_>>(),
        "per_eta": comparisons.iter().map(|c| json!({
            "eta": c.eta,
            "total_variation": c.total_variation,
            "maximizer_mass": c.maximizer_mass,
            "gibbs_maximizer_mass": c.gibbs_maximizer_mass,
            "detailed_balance_residual": c.detailed_balance_residual,
            "stationarity_residual": c.stationarity_residual,
            "modes_match_maximizers": c.sets_agree(),
        })).collect::<Vec<_>>(),
        "maximizer_mass_monotone": masses.windows(2).all(|w| w[1] >= w[0]),
    }))?;
    Ok(())
}
