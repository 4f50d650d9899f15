use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dmpc::bench::{aggregate, runtime_summary, write_csv_file, BenchmarkSpec, Harness, TrialRow};
use dmpc::config::{Config, ScenarioKind};
use dmpc::exec::{configure_workers, Execution};
use dmpc::planner::Method;
use dmpc::sim::{
    run_scenario, write_envelope_csv, write_scenario_json, write_trajectory_csv, ScenarioSpec,
    SimOptions,
};

#[derive(Parser)]
#[command(name = "dmpc", version, about = "Multi-agent DMPC trajectory planner")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "DMPC_WORKERS")]
    workers: Option<usize>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and dump its trajectory and metrics.
    Simulate(SimulateArgs),
    /// Success rate and transit time of each method on shared random scenarios.
    Compare(BenchArgs),
    /// Per-agent QP solve time of each method against swarm size.
    BenchRuntime(BenchArgs),
    /// Print the configuration in effect (the defaults without --config).
    DumpConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario generator, or a path to a scenario JSON file.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    /// Simulated time limit, s.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Configuration problems exit with 2, run failures with 1.
enum Failure {
    Usage(anyhow::Error),
    Task(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 || !configure_workers(n) {
            log::warn!("worker count {n} not applied");
        }
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate(args, exec),
        Command::Compare(args) => compare(args, exec),
        Command::BenchRuntime(args) => bench_runtime(args, exec),
        Command::DumpConfig { config } => dump_config(config.as_deref()).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Task(msg)) => {
            eprintln!("dmpc: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(err)) => {
            eprintln!("dmpc: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).context("cannot load config"),
        None => Ok(Config::default()),
    }
}

fn dump_config(path: Option<&Path>) -> Result<()> {
    let text = load_config(path)?.to_json()?;
    // A closed pipe (e.g. `| head`) is not an error here.
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

fn simulate(args: SimulateArgs, exec: Execution) -> std::result::Result<(), Failure> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(m) = args.method {
        cfg.planner.method = m;
    }
    if let Some(n) = args.agents {
        cfg.scenario.agents = n;
    }
    if let Some(s) = args.seed {
        cfg.scenario.seed = s;
    }
    if let Some(d) = args.duration {
        cfg.scenario.duration = d;
    }
    let spec: ScenarioSpec = match args.scenario.as_deref() {
        Some(name @ ("random" | "hoop")) => {
            cfg.scenario.kind = name.parse::<ScenarioKind>().map_err(anyhow::Error::from)?;
            if cfg.scenario.kind == ScenarioKind::Hoop && args.duration.is_none() {
                cfg.scenario.duration = 60.0;
            }
            cfg.scenario_spec().context("cannot build scenario")?
        }
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("cannot read scenario {path}"))?;
            let spec: ScenarioSpec = serde_json::from_str(&text)
                .with_context(|| format!("cannot parse scenario {path}"))?;
            spec.validate(&cfg.planner.ellipsoid)
                .with_context(|| format!("invalid scenario {path}"))?;
            spec
        }
        None => cfg.scenario_spec().context("cannot build scenario")?,
    };
    let opts = SimOptions {
        record_trajectory: true,
        stop_tolerance: if spec.obstacles.is_empty() {
            0.10
        } else {
            0.06
        },
        execution: exec,
        ..SimOptions::default()
    };

    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let out = run_scenario(&spec, &cfg.model, &cfg.planner, &opts).context("simulation failed")?;
    write_scenario_json(&spec, &args.out.join("scenario.json")).context("cannot write scenario")?;
    write_trajectory_csv(&out.trajectory, create(&args.out.join("trajectory.csv"))?)
        .context("cannot write trajectory")?;
    write_envelope_csv(&out.envelope, create(&args.out.join("envelope.csv"))?)
        .context("cannot write envelope")?;
    let m = &out.metrics;
    let row = TrialRow::new(cfg.planner.method, spec.agents.len(), 0, spec.seed, m);
    write_csv_file(&[row], &args.out.join("metrics.csv")).context("cannot write metrics")?;

    let summary = simulate_summary(&cfg, &spec, m);
    print!("{summary}");
    fs::write(args.out.join("summary.txt"), &summary).context("cannot write summary")?;
    if m.success {
        Ok(())
    } else {
        Err(Failure::Task(
            m.failure.clone().unwrap_or_else(|| "run failed".into()),
        ))
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

fn simulate_summary(cfg: &Config, spec: &ScenarioSpec, m: &dmpc::sim::RunMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method            {}", cfg.planner.method);
    let _ = writeln!(s, "agents            {}", spec.agents.len());
    let _ = writeln!(s, "obstacles         {}", spec.obstacles.len());
    let _ = writeln!(s, "seed              {}", spec.seed);
    let _ = writeln!(s, "success           {}", m.success);
    if let Some(f) = &m.failure {
        let _ = writeln!(s, "failure           {f}");
    }
    match m.transit_time {
        Some(t) => {
            let _ = writeln!(s, "transit time      {t:.2} s");
        }
        None => {
            let _ = writeln!(s, "transit time      -");
        }
    }
    if let Some(t) = m.envelope_time {
        let _ = writeln!(s, "within 0.06 m at  {t:.2} s");
    }
    let _ = writeln!(s, "min scaled dist   {:.3} m", m.min_scaled_distance);
    let _ = writeln!(s, "mean qp           {:.3} ms", m.mean_qp_ms());
    let _ = writeln!(s, "p95 qp            {:.3} ms", m.p95_qp_ms());
    let _ = writeln!(s, "mean cycle        {:.3} ms", m.mean_cycle_ms());
    let _ = writeln!(s, "resets            {}", m.resets.len());
    let _ = writeln!(s, "fallbacks         {}", m.fallbacks);
    s
}

fn bench_spec(cfg: &Config, args: &BenchArgs) -> BenchmarkSpec {
    let mut spec = cfg.benchmark.clone();
    if let Some(m) = &args.methods {
        spec.methods = m.clone();
    }
    if let Some(c) = &args.counts {
        spec.counts = c.clone();
    }
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(s) = args.base_seed {
        spec.base_seed = s;
    }
    if let Some(o) = &args.out {
        spec.out_dir = o.clone();
    }
    spec
}

fn run_bench(
    args: &BenchArgs,
    exec: Execution,
) -> Result<(BenchmarkSpec, Vec<dmpc::bench::TrialResult>)> {
    let cfg = load_config(args.config.as_deref())?;
    let spec = bench_spec(&cfg, args);
    spec.validate().context("invalid benchmark")?;
    fs::create_dir_all(&spec.out_dir)
        .with_context(|| format!("cannot create {}", spec.out_dir.display()))?;
    let harness = Harness {
        model: &cfg.model,
        planner: &cfg.planner,
        noise: cfg.noise,
        options: SimOptions::default(),
        execution: exec,
    };
    let results = harness.run(&spec)?;
    Ok((spec, results))
}

fn compare(args: BenchArgs, exec: Execution) -> std::result::Result<(), Failure> {
    let (spec, results) = run_bench(&args, exec)?;
    let rows: Vec<TrialRow> = results.into_iter().map(|r| r.row).collect();
    let agg = aggregate(&rows);
    write_csv_file(&rows, &spec.out_dir.join("trials.csv")).context("cannot write trials")?;
    write_csv_file(&agg, &spec.out_dir.join("aggregate.csv")).context("cannot write aggregate")?;
    println!(
        "{:<16} {:>7} {:>9} {:>10} {:>12}",
        "method", "agents", "trials", "success", "transit [s]"
    );
    for a in &agg {
        let transit = a
            .mean_transit_time_s
            .map_or_else(|| "-".to_string(), |t| format!("{t:.2}"));
        println!(
            "{:<16} {:>7} {:>9} {:>9.0}% {:>12}",
            a.method.name(),
            a.n_agents,
            a.trials,
            100.0 * a.success_rate,
            transit
        );
    }
    Ok(())
}

fn bench_runtime(args: BenchArgs, exec: Execution) -> std::result::Result<(), Failure> {
    if exec.is_parallel() {
        log::info!("trials run in parallel; solve times include contention");
    }
    let (spec, results) = run_bench(&args, exec)?;
    let rows = runtime_summary(&results);
    write_csv_file(&rows, &spec.out_dir.join("runtime.csv")).context("cannot write runtime")?;
    println!(
        "{:<16} {:>7} {:>8} {:>16} {:>16}",
        "method", "agents", "solves", "qp [ms]", "cycle [ms]"
    );
    for r in &rows {
        println!(
            "{:<16} {:>7} {:>8} {:>8.3} ± {:<5.3} {:>8.3} ± {:<5.3}",
            r.method.name(),
            r.n_agents,
            r.solves,
            r.mean_qp_ms,
            r.std_qp_ms,
            r.mean_cycle_ms,
            r.std_cycle_ms
        );
    }
    Ok(())
}
