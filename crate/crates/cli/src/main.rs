use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use flexnet::experiment::{run_replications, write_outputs, RunConfig};
use flexnet::model::json::{parse_network, parse_rate};
use flexnet::planner::{capacity_boundary, plan_network};
use flexnet::policies::{PolicyConfig, PolicyKind};
use flexnet::presets::{preset, PRESET_NAMES};
use flexnet::projection::PolyhedronSpec;
use flexnet::sim::{ArrivalProcess, SimError, DEFAULT_MEMORY_CAP};
use flexnet::verify::{run_verification, Suite, VerifyOptions};
use flexnet::NetworkSpec;

const EXIT_SUITE_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_MEMORY_GUARD: u8 = 3;

#[derive(Parser)]
#[command(name = "flexnet", version, about = "Robust scheduling for flexible fork-join and queueing networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the static planning LP and optionally the capacity boundary along a direction.
    Plan(PlanArgs),
    /// Simulate a preset or a spec file and write CSV and JSON outputs.
    Run(RunArgs),
    /// Project a vector read from stdin onto a network's allocation polyhedron.
    Project(ProjectArgs),
    /// Run the verification suites and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Arrival rates (comma-separated; one value is used for every class or queue).
    #[arg(long)]
    lambda: Option<String>,
    /// Direction for the capacity boundary `sup { t : t * d feasible }`.
    #[arg(long)]
    direction: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    #[arg(long)]
    spec: Option<PathBuf>,
    /// robust | robust-eps | robust-delta | generic-lifted | oracle-gradient | static-lp
    #[arg(long)]
    policy: Option<String>,
    /// Step-size exponent `a` in `beta^n = n^-a`.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eps0: Option<f64>,
    /// Initial allocation (comma-separated).
    #[arg(long)]
    p0: Option<String>,
    /// Batch size for spec runs.
    #[arg(long)]
    batch: Option<u32>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    reps: u32,
    #[arg(long)]
    stride: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MEMORY_CAP)]
    memory_cap: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProjectMode {
    C,
    Eps,
    Lifted,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_enum, default_value = "c")]
    mode: ProjectMode,
    #[arg(long)]
    eps0: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Comma-separated subset of lp, projection, estimator, conservation, convergence.
    #[arg(long)]
    only: Option<String>,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long)]
    horizon: Option<u64>,
    /// Flip the sign of the update step; the convergence suite should then fail.
    #[arg(long)]
    inject_sign_error: bool,
}

/// An error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: e.into(),
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Run(a) => cmd_run(a),
        Command::Project(a) => cmd_project(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_spec(path: &Path) -> Result<NetworkSpec, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(config)?;
    let spec: NetworkSpec = parse_network(&text)
        .with_context(|| format!("cannot parse {}", path.display()))
        .map_err(config)?;
    if let Err(report) = spec.validate().into_result() {
        return Err(config(anyhow!("invalid network in {}: {report}", path.display())));
    }
    Ok(spec)
}

fn parse_list(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split([',', ' ', '\t', '\n'])
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_rate(t).map_err(|e| anyhow!(e)))
        .collect()
}

fn broadcast(values: Vec<f64>, n: usize, what: &str) -> anyhow::Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        len if len == n => Ok(values),
        len => Err(anyhow!("{what}: expected 1 or {n} values, got {len}")),
    }
}

fn cmd_plan(args: PlanArgs) -> CmdResult {
    let mut spec = load_spec(&args.spec)?;
    let sources = spec.arrival_rates().len();
    if let Some(l) = &args.lambda {
        let lambda = parse_list(l).and_then(|v| broadcast(v, sources, "--lambda")).map_err(config)?;
        spec = spec.with_arrival_rates(&lambda).map_err(config)?;
    }
    let plan = plan_network(&spec).map_err(config)?;
    let boundary = match &args.direction {
        Some(d) => {
            let dir = parse_list(d).and_then(|v| broadcast(v, sources, "--direction")).map_err(config)?;
            Some(capacity_boundary(&spec, &dir).map_err(config)?)
        }
        None => None,
    };
    let effective = plan.effective_allocation(spec.service());
    if args.json {
        let out = json!({
            "rho_star": plan.rho_star,
            "feasible": plan.feasible,
            "allocation": plan.allocation,
            "effective_allocation": effective,
            "boundary": boundary,
        });
        println!("{}", serde_json::to_string_pretty(&out).expect("json serializes"));
    } else {
        println!("rho* = {:.9}", plan.rho_star);
        println!("feasible = {}", plan.feasible);
        println!("allocation p_kj (task rows, server columns):");
        for (k, row) in plan.allocation.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            println!("  task {}: {}", k + 1, cells.join("  "));
        }
        let cells: Vec<String> = effective.iter().map(|v| format!("{v:.6}")).collect();
        println!("effective p_k: {}", cells.join("  "));
        if let Some(b) = boundary {
            println!("boundary = {b:.9}");
        }
    }
    Ok(0)
}

fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("FLEXNET_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn build_run_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let (mut cfg, name) = match (&args.preset, &args.spec) {
        (Some(name), None) => {
            let p = preset(name).ok_or_else(|| {
                config(anyhow!("unknown preset {name:?} (available: {})", PRESET_NAMES.join(", ")))
            })?;
            let mut cfg = RunConfig::new(format!("preset:{name}"), p.network, p.policy, p.arrivals);
            cfg.horizon = p.horizon;
            cfg.assumed = p.assumed;
            (cfg, name.clone())
        }
        (None, Some(path)) => {
            let spec = load_spec(path)?;
            let arrivals = ArrivalProcess::batch(spec.arrival_rates(), args.batch.unwrap_or(1));
            let stem = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
            let cfg = RunConfig::new(path.display().to_string(), spec, PolicyConfig::new(PolicyKind::Robust), arrivals);
            (cfg, stem)
        }
        _ => return Err(config(anyhow!("give exactly one of --preset or --spec"))),
    };
    if args.preset.is_some() && args.batch.is_some() {
        return Err(config(anyhow!("--batch applies to --spec runs; presets fix their arrivals")));
    }
    if let Some(p) = &args.policy {
        let kind: PolicyKind = p.parse().map_err(config)?;
        if kind != cfg.policy.kind {
            let keep = cfg.policy.clone();
            cfg.policy = PolicyConfig::new(kind);
            cfg.policy.exponent = keep.exponent;
            cfg.policy.delta = keep.delta;
            cfg.policy.p0 = keep.p0.filter(|_| kind == PolicyKind::GenericLifted);
        }
    }
    if let Some(a) = args.a {
        cfg.policy.exponent = a;
    }
    if let Some(d) = args.delta {
        if d < 0.0 {
            return Err(config(anyhow!("--delta must be nonnegative")));
        }
        cfg.policy.delta = d;
    }
    if let Some(e) = args.eps0 {
        cfg.policy.eps0 = Some(e);
    }
    if let Some(p) = &args.p0 {
        cfg.policy.p0 = Some(parse_list(p).map_err(config)?);
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    cfg.seed = args.seed;
    cfg.replications = args.reps;
    cfg.stride = args.stride.unwrap_or((cfg.horizon / 1000).max(1));
    cfg.memory_cap = args.memory_cap;
    cfg.out_dir = Some(args.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name)));
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let cfg = build_run_config(&args)?;
    let resolved = cfg.resolve().map_err(config)?;
    let threads = thread_count(args.threads);
    let results = run_replications(&cfg, threads).map_err(config)?;
    let dir = cfg.out_dir.clone().expect("output directory is set");
    write_outputs(&dir, &cfg, &resolved, &results)
        .with_context(|| format!("cannot write outputs to {}", dir.display()))
        .map_err(config)?;

    let mut code = 0;
    for r in &results {
        match &r.outcome {
            Ok(m) => println!(
                "replication {} (seed {}): {} max Q/N = {:.5}, final p = {:?}",
                r.index + 1,
                r.seed,
                r.verdict(),
                m.max_q_over_n(),
                m.final_allocation
                    .iter()
                    .map(|v| (v * 1e4).round() / 1e4)
                    .collect::<Vec<_>>()
            ),
            Err(e) => {
                println!("replication {} (seed {}): {}: {e}", r.index + 1, r.seed, r.verdict());
                code = code.max(match e {
                    SimError::MemoryGuard { .. } => EXIT_MEMORY_GUARD,
                    _ => EXIT_SUITE_FAILURE,
                });
            }
        }
    }
    println!("outputs written to {}", dir.display());
    Ok(code)
}

fn cmd_project(args: ProjectArgs) -> CmdResult {
    let spec = load_spec(&args.spec)?;
    let service = spec.service();
    let poly = match args.mode {
        ProjectMode::C => PolyhedronSpec::factorized(service),
        ProjectMode::Lifted => PolyhedronSpec::lifted(service),
        ProjectMode::Eps => {
            let eps0 = args.eps0.ok_or_else(|| config(anyhow!("--mode eps needs --eps0")))?;
            PolyhedronSpec::factorized_eps(service, eps0).map_err(config)?
        }
    };
    let mut input = String::new();
    std::io::stdin()
        .read_to_string(&mut input)
        .context("cannot read stdin")
        .map_err(config)?;
    let x = parse_list(&input).map_err(config)?;
    let res = poly.project(&x).map_err(config)?;
    let out = json!({
        "point": res.point,
        "lifted_witness": res.lifted_witness,
        "iterations": res.iterations,
        "residual": res.residual,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json serializes"));
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> CmdResult {
    let mut opts = VerifyOptions {
        seed: args.seed,
        invert_step: args.inject_sign_error,
        ..VerifyOptions::default()
    };
    if let Some(only) = &args.only {
        opts.suites = only
            .split(',')
            .map(|s| s.trim().parse::<Suite>())
            .collect::<Result<_, _>>()
            .map_err(|e| config(anyhow!(e)))?;
    }
    if let Some(h) = args.horizon {
        opts.horizon = h;
    }
    let reports = run_verification(&opts);
    println!("{:<14} {:<6} {:>7}", "suite", "result", "checks");
    for r in &reports {
        println!(
            "{:<14} {:<6} {:>7}",
            r.suite.name(),
            if r.passed() { "PASS" } else { "FAIL" },
            r.checks
        );
        for f in &r.failures {
            println!("    {f}");
        }
    }
    Ok(if reports.iter().all(|r| r.passed()) {
        0
    } else {
        EXIT_SUITE_FAILURE
    })
}
