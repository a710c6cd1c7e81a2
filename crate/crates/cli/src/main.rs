//! Command-line front end: solve one robust instance, sweep a consistency
//! study, dump a convergence trace, or evaluate a saved policy out of
//! sample. Outputs are CSV/JSON files under `--out` (or `$ROBUST_SDDP_OUT`,
//! or `./out`).

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use robust_sddp::experiment::{
    self, build_instance, default_distribution, evaluate_policy, run_consistency_study,
    run_instance, write_gap_csv, write_trace_csv, ExperimentSpec,
};
use robust_sddp::hydro::HydroConfig;
use robust_sddp::scenario::TrueDistribution;
use robust_sddp::sddp::{load_policy, save_policy, write_run_csv};
use std::fs;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "robust-sddp",
    about = "Distributionally robust multistage hydrothermal scheduling via SDDP",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one robust instance and save the policy, trace and summary.
    Solve(SolveArgs),
    /// Sweep (distribution, N) cells and tabulate robust-vs-nominal gaps.
    Study(StudyArgs),
    /// Write the per-iteration bound trace of a single instance.
    Trace(SolveArgs),
    /// Simulate a saved policy on fresh out-of-sample paths.
    Eval(EvalArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Inflow distribution: lognormal, normal, truncated-normal, weibull,
    /// exponential.
    #[arg(long, default_value = "lognormal")]
    dist: String,
    /// Raw inflow samples drawn per stage.
    #[arg(long, default_value_t = 9000)]
    samples: usize,
    /// Scenarios per stage (clamped to the sample count).
    #[arg(long, default_value_t = 12)]
    scenarios: usize,
    /// Planning horizon in weeks.
    #[arg(long, default_value_t = 12)]
    horizon: usize,
    /// Use the full 52-week horizon.
    #[arg(long)]
    full: bool,
    /// Relative optimality gap of the stopping rule.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Iteration cap.
    #[arg(long, default_value_t = 300)]
    max_iters: usize,
    /// Forward sample paths per iteration.
    #[arg(long, default_value_t = 6)]
    paths: usize,
    /// Confidence level for the ambiguity radius and the stopping statistic.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Hydro system TOML (defaults to the built-in single-reservoir system).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run the engine single-threaded.
    #[arg(long)]
    sequential: bool,
    /// Output directory (defaults to $ROBUST_SDDP_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Force a zero ambiguity radius at every stage.
    #[arg(long)]
    risk_neutral: bool,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated sample counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000,9000")]
    study_samples: Vec<usize>,
    /// Calibration draws for the risk-neutral baseline.
    #[arg(long, default_value_t = 100_000)]
    calibration: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Policy JSON produced by `solve`.
    #[arg(long)]
    policy: PathBuf,
    /// Out-of-sample paths to simulate.
    #[arg(long, default_value_t = 1000)]
    eval_paths: usize,
    /// Seed for the out-of-sample draws.
    #[arg(long, default_value_t = 90210)]
    eval_seed: u64,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(args) => solve(args, false),
        Command::Trace(args) => solve(args, true),
        Command::Study(args) => study(args),
        Command::Eval(args) => eval(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn out_dir(flag: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag
        .clone()
        .or_else(|| std::env::var_os("ROBUST_SDDP_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn distribution(kind: &str) -> Result<TrueDistribution> {
    default_distribution(kind)
        .ok_or_else(|| anyhow!("unknown distribution kind {kind:?}; see --help"))
}

fn load_config(model: &ModelArgs) -> Result<Option<HydroConfig>> {
    match &model.config {
        None => Ok(None),
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let cfg = HydroConfig::from_toml_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            Ok(Some(cfg))
        }
    }
}

fn spec_from(model: &ModelArgs, sizes: Vec<usize>, calibration: usize) -> Result<ExperimentSpec> {
    let horizon = if model.full { 52 } else { model.horizon };
    let spec = ExperimentSpec {
        distributions: vec![distribution(&model.dist)?],
        sample_sizes: sizes,
        scenarios: model.scenarios,
        horizon,
        epsilon: model.epsilon,
        max_iters: model.max_iters,
        paths: model.paths,
        alpha: model.alpha,
        seed: model.seed,
        calibration_samples: calibration,
        parallel: !model.sequential,
    };
    spec.validate()?;
    Ok(spec)
}

fn warn_on_shortfall(cfg: &HydroConfig, dist: &TrueDistribution) {
    for (stage, short) in cfg.capacity_shortfalls(dist.mean()) {
        eprintln!(
            "warning: stage {stage} demand exceeds thermal + mean hydro capability by {short:.0} MWh; \
             the load penalty will carry it"
        );
    }
}

fn solve(args: SolveArgs, trace_only: bool) -> Result<()> {
    let model = &args.model;
    let dir = out_dir(&model.out)?;
    let dist = distribution(&model.dist)?;
    let mut spec = spec_from(model, vec![model.samples], model.samples.max(1))?;
    let base = load_config(model)?;
    if let Some(cfg) = &base {
        spec.horizon = cfg.horizon;
        warn_on_shortfall(cfg, &dist);
    }
    let run = run_instance(&spec, &dist, model.samples, base.as_ref(), args.risk_neutral)?;
    let last = run
        .records
        .last()
        .ok_or_else(|| anyhow!("run produced no iterations"))?;

    if trace_only {
        let mut buf = Vec::new();
        write_trace_csv(&run.records, &mut buf)?;
        let path = dir.join("trace.csv");
        experiment::write_atomic(&path, &buf)?;
        println!("{}", path.display());
        return Ok(());
    }

    let mut buf = Vec::new();
    write_run_csv(&run.records, &mut buf)?;
    experiment::write_atomic(&dir.join("run.csv"), &buf)?;

    let mut policy_json = Vec::new();
    save_policy(&run.policy, &mut policy_json)?;
    experiment::write_atomic(&dir.join("policy.json"), &policy_json)?;

    let summary = serde_json::json!({
        "distribution": dist.kind(),
        "samples": model.samples,
        "scenarios": spec.scenarios,
        "horizon": spec.horizon,
        "epsilon": spec.epsilon,
        "max_iters": spec.max_iters,
        "paths": spec.paths,
        "alpha": spec.alpha,
        "seed": spec.seed,
        "risk_neutral": args.risk_neutral,
        "iterations": run.steps,
        "lower_bound": run.lower_bound,
        "last_upper_bound": last.upper_bound,
        "gap": last.gap,
        "seconds": run.seconds,
        "total_cuts": run.policy.total_cuts(),
    });
    experiment::write_atomic(
        &dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    println!(
        "{}: {} iterations, lower bound {:.4e}, gap {:.4}, outputs in {}",
        dist.kind(),
        run.steps,
        run.lower_bound,
        last.gap,
        dir.display()
    );
    Ok(())
}

fn study(args: StudyArgs) -> Result<()> {
    let model = &args.model;
    let dir = out_dir(&model.out)?;
    let mut spec = spec_from(model, args.study_samples.clone(), args.calibration)?;
    spec.distributions = if model.dist == "all" {
        experiment::all_default_distributions()
    } else {
        model
            .dist
            .split(',')
            .map(|k| distribution(k.trim()))
            .collect::<Result<Vec<_>>>()?
    };
    let base = load_config(model)?;
    if let Some(cfg) = &base {
        spec.horizon = cfg.horizon;
    }
    let rows = run_consistency_study(&spec, base.as_ref())?;
    let mut buf = Vec::new();
    write_gap_csv(&rows, &mut buf)?;
    let path = dir.join("gap_table.csv");
    experiment::write_atomic(&path, &buf)?;
    for r in &rows {
        println!(
            "{:>18}  N={:<6} gap={:>8.4} steps={:>4} z_a={:.4e} z_n={:.4e}",
            r.distribution, r.n, r.gap, r.steps, r.z_a, r.z_n
        );
    }
    println!("{}", path.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = &args.model;
    let dir = out_dir(&model.out)?;
    let dist = distribution(&model.dist)?;
    let mut spec = spec_from(model, vec![model.samples], model.samples.max(1))?;
    let base = load_config(model)?;
    if let Some(cfg) = &base {
        spec.horizon = cfg.horizon;
    }
    let (_, templates) = build_instance(&spec, &dist, model.samples, base.as_ref(), false)?;
    let file = fs::File::open(&args.policy)
        .with_context(|| format!("opening {}", args.policy.display()))?;
    let policy = load_policy(file, templates.len())?;
    if args.eval_paths < 2 {
        bail!("--eval-paths must be at least 2");
    }
    let summary = evaluate_policy(
        &templates,
        &policy,
        args.eval_paths,
        args.eval_seed,
        !model.sequential,
    )?;
    let text = serde_json::to_string_pretty(&summary)?;
    experiment::write_atomic(&dir.join("eval.json"), text.as_bytes())?;
    println!("{text}");
    Ok(())
}
