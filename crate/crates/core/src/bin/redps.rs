use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use redps::dist::{DependenceModel, JobSizeModel, MinDistribution, MinMethod};
use redps::engine::{mean_latency, replication_seed, run, run_replications, SystemConfig, Variant};
use redps::experiments::{fluid_summary, mode_name, run_experiment, validate_suite, ExperimentSpec};
use redps::fluid::{classify_fluid, solve_scalar, solve_vector, trailing_slope, FluidConfig, FluidMode, FluidVerdict, InitialSizes};
use redps::output::{load_cells, num, write_classes, write_fluid, write_fluid_summary, write_latencies, write_loads, write_summary, write_threshold, write_trajectory, Manifest, SummaryRow};
use redps::parse::{parse_count, parse_dependence, parse_distribution, parse_number_list};
use redps::stability::{estimate_threshold, load_report_with, ThresholdOutcome};
use redps::virtual_queues::{build_class_index, run_virtual, DEFAULT_CLASS_BOUND};
use redps::{Error, Result};

#[derive(Parser)]
#[command(name = "redps", version, about = "Redundancy-d processor sharing with cancel-on-completion")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one system configuration.
    Simulate(SimulateArgs),
    /// Run an experiment spec file.
    Experiment { spec: PathBuf },
    /// Solve the fluid model and classify its stability.
    Fluid(FluidArgs),
    /// Estimate the stability threshold from simulated queue growth.
    Threshold(ThresholdArgs),
    /// Print the loads and critical arrival rates.
    Report(ReportArgs),
    /// Run the coupling and equivalence checks.
    Validate {
        #[arg(long, default_value = "20000")]
        arrivals: String,
    },
}

#[derive(Args)]
struct SystemArgs {
    #[arg(short = 'N', long = "servers")]
    servers: usize,
    #[arg(short = 'd', long = "replicas")]
    replicas: usize,
    /// e.g. `exponential(mean=2)` or a preset name.
    #[arg(long)]
    dist: String,
    #[arg(long, default_value = "identical")]
    dep: String,
}

impl SystemArgs {
    fn model(&self) -> Result<JobSizeModel> {
        parse_distribution(&self.dist)
    }

    fn dependence(&self) -> Result<DependenceModel> {
        parse_dependence(&self.dep)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value = "original")]
    variant: String,
    #[arg(long, default_value = "100000")]
    arrivals: String,
    /// Defaults to a tenth of the arrivals.
    #[arg(long)]
    warmup: Option<String>,
    #[arg(long, default_value_t = 1)]
    replications: usize,
    /// Simulate a bound variant through its virtual queues and write classes.csv.
    #[arg(long = "virtual")]
    virtual_queues: bool,
    /// Stop at the last admission instead of serving the remaining jobs.
    #[arg(long)]
    no_drain: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Scalar,
    Min,
    Max,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitialArg {
    Fresh,
    Residual,
}

#[derive(Args)]
struct FluidArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 5.0)]
    q0: f64,
    #[arg(long, default_value_t = 0.25)]
    step: f64,
    #[arg(long, default_value_t = 2000.0)]
    horizon: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Scalar)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = InitialArg::Fresh)]
    initial: InitialArg,
    /// Trailing window of the growth test; defaults to half the horizon.
    #[arg(long)]
    window: Option<f64>,
}

#[derive(Args)]
struct ThresholdArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Grid as fractions of N / (d E[min]).
    #[arg(long, default_value = "0.6, 0.8, 0.9, 1.1, 1.2, 1.3, 1.4")]
    grid: String,
    #[arg(long, default_value_t = 5)]
    replications: usize,
    #[arg(long, default_value = "100000")]
    arrivals: String,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    lambda: f64,
    /// Estimate E[min] by Monte Carlo instead of in closed form.
    #[arg(long)]
    monte_carlo: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidParameter(_) | Error::Parse { .. } | Error::UnsupportedCombination { .. } | Error::CombinatorialBound { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let Format::Csv = cli.format;
    let seed = cli.seed.unwrap_or(1);
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate(a) => simulate(a, seed, out),
        Command::Experiment { spec } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::InvalidParameter(format!("{}: {e}", spec.display())))?;
            let mut spec = ExperimentSpec::parse(&text)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let res = run_experiment(&spec, out)?;
            for f in &res.files {
                println!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fluid(a) => fluid(a, out),
        Command::Threshold(a) => threshold(a, seed, out),
        Command::Report(a) => report(a, seed, out),
        Command::Validate { arrivals } => {
            let checks = validate_suite(seed, parse_count(&arrivals, 0)?)?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
    }
}

fn simulate(a: SimulateArgs, seed: u64, out: &Path) -> Result<ExitCode> {
    let variant = Variant::from_name(&a.variant).ok_or_else(|| Error::InvalidParameter(format!("unknown variant `{}`", a.variant)))?;
    let arrivals = parse_count(&a.arrivals, 0)?;
    let mut cfg = SystemConfig::new(a.system.servers, a.system.replicas, a.lambda, a.system.model()?, a.system.dependence()?)
        .with_arrivals(arrivals)
        .with_variant(variant)
        .with_seed(seed);
    if let Some(w) = &a.warmup {
        cfg.warmup = parse_count(w, 0)?;
    }
    cfg.drain = !a.no_drain;
    cfg.validate()?;
    if a.replications == 0 {
        return Err(Error::InvalidParameter("replications must be positive".into()));
    }
    let records = if a.virtual_queues {
        if !matches!(variant, Variant::LowerBound | Variant::UpperBound) {
            return Err(Error::InvalidParameter("--virtual needs --variant lower or upper".into()));
        }
        write_classes(&out.join("classes.csv"), &build_class_index(cfg.servers, cfg.replicas, DEFAULT_CLASS_BOUND)?)?;
        (0..a.replications).map(|r| run_virtual(&cfg.clone().with_seed(replication_seed(seed, r)))).collect::<Result<Vec<_>>>()?
    } else if a.replications == 1 {
        vec![run(&cfg)?]
    } else {
        run_replications(&cfg, a.replications)?
    };
    write_latencies(&out.join("latencies.csv"), &records[0])?;
    write_trajectory(&out.join("trajectory.csv"), &records[0].trajectory)?;
    let n_jobs = records.iter().map(|r| r.latencies.len()).sum();
    let (mean, ci) = if records.len() > 1 {
        let ci = mean_latency(&records)?;
        (ci.mean, Some(ci))
    } else {
        (records[0].mean_latency()?, None)
    };
    write_summary(&out.join("summary.csv"), &[SummaryRow { variant, lambda: a.lambda, mean_latency: mean, ci, n_jobs, seed }])?;
    let mut m = Manifest::new();
    m.set("command", "simulate")
        .set("tool", concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")))
        .set("servers", cfg.servers)
        .set("replicas", cfg.replicas)
        .set("lambda", num(cfg.lambda))
        .set("model", cfg.model)
        .set("dep", cfg.dep)
        .set("variant", variant)
        .set("virtual_queues", a.virtual_queues)
        .set("arrivals", arrivals)
        .set("warmup", cfg.warmup)
        .set("drain", cfg.drain)
        .set("seed", seed)
        .set("replications", records.len())
        .set("rng", "ChaCha8");
    m.write(&out.join("manifest.txt"))?;
    match ci {
        Some(c) => println!("mean_latency={} ci_halfwidth={} n_jobs={n_jobs}", num(c.mean), num(c.half_width)),
        None => println!("mean_latency={} n_jobs={n_jobs}", num(mean)),
    }
    Ok(ExitCode::SUCCESS)
}

fn fluid(a: FluidArgs, out: &Path) -> Result<ExitCode> {
    let md = MinDistribution::new(a.system.model()?, a.system.dependence()?, a.system.replicas);
    let mode = match a.mode {
        ModeArg::Scalar => FluidMode::Scalar,
        ModeArg::Min => FluidMode::Min,
        ModeArg::Max => FluidMode::Max,
    };
    let mut cfg = FluidConfig::new(a.system.servers, a.system.replicas, a.lambda, md, a.q0).with_step(a.step).with_horizon(a.horizon).with_mode(mode);
    cfg.initial_sizes = match a.initial {
        InitialArg::Fresh => InitialSizes::Fresh,
        InitialArg::Residual => InitialSizes::EquilibriumResidual,
    };
    cfg.validate()?;
    let path = match mode {
        FluidMode::Scalar => solve_scalar(&cfg)?,
        _ => solve_vector(&cfg)?,
    };
    let window = a.window.unwrap_or(a.horizon / 2.0);
    let verdict = classify_fluid(&path, window)?;
    let slope = trailing_slope(&path, window)?;
    write_fluid(&out.join("fluid.csv"), &path)?;
    let label = format!("{}_{}", mode_name(mode), md.model);
    write_fluid_summary(&out.join("fluid_summary.csv"), &[fluid_summary(&label, &cfg, verdict, slope, path.drain_tolerance)])?;
    let detail = match verdict {
        FluidVerdict::Stable { drain_time } => format!(" drain_time={}", num(drain_time)),
        FluidVerdict::Unstable { slope } => format!(" slope={}", num(slope)),
        FluidVerdict::Inconclusive => String::new(),
    };
    let label = verdict.label();
    let mut cap = label.chars();
    let shown: String = cap.next().map(|c| c.to_ascii_uppercase()).into_iter().chain(cap).collect();
    println!("verdict={shown}{detail} rho_tilde={}", num(cfg.rho_tilde()));
    Ok(ExitCode::SUCCESS)
}

fn threshold(a: ThresholdArgs, seed: u64, out: &Path) -> Result<ExitCode> {
    let (model, dep) = (a.system.model()?, a.system.dependence()?);
    let crit = load_report_with(a.system.servers, a.system.replicas, 1.0, &model, &dep, MinMethod::Analytic)?.lambda_crit_fluid;
    let grid: Vec<f64> = parse_number_list(&a.grid, 0)?.into_iter().map(|x| x * crit).collect();
    let base = SystemConfig::new(a.system.servers, a.system.replicas, 1.0, model, dep).with_arrivals(parse_count(&a.arrivals, 0)?).with_seed(seed);
    let est = estimate_threshold(&base, &grid, a.replications)?;
    write_threshold(&out.join("threshold.csv"), &est.points)?;
    match &est.outcome {
        ThresholdOutcome::Estimated(ci) => println!("lambda_star={} ci_halfwidth={} lambda_crit_fluid={}", num(ci.mean), num(ci.half_width), num(crit)),
        ThresholdOutcome::Inconclusive(why) => println!("lambda_star=inconclusive ({why}) lambda_crit_fluid={}", num(crit)),
    }
    Ok(ExitCode::SUCCESS)
}

fn report(a: ReportArgs, seed: u64, out: &Path) -> Result<ExitCode> {
    let (model, dep) = (a.system.model()?, a.system.dependence()?);
    let method = if a.monte_carlo { MinMethod::MonteCarlo { samples: 1_000_000, seed } } else { MinMethod::Analytic };
    let r = load_report_with(a.system.servers, a.system.replicas, a.lambda, &model, &dep, method)?;
    write_loads(&out.join("loads.csv"), &[load_cells(a.system.servers, a.system.replicas, a.lambda, &model.to_string(), &dep.to_string(), &r)])?;
    println!("rho={}", num(r.rho));
    println!("rho_tilde={}", num(r.rho_tilde));
    println!("lambda_crit_fluid={}", num(r.lambda_crit_fluid));
    println!("lambda_crit_sufficient={}", num(r.lambda_crit_sufficient));
    println!("e_min={} ({})", num(r.e_min.value), r.e_min.method.label());
    Ok(ExitCode::SUCCESS)
}
