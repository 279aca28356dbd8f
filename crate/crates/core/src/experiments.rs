//! Spec-driven experiment runner.
//!
//! A spec names a scenario and its parameters in the line-oriented format of
//! [`crate::parse`]. Cells run on the rayon pool and are written in cell
//! order, so reruns give byte-identical CSVs.
//!
//! ```text
//! name = fig3_left
//! scenario = latency_sweep
//! servers = 4
//! replicas = 2
//! lambda = 0.1, 0.3, 0.5, 0.7, 0.9
//! models = table2
//! dep = identical
//! variants = lower, original, upper, fully_served
//! replications = 10
//! arrivals = 100000
//! seed = 1
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::dist::{DependenceModel, JobSizeModel, MinDistribution, MinMethod};
use crate::engine::{aligned_latencies, mean_latency, replication_seed, run, run_coupled, SimulationRecord, SystemConfig, Variant};
use crate::error::{Error, Result};
use crate::fluid::{classify_fluid, solve_scalar, solve_vector, trailing_slope, FluidConfig, FluidMode, FluidVerdict, InitialMass, InitialSizes};
use crate::output::{num, threshold_cells, write_fluid, write_rows, FluidSummaryRow, Manifest, FLUID_SUMMARY_HEADER, THRESHOLD_HEADER};
use crate::parse::{parse_count, parse_dependence_at, parse_distribution_list, parse_document, parse_number_at, parse_number_list, Document, Entry};
use crate::stability::{estimate_threshold, load_report_with, queue_slope, ThresholdOutcome, MIN_GROWTH_FRACTION};
use crate::stats::{mean_ci, MeanCi};
use crate::virtual_queues::{event_log_distance, run_virtual};

/// Cells whose `rho~` exceeds this are flagged `high-variance`.
pub const HIGH_VARIANCE_LOAD: f64 = 0.97;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    LatencySweep,
    NearInsensitivity,
    LoadVsD,
    ThresholdSweep,
    FluidRun,
    BoundComparison,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::LatencySweep,
        Scenario::NearInsensitivity,
        Scenario::LoadVsD,
        Scenario::ThresholdSweep,
        Scenario::FluidRun,
        Scenario::BoundComparison,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::LatencySweep => "latency_sweep",
            Scenario::NearInsensitivity => "near_insensitivity",
            Scenario::LoadVsD => "load_vs_d",
            Scenario::ThresholdSweep => "threshold_sweep",
            Scenario::FluidRun => "fluid_run",
            Scenario::BoundComparison => "bound_comparison",
        }
    }

    pub fn from_name(s: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the arrival rate of a cell is set.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaAxis {
    Absolute(Vec<f64>),
    /// Target `rho~`; `lambda = rho~ N / (d E[min])` per model and `d`.
    Load(Vec<f64>),
    /// Fractions of `N / (d E[min])`.
    CritFraction(Vec<f64>),
}

impl LambdaAxis {
    pub fn values(&self) -> &[f64] {
        match self {
            LambdaAxis::Absolute(v) | LambdaAxis::Load(v) | LambdaAxis::CritFraction(v) => v,
        }
    }

    fn key(&self) -> &'static str {
        match self {
            LambdaAxis::Absolute(_) => "lambda",
            LambdaAxis::Load(_) => "load",
            LambdaAxis::CritFraction(_) => "lambda_fraction",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidSettings {
    pub q0: f64,
    pub step: f64,
    pub horizon: f64,
    pub mode: FluidMode,
    /// Trailing window for the growth test; defaults to half the horizon.
    pub window: Option<f64>,
    pub initial: InitialSizes,
}

impl Default for FluidSettings {
    fn default() -> Self {
        FluidSettings { q0: 5.0, step: 0.25, horizon: 2000.0, mode: FluidMode::Scalar, window: None, initial: InitialSizes::Fresh }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: Scenario,
    pub servers: usize,
    /// One `d`, or the sweep for `load_vs_d`.
    pub replicas: Vec<usize>,
    pub lambda: LambdaAxis,
    pub models: Vec<(String, JobSizeModel)>,
    pub dep: DependenceModel,
    pub variants: Vec<Variant>,
    pub replications: usize,
    pub arrivals: u64,
    /// Defaults to a tenth of `arrivals`.
    pub warmup: Option<u64>,
    pub seed: u64,
    pub min_method: MinMethod,
    pub fluid: FluidSettings,
    /// Subdirectory of the output root; empty writes to the root.
    pub output: String,
}

const ROOT_KEYS: [&str; 16] = [
    "name",
    "scenario",
    "servers",
    "replicas",
    "lambda",
    "load",
    "lambda_fraction",
    "models",
    "dep",
    "variants",
    "replications",
    "arrivals",
    "warmup",
    "seed",
    "e_min",
    "output",
];
const FLUID_KEYS: [&str; 6] = ["q0", "step", "horizon", "mode", "window", "initial"];

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn required<'a>(doc: &'a Document, key: &str) -> Result<&'a Entry> {
    doc.section(None).and_then(|s| s.get(key)).ok_or_else(|| perr(0, format!("missing required key `{key}`")))
}

fn usize_of(e: &Entry) -> Result<usize> {
    usize::try_from(parse_count(&e.value, e.line)?).map_err(|_| perr(e.line, "value too large"))
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<ExperimentSpec> {
        let doc = parse_document(text)?;
        for s in &doc.sections {
            match s.name.as_deref() {
                None => s.check_keys(&ROOT_KEYS)?,
                Some("fluid") => s.check_keys(&FLUID_KEYS)?,
                Some(other) => return Err(perr(s.line, format!("unknown section [{other}]"))),
            }
        }
        let root = doc.section(None).expect("root section");
        let name = required(&doc, "name")?;
        if name.value.is_empty() || !name.value.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(perr(name.line, "name may hold only letters, digits, `_` and `-`"));
        }
        let sc = required(&doc, "scenario")?;
        let scenario = Scenario::from_name(&sc.value).ok_or_else(|| {
            let all: Vec<&str> = Scenario::ALL.iter().map(Scenario::name).collect();
            perr(sc.line, format!("unknown scenario `{}`; one of {}", sc.value, all.join(", ")))
        })?;
        let servers = usize_of(required(&doc, "servers")?)?;
        let d_entry = required(&doc, "replicas")?;
        let replicas: Vec<usize> = parse_number_list(&d_entry.value, d_entry.line)?
            .into_iter()
            .map(|x| if x >= 1.0 && x.fract() == 0.0 { Ok(x as usize) } else { Err(perr(d_entry.line, format!("bad replica count {x}"))) })
            .collect::<Result<_>>()?;
        if replicas.iter().any(|&d| d > servers) {
            return Err(perr(d_entry.line, format!("replica counts must not exceed servers = {servers}")));
        }
        if replicas.len() > 1 && scenario != Scenario::LoadVsD {
            return Err(perr(d_entry.line, format!("{scenario} takes a single replica count")));
        }
        let axes: Vec<&Entry> = ["lambda", "load", "lambda_fraction"].iter().filter_map(|k| root.get(k)).collect();
        let lambda = match axes.as_slice() {
            [e] => {
                let v = parse_number_list(&e.value, e.line)?;
                if v.iter().any(|x| *x <= 0.0) {
                    return Err(perr(e.line, format!("`{}` values must be positive", e.key)));
                }
                if v.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(perr(e.line, format!("`{}` must be strictly increasing", e.key)));
                }
                match e.key.as_str() {
                    "lambda" => LambdaAxis::Absolute(v),
                    "load" => LambdaAxis::Load(v),
                    _ => LambdaAxis::CritFraction(v),
                }
            }
            [] => return Err(perr(0, "one of `lambda`, `load`, `lambda_fraction` is required")),
            [_, second, ..] => return Err(perr(second.line, "give only one of `lambda`, `load`, `lambda_fraction`")),
        };
        let me = required(&doc, "models")?;
        let models = parse_distribution_list(&me.value, me.line)?;
        let dep = match root.get("dep") {
            Some(e) => parse_dependence_at(&e.value, e.line)?,
            None => DependenceModel::Identical,
        };
        let variants = match root.get("variants") {
            Some(e) => e
                .value
                .split(',')
                .map(|v| Variant::from_name(v.trim()).ok_or_else(|| perr(e.line, format!("unknown variant `{}`", v.trim()))))
                .collect::<Result<Vec<_>>>()?,
            None => match scenario {
                Scenario::LatencySweep | Scenario::BoundComparison => Variant::ALL.to_vec(),
                _ => vec![Variant::Original],
            },
        };
        let replications = root.get("replications").map(usize_of).transpose()?.unwrap_or(10);
        if replications < 2 {
            return Err(perr(root.get("replications").map_or(0, |e| e.line), "replications must be at least 2"));
        }
        let arrivals = root.get("arrivals").map(|e| parse_count(&e.value, e.line)).transpose()?.unwrap_or(100_000);
        if arrivals == 0 {
            return Err(perr(root.get("arrivals").map_or(0, |e| e.line), "arrivals must be positive"));
        }
        let warmup = root.get("warmup").map(|e| parse_count(&e.value, e.line)).transpose()?;
        if let Some(w) = warmup {
            if w >= arrivals {
                return Err(perr(root.get("warmup").map_or(0, |e| e.line), "warmup must be below arrivals"));
            }
        }
        let seed = root.get("seed").map(|e| parse_count(&e.value, e.line)).transpose()?.unwrap_or(1);
        let min_method = match root.get("e_min").map(|e| (e.value.as_str(), e.line)) {
            None | Some(("analytic", _)) => MinMethod::Analytic,
            Some(("monte_carlo", _)) => MinMethod::MonteCarlo { samples: 1_000_000, seed },
            Some((other, line)) => return Err(perr(line, format!("e_min is analytic or monte_carlo, not `{other}`"))),
        };
        let output = root.get("output").map_or(String::new(), |e| e.value.clone());
        let mut fluid = FluidSettings::default();
        if let Some(sec) = doc.section(Some("fluid")) {
            let num_of = |k: &str| sec.get(k).map(|e| parse_number_at(&e.value, e.line)).transpose();
            if let Some(v) = num_of("q0")? {
                fluid.q0 = v;
            }
            if let Some(v) = num_of("step")? {
                fluid.step = v;
            }
            if let Some(v) = num_of("horizon")? {
                fluid.horizon = v;
            }
            fluid.window = num_of("window")?;
            if let Some(e) = sec.get("mode") {
                fluid.mode = match e.value.as_str() {
                    "scalar" => FluidMode::Scalar,
                    "min" => FluidMode::Min,
                    "max" => FluidMode::Max,
                    other => return Err(perr(e.line, format!("mode is scalar, min or max, not `{other}`"))),
                };
            }
            if let Some(e) = sec.get("initial") {
                fluid.initial = match e.value.as_str() {
                    "fresh" => InitialSizes::Fresh,
                    "residual" => InitialSizes::EquilibriumResidual,
                    other => return Err(perr(e.line, format!("initial is fresh or residual, not `{other}`"))),
                };
            }
        }
        Ok(ExperimentSpec {
            name: name.value.clone(),
            scenario,
            servers,
            replicas,
            lambda,
            models,
            dep,
            variants,
            replications,
            arrivals,
            warmup,
            seed,
            min_method,
            fluid,
            output,
        })
    }

    pub fn from_file(path: &Path) -> Result<ExperimentSpec> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

/// One (model, d, lambda) point.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub model_label: String,
    pub model: JobSizeModel,
    pub replicas: usize,
    pub lambda: f64,
    pub rho_tilde: f64,
}

pub fn cells(spec: &ExperimentSpec) -> Result<Vec<Cell>> {
    let mut out = Vec::new();
    for (label, model) in &spec.models {
        for &d in &spec.replicas {
            let crit = load_report_with(spec.servers, d, 1.0, model, &spec.dep, spec.min_method)?.lambda_crit_fluid;
            for &x in spec.lambda.values() {
                let lambda = match spec.lambda {
                    LambdaAxis::Absolute(_) => x,
                    LambdaAxis::Load(_) | LambdaAxis::CritFraction(_) => x * crit,
                };
                let rho_tilde = lambda / crit;
                out.push(Cell { model_label: label.clone(), model: *model, replicas: d, lambda, rho_tilde });
            }
        }
    }
    Ok(out)
}

pub const LATENCY_HEADER: [&str; 17] = [
    "scenario",
    "model",
    "dep",
    "servers",
    "replicas",
    "lambda",
    "rho_tilde",
    "variant",
    "mean_latency",
    "ci_halfwidth",
    "replications",
    "n_jobs",
    "fully_served_analytic",
    "replica_sojourn",
    "replica_sojourn_ci_halfwidth",
    "order_violations",
    "flags",
];

/// `E[X] / (1 - d lambda E[X] / N)`, or `None` past the fully served threshold.
pub fn fully_served_analytic(n: usize, d: usize, lambda: f64, mean: f64) -> Option<f64> {
    let load = d as f64 * lambda * mean / n as f64;
    (load < 1.0).then(|| mean / (1.0 - load))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub mean: f64,
    pub half_width: f64,
    pub n_jobs: usize,
    /// Per-replica sojourn for the fully served variant.
    pub replica_sojourn: Option<MeanCi>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub variants: Vec<VariantResult>,
    /// Jobs where `lower <= original <= upper` fails, summed over replications;
    /// `None` unless all three variants ran.
    pub order_violations: Option<usize>,
    pub unstable: bool,
}

impl CellResult {
    pub fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.unstable {
            f.push("unstable");
        }
        if self.cell.rho_tilde > HIGH_VARIANCE_LOAD {
            f.push("high-variance");
        }
        f.join(";")
    }
}

fn cell_config(spec: &ExperimentSpec, cell: &Cell) -> SystemConfig {
    let mut cfg = SystemConfig::new(spec.servers, cell.replicas, cell.lambda, cell.model, spec.dep).with_arrivals(spec.arrivals);
    if let Some(w) = spec.warmup {
        cfg.warmup = w;
    }
    cfg.seed = spec.seed;
    cfg
}

fn count_violations(records: &[SimulationRecord]) -> Result<usize> {
    let rows = aligned_latencies(records)?;
    Ok(rows
        .iter()
        .filter(|(_, l)| {
            let tol = 1e-9 * l[2].abs().max(1.0);
            !(l[0] <= l[1] + tol && l[1] <= l[2] + tol)
        })
        .count())
}

pub fn run_cell(spec: &ExperimentSpec, cell: &Cell) -> Result<CellResult> {
    let base = cell_config(spec, cell);
    let mut per_rep: Vec<Vec<SimulationRecord>> = Vec::with_capacity(spec.replications);
    for r in 0..spec.replications {
        let seed = replication_seed(spec.seed, r);
        let configs: Vec<SystemConfig> = spec.variants.iter().map(|&v| base.clone().with_variant(v).with_seed(seed)).collect();
        per_rep.push(run_coupled(&configs)?);
    }
    let mut variants = Vec::new();
    for (k, &variant) in spec.variants.iter().enumerate() {
        let recs: Vec<SimulationRecord> = per_rep.iter().map(|rs| rs[k].clone()).collect();
        let ci = mean_latency(&recs)?;
        let n_jobs = recs.iter().map(|r| r.latencies.len()).sum();
        let replica_sojourn = if variant == Variant::FullyServed {
            let w: Option<Vec<f64>> = recs.iter().map(SimulationRecord::mean_replica_sojourn).collect();
            w.map(|w| mean_ci(&w)).transpose()?
        } else {
            None
        };
        variants.push(VariantResult { variant, mean: ci.mean, half_width: ci.half_width, n_jobs, replica_sojourn });
    }
    let triple = [Variant::LowerBound, Variant::Original, Variant::UpperBound].map(|v| spec.variants.iter().position(|&x| x == v));
    let order_violations = match triple {
        [Some(a), Some(b), Some(c)] => {
            let mut total = 0;
            for rs in &per_rep {
                total += count_violations(&[rs[a].clone(), rs[b].clone(), rs[c].clone()])?;
            }
            Some(total)
        }
        _ => None,
    };
    let unstable = if cell.rho_tilde >= 1.0 {
        true
    } else {
        // growth of the original (or first) variant's queue without the drain phase
        let k = spec.variants.iter().position(|&v| v == Variant::Original).unwrap_or(0);
        let slopes: Vec<f64> = per_rep
            .iter()
            .map(|rs| queue_slope_until_last_arrival(&rs[k], cell.replicas))
            .collect::<Result<_>>()?;
        let ci = mean_ci(&slopes)?;
        ci.lo() > 0.0 && ci.mean > MIN_GROWTH_FRACTION * cell.lambda
    };
    Ok(CellResult { cell: cell.clone(), variants, order_violations, unstable })
}

fn queue_slope_until_last_arrival(record: &SimulationRecord, replicas: usize) -> Result<f64> {
    let last_arrival = record.latencies.last().map_or(record.end_time, |j| j.arrival).max(f64::MIN_POSITIVE);
    let mut trimmed = record.clone();
    let keep = trimmed.trajectory.times.partition_point(|&t| t <= last_arrival);
    trimmed.trajectory.times.truncate(keep);
    trimmed.trajectory.queues.truncate(keep);
    if trimmed.trajectory.len() < 3 {
        return Ok(0.0);
    }
    queue_slope(&trimmed, replicas)
}

pub fn latency_rows(spec: &ExperimentSpec, results: &[CellResult]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for res in results {
        let c = &res.cell;
        let analytic = fully_served_analytic(spec.servers, c.replicas, c.lambda, c.model.mean());
        for v in &res.variants {
            rows.push(vec![
                spec.scenario.name().to_string(),
                c.model_label.clone(),
                spec.dep.to_string(),
                spec.servers.to_string(),
                c.replicas.to_string(),
                num(c.lambda),
                num(c.rho_tilde),
                v.variant.name().to_string(),
                num(v.mean),
                num(v.half_width),
                spec.replications.to_string(),
                v.n_jobs.to_string(),
                analytic.map_or(String::new(), num),
                v.replica_sojourn.map_or(String::new(), |c| num(c.mean)),
                v.replica_sojourn.map_or(String::new(), |c| num(c.half_width)),
                res.order_violations.map_or(String::new(), |x| x.to_string()),
                res.flags(),
            ]);
        }
    }
    rows
}

/// Largest `|a - b| / min(a, b)` over pairs of original-variant means.
pub fn max_pairwise_relative_difference(results: &[CellResult]) -> Option<f64> {
    let means: Vec<f64> = results
        .iter()
        .filter_map(|r| r.variants.iter().find(|v| v.variant == Variant::Original).map(|v| v.mean))
        .collect();
    if means.len() < 2 {
        return None;
    }
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((hi - lo) / lo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub directory: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: Manifest,
}

fn base_manifest(spec: &ExperimentSpec) -> Manifest {
    let mut m = Manifest::new();
    m.set("name", &spec.name)
        .set("scenario", spec.scenario)
        .set("tool", concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")))
        .set("servers", spec.servers)
        .set("replicas", spec.replicas.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
        .set(spec.lambda.key(), spec.lambda.values().iter().map(|x| num(*x)).collect::<Vec<_>>().join(","))
        .set(
            "models",
            spec.models.iter().map(|(l, m)| if *l == m.to_string() { l.clone() } else { format!("{l}={m}") }).collect::<Vec<_>>().join("; "),
        )
        .set("dep", spec.dep)
        .set("variants", spec.variants.iter().map(Variant::name).collect::<Vec<_>>().join(","))
        .set("replications", spec.replications)
        .set("arrivals", spec.arrivals)
        .set("warmup", spec.warmup.unwrap_or(spec.arrivals / 10))
        .set("seed", spec.seed)
        .set(
            "replication_seeds",
            (0..spec.replications).map(|r| replication_seed(spec.seed, r).to_string()).collect::<Vec<_>>().join(","),
        )
        .set("rng", "ChaCha8")
        .set("ci", "normal 95% across replication means")
        .set("e_min", spec.min_method.label())
        .set("high_variance_above_rho_tilde", HIGH_VARIANCE_LOAD);
    m
}

pub fn run_experiment(spec: &ExperimentSpec, out_root: &Path) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let dir = out_root.join(&spec.output);
    std::fs::create_dir_all(&dir)?;
    let mut manifest = base_manifest(spec);
    let mut files = Vec::new();
    let cells = cells(spec)?;
    manifest.set("cells", cells.len());
    match spec.scenario {
        Scenario::LatencySweep | Scenario::NearInsensitivity | Scenario::LoadVsD | Scenario::BoundComparison => {
            let results: Vec<CellResult> = cells.par_iter().map(|c| run_cell(spec, c)).collect::<Result<_>>()?;
            let path = dir.join(format!("{}.csv", spec.name));
            write_rows(&path, &LATENCY_HEADER, &latency_rows(spec, &results))?;
            files.push(path);
            if let Some(v) = results.iter().map(|r| r.order_violations).sum::<Option<usize>>() {
                manifest.set("order_violations", v);
            }
            if spec.scenario == Scenario::NearInsensitivity {
                if let Some(x) = max_pairwise_relative_difference(&results) {
                    manifest.set("max_pairwise_relative_difference", num(x));
                }
            }
            manifest.set("unstable_cells", results.iter().filter(|r| r.unstable).count());
        }
        Scenario::ThresholdSweep => {
            let mut rows = Vec::new();
            let mut summary = Vec::new();
            for (label, model) in &spec.models {
                for &d in &spec.replicas {
                    let base = cell_config(spec, &Cell { model_label: label.clone(), model: *model, replicas: d, lambda: 1.0, rho_tilde: 0.0 });
                    let grid: Vec<f64> = cells.iter().filter(|c| &c.model_label == label && c.replicas == d).map(|c| c.lambda).collect();
                    let est = estimate_threshold(&base, &grid, spec.replications)?;
                    let crit = load_report_with(spec.servers, d, 1.0, model, &spec.dep, spec.min_method)?.lambda_crit_fluid;
                    for p in &est.points {
                        let mut r = vec![label.clone(), d.to_string()];
                        r.extend(threshold_cells(p));
                        rows.push(r);
                    }
                    let (star, half, note) = match &est.outcome {
                        ThresholdOutcome::Estimated(ci) => (num(ci.mean), num(ci.half_width), String::new()),
                        ThresholdOutcome::Inconclusive(why) => (String::new(), String::new(), why.clone()),
                    };
                    summary.push(vec![label.clone(), d.to_string(), num(crit), star, half, note]);
                }
            }
            let mut header = vec!["model", "replicas"];
            header.extend(THRESHOLD_HEADER);
            let path = dir.join(format!("{}.csv", spec.name));
            write_rows(&path, &header, &rows)?;
            files.push(path);
            let path = dir.join(format!("{}_summary.csv", spec.name));
            write_rows(&path, &["model", "replicas", "lambda_crit_fluid", "lambda_star", "ci_halfwidth", "note"], &summary)?;
            files.push(path);
        }
        Scenario::FluidRun => {
            let runs: Vec<(FluidConfig, crate::fluid::FluidPath)> = cells
                .par_iter()
                .map(|c| {
                    let cfg = fluid_config(spec, c);
                    let path = match cfg.mode {
                        FluidMode::Scalar => solve_scalar(&cfg)?,
                        _ => solve_vector(&cfg)?,
                    };
                    Ok((cfg, path))
                })
                .collect::<Result<_>>()?;
            let mut summary = Vec::new();
            for (k, ((cfg, path), cell)) in runs.iter().zip(&cells).enumerate() {
                let window = spec.fluid.window.unwrap_or(spec.fluid.horizon / 2.0);
                let verdict = classify_fluid(path, window)?;
                let slope = trailing_slope(path, window)?;
                let label = format!("{}_{}", cell.model_label, k + 1);
                summary.push(fluid_summary(&label, cfg, verdict, slope, path.drain_tolerance).cells());
                let file = dir.join(format!("{}_{}.csv", spec.name, k + 1));
                write_fluid(&file, path)?;
                files.push(file);
            }
            let path = dir.join(format!("{}_summary.csv", spec.name));
            write_rows(&path, &FLUID_SUMMARY_HEADER, &summary)?;
            files.push(path);
        }
    }
    manifest.set("files", files.iter().filter_map(|p| p.file_name()).map(|f| f.to_string_lossy().into_owned()).collect::<Vec<_>>().join(","));
    manifest.set("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    manifest.write(&dir.join(format!("{}.manifest", spec.name)))?;
    Ok(ExperimentOutput { directory: dir, files, manifest })
}

fn fluid_config(spec: &ExperimentSpec, cell: &Cell) -> FluidConfig {
    let md = MinDistribution::new(cell.model, spec.dep, cell.replicas);
    let mut cfg = FluidConfig::new(spec.servers, cell.replicas, cell.lambda, md, spec.fluid.q0)
        .with_step(spec.fluid.step)
        .with_horizon(spec.fluid.horizon)
        .with_mode(spec.fluid.mode);
    cfg.initial_sizes = spec.fluid.initial;
    if spec.fluid.mode != FluidMode::Scalar {
        cfg.q0 = InitialMass::Scalar(spec.fluid.q0);
    }
    cfg
}

pub fn mode_name(m: FluidMode) -> &'static str {
    match m {
        FluidMode::Scalar => "scalar",
        FluidMode::Min => "min",
        FluidMode::Max => "max",
    }
}

pub fn fluid_summary<'a>(label: &'a str, cfg: &FluidConfig, verdict: FluidVerdict, slope: f64, tol: f64) -> FluidSummaryRow<'a> {
    let q0 = match &cfg.q0 {
        InitialMass::Scalar(x) => *x,
        InitialMass::PerClass(v) => v.iter().sum::<f64>() / v.len().max(1) as f64,
    };
    FluidSummaryRow {
        label,
        servers: cfg.servers,
        replicas: cfg.replicas,
        lambda: cfg.lambda,
        rho_tilde: cfg.rho_tilde(),
        mode: mode_name(cfg.mode),
        q0,
        verdict,
        slope,
        exponential_slope: cfg.class_lambda() - cfg.sigma() / cfg.min_dist.mean(),
        drain_tolerance: tol,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Coupling and equivalence properties on small systems.
pub fn validate_suite(seed: u64, arrivals: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let deps = [DependenceModel::Identical, DependenceModel::Iid];
    // bound ordering per job
    let mut violations = 0;
    let mut jobs = 0;
    for (_, model) in JobSizeModel::table2() {
        for dep in deps {
            for d in [2, 3] {
                let lambda = 0.8 * 4.0 / (d as f64 * model.mean());
                let base = SystemConfig::new(4, d, lambda, model, dep).with_arrivals(arrivals).with_seed(seed);
                let cfgs: Vec<SystemConfig> = [Variant::LowerBound, Variant::Original, Variant::UpperBound].iter().map(|&v| base.clone().with_variant(v)).collect();
                let recs = run_coupled(&cfgs)?;
                violations += count_violations(&recs)?;
                jobs += recs[1].latencies.len();
            }
        }
    }
    out.push(CheckResult { name: "bound ordering".into(), passed: violations == 0, detail: format!("{violations} of {jobs} jobs out of order") });

    // degenerate replication
    let mut worst: f64 = 0.0;
    for (_, model) in JobSizeModel::table2() {
        for (d, dep) in [(1, DependenceModel::Iid), (4, DependenceModel::Iid), (4, DependenceModel::Identical)] {
            let base = SystemConfig::new(4, d, 0.5 * 4.0 / (d as f64 * model.mean()), model, dep).with_arrivals(arrivals).with_seed(seed);
            let variants: Vec<Variant> = Variant::ALL
                .into_iter()
                .filter(|&v| !(v == Variant::FullyServed && d == 4 && dep == DependenceModel::Iid))
                .collect();
            let cfgs: Vec<SystemConfig> = variants.iter().map(|&v| base.clone().with_variant(v)).collect();
            let recs = run_coupled(&cfgs)?;
            for r in &recs[1..] {
                if r.latencies.len() != recs[0].latencies.len() {
                    worst = f64::INFINITY;
                    continue;
                }
                for (a, b) in recs[0].latencies.iter().zip(&r.latencies) {
                    worst = worst.max((a.latency - b.latency).abs());
                }
            }
        }
    }
    out.push(CheckResult { name: "d=1 and d=N coincidence".into(), passed: worst <= 1e-9, detail: format!("max latency gap {worst:e}") });

    // virtual queues against server-level bounds
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for n in 3..=5 {
        for d in 2..=3 {
            for variant in [Variant::LowerBound, Variant::UpperBound] {
                let mut cfg = SystemConfig::new(n, d, 0.7 * n as f64 / (d as f64 * 2.0), JobSizeModel::exponential(2.0)?, DependenceModel::Iid)
                    .with_arrivals(arrivals.min(20_000))
                    .with_variant(variant)
                    .with_seed(seed);
                cfg.record_events = true;
                let a = run(&cfg)?;
                let b = run_virtual(&cfg)?;
                match event_log_distance(&a.event_log, &b.event_log) {
                    Some(x) => worst = worst.max(x),
                    None => ok = false,
                }
            }
        }
    }
    out.push(CheckResult { name: "virtual queue equivalence".into(), passed: ok && worst <= 1e-9, detail: format!("max event time gap {worst:e}") });

    // sample-path Little's law: area under jobs-in-system equals summed latency
    let mut worst: f64 = 0.0;
    for variant in Variant::ALL {
        let mut cfg = SystemConfig::new(4, 2, 0.8, JobSizeModel::exponential(2.0)?, DependenceModel::Iid).with_arrivals(arrivals).with_variant(variant).with_seed(seed);
        cfg.warmup = 0;
        let r = run(&cfg)?;
        let total: f64 = r.latencies.iter().map(|j| j.latency).sum();
        worst = worst.max((r.jobs_area - total).abs() / total);
    }
    out.push(CheckResult { name: "Little's law".into(), passed: worst <= 1e-9, detail: format!("max relative gap {worst:e}") });
    Ok(out)
}
