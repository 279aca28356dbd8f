//! CSV writers and the flat `key = value` run manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::engine::{SimulationRecord, Trajectory, Variant};
use crate::error::Result;
use crate::fluid::{FluidPath, FluidVerdict};
use crate::stability::{LoadReport, ThresholdPoint};
use crate::stats::MeanCi;
use crate::virtual_queues::ClassIndex;

/// Shortest round-trip representation, in exponent form for very small or
/// very large magnitudes; empty for NaN.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x.is_nan() {
        String::new()
    } else if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), num)
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_latencies(path: &Path, record: &SimulationRecord) -> Result<()> {
    let rows: Vec<Vec<String>> = record
        .latencies
        .iter()
        .map(|j| vec![j.id.to_string(), num(j.arrival), num(j.latency)])
        .collect();
    write_rows(path, &["job_id", "arrival_time", "latency"], &rows)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let width = traj.queues.first().map_or(0, Vec::len);
    let mut header = vec!["time".to_string()];
    header.extend((1..=width).map(|i| format!("q_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = traj
        .times
        .iter()
        .zip(&traj.queues)
        .map(|(t, q)| std::iter::once(num(*t)).chain(q.iter().map(u32::to_string)).collect())
        .collect();
    write_rows(path, &header, &rows)
}

pub struct SummaryRow {
    pub variant: Variant,
    pub lambda: f64,
    pub mean_latency: f64,
    /// `None` with a single replication.
    pub ci: Option<MeanCi>,
    pub n_jobs: usize,
    pub seed: u64,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.variant.name().to_string(),
                num(r.lambda),
                num(r.mean_latency),
                opt(r.ci.map(|c| c.half_width)),
                r.n_jobs.to_string(),
                r.seed.to_string(),
            ]
        })
        .collect();
    write_rows(path, &["variant", "lambda", "mean_latency", "ci_halfwidth", "n_jobs", "seed"], &rows)
}

pub fn write_classes(path: &Path, index: &ClassIndex) -> Result<()> {
    let rows: Vec<Vec<String>> = (0..index.len())
        .map(|i| {
            let set: Vec<String> = index.server_set(i).iter().map(|s| (s + 1).to_string()).collect();
            vec![(i + 1).to_string(), set.join(" ")]
        })
        .collect();
    write_rows(path, &["class_id", "server_set"], &rows)
}

pub fn write_fluid(path: &Path, p: &FluidPath) -> Result<()> {
    let m = p.classes();
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("q_{i}")));
    header.extend((1..=m).map(|i| format!("Phi_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..p.len())
        .map(|k| {
            std::iter::once(num(p.times[k]))
                .chain(p.q[k].iter().map(|&x| num(x)))
                .chain(p.phi[k].iter().map(|&x| num(x)))
                .collect()
        })
        .collect();
    write_rows(path, &header, &rows)
}

pub const FLUID_SUMMARY_HEADER: [&str; 12] = [
    "label",
    "servers",
    "replicas",
    "lambda",
    "rho_tilde",
    "mode",
    "q0",
    "verdict",
    "drain_time",
    "slope",
    "exponential_slope",
    "drain_tolerance",
];

pub struct FluidSummaryRow<'a> {
    pub label: &'a str,
    pub servers: usize,
    pub replicas: usize,
    pub lambda: f64,
    pub rho_tilde: f64,
    pub mode: &'a str,
    pub q0: f64,
    pub verdict: FluidVerdict,
    /// Trailing-window slope of total mass, reported whatever the verdict.
    pub slope: f64,
    /// `lambda/M - sigma/E[X_min]`, the growth rate when `X_min` is exponential.
    pub exponential_slope: f64,
    pub drain_tolerance: f64,
}

impl FluidSummaryRow<'_> {
    pub fn cells(&self) -> Vec<String> {
        let drain = match self.verdict {
            FluidVerdict::Stable { drain_time } => num(drain_time),
            _ => String::new(),
        };
        vec![
            self.label.to_string(),
            self.servers.to_string(),
            self.replicas.to_string(),
            num(self.lambda),
            num(self.rho_tilde),
            self.mode.to_string(),
            num(self.q0),
            self.verdict.label().to_string(),
            drain,
            num(self.slope),
            num(self.exponential_slope),
            num(self.drain_tolerance),
        ]
    }
}

pub fn write_fluid_summary(path: &Path, rows: &[FluidSummaryRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows.iter().map(FluidSummaryRow::cells).collect();
    write_rows(path, &FLUID_SUMMARY_HEADER, &rows)
}

pub const THRESHOLD_HEADER: [&str; 5] = ["lambda", "slope", "slope_ci_lo", "slope_ci_hi", "verdict"];

pub fn threshold_cells(p: &ThresholdPoint) -> Vec<String> {
    vec![num(p.lambda), num(p.slope.mean), num(p.slope.lo()), num(p.slope.hi()), p.verdict.label().to_string()]
}

pub fn write_threshold(path: &Path, points: &[ThresholdPoint]) -> Result<()> {
    let rows: Vec<Vec<String>> = points.iter().map(threshold_cells).collect();
    write_rows(path, &THRESHOLD_HEADER, &rows)
}

pub const LOADS_HEADER: [&str; 12] = [
    "servers",
    "replicas",
    "lambda",
    "model",
    "dep",
    "rho",
    "rho_tilde",
    "lambda_crit_fluid",
    "lambda_crit_sufficient",
    "e_min",
    "e_min_std_error",
    "e_min_method",
];

pub fn load_cells(n: usize, d: usize, lambda: f64, model: &str, dep: &str, r: &LoadReport) -> Vec<String> {
    vec![
        n.to_string(),
        d.to_string(),
        num(lambda),
        model.to_string(),
        dep.to_string(),
        num(r.rho),
        num(r.rho_tilde),
        num(r.lambda_crit_fluid),
        num(r.lambda_crit_sufficient),
        num(r.e_min.value),
        num(r.e_min.std_error),
        r.e_min.method.label().to_string(),
    ]
}

pub fn write_loads(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    write_rows(path, &LOADS_HEADER, rows)
}

/// Ordered `key = value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
