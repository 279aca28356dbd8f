//! Load figures, closed-form thresholds and a simulation-based threshold
//! estimator.

use std::fmt;

use rayon::prelude::*;

use crate::dist::{classify_aging, default_aging_grid, expected_min, Aging, DependenceModel, JobSizeModel, MinEstimate, MinMethod};
use crate::engine::{replication_seed, run, Horizon, SimulationRecord, SystemConfig};
use crate::error::{Error, Result};
use crate::stats::{linear_fit, mean_ci, MeanCi};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadReport {
    /// `lambda E[X] / N`
    pub rho: f64,
    /// `d lambda E[min] / N`
    pub rho_tilde: f64,
    /// `N / (d E[min])`
    pub lambda_crit_fluid: f64,
    /// `N / (d E[X])`, below which every server of the fully served system is stable.
    pub lambda_crit_sufficient: f64,
    pub e_min: MinEstimate,
}

pub fn load_report(n: usize, d: usize, lambda: f64, model: &JobSizeModel, dep: &DependenceModel) -> Result<LoadReport> {
    load_report_with(n, d, lambda, model, dep, MinMethod::Analytic)
}

pub fn load_report_with(
    n: usize,
    d: usize,
    lambda: f64,
    model: &JobSizeModel,
    dep: &DependenceModel,
    method: MinMethod,
) -> Result<LoadReport> {
    if d == 0 || d > n {
        return Err(Error::InvalidParameter(format!("need 1 <= d <= N, got d = {d}, N = {n}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let e_min = expected_min(dep, model, d, method)?;
    let (nf, df, ex) = (n as f64, d as f64, model.mean());
    Ok(LoadReport {
        rho: lambda * ex / nf,
        rho_tilde: df * lambda * e_min.value / nf,
        lambda_crit_fluid: nf / (df * e_min.value),
        lambda_crit_sufficient: nf / (df * ex),
        e_min,
    })
}

/// Scaled-Bernoulli stability thresholds in `lambda`: `(K^(d-1), N K^(d-1) / d)`
/// for FCFS and PS.
pub fn bernoulli_thresholds(n: usize, d: usize, k: f64) -> (f64, f64) {
    let fcfs = k.powi(d as i32 - 1);
    (fcfs, n as f64 * fcfs / d as f64)
}

/// A point is unstable only if its mean growth also exceeds this fraction of
/// the arrival rate; low-variance stable runs can have CIs a hair above zero.
pub const MIN_GROWTH_FRACTION: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlopeVerdict {
    /// Slope CI lies above zero and the mean clears the growth floor.
    Unstable,
    /// Slope CI contains zero.
    Stable,
    /// Slope CI lies below zero (a run that started loaded and is emptying).
    Draining,
}

impl SlopeVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            SlopeVerdict::Unstable => "unstable",
            SlopeVerdict::Stable => "stable",
            SlopeVerdict::Draining => "draining",
        }
    }
}

impl fmt::Display for SlopeVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPoint {
    pub lambda: f64,
    /// Growth rate of the number of jobs in system, one per replication.
    pub slopes: Vec<f64>,
    pub slope: MeanCi,
    pub verdict: SlopeVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdOutcome {
    Estimated(MeanCi),
    Inconclusive(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdEstimate {
    pub points: Vec<ThresholdPoint>,
    pub outcome: ThresholdOutcome,
}

impl ThresholdEstimate {
    pub fn lambda_star(&self) -> Option<MeanCi> {
        match self.outcome {
            ThresholdOutcome::Estimated(ci) => Some(ci),
            ThresholdOutcome::Inconclusive(_) => None,
        }
    }
}

/// Least-squares growth rate of the jobs in system over the trailing half of
/// the run. Each job holds `d` replicas, so server totals are divided by `d`.
pub fn queue_slope(record: &SimulationRecord, replicas: usize) -> Result<f64> {
    let traj = &record.trajectory;
    let Some(&end) = traj.times.last() else {
        return Err(Error::InsufficientData("empty trajectory".into()));
    };
    let start = traj.times.partition_point(|&t| t < end / 2.0);
    let totals: Vec<f64> = traj.totals()[start..].iter().map(|x| x / replicas as f64).collect();
    Ok(linear_fit(&traj.times[start..], &totals)?.slope)
}

/// Runs `replications` seeds at every grid point (the same seeds at every
/// point) and classifies the slope of the jobs in system.
///
/// Above the threshold the drift grows linearly in `lambda`, so for each
/// replication a line is fitted to the unstable points' slopes and its zero
/// crossing taken; `lambda_star` is the mean of those crossings with a 95% CI.
pub fn estimate_threshold(base: &SystemConfig, grid: &[f64], replications: usize) -> Result<ThresholdEstimate> {
    if replications < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 replications per point, got {replications}")));
    }
    if grid.len() < 2 {
        return Err(Error::InvalidParameter("threshold grid needs at least 2 points".into()));
    }
    let mut grid = grid.to_vec();
    if grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidParameter("grid values must be positive".into()));
    }
    grid.sort_by(f64::total_cmp);
    let mut base = base.clone();
    base.drain = false;
    if base.trajectory_rows == 0 {
        base.trajectory_rows = 2000;
    }
    if !matches!(base.horizon, Horizon::Arrivals(_)) {
        return Err(Error::InvalidParameter("threshold runs use an arrival-count horizon".into()));
    }
    base.validate()?;

    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|i| (0..replications).map(move |r| (i, r))).collect();
    let slopes: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let mut cfg = base.clone();
            cfg.lambda = grid[i];
            cfg.seed = replication_seed(base.seed, r);
            queue_slope(&run(&cfg)?, cfg.replicas)
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(grid.len());
    for (i, &lambda) in grid.iter().enumerate() {
        let s = slopes[i * replications..(i + 1) * replications].to_vec();
        let ci = mean_ci(&s)?;
        let verdict = if ci.lo() > 0.0 && ci.mean > MIN_GROWTH_FRACTION * lambda {
            SlopeVerdict::Unstable
        } else if ci.hi() < 0.0 {
            SlopeVerdict::Draining
        } else {
            SlopeVerdict::Stable
        };
        points.push(ThresholdPoint { lambda, slopes: s, slope: ci, verdict });
    }
    let outcome = extrapolate(&points, replications);
    Ok(ThresholdEstimate { points, outcome })
}

fn extrapolate(points: &[ThresholdPoint], replications: usize) -> ThresholdOutcome {
    let Some(first_unstable) = points.iter().position(|p| p.verdict == SlopeVerdict::Unstable) else {
        return ThresholdOutcome::Inconclusive("no grid point is unstable".into());
    };
    if first_unstable == 0 {
        return ThresholdOutcome::Inconclusive("every grid point is unstable".into());
    }
    let upper = &points[first_unstable..];
    if upper.iter().any(|p| p.verdict != SlopeVerdict::Unstable) {
        return ThresholdOutcome::Inconclusive("verdicts are not monotone in lambda".into());
    }
    if upper.len() < 2 {
        return ThresholdOutcome::Inconclusive("need two unstable grid points to extrapolate".into());
    }
    let lambdas: Vec<f64> = upper.iter().map(|p| p.lambda).collect();
    let mut roots = Vec::with_capacity(replications);
    for r in 0..replications {
        let ys: Vec<f64> = upper.iter().map(|p| p.slopes[r]).collect();
        match linear_fit(&lambdas, &ys) {
            Ok(fit) if fit.slope > 0.0 => roots.push(-fit.intercept / fit.slope),
            _ => return ThresholdOutcome::Inconclusive(format!("replication {r}: drift does not grow with lambda")),
        }
    }
    let last_stable = points[first_unstable - 1].lambda;
    match mean_ci(&roots) {
        Ok(ci) if ci.mean >= last_stable && ci.mean <= lambdas[0] => ThresholdOutcome::Estimated(ci),
        Ok(ci) => ThresholdOutcome::Inconclusive(format!(
            "extrapolated threshold {:.4} falls outside the bracket [{last_stable}, {}]",
            ci.mean, lambdas[0]
        )),
        Err(e) => ThresholdOutcome::Inconclusive(e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    pub aging: Aging,
    /// `(d, N / (d E[min]))`
    pub thresholds: Vec<(usize, f64)>,
    /// Nonincreasing for NBU, nondecreasing for NWU, constant at the boundary.
    pub holds: bool,
}

/// Fluid thresholds over `d_range` with i.i.d. replicas, checked against the
/// aging class of `model`.
pub fn nbu_threshold_ordering(model: &JobSizeModel, n: usize, d_range: std::ops::RangeInclusive<usize>, method: MinMethod) -> Result<OrderingReport> {
    let aging = classify_aging(model, &default_aging_grid(model, 60), 1e-9)?;
    if aging == Aging::Indeterminate {
        return Err(Error::InvalidParameter(format!("{model} is neither NBU nor NWU")));
    }
    let mut thresholds = Vec::new();
    for d in d_range {
        let r = load_report_with(n, d, 1.0, model, &DependenceModel::Iid, method)?;
        thresholds.push((d, r.lambda_crit_fluid));
    }
    // Monte-Carlo E[min] carries noise; allow a relative slack
    let slack = match method {
        MinMethod::Analytic => 1e-9,
        MinMethod::MonteCarlo { .. } => 1e-2,
    };
    let holds = thresholds.windows(2).all(|w| {
        let (a, b) = (w[0].1, w[1].1);
        let tol = slack * a.abs().max(b.abs());
        match aging {
            Aging::Nbu => b <= a + tol,
            Aging::Nwu => b >= a - tol,
            Aging::ExponentialBoundary => (a - b).abs() <= tol,
            Aging::Indeterminate => false,
        }
    });
    Ok(OrderingReport { aging, thresholds, holds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_examples() {
        let exp = JobSizeModel::exponential(2.0).unwrap();
        let r = load_report(4, 2, 0.8, &exp, &DependenceModel::Identical).unwrap();
        assert!((r.rho - 0.4).abs() < 1e-12);
        assert!((r.rho_tilde - 0.8).abs() < 1e-12);
        assert!((r.lambda_crit_fluid - 1.0).abs() < 1e-12);
        assert!((r.lambda_crit_sufficient - 1.0).abs() < 1e-12);
        let r = load_report(4, 2, 0.8, &exp, &DependenceModel::Iid).unwrap();
        assert!((r.rho_tilde - 0.4).abs() < 1e-12);
        assert!((r.lambda_crit_fluid - 2.0).abs() < 1e-12);
        for (_, m) in JobSizeModel::table2() {
            let r = load_report(4, 4, 0.1, &m, &DependenceModel::Identical).unwrap();
            assert!((r.lambda_crit_fluid - 1.0 / m.mean()).abs() < 1e-12);
            assert!((r.rho_tilde - 4.0 * r.rho).abs() < 1e-12);
        }
    }

    #[test]
    fn unsupported_min_propagates() {
        let erl = JobSizeModel::erlang(2, 1.0).unwrap();
        assert!(matches!(load_report(4, 2, 0.5, &erl, &DependenceModel::Iid), Err(Error::UnsupportedCombination { .. })));
    }

    #[test]
    fn bernoulli_examples() {
        assert_eq!(bernoulli_thresholds(4, 2, 10.0), (10.0, 20.0));
        assert_eq!(bernoulli_thresholds(4, 4, 10.0), (1000.0, 1000.0));
        assert_eq!(bernoulli_thresholds(6, 3, 5.0), (25.0, 50.0));
    }

    #[test]
    fn aging_orderings() {
        let det = nbu_threshold_ordering(&JobSizeModel::deterministic(2.0).unwrap(), 4, 1..=4, MinMethod::Analytic).unwrap();
        assert_eq!(det.aging, Aging::Nbu);
        assert!(det.holds);
        for ((_, got), want) in det.thresholds.iter().zip([2.0, 1.0, 2.0 / 3.0, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        let w = nbu_threshold_ordering(&JobSizeModel::weibull(0.5, 1.0).unwrap(), 4, 1..=4, MinMethod::Analytic).unwrap();
        assert_eq!(w.aging, Aging::Nwu);
        assert!(w.holds);
        for ((_, got), want) in w.thresholds.iter().zip([2.0, 4.0, 6.0, 8.0]) {
            assert!((got - want).abs() < 1e-9, "{got}");
        }
        let e = nbu_threshold_ordering(&JobSizeModel::exponential(2.0).unwrap(), 4, 1..=4, MinMethod::Analytic).unwrap();
        assert!(e.holds);
        assert!(e.thresholds.iter().all(|(_, t)| (t - 2.0).abs() < 1e-12));
        assert!(nbu_threshold_ordering(&JobSizeModel::scaled_bernoulli(10.0).unwrap(), 4, 1..=4, MinMethod::Analytic).is_err());
    }

    #[test]
    fn threshold_needs_replications() {
        let base = SystemConfig::new(4, 2, 1.0, JobSizeModel::exponential(2.0).unwrap(), DependenceModel::Identical);
        assert!(estimate_threshold(&base, &[0.5, 1.5], 1).is_err());
    }
}
