//! Acceptance checks, one PASS/FAIL line each.
//!
//! Exits 0 after reporting; set `ACCEPTANCE_STRICT=1` to exit 1 when any
//! check fails.

use std::time::Instant;

use rayon::prelude::*;
use redps::dist::{expected_min, DependenceModel, JobSizeModel, MinDistribution, MinMethod};
use redps::engine::{aligned_latencies, mean_latency, replication_seed, run, run_coupled, run_replications, SystemConfig, Variant};
use redps::experiments::{cells, max_pairwise_relative_difference, run_cell, ExperimentSpec};
use redps::fluid::{classify_fluid, solve_scalar, solve_vector, trailing_slope, FluidConfig, FluidMode, FluidVerdict};
use redps::stability::{bernoulli_thresholds, estimate_threshold, load_report, nbu_threshold_ordering};
use redps::stats::mean_ci;
use redps::virtual_queues::{event_log_distance, run_virtual};

type Outcome = (bool, String);
type Check = (&'static str, fn() -> Outcome);

const ARRIVALS: u64 = 100_000;
const REPS: usize = 10;

fn mg1_ps_oracle() -> Outcome {
    let mut worst = (0.0, String::new());
    let mut ok = true;
    for (name, model) in JobSizeModel::table2() {
        for rho in [0.3, 0.5, 0.8] {
            let cfg = SystemConfig::new(1, 1, rho / model.mean(), model, DependenceModel::Iid).with_arrivals(ARRIVALS).with_seed(101);
            let ci = mean_latency(&run_replications(&cfg, REPS).unwrap()).unwrap();
            let exact = model.mean() / (1.0 - rho);
            let z = (ci.mean - exact).abs() / ci.half_width;
            if z > 3.0 {
                ok = false;
            }
            if z > worst.0 {
                worst = (z, format!("{name} rho={rho}: {:.4} +- {:.4} vs {exact:.4}", ci.mean, ci.half_width));
            }
        }
    }
    (ok, format!("worst {:.2} half-widths ({})", worst.0, worst.1))
}

fn load_anchor() -> Outcome {
    let model = JobSizeModel::exponential(1.0).unwrap();
    let at = |d: usize| {
        let lambda = 0.95 * 10.0 / d as f64;
        let cfg = SystemConfig::new(10, d, lambda, model, DependenceModel::Identical).with_arrivals(ARRIVALS).with_seed(202);
        mean_latency(&run_replications(&cfg, REPS).unwrap()).unwrap().mean
    };
    let d1 = at(1);
    let mid: Vec<(usize, f64)> = (3..=7).map(|d| (d, at(d))).collect();
    let ok = (17.0..=23.0).contains(&d1) && mid.iter().all(|(_, t)| (1.5..=2.5).contains(t));
    let mid_s: Vec<String> = mid.iter().map(|(d, t)| format!("d={d}:{t:.3}")).collect();
    (ok, format!("E[T](d=1) = {d1:.3}; {}", mid_s.join(" ")))
}

fn bound_bracketing() -> Outcome {
    let (n, reps, arrivals) = (4usize, 5usize, 40_000u64);
    let mut jobs = 0usize;
    let mut violations = 0usize;
    let mut worst = (0.0, String::new());
    let mut fs_ok = true;
    for dep in [DependenceModel::Identical, DependenceModel::Iid] {
        for d in [2usize, 3] {
            for (name, model) in JobSizeModel::table2() {
                let suff = n as f64 / (d as f64 * model.mean());
                for frac in [0.25, 0.5, 0.75, 0.9] {
                    let lambda = frac * suff;
                    let base = SystemConfig::new(n, d, lambda, model, dep).with_arrivals(arrivals);
                    let bounds = [Variant::LowerBound, Variant::Original, Variant::UpperBound];
                    for r in 0..reps {
                        let seed = replication_seed(303, r);
                        let cfgs: Vec<SystemConfig> = bounds.iter().map(|&v| base.clone().with_variant(v).with_seed(seed)).collect();
                        for (_, l) in aligned_latencies(&run_coupled(&cfgs).unwrap()).unwrap() {
                            jobs += 1;
                            let tol = 1e-9 * l[2].max(1.0);
                            if !(l[0] <= l[1] + tol && l[1] <= l[2] + tol) {
                                violations += 1;
                            }
                        }
                    }
                    let full = SystemConfig::new(n, d, lambda, model, dep).with_arrivals(ARRIVALS).with_variant(Variant::FullyServed).with_seed(313);
                    let sojourn: Vec<f64> = run_replications(&full, REPS).unwrap().iter().map(|r| r.mean_replica_sojourn().unwrap()).collect();
                    let ci = mean_ci(&sojourn).unwrap();
                    let exact = model.mean() / (1.0 - frac);
                    let z = (ci.mean - exact).abs() / ci.half_width;
                    if z > 3.0 {
                        fs_ok = false;
                    }
                    if z > worst.0 {
                        worst = (z, format!("{dep} d={d} {name} at {frac} of threshold: {:.4} +- {:.4} vs {exact:.4}", ci.mean, ci.half_width));
                    }
                }
            }
        }
    }
    (
        violations == 0 && fs_ok,
        format!("{violations} of {jobs} jobs out of order; fully served worst {:.2} half-widths ({})", worst.0, worst.1),
    )
}

fn degenerate_coincidence() -> Outcome {
    let n = 4;
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for dep in [DependenceModel::Identical, DependenceModel::Iid] {
        for d in [1, n] {
            for (name, model) in JobSizeModel::table2() {
                let lambda = 0.5 * n as f64 / (d as f64 * model.mean());
                let base = SystemConfig::new(n, d, lambda, model, dep).with_arrivals(20_000).with_seed(404);
                let cfgs: Vec<SystemConfig> = Variant::ALL.iter().map(|&v| base.clone().with_variant(v)).collect();
                let recs = run_coupled(&cfgs).unwrap();
                for (k, r) in recs.iter().enumerate().skip(1) {
                    let gap = recs[0]
                        .latencies
                        .iter()
                        .zip(&r.latencies)
                        .map(|(a, b)| (a.latency - b.latency).abs())
                        .fold(0.0, f64::max);
                    let gap = if r.latencies.len() == recs[0].latencies.len() { gap } else { f64::INFINITY };
                    if gap > 1e-9 {
                        failures.push(format!("{dep} d={d} {name} {}: gap {gap:.3e}", Variant::ALL[k]));
                    } else {
                        worst = worst.max(gap);
                    }
                }
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("max gap {worst:.1e}")
    } else {
        let fully_served = failures.iter().filter(|f| f.starts_with("iid d=4") && f.contains("fully_served")).count();
        format!(
            "{} mismatching runs, {fully_served} of them fully served with independent replicas at d = N; first: {}",
            failures.len(),
            failures[0]
        )
    };
    (failures.is_empty(), detail)
}

fn virtual_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for n in 3..=5 {
        for d in 2..=3 {
            for (name, model) in [("exponential", JobSizeModel::exponential(2.0).unwrap()), ("bimodal1", JobSizeModel::bimodal(1.0, 11.0, 0.9).unwrap())] {
                for dep in [DependenceModel::Identical, DependenceModel::Iid] {
                    for variant in [Variant::LowerBound, Variant::UpperBound] {
                        let mut cfg = SystemConfig::new(n, d, 0.7 * n as f64 / (d as f64 * model.mean()), model, dep)
                            .with_arrivals(20_000)
                            .with_variant(variant)
                            .with_seed(505);
                        cfg.record_events = true;
                        let a = run(&cfg).unwrap();
                        let b = run_virtual(&cfg).unwrap();
                        let same_queues = a.trajectory.queues == b.trajectory.queues;
                        match event_log_distance(&a.event_log, &b.event_log) {
                            Some(x) if x <= 1e-9 && same_queues => worst = worst.max(x),
                            other => bad.push(format!("N={n} d={d} {name} {dep} {variant}: {other:?}")),
                        }
                    }
                }
            }
        }
    }
    let detail = if bad.is_empty() { format!("max event time gap {worst:.1e}") } else { format!("{} mismatches, first: {}", bad.len(), bad[0]) };
    (bad.is_empty(), detail)
}

fn fluid_property_one() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut modes_equal = true;
    for (n, d) in [(3, 2), (4, 2), (5, 2), (5, 3)] {
        for (_, model) in JobSizeModel::table2() {
            for dep in [DependenceModel::Identical, DependenceModel::Iid] {
                let md = MinDistribution::new(model, dep, d);
                for load in [0.6, 1.2] {
                    let lam = load * n as f64 / (d as f64 * md.mean());
                    let base = FluidConfig::new(n, d, lam, md, 3.0).with_horizon(50.0);
                    let scalar = solve_scalar(&base).unwrap();
                    let lo = solve_vector(&base.clone().with_mode(FluidMode::Min)).unwrap();
                    let hi = solve_vector(&base.clone().with_mode(FluidMode::Max)).unwrap();
                    for k in 0..scalar.len() {
                        let s = scalar.q[k][0];
                        for x in lo.q[k].iter().chain(&hi.q[k]) {
                            worst = worst.max((x - s).abs());
                        }
                        modes_equal &= lo.q[k] == hi.q[k] && lo.phi[k] == hi.phi[k];
                    }
                }
            }
        }
    }
    (worst <= 1e-8 && modes_equal, format!("max |q_i - q| = {worst:.1e}; min and max modes equal: {modes_equal}"))
}

fn fluid_dichotomy() -> Outcome {
    let (n, d) = (4, 2);
    let models = [
        ("exponential(2)", JobSizeModel::exponential(2.0).unwrap()),
        ("deterministic(2)", JobSizeModel::deterministic(2.0).unwrap()),
        ("weibull(1/2,1)", JobSizeModel::weibull(0.5, 1.0).unwrap()),
    ];
    let cases: Vec<(String, MinDistribution)> = [DependenceModel::Identical, DependenceModel::Iid]
        .iter()
        .flat_map(|&dep| models.iter().map(move |(name, m)| (format!("{dep} {name}"), MinDistribution::new(*m, dep, d))))
        .collect();
    let results: Vec<(String, FluidVerdict, FluidVerdict, f64, f64)> = cases
        .par_iter()
        .map(|(label, md)| {
            let crit = n as f64 / (d as f64 * md.mean());
            let solve = |lam: f64| {
                let cfg = FluidConfig::new(n, d, lam, *md, 2.0).with_step(0.1).with_horizon(3000.0);
                let path = solve_scalar(&cfg).unwrap();
                (classify_fluid(&path, 1500.0).unwrap(), trailing_slope(&path, 1500.0).unwrap(), cfg)
            };
            let (below, _, _) = solve(0.98 * crit);
            let (above, slope, cfg) = solve(1.02 * crit);
            let formula = cfg.class_lambda() - cfg.sigma() / md.mean();
            (label.clone(), below, above, slope, formula)
        })
        .collect();
    let mut flips = true;
    let mut slopes = true;
    let mut parts = Vec::new();
    for (label, below, above, slope, formula) in &results {
        let flip = matches!(below, FluidVerdict::Stable { .. }) && matches!(above, FluidVerdict::Unstable { .. });
        let rel = (slope - formula).abs() / formula.abs();
        flips &= flip;
        slopes &= rel <= 0.05;
        parts.push(format!("{label}: {}->{} slope/formula {:.3}", below.label(), above.label(), slope / formula));
    }
    (flips && slopes, format!("flip {}; slope within 5% {}; {}", if flips { "ok" } else { "missed" }, if slopes { "ok" } else { "missed" }, parts.join("; ")))
}

fn min_oracles() -> Outcome {
    let mut models: Vec<(&str, JobSizeModel)> = JobSizeModel::table2();
    models.push(("scaled_bernoulli10", JobSizeModel::scaled_bernoulli(10.0).unwrap()));
    let mut pairs = Vec::new();
    for (name, model) in &models {
        for dep in [DependenceModel::Identical, DependenceModel::Iid] {
            for d in 1..=6 {
                if expected_min(&dep, model, d, MinMethod::Analytic).is_ok() {
                    pairs.push((*name, *model, dep, d));
                }
            }
        }
    }
    let results: Vec<(String, f64)> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, (name, model, dep, d))| {
            let exact = expected_min(dep, model, *d, MinMethod::Analytic).unwrap().value;
            let mc = expected_min(dep, model, *d, MinMethod::MonteCarlo { samples: 10_000_000, seed: 800 + k as u64 }).unwrap();
            // a gap this small is below what any 1e7-sample mean can resolve; it shows
            // up when the rare atom of the minimum never occurs and the sample
            // variance is zero
            let gap = (mc.value - exact).abs();
            let z = if gap <= 1e-6 * exact.abs() { 0.0 } else if mc.std_error > 0.0 { gap / mc.std_error } else { f64::INFINITY };
            (format!("{name} {dep} d={d}"), z)
        })
        .collect();
    let (worst_label, worst) = results.iter().fold((String::new(), 0.0f64), |acc, (l, z)| if *z > acc.1 { (l.clone(), *z) } else { acc });
    let mc_ok = results.iter().all(|(_, z)| *z <= 4.0);
    let mut order = Vec::new();
    let mut order_ok = true;
    for (name, model) in [("deterministic", JobSizeModel::deterministic(2.0).unwrap()), ("weibull(1/2)", JobSizeModel::weibull(0.5, 1.0).unwrap())] {
        let rep = nbu_threshold_ordering(&model, 6, 1..=6, MinMethod::Analytic).unwrap();
        order_ok &= rep.holds;
        order.push(format!("{name} {:?} holds={}", rep.aging, rep.holds));
    }
    (
        mc_ok && order_ok,
        format!("{} pairs, worst {worst:.2} standard errors ({worst_label}); {}", results.len(), order.join(", ")),
    )
}

fn empirical_thresholds() -> Outcome {
    let model = JobSizeModel::exponential(2.0).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (dep, target) in [(DependenceModel::Identical, 1.0), (DependenceModel::Iid, 2.0)] {
        let crit = load_report(4, 2, 1.0, &model, &dep).unwrap().lambda_crit_fluid;
        let grid: Vec<f64> = [0.6, 0.8, 0.9, 1.1, 1.2, 1.3, 1.4].iter().map(|f| f * crit).collect();
        let base = SystemConfig::new(4, 2, 1.0, model, dep).with_arrivals(ARRIVALS).with_seed(909);
        let est = estimate_threshold(&base, &grid, 5).unwrap();
        match est.lambda_star() {
            Some(ci) => {
                let rel = (ci.mean - target).abs() / target;
                ok &= rel <= 0.05;
                parts.push(format!("{dep}: {:.4} +- {:.4} (target {target})", ci.mean, ci.half_width));
            }
            None => {
                ok = false;
                parts.push(format!("{dep}: {:?}", est.outcome));
            }
        }
    }
    (ok, parts.join("; "))
}

fn near_insensitivity() -> Outcome {
    let spec = ExperimentSpec::parse(
        "name = near_insensitivity\nscenario = near_insensitivity\nservers = 4\nreplicas = 2\nload = 0.5\nmodels = table2\ndep = identical\nvariants = original\nreplications = 10\narrivals = 100000\nseed = 1010\n",
    )
    .unwrap();
    let results: Vec<_> = cells(&spec).unwrap().par_iter().map(|c| run_cell(&spec, c).unwrap()).collect();
    let means: Vec<String> = results.iter().map(|r| format!("{}:{:.3}", r.cell.model_label, r.variants[0].mean)).collect();
    let in_band = results.iter().all(|r| (2.6..=2.9).contains(&r.variants[0].mean));
    let spread = max_pairwise_relative_difference(&results).unwrap();
    (in_band && spread <= 0.05, format!("max pairwise difference {:.2}%; {}", 100.0 * spread, means.join(" ")))
}

fn bernoulli_formulas() -> Outcome {
    let exact = bernoulli_thresholds(4, 2, 10.0) == (10.0, 20.0);
    let mut ordered = true;
    for n in 1..=12 {
        for d in 1..=n {
            for k in [1.0, 1.5, 2.0, 10.0, 100.0] {
                let (fcfs, ps) = bernoulli_thresholds(n, d, k);
                ordered &= ps >= fcfs;
            }
        }
    }
    (exact && ordered, format!("(4,2,10) -> {:?}; PS >= FCFS over N <= 12: {ordered}", bernoulli_thresholds(4, 2, 10.0)))
}

fn main() {
    let checks: [Check; 11] = [
        ("M/G/1/PS oracle", mg1_ps_oracle),
        ("latency anchors at rho~ = 0.95", load_anchor),
        ("bound bracketing and fully served formula", bound_bracketing),
        ("d = 1 and d = N coincidence", degenerate_coincidence),
        ("virtual queue equivalence", virtual_equivalence),
        ("equal fluid masses stay equal", fluid_property_one),
        ("fluid stability dichotomy", fluid_dichotomy),
        ("E[min] oracles and aging order", min_oracles),
        ("empirical thresholds", empirical_thresholds),
        ("near-insensitivity", near_insensitivity),
        ("scaled Bernoulli thresholds", bernoulli_formulas),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let id = k + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = check();
        if !ok {
            failed += 1;
        }
        println!("{} {id:>2} {name} [{:.1}s]: {detail}", if ok { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    println!("{failed} failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
