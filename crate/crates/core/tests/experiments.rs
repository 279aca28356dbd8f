use std::fs;

use redps::experiments::{run_experiment, ExperimentSpec, LATENCY_HEADER};

const SPEC: &str = "\
name = small
scenario = bound_comparison
servers = 4
replicas = 2
lambda = 0.3, 0.7
models = exponential(mean=2), bimodal(lo=1, hi=101, p_lo=0.99)
dep = iid
replications = 3
arrivals = 4000
seed = 21
";

#[test]
fn reruns_are_byte_identical() {
    let spec = ExperimentSpec::parse(SPEC).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&spec, a.path()).unwrap();
    run_experiment(&spec, b.path()).unwrap();
    let x = fs::read(a.path().join("small.csv")).unwrap();
    let y = fs::read(b.path().join("small.csv")).unwrap();
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), LATENCY_HEADER.join(","));
    // two models x two rates x four variants
    assert_eq!(lines.count(), 16);
    assert_eq!(ra.manifest.get("order_violations"), Some("0"));
    assert!(a.path().join("small.manifest").exists());
}

#[test]
fn cells_past_the_wall_are_flagged_not_fatal() {
    let spec = ExperimentSpec::parse(
        &SPEC.replace("lambda = 0.3, 0.7", "lambda_fraction = 0.5, 0.98, 1.3").replace("bound_comparison", "latency_sweep").replace("dep = iid", "dep = identical"),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&spec, dir.path()).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("small.csv")).unwrap();
    let flags_col = LATENCY_HEADER.iter().position(|h| *h == "flags").unwrap();
    let rho_col = LATENCY_HEADER.iter().position(|h| *h == "rho_tilde").unwrap();
    for row in rdr.records() {
        let row = row.unwrap();
        let rho: f64 = row[rho_col].parse().unwrap();
        let flags = &row[flags_col];
        assert_eq!(flags.contains("high-variance"), rho > 0.97, "{row:?}");
        if rho > 1.0 {
            assert!(flags.contains("unstable"), "{row:?}");
        }
        if rho < 0.6 {
            assert!(flags.is_empty(), "{row:?}");
        }
    }
}

#[test]
fn threshold_and_fluid_scenarios_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::parse(
        "name = th\nscenario = threshold_sweep\nservers = 4\nreplicas = 2\nlambda_fraction = 0.6, 1.4\nmodels = exponential(mean=2)\nreplications = 2\narrivals = 5000\n",
    )
    .unwrap();
    run_experiment(&spec, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("th.csv")).unwrap();
    assert!(text.starts_with("model,replicas,lambda,slope,slope_ci_lo,slope_ci_hi,verdict\n"));
    assert!(dir.path().join("th_summary.csv").exists());

    let spec = ExperimentSpec::parse(
        "name = fl\nscenario = fluid_run\nservers = 4\nreplicas = 2\nlambda_fraction = 0.5, 1.5\nmodels = exponential(mean=2)\n[fluid]\nhorizon = 200\nq0 = 2\n",
    )
    .unwrap();
    run_experiment(&spec, dir.path()).unwrap();
    let summary = fs::read_to_string(dir.path().join("fl_summary.csv")).unwrap();
    let verdicts: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').nth(7).unwrap()).collect();
    assert_eq!(verdicts, ["stable", "unstable"]);
    assert!(fs::read_to_string(dir.path().join("fl_1.csv")).unwrap().starts_with("t,q_1,Phi_1\n"));
}

#[test]
fn shipped_specs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../specs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "spec") {
            let spec = ExperimentSpec::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(Some(spec.name.as_str()), path.file_stem().and_then(|s| s.to_str()));
            n += 1;
        }
    }
    assert!(n >= 8);
}
