use std::process::{Command, Output};

fn redps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redps")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn report_prints_loads() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = redps(&["report", "-N", "4", "-d", "2", "--dist", "exponential(mean=2)", "--dep", "identical", "--lambda", "0.8", "--out", out]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("rho=0.4\n") && s.contains("rho_tilde=0.8\n"), "{s}");
    let loads = std::fs::read_to_string(dir.path().join("loads.csv")).unwrap();
    assert!(loads.starts_with("servers,replicas,lambda,model,dep,rho,rho_tilde,"));
}

#[test]
fn fluid_reports_unstable_overload() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = redps(&["fluid", "-N", "4", "-d", "2", "--dep", "identical", "--dist", "exponential(mean=2)", "--lambda", "1.2", "--q0", "5", "--out", out]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("verdict=Unstable"));
    assert!(dir.path().join("fluid.csv").exists() && dir.path().join("fluid_summary.csv").exists());
}

#[test]
fn simulate_writes_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = redps(&[
        "simulate", "-N", "3", "-d", "2", "--dist", "exponential(mean=2)", "--lambda", "0.5", "--variant", "upper", "--virtual", "--arrivals", "2000", "--seed", "4", "--out", out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for (f, header) in [
        ("latencies.csv", "job_id,arrival_time,latency"),
        ("trajectory.csv", "time,q_1,q_2,q_3"),
        ("summary.csv", "variant,lambda,mean_latency,ci_halfwidth,n_jobs,seed"),
        ("classes.csv", "class_id,server_set"),
    ] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().next(), Some(header), "{f}");
    }
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 4\n"));
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(redps(&["report", "--bogus"]).status.code(), Some(1));
    assert_eq!(redps(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(redps(&[]).status.code(), Some(1));
    assert_eq!(redps(&["report", "-N", "4", "-d", "2", "--dist", "nope(x=1)", "--lambda", "1"]).status.code(), Some(1));
    assert_eq!(redps(&["report", "-N", "4", "-d", "2", "--dist", "exponential(mean=2)", "--lambda", "1", "--format", "json"]).status.code(), Some(1));
    assert_eq!(redps(&["experiment", "/nonexistent/x.spec"]).status.code(), Some(1));
    assert_eq!(redps(&["--help"]).status.code(), Some(0));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let file = tempfile::NamedTempFile::new().unwrap();
    let out = file.path().join("sub");
    let o = redps(&["report", "-N", "4", "-d", "2", "--dist", "exponential(mean=2)", "--lambda", "0.8", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
