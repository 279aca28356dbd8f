use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use redps::dist::{expected_min, sample_replicas, ClaytonCopula, DependenceModel, JobSizeModel, MinMethod};
use redps::engine::{mean_latency, run, run_replications, SystemConfig, Variant};

#[test]
fn sample_path_littles_law() {
    for (_, model) in JobSizeModel::table2() {
        for variant in Variant::ALL {
            let mut cfg = SystemConfig::new(4, 2, 0.6, model, DependenceModel::Iid).with_arrivals(5000).with_variant(variant).with_seed(11);
            cfg.warmup = 0;
            let r = run(&cfg).unwrap();
            let total: f64 = r.latencies.iter().map(|j| j.latency).sum();
            assert!((r.jobs_area - total).abs() <= 1e-9 * total, "{model} {variant}: {} vs {total}", r.jobs_area);
            assert_eq!(r.latencies.len(), 5000);
        }
    }
}

#[test]
fn fully_served_replicas_see_mg1_ps_queues() {
    // each server is an M/X/1/PS queue fed at rate d lambda / N
    for (model, dep) in [
        (JobSizeModel::exponential(2.0).unwrap(), DependenceModel::Iid),
        (JobSizeModel::deterministic(2.0).unwrap(), DependenceModel::Identical),
        (JobSizeModel::bimodal(1.0, 101.0, 0.99).unwrap(), DependenceModel::Iid),
    ] {
        let (n, d, lambda) = (4, 2, 0.6);
        let cfg = SystemConfig::new(n, d, lambda, model, dep).with_arrivals(100_000).with_variant(Variant::FullyServed).with_seed(5);
        let recs = run_replications(&cfg, 8).unwrap();
        let w: Vec<f64> = recs.iter().map(|r| r.mean_replica_sojourn().unwrap()).collect();
        let ci = redps::stats::mean_ci(&w).unwrap();
        let load = d as f64 * lambda * model.mean() / n as f64;
        let exact = model.mean() / (1.0 - load);
        assert!((ci.mean - exact).abs() <= 3.0 * ci.half_width.max(0.01 * exact), "{model}: {} +- {} vs {exact}", ci.mean, ci.half_width);
    }
}

#[test]
fn replication_reduces_latency_for_iid_exponential() {
    let model = JobSizeModel::exponential(2.0).unwrap();
    let means: Vec<f64> = [1, 2]
        .iter()
        .map(|&d| {
            let cfg = SystemConfig::new(4, d, 0.8, model, DependenceModel::Iid).with_arrivals(50_000).with_seed(3);
            mean_latency(&run_replications(&cfg, 4).unwrap()).unwrap().mean
        })
        .collect();
    assert!(means[1] < means[0], "{means:?}");
}

#[test]
fn expected_min_falls_with_d_and_copula_interpolates() {
    let model = JobSizeModel::weibull(0.5, 1.0).unwrap();
    let mut prev = f64::INFINITY;
    for d in 1..=6 {
        let v = expected_min(&DependenceModel::Iid, &model, d, MinMethod::Analytic).unwrap().value;
        assert!(v < prev);
        prev = v;
    }
    let iid = expected_min(&DependenceModel::Iid, &model, 3, MinMethod::Analytic).unwrap().value;
    let ident = expected_min(&DependenceModel::Identical, &model, 3, MinMethod::Analytic).unwrap().value;
    let mc = MinMethod::MonteCarlo { samples: 400_000, seed: 9 };
    let mut last = iid;
    for tau in [0.2, 0.5, 0.8] {
        let dep = DependenceModel::Copula(ClaytonCopula::from_kendall_tau(tau).unwrap());
        let est = expected_min(&dep, &model, 3, mc).unwrap();
        assert!(est.value > last - 4.0 * est.std_error && est.value < ident, "tau={tau}: {}", est.value);
        last = est.value;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replica_vectors_respect_dependence(seed in any::<u64>(), d in 1usize..6, theta in 0.1f64..8.0) {
        let model = JobSizeModel::exponential(2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for dep in [DependenceModel::Identical, DependenceModel::Iid, DependenceModel::Copula(ClaytonCopula::new(theta).unwrap())] {
            let r = sample_replicas(&dep, &model, d, &mut rng);
            prop_assert_eq!(r.len(), d);
            prop_assert!(r.sizes().iter().all(|x| *x >= 0.0 && x.is_finite()));
            let min = r.sizes().iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(r.min_size(), min);
            prop_assert_eq!(r.sizes()[r.argmin()], min);
            if dep == DependenceModel::Identical {
                prop_assert!(r.sizes().iter().all(|x| *x == min));
            }
        }
    }

    #[test]
    fn same_seed_same_record(seed in any::<u64>(), lambda in 0.1f64..0.9) {
        let cfg = SystemConfig::new(3, 2, lambda, JobSizeModel::exponential(2.0).unwrap(), DependenceModel::Iid).with_arrivals(500).with_seed(seed);
        prop_assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
    }
}
