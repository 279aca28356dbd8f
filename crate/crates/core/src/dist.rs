//! Job-size marginals and the dependence structure among the `d` replica sizes
//! of one job.
//!
//! Every marginal exposes `cdf`, `survival`, `quantile` and moments in closed
//! form. Replica vectors are drawn either as a single size repeated
//! ([`DependenceModel::Identical`]), as independent draws
//! ([`DependenceModel::Iid`]), or through an exchangeable Clayton copula whose
//! parameter moves continuously from independence (`theta = 0`) to
//! comonotonicity (`theta = inf`).

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Marginal distribution of a single replica size, in units of work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JobSizeModel {
    Deterministic { value: f64 },
    Exponential { mean: f64 },
    /// Sum of `stages` exponentials, each with mean `stage_mean`.
    Erlang { stages: u32, stage_mean: f64 },
    /// `lo` with probability `p_lo`, `hi` otherwise.
    Bimodal { lo: f64, hi: f64, p_lo: f64 },
    Weibull { shape: f64, scale: f64 },
    /// `0` with probability `1 - 1/k`, `k` with probability `1/k`.
    ScaledBernoulli { k: f64 },
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be a positive finite number, got {v}")))
    }
}

impl JobSizeModel {
    pub fn deterministic(value: f64) -> Result<Self> {
        Ok(Self::Deterministic { value: positive("value", value)? })
    }

    pub fn exponential(mean: f64) -> Result<Self> {
        Ok(Self::Exponential { mean: positive("mean", mean)? })
    }

    pub fn erlang(stages: u32, stage_mean: f64) -> Result<Self> {
        if stages == 0 || stages > 1000 {
            return Err(Error::InvalidParameter(format!("erlang stages must be in 1..=1000, got {stages}")));
        }
        Ok(Self::Erlang { stages, stage_mean: positive("stage_mean", stage_mean)? })
    }

    pub fn bimodal(lo: f64, hi: f64, p_lo: f64) -> Result<Self> {
        let lo = positive("lo", lo)?;
        let hi = positive("hi", hi)?;
        if lo >= hi {
            return Err(Error::InvalidParameter(format!("bimodal needs lo < hi, got {lo} and {hi}")));
        }
        if !(p_lo > 0.0 && p_lo < 1.0) {
            return Err(Error::InvalidParameter(format!("bimodal p_lo must lie in (0, 1), got {p_lo}")));
        }
        Ok(Self::Bimodal { lo, hi, p_lo })
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        let shape = positive("shape", shape)?;
        // below this the mean overflows
        if shape < 0.01 {
            return Err(Error::InvalidParameter(format!("weibull shape must be >= 0.01, got {shape}")));
        }
        Ok(Self::Weibull { shape, scale: positive("scale", scale)? })
    }

    pub fn scaled_bernoulli(k: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 1.0) {
            return Err(Error::InvalidParameter(format!("scaled bernoulli k must be >= 1, got {k}")));
        }
        Ok(Self::ScaledBernoulli { k })
    }

    /// The seven mean-2 distributions used throughout the numerical study,
    /// keyed by their short preset name.
    ///
    /// Bimodal-2 is built from its support and probabilities (values 1 and
    /// 101 w.p. 0.99/0.01), which gives variance 99.
    pub fn table2() -> Vec<(&'static str, JobSizeModel)> {
        vec![
            ("deterministic", Self::Deterministic { value: 2.0 }),
            ("erlang2", Self::Erlang { stages: 2, stage_mean: 1.0 }),
            ("exponential", Self::Exponential { mean: 2.0 }),
            ("bimodal1", Self::Bimodal { lo: 1.0, hi: 11.0, p_lo: 0.9 }),
            ("weibull1", Self::Weibull { shape: 0.5, scale: 1.0 }),
            ("weibull2", Self::Weibull { shape: 1.0 / 3.0, scale: 1.0 / 3.0 }),
            ("bimodal2", Self::Bimodal { lo: 1.0, hi: 101.0, p_lo: 0.99 }),
        ]
    }

    pub fn preset(name: &str) -> Option<JobSizeModel> {
        Self::table2().into_iter().find(|(n, _)| *n == name).map(|(_, m)| m)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Deterministic { value } => value,
            Self::Exponential { mean } => mean,
            Self::Erlang { stages, stage_mean } => stages as f64 * stage_mean,
            Self::Bimodal { lo, hi, p_lo } => p_lo * lo + (1.0 - p_lo) * hi,
            Self::Weibull { shape, scale } => scale * gamma(1.0 + 1.0 / shape),
            Self::ScaledBernoulli { .. } => 1.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Deterministic { .. } => 0.0,
            Self::Exponential { mean } => mean * mean,
            Self::Erlang { stages, stage_mean } => stages as f64 * stage_mean * stage_mean,
            Self::Bimodal { lo, hi, p_lo } => p_lo * (1.0 - p_lo) * (hi - lo) * (hi - lo),
            Self::Weibull { shape, scale } => {
                let g1 = gamma(1.0 + 1.0 / shape);
                scale * scale * (gamma(1.0 + 2.0 / shape) - g1 * g1)
            }
            Self::ScaledBernoulli { k } => k - 1.0,
        }
    }

    /// P(X <= x).
    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        match *self {
            Self::Deterministic { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Exponential { mean } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-x / mean).exp_m1()
                }
            }
            Self::Erlang { stages, stage_mean } => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 - erlang_survival(stages, x / stage_mean)
                }
            }
            Self::Bimodal { lo, hi, p_lo } => {
                if x < lo {
                    0.0
                } else if x < hi {
                    p_lo
                } else {
                    1.0
                }
            }
            Self::Weibull { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / scale).powf(shape)).exp_m1()
                }
            }
            Self::ScaledBernoulli { k } => {
                if x < 0.0 {
                    0.0
                } else if x < k {
                    1.0 - 1.0 / k
                } else {
                    1.0
                }
            }
        }
    }

    /// P(X > x), computed directly where that avoids cancellation.
    pub fn survival(&self, x: f64) -> f64 {
        match *self {
            Self::Exponential { mean } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-x / mean).exp()
                }
            }
            Self::Erlang { stages, stage_mean } => {
                if x <= 0.0 {
                    1.0
                } else {
                    erlang_survival(stages, x / stage_mean)
                }
            }
            Self::Weibull { shape, scale } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-(x / scale).powf(shape)).exp()
                }
            }
            _ => 1.0 - self.cdf(x),
        }
    }

    /// Generalized inverse `inf { x : F(x) >= u }` for `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            Self::Deterministic { value } => value,
            Self::Exponential { mean } => -mean * (-u).ln_1p(),
            Self::Erlang { stages, stage_mean } => stage_mean * erlang_quantile(stages, u),
            Self::Bimodal { lo, hi, p_lo } => {
                if u <= p_lo {
                    lo
                } else {
                    hi
                }
            }
            Self::Weibull { shape, scale } => scale * (-(-u).ln_1p()).powf(1.0 / shape),
            Self::ScaledBernoulli { k } => {
                if u <= 1.0 - 1.0 / k {
                    0.0
                } else {
                    k
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Erlang { stages, stage_mean } => {
                let mut total = 0.0;
                for _ in 0..stages {
                    let e: f64 = Exp1.sample(rng);
                    total += e;
                }
                total * stage_mean
            }
            _ => self.quantile(rng.random::<f64>()),
        }
    }

    /// True when the distribution has an atom at zero.
    pub fn has_zero_mass(&self) -> bool {
        matches!(self, Self::ScaledBernoulli { k } if *k > 1.0)
    }
}

/// Survival of a unit-rate Erlang with `k` stages at `x` (in stage units).
fn erlang_survival(k: u32, x: f64) -> f64 {
    // e^{-x} sum_{n<k} x^n / n!, summed in log space for large x
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for n in 1..k {
        term *= x / n as f64;
        sum += term;
    }
    if sum.is_finite() {
        (sum.ln() - x).exp().min(1.0)
    } else {
        0.0
    }
}

fn erlang_quantile(k: u32, u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let target = 1.0 - u;
    let mut lo = 0.0f64;
    let mut hi = (k as f64).max(1.0);
    while erlang_survival(k, hi) > target {
        hi *= 2.0;
        if hi > 1e6 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if erlang_survival(k, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

impl fmt::Display for JobSizeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Deterministic { value } => write!(f, "deterministic(value={value})"),
            Self::Exponential { mean } => write!(f, "exponential(mean={mean})"),
            Self::Erlang { stages, stage_mean } => write!(f, "erlang(k={stages}, stage_mean={stage_mean})"),
            Self::Bimodal { lo, hi, p_lo } => write!(f, "bimodal(lo={lo}, hi={hi}, p_lo={p_lo})"),
            Self::Weibull { shape, scale } => write!(f, "weibull(shape={shape}, scale={scale})"),
            Self::ScaledBernoulli { k } => write!(f, "scaled_bernoulli(k={k})"),
        }
    }
}

/// Exchangeable Clayton copula `C(u) = (sum u_i^-theta - d + 1)^(-1/theta)`.
///
/// Sampled with the Marshall-Olkin frailty construction: `V ~ Gamma(1/theta)`,
/// `U_i = (1 + E_i / V)^(-1/theta)` with `E_i ~ Exp(1)` i.i.d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaytonCopula {
    theta: f64,
}

impl ClaytonCopula {
    /// `theta = 0` is independence, `theta = inf` is comonotonicity.
    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_nan() || theta < 0.0 {
            return Err(Error::InvalidParameter(format!("clayton theta must be >= 0, got {theta}")));
        }
        Ok(Self { theta })
    }

    /// Kendall's tau is `theta / (theta + 2)`.
    pub fn from_kendall_tau(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidParameter(format!("kendall tau must lie in [0, 1], got {tau}")));
        }
        if tau == 1.0 {
            return Self::new(f64::INFINITY);
        }
        Self::new(2.0 * tau / (1.0 - tau))
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn kendall_tau(&self) -> f64 {
        if self.theta.is_infinite() {
            1.0
        } else {
            self.theta / (self.theta + 2.0)
        }
    }

    pub fn is_independence(&self) -> bool {
        self.theta == 0.0
    }

    pub fn is_comonotone(&self) -> bool {
        self.theta.is_infinite()
    }

    /// Fills `out` with one draw of the uniform vector.
    pub fn sample_uniforms<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        if self.is_independence() {
            for u in out.iter_mut() {
                *u = rng.random::<f64>();
            }
            return;
        }
        if self.is_comonotone() {
            let u = rng.random::<f64>();
            out.iter_mut().for_each(|x| *x = u);
            return;
        }
        let shape = 1.0 / self.theta;
        // ln V for V ~ Gamma(shape): Gamma(shape + 1) * U^(1/shape), in logs so
        // that tiny shapes do not underflow V to zero.
        let g = Gamma::new(shape + 1.0, 1.0).expect("valid gamma parameters");
        let ln_v = g.sample(rng).ln() + rng.random::<f64>().max(f64::MIN_POSITIVE).ln() / shape;
        for u in out.iter_mut() {
            let e: f64 = Exp1.sample(rng);
            let ln_e = e.max(f64::MIN_POSITIVE).ln();
            // ln(1 + E/V) = ln(V + E) - ln V
            let hi = ln_v.max(ln_e);
            let lo = ln_v.min(ln_e);
            let ln_sum = hi + (lo - hi).exp().ln_1p();
            *u = (-(ln_sum - ln_v) / self.theta).exp();
        }
    }

    /// `C(v, ..., v)` over `k` coordinates.
    pub fn diagonal(&self, v: f64, k: usize) -> f64 {
        if k == 0 {
            return 1.0;
        }
        if v <= 0.0 {
            return 0.0;
        }
        if v >= 1.0 {
            return 1.0;
        }
        if self.is_independence() {
            return v.powi(k as i32);
        }
        if self.is_comonotone() {
            return v;
        }
        let k = k as f64;
        (k * v.powf(-self.theta) - k + 1.0).powf(-1.0 / self.theta)
    }

    /// P(U_1 > v, ..., U_d > v) by inclusion-exclusion over the diagonal.
    pub fn joint_survival(&self, v: f64, d: usize) -> f64 {
        if self.is_comonotone() {
            return (1.0 - v).clamp(0.0, 1.0);
        }
        if self.is_independence() {
            return (1.0 - v).clamp(0.0, 1.0).powi(d as i32);
        }
        let mut total = 0.0;
        let mut binom = 1.0;
        for k in 0..=d {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            total += sign * binom * self.diagonal(v, k);
            binom = binom * (d - k) as f64 / (k + 1) as f64;
        }
        total.clamp(0.0, 1.0)
    }
}

/// Joint structure of the `d` replica sizes of a job.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DependenceModel {
    Identical,
    Iid,
    Copula(ClaytonCopula),
}

impl fmt::Display for DependenceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identical => write!(f, "identical"),
            Self::Iid => write!(f, "iid"),
            Self::Copula(c) => write!(f, "clayton(theta={})", c.theta),
        }
    }
}

/// Sizes of the `d` replicas of one job, with their minimum cached.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSizes {
    sizes: Vec<f64>,
    min_size: f64,
}

impl ReplicaSizes {
    pub fn new(sizes: Vec<f64>) -> Self {
        let min_size = sizes.iter().copied().fold(f64::INFINITY, f64::min);
        Self { sizes, min_size }
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn min_size(&self) -> f64 {
        self.min_size
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Index of the first replica attaining the minimum.
    pub fn argmin(&self) -> usize {
        self.sizes.iter().position(|&s| s == self.min_size).unwrap_or(0)
    }
}

pub fn sample_replicas<R: Rng + ?Sized>(
    dep: &DependenceModel,
    model: &JobSizeModel,
    d: usize,
    rng: &mut R,
) -> ReplicaSizes {
    let sizes = match dep {
        DependenceModel::Identical => vec![model.sample(rng); d],
        DependenceModel::Iid => (0..d).map(|_| model.sample(rng)).collect(),
        DependenceModel::Copula(c) => {
            let mut u = vec![0.0; d];
            c.sample_uniforms(rng, &mut u);
            u.into_iter().map(|u| model.quantile(u)).collect()
        }
    };
    ReplicaSizes::new(sizes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinMethod {
    Analytic,
    MonteCarlo { samples: usize, seed: u64 },
}

impl MinMethod {
    pub fn label(&self) -> &'static str {
        match self {
            MinMethod::Analytic => "analytic",
            MinMethod::MonteCarlo { .. } => "monte_carlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinEstimate {
    pub value: f64,
    /// Zero for closed-form values.
    pub std_error: f64,
    pub method: MinMethod,
}

fn analytic_iid_min(model: &JobSizeModel, d: usize) -> Option<f64> {
    let df = d as f64;
    match *model {
        _ if d == 1 => Some(model.mean()),
        JobSizeModel::Deterministic { value } => Some(value),
        JobSizeModel::Exponential { mean } => Some(mean / df),
        JobSizeModel::Weibull { shape, scale } => Some(scale * gamma(1.0 + 1.0 / shape) * df.powf(-1.0 / shape)),
        JobSizeModel::Bimodal { lo, hi, p_lo } => Some(lo + (hi - lo) * (1.0 - p_lo).powi(d as i32)),
        JobSizeModel::ScaledBernoulli { k } => Some(k * k.powi(-(d as i32))),
        JobSizeModel::Erlang { .. } => None,
    }
}

/// E[min{X_1, ..., X_d}] under the given dependence.
pub fn expected_min(dep: &DependenceModel, model: &JobSizeModel, d: usize, method: MinMethod) -> Result<MinEstimate> {
    if d == 0 {
        return Err(Error::InvalidParameter("d must be at least 1".into()));
    }
    match method {
        MinMethod::Analytic => {
            let value = match dep {
                DependenceModel::Identical => Some(model.mean()),
                DependenceModel::Iid => analytic_iid_min(model, d),
                DependenceModel::Copula(c) if c.is_comonotone() => Some(model.mean()),
                DependenceModel::Copula(c) if c.is_independence() => analytic_iid_min(model, d),
                DependenceModel::Copula(_) if d == 1 => Some(model.mean()),
                DependenceModel::Copula(_) => None,
            };
            value
                .map(|value| MinEstimate { value, std_error: 0.0, method })
                .ok_or_else(|| Error::UnsupportedCombination { model: model.to_string(), dep: dep.to_string(), d })
        }
        MinMethod::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::InvalidParameter("monte carlo needs at least 2 samples".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = crate::stats::Welford::default();
            for _ in 0..samples {
                acc.push(sample_replicas(dep, model, d, &mut rng).min_size());
            }
            Ok(MinEstimate { value: acc.mean(), std_error: acc.std_error(), method })
        }
    }
}

/// Distribution of `X_min` for a given marginal, dependence and replica count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinDistribution {
    pub model: JobSizeModel,
    pub dep: DependenceModel,
    pub d: usize,
}

impl MinDistribution {
    pub fn new(model: JobSizeModel, dep: DependenceModel, d: usize) -> Self {
        Self { model, dep, d }
    }

    pub fn survival(&self, x: f64) -> f64 {
        match self.dep {
            DependenceModel::Identical => self.model.survival(x),
            DependenceModel::Iid => self.model.survival(x).powi(self.d as i32),
            DependenceModel::Copula(c) => c.joint_survival(self.model.cdf(x), self.d),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.survival(x)
    }

    /// Analytic mean when available, otherwise a 10^6-sample estimate.
    pub fn mean(&self) -> f64 {
        expected_min(&self.dep, &self.model, self.d, MinMethod::Analytic)
            .or_else(|_| {
                expected_min(&self.dep, &self.model, self.d, MinMethod::MonteCarlo { samples: 1_000_000, seed: 0x5eed })
            })
            .map(|e| e.value)
            .unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aging {
    Nbu,
    Nwu,
    ExponentialBoundary,
    Indeterminate,
}

impl fmt::Display for Aging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Aging::Nbu => "NBU",
            Aging::Nwu => "NWU",
            Aging::ExponentialBoundary => "exponential-boundary",
            Aging::Indeterminate => "indeterminate",
        };
        f.write_str(s)
    }
}

/// Compares `S(t1 + t2)` with `S(t1) S(t2)` at every grid pair.
pub fn classify_aging(model: &JobSizeModel, grid: &[(f64, f64)], tol: f64) -> Result<Aging> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("aging grid is empty".into()));
    }
    let mut below = true; // S(t1+t2) <= S(t1)S(t2) everywhere
    let mut above = true;
    for &(t1, t2) in grid {
        let diff = model.survival(t1 + t2) - model.survival(t1) * model.survival(t2);
        if diff > tol {
            below = false;
        }
        if diff < -tol {
            above = false;
        }
    }
    Ok(match (below, above) {
        (true, true) => Aging::ExponentialBoundary,
        (true, false) => Aging::Nbu,
        (false, true) => Aging::Nwu,
        (false, false) => Aging::Indeterminate,
    })
}

/// All pairs drawn from `points` evenly spaced values on `(0, top]`, where
/// `top` is the upper end of the support (or its `1 - 1e-9` quantile), merged
/// with `points` interior quantiles.
pub fn default_aging_grid(model: &JobSizeModel, points: usize) -> Vec<(f64, f64)> {
    let top = model.quantile(1.0 - 1e-9).max(model.mean());
    let mut ts: Vec<f64> = (1..=points).map(|i| top * i as f64 / points as f64).collect();
    ts.extend((1..=points).map(|i| model.quantile(i as f64 / (points + 1) as f64)).filter(|&t| t > 0.0));
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut grid = Vec::with_capacity(ts.len() * ts.len());
    for &a in &ts {
        for &b in &ts {
            grid.push((a, b));
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn deterministic_sample_is_point_mass() {
        let m = JobSizeModel::deterministic(2.0).unwrap();
        assert_eq!(m.sample(&mut rng(1)), 2.0);
    }

    #[test]
    fn table2_moments() {
        let expect_var = [0.0, 2.0, 4.0, 9.0, 20.0, 76.0, 99.0];
        for ((name, m), v) in JobSizeModel::table2().iter().zip(expect_var) {
            assert!((m.mean() - 2.0).abs() < 1e-12, "{name} mean {}", m.mean());
            assert!((m.variance() - v).abs() < 1e-9, "{name} variance {}", m.variance());
        }
    }

    #[test]
    fn bimodal_and_weibull_empirical_moments() {
        let n = 400_000;
        for (m, var) in [
            (JobSizeModel::bimodal(1.0, 11.0, 0.9).unwrap(), 9.0),
            (JobSizeModel::weibull(0.5, 1.0).unwrap(), 20.0),
        ] {
            let mut r = rng(7);
            let mut w = crate::stats::Welford::default();
            for _ in 0..n {
                w.push(m.sample(&mut r));
            }
            assert!((w.mean() - 2.0).abs() < 4.0 * w.std_error(), "{m}: mean {}", w.mean());
            assert!((w.variance() - var).abs() / var < 0.1, "{m}: var {}", w.variance());
        }
    }

    #[test]
    fn replica_vectors() {
        let e = JobSizeModel::exponential(2.0).unwrap();
        let r = sample_replicas(&DependenceModel::Identical, &e, 3, &mut rng(3));
        assert_eq!(r.len(), 3);
        assert!(r.sizes().iter().all(|&s| s == r.sizes()[0]));

        let det = JobSizeModel::deterministic(2.0).unwrap();
        let r = sample_replicas(&DependenceModel::Iid, &det, 2, &mut rng(3));
        assert_eq!(r.sizes(), &[2.0, 2.0]);
        assert_eq!(r.min_size(), 2.0);
    }

    #[test]
    fn bimodal_iid_min_matches_enumeration() {
        // brute force over the four outcome pairs
        let vals = [(1.0, 0.9), (11.0, 0.1)];
        let mut oracle = 0.0;
        for &(a, pa) in &vals {
            for &(b, pb) in &vals {
                oracle += pa * pb * f64::min(a, b);
            }
        }
        assert!((oracle - 1.1).abs() < 1e-12);
        let m = JobSizeModel::bimodal(1.0, 11.0, 0.9).unwrap();
        let a = expected_min(&DependenceModel::Iid, &m, 2, MinMethod::Analytic).unwrap();
        assert!((a.value - oracle).abs() < 1e-12);
        let mc = expected_min(&DependenceModel::Iid, &m, 2, MinMethod::MonteCarlo { samples: 200_000, seed: 9 }).unwrap();
        assert!((mc.value - oracle).abs() < 4.0 * mc.std_error);
    }

    #[test]
    fn expected_min_closed_forms() {
        let e = JobSizeModel::exponential(2.0).unwrap();
        let w = JobSizeModel::weibull(0.5, 1.0).unwrap();
        let an = |dep, m: &JobSizeModel, d| expected_min(&dep, m, d, MinMethod::Analytic).unwrap().value;
        assert_eq!(an(DependenceModel::Identical, &e, 5), 2.0);
        assert!((an(DependenceModel::Iid, &e, 2) - 1.0).abs() < 1e-12);
        assert!((an(DependenceModel::Iid, &w, 2) - 0.5).abs() < 1e-12);
        let mc = expected_min(&DependenceModel::Iid, &w, 2, MinMethod::MonteCarlo { samples: 400_000, seed: 1 }).unwrap();
        assert!((mc.value - 0.5).abs() < 4.0 * mc.std_error, "{mc:?}");
    }

    #[test]
    fn erlang_iid_analytic_is_unsupported() {
        let m = JobSizeModel::erlang(2, 1.0).unwrap();
        let err = expected_min(&DependenceModel::Iid, &m, 2, MinMethod::Analytic).unwrap_err();
        assert!(matches!(err, Error::UnsupportedCombination { .. }));
        // d = 1 always has a closed form
        let one = expected_min(&DependenceModel::Iid, &m, 1, MinMethod::Analytic).unwrap();
        assert_eq!(one.value, 2.0);
    }

    #[test]
    fn aging_classes() {
        let tol = 1e-12;
        let cases = [
            (JobSizeModel::exponential(2.0).unwrap(), Aging::ExponentialBoundary),
            (JobSizeModel::deterministic(2.0).unwrap(), Aging::Nbu),
            (JobSizeModel::weibull(0.5, 1.0).unwrap(), Aging::Nwu),
            (JobSizeModel::erlang(2, 1.0).unwrap(), Aging::Nbu),
            (JobSizeModel::scaled_bernoulli(10.0).unwrap(), Aging::Indeterminate),
            (JobSizeModel::bimodal(1.0, 11.0, 0.9).unwrap(), Aging::Indeterminate),
        ];
        for (m, want) in cases {
            let got = classify_aging(&m, &default_aging_grid(&m, 20), tol).unwrap();
            assert_eq!(got, want, "{m}");
        }
        assert!(classify_aging(&cases[0].0, &[], tol).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for (_, m) in JobSizeModel::table2() {
            for i in 1..20 {
                let u = i as f64 / 20.0;
                let x = m.quantile(u);
                assert!(m.cdf(x) >= u - 1e-9, "{m} u={u}");
            }
        }
    }

    #[test]
    fn erlang_cdf_matches_numeric_convolution() {
        // Erlang(2) density is x e^-x; integrate with a fine midpoint rule
        let m = JobSizeModel::erlang(2, 1.0).unwrap();
        let x = 3.0;
        let n = 200_000;
        let h = x / n as f64;
        let integral: f64 = (0..n).map(|i| (i as f64 + 0.5) * h).map(|t| t * (-t).exp() * h).sum();
        assert!((m.cdf(x) - integral).abs() < 1e-8);
    }

    #[test]
    fn clayton_endpoints() {
        let m = JobSizeModel::exponential(2.0).unwrap();
        let ind = DependenceModel::Copula(ClaytonCopula::new(0.0).unwrap());
        let com = DependenceModel::Copula(ClaytonCopula::from_kendall_tau(1.0).unwrap());
        let an = |dep| expected_min(&dep, &m, 3, MinMethod::Analytic).unwrap().value;
        assert!((an(ind) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(an(com), 2.0);
        let mid = DependenceModel::Copula(ClaytonCopula::from_kendall_tau(0.5).unwrap());
        assert!(expected_min(&mid, &m, 3, MinMethod::Analytic).is_err());
    }

    #[test]
    fn clayton_min_survival_matches_sampling() {
        let m = JobSizeModel::exponential(2.0).unwrap();
        let c = ClaytonCopula::from_kendall_tau(0.4).unwrap();
        let dist = MinDistribution::new(m, DependenceModel::Copula(c), 3);
        let mut r = rng(11);
        let n = 200_000;
        let x = 1.0;
        let hits = (0..n)
            .filter(|_| sample_replicas(&DependenceModel::Copula(c), &m, 3, &mut r).min_size() > x)
            .count();
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((p - dist.survival(x)).abs() < 4.0 * se, "{p} vs {}", dist.survival(x));
    }
}
