//! Deterministic fluid approximation of the bound systems.
//!
//! Each virtual queue `i` holds mass `q_i(t)`. Jobs in class `i` all attain
//! service at the per-job rate `phi_i(q(t))`, so with `Phi_i(t)` the
//! cumulative per-job service,
//!
//! ```text
//! q_i(t) = q_i(0) (1 - G(Phi_i(t))) + (lambda / M) int_0^t (1 - F_min(Phi_i(t) - Phi_i(s))) ds
//! ```
//!
//! The solver steps `Phi` forward with explicit Euler and evaluates the
//! integral by the trapezoidal rule on the time grid.

use crate::dist::MinDistribution;
use crate::error::{Error, Result};
use crate::stats::linear_fit;
use crate::virtual_queues::{binomial, build_class_index, RateMode, DEFAULT_CLASS_BOUND};

/// Kernel terms below this are dropped; they sit far under rounding of the sum.
const KERNEL_FLOOR: f64 = 1e-17;

/// Default slope (mass per unit time) above which a path counts as growing.
pub const DEFAULT_GROWTH_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluidMode {
    /// All classes share one mass; requires a scalar `q0`.
    Scalar,
    Min,
    Max,
}

impl FluidMode {
    fn rate_mode(self) -> Option<RateMode> {
        match self {
            FluidMode::Scalar => None,
            FluidMode::Min => Some(RateMode::Min),
            FluidMode::Max => Some(RateMode::Max),
        }
    }
}

/// Size law of the jobs present at time zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialSizes {
    /// Same law as `X_min`.
    Fresh,
    /// Stationary residual of `X_min`, `G(x) = int_0^x P(X_min > u) du / E[X_min]`.
    EquilibriumResidual,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialMass {
    Scalar(f64),
    PerClass(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidConfig {
    pub servers: usize,
    pub replicas: usize,
    pub lambda: f64,
    pub min_dist: MinDistribution,
    pub initial_sizes: InitialSizes,
    pub q0: InitialMass,
    pub step: f64,
    pub horizon: f64,
    /// Masses at or below this get no service in a step.
    pub epsilon: f64,
    /// Mass level that counts as drained; `None` picks [`FluidConfig::auto_drain_tolerance`].
    pub drain_tolerance: Option<f64>,
    pub mode: FluidMode,
}

impl FluidConfig {
    /// Scalar configuration with step 0.25, horizon 2000, `epsilon = 1e-9`
    /// and an automatic drain tolerance.
    pub fn new(servers: usize, replicas: usize, lambda: f64, min_dist: MinDistribution, q0: f64) -> Self {
        FluidConfig {
            servers,
            replicas,
            lambda,
            min_dist,
            initial_sizes: InitialSizes::Fresh,
            q0: InitialMass::Scalar(q0),
            step: 0.25,
            horizon: 2000.0,
            epsilon: 1e-9,
            drain_tolerance: None,
            mode: FluidMode::Scalar,
        }
    }

    pub fn classes(&self) -> usize {
        binomial(self.servers, self.replicas) as usize
    }

    /// Arrival rate per virtual queue.
    pub fn class_lambda(&self) -> f64 {
        self.lambda / binomial(self.servers, self.replicas) as f64
    }

    /// Service speed of a lone class when all classes hold equal mass.
    pub fn sigma(&self) -> f64 {
        1.0 / binomial(self.servers - 1, self.replicas - 1) as f64
    }

    /// `lambda E[X_min] C(N-1, d-1) / M`, the load of each virtual queue.
    pub fn rho_tilde(&self) -> f64 {
        self.class_lambda() * self.min_dist.mean() / self.sigma()
    }

    /// Stationary mass of the discretized empty system.
    ///
    /// On the grid an empty queue never holds exactly zero: a constant level
    /// `q` with per-step service `h sigma / q` satisfies
    /// `q = lambda/M h (F(0)/2 + sum_{j>=1} P(X_min > j h sigma / q))`.
    /// The right side is at most `lambda/M h / 2 + rho~ q`, so iterating
    /// down from `lambda/M h / (2 (1 - rho~))` reaches the largest fixed
    /// point, the level a draining path settles at. `None` when `rho~ >= 1`.
    pub fn empty_level(&self) -> Result<Option<f64>> {
        self.validate()?;
        let lam_h = self.class_lambda() * self.step;
        if lam_h == 0.0 {
            return Ok(Some(0.0));
        }
        let rho = self.rho_tilde();
        if !(rho < 1.0) {
            return Ok(None);
        }
        let dist = self.min_dist;
        let unit = self.step * self.sigma();
        let level = |q: f64| {
            let delta = unit / q;
            let mut acc = 0.5 * dist.survival(0.0);
            let mut j = 1u64;
            loop {
                let s = dist.survival(j as f64 * delta);
                if s < KERNEL_FLOOR || j > 10_000_000 {
                    break;
                }
                acc += s;
                j += 1;
            }
            lam_h * acc
        };
        let mut q = lam_h / (2.0 * (1.0 - rho));
        for _ in 0..10_000 {
            let next = level(q).min(q);
            if q - next <= 1e-12 * q {
                return Ok(Some(next));
            }
            q = next;
        }
        Ok(Some(q))
    }

    /// `max(2 lambda / M h, 1.25 * empty level)`.
    pub fn auto_drain_tolerance(&self) -> Result<f64> {
        let base = 2.0 * self.class_lambda() * self.step;
        Ok(self.empty_level()?.map_or(base, |z| base.max(1.25 * z)).max(self.epsilon))
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.step = h;
        self
    }

    pub fn with_horizon(mut self, t: f64) -> Self {
        self.horizon = t;
        self
    }

    pub fn with_mode(mut self, mode: FluidMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_q0(mut self, q0: InitialMass) -> Self {
        self.q0 = q0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 || self.replicas > self.servers {
            return Err(Error::InvalidParameter(format!("need 1 <= d <= N, got d = {}, N = {}", self.replicas, self.servers)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        let tol = self.drain_tolerance.unwrap_or(1.0);
        for (name, v) in [("step", self.step), ("horizon", self.horizon), ("epsilon", self.epsilon), ("drain tolerance", tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let bad = |x: f64| !(x >= 0.0 && x.is_finite());
        match &self.q0 {
            InitialMass::Scalar(x) if bad(*x) => Err(Error::InvalidParameter(format!("q0 must be >= 0, got {x}"))),
            InitialMass::PerClass(v) if v.iter().any(|&x| bad(x)) => {
                Err(Error::InvalidParameter("q0 must be >= 0 componentwise".into()))
            }
            InitialMass::PerClass(_) if self.mode == FluidMode::Scalar => {
                Err(Error::InvalidParameter("scalar mode takes a scalar q0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Solution on the grid `t_k = k h`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidPath {
    pub times: Vec<f64>,
    /// `q[k][i]`: mass of class `i` at `t_k`.
    pub q: Vec<Vec<f64>>,
    /// `phi[k][i]`: cumulative per-job attained service of class `i` at `t_k`.
    pub phi: Vec<Vec<f64>>,
    pub drain_time: Option<f64>,
    /// Tolerance the drain time was detected with.
    pub drain_tolerance: f64,
}

impl FluidPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    pub fn totals(&self) -> Vec<f64> {
        self.q.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

/// Incremental state of one class during stepping.
struct ClassTrack {
    q0: f64,
    g: f64,
    /// Oldest grid index whose kernel term is still above the floor.
    first: usize,
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, scale: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = (((b - a) / scale * 64.0).ceil() as usize).clamp(2, 20_000);
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for j in 1..n {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + j as f64 * h);
    }
    acc * h / 3.0
}

fn solve(cfg: &FluidConfig, classes: usize, drain_tol: f64, rate: &dyn Fn(&[f64], usize) -> f64) -> Result<FluidPath> {
    cfg.validate()?;
    let q0: Vec<f64> = match &cfg.q0 {
        InitialMass::Scalar(x) => vec![*x; classes],
        InitialMass::PerClass(v) => {
            if v.len() != classes {
                return Err(Error::InvalidParameter(format!("q0 has {} entries, expected {classes}", v.len())));
            }
            v.clone()
        }
    };
    let h = cfg.step;
    let steps = (cfg.horizon / h).ceil() as usize;
    let lam = cfg.class_lambda();
    let dist = cfg.min_dist;
    let mean_min = match cfg.initial_sizes {
        InitialSizes::Fresh => f64::NAN,
        InitialSizes::EquilibriumResidual => dist.mean(),
    };
    if cfg.initial_sizes == InitialSizes::EquilibriumResidual && !(mean_min > 0.0) {
        return Err(Error::InvalidParameter("equilibrium residual needs E[X_min] > 0".into()));
    }

    let mut times = Vec::with_capacity(steps + 1);
    let mut q = Vec::with_capacity(steps + 1);
    let mut phi: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    times.push(0.0);
    q.push(q0.clone());
    phi.push(vec![0.0; classes]);
    let mut tracks: Vec<ClassTrack> = q0.iter().map(|&x| ClassTrack { q0: x, g: 0.0, first: 0 }).collect();
    let mut drain_time = (q0.iter().fold(0.0f64, |a, &b| a.max(b)) <= drain_tol).then_some(0.0);

    for k in 0..steps {
        let cur = &q[k];
        let next_phi: Vec<f64> = (0..classes)
            .map(|i| if cur[i] > cfg.epsilon { phi[k][i] + h * rate(cur, i) } else { phi[k][i] })
            .collect();
        phi.push(next_phi);
        let now = &phi[k + 1];
        let mut next_q = vec![0.0; classes];
        for (i, tr) in tracks.iter_mut().enumerate() {
            let p = now[i];
            let initial = match cfg.initial_sizes {
                InitialSizes::Fresh => tr.q0 * dist.survival(p),
                InitialSizes::EquilibriumResidual => {
                    tr.g += simpson(|u| dist.survival(u), phi[k][i], p, mean_min) / mean_min;
                    tr.q0 * (1.0 - tr.g.min(1.0))
                }
            };
            while tr.first < k + 1 && dist.survival(p - phi[tr.first][i]) < KERNEL_FLOOR {
                tr.first += 1;
            }
            let mut acc = 0.0;
            for j in tr.first..=k + 1 {
                let w = if j == 0 || j == k + 1 { 0.5 } else { 1.0 };
                acc += w * dist.survival(p - phi[j][i]);
            }
            next_q[i] = (initial + lam * h * acc).max(0.0);
        }
        let t = (k + 1) as f64 * h;
        if drain_time.is_none() && next_q.iter().fold(0.0f64, |a, &b| a.max(b)) <= drain_tol {
            drain_time = Some(t);
        }
        times.push(t);
        q.push(next_q);
    }
    Ok(FluidPath { times, q, phi, drain_time, drain_tolerance: drain_tol })
}

/// Equal-mass fluid: one M/X_min/1/PS queue with arrival rate `lambda / M`
/// and speed `1 / C(N-1, d-1)`. The path carries a single class.
pub fn solve_scalar(cfg: &FluidConfig) -> Result<FluidPath> {
    if cfg.mode != FluidMode::Scalar {
        return Err(Error::InvalidParameter("solve_scalar needs scalar mode".into()));
    }
    if !matches!(cfg.q0, InitialMass::Scalar(_)) {
        return Err(Error::InvalidParameter("scalar mode takes a scalar q0".into()));
    }
    cfg.validate()?;
    let sigma = cfg.sigma();
    let eps = cfg.epsilon;
    let tol = resolve_tolerance(cfg)?;
    solve(cfg, 1, tol, &|q, _| sigma / q[0].max(eps))
}

/// Per-class fluid with min or max sharing rates.
pub fn solve_vector(cfg: &FluidConfig) -> Result<FluidPath> {
    let mode = cfg.mode.rate_mode().ok_or_else(|| Error::InvalidParameter("solve_vector needs min or max mode".into()))?;
    cfg.validate()?;
    let index = build_class_index(cfg.servers, cfg.replicas, DEFAULT_CLASS_BOUND)?;
    let tol = resolve_tolerance(cfg)?;
    solve(cfg, index.len(), tol, &|q, i| index.class_rate(i, q, mode))
}

fn resolve_tolerance(cfg: &FluidConfig) -> Result<f64> {
    match cfg.drain_tolerance {
        Some(t) => Ok(t),
        None => cfg.auto_drain_tolerance(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluidVerdict {
    Stable { drain_time: f64 },
    Unstable { slope: f64 },
    Inconclusive,
}

impl FluidVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            FluidVerdict::Stable { .. } => "stable",
            FluidVerdict::Unstable { .. } => "unstable",
            FluidVerdict::Inconclusive => "inconclusive",
        }
    }
}

/// Least-squares slope of the total mass over the trailing `window` time units.
pub fn trailing_slope(path: &FluidPath, window: f64) -> Result<f64> {
    let horizon = path.horizon();
    if !(window > 0.0) || window > horizon {
        return Err(Error::InvalidParameter(format!("growth window {window} must lie in (0, {horizon}]")));
    }
    let totals = path.totals();
    let start = path.times.partition_point(|&t| t < horizon - window);
    linear_fit(&path.times[start..], &totals[start..]).map(|f| f.slope)
}

pub fn classify_fluid(path: &FluidPath, window: f64) -> Result<FluidVerdict> {
    classify_fluid_with(path, window, DEFAULT_GROWTH_THRESHOLD)
}

/// Growth is tested first, so a path that starts empty and then grows is
/// not mistaken for a drained one.
pub fn classify_fluid_with(path: &FluidPath, window: f64, threshold: f64) -> Result<FluidVerdict> {
    let slope = trailing_slope(path, window)?;
    let totals = path.totals();
    if slope > threshold && totals.last() > totals.first() {
        return Ok(FluidVerdict::Unstable { slope });
    }
    Ok(match path.drain_time {
        Some(drain_time) => FluidVerdict::Stable { drain_time },
        None => FluidVerdict::Inconclusive,
    })
}
