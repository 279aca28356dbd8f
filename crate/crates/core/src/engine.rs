//! Exact event-driven simulation of `N` processor-sharing servers with
//! redundancy-`d` cancel-on-completion dispatch.
//!
//! Every active replica belongs to a *rate group*: all members of a group
//! are served at the same per-replica rate at every instant. In the
//! original and fully-served systems a group is one server (rate `1/Q_j`);
//! in the lower/upper bound systems it is the job's set of sampled servers
//! (rate `1/min Q` or `1/max Q` over that set). Each group keeps a virtual
//! clock `v` that advances at the group rate, so a replica of size `x`
//! joining at virtual time `v0` finishes when the clock reaches `v0 + x`.
//! Between events all rates are constant, which makes the simulation exact
//! up to floating-point rounding.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::dist::{sample_replicas, DependenceModel, JobSizeModel, ReplicaSizes};
use crate::error::{Error, Result};
use crate::stats::{mean_ci, MeanCi, Welford};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Original,
    LowerBound,
    UpperBound,
    FullyServed,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::LowerBound, Variant::Original, Variant::UpperBound, Variant::FullyServed];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::LowerBound => "lower",
            Variant::UpperBound => "upper",
            Variant::FullyServed => "fully_served",
        }
    }

    pub fn from_name(s: &str) -> Option<Variant> {
        match s {
            "original" => Some(Variant::Original),
            "lower" | "lowerbound" | "lower_bound" => Some(Variant::LowerBound),
            "upper" | "upperbound" | "upper_bound" => Some(Variant::UpperBound),
            "fully_served" | "fullyserved" | "full" => Some(Variant::FullyServed),
            _ => None,
        }
    }

    fn is_bound(&self) -> bool {
        matches!(self, Variant::LowerBound | Variant::UpperBound)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Admit this many arrivals.
    Arrivals(u64),
    /// Admit arrivals up to this time.
    Time(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub servers: usize,
    pub replicas: usize,
    pub lambda: f64,
    pub model: JobSizeModel,
    pub dep: DependenceModel,
    pub variant: Variant,
    pub horizon: Horizon,
    /// Latencies of jobs with id below this are discarded.
    pub warmup: u64,
    pub seed: u64,
    /// Keep serving after admission stops until the system is empty.
    pub drain: bool,
    /// Upper bound on trajectory rows; 0 disables the trajectory.
    pub trajectory_rows: usize,
    pub record_events: bool,
    /// Take a residual-work snapshot before every k-th arrival.
    pub snapshot_every: Option<u64>,
    /// Verify queue bookkeeping and rates at every event (slow).
    pub check_invariants: bool,
}

impl SystemConfig {
    /// Defaults: 10^5 arrivals, 10% warmup, drain on, 2000 trajectory rows.
    pub fn new(servers: usize, replicas: usize, lambda: f64, model: JobSizeModel, dep: DependenceModel) -> Self {
        Self {
            servers,
            replicas,
            lambda,
            model,
            dep,
            variant: Variant::Original,
            horizon: Horizon::Arrivals(100_000),
            warmup: 10_000,
            seed: 1,
            drain: true,
            trajectory_rows: 2000,
            record_events: false,
            snapshot_every: None,
            check_invariants: false,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Arrival-count horizon with the default 10% warmup.
    pub fn with_arrivals(mut self, n: u64) -> Self {
        self.horizon = Horizon::Arrivals(n);
        self.warmup = n / 10;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if self.servers > 64 {
            return Err(Error::InvalidParameter(format!("N = {} exceeds the supported 64 servers", self.servers)));
        }
        if self.replicas == 0 || self.replicas > self.servers {
            return Err(Error::InvalidParameter(format!("need 1 <= d <= N, got d = {}, N = {}", self.replicas, self.servers)));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        match self.horizon {
            Horizon::Arrivals(n) => {
                if n == 0 {
                    return Err(Error::InvalidParameter("horizon must admit at least one arrival".into()));
                }
                if self.warmup >= n {
                    return Err(Error::InvalidParameter(format!("warmup {} must be below arrivals {n}", self.warmup)));
                }
            }
            Horizon::Time(t) => {
                if !(t.is_finite() && t > 0.0) {
                    return Err(Error::InvalidParameter(format!("time horizon must be positive, got {t}")));
                }
            }
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::InvalidParameter("snapshot_every must be positive".into()));
        }
        Ok(())
    }
}

/// One arriving job as drawn from the shared random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub id: u64,
    pub time: f64,
    /// Sampled servers; replica `r` goes to `servers[r]`.
    pub servers: Vec<usize>,
    pub sizes: ReplicaSizes,
}

/// Poisson arrivals with uniform `d`-subsets and dependent replica sizes.
///
/// Draw order per job is fixed (inter-arrival time, server subset, sizes) so
/// every consumer seeded identically sees the same jobs.
pub struct ArrivalStream {
    rng: ChaCha8Rng,
    interarrival: Exp<f64>,
    time: f64,
    next_id: u64,
    d: usize,
    pool: Vec<usize>,
    model: JobSizeModel,
    dep: DependenceModel,
}

impl ArrivalStream {
    pub fn new(servers: usize, replicas: usize, lambda: f64, model: JobSizeModel, dep: DependenceModel, seed: u64) -> Result<Self> {
        let interarrival = Exp::new(lambda).map_err(|e| Error::InvalidParameter(format!("lambda: {e}")))?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            interarrival,
            time: 0.0,
            next_id: 0,
            d: replicas,
            pool: (0..servers).collect(),
            model,
            dep,
        })
    }

    pub fn from_config(cfg: &SystemConfig) -> Result<Self> {
        Self::new(cfg.servers, cfg.replicas, cfg.lambda, cfg.model, cfg.dep, cfg.seed)
    }

    pub fn next_arrival(&mut self) -> Arrival {
        self.time += self.interarrival.sample(&mut self.rng);
        let n = self.pool.len();
        // partial Fisher-Yates
        for i in 0..self.d {
            let j = self.rng.random_range(i..n);
            self.pool.swap(i, j);
        }
        let servers = self.pool[..self.d].to_vec();
        let sizes = sample_replicas(&self.dep, &self.model, self.d, &mut self.rng);
        let id = self.next_id;
        self.next_id += 1;
        Arrival { id, time: self.time, servers, sizes }
    }
}

/// Per-replica service rate in the given variant.
///
/// `servers` are the job's sampled servers, `replica` indexes into them and
/// `queues` holds the current number of replicas at every server.
pub fn replica_rate(variant: Variant, servers: &[usize], replica: usize, queues: &[u32]) -> Result<f64> {
    let own = *servers
        .get(replica)
        .ok_or_else(|| Error::Consistency(format!("replica {replica} out of range")))?;
    let q = |s: usize| -> Result<u32> {
        match queues.get(s) {
            Some(&0) => Err(Error::Consistency(format!("server {s} has an active replica but queue length 0"))),
            Some(&q) => Ok(q),
            None => Err(Error::Consistency(format!("server {s} out of range"))),
        }
    };
    let denom = match variant {
        Variant::Original | Variant::FullyServed => q(own)?,
        Variant::LowerBound => servers.iter().map(|&s| q(s)).collect::<Result<Vec<_>>>()?.into_iter().min().unwrap_or(0),
        Variant::UpperBound => servers.iter().map(|&s| q(s)).collect::<Result<Vec<_>>>()?.into_iter().max().unwrap_or(0),
    };
    Ok(1.0 / denom as f64)
}

/// Bound systems give every replica the job's minimum size.
pub fn effective_sizes(variant: Variant, raw: &ReplicaSizes) -> ReplicaSizes {
    if variant.is_bound() {
        ReplicaSizes::new(vec![raw.min_size(); raw.len()])
    } else {
        raw.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobLatency {
    pub id: u64,
    pub arrival: f64,
    pub latency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival,
    Departure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub job: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventCounts {
    pub arrivals: u64,
    pub completions: u64,
    /// Replicas abandoned because a sibling finished first.
    pub cancellations: u64,
    /// Jobs that departed at arrival because a replica had size zero.
    pub zero_size: u64,
    pub in_system: u64,
}

/// Queue lengths per server sampled at events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub queues: Vec<Vec<u32>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.queues.iter().map(|q| q.iter().map(|&x| x as f64).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSnapshot {
    /// Taken just before this job arrived.
    pub before_arrival: u64,
    pub time: f64,
    /// `(job id, residual work per replica)`, sorted by id; cancelled or
    /// finished replicas report 0.
    pub jobs: Vec<(u64, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRecord {
    pub variant: Variant,
    pub seed: u64,
    pub lambda: f64,
    /// Post-warmup completed jobs, sorted by id.
    pub latencies: Vec<JobLatency>,
    pub trajectory: Trajectory,
    pub events: EventCounts,
    pub event_log: Vec<Event>,
    /// Per-server sojourn of fully served replicas (post-warmup jobs).
    pub replica_sojourn: Vec<Welford>,
    /// Integral of the number of jobs in system over `[0, end_time]`.
    pub jobs_area: f64,
    pub end_time: f64,
    pub snapshots: Vec<ResidualSnapshot>,
}

impl SimulationRecord {
    pub fn mean_latency(&self) -> Result<f64> {
        if self.latencies.is_empty() {
            return Err(Error::InsufficientData("no post-warmup completions".into()));
        }
        Ok(self.latencies.iter().map(|l| l.latency).sum::<f64>() / self.latencies.len() as f64)
    }

    pub fn time_avg_jobs(&self) -> f64 {
        if self.end_time > 0.0 {
            self.jobs_area / self.end_time
        } else {
            0.0
        }
    }

    /// Pooled per-replica sojourn over all servers.
    pub fn mean_replica_sojourn(&self) -> Option<f64> {
        let n: u64 = self.replica_sojourn.iter().map(|w| w.count()).sum();
        if n == 0 {
            return None;
        }
        Some(self.replica_sojourn.iter().map(|w| w.mean() * w.count() as f64).sum::<f64>() / n as f64)
    }
}

/// Across-replication mean latency with a 95% half-width.
pub fn mean_latency(records: &[SimulationRecord]) -> Result<MeanCi> {
    let means = records.iter().map(|r| r.mean_latency()).collect::<Result<Vec<_>>>()?;
    mean_ci(&means)
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    target: f64,
    job: u64,
    replica: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.target
            .total_cmp(&other.target)
            .then(self.job.cmp(&other.job))
            .then(self.replica.cmp(&other.replica))
    }
}

#[derive(Debug, Default)]
struct Group {
    servers: Vec<usize>,
    clock: f64,
    rate: f64,
    live: usize,
    heap: BinaryHeap<Reverse<Entry>>,
}

#[derive(Debug)]
struct LiveJob {
    arrival: f64,
    servers: Vec<usize>,
    sizes: Vec<f64>,
    raw_min: f64,
    /// Virtual-clock finish target per replica; NaN when the replica never
    /// joined (size zero) or already finished.
    targets: Vec<f64>,
    groups: Vec<usize>,
    remaining: usize,
}

struct Sim<'a> {
    cfg: &'a SystemConfig,
    now: f64,
    queues: Vec<u32>,
    groups: Vec<Group>,
    class_of: HashMap<Vec<usize>, usize>,
    active_groups: Vec<usize>,
    jobs: HashMap<u64, LiveJob>,
    latencies: Vec<JobLatency>,
    counts: EventCounts,
    events: Vec<Event>,
    traj: Trajectory,
    traj_stride: u64,
    traj_tick: u64,
    replica_sojourn: Vec<Welford>,
    jobs_area: f64,
    snapshots: Vec<ResidualSnapshot>,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SystemConfig) -> Self {
        let n = cfg.servers;
        let groups = if cfg.variant.is_bound() {
            Vec::new()
        } else {
            (0..n).map(|s| Group { servers: vec![s], ..Default::default() }).collect()
        };
        Self {
            cfg,
            now: 0.0,
            queues: vec![0; n],
            groups,
            class_of: HashMap::new(),
            active_groups: Vec::new(),
            jobs: HashMap::new(),
            latencies: Vec::new(),
            counts: EventCounts::default(),
            events: Vec::new(),
            traj: Trajectory::default(),
            traj_stride: 1,
            traj_tick: 0,
            replica_sojourn: vec![Welford::default(); n],
            jobs_area: 0.0,
            snapshots: Vec::new(),
        }
    }

    fn group_rate(&self, g: &Group) -> f64 {
        let qs = g.servers.iter().map(|&s| self.queues[s]);
        let denom = match self.cfg.variant {
            Variant::UpperBound => qs.max().unwrap_or(0),
            _ => qs.min().unwrap_or(0),
        };
        if denom == 0 {
            0.0
        } else {
            1.0 / denom as f64
        }
    }

    fn refresh_rates(&mut self) {
        self.active_groups.retain(|&g| self.groups[g].live > 0);
        for i in 0..self.active_groups.len() {
            let g = self.active_groups[i];
            let rate = self.group_rate(&self.groups[g]);
            self.groups[g].rate = rate;
        }
    }

    fn advance(&mut self, t: f64) {
        let dt = t - self.now;
        if dt > 0.0 {
            for &g in &self.active_groups {
                let grp = &mut self.groups[g];
                grp.clock += grp.rate * dt;
            }
            self.jobs_area += self.jobs.len() as f64 * dt;
            self.now = t;
        }
    }

    /// Earliest pending completion as `(time, group)`, discarding dead heap
    /// entries on the way.
    fn next_completion(&mut self) -> Option<(f64, usize, Entry)> {
        let mut best: Option<(f64, usize, Entry)> = None;
        for i in 0..self.active_groups.len() {
            let g = self.active_groups[i];
            let entry = loop {
                let top = match self.groups[g].heap.peek() {
                    Some(Reverse(e)) => *e,
                    None => break None,
                };
                let alive = self.jobs.get(&top.job).is_some_and(|j| !j.targets[top.replica].is_nan());
                if alive {
                    break Some(top);
                }
                self.groups[g].heap.pop();
            };
            let Some(e) = entry else { continue };
            let grp = &self.groups[g];
            let t = self.now + ((e.target - grp.clock) / grp.rate).max(0.0);
            let better = match &best {
                None => true,
                Some((bt, _, be)) => t < *bt || (t == *bt && e.job < be.job),
            };
            if better {
                best = Some((t, g, e));
            }
        }
        best
    }

    fn class_group(&mut self, servers: &[usize]) -> usize {
        let mut key = servers.to_vec();
        key.sort_unstable();
        if let Some(&g) = self.class_of.get(&key) {
            return g;
        }
        let g = self.groups.len();
        self.groups.push(Group { servers: key.clone(), ..Default::default() });
        self.class_of.insert(key, g);
        g
    }

    fn join(&mut self, g: usize, size: f64, job: u64, replica: usize) -> f64 {
        let grp = &mut self.groups[g];
        if grp.live == 0 {
            grp.clock = 0.0;
            grp.heap.clear();
            self.active_groups.push(g);
        }
        grp.live += 1;
        let target = grp.clock + size;
        grp.heap.push(Reverse(Entry { target, job, replica }));
        target
    }

    fn leave(&mut self, g: usize) {
        let grp = &mut self.groups[g];
        grp.live -= 1;
        if grp.live == 0 {
            grp.heap.clear();
            grp.clock = 0.0;
        }
    }

    fn record_departure(&mut self, id: u64, arrival: f64) {
        self.counts.completions += 1;
        if id >= self.cfg.warmup {
            self.latencies.push(JobLatency { id, arrival, latency: self.now - arrival });
        }
        if self.cfg.record_events {
            self.events.push(Event { time: self.now, kind: EventKind::Departure, job: id });
        }
    }

    fn arrive(&mut self, a: Arrival) {
        self.counts.arrivals += 1;
        if self.cfg.record_events {
            self.events.push(Event { time: self.now, kind: EventKind::Arrival, job: a.id });
        }
        let variant = self.cfg.variant;
        let eff = effective_sizes(variant, &a.sizes);
        let d = a.servers.len();

        if variant != Variant::FullyServed && eff.min_size() <= 0.0 {
            self.counts.zero_size += 1;
            self.record_departure(a.id, a.time);
            return;
        }

        let mut job = LiveJob {
            arrival: a.time,
            servers: a.servers.clone(),
            sizes: eff.sizes().to_vec(),
            raw_min: a.sizes.min_size(),
            targets: vec![f64::NAN; d],
            groups: vec![usize::MAX; d],
            remaining: 0,
        };
        if variant.is_bound() {
            let g = self.class_group(&a.servers);
            let target = self.join(g, eff.min_size(), a.id, 0);
            for r in 0..d {
                job.targets[r] = target;
                job.groups[r] = g;
            }
            for &s in &a.servers {
                self.queues[s] += 1;
            }
            job.remaining = 1;
        } else {
            for r in 0..d {
                let size = eff.sizes()[r];
                let s = a.servers[r];
                if size <= 0.0 {
                    // fully served replica of size zero finishes on arrival
                    if a.id >= self.cfg.warmup {
                        self.replica_sojourn[s].push(0.0);
                    }
                    continue;
                }
                job.targets[r] = self.join(s, size, a.id, r);
                job.groups[r] = s;
                self.queues[s] += 1;
                job.remaining += 1;
            }
            if job.remaining == 0 {
                self.counts.zero_size += 1;
                self.record_departure(a.id, a.time);
                return;
            }
        }
        self.jobs.insert(a.id, job);
    }

    fn complete(&mut self, g: usize, e: Entry) -> Result<()> {
        self.groups[g].heap.pop();
        self.groups[g].clock = self.groups[g].clock.max(e.target);
        let variant = self.cfg.variant;
        let mut job = self
            .jobs
            .remove(&e.job)
            .ok_or_else(|| Error::Consistency(format!("completion for unknown job {}", e.job)))?;

        match variant {
            Variant::FullyServed => {
                let s = job.servers[e.replica];
                self.queues[s] -= 1;
                self.leave(g);
                job.targets[e.replica] = f64::NAN;
                job.remaining -= 1;
                if e.job >= self.cfg.warmup {
                    self.replica_sojourn[s].push(self.now - job.arrival);
                }
                if job.remaining == 0 {
                    self.record_departure(e.job, job.arrival);
                } else {
                    self.jobs.insert(e.job, job);
                }
            }
            Variant::LowerBound | Variant::UpperBound => {
                if self.cfg.check_invariants && job.sizes[0] != job.raw_min {
                    return Err(Error::Consistency(format!("job {} completed with a non-minimal replica", e.job)));
                }
                for &s in &job.servers {
                    self.queues[s] -= 1;
                }
                self.leave(g);
                self.counts.cancellations += job.servers.len() as u64 - 1;
                self.record_departure(e.job, job.arrival);
            }
            Variant::Original => {
                for r in 0..job.servers.len() {
                    if job.targets[r].is_nan() {
                        continue;
                    }
                    let s = job.servers[r];
                    self.queues[s] -= 1;
                    self.leave(job.groups[r]);
                    if r != e.replica {
                        self.counts.cancellations += 1;
                    }
                }
                self.record_departure(e.job, job.arrival);
            }
        }
        Ok(())
    }

    fn sample_trajectory(&mut self) {
        let max = self.cfg.trajectory_rows;
        if max == 0 {
            return;
        }
        self.traj_tick += 1;
        if !self.traj_tick.is_multiple_of(self.traj_stride) {
            return;
        }
        self.traj.times.push(self.now);
        self.traj.queues.push(self.queues.clone());
        if self.traj.times.len() > max {
            // keep every other row and halve the sampling frequency
            let mut keep = 0;
            for i in (1..self.traj.times.len()).step_by(2) {
                self.traj.times.swap(keep, i);
                self.traj.queues.swap(keep, i);
                keep += 1;
            }
            self.traj.times.truncate(keep);
            self.traj.queues.truncate(keep);
            self.traj_stride *= 2;
        }
    }

    fn snapshot(&mut self, before_arrival: u64) {
        let mut jobs: Vec<(u64, Vec<f64>)> = self
            .jobs
            .iter()
            .map(|(&id, job)| {
                let res = job
                    .targets
                    .iter()
                    .zip(&job.groups)
                    .map(|(&t, &g)| if t.is_nan() { 0.0 } else { (t - self.groups[g].clock).max(0.0) })
                    .collect();
                (id, res)
            })
            .collect();
        jobs.sort_by_key(|(id, _)| *id);
        self.snapshots.push(ResidualSnapshot { before_arrival, time: self.now, jobs });
    }

    fn check(&self) -> Result<()> {
        let mut counted = vec![0u32; self.cfg.servers];
        for job in self.jobs.values() {
            for (r, &s) in job.servers.iter().enumerate() {
                if !job.targets[r].is_nan() {
                    counted[s] += 1;
                }
            }
        }
        if counted != self.queues {
            return Err(Error::Consistency(format!("queue lengths {:?} disagree with live replicas {counted:?}", self.queues)));
        }
        for job in self.jobs.values() {
            for (r, &g) in job.groups.iter().enumerate() {
                if job.targets[r].is_nan() {
                    continue;
                }
                let want = replica_rate(self.cfg.variant, &job.servers, r, &self.queues)?;
                let got = self.groups[g].rate;
                if (want - got).abs() > 1e-12 {
                    return Err(Error::Consistency(format!("group rate {got} differs from replica rate {want}")));
                }
                let attained = job.sizes[r] - (job.targets[r] - self.groups[g].clock);
                if attained < -1e-9 || attained > job.sizes[r] + 1e-9 {
                    return Err(Error::Consistency(format!("attained work {attained} outside [0, {}]", job.sizes[r])));
                }
            }
        }
        if self.cfg.variant == Variant::Original || self.cfg.variant == Variant::FullyServed {
            // work conservation: a busy server hands out total rate 1
            for (s, grp) in self.groups.iter().enumerate() {
                let total = grp.live as f64 * grp.rate;
                if self.queues[s] > 0 && (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Consistency(format!("server {s} grants total rate {total}")));
                }
            }
        }
        Ok(())
    }

    fn run(mut self) -> Result<SimulationRecord> {
        let cfg = self.cfg;
        let mut stream = ArrivalStream::from_config(cfg)?;
        let mut pending = Some(stream.next_arrival());
        let (max_arrivals, t_end) = match cfg.horizon {
            Horizon::Arrivals(n) => (n, f64::INFINITY),
            Horizon::Time(t) => (u64::MAX, t),
        };

        loop {
            let admitting = self.counts.arrivals < max_arrivals && pending.as_ref().is_some_and(|a| a.time <= t_end);
            let completion = self.next_completion();
            let arrival_time = if admitting { pending.as_ref().map_or(f64::INFINITY, |a| a.time) } else { f64::INFINITY };

            if !admitting && !cfg.drain {
                // stop at the first arrival that is not admitted, or at the time horizon
                let stop = match cfg.horizon {
                    Horizon::Arrivals(_) => pending.as_ref().map_or(self.now, |a| a.time),
                    Horizon::Time(t) => t,
                };
                if completion.as_ref().is_none_or(|(tc, _, _)| *tc > stop) {
                    self.advance(stop);
                    break;
                }
            }

            match completion {
                Some((tc, g, e)) if tc < arrival_time => {
                    self.advance(tc);
                    self.complete(g, e)?;
                }
                _ if arrival_time.is_finite() => {
                    let a = pending.take().expect("pending arrival");
                    self.advance(a.time);
                    if let Some(k) = cfg.snapshot_every {
                        if a.id % k == 0 {
                            self.snapshot(a.id);
                        }
                    }
                    self.arrive(a);
                    pending = Some(stream.next_arrival());
                }
                _ => break,
            }
            self.refresh_rates();
            if cfg.check_invariants {
                self.check()?;
            }
            self.sample_trajectory();
        }

        self.counts.in_system = self.jobs.len() as u64;
        if self.counts.completions + self.counts.in_system != self.counts.arrivals {
            return Err(Error::Consistency("completions + in-system != arrivals".into()));
        }
        self.latencies.sort_by_key(|l| l.id);
        Ok(SimulationRecord {
            variant: cfg.variant,
            seed: cfg.seed,
            lambda: cfg.lambda,
            latencies: self.latencies,
            trajectory: self.traj,
            events: self.counts,
            event_log: self.events,
            replica_sojourn: self.replica_sojourn,
            jobs_area: self.jobs_area,
            end_time: self.now,
            snapshots: self.snapshots,
        })
    }
}

pub fn run(cfg: &SystemConfig) -> Result<SimulationRecord> {
    cfg.validate()?;
    Sim::new(cfg).run()
}

/// Runs configurations that differ only in their variant on one common
/// random stream; records come back in input order.
pub fn run_coupled(configs: &[SystemConfig]) -> Result<Vec<SimulationRecord>> {
    let Some(first) = configs.first() else {
        return Ok(Vec::new());
    };
    for c in &configs[1..] {
        let same = c.servers == first.servers
            && c.replicas == first.replicas
            && c.lambda == first.lambda
            && c.model == first.model
            && c.dep == first.dep
            && c.seed == first.seed
            && c.horizon == first.horizon
            && c.warmup == first.warmup
            && c.drain == first.drain;
        if !same {
            return Err(Error::Mismatch(format!("{} config differs from {} in more than its variant", c.variant, first.variant)));
        }
    }
    configs.par_iter().map(run).collect()
}

pub fn replication_seed(base: u64, replication: usize) -> u64 {
    base.wrapping_add(replication as u64)
}

/// Independent replications with seeds `seed, seed + 1, ...`, run in
/// parallel and returned in seed order.
pub fn run_replications(cfg: &SystemConfig, replications: usize) -> Result<Vec<SimulationRecord>> {
    cfg.validate()?;
    (0..replications)
        .into_par_iter()
        .map(|r| run(&cfg.clone().with_seed(replication_seed(cfg.seed, r))))
        .collect()
}

/// Latency vectors of coupled records aligned by job id: `out[j][v]` is the
/// latency of the `j`-th common job in record `v`.
pub fn aligned_latencies(records: &[SimulationRecord]) -> Result<Vec<(u64, Vec<f64>)>> {
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let maps: Vec<HashMap<u64, f64>> =
        records.iter().map(|r| r.latencies.iter().map(|l| (l.id, l.latency)).collect()).collect();
    let mut out = Vec::with_capacity(first.latencies.len());
    for l in &first.latencies {
        let row: Option<Vec<f64>> = maps.iter().map(|m| m.get(&l.id).copied()).collect();
        match row {
            Some(row) => out.push((l.id, row)),
            None => continue,
        }
    }
    Ok(out)
}
