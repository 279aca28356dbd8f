//! The bound systems seen as `M = C(N, d)` interacting processor-sharing
//! queues, one per `d`-subset of servers, with no replication at all.
//!
//! A job of class `i` is served at `1 / min_j sum_{k in S_j^i} Q_k` (lower
//! bound) or the same with `max` (upper bound), where `S_j^i` collects the
//! classes sharing the `j`-th server of class `i`. [`run_virtual`] simulates
//! this representation directly, so it can be checked event by event against
//! the server-level bound systems in [`crate::engine`].

use crate::engine::{ArrivalStream, Event, EventCounts, EventKind, Horizon, JobLatency, SimulationRecord, SystemConfig, Trajectory, Variant};
use crate::error::{Error, Result};
use crate::stats::Welford;

pub const DEFAULT_CLASS_BOUND: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMode {
    Min,
    Max,
}

impl RateMode {
    pub fn for_variant(v: Variant) -> Option<RateMode> {
        match v {
            Variant::LowerBound => Some(RateMode::Min),
            Variant::UpperBound => Some(RateMode::Max),
            _ => None,
        }
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Lexicographic enumeration of the `d`-subsets of `N` servers (0-based)
/// together with the sharing sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndex {
    servers: usize,
    replicas: usize,
    server_sets: Vec<Vec<usize>>,
    classes_of_server: Vec<Vec<usize>>,
}

pub fn build_class_index(servers: usize, replicas: usize, bound: usize) -> Result<ClassIndex> {
    if replicas == 0 || replicas > servers {
        return Err(Error::InvalidParameter(format!("need 1 <= d <= N, got d = {replicas}, N = {servers}")));
    }
    let count = binomial(servers, replicas);
    if count > bound as u128 {
        return Err(Error::CombinatorialBound { n: servers, d: replicas, count, bound });
    }
    let server_sets: Vec<Vec<usize>> = itertools::Itertools::combinations(0..servers, replicas).collect();
    let mut classes_of_server = vec![Vec::new(); servers];
    for (i, set) in server_sets.iter().enumerate() {
        for &s in set {
            classes_of_server[s].push(i);
        }
    }
    Ok(ClassIndex { servers, replicas, server_sets, classes_of_server })
}

impl ClassIndex {
    pub fn len(&self) -> usize {
        self.server_sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.server_sets.is_empty()
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn server_set(&self, class: usize) -> &[usize] {
        &self.server_sets[class]
    }

    /// `S_j^i`: classes whose server set contains the `j`-th server of class `i`.
    pub fn sharing_set(&self, class: usize, position: usize) -> &[usize] {
        &self.classes_of_server[self.server_sets[class][position]]
    }

    pub fn classes_of_server(&self, server: usize) -> &[usize] {
        &self.classes_of_server[server]
    }

    /// Lexicographic rank of a set of servers, in any order.
    pub fn rank(&self, servers: &[usize]) -> Option<usize> {
        if servers.len() != self.replicas {
            return None;
        }
        let mut c = servers.to_vec();
        c.sort_unstable();
        if c.windows(2).any(|w| w[0] == w[1]) || c.last().is_some_and(|&s| s >= self.servers) {
            return None;
        }
        let n = self.servers;
        let d = self.replicas;
        let mut rank: u128 = 0;
        let mut next = 0usize;
        for (j, &cj) in c.iter().enumerate() {
            for v in next..cj {
                rank += binomial(n - 1 - v, d - 1 - j);
            }
            next = cj + 1;
        }
        Some(rank as usize)
    }

    /// Per-job service rate of class `i` given per-class masses `q`.
    ///
    /// Zero when `q[i] <= 0`.
    pub fn class_rate(&self, class: usize, q: &[f64], mode: RateMode) -> f64 {
        if q[class] <= 0.0 {
            return 0.0;
        }
        let sums = (0..self.replicas).map(|j| self.sharing_set(class, j).iter().map(|&k| q[k]).sum::<f64>());
        let denom = match mode {
            RateMode::Min => sums.fold(f64::INFINITY, f64::min),
            RateMode::Max => sums.fold(f64::NEG_INFINITY, f64::max),
        };
        1.0 / denom
    }

    /// Same as [`class_rate`](Self::class_rate) from cached per-server sums.
    pub fn class_rate_from_server_sums(&self, class: usize, own: f64, server_sums: &[f64], mode: RateMode) -> f64 {
        if own <= 0.0 {
            return 0.0;
        }
        let sums = self.server_sets[class].iter().map(|&s| server_sums[s]);
        let denom = match mode {
            RateMode::Min => sums.fold(f64::INFINITY, f64::min),
            RateMode::Max => sums.fold(f64::NEG_INFINITY, f64::max),
        };
        1.0 / denom
    }

    /// `sum over classes containing s of q_i` for every server `s`.
    pub fn server_sums(&self, q: &[f64]) -> Vec<f64> {
        self.classes_of_server.iter().map(|cs| cs.iter().map(|&k| q[k]).sum()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct VirtualJob {
    id: u64,
    arrival: f64,
    residual: f64,
}

/// Per-class job lists of the virtual-queue system.
#[derive(Debug, Clone)]
pub struct VirtualState {
    queues: Vec<Vec<VirtualJob>>,
    server_sums: Vec<f64>,
}

impl VirtualState {
    pub fn new(index: &ClassIndex) -> Self {
        Self { queues: vec![Vec::new(); index.len()], server_sums: vec![0.0; index.servers()] }
    }

    pub fn class_len(&self, class: usize) -> usize {
        self.queues[class].len()
    }

    pub fn counts(&self) -> Vec<f64> {
        self.queues.iter().map(|q| q.len() as f64).collect()
    }

    /// Number of jobs at server `s`, kept incrementally.
    pub fn server_queue(&self, s: usize) -> f64 {
        self.server_sums[s]
    }

    fn add(&mut self, index: &ClassIndex, class: usize, job: VirtualJob) {
        self.queues[class].push(job);
        for &s in index.server_set(class) {
            self.server_sums[s] += 1.0;
        }
    }

    fn remove(&mut self, index: &ClassIndex, class: usize, pos: usize) -> VirtualJob {
        let job = self.queues[class].remove(pos);
        for &s in index.server_set(class) {
            self.server_sums[s] -= 1.0;
        }
        job
    }

    fn jobs_in_system(&self) -> usize {
        self.queues.iter().map(Vec::len).sum()
    }
}

/// Simulates the virtual-queue system for a lower- or upper-bound config.
///
/// Consumes the same arrival stream as [`crate::engine::run`]; each job joins
/// the class of its sampled server set with size `X_min`.
pub fn run_virtual(cfg: &SystemConfig) -> Result<SimulationRecord> {
    cfg.validate()?;
    let mode = RateMode::for_variant(cfg.variant)
        .ok_or_else(|| Error::InvalidParameter(format!("virtual queues model the bound systems, not {}", cfg.variant)))?;
    let index = build_class_index(cfg.servers, cfg.replicas, DEFAULT_CLASS_BOUND)?;
    let mut state = VirtualState::new(&index);
    let mut stream = ArrivalStream::from_config(cfg)?;
    let mut pending = Some(stream.next_arrival());
    let (max_arrivals, t_end) = match cfg.horizon {
        Horizon::Arrivals(n) => (n, f64::INFINITY),
        Horizon::Time(t) => (u64::MAX, t),
    };

    let mut now = 0.0f64;
    let mut counts = EventCounts::default();
    let mut latencies = Vec::new();
    let mut events = Vec::new();
    let mut traj = Trajectory::default();
    let mut stride = 1u64;
    let mut tick = 0u64;
    let mut jobs_area = 0.0;
    let mut rates = vec![0.0; index.len()];

    let depart = |now: f64, job: VirtualJob, counts: &mut EventCounts, latencies: &mut Vec<JobLatency>, events: &mut Vec<Event>| {
        counts.completions += 1;
        if job.id >= cfg.warmup {
            latencies.push(JobLatency { id: job.id, arrival: job.arrival, latency: now - job.arrival });
        }
        if cfg.record_events {
            events.push(Event { time: now, kind: EventKind::Departure, job: job.id });
        }
    };

    loop {
        for (i, r) in rates.iter_mut().enumerate() {
            *r = index.class_rate_from_server_sums(i, state.class_len(i) as f64, &state.server_sums, mode);
        }
        // earliest completion, ties to the lowest job id
        let mut best: Option<(f64, usize, usize, u64)> = None;
        for (i, q) in state.queues.iter().enumerate() {
            for (pos, job) in q.iter().enumerate() {
                let t = now + job.residual / rates[i];
                let better = match best {
                    None => true,
                    Some((bt, _, _, bid)) => t < bt || (t == bt && job.id < bid),
                };
                if better {
                    best = Some((t, i, pos, job.id));
                }
            }
        }

        let admitting = counts.arrivals < max_arrivals && pending.as_ref().is_some_and(|a| a.time <= t_end);
        let arrival_time = if admitting { pending.as_ref().map_or(f64::INFINITY, |a| a.time) } else { f64::INFINITY };
        if !admitting && !cfg.drain {
            let stop = match cfg.horizon {
                Horizon::Arrivals(_) => pending.as_ref().map_or(now, |a| a.time),
                Horizon::Time(t) => t,
            };
            if best.is_none_or(|(tc, ..)| tc > stop) {
                jobs_area += state.jobs_in_system() as f64 * (stop - now);
                now = stop;
                break;
            }
        }

        let next_t = match best {
            Some((tc, ..)) if tc < arrival_time => tc,
            _ if arrival_time.is_finite() => arrival_time,
            _ => break,
        };
        let dt = next_t - now;
        for (i, q) in state.queues.iter_mut().enumerate() {
            for job in q.iter_mut() {
                job.residual -= rates[i] * dt;
            }
        }
        jobs_area += state.jobs_in_system() as f64 * dt;
        now = next_t;

        match best {
            Some((tc, class, pos, _)) if tc < arrival_time => {
                let job = state.remove(&index, class, pos);
                depart(now, job, &mut counts, &mut latencies, &mut events);
            }
            _ => {
                let a = pending.take().expect("pending arrival");
                counts.arrivals += 1;
                if cfg.record_events {
                    events.push(Event { time: now, kind: EventKind::Arrival, job: a.id });
                }
                let job = VirtualJob { id: a.id, arrival: a.time, residual: a.sizes.min_size() };
                if job.residual <= 0.0 {
                    counts.zero_size += 1;
                    depart(now, job, &mut counts, &mut latencies, &mut events);
                } else {
                    let class = index.rank(&a.servers).ok_or_else(|| Error::Consistency("unrankable server set".into()))?;
                    state.add(&index, class, job);
                }
                pending = Some(stream.next_arrival());
            }
        }

        if cfg.trajectory_rows > 0 {
            tick += 1;
            if tick.is_multiple_of(stride) {
                traj.times.push(now);
                traj.queues.push(state.server_sums.iter().map(|&x| x as u32).collect());
                if traj.times.len() > cfg.trajectory_rows {
                    let mut keep = 0;
                    for i in (1..traj.times.len()).step_by(2) {
                        traj.times.swap(keep, i);
                        traj.queues.swap(keep, i);
                        keep += 1;
                    }
                    traj.times.truncate(keep);
                    traj.queues.truncate(keep);
                    stride *= 2;
                }
            }
        }
    }

    counts.in_system = state.jobs_in_system() as u64;
    latencies.sort_by_key(|l| l.id);
    Ok(SimulationRecord {
        variant: cfg.variant,
        seed: cfg.seed,
        lambda: cfg.lambda,
        latencies,
        trajectory: traj,
        events: counts,
        event_log: events,
        replica_sojourn: vec![Welford::default(); cfg.servers],
        jobs_area,
        end_time: now,
        snapshots: Vec::new(),
    })
}

/// Largest time or id discrepancy between two event logs; `None` when the
/// logs differ in length, kind or job order.
pub fn event_log_distance(a: &[Event], b: &[Event]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        if x.kind != y.kind || x.job != y.job {
            return None;
        }
        worst = worst.max((x.time - y.time).abs());
    }
    Some(worst)
}
