//! Exact event-driven simulation of the particle system.
//!
//! Between epochs each particle is an independent Brownian motion with
//! diffusion coefficient `sigma`; its position only needs to be known when it
//! takes part in a jump or when the configuration is measured. Positions are
//! therefore refreshed lazily, drawing the exact Gaussian law of the whole
//! accumulated free motion in one step. No time discretization is involved.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::VarianceEstimate;
use crate::epochs::{EpochStream, RenewalSpec};
use crate::error::{Error, Result};
use crate::model::{self, InteractionSignature, ParticleConfiguration, TupleSampler};
use crate::rng::{self, Substream};
use crate::stats::RunningStats;

/// Where Brownian increments come from.
pub trait IncrementSource {
    /// Called with every event time (epoch or measurement) in increasing
    /// order before any particle is advanced to it.
    fn note_event(&mut self, _t: f64) {}

    /// Position of `particle` at `to`, given it was at `x` at `from`.
    fn advance(&mut self, particle: usize, x: f64, from: f64, to: f64, sigma: f64) -> f64;
}

/// Any random stream serves directly: one Gaussian per refresh.
impl<R: Rng> IncrementSource for R {
    fn advance(&mut self, _particle: usize, x: f64, from: f64, to: f64, sigma: f64) -> f64 {
        let z: f64 = self.sample(StandardNormal);
        x + sigma * (to - from).sqrt() * z
    }
}

/// Counter-style increments: the free motion of particle `p` over the `j`-th
/// segment of the event grid is driven by a normal keyed on `(p, j)`.
///
/// Each segment crossed is applied separately and in order, so a particle
/// refreshed lazily over several segments ends at exactly the same floating
/// point value as one refreshed at every event.
#[derive(Debug, Clone)]
pub struct KeyedIncrements {
    seed: u64,
    replica: u64,
    grid: Vec<f64>,
}

impl KeyedIncrements {
    pub fn new(seed: u64, replica: u64) -> Self {
        Self {
            seed,
            replica,
            grid: vec![0.0],
        }
    }

    fn normal(&self, particle: usize, segment: usize) -> f64 {
        rng::keyed(&[self.seed, self.replica, particle as u64, segment as u64])
            .sample(StandardNormal)
    }
}

impl IncrementSource for KeyedIncrements {
    fn note_event(&mut self, t: f64) {
        if t > *self.grid.last().expect("grid starts at 0") {
            self.grid.push(t);
        }
    }

    fn advance(&mut self, particle: usize, mut x: f64, from: f64, to: f64, sigma: f64) -> f64 {
        let start = self.grid.partition_point(|&g| g < from);
        let end = self.grid.partition_point(|&g| g < to);
        assert!(
            start < self.grid.len()
                && self.grid[start] == from
                && end < self.grid.len()
                && self.grid[end] == to,
            "keyed increments need both endpoints on the event grid"
        );
        for j in start + 1..=end {
            let dt = self.grid[j] - self.grid[j - 1];
            x += sigma * dt.sqrt() * self.normal(particle, j);
        }
        x
    }
}

/// Particle positions with per-particle refresh times.
#[derive(Debug, Clone, PartialEq)]
pub struct LazyParticleState {
    positions: Vec<f64>,
    last_update: Vec<f64>,
    now: f64,
}

impl LazyParticleState {
    pub fn new(initial: ParticleConfiguration) -> Self {
        let n = initial.len();
        Self {
            positions: initial.into_positions(),
            last_update: vec![0.0; n],
            now: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Raw positions; entries may be stale, see [`Self::last_update`].
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn last_update(&self) -> &[f64] {
        &self.last_update
    }

    /// Moves the selected particles forward to time `t` by their exact free
    /// motion. Particles already at `t` are left untouched.
    pub fn advance_particles<S: IncrementSource + ?Sized>(
        &mut self,
        which: &[usize],
        t: f64,
        sigma: f64,
        source: &mut S,
    ) -> Result<()> {
        for &i in which {
            let last = *self.last_update.get(i).ok_or_else(|| {
                Error::Contract(format!("particle {i} out of range for N = {}", self.len()))
            })?;
            if t < last {
                return Err(Error::Contract(format!(
                    "cannot move particle {i} back to t = {t}, it was refreshed at {last}"
                )));
            }
            if t > last {
                self.positions[i] = source.advance(i, self.positions[i], last, t, sigma);
                self.last_update[i] = t;
            }
        }
        if t > self.now {
            self.now = t;
        }
        Ok(())
    }

    /// Refreshes every particle to `t`.
    pub fn refresh_all<S: IncrementSource + ?Sized>(
        &mut self,
        t: f64,
        sigma: f64,
        source: &mut S,
    ) -> Result<()> {
        if t < self.now {
            return Err(Error::Contract(format!(
                "refresh at t = {t} is before now = {}",
                self.now
            )));
        }
        for i in 0..self.len() {
            let last = self.last_update[i];
            if t > last {
                self.positions[i] = source.advance(i, self.positions[i], last, t, sigma);
                self.last_update[i] = t;
            }
        }
        self.now = t;
        Ok(())
    }

    /// Synchronizes the particles of `tuple` at time `epoch`. Only those `k`
    /// particles are brought up to date first.
    pub fn sync_with_tuple<S: IncrementSource + ?Sized>(
        &mut self,
        sig: &InteractionSignature,
        tuple: &[usize],
        epoch: f64,
        sigma: f64,
        source: &mut S,
    ) -> Result<()> {
        if epoch < self.now {
            return Err(Error::Contract(format!(
                "epoch {epoch} is before now = {}",
                self.now
            )));
        }
        if tuple.len() != sig.k() {
            return Err(Error::Contract(format!(
                "tuple has length {} but signature {sig} needs k = {}",
                tuple.len(),
                sig.k()
            )));
        }
        self.advance_particles(tuple, epoch, sigma, source)?;
        model::sync_in_place(&mut self.positions, sig, tuple);
        self.now = epoch;
        Ok(())
    }

    /// Draws a uniform tuple from `tuples` and synchronizes it at `epoch`.
    pub fn step_sync<S: IncrementSource + ?Sized, R: Rng + ?Sized>(
        &mut self,
        sig: &InteractionSignature,
        sampler: &mut TupleSampler,
        epoch: f64,
        sigma: f64,
        source: &mut S,
        tuples: &mut R,
    ) -> Result<()> {
        let tuple = sampler.sample(tuples);
        self.sync_with_tuple(sig, tuple, epoch, sigma, source)
    }

    /// The configuration, provided every particle has been refreshed to `now`.
    pub fn snapshot(&self) -> Result<ParticleConfiguration> {
        if let Some(i) = self.last_update.iter().position(|&u| u != self.now) {
            return Err(Error::Contract(format!(
                "particle {i} is stale ({} < now = {}); refresh before reading",
                self.last_update[i], self.now
            )));
        }
        ParticleConfiguration::new(self.positions.clone())
    }

    /// `x - M(x)` at time `t`; every particle must already be at `t`.
    pub fn centered_snapshot(&self, t: f64) -> Result<ParticleConfiguration> {
        if self.now != t {
            return Err(Error::Contract(format!("state is at {} not {t}", self.now)));
        }
        Ok(self.snapshot()?.centered())
    }
}

/// Law of `x(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    /// All particles at the origin.
    Zero,
    Explicit {
        positions: Vec<f64>,
    },
    /// Independent `N(mean, sd^2)` coordinates.
    IidGaussian {
        mean: f64,
        sd: f64,
    },
}

impl InitialCondition {
    /// `R_N(0) = E V(x(0))`.
    pub fn expected_variance(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Explicit { positions } => model::empirical_variance(positions),
            Self::IidGaussian { sd, .. } => sd * sd,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Self::Zero => Ok(()),
            Self::Explicit { positions } => {
                if positions.len() != n {
                    return Err(Error::Config(format!(
                        "explicit initial configuration has {} positions, N = {n}",
                        positions.len()
                    )));
                }
                ParticleConfiguration::new(positions.clone()).map(|_| ())
            }
            Self::IidGaussian { mean, sd } => {
                if mean.is_finite() && sd.is_finite() && *sd >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "iid-gaussian initial needs finite mean and sd >= 0, got ({mean}, {sd})"
                    )))
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ParticleConfiguration> {
        match self {
            Self::Zero => ParticleConfiguration::zeros(n),
            Self::Explicit { positions } => ParticleConfiguration::new(positions.clone()),
            Self::IidGaussian { mean, sd } => ParticleConfiguration::new(
                (0..n)
                    .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            ),
        }
    }
}

/// One experiment: model, initial law, measurement times and replica count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub sigma: f64,
    /// `None` switches synchronization off entirely.
    pub epochs: Option<RenewalSpec>,
    pub signature: InteractionSignature,
    pub initial: InitialCondition,
    pub query_times: Vec<f64>,
    pub replicas: usize,
    pub base_seed: u64,
    /// Per-replica guard on the number of epochs processed.
    pub max_epochs: Option<u64>,
}

impl SimulationConfig {
    /// Pairwise interaction, Poisson epochs of rate `delta`, zero start.
    pub fn markov(
        n: usize,
        sigma: f64,
        delta: f64,
        query_times: Vec<f64>,
        replicas: usize,
        base_seed: u64,
    ) -> Self {
        Self {
            n,
            sigma,
            epochs: Some(RenewalSpec::Exponential { rate: delta }),
            signature: InteractionSignature::pairwise(),
            initial: InitialCondition::Zero,
            query_times,
            replicas,
            base_seed,
            max_epochs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("N = {} must be >= 2", self.n)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::OutOfRange {
                name: "sigma",
                value: self.sigma,
                reason: "diffusion coefficient must be finite and >= 0",
            });
        }
        if let Some(spec) = &self.epochs {
            spec.validate()?;
        }
        if self.signature.k() > self.n {
            return Err(Error::Config(format!(
                "signature {} needs k = {} particles but N = {}",
                self.signature,
                self.signature.k(),
                self.n
            )));
        }
        self.initial.validate(self.n)?;
        if self.query_times.is_empty() {
            return Err(Error::Config("at least one query time is required".into()));
        }
        if let Some(t) = self
            .query_times
            .iter()
            .find(|t| !(t.is_finite() && **t >= 0.0))
        {
            return Err(Error::Config(format!(
                "query time {t} must be finite and >= 0"
            )));
        }
        if self.query_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("query times must be sorted ascending".into()));
        }
        Ok(())
    }

    /// `kappa` of the configured signature.
    pub fn kappa(&self) -> f64 {
        self.signature.kappa()
    }
}

/// One measurement of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryRecord {
    pub t: f64,
    pub variance: f64,
    pub center: f64,
}

/// A single trajectory's measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaTrace {
    pub records: Vec<QueryRecord>,
    pub epochs: u64,
    /// The epoch guard stopped the run before the last query time.
    pub truncated: bool,
}

/// Whether uninvolved particles are refreshed at every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshPolicy {
    Lazy,
    Eager,
}

/// Runs replica `replica` of `config` with the production stream discipline.
pub fn run_replica(config: &SimulationConfig, replica: u64) -> Result<ReplicaTrace> {
    let mut diffusion = rng::substream(config.base_seed, replica, Substream::Diffusion);
    run_replica_with(config, replica, RefreshPolicy::Lazy, &mut diffusion)
}

/// Runs one replica with an explicit increment source and refresh policy.
/// Epoch intervals, tuple choices and the initial configuration always come
/// from their own substreams of `(base_seed, replica)`.
pub fn run_replica_with<S: IncrementSource + ?Sized>(
    config: &SimulationConfig,
    replica: u64,
    policy: RefreshPolicy,
    source: &mut S,
) -> Result<ReplicaTrace> {
    config.validate()?;
    let seed = config.base_seed;
    let mut init_rng = rng::substream(seed, replica, Substream::Initial);
    let mut epoch_rng = rng::substream(seed, replica, Substream::Epochs);
    let mut tuple_rng = rng::substream(seed, replica, Substream::Tuples);

    let mut state = LazyParticleState::new(config.initial.sample(config.n, &mut init_rng)?);
    let mut sampler = TupleSampler::new(config.n, config.signature.k())?;
    let mut stream = config.epochs.clone().map(EpochStream::new).transpose()?;
    let mut next_epoch = stream.as_mut().map(|s| s.next_epoch(&mut epoch_rng));
    let budget = config.max_epochs.unwrap_or(u64::MAX);

    let mut records = Vec::with_capacity(config.query_times.len());
    let mut processed = 0u64;
    for &q in &config.query_times {
        // Epochs at exactly `q` are processed first: trajectories are
        // right-continuous.
        while let Some(epoch) = next_epoch.filter(|&e| e <= q) {
            if processed >= budget {
                return Ok(ReplicaTrace {
                    records,
                    epochs: processed,
                    truncated: true,
                });
            }
            source.note_event(epoch);
            if policy == RefreshPolicy::Eager {
                state.refresh_all(epoch, config.sigma, source)?;
            }
            state.step_sync(
                &config.signature,
                &mut sampler,
                epoch,
                config.sigma,
                source,
                &mut tuple_rng,
            )?;
            processed += 1;
            next_epoch = stream.as_mut().map(|s| s.next_epoch(&mut epoch_rng));
        }
        source.note_event(q);
        state.refresh_all(q, config.sigma, source)?;
        let x = state.positions();
        records.push(QueryRecord {
            t: q,
            variance: model::empirical_variance(x),
            center: model::center_of_mass(x),
        });
    }
    Ok(ReplicaTrace {
        records,
        epochs: processed,
        truncated: false,
    })
}

/// Monte Carlo estimate of `R_N(t)` at every query time.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub points: Vec<VarianceEstimate>,
    /// Across-replica sample variance of `M(x(t))` at each point.
    pub center_variance: Vec<f64>,
    /// Some replica hit the epoch guard; `points` covers only the query
    /// times every replica reached.
    pub truncated: bool,
    pub total_epochs: u64,
}

/// Reduces traces in the given order.
pub fn summarize(traces: &[ReplicaTrace]) -> Estimate {
    let reached = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let mut points = Vec::with_capacity(reached);
    let mut center_variance = Vec::with_capacity(reached);
    for q in 0..reached {
        let mut v = RunningStats::new();
        let mut m = RunningStats::new();
        for trace in traces {
            let r = &trace.records[q];
            v.push(r.variance);
            m.push(r.center);
        }
        points.push(VarianceEstimate {
            t: traces[0].records[q].t,
            mean: v.mean(),
            stderr: v.stderr(),
            replicas: v.count(),
        });
        center_variance.push(m.variance());
    }
    Estimate {
        points,
        center_variance,
        truncated: traces.iter().any(|t| t.truncated),
        total_epochs: traces.iter().map(|t| t.epochs).sum(),
    }
}

/// Runs all replicas (in parallel) and reduces them in replica order, so the
/// result is bit-identical for any worker count. `workers = None` uses the
/// global rayon pool.
pub fn estimate_r(config: &SimulationConfig, workers: Option<usize>) -> Result<Estimate> {
    config.validate()?;
    if config.replicas < 2 {
        return Err(Error::Config(format!(
            "need at least 2 replicas, got {}",
            config.replicas
        )));
    }
    let run = || {
        (0..config.replicas as u64)
            .into_par_iter()
            .map(|r| run_replica(config, r))
            .collect::<Result<Vec<_>>>()
    };
    let traces = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Ok(summarize(&traces))
}
