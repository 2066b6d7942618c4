//! Synchronization epochs: Poisson flows and general renewal processes.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Law of the i.i.d. intervals between consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum RenewalSpec {
    /// Poisson flow of intensity `rate`.
    Exponential {
        rate: f64,
    },
    Gamma {
        shape: f64,
        scale: f64,
    },
    /// Uniform on `[a, b]` with `0 <= a < b`.
    Uniform {
        a: f64,
        b: f64,
    },
    /// Fixed period. Not a continuous law; kept for testing.
    Deterministic {
        period: f64,
    },
    /// `exp(N(log_mean, log_sd^2))`.
    Lognormal {
        log_mean: f64,
        log_sd: f64,
    },
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value: v,
            reason: "must be finite and > 0",
        })
    }
}

impl RenewalSpec {
    /// Poisson flow with the given intensity.
    pub fn poisson(rate: f64) -> Result<Self> {
        let s = Self::Exponential { rate };
        s.validate()?;
        Ok(s)
    }

    /// Gamma intervals with the given shape and mean.
    pub fn gamma_with_mean(shape: f64, mean: f64) -> Result<Self> {
        let s = Self::Gamma {
            shape,
            scale: mean / shape,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Exponential { rate } => positive("rate", rate),
            Self::Gamma { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)
            }
            Self::Uniform { a, b } => {
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::OutOfRange {
                        name: "a",
                        value: a,
                        reason: "uniform lower bound must be >= 0",
                    });
                }
                if !(b.is_finite() && b > a) {
                    return Err(Error::OutOfRange {
                        name: "b",
                        value: b,
                        reason: "uniform upper bound must exceed a",
                    });
                }
                Ok(())
            }
            Self::Deterministic { period } => positive("period", period),
            Self::Lognormal { log_mean, log_sd } => {
                if !log_mean.is_finite() {
                    return Err(Error::OutOfRange {
                        name: "log_mean",
                        value: log_mean,
                        reason: "must be finite",
                    });
                }
                positive("log_sd", log_sd)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Exponential { .. } => "exponential",
            Self::Gamma { .. } => "gamma",
            Self::Uniform { .. } => "uniform",
            Self::Deterministic { .. } => "deterministic",
            Self::Lognormal { .. } => "lognormal",
        }
    }

    /// Mean interval `mu_N`.
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Gamma { shape, scale } => shape * scale,
            Self::Uniform { a, b } => 0.5 * (a + b),
            Self::Deterministic { period } => period,
            Self::Lognormal { log_mean, log_sd } => (log_mean + 0.5 * log_sd * log_sd).exp(),
        }
    }

    /// Interval variance `d_N`.
    pub fn variance(&self) -> f64 {
        match *self {
            Self::Exponential { rate } => 1.0 / (rate * rate),
            Self::Gamma { shape, scale } => shape * scale * scale,
            Self::Uniform { a, b } => (b - a) * (b - a) / 12.0,
            Self::Deterministic { .. } => 0.0,
            Self::Lognormal { log_mean, log_sd } => {
                let s2 = log_sd * log_sd;
                s2.exp_m1() * (2.0 * log_mean + s2).exp()
            }
        }
    }

    /// Intensity `delta` when the epochs form a Poisson flow.
    pub fn poisson_rate(&self) -> Option<f64> {
        match *self {
            Self::Exponential { rate } => Some(rate),
            _ => None,
        }
    }

    /// Whether the law has a continuous distribution function on `(0, inf)`.
    /// Only the deterministic law fails this.
    pub fn is_continuous(&self) -> bool {
        !matches!(self, Self::Deterministic { .. })
    }

    /// Builds a reusable sampler for the interval law.
    pub fn sampler(&self) -> Result<IntervalSampler> {
        self.validate()?;
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{} law: {e}", self.name()));
        Ok(match *self {
            Self::Exponential { rate } => {
                IntervalSampler::Exponential(Exp::new(rate).map_err(|e| bad(&e))?)
            }
            Self::Gamma { shape, scale } => {
                IntervalSampler::Gamma(Gamma::new(shape, scale).map_err(|e| bad(&e))?)
            }
            Self::Uniform { a, b } => {
                IntervalSampler::Uniform(Uniform::new_inclusive(a, b).map_err(|e| bad(&e))?)
            }
            Self::Deterministic { period } => IntervalSampler::Fixed(period),
            Self::Lognormal { log_mean, log_sd } => {
                IntervalSampler::Lognormal(LogNormal::new(log_mean, log_sd).map_err(|e| bad(&e))?)
            }
        })
    }
}

/// Prepared distribution for drawing intervals.
#[derive(Debug, Clone)]
pub enum IntervalSampler {
    Exponential(Exp<f64>),
    Gamma(Gamma<f64>),
    Uniform(Uniform<f64>),
    Fixed(f64),
    Lognormal(LogNormal<f64>),
}

impl Distribution<f64> for IntervalSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exponential(d) => d.sample(rng),
            Self::Gamma(d) => d.sample(rng),
            Self::Uniform(d) => d.sample(rng),
            Self::Fixed(p) => *p,
            Self::Lognormal(d) => d.sample(rng),
        }
    }
}

/// Streaming cursor over `0 = tau_0 < tau_1 < tau_2 < ...`.
#[derive(Debug, Clone)]
pub struct EpochStream {
    spec: RenewalSpec,
    sampler: IntervalSampler,
    now: f64,
    index: u64,
}

impl EpochStream {
    pub fn new(spec: RenewalSpec) -> Result<Self> {
        let sampler = spec.sampler()?;
        Ok(Self {
            spec,
            sampler,
            now: 0.0,
            index: 0,
        })
    }

    pub fn spec(&self) -> &RenewalSpec {
        &self.spec
    }

    /// The most recent epoch `tau_n` (0 before the first draw).
    pub fn current(&self) -> f64 {
        self.now
    }

    /// `n`, the number of epochs drawn so far.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Draws one interval and returns the new epoch.
    pub fn next_epoch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let dt = self.sampler.sample(rng);
        let next = self.now + dt;
        assert!(
            next > self.now,
            "epoch generator produced a non-increasing epoch ({} after {})",
            next,
            self.now
        );
        self.now = next;
        self.index += 1;
        next
    }
}

/// `Pi_t = max{m : tau_m <= t}` for ascending epochs (`tau_0 = 0` excluded).
pub fn count_at(epochs: &[f64], t: f64) -> usize {
    epochs.partition_point(|&e| e <= t)
}

/// `t - tau*_t`, where `tau*_t` is the last epoch not after `t` (0 if none).
pub fn spent_waiting_time(epochs: &[f64], t: f64) -> f64 {
    match count_at(epochs, t) {
        0 => t,
        n => t - epochs[n - 1],
    }
}
