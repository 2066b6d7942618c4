//! Systems of `N` Brownian particles on the real line that synchronize at
//! random epochs: at each epoch a uniformly chosen tuple of particles jumps
//! onto group leaders according to an interaction signature.
//!
//! The crate covers
//! - [`model`]: configurations, the spread statistics `M` and `V`, the
//!   synchronizing maps and the interaction constant `kappa`;
//! - [`epochs`]: Poisson and renewal epoch streams and their counting
//!   observables;
//! - [`engine`]: an exact, lazily updated event-driven simulator and
//!   replica-parallel Monte Carlo estimation of `R_N(t) = E V(x(t))`;
//! - [`analysis`]: the closed form of `R_N(t)`, the three asymptotic regimes
//!   and sweep reports comparing theory with simulation.

pub mod analysis;
pub mod engine;
pub mod epochs;
pub mod error;
pub mod model;
pub mod rng;
pub mod stats;

pub use analysis::{
    alpha_n, closed_form_r, ode_residual, predicted_asymptote, regime_classify, slowdown_factor,
    sweep, Classification, Coefficient, EpochPlan, EpochRate, MarkovModel, MonteCarloSettings,
    Regime, RegimeParams, RegimeReport, ReportRow, SweepMode, SweepPlan, SweepRow, SweepTolerances,
    TimeScale, VarianceEstimate,
};
pub use engine::{
    estimate_r, run_replica, run_replica_with, Estimate, IncrementSource, InitialCondition,
    KeyedIncrements, LazyParticleState, QueryRecord, RefreshPolicy, ReplicaTrace, SimulationConfig,
};
pub use epochs::{count_at, spent_waiting_time, EpochStream, RenewalSpec};
pub use error::{Error, Result};
pub use model::{
    apply_sync, center_of_mass, contraction_factor, empirical_variance, kappa_analytic,
    kappa_enumerate, sample_tuple, IndexTuple, InteractionSignature, ParticleConfiguration,
    TupleSampler,
};
pub use stats::RunningStats;
