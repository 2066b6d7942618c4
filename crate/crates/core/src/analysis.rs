//! Closed-form spread, asymptotic regimes and sweep reports.
//!
//! Under Poisson epochs of intensity `delta` the expected empirical variance
//! relaxes exponentially towards `sigma^2 l_N / delta`, where
//! `l_N = N(N-1)/kappa`:
//!
//! ```text
//! R_N(t) = sigma^2 l_N / delta * (1 - exp(-delta t / l_N)) + exp(-delta t / l_N) R_N(0)
//! ```
//!
//! As `N -> inf` with `t = t(N)`, the index `alpha_N = kappa delta t(N) / N^2`
//! selects one of three regimes:
//!
//! | regime | `alpha_N` | `R_N(t(N)) ~`                  |
//! |--------|-----------|--------------------------------|
//! | I      | `-> 0`    | `sigma^2 t(N)`                 |
//! | II     | `-> c`    | `f(c) sigma^2 t(N)`            |
//! | III    | `-> inf`  | `sigma^2 N^2 / (kappa delta)`  |
//!
//! with `f(c) = (1 - e^{-c}) / c`. For renewal epochs of mean `mu` the same
//! table is conjectured with `1/mu` in place of `delta`; rows computed that
//! way are marked empirical.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::{estimate_r, InitialCondition, SimulationConfig};
use crate::epochs::RenewalSpec;
use crate::error::{Error, Result};
use crate::model::InteractionSignature;

/// Monte Carlo estimate of `R_N(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub replicas: usize,
}

impl VarianceEstimate {
    /// `(mean - target) / stderr`. A zero standard error gives 0 on an exact
    /// hit and an infinite score otherwise.
    pub fn zscore(&self, target: f64) -> f64 {
        let d = self.mean - target;
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }

    /// `|mean - target| <= sigmas * stderr`.
    pub fn covers(&self, target: f64, sigmas: f64) -> bool {
        (self.mean - target).abs() <= sigmas * self.stderr
    }
}

/// Parameters of the Markov model, validated once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovModel {
    pub n: usize,
    pub sigma: f64,
    pub delta: f64,
    pub kappa: f64,
    pub r0: f64,
}

impl MarkovModel {
    pub fn new(n: usize, sigma: f64, delta: f64, kappa: f64, r0: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("N = {n} must be >= 2")));
        }
        let check = |name, v: f64, ok: bool, reason| {
            if v.is_finite() && ok {
                Ok(())
            } else {
                Err(Error::OutOfRange {
                    name,
                    value: v,
                    reason,
                })
            }
        };
        check("sigma", sigma, sigma > 0.0, "must be > 0")?;
        check("delta", delta, delta > 0.0, "must be > 0")?;
        check(
            "kappa",
            kappa,
            kappa > 0.0 && kappa <= (n * (n - 1)) as f64,
            "must lie in (0, N(N-1)]",
        )?;
        check("R0", r0, r0 >= 0.0, "must be >= 0")?;
        Ok(Self {
            n,
            sigma,
            delta,
            kappa,
            r0,
        })
    }

    /// `l_N = N(N-1)/kappa`.
    pub fn relaxation_scale(&self) -> f64 {
        (self.n * (self.n - 1)) as f64 / self.kappa
    }

    /// `sigma^2 l_N / delta`, the `t -> inf` limit of `R_N(t)`.
    pub fn stationary(&self) -> f64 {
        self.sigma * self.sigma * self.relaxation_scale() / self.delta
    }

    /// `R_N(t)`. Defined for any real `t`; `1 - e^{-u}` is evaluated with
    /// `expm1` so small `t` keeps full precision.
    pub fn r(&self, t: f64) -> f64 {
        let u = self.delta * t / self.relaxation_scale();
        -self.stationary() * (-u).exp_m1() + (-u).exp() * self.r0
    }

    /// Right-hand side of `dR/dt = sigma^2 - (delta / l_N) R`.
    pub fn slope(&self, r: f64) -> f64 {
        self.sigma * self.sigma - self.delta / self.relaxation_scale() * r
    }

    /// Central finite difference of `R` at `t` minus the ODE right-hand side.
    pub fn ode_residual(&self, t: f64, h: f64) -> f64 {
        let fd = (self.r(t + h) - self.r(t - h)) / (2.0 * h);
        fd - self.slope(self.r(t))
    }
}

/// `R_N(t)` for the Markov model.
pub fn closed_form_r(t: f64, n: usize, sigma: f64, delta: f64, kappa: f64, r0: f64) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::OutOfRange {
            name: "t",
            value: t,
            reason: "must be finite and >= 0",
        });
    }
    Ok(MarkovModel::new(n, sigma, delta, kappa, r0)?.r(t))
}

/// Finite-difference check of the relaxation ODE at `t` with step `h`.
pub fn ode_residual(t: f64, model: &MarkovModel, h: f64) -> f64 {
    model.ode_residual(t, h)
}

/// `f(c) = (1 - e^{-c}) / c`, with `f(0) = 1`.
pub fn slowdown_factor(c: f64) -> Result<f64> {
    if c.is_nan() || c < 0.0 {
        return Err(Error::OutOfRange {
            name: "c",
            value: c,
            reason: "slowdown factor needs c >= 0",
        });
    }
    if c == 0.0 {
        return Ok(1.0);
    }
    Ok(-(-c).exp_m1() / c)
}

/// A coefficient that may scale with `N`: `coef * N^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "CoefficientRepr", into = "CoefficientRepr")]
pub struct Coefficient {
    pub coef: f64,
    pub exponent: f64,
}

impl Coefficient {
    pub fn constant(v: f64) -> Self {
        Self {
            coef: v,
            exponent: 0.0,
        }
    }

    pub fn power(coef: f64, exponent: f64) -> Self {
        Self { coef, exponent }
    }

    pub fn at(&self, n: usize) -> f64 {
        if self.exponent == 0.0 {
            self.coef
        } else {
            self.coef * (n as f64).powf(self.exponent)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CoefficientRepr {
    Constant(f64),
    #[serde(rename_all = "kebab-case")]
    Power {
        coef: f64,
        exponent: f64,
    },
}

impl From<CoefficientRepr> for Coefficient {
    fn from(r: CoefficientRepr) -> Self {
        match r {
            CoefficientRepr::Constant(v) => Self::constant(v),
            CoefficientRepr::Power { coef, exponent } => Self::power(coef, exponent),
        }
    }
}

impl From<Coefficient> for CoefficientRepr {
    fn from(c: Coefficient) -> Self {
        if c.exponent == 0.0 {
            Self::Constant(c.coef)
        } else {
            Self::Power {
                coef: c.coef,
                exponent: c.exponent,
            }
        }
    }
}

/// How `t(N)` depends on `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeScale {
    /// `a * N^p`.
    Power { a: f64, p: f64 },
    /// `c N^2 / (kappa rate)`, so that `alpha_N = c` exactly.
    Critical { c: f64 },
    /// A fixed horizon.
    Explicit { t: f64 },
}

impl TimeScale {
    /// The regime the descriptor belongs to by its form alone, if any.
    pub fn implied_regime(&self, kappa: f64, rate: f64) -> Option<(Regime, Option<f64>)> {
        match *self {
            Self::Power { p, .. } if p < 2.0 => Some((Regime::I, None)),
            Self::Power { p, .. } if p > 2.0 => Some((Regime::III, None)),
            Self::Power { a, .. } => Some((Regime::II, Some(kappa * rate * a))),
            Self::Critical { c } => Some((Regime::II, Some(c))),
            Self::Explicit { .. } => None,
        }
    }
}

impl fmt::Display for TimeScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Power { a, p } => write!(f, "{a}*N^{p}"),
            Self::Critical { c } => write!(f, "{c}*N^2/(kappa*rate)"),
            Self::Explicit { t } => write!(f, "{t}"),
        }
    }
}

/// Epoch intensity entering `alpha_N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpochRate {
    /// Poisson flow with intensity `delta_N`.
    Markov { delta: f64 },
    /// Renewal epochs with mean interval `mu_N`; enters as `1/mu_N`.
    Renewal { mean: f64 },
}

impl EpochRate {
    pub fn rate(&self) -> f64 {
        match *self {
            Self::Markov { delta } => delta,
            Self::Renewal { mean } => 1.0 / mean,
        }
    }

    pub fn is_renewal(&self) -> bool {
        matches!(self, Self::Renewal { .. })
    }
}

/// Everything needed to place one `(N, t(N))` point in the regime table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeParams {
    pub n: usize,
    pub scale: TimeScale,
    pub sigma: f64,
    pub epochs: EpochRate,
    pub kappa: f64,
}

impl RegimeParams {
    pub fn t_of_n(&self) -> f64 {
        let n = self.n as f64;
        match self.scale {
            TimeScale::Power { a, p } => a * n.powf(p),
            TimeScale::Critical { c } => c * n * n / (self.kappa * self.epochs.rate()),
            TimeScale::Explicit { t } => t,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("N = {} must be >= 2", self.n)));
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("rate", self.epochs.rate()),
            ("kappa", self.kappa),
            ("t(N)", self.t_of_n()),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::OutOfRange {
                    name,
                    value: v,
                    reason: "must be finite and > 0",
                });
            }
        }
        Ok(())
    }
}

/// `alpha_N = kappa * rate * t(N) / N^2`.
pub fn alpha_n(params: &RegimeParams) -> f64 {
    let n = params.n as f64;
    params.kappa * params.epochs.rate() * params.t_of_n() / (n * n)
}

/// The three time stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Initial desynchronization, `alpha_N -> 0`.
    I,
    /// Critical slowdown, `alpha_N -> c > 0`.
    II,
    /// Final stabilization, `alpha_N -> inf`.
    III,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::I => "I",
            Self::II => "II",
            Self::III => "III",
        })
    }
}

/// Asymptotic prediction for `R_N(t(N))`. For regime II, `c` defaults to the
/// point's own `alpha_N`.
pub fn predicted_asymptote(params: &RegimeParams, regime: Regime, c: Option<f64>) -> Result<f64> {
    params.validate()?;
    if let Some((implied, _)) = params
        .scale
        .implied_regime(params.kappa, params.epochs.rate())
    {
        if implied != regime {
            return Err(Error::RegimeMismatch(format!(
                "time scale {} belongs to regime {implied}, not {regime}",
                params.scale
            )));
        }
    }
    let s2 = params.sigma * params.sigma;
    let t = params.t_of_n();
    let n = params.n as f64;
    Ok(match regime {
        Regime::I => s2 * t,
        Regime::II => slowdown_factor(c.unwrap_or_else(|| alpha_n(params)))? * s2 * t,
        Regime::III => s2 * n * n / (params.kappa * params.epochs.rate()),
    })
}

/// Outcome of [`regime_classify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Classification {
    I,
    II { c: f64 },
    III,
    Indeterminate,
}

impl Classification {
    pub fn regime(&self) -> Option<(Regime, Option<f64>)> {
        match *self {
            Self::I => Some((Regime::I, None)),
            Self::II { c } => Some((Regime::II, Some(c))),
            Self::III => Some((Regime::III, None)),
            Self::Indeterminate => None,
        }
    }
}

/// Relative change of `alpha_N` between consecutive points below which the
/// trend counts as flat.
pub const FLAT_TREND: f64 = 1e-3;

/// Classifies a time scale by the trend of `alpha_N` over the last three
/// (ascending) values of `ns`. Flat -> II with `c` the last `alpha_N`;
/// strictly falling -> I; strictly rising -> III; anything else (or fewer
/// than three points) -> indeterminate.
pub fn regime_classify(params_at: impl Fn(usize) -> RegimeParams, ns: &[usize]) -> Classification {
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Classification::Indeterminate;
    }
    let a: Vec<f64> = ns[ns.len() - 3..]
        .iter()
        .map(|&n| alpha_n(&params_at(n)))
        .collect();
    if a.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Classification::Indeterminate;
    }
    let r1 = a[1] / a[0] - 1.0;
    let r2 = a[2] / a[1] - 1.0;
    if r1.abs() <= FLAT_TREND && r2.abs() <= FLAT_TREND {
        Classification::II { c: a[2] }
    } else if r1 < -FLAT_TREND && r2 < -FLAT_TREND {
        Classification::I
    } else if r1 > FLAT_TREND && r2 > FLAT_TREND {
        Classification::III
    } else {
        Classification::Indeterminate
    }
}

/// How epochs scale along a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum EpochPlan {
    /// Poisson epochs with intensity `delta_N`.
    Markov { delta: Coefficient },
    /// Renewal epochs with the same interval law at every `N`.
    Renewal { spec: RenewalSpec },
}

/// One row of a sweep plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub scale: TimeScale,
    /// Forces the regime instead of classifying the scale's trend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
}

/// Acceptance tolerances for sweep rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepTolerances {
    /// Regime I: `|R / (sigma^2 t) - 1|`.
    pub regime_i: f64,
    /// Regime II: `|R / (sigma^2 t) - f(c)|`.
    pub regime_ii: f64,
    /// Regime III: relative gap allowed is `regime_iii_over_n / N`.
    pub regime_iii_over_n: f64,
    /// Monte Carlo rows against the exact Markov value: standard errors.
    pub mc_sigmas: f64,
    /// Renewal rows: relative gap to the conjectured target.
    pub renewal_relative: f64,
}

impl Default for SweepTolerances {
    fn default() -> Self {
        Self {
            regime_i: 1e-3,
            regime_ii: 1e-3,
            regime_iii_over_n: 2.0,
            mc_sigmas: 3.0,
            renewal_relative: 0.10,
        }
    }
}

/// Monte Carlo settings for sweeps that simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSettings {
    pub replicas: usize,
    pub base_seed: u64,
    pub workers: Option<usize>,
    pub max_epochs: Option<u64>,
    pub initial: InitialCondition,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepMode {
    ClosedForm,
    MonteCarlo(MonteCarloSettings),
}

/// A regime sweep: one model scaled along `rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub sigma: Coefficient,
    pub epochs: EpochPlan,
    pub signature: InteractionSignature,
    /// `R_N(0)` for closed-form rows. Monte Carlo rows use the initial law.
    pub r0: f64,
    pub rows: Vec<SweepRow>,
    pub mode: SweepMode,
    pub tolerances: SweepTolerances,
}

impl SweepPlan {
    pub fn params(&self, n: usize, scale: TimeScale) -> RegimeParams {
        RegimeParams {
            n,
            scale,
            sigma: self.sigma.at(n),
            epochs: match &self.epochs {
                EpochPlan::Markov { delta } => EpochRate::Markov { delta: delta.at(n) },
                EpochPlan::Renewal { spec } => EpochRate::Renewal { mean: spec.mean() },
            },
            kappa: self.signature.kappa(),
        }
    }

    fn regime_for(&self, row: &SweepRow, params: &RegimeParams) -> Result<(Regime, Option<f64>)> {
        if let Some(r) = row.regime {
            let c = (r == Regime::II).then(|| alpha_n(params));
            return Ok((r, c));
        }
        let ns: Vec<usize> = self
            .rows
            .iter()
            .filter(|o| o.scale == row.scale)
            .map(|o| o.n)
            .collect();
        if let Some(found) = regime_classify(|n| self.params(n, row.scale), &ns).regime() {
            return Ok(found);
        }
        params
            .scale
            .implied_regime(params.kappa, params.epochs.rate())
            .ok_or_else(|| {
                Error::RegimeMismatch(format!(
                    "cannot tell the regime of t(N) = {} at N = {}; label the row",
                    row.scale, row.n
                ))
            })
    }
}

/// One evaluated sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub n: usize,
    pub t_of_n: f64,
    pub alpha_n: f64,
    pub regime: Regime,
    /// Limiting `alpha_N` used for regime II.
    pub c: Option<f64>,
    /// Asymptotic prediction from the regime table.
    pub predicted: f64,
    /// Finite-`N` target: the closed form for Poisson epochs, the closed form
    /// with `delta = 1/mu` for renewal epochs.
    pub exact: f64,
    pub observed: f64,
    pub stderr: Option<f64>,
    pub ratio: f64,
    pub pass: bool,
    /// `k_N = 0`: every jump collapses the whole configuration.
    pub degenerate: bool,
}

/// Rows of a sweep in plan order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub rows: Vec<ReportRow>,
    /// Renewal-epoch rows test a conjecture, not a theorem.
    pub empirical: bool,
    /// The epoch guard stopped a Monte Carlo row; `rows` holds the rows
    /// completed before it.
    pub truncated: bool,
}

impl RegimeReport {
    pub fn all_pass(&self) -> bool {
        !self.truncated && self.rows.iter().all(|r| r.pass)
    }

    pub fn label(&self) -> &'static str {
        if self.empirical {
            "conjecture (empirical)"
        } else {
            "theorem"
        }
    }
}

/// Evaluates every row of `plan`.
pub fn sweep(plan: &SweepPlan) -> Result<RegimeReport> {
    let empirical = matches!(plan.epochs, EpochPlan::Renewal { .. });
    if empirical && plan.mode == SweepMode::ClosedForm {
        return Err(Error::Config(
            "renewal epochs have no closed form; use the monte-carlo mode".into(),
        ));
    }
    let tol = &plan.tolerances;
    let mut rows = Vec::with_capacity(plan.rows.len());
    for row in &plan.rows {
        let params = plan.params(row.n, row.scale);
        params.validate()?;
        let (regime, c) = plan.regime_for(row, &params)?;
        let t = params.t_of_n();
        let alpha = alpha_n(&params);
        let predicted = predicted_asymptote(&params, regime, c)?;
        let r0 = match &plan.mode {
            SweepMode::ClosedForm => plan.r0,
            SweepMode::MonteCarlo(mc) => mc.initial.expected_variance(),
        };
        let model = MarkovModel::new(row.n, params.sigma, params.epochs.rate(), params.kappa, r0)?;
        let exact = model.r(t);
        let degenerate = crate::model::is_total_collapse(row.n, params.kappa);

        let (observed, stderr) = match &plan.mode {
            SweepMode::ClosedForm => (exact, None),
            SweepMode::MonteCarlo(mc) => {
                let config = SimulationConfig {
                    n: row.n,
                    sigma: params.sigma,
                    epochs: Some(match &plan.epochs {
                        EpochPlan::Markov { .. } => RenewalSpec::Exponential {
                            rate: params.epochs.rate(),
                        },
                        EpochPlan::Renewal { spec } => spec.clone(),
                    }),
                    signature: plan.signature.clone(),
                    initial: mc.initial.clone(),
                    query_times: vec![t],
                    replicas: mc.replicas,
                    base_seed: mc.base_seed,
                    max_epochs: mc.max_epochs,
                };
                let est = estimate_r(&config, mc.workers)?;
                match est.points.first() {
                    Some(point) => (point.mean, Some(point.stderr)),
                    None => {
                        return Ok(RegimeReport {
                            rows,
                            empirical,
                            truncated: true,
                        })
                    }
                }
            }
        };
        let ratio = observed / predicted;
        let s2t = params.sigma * params.sigma * t;
        let pass = match (&plan.mode, empirical) {
            (SweepMode::ClosedForm, _) => match regime {
                Regime::I => (observed / s2t - 1.0).abs() <= tol.regime_i,
                Regime::II => {
                    (observed / s2t - slowdown_factor(c.unwrap_or(alpha))?).abs() <= tol.regime_ii
                }
                Regime::III => (ratio - 1.0).abs() <= tol.regime_iii_over_n / row.n as f64,
            },
            (SweepMode::MonteCarlo(_), false) => {
                (observed - exact).abs() <= tol.mc_sigmas * stderr.unwrap_or(0.0)
            }
            (SweepMode::MonteCarlo(_), true) => {
                (observed / exact - 1.0).abs() <= tol.renewal_relative
            }
        };
        rows.push(ReportRow {
            n: row.n,
            t_of_n: t,
            alpha_n: alpha,
            regime,
            c,
            predicted,
            exact,
            observed,
            stderr,
            ratio,
            pass: pass && ratio.is_finite() && ratio > 0.0,
            degenerate,
        });
    }
    Ok(RegimeReport {
        rows,
        empirical,
        truncated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn markov_params(n: usize, scale: TimeScale) -> RegimeParams {
        RegimeParams {
            n,
            scale,
            sigma: 1.0,
            epochs: EpochRate::Markov { delta: 1.0 },
            kappa: 2.0,
        }
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_r(0.0, 10, 1.0, 1.0, 2.0, 3.5).unwrap(), 3.5);
        let expected = 45.0 * (1.0 - (-10.0f64 / 45.0).exp());
        let r = closed_form_r(10.0, 10, 1.0, 1.0, 2.0, 0.0).unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 8.966_817).abs() < 1e-6, "{r}");
        let m = MarkovModel::new(10, 1.0, 1.0, 2.0, 0.0).unwrap();
        let far = m.r(1e6 * m.relaxation_scale() / m.delta);
        assert!((far / 45.0 - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn closed_form_domain_errors() {
        assert!(closed_form_r(1.0, 1, 1.0, 1.0, 2.0, 0.0).is_err());
        assert!(closed_form_r(1.0, 10, 0.0, 1.0, 2.0, 0.0).is_err());
        assert!(closed_form_r(1.0, 10, 1.0, -1.0, 2.0, 0.0).is_err());
        assert!(closed_form_r(1.0, 10, 1.0, 1.0, 91.0, 0.0).is_err());
        assert!(closed_form_r(1.0, 10, 1.0, 1.0, 2.0, -1.0).is_err());
        assert!(closed_form_r(-1.0, 10, 1.0, 1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn tiny_times_do_not_cancel() {
        // R(t) ~ sigma^2 t for t << l_N / delta.
        let m = MarkovModel::new(10_000, 1.0, 1.0, 2.0, 0.0).unwrap();
        let t = 1e-9;
        assert!((m.r(t) / t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ode_examples() {
        let m = MarkovModel::new(7, 1.3, 0.8, 2.0, 0.0).unwrap();
        assert!(m.ode_residual(2.0, 1e-4).abs() <= 1e-6 * m.sigma * m.sigma);
        let slope0 = (m.r(1e-6) - m.r(0.0)) / 1e-6;
        assert!((slope0 - m.sigma * m.sigma).abs() < 1e-6);
        let st = MarkovModel {
            r0: m.stationary(),
            ..m
        };
        let slope = (st.r(5.0 + 1e-4) - st.r(5.0 - 1e-4)) / 2e-4;
        assert!(slope.abs() < 1e-9, "{slope}");
    }

    #[test]
    fn slowdown_examples() {
        assert_eq!(slowdown_factor(0.0).unwrap(), 1.0);
        assert!((slowdown_factor(1e-12).unwrap() - 1.0).abs() < 1e-12);
        assert!((slowdown_factor(1.0).unwrap() - 0.632_120_558_828_557_7).abs() < 1e-15);
        assert!((slowdown_factor(100.0).unwrap() - 0.01).abs() < 1e-15);
        assert!(slowdown_factor(-0.1).is_err());
    }

    #[test]
    fn alpha_examples() {
        for n in [10, 100, 1000] {
            let nf = n as f64;
            let p = markov_params(n, TimeScale::Explicit { t: nf * nf / 2.0 });
            assert!((alpha_n(&p) - 1.0).abs() < 1e-12);
            let p = markov_params(n, TimeScale::Power { a: 1.0, p: 1.0 });
            assert!((alpha_n(&p) - 2.0 / nf).abs() < 1e-15);
            let p = RegimeParams {
                epochs: EpochRate::Renewal { mean: 2.0 },
                ..markov_params(n, TimeScale::Power { a: 1.0, p: 3.0 })
            };
            assert!((alpha_n(&p) - nf).abs() < 1e-9 * nf);
        }
    }

    #[test]
    fn asymptote_examples() {
        let p = markov_params(1000, TimeScale::Power { a: 1.0, p: 1.0 });
        assert_eq!(predicted_asymptote(&p, Regime::I, None).unwrap(), 1000.0);
        let p = markov_params(1000, TimeScale::Critical { c: 1.0 });
        let t = p.t_of_n();
        assert!((t - 1000.0 * 1000.0 / 2.0).abs() < 1e-6);
        let pred = predicted_asymptote(&p, Regime::II, None).unwrap();
        assert!((pred / t - 0.632_12).abs() < 1e-5);
        let p = markov_params(100, TimeScale::Power { a: 1.0, p: 3.0 });
        assert!((predicted_asymptote(&p, Regime::III, None).unwrap() - 5000.0).abs() < 1e-9);
        assert!(matches!(
            predicted_asymptote(&p, Regime::I, None),
            Err(Error::RegimeMismatch(_))
        ));
        let p = markov_params(100, TimeScale::Critical { c: 2.0 });
        assert!(predicted_asymptote(&p, Regime::III, None).is_err());
    }

    #[test]
    fn renewal_asymptote_uses_mean() {
        let p = RegimeParams {
            n: 100,
            scale: TimeScale::Power { a: 1.0, p: 3.0 },
            sigma: 1.0,
            epochs: EpochRate::Renewal { mean: 3.0 },
            kappa: 2.0,
        };
        assert!((predicted_asymptote(&p, Regime::III, None).unwrap() - 3.0 * 5000.0).abs() < 1e-9);
    }

    #[test]
    fn classification_examples() {
        let ns = [100, 1_000, 10_000];
        let at = |scale| move |n| markov_params(n, scale);
        assert_eq!(
            regime_classify(at(TimeScale::Power { a: 1.0, p: 0.5 }), &ns),
            Classification::I
        );
        match regime_classify(at(TimeScale::Critical { c: 3.0 }), &ns) {
            Classification::II { c } => assert!((c - 3.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            regime_classify(at(TimeScale::Power { a: 1.0, p: 2.5 }), &ns),
            Classification::III
        );
        assert_eq!(
            regime_classify(at(TimeScale::Power { a: 1.0, p: 2.5 }), &[100, 1000]),
            Classification::Indeterminate
        );
        // Non-monotone: fixed horizon looks I between the first two points,
        // but we feed alternating explicit times through a closure.
        let zigzag = |n: usize| {
            let t = if n == 1000 { 1e9 } else { 1.0 };
            markov_params(n, TimeScale::Explicit { t })
        };
        assert_eq!(regime_classify(zigzag, &ns), Classification::Indeterminate);
    }

    #[test]
    fn closed_form_sweep_regime_ii() {
        let plan = SweepPlan {
            sigma: Coefficient::constant(1.0),
            epochs: EpochPlan::Markov {
                delta: Coefficient::constant(1.0),
            },
            signature: InteractionSignature::pairwise(),
            r0: 0.0,
            rows: [100, 1_000, 10_000]
                .into_iter()
                .map(|n| SweepRow {
                    n,
                    scale: TimeScale::Critical { c: 1.0 },
                    regime: None,
                })
                .collect(),
            mode: SweepMode::ClosedForm,
            tolerances: SweepTolerances::default(),
        };
        let report = sweep(&plan).unwrap();
        assert!(!report.empirical);
        let last = report.rows.last().unwrap();
        assert_eq!(last.regime, Regime::II);
        assert!((last.observed / last.t_of_n - 0.632_12).abs() <= 1e-3);
        assert!(last.pass);
    }

    #[test]
    fn renewal_sweep_needs_monte_carlo() {
        let plan = SweepPlan {
            sigma: Coefficient::constant(1.0),
            epochs: EpochPlan::Renewal {
                spec: RenewalSpec::Uniform { a: 0.5, b: 1.5 },
            },
            signature: InteractionSignature::pairwise(),
            r0: 0.0,
            rows: vec![SweepRow {
                n: 10,
                scale: TimeScale::Power { a: 1.0, p: 3.0 },
                regime: None,
            }],
            mode: SweepMode::ClosedForm,
            tolerances: SweepTolerances::default(),
        };
        assert!(sweep(&plan).is_err());
    }

    #[test]
    fn unlabeled_explicit_row_is_an_error() {
        let plan = SweepPlan {
            sigma: Coefficient::constant(1.0),
            epochs: EpochPlan::Markov {
                delta: Coefficient::constant(1.0),
            },
            signature: InteractionSignature::pairwise(),
            r0: 0.0,
            rows: vec![SweepRow {
                n: 10,
                scale: TimeScale::Explicit { t: 5.0 },
                regime: None,
            }],
            mode: SweepMode::ClosedForm,
            tolerances: SweepTolerances::default(),
        };
        assert!(matches!(sweep(&plan), Err(Error::RegimeMismatch(_))));
    }

    #[test]
    fn coefficient_scaling() {
        let c = Coefficient::power(1.0, -0.25);
        assert!((c.at(10_000) - 0.1).abs() < 1e-15);
        assert_eq!(Coefficient::constant(2.0).at(123), 2.0);
    }

    #[test]
    fn zscore_edge_cases() {
        let e = VarianceEstimate {
            t: 1.0,
            mean: 2.0,
            stderr: 0.0,
            replicas: 2,
        };
        assert_eq!(e.zscore(2.0), 0.0);
        assert_eq!(e.zscore(1.0), f64::INFINITY);
        let e = VarianceEstimate { stderr: 0.5, ..e };
        assert_eq!(e.zscore(1.0), 2.0);
        assert!(e.covers(1.0, 3.0));
        assert!(!e.covers(0.0, 3.0));
    }

    #[test]
    fn epoch_guard_truncates_monte_carlo_sweep() {
        let rows = [5.0, 5_000.0].map(|t| SweepRow {
            n: 10,
            scale: TimeScale::Explicit { t },
            regime: Some(Regime::III),
        });
        let plan = SweepPlan {
            sigma: Coefficient::constant(1.0),
            epochs: EpochPlan::Markov {
                delta: Coefficient::constant(1.0),
            },
            signature: InteractionSignature::pairwise(),
            r0: 0.0,
            rows: rows.to_vec(),
            mode: SweepMode::MonteCarlo(MonteCarloSettings {
                replicas: 50,
                base_seed: 3,
                workers: Some(1),
                max_epochs: Some(100),
                initial: InitialCondition::Zero,
            }),
            tolerances: SweepTolerances::default(),
        };
        let report = sweep(&plan).unwrap();
        assert!(report.truncated);
        assert_eq!(report.rows.len(), 1);
        assert!(!report.all_pass());
    }
}
