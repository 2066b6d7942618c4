//! The TOML experiment file, flag overrides and validation into run plans.
//!
//! Validation errors point at the line of the offending key.

use std::fmt;
use std::ops::Range;

use brownsync::{
    Coefficient, EpochPlan, InitialCondition, InteractionSignature, MonteCarloSettings,
    RenewalSpec, SimulationConfig, SweepMode, SweepPlan, SweepRow, SweepTolerances,
};
use serde::{Deserialize, Serialize};
use toml::{Spanned, Table, Value};

/// Per-replica epoch guard when neither the file nor the flags set one.
pub const DEFAULT_MAX_EPOCHS: u64 = 100_000_000;

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

/// Seeds are u64 but TOML integers are i64, so large seeds are written as
/// strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seed(pub u64);

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(Seed(v)),
            Repr::Str(s) => s.parse().map(Seed).map_err(serde::de::Error::custom),
        }
    }
}

impl Serialize for Seed {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match i64::try_from(self.0) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&self.0.to_string()),
        }
    }
}

/// The experiment file as written.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(rename = "N")]
    pub n: Option<Spanned<usize>>,
    pub sigma: Option<Spanned<Coefficient>>,
    pub epochs: Option<Spanned<Table>>,
    pub signature: Option<Spanned<Vec<usize>>>,
    /// Signatures tabulated by `kappa`.
    pub signatures: Option<Spanned<Vec<Vec<usize>>>>,
    pub t: Option<Spanned<Vec<f64>>>,
    pub r0: Option<Spanned<f64>>,
    pub initial: Option<Spanned<InitialCondition>>,
    pub replicas: Option<Spanned<usize>>,
    pub seed: Option<Seed>,
    pub max_epochs: Option<Spanned<u64>>,
    pub workers: Option<usize>,
    /// Random configurations per row of `kappa`.
    pub configurations: Option<Spanned<usize>>,
    /// Interval laws compared by `renewal-check`.
    pub laws: Option<Spanned<Vec<Table>>>,
    /// Relative tolerance of `renewal-check`.
    pub tolerance: Option<Spanned<f64>>,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub mode: Spanned<String>,
    pub rows: Spanned<Vec<SweepRow>>,
    #[serde(default)]
    pub tolerances: SweepTolerances,
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub workers: Option<usize>,
    pub max_epochs: Option<u64>,
}

/// The normalized effective configuration, written next to every output. It
/// is itself a valid experiment file.
#[derive(Debug, Default, Serialize)]
pub struct Echo {
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Coefficient>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signature: Option<InteractionSignature>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signatures: Option<Vec<InteractionSignature>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<Seed>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub configurations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<Table>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialCondition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub laws: Option<Vec<RenewalSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepEcho>,
}

#[derive(Debug, Serialize)]
pub struct SweepEcho {
    pub mode: &'static str,
    pub tolerances: SweepTolerances,
    pub rows: Vec<SweepRow>,
}

impl Echo {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("echo is always representable")
    }
}

pub struct SimulatePlan {
    pub config: SimulationConfig,
    pub workers: Option<usize>,
}

pub struct KappaPlan {
    pub n: usize,
    pub signatures: Vec<InteractionSignature>,
    pub configurations: usize,
    pub seed: u64,
}

pub struct OraclePlan {
    pub n: usize,
    pub sigma: f64,
    pub delta: f64,
    pub signature: InteractionSignature,
    pub r0: f64,
    pub t: Vec<f64>,
}

pub struct RenewalPlan {
    pub base: SimulationConfig,
    pub laws: Vec<RenewalSpec>,
    pub tolerance: f64,
    pub workers: Option<usize>,
}

/// Parsed file plus the source text, for line lookups.
pub struct Loaded {
    src: String,
    pub file: FileConfig,
    over: Overrides,
}

impl Loaded {
    pub fn parse(src: &str, over: Overrides) -> Result<Self> {
        let file: FileConfig = toml::from_str(src).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of(src, s.start)),
            message: e.message().trim_end().to_string(),
        })?;
        Ok(Self {
            src: src.to_string(),
            file,
            over,
        })
    }

    fn err<T>(&self, span: Range<usize>, message: impl Into<String>) -> Result<T> {
        Err(ConfigError {
            line: Some(line_of(&self.src, span.start)),
            message: message.into(),
        })
    }

    fn missing<T>(key: &str, command: &str) -> Result<T> {
        Err(ConfigError {
            line: None,
            message: format!("missing key `{key}` required by `{command}`"),
        })
    }

    fn n(&self, command: &str) -> Result<usize> {
        let Some(n) = &self.file.n else {
            return Self::missing("N", command);
        };
        if *n.get_ref() < 2 {
            return self.err(n.span(), format!("N = {} violates N >= 2", n.get_ref()));
        }
        Ok(*n.get_ref())
    }

    fn sigma(&self, command: &str, allow_zero: bool) -> Result<f64> {
        let Some(s) = &self.file.sigma else {
            return Self::missing("sigma", command);
        };
        let c = s.get_ref();
        if c.exponent != 0.0 {
            return self.err(s.span(), format!("`{command}` needs a constant sigma"));
        }
        let ok = c.coef.is_finite() && (c.coef > 0.0 || (allow_zero && c.coef == 0.0));
        if !ok {
            let bound = if allow_zero { ">= 0" } else { "> 0" };
            return self.err(
                s.span(),
                format!("sigma = {} violates sigma {bound}", c.coef),
            );
        }
        Ok(c.coef)
    }

    fn signature_at(
        &self,
        parts: &[usize],
        span: Range<usize>,
        n: usize,
    ) -> Result<InteractionSignature> {
        let sig = InteractionSignature::new(parts.to_vec())
            .or_else(|e| self.err(span.clone(), e.to_string()))?;
        if sig.k() > n {
            return self.err(
                span,
                format!(
                    "signature {sig} needs k = {} particles but N = {n}",
                    sig.k()
                ),
            );
        }
        Ok(sig)
    }

    fn signature(&self, n: usize) -> Result<InteractionSignature> {
        match &self.file.signature {
            Some(s) => self.signature_at(s.get_ref(), s.span(), n),
            None => Ok(InteractionSignature::pairwise()),
        }
    }

    fn times(&self, command: &str) -> Result<Vec<f64>> {
        let Some(t) = &self.file.t else {
            return Self::missing("t", command);
        };
        let ts = t.get_ref();
        if ts.is_empty() {
            return self.err(t.span(), "t must list at least one time");
        }
        if let Some(bad) = ts.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return self.err(t.span(), format!("t = {bad} violates t >= 0"));
        }
        if ts.windows(2).any(|w| w[1] < w[0]) {
            return self.err(t.span(), "t must be sorted ascending");
        }
        Ok(ts.clone())
    }

    fn seed(&self, command: &str) -> Result<u64> {
        match (self.over.seed, self.file.seed) {
            (Some(s), _) | (None, Some(Seed(s))) => Ok(s),
            (None, None) => Err(ConfigError {
                line: None,
                message: format!(
                    "`{command}` is stochastic and needs a seed (--seed or `seed` in the config)"
                ),
            }),
        }
    }

    fn replicas(&self, command: &str) -> Result<usize> {
        let r = match (self.over.replicas, &self.file.replicas) {
            (Some(r), _) => r,
            (None, Some(r)) => {
                if *r.get_ref() < 2 {
                    return self.err(r.span(), "replicas must be >= 2");
                }
                *r.get_ref()
            }
            (None, None) => return Self::missing("replicas", command),
        };
        if r < 2 {
            return Err(ConfigError {
                line: None,
                message: format!("--replicas {r}: need at least 2"),
            });
        }
        Ok(r)
    }

    fn max_epochs(&self) -> u64 {
        self.over
            .max_epochs
            .or(self.file.max_epochs.as_ref().map(|m| *m.get_ref()))
            .unwrap_or(DEFAULT_MAX_EPOCHS)
    }

    fn workers(&self) -> Option<usize> {
        self.over.workers.or(self.file.workers)
    }

    fn initial(&self, n: usize) -> Result<InitialCondition> {
        match &self.file.initial {
            Some(i) => {
                i.get_ref()
                    .validate(n)
                    .or_else(|e| self.err(i.span(), e.to_string()))?;
                Ok(i.get_ref().clone())
            }
            None => Ok(InitialCondition::Zero),
        }
    }

    fn renewal_spec(&self, table: &Table, span: Range<usize>) -> Result<RenewalSpec> {
        let spec: RenewalSpec =
            Value::Table(table.clone())
                .try_into()
                .or_else(|e: toml::de::Error| {
                    self.err(span.clone(), format!("epochs: {}", e.message().trim_end()))
                })?;
        spec.validate().or_else(|e| self.err(span, e.to_string()))?;
        Ok(spec)
    }

    fn law<'a>(&self, table: &'a Table, span: Range<usize>) -> Result<&'a str> {
        match table.get("law") {
            Some(Value::String(s)) => Ok(s),
            _ => self.err(span, "epochs need a `law` key"),
        }
    }

    /// `None` for `law = "none"`: synchronization switched off.
    fn simulation_epochs(&self, command: &str) -> Result<Option<RenewalSpec>> {
        let Some(e) = &self.file.epochs else {
            return Self::missing("epochs", command);
        };
        if self.law(e.get_ref(), e.span())? == "none" {
            if e.get_ref().len() > 1 {
                return self.err(e.span(), "law = \"none\" takes no parameters");
            }
            return Ok(None);
        }
        self.renewal_spec(e.get_ref(), e.span()).map(Some)
    }

    pub fn simulate(&self) -> Result<(SimulatePlan, Echo)> {
        let cmd = "simulate";
        let n = self.n(cmd)?;
        let config = SimulationConfig {
            n,
            sigma: self.sigma(cmd, true)?,
            epochs: self.simulation_epochs(cmd)?,
            signature: self.signature(n)?,
            initial: self.initial(n)?,
            query_times: self.times(cmd)?,
            replicas: self.replicas(cmd)?,
            base_seed: self.seed(cmd)?,
            max_epochs: Some(self.max_epochs()),
        };
        let echo = Echo {
            n: Some(n),
            sigma: Some(Coefficient::constant(config.sigma)),
            signature: Some(config.signature.clone()),
            t: Some(config.query_times.clone()),
            replicas: Some(config.replicas),
            seed: Some(Seed(config.base_seed)),
            max_epochs: config.max_epochs,
            epochs: Some(epochs_table(config.epochs.as_ref())),
            initial: Some(config.initial.clone()),
            ..Echo::default()
        };
        Ok((
            SimulatePlan {
                config,
                workers: self.workers(),
            },
            echo,
        ))
    }

    pub fn kappa(&self) -> Result<(KappaPlan, Echo)> {
        let cmd = "kappa";
        let n = self.n(cmd)?;
        let signatures = match (&self.file.signatures, &self.file.signature) {
            (Some(list), _) => {
                if list.get_ref().is_empty() {
                    return self.err(list.span(), "signatures must not be empty");
                }
                list.get_ref()
                    .iter()
                    .map(|p| self.signature_at(p, list.span(), n))
                    .collect::<Result<Vec<_>>>()?
            }
            (None, Some(_)) => vec![self.signature(n)?],
            (None, None) => return Self::missing("signatures", cmd),
        };
        let configurations = match &self.file.configurations {
            Some(c) if *c.get_ref() == 0 => {
                return self.err(c.span(), "configurations must be >= 1")
            }
            Some(c) => *c.get_ref(),
            None => 20,
        };
        let plan = KappaPlan {
            n,
            signatures,
            configurations,
            seed: self.seed(cmd)?,
        };
        let echo = Echo {
            n: Some(n),
            signatures: Some(plan.signatures.clone()),
            configurations: Some(configurations),
            seed: Some(Seed(plan.seed)),
            ..Echo::default()
        };
        Ok((plan, echo))
    }

    pub fn oracle(&self) -> Result<(OraclePlan, Echo)> {
        let cmd = "oracle";
        let n = self.n(cmd)?;
        let Some(e) = &self.file.epochs else {
            return Self::missing("epochs", cmd);
        };
        let delta = match self.renewal_spec(e.get_ref(), e.span())? {
            RenewalSpec::Exponential { rate } => rate,
            other => {
                return self.err(
                    e.span(),
                    format!(
                        "the closed form needs exponential epochs, got {}",
                        other.name()
                    ),
                )
            }
        };
        let r0 = match &self.file.r0 {
            Some(r) if !(r.get_ref().is_finite() && *r.get_ref() >= 0.0) => {
                return self.err(r.span(), format!("r0 = {} violates R0 >= 0", r.get_ref()))
            }
            Some(r) => *r.get_ref(),
            None => 0.0,
        };
        let plan = OraclePlan {
            n,
            sigma: self.sigma(cmd, false)?,
            delta,
            signature: self.signature(n)?,
            r0,
            t: self.times(cmd)?,
        };
        let echo = Echo {
            n: Some(n),
            sigma: Some(Coefficient::constant(plan.sigma)),
            signature: Some(plan.signature.clone()),
            t: Some(plan.t.clone()),
            r0: Some(r0),
            epochs: Some(epochs_table(Some(&RenewalSpec::Exponential {
                rate: delta,
            }))),
            ..Echo::default()
        };
        Ok((plan, echo))
    }

    pub fn renewal_check(&self) -> Result<(RenewalPlan, Echo)> {
        let cmd = "renewal-check";
        let n = self.n(cmd)?;
        let laws = match &self.file.laws {
            Some(l) if l.get_ref().is_empty() => {
                return self.err(l.span(), "laws must not be empty")
            }
            Some(l) => l
                .get_ref()
                .iter()
                .map(|t| self.renewal_spec(t, l.span()))
                .collect::<Result<Vec<_>>>()?,
            None => return Self::missing("laws", cmd),
        };
        let tolerance = match &self.file.tolerance {
            Some(t) if !(t.get_ref().is_finite() && *t.get_ref() > 0.0) => {
                return self.err(t.span(), "tolerance must be > 0")
            }
            Some(t) => *t.get_ref(),
            None => SweepTolerances::default().renewal_relative,
        };
        let base = SimulationConfig {
            n,
            sigma: self.sigma(cmd, false)?,
            epochs: None,
            signature: self.signature(n)?,
            initial: self.initial(n)?,
            query_times: self.times(cmd)?,
            replicas: self.replicas(cmd)?,
            base_seed: self.seed(cmd)?,
            max_epochs: Some(self.max_epochs()),
        };
        let echo = Echo {
            n: Some(n),
            sigma: Some(Coefficient::constant(base.sigma)),
            signature: Some(base.signature.clone()),
            t: Some(base.query_times.clone()),
            replicas: Some(base.replicas),
            seed: Some(Seed(base.base_seed)),
            max_epochs: base.max_epochs,
            tolerance: Some(tolerance),
            initial: Some(base.initial.clone()),
            laws: Some(laws.clone()),
            ..Echo::default()
        };
        Ok((
            RenewalPlan {
                base,
                laws,
                tolerance,
                workers: self.workers(),
            },
            echo,
        ))
    }

    pub fn sweep(&self) -> Result<(SweepPlan, Echo)> {
        let cmd = "sweep";
        let Some(section) = &self.file.sweep else {
            return Self::missing("sweep", cmd);
        };
        let Some(sigma) = &self.file.sigma else {
            return Self::missing("sigma", cmd);
        };
        if !(sigma.get_ref().coef.is_finite() && sigma.get_ref().coef > 0.0) {
            return self.err(sigma.span(), "sigma coefficient must be > 0");
        }
        let Some(e) = &self.file.epochs else {
            return Self::missing("epochs", cmd);
        };
        let epochs = match self.law(e.get_ref(), e.span())? {
            // The Markov rate may scale with N.
            "exponential" => {
                let mut rest = e.get_ref().clone();
                rest.remove("law");
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Rate {
                    rate: Coefficient,
                }
                let rate: Rate =
                    Value::Table(rest)
                        .try_into()
                        .or_else(|err: toml::de::Error| {
                            self.err(e.span(), format!("epochs: {}", err.message().trim_end()))
                        })?;
                if !(rate.rate.coef.is_finite() && rate.rate.coef > 0.0) {
                    return self.err(e.span(), "epoch rate must be > 0");
                }
                EpochPlan::Markov { delta: rate.rate }
            }
            "none" => return self.err(e.span(), "a sweep needs synchronization epochs"),
            _ => EpochPlan::Renewal {
                spec: self.renewal_spec(e.get_ref(), e.span())?,
            },
        };
        let rows = section.rows.get_ref();
        if rows.is_empty() {
            return self.err(section.rows.span(), "sweep.rows must not be empty");
        }
        let mut signature = InteractionSignature::pairwise();
        for row in rows {
            if row.n < 2 {
                return self.err(
                    section.rows.span(),
                    format!("row N = {} violates N >= 2", row.n),
                );
            }
            signature = self.signature(row.n)?;
        }
        let (mode, mode_name) = match section.mode.get_ref().as_str() {
            "closed-form" => (SweepMode::ClosedForm, "closed-form"),
            "monte-carlo" => {
                let n_min = rows.iter().map(|r| r.n).min().unwrap_or(2);
                (
                    SweepMode::MonteCarlo(MonteCarloSettings {
                        replicas: self.replicas(cmd)?,
                        base_seed: self.seed(cmd)?,
                        workers: self.workers(),
                        max_epochs: Some(self.max_epochs()),
                        initial: self.initial(n_min)?,
                    }),
                    "monte-carlo",
                )
            }
            other => {
                return self.err(
                    section.mode.span(),
                    format!("sweep.mode = {other:?}; expected \"closed-form\" or \"monte-carlo\""),
                )
            }
        };
        if let (SweepMode::MonteCarlo(mc), Some(i)) = (&mode, &self.file.initial) {
            for row in rows {
                mc.initial
                    .validate(row.n)
                    .or_else(|err| self.err(i.span(), err.to_string()))?;
            }
        }
        let r0 = match &self.file.r0 {
            Some(r) if !(r.get_ref().is_finite() && *r.get_ref() >= 0.0) => {
                return self.err(r.span(), format!("r0 = {} violates R0 >= 0", r.get_ref()))
            }
            Some(r) => *r.get_ref(),
            None => 0.0,
        };
        let plan = SweepPlan {
            sigma: *sigma.get_ref(),
            epochs,
            signature,
            r0,
            rows: rows.clone(),
            mode,
            tolerances: section.tolerances,
        };
        let mut echo = Echo {
            sigma: Some(plan.sigma),
            signature: Some(plan.signature.clone()),
            epochs: Some(match &plan.epochs {
                EpochPlan::Markov { delta } => {
                    let mut t = Table::new();
                    t.insert("law".into(), "exponential".into());
                    t.insert("rate".into(), Value::try_from(delta).expect("coefficient"));
                    t
                }
                EpochPlan::Renewal { spec } => epochs_table(Some(spec)),
            }),
            sweep: Some(SweepEcho {
                mode: mode_name,
                tolerances: plan.tolerances,
                rows: plan.rows.clone(),
            }),
            ..Echo::default()
        };
        match &plan.mode {
            SweepMode::ClosedForm => echo.r0 = Some(r0),
            SweepMode::MonteCarlo(mc) => {
                echo.replicas = Some(mc.replicas);
                echo.seed = Some(Seed(mc.base_seed));
                echo.max_epochs = mc.max_epochs;
                echo.initial = Some(mc.initial.clone());
            }
        }
        Ok((plan, echo))
    }
}

fn epochs_table(spec: Option<&RenewalSpec>) -> Table {
    match spec {
        Some(s) => match Value::try_from(s).expect("renewal spec") {
            Value::Table(t) => t,
            _ => unreachable!("renewal specs serialize as tables"),
        },
        None => {
            let mut t = Table::new();
            t.insert("law".into(), "none".into());
            t
        }
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}
