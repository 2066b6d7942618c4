use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brownsync::rng::keyed;
use brownsync::{
    estimate_r, kappa_analytic, kappa_enumerate, sweep, MarkovModel, ParticleConfiguration,
    SimulationConfig,
};
use clap::{Parser, Subcommand};
use rand::Rng;

mod config;

use config::{ConfigError, Echo, Loaded, Overrides};

/// Exit statuses.
const EXIT_FAILED_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;

#[derive(Parser)]
#[command(
    name = "brownsync",
    version,
    about = "Brownian particles with synchronizing jumps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// CSV destination; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Independent trajectories per estimate.
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Per-replica cap on synchronization epochs.
    #[arg(long, global = true)]
    max_epochs: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Monte Carlo estimate of E V(x(t)) with the closed form alongside.
    Simulate,
    /// Regime table along a sequence of N.
    Sweep,
    /// Enumerated versus analytic kappa for a list of signatures.
    Kappa,
    /// Closed form and ODE residual over a time grid.
    Oracle,
    /// Renewal epochs against the conjectured stationary level.
    RenewalCheck,
}

enum Failure {
    Config(String),
    Io(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<brownsync::Error> for Failure {
    fn from(e: brownsync::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

/// What a run found, beyond the CSV it wrote.
#[derive(Default)]
struct Status {
    failed_checks: bool,
    truncated: bool,
}

/// Round-trip exact: 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

type Sink = csv::Writer<Box<dyn Write>>;

fn open_sink(out: Option<&Path>) -> Result<Sink, Failure> {
    let w: Box<dyn Write> = match out {
        Some(p) => Box::new(io::BufWriter::new(
            File::create(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(w))
}

fn write_echo(echo: &Echo, out: Option<&Path>) -> Result<(), Failure> {
    let text = echo.to_toml();
    match out {
        Some(p) => {
            let mut name = p.as_os_str().to_owned();
            name.push(".config.toml");
            std::fs::write(&name, text)
                .map_err(|e| Failure::Io(format!("{}: {e}", Path::new(&name).display())))?;
        }
        None => eprint!("# effective config\n{text}"),
    }
    Ok(())
}

fn simulate(loaded: &Loaded, out: Option<&Path>) -> Result<Status, Failure> {
    let (plan, echo) = loaded.simulate()?;
    write_echo(&echo, out)?;
    let c = &plan.config;
    let est = estimate_r(c, plan.workers)?;
    let r0 = c.initial.expected_variance();
    let exact = |t: f64| -> Result<Option<f64>, Failure> {
        Ok(match &c.epochs {
            Some(spec) => match spec.poisson_rate() {
                Some(delta) if c.sigma > 0.0 => {
                    Some(MarkovModel::new(c.n, c.sigma, delta, c.kappa(), r0)?.r(t))
                }
                _ => None,
            },
            // No synchronization: free diffusion.
            None => Some(r0 + c.sigma * c.sigma * t),
        })
    };
    let mut w = open_sink(out)?;
    w.write_record([
        "t",
        "mc_mean",
        "mc_stderr",
        "replicas",
        "closed_form",
        "zscore",
    ])?;
    for p in &est.points {
        let cf = exact(p.t)?;
        w.write_record([
            num(p.t),
            num(p.mean),
            num(p.stderr),
            p.replicas.to_string(),
            opt(cf),
            opt(cf.map(|v| p.zscore(v))),
        ])?;
    }
    w.flush()?;
    Ok(Status {
        failed_checks: false,
        truncated: est.truncated,
    })
}

fn sweep_cmd(loaded: &Loaded, out: Option<&Path>) -> Result<Status, Failure> {
    let (plan, echo) = loaded.sweep()?;
    write_echo(&echo, out)?;
    let report = sweep(&plan)?;
    let mut w = open_sink(out)?;
    w.write_record([
        "N",
        "t_of_N",
        "alpha_N",
        "regime",
        "predicted",
        "observed",
        "ratio",
        "pass",
        "exact",
        "stderr",
        "c",
        "degenerate",
        "label",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.n.to_string(),
            num(r.t_of_n),
            num(r.alpha_n),
            r.regime.to_string(),
            num(r.predicted),
            num(r.observed),
            num(r.ratio),
            r.pass.to_string(),
            num(r.exact),
            opt(r.stderr),
            opt(r.c),
            r.degenerate.to_string(),
            report.label().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(Status {
        failed_checks: report.rows.iter().any(|r| !r.pass),
        truncated: report.truncated,
    })
}

fn kappa_cmd(loaded: &Loaded, out: Option<&Path>) -> Result<Status, Failure> {
    let (plan, echo) = loaded.kappa()?;
    write_echo(&echo, out)?;
    let mut w = open_sink(out)?;
    w.write_record([
        "signature",
        "N",
        "kappa_analytic",
        "kappa_enumerated",
        "abs_diff",
        "pass",
    ])?;
    let mut status = Status::default();
    for (i, sig) in plan.signatures.iter().enumerate() {
        let analytic = kappa_analytic(sig);
        let mut rng = keyed(&[plan.seed, plan.n as u64, i as u64]);
        // Report the configuration with the largest discrepancy.
        let mut worst = (analytic, 0.0f64);
        for _ in 0..plan.configurations {
            let x: Vec<f64> = (0..plan.n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = kappa_enumerate(sig, &ParticleConfiguration::new(x)?)?;
            let diff = (k - analytic).abs();
            if diff >= worst.1 {
                worst = (k, diff);
            }
        }
        let pass = worst.1 <= 1e-9;
        status.failed_checks |= !pass;
        w.write_record([
            sig.to_string(),
            plan.n.to_string(),
            num(analytic),
            num(worst.0),
            num(worst.1),
            pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(status)
}

fn oracle_cmd(loaded: &Loaded, out: Option<&Path>) -> Result<Status, Failure> {
    let (plan, echo) = loaded.oracle()?;
    write_echo(&echo, out)?;
    let model = MarkovModel::new(
        plan.n,
        plan.sigma,
        plan.delta,
        plan.signature.kappa(),
        plan.r0,
    )?;
    // Step proportional to the relaxation time, so the residual is O(h^2)
    // in dimensionless terms.
    let h = 1e-4 * model.relaxation_scale() / model.delta;
    let mut w = open_sink(out)?;
    w.write_record(["t", "closed_form", "ode_residual"])?;
    for &t in &plan.t {
        w.write_record([num(t), num(model.r(t)), num(model.ode_residual(t, h))])?;
    }
    w.flush()?;
    Ok(Status::default())
}

fn renewal_cmd(loaded: &Loaded, out: Option<&Path>) -> Result<Status, Failure> {
    let (plan, echo) = loaded.renewal_check()?;
    write_echo(&echo, out)?;
    let mut w = open_sink(out)?;
    w.write_record([
        "law",
        "mean_interval",
        "N",
        "t",
        "target",
        "observed",
        "stderr",
        "relative_gap",
        "pass",
        "label",
    ])?;
    let mut status = Status::default();
    for spec in &plan.laws {
        let config = SimulationConfig {
            epochs: Some(spec.clone()),
            ..plan.base.clone()
        };
        let est = estimate_r(&config, plan.workers)?;
        let model = MarkovModel::new(
            config.n,
            config.sigma,
            1.0 / spec.mean(),
            config.kappa(),
            config.initial.expected_variance(),
        )?;
        for p in &est.points {
            let target = model.r(p.t);
            let gap = p.mean / target - 1.0;
            let pass = gap.abs() <= plan.tolerance;
            status.failed_checks |= !pass;
            w.write_record([
                spec.name().to_string(),
                num(spec.mean()),
                config.n.to_string(),
                num(p.t),
                num(target),
                num(p.mean),
                num(p.stderr),
                num(gap),
                pass.to_string(),
                "conjecture (empirical)".to_string(),
            ])?;
        }
        w.flush()?;
        if est.truncated {
            status.truncated = true;
            break;
        }
    }
    w.flush()?;
    Ok(status)
}

fn run(cli: &Cli) -> Result<Status, Failure> {
    let Some(path) = &cli.config else {
        return Err(Failure::Config("--config is required".into()));
    };
    let src = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let over = Overrides {
        seed: cli.seed,
        replicas: cli.replicas,
        workers: cli.workers,
        max_epochs: cli.max_epochs,
    };
    let loaded = Loaded::parse(&src, over)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let with_path = |r: Result<Status, Failure>| match r {
        Err(Failure::Config(m)) if m.starts_with("line ") => {
            Err(Failure::Config(format!("{}: {m}", path.display())))
        }
        other => other,
    };
    let out = cli.out.as_deref();
    with_path(match cli.command {
        Command::Simulate => simulate(&loaded, out),
        Command::Sweep => sweep_cmd(&loaded, out),
        Command::Kappa => kappa_cmd(&loaded, out),
        Command::Oracle => oracle_cmd(&loaded, out),
        Command::RenewalCheck => renewal_cmd(&loaded, out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(status) if status.truncated => {
            eprintln!("error: epoch budget exhausted; output is partial (raise --max-epochs)");
            ExitCode::from(EXIT_BUDGET)
        }
        Ok(status) if status.failed_checks => ExitCode::from(EXIT_FAILED_CHECK),
        Ok(_) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
