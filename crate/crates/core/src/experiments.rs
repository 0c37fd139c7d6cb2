//! Experiment drivers: step-size sweeps, the damping on/off comparison,
//! the three-method runtime benchmark, and a configuration report.
//!
//! The drivers take a parsed [`Config`] and return plain rows; the
//! command-line front end prints them and writes the CSV.  Sweeps fan out
//! over a small scoped-thread pool (one run per step size); the benchmark
//! always runs sequentially so its wall-clock numbers are not polluted by
//! sibling runs.

use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{Config, ConfigError};
use crate::filters::FilterSpec;
use crate::integrators::{run, IntegrateError, RunSettings, RunSummary, SchemeSetup};

#[derive(Debug)]
pub enum ExperimentError {
    Config(ConfigError),
    Integrate(IntegrateError),
    Io(std::io::Error),
    Invalid(String),
}

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentError::Config(e) => write!(f, "{e}"),
            ExperimentError::Integrate(e) => write!(f, "{e}"),
            ExperimentError::Io(e) => write!(f, "io: {e}"),
            ExperimentError::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for ExperimentError {}

impl From<ConfigError> for ExperimentError {
    fn from(e: ConfigError) -> ExperimentError {
        ExperimentError::Config(e)
    }
}

impl From<IntegrateError> for ExperimentError {
    fn from(e: IntegrateError) -> ExperimentError {
        ExperimentError::Integrate(e)
    }
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> ExperimentError {
        ExperimentError::Io(e)
    }
}

/// One sweep result: everything a CSV row needs except the config tags.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub filter: FilterSpec,
    pub tau: f64,
    pub steps: usize,
    pub max_l2_error: f64,
    pub final_l2_error: f64,
    pub diverged_at: Option<usize>,
    pub wall_seconds: f64,
    pub filter_applications: usize,
}

impl SweepRow {
    fn new(filter: FilterSpec, s: &RunSummary) -> SweepRow {
        SweepRow {
            filter,
            tau: s.tau,
            steps: s.steps,
            max_l2_error: s.max_l2_error,
            final_l2_error: s.final_l2_error,
            diverged_at: s.diverged_at,
            wall_seconds: s.wall_seconds,
            filter_applications: s.filter_applications,
        }
    }
}

pub const CSV_HEADER: &str = "tau,steps,max_l2_error,final_l2_error,diverged_at,\
wall_seconds,filter_applications,filter,p,eta,theta,theta_c,config";

/// Writes the rows with the config tags appended to each line.
pub fn write_csv(
    out: &mut dyn Write,
    rows: &[SweepRow],
    config: &Config,
) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    let hash = config.fingerprint();
    for r in rows {
        let (name, p, eta) = match r.filter {
            FilterSpec::Leapfrog => ("leapfrog", String::new(), String::new()),
            FilterSpec::CrankNicolson => ("crank-nicolson", String::new(), String::new()),
            FilterSpec::Lfc { p, eta } => ("lfc", p.to_string(), format!("{eta}")),
        };
        let diverged = r.diverged_at.map(|n| n.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{:.16e},{},{:.10e},{:.10e},{},{:.6},{},{},{},{},{},{},{}",
            r.tau,
            r.steps,
            r.max_l2_error,
            r.final_l2_error,
            diverged,
            r.wall_seconds,
            r.filter_applications,
            name,
            p,
            eta,
            config.time.theta,
            config.time.theta_c,
            hash,
        )?;
    }
    Ok(())
}

fn worker_count(config: &Config, jobs: usize) -> usize {
    let configured = if config.run.threads > 0 {
        config.run.threads
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    };
    configured.max(1).min(jobs.max(1))
}

fn base_settings(config: &Config, tau: f64) -> Result<RunSettings, ExperimentError> {
    let mut settings = RunSettings::new(tau, config.time.t_end);
    settings.source_quad = config.source_quad()?;
    settings.override_cfl = config.time.override_cfl;
    settings.cg = config.cg_settings();
    settings.error_every = config.run.error_every;
    Ok(settings)
}

/// Runs one setup over a list of step sizes on a scoped-thread pool.
fn sweep(
    setup: &SchemeSetup,
    taus: &[f64],
    base: RunSettings,
    threads: usize,
) -> Result<Vec<SweepRow>, ExperimentError> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunSummary, IntegrateError>>>> =
        taus.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= taus.len() {
                    break;
                }
                let mut settings = base;
                settings.tau = taus[i];
                let outcome = run(setup, &settings);
                *slots[i].lock().unwrap() = Some(outcome);
            });
        }
    });
    let mut rows = Vec::with_capacity(taus.len());
    for slot in slots {
        let outcome = slot.into_inner().unwrap().expect("sweep worker skipped a slot");
        rows.push(SweepRow::new(setup.filter, &outcome?));
    }
    Ok(rows)
}

/// Error-vs-step-size sweep with the configured filter.
pub fn converge(config: &Config) -> Result<Vec<SweepRow>, ExperimentError> {
    let setup = config.setup()?;
    let taus = config.taus()?;
    let threads = worker_count(config, taus.len());
    sweep(&setup, &taus, base_settings(config, taus[0])?, threads)
}

/// Renders sweep rows as an aligned table with observed convergence rates
/// between consecutive step sizes.
pub fn converge_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str("tau            steps    final_l2_error   rate\n");
    for (i, r) in rows.iter().enumerate() {
        let rate = if i > 0
            && r.diverged_at.is_none()
            && rows[i - 1].diverged_at.is_none()
            && r.tau != rows[i - 1].tau
        {
            let value = (rows[i - 1].final_l2_error / r.final_l2_error).ln()
                / (rows[i - 1].tau / r.tau).ln();
            format!("{value:5.2}")
        } else {
            "    -".into()
        };
        let err = if r.diverged_at.is_some() {
            format!("diverged@{}", r.diverged_at.unwrap())
        } else {
            format!("{:.6e}", r.final_l2_error)
        };
        out.push_str(&format!("{:<14.6e} {:<8} {:<16} {}\n", r.tau, r.steps, err, rate));
    }
    out
}

/// Damping on/off comparison: the configured Chebyshev degree runs twice
/// over the same step-size grid, once with `eta = 0` and once with the
/// requested damping, CFL validation disabled (divergence is the point).
pub fn stabilize(config: &Config, eta_override: Option<f64>) -> Result<Vec<SweepRow>, ExperimentError> {
    let FilterSpec::Lfc { p, eta } = config.filter_spec()? else {
        return Err(ExperimentError::Invalid(
            "the stabilize experiment needs filter.variant = \"lfc\"".into(),
        ));
    };
    let eta = eta_override.unwrap_or(eta);
    if !(eta > 0.0) {
        return Err(ExperimentError::Invalid(format!(
            "stabilize compares eta = 0 against a positive damping, got {eta}"
        )));
    }
    let taus = config.taus()?;
    let threads = worker_count(config, taus.len());
    let mut rows = Vec::new();
    for eta in [0.0, eta] {
        let setup = config.setup_with_filter(FilterSpec::Lfc { p, eta })?;
        let mut base = base_settings(config, taus[0])?;
        base.override_cfl = true;
        rows.extend(sweep(&setup, &taus, base, threads)?);
    }
    Ok(rows)
}

/// One line of the runtime comparison.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub filter: FilterSpec,
    pub tau: f64,
    pub steps: usize,
    pub wall_seconds: f64,
    pub final_l2_error: f64,
    /// Wall time as a fraction of the leapfrog reference.
    pub relative_time: f64,
    /// Step sizes tried until the error matched the reference budget.
    pub calibration_runs: usize,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub fine_fraction: f64,
    pub n_cells: usize,
    pub error_budget: f64,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} cells, {:.2}% fine; error budget {:.3e}",
            self.n_cells,
            100.0 * self.fine_fraction,
            self.error_budget
        )?;
        writeln!(
            f,
            "{:<22} {:>12} {:>9} {:>10} {:>13} {:>9}",
            "method", "tau", "steps", "wall [s]", "l2 error", "relative"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<22} {:>12.4e} {:>9} {:>10.3} {:>13.4e} {:>8.1}%",
                r.filter.to_string(),
                r.tau,
                r.steps,
                r.wall_seconds,
                r.final_l2_error,
                100.0 * r.relative_time,
            )?;
        }
        Ok(())
    }
}

impl BenchReport {
    pub fn to_sweep_rows(&self) -> Vec<SweepRow> {
        self.rows
            .iter()
            .map(|r| SweepRow {
                filter: r.filter,
                tau: r.tau,
                steps: r.steps,
                max_l2_error: r.final_l2_error,
                final_l2_error: r.final_l2_error,
                diverged_at: None,
                wall_seconds: r.wall_seconds,
                filter_applications: 0,
            })
            .collect()
    }
}

/// Runtime comparison of plain leapfrog against the locally implicit and
/// Chebyshev filters on one mesh.  Leapfrog sets the reference: it runs at
/// its global CFL limit and its error times two is the budget the filtered
/// methods must meet.  Each filtered method starts from `time.taus[0]` if
/// given (with `override_cfl` this may exceed the guaranteed bound, which
/// is known to be conservative) or else just under its own admissible step
/// size, and backs off (factor 0.7, at most 8 runs) until its error fits
/// the budget; the last run is the one reported.
pub fn bench(config: &Config) -> Result<BenchReport, ExperimentError> {
    // The unfiltered scheme is partition-independent, so the reference is
    // built without one; its admissible step is then the global CFL bound.
    let mut lf_config = config.clone();
    lf_config.fine = Default::default();
    let lf_setup = lf_config.setup_with_filter(FilterSpec::Leapfrog)?;
    let fine_fraction = crate::mesh::classify(lf_setup.space().mesh(), &config.fine_rule()?)
        .map_err(ConfigError::from)?
        .fine_fraction();
    let tau_lf = lf_setup.cfl.tau_leapfrog;
    let lf_summary = run(&lf_setup, &base_settings(config, tau_lf)?)?;
    if lf_summary.diverged_at.is_some() {
        return Err(ExperimentError::Invalid(format!(
            "leapfrog reference diverged at its own CFL step {tau_lf:.4e}"
        )));
    }
    let budget = 2.0 * lf_summary.final_l2_error;
    let mut report = BenchReport {
        rows: vec![BenchRow {
            filter: FilterSpec::Leapfrog,
            tau: tau_lf,
            steps: lf_summary.steps,
            wall_seconds: lf_summary.wall_seconds,
            final_l2_error: lf_summary.final_l2_error,
            relative_time: 1.0,
            calibration_runs: 1,
        }],
        fine_fraction,
        n_cells: lf_setup.space().mesh().n_cells(),
        error_budget: budget,
    };
    let lf_wall = lf_summary.wall_seconds.max(1e-12);
    for filter in [
        FilterSpec::CrankNicolson,
        FilterSpec::Lfc { p: config.filter.p, eta: config.filter.eta },
    ] {
        let setup = config.setup_with_filter(filter)?;
        let mut tau = match &config.time.taus {
            Some(taus) => taus[0],
            None => 0.95 * setup.cfl.admissible,
        };
        if !tau.is_finite() || tau <= 0.0 {
            return Err(ExperimentError::Invalid(format!(
                "{filter} has no admissible step on this mesh"
            )));
        }
        let mut accepted = None;
        let mut tries = 0;
        while tries < 8 {
            tries += 1;
            let summary = run(&setup, &base_settings(config, tau)?)?;
            let good = summary.diverged_at.is_none() && summary.final_l2_error <= budget;
            accepted = Some(summary);
            if good {
                break;
            }
            tau *= 0.7;
        }
        let summary = accepted.unwrap();
        report.rows.push(BenchRow {
            filter,
            tau: summary.tau,
            steps: summary.steps,
            wall_seconds: summary.wall_seconds,
            final_l2_error: summary.final_l2_error,
            relative_time: summary.wall_seconds / lf_wall,
            calibration_runs: tries,
        });
    }
    Ok(report)
}

/// Human-readable description of what a config resolves to: mesh,
/// partition, filter constants, operator norms, and step-size bounds.
pub struct InfoReport {
    pub config_hash: String,
    pub setup: SchemeSetup,
}

impl fmt::Display for InfoReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.setup;
        let mesh = s.space().mesh();
        writeln!(f, "problem           {}", s.problem.name)?;
        writeln!(
            f,
            "mesh              {}d, {} cells, h in [{:.4e}, {:.4e}]",
            mesh.dim(),
            mesh.n_cells(),
            mesh.h_min(),
            mesh.h_max()
        )?;
        writeln!(
            f,
            "partition         {} fine ({:.2}%), {} filtered, {} coarse",
            s.partition.n_fine(),
            100.0 * s.partition.fine_fraction(),
            s.partition.n_m(),
            mesh.n_cells() - s.partition.n_m()
        )?;
        writeln!(f, "space             degree {}, {} dofs", s.space().degree(), s.space().len_u() + s.space().len_v())?;
        writeln!(f, "filter            {}", s.filter)?;
        writeln!(
            f,
            "constants         c_theta = {:.6}, beta^2 = {:.6}, c_phi = {:.6}{}",
            s.constants.c_theta,
            s.constants.beta_sq,
            s.constants.c_phi,
            if s.constants.unstabilized { "  (no stabilization margin)" } else { "" }
        )?;
        writeln!(
            f,
            "operator norms    |S_M| = {:.6e}, |S_LF| = {:.6e}, |S| = {:.6e}",
            s.norms.s_m, s.norms.s_lf, s.norms.s_all
        )?;
        writeln!(
            f,
            "step bounds       filter {:.6e}, coarse {:.6e}, leapfrog {:.6e}",
            s.cfl.tau_psi, s.cfl.tau_lf_coarse, s.cfl.tau_leapfrog
        )?;
        writeln!(f, "admissible tau    {:.6e}", s.cfl.admissible)?;
        writeln!(f, "config            {}", self.config_hash)?;
        Ok(())
    }
}

pub fn info(config: &Config) -> Result<InfoReport, ExperimentError> {
    Ok(InfoReport { config_hash: config.fingerprint(), setup: config.setup()? })
}
