//! Command-line front end: parses a TOML config, applies flag overrides,
//! runs one of the experiment drivers, prints a table, and optionally
//! writes a CSV.  Exit codes: 0 on success, 2 for configuration or
//! validation problems, 3 when a run diverged that was expected to hold.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lti_dg::config::Config;
use lti_dg::experiments::{
    self, converge_table, write_csv, ExperimentError, SweepRow,
};
use lti_dg::filters::FilterSpec;

#[derive(Parser)]
#[command(
    name = "lti-dg",
    version,
    about = "Local time integration of two-field wave systems on graded dG grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error against step size with the configured filter.
    Converge(CommonArgs),
    /// Undamped vs damped Chebyshev filtering over a step-size grid.
    Stabilize(CommonArgs),
    /// Wall-clock comparison: leapfrog, locally implicit, Chebyshev.
    Bench(CommonArgs),
    /// Resolve a config: mesh, partition, constants, step bounds.
    Info(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(value_name = "CONFIG")]
    config: PathBuf,
    /// CSV output path (overrides [output].csv; '-' for stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Step size(s); repeat or comma-separate (overrides [time].taus).
    #[arg(long = "tau", value_delimiter = ',')]
    taus: Vec<f64>,
    /// Chebyshev degree (overrides [filter].p).
    #[arg(long)]
    p: Option<u32>,
    /// Chebyshev damping (overrides [filter].eta).
    #[arg(long)]
    eta: Option<f64>,
    /// Leapfrog CFL safety factor (overrides [time].theta).
    #[arg(long)]
    theta: Option<f64>,
    /// Coarse CFL safety factor (overrides [time].theta_c).
    #[arg(long)]
    theta_c: Option<f64>,
    /// Run any requested step size, admissible or not.
    #[arg(long)]
    override_cfl: bool,
    /// Worker threads for sweeps (overrides [run].threads).
    #[arg(long)]
    threads: Option<usize>,
}

impl CommonArgs {
    fn load_config(&self) -> Result<Config, ExperimentError> {
        let mut config = Config::load(&self.config)?;
        if !self.taus.is_empty() {
            config.time.taus = Some(self.taus.clone());
        }
        if let Some(p) = self.p {
            config.filter.p = p;
        }
        if let Some(eta) = self.eta {
            config.filter.eta = eta;
        }
        if let Some(theta) = self.theta {
            config.time.theta = theta;
        }
        if let Some(theta_c) = self.theta_c {
            config.time.theta_c = theta_c;
        }
        if self.override_cfl {
            config.time.override_cfl = true;
        }
        if let Some(threads) = self.threads {
            config.run.threads = threads;
        }
        Ok(config)
    }

    fn csv_destination(&self, config: &Config) -> Option<PathBuf> {
        self.out
            .clone()
            .or_else(|| config.output.csv.as_ref().map(PathBuf::from))
    }
}

fn emit_csv(args: &CommonArgs, config: &Config, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    let Some(path) = args.csv_destination(config) else { return Ok(()) };
    if path.as_os_str() == "-" {
        let stdout = std::io::stdout();
        write_csv(&mut stdout.lock(), rows, config)?;
        return Ok(());
    }
    let mut out = BufWriter::new(File::create(&path)?);
    write_csv(&mut out, rows, config)?;
    out.flush()?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Lines of the damped/undamped comparison, one step size per row.
fn stabilize_table(rows: &[SweepRow]) -> String {
    let half = rows.len() / 2;
    let label = |f: &FilterSpec| match f {
        FilterSpec::Lfc { p, eta } => format!("p={p} eta={eta}"),
        other => other.to_string(),
    };
    let mut out = format!(
        "{:<14} {:<20} {:<20}\n",
        "tau",
        label(&rows[0].filter),
        label(&rows[half].filter)
    );
    for (a, b) in rows[..half].iter().zip(&rows[half..]) {
        let cell = |r: &SweepRow| match r.diverged_at {
            Some(n) => format!("diverged@{n}"),
            None => format!("{:.6e}", r.final_l2_error),
        };
        out.push_str(&format!("{:<14.6e} {:<20} {:<20}\n", a.tau, cell(a), cell(b)));
    }
    out
}

fn run_command(command: &Command) -> Result<ExitCode, ExperimentError> {
    match command {
        Command::Converge(args) => {
            let config = args.load_config()?;
            let rows = experiments::converge(&config)?;
            print!("{}", converge_table(&rows));
            emit_csv(args, &config, &rows)?;
            if !config.time.override_cfl && rows.iter().any(|r| r.diverged_at.is_some()) {
                eprintln!("error: an admissible run diverged");
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Stabilize(args) => {
            let config = args.load_config()?;
            let rows = experiments::stabilize(&config, None)?;
            print!("{}", stabilize_table(&rows));
            emit_csv(args, &config, &rows)?;
            // Divergence is the observable here, for both arms: the grid
            // deliberately scans past the stability bounds.
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench(args) => {
            let config = args.load_config()?;
            let report = experiments::bench(&config)?;
            print!("{report}");
            emit_csv(args, &config, &report.to_sweep_rows())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Info(args) => {
            let config = args.load_config()?;
            print!("{}", experiments::info(&config)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(&cli.command) {
        Ok(code) => code,
        // Numeric failures mid-run (a stalled solve) are distinguished
        // from configuration and validation problems.
        Err(ExperimentError::Integrate(e)) => {
            eprintln!("error: {e}");
            match e {
                lti_dg::integrators::IntegrateError::TauTooLarge { .. }
                | lti_dg::integrators::IntegrateError::Setup(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
