//! `tmres` command-line front end.

mod commands;
mod output;
mod parse;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tmres::SweepAxis;

use commands::{Context, MethodChoice, Status};

#[derive(Parser)]
#[command(name = "tmres", version, about = "Scattering by time-modulated subwavelength resonator arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Floquet,
    Closed,
    Detroot,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Eps,
    Omega,
    Length,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Eps => SweepAxis::Eps,
            AxisArg::Omega => SweepAxis::Omega,
            AxisArg::Length => SweepAxis::Length,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Quasifrequencies, optionally swept over a parameter.
    Quasifreq {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = MethodArg::All)]
        method: MethodArg,
        #[arg(long, value_enum)]
        axis: Option<AxisArg>,
        /// `a:b:n` inclusive grid.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
    },
    /// Scattered field on a space-time grid.
    Scatter {
        #[command(flatten)]
        common: Common,
        /// Operating frequency, e.g. `0.004` or `0.004-2e-6i`; defaults to the configured one.
        #[arg(long, allow_hyphen_values = true)]
        omega: Option<String>,
        /// `a:b:n` grid in x.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        /// Comma-separated sample times.
        #[arg(long, default_value = "0")]
        times: String,
        /// Also evaluate the pole-pencil approximation.
        #[arg(long)]
        pole_pencil: bool,
    },
    /// Mode scattering table and energy, optionally swept.
    Energy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Option<AxisArg>,
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
    },
    /// Truncation convergence study.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ascending truncation orders.
        #[arg(long = "k", default_value = "2,4,6,8")]
        ks: String,
    },
}

fn run(cli: Cli) -> Result<Status> {
    commands::check_threads()?;
    match cli.command {
        Command::Quasifreq { common, method, axis, grid } => {
            let ctx = Context::load(&common.config, &common.out)?;
            let grid = grid.as_deref().map(parse::grid).transpose()?;
            let method = match method {
                MethodArg::Floquet => MethodChoice::Floquet,
                MethodArg::Closed => MethodChoice::Closed,
                MethodArg::Detroot => MethodChoice::DetRoot,
                MethodArg::All => MethodChoice::All,
            };
            commands::quasifreq(&ctx, method, axis.map(Into::into), grid.as_deref())
        }
        Command::Scatter { common, omega, grid, times, pole_pencil } => {
            let ctx = Context::load(&common.config, &common.out)?;
            let omega = omega.as_deref().map(parse::complex).transpose()?;
            let xs = grid.as_deref().map(parse::grid).transpose()?;
            let times = parse::list::<f64>(&times)?;
            commands::scatter(&ctx, omega, xs.as_deref(), &times, pole_pencil)
        }
        Command::Energy { common, axis, grid } => {
            let ctx = Context::load(&common.config, &common.out)?;
            let grid = grid.as_deref().map(parse::grid).transpose()?;
            commands::energy(&ctx, axis.map(Into::into), grid.as_deref())
        }
        Command::Converge { common, ks } => {
            let ctx = Context::load(&common.config, &common.out)?;
            commands::converge(&ctx, &parse::list::<usize>(&ks)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Status::Complete) => ExitCode::SUCCESS,
        Ok(Status::Partial(n)) => {
            eprintln!("tmres: {n} point(s) failed; see the manifest");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("tmres: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
