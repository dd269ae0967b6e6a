use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hqflow::commands::{
    cmd_converge, cmd_eigen, cmd_flow, cmd_verify, doubling_levels, CommandError, CommandOutcome,
    EXIT_INVALID,
};
use hqflow::config::RunConfig;
use hqflow::exec::Exec;

#[derive(Parser)]
#[command(name = "hqflow", version, about = "Neumann Hessian quotient flows in the plane")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow to its stop rule.
    Flow { config: PathBuf },
    /// Compute the translating speed and profile.
    Eigen { config: PathBuf },
    /// Seeded property suite for the symmetric functions.
    Verify {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// Swap in a deliberately broken sigma to check that the suite fails.
        #[arg(long)]
        shadow: bool,
        #[arg(long)]
        sequential: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Manufactured-solution order study over refined grids.
    Converge {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Explicit levels such as `16x32,32x64`; overrides `--levels`.
        #[arg(long, value_delimiter = ',')]
        resolutions: Vec<String>,
    },
}

fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once('x')
        .with_context(|| format!("resolution {s:?} is not of the form N1xN2"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn load(path: &Path) -> Result<RunConfig, CommandError> {
    Ok(RunConfig::from_path(path)?)
}

fn run(cli: Cli) -> Result<CommandOutcome, CommandError> {
    match cli.command {
        Command::Flow { config } => {
            let cfg = load(&config)?;
            cmd_flow(&cfg, &cfg.output_dir())
        }
        Command::Eigen { config } => {
            let cfg = load(&config)?;
            cmd_eigen(&cfg, &cfg.output_dir())
        }
        Command::Verify {
            seed,
            trials,
            shadow,
            sequential,
            out,
        } => {
            let out = std::env::var_os("HQFLOW_OUT").map(PathBuf::from).unwrap_or(out);
            let exec = if sequential { Exec::Sequential } else { Exec::default() };
            cmd_verify(seed, trials, shadow, exec, &out)
        }
        Command::Converge {
            config,
            levels,
            resolutions,
        } => {
            let cfg = load(&config)?;
            let list = if resolutions.is_empty() {
                doubling_levels(cfg.resolution, levels)
            } else {
                resolutions
                    .iter()
                    .map(|s| parse_resolution(s))
                    .collect::<Result<_>>()
                    .map_err(|e| CommandError::Invalid(e.to_string()))?
            };
            cmd_converge(&cfg, &list, &cfg.output_dir())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.message);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            let code = e.exit_code();
            let err: anyhow::Error = e.into();
            eprintln!("error: {err:#}");
            if code == EXIT_INVALID {
                eprintln!("(invalid input; nothing was computed)");
            }
            ExitCode::from(code as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolutions() {
        assert_eq!(parse_resolution("16x32").unwrap(), (16, 32));
        assert_eq!(parse_resolution(" 8 x 8 ").unwrap(), (8, 8));
        assert!(parse_resolution("16").is_err());
        assert!(parse_resolution("ax4").is_err());
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
