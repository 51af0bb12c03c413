use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use memsfbp::config::{env_overrides, ExperimentConfig};
use memsfbp::{run, Error, Execution, Mode};

/// Two-membrane electrostatic actuator simulations.
///
/// Settings are taken from the defaults, then `--config`, then
/// `MEMSFBP_SECTION_KEY` environment variables, then `--set`, then the
/// direct flags.
#[derive(Debug, Parser)]
#[command(name = "memsfbp", version)]
struct Cli {
    #[command(subcommand)]
    mode: ModeArg,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override `section.key=value`; the value is parsed as TOML.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Disable data parallelism.
    #[arg(long, global = true)]
    sequential: bool,

    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    nx: Option<usize>,
    #[arg(long, global = true)]
    nz: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long = "t-end", global = true)]
    t_end: Option<f64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum ModeArg {
    /// Time evolution of the model selected by `params.model`.
    Evolve,
    /// Time evolution of the narrow-gap model.
    Sar,
    /// One steady state by Newton's method.
    Steady,
    /// Steady branch along `mu = ratio * lambda`, through the first fold.
    Branch,
    /// Evolution verdicts and steady solves over `params.lambda_values`.
    Sweep,
    /// Analytic thresholds over `params.eps_values`.
    Thresholds,
    /// Corpus checks; exits nonzero if any regular check fails.
    Verify,
    /// Full-versus-narrow-gap discrepancy over `params.eps_values`.
    Convergence,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Evolve => Mode::Evolve,
            ModeArg::Sar => Mode::Sar,
            ModeArg::Steady => Mode::Steady,
            ModeArg::Branch => Mode::Branch,
            ModeArg::Sweep => Mode::Sweep,
            ModeArg::Thresholds => Mode::Thresholds,
            ModeArg::Verify => Mode::Verify,
            ModeArg::Convergence => Mode::Convergence,
        }
    }
}

impl Cli {
    fn overrides(&self) -> Result<Vec<(String, String)>, Error> {
        let mut out = env_overrides(std::env::vars());
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set `{s}` must have the form section.key=value")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        let direct = [
            ("params.eps", self.eps.map(|v| format!("{v:?}"))),
            ("params.lambda", self.lambda.map(|v| format!("{v:?}"))),
            ("params.mu", self.mu.map(|v| format!("{v:?}"))),
            ("grid.nx", self.nx.map(|v| v.to_string())),
            ("grid.nz", self.nz.map(|v| v.to_string())),
            ("time.dt", self.dt.map(|v| format!("{v:?}"))),
            ("time.t_end", self.t_end.map(|v| format!("{v:?}"))),
            (
                "output.dir",
                self.out.as_ref().map(|p| toml::Value::String(p.display().to_string()).to_string()),
            ),
        ];
        out.extend(direct.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        Ok(out)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match cli
        .overrides()
        .and_then(|o| ExperimentConfig::load(cli.config.as_deref(), &o))
    {
        Ok(c) => c,
        Err(e) => {
            eprintln!("memsfbp: {e}");
            return ExitCode::from(2);
        }
    };
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match run(cli.mode.into(), &cfg, exec) {
        Ok(report) => {
            println!(
                "{}: {} ({} files in {})",
                report.mode.name(),
                report.message,
                report.files.len(),
                cfg.output.dir.display()
            );
            if report.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ (Error::Config(_) | Error::Validation { .. })) => {
            eprintln!("memsfbp: invalid input: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("memsfbp: {e}");
            ExitCode::from(3)
        }
    }
}
