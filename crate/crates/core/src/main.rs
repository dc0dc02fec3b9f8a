use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nlwtori::cli::{cmd_measure, cmd_normal_form, cmd_solve, cmd_verify, fmt_f, resolve_out, Overrides};
use nlwtori::config::RunConfig;
use nlwtori::Error;

#[derive(Parser)]
#[command(name = "nlwtori", version, about = "Quasi-periodic tori of the 1D nonlinear wave equation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute a torus: solution, per-level diagnostics and residual table
    Solve(Common),
    /// Monte Carlo estimate of the excluded frequency measure
    Measure(Common),
    /// Check a stored solution
    Verify {
        #[command(flatten)]
        common: Common,
        /// defaults to <out>/solution.json
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Birkhoff normal form of the tangential modes
    NormalForm(Common),
}

fn run(cli: Cli) -> Result<(), Error> {
    let (common, solution) = match cli.cmd {
        Cmd::Solve(ref c) | Cmd::Measure(ref c) | Cmd::NormalForm(ref c) => (c, None),
        Cmd::Verify { ref common, ref solution } => (common, solution.clone()),
    };
    let cfg = RunConfig::load(&common.config)?;
    let out = resolve_out(common.out.clone(), &cfg)?;
    let ov = Overrides { seed: common.seed, levels: common.levels, quiet: common.quiet };
    let say = |s: String| {
        if !ov.quiet {
            println!("{s}");
        }
    };
    match cli.cmd {
        Cmd::Solve(_) => {
            let s = cmd_solve(&cfg, &out, &ov)?;
            say(format!(
                "converged: {} levels, {} iterations, residual_fp {}, tangential {}",
                s.levels,
                s.iterations,
                fmt_f(s.residual_fp),
                fmt_f(s.tangential_residual)
            ));
        }
        Cmd::Measure(_) => {
            let s = cmd_measure(&cfg, &out, &ov)?;
            say(format!("{} rows, slope {}", s.rows, s.slope.map(fmt_f).unwrap_or_else(|| "n/a".into())));
        }
        Cmd::Verify { .. } => {
            let path = solution.unwrap_or_else(|| out.join("solution.json"));
            for c in cmd_verify(&cfg, &path, &out, &ov)? {
                say(format!("{}: {} <= {}", c.name, fmt_f(c.value), fmt_f(c.bound)));
            }
        }
        Cmd::NormalForm(_) => {
            let r = cmd_normal_form(&cfg, &out, &ov)?;
            say(format!("gbar {}", r["gbar"]));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nlwtori: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
