use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgkahler::flow::TRACE_HEADER;
use cgkahler_cli::commands::{flow_config, futaki_table, mu_summary, run_scenario_flow, spectrum};
use cgkahler_cli::{verify_all_timed, ScenarioConfig};
use clap::{Args, Parser, Subcommand};

/// Verification of moment-map identities on flat tori and toric manifolds.
#[derive(Parser)]
#[command(name = "cgkahler", version)]
struct Cli {
    /// Worker threads for independent checks.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario's checks and emit a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Report destination; `-` for stdout.
        #[arg(long)]
        json: Option<String>,
        /// Report destination (same as `--json <path>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise μ on the primary potential.
    Mu {
        #[command(flatten)]
        common: Common,
        /// CSV dump of μ, Ric·Ric and the volume density.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Futaki invariants of the kernel potentials for both potentials.
    Fut {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient flow of the Calabi functional; streams the CSV trace.
    Flow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        /// Trace destination instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary destination; `-` for stderr.
        #[arg(long)]
        json: Option<String>,
    },
    /// Rayleigh-Ritz values of the Lichnerowicz operator.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Checks,
    Runtime(String),
}

fn load(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg =
        ScenarioConfig::load(&common.scenario).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Writes `text` to the file, or to stdout when no file is given.
fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => write_file(path, text),
        None => io::stdout().write_all(text.as_bytes()).map_err(runtime),
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Verify {
            common,
            json: dest,
            out,
        } => {
            let cfg = load(&common)?;
            let (report, times) = verify_all_timed(&cfg);
            let text = report.to_json();
            let to_stdout = dest.as_deref() == Some("-");
            let path = out
                .or(dest.filter(|d| d != "-").map(PathBuf::from))
                .or(cfg.output.report.map(PathBuf::from));
            for (c, t) in report.checks.iter().zip(&times) {
                eprintln!(
                    "{} {:<20} residual {:<12.3e} tolerance {:.0e} [{} ms]",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.residual,
                    c.tolerance,
                    t.as_millis()
                );
            }
            eprintln!(
                "{}: {}/{} checks pass",
                report.scenario, report.passed, report.total
            );
            if let Some(p) = &path {
                write_file(p, &text)?;
            }
            if to_stdout || path.is_none() {
                io::stdout().write_all(text.as_bytes()).map_err(runtime)?;
            }
            if report.pass {
                Ok(())
            } else {
                Err(Failure::Checks)
            }
        }
        Command::Mu { common, out } => {
            let cfg = load(&common)?;
            let summary = mu_summary(&cfg, out.as_deref()).map_err(runtime)?;
            emit(None, &json(&summary))
        }
        Command::Fut { common, out } => {
            let cfg = load(&common)?;
            emit(out.as_deref(), &json(&futaki_table(&cfg).map_err(runtime)?))
        }
        Command::Flow {
            common,
            steps,
            out,
            json: summary_dest,
        } => {
            let cfg = load(&common)?;
            let flow = flow_config(&cfg, steps);
            let sink: Box<dyn Write> =
                match out
                    .as_deref()
                    .or(cfg.output.trace.as_deref().map(Path::new))
                {
                    Some(p) => Box::new(
                        File::create(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?,
                    ),
                    None => Box::new(io::stdout()),
                };
            let mut sink = BufWriter::new(sink);
            writeln!(sink, "{TRACE_HEADER}").map_err(runtime)?;
            let mut write_error = None;
            let state = run_scenario_flow(&cfg, &flow, |row| {
                if let Err(e) = writeln!(sink, "{}", row.csv_line()).and_then(|_| sink.flush()) {
                    write_error.get_or_insert(e);
                }
            })
            .map_err(runtime)?;
            if let Some(e) = write_error {
                return Err(runtime(e));
            }
            let summary = json(&state.summary());
            match summary_dest.as_deref() {
                Some("-") | None => eprint!("{summary}"),
                Some(p) => write_file(Path::new(p), &summary)?,
            }
            Ok(())
        }
        Command::Spectrum { common, count, out } => {
            let cfg = load(&common)?;
            emit(
                out.as_deref(),
                &json(&spectrum(&cfg, count).map_err(runtime)?),
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
    {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}
