use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;

use trapwave_cli::config::{validate, Scenario};
use trapwave_cli::error::{CliError, CliResult};
use trapwave_cli::output::run_dir_name;
use trapwave_cli::pipeline::{execute, snapshot_spectrum, Sections};
use trapwave_cli::{plots, scenarios};

#[derive(Parser)]
#[command(name = "trapwave", version, about = "Wave turbulence in trapped condensates")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, env = "TRAPWAVE_OUT", default_value = "runs")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Scenario file (JSON).
    #[arg(required_unless_present = "scenario", conflicts_with = "scenario")]
    config: Option<PathBuf>,

    /// Built-in scenario name.
    #[arg(long)]
    scenario: Option<String>,
}

impl Source {
    fn load(&self) -> CliResult<Scenario> {
        match (&self.config, &self.scenario) {
            (Some(p), _) => Scenario::load(p),
            (None, Some(n)) => scenarios::builtin(n).ok_or_else(|| {
                let names: Vec<&str> = scenarios::list().into_iter().map(|(n, _)| n).collect();
                CliError::Validation(vec![format!("unknown scenario '{n}', choose one of: {}", names.join(", "))])
            }),
            (None, None) => Err(CliError::Validation(vec!["give a config path or --scenario".into()])),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario and report derived scales.
    Validate {
        #[command(flatten)]
        source: Source,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Execute every section of a scenario.
    Run {
        #[command(flatten)]
        source: Source,
        /// Continue from the last snapshot in an existing run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Integrate only the rays of a scenario.
    Rays {
        #[command(flatten)]
        source: Source,
    },
    /// Evaluate only the kinetic section of a scenario.
    Kinetics {
        #[command(flatten)]
        source: Source,
    },
    /// Windowed spectrum of a stored field snapshot.
    Gabor {
        snapshot: PathBuf,
        #[arg(long)]
        eps_star: f64,
        #[arg(long, default_value_t = 8)]
        stride: usize,
        /// Output path; defaults to the snapshot with a `.spec` extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Derive plot tables from a finished run directory.
    EmitPlots { run_dir: PathBuf },
    /// List the built-in scenarios or print one as JSON.
    Scenarios {
        #[arg(long)]
        show: Option<String>,
    },
}

fn checked(source: &Source) -> CliResult<Scenario> {
    let s = source.load()?;
    let report = validate(&s).into_result()?;
    for w in &report.warnings {
        warn!("{w}");
    }
    Ok(s)
}

fn run_sections(out: &Path, source: &Source, sections: Sections, resume: bool) -> CliResult<()> {
    let s = checked(source)?;
    let dir = execute(&s, &out.join(run_dir_name(&s)), sections, resume)?;
    println!("{}", dir.root().display());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Validate { source, json } => {
            let s = source.load()?;
            let report = validate(&s);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("scenario {}: {}", report.scenario, if report.ok() { "ok" } else { "invalid" });
                let show = |label: &str, v: Option<f64>| {
                    if let Some(v) = v {
                        println!("  {label}: {v:.6}");
                    }
                };
                show("k_char", report.k_char);
                show("trap length", report.trap_length);
                show("scale separation", report.scale_separation);
                show("nyquist", report.nyquist);
                show("dt max k^2", report.cfl);
                for w in &report.warnings {
                    println!("  warning: {w}");
                }
            }
            report.into_result().map(|_| ())
        }
        Command::Run { source, resume } => run_sections(&cli.out, &source, Sections::ALL, resume),
        Command::Rays { source } => run_sections(&cli.out, &source, Sections::RAYS, false),
        Command::Kinetics { source } => run_sections(&cli.out, &source, Sections::KINETICS, false),
        Command::Gabor { snapshot, eps_star, stride, output } => {
            let spec = snapshot_spectrum(&snapshot, eps_star, stride)?;
            let out = output.unwrap_or_else(|| snapshot.with_extension("spec"));
            trapwave::io::write_spectrum(&out, &spec)?;
            println!("{} (total {:.6e})", out.display(), spec.total());
            Ok(())
        }
        Command::EmitPlots { run_dir } => {
            for f in plots::emit_plots(&run_dir)? {
                println!("{}", run_dir.join(f).display());
            }
            Ok(())
        }
        Command::Scenarios { show } => {
            match show {
                Some(name) => {
                    let s = scenarios::builtin(&name)
                        .ok_or_else(|| CliError::Validation(vec![format!("unknown scenario '{name}'")]))?;
                    println!("{}", s.canonical_json());
                }
                None => {
                    for (n, d) in scenarios::list() {
                        println!("{n:24} {d}");
                    }
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
