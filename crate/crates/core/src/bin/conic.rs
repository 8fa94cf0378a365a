use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conic_core::scenario::{self, RunContext, Scenario};
use conic_core::GeomError;

/// Runs geometry scenarios and writes CSV/JSON tables.
#[derive(Parser)]
#[command(name = "conic", version)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a bundled scenario by name.
    Run {
        scenario: String,
        #[arg(long, env = "CONIC_OUT_DIR", default_value = "out")]
        out_dir: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the bundled scenarios.
    ListExamples {
        #[arg(long)]
        json: bool,
    },
}

fn load(name: &str) -> Result<Scenario, GeomError> {
    let path = Path::new(name);
    if path.exists() {
        return Scenario::load(path);
    }
    match scenario::bundled_scenario(name) {
        Some(s) => s,
        None => Err(GeomError::Config(format!("{name:?} is neither a file nor a bundled scenario"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::ListExamples { json } => match scenario::list_examples() {
            Ok(cat) => {
                if json {
                    println!("{}", serde_json::to_string_pretty(&cat).expect("catalog serializes"));
                } else {
                    for e in cat {
                        println!("{:<20} {}  [{}]", e.name, e.description, e.anchor);
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run { scenario, out_dir, seed, threads } => {
            if let Some(n) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
            let s = match load(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match scenario::run(&s, &RunContext { out_dir, seed }) {
                Ok(sum) => {
                    for p in &sum.artifacts {
                        println!("{}", p.display());
                    }
                    if sum.violations.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        for v in &sum.violations {
                            eprintln!("violation: {v}");
                        }
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
