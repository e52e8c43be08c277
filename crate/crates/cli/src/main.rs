use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowbeam::output::{json_bytes, write_atomic};
use flowbeam::{parse_config, run_scenario, CliError, Scenario, SimConfig};

#[derive(Parser)]
#[command(name = "flowbeam", version, about = "Subsonic flow over a clamped-free beam")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario.
    #[command(flatten)]
    Run(RunCommand),
    /// Print the normalized config with every default filled in.
    Config { config: PathBuf },
}

#[derive(Subcommand)]
enum RunCommand {
    Simulate(RunArgs),
    BeamOnly(RunArgs),
    ResolventCheck(RunArgs),
    DissipativityCheck(RunArgs),
    DeltaSweep(RunArgs),
    MuSweep(RunArgs),
    TraceDiagnostic(RunArgs),
    ConvergenceStudy(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML config file.
    config: PathBuf,
    /// Overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunCommand {
    fn split(self) -> (Scenario, RunArgs) {
        match self {
            RunCommand::Simulate(a) => (Scenario::Simulate, a),
            RunCommand::BeamOnly(a) => (Scenario::BeamOnly, a),
            RunCommand::ResolventCheck(a) => (Scenario::ResolventCheck, a),
            RunCommand::DissipativityCheck(a) => (Scenario::DissipativityCheck, a),
            RunCommand::DeltaSweep(a) => (Scenario::DeltaSweep, a),
            RunCommand::MuSweep(a) => (Scenario::MuSweep, a),
            RunCommand::TraceDiagnostic(a) => (Scenario::TraceDiagnostic, a),
            RunCommand::ConvergenceStudy(a) => (Scenario::ConvergenceStudy, a),
        }
    }
}

fn load(path: &PathBuf) -> Result<SimConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(parse_config(&text)?)
}

fn run(args: Args) -> Result<u8, CliError> {
    match args.command {
        Command::Config { config } => {
            print!("{}", load(&config)?.normalized());
            Ok(0)
        }
        Command::Run(cmd) => {
            let (scenario, a) = cmd.split();
            let mut cfg = match load(&a.config) {
                Ok(c) => c,
                Err(e) => {
                    // Leave the record next to where the artifacts would have gone.
                    if let Some(dir) = &a.out {
                        let _ = std::fs::create_dir_all(dir);
                        let _ = write_atomic(&dir.join("error.json"), &json_bytes(&e.record()));
                    }
                    return Err(e);
                }
            };
            if let Some(out) = a.out {
                cfg.output.directory = out;
            }
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            let outcome = run_scenario(&cfg, scenario)?;
            match (&outcome.report, &outcome.error) {
                (Some(r), _) => println!("{}", serde_json::to_string(r).expect("json")),
                (_, Some(e)) => eprintln!("{}", serde_json::to_string(e).expect("json")),
                _ => {}
            }
            Ok(outcome.exit_code)
        }
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.record()).expect("json"));
            ExitCode::from(e.exit_code())
        }
    }
}
