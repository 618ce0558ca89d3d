use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use byzsgd::cli::{
    apply_overrides, attack_demo, config_from_value, emit_trace_csv, eta_summary, resilience_setup_from_value,
    DemoScenario,
};
use byzsgd::{estimate_resilience, run_experiment, Error};

#[derive(Parser)]
#[command(name = "byzsgd", version, about = "Byzantine-resilient SGD: Krum, attacks and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set schedule.gamma0=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a parameter-server simulation and write the per-round trace as CSV.
    Simulate(RunArgs),
    /// Monte Carlo check of the resilience conditions; JSON, or CSV when
    /// `--out` ends in `.csv`.
    Resilience(RunArgs),
    /// Print eta(n, f), and sin(alpha) when d, sigma and the gradient norm are given.
    Eta {
        n: usize,
        f: usize,
        #[arg(long, requires_all = ["sigma", "grad_norm"])]
        d: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        grad_norm: Option<f64>,
    },
    /// Print a worked attack instance: `lemma1` or `figure3`.
    AttackDemo { scenario: String },
}

fn load(args: &RunArgs) -> Result<Value, Error> {
    let text = fs::read_to_string(&args.config)?;
    let mut doc: Value = serde_json::from_str(&text)?;
    apply_overrides(&mut doc, &args.overrides)?;
    if let Some(seed) = args.seed {
        apply_overrides(&mut doc, &[format!("seed={seed}")])?;
    }
    Ok(doc)
}

fn write(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(args) => {
            let config = config_from_value(load(&args)?)?;
            let trace = run_experiment(&config)?;
            write(args.out.as_deref(), &emit_trace_csv(&trace))?;
            match trace.diverged_at {
                Some(t) => eprintln!("divergence detected at round {t}"),
                None => eprintln!(
                    "completed {} rounds: final cost {:e}, final gradient norm {:e}",
                    trace.records.len(),
                    trace.final_cost,
                    trace.final_grad_norm
                ),
            }
        }
        Command::Resilience(args) => {
            let setup = resilience_setup_from_value(load(&args)?)?;
            let report = estimate_resilience(&setup)?;
            let csv = args.out.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "csv"));
            let text = if csv {
                report.to_csv()
            } else {
                let mut json = serde_json::to_string_pretty(&Value::Object(report.to_flat_json()))?;
                json.push('\n');
                json
            };
            write(args.out.as_deref(), &text)?;
        }
        Command::Eta { n, f, d, sigma, grad_norm } => {
            let angle = d.zip(sigma).zip(grad_norm).map(|((d, s), g)| (d, s, g));
            print!("{}", eta_summary(n, f, angle)?);
        }
        Command::AttackDemo { scenario } => {
            let scenario: DemoScenario = scenario.parse()?;
            print!("{}", attack_demo(scenario)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::InvalidInput(_)) {
                eprintln!("usage: byzsgd <simulate|resilience|eta|attack-demo> ... (see --help)");
            }
            ExitCode::from(2)
        }
    }
}
