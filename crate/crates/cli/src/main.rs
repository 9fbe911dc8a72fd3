use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use zenosim::experiment::{parse_spec, ExperimentSpec, Overrides};
use zenosim::runner::{run_subcommand, RunError, SUBCOMMANDS};

/// Open-system simulations of a measurement-induced entangling gate.
#[derive(Debug, Parser)]
#[command(name = "zenosim", version)]
struct Args {
    /// experiment to run
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(SUBCOMMANDS))]
    subcommand: String,
    /// TOML experiment spec; defaults apply when absent
    #[arg(long)]
    spec: Option<PathBuf>,
    /// output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// overrides sim.seed
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads (defaults to all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// cavity Fock dimension override
    #[arg(long)]
    fock: Option<usize>,
    /// integration step override, ns
    #[arg(long)]
    dt: Option<f64>,
}

fn run(args: &Args) -> Result<(), (i32, String)> {
    if let Some(j) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| (2, format!("--jobs: {e}")))?;
    }
    let ov = Overrides {
        seed: args.seed,
        n_fock: args.fock,
        dt_ns: args.dt,
    };
    let spec = match &args.spec {
        Some(p) => parse_spec(p, &ov),
        None => ExperimentSpec::parse_with("", &ov),
    }
    .map_err(|e| {
        let path = args.spec.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        (2, format!("{path}: {e}"))
    })?;
    let result = run_subcommand(&args.subcommand, &spec).map_err(|e: RunError| (e.exit_code(), e.to_string()))?;
    result
        .write(&args.out, &args.subcommand)
        .and_then(|_| std::fs::write(args.out.join(format!("{}.spec.toml", args.subcommand)), spec.to_toml()))
        .map_err(|e| (3, format!("writing outputs: {e}")))?;
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
