//! Batch sweep driver.

use std::path::PathBuf;
use std::process::ExitCode;

use cellfree_core::{load_spec, run, write_outputs, ExperimentSpec, Preset, SimError, StatsMode, Sweep};
use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "simulate", version, about = "Pilot-phase channel estimation sweeps for cell-free massive MIMO")]
struct Args {
    /// TOML experiment file, layered over the preset when both are given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in experiment: fig1 (pilot length sweep) or fig2 (antenna sweep).
    #[arg(long)]
    preset: Option<Preset>,
    /// Sweep override, e.g. `tau_p=3,5,7`.
    #[arg(long)]
    sweep: Option<Sweep>,
    /// Statistics source: true or tracked.
    #[arg(long)]
    stats: Option<StatsMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix for `<prefix>.csv`, `<prefix>_<scheme>.dat` and `<prefix>.plot`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Network realizations per sweep point.
    #[arg(long)]
    realizations: Option<usize>,
    /// Coherence blocks per realization, warm-up included.
    #[arg(long)]
    blocks: Option<usize>,
}

fn build_spec(args: &Args) -> Result<ExperimentSpec, SimError> {
    let mut spec = load_spec(args.preset, args.config.as_deref())?;
    if let Some(sweep) = &args.sweep {
        spec.sweep = sweep.clone();
    }
    if let Some(stats) = args.stats {
        spec.stats = stats;
    }
    if let Some(seed) = args.seed {
        spec.base.seed = seed;
    }
    if let Some(r) = args.realizations {
        spec.realizations = r;
    }
    if let Some(b) = args.blocks {
        spec.base.blocks = b;
    }
    if let Some(out) = &args.out {
        spec.out = Some(out.to_string_lossy().into_owned());
    }
    spec.validate()?;
    Ok(spec)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = build_spec(&args).and_then(|spec| {
        let rows = run(&spec)?;
        let prefix = PathBuf::from(spec.out.as_deref().unwrap_or("simulation"));
        write_outputs(&rows, &prefix)
    });
    match result {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("simulate: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
