//! `hyk`: command-line front end for the hyk-core kernels.
//!
//! Every run writes its primary output plus `<output>.manifest.json` holding
//! the fully resolved configuration. Passing that manifest back through
//! `--config` repeats the run bit for bit. The exit status is 0 when all
//! checks of the run pass, 1 when one fails and 2 on errors.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use commands::*;
use output::{Emit, Manifest, Outcome};

#[derive(Parser, Debug)]
#[command(name = "hyk", version, about = "Huang-Yang energy of the dilute spin-1/2 Fermi gas: kernels and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config mirroring the flags (a run manifest also works); flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Primary output path; defaults to hyk-<subcommand>.<ext>
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    emit: Option<Emit>,
    /// Worker threads; HYK_THREADS takes precedence
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write a matplotlib script next to CSV output
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Zero-energy scattering solution and scattering length
    Scatter(ScatterArgs),
    /// Three-term energy density
    Hy(HyArgs),
    /// Table of F(x)
    Fcurve(FcurveArgs),
    /// Monte Carlo Pauli-blocked integral
    PauliMc(PauliArgs),
    /// Momentum-lattice FFG energy and correction sum
    Lattice(LatticeArgs),
    /// Density scaling of the five t-integrals
    Tscaling(TscalingArgs),
    /// Periodic heat kernel norms and their t scaling
    Heatkernel(HeatArgs),
    /// Operator identities on small Fock spaces
    FockVerify(FockArgs),
    /// Repeat one subcommand over a list of values of one parameter
    Sweep(SweepArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Scatter(_) => "scatter",
            Command::Hy(_) => "hy",
            Command::Fcurve(_) => "fcurve",
            Command::PauliMc(_) => "pauli-mc",
            Command::Lattice(_) => "lattice",
            Command::Tscaling(_) => "tscaling",
            Command::Heatkernel(_) => "heatkernel",
            Command::FockVerify(_) => "fock-verify",
            Command::Sweep(_) => "sweep",
        }
    }

    fn default_emit(&self) -> Emit {
        match self {
            Command::Hy(_) | Command::PauliMc(_) | Command::Lattice(_) | Command::FockVerify(_) => Emit::Json,
            _ => Emit::Csv,
        }
    }

    fn flags(&self) -> Result<Value> {
        fn v<T: Serialize>(t: &T) -> Result<Value> {
            Ok(serde_json::to_value(t)?)
        }
        match self {
            Command::Scatter(a) => v(a),
            Command::Hy(a) => v(a),
            Command::Fcurve(a) => v(a),
            Command::PauliMc(a) => v(a),
            Command::Lattice(a) => v(a),
            Command::Tscaling(a) => v(a),
            Command::Heatkernel(a) => v(a),
            Command::FockVerify(a) => v(a),
            Command::Sweep(a) => v(a),
        }
    }
}

fn workers(flag: Option<usize>) -> usize {
    hyk_core::parallel::workers_from_env()
        .or(flag)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Flags laid over the config file, with nulls dropped.
fn merged(flags: Value, file: Option<Value>) -> Value {
    let mut base = match file {
        Some(Value::Object(m)) => m,
        _ => serde_json::Map::new(),
    };
    if let Value::Object(f) = flags {
        for (k, v) in f {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    Value::Object(base)
}

fn run(cli: Cli) -> Result<bool> {
    let sub = cli.command.name();
    let file = cli.config.as_deref().map(|p| config::load(p, sub)).transpose()?;
    let cfg = merged(cli.command.flags()?, file);
    let emit = cli.emit.unwrap_or_else(|| cli.command.default_emit());
    let out_path = cli.output.clone().unwrap_or_else(|| PathBuf::from(format!("hyk-{sub}.{}", emit.extension())));
    let n_workers = workers(cli.threads);

    // resolve and validate before any computation
    let (resolved, sweep) = if sub == "sweep" {
        let mut map = cfg.as_object().cloned().unwrap_or_default();
        let base = map.remove("base");
        let mut a: SweepArgs = config::overlay(&SweepArgs::default(), Some(Value::Object(map)))?;
        a.base = base;
        let a = a.resolve()?;
        let mut v = serde_json::to_value(&a)?;
        v["base"] = a.base.clone().unwrap_or(Value::Null);
        (v, Some(a))
    } else {
        (resolve_value(sub, cfg)?, None)
    };
    std::fs::File::create(&out_path).with_context(|| format!("output path {} is not writable", out_path.display()))?;

    let start = Instant::now();
    let outcome: Outcome = hyk_core::parallel::with_workers(n_workers, || -> Result<Outcome> {
        match &sweep {
            Some(a) => a.run(),
            None => Ok(run_value(sub, resolved.clone())?.1),
        }
    })??;
    let wall = start.elapsed().as_secs_f64();

    output::write_outcome(&outcome, emit, &out_path)?;
    let mut outputs = vec![out_path.display().to_string()];
    if cli.plot && emit == Emit::Csv {
        if outcome.table.is_some() {
            let log = matches!(sub, "heatkernel");
            outputs.push(output::write_plot_script(&out_path, log)?.display().to_string());
        }
    }
    let passed = outcome.passed();
    let manifest = Manifest {
        tool: "hyk",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: sub,
        config: resolved,
        emit,
        workers: n_workers,
        wall_time_s: wall,
        outputs,
        checks: &outcome.checks,
        all_passed: passed,
    };
    let mpath = output::write_manifest(&manifest, &out_path)?;
    for c in &outcome.checks {
        eprintln!("{} {} = {:e} (tolerance {:e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    eprintln!("wrote {} and {}", out_path.display(), mpath.display());
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
