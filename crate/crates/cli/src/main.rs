//! gkdv-lab: configuration-driven experiments on the quintic gKdV
//! laboratory (profiles, reduced dynamics, tail propagation, composed
//! full-PDE runs, exit-time shooting, and report aggregation).
//!
//! Exit codes: 0 all checks passed, 1 experiment or check failure,
//! 2 usage/config error.

mod config;
mod experiments;
mod manifest;

use clap::Parser;
use config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "gkdv-lab",
    about = "Numerical laboratory for tail-driven soliton dynamics of the quintic gKdV equation",
    version
)]
struct Cli {
    /// Experiment family: profiles | reduced | tail | full | shoot |
    /// report | sweep.
    experiment: String,

    /// Configuration file (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (default: the config's experiment.out).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker pool size for sweeps.
    #[arg(long, default_value_t = 1)]
    workers: usize,

    /// Override a config entry, e.g. --set reduced.beta=0.25 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Swept parameter name (sweep only): beta | s0 | B | x0 | resolution.
    #[arg(long)]
    param: Option<String>,

    /// Comma-separated sweep values (sweep only).
    #[arg(long)]
    values: Option<String>,
}

fn run(cli: Cli) -> Result<bool, (u8, anyhow::Error)> {
    let usage = |e: anyhow::Error| (2u8, e);
    let mut cfg = ExperimentConfig::load(cli.config.as_deref()).map_err(usage)?;
    for spec in &cli.overrides {
        cfg.apply_override(spec).map_err(usage)?;
    }
    if cli.experiment != "sweep" {
        cfg.experiment.name = cli.experiment.clone();
    }
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.experiment.out));

    if cli.experiment == "sweep" {
        let param = cli
            .param
            .ok_or_else(|| anyhow::anyhow!("sweep needs --param"))
            .map_err(usage)?;
        let values: Vec<f64> = match &cli.values {
            None => return Err(usage(anyhow::anyhow!("sweep needs --values"))),
            Some(text) if text.trim().is_empty() => Vec::new(),
            Some(text) => text
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| usage(anyhow::anyhow!("bad sweep value: {e}")))?,
        };
        if values.is_empty() {
            println!("empty sweep: nothing to do");
            return Ok(true);
        }
        let results = experiments::run_sweep(&cfg, &param, &values, &out_dir, cli.workers)
            .map_err(|e| (1u8, e))?;
        let mut all_pass = true;
        for (v, m) in &results {
            match m {
                Some(m) => {
                    println!("sweep {param} = {v}: {}", if m.pass { "PASS" } else { "FAIL" });
                    all_pass &= m.pass;
                }
                None => {
                    println!("sweep {param} = {v}: ERROR");
                    all_pass = false;
                }
            }
        }
        return Ok(all_pass);
    }

    let manifest = experiments::run_experiment(&cfg, &out_dir).map_err(|e| (1u8, e))?;
    experiments::write_plot_script(&out_dir).map_err(|e| (1u8, e))?;
    for check in &manifest.checks {
        println!(
            "check {}: {} {} {} -> {}",
            check.name,
            check.measured,
            check.cmp,
            check.threshold,
            if check.pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "{}: {} ({} files, {:.1}s) -> {}",
        manifest.experiment,
        if manifest.pass { "PASS" } else { "FAIL" },
        manifest.files.len(),
        manifest.wall_seconds,
        out_dir.display()
    );
    Ok(manifest.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err((code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
