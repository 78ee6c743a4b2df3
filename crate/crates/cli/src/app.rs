//! Command-line surface: subcommands, overrides, run directory and manifest.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::certify::*;
use crate::config::{ConfigError, Experiment, ExperimentConfig};
use crate::dissipation::*;
use crate::mixing::{run_mixing_sweep, write_mixing_curve};
use crate::output::{Manifest, RunDir};

#[derive(Debug, Parser)]
#[command(name = "shearmix", version, about = "Randomly shifted alternating shear flows: mixing and two-point chain experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve one scalar field and record its norms.
    Simulate(RunArgs),
    /// Uniform mixing time against ln(1/κ), with the heat-only baseline.
    MixingSweep(RunArgs),
    /// Moments of the dissipation prefactor D̂ across κ.
    EdVerify(RunArgs),
    /// Lyapunov drift certificate, negative control and κ-stability.
    DriftCert(RunArgs),
    /// Difference-chain gate, then Ulam spectral gaps and contraction.
    UlamGap(RunArgs),
    /// Top Lyapunov exponent of the deterministic flow.
    Exponent(RunArgs),
    /// Correlation decay rates and D̂ moments from particle ensembles.
    Correlations(RunArgs),
    /// κ-exponent of the L¹ → H^α smoothing ratio.
    Smoothing(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON config, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace the configured seed list by this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Command {
    fn parts(&self) -> (Experiment, &'static str, &RunArgs) {
        match self {
            Command::Simulate(a) => (Experiment::Simulate, "simulate", a),
            Command::MixingSweep(a) => (Experiment::MixingSweep, "mixing-sweep", a),
            Command::EdVerify(a) => (Experiment::EdVerify, "ed-verify", a),
            Command::DriftCert(a) => (Experiment::DriftCert, "drift-cert", a),
            Command::UlamGap(a) => (Experiment::UlamGap, "ulam-gap", a),
            Command::Exponent(a) => (Experiment::Exponent, "exponent", a),
            Command::Correlations(a) => (Experiment::Correlations, "correlations", a),
            Command::Smoothing(a) => (Experiment::SmoothingScaling, "smoothing", a),
        }
    }
}

/// What the run concluded; a failed gate is a runtime failure.
#[derive(Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub failed: Option<String>,
}

pub fn resolve_config(cmd: &Command) -> anyhow::Result<ExperimentConfig> {
    let (experiment, name, args) = cmd.parts();
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_for(experiment),
    };
    if cfg.experiment != experiment {
        return Err(ConfigError(format!(
            "subcommand {name} cannot run a {:?} config",
            cfg.experiment
        ))
        .into());
    }
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn install_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(ConfigError("--threads must be >= 1".into()).into());
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let (_, name, args) = cli.command.parts();
    install_threads(args.threads)?;
    let cfg = resolve_config(&cli.command)?;
    let start = Instant::now();
    let mut out = RunDir::create(&cfg.output_dir)?;
    let mut manifest = Manifest::new(name, &cfg);
    let mut failed = None;
    let warnings = match &cli.command {
        Command::Simulate(_) => run_simulate(&cfg, &mut out)?,
        Command::MixingSweep(_) => {
            let curve = run_mixing_sweep(&cfg)?;
            write_mixing_curve(&curve, &cfg.seeds, &mut out)?;
            curve.warnings
        }
        Command::EdVerify(_) => {
            let rep = run_ed_verify(&cfg)?;
            write_ed_report(&rep, &mut out)?;
            let mut w = rep.warnings;
            for t in rep.trends.iter().filter(|t| t.flagged) {
                w.push(format!("moment q={} varies with κ (max z = {:.2})", t.q, t.max_z.unwrap_or(0.0)));
            }
            w
        }
        Command::DriftCert(_) => {
            let rep = run_drift_cert(&cfg)?;
            write_drift_cert(&rep, &mut out)?;
            rep.warnings
        }
        Command::UlamGap(_) => {
            let rep = run_ulam_gap(&cfg)?;
            write_ulam_report(&rep, &mut out)?;
            if !rep.gate_pass {
                failed = Some("difference-chain gate failed".to_string());
            }
            rep.warnings
        }
        Command::Exponent(_) => {
            let rep = run_exponent(&cfg)?;
            out.write_json("exponent.json", &rep)?;
            Vec::new()
        }
        Command::Correlations(_) => {
            let rep = run_correlations(&cfg)?;
            write_correlations(&rep, &mut out)?;
            rep.warnings
        }
        Command::Smoothing(_) => {
            let rep = run_smoothing_scaling(&cfg)?;
            write_smoothing_report(&rep, &mut out)?;
            Vec::new()
        }
    };
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.warnings = warnings;
    manifest.outputs = out.written().to_vec();
    out.write_json("manifest.json", &manifest)?;
    Ok(Outcome {
        out_dir: out.root().to_path_buf(),
        manifest,
        failed,
    })
}
