//! `vortexgas`: reproducible numerical experiments on the torus vortex gas.

mod config;
mod experiments;
mod manifest;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::Params;
use experiments::Experiment;
use manifest::{RunManifest, RunStatus};

#[derive(Parser)]
#[command(name = "vortexgas", version, about = "Numerical experiments on the point-vortex gas on the unit torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Splitting G = W_m + V_m on the kernel grid; writes the kernel tables.
    Kernels(RunArgs),
    /// Norm and exponential moments of the smooth Gaussian field against log m.
    FieldMoments(RunArgs),
    /// Both sides of the Sine-Gordon representation for N in {2, 4}.
    SineGordon(RunArgs),
    /// Exponential integral inequalities on random mean-zero functions.
    Inequalities(RunArgs),
    /// Smooth-part, screened-part and full partition functions.
    Partitions(RunArgs),
    /// Remainder expansion identity and decay of E|R_k| along m = N^a.
    Remainder(RunArgs),
    /// Decorrelation rate of the two-point correlation function in N.
    Rate(RunArgs),
    /// Every experiment above, one manifest.
    All(RunArgs),
    /// Plumbing: merge run manifests into one markdown table.
    Report {
        /// Manifest files (manifest.json of earlier runs).
        manifests: Vec<PathBuf>,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Shared options; every `--key value` is also accepted as `key = value` in
/// the config file, and the command line wins.
#[derive(Args, Default)]
struct RunArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed.
    #[arg(long)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Inverse temperature (comma list where the experiment takes several).
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    /// Vortex count N, comma list, or doubling range such as 8..64.
    #[arg(long)]
    n: Option<String>,
    /// Mass or comma list of masses.
    #[arg(long)]
    m: Option<String>,
    /// Exponent of the schedule m = N^a.
    #[arg(long)]
    a: Option<String>,
    /// Fourier cutoff K.
    #[arg(long)]
    cutoff: Option<String>,
    /// Grid points per axis for kernel tables.
    #[arg(long)]
    grid_n: Option<String>,
    /// Monte Carlo samples or random instances.
    #[arg(long)]
    samples: Option<String>,
    /// Histogram bins per axis.
    #[arg(long)]
    bins: Option<String>,
    /// Exponent of the L^p distance.
    #[arg(long)]
    p: Option<String>,
    /// Fixed positive vortices in the correlation function.
    #[arg(long)]
    h: Option<String>,
    /// Fixed negative vortices in the correlation function.
    #[arg(long)]
    l: Option<String>,
    /// Fixed vortices in the remainder.
    #[arg(long)]
    k: Option<String>,
    /// Expansion order n.
    #[arg(long)]
    order: Option<String>,
    /// Exponential-moment parameter.
    #[arg(long)]
    alpha: Option<String>,
    /// Second exponential-moment parameter.
    #[arg(long)]
    alpha2: Option<String>,
    /// Recorded configurations per N (or quadrature samples).
    #[arg(long)]
    records: Option<String>,
    /// Markov chains per N.
    #[arg(long)]
    chains: Option<String>,
}

impl RunArgs {
    fn params(&self) -> Result<Params> {
        let mut p = match &self.config {
            Some(path) => Params::load(path)?,
            None => Params::default(),
        };
        let pairs = [
            ("seed", &self.seed),
            ("out", &self.out),
            ("beta", &self.beta),
            ("n", &self.n),
            ("m", &self.m),
            ("a", &self.a),
            ("cutoff", &self.cutoff),
            ("grid_n", &self.grid_n),
            ("samples", &self.samples),
            ("bins", &self.bins),
            ("p", &self.p),
            ("h", &self.h),
            ("l", &self.l),
            ("k", &self.k),
            ("order", &self.order),
            ("alpha", &self.alpha),
            ("alpha2", &self.alpha2),
            ("records", &self.records),
            ("chains", &self.chains),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                p.set(k, v)?;
            }
        }
        Ok(p)
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(s) = std::env::var("VORTEXGAS_THREADS") {
        let n: usize = s
            .trim()
            .parse()
            .with_context(|| format!("config-invalid: VORTEXGAS_THREADS = `{s}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

/// Exit code of a completed run.
fn run_experiment(exp: Experiment, args: &RunArgs) -> Result<i32> {
    let params = args.params().context("config-invalid")?;
    let out = PathBuf::from(params.out_dir());
    let started = manifest::unix_now();
    let outcome = experiments::run(exp, &params, &out)?;
    let status = if outcome.noise_dominated {
        RunStatus::NoiseDominated
    } else if outcome.verdicts.iter().all(|v| v.passed) {
        RunStatus::Pass
    } else {
        RunStatus::ContractViolation
    };
    let m = RunManifest {
        tool_version: manifest::tool_version(),
        experiment: exp.name().to_string(),
        config: params.resolved(),
        started_unix: started,
        finished_unix: manifest::unix_now(),
        status,
        verdicts: outcome.verdicts,
        outputs: outcome.outputs,
    };
    m.write_atomic(&out.join("manifest.json"))?;
    for v in &m.verdicts {
        let tag = if v.passed { "pass" } else { "FAIL" };
        println!("{tag:4}  {:28} margin {:>12.4e}  {}", v.check, v.worst_margin, v.detail);
    }
    match status {
        RunStatus::Pass => {}
        RunStatus::ContractViolation => {
            for v in m.verdicts.iter().filter(|v| !v.passed) {
                eprintln!("contract-violation: {} (margin {:e})", v.check, v.worst_margin);
            }
        }
        RunStatus::NoiseDominated => eprintln!("noise-dominated: the rate experiment is inconclusive"),
    }
    Ok(status.exit_code())
}

fn run_report(manifests: &[PathBuf], out: Option<&Path>) -> Result<i32> {
    let text = report::render(manifests)?;
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Kernels(a) => run_experiment(Experiment::Kernels, a),
        Command::FieldMoments(a) => run_experiment(Experiment::FieldMoments, a),
        Command::SineGordon(a) => run_experiment(Experiment::SineGordon, a),
        Command::Inequalities(a) => run_experiment(Experiment::Inequalities, a),
        Command::Partitions(a) => run_experiment(Experiment::Partitions, a),
        Command::Remainder(a) => run_experiment(Experiment::Remainder, a),
        Command::Rate(a) => run_experiment(Experiment::Rate, a),
        Command::All(a) => run_experiment(Experiment::All, a),
        Command::Report { manifests, out } => run_report(manifests, out.as_deref()),
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
