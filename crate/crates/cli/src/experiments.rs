//! One function per experiment: run the owning module, write CSV/SVG
//! artifacts and turn the contracts into verdicts.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use vortexgas_core::expansion::{
    expansion_identity_check, inequality_suite, regular_partition_check, remainder_moment_study,
    sine_gordon_batch, taylor_step_check, write_inequality_csv, write_remainder_csv,
    write_verdicts_csv, yukawa_partition_check,
};
use vortexgas_core::field::{
    exp_moment_diff_check, exp_moment_study, l2_moment_study, slope_against_log_mass,
    write_moment_csv,
};
use vortexgas_core::gibbs::boltzmann_average;
use vortexgas_core::kernels::{truncated_grid, KernelKind, KernelSpec, KernelTable};
use vortexgas_core::meanfield::{run_rate_series, write_rate_csv, write_rate_svg, RateConfig};
use vortexgas_core::rng;

use crate::config::Params;
use crate::manifest::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Kernels,
    FieldMoments,
    SineGordon,
    Inequalities,
    Partitions,
    Remainder,
    Rate,
    All,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Kernels => "kernels",
            Self::FieldMoments => "field-moments",
            Self::SineGordon => "sine-gordon",
            Self::Inequalities => "inequalities",
            Self::Partitions => "partitions",
            Self::Remainder => "remainder",
            Self::Rate => "rate",
            Self::All => "all",
        }
    }
}

/// Verdicts and written files of one run.
#[derive(Debug, Default)]
pub struct Outcome {
    pub verdicts: Vec<Verdict>,
    pub outputs: Vec<String>,
    pub noise_dominated: bool,
}

struct Sink<'a> {
    dir: &'a Path,
    outcome: Outcome,
}

impl Sink<'_> {
    fn write(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let path: PathBuf = self.dir.join(name);
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
        self.outcome.outputs.push(name.to_string());
        Ok(())
    }

    fn verdict(&mut self, v: Verdict) {
        self.outcome.verdicts.push(v);
    }
}

/// Runs `exp`, writing artifacts into `dir` (created if needed).
pub fn run(exp: Experiment, params: &Params, dir: &Path) -> Result<Outcome> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut sink = Sink {
        dir,
        outcome: Outcome::default(),
    };
    match exp {
        Experiment::Kernels => kernels(params, &mut sink)?,
        Experiment::FieldMoments => field_moments(params, &mut sink)?,
        Experiment::SineGordon => sine_gordon(params, &mut sink)?,
        Experiment::Inequalities => inequalities(params, &mut sink)?,
        Experiment::Partitions => partitions(params, &mut sink)?,
        Experiment::Remainder => remainder(params, &mut sink)?,
        Experiment::Rate => rate(params, &mut sink)?,
        Experiment::All => {
            kernels(params, &mut sink)?;
            field_moments(params, &mut sink)?;
            sine_gordon(params, &mut sink)?;
            inequalities(params, &mut sink)?;
            partitions(params, &mut sink)?;
            remainder(params, &mut sink)?;
            rate(params, &mut sink)?;
        }
    }
    Ok(sink.outcome)
}

/// `|G - W_m - V_m|` on a `grid_n^2` displacement grid, each kernel summed
/// independently from its own Fourier multiplier; also writes the
/// (untruncated) kernel tables.
fn kernels(params: &Params, sink: &mut Sink) -> Result<()> {
    let masses = params.list_f64("m", &[2.0, 5.0, 10.0, 20.0])?;
    let grid_n: usize = params.get("grid_n", 128)?;
    let cutoff: Option<usize> = params.get_opt("cutoff")?;
    let mut rows = Vec::new();
    for &m in &masses {
        let k = cutoff.unwrap_or_else(|| KernelSpec::default_cutoff(m));
        // A multiple of grid_n fine enough that no mode aliases.
        let mut fine = grid_n;
        while fine <= 2 * k {
            fine += grid_n;
        }
        let stride = fine / grid_n;
        let spec = KernelSpec::new(m, k, fine)?;
        let g = truncated_grid(KernelKind::Green, &spec)?;
        let w = truncated_grid(KernelKind::Yukawa, &spec)?;
        let v = truncated_grid(KernelKind::Smooth, &spec)?;
        let mut max_err = 0.0f64;
        for i in (0..fine).step_by(stride) {
            for j in (0..fine).step_by(stride) {
                if (i, j) != (0, 0) {
                    let c = i * fine + j;
                    max_err = max_err.max((g[c] - w[c] - v[c]).abs());
                }
            }
        }
        rows.push((m, k, max_err));
        let tables = KernelTable::build_all(&KernelSpec::new(m, k, grid_n)?)?;
        for t in &tables {
            sink.write(&format!("kernel_{}_m{m}.csv", t.kind().name()), |out| t.write_csv(out))?;
        }
    }
    sink.write("splitting.csv", |w| {
        writeln!(w, "m,cutoff,max_abs_error")?;
        for (m, k, e) in &rows {
            writeln!(w, "{m},{k},{e}")?;
        }
        Ok(())
    })?;
    let margins: Vec<f64> = rows.iter().map(|(_, _, e)| 1e-10 - e).collect();
    let worst = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    sink.verdict(Verdict::from_margins(
        "splitting-identity",
        &margins,
        format!("max |G - W - V| = {worst:e} on a {grid_n}^2 displacement grid (tolerance 1e-10)"),
    ));
    Ok(())
}

fn field_moments(params: &Params, sink: &mut Sink) -> Result<()> {
    let masses = params.list_f64("m", &[8.0, 16.0, 32.0, 64.0, 128.0])?;
    let samples: usize = params.get("samples", 1000)?;
    let alpha: f64 = params.get("alpha", 1.0)?;
    let alpha2: f64 = params.get("alpha2", 1.5)?;
    let seed: u64 = params.get("seed", 1)?;

    let l2 = l2_moment_study(&masses, samples, seed)?;
    sink.write("l2_moments.csv", |w| write_moment_csv(&l2, "p", w))?;
    let mc: Vec<f64> = l2.iter().map(|r| r.mc.value).collect();
    let fit = slope_against_log_mass(&masses, &mc);
    let target = 1.0 / (2.0 * PI);
    sink.verdict(Verdict::from_margin(
        "l2-moment-slope",
        0.1 * target - (fit.slope - target).abs(),
        format!("slope {:.5} vs 1/(2 pi) = {target:.5} (10%)", fit.slope),
    ));

    let exp = exp_moment_study(&masses, alpha, samples, rng::labelled_seed(seed, 1))?;
    sink.write("exp_moments.csv", |w| write_moment_csv(&exp, "alpha", w))?;
    let ln_analytic: Vec<f64> = exp.iter().map(|r| r.analytic.ln()).collect();
    let log_masses: Vec<f64> = masses.iter().map(|m| m.ln()).collect();
    let fit = vortexgas_core::stats::linear_fit(&log_masses, &ln_analytic);
    let target = -alpha / (2.0 * PI);
    sink.verdict(Verdict::from_margin(
        "exp-moment-slope",
        0.1 * target.abs() - (fit.slope - target).abs(),
        format!("slope of log E[exp(-alpha |F|^2)] {:.5} vs {target:.5} (10%)", fit.slope),
    ));
    let margins: Vec<f64> = exp
        .iter()
        .map(|r| 3.0 * r.mc.stderr - (r.mc.value - r.analytic).abs())
        .collect();
    sink.verdict(Verdict::from_margins(
        "exp-moment-mc",
        &margins,
        "Monte Carlo within 3 sigma of the closed form at each mass".into(),
    ));

    let diff = exp_moment_diff_check(alpha, alpha2, &masses)?;
    sink.write("exp_moment_diff.csv", |w| {
        writeln!(w, "m,difference,ratio")?;
        for r in &diff.rows {
            writeln!(w, "{},{},{}", r.mass, r.difference, r.ratio)?;
        }
        Ok(())
    })?;
    sink.verdict(Verdict::from_margin(
        "exp-moment-diff-trend",
        2.0 * diff.trend.slope_stderr - diff.trend.slope,
        format!(
            "ratio slope vs log m {:.5} +- {:.5} (must be <= 0 within 2 sigma)",
            diff.trend.slope, diff.trend.slope_stderr
        ),
    ));
    sink.verdict(Verdict::from_margin(
        "exp-moment-diff-bounded",
        10.0 - diff.max_ratio,
        format!("largest ratio {:.5} (must be <= 10)", diff.max_ratio),
    ));
    Ok(())
}

fn sine_gordon(params: &Params, sink: &mut Sink) -> Result<()> {
    let betas = params.list_f64("beta", &[0.5, 1.0, 2.0])?;
    let ns = params.list_usize("n", &[2, 4])?;
    let masses = params.list_f64("m", &[3.0, 5.0, 10.0])?;
    let samples: usize = params.get("samples", 100_000)?;
    let lhs_samples: usize = params.get("records", 1_000_000)?;
    let cutoff: Option<usize> = params.get_opt("cutoff")?;
    let seed: u64 = params.get("seed", 1)?;
    let mut results = Vec::new();
    for (i, &m) in masses.iter().enumerate() {
        let k = cutoff.unwrap_or(4 * m.ceil() as usize);
        // The identity is exact on any grid that resolves V_m^K without
        // aliasing, so the smallest such grid is used.
        let spec = KernelSpec::new(m, k, 2 * k + 2)?;
        results.extend(sine_gordon_batch(
            &betas,
            &ns,
            &spec,
            samples,
            lhs_samples,
            rng::derived_seed(seed, i as u64),
        )?);
    }
    sink.write("sine_gordon.csv", |w| {
        writeln!(w, "N,beta,m,lhs,lhs_stderr,rhs,rhs_stderr,relative_discrepancy")?;
        for r in &results {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.n_vortices,
                r.beta,
                r.mass,
                r.lhs.value,
                r.lhs.stderr,
                r.rhs.value,
                r.rhs.stderr,
                r.relative_discrepancy()
            )?;
        }
        Ok(())
    })?;
    let margins: Vec<f64> = results
        .iter()
        .map(|r| 3.0 * (r.rhs.stderr + r.lhs.stderr) - (r.lhs.value - r.rhs.value).abs())
        .collect();
    sink.verdict(Verdict::from_margins(
        "sine-gordon-identity",
        &margins,
        "|LHS - RHS| <= 3 sigma_RHS + quadrature tolerance (3 sigma_LHS)".into(),
    ));
    let rel: Vec<f64> = results
        .iter()
        .filter(|r| r.n_vortices == 2)
        .map(|r| 0.02 - r.relative_discrepancy())
        .collect();
    if !rel.is_empty() {
        sink.verdict(Verdict::from_margins(
            "sine-gordon-n2-relative",
            &rel,
            "relative discrepancy <= 2% at N = 2".into(),
        ));
    }
    Ok(())
}

fn inequalities(params: &Params, sink: &mut Sink) -> Result<()> {
    let samples: usize = params.get("samples", 10_000)?;
    let seed: u64 = params.get("seed", 1)?;
    let (rows, verdicts) = inequality_suite(samples, seed)?;
    sink.write("inequality_instances.csv", |w| write_inequality_csv(&rows, w))?;
    sink.write("inequality_verdicts.csv", |w| write_verdicts_csv(&verdicts, w))?;
    for v in &verdicts {
        sink.verdict(v.into());
    }
    Ok(())
}

fn partitions(params: &Params, sink: &mut Sink) -> Result<()> {
    let samples: usize = params.get("samples", 200_000)?;
    let seed: u64 = params.get("seed", 1)?;
    let a: f64 = params.get("a", 1.25)?;
    let ns = params.list_usize("n", &[8, 16, 32, 64, 128])?;

    // The N = 128 configurations cost 8128 pair evaluations each.
    let regular = regular_partition_check(1.0, &ns, a, (samples / 10).max(100), seed)?;
    sink.write("regular_partition.csv", |w| {
        writeln!(w, "N,m,z,stderr")?;
        for r in &regular.rows {
            writeln!(w, "{},{},{},{}", r.n_vortices, r.mass, r.z.value, r.z.stderr)?;
        }
        Ok(())
    })?;
    let spread = regular.spread();
    sink.verdict(Verdict::from_margin(
        "regular-partition-bounded",
        10.0 - spread,
        format!("max/min = {spread:.5} along m = N^{a} (must be < 10)"),
    ));

    let masses = params.list_f64("m", &[4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0])?;
    let yukawa = yukawa_partition_check(1.0, 8, &masses, samples, rng::labelled_seed(seed, 2))?;
    sink.write("yukawa_partition.csv", |w| {
        writeln!(w, "m,lhs,lhs_stderr,g,g_stderr")?;
        for r in &yukawa.rows {
            writeln!(w, "{},{},{},{},{}", r.mass, r.lhs.value, r.lhs.stderr, r.g.value, r.g.stderr)?;
        }
        Ok(())
    })?;
    let (slope, err) = yukawa.trend.map_or((f64::NAN, f64::NAN), |t| (t.slope, t.slope_stderr));
    sink.verdict(Verdict::from_margin(
        "yukawa-partition-decay",
        2.0 * err - slope,
        format!("slope of g vs log m {slope:.5} +- {err:.5} (must be <= 0 within 2 sigma)"),
    ));

    let spec = KernelSpec::with_default_cutoff(1.0)?;
    let green = KernelTable::build(KernelKind::Green, &spec)?;
    let mut rows = Vec::new();
    for beta in [1.0, 2.0] {
        for n in [2usize, 4, 8, 16] {
            let s = rng::derived_seed(rng::labelled_seed(seed, 3), n as u64 + 100 * beta as u64);
            let z = boltzmann_average(&green, n, beta / n as f64, samples, s)?;
            rows.push((beta, n, z));
        }
    }
    sink.write("jensen.csv", |w| {
        writeln!(w, "beta,N,z,stderr")?;
        for (b, n, z) in &rows {
            writeln!(w, "{b},{n},{},{}", z.value, z.stderr)?;
        }
        Ok(())
    })?;
    let margins: Vec<f64> = rows
        .iter()
        .filter(|r| r.1 >= 4)
        .map(|(_, _, z)| z.value - 1.0 + 3.0 * z.stderr)
        .collect();
    sink.verdict(Verdict::from_margins(
        "jensen-lower-bound",
        &margins,
        "Z >= 1 within 3 sigma for beta in {1,2}, N in {4,8,16}".into(),
    ));
    Ok(())
}

/// Fitted slope `s` must satisfy `s <= -0.35` and `s + 2 stderr < 0`.
fn decay_margin(slope: f64, stderr: f64) -> f64 {
    (-0.35 - slope).min(-(slope + 2.0 * stderr))
}

fn remainder(params: &Params, sink: &mut Sink) -> Result<()> {
    let beta: f64 = params.get("beta", 1.0)?;
    let ns = params.list_usize("n", &[8, 16, 32, 64, 128])?;
    let a: f64 = params.get("a", 1.25)?;
    let k: usize = params.get("k", 2)?;
    let order: Option<usize> = params.get_opt("order")?;
    let samples: usize = params.get("samples", 400)?;
    let seed: u64 = params.get("seed", 1)?;

    sink.verdict((&expansion_identity_check(1000, 64, 4, rng::labelled_seed(seed, 4))).into());

    let spec = KernelSpec::with_default_cutoff(8.0)?;
    let step = taylor_step_check(1.0, 16, &spec, 1000, 1e-9, rng::labelled_seed(seed, 5))?;
    sink.verdict((&step).into());

    let study = remainder_moment_study(beta, &ns, a, k, order, samples, seed)?;
    sink.write("remainder.csv", |w| write_remainder_csv(&study, w))?;
    let identity: Vec<f64> = study
        .rows
        .iter()
        .map(|r| 1e-12 * r.n_vortices as f64 - r.identity_error)
        .collect();
    sink.verdict(Verdict::from_margins(
        "remainder-study-identity",
        &identity,
        "expansion reproduces the sampled remainders to 1e-12 N".into(),
    ));
    let v = match study.fit {
        Some(f) => Verdict::from_margin(
            "remainder-decay",
            decay_margin(f.slope, f.slope_stderr),
            format!("exponent {:.4} +- {:.4} (must be <= -0.35, with 2 sigma below 0)", f.slope, f.slope_stderr),
        ),
        None => Verdict::from_margin("remainder-decay", f64::NAN, "no positive remainders to fit".into()),
    };
    sink.verdict(v);
    Ok(())
}

fn rate(params: &Params, sink: &mut Sink) -> Result<()> {
    let beta: f64 = params.get("beta", 1.0)?;
    let ns = params.list_usize("n", &[8, 16, 32, 64])?;
    let p: f64 = params.get("p", 2.0)?;
    let h: usize = params.get("h", 1)?;
    let l: usize = params.get("l", 1)?;
    let d = RateConfig::default();
    let cfg = RateConfig {
        bins: params.get("bins", d.bins)?,
        n_records: params.get("records", d.n_records)?,
        n_chains: params.get("chains", d.n_chains)?,
        seed: params.get("seed", d.seed)?,
        ..d
    };
    let series = run_rate_series(beta, p, (h, l), &ns, &cfg)?;
    sink.write("rate.csv", |w| write_rate_csv(&series, w))?;
    sink.write("rate.svg", |w| write_rate_svg(&series, w))?;
    let corrected = series
        .fit_log_corrected
        .map_or("none".to_string(), |f| format!("{:.4} +- {:.4}", f.slope, f.slope_stderr));
    if series.noise_dominated {
        sink.outcome.noise_dominated = true;
        let last = series.entries.last().expect("validated grid");
        sink.verdict(Verdict::from_margin(
            "rate-signal",
            last.distance.value - 2.0 * last.noise_floor.value,
            format!(
                "noise-dominated: corrected distance {:e} below twice the floor {:e} at N = {}",
                last.distance.value, last.noise_floor.value, last.n_vortices
            ),
        ));
    } else {
        let v = match series.fit {
            Some(f) => Verdict::from_margin(
                "rate-slope",
                decay_margin(f.slope, f.slope_stderr),
                format!(
                    "slope {:.4} +- {:.4}; with (log N)^(3/2) factor removed: {corrected}",
                    f.slope, f.slope_stderr
                ),
            ),
            None => Verdict::from_margin("rate-slope", f64::NAN, "fit impossible".into()),
        };
        sink.verdict(v);
    }
    Ok(())
}
