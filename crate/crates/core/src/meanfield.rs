//! Mean-field free energy, the sinh-Poisson residual and the decorrelation
//! rate experiment.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{self, Write};

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::gibbs::{correlation_estimate, lp_distance, ChainSettings, EnsembleParams};
use crate::kernels::{KernelKind, KernelSpec, KernelTable};
use crate::rng;
use crate::stats::{weighted_linear_fit, Estimate, EstimateMethod, LinearFit};
use crate::sum::NeumaierSum;

/// Positive and negative vortex densities on an `n x n` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPair {
    n: usize,
    rho_plus: Vec<f64>,
    rho_minus: Vec<f64>,
}

impl DensityPair {
    /// Checks nonnegativity, finiteness and grid mean 1 (within 1e-10).
    pub fn new(n: usize, rho_plus: Vec<f64>, rho_minus: Vec<f64>) -> Result<Self> {
        for (name, rho) in [("rho_plus", &rho_plus), ("rho_minus", &rho_minus)] {
            if rho.len() != n * n {
                return Err(Error::InvalidDensity(format!(
                    "{name} has {} values, expected {}",
                    rho.len(),
                    n * n
                )));
            }
            if let Some(v) = rho.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidDensity(format!("{name} has value {v}")));
            }
            let mean = crate::sum::mean(rho);
            if (mean - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidDensity(format!("{name} has grid mean {mean}")));
            }
        }
        Ok(Self {
            n,
            rho_plus,
            rho_minus,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            n,
            rho_plus: vec![1.0; n * n],
            rho_minus: vec![1.0; n * n],
        }
    }

    pub fn grid_n(&self) -> usize {
        self.n
    }

    pub fn rho_plus(&self) -> &[f64] {
        &self.rho_plus
    }

    pub fn rho_minus(&self) -> &[f64] {
        &self.rho_minus
    }
}

fn x_log_x(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Signed frequency of FFT index `i` on an `n`-point axis.
fn frequency(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// `(1/β) ∫(ρ₊ log ρ₊ + ρ₋ log ρ₋) + ∫ (ρ₊ - ρ₋) G * (ρ₊ - ρ₋)`.
///
/// The entropy is a grid average; the interaction is evaluated spectrally
/// as `Σ_{k≠0} |û_k|² / (4π²|k|²)` for the trigonometric interpolant of
/// `u = ρ₊ - ρ₋`.
pub fn free_energy(d: &DensityPair, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParams(format!("beta must be positive, got {beta}")));
    }
    let n = d.n;
    let entropy: NeumaierSum = d
        .rho_plus
        .iter()
        .chain(&d.rho_minus)
        .map(|&x| x_log_x(x))
        .collect();
    let entropy = entropy.value() / (n * n) as f64;

    let mut u: Vec<Complex64> = d
        .rho_plus
        .iter()
        .zip(&d.rho_minus)
        .map(|(a, b)| Complex64::new(a - b, 0.0))
        .collect();
    Fft2::new(n).forward(&mut u);
    let norm = 1.0 / (n * n) as f64;
    let mut interaction = NeumaierSum::new();
    for i in 0..n {
        for j in 0..n {
            let q = frequency(i, n).powi(2) + frequency(j, n).powi(2);
            if q > 0.0 {
                interaction.add((u[i * n + j] * norm).norm_sqr() / (4.0 * PI * PI * q));
            }
        }
    }
    Ok(entropy / beta + interaction.value())
}

/// A random admissible perturbation `ρ± = 1 + ε u±`: band-limited (`|k| ≤ 4`)
/// mean-zero `u±` scaled to `‖ε u±‖_∞ ≤ 0.5`.
pub fn random_perturbation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DensityPair {
    let draw = |rng: &mut R| {
        let mut c = vec![Complex64::default(); n * n];
        for k1 in -4i64..=4 {
            for k2 in -4i64..=4 {
                if (k1, k2) > (0, 0) && k1 * k1 + k2 * k2 <= 16 {
                    let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    let idx = |k: i64| k.rem_euclid(n as i64) as usize;
                    c[idx(k1) * n + idx(k2)] = z;
                    c[idx(-k1) * n + idx(-k2)] = z.conj();
                }
            }
        }
        Fft2::new(n).inverse(&mut c);
        let u: Vec<f64> = c.iter().map(|z| z.re).collect();
        let max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = 0.5 * rng.random_range(0.0..1.0f64).max(1e-3) / max;
        u.iter().map(|v| 1.0 + scale * v).collect::<Vec<f64>>()
    };
    let rho_plus = renormalise(draw(rng));
    let rho_minus = renormalise(draw(rng));
    DensityPair::new(n, rho_plus, rho_minus).expect("perturbation is a valid density")
}

/// Removes the rounding-level drift of the grid mean from 1.
fn renormalise(mut rho: Vec<f64>) -> Vec<f64> {
    let mean = crate::sum::mean(&rho);
    rho.iter_mut().for_each(|v| *v /= mean);
    rho
}

/// Residual of `Δψ = (1/α) sinh(βψ)` and defect of `4α² = ∫e^{-βψ} ∫e^{βψ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinhPoissonResidual {
    /// Grid `L²` norm of `Δψ - (1/α) sinh(βψ)`.
    pub residual: f64,
    pub consistency_defect: f64,
}

/// Evaluates the sinh-Poisson residual of `psi` on an `n x n` grid, with the
/// Laplacian by spectral differentiation.
pub fn sinh_poisson_residual(psi: &[f64], n: usize, beta: f64, alpha: f64) -> SinhPoissonResidual {
    assert_eq!(psi.len(), n * n, "psi must hold n*n values");
    let mut c: Vec<Complex64> = psi.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let fft = Fft2::new(n);
    fft.forward(&mut c);
    let norm = 1.0 / (n * n) as f64;
    for i in 0..n {
        for j in 0..n {
            let q = frequency(i, n).powi(2) + frequency(j, n).powi(2);
            c[i * n + j] *= -4.0 * PI * PI * q * norm;
        }
    }
    fft.inverse(&mut c);
    let res: NeumaierSum = psi
        .iter()
        .zip(&c)
        .map(|(&x, lap)| (lap.re - (beta * x).sinh() / alpha).powi(2))
        .collect();
    let minus: NeumaierSum = psi.iter().map(|&x| (-beta * x).exp()).collect();
    let plus: NeumaierSum = psi.iter().map(|&x| (beta * x).exp()).collect();
    let defect = 4.0 * alpha * alpha - minus.value() * norm * plus.value() * norm;
    SinhPoissonResidual {
        residual: (res.value() * norm).sqrt(),
        consistency_defect: defect.abs(),
    }
}

/// Monte Carlo settings for the rate experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConfig {
    pub bins: usize,
    /// Recorded configurations per `N`, split evenly over the chains.
    pub n_records: usize,
    pub n_chains: usize,
    pub n_batches: usize,
    pub proposal_sigma: f64,
    pub seed: u64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            bins: 8,
            n_records: 1_000_000,
            n_chains: 4,
            n_batches: 20,
            proposal_sigma: 0.4,
            seed: 1,
        }
    }
}

/// Label separating the calibration run's seeds from the main run's.
const CALIBRATION_LABEL: u64 = 0xCA1B;

/// One `N` of the rate experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEntry {
    pub n_vortices: usize,
    /// Distance after subtracting the calibration distance in quadrature.
    pub distance: Estimate,
    /// Raw `L^p` distance of the histogram from 1.
    pub raw: Estimate,
    /// The same distance in a `β = 0` run with identical settings.
    pub noise_floor: Estimate,
    pub acceptance_rate: f64,
}

/// Distances and fitted decay exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSeries {
    pub beta: f64,
    pub p: f64,
    pub h: usize,
    pub l: usize,
    pub entries: Vec<RateEntry>,
    /// `log d = c + s log N`.
    pub fit: Option<LinearFit>,
    /// `log d - (3/2) log log N = c + s log N`.
    pub fit_log_corrected: Option<LinearFit>,
    /// Corrected distance below twice the noise floor at the largest `N`.
    pub noise_dominated: bool,
}

impl RateSeries {
    /// Fails with `NoiseDominated` when the experiment is inconclusive.
    pub fn require_signal(&self) -> Result<()> {
        match self.entries.last() {
            Some(e) if self.noise_dominated => Err(Error::NoiseDominated {
                n: e.n_vortices,
                signal: e.distance.value,
                floor: e.noise_floor.value,
            }),
            _ => Ok(()),
        }
    }
}

fn distance_at(
    beta: f64,
    n: usize,
    h: usize,
    l: usize,
    p: f64,
    kernel: &KernelTable,
    cfg: &RateConfig,
    seed: u64,
) -> Result<(Estimate, f64)> {
    let params = EnsembleParams::new(beta, n, h, l)?;
    let settings = ChainSettings {
        n_chains: cfg.n_chains,
        n_records: cfg.n_records.div_ceil(cfg.n_chains.max(1)),
        n_batches: cfg.n_batches,
        proposal_sigma: cfg.proposal_sigma,
        ..ChainSettings::defaults(n, cfg.bins, 0)
    };
    let (est, acc) = correlation_estimate(&params, kernel, cfg.bins, &settings, seed)?;
    Ok((lp_distance(&est, p).distance, acc))
}

/// `sqrt(max(d² - d0², 0))` with a first-order error.
fn subtract_in_quadrature(d: Estimate, d0: Estimate) -> Estimate {
    let diff = d.value * d.value - d0.value * d0.value;
    let value = diff.max(0.0).sqrt();
    let var = (d.value * d.stderr).powi(2) + (d0.value * d0.stderr).powi(2);
    let stderr = if value > 0.0 {
        var.sqrt() / value
    } else {
        // At zero the first-order error degenerates; use the half-width of
        // the one-sigma interval of d² - d0².
        var.sqrt().sqrt()
    };
    Estimate {
        value,
        stderr,
        n_samples: d.n_samples,
        method: EstimateMethod::Jackknife,
    }
}

fn fit_entries(entries: &[RateEntry], log_correction: bool) -> Option<LinearFit> {
    let pts: Vec<&RateEntry> = entries.iter().filter(|e| e.distance.value > 0.0).collect();
    if pts.len() < 3 {
        return None;
    }
    let x: Vec<f64> = pts.iter().map(|e| (e.n_vortices as f64).ln()).collect();
    let y: Vec<f64> = pts
        .iter()
        .map(|e| {
            let ln_n = (e.n_vortices as f64).ln();
            let corr = if log_correction { 1.5 * ln_n.ln() } else { 0.0 };
            e.distance.value.ln() - corr
        })
        .collect();
    let s: Vec<f64> = pts
        .iter()
        .map(|e| (e.distance.stderr / e.distance.value).max(1e-12))
        .collect();
    Some(weighted_linear_fit(&x, &y, &s))
}

/// Runs the experiment and returns the series even when it is
/// noise-dominated (see [`RateSeries::require_signal`]).
///
/// Each `N` is paired with a `β = 0` calibration run of identical size whose
/// distance estimates the histogram noise bias.
pub fn run_rate_series(
    beta: f64,
    p: f64,
    (h, l): (usize, usize),
    n_grid: &[usize],
    cfg: &RateConfig,
) -> Result<RateSeries> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidParams(format!("beta must be nonnegative, got {beta}")));
    }
    if n_grid.len() < 4 {
        return Err(Error::InvalidParams("N-grid needs at least 4 sizes".into()));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) || n_grid.iter().any(|n| n % 2 != 0) {
        return Err(Error::InvalidParams(
            "N-grid must be strictly increasing and even".into(),
        ));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidParams(format!("p must be at least 1, got {p}")));
    }
    let kernel = KernelTable::build(KernelKind::Green, &KernelSpec::with_default_cutoff(1.0)?)?;
    let mut entries = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let seed = rng::derived_seed(cfg.seed, n as u64);
        let (raw, acc) = distance_at(beta, n, h, l, p, &kernel, cfg, seed)?;
        let calib_seed = rng::labelled_seed(seed, CALIBRATION_LABEL);
        let (floor, _) = distance_at(0.0, n, h, l, p, &kernel, cfg, calib_seed)?;
        entries.push(RateEntry {
            n_vortices: n,
            distance: subtract_in_quadrature(raw, floor),
            raw,
            noise_floor: floor,
            acceptance_rate: acc,
        });
    }
    let last = entries.last().expect("nonempty grid");
    let noise_dominated = last.distance.value < 2.0 * last.noise_floor.value;
    Ok(RateSeries {
        beta,
        p,
        h,
        l,
        fit: fit_entries(&entries, false),
        fit_log_corrected: fit_entries(&entries, true),
        entries,
        noise_dominated,
    })
}

/// [`run_rate_series`], failing with `NoiseDominated` when inconclusive.
pub fn rate_experiment(
    beta: f64,
    p: f64,
    orders: (usize, usize),
    n_grid: &[usize],
    cfg: &RateConfig,
) -> Result<RateSeries> {
    let s = run_rate_series(beta, p, orders, n_grid, cfg)?;
    s.require_signal()?;
    Ok(s)
}

/// Writes `N,distance,stderr,noise_floor`.
pub fn write_rate_csv<W: Write>(s: &RateSeries, mut w: W) -> io::Result<()> {
    writeln!(w, "N,distance,stderr,noise_floor")?;
    for e in &s.entries {
        writeln!(
            w,
            "{},{},{},{}",
            e.n_vortices, e.distance.value, e.distance.stderr, e.noise_floor.value
        )?;
    }
    Ok(())
}

/// Log-log plot of the corrected distances with error bars, the fitted line
/// and a slope `-1/2` guide, as standalone SVG 1.1.
pub fn write_rate_svg<W: Write>(s: &RateSeries, mut w: W) -> io::Result<()> {
    let (width, height, margin) = (640.0, 480.0, 70.0);
    let pts: Vec<(f64, f64, f64, f64)> = s
        .entries
        .iter()
        .filter(|e| e.distance.value > 0.0)
        .map(|e| {
            let d = e.distance;
            let lo = (d.value - d.stderr).max(d.value * 1e-3);
            (e.n_vortices as f64, d.value, lo, d.value + d.stderr)
        })
        .collect();
    let xs: Vec<f64> = s.entries.iter().map(|e| (e.n_vortices as f64).log10()).collect();
    let mut ys: Vec<f64> = pts.iter().flat_map(|p| [p.2.log10(), p.3.log10()]).collect();
    ys.extend(s.entries.iter().map(|e| e.noise_floor.value.max(1e-12).log10()));
    let (x0, x1) = padded_range(&xs);
    let (y0, y1) = padded_range(&ys);
    let px = |x: f64| margin + (x.log10() - x0) / (x1 - x0) * (width - 2.0 * margin);
    let py = |y: f64| height - margin - (y.log10() - y0) / (y1 - y0) * (height - 2.0 * margin);

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{margin}" y="{margin}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        width - 2.0 * margin,
        height - 2.0 * margin
    );
    for d in (x0.floor() as i32)..=(x1.ceil() as i32) {
        for m in 1..10 {
            let v = m as f64 * 10f64.powi(d);
            if v.log10() >= x0 && v.log10() <= x1 {
                let x = px(v);
                let _ = writeln!(
                    out,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
                    height - margin,
                    height - margin + if m == 1 { 8.0 } else { 4.0 }
                );
            }
        }
    }
    for e in &s.entries {
        let x = px(e.n_vortices as f64);
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            height - margin + 22.0,
            e.n_vortices
        );
    }
    for d in (y0.floor() as i32)..=(y1.ceil() as i32) {
        let v = 10f64.powi(d);
        if d as f64 >= y0 && d as f64 <= y1 {
            let y = py(v);
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{margin}" y2="{y:.2}" stroke="black"/>"#,
                margin - 8.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">1e{d}</text>"#,
                margin - 10.0,
                y + 4.0
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">N</text>"#,
        width / 2.0,
        height - 20.0
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.2}" font-size="14" text-anchor="middle" transform="rotate(-90 20 {:.2})">L^{} distance</text>"#,
        height / 2.0,
        height / 2.0,
        s.p
    );
    // Noise floor.
    let floor: Vec<String> = s
        .entries
        .iter()
        .map(|e| format!("{:.2},{:.2}", px(e.n_vortices as f64), py(e.noise_floor.value.max(1e-12))))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="gray" stroke-dasharray="2,3"/>"#,
        floor.join(" ")
    );
    let (na, nb) = (
        s.entries.first().map_or(1.0, |e| e.n_vortices as f64),
        s.entries.last().map_or(1.0, |e| e.n_vortices as f64),
    );
    if let Some(f) = s.fit {
        let y = |n: f64| (f.intercept + f.slope * n.ln()).exp();
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="steelblue" stroke-width="2"/>"#,
            px(na),
            py(y(na)),
            px(nb),
            py(y(nb))
        );
        // Guide of slope -1/2 through the fitted value at the smallest N.
        let g = |n: f64| y(na) * (n / na).powf(-0.5);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-dasharray="6,4"/>"#,
            px(na),
            py(g(na)),
            px(nb),
            py(g(nb))
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12">fitted slope {:.3} ± {:.3}; dashed: slope -1/2; dotted: noise floor</text>"#,
            margin + 10.0,
            margin + 18.0,
            f.slope,
            f.slope_stderr
        );
    }
    for (n, v, lo, hi) in &pts {
        let x = px(*n);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            py(*lo),
            py(*hi)
        );
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{:.2}" r="4" fill="black"/>"#, py(*v));
    }
    let _ = writeln!(out, "</svg>");
    w.write_all(out.as_bytes())
}

/// `log10` range padded by 10% (at least 0.1 decades on each side).
fn padded_range(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = (0.1 * (hi - lo)).max(0.1);
    (lo - pad, hi + pad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine_pair(n: usize, eps: f64) -> DensityPair {
        let c: Vec<f64> = (0..n * n)
            .map(|idx| (2.0 * PI * (idx / n) as f64 / n as f64).cos())
            .collect();
        DensityPair::new(
            n,
            renormalise(c.iter().map(|v| 1.0 + eps * v).collect()),
            renormalise(c.iter().map(|v| 1.0 - eps * v).collect()),
        )
        .unwrap()
    }

    /// `(1/β) ∫₀¹ [(1+εc) log(1+εc) + (1-εc) log(1-εc)] dx + ε²/(2π²)` with
    /// `c = cos 2πx`, by composite Gauss-Legendre on 200 panels.
    fn cosine_oracle(eps: f64, beta: f64) -> f64 {
        let nodes = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
        let weights = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];
        let panels = 200;
        let h = 1.0 / panels as f64;
        let mut s = 0.0;
        for k in 0..panels {
            for (t, w) in nodes.iter().zip(weights) {
                let x = (k as f64 + 0.5 + 0.5 * t) * h;
                let c = (2.0 * PI * x).cos();
                s += 0.5 * h * w * (x_log_x(1.0 + eps * c) + x_log_x(1.0 - eps * c));
            }
        }
        s / beta + eps * eps / (2.0 * PI * PI)
    }

    #[test]
    fn uniform_densities_have_zero_free_energy() {
        assert_eq!(free_energy(&DensityPair::uniform(32), 1.3).unwrap(), 0.0);
    }

    #[test]
    fn cosine_perturbation_matches_oracle() {
        for beta in [0.5, 1.0, 4.0] {
            let got = free_energy(&cosine_pair(64, 0.1), beta).unwrap();
            assert!((got - cosine_oracle(0.1, beta)).abs() < 1e-8, "beta={beta}");
        }
    }

    #[test]
    fn perturbations_have_positive_free_energy() {
        let mut r = rng::stream(3, 0);
        for _ in 0..1000 {
            let d = random_perturbation(&mut r, 32);
            assert!(free_energy(&d, 2.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn invalid_densities_are_rejected() {
        assert!(matches!(DensityPair::new(2, vec![2.0, 1.0, 2.0, -1.0], vec![1.0; 4]), Err(Error::InvalidDensity(_))));
        assert!(matches!(DensityPair::new(2, vec![2.0; 4], vec![1.0; 4]), Err(Error::InvalidDensity(_))));
        assert!(matches!(DensityPair::new(2, vec![1.0; 3], vec![1.0; 4]), Err(Error::InvalidDensity(_))));
        // Zeros are allowed: x log x -> 0.
        let d = DensityPair::new(2, vec![0.0, 2.0, 0.0, 2.0], vec![1.0; 4]).unwrap();
        assert!(free_energy(&d, 1.0).unwrap().is_finite());
        assert!(free_energy(&d, 0.0).is_err());
    }

    #[test]
    fn sinh_poisson_trivial_solution() {
        let zero = vec![0.0; 256];
        for beta in [0.1, 1.0, 5.0] {
            let r = sinh_poisson_residual(&zero, 16, beta, 0.5);
            assert_eq!((r.residual, r.consistency_defect), (0.0, 0.0));
        }
        let r = sinh_poisson_residual(&zero, 16, 1.0, 0.7);
        assert_eq!(r.residual, 0.0);
        assert!((r.consistency_defect - (4.0 * 0.49 - 1.0)).abs() < 1e-15);
        let mut g = rng::stream(9, 0);
        let psi: Vec<f64> = (0..256).map(|_| g.random_range(-0.01..0.01)).collect();
        assert!(sinh_poisson_residual(&psi, 16, 1.0, 0.5).residual > 0.0);
    }

    #[test]
    fn spectral_laplacian_of_a_mode() {
        let n = 16;
        let psi: Vec<f64> = (0..n * n)
            .map(|i| (2.0 * PI * (2.0 * (i / n) as f64 + (i % n) as f64) / n as f64).sin())
            .collect();
        // sinh term vanishes as beta -> 0 with alpha = beta.
        let r = sinh_poisson_residual(&psi, n, 1e-9, 1e-9);
        let expected = (4.0 * PI * PI * 5.0 + 1.0) * 0.5f64.sqrt();
        assert!((r.residual - expected).abs() < 1e-6, "{}", r.residual);
    }

    #[test]
    fn quadrature_subtraction() {
        let e = |v| Estimate { value: v, stderr: 0.1, n_samples: 10, method: EstimateMethod::Jackknife };
        assert!((subtract_in_quadrature(e(5.0), e(3.0)).value - 4.0).abs() < 1e-15);
        assert_eq!(subtract_in_quadrature(e(1.0), e(2.0)).value, 0.0);
    }

    fn small_cfg(seed: u64) -> RateConfig {
        RateConfig {
            n_records: 4000,
            n_chains: 2,
            n_batches: 10,
            bins: 4,
            seed,
            ..RateConfig::default()
        }
    }

    #[test]
    fn rate_series_is_reproducible() {
        let a = run_rate_series(1.0, 2.0, (1, 1), &[4, 6, 8, 10], &small_cfg(4)).unwrap();
        let b = run_rate_series(1.0, 2.0, (1, 1), &[4, 6, 8, 10], &small_cfg(4)).unwrap();
        assert_eq!(a, b);
        let mut csv = Vec::new();
        write_rate_csv(&a, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("N,distance,stderr,noise_floor\n4,"));
        let mut svg = Vec::new();
        write_rate_svg(&a, &mut svg).unwrap();
        let svg = String::from_utf8(svg).unwrap();
        assert!(svg.contains("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn rate_grid_validation() {
        let c = small_cfg(1);
        assert!(run_rate_series(1.0, 2.0, (1, 1), &[4, 8, 16], &c).is_err());
        assert!(run_rate_series(1.0, 2.0, (1, 1), &[4, 8, 16, 15], &c).is_err());
        assert!(run_rate_series(-1.0, 2.0, (1, 1), &[4, 6, 8, 10], &c).is_err());
    }

    #[test]
    fn zero_beta_is_noise_dominated() {
        let s = run_rate_series(0.0, 2.0, (1, 1), &[4, 6, 8, 10], &small_cfg(2)).unwrap();
        assert!(s.noise_dominated);
        assert!(matches!(s.require_signal(), Err(Error::NoiseDominated { .. })));
    }
}
