//! Spectral sampling of the Gaussian field `F_m` with covariance `V_m`.
//!
//! `F_m(x) = Σ_{0<|k|_∞≤K} F̂_k e^{2πi k·x}` with independent complex
//! Gaussian coefficients on a half-plane of wavevectors, `F̂_{-k} = conj(F̂_k)`
//! and `E|F̂_k|² = m² / (4π²|k|²(m² + 4π²|k|²))`. On a grid with more than
//! `2K` points per axis the uniform quadrature of `|F_m|²` is exact, so
//! `‖F_m‖²₂ = Σ_k |F̂_k|²` can be computed without a transform.

use std::io::{self, Write};

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::kernels::{for_each_half_mode, vm_diag, KernelKind, KernelSpec};
use crate::rng;
use crate::stats::{linear_fit, Estimate, EstimateMethod, LinearFit};
use crate::sum::NeumaierSum;

/// Position of `(k1, k2)` in the half-plane ordering of
/// [`for_each_half_mode`], and whether the stored coefficient must be
/// conjugated to obtain the one at `(k1, k2)`.
fn half_mode_index(k1: i64, k2: i64) -> Option<(usize, bool)> {
    let s = k1.abs().max(k2.abs());
    if s == 0 {
        return None;
    }
    let (k1, k2, conj) = if k2 > 0 || (k2 == 0 && k1 > 0) {
        (k1, k2, false)
    } else {
        (-k1, -k2, true)
    };
    let base = 2 * s * (s - 1);
    let offset = if k2 == s {
        k1 + s
    } else if k1 == s {
        2 * s + 1 + k2
    } else {
        3 * s + k2
    };
    Some(((base + offset) as usize, conj))
}

/// Precomputed mode list, standard deviations and FFT plan for one spec.
///
/// Sampling many fields from the same spec should go through one sampler.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    spec: KernelSpec,
    modes: Vec<(i64, i64)>,
    /// Standard deviation of the real and imaginary part of each coefficient.
    part_sd: Vec<f64>,
    fft: Fft2,
}

impl FieldSampler {
    pub fn new(spec: &KernelSpec) -> Self {
        let mut modes = Vec::with_capacity(spec.mode_count() / 2);
        let mut part_sd = Vec::with_capacity(spec.mode_count() / 2);
        for_each_half_mode(spec.cutoff(), |_, k1, k2| {
            let q = (k1 * k1 + k2 * k2) as f64;
            modes.push((k1, k2));
            part_sd.push((0.5 * KernelKind::Smooth.multiplier(spec.mass(), q)).sqrt());
        });
        Self {
            spec: *spec,
            modes,
            part_sd,
            fft: Fft2::new(spec.grid_n()),
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Half-plane coefficients for `seed`, in [`for_each_half_mode`] order.
    pub fn coefficients(&self, seed: u64) -> SpectralCoefficients {
        let mut rng = rng::stream(seed, 0);
        let coeffs = self
            .part_sd
            .iter()
            .map(|&sd| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(sd * re, sd * im)
            })
            .collect();
        SpectralCoefficients {
            spec: self.spec,
            seed,
            coeffs,
        }
    }

    /// Coefficients plus grid values.
    pub fn sample(&self, seed: u64) -> Result<FieldSample> {
        let coefficients = self.coefficients(seed);
        let grid_values = self.synthesize(&coefficients)?;
        Ok(FieldSample {
            coefficients,
            grid_values,
        })
    }

    fn synthesize(&self, c: &SpectralCoefficients) -> Result<Vec<f64>> {
        let n = self.spec.grid_n();
        if n <= 2 * self.spec.cutoff() {
            return Err(Error::InvalidSpec(format!(
                "grid_n = {n} cannot resolve cutoff {}",
                self.spec.cutoff()
            )));
        }
        let wrap = |x: i64| x.rem_euclid(n as i64) as usize;
        let mut buf = vec![Complex64::default(); n * n];
        for (&(k1, k2), &z) in self.modes.iter().zip(&c.coeffs) {
            buf[wrap(k1) * n + wrap(k2)] = z;
            buf[wrap(-k1) * n + wrap(-k2)] = z.conj();
        }
        self.fft.inverse(&mut buf);
        Ok(buf.into_iter().map(|z| z.re).collect())
    }
}

/// The independent (half-plane) Fourier coefficients of one field sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoefficients {
    spec: KernelSpec,
    seed: u64,
    coeffs: Vec<Complex64>,
}

impl SpectralCoefficients {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stored half-plane coefficients in shell order.
    pub fn half_plane(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// `F̂_k` for any retained `k`; `None` for `k = 0` or `|k|_∞ > K`.
    pub fn get(&self, k1: i64, k2: i64) -> Option<Complex64> {
        let (idx, conj) = half_mode_index(k1, k2)?;
        let z = *self.coeffs.get(idx)?;
        Some(if conj { z.conj() } else { z })
    }

    /// `‖F‖²₂ = Σ_{k≠0} |F̂_k|²` by Parseval.
    pub fn l2_norm_sq(&self) -> f64 {
        let s: NeumaierSum = self.coeffs.iter().map(|z| z.norm_sqr()).collect();
        2.0 * s.value()
    }
}

/// One realisation of `F_m`: coefficients and values on the spec's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    coefficients: SpectralCoefficients,
    grid_values: Vec<f64>,
}

impl FieldSample {
    /// A field that vanishes identically.
    pub fn zero(spec: &KernelSpec) -> Self {
        let half = spec.mode_count() / 2;
        Self {
            coefficients: SpectralCoefficients {
                spec: *spec,
                seed: 0,
                coeffs: vec![Complex64::default(); half],
            },
            grid_values: vec![0.0; spec.grid_n() * spec.grid_n()],
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.coefficients.spec
    }

    pub fn seed(&self) -> u64 {
        self.coefficients.seed
    }

    pub fn coefficients(&self) -> &SpectralCoefficients {
        &self.coefficients
    }

    /// Row-major grid values at `(i, j) / grid_n`.
    pub fn grid_values(&self) -> &[f64] {
        &self.grid_values
    }

    /// Writes every retained mode as `k1,k2,re,im`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let k = self.spec().cutoff() as i64;
        writeln!(w, "k1,k2,re,im")?;
        for k1 in -k..=k {
            for k2 in -k..=k {
                if let Some(z) = self.coefficients.get(k1, k2) {
                    writeln!(w, "{k1},{k2},{},{}", z.re, z.im)?;
                }
            }
        }
        Ok(())
    }
}

/// Draws one field; equal `(spec, seed)` give bit-identical samples.
pub fn sample_field(spec: &KernelSpec, seed: u64) -> Result<FieldSample> {
    FieldSampler::new(spec).sample(seed)
}

/// `(mean |F|^p)^{1/p}` over the grid.
pub fn lp_norm(sample: &FieldSample, p: f64) -> f64 {
    let v = sample.grid_values();
    let s: NeumaierSum = v.iter().map(|x| x.abs().powf(p)).collect();
    (s.value() / v.len() as f64).powf(1.0 / p)
}

/// `∫ exp(i σ sqrt(β/N) F(x)) dx` by the grid rule.
pub fn e_factor(sample: &FieldSample, sign: i32, beta: f64, n_vortices: usize) -> Complex64 {
    let plus = e_plus(sample.grid_values(), (beta / n_vortices as f64).sqrt());
    if sign >= 0 {
        plus
    } else {
        plus.conj()
    }
}

fn e_plus(values: &[f64], scale: f64) -> Complex64 {
    let mut re = NeumaierSum::new();
    let mut im = NeumaierSum::new();
    for &x in values {
        let (s, c) = (scale * x).sin_cos();
        re.add(c);
        im.add(s);
    }
    let n = values.len() as f64;
    Complex64::new(re.value() / n, im.value() / n)
}

/// `ℰ = exp(-(β/2N) ‖F‖²₂)` with the grid `L²` norm.
pub fn gauss_weight(sample: &FieldSample, beta: f64, n_vortices: usize) -> f64 {
    let l2 = lp_norm(sample, 2.0);
    (-beta / (2.0 * n_vortices as f64) * l2 * l2).exp()
}

/// The functionals entering the Sine-Gordon representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldFunctionals {
    /// `‖F‖_p` for `p = 2, 3, 4`.
    pub lp_norms: [f64; 3],
    pub e_plus: Complex64,
    pub e_minus: Complex64,
    pub gauss_weight: f64,
}

impl FieldFunctionals {
    /// All functionals in a single pass over the grid.
    pub fn compute(sample: &FieldSample, beta: f64, n_vortices: usize) -> Self {
        let v = sample.grid_values();
        let scale = (beta / n_vortices as f64).sqrt();
        let mut p2 = NeumaierSum::new();
        let mut p3 = NeumaierSum::new();
        let mut p4 = NeumaierSum::new();
        let mut re = NeumaierSum::new();
        let mut im = NeumaierSum::new();
        for &x in v {
            let x2 = x * x;
            p2.add(x2);
            p3.add(x2 * x.abs());
            p4.add(x2 * x2);
            let (s, c) = (scale * x).sin_cos();
            re.add(c);
            im.add(s);
        }
        let n = v.len() as f64;
        let l2sq = p2.value() / n;
        let e_plus = Complex64::new(re.value() / n, im.value() / n);
        Self {
            lp_norms: [l2sq.sqrt(), (p3.value() / n).cbrt(), (p4.value() / n).powf(0.25)],
            e_plus,
            e_minus: e_plus.conj(),
            gauss_weight: (-beta / (2.0 * n_vortices as f64) * l2sq).exp(),
        }
    }
}

/// Exact `E[exp(-α ‖F‖²₂)] = Π_k (1 + 2α v_k)^{-1/2}` over the retained modes.
pub fn analytic_exp_moment(alpha: f64, spec: &KernelSpec) -> f64 {
    let mut s = NeumaierSum::new();
    for_each_half_mode(spec.cutoff(), |_, k1, k2| {
        let q = (k1 * k1 + k2 * k2) as f64;
        s.add((2.0 * alpha * KernelKind::Smooth.multiplier(spec.mass(), q)).ln_1p());
    });
    // Each half-plane mode stands for the pair ±k.
    (-s.value()).exp()
}

/// `‖F‖²₂` for `n_samples` fields with seeds `seed + i`, in sample order.
pub fn l2_norm_sq_samples(spec: &KernelSpec, n_samples: usize, seed: u64) -> Vec<f64> {
    let sampler = FieldSampler::new(spec);
    (0..n_samples)
        .into_par_iter()
        .map(|i| sampler.coefficients(rng::derived_seed(seed, i as u64)).l2_norm_sq())
        .collect()
}

/// One row of a moment study: closed form against Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub mass: f64,
    /// Exponent `α` for exponential moments, `p` for norm moments.
    pub order: f64,
    pub analytic: f64,
    pub mc: Estimate,
}

/// `E‖F_m‖²₂` against the exact `Σ_k v_k = V_m^K(0)` for each mass, using the
/// default cutoff.
pub fn l2_moment_study(masses: &[f64], n_samples: usize, seed: u64) -> Result<Vec<MomentRow>> {
    masses
        .iter()
        .map(|&m| {
            let spec = KernelSpec::with_default_cutoff(m)?;
            let norms = l2_norm_sq_samples(&spec, n_samples, seed);
            Ok(MomentRow {
                mass: m,
                order: 2.0,
                analytic: vm_diag(&spec)?,
                mc: Estimate::from_samples(&norms, EstimateMethod::MonteCarlo),
            })
        })
        .collect()
}

/// `E[exp(-α ‖F_m‖²₂)]` by Monte Carlo against [`analytic_exp_moment`].
pub fn exp_moment_study(
    masses: &[f64],
    alpha: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<MomentRow>> {
    masses
        .iter()
        .map(|&m| {
            let spec = KernelSpec::with_default_cutoff(m)?;
            let weights: Vec<f64> = l2_norm_sq_samples(&spec, n_samples, seed)
                .into_iter()
                .map(|x| (-alpha * x).exp())
                .collect();
            Ok(MomentRow {
                mass: m,
                order: alpha,
                analytic: analytic_exp_moment(alpha, &spec),
                mc: Estimate::from_samples(&weights, EstimateMethod::MonteCarlo),
            })
        })
        .collect()
}

/// Writes moment rows as `m,<order>,analytic,mc_mean,mc_stderr,n_samples`,
/// with the order column named `alpha` or `p`.
pub fn write_moment_csv<W: Write>(rows: &[MomentRow], order_name: &str, mut w: W) -> io::Result<()> {
    writeln!(w, "m,{order_name},analytic,mc_mean,mc_stderr,n_samples")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.mass, r.order, r.analytic, r.mc.value, r.mc.stderr, r.mc.n_samples
        )?;
    }
    Ok(())
}

/// Slope of `y` against `log m`.
pub fn slope_against_log_mass(masses: &[f64], y: &[f64]) -> LinearFit {
    let x: Vec<f64> = masses.iter().map(|m| m.ln()).collect();
    linear_fit(&x, y)
}

/// Ratio of the exact moment difference to its claimed scale at one mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentDiffRow {
    pub mass: f64,
    /// `E[e^{-α‖F‖²}] - E[e^{-α'‖F‖²}]`.
    pub difference: f64,
    /// `difference / ((α' - α) m^{-α/2π} log m)`.
    pub ratio: f64,
}

/// Outcome of the exponential-moment difference study.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentDiffReport {
    pub alpha: f64,
    pub alpha2: f64,
    pub rows: Vec<MomentDiffRow>,
    /// Fit of `ratio` against `log m`.
    pub trend: LinearFit,
    pub max_ratio: f64,
}

impl MomentDiffReport {
    /// Bounded by `bound` and without an increasing trend: the fitted slope
    /// is at most `k` standard errors above zero.
    pub fn is_bounded(&self, bound: f64, k: f64) -> bool {
        self.max_ratio <= bound && self.trend.slope - k * self.trend.slope_stderr <= 0.0
    }
}

/// Exact difference `E[e^{-α‖F‖²}] - E[e^{-α'‖F‖²}]` scaled by
/// `(α' - α) m^{-α/2π} log m` across the mass grid (default cutoffs).
pub fn exp_moment_diff_check(alpha: f64, alpha2: f64, masses: &[f64]) -> Result<MomentDiffReport> {
    if !(alpha > 0.0 && alpha2 >= alpha) {
        return Err(Error::BadRange(format!(
            "need 0 < alpha <= alpha2, got alpha = {alpha}, alpha2 = {alpha2}"
        )));
    }
    let mut rows = Vec::with_capacity(masses.len());
    for &m in masses {
        let spec = KernelSpec::with_default_cutoff(m)?;
        let difference = analytic_exp_moment(alpha, &spec) - analytic_exp_moment(alpha2, &spec);
        let scale = (alpha2 - alpha) * m.powf(-alpha / (2.0 * std::f64::consts::PI)) * m.ln();
        let ratio = if alpha2 == alpha { 0.0 } else { difference / scale };
        rows.push(MomentDiffRow {
            mass: m,
            difference,
            ratio,
        });
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let trend = slope_against_log_mass(masses, &ratios);
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MomentDiffReport {
        alpha,
        alpha2,
        rows,
        trend,
        max_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{for_each_half_mode, vm_diag};
    use std::f64::consts::PI;

    fn small_spec() -> KernelSpec {
        KernelSpec::with_cutoff(6.0, 12).unwrap()
    }

    #[test]
    fn half_mode_index_matches_iteration_order() {
        let mut idx = 0;
        for_each_half_mode(7, |_, k1, k2| {
            assert_eq!(half_mode_index(k1, k2), Some((idx, false)));
            assert_eq!(half_mode_index(-k1, -k2), Some((idx, true)));
            idx += 1;
        });
        assert_eq!(half_mode_index(0, 0), None);
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = small_spec();
        assert_eq!(sample_field(&s, 11).unwrap(), sample_field(&s, 11).unwrap());
        assert_ne!(sample_field(&s, 11).unwrap(), sample_field(&s, 12).unwrap());
    }

    #[test]
    fn coefficients_are_hermitian_and_grid_is_mean_zero() {
        let s = small_spec();
        let f = sample_field(&s, 3).unwrap();
        for k1 in -12..=12 {
            for k2 in -12..=12 {
                if let Some(z) = f.coefficients().get(k1, k2) {
                    assert_eq!(z, f.coefficients().get(-k1, -k2).unwrap().conj());
                }
            }
        }
        let mean = crate::sum::mean(f.grid_values());
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn grid_values_match_direct_synthesis() {
        let s = KernelSpec::with_cutoff(4.0, 3).unwrap();
        let f = sample_field(&s, 5).unwrap();
        let n = s.grid_n();
        for (i, j) in [(0, 0), (3, 5), (n - 1, 2)] {
            let x = [i as f64 / n as f64, j as f64 / n as f64];
            let mut v = 0.0;
            for k1 in -3i64..=3 {
                for k2 in -3i64..=3 {
                    if let Some(z) = f.coefficients().get(k1, k2) {
                        let ph = 2.0 * PI * (k1 as f64 * x[0] + k2 as f64 * x[1]);
                        v += (z * Complex64::from_polar(1.0, ph)).re;
                    }
                }
            }
            assert!((f.grid_values()[i * n + j] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_matches_grid_norm() {
        let f = sample_field(&small_spec(), 9).unwrap();
        let grid = lp_norm(&f, 2.0).powi(2);
        assert!((grid - f.coefficients().l2_norm_sq()).abs() < 1e-12);
    }

    #[test]
    fn zero_field_functionals() {
        let z = FieldSample::zero(&small_spec());
        assert_eq!(lp_norm(&z, 3.0), 0.0);
        assert_eq!(e_factor(&z, 1, 2.0, 8), Complex64::new(1.0, 0.0));
        assert_eq!(gauss_weight(&z, 2.0, 8), 1.0);
    }

    #[test]
    fn functionals_agree_with_single_purpose_routines() {
        let f = sample_field(&small_spec(), 21).unwrap();
        let ff = FieldFunctionals::compute(&f, 1.5, 8);
        assert!((ff.lp_norms[1] - lp_norm(&f, 3.0)).abs() < 1e-12);
        assert!((ff.lp_norms[2] - lp_norm(&f, 4.0)).abs() < 1e-12);
        assert_eq!(ff.e_plus, e_factor(&f, 1, 1.5, 8));
        assert_eq!(ff.e_minus, e_factor(&f, -1, 1.5, 8));
        assert!((ff.gauss_weight - gauss_weight(&f, 1.5, 8)).abs() < 1e-15);
        assert!(ff.e_plus.norm() <= 1.0 && ff.gauss_weight <= 1.0);
    }

    #[test]
    fn mode_variance_calibration() {
        let spec = KernelSpec::with_cutoff(10.0, 8).unwrap();
        let sampler = FieldSampler::new(&spec);
        let n = 10_000;
        let draws: Vec<SpectralCoefficients> = (0..n).map(|i| sampler.coefficients(i)).collect();
        for (k1, k2) in [(1, 0), (0, 1), (2, 3), (-5, 8)] {
            let v: Vec<f64> = draws.iter().map(|c| c.get(k1, k2).unwrap().norm_sqr()).collect();
            let est = Estimate::from_samples(&v, EstimateMethod::MonteCarlo);
            let q = (k1 * k1 + k2 * k2) as f64;
            let exact = KernelKind::Smooth.multiplier(10.0, q);
            assert!(est.agrees_with(exact, 5.0, 0.0), "{k1},{k2}: {est} vs {exact}");
        }
    }

    #[test]
    fn pointwise_variance_matches_diagonal() {
        let spec = KernelSpec::with_cutoff(10.0, 64).unwrap();
        let sampler = FieldSampler::new(&spec);
        let vals: Vec<f64> = (0..10_000)
            .map(|i| {
                let c = sampler.coefficients(i);
                // F(0) = 2 Re Σ_half F̂_k.
                let s: f64 = c.half_plane().iter().map(|z| z.re).sum();
                4.0 * s * s
            })
            .collect();
        let est = Estimate::from_samples(&vals, EstimateMethod::MonteCarlo);
        assert!(est.agrees_with(vm_diag(&spec).unwrap(), 3.0, 0.0), "{est}");
    }

    #[test]
    fn analytic_moment_limits_and_lower_bound() {
        let spec = KernelSpec::with_default_cutoff(8.0).unwrap();
        assert!((analytic_exp_moment(1e-12, &spec) - 1.0).abs() < 1e-10);
        for m in [8.0, 32.0, 128.0] {
            let spec = KernelSpec::with_default_cutoff(m).unwrap();
            for a in [0.5, 1.0, 2.0] {
                let lower = (-a * vm_diag(&spec).unwrap()).exp();
                assert!(lower <= analytic_exp_moment(a, &spec));
            }
        }
    }

    #[test]
    fn analytic_moment_matches_monte_carlo() {
        let rows = exp_moment_study(&[6.0], 1.0, 4000, 1).unwrap();
        let r = rows[0];
        assert!(r.mc.agrees_with(r.analytic, 3.0, 0.0), "{} vs {}", r.mc, r.analytic);
    }

    #[test]
    fn diff_check_edge_cases() {
        let same = exp_moment_diff_check(1.0, 1.0, &[8.0, 16.0]).unwrap();
        assert!(same.rows.iter().all(|r| r.difference == 0.0));
        let rep = exp_moment_diff_check(1.0, 1.5, &[8.0, 16.0, 32.0]).unwrap();
        assert!(rep.rows.iter().all(|r| r.difference > 0.0));
        assert!(matches!(exp_moment_diff_check(1.0, 0.5, &[8.0]), Err(Error::BadRange(_))));
    }

    #[test]
    fn moment_csv_layout() {
        let rows = exp_moment_study(&[4.0], 1.0, 10, 2).unwrap();
        let mut out = Vec::new();
        write_moment_csv(&rows, "alpha", &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("m,alpha,analytic,mc_mean,mc_stderr,n_samples\n4,1,"));
    }
}
