//! Grid tabulation of the untruncated kernels.
//!
//! For a fixed first coordinate `x` the sum over `k1` has the closed form
//!
//! `Σ_{k1} e^{2πi k1 x} / (k1² + a²) = (π/a)(e^{-2πat} + e^{-2πa(1-t)}) / (1 - e^{-2πa})`
//!
//! with `t = min(x, 1-x)`. Each grid row is then a one-dimensional Fourier
//! series in `k2` whose coefficients decay like `e^{-2π|k2|t}`; they are
//! folded modulo the grid size and transformed with one FFT per row.

use std::f64::consts::PI;
use std::io::{self, Write};
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::{wrap_centered, KernelKind, KernelSpec, COINCIDENCE_SCALE, FOUR_PI_SQ};
use crate::error::{Error, Result};
use crate::sum::NeumaierSum;

const INV_TWO_PI: f64 = 1.0 / (2.0 * PI);

/// Coefficients are kept while `e^{-2π k t}` exceeds about `e^{-46}`.
const ROW_DECAY: f64 = 7.4;

/// Terms kept in the `k2 = 0` series for small screening parameter.
const SERIES_TERMS: usize = 4000;

/// Tabulated kernel on the `grid_n x grid_n` displacement grid.
///
/// `values[i * n + j]` is the kernel at displacement `(i, j) / n`. The
/// tables hold the full (untruncated) kernels; the spec's cutoff only enters
/// the spectral evaluators and the field sampler. For the singular kinds the
/// origin entry is `NaN` and lookups near the origin interpolate the regular
/// part `K + (1/2π) log|d|` before restoring the logarithm.
#[derive(Debug, Clone)]
pub struct KernelTable {
    kind: KernelKind,
    spec: KernelSpec,
    values: Vec<f64>,
    regular_origin: f64,
    log_radius: f64,
}

impl KernelTable {
    pub fn build(kind: KernelKind, spec: &KernelSpec) -> Result<Self> {
        let n = spec.grid_n();
        let values = match kind {
            KernelKind::Green => tabulate(n, None),
            KernelKind::Yukawa => tabulate(n, Some(screening(spec.mass()))),
            KernelKind::Smooth => {
                let g = tabulate(n, None);
                let w = tabulate(n, Some(screening(spec.mass())));
                g.iter().zip(&w).map(|(a, b)| a - b).collect()
            }
        };
        Ok(Self::assemble(kind, spec, values))
    }

    /// Green, Yukawa and smooth tables for one spec, sharing the row sums.
    pub fn build_all(spec: &KernelSpec) -> Result<[KernelTable; 3]> {
        let n = spec.grid_n();
        let g = tabulate(n, None);
        let w = tabulate(n, Some(screening(spec.mass())));
        let v: Vec<f64> = g.iter().zip(&w).map(|(a, b)| a - b).collect();
        Ok([
            Self::assemble(KernelKind::Green, spec, g),
            Self::assemble(KernelKind::Yukawa, spec, w),
            Self::assemble(KernelKind::Smooth, spec, v),
        ])
    }

    fn assemble(kind: KernelKind, spec: &KernelSpec, mut values: Vec<f64>) -> Self {
        let n = spec.grid_n() as f64;
        // Green and Yukawa share the log-corrected region so that their
        // interpolants differ by exactly the bilinear interpolant of V_m.
        let (regular_origin, log_radius) = match kind {
            KernelKind::Green => (green_regular_constant(), 0.25),
            KernelKind::Yukawa => (green_regular_constant() - smooth_diagonal(spec.mass()), 0.25),
            KernelKind::Smooth => (smooth_diagonal(spec.mass()), 0.0),
        };
        values[0] = if kind.is_singular() { f64::NAN } else { regular_origin };
        Self {
            kind,
            spec: *spec,
            values,
            regular_origin,
            log_radius: f64::max(log_radius, 2.0 / n),
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid_n(&self) -> usize {
        self.spec.grid_n()
    }

    /// Row-major node values; the origin is `NaN` for singular kinds.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Node value at `(i, j)` (indices taken modulo the grid).
    pub fn node(&self, i: i64, j: i64) -> f64 {
        let n = self.grid_n() as i64;
        self.values[(i.rem_euclid(n) * n + j.rem_euclid(n)) as usize]
    }

    /// `lim_{d→0} K(d) + (1/2π) log|d|` for singular kinds, `K(0)` otherwise.
    pub fn regular_origin(&self) -> f64 {
        self.regular_origin
    }

    /// Kernel at displacement `d` by bilinear interpolation.
    ///
    /// Singular kinds return `+∞` at exact coincidence.
    pub fn eval(&self, d: [f64; 2]) -> f64 {
        let n = self.grid_n();
        let nf = n as f64;
        let u = d[0].rem_euclid(1.0) * nf;
        let v = d[1].rem_euclid(1.0) * nf;
        let i0 = (u.floor() as usize).min(n - 1);
        let j0 = (v.floor() as usize).min(n - 1);
        let fu = u - i0 as f64;
        let fv = v - j0 as f64;
        let i1 = (i0 + 1) % n;
        let j1 = (j0 + 1) % n;

        if self.kind.is_singular() {
            let r = wrap_centered(d[0]).hypot(wrap_centered(d[1]));
            if r < self.log_radius {
                let reg = |i: usize, j: usize| -> f64 {
                    if i == 0 && j == 0 {
                        self.regular_origin
                    } else {
                        let rr = wrap_centered(i as f64 / nf).hypot(wrap_centered(j as f64 / nf));
                        self.values[i * n + j] + INV_TWO_PI * rr.ln()
                    }
                };
                let reg = bilinear(reg(i0, j0), reg(i1, j0), reg(i0, j1), reg(i1, j1), fu, fv);
                return reg - INV_TWO_PI * r.ln();
            }
        }
        let at = |i: usize, j: usize| self.values[i * n + j];
        bilinear(at(i0, j0), at(i1, j0), at(i0, j1), at(i1, j1), fu, fv)
    }

    /// [`KernelTable::eval`] with the coincidence check.
    pub fn try_eval(&self, d: [f64; 2]) -> Result<f64> {
        if self.kind.is_singular()
            && wrap_centered(d[0]).hypot(wrap_centered(d[1])) < COINCIDENCE_SCALE
        {
            return Err(Error::SingularDiagonal);
        }
        Ok(self.eval(d))
    }

    /// Average of the node values, skipping the singular origin.
    pub fn grid_mean(&self) -> f64 {
        let s: NeumaierSum = self.values.iter().copied().filter(|v| v.is_finite()).collect();
        s.value() / (self.grid_n() * self.grid_n()) as f64
    }

    /// Writes the table as CSV: a commented header naming the fields, a
    /// commented line with their values, then `i,j,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.grid_n();
        writeln!(w, "# kind,mass,cutoff,grid_n")?;
        writeln!(w, "# {},{},{},{}", self.kind, self.spec.mass(), self.spec.cutoff(), n)?;
        writeln!(w, "i,j,value")?;
        for i in 0..n {
            for j in 0..n {
                let v = self.values[i * n + j];
                if v.is_nan() {
                    writeln!(w, "{i},{j},singular")?;
                } else {
                    writeln!(w, "{i},{j},{v}")?;
                }
            }
        }
        Ok(())
    }
}

fn bilinear(v00: f64, v10: f64, v01: f64, v11: f64, fu: f64, fv: f64) -> f64 {
    let a = v00 + fu * (v10 - v00);
    let b = v01 + fu * (v11 - v01);
    a + fv * (b - a)
}

/// `μ = m / 2π`, the mass in units of the lattice wavenumber.
fn screening(mass: f64) -> f64 {
    mass / (2.0 * PI)
}

/// `Σ_{k1 ∈ ℤ} e^{2πi k1 x} / (k1² + a²)` at `t = min(x, 1 - x)`.
fn lattice_row_sum(a: f64, t: f64) -> f64 {
    let two_pi_a = 2.0 * PI * a;
    let num = (-two_pi_a * t).exp() + (-two_pi_a * (1.0 - t)).exp();
    PI / a * num / -(-two_pi_a).exp_m1()
}

/// `Σ_{n≥1} cos(2πnx) / (n²(n² + μ²))`.
fn screened_cosine_series(x: f64, mu: f64) -> f64 {
    let mu2 = mu * mu;
    let mut s = NeumaierSum::new();
    for k in 1..=SERIES_TERMS {
        let n2 = (k * k) as f64;
        s.add((2.0 * PI * k as f64 * x).cos() / (n2 * (n2 + mu2)));
    }
    s.value()
}

/// Row coefficient `c_{k2}(t)` of `Σ_{k≠0} e^{2πi k·d} / (4π²(|k|² + μ²))`;
/// `mu = None` is the Green function.
fn row_coefficient(k2: usize, t: f64, mu: Option<f64>) -> f64 {
    match (k2, mu) {
        (0, None) => 0.5 * (t * t - t + 1.0 / 6.0),
        (0, Some(mu)) if mu < 1.0 => {
            // Σ_{k1≠0} cos(2πk1t)/(k1²+μ²) without the 1/μ² cancellation.
            let b2 = 2.0 * PI * PI * (t * t - t + 1.0 / 6.0);
            (b2 - 2.0 * mu * mu * screened_cosine_series(t, mu)) / FOUR_PI_SQ
        }
        (0, Some(mu)) => (lattice_row_sum(mu, t) - 1.0 / (mu * mu)) / FOUR_PI_SQ,
        (k, None) => lattice_row_sum(k as f64, t) / FOUR_PI_SQ,
        (k, Some(mu)) => lattice_row_sum((k as f64).hypot(mu), t) / FOUR_PI_SQ,
    }
}

/// Values at `(i/n, j/n)` for `j = 0..=n/2`, `1 ≤ i ≤ n/2`.
fn row_values(n: usize, i: usize, mu: Option<f64>) -> Vec<f64> {
    let t = i as f64 / n as f64;
    let kmax = ((ROW_DECAY * n as f64 / i as f64).ceil() as usize).max(n);
    let mut folded = vec![NeumaierSum::new(); n];
    folded[0].add(row_coefficient(0, t, mu));
    for k2 in 1..=kmax {
        let c = row_coefficient(k2, t, mu);
        folded[k2 % n].add(c);
        folded[(n - k2 % n) % n].add(c);
    }
    let mut buf: Vec<Complex64> = folded.iter().map(|s| Complex64::new(s.value(), 0.0)).collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf[..=n / 2].iter().map(|z| z.re).collect()
}

/// Full even, transpose-symmetric table; the origin entry is left at 0.
fn tabulate(n: usize, mu: Option<f64>) -> Vec<f64> {
    let half = n / 2;
    let rows: Vec<Vec<f64>> = (1..=half)
        .into_par_iter()
        .map(|i| row_values(n, i, mu))
        .collect();
    let row = |i: usize| -> &Vec<f64> { &rows[i.min(n - i) - 1] };
    let mut values = vec![0.0; n * n];
    for i in 1..n {
        let r = row(i);
        for j in 0..n {
            values[i * n + j] = r[j.min(n - j)];
        }
    }
    for j in 1..n {
        values[j] = row(j)[0];
    }
    for i in 1..n {
        for j in (i + 1)..n {
            let s = 0.5 * (values[i * n + j] + values[j * n + i]);
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    values
}

/// The untruncated `V_m(0) = Σ_{k≠0} m² / (4π²|k|²(m² + 4π²|k|²))`.
///
/// The `k1` sum is done in closed form per `k2`; the `k2` sum runs to `10⁶`
/// with an integral tail.
pub fn smooth_diagonal(mass: f64) -> f64 {
    let mu = screening(mass);
    let mu2 = mu * mu;
    const K2_MAX: usize = 1_000_000;

    let n_terms = SERIES_TERMS.max((100.0 * mu) as usize);
    let mut zero_row = NeumaierSum::new();
    for k in 1..=n_terms {
        let n2 = (k * k) as f64;
        zero_row.add(1.0 / (n2 * (n2 + mu2)));
    }
    zero_row.add(1.0 / (3.0 * (n_terms as f64 + 0.5).powi(3)));

    // (π/a)coth(πa) - (π/b)coth(πb), b = sqrt(a² + μ²), written without
    // cancellation: coth(x) - 1 = 2 / (e^{2x} - 1).
    let coth_m1 = |x: f64| if x < 40.0 { 2.0 / (2.0 * x).exp_m1() } else { 0.0 };
    let mut rest = NeumaierSum::new();
    for k in 1..=K2_MAX {
        let a = k as f64;
        let b = a.hypot(mu);
        let diff = mu2 / (a * b * (a + b));
        rest.add(PI * (diff + coth_m1(PI * a) / a - coth_m1(PI * b) / b));
    }
    let tail = PI * mu2 / (4.0 * (K2_MAX as f64 + 0.5).powi(2));
    rest.add(tail);

    (2.0 * mu2 * zero_row.value() + 2.0 * rest.value()) / FOUR_PI_SQ
}

/// `lim_{d→0} G(d) + (1/2π) log|d|` for the zero-mean torus Green function.
///
/// Evaluated from the row sum at a small displacement `δ` using the local
/// expansion `G = -(1/2π) log r + c + r²/4 + O(r⁴)`.
pub fn green_regular_constant() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        let delta = 1e-4;
        let kmax = (ROW_DECAY / delta).ceil() as usize;
        let mut s = NeumaierSum::new();
        for k2 in (1..=kmax).rev() {
            s.add(2.0 * row_coefficient(k2, delta, None));
        }
        s.add(row_coefficient(0, delta, None));
        s.value() + INV_TWO_PI * delta.ln() - 0.25 * delta * delta
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{green_eval, vm_diag, vm_eval, yukawa_eval};
    use crate::rng;
    use rand::Rng;

    /// Torus Green function from the Jacobi theta function with `q = e^{-π}`:
    /// `G = -(1/2π) log|θ₁(π(x+iy))| + y²/2 + L/(2π) - 1/24`,
    /// `L = Σ log(1 - e^{-2πn})`, `y` wrapped to `[-1/2, 1/2)`.
    fn theta_green(x: f64, y: f64) -> f64 {
        let y = wrap_centered(y);
        let q = (-PI).exp();
        let z = Complex64::new(PI * x, PI * y);
        let mut theta = Complex64::new(0.0, 0.0);
        for n in 0..30 {
            let e = (n as f64 + 0.5).powi(2);
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            theta += sign * q.powf(e) * ((2 * n + 1) as f64 * z).sin();
        }
        theta *= 2.0;
        let l: f64 = (1..40).map(|n| (-(-2.0 * PI * n as f64).exp()).ln_1p()).sum();
        -INV_TWO_PI * theta.norm().ln() + 0.5 * y * y + l * INV_TWO_PI - 1.0 / 24.0
    }

    fn closed_form_regular_constant() -> f64 {
        let l: f64 = (1..40).map(|n| (-(-2.0 * PI * n as f64).exp()).ln_1p()).sum();
        -INV_TWO_PI * (2.0 * PI).ln() + 1.0 / 12.0 - l / PI
    }

    #[test]
    fn theta_oracle_reference_values() {
        assert!((theta_green(0.25, 0.0) - 0.0281738782664284).abs() < 1e-13);
    }

    #[test]
    fn regular_constant_matches_closed_form() {
        let c = green_regular_constant();
        assert!((c - closed_form_regular_constant()).abs() < 1e-11, "{c}");
        assert!((c + 0.2085777932435).abs() < 1e-12);
    }

    #[test]
    fn green_nodes_match_theta_oracle() {
        let spec = KernelSpec::new(5.0, 16, 64).unwrap();
        let t = KernelTable::build(KernelKind::Green, &spec).unwrap();
        for (i, j) in [(1, 0), (0, 3), (5, 7), (32, 32), (63, 1), (17, 40)] {
            let exact = theta_green(i as f64 / 64.0, j as f64 / 64.0);
            assert!((t.node(i, j) - exact).abs() < 1e-12, "({i},{j})");
        }
    }

    #[test]
    fn green_interpolation_is_accurate_off_grid() {
        let spec = KernelSpec::new(5.0, 16, 256).unwrap();
        let t = KernelTable::build(KernelKind::Green, &spec).unwrap();
        let mut r = rng::stream(4, 0);
        for _ in 0..500 {
            let d = [r.random::<f64>(), r.random::<f64>()];
            let exact = theta_green(d[0], d[1]);
            assert!((t.eval(d) - exact).abs() < 2e-5, "{d:?}");
        }
        // Near the origin only the r²/4 part of the regular term is
        // interpolated, leaving an error of about h²/16.
        for s in [1e-7, 1e-5, 1e-3, 5e-3] {
            let d = [s, 0.6 * s];
            let exact = theta_green(d[0], d[1]);
            assert!((t.eval(d) - exact).abs() < 2e-6, "{s}");
        }
    }

    #[test]
    fn tables_are_even_and_symmetric() {
        let spec = KernelSpec::new(7.0, 16, 48).unwrap();
        for t in KernelTable::build_all(&spec).unwrap() {
            for i in 0..48i64 {
                for j in 0..48i64 {
                    if i == 0 && j == 0 {
                        continue;
                    }
                    assert_eq!(t.node(i, j), t.node(-i, -j));
                    assert_eq!(t.node(i, j), t.node(j, i));
                }
            }
        }
    }

    #[test]
    fn origin_is_singular_only_for_singular_kinds() {
        let spec = KernelSpec::new(3.0, 8, 32).unwrap();
        let [g, w, v] = KernelTable::build_all(&spec).unwrap();
        assert!(g.values()[0].is_nan() && w.values()[0].is_nan());
        assert_eq!(v.values()[0], smooth_diagonal(3.0));
        assert_eq!(g.try_eval([0.0, 1.0]), Err(Error::SingularDiagonal));
        assert!(v.try_eval([0.0, 0.0]).is_ok());
    }

    #[test]
    fn tables_approach_truncated_sums() {
        // Square truncation at K leaves a tail of order 1/K for G and W and
        // m²/(16π³K²) for V at grid nodes.
        let m = 5.0;
        let k = 256;
        let fine = KernelSpec::new(m, k, 32).unwrap();
        let [g, w, v] = KernelTable::build_all(&fine).unwrap();
        for (i, j) in [(3, 0), (8, 5), (16, 16)] {
            let d = [i as f64 / 32.0, j as f64 / 32.0];
            assert!((g.node(i, j) - green_eval(&fine, d).unwrap()).abs() < 2e-3);
            assert!((w.node(i, j) - yukawa_eval(&fine, d).unwrap()).abs() < 2e-3);
            assert!((v.node(i, j) - vm_eval(&fine, d)).abs() < 2e-6);
        }
    }

    #[test]
    fn smooth_diagonal_bounds_truncated_diagonal() {
        for m in [0.5, 5.0, 20.0] {
            let k = 512;
            let spec = KernelSpec::new(m, k, 4).unwrap();
            let trunc = vm_diag(&spec).unwrap();
            let full = smooth_diagonal(m);
            let tail_bound = m * m / (16.0 * PI.powi(3) * (k * k) as f64);
            assert!(full >= trunc && full - trunc <= 1.1 * tail_bound, "m={m}");
        }
    }

    #[test]
    fn splitting_holds_on_tables() {
        let spec = KernelSpec::new(10.0, 16, 64).unwrap();
        let [g, w, v] = KernelTable::build_all(&spec).unwrap();
        for idx in 1..64 * 64 {
            let e = g.values()[idx] - w.values()[idx] - v.values()[idx];
            assert!(e.abs() < 1e-13);
        }
        let d = [1e-6, 2e-6];
        assert!((g.eval(d) - w.eval(d) - v.eval(d)).abs() < 1e-9);
    }

    #[test]
    fn small_and_large_screening_paths_agree() {
        // Near μ = 1 the k2 = 0 coefficient switches formula.
        let t = 0.3;
        let below = row_coefficient(0, t, Some(1.0 - 1e-12));
        let above = row_coefficient(0, t, Some(1.0 + 1e-12));
        assert!((below - above).abs() < 1e-11);
    }

    #[test]
    fn grid_means_are_small() {
        let spec = KernelSpec::new(5.0, 16, 128).unwrap();
        for t in KernelTable::build_all(&spec).unwrap() {
            // Omitting the origin shifts a singular table's mean by about
            // log(n)/(2π n²).
            assert!(t.grid_mean().abs() < 1e-4, "{}: {}", t.kind(), t.grid_mean());
        }
    }

    #[test]
    fn csv_marks_singular_origin() {
        let spec = KernelSpec::new(2.0, 4, 4).unwrap();
        let t = KernelTable::build(KernelKind::Green, &spec).unwrap();
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# kind,mass,cutoff,grid_n");
        assert_eq!(lines[1], "# green,2,4,4");
        assert_eq!(lines[3], "0,0,singular");
        assert_eq!(lines.len(), 3 + 16);
    }
}
