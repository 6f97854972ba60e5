//! Truncated mode sums over `0 < |k|_∞ ≤ K`.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{for_each_half_mode, wrap_centered, KernelKind, KernelSpec, COINCIDENCE_SCALE};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::sum::NeumaierSum;

/// `Σ mult(|k|²) cos(2π k·d)` summed shell by shell with compensation.
///
/// The `±k` pairs are folded, so the result is an exactly even function of
/// `d`. Each shell is accumulated separately and the shell totals are then
/// added in increasing order.
fn mode_sum(spec: &KernelSpec, d: [f64; 2], kind: KernelKind) -> f64 {
    let k = spec.cutoff() as i64;
    let dx = wrap_centered(d[0]);
    let dy = wrap_centered(d[1]);
    let phase_x: Vec<(f64, f64)> = (-k..=k)
        .map(|k1| (2.0 * PI * k1 as f64 * dx).sin_cos())
        .collect();
    let phase_y: Vec<(f64, f64)> = (0..=k)
        .map(|k2| (2.0 * PI * k2 as f64 * dy).sin_cos())
        .collect();
    let mass = spec.mass();

    let mut total = NeumaierSum::new();
    let mut shell_sum = NeumaierSum::new();
    let mut current = 1usize;
    for_each_half_mode(spec.cutoff(), |shell, k1, k2| {
        if shell != current {
            total.add(shell_sum.value());
            shell_sum = NeumaierSum::new();
            current = shell;
        }
        let (sx, cx) = phase_x[(k1 + k) as usize];
        let (sy, cy) = phase_y[k2 as usize];
        let q = (k1 * k1 + k2 * k2) as f64;
        shell_sum.add(kind.multiplier(mass, q) * (cx * cy - sx * sy));
    });
    total.add(shell_sum.value());
    2.0 * total.value()
}

fn check_nonzero(d: [f64; 2]) -> Result<()> {
    if wrap_centered(d[0]).hypot(wrap_centered(d[1])) < COINCIDENCE_SCALE {
        Err(Error::SingularDiagonal)
    } else {
        Ok(())
    }
}

/// Truncated Green function `Σ e^{2πi k·d} / (4π²|k|²)`.
pub fn green_eval(spec: &KernelSpec, d: [f64; 2]) -> Result<f64> {
    check_nonzero(d)?;
    Ok(mode_sum(spec, d, KernelKind::Green))
}

/// Truncated screened kernel `Σ e^{2πi k·d} / (m² + 4π²|k|²)` (no zero mode).
pub fn yukawa_eval(spec: &KernelSpec, d: [f64; 2]) -> Result<f64> {
    check_nonzero(d)?;
    Ok(mode_sum(spec, d, KernelKind::Yukawa))
}

/// Truncated smooth part `V_m`; finite everywhere including `d = 0`.
pub fn vm_eval(spec: &KernelSpec, d: [f64; 2]) -> f64 {
    mode_sum(spec, d, KernelKind::Smooth)
}

/// `V_m(0,0) = Σ m² / (4π²|k|²(m² + 4π²|k|²))`, the pointwise variance of
/// the Gaussian field.
///
/// Requires `K ≥ 4m` so the sum has passed the mass scale.
pub fn vm_diag(spec: &KernelSpec) -> Result<f64> {
    let required = 4.0 * spec.mass();
    if (spec.cutoff() as f64) < required {
        return Err(Error::CutoffTooSmall {
            cutoff: spec.cutoff(),
            required,
        });
    }
    Ok(vm_eval(spec, [0.0, 0.0]))
}

/// The truncated kernel at every node of the `grid_n x grid_n` grid, row-major
/// with index `i * grid_n + j` for displacement `(i, j) / grid_n`.
///
/// Computed by one inverse FFT; needs `grid_n > 2K` so no mode aliases. The
/// origin entry is the (finite) truncated sum there.
pub fn truncated_grid(kind: KernelKind, spec: &KernelSpec) -> Result<Vec<f64>> {
    let n = spec.grid_n();
    let k = spec.cutoff();
    if n <= 2 * k {
        return Err(Error::InvalidSpec(format!(
            "grid_n = {n} aliases modes of cutoff {k}; need grid_n > 2K"
        )));
    }
    let mut buf = vec![Complex64::default(); n * n];
    let wrap = |x: i64| x.rem_euclid(n as i64) as usize;
    for_each_half_mode(k, |_, k1, k2| {
        let q = (k1 * k1 + k2 * k2) as f64;
        let c = Complex64::new(kind.multiplier(spec.mass(), q), 0.0);
        buf[wrap(k1) * n + wrap(k2)] = c;
        buf[wrap(-k1) * n + wrap(-k2)] = c;
    });
    Fft2::new(n).inverse(&mut buf);
    Ok(buf.into_iter().map(|z| z.re).collect())
}
