//! Square two-dimensional FFTs on row-major buffers.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned forward/inverse transforms for an `n x n` grid.
///
/// Both directions are unnormalised; `inverse` uses the `e^{+2πi k·x}` sign,
/// so placing Fourier coefficients `c_k` at index `(k1 mod n, k2 mod n)` and
/// calling `inverse` evaluates `Σ_k c_k e^{2πi k·x}` at the grid nodes.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(&self.inverse, data);
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(&self.forward, data);
    }

    fn apply(&self, plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(data.len(), n * n, "buffer is not n x n");
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
        transpose(data, n);
        plan.process_with_scratch(data, &mut scratch);
        transpose(data, n);
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn single_mode_evaluates_plane_wave() {
        let n = 12;
        let fft = Fft2::new(n);
        let mut buf = vec![Complex64::default(); n * n];
        // c_(2,-1) = 1
        buf[2 * n + (n - 1)] = Complex64::new(1.0, 0.0);
        fft.inverse(&mut buf);
        for i in 0..n {
            for j in 0..n {
                let phase = 2.0 * PI * (2.0 * i as f64 - j as f64) / n as f64;
                let z = buf[i * n + j];
                assert!((z.re - phase.cos()).abs() < 1e-12);
                assert!((z.im - phase.sin()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip() {
        let n = 10;
        let fft = Fft2::new(n);
        let orig: Vec<Complex64> = (0..n * n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut buf = orig.clone();
        fft.forward(&mut buf);
        fft.inverse(&mut buf);
        for (a, b) in orig.iter().zip(&buf) {
            assert!((a - b / (n * n) as f64).norm() < 1e-12);
        }
    }
}
