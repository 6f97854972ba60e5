//! Spectral evaluation of the torus kernels.
//!
//! On the unit torus `[0,1)^2` the Laplacian has eigenvalues `4π²|k|²` on
//! the plane waves `e^{2πi k·x}`. The three kernels are Fourier multipliers
//! over the non-zero wavevectors:
//!
//! | kernel | multiplier |
//! |--------|------------|
//! | `G`    | `1 / (4π²|k|²)` |
//! | `W_m`  | `1 / (m² + 4π²|k|²)` |
//! | `V_m`  | `m² / (4π²|k|² (m² + 4π²|k|²))` |
//!
//! so that `G = V_m + W_m` mode by mode. The zero mode is excluded from all
//! three; every kernel has zero average over the torus.
//!
//! Two evaluation routes are provided. [`green_eval`], [`yukawa_eval`],
//! [`vm_eval`] and [`vm_diag`] sum the modes with `|k|_∞ ≤ K` directly.
//! [`KernelTable`] tabulates the untruncated kernels on a grid (one lattice
//! direction is summed in closed form) for O(1) lookups in Monte Carlo loops.

mod spectral;
mod table;

pub use spectral::{green_eval, truncated_grid, vm_diag, vm_eval, yukawa_eval};
pub use table::{green_regular_constant, smooth_diagonal, KernelTable};

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Pairs of vortices closer than this are treated as coincident.
pub const COINCIDENCE_SCALE: f64 = 1e-8;

const FOUR_PI_SQ: f64 = 4.0 * PI * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Green,
    Yukawa,
    Smooth,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Green => "green",
            KernelKind::Yukawa => "yukawa",
            KernelKind::Smooth => "smooth",
        }
    }

    /// Whether the kernel has the `-(1/2π) log|d|` singularity at the origin.
    pub fn is_singular(self) -> bool {
        !matches!(self, KernelKind::Smooth)
    }

    /// Fourier multiplier at squared wavenumber `q = |k|² > 0`.
    #[inline]
    pub fn multiplier(self, mass: f64, q: f64) -> f64 {
        let lap = FOUR_PI_SQ * q;
        match self {
            KernelKind::Green => 1.0 / lap,
            KernelKind::Yukawa => 1.0 / (mass * mass + lap),
            KernelKind::Smooth => mass * mass / (lap * (mass * mass + lap)),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mass, spectral cutoff and grid resolution defining the kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    mass: f64,
    cutoff: usize,
    grid_n: usize,
}

impl KernelSpec {
    pub fn new(mass: f64, cutoff: usize, grid_n: usize) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidSpec(format!("mass must be positive, got {mass}")));
        }
        if cutoff < 1 {
            return Err(Error::InvalidSpec("cutoff must be at least 1".into()));
        }
        if grid_n < 4 || grid_n % 2 != 0 {
            return Err(Error::InvalidSpec(format!(
                "grid_n must be even and at least 4, got {grid_n}"
            )));
        }
        Ok(Self { mass, cutoff, grid_n })
    }

    /// Spec with cutoff `K` and the alias-free sampling grid for it.
    pub fn with_cutoff(mass: f64, cutoff: usize) -> Result<Self> {
        Self::new(mass, cutoff, Self::sampling_grid(cutoff))
    }

    /// Spec with the default cutoff `max(64, 4⌈m⌉)`.
    pub fn with_default_cutoff(mass: f64) -> Result<Self> {
        Self::with_cutoff(mass, Self::default_cutoff(mass))
    }

    pub fn default_cutoff(mass: f64) -> usize {
        64.max(4 * mass.ceil() as usize)
    }

    /// `2 * next_even(2K + 2)`: products of two band-limited fields are
    /// still resolved without aliasing (in fact moments up to degree four).
    pub fn sampling_grid(cutoff: usize) -> usize {
        let base = 2 * cutoff + 2;
        2 * (base + base % 2)
    }

    /// Same mass and cutoff on another grid.
    pub fn with_grid(self, grid_n: usize) -> Result<Self> {
        Self::new(self.mass, self.cutoff, grid_n)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    /// Number of retained non-zero wavevectors, `(2K+1)² - 1`.
    pub fn mode_count(&self) -> usize {
        let side = 2 * self.cutoff + 1;
        side * side - 1
    }
}

/// Visits the half of the retained wavevectors with `k2 > 0`, or `k2 = 0` and
/// `k1 > 0`, shell by shell in `|k|_∞`. The other half is the mirror image.
pub fn for_each_half_mode(cutoff: usize, mut f: impl FnMut(usize, i64, i64)) {
    for s in 1..=cutoff as i64 {
        let shell = s as usize;
        for k1 in -s..=s {
            f(shell, k1, s);
        }
        for k2 in 0..s {
            f(shell, s, k2);
        }
        for k2 in 1..s {
            f(shell, -s, k2);
        }
    }
}

/// Wraps a coordinate difference into `[-1/2, 1/2]`.
#[inline]
pub fn wrap_centered(x: f64) -> f64 {
    x - x.round()
}

/// Torus distance between two points of the unit torus.
#[inline]
pub fn torus_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = wrap_centered(a[0] - b[0]);
    let dy = wrap_centered(a[1] - b[1]);
    dx.hypot(dy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(KernelSpec::new(1.0, 8, 36).is_ok());
        assert!(matches!(KernelSpec::new(0.0, 8, 36), Err(Error::InvalidSpec(_))));
        assert!(matches!(KernelSpec::new(1.0, 0, 36), Err(Error::InvalidSpec(_))));
        assert!(matches!(KernelSpec::new(1.0, 8, 35), Err(Error::InvalidSpec(_))));
        assert!(matches!(KernelSpec::new(1.0, 8, 2), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn default_cutoff_policy() {
        assert_eq!(KernelSpec::default_cutoff(5.0), 64);
        assert_eq!(KernelSpec::default_cutoff(20.0), 80);
        assert_eq!(KernelSpec::default_cutoff(16.5), 68);
        assert_eq!(KernelSpec::sampling_grid(64), 260);
        assert_eq!(KernelSpec::sampling_grid(3), 16);
    }

    #[test]
    fn half_modes_cover_each_pair_once() {
        let k = 5;
        let mut seen = std::collections::HashSet::new();
        for_each_half_mode(k, |_, k1, k2| {
            assert!(seen.insert((k1, k2)));
            assert!(!seen.contains(&(-k1, -k2)));
        });
        assert_eq!(seen.len(), ((2 * k + 1) * (2 * k + 1) - 1) / 2);
    }

    #[test]
    fn splitting_holds_per_mode() {
        for q in [1.0, 2.0, 5.0, 130.0] {
            for m in [0.5, 5.0, 40.0] {
                let g = KernelKind::Green.multiplier(m, q);
                let w = KernelKind::Yukawa.multiplier(m, q);
                let v = KernelKind::Smooth.multiplier(m, q);
                assert!((g - w - v).abs() <= 4e-16 * g);
            }
        }
    }
}
