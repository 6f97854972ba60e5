use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;
use vortexgas_core::kernels::{KernelKind, KernelSpec, KernelTable};

/// Torus Green function from the Jacobi theta function θ₁ with `q = e^{-π}`.
fn theta_green(x: f64, y: f64) -> f64 {
    let y = y - y.round();
    let q = (-PI).exp();
    let z = Complex64::new(PI * x, PI * y);
    let mut theta = Complex64::new(0.0, 0.0);
    for n in 0..30 {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        theta += sign * q.powf((n as f64 + 0.5).powi(2)) * ((2 * n + 1) as f64 * z).sin();
    }
    theta *= 2.0;
    let l: f64 = (1..40).map(|n| (-(-2.0 * PI * n as f64).exp()).ln_1p()).sum();
    (-theta.norm().ln() + l) / (2.0 * PI) + 0.5 * y * y - 1.0 / 24.0
}

fn build(m: f64) -> [KernelTable; 3] {
    let spec = KernelSpec::with_default_cutoff(m).unwrap().with_grid(256).unwrap();
    KernelTable::build_all(&spec).unwrap()
}

fn tables(m: f64) -> &'static [KernelTable; 3] {
    static CACHE: OnceLock<[[KernelTable; 3]; 3]> = OnceLock::new();
    let all = CACHE.get_or_init(|| [build(2.0), build(5.0), build(10.0)]);
    &all[[2.0, 5.0, 10.0].iter().position(|&x| x == m).expect("cached mass")]
}

#[test]
fn green_table_matches_theta_function() {
    let [g, _, _] = tables(5.0);
    for &(x, y) in &[(0.25, 0.0), (0.1, 0.37), (0.5, 0.5), (0.013, 0.021), (0.31, 0.77)] {
        let err = (g.eval([x, y]) - theta_green(x, y)).abs();
        assert!(err < 2e-5, "({x}, {y}): error {err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kernels_are_even_periodic_and_split(
        x in 0.0f64..1.0,
        y in 0.0f64..1.0,
        shift in -3i32..3,
    ) {
        prop_assume!(x.min(1.0 - x).hypot(y.min(1.0 - y)) > 1e-3);
        for m in [2.0, 10.0] {
            let [g, w, v] = tables(m);
            for t in [g, w, v] {
                let a = t.eval([x, y]);
                prop_assert!((a - t.eval([-x, -y])).abs() < 1e-9);
                prop_assert!((a - t.eval([y, x])).abs() < 1e-9);
                prop_assert!((a - t.eval([x + shift as f64, y - shift as f64])).abs() < 1e-9);
            }
            let split = g.eval([x, y]) - w.eval([x, y]) - v.eval([x, y]);
            prop_assert!(split.abs() < 1e-10, "m = {}: G - W - V = {:e}", m, split);
        }
    }
}

#[test]
fn kernel_kinds_have_zero_mean() {
    for t in tables(10.0) {
        assert!(t.grid_mean().abs() < 1e-3, "{}: {}", t.kind(), t.grid_mean());
    }
    let parts = KernelKind::Smooth.multiplier(3.0, 1.0) + KernelKind::Yukawa.multiplier(3.0, 1.0);
    let whole = KernelKind::Green.multiplier(3.0, 1.0);
    assert!((parts - whole).abs() < 1e-15 * whole);
}
