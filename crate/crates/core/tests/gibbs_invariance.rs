use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vortexgas_core::gibbs::{boltzmann_average, hamiltonian, VortexConfig};
use vortexgas_core::kernels::{KernelKind, KernelSpec, KernelTable};

fn green() -> KernelTable {
    KernelTable::build(KernelKind::Green, &KernelSpec::with_default_cutoff(1.0).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_is_invariant_under_symmetries(
        seed in any::<u64>(),
        half in 1usize..6,
        tx in 0.0f64..1.0,
        ty in 0.0f64..1.0,
        rot in 0usize..6,
    ) {
        let table = green();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = VortexConfig::uniform(2 * half, &mut rng);
        let h = hamiltonian(&cfg, &table).unwrap();
        let tol = 1e-9 * (1.0 + h.abs());
        prop_assert!((hamiltonian(&cfg.translated([tx, ty]), &table).unwrap() - h).abs() < tol);
        prop_assert!((hamiltonian(&cfg.sign_swapped(), &table).unwrap() - h).abs() < tol);

        let mut plus = cfg.plus().to_vec();
        let mut minus = cfg.minus().to_vec();
        plus.rotate_left(rot % half);
        minus.reverse();
        let permuted = VortexConfig::new(plus, minus).unwrap();
        prop_assert!((hamiltonian(&permuted, &table).unwrap() - h).abs() < tol);
    }
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let table = green();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| boltzmann_average(&table, 8, 0.25, 5000, 99).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
}
