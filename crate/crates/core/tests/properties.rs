//! Invariants over randomly generated models and states.

use hybrid_pdp::engine::{
    cumulative_rate, evolve_unnormalized, flow, jump_distribution, jump_time_cdf, sample_jump_time,
};
use hybrid_pdp::linalg::{self, ComplexMatrix};
use hybrid_pdp::model::{
    heisenberg_apply, lindblad_apply, random_density, random_model, random_observable,
    random_unit_vector, total_rate,
};
use hybrid_pdp::{HybridModel, PureHybridState};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model_and_state(seed: u64) -> (HybridModel, PureHybridState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sectors = rng.gen_range(2..=4);
    let model = random_model(&mut rng, sectors, 4, 2.0);
    let sector = rng.gen_range(0..sectors);
    let dim = model.dim(sector).unwrap();
    let psi = random_unit_vector(&mut rng, dim);
    (model.clone(), PureHybridState::new(&model, sector, psi).unwrap())
}

fn random_square(seed: u64, dim: usize, scale: f64) -> ComplexMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
    })
}

/// Composite Simpson rule on `n` (even) panels.
fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exponential_of_negation_is_inverse(seed in any::<u64>(), dim in 1usize..7, scale in 0.01f64..3.0) {
        let m = random_square(seed, dim, scale);
        let product = linalg::matrix_exponential(&m, 1.0).unwrap() * linalg::matrix_exponential(&m, -1.0).unwrap();
        let err = (product - ComplexMatrix::identity(dim, dim)).norm();
        prop_assert!(err <= 1e-10, "{}", err);
    }

    #[test]
    fn exponential_semigroup(seed in any::<u64>(), dim in 1usize..7, s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let m = random_square(seed, dim, 1.0);
        let lhs = linalg::matrix_exponential(&m, s + t).unwrap();
        let rhs = linalg::matrix_exponential(&m, s).unwrap() * linalg::matrix_exponential(&m, t).unwrap();
        prop_assert!((&lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn trace_distance_triangle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.gen_range(1..=5);
        let [a, b, c] = [0, 1, 2].map(|_| random_density(&mut rng, &[dim]).blocks[0].clone());
        let ab = linalg::trace_distance(&a, &b).unwrap();
        let bc = linalg::trace_distance(&b, &c).unwrap();
        let ac = linalg::trace_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!(ab >= -1e-15 && ab <= 1.0 + 1e-12);
    }

    #[test]
    fn norm_decay_matches_integrated_rate(seed in any::<u64>(), t in 0.05f64..3.0) {
        let (model, x) = model_and_state(seed);
        let norm_sq = evolve_unnormalized(&model, x.sector, &x.psi, t).unwrap().norm_squared();
        let integral = simpson(|s| total_rate(&model, &flow(&model, &x, s).unwrap()).unwrap(), 0.0, t, 2000);
        prop_assert!((norm_sq - (-integral).exp()).abs() <= 1e-7, "{} vs {}", norm_sq, (-integral).exp());
        let lambda = cumulative_rate(&model, &x, t).unwrap();
        prop_assert!((lambda - integral).abs() <= 1e-7 * integral.max(1.0));
    }

    #[test]
    fn sampled_time_inverts_cdf(seed in any::<u64>(), p in 0.001f64..0.999) {
        let (model, x) = model_and_state(seed);
        let t_max = 1e3;
        if let Some(tau) = sample_jump_time(&model, &x, p, t_max, 1e-13).unwrap() {
            let f = jump_time_cdf(&model, &x, tau).unwrap();
            prop_assert!((f - p).abs() <= 1e-9, "F({}) = {} vs {}", tau, f, p);
        } else {
            prop_assert!(jump_time_cdf(&model, &x, t_max).unwrap() < p);
        }
    }

    #[test]
    fn branching_probabilities_normalize(seed in any::<u64>()) {
        let (model, x) = model_and_state(seed);
        let dist = jump_distribution(&model, &x).unwrap();
        prop_assert!((dist.total() - 1.0).abs() <= 1e-12);
        prop_assert!(dist.entries.iter().all(|&(b, p)| p >= 0.0 && b != x.sector));
    }

    #[test]
    fn generator_duality(seed in any::<u64>()) {
        let (model, _) = model_and_state(seed);
        let count = model.sector_count().unwrap();
        let dims = model.dims(count).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let rho = random_density(&mut rng, &dims);
        let obs = random_observable(&mut rng, &dims);
        let lhs = lindblad_apply(&model, &rho).unwrap().pairing(&obs);
        let rhs = rho.pairing(&heisenberg_apply(&model, &obs).unwrap());
        prop_assert!((lhs - rhs).norm() <= 1e-11 * (1.0 + lhs.norm()));
        // Trace preservation is duality against the identity.
        prop_assert!(lindblad_apply(&model, &rho).unwrap().trace().abs() <= 1e-12);
    }
}
