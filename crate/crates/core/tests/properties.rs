//! Randomized properties of the public API.

use polycascade::cascade::{Cascade, CascadeConfig};
use polycascade::constellation::{synthesize_u, Constellation, OctaCoefficients};
use polycascade::data::{batch_indices, Dataset, Labels, TransformSpec};
use polycascade::kernel::KernelParams;
use polycascade::linalg::Matrix;
use polycascade::metrics::roc_auc;
use polycascade::package::{
    distances_fast, distances_naive, grad_fast, grad_naive, h_fast, h_naive, lambda_fast,
    lambda_naive,
};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Matrix::from_fn(rows, cols, |i, j| v[i * cols + j]))
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().max_abs() / b.max_abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_is_invariant_under_monotone_maps(
        scores in prop::collection::vec(-5.0f64..5.0, 2..60),
        seed in any::<u64>(),
    ) {
        let positive: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
        prop_assume!(positive.iter().any(|&p| !p));
        let a = roc_auc(&scores, &positive).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
        let b = roc_auc(&mapped, &positive).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let c = roc_auc(&negated, &positive).unwrap();
        prop_assert!((a + c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batches_partition_the_rows(n in 1usize..500, r in 1usize..600, seed in any::<u64>(), shuffle in any::<bool>()) {
        let batches = batch_indices(n, r, seed, shuffle).unwrap();
        let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= r));
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn fitted_scaling_lands_in_range_and_inverts(x in matrix(12, 4)) {
        let data = Dataset::new(x.clone(), Labels::Class(vec![0; 12])).unwrap();
        let t = TransformSpec::default().fit(&data).unwrap();
        let y = t.apply(&data).unwrap();
        prop_assert!(y.features.as_slice().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        let back = t.invert(&y);
        prop_assert!(rel(&back.features, &x) < 1e-12);
    }

    #[test]
    fn fast_routes_match_dense_ones((n, r) in (1usize..12, 1usize..9), seed in any::<u64>()) {
        let p = KernelParams::default();
        let co = OctaCoefficients::derive(n, &p, 0.0).unwrap();
        let u: Matrix = synthesize_u(&co, n);
        let c = Constellation::<f64>::octahedral(n).unwrap().points();
        let k = 2 * n + 1;
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let x = Matrix::from_fn(r, n, |_, _| next());
        let y = Matrix::from_fn(k, 3, |_, _| next());
        let psi = Matrix::from_fn(r, k, |_, _| next());
        let m = distances_fast(&x);
        prop_assert!(rel(&m, &distances_naive(&x, &c).unwrap()) < 1e-12);
        prop_assert!(rel(&lambda_fast(&co, &y).unwrap(), &lambda_naive(&u, &y).unwrap()) < 1e-8);
        let kmat = polycascade::kernel::phi_matrix(&m, &p).unwrap();
        prop_assert!(rel(&h_fast(&co, &kmat).unwrap(), &h_naive(&kmat, &u).unwrap()) < 1e-8);
        prop_assert!(rel(&grad_fast(&x, &psi).unwrap(), &grad_naive(&x, &psi, &c).unwrap()) < 1e-12);
    }

    #[test]
    fn evaluation_is_row_independent(x in matrix(6, 3), seed in 0u64..1000) {
        let cascade = Cascade::<f64>::init(&[3, 4, 1], CascadeConfig::default(), seed).unwrap();
        let full = cascade.evaluate(&x).unwrap();
        for i in 0..x.rows() {
            let row = Matrix::from_fn(1, 3, |_, j| x[(i, j)]);
            let one = cascade.evaluate(&row).unwrap();
            prop_assert!((one[(0, 0)] - full[(i, 0)]).abs() <= 1e-10 * (1.0 + full[(i, 0)].abs()));
        }
    }
}
