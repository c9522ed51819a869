use nalgebra::DMatrix;
use proptest::prelude::*;
use subspace_cpd::detection::DetectionConfig;
use subspace_cpd::evaluation::{labels_from_changepoints, v_measure, v_measure_scores};
use subspace_cpd::factorization::{factorize, nuclear_norm_product, SolverOptions};
use subspace_cpd::simulation::{random_basis, rotate_basis, subspace_distance_sq};
use subspace_cpd::{detection, TimeSeriesMatrix};

fn tight() -> SolverOptions {
    SolverOptions {
        max_iters: 20_000,
        rel_tol: 1e-13,
        seed: 3,
    }
}

fn matrix(p: usize, n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, p * n).prop_map(move |v| DMatrix::from_vec(p, n, v))
}

fn instance() -> impl Strategy<Value = (DMatrix<f64>, usize, f64)> {
    (2usize..7, 3usize..12).prop_flat_map(|(p, n)| (matrix(p, n), 1..=p.min(n), 0.0..4.0f64))
}

/// Optimal objective via singular value soft-thresholding of the top `d` values.
fn svt_objective(x: &DMatrix<f64>, d: usize, lambda: f64) -> f64 {
    let mut sv: Vec<f64> = x
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.iter()
        .enumerate()
        .map(|(i, &s)| {
            if i < d {
                let t = (s - lambda / 2.0).max(0.0);
                (s - t).powi(2) + lambda * t
            } else {
                s * s
            }
        })
        .sum()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn objective_trace_never_increases((x, d, lambda) in instance()) {
        let series = TimeSeriesMatrix::new(x).unwrap();
        let fit = factorize(&series, d, lambda, &SolverOptions::default()).unwrap();
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-10), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn reaches_thresholded_svd_optimum((x, d, lambda) in instance()) {
        let oracle = svt_objective(&x, d, lambda);
        let fit = factorize(&TimeSeriesMatrix::new(x).unwrap(), d, lambda, &tight()).unwrap();
        prop_assert!(fit.objective >= oracle - 1e-9 * oracle.max(1.0));
        prop_assert!(close(fit.objective, oracle, 1e-5), "{} vs {}", fit.objective, oracle);
    }

    #[test]
    fn invariant_under_rotations((x, d, lambda) in instance(), seed in 0u64..1000) {
        let (p, n) = x.shape();
        let q = random_basis(p, p, seed).unwrap();
        let r = random_basis(n, n, seed + 1).unwrap();
        let base = factorize(&TimeSeriesMatrix::new(x.clone()).unwrap(), d, lambda, &tight()).unwrap();
        let rotated = factorize(&TimeSeriesMatrix::new(&q * x * r).unwrap(), d, lambda, &tight()).unwrap();
        prop_assert!(close(base.objective, rotated.objective, 1e-5));
    }

    #[test]
    fn nuclear_norm_matches_svd(
        (z, s) in (1usize..6, 1usize..8, 1usize..8)
            .prop_flat_map(|(d, p, k)| (matrix(p, d), matrix(d, k)))
    ) {
        let direct: f64 = (&z * &s).svd(false, false).singular_values.sum();
        let via = nuclear_norm_product(&z, &s).unwrap();
        prop_assert!((via - direct).abs() <= 1e-8 * direct.max(1e-12), "{via} vs {direct}");
    }

    #[test]
    fn stronger_regularisation_shrinks((x, d, _) in instance()) {
        let series = TimeSeriesMatrix::new(x).unwrap();
        let mut last = f64::INFINITY;
        for lambda in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0] {
            let nuc = factorize(&series, d, lambda, &tight()).unwrap().nuclear_norm;
            prop_assert!(nuc <= last + 1e-6 * last.clamp(1.0, 1e6));
            last = nuc;
        }
    }

    #[test]
    fn rotation_hits_requested_distance(p in 4usize..20, d in 1usize..4, frac in 0.0..1.0f64, seed in 0u64..10_000) {
        prop_assume!(2 * d <= p);
        let z = random_basis(p, d, seed).unwrap();
        let delta = frac * (d as f64).sqrt();
        let w = rotate_basis(&z, delta, seed ^ 7).unwrap();
        prop_assert!((&w.transpose() * &w - DMatrix::identity(d, d)).abs().max() < 1e-10);
        prop_assert!((subspace_distance_sq(&z, &w) - delta * delta).abs() < 1e-8);
    }

    #[test]
    fn v_measure_ignores_label_names(
        (truth, pred) in (1usize..30).prop_flat_map(|n| (
            prop::collection::vec(0usize..4, n),
            prop::collection::vec(0usize..4, n),
        )),
        shift in 1usize..50,
    ) {
        let base = v_measure_scores(&truth, &pred).unwrap();
        let renamed: Vec<usize> = pred.iter().map(|l| (l * 7 + shift) % 1000).collect();
        let again = v_measure_scores(&truth, &renamed).unwrap();
        prop_assert!((base.v_measure - again.v_measure).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&base.v_measure));

        let swapped = v_measure_scores(&pred, &truth).unwrap();
        prop_assert!((base.homogeneity - swapped.completeness).abs() < 1e-12);
        prop_assert!((base.v_measure - swapped.v_measure).abs() < 1e-12);
        prop_assert!((v_measure(&truth, &truth).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn labels_follow_changepoints(
        n in 2usize..60,
        raw in prop::collection::btree_set(1usize..59, 0..6),
    ) {
        let cps: Vec<usize> = raw.into_iter().filter(|&c| c < n).collect();
        let labels = labels_from_changepoints(&cps, n).unwrap();
        prop_assert_eq!(labels.len(), n);
        prop_assert_eq!(labels[n - 1], cps.len());
        for (i, &c) in cps.iter().enumerate() {
            prop_assert_eq!(labels[c - 1], i);
            prop_assert_eq!(labels[c], i + 1);
        }
    }
}

fn two_subspace(p: usize, n: usize, tau: usize, seed: u64) -> DMatrix<f64> {
    let z1 = random_basis(p, 2, seed).unwrap();
    let z2 = rotate_basis(&z1, 2f64.sqrt(), seed + 1).unwrap();
    let s = random_basis(n, 2, seed + 2).unwrap().transpose() * (n as f64).sqrt();
    DMatrix::from_fn(p, n, |r, c| {
        let z = if c < tau { &z1 } else { &z2 };
        (0..2).map(|j| z[(r, j)] * s[(j, c)]).sum()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scan_is_rotation_invariant_and_deterministic(seed in 0u64..10_000, tau in 40usize..80) {
        let x = two_subspace(6, 120, tau, seed);
        let q = random_basis(6, 6, seed + 9).unwrap();
        let cfg = DetectionConfig::new(2, 0.1).with_mu(1.0);
        let a = detection::detect(&TimeSeriesMatrix::new(x.clone()).unwrap(), &cfg).unwrap();
        let b = detection::detect(&TimeSeriesMatrix::new(x.clone()).unwrap(), &cfg).unwrap();
        let c = detection::detect(&TimeSeriesMatrix::new(q * x).unwrap(), &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a.changepoints, &c.changepoints);
        prop_assert_eq!(a.changepoints, vec![tau]);
    }
}
