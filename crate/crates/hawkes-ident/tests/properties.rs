//! Randomized invariants that cut across modules: transform identities,
//! estimator symmetries, scoring invariances, and file round-trips.

use hawkes_ident::evaluate::{mcc, CorrMethod};
use hawkes_ident::identify::align;
use hawkes_ident::model::{transfer_matrix, HawkesModel, KernelSpec};
use hawkes_ident::simulate::{simulate_inar, CountNoise, EventSequence, Observation};
use hawkes_ident::spectral::{estimate_psd, Taper};
use hawkes_ident::{assignment, cumulants, io};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn kernel_strategy() -> impl Strategy<Value = KernelSpec<f64>> {
    prop_oneof![
        (0.01..1.5f64, 0.3..3.0f64)
            .prop_map(|(alpha, beta)| KernelSpec::Exponential { alpha, beta }),
        (0.01..1.0f64, 1.1..2.5f64, 0.3..2.0f64)
            .prop_map(|(alpha, beta, c)| KernelSpec::PowerLaw { alpha, beta, c }),
        (0.01..1.0f64, 0.0..1.0f64, 0.05..2.0f64).prop_map(|(height, start, len)| {
            KernelSpec::Rectangular {
                height,
                start,
                end: start + len,
            }
        }),
        Just(KernelSpec::Zero),
    ]
}

fn data_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-3.0..3.0f64, rows * cols)
        .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

proptest! {
    #[test]
    fn fourier_at_zero_matches_the_l1_norm(k in kernel_strategy()) {
        let at_zero = k.fourier(0.0);
        let l1 = k.l1_norm().unwrap();
        prop_assert!((at_zero.re - l1).abs() <= 1e-8 * (1.0 + l1));
        prop_assert_eq!(at_zero.im, 0.0);
    }

    #[test]
    fn fourier_is_hermitian_in_frequency(k in kernel_strategy(), omega in 0.01..20.0f64) {
        let plus = k.fourier(omega);
        let minus = k.fourier(-omega);
        prop_assert!((minus.re - plus.re).abs() <= 1e-10 * (1.0 + plus.re.abs()));
        prop_assert!((minus.im + plus.im).abs() <= 1e-10 * (1.0 + plus.im.abs()));
    }

    #[test]
    fn transfer_inverts_the_fourier_system(
        alphas in proptest::collection::vec(0.02..0.28f64, 4),
        betas in proptest::collection::vec(0.5..2.5f64, 4),
        omega in -8.0..8.0f64,
    ) {
        // Column sums below 0.56 keep the spectral radius safely under one.
        let spec = |idx: usize| KernelSpec::Exponential {
            alpha: alphas[idx],
            beta: betas[idx],
        };
        let m = HawkesModel::new(
            vec![0.3, 0.4],
            vec![vec![spec(0), spec(1)], vec![spec(2), spec(3)]],
        )
        .unwrap();
        let h = transfer_matrix(&m, omega).unwrap();
        let phi = m.fourier_matrix(omega);
        let eye = DMatrix::<f64>::identity(2, 2).map(|v| hawkes_ident::Cplx::new(v, 0.0));
        let residual = &h * (&eye - &phi) - &eye;
        let worst = residual.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        prop_assert!(worst <= 1e-10, "max deviation {worst}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn identical_seeds_reproduce_the_count_series(seed in 0u64..1000) {
        let m = HawkesModel::new(
            vec![0.4, 0.3],
            vec![
                vec![KernelSpec::Exponential { alpha: 0.3, beta: 1.5 }, KernelSpec::Zero],
                vec![KernelSpec::Exponential { alpha: 0.2, beta: 1.0 }, KernelSpec::Zero],
            ],
        )
        .unwrap();
        let (a, _) = simulate_inar(&m, 0.25, 30.0, &CountNoise::Poisson, seed).unwrap();
        let (b, _) = simulate_inar(&m, 0.25, 30.0, &CountNoise::Poisson, seed).unwrap();
        prop_assert_eq!(a.counts, b.counts);
        prop_assert_eq!(a.delta, b.delta);
    }

    #[test]
    fn estimated_spectra_are_hermitian_and_nonnegative(x in data_matrix(96, 2)) {
        let s = estimate_psd(&x, 16, Taper::Hann, 2).unwrap();
        for m in &s.matrices {
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert_eq!(m[(i, j)], m[(j, i)].conj());
                }
            }
            let eig = m.clone().symmetric_eigen();
            let trace = m[(0, 0)].re + m[(1, 1)].re;
            for &ev in eig.eigenvalues.iter() {
                prop_assert!(ev >= -1e-8 * trace.max(1e-12), "eigenvalue {ev}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cumulants_are_homogeneous_under_scaling(
        data in proptest::collection::vec(-2.0..2.0f64, 80),
        scale in 0.2..3.0f64,
        order in 2usize..=4,
    ) {
        let base = Observation { delta: 1.0, data: DMatrix::from_vec(80, 1, data.clone()) };
        let scaled = Observation {
            delta: 1.0,
            data: DMatrix::from_vec(80, 1, data.iter().map(|v| v * scale).collect()),
        };
        let lags = vec![0; order - 1];
        let k_base = cumulants::estimate_cumulant(&base, order, &lags).unwrap();
        let k_scaled = cumulants::estimate_cumulant(&scaled, order, &lags).unwrap();
        let expect = k_base.data[0] * scale.powi(order as i32);
        prop_assert!(
            (k_scaled.data[0] - expect).abs() <= 1e-9 * (1.0 + expect.abs()),
            "order {order}: {} vs {expect}",
            k_scaled.data[0]
        );
    }

    #[test]
    fn mcc_is_invariant_to_permutation_sign_and_scale(
        base in data_matrix(40, 3),
        swap in 0usize..6,
        signs in proptest::collection::vec(proptest::bool::ANY, 3),
        scales in proptest::collection::vec(0.2..5.0f64, 3),
    ) {
        let perms: [[usize; 3]; 6] =
            [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let perm = perms[swap];
        let transformed = DMatrix::from_fn(40, 3, |i, j| {
            let sgn = if signs[j] { -1.0 } else { 1.0 };
            base[(i, perm[j])] * sgn * scales[j]
        });
        let self_score = mcc(&transformed, &base, CorrMethod::Pearson).unwrap();
        prop_assert!((self_score.score - 1.0).abs() <= 1e-9, "score {}", self_score.score);
        // Transforming one side must not move the score against a third matrix.
        let other = DMatrix::from_fn(40, 3, |i, j| (1.0 + i as f64 * 0.1) * ((j + 1) as f64).sin()
            + base[(i, j)] * 0.05);
        let raw = mcc(&base, &other, CorrMethod::Pearson).unwrap();
        let moved = mcc(&transformed, &other, CorrMethod::Pearson).unwrap();
        prop_assert!((raw.score - moved.score).abs() <= 1e-9);
    }

    #[test]
    fn alignment_permutation_survives_positive_rescaling(
        recovered in data_matrix(6, 3),
        truth in data_matrix(6, 3),
        scales in proptest::collection::vec(0.05..20.0f64, 3),
    ) {
        let base = align(&recovered, &truth).unwrap();
        let rescaled = DMatrix::from_fn(6, 3, |i, j| recovered[(i, j)] * scales[j]);
        let again = align(&rescaled, &truth).unwrap();
        prop_assert_eq!(base.permutation, again.permutation);
        prop_assert!((base.similarity - again.similarity).abs() <= 1e-9);
    }

    #[test]
    fn assignment_total_is_never_beaten_by_a_sampled_permutation(
        cost in data_matrix(4, 4),
        tries in proptest::collection::vec(0usize..24, 10),
    ) {
        let (_, best) = assignment::min_cost_assignment(&cost);
        // Enumerate S4 lazily: index k picks a permutation via factorial digits.
        for &t in &tries {
            let digits = [t / 6 % 4, t / 2 % 3, t % 2, 0];
            let mut pool: Vec<usize> = (0..4).collect();
            let mut total = 0.0;
            for (row, d) in digits.iter().enumerate() {
                let col = pool.remove(*d);
                total += cost[(row, col)];
            }
            prop_assert!(best <= total + 1e-12, "{best} > {total}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn event_files_roundtrip(
        raw in proptest::collection::vec(proptest::collection::vec(0.001..9.999f64, 0..8), 2)
    ) {
        let events: Vec<Vec<f64>> = raw
            .into_iter()
            .map(|mut list| {
                // Cumulative offsets keep each list strictly increasing.
                list.sort_by(|a, b| a.partial_cmp(b).unwrap());
                list.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
                list
            })
            .collect();
        let horizon = 10.0;
        let ev = EventSequence::new(horizon, events).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        io::write_events(&path, &ev).unwrap();
        let back: EventSequence<f64> = io::read_events(&path, 2, horizon).unwrap();
        for (a, b) in ev.events.iter().zip(back.events.iter()) {
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn observation_files_roundtrip_bitwise(data in data_matrix(4, 3)) {
        let o = Observation { delta: 0.125f64, data };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        io::write_observation(&path, &o).unwrap();
        let back: Observation<f64> = io::read_observation(&path, 3).unwrap();
        prop_assert_eq!(back.delta, o.delta);
        prop_assert_eq!(back.data, o.data);
    }
}
