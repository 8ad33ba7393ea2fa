use mixhmm::{
    canonical_relabel, joint_cdf, kruskal_rank, log_likelihood, numeric, simulate, time_reversal,
    Emission, FiniteMixtureDensity, HmmModel, ProbabilityVector, TransitionMatrix,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn stochastic_rows(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.05f64..1.0, k), k).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect()
    })
}

fn gaussian_model(k: usize) -> impl Strategy<Value = HmmModel> {
    (
        stochastic_rows(k),
        prop::collection::vec((-5.0f64..5.0, 0.5f64..2.0), k),
    )
        .prop_map(move |(rows, params)| {
            let gamma = TransitionMatrix::new(rows).unwrap();
            let emissions = params
                .into_iter()
                .map(|(m, s)| Emission::Finite(FiniteMixtureDensity::single(m, s).unwrap()))
                .collect();
            HmmModel::new(gamma, ProbabilityVector::uniform(k), emissions).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn double_time_reversal_is_the_identity(rows in stochastic_rows(3)) {
        let gamma = TransitionMatrix::new(rows).unwrap();
        prop_assume!(gamma.is_ergodic());
        let back = time_reversal(&time_reversal(&gamma).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((back.get(i, j) - gamma.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn log_sum_exp_is_shift_invariant(
        terms in prop::collection::vec(-30.0f64..30.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let base = numeric::log_sum_exp(&terms);
        let shifted: Vec<f64> = terms.iter().map(|t| t + shift).collect();
        prop_assert!((numeric::log_sum_exp(&shifted) - (base + shift)).abs() < 1e-9);
    }

    #[test]
    fn kruskal_rank_bounded_by_rank(entries in prop::collection::vec(-1.0f64..1.0, 12)) {
        let m = DMatrix::from_row_slice(3, 4, &entries);
        let kr = kruskal_rank(&m, 1e-8);
        let rank = m.clone().svd(false, false).singular_values.iter().filter(|&&s| s > 1e-8).count();
        prop_assert!(kr <= rank);
        prop_assert!(kr <= 3);
    }

    #[test]
    fn simulate_length_and_determinism(model in gaussian_model(2), n in 1usize..200, seed in 0u64..50) {
        let a = simulate(&model, n, seed).unwrap();
        prop_assert_eq!(a.n(), n);
        prop_assert_eq!(a.true_states.as_ref().unwrap().len(), n);
        let b = simulate(&model, n, seed).unwrap();
        prop_assert_eq!(a.obs, b.obs);
    }

    #[test]
    fn relabeling_preserves_the_likelihood(model in gaussian_model(3), seed in 0u64..20) {
        let series = simulate(&model, 30, seed).unwrap();
        let (sorted, _) = canonical_relabel(&model).unwrap();
        let a = log_likelihood(&model, &series).value;
        let b = log_likelihood(&sorted, &series).value;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn joint_cdf_is_monotone_in_each_threshold(model in gaussian_model(2), y in -3.0f64..3.0) {
        let lo = joint_cdf(&model, &[y, 0.0]).unwrap();
        let hi = joint_cdf(&model, &[y + 0.7, 0.0]).unwrap();
        prop_assert!(hi >= lo - 1e-12);
        let one = joint_cdf(&model, &[1e9, 1e9]).unwrap();
        prop_assert!((one - 1.0).abs() < 1e-12);
    }
}
