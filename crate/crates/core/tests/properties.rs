//! Property tests for the algebraic invariants that hold on every model:
//! the operator composition law, agreement of the two likelihood routes,
//! likelihood monotonicity under extension, and serialization round-trips.

use proptest::prelude::*;

use icl_lab::experiments::eq2::random_dense_hmm;
use icl_lab::hmm::{forward_likelihood, log_forward_likelihood, operator_likelihood};
use icl_lab::operator::operator_of;
use icl_lab::textfmt;

fn arb_hmm() -> impl Strategy<Value = icl_lab::Hmm> {
    (1usize..=6, 2usize..=8, any::<u64>())
        .prop_map(|(d, m, seed)| random_dense_hmm(d, m, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operator_composition_law(
        (hmm, u, v) in arb_hmm().prop_flat_map(|hmm| {
            let m = hmm.num_obs();
            (
                Just(hmm),
                proptest::collection::vec(0..m, 0..=5),
                proptest::collection::vec(0..m, 0..=5),
            )
        })
    ) {
        let mut uv = u.clone();
        uv.extend_from_slice(&v);
        let lhs = operator_of(&hmm, &uv).unwrap().matrix;
        let rhs = operator_of(&hmm, &u).unwrap().matrix
            .matmul(&operator_of(&hmm, &v).unwrap().matrix);
        prop_assert!(lhs.sub(&rhs).max_abs() <= 1e-12);
    }

    #[test]
    fn forward_equals_operator_route(
        (hmm, seq) in arb_hmm().prop_flat_map(|hmm| {
            let m = hmm.num_obs();
            (Just(hmm), proptest::collection::vec(0..m, 1..=10))
        })
    ) {
        let init = hmm.pretrain_init().to_vec();
        let f = forward_likelihood(&hmm, &init, &seq).unwrap();
        let o = operator_likelihood(&hmm, &init, &seq).unwrap();
        prop_assert!((f - o).abs() <= 1e-12 * f.max(1e-30), "{f} vs {o}");
        // scaled-forward log route agrees too
        let lf = log_forward_likelihood(&hmm, &init, &seq).unwrap();
        if f > 0.0 {
            prop_assert!((lf - f.ln()).abs() < 1e-9);
        } else {
            prop_assert_eq!(lf, f64::NEG_INFINITY);
        }
    }

    #[test]
    fn likelihood_never_grows_under_extension(
        (hmm, seq, next) in arb_hmm().prop_flat_map(|hmm| {
            let m = hmm.num_obs();
            (Just(hmm), proptest::collection::vec(0..m, 1..=8), 0..m)
        })
    ) {
        let init = hmm.pretrain_init().to_vec();
        let base = forward_likelihood(&hmm, &init, &seq).unwrap();
        let mut ext = seq.clone();
        ext.push(next);
        let extended = forward_likelihood(&hmm, &init, &ext).unwrap();
        prop_assert!(extended <= base + 1e-15);
    }

    #[test]
    fn hmm_text_format_round_trips(hmm in arb_hmm()) {
        let text = textfmt::hmm_to_string(&hmm);
        let back = textfmt::hmm_from_str("prop", &text).unwrap();
        prop_assert_eq!(&hmm, &back);
        prop_assert_eq!(text, textfmt::hmm_to_string(&back));
    }

    #[test]
    fn kernel_scores_are_scale_invariant(
        (weights, scale) in (
            proptest::collection::vec(-2.0f64..2.0, 1..=12),
            proptest::num::f64::POSITIVE.prop_filter("finite positive", |s| s.is_finite() && *s > 1e-6 && *s < 1e6),
        )
    ) {
        use icl_lab::hmm::TokenSeq;
        let label_set = [4usize, 5];
        let demos: Vec<(TokenSeq, usize)> = weights
            .iter()
            .enumerate()
            .map(|(i, _)| (TokenSeq(vec![1]), label_set[i % 2]))
            .collect();
        let a = icl_lab::predict::scores_from_weights(&label_set, &demos, &weights);
        let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let b = icl_lab::predict::scores_from_weights(&label_set, &demos, &scaled);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.iter().zip(&b) {
                    // ratios of sums: scale cancels exactly up to round-off
                    prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
                }
            }
            // a vanishing weight sum is a legitimate diagnostic on either side
            (Err(_), _) | (_, Err(_)) => {}
        }
    }
}
