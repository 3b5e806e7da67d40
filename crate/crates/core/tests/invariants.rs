use lgp::inference::{dynamic_threshold, predict, Fallback, ThresholdParams};
use lgp::model::{backward, forward, prototype, query_attention, score_query, support_attention, EpisodeReps};
use lgp::numerics::{softmax, standardize, Mat, DEFAULT_STD_EPS};
use proptest::prelude::*;

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(vector(cols), rows).prop_map(|r| Mat::from_rows(&r).unwrap())
}

/// Support matrix and description rep of matching width.
fn support_case() -> impl Strategy<Value = (Mat, Vec<f64>)> {
    (1usize..8, 1usize..12).prop_flat_map(|(k, d)| (matrix(k, d), vector(d)))
}

fn episode() -> impl Strategy<Value = EpisodeReps> {
    (2usize..6, 1usize..4, 1usize..6, 1usize..8).prop_flat_map(|(n, k, q, d)| {
        (
            prop::collection::vec(matrix(k, d), n),
            prop::collection::vec(vector(d), n),
            prop::collection::vec(vector(d), q),
            prop::collection::vec(prop::collection::vec(any::<bool>(), n), q),
        )
            .prop_map(|(support, descriptions, queries, labels)| EpisodeReps {
                support,
                descriptions,
                queries,
                labels,
            })
    })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-50.0f64..50.0, 1..20), shift in -500.0f64..500.0) {
        let p = softmax(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn support_attention_is_normalized((support, v_c) in support_case()) {
        let a = support_attention(&v_c, &support).unwrap();
        prop_assert_eq!(a.len(), support.rows());
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn prototype_lies_in_the_convex_hull((support, v_c) in support_case()) {
        let a = support_attention(&v_c, &support).unwrap();
        let r = prototype(&a, &support).unwrap();
        for (j, &x) in r.iter().enumerate() {
            let column: Vec<f64> = support.iter_rows().map(|row| row[j]).collect();
            let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo - 1e-12 <= x && x <= hi + 1e-12, "{} outside [{}, {}]", x, lo, hi);
        }
    }

    #[test]
    fn single_shot_prototype_is_the_support_row(row in vector(7), v_c in vector(7)) {
        let support = Mat::from_rows(&[row.clone()]).unwrap();
        let a = support_attention(&v_c, &support).unwrap();
        prop_assert_eq!(&a, &vec![1.0]);
        prop_assert_eq!(prototype(&a, &support).unwrap(), row);
    }

    #[test]
    fn query_attention_weights_are_normalized(r in vector(9), q in vector(9)) {
        let score = score_query(&[r.clone()], &q, DEFAULT_STD_EPS).unwrap();
        prop_assert!((score.weights[0].iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let attended = query_attention(&r, &q).unwrap();
        for ((p, w), x) in attended.iter().zip(&score.weights[0]).zip(&q) {
            prop_assert!((p - w * x).abs() <= 1e-15);
        }
    }

    #[test]
    fn standardized_scores_have_zero_mean_unit_std(x in prop::collection::vec(-1.0f64..1.0, 2..30)) {
        let z = standardize(&x, DEFAULT_STD_EPS).unwrap();
        prop_assume!(z.std > 1e-3);
        let n = x.len() as f64;
        let mean = z.values.iter().sum::<f64>() / n;
        let var = z.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() <= 1e-9);
        prop_assert!((var.sqrt() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn constant_scores_take_the_eps_guard(c in -1.0f64..1.0, n in 1usize..12) {
        let z = standardize(&vec![c; n], DEFAULT_STD_EPS).unwrap();
        prop_assert_eq!(z.std, 0.0);
        prop_assert!(z.values.iter().all(|&v| v == 0.0));
        // no score clears a threshold of zero, so only the fallback predicts
        let pred = predict(&z.values, &ThresholdParams::default(), Fallback::Argmax);
        prop_assert_eq!(pred.threshold, 0.0);
        prop_assert!(pred.fallback_used);
        prop_assert_eq!(pred.positives.into_iter().collect::<Vec<_>>(), vec![0]);
        let none = predict(&z.values, &ThresholdParams::default(), Fallback::None);
        prop_assert!(none.positives.is_empty());
    }

    #[test]
    fn positives_are_exactly_the_scores_above_threshold(
        y in prop::collection::vec(-3.0f64..3.0, 1..12),
        alpha in -1.0f64..1.0,
        beta in -1.0f64..1.0,
        gamma in 0.0f64..1.0,
    ) {
        let params = ThresholdParams { alpha, beta, gamma };
        let t = dynamic_threshold(&y, &params);
        let plain = predict(&y, &params, Fallback::None);
        let expected: Vec<usize> = (0..y.len()).filter(|&i| y[i] > t).collect();
        prop_assert_eq!(plain.positives.iter().copied().collect::<Vec<_>>(), expected.clone());
        let guarded = predict(&y, &params, Fallback::Argmax);
        prop_assert!(!guarded.positives.is_empty());
        prop_assert_eq!(guarded.fallback_used, expected.is_empty());
    }

    #[test]
    fn forward_and_backward_stay_finite(reps in episode()) {
        let fwd = forward(&reps, DEFAULT_STD_EPS).unwrap();
        prop_assert!(fwd.loss.is_finite());
        for s in &fwd.scores {
            prop_assert!(s.y_hat.iter().all(|v| v.is_finite()));
        }
        prop_assert!(backward(&reps, &fwd).unwrap().is_finite());
    }
}

#[test]
fn identical_prototypes_score_zero_and_keep_finite_gradients() {
    let row = vec![0.5, -1.0, 2.0];
    let support = Mat::from_rows(&[row.clone(), row.clone()]).unwrap();
    let reps = EpisodeReps {
        support: vec![support.clone(), support.clone(), support],
        descriptions: vec![vec![1.0, 0.0, 0.0]; 3],
        queries: vec![vec![1.0, 2.0, 3.0]],
        labels: vec![vec![true, false, false]],
    };
    let fwd = forward(&reps, DEFAULT_STD_EPS).unwrap();
    assert_eq!(fwd.scores[0].y_hat, vec![0.0; 3]);
    // one positive under a uniform softmax, averaged over N = 3
    assert!((fwd.loss - 3f64.ln() / 3.0).abs() < 1e-12);
    assert!(backward(&reps, &fwd).unwrap().is_finite());
}
