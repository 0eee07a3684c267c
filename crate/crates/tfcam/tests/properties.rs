//! Randomized property tests for the numeric and data layers.

use proptest::prelude::*;

use tfcam::data::{generate_cohort, parse_csv, GeneratorSpec, ImputePolicy};
use tfcam::explain::feature_importance;
use tfcam::metrics::{auroc, thresholded_metrics};
use tfcam::tape::Tape;
use tfcam::tensor::Tensor;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, len)
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(data in finite_vec(12)) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3, 4], data).unwrap());
        let y = tape.softmax_last(x);
        let out = tape.value(y);
        for r in 0..3 {
            let row: f64 = (0..4).map(|c| out.at2(r, c)).sum();
            prop_assert!((row - 1.0).abs() < 1e-9);
            for c in 0..4 {
                prop_assert!(out.at2(r, c) >= 0.0);
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant(data in finite_vec(6), shift in -30.0..30.0f64) {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![1, 6], data.clone()).unwrap());
        let b = tape.leaf(Tensor::new(vec![1, 6], data.iter().map(|v| v + shift).collect()).unwrap());
        let (ya, yb) = (tape.softmax_last(a), tape.softmax_last(b));
        let (va, vb) = (tape.value(ya).clone(), tape.value(yb).clone());
        for (x, y) in va.data().iter().zip(vb.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn auroc_stays_in_unit_interval_and_flips_symmetrically(
        scores in finite_vec(30),
        mask in prop::collection::vec(any::<bool>(), 30),
    ) {
        let labels: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        prop_assume!(labels.iter().any(|&y| y == 1.0) && labels.iter().any(|&y| y == 0.0));
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = auroc(&negated, &labels).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auroc_is_monotone_transform_invariant(
        scores in finite_vec(25),
        mask in prop::collection::vec(any::<bool>(), 25),
    ) {
        let labels: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        prop_assume!(labels.iter().any(|&y| y == 1.0) && labels.iter().any(|&y| y == 0.0));
        let a = auroc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (s / 10.0).tanh() * 3.0 + 7.0).collect();
        let b = auroc(&transformed, &labels).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn thresholded_metric_identities(
        scores in prop::collection::vec(0.0..1.0f64, 20),
        mask in prop::collection::vec(any::<bool>(), 20),
        threshold in 0.1..0.9f64,
    ) {
        let labels: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let m = thresholded_metrics(&scores, &labels, threshold);
        let c = m.confusion;
        prop_assert_eq!(c.tp + c.fp + c.tn + c.fn_, 20);
        if m.precision > 0.0 && m.recall > 0.0 {
            let harmonic = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            prop_assert!((m.f1 - harmonic).abs() < 1e-12);
        }
        for v in [m.precision, m.recall, m.f1, m.accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn importance_scales_linearly_and_preserves_order(
        data in finite_vec(2 * 3 * 4),
        lambda in 0.01..100.0f64,
    ) {
        let names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let c = Tensor::new(vec![2, 3, 4], data.clone()).unwrap();
        let scaled = Tensor::new(vec![2, 3, 4], data.iter().map(|v| v * lambda).collect()).unwrap();
        let a = feature_importance(&c, &names).unwrap();
        let b = feature_importance(&scaled, &names).unwrap();
        for ((na, sa), (nb, sb)) in a.scores.iter().zip(&b.scores) {
            prop_assert_eq!(na, nb);
            prop_assert!((sa * lambda - sb).abs() < 1e-9 * lambda.max(1.0));
        }
    }

    #[test]
    fn cohort_csv_round_trips(
        n in 2usize..25,
        t in 2usize..6,
        seed in 0u64..500,
    ) {
        let spec = GeneratorSpec {
            n_patients: n,
            prevalence: 0.4,
            n_timesteps: t,
            seed,
            ..Default::default()
        };
        let ds = generate_cohort(&spec).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = parse_csv(&text, ImputePolicy::Mean).unwrap();
        prop_assert_eq!(back.x.shape(), ds.x.shape());
        prop_assert_eq!(back.y, ds.y);
        for (a, b) in ds.x.data().iter().zip(back.x.data()) {
            prop_assert_eq!(a, b);
        }
    }
}
