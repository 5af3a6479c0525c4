mod oracles;

use framebench::eval::{auprc, auroc, fold_ci};
use framebench::framing::ClassBalance;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn auprc_matches_rank_walk_on_all_label_patterns_up_to_12() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..=12usize {
        for mask in 1u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            // few distinct values so ties are frequent
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(1..=4)) / 4.0).collect();
            let got = auprc(&scores, &labels).unwrap();
            let want = oracles::rank_walk_ap(&scores, &labels);
            assert!(close(got, want, 1e-12), "{scores:?} {labels:?}: {got} vs {want}");
        }
    }
}

#[test]
fn auroc_matches_pairwise_count_on_all_label_patterns_up_to_10() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 2..=10usize {
        for mask in 1u32..(1 << n) - 1 {
            let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..=5))).collect();
            let got = auroc(&scores, &labels).unwrap();
            assert!(close(got, oracles::pairwise_auroc(&scores, &labels), 1e-12));
        }
    }
}

#[test]
fn fold_ci_reference_values() {
    let (m, h) = fold_ci(&[0.400, 0.390, 0.348, 0.385, 0.390], 0.95).unwrap();
    assert!(close(m, 0.3826, 1e-9), "{m}");
    assert!(close(h, 0.0251, 5e-4), "{h}");
    let (m, h) = fold_ci(&[0.8181, 0.8259, 0.8101, 0.8173, 0.8192], 0.95).unwrap();
    assert!(close(m, 0.81812, 1e-9));
    assert!(close(h, 0.0070, 5e-4), "{h}");
}

#[test]
fn fold_ci_matches_hand_computed_t_interval() {
    // t(0.975, 4) = 2.776445105
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    let (m, h) = fold_ci(&v, 0.95).unwrap();
    let sd = (10.0f64 / 4.0).sqrt();
    assert!(close(m, 3.0, 1e-12));
    assert!(close(h, 2.776_445_105 * sd / 5f64.sqrt(), 1e-8));
}

#[test]
fn class_ratio_formatting() {
    let b = ClassBalance {
        positives: 1250,
        negatives: 18726,
    };
    assert_eq!(b.to_string(), "1:14.98");
}

fn labelled(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2..max).prop_flat_map(|n| {
        (
            prop::collection::vec(-50i32..50, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #[test]
    fn auroc_is_invariant_to_monotone_transforms((scores, labels) in labelled(60)) {
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let a = auroc(&scores, &labels).unwrap();
        let t: Vec<f64> = scores.iter().map(|s| (s / 7.0).exp() * 3.0 + 1.0).collect();
        prop_assert!(close(a, auroc(&t, &labels).unwrap(), 1e-12));
    }

    #[test]
    fn auroc_equals_trapezoidal_roc_area((scores, labels) in labelled(60)) {
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!(close(a, oracles::trapezoid_auroc(&scores, &labels), 1e-12));
    }

    #[test]
    fn flipping_scores_complements_auroc((scores, labels) in labelled(60)) {
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&neg, &labels).unwrap();
        prop_assert!(close(sum, 1.0, 1e-12));
    }

    #[test]
    fn auprc_is_in_unit_interval_and_at_least_first_hit_share((scores, labels) in labelled(60)) {
        prop_assume!(labels.iter().any(|&y| y));
        let ap = auprc(&scores, &labels).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
    }
}

#[test]
fn random_scores_give_ap_near_prevalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for prevalence in [0.05, 0.2, 0.5] {
        let mut total = 0.0;
        let reps = 200;
        for _ in 0..reps {
            let labels: Vec<bool> = (0..2_000).map(|_| rng.gen_bool(prevalence)).collect();
            let scores: Vec<f64> = (0..2_000).map(|_| rng.gen::<f64>()).collect();
            total += auprc(&scores, &labels).unwrap();
        }
        let mean = total / f64::from(reps);
        assert!(close(mean, prevalence, 0.01 + prevalence * 0.05), "{prevalence}: {mean}");
    }
}
