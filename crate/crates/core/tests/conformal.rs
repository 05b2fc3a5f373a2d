mod common;

use common::{brute_force_knn, random_index, rng, sorted_threshold};
use proptest::prelude::*;
use rand::Rng;
use ttl_itd::conformal::{
    global_tau, knn, knn_batch, local_thresholds, LocalThresholds, Threshold,
};
use ttl_itd::linalg::FeatureMatrix;
use ttl_itd::Exec;

#[test]
fn ten_scores_at_alpha_point_two_pick_the_ninth() {
    let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    assert_eq!(global_tau(&scores, 0.2).unwrap(), Threshold::Finite(0.9));
}

#[test]
fn two_hundred_neighbours_pick_rank_191() {
    let mut r = rng(7);
    let (index, _) = random_index(&mut r, 400, 3, 4);
    let x = [0.1, -0.3, 0.5];
    let local = local_thresholds(&index, &x, 200, 0.05).unwrap();
    for a in 0..4 {
        let mut s: Vec<f64> = local
            .neighbor_ids
            .iter()
            .map(|&j| index.per_action_scores.row(j)[a])
            .collect();
        s.sort_by(f64::total_cmp);
        assert_eq!(local.tau_local[a], Threshold::Finite(s[190]));
    }
    let total: f64 = local.action_freq.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn knn_matches_full_sort_on_fifty_points() {
    let mut r = rng(1);
    let (index, points) = random_index(&mut r, 50, 4, 3);
    for _ in 0..100 {
        let x: Vec<f64> = (0..4).map(|_| r.gen_range(-2.5..2.5)).collect();
        let k = r.gen_range(1..=50);
        assert_eq!(knn(&index, &x, k).unwrap(), brute_force_knn(&points, &x, k));
    }
}

#[test]
fn knn_ties_resolve_to_lower_index() {
    let mut r = rng(2);
    let (mut index, mut points) = random_index(&mut r, 20, 2, 2);
    // duplicate rows guarantee exact distance ties
    points[7] = points[3].clone();
    points[15] = points[3].clone();
    index.points = FeatureMatrix::from_rows(2, &points).unwrap();
    let x = points[3].clone();
    assert_eq!(&knn(&index, &x, 3).unwrap(), &[3, 7, 15]);
    assert_eq!(knn(&index, &x, 5).unwrap(), brute_force_knn(&points, &x, 5));
}

#[test]
fn batch_equals_single_queries_in_both_modes() {
    let mut r = rng(3);
    let (index, _) = random_index(&mut r, 300, 3, 2);
    let queries: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..3).map(|_| r.gen_range(-2.0..2.0)).collect())
        .collect();
    let q = FeatureMatrix::from_rows(3, &queries).unwrap();
    let seq = knn_batch(&index, &q, 25, Exec::Sequential).unwrap();
    let par = knn_batch(&index, &q, 25, Exec::Parallel).unwrap();
    assert_eq!(seq, par);
    for (row, x) in seq.iter().zip(&queries) {
        assert_eq!(row, &knn(&index, x, 25).unwrap());
    }
}

#[test]
fn oversized_k_is_clamped_and_zero_k_rejected() {
    let mut r = rng(4);
    let (index, _) = random_index(&mut r, 10, 2, 2);
    assert_eq!(knn(&index, &[0.0, 0.0], 50).unwrap().len(), 10);
    assert!(knn(&index, &[0.0, 0.0], 0).is_err());
}

#[test]
fn tiny_neighbourhood_disables_the_gate() {
    let mut r = rng(5);
    let (index, _) = random_index(&mut r, 30, 2, 3);
    // ⌈(5+1)·0.95⌉ = 6 > 5
    let local = LocalThresholds::from_neighbors(&index, vec![0, 1, 2, 3, 4], 0.05).unwrap();
    assert!(local.tau_local.iter().all(|t| t.is_no_gate()));
    assert!(local.mask(&[0.99, 0.99, 0.99]).iter().all(|m| !m));
}

#[test]
fn no_gate_serializes_as_null() {
    assert_eq!(serde_json::to_string(&Threshold::NoGate).unwrap(), "null");
    let back: Threshold = serde_json::from_str("0.25").unwrap();
    assert_eq!(back, Threshold::Finite(0.25));
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..300)
}

proptest! {
    #[test]
    fn threshold_matches_sort_oracle(s in scores(), alpha in 0.01f64..0.99) {
        let t = global_tau(&s, alpha).unwrap();
        prop_assert_eq!(t.value(), sorted_threshold(&s, alpha));
    }

    #[test]
    fn smaller_alpha_never_lowers_threshold(s in scores(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(global_tau(&s, lo).unwrap() >= global_tau(&s, hi).unwrap());
    }

    #[test]
    fn gated_scores_have_lower_mean(s in scores(), alpha in 0.01f64..0.99) {
        let t = global_tau(&s, alpha).unwrap();
        let gated: Vec<f64> = s.iter().copied().filter(|&p| t.admits(p)).collect();
        prop_assume!(!gated.is_empty());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!(mean(&gated) <= mean(&s) + 1e-12);
    }

    #[test]
    fn masked_set_shrinks_with_alpha(
        seed in any::<u64>(),
        k in 1usize..80,
        a in 0.01f64..0.99,
        b in 0.01f64..0.99,
    ) {
        let mut r = rng(seed);
        let (index, _) = random_index(&mut r, 80, 3, 5);
        let x: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
        let p: Vec<f64> = (0..5).map(|_| r.gen_range(0.0..1.0)).collect();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let strict = local_thresholds(&index, &x, k, lo).unwrap().mask(&p);
        let loose = local_thresholds(&index, &x, k, hi).unwrap().mask(&p);
        for (s, l) in strict.iter().zip(&loose) {
            prop_assert!(!s || *l);
        }
    }

    #[test]
    fn neighbour_list_is_prefix_closed(seed in any::<u64>(), k in 1usize..60) {
        let mut r = rng(seed);
        let (index, _) = random_index(&mut r, 60, 2, 2);
        let x = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)];
        let full = knn(&index, &x, 60).unwrap();
        prop_assert_eq!(&full[..k], &knn(&index, &x, k).unwrap()[..]);
    }
}
