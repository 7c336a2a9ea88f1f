//! Property tests for the spec-level invariants of the losses, the data
//! harness and the metrics.

use proptest::prelude::*;

use mgsc_core::balancer::combine_fixed;
use mgsc_core::consistency::{
    alignment_loss, expected_alignment_path, global_average_pool, sentence_loss, AttentionMatrix,
    RepresentationVector,
};
use mgsc_core::data::{
    generate_dataset, inject_noise, measured_snr_db, Condition, NoiseConfig, TaskConfig,
};
use mgsc_core::metrics::{edit_distance, monotonicity_violation_rate};
use mgsc_core::Mat;

fn row_stochastic(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    proptest::collection::vec(0.01f64..1.0, rows * cols).prop_map(move |raw| {
        let mut m = Mat::from_vec(rows, cols, raw);
        for r in 0..rows {
            let sum: f64 = m.row(r).iter().sum();
            for w in m.row_mut(r) {
                *w /= sum;
            }
        }
        m
    })
}

proptest! {
    // Every expected-path entry is a convex combination of column indices.
    #[test]
    fn path_entries_stay_in_range(m in row_stochastic(4, 6)) {
        let attn = AttentionMatrix::new_unchecked(m);
        let path = expected_alignment_path(&attn);
        for &p in path.positions() {
            prop_assert!((-1e-9..=5.0 + 1e-9).contains(&p));
        }
    }

    // Rows reordered into non-decreasing path order give exactly zero loss,
    // including duplicated (pause) rows.
    #[test]
    fn non_decreasing_paths_cost_exactly_zero(m in row_stochastic(5, 6), dup in 0usize..5) {
        let attn = AttentionMatrix::new_unchecked(m.clone());
        let path = expected_alignment_path(&attn);
        let mut order: Vec<usize> = (0..m.rows()).collect();
        order.sort_by(|&a, &b| path.positions()[a].total_cmp(&path.positions()[b]));
        let mut rows: Vec<Vec<f64>> = order.iter().map(|&r| m.row(r).to_vec()).collect();
        rows.insert(dup, rows[dup].clone()); // exact pause
        let sorted = AttentionMatrix::new_unchecked(Mat::from_rows(&rows));
        let loss = alignment_loss(&sorted);
        prop_assert_eq!(loss.value, 0.0);
        prop_assert!(loss.grad.data().iter().all(|&g| g == 0.0));
    }

    // Positive alignment loss implies a positive violation rate, and a zero
    // violation rate implies an exactly zero loss.
    #[test]
    fn alignment_loss_and_violation_rate_agree(m in row_stochastic(5, 6)) {
        let attn = AttentionMatrix::new_unchecked(m);
        let loss = alignment_loss(&attn).value;
        let rate = monotonicity_violation_rate(&expected_alignment_path(&attn));
        if loss > 0.0 {
            prop_assert!(rate > 0.0);
        }
        if rate == 0.0 {
            prop_assert_eq!(loss, 0.0);
        }
    }

    // Cosine loss depends only on directions.
    #[test]
    fn sentence_loss_is_scale_invariant(
        u in proptest::collection::vec(-3.0f64..3.0, 8),
        w in proptest::collection::vec(-3.0f64..3.0, 8),
        a in 0.1f64..10.0,
        b in 0.1f64..10.0,
    ) {
        prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        prop_assume!(w.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let base = sentence_loss(
            &RepresentationVector::new(u.clone()),
            &RepresentationVector::new(w.clone()),
        ).unwrap().value;
        let scaled = sentence_loss(
            &RepresentationVector::new(u.iter().map(|x| a * x).collect()),
            &RepresentationVector::new(w.iter().map(|x| b * x).collect()),
        ).unwrap().value;
        prop_assert!((base - scaled).abs() < 1e-9);
        prop_assert!((0.0..=2.0).contains(&base));
    }

    // Pooling is permutation-consistent up to float summation order.
    #[test]
    fn pooling_ignores_row_order(m in row_stochastic(6, 4), seed in 0u64..1000) {
        let pooled = global_average_pool(&m).unwrap();
        let mut order: Vec<usize> = (0..m.rows()).collect();
        // cheap deterministic shuffle
        for i in (1..order.len()).rev() {
            order.swap(i, (seed as usize).wrapping_mul(31).wrapping_add(i * 7) % (i + 1));
        }
        let rows: Vec<Vec<f64>> = order.iter().map(|&r| m.row(r).to_vec()).collect();
        let permuted = global_average_pool(&Mat::from_rows(&rows)).unwrap();
        for (x, y) in pooled.values().iter().zip(permuted.values()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    // Doubling every component loss doubles the fixed-mode total exactly.
    #[test]
    fn combine_fixed_is_linear(
        l in proptest::collection::vec(0.0f64..10.0, 3),
        ls in 0.0f64..2.0,
        la in 0.0f64..2.0,
    ) {
        let once = combine_fixed(l[0], l[1], l[2], ls, la).unwrap().breakdown.l_total;
        let twice = combine_fixed(2.0 * l[0], 2.0 * l[1], 2.0 * l[2], ls, la).unwrap().breakdown.l_total;
        prop_assert_eq!(twice, 2.0 * once);
    }

    // Measured SNR lands within 0.1 dB of the request.
    #[test]
    fn injected_noise_hits_requested_snr(seed in 0u64..5000, snr in prop_oneof![
        Just(0.0), Just(2.5), Just(5.0), Just(7.5), Just(10.0), -5.0f64..20.0
    ]) {
        let m = Mat::from_fn(6, 8, |r, c| ((r * 8 + c) as f64 * 0.37).sin() + 0.3);
        let noisy = inject_noise(&m, &NoiseConfig::new(Condition::SnrDb(snr), seed)).unwrap();
        prop_assert!((measured_snr_db(&m, &noisy) - snr).abs() < 0.1);
    }

    // Same sample, different condition streams: the realized noise differs
    // and is not just a rescaling.
    #[test]
    fn noise_streams_are_independent_across_conditions(seed in 0u64..1000) {
        let m = Mat::from_fn(5, 8, |r, c| ((r + c) as f64 * 0.29).cos() + 0.4);
        let a = inject_noise(&m, &NoiseConfig::new(Condition::SnrDb(0.0), seed)).unwrap();
        let b = inject_noise(
            &m,
            &NoiseConfig::new(Condition::SnrDb(5.0), seed.wrapping_add(1)),
        ).unwrap();
        let na: Vec<f64> = a.data().iter().zip(m.data()).map(|(x, c)| x - c).collect();
        let nb: Vec<f64> = b.data().iter().zip(m.data()).map(|(x, c)| x - c).collect();
        let dot: f64 = na.iter().zip(&nb).map(|(x, y)| x * y).sum();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cos = dot / (norm(&na) * norm(&nb));
        prop_assert!(cos.abs() < 0.99);
    }

    // Generated alignments are monotone, onto, and long enough.
    #[test]
    fn generated_samples_respect_alignment_invariants(seed in 0u64..300) {
        let cfg = TaskConfig { count: 4, ..TaskConfig::default() };
        for s in generate_dataset(&cfg, seed).unwrap() {
            prop_assert!(s.true_alignment.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(s.features.rows() >= s.targets.len());
            for idx in 0..s.targets.len() {
                prop_assert!(s.true_alignment.contains(&idx));
            }
        }
    }

    // Edit distance is symmetric and satisfies the triangle inequality.
    #[test]
    fn edit_distance_is_a_metric(
        a in proptest::collection::vec(0usize..4, 0..8),
        b in proptest::collection::vec(0usize..4, 0..8),
        c in proptest::collection::vec(0usize..4, 0..8),
    ) {
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
    }
}

#[test]
fn attention_rows_sum_to_one_for_random_params() {
    use mgsc_core::model::{forward, ModelConfig, ModelParams};
    for seed in 0..30u64 {
        let cfg = ModelConfig {
            feature_dim: 4,
            hidden: 6,
            vocab: 4,
        };
        let params = ModelParams::init(cfg, seed).unwrap();
        let feats = Mat::from_fn(5, 4, |r, c| ((r * 4 + c + seed as usize) as f64 * 0.43).sin());
        let out = forward(&params, &feats, &[0, 2, 1]).unwrap();
        for row in out.attention.weights().iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
