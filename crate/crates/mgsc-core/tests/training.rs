//! Training smoke tests: the task loss falls, and a converged model
//! decodes its training data exactly.

use mgsc_core::balancer::BalancerState;
use mgsc_core::data::{derive_seed, generate_dataset, make_batches, TaskConfig};
use mgsc_core::metrics::cer;
use mgsc_core::model::{
    greedy_decode, train_step, ModelConfig, ModelParams, ObjectiveConfig, OptState, Optimizer,
    Variant,
};

fn task() -> TaskConfig {
    TaskConfig {
        vocab: 5,
        len_range: (2, 4),
        dur_range: (1, 2),
        feature_dim: 6,
        count: 20,
        jitter: 0.01,
    }
}

fn train(
    samples: &[mgsc_core::data::SyntheticSample],
    steps: usize,
    variant: Variant,
    seed: u64,
) -> (ModelParams, f64, f64) {
    let cfg = ModelConfig {
        feature_dim: 6,
        hidden: 12,
        vocab: 6,
    };
    let mut params = ModelParams::init(cfg, derive_seed(seed, 1)).unwrap();
    let mut balancer = BalancerState::fixed();
    let mut opt_state = OptState::new(&params);
    let objective = ObjectiveConfig {
        variant,
        ..ObjectiveConfig::default()
    };
    let batch_size = 4;

    let mut first_asr = None;
    let mut last_asr = 0.0;
    let mut batches = make_batches(samples, batch_size, derive_seed(seed, 2));
    let mut cursor = 0;
    let mut epoch = 0u64;
    for _ in 0..steps {
        if cursor == batches.len() {
            epoch += 1;
            batches = make_batches(samples, batch_size, derive_seed(seed, 2).wrapping_add(epoch));
            cursor = 0;
        }
        let breakdown = train_step(
            &mut params,
            &mut balancer,
            &batches[cursor],
            &objective,
            &Optimizer::adam(),
            &mut opt_state,
            1e-2,
        )
        .unwrap();
        if first_asr.is_none() {
            first_asr = Some(breakdown.l_asr);
        }
        last_asr = breakdown.l_asr;
        cursor += 1;
    }
    (params, first_asr.unwrap(), last_asr)
}

#[test]
fn task_loss_falls_over_training() {
    let samples = generate_dataset(&task(), 100).unwrap();
    let (_, first, last) = train(&samples, 200, Variant::Baseline, 100);
    assert!(
        last < first,
        "mean task loss should fall: first {first}, last {last}"
    );
}

#[test]
fn converged_model_copies_training_samples() {
    let samples = generate_dataset(&task(), 200).unwrap();
    let (params, _, _) = train(&samples, 400, Variant::Mgsc, 200);
    let mut total = 0.0;
    for s in &samples {
        let decoded = greedy_decode(&params, &s.features, 8).unwrap();
        total += cer(&decoded.tokens, &s.targets).unwrap();
    }
    let mean_cer = total / samples.len() as f64;
    assert!(
        mean_cer < 1e-9,
        "training-set CER should reach 0, got {mean_cer}"
    );
}
