//! The ablation experiment: train every (variant, seed) pair from shared
//! initializations and data streams, evaluate across noise conditions, and
//! aggregate medians into the report.

use anyhow::{bail, Context};
use rayon::prelude::*;
use std::path::Path;

use mgsc_core::balancer::{BalancerMode, BalancerState, LossBreakdown};
use mgsc_core::consistency::{expected_alignment_path, global_average_pool, AttentionMatrix};
use mgsc_core::data::{
    derive_seed, generate_dataset, inject_noise, make_batches, Condition, NoiseConfig,
    SyntheticSample, TaskConfig,
};
use mgsc_core::metrics::{
    cer, median, monotonicity_violation_rate, representation_gap, AblationReport, FailedRun,
    VariantSummary,
};
use mgsc_core::model::{
    forward, greedy_decode, train_step, ModelParams, ObjectiveConfig, OptState, Variant,
};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::report;

// Independent sub-seed streams per run seed.
const DATA_STREAM: u64 = 0xA1;
const INIT_STREAM: u64 = 0xB2;
const BATCH_STREAM: u64 = 0xC3;
const NOISE_STREAM: u64 = 0xD4;
const TRAIN_NOISE_STREAM: u64 = 0xE5;

/// Noise stream for one (run, condition, sample) triple. Shared by the
/// evaluation loop and the dump subcommands so both see the same test set.
pub fn noise_seed(run_seed: u64, condition: Condition, sample_idx: usize) -> u64 {
    let c = match condition {
        Condition::Clean => 0,
        Condition::SnrDb(db) => db.to_bits(),
    };
    derive_seed(
        derive_seed(derive_seed(run_seed, NOISE_STREAM), c),
        sample_idx as u64,
    )
}

/// Train and test splits drawn from one dataset seed, so both share the
/// token embedding table.
pub fn split_dataset(
    cfg: &ExperimentConfig,
    run_seed: u64,
) -> anyhow::Result<(Vec<SyntheticSample>, Vec<SyntheticSample>)> {
    let full = TaskConfig {
        count: cfg.task.count + cfg.test_count,
        ..cfg.task.clone()
    };
    let mut samples = generate_dataset(&full, derive_seed(run_seed, DATA_STREAM))?;
    let test = samples.split_off(cfg.task.count);
    Ok((samples, test))
}

/// Fresh parameters for a run; depends only on the run seed so every
/// variant starts from identical weights.
pub fn init_params(cfg: &ExperimentConfig, run_seed: u64) -> anyhow::Result<ModelParams> {
    Ok(ModelParams::init(
        cfg.model_config(),
        derive_seed(run_seed, INIT_STREAM),
    )?)
}

fn objective(cfg: &ExperimentConfig, variant: Variant, report_inactive: bool) -> ObjectiveConfig {
    ObjectiveConfig {
        variant,
        ctc_weight: cfg.ctc_weight,
        lambda_sent: cfg.lambda_sent,
        lambda_align: cfg.lambda_align,
        report_inactive,
    }
}

/// One completed training run with its per-condition evaluation.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub variant: Variant,
    pub seed: u64,
    pub cer: Vec<f64>,
    pub violation_rate: Vec<f64>,
    pub representation_gap: Vec<f64>,
    pub trajectory: Vec<LossBreakdown>,
    pub checkpoint: Checkpoint,
}

/// Trains one (variant, seed) pair and evaluates it on every condition.
pub fn run_single(
    cfg: &ExperimentConfig,
    variant: Variant,
    seed: u64,
) -> anyhow::Result<RunOutcome> {
    let (mut train, test) = split_dataset(cfg, seed)?;

    if !cfg.train_condition.is_clean() {
        let base = derive_seed(seed, TRAIN_NOISE_STREAM);
        for (i, s) in train.iter_mut().enumerate() {
            s.features = inject_noise(
                &s.features,
                &NoiseConfig::new(cfg.train_condition, derive_seed(base, i as u64))
                    .with_stationary_share(cfg.noise_stationary_share),
            )?;
        }
    }

    let mut params = init_params(cfg, seed)?;
    let mut balancer = match cfg.balancer_mode {
        BalancerMode::Fixed => BalancerState::fixed(),
        BalancerMode::Uncertainty => BalancerState::uncertainty(),
    };
    let mut opt_state = OptState::new(&params);
    let base_obj = objective(cfg, variant, true);

    let batch_seed = derive_seed(seed, BATCH_STREAM);
    let mut batches = make_batches(&train, cfg.batch_size, batch_seed);
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let mut trajectory = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cursor == batches.len() {
            epoch += 1;
            batches = make_batches(&train, cfg.batch_size, batch_seed.wrapping_add(epoch));
            cursor = 0;
        }
        // Linear decay from lr to lr * final_lr_frac over the step budget.
        let progress = if cfg.steps > 1 {
            step as f64 / (cfg.steps - 1) as f64
        } else {
            0.0
        };
        let lr = cfg.lr * (1.0 - (1.0 - cfg.final_lr_frac) * progress);
        // Ease the consistency pressure in while the attention is still
        // unstructured; applied identically to every variant.
        let ramp = if cfg.lambda_warmup_steps > 0 {
            (step as f64 / cfg.lambda_warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let obj = ObjectiveConfig {
            lambda_sent: base_obj.lambda_sent * ramp,
            lambda_align: base_obj.lambda_align * ramp,
            ..base_obj.clone()
        };
        let breakdown = train_step(
            &mut params,
            &mut balancer,
            &batches[cursor],
            &obj,
            &cfg.optimizer,
            &mut opt_state,
            lr,
        )?;
        trajectory.push(breakdown);
        cursor += 1;
    }

    let (cer_by_cond, violation_by_cond, gap_by_cond) = evaluate(cfg, &params, &test, seed)?;

    Ok(RunOutcome {
        variant,
        seed,
        cer: cer_by_cond,
        violation_rate: violation_by_cond,
        representation_gap: gap_by_cond,
        trajectory,
        checkpoint: Checkpoint::new(seed, params, &balancer),
    })
}

type EvalSeries = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Greedy-decode CER, free-running violation rate, and teacher-forced
/// representation gap, per condition, averaged over the test set.
pub fn evaluate(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    test: &[SyntheticSample],
    run_seed: u64,
) -> anyhow::Result<EvalSeries> {
    if test.is_empty() {
        bail!("empty test set");
    }
    let max_len = cfg.decode_max_len();
    let mut cer_by_cond = Vec::with_capacity(cfg.conditions.len());
    let mut violation_by_cond = Vec::with_capacity(cfg.conditions.len());
    let mut gap_by_cond = Vec::with_capacity(cfg.conditions.len());

    for &condition in &cfg.conditions {
        let mut cer_sum = 0.0;
        let mut violation_sum = 0.0;
        let mut pairs = Vec::with_capacity(test.len());
        for (si, sample) in test.iter().enumerate() {
            let feats = inject_noise(
                &sample.features,
                &NoiseConfig::new(condition, noise_seed(run_seed, condition, si))
                    .with_stationary_share(cfg.noise_stationary_share),
            )?;

            let decoded = greedy_decode(params, &feats, max_len)?;
            cer_sum += cer(&decoded.tokens, &sample.targets)?;
            if decoded.attention.rows() >= 2 {
                let path = expected_alignment_path(&AttentionMatrix::new_unchecked(
                    decoded.attention.clone(),
                ));
                violation_sum += monotonicity_violation_rate(&path);
            }

            let out = forward(params, &feats, &sample.targets)?;
            pairs.push((
                global_average_pool(&out.enc_hidden)?,
                global_average_pool(&out.dec_hidden)?,
            ));
        }
        let n = test.len() as f64;
        cer_by_cond.push(cer_sum / n);
        violation_by_cond.push(violation_sum / n);
        gap_by_cond.push(representation_gap(&pairs)?);
    }
    Ok((cer_by_cond, violation_by_cond, gap_by_cond))
}

/// Runs the full grid, writes artifacts when `out_dir` is given, and
/// aggregates per-condition medians across seeds.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> anyhow::Result<AblationReport> {
    cfg.validate()?;
    let jobs: Vec<(Variant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();

    let results: Vec<(Variant, u64, anyhow::Result<RunOutcome>)> = jobs
        .par_iter()
        .map(|&(variant, seed)| (variant, seed, run_single(cfg, variant, seed)))
        .collect();

    let mut outcomes: Vec<RunOutcome> = Vec::new();
    let mut failed_runs: Vec<FailedRun> = Vec::new();
    for (variant, seed, result) in results {
        match result {
            Ok(outcome) => outcomes.push(outcome),
            Err(err) => failed_runs.push(FailedRun {
                variant,
                seed,
                reason: err.to_string(),
            }),
        }
    }

    let n_cond = cfg.conditions.len();
    let mut variants = Vec::with_capacity(cfg.variants.len());
    for &variant in &cfg.variants {
        let runs: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.variant == variant).collect();
        if runs.is_empty() {
            bail!("every run of variant '{}' failed", variant.name());
        }
        let series = |pick: fn(&RunOutcome) -> &Vec<f64>| -> Vec<f64> {
            (0..n_cond)
                .map(|ci| {
                    let values: Vec<f64> = runs.iter().map(|r| pick(r)[ci]).collect();
                    median(&values)
                })
                .collect()
        };
        let cer_series = series(|r| &r.cer);
        let violation_series = series(|r| &r.violation_rate);
        let gap_series = series(|r| &r.representation_gap);
        let noisy: Vec<f64> = cfg
            .conditions
            .iter()
            .zip(&cer_series)
            .filter(|(c, _)| !c.is_clean())
            .map(|(_, &v)| v)
            .collect();
        let noisy_average = if noisy.is_empty() {
            f64::NAN
        } else {
            noisy.iter().sum::<f64>() / noisy.len() as f64
        };
        variants.push(VariantSummary {
            variant,
            cer: cer_series,
            noisy_average,
            violation_rate: violation_series,
            representation_gap: gap_series,
        });
    }

    let report = AblationReport {
        conditions: cfg.conditions.clone(),
        variants,
        failed_runs,
    };

    if let Some(dir) = out_dir {
        write_artifacts(dir, &report, &outcomes)?;
    }
    Ok(report)
}

fn write_artifacts(
    dir: &Path,
    report: &AblationReport,
    outcomes: &[RunOutcome],
) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("report.csv"), report::report_csv(report))?;
    std::fs::write(dir.join("report.txt"), report::report_table(report))?;
    std::fs::write(dir.join("reduction.csv"), report::reduction_csv(report))?;
    std::fs::write(dir.join("metrics.csv"), report::metrics_csv(report))?;

    for outcome in outcomes {
        let run_dir = dir
            .join("runs")
            .join(format!("{}_s{}", outcome.variant.name(), outcome.seed));
        std::fs::create_dir_all(&run_dir)?;
        outcome.checkpoint.save(&run_dir.join("checkpoint.txt"))?;
        std::fs::write(
            run_dir.join("losses.csv"),
            report::losses_csv(&outcome.trajectory),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig::parse(
            "task.train_count = 12\ntask.test_count = 6\ntrain.steps = 12\n\
             model.hidden = 8\nseeds = 1\n\
             eval.conditions = clean,0\n",
        )
        .unwrap()
    }

    #[test]
    fn variants_share_initialization_and_data() {
        let cfg = tiny_config();
        let a = init_params(&cfg, 3).unwrap();
        let b = init_params(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let (train_a, test_a) = split_dataset(&cfg, 3).unwrap();
        let (train_b, test_b) = split_dataset(&cfg, 3).unwrap();
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);
        assert_eq!(train_a.len(), 12);
        assert_eq!(test_a.len(), 6);
    }

    #[test]
    fn untrained_run_reports_high_cer() {
        let mut cfg = tiny_config();
        cfg.steps = 1; // effectively untrained
        cfg.variants = vec![Variant::Baseline];
        let report = run_ablation(&cfg, None).unwrap();
        let summary = report.summary(Variant::Baseline).unwrap();
        for &c in &summary.cer {
            assert!(c > 0.3, "untrained CER should be near chance, got {c}");
        }
    }

    #[test]
    fn run_ablation_is_deterministic() {
        let cfg = tiny_config();
        let a = run_ablation(&cfg, None).unwrap();
        let b = run_ablation(&cfg, None).unwrap();
        assert_eq!(a, b);
    }
}
