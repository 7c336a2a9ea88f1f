//! Independent numerical verification: central finite differences for every
//! analytic gradient, and brute-force path enumeration for the CTC loss.
//! Used by the verification subcommands and by the test suites.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::asr::{cross_entropy_loss, ctc_loss, log_softmax};
use crate::balancer::{combine_uncertainty, BalancerState};
use crate::consistency::{alignment_loss, expected_alignment_path, sentence_loss, AttentionMatrix, RepresentationVector};
use crate::linalg::Mat;
use crate::model::{loss_and_grad, ModelConfig, ModelParams, ObjectiveConfig, Variant};

/// Default step size for central differences.
pub const FD_STEP: f64 = 1e-4;

/// Central finite differences of `f` around `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Worst relative error between two gradients. The denominator is floored
/// at 1e-3 so components below finite-difference resolution are compared
/// absolutely instead of blowing up the ratio.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Outcome of one gradient suite.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub points: usize,
    pub max_rel_error: f64,
}

fn random_row_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::from_fn(rows, cols, |_, _| 0.05 + rng.random::<f64>());
    for r in 0..rows {
        let sum: f64 = m.row(r).iter().sum();
        for w in m.row_mut(r) {
            *w /= sum;
        }
    }
    m
}

/// Smallest adjacent step of the expected path; FD points must keep clear
/// of the hinge kink at zero.
fn min_path_gap(attn: &AttentionMatrix) -> f64 {
    let pi = expected_alignment_path(attn);
    pi.positions()
        .windows(2)
        .map(|w| (w[0] - w[1]).abs())
        .fold(f64::INFINITY, f64::min)
}

pub fn gradcheck_alignment(seed: u64, points: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (5, 7);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < points {
        let m = random_row_stochastic(&mut rng, rows, cols);
        let attn = AttentionMatrix::new_unchecked(m.clone());
        if min_path_gap(&attn) < 1e-2 {
            continue;
        }
        let analytic = alignment_loss(&attn);
        let numeric = central_difference(
            |w| {
                alignment_loss(&AttentionMatrix::new_unchecked(Mat::from_vec(
                    rows,
                    cols,
                    w.to_vec(),
                )))
                .value
            },
            m.data(),
            FD_STEP,
        );
        worst = worst.max(max_rel_error(analytic.grad.data(), &numeric));
        done += 1;
    }
    GradCheck {
        name: "alignment_loss",
        points,
        max_rel_error: worst,
    }
}

pub fn gradcheck_sentence(seed: u64, points: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 8;
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x: Vec<f64> = (0..2 * dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let eval = |z: &[f64]| {
            sentence_loss(
                &RepresentationVector::new(z[..dim].to_vec()),
                &RepresentationVector::new(z[dim..].to_vec()),
            )
            .unwrap()
            .value
        };
        let l = sentence_loss(
            &RepresentationVector::new(x[..dim].to_vec()),
            &RepresentationVector::new(x[dim..].to_vec()),
        )
        .unwrap();
        let mut analytic = l.grad_enc.clone();
        analytic.extend_from_slice(&l.grad_dec);
        let numeric = central_difference(eval, &x, FD_STEP);
        worst = worst.max(max_rel_error(&analytic, &numeric));
    }
    GradCheck {
        name: "sentence_loss",
        points,
        max_rel_error: worst,
    }
}

pub fn gradcheck_cross_entropy(seed: u64, points: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (3, 5);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let logits = Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        let targets: Vec<usize> = (0..rows).map(|_| rng.random_range(0..cols)).collect();
        let analytic = cross_entropy_loss(&logits, &targets).unwrap();
        let numeric = central_difference(
            |w| {
                cross_entropy_loss(&Mat::from_vec(rows, cols, w.to_vec()), &targets)
                    .unwrap()
                    .value
            },
            logits.data(),
            FD_STEP,
        );
        worst = worst.max(max_rel_error(analytic.grad.data(), &numeric));
    }
    GradCheck {
        name: "cross_entropy",
        points,
        max_rel_error: worst,
    }
}

/// CTC loss as a function of raw logits: log-softmax then the forward DP.
/// Returns the value and the gradient chained through the log-softmax.
pub fn ctc_value_and_grad_wrt_logits(
    logits: &Mat,
    labels: &[usize],
    blank: usize,
) -> (f64, Mat) {
    let lp = log_softmax(logits);
    let l = ctc_loss(&lp, labels, blank).expect("feasible CTC instance");
    let mut grad = Mat::zeros(logits.rows(), logits.cols());
    for t in 0..logits.rows() {
        let dsum: f64 = l.grad.row(t).iter().sum();
        for k in 0..logits.cols() {
            let p = libm::exp(lp.row(t)[k]);
            grad.row_mut(t)[k] = l.grad.row(t)[k] - p * dsum;
        }
    }
    (l.value, grad)
}

pub fn gradcheck_ctc(seed: u64, points: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t_len, v) = (5, 4);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let logits = Mat::from_fn(t_len, v, |_, _| rng.sample::<f64, _>(StandardNormal));
        let labels = vec![
            rng.random_range(1..v),
            rng.random_range(1..v),
        ];
        let (_, analytic) = ctc_value_and_grad_wrt_logits(&logits, &labels, 0);
        let numeric = central_difference(
            |w| {
                let lp = log_softmax(&Mat::from_vec(t_len, v, w.to_vec()));
                ctc_loss(&lp, &labels, 0).unwrap().value
            },
            logits.data(),
            FD_STEP,
        );
        worst = worst.max(max_rel_error(analytic.data(), &numeric));
    }
    GradCheck {
        name: "ctc",
        points,
        max_rel_error: worst,
    }
}

pub fn gradcheck_uncertainty(seed: u64, points: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x: Vec<f64> = (0..6)
            .map(|i| {
                if i < 3 {
                    0.1 + 3.0 * rng.random::<f64>()
                } else {
                    2.0 * rng.random::<f64>() - 1.0
                }
            })
            .collect();
        let eval = |z: &[f64]| {
            let mut st = BalancerState::uncertainty();
            st.log_vars = [z[3], z[4], z[5]];
            combine_uncertainty([z[0], z[1], z[2]], &st).unwrap().l_total
        };
        let mut st = BalancerState::uncertainty();
        st.log_vars = [x[3], x[4], x[5]];
        let c = combine_uncertainty([x[0], x[1], x[2]], &st).unwrap();
        let mut analytic = c.loss_coeffs.to_vec();
        analytic.extend_from_slice(&c.log_var_grads);
        let numeric = central_difference(eval, &x, 1e-5);
        worst = worst.max(max_rel_error(&analytic, &numeric));
    }
    GradCheck {
        name: "combine_uncertainty",
        points,
        max_rel_error: worst,
    }
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    cfg: ModelConfig,
    t_in: usize,
    n_targets: usize,
) -> (Mat, Vec<usize>) {
    let features = Mat::from_fn(t_in, cfg.feature_dim, |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let content = cfg.vocab - 1;
    let mut targets = Vec::with_capacity(n_targets);
    for i in 0..n_targets {
        let mut tok = rng.random_range(0..content);
        while i > 0 && tok == targets[i - 1] && content > 1 {
            tok = rng.random_range(0..content);
        }
        targets.push(tok);
    }
    (features, targets)
}

/// End-to-end gradient of the full objective with respect to every
/// parameter (fixed-weight balancing).
pub fn gradcheck_end_to_end(variant: Variant, seed: u64, points: usize) -> GradCheck {
    let cfg = ModelConfig {
        feature_dim: 5,
        hidden: 4,
        vocab: 4,
    };
    let objective = ObjectiveConfig {
        variant,
        ..ObjectiveConfig::default()
    };
    let balancer = BalancerState::fixed();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut attempt = 0;
    while done < points {
        attempt += 1;
        let params = ModelParams::init(cfg, rng.random()).unwrap();
        let (features, targets) = random_instance(&mut rng, cfg, 6, 3);

        // Keep clear of the hinge kink so the loss is differentiable at
        // and around the probe point.
        let fwd = crate::model::forward(&params, &features, &targets).unwrap();
        if min_path_gap(&fwd.attention) < 1e-2 && attempt < points * 50 {
            continue;
        }

        let analytic = loss_and_grad(&params, &features, &targets, &objective, &balancer)
            .unwrap()
            .grads
            .to_flat();
        let numeric = central_difference(
            |w| {
                let p = ModelParams::from_flat(cfg, w).unwrap();
                loss_and_grad(&p, &features, &targets, &objective, &balancer)
                    .unwrap()
                    .breakdown
                    .l_total
            },
            &params.to_flat(),
            FD_STEP,
        );
        worst = worst.max(max_rel_error(&analytic, &numeric));
        done += 1;
    }
    let name = match variant {
        Variant::Baseline => "end_to_end_baseline",
        Variant::Align => "end_to_end_align",
        Variant::Sentence => "end_to_end_sentence",
        Variant::Mgsc => "end_to_end_mgsc",
    };
    GradCheck {
        name,
        points,
        max_rel_error: worst,
    }
}

/// End-to-end gradient including the balancer log-variances under
/// uncertainty weighting.
pub fn gradcheck_end_to_end_uncertainty(seed: u64, points: usize) -> GradCheck {
    let cfg = ModelConfig {
        feature_dim: 5,
        hidden: 4,
        vocab: 4,
    };
    let objective = ObjectiveConfig {
        variant: Variant::Mgsc,
        ..ObjectiveConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut attempt = 0;
    while done < points {
        attempt += 1;
        let params = ModelParams::init(cfg, rng.random()).unwrap();
        let (features, targets) = random_instance(&mut rng, cfg, 6, 3);
        let mut balancer = BalancerState::uncertainty();
        for s in &mut balancer.log_vars {
            *s = rng.random::<f64>() - 0.5;
        }

        let fwd = crate::model::forward(&params, &features, &targets).unwrap();
        if min_path_gap(&fwd.attention) < 1e-2 && attempt < points * 50 {
            continue;
        }

        let out = loss_and_grad(&params, &features, &targets, &objective, &balancer).unwrap();
        let mut analytic = out.grads.to_flat();
        analytic.extend_from_slice(&out.log_var_grads);

        let mut x = params.to_flat();
        x.extend_from_slice(&balancer.log_vars);
        let flat_len = params.flat_len();
        let numeric = central_difference(
            |w| {
                let p = ModelParams::from_flat(cfg, &w[..flat_len]).unwrap();
                let mut b = BalancerState::uncertainty();
                b.log_vars.copy_from_slice(&w[flat_len..]);
                loss_and_grad(&p, &features, &targets, &objective, &b)
                    .unwrap()
                    .breakdown
                    .l_total
            },
            &x,
            FD_STEP,
        );
        worst = worst.max(max_rel_error(&analytic, &numeric));
        done += 1;
    }
    GradCheck {
        name: "end_to_end_uncertainty",
        points,
        max_rel_error: worst,
    }
}

/// Runs every gradient suite at its default size.
pub fn run_all_gradchecks(seed: u64) -> Vec<GradCheck> {
    let mut out = vec![
        gradcheck_alignment(seed, 50),
        gradcheck_sentence(seed.wrapping_add(1), 50),
        gradcheck_cross_entropy(seed.wrapping_add(2), 25),
        gradcheck_ctc(seed.wrapping_add(3), 25),
        gradcheck_uncertainty(seed.wrapping_add(4), 25),
    ];
    for (i, v) in Variant::ALL.into_iter().enumerate() {
        out.push(gradcheck_end_to_end(v, seed.wrapping_add(5 + i as u64), 20));
    }
    out.push(gradcheck_end_to_end_uncertainty(seed.wrapping_add(9), 20));
    out
}

/// Collapses a frame-level path: merge adjacent repeats, then drop blanks.
pub fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev {
            if p != blank {
                out.push(p);
            }
            prev = Some(p);
        }
    }
    out
}

/// CTC negative log-likelihood by enumerating every one of the `v^t`
/// frame-level paths. Exponential; only for small instances.
pub fn ctc_loss_brute_force(frame_log_probs: &Mat, labels: &[usize], blank: usize) -> f64 {
    let t_len = frame_log_probs.rows();
    let v = frame_log_probs.cols();
    let mut path = vec![0usize; t_len];
    let mut total = 0.0f64;
    loop {
        if collapse_path(&path, blank) == labels {
            let log_p: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &k)| frame_log_probs.row(t)[k])
                .sum();
            total += libm::exp(log_p);
        }
        // Odometer increment over the v-ary path space.
        let mut pos = 0;
        loop {
            if pos == t_len {
                return -libm::log(total);
            }
            path[pos] += 1;
            if path[pos] < v {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

/// Forward-DP vs enumeration over random small instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcOracleOutcome {
    pub instances: usize,
    pub max_abs_diff: f64,
}

pub fn ctc_enumeration_check(instances: usize, seed: u64) -> CtcOracleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_abs_diff = 0.0f64;
    let mut done = 0;
    while done < instances {
        let v = rng.random_range(2..=4usize);
        let t_len = rng.random_range(1..=6usize);
        let n_labels = rng.random_range(1..=3usize);
        let labels: Vec<usize> = (0..n_labels).map(|_| rng.random_range(1..v)).collect();
        let logits = Mat::from_fn(t_len, v, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lp = log_softmax(&logits);
        let dp = match ctc_loss(&lp, &labels, 0) {
            Ok(l) => l.value,
            Err(_) => continue, // infeasible draw, try another
        };
        let brute = ctc_loss_brute_force(&lp, &labels, 0);
        max_abs_diff = max_abs_diff.max((dp - brute).abs());
        done += 1;
    }
    CtcOracleOutcome {
        instances,
        max_abs_diff,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_merges_then_drops_blanks() {
        assert_eq!(collapse_path(&[1, 1, 0, 1, 2, 2], 0), vec![1, 1, 2]);
        assert_eq!(collapse_path(&[0, 0, 0], 0), Vec::<usize>::new());
        assert_eq!(collapse_path(&[1, 0, 1], 0), vec![1, 1]);
    }

    #[test]
    fn brute_force_matches_uniform_case() {
        let lp = Mat::from_fn(3, 2, |_, _| libm::log(0.5));
        let b = ctc_loss_brute_force(&lp, &[1], 0);
        assert!((b - -libm::log(6.0 / 8.0)).abs() < 1e-12);
    }

    #[test]
    fn fd_of_quadratic_is_linear() {
        let x = [1.0, -2.0, 3.0];
        let g = central_difference(|z| z.iter().map(|v| v * v).sum(), &x, 1e-5);
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }
}
