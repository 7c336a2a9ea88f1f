//! Task loss: label-level cross-entropy, CTC negative log-likelihood via
//! the forward-backward dynamic program in log space, and their weighted
//! hybrid. Each piece carries an analytic gradient.

use alloc::vec;

use crate::consistency::LossWithGrad;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Numerically stable log-sum-exp of two log-domain values.
pub fn log_sum_exp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

/// Row-wise log-softmax of a logit matrix.
pub fn log_softmax(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + libm::log(
                row.iter().map(|&x| libm::exp(x - max)).sum::<f64>(),
            );
        for x in row.iter_mut() {
            *x -= lse;
        }
    }
    out
}

/// Mean token-level negative log-likelihood of teacher-forced decoder
/// logits. Gradient is `(softmax - onehot) / t` per row.
pub fn cross_entropy_loss(decoder_logits: &Mat, targets: &[usize]) -> Result<LossWithGrad> {
    if decoder_logits.rows() != targets.len() {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy rows vs targets",
            expected: targets.len(),
            actual: decoder_logits.rows(),
        });
    }
    if targets.is_empty() {
        return Err(Error::EmptySequence);
    }
    let v = decoder_logits.cols();
    for &t in targets {
        if t >= v {
            return Err(Error::LabelOutOfRange { label: t, classes: v });
        }
    }

    let lp = log_softmax(decoder_logits);
    let n = targets.len() as f64;
    let mut value = 0.0;
    let mut grad = Mat::zeros(lp.rows(), v);
    for (r, &target) in targets.iter().enumerate() {
        value -= lp.row(r)[target];
        let g = grad.row_mut(r);
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = libm::exp(lp.row(r)[c]) / n;
        }
        g[target] -= 1.0 / n;
    }
    value /= n;

    Ok(LossWithGrad { value, grad })
}

fn validate_log_probs(frame_log_probs: &Mat) -> Result<()> {
    for (r, row) in frame_log_probs.iter_rows().enumerate() {
        let sum: f64 = row.iter().map(|&x| libm::exp(x)).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidLogProbs { row: r, sum });
        }
    }
    Ok(())
}

/// Minimum frame count needed to emit `labels`: one frame per label plus a
/// separating blank frame per adjacent repeat.
fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC negative log-likelihood over all blank-augmented alignments, with
/// the gradient with respect to the frame log-probabilities.
///
/// `frame_log_probs` must already be log-softmaxed; `labels` must not
/// contain `blank`.
pub fn ctc_loss(frame_log_probs: &Mat, labels: &[usize], blank: usize) -> Result<LossWithGrad> {
    let t_len = frame_log_probs.rows();
    let v = frame_log_probs.cols();
    if v < 2 {
        return Err(Error::InvalidConfig(alloc::format!(
            "CTC needs at least 2 classes, got {v}"
        )));
    }
    if blank >= v {
        return Err(Error::LabelOutOfRange {
            label: blank,
            classes: v,
        });
    }
    if labels.is_empty() || t_len == 0 {
        return Err(Error::EmptySequence);
    }
    for &l in labels {
        if l >= v {
            return Err(Error::LabelOutOfRange { label: l, classes: v });
        }
        if l == blank {
            return Err(Error::BlankInLabels { blank });
        }
    }
    let required = min_frames(labels);
    if t_len < required {
        return Err(Error::InfeasibleAlignment {
            frames: t_len,
            required,
        });
    }
    validate_log_probs(frame_log_probs)?;

    // Extended sequence: blank, l1, blank, l2, ..., blank.
    let s_len = 2 * labels.len() + 1;
    let ext = |s: usize| -> usize {
        if s % 2 == 0 {
            blank
        } else {
            labels[s / 2]
        }
    };
    // Skip transition s-2 -> s is legal when ext(s) is a label differing
    // from ext(s-2).
    let skip_ok = |s: usize| s >= 2 && s % 2 == 1 && ext(s) != ext(s - 2);

    let lp = |t: usize, s: usize| frame_log_probs.row(t)[ext(s)];
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![vec![neg; s_len]; t_len];
    alpha[0][0] = lp(0, 0);
    if s_len > 1 {
        alpha[0][1] = lp(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_sum_exp2(acc, alpha[t - 1][s - 1]);
            }
            if skip_ok(s) {
                acc = log_sum_exp2(acc, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = if acc == neg { neg } else { acc + lp(t, s) };
        }
    }

    let mut log_p = alpha[t_len - 1][s_len - 1];
    if s_len > 1 {
        log_p = log_sum_exp2(log_p, alpha[t_len - 1][s_len - 2]);
    }
    debug_assert!(log_p > neg, "feasible instance must have positive likelihood");

    let mut beta = vec![vec![neg; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = lp(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[t_len - 1][s_len - 2] = lp(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[t + 1][s];
            if s + 1 < s_len {
                acc = log_sum_exp2(acc, beta[t + 1][s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                acc = log_sum_exp2(acc, beta[t + 1][s + 2]);
            }
            beta[t][s] = if acc == neg { neg } else { acc + lp(t, s) };
        }
    }

    // alpha and beta both include the emission at t, so the posterior mass
    // passing through (t, s) is alpha + beta - lp. Summed per class and
    // normalized, each grad row w.r.t. the log-probs sums to -1.
    let mut grad = Mat::zeros(t_len, v);
    for t in 0..t_len {
        let mut per_class = vec![neg; v];
        for s in 0..s_len {
            let joint = alpha[t][s] + beta[t][s];
            if joint > neg {
                let k = ext(s);
                per_class[k] = log_sum_exp2(per_class[k], joint);
            }
        }
        let g = grad.row_mut(t);
        for (k, &acc) in per_class.iter().enumerate() {
            if acc > neg {
                g[k] = -libm::exp(acc - frame_log_probs.row(t)[k] - log_p);
            }
        }
    }

    Ok(LossWithGrad {
        value: -log_p,
        grad,
    })
}

/// Weighted hybrid of the two task-loss branches. The gradients keep their
/// own shapes and are scaled by `(1 - ctc_weight)` and `ctc_weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridAsrLoss {
    pub value: f64,
    pub ce_grad: Mat,
    pub ctc_grad: Mat,
}

pub fn hybrid_asr_loss(
    ce: &LossWithGrad,
    ctc: &LossWithGrad,
    ctc_weight: f64,
) -> Result<HybridAsrLoss> {
    if !(0.0..=1.0).contains(&ctc_weight) {
        return Err(Error::InvalidMixWeight(ctc_weight));
    }
    let ce_w = 1.0 - ctc_weight;
    let mut ce_grad = ce.grad.clone();
    for g in ce_grad.data_mut() {
        *g *= ce_w;
    }
    let mut ctc_grad = ctc.grad.clone();
    for g in ctc_grad.data_mut() {
        *g *= ctc_weight;
    }
    Ok(HybridAsrLoss {
        value: ce_w * ce.value + ctc_weight * ctc.value,
        ce_grad,
        ctc_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_log_probs(t: usize, v: usize) -> Mat {
        Mat::from_fn(t, v, |_, _| libm::log(1.0 / v as f64))
    }

    #[test]
    fn uniform_ce_is_log_vocab() {
        let logits = Mat::zeros(3, 4);
        let l = cross_entropy_loss(&logits, &[0, 2, 3]).unwrap();
        assert!((l.value - libm::log(4.0)).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_prediction_is_near_zero() {
        let mut logits = Mat::zeros(2, 4);
        logits[(0, 1)] = 50.0;
        logits[(1, 3)] = 50.0;
        let l = cross_entropy_loss(&logits, &[1, 3]).unwrap();
        assert!(l.value < 1e-8);
    }

    #[test]
    fn ce_shape_mismatch_is_rejected() {
        let logits = Mat::zeros(2, 4);
        assert!(matches!(
            cross_entropy_loss(&logits, &[0, 1, 2]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ce_grad_rows_sum_to_zero() {
        let logits = Mat::from_fn(3, 5, |r, c| ((r * 5 + c) as f64 * 0.7).sin());
        let l = cross_entropy_loss(&logits, &[4, 0, 2]).unwrap();
        for row in l.grad.iter_rows() {
            assert!(row.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn single_frame_single_label() {
        let mut lp = uniform_log_probs(1, 3);
        lp[(0, 1)] = libm::log(0.6);
        lp[(0, 0)] = libm::log(0.3);
        lp[(0, 2)] = libm::log(0.1);
        let l = ctc_loss(&lp, &[1], 0).unwrap();
        assert!((l.value - -libm::log(0.6)).abs() < 1e-12);
    }

    #[test]
    fn three_uniform_frames_one_label() {
        // Of the 8 equiprobable paths over {blank, a}^3, six collapse to
        // "a" (all but a_a and ___), so the likelihood is 6/8.
        let lp = uniform_log_probs(3, 2);
        let l = ctc_loss(&lp, &[1], 0).unwrap();
        assert!((l.value - -libm::log(6.0 / 8.0)).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_separating_blank() {
        // Target [1, 1] over 3 uniform frames has the single path (1, _, 1).
        let lp = uniform_log_probs(3, 2);
        let l = ctc_loss(&lp, &[1, 1], 0).unwrap();
        assert!((l.value - 3.0 * libm::log(2.0)).abs() < 1e-12);
    }

    #[test]
    fn infeasible_label_sequence_is_rejected() {
        let lp = uniform_log_probs(2, 3);
        assert_eq!(
            ctc_loss(&lp, &[1, 1], 0),
            Err(Error::InfeasibleAlignment {
                frames: 2,
                required: 3
            })
        );
    }

    #[test]
    fn invalid_log_probs_name_the_row() {
        let mut lp = uniform_log_probs(2, 3);
        lp[(1, 0)] = 0.1;
        assert!(matches!(
            ctc_loss(&lp, &[1], 0),
            Err(Error::InvalidLogProbs { row: 1, .. })
        ));
    }

    #[test]
    fn blank_in_labels_is_rejected() {
        let lp = uniform_log_probs(3, 3);
        assert_eq!(ctc_loss(&lp, &[0], 0), Err(Error::BlankInLabels { blank: 0 }));
    }

    #[test]
    fn ctc_grad_rows_sum_to_minus_one() {
        let logits = Mat::from_fn(4, 3, |r, c| ((r * 3 + c) as f64 * 0.41).cos());
        let lp = log_softmax(&logits);
        let l = ctc_loss(&lp, &[1, 2], 0).unwrap();
        for row in l.grad.iter_rows() {
            assert!((row.iter().sum::<f64>() + 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn hybrid_degenerate_weights() {
        let ce = LossWithGrad {
            value: 2.0,
            grad: Mat::zeros(1, 2),
        };
        let ctc = LossWithGrad {
            value: 4.0,
            grad: Mat::zeros(3, 2),
        };
        assert_eq!(hybrid_asr_loss(&ce, &ctc, 0.0).unwrap().value, 2.0);
        assert_eq!(hybrid_asr_loss(&ce, &ctc, 1.0).unwrap().value, 4.0);
        let h = hybrid_asr_loss(&ce, &ctc, 0.3).unwrap();
        assert!((h.value - 2.6).abs() < 1e-12);
    }

    #[test]
    fn hybrid_rejects_out_of_range_weight() {
        let l = LossWithGrad {
            value: 1.0,
            grad: Mat::zeros(1, 1),
        };
        assert_eq!(
            hybrid_asr_loss(&l, &l, 1.5),
            Err(Error::InvalidMixWeight(1.5))
        );
    }
}
