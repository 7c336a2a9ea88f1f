//! Combines the task loss with the two consistency losses, either through
//! fixed weights or learnable homoscedastic-uncertainty weights.

use crate::error::{Error, Result};

/// Scalar components of one training objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_asr: f64,
    pub l_sentence: f64,
    pub l_align: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalancerMode {
    Fixed,
    Uncertainty,
}

/// Learnable per-term log-variances, one per loss component
/// (task, sentence, alignment — in that order).
#[derive(Debug, Clone, PartialEq)]
pub struct BalancerState {
    pub log_vars: [f64; 3],
    pub mode: BalancerMode,
}

impl BalancerState {
    pub fn fixed() -> Self {
        Self {
            log_vars: [0.0; 3],
            mode: BalancerMode::Fixed,
        }
    }

    pub fn uncertainty() -> Self {
        Self {
            log_vars: [0.0; 3],
            mode: BalancerMode::Uncertainty,
        }
    }
}

/// Fixed-weight combination. `coeffs` are the gradient coefficients
/// `(1, lambda_sent, lambda_align)` to apply to each component's gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedCombined {
    pub breakdown: LossBreakdown,
    pub coeffs: [f64; 3],
}

pub fn combine_fixed(
    l_asr: f64,
    l_sentence: f64,
    l_align: f64,
    lambda_sent: f64,
    lambda_align: f64,
) -> Result<FixedCombined> {
    if lambda_sent < 0.0 {
        return Err(Error::NegativeLambda(lambda_sent));
    }
    if lambda_align < 0.0 {
        return Err(Error::NegativeLambda(lambda_align));
    }
    if !(l_asr.is_finite() && l_sentence.is_finite() && l_align.is_finite()) {
        return Err(Error::NonFinite("combine_fixed inputs"));
    }
    let l_total = l_asr + lambda_sent * l_sentence + lambda_align * l_align;
    Ok(FixedCombined {
        breakdown: LossBreakdown {
            l_asr,
            l_sentence,
            l_align,
            l_total,
        },
        coeffs: [1.0, lambda_sent, lambda_align],
    })
}

/// Uncertainty-weighted combination `Σ exp(-s_k)·L_k + s_k` with gradients
/// for both the losses and the log-variances.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyCombined {
    pub l_total: f64,
    /// `∂l_total/∂L_k = exp(-s_k)`; always positive.
    pub loss_coeffs: [f64; 3],
    /// `∂l_total/∂s_k = 1 - exp(-s_k)·L_k`.
    pub log_var_grads: [f64; 3],
}

pub fn combine_uncertainty(losses: [f64; 3], state: &BalancerState) -> Result<UncertaintyCombined> {
    debug_assert_eq!(state.mode, BalancerMode::Uncertainty);
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("combine_uncertainty losses"));
    }
    if state.log_vars.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("combine_uncertainty log_vars"));
    }
    let mut l_total = 0.0;
    let mut loss_coeffs = [0.0; 3];
    let mut log_var_grads = [0.0; 3];
    for k in 0..3 {
        let w = libm::exp(-state.log_vars[k]);
        l_total += w * losses[k] + state.log_vars[k];
        loss_coeffs[k] = w;
        log_var_grads[k] = 1.0 - w * losses[k];
    }
    Ok(UncertaintyCombined {
        l_total,
        loss_coeffs,
        log_var_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lambdas_reduce_to_task_loss() {
        let c = combine_fixed(1.25, 0.7, 0.3, 0.0, 0.0).unwrap();
        assert_eq!(c.breakdown.l_total, 1.25);
        assert_eq!(c.coeffs, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn fixed_arithmetic() {
        let c = combine_fixed(1.0, 0.5, 0.2, 1.0, 1.0).unwrap();
        assert!((c.breakdown.l_total - 1.7).abs() < 1e-15);
    }

    #[test]
    fn zero_sentence_loss_contributes_nothing() {
        let c = combine_fixed(1.0, 0.0, 0.4, 2.0, 0.5).unwrap();
        assert!((c.breakdown.l_total - 1.2).abs() < 1e-15);
    }

    #[test]
    fn negative_lambda_rejected() {
        assert_eq!(
            combine_fixed(1.0, 0.0, 0.0, -0.1, 0.0),
            Err(Error::NegativeLambda(-0.1))
        );
    }

    #[test]
    fn unit_weights_at_zero_log_vars() {
        let c = combine_uncertainty([1.0, 2.0, 3.0], &BalancerState::uncertainty()).unwrap();
        assert_eq!(c.l_total, 6.0);
        assert_eq!(c.loss_coeffs, [1.0; 3]);
    }

    #[test]
    fn log_var_gradient_stationary_at_log_loss() {
        // For L = 1 the stationary point of exp(-s)·L + s is s = ln L = 0.
        let c = combine_uncertainty([1.0, 1.0, 1.0], &BalancerState::uncertainty()).unwrap();
        assert!(c.log_var_grads.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn non_finite_state_rejected() {
        let mut st = BalancerState::uncertainty();
        st.log_vars[1] = f64::NAN;
        assert!(combine_uncertainty([1.0; 3], &st).is_err());
    }
}
