//! The two consistency regularizers: a hinge penalty on regressions of the
//! expected attention alignment path, and a cosine loss between pooled
//! encoder/decoder representations. Both return the loss value together
//! with its analytic gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, Mat};

/// Row-stochastic cross-attention weights, one row per output step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    weights: Mat,
}

impl AttentionMatrix {
    /// Validates shape, entry range and row-stochasticity (1e-6 tolerance).
    pub fn new(weights: Mat) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::EmptySequence);
        }
        for (r, row) in weights.iter_rows().enumerate() {
            let mut sum = 0.0;
            for (c, &w) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::WeightOutOfUnitRange {
                        row: r,
                        col: c,
                        value: w,
                    });
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::NonStochasticRow { row: r, sum });
            }
        }
        Ok(Self { weights })
    }

    /// Skips validation. For callers that already hold softmax output, and
    /// for finite-difference probes that perturb single entries.
    pub fn new_unchecked(weights: Mat) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    /// Number of output (decoder) steps.
    pub fn t_out(&self) -> usize {
        self.weights.rows()
    }

    /// Number of input (encoder) frames.
    pub fn t_in(&self) -> usize {
        self.weights.cols()
    }
}

/// Expected input-frame position attended at each output step.
/// Entries live in `[0, t_in - 1]` for row-stochastic attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    positions: Vec<f64>,
}

impl AlignmentPath {
    pub fn new(positions: Vec<f64>) -> Self {
        Self { positions }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// A scalar loss plus its gradient with respect to the differentiated input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub value: f64,
    pub grad: Mat,
}

/// Weighted-average attended frame index per output step, using 0-based
/// column indices.
pub fn expected_alignment_path(attn: &AttentionMatrix) -> AlignmentPath {
    let positions = attn
        .weights
        .iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &w)| w * j as f64)
                .sum::<f64>()
        })
        .collect();
    AlignmentPath::new(positions)
}

/// Mean hinge penalty on backward steps of the expected alignment path:
/// `(1/(t_out-1)) · Σ max(0, π_{i-1} - π_i)`.
///
/// A single-step output cannot regress, so `t_out = 1` yields value 0 with a
/// zero gradient. Exact pauses (`π_{i-1} = π_i`) take subgradient 0.
pub fn alignment_loss(attn: &AttentionMatrix) -> LossWithGrad {
    let (t_out, t_in) = (attn.t_out(), attn.t_in());
    let mut grad = Mat::zeros(t_out, t_in);
    if t_out < 2 {
        return LossWithGrad { value: 0.0, grad };
    }

    let path = expected_alignment_path(attn);
    let pi = path.positions();
    let norm = 1.0 / (t_out - 1) as f64;

    let mut value = 0.0;
    let mut dpi = vec![0.0; t_out];
    for i in 1..t_out {
        let gap = pi[i - 1] - pi[i];
        if gap > 0.0 {
            value += gap;
            dpi[i - 1] += norm;
            dpi[i] -= norm;
        }
    }
    value *= norm;

    // dπ_i/dα_{i,j} = j, so each attention row picks up dπ_i scaled by the
    // column index.
    for (i, &d) in dpi.iter().enumerate() {
        if d != 0.0 {
            for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
                *g = d * j as f64;
            }
        }
    }

    LossWithGrad { value, grad }
}

/// Utterance-level representation obtained by pooling hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationVector {
    values: Vec<f64>,
}

impl RepresentationVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Mean over the time axis of a `(t, d)` hidden-state matrix.
pub fn global_average_pool(hidden: &Mat) -> Result<RepresentationVector> {
    let t = hidden.rows();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let mut out = vec![0.0; hidden.cols()];
    for row in hidden.iter_rows() {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let inv = 1.0 / t as f64;
    for o in &mut out {
        *o *= inv;
    }
    Ok(RepresentationVector::new(out))
}

/// Cosine loss between two pooled representations, with gradients for both.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceLoss {
    pub value: f64,
    pub grad_enc: Vec<f64>,
    pub grad_dec: Vec<f64>,
}

/// Minimum representation norm below which pooling is considered collapsed.
pub const NORM_EPSILON: f64 = 1e-8;

/// `1 - cos(m_enc, m_dec)`, in `[0, 2]`. Gradient flows to both inputs.
pub fn sentence_loss(
    m_enc: &RepresentationVector,
    m_dec: &RepresentationVector,
) -> Result<SentenceLoss> {
    let (u, w) = (m_enc.values(), m_dec.values());
    if u.len() != w.len() {
        return Err(Error::ShapeMismatch {
            context: "sentence_loss dimensions",
            expected: u.len(),
            actual: w.len(),
        });
    }
    let nu = l2_norm(u);
    let nw = l2_norm(w);
    if nu <= NORM_EPSILON {
        return Err(Error::DegenerateRepresentation {
            side: "encoder",
            norm: nu,
        });
    }
    if nw <= NORM_EPSILON {
        return Err(Error::DegenerateRepresentation {
            side: "decoder",
            norm: nw,
        });
    }

    let d = dot(u, w);
    let cos = d / (nu * nw);
    let value = 1.0 - cos;

    // d(1 - cos)/du = cos·u/|u|² - w/(|u||w|), symmetrically for w.
    let mut grad_enc = vec![0.0; u.len()];
    let mut grad_dec = vec![0.0; w.len()];
    let inv_uw = 1.0 / (nu * nw);
    let cu = cos / (nu * nu);
    let cw = cos / (nw * nw);
    for k in 0..u.len() {
        grad_enc[k] = cu * u[k] - inv_uw * w[k];
        grad_dec[k] = cw * w[k] - inv_uw * u[k];
    }

    Ok(SentenceLoss {
        value,
        grad_enc,
        grad_dec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attn(rows: &[Vec<f64>]) -> AttentionMatrix {
        AttentionMatrix::new(Mat::from_rows(rows)).unwrap()
    }

    #[test]
    fn path_of_identity_is_diagonal() {
        let a = attn(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        assert_eq!(expected_alignment_path(&a).positions(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn path_of_uniform_rows() {
        let a = attn(&[vec![0.25; 4], vec![0.25; 4]]);
        assert_eq!(expected_alignment_path(&a).positions(), &[1.5, 1.5]);
    }

    #[test]
    fn path_of_one_hot_rows() {
        let a = attn(&[vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]);
        assert_eq!(expected_alignment_path(&a).positions(), &[2.0, 0.0]);
    }

    #[test]
    fn non_stochastic_row_is_named() {
        let m = Mat::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.3]]);
        match AttentionMatrix::new(m) {
            Err(Error::NonStochasticRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected NonStochasticRow, got {other:?}"),
        }
    }

    #[test]
    fn monotone_path_has_zero_loss_and_grad() {
        let a = attn(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let l = alignment_loss(&a);
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn full_regression_scores_two() {
        let a = attn(&[vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]);
        assert_eq!(alignment_loss(&a).value, 2.0);
    }

    #[test]
    fn single_regression_among_three_steps() {
        // one-hot rows at columns 0, 2, 1, 3 -> path [0, 2, 1, 3]
        let a = attn(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ]);
        let l = alignment_loss(&a);
        assert!((l.value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_step_output_is_defined_zero() {
        let a = attn(&[vec![0.5, 0.5]]);
        let l = alignment_loss(&a);
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn exact_pause_is_free() {
        let a = attn(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.0, 1.0]]);
        let l = alignment_loss(&a);
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn pool_single_row_is_identity() {
        let m = Mat::from_rows(&[vec![1.0, 2.0, 3.0]]);
        assert_eq!(
            global_average_pool(&m).unwrap().values(),
            &[1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn pool_averages_rows() {
        let m = Mat::from_rows(&[vec![1.0, 3.0], vec![3.0, 1.0]]);
        assert_eq!(global_average_pool(&m).unwrap().values(), &[2.0, 2.0]);
    }

    #[test]
    fn pool_of_zeros_is_zero() {
        let m = Mat::zeros(3, 4);
        assert!(global_average_pool(&m)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn pool_rejects_empty() {
        assert_eq!(global_average_pool(&Mat::zeros(0, 4)), Err(Error::EmptySequence));
    }

    #[test]
    fn sentence_loss_identical_vectors() {
        let v = RepresentationVector::new(vec![1.0, 2.0]);
        let l = sentence_loss(&v, &v).unwrap();
        assert!(l.value.abs() < 1e-15);
    }

    #[test]
    fn sentence_loss_orthogonal_and_antiparallel() {
        let a = RepresentationVector::new(vec![1.0, 0.0]);
        let b = RepresentationVector::new(vec![0.0, 1.0]);
        let c = RepresentationVector::new(vec![-1.0, 0.0]);
        assert_eq!(sentence_loss(&a, &b).unwrap().value, 1.0);
        assert_eq!(sentence_loss(&a, &c).unwrap().value, 2.0);
    }

    #[test]
    fn sentence_loss_rejects_near_zero_norm() {
        let a = RepresentationVector::new(vec![1e-9, 0.0]);
        let b = RepresentationVector::new(vec![1.0, 0.0]);
        assert!(matches!(
            sentence_loss(&a, &b),
            Err(Error::DegenerateRepresentation { side: "encoder", .. })
        ));
        assert!(matches!(
            sentence_loss(&b, &a),
            Err(Error::DegenerateRepresentation { side: "decoder", .. })
        ));
    }
}
