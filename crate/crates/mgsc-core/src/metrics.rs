//! Evaluation metrics: token error rate, alignment-path regression rate,
//! encoder-decoder representation gap and relative error reduction, plus
//! the per-variant ablation summary.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::consistency::{sentence_loss, AlignmentPath, RepresentationVector};
use crate::data::Condition;
use crate::error::{Error, Result};
use crate::model::Variant;

/// Unit-cost Levenshtein distance between two token sequences.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            cur[j] = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Edit distance divided by the reference length. May exceed 1.
pub fn cer(hypothesis: &[usize], reference: &[usize]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(edit_distance(hypothesis, reference) as f64 / reference.len() as f64)
}

/// Fraction of steps that move strictly backwards along the alignment
/// path. Paths shorter than two steps cannot regress and score 0.
pub fn monotonicity_violation_rate(path: &AlignmentPath) -> f64 {
    let pi = path.positions();
    if pi.len() < 2 {
        return 0.0;
    }
    let violations = pi.windows(2).filter(|w| w[1] < w[0]).count();
    violations as f64 / (pi.len() - 1) as f64
}

/// Mean cosine gap `1 - cos` over pooled (encoder, decoder) pairs.
pub fn representation_gap(
    pairs: &[(RepresentationVector, RepresentationVector)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut total = 0.0;
    for (index, (m_enc, m_dec)) in pairs.iter().enumerate() {
        let gap = sentence_loss(m_enc, m_dec)
            .map_err(|_| Error::DegeneratePair { index })?
            .value;
        total += gap;
    }
    Ok(total / pairs.len() as f64)
}

/// `(baseline - variant) / baseline`; negative when the variant is worse.
pub fn relative_cer_reduction(variant_cer: f64, baseline_cer: f64) -> Result<f64> {
    if baseline_cer <= 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok((baseline_cer - variant_cer) / baseline_cer)
}

/// Median of a sample; the even case averages the middle pair.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Per-variant row of the ablation table. All vectors are indexed by the
/// report's condition list.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: Variant,
    /// Median (across seeds) CER per condition.
    pub cer: Vec<f64>,
    /// Arithmetic mean of the noisy-condition CERs above.
    pub noisy_average: f64,
    /// Median free-running monotonicity-violation rate per condition.
    pub violation_rate: Vec<f64>,
    /// Median teacher-forced pooled-representation gap per condition.
    pub representation_gap: Vec<f64>,
}

/// A training run that diverged; the rest of the report excludes it.
#[derive(Debug, Clone, PartialEq)]
pub struct FailedRun {
    pub variant: Variant,
    pub seed: u64,
    pub reason: String,
}

/// The variant-by-condition CER table with its companion diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub conditions: Vec<Condition>,
    pub variants: Vec<VariantSummary>,
    pub failed_runs: Vec<FailedRun>,
}

impl AblationReport {
    pub fn summary(&self, variant: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == variant)
    }

    /// Mean over the noisy conditions of a per-condition series.
    pub fn noisy_mean(&self, series: &[f64]) -> f64 {
        let noisy: Vec<f64> = self
            .conditions
            .iter()
            .zip(series)
            .filter(|(c, _)| !c.is_clean())
            .map(|(_, &v)| v)
            .collect();
        noisy.iter().sum::<f64>() / noisy.len() as f64
    }
}
