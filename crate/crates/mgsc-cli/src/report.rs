//! Report serialization: the CER table as CSV and rendered text, the
//! relative-reduction table, companion metrics and per-run loss logs.

use std::fmt::Write as _;

use mgsc_core::balancer::LossBreakdown;
use mgsc_core::metrics::{relative_cer_reduction, AblationReport};
use mgsc_core::model::Variant;

/// `variant,condition,cer` rows, one per table cell, with a final
/// `noisy_avg` row per variant.
pub fn report_csv(report: &AblationReport) -> String {
    let mut s = String::from("variant,condition,cer\n");
    for v in &report.variants {
        for (cond, &cer) in report.conditions.iter().zip(&v.cer) {
            let _ = writeln!(s, "{},{},{:.6}", v.variant.name(), cond, cer);
        }
        let _ = writeln!(s, "{},noisy_avg,{:.6}", v.variant.name(), v.noisy_average);
    }
    s
}

/// Text table shaped like the ablation study: variants as rows, conditions
/// as columns, noisy average last.
pub fn report_table(report: &AblationReport) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<12}", "system");
    for cond in &report.conditions {
        let _ = write!(s, "{:>10}", cond.to_string());
    }
    let _ = writeln!(s, "{:>12}", "noisy_avg");
    for v in &report.variants {
        let _ = write!(s, "{:<12}", v.variant.name());
        for &cer in &v.cer {
            let _ = write!(s, "{:>10.4}", cer);
        }
        let _ = writeln!(s, "{:>12.4}", v.noisy_average);
    }
    if !report.failed_runs.is_empty() {
        let _ = writeln!(s, "\nfailed runs:");
        for f in &report.failed_runs {
            let _ = writeln!(s, "  {} seed {}: {}", f.variant.name(), f.seed, f.reason);
        }
    }
    s
}

/// Relative CER reduction of each variant against the baseline row.
/// Cells where the baseline CER is zero are left empty.
pub fn reduction_csv(report: &AblationReport) -> String {
    let mut s = String::from("variant,condition,relative_reduction\n");
    let Some(baseline) = report.summary(Variant::Baseline) else {
        return s;
    };
    let base_cells: Vec<f64> = baseline
        .cer
        .iter()
        .copied()
        .chain([baseline.noisy_average])
        .collect();
    for v in &report.variants {
        if v.variant == Variant::Baseline {
            continue;
        }
        let cells: Vec<f64> = v.cer.iter().copied().chain([v.noisy_average]).collect();
        let labels: Vec<String> = report
            .conditions
            .iter()
            .map(|c| c.to_string())
            .chain([String::from("noisy_avg")])
            .collect();
        for ((label, &cer), &base) in labels.iter().zip(&cells).zip(&base_cells) {
            match relative_cer_reduction(cer, base) {
                Ok(r) => {
                    let _ = writeln!(s, "{},{},{:.6}", v.variant.name(), label, r);
                }
                Err(_) => {
                    let _ = writeln!(s, "{},{},", v.variant.name(), label);
                }
            }
        }
    }
    s
}

/// Companion diagnostics per cell: free-running violation rate and
/// teacher-forced representation gap.
pub fn metrics_csv(report: &AblationReport) -> String {
    let mut s = String::from("variant,condition,violation_rate,representation_gap\n");
    for v in &report.variants {
        for ((cond, &rate), &gap) in report
            .conditions
            .iter()
            .zip(&v.violation_rate)
            .zip(&v.representation_gap)
        {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6}",
                v.variant.name(),
                cond,
                rate,
                gap
            );
        }
    }
    s
}

/// Per-step loss trajectory of one run.
pub fn losses_csv(trajectory: &[LossBreakdown]) -> String {
    let mut s = String::from("step,l_asr,l_sentence,l_align,l_total\n");
    for (step, b) in trajectory.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6}",
            step, b.l_asr, b.l_sentence, b.l_align, b.l_total
        );
    }
    s
}
