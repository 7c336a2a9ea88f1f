//! Attention-map and representation dumps from a trained checkpoint, for
//! offline plotting and inspection.

use anyhow::Context;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mgsc_core::consistency::{expected_alignment_path, global_average_pool, sentence_loss, AttentionMatrix};
use mgsc_core::data::{inject_noise, Condition, NoiseConfig};
use mgsc_core::metrics::monotonicity_violation_rate;
use mgsc_core::model::{forward, greedy_decode};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::experiment::{noise_seed, split_dataset};

/// Free-running attention matrices for the first `count` test samples.
/// One CSV per sample: two `#` header lines (shape + violation rate, then
/// the expected alignment path), followed by the row-stochastic matrix.
pub fn dump_attention(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    condition: Condition,
    count: usize,
    out: &Path,
) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let (_, test) = split_dataset(cfg, ckpt.seed)?;
    let max_len = cfg.decode_max_len();

    let mut written = Vec::new();
    for (si, sample) in test.iter().take(count).enumerate() {
        let feats = inject_noise(
            &sample.features,
            &NoiseConfig::new(condition, noise_seed(ckpt.seed, condition, si))
                .with_stationary_share(cfg.noise_stationary_share),
        )?;
        let decoded = greedy_decode(&ckpt.params, &feats, max_len)?;
        let attn = decoded.attention;

        let mut s = String::new();
        if attn.rows() >= 1 {
            let path =
                expected_alignment_path(&AttentionMatrix::new_unchecked(attn.clone()));
            let rate = monotonicity_violation_rate(&path);
            let _ = writeln!(
                s,
                "# t_out={} t_in={} violation_rate={rate:.6}",
                attn.rows(),
                attn.cols()
            );
            let rendered: Vec<String> =
                path.positions().iter().map(|p| format!("{p:.6}")).collect();
            let _ = writeln!(s, "# path={}", rendered.join(","));
            for row in attn.iter_rows() {
                let rendered: Vec<String> = row.iter().map(|w| format!("{w:.6}")).collect();
                let _ = writeln!(s, "{}", rendered.join(","));
            }
        } else {
            let _ = writeln!(s, "# t_out=0 t_in={} violation_rate=0.000000", attn.cols());
            let _ = writeln!(s, "# path=");
        }

        let path = out.join(format!("attn_{si}.csv"));
        std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

/// Pooled encoder/decoder representations of the first `count` test
/// samples, teacher-forced, one line per sample:
/// `m_enc_0..m_enc_{d-1}, m_dec_0..m_dec_{d-1}, gap`.
pub fn dump_representations(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    condition: Condition,
    count: usize,
    out: &Path,
) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let (_, test) = split_dataset(cfg, ckpt.seed)?;
    let d = cfg.hidden;

    let mut s = String::new();
    for k in 0..d {
        let _ = write!(s, "m_enc_{k},");
    }
    for k in 0..d {
        let _ = write!(s, "m_dec_{k},");
    }
    let _ = writeln!(s, "gap");

    for (si, sample) in test.iter().take(count).enumerate() {
        let feats = inject_noise(
            &sample.features,
            &NoiseConfig::new(condition, noise_seed(ckpt.seed, condition, si))
                .with_stationary_share(cfg.noise_stationary_share),
        )?;
        let fwd = forward(&ckpt.params, &feats, &sample.targets)?;
        let m_enc = global_average_pool(&fwd.enc_hidden)?;
        let m_dec = global_average_pool(&fwd.dec_hidden)?;
        let gap = sentence_loss(&m_enc, &m_dec)?.value;
        for v in m_enc.values() {
            let _ = write!(s, "{v},");
        }
        for v in m_dec.values() {
            let _ = write!(s, "{v},");
        }
        let _ = writeln!(s, "{gap}");
    }

    let path = out.join("repr.csv");
    std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
