//! Dataset dump format: a line-oriented text manifest next to a binary
//! block of little-endian f64 feature frames.

use anyhow::{bail, Context};
use std::fmt::Write as _;
use std::path::Path;

use mgsc_core::data::SyntheticSample;
use mgsc_core::Mat;

const MAGIC: &str = "mgsc-dataset v1";
const MANIFEST: &str = "manifest.txt";
const FEATURES: &str = "features.bin";

/// Writes `manifest.txt` and `features.bin` into `dir`.
pub fn write_dataset(dir: &Path, samples: &[SyntheticSample]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let feature_dim = samples.first().map_or(0, |s| s.features.cols());

    let mut manifest = String::new();
    let mut blob: Vec<u8> = Vec::new();
    let _ = writeln!(manifest, "{MAGIC}");
    let _ = writeln!(manifest, "feature_dim {feature_dim}");
    let _ = writeln!(manifest, "count {}", samples.len());
    for (idx, s) in samples.iter().enumerate() {
        let offset = blob.len();
        for &v in s.features.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let targets: Vec<String> = s.targets.iter().map(|t| t.to_string()).collect();
        let alignment: Vec<String> = s.true_alignment.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(
            manifest,
            "sample {idx} t_in {} offset {offset} targets {} alignment {}",
            s.features.rows(),
            targets.join(","),
            alignment.join(","),
        );
    }
    std::fs::write(dir.join(MANIFEST), manifest)?;
    std::fs::write(dir.join(FEATURES), blob)?;
    Ok(())
}

/// Reads a dump produced by [`write_dataset`]; features round-trip bitwise.
pub fn read_dataset(dir: &Path) -> anyhow::Result<Vec<SyntheticSample>> {
    let manifest = std::fs::read_to_string(dir.join(MANIFEST))
        .with_context(|| format!("reading {}", dir.join(MANIFEST).display()))?;
    let blob = std::fs::read(dir.join(FEATURES))?;

    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        bail!("not a {MAGIC} manifest");
    }
    let feature_dim: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("feature_dim "))
        .context("missing feature_dim")?
        .parse()?;
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("count "))
        .context("missing count")?
        .parse()?;

    let mut samples = Vec::with_capacity(count);
    for line in lines {
        let mut parts = line.split_whitespace();
        if parts.next() != Some("sample") {
            bail!("unexpected manifest line '{line}'");
        }
        let _idx: usize = parts.next().context("missing index")?.parse()?;
        let mut expect = |tag: &str| -> anyhow::Result<String> {
            if parts.next() != Some(tag) {
                bail!("expected '{tag}' in '{line}'");
            }
            Ok(parts.next().context("missing value")?.to_string())
        };
        let t_in: usize = expect("t_in")?.parse()?;
        let offset: usize = expect("offset")?.parse()?;
        let targets: Vec<usize> = expect("targets")?
            .split(',')
            .map(|t| t.parse::<usize>().map_err(anyhow::Error::from))
            .collect::<anyhow::Result<_>>()?;
        let alignment: Vec<usize> = expect("alignment")?
            .split(',')
            .map(|t| t.parse::<usize>().map_err(anyhow::Error::from))
            .collect::<anyhow::Result<_>>()?;

        let n_bytes = t_in * feature_dim * 8;
        let slice = blob
            .get(offset..offset + n_bytes)
            .context("feature block out of range")?;
        let values: Vec<f64> = slice
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        samples.push(SyntheticSample {
            features: Mat::from_vec(t_in, feature_dim, values),
            targets,
            true_alignment: alignment,
        });
    }
    if samples.len() != count {
        bail!("manifest count {count} but {} samples", samples.len());
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mgsc_core::data::{generate_dataset, TaskConfig};

    #[test]
    fn dataset_round_trips_bitwise() {
        let cfg = TaskConfig {
            count: 6,
            ..TaskConfig::default()
        };
        let samples = generate_dataset(&cfg, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &samples).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, samples);
    }
}
