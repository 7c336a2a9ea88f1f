//! Versioned text checkpoint that round-trips every tensor bitwise.
//! Values are stored as hexadecimal IEEE-754 bit patterns.

use anyhow::{bail, Context};
use std::fmt::Write as _;
use std::path::Path;

use mgsc_core::balancer::BalancerState;
use mgsc_core::model::{ModelConfig, ModelParams};
use mgsc_core::Mat;

const MAGIC: &str = "mgsc-checkpoint v1";

/// A trained model plus the balancer log-variances and the experiment seed
/// the run was started from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub params: ModelParams,
    pub log_vars: [f64; 3],
}

impl Checkpoint {
    pub fn new(seed: u64, params: ModelParams, balancer: &BalancerState) -> Self {
        Self {
            seed,
            params,
            log_vars: balancer.log_vars,
        }
    }

    pub fn render(&self) -> String {
        let cfg = self.params.config;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(
            s,
            "dims feature_dim={} hidden={} vocab={}",
            cfg.feature_dim, cfg.hidden, cfg.vocab
        );
        let _ = write!(s, "log_vars");
        for v in self.log_vars {
            let _ = write!(s, " {:016x}", v.to_bits());
        }
        let _ = writeln!(s);
        for (name, tensor) in self.params.tensors() {
            let _ = writeln!(s, "tensor {name} {} {}", tensor.rows(), tensor.cols());
            for row in tensor.iter_rows() {
                let rendered: Vec<String> =
                    row.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
                let _ = writeln!(s, "{}", rendered.join(" "));
            }
        }
        let _ = writeln!(s, "end");
        s
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            bail!("not a {MAGIC} file");
        }
        let seed: u64 = lines
            .next()
            .and_then(|l| l.strip_prefix("seed "))
            .context("missing seed line")?
            .parse()?;
        let dims_line = lines
            .next()
            .and_then(|l| l.strip_prefix("dims "))
            .context("missing dims line")?;
        let mut dims = [0usize; 3];
        for (slot, part) in dims.iter_mut().zip(dims_line.split_whitespace()) {
            let (_, v) = part.split_once('=').context("bad dims entry")?;
            *slot = v.parse()?;
        }
        let cfg = ModelConfig {
            feature_dim: dims[0],
            hidden: dims[1],
            vocab: dims[2],
        };

        let log_var_line = lines
            .next()
            .and_then(|l| l.strip_prefix("log_vars "))
            .context("missing log_vars line")?;
        let mut log_vars = [0.0f64; 3];
        for (slot, tok) in log_vars.iter_mut().zip(log_var_line.split_whitespace()) {
            *slot = f64::from_bits(u64::from_str_radix(tok, 16)?);
        }

        let mut params = ModelParams::zeros(cfg);
        let expected: Vec<&'static str> = params.tensors().iter().map(|(n, _)| *n).collect();
        for name in expected {
            let header = lines.next().context("missing tensor header")?;
            let mut parts = header.split_whitespace();
            if parts.next() != Some("tensor") || parts.next() != Some(name) {
                bail!("expected tensor {name}, got '{header}'");
            }
            let rows: usize = parts.next().context("missing rows")?.parse()?;
            let cols: usize = parts.next().context("missing cols")?.parse()?;
            let mut m = Mat::zeros(rows, cols);
            for r in 0..rows {
                let line = lines.next().context("missing tensor row")?;
                let mut row_vals = m.row_mut(r).iter_mut();
                let mut count = 0;
                for tok in line.split_whitespace() {
                    let slot = row_vals.next().context("too many values in row")?;
                    *slot = f64::from_bits(u64::from_str_radix(tok, 16)?);
                    count += 1;
                }
                if count != cols {
                    bail!("tensor {name} row {r}: expected {cols} values, got {count}");
                }
            }
            set_tensor(&mut params, name, m)?;
        }
        if lines.next() != Some("end") {
            bail!("missing end marker");
        }
        Ok(Self {
            seed,
            params,
            log_vars,
        })
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.render())
            .with_context(|| format!("writing checkpoint {}", path.display()))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading checkpoint {}", path.display()))?;
        Self::parse(&text)
    }
}

fn set_tensor(params: &mut ModelParams, name: &str, m: Mat) -> anyhow::Result<()> {
    let slot = match name {
        "w_in" => &mut params.w_in,
        "w_enc" => &mut params.w_enc,
        "embed" => &mut params.embed,
        "w_dec" => &mut params.w_dec,
        "w_q" => &mut params.w_q,
        "w_k" => &mut params.w_k,
        "w_out" => &mut params.w_out,
        "w_ctc" => &mut params.w_ctc,
        other => bail!("unknown tensor '{other}'"),
    };
    if slot.rows() != m.rows() || slot.cols() != m.cols() {
        bail!(
            "tensor {name}: shape {}x{} does not match dims",
            m.rows(),
            m.cols()
        );
    }
    *slot = m;
    Ok(())
}
