//! Command-line runner: the ablation experiment, checkpoint dumps, and the
//! numerical verification suites.

use anyhow::bail;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

use mgsc_cli::checkpoint::Checkpoint;
use mgsc_cli::config::ExperimentConfig;
use mgsc_cli::{dumps, experiment, report};
use mgsc_core::check;
use mgsc_core::data::Condition;

#[derive(Parser)]
#[command(name = "mgsc", version, about = "Consistency-regularized transduction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the ablation variants across seeds and write the CER report.
    Run {
        /// Experiment config file (key = value); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for reports, checkpoints and logs.
        #[arg(long, default_value = "runs/ablation")]
        out: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the default configuration and exit.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Dump free-running attention maps from a checkpoint.
    DumpAttn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "dumps/attn")]
        out: PathBuf,
        /// Number of test samples to dump.
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Condition: `clean` or an SNR in dB.
        #[arg(long, default_value = "0")]
        snr: String,
        /// Regenerate the dataset from this seed instead of the
        /// checkpoint's own.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dump pooled encoder/decoder representations from a checkpoint.
    DumpRepr {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "dumps/repr")]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value = "clean")]
        snr: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the finite-difference gradient suites and print max errors.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Check the CTC forward DP against brute-force path enumeration.
    CtcOracle {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_checkpoint_setup(
    ckpt: &PathBuf,
    config: &Option<PathBuf>,
    seed: &Option<u64>,
    snr: &str,
) -> anyhow::Result<(Checkpoint, ExperimentConfig, Condition)> {
    let mut checkpoint = Checkpoint::load(ckpt)?;
    if let Some(s) = seed {
        checkpoint.seed = *s;
    }
    let cfg = load_config(config)?;
    let condition = Condition::parse(snr)?;
    Ok((checkpoint, cfg, condition))
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seed,
            print_defaults,
        } => {
            if print_defaults {
                print!("{}", ExperimentConfig::default().render());
                return Ok(());
            }
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let report = experiment::run_ablation(&cfg, Some(&out))?;
            print!("{}", report::report_table(&report));
            println!("report written to {}", out.display());
        }
        Command::DumpAttn {
            ckpt,
            config,
            out,
            count,
            snr,
            seed,
        } => {
            let (checkpoint, cfg, condition) =
                load_checkpoint_setup(&ckpt, &config, &seed, &snr)?;
            let files = dumps::dump_attention(&checkpoint, &cfg, condition, count, &out)?;
            println!("wrote {} attention dumps to {}", files.len(), out.display());
        }
        Command::DumpRepr {
            ckpt,
            config,
            out,
            count,
            snr,
            seed,
        } => {
            let (checkpoint, cfg, condition) =
                load_checkpoint_setup(&ckpt, &config, &seed, &snr)?;
            let file = dumps::dump_representations(&checkpoint, &cfg, condition, count, &out)?;
            println!("wrote {}", file.display());
        }
        Command::Gradcheck { seed } => {
            let results = check::run_all_gradchecks(seed);
            println!("{:<26}{:>8}{:>14}", "suite", "points", "max_rel_err");
            let mut worst = 0.0f64;
            for r in &results {
                println!("{:<26}{:>8}{:>14.3e}", r.name, r.points, r.max_rel_error);
                worst = worst.max(r.max_rel_error);
            }
            if worst >= 1e-4 {
                bail!("gradient check failed: max relative error {worst:.3e} >= 1e-4");
            }
            println!("all gradients match finite differences (max {worst:.3e} < 1e-4)");
        }
        Command::CtcOracle { seed, instances } => {
            let outcome = check::ctc_enumeration_check(instances, seed);
            println!(
                "{} instances, max |dp - enumeration| = {:.3e}",
                outcome.instances, outcome.max_abs_diff
            );
            let lp = mgsc_core::Mat::from_fn(3, 2, |_, _| (0.5f64).ln());
            let analytic = mgsc_core::asr::ctc_loss(&lp, &[1], 0)?.value;
            println!(
                "uniform t=3 two-class case: dp = {analytic:.12}, expected -ln(6/8) = {:.12}",
                -(0.75f64).ln()
            );
            if outcome.max_abs_diff >= 1e-9 || (analytic + (0.75f64).ln()).abs() >= 1e-12 {
                bail!("CTC oracle failed");
            }
            println!("forward DP matches enumeration (< 1e-9)");
        }
    }
    Ok(())
}
