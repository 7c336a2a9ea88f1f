//! End-to-end tests of the binary surface and the on-disk formats.

use std::path::Path;
use std::process::Command;

use mgsc_cli::checkpoint::Checkpoint;
use mgsc_cli::config::ExperimentConfig;
use mgsc_cli::dumps::{dump_attention, dump_representations};
use mgsc_cli::experiment::{run_ablation, run_single};
use mgsc_core::data::Condition;
use mgsc_core::model::Variant;

fn mgsc_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mgsc"))
}

fn tiny_config_text() -> &'static str {
    "task.train_count = 10\ntask.test_count = 5\ntrain.steps = 8\n\
     model.hidden = 8\nseeds = 1\neval.conditions = clean,0\n"
}

#[test]
fn print_defaults_round_trips() {
    let out = mgsc_bin()
        .args(["run", "--print-defaults"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed = ExperimentConfig::parse(&text).unwrap();
    assert_eq!(parsed, ExperimentConfig::default());
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.txt");
    std::fs::write(&cfg_path, tiny_config_text()).unwrap();
    let out_dir = dir.path().join("out");
    let out = mgsc_bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in ["report.csv", "report.txt", "reduction.csv", "metrics.csv"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
    let report = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(report.starts_with("variant,condition,cer\n"));
    for variant in ["baseline", "align", "sentence", "mgsc"] {
        assert!(out_dir
            .join("runs")
            .join(format!("{variant}_s1"))
            .join("checkpoint.txt")
            .exists());
        assert!(out_dir
            .join("runs")
            .join(format!("{variant}_s1"))
            .join("losses.csv")
            .exists());
    }
}

#[test]
fn seed_flag_overrides_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.txt");
    std::fs::write(
        &cfg_path,
        "task.train_count = 10\ntask.test_count = 5\ntrain.steps = 4\n\
         model.hidden = 8\nseeds = 1,2,3\neval.conditions = clean\n\
         objective.variants = baseline\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = mgsc_bin()
        .args(["run", "--seed", "9", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(out_dir.join("runs").join("baseline_s9").exists());
    assert!(!out_dir.join("runs").join("baseline_s1").exists());
}

#[test]
fn gradcheck_and_ctc_oracle_subcommands_pass() {
    let out = mgsc_bin().args(["gradcheck", "--seed", "3"]).output().unwrap();
    assert!(
        out.status.success(),
        "gradcheck failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("end_to_end_mgsc"));

    let out = mgsc_bin()
        .args(["ctc-oracle", "--instances", "30", "--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("matches enumeration"));
}

fn trained_checkpoint(dir: &Path) -> (Checkpoint, ExperimentConfig) {
    let cfg = ExperimentConfig::parse(tiny_config_text()).unwrap();
    let outcome = run_single(&cfg, Variant::Mgsc, 1).unwrap();
    let path = dir.join("ckpt.txt");
    outcome.checkpoint.save(&path).unwrap();
    (Checkpoint::load(&path).unwrap(), cfg)
}

#[test]
fn attention_dump_shape_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cfg) = trained_checkpoint(dir.path());
    let files = dump_attention(&ckpt, &cfg, Condition::Clean, 2, &dir.path().join("attn")).unwrap();
    assert_eq!(files.len(), 2);

    for file in &files {
        let text = std::fs::read_to_string(file).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("# t_out="));
        let t_out: usize = header
            .split("t_out=")
            .nth(1)
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap();
        let t_in: usize = header
            .split("t_in=")
            .nth(1)
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap();
        let path_line = lines.next().unwrap();
        assert!(path_line.starts_with("# path="));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), t_out);
        for row in rows {
            let values: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(values.len(), t_in);
            let sum: f64 = values.iter().sum();
            assert!((sum - 1.0).abs() < 1e-3, "row sums to {sum}");
        }
    }
}

#[test]
fn attention_dump_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cfg) = trained_checkpoint(dir.path());
    let a = dump_attention(&ckpt, &cfg, Condition::SnrDb(0.0), 1, &dir.path().join("a")).unwrap();
    let b = dump_attention(&ckpt, &cfg, Condition::SnrDb(0.0), 1, &dir.path().join("b")).unwrap();
    assert_eq!(
        std::fs::read(&a[0]).unwrap(),
        std::fs::read(&b[0]).unwrap()
    );
}

#[test]
fn representation_dump_shape_and_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cfg) = trained_checkpoint(dir.path());
    let file = dump_representations(&ckpt, &cfg, Condition::Clean, 5, &dir.path().join("repr"))
        .unwrap();
    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let d = cfg.hidden;
    assert_eq!(header.split(',').count(), 2 * d + 1);

    let mut count = 0;
    for line in lines {
        let values: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), 2 * d + 1);
        // The gap column must equal 1 - cos recomputed from the vectors.
        let (m_enc, rest) = values.split_at(d);
        let (m_dec, gap) = rest.split_at(d);
        let dot: f64 = m_enc.iter().zip(m_dec).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let recomputed = 1.0 - dot / (norm(m_enc) * norm(m_dec));
        assert!((gap[0] - recomputed).abs() < 1e-12);
        count += 1;
    }
    assert_eq!(count, 5);
}

#[test]
fn sentence_trained_checkpoint_closes_the_gap() {
    let cfg = ExperimentConfig::parse(
        "task.train_count = 24\ntask.test_count = 8\ntrain.steps = 150\n\
         model.hidden = 8\nseeds = 2\neval.conditions = clean\n",
    )
    .unwrap();
    let baseline = run_single(&cfg, Variant::Baseline, 2).unwrap();
    let sentence = run_single(&cfg, Variant::Sentence, 2).unwrap();
    assert!(
        sentence.representation_gap[0] < baseline.representation_gap[0],
        "sentence gap {} !< baseline gap {}",
        sentence.representation_gap[0],
        baseline.representation_gap[0]
    );
}

#[test]
fn failed_runs_are_recorded_not_fatal() {
    // A divergent learning rate makes some runs blow up; they must land in
    // failed_runs while the report is still produced for the others.
    let cfg = ExperimentConfig::parse(
        "task.train_count = 10\ntask.test_count = 5\ntrain.steps = 40\n\
         model.hidden = 8\nseeds = 1,2,3\neval.conditions = clean\n\
         objective.variants = baseline\noptim.algo = sgd\noptim.lr = 1e6\n",
    )
    .unwrap();
    match run_ablation(&cfg, None) {
        Ok(report) => assert!(!report.failed_runs.is_empty()),
        // If every seed diverges the report cannot be formed at all.
        Err(err) => assert!(err.to_string().contains("failed")),
    }
}
