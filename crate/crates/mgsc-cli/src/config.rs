//! Flat `key = value` experiment configuration with printable defaults.

use anyhow::{bail, Context};
use std::fmt::Write as _;
use std::path::Path;

use mgsc_core::balancer::BalancerMode;
use mgsc_core::data::{Condition, TaskConfig};
use mgsc_core::model::{ModelConfig, Optimizer, Variant};

/// Everything `run` needs: the task, model dims, objective variants,
/// optimization settings, seeds and evaluation conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub test_count: usize,
    pub hidden: usize,
    pub variants: Vec<Variant>,
    pub balancer_mode: BalancerMode,
    pub lambda_sent: f64,
    pub lambda_align: f64,
    pub ctc_weight: f64,
    pub optimizer: Optimizer,
    pub lr: f64,
    /// Fraction of `lr` reached by linear decay at the final step;
    /// 1.0 keeps the rate constant.
    pub final_lr_frac: f64,
    /// Consistency weights ramp linearly from zero to their configured
    /// values over this many initial steps.
    pub lambda_warmup_steps: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub train_condition: Condition,
    /// Stationary (across-frame) share of noise power for all conditions.
    pub noise_stationary_share: f64,
    pub conditions: Vec<Condition>,
    pub decode_margin: usize,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig {
                vocab: 6,
                len_range: (3, 6),
                dur_range: (1, 3),
                feature_dim: 8,
                count: 64,
                jitter: 0.01,
            },
            test_count: 48,
            hidden: 16,
            variants: Variant::ALL.to_vec(),
            balancer_mode: BalancerMode::Fixed,
            lambda_sent: 0.1,
            lambda_align: 0.1,
            ctc_weight: 0.3,
            optimizer: Optimizer::adam(),
            lr: 0.01,
            final_lr_frac: 1.0,
            lambda_warmup_steps: 400,
            steps: 400,
            batch_size: 8,
            train_condition: Condition::Clean,
            noise_stationary_share: mgsc_core::data::DEFAULT_STATIONARY_SHARE,
            conditions: vec![
                Condition::Clean,
                Condition::SnrDb(0.0),
                Condition::SnrDb(2.5),
                Condition::SnrDb(5.0),
                Condition::SnrDb(7.5),
                Condition::SnrDb(10.0),
            ],
            decode_margin: 2,
            seeds: vec![1, 2, 3, 4, 5, 6, 7],
        }
    }
}

impl ExperimentConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: self.task.feature_dim,
            hidden: self.hidden,
            // content symbols plus the reserved end symbol
            vocab: self.task.vocab + 1,
        }
    }

    /// Greedy-decode budget: longest possible target plus slack.
    pub fn decode_max_len(&self) -> usize {
        self.task.len_range.1 + self.decode_margin
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must be non-empty");
        }
        if self.variants.is_empty() {
            bail!("variants must be non-empty");
        }
        if self.conditions.is_empty() {
            bail!("conditions must be non-empty");
        }
        if self.batch_size == 0 || self.steps == 0 {
            bail!("train.steps and train.batch_size must be positive");
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    /// Parses overrides of the defaults. Unknown keys are an error so typos
    /// cannot silently fall back.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value", lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)
                .with_context(|| format!("line {}: key '{}'", lineno + 1, key))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        match key {
            "task.vocab" => self.task.vocab = value.parse()?,
            "task.len_min" => self.task.len_range.0 = value.parse()?,
            "task.len_max" => self.task.len_range.1 = value.parse()?,
            "task.dur_min" => self.task.dur_range.0 = value.parse()?,
            "task.dur_max" => self.task.dur_range.1 = value.parse()?,
            "task.feature_dim" => self.task.feature_dim = value.parse()?,
            "task.jitter" => self.task.jitter = value.parse()?,
            "task.train_count" => self.task.count = value.parse()?,
            "task.test_count" => self.test_count = value.parse()?,
            "model.hidden" => self.hidden = value.parse()?,
            "objective.ctc_weight" => self.ctc_weight = value.parse()?,
            "objective.variants" => {
                self.variants = value
                    .split(',')
                    .map(|v| Variant::parse(v.trim()).map_err(anyhow::Error::from))
                    .collect::<anyhow::Result<_>>()?;
            }
            "balancer.mode" => {
                self.balancer_mode = match value {
                    "fixed" => BalancerMode::Fixed,
                    "uncertainty" => BalancerMode::Uncertainty,
                    other => bail!("unknown balancer mode '{other}'"),
                };
            }
            "balancer.lambda_sent" => self.lambda_sent = value.parse()?,
            "balancer.lambda_align" => self.lambda_align = value.parse()?,
            "optim.algo" => {
                self.optimizer = match value {
                    "adam" => Optimizer::adam(),
                    "sgd" => Optimizer::Sgd,
                    other => bail!("unknown optimizer '{other}'"),
                };
            }
            "optim.lr" => self.lr = value.parse()?,
            "optim.final_lr_frac" => self.final_lr_frac = value.parse()?,
            "train.lambda_warmup_steps" => self.lambda_warmup_steps = value.parse()?,
            "train.steps" => self.steps = value.parse()?,
            "train.batch_size" => self.batch_size = value.parse()?,
            "train.condition" => self.train_condition = Condition::parse(value)?,
            "task.noise_stationary_share" => self.noise_stationary_share = value.parse()?,
            "eval.conditions" => {
                self.conditions = value
                    .split(',')
                    .map(|c| Condition::parse(c.trim()).map_err(anyhow::Error::from))
                    .collect::<anyhow::Result<_>>()?;
            }
            "eval.decode_margin" => self.decode_margin = value.parse()?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse::<u64>().map_err(anyhow::Error::from))
                    .collect::<anyhow::Result<_>>()?;
            }
            other => bail!("unknown config key '{other}'"),
        }
        Ok(())
    }

    /// Renders the configuration in the same `key = value` format `parse`
    /// accepts.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# synthetic task");
        let _ = writeln!(s, "task.vocab = {}", self.task.vocab);
        let _ = writeln!(s, "task.len_min = {}", self.task.len_range.0);
        let _ = writeln!(s, "task.len_max = {}", self.task.len_range.1);
        let _ = writeln!(s, "task.dur_min = {}", self.task.dur_range.0);
        let _ = writeln!(s, "task.dur_max = {}", self.task.dur_range.1);
        let _ = writeln!(s, "task.feature_dim = {}", self.task.feature_dim);
        let _ = writeln!(s, "task.jitter = {}", self.task.jitter);
        let _ = writeln!(s, "task.noise_stationary_share = {}", self.noise_stationary_share);
        let _ = writeln!(s, "task.train_count = {}", self.task.count);
        let _ = writeln!(s, "task.test_count = {}", self.test_count);
        let _ = writeln!(s, "# model");
        let _ = writeln!(s, "model.hidden = {}", self.hidden);
        let _ = writeln!(s, "# objective");
        let _ = writeln!(s, "objective.ctc_weight = {}", self.ctc_weight);
        let variants: Vec<&str> = self.variants.iter().map(|v| v.name()).collect();
        let _ = writeln!(s, "objective.variants = {}", variants.join(","));
        let mode = match self.balancer_mode {
            BalancerMode::Fixed => "fixed",
            BalancerMode::Uncertainty => "uncertainty",
        };
        let _ = writeln!(s, "balancer.mode = {mode}");
        let _ = writeln!(s, "balancer.lambda_sent = {}", self.lambda_sent);
        let _ = writeln!(s, "balancer.lambda_align = {}", self.lambda_align);
        let _ = writeln!(s, "# optimization");
        let algo = match self.optimizer {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        };
        let _ = writeln!(s, "optim.algo = {algo}");
        let _ = writeln!(s, "optim.lr = {}", self.lr);
        let _ = writeln!(s, "optim.final_lr_frac = {}", self.final_lr_frac);
        let _ = writeln!(s, "train.steps = {}", self.steps);
        let _ = writeln!(s, "train.batch_size = {}", self.batch_size);
        let _ = writeln!(s, "train.lambda_warmup_steps = {}", self.lambda_warmup_steps);
        let _ = writeln!(s, "train.condition = {}", self.train_condition);
        let _ = writeln!(s, "# evaluation");
        let conditions: Vec<String> = self.conditions.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "eval.conditions = {}", conditions.join(","));
        let _ = writeln!(s, "eval.decode_margin = {}", self.decode_margin);
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        s
    }
}
