//! Flat `key = value` run configuration with `#` comments. Unknown keys are
//! hard errors, and validation reports every bad key at once.

use std::fmt;
use std::path::PathBuf;

use htrc_core::model::ModelConfig;
use htrc_core::train::{AdamHyper, TrainSchedule};

#[derive(Debug)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid config ({} problem(s)):", self.problems.len())?;
        for p in &self.problems {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub labelmap: Option<PathBuf>,
    pub conv_blocks: Vec<(usize, usize)>,
    pub dense_units: Vec<usize>,
    pub dropout_p: f64,
    pub classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub log_every: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub init_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            images: None,
            labels: None,
            split: None,
            labelmap: None,
            conv_blocks: vec![(8, 5), (16, 3), (32, 3)],
            dense_units: vec![64],
            dropout_p: 0.25,
            classes: 47,
            epochs: 20,
            batch_size: 200,
            shuffle_seed: 0,
            log_every: 1,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_seed: 0,
        }
    }
}

fn parse_blocks(value: &str, key: &str, problems: &mut Vec<String>) -> Vec<(usize, usize)> {
    if value.is_empty() || value == "none" {
        return Vec::new();
    }
    let mut out = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        let parsed = part
            .split_once('x')
            .and_then(|(f, k)| Some((f.trim().parse().ok()?, k.trim().parse().ok()?)));
        match parsed {
            Some(pair) => out.push(pair),
            None => problems.push(format!(
                "{key}: expected FILTERSxKERNEL entries like 8x5, got {part:?}"
            )),
        }
    }
    out
}

fn parse_units(value: &str, key: &str, problems: &mut Vec<String>) -> Vec<usize> {
    if value.is_empty() || value == "none" {
        return Vec::new();
    }
    let mut out = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        match part.parse() {
            Ok(v) => out.push(v),
            Err(_) => problems.push(format!("{key}: expected an integer, got {part:?}")),
        }
    }
    out
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        let mut problems = Vec::new();

        for (ln, raw_line) in text.lines().enumerate() {
            let line = match raw_line.split_once('#') {
                Some((before, _)) => before.trim(),
                None => raw_line.trim(),
            };
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!(
                    "line {}: expected key = value, got {line:?}",
                    ln + 1
                ));
                continue;
            };
            let key = key.trim();
            let value = value.trim();

            macro_rules! parse_into {
                ($field:expr, $what:literal) => {
                    match value.parse() {
                        Ok(v) => $field = v,
                        Err(_) => {
                            problems.push(format!("{key}: expected {}, got {value:?}", $what))
                        }
                    }
                };
            }

            match key {
                "images" => config.images = Some(PathBuf::from(value)),
                "labels" => config.labels = Some(PathBuf::from(value)),
                "split" => config.split = Some(PathBuf::from(value)),
                "labelmap" => config.labelmap = Some(PathBuf::from(value)),
                "conv_blocks" => config.conv_blocks = parse_blocks(value, key, &mut problems),
                "dense_units" => config.dense_units = parse_units(value, key, &mut problems),
                "dropout_p" => parse_into!(config.dropout_p, "a real in [0,1)"),
                "classes" => parse_into!(config.classes, "an integer >= 2"),
                "epochs" => parse_into!(config.epochs, "an integer >= 1"),
                "batch_size" => parse_into!(config.batch_size, "an integer >= 1"),
                "shuffle_seed" => parse_into!(config.shuffle_seed, "an integer"),
                "log_every" => parse_into!(config.log_every, "an integer >= 1"),
                "learning_rate" => parse_into!(config.learning_rate, "a real >= 0"),
                "beta1" => parse_into!(config.beta1, "a real in [0,1)"),
                "beta2" => parse_into!(config.beta2, "a real in [0,1)"),
                "epsilon" => parse_into!(config.epsilon, "a positive real"),
                "init_seed" => parse_into!(config.init_seed, "an integer"),
                other => problems.push(format!("unknown key {other:?}")),
            }
        }

        // Range checks, reported together with the syntax problems.
        if config.epochs < 1 {
            problems.push(format!("epochs: must be >= 1, got {}", config.epochs));
        }
        if config.batch_size < 1 {
            problems.push(format!(
                "batch_size: must be >= 1, got {}",
                config.batch_size
            ));
        }
        if config.log_every < 1 {
            problems.push(format!("log_every: must be >= 1, got {}", config.log_every));
        }
        if config.classes < 2 {
            problems.push(format!("classes: must be >= 2, got {}", config.classes));
        }
        if !(0.0..1.0).contains(&config.dropout_p) {
            problems.push(format!(
                "dropout_p: must be in [0,1), got {}",
                config.dropout_p
            ));
        }
        if config.learning_rate < 0.0 {
            problems.push(format!(
                "learning_rate: must be >= 0, got {}",
                config.learning_rate
            ));
        }
        for (name, beta) in [("beta1", config.beta1), ("beta2", config.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                problems.push(format!("{name}: must be in [0,1), got {beta}"));
            }
        }
        if config.epsilon <= 0.0 {
            problems.push(format!("epsilon: must be positive, got {}", config.epsilon));
        }

        if problems.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError { problems })
        }
    }

    pub fn model_config(&self, input: (usize, usize, usize)) -> ModelConfig {
        ModelConfig {
            input,
            conv_blocks: self.conv_blocks.clone(),
            dense_units: self.dense_units.clone(),
            dropout_p: self.dropout_p,
            classes: self.classes,
        }
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            batch_size: self.batch_size,
            shuffle_seed: self.shuffle_seed,
            log_every: self.log_every,
        }
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}
