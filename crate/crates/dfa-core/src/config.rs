//! Run configuration: a line-oriented `key = value` text format.
//!
//! Every tunable of a run lives here so that a single file (hashed into
//! reports and bundle manifests) pins the experiment. Unknown keys are hard
//! errors — a typo must never silently fall back to a default.

use crate::cascade::{CascadeSettings, RoutingMode};
use crate::synth::GeneratorConfig;
use crate::trainer::{LossSchedule, ScheduleMode, TrainOptions};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Malformed { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {message}")]
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Full description of one run. All randomness derives from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub image_side: usize,
    pub invisible_rate: f64,
    /// Sampling weights for the five difficulty subsets, in the order
    /// normal / medium pose / large pose / medium zoom / large zoom.
    pub subset_mix: [f64; 5],
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub hidden: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub t1: usize,
    pub t2: usize,
    pub alpha: f64,
    pub beta: f64,
    pub schedule_mode: ScheduleMode,
    pub log_every: usize,
    pub num_clusters: usize,
    pub temperature_px: f64,
    pub epsilon: f64,
    pub routing_mode: RoutingMode,
    pub pdl_threshold_px: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_count: 2000,
            val_count: 400,
            test_count: 400,
            image_side: 64,
            invisible_rate: 0.05,
            subset_mix: [0.30, 0.15, 0.15, 0.20, 0.20],
            conv_channels: vec![8, 16],
            kernel: 3,
            hidden: 128,
            iterations: 6000,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            t1: 2000,
            t2: 4000,
            alpha: 1.0,
            beta: 1.0,
            schedule_mode: ScheduleMode::AsWritten,
            log_every: 100,
            num_clusters: 20,
            temperature_px: 20.0,
            epsilon: 0.3,
            routing_mode: RoutingMode::AutoRouted,
            pdl_threshold_px: 3.0,
        }
    }
}

macro_rules! parse_num {
    ($line:expr, $key:expr, $value:expr, $ty:ty) => {
        $value
            .parse::<$ty>()
            .map_err(|e| ConfigError::BadValue {
                line: $line,
                key: $key.to_string(),
                message: e.to_string(),
            })?
    };
}

impl RunConfig {
    /// Parses a config text, starting from defaults. Lines are
    /// `key = value`; `#` starts a comment; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or(ConfigError::Malformed { line })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            config.apply(line, key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn apply(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::BadValue {
            line,
            key: key.to_string(),
            message,
        };
        match key {
            "seed" => self.seed = parse_num!(line, key, value, u64),
            "dataset.train_count" => self.train_count = parse_num!(line, key, value, usize),
            "dataset.val_count" => self.val_count = parse_num!(line, key, value, usize),
            "dataset.test_count" => self.test_count = parse_num!(line, key, value, usize),
            "dataset.image_side" => self.image_side = parse_num!(line, key, value, usize),
            "dataset.invisible_rate" => {
                self.invisible_rate = parse_num!(line, key, value, f64)
            }
            "dataset.mix_normal" => self.subset_mix[0] = parse_num!(line, key, value, f64),
            "dataset.mix_medium_pose" => self.subset_mix[1] = parse_num!(line, key, value, f64),
            "dataset.mix_large_pose" => self.subset_mix[2] = parse_num!(line, key, value, f64),
            "dataset.mix_medium_zoom" => self.subset_mix[3] = parse_num!(line, key, value, f64),
            "dataset.mix_large_zoom" => self.subset_mix[4] = parse_num!(line, key, value, f64),
            "arch.conv_channels" => {
                let mut channels = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    channels.push(
                        part.parse::<usize>()
                            .map_err(|e| bad(format!("`{part}`: {e}")))?,
                    );
                }
                self.conv_channels = channels;
            }
            "arch.kernel" => self.kernel = parse_num!(line, key, value, usize),
            "arch.hidden" => self.hidden = parse_num!(line, key, value, usize),
            "train.iterations" => self.iterations = parse_num!(line, key, value, usize),
            "train.batch_size" => self.batch_size = parse_num!(line, key, value, usize),
            "train.learning_rate" => self.learning_rate = parse_num!(line, key, value, f64),
            "train.momentum" => self.momentum = parse_num!(line, key, value, f64),
            "train.t1" => self.t1 = parse_num!(line, key, value, usize),
            "train.t2" => self.t2 = parse_num!(line, key, value, usize),
            "train.alpha" => self.alpha = parse_num!(line, key, value, f64),
            "train.beta" => self.beta = parse_num!(line, key, value, f64),
            "train.schedule" => {
                self.schedule_mode = ScheduleMode::parse(value)
                    .ok_or_else(|| bad("expected `as-written` or `decay`".into()))?
            }
            "train.log_every" => self.log_every = parse_num!(line, key, value, usize),
            "cascade.clusters" => self.num_clusters = parse_num!(line, key, value, usize),
            "cascade.temperature_px" => {
                self.temperature_px = parse_num!(line, key, value, f64)
            }
            "cascade.epsilon" => self.epsilon = parse_num!(line, key, value, f64),
            "cascade.routing" => {
                self.routing_mode = RoutingMode::parse(value)
                    .ok_or_else(|| bad("expected `auto-routed` or `two-branch-average`".into()))?
            }
            "eval.pdl_threshold_px" => {
                self.pdl_threshold_px = parse_num!(line, key, value, f64)
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.train_count == 0 || self.val_count == 0 || self.test_count == 0 {
            return fail("dataset counts must be at least 1");
        }
        if self.image_side < 32 {
            return fail("image side must be at least 32");
        }
        if !(0.0..=1.0).contains(&self.invisible_rate) {
            return fail("invisible rate must lie in [0, 1]");
        }
        if self.subset_mix.iter().any(|w| !(*w >= 0.0)) || self.subset_mix.iter().sum::<f64>() <= 0.0
        {
            return fail("subset mix needs nonnegative weights with positive sum");
        }
        if self.conv_channels.is_empty() {
            return fail("at least one conv layer is required");
        }
        if self.iterations == 0 || self.batch_size == 0 || self.log_every == 0 {
            return fail("iterations, batch size, and log cadence must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if self.t1 == 0 || self.t1 >= self.t2 {
            return fail("schedule breakpoints must satisfy 0 < t1 < t2");
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return fail("loss weights must be nonnegative");
        }
        if self.num_clusters == 0 {
            return fail("cluster count must be at least 1");
        }
        if !(self.temperature_px > 0.0 && self.temperature_px.is_finite()) {
            return fail("temperature must be positive and finite");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return fail("routing threshold must be nonnegative and finite");
        }
        if !(self.pdl_threshold_px > 0.0 && self.pdl_threshold_px.is_finite()) {
            return fail("detection threshold must be positive and finite");
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text(c)) == c` for any valid config.
    pub fn to_text(&self) -> String {
        let channels = self
            .conv_channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "seed = {}\n\
             dataset.train_count = {}\n\
             dataset.val_count = {}\n\
             dataset.test_count = {}\n\
             dataset.image_side = {}\n\
             dataset.invisible_rate = {}\n\
             dataset.mix_normal = {}\n\
             dataset.mix_medium_pose = {}\n\
             dataset.mix_large_pose = {}\n\
             dataset.mix_medium_zoom = {}\n\
             dataset.mix_large_zoom = {}\n\
             arch.conv_channels = {}\n\
             arch.kernel = {}\n\
             arch.hidden = {}\n\
             train.iterations = {}\n\
             train.batch_size = {}\n\
             train.learning_rate = {}\n\
             train.momentum = {}\n\
             train.t1 = {}\n\
             train.t2 = {}\n\
             train.alpha = {}\n\
             train.beta = {}\n\
             train.schedule = {}\n\
             train.log_every = {}\n\
             cascade.clusters = {}\n\
             cascade.temperature_px = {}\n\
             cascade.epsilon = {}\n\
             cascade.routing = {}\n\
             eval.pdl_threshold_px = {}\n",
            self.seed,
            self.train_count,
            self.val_count,
            self.test_count,
            self.image_side,
            self.invisible_rate,
            self.subset_mix[0],
            self.subset_mix[1],
            self.subset_mix[2],
            self.subset_mix[3],
            self.subset_mix[4],
            channels,
            self.kernel,
            self.hidden,
            self.iterations,
            self.batch_size,
            self.learning_rate,
            self.momentum,
            self.t1,
            self.t2,
            self.alpha,
            self.beta,
            self.schedule_mode.as_str(),
            self.log_every,
            self.num_clusters,
            self.temperature_px,
            self.epsilon,
            self.routing_mode.as_str(),
            self.pdl_threshold_px,
        )
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Generator settings for a split of `count` samples.
    pub fn generator(&self, count: usize) -> GeneratorConfig {
        GeneratorConfig {
            count,
            image_side: self.image_side,
            invisible_rate: self.invisible_rate,
            subset_mix: self.subset_mix,
            ..GeneratorConfig::default()
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            iterations: self.iterations,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            schedule: LossSchedule {
                alpha: self.alpha,
                beta: self.beta,
                t1: self.t1,
                t2: self.t2,
            },
            mode: self.schedule_mode,
            use_visibility: true,
            use_pseudolabels: true,
            log_every: self.log_every,
        }
    }

    pub fn cascade_settings(&self) -> CascadeSettings {
        CascadeSettings {
            conv_channels: self.conv_channels.clone(),
            kernel: self.kernel,
            hidden: self.hidden,
            num_clusters: self.num_clusters,
            temperature_px: self.temperature_px,
            epsilon: self.epsilon,
            train: self.train_options(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip() {
        let config = RunConfig::default();
        let parsed = RunConfig::parse(&config.to_text()).unwrap();
        assert_eq!(config, parsed);
    }

    #[test]
    fn comments_blanks_and_overrides_parse() {
        let text = "\n# a comment\nseed = 9\ntrain.iterations = 50 # trailing comment\n\narch.conv_channels = 4, 8,16\n";
        let config = RunConfig::parse(text).unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.iterations, 50);
        assert_eq!(config.conv_channels, vec![4, 8, 16]);
        assert_eq!(config.hidden, RunConfig::default().hidden);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let err = RunConfig::parse("train.iteratons = 50\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, key } => {
                assert_eq!(line, 1);
                assert_eq!(key, "train.iteratons");
            }
            other => panic!("expected unknown-key error, got {other}"),
        }
    }

    #[test]
    fn duplicates_and_malformed_lines_are_rejected() {
        assert!(matches!(
            RunConfig::parse("seed = 1\nseed = 2\n"),
            Err(ConfigError::DuplicateKey { line: 2, .. })
        ));
        assert!(matches!(
            RunConfig::parse("just some text\n"),
            Err(ConfigError::Malformed { line: 1 })
        ));
        assert!(matches!(
            RunConfig::parse("seed = banana\n"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn semantic_validation_fires() {
        assert!(RunConfig::parse("train.t1 = 500\ntrain.t2 = 400\n").is_err());
        assert!(RunConfig::parse("dataset.image_side = 16\n").is_err());
        assert!(RunConfig::parse("train.momentum = 1.0\n").is_err());
        assert!(RunConfig::parse("cascade.epsilon = -0.1\n").is_err());
        assert!(RunConfig::parse("train.schedule = sometimes\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    proptest! {
        #[test]
        fn arbitrary_valid_configs_round_trip(
            seed in any::<u64>(),
            lr in 1e-4f64..1.0,
            t1 in 1usize..5000,
            span in 1usize..5000,
            alpha in 0.0f64..3.0,
            temperature in 0.5f64..50.0,
            batch in 1usize..64,
        ) {
            let mut config = RunConfig {
                seed,
                learning_rate: lr,
                t1,
                t2: t1 + span,
                alpha,
                temperature_px: temperature,
                batch_size: batch,
                ..RunConfig::default()
            };
            config.iterations = t1 + span + 10;
            let parsed = RunConfig::parse(&config.to_text()).unwrap();
            prop_assert_eq!(config, parsed);
        }
    }
}
