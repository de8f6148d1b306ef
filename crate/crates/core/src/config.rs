//! Run configuration: one JSON document with the robots, randomization,
//! trainer, reward, evaluation and environment blocks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalConfig;
use crate::randomization::DrConfig;
use crate::robot_model::{generate_walker, parse_model, ModelError, ParseOptions, RobotModel, WalkerFamily};
use crate::sim::{EnvConfig, RewardConfig};
use crate::trainer::TrainerConfig;
use crate::unified_space::build_mapping;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("robot {index}: {source}")]
    Robot { index: usize, source: ModelError },
}

/// Where a training robot comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RobotSource {
    /// Robot file, relative paths resolved against the config directory.
    File(PathBuf),
    Generate { family: WalkerFamily, seed: u64 },
}

impl RobotSource {
    pub fn load(&self, base_dir: &Path) -> Result<RobotModel, ModelError> {
        match self {
            RobotSource::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                parse_model(&path, ParseOptions::default())
            }
            RobotSource::Generate { family, seed } => generate_walker(family, *seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub robots: Vec<RobotSource>,
    #[serde(default)]
    pub dr: DrConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub env: EnvConfig,
}

/// The three generated walkers used by both presets.
pub fn preset_robots() -> Vec<RobotSource> {
    vec![
        RobotSource::Generate {
            family: WalkerFamily::biped(),
            seed: 1,
        },
        RobotSource::Generate {
            family: WalkerFamily::quadruped_pair(3),
            seed: 2,
        },
        RobotSource::Generate {
            family: WalkerFamily::quadruped_pair(2),
            seed: 3,
        },
    ]
}

impl RunConfig {
    /// 256 envs, 2000 epochs.
    pub fn desk_scale() -> Self {
        RunConfig {
            robots: preset_robots(),
            dr: DrConfig::default(),
            trainer: TrainerConfig::default(),
            reward: RewardConfig::default(),
            eval: EvalConfig::default(),
            env: EnvConfig::default(),
        }
    }

    /// 8192 envs, 50000 epochs.
    pub fn paper_scale() -> Self {
        let mut c = Self::desk_scale();
        c.trainer.num_envs = 8192;
        c.trainer.epochs = 50_000;
        c.trainer.checkpoint_every = 1000;
        c
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk_scale" => Some(Self::desk_scale()),
            "paper_scale" => Some(Self::paper_scale()),
            _ => None,
        }
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.robots.is_empty() {
            return Err(ConfigError::Invalid("robots must list at least one embodiment".into()));
        }
        self.dr.validate().map_err(ConfigError::Invalid)?;
        self.trainer.validate().map_err(ConfigError::Invalid)?;
        self.reward.validate().map_err(ConfigError::Invalid)?;
        self.eval.validate().map_err(ConfigError::Invalid)?;
        self.env.validate().map_err(ConfigError::Invalid)?;
        if self.trainer.num_envs < self.robots.len() {
            return Err(ConfigError::Invalid(format!(
                "{} envs cannot cover {} robots",
                self.trainer.num_envs,
                self.robots.len()
            )));
        }
        Ok(())
    }

    /// Loads every robot and checks that it maps into the roster and that
    /// names are unique.
    pub fn resolve_robots(&self, base_dir: &Path) -> Result<Vec<RobotModel>, ConfigError> {
        let mut out: Vec<RobotModel> = Vec::with_capacity(self.robots.len());
        for (index, src) in self.robots.iter().enumerate() {
            let m = src.load(base_dir).map_err(|source| ConfigError::Robot { index, source })?;
            build_mapping(&m).map_err(|source| ConfigError::Robot { index, source })?;
            if out.iter().any(|o| o.name == m.name) {
                return Err(ConfigError::Invalid(format!("duplicate robot name {}", m.name)));
            }
            out.push(m);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for c in [RunConfig::desk_scale(), RunConfig::paper_scale()] {
            let back = RunConfig::from_json(&c.to_json(), "mem").unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn minimal_document_fills_defaults() {
        let c = RunConfig::from_json(
            r#"{"robots": [{"generate": {"family": {"kind": "biped", "segments_per_leg": 3}, "seed": 4}}]}"#,
            "mem",
        )
        .unwrap();
        assert_eq!(c.trainer, TrainerConfig::default());
        assert_eq!(c.resolve_robots(Path::new(".")).unwrap().len(), 1);
    }

    #[test]
    fn unknown_fields_and_empty_rosters_fail() {
        assert!(RunConfig::from_json(r#"{"robots": [], "extra": 1}"#, "mem").is_err());
        assert!(matches!(
            RunConfig::from_json(r#"{"robots": []}"#, "mem"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn preset_robots_have_distinct_names() {
        let r = RunConfig::desk_scale().resolve_robots(Path::new(".")).unwrap();
        assert_eq!(r.len(), 3);
    }
}
