//! Run configuration: TOML files with strict key checking, dotted-path
//! overrides, the resolved-config fingerprint embedded in artifacts, and
//! atomic file writes shared by every artifact producer.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::policy::PpoConfig;
use crate::reward::RewardWeights;
use crate::sched::CurriculumConfig;
use crate::sim::PhysicsParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config validation error: {0}")]
    Validation(String),
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Current config format revision accepted by [`RunConfig::validate`].
pub const SCHEMA_VERSION: u32 = 1;

/// Every tunable in one place. Unknown keys are rejected so typos cannot
/// silently fall back to defaults; the fully resolved table is logged with
/// each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Config format revision; bumped if keys ever change incompatibly.
    pub schema_version: u32,
    /// Root seed; every random stream is derived from it.
    pub seed: u64,
    pub paths: PathsConfig,
    pub physics: PhysicsParams,
    pub rewards: RewardWeights,
    pub curriculum: CurriculumConfig,
    pub ppo: PpoConfig,
    pub train: TrainConfig,
    pub observation: ObservationConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Reference clip files consumed by training/evaluation.
    pub clips: Vec<PathBuf>,
    /// Hand-model description file.
    pub hand_model: PathBuf,
    /// Directory receiving checkpoints, logs, and reports.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            clips: Vec::new(),
            hand_model: PathBuf::new(),
            out_dir: PathBuf::from("artifacts"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Parallel simulation environments.
    pub envs: usize,
    /// Total PPO updates for the run.
    pub updates: usize,
    /// Checkpoint cadence in updates (0 = final only).
    pub checkpoint_every: usize,
    /// Mirror clips to double the corpus and balance handedness.
    pub mirror_clips: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            envs: 64,
            updates: 1000,
            checkpoint_every: 100,
            mirror_clips: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    /// Future reference frames appended to the tracking target block.
    pub lookahead: usize,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig { lookahead: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Rollouts per clip during evaluation.
    pub rollouts: usize,
    /// Use the action mean instead of sampling.
    pub deterministic: bool,
    /// Replay low-pass filter coefficient (1.0 = passthrough).
    pub filter_alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            rollouts: 20,
            deterministic: true,
            filter_alpha: 0.4,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            paths: PathsConfig::default(),
            physics: PhysicsParams::default(),
            rewards: RewardWeights::default(),
            curriculum: CurriculumConfig::default(),
            ppo: PpoConfig::default(),
            train: TrainConfig::default(),
            observation: ObservationConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Stable fingerprint of the resolved config, embedded in artifacts so a
    /// checkpoint can be traced back to the exact settings that produced it.
    pub fn hash(&self) -> u64 {
        crate::rng::fnv1a64(self.to_toml_string().as_bytes())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let named = |key: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Validation(format!("invalid value for {key}")))
            }
        };
        named("schema_version", self.schema_version == SCHEMA_VERSION)?;
        self.physics
            .validate()
            .map_err(|e| ConfigError::Validation(format!("physics: {e}")))?;
        self.rewards
            .validate()
            .map_err(|e| ConfigError::Validation(format!("rewards: {e}")))?;
        self.curriculum
            .validate()
            .map_err(|e| ConfigError::Validation(format!("curriculum: {e}")))?;
        self.ppo
            .validate()
            .map_err(|e| ConfigError::Validation(format!("ppo: {e}")))?;
        named("train.envs", self.train.envs >= 1)?;
        named("train.updates", self.train.updates >= 1)?;
        named("observation.lookahead", self.observation.lookahead <= 64)?;
        named("eval.rollouts", self.eval.rollouts >= 1)?;
        named(
            "eval.filter_alpha",
            self.eval.filter_alpha > 0.0 && self.eval.filter_alpha <= 1.0,
        )?;
        Ok(())
    }

    /// Apply `key.path=value` overrides (flags win over the file). The key
    /// must already exist in the resolved table.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
        let mut table =
            toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (key, raw) in overrides {
            set_dotted(&mut table, key, raw)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_scalar(raw: &str, like: Option<&toml::Value>) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        // Keep float fields float even when the override looks integral.
        if matches!(like, Some(toml::Value::Float(_))) {
            return toml::Value::Float(i as f64);
        }
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

fn set_dotted(root: &mut toml::Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_table_mut()
            .and_then(|t| t.get_mut(*part))
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
    }
    let last = parts[parts.len() - 1];
    let table = node
        .as_table_mut()
        .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
    if !table.contains_key(last) {
        return Err(ConfigError::UnknownKey(key.to_string()));
    }
    let parsed = parse_scalar(raw, table.get(last));
    table.insert(last.to_string(), parsed);
    Ok(())
}

/// Write-temp-then-rename so failures never leave partial artifacts behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_resolves_to_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!((cfg.physics.dt - 1.0 / 60.0).abs() < 1e-15);
        assert_eq!(cfg.ppo.minibatch, 1024);
        assert_eq!(cfg.train.envs, 64);
    }

    #[test]
    fn unknown_keys_rejected_by_name() {
        let err = RunConfig::from_toml_str("[physics]\ncontct_stiffness = 1.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("contct_stiffness"), "{msg}");
    }

    #[test]
    fn seed_override_changes_only_the_seed() {
        let base = RunConfig::default();
        let over = base
            .with_overrides(&[("seed".to_string(), "42".to_string())])
            .unwrap();
        assert_eq!(over.seed, 42);
        let mut expect = base.clone();
        expect.seed = 42;
        assert_eq!(over, expect);
    }

    #[test]
    fn nested_override_and_unknown_key() {
        let base = RunConfig::default();
        let over = base
            .with_overrides(&[("physics.friction".to_string(), "2".to_string())])
            .unwrap();
        assert_eq!(over.physics.friction, 2.0);
        let err = base
            .with_overrides(&[("physics.nope".to_string(), "1".to_string())])
            .unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(_)), "{err}");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let b = a
            .with_overrides(&[("seed".to_string(), "1".to_string())])
            .unwrap();
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 9;
        cfg.paths.clips = vec![PathBuf::from("a.json")];
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = std::env::temp_dir().join(format!("remimic-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        std::fs::remove_dir_all(&dir).ok();
    }
}
