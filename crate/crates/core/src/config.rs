//! Run configuration: a TOML file with `[paths]`, `[trainer]`, `[run]`, and
//! `[oracle.http]` sections. Every field outside `[paths]` has a default,
//! so a minimal config is just the network and scenario locations.
//! Relative paths resolve against the config file's directory.

use crate::oracle::{HttpOracle, InstructionOracle, OracleEndpoint, ScriptedOracle};
use crate::trainer::{TrainMode, TrainerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: String, source: Box<toml::de::Error> },
    #[error("config field `{field}`: {problem}")]
    Invalid { field: &'static str, problem: String },
}

fn invalid(field: &'static str, problem: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, problem: problem.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub network: PathBuf,
    pub scenario: PathBuf,
}

/// Mirrors the trainer settings; the run seed is supplied separately per
/// run, never here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub gamma: f64,
    pub learning_rate: f64,
    pub clip: f64,
    pub entropy_coeff: f64,
    pub demo_interval: u32,
    pub subsets: usize,
    pub epochs: u32,
    pub steps_per_epoch: usize,
    pub update_passes: u32,
    pub minibatch: usize,
    pub instruction_cap: usize,
    pub checkpoint_interval: u32,
    pub record_timing: bool,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let base = TrainerConfig::default();
        TrainerSection {
            gamma: base.gamma,
            learning_rate: base.learning_rate,
            clip: base.clip,
            entropy_coeff: base.entropy_coeff,
            demo_interval: base.demo_interval,
            subsets: base.subsets,
            epochs: base.epochs,
            steps_per_epoch: base.steps_per_epoch,
            update_passes: base.update_passes,
            minibatch: base.minibatch,
            instruction_cap: base.instruction_cap,
            checkpoint_interval: base.checkpoint_interval,
            record_timing: base.record_timing,
        }
    }
}

impl TrainerSection {
    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            clip: self.clip,
            entropy_coeff: self.entropy_coeff,
            demo_interval: self.demo_interval,
            subsets: self.subsets,
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            update_passes: self.update_passes,
            minibatch: self.minibatch,
            instruction_cap: self.instruction_cap,
            checkpoint_interval: self.checkpoint_interval,
            record_timing: self.record_timing,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Scripted,
    Http,
}

impl std::fmt::Display for OracleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleKind::Scripted => write!(f, "scripted"),
            OracleKind::Http => write!(f, "http"),
        }
    }
}

impl std::str::FromStr for OracleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(OracleKind::Scripted),
            "http" => Ok(OracleKind::Http),
            other => Err(format!("unknown oracle {other:?}, expected scripted or http")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: TrainMode,
    pub oracle: OracleKind,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub eval_episodes: u32,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            mode: TrainMode::Reled,
            oracle: OracleKind::Scripted,
            seeds: vec![0],
            out: PathBuf::from("runs"),
            eval_episodes: 20,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub http: Option<HttpSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSection {
    pub base_url: String,
    pub model: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub temperature: f64,
    /// Environment variable read for the bearer token; the token itself
    /// never appears in config or artifacts.
    pub api_key_var: String,
}

impl Default for HttpSection {
    fn default() -> Self {
        let base = OracleEndpoint::new("", "local-planner");
        HttpSection {
            base_url: base.base_url,
            model: base.model,
            timeout_s: base.timeout.as_secs_f64(),
            max_retries: base.max_retries,
            temperature: base.temperature,
            api_key_var: base.api_key_var,
        }
    }
}

impl HttpSection {
    pub fn endpoint(&self) -> OracleEndpoint {
        OracleEndpoint {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            timeout: Duration::from_secs_f64(self.timeout_s),
            max_retries: self.max_retries,
            temperature: self.temperature,
            api_key_var: self.api_key_var.clone(),
        }
    }
}

/// Command-line overrides layered on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub mode: Option<TrainMode>,
    pub oracle: Option<OracleKind>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Loads, applies overrides, resolves relative paths against the config
    /// file's directory, and validates.
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source: Box::new(source),
        })?;
        if let Some(seeds) = &overrides.seeds {
            config.run.seeds = seeds.clone();
        }
        if let Some(mode) = overrides.mode {
            config.run.mode = mode;
        }
        if let Some(oracle) = overrides.oracle {
            config.run.oracle = oracle;
        }
        if let Some(out) = &overrides.out {
            config.run.out = out.clone();
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.paths.network = resolve(base, &config.paths.network);
        config.paths.scenario = resolve(base, &config.paths.scenario);
        config.run.out = resolve(base, &config.run.out);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.paths.network.is_file() {
            return Err(invalid(
                "paths.network",
                format!("{} does not exist", self.paths.network.display()),
            ));
        }
        if !self.paths.scenario.is_file() {
            return Err(invalid(
                "paths.scenario",
                format!("{} does not exist", self.paths.scenario.display()),
            ));
        }
        if self.run.seeds.is_empty() {
            return Err(invalid("run.seeds", "at least one seed is required"));
        }
        if self.run.eval_episodes == 0 {
            return Err(invalid("run.eval_episodes", "at least one episode is required"));
        }
        if self.run.oracle == OracleKind::Http {
            match &self.oracle.http {
                None => {
                    return Err(invalid(
                        "oracle.http",
                        "section is required when run.oracle = \"http\"",
                    ))
                }
                Some(http) if http.base_url.is_empty() => {
                    return Err(invalid("oracle.http.base_url", "must not be empty"))
                }
                Some(http) if !(http.timeout_s > 0.0 && http.timeout_s.is_finite()) => {
                    return Err(invalid("oracle.http.timeout_s", "must be positive"))
                }
                Some(_) => {}
            }
        }
        self.trainer
            .trainer_config(0)
            .validate()
            .map_err(|e| invalid("trainer", e.to_string()))?;
        Ok(())
    }

    /// Builds the configured planner client.
    pub fn build_oracle(&self) -> Box<dyn InstructionOracle> {
        match self.run.oracle {
            OracleKind::Scripted => Box::new(ScriptedOracle),
            // validate() guarantees the section exists.
            OracleKind::Http => {
                Box::new(HttpOracle { endpoint: self.oracle.http.as_ref().unwrap().endpoint() })
            }
        }
    }

    /// Hex digest identifying the effective configuration (after overrides
    /// and path resolution); stamped into every artifact sidecar.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture(name: &str) -> String {
        format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
    }

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("run.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn minimal_body() -> String {
        format!(
            "[paths]\nnetwork = \"{}\"\nscenario = \"{}\"\n",
            fixture("grid5_network.json"),
            fixture("grid5_scenario.json"),
        )
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &minimal_body());
        let config = RunConfig::load(&path, &Overrides::default()).unwrap();
        assert_eq!(config.run.mode, TrainMode::Reled);
        assert_eq!(config.run.oracle, OracleKind::Scripted);
        assert_eq!(config.run.seeds, vec![0]);
        assert_eq!(config.trainer.trainer_config(9), TrainerConfig { seed: 9, ..Default::default() });
    }

    #[test]
    fn overrides_replace_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}[run]\nmode = \"reled\"\nseeds = [1]\n", minimal_body());
        let path = write_config(dir.path(), &body);
        let overrides = Overrides {
            seeds: Some(vec![4, 5]),
            mode: Some(TrainMode::Ippo),
            oracle: None,
            out: Some(PathBuf::from("elsewhere")),
        };
        let config = RunConfig::load(&path, &overrides).unwrap();
        assert_eq!(config.run.mode, TrainMode::Ippo);
        assert_eq!(config.run.seeds, vec![4, 5]);
        assert_eq!(config.run.out, dir.path().join("elsewhere"));
    }

    #[test]
    fn missing_paths_and_bad_fields_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let body = "[paths]\nnetwork = \"nope.json\"\nscenario = \"nope.json\"\n";
        let path = write_config(dir.path(), body);
        let err = RunConfig::load(&path, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("paths.network"), "{err}");

        let body = format!("{}[run]\nseeds = []\n", minimal_body());
        let path = write_config(dir.path(), &body);
        let err = RunConfig::load(&path, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("run.seeds"), "{err}");

        let body = format!("{}[trainer]\ngamma = 1.5\n", minimal_body());
        let path = write_config(dir.path(), &body);
        let err = RunConfig::load(&path, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
    }

    #[test]
    fn http_oracle_requires_an_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}[run]\noracle = \"http\"\n", minimal_body());
        let path = write_config(dir.path(), &body);
        let err = RunConfig::load(&path, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("oracle.http"), "{err}");

        let body = format!(
            "{}[run]\noracle = \"http\"\n[oracle.http]\nbase_url = \"http://127.0.0.1:9\"\nmodel = \"m\"\n",
            minimal_body()
        );
        let path = write_config(dir.path(), &body);
        let config = RunConfig::load(&path, &Overrides::default()).unwrap();
        assert_eq!(config.build_oracle().label(), "http");
        let endpoint = config.oracle.http.as_ref().unwrap().endpoint();
        assert_eq!(endpoint.timeout, Duration::from_secs(30));
        assert_eq!(endpoint.temperature, 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}[trainer]\nlerning_rate = 0.1\n", minimal_body());
        let path = write_config(dir.path(), &body);
        assert!(matches!(
            RunConfig::load(&path, &Overrides::default()),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn digest_tracks_effective_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &minimal_body());
        let a = RunConfig::load(&path, &Overrides::default()).unwrap();
        let b = RunConfig::load(&path, &Overrides::default()).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        let c = RunConfig::load(
            &path,
            &Overrides { seeds: Some(vec![2]), ..Default::default() },
        )
        .unwrap();
        assert_ne!(a.digest(), c.digest());
    }
}
