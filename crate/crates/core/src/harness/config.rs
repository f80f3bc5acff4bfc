use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelModel;
use crate::data::{PartitionMode, PartitionSpec};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::robustness::{AttackSpec, FailureSpec, ScreeningPolicy};
use crate::schedule::HyperSchedule;
use crate::selection::CensorPolicy;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Dsl,
    Fl,
    Pso,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Dsl => "dsl",
            Algorithm::Fl => "fl",
            Algorithm::Pso => "pso",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden units of the mlp; ignored for the linear model.
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Mlp,
            hidden: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Read samples from this CSV instead of generating them. Feature
    /// dimension and class count then come from the file.
    pub csv_path: Option<PathBuf>,
    pub n_samples: usize,
    pub d_in: usize,
    pub classes: usize,
    /// Radius of the sphere holding the class means.
    pub sep: f64,
    pub standardize: bool,
    /// Held out for test metrics before any partitioning.
    pub test_fraction: f64,
    pub partition: PartitionMode,
    pub dirichlet_alpha: f64,
    pub global_fraction: f64,
    pub global_split: f64,
    /// Add the shared training part to every worker's training set.
    pub global_sharing: bool,
    /// Minibatch size per local step; 0 means the full local set.
    pub batch_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            csv_path: None,
            n_samples: 25_000,
            d_in: 20,
            classes: 5,
            sep: 2.0,
            standardize: false,
            test_fraction: 0.2,
            partition: PartitionMode::Dirichlet,
            dirichlet_alpha: 0.1,
            global_fraction: 0.01,
            global_split: 0.5,
            global_sharing: true,
            batch_size: 32,
        }
    }
}

/// Full description of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub num_workers: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub schedules: HyperSchedule,
    pub channel: ChannelModel,
    pub censoring: CensorPolicy,
    pub attacks: AttackSpec,
    pub screening: ScreeningPolicy,
    pub failures: FailureSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::Dsl,
            rounds: 200,
            num_workers: 50,
            seed: 1,
            output_dir: None,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            schedules: HyperSchedule::default(),
            channel: ChannelModel::default(),
            censoring: CensorPolicy::default(),
            attacks: AttackSpec::default(),
            screening: ScreeningPolicy::default(),
            failures: FailureSpec::default(),
        }
    }
}

fn parse_error(path: &Path, err: toml::de::Error) -> Error {
    let line = err
        .span()
        .and_then(|span| {
            fs::read_to_string(path)
                .ok()
                .map(|t| t[..span.start].matches('\n').count() + 1)
        })
        .unwrap_or(1);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: err.message().to_owned(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::from("<inline>"),
            line: e.span().map_or(1, |s| text[..s.start].matches('\n').count() + 1),
            message: e.message().to_owned(),
        })?;
        Ok(cfg.normalized())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| parse_error(path, e))?;
        Ok(cfg.normalized())
    }

    /// Deserialize from an already-parsed TOML value (used by sweeps).
    pub fn from_value(value: toml::Value) -> Result<Self> {
        let cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| Error::Parse {
            path: PathBuf::from("<override>"),
            line: 0,
            message: e.message().to_owned(),
        })?;
        Ok(cfg.normalized())
    }

    pub fn to_value(&self) -> toml::Value {
        toml::Value::try_from(self).expect("config serializes to toml")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }

    /// Copy `rounds` into the schedule horizon.
    pub fn normalized(mut self) -> Self {
        self.schedules.rounds_total = self.rounds;
        self
    }

    pub fn model_spec(&self, d_in: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            kind: self.model.kind,
            d_in,
            hidden: match self.model.kind {
                ModelKind::Linear => 0,
                ModelKind::Mlp => self.model.hidden,
            },
            classes,
        }
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            num_workers: self.num_workers,
            dirichlet_alpha: self.data.dirichlet_alpha,
            global_fraction: self.data.global_fraction,
            global_split: self.data.global_split,
            mode: self.data.partition,
        }
    }

    /// Range checks for every section. Errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be > 0"));
        }
        if self.num_workers == 0 {
            return Err(Error::config("num_workers", "must be >= 1"));
        }
        if self.schedules.rounds_total != self.rounds {
            return Err(Error::config(
                "schedules.rounds_total",
                "must equal rounds (call normalized())",
            ));
        }
        self.schedules.validate(self.num_workers)?;
        self.channel.validate()?;
        self.censoring.validate()?;
        self.attacks.validate(self.num_workers)?;
        self.screening.validate()?;
        self.failures.validate()?;
        self.partition_spec().validate()?;
        let d = &self.data;
        if d.csv_path.is_none() {
            if d.d_in == 0 {
                return Err(Error::config("data.d_in", "must be >= 1"));
            }
            if d.classes == 0 {
                return Err(Error::config("data.classes", "must be >= 1"));
            }
            if !(d.sep.is_finite() && d.sep > 0.0) {
                return Err(Error::config("data.sep", "must be > 0"));
            }
            if d.n_samples < d.classes {
                return Err(Error::config("data.n_samples", "must be >= data.classes"));
            }
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(Error::config("data.test_fraction", "must be in (0, 1)"));
        }
        if self.model.kind == ModelKind::Mlp && self.model.hidden == 0 {
            return Err(Error::config("model.hidden", "mlp needs hidden >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().normalized().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_toml_str("rounds = 10\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = ExperimentConfig::from_toml_str("[channel]\nnoise = 1.0\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e:?}");
    }

    #[test]
    fn nested_fields_parse() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
algorithm = "fl"
rounds = 7
[schedules]
lambda_init = 0.5
[channel]
kind = "ideal"
[screening]
enabled = true
tau = 0.25
"#,
        )
        .unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Fl);
        assert_eq!(cfg.schedules.rounds_total, 7);
        assert_eq!(cfg.schedules.lambda_init, 0.5);
        assert_eq!(cfg.screening.tau, Some(0.25));
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_names_the_key() {
        let mut cfg = ExperimentConfig::default().normalized();
        cfg.failures.link_drop_prob = 1.5;
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "failures.link_drop_prob"),
            other => panic!("{other:?}"),
        }
        let mut cfg = ExperimentConfig::default().normalized();
        cfg.data.global_fraction = 0.5;
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "data.global_fraction"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig::default().normalized();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }
}
