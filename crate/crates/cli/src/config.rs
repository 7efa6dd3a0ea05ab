//! Run configuration: one TOML file, every field optional, command-line
//! flags applied on top.

use std::path::{Path, PathBuf};

use fog_core::channel::{parse_channel_list, Channel};
use fog_core::federated::{ClientSeeding, RoundConfig};
use fog_core::gaf::{AngleSource, GafConfig};
use fog_core::model::ModelConfig;
use fog_core::windowing::DhwtParams;
use fog_nn::seed::derive_seed;
use serde::Deserialize;
use thiserror::Error;

/// Invalid configuration or arguments; maps to exit code 1.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub repetitions: u32,
    pub windowing: WindowingSection,
    pub gaf: GafSection,
    pub train: TrainSection,
    pub federated: FederatedSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            out_dir: PathBuf::from("fog-out"),
            seed: 0,
            repetitions: 3,
            windowing: WindowingSection::default(),
            gaf: GafSection::default(),
            train: TrainSection::default(),
            federated: FederatedSection::default(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowingSection {
    pub window_len: usize,
    pub fog_overlap: f64,
    pub nofog_overlap: f64,
    pub missing_threshold: f64,
}

impl Default for WindowingSection {
    fn default() -> Self {
        let d = DhwtParams::default();
        Self {
            window_len: d.window_len,
            fog_overlap: d.fog_overlap,
            nofog_overlap: d.nofog_overlap,
            missing_threshold: d.missing_threshold,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum AngleName {
    #[default]
    Bipolar,
    Unit,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GafSection {
    pub image_size: usize,
    pub angle_source: AngleName,
}

impl Default for GafSection {
    fn default() -> Self {
        Self {
            image_size: GafConfig::default().image_size,
            angle_source: AngleName::Bipolar,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Channel combinations, each written as e.g. `"AccV,AccAP"`.
    pub channel_sets: Vec<String>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let m = ModelConfig::new(vec![Channel::AccV], 0);
        Self {
            channel_sets: vec![
                "AccV".into(),
                "AccML".into(),
                "AccAP".into(),
                "AccV,AccML,AccAP".into(),
            ],
            epochs: m.epochs,
            batch_size: m.batch_size,
            learning_rate: m.learning_rate,
            l2_lambda: m.l2_lambda,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SeedingName {
    #[default]
    PerClient,
    Shared,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederatedSection {
    pub channels: String,
    pub num_clients: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    pub seeding: SeedingName,
}

impl Default for FederatedSection {
    fn default() -> Self {
        let r = RoundConfig::default();
        Self {
            channels: "AccV".into(),
            num_clients: r.num_clients,
            local_epochs: r.local_epochs,
            rounds: r.rounds,
            seeding: SeedingName::PerClient,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> ConfigError {
    ConfigError(e.to_string())
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.repetitions == 0 {
            return Err(ConfigError("repetitions must be at least 1".into()));
        }
        if self.gaf.image_size == 0 || self.gaf.image_size > self.windowing.window_len {
            return Err(ConfigError(format!(
                "image size {} must be in 1..={}",
                self.gaf.image_size, self.windowing.window_len
            )));
        }
        if !(0.0..=1.0).contains(&self.windowing.missing_threshold) {
            return Err(ConfigError("missing_threshold must be in [0, 1]".into()));
        }
        for set in &self.train.channel_sets {
            self.model_config(set, 0)?;
        }
        self.model_config(&self.federated.channels, 0)?;
        self.round_config(0)?;
        Ok(())
    }

    pub fn data_dir(&self) -> Result<&Path, ConfigError> {
        let dir = self
            .data_dir
            .as_deref()
            .ok_or_else(|| ConfigError("no data directory configured".into()))?;
        if !dir.is_dir() {
            return Err(ConfigError(format!(
                "data directory {} does not exist",
                dir.display()
            )));
        }
        Ok(dir)
    }

    pub fn dhwt(&self) -> DhwtParams {
        DhwtParams {
            window_len: self.windowing.window_len,
            fog_overlap: self.windowing.fog_overlap,
            nofog_overlap: self.windowing.nofog_overlap,
            missing_threshold: self.windowing.missing_threshold,
        }
    }

    pub fn gaf_config(&self) -> GafConfig {
        GafConfig {
            image_size: self.gaf.image_size,
            angle_source: match self.gaf.angle_source {
                AngleName::Bipolar => AngleSource::Bipolar,
                AngleName::Unit => AngleSource::Unit,
            },
        }
    }

    /// Model initialization and shuffling seed of repetition `rep`; shared
    /// by centralized and federated training.
    pub fn model_seed(&self, rep: u32) -> u64 {
        derive_seed(self.seed, "model", &[u64::from(rep)])
    }

    pub fn partition_seed(&self, rep: u32) -> u64 {
        derive_seed(self.seed, "partition", &[u64::from(rep)])
    }

    pub fn model_config(&self, channels: &str, rep: u32) -> Result<ModelConfig, ConfigError> {
        let channels = parse_channel_list(channels).map_err(config_err)?;
        let cfg = ModelConfig {
            channels,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            l2_lambda: self.train.l2_lambda,
            seed: self.model_seed(rep),
        };
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }

    pub fn round_config(&self, rep: u32) -> Result<RoundConfig, ConfigError> {
        let cfg = RoundConfig {
            num_clients: self.federated.num_clients,
            local_epochs: self.federated.local_epochs,
            rounds: self.federated.rounds,
            seed: self.partition_seed(rep),
            seeding: match self.federated.seeding {
                SeedingName::PerClient => ClientSeeding::PerClient,
                SeedingName::Shared => ClientSeeding::Shared,
            },
        };
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }

    pub fn rep_dir(&self, rep: u32) -> PathBuf {
        self.out_dir.join(format!("rep{rep}"))
    }
}
