//! Run configuration: a flat TOML file of `key = value` sections covering
//! network, likelihood, prior, training, and data settings. Parsing fills
//! defaults; the resolved form (every field explicit) is what gets archived,
//! so saved runs are self-describing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use evpower_core::adam::AdamConfig;
use evpower_core::lstm::{HeadKind, NetworkConfig};
use evpower_core::objectives::{PriorSpec, TNllConfig};
use evpower_core::synth::{default_features, COL_POWER};
use evpower_core::train::{validate_mode, TrainConfig, TrainMode};
use evpower_core::Error;

use crate::error::{CliError, Result};

/// The four method presets of the comparative grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    /// Student-t NLL head, anchored ensemble.
    TnllAnchor,
    /// Student-t NLL head, MC dropout.
    TnllDropout,
    /// Three-quantile pinball head, anchored ensemble.
    QuantileAnchor,
    /// Three-quantile pinball head, MC dropout.
    QuantileDropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub features: Vec<String>,
    pub target: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            features: default_features(),
            target: COL_POWER.to_string(),
        }
    }
}

/// Fully resolved run configuration (the archived form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub likelihood: TNllConfig,
    pub prior: PriorSpec,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DataConfig::default();
        RunConfig {
            network: NetworkConfig {
                input_dim: data.features.len(),
                ..NetworkConfig::default()
            },
            likelihood: TNllConfig::default(),
            prior: PriorSpec::default(),
            train: TrainConfig::default(),
            data,
            alpha: 0.1,
        }
    }
}

impl RunConfig {
    /// Apply a method preset: sets head and mode, and gives the dropout
    /// modes a usable default rate when none was configured.
    pub fn apply_method(&mut self, method: Method) {
        let (head, mode) = match method {
            Method::TnllAnchor => (HeadKind::StudentT, TrainMode::Anchored),
            Method::TnllDropout => (HeadKind::StudentT, TrainMode::McDropout),
            Method::QuantileAnchor => (HeadKind::Quantile, TrainMode::Anchored),
            Method::QuantileDropout => (HeadKind::Quantile, TrainMode::McDropout),
        };
        self.network.head = head;
        self.train.mode = mode;
        match mode {
            TrainMode::McDropout => {
                if self.network.dropout_rate == 0.0 {
                    self.network.dropout_rate = 0.1;
                }
            }
            TrainMode::Anchored => {
                self.network.dropout_rate = 0.0;
            }
        }
    }

    /// Validate everything at once, reporting every violated field.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let mut collect = |r: std::result::Result<(), Error>| {
            if let Err(Error::Config(msg)) = r {
                bad.push(msg);
            }
        };
        collect(self.network.validate());
        collect(self.likelihood.validate());
        collect(self.prior.validate());
        collect(self.train.validate());
        collect(validate_mode(&self.network, &self.train));
        if self.data.features.is_empty() {
            bad.push("data.features must not be empty".into());
        }
        if self.data.features.contains(&self.data.target) {
            bad.push("data.target must not appear among features".into());
        }
        if self.network.input_dim != self.data.features.len() {
            bad.push(format!(
                "network input_dim {} != {} features",
                self.network.input_dim,
                self.data.features.len()
            ));
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            bad.push(format!("alpha must be in (0,1), got {}", self.alpha));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Core(Error::Config(bad.join("; "))))
        }
    }
}

// ---- TOML file form ------------------------------------------------------

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct NetworkSection {
    layers: Option<usize>,
    hidden: Option<usize>,
    head: Option<HeadKind>,
    dropout_rate: Option<f64>,
    window: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LikelihoodSection {
    nu: Option<f64>,
    scale_floor: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PriorSection {
    sigma2: Option<f64>,
    sigma2_input: Option<f64>,
    sigma2_forget: Option<f64>,
    sigma2_output: Option<f64>,
    sigma2_candidate: Option<f64>,
    sigma2_head: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainSection {
    members: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    adam_epsilon: Option<f64>,
    seed: Option<u64>,
    mode: Option<TrainMode>,
    mc_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DataSection {
    features: Option<Vec<String>>,
    target: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    alpha: Option<f64>,
    network: NetworkSection,
    likelihood: LikelihoodSection,
    prior: PriorSection,
    train: TrainSection,
    data: DataSection,
}

impl ConfigFile {
    fn resolve(self) -> RunConfig {
        let mut cfg = RunConfig::default();
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.network.layers {
            cfg.network.num_layers = v;
        }
        if let Some(v) = self.network.hidden {
            cfg.network.hidden_dim = v;
        }
        if let Some(v) = self.network.head {
            cfg.network.head = v;
        }
        if let Some(v) = self.network.dropout_rate {
            cfg.network.dropout_rate = v;
        }
        if let Some(v) = self.network.window {
            cfg.network.window = v;
        }
        if let Some(v) = self.likelihood.nu {
            cfg.likelihood.nu = v;
        }
        if let Some(v) = self.likelihood.scale_floor {
            cfg.likelihood.scale_floor = v;
        }
        if let Some(shared) = self.prior.sigma2 {
            cfg.prior = PriorSpec::shared(shared);
        }
        if let Some(v) = self.prior.sigma2_input {
            cfg.prior.sigma2_input = v;
        }
        if let Some(v) = self.prior.sigma2_forget {
            cfg.prior.sigma2_forget = v;
        }
        if let Some(v) = self.prior.sigma2_output {
            cfg.prior.sigma2_output = v;
        }
        if let Some(v) = self.prior.sigma2_candidate {
            cfg.prior.sigma2_candidate = v;
        }
        if let Some(v) = self.prior.sigma2_head {
            cfg.prior.sigma2_head = v;
        }
        if let Some(v) = self.train.members {
            cfg.train.members = v;
        }
        if let Some(v) = self.train.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.train.batch_size {
            cfg.train.batch_size = v;
        }
        let adam = AdamConfig {
            learning_rate: self
                .train
                .learning_rate
                .unwrap_or(cfg.train.adam.learning_rate),
            beta1: self.train.beta1.unwrap_or(cfg.train.adam.beta1),
            beta2: self.train.beta2.unwrap_or(cfg.train.adam.beta2),
            epsilon: self.train.adam_epsilon.unwrap_or(cfg.train.adam.epsilon),
        };
        cfg.train.adam = adam;
        if let Some(v) = self.train.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.train.mode {
            cfg.train.mode = v;
        }
        if let Some(v) = self.train.mc_samples {
            cfg.train.mc_samples = v;
        }
        if let Some(v) = self.data.features {
            cfg.data.features = v;
        }
        if let Some(v) = self.data.target {
            cfg.data.target = v;
        }
        cfg.network.input_dim = cfg.data.features.len();
        cfg
    }
}

/// Load a run configuration; `None` means all defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(evpower_core::Error::Io)?;
            let file: ConfigFile = toml::from_str(&text).map_err(|e| {
                CliError::Core(Error::Config(format!("{}: {e}", p.display())))
            })?;
            file.resolve()
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn parse(text: &str) -> Result<RunConfig> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f.flush().unwrap();
        load_config(Some(f.path()))
    }

    #[test]
    fn defaults_follow_the_training_regime() {
        let cfg = load_config(None).unwrap();
        assert_eq!(cfg.network.num_layers, 4);
        assert_eq!(cfg.network.hidden_dim, 32);
        assert_eq!(cfg.train.members, 30);
        assert_eq!(cfg.train.epochs, 300);
        assert_eq!(cfg.train.adam.learning_rate, 1e-3);
        assert_eq!(cfg.prior.sigma2_input, 0.01);
        assert_eq!(cfg.likelihood.nu, 4.0);
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.network.input_dim, 4);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_overrides_defaults() {
        let cfg = parse(
            r#"
alpha = 0.05

[network]
layers = 2
hidden = 16

[train]
members = 5
epochs = 100
seed = 7

[prior]
sigma2 = 0.02
sigma2_head = 0.5
"#,
        )
        .unwrap();
        assert_eq!(cfg.network.num_layers, 2);
        assert_eq!(cfg.network.hidden_dim, 16);
        assert_eq!(cfg.train.members, 5);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.alpha, 0.05);
        assert_eq!(cfg.prior.sigma2_input, 0.02);
        assert_eq!(cfg.prior.sigma2_head, 0.5);
        // untouched defaults survive
        assert_eq!(cfg.train.batch_size, 32);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse("[network]\nlayerz = 3\n").unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut cfg = RunConfig::default();
        cfg.network.num_layers = 0;
        cfg.train.epochs = 0;
        cfg.alpha = 2.0;
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("num_layers"), "{msg}");
        assert!(msg.contains("epochs"), "{msg}");
        assert!(msg.contains("alpha"), "{msg}");
    }

    #[test]
    fn dropout_mode_with_zero_rate_rejected_at_load() {
        let cfg = parse("[train]\nmode = \"mc_dropout\"\n").unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(err.to_string().contains("dropout_rate"), "{err}");
    }

    #[test]
    fn method_presets_set_head_mode_and_default_rate() {
        let mut cfg = RunConfig::default();
        cfg.apply_method(Method::QuantileDropout);
        assert_eq!(cfg.network.head, HeadKind::Quantile);
        assert_eq!(cfg.train.mode, TrainMode::McDropout);
        assert_eq!(cfg.network.dropout_rate, 0.1);
        cfg.validate().unwrap();

        cfg.apply_method(Method::TnllAnchor);
        assert_eq!(cfg.network.head, HeadKind::StudentT);
        assert_eq!(cfg.train.mode, TrainMode::Anchored);
        assert_eq!(cfg.network.dropout_rate, 0.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn resolved_config_round_trips_through_json() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
