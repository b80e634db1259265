//! Experiment configuration: one TOML document per experiment, strictly
//! parsed — unknown keys are errors, since a typo in a block name is the
//! most dangerous failure mode a config can have.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decision::{BetaLayout, DecisionVector};
use crate::error::{Error, Result};
use crate::fd::ProbeConfig;
use crate::model::{Activation, ModelConfig};
use crate::optimizer::{HybridConfig, JacobianSource};
use crate::sample::Task;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hybrid,
    Brs,
    FixedBeta,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Hybrid => "hybrid",
            Method::Brs => "brs",
            Method::FixedBeta => "fixed_beta",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Csg,
    Toy,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSection {
    pub width: usize,
    pub height: usize,
    pub task: Task,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub learning_rate: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    /// The decision vector the target set is generated at.
    pub beta: Vec<f64>,
    pub size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbesSection {
    pub count: usize,
    pub sigma: f64,
    #[serde(default = "default_true")]
    pub share_across_samples: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridSection {
    pub outer_steps: usize,
    pub samples_per_step: usize,
    pub gamma: f64,
    #[serde(default = "default_decay")]
    pub rms_decay: f64,
    #[serde(default = "default_epsilon")]
    pub rms_epsilon: f64,
    #[serde(default = "default_jacobian")]
    pub jacobian: JacobianSource,
}

fn default_decay() -> f64 {
    0.99
}

fn default_epsilon() -> f64 {
    1e-8
}

fn default_jacobian() -> JacobianSource {
    JacobianSource::FiniteDifference
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrsSection {
    pub outer_steps: usize,
    pub probes: usize,
    pub sigma: f64,
    pub gamma: f64,
    #[serde(default = "default_decay")]
    pub rms_decay: f64,
    #[serde(default = "default_epsilon")]
    pub rms_epsilon: f64,
    #[serde(default = "default_true")]
    pub weight_carryover: bool,
    pub samples_per_eval: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedBetaSection {
    pub draws: usize,
    pub dataset_size: usize,
    pub train_steps: usize,
    pub snapshot_every: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Beta0Section {
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub pipeline: PipelineKind,
    pub master_seed: u64,
    pub image: ImageSection,
    pub model: ModelSection,
    pub trainer: TrainerSection,
    pub validation: ValidationSection,
    #[serde(default)]
    pub beta0: Option<Beta0Section>,
    #[serde(default)]
    pub probes: Option<ProbesSection>,
    #[serde(default)]
    pub hybrid: Option<HybridSection>,
    #[serde(default)]
    pub brs: Option<BrsSection>,
    #[serde(default)]
    pub fixed_beta: Option<FixedBetaSection>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn layout(&self) -> Arc<BetaLayout> {
        match self.pipeline {
            PipelineKind::Csg => BetaLayout::csg(),
            PipelineKind::Toy => BetaLayout::toy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.layout();
        let expect_len = |name: &str, v: &[f64]| -> Result<()> {
            if v.len() != layout.total() {
                return Err(Error::Config(format!(
                    "{name}: expected {} entries for layout {}, got {}",
                    layout.total(),
                    layout.name,
                    v.len()
                )));
            }
            Ok(())
        };
        expect_len("validation.beta", &self.validation.beta)?;
        if let Some(b0) = &self.beta0 {
            expect_len("beta0.values", &b0.values)?;
        }
        if self.image.width == 0 || self.image.height == 0 {
            return Err(Error::Config("image.width and image.height must be >= 1".into()));
        }
        if self.validation.size == 0 {
            return Err(Error::Config("validation.size must be >= 1".into()));
        }
        if self.trainer.learning_rate < 0.0 {
            return Err(Error::Config("trainer.learning_rate must be >= 0".into()));
        }
        match self.method {
            Method::Hybrid => {
                let h = self
                    .hybrid
                    .as_ref()
                    .ok_or_else(|| Error::Config("method = hybrid needs a [hybrid] section".into()))?;
                if h.outer_steps == 0 || h.samples_per_step == 0 {
                    return Err(Error::Config(
                        "hybrid.outer_steps and hybrid.samples_per_step must be >= 1".into(),
                    ));
                }
                if h.gamma < 0.0 {
                    return Err(Error::Config("hybrid.gamma must be >= 0".into()));
                }
                if h.jacobian == JacobianSource::FiniteDifference && self.probes.is_none() {
                    return Err(Error::Config(
                        "hybrid with finite differences needs a [probes] section".into(),
                    ));
                }
                if self.trainer.steps != h.samples_per_step {
                    return Err(Error::Config(
                        "trainer.steps must equal hybrid.samples_per_step (batch size is 1)"
                            .into(),
                    ));
                }
            }
            Method::Brs => {
                let b = self
                    .brs
                    .as_ref()
                    .ok_or_else(|| Error::Config("method = brs needs a [brs] section".into()))?;
                if b.outer_steps == 0 || b.probes == 0 || b.samples_per_eval == 0 {
                    return Err(Error::Config(
                        "brs.outer_steps, brs.probes and brs.samples_per_eval must be >= 1".into(),
                    ));
                }
                if b.sigma <= 0.0 || b.gamma < 0.0 {
                    return Err(Error::Config("brs.sigma must be > 0 and brs.gamma >= 0".into()));
                }
            }
            Method::FixedBeta => {
                let f = self.fixed_beta.as_ref().ok_or_else(|| {
                    Error::Config("method = fixed_beta needs a [fixed_beta] section".into())
                })?;
                if f.draws == 0 || f.dataset_size == 0 || f.train_steps == 0 || f.snapshot_every == 0
                {
                    return Err(Error::Config(
                        "fixed_beta sizes must all be >= 1".into(),
                    ));
                }
            }
        }
        if let Some(p) = &self.probes {
            if p.count == 0 || p.sigma <= 0.0 {
                return Err(Error::Config(
                    "probes.count must be >= 1 and probes.sigma > 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.image.width * self.image.height,
            hidden_dim: self.model.hidden,
            pixels: self.image.width * self.image.height,
            task: self.image.task,
            activation: Activation::Tanh,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.trainer.learning_rate,
            steps: self.trainer.steps,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        match &self.probes {
            Some(p) => ProbeConfig {
                count: p.count,
                sigma: p.sigma,
                share_across_samples: p.share_across_samples,
            },
            None => ProbeConfig::default(),
        }
    }

    pub fn hybrid_config(&self) -> Result<HybridConfig> {
        let h = self
            .hybrid
            .as_ref()
            .ok_or_else(|| Error::Config("missing [hybrid] section".into()))?;
        Ok(HybridConfig {
            samples_per_step: h.samples_per_step,
            outer_steps: h.outer_steps,
            gamma: h.gamma,
            rms_decay: h.rms_decay,
            rms_epsilon: h.rms_epsilon,
            train: self.train_config(),
            probes: self.probe_config(),
            jacobian: h.jacobian,
        })
    }

    pub fn validation_beta(&self) -> Result<DecisionVector> {
        Ok(DecisionVector::new(self.layout(), self.validation.beta.clone())?.clip_to_valid())
    }

    pub fn beta0(&self) -> Result<DecisionVector> {
        let values = match &self.beta0 {
            Some(b) => b.values.clone(),
            None => self.validation.beta.clone(),
        };
        Ok(DecisionVector::new(self.layout(), values)?.clip_to_valid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TOY_CONFIG: &str = r#"
method = "hybrid"
pipeline = "toy"
master_seed = 7

[image]
width = 8
height = 8
task = "normals"

[model]
hidden = 8

[trainer]
learning_rate = 0.05
steps = 2

[validation]
beta = [0.3, -0.2, 0.35, 1.1, 0.5, -0.4]
size = 4
seed = 4242

[beta0]
values = [0.0, 0.0, 0.6, 0.8, 0.0, 0.0]

[probes]
count = 4
sigma = 0.02

[hybrid]
outer_steps = 3
samples_per_step = 2
gamma = 0.02
"#;

    #[test]
    fn parses_and_validates_toy_config() {
        let c = ExperimentConfig::from_toml(TOY_CONFIG).unwrap();
        assert_eq!(c.method, Method::Hybrid);
        assert_eq!(c.layout().total(), 6);
        assert!(c.hybrid_config().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = TOY_CONFIG.replace("[probes]", "[probes]\nsgima = 0.1");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("sgima"), "{err}");
    }

    #[test]
    fn wrong_beta_length_is_reported_with_field_path() {
        let bad = TOY_CONFIG.replace(
            "beta = [0.3, -0.2, 0.35, 1.1, 0.5, -0.4]",
            "beta = [0.3, -0.2]",
        );
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("validation.beta"), "{err}");
    }

    #[test]
    fn mismatched_trainer_steps_rejected() {
        let bad = TOY_CONFIG.replace("steps = 2", "steps = 3");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn config_snapshot_roundtrips() {
        let c = ExperimentConfig::from_toml(TOY_CONFIG).unwrap();
        let snapshot = c.to_toml();
        let c2 = ExperimentConfig::from_toml(&snapshot).unwrap();
        assert_eq!(c2.to_toml(), snapshot);
    }
}
