use serde::{Deserialize, Serialize};

use crate::dims::Dims;
use crate::error::{Error, Result};
use crate::pipeline::{ComponentToggles, Policy};
use crate::sgeb::{SgebConfig, SimilarityKind};
use crate::synth::{AnchorTable, ScenarioParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub length: usize,
    /// Defaults to the expected number of fresh labels, capped by the anchor table.
    pub n_labels: Option<usize>,
    /// Defaults to about `1.5 K` relevant labels.
    pub relevant_fraction: Option<f64>,
    pub revisit_rate: f64,
    pub noise_scale: f64,
    pub question_label: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            length: 64,
            n_labels: None,
            relevant_fraction: None,
            revisit_rate: 0.4,
            noise_scale: 0.05,
            question_label: "how-many-chairs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dims: Dims,
    pub tau: usize,
    pub capacity_k: usize,
    pub lambda_r: f64,
    pub lambda_nu: f64,
    pub similarity: SimilarityKind,
    pub policy: Policy,
    pub toggles: ComponentToggles,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    /// Keep full per-step tensors in the report.
    pub verbose: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dims: Dims::default(),
            tau: 4,
            capacity_k: 32,
            lambda_r: 1.0,
            lambda_nu: 1.0,
            similarity: SimilarityKind::TokenMean,
            policy: Policy::SgebFull,
            toggles: ComponentToggles::default(),
            seed: 0,
            scenario: ScenarioConfig::default(),
            verbose: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.tau == 0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        self.bank_config().validate()?;
        if self.scenario.length == 0 {
            return Err(Error::Config("scenario length must be at least 1".into()));
        }
        Ok(())
    }

    /// Evidence-bank settings for the configured policy.
    pub fn bank_config(&self) -> SgebConfig {
        self.policy.bank_config(SgebConfig {
            capacity: self.capacity_k,
            lambda_r: self.lambda_r,
            lambda_nu: self.lambda_nu,
            similarity: self.similarity,
            ..SgebConfig::default()
        })
    }

    /// Scenario parameters with the same seed as the run.
    pub fn scenario_params(&self) -> Result<ScenarioParams> {
        let label_capacity = AnchorTable::new(self.dims.d, self.seed)?.capacity();
        let family = ScenarioParams::planted_family(self.seed, self.scenario.length, self.capacity_k, label_capacity);
        let n_labels = self.scenario.n_labels.unwrap_or_else(|| {
            (((1.0 - self.scenario.revisit_rate) * self.scenario.length as f64).ceil() as usize)
                .clamp(1, label_capacity)
        });
        if n_labels > label_capacity {
            return Err(Error::Config(format!(
                "n_labels = {n_labels} exceeds the {label_capacity} distinguishable labels at d = {}",
                self.dims.d
            )));
        }
        let relevant_fraction = self
            .scenario
            .relevant_fraction
            .unwrap_or_else(|| (1.5 * self.capacity_k as f64 / n_labels as f64).min(1.0));
        Ok(ScenarioParams {
            n_labels,
            relevant_fraction,
            revisit_rate: self.scenario.revisit_rate,
            noise_scale: self.scenario.noise_scale,
            question_label: self.scenario.question_label.clone(),
            ..family
        })
    }
}
