use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::pipeline::{FrameObservation, Pipeline, PipelineState, Policy, StepRecord};
use crate::synth::{gen_scenario, init_params, qformer_stub, question_vector, FrameEncoder, Scenario};

use super::config::RunConfig;
use super::metrics::{recall_at_capacity, redundancy};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config: RunConfig,
    pub scenario_checksum: String,
    /// Step counter the run started from (0 unless resumed).
    pub start_step: u64,
    pub steps: Vec<StepRecord>,
    pub retained_sgeb_indices: Vec<u64>,
    pub retained_fgcb_indices: Vec<u64>,
    pub recall: f64,
    pub redundancy: f64,
    /// Seconds; only filled when timing is requested so reports stay reproducible.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time: Option<f64>,
}

/// Everything needed to replay one configured stream.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub scenario: Scenario,
    pub encoder: FrameEncoder,
    pub pipeline: Pipeline,
    pub question: Vec<f64>,
}

impl Experiment {
    /// Generates the scenario described by `config`.
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let scenario = gen_scenario(&config.scenario_params()?)?;
        Self::with_scenario(config, scenario)
    }

    pub fn with_scenario(config: &RunConfig, scenario: Scenario) -> Result<Self> {
        config.validate()?;
        let encoder = FrameEncoder::new(config.dims, config.seed)?;
        let mut pipeline = Pipeline::new(init_params(config.seed, &config.dims)?, config.toggles);
        pipeline.verbose = config.verbose;
        let question = question_vector(&scenario.question_label, config.dims.d, config.seed);
        Ok(Self {
            config: config.clone(),
            scenario,
            encoder,
            pipeline,
            question,
        })
    }

    pub fn initial_state(&self) -> Result<PipelineState> {
        PipelineState::new(self.config.tau, self.config.bank_config(), self.question.clone())
    }

    pub fn observe(&self, frame_index: u64) -> Result<FrameObservation> {
        if frame_index == 0 || frame_index as usize > self.scenario.length {
            return Err(Error::Config(format!(
                "frame {frame_index} is outside the scenario (length {})",
                self.scenario.length
            )));
        }
        let spec = self.scenario.frame(frame_index);
        Ok(FrameObservation {
            inputs: self.encoder.embed_frame(spec, frame_index)?,
            semantic: qformer_stub(spec, &self.scenario.question_label, self.config.dims.d, self.config.seed),
        })
    }

    /// Advances `steps` frames from `state`.
    pub fn advance(&self, mut state: PipelineState, steps: u64) -> Result<(PipelineState, Vec<StepRecord>)> {
        let mut records = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let frame = self.observe(state.step + 1)?;
            let out = self.pipeline.step(state, &frame)?;
            state = out.state;
            records.push(out.record);
        }
        Ok((state, records))
    }

    /// Runs from `state` to the end of the scenario and assembles the report.
    pub fn finish(&self, state: PipelineState, timed: bool) -> Result<(PipelineState, RunReport)> {
        let start = Instant::now();
        let start_step = state.step;
        let remaining = (self.scenario.length as u64).saturating_sub(start_step);
        let (state, steps) = self.advance(state, remaining)?;
        let report = self.report(&state, start_step, steps, timed.then(|| start.elapsed().as_secs_f64()))?;
        Ok((state, report))
    }

    pub fn report(
        &self,
        state: &PipelineState,
        start_step: u64,
        steps: Vec<StepRecord>,
        wall_time: Option<f64>,
    ) -> Result<RunReport> {
        let retained_sgeb_indices = state.sgeb.frame_indices();
        let retained_labels: BTreeSet<u32> =
            retained_sgeb_indices.iter().map(|&t| self.scenario.label_of(t)).collect();
        let pooled: Vec<&Matrix> = state.sgeb.entries().iter().map(|e| &e.pooled).collect();
        Ok(RunReport {
            format_version: REPORT_FORMAT_VERSION,
            config: self.config.clone(),
            scenario_checksum: self.scenario.checksum()?,
            start_step,
            steps,
            retained_fgcb_indices: state.fgcb.frame_indices(),
            recall: recall_at_capacity(&retained_labels, &self.scenario.relevant_labels_present()),
            redundancy: redundancy(&pooled),
            retained_sgeb_indices,
            wall_time,
        })
    }
}

/// Runs the whole scenario under `policy`, overriding the configured policy.
pub fn run_stream(config: &RunConfig, scenario: &Scenario, policy: Policy) -> Result<RunReport> {
    let config = RunConfig {
        policy,
        ..config.clone()
    };
    let exp = Experiment::with_scenario(&config, scenario.clone())?;
    let state = exp.initial_state()?;
    Ok(exp.finish(state, false)?.1)
}
