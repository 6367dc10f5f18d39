//! Process exit codes and the mapping from error chains onto them.

use std::fmt;

use lagcast_core::afno::ModelError;
use lagcast_core::calendar::CalendarError;
use lagcast_core::experiments::ExperimentError;
use lagcast_core::gridstore::GridError;
use lagcast_core::kv::KvError;
use lagcast_core::rollout::RolloutError;
use lagcast_core::scorecard::ScoreError;
use lagcast_core::slidewin::WindowError;
use lagcast_core::synthgen::SynthError;
use lagcast_core::trainer::TrainError;

pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERIC: u8 = 4;

/// Context marker forcing a configuration/usage exit.
#[derive(Debug)]
pub struct ConfigProblem(pub String);

impl fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigProblem {}

fn model(e: &ModelError) -> u8 {
    match e {
        ModelError::NonFinite { .. } | ModelError::NonFiniteGradient(_) => NUMERIC,
        ModelError::Config(_) => USAGE,
        _ => DATA,
    }
}

fn train(e: &TrainError) -> u8 {
    match e {
        TrainError::Config(_) | TrainError::Kv(_) => USAGE,
        TrainError::NonFiniteLoss { .. } => NUMERIC,
        TrainError::Model(m) => model(m),
        _ => DATA,
    }
}

fn rollout(e: &RolloutError) -> u8 {
    match e {
        RolloutError::ZeroLead => USAGE,
        RolloutError::NonFinite { .. } => NUMERIC,
        RolloutError::Model { source, .. } => model(source),
        _ => DATA,
    }
}

fn score(e: &ScoreError) -> u8 {
    match e {
        ScoreError::ZeroAnomalyNorm => NUMERIC,
        _ => DATA,
    }
}

fn synth(e: &SynthError) -> u8 {
    match e {
        SynthError::Grid(_) => DATA,
        _ => USAGE,
    }
}

pub fn classify(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigProblem>().is_some() {
        return USAGE;
    }
    for cause in err.chain() {
        if cause.is::<ConfigProblem>() || cause.is::<KvError>() {
            return USAGE;
        }
        if let Some(e) = cause.downcast_ref::<ExperimentError>() {
            return match e {
                ExperimentError::Synth(e) => synth(e),
                ExperimentError::Train(e) => train(e),
                ExperimentError::Rollout(e) => rollout(e),
                ExperimentError::Score(e) => score(e),
                ExperimentError::Model(e) => model(e),
                ExperimentError::Setup(_) => USAGE,
                ExperimentError::Window(_) => DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<SynthError>() {
            return synth(e);
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return train(e);
        }
        if let Some(e) = cause.downcast_ref::<RolloutError>() {
            return rollout(e);
        }
        if let Some(e) = cause.downcast_ref::<ScoreError>() {
            return score(e);
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model(e);
        }
        if cause.is::<WindowError>() || cause.is::<GridError>() || cause.is::<CalendarError>() {
            return DATA;
        }
    }
    DATA
}
