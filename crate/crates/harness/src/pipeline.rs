//! Collect and train stages.

use std::path::Path;

use dlo_core::dataset::{collect_dataset, CollectConfig, Dataset, DatasetError, Metadata, Recording, Workspace};
use dlo_core::model_file::{self, ModelFileError};
use dlo_core::rbfn::RbfNetwork;
use dlo_core::train::{evaluate_loss, train, TrainConfig, TrainError, TrainOutcome};

use crate::scenario::{Scenario, ScenarioError};

/// Exploration cube around the scenario's gripper start.
pub fn workspace(scenario: &Scenario) -> Workspace<f64> {
    Workspace::cube(scenario.gripper_start, scenario.workspace_side)
}

pub fn collect(scenario: &Scenario, duration: f64, seed: u64) -> Result<(Recording<f64>, Metadata), CollectError> {
    let start = scenario.initial_state().map_err(ScenarioError::from)?;
    let cfg = CollectConfig::new(duration, workspace(scenario), seed);
    let rec = collect_dataset(&scenario.sim, &start, &cfg)?;
    let mut meta = cfg.metadata(&scenario.sim);
    meta.insert("scenario", &scenario.name);
    Ok((rec, meta))
}

#[derive(Debug, thiserror::Error)]
pub enum CollectError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Trains and writes the model; returns the outcome for reporting.
pub fn train_to_file(data: &Dataset<f64>, cfg: &TrainConfig<f64>, out: impl AsRef<Path>) -> Result<TrainOutcome<f64>, TrainStageError> {
    let outcome = train(data, cfg)?;
    model_file::save(&outcome.network, out)?;
    Ok(outcome)
}

#[derive(Debug, thiserror::Error)]
pub enum TrainStageError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelFileError),
}

/// Held-out loss of a trained and an untrained network under one velocity scale.
pub fn held_out(trained: &RbfNetwork<f64>, untrained: &RbfNetwork<f64>, test: &Dataset<f64>, velocity_scale: f64, beta: f64) -> (f64, f64) {
    (evaluate_loss(trained, test, velocity_scale, beta), evaluate_loss(untrained, test, velocity_scale, beta))
}
