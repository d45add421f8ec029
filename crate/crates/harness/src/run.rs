//! Executes a scenario against a model.

use std::fmt::Write as _;

use dlo_core::control::{
    run_closed_loop, ControlError, DiagnosticsSink, FixedPoint, LoopDiagnostics, Reference, SuccessRule, TimedPath,
};
use dlo_core::plant::{Plant, RodPlant};
use dlo_core::rbfn::RbfNetwork;
use dlo_core::scalar::norm;
use thiserror::Error;

use crate::scenario::{ReferenceSpec, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("model has m = {model}, scenario tracks {scenario} features")]
    ModelMismatch { model: usize, scenario: usize },
    #[error("target {target} (feature {feature}): {source}")]
    Control { target: usize, feature: usize, source: ControlError },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetReport {
    pub feature: usize,
    /// scenario time at which this target became active
    pub started: f64,
    pub elapsed: f64,
    /// time after `started` from which ‖Δy‖ stayed under the threshold
    pub time_to_threshold: Option<f64>,
    pub succeeded: bool,
    pub final_dy_norm: f64,
    /// largest ‖Δy‖ after the reference started moving; paths only
    pub max_dy_norm: f64,
    pub truncated_ticks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub update_enabled: bool,
    pub targets: Vec<TargetReport>,
    pub total_time: f64,
    pub completed: bool,
}

impl RunReport {
    pub const CSV_HEADER: &'static str =
        "scenario,update,target,feature,started,elapsed,time_to_threshold,succeeded,final_dy_norm,max_dy_norm,truncated_ticks";

    /// One row per target.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (i, t) in self.targets.iter().enumerate() {
            let ttt = t.time_to_threshold.map_or_else(|| "nan".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{:.4},{},{},{:.9e},{:.9e},{}",
                self.scenario,
                self.update_enabled,
                i,
                t.feature,
                t.started,
                t.elapsed,
                ttt,
                t.succeeded,
                t.final_dy_norm,
                t.max_dy_norm,
                t.truncated_ticks
            );
        }
        out
    }
}

/// Tags each diagnostics row with the target it belongs to.
struct Offset<'a> {
    inner: &'a mut dyn DiagnosticsSink<f64>,
    t0: f64,
    max_dy: f64,
}

impl DiagnosticsSink<f64> for Offset<'_> {
    fn emit(&mut self, d: &LoopDiagnostics<f64>) {
        self.max_dy = self.max_dy.max(norm(&d.dy));
        let mut shifted = d.clone();
        shifted.t += self.t0;
        self.inner.emit(&shifted);
    }
}

/// Runs every target in order on a freshly settled rod.
///
/// Fixed targets stop once the success rule holds and are nailed if asked;
/// path targets run to the end of the path plus the hold time. The whole run
/// shares `scenario.horizon`. On error, diagnostics already emitted stay in `sink`.
pub fn run_scenario(
    scenario: &Scenario,
    model: &RbfNetwork<f64>,
    update_enabled: bool,
    sink: &mut dyn DiagnosticsSink<f64>,
) -> Result<RunReport, RunError> {
    scenario.validate()?;
    let m = scenario.sim.feature_count;
    if model.dims().m != m {
        return Err(RunError::ModelMismatch { model: model.dims().m, scenario: m });
    }
    let mut plant = RodPlant::new(scenario.initial_state().map_err(ScenarioError::from)?, scenario.sim.clone());
    let t_origin = plant.time();
    let mut net = model.clone();
    let mut report = RunReport {
        scenario: scenario.name.clone(),
        update_enabled,
        targets: Vec::new(),
        total_time: 0.0,
        completed: false,
    };

    for (index, target) in scenario.targets.iter().enumerate() {
        let started = plant.time() - t_origin;
        let remaining = scenario.horizon - started;
        if remaining <= 0.0 {
            break;
        }
        debug_assert!(!plant.is_nailed(target.feature), "validated: targets are distinct");
        net.set_target(target.feature).expect("feature validated against m");
        let mut cfg = scenario.controller.config(target.feature);
        cfg.update_enabled = update_enabled && scenario.controller.update;

        let (reference, horizon, rule): (Box<dyn Reference<f64>>, f64, Option<SuccessRule<f64>>) = match &target.reference {
            ReferenceSpec::Fixed(p) => (Box::new(FixedPoint(*p)), remaining, Some(scenario.success)),
            ReferenceSpec::Path(w) => {
                let path = TimedPath::new(w.clone()).expect("validated path");
                let span = (path.end_time() + scenario.success.hold).min(remaining);
                (Box::new(path), span, None)
            }
        };
        let mut offset = Offset { inner: sink, t0: started, max_dy: 0.0 };
        let outcome = run_closed_loop(&mut plant, &mut net, &cfg, reference.as_ref(), horizon, rule, &mut offset);
        let max_dy = offset.max_dy;
        let summary = outcome.map_err(|source| RunError::Control { target: index, feature: target.feature, source })?;

        let succeeded = match &target.reference {
            ReferenceSpec::Fixed(_) => summary.succeeded,
            ReferenceSpec::Path(_) => summary.final_dy_norm < scenario.success.threshold,
        };
        report.targets.push(TargetReport {
            feature: target.feature,
            started,
            elapsed: summary.elapsed,
            time_to_threshold: summary.time_to_threshold,
            succeeded,
            final_dy_norm: summary.final_dy_norm,
            max_dy_norm: max_dy,
            truncated_ticks: summary.truncated_ticks,
        });
        if !succeeded {
            break;
        }
        if target.nail_after {
            plant.nail_feature(target.feature).map_err(|e| RunError::Control {
                target: index,
                feature: target.feature,
                source: e.into(),
            })?;
        }
    }
    report.total_time = plant.time() - t_origin;
    report.completed = report.targets.len() == scenario.targets.len() && report.targets.iter().all(|t| t.succeeded);
    Ok(report)
}
