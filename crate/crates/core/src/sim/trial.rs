//! One closed-loop episode: the planner sees only the distribution map (and
//! masks derived from features); the robot moves on a frozen ground-truth
//! realization.

use serde::{Deserialize, Serialize};

use crate::dynamics::{State, Trajectory};
use crate::mppi::{CycleDiagnostics, MppiConfig, Planner, PlanningModel};
use crate::objective::{ObjectiveConfig, PenaltyField, RiskConfig};
use crate::ood::OodDetector;
use crate::seed;
use crate::sim::env::{Environment, Terrain};
use crate::traction::{sample_realization, TractionDistributionMap, TractionRealizationMap};
use crate::{Error, Result};

/// How cells flagged out-of-distribution are presented to the planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodHandling {
    /// Flagged cells become unknown, i.e. zero traction in every cost mode.
    ZeroTraction,
    /// Flagged cells keep their predicted traction but carry a stage penalty.
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodPolicy {
    pub g_thres: f64,
    pub handling: OodHandling,
    /// Per-step penalty on flagged cells when `handling = penalty`.
    pub penalty: f64,
}

impl Default for OodPolicy {
    fn default() -> Self {
        Self {
            g_thres: 0.75,
            handling: OodHandling::ZeroTraction,
            penalty: 10.0,
        }
    }
}

/// One planner configuration under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    #[serde(default)]
    pub risk: RiskConfig,
    /// Per-step stage penalty on vegetation cells.
    #[serde(default)]
    pub vegetation_penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodPolicy>,
    /// Overrides the suite's MPPI rollout count for this arm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout_count: Option<usize>,
}

impl Arm {
    pub fn new(name: impl Into<String>, risk: RiskConfig) -> Self {
        Self {
            name: name.into(),
            risk,
            vegetation_penalty: 0.0,
            ood: None,
            rollout_count: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.risk.validate()?;
        if !(self.vegetation_penalty >= 0.0 && self.vegetation_penalty.is_finite()) {
            return Err(Error::Config(format!(
                "arm `{}`: vegetation_penalty must be finite and >= 0",
                self.name
            )));
        }
        if let Some(o) = &self.ood {
            if !(o.g_thres.is_finite() && o.penalty.is_finite() && o.penalty >= 0.0) {
                return Err(Error::Config(format!("arm `{}`: invalid ood policy", self.name)));
            }
        }
        if self.rollout_count == Some(0) {
            return Err(Error::Config(format!("arm `{}`: rollout_count must be >= 1", self.name)));
        }
        Ok(())
    }
}

/// Seeds that fully determine a trial given the suite configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTuple {
    pub map: u64,
    pub realization: u64,
    pub planner: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSettings {
    pub mppi: MppiConfig,
    pub objective: ObjectiveConfig,
    pub record_diagnostics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    pub time_to_goal: Option<f64>,
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<CycleDiagnostics>,
    pub seeds: SeedTuple,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

/// Draws the frozen ground truth for one trial.
pub fn realize_ground_truth(env: &Environment, realization_seed: u64) -> TractionRealizationMap {
    sample_realization(&env.truth, &mut seed::stream(realization_seed, &[]))
}

/// The planner's view of the world for `arm`: the model map with OOD cells
/// rewritten (zero-traction handling) and the penalty field.
pub fn planner_inputs(
    env: &Environment,
    arm: &Arm,
    detector: Option<&OodDetector>,
) -> Result<(TractionDistributionMap, Option<PenaltyField>)> {
    let mut map = env.model.clone();
    let mut penalties = PenaltyField::zeros(*env.geometry());
    let mut any_penalty = false;
    if arm.vegetation_penalty > 0.0 {
        let veg: Vec<bool> = env.semantics.iter().map(|&t| t == Terrain::Vegetation).collect();
        penalties.add_mask(&veg, arm.vegetation_penalty);
        any_penalty = true;
    }
    if let Some(policy) = &arm.ood {
        let detector = detector.ok_or_else(|| {
            Error::Config(format!("arm `{}` needs an OOD detector", arm.name))
        })?;
        let mask = detector.ood_mask(&env.features, policy.g_thres)?;
        match policy.handling {
            OodHandling::ZeroTraction => {
                for (i, &m) in mask.cells.iter().enumerate() {
                    if m {
                        map.set_unknown(i);
                    }
                }
            }
            OodHandling::Penalty => {
                penalties.add_mask(&mask.cells, policy.penalty);
                any_penalty = true;
            }
        }
    }
    Ok((map, any_penalty.then_some(penalties)))
}

/// Runs one episode until the goal disc is entered or the time limit passes.
/// Planner errors end the trial as a failure with the error recorded.
pub fn run_trial(
    env: &Environment,
    truth: &TractionRealizationMap,
    arm: &Arm,
    detector: Option<&OodDetector>,
    settings: &TrialSettings,
    seeds: SeedTuple,
) -> Result<TrialResult> {
    arm.validate()?;
    let mut mppi = settings.mppi;
    mppi.seed = seeds.planner;
    if let Some(n) = arm.rollout_count {
        mppi.rollout_count = n;
    }
    let objective = ObjectiveConfig {
        goal: env.spec.goal,
        dt: mppi.dt,
        ..settings.objective
    };
    let (map, penalties) = planner_inputs(env, arm, detector)?;
    let model = PlanningModel::new(&map, objective, arm.risk, mppi.dynamics(), penalties)?;
    drop(map);
    let mut planner = Planner::new(mppi)?;
    let dynamics = mppi.dynamics();

    let max_steps = (objective.time_limit / mppi.dt + 1e-9).floor() as usize;
    let mut state: State = env.spec.start_state();
    let mut states = vec![state];
    let mut diagnostics = Vec::new();
    let reached = |s: &State| objective.distance_to_goal(s.x, s.y) <= objective.goal_radius;

    let mut outcome = if reached(&state) { Some(Ok(0.0)) } else { None };
    let mut step = 0;
    while outcome.is_none() && step < max_steps {
        match planner.plan_step(&model, state) {
            Ok((u, diag)) => {
                if settings.record_diagnostics {
                    diagnostics.push(diag);
                }
                state = dynamics.step(state, u, truth.traction_at(state.x, state.y));
                states.push(state);
                step += 1;
                if reached(&state) {
                    outcome = Some(Ok(step as f64 * mppi.dt));
                }
            }
            Err(e) => outcome = Some(Err(e.to_string())),
        }
    }
    let trajectory = Trajectory {
        states,
        dt: mppi.dt,
    };
    let (success, time_to_goal, failure_reason) = match outcome {
        Some(Ok(t)) => (true, Some(t), None),
        Some(Err(reason)) => (false, None, Some(format!("planner error: {reason}"))),
        None => (false, None, Some("time limit reached".to_string())),
    };
    Ok(TrialResult {
        success,
        time_to_goal,
        trajectory,
        diagnostics,
        seeds,
        failure_reason,
    })
}
