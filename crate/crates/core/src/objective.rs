//! Minimum-time mission cost and its risk-aware variants.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, State, TractionField, Trajectory, Unicycle};
use crate::grid::GridGeometry;
use crate::traction::{check_alpha, right_cvar_empirical, TractionRealizationMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub goal: [f64; 2],
    pub goal_radius: f64,
    /// Speed used to estimate the time-to-go left at the end of a rollout.
    pub default_speed: f64,
    /// Per-step weight on the distance to the goal.
    pub dist_weight: f64,
    pub dt: f64,
    /// Mission time limit; only the closed-loop simulation uses it.
    pub time_limit: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            goal: [0.0, 0.0],
            goal_radius: 0.5,
            default_speed: 3.0,
            dist_weight: 0.02,
            dt: 0.1,
            time_limit: 15.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.goal_radius > 0.0) {
            return Err(Error::Config("goal_radius must be positive".into()));
        }
        if !(self.default_speed > 0.0) {
            return Err(Error::Config("default_speed must be positive".into()));
        }
        if !(self.dist_weight >= 0.0) {
            return Err(Error::Config("dist_weight must be nonnegative".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.goal[0].is_finite() && self.goal[1].is_finite()) {
            return Err(Error::Config("goal must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn distance_to_goal(&self, x: f64, y: f64) -> f64 {
        let dx = self.goal[0] - x;
        let dy = self.goal[1] - y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// How candidate control sequences are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    /// No-slip rollouts.
    Nominal,
    /// Rollouts on the per-cell mean traction (CVaR-Dyn at alpha = 1).
    Expected,
    /// Rollouts on the per-cell left-tail CVaR of traction.
    CvarDyn,
    /// Right-tail CVaR of mission cost over sampled traction maps.
    CvarCost,
}

impl std::str::FromStr for CostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(Self::Nominal),
            "expected" => Ok(Self::Expected),
            "cvar-dyn" => Ok(Self::CvarDyn),
            "cvar-cost" => Ok(Self::CvarCost),
            other => Err(Error::Config(format!("unknown cost mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub mode: CostMode,
    pub alpha: f64,
    /// Traction maps sampled per planning cycle (CVaR-Cost only).
    pub map_samples: usize,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            mode: CostMode::CvarDyn,
            alpha: 0.2,
            map_samples: 1024,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.mode == CostMode::CvarCost && self.map_samples == 0 {
            return Err(Error::Config("map_samples must be >= 1 for cvar-cost".into()));
        }
        Ok(())
    }

    /// The risk level actually applied to traction (`Expected` forces 1).
    pub fn traction_alpha(&self) -> f64 {
        match self.mode {
            CostMode::Expected => 1.0,
            _ => self.alpha,
        }
    }
}

/// Nonnegative per-cell stage penalties on the traction-map grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyField {
    geometry: GridGeometry,
    values: Vec<f64>,
}

impl PenaltyField {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(Error::Geometry(format!(
                "expected {} penalty values, got {}",
                geometry.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(
                "penalties must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            values: vec![0.0; geometry.len()],
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Adds `weight` on every cell where `mask` is set.
    pub fn add_mask(&mut self, mask: &[bool], weight: f64) {
        assert_eq!(mask.len(), self.values.len(), "mask size mismatch");
        assert!(weight.is_finite() && weight >= 0.0, "invalid penalty weight");
        for (v, &m) in self.values.iter_mut().zip(mask) {
            if m {
                *v += weight;
            }
        }
    }

    /// Penalty at a world position; zero outside the grid.
    #[inline]
    pub fn at(&self, x: f64, y: f64) -> f64 {
        self.geometry
            .index_of(x, y)
            .map_or(0.0, |i| self.values[i])
    }
}

/// First step whose position lies within `goal_radius` of the goal.
pub fn done_index(traj: &Trajectory, cfg: &ObjectiveConfig) -> Option<usize> {
    traj.states
        .iter()
        .position(|s| cfg.distance_to_goal(s.x, s.y) <= cfg.goal_radius)
}

/// Terminal time-to-go plus per-step time and distance costs; the time terms
/// stop accruing once the goal has been reached, the distance term does not.
pub fn nominal_cost(traj: &Trajectory, cfg: &ObjectiveConfig) -> f64 {
    let horizon = traj.horizon();
    let done_at = done_index(traj, cfg);
    let done = |t: usize| done_at.is_some_and(|d| d <= t);
    let stage: f64 = traj.states[..horizon]
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let time = if done(t) { 0.0 } else { cfg.dt };
            time + cfg.dist_weight * cfg.distance_to_goal(s.x, s.y)
        })
        .sum();
    let last = traj.states[horizon];
    let terminal = if done(horizon) {
        0.0
    } else {
        cfg.distance_to_goal(last.x, last.y) / cfg.default_speed
    };
    stage + terminal
}

/// Sum of the penalty at each stage state `x_0 .. x_{T-1}`.
pub fn penalty_line_cost(traj: &Trajectory, penalties: &PenaltyField) -> f64 {
    let horizon = traj.horizon();
    traj.states[..horizon]
        .iter()
        .map(|s| penalties.at(s.x, s.y))
        .sum()
}

/// Rollout and cost evaluation fused into one pass, without materializing
/// the trajectory. Equal to `nominal_cost + penalty_line_cost` of
/// [`Unicycle::rollout`].
#[inline]
pub fn rollout_cost<F: TractionField + ?Sized>(
    model: &Unicycle,
    initial: State,
    controls: &[Control],
    field: &F,
    cfg: &ObjectiveConfig,
    penalties: Option<&PenaltyField>,
) -> f64 {
    let mut s = initial;
    let mut done = false;
    let mut cost = 0.0;
    for &u in controls {
        let dist = cfg.distance_to_goal(s.x, s.y);
        done = done || dist <= cfg.goal_radius;
        if !done {
            cost += cfg.dt;
        }
        cost += cfg.dist_weight * dist;
        if let Some(p) = penalties {
            cost += p.at(s.x, s.y);
        }
        s = model.step(s, u, field.traction(s.x, s.y));
    }
    let dist = cfg.distance_to_goal(s.x, s.y);
    if !(done || dist <= cfg.goal_radius) {
        cost += dist / cfg.default_speed;
    }
    cost
}

/// Right-tail CVaR of the mission cost across shared sampled traction maps.
pub fn cvar_cost(
    model: &Unicycle,
    controls: &[Control],
    initial: State,
    realizations: &[TractionRealizationMap],
    cfg: &ObjectiveConfig,
    alpha: f64,
    penalties: Option<&PenaltyField>,
) -> Result<f64> {
    if realizations.is_empty() {
        return Err(Error::EmptyRealizations);
    }
    let costs: Vec<f64> = realizations
        .iter()
        .map(|m| rollout_cost(model, initial, controls, m, cfg, penalties))
        .collect();
    right_cvar_empirical(&costs, alpha)
}

/// Mission cost of a single rollout on a CVaR-reduced traction map.
pub fn cvar_dyn_cost(
    model: &Unicycle,
    controls: &[Control],
    initial: State,
    cvar_map: &TractionRealizationMap,
    cfg: &ObjectiveConfig,
    penalties: Option<&PenaltyField>,
) -> f64 {
    rollout_cost(model, initial, controls, cvar_map, cfg, penalties)
}
