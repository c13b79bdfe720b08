//! Sampling-based receding-horizon optimizer (MPPI) over pluggable cost modes.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, ControlLimits, ControlSequence, State, Unicycle};
use crate::objective::{rollout_cost, CostMode, ObjectiveConfig, PenaltyField, RiskConfig};
use crate::seed;
use crate::traction::{
    right_cvar_empirical, MapSampler, TractionDistributionMap, TractionRealizationMap,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiConfig {
    pub horizon: usize,
    pub dt: f64,
    pub rollout_count: usize,
    /// Standard deviations of the (v, omega) perturbations.
    pub noise_sigma: [f64; 2],
    pub limits: ControlLimits,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            dt: 0.1,
            rollout_count: 1024,
            noise_sigma: [2.0, 2.0],
            limits: ControlLimits::default(),
            temperature: 0.3,
            seed: 0,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.rollout_count == 0 {
            return Err(Error::Config("rollout_count must be >= 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.noise_sigma[0] > 0.0 && self.noise_sigma[1] > 0.0) {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.limits.v_max > 0.0 && self.limits.omega_max > 0.0) {
            return Err(Error::Config("control limits must be positive".into()));
        }
        Ok(())
    }

    pub fn dynamics(&self) -> Unicycle {
        Unicycle::new(self.dt, self.limits)
    }
}

/// Zero-mean Gaussian perturbations, one `(dv, domega)` pair per step.
pub fn sample_noise(cfg: &MppiConfig, rng: &mut seed::Rng) -> Vec<[f64; 2]> {
    let nv = Normal::new(0.0, cfg.noise_sigma[0]).expect("positive sigma");
    let nw = Normal::new(0.0, cfg.noise_sigma[1]).expect("positive sigma");
    (0..cfg.horizon)
        .map(|_| [nv.sample(rng), nw.sample(rng)])
        .collect()
}

/// `rollout_count` candidates around `nominal`; candidate 0 is the nominal
/// itself and candidate `k` uses the noise stream `(cycle_seed, k)`.
pub fn sample_perturbations(
    nominal: &[Control],
    cfg: &MppiConfig,
    cycle_seed: u64,
) -> Vec<ControlSequence> {
    (0..cfg.rollout_count)
        .into_par_iter()
        .map(|k| {
            if k == 0 {
                return nominal.iter().map(|&u| cfg.limits.clamp(u)).collect();
            }
            let noise = sample_noise(cfg, &mut seed::stream(cycle_seed, &[k as u64]));
            nominal
                .iter()
                .zip(noise)
                .map(|(u, [dv, dw])| cfg.limits.clamp(Control::new(u.v + dv, u.omega + dw)))
                .collect()
        })
        .collect()
}

/// Softmin weights `exp(-(S - min S) / lambda)`, normalized. Non-finite
/// costs get zero weight.
pub fn softmin_weights(costs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let min = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::NoViableRollout);
    }
    let raw: Vec<f64> = costs
        .iter()
        .map(|&c| {
            if c.is_finite() {
                (-(c - min) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Softmin-weighted average of the candidates, clamped to the limits.
pub fn mppi_update(
    candidates: &[ControlSequence],
    costs: &[f64],
    cfg: &MppiConfig,
) -> Result<ControlSequence> {
    weighted_update(candidates, costs, cfg).map(|(seq, _)| seq)
}

fn weighted_update(
    candidates: &[ControlSequence],
    costs: &[f64],
    cfg: &MppiConfig,
) -> Result<(ControlSequence, Vec<f64>)> {
    if candidates.is_empty() || candidates.len() != costs.len() {
        return Err(Error::Config(format!(
            "{} candidates but {} costs",
            candidates.len(),
            costs.len()
        )));
    }
    let weights = softmin_weights(costs, cfg.temperature)?;
    let horizon = candidates[0].len();
    let mut out = vec![Control::default(); horizon];
    for (cand, &w) in candidates.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        for (o, u) in out.iter_mut().zip(cand) {
            o.v += w * u.v;
            o.omega += w * u.omega;
        }
    }
    for o in &mut out {
        *o = cfg.limits.clamp(*o);
    }
    Ok((out, weights))
}

enum WorldModel {
    /// One rollout on a fixed traction map (nominal, expected, CVaR-Dyn).
    Fixed(TractionRealizationMap),
    /// CVaR of cost over maps sampled fresh every cycle.
    Sampled(MapSampler),
}

/// Everything the planner may consult: the traction distribution model
/// (already reduced for the cost mode), objective, and auxiliary penalties.
/// Ground-truth traction never enters here.
pub struct PlanningModel {
    objective: ObjectiveConfig,
    risk: RiskConfig,
    dynamics: Unicycle,
    penalties: Option<PenaltyField>,
    world: WorldModel,
}

impl PlanningModel {
    pub fn new(
        map: &TractionDistributionMap,
        objective: ObjectiveConfig,
        risk: RiskConfig,
        dynamics: Unicycle,
        penalties: Option<PenaltyField>,
    ) -> Result<Self> {
        objective.validate()?;
        risk.validate()?;
        if let Some(p) = &penalties {
            map.geometry().ensure_same(p.geometry())?;
        }
        let world = match risk.mode {
            CostMode::Nominal => WorldModel::Fixed(map.nominal_map()),
            CostMode::Expected | CostMode::CvarDyn => {
                WorldModel::Fixed(map.cvar_map(risk.traction_alpha())?)
            }
            CostMode::CvarCost => WorldModel::Sampled(map.sampler()),
        };
        Ok(Self {
            objective,
            risk,
            dynamics,
            penalties,
            world,
        })
    }

    pub fn objective(&self) -> &ObjectiveConfig {
        &self.objective
    }

    pub fn risk(&self) -> &RiskConfig {
        &self.risk
    }

    pub fn dynamics(&self) -> &Unicycle {
        &self.dynamics
    }

    /// Cost function for one planning cycle. For CVaR-Cost this samples the
    /// cycle's `map_samples` traction maps from `cycle_seed`; they are shared by
    /// every candidate scored through the returned evaluator.
    pub fn cycle(&self, cycle_seed: u64) -> CycleEvaluator<'_> {
        let maps = match &self.world {
            WorldModel::Fixed(_) => Vec::new(),
            WorldModel::Sampled(s) => s.sample_many(cycle_seed, self.risk.map_samples),
        };
        CycleEvaluator { model: self, maps }
    }
}

pub struct CycleEvaluator<'a> {
    model: &'a PlanningModel,
    maps: Vec<TractionRealizationMap>,
}

impl CycleEvaluator<'_> {
    pub fn sampled_maps(&self) -> &[TractionRealizationMap] {
        &self.maps
    }

    /// Per-map rollout costs (CVaR-Cost) or the single rollout cost.
    pub fn rollout_costs(&self, controls: &[Control], initial: State) -> Vec<f64> {
        let m = self.model;
        let eval = |field: &TractionRealizationMap| {
            rollout_cost(
                &m.dynamics,
                initial,
                controls,
                field,
                &m.objective,
                m.penalties.as_ref(),
            )
        };
        match &m.world {
            WorldModel::Fixed(map) => vec![eval(map)],
            WorldModel::Sampled(_) => self.maps.iter().map(eval).collect(),
        }
    }

    pub fn cost(&self, controls: &[Control], initial: State) -> f64 {
        let costs = self.rollout_costs(controls, initial);
        match self.model.world {
            WorldModel::Fixed(_) => costs[0],
            WorldModel::Sampled(_) => right_cvar_empirical(&costs, self.model.risk.alpha)
                .expect("alpha validated and at least one map"),
        }
    }
}

/// Per-cycle planner statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleDiagnostics {
    pub cycle: u64,
    pub best_cost: f64,
    /// Cost of the unperturbed previous plan.
    pub nominal_cost: f64,
    pub weight_entropy: f64,
    pub effective_sample_size: f64,
    pub control: Control,
}

/// Receding-horizon MPPI state: the warm-started nominal sequence and the
/// cycle counter that keys every rng stream.
#[derive(Debug, Clone)]
pub struct Planner {
    cfg: MppiConfig,
    nominal: ControlSequence,
    cycle: u64,
}

impl Planner {
    pub fn new(cfg: MppiConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            nominal: vec![Control::default(); cfg.horizon],
            cycle: 0,
        })
    }

    pub fn with_nominal(cfg: MppiConfig, nominal: ControlSequence) -> Result<Self> {
        cfg.validate()?;
        if nominal.len() != cfg.horizon {
            return Err(Error::Config(format!(
                "nominal sequence has {} steps, horizon is {}",
                nominal.len(),
                cfg.horizon
            )));
        }
        let nominal = nominal.into_iter().map(|u| cfg.limits.clamp(u)).collect();
        Ok(Self {
            cfg,
            nominal,
            cycle: 0,
        })
    }

    pub fn config(&self) -> &MppiConfig {
        &self.cfg
    }

    pub fn nominal(&self) -> &[Control] {
        &self.nominal
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn noise_seed(&self) -> u64 {
        seed::derive(self.cfg.seed, &[self.cycle, 0])
    }

    pub fn map_seed(&self) -> u64 {
        seed::derive(self.cfg.seed, &[self.cycle, 1])
    }

    /// One receding-horizon iteration: sample, score, update, then shift the
    /// plan by one step (repeating the last control) and return the control
    /// to execute now.
    pub fn plan_step(
        &mut self,
        world: &PlanningModel,
        current: State,
    ) -> Result<(Control, CycleDiagnostics)> {
        let candidates = sample_perturbations(&self.nominal, &self.cfg, self.noise_seed());
        let evaluator = world.cycle(self.map_seed());
        let costs: Vec<f64> = candidates
            .par_iter()
            .map(|c| evaluator.cost(c, current))
            .collect();
        let (updated, weights) = weighted_update(&candidates, &costs, &self.cfg)?;

        let control = updated[0];
        let mut next = updated[1..].to_vec();
        next.push(*updated.last().expect("horizon >= 1"));
        self.nominal = next;

        let diag = CycleDiagnostics {
            cycle: self.cycle,
            best_cost: costs.iter().copied().fold(f64::INFINITY, f64::min),
            nominal_cost: costs[0],
            weight_entropy: -weights
                .iter()
                .filter(|&&w| w > 0.0)
                .map(|w| w * w.ln())
                .sum::<f64>(),
            effective_sample_size: 1.0 / weights.iter().map(|w| w * w).sum::<f64>(),
            control,
        };
        self.cycle += 1;
        Ok((control, diag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;
    use crate::traction::CategoricalDistribution;

    fn small_cfg() -> MppiConfig {
        MppiConfig {
            horizon: 30,
            rollout_count: 64,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn tiny_sigma_candidates_equal_nominal() {
        let cfg = MppiConfig {
            noise_sigma: [1e-12, 1e-12],
            ..small_cfg()
        };
        let nominal = vec![Control::new(1.0, 0.5); cfg.horizon];
        for cand in sample_perturbations(&nominal, &cfg, 3) {
            for u in cand {
                assert!((u.v - 1.0).abs() < 1e-9 && (u.omega - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn perturbations_respect_limits_and_are_deterministic() {
        let cfg = small_cfg();
        let nominal = vec![Control::new(2.9, -3.0); cfg.horizon];
        let a = sample_perturbations(&nominal, &cfg, 11);
        let b = sample_perturbations(&nominal, &cfg, 11);
        assert_eq!(a, b);
        assert_ne!(a, sample_perturbations(&nominal, &cfg, 12));
        assert!(a.iter().flatten().all(|u| cfg.limits.contains(*u)));
        assert_eq!(a[0], nominal.iter().map(|&u| cfg.limits.clamp(u)).collect::<Vec<_>>());
    }

    #[test]
    fn noise_statistics() {
        let cfg = MppiConfig::default();
        let mut all = Vec::with_capacity(cfg.rollout_count * cfg.horizon);
        for k in 1..=cfg.rollout_count {
            let noise = sample_noise(&cfg, &mut seed::stream(77, &[k as u64]));
            all.extend(noise.into_iter().map(|n| n[0]));
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let std = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.2, "mean {mean}");
        assert!((std - 2.0).abs() < 0.15, "std {std}");
    }

    #[test]
    fn update_examples() {
        let cfg = small_cfg();
        let a = vec![Control::new(1.0, 0.2); 3];
        let b = vec![Control::new(-1.0, 0.6); 3];
        assert_eq!(mppi_update(std::slice::from_ref(&a), &[5.0], &cfg).unwrap(), a);

        let avg = mppi_update(&[a.clone(), b.clone()], &[2.0, 2.0], &cfg).unwrap();
        for u in &avg {
            assert!(u.v.abs() < 1e-12 && (u.omega - 0.4).abs() < 1e-12);
        }

        let w = softmin_weights(&[0.0, 100.0], 1.0).unwrap();
        assert!((w[1] - (-100.0f64).exp() / (1.0 + (-100.0f64).exp())).abs() < 1e-50);
        let near_a = mppi_update(&[a.clone(), b.clone()], &[0.0, 100.0], &cfg).unwrap();
        for (u, ua) in near_a.iter().zip(&a) {
            assert!((u.v - ua.v).abs() < 1e-6 && (u.omega - ua.omega).abs() < 1e-6);
        }

        let err = mppi_update(&[a, b], &[f64::INFINITY, f64::INFINITY], &cfg).unwrap_err();
        assert!(err.to_string().contains("no viable rollout"));
    }

    #[test]
    fn weights_sum_to_one() {
        let costs: Vec<f64> = (0..500).map(|k| (k as f64 * 0.37).sin() * 30.0 + 40.0).collect();
        let w = softmin_weights(&costs, 0.7).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let w = softmin_weights(&[1.0, f64::NAN, f64::INFINITY, 3.0], 1.0).unwrap();
        assert_eq!(w[1], 0.0);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn huge_penalty_kills_weight() {
        let w = softmin_weights(&[12.0, 12.0 + 1e6], 1.0).unwrap();
        assert_eq!(w[1], 0.0);
        assert_eq!(w[0], 1.0);
    }

    fn open_field(goal: [f64; 2]) -> PlanningModel {
        let geom = GridGeometry::new(20, 30, 1.0, [0.0, 0.0]).unwrap();
        let pm = CategoricalDistribution::point_mass(1.0, 20).unwrap();
        let map = TractionDistributionMap::filled(geom, pm.clone(), pm).unwrap();
        PlanningModel::new(
            &map,
            ObjectiveConfig {
                goal,
                ..Default::default()
            },
            RiskConfig {
                mode: CostMode::Nominal,
                ..Default::default()
            },
            Unicycle::default(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn closed_loop_makes_progress() {
        let world = open_field([15.0, 10.0]);
        let cfg = MppiConfig {
            rollout_count: 256,
            seed: 3,
            ..Default::default()
        };
        let mut planner = Planner::new(cfg).unwrap();
        let model = Unicycle::default();
        let mut s = State::new(5.0, 10.0, 0.0);
        for _ in 0..20 {
            let (u, diag) = planner.plan_step(&world, s).unwrap();
            assert!(cfg.limits.contains(u));
            assert!(diag.effective_sample_size >= 1.0 - 1e-9);
            s = model.step(s, u, crate::traction::Traction::FULL);
        }
        assert!(s.x - 5.0 >= 3.0, "progress {}", s.x - 5.0);
    }

    #[test]
    fn plan_step_is_deterministic() {
        let world = open_field([15.0, 10.0]);
        let cfg = small_cfg();
        let mut p1 = Planner::new(cfg).unwrap();
        let mut p2 = Planner::new(cfg).unwrap();
        let s = State::new(5.0, 10.0, 0.0);
        for _ in 0..3 {
            assert_eq!(p1.plan_step(&world, s).unwrap(), p2.plan_step(&world, s).unwrap());
        }
        assert_eq!(p1.nominal(), p2.nominal());
        assert_eq!(p1.cycle(), 3);
    }

    #[test]
    fn shift_repeats_last_control() {
        let world = open_field([15.0, 10.0]);
        let cfg = MppiConfig {
            noise_sigma: [1e-12, 1e-12],
            ..small_cfg()
        };
        let nominal: Vec<Control> = (0..cfg.horizon).map(|k| Control::new(k as f64 * 0.1, 0.0)).collect();
        let mut p = Planner::with_nominal(cfg, nominal.clone()).unwrap();
        let (u, _) = p.plan_step(&world, State::new(5.0, 10.0, 0.0)).unwrap();
        assert!((u.v - nominal[0].v).abs() < 1e-9);
        let next = p.nominal();
        assert!((next[0].v - nominal[1].v).abs() < 1e-9);
        assert!((next[cfg.horizon - 1].v - nominal[cfg.horizon - 1].v).abs() < 1e-9);
        assert!((next[cfg.horizon - 2].v - nominal[cfg.horizon - 1].v).abs() < 1e-9);
    }
}
