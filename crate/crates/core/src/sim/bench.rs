//! Benchmark suites: arms x vegetation densities x maps x realizations, run
//! on a bounded worker pool and reduced to per-(arm, density) statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::mppi::MppiConfig;
use crate::objective::ObjectiveConfig;
use crate::ood::OodDetector;
use crate::seed;
use crate::sim::env::{generate_environment, Environment, EnvironmentSpec};
use crate::sim::trial::{realize_ground_truth, run_trial, Arm, SeedTuple, TrialResult, TrialSettings};
use crate::{check_version, Error, Result, SCHEMA_VERSION};

const REALIZATION_TAG: u64 = 0x7265_616c;
const PLANNER_TAG: u64 = 0x706c_616e;
const DETECTOR_TAG: u64 = 0x6465_7465;

/// How the OOD detector is trained: on the features of one arena generated
/// from the suite's environment without alien blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorTraining {
    pub vegetation_density: f64,
    pub n_components: usize,
    pub n_pca: usize,
}

impl Default for DetectorTraining {
    fn default() -> Self {
        Self {
            vegetation_density: 0.5,
            n_components: 2,
            n_pca: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSuite {
    #[serde(default = "schema_version")]
    pub version: u32,
    /// Template arena; `vegetation_density` and `seed` are set per trial.
    pub environment: EnvironmentSpec,
    pub densities: Vec<f64>,
    pub maps: usize,
    pub realizations: usize,
    pub arms: Vec<Arm>,
    #[serde(default)]
    pub mppi: MppiConfig,
    /// Goal comes from the environment; `time_limit` bounds each trial.
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorTraining>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

impl BenchmarkSuite {
    pub fn validate(&self) -> Result<()> {
        check_version(self.version, "benchmark suite")?;
        if self.arms.is_empty() {
            return Err(Error::Config("arms: at least one arm is required".into()));
        }
        if self.densities.is_empty() {
            return Err(Error::Config("densities: at least one density is required".into()));
        }
        if self.maps == 0 || self.realizations == 0 {
            return Err(Error::Config("maps and realizations must be >= 1".into()));
        }
        let mut names: Vec<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("arms: duplicate arm name `{}`", w[0])));
        }
        for arm in &self.arms {
            arm.validate()?;
            if arm.ood.is_some() && self.detector.is_none() {
                return Err(Error::Config(format!(
                    "arm `{}` uses OOD handling but the suite has no [detector] section",
                    arm.name
                )));
            }
        }
        if let Some(d) = self.densities.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::Config(format!("densities: {d} is outside [0, 1]")));
        }
        if !(self.objective.time_limit > 0.0) {
            return Err(Error::Config("objective.time_limit must be positive".into()));
        }
        self.mppi.validate()?;
        self.objective_for_trials().validate()?;
        self.environment.validate()
    }

    fn objective_for_trials(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            goal: self.environment.goal,
            dt: self.mppi.dt,
            ..self.objective
        }
    }

    pub fn settings(&self, record_diagnostics: bool) -> TrialSettings {
        TrialSettings {
            mppi: self.mppi,
            objective: self.objective_for_trials(),
            record_diagnostics,
        }
    }

    pub fn map_seed(&self, density: f64, map: usize) -> u64 {
        seed::derive(self.seed, &[density.to_bits(), map as u64])
    }

    pub fn seeds(&self, density: f64, map: usize, realization: usize) -> SeedTuple {
        let map_seed = self.map_seed(density, map);
        let realization = seed::derive(map_seed, &[REALIZATION_TAG, realization as u64]);
        SeedTuple {
            map: map_seed,
            realization,
            planner: seed::derive(realization, &[PLANNER_TAG]),
        }
    }

    pub fn environment_for(&self, density: f64, map_seed: u64) -> Result<Environment> {
        let spec = EnvironmentSpec {
            vegetation_density: density,
            seed: map_seed,
            ..self.environment.clone()
        };
        generate_environment(&spec)
    }

    /// Fits the suite's detector, if any.
    pub fn fit_detector(&self) -> Result<Option<OodDetector>> {
        let Some(training) = self.detector else {
            return Ok(None);
        };
        let spec = EnvironmentSpec {
            vegetation_density: training.vegetation_density,
            seed: seed::derive(self.seed, &[DETECTOR_TAG]),
            alien: Vec::new(),
            ..self.environment.clone()
        };
        let env = generate_environment(&spec)?;
        let det = OodDetector::fit(
            &env.features.known_features(),
            training.n_components,
            training.n_pca,
            seed::derive(self.seed, &[DETECTOR_TAG, 1]),
        )?;
        Ok(Some(det))
    }
}

/// One row of the per-trial table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub arm: String,
    pub density: f64,
    pub map_index: usize,
    pub realization_index: usize,
    pub seeds: SeedTuple,
    pub success: bool,
    pub time_to_goal: Option<f64>,
    pub failure_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub arm: String,
    pub density: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub time_to_goal_mean: Option<f64>,
    pub time_to_goal_q1: Option<f64>,
    pub time_to_goal_median: Option<f64>,
    pub time_to_goal_q3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub version: u32,
    pub rows: Vec<AggregateRow>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    /// Sorted by arm, density, map, realization.
    pub records: Vec<TrialRecord>,
    /// Executed trajectories, parallel to `records`.
    pub trajectories: Vec<Trajectory>,
    pub aggregates: AggregateTable,
}

/// Linear interpolation between order statistics of sorted `v`.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Groups records by `(arm, density)` in sorted order.
pub fn aggregate(records: &[TrialRecord]) -> AggregateTable {
    let mut groups: BTreeMap<(String, u64), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        // densities are in [0, 1], so bit order matches numeric order
        groups
            .entry((r.arm.clone(), r.density.to_bits()))
            .or_default()
            .push(r);
    }
    let rows = groups
        .into_iter()
        .map(|((arm, bits), group)| {
            let mut times: Vec<f64> = group.iter().filter_map(|r| r.time_to_goal).collect();
            times.sort_by(f64::total_cmp);
            let successes = group.iter().filter(|r| r.success).count();
            AggregateRow {
                arm,
                density: f64::from_bits(bits),
                trials: group.len(),
                successes,
                success_rate: successes as f64 / group.len() as f64,
                time_to_goal_mean: (!times.is_empty())
                    .then(|| times.iter().sum::<f64>() / times.len() as f64),
                time_to_goal_q1: quantile(&times, 0.25),
                time_to_goal_median: quantile(&times, 0.5),
                time_to_goal_q3: quantile(&times, 0.75),
            }
        })
        .collect();
    AggregateTable {
        version: SCHEMA_VERSION,
        rows,
    }
}

struct Job {
    density: f64,
    map_index: usize,
    realization_index: usize,
    arm: usize,
}

/// Runs every trial of `suite` on at most `parallelism` worker threads.
/// Output is identical for any `parallelism`.
pub fn run_benchmark(suite: &BenchmarkSuite, parallelism: usize) -> Result<BenchmarkReport> {
    suite.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| run_in_pool(suite))
}

fn run_in_pool(suite: &BenchmarkSuite) -> Result<BenchmarkReport> {
    let detector = suite.fit_detector()?;
    let settings = suite.settings(false);

    let env_keys: Vec<(f64, usize)> = suite
        .densities
        .iter()
        .flat_map(|&d| (0..suite.maps).map(move |m| (d, m)))
        .collect();
    let envs: Vec<Environment> = env_keys
        .par_iter()
        .map(|&(d, m)| suite.environment_for(d, suite.map_seed(d, m)))
        .collect::<Result<_>>()?;
    let env_of = |density: f64, map: usize| {
        let i = env_keys
            .iter()
            .position(|&(d, m)| d.to_bits() == density.to_bits() && m == map)
            .expect("environment generated for every key");
        &envs[i]
    };

    let mut jobs = Vec::new();
    for &(density, map_index) in &env_keys {
        for realization_index in 0..suite.realizations {
            for arm in 0..suite.arms.len() {
                jobs.push(Job {
                    density,
                    map_index,
                    realization_index,
                    arm,
                });
            }
        }
    }

    let results: Vec<(TrialRecord, Trajectory)> = jobs
        .par_iter()
        .map(|job| {
            let env = env_of(job.density, job.map_index);
            let seeds = suite.seeds(job.density, job.map_index, job.realization_index);
            let truth = realize_ground_truth(env, seeds.realization);
            let arm = &suite.arms[job.arm];
            let result = run_trial(env, &truth, arm, detector.as_ref(), &settings, seeds)?;
            Ok((
                TrialRecord {
                    arm: arm.name.clone(),
                    density: job.density,
                    map_index: job.map_index,
                    realization_index: job.realization_index,
                    seeds,
                    success: result.success,
                    time_to_goal: result.time_to_goal,
                    failure_reason: result.failure_reason,
                },
                result.trajectory,
            ))
        })
        .collect::<Result<_>>()?;

    let mut results = results;
    results.sort_by(|(a, _), (b, _)| {
        (a.arm.as_str(), a.density.to_bits(), a.map_index, a.realization_index).cmp(&(
            b.arm.as_str(),
            b.density.to_bits(),
            b.map_index,
            b.realization_index,
        ))
    });
    let (records, trajectories): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let aggregates = aggregate(&records);
    Ok(BenchmarkReport {
        records,
        trajectories,
        aggregates,
    })
}

/// Runs the trial of `arm_name` at `(density, map, realization)` with the
/// seeds the benchmark would use.
pub fn run_indexed_trial(
    suite: &BenchmarkSuite,
    arm_name: &str,
    density: f64,
    map: usize,
    realization: usize,
    record_diagnostics: bool,
) -> Result<TrialResult> {
    run_seeded(suite, arm_name, density, suite.seeds(density, map, realization), record_diagnostics)
}

/// Re-runs a recorded trial from its seeds.
pub fn replay_trial(suite: &BenchmarkSuite, record: &TrialRecord, record_diagnostics: bool) -> Result<TrialResult> {
    run_seeded(suite, &record.arm, record.density, record.seeds, record_diagnostics)
}

fn run_seeded(
    suite: &BenchmarkSuite,
    arm_name: &str,
    density: f64,
    seeds: SeedTuple,
    record_diagnostics: bool,
) -> Result<TrialResult> {
    suite.validate()?;
    let arm = suite
        .arms
        .iter()
        .find(|a| a.name == arm_name)
        .ok_or_else(|| Error::Config(format!("no arm named `{arm_name}` in suite")))?;
    let env = suite.environment_for(density, seeds.map)?;
    let truth = realize_ground_truth(&env, seeds.realization);
    let detector = suite.fit_detector()?;
    run_trial(
        &env,
        &truth,
        arm,
        detector.as_ref(),
        &suite.settings(record_diagnostics),
        seeds,
    )
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn records_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from(
        "arm,density,map_index,realization_index,map_seed,realization_seed,planner_seed,success,time_to_goal,failure_reason\n",
    );
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            csv_text(&r.arm),
            r.density,
            r.map_index,
            r.realization_index,
            r.seeds.map,
            r.seeds.realization,
            r.seeds.planner,
            r.success,
            csv_opt(r.time_to_goal),
            csv_text(r.failure_reason.as_deref().unwrap_or("")),
        );
    }
    out
}

pub fn aggregates_csv(table: &AggregateTable) -> String {
    let mut out = String::from(
        "arm,density,trials,successes,success_rate,time_to_goal_mean,time_to_goal_q1,time_to_goal_median,time_to_goal_q3\n",
    );
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            csv_text(&r.arm),
            r.density,
            r.trials,
            r.successes,
            r.success_rate,
            csv_opt(r.time_to_goal_mean),
            csv_opt(r.time_to_goal_q1),
            csv_opt(r.time_to_goal_median),
            csv_opt(r.time_to_goal_q3),
        );
    }
    out
}

impl AggregateTable {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        check_version(t.version, "aggregate table")?;
        Ok(t)
    }

    pub fn row(&self, arm: &str, density: f64) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.density.to_bits() == density.to_bits())
    }
}
