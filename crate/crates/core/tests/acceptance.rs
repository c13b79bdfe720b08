//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! The process exits successfully even when a criterion fails so that the
//! report is always produced; set `RISKNAV_ACCEPTANCE_STRICT=1` to turn any
//! FAIL into a non-zero exit. `RISKNAV_ACCEPTANCE_ONLY=1,2,9` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;
use risknav::dynamics::{Control, ControlLimits, State, Unicycle};
use risknav::grid::GridGeometry;
use risknav::mppi::{MppiConfig, Planner, PlanningModel};
use risknav::objective::{CostMode, ObjectiveConfig, RiskConfig};
use risknav::ood::{FeatureMap, GaussianMixture, OodDetector};
use risknav::seed;
use risknav::sim::{
    records_csv, replay_trial, run_benchmark, AggregateRow, AggregateTable, Arm, BenchmarkSuite, CellRect,
    DetectorTraining, EnvironmentSpec, OodHandling, OodPolicy,
};
use risknav::traction::{bin_center, CategoricalDistribution, Traction, TractionDistributionMap};

type Outcome = Result<String, String>;

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

/// Lower quantile of a categorical distribution at level `u`.
fn quantile(probs: &[f64], u: f64) -> f64 {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if acc >= u {
            return bin_center(i, probs.len());
        }
    }
    bin_center(probs.len() - 1, probs.len())
}

fn riemann_left_cvar(probs: &[f64], alpha: f64, n: usize) -> f64 {
    let h = alpha / n as f64;
    (0..n).map(|i| quantile(probs, (i as f64 + 0.5) * h)).sum::<f64>() * h / alpha
}

/// Closed-form integral of the lower quantile step function over [0, alpha].
fn exact_left_cvar(probs: &[f64], alpha: f64) -> f64 {
    let mut lo = 0.0;
    let mut integral = 0.0;
    for (i, p) in probs.iter().enumerate() {
        let hi = (lo + p).min(alpha);
        if hi > lo {
            integral += (hi - lo) * bin_center(i, probs.len());
        }
        lo += p;
        if lo >= alpha {
            break;
        }
    }
    integral / alpha
}

fn random_distribution(rng: &mut seed::Rng) -> Vec<f64> {
    let bins = rng.random_range(2..=50);
    loop {
        let w: Vec<f64> = (0..bins)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            return w.iter().map(|x| x / total).collect();
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::stream(1, &[]);
    let mut worst_oracle: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    let mut worst_bound_ratio: f64 = 0.0;
    for _ in 0..200 {
        let probs = random_distribution(&mut rng);
        let alpha = rng.random_range(1e-3..=1.0);
        let dist = CategoricalDistribution::new(probs.clone()).map_err(|e| e.to_string())?;
        let got = dist.left_cvar(alpha).map_err(|e| e.to_string())?;
        let n = 100_000;
        let riemann = riemann_left_cvar(&probs, alpha, n);
        worst_oracle = worst_oracle.max((got - riemann).abs());
        worst_exact = worst_exact.max((got - exact_left_cvar(&probs, alpha)).abs());
        // Midpoint sums of a step function miss each jump by at most h / 2.
        let span = bin_center(probs.len() - 1, probs.len()) - bin_center(0, probs.len());
        let bound = span / (2.0 * n as f64);
        worst_bound_ratio = worst_bound_ratio.max((got - riemann).abs() / bound);
        let full = dist.left_cvar(1.0).map_err(|e| e.to_string())?;
        worst_mean = worst_mean.max((full - dist.mean()).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        worst_oracle <= 1e-6 && worst_mean <= 1e-9 && elapsed < 5.0,
        format!(
            "max |cvar - riemann oracle| = {worst_oracle:.2e} (at most {worst_bound_ratio:.2} of the oracle's own \
             discretization bound), max |cvar - exact integral| = {worst_exact:.2e}, max |cvar(1) - mean| = \
             {worst_mean:.2e}, {elapsed:.2} s"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let model = Unicycle::default();
    let limits = ControlLimits::default();
    let dt = 0.1;
    let mut rng = seed::stream(2, &[]);
    let mut worst_nominal: f64 = 0.0;
    let mut worst_fixed: f64 = 0.0;
    let mut worst_linear: f64 = 0.0;
    for _ in 0..10_000 {
        let s = State::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-3.2..3.2),
        );
        let u = Control::new(
            rng.random_range(-limits.v_max..=limits.v_max),
            rng.random_range(-limits.omega_max..=limits.omega_max),
        );
        let n = model.step(s, u, Traction::new(1.0, 1.0));
        let ex = s.x + dt * u.v * s.yaw.cos();
        let ey = s.y + dt * u.v * s.yaw.sin();
        let eyaw = s.yaw + dt * u.omega;
        worst_nominal = worst_nominal.max((n.x - ex).abs().max((n.y - ey).abs()).max((n.yaw - eyaw).abs()));

        let z = model.step(s, u, Traction::new(0.0, 0.0));
        worst_fixed = worst_fixed.max((z.x - s.x).abs().max((z.y - s.y).abs()).max((z.yaw - s.yaw).abs()));

        let psi: f64 = rng.random();
        let straight = Control::new(u.v, 0.0);
        let full = model.step(s, straight, Traction::new(1.0, 1.0));
        let part = model.step(s, straight, Traction::new(psi, 1.0));
        let dx = (part.x - s.x) - psi * (full.x - s.x);
        let dy = (part.y - s.y) - psi * (full.y - s.y);
        worst_linear = worst_linear.max(dx.abs().max(dy.abs()));
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        worst_nominal <= 1e-12 && worst_fixed == 0.0 && worst_linear <= 1e-12 && elapsed < 1.0,
        format!(
            "no-slip err {worst_nominal:.1e}, zero-traction drift {worst_fixed:.1e}, linearity err {worst_linear:.1e}, {elapsed:.3} s"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let geom = GridGeometry::new(30, 30, 1.0, [0.0, 0.0]).map_err(|e| e.to_string())?;
    let bins = 20;
    let mut rng = seed::stream(3, &[]);
    // Point masses on random bins, biased towards the top bin (the closest
    // representable value to no-slip traction).
    let mut map = TractionDistributionMap::filled(
        geom,
        CategoricalDistribution::point_mass(1.0, bins).unwrap(),
        CategoricalDistribution::point_mass(1.0, bins).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    for i in 0..geom.len() {
        if rng.random_bool(0.3) {
            let lin = CategoricalDistribution::point_mass(rng.random(), bins).unwrap();
            let ang = CategoricalDistribution::point_mass(rng.random(), bins).unwrap();
            map.set_cell(i, lin, ang).map_err(|e| e.to_string())?;
        }
    }
    let objective = ObjectiveConfig {
        goal: [25.0, 20.0],
        ..Default::default()
    };
    let model = Unicycle::default();
    let start = State::new(5.0, 8.0, 0.3);
    let cost_of = |risk: RiskConfig, seq: &[Control], cycle_seed: u64| -> Result<f64, String> {
        let pm = PlanningModel::new(&map, objective, risk, model, None).map_err(|e| e.to_string())?;
        Ok(pm.cycle(cycle_seed).cost(seq, start))
    };

    let mut worst_dyn_cost: f64 = 0.0;
    let mut worst_nominal: f64 = 0.0;
    for k in 0..50u64 {
        let seq: Vec<Control> = (0..100)
            .map(|_| Control::new(rng.random_range(-1.0..3.0), rng.random_range(-1.0..1.0)))
            .collect();
        let a_dyn = rng.random_range(0.01..=1.0);
        let a_cost = rng.random_range(0.01..=1.0);
        let m = rng.random_range(1..=64);
        let nominal = cost_of(
            RiskConfig {
                mode: CostMode::Nominal,
                ..Default::default()
            },
            &seq,
            k,
        )?;
        let dyn_ = cost_of(
            RiskConfig {
                mode: CostMode::CvarDyn,
                alpha: a_dyn,
                map_samples: 1,
            },
            &seq,
            k,
        )?;
        let cost = cost_of(
            RiskConfig {
                mode: CostMode::CvarCost,
                alpha: a_cost,
                map_samples: m,
            },
            &seq,
            k,
        )?;
        worst_dyn_cost = worst_dyn_cost.max((dyn_ - cost).abs());
        worst_nominal = worst_nominal.max((nominal - dyn_).abs());
    }
    check(
        worst_dyn_cost <= 1e-9 && worst_nominal <= 1e-9,
        format!(
            "max |CVaR-Dyn - CVaR-Cost| = {worst_dyn_cost:.2e}; max |NOMINAL - CVaR-Dyn| = {worst_nominal:.2e} \
             (bin centers lie in (0,1), so the top point mass is {:.3}, not the no-slip 1.0)",
            bin_center(bins - 1, bins)
        ),
    )
}

// ---------------------------------------------------------------- 4 & 5

fn dyn_arm(name: &str, mode: CostMode, alpha: f64) -> Arm {
    Arm::new(
        name,
        RiskConfig {
            mode,
            alpha,
            map_samples: 1,
        },
    )
}

fn vegetation_suite(densities: Vec<f64>, arms: Vec<Arm>) -> BenchmarkSuite {
    BenchmarkSuite {
        version: risknav::SCHEMA_VERSION,
        environment: EnvironmentSpec::default(),
        densities,
        maps: 20,
        realizations: 5,
        arms,
        mppi: MppiConfig {
            rollout_count: 256,
            ..Default::default()
        },
        objective: ObjectiveConfig {
            time_limit: 15.0,
            ..Default::default()
        },
        seed: 1,
        detector: None,
    }
}

fn print_rows(rows: &[AggregateRow]) {
    for r in rows {
        println!(
            "    {:<14} density {:.1}: success {:>3}/{:<3} ({:>5.1}%), mean time-to-goal {}",
            r.arm,
            r.density,
            r.successes,
            r.trials,
            100.0 * r.success_rate,
            r.time_to_goal_mean.map_or("-".to_string(), |t| format!("{t:.2} s"))
        );
    }
}

fn row<'a>(t: &'a AggregateTable, arm: &str, density: f64) -> Result<&'a AggregateRow, String> {
    t.row(arm, density).ok_or_else(|| format!("missing row {arm} @ {density}"))
}

fn criterion_4(table: &AggregateTable, elapsed: f64) -> Outcome {
    let cvar = row(table, "cvar-dyn-0.2", 0.7)?.success_rate;
    let nominal = row(table, "nominal", 0.7)?.success_rate;
    let expected = row(table, "expected", 0.7)?.success_rate;
    check(
        cvar - nominal >= 0.10 && cvar - expected >= 0.10,
        format!(
            "at 70%: CVaR-Dyn(0.2) {:.0}% vs nominal {:.0}% and expected {:.0}% (margins {:+.0} / {:+.0} pp), suite {elapsed:.0} s",
            100.0 * cvar,
            100.0 * nominal,
            100.0 * expected,
            100.0 * (cvar - nominal),
            100.0 * (cvar - expected)
        ),
    )
}

/// Wilson score interval at 95%.
fn wilson(successes: usize, n: usize) -> (f64, f64) {
    let z = 1.959_963_984_540_054_f64;
    let n = n as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    (centre - half, centre + half)
}

fn time_stats(record_times: &[f64]) -> (f64, f64) {
    let n = record_times.len() as f64;
    let mean = record_times.iter().sum::<f64>() / n;
    let var = record_times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn criterion_5(sweep: &[(f64, &str)], reports: &[(&AggregateTable, &[risknav::sim::TrialRecord])]) -> Outcome {
    let find = |arm: &str| -> Result<(&AggregateRow, Vec<f64>), String> {
        for (table, records) in reports {
            if let Some(r) = table.row(arm, 0.7) {
                let times = records
                    .iter()
                    .filter(|t| t.arm == arm && t.density == 0.7)
                    .filter_map(|t| t.time_to_goal)
                    .collect();
                return Ok((r, times));
            }
        }
        Err(format!("missing arm {arm}"))
    };
    let mut points = Vec::new();
    for &(alpha, arm) in sweep {
        let (r, times) = find(arm)?;
        points.push((alpha, r.successes, r.trials, times));
    }
    let mut ok = true;
    let mut notes = Vec::new();
    for w in points.windows(2) {
        let (a_hi, s_hi, n_hi, t_hi) = &w[0];
        let (a_lo, s_lo, n_lo, t_lo) = &w[1];
        let (lower, _) = wilson(*s_hi, *n_hi);
        let p_lo = *s_lo as f64 / *n_lo as f64;
        if p_lo < lower {
            ok = false;
            notes.push(format!("success drops beyond CI from alpha {a_hi} to {a_lo}"));
        }
        if t_hi.len() >= 2 && t_lo.len() >= 2 {
            let (m_hi, se_hi) = time_stats(t_hi);
            let (m_lo, se_lo) = time_stats(t_lo);
            if m_lo < m_hi - 1.96 * (se_hi * se_hi + se_lo * se_lo).sqrt() {
                ok = false;
                notes.push(format!("time-to-goal falls beyond CI from alpha {a_hi} to {a_lo}"));
            }
        }
    }
    let means: Vec<Option<f64>> = points
        .iter()
        .map(|p| (!p.3.is_empty()).then(|| time_stats(&p.3).0))
        .collect();
    let alpha_one = sweep.iter().position(|&(a, _)| a == 1.0).ok_or("sweep lacks alpha = 1")?;
    if let Some(t1) = means[alpha_one] {
        if means.iter().flatten().any(|&t| t < t1) {
            ok = false;
            notes.push("alpha = 1 is not the fastest successful configuration".into());
        }
    } else {
        ok = false;
        notes.push("alpha = 1 has no successful trials".into());
    }
    let frontier: Vec<String> = points
        .iter()
        .zip(&means)
        .map(|((a, s, n, _), m)| {
            format!(
                "a={a}: {:.0}% / {}",
                100.0 * *s as f64 / *n as f64,
                m.map_or("-".into(), |t| format!("{t:.2} s"))
            )
        })
        .collect();
    let mut detail = frontier.join(", ");
    if !notes.is_empty() {
        detail.push_str(&format!(" [{}]", notes.join("; ")));
    }
    check(ok, detail)
}

// ---------------------------------------------------------------- 6

fn ood_arm(name: &str, g_thres: f64, handling: OodHandling) -> Arm {
    let mut arm = dyn_arm(name, CostMode::CvarDyn, 0.2);
    arm.ood = Some(OodPolicy {
        g_thres,
        handling,
        ..OodPolicy::default()
    });
    arm
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let environment = EnvironmentSpec {
        alien: vec![CellRect {
            col0: 23,
            row0: 16,
            col1: 27,
            row1: 20,
        }],
        ..EnvironmentSpec::default()
    };
    let suite = BenchmarkSuite {
        version: risknav::SCHEMA_VERSION,
        environment,
        densities: vec![0.3],
        maps: 12,
        realizations: 5,
        arms: vec![
            ood_arm("g0", 0.0, OodHandling::ZeroTraction),
            ood_arm("g75-zero", 0.75, OodHandling::ZeroTraction),
            ood_arm("g75-penalty", 0.75, OodHandling::Penalty),
        ],
        mppi: MppiConfig {
            rollout_count: 256,
            ..Default::default()
        },
        objective: ObjectiveConfig {
            time_limit: 30.0,
            ..Default::default()
        },
        seed: 2,
        detector: Some(DetectorTraining::default()),
    };
    let report = run_benchmark(&suite, threads()).map_err(|e| e.to_string())?;
    print_rows(&report.aggregates.rows);
    let g0 = row(&report.aggregates, "g0", 0.3)?;
    let zero = row(&report.aggregates, "g75-zero", 0.3)?;
    let pen = row(&report.aggregates, "g75-penalty", 0.3)?;
    let gain = zero.success_rate - g0.success_rate;
    let (tz, tp) = (zero.time_to_goal_mean, pen.time_to_goal_mean);
    let time_ok = matches!((tz, tp), (Some(z), Some(p)) if p <= z);
    let fmt = |t: Option<f64>| t.map_or("-".to_string(), |t| format!("{t:.2} s"));
    check(
        gain >= 0.20 && time_ok && zero.trials >= 60,
        format!(
            "success g=0.75 {:.0}% vs g=0 {:.0}% ({:+.0} pp); mean time-to-goal penalty {} vs zero-traction {}; {:.0} s",
            100.0 * zero.success_rate,
            100.0 * g0.success_rate,
            100.0 * gain,
            fmt(tp),
            fmt(tz),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn gaussian_cloud(n: usize, mean: &[f64], std: &[f64], rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| {
            mean.iter()
                .zip(std)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s * z
                })
                .collect()
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::stream(7, &[]);
    let mut notes = Vec::new();

    let mut data = gaussian_cloud(600, &[-4.0, 1.0], &[1.0, 0.5], &mut rng);
    data.extend(gaussian_cloud(400, &[4.0, -1.0], &[0.7, 1.0], &mut rng));
    let (gmm, report) = GaussianMixture::fit(&data, 2, 11).map_err(|e| e.to_string())?;
    // Separated clusters converge almost at once; overlapping ones with a
    // surplus component make EM take many steps.
    let mut overlap = gaussian_cloud(500, &[0.0, 0.0], &[1.0, 1.0], &mut rng);
    overlap.extend(gaussian_cloud(500, &[1.5, 0.5], &[1.0, 0.6], &mut rng));
    let (_, slow) = GaussianMixture::fit(&overlap, 3, 12).map_err(|e| e.to_string())?;
    let em_steps = report.iterations + slow.iterations;
    for r in [&report, &slow] {
        if !r.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9) {
            notes.push("EM log-likelihood decreased".to_string());
        }
    }
    if slow.iterations < 10 {
        notes.push(format!("overlapping fit took only {} EM steps", slow.iterations));
    }
    let mut comps: Vec<(f64, Vec<f64>)> = gmm.weights().into_iter().zip(gmm.means()).collect();
    comps.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]));
    let recovered = (comps[0].0 - 0.6).abs() < 0.05
        && (comps[1].0 - 0.4).abs() < 0.05
        && (comps[0].1[0] + 4.0).abs() < 0.2
        && (comps[0].1[1] - 1.0).abs() < 0.2
        && (comps[1].1[0] - 4.0).abs() < 0.2
        && (comps[1].1[1] + 1.0).abs() < 0.2;
    if !recovered {
        notes.push(format!("cluster recovery off: {comps:?}"));
    }

    let mut features = gaussian_cloud(500, &[1.0, 0.0, 0.3, 0.1], &[0.05, 0.05, 0.12, 0.03], &mut rng);
    features.extend(gaussian_cloud(300, &[0.0, 1.0, 0.5, 0.1], &[0.05, 0.05, 0.12, 0.03], &mut rng));
    let det = OodDetector::fit(&features, 2, 2, 5).map_err(|e| e.to_string())?;
    let dens: Vec<f64> = features.iter().map(|f| det.log_density(f)).collect();
    let imax = (0..dens.len()).max_by(|&a, &b| dens[a].total_cmp(&dens[b])).unwrap();
    let imin = (0..dens.len()).min_by(|&a, &b| dens[a].total_cmp(&dens[b])).unwrap();
    let g_max = det.confidence(&features[imax]).map_err(|e| e.to_string())?;
    let g_min = det.confidence(&features[imin]).map_err(|e| e.to_string())?;
    if g_max != 1.0 || g_min != 0.0 {
        notes.push(format!("endpoints {g_max} / {g_min}"));
    }

    let geom = GridGeometry::new(20, 40, 1.0, [0.0, 0.0]).map_err(|e| e.to_string())?;
    let mut cells = features[..geom.len()].to_vec();
    for c in cells.iter_mut().step_by(17) {
        c[2] += 1.5;
    }
    let mut known = vec![true; geom.len()];
    known[3] = false;
    let map = FeatureMap::new(geom, cells, known).map_err(|e| e.to_string())?;
    let mut previous: Option<Vec<bool>> = None;
    for k in 0..=20 {
        let mask = det.ood_mask(&map, k as f64 / 20.0).map_err(|e| e.to_string())?;
        if !mask.cells[3] {
            notes.push("unknown cell not flagged".into());
        }
        if let Some(prev) = &previous {
            if prev.iter().zip(&mask.cells).any(|(&p, &m)| p && !m) {
                notes.push(format!("mask shrank at g_thres {}", k as f64 / 20.0));
            }
        }
        previous = Some(mask.cells);
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 10.0 {
        notes.push("too slow".into());
    }
    check(
        notes.is_empty(),
        if notes.is_empty() {
            format!("log-likelihood monotone over {em_steps} EM steps, clusters recovered, endpoints 1/0, mask monotone; {elapsed:.2} s")
        } else {
            notes.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mut cost_arm = dyn_arm("cvar-cost", CostMode::CvarCost, 0.5);
    cost_arm.risk.map_samples = 4;
    cost_arm.rollout_count = Some(32);
    let mut ood = ood_arm("ood", 0.75, OodHandling::Penalty);
    ood.rollout_count = Some(64);
    let suite = BenchmarkSuite {
        version: risknav::SCHEMA_VERSION,
        environment: EnvironmentSpec {
            alien: vec![CellRect {
                col0: 23,
                row0: 16,
                col1: 27,
                row1: 20,
            }],
            ..EnvironmentSpec::default()
        },
        densities: vec![0.3, 0.7],
        maps: 2,
        realizations: 2,
        arms: vec![dyn_arm("nominal", CostMode::Nominal, 1.0), dyn_arm("cvar", CostMode::CvarDyn, 0.2), cost_arm, ood],
        mppi: MppiConfig {
            rollout_count: 64,
            horizon: 50,
            ..Default::default()
        },
        objective: ObjectiveConfig {
            time_limit: 4.0,
            ..Default::default()
        },
        seed: 8,
        detector: Some(DetectorTraining::default()),
    };
    let mut reference: Option<(String, String)> = None;
    let mut report_1 = None;
    for p in [1, 4, 8] {
        let report = run_benchmark(&suite, p).map_err(|e| e.to_string())?;
        let bytes = (
            report.aggregates.to_json().map_err(|e| e.to_string())?,
            records_csv(&report.records),
        );
        match &reference {
            None => reference = Some(bytes),
            Some(r) if *r != bytes => return Err(format!("output at parallelism {p} differs from parallelism 1")),
            Some(_) => {}
        }
        if p == 1 {
            report_1 = Some(report);
        }
    }
    let report = report_1.expect("parallelism 1 ran");
    for (record, trajectory) in report.records.iter().zip(&report.trajectories) {
        let replay = replay_trial(&suite, record, false).map_err(|e| e.to_string())?;
        if replay.trajectory.to_csv_string() != trajectory.to_csv_string() {
            return Err(format!(
                "replay of {} d{} m{} r{} diverged",
                record.arm, record.density, record.map_index, record.realization_index
            ));
        }
    }
    Ok(format!(
        "aggregates and trial tables byte-identical at parallelism 1/4/8; {} trials replayed exactly",
        report.records.len()
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let env = risknav::sim::generate_environment(&EnvironmentSpec {
        vegetation_density: 0.5,
        seed: 9,
        ..EnvironmentSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let mppi = MppiConfig {
        rollout_count: 256,
        horizon: 100,
        seed: 9,
        ..Default::default()
    };
    let objective = ObjectiveConfig {
        goal: env.spec.goal,
        ..Default::default()
    };
    let risk = RiskConfig {
        mode: CostMode::CvarCost,
        alpha: 0.5,
        map_samples: 256,
    };
    let model = PlanningModel::new(&env.model, objective, risk, mppi.dynamics(), None).map_err(|e| e.to_string())?;
    let mut planner = Planner::new(mppi).map_err(|e| e.to_string())?;
    let state = env.spec.start_state();
    let mut times = Vec::new();
    for _ in 0..3 {
        let t = Instant::now();
        planner.plan_step(&model, state).map_err(|e| e.to_string())?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median = times[1];
    check(
        median < 0.5,
        format!(
            "median CVaR-Cost cycle (N = M = 256, T = 100, 50x50) {:.0} ms on {} thread(s)",
            1000.0 * median,
            threads()
        ),
    )
}

// ----------------------------------------------------------------

fn run(id: usize, name: &str, f: &mut dyn FnMut() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(format!("panic: {msg}"))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS criterion {id} ({name}): {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL criterion {id} ({name}): {detail}");
            false
        }
    }
}

fn selected(id: usize) -> bool {
    match std::env::var("RISKNAV_ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|s| s.trim().parse() == Ok(id)),
        Err(_) => true,
    }
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored; `--list`
    // must print nothing for test discovery.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut passed = Vec::new();
    let mut run_selected = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if selected(id) {
            passed.push(run(id, name, f));
        }
    };
    run_selected(1, "CVaR oracle equivalence", &mut criterion_1);
    run_selected(2, "dynamics identities", &mut criterion_2);
    run_selected(3, "cost-mode reduction", &mut criterion_3);

    if selected(4) || selected(5) {
        println!("running vegetation benchmark on {} thread(s)...", threads());
        let mut cost_arm = dyn_arm("cvar-cost-0.5", CostMode::CvarCost, 0.5);
        cost_arm.risk.map_samples = 8;
        cost_arm.rollout_count = Some(128);
        let main_arms = vec![
            dyn_arm("nominal", CostMode::Nominal, 1.0),
            dyn_arm("expected", CostMode::Expected, 1.0),
            dyn_arm("cvar-dyn-0.2", CostMode::CvarDyn, 0.2),
            cost_arm,
        ];
        let t = Instant::now();
        let main_suite = vegetation_suite(vec![0.3, 0.5, 0.7], main_arms);
        let main_report = run_benchmark(&main_suite, threads());
        let main_elapsed = t.elapsed().as_secs_f64();
        match &main_report {
            Ok(r) => print_rows(&r.aggregates.rows),
            Err(e) => println!("    benchmark error: {e}"),
        }
        run_selected(4, "vegetation-density reproduction", &mut || {
            let r = main_report.as_ref().map_err(|e| e.to_string())?;
            criterion_4(&r.aggregates, main_elapsed)
        });

        let sweep_suite = vegetation_suite(
            vec![0.7],
            vec![
                dyn_arm("cvar-dyn-0.5", CostMode::CvarDyn, 0.5),
                dyn_arm("cvar-dyn-0.1", CostMode::CvarDyn, 0.1),
            ],
        );
        let sweep_report = if selected(5) {
            let r = run_benchmark(&sweep_suite, threads());
            if let Ok(r) = &r {
                print_rows(&r.aggregates.rows);
            }
            Some(r)
        } else {
            None
        };
        run_selected(5, "risk-level trade-off", &mut || {
            let main = main_report.as_ref().map_err(|e| e.to_string())?;
            let sweep = sweep_report
                .as_ref()
                .expect("sweep runs when criterion 5 is selected")
                .as_ref()
                .map_err(|e| e.to_string())?;
            criterion_5(
                &[
                    (1.0, "expected"),
                    (0.5, "cvar-dyn-0.5"),
                    (0.2, "cvar-dyn-0.2"),
                    (0.1, "cvar-dyn-0.1"),
                ],
                &[
                    (&main.aggregates, main.records.as_slice()),
                    (&sweep.aggregates, sweep.records.as_slice()),
                ],
            )
        });
    }

    run_selected(6, "OOD avoidance", &mut criterion_6);
    run_selected(7, "OOD detector unit suite", &mut criterion_7);
    run_selected(8, "determinism and replay", &mut criterion_8);
    run_selected(9, "throughput", &mut criterion_9);

    let n_pass = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {n_pass}/{} criteria passed", passed.len());
    let strict = std::env::var("RISKNAV_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && n_pass != passed.len() {
        std::process::exit(1);
    }
}
