use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use risknav::mppi::CycleDiagnostics;
use risknav::objective::CostMode;
use risknav::ood::{FeatureMap, OodDetector};
use risknav::sim::{
    aggregates_csv, records_csv, run_benchmark, run_indexed_trial, BenchmarkSuite, DetectorTraining,
    OodPolicy, TrialResult,
};
use risknav::traction::{right_cvar_empirical, CategoricalDistribution};
use serde::Serialize;

mod config;
mod manifest;

use config::{load, TrialConfig};
use manifest::{unix_now, Manifest};

#[derive(Parser)]
#[command(name = "risknav", version, about = "Risk-aware navigation over uncertain traction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop trial.
    Trial(TrialArgs),
    /// Run a benchmark suite and aggregate per arm and density.
    Bench(BenchArgs),
    /// Fit or apply the OOD detector.
    #[command(subcommand)]
    Ood(OodCommand),
    /// Evaluate CVaR of a distribution or a sample set.
    #[command(subcommand)]
    Cvar(CvarCommand),
    /// Generate an arena and write its maps and features.
    Env(EnvArgs),
}

#[derive(Args)]
struct TrialArgs {
    /// Trial config (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<CostMode>,
    /// Enables OOD handling on the arm with this confidence threshold.
    #[arg(long)]
    g_thres: Option<f64>,
    /// Also write per-cycle MPPI diagnostics.
    #[arg(long)]
    log_diagnostics: bool,
    /// Worker threads for rollout evaluation.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Write every executed trajectory under `<out>/trajectories`.
    #[arg(long)]
    dump_trajectories: bool,
}

#[derive(Subcommand)]
enum OodCommand {
    /// Fit PCA + GMM on the known cells of a feature map.
    Fit {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 2)]
        components: usize,
        #[arg(long, default_value_t = 2)]
        pca: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a feature map: per-cell confidence and the OOD mask.
    Score {
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.75)]
        g_thres: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Tail {
    Left,
    Right,
}

#[derive(Subcommand)]
enum CvarCommand {
    /// Prints a JSON object with the requested statistics.
    Eval {
        #[arg(long)]
        alpha: f64,
        /// Bin probabilities of a categorical distribution on [0, 1].
        #[arg(long, value_delimiter = ',', conflicts_with = "values", required_unless_present = "values")]
        probs: Option<Vec<f64>>,
        /// Samples; their right-tail empirical CVaR is reported.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
        /// Tail for `--probs`.
        #[arg(long, value_enum, default_value_t = Tail::Left)]
        tail: Tail,
    },
}

#[derive(Args)]
struct EnvArgs {
    /// Trial config; its environment section and seed select the arena.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<CostMode, String> {
    s.parse::<CostMode>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Trial(a) => trial(a),
        Command::Bench(a) => bench(a),
        Command::Ood(c) => ood(c),
        Command::Cvar(c) => cvar(c),
        Command::Env(a) => env(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>, outputs: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    outputs.push(name.to_string());
    Ok(())
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or_else(default_parallelism).max(1))
        .build()
        .map_err(|e| anyhow!("cannot build worker pool: {e}"))?;
    Ok(pool.install(f))
}

fn load_trial_config(path: &Path, seed: Option<u64>) -> Result<(TrialConfig, Vec<u8>)> {
    let loaded = load::<TrialConfig>(path)?;
    let mut cfg = loaded.value;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((cfg, loaded.bytes))
}

#[derive(Serialize)]
struct TrialSummary<'a> {
    arm: &'a str,
    success: bool,
    time_to_goal: Option<f64>,
    failure_reason: Option<&'a str>,
    steps: usize,
    seeds: risknav::sim::SeedTuple,
}

#[derive(Serialize)]
struct TrialRecord<'a> {
    arm: &'a str,
    #[serde(flatten)]
    result: &'a TrialResult,
}

fn diagnostics_jsonl(diags: &[CycleDiagnostics]) -> Result<String> {
    let mut out = String::new();
    for d in diags {
        out.push_str(&serde_json::to_string(d)?);
        out.push('\n');
    }
    Ok(out)
}

fn trial(a: TrialArgs) -> Result<()> {
    let started = unix_now();
    let (mut cfg, bytes) = load_trial_config(&a.config, a.seed)?;
    if let Some(mode) = a.mode {
        cfg.arm.risk.mode = mode;
    }
    if let Some(alpha) = a.alpha {
        cfg.arm.risk.alpha = alpha;
    }
    if let Some(g) = a.g_thres {
        let policy = cfg.arm.ood.get_or_insert_with(OodPolicy::default);
        policy.g_thres = g;
        cfg.detector.get_or_insert_with(DetectorTraining::default);
    }
    let suite = cfg.to_suite()?;
    let density = suite.densities[0];
    let seeds = suite.seeds(density, cfg.map_index, cfg.realization_index);
    let result: TrialResult = in_pool(a.parallelism, || {
        run_indexed_trial(
            &suite,
            &cfg.arm.name,
            density,
            cfg.map_index,
            cfg.realization_index,
            a.log_diagnostics,
        )
    })??;

    create_dir(&a.out)?;
    let mut manifest = Manifest::new("trial", started);
    manifest.input(&a.config, &bytes);
    manifest.config = serde_json::to_value(&cfg)?;
    manifest.seeds = serde_json::to_value(seeds)?;
    let summary = TrialSummary {
        arm: &cfg.arm.name,
        success: result.success,
        time_to_goal: result.time_to_goal,
        failure_reason: result.failure_reason.as_deref(),
        steps: result.trajectory.horizon(),
        seeds: result.seeds,
    };
    let summary_json = serde_json::to_string_pretty(&summary)?;
    write_file(&a.out, "trajectory.csv", result.trajectory.to_csv_string(), &mut manifest.outputs)?;
    let record = TrialRecord {
        arm: &cfg.arm.name,
        result: &result,
    };
    write_file(&a.out, "result.json", serde_json::to_string_pretty(&record)?, &mut manifest.outputs)?;
    if a.log_diagnostics {
        write_file(&a.out, "diagnostics.jsonl", diagnostics_jsonl(&result.diagnostics)?, &mut manifest.outputs)?;
    }
    manifest.write(&a.out)?;
    println!("{summary_json}");
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let started = unix_now();
    let loaded = load::<BenchmarkSuite>(&a.config)?;
    let mut suite = loaded.value;
    if let Some(s) = a.seed {
        suite.seed = s;
    }
    suite.validate()?;
    let threads = a.parallelism.unwrap_or_else(default_parallelism);
    let report = run_benchmark(&suite, threads)?;

    create_dir(&a.out)?;
    let mut manifest = Manifest::new("bench", started);
    manifest.input(&a.config, &loaded.bytes);
    manifest.config = serde_json::to_value(&suite)?;
    manifest.seeds = serde_json::json!({ "suite": suite.seed });
    write_file(&a.out, "trials.csv", records_csv(&report.records), &mut manifest.outputs)?;
    write_file(&a.out, "aggregates.csv", aggregates_csv(&report.aggregates), &mut manifest.outputs)?;
    write_file(
        &a.out,
        "aggregates.json",
        serde_json::to_string_pretty(&report.aggregates)?,
        &mut manifest.outputs,
    )?;
    if a.dump_trajectories {
        let dir = a.out.join("trajectories");
        create_dir(&dir)?;
        for (r, t) in report.records.iter().zip(&report.trajectories) {
            let name = format!(
                "trajectories/{}_d{}_m{}_r{}.csv",
                r.arm, r.density, r.map_index, r.realization_index
            );
            write_file(&a.out, &name, t.to_csv_string(), &mut manifest.outputs)?;
        }
    }
    manifest.write(&a.out)?;
    print!("{}", aggregates_csv(&report.aggregates));
    Ok(())
}

fn grid_csv<T>(width: usize, cells: &[T], fmt: impl Fn(&T) -> String) -> String {
    let mut out = String::new();
    for row in cells.chunks(width) {
        let line: Vec<String> = row.iter().map(&fmt).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn ood(c: OodCommand) -> Result<()> {
    let started = unix_now();
    match c {
        OodCommand::Fit {
            features,
            components,
            pca,
            seed,
            out,
        } => {
            let bytes = read_bytes(&features)?;
            let map = FeatureMap::from_json(std::str::from_utf8(&bytes)?)
                .with_context(|| format!("invalid feature map {}", features.display()))?;
            let (det, report) =
                OodDetector::fit_with_report(&map.known_features(), components, pca, seed)?;
            create_dir(&out)?;
            let mut manifest = Manifest::new("ood fit", started);
            manifest.input(&features, &bytes);
            manifest.config = serde_json::json!({ "components": components, "pca": pca });
            manifest.seeds = serde_json::json!({ "fit": seed });
            write_file(&out, "detector.json", det.to_json()?, &mut manifest.outputs)?;
            manifest.write(&out)?;
            println!(
                "fitted {} components on {} features: log-likelihood {:.4}, {} EM iterations",
                components,
                map.known_features().len(),
                report.log_likelihood.last().copied().unwrap_or(f64::NAN),
                report.iterations
            );
        }
        OodCommand::Score {
            detector,
            features,
            g_thres,
            out,
        } => {
            let det_bytes = read_bytes(&detector)?;
            let det = OodDetector::from_json(std::str::from_utf8(&det_bytes)?)
                .with_context(|| format!("invalid detector {}", detector.display()))?;
            let feat_bytes = read_bytes(&features)?;
            let map = FeatureMap::from_json(std::str::from_utf8(&feat_bytes)?)
                .with_context(|| format!("invalid feature map {}", features.display()))?;
            let scores = det.confidence_grid(&map)?;
            let mask = risknav::ood::mask_from_scores(map.geometry(), &scores, g_thres);
            let width = map.geometry().width;
            create_dir(&out)?;
            let mut manifest = Manifest::new("ood score", started);
            manifest.input(&detector, &det_bytes);
            manifest.input(&features, &feat_bytes);
            manifest.config = serde_json::json!({ "g_thres": g_thres });
            write_file(
                &out,
                "confidence.csv",
                grid_csv(width, &scores, |s| s.map_or(String::new(), |g| g.to_string())),
                &mut manifest.outputs,
            )?;
            write_file(
                &out,
                "mask.csv",
                grid_csv(width, &mask.cells, |&m| u8::from(m).to_string()),
                &mut manifest.outputs,
            )?;
            manifest.write(&out)?;
            println!("{} of {} cells flagged out-of-distribution", mask.count(), mask.cells.len());
        }
    }
    Ok(())
}

fn cvar(c: CvarCommand) -> Result<()> {
    let CvarCommand::Eval {
        alpha,
        probs,
        values,
        tail,
    } = c;
    let report = match (probs, values) {
        (Some(p), None) => {
            let dist = CategoricalDistribution::new(p)?;
            let value = match tail {
                Tail::Left => dist.left_cvar(alpha)?,
                Tail::Right => dist.right_cvar(alpha)?,
            };
            serde_json::json!({
                "alpha": alpha,
                "tail": match tail { Tail::Left => "left", Tail::Right => "right" },
                "mean": dist.mean(),
                "cvar": value,
            })
        }
        (None, Some(v)) => {
            let value = right_cvar_empirical(&v, alpha)?;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            serde_json::json!({ "alpha": alpha, "tail": "right", "mean": mean, "cvar": value })
        }
        _ => bail!("pass exactly one of --probs or --values"),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn env(a: EnvArgs) -> Result<()> {
    let started = unix_now();
    let (cfg, bytes) = load_trial_config(&a.config, a.seed)?;
    let suite = cfg.to_suite()?;
    let density = suite.densities[0];
    let seeds = suite.seeds(density, cfg.map_index, cfg.realization_index);
    let env = suite.environment_for(density, seeds.map)?;

    create_dir(&a.out)?;
    let mut manifest = Manifest::new("env", started);
    manifest.input(&a.config, &bytes);
    manifest.config = serde_json::to_value(&env.spec)?;
    manifest.seeds = serde_json::to_value(seeds)?;
    write_file(&a.out, "model_map.json", env.model.to_json()?, &mut manifest.outputs)?;
    write_file(&a.out, "truth_map.json", env.truth.to_json()?, &mut manifest.outputs)?;
    write_file(&a.out, "features.json", env.features.to_json()?, &mut manifest.outputs)?;
    write_file(&a.out, "semantics.csv", env.semantics_csv(), &mut manifest.outputs)?;
    manifest.write(&a.out)?;
    println!(
        "{}x{} arena, vegetation density {:.3} in the center region",
        env.spec.width,
        env.spec.height,
        env.center_density()
    );
    Ok(())
}
