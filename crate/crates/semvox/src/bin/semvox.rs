//! Command-line surface: voxelize, mask, analyze-importance, train-toy,
//! compare, report. Every command is a pure function of the merged run
//! config plus its input files; the merged config and all seeds land in
//! `run_manifest.json` next to the outputs.

use clap::{Args, Parser, Subcommand};
use semvox::config::{ConfigError, RunConfig, SceneSource};
use semvox::losses::LossBreakdown;
use semvox::masking::{apply_policy, GroupWeights, MaskPolicy, PolicyKind};
use semvox::metrics::{rank_importance, read_metrics_csv, ImportanceReport};
use semvox::pointcloud::{ClassId, ScanLayout};
use semvox::toy::{
    build_policy_from_report, compare_policies, prepare_scenes, run_class_importance_analysis,
    train_toy_prepped, ComparisonSpec,
};
use semvox::voxel::ImportanceLevel;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "semvox", version, about = "Semantics-guided LiDAR voxel masking toolkit")]
struct Cli {
    /// Run-config JSON; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed. Randomized commands require one; there is no wall-clock
    /// fallback.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Echo the merged config and planned outputs without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct SceneArgs {
    /// Synthetic scene spec JSON (repeatable).
    #[arg(long = "scene")]
    scenes: Vec<PathBuf>,
    /// Binary LiDAR scan (repeatable; pairs with --labels by position).
    #[arg(long = "scan")]
    scans: Vec<PathBuf>,
    /// Point-wise label file for the scan at the same position.
    #[arg(long = "labels")]
    labels: Vec<PathBuf>,
    /// Scan record layout: xyzi4 or xyzir5.
    #[arg(long)]
    layout: Option<String>,
    /// Class-map JSON (bundled nuScenes mapping when omitted).
    #[arg(long)]
    classmap: Option<PathBuf>,
}

#[derive(Args, Default)]
struct PolicyArgs {
    /// Masking policy: uniform, class-target, or importance.
    #[arg(long)]
    policy: Option<String>,
    /// Overall masking ratio.
    #[arg(long)]
    rho: Option<f64>,
    /// Class-target threshold tau.
    #[arg(long)]
    tau: Option<usize>,
    /// Target class name for class-target masking.
    #[arg(long)]
    class: Option<String>,
    /// Group weights, e.g. high=0.75,medium=0.95,low=1.05,background=1.20.
    #[arg(long)]
    weights: Option<String>,
    /// Error (instead of truncating) when a target set exceeds the budget.
    #[arg(long)]
    strict_budget: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize scenes and export the grids as JSON lines.
    Voxelize {
        #[command(flatten)]
        scene: SceneArgs,
    },
    /// Produce a mask assignment per scene under one policy.
    Mask {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Rank class importance from reconstruction degradation (or from a
    /// metrics CSV) and emit the report plus the derived masking policy.
    AnalyzeImportance {
        #[command(flatten)]
        scene: SceneArgs,
        /// Per-class metrics CSV; skips training when given.
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
        /// Analysis seeds, comma separated.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        tau: Option<usize>,
        /// Classes to analyze (default: every class present in the corpus).
        #[arg(long)]
        classes: Option<String>,
        /// Rank occupancy accuracy as a third column.
        #[arg(long)]
        include_occupancy_rank: bool,
        /// Training steps for the frozen model.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train the toy masked voxel autoencoder and log every loss term.
    TrainToy {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        lambda_sem: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train one model per (policy, lambda) setting and compare.
    Compare {
        #[command(flatten)]
        scene: SceneArgs,
        /// Policies to compare, comma separated (uniform, class-target,
        /// importance).
        #[arg(long)]
        policies: Option<String>,
        /// Semantic-loss weights to sweep, comma separated.
        #[arg(long)]
        lambdas: Option<String>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Re-rank a metrics CSV into an importance report and policy.
    Report {
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
        #[arg(long)]
        include_occupancy_rank: bool,
    },
}

/// Exit taxonomy: 0 success, 1 domain error, 2 usage or I/O error.
enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    fn code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Domain(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<semvox::masking::MaskError> for CliError {
    fn from(e: semvox::masking::MaskError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<semvox::metrics::MetricsError> for CliError {
    fn from(e: semvox::metrics::MetricsError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<semvox::toy::ToyError> for CliError {
    fn from(e: semvox::toy::ToyError) -> Self {
        CliError::Domain(e.to_string())
    }
}

fn io_usage(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.code()
        }
    }
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| CliError::Usage(format!("cannot parse {what} entry {s:?}")))
        })
        .collect()
}

fn parse_weights(raw: &str) -> Result<GroupWeights, CliError> {
    let mut weights = GroupWeights::default();
    for part in raw.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("weight entry {part:?} is not key=value")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bad weight value in {part:?}")))?;
        match key.trim() {
            "high" => weights.high = value,
            "medium" => weights.medium = value,
            "low" => weights.low = value,
            "background" => weights.background = value,
            other => return Err(CliError::Usage(format!("unknown weight group {other:?}"))),
        }
    }
    Ok(weights)
}

fn parse_class(name: &str) -> Result<ClassId, CliError> {
    ClassId::from_name(name)
        .ok_or_else(|| CliError::Usage(format!("unknown detection class {name:?}")))
}

/// Folds scene/policy flags over the config file and environment.
fn merge_config(cli: &Cli, scene: Option<&SceneArgs>, policy: Option<&PolicyArgs>) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(scene) = scene {
        if !scene.scenes.is_empty() || !scene.scans.is_empty() {
            let layout = match &scene.layout {
                Some(raw) => raw
                    .parse::<ScanLayout>()
                    .map_err(CliError::Usage)?,
                None => ScanLayout::Xyzir5,
            };
            let mut sources: Vec<SceneSource> = scene
                .scenes
                .iter()
                .map(|p| SceneSource::Spec { spec: p.clone() })
                .collect();
            for (i, scan) in scene.scans.iter().enumerate() {
                sources.push(SceneSource::Scan {
                    scan: scan.clone(),
                    labels: scene.labels.get(i).cloned(),
                    layout,
                });
            }
            cfg.scenes = sources;
        }
        if let Some(classmap) = &scene.classmap {
            cfg.classmap = Some(classmap.clone());
        }
    }
    if let Some(policy) = policy {
        if let Some(rho) = policy.rho {
            cfg.rho = Some(rho);
        }
        if let Some(tau) = policy.tau {
            cfg.tau = Some(tau);
        }
        if let Some(class) = &policy.class {
            cfg.class = Some(class.clone());
        }
        if let Some(weights) = &policy.weights {
            cfg.weights = Some(parse_weights(weights)?);
        }
        if policy.strict_budget {
            cfg.strict_budget = true;
        }
    }
    Ok(cfg)
}

/// Builds the policy named on the command line (default: uniform).
fn build_policy(cfg: &RunConfig, name: Option<&str>) -> Result<MaskPolicy, CliError> {
    let seed = cfg.require_seed()?;
    let rho = cfg.rho();
    match name.unwrap_or("uniform") {
        "uniform" => Ok(MaskPolicy::uniform(rho, seed)),
        "class-target" => {
            let class_name = cfg.class.as_deref().ok_or_else(|| {
                CliError::Usage("class-target policy needs --class".to_string())
            })?;
            Ok(MaskPolicy::class_target(
                parse_class(class_name)?,
                cfg.tau(),
                rho,
                seed,
            ))
        }
        "importance" => Ok(MaskPolicy::importance_weighted(cfg.weights(), rho, seed)),
        other => Err(CliError::Usage(format!(
            "unknown policy {other:?} (expected uniform, class-target, or importance)"
        ))),
    }
}

struct OutDir {
    path: PathBuf,
    outputs: Vec<String>,
}

impl OutDir {
    fn create(cfg: &RunConfig) -> Result<OutDir, CliError> {
        let path = cfg
            .out
            .clone()
            .ok_or_else(|| CliError::Usage("no output directory: pass --out".to_string()))?;
        std::fs::create_dir_all(&path).map_err(|e| io_usage(&path, e))?;
        Ok(OutDir {
            path,
            outputs: Vec::new(),
        })
    }

    fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.path.join(name)
    }

    fn write_json(&mut self, name: &str, value: &impl serde::Serialize) -> Result<(), CliError> {
        let path = self.file(name);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Usage(format!("serialize {name}: {e}")))?;
        std::fs::write(&path, text).map_err(|e| io_usage(&path, e))
    }

    fn write_manifest(&mut self, command: &str, cfg: &RunConfig) -> Result<(), CliError> {
        let (config_json, sha) = cfg.canonical_json();
        let manifest = serde_json::json!({
            "command": command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config": serde_json::from_str::<serde_json::Value>(&config_json).unwrap(),
            "config_sha256": sha,
            "outputs": self.outputs,
        });
        let path = self.path.join("run_manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
            .map_err(|e| io_usage(&path, e))
    }
}

fn dry_run_echo(command: &str, cfg: &RunConfig, planned: &[&str]) {
    let (json, sha) = cfg.canonical_json();
    println!("dry-run: {command}");
    println!("config_sha256: {sha}");
    println!("{json}");
    for name in planned {
        println!("would write: {name}");
    }
}

fn loss_log_csv(path: &Path, log: &[LossBreakdown]) -> Result<(), CliError> {
    let mut out = String::from("step,l_img,l_c,l_occ,l_sem,l_total\n");
    for (step, entry) in log.iter().enumerate() {
        out.push_str(&format!(
            "{step},{},{},{},{},{}\n",
            entry.l_img, entry.l_c, entry.l_occ, entry.l_sem, entry.l_total
        ));
    }
    std::fs::write(path, out).map_err(|e| io_usage(path, e))
}

/// Classes present in at least one scene (detection ids only).
fn classes_present(scenes: &[semvox::PointCloud]) -> Vec<ClassId> {
    let mut present = std::collections::BTreeSet::new();
    for cloud in scenes {
        if let Some(labels) = &cloud.labels {
            for &l in labels {
                let class = ClassId(l);
                if !class.is_background() && class.name().is_some() {
                    present.insert(class);
                }
            }
        }
    }
    present.into_iter().collect()
}

fn policy_json(
    report: &ImportanceReport,
    cfg: &RunConfig,
    seed: u64,
) -> Result<serde_json::Value, CliError> {
    // Fill classes the corpus never produced with Medium so the policy is
    // usable on fuller scenes; record exactly which were filled.
    let (policy, levels) = build_policy_from_report(
        report,
        &cfg.weights(),
        cfg.rho(),
        seed,
        Some(ImportanceLevel::Medium),
    )?;
    let reported: std::collections::BTreeSet<ClassId> =
        report.rows.iter().map(|r| r.class).collect();
    let filled: Vec<String> = levels
        .keys()
        .filter(|c| !reported.contains(c))
        .map(|c| c.to_string())
        .collect();
    let levels_by_name: BTreeMap<String, ImportanceLevel> = levels
        .iter()
        .map(|(c, &l)| (c.to_string(), l))
        .collect();
    Ok(serde_json::json!({
        "policy": policy,
        "levels": levels_by_name,
        "filled_levels": filled,
    }))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Voxelize { scene } => {
            let cfg = merge_config(&cli, Some(scene), None)?;
            if cli.dry_run {
                dry_run_echo("voxelize", &cfg, &["grid_<i>.jsonl", "voxelize_stats.json"]);
                return Ok(());
            }
            let scenes = cfg.load_scenes()?;
            if scenes.is_empty() {
                return Err(CliError::Usage("no input scenes".to_string()));
            }
            let mut out = OutDir::create(&cfg)?;
            let mut stats = Vec::new();
            for (i, cloud) in scenes.iter().enumerate() {
                let grid = semvox::voxelize(cloud, &cfg.voxel);
                let path = out.file(&format!("grid_{i}.jsonl"));
                let file = std::fs::File::create(&path).map_err(|e| io_usage(&path, e))?;
                grid.write_jsonl(std::io::BufWriter::new(file))
                    .map_err(|e| io_usage(&path, e))?;
                let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
                for voxel in grid.voxels.values() {
                    *histogram.entry(voxel.num_points()).or_insert(0) += 1;
                }
                stats.push(serde_json::json!({
                    "scene": grid.frame_id,
                    "num_points": cloud.len(),
                    "num_voxels": grid.num_voxels(),
                    "dropped_points": grid.dropped_points,
                    "truncated_points": grid.truncated_points,
                    "points_per_voxel_histogram": histogram,
                }));
                println!(
                    "scene {}: {} voxels, {} dropped",
                    grid.frame_id,
                    grid.num_voxels(),
                    grid.dropped_points
                );
            }
            out.write_json("voxelize_stats.json", &stats)?;
            out.write_manifest("voxelize", &cfg)
        }
        Command::Mask { scene, policy } => {
            let cfg = merge_config(&cli, Some(scene), Some(policy))?;
            if cli.dry_run {
                dry_run_echo("mask", &cfg, &["mask_<i>.json", "mask_stats.json"]);
                return Ok(());
            }
            let mask_policy = build_policy(&cfg, policy.policy.as_deref())?;
            let scenes = cfg.load_scenes()?;
            if scenes.is_empty() {
                return Err(CliError::Usage("no input scenes".to_string()));
            }
            let levels = cfg.level_map()?;
            let mut out = OutDir::create(&cfg)?;
            let mut stats = Vec::new();
            for (i, cloud) in scenes.iter().enumerate() {
                let mut grid = semvox::voxelize(cloud, &cfg.voxel);
                if let Some(levels) = &levels {
                    grid = grid
                        .assign_groups(levels, &semvox::voxel::canonical_priority())
                        .map_err(|e| CliError::Domain(e.to_string()))?;
                } else if matches!(mask_policy.kind, PolicyKind::ImportanceWeighted { .. }) {
                    return Err(CliError::Usage(
                        "importance policy needs a levels table (config key \"levels\")"
                            .to_string(),
                    ));
                }
                let assignment = apply_policy(&grid, &mask_policy, cfg.budget_mode())?;
                println!(
                    "scene {}: masked {} of {} voxels (ratio {:.4})",
                    grid.frame_id,
                    assignment.num_masked(),
                    grid.num_voxels(),
                    assignment.realized_ratio
                );
                stats.push(serde_json::json!({
                    "scene": grid.frame_id,
                    "num_voxels": grid.num_voxels(),
                    "masked": assignment.num_masked(),
                    "realized_ratio": assignment.realized_ratio,
                    "per_group_masked": assignment.per_group_masked,
                    "warnings": assignment.warnings,
                }));
                out.write_json(&format!("mask_{i}.json"), &assignment)?;
            }
            out.write_json("mask_stats.json", &stats)?;
            out.write_manifest("mask", &cfg)
        }
        Command::AnalyzeImportance {
            scene,
            metrics_csv,
            seeds,
            rho,
            tau,
            classes,
            include_occupancy_rank,
            steps,
        } => {
            let mut cfg = merge_config(&cli, Some(scene), None)?;
            if let Some(rho) = rho {
                cfg.rho = Some(*rho);
            }
            if let Some(tau) = tau {
                cfg.tau = Some(*tau);
            }
            if let Some(metrics_csv) = metrics_csv {
                cfg.metrics_csv = Some(metrics_csv.clone());
            }
            if *include_occupancy_rank {
                cfg.include_occupancy_rank = true;
            }
            if let Some(seeds) = seeds {
                cfg.seeds = parse_list(seeds, "seed")?;
            }
            if let Some(steps) = steps {
                cfg.toy.steps = *steps;
            }
            if cli.dry_run {
                dry_run_echo(
                    "analyze-importance",
                    &cfg,
                    &["importance_report.csv", "importance_report.json", "policy.json", "mask_stats.json"],
                );
                return Ok(());
            }
            let mut out = OutDir::create(&cfg)?;

            let report = if let Some(csv_path) = &cfg.metrics_csv {
                // Injected metrics: rank directly, no training.
                let file = std::fs::File::open(csv_path).map_err(|e| io_usage(csv_path, e))?;
                let metrics = read_metrics_csv(file)?;
                rank_importance(&metrics, &cfg.rank_config())?
            } else {
                let scenes = cfg.load_scenes()?;
                if scenes.is_empty() {
                    return Err(CliError::Usage(
                        "no input scenes (and no --metrics-csv)".to_string(),
                    ));
                }
                let root = cfg.require_seed()?;
                let mut toy_cfg = cfg.toy.clone();
                toy_cfg.seed = semvox::rng::derive_seed(root, &[0x300de1]);
                let train_policy =
                    MaskPolicy::uniform(cfg.rho(), semvox::rng::derive_seed(root, &[0x3a51]));
                let preps = prepare_scenes(&toy_cfg, &scenes, &cfg.voxel, None)?;
                let (model, loss_log) = train_toy_prepped(&toy_cfg, &preps, &train_policy, 0.0)?;
                loss_log_csv(&out.file("loss_log.csv"), &loss_log)?;
                let class_list = match classes {
                    Some(raw) => raw
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(parse_class)
                        .collect::<Result<Vec<_>, _>>()?,
                    None => classes_present(&scenes),
                };
                if class_list.is_empty() {
                    return Err(CliError::Usage(
                        "corpus has no detection-class points to analyze".to_string(),
                    ));
                }
                let analysis_seeds = cfg.eval_seeds(3)?;
                let run = run_class_importance_analysis(
                    &model,
                    &preps,
                    &class_list,
                    cfg.tau(),
                    cfg.rho(),
                    &analysis_seeds,
                    &cfg.rank_config(),
                )?;
                out.write_json(
                    "mask_stats.json",
                    &serde_json::json!({
                        "cells": run.cells,
                        "failures": run.failures,
                        "seeds": run.seeds,
                        "tau": run.tau,
                        "rho": run.rho,
                    }),
                )?;
                if !run.failures.is_empty() {
                    eprintln!("warning: {} analysis cells failed (partial results)", run.failures.len());
                }
                run.report
            };

            let csv_path = out.file("importance_report.csv");
            let file = std::fs::File::create(&csv_path).map_err(|e| io_usage(&csv_path, e))?;
            report
                .write_csv(std::io::BufWriter::new(file))
                .map_err(|e| CliError::Domain(e.to_string()))?;
            out.write_json("importance_report.json", &report)?;
            let seed = cfg.seed.unwrap_or(0);
            out.write_json("policy.json", &policy_json(&report, &cfg, seed)?)?;
            for row in &report.rows {
                println!(
                    "{:<22} mean_rank {:<5} level {:?} weight {}",
                    row.class.to_string(),
                    row.mean_rank,
                    row.level,
                    row.weight
                );
            }
            out.write_manifest("analyze-importance", &cfg)
        }
        Command::TrainToy {
            scene,
            policy,
            lambda_sem,
            steps,
        } => {
            let mut cfg = merge_config(&cli, Some(scene), Some(policy))?;
            if let Some(lambda) = lambda_sem {
                cfg.lambda_sem = Some(*lambda);
            }
            if let Some(steps) = steps {
                cfg.toy.steps = *steps;
            }
            if cli.dry_run {
                dry_run_echo("train-toy", &cfg, &["loss_log.csv", "semantic_head.ckpt"]);
                return Ok(());
            }
            let scenes = cfg.load_scenes()?;
            if scenes.is_empty() {
                return Err(CliError::Usage("no input scenes".to_string()));
            }
            let root = cfg.require_seed()?;
            let mut toy_cfg = cfg.toy.clone();
            toy_cfg.seed = semvox::rng::derive_seed(root, &[0x300de1]);
            let mask_policy = {
                let mut p = build_policy(&cfg, policy.policy.as_deref())?;
                p.seed = semvox::rng::derive_seed(root, &[0x3a51]);
                p
            };
            let levels = cfg.level_map()?;
            let preps = prepare_scenes(&toy_cfg, &scenes, &cfg.voxel, levels.as_ref())?;
            let (model, loss_log) =
                train_toy_prepped(&toy_cfg, &preps, &mask_policy, cfg.lambda_sem())?;
            let mut out = OutDir::create(&cfg)?;
            loss_log_csv(&out.file("loss_log.csv"), &loss_log)?;
            if let Some(head) = &model.semantic_head {
                let path = out.file("semantic_head.ckpt");
                head.save(&path)
                    .map_err(|e| CliError::Domain(e.to_string()))?;
            }
            let first = loss_log.first().unwrap();
            let last = loss_log.last().unwrap();
            println!(
                "trained {} steps on {} scenes: l_total {:.6} -> {:.6}",
                toy_cfg.steps,
                scenes.len(),
                first.l_total,
                last.l_total
            );
            out.write_manifest("train-toy", &cfg)
        }
        Command::Compare {
            scene,
            policies,
            lambdas,
            rho,
            seeds,
            steps,
        } => {
            let mut cfg = merge_config(&cli, Some(scene), None)?;
            if let Some(rho) = rho {
                cfg.rho = Some(*rho);
            }
            if let Some(seeds) = seeds {
                cfg.seeds = parse_list(seeds, "seed")?;
            }
            if let Some(steps) = steps {
                cfg.toy.steps = *steps;
            }
            if cli.dry_run {
                dry_run_echo("compare", &cfg, &["comparison.csv", "comparison.json"]);
                return Ok(());
            }
            let scenes = cfg.load_scenes()?;
            if scenes.is_empty() {
                return Err(CliError::Usage("no input scenes".to_string()));
            }
            let root = cfg.require_seed()?;
            let mut toy_cfg = cfg.toy.clone();
            toy_cfg.seed = semvox::rng::derive_seed(root, &[0x300de1]);
            let policy_names: Vec<String> = match policies {
                Some(raw) => raw
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
                None => vec!["uniform".to_string()],
            };
            let lambda_values: Vec<f64> = match lambdas {
                Some(raw) => parse_list(raw, "lambda")?,
                None => vec![cfg.lambda_sem()],
            };
            let levels = cfg.level_map()?;
            if levels.is_none() && policy_names.iter().any(|n| n == "importance") {
                return Err(CliError::Usage(
                    "importance policy needs a levels table (config key \"levels\")".to_string(),
                ));
            }
            let mask_seed = semvox::rng::derive_seed(root, &[0x3a51]);
            let mut specs = Vec::new();
            for name in &policy_names {
                let mut p = build_policy(&cfg, Some(name))?;
                p.seed = mask_seed; // identical streams across entries
                for &lambda in &lambda_values {
                    let label = if lambda_values.len() > 1 {
                        format!("{name}@lambda={lambda}")
                    } else {
                        name.clone()
                    };
                    specs.push(ComparisonSpec {
                        label,
                        policy: p.clone(),
                        lambda_sem: lambda,
                    });
                }
            }
            if specs.len() < 2 {
                return Err(CliError::Usage(format!(
                    "compare needs at least two (policy, lambda) settings, got {}",
                    specs.len()
                )));
            }
            let eval_seeds = cfg.eval_seeds(2)?;
            let comparison = compare_policies(
                &toy_cfg,
                &scenes,
                &cfg.voxel,
                levels.as_ref(),
                &specs,
                &eval_seeds,
            )?;
            let mut out = OutDir::create(&cfg)?;
            let mut csv = String::from(
                "label,lambda_sem,final_l_total,chamfer_gt_to_pred,chamfer_pred_to_gt,occupancy_accuracy\n",
            );
            for entry in &comparison.entries {
                let last = entry.loss_log.last().unwrap();
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    entry.label,
                    entry.lambda_sem,
                    last.l_total,
                    entry.final_metrics.chamfer_gt_to_pred,
                    entry.final_metrics.chamfer_pred_to_gt,
                    entry.final_metrics.occupancy_accuracy
                ));
                println!(
                    "{:<24} l_total {:.6} gt->pred {:.6} pred->gt {:.6} occ {:.4}",
                    entry.label,
                    last.l_total,
                    entry.final_metrics.chamfer_gt_to_pred,
                    entry.final_metrics.chamfer_pred_to_gt,
                    entry.final_metrics.occupancy_accuracy
                );
            }
            let csv_path = out.file("comparison.csv");
            std::fs::write(&csv_path, csv).map_err(|e| io_usage(&csv_path, e))?;
            out.write_json("comparison.json", &comparison)?;
            println!(
                "budget check: all {} entries masked identical voxel counts per (scene, seed)",
                comparison.entries.len()
            );
            out.write_manifest("compare", &cfg)
        }
        Command::Report {
            metrics_csv,
            include_occupancy_rank,
        } => {
            let mut cfg = merge_config(&cli, None, None)?;
            if let Some(metrics_csv) = metrics_csv {
                cfg.metrics_csv = Some(metrics_csv.clone());
            }
            if *include_occupancy_rank {
                cfg.include_occupancy_rank = true;
            }
            if cli.dry_run {
                dry_run_echo("report", &cfg, &["importance_report.csv", "policy.json"]);
                return Ok(());
            }
            let csv_in = cfg.metrics_csv.clone().ok_or_else(|| {
                CliError::Usage("report needs --metrics-csv".to_string())
            })?;
            let file = std::fs::File::open(&csv_in).map_err(|e| io_usage(&csv_in, e))?;
            let metrics = read_metrics_csv(file)?;
            let report = rank_importance(&metrics, &cfg.rank_config())?;
            let mut out = OutDir::create(&cfg)?;
            let csv_path = out.file("importance_report.csv");
            let file = std::fs::File::create(&csv_path).map_err(|e| io_usage(&csv_path, e))?;
            report
                .write_csv(std::io::BufWriter::new(file))
                .map_err(|e| CliError::Domain(e.to_string()))?;
            out.write_json("importance_report.json", &report)?;
            out.write_json("policy.json", &policy_json(&report, &cfg, cfg.seed.unwrap_or(0))?)?;
            for row in &report.rows {
                println!(
                    "{:<22} mean_rank {:<5} level {:?} weight {}",
                    row.class.to_string(),
                    row.mean_rank,
                    row.level,
                    row.weight
                );
            }
            out.write_manifest("report", &cfg)
        }
    }
}
