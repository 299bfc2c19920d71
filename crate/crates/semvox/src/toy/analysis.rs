//! Class-importance analysis and policy comparison on top of the toy model.

use super::model::{step_mask_seed, train_toy_prepped, ScenePrep, ToyModel};
use super::{ToyError, ToyModelConfig};
use crate::losses::LossBreakdown;
use crate::masking::{
    apply_policy, mask_class_target, BudgetMode, GroupWeights, MaskAssignment, MaskPolicy,
};
use crate::metrics::{
    evaluate_reconstruction, rank_importance, ImportanceReport, RankConfig, ReconMetrics,
};
use crate::pointcloud::{ClassId, PointCloud, NUM_DETECTION_CLASSES};
use crate::voxel::{ImportanceLevel, VoxelGridConfig, VoxelGroup};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One evaluated (class, scene, seed) cell of the analysis grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisCell {
    pub class: ClassId,
    pub scene: String,
    pub seed: u64,
    pub masked_voxels: usize,
    pub metrics: ReconMetrics,
    pub chamfer_voxels: usize,
    pub unreconstructed_voxels: usize,
}

/// Result of the class-importance protocol: per-cell records, the averaged
/// per-class metrics, the ranked report, and any cells that failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisRun {
    pub cells: Vec<AnalysisCell>,
    pub per_class: BTreeMap<ClassId, ReconMetrics>,
    pub report: ImportanceReport,
    /// Human-readable records of cells that errored; the run is partial
    /// when non-empty.
    pub failures: Vec<String>,
    pub tau: usize,
    pub rho: f64,
    pub seeds: Vec<u64>,
}

/// Runs the class-importance protocol with a frozen model: for every class,
/// mask its target voxels (filling the fixed budget uniformly), score the
/// reconstruction, average over scenes and seeds, and rank.
///
/// Cells that error are recorded in `failures` and skipped; a class with no
/// surviving cell aborts with `EmptyClassCell`.
pub fn run_class_importance_analysis(
    model: &ToyModel,
    preps: &[ScenePrep],
    classes: &[ClassId],
    tau: usize,
    rho: f64,
    seeds: &[u64],
    rank_config: &RankConfig,
) -> Result<AnalysisRun, ToyError> {
    if preps.is_empty() {
        return Err(ToyError::EmptyCorpus);
    }
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    let mut per_class = BTreeMap::new();
    for &class in classes {
        let mut sums = ReconMetrics {
            chamfer_gt_to_pred: 0.0,
            chamfer_pred_to_gt: 0.0,
            occupancy_accuracy: 0.0,
        };
        let mut hits = 0usize;
        for prep in preps {
            for &seed in seeds {
                let cell = (|| -> Result<AnalysisCell, ToyError> {
                    let assignment = mask_class_target(
                        &prep.grid,
                        class,
                        tau,
                        rho,
                        seed,
                        BudgetMode::Truncate,
                    )?;
                    let recon = model.reconstruct(prep, &assignment);
                    let eval = evaluate_reconstruction(
                        &prep.grid,
                        &recon.recon,
                        &assignment,
                        model.config.chamfer_variant,
                        model.config.chamfer_scope,
                    )?;
                    Ok(AnalysisCell {
                        class,
                        scene: prep.frame_id.clone(),
                        seed,
                        masked_voxels: assignment.num_masked(),
                        metrics: eval.metrics,
                        chamfer_voxels: eval.chamfer_voxels,
                        unreconstructed_voxels: eval.unreconstructed_voxels,
                    })
                })();
                match cell {
                    Ok(cell) => {
                        sums.chamfer_gt_to_pred += cell.metrics.chamfer_gt_to_pred;
                        sums.chamfer_pred_to_gt += cell.metrics.chamfer_pred_to_gt;
                        sums.occupancy_accuracy += cell.metrics.occupancy_accuracy;
                        hits += 1;
                        cells.push(cell);
                    }
                    Err(err) => failures.push(format!(
                        "class {class} scene {} seed {seed}: {err}",
                        prep.frame_id
                    )),
                }
            }
        }
        if hits == 0 {
            return Err(ToyError::EmptyClassCell(class));
        }
        let inv = 1.0 / hits as f64;
        per_class.insert(
            class,
            ReconMetrics {
                chamfer_gt_to_pred: sums.chamfer_gt_to_pred * inv,
                chamfer_pred_to_gt: sums.chamfer_pred_to_gt * inv,
                occupancy_accuracy: sums.occupancy_accuracy * inv,
            },
        );
    }
    let report = rank_importance(&per_class, rank_config)?;
    Ok(AnalysisRun {
        cells,
        per_class,
        report,
        failures,
        tau,
        rho,
        seeds: seeds.to_vec(),
    })
}

/// Turns an importance report into the group-weighted masking policy plus
/// the class-to-level map that `assign_groups` consumes.
///
/// Classes absent from the report take `fill_missing` when given;
/// otherwise they are an error, since a partial level map cannot drive
/// group assignment on real scenes.
pub fn build_policy_from_report(
    report: &ImportanceReport,
    weights: &GroupWeights,
    rho: f64,
    seed: u64,
    fill_missing: Option<ImportanceLevel>,
) -> Result<(MaskPolicy, BTreeMap<ClassId, ImportanceLevel>), ToyError> {
    let mut levels = report.level_map();
    for id in 0..NUM_DETECTION_CLASSES as u8 {
        let class = ClassId(id);
        if let std::collections::btree_map::Entry::Vacant(e) = levels.entry(class) {
            match fill_missing {
                Some(level) => {
                    e.insert(level);
                }
                None => return Err(ToyError::MissingLevel(class)),
            }
        }
    }
    Ok((MaskPolicy::importance_weighted(*weights, rho, seed), levels))
}

/// One training setting in a comparison: a policy and its semantic-loss
/// weight (sweeping lambda against a fixed policy is a valid comparison).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSpec {
    pub label: String,
    pub policy: MaskPolicy,
    pub lambda_sem: f64,
}

/// One trained policy in a comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub label: String,
    pub policy: MaskPolicy,
    pub lambda_sem: f64,
    pub loss_log: Vec<LossBreakdown>,
    /// Reconstruction metrics averaged over (scene, eval seed) cells.
    pub final_metrics: ReconMetrics,
    /// Per-group (masked, total) counts summed over scenes for the first
    /// evaluation seed; empty for ungrouped grids.
    pub per_group_masked: BTreeMap<VoxelGroup, (usize, usize)>,
}

/// Side-by-side training comparison of masking policies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub entries: Vec<ComparisonEntry>,
    /// Per (scene, seed): the masked-voxel count shared by all policies.
    pub budget_table: Vec<(String, u64, usize)>,
}

/// Trains one model per policy on the same scenes and seeds, evaluates
/// reconstruction under each policy's own assignments, and verifies that
/// every policy masked exactly the same number of voxels per (scene, seed)
/// cell — the fixed-ratio comparability contract.
pub fn compare_policies(
    config: &ToyModelConfig,
    scenes: &[PointCloud],
    voxel_cfg: &VoxelGridConfig,
    levels: Option<&BTreeMap<ClassId, ImportanceLevel>>,
    specs: &[ComparisonSpec],
    eval_seeds: &[u64],
) -> Result<PolicyComparison, ToyError> {
    if specs.len() < 2 {
        return Err(ToyError::PolicyCount(specs.len()));
    }
    if scenes.is_empty() {
        return Err(ToyError::EmptyCorpus);
    }
    let preps: Vec<ScenePrep> = scenes
        .iter()
        .enumerate()
        .map(|(i, cloud)| ScenePrep::build(cloud, voxel_cfg, levels, config, i))
        .collect::<Result<_, _>>()?;

    let mut entries = Vec::new();
    let mut masked_counts: Vec<Vec<(String, u64, usize)>> = Vec::new();
    for ComparisonSpec {
        label,
        policy,
        lambda_sem,
    } in specs
    {
        let (model, loss_log) = train_toy_prepped(config, &preps, policy, *lambda_sem)?;
        let mut sums = ReconMetrics {
            chamfer_gt_to_pred: 0.0,
            chamfer_pred_to_gt: 0.0,
            occupancy_accuracy: 0.0,
        };
        let mut cells = 0usize;
        let mut counts = Vec::new();
        let mut per_group: BTreeMap<VoxelGroup, (usize, usize)> = BTreeMap::new();
        for prep in &preps {
            for (si, &seed) in eval_seeds.iter().enumerate() {
                let assignment: MaskAssignment =
                    apply_policy(&prep.grid, &policy.with_seed(seed), BudgetMode::Truncate)?;
                counts.push((prep.frame_id.clone(), seed, assignment.num_masked()));
                if si == 0 {
                    for (&group, &(m, t)) in &assignment.per_group_masked {
                        let entry = per_group.entry(group).or_insert((0, 0));
                        entry.0 += m;
                        entry.1 += t;
                    }
                }
                let recon = model.reconstruct(prep, &assignment);
                let eval = evaluate_reconstruction(
                    &prep.grid,
                    &recon.recon,
                    &assignment,
                    model.config.chamfer_variant,
                    model.config.chamfer_scope,
                )?;
                sums.chamfer_gt_to_pred += eval.metrics.chamfer_gt_to_pred;
                sums.chamfer_pred_to_gt += eval.metrics.chamfer_pred_to_gt;
                sums.occupancy_accuracy += eval.metrics.occupancy_accuracy;
                cells += 1;
            }
        }
        let inv = 1.0 / cells as f64;
        masked_counts.push(counts);
        entries.push(ComparisonEntry {
            label: label.clone(),
            policy: policy.clone(),
            lambda_sem: *lambda_sem,
            loss_log,
            final_metrics: ReconMetrics {
                chamfer_gt_to_pred: sums.chamfer_gt_to_pred * inv,
                chamfer_pred_to_gt: sums.chamfer_pred_to_gt * inv,
                occupancy_accuracy: sums.occupancy_accuracy * inv,
            },
            per_group_masked: per_group,
        });
    }

    // Budget equivalence: identical masked totals per (scene, seed) cell.
    let reference = &masked_counts[0];
    for cell in 0..reference.len() {
        let counts: Vec<usize> = masked_counts.iter().map(|c| c[cell].2).collect();
        if counts.iter().any(|&c| c != counts[0]) {
            let (scene, seed, _) = &reference[cell];
            return Err(ToyError::BudgetMismatch {
                scene: scene.clone(),
                seed: *seed,
                counts,
            });
        }
    }
    Ok(PolicyComparison {
        entries,
        budget_table: reference.clone(),
    })
}

/// Convenience wrapper: prepares scenes once for training plus analysis.
pub fn prepare_scenes(
    config: &ToyModelConfig,
    scenes: &[PointCloud],
    voxel_cfg: &VoxelGridConfig,
    levels: Option<&BTreeMap<ClassId, ImportanceLevel>>,
) -> Result<Vec<ScenePrep>, ToyError> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, cloud)| ScenePrep::build(cloud, voxel_cfg, levels, config, i))
        .collect()
}

/// The per-(scene, step) mask seeds a training run will consume; recorded
/// into run manifests so any single draw can be replayed.
pub fn training_mask_seeds(policy_seed: u64, scenes: usize, steps: usize) -> Vec<Vec<u64>> {
    (0..scenes)
        .map(|s| (0..steps).map(|t| step_mask_seed(policy_seed, s, t)).collect())
        .collect()
}
