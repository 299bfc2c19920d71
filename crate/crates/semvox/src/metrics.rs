//! Voxel-level reconstruction metrics and class-importance ranking.
//!
//! Two directional Chamfer distances and a voxel occupancy accuracy score
//! a reconstruction; ranking the per-class scores produces an importance
//! report (level and masking weight per class). Classes whose masking
//! degrades reconstruction most rank highest and are protected most.

use crate::kdtree::KdTree;
use crate::masking::{GroupWeights, MaskAssignment};
use crate::pointcloud::ClassId;
use crate::voxel::{ImportanceLevel, VoxelGrid, VoxelIndex};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("chamfer distance needs non-empty point sets on both sides")]
    EmptySet,
    #[error("occupancy accuracy needs a non-empty voxel domain")]
    EmptyDomain,
    #[error("no metrics for any class")]
    MissingClass,
    #[error("metrics missing for requested class {0}")]
    MissingClassMetrics(ClassId),
    #[error("reconstruction does not cover occupied voxel {0:?}")]
    DomainMismatch(VoxelIndex),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed metrics row: {0}")]
    MalformedRow(String),
}

/// Distance flavor for the Chamfer metrics. Euclidean (non-squared) is the
/// default; squared is available behind the same interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChamferVariant {
    #[default]
    Euclidean,
    Squared,
}

/// Whether per-voxel Chamfer values are averaged voxel-by-voxel or the
/// masked points are pooled into one global pair of sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferScope {
    #[default]
    PerVoxel,
    Global,
}

/// Directional Chamfer distance: the mean over points of `from` of the
/// distance to the nearest point of `to`. Not symmetric.
pub fn chamfer_directional(
    from: &[[f64; 3]],
    to: &[[f64; 3]],
    variant: ChamferVariant,
) -> Result<f64, MetricsError> {
    if from.is_empty() || to.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let tree = KdTree::build(to);
    let sum: f64 = from
        .iter()
        .map(|p| {
            let (_, d2) = tree.nearest(p).expect("non-empty tree");
            match variant {
                ChamferVariant::Euclidean => d2.sqrt(),
                ChamferVariant::Squared => d2,
            }
        })
        .sum();
    Ok(sum / from.len() as f64)
}

/// Fraction of `domain` voxels whose predicted occupancy bit matches the
/// truth bit. Both maps are given as their occupied sets.
pub fn occupancy_accuracy(
    predicted: &BTreeSet<VoxelIndex>,
    truth: &BTreeSet<VoxelIndex>,
    domain: &BTreeSet<VoxelIndex>,
) -> Result<f64, MetricsError> {
    if domain.is_empty() {
        return Err(MetricsError::EmptyDomain);
    }
    let matches = domain
        .iter()
        .filter(|v| predicted.contains(v) == truth.contains(v))
        .count();
    Ok(matches as f64 / domain.len() as f64)
}

/// The three reconstruction scores for one masking setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    /// Mean distance from ground-truth points to their nearest prediction.
    pub chamfer_gt_to_pred: f64,
    /// Mean distance from predicted points to their nearest ground truth.
    pub chamfer_pred_to_gt: f64,
    pub occupancy_accuracy: f64,
}

/// A predicted scene: point sets and an occupancy bit per voxel. The
/// occupancy map must cover every occupied voxel of the truth grid (it may
/// extend beyond it with predicted-empty candidates).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Reconstruction {
    pub points: BTreeMap<VoxelIndex, Vec<[f64; 3]>>,
    pub occupancy: BTreeMap<VoxelIndex, bool>,
}

/// `evaluate_reconstruction` output: the metrics plus bookkeeping about
/// skipped voxels (a voxel with an empty prediction cannot enter the
/// Chamfer average; the occupancy score captures that failure instead).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluatedMetrics {
    pub metrics: ReconMetrics,
    /// Masked voxels that entered the Chamfer averages.
    pub chamfer_voxels: usize,
    /// Masked voxels skipped because their prediction was empty.
    pub unreconstructed_voxels: usize,
}

/// Scores a reconstruction against the truth grid. Chamfer values are
/// computed over the masked voxels (the reconstructed content); occupancy
/// accuracy over the union of the truth-occupied set and every voxel the
/// reconstruction makes a call on.
pub fn evaluate_reconstruction(
    grid: &VoxelGrid,
    recon: &Reconstruction,
    assignment: &MaskAssignment,
    variant: ChamferVariant,
    scope: ChamferScope,
) -> Result<EvaluatedMetrics, MetricsError> {
    for idx in grid.voxels.keys() {
        if !recon.occupancy.contains_key(idx) {
            return Err(MetricsError::DomainMismatch(*idx));
        }
    }

    let mut gt_to_pred = Vec::new();
    let mut pred_to_gt = Vec::new();
    let mut pooled_truth: Vec<[f64; 3]> = Vec::new();
    let mut pooled_pred: Vec<[f64; 3]> = Vec::new();
    let mut unreconstructed = 0usize;
    let mut evaluated = 0usize;
    for idx in &assignment.masked {
        let Some(voxel) = grid.voxels.get(idx) else { continue };
        let truth = voxel.absolute_points();
        let pred = recon.points.get(idx).map(Vec::as_slice).unwrap_or(&[]);
        if pred.is_empty() {
            unreconstructed += 1;
            continue;
        }
        evaluated += 1;
        match scope {
            ChamferScope::PerVoxel => {
                gt_to_pred.push(chamfer_directional(&truth, pred, variant)?);
                pred_to_gt.push(chamfer_directional(pred, &truth, variant)?);
            }
            ChamferScope::Global => {
                pooled_truth.extend_from_slice(&truth);
                pooled_pred.extend_from_slice(pred);
            }
        }
    }

    let (cd_gt, cd_pred) = match scope {
        ChamferScope::PerVoxel => {
            if gt_to_pred.is_empty() {
                (0.0, 0.0)
            } else {
                let n = gt_to_pred.len() as f64;
                (
                    gt_to_pred.iter().sum::<f64>() / n,
                    pred_to_gt.iter().sum::<f64>() / n,
                )
            }
        }
        ChamferScope::Global => {
            if pooled_truth.is_empty() || pooled_pred.is_empty() {
                (0.0, 0.0)
            } else {
                (
                    chamfer_directional(&pooled_truth, &pooled_pred, variant)?,
                    chamfer_directional(&pooled_pred, &pooled_truth, variant)?,
                )
            }
        }
    };

    let truth_set: BTreeSet<VoxelIndex> = grid.voxels.keys().copied().collect();
    let predicted_set: BTreeSet<VoxelIndex> = recon
        .occupancy
        .iter()
        .filter(|(_, &bit)| bit)
        .map(|(&idx, _)| idx)
        .collect();
    let domain: BTreeSet<VoxelIndex> = recon
        .occupancy
        .keys()
        .copied()
        .chain(truth_set.iter().copied())
        .collect();
    let occ = occupancy_accuracy(&predicted_set, &truth_set, &domain)?;

    Ok(EvaluatedMetrics {
        metrics: ReconMetrics {
            chamfer_gt_to_pred: cd_gt,
            chamfer_pred_to_gt: cd_pred,
            occupancy_accuracy: occ,
        },
        chamfer_voxels: evaluated,
        unreconstructed_voxels: unreconstructed,
    })
}

/// Ranking knobs: which columns rank, where the level cuts fall, and which
/// weight each level carries. Defaults rank the two Chamfer columns only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankConfig {
    /// Also rank occupancy accuracy (descending: lower accuracy means more
    /// degradation) as a third column.
    pub include_occupancy: bool,
    /// Mean rank at or above this is High importance.
    pub high_threshold: f64,
    /// Mean rank at or above this (below high) is Medium importance.
    pub medium_threshold: f64,
    /// Level-to-weight table; the background entry is consumed by the
    /// masking policy, not by class rows.
    pub weights: GroupWeights,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            include_occupancy: false,
            high_threshold: 7.5,
            medium_threshold: 5.0,
            weights: GroupWeights::default(),
        }
    }
}

/// One class row of the importance report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub class: ClassId,
    pub metrics: ReconMetrics,
    /// Fractional rank (1 = least degradation) per Chamfer column.
    pub rank_gt_to_pred: f64,
    pub rank_pred_to_gt: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank_occupancy: Option<f64>,
    pub mean_rank: f64,
    pub level: ImportanceLevel,
    pub weight: f64,
}

/// The per-class importance table: metrics, ranks, levels, weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub rows: Vec<ImportanceRow>,
    pub config: RankConfig,
}

/// Average ranks (1-based) of `values`; exact ties share the mean of their
/// positions. `ascending` ranks small values first.
fn fractional_ranks(values: &[f64], ascending: bool) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let cmp = values[a].partial_cmp(&values[b]).expect("finite metric");
        if ascending {
            cmp
        } else {
            cmp.reverse()
        }
    });
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average 1-based rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &slot in &order[i..=j] {
            ranks[slot] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Ranks per-class reconstruction metrics into an importance report.
///
/// Each Chamfer column is ranked ascending, so the class whose masking
/// produced the largest distances (most degradation) gets the top rank C.
/// The mean of the rank columns is cut into levels by the configured
/// thresholds and each level maps to its masking weight.
pub fn rank_importance(
    per_class: &BTreeMap<ClassId, ReconMetrics>,
    config: &RankConfig,
) -> Result<ImportanceReport, MetricsError> {
    if per_class.is_empty() {
        return Err(MetricsError::MissingClass);
    }
    let classes: Vec<ClassId> = per_class.keys().copied().collect();
    let gt_col: Vec<f64> = classes
        .iter()
        .map(|c| per_class[c].chamfer_gt_to_pred)
        .collect();
    let pred_col: Vec<f64> = classes
        .iter()
        .map(|c| per_class[c].chamfer_pred_to_gt)
        .collect();
    let occ_col: Vec<f64> = classes
        .iter()
        .map(|c| per_class[c].occupancy_accuracy)
        .collect();
    let rank_gt = fractional_ranks(&gt_col, true);
    let rank_pred = fractional_ranks(&pred_col, true);
    // Lower accuracy = more degradation = higher rank, hence descending.
    let rank_occ = if config.include_occupancy {
        Some(fractional_ranks(&occ_col, false))
    } else {
        None
    };

    let rows = classes
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let (mean_rank, rank_occupancy) = match &rank_occ {
                Some(occ) => (
                    (rank_gt[i] + rank_pred[i] + occ[i]) / 3.0,
                    Some(occ[i]),
                ),
                None => ((rank_gt[i] + rank_pred[i]) / 2.0, None),
            };
            let level = if mean_rank >= config.high_threshold {
                ImportanceLevel::High
            } else if mean_rank >= config.medium_threshold {
                ImportanceLevel::Medium
            } else {
                ImportanceLevel::Low
            };
            ImportanceRow {
                class,
                metrics: per_class[&class],
                rank_gt_to_pred: rank_gt[i],
                rank_pred_to_gt: rank_pred[i],
                rank_occupancy,
                mean_rank,
                level,
                weight: config.weights.get(level.into()),
            }
        })
        .collect();
    Ok(ImportanceReport {
        rows,
        config: config.clone(),
    })
}

impl ImportanceReport {
    pub fn row(&self, class: ClassId) -> Option<&ImportanceRow> {
        self.rows.iter().find(|r| r.class == class)
    }

    /// The class-to-level map consumed by `VoxelGrid::assign_groups`.
    pub fn level_map(&self) -> BTreeMap<ClassId, ImportanceLevel> {
        self.rows.iter().map(|r| (r.class, r.level)).collect()
    }

    /// CSV mirror of the report table, one class per row.
    pub fn write_csv(&self, writer: impl Write) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "class",
            "chamfer_gt_to_pred",
            "chamfer_pred_to_gt",
            "occupancy_accuracy",
            "mean_rank",
            "level",
            "weight",
        ])?;
        for row in &self.rows {
            w.write_record([
                row.class.to_string(),
                format!("{}", row.metrics.chamfer_gt_to_pred),
                format!("{}", row.metrics.chamfer_pred_to_gt),
                format!("{}", row.metrics.occupancy_accuracy),
                format!("{}", row.mean_rank),
                serde_json::to_value(row.level).unwrap().as_str().unwrap().to_string(),
                format!("{}", row.weight),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads per-class metrics from CSV with columns
/// `class,chamfer_gt_to_pred,chamfer_pred_to_gt[,occupancy_accuracy]`.
/// Extra columns are ignored, so an exported importance report loads back.
pub fn read_metrics_csv(reader: impl Read) -> Result<BTreeMap<ClassId, ReconMetrics>, MetricsError> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let class_col = col("class").ok_or_else(|| MetricsError::MalformedRow("missing class column".into()))?;
    let gt_col = col("chamfer_gt_to_pred")
        .ok_or_else(|| MetricsError::MalformedRow("missing chamfer_gt_to_pred column".into()))?;
    let pred_col = col("chamfer_pred_to_gt")
        .ok_or_else(|| MetricsError::MalformedRow("missing chamfer_pred_to_gt column".into()))?;
    let occ_col = col("occupancy_accuracy");
    let mut out = BTreeMap::new();
    for record in r.records() {
        let record = record?;
        let name = record
            .get(class_col)
            .ok_or_else(|| MetricsError::MalformedRow("short row".into()))?;
        let class = ClassId::from_name(name)
            .ok_or_else(|| MetricsError::MalformedRow(format!("unknown class {name:?}")))?;
        let parse = |i: usize| -> Result<f64, MetricsError> {
            record
                .get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| MetricsError::MalformedRow(format!("bad number in row for {name}")))
        };
        out.insert(
            class,
            ReconMetrics {
                chamfer_gt_to_pred: parse(gt_col)?,
                chamfer_pred_to_gt: parse(pred_col)?,
                occupancy_accuracy: occ_col.map(parse).transpose()?.unwrap_or(f64::NAN),
            },
        );
    }
    if out.is_empty() {
        return Err(MetricsError::MissingClass);
    }
    Ok(out)
}

#[cfg(test)]
mod evaluate_tests {
    use super::*;
    use crate::masking::mask_uniform;
    use crate::pointcloud::PointCloud;
    use crate::voxel::{voxelize, VoxelGridConfig};

    /// Four occupied unit voxels along x, two points each.
    fn toy_grid() -> crate::voxel::VoxelGrid {
        let mut points = Vec::new();
        for v in 0..4 {
            points.push([v as f64 + 0.25, 0.5, 0.5]);
            points.push([v as f64 + 0.75, 0.5, 0.5]);
        }
        let n = points.len();
        let cloud = PointCloud::new(points, vec![0.0; n], "toy")
            .with_labels(vec![0; n])
            .unwrap();
        voxelize(&cloud, &VoxelGridConfig::unit(8.0))
    }

    fn perfect_reconstruction(grid: &crate::voxel::VoxelGrid) -> Reconstruction {
        Reconstruction {
            points: grid
                .voxels
                .iter()
                .map(|(&idx, v)| (idx, v.absolute_points()))
                .collect(),
            occupancy: grid.voxels.keys().map(|&idx| (idx, true)).collect(),
        }
    }

    #[test]
    fn perfect_reconstruction_scores_perfectly() {
        let grid = toy_grid();
        let assignment = mask_uniform(&grid, 0.5, 1).unwrap();
        let recon = perfect_reconstruction(&grid);
        let eval = evaluate_reconstruction(
            &grid,
            &recon,
            &assignment,
            ChamferVariant::Euclidean,
            ChamferScope::PerVoxel,
        )
        .unwrap();
        assert_eq!(eval.metrics.chamfer_gt_to_pred, 0.0);
        assert_eq!(eval.metrics.chamfer_pred_to_gt, 0.0);
        assert_eq!(eval.metrics.occupancy_accuracy, 1.0);
        assert_eq!(eval.unreconstructed_voxels, 0);
        assert_eq!(eval.chamfer_voxels, assignment.num_masked());
    }

    #[test]
    fn empty_predictor_scores_true_negatives_only() {
        let grid = toy_grid();
        let assignment = mask_uniform(&grid, 0.5, 2).unwrap();
        // predicts every voxel empty over occupied + 4 extra candidates
        let mut occupancy: BTreeMap<VoxelIndex, bool> =
            grid.voxels.keys().map(|&idx| (idx, false)).collect();
        for x in 0..4 {
            occupancy.insert(VoxelIndex([x, 1, 0]), false);
        }
        let recon = Reconstruction {
            points: BTreeMap::new(),
            occupancy,
        };
        let eval = evaluate_reconstruction(
            &grid,
            &recon,
            &assignment,
            ChamferVariant::Euclidean,
            ChamferScope::PerVoxel,
        )
        .unwrap();
        // 8-voxel domain, 4 true negatives
        assert_eq!(eval.metrics.occupancy_accuracy, 0.5);
        assert_eq!(eval.chamfer_voxels, 0);
        assert_eq!(eval.unreconstructed_voxels, assignment.num_masked());
        assert_eq!(eval.metrics.chamfer_gt_to_pred, 0.0);
    }

    #[test]
    fn displaced_point_matches_hand_computed_average() {
        let grid = toy_grid();
        // mask exactly voxels (0,0,0) and (1,0,0)
        let assignment = {
            let mut a = mask_uniform(&grid, 0.0, 1).unwrap();
            let masked = [VoxelIndex([0, 0, 0]), VoxelIndex([1, 0, 0])];
            for idx in masked {
                a.visible.remove(&idx);
                a.masked.insert(idx);
            }
            a
        };
        let mut recon = perfect_reconstruction(&grid);
        // displace one predicted point of voxel (0,0,0) by 0.3 in x
        recon.points.get_mut(&VoxelIndex([0, 0, 0])).unwrap()[0][0] += 0.3;
        let eval = evaluate_reconstruction(
            &grid,
            &recon,
            &assignment,
            ChamferVariant::Euclidean,
            ChamferScope::PerVoxel,
        )
        .unwrap();
        // voxel (0,0,0): truth {0.25, 0.75}, pred {0.55, 0.75} (x only).
        //   gt->pred: (|0.25-0.55| + 0) / 2 = 0.15
        //   pred->gt: (|0.55-0.75| + 0) / 2 = 0.10
        // voxel (1,0,0) is exact; averages over 2 voxels halve the values.
        assert!((eval.metrics.chamfer_gt_to_pred - 0.075).abs() < 1e-12);
        assert!((eval.metrics.chamfer_pred_to_gt - 0.05).abs() < 1e-12);
        assert_eq!(eval.metrics.occupancy_accuracy, 1.0);
    }

    #[test]
    fn missing_occupancy_coverage_is_domain_mismatch() {
        let grid = toy_grid();
        let assignment = mask_uniform(&grid, 0.5, 3).unwrap();
        let mut recon = perfect_reconstruction(&grid);
        recon.occupancy.remove(&VoxelIndex([0, 0, 0]));
        assert!(matches!(
            evaluate_reconstruction(
                &grid,
                &recon,
                &assignment,
                ChamferVariant::Euclidean,
                ChamferScope::PerVoxel,
            ),
            Err(MetricsError::DomainMismatch(_))
        ));
    }

    #[test]
    fn global_scope_pools_points_across_voxels() {
        let grid = toy_grid();
        let assignment = mask_uniform(&grid, 1.0, 4).unwrap();
        let recon = perfect_reconstruction(&grid);
        let eval = evaluate_reconstruction(
            &grid,
            &recon,
            &assignment,
            ChamferVariant::Euclidean,
            ChamferScope::Global,
        )
        .unwrap();
        assert_eq!(eval.metrics.chamfer_gt_to_pred, 0.0);
        assert_eq!(eval.metrics.chamfer_pred_to_gt, 0.0);
    }
}
