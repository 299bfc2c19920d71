//! Masked/visible partitions of occupied voxels.
//!
//! Three policies share one hard constraint: the number of masked voxels
//! is always `round(rho * N)` with round-half-to-even, so switching policy
//! changes only which voxels are hidden, never how many. All sampling is
//! uniform without replacement within its pool and deterministic per seed.

use crate::pointcloud::ClassId;
use crate::rng::{rng_for, sample_without_replacement};
use crate::voxel::{VoxelGrid, VoxelGroup, VoxelIndex};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("masking ratio must lie in [0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("target set of {target} voxels exceeds the masking budget of {budget}")]
    TargetExceedsBudget { target: usize, budget: usize },
    #[error("grid has voxels without an importance group; run assign_groups first")]
    UngroupedGrid,
    #[error("importance weight for group {0:?} must be positive, got {1}")]
    NonPositiveWeight(VoxelGroup, f64),
    #[error("budget of {budget} masked voxels cannot be met ({available} available)")]
    InfeasibleBudget { budget: usize, available: usize },
    #[error("assignment does not belong to this grid ({reason})")]
    GridMismatch { reason: String },
    #[error(transparent)]
    Voxel(#[from] crate::voxel::VoxelError),
}

/// Per-group masking weights. Weights below 1 protect a group (masked less
/// than the overall ratio), above 1 expose it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
    pub background: f64,
}

impl GroupWeights {
    pub fn get(&self, group: VoxelGroup) -> f64 {
        match group {
            VoxelGroup::High => self.high,
            VoxelGroup::Medium => self.medium,
            VoxelGroup::Low => self.low,
            VoxelGroup::Background => self.background,
        }
    }

    pub fn uniform() -> Self {
        GroupWeights {
            high: 1.0,
            medium: 1.0,
            low: 1.0,
            background: 1.0,
        }
    }

    fn validate(&self) -> Result<(), MaskError> {
        for group in VoxelGroup::ALL {
            let w = self.get(group);
            if !(w.is_finite() && w > 0.0) {
                return Err(MaskError::NonPositiveWeight(group, w));
            }
        }
        Ok(())
    }
}

impl Default for GroupWeights {
    /// The importance-derived defaults: protect high-importance voxels,
    /// expose background.
    fn default() -> Self {
        GroupWeights {
            high: 0.75,
            medium: 0.95,
            low: 1.05,
            background: 1.20,
        }
    }
}

/// What to do when a class-target set alone exceeds the masking budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMode {
    /// Subsample the target set down to the budget and record a warning.
    #[default]
    Truncate,
    /// Fail with `TargetExceedsBudget`.
    Strict,
}

/// A named masking policy: what to mask and with which seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    /// Overall fraction of occupied voxels to mask.
    pub rho: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Every occupied voxel equally likely.
    Uniform,
    /// Mask all voxels holding at least `tau` points of `class` first,
    /// fill the rest of the budget uniformly at random.
    ClassTarget { class: ClassId, tau: usize },
    /// Distribute the budget across importance groups in proportion to
    /// their weights.
    ImportanceWeighted { weights: GroupWeights },
}

impl MaskPolicy {
    pub fn uniform(rho: f64, seed: u64) -> Self {
        MaskPolicy {
            kind: PolicyKind::Uniform,
            rho,
            seed,
        }
    }

    pub fn class_target(class: ClassId, tau: usize, rho: f64, seed: u64) -> Self {
        MaskPolicy {
            kind: PolicyKind::ClassTarget { class, tau },
            rho,
            seed,
        }
    }

    pub fn importance_weighted(weights: GroupWeights, rho: f64, seed: u64) -> Self {
        MaskPolicy {
            kind: PolicyKind::ImportanceWeighted { weights },
            rho,
            seed,
        }
    }

    /// Same policy, different seed. Used when sweeping seeds.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut p = self.clone();
        p.seed = seed;
        p
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            PolicyKind::Uniform => format!("uniform(rho={})", self.rho),
            PolicyKind::ClassTarget { class, tau } => {
                format!("class-target({class}, tau={tau}, rho={})", self.rho)
            }
            PolicyKind::ImportanceWeighted { .. } => format!("importance(rho={})", self.rho),
        }
    }
}

/// The realized masked/visible partition for one grid and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskAssignment {
    pub policy: MaskPolicy,
    pub masked: BTreeSet<VoxelIndex>,
    pub visible: BTreeSet<VoxelIndex>,
    /// `|masked| / N`; 0 for an empty grid.
    pub realized_ratio: f64,
    /// Per-group (masked, total) counts; empty unless the grid has groups.
    pub per_group_masked: BTreeMap<VoxelGroup, (usize, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MaskAssignment {
    pub fn num_masked(&self) -> usize {
        self.masked.len()
    }

    fn empty(policy: MaskPolicy) -> Self {
        MaskAssignment {
            policy,
            masked: BTreeSet::new(),
            visible: BTreeSet::new(),
            realized_ratio: 0.0,
            per_group_masked: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }
}

/// The exact masked-voxel budget: `round(rho * n)` with ties to even.
/// Stated once and used everywhere so budgets agree across policies.
pub fn mask_budget(rho: f64, n: usize) -> usize {
    (rho * n as f64).round_ties_even() as usize
}

fn validate_rho(rho: f64) -> Result<(), MaskError> {
    if !(0.0..=1.0).contains(&rho) || rho.is_nan() {
        return Err(MaskError::InvalidRatio(rho));
    }
    Ok(())
}

fn finish(
    grid: &VoxelGrid,
    policy: MaskPolicy,
    masked: BTreeSet<VoxelIndex>,
    warnings: Vec<String>,
) -> MaskAssignment {
    let visible: BTreeSet<VoxelIndex> = grid
        .voxels
        .keys()
        .filter(|idx| !masked.contains(idx))
        .copied()
        .collect();
    let n = grid.num_voxels();
    let mut per_group_masked = BTreeMap::new();
    for voxel in grid.voxels.values() {
        if let Some(group) = voxel.group {
            let entry = per_group_masked.entry(group).or_insert((0usize, 0usize));
            entry.1 += 1;
            if masked.contains(&voxel.index) {
                entry.0 += 1;
            }
        }
    }
    MaskAssignment {
        policy,
        realized_ratio: if n == 0 { 0.0 } else { masked.len() as f64 / n as f64 },
        masked,
        visible,
        per_group_masked,
        warnings,
    }
}

/// Uniform random masking: `round(rho * N)` voxels drawn uniformly without
/// replacement from all occupied voxels.
pub fn mask_uniform(grid: &VoxelGrid, rho: f64, seed: u64) -> Result<MaskAssignment, MaskError> {
    validate_rho(rho)?;
    let policy = MaskPolicy::uniform(rho, seed);
    let indices = grid.indices();
    if indices.is_empty() {
        return Ok(MaskAssignment::empty(policy));
    }
    let budget = mask_budget(rho, indices.len());
    let mut rng = rng_for(seed, &[]);
    let masked: BTreeSet<VoxelIndex> = sample_without_replacement(&mut rng, indices.len(), budget)
        .into_iter()
        .map(|i| indices[i])
        .collect();
    Ok(finish(grid, policy, masked, Vec::new()))
}

/// Class-targeted masking: every voxel with at least `tau` points of
/// `class` is masked first, then the remaining budget is drawn uniformly
/// from the other occupied voxels. When the target set alone exceeds the
/// budget, `mode` decides between truncation (with a warning) and failure.
pub fn mask_class_target(
    grid: &VoxelGrid,
    class: ClassId,
    tau: usize,
    rho: f64,
    seed: u64,
    mode: BudgetMode,
) -> Result<MaskAssignment, MaskError> {
    validate_rho(rho)?;
    let policy = MaskPolicy::class_target(class, tau, rho, seed);
    let indices = grid.indices();
    if indices.is_empty() {
        return Ok(MaskAssignment::empty(policy));
    }
    let budget = mask_budget(rho, indices.len());
    let target: BTreeSet<VoxelIndex> = grid.target_voxel_set(class, tau)?.into_iter().collect();
    let mut rng = rng_for(seed, &[]);
    let mut warnings = Vec::new();

    let masked: BTreeSet<VoxelIndex> = if target.len() > budget {
        match mode {
            BudgetMode::Strict => {
                return Err(MaskError::TargetExceedsBudget {
                    target: target.len(),
                    budget,
                })
            }
            BudgetMode::Truncate => {
                warnings.push(format!(
                    "target set for {class} has {} voxels, truncated to budget {budget}",
                    target.len()
                ));
                let pool: Vec<VoxelIndex> = target.iter().copied().collect();
                sample_without_replacement(&mut rng, pool.len(), budget)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect()
            }
        }
    } else {
        let complement: Vec<VoxelIndex> = indices
            .iter()
            .filter(|idx| !target.contains(idx))
            .copied()
            .collect();
        let fill = budget - target.len();
        let mut masked = target.clone();
        for i in sample_without_replacement(&mut rng, complement.len(), fill) {
            masked.insert(complement[i]);
        }
        masked
    };
    Ok(finish(grid, policy, masked, warnings))
}

/// Solves per-group masking probabilities `p_g = min(1, s * w_g)` such
/// that the rounded per-group counts sum exactly to the overall budget.
///
/// Waterfall: scale all weights to meet the budget in expectation; any
/// group pushed past probability 1 is pinned there, removed from the pool,
/// and the rest rescaled. Real-valued targets are then converted to counts
/// by largest-remainder apportionment, which preserves the exact budget.
/// Empty groups drop out of the normalization.
fn allocate_group_counts(
    sizes: &BTreeMap<VoxelGroup, usize>,
    weights: &GroupWeights,
    budget: usize,
) -> Result<BTreeMap<VoxelGroup, usize>, MaskError> {
    let total: usize = sizes.values().sum();
    if budget > total {
        return Err(MaskError::InfeasibleBudget {
            budget,
            available: total,
        });
    }
    let mut pinned: BTreeMap<VoxelGroup, bool> = BTreeMap::new();
    let mut targets: BTreeMap<VoxelGroup, f64> = BTreeMap::new();
    loop {
        let pinned_mass: f64 = sizes
            .iter()
            .filter(|(g, _)| pinned.get(g).copied().unwrap_or(false))
            .map(|(_, &n)| n as f64)
            .sum();
        let weighted_mass: f64 = sizes
            .iter()
            .filter(|(g, _)| !pinned.get(g).copied().unwrap_or(false))
            .map(|(&g, &n)| weights.get(g) * n as f64)
            .sum();
        let remaining = budget as f64 - pinned_mass;
        if weighted_mass <= 0.0 {
            // Every non-empty group is pinned at 1; remaining must be 0.
            if remaining.abs() > 0.5 {
                return Err(MaskError::InfeasibleBudget {
                    budget,
                    available: total,
                });
            }
            break;
        }
        let scale = remaining / weighted_mass;
        let mut newly_pinned = false;
        for &group in sizes.keys() {
            if pinned.get(&group).copied().unwrap_or(false) {
                continue;
            }
            if scale * weights.get(group) >= 1.0 {
                pinned.insert(group, true);
                newly_pinned = true;
            }
        }
        if !newly_pinned {
            for (&group, &n) in sizes.iter() {
                let p = if pinned.get(&group).copied().unwrap_or(false) {
                    1.0
                } else {
                    scale * weights.get(group)
                };
                targets.insert(group, p * n as f64);
            }
            break;
        }
    }
    if targets.is_empty() {
        for (&group, &n) in sizes.iter() {
            targets.insert(group, n as f64); // all pinned
        }
    }

    // Largest-remainder apportionment of the real-valued targets.
    let mut counts: BTreeMap<VoxelGroup, usize> = BTreeMap::new();
    let mut remainders: Vec<(VoxelGroup, f64)> = Vec::new();
    let mut floor_sum = 0usize;
    for (&group, &target) in &targets {
        let floor = target.floor() as usize;
        let floor = floor.min(sizes[&group]);
        counts.insert(group, floor);
        floor_sum += floor;
        remainders.push((group, target - floor as f64));
    }
    let mut residual = budget.saturating_sub(floor_sum);
    // Largest remainder first; group order (High before Background) breaks
    // exact remainder ties deterministically.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut cursor = 0;
    while residual > 0 {
        let (group, _) = remainders[cursor % remainders.len()];
        if counts[&group] < sizes[&group] {
            *counts.get_mut(&group).unwrap() += 1;
            residual -= 1;
        }
        cursor += 1;
        if cursor > remainders.len() * (budget + 1) {
            return Err(MaskError::InfeasibleBudget {
                budget,
                available: total,
            });
        }
    }
    Ok(counts)
}

/// Importance-weighted masking: the budget is split across the four groups
/// in proportion to `weights`, then voxels are sampled uniformly without
/// replacement inside each group (processed in High, Medium, Low,
/// Background order).
pub fn mask_importance_weighted(
    grid: &VoxelGrid,
    weights: &GroupWeights,
    rho: f64,
    seed: u64,
) -> Result<MaskAssignment, MaskError> {
    validate_rho(rho)?;
    weights.validate()?;
    let policy = MaskPolicy::importance_weighted(*weights, rho, seed);
    if grid.num_voxels() == 0 {
        return Ok(MaskAssignment::empty(policy));
    }
    let mut members: BTreeMap<VoxelGroup, Vec<VoxelIndex>> = BTreeMap::new();
    for voxel in grid.voxels.values() {
        let group = voxel.group.ok_or(MaskError::UngroupedGrid)?;
        members.entry(group).or_default().push(voxel.index);
    }
    let sizes: BTreeMap<VoxelGroup, usize> =
        members.iter().map(|(&g, m)| (g, m.len())).collect();
    let budget = mask_budget(rho, grid.num_voxels());
    let counts = allocate_group_counts(&sizes, weights, budget)?;

    let mut rng = rng_for(seed, &[]);
    let mut masked = BTreeSet::new();
    for group in VoxelGroup::ALL {
        let Some(pool) = members.get(&group) else { continue };
        let take = counts.get(&group).copied().unwrap_or(0);
        for i in sample_without_replacement(&mut rng, pool.len(), take) {
            masked.insert(pool[i]);
        }
    }
    Ok(finish(grid, policy, masked, Vec::new()))
}

/// Runs whichever policy `policy` names.
pub fn apply_policy(
    grid: &VoxelGrid,
    policy: &MaskPolicy,
    mode: BudgetMode,
) -> Result<MaskAssignment, MaskError> {
    match &policy.kind {
        PolicyKind::Uniform => mask_uniform(grid, policy.rho, policy.seed),
        PolicyKind::ClassTarget { class, tau } => {
            mask_class_target(grid, *class, *tau, policy.rho, policy.seed, mode)
        }
        PolicyKind::ImportanceWeighted { weights } => {
            mask_importance_weighted(grid, weights, policy.rho, policy.seed)
        }
    }
}

/// Splits the grid's voxels into (visible, masked) per the assignment.
/// Nothing is mutated; the assignment must partition exactly this grid.
pub fn apply_mask<'g>(
    grid: &'g VoxelGrid,
    assignment: &MaskAssignment,
) -> Result<(Vec<&'g crate::voxel::Voxel>, Vec<&'g crate::voxel::Voxel>), MaskError> {
    if assignment.masked.len() + assignment.visible.len() != grid.num_voxels() {
        return Err(MaskError::GridMismatch {
            reason: format!(
                "assignment covers {} voxels, grid has {}",
                assignment.masked.len() + assignment.visible.len(),
                grid.num_voxels()
            ),
        });
    }
    let mut visible = Vec::with_capacity(assignment.visible.len());
    let mut masked = Vec::with_capacity(assignment.masked.len());
    for voxel in grid.voxels.values() {
        if assignment.masked.contains(&voxel.index) {
            masked.push(voxel);
        } else if assignment.visible.contains(&voxel.index) {
            visible.push(voxel);
        } else {
            return Err(MaskError::GridMismatch {
                reason: format!("voxel {:?} missing from assignment", voxel.index),
            });
        }
    }
    Ok((visible, masked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::PointCloud;
    use crate::voxel::{canonical_priority, voxelize, ImportanceLevel, VoxelGridConfig};
    use proptest::prelude::*;

    /// Grid with `n` voxels, one point each, labels cycling over classes.
    fn grid_with(n: usize, labels: impl Fn(usize) -> u8) -> VoxelGrid {
        let cfg = VoxelGridConfig::unit(64.0);
        let points: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let x = (i % 64) as f64 + 0.5;
                let y = ((i / 64) % 64) as f64 + 0.5;
                let z = (i / 4096) as f64 + 0.5;
                [x, y, z]
            })
            .collect();
        let lab: Vec<u8> = (0..n).map(&labels).collect();
        let cloud = PointCloud::new(points, vec![0.0; n], "g")
            .with_labels(lab)
            .unwrap();
        voxelize(&cloud, &cfg)
    }

    fn grouped_grid(per_group: usize) -> VoxelGrid {
        // car -> High, truck -> Medium, trailer -> Low, background.
        let grid = grid_with(per_group * 4, |i| match i % 4 {
            0 => 0,
            1 => 4,
            2 => 8,
            _ => 10,
        });
        let mut levels: BTreeMap<ClassId, ImportanceLevel> = (0..10)
            .map(|i| (ClassId(i), ImportanceLevel::Medium))
            .collect();
        levels.insert(ClassId(0), ImportanceLevel::High);
        levels.insert(ClassId(8), ImportanceLevel::Low);
        grid.assign_groups(&levels, &canonical_priority()).unwrap()
    }

    #[test]
    fn budget_rounding_is_half_to_even() {
        assert_eq!(mask_budget(0.7, 10), 7);
        assert_eq!(mask_budget(0.5, 15), 8); // 7.5 -> 8
        assert_eq!(mask_budget(0.5, 13), 6); // 6.5 -> 6
        assert_eq!(mask_budget(0.0, 99), 0);
        assert_eq!(mask_budget(1.0, 99), 99);
    }

    #[test]
    fn rho_zero_and_one_are_degenerate() {
        let grid = grid_with(12, |_| 0);
        let none = mask_uniform(&grid, 0.0, 1).unwrap();
        assert!(none.masked.is_empty());
        assert_eq!(none.visible.len(), 12);
        let all = mask_uniform(&grid, 1.0, 1).unwrap();
        assert_eq!(all.masked.len(), 12);
        assert!(all.visible.is_empty());
    }

    #[test]
    fn empty_grid_yields_empty_assignment() {
        let grid = grid_with(0, |_| 0);
        let a = mask_uniform(&grid, 0.7, 3).unwrap();
        assert!(a.masked.is_empty() && a.visible.is_empty());
        assert_eq!(a.realized_ratio, 0.0);
    }

    #[test]
    fn uniform_masking_frequency_matches_rho() {
        // N = 10, rho = 0.7: exactly 7 masked; over many seeds each voxel
        // is masked with frequency 0.7 (binomial std ~ 0.0046 at 10k).
        let grid = grid_with(10, |_| 0);
        let indices = grid.indices();
        let mut hits: BTreeMap<VoxelIndex, usize> = indices.iter().map(|&i| (i, 0)).collect();
        let seeds = 10_000u64;
        for seed in 0..seeds {
            let a = mask_uniform(&grid, 0.7, seed).unwrap();
            assert_eq!(a.masked.len(), 7);
            for idx in &a.masked {
                *hits.get_mut(idx).unwrap() += 1;
            }
        }
        for (&idx, &h) in &hits {
            let freq = h as f64 / seeds as f64;
            assert!(
                (freq - 0.7).abs() <= 0.02,
                "voxel {idx:?} masked at frequency {freq}"
            );
        }
    }

    #[test]
    fn masking_is_deterministic_per_seed() {
        let grid = grouped_grid(25);
        let a = mask_uniform(&grid, 0.7, 42).unwrap();
        let b = mask_uniform(&grid, 0.7, 42).unwrap();
        assert_eq!(a, b);
        let c = mask_uniform(&grid, 0.7, 43).unwrap();
        assert_ne!(a.masked, c.masked);
        let w = GroupWeights::default();
        let d = mask_importance_weighted(&grid, &w, 0.7, 42).unwrap();
        assert_eq!(d, mask_importance_weighted(&grid, &w, 0.7, 42).unwrap());
        assert!(matches!(
            mask_uniform(&grid, 1.5, 1),
            Err(MaskError::InvalidRatio(_))
        ));
    }

    #[test]
    fn class_target_includes_target_set_and_meets_budget() {
        // N = 10, rho = 0.7, |V| = 3: those 3 plus 4 random others.
        let grid = grid_with(10, |i| if i < 3 { 0 } else { 10 });
        let car = ClassId(0);
        let a = mask_class_target(&grid, car, 1, 0.7, 5, BudgetMode::Strict).unwrap();
        assert_eq!(a.masked.len(), 7);
        let target = grid.target_voxel_set(car, 1).unwrap();
        assert_eq!(target.len(), 3);
        for idx in target {
            assert!(a.masked.contains(&idx), "target voxel not masked");
        }
    }

    #[test]
    fn class_target_with_empty_target_equals_uniform() {
        let grid = grid_with(20, |_| 10);
        let a = mask_class_target(&grid, ClassId(0), 1, 0.7, 9, BudgetMode::Strict).unwrap();
        let b = mask_uniform(&grid, 0.7, 9).unwrap();
        assert_eq!(a.masked, b.masked);
    }

    #[test]
    fn class_target_budget_overflow_modes() {
        // 8 car voxels of 10 total, budget 7.
        let grid = grid_with(10, |i| if i < 8 { 0 } else { 10 });
        let car = ClassId(0);
        let err = mask_class_target(&grid, car, 1, 0.7, 5, BudgetMode::Strict).unwrap_err();
        assert!(matches!(
            err,
            MaskError::TargetExceedsBudget { target: 8, budget: 7 }
        ));
        let a = mask_class_target(&grid, car, 1, 0.7, 5, BudgetMode::Truncate).unwrap();
        assert_eq!(a.masked.len(), 7);
        assert_eq!(a.warnings.len(), 1);
        let target: BTreeSet<VoxelIndex> =
            grid.target_voxel_set(car, 1).unwrap().into_iter().collect();
        assert!(a.masked.iter().all(|i| target.contains(i)));
    }

    #[test]
    fn tau_two_excludes_single_point_voxels() {
        // Voxel 0 holds two car points, voxel 1 holds one.
        let cfg = VoxelGridConfig::unit(4.0);
        let cloud = PointCloud::new(
            vec![[0.2, 0.5, 0.5], [0.4, 0.5, 0.5], [1.5, 0.5, 0.5], [2.5, 0.5, 0.5]],
            vec![0.0; 4],
            "t",
        )
        .with_labels(vec![0, 0, 0, 10])
        .unwrap();
        let grid = voxelize(&cloud, &cfg);
        let v1 = grid.target_voxel_set(ClassId(0), 1).unwrap();
        let v2 = grid.target_voxel_set(ClassId(0), 2).unwrap();
        assert_eq!(v1.len(), 2);
        assert_eq!(v2.len(), 1);
        let a = mask_class_target(&grid, ClassId(0), 2, 0.5, 1, BudgetMode::Strict).unwrap();
        assert!(a.masked.contains(&v2[0]));
    }

    #[test]
    fn equal_weights_mask_every_group_at_rho() {
        let grid = grouped_grid(40); // 40 per group, N = 160, budget 112
        let a = mask_importance_weighted(&grid, &GroupWeights::uniform(), 0.7, 3).unwrap();
        assert_eq!(a.masked.len(), 112);
        for (&group, &(masked, total)) in &a.per_group_masked {
            assert_eq!(total, 40);
            // 0.7 * 40 = 28 exactly; equal weights hit it up to rounding.
            assert!(
                (masked as i64 - 28).unsigned_abs() <= 1,
                "group {group:?} masked {masked}"
            );
        }
    }

    #[test]
    fn weighted_masking_orders_group_rates() {
        let grid = grouped_grid(50);
        let a = mask_importance_weighted(&grid, &GroupWeights::default(), 0.7, 11).unwrap();
        assert_eq!(a.masked.len(), mask_budget(0.7, 200));
        let rate = |g: VoxelGroup| {
            let (m, t) = a.per_group_masked[&g];
            m as f64 / t as f64
        };
        assert!(rate(VoxelGroup::High) < rate(VoxelGroup::Medium));
        assert!(rate(VoxelGroup::Medium) < rate(VoxelGroup::Low));
        assert!(rate(VoxelGroup::Low) < rate(VoxelGroup::Background));
    }

    #[test]
    fn empty_group_renormalizes_over_the_rest() {
        // Only High/Medium/Low present (no background points).
        let grid = grid_with(90, |i| match i % 3 {
            0 => 0,
            1 => 4,
            _ => 8,
        });
        let mut levels: BTreeMap<ClassId, ImportanceLevel> = (0..10)
            .map(|i| (ClassId(i), ImportanceLevel::Medium))
            .collect();
        levels.insert(ClassId(0), ImportanceLevel::High);
        levels.insert(ClassId(8), ImportanceLevel::Low);
        let grid = grid.assign_groups(&levels, &canonical_priority()).unwrap();
        let a = mask_importance_weighted(&grid, &GroupWeights::default(), 0.7, 7).unwrap();
        assert_eq!(a.masked.len(), mask_budget(0.7, 90));
        assert!(!a.per_group_masked.contains_key(&VoxelGroup::Background));
        // Hand-solved: s = 63 / (30*(0.75 + 0.95 + 1.05)) = 0.7636..., so
        // targets are 17.18, 21.76, 24.05 -> counts {17, 22, 24}.
        assert_eq!(a.per_group_masked[&VoxelGroup::High].0, 17);
        assert_eq!(a.per_group_masked[&VoxelGroup::Medium].0, 22);
        assert_eq!(a.per_group_masked[&VoxelGroup::Low].0, 24);
    }

    #[test]
    fn extreme_weight_pins_at_one_and_rescales() {
        // Background weight so large its group saturates; budget must
        // still be met exactly with the rest rescaled.
        let grid = grouped_grid(30); // N = 120, budget 84
        let w = GroupWeights {
            high: 0.1,
            medium: 0.1,
            low: 0.1,
            background: 100.0,
        };
        let a = mask_importance_weighted(&grid, &w, 0.7, 13).unwrap();
        assert_eq!(a.masked.len(), 84);
        assert_eq!(a.per_group_masked[&VoxelGroup::Background].0, 30); // pinned
        let rest: usize = [VoxelGroup::High, VoxelGroup::Medium, VoxelGroup::Low]
            .iter()
            .map(|g| a.per_group_masked[g].0)
            .sum();
        assert_eq!(rest, 54);
    }

    #[test]
    fn ungrouped_grid_is_rejected() {
        let grid = grid_with(10, |_| 0);
        assert!(matches!(
            mask_importance_weighted(&grid, &GroupWeights::default(), 0.7, 1),
            Err(MaskError::UngroupedGrid)
        ));
    }

    #[test]
    fn apply_mask_partitions_and_detects_mismatch() {
        let grid = grid_with(10, |_| 0);
        let a = mask_uniform(&grid, 0.7, 2).unwrap();
        let (visible, masked) = apply_mask(&grid, &a).unwrap();
        assert_eq!(visible.len() + masked.len(), 10);
        let other = grid_with(11, |_| 0);
        assert!(matches!(
            apply_mask(&other, &a),
            Err(MaskError::GridMismatch { .. })
        ));
    }

    #[test]
    fn full_and_empty_assignments_split_cleanly() {
        let grid = grid_with(6, |_| 0);
        let all = mask_uniform(&grid, 1.0, 1).unwrap();
        let (visible, masked) = apply_mask(&grid, &all).unwrap();
        assert!(visible.is_empty());
        assert_eq!(masked.len(), 6);
        let none = mask_uniform(&grid, 0.0, 1).unwrap();
        let (visible, masked) = apply_mask(&grid, &none).unwrap();
        assert_eq!(visible.len(), 6);
        assert!(masked.is_empty());
    }

    proptest! {
        // Exact budget and clean partition for every policy.
        #[test]
        fn every_policy_meets_the_exact_budget(
            n in 1usize..150,
            rho in 0.0f64..1.0,
            seed in 0u64..u64::MAX,
            policy_pick in 0usize..3,
        ) {
            let grid = grouped_grid(n.div_ceil(4));
            let n_vox = grid.num_voxels();
            let assignment = match policy_pick {
                0 => mask_uniform(&grid, rho, seed).unwrap(),
                1 => mask_class_target(&grid, ClassId(0), 1, rho, seed, BudgetMode::Truncate).unwrap(),
                _ => mask_importance_weighted(&grid, &GroupWeights::default(), rho, seed).unwrap(),
            };
            prop_assert_eq!(assignment.masked.len(), mask_budget(rho, n_vox));
            prop_assert!(assignment.masked.is_disjoint(&assignment.visible));
            prop_assert_eq!(assignment.masked.len() + assignment.visible.len(), n_vox);
        }
    }
}
