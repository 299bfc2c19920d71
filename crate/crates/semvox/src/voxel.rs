//! Sparse voxelization of point clouds.
//!
//! A grid partitions the in-range points of a cloud into axis-aligned
//! cells keyed by integer index. Each occupied voxel keeps its member
//! point ids, their offsets from the voxel center, per-class point counts,
//! and (after [`VoxelGrid::assign_groups`]) an importance group.

use crate::pointcloud::{ClassId, PointCloud, NUM_DETECTION_CLASSES};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("invalid voxel config: {0}")]
    InvalidConfig(String),
    #[error("voxel {0:?} does not exist in this grid")]
    UnknownVoxel(VoxelIndex),
    #[error("grid was voxelized from an unlabeled cloud")]
    UnlabeledGrid,
    #[error("importance levels incomplete: no level for class {0}")]
    IncompleteLevels(ClassId),
    #[error("tie-break priority list does not mention class {0}")]
    IncompletePriority(ClassId),
}

/// Grid geometry and capacity limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridConfig {
    /// Cell size per axis, meters.
    pub voxel_size: [f64; 3],
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    /// Per-voxel point cap. Capping changes reconstruction targets, so it
    /// is opt-in; `None` keeps every point.
    #[serde(default)]
    pub max_points_per_voxel: Option<usize>,
}

impl Default for VoxelGridConfig {
    /// The common full-scene detection setting.
    fn default() -> Self {
        VoxelGridConfig {
            voxel_size: [0.075, 0.075, 0.2],
            range_min: [-54.0, -54.0, -5.0],
            range_max: [54.0, 54.0, 3.0],
            max_points_per_voxel: None,
        }
    }
}

impl VoxelGridConfig {
    /// Unit voxels over `[0, extent)` per axis; the desk-scale test setting.
    pub fn unit(extent: f64) -> Self {
        VoxelGridConfig {
            voxel_size: [1.0, 1.0, 1.0],
            range_min: [0.0, 0.0, 0.0],
            range_max: [extent, extent, extent],
            max_points_per_voxel: None,
        }
    }

    pub fn validate(&self) -> Result<(), VoxelError> {
        if self.voxel_size.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(VoxelError::InvalidConfig(format!(
                "voxel_size must be positive, got {:?}",
                self.voxel_size
            )));
        }
        if self
            .range_min
            .iter()
            .zip(&self.range_max)
            .any(|(lo, hi)| lo >= hi)
        {
            return Err(VoxelError::InvalidConfig(format!(
                "range_max must exceed range_min componentwise, got {:?}..{:?}",
                self.range_min, self.range_max
            )));
        }
        Ok(())
    }

    /// Grid coordinates of the cell containing `p`, or `None` when out of
    /// range (`range_min <= p < range_max` componentwise).
    pub fn index_of(&self, p: &[f64; 3]) -> Option<VoxelIndex> {
        let mut idx = [0i32; 3];
        for axis in 0..3 {
            if !(self.range_min[axis] <= p[axis] && p[axis] < self.range_max[axis]) {
                return None;
            }
            idx[axis] = ((p[axis] - self.range_min[axis]) / self.voxel_size[axis]).floor() as i32;
        }
        Some(VoxelIndex(idx))
    }

    pub fn center_of(&self, index: VoxelIndex) -> [f64; 3] {
        let mut c = [0.0; 3];
        for axis in 0..3 {
            c[axis] =
                self.range_min[axis] + (index.0[axis] as f64 + 0.5) * self.voxel_size[axis];
        }
        c
    }
}

/// Integer grid coordinates of a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoxelIndex(pub [i32; 3]);

/// Importance bucket of a semantic class (produced by the ranking).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceLevel {
    High,
    Medium,
    Low,
}

/// Masking group of a voxel: the importance level of its most important
/// class, or `Background` when only background points are present.
/// Ordered by decreasing importance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoxelGroup {
    High,
    Medium,
    Low,
    Background,
}

impl From<ImportanceLevel> for VoxelGroup {
    fn from(level: ImportanceLevel) -> Self {
        match level {
            ImportanceLevel::High => VoxelGroup::High,
            ImportanceLevel::Medium => VoxelGroup::Medium,
            ImportanceLevel::Low => VoxelGroup::Low,
        }
    }
}

impl VoxelGroup {
    pub const ALL: [VoxelGroup; 4] = [
        VoxelGroup::High,
        VoxelGroup::Medium,
        VoxelGroup::Low,
        VoxelGroup::Background,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VoxelGroup::High => "high",
            VoxelGroup::Medium => "medium",
            VoxelGroup::Low => "low",
            VoxelGroup::Background => "background",
        }
    }
}

/// The fixed tie-break order between classes of equal importance level.
pub fn canonical_priority() -> [ClassId; NUM_DETECTION_CLASSES] {
    std::array::from_fn(|i| ClassId(i as u8))
}

/// The bundled reference level assignment (the published analysis on the
/// mini validation split): car, pedestrian and construction vehicles are
/// High; trailer and bicycle are Low; the rest are Medium. Pair with
/// [`crate::masking::GroupWeights::default`].
pub fn reference_level_map() -> BTreeMap<ClassId, ImportanceLevel> {
    let mut levels: BTreeMap<ClassId, ImportanceLevel> = (0..NUM_DETECTION_CLASSES as u8)
        .map(|i| (ClassId(i), ImportanceLevel::Medium))
        .collect();
    for name in ["car", "pedestrian", "construction_vehicle"] {
        levels.insert(ClassId::from_name(name).unwrap(), ImportanceLevel::High);
    }
    for name in ["trailer", "bicycle"] {
        levels.insert(ClassId::from_name(name).unwrap(), ImportanceLevel::Low);
    }
    levels
}

/// One occupied cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voxel {
    pub index: VoxelIndex,
    /// Cell center in meters.
    pub center: [f64; 3],
    /// Indices into the source cloud, in point order.
    pub point_ids: Vec<usize>,
    /// Member point offsets from the center, parallel to `point_ids`.
    pub offsets: Vec<[f64; 3]>,
    /// Member point labels, parallel to `point_ids`; empty when the source
    /// cloud is unlabeled.
    pub point_labels: Vec<u8>,
    /// Points per class in this voxel (labeled grids only).
    pub class_counts: BTreeMap<ClassId, usize>,
    /// Most important class present, set by `assign_groups`.
    pub assigned_class: Option<ClassId>,
    pub group: Option<VoxelGroup>,
}

impl Voxel {
    pub fn num_points(&self) -> usize {
        self.point_ids.len()
    }

    /// Absolute positions of the member points.
    pub fn absolute_points(&self) -> Vec<[f64; 3]> {
        self.offsets
            .iter()
            .map(|d| [self.center[0] + d[0], self.center[1] + d[1], self.center[2] + d[2]])
            .collect()
    }
}

/// Sparse voxel grid over one cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub config: VoxelGridConfig,
    pub voxels: BTreeMap<VoxelIndex, Voxel>,
    /// Points outside the configured range.
    pub dropped_points: usize,
    /// Points discarded by the per-voxel cap.
    pub truncated_points: usize,
    /// Whether the source cloud carried labels.
    pub labeled: bool,
    /// Size of the source cloud (partition diagnostics).
    pub source_points: usize,
    pub frame_id: String,
}

/// Buckets every in-range point into its cell; out-of-range points are
/// dropped and counted. With a labeled cloud, per-class counts and member
/// labels are populated.
pub fn voxelize(cloud: &PointCloud, config: &VoxelGridConfig) -> VoxelGrid {
    debug_assert!(config.validate().is_ok(), "invalid voxel config");
    let mut voxels: BTreeMap<VoxelIndex, Voxel> = BTreeMap::new();
    let mut dropped = 0usize;
    let mut truncated = 0usize;
    let cap = config.max_points_per_voxel.unwrap_or(usize::MAX);
    for (point_id, p) in cloud.points.iter().enumerate() {
        let Some(index) = config.index_of(p) else {
            dropped += 1;
            continue;
        };
        let voxel = voxels.entry(index).or_insert_with(|| Voxel {
            index,
            center: config.center_of(index),
            point_ids: Vec::new(),
            offsets: Vec::new(),
            point_labels: Vec::new(),
            class_counts: BTreeMap::new(),
            assigned_class: None,
            group: None,
        });
        if voxel.point_ids.len() >= cap {
            truncated += 1;
            continue;
        }
        voxel.point_ids.push(point_id);
        voxel.offsets.push([
            p[0] - voxel.center[0],
            p[1] - voxel.center[1],
            p[2] - voxel.center[2],
        ]);
        if let Some(labels) = &cloud.labels {
            let label = labels[point_id];
            voxel.point_labels.push(label);
            *voxel.class_counts.entry(ClassId(label)).or_insert(0) += 1;
        }
    }
    VoxelGrid {
        config: config.clone(),
        voxels,
        dropped_points: dropped,
        truncated_points: truncated,
        labeled: cloud.labels.is_some(),
        source_points: cloud.len(),
        frame_id: cloud.frame_id.clone(),
    }
}

impl VoxelGrid {
    pub fn num_voxels(&self) -> usize {
        self.voxels.len()
    }

    /// Occupied voxel indices in sorted order.
    pub fn indices(&self) -> Vec<VoxelIndex> {
        self.voxels.keys().copied().collect()
    }

    /// Member point offsets from the voxel center.
    pub fn local_offsets(&self, index: VoxelIndex) -> Result<&[[f64; 3]], VoxelError> {
        self.voxels
            .get(&index)
            .map(|v| v.offsets.as_slice())
            .ok_or(VoxelError::UnknownVoxel(index))
    }

    /// Voxels holding at least `tau` points of `class`.
    pub fn target_voxel_set(
        &self,
        class: ClassId,
        tau: usize,
    ) -> Result<Vec<VoxelIndex>, VoxelError> {
        if !self.labeled {
            return Err(VoxelError::UnlabeledGrid);
        }
        Ok(self
            .voxels
            .values()
            .filter(|v| v.class_counts.get(&class).copied().unwrap_or(0) >= tau)
            .map(|v| v.index)
            .collect())
    }

    /// Assigns every voxel to the group of its most important class, ties
    /// within a level broken by `priority` order. Background-only voxels go
    /// to the background group. `levels` must cover all detection classes.
    pub fn assign_groups(
        &self,
        levels: &BTreeMap<ClassId, ImportanceLevel>,
        priority: &[ClassId],
    ) -> Result<VoxelGrid, VoxelError> {
        if !self.labeled {
            return Err(VoxelError::UnlabeledGrid);
        }
        for id in 0..NUM_DETECTION_CLASSES as u8 {
            if !levels.contains_key(&ClassId(id)) {
                return Err(VoxelError::IncompleteLevels(ClassId(id)));
            }
        }
        let rank_in_priority = |class: ClassId| -> Result<usize, VoxelError> {
            priority
                .iter()
                .position(|&c| c == class)
                .ok_or(VoxelError::IncompletePriority(class))
        };
        let mut out = self.clone();
        for voxel in out.voxels.values_mut() {
            let mut best: Option<(ImportanceLevel, usize, ClassId)> = None;
            for (&class, &count) in &voxel.class_counts {
                if count == 0 || class.is_background() {
                    continue;
                }
                let level = *levels.get(&class).ok_or(VoxelError::IncompleteLevels(class))?;
                let key = (level, rank_in_priority(class)?);
                if best.is_none_or(|(bl, bp, _)| key < (bl, bp)) {
                    best = Some((level, key.1, class));
                }
            }
            match best {
                Some((level, _, class)) => {
                    voxel.assigned_class = Some(class);
                    voxel.group = Some(level.into());
                }
                None => {
                    voxel.assigned_class = Some(ClassId::BACKGROUND);
                    voxel.group = Some(VoxelGroup::Background);
                }
            }
        }
        Ok(out)
    }

    /// Occupied voxel count per group; `None` key when groups are unset.
    pub fn group_sizes(&self) -> BTreeMap<Option<VoxelGroup>, usize> {
        let mut sizes = BTreeMap::new();
        for v in self.voxels.values() {
            *sizes.entry(v.group).or_insert(0) += 1;
        }
        sizes
    }

    /// JSON-lines export: one voxel per line with index, center, assigned
    /// class, group, and class counts.
    pub fn write_jsonl(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        for voxel in self.voxels.values() {
            let counts: BTreeMap<String, usize> = voxel
                .class_counts
                .iter()
                .map(|(c, &n)| (c.to_string(), n))
                .collect();
            let line = serde_json::json!({
                "index": voxel.index,
                "center": voxel.center,
                "num_points": voxel.num_points(),
                "assigned_class": voxel.assigned_class.map(|c| c.to_string()),
                "group": voxel.group.map(|g| g.name()),
                "class_counts": counts,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labeled_cloud(points: Vec<[f64; 3]>, labels: Vec<u8>) -> PointCloud {
        let n = points.len();
        PointCloud::new(points, vec![0.0; n], "test")
            .with_labels(labels)
            .unwrap()
    }

    #[test]
    fn point_at_range_min_lands_in_origin_voxel() {
        let cfg = VoxelGridConfig::unit(4.0);
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0]], vec![0.0], "t");
        let grid = voxelize(&cloud, &cfg);
        assert_eq!(grid.num_voxels(), 1);
        assert!(grid.voxels.contains_key(&VoxelIndex([0, 0, 0])));
        assert_eq!(grid.dropped_points, 0);
    }

    #[test]
    fn nearby_points_share_a_voxel() {
        let cfg = VoxelGridConfig::unit(4.0);
        let cloud = PointCloud::new(vec![[1.2, 1.2, 1.2], [1.3, 1.2, 1.2]], vec![0.0; 2], "t");
        let grid = voxelize(&cloud, &cfg);
        assert_eq!(grid.num_voxels(), 1);
        let voxel = &grid.voxels[&VoxelIndex([1, 1, 1])];
        assert_eq!(voxel.point_ids, vec![0, 1]);
    }

    #[test]
    fn lattice_points_match_per_point_floor_oracle() {
        // 10 points on a unit lattice with unit voxels: every point gets its
        // own voxel, and each assignment matches an independent floor((p -
        // min)/size) computation.
        let cfg = VoxelGridConfig::unit(10.0);
        let points: Vec<[f64; 3]> = (0..10).map(|i| [i as f64 + 0.5, 0.5, 0.5]).collect();
        let cloud = PointCloud::new(points.clone(), vec![0.0; 10], "t");
        let grid = voxelize(&cloud, &cfg);
        assert_eq!(grid.num_voxels(), 10);
        for (pid, p) in points.iter().enumerate() {
            let expected = VoxelIndex([
                ((p[0] - cfg.range_min[0]) / cfg.voxel_size[0]).floor() as i32,
                ((p[1] - cfg.range_min[1]) / cfg.voxel_size[1]).floor() as i32,
                ((p[2] - cfg.range_min[2]) / cfg.voxel_size[2]).floor() as i32,
            ]);
            assert!(grid.voxels[&expected].point_ids.contains(&pid));
        }
    }

    #[test]
    fn out_of_range_points_are_dropped_and_counted() {
        let cfg = VoxelGridConfig::unit(2.0);
        let cloud = PointCloud::new(
            vec![[0.5, 0.5, 0.5], [2.0, 0.5, 0.5], [-0.1, 0.5, 0.5]],
            vec![0.0; 3],
            "t",
        );
        let grid = voxelize(&cloud, &cfg);
        assert_eq!(grid.num_voxels(), 1);
        assert_eq!(grid.dropped_points, 2);
    }

    #[test]
    fn local_offsets_are_point_minus_center() {
        let cfg = VoxelGridConfig::unit(2.0);
        let cloud = PointCloud::new(vec![[0.5, 0.5, 0.5], [0.0, 0.0, 0.0]], vec![0.0; 2], "t");
        let grid = voxelize(&cloud, &cfg);
        let offsets = grid.local_offsets(VoxelIndex([0, 0, 0])).unwrap();
        assert_eq!(offsets[0], [0.0, 0.0, 0.0]); // exactly at center
        assert_eq!(offsets[1], [-0.5, -0.5, -0.5]); // low corner
        assert!(matches!(
            grid.local_offsets(VoxelIndex([9, 9, 9])),
            Err(VoxelError::UnknownVoxel(_))
        ));
    }

    #[test]
    fn target_voxel_set_obeys_threshold_semantics() {
        let cfg = VoxelGridConfig::unit(8.0);
        // Voxel (0,0,0): one car point. Voxel (1,0,0): two car points.
        // Voxel (2,0,0): background only.
        let cloud = labeled_cloud(
            vec![
                [0.5, 0.5, 0.5],
                [1.5, 0.5, 0.5],
                [1.6, 0.5, 0.5],
                [2.5, 0.5, 0.5],
            ],
            vec![0, 0, 0, 10],
        );
        let grid = voxelize(&cloud, &cfg);
        let car = ClassId(0);
        let tau1 = grid.target_voxel_set(car, 1).unwrap();
        assert_eq!(tau1.len(), 2);
        let tau2 = grid.target_voxel_set(car, 2).unwrap();
        assert_eq!(tau2, vec![VoxelIndex([1, 0, 0])]);
        assert!(grid.target_voxel_set(car, 99).unwrap().is_empty());
        // Monotone: higher tau is a subset.
        assert!(tau2.iter().all(|i| tau1.contains(i)));
    }

    #[test]
    fn target_voxel_set_requires_labels() {
        let cfg = VoxelGridConfig::unit(2.0);
        let cloud = PointCloud::new(vec![[0.5, 0.5, 0.5]], vec![0.0], "t");
        let grid = voxelize(&cloud, &cfg);
        assert!(matches!(
            grid.target_voxel_set(ClassId(0), 1),
            Err(VoxelError::UnlabeledGrid)
        ));
    }

    fn all_medium_levels() -> BTreeMap<ClassId, ImportanceLevel> {
        (0..NUM_DETECTION_CLASSES as u8)
            .map(|i| (ClassId(i), ImportanceLevel::Medium))
            .collect()
    }

    #[test]
    fn groups_follow_importance_not_plurality() {
        let cfg = VoxelGridConfig::unit(4.0);
        // One voxel with 2 car points and 5 trailer points.
        let mut points = vec![[0.5, 0.5, 0.5]; 7];
        points.iter_mut().enumerate().for_each(|(i, p)| p[0] += i as f64 * 0.01);
        let cloud = labeled_cloud(points, vec![0, 0, 8, 8, 8, 8, 8]);
        let grid = voxelize(&cloud, &cfg);
        let mut levels = all_medium_levels();
        levels.insert(ClassId(0), ImportanceLevel::High); // car
        levels.insert(ClassId(8), ImportanceLevel::Low); // trailer
        let grouped = grid.assign_groups(&levels, &canonical_priority()).unwrap();
        let voxel = grouped.voxels.values().next().unwrap();
        assert_eq!(voxel.group, Some(VoxelGroup::High));
        assert_eq!(voxel.assigned_class, Some(ClassId(0)));
    }

    #[test]
    fn background_only_voxels_get_background_group() {
        let cfg = VoxelGridConfig::unit(4.0);
        let cloud = labeled_cloud(vec![[0.5, 0.5, 0.5]], vec![10]);
        let grid = voxelize(&cloud, &cfg);
        let grouped = grid
            .assign_groups(&all_medium_levels(), &canonical_priority())
            .unwrap();
        let voxel = grouped.voxels.values().next().unwrap();
        assert_eq!(voxel.group, Some(VoxelGroup::Background));
        assert_eq!(voxel.assigned_class, Some(ClassId::BACKGROUND));
    }

    #[test]
    fn equal_level_ties_break_by_priority() {
        let cfg = VoxelGridConfig::unit(4.0);
        // truck (4) and bus (5) both present, both Medium; canonical
        // priority lists truck first.
        let cloud = labeled_cloud(vec![[0.5, 0.5, 0.5], [0.6, 0.5, 0.5]], vec![5, 4]);
        let grid = voxelize(&cloud, &cfg);
        let grouped = grid
            .assign_groups(&all_medium_levels(), &canonical_priority())
            .unwrap();
        let voxel = grouped.voxels.values().next().unwrap();
        assert_eq!(voxel.assigned_class, Some(ClassId(4)));
        // Reversed priority flips the tie.
        let mut reversed = canonical_priority();
        reversed.reverse();
        let grouped = grid.assign_groups(&all_medium_levels(), &reversed).unwrap();
        assert_eq!(
            grouped.voxels.values().next().unwrap().assigned_class,
            Some(ClassId(5))
        );
    }

    #[test]
    fn incomplete_levels_are_rejected() {
        let cfg = VoxelGridConfig::unit(4.0);
        let cloud = labeled_cloud(vec![[0.5, 0.5, 0.5]], vec![0]);
        let grid = voxelize(&cloud, &cfg);
        let mut levels = all_medium_levels();
        levels.remove(&ClassId(7));
        assert!(matches!(
            grid.assign_groups(&levels, &canonical_priority()),
            Err(VoxelError::IncompleteLevels(ClassId(7)))
        ));
    }

    #[test]
    fn max_points_per_voxel_truncates() {
        let mut cfg = VoxelGridConfig::unit(2.0);
        cfg.max_points_per_voxel = Some(2);
        let points = vec![[0.5, 0.5, 0.5], [0.6, 0.5, 0.5], [0.7, 0.5, 0.5]];
        let cloud = labeled_cloud(points, vec![0, 0, 0]);
        let grid = voxelize(&cloud, &cfg);
        let voxel = grid.voxels.values().next().unwrap();
        assert_eq!(voxel.num_points(), 2);
        assert_eq!(grid.truncated_points, 1);
        // class_counts stays consistent with the kept points.
        assert_eq!(voxel.class_counts[&ClassId(0)], 2);
    }

    proptest! {
        // Partition: every point is either in exactly one voxel or dropped.
        #[test]
        fn partition_property(
            points in proptest::collection::vec(
                (-3.0f64..7.0, -3.0f64..7.0, -3.0f64..7.0),
                0..120,
            ),
            size in 0.3f64..2.0,
        ) {
            let cfg = VoxelGridConfig {
                voxel_size: [size, size, size],
                range_min: [0.0, 0.0, 0.0],
                range_max: [4.0, 4.0, 4.0],
                max_points_per_voxel: None,
            };
            let pts: Vec<[f64; 3]> = points.iter().map(|&(x, y, z)| [x, y, z]).collect();
            let n = pts.len();
            let cloud = PointCloud::new(pts, vec![0.0; n], "p");
            let grid = voxelize(&cloud, &cfg);
            let in_voxels: usize = grid.voxels.values().map(Voxel::num_points).sum();
            prop_assert_eq!(in_voxels + grid.dropped_points, n);
            let mut seen = std::collections::HashSet::new();
            for v in grid.voxels.values() {
                for &pid in &v.point_ids {
                    prop_assert!(seen.insert(pid), "point {} in two voxels", pid);
                }
            }
        }

        // Class-count consistency and offset bounds on labeled clouds.
        #[test]
        fn class_counts_and_offsets_are_consistent(
            raw in proptest::collection::vec(
                (0.0f64..4.0, 0.0f64..4.0, 0.0f64..4.0, 0u8..11),
                1..80,
            ),
        ) {
            let cfg = VoxelGridConfig::unit(4.0);
            let pts: Vec<[f64; 3]> = raw.iter().map(|&(x, y, z, _)| [x, y, z]).collect();
            let labels: Vec<u8> = raw.iter().map(|&(_, _, _, l)| l).collect();
            let n = pts.len();
            let cloud = PointCloud::new(pts, vec![0.0; n], "p").with_labels(labels).unwrap();
            let grid = voxelize(&cloud, &cfg);
            for v in grid.voxels.values() {
                let count_sum: usize = v.class_counts.values().sum();
                prop_assert_eq!(count_sum, v.num_points());
                for (slot, d) in v.offsets.iter().enumerate() {
                    for (axis, &c) in d.iter().enumerate() {
                        prop_assert!(c.abs() <= cfg.voxel_size[axis] / 2.0 + 1e-12);
                        // direct recomputation oracle: offset = p - center
                        let p = cloud.points[v.point_ids[slot]];
                        prop_assert_eq!(c, p[axis] - v.center[axis]);
                    }
                }
            }
        }

        // Monotonicity of the target set in tau.
        #[test]
        fn target_set_shrinks_with_tau(
            raw in proptest::collection::vec(
                (0.0f64..4.0, 0.0f64..4.0, 0.0f64..4.0, 0u8..11),
                1..80,
            ),
            tau1 in 1usize..4,
            extra in 0usize..3,
        ) {
            let cfg = VoxelGridConfig::unit(4.0);
            let pts: Vec<[f64; 3]> = raw.iter().map(|&(x, y, z, _)| [x, y, z]).collect();
            let labels: Vec<u8> = raw.iter().map(|&(_, _, _, l)| l).collect();
            let n = pts.len();
            let cloud = PointCloud::new(pts, vec![0.0; n], "p").with_labels(labels).unwrap();
            let grid = voxelize(&cloud, &cfg);
            let tau2 = tau1 + extra;
            for class in 0..11u8 {
                let low = grid.target_voxel_set(ClassId(class), tau1).unwrap();
                let high = grid.target_voxel_set(ClassId(class), tau2).unwrap();
                prop_assert!(high.iter().all(|i| low.contains(i)));
            }
        }
    }
}
