//! Labeled LiDAR point clouds: binary scan/label ingestion, raw-to-detection
//! label mapping, and synthetic scene generation.

mod classmap;
mod io;
mod synth;

pub use classmap::{ClassMap, ClassMapError, BACKGROUND_CLASS, DETECTION_CLASS_NAMES, NUM_DETECTION_CLASSES, NUM_RAW_LABELS};
pub use io::{read_labels, read_scan, write_scan, ScanLayout};
pub use synth::{generate_scene, ObjectSpec, SceneSpec, SceneSpecError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A detection-class id: `0..10` are the benchmark object categories in
/// canonical order (see [`DETECTION_CLASS_NAMES`]), `10` is background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u8);

impl ClassId {
    pub const BACKGROUND: ClassId = ClassId(10);

    pub fn is_background(self) -> bool {
        self == Self::BACKGROUND
    }

    /// Canonical name, or `None` for ids outside the detection label space.
    pub fn name(self) -> Option<&'static str> {
        if (self.0 as usize) < NUM_DETECTION_CLASSES {
            Some(DETECTION_CLASS_NAMES[self.0 as usize])
        } else if self.is_background() {
            Some(BACKGROUND_CLASS)
        } else {
            None
        }
    }

    /// Resolves a canonical class name ("car", ..., "background").
    pub fn from_name(name: &str) -> Option<ClassId> {
        if name == BACKGROUND_CLASS {
            return Some(Self::BACKGROUND);
        }
        DETECTION_CLASS_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| ClassId(i as u8))
    }
}

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.name() {
            Some(name) => f.write_str(name),
            None => write!(f, "class#{}", self.0),
        }
    }
}

#[derive(Debug, Error)]
pub enum PointCloudError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated file {path}: {len} bytes is not a multiple of the {record} -byte record")]
    TruncatedFile { path: String, len: u64, record: usize },
    #[error("non-finite coordinate at point {index}")]
    NonFiniteValue { index: usize },
    #[error("label count mismatch: file {path} holds {actual} labels, expected {expected}")]
    CountMismatch {
        path: String,
        actual: u64,
        expected: usize,
    },
    #[error("raw label {value} at point {index} is out of range (valid: 0..{max})")]
    LabelOutOfRange { index: usize, value: u8, max: u8 },
    #[error("point {index} carries raw label {label} with no class-map entry")]
    UnmappedLabel { index: usize, label: u8 },
    #[error("cloud has no labels")]
    Unlabeled,
    #[error("labels length {labels} does not match point count {points}")]
    LabelLengthMismatch { labels: usize, points: usize },
}

/// One LiDAR sweep: positions with intensity, and optionally one semantic
/// label per point. Labels are raw ids (`0..32`) straight after ingestion
/// and detection-class ids (`0..=10`) after [`map_labels`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    /// Point positions in meters.
    pub points: Vec<[f64; 3]>,
    /// Per-point intensity. Raw sensor range is preserved by the readers;
    /// call [`PointCloud::normalize_intensity`] to map into `[0, 1]`.
    pub intensity: Vec<f64>,
    /// One label per point, or `None` for an unlabeled cloud.
    pub labels: Option<Vec<u8>>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, intensity: Vec<f64>, frame_id: impl Into<String>) -> Self {
        debug_assert_eq!(points.len(), intensity.len());
        PointCloud {
            points,
            intensity,
            labels: None,
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Attaches labels, enforcing the one-label-per-point invariant.
    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self, PointCloudError> {
        if labels.len() != self.points.len() {
            return Err(PointCloudError::LabelLengthMismatch {
                labels: labels.len(),
                points: self.points.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Scales intensity into `[0, 1]` by dividing by 255 when any value
    /// exceeds 1. Kept out of the readers so that scan round-trips stay
    /// byte-exact; intensity is pass-through metadata either way.
    pub fn normalize_intensity(&mut self) {
        if self.intensity.iter().any(|&v| v > 1.0) {
            for v in &mut self.intensity {
                *v /= 255.0;
            }
        }
    }
}

/// Replaces raw labels (`0..32`) with detection-class ids via the map.
/// Point order is preserved; the input cloud is untouched.
pub fn map_labels(cloud: &PointCloud, map: &ClassMap) -> Result<PointCloud, PointCloudError> {
    let labels = cloud.labels.as_ref().ok_or(PointCloudError::Unlabeled)?;
    let mapped = labels
        .iter()
        .enumerate()
        .map(|(index, &raw)| {
            map.lookup(raw)
                .map(|c| c.0)
                .ok_or(PointCloudError::UnmappedLabel { index, label: raw })
        })
        .collect::<Result<Vec<u8>, _>>()?;
    let mut out = cloud.clone();
    out.labels = Some(mapped);
    Ok(out)
}
