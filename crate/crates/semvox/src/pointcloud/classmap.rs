//! Raw-label to detection-class mapping.
//!
//! Scans come with 32 raw semantic labels; the downstream task only knows
//! the 10 benchmark object categories plus background. The mapping ships
//! as a versioned JSON data file (auditable, overridable) rather than
//! being hardcoded; [`ClassMap::nuscenes_default`] embeds that file.

use super::ClassId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// The 10 benchmark detection categories, in canonical id order. This
/// order also serves as the fixed tie-break priority when a voxel holds
/// several classes of equal importance.
pub const DETECTION_CLASS_NAMES: [&str; 10] = [
    "car",
    "pedestrian",
    "construction_vehicle",
    "motorcycle",
    "truck",
    "bus",
    "traffic_cone",
    "barrier",
    "trailer",
    "bicycle",
];

pub const NUM_DETECTION_CLASSES: usize = 10;
pub const NUM_RAW_LABELS: usize = 32;
pub const BACKGROUND_CLASS: &str = "background";

const DEFAULT_CLASSMAP_JSON: &str = include_str!("../../data/nuscenes_classmap.json");

#[derive(Debug, Error)]
pub enum ClassMapError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed class map: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("raw label {0} has no entry (all of 0..32 must be mapped)")]
    MissingRawLabel(u8),
    #[error("raw label key {0} is out of range (valid: 0..32)")]
    RawLabelOutOfRange(String),
    #[error("unknown detection class name {0:?}")]
    UnknownClassName(String),
}

#[derive(Debug, Deserialize, Serialize)]
struct ClassMapFile {
    #[serde(default)]
    version: String,
    raw_to_detection: BTreeMap<String, String>,
}

/// Total mapping from raw label ids (`0..32`) to detection classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    version: String,
    table: [ClassId; NUM_RAW_LABELS],
}

impl ClassMap {
    /// The bundled mapping following the official lidarseg-to-detection
    /// convention: vehicle and pedestrian subtypes collapse onto their
    /// detection category, everything flat/static/vegetation (plus noise,
    /// animals, debris, emergency vehicles and the ego vehicle) is
    /// background.
    pub fn nuscenes_default() -> ClassMap {
        Self::from_json(DEFAULT_CLASSMAP_JSON).expect("bundled class map must be valid")
    }

    /// Identity over the detection label space: already-mapped clouds pass
    /// through unchanged (ids at or above background stay background).
    pub fn identity() -> ClassMap {
        let mut table = [ClassId::BACKGROUND; NUM_RAW_LABELS];
        for (i, slot) in table.iter_mut().enumerate().take(NUM_DETECTION_CLASSES) {
            *slot = ClassId(i as u8);
        }
        ClassMap {
            version: "identity".to_string(),
            table,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<ClassMap, ClassMapError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ClassMapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Parses and validates: every raw id in `0..32` mapped exactly once,
    /// every target a known class name.
    pub fn from_json(text: &str) -> Result<ClassMap, ClassMapError> {
        let file: ClassMapFile = serde_json::from_str(text)?;
        let mut table = [None; NUM_RAW_LABELS];
        for (key, name) in &file.raw_to_detection {
            let raw: usize = key
                .parse()
                .ok()
                .filter(|&r| r < NUM_RAW_LABELS)
                .ok_or_else(|| ClassMapError::RawLabelOutOfRange(key.clone()))?;
            let class = ClassId::from_name(name)
                .ok_or_else(|| ClassMapError::UnknownClassName(name.clone()))?;
            table[raw] = Some(class);
        }
        let mut resolved = [ClassId::BACKGROUND; NUM_RAW_LABELS];
        for (raw, entry) in table.iter().enumerate() {
            resolved[raw] = entry.ok_or(ClassMapError::MissingRawLabel(raw as u8))?;
        }
        Ok(ClassMap {
            version: file.version,
            table: resolved,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Detection class for a raw label, or `None` when out of range.
    pub fn lookup(&self, raw: u8) -> Option<ClassId> {
        self.table.get(raw as usize).copied()
    }
}
