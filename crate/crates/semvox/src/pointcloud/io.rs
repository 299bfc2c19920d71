//! Binary scan and label files.
//!
//! Scans are packed little-endian `f32` records: `xyzi4` is
//! `(x, y, z, intensity)` at 16 bytes per point, `xyzir5` adds a trailing
//! ring index at 20 bytes per point (the ring is dropped on read). Label
//! files hold one unsigned byte per point in scan order.

use super::{PointCloud, PointCloudError};
use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::NUM_RAW_LABELS;

/// Record layout of a binary scan file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanLayout {
    /// 4 floats per point: x, y, z, intensity.
    Xyzi4,
    /// 5 floats per point: x, y, z, intensity, ring.
    Xyzir5,
}

impl ScanLayout {
    pub fn record_bytes(self) -> usize {
        match self {
            ScanLayout::Xyzi4 => 16,
            ScanLayout::Xyzir5 => 20,
        }
    }

    pub fn floats(self) -> usize {
        self.record_bytes() / 4
    }
}

impl std::str::FromStr for ScanLayout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xyzi4" => Ok(ScanLayout::Xyzi4),
            "xyzir5" => Ok(ScanLayout::Xyzir5),
            other => Err(format!("unknown scan layout {other:?} (expected xyzi4 or xyzir5)")),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> PointCloudError {
    PointCloudError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a binary scan. The returned cloud is unlabeled; coordinates are
/// checked for NaN/infinity and reported with their point index.
pub fn read_scan(path: impl AsRef<Path>, layout: ScanLayout) -> Result<PointCloud, PointCloudError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let record = layout.record_bytes();
    if bytes.len() % record != 0 {
        return Err(PointCloudError::TruncatedFile {
            path: path.display().to_string(),
            len: bytes.len() as u64,
            record,
        });
    }
    let n = bytes.len() / record;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for (index, chunk) in bytes.chunks_exact(record).enumerate() {
        let x = LittleEndian::read_f32(&chunk[0..4]) as f64;
        let y = LittleEndian::read_f32(&chunk[4..8]) as f64;
        let z = LittleEndian::read_f32(&chunk[8..12]) as f64;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(PointCloudError::NonFiniteValue { index });
        }
        points.push([x, y, z]);
        intensity.push(LittleEndian::read_f32(&chunk[12..16]) as f64);
        // xyzir5: chunk[16..20] is the ring index, dropped.
    }
    let frame_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(PointCloud {
        points,
        intensity,
        labels: None,
        frame_id,
    })
}

/// Writes a cloud back out in the given layout. With `xyzir5` the ring
/// channel (not retained by [`read_scan`]) is written as zero.
pub fn write_scan(
    cloud: &PointCloud,
    path: impl AsRef<Path>,
    layout: ScanLayout,
) -> Result<(), PointCloudError> {
    let path = path.as_ref();
    let record = layout.record_bytes();
    let mut bytes = vec![0u8; cloud.len() * record];
    for (i, chunk) in bytes.chunks_exact_mut(record).enumerate() {
        let p = cloud.points[i];
        LittleEndian::write_f32(&mut chunk[0..4], p[0] as f32);
        LittleEndian::write_f32(&mut chunk[4..8], p[1] as f32);
        LittleEndian::write_f32(&mut chunk[8..12], p[2] as f32);
        LittleEndian::write_f32(&mut chunk[12..16], cloud.intensity[i] as f32);
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Reads a per-point label file: one unsigned byte per point, scan order.
/// The byte count must equal `expected_count` and every value must be a
/// valid raw label (`< 32`).
pub fn read_labels(path: impl AsRef<Path>, expected_count: usize) -> Result<Vec<u8>, PointCloudError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() != expected_count {
        return Err(PointCloudError::CountMismatch {
            path: path.display().to_string(),
            actual: bytes.len() as u64,
            expected: expected_count,
        });
    }
    for (index, &value) in bytes.iter().enumerate() {
        if value as usize >= NUM_RAW_LABELS {
            return Err(PointCloudError::LabelOutOfRange {
                index,
                value,
                max: NUM_RAW_LABELS as u8,
            });
        }
    }
    Ok(bytes)
}
