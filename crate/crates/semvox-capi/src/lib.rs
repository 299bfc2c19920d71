//! C ABI for the semvox toolkit.
//!
//! Conventions: objects cross the boundary as opaque handles created and
//! destroyed by `svx_*` pairs; every fallible call returns an [`SvxStatus`]
//! and writes its result through an out-pointer; the message behind the
//! most recent non-OK status on the current thread is available from
//! [`svx_last_error_message`]. The header `include/semvox.h` is generated
//! from this file by cbindgen at build time.

use semvox::masking::{
    apply_mask, mask_class_target, mask_importance_weighted, mask_uniform, BudgetMode,
    GroupWeights, MaskAssignment,
};
use semvox::metrics::{chamfer_directional, ChamferVariant};
use semvox::pointcloud::{
    generate_scene, map_labels, read_labels, read_scan, ClassMap, PointCloud, ScanLayout,
    SceneSpec,
};
use semvox::voxel::{canonical_priority, reference_level_map, voxelize, VoxelGrid};
use semvox::VoxelGridConfig;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvxStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// File could not be read or written.
    IoError = 3,
    /// Input could not be parsed (JSON, config, file contents).
    ParseError = 4,
    /// The operation itself failed (budget, domain, dimension errors).
    DomainError = 5,
    /// An internal panic was caught at the boundary.
    Panic = 6,
}

/// Scan record layout for [`svx_pointcloud_read_scan`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvxScanLayout {
    /// 4 little-endian f32 per point: x, y, z, intensity.
    Xyzi4 = 0,
    /// 5 little-endian f32 per point: x, y, z, intensity, ring.
    Xyzir5 = 1,
}

/// Voxel grid geometry. `max_points_per_voxel` of 0 means unlimited.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SvxVoxelConfig {
    pub voxel_size: [f64; 3],
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub max_points_per_voxel: usize,
}

/// Per-group masking weights; weights below 1 protect a group.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SvxGroupWeights {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
    pub background: f64,
}

/// Opaque labeled point cloud.
pub struct SvxPointCloud(PointCloud);
/// Opaque sparse voxel grid.
pub struct SvxVoxelGrid(VoxelGrid);
/// Opaque masked/visible voxel partition.
pub struct SvxMaskAssignment(MaskAssignment);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(status: SvxStatus, message: impl Into<String>) -> SvxStatus {
    let message = message.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message.replace('\0', " ")).unwrap();
    });
    status
}

macro_rules! try_status {
    ($expr:expr) => {
        match $expr {
            Ok(value) => value,
            Err(status) => return status,
        }
    };
}

fn guarded(f: impl FnOnce() -> SvxStatus) -> SvxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(SvxStatus::Panic, message)
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, SvxStatus> {
    if ptr.is_null() {
        return Err(set_error(SvxStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| set_error(SvxStatus::InvalidUtf8, "string argument is not UTF-8"))
}

fn out_arg<T>(ptr: *mut T) -> Result<(), SvxStatus> {
    if ptr.is_null() {
        return Err(set_error(SvxStatus::NullArgument, "null out-pointer"));
    }
    Ok(())
}

unsafe fn handle_arg<'a, T>(ptr: *const T) -> Result<&'a T, SvxStatus> {
    ptr.as_ref()
        .ok_or_else(|| set_error(SvxStatus::NullArgument, "null handle"))
}

/// The library version as a static string.
#[no_mangle]
pub extern "C" fn svx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent error on this thread. The pointer
/// stays valid until the next failing `svx_*` call on the same thread.
#[no_mangle]
pub extern "C" fn svx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Frees a string returned by an `svx_*_to_json` function.
///
/// # Safety
/// `s` must be null or a pointer previously returned by this library and
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn svx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The exact masked-voxel budget: round(rho * n), ties to even.
#[no_mangle]
pub extern "C" fn svx_mask_budget(rho: f64, num_voxels: usize) -> usize {
    semvox::masking::mask_budget(rho.clamp(0.0, 1.0), num_voxels)
}

/// Generates a synthetic labeled scene from a scene-spec JSON document.
///
/// # Safety
/// `spec_json` must be a valid NUL-terminated string; `out` must be a
/// valid pointer. On success `*out` owns a new cloud; free it with
/// [`svx_pointcloud_free`].
#[no_mangle]
pub unsafe extern "C" fn svx_scene_generate(
    spec_json: *const c_char,
    out: *mut *mut SvxPointCloud,
) -> SvxStatus {
    guarded(|| {
        let json = try_status!(utf8_arg(spec_json));
        try_status!(out_arg(out));
        let spec: SceneSpec = match serde_json::from_str(json) {
            Ok(spec) => spec,
            Err(e) => return set_error(SvxStatus::ParseError, e.to_string()),
        };
        if let Err(e) = spec.validate() {
            return set_error(SvxStatus::ParseError, e.to_string());
        }
        *out = Box::into_raw(Box::new(SvxPointCloud(generate_scene(&spec))));
        SvxStatus::Ok
    })
}

/// Reads a binary scan file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be valid. On
/// success `*out` owns a new cloud.
#[no_mangle]
pub unsafe extern "C" fn svx_pointcloud_read_scan(
    path: *const c_char,
    layout: SvxScanLayout,
    out: *mut *mut SvxPointCloud,
) -> SvxStatus {
    guarded(|| {
        let path = try_status!(utf8_arg(path));
        try_status!(out_arg(out));
        let layout = match layout {
            SvxScanLayout::Xyzi4 => ScanLayout::Xyzi4,
            SvxScanLayout::Xyzir5 => ScanLayout::Xyzir5,
        };
        match read_scan(path, layout) {
            Ok(cloud) => {
                *out = Box::into_raw(Box::new(SvxPointCloud(cloud)));
                SvxStatus::Ok
            }
            Err(e @ semvox::pointcloud::PointCloudError::Io { .. }) => {
                set_error(SvxStatus::IoError, e.to_string())
            }
            Err(e) => set_error(SvxStatus::ParseError, e.to_string()),
        }
    })
}

/// Attaches point-wise labels from a label file (one byte per point) and,
/// when `map_to_detection` is set, maps them through the bundled
/// raw-to-detection class table.
///
/// # Safety
/// `cloud` must be a live handle from this library; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn svx_pointcloud_attach_labels(
    cloud: *mut SvxPointCloud,
    path: *const c_char,
    map_to_detection: bool,
) -> SvxStatus {
    guarded(|| {
        let Some(cloud) = cloud.as_mut() else {
            return set_error(SvxStatus::NullArgument, "null handle");
        };
        let path = try_status!(utf8_arg(path));
        let labels = match read_labels(path, cloud.0.len()) {
            Ok(labels) => labels,
            Err(e @ semvox::pointcloud::PointCloudError::Io { .. }) => {
                return set_error(SvxStatus::IoError, e.to_string())
            }
            Err(e) => return set_error(SvxStatus::ParseError, e.to_string()),
        };
        let labeled = match cloud.0.clone().with_labels(labels) {
            Ok(labeled) => labeled,
            Err(e) => return set_error(SvxStatus::DomainError, e.to_string()),
        };
        cloud.0 = if map_to_detection {
            match map_labels(&labeled, &ClassMap::nuscenes_default()) {
                Ok(mapped) => mapped,
                Err(e) => return set_error(SvxStatus::DomainError, e.to_string()),
            }
        } else {
            labeled
        };
        SvxStatus::Ok
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn svx_pointcloud_num_points(cloud: *const SvxPointCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `cloud` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn svx_pointcloud_free(cloud: *mut SvxPointCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Fills `out` with the full-scene default grid geometry.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn svx_voxel_config_default(out: *mut SvxVoxelConfig) -> SvxStatus {
    guarded(|| {
        try_status!(out_arg(out));
        let cfg = VoxelGridConfig::default();
        *out = SvxVoxelConfig {
            voxel_size: cfg.voxel_size,
            range_min: cfg.range_min,
            range_max: cfg.range_max,
            max_points_per_voxel: 0,
        };
        SvxStatus::Ok
    })
}

/// Voxelizes a cloud. Out-of-range points are dropped (see
/// [`svx_voxelgrid_dropped_points`]).
///
/// # Safety
/// `cloud` and `config` must be live/valid; `out` must be valid. On
/// success `*out` owns a new grid; free with [`svx_voxelgrid_free`].
#[no_mangle]
pub unsafe extern "C" fn svx_voxelize(
    cloud: *const SvxPointCloud,
    config: *const SvxVoxelConfig,
    out: *mut *mut SvxVoxelGrid,
) -> SvxStatus {
    guarded(|| {
        let Ok(cloud) = handle_arg(cloud) else { return SvxStatus::NullArgument };
        let Ok(config) = handle_arg(config) else { return SvxStatus::NullArgument };
        try_status!(out_arg(out));
        let cfg = VoxelGridConfig {
            voxel_size: config.voxel_size,
            range_min: config.range_min,
            range_max: config.range_max,
            max_points_per_voxel: (config.max_points_per_voxel > 0)
                .then_some(config.max_points_per_voxel),
        };
        if let Err(e) = cfg.validate() {
            return set_error(SvxStatus::DomainError, e.to_string());
        }
        *out = Box::into_raw(Box::new(SvxVoxelGrid(voxelize(&cloud.0, &cfg))));
        SvxStatus::Ok
    })
}

/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn svx_voxelgrid_num_voxels(grid: *const SvxVoxelGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.num_voxels())
}

/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn svx_voxelgrid_dropped_points(grid: *const SvxVoxelGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.dropped_points)
}

/// Assigns importance groups. `levels_json` maps class names to "high",
/// "medium" or "low" (e.g. `{"car": "high"}`, all ten classes required);
/// pass null for the bundled reference assignment.
///
/// # Safety
/// `grid` must be a live handle; `levels_json` null or a valid string.
#[no_mangle]
pub unsafe extern "C" fn svx_voxelgrid_assign_groups(
    grid: *mut SvxVoxelGrid,
    levels_json: *const c_char,
) -> SvxStatus {
    guarded(|| {
        let Some(grid) = grid.as_mut() else {
            return set_error(SvxStatus::NullArgument, "null handle");
        };
        let levels = if levels_json.is_null() {
            reference_level_map()
        } else {
            let json = try_status!(utf8_arg(levels_json));
            let by_name: std::collections::BTreeMap<String, semvox::voxel::ImportanceLevel> =
                match serde_json::from_str(json) {
                    Ok(map) => map,
                    Err(e) => return set_error(SvxStatus::ParseError, e.to_string()),
                };
            let mut levels = std::collections::BTreeMap::new();
            for (name, level) in by_name {
                let Some(class) = semvox::pointcloud::ClassId::from_name(&name) else {
                    return set_error(
                        SvxStatus::ParseError,
                        format!("unknown class name {name:?}"),
                    );
                };
                levels.insert(class, level);
            }
            levels
        };
        match grid.0.assign_groups(&levels, &canonical_priority()) {
            Ok(grouped) => {
                grid.0 = grouped;
                SvxStatus::Ok
            }
            Err(e) => set_error(SvxStatus::DomainError, e.to_string()),
        }
    })
}

/// # Safety
/// `grid` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn svx_voxelgrid_free(grid: *mut SvxVoxelGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

unsafe fn finish_mask(
    result: Result<MaskAssignment, semvox::masking::MaskError>,
    out: *mut *mut SvxMaskAssignment,
) -> SvxStatus {
    match result {
        Ok(assignment) => {
            *out = Box::into_raw(Box::new(SvxMaskAssignment(assignment)));
            SvxStatus::Ok
        }
        Err(e) => set_error(SvxStatus::DomainError, e.to_string()),
    }
}

/// Uniform random masking at ratio `rho`, deterministic per seed.
///
/// # Safety
/// `grid` must be a live handle; `out` valid. On success `*out` owns a new
/// assignment; free with [`svx_mask_free`].
#[no_mangle]
pub unsafe extern "C" fn svx_mask_uniform(
    grid: *const SvxVoxelGrid,
    rho: f64,
    seed: u64,
    out: *mut *mut SvxMaskAssignment,
) -> SvxStatus {
    guarded(|| {
        let grid = try_status!(handle_arg(grid));
        try_status!(out_arg(out));
        finish_mask(mask_uniform(&grid.0, rho, seed), out)
    })
}

/// Class-targeted masking: voxels holding at least `tau` points of
/// detection class `class_id` are masked first, the budget is filled
/// uniformly. With `strict` set, a target set larger than the budget is an
/// error; otherwise it is subsampled.
///
/// # Safety
/// `grid` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn svx_mask_class_target(
    grid: *const SvxVoxelGrid,
    class_id: u8,
    tau: usize,
    rho: f64,
    seed: u64,
    strict: bool,
    out: *mut *mut SvxMaskAssignment,
) -> SvxStatus {
    guarded(|| {
        let grid = try_status!(handle_arg(grid));
        try_status!(out_arg(out));
        let mode = if strict { BudgetMode::Strict } else { BudgetMode::Truncate };
        finish_mask(
            mask_class_target(
                &grid.0,
                semvox::pointcloud::ClassId(class_id),
                tau,
                rho,
                seed,
                mode,
            ),
            out,
        )
    })
}

/// Importance-weighted masking across the four groups (the grid needs
/// groups; see [`svx_voxelgrid_assign_groups`]).
///
/// # Safety
/// `grid` and `weights` must be live/valid; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn svx_mask_importance_weighted(
    grid: *const SvxVoxelGrid,
    weights: *const SvxGroupWeights,
    rho: f64,
    seed: u64,
    out: *mut *mut SvxMaskAssignment,
) -> SvxStatus {
    guarded(|| {
        let grid = try_status!(handle_arg(grid));
        let weights = try_status!(handle_arg(weights));
        try_status!(out_arg(out));
        let weights = GroupWeights {
            high: weights.high,
            medium: weights.medium,
            low: weights.low,
            background: weights.background,
        };
        finish_mask(mask_importance_weighted(&grid.0, &weights, rho, seed), out)
    })
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn svx_mask_num_masked(mask: *const SvxMaskAssignment) -> usize {
    mask.as_ref().map_or(0, |m| m.0.num_masked())
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn svx_mask_realized_ratio(mask: *const SvxMaskAssignment) -> f64 {
    mask.as_ref().map_or(0.0, |m| m.0.realized_ratio)
}

/// Copies the masked voxel indices as consecutive (x, y, z) triples.
/// `capacity` counts i32 slots; exactly `3 * svx_mask_num_masked` are
/// needed. Returns the number of slots written.
///
/// # Safety
/// `mask` must be a live handle; `buffer` must point to at least
/// `capacity` writable i32 slots.
#[no_mangle]
pub unsafe extern "C" fn svx_mask_copy_masked_indices(
    mask: *const SvxMaskAssignment,
    buffer: *mut i32,
    capacity: usize,
) -> usize {
    let Some(mask) = mask.as_ref() else { return 0 };
    if buffer.is_null() {
        return 0;
    }
    let slots = std::slice::from_raw_parts_mut(buffer, capacity);
    let mut written = 0;
    for idx in &mask.0.masked {
        if written + 3 > capacity {
            break;
        }
        slots[written..written + 3].copy_from_slice(&idx.0);
        written += 3;
    }
    written
}

/// Serializes the assignment (policy echo, seed, masked indices, per-group
/// table) as JSON. Free the result with [`svx_string_free`].
///
/// # Safety
/// `mask` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn svx_mask_to_json(
    mask: *const SvxMaskAssignment,
    out: *mut *mut c_char,
) -> SvxStatus {
    guarded(|| {
        let mask = try_status!(handle_arg(mask));
        try_status!(out_arg(out));
        match serde_json::to_string_pretty(&mask.0) {
            Ok(json) => {
                *out = CString::new(json).unwrap().into_raw();
                SvxStatus::Ok
            }
            Err(e) => set_error(SvxStatus::DomainError, e.to_string()),
        }
    })
}

/// Checks that `mask` partitions `grid` (every occupied voxel is exactly
/// one of masked or visible).
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn svx_mask_check_partition(
    grid: *const SvxVoxelGrid,
    mask: *const SvxMaskAssignment,
) -> SvxStatus {
    guarded(|| {
        let grid = try_status!(handle_arg(grid));
        let mask = try_status!(handle_arg(mask));
        match apply_mask(&grid.0, &mask.0) {
            Ok(_) => SvxStatus::Ok,
            Err(e) => set_error(SvxStatus::DomainError, e.to_string()),
        }
    })
}

/// # Safety
/// `mask` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn svx_mask_free(mask: *mut SvxMaskAssignment) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Directional Chamfer distance from `from` to `to`, both given as flat
/// xyz triples. `squared` selects squared Euclidean distances.
///
/// # Safety
/// `from` must point to `3 * from_len` doubles, `to` to `3 * to_len`;
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn svx_chamfer_directional(
    from: *const f64,
    from_len: usize,
    to: *const f64,
    to_len: usize,
    squared: bool,
    out: *mut f64,
) -> SvxStatus {
    guarded(|| {
        if (from.is_null() && from_len > 0) || (to.is_null() && to_len > 0) {
            return set_error(SvxStatus::NullArgument, "null point buffer");
        }
        try_status!(out_arg(out));
        let collect = |ptr: *const f64, len: usize| -> Vec<[f64; 3]> {
            std::slice::from_raw_parts(ptr, len * 3)
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect()
        };
        let from = collect(from, from_len);
        let to = collect(to, to_len);
        let variant = if squared {
            ChamferVariant::Squared
        } else {
            ChamferVariant::Euclidean
        };
        match chamfer_directional(&from, &to, variant) {
            Ok(d) => {
                *out = d;
                SvxStatus::Ok
            }
            Err(e) => set_error(SvxStatus::DomainError, e.to_string()),
        }
    })
}
