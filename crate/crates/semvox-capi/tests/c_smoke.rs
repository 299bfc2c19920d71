//! Compiles and runs a small C client against the generated header and
//! the cdylib, proving the ABI holds outside Rust.

use std::path::PathBuf;
use std::process::Command;

const C_CLIENT: &str = r#"
#include "semvox.h"
#include <stdio.h>
#include <string.h>

int main(void) {
    const char *spec =
        "{\"seed\": 4, \"extent\": 8.0, \"ground_density\": 2.0,"
        " \"objects\": [{\"class\": \"car\", \"count\": 2, \"points_per_object\": 30}]}";

    SvxPointCloud *cloud = NULL;
    if (svx_scene_generate(spec, &cloud) != SVX_STATUS_OK) return 1;
    if (svx_pointcloud_num_points(cloud) == 0) return 2;

    SvxVoxelConfig config;
    if (svx_voxel_config_default(&config) != SVX_STATUS_OK) return 3;
    for (int axis = 0; axis < 3; ++axis) {
        config.voxel_size[axis] = 1.0;
        config.range_min[axis] = 0.0;
        config.range_max[axis] = 8.0;
    }

    SvxVoxelGrid *grid = NULL;
    if (svx_voxelize(cloud, &config, &grid) != SVX_STATUS_OK) return 4;
    size_t n = svx_voxelgrid_num_voxels(grid);
    if (n == 0) return 5;

    SvxMaskAssignment *mask = NULL;
    if (svx_mask_uniform(grid, 0.7, 9, &mask) != SVX_STATUS_OK) return 6;
    if (svx_mask_num_masked(mask) != svx_mask_budget(0.7, n)) return 7;
    if (svx_mask_check_partition(grid, mask) != SVX_STATUS_OK) return 8;

    /* error path: message must be retrievable */
    double out = 0.0;
    double p[3] = {0.0, 0.0, 0.0};
    if (svx_chamfer_directional(p, 1, p, 0, false, &out) != SVX_STATUS_DOMAIN_ERROR) return 9;
    if (strlen(svx_last_error_message()) == 0) return 10;
    if (svx_chamfer_directional(p, 1, p, 1, false, &out) != SVX_STATUS_OK) return 11;
    if (out != 0.0) return 12;

    svx_mask_free(mask);
    svx_voxelgrid_free(grid);
    svx_pointcloud_free(cloud);
    printf("c client: %zu voxels, budget ok\n", n);
    return 0;
}
"#;

#[test]
fn c_client_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include = manifest.join("include");
    // `cargo test` links the rlib; make sure the cdylib artifact exists.
    let status = Command::new(std::env::var("CARGO").unwrap_or_else(|_| "cargo".to_string()))
        .args(["build", "-p", "semvox-capi", "--lib"])
        .current_dir(&manifest)
        .status()
        .unwrap();
    assert!(status.success(), "building the cdylib failed");
    // target dir: <workspace>/target/<profile>
    let lib_dir = std::env::current_exe().unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = lib_dir.join("libsemvox_capi.so");
    assert!(lib.exists(), "cdylib not found at {}", lib.display());

    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("client.c");
    std::fs::write(&src, C_CLIENT).unwrap();
    let bin = work.path().join("client");
    let compile = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lsemvox_capi")
        .arg("-o")
        .arg(&bin)
        .output()
        .expect("cc is available in this environment");
    assert!(
        compile.status.success(),
        "compile failed: {}",
        String::from_utf8_lossy(&compile.stderr)
    );
    let run = Command::new(&bin)
        .env("LD_LIBRARY_PATH", &lib_dir)
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "client exited with {:?}: {}{}",
        run.status.code(),
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).contains("budget ok"));
}
