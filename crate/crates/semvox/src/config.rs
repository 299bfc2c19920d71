//! Run configuration: one serializable struct drives every CLI command.
//!
//! Precedence is defaults < config file < environment (`SEMVOX_*`) <
//! command-line flags; the merged result (plus its hash) goes into the run
//! manifest so any output can be reproduced from the manifest alone.

use crate::masking::{BudgetMode, GroupWeights};
use crate::metrics::{ChamferScope, ChamferVariant, RankConfig};
use crate::pointcloud::{
    generate_scene, map_labels, read_labels, read_scan, ClassMap, PointCloud, ScanLayout,
    SceneSpec,
};
use crate::toy::ToyModelConfig;
use crate::voxel::{ImportanceLevel, VoxelGridConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("environment variable {0} is not valid: {1}")]
    BadEnv(String, String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Scene(#[from] crate::pointcloud::SceneSpecError),
    #[error(transparent)]
    PointCloud(#[from] crate::pointcloud::PointCloudError),
    #[error(transparent)]
    ClassMap(#[from] crate::pointcloud::ClassMapError),
}

fn default_layout() -> ScanLayout {
    ScanLayout::Xyzir5
}

/// One input scene: either a synthetic scene spec or a binary scan with
/// optional point-wise labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSource {
    Spec { spec: PathBuf },
    Scan {
        scan: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default = "default_layout")]
        layout: ScanLayout,
    },
}

fn default_rho() -> f64 {
    0.7
}
fn default_tau() -> usize {
    1
}
fn default_lambda() -> f64 {
    0.25
}

/// Everything a run needs. Field semantics follow the library types; the
/// CLI only adds path wiring on top.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub scenes: Vec<SceneSource>,
    /// Class-map JSON path; the bundled mapping when absent.
    pub classmap: Option<PathBuf>,
    pub voxel: VoxelGridConfig,
    pub toy: ToyModelConfig,
    /// Fraction of occupied voxels to mask.
    pub rho: Option<f64>,
    /// Class-target threshold.
    pub tau: Option<usize>,
    /// Target class name for class-target masking.
    pub class: Option<String>,
    pub weights: Option<GroupWeights>,
    /// Class-to-level map for group assignment (class names as keys).
    pub levels: Option<BTreeMap<String, ImportanceLevel>>,
    pub lambda_sem: Option<f64>,
    /// Root seed; randomized commands refuse to run without one.
    pub seed: Option<u64>,
    /// Evaluation/analysis seeds.
    pub seeds: Vec<u64>,
    /// Pre-computed per-class metrics (skips training in analyze/report).
    pub metrics_csv: Option<PathBuf>,
    pub include_occupancy_rank: bool,
    pub chamfer_variant: Option<ChamferVariant>,
    pub chamfer_scope: Option<ChamferScope>,
    /// Strict budget mode errors when a class-target set exceeds the
    /// masking budget instead of truncating it.
    pub strict_budget: bool,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Applies `SEMVOX_*` environment overrides (between file and flags).
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(name: &str) -> Result<Option<T>, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            match std::env::var(name) {
                Ok(raw) => raw
                    .parse::<T>()
                    .map(Some)
                    .map_err(|e| ConfigError::BadEnv(name.to_string(), e.to_string())),
                Err(_) => Ok(None),
            }
        }
        if let Some(seed) = parse::<u64>("SEMVOX_SEED")? {
            self.seed = Some(seed);
        }
        if let Some(rho) = parse::<f64>("SEMVOX_RHO")? {
            self.rho = Some(rho);
        }
        if let Some(tau) = parse::<usize>("SEMVOX_TAU")? {
            self.tau = Some(tau);
        }
        if let Some(lambda) = parse::<f64>("SEMVOX_LAMBDA_SEM")? {
            self.lambda_sem = Some(lambda);
        }
        if let Some(out) = parse::<PathBuf>("SEMVOX_OUT")? {
            self.out = Some(out);
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or_else(default_rho)
    }

    pub fn tau(&self) -> usize {
        self.tau.unwrap_or_else(default_tau)
    }

    pub fn lambda_sem(&self) -> f64 {
        self.lambda_sem.unwrap_or_else(default_lambda)
    }

    pub fn weights(&self) -> GroupWeights {
        self.weights.unwrap_or_default()
    }

    pub fn budget_mode(&self) -> BudgetMode {
        if self.strict_budget {
            BudgetMode::Strict
        } else {
            BudgetMode::Truncate
        }
    }

    pub fn chamfer_variant(&self) -> ChamferVariant {
        self.chamfer_variant.unwrap_or_default()
    }

    pub fn chamfer_scope(&self) -> ChamferScope {
        self.chamfer_scope.unwrap_or_default()
    }

    pub fn rank_config(&self) -> RankConfig {
        RankConfig {
            include_occupancy: self.include_occupancy_rank,
            weights: self.weights(),
            ..RankConfig::default()
        }
    }

    /// The root seed; an error when absent, since nothing here may fall
    /// back on wall-clock randomness.
    pub fn require_seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or_else(|| {
            ConfigError::Invalid(
                "no seed: pass --seed (or set SEMVOX_SEED / \"seed\" in the config)".to_string(),
            )
        })
    }

    /// Evaluation seeds: explicit `seeds`, else streams split off the root.
    pub fn eval_seeds(&self, count: usize) -> Result<Vec<u64>, ConfigError> {
        if !self.seeds.is_empty() {
            return Ok(self.seeds.clone());
        }
        let root = self.require_seed()?;
        Ok((0..count)
            .map(|i| crate::rng::derive_seed(root, &[0xe7a1, i as u64]))
            .collect())
    }

    pub fn class_map(&self) -> Result<ClassMap, ConfigError> {
        Ok(match &self.classmap {
            Some(path) => ClassMap::from_file(path)?,
            None => ClassMap::nuscenes_default(),
        })
    }

    /// Parsed class-to-level map (when configured).
    pub fn level_map(&self) -> Result<Option<BTreeMap<crate::pointcloud::ClassId, ImportanceLevel>>, ConfigError> {
        let Some(levels) = &self.levels else {
            return Ok(None);
        };
        let mut out = BTreeMap::new();
        for (name, &level) in levels {
            let class = crate::pointcloud::ClassId::from_name(name)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown class {name:?} in levels")))?;
            out.insert(class, level);
        }
        Ok(Some(out))
    }

    /// Loads every configured scene: specs are generated, scans are read,
    /// labeled, and mapped into the detection label space.
    pub fn load_scenes(&self) -> Result<Vec<PointCloud>, ConfigError> {
        let mut scenes = Vec::with_capacity(self.scenes.len());
        let map = self.class_map()?;
        for source in &self.scenes {
            match source {
                SceneSource::Spec { spec } => {
                    let spec = SceneSpec::from_file(spec)?;
                    scenes.push(generate_scene(&spec));
                }
                SceneSource::Scan { scan, labels, layout } => {
                    let mut cloud = read_scan(scan, *layout)?;
                    if let Some(labels) = labels {
                        let raw = read_labels(labels, cloud.len())?;
                        cloud = cloud.with_labels(raw)?;
                        cloud = map_labels(&cloud, &map)?;
                    }
                    cloud.normalize_intensity();
                    scenes.push(cloud);
                }
            }
        }
        Ok(scenes)
    }

    /// Canonical JSON plus its SHA-256 (the manifest identity).
    pub fn canonical_json(&self) -> (String, String) {
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        (json, hex)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.rho(), 0.7);
        assert_eq!(cfg.tau(), 1);
        assert_eq!(cfg.lambda_sem(), 0.25);
        assert!(cfg.require_seed().is_err());
        assert_eq!(cfg.weights(), GroupWeights::default());
    }

    #[test]
    fn file_then_env_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"rho": 0.5, "seed": 3, "tau": 2}"#).unwrap();
        let mut cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.rho(), 0.5);
        assert_eq!(cfg.seed, Some(3));
        // env beats file (the variable name is process-global; keep the
        // assignment scoped to this test's thread usage)
        std::env::set_var("SEMVOX_RHO", "0.9");
        cfg.apply_env().unwrap();
        std::env::remove_var("SEMVOX_RHO");
        assert_eq!(cfg.rho(), 0.9);
        assert_eq!(cfg.tau(), 2);
    }

    #[test]
    fn canonical_hash_is_stable_and_sensitive() {
        let cfg = RunConfig::default();
        let (_, h1) = cfg.canonical_json();
        let (_, h2) = cfg.canonical_json();
        assert_eq!(h1, h2);
        let other = RunConfig {
            rho: Some(0.5),
            ..RunConfig::default()
        };
        let (_, h3) = other.canonical_json();
        assert_ne!(h1, h3);
    }

    #[test]
    fn eval_seeds_derive_from_root_when_unset() {
        let mut cfg = RunConfig {
            seed: Some(17),
            ..RunConfig::default()
        };
        let seeds = cfg.eval_seeds(3).unwrap();
        assert_eq!(seeds.len(), 3);
        assert_eq!(seeds, cfg.eval_seeds(3).unwrap());
        cfg.seeds = vec![1, 2];
        assert_eq!(cfg.eval_seeds(3).unwrap(), vec![1, 2]);
    }

    #[test]
    fn scene_sources_parse_both_shapes() {
        let json = r#"{
            "scenes": [
                {"spec": "a.json"},
                {"scan": "b.bin", "labels": "b.label", "layout": "xyzi4"}
            ]
        }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.scenes.len(), 2);
        assert!(matches!(cfg.scenes[0], SceneSource::Spec { .. }));
        assert!(matches!(
            cfg.scenes[1],
            SceneSource::Scan { layout: ScanLayout::Xyzi4, .. }
        ));
    }
}
