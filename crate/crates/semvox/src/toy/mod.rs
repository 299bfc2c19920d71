//! A desk-scale masked voxel autoencoder.
//!
//! The model is deliberately tiny but structurally faithful to the full
//! pretraining loop: occupied voxels become tokens (handcrafted statistics
//! through a per-voxel encoder), masked positions are replaced by a shared
//! learned mask token, and a decoder conditioned on voxel position and the
//! mean feature of nearby visible voxels produces a per-voxel feature that
//! feeds three heads — a fixed-size point-set prediction, an occupancy
//! logit, and (through per-point offsets) the semantic classifier. All
//! four loss terms compose exactly as logged, and training is plain
//! full-batch gradient descent, bit-reproducible per seed.

mod analysis;
mod model;

pub use analysis::{
    build_policy_from_report, compare_policies, prepare_scenes, run_class_importance_analysis,
    training_mask_seeds, AnalysisCell, AnalysisRun, ComparisonEntry, ComparisonSpec,
    PolicyComparison,
};
pub use model::{
    train_toy, train_toy_prepped, ModelGrads, ScenePrep, SceneReconstruction, ToyModel,
};

use crate::masking::MaskError;
use crate::metrics::{ChamferScope, ChamferVariant, MetricsError};
use crate::pointcloud::ClassId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("policy comparison needs at least two policies, got {0}")]
    PolicyCount(usize),
    #[error("importance report has no row for class {0}")]
    MissingLevel(ClassId),
    #[error("no analysis cell succeeded for class {0}")]
    EmptyClassCell(ClassId),
    #[error(
        "masked-count mismatch on scene {scene} seed {seed}: policies masked {counts:?} voxels"
    )]
    BudgetMismatch {
        scene: String,
        seed: u64,
        counts: Vec<usize>,
    },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Voxel(#[from] crate::voxel::VoxelError),
}

fn default_feature_dim() -> usize {
    128
}
fn default_encoder_hidden() -> Vec<usize> {
    vec![64]
}
fn default_points_out() -> usize {
    4
}
fn default_learning_rate() -> f64 {
    0.05
}
fn default_steps() -> usize {
    200
}
fn default_context_radius() -> f64 {
    2.5
}
fn default_image_patches() -> usize {
    16
}
fn default_image_patch_dim() -> usize {
    8
}
fn default_image_mask_ratio() -> f64 {
    0.75
}
fn default_true() -> bool {
    true
}
fn default_semantic_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_num_classes() -> usize {
    11
}

/// Hyperparameters of the toy model and its training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    /// Decoder-side voxel feature width; the semantic head input is this
    /// plus the 3 offset components.
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Hidden sizes shared by the encoder and decoder MLPs.
    #[serde(default = "default_encoder_hidden")]
    pub encoder_hidden: Vec<usize>,
    /// Fixed number of points predicted per voxel.
    #[serde(default = "default_points_out")]
    pub points_per_voxel_out: usize,
    /// Model-init seed (independent of scene and masking seeds).
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Radius (meters) of the visible-context mean fed to the decoder.
    #[serde(default = "default_context_radius")]
    pub context_radius: f64,
    /// Shape of the stand-in image branch.
    #[serde(default = "default_image_patches")]
    pub image_patches: usize,
    #[serde(default = "default_image_patch_dim")]
    pub image_patch_dim: usize,
    #[serde(default = "default_image_mask_ratio")]
    pub image_mask_ratio: f64,
    /// Whether the auxiliary semantic branch exists at all. A branch that
    /// exists but trains with `lambda_sem = 0` leaves the base trajectory
    /// untouched; disabling it here is the bare baseline.
    #[serde(default = "default_true")]
    pub semantic_branch: bool,
    #[serde(default = "default_semantic_hidden")]
    pub semantic_hidden: Vec<usize>,
    /// Semantic label space (10 detection classes + background).
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub chamfer_variant: ChamferVariant,
    #[serde(default)]
    pub chamfer_scope: ChamferScope,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig {
            feature_dim: default_feature_dim(),
            encoder_hidden: default_encoder_hidden(),
            points_per_voxel_out: default_points_out(),
            seed: 0,
            learning_rate: default_learning_rate(),
            steps: default_steps(),
            context_radius: default_context_radius(),
            image_patches: default_image_patches(),
            image_patch_dim: default_image_patch_dim(),
            image_mask_ratio: default_image_mask_ratio(),
            semantic_branch: true,
            semantic_hidden: default_semantic_hidden(),
            num_classes: default_num_classes(),
            chamfer_variant: ChamferVariant::default(),
            chamfer_scope: ChamferScope::default(),
        }
    }
}

impl ToyModelConfig {
    /// A small-but-real configuration for unit tests and quick runs.
    pub fn desk(seed: u64) -> Self {
        ToyModelConfig {
            feature_dim: 16,
            encoder_hidden: vec![16],
            points_per_voxel_out: 3,
            seed,
            learning_rate: 0.05,
            steps: 60,
            context_radius: 2.5,
            image_patches: 6,
            image_patch_dim: 4,
            image_mask_ratio: 0.75,
            semantic_branch: true,
            semantic_hidden: vec![12],
            num_classes: 11,
            chamfer_variant: ChamferVariant::Euclidean,
            chamfer_scope: ChamferScope::PerVoxel,
        }
    }
}
