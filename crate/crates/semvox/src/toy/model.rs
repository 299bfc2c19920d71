//! The toy model itself: scene preprocessing, forward/backward, training.

use super::{ToyError, ToyModelConfig};
use crate::head::{Activation, Mlp, MlpForward, MlpGrads, SemanticHead};
use crate::kdtree::KdTree;
use crate::losses::{
    image_mse, occupancy_loss_with_grad, semantic_loss, total_loss, LossBreakdown,
};
use crate::masking::{apply_policy, BudgetMode, MaskAssignment, MaskPolicy};
use crate::metrics::{ChamferVariant, Reconstruction};
use crate::pointcloud::{ClassId, PointCloud};
use crate::rng::{derive_seed, rng_for, sample_without_replacement, uniform_unit};
use crate::voxel::{voxelize, ImportanceLevel, VoxelGrid, VoxelGridConfig, VoxelIndex};
use crate::{masking::mask_budget, voxel::canonical_priority};
use std::collections::BTreeMap;

/// Per-voxel input statistics: log point count, centroid offset (3),
/// offset variance diagonal (3), all normalized by the voxel size.
pub const STAT_DIM: usize = 7;

// Stream tags for seed derivation (see `rng::derive_seed`).
const INIT_STREAM: u64 = 0x01;
const MASK_STREAM: u64 = 0x02;
const IMAGE_CONTENT_STREAM: u64 = 0x03;
const IMAGE_MASK_STREAM: u64 = 0x04;

// Component ids under INIT_STREAM.
const INIT_ENCODER: u64 = 0;
const INIT_DECODER: u64 = 1;
const INIT_POINT_HEAD: u64 = 2;
const INIT_OCC_HEAD: u64 = 3;
const INIT_MASK_TOKEN: u64 = 4;
const INIT_SEMANTIC: u64 = 5;

/// A scene preprocessed for training and evaluation: the voxel grid plus
/// everything derived from it that does not depend on a mask assignment.
#[derive(Debug, Clone)]
pub struct ScenePrep {
    pub grid: VoxelGrid,
    pub frame_id: String,
    /// Occupied voxel indices, sorted.
    occupied: Vec<VoxelIndex>,
    /// Per occupied voxel: input statistics (flat, `STAT_DIM` each).
    stats: Vec<f64>,
    /// Per occupied voxel: absolute member points.
    truth_points: Vec<Vec<[f64; 3]>>,
    /// Candidate voxels for occupancy prediction: the occupied set plus
    /// its 6-neighborhood dilation (in-range), sorted.
    candidates: Vec<VoxelIndex>,
    /// Candidate slot -> occupied slot, when the candidate is occupied.
    cand_occupied: Vec<Option<usize>>,
    /// Occupied slot -> candidate slot.
    occ_to_cand: Vec<usize>,
    /// Candidate centers (absolute meters).
    centers: Vec<[f64; 3]>,
    /// Candidate centers normalized into [-1, 1] per axis.
    positions: Vec<[f64; 3]>,
    /// Candidate slot -> occupied slots within the context radius.
    neighbors: Vec<Vec<usize>>,
    /// Occupancy truth bit per candidate.
    occupancy_truth: BTreeMap<VoxelIndex, bool>,
    /// Semantic supervision points: (occupied slot, offset, label, point id).
    sem_points: Vec<(usize, [f64; 3], u8, usize)>,
    /// Stand-in image: `image_patches * image_patch_dim` values.
    image: Vec<f64>,
}

impl ScenePrep {
    /// Voxelizes and preprocesses one scene. `levels` (when given) assigns
    /// importance groups so group-aware policies can run on the grid.
    pub fn build(
        cloud: &PointCloud,
        voxel_cfg: &VoxelGridConfig,
        levels: Option<&BTreeMap<ClassId, ImportanceLevel>>,
        model_cfg: &ToyModelConfig,
        scene_index: usize,
    ) -> Result<ScenePrep, ToyError> {
        let mut grid = voxelize(cloud, voxel_cfg);
        if let Some(levels) = levels {
            grid = grid.assign_groups(levels, &canonical_priority())?;
        }
        Ok(Self::from_grid(grid, model_cfg, scene_index))
    }

    /// Preprocesses an already-voxelized grid.
    pub fn from_grid(grid: VoxelGrid, model_cfg: &ToyModelConfig, scene_index: usize) -> ScenePrep {
        let cfg = &grid.config;
        let occupied: Vec<VoxelIndex> = grid.voxels.keys().copied().collect();
        let occupied_slot: BTreeMap<VoxelIndex, usize> = occupied
            .iter()
            .enumerate()
            .map(|(slot, &idx)| (idx, slot))
            .collect();

        let mut stats = Vec::with_capacity(occupied.len() * STAT_DIM);
        let mut truth_points = Vec::with_capacity(occupied.len());
        let mut sem_points = Vec::new();
        for (slot, idx) in occupied.iter().enumerate() {
            let voxel = &grid.voxels[idx];
            let n = voxel.num_points() as f64;
            let mut mean = [0.0f64; 3];
            for d in &voxel.offsets {
                for axis in 0..3 {
                    mean[axis] += d[axis];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = [0.0f64; 3];
            for d in &voxel.offsets {
                for axis in 0..3 {
                    let c = d[axis] - mean[axis];
                    var[axis] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            stats.push((1.0 + n).ln());
            for axis in 0..3 {
                stats.push(mean[axis] / cfg.voxel_size[axis]);
            }
            for axis in 0..3 {
                stats.push(var[axis] / (cfg.voxel_size[axis] * cfg.voxel_size[axis]));
            }
            truth_points.push(voxel.absolute_points());
            for ((&pid, offset), &label) in voxel
                .point_ids
                .iter()
                .zip(&voxel.offsets)
                .zip(&voxel.point_labels)
            {
                sem_points.push((slot, *offset, label, pid));
            }
        }

        // Candidate domain: occupied plus in-range 6-neighbors.
        let cells: [i32; 3] = std::array::from_fn(|axis| {
            ((cfg.range_max[axis] - cfg.range_min[axis]) / cfg.voxel_size[axis]).ceil() as i32
        });
        let mut candidate_set: std::collections::BTreeSet<VoxelIndex> =
            occupied.iter().copied().collect();
        for idx in &occupied {
            for (axis, step) in [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)] {
                let mut n = idx.0;
                n[axis] += step;
                if n[axis] >= 0 && n[axis] < cells[axis] {
                    candidate_set.insert(VoxelIndex(n));
                }
            }
        }
        let candidates: Vec<VoxelIndex> = candidate_set.into_iter().collect();
        let cand_occupied: Vec<Option<usize>> = candidates
            .iter()
            .map(|idx| occupied_slot.get(idx).copied())
            .collect();
        let mut occ_to_cand = vec![0usize; occupied.len()];
        for (cslot, oslot) in cand_occupied.iter().enumerate() {
            if let Some(o) = oslot {
                occ_to_cand[*o] = cslot;
            }
        }
        let centers: Vec<[f64; 3]> = candidates.iter().map(|&i| cfg.center_of(i)).collect();
        let positions: Vec<[f64; 3]> = centers
            .iter()
            .map(|c| {
                std::array::from_fn(|axis| {
                    let span = cfg.range_max[axis] - cfg.range_min[axis];
                    2.0 * (c[axis] - cfg.range_min[axis]) / span - 1.0
                })
            })
            .collect();

        // Occupied voxels within the context radius of each candidate.
        let radius = model_cfg.context_radius;
        let window: [i32; 3] =
            std::array::from_fn(|axis| (radius / cfg.voxel_size[axis]).ceil() as i32);
        let neighbors: Vec<Vec<usize>> = candidates
            .iter()
            .zip(&centers)
            .map(|(idx, center)| {
                let mut near = Vec::new();
                for dx in -window[0]..=window[0] {
                    for dy in -window[1]..=window[1] {
                        for dz in -window[2]..=window[2] {
                            let n = VoxelIndex([idx.0[0] + dx, idx.0[1] + dy, idx.0[2] + dz]);
                            if n == *idx {
                                continue;
                            }
                            if let Some(&slot) = occupied_slot.get(&n) {
                                let oc = cfg.center_of(n);
                                let d2: f64 = (0..3)
                                    .map(|a| (oc[a] - center[a]) * (oc[a] - center[a]))
                                    .sum();
                                if d2 <= radius * radius {
                                    near.push(slot);
                                }
                            }
                        }
                    }
                }
                near
            })
            .collect();

        let occupancy_truth: BTreeMap<VoxelIndex, bool> = candidates
            .iter()
            .map(|&idx| (idx, grid.voxels.contains_key(&idx)))
            .collect();

        let mut image_rng = rng_for(
            model_cfg.seed,
            &[IMAGE_CONTENT_STREAM, scene_index as u64],
        );
        let image: Vec<f64> = (0..model_cfg.image_patches * model_cfg.image_patch_dim)
            .map(|_| uniform_unit(&mut image_rng))
            .collect();

        let frame_id = grid.frame_id.clone();
        ScenePrep {
            grid,
            frame_id,
            occupied,
            stats,
            truth_points,
            candidates,
            cand_occupied,
            occ_to_cand,
            centers,
            positions,
            neighbors,
            occupancy_truth,
            sem_points,
            image,
        }
    }

    pub fn num_occupied(&self) -> usize {
        self.occupied.len()
    }
}

/// The trainable pieces of the toy autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ToyModelConfig,
    /// Voxel statistics -> feature.
    pub encoder: Mlp,
    /// Learned stand-in feature for masked (and empty-candidate) tokens.
    pub mask_token: Vec<f64>,
    /// `[token; position; context]` -> decoder feature.
    pub decoder: Mlp,
    /// Decoder feature -> `3 * points_per_voxel_out` offsets.
    pub point_head: Mlp,
    /// Decoder feature -> occupancy logit.
    pub occ_head: Mlp,
    /// Learned patch dictionary of the stand-in image branch.
    pub image_dict: Vec<f64>,
    pub semantic_head: Option<SemanticHead>,
}

/// Gradients for every trainable block, aligned with [`ToyModel`].
pub struct ModelGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub point_head: MlpGrads,
    pub occ_head: MlpGrads,
    pub mask_token: Vec<f64>,
    pub image_dict: Vec<f64>,
    pub semantic: Option<MlpGrads>,
}

impl ModelGrads {
    fn zeros_like(model: &ToyModel) -> ModelGrads {
        ModelGrads {
            encoder: MlpGrads::zeros_like(&model.encoder),
            decoder: MlpGrads::zeros_like(&model.decoder),
            point_head: MlpGrads::zeros_like(&model.point_head),
            occ_head: MlpGrads::zeros_like(&model.occ_head),
            mask_token: vec![0.0; model.mask_token.len()],
            image_dict: vec![0.0; model.image_dict.len()],
            semantic: model
                .semantic_head
                .as_ref()
                .map(|h| MlpGrads::zeros_like(&h.mlp)),
        }
    }

    /// The gradient block matching [`ToyModel::block`] index `block`.
    pub fn block(&self, model: &ToyModel, block: usize) -> &[f64] {
        let (component, inner) = model.locate(block);
        match component {
            0 => &self.encoder.blocks[inner],
            1 => &self.decoder.blocks[inner],
            2 => &self.point_head.blocks[inner],
            3 => &self.occ_head.blocks[inner],
            4 => &self.mask_token,
            5 => &self.image_dict,
            _ => &self.semantic.as_ref().unwrap().blocks[inner],
        }
    }

    fn add_scaled(&mut self, other: &ModelGrads, scale: f64) {
        self.encoder.add_scaled(&other.encoder, scale);
        self.decoder.add_scaled(&other.decoder, scale);
        self.point_head.add_scaled(&other.point_head, scale);
        self.occ_head.add_scaled(&other.occ_head, scale);
        for (m, t) in self.mask_token.iter_mut().zip(&other.mask_token) {
            *m += scale * t;
        }
        for (m, t) in self.image_dict.iter_mut().zip(&other.image_dict) {
            *m += scale * t;
        }
        if let (Some(mine), Some(theirs)) = (&mut self.semantic, &other.semantic) {
            mine.add_scaled(theirs, scale);
        }
    }
}

/// Cached forward pass over one scene under one mask assignment.
pub struct SceneForward {
    /// Occupied slots that are visible, in slot order.
    visible_slots: Vec<usize>,
    /// Occupied slot -> row in the encoder batch.
    vis_row: BTreeMap<usize, usize>,
    enc_fwd: MlpForward,
    /// Visible-neighbor count per candidate (for spreading context grads).
    ctx_counts: Vec<usize>,
    dec_fwd: MlpForward,
    point_fwd: MlpForward,
    occ_fwd: MlpForward,
    sem_fwd: Option<MlpForward>,
    sem_labels: Vec<u8>,
}

/// Everything an evaluation needs from one reconstruction pass.
pub struct SceneReconstruction {
    pub recon: Reconstruction,
    /// Decoder feature per candidate voxel (masked, visible, and empty
    /// candidates alike).
    pub decoder_features: BTreeMap<VoxelIndex, Vec<f64>>,
    pub occupancy_logits: BTreeMap<VoxelIndex, f64>,
}

/// Directional Chamfer pair with gradients w.r.t. the predicted points,
/// from a single nearest-neighbor assignment per direction (held fixed, so
/// the gradient is the standard subgradient; zero at coincident points).
fn chamfer_pair_with_grads(
    truth: &[[f64; 3]],
    preds: &[[f64; 3]],
    variant: ChamferVariant,
) -> (f64, f64, Vec<[f64; 3]>) {
    let mut grads = vec![[0.0f64; 3]; preds.len()];
    let pred_tree = KdTree::build(preds);
    let truth_tree = KdTree::build(truth);
    let inv_t = 1.0 / truth.len() as f64;
    let inv_p = 1.0 / preds.len() as f64;

    let mut gt_to_pred = 0.0;
    for t in truth {
        let (j, d2) = pred_tree.nearest(t).expect("non-empty preds");
        let p = preds[j];
        match variant {
            ChamferVariant::Euclidean => {
                let d = d2.sqrt();
                gt_to_pred += d * inv_t;
                if d > 0.0 {
                    for axis in 0..3 {
                        grads[j][axis] += (p[axis] - t[axis]) / d * inv_t;
                    }
                }
            }
            ChamferVariant::Squared => {
                gt_to_pred += d2 * inv_t;
                for axis in 0..3 {
                    grads[j][axis] += 2.0 * (p[axis] - t[axis]) * inv_t;
                }
            }
        }
    }

    let mut pred_to_gt = 0.0;
    for (j, p) in preds.iter().enumerate() {
        let (i, d2) = truth_tree.nearest(p).expect("non-empty truth");
        let t = truth[i];
        match variant {
            ChamferVariant::Euclidean => {
                let d = d2.sqrt();
                pred_to_gt += d * inv_p;
                if d > 0.0 {
                    for axis in 0..3 {
                        grads[j][axis] += (p[axis] - t[axis]) / d * inv_p;
                    }
                }
            }
            ChamferVariant::Squared => {
                pred_to_gt += d2 * inv_p;
                for axis in 0..3 {
                    grads[j][axis] += 2.0 * (p[axis] - t[axis]) * inv_p;
                }
            }
        }
    }
    (gt_to_pred, pred_to_gt, grads)
}

/// Scalar loss terms of one scene pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct SceneLossTerms {
    pub l_img: f64,
    pub l_c: f64,
    pub l_occ: f64,
    pub l_sem: f64,
}

impl ToyModel {
    /// Seeded initialization; every component draws from its own stream so
    /// adding or removing one (e.g. the semantic branch) never perturbs the
    /// others.
    pub fn init(config: &ToyModelConfig) -> ToyModel {
        let f = config.feature_dim;
        let sub = |component: u64| derive_seed(config.seed, &[INIT_STREAM, component]);
        let mut enc_dims = vec![STAT_DIM];
        enc_dims.extend_from_slice(&config.encoder_hidden);
        enc_dims.push(f);
        let mut dec_dims = vec![2 * f + 3];
        dec_dims.extend_from_slice(&config.encoder_hidden);
        dec_dims.push(f);
        let mut token_rng = rng_for(sub(INIT_MASK_TOKEN), &[]);
        let bound = 1.0 / (f as f64).sqrt();
        let mask_token = (0..f)
            .map(|_| crate::rng::uniform_range(&mut token_rng, -bound, bound))
            .collect();
        ToyModel {
            encoder: Mlp::new(&enc_dims, Activation::Tanh, sub(INIT_ENCODER)),
            decoder: Mlp::new(&dec_dims, Activation::Tanh, sub(INIT_DECODER)),
            point_head: Mlp::new(
                &[f, 3 * config.points_per_voxel_out],
                Activation::Tanh,
                sub(INIT_POINT_HEAD),
            ),
            occ_head: Mlp::new(&[f, 1], Activation::Tanh, sub(INIT_OCC_HEAD)),
            mask_token,
            image_dict: vec![0.0; config.image_patches * config.image_patch_dim],
            semantic_head: config.semantic_branch.then(|| {
                SemanticHead::new(
                    f,
                    &config.semantic_hidden,
                    config.num_classes,
                    sub(INIT_SEMANTIC),
                )
            }),
            config: config.clone(),
        }
    }

    fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    /// Full forward pass over one scene under a mask assignment.
    fn forward_scene(&self, prep: &ScenePrep, assignment: &MaskAssignment) -> SceneForward {
        let f = self.feature_dim();
        let visible_slots: Vec<usize> = prep
            .occupied
            .iter()
            .enumerate()
            .filter(|(_, idx)| !assignment.masked.contains(idx))
            .map(|(slot, _)| slot)
            .collect();
        let vis_row: BTreeMap<usize, usize> = visible_slots
            .iter()
            .enumerate()
            .map(|(row, &slot)| (slot, row))
            .collect();

        let mut enc_in = Vec::with_capacity(visible_slots.len() * STAT_DIM);
        for &slot in &visible_slots {
            enc_in.extend_from_slice(&prep.stats[slot * STAT_DIM..(slot + 1) * STAT_DIM]);
        }
        let enc_fwd = self.encoder.forward(&enc_in, visible_slots.len());
        let enc_out = enc_fwd.output();

        let n_cand = prep.candidates.len();
        let mut ctx = vec![0.0; n_cand * f];
        let mut ctx_counts = vec![0usize; n_cand];
        for (c, near) in prep.neighbors.iter().enumerate() {
            let mut count = 0usize;
            let dst = &mut ctx[c * f..(c + 1) * f];
            for slot in near {
                if let Some(&row) = vis_row.get(slot) {
                    let src = &enc_out[row * f..(row + 1) * f];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                    count += 1;
                }
            }
            if count > 0 {
                let inv = 1.0 / count as f64;
                dst.iter_mut().for_each(|d| *d *= inv);
            }
            ctx_counts[c] = count;
        }

        let dec_width = 2 * f + 3;
        let mut dec_in = vec![0.0; n_cand * dec_width];
        for c in 0..n_cand {
            let row = &mut dec_in[c * dec_width..(c + 1) * dec_width];
            let token: &[f64] = match prep.cand_occupied[c] {
                Some(slot) => match vis_row.get(&slot) {
                    Some(&r) => &enc_out[r * f..(r + 1) * f],
                    None => &self.mask_token,
                },
                None => &self.mask_token,
            };
            row[..f].copy_from_slice(token);
            row[f..f + 3].copy_from_slice(&prep.positions[c]);
            row[f + 3..].copy_from_slice(&ctx[c * f..(c + 1) * f]);
        }
        let dec_fwd = self.decoder.forward(&dec_in, n_cand);
        let f_dec = dec_fwd.output();

        let point_fwd = self.point_head.forward(f_dec, n_cand);
        let occ_fwd = self.occ_head.forward(f_dec, n_cand);

        let (sem_fwd, sem_labels) = match (&self.semantic_head, prep.grid.labeled) {
            (Some(head), true) if !prep.sem_points.is_empty() => {
                let dim = f + 3;
                let mut sem_in = Vec::with_capacity(prep.sem_points.len() * dim);
                let mut labels = Vec::with_capacity(prep.sem_points.len());
                for &(slot, offset, label, _) in &prep.sem_points {
                    let c = prep.occ_to_cand[slot];
                    sem_in.extend_from_slice(&f_dec[c * f..(c + 1) * f]);
                    sem_in.extend_from_slice(&offset);
                    labels.push(label);
                }
                let fwd = head
                    .forward(&sem_in, labels.len())
                    .expect("dimensions fixed by construction");
                (Some(fwd), labels)
            }
            _ => (None, Vec::new()),
        };

        SceneForward {
            visible_slots,
            vis_row,
            enc_fwd,
            ctx_counts,
            dec_fwd,
            point_fwd,
            occ_fwd,
            sem_fwd,
            sem_labels,
        }
    }

    /// Predicted absolute points of one candidate voxel.
    fn predicted_points(&self, prep: &ScenePrep, fwd: &SceneForward, cand: usize) -> Vec<[f64; 3]> {
        let p = self.config.points_per_voxel_out;
        let out = &fwd.point_fwd.output()[cand * 3 * p..(cand + 1) * 3 * p];
        let center = prep.centers[cand];
        (0..p)
            .map(|j| {
                [
                    center[0] + out[3 * j],
                    center[1] + out[3 * j + 1],
                    center[2] + out[3 * j + 2],
                ]
            })
            .collect()
    }

    /// Losses (and, when `with_grads`, gradients) of one scene pass.
    fn step_scene(
        &self,
        prep: &ScenePrep,
        assignment: &MaskAssignment,
        image_mask: &[bool],
        lambda_sem: f64,
        with_grads: bool,
    ) -> Result<(SceneLossTerms, Option<ModelGrads>), ToyError> {
        let f = self.feature_dim();
        let n_cand = prep.candidates.len();
        let fwd = self.forward_scene(prep, assignment);

        // Image term: learned dictionary vs the scene's patches.
        let l_img = image_mse(
            &self.image_dict,
            &prep.image,
            self.config.image_patches,
            image_mask,
            true,
        )?;

        // Chamfer term over masked voxels, plus gradients w.r.t. offsets.
        let p_out = self.config.points_per_voxel_out;
        let mut grad_offsets = vec![0.0; n_cand * 3 * p_out];
        let mut l_c = 0.0;
        let mut evaluated = 0usize;
        let mut voxel_grads: Vec<(usize, Vec<[f64; 3]>)> = Vec::new();
        for (c, occ_slot) in prep.cand_occupied.iter().enumerate() {
            let Some(slot) = occ_slot else { continue };
            if !assignment.masked.contains(&prep.candidates[c]) {
                continue;
            }
            let truth = &prep.truth_points[*slot];
            let preds = self.predicted_points(prep, &fwd, c);
            let (gt_pred, pred_gt, grads) =
                chamfer_pair_with_grads(truth, &preds, self.config.chamfer_variant);
            l_c += gt_pred + pred_gt;
            evaluated += 1;
            voxel_grads.push((c, grads));
        }
        if evaluated > 0 {
            let inv = 1.0 / evaluated as f64;
            l_c *= inv;
            for (c, grads) in voxel_grads {
                let dst = &mut grad_offsets[c * 3 * p_out..(c + 1) * 3 * p_out];
                for (j, g) in grads.iter().enumerate() {
                    for axis in 0..3 {
                        dst[3 * j + axis] = g[axis] * inv;
                    }
                }
            }
        }

        // Occupancy term over the candidate domain.
        let occ_logits: BTreeMap<VoxelIndex, f64> = prep
            .candidates
            .iter()
            .enumerate()
            .map(|(c, &idx)| (idx, fwd.occ_fwd.output()[c]))
            .collect();
        let (l_occ, occ_grads) = occupancy_loss_with_grad(&occ_logits, &prep.occupancy_truth)?;

        // Semantic term over all labeled points of occupied voxels.
        let (l_sem, sem_grad_logits) = match &fwd.sem_fwd {
            Some(sem_fwd) => {
                let head = self.semantic_head.as_ref().expect("branch enabled");
                let (loss, grads) =
                    semantic_loss(sem_fwd.output(), head.num_classes, &fwd.sem_labels)?;
                (loss, grads)
            }
            None => (0.0, Vec::new()),
        };

        let terms = SceneLossTerms {
            l_img,
            l_c,
            l_occ,
            l_sem,
        };
        if !with_grads {
            return Ok((terms, None));
        }

        let mut grads = ModelGrads::zeros_like(self);

        // Image dictionary: d mse / d dict = 2 (dict - truth) / count.
        let patch_dim = self.config.image_patch_dim;
        let masked_patches = image_mask.iter().filter(|&&m| m).count();
        if masked_patches > 0 {
            let count = (masked_patches * patch_dim) as f64;
            for (p, &masked) in image_mask.iter().enumerate() {
                if !masked {
                    continue;
                }
                for i in p * patch_dim..(p + 1) * patch_dim {
                    grads.image_dict[i] = 2.0 * (self.image_dict[i] - prep.image[i]) / count;
                }
            }
        }

        // Heads feed grad_f_dec.
        let mut grad_f_dec = vec![0.0; n_cand * f];
        let point_back = self.point_head.backward(&fwd.point_fwd, &grad_offsets);
        for (dst, src) in grad_f_dec.iter_mut().zip(&point_back.grad_input) {
            *dst += *src;
        }
        grads.point_head = point_back;

        let mut grad_occ = vec![0.0; n_cand];
        for (c, idx) in prep.candidates.iter().enumerate() {
            grad_occ[c] = occ_grads.get(idx).copied().unwrap_or(0.0);
        }
        let occ_back = self.occ_head.backward(&fwd.occ_fwd, &grad_occ);
        for (dst, src) in grad_f_dec.iter_mut().zip(&occ_back.grad_input) {
            *dst += *src;
        }
        grads.occ_head = occ_back;

        // The semantic path contributes only when it can move the total.
        if lambda_sem != 0.0 {
            if let Some(sem_fwd) = &fwd.sem_fwd {
                let head = self.semantic_head.as_ref().expect("branch enabled");
                let sem_back = head.mlp.backward(sem_fwd, &sem_grad_logits);
                for (point_row, &(slot, _, _, _)) in prep.sem_points.iter().enumerate() {
                    let c = prep.occ_to_cand[slot];
                    let src = &sem_back.grad_input[point_row * (f + 3)..point_row * (f + 3) + f];
                    let dst = &mut grad_f_dec[c * f..(c + 1) * f];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += lambda_sem * s;
                    }
                }
                let mut scaled = sem_back;
                for block in &mut scaled.blocks {
                    block.iter_mut().for_each(|g| *g *= lambda_sem);
                }
                grads.semantic = Some(scaled);
            }
        }

        // Decoder, then split its input gradient into token/ctx shares.
        let dec_back = self.decoder.backward(&fwd.dec_fwd, &grad_f_dec);
        let dec_width = 2 * f + 3;
        let mut grad_enc_out = vec![0.0; fwd.visible_slots.len() * f];
        for c in 0..n_cand {
            let row = &dec_back.grad_input[c * dec_width..(c + 1) * dec_width];
            let grad_token = &row[..f];
            let grad_ctx = &row[f + 3..];
            match prep.cand_occupied[c].and_then(|slot| fwd.vis_row.get(&slot)) {
                Some(&enc_row) => {
                    let dst = &mut grad_enc_out[enc_row * f..(enc_row + 1) * f];
                    for (d, s) in dst.iter_mut().zip(grad_token) {
                        *d += s;
                    }
                }
                None => {
                    for (d, s) in grads.mask_token.iter_mut().zip(grad_token) {
                        *d += s;
                    }
                }
            }
            if fwd.ctx_counts[c] > 0 {
                let inv = 1.0 / fwd.ctx_counts[c] as f64;
                for slot in &prep.neighbors[c] {
                    if let Some(&enc_row) = fwd.vis_row.get(slot) {
                        let dst = &mut grad_enc_out[enc_row * f..(enc_row + 1) * f];
                        for (d, s) in dst.iter_mut().zip(grad_ctx) {
                            *d += inv * s;
                        }
                    }
                }
            }
        }
        grads.decoder = dec_back;
        grads.encoder = self.encoder.backward(&fwd.enc_fwd, &grad_enc_out);

        Ok((terms, Some(grads)))
    }

    /// Total count of parameter blocks over all components, in a fixed
    /// order: encoder, decoder, point head, occupancy head, mask token,
    /// image dictionary, then the semantic head when present.
    pub fn num_blocks(&self) -> usize {
        self.encoder.num_blocks()
            + self.decoder.num_blocks()
            + self.point_head.num_blocks()
            + self.occ_head.num_blocks()
            + 2
            + self
                .semantic_head
                .as_ref()
                .map_or(0, |h| h.mlp.num_blocks())
    }

    fn locate(&self, block: usize) -> (usize, usize) {
        let spans = [
            self.encoder.num_blocks(),
            self.decoder.num_blocks(),
            self.point_head.num_blocks(),
            self.occ_head.num_blocks(),
            1,
            1,
            self.semantic_head.as_ref().map_or(0, |h| h.mlp.num_blocks()),
        ];
        let mut rest = block;
        for (component, &span) in spans.iter().enumerate() {
            if rest < span {
                return (component, rest);
            }
            rest -= span;
        }
        panic!("block {block} out of range");
    }

    pub fn block_name(&self, block: usize) -> String {
        let (component, inner) = self.locate(block);
        match component {
            0 => format!("encoder.{}", self.encoder.block_name(inner)),
            1 => format!("decoder.{}", self.decoder.block_name(inner)),
            2 => format!("point_head.{}", self.point_head.block_name(inner)),
            3 => format!("occ_head.{}", self.occ_head.block_name(inner)),
            4 => "mask_token".to_string(),
            5 => "image_dict".to_string(),
            _ => format!(
                "semantic.{}",
                self.semantic_head.as_ref().unwrap().mlp.block_name(inner)
            ),
        }
    }

    pub fn block(&self, block: usize) -> &[f64] {
        let (component, inner) = self.locate(block);
        match component {
            0 => self.encoder.block(inner),
            1 => self.decoder.block(inner),
            2 => self.point_head.block(inner),
            3 => self.occ_head.block(inner),
            4 => &self.mask_token,
            5 => &self.image_dict,
            _ => self.semantic_head.as_ref().unwrap().mlp.block(inner),
        }
    }

    pub fn block_mut(&mut self, block: usize) -> &mut [f64] {
        let (component, inner) = self.locate(block);
        match component {
            0 => self.encoder.block_mut(inner),
            1 => self.decoder.block_mut(inner),
            2 => self.point_head.block_mut(inner),
            3 => self.occ_head.block_mut(inner),
            4 => &mut self.mask_token,
            5 => &mut self.image_dict,
            _ => self.semantic_head.as_mut().unwrap().mlp.block_mut(inner),
        }
    }

    fn apply(&mut self, grads: &ModelGrads, lr: f64) {
        self.encoder.sgd_step(&grads.encoder, lr);
        self.decoder.sgd_step(&grads.decoder, lr);
        self.point_head.sgd_step(&grads.point_head, lr);
        self.occ_head.sgd_step(&grads.occ_head, lr);
        for (p, g) in self.mask_token.iter_mut().zip(&grads.mask_token) {
            *p -= lr * g;
        }
        for (p, g) in self.image_dict.iter_mut().zip(&grads.image_dict) {
            *p -= lr * g;
        }
        if let (Some(head), Some(g)) = (&mut self.semantic_head, &grads.semantic) {
            head.mlp.sgd_step(g, lr);
        }
    }

    /// Reconstruction pass for evaluation: predicted point sets for every
    /// occupied voxel, occupancy bits over the whole candidate domain, and
    /// the decoder feature of every candidate.
    pub fn reconstruct(&self, prep: &ScenePrep, assignment: &MaskAssignment) -> SceneReconstruction {
        let f = self.feature_dim();
        let fwd = self.forward_scene(prep, assignment);
        let mut points = BTreeMap::new();
        let mut occupancy = BTreeMap::new();
        let mut occupancy_logits = BTreeMap::new();
        let mut decoder_features = BTreeMap::new();
        for (c, &idx) in prep.candidates.iter().enumerate() {
            if prep.cand_occupied[c].is_some() {
                points.insert(idx, self.predicted_points(prep, &fwd, c));
            }
            let logit = fwd.occ_fwd.output()[c];
            occupancy.insert(idx, logit > 0.0);
            occupancy_logits.insert(idx, logit);
            decoder_features.insert(idx, fwd.dec_fwd.output()[c * f..(c + 1) * f].to_vec());
        }
        SceneReconstruction {
            recon: Reconstruction { points, occupancy },
            decoder_features,
            occupancy_logits,
        }
    }
}

/// Per-step image patch mask: `round(ratio * patches)` patches drawn
/// without replacement from the image-mask stream.
fn image_mask_for(policy_seed: u64, scene: usize, step: usize, cfg: &ToyModelConfig) -> Vec<bool> {
    let mut mask = vec![false; cfg.image_patches];
    let count = mask_budget(cfg.image_mask_ratio, cfg.image_patches);
    let mut rng = rng_for(
        policy_seed,
        &[IMAGE_MASK_STREAM, scene as u64, step as u64],
    );
    for i in sample_without_replacement(&mut rng, cfg.image_patches, count) {
        mask[i] = true;
    }
    mask
}

/// Per-(scene, step) masking seed, split from the policy seed.
pub(crate) fn step_mask_seed(policy_seed: u64, scene: usize, step: usize) -> u64 {
    derive_seed(policy_seed, &[MASK_STREAM, scene as u64, step as u64])
}

/// Trains the toy model with full-batch gradient descent.
///
/// Voxel masks (and image patch masks) are resampled every step from
/// streams split off the policy seed, so the whole trajectory is a pure
/// function of `(config.seed, policy.seed, scenes)`. The returned log has
/// `steps + 1` entries: the loss before each update plus a final
/// evaluation (so `steps = 0` returns the initial losses and an untouched
/// model).
pub fn train_toy(
    config: &ToyModelConfig,
    scenes: &[PointCloud],
    voxel_cfg: &VoxelGridConfig,
    levels: Option<&BTreeMap<ClassId, ImportanceLevel>>,
    policy: &MaskPolicy,
    lambda_sem: f64,
) -> Result<(ToyModel, Vec<LossBreakdown>), ToyError> {
    if scenes.is_empty() {
        return Err(ToyError::EmptyCorpus);
    }
    let preps: Vec<ScenePrep> = scenes
        .iter()
        .enumerate()
        .map(|(i, cloud)| ScenePrep::build(cloud, voxel_cfg, levels, config, i))
        .collect::<Result<_, _>>()?;
    train_toy_prepped(config, &preps, policy, lambda_sem)
}

/// [`train_toy`] over already-prepared scenes.
pub fn train_toy_prepped(
    config: &ToyModelConfig,
    preps: &[ScenePrep],
    policy: &MaskPolicy,
    lambda_sem: f64,
) -> Result<(ToyModel, Vec<LossBreakdown>), ToyError> {
    if preps.is_empty() {
        return Err(ToyError::EmptyCorpus);
    }
    let mut model = ToyModel::init(config);
    let inv_scenes = 1.0 / preps.len() as f64;
    let mut log = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let update = step < config.steps;
        let mut total = ModelGrads::zeros_like(&model);
        let mut sums = SceneLossTerms::default();
        for (si, prep) in preps.iter().enumerate() {
            let step_policy = policy.with_seed(step_mask_seed(policy.seed, si, step));
            let assignment = apply_policy(&prep.grid, &step_policy, BudgetMode::Truncate)?;
            let image_mask = image_mask_for(policy.seed, si, step, config);
            let (terms, grads) =
                model.step_scene(prep, &assignment, &image_mask, lambda_sem, update)?;
            sums.l_img += terms.l_img;
            sums.l_c += terms.l_c;
            sums.l_occ += terms.l_occ;
            sums.l_sem += terms.l_sem;
            if let Some(grads) = grads {
                total.add_scaled(&grads, inv_scenes);
            }
        }
        log.push(total_loss(
            sums.l_img * inv_scenes,
            sums.l_c * inv_scenes,
            sums.l_occ * inv_scenes,
            sums.l_sem * inv_scenes,
            lambda_sem,
        ));
        if update {
            model.apply(&total, model.config.learning_rate);
        }
    }
    Ok((model, log))
}
