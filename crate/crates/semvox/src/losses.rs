//! The composite pretraining objective and its pieces.
//!
//! Reconstruction is scored by an image MSE term, a Chamfer point term and
//! a voxel-occupancy BCE term; the auxiliary point-wise semantic loss is a
//! softmax cross-entropy over `[voxel feature; point offset]` inputs,
//! scaled into the total by `lambda_sem`. All sums are fixed-order so the
//! composition identities hold exactly, and every analytic gradient here
//! can be verified against central finite differences via
//! [`gradient_check`].

use crate::head::{MlpGrads, SemanticHead};
use crate::masking::MaskAssignment;
use crate::voxel::{VoxelGrid, VoxelIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("label {label} at row {index} is outside the {num_classes}-class label space")]
    LabelOutOfRange {
        index: usize,
        label: u8,
        num_classes: usize,
    },
    #[error("logit batch of {len} values is not a multiple of {num_classes} classes")]
    ShapeMismatch { len: usize, num_classes: usize },
    #[error("batch holds {rows} logit rows but {labels} labels")]
    BatchMismatch { rows: usize, labels: usize },
    #[error("predicted and truth patch tensors differ in shape")]
    PatchShapeMismatch,
    #[error("occupancy domains differ: {0}")]
    DomainMismatch(String),
    #[error("voxel {0:?} is in the reconstruction domain but has no decoder feature")]
    MissingFeature(VoxelIndex),
    #[error("decoder features have inconsistent dimensions ({0} vs {1})")]
    FeatureDimMismatch(usize, usize),
    #[error(transparent)]
    Head(#[from] crate::head::HeadError),
}

/// Every term of one training step, with the composition identities
/// `l_base = l_img + l_c + l_occ` and `l_total = l_base + lambda_sem *
/// l_sem` materialized at construction (exact, same-order arithmetic).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_img: f64,
    pub l_c: f64,
    pub l_occ: f64,
    pub l_sem: f64,
    pub lambda_sem: f64,
    pub l_base: f64,
    pub l_total: f64,
}

/// Composes the total objective from its parts.
pub fn total_loss(l_img: f64, l_c: f64, l_occ: f64, l_sem: f64, lambda_sem: f64) -> LossBreakdown {
    let l_base = l_img + l_c + l_occ;
    let l_total = l_base + lambda_sem * l_sem;
    LossBreakdown {
        l_img,
        l_c,
        l_occ,
        l_sem,
        lambda_sem,
        l_base,
        l_total,
    }
}

/// Mean softmax cross-entropy over a flat row-major logit batch, plus the
/// gradient with respect to the logits (`(softmax - onehot) / batch`).
///
/// Computed through log-sum-exp with the row maximum subtracted, so large
/// logits do not overflow. An empty batch contributes zero loss and no
/// gradient rather than erroring, so sparsely labeled corpora stream
/// through.
pub fn semantic_loss(
    logits: &[f64],
    num_classes: usize,
    labels: &[u8],
) -> Result<(f64, Vec<f64>), LossError> {
    if labels.is_empty() && logits.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    if num_classes == 0 || !logits.len().is_multiple_of(num_classes) {
        return Err(LossError::ShapeMismatch {
            len: logits.len(),
            num_classes,
        });
    }
    let rows = logits.len() / num_classes;
    if rows != labels.len() {
        return Err(LossError::BatchMismatch {
            rows,
            labels: labels.len(),
        });
    }
    let mut grad = vec![0.0; logits.len()];
    let inv_batch = 1.0 / rows as f64;
    let mut loss = 0.0;
    for (index, (&label, row)) in labels.iter().zip(logits.chunks_exact(num_classes)).enumerate() {
        if label as usize >= num_classes {
            return Err(LossError::LabelOutOfRange {
                index,
                label,
                num_classes,
            });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += lse - row[label as usize];
        let grad_row = &mut grad[index * num_classes..(index + 1) * num_classes];
        for (k, slot) in grad_row.iter_mut().enumerate() {
            let softmax = (row[k] - max).exp() / sum_exp;
            *slot = (softmax - if k == label as usize { 1.0 } else { 0.0 }) * inv_batch;
        }
    }
    Ok((loss * inv_batch, grad))
}

/// Mean binary cross-entropy with logits over a voxel domain, and the
/// per-voxel logit gradients (`sigmoid(x) - y`, scaled by the mean).
/// Truth and prediction must cover exactly the same voxels.
pub fn occupancy_loss_with_grad(
    logits: &BTreeMap<VoxelIndex, f64>,
    truth: &BTreeMap<VoxelIndex, bool>,
) -> Result<(f64, BTreeMap<VoxelIndex, f64>), LossError> {
    if logits.len() != truth.len() {
        return Err(LossError::DomainMismatch(format!(
            "{} predicted vs {} truth voxels",
            logits.len(),
            truth.len()
        )));
    }
    if logits.is_empty() {
        return Ok((0.0, BTreeMap::new()));
    }
    let inv = 1.0 / logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = BTreeMap::new();
    for ((&idx, &x), (&tidx, &occupied)) in logits.iter().zip(truth.iter()) {
        if idx != tidx {
            return Err(LossError::DomainMismatch(format!(
                "prediction has {idx:?} where truth has {tidx:?}"
            )));
        }
        let y = if occupied { 1.0 } else { 0.0 };
        // max(x, 0) - x*y + ln(1 + exp(-|x|)): the standard stable form.
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        let sigmoid = 1.0 / (1.0 + (-x).exp());
        grads.insert(idx, (sigmoid - y) * inv);
    }
    Ok((loss * inv, grads))
}

/// Occupancy loss only; see [`occupancy_loss_with_grad`].
pub fn occupancy_loss(
    logits: &BTreeMap<VoxelIndex, f64>,
    truth: &BTreeMap<VoxelIndex, bool>,
) -> Result<f64, LossError> {
    occupancy_loss_with_grad(logits, truth).map(|(loss, _)| loss)
}

/// Mean squared error over patch pixels. With `masked_only`, only patches
/// flagged in `mask` enter the mean (the reconstruction target); zero
/// masked patches contribute zero loss.
pub fn image_mse(
    predicted: &[f64],
    truth: &[f64],
    num_patches: usize,
    mask: &[bool],
    masked_only: bool,
) -> Result<f64, LossError> {
    if predicted.len() != truth.len()
        || mask.len() != num_patches
        || (num_patches > 0 && !predicted.len().is_multiple_of(num_patches))
        || (num_patches == 0 && !predicted.is_empty())
    {
        return Err(LossError::PatchShapeMismatch);
    }
    if num_patches == 0 {
        return Ok(0.0);
    }
    let patch_dim = predicted.len() / num_patches;
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..num_patches {
        if masked_only && !mask[p] {
            continue;
        }
        for i in p * patch_dim..(p + 1) * patch_dim {
            let d = predicted[i] - truth[i];
            sum += d * d;
        }
        count += patch_dim;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(sum / count as f64)
}

/// One point of the semantic supervision set: the concatenated
/// `[voxel feature; offset from voxel center]` input and its label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemanticInput {
    pub z: Vec<f64>,
    pub label: u8,
    pub point_id: usize,
    pub voxel_index: VoxelIndex,
}

/// Gathers the semantic supervision set: one input per labeled point whose
/// voxel has a decoder feature. Points of one voxel share the feature but
/// differ in their offsets. The feature map must cover every voxel of the
/// reconstruction domain, masked and visible alike. Unlabeled grids yield
/// an empty set.
pub fn build_semantic_inputs(
    grid: &VoxelGrid,
    decoder_features: &BTreeMap<VoxelIndex, Vec<f64>>,
    assignment: &MaskAssignment,
) -> Result<Vec<SemanticInput>, LossError> {
    let mut feature_dim: Option<usize> = None;
    for idx in assignment.masked.iter().chain(assignment.visible.iter()) {
        let feature = decoder_features
            .get(idx)
            .ok_or(LossError::MissingFeature(*idx))?;
        match feature_dim {
            None => feature_dim = Some(feature.len()),
            Some(dim) if dim != feature.len() => {
                return Err(LossError::FeatureDimMismatch(dim, feature.len()))
            }
            _ => {}
        }
    }
    if !grid.labeled {
        return Ok(Vec::new());
    }
    let mut inputs = Vec::new();
    for voxel in grid.voxels.values() {
        let Some(feature) = decoder_features.get(&voxel.index) else {
            return Err(LossError::MissingFeature(voxel.index));
        };
        for ((&point_id, offset), &label) in voxel
            .point_ids
            .iter()
            .zip(&voxel.offsets)
            .zip(&voxel.point_labels)
        {
            let mut z = Vec::with_capacity(feature.len() + 3);
            z.extend_from_slice(feature);
            z.extend_from_slice(offset);
            inputs.push(SemanticInput {
                z,
                label,
                point_id,
                voxel_index: voxel.index,
            });
        }
    }
    Ok(inputs)
}

/// Flattens semantic inputs into the row-major batch the head consumes.
pub fn batch_semantic_inputs(inputs: &[SemanticInput]) -> (Vec<f64>, Vec<u8>) {
    let mut flat = Vec::with_capacity(inputs.iter().map(|i| i.z.len()).sum());
    let mut labels = Vec::with_capacity(inputs.len());
    for input in inputs {
        flat.extend_from_slice(&input.z);
        labels.push(input.label);
    }
    (flat, labels)
}

/// Finite-difference verdict for one parameter block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockCheck {
    pub name: String,
    pub params: usize,
    pub max_rel_error: f64,
}

/// Report of [`gradient_check`]: worst relative error per block and overall.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub max_rel_error: f64,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn semantic_loss_value(head: &SemanticHead, inputs: &[f64], labels: &[u8]) -> f64 {
    let fwd = head
        .forward(inputs, labels.len())
        .expect("gradient check batch already validated");
    semantic_loss(fwd.output(), head.num_classes, labels)
        .expect("gradient check batch already validated")
        .0
}

/// Analytic gradients of the semantic loss through the head's parameters.
pub fn semantic_head_gradients(
    head: &SemanticHead,
    inputs: &[f64],
    labels: &[u8],
) -> Result<(f64, MlpGrads), LossError> {
    let fwd = head.forward(inputs, labels.len())?;
    let (loss, grad_logits) = semantic_loss(fwd.output(), head.num_classes, labels)?;
    let grads = head.mlp.backward(&fwd, &grad_logits);
    Ok((loss, grads))
}

/// Compares the analytic semantic-loss gradients against central finite
/// differences (`(L(p + h) - L(p - h)) / 2h`) over every parameter.
///
/// The relative error divides by `max(|analytic| + |numeric|, floor)`
/// where the floor is `1e-3` of the block's largest analytic gradient, so
/// noise on near-zero entries cannot mask or fake a failure. Report-only:
/// the verdict is in `passed`.
pub fn gradient_check(
    head: &SemanticHead,
    inputs: &[f64],
    labels: &[u8],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, LossError> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let (_, analytic) = semantic_head_gradients(head, inputs, labels)?;
    let mut blocks = Vec::new();
    let mut overall: f64 = 0.0;
    for block in 0..head.mlp.num_blocks() {
        let block_grads = &analytic.blocks[block];
        let g_max = block_grads.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        let floor = (1e-3 * g_max).max(1e-12);
        let max_rel_error = (0..block_grads.len())
            .into_par_iter()
            .map_init(
                || head.clone(),
                |probe, i| {
                    let original = probe.mlp.block(block)[i];
                    probe.mlp.block_mut(block)[i] = original + step;
                    let plus = semantic_loss_value(probe, inputs, labels);
                    probe.mlp.block_mut(block)[i] = original - step;
                    let minus = semantic_loss_value(probe, inputs, labels);
                    probe.mlp.block_mut(block)[i] = original;
                    let numeric = (plus - minus) / (2.0 * step);
                    let analytic = block_grads[i];
                    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
                },
            )
            .reduce(|| 0.0, f64::max);
        overall = overall.max(max_rel_error);
        blocks.push(BlockCheck {
            name: head.mlp.block_name(block),
            params: block_grads.len(),
            max_rel_error,
        });
    }
    Ok(GradCheckReport {
        blocks,
        max_rel_error: overall,
        step,
        tolerance,
        passed: overall < tolerance,
    })
}
