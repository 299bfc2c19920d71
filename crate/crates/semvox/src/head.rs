//! Small fully-connected networks with hand-rolled backprop, and the
//! point-wise semantic head built from them.
//!
//! Everything is plain `f64` with deterministic, seeded initialization;
//! parameters are exposed as named blocks so finite-difference checks and
//! checkpointing can walk them in a fixed order.

use crate::rng::{rng_for, uniform_range};
use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("input dimension mismatch: head expects {expected}, batch rows have {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
}

/// Hidden-layer nonlinearity. Smooth on purpose: finite-difference
/// verification needs a differentiable loss surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

/// One dense layer; weights are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Multi-layer perceptron: dense layers with the activation after every
/// layer except the last (raw outputs, e.g. logits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Cached activations from a forward pass; `activations[0]` is the input
/// batch, the last entry is the output.
#[derive(Debug, Clone)]
pub struct MlpForward {
    pub activations: Vec<Vec<f64>>,
    pub batch: usize,
}

impl MlpForward {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("forward has layers")
    }
}

/// Parameter gradients aligned with [`Mlp::block`] indices, plus the
/// gradient with respect to the input batch.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub blocks: Vec<Vec<f64>>,
    pub grad_input: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            blocks: (0..mlp.num_blocks())
                .map(|b| vec![0.0; mlp.block(b).len()])
                .collect(),
            grad_input: Vec::new(),
        }
    }

    /// `self += scale * other`, blockwise.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (mine, theirs) in self.blocks.iter_mut().zip(&other.blocks) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += scale * t;
            }
        }
    }
}

impl Mlp {
    /// Seeded init: weights uniform in `±1/sqrt(fan_in)`, biases zero.
    /// Draw order is fixed (layers in order, weights row-major).
    pub fn new(dims: &[usize], activation: Activation, seed: u64) -> Mlp {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        let mut rng = rng_for(seed, &[0x1417]);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let bound = 1.0 / (in_dim as f64).sqrt();
                let weights = (0..in_dim * out_dim)
                    .map(|_| uniform_range(&mut rng, -bound, bound))
                    .collect();
                Dense {
                    in_dim,
                    out_dim,
                    weights,
                    biases: vec![0.0; out_dim],
                }
            })
            .collect();
        Mlp {
            dims: dims.to_vec(),
            layers,
            activation,
        }
    }

    /// All-zero parameters (outputs are identically zero).
    pub fn zeroed(dims: &[usize], activation: Activation) -> Mlp {
        let mut mlp = Self::new(dims, activation, 0);
        for layer in &mut mlp.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        mlp
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Forward over a flat row-major batch (`batch * input_dim` values).
    pub fn forward(&self, input: &[f64], batch: usize) -> MlpForward {
        assert_eq!(input.len(), batch * self.input_dim(), "bad batch shape");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (li, layer) in self.layers.iter().enumerate() {
            let x = activations.last().unwrap();
            let mut y = vec![0.0; batch * layer.out_dim];
            for b in 0..batch {
                let row = &x[b * layer.in_dim..(b + 1) * layer.in_dim];
                let out = &mut y[b * layer.out_dim..(b + 1) * layer.out_dim];
                for (o, out_slot) in out.iter_mut().enumerate() {
                    let w = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    let mut acc = layer.biases[o];
                    for (wi, xi) in w.iter().zip(row) {
                        acc += wi * xi;
                    }
                    *out_slot = acc;
                }
            }
            if li + 1 < self.layers.len() {
                match self.activation {
                    Activation::Tanh => y.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            activations.push(y);
        }
        MlpForward { activations, batch }
    }

    /// Backprop `grad_output` (gradient of the loss w.r.t. the raw output)
    /// through the cached forward pass.
    pub fn backward(&self, fwd: &MlpForward, grad_output: &[f64]) -> MlpGrads {
        let batch = fwd.batch;
        assert_eq!(grad_output.len(), batch * self.output_dim());
        let mut grads = MlpGrads::zeros_like(self);
        let mut grad_out = grad_output.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            // grad w.r.t. this layer's pre-activation output
            let mut grad_z = grad_out;
            if li + 1 < self.layers.len() {
                // activations[li + 1] stores the post-tanh values
                let a = &fwd.activations[li + 1];
                match self.activation {
                    Activation::Tanh => {
                        for (g, &av) in grad_z.iter_mut().zip(a) {
                            *g *= 1.0 - av * av;
                        }
                    }
                }
            }
            let x = &fwd.activations[li];
            let (gw, gb) = {
                let gw = &mut vec![0.0; layer.weights.len()];
                let gb = &mut vec![0.0; layer.biases.len()];
                for b in 0..batch {
                    let row = &x[b * layer.in_dim..(b + 1) * layer.in_dim];
                    let gz = &grad_z[b * layer.out_dim..(b + 1) * layer.out_dim];
                    for (o, &g) in gz.iter().enumerate() {
                        gb[o] += g;
                        let wrow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (slot, &xi) in wrow.iter_mut().zip(row) {
                            *slot += g * xi;
                        }
                    }
                }
                (std::mem::take(gw), std::mem::take(gb))
            };
            grads.blocks[2 * li] = gw;
            grads.blocks[2 * li + 1] = gb;
            // propagate to the previous layer's activations
            let mut grad_x = vec![0.0; batch * layer.in_dim];
            for b in 0..batch {
                let gz = &grad_z[b * layer.out_dim..(b + 1) * layer.out_dim];
                let gx = &mut grad_x[b * layer.in_dim..(b + 1) * layer.in_dim];
                for (o, &g) in gz.iter().enumerate() {
                    let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (slot, &w) in gx.iter_mut().zip(wrow) {
                        *slot += g * w;
                    }
                }
            }
            grad_out = grad_x;
        }
        grads.grad_input = grad_out;
        grads
    }

    /// Parameter blocks: `2l` is layer `l`'s weights, `2l + 1` its biases.
    pub fn num_blocks(&self) -> usize {
        self.layers.len() * 2
    }

    pub fn block_name(&self, block: usize) -> String {
        let layer = block / 2;
        if block.is_multiple_of(2) {
            format!("layer{layer}.weights")
        } else {
            format!("layer{layer}.biases")
        }
    }

    pub fn block(&self, block: usize) -> &[f64] {
        let layer = &self.layers[block / 2];
        if block.is_multiple_of(2) {
            &layer.weights
        } else {
            &layer.biases
        }
    }

    pub fn block_mut(&mut self, block: usize) -> &mut [f64] {
        let layer = &mut self.layers[block / 2];
        if block.is_multiple_of(2) {
            &mut layer.weights
        } else {
            &mut layer.biases
        }
    }

    /// Plain gradient-descent update: `p -= lr * g` over all blocks.
    pub fn sgd_step(&mut self, grads: &MlpGrads, lr: f64) {
        for b in 0..self.num_blocks() {
            let g = &grads.blocks[b];
            for (p, gi) in self.block_mut(b).iter_mut().zip(g) {
                *p -= lr * gi;
            }
        }
    }

    fn flat_params(&self) -> Vec<f64> {
        (0..self.num_blocks())
            .flat_map(|b| self.block(b).iter().copied())
            .collect()
    }

    fn load_flat_params(&mut self, flat: &[f64]) -> Result<(), HeadError> {
        if flat.len() != self.num_params() {
            return Err(HeadError::MalformedCheckpoint(format!(
                "parameter blob holds {} values, model needs {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for b in 0..self.num_blocks() {
            let dst = self.block_mut(b);
            dst.copy_from_slice(&flat[offset..offset + dst.len()]);
            offset += dst.len();
        }
        Ok(())
    }
}

/// Dimension of the per-point offset appended to the voxel feature.
pub const OFFSET_DIM: usize = 3;

#[derive(Debug, Serialize, Deserialize)]
struct HeadHeader {
    dims: Vec<usize>,
    activation: Activation,
    seed: u64,
    feature_dim: usize,
    num_classes: usize,
}

/// The point-wise semantic classifier: an MLP from the concatenated
/// `[voxel feature; point offset]` vector to per-class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticHead {
    pub mlp: Mlp,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl SemanticHead {
    /// Input dimension is `feature_dim + 3` by construction.
    pub fn new(feature_dim: usize, hidden: &[usize], num_classes: usize, seed: u64) -> SemanticHead {
        let mut dims = vec![feature_dim + OFFSET_DIM];
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        SemanticHead {
            mlp: Mlp::new(&dims, Activation::Tanh, seed),
            feature_dim,
            num_classes,
            seed,
        }
    }

    /// The default shape: 128-d features, two hidden layers of 64, 11
    /// classes (10 detection categories plus background).
    pub fn default_shape(seed: u64) -> SemanticHead {
        Self::new(128, &[64, 64], 11, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim + OFFSET_DIM
    }

    /// Raw logits for a flat row-major batch; softmax lives in the loss.
    pub fn forward(&self, inputs: &[f64], batch: usize) -> Result<MlpForward, HeadError> {
        if batch > 0 && inputs.len() != batch * self.input_dim() {
            return Err(HeadError::DimensionMismatch {
                expected: self.input_dim(),
                actual: inputs.len().checked_div(batch).unwrap_or(0),
            });
        }
        Ok(self.mlp.forward(inputs, batch))
    }

    /// Checkpoint: one JSON header line, then the parameters as a flat
    /// little-endian f64 blob (blocks in `Mlp::block` order).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HeadError> {
        let mut file = std::fs::File::create(path)?;
        let header = HeadHeader {
            dims: self.mlp.dims.clone(),
            activation: self.mlp.activation,
            seed: self.seed,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
        };
        serde_json::to_writer(&mut file, &header)
            .map_err(|e| HeadError::MalformedCheckpoint(e.to_string()))?;
        file.write_all(b"\n")?;
        let flat = self.mlp.flat_params();
        let mut blob = vec![0u8; flat.len() * 8];
        LittleEndian::write_f64_into(&flat, &mut blob);
        file.write_all(&blob)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SemanticHead, HeadError> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut header_line = String::new();
        reader.read_line(&mut header_line)?;
        let header: HeadHeader = serde_json::from_str(header_line.trim_end())
            .map_err(|e| HeadError::MalformedCheckpoint(e.to_string()))?;
        if header.dims.first() != Some(&(header.feature_dim + OFFSET_DIM)) {
            return Err(HeadError::MalformedCheckpoint(
                "input dim does not equal feature_dim + 3".to_string(),
            ));
        }
        let mut blob = Vec::new();
        reader.read_to_end(&mut blob)?;
        if blob.len() % 8 != 0 {
            return Err(HeadError::MalformedCheckpoint(
                "parameter blob is not a multiple of 8 bytes".to_string(),
            ));
        }
        let mut flat = vec![0.0f64; blob.len() / 8];
        LittleEndian::read_f64_into(&blob, &mut flat);
        let mut mlp = Mlp::zeroed(&header.dims, header.activation);
        mlp.load_flat_params(&flat)?;
        Ok(SemanticHead {
            mlp,
            feature_dim: header.feature_dim,
            num_classes: header.num_classes,
            seed: header.seed,
        })
    }
}
