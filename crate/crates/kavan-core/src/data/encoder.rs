//! Toy patch encoder standing in for a convolutional backbone.
//!
//! A raw frame is partitioned into the same 7×7 adaptive bins the heatmap
//! downsampler uses; each bin is flattened (zero-padded to the largest bin
//! size) and pushed through one shared affine map plus tanh. Cheap, fully
//! differentiable, and spatially aligned with the supervision grid — which
//! is all the desk-scale artifact needs from a backbone.

use crate::attention::FeatureBlock;
use crate::error::{Error, Result};
use crate::heatmap::{bin_edges, GRID_SIDE};
use crate::tensor::{Array, Tensor};

/// Shared affine patch projection.
///
/// `weight` is `[patch_slots(resolution), channels]`, `bias` is `[channels]`.
pub struct EncoderParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl EncoderParams {
    pub fn channels(&self) -> usize {
        self.bias.numel()
    }
}

/// Flattened size of the largest adaptive bin (100 for 64×64 inputs).
pub fn patch_slots(resolution: usize) -> usize {
    let edges = bin_edges(resolution, GRID_SIDE);
    let largest = edges.iter().map(|(a, b)| b - a).max().unwrap_or(0);
    largest * largest
}

/// Gather map from a flat `[resolution², ]` frame to `49 × patch_slots`
/// padded patches: cell `k`'s bin pixels row-major, `None` padding after.
pub fn patch_indices(resolution: usize) -> Vec<Option<usize>> {
    let edges = bin_edges(resolution, GRID_SIDE);
    let slots = patch_slots(resolution);
    let mut indices = Vec::with_capacity(GRID_SIDE * GRID_SIDE * slots);
    for &(r0, r1) in &edges {
        for &(c0, c1) in &edges {
            let mut filled = 0;
            for r in r0..r1 {
                for c in c0..c1 {
                    indices.push(Some(r * resolution + c));
                    filled += 1;
                }
            }
            indices.resize(indices.len() + slots - filled, None);
        }
    }
    indices
}

/// Encodes one raw grayscale frame into a `[7, 7, channels]` feature block.
pub fn encode(frame: &Array, params: &EncoderParams, frame_index: usize) -> Result<FeatureBlock> {
    if frame.rank() != 2 || frame.shape[0] != frame.shape[1] {
        return Err(Error::Contract(format!(
            "encoder expects a square grayscale frame, got shape {:?}",
            frame.shape
        )));
    }
    let resolution = frame.shape[0];
    if resolution < GRID_SIDE {
        return Err(Error::ShapeMismatch {
            op: "encode",
            lhs: frame.shape.clone(),
            rhs: vec![GRID_SIDE, GRID_SIDE],
        });
    }
    let slots = patch_slots(resolution);
    let channels = params.channels();
    if params.weight.shape() != [slots, channels] {
        return Err(Error::ShapeMismatch {
            op: "encode",
            lhs: params.weight.shape(),
            rhs: vec![slots, channels],
        });
    }
    let tape = params.weight.tape().clone();
    let cells = GRID_SIDE * GRID_SIDE;

    let pixels = tape.constant(frame.clone());
    let patches = pixels
        .gather(&patch_indices(resolution))?
        .reshape(&[cells, slots])?;
    let projected = patches.matmul(&params.weight)?; // [49, channels]
    let bias_grid = tape
        .ones(&[cells, 1])
        .matmul(&params.bias.reshape(&[1, channels])?)?;
    let features = projected.add(&bias_grid)?.tanh();
    FeatureBlock::new(
        features.reshape(&[GRID_SIDE, GRID_SIDE, channels])?,
        frame_index,
    )
}
