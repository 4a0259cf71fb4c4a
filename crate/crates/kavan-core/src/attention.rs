//! Keypoint-attended facial soft attention.
//!
//! Spatial cells of a visual feature block are scored against the recurrent
//! state, normalized with a spatial softmax into an attention mask, and used
//! to pool the block into a single frame feature with a learnable residual
//! link. Masks are trained against keypoint supervision heatmaps, which
//! gives them the semantics of facial regions rather than free-form
//! self-attention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Array, Tape, Tensor};

/// How frame features are pooled.
///
/// `Uniform` is the no-attention ablation: every cell gets the constant
/// weight `1/cells` and the scorer never runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Learned,
    Uniform,
}

/// Learnable weights of the attention scorer.
///
/// `ctx` is the projection of the summed prior-tier segment representations
/// and exists only in the hierarchical variant; scoring with a tier context
/// but no `ctx` projection is a configuration error.
pub struct AttentionParams {
    /// Score projection, `[1, proj]`.
    pub v: Tensor,
    /// Hidden-state projection, `[proj, d]`.
    pub a_h: Tensor,
    /// Feature projection, `[proj, channels]`.
    pub a_c: Tensor,
    /// Segment-context projection, `[proj, d]`; hierarchical variant only.
    pub ctx: Option<Tensor>,
    /// Score bias, `[proj]`.
    pub bias: Tensor,
    /// Residual pooling weight, `[1]`.
    pub w_res: Tensor,
}

impl AttentionParams {
    pub fn projection_dim(&self) -> usize {
        self.bias.numel()
    }
}

/// One frame's visual features: a `[H, W, channels]` tensor of spatial cells.
#[derive(Clone)]
pub struct FeatureBlock {
    pub cells: Tensor,
    pub frame_index: usize,
}

impl FeatureBlock {
    pub fn new(cells: Tensor, frame_index: usize) -> Result<FeatureBlock> {
        if cells.shape().len() != 3 {
            return Err(Error::Contract(format!(
                "feature block requires shape [H, W, channels], got {:?}",
                cells.shape()
            )));
        }
        Ok(FeatureBlock { cells, frame_index })
    }

    pub fn n_cells(&self) -> usize {
        let s = self.cells.shape();
        s[0] * s[1]
    }

    pub fn channels(&self) -> usize {
        self.cells.shape()[2]
    }

    /// Cells flattened row-major to `[H·W, channels]`.
    pub fn as_matrix(&self) -> Tensor {
        let n = self.n_cells();
        let d = self.channels();
        self.cells
            .reshape(&[n, d])
            .expect("cell count times channels is invariant")
    }
}

/// Unnormalized attention scores, one per spatial cell.
///
/// Per cell `k` the score is `v · tanh(A_h h_prev + A_ctx Σ H_l + A_c C_k + b)`,
/// where the segment-context term is present only when `tier_context` is
/// given (hierarchical last-tier scoring; the plain variant omits it).
pub fn score(
    h_prev: &Tensor,
    block: &FeatureBlock,
    params: &AttentionParams,
    tier_context: Option<&Tensor>,
) -> Result<Tensor> {
    let proj = params.projection_dim();
    let n = block.n_cells();

    let cells_by_channel = block.as_matrix().transpose()?; // [channels, n]
    let projected_cells = params.a_c.matmul(&cells_by_channel)?; // [proj, n]

    let h_col = h_prev.reshape(&[h_prev.numel(), 1])?;
    let mut shared = params.a_h.matmul(&h_col)?; // [proj, 1]
    if let Some(ctx) = tier_context {
        let Some(a_ctx) = &params.ctx else {
            return Err(Error::Config(
                "tier context given but attention has no context projection".into(),
            ));
        };
        let ctx_col = ctx.reshape(&[ctx.numel(), 1])?;
        shared = shared.add(&a_ctx.matmul(&ctx_col)?)?;
    }
    shared = shared.add(&params.bias.reshape(&[proj, 1])?)?;

    // Broadcast the shared column across cells via a ones row.
    let ones = h_prev.tape().ones(&[1, n]);
    let shared_grid = shared.matmul(&ones)?; // [proj, n]
    let activated = projected_cells.add(&shared_grid)?.tanh();
    params.v.matmul(&activated)?.reshape(&[n])
}

/// Spatial softmax turning scores into a mask that sums to 1.
pub fn mask(scores: &Tensor) -> Result<Tensor> {
    scores.softmax()
}

/// Pools the block's cells with `mask + w_res` weights: `Σ_k (α_k + w_res) C_k`.
///
/// With a uniform mask and `w_res = 0` this is exactly the spatial mean.
pub fn pool(block: &FeatureBlock, mask: &Tensor, w_res: &Tensor) -> Result<Tensor> {
    let n = block.n_cells();
    if mask.numel() != n {
        return Err(Error::ShapeMismatch {
            op: "pool",
            lhs: mask.shape(),
            rhs: vec![n],
        });
    }
    let weights = mask.add(w_res)?.reshape(&[1, n])?;
    let pooled = weights.matmul(&block.as_matrix())?; // [1, channels]
    pooled.reshape(&[block.channels()])
}

/// The exactly uniform mask (`1/cells` everywhere) used by the no-attention
/// ablation and as the supervision for keypoint-free frames.
pub fn uniform_mask(tape: &Tape, cells: usize) -> Tensor {
    tape.constant(Array::filled(&[cells], 1.0 / cells as f64))
}
