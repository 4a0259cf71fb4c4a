//! LSTM cell and the hierarchical segment LSTM.
//!
//! The cell uses one fused affine map from the concatenated
//! `[hidden; input]` vector to all four gates, split in the fixed order
//! (input, forget, output, candidate).
//!
//! The hierarchical variant splits the `T` sampled frames into segments of
//! `node_size` frames. Every tier below the last runs one LSTM node per
//! segment over spatially mean-pooled frame features (concatenated with the
//! segment representations of earlier tiers) and emits one segment
//! representation. The last tier runs a single chain over all `T` frames,
//! consuming attention-pooled features — attention is conducted only there,
//! with the summed prior-tier representations of the enclosing segment as
//! extra scoring context — plus the same segment representations as input.
//! Its final hidden state is the GIF representation.

use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionParams, FeatureBlock, MaskMode};
use crate::error::{Error, Result};
use crate::heatmap::SupervisionHeatmap;
use crate::tensor::{concat, Tape, Tensor};

/// Fused-gate LSTM weights.
///
/// `weight` is `[(d + input_width), 4d]`, `bias` is `[4d]`; gate order is
/// (i, f, o, g).
pub struct LstmParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn hidden_size(&self) -> usize {
        self.bias.numel() / 4
    }

    pub fn input_size(&self) -> usize {
        self.weight.shape()[0] - self.hidden_size()
    }
}

/// Hidden and memory state, each `[d]`.
#[derive(Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    /// Zero initial state.
    pub fn zeros(tape: &Tape, hidden: usize) -> LstmState {
        LstmState {
            h: tape.zeros(&[hidden]),
            c: tape.zeros(&[hidden]),
        }
    }
}

/// One step of the cell: gates from the fused affine map, then
/// `c' = f ⊙ c + i ⊙ g` and `h' = o ⊙ tanh(c')`.
pub fn lstm_step(x: &Tensor, state: &LstmState, params: &LstmParams) -> Result<LstmState> {
    let d = params.hidden_size();
    let joined = concat(&[&state.h, x])?;
    let width = joined.numel();
    if params.weight.shape() != [width, 4 * d] {
        return Err(Error::ShapeMismatch {
            op: "lstm_step",
            lhs: params.weight.shape(),
            rhs: vec![width, 4 * d],
        });
    }
    let acts = joined
        .reshape(&[1, width])?
        .matmul(&params.weight)?
        .reshape(&[4 * d])?
        .add(&params.bias)?;
    let gate_i = acts.slice(0, d)?.sigmoid();
    let gate_f = acts.slice(d, d)?.sigmoid();
    let gate_o = acts.slice(2 * d, d)?.sigmoid();
    let gate_g = acts.slice(3 * d, d)?.tanh();
    let c = gate_f.mul(&state.c)?.add(&gate_i.mul(&gate_g)?)?;
    let h = gate_o.mul(&c.tanh())?;
    Ok(LstmState { h, c })
}

/// Shape of the hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HsLstmConfig {
    /// Number of tiers; 1 degenerates to a plain LSTM.
    pub tiers: usize,
    /// Frames per segment node.
    pub node_size: usize,
    /// Sampled frames per GIF (`T`).
    pub frames_per_gif: usize,
}

impl Default for HsLstmConfig {
    fn default() -> Self {
        HsLstmConfig {
            tiers: 2,
            node_size: 4,
            frames_per_gif: 8,
        }
    }
}

impl HsLstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiers == 0 || self.node_size == 0 || self.frames_per_gif == 0 {
            return Err(Error::Config(format!(
                "tiers, node_size and frames_per_gif must be positive, got {self:?}"
            )));
        }
        if !self.frames_per_gif.is_multiple_of(self.node_size) {
            return Err(Error::Config(format!(
                "frames_per_gif {} is not divisible by node_size {}",
                self.frames_per_gif, self.node_size
            )));
        }
        Ok(())
    }

    pub fn segments(&self) -> usize {
        self.frames_per_gif / self.node_size
    }
}

/// All weights the temporal module needs: one [`LstmParams`] per tier (tiers
/// see different input widths, so there is no tying) plus the attention
/// scorer used by the last tier.
pub struct HsLstmParams {
    pub tiers: Vec<LstmParams>,
    pub attention: AttentionParams,
}

/// A coarse representation of one segment, produced exactly once per
/// (tier, segment) pair per forward pass. `tier` is 1-based.
pub struct SegmentRepresentation {
    pub tier: usize,
    pub segment_index: usize,
    pub vector: Tensor,
}

/// Everything a forward pass produces.
pub struct HsOutput {
    /// Final hidden state of the last tier.
    pub gif_repr: Tensor,
    /// One attention mask per frame, for the keypoint supervision loss.
    pub masks: Vec<Tensor>,
    /// Non-last-tier segment representations, in (tier, segment) order.
    pub segment_reprs: Vec<SegmentRepresentation>,
}

fn check_lengths(
    blocks: &[FeatureBlock],
    supervision: &[SupervisionHeatmap],
    frames: usize,
) -> Result<()> {
    if blocks.len() != frames || supervision.len() != frames {
        return Err(Error::Config(format!(
            "expected {} feature blocks and supervision heatmaps, got {} and {}",
            frames,
            blocks.len(),
            supervision.len()
        )));
    }
    Ok(())
}

fn attended_frame(
    state_h: &Tensor,
    block: &FeatureBlock,
    params: &AttentionParams,
    tier_context: Option<&Tensor>,
    mode: MaskMode,
    tape: &Tape,
) -> Result<(Tensor, Tensor)> {
    let mask = match mode {
        MaskMode::Learned => {
            let scores = attention::score(state_h, block, params, tier_context)?;
            attention::mask(&scores)?
        }
        MaskMode::Uniform => attention::uniform_mask(tape, block.n_cells()),
    };
    let pooled = attention::pool(block, &mask, &params.w_res)?;
    Ok((mask, pooled))
}

/// Hierarchical forward pass over one GIF's sampled frames.
pub fn hs_forward(
    blocks: &[FeatureBlock],
    supervision: &[SupervisionHeatmap],
    params: &HsLstmParams,
    cfg: &HsLstmConfig,
    mode: MaskMode,
) -> Result<HsOutput> {
    cfg.validate()?;
    check_lengths(blocks, supervision, cfg.frames_per_gif)?;
    if params.tiers.len() != cfg.tiers {
        return Err(Error::Config(format!(
            "configured {} tiers but got {} LSTM parameter sets",
            cfg.tiers,
            params.tiers.len()
        )));
    }
    let tape = blocks[0].cells.tape().clone();
    let hidden = params.tiers[0].hidden_size();
    let n_seg = cfg.segments();

    // Non-last tiers: one node per segment over mean-pooled frames.
    let mut tier_reprs: Vec<Vec<Tensor>> = Vec::with_capacity(cfg.tiers - 1);
    let mut segment_reprs = Vec::new();
    for tier in 0..cfg.tiers - 1 {
        let mut reprs = Vec::with_capacity(n_seg);
        for seg in 0..n_seg {
            let mut state = LstmState::zeros(&tape, hidden);
            for t in seg * cfg.node_size..(seg + 1) * cfg.node_size {
                let mean_feat = blocks[t].as_matrix().mean_axis(0)?;
                let input = if tier == 0 {
                    mean_feat
                } else {
                    let mut parts: Vec<&Tensor> = vec![&mean_feat];
                    parts.extend(tier_reprs[..tier].iter().map(|r| &r[seg]));
                    concat(&parts)?
                };
                state = lstm_step(&input, &state, &params.tiers[tier])?;
            }
            segment_reprs.push(SegmentRepresentation {
                tier: tier + 1,
                segment_index: seg,
                vector: state.h.clone(),
            });
            reprs.push(state.h);
        }
        tier_reprs.push(reprs);
    }

    // Last tier: one chain over all frames with attention-pooled features.
    let mut state = LstmState::zeros(&tape, hidden);
    let mut masks = Vec::with_capacity(cfg.frames_per_gif);
    for (t, block) in blocks.iter().enumerate() {
        let seg = t / cfg.node_size;
        let tier_context = match cfg.tiers {
            1 => None,
            _ => {
                let mut sum = tier_reprs[0][seg].clone();
                for reprs in &tier_reprs[1..] {
                    sum = sum.add(&reprs[seg])?;
                }
                Some(sum)
            }
        };
        let (mask, pooled) = attended_frame(
            &state.h,
            block,
            &params.attention,
            tier_context.as_ref(),
            mode,
            &tape,
        )?;
        masks.push(mask);
        let input = if cfg.tiers == 1 {
            pooled
        } else {
            let mut parts: Vec<&Tensor> = vec![&pooled];
            parts.extend(tier_reprs.iter().map(|r| &r[seg]));
            concat(&parts)?
        };
        state = lstm_step(&input, &state, &params.tiers[cfg.tiers - 1])?;
    }

    Ok(HsOutput {
        gif_repr: state.h,
        masks,
        segment_reprs,
    })
}

/// Baseline: a single LSTM chain over attention-pooled frames, no hierarchy.
///
/// Kept as a standalone implementation (not a call into [`hs_forward`]) so
/// the structural equivalence `hs_forward(tiers=1) ≡ plain_lstm_forward` is
/// a meaningful check rather than a tautology.
pub fn plain_lstm_forward(
    blocks: &[FeatureBlock],
    supervision: &[SupervisionHeatmap],
    params: &HsLstmParams,
    mode: MaskMode,
) -> Result<HsOutput> {
    if params.tiers.len() != 1 {
        return Err(Error::Config(format!(
            "plain LSTM expects exactly one parameter set, got {}",
            params.tiers.len()
        )));
    }
    if blocks.is_empty() || blocks.len() != supervision.len() {
        return Err(Error::Config(format!(
            "expected equal nonzero frame counts, got {} blocks and {} heatmaps",
            blocks.len(),
            supervision.len()
        )));
    }
    let tape = blocks[0].cells.tape().clone();
    let cell = &params.tiers[0];
    let mut state = LstmState::zeros(&tape, cell.hidden_size());
    let mut masks = Vec::with_capacity(blocks.len());
    for block in blocks {
        let (mask, pooled) =
            attended_frame(&state.h, block, &params.attention, None, mode, &tape)?;
        masks.push(mask);
        state = lstm_step(&pooled, &state, cell)?;
    }
    Ok(HsOutput {
        gif_repr: state.h,
        masks,
        segment_reprs: Vec::new(),
    })
}
