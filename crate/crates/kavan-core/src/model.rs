//! Parameter containers and the end-to-end forward pass.
//!
//! [`KavanParams`] owns every learnable weight as plain [`Array`]s so it can
//! be saved, loaded, and updated by an optimizer; [`bind`](KavanParams::bind)
//! loads them onto a fresh tape for one differentiable forward/backward
//! pass. Parameter enumeration order is fixed and shared between the plain
//! and bound views — optimizers and the gradient checker rely on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, FeatureBlock, MaskMode};
use crate::data::{encode, patch_slots, EncoderParams, EMOTION_COUNT};
use crate::error::{Error, Result};
use crate::heatmap::{HeatmapConfig, SupervisionHeatmap, GRID_CELLS};
use crate::losses::{self, EmotionTarget, LossWeights};
use crate::recurrent::{hs_forward, plain_lstm_forward, HsLstmConfig, HsLstmParams, LstmParams};
use crate::tensor::{Array, Tape, Tensor};

/// Number of coarse emotion categories.
pub const CATEGORY_COUNT: usize = 4;
/// Attention projection width.
pub const DEFAULT_ATTENTION_DIM: usize = 32;

/// Which temporal module runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    PlainLstm,
    HsLstm,
}

/// Architecture and data-pipeline shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hs: HsLstmConfig,
    /// Visual feature channels per spatial cell.
    pub feat_channels: usize,
    /// Recurrent state width.
    pub hidden: usize,
    /// Attention projection width.
    pub attention_dim: usize,
    pub mask_mode: MaskMode,
    /// Raw frame side length fed to the toy encoder.
    pub resolution: usize,
    pub heatmap: HeatmapConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::HsLstm,
            hs: HsLstmConfig::default(),
            feat_channels: 64,
            hidden: 64,
            attention_dim: DEFAULT_ATTENTION_DIM,
            mask_mode: MaskMode::Learned,
            resolution: 64,
            heatmap: HeatmapConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Number of LSTM parameter sets the configuration implies.
    pub fn tier_count(&self) -> usize {
        match self.kind {
            ModelKind::PlainLstm => 1,
            ModelKind::HsLstm => self.hs.tiers,
        }
    }

    /// LSTM input width for 0-based tier `tier`; the last tier also carries
    /// every prior tier's segment representation.
    pub fn tier_input_width(&self, tier: usize) -> usize {
        let tiers = self.tier_count();
        if tier + 1 == tiers {
            self.feat_channels + (tiers - 1) * self.hidden
        } else {
            self.feat_channels + tier * self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hs.validate()?;
        if self.feat_channels == 0 || self.hidden == 0 || self.attention_dim == 0 {
            return Err(Error::Config(
                "feature, hidden and attention dimensions must be positive".into(),
            ));
        }
        if self.resolution < crate::heatmap::GRID_SIDE {
            return Err(Error::Config(format!(
                "resolution {} is below the {}-cell attention grid",
                self.resolution,
                crate::heatmap::GRID_SIDE
            )));
        }
        Ok(())
    }
}

/// A weight matrix with its bias vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearWeights {
    pub weight: Array,
    pub bias: Array,
}

/// Attention weights in storable form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub v: Array,
    pub a_h: Array,
    pub a_c: Array,
    pub ctx: Option<Array>,
    pub bias: Array,
    pub w_res: Array,
}

/// Every learnable weight of the network, in plain storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KavanParams {
    pub config: ModelConfig,
    pub encoder: LinearWeights,
    pub tiers: Vec<LinearWeights>,
    pub attention: AttentionWeights,
    pub regression: LinearWeights,
    pub classification: LinearWeights,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let numel = shape.iter().product();
    Array {
        shape: shape.to_vec(),
        data: (0..numel).map(|_| rng.random_range(-0.1..0.1)).collect(),
    }
}

impl KavanParams {
    /// Fresh weights: uniform `[−0.1, 0.1]` matrices, zero biases, zero
    /// residual weight; fully determined by `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<KavanParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = patch_slots(config.resolution);
        let channels = config.feat_channels;
        let hidden = config.hidden;
        let proj = config.attention_dim;
        let tiers = config.tier_count();

        let encoder = LinearWeights {
            weight: uniform(&mut rng, &[slots, channels]),
            bias: Array::zeros(&[channels]),
        };
        let tier_weights = (0..tiers)
            .map(|tier| {
                let width = hidden + config.tier_input_width(tier);
                LinearWeights {
                    weight: uniform(&mut rng, &[width, 4 * hidden]),
                    bias: Array::zeros(&[4 * hidden]),
                }
            })
            .collect();
        let attention = AttentionWeights {
            v: uniform(&mut rng, &[1, proj]),
            a_h: uniform(&mut rng, &[proj, hidden]),
            a_c: uniform(&mut rng, &[proj, channels]),
            ctx: (tiers > 1).then(|| uniform(&mut rng, &[proj, hidden])),
            bias: uniform(&mut rng, &[proj]),
            w_res: Array::zeros(&[1]),
        };
        let regression = LinearWeights {
            weight: uniform(&mut rng, &[hidden, EMOTION_COUNT]),
            bias: Array::zeros(&[EMOTION_COUNT]),
        };
        let classification = LinearWeights {
            weight: uniform(&mut rng, &[hidden, CATEGORY_COUNT]),
            bias: Array::zeros(&[CATEGORY_COUNT]),
        };
        Ok(KavanParams {
            config,
            encoder,
            tiers: tier_weights,
            attention,
            regression,
            classification,
        })
    }

    /// Parameter names in the fixed enumeration order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["encoder.weight".into(), "encoder.bias".into()];
        for tier in 0..self.tiers.len() {
            names.push(format!("tier{tier}.weight"));
            names.push(format!("tier{tier}.bias"));
        }
        names.push("attention.v".into());
        names.push("attention.a_h".into());
        names.push("attention.a_c".into());
        if self.attention.ctx.is_some() {
            names.push("attention.ctx".into());
        }
        names.push("attention.bias".into());
        names.push("attention.w_res".into());
        names.push("regression.weight".into());
        names.push("regression.bias".into());
        names.push("classification.weight".into());
        names.push("classification.bias".into());
        names
    }

    pub fn arrays(&self) -> Vec<&Array> {
        let mut arrays = vec![&self.encoder.weight, &self.encoder.bias];
        for tier in &self.tiers {
            arrays.push(&tier.weight);
            arrays.push(&tier.bias);
        }
        arrays.push(&self.attention.v);
        arrays.push(&self.attention.a_h);
        arrays.push(&self.attention.a_c);
        if let Some(ctx) = &self.attention.ctx {
            arrays.push(ctx);
        }
        arrays.push(&self.attention.bias);
        arrays.push(&self.attention.w_res);
        arrays.push(&self.regression.weight);
        arrays.push(&self.regression.bias);
        arrays.push(&self.classification.weight);
        arrays.push(&self.classification.bias);
        arrays
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array> {
        let mut arrays = vec![&mut self.encoder.weight, &mut self.encoder.bias];
        for tier in &mut self.tiers {
            arrays.push(&mut tier.weight);
            arrays.push(&mut tier.bias);
        }
        arrays.push(&mut self.attention.v);
        arrays.push(&mut self.attention.a_h);
        arrays.push(&mut self.attention.a_c);
        if let Some(ctx) = &mut self.attention.ctx {
            arrays.push(ctx);
        }
        arrays.push(&mut self.attention.bias);
        arrays.push(&mut self.attention.w_res);
        arrays.push(&mut self.regression.weight);
        arrays.push(&mut self.regression.bias);
        arrays.push(&mut self.classification.weight);
        arrays.push(&mut self.classification.bias);
        arrays
    }

    /// Loads every weight onto `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &Tape) -> BoundModel {
        let leaf = |a: &Array| tape.leaf(a.clone(), true);
        BoundModel {
            encoder: EncoderParams {
                weight: leaf(&self.encoder.weight),
                bias: leaf(&self.encoder.bias),
            },
            hs: HsLstmParams {
                tiers: self
                    .tiers
                    .iter()
                    .map(|t| LstmParams {
                        weight: leaf(&t.weight),
                        bias: leaf(&t.bias),
                    })
                    .collect(),
                attention: AttentionParams {
                    v: leaf(&self.attention.v),
                    a_h: leaf(&self.attention.a_h),
                    a_c: leaf(&self.attention.a_c),
                    ctx: self.attention.ctx.as_ref().map(leaf),
                    bias: leaf(&self.attention.bias),
                    w_res: leaf(&self.attention.w_res),
                },
            },
            regression: HeadParams {
                weight: leaf(&self.regression.weight),
                bias: leaf(&self.regression.bias),
            },
            classification: HeadParams {
                weight: leaf(&self.classification.weight),
                bias: leaf(&self.classification.bias),
            },
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<KavanParams> {
        let text = std::fs::read_to_string(path)?;
        let params: KavanParams = serde_json::from_str(&text)?;
        params.config.validate()?;
        Ok(params)
    }
}

/// A linear output head bound to a tape.
pub struct HeadParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl HeadParams {
    /// `activation(reprᵀ W + b)` as a flat vector.
    fn apply(&self, repr: &Tensor) -> Result<Tensor> {
        let d = repr.numel();
        let out = self.bias.numel();
        let row = repr.reshape(&[1, d])?;
        row.matmul(&self.weight)?
            .reshape(&[out])?
            .add(&self.bias)
    }
}

/// All weights bound onto one tape.
pub struct BoundModel {
    pub encoder: EncoderParams,
    pub hs: HsLstmParams,
    pub regression: HeadParams,
    pub classification: HeadParams,
}

impl BoundModel {
    /// Bound tensors in the same order as [`KavanParams::arrays`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut tensors = vec![&self.encoder.weight, &self.encoder.bias];
        for tier in &self.hs.tiers {
            tensors.push(&tier.weight);
            tensors.push(&tier.bias);
        }
        tensors.push(&self.hs.attention.v);
        tensors.push(&self.hs.attention.a_h);
        tensors.push(&self.hs.attention.a_c);
        if let Some(ctx) = &self.hs.attention.ctx {
            tensors.push(ctx);
        }
        tensors.push(&self.hs.attention.bias);
        tensors.push(&self.hs.attention.w_res);
        tensors.push(&self.regression.weight);
        tensors.push(&self.regression.bias);
        tensors.push(&self.classification.weight);
        tensors.push(&self.classification.bias);
        tensors
    }

    /// Accumulated gradients in enumeration order.
    pub fn gradients(&self) -> Vec<Vec<f64>> {
        self.tensors()
            .iter()
            .map(|t| t.grad().expect("bound parameters track gradients"))
            .collect()
    }
}

/// Sampled frame content for one forward pass.
#[derive(Clone, Debug)]
pub enum FrameInput {
    /// Raw grayscale frames, encoded by the toy encoder.
    Raw(Vec<Array>),
    /// Precomputed `[7, 7, channels]` feature blocks.
    Features(Vec<Array>),
}

impl FrameInput {
    pub fn len(&self) -> usize {
        match self {
            FrameInput::Raw(v) => v.len(),
            FrameInput::Features(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything one forward pass produces.
pub struct ForwardPass {
    pub gif_repr: Tensor,
    pub masks: Vec<Tensor>,
    /// `[17]`, through tanh so predictions live in `(−1, 1)`.
    pub pred_intensities: Tensor,
    /// `[4]` category logits.
    pub logits: Tensor,
    pub segment_count: usize,
}

/// Runs the full network: encode (or adopt) frame features, run the
/// temporal module with attention, and apply both output heads.
pub fn forward(
    tape: &Tape,
    bound: &BoundModel,
    frames: &FrameInput,
    supervision: &[SupervisionHeatmap],
    config: &ModelConfig,
) -> Result<ForwardPass> {
    let blocks: Vec<FeatureBlock> = match frames {
        FrameInput::Raw(images) => images
            .iter()
            .enumerate()
            .map(|(t, image)| encode(image, &bound.encoder, t))
            .collect::<Result<_>>()?,
        FrameInput::Features(feats) => feats
            .iter()
            .enumerate()
            .map(|(t, feat)| {
                if feat.rank() != 3 || feat.shape[0] * feat.shape[1] != GRID_CELLS {
                    return Err(Error::Contract(format!(
                        "feature block {t} has shape {:?}, expected [7, 7, channels]",
                        feat.shape
                    )));
                }
                FeatureBlock::new(tape.constant(feat.clone()), t)
            })
            .collect::<Result<_>>()?,
    };

    let out = match config.kind {
        ModelKind::HsLstm => hs_forward(
            &blocks,
            supervision,
            &bound.hs,
            &config.hs,
            config.mask_mode,
        )?,
        ModelKind::PlainLstm => {
            plain_lstm_forward(&blocks, supervision, &bound.hs, config.mask_mode)?
        }
    };

    let pred_intensities = bound.regression.apply(&out.gif_repr)?.tanh();
    let logits = bound.classification.apply(&out.gif_repr)?;
    Ok(ForwardPass {
        gif_repr: out.gif_repr,
        masks: out.masks,
        pred_intensities,
        logits,
        segment_count: out.segment_reprs.len(),
    })
}

/// Scalar snapshot of every loss component, for logging and NaN guards.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub nmse: f64,
    pub cross_entropy: f64,
    pub rank: f64,
    pub keypoint: f64,
}

impl LossValues {
    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("nmse", self.nmse),
            ("cross_entropy", self.cross_entropy),
            ("rank", self.rank),
            ("keypoint", self.keypoint),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// The differentiable total loss plus its component snapshot.
pub struct LossBreakdown {
    pub total: Tensor,
    pub values: LossValues,
}

/// Combined objective for one sample.
pub fn compute_loss(
    pass: &ForwardPass,
    supervision: &[SupervisionHeatmap],
    target: &EmotionTarget,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let regression = losses::nmse(&pass.pred_intensities, &target.intensities)?;
    let classification = losses::cross_entropy(&pass.logits, target.category)?;
    let ranking = losses::rank_surrogate(
        &pass.pred_intensities,
        &target.intensities,
        weights.rank_margin,
    )?;
    let keypoint = losses::keypoint_loss(&pass.masks, supervision)?;
    let emotion = regression
        .add(&classification.mul_scalar(weights.w_class))?
        .add(&ranking.mul_scalar(weights.w_rank))?;
    let total = losses::total_loss(&emotion, &keypoint, weights)?;
    let values = LossValues {
        total: total.scalar_value(),
        nmse: regression.scalar_value(),
        cross_entropy: classification.scalar_value(),
        rank: ranking.scalar_value(),
        keypoint: keypoint.scalar_value(),
    };
    Ok(LossBreakdown { total, values })
}
