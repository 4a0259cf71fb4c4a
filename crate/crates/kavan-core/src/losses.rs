//! Training objectives.
//!
//! The emotion loss combines normalized-MSE intensity regression, four-way
//! circumplex-category cross entropy, and a pairwise ranking term; the total
//! loss adds the keypoint supervision term on the attention masks. The
//! ranking objective as defined — a count of mis-ordered pairs — has zero
//! gradient almost everywhere, so training uses a hinge surrogate over the
//! same pairs and the exact count is reported as a metric.

use serde::{Deserialize, Serialize};

use crate::data::EmotionTaxonomy;
use crate::error::{Error, Result};
use crate::heatmap::SupervisionHeatmap;
use crate::tensor::{population_variance, Array, Tensor};

/// Minimum target variance for nMSE to be well defined.
pub const MIN_TARGET_VARIANCE: f64 = 1e-12;

/// Weights of the combined objective
/// `L = nMSE + w_class·CE + w_rank·hinge + w_kp·L_kp`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_kp: f64,
    pub w_class: f64,
    pub w_rank: f64,
    pub rank_margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_kp: 1.0,
            w_class: 0.3,
            w_rank: 0.1,
            rank_margin: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_kp, self.w_class, self.w_rank, self.rank_margin];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Ground truth for one GIF: 17 per-emotion intensities in `[−1, 1]` and the
/// coarse circumplex category derived from the strongest emotion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmotionTarget {
    pub intensities: Array,
    pub category: usize,
}

impl EmotionTarget {
    /// Derives the category from the intensities (ties: lowest index).
    pub fn from_intensities(intensities: Array, taxonomy: &EmotionTaxonomy) -> Result<Self> {
        let category = taxonomy.derive_category(&intensities)?;
        Ok(EmotionTarget {
            intensities,
            category,
        })
    }
}

/// Mean squared error divided by the population variance of the target.
///
/// The constant mean-of-target predictor scores exactly 1, which is the
/// baseline the metric is calibrated against; a constant target has no such
/// baseline and is rejected.
pub fn nmse(pred: &Tensor, target: &Array) -> Result<Tensor> {
    if pred.numel() != target.numel() {
        return Err(Error::ShapeMismatch {
            op: "nmse",
            lhs: pred.shape(),
            rhs: target.shape.clone(),
        });
    }
    let variance = population_variance(&target.data);
    if variance <= MIN_TARGET_VARIANCE {
        return Err(Error::DegenerateTarget {
            variance,
            min: MIN_TARGET_VARIANCE,
        });
    }
    let target_t = pred.tape().constant(Array::vector(&target.data));
    let mse = pred.sub(&target_t)?.square().mean_all();
    Ok(mse.mul_scalar(1.0 / variance))
}

/// Plain-value nMSE for evaluation paths that never differentiate.
pub fn nmse_value(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "nmse",
            lhs: vec![pred.len()],
            rhs: vec![target.len()],
        });
    }
    let variance = population_variance(target);
    if variance <= MIN_TARGET_VARIANCE {
        return Err(Error::DegenerateTarget {
            variance,
            min: MIN_TARGET_VARIANCE,
        });
    }
    let mse = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse / variance)
}

/// Stabilized `−log softmax(logits)[category]`.
///
/// Computed as `max + ln Σ exp(logits − max) − logits[category]`; the
/// detached max shift leaves the value and gradient exact.
pub fn cross_entropy(logits: &Tensor, category: usize) -> Result<Tensor> {
    let n = logits.numel();
    if category >= n {
        return Err(Error::Contract(format!(
            "category {category} out of range for {n} logits"
        )));
    }
    let data = logits.data();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "cross_entropy" });
    }
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted = logits.add_scalar(-max);
    let log_sum = shifted.exp().sum_all().ln().add_scalar(max);
    let picked = logits.gather(&[Some(category)])?;
    log_sum.sub(&picked)
}

/// Relabels emotions so target intensities are descending (stable on ties),
/// valid for both the exact count and the surrogate.
fn target_descending_order(target: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.sort_by(|&a, &b| {
        target[b]
            .partial_cmp(&target[a])
            .expect("target intensities must not be NaN")
            .then(a.cmp(&b))
    });
    order
}

/// Exact number of prediction pairs ordered inconsistently with the target.
///
/// Emotions are relabeled in target-descending order; a pair `(k, l)` with
/// `k < l` counts when `pred_k < pred_l`. Metric only — not differentiable.
pub fn rank_violations(pred: &Array, target: &Array) -> usize {
    assert_eq!(
        pred.numel(),
        target.numel(),
        "rank_violations requires equal lengths"
    );
    let order = target_descending_order(&target.data);
    let mut count = 0;
    for k in 0..order.len() {
        for l in k + 1..order.len() {
            if pred.data[order[k]] < pred.data[order[l]] {
                count += 1;
            }
        }
    }
    count
}

/// Differentiable hinge surrogate for the ranking objective:
/// `Σ_{k<l} max(0, margin + pred_l − pred_k)` over target-ordered pairs.
///
/// At zero margin its zero set coincides with `rank_violations == 0` for
/// tie-free predictions.
pub fn rank_surrogate(pred: &Tensor, target: &Array, margin: f64) -> Result<Tensor> {
    let n = pred.numel();
    if n != target.numel() {
        return Err(Error::ShapeMismatch {
            op: "rank_surrogate",
            lhs: pred.shape(),
            rhs: target.shape.clone(),
        });
    }
    if n < 2 {
        return Err(Error::Contract(format!(
            "ranking needs at least 2 emotions, got {n}"
        )));
    }
    let order = target_descending_order(&target.data);
    let mut high = Vec::new(); // the emotion that should score higher
    let mut low = Vec::new();
    for k in 0..n {
        for l in k + 1..n {
            high.push(Some(order[k]));
            low.push(Some(order[l]));
        }
    }
    let stronger = pred.gather(&high)?;
    let weaker = pred.gather(&low)?;
    Ok(weaker.sub(&stronger)?.add_scalar(margin).relu().sum_all())
}

/// Keypoint supervision: summed squared gap between predicted masks and
/// their supervision heatmaps, over all frames and cells.
pub fn keypoint_loss(masks: &[Tensor], heatmaps: &[SupervisionHeatmap]) -> Result<Tensor> {
    if masks.is_empty() || masks.len() != heatmaps.len() {
        return Err(Error::Contract(format!(
            "keypoint loss requires equal nonzero frame counts, got {} masks and {} heatmaps",
            masks.len(),
            heatmaps.len()
        )));
    }
    let tape = masks[0].tape().clone();
    let mut total = tape.scalar(0.0);
    for (mask, heatmap) in masks.iter().zip(heatmaps) {
        if mask.numel() != heatmap.cells().len() {
            return Err(Error::ShapeMismatch {
                op: "keypoint_loss",
                lhs: mask.shape(),
                rhs: heatmap.grid.shape.clone(),
            });
        }
        let target = heatmap.to_tensor(&tape);
        let gap = mask.sub(&target)?.square().sum_all();
        total = total.add(&gap)?;
    }
    Ok(total)
}

/// Emotion loss: `nMSE + w_class·CE + w_rank·hinge`.
pub fn emotion_loss(
    pred_intensities: &Tensor,
    logits: &Tensor,
    target: &EmotionTarget,
    weights: &LossWeights,
) -> Result<Tensor> {
    let regression = nmse(pred_intensities, &target.intensities)?;
    let classification = cross_entropy(logits, target.category)?;
    let ranking = rank_surrogate(pred_intensities, &target.intensities, weights.rank_margin)?;
    regression
        .add(&classification.mul_scalar(weights.w_class))?
        .add(&ranking.mul_scalar(weights.w_rank))
}

/// Total loss: `emotion + w_kp·keypoint`.
pub fn total_loss(emotion: &Tensor, keypoint: &Tensor, weights: &LossWeights) -> Result<Tensor> {
    emotion.add(&keypoint.mul_scalar(weights.w_kp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EmotionTaxonomy;
    use crate::gradcheck::{max_relative_error, numeric_gradient};
    use crate::heatmap::normalize;
    use crate::tensor::{mean, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn nmse_of_exact_prediction_is_zero() {
        let mut r = rng(1);
        let target = Array::vector(&rand_vec(&mut r, 17));
        let tape = Tape::new();
        let pred = tape.constant(target.clone());
        assert_eq!(nmse(&pred, &target).unwrap().scalar_value(), 0.0);
    }

    #[test]
    fn nmse_of_mean_predictor_is_exactly_one() {
        let mut r = rng(2);
        for _ in 0..20 {
            let target = Array::vector(&rand_vec(&mut r, 17));
            let m = mean(&target.data);
            let tape = Tape::new();
            let pred = tape.constant(Array::filled(&[17], m));
            let value = nmse(&pred, &target).unwrap().scalar_value();
            assert!((value - 1.0).abs() < 1e-12, "got {value}");
        }
    }

    #[test]
    fn nmse_rejects_constant_target() {
        let tape = Tape::new();
        let pred = tape.constant(Array::vector(&[0.0; 17]));
        let target = Array::filled(&[17], 0.42);
        assert!(matches!(
            nmse(&pred, &target),
            Err(Error::DegenerateTarget { .. })
        ));
    }

    #[test]
    fn nmse_gradient_matches_finite_differences() {
        let mut r = rng(3);
        let target_raw = rand_vec(&mut r, 9);
        let pred_raw = rand_vec(&mut r, 9);
        let target = Array::vector(&target_raw);

        let tape = Tape::new();
        let pred = tape.leaf(Array::vector(&pred_raw), true);
        nmse(&pred, &target).unwrap().backward().unwrap();

        let fd = numeric_gradient(
            |x| {
                let t = Tape::new();
                let p = t.constant(Array::vector(x));
                nmse(&p, &target).unwrap().scalar_value()
            },
            &pred_raw,
            1e-5,
        );
        assert!(max_relative_error(&pred.grad().unwrap(), &fd) < 1e-6);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln4() {
        let tape = Tape::new();
        let logits = tape.constant(Array::vector(&[0.0; 4]));
        let ce = cross_entropy(&logits, 2).unwrap().scalar_value();
        assert!((ce - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_have_tiny_loss() {
        let tape = Tape::new();
        let mut raw = [0.0; 4];
        raw[1] = 20.0;
        let logits = tape.constant(Array::vector(&raw));
        let ce = cross_entropy(&logits, 1).unwrap().scalar_value();
        assert!(ce < 1e-8, "got {ce}");
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let tape = Tape::new();
        let logits = tape.constant(Array::vector(&[0.4, -1.0, 2.2, 0.1]));
        let shifted = logits.add_scalar(31.7);
        let a = cross_entropy(&logits, 3).unwrap().scalar_value();
        let b = cross_entropy(&shifted, 3).unwrap().scalar_value();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_category() {
        let tape = Tape::new();
        let logits = tape.constant(Array::vector(&[0.0; 4]));
        assert!(matches!(
            cross_entropy(&logits, 4),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut r = rng(4);
        let raw = rand_vec(&mut r, 4);
        let tape = Tape::new();
        let logits = tape.leaf(Array::vector(&raw), true);
        cross_entropy(&logits, 2).unwrap().backward().unwrap();

        let soft = tape
            .constant(Array::vector(&raw))
            .softmax()
            .unwrap()
            .data();
        let grad = logits.grad().unwrap();
        for j in 0..4 {
            let expected = soft[j] - if j == 2 { 1.0 } else { 0.0 };
            assert!((grad[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn perfectly_ordered_predictions_have_zero_violations() {
        let target = Array::vector(&[0.9, 0.5, 0.1, -0.4]);
        let pred = Array::vector(&[3.0, 2.0, 1.0, 0.0]);
        assert_eq!(rank_violations(&pred, &target), 0);
    }

    #[test]
    fn fully_reversed_prediction_has_all_pairs_wrong() {
        let target = Array::vector(&[0.9, 0.5, 0.1, -0.4]);
        let pred = Array::vector(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(rank_violations(&pred, &target), 6); // C(4,2)
    }

    #[test]
    fn rank_violations_match_brute_force_oracle() {
        let mut r = rng(5);
        for trial in 0..1000 {
            let k = r.random_range(2..=8);
            // Mix continuous and small-integer draws so ties occur.
            let quantize = trial % 3 == 0;
            let draw = |r: &mut ChaCha8Rng| -> f64 {
                if quantize {
                    r.random_range(-2..3) as f64 * 0.25
                } else {
                    r.random_range(-1.0..1.0)
                }
            };
            let pred = Array::vector(&(0..k).map(|_| draw(&mut r)).collect::<Vec<_>>());
            let target = Array::vector(&(0..k).map(|_| draw(&mut r)).collect::<Vec<_>>());

            // Independent double-loop oracle over raw emotion pairs: the
            // pair (a, b) is target-ordered when target_a > target_b, or on
            // ties when a < b; it violates when pred_a < pred_b.
            let mut expected = 0usize;
            for a in 0..k {
                for b in 0..k {
                    if a == b {
                        continue;
                    }
                    let ordered = target.data[a] > target.data[b]
                        || (target.data[a] == target.data[b] && a < b);
                    if ordered && pred.data[a] < pred.data[b] {
                        expected += 1;
                    }
                }
            }
            assert_eq!(
                rank_violations(&pred, &target),
                expected,
                "trial {trial}: pred {:?} target {:?}",
                pred.data,
                target.data
            );
        }
    }

    #[test]
    fn surrogate_is_zero_for_ordered_predictions_with_gaps() {
        let target = Array::vector(&[0.9, 0.5, 0.1]);
        let tape = Tape::new();
        let pred = tape.constant(Array::vector(&[2.0, 1.0, 0.0]));
        let s = rank_surrogate(&pred, &target, 0.5).unwrap().scalar_value();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn surrogate_single_pair_hand_value() {
        // Two emotions, target descending at indices (0, 1); pred reversed
        // by exactly 1 ⇒ single hinge term margin + 1.
        let target = Array::vector(&[1.0, 0.0]);
        let tape = Tape::new();
        let pred = tape.constant(Array::vector(&[0.0, 1.0]));
        let s = rank_surrogate(&pred, &target, 0.0).unwrap().scalar_value();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn surrogate_zero_set_matches_exact_count_without_ties() {
        let mut r = rng(6);
        for _ in 0..200 {
            let k = r.random_range(2..=8);
            let pred_raw = rand_vec(&mut r, k);
            let target = Array::vector(&rand_vec(&mut r, k));
            let tape = Tape::new();
            let pred = tape.constant(Array::vector(&pred_raw));
            let s = rank_surrogate(&pred, &target, 0.0).unwrap().scalar_value();
            let violations = rank_violations(&Array::vector(&pred_raw), &target);
            assert_eq!(s == 0.0, violations == 0);
        }
    }

    #[test]
    fn surrogate_subgradient_matches_finite_differences_off_kinks() {
        let mut r = rng(7);
        let target = Array::vector(&rand_vec(&mut r, 6));
        // Spread predictions far from hinge kinks.
        let pred_raw: Vec<f64> = (0..6).map(|i| i as f64 * 0.7 - 2.0).collect();

        let tape = Tape::new();
        let pred = tape.leaf(Array::vector(&pred_raw), true);
        rank_surrogate(&pred, &target, 0.05)
            .unwrap()
            .backward()
            .unwrap();

        let fd = numeric_gradient(
            |x| {
                let t = Tape::new();
                let p = t.constant(Array::vector(x));
                rank_surrogate(&p, &target, 0.05).unwrap().scalar_value()
            },
            &pred_raw,
            1e-5,
        );
        assert!(max_relative_error(&pred.grad().unwrap(), &fd) < 1e-6);
    }

    #[test]
    fn keypoint_loss_of_matching_masks_is_zero() {
        let hm = normalize(&Array::zeros(&[7, 7])).unwrap();
        let tape = Tape::new();
        let mask = hm.to_tensor(&tape);
        let loss = keypoint_loss(&[mask], &[hm]).unwrap();
        assert_eq!(loss.scalar_value(), 0.0);
    }

    #[test]
    fn keypoint_loss_uniform_vs_one_hot_closed_form() {
        let mut grid = Array::zeros(&[7, 7]);
        grid.data[0] = 30.0; // near-one-hot after softmax
        let hm = normalize(&grid).unwrap();
        let tape = Tape::new();
        let uniform = crate::attention::uniform_mask(&tape, 49);
        let loss = keypoint_loss(&[uniform], &[hm.clone()])
            .unwrap()
            .scalar_value();

        // Closed form for uniform vs exact one-hot:
        // (1 − 1/49)² + 48·(1/49)² ≈ 0.9796
        let expected = (1.0 - 1.0 / 49.0_f64).powi(2) + 48.0 * (1.0 / 49.0_f64).powi(2);
        assert!((expected - 0.9796).abs() < 1e-4);
        // The rendered heatmap is not exactly one-hot; compare directly.
        let direct: f64 = hm
            .cells()
            .iter()
            .map(|&m| (m - 1.0 / 49.0) * (m - 1.0 / 49.0))
            .sum();
        assert!((loss - direct).abs() < 1e-12);
        assert!((loss - expected).abs() < 1e-6);
    }

    #[test]
    fn keypoint_loss_is_quadratic_in_the_gap() {
        let mut r = rng(8);
        let mut grid = Array::zeros(&[7, 7]);
        for v in &mut grid.data {
            *v = r.random_range(-1.0..1.0);
        }
        let hm = normalize(&grid).unwrap();
        let start: Vec<f64> = (0..49).map(|_| r.random_range(0.0..1.0)).collect();
        let sum: f64 = start.iter().sum();
        let start: Vec<f64> = start.into_iter().map(|v| v / sum).collect();
        let mid: Vec<f64> = start
            .iter()
            .zip(hm.cells())
            .map(|(s, t)| 0.5 * (s + t))
            .collect();

        let tape = Tape::new();
        let loss_start = keypoint_loss(
            &[tape.constant(Array::vector(&start))],
            std::slice::from_ref(&hm),
        )
        .unwrap()
        .scalar_value();
        let loss_mid = keypoint_loss(
            &[tape.constant(Array::vector(&mid))],
            std::slice::from_ref(&hm),
        )
        .unwrap()
        .scalar_value();
        assert!((loss_mid - loss_start / 4.0).abs() < 1e-12);
    }

    #[test]
    fn keypoint_loss_rejects_length_mismatch() {
        let hm = normalize(&Array::zeros(&[7, 7])).unwrap();
        let tape = Tape::new();
        let mask = hm.to_tensor(&tape);
        assert!(matches!(
            keypoint_loss(&[mask], &[hm.clone(), hm]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn emotion_loss_composes_as_weighted_sum() {
        let mut r = rng(9);
        let taxonomy = EmotionTaxonomy::default();
        let intensities = Array::vector(&rand_vec(&mut r, 17));
        let target = EmotionTarget::from_intensities(intensities, &taxonomy).unwrap();
        let pred_raw = rand_vec(&mut r, 17);
        let logit_raw = rand_vec(&mut r, 4);

        let weights = LossWeights {
            w_kp: 0.0,
            w_class: 0.3,
            w_rank: 0.1,
            rank_margin: 0.0,
        };

        let tape = Tape::new();
        let pred = tape.constant(Array::vector(&pred_raw));
        let logits = tape.constant(Array::vector(&logit_raw));
        let combined = emotion_loss(&pred, &logits, &target, &weights)
            .unwrap()
            .scalar_value();

        let reg = nmse(&pred, &target.intensities).unwrap().scalar_value();
        let ce = cross_entropy(&logits, target.category)
            .unwrap()
            .scalar_value();
        let rank = rank_surrogate(&pred, &target.intensities, 0.0)
            .unwrap()
            .scalar_value();
        assert!((combined - (reg + 0.3 * ce + 0.1 * rank)).abs() < 1e-12);

        // Zero weights degenerate to pure regression.
        let pure = LossWeights {
            w_kp: 0.0,
            w_class: 0.0,
            w_rank: 0.0,
            rank_margin: 0.0,
        };
        let only_reg = emotion_loss(&pred, &logits, &target, &pure)
            .unwrap()
            .scalar_value();
        assert!((only_reg - reg).abs() < 1e-15);
    }

    #[test]
    fn total_loss_combines_branches() {
        let weights = LossWeights::default();
        let tape = Tape::new();
        let emotion = tape.scalar(0.5);
        let kp = tape.scalar(0.5);
        let total = total_loss(&emotion, &kp, &weights).unwrap().scalar_value();
        assert_eq!(total, 1.0);

        let off = LossWeights {
            w_kp: 0.0,
            ..LossWeights::default()
        };
        let total = total_loss(&emotion, &kp, &off).unwrap().scalar_value();
        assert_eq!(total, 0.5);
    }

    #[test]
    fn total_loss_gradients_reach_both_branches() {
        let tape = Tape::new();
        let a = tape.leaf(Array::scalar(0.3), true);
        let b = tape.leaf(Array::scalar(0.7), true);
        let emotion = a.square().sum_all();
        let kp = b.square().sum_all();
        total_loss(&emotion, &kp, &LossWeights::default())
            .unwrap()
            .backward()
            .unwrap();
        assert!(a.grad().unwrap()[0] != 0.0);
        assert!(b.grad().unwrap()[0] != 0.0);
    }

    #[test]
    fn emotion_loss_gradient_matches_finite_differences() {
        let mut r = rng(10);
        let taxonomy = EmotionTaxonomy::default();
        let intensities = Array::vector(&rand_vec(&mut r, 17));
        let target = EmotionTarget::from_intensities(intensities, &taxonomy).unwrap();
        let pred_raw = rand_vec(&mut r, 17);
        let logit_raw = rand_vec(&mut r, 4);
        let weights = LossWeights::default();

        let tape = Tape::new();
        let pred = tape.leaf(Array::vector(&pred_raw), true);
        let logits = tape.leaf(Array::vector(&logit_raw), true);
        emotion_loss(&pred, &logits, &target, &weights)
            .unwrap()
            .backward()
            .unwrap();

        let fd_pred = numeric_gradient(
            |x| {
                let t = Tape::new();
                let p = t.constant(Array::vector(x));
                let l = t.constant(Array::vector(&logit_raw));
                emotion_loss(&p, &l, &target, &weights)
                    .unwrap()
                    .scalar_value()
            },
            &pred_raw,
            1e-5,
        );
        let fd_logits = numeric_gradient(
            |x| {
                let t = Tape::new();
                let p = t.constant(Array::vector(&pred_raw));
                let l = t.constant(Array::vector(x));
                emotion_loss(&p, &l, &target, &weights)
                    .unwrap()
                    .scalar_value()
            },
            &logit_raw,
            1e-5,
        );
        assert!(max_relative_error(&pred.grad().unwrap(), &fd_pred) < 1e-4);
        assert!(max_relative_error(&logits.grad().unwrap(), &fd_logits) < 1e-4);
    }
}
