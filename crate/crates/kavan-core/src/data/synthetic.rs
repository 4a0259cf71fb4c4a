//! Seeded synthetic planted-face datasets.
//!
//! Each sample carries one bright Gaussian "face" blob whose size over the
//! two halves of the clip encodes the coarse emotion quadrant (first half:
//! arousal, second half: valence) and whose brightness scales the whole
//! intensity label. A sinusoidal size oscillation makes any single frame
//! ambiguous about the base size while canceling over a segment, so
//! segment-level summaries read the class bits better than frame-by-frame
//! state. A keypoint cluster sits on the face; a decoy blob of face-like
//! size and near-face brightness carries no label information, so pooled
//! readers that cannot exploit the keypoints confuse the two. Background
//! noise and a weak distractor pollute spatial means further, and a
//! fraction of frames simulate keypoint-estimator failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmotionTaxonomy, Frames, GifSample, Quadrant};
use crate::error::Result;
use crate::heatmap::{Keypoint, KeypointFrame, KeypointGroup};
use crate::tensor::Array;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_frames: usize,
    pub resolution: usize,
    pub keypoints_per_frame: usize,
    /// Peak-to-peak uniform background noise.
    pub noise: f64,
    /// Label-independent moving blobs per sample.
    pub distractors: usize,
    /// Plant a face-like decoy blob whose size means nothing. Only the
    /// keypoints say which blob is the face; pooled readers that cannot
    /// use them confuse the two. On by default; switch off for tasks that
    /// must be fully solvable from pixels alone (e.g. overfit checks),
    /// since supervision on look-identical blobs has an information floor.
    pub decoy: bool,
    /// Fraction of frames whose keypoint estimate "fails" (near-zero
    /// confidences) even though the face is visible.
    pub keypoint_dropout: f64,
    /// Relative amplitude of the sinusoidal face-size oscillation that
    /// makes single frames ambiguous about the base size.
    pub size_oscillation: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        if self.n_frames == 0 || self.keypoints_per_frame == 0 {
            return Err(crate::error::Error::Config(
                "n_frames and keypoints_per_frame must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.keypoint_dropout)
            || !(0.0..0.95).contains(&self.size_oscillation)
        {
            return Err(crate::error::Error::Config(
                "keypoint_dropout must be in [0, 1] and size_oscillation in [0, 0.95)".into(),
            ));
        }
        if self.resolution < crate::heatmap::GRID_SIDE {
            return Err(crate::error::Error::Config(format!(
                "resolution {} below the attention grid side",
                self.resolution
            )));
        }
        Ok(())
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_frames: 16,
            resolution: 64,
            keypoints_per_frame: 10,
            noise: 0.05,
            distractors: 1,
            decoy: true,
            keypoint_dropout: 0.1,
            size_oscillation: 0.2,
            seed: 0,
        }
    }
}

/// Small face = the "positive" bit, large face = the "negative" bit.
///
/// The sizes are close enough that, combined with the random brightness,
/// the total face mass (what mean pooling sees) overlaps between classes;
/// telling them apart needs the attended spatial pattern.
const SIGMA_SMALL: f64 = 4.5;
const SIGMA_LARGE: f64 = 6.0;

fn splitmix(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E3779B97F4A7C15_u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // Box–Muller; u1 bounded away from zero.
    let u1: f64 = rng.random_range(1e-12..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

struct Blob {
    x: f64, // normalized center column
    y: f64,
    sigma: f64, // pixels
    amp: f64,
}

fn add_blob(frame: &mut Array, blob: &Blob, resolution: usize) {
    let extent = (resolution - 1) as f64;
    let (cx, cy) = (blob.x * extent, blob.y * extent);
    let denom = 2.0 * blob.sigma * blob.sigma;
    for r in 0..resolution {
        let dr = r as f64 - cy;
        for c in 0..resolution {
            let dc = c as f64 - cx;
            frame.data[r * resolution + c] +=
                blob.amp * (-(dr * dr + dc * dc) / denom).exp();
        }
    }
}

/// The label pattern: quadrant emotions get a descending positive ladder,
/// the rest a negative one, and the whole vector scales with the face
/// brightness. Every coordinate is proportional to `amp`, so a pooled
/// readout that confuses face mass with distractor mass pays for it on
/// every emotion at once.
fn intensity_pattern(
    quadrant: Quadrant,
    amp: f64,
    taxonomy: &EmotionTaxonomy,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let members = taxonomy.emotions_in(quadrant);
    let mut values = vec![0.0; taxonomy.names.len()];
    for (rank, &emotion) in members.iter().enumerate() {
        values[emotion] = amp * (0.92 - 0.15 * rank as f64);
    }
    let mut ladder = 0;
    for emotion in 0..taxonomy.names.len() {
        if !members.contains(&emotion) {
            values[emotion] = amp * (-0.08 - 0.05 * ladder as f64);
            ladder += 1;
        }
    }
    for v in &mut values {
        *v = (*v + rng.random_range(-0.012..0.012)).clamp(-1.0, 1.0);
    }
    values
}

/// Generates `n` planted-face samples; the quadrant cycles round-robin so
/// datasets are class-balanced, and everything else is drawn from a stream
/// derived from `cfg.seed` and the sample index (bit-identical per seed).
pub fn generate_synthetic(n: usize, cfg: &SyntheticConfig) -> Result<Vec<GifSample>> {
    cfg.validate()?;
    let taxonomy = EmotionTaxonomy::default();
    let resolution = cfg.resolution;
    let half = cfg.n_frames.div_ceil(2);
    let mut samples = Vec::with_capacity(n);

    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed, i as u64));
        let quadrant = Quadrant::ALL[i % 4];
        let arousal_high = matches!(
            quadrant,
            Quadrant::HighArousalPositive | Quadrant::HighArousalNegative
        );
        let valence_positive = matches!(
            quadrant,
            Quadrant::HighArousalPositive | Quadrant::LowArousalPositive
        );
        let sigma_first = if arousal_high { SIGMA_SMALL } else { SIGMA_LARGE };
        let sigma_second = if valence_positive { SIGMA_SMALL } else { SIGMA_LARGE };
        let amp = rng.random_range(0.4..1.0);

        let size_phase = rng.random_range(0.0..std::f64::consts::TAU);

        // Corner-biased face position with jitter and a slow walk.
        let mut face_x: f64 = if valence_positive { 0.35 } else { 0.65 }
            + rng.random_range(-0.08..0.08);
        let mut face_y: f64 = if arousal_high { 0.35 } else { 0.65 }
            + rng.random_range(-0.08..0.08);

        // A decoy blob of face-like size and near-face brightness whose
        // size carries no label information, kept dimmer than the face by
        // more than the noise range so the face stays the brightest
        // structure in every frame.
        let mut decoy = Blob {
            x: 0.0,
            y: 0.0,
            sigma: rng.random_range(4.2..6.6),
            amp: amp * rng.random_range(0.66..0.75),
        };
        loop {
            decoy.x = rng.random_range(0.2..0.8);
            decoy.y = rng.random_range(0.2..0.8);
            let (dx, dy) = (decoy.x - face_x, decoy.y - face_y);
            if (dx * dx + dy * dy).sqrt() > 0.3 {
                break;
            }
        }
        let decoy_phase = rng.random_range(0.0..std::f64::consts::TAU);

        // Generic weak distractors pollute spatial means further. They
        // spawn away from both bright blobs so peaks never superpose.
        let mut distractors: Vec<Blob> = Vec::with_capacity(cfg.distractors);
        while distractors.len() < cfg.distractors {
            let candidate = Blob {
                x: rng.random_range(0.1..0.9),
                y: rng.random_range(0.1..0.9),
                sigma: rng.random_range(3.0..8.0),
                amp: rng.random_range(0.06..0.12),
            };
            let far = |bx: f64, by: f64| {
                let (dx, dy) = (candidate.x - bx, candidate.y - by);
                (dx * dx + dy * dy).sqrt() > 0.25
            };
            if far(face_x, face_y) && far(decoy.x, decoy.y) {
                distractors.push(candidate);
            }
        }

        // Some frames have a failed keypoint estimate (very low confidence)
        // even though the face is visible — the incomplete/incorrect case.
        let keypoint_dropout: Vec<bool> = (0..cfg.n_frames)
            .map(|_| rng.random_range(0.0..1.0) < cfg.keypoint_dropout)
            .collect();

        let mut frames = Vec::with_capacity(cfg.n_frames);
        let mut keypoint_frames = Vec::with_capacity(cfg.n_frames);
        for t in 0..cfg.n_frames {
            face_x = (face_x + rng.random_range(-0.004..0.004)).clamp(0.2, 0.8);
            face_y = (face_y + rng.random_range(-0.004..0.004)).clamp(0.2, 0.8);
            let base_sigma = if t < half { sigma_first } else { sigma_second };
            let oscillation = 1.0
                + cfg.size_oscillation
                    * (std::f64::consts::PI * t as f64 / 2.0 + size_phase).sin();
            let face = Blob {
                x: face_x,
                y: face_y,
                sigma: base_sigma * oscillation * rng.random_range(0.96..1.04),
                amp: amp * rng.random_range(0.97..1.03),
            };

            let mut frame = Array::zeros(&[resolution, resolution]);
            for v in &mut frame.data {
                *v = rng.random_range(0.0..cfg.noise);
            }
            add_blob(&mut frame, &face, resolution);
            decoy.x = (decoy.x + rng.random_range(-0.004..0.004)).clamp(0.15, 0.85);
            decoy.y = (decoy.y + rng.random_range(-0.004..0.004)).clamp(0.15, 0.85);
            let decoy_oscillation = 1.0
                + cfg.size_oscillation
                    * (std::f64::consts::PI * t as f64 / 2.0 + decoy_phase).sin();
            if cfg.decoy {
                add_blob(
                    &mut frame,
                    &Blob {
                        sigma: decoy.sigma * decoy_oscillation * rng.random_range(0.96..1.04),
                        amp: decoy.amp * rng.random_range(0.97..1.03),
                        ..decoy
                    },
                    resolution,
                );
            }
            for d in &mut distractors {
                d.x = (d.x + rng.random_range(-0.004..0.004)).clamp(0.05, 0.95);
                d.y = (d.y + rng.random_range(-0.004..0.004)).clamp(0.05, 0.95);
                add_blob(
                    &mut frame,
                    &Blob {
                        amp: d.amp * rng.random_range(0.9..1.1),
                        ..*d
                    },
                    resolution,
                );
            }
            for v in &mut frame.data {
                *v = (v.clamp(0.0, 1.0) * 1000.0).round() / 1000.0;
            }
            frames.push(frame);

            let spread = 0.6 * face.sigma / (resolution - 1) as f64;
            let conf_range = if keypoint_dropout[t] {
                0.02..0.15
            } else {
                0.75..1.0
            };
            let points = (0..cfg.keypoints_per_frame)
                .map(|j| {
                    let (gx, gy) = gaussian_pair(&mut rng);
                    Keypoint {
                        x: (face.x + gx * spread).clamp(0.0, 1.0),
                        y: (face.y + gy * spread).clamp(0.0, 1.0),
                        conf: rng.random_range(conf_range.clone()),
                        group: if 5 * j < cfg.keypoints_per_frame {
                            KeypointGroup::Lips
                        } else {
                            KeypointGroup::Other
                        },
                    }
                })
                .collect();
            keypoint_frames.push(KeypointFrame { points });
        }

        let intensities = intensity_pattern(quadrant, amp, &taxonomy, &mut rng);
        let sample = GifSample {
            format: super::DATASET_FORMAT,
            id: format!("synthetic-{:05}", i),
            frames: Frames::Raw(frames),
            keypoints: keypoint_frames,
            intensities: Array::vector(&intensities),
        };
        debug_assert_eq!(
            taxonomy.derive_category(&sample.intensities)?,
            quadrant.index()
        );
        samples.push(sample);
    }
    Ok(samples)
}
