//! Dataset types, segment frame sampling, and the emotion taxonomy.
//!
//! A dataset is JSON-lines, one [`GifSample`] per line with a versioned
//! `format` field. Frames are either raw 64×64 grayscale images in
//! `[0, 1]` or precomputed `[7, 7, channels]` feature blocks exported from
//! an external backbone; keypoint frames are aligned one-to-one with
//! frames. Intensity labels are 17 values in `[−1, 1]`, and the coarse
//! category is always derived from them through the taxonomy, never stored.

mod encoder;
mod synthetic;

pub use encoder::{encode, patch_indices, patch_slots, EncoderParams};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::KeypointFrame;
use crate::tensor::Array;

/// Number of labeled emotions.
pub const EMOTION_COUNT: usize = 17;
/// Dataset schema version accepted by this build.
pub const DATASET_FORMAT: u32 = 1;

/// Coarse circumplex quadrants: arousal on the vertical axis, valence on
/// the horizontal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrant {
    HighArousalPositive,
    HighArousalNegative,
    LowArousalPositive,
    LowArousalNegative,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::HighArousalPositive,
        Quadrant::HighArousalNegative,
        Quadrant::LowArousalPositive,
        Quadrant::LowArousalNegative,
    ];

    /// Stable class index used by the classification head.
    pub fn index(&self) -> usize {
        match self {
            Quadrant::HighArousalPositive => 0,
            Quadrant::HighArousalNegative => 1,
            Quadrant::LowArousalPositive => 2,
            Quadrant::LowArousalNegative => 3,
        }
    }
}

/// The 17 emotion names and their quadrant assignment.
///
/// The default ships in `assets/taxonomy.json`; any JSON file with the same
/// shape can replace it at run time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionTaxonomy {
    pub names: Vec<String>,
    pub quadrant: BTreeMap<String, Quadrant>,
}

const DEFAULT_TAXONOMY: &str = include_str!("../../assets/taxonomy.json");

impl Default for EmotionTaxonomy {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }
}

impl EmotionTaxonomy {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let taxonomy: EmotionTaxonomy = serde_json::from_str(&text)?;
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != EMOTION_COUNT {
            return Err(Error::Config(format!(
                "taxonomy must name {} emotions, got {}",
                EMOTION_COUNT,
                self.names.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &self.names {
            if !seen.insert(name) {
                return Err(Error::Config(format!("duplicate emotion name `{name}`")));
            }
            if !self.quadrant.contains_key(name) {
                return Err(Error::Config(format!(
                    "emotion `{name}` has no quadrant assignment"
                )));
            }
        }
        for quadrant in Quadrant::ALL {
            if !self.quadrant.values().any(|q| *q == quadrant) {
                return Err(Error::Config(format!("quadrant {quadrant:?} is empty")));
            }
        }
        Ok(())
    }

    /// Emotion indices assigned to `quadrant`, in name-vector order.
    pub fn emotions_in(&self, quadrant: Quadrant) -> Vec<usize> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, name)| self.quadrant.get(*name) == Some(&quadrant))
            .map(|(i, _)| i)
            .collect()
    }

    /// Quadrant index of the strongest emotion (ties: lowest index).
    ///
    /// Invariant under any strictly increasing transform of the intensities,
    /// since only the argmax matters.
    pub fn derive_category(&self, intensities: &Array) -> Result<usize> {
        if intensities.numel() != self.names.len() {
            return Err(Error::ShapeMismatch {
                op: "derive_category",
                lhs: intensities.shape.clone(),
                rhs: vec![self.names.len()],
            });
        }
        let dominant = intensities.argmax();
        let name = &self.names[dominant];
        let quadrant = self.quadrant.get(name).ok_or_else(|| {
            Error::Config(format!("emotion `{name}` has no quadrant assignment"))
        })?;
        Ok(quadrant.index())
    }
}

// ---------------------------------------------------------------------------
// Segment frame sampling
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Random,
    #[default]
    Center,
}

/// Temporal-segment sampling configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Number of segments / sampled frames per GIF.
    pub t: usize,
    pub mode: SampleMode,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            t: 8,
            mode: SampleMode::Center,
            seed: 0,
        }
    }
}

/// Splits `n_frames` into `cfg.t` equal segments and picks one frame per
/// segment: the middle one in center mode, a seeded uniform draw otherwise.
///
/// GIFs shorter than `t` frames take frames `0..n` in order and then repeat
/// the last index. Returned indices are always nondecreasing and in range.
pub fn sample_frames(n_frames: usize, cfg: &SamplerConfig) -> Result<Vec<usize>> {
    if n_frames == 0 {
        return Err(Error::Contract("cannot sample from zero frames".into()));
    }
    if cfg.t == 0 {
        return Err(Error::Config("sampler requires t >= 1".into()));
    }
    if n_frames < cfg.t {
        return Ok((0..cfg.t).map(|s| s.min(n_frames - 1)).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.t)
        .map(|s| {
            let lo = s * n_frames / cfg.t;
            let hi = (s + 1) * n_frames / cfg.t;
            match cfg.mode {
                SampleMode::Center => (lo + hi - 1) / 2,
                SampleMode::Random => rng.random_range(lo..hi),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Samples and dataset I/O
// ---------------------------------------------------------------------------

/// Frame content: raw grayscale images for the bundled toy encoder, or
/// feature blocks precomputed by an external backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frames {
    /// `[resolution, resolution]` grayscale images in `[0, 1]`.
    Raw(Vec<Array>),
    /// `[7, 7, channels]` feature blocks.
    Features(Vec<Array>),
}

impl Frames {
    pub fn len(&self) -> usize {
        match self {
            Frames::Raw(v) => v.len(),
            Frames::Features(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn default_format() -> u32 {
    DATASET_FORMAT
}

/// One GIF: frames, aligned keypoint estimates, and the intensity label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GifSample {
    #[serde(default = "default_format")]
    pub format: u32,
    pub id: String,
    pub frames: Frames,
    pub keypoints: Vec<KeypointFrame>,
    pub intensities: Array,
}

impl GifSample {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn validate(&self, taxonomy: &EmotionTaxonomy) -> Result<()> {
        if self.format != DATASET_FORMAT {
            return Err(Error::Config(format!(
                "sample `{}` has format {}, this build reads format {}",
                self.id, self.format, DATASET_FORMAT
            )));
        }
        if self.frames.is_empty() {
            return Err(Error::Contract(format!("sample `{}` has no frames", self.id)));
        }
        if self.keypoints.len() != self.frames.len() {
            return Err(Error::Contract(format!(
                "sample `{}` has {} frames but {} keypoint frames",
                self.id,
                self.frames.len(),
                self.keypoints.len()
            )));
        }
        match &self.frames {
            Frames::Raw(images) => {
                for image in images {
                    if image.rank() != 2 || image.shape[0] != image.shape[1] {
                        return Err(Error::Contract(format!(
                            "sample `{}` raw frame has shape {:?}, expected square",
                            self.id, image.shape
                        )));
                    }
                    if image.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(Error::Contract(format!(
                            "sample `{}` raw frame values outside [0, 1]",
                            self.id
                        )));
                    }
                }
            }
            Frames::Features(blocks) => {
                let channels = blocks.first().map(|b| b.shape.clone());
                for block in blocks {
                    if block.rank() != 3 || Some(block.shape.clone()) != channels {
                        return Err(Error::Contract(format!(
                            "sample `{}` feature blocks must share one [H, W, C] shape",
                            self.id
                        )));
                    }
                }
            }
        }
        for frame in &self.keypoints {
            frame.validate()?;
        }
        if self.intensities.numel() != taxonomy.names.len() {
            return Err(Error::Contract(format!(
                "sample `{}` has {} intensities, taxonomy names {}",
                self.id,
                self.intensities.numel(),
                taxonomy.names.len()
            )));
        }
        if self.intensities.data.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Contract(format!(
                "sample `{}` intensities outside [−1, 1]",
                self.id
            )));
        }
        Ok(())
    }
}

/// Writes a dataset as JSON-lines.
pub fn save_dataset(samples: &[GifSample], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for sample in samples {
        serde_json::to_writer(&mut file, sample)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Reads and validates a JSON-lines dataset.
pub fn load_dataset(path: &Path, taxonomy: &EmotionTaxonomy) -> Result<Vec<GifSample>> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut samples = Vec::new();
    for (line_no, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: GifSample = serde_json::from_str(&line).map_err(|e| {
            Error::Config(format!("line {}: {e}", line_no + 1))
        })?;
        sample.validate(taxonomy)?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "dataset `{}` contains no samples",
            path.display()
        )));
    }
    Ok(samples)
}

/// Deterministic 80/20-style split: shuffles indices with the seed and cuts
/// at `train_fraction`.
pub fn split_dataset(
    n: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&train_fraction) || n < 2 {
        return Err(Error::Config(format!(
            "cannot split {n} samples at fraction {train_fraction}"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher–Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let cut = ((n as f64) * train_fraction).round() as usize;
    let cut = cut.clamp(1, n - 1);
    let test = indices.split_off(cut);
    Ok((indices, test))
}
