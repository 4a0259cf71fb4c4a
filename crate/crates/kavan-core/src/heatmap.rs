//! Facial-keypoint supervision heatmaps.
//!
//! Estimated facial keypoints are rendered as confidence-weighted 2-D
//! Gaussians on a source grid (64×64 by default), overlaid, downsampled to
//! the 7×7 attention grid with adaptive bin averaging, and normalized with a
//! spatial softmax. The result is the target mask the attention module is
//! trained against.
//!
//! Everything here is a pure function over plain [`Array`]s — heatmaps are
//! training targets and never require gradients.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Array, Tape, Tensor};

/// Side of the attention grid; spatial cells = `GRID_SIDE`².
pub const GRID_SIDE: usize = 7;
/// Number of spatial attention cells.
pub const GRID_CELLS: usize = GRID_SIDE * GRID_SIDE;
/// Down-weighting applied to the confidence of lip-group keypoints.
///
/// Lip keypoints are much denser than the rest of the face in the 70-point
/// topology, so their Gaussians would otherwise dominate the overlay.
pub const LIP_CONFIDENCE_WEIGHT: f64 = 0.5;

/// Keypoint group tag; only the lips/other distinction matters here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointGroup {
    Lips,
    Other,
}

/// One estimated facial keypoint in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Normalized column in `[0, 1]`.
    pub x: f64,
    /// Normalized row in `[0, 1]`.
    pub y: f64,
    /// Estimator confidence in `[0, 1]`.
    pub conf: f64,
    pub group: KeypointGroup,
}

impl Keypoint {
    /// Coordinates outside `[0, 1]` are permitted (off-frame estimates) but
    /// flagged so callers can report them.
    pub fn is_off_frame(&self) -> bool {
        !(0.0..=1.0).contains(&self.x) || !(0.0..=1.0).contains(&self.y)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(Error::Contract(format!(
                "keypoint confidence {} outside [0, 1]",
                self.conf
            )));
        }
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err(Error::Contract(
                "keypoint coordinates must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// All keypoints estimated for one sampled frame; may be empty (no face
/// detected, cartoon frames, ...).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame {
    pub points: Vec<Keypoint>,
}

impl KeypointFrame {
    pub fn validate(&self) -> Result<()> {
        self.points.iter().try_for_each(Keypoint::validate)
    }
}

/// Parameters of the keypoint-to-heatmap pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapConfig {
    /// Gaussian width in source-grid pixel units.
    pub sigma: f64,
    /// Side of the source grid the Gaussians are rendered on.
    pub source_resolution: usize,
    /// Multiplier applied to the downsampled grid before the softmax.
    /// Overlay magnitudes depend on keypoint count; this compensates.
    pub scale: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            sigma: 5.0,
            source_resolution: 64,
            scale: 1.0,
        }
    }
}

/// Softmax-normalized 7×7 target mask for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisionHeatmap {
    /// 7×7 grid; strictly positive, sums to 1.
    pub grid: Array,
    /// Side of the source grid it was rendered from.
    pub source_resolution: usize,
}

impl SupervisionHeatmap {
    /// The 49 cells in row-major order.
    pub fn cells(&self) -> &[f64] {
        &self.grid.data
    }

    /// Constant `[49]` tensor for use in the keypoint loss.
    pub fn to_tensor(&self, tape: &Tape) -> Tensor {
        tape.constant(Array::vector(&self.grid.data))
    }
}

/// Renders the confidence-weighted Gaussian overlay of `points` onto a
/// `resolution`×`resolution` grid.
///
/// Keypoint coordinates map to pixel centers by `x · (resolution − 1)`;
/// `sigma` is in the same pixel units. Lip-group confidences are
/// pre-multiplied by [`LIP_CONFIDENCE_WEIGHT`]. Gaussians are evaluated
/// densely (no truncation radius), so off-frame keypoints still contribute
/// their in-frame tails. An empty keypoint list yields an all-zero grid.
pub fn render_gaussians(points: &[Keypoint], sigma: f64, resolution: usize) -> Result<Array> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if resolution < 2 {
        return Err(Error::Config(format!(
            "resolution must be at least 2, got {resolution}"
        )));
    }
    let mut grid = Array::zeros(&[resolution, resolution]);
    let denom = 2.0 * sigma * sigma;
    let extent = (resolution - 1) as f64;
    for point in points {
        let weight = match point.group {
            KeypointGroup::Lips => point.conf * LIP_CONFIDENCE_WEIGHT,
            KeypointGroup::Other => point.conf,
        };
        if weight == 0.0 {
            // Skipping entirely keeps zero-confidence keypoints bit-exact
            // no-ops even in the face of -0.0 and rounding.
            continue;
        }
        let center_row = point.y * extent;
        let center_col = point.x * extent;
        for row in 0..resolution {
            let dr = row as f64 - center_row;
            for col in 0..resolution {
                let dc = col as f64 - center_col;
                let value = weight * (-(dr * dr + dc * dc) / denom).exp();
                grid.data[row * resolution + col] += value;
            }
        }
    }
    Ok(grid)
}

/// Half-open spans of the adaptive bins mapping a `src`-cell axis onto `dst`
/// bins: bin `i` covers `[⌊i·src/dst⌋, ⌊(i+1)·src/dst⌋)`.
///
/// 64 source cells over 7 bins give bin sizes of 9 or 10; the layout is the
/// contract shared between heatmap downsampling and the patch encoder.
pub fn bin_edges(src: usize, dst: usize) -> Vec<(usize, usize)> {
    (0..dst)
        .map(|i| (i * src / dst, (i + 1) * src / dst))
        .collect()
}

/// Downsamples a square grid onto 7×7 by adaptive bin averaging.
pub fn downsample(grid: &Array) -> Result<Array> {
    if grid.rank() != 2 || grid.shape[0] != grid.shape[1] {
        return Err(Error::Contract(format!(
            "downsample requires a square grid, got shape {:?}",
            grid.shape
        )));
    }
    let side = grid.shape[0];
    if side < GRID_SIDE {
        return Err(Error::ShapeMismatch {
            op: "downsample",
            lhs: grid.shape.clone(),
            rhs: vec![GRID_SIDE, GRID_SIDE],
        });
    }
    let edges = bin_edges(side, GRID_SIDE);
    let mut out = Array::zeros(&[GRID_SIDE, GRID_SIDE]);
    for (i, &(r0, r1)) in edges.iter().enumerate() {
        for (j, &(c0, c1)) in edges.iter().enumerate() {
            let mut sum = 0.0;
            for r in r0..r1 {
                for c in c0..c1 {
                    sum += grid.data[r * side + c];
                }
            }
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            out.set2(i, j, sum / count);
        }
    }
    Ok(out)
}

/// Spatial softmax over the 49 cells.
///
/// An all-zero grid (no keypoints) normalizes to the exactly uniform 1/49
/// mask, which is the supervision the cartoon / keypoint-free case gets.
pub fn normalize(grid: &Array) -> Result<SupervisionHeatmap> {
    if grid.shape != [GRID_SIDE, GRID_SIDE] {
        return Err(Error::ShapeMismatch {
            op: "normalize",
            lhs: grid.shape.clone(),
            rhs: vec![GRID_SIDE, GRID_SIDE],
        });
    }
    if !grid.is_finite() {
        return Err(Error::NonFinite { op: "normalize" });
    }
    let max = grid.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = grid.data.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let data: Vec<f64> = exps.into_iter().map(|e| e / sum).collect();
    Ok(SupervisionHeatmap {
        grid: Array {
            shape: vec![GRID_SIDE, GRID_SIDE],
            data,
        },
        source_resolution: 64,
    })
}

/// Full per-frame pipeline: overlay Gaussians on the source grid, downsample
/// to 7×7, then softmax-normalize. The order is fixed.
pub fn build_supervision(
    frames: &[KeypointFrame],
    cfg: &HeatmapConfig,
) -> Result<Vec<SupervisionHeatmap>> {
    frames
        .iter()
        .map(|frame| {
            let rendered =
                render_gaussians(&frame.points, cfg.sigma, cfg.source_resolution)?;
            let mut coarse = downsample(&rendered)?;
            if cfg.scale != 1.0 {
                for v in &mut coarse.data {
                    *v *= cfg.scale;
                }
            }
            let mut heatmap = normalize(&coarse)?;
            heatmap.source_resolution = cfg.source_resolution;
            Ok(heatmap)
        })
        .collect()
}

/// Writes a grid as an 8-bit ASCII PGM image, scaled so the largest cell is
/// white. Intended for eyeballing masks and heatmaps.
pub fn write_pgm(grid: &Array, path: &Path) -> Result<()> {
    if grid.rank() != 2 {
        return Err(Error::Contract(format!(
            "pgm output requires a rank-2 grid, got shape {:?}",
            grid.shape
        )));
    }
    let (rows, cols) = (grid.shape[0], grid.shape[1]);
    let max = grid.data.iter().copied().fold(0.0_f64, f64::max);
    let mut out = String::with_capacity(rows * cols * 4 + 32);
    out.push_str(&format!("P2\n{cols} {rows}\n255\n"));
    for r in 0..rows {
        let row: Vec<String> = (0..cols)
            .map(|c| {
                let v = grid.get2(r, c);
                let level = if max > 0.0 {
                    ((v / max) * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                };
                level.to_string()
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp(x: f64, y: f64, conf: f64, group: KeypointGroup) -> Keypoint {
        Keypoint { x, y, conf, group }
    }

    fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> KeypointFrame {
        KeypointFrame {
            points: (0..n)
                .map(|i| {
                    kp(
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                        if i % 5 == 0 {
                            KeypointGroup::Lips
                        } else {
                            KeypointGroup::Other
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn centered_keypoint_peaks_at_grid_center() {
        let grid =
            render_gaussians(&[kp(0.5, 0.5, 1.0, KeypointGroup::Other)], 5.0, 65).unwrap();
        let best = grid.argmax();
        assert_eq!((best / 65, best % 65), (32, 32));
    }

    #[test]
    fn zero_confidence_keypoint_is_bit_exact_noop() {
        let base = vec![
            kp(0.3, 0.4, 0.8, KeypointGroup::Other),
            kp(0.6, 0.6, 0.5, KeypointGroup::Lips),
        ];
        let mut with_ghost = base.clone();
        with_ghost.push(kp(0.9, 0.1, 0.0, KeypointGroup::Other));

        let a = render_gaussians(&base, 5.0, 64).unwrap();
        let b = render_gaussians(&with_ghost, 5.0, 64).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn lip_downweight_halves_contribution() {
        // A lips keypoint at conf 1 must contribute exactly like an
        // other-group keypoint at conf 0.5.
        let lips = render_gaussians(&[kp(0.5, 0.5, 1.0, KeypointGroup::Lips)], 5.0, 64).unwrap();
        let other =
            render_gaussians(&[kp(0.5, 0.5, 0.5, KeypointGroup::Other)], 5.0, 64).unwrap();
        for (a, b) in lips.data.iter().zip(&other.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn render_rejects_bad_parameters() {
        assert!(matches!(
            render_gaussians(&[], 0.0, 64),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            render_gaussians(&[], 5.0, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_keypoints_render_all_zero() {
        let grid = render_gaussians(&[], 5.0, 64).unwrap();
        assert!(grid.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_edges_for_64_over_7_are_size_9_or_10() {
        let edges = bin_edges(64, 7);
        assert_eq!(edges.first(), Some(&(0, 9)));
        assert_eq!(edges.last(), Some(&(54, 64)));
        let sizes: Vec<usize> = edges.iter().map(|(a, b)| b - a).collect();
        assert!(sizes.iter().all(|&s| s == 9 || s == 10));
        assert_eq!(sizes.iter().sum::<usize>(), 64);
    }

    #[test]
    fn downsample_preserves_constants() {
        let grid = Array::filled(&[64, 64], 3.25);
        let out = downsample(&grid).unwrap();
        for &v in &out.data {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn downsample_is_local() {
        let mut grid = Array::zeros(&[64, 64]);
        grid.data[0] = 7.0; // source cell (0, 0)
        let out = downsample(&grid).unwrap();
        for (i, &v) in out.data.iter().enumerate() {
            if i == 0 {
                assert!(v > 0.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn downsample_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let data: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grid = Array::new(vec![64, 64], data).unwrap();
        let out = downsample(&grid).unwrap();

        // Independent nested-loop bin-average oracle.
        for i in 0..7 {
            for j in 0..7 {
                let (r0, r1) = (i * 64 / 7, (i + 1) * 64 / 7);
                let (c0, c1) = (j * 64 / 7, (j + 1) * 64 / 7);
                let mut sum = 0.0;
                let mut count = 0.0;
                for r in r0..r1 {
                    for c in c0..c1 {
                        sum += grid.get2(r, c);
                        count += 1.0;
                    }
                }
                assert!((out.get2(i, j) - sum / count).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downsample_rejects_small_grids() {
        let grid = Array::zeros(&[6, 6]);
        assert!(matches!(
            downsample(&grid),
            Err(Error::ShapeMismatch { op: "downsample", .. })
        ));
    }

    #[test]
    fn normalize_of_zero_grid_is_exactly_uniform() {
        let hm = normalize(&Array::zeros(&[7, 7])).unwrap();
        for &v in hm.cells() {
            assert_eq!(v, 1.0 / 49.0);
        }
    }

    #[test]
    fn normalize_is_monotone_at_the_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let data: Vec<f64> = (0..49).map(|_| rng.random_range(-2.0..2.0)).collect();
            let grid = Array::new(vec![7, 7], data.clone()).unwrap();
            let hm = normalize(&grid).unwrap();
            let pre_max = Array::vector(&data).argmax();
            assert_eq!(hm.grid.argmax(), pre_max);
        }
    }

    #[test]
    fn normalize_rejects_nan() {
        let mut grid = Array::zeros(&[7, 7]);
        grid.data[3] = f64::NAN;
        assert!(matches!(
            normalize(&grid),
            Err(Error::NonFinite { op: "normalize" })
        ));
    }

    #[test]
    fn keypoint_free_frame_yields_uniform_heatmap() {
        let frames = vec![KeypointFrame::default()];
        let out = build_supervision(&frames, &HeatmapConfig::default()).unwrap();
        for &v in out[0].cells() {
            assert_eq!(v, 1.0 / 49.0);
        }
    }

    #[test]
    fn all_low_confidence_frame_is_near_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut frame = random_frame(&mut rng, 12);
        for p in &mut frame.points {
            p.conf = 0.01;
        }
        let out = build_supervision(&[frame], &HeatmapConfig::default()).unwrap();
        let max = out[0].cells().iter().copied().fold(f64::MIN, f64::max);
        let min = out[0].cells().iter().copied().fold(f64::MAX, f64::min);
        assert!(max / min < 1.05, "ratio {}", max / min);
    }

    #[test]
    fn face_cluster_concentrates_mass() {
        // Ten keypoints scattered tightly around one face center: more than
        // half the mass must land in the 3×3 block around the peak cell.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (cx, cy) = (0.4, 0.55);
        let frame = KeypointFrame {
            points: (0..10)
                .map(|i| {
                    kp(
                        cx + rng.random_range(-0.05..0.05),
                        cy + rng.random_range(-0.05..0.05),
                        rng.random_range(0.8..1.0),
                        if i < 2 {
                            KeypointGroup::Lips
                        } else {
                            KeypointGroup::Other
                        },
                    )
                })
                .collect(),
        };
        let out = build_supervision(&[frame], &HeatmapConfig::default()).unwrap();
        let hm = &out[0];
        let peak = hm.grid.argmax();
        let (pr, pc) = (peak / 7, peak % 7);
        let mut mass = 0.0;
        for r in pr.saturating_sub(1)..=(pr + 1).min(6) {
            for c in pc.saturating_sub(1)..=(pc + 1).min(6) {
                mass += hm.grid.get2(r, c);
            }
        }
        assert!(mass > 0.5, "3×3 mass {mass}");
    }

    #[test]
    fn confidence_annealing_moves_monotonically_toward_removal() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for trial in 0..20 {
            let mut frame = random_frame(&mut rng, 8);
            for p in &mut frame.points {
                p.conf = rng.random_range(0.5..1.0);
            }
            let removed_idx = trial % frame.points.len();
            let mut without = frame.clone();
            without.points.remove(removed_idx);
            let target = build_supervision(&[without], &HeatmapConfig::default()).unwrap();

            let l2 = |a: &SupervisionHeatmap, b: &SupervisionHeatmap| -> f64 {
                a.cells()
                    .iter()
                    .zip(b.cells())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            };

            let base_conf = frame.points[removed_idx].conf;
            let mut prev = f64::INFINITY;
            for step in 0..=10 {
                let mut annealed = frame.clone();
                annealed.points[removed_idx].conf = base_conf * (1.0 - step as f64 / 10.0);
                let hm = build_supervision(&[annealed], &HeatmapConfig::default()).unwrap();
                let d = l2(&hm[0], &target[0]);
                assert!(
                    d <= prev + 1e-12,
                    "trial {trial} step {step}: distance rose from {prev} to {d}"
                );
                prev = d;
            }
            assert!(prev.abs() < 1e-15, "fully annealed distance {prev}");
        }
    }

    #[test]
    fn pipeline_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let frame = random_frame(&mut rng, 9);
        let a = build_supervision(&[frame.clone()], &HeatmapConfig::default()).unwrap();
        let b = build_supervision(&[frame], &HeatmapConfig::default()).unwrap();
        for (x, y) in a[0].cells().iter().zip(b[0].cells()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn pgm_dump_has_expected_header() {
        let dir = std::env::temp_dir().join("kavan-heatmap-pgm-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mask.pgm");
        let grid = normalize(&Array::zeros(&[7, 7])).unwrap().grid;
        write_pgm(&grid, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("P2\n7 7\n255\n"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn heatmaps_sum_to_one_with_positive_cells(
            seed in 0u64..5000,
            n_points in 0usize..20,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frame = random_frame(&mut rng, n_points);
            let out = build_supervision(&[frame], &HeatmapConfig::default()).unwrap();
            let total: f64 = out[0].cells().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(out[0].cells().iter().all(|&v| v > 0.0));
        }
    }
}
