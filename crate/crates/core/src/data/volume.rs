//! Frame volumes and the orthographic landmark-to-voxel renderer.

use crate::data::landmarks::{LandmarkSequence, NUM_LANDMARKS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BLOB_SIGMA: f64 = 1.5;
/// Normalized landmark coordinates map from [-WORLD_EXTENT, WORLD_EXTENT]
/// onto the pixel grid.
const WORLD_EXTENT: f64 = 2.0;

/// A labeled T x H x W x C voxel clip with intensities in [0, 1]. Stored as
/// 32-bit floats on disk, widened to 64-bit in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameVolume {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
    pub label: usize,
}

impl FrameVolume {
    pub fn new(dims: [usize; 4], data: Vec<f64>, label: usize) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "volume dims must be positive, got {dims:?}"
            )));
        }
        let numel: usize = dims.iter().product();
        if data.len() != numel {
            return Err(Error::InvalidConfig(format!(
                "volume data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig(
                "volume intensities must lie in [0, 1]".into(),
            ));
        }
        Ok(FrameVolume { dims, data, label })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.dims.to_vec(), self.data.clone()).expect("consistent dims")
    }
}

/// Orthographic projection of each frame's landmarks onto an H x W grid;
/// every landmark deposits a Gaussian blob of `blob_sigma_px` pixels, summed
/// and clamped to [0, 1]. Deterministic.
pub fn render_volume(
    seq: &LandmarkSequence,
    dims: [usize; 4],
    blob_sigma_px: f64,
) -> Result<FrameVolume> {
    let [t_len, height, width, channels] = dims;
    if channels != 1 {
        return Err(Error::InvalidConfig(format!(
            "renderer emits single-channel intensity volumes, got C={channels}"
        )));
    }
    if seq.len() != t_len {
        return Err(Error::DimMismatch {
            op: "render_volume",
            axis: "time",
            expected: t_len,
            got: seq.len(),
        });
    }
    if !(blob_sigma_px.is_finite() && blob_sigma_px > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "blob sigma must be positive, got {blob_sigma_px}"
        )));
    }
    let mut data = vec![0.0f64; t_len * height * width];
    let reach = 3.0 * blob_sigma_px;
    let inv_two_sigma_sq = 1.0 / (2.0 * blob_sigma_px * blob_sigma_px);
    for (t, frame) in seq.frames.iter().enumerate() {
        let plane = &mut data[t * height * width..(t + 1) * height * width];
        for li in 0..NUM_LANDMARKS {
            let [x, y, _z] = frame.landmark(li);
            let px = (x + WORLD_EXTENT) / (2.0 * WORLD_EXTENT) * (width - 1) as f64;
            let py = (y + WORLD_EXTENT) / (2.0 * WORLD_EXTENT) * (height - 1) as f64;
            if px < -reach
                || px > (width - 1) as f64 + reach
                || py < -reach
                || py > (height - 1) as f64 + reach
            {
                continue;
            }
            let row_lo = ((py - reach).ceil().max(0.0)) as usize;
            let row_hi = ((py + reach).floor().min((height - 1) as f64)) as usize;
            let col_lo = ((px - reach).ceil().max(0.0)) as usize;
            let col_hi = ((px + reach).floor().min((width - 1) as f64)) as usize;
            for row in row_lo..=row_hi {
                for col in col_lo..=col_hi {
                    let dr = row as f64 - py;
                    let dc = col as f64 - px;
                    plane[row * width + col] += (-(dr * dr + dc * dc) * inv_two_sigma_sq).exp();
                }
            }
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    FrameVolume::new(dims, data, seq.label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::landmarks::{LandmarkFrame, FRAME_FEATURES};

    fn frame_at(x: f64, y: f64) -> LandmarkFrame {
        // All 21 landmarks collapsed onto one point; fine for render tests.
        let mut v = [0.0; FRAME_FEATURES];
        for i in 0..NUM_LANDMARKS {
            v[3 * i] = x;
            v[3 * i + 1] = y;
        }
        LandmarkFrame(v)
    }

    fn lone_landmark_at(x: f64, y: f64) -> LandmarkFrame {
        // Landmark 0 at the target, the rest parked far outside any grid.
        let mut v = [50.0; FRAME_FEATURES];
        v[0] = x;
        v[1] = y;
        v[2] = 0.0;
        LandmarkFrame(v)
    }

    #[test]
    fn landmarks_far_outside_grid_leave_frame_empty() {
        let seq = LandmarkSequence {
            frames: vec![frame_at(50.0, 50.0)],
            label: 0,
        };
        let vol = render_volume(&seq, [1, 16, 16, 1], DEFAULT_BLOB_SIGMA).unwrap();
        assert!(vol.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_landmark_peaks_at_center_and_decays_radially() {
        let seq = LandmarkSequence {
            frames: vec![lone_landmark_at(0.0, 0.0)],
            label: 0,
        };
        // 17x17 grid puts world (0,0) exactly on pixel (8, 8).
        let vol = render_volume(&seq, [1, 17, 17, 1], DEFAULT_BLOB_SIGMA).unwrap();
        let at = |r: usize, c: usize| vol.data[r * 17 + c];
        let center = at(8, 8);
        assert!(center > 0.9, "center {center}");
        for ring in 1..4 {
            assert!(at(8, 8 + ring) < at(8, 8 + ring - 1));
            assert!(at(8 + ring, 8) < at(8 + ring - 1, 8));
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let seq = LandmarkSequence {
            frames: vec![frame_at(0.2, -0.3), frame_at(0.25, -0.25)],
            label: 3,
        };
        let a = render_volume(&seq, [2, 24, 24, 1], DEFAULT_BLOB_SIGMA).unwrap();
        let b = render_volume(&seq, [2, 24, 24, 1], DEFAULT_BLOB_SIGMA).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label, 3);
    }

    #[test]
    fn time_mismatch_rejected() {
        let seq = LandmarkSequence {
            frames: vec![frame_at(0.0, 0.0)],
            label: 0,
        };
        assert!(render_volume(&seq, [2, 8, 8, 1], DEFAULT_BLOB_SIGMA).is_err());
    }

    #[test]
    fn values_stay_in_unit_interval() {
        // Overlapping landmarks sum well past 1 before the clamp.
        let seq = LandmarkSequence {
            frames: vec![frame_at(0.0, 0.0)],
            label: 0,
        };
        let vol = render_volume(&seq, [1, 9, 9, 1], 3.0).unwrap();
        assert!(vol.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(vol.data.iter().any(|&v| v == 1.0));
    }
}
