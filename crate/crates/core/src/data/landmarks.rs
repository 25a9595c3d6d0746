//! Hand-landmark frames: 21 tracked keypoints x (x, y, z) = 63 features.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_LANDMARKS: usize = 21;
pub const FRAME_FEATURES: usize = NUM_LANDMARKS * 3;
/// Landmark indices used as the normalization reference pair.
pub const WRIST: usize = 0;
pub const MIDDLE_MCP: usize = 9;

/// One normalized frame: wrist at the origin, |landmark 9 - landmark 0| = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkFrame(pub [f64; FRAME_FEATURES]);

impl LandmarkFrame {
    pub fn values(&self) -> &[f64; FRAME_FEATURES] {
        &self.0
    }

    pub fn landmark(&self, i: usize) -> [f64; 3] {
        [self.0[3 * i], self.0[3 * i + 1], self.0[3 * i + 2]]
    }
}

/// Translate the wrist to the origin and scale uniformly (z included) so the
/// wrist-to-middle-MCP distance is 1.
pub fn normalize_landmarks(raw: &[f64]) -> Result<LandmarkFrame> {
    if raw.len() != FRAME_FEATURES {
        return Err(Error::DimMismatch {
            op: "normalize_landmarks",
            axis: "features",
            expected: FRAME_FEATURES,
            got: raw.len(),
        });
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse {
            path: "<frame>".into(),
            msg: "landmark frame contains non-finite values".into(),
        });
    }
    let wrist = [raw[3 * WRIST], raw[3 * WRIST + 1], raw[3 * WRIST + 2]];
    let mcp = [
        raw[3 * MIDDLE_MCP],
        raw[3 * MIDDLE_MCP + 1],
        raw[3 * MIDDLE_MCP + 2],
    ];
    let dx = mcp[0] - wrist[0];
    let dy = mcp[1] - wrist[1];
    let dz = mcp[2] - wrist[2];
    let scale = (dx * dx + dy * dy + dz * dz).sqrt();
    if scale == 0.0 {
        return Err(Error::DegenerateFrame);
    }
    let mut out = [0.0; FRAME_FEATURES];
    for i in 0..NUM_LANDMARKS {
        for a in 0..3 {
            out[3 * i + a] = (raw[3 * i + a] - wrist[a]) / scale;
        }
    }
    Ok(LandmarkFrame(out))
}

/// A labeled T x 63 sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSequence {
    pub frames: Vec<LandmarkFrame>,
    pub label: usize,
}

impl LandmarkSequence {
    pub fn new(frames: Vec<LandmarkFrame>, label: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(LandmarkSequence { frames, label })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Pack into a `[T, 63]` tensor for the models.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.frames.len() * FRAME_FEATURES);
        for frame in &self.frames {
            data.extend_from_slice(frame.values());
        }
        Tensor::new(vec![self.frames.len(), FRAME_FEATURES], data).expect("consistent dims")
    }
}

/// Pack a run of frames (a window) into a `[len, 63]` tensor.
pub fn frames_to_tensor(frames: &[LandmarkFrame]) -> Tensor {
    let mut data = Vec::with_capacity(frames.len() * FRAME_FEATURES);
    for frame in frames {
        data.extend_from_slice(frame.values());
    }
    Tensor::new(vec![frames.len(), FRAME_FEATURES], data).expect("consistent dims")
}
