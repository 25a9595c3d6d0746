//! gesturebench-core: a from-scratch spatiotemporal gesture-classification
//! engine and benchmark harness.
//!
//! Two classifier families over the same synthetic gesture source — a
//! landmark-sequence LSTM and a frame-volume 3D CNN — plus reverse-mode
//! differentiation, Adam training, windowed streaming inference with
//! sentence assembly, and a latency/memory/parameter comparison report.

pub mod bench;
pub mod checkpoint;
pub mod cnn3d;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod lstm;
pub mod ops;
pub mod rng;
pub mod stream;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
