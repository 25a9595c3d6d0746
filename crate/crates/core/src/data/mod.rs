//! Dataset types, landmark normalization, the synthetic gesture generator,
//! stream windowing, and the on-disk formats.

pub mod dataset;
pub mod landmarks;
pub mod synth;
pub mod volume;
pub mod window;

pub use dataset::{
    read_landmarks_jsonl, read_volume_set, stratified_split, write_landmarks_jsonl,
    write_volume_set, Dataset, VolumeSet,
};
pub use landmarks::{normalize_landmarks, LandmarkFrame, LandmarkSequence, FRAME_FEATURES};
pub use synth::{
    default_templates, generate_dataset, generate_gesture, rest_frame, GestureTemplate,
};
pub use volume::{render_volume, FrameVolume, DEFAULT_BLOB_SIGMA};
pub use window::window_stream;
