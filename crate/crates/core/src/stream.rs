//! Streaming inference over incoming landmark frames: sliding window,
//! confidence gating, debounce, cooldown, and sentence assembly.
//!
//! Timing is frame-count based, never wall-clock, so a replayed stream
//! produces bit-identical events.

use serde::{Deserialize, Serialize};

use crate::data::landmarks::{
    frames_to_tensor, normalize_landmarks, LandmarkFrame, FRAME_FEATURES, WRIST,
};
use crate::error::{Error, Result};
use crate::lstm::LstmModel;
use crate::tensor::Tensor;
use crate::train::argmax;

/// Default class-to-character alphabet: A-Z then 0-9.
pub const FULL_CHARSET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub window_len: usize,
    /// Run the classifier every this many accepted frames.
    pub infer_every: usize,
    pub confidence_threshold: f64,
    /// Consecutive agreeing inferences required before an emit.
    pub stability_count: usize,
    /// Frames after an emit during which further emits are suppressed.
    pub cooldown_frames: usize,
    /// Class index -> character mapping; length must equal the model's
    /// class count.
    pub charset: String,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            window_len: 30,
            infer_every: 5,
            confidence_threshold: 0.7,
            stability_count: 3,
            cooldown_frames: 15,
            charset: FULL_CHARSET.to_string(),
        }
    }
}

impl StreamConfig {
    /// Defaults with the charset truncated to `classes` characters.
    pub fn for_classes(classes: usize) -> Result<Self> {
        let mut config = StreamConfig::default();
        config.charset = charset_for(classes)?;
        Ok(config)
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.window_len == 0
            || self.infer_every == 0
            || self.stability_count == 0
            || self.cooldown_frames == 0
        {
            return Err(Error::InvalidConfig(
                "stream window_len, infer_every, stability_count, cooldown_frames must all be >= 1"
                    .into(),
            ));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence threshold must be in (0, 1], got {}",
                self.confidence_threshold
            )));
        }
        let len = self.charset.chars().count();
        if len != classes {
            return Err(Error::InvalidConfig(format!(
                "charset has {len} characters but the model has {classes} classes"
            )));
        }
        Ok(())
    }
}

pub fn charset_for(classes: usize) -> Result<String> {
    if classes == 0 || classes > FULL_CHARSET.len() {
        return Err(Error::InvalidConfig(format!(
            "class count {classes} outside 1..={}",
            FULL_CHARSET.len()
        )));
    }
    Ok(FULL_CHARSET[..classes].to_string())
}

/// Events produced by the pipeline, in frame order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PredictionEvent {
    /// One inference result over the latest window.
    Candidate {
        class: usize,
        char: char,
        confidence: f64,
        at_frame: u64,
    },
    /// A debounced, confidence-gated character emission.
    Emit {
        class: usize,
        char: char,
        confidence: f64,
        at_frame: u64,
    },
    /// A malformed frame was dropped; the stream continues.
    Rejected { reason: String, at_frame: u64 },
}

impl PredictionEvent {
    pub fn at_frame(&self) -> u64 {
        match self {
            PredictionEvent::Candidate { at_frame, .. }
            | PredictionEvent::Emit { at_frame, .. }
            | PredictionEvent::Rejected { at_frame, .. } => *at_frame,
        }
    }
}

/// Anything that can classify a `[window_len, 63]` landmark window.
pub trait WindowClassifier {
    fn classify(&mut self, window: &Tensor) -> Result<(usize, f64)>;
    fn num_classes(&self) -> usize;
}

impl WindowClassifier for LstmModel {
    fn classify(&mut self, window: &Tensor) -> Result<(usize, f64)> {
        let probs = self.infer(window)?;
        let class = argmax(probs.data());
        Ok((class, probs.data()[class]))
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }
}

pub struct StreamPipeline<C: WindowClassifier> {
    config: StreamConfig,
    classifier: C,
    chars: Vec<char>,
    buffer: Vec<LandmarkFrame>,
    frames_pushed: u64,
    streak_class: Option<usize>,
    streak_len: usize,
    last_emit: Option<u64>,
}

impl<C: WindowClassifier> StreamPipeline<C> {
    pub fn new(config: StreamConfig, classifier: C) -> Result<Self> {
        config.validate(classifier.num_classes())?;
        let chars = config.charset.chars().collect();
        Ok(StreamPipeline {
            config,
            classifier,
            chars,
            buffer: Vec::new(),
            frames_pushed: 0,
            streak_class: None,
            streak_len: 0,
            last_emit: None,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    /// Feed one raw frame (63 floats). The frame is normalized defensively;
    /// malformed frames yield a `Rejected` event and are dropped from the
    /// buffer. Inference runs when the buffer holds a full window and the
    /// accepted-frame count is a multiple of `infer_every`.
    pub fn push_frame(&mut self, raw: &[f64]) -> Vec<PredictionEvent> {
        self.frames_pushed += 1;
        let at_frame = self.frames_pushed;
        let mut events = Vec::new();

        let frame = if raw.len() == FRAME_FEATURES && is_normalized(raw) {
            let mut values = [0.0; FRAME_FEATURES];
            values.copy_from_slice(raw);
            Ok(LandmarkFrame(values))
        } else {
            normalize_landmarks(raw)
        };
        let frame = match frame {
            Ok(f) => f,
            Err(e) => {
                events.push(PredictionEvent::Rejected {
                    reason: e.to_string(),
                    at_frame,
                });
                return events;
            }
        };

        self.buffer.push(frame);
        if self.buffer.len() > self.config.window_len {
            let excess = self.buffer.len() - self.config.window_len;
            self.buffer.drain(..excess);
        }
        if self.buffer.len() < self.config.window_len
            || self.frames_pushed % self.config.infer_every as u64 != 0
        {
            return events;
        }

        let window = frames_to_tensor(&self.buffer);
        let (class, confidence) = match self.classifier.classify(&window) {
            Ok(result) => result,
            Err(e) => {
                events.push(PredictionEvent::Rejected {
                    reason: format!("classifier failed: {e}"),
                    at_frame,
                });
                return events;
            }
        };
        let ch = self.chars.get(class).copied().unwrap_or('?');
        events.push(PredictionEvent::Candidate {
            class,
            char: ch,
            confidence,
            at_frame,
        });

        // Debounce: confident candidates extend a same-class streak; an
        // under-threshold or different-class candidate restarts it.
        if confidence >= self.config.confidence_threshold {
            if self.streak_class == Some(class) {
                self.streak_len += 1;
            } else {
                self.streak_class = Some(class);
                self.streak_len = 1;
            }
        } else {
            self.streak_class = None;
            self.streak_len = 0;
        }

        let cooldown_over = self
            .last_emit
            .map_or(true, |e| at_frame - e > self.config.cooldown_frames as u64);
        if self.streak_len >= self.config.stability_count && cooldown_over {
            events.push(PredictionEvent::Emit {
                class,
                char: ch,
                confidence,
                at_frame,
            });
            self.last_emit = Some(at_frame);
            self.streak_class = None;
            self.streak_len = 0;
        }
        events
    }
}

fn is_normalized(raw: &[f64]) -> bool {
    raw[3 * WRIST] == 0.0
        && raw[3 * WRIST + 1] == 0.0
        && raw[3 * WRIST + 2] == 0.0
        && raw.iter().all(|v| v.is_finite())
}

/// Concatenate emit-event characters in order; candidates are ignored.
pub fn assemble_sentence(events: &[PredictionEvent]) -> String {
    events
        .iter()
        .filter_map(|e| match e {
            PredictionEvent::Emit { char, .. } => Some(*char),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Test oracle: returns a scripted sequence of (class, confidence).
    pub struct ScriptedClassifier {
        pub outcomes: Vec<(usize, f64)>,
        pub cursor: usize,
        pub classes: usize,
    }

    impl WindowClassifier for ScriptedClassifier {
        fn classify(&mut self, _window: &Tensor) -> Result<(usize, f64)> {
            let out = self.outcomes[self.cursor % self.outcomes.len()];
            self.cursor += 1;
            Ok(out)
        }

        fn num_classes(&self) -> usize {
            self.classes
        }
    }

    fn pipeline(outcomes: Vec<(usize, f64)>) -> StreamPipeline<ScriptedClassifier> {
        let config = StreamConfig {
            charset: charset_for(4).unwrap(),
            ..StreamConfig::default()
        };
        StreamPipeline::new(
            config,
            ScriptedClassifier {
                outcomes,
                cursor: 0,
                classes: 4,
            },
        )
        .unwrap()
    }

    fn zero_frame() -> [f64; FRAME_FEATURES] {
        // Wrist at origin, landmark 9 at unit distance: already normalized.
        let mut v = [0.0; FRAME_FEATURES];
        v[27] = 1.0; // landmark 9 x
        v
    }

    #[test]
    fn no_inference_before_window_fills() {
        let mut p = pipeline(vec![(2, 1.0)]);
        let frame = zero_frame();
        let mut events = Vec::new();
        for _ in 0..29 {
            events.extend(p.push_frame(&frame));
        }
        assert!(events.is_empty());
    }

    #[test]
    fn steady_class_emits_once_then_cooldown_suppresses() {
        let mut p = pipeline(vec![(2, 1.0)]);
        let frame = zero_frame();
        let mut events = Vec::new();
        for _ in 0..60 {
            events.extend(p.push_frame(&frame));
        }
        let emits: Vec<&PredictionEvent> = events
            .iter()
            .filter(|e| matches!(e, PredictionEvent::Emit { .. }))
            .collect();
        // Candidates at 30, 35, 40 -> first emit at 40. Streak resets, so
        // candidates at 45, 50, 55 rebuild it; cooldown blocks frame 55
        // (55 - 40 = 15 is not > 15) and the emit lands at 60.
        assert_eq!(emits.len(), 2, "events: {events:?}");
        assert_eq!(emits[0].at_frame(), 40);
        assert_eq!(emits[1].at_frame(), 60);
    }

    #[test]
    fn alternating_classes_never_emit() {
        let mut p = pipeline(vec![(0, 1.0), (1, 1.0)]);
        let frame = zero_frame();
        let mut events = Vec::new();
        for _ in 0..200 {
            events.extend(p.push_frame(&frame));
        }
        assert!(events
            .iter()
            .all(|e| !matches!(e, PredictionEvent::Emit { .. })));
    }

    #[test]
    fn low_confidence_breaks_the_streak() {
        // Two confident candidates, one weak, repeating: stability 3 never reached.
        let mut p = pipeline(vec![(1, 0.9), (1, 0.95), (1, 0.3)]);
        let frame = zero_frame();
        let mut events = Vec::new();
        for _ in 0..300 {
            events.extend(p.push_frame(&frame));
        }
        assert!(events
            .iter()
            .all(|e| !matches!(e, PredictionEvent::Emit { .. })));
    }

    #[test]
    fn malformed_frame_rejected_and_stream_continues() {
        let mut p = pipeline(vec![(2, 1.0)]);
        let bad = [f64::NAN; FRAME_FEATURES];
        let events = p.push_frame(&bad);
        assert!(matches!(events[0], PredictionEvent::Rejected { .. }));
        let frame = zero_frame();
        let mut rest = Vec::new();
        for _ in 0..60 {
            rest.extend(p.push_frame(&frame));
        }
        assert!(rest
            .iter()
            .any(|e| matches!(e, PredictionEvent::Emit { .. })));
    }

    #[test]
    fn sentence_assembly_concatenates_emits_only() {
        let events = vec![
            PredictionEvent::Candidate {
                class: 0,
                char: 'A',
                confidence: 0.9,
                at_frame: 30,
            },
            PredictionEvent::Emit {
                class: 7,
                char: 'H',
                confidence: 0.9,
                at_frame: 40,
            },
            PredictionEvent::Emit {
                class: 4,
                char: 'E',
                confidence: 0.9,
                at_frame: 80,
            },
            PredictionEvent::Rejected {
                reason: "x".into(),
                at_frame: 81,
            },
            PredictionEvent::Emit {
                class: 1,
                char: 'L',
                confidence: 0.9,
                at_frame: 120,
            },
            PredictionEvent::Emit {
                class: 1,
                char: 'L',
                confidence: 0.9,
                at_frame: 160,
            },
            PredictionEvent::Emit {
                class: 11,
                char: 'O',
                confidence: 0.9,
                at_frame: 200,
            },
        ];
        assert_eq!(assemble_sentence(&events), "HELLO");
        assert_eq!(assemble_sentence(&[]), "");
    }

    #[test]
    fn replays_are_bit_identical() {
        let run = || {
            let mut p = pipeline(vec![(0, 0.9), (0, 0.95), (1, 0.8), (0, 0.99)]);
            let frame = zero_frame();
            let mut events = Vec::new();
            for _ in 0..120 {
                events.extend(p.push_frame(&frame));
            }
            events
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn event_json_wire_format() {
        let e = PredictionEvent::Emit {
            class: 2,
            char: 'C',
            confidence: 0.875,
            at_frame: 45,
        };
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"emit","class":2,"char":"C","confidence":0.875,"at_frame":45}"#
        );
        let back: PredictionEvent = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn charset_must_match_class_count() {
        let config = StreamConfig::default(); // 36 chars
        let c = ScriptedClassifier {
            outcomes: vec![(0, 1.0)],
            cursor: 0,
            classes: 4,
        };
        assert!(StreamPipeline::new(config, c).is_err());
    }
}
