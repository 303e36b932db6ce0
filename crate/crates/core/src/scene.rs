//! Observation sequences and labelled multi-source scenes.

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One detection box at one frame. `label` is the ground-truth source the box
/// was generated from, when known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub label: Option<usize>,
}

impl Detection {
    pub fn new(bbox: BBox) -> Self {
        Detection { bbox, label: None }
    }

    pub fn labelled(bbox: BBox, label: usize) -> Self {
        Detection {
            bbox,
            label: Some(label),
        }
    }
}

/// Per-frame, variable-size sets of detections. Frames may be empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSequence {
    frames: Vec<Vec<Detection>>,
}

impl ObservationSequence {
    pub fn new(frames: Vec<Vec<Detection>>) -> Result<Self> {
        for (t, frame) in frames.iter().enumerate() {
            for (k, d) in frame.iter().enumerate() {
                if !d.bbox.is_valid() {
                    return Err(Error::DegenerateObservation(format!(
                        "detection {k} at frame {t} has non-positive extent or non-finite coordinates"
                    )));
                }
            }
        }
        Ok(ObservationSequence { frames })
    }

    pub fn from_boxes(frames: Vec<Vec<BBox>>) -> Result<Self> {
        Self::new(
            frames
                .into_iter()
                .map(|f| f.into_iter().map(Detection::new).collect())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[Detection] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Vec<Detection>] {
        &self.frames
    }

    pub fn count(&self, t: usize) -> usize {
        self.frames[t].len()
    }

    /// Frames `range`, re-indexed from zero.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ObservationSequence {
        ObservationSequence {
            frames: self.frames[range].to_vec(),
        }
    }

    pub(crate) fn frames_mut(&mut self) -> &mut Vec<Vec<Detection>> {
        &mut self.frames
    }
}

/// A multi-source test sequence: ground-truth tracks plus the detections
/// derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub truth: Vec<Vec<BBox>>,
    pub obs: ObservationSequence,
}

impl Scene {
    pub fn num_frames(&self) -> usize {
        self.obs.len()
    }

    pub fn num_sources(&self) -> usize {
        self.truth.len()
    }
}
