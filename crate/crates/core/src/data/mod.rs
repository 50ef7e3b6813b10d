//! Domain types shared across the pipeline plus the on-disk formats for
//! recordings, detections and normalization statistics.

mod archive;
mod detection;
mod norm;
mod recording;

use std::fmt;
use std::str::FromStr;

pub use archive::{ArchiveRecording, PatchArchive, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use detection::{
    load_detections, parse_detections, save_detections, BBox, DetectionRecord, DetectionSet,
    RleMask, ALLOWED_CLASSES,
};
pub use norm::{denormalize, normalize, NormStats, Quantity, Range};
pub use recording::{
    load_recording, save_recording, DepthFrame, RecordingBundle, RecordingMeta, RgbFrame,
};

use crate::error::Error;
use crate::patch::FloatImage;

/// Container category of a recording. CCM groups its containers into three
/// categories; anything else is `Unknown`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContainerClass {
    Cup,
    Glass,
    Box,
    Unknown,
}

impl ContainerClass {
    pub const KNOWN: [ContainerClass; 3] = [Self::Cup, Self::Glass, Self::Box];
    pub const ALL: [ContainerClass; 4] = [Self::Cup, Self::Glass, Self::Box, Self::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cup => "cup",
            Self::Glass => "glass",
            Self::Box => "box",
            Self::Unknown => "unknown",
        }
    }
}

impl fmt::Display for ContainerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContainerClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cup" => Ok(Self::Cup),
            "glass" => Ok(Self::Glass),
            "box" => Ok(Self::Box),
            "unknown" => Ok(Self::Unknown),
            other => Err(Error::UnknownClass(other.to_string())),
        }
    }
}

/// A detected container patch chosen for mass prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub recording_id: String,
    pub frame_index: usize,
    /// Detection box after clipping to the image.
    pub bbox: BBox,
    pub detector_class: String,
    /// 112x112 RGB patch, values in [0, 1].
    pub patch: FloatImage,
    /// bbox width / image width.
    pub a: f64,
    /// bbox height / image height.
    pub b: f64,
    /// Average mask distance in meters.
    pub d: f64,
}

impl Candidate {
    pub fn features(&self) -> [f64; 3] {
        [self.a, self.b, self.d]
    }
}

/// Per-recording mass estimate. The estimate is absent exactly when no
/// candidate was found.
#[derive(Debug, Clone, PartialEq)]
pub struct MassPrediction {
    recording_id: String,
    estimate: Option<f64>,
    candidate_count: usize,
}

impl MassPrediction {
    pub fn new(recording_id: impl Into<String>, estimate: f64, candidate_count: usize) -> Self {
        assert!(candidate_count > 0, "an estimate needs at least one candidate");
        Self {
            recording_id: recording_id.into(),
            estimate: Some(estimate),
            candidate_count,
        }
    }

    pub fn missing(recording_id: impl Into<String>) -> Self {
        Self {
            recording_id: recording_id.into(),
            estimate: None,
            candidate_count: 0,
        }
    }

    /// Prediction read back from a predictions file, where the candidate
    /// count is not stored.
    pub fn from_file(recording_id: impl Into<String>, estimate: Option<f64>) -> Self {
        Self {
            recording_id: recording_id.into(),
            candidate_count: usize::from(estimate.is_some()),
            estimate,
        }
    }

    pub fn recording_id(&self) -> &str {
        &self.recording_id
    }

    pub fn estimate(&self) -> Option<f64> {
        self.estimate
    }

    pub fn candidate_count(&self) -> usize {
        self.candidate_count
    }
}
