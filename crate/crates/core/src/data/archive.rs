//! Candidate archive written by `extract` and read by `train`.
//!
//! ```text
//! "MCPATCH1" | u32 version
//! u32 recordings | per recording: id, class, container id ("" if none),
//!                  u8 has mass, f64 mass
//! u32 candidates | per candidate: u32 recording index, u32 frame,
//!                  i64 x, i64 y, u32 w, u32 h, detector class,
//!                  f64 a, b, d, 3 x 112 x 112 f32 (CHW)
//! u32 CRC-32
//! ```
//! Strings are a u32 byte length followed by UTF-8.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{BBox, Candidate, ContainerClass, RecordingMeta};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::patch::{FloatImage, PATCH_SIZE};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"MCPATCH1";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveRecording {
    pub id: String,
    pub class: ContainerClass,
    pub container_id: Option<String>,
    pub true_mass: Option<f64>,
}

impl From<&RecordingMeta> for ArchiveRecording {
    fn from(m: &RecordingMeta) -> Self {
        Self {
            id: m.id.clone(),
            class: m.class,
            container_id: m.container_id.clone(),
            true_mass: m.true_mass,
        }
    }
}

/// Every processed recording (also those without candidates) and the
/// selected candidates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchArchive {
    pub recordings: Vec<ArchiveRecording>,
    pub candidates: Vec<Candidate>,
}

impl PatchArchive {
    pub fn candidates_of<'a>(&'a self, recording_id: &'a str) -> impl Iterator<Item = &'a Candidate> + 'a {
        self.candidates.iter().filter(move |c| c.recording_id == recording_id)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let index: HashMap<&str, u32> = self
            .recordings
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i as u32))
            .collect();
        let mut w = Writer::default();
        w.bytes(ARCHIVE_MAGIC);
        w.u32(ARCHIVE_VERSION);
        w.u32(self.recordings.len() as u32);
        for r in &self.recordings {
            w.str(&r.id);
            w.str(r.class.as_str());
            w.str(r.container_id.as_deref().unwrap_or(""));
            w.u8(u8::from(r.true_mass.is_some()));
            w.f64(r.true_mass.unwrap_or(0.0));
        }
        w.u32(self.candidates.len() as u32);
        for c in &self.candidates {
            let &ri = index
                .get(c.recording_id.as_str())
                .ok_or_else(|| Error::UnknownRecording(c.recording_id.clone()))?;
            if c.patch.width() != PATCH_SIZE || c.patch.height() != PATCH_SIZE {
                return Err(Error::shape(
                    "archive patch",
                    &[PATCH_SIZE, PATCH_SIZE],
                    &[c.patch.height(), c.patch.width()],
                ));
            }
            w.u32(ri);
            w.u32(c.frame_index as u32);
            w.i64(c.bbox.x);
            w.i64(c.bbox.y);
            w.u32(c.bbox.w);
            w.u32(c.bbox.h);
            w.str(&c.detector_class);
            w.f64(c.a);
            w.f64(c.b);
            w.f64(c.d);
            w.f32s(c.patch.data());
        }
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "patch archive");
        if r.take(8)? != ARCHIVE_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let n = r.u32()? as usize;
        let mut recordings = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let id = r.str()?;
            let class = r.str()?.parse()?;
            let container = r.str()?;
            let has_mass = r.u8()? != 0;
            let mass = r.f64()?;
            recordings.push(ArchiveRecording {
                id,
                class,
                container_id: (!container.is_empty()).then_some(container),
                true_mass: has_mass.then_some(mass),
            });
        }
        let n = r.u32()? as usize;
        let mut candidates = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let ri = r.u32()? as usize;
            let rec = recordings
                .get(ri)
                .ok_or_else(|| Error::Integrity(format!("candidate refers to recording {ri}")))?;
            let frame_index = r.u32()? as usize;
            let bbox = BBox::new(r.i64()?, r.i64()?, r.u32()?, r.u32()?);
            let detector_class = r.str()?;
            let (a, b, d) = (r.f64()?, r.f64()?, r.f64()?);
            let mut data = vec![0.0; 3 * PATCH_SIZE * PATCH_SIZE];
            r.f32s(&mut data)?;
            candidates.push(Candidate {
                recording_id: rec.id.clone(),
                frame_index,
                bbox,
                detector_class,
                patch: FloatImage::from_chw(PATCH_SIZE, PATCH_SIZE, data),
                a,
                b,
                d,
            });
        }
        r.finish()?;
        Ok(Self { recordings, candidates })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
