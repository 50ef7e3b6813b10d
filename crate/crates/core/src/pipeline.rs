//! Directory-level glue: extraction over a recordings tree, prediction from
//! an archive, and training samples.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{load_detections, load_recording, ArchiveRecording, Candidate, MassPrediction, PatchArchive};
use crate::error::{Error, Result};
use crate::massnet::{MassModel, TrainSample};
use crate::patch::crop_pad_resize;
use crate::selection::{extract_candidates, SelectionConfig};

pub const DETECTIONS_FILE: &str = "detections.jsonl";

/// Subdirectories of `root` holding a `meta.txt`, sorted by name.
pub fn list_recording_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join("meta.txt").is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// `<detections_root>/<id>/detections.jsonl`, or the recording directory
/// itself when no separate root is given.
pub fn detections_path(detections_root: Option<&Path>, recording_dir: &Path, id: &str) -> PathBuf {
    match detections_root {
        Some(root) => root.join(id).join(DETECTIONS_FILE),
        None => recording_dir.join(DETECTIONS_FILE),
    }
}

/// Selects candidates for every recording under `recordings_root`.
pub fn extract_tree(
    recordings_root: &Path,
    detections_root: Option<&Path>,
    config: &SelectionConfig,
) -> Result<PatchArchive> {
    let mut archive = PatchArchive::default();
    let mut seen = HashSet::new();
    for dir in list_recording_dirs(recordings_root)? {
        let bundle = load_recording(&dir)?;
        if !seen.insert(bundle.id().to_string()) {
            return Err(Error::InvalidInput(format!("duplicate recording id {}", bundle.id())));
        }
        let dets = load_detections(detections_path(detections_root, &dir, bundle.id()))?;
        if dets.records.is_empty() {
            log::warn!("recording {}: no detections", bundle.id());
        }
        let cands = extract_candidates(&bundle, &dets, config, crop_pad_resize)?;
        log::debug!("recording {}: {} candidates", bundle.id(), cands.len());
        archive.recordings.push(ArchiveRecording::from(&bundle.meta));
        archive.candidates.extend(cands);
    }
    Ok(archive)
}

/// Candidates grouped by recording id.
pub fn group_candidates(archive: &PatchArchive) -> BTreeMap<&str, Vec<&Candidate>> {
    let mut map: BTreeMap<&str, Vec<&Candidate>> = archive.recordings.iter().map(|r| (r.id.as_str(), Vec::new())).collect();
    for c in &archive.candidates {
        map.entry(c.recording_id.as_str()).or_default().push(c);
    }
    map
}

/// One prediction per recording of `ids` (all archive recordings when
/// `None`), sorted by recording id.
pub fn predict_archive(model: &MassModel, archive: &PatchArchive, ids: Option<&[String]>) -> Result<Vec<MassPrediction>> {
    let groups = group_candidates(archive);
    let wanted: Option<HashSet<&str>> = ids.map(|v| v.iter().map(String::as_str).collect());
    groups
        .into_iter()
        .filter(|(id, _)| wanted.as_ref().map_or(true, |w| w.contains(id)))
        .map(|(id, cands)| {
            let owned: Vec<Candidate> = cands.into_iter().cloned().collect();
            model.predict_recording(id, &owned)
        })
        .collect()
}

/// Training samples from the candidates of `ids`; recordings without a
/// true mass are skipped.
pub fn training_samples(archive: &PatchArchive, ids: &[String]) -> Vec<TrainSample> {
    let mass: BTreeMap<&str, f64> = archive
        .recordings
        .iter()
        .filter_map(|r| r.true_mass.map(|m| (r.id.as_str(), m)))
        .collect();
    let groups = group_candidates(archive);
    let mut out = Vec::new();
    for id in ids {
        let (Some(&m), Some(cands)) = (mass.get(id.as_str()), groups.get(id.as_str())) else {
            continue;
        };
        out.extend(cands.iter().map(|c| TrainSample {
            patch: c.patch.clone(),
            features: c.features(),
            mass: m,
        }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    #[test]
    fn extract_synthetic_tree() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            recordings: 4,
            frames: 2,
            width: 160,
            height: 120,
            focal_px: 120.0,
            ..SynthSpec::default()
        };
        let records = generate(&spec, dir.path()).unwrap();
        let archive = extract_tree(dir.path(), None, &SelectionConfig::default()).unwrap();
        assert_eq!(archive.recordings.len(), 4);
        assert_eq!(archive.candidates.len(), 8);
        let ids: Vec<String> = records.iter().map(|r| r.recording_id.clone()).collect();
        let samples = training_samples(&archive, &ids[..2]);
        assert_eq!(samples.len(), 4);
        assert_eq!(samples[0].mass, records[0].mass);

        // empty detection file: recording kept, no candidates
        fs::write(dir.path().join(&ids[3]).join(DETECTIONS_FILE), "").unwrap();
        let archive = extract_tree(dir.path(), None, &SelectionConfig::default()).unwrap();
        assert_eq!(archive.recordings.len(), 4);
        assert_eq!(archive.candidates_of(&ids[3]).count(), 0);
        assert_eq!(group_candidates(&archive)[ids[3].as_str()].len(), 0);
    }
}
