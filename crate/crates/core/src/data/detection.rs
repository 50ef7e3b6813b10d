use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// COCO classes accepted as containers.
pub const ALLOWED_CLASSES: [&str; 4] = ["cup", "book", "wine glass", "bottle"];

/// Axis-aligned box in pixels. `x`/`y` may lie outside the image for raw
/// detector output; see [`BBox::clip`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: i64, y: i64, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    /// Intersection with a `width` x `height` image, `None` when empty.
    pub fn clip(&self, width: u32, height: u32) -> Option<BBox> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = (self.x + i64::from(self.w)).min(i64::from(width));
        let y1 = (self.y + i64::from(self.h)).min(i64::from(height));
        (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, (x1 - x0) as u32, (y1 - y0) as u32))
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }
}

/// Binary mask over a bbox, run-length encoded row-major, starting with a
/// background run (which may be zero).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RleMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl RleMask {
    pub fn new(width: u32, height: u32, runs: Vec<u32>) -> Result<Self> {
        let total: u64 = runs.iter().map(|&r| u64::from(r)).sum();
        let expected = u64::from(width) * u64::from(height);
        if total != expected {
            return Err(Error::InvalidInput(format!(
                "run lengths sum to {total}, expected {width}x{height} = {expected}"
            )));
        }
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    pub fn encode(width: u32, height: u32, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), width as usize * height as usize);
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &m in mask {
            if m != current {
                runs.push(len);
                current = m;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        Self {
            width,
            height,
            runs,
        }
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.width as usize * self.height as usize);
        for (i, &r) in self.runs.iter().enumerate() {
            out.extend(std::iter::repeat(i % 2 == 1).take(r as usize));
        }
        out
    }

    /// Foreground pixels as (column, row) relative to the bbox origin.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = u64::from(self.width);
        let mut start = 0u64;
        self.runs.iter().enumerate().flat_map(move |(i, &r)| {
            let s = start;
            start += u64::from(r);
            let range = if i % 2 == 1 { s..s + u64::from(r) } else { 0..0 };
            range.map(move |p| ((p % w) as u32, (p / w) as u32))
        })
    }

    pub fn foreground_count(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| u64::from(r)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub frame_index: usize,
    pub class_label: String,
    pub confidence: f64,
    pub bbox: BBox,
    pub mask: RleMask,
    /// (W, H) of the frame the detector ran on.
    pub image_dims: (u32, u32),
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    frame: usize,
    class: String,
    score: f64,
    bbox: [i64; 4],
    rle: Vec<u32>,
    img: [u32; 2],
}

impl DetectionRecord {
    fn from_wire(w: WireRecord) -> std::result::Result<Self, String> {
        if !(0.0..=1.0).contains(&w.score) {
            return Err(format!("score {} outside [0, 1]", w.score));
        }
        let [x, y, bw, bh] = w.bbox;
        if bw <= 0 || bh <= 0 || bw > i64::from(u32::MAX) || bh > i64::from(u32::MAX) {
            return Err(format!("bbox size {bw}x{bh} must be positive"));
        }
        let [iw, ih] = w.img;
        if iw == 0 || ih == 0 {
            return Err("image dimensions must be positive".into());
        }
        let bbox = BBox::new(x, y, bw as u32, bh as u32);
        if bbox.clip(iw, ih).is_none() {
            return Err(format!("bbox {:?} does not intersect the {iw}x{ih} image", w.bbox));
        }
        let mask = RleMask::new(bbox.w, bbox.h, w.rle).map_err(|e| match e {
            Error::InvalidInput(m) => m,
            other => other.to_string(),
        })?;
        Ok(Self {
            frame_index: w.frame,
            class_label: w.class,
            confidence: w.score,
            bbox,
            mask,
            image_dims: (iw, ih),
        })
    }

    fn to_wire(&self) -> WireRecord {
        WireRecord {
            frame: self.frame_index,
            class: self.class_label.clone(),
            score: self.confidence,
            bbox: [
                self.bbox.x,
                self.bbox.y,
                i64::from(self.bbox.w),
                i64::from(self.bbox.h),
            ],
            rle: self.mask.runs.clone(),
            img: [self.image_dims.0, self.image_dims.1],
        }
    }
}

/// Contents of one `detections.jsonl`, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    pub records: Vec<DetectionRecord>,
    /// Records dropped because their class is not a container class.
    pub rejected: usize,
}

impl DetectionSet {
    pub fn by_frame(&self) -> BTreeMap<usize, Vec<&DetectionRecord>> {
        let mut out: BTreeMap<usize, Vec<&DetectionRecord>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.frame_index).or_default().push(r);
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(&r.to_wire()).expect("serializable record"));
            s.push('\n');
        }
        s
    }
}

pub fn parse_detections(text: &str) -> Result<DetectionSet> {
    let mut set = DetectionSet::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = n + 1;
        let wire: WireRecord = serde_json::from_str(line).map_err(|e| Error::Detection {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !ALLOWED_CLASSES.contains(&wire.class.as_str()) {
            log::warn!("line {line_no}: dropping detection of class {:?}", wire.class);
            set.rejected += 1;
            continue;
        }
        let record = DetectionRecord::from_wire(wire).map_err(|reason| Error::Detection {
            line: line_no,
            reason,
        })?;
        set.records.push(record);
    }
    Ok(set)
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text)
}

pub fn save_detections(set: &DetectionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_jsonl()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(class: &str, rle: &str) -> String {
        format!(
            r#"{{"frame":3,"class":"{class}","score":0.9,"bbox":[10,20,3,2],"rle":{rle},"img":[64,48]}}"#
        )
    }

    #[test]
    fn keeps_container_classes() {
        let text = format!("{}\n{}\n", line("cup", "[1,4,1]"), line("bottle", "[0,6]"));
        let set = parse_detections(&text).unwrap();
        assert_eq!(set.records.len(), 2);
        assert_eq!(set.rejected, 0);
        assert_eq!(set.records[0].mask.foreground_count(), 4);
        assert_eq!(set.by_frame()[&3].len(), 2);
    }

    #[test]
    fn drops_non_container_class() {
        let text = format!("{}\n{}\n", line("person", "[6]"), line("wine glass", "[6]"));
        let set = parse_detections(&text).unwrap();
        assert_eq!(set.rejected, 1);
        assert_eq!(set.records.len(), 1);
    }

    #[test]
    fn class_filter_is_case_sensitive() {
        let set = parse_detections(&line("Cup", "[6]")).unwrap();
        assert_eq!(set.rejected, 1);
    }

    #[test]
    fn short_rle_names_line() {
        let text = format!("{}\n{}\n", line("cup", "[6]"), line("cup", "[1,4]"));
        let err = parse_detections(&text).unwrap_err();
        assert!(matches!(err, Error::Detection { line: 2, .. }), "{err}");
    }

    #[test]
    fn bbox_outside_image_is_rejected() {
        let text = r#"{"frame":0,"class":"cup","score":0.5,"bbox":[100,20,3,2],"rle":[6],"img":[64,48]}"#;
        assert!(parse_detections(text).is_err());
    }

    #[test]
    fn foreground_matches_decode() {
        let m = RleMask::new(3, 2, vec![1, 2, 2, 1]).unwrap();
        assert_eq!(m.decode(), vec![false, true, true, false, false, true]);
        let fg: Vec<_> = m.foreground().collect();
        assert_eq!(fg, vec![(1, 0), (2, 0), (2, 1)]);
    }

    #[test]
    fn clip_intersects_image() {
        let b = BBox::new(-5, 10, 20, 100);
        assert_eq!(b.clip(64, 48), Some(BBox::new(0, 10, 15, 38)));
        assert_eq!(BBox::new(70, 0, 5, 5).clip(64, 48), None);
    }

    #[test]
    fn resave_is_byte_identical() {
        let text = format!("{}\n{}\n", line("cup", "[1,4,1]"), line("book", "[0,6]"));
        let set = parse_detections(&text).unwrap();
        assert_eq!(set.to_jsonl(), text);
    }

    proptest! {
        #[test]
        fn rle_roundtrip(w in 1u32..12, h in 1u32..12, seed in any::<u64>()) {
            let mask: Vec<bool> = (0..w * h)
                .map(|i| (seed.rotate_left(i % 64) ^ u64::from(i)) & 3 == 0)
                .collect();
            let rle = RleMask::encode(w, h, &mask);
            prop_assert_eq!(rle.decode(), mask.clone());
            let again = RleMask::new(w, h, rle.runs().to_vec()).unwrap();
            prop_assert_eq!(again.foreground_count() as usize, mask.iter().filter(|&&m| m).count());
        }
    }
}
