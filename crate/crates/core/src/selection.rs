//! Average mask distance per detection and K-nearest candidate selection
//! over a whole recording.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::data::{BBox, Candidate, DepthFrame, DetectionRecord, DetectionSet, RecordingBundle, RgbFrame};
use crate::error::{Error, Result};
use crate::patch::{compute_aspect_ratios, FloatImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    /// Maximum number of candidates kept per recording (K).
    pub k_max: usize,
    /// Only frames with `index % frame_stride == 0` are considered (n).
    pub frame_stride: usize,
    /// Detections whose mask has fewer valid depth pixels than this
    /// fraction of its area get no distance.
    pub min_valid_depth_fraction: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k_max: 5,
            frame_stride: 1,
            min_valid_depth_fraction: 0.1,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 || self.frame_stride < 1 {
            return Err(Error::InvalidInput(format!(
                "k_max ({}) and frame_stride ({}) must be >= 1",
                self.k_max, self.frame_stride
            )));
        }
        if !(0.0..=1.0).contains(&self.min_valid_depth_fraction) {
            return Err(Error::InvalidInput(format!(
                "min_valid_depth_fraction {} outside [0, 1]",
                self.min_valid_depth_fraction
            )));
        }
        Ok(())
    }
}

/// Mean depth in meters over the mask's foreground pixels inside the image,
/// ignoring missing (zero) depth. `None` when the clipped mask is empty or
/// too few of its pixels carry depth.
pub fn average_mask_distance(
    depth: &DepthFrame,
    detection: &DetectionRecord,
    min_valid_fraction: f64,
) -> Option<f64> {
    let (w, h) = depth.dimensions();
    let (bx, by) = (detection.bbox.x, detection.bbox.y);
    let mut area = 0u64;
    let mut valid = 0u64;
    let mut sum_mm = 0u64;
    for (cx, cy) in detection.mask.foreground() {
        let x = bx + i64::from(cx);
        let y = by + i64::from(cy);
        if x < 0 || y < 0 || x >= i64::from(w) || y >= i64::from(h) {
            continue;
        }
        area += 1;
        let mm = depth.get_pixel(x as u32, y as u32).0[0];
        if mm > 0 {
            valid += 1;
            sum_mm += u64::from(mm);
        }
    }
    if area == 0 || valid == 0 || (valid as f64) < min_valid_fraction * area as f64 {
        return None;
    }
    Some(sum_mm as f64 / valid as f64 / 1000.0)
}

/// A detection with its average mask distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDetection {
    pub detection: DetectionRecord,
    pub distance: f64,
}

/// Selection order: distance, then frame index, then bbox x (then y, w, h
/// so that distinct detections never compare equal).
pub fn selection_order(a: &ScoredDetection, b: &ScoredDetection) -> Ordering {
    let key = |s: &ScoredDetection| {
        let bb = s.detection.bbox;
        (s.detection.frame_index, bb.x, bb.y, bb.w, bb.h)
    };
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| key(a).cmp(&key(b)))
}

/// The `k_max` nearest detections in ascending selection order.
pub fn select_k_nearest(mut scored: Vec<ScoredDetection>, config: &SelectionConfig) -> Vec<ScoredDetection> {
    let k = config.k_max.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, selection_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(selection_order);
    scored
}

/// Scores every detection on the considered frames, keeps the K nearest
/// across the recording and cuts their patches with `patch_fn`.
pub fn extract_candidates<F>(
    bundle: &RecordingBundle,
    detections: &DetectionSet,
    config: &SelectionConfig,
    patch_fn: F,
) -> Result<Vec<Candidate>>
where
    F: Fn(&RgbFrame, BBox) -> Result<FloatImage>,
{
    config.validate()?;
    let dims = bundle.dims();
    let considered: Vec<&DetectionRecord> = detections
        .records
        .iter()
        .filter(|d| d.frame_index % config.frame_stride == 0)
        .collect();
    for d in &considered {
        if d.frame_index >= bundle.len() {
            return Err(Error::InvalidInput(format!(
                "recording {}: detection on frame {} but only {} frames",
                bundle.id(),
                d.frame_index,
                bundle.len()
            )));
        }
        if d.image_dims != dims {
            return Err(Error::InvalidInput(format!(
                "recording {}: detection for a {:?} image, frames are {:?}",
                bundle.id(),
                d.image_dims,
                dims
            )));
        }
    }
    let scored: Vec<ScoredDetection> = considered
        .par_iter()
        .filter_map(|d| {
            average_mask_distance(
                &bundle.depth_frames[d.frame_index],
                d,
                config.min_valid_depth_fraction,
            )
            .map(|distance| ScoredDetection {
                detection: (*d).clone(),
                distance,
            })
        })
        .collect();

    select_k_nearest(scored, config)
        .into_iter()
        .map(|s| {
            let bbox = s
                .detection
                .bbox
                .clip(dims.0, dims.1)
                .expect("validated detections intersect the image");
            let (a, b) = compute_aspect_ratios(bbox, dims);
            let patch = patch_fn(&bundle.rgb_frames[s.detection.frame_index], bbox)?;
            Ok(Candidate {
                recording_id: bundle.id().to_string(),
                frame_index: s.detection.frame_index,
                bbox,
                detector_class: s.detection.class_label.clone(),
                patch,
                a,
                b,
                d: s.distance,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ContainerClass, RecordingMeta, RleMask};
    use crate::patch::crop_pad_resize;
    use image::{Luma, Rgb};
    use proptest::prelude::*;

    fn det(frame: usize, bbox: BBox, mask: Vec<bool>) -> DetectionRecord {
        DetectionRecord {
            frame_index: frame,
            class_label: "cup".into(),
            confidence: 0.9,
            bbox,
            mask: RleMask::encode(bbox.w, bbox.h, &mask),
            image_dims: (8, 6),
        }
    }

    fn full(frame: usize, bbox: BBox) -> DetectionRecord {
        det(frame, bbox, vec![true; bbox.area() as usize])
    }

    fn scored(frame: usize, x: i64, distance: f64) -> ScoredDetection {
        ScoredDetection {
            detection: full(frame, BBox::new(x, 0, 1, 1)),
            distance,
        }
    }

    #[test]
    fn uniform_depth() {
        let depth = DepthFrame::from_pixel(8, 6, Luma([1500]));
        let d = average_mask_distance(&depth, &full(0, BBox::new(1, 1, 3, 2)), 0.1);
        assert_eq!(d, Some(1.5));
    }

    #[test]
    fn mean_over_mask_only() {
        let mut depth = DepthFrame::from_pixel(8, 6, Luma([9000]));
        depth.put_pixel(0, 0, Luma([1000]));
        depth.put_pixel(1, 0, Luma([2000]));
        depth.put_pixel(2, 0, Luma([3000]));
        let d = det(0, BBox::new(0, 0, 4, 1), vec![true, true, true, false]);
        assert_eq!(average_mask_distance(&depth, &d, 0.1), Some(2.0));
    }

    #[test]
    fn missing_depth_is_excluded() {
        let mut depth = DepthFrame::new(8, 6);
        depth.put_pixel(1, 0, Luma([2000]));
        depth.put_pixel(2, 0, Luma([4000]));
        let d = full(0, BBox::new(0, 0, 3, 1));
        assert_eq!(average_mask_distance(&depth, &d, 0.1), Some(3.0));
        // 2 valid out of 3 is below a 70% floor
        assert_eq!(average_mask_distance(&depth, &d, 0.7), None);
    }

    #[test]
    fn mask_outside_image_is_clipped() {
        let depth = DepthFrame::from_pixel(8, 6, Luma([800]));
        let d = full(0, BBox::new(6, 4, 4, 4));
        assert_eq!(average_mask_distance(&depth, &d, 0.1), Some(0.8));
        let empty = det(0, BBox::new(6, 4, 4, 4), {
            let mut m = vec![false; 16];
            m[15] = true; // only pixel (9, 7), off-image
            m
        });
        assert_eq!(average_mask_distance(&depth, &empty, 0.1), None);
    }

    #[test]
    fn keeps_five_smallest() {
        let input: Vec<_> = [0.9, 0.3, 1.2, 0.5, 2.0, 0.1, 0.7]
            .iter()
            .enumerate()
            .map(|(i, &d)| scored(i, 0, d))
            .collect();
        let out = select_k_nearest(input, &SelectionConfig::default());
        let d: Vec<f64> = out.iter().map(|s| s.distance).collect();
        assert_eq!(d, vec![0.1, 0.3, 0.5, 0.7, 0.9]);
    }

    #[test]
    fn fewer_than_k_keeps_all() {
        let input = vec![scored(0, 0, 1.0), scored(1, 0, 0.5), scored(2, 0, 2.0)];
        assert_eq!(select_k_nearest(input, &SelectionConfig::default()).len(), 3);
        assert!(select_k_nearest(Vec::new(), &SelectionConfig::default()).is_empty());
    }

    #[test]
    fn distance_tie_prefers_earlier_frame() {
        let cfg = SelectionConfig {
            k_max: 2,
            ..SelectionConfig::default()
        };
        let input = vec![scored(9, 0, 1.2), scored(0, 0, 0.4), scored(4, 0, 1.2)];
        let out = select_k_nearest(input, &cfg);
        assert_eq!(out[1].detection.frame_index, 4);
        let cfg = SelectionConfig {
            k_max: 1,
            ..SelectionConfig::default()
        };
        let out = select_k_nearest(vec![scored(3, 7, 1.0), scored(3, 2, 1.0)], &cfg);
        assert_eq!(out[0].detection.bbox.x, 2);
    }

    fn bundle(frames: usize) -> RecordingBundle {
        let meta = RecordingMeta {
            id: "r".into(),
            width: 8,
            height: 6,
            class: ContainerClass::Cup,
            container_id: None,
            true_mass: Some(10.0),
        };
        let rgb = vec![RgbFrame::from_pixel(8, 6, Rgb([200, 100, 50])); frames];
        let depth = vec![DepthFrame::from_pixel(8, 6, Luma([900])); frames];
        RecordingBundle::new(meta, rgb, depth).unwrap()
    }

    #[test]
    fn single_detection_single_candidate() {
        let set = DetectionSet {
            records: vec![full(0, BBox::new(2, 1, 4, 3))],
            rejected: 0,
        };
        let c = extract_candidates(&bundle(1), &set, &SelectionConfig::default(), crop_pad_resize)
            .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].d, 0.9);
        assert_eq!((c[0].a, c[0].b), (0.5, 0.5));
        assert_eq!(c[0].patch.width(), 112);
    }

    #[test]
    fn stride_skips_frames() {
        let set = DetectionSet {
            records: (0..6).map(|f| full(f, BBox::new(0, 0, 2, 2))).collect(),
            rejected: 0,
        };
        let cfg = SelectionConfig {
            k_max: 10,
            frame_stride: 2,
            ..SelectionConfig::default()
        };
        let c = extract_candidates(&bundle(6), &set, &cfg, crop_pad_resize).unwrap();
        let frames: Vec<usize> = c.iter().map(|c| c.frame_index).collect();
        assert_eq!(frames, vec![0, 2, 4]);
    }

    #[test]
    fn no_detections_no_candidates() {
        let c = extract_candidates(
            &bundle(2),
            &DetectionSet::default(),
            &SelectionConfig::default(),
            crop_pad_resize,
        )
        .unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn detection_past_last_frame_is_an_error() {
        let set = DetectionSet {
            records: vec![full(3, BBox::new(0, 0, 2, 2))],
            rejected: 0,
        };
        assert!(extract_candidates(&bundle(2), &set, &SelectionConfig::default(), crop_pad_resize)
            .is_err());
    }

    fn arb_scored() -> impl Strategy<Value = Vec<ScoredDetection>> {
        prop::collection::vec((0usize..6, 0i64..4, 0u8..5), 0..25).prop_map(|v| {
            v.into_iter()
                .map(|(frame, x, d)| scored(frame, x, 0.5 + f64::from(d) * 0.25))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn output_is_sorted_and_prefix_monotone(input in arb_scored(), k in 1usize..8) {
            let small = select_k_nearest(input.clone(), &SelectionConfig { k_max: k, ..SelectionConfig::default() });
            let large = select_k_nearest(input.clone(), &SelectionConfig { k_max: k + 3, ..SelectionConfig::default() });
            prop_assert_eq!(small.len(), k.min(input.len()));
            prop_assert!(small.windows(2).all(|w| w[0].distance <= w[1].distance));
            prop_assert_eq!(&large[..small.len()], &small[..]);
        }

        #[test]
        fn permutation_invariant(input in arb_scored(), k in 1usize..8, rot in 0usize..25) {
            let cfg = SelectionConfig { k_max: k, ..SelectionConfig::default() };
            let mut permuted = input.clone();
            permuted.reverse();
            if !permuted.is_empty() {
                let r = rot % permuted.len();
                permuted.rotate_left(r);
            }
            prop_assert_eq!(select_k_nearest(input, &cfg), select_k_nearest(permuted, &cfg));
        }
    }
}
