//! Synthetic RGB-D recordings with planted containers whose mass follows a
//! known law of fill luminance, relative size and distance.

use std::fs;
use std::path::Path;

use image::{Luma, Rgb};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    save_detections, save_recording, BBox, ContainerClass, DepthFrame, DetectionRecord, DetectionSet,
    RecordingBundle, RecordingMeta, RgbFrame, RleMask,
};
use crate::error::{Error, Result};
use crate::eval::{save_truth, TruthRecord};
use crate::patch::{sample_seed, FloatImage};

const BACKGROUND_DEPTH_MM: u16 = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub recordings: usize,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    /// Inclusive range of containers per frame; the first is the target.
    pub containers_per_frame: [usize; 2],
    /// Target distance range in meters.
    pub distance_m: [f64; 2],
    /// Target distances are rounded to this step (meters).
    pub distance_step_m: f64,
    pub width_m: [f64; 2],
    pub height_m: [f64; 2],
    pub focal_px: f64,
    /// Rec.601 luminance range of the fill colors.
    pub luminance: [f64; 2],
    /// Fraction of depth pixels set to 0 (missing) per frame.
    pub missing_depth: f64,
    /// Standard deviation of additive mass noise, grams.
    pub noise_sigma: f64,
    /// `mass = w0 + w1 * luminance + w2 * a + w3 * b + w4 * d`, clipped to
    /// [10, 500] g.
    pub law: [f64; 5],
    /// Container instances per category (for fold construction).
    pub instances_per_class: usize,
    pub id_prefix: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            recordings: 10,
            frames: 3,
            width: 1280,
            height: 720,
            containers_per_frame: [1, 1],
            distance_m: [0.5, 1.5],
            distance_step_m: 0.001,
            width_m: [0.06, 0.12],
            height_m: [0.08, 0.18],
            focal_px: 900.0,
            luminance: [0.15, 0.85],
            missing_depth: 0.05,
            noise_sigma: 0.0,
            law: [50.0, 200.0, 100.0, 100.0, -30.0],
            instances_per_class: 3,
            id_prefix: "syn".into(),
        }
    }
}

impl SynthSpec {
    pub fn parse_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("synth spec: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("synth spec: {m}")));
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0] > 0.0;
        if self.recordings == 0 || self.frames == 0 {
            return bad("recordings and frames must be >= 1");
        }
        if self.width < 16 || self.height < 16 {
            return bad("image must be at least 16x16");
        }
        let [cmin, cmax] = self.containers_per_frame;
        if cmin < 1 || cmax < cmin || cmax > 3 {
            return bad("containers_per_frame must lie within 1..=3");
        }
        if !ordered(self.distance_m) || self.distance_m[1] >= f64::from(BACKGROUND_DEPTH_MM) / 1000.0 {
            return bad("distance_m must be a positive range nearer than the 4 m background");
        }
        if !(self.distance_step_m >= 0.001) {
            return bad("distance_step_m must be >= 0.001");
        }
        if !ordered(self.width_m) || !ordered(self.height_m) || !(self.focal_px > 0.0) {
            return bad("sizes and focal length must be positive");
        }
        let [lmin, lmax] = self.luminance;
        if !(0.0..=1.0).contains(&lmin) || !(lmin..=1.0).contains(&lmax) {
            return bad("luminance range must lie within [0, 1]");
        }
        if !(0.0..1.0).contains(&self.missing_depth) || !(self.noise_sigma >= 0.0) {
            return bad("missing_depth must be in [0, 1) and noise_sigma >= 0");
        }
        if self.instances_per_class == 0 {
            return bad("instances_per_class must be >= 1");
        }
        Ok(())
    }

    pub fn recording_id(&self, index: usize) -> String {
        format!("{}{index:05}", self.id_prefix)
    }

    pub fn mass(&self, luminance: f64, a: f64, b: f64, d: f64) -> f64 {
        let w = self.law;
        w[0] + w[1] * luminance + w[2] * a + w[3] * b + w[4] * d
    }
}

/// Rec.601 luma of an RGB triple in [0, 1].
pub fn luminance(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// Luminance at the patch center, which always lies on the container fill.
pub fn patch_luminance(patch: &FloatImage) -> f64 {
    let p = patch.pixel(patch.width() / 2, patch.height() / 2);
    luminance([f64::from(p[0]), f64::from(p[1]), f64::from(p[2])])
}

/// Ground truth of the target container of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub recording_id: String,
    pub class: ContainerClass,
    pub container_id: String,
    pub mass: f64,
    pub luminance: f64,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub bbox: BBox,
}

impl SynthRecord {
    pub fn truth(&self) -> TruthRecord {
        TruthRecord {
            recording_id: self.recording_id.clone(),
            mass: self.mass,
            class: self.class,
        }
    }
}

/// Detector label used for each category.
pub fn detector_label(class: ContainerClass) -> &'static str {
    match class {
        ContainerClass::Cup | ContainerClass::Unknown => "cup",
        ContainerClass::Glass => "wine glass",
        ContainerClass::Box => "book",
    }
}

/// Row-major mask of the shape drawn in a `w` x `h` box.
fn shape_mask(class: ContainerClass, w: u32, h: u32) -> Vec<bool> {
    let (wf, hf) = (f64::from(w), f64::from(h));
    let mut m = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        let v = (f64::from(y) + 0.5) / hf;
        for x in 0..w {
            let u = (f64::from(x) + 0.5) / wf;
            let inside = match class {
                ContainerClass::Box => true,
                // cup: top width 1, bottom width 0.7
                ContainerClass::Cup | ContainerClass::Unknown => (u - 0.5).abs() <= 0.5 - 0.15 * v,
                // glass: bowl ellipse, stem, base ellipse
                ContainerClass::Glass => {
                    let bowl = ((u - 0.5) / 0.5).powi(2) + ((v - 0.3) / 0.3).powi(2) <= 1.0;
                    let stem = (u - 0.5).abs() <= 0.07f64.max(0.5 / wf) && (0.55..0.92).contains(&v);
                    let base = ((u - 0.5) / 0.4).powi(2) + ((v - 0.95) / 0.05).powi(2) <= 1.0;
                    bowl || stem || base
                }
            };
            m.push(inside);
        }
    }
    m
}

/// Crops a mask to its tight bounding box: `(dx, dy, w, h, mask)`.
fn tighten(mask: &[bool], w: u32, h: u32) -> (u32, u32, u32, u32, Vec<bool>) {
    let on = |x: u32, y: u32| mask[(y * w + x) as usize];
    let rows: Vec<u32> = (0..h).filter(|&y| (0..w).any(|x| on(x, y))).collect();
    let cols: Vec<u32> = (0..w).filter(|&x| (0..h).any(|y| on(x, y))).collect();
    let (y0, y1) = (rows[0], *rows.last().expect("non-empty"));
    let (x0, x1) = (cols[0], *cols.last().expect("non-empty"));
    let (tw, th) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut out = Vec::with_capacity((tw * th) as usize);
    for y in y0..=y1 {
        for x in x0..=x1 {
            out.push(on(x, y));
        }
    }
    (x0, y0, tw, th, out)
}

struct Planted {
    class: ContainerClass,
    bbox: BBox,
    mask: Vec<bool>,
    color: Rgb<u8>,
    depth_mm: u16,
    confidence: f64,
}

fn draw_color<R: Rng>(rng: &mut R, range: [f64; 2]) -> Rgb<u8> {
    loop {
        let c: [u8; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let l = luminance(c.map(|v| f64::from(v) / 255.0));
        if (range[0]..=range[1]).contains(&l) {
            return Rgb(c);
        }
    }
}

fn overlaps(a: BBox, b: BBox, gap: i64) -> bool {
    a.x - gap < b.x + i64::from(b.w)
        && b.x - gap < a.x + i64::from(a.w)
        && a.y - gap < b.y + i64::from(b.h)
        && b.y - gap < a.y + i64::from(a.h)
}

fn plant<R: Rng>(
    spec: &SynthSpec,
    rng: &mut R,
    class: ContainerClass,
    distance: f64,
    taken: &[BBox],
) -> Option<Planted> {
    let depth_mm = (distance * 1000.0).round() as u16;
    let d = f64::from(depth_mm) / 1000.0;
    let max_w = spec.width - 2;
    let max_h = spec.height - 2;
    let w = ((spec.focal_px * rng.gen_range(spec.width_m[0]..=spec.width_m[1]) / d).round() as u32).clamp(2, max_w);
    let h = ((spec.focal_px * rng.gen_range(spec.height_m[0]..=spec.height_m[1]) / d).round() as u32).clamp(2, max_h);
    let color = draw_color(rng, spec.luminance);
    let confidence = rng.gen_range(0.5f64..1.0);
    let (dx, dy, tw, th, mask) = tighten(&shape_mask(class, w, h), w, h);
    for _ in 0..50 {
        let x = rng.gen_range(0..=spec.width - w) as i64;
        let y = rng.gen_range(0..=spec.height - h) as i64;
        let bbox = BBox::new(x + i64::from(dx), y + i64::from(dy), tw, th);
        if taken.iter().all(|t| !overlaps(*t, bbox, 4)) {
            return Some(Planted {
                class,
                bbox,
                mask,
                color,
                depth_mm,
                confidence,
            });
        }
    }
    None
}

/// Renders recording `index` of `spec` in memory.
pub fn render_recording(spec: &SynthSpec, index: usize) -> Result<(RecordingBundle, DetectionSet, SynthRecord)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, index as u64, 0));
    let class = ContainerClass::KNOWN[index % 3];
    let instance = (index / 3) % spec.instances_per_class;
    let id = spec.recording_id(index);

    let step = spec.distance_step_m;
    let raw = rng.gen_range(spec.distance_m[0]..=spec.distance_m[1]);
    let target_d = ((raw / step).round() * step).clamp(spec.distance_m[0], spec.distance_m[1]);
    let target = plant(spec, &mut rng, class, target_d, &[])
        .expect("the first container always fits an empty frame");
    let n = rng.gen_range(spec.containers_per_frame[0]..=spec.containers_per_frame[1]);
    let mut planted = vec![target];
    for _ in 1..n {
        let dclass = ContainerClass::KNOWN[rng.gen_range(0..3)];
        let dd = (target_d + rng.gen_range(0.3..1.5)).min(3.8);
        let taken: Vec<BBox> = planted.iter().map(|p| p.bbox).collect();
        if let Some(p) = plant(spec, &mut rng, dclass, dd, &taken) {
            planted.push(p);
        }
    }

    let (w, h) = (spec.width, spec.height);
    let mut rgb = RgbFrame::from_fn(w, h, |_, y| {
        let v = (70 + 80 * y / h) as u8;
        Rgb([v, v, v])
    });
    let mut depth = DepthFrame::from_pixel(w, h, Luma([BACKGROUND_DEPTH_MM]));
    for p in &planted {
        for (i, &on) in p.mask.iter().enumerate() {
            if on {
                let x = p.bbox.x as u32 + i as u32 % p.bbox.w;
                let y = p.bbox.y as u32 + i as u32 / p.bbox.w;
                rgb.put_pixel(x, y, p.color);
                depth.put_pixel(x, y, Luma([p.depth_mm]));
            }
        }
    }

    let mut rgb_frames = Vec::with_capacity(spec.frames);
    let mut depth_frames = Vec::with_capacity(spec.frames);
    let mut records = Vec::new();
    for f in 0..spec.frames {
        let mut frame_rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, index as u64, 1 + f as u64));
        let mut d = depth.clone();
        for px in d.pixels_mut() {
            if frame_rng.gen_bool(spec.missing_depth) {
                px.0[0] = 0;
            }
        }
        rgb_frames.push(rgb.clone());
        depth_frames.push(d);
        for p in &planted {
            records.push(DetectionRecord {
                frame_index: f,
                class_label: detector_label(p.class).to_string(),
                confidence: p.confidence,
                bbox: p.bbox,
                mask: RleMask::encode(p.bbox.w, p.bbox.h, &p.mask),
                image_dims: (w, h),
            });
        }
    }

    let t = &planted[0];
    let a = f64::from(t.bbox.w) / f64::from(w);
    let b = f64::from(t.bbox.h) / f64::from(h);
    let d = f64::from(t.depth_mm) / 1000.0;
    let lum = luminance(t.color.0.map(|v| f64::from(v) / 255.0));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, index as u64, u64::MAX));
    let noise = if spec.noise_sigma > 0.0 {
        Normal::new(0.0, spec.noise_sigma)
            .expect("validated sigma")
            .sample(&mut noise_rng)
    } else {
        0.0
    };
    let mass = (spec.mass(lum, a, b, d) + noise).clamp(10.0, 500.0);
    let record = SynthRecord {
        recording_id: id.clone(),
        class,
        container_id: format!("{class}{}", instance + 1),
        mass,
        luminance: lum,
        a,
        b,
        d,
        bbox: t.bbox,
    };
    let meta = RecordingMeta {
        id,
        width: w,
        height: h,
        class,
        container_id: Some(record.container_id.clone()),
        true_mass: Some(mass),
    };
    let bundle = RecordingBundle::new(meta, rgb_frames, depth_frames)?;
    Ok((bundle, DetectionSet { records, rejected: 0 }, record))
}

/// Writes every recording to `<out>/<id>/` (frames, `meta.txt`,
/// `detections.jsonl`) and the targets to `<out>/truth.csv`.
pub fn generate(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<Vec<SynthRecord>> {
    spec.validate()?;
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let records: Vec<SynthRecord> = (0..spec.recordings)
        .into_par_iter()
        .map(|i| {
            let (bundle, dets, record) = render_recording(spec, i)?;
            let dir = out.join(bundle.id());
            save_recording(&bundle, &dir)?;
            save_detections(&dets, dir.join("detections.jsonl"))?;
            Ok(record)
        })
        .collect::<Result<_>>()?;
    let truths: Vec<TruthRecord> = records.iter().map(SynthRecord::truth).collect();
    save_truth(&truths, out.join("truth.csv"))?;
    Ok(records)
}

/// Least-squares linear model `mass ~ 1 + luminance + a + b + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOracle {
    pub coefficients: [f64; 5],
}

impl LinearOracle {
    /// `rows` are `[luminance, a, b, d]`.
    pub fn fit(rows: &[[f64; 4]], targets: &[f64]) -> Result<Self> {
        if rows.len() != targets.len() || rows.len() < 5 {
            return Err(Error::InvalidInput(format!(
                "linear oracle needs >= 5 matching rows, got {} rows and {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let x = DMatrix::from_fn(rows.len(), 5, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
        let y = DVector::from_column_slice(targets);
        let coef = x
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::InvalidInput(format!("linear oracle: {e}")))?;
        Ok(Self {
            coefficients: [coef[0], coef[1], coef[2], coef[3], coef[4]],
        })
    }

    pub fn predict(&self, row: [f64; 4]) -> f64 {
        let c = self.coefficients;
        c[0] + c[1] * row[0] + c[2] * row[1] + c[3] * row[2] + c[4] * row[3]
    }
}
