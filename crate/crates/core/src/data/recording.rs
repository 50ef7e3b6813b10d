use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};

use super::ContainerClass;
use crate::error::{Error, Result};

pub type RgbFrame = image::RgbImage;
/// Raw depth in millimeters, 0 marks a missing measurement.
pub type DepthFrame = ImageBuffer<Luma<u16>, Vec<u16>>;

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingMeta {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub class: ContainerClass,
    /// Identifier of the physical container, used to build cross-validation
    /// folds. Optional in `meta.txt`.
    pub container_id: Option<String>,
    /// Empty container mass in grams; absent for unlabeled recordings.
    pub true_mass: Option<f64>,
}

impl RecordingMeta {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |reason: String| Error::Meta {
            path: path.to_path_buf(),
            reason,
        };
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {}: expected key=value", n + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| err(format!("missing key {k}")));
        let dim = |k: &str| -> Result<u32> {
            let v: u32 = get(k)?
                .parse()
                .map_err(|_| err(format!("{k} is not a positive integer")))?;
            if v == 0 {
                return Err(err(format!("{k} must be positive")));
            }
            Ok(v)
        };
        let true_mass = match get("mass_g")?.as_str() {
            "NA" => None,
            s => {
                let m: f64 = s.parse().map_err(|_| err(format!("bad mass_g {s:?}")))?;
                if !(m > 0.0 && m.is_finite()) {
                    return Err(err(format!("mass_g must be positive, got {s}")));
                }
                Some(m)
            }
        };
        Ok(Self {
            id: get("id")?.clone(),
            width: dim("width")?,
            height: dim("height")?,
            class: get("class")?.parse().map_err(|e: Error| err(e.to_string()))?,
            container_id: kv.get("container").cloned(),
            true_mass,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "id={}", self.id);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "class={}", self.class);
        if let Some(c) = &self.container_id {
            let _ = writeln!(s, "container={c}");
        }
        match self.true_mass {
            Some(m) => {
                let _ = writeln!(s, "mass_g={m}");
            }
            None => s.push_str("mass_g=NA\n"),
        }
        s
    }
}

/// One recording: metadata plus paired RGB and depth frames.
#[derive(Debug, Clone)]
pub struct RecordingBundle {
    pub meta: RecordingMeta,
    pub rgb_frames: Vec<RgbFrame>,
    pub depth_frames: Vec<DepthFrame>,
}

impl RecordingBundle {
    pub fn new(
        meta: RecordingMeta,
        rgb_frames: Vec<RgbFrame>,
        depth_frames: Vec<DepthFrame>,
    ) -> Result<Self> {
        if rgb_frames.len() != depth_frames.len() {
            return Err(Error::FrameCountMismatch {
                rgb: rgb_frames.len(),
                depth: depth_frames.len(),
            });
        }
        let expected = (meta.width, meta.height);
        for (index, (rgb, depth)) in rgb_frames.iter().zip(&depth_frames).enumerate() {
            if rgb.dimensions() != expected {
                return Err(Error::FrameSize {
                    stream: "rgb",
                    index,
                    expected,
                    actual: rgb.dimensions(),
                });
            }
            if depth.dimensions() != expected {
                return Err(Error::FrameSize {
                    stream: "depth",
                    index,
                    expected,
                    actual: depth.dimensions(),
                });
            }
        }
        Ok(Self {
            meta,
            rgb_frames,
            depth_frames,
        })
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn len(&self) -> usize {
        self.rgb_frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rgb_frames.is_empty()
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.meta.width, self.meta.height)
    }
}

fn frame_index(path: &Path) -> Option<usize> {
    if path.extension()? != "png" {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    if stem.len() != 6 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

fn list_frames(dir: &Path) -> Result<BTreeMap<usize, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if let Some(i) = frame_index(&path) {
            out.insert(i, path);
        }
    }
    Ok(out)
}

fn check_contiguous(
    stream: &'static str,
    frames: &BTreeMap<usize, PathBuf>,
    count: usize,
) -> Result<()> {
    match (0..count).find(|i| !frames.contains_key(i)) {
        Some(index) => Err(Error::MissingFrame { stream, index }),
        None => Ok(()),
    }
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads `<dir>/meta.txt`, `<dir>/rgb/%06d.png` and `<dir>/depth/%06d.png`.
/// Depth stays in raw millimeters.
pub fn load_recording(dir: impl AsRef<Path>) -> Result<RecordingBundle> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.txt");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta = RecordingMeta::parse(&text, &meta_path)?;

    let rgb = list_frames(&dir.join("rgb"))?;
    let depth = list_frames(&dir.join("depth"))?;
    let last = |m: &BTreeMap<usize, PathBuf>| m.keys().next_back().map_or(0, |i| i + 1);
    let count = last(&rgb).max(last(&depth));
    check_contiguous("rgb", &rgb, count)?;
    check_contiguous("depth", &depth, count)?;

    let mut rgb_frames = Vec::with_capacity(count);
    let mut depth_frames = Vec::with_capacity(count);
    for index in 0..count {
        let img = open_image(&rgb[&index])?;
        let img = match img {
            DynamicImage::ImageRgb8(i) => i,
            other => {
                return Err(Error::FrameFormat {
                    stream: "rgb",
                    index,
                    reason: format!("expected 8-bit RGB, got {:?}", other.color()),
                })
            }
        };
        rgb_frames.push(img);
        let img = open_image(&depth[&index])?;
        let img = match img {
            DynamicImage::ImageLuma16(i) => i,
            other => {
                return Err(Error::FrameFormat {
                    stream: "depth",
                    index,
                    reason: format!("expected 16-bit grayscale, got {:?}", other.color()),
                })
            }
        };
        depth_frames.push(img);
    }
    RecordingBundle::new(meta, rgb_frames, depth_frames)
}

fn save_png(img: &DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes a bundle in the layout read by [`load_recording`].
pub fn save_recording(bundle: &RecordingBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let rgb_dir = dir.join("rgb");
    let depth_dir = dir.join("depth");
    for d in [&rgb_dir, &depth_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let meta_path = dir.join("meta.txt");
    fs::write(&meta_path, bundle.meta.to_text()).map_err(|e| Error::io(&meta_path, e))?;
    for (i, (rgb, depth)) in bundle.rgb_frames.iter().zip(&bundle.depth_frames).enumerate() {
        save_png(
            &DynamicImage::ImageRgb8(rgb.clone()),
            &rgb_dir.join(format!("{i:06}.png")),
        )?;
        save_png(
            &DynamicImage::ImageLuma16(depth.clone()),
            &depth_dir.join(format!("{i:06}.png")),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(n: u32) -> RecordingMeta {
        RecordingMeta {
            id: "rec".into(),
            width: n,
            height: n,
            class: ContainerClass::Cup,
            container_id: Some("cup1".into()),
            true_mass: Some(42.5),
        }
    }

    fn bundle(frames: usize) -> RecordingBundle {
        let rgb = (0..frames)
            .map(|i| RgbFrame::from_pixel(4, 4, image::Rgb([i as u8, 10, 20])))
            .collect();
        let depth = (0..frames)
            .map(|i| DepthFrame::from_pixel(4, 4, Luma([1500 + i as u16])))
            .collect();
        RecordingBundle::new(meta(4), rgb, depth).unwrap()
    }

    #[test]
    fn loads_three_frame_pairs() {
        let tmp = tempfile::tempdir().unwrap();
        save_recording(&bundle(3), tmp.path()).unwrap();
        let b = load_recording(tmp.path()).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.meta, meta(4));
        assert_eq!(b.depth_frames[0].get_pixel(1, 1).0[0], 1500);
        assert_eq!(b.rgb_frames[2].get_pixel(0, 0).0, [2, 10, 20]);
    }

    #[test]
    fn missing_rgb_frame_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        save_recording(&bundle(3), tmp.path()).unwrap();
        fs::remove_file(tmp.path().join("rgb/000002.png")).unwrap();
        let err = load_recording(tmp.path()).unwrap_err();
        assert!(matches!(err, Error::MissingFrame { index: 2, .. }));
        assert!(err.to_string().contains("frame 2 missing"), "{err}");
    }

    #[test]
    fn wrong_sized_frame_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        save_recording(&bundle(2), tmp.path()).unwrap();
        DynamicImage::ImageLuma16(DepthFrame::new(5, 4))
            .save(tmp.path().join("depth/000001.png"))
            .unwrap();
        let err = load_recording(tmp.path()).unwrap_err();
        assert!(matches!(
            err,
            Error::FrameSize {
                stream: "depth",
                index: 1,
                ..
            }
        ));
    }

    #[test]
    fn eight_bit_depth_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        save_recording(&bundle(1), tmp.path()).unwrap();
        DynamicImage::ImageLuma8(image::GrayImage::new(4, 4))
            .save(tmp.path().join("depth/000000.png"))
            .unwrap();
        assert!(matches!(
            load_recording(tmp.path()),
            Err(Error::FrameFormat { .. })
        ));
    }

    #[test]
    fn resave_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_recording(&bundle(2), a.path()).unwrap();
        save_recording(&load_recording(a.path()).unwrap(), b.path()).unwrap();
        for rel in ["meta.txt", "rgb/000001.png", "depth/000001.png"] {
            assert_eq!(
                fs::read(a.path().join(rel)).unwrap(),
                fs::read(b.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
    }

    #[test]
    fn meta_parses_unlabeled_mass() {
        let m = RecordingMeta::parse(
            "id=x\nwidth=1280\nheight=720\nclass=box\nmass_g=NA\n",
            Path::new("meta.txt"),
        )
        .unwrap();
        assert_eq!(m.true_mass, None);
        assert_eq!(m.class, ContainerClass::Box);
        assert_eq!(m.container_id, None);
        assert!(RecordingMeta::parse(
            "id=x\nwidth=1280\nheight=720\nclass=box\nmass_g=-3\n",
            Path::new("meta.txt")
        )
        .is_err());
    }
}
