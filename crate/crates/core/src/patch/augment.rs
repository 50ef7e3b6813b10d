use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{resize_bilinear, FloatImage, PATCH_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub p_hflip: f64,
    pub p_vflip: f64,
    /// Rotation range in degrees.
    pub rotation: (f64, f64),
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    /// Hue shift as a fraction of a full turn.
    pub hue: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_hflip: 0.5,
            p_vflip: 0.5,
            rotation: (0.0, 180.0),
            brightness: (0.8, 1.2),
            contrast: (0.8, 1.2),
            saturation: (0.8, 1.2),
            hue: (-0.2, 0.2),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// A config whose every sample is the identity transform.
    pub fn identity() -> Self {
        Self {
            p_hflip: 0.0,
            p_vflip: 0.0,
            rotation: (0.0, 0.0),
            brightness: (1.0, 1.0),
            contrast: (1.0, 1.0),
            saturation: (1.0, 1.0),
            hue: (0.0, 0.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_hflip", self.p_hflip), ("p_vflip", self.p_vflip)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("{name}={p} outside [0, 1]")));
            }
        }
        for (name, (lo, hi)) in [
            ("rotation", self.rotation),
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("hue", self.hue),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidInput(format!("{name} range [{lo}, {hi}]")));
            }
        }
        if self.brightness.0 < 0.0 || self.contrast.0 < 0.0 || self.saturation.0 < 0.0 {
            return Err(Error::InvalidInput("jitter factors must be >= 0".into()));
        }
        Ok(())
    }

    /// Draws one parameter tuple. Always consumes the same number of values
    /// from `rng` regardless of the ranges.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentParams {
        let mut uniform = |(lo, hi): (f64, f64)| lo + rng.gen::<f64>() * (hi - lo);
        let hflip = uniform((0.0, 1.0)) < self.p_hflip;
        let vflip = uniform((0.0, 1.0)) < self.p_vflip;
        AugmentParams {
            hflip,
            vflip,
            angle_deg: uniform(self.rotation),
            brightness: uniform(self.brightness),
            contrast: uniform(self.contrast),
            saturation: uniform(self.saturation),
            hue: uniform(self.hue),
        }
    }
}

/// One sampled augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub angle_deg: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

/// Counter-based seed for the `copy_index`-th augmented copy of sample
/// `sample_index` (splitmix64 finalizer over the three inputs).
pub fn sample_seed(global_seed: u64, sample_index: u64, copy_index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut h = mix(global_seed.wrapping_add(GOLDEN));
    h = mix(h ^ sample_index.wrapping_add(GOLDEN.wrapping_mul(2)));
    mix(h ^ copy_index.wrapping_add(GOLDEN.wrapping_mul(3)))
}

pub fn flip_horizontal(img: &FloatImage) -> FloatImage {
    let (w, h) = (img.width(), img.height());
    let mut out = FloatImage::zeros(w, h);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out.set(c, x, y, img.get(c, w - 1 - x, y));
            }
        }
    }
    out
}

pub fn flip_vertical(img: &FloatImage) -> FloatImage {
    let (w, h) = (img.width(), img.height());
    let mut out = FloatImage::zeros(w, h);
    for c in 0..3 {
        for y in 0..h {
            let src = &img.channel(c)[(h - 1 - y) * w..(h - y) * w];
            out.channel_mut(c)[y * w..(y + 1) * w].copy_from_slice(src);
        }
    }
    out
}

/// Rotates counter-clockwise by `angle_deg` about the center onto a canvas
/// grown to contain the whole rotated image. Uncovered pixels are 0.
pub fn rotate_expand(img: &FloatImage, angle_deg: f64) -> FloatImage {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let out_w = ((w * cos.abs() + h * sin.abs()) - 1e-6).ceil().max(1.0) as usize;
    let out_h = ((w * sin.abs() + h * cos.abs()) - 1e-6).ceil().max(1.0) as usize;
    let mut out = FloatImage::zeros(out_w, out_h);
    let (ocx, ocy) = (out_w as f64 / 2.0, out_h as f64 / 2.0);
    let (icx, icy) = (w / 2.0, h / 2.0);
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let dx = ox as f64 + 0.5 - ocx;
            let dy = oy as f64 + 0.5 - ocy;
            // Inverse rotation (image y axis points down).
            let sx = cos * dx - sin * dy + icx - 0.5;
            let sy = sin * dx + cos * dy + icy - 0.5;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = (sx - x0) as f32;
            let fy = (sy - y0) as f32;
            let (x0, y0) = (x0 as i64, y0 as i64);
            for c in 0..3 {
                let at = |x: i64, y: i64| -> f32 {
                    if x < 0 || y < 0 || x >= iw || y >= ih {
                        0.0
                    } else {
                        img.get(c, x as usize, y as usize)
                    }
                };
                let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
                let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
                out.set(c, ox, oy, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn adjust_brightness(img: &mut FloatImage, factor: f64) {
    let f = factor as f32;
    for v in img.data_mut() {
        *v = (*v * f).clamp(0.0, 1.0);
    }
}

/// Blends towards the mean gray level of the whole image.
pub fn adjust_contrast(img: &mut FloatImage, factor: f64) {
    let n = img.width() * img.height();
    let mean = (0..n)
        .map(|i| {
            f64::from(luma(
                img.channel(0)[i],
                img.channel(1)[i],
                img.channel(2)[i],
            ))
        })
        .sum::<f64>()
        / n.max(1) as f64;
    let (f, m) = (factor as f32, mean as f32);
    for v in img.data_mut() {
        *v = ((*v - m) * f + m).clamp(0.0, 1.0);
    }
}

/// Blends each pixel with its own gray level.
pub fn adjust_saturation(img: &mut FloatImage, factor: f64) {
    let f = factor as f32;
    let n = img.width() * img.height();
    let data = img.data_mut();
    for i in 0..n {
        let (r, g, b) = (data[i], data[n + i], data[2 * n + i]);
        let gray = luma(r, g, b);
        for c in 0..3 {
            let v = &mut data[c * n + i];
            *v = ((*v - gray) * f + gray).clamp(0.0, 1.0);
        }
    }
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Rotates hue by `shift` turns, wrapping around the color circle.
pub fn adjust_hue(img: &mut FloatImage, shift: f64) {
    let shift = shift as f32;
    let n = img.width() * img.height();
    let data = img.data_mut();
    for i in 0..n {
        let (h, s, v) = rgb_to_hsv(data[i], data[n + i], data[2 * n + i]);
        let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
        data[i] = r.clamp(0.0, 1.0);
        data[n + i] = g.clamp(0.0, 1.0);
        data[2 * n + i] = b.clamp(0.0, 1.0);
    }
}

/// Applies flips, expanding rotation, resize back to the patch size, then
/// brightness, contrast, saturation and hue jitter in that order.
pub fn apply_augmentation(patch: &FloatImage, params: &AugmentParams) -> FloatImage {
    let mut img = patch.clone();
    if params.hflip {
        img = flip_horizontal(&img);
    }
    if params.vflip {
        img = flip_vertical(&img);
    }
    if params.angle_deg != 0.0 {
        img = rotate_expand(&img, params.angle_deg);
    }
    let mut img = resize_bilinear(&img, PATCH_SIZE, PATCH_SIZE);
    adjust_brightness(&mut img, params.brightness);
    adjust_contrast(&mut img, params.contrast);
    adjust_saturation(&mut img, params.saturation);
    adjust_hue(&mut img, params.hue);
    img.clamp_unit();
    img
}

pub fn augment<R: Rng + ?Sized>(patch: &FloatImage, config: &AugmentConfig, rng: &mut R) -> FloatImage {
    apply_augmentation(patch, &config.sample(rng))
}

/// The `copy_index`-th augmented copy of training sample `sample_index`,
/// independent of any other sample's draws.
pub fn augmented_copy(
    patch: &FloatImage,
    config: &AugmentConfig,
    sample_index: u64,
    copy_index: u64,
) -> FloatImage {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed, sample_index, copy_index));
    augment(patch, config, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_patch(seed: u64) -> FloatImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * PATCH_SIZE * PATCH_SIZE).map(|_| rng.gen::<f32>()).collect();
        FloatImage::from_chw(PATCH_SIZE, PATCH_SIZE, data)
    }

    fn l_marker() -> FloatImage {
        let mut img = FloatImage::zeros(PATCH_SIZE, PATCH_SIZE);
        for y in 20..90 {
            for x in 30..45 {
                img.set(0, x, y, 1.0);
            }
        }
        for y in 75..90 {
            for x in 45..85 {
                img.set(0, x, y, 1.0);
            }
        }
        img
    }

    #[test]
    fn identity_config_is_identity() {
        let patch = random_patch(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = augment(&patch, &AugmentConfig::identity(), &mut rng);
        let worst = out
            .data()
            .iter()
            .zip(patch.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 1.0 / 255.0, "max deviation {worst}");
    }

    #[test]
    fn unit_jitter_survives_8bit_roundtrip() {
        let patch = random_patch(2);
        let mut img = patch.clone();
        adjust_brightness(&mut img, 1.0);
        adjust_contrast(&mut img, 1.0);
        adjust_saturation(&mut img, 1.0);
        adjust_hue(&mut img, 0.0);
        for (a, b) in img.data().iter().zip(patch.data()) {
            let qa = (a * 255.0).round() as i32;
            let qb = (b * 255.0).round() as i32;
            assert!((qa - qb).abs() <= 1);
        }
    }

    #[test]
    fn flips_are_involutions() {
        let patch = random_patch(3);
        assert_eq!(flip_horizontal(&flip_horizontal(&patch)), patch);
        assert_eq!(flip_vertical(&flip_vertical(&patch)), patch);
        assert_ne!(flip_horizontal(&patch), patch);
    }

    #[test]
    fn quarter_turn_keeps_whole_marker() {
        let marker = l_marker();
        let before = marker.channel(0).iter().filter(|&&v| v > 0.5).count() as f64;
        let rotated = rotate_expand(&marker, 90.0);
        assert_eq!((rotated.width(), rotated.height()), (PATCH_SIZE, PATCH_SIZE));
        let after = rotated.channel(0).iter().filter(|&&v| v > 0.5).count() as f64;
        assert!((after - before).abs() <= 0.02 * before, "{before} -> {after}");
        // The long arm is now horizontal.
        assert!(rotated.get(0, 55, 37) > 0.5 || rotated.get(0, 55, 74) > 0.5);
    }

    #[test]
    fn oblique_rotation_does_not_crop() {
        let marker = l_marker();
        let mass: f64 = marker.channel(0).iter().map(|&v| f64::from(v)).sum();
        let rotated = rotate_expand(&marker, 45.0);
        let side = (PATCH_SIZE as f64 * std::f64::consts::SQRT_2).ceil() as usize;
        assert_eq!(rotated.width(), side);
        let rotated_mass: f64 = rotated.channel(0).iter().map(|&v| f64::from(v)).sum();
        assert!((rotated_mass - mass).abs() <= 0.02 * mass, "{mass} -> {rotated_mass}");
        // A full-white patch rotated by 45 degrees keeps its corners.
        let white = FloatImage::filled(PATCH_SIZE, PATCH_SIZE, [1.0; 3]);
        let r = rotate_expand(&white, 45.0);
        let c = side / 2;
        assert!(r.get(0, c, 1) > 0.5 && r.get(0, 1, c) > 0.5);
        assert_eq!(r.get(0, 0, 0), 0.0);
    }

    #[test]
    fn hue_wraps_around() {
        let mut img = FloatImage::filled(1, 1, [1.0, 0.0, 0.0]);
        adjust_hue(&mut img, 1.0 / 3.0);
        let p = img.pixel(0, 0);
        assert!((p[0]).abs() < 1e-5 && (p[1] - 1.0).abs() < 1e-5 && p[2].abs() < 1e-5);
        adjust_hue(&mut img, -0.5);
        let p = img.pixel(0, 0);
        // green shifted back by half a turn lands on magenta
        assert!((p[0] - 1.0).abs() < 1e-5 && p[1].abs() < 1e-5 && (p[2] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn contrast_zero_gives_mean_gray() {
        let mut img = FloatImage::from_chw(2, 1, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        adjust_contrast(&mut img, 0.0);
        assert!(img.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn sampled_parameters_are_reproducible() {
        let cfg = AugmentConfig {
            seed: 77,
            ..AugmentConfig::default()
        };
        let draw = |s, c| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, s, c));
            cfg.sample(&mut rng)
        };
        assert_eq!(draw(4, 1), draw(4, 1));
        assert_ne!(draw(4, 1), draw(4, 2));
        assert_ne!(draw(4, 1), draw(5, 1));
        let p = draw(0, 0);
        assert!((0.0..=180.0).contains(&p.angle_deg));
        assert!((-0.2..=0.2).contains(&p.hue));
        let patch = random_patch(4);
        assert_eq!(
            augmented_copy(&patch, &cfg, 3, 0),
            augmented_copy(&patch, &cfg, 3, 0)
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = AugmentConfig::default();
        cfg.p_hflip = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.hue = (0.2, -0.2);
        assert!(cfg.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn outputs_stay_in_unit_range(
            seed in any::<u64>(),
            bright in 0.0f64..3.0,
            sat in 0.0f64..3.0,
            hue in -1.0f64..1.0,
        ) {
            let cfg = AugmentConfig {
                p_hflip: 0.5,
                p_vflip: 0.5,
                rotation: (0.0, 360.0),
                brightness: (bright * 0.5, bright),
                contrast: (0.0, 3.0),
                saturation: (sat * 0.5, sat),
                hue: (hue.min(0.0), hue.max(0.0)),
                seed,
            };
            let out = augmented_copy(&random_patch(seed), &cfg, 0, 0);
            prop_assert_eq!((out.width(), out.height()), (PATCH_SIZE, PATCH_SIZE));
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
