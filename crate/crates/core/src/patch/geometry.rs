use super::{FloatImage, PATCH_SIZE};
use crate::data::{BBox, RgbFrame};
use crate::error::{Error, Result};

/// Bilinear resize with half-pixel centers and edge clamping (no
/// antialiasing). Same-size resizes are exact copies.
pub fn resize_bilinear(src: &FloatImage, width: usize, height: usize) -> FloatImage {
    if src.width() == width && src.height() == height {
        return src.clone();
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = axis(width, src.width());
    let ys = axis(height, src.height());
    let mut out = FloatImage::zeros(width, height);
    for c in 0..3 {
        let plane = src.channel(c);
        let sw = src.width();
        let dst = out.channel_mut(c);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let r0 = &plane[y0 * sw..(y0 + 1) * sw];
            let r1 = &plane[y1 * sw..(y1 + 1) * sw];
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                dst[oy * width + ox] = top + (bot - top) * fy;
            }
        }
    }
    out
}

/// Crops `bbox` from the frame, zero-pads the shorter side to a square
/// (odd remainder on the trailing side), resizes to 112x112 and scales to
/// [0, 1].
pub fn crop_pad_resize(image: &RgbFrame, bbox: BBox) -> Result<FloatImage> {
    let clipped = bbox.clip(image.width(), image.height()).ok_or_else(|| {
        Error::InvalidInput(format!("degenerate bbox {bbox:?} after clipping"))
    })?;
    let (w, h) = (clipped.w as usize, clipped.h as usize);
    let side = w.max(h);
    let (pad_x, pad_y) = ((side - w) / 2, (side - h) / 2);
    let mut square = FloatImage::zeros(side, side);
    for y in 0..h {
        for x in 0..w {
            let p = image.get_pixel(clipped.x as u32 + x as u32, clipped.y as u32 + y as u32);
            for c in 0..3 {
                square.set(c, x + pad_x, y + pad_y, f32::from(p.0[c]));
            }
        }
    }
    let mut patch = resize_bilinear(&square, PATCH_SIZE, PATCH_SIZE);
    for v in patch.data_mut() {
        *v /= 255.0;
    }
    Ok(patch)
}

/// Width and height of a (clipped) bbox relative to the image.
pub fn compute_aspect_ratios(bbox: BBox, image_dims: (u32, u32)) -> (f64, f64) {
    (
        f64::from(bbox.w) / f64::from(image_dims.0),
        f64::from(bbox.h) / f64::from(image_dims.1),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    #[test]
    fn aspect_ratios() {
        assert_eq!(
            compute_aspect_ratios(BBox::new(0, 0, 320, 360), (1280, 720)),
            (0.25, 0.5)
        );
        assert_eq!(
            compute_aspect_ratios(BBox::new(0, 0, 1280, 720), (1280, 720)),
            (1.0, 1.0)
        );
        assert_eq!(
            compute_aspect_ratios(BBox::new(7, 9, 128, 72), (1280, 720)),
            (0.1, 0.1)
        );
    }

    #[test]
    fn exact_size_crop_is_scaled_copy() {
        let img = RgbFrame::from_fn(130, 120, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
        let patch = crop_pad_resize(&img, BBox::new(5, 3, 112, 112)).unwrap();
        for y in 0..112 {
            for x in 0..112 {
                let p = img.get_pixel(x as u32 + 5, y as u32 + 3).0;
                for c in 0..3 {
                    assert_eq!(patch.get(c, x, y), f32::from(p[c]) / 255.0);
                }
            }
        }
    }

    #[test]
    fn square_crop_has_no_border() {
        let img = RgbFrame::from_pixel(300, 300, Rgb([255, 0, 0]));
        let patch = crop_pad_resize(&img, BBox::new(50, 50, 200, 200)).unwrap();
        assert!(patch.channel(0).iter().all(|&v| v == 1.0));
        assert!(patch.channel(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tall_crop_is_padded_symmetrically() {
        // 100x200 white crop: 50 zero columns each side before resize.
        let img = RgbFrame::from_pixel(100, 200, Rgb([255, 255, 255]));
        let patch = crop_pad_resize(&img, BBox::new(0, 0, 100, 200)).unwrap();
        let row: Vec<f32> = (0..112).map(|x| patch.get(0, x, 56)).collect();
        let lit: Vec<usize> = (0..112).filter(|&x| row[x] > 0.5).collect();
        assert_eq!(lit.len(), 56);
        assert_eq!(lit[0], 28);
        assert_eq!(row[0], 0.0);
        assert_eq!(row[111], 0.0);
    }

    #[test]
    fn degenerate_bbox_is_an_error() {
        let img = RgbFrame::new(10, 10);
        assert!(crop_pad_resize(&img, BBox::new(20, 0, 5, 5)).is_err());
    }

    proptest! {
        #[test]
        fn padding_preserves_aspect_ratio(w in 4u32..300, h in 4u32..300) {
            let img = RgbFrame::from_pixel(w, h, Rgb([255, 255, 255]));
            let patch = crop_pad_resize(&img, BBox::new(0, 0, w, h)).unwrap();
            let side = w.max(h) as f64;
            let expect_w = 112.0 * f64::from(w) / side;
            let expect_h = 112.0 * f64::from(h) / side;
            let lit_w = (0..112).filter(|&x| (0..112).any(|y| patch.get(0, x, y) > 0.5)).count();
            let lit_h = (0..112).filter(|&y| (0..112).any(|x| patch.get(0, x, y) > 0.5)).count();
            prop_assert!((lit_w as f64 - expect_w).abs() <= 1.0, "{lit_w} vs {expect_w}");
            prop_assert!((lit_h as f64 - expect_h).abs() <= 1.0, "{lit_h} vs {expect_h}");
            prop_assert!(patch.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
