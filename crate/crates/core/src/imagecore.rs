//! Raster primitives shared by every stage: RGB images with real-valued
//! intensities, binary masks, bounding boxes, bilinear resizing and
//! thresholding.
//!
//! Intensities live in `[0, 1]` as `f64`. Conversion to 8-bit happens only in
//! [`crate::io`].

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Row-major RGB raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidRaster(format!("{height}x{width} image")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::InvalidRaster(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidRaster(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: [f64; CHANNELS]) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        let data = (0..height * width).flat_map(|_| value).collect();
        Image {
            height,
            width,
            data,
        }
    }

    /// Builds an image from a per-pixel function; values are clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; CHANNELS],
    ) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            for c in 0..width {
                data.extend(f(r, c).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; CHANNELS] {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * CHANNELS + channel]
    }

    /// Copy of the pixels inside `bbox`.
    pub fn crop(&self, bbox: BBox) -> Result<Image> {
        check_within(bbox, self.dims())?;
        let mut data = Vec::with_capacity(bbox.height * bbox.width * CHANNELS);
        for r in bbox.top..bbox.top + bbox.height {
            let start = (r * self.width + bbox.left) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + bbox.width * CHANNELS]);
        }
        Ok(Image {
            height: bbox.height,
            width: bbox.width,
            data,
        })
    }

    /// Writes a pixel, clamping each channel to `[0, 1]`.
    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, value: [f64; CHANNELS]) {
        let i = (row * self.width + col) * CHANNELS;
        for (dst, v) in self.data[i..i + CHANNELS].iter_mut().zip(value) {
            *dst = v.clamp(0.0, 1.0);
        }
    }
}

/// Row-major raster of `{0, 1}` values.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidRaster(format!("{height}x{width} mask")));
        }
        if data.len() != height * width {
            return Err(Error::InvalidRaster(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidRaster("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "empty mask");
        BinaryMask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "empty mask");
        BinaryMask {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = BinaryMask::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                if f(r, c) {
                    mask.set(r, c, true);
                }
            }
        }
        mask
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Coordinates of all set pixels in row-major order.
    pub fn ones_iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn crop(&self, bbox: BBox) -> Result<BinaryMask> {
        check_within(bbox, self.dims())?;
        let mut data = Vec::with_capacity(bbox.height * bbox.width);
        for r in bbox.top..bbox.top + bbox.height {
            let start = r * self.width + bbox.left;
            data.extend_from_slice(&self.data[start..start + bbox.width]);
        }
        Ok(BinaryMask {
            height: bbox.height,
            width: bbox.width,
            data,
        })
    }

    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        check_dims(self.dims(), other.dims())?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a & b)
            .collect();
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data,
        })
    }

    /// True if every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a == 0 || b != 0)
    }
}

pub(crate) fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

fn check_within(bbox: BBox, (h, w): (usize, usize)) -> Result<()> {
    if bbox.height == 0
        || bbox.width == 0
        || bbox.top + bbox.height > h
        || bbox.left + bbox.width > w
    {
        return Err(Error::InvalidRaster(format!(
            "{bbox:?} outside {h}x{w} raster"
        )));
    }
    Ok(())
}

/// Axis-aligned box inside a raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BBox {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        BBox {
            top,
            left,
            height,
            width,
        }
    }

    /// The scale `max(height, width)`.
    pub fn max_side(&self) -> usize {
        self.height.max(self.width)
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height - 1
    }

    pub fn right(&self) -> usize {
        self.left + self.width - 1
    }

    /// Center under the `top + floor(height / 2)` convention.
    pub fn center(&self) -> (usize, usize) {
        (self.top + self.height / 2, self.left + self.width / 2)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row <= self.bottom() && col >= self.left && col <= self.right()
    }

    /// Grows the box by `margin` on every side, clipped to a `dims` raster.
    pub fn expand(&self, margin: usize, (h, w): (usize, usize)) -> BBox {
        let top = self.top.saturating_sub(margin);
        let left = self.left.saturating_sub(margin);
        let bottom = (self.bottom() + margin).min(h - 1);
        let right = (self.right() + margin).min(w - 1);
        BBox::new(top, left, bottom - top + 1, right - left + 1)
    }
}

/// Smallest box enclosing every nonzero pixel of `mask`.
pub fn minbb(mask: &BinaryMask) -> Result<BBox> {
    let (mut top, mut bottom) = (usize::MAX, 0);
    let (mut left, mut right) = (usize::MAX, 0);
    for (r, row) in mask.data.chunks_exact(mask.width).enumerate() {
        let Some(first) = row.iter().position(|&v| v != 0) else {
            continue;
        };
        let last = row.iter().rposition(|&v| v != 0).unwrap_or(first);
        top = top.min(r);
        bottom = r;
        left = left.min(first);
        right = right.max(last);
    }
    if top == usize::MAX {
        return Err(Error::EmptyMask);
    }
    Ok(BBox::new(top, left, bottom - top + 1, right - left + 1))
}

/// Precomputed bilinear taps along one axis: `(lo, hi, frac)` per output index.
fn bilinear_taps(in_len: usize, out_len: usize, scale: f64) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|j| {
            let s = ((j as f64 + 0.5) / scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Bilinear resampling of a `channels`-interleaved raster with half-pixel
/// centers. `scale_*` maps input to output coordinates.
fn resample(
    src: &[f64],
    (h, w): (usize, usize),
    channels: usize,
    (out_h, out_w): (usize, usize),
    (scale_y, scale_x): (f64, f64),
) -> Vec<f64> {
    let rows = bilinear_taps(h, out_h, scale_y);
    let cols = bilinear_taps(w, out_w, scale_x);
    let mut out = Vec::with_capacity(out_h * out_w * channels);
    for &(y0, y1, fy) in &rows {
        let row0 = &src[y0 * w * channels..(y0 + 1) * w * channels];
        let row1 = &src[y1 * w * channels..(y1 + 1) * w * channels];
        for &(x0, x1, fx) in &cols {
            for ch in 0..channels {
                let a = row0[x0 * channels + ch];
                let b = row0[x1 * channels + ch];
                let c = row1[x0 * channels + ch];
                let d = row1[x1 * channels + ch];
                let top = a + fx * (b - a);
                let bottom = c + fx * (d - c);
                out.push(top + fy * (bottom - top));
            }
        }
    }
    out
}

fn scaled_dims(dims: (usize, usize), ratio: f64) -> Result<(usize, usize)> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::ZeroSizedResize { ratio });
    }
    let h = (dims.0 as f64 * ratio).round();
    let w = (dims.1 as f64 * ratio).round();
    if h < 1.0 || w < 1.0 {
        return Err(Error::ZeroSizedResize { ratio });
    }
    Ok((h as usize, w as usize))
}

/// Bilinear resize by a uniform ratio; output sides are `round(side * ratio)`.
pub fn resize_image(img: &Image, ratio: f64) -> Result<Image> {
    let out = scaled_dims(img.dims(), ratio)?;
    if ratio == 1.0 {
        return Ok(img.clone());
    }
    Ok(resample_image(img, out, (ratio, ratio)))
}

/// Bilinear resize to exact dimensions.
pub fn resize_image_to(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidRaster(format!(
            "resize target {height}x{width}"
        )));
    }
    if img.dims() == (height, width) {
        return Ok(img.clone());
    }
    let scale = (
        height as f64 / img.height as f64,
        width as f64 / img.width as f64,
    );
    Ok(resample_image(img, (height, width), scale))
}

fn resample_image(img: &Image, out: (usize, usize), scale: (f64, f64)) -> Image {
    let mut data = resample(&img.data, img.dims(), CHANNELS, out, scale);
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Image {
        height: out.0,
        width: out.1,
        data,
    }
}

/// Resizes a mask as a real field and re-binarizes at 0.5.
///
/// Fails with [`Error::VanishingMask`] if a non-empty mask comes out empty.
pub fn resize_mask(mask: &BinaryMask, ratio: f64) -> Result<BinaryMask> {
    let out = scaled_dims(mask.dims(), ratio)?;
    if ratio == 1.0 {
        return Ok(mask.clone());
    }
    resample_mask(mask, out, (ratio, ratio), ratio)
}

/// Resizes a mask to exact dimensions (same kernel as [`resize_mask`]).
pub fn resize_mask_to(mask: &BinaryMask, height: usize, width: usize) -> Result<BinaryMask> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidRaster(format!(
            "resize target {height}x{width}"
        )));
    }
    if mask.dims() == (height, width) {
        return Ok(mask.clone());
    }
    let scale = (
        height as f64 / mask.height as f64,
        width as f64 / mask.width as f64,
    );
    resample_mask(mask, (height, width), scale, scale.0.min(scale.1))
}

fn resample_mask(
    mask: &BinaryMask,
    out: (usize, usize),
    scale: (f64, f64),
    ratio: f64,
) -> Result<BinaryMask> {
    let field: Vec<f64> = mask.data.iter().map(|&v| f64::from(v)).collect();
    let data: Vec<u8> = resample(&field, mask.dims(), 1, out, scale)
        .into_iter()
        .map(|v| u8::from(v >= 0.5))
        .collect();
    let resized = BinaryMask {
        height: out.0,
        width: out.1,
        data,
    };
    if resized.is_empty() && !mask.is_empty() {
        return Err(Error::VanishingMask { ratio });
    }
    Ok(resized)
}

/// Marks pixels whose largest channel value exceeds `threshold`.
pub fn binarize(img_diff: &Image, threshold: f64) -> BinaryMask {
    let data = img_diff
        .data
        .chunks_exact(CHANNELS)
        .map(|px| u8::from(px.iter().copied().fold(f64::MIN, f64::max) > threshold))
        .collect();
    BinaryMask {
        height: img_diff.height,
        width: img_diff.width,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect_mask(
        h: usize,
        w: usize,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| rows.contains(&r) && cols.contains(&c))
    }

    #[test]
    fn minbb_of_rectangle() {
        let mask = rect_mask(16, 16, 2..6, 3..11);
        assert_eq!(minbb(&mask).unwrap(), BBox::new(2, 3, 4, 8));
    }

    #[test]
    fn minbb_of_single_pixel() {
        let mask = rect_mask(12, 12, 7..8, 7..8);
        assert_eq!(minbb(&mask).unwrap(), BBox::new(7, 7, 1, 1));
    }

    #[test]
    fn minbb_rejects_empty_mask() {
        assert!(matches!(
            minbb(&BinaryMask::zeros(5, 5)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn resize_image_dims() {
        let img = Image::filled(100, 200, [0.2, 0.4, 0.6]);
        let out = resize_image(&img, 0.5).unwrap();
        assert_eq!(out.dims(), (50, 100));
    }

    #[test]
    fn resize_image_identity() {
        let img = Image::from_fn(13, 9, |r, c| [r as f64 / 13.0, c as f64 / 9.0, 0.5]);
        assert_eq!(resize_image(&img, 1.0).unwrap(), img);
        assert_eq!(resize_image_to(&img, 13, 9).unwrap(), img);
    }

    #[test]
    fn resize_image_rejects_zero_size() {
        let img = Image::filled(10, 10, [0.0; 3]);
        assert!(matches!(
            resize_image(&img, 0.01),
            Err(Error::ZeroSizedResize { .. })
        ));
        assert!(resize_image(&img, -1.0).is_err());
    }

    #[test]
    fn resize_mask_solid_square() {
        // Square aligned to even coordinates so every 2x2 block is uniform.
        let mask = rect_mask(20, 20, 4..14, 4..14);
        let out = resize_mask(&mask, 0.5).unwrap();
        assert_eq!(out, rect_mask(10, 10, 2..7, 2..7));
        let full = resize_mask(&BinaryMask::ones(10, 10), 0.5).unwrap();
        assert_eq!(full, BinaryMask::ones(5, 5));
    }

    #[test]
    fn resize_mask_identity() {
        let mask = BinaryMask::from_fn(17, 11, |r, c| (r * 7 + c * 3) % 5 == 0);
        assert_eq!(resize_mask(&mask, 1.0).unwrap(), mask);
    }

    #[test]
    fn resize_mask_vanishes() {
        let mask = rect_mask(100, 100, 0..1, 0..2);
        assert!(matches!(
            resize_mask(&mask, 0.01),
            Err(Error::VanishingMask { .. })
        ));
    }

    #[test]
    fn binarize_cases() {
        let zero = Image::filled(4, 4, [0.0; 3]);
        assert!(binarize(&zero, 0.098).is_empty());

        let mut one = zero.clone();
        one.set_pixel(1, 2, [0.2, 0.0, 0.0]);
        let m = binarize(&one, 0.098);
        assert_eq!(m.ones_iter().collect::<Vec<_>>(), vec![(1, 2)]);

        let high = Image::from_fn(6, 6, |r, c| [0.9 * (r * 6 + c) as f64 / 35.0; 3]);
        assert!(binarize(&high, 0.999).is_empty());
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(Image::new(1, 2, vec![0.0; 3]).is_err());
        assert!(BinaryMask::new(1, 2, vec![0, 2]).is_err());
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0.0f64..=1.0, h * w * CHANNELS)
                .prop_map(move |data| Image::new(h, w, data).unwrap())
        })
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..24, 1usize..24).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..=1, h * w)
                .prop_map(move |data| BinaryMask::new(h, w, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn constant_image_stays_constant(
            h in 1usize..40, w in 1usize..40,
            v in 0.0f64..=1.0, ratio in 0.1f64..3.0,
        ) {
            let img = Image::filled(h, w, [v; 3]);
            if let Ok(out) = resize_image(&img, ratio) {
                for &x in out.data() {
                    prop_assert!((x - v).abs() <= 1e-6);
                }
            }
        }

        #[test]
        fn resize_outputs_stay_in_range(img in arb_image(), ratio in 0.2f64..4.0) {
            if let Ok(out) = resize_image(&img, ratio) {
                prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn resized_mask_is_binary(mask in arb_mask(), ratio in 0.2f64..4.0) {
            if let Ok(out) = resize_mask(&mask, ratio) {
                prop_assert!(out.data().iter().all(|&v| v <= 1));
            }
        }

        #[test]
        fn minbb_translation_equivariant(
            mask in arb_mask(), dy in 0usize..8, dx in 0usize..8,
        ) {
            prop_assume!(!mask.is_empty());
            let (h, w) = mask.dims();
            let shifted = BinaryMask::from_fn(h + dy, w + dx, |r, c| {
                r >= dy && c >= dx && mask.get(r - dy, c - dx)
            });
            let a = minbb(&mask).unwrap();
            let b = minbb(&shifted).unwrap();
            prop_assert_eq!((b.top, b.left), (a.top + dy, a.left + dx));
            prop_assert_eq!((b.height, b.width), (a.height, a.width));
        }

        #[test]
        fn binarize_is_monotone(img in arb_image(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(binarize(&img, hi).is_subset_of(&binarize(&img, lo)));
        }
    }
}
