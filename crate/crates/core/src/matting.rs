//! Target foreground masks.
//!
//! Objects photographed on a plain backdrop use either an externally produced
//! matte or the border flood-fill heuristic; textures use an all-ones mask.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::imagecore::{check_dims, resize_mask_to, BinaryMask, Image, CHANNELS};
use crate::io;
use crate::regions::{flood_fill, remove_small_components};

pub const DEFAULT_BG_TOLERANCE: f64 = 0.08;
pub const DEFAULT_MIN_FG_AREA: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BorderParams {
    /// L-infinity RGB distance to the median border color still counted as background.
    pub tolerance: f64,
    /// Foreground components smaller than this many pixels are dropped.
    pub min_area: usize,
}

impl Default for BorderParams {
    fn default() -> Self {
        BorderParams {
            tolerance: DEFAULT_BG_TOLERANCE,
            min_area: DEFAULT_MIN_FG_AREA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForegroundStrategy {
    /// Single-channel PNG, nonzero = foreground.
    ExternalMask(PathBuf),
    BorderHeuristic(BorderParams),
    AllOnes,
}

pub fn foreground_mask(img: &Image, strategy: &ForegroundStrategy) -> Result<BinaryMask> {
    match strategy {
        ForegroundStrategy::AllOnes => Ok(BinaryMask::ones(img.height(), img.width())),
        ForegroundStrategy::ExternalMask(path) => {
            let mask = io::load_mask(path)?;
            check_dims(img.dims(), mask.dims())?;
            Ok(mask)
        }
        ForegroundStrategy::BorderHeuristic(params) => border_heuristic(img, params),
    }
}

/// Foreground for a target that was resized from `original_dims`.
///
/// External masks are authored at the original resolution, so they are
/// checked against `original_dims` and then resized with the mask kernel.
/// The other strategies run directly on the resized image.
pub fn foreground_mask_resized(
    resized: &Image,
    original_dims: (usize, usize),
    strategy: &ForegroundStrategy,
) -> Result<BinaryMask> {
    match strategy {
        ForegroundStrategy::ExternalMask(path) => {
            let mask = io::load_mask(path)?;
            check_dims(original_dims, mask.dims())?;
            if mask.is_empty() {
                return Err(Error::EmptyForeground);
            }
            resize_mask_to(&mask, resized.height(), resized.width())
        }
        other => foreground_mask(resized, other),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn border_pixels(h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut px = Vec::with_capacity(2 * (h + w));
    for c in 0..w {
        px.push((0, c));
        if h > 1 {
            px.push((h - 1, c));
        }
    }
    for r in 1..h.saturating_sub(1) {
        px.push((r, 0));
        if w > 1 {
            px.push((r, w - 1));
        }
    }
    px
}

/// Per-channel median color over the image border.
pub fn median_border_color(img: &Image) -> [f64; CHANNELS] {
    let border = border_pixels(img.height(), img.width());
    let mut out = [0.0; CHANNELS];
    for (ch, slot) in out.iter_mut().enumerate() {
        let mut vals: Vec<f64> = border.iter().map(|&(r, c)| img.value(r, c, ch)).collect();
        *slot = median(&mut vals);
    }
    out
}

fn border_heuristic(img: &Image, params: &BorderParams) -> Result<BinaryMask> {
    let (h, w) = img.dims();
    let bg_color = median_border_color(img);
    let near_bg = BinaryMask::from_fn(h, w, |r, c| {
        img.pixel(r, c)
            .iter()
            .zip(bg_color)
            .all(|(v, b)| (v - b).abs() <= params.tolerance)
    });
    let background = flood_fill(&near_bg, border_pixels(h, w));
    let fg = BinaryMask::from_fn(h, w, |r, c| !background.get(r, c));
    let fg = remove_small_components(&fg, params.min_area);
    if fg.is_empty() {
        return Err(Error::EmptyForeground);
    }
    Ok(fg)
}
