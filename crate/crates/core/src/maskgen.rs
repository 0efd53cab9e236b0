//! Ground-truth masks for synthesized images, from the per-pixel difference
//! against the untouched target.

use crate::error::{Error, Result};
use crate::imagecore::{binarize, check_dims, BinaryMask, Image, CHANNELS};
use crate::regions::remove_small_components;

pub const DEFAULT_THRESHOLD: f64 = 25.0 / 255.0;
pub const DEFAULT_MIN_COMPONENT_AREA: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskGenParams {
    pub threshold: f64,
    pub min_component_area: usize,
}

impl Default for MaskGenParams {
    fn default() -> Self {
        MaskGenParams {
            threshold: DEFAULT_THRESHOLD,
            min_component_area: DEFAULT_MIN_COMPONENT_AREA,
        }
    }
}

impl MaskGenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold {} must lie in (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// `|a - b|` per channel.
pub fn difference_map(a: &Image, b: &Image) -> Result<Image> {
    check_dims(a.dims(), b.dims())?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .collect();
    Image::new(a.height(), a.width(), data)
}

/// The difference map reduced to one channel by its maximum.
pub fn max_channel_difference(a: &Image, b: &Image) -> Result<Vec<f64>> {
    let d = difference_map(a, b)?;
    Ok(d.data()
        .chunks_exact(CHANNELS)
        .map(|px| px.iter().copied().fold(0.0, f64::max))
        .collect())
}

/// Thresholds the difference map, restricts it to `omega_fg` and removes
/// specks below the minimum component area.
///
/// An empty result is reported as [`Error::NoVisibleAnomaly`].
pub fn derive_mask(
    synth: &Image,
    target: &Image,
    omega_fg: &BinaryMask,
    params: &MaskGenParams,
) -> Result<BinaryMask> {
    check_dims(target.dims(), omega_fg.dims())?;
    let diff = difference_map(synth, target)?;
    let raw = binarize(&diff, params.threshold).intersect(omega_fg)?;
    let mask = remove_small_components(&raw, params.min_component_area);
    if mask.is_empty() {
        return Err(Error::NoVisibleAnomaly);
    }
    Ok(mask)
}
