//! Injection location selection.
//!
//! A center is legal when it lies on the target foreground and the pattern's
//! bounding box, centered there, stays inside the raster with one pixel of
//! margin on every side (so the blended region always has a boundary ring).

use rand::Rng;

use crate::error::{Error, Result};
use crate::imagecore::{minbb, BBox, BinaryMask};

/// Where a pattern lands in the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub center: (usize, usize),
    /// Pattern bounding box in target coordinates.
    pub target_box: BBox,
    /// Pattern bounding box in the resized-source raster.
    pub source_box: BBox,
    /// Translated pattern support over the target raster.
    pub omega: BinaryMask,
}

impl Placement {
    /// Maps a target pixel to the matching position in the resized source
    /// (signed, may fall outside the source raster).
    pub fn to_source(&self, row: usize, col: usize) -> (isize, isize) {
        (
            row as isize - self.target_box.top as isize + self.source_box.top as isize,
            col as isize - self.target_box.left as isize + self.source_box.left as isize,
        )
    }
}

/// Inclusive range of legal center coordinates along one axis, if any.
fn center_range(extent: usize, side: usize) -> Option<(usize, usize)> {
    // top = center - side/2 must satisfy 1 <= top and top + side - 1 <= extent - 2.
    if extent < side + 2 {
        return None;
    }
    let half = side / 2;
    Some((1 + half, extent - 1 - side + half))
}

/// `S1 ∩ S2`: foreground pixels at which the pattern box fits with margin.
/// Returned in row-major order.
pub fn candidate_locations(
    fg_mask: &BinaryMask,
    pattern_mask: &BinaryMask,
) -> Result<Vec<(usize, usize)>> {
    let bb = minbb(pattern_mask)?;
    let (h, w) = fg_mask.dims();
    let no_fit = || Error::NoCandidateLocation {
        height: bb.height,
        width: bb.width,
    };
    let (r0, r1) = center_range(h, bb.height).ok_or_else(no_fit)?;
    let (c0, c1) = center_range(w, bb.width).ok_or_else(no_fit)?;
    let mut out = Vec::new();
    for r in r0..=r1 {
        out.extend((c0..=c1).filter(|&c| fg_mask.get(r, c)).map(|c| (r, c)));
    }
    if out.is_empty() {
        return Err(no_fit());
    }
    Ok(out)
}

/// Uniform pick from `candidates`.
pub fn sample_location<R: Rng + ?Sized>(
    candidates: &[(usize, usize)],
    rng: &mut R,
) -> Result<(usize, usize)> {
    if candidates.is_empty() {
        return Err(Error::NoCandidateLocation {
            height: 0,
            width: 0,
        });
    }
    let i = rng.random_range(0..candidates.len() as u64) as usize;
    Ok(candidates[i])
}

/// Translates the pattern support so its bounding-box center sits at `center`.
pub fn materialize_placement(
    pattern_mask: &BinaryMask,
    center: (usize, usize),
    target_dims: (usize, usize),
) -> Result<Placement> {
    let source_box = minbb(pattern_mask)?;
    let (h, w) = target_dims;
    let (Some((r0, r1)), Some((c0, c1))) = (
        center_range(h, source_box.height),
        center_range(w, source_box.width),
    ) else {
        return Err(Error::IllegalPlacement(center));
    };
    if !(r0..=r1).contains(&center.0) || !(c0..=c1).contains(&center.1) {
        return Err(Error::IllegalPlacement(center));
    }
    let target_box = BBox::new(
        center.0 - source_box.height / 2,
        center.1 - source_box.width / 2,
        source_box.height,
        source_box.width,
    );
    let mut omega = BinaryMask::zeros(h, w);
    for dr in 0..source_box.height {
        for dc in 0..source_box.width {
            if pattern_mask.get(source_box.top + dr, source_box.left + dc) {
                omega.set(target_box.top + dr, target_box.left + dc, true);
            }
        }
    }
    Ok(Placement {
        center,
        target_box,
        source_box,
        omega,
    })
}
