//! Gradient-domain injection.
//!
//! For every pixel `p` of the pattern region Ω and each color channel the
//! blended value `f` satisfies
//!
//! ```text
//! 4 f_p - Σ_{q ∈ N(p) ∩ Ω} f_q = Σ_{q ∈ N(p) ∩ ∂Ω} t_q + Σ_{q ∈ N(p)} v_pq
//! ```
//!
//! where `t` is the target and `v_pq` the guidance gradient: the source
//! gradient `g_p - g_q` in [`PeMode::Normal`], or whichever of the source and
//! target gradients is larger in magnitude in [`PeMode::Mixed`].

mod solver;

pub use solver::{
    solve_poisson, solve_poisson_with, Preconditioner, Solution, SolverOptions, DEFAULT_TOL,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{check_dims, BinaryMask, Image, CHANNELS};
use crate::placement::Placement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeMode {
    Normal,
    Mixed,
}

impl std::str::FromStr for PeMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(PeMode::Normal),
            "mixed" => Ok(PeMode::Mixed),
            other => Err(format!(
                "unknown blending mode {other:?} (expected normal or mixed)"
            )),
        }
    }
}

/// Classification of one 4-neighbor of an interior pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbor {
    /// Index into [`PoissonSystem::interior`].
    Interior(u32),
    /// Index into [`PoissonSystem::boundary`].
    Boundary(u32),
}

/// Offsets of the 4-neighborhood, in the order stored in `neighbors`.
pub const NEIGHBOR_OFFSETS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Debug, Clone)]
pub struct PoissonSystem {
    /// Ω in row-major order.
    pub interior: Vec<(usize, usize)>,
    /// Up, down, left, right neighbor of each interior pixel.
    pub neighbors: Vec<[Neighbor; 4]>,
    /// ∂Ω in first-seen order.
    pub boundary: Vec<(usize, usize)>,
    /// Target intensities on ∂Ω, per channel.
    pub boundary_values: [Vec<f64>; CHANNELS],
    pub rhs: [Vec<f64>; CHANNELS],
    /// Target intensities on Ω, used as the solver's starting point.
    pub initial: [Vec<f64>; CHANNELS],
}

impl PoissonSystem {
    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    /// Number of (interior, boundary) neighbor pairs.
    pub fn boundary_edges(&self) -> usize {
        self.neighbors
            .iter()
            .flatten()
            .filter(|n| matches!(n, Neighbor::Boundary(_)))
            .count()
    }

    /// `A x` for the system matrix (4 on the diagonal, -1 per interior neighbor).
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            let mut acc = 4.0 * x[i];
            for n in nbrs {
                if let Neighbor::Interior(j) = *n {
                    acc -= x[j as usize];
                }
            }
            out[i] = acc;
        }
    }

    /// Max-norm of `rhs[channel] - A x`.
    pub fn residual_max(&self, channel: usize, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.apply(x, &mut ax);
        self.rhs[channel]
            .iter()
            .zip(&ax)
            .map(|(b, a)| (b - a).abs())
            .fold(0.0, f64::max)
    }
}

/// Source value at signed source coordinates, if inside the raster.
#[inline]
fn source_at(source: &Image, (r, c): (isize, isize), ch: usize) -> Option<f64> {
    (r >= 0 && c >= 0 && (r as usize) < source.height() && (c as usize) < source.width())
        .then(|| source.value(r as usize, c as usize, ch))
}

/// Assembles the discrete Poisson system over `placement.omega`.
///
/// `source` is the full resized source raster; `placement.source_box` locates
/// the pattern inside it. A source gradient whose far end falls outside that
/// raster is taken as zero.
pub fn build_system(
    target: &Image,
    source: &Image,
    placement: &Placement,
    mode: PeMode,
) -> Result<PoissonSystem> {
    let (h, w) = target.dims();
    check_dims((h, w), placement.omega.dims())?;
    let sb = placement.source_box;
    if sb.top + sb.height > source.height() || sb.left + sb.width > source.width() {
        return Err(Error::MisalignedSource {
            source_dims: source.dims(),
            top: sb.top,
            left: sb.left,
            height: sb.height,
            width: sb.width,
        });
    }

    let interior: Vec<(usize, usize)> = placement.omega.ones_iter().collect();
    if interior.is_empty() {
        return Err(Error::EmptyMask);
    }
    const NONE: u32 = u32::MAX;
    let mut interior_id = vec![NONE; h * w];
    for (k, &(r, c)) in interior.iter().enumerate() {
        if r == 0 || c == 0 || r + 1 >= h || c + 1 >= w {
            return Err(Error::IllegalPlacement(placement.center));
        }
        interior_id[r * w + c] = k as u32;
    }

    let mut boundary_id = vec![NONE; h * w];
    let mut boundary = Vec::new();
    let mut neighbors = Vec::with_capacity(interior.len());
    let mut rhs: [Vec<f64>; CHANNELS] = std::array::from_fn(|_| vec![0.0; interior.len()]);

    for (k, &(r, c)) in interior.iter().enumerate() {
        let mut nbrs = [Neighbor::Interior(0); 4];
        let sp = placement.to_source(r, c);
        for (slot, (dr, dc)) in nbrs.iter_mut().zip(NEIGHBOR_OFFSETS) {
            let (qr, qc) = ((r as isize + dr) as usize, (c as isize + dc) as usize);
            let qi = qr * w + qc;
            *slot = if interior_id[qi] != NONE {
                Neighbor::Interior(interior_id[qi])
            } else {
                if boundary_id[qi] == NONE {
                    boundary_id[qi] = boundary.len() as u32;
                    boundary.push((qr, qc));
                }
                Neighbor::Boundary(boundary_id[qi])
            };
            let sq = (sp.0 + dr, sp.1 + dc);
            for (ch, b) in rhs.iter_mut().enumerate() {
                let t_q = target.value(qr, qc, ch);
                if matches!(slot, Neighbor::Boundary(_)) {
                    b[k] += t_q;
                }
                let g_p = source_at(source, sp, ch).expect("pattern pixel inside source box");
                let source_grad = source_at(source, sq, ch).map_or(0.0, |g_q| g_p - g_q);
                let guidance = match mode {
                    PeMode::Normal => source_grad,
                    PeMode::Mixed => {
                        let target_grad = target.value(r, c, ch) - t_q;
                        if target_grad.abs() > source_grad.abs() {
                            target_grad
                        } else {
                            source_grad
                        }
                    }
                };
                b[k] += guidance;
            }
        }
        neighbors.push(nbrs);
    }

    let boundary_values = std::array::from_fn(|ch| {
        boundary
            .iter()
            .map(|&(r, c)| target.value(r, c, ch))
            .collect()
    });
    let initial = std::array::from_fn(|ch| {
        interior
            .iter()
            .map(|&(r, c)| target.value(r, c, ch))
            .collect()
    });

    Ok(PoissonSystem {
        interior,
        neighbors,
        boundary,
        boundary_values,
        rhs,
        initial,
    })
}

/// Blends the pattern into `target` and keeps the result only on
/// `Ω ∩ foreground`; every other pixel is copied from `target`.
pub fn inject(
    target: &Image,
    fg_mask: &BinaryMask,
    placement: &Placement,
    source: &Image,
    mode: PeMode,
    tol: f64,
) -> Result<Image> {
    inject_with(
        target,
        fg_mask,
        placement,
        source,
        mode,
        &SolverOptions {
            tol,
            ..SolverOptions::default()
        },
    )
}

pub fn inject_with(
    target: &Image,
    fg_mask: &BinaryMask,
    placement: &Placement,
    source: &Image,
    mode: PeMode,
    options: &SolverOptions,
) -> Result<Image> {
    check_dims(target.dims(), fg_mask.dims())?;
    let region = placement.omega.intersect(fg_mask)?;
    if region.is_empty() {
        return Err(Error::FilteredOut);
    }
    let system = build_system(target, source, placement, mode)?;
    let solution = solve_poisson_with(&system, options)?;
    let mut out = target.clone();
    for (k, &(r, c)) in system.interior.iter().enumerate() {
        if fg_mask.get(r, c) {
            out.set_pixel(r, c, std::array::from_fn(|ch| solution.values[ch][k]));
        }
    }
    Ok(out)
}
