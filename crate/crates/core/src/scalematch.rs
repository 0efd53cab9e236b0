//! Source-target scale matching and the multi-scale quota scheduler.
//!
//! The source-target ratio `R` compares the largest side of an anomaly's
//! bounding box with that of the target foreground. Patterns are only ever
//! resized to a scale class at or below their own, and larger classes are
//! served first while their quota is open.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{minbb, resize_image, resize_mask, BinaryMask, Image};

/// Smallest allowed side of a resized pattern's bounding box, in pixels.
pub const MIN_PATTERN_SIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScaleClass {
    Trivial,
    Small,
    Medium,
    Large,
}

impl ScaleClass {
    /// Interval `R'` is drawn from; `(lo, hi, hi_inclusive)`.
    pub fn interval(self) -> Option<(f64, f64, bool)> {
        match self {
            ScaleClass::Trivial => None,
            ScaleClass::Small => Some((0.1, 0.3, false)),
            ScaleClass::Medium => Some((0.3, 0.7, false)),
            ScaleClass::Large => Some((0.7, 1.0, true)),
        }
    }

    pub fn contains(self, r: f64) -> bool {
        match self.interval() {
            None => r < 0.1,
            Some((lo, hi, true)) => r >= lo && r <= hi,
            Some((lo, hi, false)) => r >= lo && r < hi,
        }
    }
}

pub fn classify_scale(r: f64) -> ScaleClass {
    if r < 0.1 {
        ScaleClass::Trivial
    } else if r < 0.3 {
        ScaleClass::Small
    } else if r < 0.7 {
        ScaleClass::Medium
    } else {
        ScaleClass::Large
    }
}

/// `max(minbb(anomaly)) / max(minbb(foreground))`.
pub fn compute_str(anomaly_mask: &BinaryMask, fg_mask: &BinaryMask) -> Result<f64> {
    let s_a = minbb(anomaly_mask)?.max_side();
    let s_f = minbb(fg_mask)?.max_side();
    Ok(s_a as f64 / s_f as f64)
}

/// Per-target large/medium/small targets and counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Quota {
    pub target_large: u32,
    pub target_medium: u32,
    pub target_small: u32,
    pub large: u32,
    pub medium: u32,
    pub small: u32,
}

impl Quota {
    pub fn new(large: u32, medium: u32, small: u32) -> Self {
        Quota {
            target_large: large,
            target_medium: medium,
            target_small: small,
            ..Quota::default()
        }
    }

    pub fn is_open(&self, class: ScaleClass) -> bool {
        match class {
            ScaleClass::Large => self.large < self.target_large,
            ScaleClass::Medium => self.medium < self.target_medium,
            ScaleClass::Small => self.small < self.target_small,
            ScaleClass::Trivial => false,
        }
    }

    pub fn is_satisfied(&self) -> bool {
        !(self.is_open(ScaleClass::Large)
            || self.is_open(ScaleClass::Medium)
            || self.is_open(ScaleClass::Small))
    }

    pub fn total_target(&self) -> u32 {
        self.target_large + self.target_medium + self.target_small
    }

    pub fn counters(&self) -> (u32, u32, u32) {
        (self.large, self.medium, self.small)
    }

    /// Counts one synthesis of `class`; panics if that quota is already full.
    pub fn record(&mut self, class: ScaleClass) {
        assert!(self.is_open(class), "quota for {class:?} is not open");
        match class {
            ScaleClass::Large => self.large += 1,
            ScaleClass::Medium => self.medium += 1,
            ScaleClass::Small => self.small += 1,
            ScaleClass::Trivial => unreachable!(),
        }
    }
}

/// Scale class a source of ratio `r` should be synthesized at, given the
/// quota state; `None` when the pattern is trivial or nothing it may serve
/// is still open.
pub fn choose_scale(r: f64, quota: &Quota) -> Option<ScaleClass> {
    let ladder: &[ScaleClass] = match classify_scale(r) {
        ScaleClass::Trivial => &[],
        ScaleClass::Large => &[ScaleClass::Large, ScaleClass::Medium, ScaleClass::Small],
        ScaleClass::Medium => &[ScaleClass::Medium, ScaleClass::Small],
        ScaleClass::Small => &[ScaleClass::Small],
    };
    ladder.iter().copied().find(|&c| quota.is_open(c))
}

/// Uniform draw of the synthesis ratio within `class`'s interval.
pub fn draw_synthesis_str<R: Rng + ?Sized>(class: ScaleClass, rng: &mut R) -> f64 {
    match class.interval() {
        Some((lo, hi, true)) => rng.random_range(lo..=hi),
        Some((lo, hi, false)) => rng.random_range(lo..hi),
        None => panic!("trivial patterns are never synthesized"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePlan {
    /// Original source-target ratio.
    pub str_original: f64,
    /// Synthesis ratio the resized pattern should exhibit.
    pub str_synthesis: f64,
    /// Resize ratio `str_synthesis / str_original`.
    pub ratio: f64,
    pub scale: ScaleClass,
}

impl ScalePlan {
    pub fn new(str_original: f64, str_synthesis: f64, scale: ScaleClass) -> Self {
        ScalePlan {
            str_original,
            str_synthesis,
            ratio: str_synthesis / str_original,
            scale,
        }
    }
}

/// Picks the scale class and `R'` for a source with ratio `r`, and counts it
/// against `quota`. Returns `None` (quota untouched) when the pattern has to
/// be discarded.
pub fn select_synthesis_str<R: Rng + ?Sized>(
    r: f64,
    quota: &mut Quota,
    rng: &mut R,
) -> Option<ScalePlan> {
    let class = choose_scale(r, quota)?;
    let r_prime = draw_synthesis_str(class, rng);
    quota.record(class);
    Some(ScalePlan::new(r, r_prime, class))
}

/// Resizes a source image/mask pair by `plan.ratio`.
///
/// Fails if the mask vanishes or the resized pattern's bounding box has a
/// side under [`MIN_PATTERN_SIDE`].
pub fn resize_for_injection(
    image: &Image,
    mask: &BinaryMask,
    plan: &ScalePlan,
) -> Result<(Image, BinaryMask)> {
    if !(plan.ratio.is_finite() && plan.ratio > 0.0) {
        return Err(Error::ZeroSizedResize { ratio: plan.ratio });
    }
    crate::imagecore::check_dims(image.dims(), mask.dims())?;
    let resized_mask = resize_mask(mask, plan.ratio)?;
    let bb = minbb(&resized_mask)?;
    if bb.height < MIN_PATTERN_SIDE || bb.width < MIN_PATTERN_SIDE {
        return Err(Error::PatternTooSmall {
            height: bb.height,
            width: bb.width,
            min_side: MIN_PATTERN_SIDE,
        });
    }
    let resized_image = resize_image(image, plan.ratio)?;
    Ok((resized_image, resized_mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn boxed(h: usize, w: usize, bh: usize, bw: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| r >= 1 && r < 1 + bh && c >= 2 && c < 2 + bw)
    }

    #[test]
    fn str_arithmetic() {
        let anomaly = boxed(100, 100, 40, 60);
        let fg = boxed(256, 256, 200, 150);
        let r = compute_str(&anomaly, &fg).unwrap();
        assert!((r - 0.3).abs() < 1e-12);
        assert_eq!(compute_str(&fg, &fg).unwrap(), 1.0);

        let tiny = boxed(40, 40, 15, 10);
        let r = compute_str(&tiny, &fg).unwrap();
        assert!((r - 0.075).abs() < 1e-12);
        assert_eq!(classify_scale(r), ScaleClass::Trivial);
    }

    #[test]
    fn str_of_empty_mask_fails() {
        let fg = BinaryMask::ones(8, 8);
        assert!(matches!(
            compute_str(&BinaryMask::zeros(8, 8), &fg),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn classification_boundaries() {
        assert_eq!(classify_scale(0.0999), ScaleClass::Trivial);
        assert_eq!(classify_scale(0.1), ScaleClass::Small);
        assert_eq!(classify_scale(0.2999), ScaleClass::Small);
        assert_eq!(classify_scale(0.3), ScaleClass::Medium);
        assert_eq!(classify_scale(0.6999), ScaleClass::Medium);
        assert_eq!(classify_scale(0.7), ScaleClass::Large);
        assert_eq!(classify_scale(3.5), ScaleClass::Large);
    }

    #[test]
    fn large_source_fills_large_first() {
        let mut q = Quota::new(4, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = select_synthesis_str(0.8, &mut q, &mut rng).unwrap();
        assert_eq!(plan.scale, ScaleClass::Large);
        assert!((0.7..=1.0).contains(&plan.str_synthesis));
        assert_eq!(q.counters(), (1, 0, 0));
    }

    #[test]
    fn medium_source_falls_back_to_small() {
        let mut q = Quota::new(4, 3, 3);
        q.medium = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = select_synthesis_str(0.5, &mut q, &mut rng).unwrap();
        assert_eq!(plan.scale, ScaleClass::Small);
        assert!((0.1..0.3).contains(&plan.str_synthesis));
        assert_eq!(q.counters(), (0, 3, 1));
    }

    #[test]
    fn trivial_and_full_sources_are_discarded() {
        let mut q = Quota::new(4, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(select_synthesis_str(0.05, &mut q, &mut rng).is_none());
        q.small = 3;
        assert!(select_synthesis_str(0.2, &mut q, &mut rng).is_none());
        assert_eq!(q.counters(), (0, 0, 3));
    }

    #[test]
    fn resize_plan_arithmetic() {
        let img = Image::filled(100, 200, [0.5; 3]);
        let mask = BinaryMask::from_fn(100, 200, |r, c| {
            (20..80).contains(&r) && (20..180).contains(&c)
        });
        let plan = ScalePlan::new(0.5, 0.25, ScaleClass::Small);
        assert_eq!(plan.ratio, 0.5);
        let (i2, m2) = resize_for_injection(&img, &mask, &plan).unwrap();
        assert_eq!(i2.dims(), (50, 100));
        assert_eq!(m2.dims(), (50, 100));

        let same = ScalePlan::new(0.4, 0.4, ScaleClass::Medium);
        let (i3, m3) = resize_for_injection(&img, &mask, &same).unwrap();
        assert_eq!(i3, img);
        assert_eq!(m3, mask);
    }

    #[test]
    fn resize_rejects_tiny_patterns() {
        let img = Image::filled(64, 64, [0.5; 3]);
        let mask = BinaryMask::from_fn(64, 64, |r, c| {
            (10..50).contains(&r) && (30..36).contains(&c)
        });
        let plan = ScalePlan::new(0.5, 0.25, ScaleClass::Small);
        assert!(matches!(
            resize_for_injection(&img, &mask, &plan),
            Err(Error::PatternTooSmall { .. })
        ));
    }

    /// Re-measures the resized pattern with an independent minbb scan and
    /// checks the achieved ratio against `R'` within one foreground pixel.
    #[test]
    fn resized_pattern_hits_requested_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        while checked < 100 {
            let fg_side = rng.random_range(64..=256usize);
            let fg = BinaryMask::ones(fg_side, fg_side);
            let (h, w) = (
                rng.random_range(40..200usize),
                rng.random_range(40..200usize),
            );
            let bh = rng.random_range(8..h - 4);
            let bw = rng.random_range(8..w - 4);
            let (t, l) = (rng.random_range(0..h - bh), rng.random_range(0..w - bw));
            let mask =
                BinaryMask::from_fn(h, w, |r, c| r >= t && r < t + bh && c >= l && c < l + bw);
            let img = Image::filled(h, w, [0.5; 3]);
            let r = compute_str(&mask, &fg).unwrap();
            let mut quota = Quota::new(1, 1, 1);
            let Some(plan) = select_synthesis_str(r, &mut quota, &mut rng) else {
                continue;
            };
            let Ok((_, resized)) = resize_for_injection(&img, &mask, &plan) else {
                continue;
            };
            let (mut top, mut bottom, mut left, mut right) = (usize::MAX, 0, usize::MAX, 0);
            for (r, c) in resized.ones_iter() {
                top = top.min(r);
                bottom = bottom.max(r);
                left = left.min(c);
                right = right.max(c);
            }
            let side = (bottom - top + 1).max(right - left + 1);
            let achieved = side as f64 / fg_side as f64;
            assert!(
                (achieved - plan.str_synthesis).abs() <= 1.0 / fg_side as f64 + 1e-12,
                "achieved {achieved} vs requested {}",
                plan.str_synthesis
            );
            checked += 1;
        }
    }

    proptest! {
        #[test]
        fn plan_stays_in_interval(r in 0.0f64..3.0, seed: u64, l in 0u32..3, m in 0u32..3, s in 0u32..3) {
            let mut quota = Quota::new(l, m, s);
            let before = quota;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match select_synthesis_str(r, &mut quota, &mut rng) {
                None => prop_assert_eq!(quota, before),
                Some(plan) => {
                    prop_assert!(plan.scale != ScaleClass::Trivial);
                    prop_assert!(plan.scale <= classify_scale(r));
                    prop_assert!(plan.scale.contains(plan.str_synthesis));
                    let back = plan.ratio * plan.str_original;
                    prop_assert!((back - plan.str_synthesis).abs() <= 1e-9);
                    prop_assert!(quota.large <= quota.target_large);
                    prop_assert!(quota.medium <= quota.target_medium);
                    prop_assert!(quota.small <= quota.target_small);
                }
            }
        }

        #[test]
        fn str_class_invariant_under_uniform_scaling(
            bh in 1usize..20, bw in 1usize..20, fh in 1usize..20, fw in 1usize..20, k in 1usize..5,
        ) {
            let a = BinaryMask::from_fn(bh, bw, |_, _| true);
            let f = BinaryMask::from_fn(fh, fw, |_, _| true);
            let ak = BinaryMask::from_fn(bh * k, bw * k, |_, _| true);
            let fk = BinaryMask::from_fn(fh * k, fw * k, |_, _| true);
            let r1 = compute_str(&a, &f).unwrap();
            let r2 = compute_str(&ak, &fk).unwrap();
            prop_assert_eq!(r1, r2);
            prop_assert_eq!(classify_scale(r1), classify_scale(r2));
        }

        #[test]
        fn unbounded_supply_meets_targets(seed: u64, l in 0u32..6, m in 0u32..6, s in 1u32..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut quota = Quota::new(l, m, s);
            let mut guard = 0;
            while !quota.is_satisfied() {
                let r: f64 = rng.random_range(0.0..1.5);
                let _ = select_synthesis_str(r, &mut quota, &mut rng);
                guard += 1;
                prop_assert!(guard < 100_000);
            }
            prop_assert_eq!(quota.counters(), (l, m, s));
        }
    }
}
