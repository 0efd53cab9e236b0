//! 4-connected region utilities over binary masks.

use std::collections::VecDeque;

use crate::imagecore::BinaryMask;

fn neighbors4(
    (r, c): (usize, usize),
    (h, w): (usize, usize),
) -> impl Iterator<Item = (usize, usize)> {
    let up = (r > 0).then(|| (r - 1, c));
    let down = (r + 1 < h).then(|| (r + 1, c));
    let left = (c > 0).then(|| (r, c - 1));
    let right = (c + 1 < w).then(|| (r, c + 1));
    [up, down, left, right].into_iter().flatten()
}

/// 4-connected components of the set pixels, each in BFS order. Components
/// are ordered by their first pixel in row-major order.
pub fn components(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let dims = mask.dims();
    let mut seen = vec![false; dims.0 * dims.1];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in mask.ones_iter() {
        if seen[start.0 * dims.1 + start.1] {
            continue;
        }
        seen[start.0 * dims.1 + start.1] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            for q in neighbors4(p, dims) {
                let i = q.0 * dims.1 + q.1;
                if mask.get(q.0, q.1) && !seen[i] {
                    seen[i] = true;
                    queue.push_back(q);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Clears every 4-connected component with fewer than `min_area` pixels.
pub fn remove_small_components(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    if min_area <= 1 {
        return mask.clone();
    }
    let mut out = mask.clone();
    for comp in components(mask).into_iter().filter(|c| c.len() < min_area) {
        for (r, c) in comp {
            out.set(r, c, false);
        }
    }
    out
}

/// Pixels reachable from `seeds` through `passable` pixels (4-connectivity).
/// Seeds that are not passable are ignored.
pub fn flood_fill(
    passable: &BinaryMask,
    seeds: impl IntoIterator<Item = (usize, usize)>,
) -> BinaryMask {
    let dims = passable.dims();
    let mut filled = BinaryMask::zeros(dims.0, dims.1);
    let mut queue = VecDeque::new();
    for s in seeds {
        if passable.get(s.0, s.1) && !filled.get(s.0, s.1) {
            filled.set(s.0, s.1, true);
            queue.push_back(s);
        }
    }
    while let Some(p) = queue.pop_front() {
        for q in neighbors4(p, dims) {
            if passable.get(q.0, q.1) && !filled.get(q.0, q.1) {
                filled.set(q.0, q.1, true);
                queue.push_back(q);
            }
        }
    }
    filled
}
