//! Synthetic corpora for the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anomaly_inject::dataset::AnomalyClass;
use anomaly_inject::imagecore::{BinaryMask, Image};
use anomaly_inject::io::{save_image_png, save_mask_png};
use anomaly_inject::pipeline::PipelineConfig;
use anomaly_inject::poisson::PeMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

#[derive(Debug, Clone, Copy)]
pub enum Shape {
    Blob,
    Ring,
    Crack,
}

#[derive(Debug, Clone)]
pub struct PatternDef {
    pub id: &'static str,
    pub class: AnomalyClass,
    pub source: &'static str,
    /// Side of the anomaly's bounding box in source pixels.
    pub side: usize,
    pub raster: usize,
    pub shape: Shape,
}

impl PatternDef {
    pub const fn new(
        id: &'static str,
        class: AnomalyClass,
        source: &'static str,
        side: usize,
        raster: usize,
        shape: Shape,
    ) -> Self {
        PatternDef {
            id,
            class,
            source,
            side,
            raster,
            shape,
        }
    }
}

/// One pattern per scale band at a 256px foreground, plus a trivial one.
pub fn default_patterns() -> Vec<PatternDef> {
    use AnomalyClass::*;
    vec![
        PatternDef::new("large_stain", Stain, "dagm", 200, 240, Shape::Blob),
        PatternDef::new("large_hole", Hole, "kolektor", 190, 230, Shape::Ring),
        PatternDef::new("medium_crack", Crack, "mtd", 120, 200, Shape::Crack),
        PatternDef::new("medium_pits", Pits, "dagm", 100, 180, Shape::Blob),
        PatternDef::new("small_scratch", Scratch, "neu", 50, 160, Shape::Crack),
        PatternDef::new("trivial_impurity", Impurity, "neu", 16, 120, Shape::Blob),
    ]
}

pub struct Corpus {
    pub dir: TempDir,
    pub normal_dir: PathBuf,
    pub manifest: PathBuf,
    pub targets: Vec<PathBuf>,
}

impl Corpus {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self, out: &str) -> PipelineConfig {
        PipelineConfig {
            normal_dir: self.normal_dir.clone(),
            manifest_path: self.manifest.clone(),
            out_dir: self.root().join(out),
            seed: 17,
            mode: PeMode::Normal,
            ..PipelineConfig::default()
        }
    }
}

fn noise(rng: &mut ChaCha8Rng, amp: f64) -> f64 {
    (rng.random::<f64>() - 0.5) * amp
}

/// Smooth textured surface with mild noise.
pub fn normal_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = [
        0.45 + noise(&mut rng, 0.2),
        0.5 + noise(&mut rng, 0.2),
        0.55 + noise(&mut rng, 0.2),
    ];
    let (fy, fx) = (rng.random_range(0.02..0.06), rng.random_range(0.02..0.06));
    Image::from_fn(h, w, |r, c| {
        let wave = 0.06 * ((r as f64 * fy).sin() + (c as f64 * fx).cos());
        let n = noise(&mut rng, 0.04);
        std::array::from_fn(|ch| base[ch] + wave * (1.0 - 0.2 * ch as f64) + n)
    })
}

/// A bright source surface carrying one dark anomaly whose labelled mask is
/// dilated a little beyond the visible pattern.
pub fn anomaly_source(def: &PatternDef, seed: u64) -> (Image, BinaryMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = def.raster;
    let side = def.side as f64;
    let margin = 3.0;
    let top = rng.random_range(4.0..(n as f64 - side - 4.0).max(4.5));
    let left = rng.random_range(4.0..(n as f64 - side - 4.0).max(4.5));
    let (cy, cx) = (top + side / 2.0, left + side / 2.0);
    let half = side / 2.0 - margin;
    let thickness = (side * 0.08).max(2.0);
    let inside = |r: f64, c: f64| -> bool {
        let (y, x) = ((r - cy) / half, (c - cx) / half);
        match def.shape {
            Shape::Blob => y * y + x * x <= 1.0,
            Shape::Ring => {
                let d = (y * y + x * x).sqrt();
                d <= 1.0 && d >= 1.0 - thickness / half
            }
            Shape::Crack => {
                // A zig-zag along the main diagonal.
                let along = (y + x) / 2.0;
                let across = (y - x) / 2.0 - 0.25 * (along * 6.0).sin() * (1.0 - along.abs());
                along.abs() <= 1.0 && across.abs() * half <= thickness / 2.0
            }
        }
    };
    let dark = [
        0.12 + noise(&mut rng, 0.05),
        0.1,
        0.08 + noise(&mut rng, 0.05),
    ];
    let visible: Vec<bool> = (0..n * n)
        .map(|i| inside((i / n) as f64 + 0.5, (i % n) as f64 + 0.5))
        .collect();
    let image = Image::from_fn(n, n, |r, c| {
        let jitter = noise(&mut rng, 0.03);
        if visible[r * n + c] {
            std::array::from_fn(|ch| dark[ch] + jitter)
        } else {
            std::array::from_fn(|ch| 0.78 - 0.03 * ch as f64 + jitter)
        }
    });
    let dilate = 2isize;
    let mask = BinaryMask::from_fn(n, n, |r, c| {
        (-dilate..=dilate).any(|dr| {
            (-dilate..=dilate).any(|dc| {
                let (y, x) = (r as isize + dr, c as isize + dc);
                y >= 0
                    && x >= 0
                    && (y as usize) < n
                    && (x as usize) < n
                    && visible[y as usize * n + x as usize]
            })
        })
    });
    (image, mask)
}

/// Writes `n_targets` normal images and a manifest over `patterns`.
pub fn write_corpus(n_targets: usize, patterns: &[PatternDef]) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let normal_dir = dir.path().join("normal");
    let anomalies = dir.path().join("anomalies");
    fs::create_dir_all(&normal_dir).unwrap();
    fs::create_dir_all(&anomalies).unwrap();

    let targets: Vec<PathBuf> = (0..n_targets)
        .map(|i| {
            let path = normal_dir.join(format!("part_{i:03}.png"));
            save_image_png(&normal_image(1000 + i as u64, 300, 300), &path).unwrap();
            path
        })
        .collect();

    let mut lines = String::new();
    for (i, def) in patterns.iter().enumerate() {
        let (image, mask) = anomaly_source(def, 2000 + i as u64);
        save_image_png(&image, &anomalies.join(format!("{}.png", def.id))).unwrap();
        save_mask_png(&mask, &anomalies.join(format!("{}_mask.png", def.id))).unwrap();
        lines.push_str(&format!(
            "{{\"id\":\"{id}\",\"image\":\"anomalies/{id}.png\",\"mask\":\"anomalies/{id}_mask.png\",\"class\":\"{class}\",\"source\":\"{src}\"}}\n",
            id = def.id,
            class = def.class,
            src = def.source,
        ));
    }
    let manifest = dir.path().join("manifest.jsonl");
    fs::write(&manifest, lines).unwrap();
    Corpus {
        dir,
        normal_dir,
        manifest,
        targets,
    }
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn tree(root: &Path, skip: &BTreeSet<&str>) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            let rel = path.strip_prefix(root).unwrap().to_path_buf();
            if skip.contains(rel.to_str().unwrap()) {
                continue;
            }
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

pub fn read_meta(out: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(out.join("meta.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Dense Gaussian elimination over Ω built straight from the five-point
/// stencil. `offset` maps target coordinates to source ones by subtraction.
pub fn dense_poisson(
    target: &Image,
    source: &Image,
    omega: &BinaryMask,
    offset: (isize, isize),
    mode: PeMode,
) -> Vec<[f64; 3]> {
    let pixels: Vec<(usize, usize)> = omega.ones_iter().collect();
    let n = pixels.len();
    let lookup: BTreeMap<(usize, usize), usize> =
        pixels.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let src = |r: isize, c: isize, ch: usize| {
        let (y, x) = (r - offset.0, c - offset.1);
        (y >= 0 && x >= 0 && y < source.height() as isize && x < source.width() as isize)
            .then(|| source.value(y as usize, x as usize, ch))
    };
    let mut out = vec![[0.0; 3]; n];
    for ch in 0..3 {
        let mut a = vec![vec![0.0; n + 1]; n];
        for (i, &(r, c)) in pixels.iter().enumerate() {
            a[i][i] = 4.0;
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (qr, qc) = ((r as isize + dr) as usize, (c as isize + dc) as usize);
                match lookup.get(&(qr, qc)) {
                    Some(&j) => a[i][j] -= 1.0,
                    None => a[i][n] += target.value(qr, qc, ch),
                }
                let gp = src(r as isize, c as isize, ch).unwrap();
                let gs = src(qr as isize, qc as isize, ch).map_or(0.0, |gq| gp - gq);
                let gt = target.value(r, c, ch) - target.value(qr, qc, ch);
                a[i][n] += match mode {
                    PeMode::Mixed if gt.abs() > gs.abs() => gt,
                    _ => gs,
                };
            }
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for k in col..=n {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        for row in (0..n).rev() {
            let mut acc = a[row][n];
            for k in row + 1..n {
                acc -= a[row][k] * out[k][ch];
            }
            out[row][ch] = acc / a[row][row];
        }
    }
    out
}
