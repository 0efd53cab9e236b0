//! Anomaly manifest: one JSON object per line with keys `id`, `image`,
//! `mask`, `class` and `source`. Paths are relative to the manifest's
//! directory.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// The eight industrial anomaly classes of the manifest taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyClass {
    Pits,
    Crack,
    Hole,
    Stain,
    Scratch,
    Orifice,
    Impurity,
    Abrasion,
}

impl AnomalyClass {
    pub const ALL: [AnomalyClass; 8] = [
        AnomalyClass::Pits,
        AnomalyClass::Crack,
        AnomalyClass::Hole,
        AnomalyClass::Stain,
        AnomalyClass::Scratch,
        AnomalyClass::Orifice,
        AnomalyClass::Impurity,
        AnomalyClass::Abrasion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyClass::Pits => "Pits",
            AnomalyClass::Crack => "Crack",
            AnomalyClass::Hole => "Hole",
            AnomalyClass::Stain => "Stain",
            AnomalyClass::Scratch => "Scratch",
            AnomalyClass::Orifice => "Orifice",
            AnomalyClass::Impurity => "Impurity",
            AnomalyClass::Abrasion => "Abrasion",
        }
    }
}

impl fmt::Display for AnomalyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownClass(pub String);

impl fmt::Display for UnknownClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown anomaly class {:?}", self.0)
    }
}

impl std::error::Error for UnknownClass {}

impl FromStr for AnomalyClass {
    type Err = UnknownClass;

    /// Case-insensitive match against the eight class names; anything else
    /// is rejected.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        AnomalyClass::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnomalyRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub anomaly_class: AnomalyClass,
    pub source_tag: String,
}

#[derive(Debug, Deserialize)]
struct ManifestLine {
    id: String,
    image: String,
    mask: String,
    class: String,
    source: String,
}

/// A manifest record that was dropped during loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRecord {
    /// 1-based line number in the manifest.
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

/// Immutable index over the usable, non-excluded records of a manifest.
#[derive(Debug, Clone)]
pub struct ManifestIndex {
    records: Vec<AnomalyRecord>,
    by_class: BTreeMap<AnomalyClass, Vec<usize>>,
    excluded_sources: BTreeSet<String>,
    skipped: Vec<SkippedRecord>,
    excluded_count: usize,
}

fn normalize_source(s: &str) -> String {
    s.trim().to_ascii_lowercase()
}

impl ManifestIndex {
    /// Builds an index from already-validated records, dropping any whose
    /// source is excluded.
    pub fn from_records(
        records: impl IntoIterator<Item = AnomalyRecord>,
        excluded_sources: &BTreeSet<String>,
    ) -> Self {
        let excluded_sources: BTreeSet<String> = excluded_sources
            .iter()
            .map(|s| normalize_source(s))
            .collect();
        let mut kept = Vec::new();
        let mut excluded_count = 0;
        for record in records {
            if excluded_sources.contains(&normalize_source(&record.source_tag)) {
                excluded_count += 1;
            } else {
                kept.push(record);
            }
        }
        let mut by_class: BTreeMap<AnomalyClass, Vec<usize>> = BTreeMap::new();
        for (i, record) in kept.iter().enumerate() {
            by_class.entry(record.anomaly_class).or_default().push(i);
        }
        ManifestIndex {
            records: kept,
            by_class,
            excluded_sources,
            skipped: Vec::new(),
            excluded_count,
        }
    }

    pub fn records(&self) -> &[AnomalyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn by_class(&self) -> &BTreeMap<AnomalyClass, Vec<usize>> {
        &self.by_class
    }

    pub fn excluded_sources(&self) -> &BTreeSet<String> {
        &self.excluded_sources
    }

    pub fn skipped(&self) -> &[SkippedRecord] {
        &self.skipped
    }

    /// Number of valid records dropped because their source is excluded.
    pub fn excluded_count(&self) -> usize {
        self.excluded_count
    }

    pub fn get(&self, id: &str) -> Option<&AnomalyRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Record indices eligible under `class_filter`, ascending.
    pub fn eligible(&self, class_filter: Option<&BTreeSet<AnomalyClass>>) -> Vec<usize> {
        match class_filter {
            None => (0..self.records.len()).collect(),
            Some(filter) => {
                let mut idx: Vec<usize> = filter
                    .iter()
                    .filter_map(|c| self.by_class.get(c))
                    .flatten()
                    .copied()
                    .collect();
                idx.sort_unstable();
                idx
            }
        }
    }
}

fn validate(record: &AnomalyRecord) -> std::result::Result<(), String> {
    let image_dims = io::raster_dims(&record.image_path).map_err(|e| e.to_string())?;
    // Masks are decoded in full: emptiness cannot be read from a header.
    let mask = io::load_mask(&record.mask_path).map_err(|e| e.to_string())?;
    if mask.dims() != image_dims {
        return Err(format!(
            "image is {}x{} but mask is {}x{}",
            image_dims.0,
            image_dims.1,
            mask.height(),
            mask.width()
        ));
    }
    if mask.is_empty() {
        return Err("mask has no nonzero pixels".into());
    }
    Ok(())
}

/// Loads and validates a manifest, skipping (and logging) malformed records.
pub fn load_manifest(path: &Path, excluded_sources: &BTreeSet<String>) -> Result<ManifestIndex> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let excluded: BTreeSet<String> = excluded_sources
        .iter()
        .map(|s| normalize_source(s))
        .collect();

    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    let mut excluded_count = 0;

    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ManifestLine = match serde_json::from_str(line) {
            Ok(raw) => raw,
            Err(e) => {
                skipped.push(SkippedRecord {
                    line: line_no,
                    id: None,
                    reason: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        let class = match raw.class.parse::<AnomalyClass>() {
            Ok(c) => c,
            Err(e) => {
                skipped.push(SkippedRecord {
                    line: line_no,
                    id: Some(raw.id),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if !seen.insert(raw.id.clone()) {
            skipped.push(SkippedRecord {
                line: line_no,
                id: Some(raw.id),
                reason: "duplicate id".into(),
            });
            continue;
        }
        if excluded.contains(&normalize_source(&raw.source)) {
            excluded_count += 1;
            continue;
        }
        candidates.push((
            line_no,
            AnomalyRecord {
                id: raw.id,
                image_path: base.join(raw.image),
                mask_path: base.join(raw.mask),
                anomaly_class: class,
                source_tag: raw.source,
            },
        ));
    }

    let checked: Vec<_> = candidates
        .into_par_iter()
        .map(|(line, record)| (line, validate(&record), record))
        .collect();

    let mut records = Vec::with_capacity(checked.len());
    for (line, status, record) in checked {
        match status {
            Ok(()) => records.push(record),
            Err(reason) => skipped.push(SkippedRecord {
                line,
                id: Some(record.id),
                reason,
            }),
        }
    }
    skipped.sort_by_key(|s| s.line);
    for s in &skipped {
        warn!(
            "{}:{}: skipping record {}: {}",
            path.display(),
            s.line,
            s.id.as_deref().unwrap_or("?"),
            s.reason
        );
    }

    if records.is_empty() {
        return Err(Error::EmptyManifest {
            path: path.to_path_buf(),
        });
    }

    let mut index = ManifestIndex::from_records(records, &excluded);
    index.skipped = skipped;
    index.excluded_count = excluded_count;
    Ok(index)
}

/// Uniform draw over the records eligible under `class_filter`.
pub fn sample_record<'a, R: Rng + ?Sized>(
    index: &'a ManifestIndex,
    class_filter: Option<&BTreeSet<AnomalyClass>>,
    rng: &mut R,
) -> Result<&'a AnomalyRecord> {
    let eligible = index.eligible(class_filter);
    if eligible.is_empty() {
        return Err(Error::InfeasibleClassFilter(
            class_filter
                .map(|f| f.iter().copied().collect())
                .unwrap_or_default(),
        ));
    }
    let pick = rng.random_range(0..eligible.len() as u64) as usize;
    Ok(&index.records[eligible[pick]])
}
