//! Per-target orchestration and batch runs.
//!
//! Each target image gets an independent quota. Every attempt draws from its
//! own ChaCha stream keyed by `(seed, target index, attempt index)`, so a
//! synthesis depends only on its coordinates and never on worker scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_manifest, sample_record, AnomalyClass, ManifestIndex};
use crate::error::{Error, Result};
use crate::imagecore::{minbb, resize_image_to, BinaryMask, Image};
use crate::io;
use crate::maskgen::{derive_mask, MaskGenParams, DEFAULT_MIN_COMPONENT_AREA, DEFAULT_THRESHOLD};
use crate::matting::{foreground_mask_resized, BorderParams, ForegroundStrategy};
use crate::placement::{candidate_locations, materialize_placement, sample_location, Placement};
use crate::poisson::{inject_with, PeMode, SolverOptions, DEFAULT_TOL};
use crate::scalematch::{
    choose_scale, classify_scale, compute_str, draw_synthesis_str, resize_for_injection, Quota,
    ScaleClass, ScalePlan,
};

pub const DEFAULT_COUNTS: (u32, u32, u32) = (4, 3, 3);
pub const DEFAULT_TARGET_SIZE: (usize, usize) = (256, 256);
pub const DEFAULT_MAX_ATTEMPTS: usize = 500;
pub const MIN_TARGET_SIDE: usize = 32;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// How target foregrounds are obtained for one run (one category).
#[derive(Debug, Clone, PartialEq)]
pub enum MattingConfig {
    AllOnes,
    Border(BorderParams),
    /// Path template; `{stem}` is replaced by the target's file stem.
    External(String),
}

impl MattingConfig {
    pub fn strategy_for(&self, target_stem: &str) -> ForegroundStrategy {
        match self {
            MattingConfig::AllOnes => ForegroundStrategy::AllOnes,
            MattingConfig::Border(p) => ForegroundStrategy::BorderHeuristic(*p),
            MattingConfig::External(t) => {
                ForegroundStrategy::ExternalMask(PathBuf::from(t.replace("{stem}", target_stem)))
            }
        }
    }
}

impl FromStr for MattingConfig {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "allones" => Ok(MattingConfig::AllOnes),
            "border" => Ok(MattingConfig::Border(BorderParams::default())),
            _ => match s.strip_prefix("external:") {
                Some(t) if !t.is_empty() => Ok(MattingConfig::External(t.to_string())),
                _ => Err(format!(
                    "unknown matting {s:?} (expected allones, border or external:TEMPLATE)"
                )),
            },
        }
    }
}

impl fmt::Display for MattingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MattingConfig::AllOnes => f.write_str("allones"),
            MattingConfig::Border(_) => f.write_str("border"),
            MattingConfig::External(t) => write!(f, "external:{t}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub normal_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Large, medium and small syntheses per target.
    pub counts: (u32, u32, u32),
    pub mode: PeMode,
    pub class_filter: Option<BTreeSet<AnomalyClass>>,
    /// `(height, width)` every target is resized to.
    pub target_size: (usize, usize),
    pub mask_params: MaskGenParams,
    pub matting: MattingConfig,
    pub excluded_sources: BTreeSet<String>,
    pub max_attempts: usize,
    pub workers: usize,
    pub solver_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            normal_dir: PathBuf::new(),
            manifest_path: PathBuf::new(),
            out_dir: PathBuf::new(),
            seed: 0,
            counts: DEFAULT_COUNTS,
            mode: PeMode::Normal,
            class_filter: None,
            target_size: DEFAULT_TARGET_SIZE,
            mask_params: MaskGenParams {
                threshold: DEFAULT_THRESHOLD,
                min_component_area: DEFAULT_MIN_COMPONENT_AREA,
            },
            matting: MattingConfig::AllOnes,
            excluded_sources: BTreeSet::new(),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            workers: 1,
            solver_tol: DEFAULT_TOL,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let (l, m, s) = self.counts;
        if l + m + s == 0 {
            return Err(Error::Config("counts must sum to at least 1".into()));
        }
        if self.target_size.0 < MIN_TARGET_SIDE || self.target_size.1 < MIN_TARGET_SIDE {
            return Err(Error::Config(format!(
                "target size {}x{} is below {MIN_TARGET_SIDE}px",
                self.target_size.0, self.target_size.1
            )));
        }
        if self.max_attempts == 0 || self.workers == 0 {
            return Err(Error::Config(
                "max_attempts and workers must be positive".into(),
            ));
        }
        if !self.solver_tol.is_finite() || self.solver_tol <= 0.0 {
            return Err(Error::Config("solver tolerance must be positive".into()));
        }
        if matches!(&self.class_filter, Some(f) if f.is_empty()) {
            return Err(Error::Config("class filter is empty".into()));
        }
        self.mask_params.validate()
    }

    pub fn quota(&self) -> Quota {
        Quota::new(self.counts.0, self.counts.1, self.counts.2)
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver_tol,
            ..SolverOptions::default()
        }
    }
}

/// Random stream for one attempt: key from the master seed, stream id from
/// the target index, and a disjoint 2^32-word window per attempt.
pub fn attempt_rng(seed: u64, target_index: u64, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(target_index);
    rng.set_word_pos(u128::from(attempt) << 32);
    rng
}

/// Provenance of one synthesis; with the manifest, config and normal images
/// it is enough to re-run the synthesis bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisMeta {
    pub target_id: String,
    pub source_anomaly_id: String,
    pub anomaly_class: AnomalyClass,
    #[serde(rename = "R")]
    pub str_original: f64,
    #[serde(rename = "R_prime")]
    pub str_synthesis: f64,
    pub scale_class: ScaleClass,
    pub l_c: (usize, usize),
    pub mode: PeMode,
    pub attempt_index: u64,
    /// `[seed, target index, attempt index]`.
    pub seed_path: [u64; 3],
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub image: Image,
    pub mask: BinaryMask,
    pub meta: SynthesisMeta,
    pub placement: Placement,
}

/// Why an attempt produced nothing; the quota is left untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnreadableRecord,
    TrivialPattern,
    QuotaFull,
    PatternTooSmall,
    NoLocation,
    FilteredOut,
    SolverFailure,
    NoVisibleAnomaly,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::UnreadableRecord => "unreadable_record",
            RejectReason::TrivialPattern => "trivial_pattern",
            RejectReason::QuotaFull => "quota_full",
            RejectReason::PatternTooSmall => "pattern_too_small",
            RejectReason::NoLocation => "no_location",
            RejectReason::FilteredOut => "filtered_out",
            RejectReason::SolverFailure => "solver_failure",
            RejectReason::NoVisibleAnomaly => "no_visible_anomaly",
        }
    }
}

pub enum AttemptOutcome<T> {
    Accepted(ScaleClass, T),
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Default)]
pub struct LoopStats {
    pub attempts: usize,
    pub rejects: BTreeMap<RejectReason, usize>,
}

fn reject_histogram(rejects: &BTreeMap<RejectReason, usize>) -> BTreeMap<String, usize> {
    rejects
        .iter()
        .map(|(k, v)| (k.as_str().to_string(), *v))
        .collect()
}

/// Drives attempts until the quota is met. `attempt` sees the attempt index
/// and the current quota; accepted outcomes count against the quota, and
/// rejected ones are only tallied.
pub fn run_quota_loop<T>(
    quota: &mut Quota,
    max_attempts: usize,
    mut attempt: impl FnMut(u64, &Quota) -> AttemptOutcome<T>,
) -> Result<(Vec<(ScaleClass, T)>, LoopStats)> {
    let mut out = Vec::new();
    let mut stats = LoopStats::default();
    while !quota.is_satisfied() {
        if stats.attempts == max_attempts {
            return Err(Error::AttemptCapReached {
                attempts: max_attempts,
                counters: quota.counters(),
                rejects: reject_histogram(&stats.rejects),
            });
        }
        let index = stats.attempts as u64;
        stats.attempts += 1;
        match attempt(index, quota) {
            AttemptOutcome::Accepted(class, value) => {
                quota.record(class);
                out.push((class, value));
            }
            AttemptOutcome::Rejected(reason) => *stats.rejects.entry(reason).or_default() += 1,
        }
    }
    Ok((out, stats))
}

/// A normal image to synthesize into.
#[derive(Debug, Clone)]
pub struct TargetInput {
    pub id: String,
    pub index: u64,
    pub image: Image,
    pub foreground: ForegroundStrategy,
}

/// A target resized to the working size, with its foreground.
#[derive(Debug, Clone)]
pub struct PreparedTarget {
    pub id: String,
    pub index: u64,
    pub image: Image,
    pub foreground: BinaryMask,
}

pub fn prepare_target(input: &TargetInput, cfg: &PipelineConfig) -> Result<PreparedTarget> {
    let (h, w) = cfg.target_size;
    let image = resize_image_to(&input.image, h, w)?;
    let foreground = foreground_mask_resized(&image, input.image.dims(), &input.foreground)?;
    if foreground.is_empty() {
        return Err(Error::EmptyForeground);
    }
    Ok(PreparedTarget {
        id: input.id.clone(),
        index: input.index,
        image,
        foreground,
    })
}

#[derive(Debug, Clone)]
pub struct TargetSynthesis {
    pub target: PreparedTarget,
    pub results: Vec<SynthesisResult>,
    pub quota: Quota,
    pub stats: LoopStats,
}

enum ScaleChoice<'a> {
    Quota(&'a Quota),
    Fixed(ScaleClass),
}

/// Source-raster margin kept around a pattern before resizing, so the
/// resized crop still has a ring of pixels for boundary gradients.
fn crop_margin(ratio: f64) -> usize {
    (2.0 / ratio).ceil() as usize + 2
}

fn attempt_synthesis(
    target: &PreparedTarget,
    index: &ManifestIndex,
    cfg: &PipelineConfig,
    attempt: u64,
    choice: ScaleChoice<'_>,
) -> std::result::Result<SynthesisResult, RejectReason> {
    use RejectReason::*;

    let mut rng = attempt_rng(cfg.seed, target.index, attempt);
    let record =
        sample_record(index, cfg.class_filter.as_ref(), &mut rng).map_err(|_| UnreadableRecord)?;
    let mask = io::load_mask(&record.mask_path).map_err(|_| UnreadableRecord)?;
    let str_original = compute_str(&mask, &target.foreground).map_err(|_| UnreadableRecord)?;

    let source_class = classify_scale(str_original);
    if source_class == ScaleClass::Trivial {
        return Err(TrivialPattern);
    }
    let scale = match choice {
        ScaleChoice::Quota(q) => choose_scale(str_original, q),
        ScaleChoice::Fixed(c) => (c != ScaleClass::Trivial && c <= source_class).then_some(c),
    }
    .ok_or(QuotaFull)?;
    let plan = ScalePlan::new(str_original, draw_synthesis_str(scale, &mut rng), scale);

    let image = io::load_image(&record.image_path).map_err(|_| UnreadableRecord)?;
    let window = minbb(&mask)
        .map_err(|_| UnreadableRecord)?
        .expand(crop_margin(plan.ratio), mask.dims());
    let image = image.crop(window).map_err(|_| UnreadableRecord)?;
    let mask = mask.crop(window).map_err(|_| UnreadableRecord)?;

    let (source, pattern) =
        resize_for_injection(&image, &mask, &plan).map_err(|_| PatternTooSmall)?;
    let candidates = candidate_locations(&target.foreground, &pattern).map_err(|_| NoLocation)?;
    let center = sample_location(&candidates, &mut rng).map_err(|_| NoLocation)?;
    let placement =
        materialize_placement(&pattern, center, target.image.dims()).map_err(|_| NoLocation)?;

    let synth = inject_with(
        &target.image,
        &target.foreground,
        &placement,
        &source,
        cfg.mode,
        &cfg.solver_options(),
    )
    .map_err(|e| match e {
        Error::FilteredOut => FilteredOut,
        _ => SolverFailure,
    })?;
    let omega_fg = placement
        .omega
        .intersect(&target.foreground)
        .map_err(|_| SolverFailure)?;
    let gt = derive_mask(&synth, &target.image, &omega_fg, &cfg.mask_params)
        .map_err(|_| NoVisibleAnomaly)?;

    Ok(SynthesisResult {
        image: synth,
        mask: gt,
        meta: SynthesisMeta {
            target_id: target.id.clone(),
            source_anomaly_id: record.id.clone(),
            anomaly_class: record.anomaly_class,
            str_original: plan.str_original,
            str_synthesis: plan.str_synthesis,
            scale_class: plan.scale,
            l_c: center,
            mode: cfg.mode,
            attempt_index: attempt,
            seed_path: [cfg.seed, target.index, attempt],
        },
        placement,
    })
}

/// Runs the quota loop for one target, emitting exactly
/// `counts.0 + counts.1 + counts.2` results on success.
pub fn synthesize_for_target(
    input: &TargetInput,
    index: &ManifestIndex,
    cfg: &PipelineConfig,
) -> Result<TargetSynthesis> {
    if index.eligible(cfg.class_filter.as_ref()).is_empty() {
        return Err(Error::InfeasibleClassFilter(
            cfg.class_filter.iter().flatten().copied().collect(),
        ));
    }
    let target = prepare_target(input, cfg)?;
    let mut quota = cfg.quota();
    let (accepted, stats) =
        run_quota_loop(
            &mut quota,
            cfg.max_attempts,
            |attempt, q| match attempt_synthesis(
                &target,
                index,
                cfg,
                attempt,
                ScaleChoice::Quota(q),
            ) {
                Ok(result) => AttemptOutcome::Accepted(result.meta.scale_class, result),
                Err(reason) => AttemptOutcome::Rejected(reason),
            },
        )?;
    Ok(TargetSynthesis {
        target,
        results: accepted.into_iter().map(|(_, r)| r).collect(),
        quota,
        stats,
    })
}

/// Re-runs the single attempt described by `meta`.
pub fn replay(
    meta: &SynthesisMeta,
    input: &TargetInput,
    index: &ManifestIndex,
    cfg: &PipelineConfig,
) -> Result<SynthesisResult> {
    let [seed, target_index, attempt] = meta.seed_path;
    let cfg = PipelineConfig {
        seed,
        mode: meta.mode,
        ..cfg.clone()
    };
    let target = prepare_target(
        &TargetInput {
            index: target_index,
            ..input.clone()
        },
        &cfg,
    )?;
    attempt_synthesis(
        &target,
        index,
        &cfg,
        attempt,
        ScaleChoice::Fixed(meta.scale_class),
    )
    .map_err(|reason| Error::Config(format!("replay rejected: {}", reason.as_str())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetReport {
    pub target_id: String,
    pub target_index: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub syntheses: usize,
    pub attempts: usize,
    pub counters: (u32, u32, u32),
    pub rejects: BTreeMap<String, usize>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub counts: (u32, u32, u32),
    pub mode: PeMode,
    pub workers: usize,
    pub manifest_records: usize,
    pub skipped_records: usize,
    pub excluded_records: usize,
    pub targets: Vec<TargetReport>,
    pub total_syntheses: usize,
    pub failed_targets: usize,
    pub wall_time_s: f64,
    pub mean_time_per_synthesis_s: f64,
}

impl RunReport {
    /// 0 when every target succeeded, 1 on partial failure.
    pub fn exit_code(&self) -> i32 {
        if self.failed_targets == 0 {
            0
        } else {
            1
        }
    }
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_targets(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && is_image {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::NoTargets(dir.to_path_buf()));
    }
    let mut stems = BTreeSet::new();
    for f in &files {
        if !stems.insert(file_stem(f)) {
            return Err(Error::Config(format!(
                "two normal images share the stem {:?}",
                file_stem(f)
            )));
        }
    }
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn process_target(
    path: &Path,
    target_index: u64,
    index: &ManifestIndex,
    cfg: &PipelineConfig,
) -> (TargetReport, Vec<SynthesisMeta>) {
    let id = file_stem(path);
    let started = Instant::now();
    let outcome = (|| -> Result<TargetSynthesis> {
        let image = io::load_image(path)?;
        let input = TargetInput {
            foreground: cfg.matting.strategy_for(&id),
            id: id.clone(),
            index: target_index,
            image,
        };
        let synth = synthesize_for_target(&input, index, cfg)?;
        for (k, result) in synth.results.iter().enumerate() {
            let name = format!("{id}_{k}.png");
            io::save_image_png(&result.image, &cfg.out_dir.join("images").join(&name))?;
            io::save_mask_png(&result.mask, &cfg.out_dir.join("masks").join(&name))?;
        }
        Ok(synth)
    })();
    let wall_time_s = started.elapsed().as_secs_f64();
    match outcome {
        Ok(synth) => {
            info!(
                "{id}: {} syntheses in {} attempts ({wall_time_s:.3}s)",
                synth.results.len(),
                synth.stats.attempts
            );
            let report = TargetReport {
                target_id: id,
                target_index,
                ok: true,
                error: None,
                syntheses: synth.results.len(),
                attempts: synth.stats.attempts,
                counters: synth.quota.counters(),
                rejects: reject_histogram(&synth.stats.rejects),
                wall_time_s,
            };
            let metas = synth.results.into_iter().map(|r| r.meta).collect();
            (report, metas)
        }
        Err(e) => {
            warn!("{id}: failed: {e}");
            let (attempts, counters, rejects) = match &e {
                Error::AttemptCapReached {
                    attempts,
                    counters,
                    rejects,
                } => (*attempts, *counters, rejects.clone()),
                _ => (0, (0, 0, 0), BTreeMap::new()),
            };
            let report = TargetReport {
                target_id: id,
                target_index,
                ok: false,
                error: Some(e.to_string()),
                syntheses: 0,
                attempts,
                counters,
                rejects,
                wall_time_s,
            };
            (report, Vec::new())
        }
    }
}

/// Synthesizes for every image in `cfg.normal_dir` and writes
/// `images/`, `masks/`, `meta.jsonl` and `report.json` under `cfg.out_dir`.
///
/// Fatal errors (bad config, unreadable manifest, no targets, output
/// directory I/O) are returned; per-target failures are recorded in the
/// report.
pub fn run_batch(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let targets = list_targets(&cfg.normal_dir)?;
    let index = load_manifest(&cfg.manifest_path, &cfg.excluded_sources)?;
    if index.eligible(cfg.class_filter.as_ref()).is_empty() {
        return Err(Error::InfeasibleClassFilter(
            cfg.class_filter.iter().flatten().copied().collect(),
        ));
    }
    for sub in ["images", "masks"] {
        let dir = cfg.out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let per_target: Vec<(TargetReport, Vec<SynthesisMeta>)> = pool.install(|| {
        targets
            .par_iter()
            .enumerate()
            .map(|(i, path)| process_target(path, i as u64, &index, cfg))
            .collect()
    });

    let meta_path = cfg.out_dir.join("meta.jsonl");
    let mut meta_out = String::new();
    for meta in per_target.iter().flat_map(|(_, m)| m) {
        meta_out.push_str(&serde_json::to_string(meta).expect("meta serializes"));
        meta_out.push('\n');
    }
    fs::write(&meta_path, meta_out).map_err(|e| Error::io(&meta_path, e))?;

    let reports: Vec<TargetReport> = per_target.into_iter().map(|(r, _)| r).collect();
    let total_syntheses: usize = reports.iter().map(|r| r.syntheses).sum();
    let busy: f64 = reports.iter().filter(|r| r.ok).map(|r| r.wall_time_s).sum();
    let report = RunReport {
        seed: cfg.seed,
        counts: cfg.counts,
        mode: cfg.mode,
        workers: cfg.workers,
        manifest_records: index.len(),
        skipped_records: index.skipped().len(),
        excluded_records: index.excluded_count(),
        failed_targets: reports.iter().filter(|r| !r.ok).count(),
        targets: reports,
        total_syntheses,
        wall_time_s: started.elapsed().as_secs_f64(),
        mean_time_per_synthesis_s: if total_syntheses > 0 {
            busy / total_syntheses as f64
        } else {
            0.0
        },
    };
    let report_path = cfg.out_dir.join("report.json");
    let mut f = fs::File::create(&report_path).map_err(|e| Error::io(&report_path, e))?;
    serde_json::to_writer_pretty(&mut f, &report).map_err(|e| Error::io(&report_path, e.into()))?;
    writeln!(f).map_err(|e| Error::io(&report_path, e))?;
    Ok(report)
}
