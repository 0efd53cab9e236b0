use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use anomaly_inject::dataset::AnomalyClass;
use anomaly_inject::maskgen::{MaskGenParams, DEFAULT_MIN_COMPONENT_AREA, DEFAULT_THRESHOLD};
use anomaly_inject::pipeline::{run_batch, MattingConfig, PipelineConfig, DEFAULT_MAX_ATTEMPTS};
use anomaly_inject::poisson::{PeMode, DEFAULT_TOL};

#[derive(Parser)]
#[command(
    name = "anomaly-inject",
    version,
    about = "Inject real anomaly patterns into normal images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize pseudo anomalies for every image in a directory.
    Synthesize(SynthesizeArgs),
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Directory of normal target images.
    #[arg(long)]
    normal_dir: PathBuf,
    /// JSONL anomaly manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Large,medium,small syntheses per target.
    #[arg(long, default_value = "4,3,3", value_parser = parse_counts)]
    counts: (u32, u32, u32),
    #[arg(long, default_value = "normal")]
    mode: PeMode,
    /// HEIGHTxWIDTH every target is resized to.
    #[arg(long, default_value = "256x256", value_parser = parse_size)]
    target_size: (usize, usize),
    /// Per-channel difference threshold for ground-truth masks, in [0, 1].
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Mask components smaller than this many pixels are dropped.
    #[arg(long, default_value_t = DEFAULT_MIN_COMPONENT_AREA)]
    min_component_area: usize,
    /// Manifest source tags to skip, e.g. the benchmark under evaluation.
    #[arg(long, value_delimiter = ',')]
    exclude_sources: Vec<String>,
    /// Only sample anomalies of these classes.
    #[arg(long, value_delimiter = ',')]
    class_filter: Vec<AnomalyClass>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// allones, border, or external:TEMPLATE with `{stem}` for the target's file stem.
    #[arg(long, default_value = "allones")]
    matting: MattingConfig,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: usize,
    /// Max-norm residual bound for the Poisson solve.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    solver_tol: f64,
}

fn parse_counts(s: &str) -> Result<(u32, u32, u32), String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    match parts[..] {
        [l, m, s] => Ok((l, m, s)),
        _ => Err(format!("expected L,M,S, got {s:?}")),
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let h = h.trim().parse().map_err(|e| format!("{h:?}: {e}"))?;
    let w = w.trim().parse().map_err(|e| format!("{w:?}: {e}"))?;
    Ok((h, w))
}

impl SynthesizeArgs {
    fn into_config(self) -> PipelineConfig {
        PipelineConfig {
            normal_dir: self.normal_dir,
            manifest_path: self.manifest,
            out_dir: self.out,
            seed: self.seed,
            counts: self.counts,
            mode: self.mode,
            class_filter: (!self.class_filter.is_empty())
                .then(|| self.class_filter.into_iter().collect::<BTreeSet<_>>()),
            target_size: self.target_size,
            mask_params: MaskGenParams {
                threshold: self.threshold,
                min_component_area: self.min_component_area,
            },
            matting: self.matting,
            excluded_sources: self
                .exclude_sources
                .into_iter()
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect(),
            max_attempts: self.max_attempts,
            workers: self.workers,
            solver_tol: self.solver_tol,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Synthesize(args) = Cli::parse().command;
    match run_batch(&args.into_config()) {
        Ok(report) => {
            println!(
                "{} syntheses across {} targets ({} failed), mean {:.4}s per synthesis",
                report.total_syntheses,
                report.targets.len(),
                report.failed_targets,
                report.mean_time_per_synthesis_s
            );
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
