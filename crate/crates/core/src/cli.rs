//! Command-line front end.
//!
//! Every subcommand resolves a [`RunConfig`] from defaults, an optional
//! `--config` file and flag overrides, writes it to `run_config.json` in the
//! output directory, and then produces its artifacts there. Passing a
//! directory as `--input` processes every PNG in it and adds an aggregate
//! report.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adapt::{adaptive_thresholds, coverage};
use crate::eval::{
    ablate, format_ablation, image_sim, image_sim_map, oracle_mask, AblationRow, PixelMetrics, RegionScore, SimMetric,
};
use crate::grow::{grow_region, Region, RegionSet, SeedStrategy, ThresholdPair};
use crate::imgio::{
    colorize_region_map, load_image, load_mask, load_region_map, make_synthetic, overlay_mask_boundary, read_json,
    save_image, save_mask, save_region_map, write_json, Image, ManifestRegion, RegionManifest, RegionMap, Rgb8,
    SceneKind, SceneSpec,
};
use crate::merge::{fill_holes, merge_chains, mergeability_with, resolve_overlaps, MergeConfig};
use crate::mixgen::{
    binary_samples, export_dataset, label_regions, synth_batch, ExportMode, ExportSample, LabeledRegion, MixConfig,
};
use crate::par::{with_threads, Execution};
use crate::pipeline::{run_pipeline, AblationSpec, PipelineConfig, Variant};
use crate::topology::{Coord, Topology};

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const REGION_MAP_FILE: &str = "region_map.png";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_JSON_FILE: &str = "sweep_report.json";
pub const SWEEP_CSV_FILE: &str = "sweep_report.csv";
pub const COMPONENTS_FILE: &str = "components.json";
pub const COLOR_FILE: &str = "regions_color.png";
pub const EVAL_FILE: &str = "eval.json";
pub const ABLATION_JSON_FILE: &str = "ablation.json";
pub const ABLATION_TEXT_FILE: &str = "ablation.txt";
pub const BATCH_FILE: &str = "batch_summary.json";
pub const DATASET_DIR: &str = "dataset";

/// Bad invocation, reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Everything a run depends on. Written beside the outputs so that
/// `--config <out>/run_config.json` repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Region map consumed by `merge` and optionally by `eval`.
    pub regions: Option<PathBuf>,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub pipeline: PipelineConfig,
    /// Seeds drawn by the random-seed ablation baseline.
    pub random_seeds: usize,
    pub variants: Vec<Variant>,
    pub metric: SimMetric,
    pub mix: MixConfig,
    pub mix_mode: ExportMode,
    pub visualize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            mask: None,
            regions: None,
            out: PathBuf::from("marg-out"),
            threads: 0,
            pipeline: PipelineConfig::default(),
            random_seeds: 16,
            variants: Variant::ALL.to_vec(),
            metric: SimMetric::IoU,
            mix: MixConfig::default(),
            mix_mode: ExportMode::Regionmix,
            visualize: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        read_json(path).with_context(|| format!("reading config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.pipeline.grow.validate()?;
        self.pipeline.sweep.validate()?;
        if let Some(m) = &self.pipeline.merge {
            MergeConfig::new(m.overlap_threshold)?;
        }
        self.mix.validate()?;
        Ok(())
    }

    /// Ablation settings; the configured thresholds serve as the global pair.
    pub fn ablation_spec(&self) -> AblationSpec {
        AblationSpec {
            grow: self.pipeline.grow.clone(),
            global_thresholds: self.pipeline.grow.thresholds,
            random_seeds: self.random_seeds,
            sweep: self.pipeline.sweep.clone(),
            merge: self.pipeline.merge.unwrap_or_default(),
            exec: self.pipeline.exec,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "marg",
    version,
    about = "Unsupervised region proposals by seeded region growing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Segment an image into regions (adaptive thresholds, growth, merging).
    Segment(CommonArgs),
    /// Run only the adaptive threshold sweep.
    Sweep(CommonArgs),
    /// Merge the regions of an unmerged segmentation.
    Merge {
        #[command(flatten)]
        common: CommonArgs,
        /// Region map written by `segment --no-merge`.
        #[arg(long)]
        regions: Option<PathBuf>,
    },
    /// Score region proposals against a ground-truth mask.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Evaluate this region map instead of segmenting.
        #[arg(long)]
        regions: Option<PathBuf>,
    },
    /// Compare the region-growing variants on an image and mask.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated subset of rsrg, dtrg-gt, dtrg-at, dtmrg-at, marg.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
    },
    /// Export labelled region samples for classifier training.
    Regionmix {
        #[command(flatten)]
        common: CommonArgs,
        /// binary or regionmix.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ExportMode>,
        /// Composite samples per image.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        max_members: Option<usize>,
    },
    /// Generate a synthetic scene with its ground-truth mask.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// Input PNG, or a directory of PNGs.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Ground-truth mask PNG, or a directory of masks named like the inputs.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Start from this run configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// PRNG seed for seed promotion and sample synthesis.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub topology: Option<Topology>,
    /// Fixed local,seed thresholds; disables the adaptive sweep.
    #[arg(long, value_parser = parse_tau, value_name = "L,S")]
    pub fixed_tau: Option<ThresholdPair>,
    #[arg(long)]
    pub no_merge: bool,
    /// grid or random:N.
    #[arg(long)]
    pub seed_strategy: Option<SeedStrategy>,
    #[arg(long)]
    pub metric: Option<SimMetric>,
    #[arg(long)]
    pub overlap_threshold: Option<f64>,
    /// Run sweeps and batches on the calling thread only.
    #[arg(long)]
    pub serial: bool,
    /// Skip visualization PNGs.
    #[arg(long)]
    pub no_viz: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// flat, two-tone, diagonal-stripe or wraparound.
    #[arg(long, default_value = "two-tone")]
    pub kind: String,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Per-channel uniform noise amplitude.
    #[arg(long, default_value_t = 0)]
    pub noise: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Full scene description (JSON); overrides the other scene flags.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_tau(s: &str) -> Result<ThresholdPair, String> {
    let (l, r) = s.split_once(',').ok_or_else(|| format!("expected L,S, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok(ThresholdPair::new(parse(l)?, parse(r)?))
}

fn parse_mode(s: &str) -> Result<ExportMode, String> {
    match s {
        "binary" => Ok(ExportMode::Binary),
        "regionmix" => Ok(ExportMode::Regionmix),
        _ => Err(format!("unknown export mode {s:?} (binary, regionmix)")),
    }
}

/// Applies the config file and flag overrides on top of the defaults.
pub fn resolve_config(args: &CommonArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &args.input {
        cfg.input = Some(v.clone());
    }
    if let Some(v) = &args.mask {
        cfg.mask = Some(v.clone());
    }
    if let Some(v) = &args.out {
        cfg.out = v.clone();
    }
    if let Some(v) = args.seed {
        cfg.pipeline.grow.prng_seed = v;
        cfg.mix.prng_seed = v;
    }
    if let Some(v) = args.threads {
        cfg.threads = v;
    }
    if let Some(v) = args.topology {
        cfg.pipeline.grow.topology = v;
    }
    if let Some(v) = args.fixed_tau {
        cfg.pipeline.grow.thresholds = v;
        cfg.pipeline.adaptive = false;
    }
    if let Some(v) = args.overlap_threshold {
        cfg.pipeline.merge = Some(MergeConfig::new(v)?);
    }
    if args.no_merge {
        cfg.pipeline.merge = None;
    }
    if let Some(v) = &args.seed_strategy {
        cfg.pipeline.grow.seed_strategy = *v;
    }
    if let Some(v) = args.metric {
        cfg.metric = v;
    }
    if args.serial {
        cfg.pipeline.exec = Execution::Serial;
    }
    if args.no_viz {
        cfg.visualize = false;
    }
    cfg.validate()
        .map_err(|e| usage(format!("invalid configuration: {e}")))?;
    Ok(cfg)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status: 0 on success, 1 on failure, 2 on bad usage.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Segment(common) => with_config(&common, |cfg| cmd_segment(cfg)),
        Command::Sweep(common) => with_config(&common, |cfg| cmd_sweep(cfg)),
        Command::Merge { common, regions } => with_config(&common, |cfg| {
            if regions.is_some() {
                cfg.regions = regions;
            }
            cmd_merge(cfg)
        }),
        Command::Eval { common, regions } => with_config(&common, |cfg| {
            if regions.is_some() {
                cfg.regions = regions;
            }
            cmd_eval(cfg)
        }),
        Command::Ablate { common, variants } => with_config(&common, |cfg| {
            if !variants.is_empty() {
                cfg.variants = variants;
            }
            cmd_ablate(cfg)
        }),
        Command::Regionmix {
            common,
            mode,
            samples,
            max_members,
        } => with_config(&common, |cfg| {
            if let Some(m) = mode {
                cfg.mix_mode = m;
            }
            if let Some(n) = samples {
                cfg.mix.samples_per_image = n;
            }
            if let Some(n) = max_members {
                cfg.mix.max_members = n;
            }
            cfg.mix.validate().map_err(|e| usage(e.to_string()))?;
            cmd_regionmix(cfg)
        }),
    }
}

fn with_config(common: &CommonArgs, f: impl FnOnce(&mut RunConfig) -> anyhow::Result<()> + Send) -> anyhow::Result<()> {
    let mut cfg = resolve_config(common)?;
    let threads = cfg.threads;
    with_threads(threads, move || f(&mut cfg))
}

fn prepare_out(cfg: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_json(&cfg.out.join(RUN_CONFIG_FILE), cfg)?;
    Ok(())
}

/// One unit of work: an input image, its mask if any, and its output directory.
#[derive(Debug, Clone)]
struct Job {
    image: PathBuf,
    mask: Option<PathBuf>,
    out: PathBuf,
}

/// Expands `--input`/`--mask` into jobs; `Ok((jobs, batch))`.
fn jobs(cfg: &RunConfig, need_mask: bool) -> anyhow::Result<(Vec<Job>, bool)> {
    let input = cfg.input.as_ref().ok_or_else(|| usage("--input is required"))?;
    if need_mask && cfg.mask.is_none() {
        return Err(usage("this command needs a ground-truth --mask"));
    }
    if !input.is_dir() {
        if !input.exists() {
            return Err(usage(format!("input {} does not exist", input.display())));
        }
        let job = Job {
            image: input.clone(),
            mask: cfg.mask.clone(),
            out: cfg.out.clone(),
        };
        return Ok((vec![job], false));
    }
    let mut images: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("listing {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(usage(format!("no PNG files in {}", input.display())));
    }
    let jobs = images
        .into_iter()
        .map(|image| {
            let name = image.file_name().expect("listed files have names").to_owned();
            let stem = image.file_stem().expect("listed files have names").to_owned();
            let mask = cfg
                .mask
                .as_ref()
                .map(|m| if m.is_dir() { m.join(&name) } else { m.clone() });
            Job {
                out: cfg.out.join(stem),
                image,
                mask,
            }
        })
        .collect();
    Ok((jobs, true))
}

/// Runs `f` on every job, in parallel unless the config says serial, and
/// returns results in job order.
fn run_jobs<R: Send>(
    cfg: &RunConfig,
    jobs: &[Job],
    f: impl Fn(&Job) -> anyhow::Result<R> + Sync + Send,
) -> anyhow::Result<Vec<R>> {
    cfg.pipeline
        .exec
        .map(jobs, |job| {
            std::fs::create_dir_all(&job.out).with_context(|| format!("creating {}", job.out.display()))?;
            f(job).with_context(|| format!("processing {}", job.image.display()))
        })
        .into_iter()
        .collect()
}

fn require_mask(job: &Job) -> anyhow::Result<&Path> {
    job.mask
        .as_deref()
        .ok_or_else(|| usage("this command needs a ground-truth --mask"))
}

fn display(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub miou: MeanStd,
}

impl MetricStats {
    pub fn of(ms: &[PixelMetrics]) -> Self {
        MetricStats {
            accuracy: MeanStd::of(ms.iter().map(|m| m.accuracy)),
            precision: MeanStd::of(ms.iter().map(|m| m.precision)),
            recall: MeanStd::of(ms.iter().map(|m| m.recall)),
            f1: MeanStd::of(ms.iter().map(|m| m.f1)),
            miou: MeanStd::of(ms.iter().map(|m| m.miou)),
        }
    }
}

/// Per-image facts written to `summary.json` by `segment` and `merge`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub image: String,
    pub height: usize,
    pub width: usize,
    pub n_regions: usize,
    pub n_raw_regions: usize,
    pub coverage: f64,
    pub tau_l: u32,
    pub tau_s: u32,
    pub topology: Topology,
    pub adaptive: bool,
    pub merged: bool,
    pub sweep_converged: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentBatch {
    n_images: usize,
    n_regions: MeanStd,
    coverage: MeanStd,
    tau_l: MeanStd,
    tau_s: MeanStd,
    images: Vec<SegmentSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Component {
    id: u32,
    members: Vec<u32>,
}

/// Writes the region map with its manifest and, if enabled, a colour-coded view.
fn write_regions(
    rs: &RegionSet,
    map: &RegionMap,
    tp: ThresholdPair,
    cfg: &RunConfig,
    out: &Path,
) -> anyhow::Result<()> {
    let hist = map.histogram();
    let regions = rs
        .regions
        .iter()
        .enumerate()
        .map(|(k, r)| ManifestRegion {
            id: k as u32 + 1,
            pixels: hist.get(k + 1).copied().unwrap_or(0),
            seed: [r.seed.h, r.seed.w],
        })
        .collect();
    let manifest = RegionManifest {
        n_regions: rs.len(),
        regions,
        tau_l: tp.tau_l,
        tau_s: tp.tau_s,
        topology: rs.config.topology,
        prng_seed: rs.config.prng_seed,
    };
    save_region_map(map, &manifest, out.join(REGION_MAP_FILE))?;
    if cfg.visualize {
        save_image(&colorize_region_map(map), out.join(COLOR_FILE))?;
    }
    Ok(())
}

fn write_components(components: &[Vec<u32>], out: &Path) -> anyhow::Result<()> {
    let comps: Vec<Component> = components
        .iter()
        .enumerate()
        .map(|(k, m)| Component {
            id: k as u32 + 1,
            members: m.clone(),
        })
        .collect();
    write_json(&out.join(COMPONENTS_FILE), &comps)?;
    Ok(())
}

fn segment_job(job: &Job, cfg: &RunConfig) -> anyhow::Result<SegmentSummary> {
    let img = load_image(&job.image)?;
    let out = run_pipeline(&img, &cfg.pipeline)?;
    let map = out.region_map(&img)?;
    write_regions(&out.regions, &map, out.thresholds, cfg, &job.out)?;
    if let Some(report) = &out.sweep {
        write_json(&job.out.join(SWEEP_JSON_FILE), report)?;
        std::fs::write(job.out.join(SWEEP_CSV_FILE), report.to_csv())?;
    }
    if cfg.pipeline.merge.is_some() {
        write_components(&out.components, &job.out)?;
    }
    let summary = SegmentSummary {
        image: display(&job.image),
        height: img.height(),
        width: img.width(),
        n_regions: out.regions.len(),
        n_raw_regions: out.raw.len(),
        coverage: coverage(&out.regions),
        tau_l: out.thresholds.tau_l,
        tau_s: out.thresholds.tau_s,
        topology: cfg.pipeline.grow.topology,
        adaptive: cfg.pipeline.adaptive,
        merged: cfg.pipeline.merge.is_some(),
        sweep_converged: out.sweep.as_ref().map(|r| r.converged()),
    };
    write_json(&job.out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn cmd_segment(cfg: &RunConfig) -> anyhow::Result<()> {
    let (jobs, batch) = jobs(cfg, false)?;
    prepare_out(cfg)?;
    let summaries = run_jobs(cfg, &jobs, |job| segment_job(job, cfg))?;
    for s in &summaries {
        println!(
            "{}: {} regions ({} grown), coverage {:.4}, tau_l {} tau_s {}",
            s.image, s.n_regions, s.n_raw_regions, s.coverage, s.tau_l, s.tau_s
        );
    }
    if batch {
        let agg = SegmentBatch {
            n_images: summaries.len(),
            n_regions: MeanStd::of(summaries.iter().map(|s| s.n_regions as f64)),
            coverage: MeanStd::of(summaries.iter().map(|s| s.coverage)),
            tau_l: MeanStd::of(summaries.iter().map(|s| s.tau_l as f64)),
            tau_s: MeanStd::of(summaries.iter().map(|s| s.tau_s as f64)),
            images: summaries,
        };
        println!("N {}  coverage {}", agg.n_regions, agg.coverage);
        write_json(&cfg.out.join(BATCH_FILE), &agg)?;
    }
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> anyhow::Result<()> {
    let (jobs, batch) = jobs(cfg, false)?;
    prepare_out(cfg)?;
    let reports = run_jobs(cfg, &jobs, |job| {
        let img = load_image(&job.image)?;
        let report = adaptive_thresholds(&img, &cfg.pipeline.grow, &cfg.pipeline.sweep, cfg.pipeline.exec)?;
        write_json(&job.out.join(SWEEP_JSON_FILE), &report)?;
        std::fs::write(job.out.join(SWEEP_CSV_FILE), report.to_csv())?;
        Ok(report)
    })?;
    for (job, r) in jobs.iter().zip(&reports) {
        println!(
            "{}: tau_s {} tau_l {}{}",
            job.image.display(),
            r.chosen.tau_s,
            r.chosen.tau_l,
            if r.converged() { "" } else { " (no plateau)" }
        );
    }
    if batch {
        #[derive(Serialize)]
        struct SweepBatch {
            n_images: usize,
            tau_l: MeanStd,
            tau_s: MeanStd,
            converged: usize,
        }
        let agg = SweepBatch {
            n_images: reports.len(),
            tau_l: MeanStd::of(reports.iter().map(|r| r.chosen.tau_l as f64)),
            tau_s: MeanStd::of(reports.iter().map(|r| r.chosen.tau_s as f64)),
            converged: reports.iter().filter(|r| r.converged()).count(),
        };
        write_json(&cfg.out.join(BATCH_FILE), &agg)?;
    }
    Ok(())
}

/// Rebuilds a region set from a region map: each id becomes a region with
/// its manifest seed.
fn region_set_from_map(map: &RegionMap, manifest: &RegionManifest, img: &Image, cfg: &RunConfig) -> RegionSet {
    let (h, w) = map.dims();
    let mut grow = cfg.pipeline.grow.clone();
    grow.thresholds = ThresholdPair::new(manifest.tau_l, manifest.tau_s);
    grow.topology = manifest.topology;
    let mut rs = RegionSet::empty(h, w, grow);
    for (k, pixels) in map.region_sets().into_iter().enumerate() {
        let id = k as u32 + 1;
        let seed = manifest
            .regions
            .iter()
            .find(|r| r.id == id)
            .map(|r| Coord::new(r.seed[0], r.seed[1]))
            .filter(|c| c.h < h && c.w < w && pixels.contains(c.index(w)))
            .or_else(|| pixels.iter().next().map(|i| Coord::from_index(i, w)));
        let Some(seed) = seed else { continue };
        rs.push(Region {
            id,
            seed,
            seed_color: img.get(seed),
            pixels,
        });
    }
    rs
}

fn cmd_merge(cfg: &RunConfig) -> anyhow::Result<()> {
    let (jobs, batch) = jobs(cfg, false)?;
    if batch {
        return Err(usage("merge takes a single --input image"));
    }
    let regions = cfg
        .regions
        .as_ref()
        .ok_or_else(|| usage("merge needs --regions from an unmerged segmentation"))?;
    prepare_out(cfg)?;
    let job = &jobs[0];
    let img = load_image(&job.image)?;
    let (map, manifest) = load_region_map(regions)?;
    if map.dims() != img.dims() {
        return Err(anyhow!(
            "region map is {:?} but the image is {:?}",
            map.dims(),
            img.dims()
        ));
    }
    // Overlaps were resolved away in the saved map, so regrow from the seeds.
    let tp = ThresholdPair::new(manifest.tau_l, manifest.tau_s);
    let mut grow = cfg.pipeline.grow.clone();
    grow.thresholds = tp;
    grow.topology = manifest.topology;
    grow.prng_seed = manifest.prng_seed;
    let mut raw = RegionSet::empty(img.height(), img.width(), grow);
    for r in &manifest.regions {
        let seed = Coord::new(r.seed[0], r.seed[1]);
        if seed.h >= img.height() || seed.w >= img.width() {
            return Err(anyhow!("seed {:?} of region {} lies outside the image", r.seed, r.id));
        }
        raw.push(grow_region(&img, r.id, seed, tp, manifest.topology));
    }
    let mc = cfg.pipeline.merge.unwrap_or_default();
    let m = mergeability_with(&raw, &mc, cfg.pipeline.exec);
    let components: Vec<Vec<u32>> = m
        .components()
        .into_iter()
        .map(|c| c.into_iter().map(|i| raw.regions[i].id).collect())
        .collect();
    let merged = merge_chains(&raw, &m);
    let out_map = fill_holes(&resolve_overlaps(&merged, &img)?);
    write_regions(&merged, &out_map, tp, cfg, &job.out)?;
    write_components(&components, &job.out)?;
    let summary = SegmentSummary {
        image: display(&job.image),
        height: img.height(),
        width: img.width(),
        n_regions: merged.len(),
        n_raw_regions: raw.len(),
        coverage: coverage(&merged),
        tau_l: tp.tau_l,
        tau_s: tp.tau_s,
        topology: manifest.topology,
        adaptive: false,
        merged: true,
        sweep_converged: None,
    };
    write_json(&job.out.join(SUMMARY_FILE), &summary)?;
    println!("{}: {} regions merged into {}", summary.image, raw.len(), merged.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub image: String,
    pub mask: String,
    pub metric: SimMetric,
    /// Size-weighted best-class similarity of the proposals.
    pub image_sim: f64,
    /// Pixel metrics of the majority-class composed mask.
    pub oracle: PixelMetrics,
    pub coverage: f64,
    pub n_regions: usize,
    pub per_region: Vec<RegionScore>,
}

fn eval_job(job: &Job, cfg: &RunConfig) -> anyhow::Result<EvalReport> {
    let mask_path = require_mask(job)?;
    let img = load_image(&job.image)?;
    let gt = load_mask(mask_path)?;
    let (sim, rs) = match &cfg.regions {
        Some(p) => {
            let (map, manifest) = load_region_map(p)?;
            let sim = image_sim_map(&map, &gt, cfg.metric)?;
            (sim, region_set_from_map(&map, &manifest, &img, cfg))
        }
        None => {
            let out = run_pipeline(&img, &cfg.pipeline)?;
            (image_sim(&out.regions, &gt, cfg.metric)?, out.regions)
        }
    };
    let (pred, oracle) = oracle_mask(&rs, &img, &gt)?;
    save_mask(&pred, job.out.join("oracle_mask.png"))?;
    if cfg.visualize {
        save_image(&overlay_mask_boundary(&img, &pred)?, job.out.join("overlay.png"))?;
    }
    let report = EvalReport {
        image: display(&job.image),
        mask: display(mask_path),
        metric: sim.metric,
        image_sim: sim.image_score,
        oracle,
        coverage: sim.coverage,
        n_regions: sim.n_regions,
        per_region: sim.per_region,
    };
    write_json(&job.out.join(EVAL_FILE), &report)?;
    Ok(report)
}

fn eval_table(reports: &[EvalReport]) -> String {
    let mut s = format!(
        "{:<24} {:>8} {:>7} {:>9} {:>7} {:>7} {:>7} {:>7} {:>6}\n",
        "image", "sim", "Acc", "Precision", "Recall", "F1", "mIoU", "Pi", "N"
    );
    for r in reports {
        let name = Path::new(&r.image)
            .file_name()
            .map_or(r.image.clone(), |n| n.to_string_lossy().into_owned());
        s.push_str(&format!(
            "{:<24} {:>8.4} {:>7.2} {:>9.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>6}\n",
            name,
            r.image_sim,
            100.0 * r.oracle.accuracy,
            100.0 * r.oracle.precision,
            100.0 * r.oracle.recall,
            100.0 * r.oracle.f1,
            100.0 * r.oracle.miou,
            100.0 * r.coverage,
            r.n_regions
        ));
    }
    s
}

fn cmd_eval(cfg: &RunConfig) -> anyhow::Result<()> {
    let (jobs, batch) = jobs(cfg, true)?;
    if batch && cfg.regions.is_some() {
        return Err(usage("--regions applies to a single --input image"));
    }
    prepare_out(cfg)?;
    let reports = run_jobs(cfg, &jobs, |job| eval_job(job, cfg))?;
    print!("{}", eval_table(&reports));
    if batch {
        #[derive(Serialize)]
        struct EvalBatch {
            metric: SimMetric,
            n_images: usize,
            image_sim: MeanStd,
            oracle: MetricStats,
            coverage: MeanStd,
            n_regions: MeanStd,
        }
        let metrics: Vec<PixelMetrics> = reports.iter().map(|r| r.oracle).collect();
        let agg = EvalBatch {
            metric: cfg.metric,
            n_images: reports.len(),
            image_sim: MeanStd::of(reports.iter().map(|r| r.image_sim)),
            oracle: MetricStats::of(&metrics),
            coverage: MeanStd::of(reports.iter().map(|r| r.coverage)),
            n_regions: MeanStd::of(reports.iter().map(|r| r.n_regions as f64)),
        };
        println!("mIoU {}  F1 {}", agg.oracle.miou, agg.oracle.f1);
        write_json(&cfg.out.join(BATCH_FILE), &agg)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AblationStats {
    variant: Variant,
    metrics: MetricStats,
    coverage: MeanStd,
    n_regions: MeanStd,
}

fn ablation_batch_table(stats: &[AblationStats]) -> String {
    let mut s = format!(
        "{:<10} {:<9} {:<3} {:>15} {:>15} {:>15} {:>15}\n",
        "Algorithm", "Neighbors", "RM", "Acc", "F1", "mIoU", "N"
    );
    let pct = |m: MeanStd| MeanStd {
        mean: 100.0 * m.mean,
        std: 100.0 * m.std,
    };
    for a in stats {
        let v = a.variant;
        s.push_str(&format!(
            "{:<10} {:<9} {:<3} {:>15} {:>15} {:>15} {:>15}\n",
            v.algorithm(),
            v.neighbors(),
            if v.merges() { "Yes" } else { "No" },
            pct(a.metrics.accuracy).to_string(),
            pct(a.metrics.f1).to_string(),
            pct(a.metrics.miou).to_string(),
            a.n_regions.to_string()
        ));
    }
    s
}

fn cmd_ablate(cfg: &RunConfig) -> anyhow::Result<()> {
    let (jobs, batch) = jobs(cfg, true)?;
    prepare_out(cfg)?;
    let spec = cfg.ablation_spec();
    let all_rows = run_jobs(cfg, &jobs, |job| {
        let img = load_image(&job.image)?;
        let gt = load_mask(require_mask(job)?)?;
        let rows = ablate(&img, &gt, &cfg.variants, &spec)?;
        write_json(&job.out.join(ABLATION_JSON_FILE), &rows)?;
        std::fs::write(job.out.join(ABLATION_TEXT_FILE), format_ablation(&rows))?;
        Ok(rows)
    })?;
    if !batch {
        print!("{}", format_ablation(&all_rows[0]));
        return Ok(());
    }
    let stats: Vec<AblationStats> = cfg
        .variants
        .iter()
        .enumerate()
        .map(|(k, &variant)| {
            let rows: Vec<&AblationRow> = all_rows.iter().map(|r| &r[k]).collect();
            let metrics: Vec<PixelMetrics> = rows.iter().map(|r| r.metrics).collect();
            AblationStats {
                variant,
                metrics: MetricStats::of(&metrics),
                coverage: MeanStd::of(rows.iter().map(|r| r.coverage)),
                n_regions: MeanStd::of(rows.iter().map(|r| r.n_regions as f64)),
            }
        })
        .collect();
    let table = ablation_batch_table(&stats);
    print!("{table}");
    write_json(&cfg.out.join(ABLATION_JSON_FILE), &stats)?;
    std::fs::write(cfg.out.join(ABLATION_TEXT_FILE), table)?;
    Ok(())
}

fn cmd_regionmix(cfg: &RunConfig) -> anyhow::Result<()> {
    let (jobs, _) = jobs(cfg, true)?;
    prepare_out(cfg)?;
    let indexed: Vec<(usize, Job)> = jobs.into_iter().enumerate().collect();
    let per_image = cfg
        .pipeline
        .exec
        .map(
            &indexed,
            |(i, job)| -> anyhow::Result<(Vec<LabeledRegion>, Vec<ExportSample>)> {
                let img = load_image(&job.image)?;
                let gt = load_mask(require_mask(job)?)?;
                let out = run_pipeline(&img, &cfg.pipeline)?;
                let labels = label_regions(&out.regions, &gt, &cfg.mix)?;
                let source = display(&job.image);
                let samples = match cfg.mix_mode {
                    ExportMode::Binary => binary_samples(&out.regions, &labels, &source),
                    ExportMode::Regionmix if out.regions.is_empty() => Vec::new(),
                    ExportMode::Regionmix => {
                        let mix = MixConfig {
                            prng_seed: cfg.mix.prng_seed.wrapping_add(*i as u64),
                            ..cfg.mix.clone()
                        };
                        synth_batch(&out.regions, &gt, &mix, &source, cfg.pipeline.exec)?
                            .into_iter()
                            .map(ExportSample::from)
                            .collect()
                    }
                };
                Ok((labels, samples))
            },
        )
        .into_iter()
        .collect::<anyhow::Result<Vec<_>>>()?;
    #[derive(Serialize)]
    struct ImageLabels<'a> {
        image: String,
        regions: &'a [LabeledRegion],
    }
    let labels: Vec<ImageLabels> = indexed
        .iter()
        .zip(&per_image)
        .map(|((_, job), (l, _))| ImageLabels {
            image: display(&job.image),
            regions: l,
        })
        .collect();
    write_json(&cfg.out.join("region_labels.json"), &labels)?;
    let samples: Vec<ExportSample> = per_image.into_iter().flat_map(|(_, s)| s).collect();
    let manifest = export_dataset(&samples, &cfg.out.join(DATASET_DIR), cfg.mix_mode)?;
    println!(
        "{} samples written to {}",
        manifest.n_samples,
        cfg.out.join(DATASET_DIR).display()
    );
    Ok(())
}

/// Default geometry and colours for a scene of the given kind.
pub fn default_scene(kind: &str, height: usize, width: usize) -> anyhow::Result<SceneKind> {
    const FG: Rgb8 = [215, 215, 205];
    Ok(match kind {
        "flat" => SceneKind::Flat {
            height,
            width,
            color: [128, 128, 128],
        },
        "two-tone" => SceneKind::TwoTone {
            height,
            width,
            split_col: width / 2,
            left: [60, 90, 140],
            right: FG,
        },
        "diagonal-stripe" => SceneKind::DiagonalStripe {
            height,
            width,
            stripe_width: (width / 6).max(2),
            fg: FG,
            bg_left: [40, 80, 120],
            bg_right: [40, 80, 120],
        },
        "wraparound" => SceneKind::Wraparound {
            height,
            width,
            band_start: (width * 3 / 8).max(1),
            band_end: (width * 5 / 8).max(2),
            fg: FG,
            bg: [50, 100, 60],
        },
        other => {
            return Err(usage(format!(
                "unknown scene kind {other:?} (flat, two-tone, diagonal-stripe, wraparound)"
            )))
        }
    })
}

fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let spec = match &args.scene {
        Some(p) => read_json::<SceneSpec>(p)?,
        None => SceneSpec {
            kind: default_scene(&args.kind, args.height, args.width)?,
            noise: args.noise,
            seed: args.seed,
        },
    };
    let (img, mask) = make_synthetic(&spec)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    save_image(&img, args.out.join("image.png"))?;
    save_mask(&mask, args.out.join("mask.png"))?;
    write_json(&args.out.join("scene.json"), &spec)?;
    println!(
        "{}x{} scene written to {}",
        img.height(),
        img.width(),
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("marg").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config() {
        let cli = parse(&[
            "segment",
            "--input",
            "a.png",
            "--topology",
            "cartesian",
            "--no-merge",
            "--fixed-tau",
            "10,12",
            "--seed-strategy",
            "random:7",
            "--seed",
            "3",
        ]);
        let Command::Segment(common) = cli.command else {
            panic!("wrong subcommand")
        };
        let cfg = resolve_config(&common).unwrap();
        assert_eq!(cfg.pipeline.grow.topology, Topology::Cartesian);
        assert_eq!(cfg.pipeline.merge, None);
        assert!(!cfg.pipeline.adaptive);
        assert_eq!(cfg.pipeline.grow.thresholds, ThresholdPair::new(10, 12));
        assert_eq!(cfg.pipeline.grow.seed_strategy, SeedStrategy::Random { n_seeds: 7 });
        assert_eq!((cfg.pipeline.grow.prng_seed, cfg.mix.prng_seed), (3, 3));
    }

    #[test]
    fn run_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RUN_CONFIG_FILE);
        let mut cfg = RunConfig::default();
        cfg.pipeline.merge = Some(MergeConfig::new(0.32).unwrap());
        cfg.pipeline.grow.edge_fraction = 0.1 + 0.2;
        cfg.variants = vec![Variant::Marg, Variant::Rsrg];
        write_json(&path, &cfg).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back, cfg);
        let partial = dir.path().join("partial.json");
        std::fs::write(&partial, r#"{"threads": 2, "pipeline": {"adaptive": false}}"#).unwrap();
        let p = RunConfig::load(&partial).unwrap();
        assert_eq!(p.threads, 2);
        assert!(!p.pipeline.adaptive);
        assert_eq!(p.pipeline.grow, RunConfig::default().pipeline.grow);
    }

    #[test]
    fn bad_tau_is_rejected() {
        assert!(parse_tau("10").is_err());
        assert!(parse_tau("a,3").is_err());
        assert_eq!(parse_tau("4, 6").unwrap(), ThresholdPair::new(4, 6));
        assert!(Cli::try_parse_from(["marg", "segment", "--fixed-tau", "3"]).is_err());
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of([1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
        assert_eq!(MeanStd::of([]).mean, 0.0);
    }

    #[test]
    fn missing_mask_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("i.png");
        save_image(&Image::filled(4, 4, [1, 2, 3]), &img).unwrap();
        let code = main_with_args([
            "marg",
            "eval",
            "--input",
            img.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }
}
