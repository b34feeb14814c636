//! Command-line front end and the end-to-end pipeline.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | configuration or validation error (including bad arguments) |
//! | 3 | data error (unreadable or malformed input, I/O) |
//! | 4 | internal error |
//! | 11-16 | `pipeline` failed in stage 1-6 (scene, voxelize, plan, survey, dataset, write) |

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::assets::{load_asset, AssetDescriptor, AssetLibrary};
use crate::cloud_io::{read_cloud, write_cloud, CloudFormat, PointCloud};
use crate::dataset::{
    build_dataset, density_report, extract_nodal, load_plot, remap_semantics, resplit_manifest,
    write_dataset, DatasetManifest, DatasetOptions, Plot, SplitFractions,
};
use crate::error::{Error, ErrorClass, Result};
use crate::geom::Rect;
use crate::labels::SemanticMapping;
use crate::ml::{
    evaluate_instances, evaluate_semantics, read_sidecar, sample_cylinders_grid, sample_cylinders_random, tree_mix,
    write_sample, CylinderSample, MeanIouMode, SegmentationResult,
};
use crate::presets;
use crate::procgen::{format_composition, generate_forest, read_scene, scene_composition, write_scene, ForestScene, FoliageGeneratorParams};
use crate::rng::derive_seed;
use crate::survey::{run_survey, FlightPlan, SurveyConfig, SurveySummary};
use crate::voxel::{load_grid, save_grid, voxelize_scene, OpacityTable, VoxelGrid, DEFAULT_VOXEL_SIZE};

/// Directory searched for `pipeline.toml` when `--config` is absent.
pub const CONFIG_DIR_ENV: &str = "SYLVA_CONFIG_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Internal => EXIT_INTERNAL,
    }
}

/// A mesh asset on disk: geometry plus its TOML descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetEntry {
    pub mesh: PathBuf,
    pub descriptor: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneBlock {
    /// `[min_x, min_y, max_x, max_y]` in meters.
    pub extent: [f64; 4],
    /// Include the built-in parametric trees in the library.
    pub parametric_assets: bool,
    pub assets: Vec<AssetEntry>,
    /// Used when `generators` is empty. Only `two_layer` exists.
    pub generator_preset: String,
    pub generators: Vec<FoliageGeneratorParams>,
    pub voxel_size: f64,
    pub opacity: OpacityTable,
    pub seed: Option<u64>,
}

impl Default for SceneBlock {
    fn default() -> Self {
        SceneBlock {
            extent: [0.0, 0.0, 50.0, 50.0],
            parametric_assets: true,
            assets: Vec::new(),
            generator_preset: "two_layer".into(),
            generators: Vec::new(),
            voxel_size: DEFAULT_VOXEL_SIZE,
            opacity: OpacityTable::default(),
            seed: None,
        }
    }
}

impl SceneBlock {
    pub fn extent(&self) -> Rect {
        let [a, b, c, d] = self.extent;
        Rect::new(a, b, c, d)
    }

    pub fn generators(&self) -> Result<Vec<FoliageGeneratorParams>> {
        if !self.generators.is_empty() {
            return Ok(self.generators.clone());
        }
        match self.generator_preset.as_str() {
            "two_layer" => Ok(presets::two_layer_generators()),
            "none" => Ok(Vec::new()),
            other => Err(Error::Config(format!("unknown generator_preset '{other}' (two_layer|none)"))),
        }
    }

    pub fn library(&self) -> Result<AssetLibrary> {
        let mut lib = if self.parametric_assets {
            presets::parametric_library()?
        } else {
            AssetLibrary::default()
        };
        for entry in &self.assets {
            let meta = AssetDescriptor::from_file(&entry.descriptor)?;
            let loaded = load_asset(&entry.mesh, &meta)?;
            if loaded.degenerate_dropped > 0 {
                log::warn!(
                    "{}: dropped {} degenerate triangles",
                    entry.mesh.display(),
                    loaded.degenerate_dropped
                );
            }
            lib.insert(loaded.asset)?;
        }
        Ok(lib)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetBlock {
    pub tile_size: f64,
    pub fractions: SplitFractions,
    pub density_threshold: f64,
    pub format: CloudFormat,
    /// `identity`, `five-class-binary` or `leaf-wood-binary`.
    pub mapping: String,
    pub scene_name: String,
    pub split_seed: Option<u64>,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        let d = DatasetOptions::default();
        DatasetBlock {
            tile_size: d.tile_size,
            fractions: d.fractions,
            density_threshold: d.density_threshold,
            format: d.format,
            mapping: "identity".into(),
            scene_name: "scene0".into(),
            split_seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    pub cylinder_radius: f64,
    pub grid_stride: f64,
    pub mix_fraction: f64,
    pub iou_threshold: f64,
    pub mean_iou: MeanIouMode,
}

impl Default for EvalBlock {
    fn default() -> Self {
        EvalBlock {
            cylinder_radius: crate::ml::DEFAULT_RADIUS,
            grid_stride: crate::ml::DEFAULT_STRIDE,
            mix_fraction: crate::ml::DEFAULT_MIX_FRACTION,
            iou_threshold: crate::ml::DEFAULT_IOU_THRESHOLD,
            mean_iou: MeanIouMode::Matched,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// 0 uses every core.
    pub workers: usize,
    pub scene: SceneBlock,
    pub survey: SurveyConfig,
    pub dataset: DatasetBlock,
    pub eval: EvalBlock,
}

/// Seeds each stage runs with. Derived seeds keep 63 bits so they fit a
/// TOML integer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub scene: u64,
    pub survey: u64,
    pub split: u64,
    pub cylinders: u64,
}

impl PipelineConfig {
    /// Parses TOML and applies `path=value` overrides on top.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value: toml::Table = text.parse().map_err(|e| Error::Config(format!("config: {e}")))?;
        for (path, raw) in overrides {
            set_dotted(&mut value, path, raw)?;
        }
        let cfg: PipelineConfig = value.try_into().map_err(|e| Error::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Reads `path`, resolving relative asset paths against its directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Config(format!("config file {} not found", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for a in &mut cfg.scene.assets {
            a.mesh = base.join(&a.mesh);
            a.descriptor = base.join(&a.descriptor);
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked before running a stage.
    pub fn validate(&self) -> Result<()> {
        self.scene.extent().validate()?;
        if !(self.scene.voxel_size > 0.0) {
            return Err(Error::Validation(format!("scene.voxel_size must be > 0, got {}", self.scene.voxel_size)));
        }
        self.scene.opacity.validate()?;
        for g in self.scene.generators()? {
            g.validate()?;
        }
        for a in &self.scene.assets {
            for p in [&a.mesh, &a.descriptor] {
                if !p.is_file() {
                    return Err(Error::Config(format!("asset file {} does not exist", p.display())));
                }
            }
        }
        self.survey.scanner().validate()?;
        self.survey.plan(&self.scene.extent())?;
        self.dataset.fractions.validate()?;
        SemanticMapping::by_name(&self.dataset.mapping)?;
        if !(self.dataset.tile_size > 0.0) {
            return Err(Error::Validation(format!("dataset.tile_size must be > 0, got {}", self.dataset.tile_size)));
        }
        Ok(())
    }

    pub fn seeds(&self) -> StageSeeds {
        let derive = |label| derive_seed(self.seed, label) & i64::MAX as u64;
        StageSeeds {
            scene: self.scene.seed.unwrap_or_else(|| derive("scene")),
            survey: self.survey.seed.unwrap_or_else(|| derive("survey")),
            split: self.dataset.split_seed.unwrap_or_else(|| derive("split")),
            cylinders: derive("cylinders"),
        }
    }

    pub fn dataset_options(&self) -> DatasetOptions {
        DatasetOptions {
            tile_size: self.dataset.tile_size,
            fractions: self.dataset.fractions,
            split_seed: self.seeds().split,
            density_threshold: self.dataset.density_threshold,
            format: self.dataset.format,
        }
    }
}

/// Sets `a.b.c = raw` in a TOML table. `raw` is read as a TOML value when
/// it parses as one and as a plain string otherwise.
pub fn set_dotted(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{path}'")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{path}': '{p}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Runs `f` on a rayon pool with `workers` threads (0 = default pool).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Scene,
    Voxelize,
    Plan,
    Survey,
    Dataset,
    Write,
}

impl Stage {
    pub fn number(self) -> i32 {
        self as i32
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Scene => "scene",
            Stage::Voxelize => "voxelize",
            Stage::Plan => "plan",
            Stage::Survey => "survey",
            Stage::Dataset => "dataset",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: Error,
}

impl StageFailure {
    /// Configuration problems keep their class code; stage failures map to
    /// `10 + stage`.
    pub fn exit_code(&self) -> i32 {
        match self.stage {
            Stage::Config => exit_code(self.error.class()),
            s => 10 + s.number(),
        }
    }
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageFailure {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

/// Everything needed to replay a run, plus what it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub dataset_name: String,
    pub seeds: StageSeeds,
    pub instances: usize,
    pub stem_density_per_ha: f64,
    pub occupied_voxels: usize,
    pub survey: SurveySummary,
    pub plots: usize,
    pub mean_plot_density: f64,
    pub timings: Vec<StageTiming>,
    pub config: PipelineConfig,
}

/// In-memory products of a pipeline run.
pub struct PipelineOutput {
    pub scene: ForestScene,
    pub library: AssetLibrary,
    pub grid: VoxelGrid,
    pub plan: FlightPlan,
    pub cloud: PointCloud,
    pub report: RunReport,
    pub dataset: crate::dataset::Dataset,
}

/// Runs scene generation through dataset assembly without touching disk.
pub fn run_pipeline_in_memory(cfg: &PipelineConfig) -> std::result::Result<PipelineOutput, StageFailure> {
    let at = |stage| move |error| StageFailure { stage, error };
    cfg.validate().map_err(at(Stage::Config))?;
    let library = cfg.scene.library().map_err(at(Stage::Config))?;
    let seeds = cfg.seeds();
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage, timings: &mut Vec<StageTiming>| {
        timings.push(StageTiming {
            stage,
            seconds: clock.elapsed().as_secs_f64(),
        });
        clock = Instant::now();
    };

    let mut run = || -> std::result::Result<PipelineOutput, StageFailure> {
        let extent = cfg.scene.extent();
        let generators = cfg.scene.generators().map_err(at(Stage::Config))?;
        let scene = generate_forest(extent, &generators, &library, seeds.scene).map_err(at(Stage::Scene))?;
        info!("scene: {} instances", scene.instances.len());
        lap(Stage::Scene, &mut timings);

        let grid = voxelize_scene(&scene, &library, cfg.scene.voxel_size, &cfg.scene.opacity)
            .map_err(at(Stage::Voxelize))?;
        info!("voxelized: {} occupied voxels", grid.len());
        lap(Stage::Voxelize, &mut timings);

        let plan = cfg.survey.plan(&extent).map_err(at(Stage::Plan))?;
        lap(Stage::Plan, &mut timings);

        let (cloud, summary) = run_survey(&grid, &plan, &cfg.survey.scanner(), seeds.survey).map_err(at(Stage::Survey))?;
        info!(
            "survey: {} pulses, {} points, {:.1} pts/m2",
            summary.pulse_count, summary.point_count, summary.mean_density
        );
        lap(Stage::Survey, &mut timings);

        let mapping = SemanticMapping::by_name(&cfg.dataset.mapping).map_err(at(Stage::Config))?;
        let mut remapped = remap_semantics(&cloud, &mapping).map_err(at(Stage::Dataset))?;
        remapped.extent = extent;
        let dataset = build_dataset(&[(cfg.dataset.scene_name.clone(), remapped)], &cfg.dataset_options())
            .map_err(at(Stage::Dataset))?;
        lap(Stage::Dataset, &mut timings);

        let n_plots = dataset.plots.len();
        let mean_plot_density = if n_plots > 0 {
            dataset.plots.iter().map(Plot::density).sum::<f64>() / n_plots as f64
        } else {
            0.0
        };
        let report = RunReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            dataset_name: dataset.manifest.name.clone(),
            seeds,
            instances: scene.instances.len(),
            stem_density_per_ha: scene.stem_density(),
            occupied_voxels: grid.len(),
            survey: summary,
            plots: n_plots,
            mean_plot_density,
            timings: timings.clone(),
            config: cfg.clone(),
        };
        Ok(PipelineOutput {
            scene,
            library: library.clone(),
            grid,
            plan,
            cloud,
            report,
            dataset,
        })
    };
    run()
}

/// Full pipeline with outputs under `out_dir`:
///
/// ```text
/// scene.txt  flight_plan.toml  survey_summary.toml  run_report.toml
/// dataset/manifest.toml  dataset/plots/*
/// ```
///
/// Outputs are staged in a sibling temporary directory and moved into
/// place only when every stage succeeds, so a failed run leaves nothing.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> std::result::Result<RunReport, StageFailure> {
    let out = with_workers(cfg.workers, || run_pipeline_in_memory(cfg))
        .map_err(|error| StageFailure { stage: Stage::Config, error })??;
    let write = |e| StageFailure {
        stage: Stage::Write,
        error: e,
    };
    let parent = match out_dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(|e| write(Error::io(&parent, e)))?;
    let name = out_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);

    let result = (|| -> Result<RunReport> {
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        write_scene(&out.scene, &tmp.join("scene.txt"))?;
        write_text(&tmp.join("flight_plan.toml"), &toml::to_string(&out.plan).expect("plan serializes"))?;
        write_text(&tmp.join("survey_summary.toml"), &out.report.survey.to_toml())?;
        write_dataset(&out.dataset, &tmp.join("dataset"))?;
        write_text(&tmp.join("run_report.toml"), &toml::to_string(&out.report).expect("report serializes"))?;
        if out_dir.exists() {
            std::fs::remove_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        }
        std::fs::rename(&tmp, out_dir).map_err(|e| Error::io(out_dir, e))?;
        Ok(out.report.clone())
    })();
    if result.is_err() {
        let _ = std::fs::remove_dir_all(&tmp);
    }
    result.map_err(write)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Parser, Debug)]
#[command(name = "sylva", version, about = "Synthetic forest scenes and virtual laser-scanning datasets")]
pub struct Cli {
    /// Pipeline configuration (TOML). Defaults to $SYLVA_CONFIG_DIR/pipeline.toml if present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Trailing `--section.key value` pairs.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pub pairs: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Scene -> voxels -> survey -> tiled, split dataset.
    Pipeline {
        #[arg(long, default_value = "sylva_out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate a forest scene file.
    GenerateScene {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Voxelize a scene and write a grid dump.
    Voxelize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write the flight plan for a scene's extent.
    PlanFlight {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Survey a scene (or a grid dump) and write the point cloud.
    Survey {
        #[arg(long)]
        scene: PathBuf,
        /// Use this grid dump instead of voxelizing the scene.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Tile a cloud into plots, split them, and write a dataset directory.
    Tile {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tiling extent `min_x,min_y,max_x,max_y`; defaults to the points' bounding box.
        #[arg(long, value_delimiter = ',')]
        extent: Option<Vec<f64>>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Reassign the splits of a dataset manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
        seed: u64,
        /// Defaults to overwriting the input manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Nodal point cloud from a scene's mesh vertices.
    Nodal {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Cut cylinder samples from every plot of a dataset split.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        /// Random cylinders per plot; grid sampling when absent.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Tree-mix two cylinder samples.
    Mix {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a prediction cloud against a ground-truth cloud.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Density and composition tables.
    Stats {
        /// Point clouds to summarize.
        #[arg(long)]
        cloud: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

impl Command {
    fn overrides(&self) -> &Overrides {
        match self {
            Command::Pipeline { overrides, .. }
            | Command::GenerateScene { overrides, .. }
            | Command::Voxelize { overrides, .. }
            | Command::PlanFlight { overrides, .. }
            | Command::Survey { overrides, .. }
            | Command::Tile { overrides, .. }
            | Command::Split { overrides, .. }
            | Command::Nodal { overrides, .. }
            | Command::Sample { overrides, .. }
            | Command::Mix { overrides, .. }
            | Command::Eval { overrides, .. }
            | Command::Stats { overrides, .. } => overrides,
        }
    }
}

/// Turns `--a.b 1 --c=2` into `[("a.b", "1"), ("c", "2")]`.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("unexpected argument '{a}', overrides look like --section.key value")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let v = it
                .next()
                .ok_or_else(|| Error::Config(format!("override --{key} needs a value")))?;
            out.push((key.to_string(), v.clone()));
        }
    }
    Ok(out)
}

fn resolve_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<PipelineConfig> {
    let from_env = std::env::var_os(CONFIG_DIR_ENV).map(|d| PathBuf::from(d).join("pipeline.toml"));
    match (path, from_env) {
        (Some(p), _) => PipelineConfig::load(p, overrides),
        (None, Some(p)) if p.is_file() => PipelineConfig::load(&p, overrides),
        _ => PipelineConfig::from_toml("", overrides),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Stage(f)) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
        Err(Failure::Plain(e)) => {
            eprintln!("error: {e}");
            exit_code(e.class())
        }
    }
}

enum Failure {
    Stage(StageFailure),
    Plain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Plain(e)
    }
}

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    let overrides = parse_overrides(&cli.command.overrides().pairs)?;
    let mut cfg = resolve_config(cli.config.as_deref(), &overrides)?;
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Command::Pipeline { out, .. } = &cli.command {
        let report = run_pipeline(&cfg, out).map_err(Failure::Stage)?;
        println!(
            "{}: {} plots, {:.1} pts/m2 mean, report in {}",
            report.dataset_name,
            report.plots,
            report.survey.mean_density,
            out.join("run_report.toml").display()
        );
        return Ok(());
    }
    with_workers(cfg.workers, || run_stage(&cli.command, &cfg))??;
    Ok(())
}

fn run_stage(cmd: &Command, cfg: &PipelineConfig) -> Result<()> {
    let seeds = cfg.seeds();
    match cmd {
        Command::Pipeline { .. } => unreachable!("handled by execute"),
        Command::GenerateScene { out, .. } => {
            cfg.validate()?;
            let lib = cfg.scene.library()?;
            let scene = generate_forest(cfg.scene.extent(), &cfg.scene.generators()?, &lib, seeds.scene)?;
            write_scene(&scene, out)?;
            print!("{}", format_composition(&scene_composition(&scene)));
            println!("stem density\t{:.1} /ha", scene.stem_density());
        }
        Command::Voxelize { scene, out, .. } => {
            let scene = read_scene(scene)?;
            let grid = voxelize_scene(&scene, &cfg.scene.library()?, cfg.scene.voxel_size, &cfg.scene.opacity)?;
            save_grid(&grid, out)?;
            println!("occupied_voxels = {}", grid.len());
        }
        Command::PlanFlight { scene, out, .. } => {
            let scene = read_scene(scene)?;
            let plan = cfg.survey.plan(&scene.extent)?;
            write_text(out, &toml::to_string(&plan).expect("plan serializes"))?;
            println!("legs = {}\nlength_m = {:.1}\nduration_s = {:.1}", plan.legs.len(), plan.total_length(), plan.duration());
        }
        Command::Survey {
            scene,
            grid,
            out,
            summary,
            ..
        } => {
            let scene = read_scene(scene)?;
            let grid = match grid {
                Some(g) => load_grid(g)?,
                None => voxelize_scene(&scene, &cfg.scene.library()?, cfg.scene.voxel_size, &cfg.scene.opacity)?,
            };
            let plan = cfg.survey.plan(&scene.extent)?;
            let (cloud, s) = run_survey(&grid, &plan, &cfg.survey.scanner(), seeds.survey)?;
            write_cloud(&cloud, out, CloudFormat::from_path(out))?;
            let text = s.to_toml();
            if let Some(p) = summary {
                write_text(p, &text)?;
            }
            print!("{text}");
        }
        Command::Tile { cloud, out, extent, .. } => {
            let mut c = read_cloud(cloud)?;
            if let Some(e) = extent {
                let [x0, y0, x1, y1] = e[..] else {
                    return Err(Error::Config(format!("--extent needs 4 values, got {}", e.len())));
                };
                let r = Rect::new(x0, y0, x1, y1);
                r.validate()?;
                c = PointCloud::new(c.points, r, c.provenance);
            }
            let mapping = SemanticMapping::by_name(&cfg.dataset.mapping)?;
            let c = remap_semantics(&c, &mapping)?;
            let ds = build_dataset(&[(cfg.dataset.scene_name.clone(), c)], &cfg.dataset_options())?;
            let path = write_dataset(&ds, out)?;
            let (tr, va, te) = ds.manifest.split_counts();
            println!("{}: {} plots ({tr}/{va}/{te}) -> {}", ds.manifest.name, ds.plots.len(), path.display());
        }
        Command::Split { manifest, seed, out, .. } => {
            let m = DatasetManifest::load(manifest)?;
            let m = resplit_manifest(&m, &cfg.dataset.fractions, *seed)?;
            let dest = out.as_ref().unwrap_or(manifest);
            write_text(dest, &m.to_toml())?;
            let (tr, va, te) = m.split_counts();
            println!("train = {tr}\nval = {va}\ntest = {te}");
        }
        Command::Nodal { scene, out, .. } => {
            let scene = read_scene(scene)?;
            let cloud = extract_nodal(&scene, &cfg.scene.library()?)?;
            write_cloud(&cloud, out, CloudFormat::from_path(out))?;
            println!("points = {}\ndensity = {:.3}", cloud.len(), cloud.density());
        }
        Command::Sample {
            manifest,
            out,
            split,
            count,
            seed,
            ..
        } => {
            let m = DatasetManifest::load(manifest)?;
            let which: crate::dataset::SplitName = split.parse()?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let mut written = 0;
            for entry in m.plots_in(which) {
                let plot = load_plot(manifest, entry)?;
                let r = cfg.eval.cylinder_radius;
                let samples = match count {
                    Some(n) => sample_cylinders_random(&plot, &entry.id, r, *n, seed.unwrap_or(seeds.cylinders))?,
                    None => sample_cylinders_grid(&plot, &entry.id, r, cfg.eval.grid_stride)?,
                };
                for (i, s) in samples.iter().enumerate() {
                    write_sample(s, out, &format!("{}_c{i:03}", entry.id), m.format)?;
                    written += 1;
                }
            }
            println!("samples = {written}");
        }
        Command::Mix { a, b, out, seed, .. } => {
            let a = load_sample(a)?;
            let b = load_sample(b)?;
            let mixed = tree_mix(&a, &b, cfg.eval.mix_fraction, *seed)?;
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let stem = out
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| Error::Config(format!("bad output path {}", out.display())))?;
            write_sample(&mixed, dir, &stem, CloudFormat::from_path(out))?;
            println!("trees_before = {}\ntrees_after = {}", a.tree_ids().len(), mixed.tree_ids().len());
        }
        Command::Eval { pred, gt, .. } => {
            let p = SegmentationResult::from_points(&read_cloud(pred)?.points);
            let g = SegmentationResult::from_points(&read_cloud(gt)?.points);
            let inst = evaluate_instances(&p, &g, cfg.eval.iou_threshold, cfg.eval.mean_iou)?;
            let sem = evaluate_semantics(&p.semantic, &g.semantic)?;
            println!("[instance]\nmean_iou = {:.3}\nprecision = {:.3}\nrecall = {:.3}\nf1 = {:.3}", inst.mean_iou, inst.precision, inst.recall, inst.f1);
            println!("\n[semantic]\naccuracy = {:.3}", sem.accuracy);
            for c in &sem.classes {
                println!("{}_iou = {:.3}", c.class.name(), c.iou);
            }
        }
        Command::Stats {
            cloud,
            manifest,
            scene,
            ..
        } => {
            println!("source\tprovenance\tpoints\tarea_m2\tpts_per_m2");
            let scene = scene.as_ref().map(|p| read_scene(p)).transpose()?;
            for path in cloud {
                let mut c = read_cloud(path)?;
                if let Some(s) = &scene {
                    c.extent = s.extent;
                }
                println!(
                    "{}\t{}\t{}\t{:.1}\t{:.3}",
                    path.display(),
                    c.provenance,
                    c.len(),
                    c.extent.area(),
                    c.density()
                );
            }
            if let Some(mpath) = manifest {
                let m = DatasetManifest::load(mpath)?;
                let plots: Vec<(String, String, Plot)> = m
                    .plots
                    .iter()
                    .map(|e| load_plot(mpath, e).map(|p| (e.scene.clone(), e.id.clone(), p)))
                    .collect::<Result<_>>()?;
                let report = density_report(plots.iter().map(|(s, i, p)| (s.as_str(), i.as_str(), p)), m.density_threshold);
                println!();
                print!("{}", report.format_table());
            }
            if let Some(s) = &scene {
                println!();
                print!("{}", format_composition(&scene_composition(s)));
            }
        }
    }
    Ok(())
}

/// Reads a cylinder sample written by [`write_sample`].
pub fn load_sample(path: &Path) -> Result<CylinderSample> {
    let side = read_sidecar(&path.with_extension("toml"))?;
    let cloud = read_cloud(path)?;
    Ok(CylinderSample {
        center: side.center,
        radius: side.radius,
        points: cloud.points,
        source_plot: side.source_plot,
    })
}
