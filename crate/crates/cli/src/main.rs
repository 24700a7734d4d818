use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bevkit::assign::{assign_dynamic, assign_fixed_iou, DynamicConfig};
use bevkit::boxes::{rotated_nms, NmsConfig};
use bevkit::cost::{encoder_cost, lifting_memory, EncoderMode};
use bevkit::io;
use bevkit::metrics::{binarize, evaluate, EvalResult, DEFAULT_DISTANCE_THRESHOLDS};
use bevkit::pipeline::{generate_scenes, noise_sweep, PipelineConfig};
use bevkit::scene::{generate_scene_with, NoiseSpec, SceneConfig, SyntheticScene};
use bevkit::voxel::{bev_centerness, spatial_to_channel, unproject, Fusion, Sampling, UnprojectOptions, VoxelGridSpec};
use bevkit::BevError;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod selftest;

/// Multi-camera BEV geometry toolkit.
#[derive(Debug, Parser)]
#[command(name = "bevkit", version)]
struct Cli {
    /// Worker threads (default: available parallelism). `1` runs the sequential reference path.
    #[arg(long, global = true, env = "BEVKIT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene bundle.
    Gen(GenArgs),
    /// Unproject per-camera features into a voxel grid.
    Project(ProjectArgs),
    /// Write a distance-aware centerness map.
    Centerness(CenternessArgs),
    /// Assign anchors to ground-truth boxes.
    Assign(AssignArgs),
    /// Rotated non-maximum suppression over a box CSV.
    Nms(NmsArgs),
    /// Segmentation IoU and center-distance AP.
    Eval(EvalArgs),
    /// Parameter and MAC counts of the BEV encoder variants.
    Bench(BenchArgs),
    /// Pipeline quality under increasing extrinsic noise.
    NoiseSweep(SweepArgs),
    /// Finite-difference check of every loss gradient.
    LossCheck(LossCheckArgs),
    /// Run the oracle and invariant suite and write its artifacts.
    Selftest(selftest::SelftestArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    cameras: usize,
    #[arg(long, default_value_t = 20)]
    boxes: usize,
    /// Full image size `WxH` the intrinsics refer to.
    #[arg(long, default_value = "1600x900", value_parser = parse_pair)]
    image: (usize, usize),
    /// Allow boxes off the drivable area.
    #[arg(long)]
    unconstrained: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Voxel counts `NXxNYxNZ`; x and y are centered on the ego origin.
    #[arg(long, value_parser = parse_triple)]
    grid: Option<(usize, usize, usize)>,
    /// Voxel size `dx,dy,dz` in meters.
    #[arg(long, value_parser = parse_floats3)]
    voxel_size: Option<[f64; 3]>,
    /// Minimum grid corner `x,y,z` in meters.
    #[arg(long, value_parser = parse_floats3, allow_hyphen_values = true)]
    origin: Option<[f64; 3]>,
}

impl GridArgs {
    fn resolve(&self, fallback: VoxelGridSpec) -> bevkit::Result<VoxelGridSpec> {
        let mut spec = match self.grid {
            Some((nx, ny, nz)) => VoxelGridSpec::centered(nx, ny, nz)?,
            None => fallback,
        };
        if let Some(v) = self.voxel_size {
            spec.voxel_size = v;
            if self.origin.is_none() && self.grid.is_some() {
                spec.origin[0] = -(spec.nx as f64) * v[0] / 2.0;
                spec.origin[1] = -(spec.ny as f64) * v[1] / 2.0;
            }
        }
        if let Some(o) = self.origin {
            spec.origin = o;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FusionArg {
    Average,
    Sum,
    First,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplingArg {
    Bilinear,
    Nearest,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    /// Scene bundle supplying rig, features and grid.
    #[arg(long, conflicts_with_all = ["rig", "features"], required_unless_present_all = ["rig", "features"])]
    scene: Option<PathBuf>,
    #[arg(long, requires = "features")]
    rig: Option<PathBuf>,
    /// Directory of feature tensors, one per camera in file-name order.
    #[arg(long, requires = "rig")]
    features: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value = "average")]
    fusion: FusionArg,
    #[arg(long, value_enum, default_value = "bilinear")]
    sampling: SamplingArg,
    /// Voxel grid output.
    #[arg(long)]
    out: PathBuf,
    /// Also write the Spatial-to-Channel BEV grid here.
    #[arg(long)]
    bev: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CenternessArgs {
    /// BEV size `NXxNY`.
    #[arg(long, default_value = "400x400", value_parser = parse_pair)]
    grid: (usize, usize),
    /// Center in cell coordinates `x,y`; defaults to the grid middle.
    #[arg(long, value_parser = parse_floats2)]
    center: Option<[f64; 2]>,
    /// PGM heatmap output.
    #[arg(long)]
    out: PathBuf,
    /// Optional raw tensor output.
    #[arg(long)]
    bin: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AssignMode {
    Fixed,
    Dynamic,
}

#[derive(Debug, Args)]
struct AssignArgs {
    #[arg(long, value_enum, default_value = "fixed")]
    mode: AssignMode,
    /// Anchor boxes, box CSV format.
    #[arg(long)]
    anchors: PathBuf,
    #[arg(long)]
    gts: PathBuf,
    /// Per-anchor class scores and decoded boxes (dynamic mode).
    #[arg(long, required_if_eq("mode", "dynamic"))]
    preds: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    pos_iou: f64,
    #[arg(long, default_value_t = 0.45)]
    neg_iou: f64,
    #[arg(long, default_value_t = DynamicConfig::default().bag_size)]
    bag_size: usize,
    #[arg(long, default_value_t = DynamicConfig::default().score_weight)]
    score_weight: f64,
    #[arg(long, default_value_t = DynamicConfig::default().ignore_iou)]
    ignore_iou: f64,
    /// Assignment CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NmsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = NmsConfig::default().iou_threshold)]
    iou: f64,
    #[arg(long, default_value_t = NmsConfig::default().score_threshold)]
    score: f64,
    #[arg(long, default_value_t = NmsConfig::default().max_out)]
    max: usize,
    /// Surviving boxes; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    gts: PathBuf,
    /// Predicted BEV map tensor; binarized at `--seg-threshold`.
    #[arg(long, requires = "map_gt")]
    map_pred: Option<PathBuf>,
    /// Binary ground-truth BEV map tensor.
    #[arg(long, requires = "map_pred")]
    map_gt: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    seg_threshold: f32,
    /// Match distances in meters.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_DISTANCE_THRESHOLDS)]
    thresholds: Vec<f64>,
    /// Metrics CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchMode {
    Naive3d,
    S2c2d,
    Both,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value = "400x400x12", value_parser = parse_triple)]
    grid: (usize, usize, usize),
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, value_enum, default_value = "both")]
    mode: BenchMode,
    /// Feature channels per voxel.
    #[arg(long, default_value_t = 64)]
    channels: usize,
    /// Output channels of every convolution.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Image feature size `WxH` and depth bins for the lifting-memory comparison.
    #[arg(long, value_parser = parse_pair)]
    image: Option<(usize, usize)>,
    #[arg(long, default_value_t = 64)]
    depth_bins: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Scene bundles to evaluate.
    #[arg(long, num_args = 1..)]
    scene: Vec<PathBuf>,
    /// Additionally generate this many scenes from `--seed`.
    #[arg(long, default_value_t = 0)]
    generate: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = bevkit::scene::DEFAULT_NOISE_LEVELS)]
    levels: Vec<f64>,
    /// Perturbation seeds per scene and level.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Perturb rotations only.
    #[arg(long, conflicts_with = "translation_only")]
    rotation_only: bool,
    /// Perturb translations only.
    #[arg(long)]
    translation_only: bool,
    /// Sweep CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LossCheckArgs {
    #[arg(long, default_value_t = 100)]
    inputs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failures, each mapped to its own exit code.
#[derive(Debug)]
pub enum CliError {
    Bev(BevError),
    Invariant(String),
}

impl From<BevError> for CliError {
    fn from(e: BevError) -> Self {
        Self::Bev(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Bev(BevError::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Bev(BevError::NotFound(_)) => 3,
            Self::Bev(BevError::Format(_) | BevError::Json(_) | BevError::Csv(_) | BevError::InvalidCamera { .. }) => 4,
            Self::Bev(BevError::ShapeMismatch(_)) => 5,
            Self::Invariant(_) => 6,
            Self::Bev(BevError::InvalidArgument(_) | BevError::CameraIndex { .. } | BevError::PixelOutOfBounds { .. }) => 2,
            Self::Bev(BevError::Io(_)) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Bev(e) => write!(f, "{e}"),
            Self::Invariant(msg) => write!(f, "invariant violated: {msg}"),
        }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

fn parse_dims(s: &str, n: usize) -> Result<Vec<usize>, String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    if parts.len() != n {
        return Err(format!("expected {n} sizes separated by `x`, got `{s}`"));
    }
    parts
        .iter()
        .map(|p| match p.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("invalid size `{p}`")),
            Ok(v) => Ok(v),
        })
        .collect()
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let d = parse_dims(s, 2)?;
    Ok((d[0], d[1]))
}

fn parse_triple(s: &str) -> Result<(usize, usize, usize), String> {
    let d = parse_dims(s, 3)?;
    Ok((d[0], d[1], d[2]))
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let vals = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    vals.try_into().map_err(|_| format!("expected {N} comma-separated numbers, got `{s}`"))
}

fn parse_floats2(s: &str) -> Result<[f64; 2], String> {
    parse_floats::<2>(s)
}

fn parse_floats3(s: &str) -> Result<[f64; 3], String> {
    parse_floats::<3>(s)
}

/// Writes `f`'s output to `path`, or stdout when `path` is `None`.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> bevkit::Result<()>) -> CliResult {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let mut file = std::io::BufWriter::new(fs::File::create(p)?);
            f(&mut file)?;
            file.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
        }
    }
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> CliResult {
    let cfg = SceneConfig {
        n_cameras: a.cameras,
        n_boxes: a.boxes,
        image_size: (a.image.0 as u32, a.image.1 as u32),
        constrained_placement: !a.unconstrained,
        ..SceneConfig::default()
    };
    let scene = generate_scene_with(a.seed, &cfg)?;
    io::save_scene(&a.out, &scene)?;
    println!(
        "scene seed {} with {} cameras and {} boxes written to {}",
        a.seed,
        scene.rig.len(),
        scene.gt_boxes.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_project(a: &ProjectArgs) -> CliResult {
    let (rig, features, fallback) = match &a.scene {
        Some(dir) => {
            let s = io::load_scene(dir)?;
            (s.rig, s.feature_images, s.grid)
        }
        None => {
            let rig = io::load_rig(a.rig.as_deref().expect("clap requires --rig"))?;
            let feats = io::load_feature_dir(a.features.as_deref().expect("clap requires --features"))?;
            (rig, feats, VoxelGridSpec::default())
        }
    };
    let spec = a.grid.resolve(fallback)?;
    let opts = UnprojectOptions {
        fusion: match a.fusion {
            FusionArg::Average => Fusion::Average,
            FusionArg::Sum => Fusion::Sum,
            FusionArg::First => Fusion::First,
        },
        sampling: match a.sampling {
            SamplingArg::Bilinear => Sampling::Bilinear,
            SamplingArg::Nearest => Sampling::Nearest,
        },
    };
    let voxels = unproject(&rig, &features, &spec, opts)?;
    io::save_voxel_grid(&a.out, &voxels)?;
    if let Some(bev) = &a.bev {
        io::save_bev_grid(bev, &spatial_to_channel(&voxels))?;
    }
    let observed = voxels.hit_count.iter().filter(|&&h| h > 0).count();
    println!(
        "{}x{}x{} grid, {} channels, {observed} of {} voxels observed",
        spec.nx,
        spec.ny,
        spec.nz,
        voxels.channels,
        spec.num_voxels()
    );
    Ok(())
}

fn cmd_centerness(a: &CenternessArgs) -> CliResult {
    let (nx, ny) = a.grid;
    let center = a
        .center
        .map_or(((nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0), |[x, y]| (x, y));
    let map = bev_centerness(nx, ny, center)?;
    io::save_pgm(&a.out, &map, 0, 1.0, 2.0)?;
    if let Some(bin) = &a.bin {
        io::save_bev_grid(bin, &map)?;
    }
    println!("{nx}x{ny} centerness around ({}, {}) written to {}", center.0, center.1, a.out.display());
    Ok(())
}

fn cmd_assign(a: &AssignArgs) -> CliResult {
    let anchors = io::load_boxes(&a.anchors)?;
    let gts = io::load_boxes(&a.gts)?;
    let result = match a.mode {
        AssignMode::Fixed => assign_fixed_iou(&anchors, &gts, a.pos_iou, a.neg_iou)?,
        AssignMode::Dynamic => {
            let preds = io::load_predictions(a.preds.as_deref().expect("clap requires --preds"))?;
            let cfg = DynamicConfig {
                bag_size: a.bag_size,
                score_weight: a.score_weight,
                ignore_iou: a.ignore_iou,
            };
            assign_dynamic(&anchors, &gts, &preds, &cfg)?
        }
    };
    with_output(a.out.as_deref(), |w| io::write_assignment_csv(w, &result))?;
    eprintln!(
        "{} positive, {} negative, {} ignored",
        result.positive.len(),
        result.negative.len(),
        result.ignored.len()
    );
    Ok(())
}

fn cmd_nms(a: &NmsArgs) -> CliResult {
    let boxes = io::load_boxes(&a.input)?;
    let cfg = NmsConfig {
        iou_threshold: a.iou,
        score_threshold: a.score,
        max_out: a.max,
    };
    let kept = rotated_nms(&boxes, &cfg);
    with_output(a.out.as_deref(), |w| io::write_boxes_csv(w, &kept))?;
    eprintln!("{} of {} boxes kept", kept.len(), boxes.len());
    Ok(())
}

fn print_eval(e: &EvalResult) {
    for (c, iou) in e.seg_iou_per_class.iter().enumerate() {
        println!("seg_iou[{c}]  {iou:.4}");
    }
    let header: Vec<String> = e.thresholds.iter().map(|t| format!("{t:>7}")).collect();
    println!("class  {}", header.join(" "));
    for (class, row) in e.classes.iter().zip(&e.ap_per_class_per_threshold) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>7.4}")).collect();
        println!("{class:>5}  {}", cells.join(" "));
    }
    println!("mAP    {:.4}", e.map);
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let preds = io::load_boxes(&a.preds)?;
    let gts = io::load_boxes(&a.gts)?;
    let maps = match (&a.map_pred, &a.map_gt) {
        (Some(p), Some(g)) => Some((binarize(&io::load_bev_grid(p)?, a.seg_threshold), io::load_bev_grid(g)?)),
        _ => None,
    };
    let eval = evaluate(&preds, &gts, &a.thresholds, maps.as_ref().map(|(p, g)| (p, g)))?;
    print_eval(&eval);
    if let Some(out) = &a.out {
        with_output(Some(out), |w| io::write_eval_csv(w, &eval))?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> CliResult {
    let (nx, ny, nz) = a.grid;
    let spec = VoxelGridSpec::centered(nx, ny, nz)?;
    let modes: &[EncoderMode] = match a.mode {
        BenchMode::Naive3d => &[EncoderMode::Naive3d],
        BenchMode::S2c2d => &[EncoderMode::S2c2d],
        BenchMode::Both => &[EncoderMode::Naive3d, EncoderMode::S2c2d],
    };
    println!("mode,grid,layers,channels,width,params,macs,gmacs");
    let mut costs = Vec::new();
    for &m in modes {
        let c = encoder_cost(&spec, a.channels, a.layers, m, a.width)?;
        let name = match m {
            EncoderMode::Naive3d => "naive3d",
            EncoderMode::S2c2d => "s2c2d",
        };
        println!(
            "{name},{nx}x{ny}x{nz},{},{},{},{},{},{:.3}",
            a.layers,
            a.channels,
            a.width,
            c.params,
            c.macs,
            c.macs as f64 / 1e9
        );
        costs.push(c);
    }
    if let [naive, s2c] = costs[..] {
        if s2c.macs >= naive.macs {
            return Err(CliError::Invariant(format!(
                "s2c2d MACs {} not below naive3d MACs {}",
                s2c.macs, naive.macs
            )));
        }
        println!("# s2c2d / naive3d MAC ratio {:.4}", s2c.macs as f64 / naive.macs as f64);
    }
    if let Some((w, h)) = a.image {
        let (lifted, voxel) = lifting_memory(h, w, a.channels, a.depth_bins, &spec);
        println!("# lifting memory per camera {lifted} elements vs voxel grid {voxel} elements");
    }
    Ok(())
}

fn cmd_noise_sweep(a: &SweepArgs) -> CliResult {
    let mut scenes: Vec<SyntheticScene> = a.scene.iter().map(|d| io::load_scene(d)).collect::<Result<_, _>>()?;
    scenes.extend(generate_scenes(a.seed, a.generate, &SceneConfig::default())?);
    if scenes.is_empty() {
        return Err(BevError::InvalidArgument("pass --scene and/or --generate".into()).into());
    }
    let template = NoiseSpec {
        rotation: !a.translation_only,
        translation: !a.rotation_only,
        ..NoiseSpec::default()
    };
    let rows = noise_sweep(&scenes, &a.levels, a.trials, a.noise_seed, &template, &PipelineConfig::default())?;
    with_output(a.out.as_deref(), |w| io::write_sweep_csv(w, &rows))?;
    Ok(())
}

fn cmd_loss_check(a: &LossCheckArgs) -> CliResult {
    let outcome = bevkit::checks::losses(a.inputs, a.seed);
    let report = bevkit::checks::gradient_report(a.inputs, a.seed)?;
    println!("loss,inputs,max_rel_error,status");
    for (name, n, err) in &report.rows {
        let status = if *err < bevkit::checks::FD_TOL { "pass" } else { "FAIL" };
        println!("{name},{n},{err:.3e},{status}");
    }
    println!("# {}", outcome.detail);
    if outcome.passed {
        Ok(())
    } else {
        Err(CliError::Invariant("loss gradient check failed".into()))
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| BevError::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Project(a) => cmd_project(a),
        Command::Centerness(a) => cmd_centerness(a),
        Command::Assign(a) => cmd_assign(a),
        Command::Nms(a) => cmd_nms(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::NoiseSweep(a) => cmd_noise_sweep(a),
        Command::LossCheck(a) => cmd_loss_check(a),
        Command::Selftest(a) => selftest::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bevkit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
