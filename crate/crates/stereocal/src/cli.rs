//! Subcommands of the `stereocal` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use rayon::prelude::*;
use stereocal_core::boardfinder::{detect_boards, Checkerboard, DetectionConfig, Refiner};
use stereocal_core::calibrate::{
    init_extrinsics_from_homographies, init_intrinsics, match_boards, optimize, refit_excluding, reprojection_report,
    sensitivity_sweep, BoardMatch, CalibrationOptions, CalibrationSolution, JacobianMode, SweepParameter,
};
use stereocal_core::cameramodel::{convert_feature, rectification_map, remap, stereo_rectify, CameraCalibration};
use stereocal_core::imagegrad::SOBEL_GAIN;
use stereocal_core::math;
use stereocal_core::refine::{evaluate_point, grid_search_with, kitti_error, Axis, GridSpec, SearchMode};
use stereocal_core::synthoracle::{diverse_layout, kitti_like_layout, observed_corners, render, SceneSpec};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::kittiio::{
    edge_overlay, load_image, read_boards, read_features, read_poses, read_text, save_overlay, save_png, segment_listing,
    write_boards, write_features, write_score_table, write_sensitivity_csv, write_solution, write_text, KittiCalibFile,
};
use crate::runner::{list_images, read_sequences, ExternalRunner};

#[derive(Parser, Debug)]
#[command(name = "stereocal", version, about = "One-shot multi-board stereo calibration")]
pub struct Cli {
    /// Plain `key = value` file with defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Detect checkerboards and write board dumps.
    Detect(DetectArgs),
    /// Calibrate the stereo pair from two board dumps.
    Calibrate(CalibrateArgs),
    /// Re-optimize with one parameter pinned at a range of values.
    Sensitivity(SensitivityArgs),
    /// Grid search over fx, cu, cv and baseline scored by odometry error.
    Refine(RefineArgs),
    /// Rectify a directory of images.
    Rectify(RectifyArgs),
    /// Move rectified feature coordinates from one calibration to another.
    ConvertFeatures(ConvertArgs),
    /// KITTI odometry error of a trajectory.
    Eval(EvalArgs),
    /// Render a synthetic scene with ground truth.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RefinerArg {
    Lines,
    Gradient,
}

#[derive(Args, Debug, Default)]
pub struct DetectionArgs {
    /// Gradient threshold in [0, 1] intensity units (default 0.04).
    #[arg(long)]
    pub abs_threshold: Option<f64>,
    #[arg(long)]
    pub min_segment_points: Option<usize>,
    /// Endpoint proximity radius in pixels.
    #[arg(long)]
    pub proximity: Option<f64>,
    /// Maximum length ratio of linked segments.
    #[arg(long)]
    pub length_ratio: Option<f64>,
    #[arg(long, value_enum)]
    pub refiner: Option<RefinerArg>,
    /// Window of the gradient refiner.
    #[arg(long)]
    pub window: Option<usize>,
    /// RANSAC inlier distance in pixels.
    #[arg(long)]
    pub ransac_threshold: Option<f64>,
    /// RANSAC gradient angle tolerance in degrees.
    #[arg(long)]
    pub ransac_angle: Option<f64>,
    #[arg(long)]
    pub ransac_iterations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
    /// Dump file for one image, directory of `<stem>.txt` dumps for several.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for edge overlays and segment listings.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    #[command(flatten)]
    pub detection: DetectionArgs,
}

#[derive(Args, Debug)]
pub struct BoardArgs {
    /// Left board dump.
    #[arg(long)]
    pub left: PathBuf,
    /// Right board dump.
    #[arg(long)]
    pub right: PathBuf,
    /// Checkerboard square size in meters.
    #[arg(long)]
    pub square_size: Option<f64>,
    /// Initial focal length in pixels.
    #[arg(long)]
    pub seed_focal: Option<f64>,
    /// Image size as WIDTHxHEIGHT when the dumps do not record it.
    #[arg(long)]
    pub image_size: Option<String>,
    /// Comma-separated board indices refit without.
    #[arg(long)]
    pub exclude: Option<String>,
    /// Use finite-difference Jacobians.
    #[arg(long)]
    pub numeric_jacobian: bool,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub boards: BoardArgs,
    /// Parameters pinned during optimization, e.g. `fx=980,baseline=0.54`.
    #[arg(long)]
    pub fix: Option<String>,
    /// Solution file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-board reprojection table.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// KITTI `calib_cam_to_cam.txt` with the rectification.
    #[arg(long)]
    pub kitti: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ParamArg {
    Fx,
    Cu,
    Cv,
    Baseline,
}

impl From<ParamArg> for SweepParameter {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::Fx => SweepParameter::Fx,
            ParamArg::Cu => SweepParameter::Cu,
            ParamArg::Cv => SweepParameter::Cv,
            ParamArg::Baseline => SweepParameter::Baseline,
        }
    }
}

#[derive(Args, Debug)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub boards: BoardArgs,
    #[arg(long, value_enum)]
    pub param: ParamArg,
    /// Half range (default 10 px, 0.02 m for the baseline).
    #[arg(long)]
    pub range: Option<f64>,
    /// Probe spacing (default 1 px, 0.001 m for the baseline).
    #[arg(long)]
    pub step: Option<f64>,
    /// Sweep center (default: the unconstrained optimum).
    #[arg(long)]
    pub center: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    TwoStage,
    Joint,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[command(flatten)]
    pub boards: BoardArgs,
    /// Axes as `name=center[:half_range[:step]]`, comma separated; missing
    /// axes and centers come from the unconstrained calibration.
    #[arg(long)]
    pub grid: Option<String>,
    /// Shell command with {images}, {calib} and {output} placeholders.
    #[arg(long)]
    pub runner: Option<String>,
    /// Lines of `name source_dir ground_truth_poses`.
    #[arg(long)]
    pub sequences: PathBuf,
    /// Score table CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Solution file of the winner.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Grid points evaluated concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Directory for per-point runner workspaces.
    #[arg(long)]
    pub workspace: Option<PathBuf>,
    /// Keep rectified images in the workspace.
    #[arg(long)]
    pub keep_images: bool,
}

#[derive(Args, Debug)]
pub struct RectifyArgs {
    /// KITTI calibration file.
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Camera index of the images.
    #[arg(long, default_value_t = 0)]
    pub camera: usize,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Calibration the features were rectified with.
    #[arg(long)]
    pub default: PathBuf,
    /// Calibration to convert to.
    #[arg(long)]
    pub custom: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub camera: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Kitti,
    Diverse,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = LayoutArg::Kitti)]
    pub layout: LayoutArg,
    #[arg(long)]
    pub out: PathBuf,
    /// White-square growth in pixels.
    #[arg(long)]
    pub dilation: Option<f64>,
    /// Corner noise in pixels for the observed dumps.
    #[arg(long)]
    pub corner_noise: Option<f64>,
    /// Additive image noise standard deviation.
    #[arg(long)]
    pub intensity_noise: Option<f64>,
    /// Bow of the bent board in meters.
    #[arg(long)]
    pub bend: Option<f64>,
    /// Skip rendering and write only the corner dumps.
    #[arg(long)]
    pub no_images: bool,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = cfg.resolve(cli.seed, "seed", 0u64)?;
    match cli.command {
        Command::Detect(a) => detect(&a, &cfg, seed),
        Command::Calibrate(a) => calibrate_cmd(&a, &cfg),
        Command::Sensitivity(a) => sensitivity(&a, &cfg),
        Command::Refine(a) => refine(&a, &cfg),
        Command::Rectify(a) => rectify(&a),
        Command::ConvertFeatures(a) => convert_features(&a),
        Command::Eval(a) => eval(&a),
        Command::Synth(a) => synth(&a, &cfg, seed),
    }
}

fn parse_refiner(s: &str) -> Option<RefinerArg> {
    RefinerArg::from_str(s, true).ok()
}

/// Detection settings from flags, config and defaults.
pub fn detection_config(a: &DetectionArgs, cfg: &Config, seed: u64) -> Result<DetectionConfig> {
    let d = DetectionConfig::default();
    let threshold = cfg.resolve(a.abs_threshold, "abs-threshold", d.abs_threshold / SOBEL_GAIN)?;
    let refiner = match a.refiner {
        Some(r) => r,
        None => match cfg.raw("refiner") {
            Some(s) => parse_refiner(s).ok_or_else(|| Error::Usage(format!("unknown refiner `{s}`")))?,
            None => RefinerArg::Lines,
        },
    };
    let window = cfg.resolve(a.window, "window", stereocal_core::boardfinder::DEFAULT_GRADIENT_WINDOW)?;
    let mut out = DetectionConfig {
        abs_threshold: threshold * SOBEL_GAIN,
        min_segment_points: cfg.resolve(a.min_segment_points, "min-segment-points", d.min_segment_points)?,
        proximity: cfg.resolve(a.proximity, "proximity", d.proximity)?,
        length_ratio: cfg.resolve(a.length_ratio, "length-ratio", d.length_ratio)?,
        refiner: match refiner {
            RefinerArg::Lines => Refiner::LineIntersection,
            RefinerArg::Gradient => Refiner::Gradient { window },
        },
        seed,
        ..d
    };
    let r = &mut out.intersection.ransac;
    r.dist_threshold = cfg.resolve(a.ransac_threshold, "ransac-threshold", r.dist_threshold)?;
    r.angle_tolerance = math::to_radians(cfg.resolve(a.ransac_angle, "ransac-angle", math::to_degrees(r.angle_tolerance))?);
    r.iterations = cfg.resolve(a.ransac_iterations, "ransac-iterations", r.iterations)?;
    if !(out.abs_threshold >= 0.0) || !(out.proximity > 0.0) || !(out.length_ratio >= 1.0) {
        return Err(Error::Usage("detection thresholds out of range".into()));
    }
    Ok(out)
}

fn image_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn detect(a: &DetectArgs, cfg: &Config, seed: u64) -> Result<()> {
    let config = detection_config(&a.detection, cfg, seed)?;
    let mut results = Vec::new();
    for path in &a.images {
        let img = load_image(path)?;
        let d = detect_boards(&img, &config)?;
        log::info!("{}: {} boards, {} rejected", path.display(), d.boards.len(), d.rejected);
        results.push((path, img, d));
    }
    let empty: Vec<String> = results
        .iter()
        .filter(|(_, _, d)| d.boards.is_empty())
        .map(|(p, _, _)| p.display().to_string())
        .collect();
    if !empty.is_empty() {
        return Err(Error::Data(format!("no boards found in {}", empty.join(", "))));
    }
    let single = results.len() == 1;
    for (path, img, d) in &results {
        let dump = write_boards(&d.boards, Some((img.width(), img.height())));
        let target = if single { a.out.clone() } else { a.out.join(format!("{}.txt", image_stem(path))) };
        write_text(&target, &dump)?;
        if let Some(dir) = &a.overlay {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let stem = image_stem(path);
            save_overlay(&dir.join(format!("{stem}_edges.png")), &edge_overlay(img, &d.graph.segments, &d.boards))?;
            write_text(&dir.join(format!("{stem}_segments.txt")), &segment_listing(&d.graph.segments))?;
        }
        println!("{}: {} boards", path.display(), d.boards.len());
    }
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Usage(format!("image size `{s}` is not WIDTHxHEIGHT")))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::Usage(format!("image size `{s}` is not WIDTHxHEIGHT")));
    Ok((n(w)?, n(h)?))
}

fn parse_indices(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| Error::Usage(format!("bad board index `{t}`"))))
        .collect()
}

/// Parameter pins of `--fix`, e.g. `fx=980,baseline=0.54`.
pub fn parse_fix(s: &str) -> Result<Vec<(SweepParameter, f64)>> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--fix entry `{item}` is not name=value")))?;
        let p = match name.trim() {
            "fx" => SweepParameter::Fx,
            "cu" => SweepParameter::Cu,
            "cv" => SweepParameter::Cv,
            "baseline" => SweepParameter::Baseline,
            other => return Err(Error::Usage(format!("cannot fix `{other}`; use fx, cu, cv or baseline"))),
        };
        let v: f64 = value.trim().parse().map_err(|_| Error::Usage(format!("--fix value `{value}` is not a number")))?;
        if !v.is_finite() {
            return Err(Error::Usage(format!("--fix value `{value}` is not finite")));
        }
        out.push((p, v));
    }
    Ok(out)
}

/// Matched boards and calibration inputs shared by several commands.
pub struct Problem {
    pub matches: Vec<BoardMatch>,
    pub width: usize,
    pub height: usize,
    pub seed_focal: f64,
    pub exclude: Vec<usize>,
    pub options: CalibrationOptions,
}

fn read_dump(path: &Path) -> Result<(Option<(usize, usize)>, Vec<Checkerboard>)> {
    let d = read_boards(&read_text(path)?).map_err(|e| e.in_file(path))?;
    Ok((d.image_size, d.boards))
}

pub fn load_problem(a: &BoardArgs, cfg: &Config) -> Result<Problem> {
    let square: f64 = cfg.require(a.square_size, "square-size")?;
    let seed_focal: f64 = cfg.require(a.seed_focal, "seed-focal")?;
    if !(square > 0.0) || !(seed_focal > 0.0) {
        return Err(Error::Usage("--square-size and --seed-focal must be positive".into()));
    }
    let size_flag = a.image_size.clone().or_else(|| cfg.raw("image-size").map(str::to_string));
    let exclude = match a.exclude.clone().or_else(|| cfg.raw("exclude").map(str::to_string)) {
        Some(s) => parse_indices(&s)?,
        None => Vec::new(),
    };
    let (lsize, left) = read_dump(&a.left)?;
    let (rsize, right) = read_dump(&a.right)?;
    let (width, height) = match size_flag {
        Some(s) => parse_size(&s)?,
        None => match (lsize, rsize) {
            (Some(l), Some(r)) if l != r => return Err(Error::Data("left and right dumps record different image sizes".into())),
            (Some(l), _) | (None, Some(l)) => l,
            (None, None) => return Err(Error::Usage("missing --image-size".into())),
        },
    };
    let matches = match_boards(&left, &right, square)?;
    if let Some(&i) = exclude.iter().find(|&&i| i >= matches.len()) {
        return Err(Error::Usage(format!("--exclude {i}: only {} boards", matches.len())));
    }
    let options = CalibrationOptions {
        jacobian: if a.numeric_jacobian { JacobianMode::FiniteDifference } else { JacobianMode::Analytic },
        ..Default::default()
    };
    Ok(Problem { matches, width, height, seed_focal, exclude, options })
}

impl Problem {
    /// Calibration with `pins` held fixed, refit without excluded boards.
    pub fn solve(&self, pins: &[(SweepParameter, f64)]) -> Result<CalibrationSolution> {
        let guess = init_intrinsics(self.width, self.height, self.seed_focal)?;
        let mut state = init_extrinsics_from_homographies(&self.matches, &guess, &guess)?;
        for (p, v) in pins {
            state = p.pin(&state, *v);
        }
        let sol = optimize(state, &self.matches, &self.options)?;
        if self.exclude.is_empty() {
            Ok(sol)
        } else {
            Ok(refit_excluding(&sol, &self.matches, &self.exclude, &self.options)?)
        }
    }
}

/// Per-board reprojection table.
pub fn report_text(sol: &CalibrationSolution, matches: &[BoardMatch]) -> String {
    let rep = reprojection_report(sol, matches);
    let mut out = String::from("# board rms_left rms_right rms excluded\n");
    for r in &rep.rows {
        writeln!(out, "{} {:.6} {:.6} {:.6} {}", r.board, r.rms_left, r.rms_right, r.rms, if r.excluded { "yes" } else { "no" })
            .unwrap();
    }
    writeln!(out, "rms {:.6}", rep.rms).unwrap();
    out
}

fn print_summary(sol: &CalibrationSolution) {
    let s = &sol.state;
    println!(
        "fx {:.4} cu {:.4} cv {:.4} baseline {:.6} m pitch {:.4} deg rms {:.6} px",
        s.left.fx,
        s.left.cu,
        s.left.cv,
        s.baseline,
        math::to_degrees(s.rig().pitch()),
        sol.rms
    );
}

fn calibrate_cmd(a: &CalibrateArgs, cfg: &Config) -> Result<()> {
    let problem = load_problem(&a.boards, cfg)?;
    let pins = match a.fix.clone().or_else(|| cfg.raw("fix").map(str::to_string)) {
        Some(s) => parse_fix(&s)?,
        None => Vec::new(),
    };
    let sol = problem.solve(&pins)?;
    let kitti = match &a.kitti {
        Some(_) => Some(KittiCalibFile::from_rig(
            &sol.state.rig(),
            &stereo_rectify(&sol.state.rig(), problem.width, problem.height)?,
            problem.width,
            problem.height,
        )),
        None => None,
    };
    write_text(&a.out, &write_solution(&sol))?;
    if let Some(p) = &a.report {
        write_text(p, &report_text(&sol, &problem.matches))?;
    }
    if let (Some(p), Some(k)) = (&a.kitti, kitti) {
        write_text(p, &k.write())?;
    }
    print_summary(&sol);
    Ok(())
}

fn sweep_defaults(p: SweepParameter) -> (f64, f64) {
    match p {
        SweepParameter::Baseline => (0.02, 0.001),
        _ => (10.0, 1.0),
    }
}

fn sensitivity(a: &SensitivityArgs, cfg: &Config) -> Result<()> {
    let problem = load_problem(&a.boards, cfg)?;
    let param: SweepParameter = a.param.into();
    let (dr, ds) = sweep_defaults(param);
    let range = cfg.resolve(a.range, "range", dr)?;
    let step = cfg.resolve(a.step, "step", ds)?;
    if !(step > 0.0) || !(range >= 0.0) {
        return Err(Error::Usage("--step must be positive and --range non-negative".into()));
    }
    let sol = problem.solve(&[])?;
    let center = a.center.unwrap_or_else(|| param.value(&sol.state));
    let curve = sensitivity_sweep(&sol.state, &problem.matches, param, center, range, step, &problem.options)?;
    let mut buf = Vec::new();
    write_sensitivity_csv(&curve, &mut buf)?;
    write_text(&a.out, &String::from_utf8(buf).expect("csv is utf-8"))?;
    let worst = curve.rms.iter().flatten().fold(0.0f64, |m, r| m.max(r - sol.rms));
    println!("{} probes, largest rms increase {:.6} px", curve.probes.len(), worst);
    Ok(())
}

fn parse_axis(text: &str, default: Axis) -> Result<Axis> {
    let mut parts = text.split(':');
    let mut axis = default;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad grid value `{s}`")));
    if let Some(c) = parts.next().filter(|s| !s.trim().is_empty()) {
        axis.center = num(c)?;
    }
    if let Some(r) = parts.next() {
        axis.half_range = num(r)?;
    }
    if let Some(s) = parts.next() {
        axis.step = num(s)?;
    }
    if parts.next().is_some() {
        return Err(Error::Usage(format!("grid axis `{text}` has too many fields")));
    }
    Ok(axis)
}

/// Grid from `name=center[:half_range[:step]]` items over defaults
/// around `base`. An explicit baseline center replaces the stage-one
/// winner's baseline as the stage-two center.
pub fn parse_grid(text: Option<&str>, base: GridSpec) -> Result<GridSpec> {
    let mut spec = base;
    for item in text.unwrap_or("").split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (name, value) = item.split_once('=').unwrap_or((item, ""));
        let axis = match name.trim() {
            "fx" => &mut spec.fx,
            "cu" => &mut spec.cu,
            "cv" => &mut spec.cv,
            "baseline" => {
                if !value.split(':').next().unwrap_or("").trim().is_empty() {
                    spec.baseline_from_winner = false;
                }
                &mut spec.baseline
            }
            other => return Err(Error::Usage(format!("unknown grid axis `{other}`"))),
        };
        *axis = parse_axis(value, *axis)?;
    }
    spec.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(spec)
}

fn refine(a: &RefineArgs, cfg: &Config) -> Result<()> {
    let problem = load_problem(&a.boards, cfg)?;
    let template: String = cfg.require(a.runner.clone(), "runner")?;
    let jobs = cfg.resolve(a.jobs, "jobs", 1usize)?.max(1);
    let workspace = cfg.resolve(a.workspace.clone(), "workspace", PathBuf::from("refine-workspace"))?;
    let mode = match a.mode {
        Some(ModeArg::Joint) => SearchMode::Joint,
        Some(ModeArg::TwoStage) => SearchMode::TwoStage,
        None => match cfg.raw("mode") {
            Some("joint") => SearchMode::Joint,
            Some("two-stage") | None => SearchMode::TwoStage,
            Some(other) => return Err(Error::Usage(format!("unknown mode `{other}`"))),
        },
    };
    let mut runner = ExternalRunner::new(template, workspace)?;
    runner.keep_images = a.keep_images;
    let base_dir = a.sequences.parent().unwrap_or(Path::new("."));
    let sequences = read_sequences(&read_text(&a.sequences)?, base_dir).map_err(|e| e.in_file(&a.sequences))?;

    let start = problem.solve(&[])?;
    let s = &start.state;
    let base = GridSpec { mode, ..GridSpec::around(s.left.fx, s.left.cu, s.left.cv, s.baseline) };
    let grid_text = a.grid.clone().or_else(|| cfg.raw("grid").map(str::to_string));
    let spec = parse_grid(grid_text.as_deref(), base)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let matches = &problem.matches;
    let options = &problem.options;
    let result = pool.install(|| {
        grid_search_with(&spec, &sequences, |stage, points| {
            points
                .par_iter()
                .map(|p| evaluate_point(stage, p, &start.state, matches, options, &runner, &sequences))
                .collect()
        })
    });
    let result = result?;
    let mut buf = Vec::new();
    write_score_table(&result.rows, &mut buf)?;
    write_text(&a.out, &String::from_utf8(buf).expect("csv is utf-8"))?;
    if let Some(p) = &a.solution {
        write_text(p, &write_solution(&result.best))?;
    }
    let p = result.best_point;
    println!(
        "best fx {} cu {} cv {} baseline {:.6}: t_rel {:.4} % r_rel {:.6} deg/m",
        p.fx, p.cu, p.cv, result.best.state.baseline, result.best_error.t_rel, result.best_error.r_rel
    );
    Ok(())
}

/// Rectification of camera `cam`: the file's `R_rect`/`P_rect` when present,
/// otherwise computed from cameras 00 and 01.
pub fn camera_rectification(file: &KittiCalibFile, cam: usize, size: Option<(usize, usize)>) -> Result<CameraCalibration> {
    if let Ok(c) = file.rectified(cam) {
        return Ok(c);
    }
    let (w, h) = file
        .image_size(0)
        .or(size)
        .ok_or_else(|| Error::Data("calibration has no rectification and no image size".into()))?;
    let rect = stereo_rectify(&file.rig(0, 1)?, w, h)?;
    match cam {
        0 => Ok(rect.left),
        1 => Ok(rect.right),
        _ => Err(Error::Data(format!("camera {cam} has no rectification"))),
    }
}

fn read_calib(path: &Path) -> Result<KittiCalibFile> {
    KittiCalibFile::read(&read_text(path)?).map_err(|e| e.in_file(path))
}

fn rectify(a: &RectifyArgs) -> Result<()> {
    let file = read_calib(&a.calib)?;
    let images = list_images(&a.input)?;
    if images.is_empty() {
        return Err(Error::Data(format!("{}: no PNG or PGM images", a.input.display())));
    }
    let mut loaded = Vec::new();
    for p in &images {
        loaded.push(load_image(p)?);
    }
    let (w, h) = (loaded[0].width(), loaded[0].height());
    if let Some(p) = loaded.iter().zip(&images).find(|(i, _)| (i.width(), i.height()) != (w, h)) {
        return Err(Error::Data(format!("{}: image size differs from the first image", p.1.display())));
    }
    let calib = camera_rectification(&file, a.camera, Some((w, h)))?;
    let map = rectification_map(&calib, w, h);
    for (p, img) in images.iter().zip(&loaded) {
        save_png(&a.out.join(format!("{}.png", image_stem(p))), &remap(img, &map))?;
    }
    println!("rectified {} images", images.len());
    Ok(())
}

fn convert_features(a: &ConvertArgs) -> Result<()> {
    let default = camera_rectification(&read_calib(&a.default)?, a.camera, None)?;
    let custom = camera_rectification(&read_calib(&a.custom)?, a.camera, None)?;
    let pts = read_features(&read_text(&a.input)?).map_err(|e| e.in_file(&a.input))?;
    let out = pts
        .iter()
        .map(|p| convert_feature(*p, &default, &custom))
        .collect::<stereocal_core::Result<Vec<_>>>()?;
    write_text(&a.out, &write_features(&out))?;
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let est = read_poses(&read_text(&a.est)?).map_err(|e| e.in_file(&a.est))?;
    let gt = read_poses(&read_text(&a.gt)?).map_err(|e| e.in_file(&a.gt))?;
    let e = kitti_error(&est, &gt)?;
    println!("t_rel {:.6} %", e.t_rel);
    println!("r_rel {:.8} deg/m", e.r_rel);
    println!("r_rel {:.6} deg/100m", e.r_rel_per_100m());
    Ok(())
}

fn synth(a: &SynthArgs, cfg: &Config, seed: u64) -> Result<()> {
    let mut spec: SceneSpec = match a.layout {
        LayoutArg::Kitti => kitti_like_layout(),
        LayoutArg::Diverse => diverse_layout(),
    };
    spec.seed = seed;
    spec.dilation_px = cfg.resolve(a.dilation, "dilation", spec.dilation_px)?;
    spec.corner_noise = cfg.resolve(a.corner_noise, "corner-noise", spec.corner_noise)?;
    spec.intensity_noise = cfg.resolve(a.intensity_noise, "intensity-noise", spec.intensity_noise)?;
    let bend = cfg.resolve(a.bend, "bend", 0.0)?;
    if bend != 0.0 {
        spec = spec.with_bend(bend);
    }
    spec.validate()?;
    let size = Some((spec.width, spec.height));
    let (obs_l, obs_r) = observed_corners(&spec)?;
    let rendering = if a.no_images { None } else { Some(render(&spec)?) };
    let rect = stereo_rectify(&spec.rig, spec.width, spec.height)?;
    let calib = KittiCalibFile::from_rig(&spec.rig, &rect, spec.width, spec.height);

    let out = &a.out;
    if let Some(r) = &rendering {
        save_png(&out.join("left.png"), &r.left)?;
        save_png(&out.join("right.png"), &r.right)?;
        write_text(&out.join("truth_left.txt"), &write_boards(&r.truth_left, size))?;
        write_text(&out.join("truth_right.txt"), &write_boards(&r.truth_right, size))?;
    }
    write_text(&out.join("observed_left.txt"), &write_boards(&obs_l, size))?;
    write_text(&out.join("observed_right.txt"), &write_boards(&obs_r, size))?;
    write_text(&out.join("calib_cam_to_cam.txt"), &calib.write())?;
    let t: Vector3<f64> = spec.rig.right_from_left.translation;
    println!("{} boards, baseline {:.6} m", spec.boards.len(), t.norm());
    Ok(())
}
