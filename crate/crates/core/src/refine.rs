//! Grid search over the weakly constrained calibration parameters, scored by
//! the KITTI odometry error of trajectories computed with each candidate.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::Matrix3;

use crate::calibrate::{optimize, probe_values, BoardMatch, CalibrationOptions, CalibrationSolution, CalibrationState, SweepParameter};
use crate::cameramodel::Pose;
use crate::error::{Error, Result};
use crate::math;

/// Path lengths of the KITTI odometry benchmark, in meters.
pub const KITTI_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Start-frame stride of the KITTI devkit.
pub const KITTI_STEP: usize = 10;

/// Frame-indexed camera poses, each mapping camera coordinates into the
/// coordinates of the first frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Self {
        Self { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Checks that every rotation block is orthonormal within `tolerance`.
    pub fn validate(&self, tolerance: f64) -> Result<()> {
        for (i, p) in self.poses.iter().enumerate() {
            let m = p.rotation.matrix();
            let dev = (m.transpose() * m - Matrix3::identity()).amax();
            if !(dev <= tolerance) || !(m.determinant() > 0.0) {
                return Err(Error::InvalidInput(format!("pose {i}: rotation is not orthonormal (deviation {dev:e})")));
            }
        }
        Ok(())
    }

    /// Cumulative path length at each frame.
    pub fn distances(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.poses.len());
        let mut acc = 0.0;
        for (i, p) in self.poses.iter().enumerate() {
            if i > 0 {
                acc += (p.translation - self.poses[i - 1].translation).norm();
            }
            out.push(acc);
        }
        out
    }

    /// Applies `g` on the left of every pose.
    pub fn transformed(&self, g: &Pose) -> Trajectory {
        Trajectory::new(self.poses.iter().map(|p| g.compose(p)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryError {
    /// Translational error in percent.
    pub t_rel: f64,
    /// Rotational error in degrees per meter.
    pub r_rel: f64,
}

impl OdometryError {
    /// Rotational error in degrees per 100 m.
    pub fn r_rel_per_100m(&self) -> f64 {
        self.r_rel * 100.0
    }
}

fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    let s = 0.5
        * math::sqrt(
            (m[(2, 1)] - m[(1, 2)]).powi(2) + (m[(0, 2)] - m[(2, 0)]).powi(2) + (m[(1, 0)] - m[(0, 1)]).powi(2),
        );
    let c = 0.5 * (m.trace() - 1.0);
    math::atan2(s, c)
}

fn relative(a: &Pose, b: &Pose) -> (Matrix3<f64>, nalgebra::Vector3<f64>) {
    let ra = a.rotation.matrix();
    let rb = b.rotation.matrix();
    (ra.transpose() * rb, ra.transpose() * (b.translation - a.translation))
}

/// KITTI relative error with the devkit's start-frame stride and lengths.
pub fn kitti_error(estimated: &Trajectory, ground_truth: &Trajectory) -> Result<OdometryError> {
    kitti_error_with(estimated, ground_truth, KITTI_STEP, &KITTI_LENGTHS)
}

/// Averages, over start frames `0, step, 2 step, ...` and every path length,
/// the translation and rotation error of the pose change from the start frame
/// to the first frame at least that far along the ground-truth path, each
/// divided by the length.
pub fn kitti_error_with(
    estimated: &Trajectory,
    ground_truth: &Trajectory,
    step: usize,
    lengths: &[f64],
) -> Result<OdometryError> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ: {} estimated, {} ground truth",
            estimated.len(),
            ground_truth.len()
        )));
    }
    if ground_truth.len() < 2 {
        return Err(Error::InvalidInput("trajectories need at least two poses".into()));
    }
    if step == 0 || lengths.is_empty() || lengths.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidInput("step and lengths must be positive".into()));
    }
    let dist = ground_truth.distances();
    let n = dist.len();
    let (mut t_sum, mut r_sum, mut count) = (0.0, 0.0, 0usize);
    for first in (0..n).step_by(step) {
        for &len in lengths {
            let Some(last) = (first..n).find(|&i| dist[i] >= dist[first] + len) else {
                continue;
            };
            let (rg, tg) = relative(&ground_truth.poses[first], &ground_truth.poses[last]);
            let (re, te) = relative(&estimated.poses[first], &estimated.poses[last]);
            let r_err = re.transpose() * rg;
            let t_err = re.transpose() * (tg - te);
            t_sum += t_err.norm() / len;
            r_sum += rotation_angle(&r_err) / len;
            count += 1;
        }
    }
    if count == 0 {
        let min_length = lengths.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(Error::NoValidSubsequence { min_length });
    }
    Ok(OdometryError {
        t_rel: t_sum / count as f64 * 100.0,
        r_rel: math::to_degrees(r_sum / count as f64),
    })
}

/// One evaluation sequence: an image source understood by the runner and its
/// ground-truth trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub source: String,
    pub ground_truth: Trajectory,
}

/// Produces a trajectory for a sequence under a candidate calibration. Must be
/// deterministic per (sequence, candidate).
pub trait OdometryRunner {
    fn run(&self, sequence: &Sequence, candidate: &CalibrationSolution) -> Result<Trajectory>;
}

impl<F> OdometryRunner for F
where
    F: Fn(&Sequence, &CalibrationSolution) -> Result<Trajectory>,
{
    fn run(&self, sequence: &Sequence, candidate: &CalibrationSolution) -> Result<Trajectory> {
        self(sequence, candidate)
    }
}

/// Values `center + k step` with `|k step| <= half_range`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub center: f64,
    pub half_range: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(center: f64, half_range: f64, step: f64) -> Self {
        Self { center, half_range, step }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        probe_values(self.center, self.half_range, self.step)
    }

    fn offset(&self, v: f64) -> f64 {
        (v - self.center) / self.step
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SearchMode {
    /// Focal length and principal point scored by rotation error, then the
    /// baseline around the winner scored by translation error.
    #[default]
    TwoStage,
    /// All four parameters at once, scored by `t_rel + r_rel` in deg/100 m.
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub fx: Axis,
    pub cu: Axis,
    pub cv: Axis,
    pub baseline: Axis,
    /// In two-stage mode, center the baseline axis on the stage-one winner's
    /// calibrated baseline instead of `baseline.center`.
    pub baseline_from_winner: bool,
    pub mode: SearchMode,
}

impl GridSpec {
    /// 10 px around the given trio in 1 px steps and 20 mm around the
    /// baseline in 1 mm steps.
    pub fn around(fx: f64, cu: f64, cv: f64, baseline: f64) -> Self {
        Self {
            fx: Axis::new(fx, 10.0, 1.0),
            cu: Axis::new(cu, 10.0, 1.0),
            cv: Axis::new(cv, 10.0, 1.0),
            baseline: Axis::new(baseline, 0.02, 0.001),
            baseline_from_winner: true,
            mode: SearchMode::TwoStage,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("fx", self.fx), ("cu", self.cu), ("cv", self.cv), ("baseline", self.baseline)] {
            if !(a.step > 0.0) || !a.step.is_finite() || !(a.half_range >= 0.0) || !a.half_range.is_finite() || !a.center.is_finite() {
                return Err(Error::InvalidInput(format!("grid axis {name} needs a positive step and a finite range")));
            }
        }
        Ok(())
    }

    /// Stage-one points (or every point in joint mode), trio-major order.
    pub fn first_stage_points(&self) -> Result<Vec<GridPoint>> {
        self.validate()?;
        let (fx, cu, cv) = (self.fx.values()?, self.cu.values()?, self.cv.values()?);
        let baselines = match self.mode {
            SearchMode::TwoStage => alloc::vec![None],
            SearchMode::Joint => self.baseline.values()?.into_iter().map(Some).collect(),
        };
        let mut out = Vec::with_capacity(fx.len() * cu.len() * cv.len() * baselines.len());
        for &f in &fx {
            for &u in &cu {
                for &v in &cv {
                    for &b in &baselines {
                        out.push(GridPoint { fx: f, cu: u, cv: v, baseline: b });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Stage-two points: the baseline axis around `center` with the trio of
    /// `winner`.
    pub fn second_stage_points(&self, winner: &GridPoint, center: f64) -> Result<Vec<GridPoint>> {
        let axis = Axis { center, ..self.baseline };
        Ok(axis
            .values()?
            .into_iter()
            .map(|b| GridPoint { baseline: Some(b), ..*winner })
            .collect())
    }
}

/// Pinned parameter values; a `None` baseline stays free.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub fx: f64,
    pub cu: f64,
    pub cv: f64,
    pub baseline: Option<f64>,
}

impl GridPoint {
    pub fn pin(&self, state: &CalibrationState) -> CalibrationState {
        let mut s = SweepParameter::Fx.pin(state, self.fx);
        s = SweepParameter::Cu.pin(&s, self.cu);
        s = SweepParameter::Cv.pin(&s, self.cv);
        if let Some(b) = self.baseline {
            s = SweepParameter::Baseline.pin(&s, b);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PointStatus {
    Ok,
    CalibrationFailed(String),
    RunnerFailed(String),
}

impl PointStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, PointStatus::Ok)
    }
}

/// One evaluated grid point. Errors are means over the sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub stage: u8,
    pub point: GridPoint,
    /// Baseline of the constrained calibration (the pinned value when pinned).
    pub baseline: f64,
    pub error: Option<OdometryError>,
    pub reprojection_rms: Option<f64>,
    pub status: PointStatus,
}

/// Score used to rank rows of a stage.
pub fn row_score(row: &ScoreRow, stage_metric: StageMetric) -> Option<f64> {
    let e = row.error?;
    Some(match stage_metric {
        StageMetric::Rotation => e.r_rel,
        StageMetric::Translation => e.t_rel,
        StageMetric::Combined => e.t_rel + e.r_rel_per_100m(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageMetric {
    Rotation,
    Translation,
    Combined,
}

/// Mean odometry error over the sequences for a calibrated candidate.
pub fn score_candidate<R: OdometryRunner + ?Sized>(
    runner: &R,
    sequences: &[Sequence],
    candidate: &CalibrationSolution,
) -> Result<OdometryError> {
    if sequences.is_empty() {
        return Err(Error::InvalidInput("no sequences to evaluate".into()));
    }
    let (mut t, mut r) = (0.0, 0.0);
    for seq in sequences {
        let traj = runner.run(seq, candidate)?;
        let e = kitti_error(&traj, &seq.ground_truth)?;
        t += e.t_rel;
        r += e.r_rel;
    }
    let n = sequences.len() as f64;
    Ok(OdometryError { t_rel: t / n, r_rel: r / n })
}

/// Constrained calibration at `point` followed by odometry scoring.
/// Calibration and runner failures are recorded in the row, not returned.
pub fn evaluate_point<R: OdometryRunner + ?Sized>(
    stage: u8,
    point: &GridPoint,
    start: &CalibrationState,
    matches: &[BoardMatch],
    options: &CalibrationOptions,
    runner: &R,
    sequences: &[Sequence],
) -> (ScoreRow, Option<CalibrationSolution>) {
    let pinned = point.pin(start);
    let mut row = ScoreRow {
        stage,
        point: *point,
        baseline: pinned.baseline,
        error: None,
        reprojection_rms: None,
        status: PointStatus::Ok,
    };
    let solution = match optimize(pinned, matches, options) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("grid point {point:?}: calibration failed: {e}");
            row.status = PointStatus::CalibrationFailed(e.to_string());
            return (row, None);
        }
    };
    row.baseline = solution.state.baseline;
    row.reprojection_rms = Some(solution.rms);
    match score_candidate(runner, sequences, &solution) {
        Ok(e) => row.error = Some(e),
        Err(e) => {
            log::warn!("grid point {point:?}: odometry failed: {e}");
            row.status = PointStatus::RunnerFailed(e.to_string());
        }
    }
    (row, Some(solution))
}

/// Index of the best-scoring successful row; exact ties go to the row closest
/// to the grid center (in steps), then to the lexicographically smallest
/// point, so the choice does not depend on row order.
pub fn select_best(rows: &[ScoreRow], metric: StageMetric, spec: &GridSpec) -> Option<usize> {
    let center_distance = |p: &GridPoint| {
        let mut d = spec.fx.offset(p.fx).powi(2) + spec.cu.offset(p.cu).powi(2) + spec.cv.offset(p.cv).powi(2);
        if let (Some(b), SearchMode::Joint) = (p.baseline, spec.mode) {
            d += spec.baseline.offset(b).powi(2);
        }
        d
    };
    let key = |i: usize| {
        let p = &rows[i].point;
        (center_distance(p), p.fx, p.cu, p.cv, p.baseline.unwrap_or(f64::NAN))
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in rows.iter().enumerate() {
        let Some(s) = row_score(row, metric).filter(|s| s.is_finite()) else {
            continue;
        };
        best = match best {
            None => Some((i, s)),
            Some((j, bs)) => {
                let better = s < bs || (s == bs && tie_less(key(i), key(j)));
                if better {
                    Some((i, s))
                } else {
                    Some((j, bs))
                }
            }
        };
    }
    best.map(|(i, _)| i)
}

fn tie_less(a: (f64, f64, f64, f64, f64), b: (f64, f64, f64, f64, f64)) -> bool {
    let a = [a.0, a.1, a.2, a.3, a.4];
    let b = [b.0, b.1, b.2, b.3, b.4];
    for (x, y) in a.iter().zip(&b) {
        match x.total_cmp(y) {
            core::cmp::Ordering::Less => return true,
            core::cmp::Ordering::Greater => return false,
            core::cmp::Ordering::Equal => {}
        }
    }
    false
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchResult {
    pub best: CalibrationSolution,
    pub best_point: GridPoint,
    pub best_error: OdometryError,
    /// Every evaluated point, stage one first.
    pub rows: Vec<ScoreRow>,
}

/// Evaluates `points` in order.
pub fn evaluate_points<R: OdometryRunner + ?Sized>(
    stage: u8,
    points: &[GridPoint],
    start: &CalibrationState,
    matches: &[BoardMatch],
    options: &CalibrationOptions,
    runner: &R,
    sequences: &[Sequence],
) -> Vec<(ScoreRow, Option<CalibrationSolution>)> {
    points
        .iter()
        .map(|p| evaluate_point(stage, p, start, matches, options, runner, sequences))
        .collect()
}

fn pick(
    evaluated: Vec<(ScoreRow, Option<CalibrationSolution>)>,
    metric: StageMetric,
    spec: &GridSpec,
    rows: &mut Vec<ScoreRow>,
) -> Result<(GridPoint, CalibrationSolution, OdometryError)> {
    let stage_rows: Vec<ScoreRow> = evaluated.iter().map(|(r, _)| r.clone()).collect();
    let idx = select_best(&stage_rows, metric, spec);
    rows.extend(stage_rows.iter().cloned());
    let idx = idx.ok_or_else(|| Error::SearchFailure("every grid point failed".into()))?;
    let (row, sol) = evaluated.into_iter().nth(idx).expect("selected row exists");
    let sol = sol.expect("successful rows carry a solution");
    Ok((row.point, sol, row.error.expect("successful rows carry an error")))
}

/// Runs the search of `spec` from `start`, which is normally the
/// unconstrained calibration. Every constrained calibration starts from
/// `start`, so results do not depend on evaluation order.
pub fn grid_search<R: OdometryRunner + ?Sized>(
    spec: &GridSpec,
    start: &CalibrationState,
    matches: &[BoardMatch],
    options: &CalibrationOptions,
    runner: &R,
    sequences: &[Sequence],
) -> Result<GridSearchResult> {
    grid_search_with(spec, sequences, |stage, points| {
        evaluate_points(stage, points, start, matches, options, runner, sequences)
    })
}

/// [`grid_search`] with a caller-supplied evaluator for each stage's points,
/// e.g. a parallel one. The evaluator must return one entry per point, in
/// point order, as [`evaluate_points`] does.
pub fn grid_search_with<E>(spec: &GridSpec, sequences: &[Sequence], mut evaluate: E) -> Result<GridSearchResult>
where
    E: FnMut(u8, &[GridPoint]) -> Vec<(ScoreRow, Option<CalibrationSolution>)>,
{
    spec.validate()?;
    if sequences.is_empty() {
        return Err(Error::InvalidInput("no sequences to evaluate".into()));
    }
    let mut rows = Vec::new();
    let first = spec.first_stage_points()?;
    let evaluated = evaluate(1, &first);
    if evaluated.len() != first.len() {
        return Err(Error::InvalidInput("evaluator returned the wrong number of rows".into()));
    }
    let (point, solution, error) = match spec.mode {
        SearchMode::Joint => pick(evaluated, StageMetric::Combined, spec, &mut rows)?,
        SearchMode::TwoStage => {
            let (winner, sol, _) = pick(evaluated, StageMetric::Rotation, spec, &mut rows)?;
            let center = if spec.baseline_from_winner { sol.state.baseline } else { spec.baseline.center };
            let second = spec.second_stage_points(&winner, center)?;
            let evaluated = evaluate(2, &second);
            if evaluated.len() != second.len() {
                return Err(Error::InvalidInput("evaluator returned the wrong number of rows".into()));
            }
            let stage_spec = GridSpec {
                baseline: Axis { center, ..spec.baseline },
                mode: SearchMode::Joint,
                ..*spec
            };
            pick(evaluated, StageMetric::Translation, &stage_spec, &mut rows)?
        }
    };
    Ok(GridSearchResult {
        best: solution,
        best_point: point,
        best_error: error,
        rows,
    })
}
