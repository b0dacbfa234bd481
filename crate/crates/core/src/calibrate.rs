//! Joint stereo calibration from one image per camera.
//!
//! Boards are matched across the pair, every board pose and the relative
//! camera pose are initialized from plane homographies, and all parameters
//! are then refined together by minimizing the reprojection error of every
//! corner in both images. The left camera is the reference frame.
//!
//! Reported RMS values are taken over residual components, so a corner with
//! residual `(e, e)` contributes an RMS of `e`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, Point2, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::boardfinder::{snake_position, Checkerboard};
use crate::cameramodel::{project, project_with_jacobians, undistort, Intrinsics, Pose, StereoRig, INTRINSIC_COUNT};
use crate::error::{Error, Result};
use crate::lm::{self, LeastSquares, LmConfig, LmReport};
use crate::math;

/// Physical layout of a board.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoardGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Square side in meters.
    pub square: f64,
}

impl BoardGeometry {
    /// Board-frame point of the corner at snake position `index`.
    pub fn model_point(&self, index: usize) -> Vector3<f64> {
        let (r, c) = snake_position(index, self.cols);
        Vector3::new(c as f64 * self.square, r as f64 * self.square, 0.0)
    }

    pub fn corner_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// The same board seen in both images; corners correspond by snake order.
#[derive(Clone, Debug, PartialEq)]
pub struct BoardMatch {
    pub left: Checkerboard,
    pub right: Checkerboard,
    pub geometry: BoardGeometry,
}

/// Pairs boards: both lists are sorted by centroid column, then each left
/// board takes the first free right board with the same rows and columns.
pub fn match_boards(left: &[Checkerboard], right: &[Checkerboard], square: f64) -> Result<Vec<BoardMatch>> {
    if left.len() != right.len() {
        return Err(Error::BoardCountMismatch {
            left: left.len(),
            right: right.len(),
        });
    }
    if !(square > 0.0) {
        return Err(Error::InvalidInput("square size must be positive".into()));
    }
    let sorted = |boards: &[Checkerboard]| {
        let mut idx: Vec<usize> = (0..boards.len()).collect();
        idx.sort_by(|&a, &b| boards[a].centroid().x.total_cmp(&boards[b].centroid().x));
        idx
    };
    let (lo, ro) = (sorted(left), sorted(right));
    let mut used = vec![false; right.len()];
    let mut out = Vec::with_capacity(left.len());
    for &li in &lo {
        let l = &left[li];
        let ri = ro
            .iter()
            .copied()
            .find(|&ri| !used[ri] && right[ri].rows == l.rows && right[ri].cols == l.cols)
            .ok_or(Error::NoMatchingBoard {
                board: li,
                rows: l.rows,
                cols: l.cols,
            })?;
        used[ri] = true;
        out.push(BoardMatch {
            left: l.clone(),
            right: right[ri].clone(),
            geometry: BoardGeometry {
                rows: l.rows,
                cols: l.cols,
                square,
            },
        });
    }
    Ok(out)
}

/// Initial intrinsics: the given focal length, principal point at the image
/// center and no distortion.
pub fn init_intrinsics(width: usize, height: usize, seed_focal: f64) -> Result<Intrinsics> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("image size must be positive".into()));
    }
    if !(seed_focal > 0.0) {
        return Err(Error::InvalidInput(format!("seed focal length must be positive, got {seed_focal}")));
    }
    Ok(Intrinsics::pinhole(seed_focal, seed_focal, width as f64 * 0.5, height as f64 * 0.5))
}

fn hartley(points: &[Point2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p.coords) / n;
    let d = points.iter().map(|p| (p.coords - c).norm()).sum::<f64>() / n;
    let s = if d > 0.0 { math::sqrt(2.0) / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn apply(h: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// Normalized direct linear transform for the homography taking `src` to
/// `dst`, scaled to unit Frobenius norm.
pub fn estimate_homography(src: &[Point2<f64>], dst: &[Point2<f64>]) -> Result<Matrix3<f64>> {
    if src.len() != dst.len() || src.len() < 4 {
        return Err(Error::InvalidInput("homography needs at least 4 correspondences".into()));
    }
    let (ts, td) = (hartley(src), hartley(dst));
    let mut a = DMatrix::zeros(2 * src.len(), 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let (s, d) = (apply(&ts, s), apply(&td, d));
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u];
        let r1 = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v];
        for k in 0..9 {
            a[(2 * i, k)] = r0[k];
            a[(2 * i + 1, k)] = r1[k];
        }
    }
    let ata = a.tr_mul(&a);
    let eig = ata.symmetric_eigen();
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    let h = eig.eigenvectors.column(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(Error::SingularMatrix { ratio: 0.0 })?;
    let full = td_inv * hn * ts;
    let norm = full.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateFit("homography vanished".into()));
    }
    Ok(full / norm)
}

/// Minimum angle between a board's plane and the line of sight to it.
const MIN_VIEW_COS: f64 = 0.087;

/// Board-to-camera pose from a homography between board coordinates (meters)
/// and ideal normalized image coordinates. `None` for edge-on boards.
pub fn pose_from_homography(h: &Matrix3<f64>) -> Option<Pose> {
    let sv = h.singular_values();
    if !(sv.min() > 1e-9 * sv.max()) {
        return None;
    }
    let (h1, h2, h3) = (h.column(0).into_owned(), h.column(1).into_owned(), h.column(2).into_owned());
    let mut lambda = 2.0 / (h1.norm() + h2.norm());
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let r3 = r1.cross(&r2);
    let t = h3 * lambda;
    let rot = crate::cameramodel::orthonormalize(&Matrix3::from_columns(&[r1, r2, r3]));
    let normal = rot * Vector3::z();
    if (normal.dot(&t) / t.norm()).abs() < MIN_VIEW_COS {
        return None;
    }
    Some(Pose::new(rot, t))
}

fn board_pose(board: &Checkerboard, geometry: &BoardGeometry, intr: &Intrinsics) -> Option<Pose> {
    let src: Vec<Point2<f64>> = (0..geometry.corner_count())
        .map(|i| {
            let m = geometry.model_point(i);
            Point2::new(m.x, m.y)
        })
        .collect();
    let dst: Option<Vec<Point2<f64>>> = board
        .corners
        .iter()
        .map(|p| undistort(*p, intr).ok().map(Point2::from))
        .collect();
    let h = estimate_homography(&src, &dst?).ok()?;
    pose_from_homography(&h)
}

/// Parameters frozen at their current values. `fx`, `cu` and `cv` refer to
/// the left camera; `baseline` freezes the length of the relative translation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FixedParams {
    pub fx: bool,
    pub cu: bool,
    pub cv: bool,
    pub baseline: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationState {
    pub left: Intrinsics,
    pub right: Intrinsics,
    /// Maps left-camera coordinates into the right camera frame.
    pub right_from_left: Pose,
    /// Length of the relative translation, kept separately so a frozen
    /// baseline survives optimization bit for bit.
    pub baseline: f64,
    /// Board frame to left camera, per match; `None` leaves the board out.
    pub board_poses: Vec<Option<Pose>>,
    pub fixed: FixedParams,
}

impl CalibrationState {
    pub fn new(
        left: Intrinsics,
        right: Intrinsics,
        right_from_left: Pose,
        board_poses: Vec<Option<Pose>>,
        fixed: FixedParams,
    ) -> Self {
        Self {
            left,
            right,
            baseline: right_from_left.translation.norm(),
            right_from_left,
            board_poses,
            fixed,
        }
    }

    pub fn rig(&self) -> StereoRig {
        StereoRig {
            left: self.left,
            right: self.right,
            right_from_left: self.right_from_left,
        }
    }
}

fn quaternion_mean(rotations: &[Rotation3<f64>]) -> Rotation3<f64> {
    let first = UnitQuaternion::from_rotation_matrix(&rotations[0]);
    let mut acc = nalgebra::Vector4::zeros();
    for r in rotations {
        let q = UnitQuaternion::from_rotation_matrix(r);
        let v = q.as_ref().coords;
        acc += if v.dot(&first.as_ref().coords) < 0.0 { -v } else { v };
    }
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(acc));
    q.to_rotation_matrix()
}

/// Board poses from per-board homographies and the relative camera pose as
/// the mean of the per-board relative poses.
pub fn init_extrinsics_from_homographies(
    matches: &[BoardMatch],
    left: &Intrinsics,
    right: &Intrinsics,
) -> Result<CalibrationState> {
    if matches.is_empty() {
        return Err(Error::InitFailure("no board matches".into()));
    }
    let mut board_poses = Vec::with_capacity(matches.len());
    let mut relatives = Vec::new();
    for (i, m) in matches.iter().enumerate() {
        let pl = board_pose(&m.left, &m.geometry, left);
        let pr = board_pose(&m.right, &m.geometry, right);
        match (pl, pr) {
            (Some(pl), Some(pr)) => {
                relatives.push(pr.compose(&pl.inverse()));
                board_poses.push(Some(pl));
            }
            _ => {
                log::debug!("board {i} skipped during initialization");
                board_poses.push(None);
            }
        }
    }
    if relatives.is_empty() {
        return Err(Error::InitFailure("every board is degenerate".into()));
    }
    let rotations: Vec<Rotation3<f64>> = relatives.iter().map(|p| p.rotation).collect();
    let translation = relatives.iter().fold(Vector3::zeros(), |a, p| a + p.translation) / relatives.len() as f64;
    Ok(CalibrationState::new(
        *left,
        *right,
        Pose::new(quaternion_mean(&rotations), translation),
        board_poses,
        FixedParams::default(),
    ))
}

/// Jacobian evaluation strategy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum JacobianMode {
    #[default]
    Analytic,
    /// Central differences, for debugging.
    FiniteDifference,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CalibrationOptions {
    pub lm: LmConfig,
    pub jacobian: JacobianMode,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Orthonormal basis of the plane orthogonal to unit vector `d`.
pub fn tangent_basis(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = d.abs();
    let axis = if a.x <= a.y && a.x <= a.z {
        Vector3::x()
    } else if a.y <= a.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let e1 = d.cross(&axis).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

/// Column layout of the free parameters.
#[derive(Clone, Debug)]
pub struct ParameterLayout {
    /// Free left intrinsics, as indices into [`Intrinsics::to_array`].
    pub left_free: Vec<usize>,
    pub right_offset: usize,
    pub rotation_offset: usize,
    pub direction_offset: usize,
    /// Column of the baseline length, if free.
    pub norm_offset: Option<usize>,
    /// First column of each board's six parameters.
    pub board_offsets: Vec<Option<usize>>,
    pub len: usize,
}

impl ParameterLayout {
    pub fn new(state: &CalibrationState) -> Self {
        let f = state.fixed;
        let left_free: Vec<usize> = (0..INTRINSIC_COUNT)
            .filter(|&i| !((i == 0 && f.fx) || (i == 2 && f.cu) || (i == 3 && f.cv)))
            .collect();
        let right_offset = left_free.len();
        let rotation_offset = right_offset + INTRINSIC_COUNT;
        let direction_offset = rotation_offset + 3;
        let mut next = direction_offset + 2;
        let norm_offset = if f.baseline {
            None
        } else {
            next += 1;
            Some(next - 1)
        };
        let board_offsets = state
            .board_poses
            .iter()
            .map(|p| {
                p.map(|_| {
                    next += 6;
                    next - 6
                })
            })
            .collect();
        Self {
            left_free,
            right_offset,
            rotation_offset,
            direction_offset,
            norm_offset,
            board_offsets,
            len: next,
        }
    }
}

/// Reprojection problem over a set of matches.
pub struct CalibrationProblem<'a> {
    pub matches: &'a [BoardMatch],
    pub mode: JacobianMode,
}

impl CalibrationProblem<'_> {
    /// Residual count for a state.
    pub fn residual_len(&self, state: &CalibrationState) -> usize {
        self.matches
            .iter()
            .zip(&state.board_poses)
            .filter(|(_, p)| p.is_some())
            .map(|(m, _)| 4 * m.geometry.corner_count())
            .sum()
    }

    fn evaluate(&self, state: &CalibrationState, want_jacobian: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        if state.board_poses.len() != self.matches.len() {
            return Err(Error::InvalidInput("one board pose per match is required".into()));
        }
        let layout = ParameterLayout::new(state);
        let n = self.residual_len(state);
        let mut r = DVector::zeros(n);
        let mut jac = want_jacobian.then(|| DMatrix::zeros(n, layout.len));
        let rl = &state.right_from_left;
        let bnorm = state.baseline;
        let dir = rl.translation.normalize();
        let (e1, e2) = tangent_basis(&dir);
        let mut row = 0;
        for ((m, pose), offset) in self.matches.iter().zip(&state.board_poses).zip(&layout.board_offsets) {
            let (Some(pose), Some(boff)) = (pose, offset) else {
                continue;
            };
            let count = m.geometry.corner_count();
            let left_rows = row;
            let right_rows = row + 2 * count;
            for k in 0..count {
                let rx = pose.rotation * m.geometry.model_point(k);
                let pl = rx + pose.translation;
                let (px, jp, ji) = project_with_jacobians(&pl, &state.left)?;
                let lr = left_rows + 2 * k;
                let res = m.left.corners[k] - px;
                r[lr] = res.x;
                r[lr + 1] = res.y;
                if let Some(j) = jac.as_mut() {
                    for (col, &p) in layout.left_free.iter().enumerate() {
                        j[(lr, col)] = -ji[(0, p)];
                        j[(lr + 1, col)] = -ji[(1, p)];
                    }
                    let jw = jp * skew(&rx);
                    j.fixed_view_mut::<2, 3>(lr, *boff).copy_from(&jw);
                    j.fixed_view_mut::<2, 3>(lr, boff + 3).copy_from(&(-jp));
                }

                let pr = rl.rotation * pl + rl.translation;
                let (px, jp, ji) = project_with_jacobians(&pr, &state.right)?;
                let rr = right_rows + 2 * k;
                let res = m.right.corners[k] - px;
                r[rr] = res.x;
                r[rr + 1] = res.y;
                if let Some(j) = jac.as_mut() {
                    j.fixed_view_mut::<2, INTRINSIC_COUNT>(rr, layout.right_offset).copy_from(&(-ji));
                    let jrot = jp * skew(&(rl.rotation * pl));
                    j.fixed_view_mut::<2, 3>(rr, layout.rotation_offset).copy_from(&jrot);
                    let ja = -(jp * e1) * bnorm;
                    let jb = -(jp * e2) * bnorm;
                    j.fixed_view_mut::<2, 1>(rr, layout.direction_offset).copy_from(&ja);
                    j.fixed_view_mut::<2, 1>(rr, layout.direction_offset + 1).copy_from(&jb);
                    if let Some(no) = layout.norm_offset {
                        j.fixed_view_mut::<2, 1>(rr, no).copy_from(&(-(jp * dir)));
                    }
                    let jpr = jp * rl.rotation.matrix();
                    j.fixed_view_mut::<2, 3>(rr, *boff).copy_from(&(jpr * skew(&rx)));
                    j.fixed_view_mut::<2, 3>(rr, boff + 3).copy_from(&(-jpr));
                }
            }
            row += 4 * count;
        }
        Ok((r, jac))
    }

    fn finite_difference_jacobian(&self, state: &CalibrationState) -> Result<DMatrix<f64>> {
        let layout = ParameterLayout::new(state);
        let n = self.residual_len(state);
        let mut j = DMatrix::zeros(n, layout.len);
        for c in 0..layout.len {
            let h = if c < layout.right_offset + INTRINSIC_COUNT { 1e-5 } else { 1e-7 };
            let mut d = DVector::zeros(layout.len);
            d[c] = h;
            let (rp, _) = self.evaluate(&self.retract(state, &d), false)?;
            d[c] = -h;
            let (rm, _) = self.evaluate(&self.retract(state, &d), false)?;
            j.set_column(c, &((rp - rm) / (2.0 * h)));
        }
        Ok(j)
    }
}

impl LeastSquares for CalibrationProblem<'_> {
    type State = CalibrationState;

    fn residuals(&self, state: &CalibrationState) -> Result<DVector<f64>> {
        Ok(self.evaluate(state, false)?.0)
    }

    fn jacobian(&self, state: &CalibrationState) -> Result<DMatrix<f64>> {
        match self.mode {
            JacobianMode::Analytic => Ok(self.evaluate(state, true)?.1.unwrap()),
            JacobianMode::FiniteDifference => self.finite_difference_jacobian(state),
        }
    }

    fn retract(&self, state: &CalibrationState, delta: &DVector<f64>) -> CalibrationState {
        let layout = ParameterLayout::new(state);
        let mut s = state.clone();
        let mut left = s.left.to_array();
        for (col, &p) in layout.left_free.iter().enumerate() {
            left[p] += delta[col];
        }
        s.left = Intrinsics::from_array(&left);
        let mut right = s.right.to_array();
        for (i, v) in right.iter_mut().enumerate() {
            *v += delta[layout.right_offset + i];
        }
        s.right = Intrinsics::from_array(&right);

        let w = Vector3::new(
            delta[layout.rotation_offset],
            delta[layout.rotation_offset + 1],
            delta[layout.rotation_offset + 2],
        );
        let mut rot = Rotation3::new(w) * state.right_from_left.rotation;
        rot.renormalize();
        let n = state.baseline;
        let d = state.right_from_left.translation.normalize();
        let (e1, e2) = tangent_basis(&d);
        let d2 = (d + e1 * delta[layout.direction_offset] + e2 * delta[layout.direction_offset + 1]).normalize();
        let n2 = layout.norm_offset.map_or(n, |o| n + delta[o]);
        s.right_from_left = Pose::new(rot, d2 * n2);
        s.baseline = n2;

        for (pose, offset) in s.board_poses.iter_mut().zip(&layout.board_offsets) {
            if let (Some(p), Some(o)) = (pose.as_mut(), offset) {
                let w = Vector3::new(delta[*o], delta[o + 1], delta[o + 2]);
                let mut r = Rotation3::new(w) * p.rotation;
                r.renormalize();
                p.rotation = r;
                p.translation += Vector3::new(delta[o + 3], delta[o + 4], delta[o + 5]);
            }
        }
        s
    }
}

/// Residuals of one board in both images, `observed - projected`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoardResiduals {
    pub left: Vec<Vector2<f64>>,
    pub right: Vec<Vector2<f64>>,
}

impl BoardResiduals {
    pub fn sum_squares(&self) -> f64 {
        self.left.iter().chain(&self.right).map(|r| r.norm_squared()).sum()
    }

    pub fn corner_count(&self) -> usize {
        self.left.len() + self.right.len()
    }

    pub fn rms(&self) -> f64 {
        math::sqrt(self.sum_squares() / (2 * self.corner_count()) as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSolution {
    pub state: CalibrationState,
    /// Per match; `None` for boards left out of the optimization.
    pub residuals: Vec<Option<BoardResiduals>>,
    pub board_rms: Vec<Option<f64>>,
    /// RMS over residual components of all included boards.
    pub rms: f64,
    /// Boards left out of [`CalibrationSolution::rms`] without refitting.
    pub excluded: Vec<bool>,
    pub report: LmReport,
}

impl CalibrationSolution {
    /// Same solution with the RMS recomputed over boards not in `excluded`.
    pub fn excluding(&self, excluded: &[usize]) -> CalibrationSolution {
        let mut out = self.clone();
        for &i in excluded {
            if i < out.excluded.len() {
                out.excluded[i] = true;
            }
        }
        out.rms = overall_rms(&out.residuals, &out.excluded);
        out
    }

    pub fn corner_count(&self) -> usize {
        self.residuals
            .iter()
            .zip(&self.excluded)
            .filter(|(_, &e)| !e)
            .filter_map(|(r, _)| r.as_ref())
            .map(BoardResiduals::corner_count)
            .sum()
    }
}

fn overall_rms(residuals: &[Option<BoardResiduals>], excluded: &[bool]) -> f64 {
    let (ss, n) = residuals
        .iter()
        .zip(excluded)
        .filter(|(_, &e)| !e)
        .filter_map(|(r, _)| r.as_ref())
        .fold((0.0, 0), |(ss, n), r| (ss + r.sum_squares(), n + r.corner_count()));
    if n == 0 {
        0.0
    } else {
        math::sqrt(ss / (2 * n) as f64)
    }
}

/// Per-board residuals of a state.
pub fn board_residuals(state: &CalibrationState, matches: &[BoardMatch]) -> Result<Vec<Option<BoardResiduals>>> {
    let problem = CalibrationProblem {
        matches,
        mode: JacobianMode::Analytic,
    };
    let (r, _) = problem.evaluate(state, false)?;
    let mut row = 0;
    let mut out = Vec::with_capacity(matches.len());
    for (m, pose) in matches.iter().zip(&state.board_poses) {
        if pose.is_none() {
            out.push(None);
            continue;
        }
        let n = m.geometry.corner_count();
        let take = |start: usize| (0..n).map(|k| Vector2::new(r[start + 2 * k], r[start + 2 * k + 1])).collect();
        out.push(Some(BoardResiduals {
            left: take(row),
            right: take(row + 2 * n),
        }));
        row += 4 * n;
    }
    Ok(out)
}

fn solution_from(state: CalibrationState, matches: &[BoardMatch], report: LmReport) -> Result<CalibrationSolution> {
    let residuals = board_residuals(&state, matches)?;
    let board_rms = residuals.iter().map(|r| r.as_ref().map(BoardResiduals::rms)).collect();
    let excluded = vec![false; matches.len()];
    let rms = overall_rms(&residuals, &excluded);
    Ok(CalibrationSolution {
        state,
        residuals,
        board_rms,
        rms,
        excluded,
        report,
    })
}

/// Refines every free parameter of `state` by Levenberg-Marquardt.
pub fn optimize(state: CalibrationState, matches: &[BoardMatch], options: &CalibrationOptions) -> Result<CalibrationSolution> {
    if state.board_poses.len() != matches.len() {
        return Err(Error::InvalidInput("one board pose per match is required".into()));
    }
    let corners: usize = matches
        .iter()
        .zip(&state.board_poses)
        .filter(|(_, p)| p.is_some())
        .map(|(m, _)| m.geometry.corner_count())
        .sum();
    if corners < 6 {
        return Err(Error::InvalidInput(format!("need at least 6 corners per camera, got {corners}")));
    }
    for m in matches {
        let n = m.geometry.corner_count();
        if m.left.corners.len() != n || m.right.corners.len() != n {
            return Err(Error::InvalidInput("board corner count does not match its geometry".into()));
        }
    }
    let problem = CalibrationProblem {
        matches,
        mode: options.jacobian,
    };
    let (state, report) = lm::minimize(&problem, state, &options.lm)?;
    solution_from(state, matches, report)
}

/// Full pipeline from matched boards: initialization at `seed_focal` and the
/// image center, homography extrinsics, then [`optimize`].
pub fn calibrate(
    matches: &[BoardMatch],
    width: usize,
    height: usize,
    seed_focal: f64,
    options: &CalibrationOptions,
) -> Result<CalibrationSolution> {
    let guess = init_intrinsics(width, height, seed_focal)?;
    let state = init_extrinsics_from_homographies(matches, &guess, &guess)?;
    optimize(state, matches, options)
}

/// Refits without the given boards.
pub fn refit_excluding(
    solution: &CalibrationSolution,
    matches: &[BoardMatch],
    excluded: &[usize],
    options: &CalibrationOptions,
) -> Result<CalibrationSolution> {
    let mut state = solution.state.clone();
    for &i in excluded {
        if let Some(p) = state.board_poses.get_mut(i) {
            *p = None;
        }
    }
    optimize(state, matches, options)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Camera {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverlayKind {
    /// From a detected corner to its magnified reprojection error.
    ErrorVector,
    /// Between the heads of neighboring error vectors.
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlayLine {
    pub camera: Camera,
    pub kind: OverlayKind,
    pub from: Point2<f64>,
    pub to: Point2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoardReportRow {
    pub board: usize,
    pub rms_left: f64,
    pub rms_right: f64,
    pub rms: f64,
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReprojectionReport {
    pub rows: Vec<BoardReportRow>,
    pub rms: f64,
    pub overlay: Vec<OverlayLine>,
}

pub const OVERLAY_MAGNIFICATION: f64 = 50.0;

fn rms_of(v: &[Vector2<f64>]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    math::sqrt(v.iter().map(|r| r.norm_squared()).sum::<f64>() / (2 * v.len()) as f64)
}

/// Per-board table and overlay primitives with errors magnified
/// [`OVERLAY_MAGNIFICATION`] times.
pub fn reprojection_report(solution: &CalibrationSolution, matches: &[BoardMatch]) -> ReprojectionReport {
    let mut rows = Vec::new();
    let mut overlay = Vec::new();
    for (i, (res, m)) in solution.residuals.iter().zip(matches).enumerate() {
        let Some(res) = res else { continue };
        rows.push(BoardReportRow {
            board: i,
            rms_left: rms_of(&res.left),
            rms_right: rms_of(&res.right),
            rms: res.rms(),
            excluded: solution.excluded[i],
        });
        for (camera, board, errs) in [(Camera::Left, &m.left, &res.left), (Camera::Right, &m.right, &res.right)] {
            // Residuals are observed - projected; the vector points at the
            // reprojection.
            let heads: Vec<Point2<f64>> = board
                .corners
                .iter()
                .zip(errs)
                .map(|(p, e)| p - e * OVERLAY_MAGNIFICATION)
                .collect();
            for (p, h) in board.corners.iter().zip(&heads) {
                overlay.push(OverlayLine {
                    camera,
                    kind: OverlayKind::ErrorVector,
                    from: *p,
                    to: *h,
                });
            }
            let g = &m.geometry;
            let at = |r: usize, c: usize| heads[crate::boardfinder::snake_index(r, c, g.cols)];
            for r in 0..g.rows {
                for c in 0..g.cols {
                    if c + 1 < g.cols {
                        overlay.push(OverlayLine {
                            camera,
                            kind: OverlayKind::Grid,
                            from: at(r, c),
                            to: at(r, c + 1),
                        });
                    }
                    if r + 1 < g.rows {
                        overlay.push(OverlayLine {
                            camera,
                            kind: OverlayKind::Grid,
                            from: at(r, c),
                            to: at(r + 1, c),
                        });
                    }
                }
            }
        }
    }
    ReprojectionReport {
        rows,
        rms: solution.rms,
        overlay,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParameter {
    Fx,
    Cu,
    Cv,
    Baseline,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Fx => "fx",
            SweepParameter::Cu => "cu",
            SweepParameter::Cv => "cv",
            SweepParameter::Baseline => "baseline",
        }
    }

    pub fn value(self, state: &CalibrationState) -> f64 {
        match self {
            SweepParameter::Fx => state.left.fx,
            SweepParameter::Cu => state.left.cu,
            SweepParameter::Cv => state.left.cv,
            SweepParameter::Baseline => state.baseline,
        }
    }

    /// Copy of `state` with the parameter set to `value` and frozen.
    pub fn pin(self, state: &CalibrationState, value: f64) -> CalibrationState {
        let mut s = state.clone();
        match self {
            SweepParameter::Fx => {
                s.left.fx = value;
                s.fixed.fx = true;
            }
            SweepParameter::Cu => {
                s.left.cu = value;
                s.fixed.cu = true;
            }
            SweepParameter::Cv => {
                s.left.cv = value;
                s.fixed.cv = true;
            }
            SweepParameter::Baseline => {
                let t = s.right_from_left.translation;
                s.right_from_left.translation = t / t.norm() * value;
                s.baseline = value;
                s.fixed.baseline = true;
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityCurve {
    pub parameter: SweepParameter,
    /// Strictly increasing.
    pub probes: Vec<f64>,
    /// `None` where the probe failed to optimize.
    pub rms: Vec<Option<f64>>,
    /// Right-camera pitch in degrees per probe, for baseline sweeps.
    pub pitch_deg: Vec<Option<f64>>,
}

/// `center + k * step` for every integer `k` with `|k * step| <= half_range`.
pub fn probe_values(center: f64, half_range: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(half_range >= 0.0) || !center.is_finite() {
        return Err(Error::InvalidInput("sweep needs a positive step and non-negative range".into()));
    }
    let k = math::floor(half_range / step + 1e-9) as i64;
    Ok((-k..=k).map(|i| center + i as f64 * step).collect())
}

/// Optimizes with the parameter pinned at `value`, starting from `start`.
pub fn sensitivity_probe(
    start: &CalibrationState,
    matches: &[BoardMatch],
    parameter: SweepParameter,
    value: f64,
    options: &CalibrationOptions,
) -> Result<CalibrationSolution> {
    optimize(parameter.pin(start, value), matches, options)
}

/// Pins the parameter at each probe in turn and re-optimizes everything else
/// from `start`.
pub fn sensitivity_sweep(
    start: &CalibrationState,
    matches: &[BoardMatch],
    parameter: SweepParameter,
    center: f64,
    half_range: f64,
    step: f64,
    options: &CalibrationOptions,
) -> Result<SensitivityCurve> {
    let probes = probe_values(center, half_range, step)?;
    let mut rms = Vec::with_capacity(probes.len());
    let mut pitch_deg = Vec::new();
    for &v in &probes {
        match sensitivity_probe(start, matches, parameter, v, options) {
            Ok(sol) => {
                rms.push(Some(sol.rms));
                if parameter == SweepParameter::Baseline {
                    pitch_deg.push(Some(math::to_degrees(sol.state.rig().pitch())));
                }
            }
            Err(e) => {
                log::warn!("{} probe {v} failed: {e}", parameter.name());
                rms.push(None);
                if parameter == SweepParameter::Baseline {
                    pitch_deg.push(None);
                }
            }
        }
    }
    Ok(SensitivityCurve {
        parameter,
        probes,
        rms,
        pitch_deg,
    })
}

/// Projects every model corner with the given state, for tests and tools.
pub fn project_board(state: &CalibrationState, geometry: &BoardGeometry, pose: &Pose, camera: Camera) -> Result<Vec<Point2<f64>>> {
    (0..geometry.corner_count())
        .map(|k| {
            let pl = pose.transform(&geometry.model_point(k));
            match camera {
                Camera::Left => project(&pl, &state.left),
                Camera::Right => project(&state.right_from_left.transform(&pl), &state.right),
            }
        })
        .collect()
}
