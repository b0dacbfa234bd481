//! Synthetic stereo checkerboard scenes with exact ground truth.
//!
//! Boards are rendered by casting 16 rays per pixel through the full lens
//! model and averaging the nearest hit. The sample pattern is a staggered
//! 4x4 grid in which every sample has its own row and column, which keeps the
//! coverage of axis-aligned edges unbiased. Ground-truth corners come from
//! projecting the board model directly and never touch the raster.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Point2, Rotation3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::boardfinder::Checkerboard;
use crate::cameramodel::{project, undistort, Intrinsics, Pose, StereoRig};
use crate::error::{Error, Result};
use crate::imagegrad::FloatImage;
use crate::math;

pub const BLACK: f64 = 0.1;
pub const WHITE: f64 = 0.9;
pub const BACKGROUND: f64 = 0.45;

/// Corners must stay this far from the image border to be detectable.
pub const CORNER_BORDER: f64 = 4.0;

/// Planar checkerboard. The board frame has its origin at inner corner
/// `(0, 0)`, x along columns and y along rows; inner corner `(r, c)` sits at
/// `(c * square, r * square, 0)`. The square above-left of the origin is black.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoardSpec {
    /// Inner-corner rows.
    pub rows: usize,
    /// Inner-corner columns.
    pub cols: usize,
    /// Square side in meters.
    pub square: f64,
    /// White border around the squares, in meters.
    pub margin: f64,
    /// Board frame to left-camera frame.
    pub pose: Pose,
    /// Height of a cylindrical bow along the board x-axis, in meters.
    pub sagitta: f64,
}

impl BoardSpec {
    /// Board of the given size centered at `center` (left-camera frame) and
    /// rotated by `rotation`.
    pub fn centered(rows: usize, cols: usize, square: f64, center: Vector3<f64>, rotation: Rotation3<f64>) -> Self {
        let mid = Vector3::new((cols - 1) as f64 * square * 0.5, (rows - 1) as f64 * square * 0.5, 0.0);
        Self {
            rows,
            cols,
            square,
            margin: 0.5 * square,
            pose: Pose::new(rotation, center - rotation * mid),
            sagitta: 0.0,
        }
    }

    /// Outer extent `[x0, x1, y0, y1]` in board coordinates.
    pub fn extent(&self) -> [f64; 4] {
        let e = self.square + self.margin;
        [-e, self.cols as f64 * self.square + self.margin, -e, self.rows as f64 * self.square + self.margin]
    }

    fn bow_params(&self) -> (f64, f64) {
        let [x0, x1, _, _] = self.extent();
        (0.5 * (x0 + x1), 0.5 * (x1 - x0))
    }

    /// Out-of-plane offset at board coordinate `x`.
    pub fn bow(&self, x: f64) -> f64 {
        if self.sagitta == 0.0 {
            return 0.0;
        }
        let (mid, half) = self.bow_params();
        let u = (x - mid) / half;
        self.sagitta * (1.0 - u * u)
    }

    /// Inner corner `(row, col)` in board coordinates, including any bow.
    pub fn corner(&self, row: usize, col: usize) -> Vector3<f64> {
        let x = col as f64 * self.square;
        Vector3::new(x, row as f64 * self.square, self.bow(x))
    }

    /// Flat model point of inner corner `(row, col)`.
    pub fn model_point(&self, row: usize, col: usize) -> Vector3<f64> {
        Vector3::new(col as f64 * self.square, row as f64 * self.square, 0.0)
    }

    /// Intensity at board point `(x, y)` with black squares shrunk by
    /// `erosion` meters on every side; `None` off the board.
    pub fn intensity(&self, x: f64, y: f64, erosion: f64) -> Option<f64> {
        let [x0, x1, y0, y1] = self.extent();
        if !(x >= x0 && x <= x1 && y >= y0 && y <= y1) {
            return None;
        }
        let s = self.square;
        let lim_x = self.cols as f64 * s;
        let lim_y = self.rows as f64 * s;
        if x < -s || x >= lim_x || y < -s || y >= lim_y {
            return Some(WHITE);
        }
        let i = math::floor(x / s);
        let j = math::floor(y / s);
        if (i as i64 + j as i64).rem_euclid(2) != 0 {
            return Some(WHITE);
        }
        let (lx, ly) = (x - i * s, y - j * s);
        let inside = lx > erosion && lx < s - erosion && ly > erosion && ly < s - erosion;
        Some(if inside { BLACK } else { WHITE })
    }

    /// Ray parameter of the first hit of `origin + s * dir` (board frame),
    /// if it lands on the board.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let s = if self.sagitta == 0.0 {
            if dir.z == 0.0 {
                return None;
            }
            -origin.z / dir.z
        } else {
            let (mid, half) = self.bow_params();
            let q = self.sagitta / (half * half);
            let u = origin.x - mid;
            let a = q * dir.x * dir.x;
            let b = 2.0 * q * u * dir.x + dir.z;
            let c = q * u * u + origin.z - self.sagitta;
            smallest_positive_root(a, b, c)?
        };
        if !(s > 0.0) {
            return None;
        }
        let p = origin + dir * s;
        let [x0, x1, y0, y1] = self.extent();
        (p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1).then_some((s, p.x, p.y))
    }
}

fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if a.abs() < 1e-15 {
        return if b != 0.0 { Some(-c / b) } else { None };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = math::sqrt(disc);
    let q = -0.5 * (b + if b >= 0.0 { sq } else { -sq });
    let (r1, r2) = (q / a, if q != 0.0 { c / q } else { q / a });
    let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
    if lo > 0.0 {
        Some(lo)
    } else if hi > 0.0 {
        Some(hi)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub boards: Vec<BoardSpec>,
    pub rig: StereoRig,
    pub width: usize,
    pub height: usize,
    /// Growth of white regions in pixels.
    pub dilation_px: f64,
    /// Standard deviation of noise on observed corners, in pixels.
    pub corner_noise: f64,
    /// Standard deviation of additive image noise.
    pub intensity_noise: f64,
    pub seed: u64,
    /// Board modelled as the bent one, if any.
    pub bent_board: Option<usize>,
    /// Skip the check that board outlines lie inside both images.
    pub allow_clip: bool,
}

impl SceneSpec {
    /// Sets the bow of the flagged bent board.
    pub fn with_bend(mut self, sagitta: f64) -> Self {
        if let Some(i) = self.bent_board {
            self.boards[i].sagitta = sagitta;
        }
        self
    }

    /// Board frame to right-camera frame for board `i`.
    pub fn right_pose(&self, i: usize) -> Pose {
        self.rig.right_from_left.compose(&self.boards[i].pose)
    }

    fn camera_pose(&self, i: usize, right: bool) -> Pose {
        if right {
            self.right_pose(i)
        } else {
            self.boards[i].pose
        }
    }

    fn camera(&self, right: bool) -> &Intrinsics {
        if right {
            &self.rig.right
        } else {
            &self.rig.left
        }
    }

    /// Checks that every board is visible in both cameras.
    pub fn validate(&self) -> Result<()> {
        if self.boards.is_empty() {
            return Err(Error::Scene("scene has no boards".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Scene("image too small".into()));
        }
        let (w, h) = ((self.width - 1) as f64, (self.height - 1) as f64);
        for (i, b) in self.boards.iter().enumerate() {
            if b.rows < 2 || b.cols < 2 || !(b.square > 0.0) || b.margin < 0.0 {
                return Err(Error::Scene(format!("board {i} has invalid geometry")));
            }
            for right in [false, true] {
                let pose = self.camera_pose(i, right);
                let cam = self.camera(right);
                let inside = |p: Point2<f64>, m: f64| p.x >= m && p.y >= m && p.x <= w - m && p.y <= h - m;
                for r in 0..b.rows {
                    for c in 0..b.cols {
                        let p = project(&pose.transform(&b.corner(r, c)), cam)
                            .map_err(|_| Error::Scene(format!("board {i} is behind a camera")))?;
                        if !inside(p, CORNER_BORDER) {
                            return Err(Error::Scene(format!("board {i} corner ({r}, {c}) leaves the image")));
                        }
                    }
                }
                if !self.allow_clip {
                    for p in outline(b) {
                        let q = project(&pose.transform(&p), cam)
                            .map_err(|_| Error::Scene(format!("board {i} is behind a camera")))?;
                        if !inside(q, 0.0) {
                            return Err(Error::Scene(format!("board {i} outline leaves the image")));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn outline(b: &BoardSpec) -> Vec<Vector3<f64>> {
    const N: usize = 24;
    let [x0, x1, y0, y1] = b.extent();
    let mut pts = Vec::with_capacity(4 * N);
    for k in 0..N {
        let t = k as f64 / N as f64;
        let x = x0 + t * (x1 - x0);
        let xr = x1 - t * (x1 - x0);
        let y = y0 + t * (y1 - y0);
        let yr = y1 - t * (y1 - y0);
        pts.push(Vector3::new(x, y0, b.bow(x)));
        pts.push(Vector3::new(x1, y, b.bow(x1)));
        pts.push(Vector3::new(xr, y1, b.bow(xr)));
        pts.push(Vector3::new(x0, yr, b.bow(x0)));
    }
    pts
}

/// Sample offsets from the pixel center.
pub fn subsample_offsets() -> [(f64, f64); 16] {
    let mut out = [(0.0, 0.0); 16];
    for a in 0..4 {
        for b in 0..4 {
            let sx = ((4 * a + b) as f64 + 0.5) / 16.0 - 0.5;
            let sy = ((4 * b + a) as f64 + 0.5) / 16.0 - 0.5;
            out[4 * a + b] = (sx, sy);
        }
    }
    out
}

/// Rendered stereo pair with exact corner positions.
#[derive(Clone, Debug)]
pub struct Rendering {
    pub left: FloatImage,
    pub right: FloatImage,
    /// Exact projections, one board per spec board, `image_id` = board index.
    pub truth_left: Vec<Checkerboard>,
    pub truth_right: Vec<Checkerboard>,
}

struct BoardView<'a> {
    board: &'a BoardSpec,
    /// Camera to board transform.
    to_board: Pose,
    bbox: [usize; 4],
}

fn board_views<'a>(spec: &'a SceneSpec, right: bool) -> Result<Vec<BoardView<'a>>> {
    let cam = spec.camera(right);
    let mut out = Vec::new();
    for (i, b) in spec.boards.iter().enumerate() {
        let pose = spec.camera_pose(i, right);
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in outline(b) {
            let q = project(&pose.transform(&p), cam)?;
            u0 = u0.min(q.x);
            u1 = u1.max(q.x);
            v0 = v0.min(q.y);
            v1 = v1.max(q.y);
        }
        let clamp = |x: f64, n: usize| (x.max(0.0) as usize).min(n - 1);
        let bbox = [
            clamp(math::floor(u0) - 2.0, spec.width),
            clamp(math::floor(u1) + 3.0, spec.width),
            clamp(math::floor(v0) - 2.0, spec.height),
            clamp(math::floor(v1) + 3.0, spec.height),
        ];
        if u1 < 0.0 || v1 < 0.0 || u0 > spec.width as f64 || v0 > spec.height as f64 {
            continue;
        }
        out.push(BoardView {
            board: b,
            to_board: pose.inverse(),
            bbox,
        });
    }
    Ok(out)
}

fn render_camera(spec: &SceneSpec, right: bool) -> Result<FloatImage> {
    let cam = spec.camera(right);
    let views = board_views(spec, right)?;
    let offsets = subsample_offsets();
    let mut img = FloatImage::filled(spec.width, spec.height, BACKGROUND);
    let mut active: Vec<usize> = Vec::new();
    for v in 0..spec.height {
        for u in 0..spec.width {
            active.clear();
            active.extend(
                views
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| u >= b.bbox[0] && u <= b.bbox[1] && v >= b.bbox[2] && v <= b.bbox[3])
                    .map(|(k, _)| k),
            );
            if active.is_empty() {
                continue;
            }
            let mut acc = 0.0;
            for &(dx, dy) in &offsets {
                let n = undistort(Point2::new(u as f64 + dx, v as f64 + dy), cam)?;
                let ray = Vector3::new(n.x, n.y, 1.0);
                let mut best: Option<(f64, f64)> = None;
                for &k in &active {
                    let view = &views[k];
                    let origin = view.to_board.translation;
                    let dir = view.to_board.rotation * ray;
                    if let Some((s, x, y)) = view.board.intersect(&origin, &dir) {
                        if best.is_some_and(|(bs, _)| bs <= s) {
                            continue;
                        }
                        // Camera depth of the hit is `s` because the ray has unit z.
                        let erosion = spec.dilation_px * s / cam.fx;
                        if let Some(val) = view.board.intensity(x, y, erosion) {
                            best = Some((s, val));
                        }
                    }
                }
                acc += best.map_or(BACKGROUND, |(_, val)| val);
            }
            img.set(u, v, acc / offsets.len() as f64);
        }
    }
    Ok(img)
}

/// Exact corner projections in the left (`false`) or right image.
pub fn ground_truth(spec: &SceneSpec, right: bool) -> Result<Vec<Checkerboard>> {
    let cam = spec.camera(right);
    let mut out = Vec::with_capacity(spec.boards.len());
    for (i, b) in spec.boards.iter().enumerate() {
        let pose = spec.camera_pose(i, right);
        let mut grid = vec![Point2::origin(); b.rows * b.cols];
        for r in 0..b.rows {
            for c in 0..b.cols {
                grid[crate::boardfinder::snake_index(r, c, b.cols)] = project(&pose.transform(&b.corner(r, c)), cam)?;
            }
        }
        let mut board = Checkerboard::new(b.rows, b.cols, grid)?;
        board.image_id = i;
        out.push(board);
    }
    Ok(out)
}

/// Renders both images of the scene.
pub fn render(spec: &SceneSpec) -> Result<Rendering> {
    spec.validate()?;
    let mut left = render_camera(spec, false)?;
    let mut right = render_camera(spec, true)?;
    if spec.intensity_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.intensity_noise).map_err(|e| Error::Scene(format!("{e}")))?;
        for img in [&mut left, &mut right] {
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let v = img.get(x, y) + normal.sample(&mut rng);
                    img.set(x, y, v);
                }
            }
        }
    }
    Ok(Rendering {
        left,
        right,
        truth_left: ground_truth(spec, false)?,
        truth_right: ground_truth(spec, true)?,
    })
}

/// Ground-truth corners of both images perturbed by the spec's corner noise.
pub fn observed_corners(spec: &SceneSpec) -> Result<(Vec<Checkerboard>, Vec<Checkerboard>)> {
    spec.validate()?;
    let mut left = ground_truth(spec, false)?;
    let mut right = ground_truth(spec, true)?;
    if spec.corner_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5851_f42d_4c95_7f2d);
        let normal = Normal::new(0.0, spec.corner_noise).map_err(|e| Error::Scene(format!("{e}")))?;
        for boards in [&mut left, &mut right] {
            for b in boards.iter_mut() {
                for p in b.corners.iter_mut() {
                    *p += Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng));
                }
            }
        }
    }
    Ok((left, right))
}

/// Rig resembling the KITTI grayscale pair.
pub fn kitti_like_rig() -> StereoRig {
    StereoRig {
        left: Intrinsics {
            fx: 975.0,
            fy: 975.0,
            cu: 700.0,
            cv: 247.0,
            k: [-0.3729, 0.2037, 0.0022, 0.0014, -0.0723],
        },
        right: Intrinsics {
            fx: 975.0,
            fy: 975.0,
            cu: 700.0,
            cv: 247.0,
            k: [-0.3645, 0.179, 0.0011, -0.0006, -0.0531],
        },
        right_from_left: Pose::new(
            Rotation3::from_euler_angles(0.0021, -0.0043, 0.0017),
            Vector3::new(-0.539, 0.0012, -0.0035),
        ),
    }
}

pub const KITTI_WIDTH: usize = 1392;
pub const KITTI_HEIGHT: usize = 512;

fn tilt(pitch: f64, yaw: f64, roll: f64) -> Rotation3<f64> {
    Rotation3::from_euler_angles(pitch, yaw, roll)
}

/// Twelve boards spread over the shared field of view at 5 to 6.5 m, tilted
/// towards the image center. Board 10 is the one flagged as bent (with zero
/// bow unless [`SceneSpec::with_bend`] is used).
pub fn kitti_like_layout() -> SceneSpec {
    let rig = kitti_like_rig();
    // (normalized x, normalized y, depth) of the board centers. Rows are
    // staggered so sorting boards by image column gives the same order in
    // both images.
    const PLACES: [(f64, f64, f64); 12] = [
        (-0.46, -0.165, 5.39),
        (-0.15, -0.17, 6.15),
        (0.14, -0.17, 6.16),
        (0.43, -0.165, 5.49),
        (-0.41, 0.0, 5.55),
        (-0.10, 0.01, 6.2),
        (0.19, -0.01, 6.09),
        (0.48, 0.0, 5.33),
        (-0.36, 0.175, 5.7),
        (-0.05, 0.18, 6.24),
        (0.24, 0.18, 5.99),
        (0.53, 0.175, 5.16),
    ];
    let boards = PLACES
        .iter()
        .enumerate()
        .map(|(i, &(xn, yn, z))| {
            let center = Vector3::new(xn * z + 0.27, yn * z, z);
            let roll = if i % 2 == 0 { 0.12 } else { -0.12 };
            let rot = tilt(-yn * 0.8, xn * 0.5, roll);
            BoardSpec::centered(5, 7, 0.1, center, rot)
        })
        .collect();
    SceneSpec {
        boards,
        rig,
        width: KITTI_WIDTH,
        height: KITTI_HEIGHT,
        dilation_px: 0.0,
        corner_noise: 0.0,
        intensity_noise: 0.0,
        seed: 0,
        bent_board: Some(10),
        allow_clip: false,
    }
}

/// Fourteen boards at 1 to 5.6 m with strong rotations, as a stand-in for
/// waving one board in front of the cameras. Boards may overlap in the image,
/// so this layout is meant for [`observed_corners`] rather than [`render`].
pub fn diverse_layout() -> SceneSpec {
    let rig = kitti_like_rig();
    // (normalized x, normalized y, depth, pitch, yaw, roll)
    const POSES: [(f64, f64, f64, f64, f64, f64); 14] = [
        (0.22, 0.0, 1.0, 0.15, 0.7, 0.0),
        (-0.3, -0.12, 2.1, 0.5, 0.6, 0.1),
        (0.5, -0.13, 2.45, -0.4, -0.7, 0.2),
        (-0.3, 0.14, 1.82, -0.5, 0.4, -0.2),
        (0.45, 0.14, 1.96, 0.6, -0.5, 0.0),
        (0.05, -0.12, 2.8, 0.7, 0.0, 0.3),
        (0.05, 0.12, 2.24, -0.7, 0.1, -0.3),
        (0.0, 0.0, 1.4, 0.2, -0.8, 0.1),
        (0.25, 0.05, 4.2, 0.3, 0.3, 0.5),
        (-0.45, 0.0, 4.9, -0.2, 0.5, 0.0),
        (0.55, 0.0, 3.5, 0.1, -0.6, -0.1),
        (0.15, 0.0, 1.26, -0.3, 0.6, 0.2),
        (-0.1, -0.1, 5.6, 0.0, 0.0, 0.0),
        (0.35, 0.1, 1.54, 0.4, 0.2, -0.4),
    ];
    let boards = POSES
        .iter()
        .map(|&(xn, yn, z, p, y, r)| BoardSpec::centered(5, 7, 0.1, Vector3::new(xn * z, yn * z, z), tilt(p, y, r)))
        .collect();
    SceneSpec {
        boards,
        rig,
        width: KITTI_WIDTH,
        height: KITTI_HEIGHT,
        dilation_px: 0.0,
        corner_noise: 0.0,
        intensity_noise: 0.0,
        seed: 0,
        bent_board: None,
        allow_clip: true,
    }
}
