//! Pinhole camera with radial-tangential distortion, stereo rectification and
//! conversion of rectified feature coordinates between calibrations.
//!
//! Distortion coefficients follow the KITTI file order: `k[0]`, `k[1]` and
//! `k[4]` are the r², r⁴ and r⁶ radial terms, `k[2]` and `k[3]` the two
//! tangential terms.

use alloc::vec::Vec;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x4, Point2, Rotation3, SMatrix, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::imagegrad::FloatImage;
use crate::math;

pub const UNDISTORT_MAX_ITERATIONS: usize = 50;
pub const UNDISTORT_STEP_TOLERANCE: f64 = 1e-10;

/// Number of intrinsic parameters per camera.
pub const INTRINSIC_COUNT: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cu: f64,
    pub cv: f64,
    pub k: [f64; 5],
}

impl Intrinsics {
    pub fn pinhole(fx: f64, fy: f64, cu: f64, cv: f64) -> Self {
        Self {
            fx,
            fy,
            cu,
            cv,
            k: [0.0; 5],
        }
    }

    /// Parameters in the order `fx, fy, cu, cv, k1..k5`.
    pub fn to_array(&self) -> [f64; INTRINSIC_COUNT] {
        let k = self.k;
        [self.fx, self.fy, self.cu, self.cv, k[0], k[1], k[2], k[3], k[4]]
    }

    pub fn from_array(p: &[f64; INTRINSIC_COUNT]) -> Self {
        Self {
            fx: p[0],
            fy: p[1],
            cu: p[2],
            cv: p[3],
            k: [p[4], p[5], p[6], p[7], p[8]],
        }
    }

    pub fn camera_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cu, 0.0, self.fy, self.cv, 0.0, 0.0, 1.0)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        let inside = |c: f64, n: usize| c >= 0.0 && c <= n as f64;
        if !inside(self.cu, width) || !inside(self.cv, height) {
            return Err(Error::InvalidInput("principal point outside the image".into()));
        }
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite intrinsic parameter".into()));
        }
        Ok(())
    }

    fn radial(&self, r2: f64) -> f64 {
        let k = &self.k;
        1.0 + r2 * (k[0] + r2 * (k[1] + r2 * k[4]))
    }

    fn tangential(&self, x: f64, y: f64) -> Vector2<f64> {
        let (k3, k4) = (self.k[2], self.k[3]);
        let r2 = x * x + y * y;
        Vector2::new(2.0 * k3 * x * y + k4 * (r2 + 2.0 * x * x), k3 * (r2 + 2.0 * y * y) + 2.0 * k4 * x * y)
    }
}

/// Applies lens distortion to ideal normalized coordinates.
pub fn distort(p: Vector2<f64>, intr: &Intrinsics) -> Vector2<f64> {
    let r2 = p.norm_squared();
    p * intr.radial(r2) + intr.tangential(p.x, p.y)
}

/// Jacobians of [`distort`] with respect to the point and to `k1..k5`.
pub fn distort_jacobians(p: Vector2<f64>, intr: &Intrinsics) -> (Matrix2<f64>, SMatrix<f64, 2, 5>) {
    let (x, y) = (p.x, p.y);
    let k = &intr.k;
    let r2 = x * x + y * y;
    let rad = intr.radial(r2);
    let drad = k[0] + 2.0 * k[1] * r2 + 3.0 * k[4] * r2 * r2;
    let (k3, k4) = (k[2], k[3]);
    let jp = Matrix2::new(
        rad + 2.0 * x * x * drad + 2.0 * k3 * y + 6.0 * k4 * x,
        2.0 * x * y * drad + 2.0 * k3 * x + 2.0 * k4 * y,
        2.0 * x * y * drad + 2.0 * k3 * x + 2.0 * k4 * y,
        rad + 2.0 * y * y * drad + 6.0 * k3 * y + 2.0 * k4 * x,
    );
    let r4 = r2 * r2;
    #[rustfmt::skip]
    let jk = SMatrix::<f64, 2, 5>::new(
        x * r2, x * r4, 2.0 * x * y, r2 + 2.0 * x * x, x * r4 * r2,
        y * r2, y * r4, r2 + 2.0 * y * y, 2.0 * x * y, y * r4 * r2,
    );
    (jp, jk)
}

/// Inverts [`distort`] by fixed-point iteration, starting from the distorted
/// point itself.
pub fn undistort_normalized(pd: Vector2<f64>, intr: &Intrinsics) -> Result<Vector2<f64>> {
    if !(pd.x.is_finite() && pd.y.is_finite()) {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    let mut p = pd;
    for _ in 0..UNDISTORT_MAX_ITERATIONS {
        let next = (pd - intr.tangential(p.x, p.y)) / intr.radial(p.norm_squared());
        let step = (next - p).norm();
        p = next;
        if step < UNDISTORT_STEP_TOLERANCE {
            return Ok(p);
        }
        if !step.is_finite() {
            break;
        }
    }
    Err(Error::Convergence {
        iterations: UNDISTORT_MAX_ITERATIONS,
        residual: (distort(p, intr) - pd).norm(),
    })
}

/// Ideal normalized coordinates of a raw image pixel.
pub fn undistort(pixel: Point2<f64>, intr: &Intrinsics) -> Result<Vector2<f64>> {
    let pd = Vector2::new((pixel.x - intr.cu) / intr.fx, (pixel.y - intr.cv) / intr.fy);
    undistort_normalized(pd, intr)
}

/// Pixel of a point given in the camera frame.
pub fn project(point: &Vector3<f64>, intr: &Intrinsics) -> Result<Point2<f64>> {
    if !(point.z > 0.0) {
        return Err(Error::BehindCamera { z: point.z });
    }
    let d = distort(Vector2::new(point.x / point.z, point.y / point.z), intr);
    Ok(Point2::new(intr.fx * d.x + intr.cu, intr.fy * d.y + intr.cv))
}

/// Projection with its Jacobians with respect to the point and to the
/// intrinsics in [`Intrinsics::to_array`] order.
pub fn project_with_jacobians(
    point: &Vector3<f64>,
    intr: &Intrinsics,
) -> Result<(Point2<f64>, Matrix2x3<f64>, SMatrix<f64, 2, INTRINSIC_COUNT>)> {
    if !(point.z > 0.0) {
        return Err(Error::BehindCamera { z: point.z });
    }
    let iz = 1.0 / point.z;
    let n = Vector2::new(point.x * iz, point.y * iz);
    let d = distort(n, intr);
    let (jd, jk) = distort_jacobians(n, intr);
    let jn = Matrix2x3::new(iz, 0.0, -n.x * iz, 0.0, iz, -n.y * iz);
    let f = Matrix2::new(intr.fx, 0.0, 0.0, intr.fy);
    let jpoint = f * jd * jn;
    let mut jintr = SMatrix::<f64, 2, INTRINSIC_COUNT>::zeros();
    jintr[(0, 0)] = d.x;
    jintr[(1, 1)] = d.y;
    jintr[(0, 2)] = 1.0;
    jintr[(1, 3)] = 1.0;
    jintr.fixed_view_mut::<2, 5>(0, 4).copy_from(&(f * jk));
    Ok((Point2::new(intr.fx * d.x + intr.cu, intr.fy * d.y + intr.cv), jpoint, jintr))
}

/// Rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Pose from an axis-angle vector and a translation.
    pub fn from_parts(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(Rotation3::new(axis_angle), translation)
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut r = self.rotation * other.rotation;
        r.renormalize();
        Pose::new(r, self.rotation * other.translation + self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let ri = self.rotation.inverse();
        Pose::new(ri, -(ri * self.translation))
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        self.rotation.angle()
    }

    pub fn matrix3x4(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Pose from a 3x4 `[R | t]`, re-orthonormalizing `R`.
    pub fn from_matrix3x4(m: &Matrix3x4<f64>) -> Pose {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        Pose::new(orthonormalize(&r), m.column(3).into_owned())
    }
}

/// Closest rotation to `m` in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    Rotation3::from_matrix_unchecked(r)
}

/// Two cameras; `right_from_left` maps left-camera coordinates into the right
/// camera frame, so the right camera sits at `-R^T t` in the left frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoRig {
    pub left: Intrinsics,
    pub right: Intrinsics,
    pub right_from_left: Pose,
}

impl StereoRig {
    pub fn baseline(&self) -> f64 {
        self.right_from_left.translation.norm()
    }

    /// Relative rotation about the camera y-axis, in radians.
    pub fn pitch(&self) -> f64 {
        let m = self.right_from_left.rotation.matrix();
        math::atan2(m[(0, 2)], m[(2, 2)])
    }
}

/// Rectifying rotation and projection for one camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraCalibration {
    pub intrinsics: Intrinsics,
    /// Rotation from the camera frame into the rectified frame.
    pub r_rect: Rotation3<f64>,
    pub p_rect: Matrix3x4<f64>,
}

impl CameraCalibration {
    fn rect_focal(&self) -> (f64, f64, f64, f64) {
        let p = &self.p_rect;
        (p[(0, 0)], p[(1, 1)], p[(0, 2)], p[(1, 2)])
    }

    /// Raw-image pixel seen at a rectified pixel.
    pub fn rectified_to_raw(&self, pixel: Point2<f64>) -> Result<Point2<f64>> {
        let (f, fy, cu, cv) = self.rect_focal();
        let ray = Vector3::new((pixel.x - cu) / f, (pixel.y - cv) / fy, 1.0);
        project(&(self.r_rect.inverse() * ray), &self.intrinsics)
    }

    /// Rectified pixel of a raw-image pixel.
    pub fn raw_to_rectified(&self, pixel: Point2<f64>) -> Result<Point2<f64>> {
        let n = undistort(pixel, &self.intrinsics)?;
        let ray = self.r_rect * Vector3::new(n.x, n.y, 1.0);
        if !(ray.z > 0.0) {
            return Err(Error::BehindCamera { z: ray.z });
        }
        let (f, fy, cu, cv) = self.rect_focal();
        Ok(Point2::new(f * ray.x / ray.z + cu, fy * ray.y / ray.z + cv))
    }
}

/// Rectification of both cameras of a rig.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rectification {
    pub left: CameraCalibration,
    pub right: CameraCalibration,
}

fn valid_rectangle(intr: &Intrinsics, r_rect: &Rotation3<f64>, width: usize, height: usize) -> Result<[f64; 4]> {
    const SAMPLES: usize = 32;
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    let map = |u: f64, v: f64| -> Result<Vector2<f64>> {
        let n = undistort(Point2::new(u, v), intr)?;
        let ray = r_rect * Vector3::new(n.x, n.y, 1.0);
        Ok(Vector2::new(ray.x / ray.z, ray.y / ray.z))
    };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..=SAMPLES {
        let s = i as f64 / SAMPLES as f64;
        x0 = x0.max(map(0.0, s * h)?.x);
        x1 = x1.min(map(w, s * h)?.x);
        y0 = y0.max(map(s * w, 0.0)?.y);
        y1 = y1.min(map(s * w, h)?.y);
    }
    Ok([x0, x1, y0, y1])
}

/// Rectifies a rig: the relative rotation is split evenly between the two
/// cameras and the rectified x-axis is aligned with the baseline. Both
/// cameras share the focal length (mean of the input `fy`) and the principal
/// point, which centers the region valid in both images.
pub fn stereo_rectify(rig: &StereoRig, width: usize, height: usize) -> Result<Rectification> {
    let t = rig.right_from_left.translation;
    if !(t.norm() > 0.0) {
        return Err(Error::InvalidInput("rig has zero baseline".into()));
    }
    if width < 2 || height < 2 {
        return Err(Error::InvalidInput("image too small".into()));
    }
    let half = Rotation3::new(rig.right_from_left.rotation.scaled_axis() * 0.5);
    let tp = half.inverse() * t;
    let e1 = -tp / tp.norm();
    let e2 = Vector3::new(-e1.y, e1.x, 0.0);
    let e2 = if e2.norm() > 1e-12 {
        e2 / e2.norm()
    } else {
        return Err(Error::InvalidInput("baseline is parallel to the optical axis".into()));
    };
    let e3 = e1.cross(&e2);
    let align = Rotation3::from_matrix_unchecked(Matrix3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]));
    let mut r_left = align * half;
    let mut r_right = align * half.inverse();
    r_left.renormalize();
    r_right.renormalize();

    let f = 0.5 * (rig.left.fy + rig.right.fy);
    let a = valid_rectangle(&rig.left, &r_left, width, height)?;
    let b = valid_rectangle(&rig.right, &r_right, width, height)?;
    let rect = [a[0].max(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].min(b[3])];
    let cu = 0.5 * (width - 1) as f64 - f * 0.5 * (rect[0] + rect[1]);
    let cv = 0.5 * (height - 1) as f64 - f * 0.5 * (rect[2] + rect[3]);
    let b = (align * tp).x;
    let k = Matrix3::new(f, 0.0, cu, 0.0, f, cv, 0.0, 0.0, 1.0);
    let mut p_left = Matrix3x4::zeros();
    p_left.fixed_view_mut::<3, 3>(0, 0).copy_from(&k);
    let mut p_right = p_left;
    p_right[(0, 3)] = f * b;
    Ok(Rectification {
        left: CameraCalibration {
            intrinsics: rig.left,
            r_rect: r_left,
            p_rect: p_left,
        },
        right: CameraCalibration {
            intrinsics: rig.right,
            r_rect: r_right,
            p_rect: p_right,
        },
    })
}

/// Source pixel for every pixel of a rectified image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RectificationMap {
    pub width: usize,
    pub height: usize,
    pub source: Vec<Option<Point2<f64>>>,
}

pub fn rectification_map(calib: &CameraCalibration, width: usize, height: usize) -> RectificationMap {
    let mut source = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            source.push(calib.rectified_to_raw(Point2::new(u as f64, v as f64)).ok());
        }
    }
    RectificationMap { width, height, source }
}

/// Resamples `img` through `map` with bilinear interpolation. Pixels whose
/// source falls outside the image are 0.
pub fn remap(img: &FloatImage, map: &RectificationMap) -> FloatImage {
    FloatImage::from_fn(map.width, map.height, |u, v| {
        map.source[v * map.width + u]
            .and_then(|p| img.sample_bilinear(p.x, p.y))
            .unwrap_or(0.0)
    })
}

/// Moves a feature from rectified coordinates under `default` to rectified
/// coordinates under `custom`, passing through the raw image.
pub fn convert_feature(pixel: Point2<f64>, default: &CameraCalibration, custom: &CameraCalibration) -> Result<Point2<f64>> {
    let raw = default.rectified_to_raw(pixel)?;
    custom.raw_to_rectified(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn kitti_like() -> Intrinsics {
        Intrinsics {
            fx: 975.0,
            fy: 975.0,
            cu: 700.0,
            cv: 247.0,
            k: [-0.37, 0.2, 0.0011, -0.0006, -0.07],
        }
    }

    #[test]
    fn distort_examples() {
        let mut i = Intrinsics::pinhole(1.0, 1.0, 0.0, 0.0);
        let p = Vector2::new(0.1, 0.2);
        assert_eq!(distort(p, &i), p);
        i.k = [-0.37, 0.0, 0.0, 0.0, 0.0];
        let d = distort(p, &i);
        assert_relative_eq!(d.x, 0.09815, epsilon = 1e-12);
        assert_relative_eq!(d.y, 0.19630, epsilon = 1e-12);
        let k = kitti_like();
        assert_eq!(distort(Vector2::zeros(), &k), Vector2::zeros());
    }

    #[test]
    fn distort_jacobians_match_differences() {
        let intr = kitti_like();
        let p = Vector2::new(0.31, -0.17);
        let (jp, jk) = distort_jacobians(p, &intr);
        let h = 1e-6;
        for a in 0..2 {
            let mut e = Vector2::zeros();
            e[a] = h;
            let fd = (distort(p + e, &intr) - distort(p - e, &intr)) / (2.0 * h);
            assert_relative_eq!(jp.column(a).into_owned(), fd, epsilon = 1e-8);
        }
        for a in 0..5 {
            let (mut ip, mut im) = (intr, intr);
            ip.k[a] += h;
            im.k[a] -= h;
            let fd = (distort(p, &ip) - distort(p, &im)) / (2.0 * h);
            assert_relative_eq!(jk.column(a).into_owned(), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn project_examples() {
        let i = Intrinsics::pinhole(975.0, 975.0, 700.0, 247.0);
        assert_eq!(project(&Vector3::new(0.0, 0.0, 1.0), &i).unwrap(), Point2::new(700.0, 247.0));
        assert_eq!(project(&Vector3::new(1.0, 0.0, 1.0), &i).unwrap(), Point2::new(1675.0, 247.0));
        assert!(matches!(project(&Vector3::new(0.0, 0.0, 0.0), &i), Err(Error::BehindCamera { .. })));
        assert!(matches!(project(&Vector3::new(0.0, 0.0, -1.0), &i), Err(Error::BehindCamera { .. })));
        let k = kitti_like();
        let pt = Vector3::new(0.4, -0.2, 2.0);
        let d = distort(Vector2::new(0.2, -0.1), &k);
        let px = project(&pt, &k).unwrap();
        assert_relative_eq!(px.x, 975.0 * d.x + 700.0, epsilon = 1e-12);
        assert_relative_eq!(px.y, 975.0 * d.y + 247.0, epsilon = 1e-12);
    }

    #[test]
    fn project_jacobians_match_differences() {
        let intr = kitti_like();
        let pt = Vector3::new(0.6, -0.25, 3.1);
        let (px, jpt, jin) = project_with_jacobians(&pt, &intr).unwrap();
        assert_eq!(px, project(&pt, &intr).unwrap());
        let h = 1e-6;
        for a in 0..3 {
            let mut e = Vector3::zeros();
            e[a] = h;
            let fd = (project(&(pt + e), &intr).unwrap() - project(&(pt - e), &intr).unwrap()) / (2.0 * h);
            assert_relative_eq!(jpt.column(a).into_owned(), fd, epsilon = 1e-5);
        }
        let base = intr.to_array();
        for a in 0..INTRINSIC_COUNT {
            let (mut p, mut m) = (base, base);
            p[a] += h;
            m[a] -= h;
            let fd = (project(&pt, &Intrinsics::from_array(&p)).unwrap()
                - project(&pt, &Intrinsics::from_array(&m)).unwrap())
                / (2.0 * h);
            assert_relative_eq!(jin.column(a).into_owned(), fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn undistort_examples() {
        let i = Intrinsics::pinhole(975.0, 960.0, 700.0, 247.0);
        let n = undistort(Point2::new(895.0, 343.0), &i).unwrap();
        assert_relative_eq!(n, Vector2::new(0.2, 0.1), epsilon = 1e-15);
        let k = kitti_like();
        assert_eq!(undistort(Point2::new(700.0, 247.0), &k).unwrap(), Vector2::zeros());
        for &(u, v) in &[(0.0, 0.0), (1391.0, 511.0), (100.0, 400.0)] {
            let n = undistort(Point2::new(u, v), &k).unwrap();
            let back = project(&Vector3::new(n.x, n.y, 1.0), &k).unwrap();
            assert_relative_eq!(back, Point2::new(u, v), epsilon = 1e-6);
        }
    }

    #[test]
    fn undistort_reports_divergence() {
        let mut k = Intrinsics::pinhole(1.0, 1.0, 0.0, 0.0);
        k.k = [-3.0, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(
            undistort_normalized(Vector2::new(0.9, 0.0), &k),
            Err(Error::Convergence { .. })
        ));
    }

    #[test]
    fn pose_algebra() {
        let a = Pose::from_parts(Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let b = Pose::from_parts(Vector3::new(-0.3, 0.05, 0.2), Vector3::new(-0.5, 0.0, 0.7));
        let p = Vector3::new(0.3, 0.4, -1.2);
        assert_relative_eq!(a.compose(&b).transform(&p), a.transform(&b.transform(&p)), epsilon = 1e-12);
        assert_relative_eq!(a.inverse().transform(&a.transform(&p)), p, epsilon = 1e-12);
        let m = a.compose(&b).rotation.into_inner();
        assert_relative_eq!(m.transpose() * m, Matrix3::identity(), epsilon = 1e-10);
        let back = Pose::from_matrix3x4(&a.matrix3x4());
        assert_relative_eq!(back.rotation.into_inner(), a.rotation.into_inner(), epsilon = 1e-12);
    }

    #[test]
    fn rig_baseline_and_pitch() {
        let rig = StereoRig {
            left: kitti_like(),
            right: kitti_like(),
            right_from_left: Pose::new(Rotation3::from_euler_angles(0.0, 0.01, 0.0), Vector3::new(-0.539, 0.0, 0.0)),
        };
        assert_relative_eq!(rig.baseline(), 0.539, epsilon = 1e-15);
        assert_relative_eq!(rig.pitch(), 0.01, epsilon = 1e-15);
    }

    fn pinhole_rig(rot: Rotation3<f64>, b: f64) -> StereoRig {
        let i = Intrinsics::pinhole(975.0, 975.0, 695.5, 255.5);
        StereoRig {
            left: i,
            right: i,
            right_from_left: Pose::new(rot, Vector3::new(-b, 0.0, 0.0)),
        }
    }

    #[test]
    fn rectify_identity_rig() {
        let r = stereo_rectify(&pinhole_rig(Rotation3::identity(), 0.539), 1392, 512).unwrap();
        assert_relative_eq!(r.left.r_rect.into_inner(), Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(r.right.r_rect.into_inner(), Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(r.left.p_rect[(0, 2)], 695.5, epsilon = 1e-9);
        assert_relative_eq!(r.right.p_rect[(0, 3)], -975.0 * 0.539, epsilon = 1e-9);
        assert_relative_eq!(r.right.p_rect[(0, 3)], -525.525, epsilon = 1e-9);
        assert!(stereo_rectify(&pinhole_rig(Rotation3::identity(), 0.0), 1392, 512).is_err());
    }

    #[test]
    fn rectified_rows_agree() {
        let mut rig = pinhole_rig(Rotation3::from_euler_angles(0.004, 0.0175, -0.003), 0.539);
        rig.left.k = kitti_like().k;
        rig.right.k = [-0.36, 0.18, 0.0, 0.001, -0.05];
        rig.right_from_left.translation = Vector3::new(-0.539, 0.004, -0.01);
        let r = stereo_rectify(&rig, 1392, 512).unwrap();
        for &x in &[-3.0, -1.0, 0.0, 2.0] {
            for &y in &[-0.8, 0.0, 0.6] {
                let pl = Vector3::new(x, y, 9.0);
                let pr = rig.right_from_left.transform(&pl);
                let ul = r.left.raw_to_rectified(project(&pl, &rig.left).unwrap()).unwrap();
                let ur = r.right.raw_to_rectified(project(&pr, &rig.right).unwrap()).unwrap();
                assert!((ul.y - ur.y).abs() < 1e-6, "rows {} {}", ul.y, ur.y);
                assert!(ul.x > ur.x);
            }
        }
    }

    #[test]
    fn identity_map_and_shift() {
        let i = Intrinsics::pinhole(500.0, 500.0, 31.5, 23.5);
        let calib = CameraCalibration {
            intrinsics: i,
            r_rect: Rotation3::identity(),
            p_rect: Matrix3x4::new(500.0, 0.0, 31.5, 0.0, 0.0, 500.0, 23.5, 0.0, 0.0, 0.0, 1.0, 0.0),
        };
        let map = rectification_map(&calib, 64, 48);
        for v in 0..48 {
            for u in 0..64 {
                let s = map.source[v * 64 + u].unwrap();
                assert_relative_eq!(s, Point2::new(u as f64, v as f64), epsilon = 1e-9);
            }
        }
        let img = FloatImage::from_fn(64, 48, |x, y| (x * 3 + y) as f64 / 300.0);
        let out = remap(&img, &map);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }

        let mut shifted = calib;
        shifted.p_rect[(0, 2)] = 36.5;
        let map = rectification_map(&shifted, 64, 48);
        for v in 0..48 {
            for u in 5..64 {
                let s = map.source[v * 64 + u].unwrap();
                assert_relative_eq!(s.x - u as f64, -5.0, epsilon = 1e-9);
            }
        }
        assert_eq!(remap(&img, &map).get(2, 10), 0.0);
    }

    #[test]
    fn convert_feature_examples() {
        let rig = StereoRig {
            left: kitti_like(),
            right: kitti_like(),
            right_from_left: Pose::new(Rotation3::from_euler_angles(0.0, 0.01, 0.0), Vector3::new(-0.539, 0.0, 0.0)),
        };
        let r = stereo_rectify(&rig, 1392, 512).unwrap();
        for &(u, v) in &[(100.0, 50.0), (700.0, 250.0), (1300.0, 480.0)] {
            let p = Point2::new(u, v);
            let q = convert_feature(p, &r.left, &r.left).unwrap();
            assert_relative_eq!(q, p, epsilon = 1e-6);
        }

        let i = Intrinsics::pinhole(975.0, 975.0, 700.0, 247.0);
        let p_rect = Matrix3x4::new(975.0, 0.0, 700.0, 0.0, 0.0, 975.0, 247.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let default = CameraCalibration {
            intrinsics: i,
            r_rect: Rotation3::identity(),
            p_rect,
        };
        let mut custom = default;
        custom.intrinsics.cu += 5.0;
        for &(u, v) in &[(10.0, 20.0), (650.0, 300.0)] {
            let q = convert_feature(Point2::new(u, v), &default, &custom).unwrap();
            assert_relative_eq!(q.x, u - 5.0, epsilon = 1e-9);
            assert_relative_eq!(q.y, v, epsilon = 1e-9);
        }
    }

    #[test]
    fn orthonormalize_recovers_rotation() {
        let r = Rotation3::from_euler_angles(0.2, -0.4, 1.1);
        let noisy = r.into_inner() + Matrix3::new(1e-4, 0.0, -2e-4, 0.0, 3e-4, 0.0, 1e-4, 0.0, 0.0);
        let o = orthonormalize(&noisy).into_inner();
        assert_relative_eq!(o.transpose() * o, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(o.determinant(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(o, r.into_inner(), epsilon = 1e-3);
    }
}
