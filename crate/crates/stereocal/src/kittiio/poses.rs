use nalgebra::{Matrix3, Matrix3x4, Rotation3, Vector3};
use stereocal_core::cameramodel::Pose;
use stereocal_core::refine::Trajectory;

use super::{join_sig, parse_floats};
use crate::error::{Error, Result};
use crate::kittiio::ORTHONORMAL_TOLERANCE;

pub const POSE_DIGITS: usize = 9;

/// One `[R | t]` per line, 12 row-major values. Rotations are kept exactly as
/// written after checking orthonormality.
pub fn read_poses(text: &str) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_floats(line, i + 1, "pose")?;
        if v.len() != 12 {
            return Err(Error::parse(i + 1, format!("pose has {} values, expected 12", v.len())));
        }
        let m = Matrix3x4::from_row_slice(&v);
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let dev = (r.transpose() * r - Matrix3::identity()).amax();
        if !(dev <= ORTHONORMAL_TOLERANCE) || !(r.determinant() > 0.0) {
            return Err(Error::parse(i + 1, format!("rotation is not orthonormal (deviation {dev:e})")));
        }
        poses.push(Pose::new(Rotation3::from_matrix_unchecked(r), Vector3::new(v[3], v[7], v[11])));
    }
    Ok(Trajectory::new(poses))
}

pub fn write_trajectory(traj: &Trajectory) -> String {
    let mut out = String::new();
    for p in &traj.poses {
        let m = p.matrix3x4();
        let v: Vec<f64> = m.transpose().iter().copied().collect();
        out.push_str(&join_sig(&v, POSE_DIGITS));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_line_round_trips() {
        let line = "1 0 0 0 0 1 0 0 0 0 1 0\n";
        let t = read_poses(line).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.poses[0], Pose::identity());
        assert_eq!(write_trajectory(&t), line);
    }

    #[test]
    fn empty_file_is_empty_trajectory() {
        assert!(read_poses("").unwrap().is_empty());
        assert!(read_poses("\n\n").unwrap().is_empty());
    }

    #[test]
    fn three_pose_file_has_orthonormal_rotations() {
        let text = "1.000000e+00 9.043680e-12 2.326809e-11 5.551115e-17 9.043683e-12 1.000000e+00 2.392370e-10 3.330669e-16 2.326810e-11 2.392370e-10 9.999999e-01 -4.440892e-16
9.999978e-01 5.272628e-04 -2.066935e-03 -4.690294e-02 -5.296506e-04 9.999992e-01 -1.154865e-03 -2.839928e-02 2.066324e-03 1.155958e-03 9.999971e-01 8.586941e-01
9.999910e-01 1.048972e-03 -4.131348e-03 -9.374345e-02 -1.058514e-03 9.999968e-01 -2.308104e-03 -5.676064e-02 4.128913e-03 2.312456e-03 9.999887e-01 1.716275e+00
";
        let t = read_poses(text).unwrap();
        assert_eq!(t.len(), 3);
        t.validate(1e-6).unwrap();
        assert_eq!(t.poses[2].translation.z, 1.716275);
        let again = read_poses(&write_trajectory(&t)).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn wrong_token_count_reports_line() {
        let err = read_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(read_poses("1 0 0 0 0 1 0 0 0 0 1 zero\n").is_err());
        assert!(read_poses("1 0.1 0 0 0 1 0 0 0 0 1 0\n").is_err());
    }
}
