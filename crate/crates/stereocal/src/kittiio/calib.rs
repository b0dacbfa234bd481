use nalgebra::{Matrix3, Matrix3x4, Rotation3, Vector3};
use stereocal_core::cameramodel::{orthonormalize, CameraCalibration, Intrinsics, Pose, Rectification, StereoRig};

use super::{join_sig, key_lines, parse_floats};
use crate::error::{Error, Result};

pub const CALIB_DIGITS: usize = 12;
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum CalibValue {
    Numbers(Vec<f64>),
    /// Text after the colon, kept byte for byte.
    Verbatim(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibEntry {
    pub key: String,
    pub value: CalibValue,
}

/// `calib_cam_to_cam.txt` (and odometry `calib.txt`) contents in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KittiCalibFile {
    pub entries: Vec<CalibEntry>,
}

fn camera_suffix(s: &str) -> bool {
    matches!(s, "00" | "01" | "02" | "03")
}

/// Number of values for a known numeric key, `None` for keys kept verbatim.
pub fn expected_count(key: &str) -> Option<usize> {
    if let Some(cam) = key.strip_prefix("S_rect_").or_else(|| key.strip_prefix("R_rect_")) {
        return camera_suffix(cam).then(|| if key.starts_with('S') { 2 } else { 9 });
    }
    if let Some(cam) = key.strip_prefix("P_rect_") {
        return camera_suffix(cam).then_some(12);
    }
    if matches!(key, "P0" | "P1" | "P2" | "P3") {
        return Some(12);
    }
    let (prefix, cam) = key.split_once('_')?;
    if !camera_suffix(cam) {
        return None;
    }
    match prefix {
        "S" => Some(2),
        "K" | "R" => Some(9),
        "D" => Some(5),
        "T" => Some(3),
        _ => None,
    }
}

fn key(prefix: &str, cam: usize) -> String {
    format!("{prefix}_{cam:02}")
}

impl KittiCalibFile {
    /// Parses and validates a calibration file.
    pub fn read(text: &str) -> Result<Self> {
        let mut file = KittiCalibFile::default();
        for kl in key_lines(text, false)? {
            let value = match expected_count(kl.key) {
                Some(n) => {
                    let v = parse_floats(kl.rest, kl.line, kl.key)?;
                    if v.len() != n {
                        return Err(Error::parse(kl.line, format!("{} has {} values, expected {n}", kl.key, v.len())));
                    }
                    CalibValue::Numbers(v)
                }
                None => CalibValue::Verbatim(kl.rest.to_string()),
            };
            if file.entries.iter().any(|e| e.key == kl.key) {
                return Err(Error::parse(kl.line, format!("duplicate key {}", kl.key)));
            }
            file.entries.push(CalibEntry { key: kl.key.to_string(), value });
        }
        file.validate()?;
        Ok(file)
    }

    /// Serializes numbers at [`CALIB_DIGITS`] significant digits.
    pub fn write(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            match &e.value {
                CalibValue::Numbers(v) => {
                    out.push_str(&e.key);
                    out.push_str(": ");
                    out.push_str(&join_sig(v, CALIB_DIGITS));
                }
                CalibValue::Verbatim(s) => {
                    out.push_str(&e.key);
                    out.push(':');
                    out.push_str(s);
                }
            }
            out.push('\n');
        }
        out
    }

    /// Positive `K` diagonals and orthonormal `R` blocks.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            let CalibValue::Numbers(v) = &e.value else { continue };
            if e.key.starts_with("K_") && !(v[0] > 0.0 && v[4] > 0.0 && v[8] > 0.0) {
                return Err(Error::Data(format!("{}: diagonal must be positive", e.key)));
            }
            if (e.key.starts_with("R_") || e.key.starts_with("R_rect_")) && v.len() == 9 {
                let m = Matrix3::from_row_slice(v);
                let dev = (m.transpose() * m - Matrix3::identity()).amax();
                if !(dev <= ORTHONORMAL_TOLERANCE) {
                    return Err(Error::Data(format!("{}: rotation is not orthonormal (deviation {dev:e})", e.key)));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.iter().find(|e| e.key == key).and_then(|e| match &e.value {
            CalibValue::Numbers(v) => Some(v.as_slice()),
            CalibValue::Verbatim(_) => None,
        })
    }

    pub fn get_verbatim(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.key == key).and_then(|e| match &e.value {
            CalibValue::Verbatim(s) => Some(s.as_str()),
            CalibValue::Numbers(_) => None,
        })
    }

    fn require(&self, key: &str) -> Result<&[f64]> {
        self.get(key).ok_or_else(|| Error::Data(format!("calibration has no {key}")))
    }

    /// Replaces or appends a numeric entry.
    pub fn set(&mut self, key: &str, values: Vec<f64>) -> Result<()> {
        if let Some(n) = expected_count(key) {
            if n != values.len() {
                return Err(Error::Data(format!("{key} takes {n} values, got {}", values.len())));
            }
        }
        self.put(key, CalibValue::Numbers(values));
        Ok(())
    }

    pub fn set_verbatim(&mut self, key: &str, text: &str) {
        self.put(key, CalibValue::Verbatim(text.to_string()));
    }

    fn put(&mut self, key: &str, value: CalibValue) {
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value,
            None => self.entries.push(CalibEntry { key: key.to_string(), value }),
        }
    }

    pub fn intrinsics(&self, cam: usize) -> Result<Intrinsics> {
        let k = self.require(&key("K", cam))?;
        let d = self.require(&key("D", cam))?;
        Ok(Intrinsics {
            fx: k[0],
            fy: k[4],
            cu: k[2],
            cv: k[5],
            k: [d[0], d[1], d[2], d[3], d[4]],
        })
    }

    /// Camera-0 coordinates to camera `cam` coordinates.
    pub fn extrinsics(&self, cam: usize) -> Result<Pose> {
        let r = self.require(&key("R", cam))?;
        let t = self.require(&key("T", cam))?;
        Ok(Pose::new(orthonormalize(&Matrix3::from_row_slice(r)), Vector3::from_row_slice(t)))
    }

    pub fn rig(&self, left: usize, right: usize) -> Result<StereoRig> {
        let el = self.extrinsics(left)?;
        let er = self.extrinsics(right)?;
        Ok(StereoRig {
            left: self.intrinsics(left)?,
            right: self.intrinsics(right)?,
            right_from_left: er.compose(&el.inverse()),
        })
    }

    /// Raw image size `S_xx` as (width, height).
    pub fn image_size(&self, cam: usize) -> Option<(usize, usize)> {
        let s = self.get(&key("S", cam))?;
        (s[0] >= 1.0 && s[1] >= 1.0).then(|| (s[0].round() as usize, s[1].round() as usize))
    }

    /// Rectification of camera `cam` from `R_rect_xx` and `P_rect_xx`.
    pub fn rectified(&self, cam: usize) -> Result<CameraCalibration> {
        let r = self.require(&format!("R_rect_{cam:02}"))?;
        let p = self.require(&format!("P_rect_{cam:02}"))?;
        Ok(CameraCalibration {
            intrinsics: self.intrinsics(cam)?,
            r_rect: Rotation3::from_matrix_unchecked(Matrix3::from_row_slice(r)),
            p_rect: Matrix3x4::from_row_slice(p),
        })
    }

    /// Stereo baseline in meters encoded in `P_rect_xx`.
    pub fn rectified_baseline(&self, cam: usize) -> Result<f64> {
        let p = self.require(&format!("P_rect_{cam:02}"))?;
        Ok(-p[3] / p[0])
    }

    /// Cameras 00 and 01 of a calibrated rig and its rectification.
    pub fn from_rig(rig: &StereoRig, rect: &Rectification, width: usize, height: usize) -> Self {
        let mut f = KittiCalibFile::default();
        f.set_verbatim("calib_time", " stereocal");
        let views = [(&rig.left, Pose::identity(), &rect.left), (&rig.right, rig.right_from_left, &rect.right)];
        for (cam, (intr, ext, rc)) in views.into_iter().enumerate() {
            let size = vec![width as f64, height as f64];
            let k = intr.camera_matrix();
            let sets: [(String, Vec<f64>); 8] = [
                (key("S", cam), size.clone()),
                (key("K", cam), row_major3(&k)),
                (key("D", cam), intr.k.to_vec()),
                (key("R", cam), row_major3(ext.rotation.matrix())),
                (key("T", cam), ext.translation.iter().copied().collect()),
                (format!("S_rect_{cam:02}"), size),
                (format!("R_rect_{cam:02}"), row_major3(rc.r_rect.matrix())),
                (format!("P_rect_{cam:02}"), row_major34(&rc.p_rect)),
            ];
            for (k, v) in sets {
                f.set(&k, v).expect("value counts match the keys");
            }
        }
        f
    }

    /// Odometry-style `calib.txt` with the rectified projections `P0` and `P1`.
    pub fn odometry(rect: &Rectification) -> Self {
        let mut f = KittiCalibFile::default();
        f.set("P0", row_major34(&rect.left.p_rect)).expect("12 values");
        f.set("P1", row_major34(&rect.right.p_rect)).expect("12 values");
        f
    }
}

fn row_major3(m: &Matrix3<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

fn row_major34(m: &Matrix3x4<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use stereocal_core::cameramodel::stereo_rectify;
    use stereocal_core::synthoracle::{kitti_like_rig, KITTI_HEIGHT, KITTI_WIDTH};

    const SAMPLE: &str = "calib_time: 09-Jan-2012 13:57:47
corner_dist: 9.950000e-02
S_00: 1.392000e+03 5.120000e+02
K_00: 9.842439e+02 0.000000e+00 6.900000e+02 0.000000e+00 9.808141e+02 2.331966e+02 0.000000e+00 0.000000e+00 1.000000e+00
D_00: -3.728755e-01 2.037299e-01 2.219027e-03 1.383707e-03 -7.233722e-02
R_00: 1.000000e+00 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00
T_00: 2.573699e-16 -1.059758e-16 1.614870e-16
S_rect_00: 1.242000e+03 3.750000e+02
R_rect_00: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
P_rect_00: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
S_01: 1.392000e+03 5.120000e+02
K_01: 9.895267e+02 0.000000e+00 7.020000e+02 0.000000e+00 9.878386e+02 2.455590e+02 0.000000e+00 0.000000e+00 1.000000e+00
D_01: -3.644661e-01 1.790019e-01 1.148107e-03 -6.298563e-04 -5.314062e-02
R_01: 9.993513e-01 1.860866e-02 -3.083487e-02 -1.887662e-02 9.997863e-01 -8.421873e-03 3.067156e-02 8.998467e-03 9.994890e-01
T_01: -5.370000e-01 4.822061e-03 -1.252488e-02
S_rect_01: 1.242000e+03 3.750000e+02
R_rect_01: 9.996878e-01 -8.976826e-03 2.331651e-02 8.876121e-03 9.999508e-01 4.418952e-03 -2.335503e-02 -4.210612e-03 9.997184e-01
P_rect_01: 7.215377e+02 0.000000e+00 6.095593e+02 -3.875744e+02 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
";

    #[test]
    fn zero_distortion_line() {
        let f = KittiCalibFile::read("D_00: 0 0 0 0 0\n").unwrap();
        assert_eq!(f.get("D_00").unwrap(), &[0.0; 5]);
    }

    #[test]
    fn round_trip_preserves_numbers_and_unknown_keys() {
        let f = KittiCalibFile::read(SAMPLE).unwrap();
        let text = f.write();
        let g = KittiCalibFile::read(&text).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.write(), text);
        assert_eq!(g.get_verbatim("calib_time"), Some(" 09-Jan-2012 13:57:47"));
        assert!(text.starts_with("calib_time: 09-Jan-2012 13:57:47\ncorner_dist: 9.950000e-02\n"));
        assert_eq!(g.get("K_00").unwrap()[0], 984.2439);
    }

    #[test]
    fn wrong_count_names_key_and_line() {
        let err = KittiCalibFile::read("S_00: 1 2\nT_01: 1 2\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{msg}");
        assert!(msg.contains("T_01"), "{msg}");
    }

    #[test]
    fn rejects_skewed_rotation_and_bad_focal() {
        assert!(KittiCalibFile::read("R_00: 1 0.01 0 0 1 0 0 0 1\n").is_err());
        assert!(KittiCalibFile::read("K_00: 0 0 1 0 1 1 0 0 1\n").is_err());
        assert!(KittiCalibFile::read("D_00: 0 0 x 0 0\n").is_err());
    }

    #[test]
    fn sample_baseline_and_rig() {
        let f = KittiCalibFile::read(SAMPLE).unwrap();
        let b = f.rectified_baseline(1).unwrap();
        assert!((0.537..=0.54).contains(&b), "{b}");
        let rig = f.rig(0, 1).unwrap();
        assert_relative_eq!(rig.baseline(), 0.5372, epsilon = 1e-3);
        assert_eq!(rig.left.k[0], -3.728755e-1);
        assert_eq!(f.image_size(0), Some((1392, 512)));
        let rc = f.rectified(1).unwrap();
        assert_eq!(rc.p_rect[(0, 3)], -3.875744e2);
    }

    #[test]
    fn rig_file_reproduces_rig() {
        let rig = kitti_like_rig();
        let rect = stereo_rectify(&rig, KITTI_WIDTH, KITTI_HEIGHT).unwrap();
        let f = KittiCalibFile::read(&KittiCalibFile::from_rig(&rig, &rect, KITTI_WIDTH, KITTI_HEIGHT).write()).unwrap();
        let back = f.rig(0, 1).unwrap();
        assert_relative_eq!(back.right_from_left.translation, rig.right_from_left.translation, epsilon = 1e-12);
        assert_relative_eq!(back.right_from_left.rotation.matrix(), rig.right_from_left.rotation.matrix(), epsilon = 1e-11);
        assert_relative_eq!(f.rectified_baseline(1).unwrap(), rig.baseline(), epsilon = 1e-9);
        assert_eq!(back.left, rig.left);
        let odo = KittiCalibFile::read(&KittiCalibFile::odometry(&rect).write()).unwrap();
        assert_eq!(odo.get("P1").unwrap().len(), 12);
    }
}
