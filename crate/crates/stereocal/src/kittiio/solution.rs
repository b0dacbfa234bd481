use std::fmt::Write;

use nalgebra::{Matrix3, Rotation3, Vector3};
use stereocal_core::calibrate::{CalibrationSolution, FixedParams};
use stereocal_core::cameramodel::{Intrinsics, Pose, StereoRig, INTRINSIC_COUNT};

use super::{join_sig, key_lines, parse_floats};
use crate::error::{Error, Result};

/// Enough digits to restore every value exactly.
pub const SOLUTION_DIGITS: usize = 17;

/// Contents of a solution file.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionFile {
    pub rig: StereoRig,
    pub baseline: f64,
    pub fixed: FixedParams,
    pub rms: f64,
    /// Per board; `None` for boards left out.
    pub board_rms: Vec<Option<f64>>,
}

fn fixed_names(f: &FixedParams) -> String {
    let names: Vec<&str> = [(f.fx, "fx"), (f.cu, "cu"), (f.cv, "cv"), (f.baseline, "baseline")]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
    if names.is_empty() {
        "none".into()
    } else {
        names.join(" ")
    }
}

/// Key-value solution file: both intrinsic sets (`fx fy cu cv k1..k5`), the
/// right-from-left rotation (row-major) and translation, baseline, per-board
/// and overall RMS.
pub fn write_solution(sol: &CalibrationSolution) -> String {
    let s = &sol.state;
    let mut out = String::new();
    let kv = |out: &mut String, k: &str, v: &[f64]| writeln!(out, "{k}: {}", join_sig(v, SOLUTION_DIGITS)).unwrap();
    kv(&mut out, "left_intrinsics", &s.left.to_array());
    kv(&mut out, "right_intrinsics", &s.right.to_array());
    let r: Vec<f64> = s.right_from_left.rotation.matrix().transpose().iter().copied().collect();
    kv(&mut out, "rotation", &r);
    kv(&mut out, "translation", s.right_from_left.translation.as_slice());
    kv(&mut out, "baseline", &[s.baseline]);
    writeln!(out, "fixed: {}", fixed_names(&s.fixed)).unwrap();
    let board_rms: Vec<f64> = sol.board_rms.iter().map(|r| r.unwrap_or(f64::NAN)).collect();
    kv(&mut out, "board_rms", &board_rms);
    let excluded: Vec<String> = sol.excluded.iter().enumerate().filter(|(_, &e)| e).map(|(i, _)| i.to_string()).collect();
    writeln!(out, "excluded: {}", if excluded.is_empty() { "none".into() } else { excluded.join(" ") }).unwrap();
    kv(&mut out, "rms", &[sol.rms]);
    writeln!(out, "corners: {}", sol.corner_count()).unwrap();
    writeln!(out, "iterations: {}", sol.report.iterations).unwrap();
    writeln!(out, "termination: {:?}", sol.report.termination).unwrap();
    out
}

pub fn read_solution(text: &str) -> Result<SolutionFile> {
    let lines = key_lines(text, true)?;
    let find = |k: &str| lines.iter().find(|l| l.key == k).ok_or_else(|| Error::Data(format!("solution has no {k}")));
    let nums = |k: &str, n: Option<usize>| -> Result<Vec<f64>> {
        let l = find(k)?;
        let v = parse_floats(l.rest, l.line, k)?;
        match n {
            Some(n) if v.len() != n => Err(Error::parse(l.line, format!("{k} has {} values, expected {n}", v.len()))),
            _ => Ok(v),
        }
    };
    let intr = |k: &str| -> Result<Intrinsics> {
        let v = nums(k, Some(INTRINSIC_COUNT))?;
        Ok(Intrinsics::from_array(&v.try_into().expect("length checked")))
    };
    let r = nums("rotation", Some(9))?;
    let t = nums("translation", Some(3))?;
    let fixed_line = find("fixed")?;
    let mut fixed = FixedParams::default();
    for name in fixed_line.rest.split_whitespace() {
        match name {
            "fx" => fixed.fx = true,
            "cu" => fixed.cu = true,
            "cv" => fixed.cv = true,
            "baseline" => fixed.baseline = true,
            "none" => {}
            other => return Err(Error::parse(fixed_line.line, format!("unknown fixed parameter `{other}`"))),
        }
    }
    Ok(SolutionFile {
        rig: StereoRig {
            left: intr("left_intrinsics")?,
            right: intr("right_intrinsics")?,
            right_from_left: Pose::new(
                Rotation3::from_matrix_unchecked(Matrix3::from_row_slice(&r)),
                Vector3::from_row_slice(&t),
            ),
        },
        baseline: nums("baseline", Some(1))?[0],
        fixed,
        rms: nums("rms", Some(1))?[0],
        board_rms: nums("board_rms", None)?.into_iter().map(|v| (!v.is_nan()).then_some(v)).collect(),
    })
}
