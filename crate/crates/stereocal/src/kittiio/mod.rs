//! On-disk formats: KITTI calibration and pose files, images, board dumps,
//! solution files, CSV tables, feature lists and debug overlays.

mod boards;
mod calib;
mod features;
mod image;
mod overlay;
mod poses;
mod solution;
mod tables;

pub use boards::{read_boards, write_boards, BoardDump};
pub use calib::{expected_count, CalibEntry, CalibValue, KittiCalibFile, CALIB_DIGITS, ORTHONORMAL_TOLERANCE};
pub use features::{read_features, write_features};
pub use image::{load_image, save_png};
pub use overlay::{class_color, edge_overlay, save_overlay, segment_listing};
pub use poses::{read_poses, write_trajectory, POSE_DIGITS};
pub use solution::{read_solution, write_solution, SolutionFile, SOLUTION_DIGITS};
pub use tables::{write_score_table, write_sensitivity_csv, SCORE_COLUMNS};

use std::path::Path;

use crate::error::{Error, Result};

/// Shortest decimal that rounds to the same `digits` significant digits.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{:.*e}", digits.max(1) - 1, v).parse().expect("formatted float parses");
    let a = rounded.abs();
    if (1e-4..1e15).contains(&a) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

pub(crate) fn join_sig(values: &[f64], digits: usize) -> String {
    values.iter().map(|v| format_sig(*v, digits)).collect::<Vec<_>>().join(" ")
}

pub(crate) fn parse_floats(text: &str, line: usize, what: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::parse(line, format!("{what}: `{t}` is not a number"))))
        .collect()
}

/// A `KEY: rest` line, 1-based line number.
pub(crate) struct KeyLine<'a> {
    pub line: usize,
    pub key: &'a str,
    pub rest: &'a str,
}

/// Splits `KEY: rest` lines. Blank lines are skipped and, when `comments` is
/// set, so are lines starting with `#`.
pub(crate) fn key_lines(text: &str, comments: bool) -> Result<Vec<KeyLine<'_>>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() || (comments && trimmed.starts_with('#')) {
            continue;
        }
        let Some((key, rest)) = line.split_once(':') else {
            return Err(Error::parse(i + 1, format!("expected `KEY: values`, got `{trimmed}`")));
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::parse(i + 1, format!("malformed key `{key}`")));
        }
        out.push(KeyLine { line: i + 1, key, rest });
    }
    Ok(out)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
