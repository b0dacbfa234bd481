use std::fmt::Write;

use nalgebra::Point2;

use super::parse_floats;
use crate::error::{Error, Result};

/// One `u v` feature per line; `#` starts a comment line.
pub fn read_features(text: &str) -> Result<Vec<Point2<f64>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v = parse_floats(t, i + 1, "feature")?;
        if v.len() != 2 {
            return Err(Error::parse(i + 1, format!("feature has {} values, expected 2", v.len())));
        }
        out.push(Point2::new(v[0], v[1]));
    }
    Ok(out)
}

pub fn write_features(points: &[Point2<f64>]) -> String {
    let mut out = String::new();
    for p in points {
        writeln!(out, "{:.6} {:.6}", p.x, p.y).unwrap();
    }
    out
}
