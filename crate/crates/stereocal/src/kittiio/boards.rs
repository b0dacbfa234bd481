use std::fmt::Write;

use nalgebra::Point2;
use stereocal_core::boardfinder::Checkerboard;

use crate::error::{Error, Result};

/// Boards of one image plus the image size recorded in the dump.
#[derive(Clone, Debug, PartialEq)]
pub struct BoardDump {
    pub image_size: Option<(usize, usize)>,
    pub boards: Vec<Checkerboard>,
}

/// Board dump: optional `# image <w> <h>` line, then per board a header
/// `board <id> rows <r> cols <c>` and one `u v` line per corner in snake
/// order with 6 decimals. Blocks are separated by blank lines.
pub fn write_boards(boards: &[Checkerboard], image_size: Option<(usize, usize)>) -> String {
    let mut out = String::new();
    if let Some((w, h)) = image_size {
        writeln!(out, "# image {w} {h}").unwrap();
    }
    for (i, b) in boards.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        writeln!(out, "board {} rows {} cols {}", b.image_id, b.rows, b.cols).unwrap();
        for p in &b.corners {
            writeln!(out, "{:.6} {:.6}", p.x, p.y).unwrap();
        }
    }
    out
}

fn parse_header(line: &str, n: usize) -> Result<(usize, usize, usize)> {
    let t: Vec<&str> = line.split_whitespace().collect();
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(n, format!("bad board header `{line}`")));
    match t.as_slice() {
        ["board", id, "rows", r, "cols", c] => Ok((num(id)?, num(r)?, num(c)?)),
        _ => Err(Error::parse(n, format!("expected `board <id> rows <r> cols <c>`, got `{line}`"))),
    }
}

pub fn read_boards(text: &str) -> Result<BoardDump> {
    let mut image_size = None;
    let mut boards = Vec::new();
    let mut current: Option<(usize, usize, usize, usize, Vec<Point2<f64>>)> = None;
    let finish = |cur: (usize, usize, usize, usize, Vec<Point2<f64>>), end: usize| -> Result<Checkerboard> {
        let (id, rows, cols, start, corners) = cur;
        if corners.len() != rows * cols {
            return Err(Error::parse(
                end,
                format!("board {id} at line {start} ends after {} of {} corners", corners.len(), rows * cols),
            ));
        }
        let mut b = Checkerboard::new(rows, cols, corners).map_err(|e| Error::parse(start, e.to_string()))?;
        b.image_id = id;
        Ok(b)
    };
    let mut last = 0;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        last = n;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            let t: Vec<&str> = c.split_whitespace().collect();
            if let ["image", w, h] = t.as_slice() {
                let w = w.parse().map_err(|_| Error::parse(n, "bad image width"))?;
                let h = h.parse().map_err(|_| Error::parse(n, "bad image height"))?;
                image_size = Some((w, h));
            }
            continue;
        }
        if line.starts_with("board") {
            if let Some(cur) = current.take() {
                boards.push(finish(cur, n)?);
            }
            let (id, r, c) = parse_header(line, n)?;
            current = Some((id, r, c, n, Vec::with_capacity(r * c)));
            continue;
        }
        let Some(cur) = current.as_mut() else {
            return Err(Error::parse(n, "corner line before any board header"));
        };
        let v: Vec<f64> = super::parse_floats(line, n, "corner")?;
        if v.len() != 2 {
            return Err(Error::parse(n, format!("corner line has {} values, expected 2", v.len())));
        }
        if cur.4.len() == cur.1 * cur.2 {
            return Err(Error::parse(n, format!("board {} has more than {} corners", cur.0, cur.1 * cur.2)));
        }
        cur.4.push(Point2::new(v[0], v[1]));
    }
    if let Some(cur) = current.take() {
        boards.push(finish(cur, last)?);
    }
    Ok(BoardDump { image_size, boards })
}
