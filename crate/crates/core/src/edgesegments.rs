//! Edge classification, grouping into square-side segments and robust line
//! fitting.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Point2, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagegrad::EdgeCandidate;
use crate::math;

/// Minimum number of points for a segment to be kept.
pub const MIN_SEGMENT_POINTS: usize = 5;

/// Orientation and polarity of an edge pixel.
///
/// Vertical edges have a gradient along the x axis; `Positive` means the
/// image brightens along +x (vertical) or +y (horizontal).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeClass {
    HorizontalPositive,
    HorizontalNegative,
    VerticalPositive,
    VerticalNegative,
}

impl EdgeClass {
    pub const ALL: [EdgeClass; 4] = [
        EdgeClass::HorizontalPositive,
        EdgeClass::HorizontalNegative,
        EdgeClass::VerticalPositive,
        EdgeClass::VerticalNegative,
    ];

    /// Classifies a gradient direction in radians. A direction exactly 45 deg
    /// off an axis is assigned to the vertical classes.
    pub fn from_direction(direction: f64) -> EdgeClass {
        let a = math::wrap_angle(direction);
        let quarter = math::PI / 4.0;
        if a.abs() <= quarter {
            EdgeClass::VerticalPositive
        } else if a.abs() >= 3.0 * quarter {
            EdgeClass::VerticalNegative
        } else if a > 0.0 {
            EdgeClass::HorizontalPositive
        } else {
            EdgeClass::HorizontalNegative
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn is_horizontal(self) -> bool {
        matches!(self, EdgeClass::HorizontalPositive | EdgeClass::HorizontalNegative)
    }

    #[inline]
    pub fn is_positive(self) -> bool {
        matches!(self, EdgeClass::HorizontalPositive | EdgeClass::VerticalPositive)
    }
}

pub fn classify(candidate: &EdgeCandidate) -> EdgeClass {
    EdgeClass::from_direction(candidate.direction)
}

/// Ordered chain of same-class edge points covering one square side.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSegment {
    pub class: EdgeClass,
    pub points: Vec<Point2<f64>>,
    /// Gradient direction of each point.
    pub directions: Vec<f64>,
    /// Source pixel of each point.
    pub pixels: Vec<[usize; 2]>,
    pub mean_direction: f64,
    /// Arc length of the point chain in pixels.
    pub length: f64,
}

impl EdgeSegment {
    pub fn first(&self) -> Point2<f64> {
        self.points[0]
    }

    pub fn last(&self) -> Point2<f64> {
        self.points[self.points.len() - 1]
    }

    /// Endpoint `0` (first) or `1` (last).
    pub fn endpoint(&self, end: usize) -> Point2<f64> {
        if end == 0 {
            self.first()
        } else {
            self.last()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Connected components of 8-adjacent same-class candidates, ordered along
/// their dominant axis. Components with fewer than `min_points` members are
/// dropped.
pub fn group_segments(candidates: &[EdgeCandidate], min_points: usize) -> Vec<EdgeSegment> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let w = candidates.iter().map(|c| c.pixel[0]).max().unwrap() + 2;
    let h = candidates.iter().map(|c| c.pixel[1]).max().unwrap() + 2;
    let mut grid: Vec<u32> = vec![u32::MAX; w * h];
    let classes: Vec<EdgeClass> = candidates.iter().map(classify).collect();
    for (i, c) in candidates.iter().enumerate() {
        grid[c.pixel[1] * w + c.pixel[0]] = i as u32;
    }

    let mut visited = vec![false; candidates.len()];
    let mut segments = Vec::new();
    let mut stack = Vec::new();
    for start in 0..candidates.len() {
        if visited[start] {
            continue;
        }
        let class = classes[start];
        visited[start] = true;
        stack.clear();
        stack.push(start);
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(i);
            let [x, y] = candidates[i].pixel;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let j = grid[ny as usize * w + nx as usize];
                    if j != u32::MAX && !visited[j as usize] && classes[j as usize] == class {
                        visited[j as usize] = true;
                        stack.push(j as usize);
                    }
                }
            }
        }
        if members.len() < min_points {
            continue;
        }
        let horizontal = class.is_horizontal();
        members.sort_by_key(|&i| {
            let [x, y] = candidates[i].pixel;
            if horizontal {
                (x, y)
            } else {
                (y, x)
            }
        });
        let points: Vec<Point2<f64>> = members.iter().map(|&i| candidates[i].position).collect();
        let directions: Vec<f64> = members.iter().map(|&i| candidates[i].direction).collect();
        let pixels = members.iter().map(|&i| candidates[i].pixel).collect();
        let (s, c) = directions
            .iter()
            .fold((0.0, 0.0), |(s, c), d| (s + math::sin(*d), c + math::cos(*d)));
        let length = points.windows(2).map(|p| (p[1] - p[0]).norm()).sum();
        segments.push(EdgeSegment {
            class,
            points,
            directions,
            pixels,
            mean_direction: math::atan2(s, c),
            length,
        });
    }
    segments
}

/// Line `normal . x = offset` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub normal: Vector2<f64>,
    pub offset: f64,
}

impl Line {
    /// Builds a line from any nonzero normal; the result is canonicalized so
    /// that the larger-magnitude normal component is positive.
    pub fn new(normal: Vector2<f64>, offset: f64) -> Option<Line> {
        let n = normal.norm();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        let (mut normal, mut offset) = (normal / n, offset / n);
        let dominant = if normal.x.abs() >= normal.y.abs() {
            normal.x
        } else {
            normal.y
        };
        if dominant < 0.0 {
            normal = -normal;
            offset = -offset;
        }
        Some(Line { normal, offset })
    }

    pub fn through(a: Point2<f64>, b: Point2<f64>) -> Option<Line> {
        let d = b - a;
        let normal = Vector2::new(-d.y, d.x);
        Line::new(normal, normal.dot(&a.coords))
    }

    /// Signed distance of a point to the line.
    #[inline]
    pub fn signed_distance(&self, p: &Point2<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    #[inline]
    pub fn distance(&self, p: &Point2<f64>) -> f64 {
        self.signed_distance(p).abs()
    }

    /// Unit direction along the line.
    pub fn direction(&self) -> Vector2<f64> {
        Vector2::new(-self.normal.y, self.normal.x)
    }
}

/// Total-least-squares line through a point set.
pub fn fit_line_tls(points: &[Point2<f64>]) -> Option<Line> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector2::zeros(), |acc, p| acc + p.coords) / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p.coords - centroid;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    if sxx + syy <= 0.0 {
        return None;
    }
    // Principal axis angle; the normal is perpendicular to it.
    let theta = 0.5 * math::atan2(2.0 * sxy, sxx - syy);
    let normal = Vector2::new(-math::sin(theta), math::cos(theta));
    Line::new(normal, normal.dot(&centroid))
}

/// RANSAC settings for [`fit_line_ransac`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    /// Maximum point-to-line distance of an inlier, in pixels.
    pub dist_threshold: f64,
    /// Maximum deviation of an inlier's gradient from the line normal, radians.
    pub angle_tolerance: f64,
    pub iterations: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            dist_threshold: 0.3,
            angle_tolerance: math::to_radians(10.0),
            iterations: 100,
        }
    }
}

/// Line together with the consensus set it was refit on.
#[derive(Clone, Debug, PartialEq)]
pub struct LineFit {
    pub line: Line,
    pub inliers: Vec<bool>,
}

impl LineFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn gradient_fits_normal(direction: f64, normal: &Vector2<f64>, cos_tol: f64) -> bool {
    let g = Vector2::new(math::cos(direction), math::sin(direction));
    g.dot(normal).abs() >= cos_tol
}

/// Robust line fit. A point is an inlier when it lies within
/// `dist_threshold` of the hypothesis and its gradient is perpendicular to
/// the line within `angle_tolerance`. The best hypothesis is refit by total
/// least squares on its inliers.
pub fn fit_line_ransac(
    points: &[Point2<f64>],
    directions: &[f64],
    config: &RansacConfig,
    seed: u64,
) -> Result<LineFit> {
    let n = points.len();
    if n < 2 {
        return Err(Error::DegenerateFit(format!("{n} points, need at least 2")));
    }
    if directions.len() != n {
        return Err(Error::InvalidInput("points and directions differ in length".into()));
    }
    if !(config.dist_threshold > 0.0) || !(config.angle_tolerance > 0.0) {
        return Err(Error::InvalidInput("RANSAC thresholds must be positive".into()));
    }
    let cos_tol = math::cos(config.angle_tolerance);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    let mut mask = vec![false; n];
    for _ in 0..config.iterations.max(1) {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let Some(line) = Line::through(points[i], points[j]) else {
            continue;
        };
        let mut count = 0;
        for k in 0..n {
            let ok = line.distance(&points[k]) < config.dist_threshold
                && gradient_fits_normal(directions[k], &line.normal, cos_tol);
            mask[k] = ok;
            count += ok as usize;
        }
        if best.as_ref().map_or(true, |(c, _)| count > *c) {
            best = Some((count, mask.clone()));
        }
    }
    let (count, inliers) = best.ok_or_else(|| Error::DegenerateFit("all samples coincide".into()))?;
    if 2 * count < n || count < 2 {
        return Err(Error::DegenerateFit(format!("consensus {count} of {n} points is below half")));
    }
    let chosen: Vec<Point2<f64>> = points
        .iter()
        .zip(&inliers)
        .filter(|(_, &ok)| ok)
        .map(|(p, _)| *p)
        .collect();
    let line = fit_line_tls(&chosen).ok_or_else(|| Error::DegenerateFit("inliers coincide".into()))?;
    Ok(LineFit { line, inliers })
}
