//! Checkerboard recovery from edge segments.
//!
//! Corner candidates are clusters of segment endpoints where at least three
//! edge classes meet. Candidates joined by a segment of compatible length are
//! linked in a four-neighbor graph, and each board is read off the graph in a
//! snake pattern: right along the first row, down, left along the second, and
//! so on. Corners are finally refined as the intersection of a horizontal and
//! a vertical line, each fitted robustly to the two collinear segments that
//! meet at the corner.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix2, Point2, Vector2};

use crate::edgesegments::{fit_line_ransac, group_segments, EdgeClass, EdgeSegment, Line, RansacConfig};
use crate::error::{Error, Result};
use crate::imagegrad::{self, FloatImage, GradientField};
use crate::math;

pub const DEFAULT_PROXIMITY: f64 = 3.0;
pub const DEFAULT_LENGTH_RATIO: f64 = 2.0;
pub const DEFAULT_GRADIENT_WINDOW: usize = 9;
pub const MAX_GRADIENT_WINDOW: usize = 11;

/// Reference to one end of a segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentEnd {
    pub segment: usize,
    /// `0` for the first point, `1` for the last.
    pub end: usize,
}

/// Place where segments of at least three classes end close together.
#[derive(Clone, Debug, PartialEq)]
pub struct CornerCandidate {
    pub position: Point2<f64>,
    /// Incident segment per [`EdgeClass::index`].
    pub incident: [Option<SegmentEnd>; 4],
}

impl CornerCandidate {
    pub fn class_count(&self) -> usize {
        self.incident.iter().filter(|i| i.is_some()).count()
    }

    /// Incident segments of horizontal (`true`) or vertical classes.
    pub fn incident_of_axis(&self, horizontal: bool) -> impl Iterator<Item = SegmentEnd> + '_ {
        EdgeClass::ALL
            .iter()
            .filter(move |c| c.is_horizontal() == horizontal)
            .filter_map(move |c| self.incident[c.index()])
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Emits a candidate wherever endpoints of three or four distinct classes fit
/// in a circle of radius `proximity`. Endpoints closer than twice the radius
/// are clustered by single linkage; per class the longest incident segment is
/// kept, the candidate sits at the centroid of the kept endpoints, and every
/// kept endpoint must lie within the radius of it. Output is sorted by `(y, x)`.
pub fn find_corner_candidates(segments: &[EdgeSegment], proximity: f64) -> Vec<CornerCandidate> {
    let ends: Vec<(SegmentEnd, Point2<f64>)> = segments
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .flat_map(|(i, s)| {
            [0usize, 1].into_iter().map(move |end| (SegmentEnd { segment: i, end }, s.endpoint(end)))
        })
        .collect();
    let mut uf = UnionFind::new(ends.len());
    // Sweep along x to keep the pair search near linear.
    let mut order: Vec<usize> = (0..ends.len()).collect();
    order.sort_by(|&a, &b| ends[a].1.x.total_cmp(&ends[b].1.x).then(a.cmp(&b)));
    let link = 2.0 * proximity;
    let r2 = link * link;
    for (k, &a) in order.iter().enumerate() {
        for &b in &order[k + 1..] {
            if ends[b].1.x - ends[a].1.x > link {
                break;
            }
            if ends[a].0.segment != ends[b].0.segment && (ends[a].1 - ends[b].1).norm_squared() <= r2 {
                uf.union(a, b);
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); ends.len()];
    for i in 0..ends.len() {
        let r = uf.find(i);
        clusters[r].push(i);
    }

    let mut out = Vec::new();
    for members in clusters.into_iter().filter(|m| m.len() >= 3) {
        let mut incident: [Option<SegmentEnd>; 4] = [None; 4];
        for &m in &members {
            let se = ends[m].0;
            let seg = &segments[se.segment];
            let slot = &mut incident[seg.class.index()];
            let better = match slot {
                None => true,
                Some(cur) => {
                    let cur_len = segments[cur.segment].length;
                    seg.length > cur_len || (seg.length == cur_len && se.segment < cur.segment)
                }
            };
            if better {
                *slot = Some(se);
            }
        }
        // A segment whose two ends landed in the same cluster is not a side.
        for slot in incident.iter_mut() {
            if let Some(se) = *slot {
                let both = members
                    .iter()
                    .filter(|&&m| ends[m].0.segment == se.segment)
                    .count();
                if both > 1 {
                    *slot = None;
                }
            }
        }
        let count = incident.iter().filter(|s| s.is_some()).count();
        if count < 3 {
            continue;
        }
        let (sum, n) = incident.iter().flatten().fold((Vector2::zeros(), 0.0), |(acc, n), se| {
            (acc + segments[se.segment].endpoint(se.end).coords, n + 1.0)
        });
        let position = Point2::from(sum / n);
        let spread = incident
            .iter()
            .flatten()
            .map(|se| (segments[se.segment].endpoint(se.end) - position).norm())
            .fold(0.0, f64::max);
        if spread > proximity {
            log::trace!("endpoint cluster at {position:?} spreads {spread:.2} px");
            continue;
        }
        out.push(CornerCandidate { position, incident });
    }
    out.sort_by(|a, b| {
        a.position
            .y
            .total_cmp(&b.position.y)
            .then(a.position.x.total_cmp(&b.position.x))
    });
    out
}

/// Link direction in the board graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Right = 0,
    Down = 1,
    Left = 2,
    Up = 3,
}

impl Direction {
    pub fn opposite(self) -> Direction {
        match self {
            Direction::Right => Direction::Left,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Up => Direction::Down,
        }
    }
}

/// Four-neighbor graph over corner candidates.
#[derive(Clone, Debug)]
pub struct ConnectionGraph {
    pub candidates: Vec<CornerCandidate>,
    pub segments: Vec<EdgeSegment>,
    /// Neighbor per [`Direction`] for each candidate.
    pub links: Vec<[Option<usize>; 4]>,
}

impl ConnectionGraph {
    pub fn link(&self, node: usize, dir: Direction) -> Option<usize> {
        self.links[node][dir as usize]
    }

    pub fn edge_count(&self) -> usize {
        self.links
            .iter()
            .map(|l| l[Direction::Right as usize].is_some() as usize + l[Direction::Down as usize].is_some() as usize)
            .sum()
    }
}

fn lengths_compatible(a: f64, b: f64, ratio: f64) -> bool {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    lo > 0.0 && hi / lo <= ratio
}

/// Links two candidates when one segment has an end in each and its length is
/// within `length_ratio` of every other segment incident at both ends. The
/// link direction comes from the segment class (horizontal classes join left
/// and right neighbors) and the sign of the displacement.
pub fn build_connection_graph(
    candidates: &[CornerCandidate],
    segments: &[EdgeSegment],
    length_ratio: f64,
) -> ConnectionGraph {
    let mut owner: Vec<[Option<usize>; 2]> = vec![[None, None]; segments.len()];
    for (ci, c) in candidates.iter().enumerate() {
        for se in c.incident.iter().flatten() {
            owner[se.segment][se.end] = Some(ci);
        }
    }
    let mut links: Vec<[Option<usize>; 4]> = vec![[None; 4]; candidates.len()];
    for (si, seg) in segments.iter().enumerate() {
        let [Some(a), Some(b)] = owner[si] else {
            continue;
        };
        if a == b {
            continue;
        }
        let ok = [a, b].iter().all(|&ci| {
            candidates[ci]
                .incident
                .iter()
                .flatten()
                .filter(|se| se.segment != si)
                .all(|se| lengths_compatible(seg.length, segments[se.segment].length, length_ratio))
        });
        if !ok {
            continue;
        }
        let d = candidates[b].position - candidates[a].position;
        let dir = if seg.class.is_horizontal() {
            if d.x >= 0.0 {
                Direction::Right
            } else {
                Direction::Left
            }
        } else if d.y >= 0.0 {
            Direction::Down
        } else {
            Direction::Up
        };
        let dist = d.norm();
        let mut set = |from: usize, to: usize, dir: Direction| {
            let slot = &mut links[from][dir as usize];
            match *slot {
                Some(cur) if (candidates[cur].position - candidates[from].position).norm() <= dist => {}
                _ => *slot = Some(to),
            }
        };
        set(a, b, dir);
        set(b, a, dir.opposite());
    }
    // Drop one-sided links left over from conflict resolution.
    for i in 0..links.len() {
        for dir in [Direction::Right, Direction::Down, Direction::Left, Direction::Up] {
            if let Some(j) = links[i][dir as usize] {
                if links[j][dir.opposite() as usize] != Some(i) {
                    links[i][dir as usize] = None;
                }
            }
        }
    }
    ConnectionGraph {
        candidates: candidates.to_vec(),
        segments: segments.to_vec(),
        links,
    }
}

/// Position of grid corner `(row, col)` in snake order.
#[inline]
pub fn snake_index(row: usize, col: usize, cols: usize) -> usize {
    row * cols + if row % 2 == 0 { col } else { cols - 1 - col }
}

/// Grid position `(row, col)` of the `index`-th corner in snake order.
#[inline]
pub fn snake_position(index: usize, cols: usize) -> (usize, usize) {
    let row = index / cols;
    let k = index % cols;
    (row, if row % 2 == 0 { k } else { cols - 1 - k })
}

/// Checkerboard detected in one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkerboard {
    /// Inner-corner rows.
    pub rows: usize,
    /// Inner-corner columns.
    pub cols: usize,
    /// Corner positions in snake order (see [`snake_index`]).
    pub corners: Vec<Point2<f64>>,
    /// Graph node of each corner, when the board came from a graph.
    pub nodes: Vec<usize>,
    pub image_id: usize,
}

impl Checkerboard {
    pub fn new(rows: usize, cols: usize, corners: Vec<Point2<f64>>) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidInput(format!("board must be at least 2x2, got {rows}x{cols}")));
        }
        if corners.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "board {rows}x{cols} needs {} corners, got {}",
                rows * cols,
                corners.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            corners,
            nodes: Vec::new(),
            image_id: 0,
        })
    }

    /// Corner at grid position `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> Point2<f64> {
        self.corners[snake_index(row, col, self.cols)]
    }

    pub fn centroid(&self) -> Point2<f64> {
        let sum = self.corners.iter().fold(Vector2::zeros(), |a, p| a + p.coords);
        Point2::from(sum / self.corners.len() as f64)
    }
}

fn traverse(graph: &ConnectionGraph, start: usize) -> Option<(usize, Vec<usize>)> {
    let n = graph.candidates.len();
    let mut in_board = vec![false; n];
    let mut order = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut cur = start;
    let mut dir = Direction::Right;
    loop {
        let mut row = vec![cur];
        in_board[cur] = true;
        while let Some(next) = graph.link(cur, dir) {
            if in_board[next] {
                return None;
            }
            in_board[next] = true;
            row.push(next);
            cur = next;
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                log::debug!("discarding pattern at node {start}: row of {} after {}", row.len(), first.len());
                return None;
            }
        }
        if dir == Direction::Left {
            row.reverse();
        }
        // Vertical links that exist must agree with the grid columns.
        if let Some(prev) = rows.last() {
            for (c, &node) in row.iter().enumerate() {
                if let Some(up) = graph.link(node, Direction::Up) {
                    if up != prev[c] {
                        return None;
                    }
                }
            }
        }
        rows.push(row);
        match graph.link(cur, Direction::Down) {
            Some(next) if !in_board[next] => {
                cur = next;
                dir = dir.opposite();
            }
            Some(_) => return None,
            None => break,
        }
    }
    let cols = rows[0].len();
    if rows.len() < 2 || cols < 2 {
        return None;
    }
    for (r, row) in rows.iter().enumerate() {
        if r % 2 == 0 {
            order.extend(row.iter().copied());
        } else {
            order.extend(row.iter().rev().copied());
        }
    }
    Some((cols, order))
}

/// Reads boards off the graph. Every node with exactly a right and a down
/// link is tried as a start corner; accepted boards are taken greedily,
/// largest first, and never share a node.
pub fn reconstruct_boards(graph: &ConnectionGraph) -> Vec<Checkerboard> {
    let mut found: Vec<(usize, Vec<usize>)> = Vec::new();
    for node in 0..graph.candidates.len() {
        let l = &graph.links[node];
        let is_start = l[Direction::Right as usize].is_some()
            && l[Direction::Down as usize].is_some()
            && l[Direction::Left as usize].is_none()
            && l[Direction::Up as usize].is_none();
        if !is_start {
            continue;
        }
        match traverse(graph, node) {
            Some(board) => found.push(board),
            None => log::debug!("no board from start node {node}"),
        }
    }
    // Stable sort keeps the (y, x) start order among equal sizes.
    found.sort_by(|a, b| b.1.len().cmp(&a.1.len()));
    let mut used = vec![false; graph.candidates.len()];
    let mut boards = Vec::new();
    for (cols, nodes) in found {
        if nodes.iter().any(|&n| used[n]) {
            continue;
        }
        for &n in &nodes {
            used[n] = true;
        }
        let rows = nodes.len() / cols;
        boards.push(Checkerboard {
            rows,
            cols,
            corners: nodes.iter().map(|&n| graph.candidates[n].position).collect(),
            nodes,
            image_id: 0,
        });
    }
    // Report boards left to right, then top to bottom.
    boards.sort_by(|a, b| {
        a.corners[0]
            .x
            .total_cmp(&b.corners[0].x)
            .then(a.corners[0].y.total_cmp(&b.corners[0].y))
    });
    boards
}

/// Unique point on both lines.
pub fn intersect_lines(a: &Line, b: &Line) -> Result<Point2<f64>> {
    let det = a.normal.x * b.normal.y - a.normal.y * b.normal.x;
    if det.abs() < 1e-6 {
        return Err(Error::DegenerateIntersection { sin_angle: det.abs() });
    }
    let x = (a.offset * b.normal.y - a.normal.y * b.offset) / det;
    let y = (a.normal.x * b.offset - a.offset * b.normal.x) / det;
    Ok(Point2::new(x, y))
}

/// Point selection for the line-intersection refiner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntersectionConfig {
    pub ransac: RansacConfig,
    /// Points closer than this to either end of their segment are left out.
    pub end_trim: f64,
    /// Only points within this distance of the candidate are used.
    pub fit_radius: f64,
}

impl Default for IntersectionConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            end_trim: DEFAULT_END_TRIM,
            fit_radius: DEFAULT_FIT_RADIUS,
        }
    }
}

pub const DEFAULT_END_TRIM: f64 = 2.0;
pub const DEFAULT_FIT_RADIUS: f64 = 10.0;
const MIN_POOLED_POINTS: usize = 4;

fn pooled_points(
    graph: &ConnectionGraph,
    corner: &CornerCandidate,
    horizontal: bool,
    config: &IntersectionConfig,
) -> (Vec<Point2<f64>>, Vec<f64>) {
    let mut pts = Vec::new();
    let mut dirs = Vec::new();
    let mut all_pts = Vec::new();
    let mut all_dirs = Vec::new();
    for se in corner.incident_of_axis(horizontal) {
        let seg = &graph.segments[se.segment];
        let (a, b) = (seg.first(), seg.last());
        for (p, &d) in seg.points.iter().zip(&seg.directions) {
            all_pts.push(*p);
            all_dirs.push(d);
            let trimmed = (p - a).norm() < config.end_trim || (p - b).norm() < config.end_trim;
            if !trimmed && (p - corner.position).norm() <= config.fit_radius {
                pts.push(*p);
                dirs.push(d);
            }
        }
    }
    if pts.len() < MIN_POOLED_POINTS {
        return (all_pts, all_dirs);
    }
    (pts, dirs)
}

/// Intersection of the horizontal line through the corner's horizontal-class
/// segments and the vertical line through its vertical-class segments.
pub fn refine_corner_by_intersection(
    corner: &CornerCandidate,
    graph: &ConnectionGraph,
    config: &IntersectionConfig,
    seed: u64,
) -> Result<Point2<f64>> {
    let (hp, hd) = pooled_points(graph, corner, true, config);
    let (vp, vd) = pooled_points(graph, corner, false, config);
    if hp.is_empty() || vp.is_empty() {
        return Err(Error::DegenerateFit("corner lacks horizontal or vertical support".into()));
    }
    let h = fit_line_ransac(&hp, &hd, &config.ransac, seed)?;
    let v = fit_line_ransac(&vp, &vd, &config.ransac, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
    intersect_lines(&h.line, &v.line)
}

/// Closed-form gradient corner refinement: the point minimizing
/// `sum_p (g_p . (p - c))^2` over a `window x window` neighborhood centered on
/// the rounded corner.
pub fn refine_corner_by_gradient(field: &GradientField, corner: Point2<f64>, window: usize) -> Result<Point2<f64>> {
    if window % 2 == 0 || window == 0 || window > MAX_GRADIENT_WINDOW {
        return Err(Error::InvalidInput(format!("window must be odd and at most {MAX_GRADIENT_WINDOW}, got {window}")));
    }
    let half = (window / 2) as isize;
    let (cx, cy) = (math::round(corner.x) as isize, math::round(corner.y) as isize);
    if cx - half < 0 || cy - half < 0 || cx + half >= field.width as isize || cy + half >= field.height as isize {
        return Err(Error::InvalidInput("gradient window leaves the image".into()));
    }
    let mut a = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for y in cy - half..=cy + half {
        for x in cx - half..=cx + half {
            let (gx, gy) = field.gradient(x as usize, y as usize);
            let g = Vector2::new(gx, gy);
            let ggt = g * g.transpose();
            a += ggt;
            b += ggt * Vector2::new(x as f64, y as f64);
        }
    }
    let trace = a.trace();
    let det = a.determinant();
    if !(trace > 0.0) || det < 1e-12 * trace * trace {
        return Err(Error::SingularMatrix {
            ratio: if trace > 0.0 { det / (trace * trace) } else { 0.0 },
        });
    }
    let inv = a.try_inverse().ok_or(Error::SingularMatrix { ratio: 0.0 })?;
    Ok(Point2::from(inv * b))
}

/// Corner refinement method.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refiner {
    LineIntersection,
    /// Closed-form gradient method with the given window.
    Gradient { window: usize },
}

/// Detection settings shared by the image pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionConfig {
    pub abs_threshold: f64,
    pub min_segment_points: usize,
    pub proximity: f64,
    pub length_ratio: f64,
    pub intersection: IntersectionConfig,
    pub refiner: Refiner,
    pub seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            abs_threshold: imagegrad::DEFAULT_ABS_THRESHOLD,
            min_segment_points: crate::edgesegments::MIN_SEGMENT_POINTS,
            proximity: DEFAULT_PROXIMITY,
            length_ratio: DEFAULT_LENGTH_RATIO,
            intersection: IntersectionConfig::default(),
            refiner: Refiner::LineIntersection,
            seed: 0,
        }
    }
}

/// Everything produced while detecting boards in one image.
#[derive(Clone, Debug)]
pub struct Detection {
    pub field: GradientField,
    pub graph: ConnectionGraph,
    pub boards: Vec<Checkerboard>,
    /// Boards dropped because a corner could not be refined.
    pub rejected: usize,
}

/// Refines every corner of a board in place.
pub fn refine_board(
    board: &mut Checkerboard,
    graph: &ConnectionGraph,
    field: &GradientField,
    config: &DetectionConfig,
) -> Result<()> {
    for (k, &node) in board.nodes.iter().enumerate() {
        let cand = &graph.candidates[node];
        board.corners[k] = match config.refiner {
            Refiner::LineIntersection => refine_corner_by_intersection(
                cand,
                graph,
                &config.intersection,
                config.seed ^ ((node as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)),
            )?,
            Refiner::Gradient { window } => refine_corner_by_gradient(field, cand.position, window)?,
        };
    }
    Ok(())
}

/// Full pipeline: edges, segments, corner candidates, graph, boards and
/// corner refinement.
pub fn detect_boards(img: &FloatImage, config: &DetectionConfig) -> Result<Detection> {
    let (field, edges) = imagegrad::detect_edge_candidates(img, config.abs_threshold)?;
    let segments = group_segments(&edges, config.min_segment_points);
    let candidates = find_corner_candidates(&segments, config.proximity);
    let graph = build_connection_graph(&candidates, &segments, config.length_ratio);
    let mut boards = Vec::new();
    let mut rejected = 0;
    for mut board in reconstruct_boards(&graph) {
        match refine_board(&mut board, &graph, &field, config) {
            Ok(()) => boards.push(board),
            Err(e) => {
                log::debug!("dropping {}x{} board: {e}", board.rows, board.cols);
                rejected += 1;
            }
        }
    }
    for (i, b) in boards.iter_mut().enumerate() {
        b.image_id = i;
    }
    Ok(Detection {
        field,
        graph,
        boards,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seg(class: EdgeClass, from: (f64, f64), to: (f64, f64), n: usize) -> EdgeSegment {
        let dir = match class {
            EdgeClass::VerticalPositive => 0.0,
            EdgeClass::VerticalNegative => math::PI,
            EdgeClass::HorizontalPositive => math::PI / 2.0,
            EdgeClass::HorizontalNegative => -math::PI / 2.0,
        };
        let points: Vec<_> = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                Point2::new(from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1))
            })
            .collect();
        let length = points.windows(2).map(|p| (p[1] - p[0]).norm()).sum();
        EdgeSegment {
            class,
            pixels: points.iter().map(|p| [p.x as usize, p.y as usize]).collect(),
            directions: vec![dir; n],
            points,
            mean_direction: dir,
            length,
        }
    }

    /// Segments of an ideal grid of inner corners `rows x cols`, spacing `s`,
    /// top-left corner at `origin`, with a one-pixel gap at every corner.
    fn grid_segments(rows: usize, cols: usize, s: f64, origin: (f64, f64)) -> Vec<EdgeSegment> {
        let mut out = Vec::new();
        let g = 1.0;
        let n = (s as usize).max(6) - 1;
        for r in 0..rows as i64 + 1 {
            for c in 0..cols as i64 {
                // Vertical side above corner (r, c).
                let x = origin.0 + c as f64 * s;
                let y0 = origin.1 + (r - 1) as f64 * s;
                let class = if (r + c) % 2 == 0 {
                    EdgeClass::VerticalPositive
                } else {
                    EdgeClass::VerticalNegative
                };
                out.push(seg(class, (x, y0 + g), (x, y0 + s - g), n));
            }
        }
        for r in 0..rows as i64 {
            for c in 0..cols as i64 + 1 {
                let y = origin.1 + r as f64 * s;
                let x0 = origin.0 + (c - 1) as f64 * s;
                let class = if (r + c) % 2 == 0 {
                    EdgeClass::HorizontalPositive
                } else {
                    EdgeClass::HorizontalNegative
                };
                out.push(seg(class, (x0 + g, y), (x0 + s - g, y), n));
            }
        }
        out
    }

    #[test]
    fn four_segments_make_one_candidate() {
        let segs = vec![
            seg(EdgeClass::VerticalPositive, (10.0, 0.0), (10.0, 9.0), 10),
            seg(EdgeClass::VerticalNegative, (10.0, 11.0), (10.0, 20.0), 10),
            seg(EdgeClass::HorizontalPositive, (0.0, 10.0), (9.0, 10.0), 10),
            seg(EdgeClass::HorizontalNegative, (11.0, 10.0), (20.0, 10.0), 10),
        ];
        let c = find_corner_candidates(&segs, DEFAULT_PROXIMITY);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].class_count(), 4);
        assert!((c[0].position - Point2::new(10.0, 10.0)).norm() <= DEFAULT_PROXIMITY);
    }

    #[test]
    fn same_class_ends_are_not_a_corner() {
        let segs = vec![
            seg(EdgeClass::VerticalPositive, (10.0, 0.0), (10.0, 9.0), 10),
            seg(EdgeClass::VerticalPositive, (10.0, 11.0), (10.0, 20.0), 10),
        ];
        assert!(find_corner_candidates(&segs, DEFAULT_PROXIMITY).is_empty());
    }

    #[test]
    fn grid_candidates_and_edges() {
        let segs = grid_segments(5, 6, 12.0, (30.0, 40.0));
        let cands = find_corner_candidates(&segs, DEFAULT_PROXIMITY);
        assert_eq!(cands.len(), 30);
        let graph = build_connection_graph(&cands, &segs, DEFAULT_LENGTH_RATIO);
        assert_eq!(graph.edge_count(), 49);
    }

    #[test]
    fn length_ratio_blocks_links() {
        let short = seg(EdgeClass::HorizontalPositive, (11.0, 10.0), (30.0, 10.0), 20);
        let long = seg(EdgeClass::VerticalPositive, (10.0, -91.0), (10.0, 9.0), 100);
        let cands = vec![
            CornerCandidate {
                position: Point2::new(10.0, 10.0),
                incident: [
                    Some(SegmentEnd { segment: 0, end: 0 }),
                    None,
                    Some(SegmentEnd { segment: 1, end: 1 }),
                    None,
                ],
            },
            CornerCandidate {
                position: Point2::new(31.0, 10.0),
                incident: [Some(SegmentEnd { segment: 0, end: 1 }), None, None, None],
            },
        ];
        let g = build_connection_graph(&cands, &[short.clone(), long], 2.0);
        assert_eq!(g.edge_count(), 0);
        let ok = seg(EdgeClass::VerticalPositive, (10.0, -21.0), (10.0, 9.0), 30);
        let g = build_connection_graph(&cands, &[short, ok], 2.0);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.link(0, Direction::Right), Some(1));
        assert_eq!(g.link(1, Direction::Left), Some(0));
    }

    fn grid_graph(rows: usize, cols: usize, skip: Option<(usize, usize)>) -> ConnectionGraph {
        let mut candidates = Vec::new();
        let mut id = vec![vec![None; cols]; rows];
        for r in 0..rows {
            for c in 0..cols {
                if Some((r, c)) == skip {
                    continue;
                }
                id[r][c] = Some(candidates.len());
                candidates.push(CornerCandidate {
                    position: Point2::new(c as f64 * 10.0, r as f64 * 10.0),
                    incident: [None; 4],
                });
            }
        }
        let mut links = vec![[None; 4]; candidates.len()];
        for r in 0..rows {
            for c in 0..cols {
                let Some(a) = id[r][c] else { continue };
                if c + 1 < cols {
                    if let Some(b) = id[r][c + 1] {
                        links[a][Direction::Right as usize] = Some(b);
                        links[b][Direction::Left as usize] = Some(a);
                    }
                }
                if r + 1 < rows {
                    if let Some(b) = id[r + 1][c] {
                        links[a][Direction::Down as usize] = Some(b);
                        links[b][Direction::Up as usize] = Some(a);
                    }
                }
            }
        }
        ConnectionGraph {
            candidates,
            segments: Vec::new(),
            links,
        }
    }

    #[test]
    fn two_by_two_snake() {
        let g = grid_graph(2, 2, None);
        let boards = reconstruct_boards(&g);
        assert_eq!(boards.len(), 1);
        let b = &boards[0];
        assert_eq!((b.rows, b.cols), (2, 2));
        assert_eq!(
            b.corners,
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(10.0, 0.0),
                Point2::new(10.0, 10.0),
                Point2::new(0.0, 10.0)
            ]
        );
        assert_eq!(b.at(1, 0), Point2::new(0.0, 10.0));
    }

    #[test]
    fn missing_corner_discards_component() {
        let g = grid_graph(3, 4, Some((1, 1)));
        assert!(reconstruct_boards(&g).is_empty());
    }

    #[test]
    fn full_grid_from_segments() {
        let segs = grid_segments(5, 6, 12.0, (30.0, 40.0));
        let cands = find_corner_candidates(&segs, DEFAULT_PROXIMITY);
        let graph = build_connection_graph(&cands, &segs, DEFAULT_LENGTH_RATIO);
        let boards = reconstruct_boards(&graph);
        assert_eq!(boards.len(), 1);
        assert_eq!((boards[0].rows, boards[0].cols), (5, 6));
        assert_relative_eq!(boards[0].at(0, 0).x, 30.0, epsilon = 1.0);
        assert_relative_eq!(boards[0].at(4, 5).y, 88.0, epsilon = 1.0);
        let mut b = boards[0].clone();
        let field = imagegrad::sobel(&FloatImage::filled(8, 8, 0.0)).unwrap();
        refine_board(&mut b, &graph, &field, &DetectionConfig::default()).unwrap();
        for r in 0..5 {
            for c in 0..6 {
                let p = b.at(r, c);
                assert_relative_eq!(p.x, 30.0 + 12.0 * c as f64, epsilon = 1e-9);
                assert_relative_eq!(p.y, 40.0 + 12.0 * r as f64, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn snake_index_round_trip() {
        for cols in 1..7 {
            for r in 0..5 {
                for c in 0..cols {
                    let i = snake_index(r, c, cols);
                    assert_eq!(snake_position(i, cols), (r, c));
                }
            }
        }
        assert_eq!(snake_index(1, 0, 2), 3);
    }

    #[test]
    fn line_intersections() {
        let x5 = Line::new(Vector2::new(1.0, 0.0), 5.0).unwrap();
        let y7 = Line::new(Vector2::new(0.0, 1.0), 7.0).unwrap();
        assert_eq!(intersect_lines(&x5, &y7).unwrap(), Point2::new(5.0, 7.0));

        let xa = Line::new(Vector2::new(0.0, 1.0), 0.0).unwrap();
        let ya = Line::new(Vector2::new(1.0, 0.0), 0.0).unwrap();
        assert_eq!(intersect_lines(&xa, &ya).unwrap(), Point2::new(0.0, 0.0));

        let diag = Line::through(Point2::new(-1.0, -1.0), Point2::new(1.0, 1.0)).unwrap();
        let anti = Line::through(Point2::new(-1.0, 1.0), Point2::new(1.0, -1.0)).unwrap();
        let p = intersect_lines(&diag, &anti).unwrap();
        assert_relative_eq!(p, Point2::new(0.0, 0.0), epsilon = 1e-12);

        let s = libm::sqrt(2.0);
        let a = Line::new(Vector2::new(1.0 / s, 1.0 / s), s).unwrap();
        let b = Line::new(Vector2::new(1.0 / s, -1.0 / s), 0.0).unwrap();
        assert_relative_eq!(intersect_lines(&a, &b).unwrap(), Point2::new(1.0, 1.0), epsilon = 1e-12);

        let p1 = Line::new(Vector2::new(0.0, 1.0), 1.0).unwrap();
        assert!(matches!(intersect_lines(&xa, &p1), Err(Error::DegenerateIntersection { .. })));
    }

    fn checker_corner(w: usize, corner: (f64, f64)) -> FloatImage {
        // Exact area coverage of an X-junction, sampled finely.
        FloatImage::from_fn(w, w, |x, y| {
            let n = 16;
            let mut acc = 0.0;
            for j in 0..n {
                for i in 0..n {
                    let sx = x as f64 - 0.5 + (i as f64 + 0.5) / n as f64 - corner.0;
                    let sy = y as f64 - 0.5 + (j as f64 + 0.5) / n as f64 - corner.1;
                    acc += if (sx < 0.0) == (sy < 0.0) { 0.1 } else { 0.9 };
                }
            }
            acc / (n * n) as f64
        })
    }

    #[test]
    fn gradient_refiner_symmetric_corner() {
        let img = checker_corner(21, (10.0, 10.0));
        let field = imagegrad::sobel(&imagegrad::gaussian_smooth(&img).unwrap()).unwrap();
        let c = refine_corner_by_gradient(&field, Point2::new(10.0, 10.0), 9).unwrap();
        assert_relative_eq!(c, Point2::new(10.0, 10.0), epsilon = 1e-9);
    }

    #[test]
    fn gradient_refiner_errors() {
        let field = imagegrad::sobel(&FloatImage::filled(21, 21, 0.5)).unwrap();
        assert!(matches!(
            refine_corner_by_gradient(&field, Point2::new(10.0, 10.0), 9),
            Err(Error::SingularMatrix { .. })
        ));
        assert!(refine_corner_by_gradient(&field, Point2::new(10.0, 10.0), 8).is_err());
        assert!(refine_corner_by_gradient(&field, Point2::new(10.0, 10.0), 13).is_err());
        assert!(refine_corner_by_gradient(&field, Point2::new(2.0, 10.0), 9).is_err());
    }
}
