//! Planar geometry of the study region, survey units and their detection or
//! capture regions, plus the partition grid used for spatial aggregation.
//!
//! Everything lives in flat map units. Point and trap regions are disks;
//! transect regions are perpendicular strips with no end caps, so a location
//! belongs to a transect's strip only if its perpendicular foot falls on one
//! of the transect's segments.

mod design_io;
mod quadrature;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use design_io::{read_design, write_design};
pub(crate) use quadrature::{area_nodes, AreaNode};
pub use quadrature::{
    area_rule, line_rule, ObservedLocationSupport, QuadratureRule, DEFAULT_LINE_NODES, DEFAULT_SPACING_DIVISOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn sub(&self, other: &Point) -> (f64, f64) {
        (self.x - other.x, self.y - other.y)
    }

    fn offset(&self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

/// Axis-aligned rectangle `[min.x, max.x] × [min.y, max.y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(min: Point, max: Point) -> Result<Self> {
        if !(min.x.is_finite() && min.y.is_finite() && max.x.is_finite() && max.y.is_finite()) {
            return Err(Error::Geometry("rectangle corners must be finite".into()));
        }
        if !(max.x > min.x && max.y > min.y) {
            return Err(Error::Geometry(format!("degenerate rectangle ({}, {})-({}, {})", min.x, min.y, max.x, max.y)));
        }
        Ok(Rect { min, max })
    }

    pub fn unit_square() -> Self {
        Rect { min: Point::new(0.0, 0.0), max: Point::new(1.0, 1.0) }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.min.x + self.max.x), 0.5 * (self.min.y + self.max.y))
    }

    /// Closed containment.
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub(crate) fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.max.x.min(other.max.x) - self.min.x.max(other.min.x);
        let h = self.max.y.min(other.max.y) - self.min.y.max(other.min.y);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Liang–Barsky clip of the closed segment `a`-`b` against the rectangle.
    pub fn intersects_segment(&self, a: &Point, b: &Point) -> bool {
        let (dx, dy) = b.sub(a);
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        let checks = [(-dx, a.x - self.min.x), (dx, self.max.x - a.x), (-dy, a.y - self.min.y), (dy, self.max.y - a.y)];
        for (p, q) in checks {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }

    fn corners(&self) -> [Point; 4] {
        [self.min, Point::new(self.max.x, self.min.y), self.max, Point::new(self.min.x, self.max.y)]
    }
}

/// Simple polygon (no self-intersections), vertices in either orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        let poly = Polygon { vertices };
        if poly.vertices.len() < 3 || poly.area() <= 0.0 {
            return Err(Error::Geometry("mask polygon must have positive area".into()));
        }
        Ok(poly)
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                a.x * b.y - b.x * a.y
            })
            .sum();
        0.5 * twice.abs()
    }

    /// Even-odd ray casting.
    pub fn contains(&self, p: &Point) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[j];
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRegion {
    pub bounds: Rect,
    pub mask: Option<Polygon>,
}

impl StudyRegion {
    pub fn new(bounds: Rect, mask: Option<Polygon>) -> Result<Self> {
        if let Some(m) = &mask {
            if !m.vertices.iter().all(|v| bounds.contains(v)) {
                return Err(Error::Geometry("mask polygon extends outside the bounds".into()));
            }
        }
        Ok(StudyRegion { bounds, mask })
    }

    pub fn rect(bounds: Rect) -> Self {
        StudyRegion { bounds, mask: None }
    }

    pub fn unit_square() -> Self {
        StudyRegion::rect(Rect::unit_square())
    }

    pub fn area(&self) -> f64 {
        match &self.mask {
            Some(m) => m.area(),
            None => self.bounds.area(),
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.bounds.contains(p) && self.mask.as_ref().is_none_or(|m| m.contains(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Point,
    Transect,
    Trap,
}

impl UnitKind {
    /// Points and transects collect distance-sampling data; traps collect captures.
    pub fn is_distance_sampling(self) -> bool {
        matches!(self, UnitKind::Point | UnitKind::Transect)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::Point => "point",
            UnitKind::Transect => "transect",
            UnitKind::Trap => "trap",
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UnitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "point" => Ok(UnitKind::Point),
            "transect" => Ok(UnitKind::Transect),
            "trap" => Ok(UnitKind::Trap),
            other => Err(Error::Data(format!("unknown unit kind '{other}'"))),
        }
    }
}

/// A survey point, transect or trap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyUnit {
    pub id: String,
    pub kind: UnitKind,
    /// One vertex for points and traps, the ordered polyline for transects.
    pub vertices: Vec<Point>,
}

impl SurveyUnit {
    pub fn new(id: impl Into<String>, kind: UnitKind, vertices: Vec<Point>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::Geometry("survey unit id must not be empty".into()));
        }
        if vertices.iter().any(|v| !(v.x.is_finite() && v.y.is_finite())) {
            return Err(Error::Geometry(format!("unit {id}: non-finite coordinate")));
        }
        match kind {
            UnitKind::Point | UnitKind::Trap if vertices.len() != 1 => {
                return Err(Error::Geometry(format!("unit {id}: a {kind} needs exactly one location")))
            }
            UnitKind::Transect => {
                if vertices.len() < 2 {
                    return Err(Error::Geometry(format!("unit {id}: a transect needs at least two vertices")));
                }
                if vertices.windows(2).any(|w| w[0].distance(&w[1]) <= 0.0) {
                    return Err(Error::Geometry(format!("unit {id}: transect has a zero-length segment")));
                }
            }
            _ => {}
        }
        Ok(SurveyUnit { id, kind, vertices })
    }

    pub fn point(id: impl Into<String>, at: Point) -> Result<Self> {
        SurveyUnit::new(id, UnitKind::Point, vec![at])
    }

    pub fn trap(id: impl Into<String>, at: Point) -> Result<Self> {
        SurveyUnit::new(id, UnitKind::Trap, vec![at])
    }

    pub fn transect(id: impl Into<String>, vertices: Vec<Point>) -> Result<Self> {
        SurveyUnit::new(id, UnitKind::Transect, vertices)
    }

    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }

    /// The location of a point or trap, or the point halfway along a transect.
    pub fn reference_point(&self) -> Point {
        if self.vertices.len() == 1 {
            return self.vertices[0];
        }
        let mut remaining = 0.5 * self.length();
        for w in self.vertices.windows(2) {
            let len = w[0].distance(&w[1]);
            if remaining <= len {
                let t = remaining / len;
                return Point::new(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y));
            }
            remaining -= len;
        }
        *self.vertices.last().unwrap()
    }

    pub(crate) fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Distance from `p` to segment `a`-`b`, together with the unclamped
/// projection parameter of `p` onto the segment's line.
fn segment_distance(p: &Point, a: &Point, b: &Point) -> (f64, f64) {
    let (dx, dy) = b.sub(a);
    let (px, py) = p.sub(a);
    let len2 = dx * dx + dy * dy;
    let t = (px * dx + py * dy) / len2;
    let tc = t.clamp(0.0, 1.0);
    let d = (px - tc * dx).hypot(py - tc * dy);
    (d, t)
}

/// Euclidean distance to a point or trap; minimum distance to the polyline
/// of a transect.
pub fn distance_to_unit(s: &Point, unit: &SurveyUnit) -> f64 {
    match unit.kind {
        UnitKind::Point | UnitKind::Trap => s.distance(&unit.vertices[0]),
        UnitKind::Transect => unit.segments().map(|(a, b)| segment_distance(s, &a, &b).0).fold(f64::INFINITY, f64::min),
    }
}

/// Shapes the quadrature rules know how to cover.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disk { center: Point, radius: f64 },
    Strip { vertices: Vec<Point>, half_width: f64 },
    Rect(Rect),
}

impl Shape {
    pub fn measure(&self) -> f64 {
        match self {
            Shape::Disk { radius, .. } => std::f64::consts::PI * radius * radius,
            Shape::Strip { vertices, half_width } => {
                let len: f64 = vertices.windows(2).map(|w| w[0].distance(&w[1])).sum();
                2.0 * half_width * len
            }
            Shape::Rect(r) => r.area(),
        }
    }
}

/// The detection (point, transect) or capture (trap) region of a unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledRegion {
    pub unit: SurveyUnit,
    /// Truncation distance: `w_ds` for distance sampling, `w_cr` for traps.
    pub radius: f64,
}

impl SampledRegion {
    pub fn new(unit: SurveyUnit, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Geometry(format!("unit {}: radius must be positive, got {radius}", unit.id)));
        }
        Ok(SampledRegion { unit, radius })
    }

    pub fn id(&self) -> &str {
        &self.unit.id
    }

    pub fn kind(&self) -> UnitKind {
        self.unit.kind
    }

    pub fn is_distance_sampling(&self) -> bool {
        self.unit.kind.is_distance_sampling()
    }

    pub fn shape(&self) -> Shape {
        match self.unit.kind {
            UnitKind::Point | UnitKind::Trap => Shape::Disk { center: self.unit.vertices[0], radius: self.radius },
            UnitKind::Transect => Shape::Strip { vertices: self.unit.vertices.clone(), half_width: self.radius },
        }
    }

    pub fn measure(&self) -> f64 {
        self.shape().measure()
    }

    pub fn distance(&self, p: &Point) -> f64 {
        distance_to_unit(p, &self.unit)
    }

    pub fn contains(&self, p: &Point) -> bool {
        match self.unit.kind {
            UnitKind::Point | UnitKind::Trap => p.distance(&self.unit.vertices[0]) <= self.radius,
            UnitKind::Transect => self.unit.segments().any(|(a, b)| {
                let (d, t) = segment_distance(p, &a, &b);
                (0.0..=1.0).contains(&t) && d <= self.radius
            }),
        }
    }

    pub fn bbox(&self) -> Rect {
        let (mut lo, mut hi) = (self.unit.vertices[0], self.unit.vertices[0]);
        for v in &self.unit.vertices {
            lo = Point::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Point::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        Rect { min: lo.offset(-self.radius, -self.radius), max: hi.offset(self.radius, self.radius) }
    }

    fn pieces(&self) -> Vec<Piece> {
        match self.unit.kind {
            UnitKind::Point | UnitKind::Trap => vec![Piece::Disk(self.unit.vertices[0], self.radius)],
            UnitKind::Transect => {
                self.unit.segments().map(|(a, b)| Piece::Quad(segment_rectangle(&a, &b, self.radius))).collect()
            }
        }
    }
}

fn segment_rectangle(a: &Point, b: &Point, half_width: f64) -> [Point; 4] {
    let (dx, dy) = b.sub(a);
    let len = dx.hypot(dy);
    let (nx, ny) = (-dy / len * half_width, dx / len * half_width);
    [a.offset(nx, ny), b.offset(nx, ny), b.offset(-nx, -ny), a.offset(-nx, -ny)]
}

/// A full survey: every unit with its truncation radius.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurveyDesign {
    pub regions: Vec<SampledRegion>,
}

impl SurveyDesign {
    pub fn new(regions: Vec<SampledRegion>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for r in &regions {
            if !seen.insert(r.id().to_string()) {
                return Err(Error::Geometry(format!("duplicate unit id '{}'", r.id())));
            }
        }
        Ok(SurveyDesign { regions })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id() == id)
    }

    pub fn get(&self, id: &str) -> Option<&SampledRegion> {
        self.regions.iter().find(|r| r.id() == id)
    }

    pub fn has_distance_sampling(&self) -> bool {
        self.regions.iter().any(|r| r.is_distance_sampling())
    }

    pub fn has_traps(&self) -> bool {
        self.regions.iter().any(|r| !r.is_distance_sampling())
    }

    /// Largest distance-sampling truncation radius, if any.
    pub fn max_ds_radius(&self) -> Option<f64> {
        self.regions.iter().filter(|r| r.is_distance_sampling()).map(|r| r.radius).reduce(f64::max)
    }

    /// Checks that every sampled region lies inside the study region.
    pub fn validate_within(&self, region: &StudyRegion) -> Result<()> {
        for r in &self.regions {
            let b = r.bbox();
            let inside = match r.kind() {
                UnitKind::Point | UnitKind::Trap => b.corners().iter().all(|c| region.bounds.contains(c)),
                UnitKind::Transect => r
                    .pieces()
                    .iter()
                    .all(|p| matches!(p, Piece::Quad(q) if q.iter().all(|c| region.bounds.contains(c)))),
            };
            let anchored = r.unit.vertices.iter().all(|v| region.contains(v));
            if !inside || !anchored {
                return Err(Error::Geometry(format!(
                    "sampled region of unit {} extends outside the study region",
                    r.id()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Piece {
    Disk(Point, f64),
    Quad([Point; 4]),
}

fn point_polygon_distance(p: &Point, poly: &[Point; 4]) -> f64 {
    let n = poly.len();
    let mut inside = true;
    let mut sign = 0.0_f64;
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                inside = false;
            }
        }
        best = best.min(segment_distance(p, &a, &b).0);
    }
    if inside {
        0.0
    } else {
        best
    }
}

fn quads_overlap(a: &[Point; 4], b: &[Point; 4]) -> bool {
    for poly in [a, b] {
        for i in 0..4 {
            let p = poly[i];
            let q = poly[(i + 1) % 4];
            let axis = (-(q.y - p.y), q.x - p.x);
            let project = |pts: &[Point; 4]| {
                pts.iter()
                    .map(|v| v.x * axis.0 + v.y * axis.1)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
            };
            let (alo, ahi) = project(a);
            let (blo, bhi) = project(b);
            if ahi <= blo || bhi <= alo {
                return false;
            }
        }
    }
    true
}

fn pieces_overlap(a: &Piece, b: &Piece) -> bool {
    match (a, b) {
        (Piece::Disk(c1, r1), Piece::Disk(c2, r2)) => c1.distance(c2) < r1 + r2,
        (Piece::Disk(c, r), Piece::Quad(q)) | (Piece::Quad(q), Piece::Disk(c, r)) => point_polygon_distance(c, q) < *r,
        (Piece::Quad(q1), Piece::Quad(q2)) => quads_overlap(q1, q2),
    }
}

/// Result of a pairwise disjointness check over a design.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    pub pairs: Vec<(String, String)>,
}

impl OverlapReport {
    pub fn is_disjoint(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_disjoint() {
            Ok(())
        } else {
            Err(Error::Overlap(self.pairs))
        }
    }
}

/// Reports every pair of sampled regions whose interiors intersect.
/// Regions that only touch are considered disjoint.
pub fn check_nonoverlap(design: &SurveyDesign) -> OverlapReport {
    let pieces: Vec<Vec<Piece>> = design.regions.iter().map(|r| r.pieces()).collect();
    let boxes: Vec<Rect> = design.regions.iter().map(|r| r.bbox()).collect();
    let mut pairs = Vec::new();
    for i in 0..design.regions.len() {
        for j in (i + 1)..design.regions.len() {
            if boxes[i].intersection_area(&boxes[j]) <= 0.0 {
                continue;
            }
            let hit = pieces[i].iter().any(|a| pieces[j].iter().any(|b| pieces_overlap(a, b)));
            if hit {
                pairs.push((design.regions[i].id().to_string(), design.regions[j].id().to_string()));
            }
        }
    }
    OverlapReport { pairs }
}

/// Regular partition of the study region's bounding rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionGrid {
    pub bounds: Rect,
    pub nx: usize,
    pub ny: usize,
    /// Row-major from the lower-left corner: cell `(i, j)` is at `j * nx + i`.
    pub cells: Vec<Rect>,
    pub sampled: Vec<bool>,
}

impl PartitionGrid {
    /// Cell containing `p`. Cells are half-open except along the upper and
    /// right edges of the bounds, so every point in the bounds has exactly
    /// one cell.
    pub fn cell_of(&self, p: &Point) -> Option<usize> {
        if !self.bounds.contains(p) {
            return None;
        }
        let fx = (p.x - self.bounds.min.x) / self.bounds.width() * self.nx as f64;
        let fy = (p.y - self.bounds.min.y) / self.bounds.height() * self.ny as f64;
        let i = (fx.floor() as usize).min(self.nx - 1);
        let j = (fy.floor() as usize).min(self.ny - 1);
        Some(j * self.nx + i)
    }

    pub fn sampled_cells(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&c| self.sampled[c]).collect()
    }
}

/// Splits the region's bounds into `nx × ny` cells and flags every cell
/// intersected by a unit's reference geometry (its location, or any segment
/// of a transect).
pub fn build_partitions(region: &StudyRegion, nx: usize, ny: usize, design: &SurveyDesign) -> Result<PartitionGrid> {
    if nx == 0 || ny == 0 {
        return Err(Error::Config("partition grid needs at least one cell per axis".into()));
    }
    let b = region.bounds;
    let edge_x = |i: usize| {
        if i == nx {
            b.max.x
        } else {
            b.min.x + b.width() * i as f64 / nx as f64
        }
    };
    let edge_y = |j: usize| {
        if j == ny {
            b.max.y
        } else {
            b.min.y + b.height() * j as f64 / ny as f64
        }
    };
    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let min = Point::new(edge_x(i), edge_y(j));
            let max = Point::new(edge_x(i + 1), edge_y(j + 1));
            cells.push(Rect { min, max });
        }
    }
    let mut grid = PartitionGrid { bounds: b, nx, ny, sampled: vec![false; cells.len()], cells };
    for r in &design.regions {
        match r.kind() {
            UnitKind::Point | UnitKind::Trap => {
                if let Some(c) = grid.cell_of(&r.unit.vertices[0]) {
                    grid.sampled[c] = true;
                }
            }
            UnitKind::Transect => {
                for (c, cell) in grid.cells.iter().enumerate() {
                    if r.unit.segments().any(|(a, b)| cell.intersects_segment(&a, &b)) {
                        grid.sampled[c] = true;
                    }
                }
                // Edges and cell lookup round differently; a transect lying
                // on a grid line must still sample its own lookup cells.
                let on_unit = r.unit.vertices.iter().copied().chain([r.unit.reference_point()]);
                for p in on_unit {
                    if let Some(c) = grid.cell_of(&p) {
                        grid.sampled[c] = true;
                    }
                }
            }
        }
    }
    Ok(grid)
}
