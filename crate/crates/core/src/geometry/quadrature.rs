//! Midpoint quadrature over disks, strips and rectangles, and equally spaced
//! rules over circles and parallel lines.

use std::f64::consts::PI;

use super::{Point, Rect, SampledRegion, Shape, UnitKind};
use crate::error::{Error, Result};

/// Default area-rule spacing is the region's radius (or strip half-width)
/// divided by this.
pub const DEFAULT_SPACING_DIVISOR: f64 = 20.0;

/// Default node count for circle and parallel-line rules.
pub const DEFAULT_LINE_NODES: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, mut f: impl FnMut(&Point) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    /// Weighted mean of `f`; falls back to equal weights when the rule has
    /// zero total weight (a circle of recorded distance zero).
    pub fn mean(&self, mut f: impl FnMut(&Point) -> f64) -> f64 {
        let total = self.total_weight();
        if total > 0.0 {
            self.integrate(f) / total
        } else {
            self.nodes.iter().map(&mut f).sum::<f64>() / self.nodes.len() as f64
        }
    }
}

/// A midpoint node together with its squared distance to the owning unit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AreaNode {
    pub point: Point,
    pub weight: f64,
    /// Computed from the lattice offsets, so nodes placed symmetrically about
    /// the unit carry bit-identical values.
    pub dist2: f64,
    /// Axis-aligned lattice cell the node stands for, where there is one.
    pub square: Option<Rect>,
}

/// Sub-samples per axis used to clip lattice cells cut by a disk's rim.
const CLIP_SAMPLES: usize = 16;

fn disk_nodes(center: Point, radius: f64, spacing: f64) -> Vec<AreaNode> {
    let k = (radius / spacing).ceil() as i64;
    let r = radius / spacing;
    let r2 = r * r;
    let h2 = spacing * spacing;
    let mut nodes = Vec::new();
    for i in -k..k {
        for j in -k..k {
            let (a, b) = (i as f64 + 0.5, j as f64 + 0.5);
            let Some((fraction, ca, cb)) = clip_cell(a.abs(), b.abs(), r2) else {
                continue;
            };
            let (ca, cb) = (ca.copysign(a), cb.copysign(b));
            let (x0, y0) = (center.x + i as f64 * spacing, center.y + j as f64 * spacing);
            nodes.push(AreaNode {
                point: Point::new(center.x + ca * spacing, center.y + cb * spacing),
                weight: fraction,
                dist2: (ca * ca + cb * cb) * h2,
                square: Some(Rect { min: Point::new(x0, y0), max: Point::new(x0 + spacing, y0 + spacing) }),
            });
        }
    }
    // Sub-sampled clipping leaves a small area error; weights are rescaled
    // so they sum to the disk area exactly.
    let total: f64 = nodes.iter().map(|n| n.weight).sum();
    if total > 0.0 {
        let scale = PI * radius * radius / total;
        nodes.iter_mut().for_each(|n| n.weight *= scale);
    }
    nodes
}

/// Fraction of the unit cell centred at `(a, b)` (lattice units, both
/// non-negative) inside the disk `x² + y² ≤ r2`, with the centroid of that
/// part.
fn clip_cell(a: f64, b: f64, r2: f64) -> Option<(f64, f64, f64)> {
    let near = (a - 0.5).max(0.0).powi(2) + (b - 0.5).max(0.0).powi(2);
    if near >= r2 {
        return None;
    }
    if (a + 0.5).powi(2) + (b + 0.5).powi(2) <= r2 {
        return Some((1.0, a, b));
    }
    let n = CLIP_SAMPLES;
    let (mut count, mut sx, mut sy) = (0usize, 0.0, 0.0);
    for u in 0..n {
        let x = a - 0.5 + (u as f64 + 0.5) / n as f64;
        for v in 0..n {
            let y = b - 0.5 + (v as f64 + 0.5) / n as f64;
            if x * x + y * y <= r2 {
                count += 1;
                sx += x;
                sy += y;
            }
        }
    }
    (count > 0).then(|| (count as f64 / (n * n) as f64, sx / count as f64, sy / count as f64))
}

fn strip_nodes(vertices: &[Point], half_width: f64, spacing: f64) -> Vec<AreaNode> {
    let mut nodes = Vec::new();
    for w in vertices.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = a.distance(&b);
        let (tx, ty) = ((b.x - a.x) / len, (b.y - a.y) / len);
        let (nx, ny) = (-ty, tx);
        let n_along = ((len / spacing).ceil() as usize).max(1);
        let n_across = ((2.0 * half_width / spacing).ceil() as usize).max(1);
        let du = len / n_along as f64;
        let dv = 2.0 * half_width / n_across as f64;
        let weight = du * dv;
        let mid = n_across as f64 / 2.0;
        for i in 0..n_along {
            let u = (i as f64 + 0.5) * du;
            for j in 0..n_across {
                let v = (j as f64 + 0.5 - mid) * dv;
                nodes.push(AreaNode {
                    point: Point::new(a.x + u * tx + v * nx, a.y + u * ty + v * ny),
                    weight,
                    dist2: v * v,
                    square: None,
                });
            }
        }
    }
    nodes
}

fn rect_nodes(rect: &Rect, spacing: f64) -> Vec<AreaNode> {
    let nx = ((rect.width() / spacing).ceil() as usize).max(1);
    let ny = ((rect.height() / spacing).ceil() as usize).max(1);
    let dx = rect.width() / nx as f64;
    let dy = rect.height() / ny as f64;
    let mut nodes = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let min = Point::new(rect.min.x + i as f64 * dx, rect.min.y + j as f64 * dy);
            nodes.push(AreaNode {
                point: Point::new(min.x + 0.5 * dx, min.y + 0.5 * dy),
                weight: dx * dy,
                dist2: 0.0,
                square: Some(Rect { min, max: Point::new(min.x + dx, min.y + dy) }),
            });
        }
    }
    nodes
}

fn shape_nodes(shape: &Shape, spacing: f64) -> Result<Vec<AreaNode>> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::Config(format!("quadrature spacing must be positive, got {spacing}")));
    }
    let nodes = match shape {
        Shape::Disk { radius, .. } if spacing > *radius => Vec::new(),
        Shape::Disk { center, radius } => disk_nodes(*center, *radius, spacing),
        Shape::Strip { vertices, half_width } => strip_nodes(vertices, *half_width, spacing),
        Shape::Rect(r) => rect_nodes(r, spacing),
    };
    if nodes.is_empty() {
        return Err(Error::Config(format!("quadrature spacing {spacing} is too coarse for the region")));
    }
    Ok(nodes)
}

pub(crate) fn area_nodes(region: &SampledRegion, spacing: f64) -> Result<Vec<AreaNode>> {
    shape_nodes(&region.shape(), spacing)
}

/// Midpoint rule over a regular sub-grid: centred on the unit for disks,
/// aligned with each segment for strips, aligned with the rectangle otherwise.
pub fn area_rule(shape: &Shape, spacing: f64) -> Result<QuadratureRule> {
    let nodes = shape_nodes(shape, spacing)?;
    Ok(QuadratureRule {
        nodes: nodes.iter().map(|n| n.point).collect(),
        weights: nodes.iter().map(|n| n.weight).collect(),
    })
}

/// Where an observed location is taken to lie given what was recorded.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservedLocationSupport {
    /// Anywhere in the unit's detection or capture region.
    Region(Shape),
    /// The circle of the recorded distance around a point.
    Circle { center: Point, radius: f64 },
    /// The two lines parallel to a transect at the recorded distance,
    /// restricted to the span of each segment.
    ParallelLines { vertices: Vec<Point>, offset: f64 },
}

impl ObservedLocationSupport {
    pub fn region(region: &SampledRegion) -> Self {
        ObservedLocationSupport::Region(region.shape())
    }

    /// Line support for a distance-sampling record. Fails when the recorded
    /// distance is negative or beyond the truncation radius, or when the
    /// unit is a trap.
    pub fn lines(region: &SampledRegion, distance: f64) -> Result<Self> {
        if !(distance.is_finite() && distance >= 0.0) {
            return Err(Error::Data(format!("unit {}: invalid recorded distance {distance}", region.id())));
        }
        if distance > region.radius {
            return Err(Error::Data(format!(
                "unit {}: recorded distance {distance} exceeds truncation radius {}",
                region.id(),
                region.radius
            )));
        }
        match region.kind() {
            UnitKind::Point => {
                Ok(ObservedLocationSupport::Circle { center: region.unit.vertices[0], radius: distance })
            }
            UnitKind::Transect => {
                Ok(ObservedLocationSupport::ParallelLines { vertices: region.unit.vertices.clone(), offset: distance })
            }
            UnitKind::Trap => Err(Error::Data(format!("unit {} is a trap; captures carry no distance", region.id()))),
        }
    }

    /// Area for region supports, length for line supports.
    pub fn measure(&self) -> f64 {
        match self {
            ObservedLocationSupport::Region(shape) => shape.measure(),
            ObservedLocationSupport::Circle { radius, .. } => 2.0 * PI * radius,
            ObservedLocationSupport::ParallelLines { vertices, .. } => {
                2.0 * vertices.windows(2).map(|w| w[0].distance(&w[1])).sum::<f64>()
            }
        }
    }
}

/// Equally spaced nodes on a circle or on both parallel lines of a transect.
/// Weights sum to the support's length.
pub fn line_rule(support: &ObservedLocationSupport, n_nodes: usize) -> Result<QuadratureRule> {
    if n_nodes < 8 {
        return Err(Error::Config(format!("line rules need at least 8 nodes, got {n_nodes}")));
    }
    match support {
        ObservedLocationSupport::Region(_) => {
            Err(Error::Config("line_rule needs a circle or parallel-line support".into()))
        }
        ObservedLocationSupport::Circle { center, radius } => {
            let w = 2.0 * PI * radius / n_nodes as f64;
            let nodes = (0..n_nodes)
                .map(|k| {
                    let angle = 2.0 * PI * (k as f64 + 0.5) / n_nodes as f64;
                    Point::new(center.x + radius * angle.cos(), center.y + radius * angle.sin())
                })
                .collect();
            Ok(QuadratureRule { nodes, weights: vec![w; n_nodes] })
        }
        ObservedLocationSupport::ParallelLines { vertices, offset } => {
            let lengths: Vec<f64> = vertices.windows(2).map(|w| w[0].distance(&w[1])).collect();
            let total: f64 = lengths.iter().sum();
            let per_side = n_nodes.div_ceil(2);
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            for (w, len) in vertices.windows(2).zip(&lengths) {
                let (a, b) = (w[0], w[1]);
                let n_seg = ((per_side as f64 * len / total).round() as usize).max(1);
                let (tx, ty) = ((b.x - a.x) / len, (b.y - a.y) / len);
                let (nx, ny) = (-ty * offset, tx * offset);
                let step = len / n_seg as f64;
                for side in [1.0, -1.0] {
                    for k in 0..n_seg {
                        let u = (k as f64 + 0.5) * step;
                        nodes.push(Point::new(a.x + u * tx + side * nx, a.y + u * ty + side * ny));
                        weights.push(step);
                    }
                }
            }
            Ok(QuadratureRule { nodes, weights })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{distance_to_unit, SurveyUnit};

    fn pt(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn disk_area() {
        let shape = Shape::Disk { center: pt(0.5, 0.5), radius: 0.04 };
        let rule = area_rule(&shape, 0.002).unwrap();
        let exact = PI * 0.04 * 0.04;
        assert!((exact - 0.0050265).abs() < 1e-7);
        assert!((rule.integrate(|_| 1.0) - exact).abs() <= 0.01 * exact);
        assert!(rule.nodes.iter().all(|p| p.distance(&pt(0.5, 0.5)) <= 0.04 + 1e-15));
    }

    #[test]
    fn unit_square_exact() {
        let rule = area_rule(&Shape::Rect(Rect::unit_square()), 0.1).unwrap();
        assert_eq!(rule.len(), 100);
        assert!((rule.integrate(|_| 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn strip_area() {
        let shape = Shape::Strip { vertices: vec![pt(0.2, 0.5), pt(0.5, 0.5)], half_width: 0.02 };
        let rule = area_rule(&shape, 0.001).unwrap();
        assert!((rule.total_weight() - 0.012).abs() < 1e-14);
    }

    #[test]
    fn too_coarse_is_an_error() {
        let shape = Shape::Disk { center: pt(0.5, 0.5), radius: 0.01 };
        assert!(area_rule(&shape, 0.1).is_err());
        assert!(area_rule(&shape, 0.0).is_err());
    }

    #[test]
    fn spacing_refinement_converges() {
        for radius in [0.02, 0.04, 0.3] {
            let exact = PI * radius * radius;
            for div in [4.0, 8.0, 16.0, 32.0, 64.0] {
                let rule = area_rule(&Shape::Disk { center: pt(0.1, -0.2), radius }, radius / div).unwrap();
                let err = (rule.total_weight() - exact).abs();
                let rounding = rule.len() as f64 * f64::EPSILON * exact;
                assert!(err <= rounding, "radius {radius}, div {div}: {err}");
            }
        }
        let strip = Shape::Strip { vertices: vec![pt(0.0, 0.0), pt(0.3, 0.4), pt(0.9, 0.4)], half_width: 0.05 };
        for div in [2.0, 4.0, 8.0, 16.0] {
            let rule = area_rule(&strip, 0.05 / div).unwrap();
            assert!((rule.total_weight() - strip.measure()).abs() <= 1e-13);
        }
    }

    #[test]
    fn circle_rule() {
        let region = SampledRegion::new(SurveyUnit::point("p", pt(0.3, 0.3)).unwrap(), 0.04).unwrap();
        let support = ObservedLocationSupport::lines(&region, 0.02).unwrap();
        let rule = line_rule(&support, 128).unwrap();
        assert!((rule.total_weight() - 2.0 * PI * 0.02).abs() < 1e-15);
        assert!((rule.total_weight() - 0.12566).abs() < 1e-5);
        for p in &rule.nodes {
            assert!((distance_to_unit(p, &region.unit) - 0.02).abs() < 1e-9);
        }
        assert!((rule.mean(|_| 7.5) - 7.5).abs() < 1e-12);
        assert!(line_rule(&support, 7).is_err());
    }

    #[test]
    fn parallel_line_rule() {
        let region =
            SampledRegion::new(SurveyUnit::transect("t", vec![pt(0.2, 0.5), pt(0.5, 0.5)]).unwrap(), 0.15).unwrap();
        let support = ObservedLocationSupport::lines(&region, 0.1).unwrap();
        assert!((support.measure() - 0.6).abs() < 1e-15);
        let rule = line_rule(&support, 128).unwrap();
        assert!((rule.total_weight() - 0.6).abs() < 1e-14);
        for p in &rule.nodes {
            assert!((distance_to_unit(p, &region.unit) - 0.1).abs() < 1e-9);
            assert!(region.contains(p));
        }
        assert!((rule.mean(|_| -2.0) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn distance_beyond_truncation() {
        let region = SampledRegion::new(SurveyUnit::point("p", pt(0.3, 0.3)).unwrap(), 0.04).unwrap();
        assert!(ObservedLocationSupport::lines(&region, 0.05).is_err());
        assert!(ObservedLocationSupport::lines(&region, -0.01).is_err());
        let trap = SampledRegion::new(SurveyUnit::trap("k", pt(0.3, 0.3)).unwrap(), 0.04).unwrap();
        assert!(ObservedLocationSupport::lines(&trap, 0.01).is_err());
    }

    #[test]
    fn zero_distance_circle_mean_is_point_value() {
        let region = SampledRegion::new(SurveyUnit::point("p", pt(0.3, 0.3)).unwrap(), 0.04).unwrap();
        let support = ObservedLocationSupport::lines(&region, 0.0).unwrap();
        let rule = line_rule(&support, 16).unwrap();
        assert_eq!(rule.total_weight(), 0.0);
        assert!((rule.mean(|p| p.x) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn symmetric_disk_nodes_share_distances() {
        let nodes = disk_nodes(pt(0.123, 0.456), 0.04, 0.002);
        let mut distinct: Vec<u64> = nodes.iter().map(|n| n.dist2.to_bits()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        assert!(distinct.len() * 6 < nodes.len());
    }
}
