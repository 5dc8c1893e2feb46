//! Planar convex hulls and the distance queries the cluster engine needs
//! to dilate a hull by a margin and intersect it with cells and venues.

use crate::model::{GeoPoint, Rect};

/// Twice the signed area of triangle (o, a, b); positive for a left turn.
#[inline]
pub fn cross(o: &GeoPoint, a: &GeoPoint, b: &GeoPoint) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

pub fn point_segment_distance(p: &GeoPoint, a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len_sq = dx * dx + dy * dy;
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len_sq).clamp(0.0, 1.0);
    p.distance(&GeoPoint::new(a.x + t * dx, a.y + t * dy))
}

fn on_segment(p: &GeoPoint, a: &GeoPoint, b: &GeoPoint) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

pub fn segments_intersect(a: &GeoPoint, b: &GeoPoint, c: &GeoPoint, d: &GeoPoint) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

pub fn segment_segment_distance(a: &GeoPoint, b: &GeoPoint, c: &GeoPoint, d: &GeoPoint) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Convex hull in counter-clockwise order without collinear vertices.
/// Degenerate inputs give a single vertex (all points equal) or two
/// (all points collinear).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHull {
    vertices: Vec<GeoPoint>,
}

impl ConvexHull {
    /// Andrew's monotone chain.
    pub fn from_points(points: &[GeoPoint]) -> Self {
        let mut pts: Vec<GeoPoint> = points.to_vec();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts.dedup();
        if pts.len() <= 2 {
            return Self { vertices: pts };
        }

        let mut hull: Vec<GeoPoint> = Vec::with_capacity(pts.len() * 2);
        for p in pts.iter() {
            while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        let lower_len = hull.len() + 1;
        for p in pts.iter().rev().skip(1) {
            while hull.len() >= lower_len && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
        Self { vertices: hull }
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Hull edges; a two-vertex hull has one edge, a point hull none.
    pub fn edges(&self) -> impl Iterator<Item = (&GeoPoint, &GeoPoint)> + '_ {
        let n = self.vertices.len();
        let count = match n {
            0 | 1 => 0,
            2 => 1,
            _ => n,
        };
        (0..count).map(move |i| (&self.vertices[i], &self.vertices[(i + 1) % n]))
    }

    /// Closed containment; only polygons (three or more vertices) contain area.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        self.vertices.len() >= 3 && self.edges().all(|(a, b)| cross(a, b, p) >= 0.0)
    }

    pub fn bounding_box(&self) -> Option<Rect> {
        let first = self.vertices.first()?;
        let mut r = Rect { x0: first.x, y0: first.y, x1: first.x, y1: first.y };
        for v in &self.vertices[1..] {
            r.x0 = r.x0.min(v.x);
            r.y0 = r.y0.min(v.y);
            r.x1 = r.x1.max(v.x);
            r.y1 = r.y1.max(v.y);
        }
        Some(r)
    }

    pub fn distance_to_point(&self, p: &GeoPoint) -> f64 {
        match self.vertices.len() {
            0 => f64::INFINITY,
            1 => self.vertices[0].distance(p),
            _ if self.contains(p) => 0.0,
            _ => self.edges().map(|(a, b)| point_segment_distance(p, a, b)).fold(f64::INFINITY, f64::min),
        }
    }

    /// Distance between the filled hull and a closed rectangle.
    pub fn distance_to_rect(&self, r: &Rect) -> f64 {
        match self.vertices.len() {
            0 => return f64::INFINITY,
            1 => return r.distance_to(&self.vertices[0]),
            _ => {}
        }
        if self.vertices.iter().any(|v| r.contains(v)) {
            return 0.0;
        }
        let corners = r.corners();
        if corners.iter().any(|c| self.contains(c)) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for (a, b) in self.edges() {
            for i in 0..4 {
                best = best.min(segment_segment_distance(a, b, &corners[i], &corners[(i + 1) % 4]));
            }
        }
        best
    }
}
