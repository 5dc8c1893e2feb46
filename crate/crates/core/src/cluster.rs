//! Cluster engine: turns fired anonym pairs into cluster events.
//!
//! Per time bucket, pairs are partitioned into single-linkage components at
//! `linkage_radius_m`. A component becomes an event when its number of
//! distinct anonyms reaches the effective threshold (the default, lowered by
//! any venue annotation touching the component). The published region is
//! every cell touching the component's convex hull dilated by `margin_m`,
//! so large rings of reporters cover their empty interior too.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::exec::{self, Exec};
use crate::geometry::ConvexHull;
use crate::model::{count_band, AnonymPair, CellIndex, ClusterEvent, ClusterPolicy, TimeBucket, VenueAnnotation};
use crate::union_find::UnionFind;

/// A single-linkage component within one bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub bucket: TimeBucket,
    pub members: Vec<AnonymPair>,
    pub distinct_count: u32,
}

impl Component {
    fn from_members(bucket: TimeBucket, mut members: Vec<AnonymPair>) -> Self {
        crate::model::canonical_sort(&mut members);
        let distinct_count = members.iter().map(|p| p.anonym).collect::<HashSet<_>>().len() as u32;
        Self { bucket, members, distinct_count }
    }

    pub fn hull(&self) -> ConvexHull {
        ConvexHull::from_points(&self.members.iter().map(|m| m.point).collect::<Vec<_>>())
    }
}

/// An emitted event together with the component that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub event: ClusterEvent,
    pub component: Component,
    pub effective_threshold: u32,
}

/// Single-linkage components over a grid of `linkage_radius_m` buckets:
/// linked points are always in the same or adjacent grid buckets.
pub fn components(pairs: &[AnonymPair], policy: &ClusterPolicy) -> Vec<Component> {
    let Some(first) = pairs.first() else {
        return Vec::new();
    };
    debug_assert!(pairs.iter().all(|p| p.bucket == first.bucket), "pairs span several buckets");
    let eps = policy.linkage_radius_m;
    let key = |p: &AnonymPair| ((p.point.x / eps).floor() as i64, (p.point.y / eps).floor() as i64);

    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pairs.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }

    let mut uf = UnionFind::new(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let (gx, gy) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(cands) = grid.get(&(gx + dx, gy + dy)) else { continue };
                for &j in cands {
                    if j > i && p.point.within(&pairs[j].point, eps) {
                        uf.union(i, j);
                    }
                }
            }
        }
    }

    uf.groups().into_iter().map(|g| Component::from_members(first.bucket, g.into_iter().map(|i| pairs[i]).collect())).collect()
}

/// Minimum of the default threshold and every override whose venue touches
/// the component's dilated hull.
pub fn effective_threshold(component: &Component, venues: &[VenueAnnotation], policy: &ClusterPolicy) -> u32 {
    threshold_for_hull(&component.hull(), venues, policy)
}

fn threshold_for_hull(hull: &ConvexHull, venues: &[VenueAnnotation], policy: &ClusterPolicy) -> u32 {
    venues
        .iter()
        .filter(|v| hull.distance_to_rect(&v.region) <= policy.margin_m)
        .map(|v| v.threshold_override)
        .fold(policy.threshold_default, u32::min)
}

/// Cells whose extent touches the hull dilated by `margin_m`.
pub fn dilated_region(hull: &ConvexHull, policy: &ClusterPolicy) -> BTreeSet<CellIndex> {
    let Some(bb) = hull.bounding_box() else {
        return BTreeSet::new();
    };
    let (s, m) = (policy.cell_size_m, policy.margin_m);
    let cx0 = ((bb.x0 - m) / s).floor() as i64;
    let cy0 = ((bb.y0 - m) / s).floor() as i64;
    let cx1 = ((bb.x1 + m) / s).floor() as i64;
    let cy1 = ((bb.y1 + m) / s).floor() as i64;

    let mut region = BTreeSet::new();
    for cx in cx0..=cx1 {
        for cy in cy0..=cy1 {
            let cell = CellIndex::new(cx, cy);
            if hull.distance_to_rect(&policy.cell_extent(cell)) <= m {
                region.insert(cell);
            }
        }
    }
    region
}

/// Detections for the pairs of one bucket, in canonical event order.
pub fn detect_bucket(pairs: &[AnonymPair], venues: &[VenueAnnotation], policy: &ClusterPolicy) -> Vec<Detection> {
    let mut out: Vec<Detection> = components(pairs, policy)
        .into_iter()
        .filter_map(|component| {
            let hull = component.hull();
            let threshold = threshold_for_hull(&hull, venues, policy);
            if component.distinct_count < threshold {
                return None;
            }
            // Venue overrides may sit below the default; published bands start at the default.
            let band = count_band(component.distinct_count.max(policy.threshold_default), policy).ok()?;
            let region = dilated_region(&hull, policy);
            let event = ClusterEvent::new(component.bucket, region, band, policy.policy_id.clone());
            Some(Detection { event, component, effective_threshold: threshold })
        })
        .collect();
    out.sort_by_key(|d| d.event.canonical_key());
    out
}

/// Cluster events for one bucket's pairs.
pub fn cluster_bucket(pairs: &[AnonymPair], venues: &[VenueAnnotation], policy: &ClusterPolicy) -> Vec<ClusterEvent> {
    detect_bucket(pairs, venues, policy).into_iter().map(|d| d.event).collect()
}

/// Groups pairs by bucket.
pub fn group_by_bucket(pairs: &[AnonymPair]) -> BTreeMap<TimeBucket, Vec<AnonymPair>> {
    let mut by_bucket: BTreeMap<TimeBucket, Vec<AnonymPair>> = BTreeMap::new();
    for p in pairs {
        by_bucket.entry(p.bucket).or_default().push(*p);
    }
    by_bucket
}

/// Clusters every bucket independently; buckets run in parallel under [`Exec::Parallel`].
pub fn detect_all(pairs: &[AnonymPair], venues: &[VenueAnnotation], policy: &ClusterPolicy, exec: Exec) -> Vec<Detection> {
    let groups: Vec<Vec<AnonymPair>> = group_by_bucket(pairs).into_values().collect();
    exec::map(exec, &groups, |g| detect_bucket(g, venues, policy)).into_iter().flatten().collect()
}

/// Independent O(n²) reference implementation used as a testing oracle.
///
/// Components come from breadth-first search over the full adjacency
/// matrix, hulls from gift wrapping, and cell/venue tests from
/// vertex-to-edge distances in both directions. None of this shares code
/// with the grid path beyond the linkage predicate and the band table.
pub mod brute_force {
    use super::*;
    use crate::geometry::point_segment_distance;
    use crate::model::{GeoPoint, Rect};

    fn orient(o: &GeoPoint, a: &GeoPoint, b: &GeoPoint) -> f64 {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    }

    /// Jarvis march; returns vertices without collinear points.
    pub fn gift_wrap(points: &[GeoPoint]) -> Vec<GeoPoint> {
        let mut pts: Vec<GeoPoint> = Vec::new();
        for p in points {
            if !pts.contains(p) {
                pts.push(*p);
            }
        }
        if pts.len() <= 1 {
            return pts;
        }
        let start = (0..pts.len()).min_by(|&a, &b| pts[a].x.total_cmp(&pts[b].x).then(pts[a].y.total_cmp(&pts[b].y))).unwrap();
        let mut hull = vec![start];
        let mut current = start;
        loop {
            let mut next = if current == 0 { 1 } else { 0 };
            for i in 0..pts.len() {
                if i == current {
                    continue;
                }
                let o = orient(&pts[current], &pts[next], &pts[i]);
                // Take the most clockwise candidate; on ties the farthest one.
                if o < 0.0 || (o == 0.0 && pts[current].distance_sq(&pts[i]) > pts[current].distance_sq(&pts[next])) {
                    next = i;
                }
            }
            if next == start {
                break;
            }
            hull.push(next);
            current = next;
            if hull.len() > pts.len() {
                break;
            }
        }
        hull.into_iter().map(|i| pts[i]).collect()
    }

    fn inside(poly: &[GeoPoint], p: &GeoPoint) -> bool {
        if poly.len() < 3 {
            return false;
        }
        let n = poly.len();
        // Gift wrapping yields clockwise order; accept either orientation.
        let signs: Vec<f64> = (0..n).map(|i| orient(&poly[i], &poly[(i + 1) % n], p)).collect();
        signs.iter().all(|&s| s >= 0.0) || signs.iter().all(|&s| s <= 0.0)
    }

    fn poly_edges(poly: &[GeoPoint]) -> Vec<(GeoPoint, GeoPoint)> {
        match poly.len() {
            0 | 1 => vec![],
            2 => vec![(poly[0], poly[1])],
            n => (0..n).map(|i| (poly[i], poly[(i + 1) % n])).collect(),
        }
    }

    fn crosses(a: &GeoPoint, b: &GeoPoint, c: &GeoPoint, d: &GeoPoint) -> bool {
        let o1 = orient(a, b, c);
        let o2 = orient(a, b, d);
        let o3 = orient(c, d, a);
        let o4 = orient(c, d, b);
        o1 * o2 < 0.0 && o3 * o4 < 0.0
    }

    /// Distance from a filled convex polygon (any vertex count) to a rectangle.
    pub fn poly_rect_distance(poly: &[GeoPoint], r: &Rect) -> f64 {
        if poly.is_empty() {
            return f64::INFINITY;
        }
        let corners = r.corners();
        if poly.iter().any(|v| r.contains(v)) || corners.iter().any(|c| inside(poly, c)) {
            return 0.0;
        }
        let rect_edges: Vec<(GeoPoint, GeoPoint)> = (0..4).map(|i| (corners[i], corners[(i + 1) % 4])).collect();
        let edges = poly_edges(poly);
        if edges.iter().any(|(a, b)| rect_edges.iter().any(|(c, d)| crosses(a, b, c, d))) {
            return 0.0;
        }
        let from_vertices = poly.iter().map(|v| r.distance_to(v)).fold(f64::INFINITY, f64::min);
        let from_corners = corners
            .iter()
            .flat_map(|c| edges.iter().map(move |(a, b)| point_segment_distance(c, a, b)))
            .fold(f64::INFINITY, f64::min);
        from_vertices.min(from_corners)
    }

    pub fn components(pairs: &[AnonymPair], policy: &ClusterPolicy) -> Vec<Vec<AnonymPair>> {
        let n = pairs.len();
        let adj: Vec<Vec<bool>> =
            (0..n).map(|i| (0..n).map(|j| pairs[i].point.within(&pairs[j].point, policy.linkage_radius_m)).collect()).collect();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            let mut queue = std::collections::VecDeque::from([s]);
            seen[s] = true;
            let mut members = Vec::new();
            while let Some(i) = queue.pop_front() {
                members.push(pairs[i]);
                for j in 0..n {
                    if adj[i][j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            out.push(members);
        }
        out
    }

    pub fn effective_threshold(members: &[AnonymPair], venues: &[VenueAnnotation], policy: &ClusterPolicy) -> u32 {
        let hull = gift_wrap(&members.iter().map(|m| m.point).collect::<Vec<_>>());
        let mut t = policy.threshold_default;
        for v in venues {
            if poly_rect_distance(&hull, &v.region) <= policy.margin_m {
                t = t.min(v.threshold_override);
            }
        }
        t
    }

    pub fn brute_force_cluster(pairs: &[AnonymPair], venues: &[VenueAnnotation], policy: &ClusterPolicy) -> Vec<ClusterEvent> {
        let mut events = Vec::new();
        for members in components(pairs, policy) {
            let mut distinct: Vec<_> = members.iter().map(|m| m.anonym).collect();
            distinct.sort();
            distinct.dedup();
            let count = distinct.len() as u32;
            if count < effective_threshold(&members, venues, policy) {
                continue;
            }
            let band = *policy
                .bands
                .iter()
                .find(|b| b.contains(count.max(policy.threshold_default)))
                .expect("bands cover every publishable count");

            let points: Vec<GeoPoint> = members.iter().map(|m| m.point).collect();
            let hull = gift_wrap(&points);
            let s = policy.cell_size_m;
            let lo_x = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
            let lo_y = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            let hi_x = points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
            let hi_y = points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
            let reach = policy.margin_m + s;
            let mut region = BTreeSet::new();
            for cx in ((lo_x - reach) / s).floor() as i64..=((hi_x + reach) / s).ceil() as i64 {
                for cy in ((lo_y - reach) / s).floor() as i64..=((hi_y + reach) / s).ceil() as i64 {
                    let cell = CellIndex::new(cx, cy);
                    if poly_rect_distance(&hull, &policy.cell_extent(cell)) <= policy.margin_m {
                        region.insert(cell);
                    }
                }
            }
            events.push(ClusterEvent::new(members[0].bucket, region, band, policy.policy_id.clone()));
        }
        events.sort_by_key(|e| e.canonical_key());
        events
    }
}
