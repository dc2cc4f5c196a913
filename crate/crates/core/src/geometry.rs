//! Planar geometry primitives used by every check in the harness.
//!
//! Everything is double precision. Degeneracy tests share the single
//! tolerance [`EPS`]; touching boundaries count as contact/containment.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Global tolerance for degeneracy and boundary tests, in meters.
pub const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Vec2::new(c, s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        Vec2::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Signed shortest-arc difference `to - from`, in (-π, π].
pub fn angle_diff(to: f64, from: f64) -> f64 {
    normalize_angle(to - from)
}

/// A directed segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[Vec2; 2]", into = "[Vec2; 2]")]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub const fn new(a: Vec2, b: Vec2) -> Self {
        Segment { a, b }
    }

    pub fn dir(&self) -> Vec2 {
        self.b - self.a
    }

    pub fn length(&self) -> f64 {
        self.dir().norm()
    }

    pub fn midpoint(&self) -> Vec2 {
        self.a.lerp(self.b, 0.5)
    }

    /// Closest-point parameter in [0, 1].
    pub fn closest_param(&self, p: Vec2) -> f64 {
        let d = self.dir();
        let l2 = d.norm_sq();
        if l2 <= EPS * EPS {
            return 0.0;
        }
        ((p - self.a).dot(d) / l2).clamp(0.0, 1.0)
    }

    pub fn distance_to(&self, p: Vec2) -> f64 {
        let t = self.closest_param(p);
        self.a.lerp(self.b, t).dist(p)
    }
}

impl From<[Vec2; 2]> for Segment {
    fn from(a: [Vec2; 2]) -> Self {
        Segment::new(a[0], a[1])
    }
}

impl From<Segment> for [Vec2; 2] {
    fn from(s: Segment) -> Self {
        [s.a, s.b]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate segment (length below {EPS})")]
    DegenerateSegment,
}

/// Side of `p` relative to the directed segment: +1 left, -1 right, 0 on the
/// supporting line (within [`EPS`] of it).
pub fn signed_side(seg: &Segment, p: Vec2) -> Result<i8, GeometryError> {
    let d = seg.dir();
    let len = d.norm();
    if len <= EPS {
        return Err(GeometryError::DegenerateSegment);
    }
    let c = d.cross(p - seg.a);
    if c.abs() <= EPS * len {
        Ok(0)
    } else if c > 0.0 {
        Ok(1)
    } else {
        Ok(-1)
    }
}

/// Orientation of the triple with the shared tolerance: +1 ccw, -1 cw, 0 collinear.
fn orient(a: Vec2, b: Vec2, c: Vec2) -> i8 {
    let ab = b - a;
    let len = ab.norm().max(EPS);
    let v = ab.cross(c - a);
    if v.abs() <= EPS * len {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

fn on_segment_collinear(s: &Segment, p: Vec2) -> bool {
    p.x >= s.a.x.min(s.b.x) - EPS
        && p.x <= s.a.x.max(s.b.x) + EPS
        && p.y >= s.a.y.min(s.b.y) - EPS
        && p.y <= s.a.y.max(s.b.y) + EPS
}

/// Closed segment-segment intersection test (touching counts).
pub fn segments_intersect(s: &Segment, t: &Segment) -> bool {
    let o1 = orient(s.a, s.b, t.a);
    let o2 = orient(s.a, s.b, t.b);
    let o3 = orient(t.a, t.b, s.a);
    let o4 = orient(t.a, t.b, s.b);
    if o1 != o2 && o3 != o4 && o1 * o2 <= 0 && o3 * o4 <= 0 {
        return true;
    }
    (o1 == 0 && on_segment_collinear(s, t.a))
        || (o2 == 0 && on_segment_collinear(s, t.b))
        || (o3 == 0 && on_segment_collinear(t, s.a))
        || (o4 == 0 && on_segment_collinear(t, s.b))
}

/// Intersection points of two closed segments. Proper crossings yield one
/// point; collinear overlaps yield the overlap endpoints.
pub fn segment_intersection_points(s: &Segment, t: &Segment) -> Vec<Vec2> {
    if !segments_intersect(s, t) {
        return Vec::new();
    }
    let r = s.dir();
    let q = t.dir();
    let denom = r.cross(q);
    let scale = r.norm() * q.norm();
    if denom.abs() > EPS * scale.max(EPS) {
        let u = ((t.a - s.a).cross(q) / denom).clamp(0.0, 1.0);
        return vec![s.a + r * u];
    }
    // Collinear (or degenerate): collect endpoints lying on the other segment.
    let mut pts = Vec::new();
    for p in [s.a, s.b] {
        if t.distance_to(p) <= EPS * 10.0 {
            pts.push(p);
        }
    }
    for p in [t.a, t.b] {
        if s.distance_to(p) <= EPS * 10.0 {
            pts.push(p);
        }
    }
    pts
}

/// Total arc length of a polyline.
pub fn polyline_length(line: &[Vec2]) -> f64 {
    line.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Cumulative arc length at each vertex (first entry 0).
pub fn cumulative_lengths(line: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(line.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in line.windows(2) {
        acc += w[0].dist(w[1]);
        out.push(acc);
    }
    out
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point from the polyline start.
    pub s: f64,
    /// Signed lateral offset; positive left of the travel direction.
    pub d: f64,
    pub foot: Vec2,
    pub segment: usize,
}

impl Projection {
    pub fn distance(&self) -> f64 {
        self.d.abs()
    }
}

/// Projects `p` onto `line`, minimizing distance. Exact ties go to the smaller
/// arc length. A single-point polyline projects onto that point.
pub fn project_onto_polyline(line: &[Vec2], p: Vec2) -> Projection {
    assert!(!line.is_empty(), "polyline must have at least one point");
    if line.len() == 1 {
        return Projection {
            s: 0.0,
            d: line[0].dist(p),
            foot: line[0],
            segment: 0,
        };
    }
    let mut best: Option<(f64, Projection)> = None;
    let mut acc = 0.0;
    for (i, w) in line.windows(2).enumerate() {
        let seg = Segment::new(w[0], w[1]);
        let len = seg.length();
        let t = seg.closest_param(p);
        let foot = w[0].lerp(w[1], t);
        let dist = foot.dist(p);
        let better = match &best {
            None => true,
            Some((bd, _)) => dist < *bd,
        };
        if better {
            let side = seg.dir().cross(p - w[0]);
            let d = if side < 0.0 { -dist } else { dist };
            best = Some((
                dist,
                Projection {
                    s: acc + t * len,
                    d,
                    foot,
                    segment: i,
                },
            ));
        }
        acc += len;
    }
    let (_, mut proj) = best.expect("non-empty polyline");
    let total = acc;
    proj.s = proj.s.clamp(0.0, total);
    proj
}

/// Point at arc length `s` along the polyline, clamped to its ends.
pub fn point_at_arclength(line: &[Vec2], s: f64) -> Vec2 {
    if line.len() == 1 || s <= 0.0 {
        return line[0];
    }
    let mut acc = 0.0;
    for w in line.windows(2) {
        let len = w[0].dist(w[1]);
        if acc + len >= s {
            let t = if len > 0.0 { (s - acc) / len } else { 0.0 };
            return w[0].lerp(w[1], t);
        }
        acc += len;
    }
    *line.last().unwrap()
}

/// Heading of the polyline segment containing arc length `s`.
pub fn heading_at_arclength(line: &[Vec2], s: f64) -> f64 {
    let mut acc = 0.0;
    let mut last = 0.0;
    for w in line.windows(2) {
        let len = w[0].dist(w[1]);
        if len <= EPS {
            continue;
        }
        last = (w[1] - w[0]).angle();
        if acc + len >= s {
            return last;
        }
        acc += len;
    }
    last
}

/// Sub-polyline from arc length `s` to the end.
pub fn polyline_tail(line: &[Vec2], s: f64) -> Vec<Vec2> {
    let mut out = vec![point_at_arclength(line, s)];
    let mut acc = 0.0;
    for w in line.windows(2) {
        acc += w[0].dist(w[1]);
        if acc > s + EPS {
            out.push(w[1]);
        }
    }
    if out.len() == 1 {
        out.push(*line.last().unwrap());
        if out[0].dist(out[1]) <= EPS {
            out.pop();
        }
    }
    out
}

/// Resamples a polyline at a fixed arc-length step; always keeps both ends.
/// The final interval is merged into the previous one when shorter than
/// `min_last`.
pub fn resample_polyline(line: &[Vec2], step: f64, min_last: f64) -> Vec<Vec2> {
    let total = polyline_length(line);
    let mut out = vec![line[0]];
    let mut s = step;
    while s < total - EPS {
        out.push(point_at_arclength(line, s));
        s += step;
    }
    let end = *line.last().unwrap();
    if out.len() > 1 && out.last().unwrap().dist(end) < min_last {
        out.pop();
    }
    if out.last().unwrap().dist(end) > EPS || out.len() == 1 {
        out.push(end);
    }
    out
}

/// Rectangle footprint with center, heading, length along heading and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        OrientedBox {
            center,
            heading,
            length,
            width,
        }
    }

    pub fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_angle(self.heading);
        [u, u.perp()]
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let hl = u * (self.length / 2.0);
        let hw = v * (self.width / 2.0);
        [
            self.center + hl + hw,
            self.center - hl + hw,
            self.center - hl - hw,
            self.center + hl - hw,
        ]
    }

    pub fn edges(&self) -> [Segment; 4] {
        let c = self.corners();
        [
            Segment::new(c[0], c[1]),
            Segment::new(c[1], c[2]),
            Segment::new(c[2], c[3]),
            Segment::new(c[3], c[0]),
        ]
    }

    /// Point expressed in the box frame (x along heading).
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.center).rotate(-self.heading)
    }

    /// Closed containment test.
    pub fn contains(&self, p: Vec2) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.length / 2.0 + EPS && q.y.abs() <= self.width / 2.0 + EPS
    }

    /// Strict interior test.
    pub fn contains_strict(&self, p: Vec2) -> bool {
        let q = self.to_local(p);
        q.x.abs() < self.length / 2.0 - EPS && q.y.abs() < self.width / 2.0 - EPS
    }

    /// `n` points spread evenly around the perimeter, starting at the
    /// front-left corner. With n = 8 these are the corners and edge midpoints.
    pub fn perimeter_points(&self, n: usize) -> Vec<Vec2> {
        let edges = self.edges();
        let lens: Vec<f64> = edges.iter().map(|e| e.length()).collect();
        let perim: f64 = lens.iter().sum();
        (0..n)
            .map(|k| {
                let mut s = perim * k as f64 / n as f64;
                for (e, &l) in edges.iter().zip(&lens) {
                    if s <= l {
                        return e.a.lerp(e.b, if l > 0.0 { s / l } else { 0.0 });
                    }
                    s -= l;
                }
                edges[3].b
            })
            .collect()
    }
}

fn project_box(b: &OrientedBox, axis: Vec2) -> (f64, f64) {
    let c = b.center.dot(axis);
    let [u, v] = b.axes();
    let r = (b.length / 2.0) * u.dot(axis).abs() + (b.width / 2.0) * v.dot(axis).abs();
    (c - r, c + r)
}

/// Separating-axis overlap test for two closed rectangles. Touching within
/// [`EPS`] counts as intersecting.
pub fn obb_intersects(a: &OrientedBox, b: &OrientedBox) -> bool {
    let [a0, a1] = a.axes();
    let [b0, b1] = b.axes();
    for axis in [a0, a1, b0, b1] {
        let (amin, amax) = project_box(a, axis);
        let (bmin, bmax) = project_box(b, axis);
        if amax < bmin - EPS || bmax < amin - EPS {
            return false;
        }
    }
    true
}

/// Minimum Euclidean distance between two rectangles (0 when they overlap).
pub fn obb_distance(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if obb_intersects(a, b) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for e in a.edges() {
        for c in b.corners() {
            best = best.min(e.distance_to(c));
        }
    }
    for e in b.edges() {
        for c in a.corners() {
            best = best.min(e.distance_to(c));
        }
    }
    best
}

/// Nearest hit of the open segment `origin -> target` with any obstacle.
/// Returns the obstacle index and the hit distance from the origin. Obstacles
/// containing the origin are ignored.
pub fn ray_first_hit(origin: Vec2, target: Vec2, obstacles: &[OrientedBox]) -> Option<(usize, f64)> {
    let total = origin.dist(target);
    if total <= EPS {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, ob) in obstacles.iter().enumerate() {
        if ob.contains(origin) {
            continue;
        }
        if let Some(t) = segment_box_entry(origin, target, ob) {
            if t < 1.0 - EPS / total {
                let dist = t * total;
                if best.map_or(true, |(_, bd)| dist < bd) {
                    best = Some((i, dist));
                }
            }
        }
    }
    best
}

/// Liang-Barsky clip of `p0 -> p1` against the box in its local frame.
/// Returns the entry parameter in [0, 1] if the segment touches the box.
fn segment_box_entry(p0: Vec2, p1: Vec2, b: &OrientedBox) -> Option<f64> {
    let a = b.to_local(p0);
    let d = b.to_local(p1) - a;
    let hx = b.length / 2.0;
    let hy = b.width / 2.0;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-d.x, a.x + hx),
        (d.x, hx - a.x),
        (-d.y, a.y + hy),
        (d.y, hy - a.y),
    ] {
        if p.abs() < 1e-15 {
            if q < -EPS {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return None;
            }
        }
    }
    Some(t0)
}

/// Closed point-in-polygon test: boundary points (within [`EPS`]) are inside,
/// otherwise the nonzero winding rule decides.
pub fn point_in_polygon(poly: &[Vec2], p: Vec2) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut winding = 0i32;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if Segment::new(a, b).distance_to(p) <= EPS {
            return true;
        }
        let side = (b - a).cross(p - a);
        if a.y <= p.y {
            if b.y > p.y && side > 0.0 {
                winding += 1;
            }
        } else if b.y <= p.y && side < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

/// True if the polygon has no self-intersections between non-adjacent edges.
pub fn polygon_is_simple(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let edges: Vec<Segment> = (0..n).map(|i| Segment::new(poly[i], poly[(i + 1) % n])).collect();
    if edges.iter().any(|e| e.length() <= EPS) {
        return false;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Adjacent edges may only share their common vertex.
                let (e, f) = (&edges[i], &edges[j]);
                let cross = e.dir().cross(f.dir());
                if cross.abs() <= EPS * e.length() * f.length() && e.dir().dot(f.dir()) < 0.0 {
                    return false; // folds back on itself
                }
                continue;
            }
            if segments_intersect(&edges[i], &edges[j]) {
                return false;
            }
        }
    }
    true
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, no collinear points.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a.dist(*b) <= EPS);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2
            && (lower[lower.len() - 1] - lower[lower.len() - 2]).cross(p - lower[lower.len() - 2]) <= EPS
        {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2
            && (upper[upper.len() - 1] - upper[upper.len() - 2]).cross(p - upper[upper.len() - 2]) <= EPS
        {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Axis-aligned bounds `(min, max)` of a point set.
pub fn bounds(points: impl IntoIterator<Item = Vec2>) -> Option<(Vec2, Vec2)> {
    let mut it = points.into_iter();
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), p| {
        (
            Vec2::new(lo.x.min(p.x), lo.y.min(p.y)),
            Vec2::new(hi.x.max(p.x), hi.y.max(p.y)),
        )
    }))
}
