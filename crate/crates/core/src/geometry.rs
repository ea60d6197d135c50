//! Planar geometry: vectors, oriented rectangles and route polylines.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotates a world-frame vector into a frame with the given heading.
    pub fn to_local(self, heading: f64) -> Vec2 {
        let (s, c) = heading.sin_cos();
        Vec2::new(c * self.x + s * self.y, -s * self.x + c * self.y)
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

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// An oriented rectangle given by its center, heading and half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
        }
    }

    pub fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_angle(self.heading);
        [u, u.perp()]
    }

    /// Corners in counter-clockwise order starting at front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let l = u * self.half_length;
        let w = v * self.half_width;
        let c = self.center;
        [c + l + w, c - l + w, c - l - w, c + l - w]
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let [u, v] = self.axes();
        let c = self.center.dot(axis);
        let r = self.half_length * u.dot(axis).abs() + self.half_width * v.dot(axis).abs();
        (c - r, c + r)
    }

    /// Point containment, boundary included.
    pub fn contains(&self, p: Vec2) -> bool {
        let local = (p - self.center).to_local(self.heading);
        local.x.abs() <= self.half_length && local.y.abs() <= self.half_width
    }

    /// Separating-axis overlap test. Touching rectangles do not intersect.
    pub fn intersects(&self, other: &Obb) -> bool {
        self.min_overlap(other) > 0.0
    }

    /// Smallest projected overlap over the four candidate axes. Negative
    /// values are a separation along the best separating axis.
    pub fn min_overlap(&self, other: &Obb) -> f64 {
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        [a0, a1, b0, b1]
            .into_iter()
            .map(|axis| {
                let (amin, amax) = self.project(axis);
                let (bmin, bmax) = other.project(axis);
                amax.min(bmax) - amin.max(bmin)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Euclidean distance between the two rectangles; zero when they overlap.
    pub fn distance(&self, other: &Obb) -> f64 {
        if self.min_overlap(other) >= 0.0 {
            return 0.0;
        }
        let ca = self.corners();
        let cb = other.corners();
        let mut best = f64::INFINITY;
        for i in 0..4 {
            let (a0, a1) = (ca[i], ca[(i + 1) % 4]);
            let (b0, b1) = (cb[i], cb[(i + 1) % 4]);
            for p in cb {
                best = best.min(point_segment_distance(p, a0, a1));
            }
            for p in ca {
                best = best.min(point_segment_distance(p, b0, b1));
            }
        }
        best
    }

    /// Centroid of the overlap polygon, if the rectangles intersect.
    pub fn overlap_centroid(&self, other: &Obb) -> Option<Vec2> {
        if !self.intersects(other) {
            return None;
        }
        let poly = clip_convex(&self.corners(), &other.corners());
        polygon_centroid(&poly).or_else(|| {
            // Degenerate sliver: fall back to the midpoint of the centers.
            Some((self.center + other.center) * 0.5)
        })
    }
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sq();
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t - p).norm()
}

/// Sutherland-Hodgman clipping of a convex polygon by a counter-clockwise
/// convex clip polygon.
fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (c0, c1) = (clip[i], clip[(i + 1) % clip.len()]);
        let edge = c1 - c0;
        let inside = |p: Vec2| edge.cross(p - c0) >= 0.0;
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (ci, pi) = (inside(cur), inside(prev));
            if ci != pi {
                let d = cur - prev;
                let denom = edge.cross(d);
                if denom != 0.0 {
                    let t = edge.cross(c0 - prev) / denom;
                    out.push(prev + d * t);
                }
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

fn polygon_centroid(poly: &[Vec2]) -> Option<Vec2> {
    if poly.len() < 3 {
        return None;
    }
    let mut area2 = 0.0;
    let mut acc = Vec2::ZERO;
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        let w = p.cross(q);
        area2 += w;
        acc = acc + (p + q) * w;
    }
    if area2.abs() < 1e-12 {
        return None;
    }
    Some(acc * (1.0 / (3.0 * area2)))
}

/// Position of a point expressed relative to a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arclength of the foot point; may run past either end.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
    pub segment: usize,
}

/// A polyline with cumulative arclength, used for routes and centerlines.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Builds a polyline, dropping consecutive duplicate points.
    pub fn new(points: Vec<Vec2>) -> Option<Self> {
        let mut pts: Vec<Vec2> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().is_none_or(|q: &Vec2| (p - *q).norm() > 1e-9) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return None;
        }
        let mut cumulative = Vec::with_capacity(pts.len());
        cumulative.push(0.0);
        for w in pts.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + (w[1] - w[0]).norm());
        }
        Some(Self {
            points: pts,
            cumulative,
        })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        }
    }

    /// Point at arclength `s`, extrapolated linearly past either end.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        a + (b - a) * ((s - self.cumulative[i]) / seg_len)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s);
        (self.points[i + 1] - self.points[i]).angle()
    }

    /// Orthogonal projection onto the closest segment. The first and last
    /// segments are treated as rays so points beyond the ends get `s` outside
    /// `[0, length]`.
    pub fn project(&self, p: Vec2) -> Projection {
        self.project_in(p, 0, self.points.len() - 1)
    }

    /// Projection restricted to segments whose span intersects
    /// `[s_lo, s_hi]`; used for incremental tracking.
    pub fn project_near(&self, p: Vec2, s_lo: f64, s_hi: f64) -> Projection {
        let lo = self.segment_at(s_lo);
        let hi = self.segment_at(s_hi) + 1;
        self.project_in(p, lo, hi)
    }

    fn project_in(&self, p: Vec2, lo: usize, hi: usize) -> Projection {
        let last = self.points.len() - 2;
        let mut best = Projection {
            s: 0.0,
            lateral: f64::INFINITY,
            segment: lo,
        };
        let mut best_d2 = f64::INFINITY;
        for i in lo..hi.min(last + 1) {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let ab = b - a;
            let len = self.cumulative[i + 1] - self.cumulative[i];
            let mut t = (p - a).dot(ab) / (len * len);
            let t_min = if i == 0 { f64::NEG_INFINITY } else { 0.0 };
            let t_max = if i == last { f64::INFINITY } else { 1.0 };
            t = t.clamp(t_min, t_max);
            let foot = a + ab * t;
            let d2 = (p - foot).norm_sq();
            if d2 < best_d2 {
                best_d2 = d2;
                let lateral = ab.cross(p - a) / len;
                best = Projection {
                    s: self.cumulative[i] + t * len,
                    lateral,
                    segment: i,
                };
            }
        }
        best
    }
}
