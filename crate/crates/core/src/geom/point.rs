use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::Real;

/// A point in normalized tile space. `y` grows downward, like image rows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn origin() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, other: Self) -> T {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(self, other: Self) -> T {
        (self - other).norm_sq()
    }

    pub fn dist(self, other: Self) -> T {
        self.dist_sq(other).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Lexicographic "top-left first" key: smaller `y` wins, then smaller `x`.
    pub fn top_left_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.y
            .partial_cmp(&other.y)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(self.x.partial_cmp(&other.x).unwrap_or(std::cmp::Ordering::Equal))
    }

    /// Interpolates `self + t * (other - self)`.
    pub fn lerp(self, other: Self, t: T) -> Self {
        Self::new(
            self.x + t * (other.x - self.x),
            self.y + t * (other.y - self.y),
        )
    }

    pub fn cast<U: Real>(self) -> Point2<U> {
        Point2::new(U::lit(self.x.to_f64_lossy()), U::lit(self.y.to_f64_lossy()))
    }
}

impl<T: Real> Add for Point2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Real> Sub for Point2<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Real> Mul<T> for Point2<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

impl<T: Real> Neg for Point2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// A closed straight segment between two points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<T> {
    pub a: Point2<T>,
    pub b: Point2<T>,
}

impl<T: Real> Segment<T> {
    pub fn new(a: Point2<T>, b: Point2<T>) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> T {
        self.a.dist(self.b)
    }

    /// Squared distance from `p` to the closest point of the segment.
    pub fn dist_sq_to(&self, p: Point2<T>) -> T {
        let d = self.b - self.a;
        let len_sq = d.norm_sq();
        if len_sq == T::zero() {
            return p.dist_sq(self.a);
        }
        let t = ((p - self.a).dot(d) / len_sq).max(T::zero()).min(T::one());
        let q = self.a.lerp(self.b, t);
        p.dist_sq(q)
    }
}

/// A map segment in geographic degrees, `(longitude, latitude)` per endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoSegment {
    pub start: (f64, f64),
    pub end: (f64, f64),
}

impl GeoSegment {
    pub fn new(start: (f64, f64), end: (f64, f64)) -> Self {
        Self { start, end }
    }

    pub fn is_valid(&self) -> bool {
        let finite = [self.start.0, self.start.1, self.end.0, self.end.1]
            .iter()
            .all(|v| v.is_finite());
        finite && self.start != self.end
    }

    /// Treats degrees as planar coordinates (`x = lon`, `y = lat`).
    pub fn to_segment(&self) -> Segment<f64> {
        Segment::new(
            Point2::new(self.start.0, self.start.1),
            Point2::new(self.end.0, self.end.1),
        )
    }
}

/// Proper crossing point of two segments.
///
/// Returns `None` when the segments are parallel, disjoint, collinear or only
/// touch at an endpoint. Collinear overlaps are left to node merging.
pub fn intersect_segments<T: Real>(s: &Segment<T>, r: &Segment<T>) -> Option<Point2<T>> {
    let d1 = s.b - s.a;
    let d2 = r.b - r.a;
    let o1 = d1.cross(r.a - s.a);
    let o2 = d1.cross(r.b - s.a);
    let o3 = d2.cross(s.a - r.a);
    let o4 = d2.cross(s.b - r.a);
    let z = T::zero();
    let straddles = |p: T, q: T| (p > z && q < z) || (p < z && q > z);
    if !(straddles(o1, o2) && straddles(o3, o4)) {
        return None;
    }
    let denom = d1.cross(d2);
    if denom == z {
        return None;
    }
    let t = (r.a - s.a).cross(d2) / denom;
    Some(s.a.lerp(s.b, t))
}

/// Geographic variant of [`intersect_segments`].
pub fn intersect_geo_segments(a: &GeoSegment, b: &GeoSegment) -> Option<Point2<f64>> {
    intersect_segments(&a.to_segment(), &b.to_segment())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: (f64, f64), b: (f64, f64)) -> Segment<f64> {
        Segment::new(Point2::new(a.0, a.1), Point2::new(b.0, b.1))
    }

    #[test]
    fn symmetric_cross() {
        let p = intersect_segments(&seg((-1., 0.), (1., 0.)), &seg((0., -1.), (0., 1.)));
        assert_eq!(p, Some(Point2::new(0.0, 0.0)));
    }

    #[test]
    fn disjoint_collinear() {
        assert!(intersect_segments(&seg((0., 0.), (1., 0.)), &seg((2., 0.), (3., 0.))).is_none());
    }

    #[test]
    fn diagonal_cross() {
        // (0,0)+t(2,2) = (0,2)+s(2,-2) gives t = s = 1/2.
        let p = intersect_segments(&seg((0., 0.), (2., 2.)), &seg((0., 2.), (2., 0.))).unwrap();
        assert!((p.x - 1.0).abs() < 1e-15 && (p.y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn endpoint_touch_and_parallel() {
        assert!(intersect_segments(&seg((0., 0.), (1., 0.)), &seg((1., 0.), (1., 1.))).is_none());
        assert!(intersect_segments(&seg((0., 0.), (1., 0.)), &seg((0., 1.), (1., 1.))).is_none());
        // T-junction: endpoint on the interior is not a proper crossing.
        assert!(intersect_segments(&seg((0., 0.), (2., 0.)), &seg((1., 0.), (1., 1.))).is_none());
        // collinear overlap
        assert!(intersect_segments(&seg((0., 0.), (2., 0.)), &seg((1., 0.), (3., 0.))).is_none());
    }

    #[test]
    fn geo_and_f32() {
        let a = GeoSegment::new((-1., 0.), (1., 0.));
        let b = GeoSegment::new((0., -1.), (0., 1.));
        assert_eq!(intersect_geo_segments(&a, &b), Some(Point2::new(0.0, 0.0)));
        let s = Segment::new(Point2::new(0f32, 0.), Point2::new(2., 2.));
        let r = Segment::new(Point2::new(0f32, 2.), Point2::new(2., 0.));
        assert_eq!(intersect_segments(&s, &r), Some(Point2::new(1.0f32, 1.0)));
    }

    #[test]
    fn point_segment_distance() {
        let s = seg((0., 0.), (2., 0.));
        assert_eq!(s.dist_sq_to(Point2::new(1., 1.)), 1.0);
        assert_eq!(s.dist_sq_to(Point2::new(3., 0.)), 1.0);
        assert_eq!(s.dist_sq_to(Point2::new(-1., 1.)), 2.0);
    }
}
