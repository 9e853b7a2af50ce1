//! Poincaré-disk primitives: points, geodesics, isometries and horocycles.
//!
//! Everything here is exact closed-form arithmetic in disk coordinates. The
//! metric is `4 |dz|² / (1 - |z|²)²`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Complex number type used for disk coordinates.
pub type C64 = Complex64;

/// Endpoints closer to the line through the origin than this are treated as a
/// diameter.
pub const COLLINEAR_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HyperbolicError {
    #[error("point {0} is not strictly inside the unit disk")]
    OutsideDisk(C64),
    #[error("geodesic endpoints coincide")]
    CoincidentEndpoints,
    #[error("distance to an ideal point is infinite")]
    IdealDistance,
    #[error("point lies inside the horodisk")]
    InsideHorodisk,
    #[error("horocycle is not based at an endpoint of the geodesic")]
    HorocycleNotAtEndpoint,
    #[error("horodisks overlap (truncated length {0})")]
    OverlappingHorodisks(f64),
    #[error("horocycle size out of range: {0}")]
    InvalidHorocycle(f64),
    #[error("truncated length needs a geodesic with two ideal endpoints")]
    NotIdealGeodesic,
}

/// A point of the open unit disk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct DiskPoint(C64);

impl DiskPoint {
    pub const ORIGIN: DiskPoint = DiskPoint(C64 { re: 0.0, im: 0.0 });

    pub fn new(z: C64) -> Result<Self, HyperbolicError> {
        if z.re.is_finite() && z.im.is_finite() && z.norm_sqr() < 1.0 {
            Ok(DiskPoint(z))
        } else {
            Err(HyperbolicError::OutsideDisk(z))
        }
    }

    pub fn from_xy(x: f64, y: f64) -> Result<Self, HyperbolicError> {
        Self::new(C64::new(x, y))
    }

    /// `r e^{iθ}`; used for truncating ideal vertices.
    pub fn polar(r: f64, theta: f64) -> Result<Self, HyperbolicError> {
        Self::new(C64::from_polar(r, theta))
    }

    #[inline]
    pub fn z(self) -> C64 {
        self.0
    }

    pub fn is_origin(self) -> bool {
        self.0.re == 0.0 && self.0.im == 0.0
    }
}

impl TryFrom<[f64; 2]> for DiskPoint {
    type Error = HyperbolicError;
    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        DiskPoint::from_xy(v[0], v[1])
    }
}

impl From<DiskPoint> for [f64; 2] {
    fn from(p: DiskPoint) -> Self {
        [p.0.re, p.0.im]
    }
}

/// A point of the circle at infinity, stored by its canonical angle in
/// `[0, 2π)`. Equality is exact on the canonical angle.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct IdealPoint {
    angle: f64,
}

impl IdealPoint {
    pub fn new(angle: f64) -> Self {
        let mut a = angle.rem_euclid(TAU);
        // rem_euclid rounds tiny negative inputs up to exactly 2π
        if a >= TAU {
            a = 0.0;
        }
        IdealPoint { angle: a }
    }

    #[inline]
    pub fn angle(self) -> f64 {
        self.angle
    }

    #[inline]
    pub fn z(self) -> C64 {
        C64::from_polar(1.0, self.angle)
    }
}

impl From<f64> for IdealPoint {
    fn from(a: f64) -> Self {
        IdealPoint::new(a)
    }
}

impl From<IdealPoint> for f64 {
    fn from(p: IdealPoint) -> Self {
        p.angle
    }
}

/// Either a finite point or a point at infinity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Disk(DiskPoint),
    Ideal(IdealPoint),
}

impl Endpoint {
    pub fn z(self) -> C64 {
        match self {
            Endpoint::Disk(p) => p.z(),
            Endpoint::Ideal(p) => p.z(),
        }
    }

    pub fn is_ideal(self) -> bool {
        matches!(self, Endpoint::Ideal(_))
    }

    pub fn as_ideal(self) -> Option<IdealPoint> {
        match self {
            Endpoint::Ideal(p) => Some(p),
            Endpoint::Disk(_) => None,
        }
    }
}

impl From<DiskPoint> for Endpoint {
    fn from(p: DiskPoint) -> Self {
        Endpoint::Disk(p)
    }
}

impl From<IdealPoint> for Endpoint {
    fn from(p: IdealPoint) -> Self {
        Endpoint::Ideal(p)
    }
}

/// `1 - |z|²` computed without cancellation for `|z|` near one.
#[inline]
pub fn one_minus_norm_sqr(z: C64) -> f64 {
    let r = z.norm();
    (1.0 - r) * (1.0 + r)
}

/// Conformal factor `λ(z) = 2 / (1 - |z|²)`.
#[inline]
pub fn conformal_factor(z: C64) -> f64 {
    2.0 / one_minus_norm_sqr(z)
}

/// Hyperbolic distance between two points of the disk.
pub fn dist(p: DiskPoint, q: DiskPoint) -> f64 {
    dist_z(p.z(), q.z())
}

/// [`dist`] on raw coordinates; callers guarantee both are inside the disk.
#[inline]
pub fn dist_z(p: C64, q: C64) -> f64 {
    let num = (p - q).norm();
    if num == 0.0 {
        return 0.0;
    }
    let den = (one_minus_norm_sqr(p) * one_minus_norm_sqr(q)).sqrt();
    2.0 * (num / den).asinh()
}

/// Distance between two endpoints; infinite distances are rejected.
pub fn dist_endpoints(p: Endpoint, q: Endpoint) -> Result<f64, HyperbolicError> {
    match (p, q) {
        (Endpoint::Disk(a), Endpoint::Disk(b)) => Ok(dist(a, b)),
        _ => Err(HyperbolicError::IdealDistance),
    }
}

/// Poisson kernel `(1 - |z|²) / |ζ - z|²`; its logarithm is minus the Busemann
/// function at `ζ` normalised to vanish at the origin.
#[inline]
pub fn poisson(z: C64, zeta: C64) -> f64 {
    one_minus_norm_sqr(z) / (zeta - z).norm_sqr()
}

/// Euclidean shape of a geodesic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeodesicShape {
    /// Segment of the line through the origin with unit direction `direction`.
    Diameter { direction: C64 },
    /// Arc of the circle `|z - center| = radius`, orthogonal to the unit circle.
    Arc { center: C64, radius: f64 },
}

/// The geodesic arc joining two (finite or ideal) points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geodesic {
    a: Endpoint,
    b: Endpoint,
    shape: GeodesicShape,
}

fn canonical_order(p: Endpoint, q: Endpoint) -> (C64, C64) {
    let (zp, zq) = (p.z(), q.z());
    if (zp.re, zp.im) <= (zq.re, zq.im) {
        (zp, zq)
    } else {
        (zq, zp)
    }
}

impl Geodesic {
    pub fn new(a: Endpoint, b: Endpoint) -> Result<Self, HyperbolicError> {
        let same = match (a, b) {
            (Endpoint::Ideal(x), Endpoint::Ideal(y)) => x == y,
            _ => a.z() == b.z(),
        };
        if same {
            return Err(HyperbolicError::CoincidentEndpoints);
        }
        // shape is computed from the canonically ordered pair so that swapping
        // endpoints reproduces it bit for bit
        let (p, q) = canonical_order(a, b);
        let cross = p.re * q.im - p.im * q.re;
        let shape = if cross.abs() <= COLLINEAR_TOL {
            let far = if p.norm_sqr() >= q.norm_sqr() { p } else { q };
            let mut dir = far / far.norm();
            // fix the sign so the direction does not depend on which end is far
            if dir.re < 0.0 || (dir.re == 0.0 && dir.im < 0.0) {
                dir = -dir;
            }
            GeodesicShape::Diameter { direction: dir }
        } else {
            // circle orthogonal to the unit circle: 2 Re(z c̄) = |z|² + 1
            let rp = 0.5 * (p.norm_sqr() + 1.0);
            let rq = 0.5 * (q.norm_sqr() + 1.0);
            let cx = (rp * q.im - rq * p.im) / cross;
            let cy = (p.re * rq - q.re * rp) / cross;
            let center = C64::new(cx, cy);
            let radius = (center.norm_sqr() - 1.0).max(0.0).sqrt();
            GeodesicShape::Arc { center, radius }
        };
        Ok(Geodesic { a, b, shape })
    }

    pub fn start(&self) -> Endpoint {
        self.a
    }

    pub fn end(&self) -> Endpoint {
        self.b
    }

    pub fn shape(&self) -> GeodesicShape {
        self.shape
    }

    pub fn reversed(&self) -> Geodesic {
        Geodesic {
            a: self.b,
            b: self.a,
            shape: self.shape,
        }
    }

    /// Point at Euclidean parameter `t ∈ [0, 1]` (uniform in the arc angle, or
    /// linear for a diameter). Endpoints are reproduced exactly.
    pub fn point_at(&self, t: f64) -> C64 {
        let (za, zb) = (self.a.z(), self.b.z());
        if t <= 0.0 {
            return za;
        }
        if t >= 1.0 {
            return zb;
        }
        match self.shape {
            GeodesicShape::Diameter { .. } => za + (zb - za) * t,
            GeodesicShape::Arc { center, radius } => {
                let a0 = (za - center).arg();
                let mut da = (zb - center).arg() - a0;
                if da > PI {
                    da -= TAU;
                } else if da < -PI {
                    da += TAU;
                }
                center + C64::from_polar(radius, a0 + t * da)
            }
        }
    }

    /// Euclidean distance from `z` to the full circle or line carrying the
    /// geodesic.
    pub fn carrier_distance(&self, z: C64) -> f64 {
        match self.shape {
            GeodesicShape::Diameter { direction } => {
                (direction.re * z.im - direction.im * z.re).abs()
            }
            GeodesicShape::Arc { center, radius } => ((z - center).norm() - radius).abs(),
        }
    }

    /// Whether the geodesic through the carrier is perpendicular to the unit
    /// circle where they meet (always true for a diameter).
    pub fn orthogonality_defect(&self) -> f64 {
        match self.shape {
            GeodesicShape::Diameter { .. } => 0.0,
            GeodesicShape::Arc { center, radius } => {
                (center.norm_sqr() - radius * radius - 1.0).abs()
            }
        }
    }

    /// Hyperbolic length, finite only between finite endpoints.
    pub fn length(&self) -> Result<f64, HyperbolicError> {
        dist_endpoints(self.a, self.b)
    }

    /// Unit Euclidean tangent at the start point, pointing toward the end.
    pub fn start_tangent(&self) -> C64 {
        let (za, zb) = (self.a.z(), self.b.z());
        match self.shape {
            GeodesicShape::Diameter { .. } => {
                let d = zb - za;
                d / d.norm()
            }
            GeodesicShape::Arc { center, .. } => {
                let radial = za - center;
                let t = C64::new(-radial.im, radial.re) / radial.norm();
                if (t.conj() * (zb - za)).re >= 0.0 {
                    t
                } else {
                    -t
                }
            }
        }
    }
}

/// Orientation-preserving or -reversing isometry of the disk:
/// `z ↦ (a w + b) / (c w + d)` with `w = z` or `w = z̄`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Isometry {
    a: C64,
    b: C64,
    c: C64,
    d: C64,
    reflect: bool,
}

impl Isometry {
    pub fn identity() -> Self {
        Isometry::from_matrix(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0), false)
    }

    fn from_matrix(a: C64, b: C64, c: C64, d: C64, reflect: bool) -> Self {
        let det = a * d - b * c;
        let s = det.sqrt();
        Isometry {
            a: a / s,
            b: b / s,
            c: c / s,
            d: d / s,
            reflect,
        }
    }

    /// Rotation about the origin by `angle`.
    pub fn rotation(angle: f64) -> Self {
        Isometry::from_matrix(C64::from_polar(1.0, angle), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0), false)
    }

    /// The transvection along the diameter through `p` carrying the origin to
    /// `p`: `z ↦ (z + p) / (p̄ z + 1)`.
    pub fn translation_to(p: DiskPoint) -> Self {
        let p = p.z();
        Isometry::from_matrix(C64::new(1.0, 0.0), p, p.conj(), C64::new(1.0, 0.0), false)
    }

    /// `z ↦ e^{iφ} (z - p) / (1 - p̄ z)`, the generic direct isometry.
    pub fn blaschke(p: DiskPoint, angle: f64) -> Self {
        let u = C64::from_polar(1.0, angle);
        let p = p.z();
        Isometry::from_matrix(u, -u * p, -p.conj(), C64::new(1.0, 0.0), false)
    }

    /// Complex conjugation (reflection across the real diameter).
    pub fn conjugation() -> Self {
        Isometry {
            reflect: true,
            ..Isometry::identity()
        }
    }

    pub fn is_orientation_reversing(&self) -> bool {
        self.reflect
    }

    #[inline]
    pub fn apply(&self, z: C64) -> C64 {
        let w = if self.reflect { z.conj() } else { z };
        (self.a * w + self.b) / (self.c * w + self.d)
    }

    /// Image of a finite point; the result is clamped into the open disk to
    /// absorb rounding for points extremely close to the boundary.
    pub fn apply_point(&self, p: DiskPoint) -> DiskPoint {
        let mut w = self.apply(p.z());
        let n = w.norm();
        if n >= 1.0 {
            w *= (1.0 - f64::EPSILON) / n;
        }
        DiskPoint(w)
    }

    pub fn apply_ideal(&self, p: IdealPoint) -> IdealPoint {
        IdealPoint::new(self.apply(p.z()).arg())
    }

    pub fn apply_endpoint(&self, e: Endpoint) -> Endpoint {
        match e {
            Endpoint::Disk(p) => Endpoint::Disk(self.apply_point(p)),
            Endpoint::Ideal(p) => Endpoint::Ideal(self.apply_ideal(p)),
        }
    }

    /// Image of a horocycle: same kind of object at the image base point.
    pub fn apply_horocycle(&self, h: &Horocycle) -> Horocycle {
        let base = self.apply_ideal(h.base());
        // a point of h maps to a point of the image horocycle; s = log P there
        let on = h.nearest_point_to_origin();
        let img = self.apply(on);
        Horocycle {
            base,
            s: poisson(img, base.z()).ln(),
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Isometry) -> Isometry {
        let (oa, ob, oc, od) = if self.reflect {
            (other.a.conj(), other.b.conj(), other.c.conj(), other.d.conj())
        } else {
            (other.a, other.b, other.c, other.d)
        };
        Isometry::from_matrix(
            self.a * oa + self.b * oc,
            self.a * ob + self.b * od,
            self.c * oa + self.d * oc,
            self.c * ob + self.d * od,
            self.reflect ^ other.reflect,
        )
    }

    pub fn inverse(&self) -> Isometry {
        let (a, b, c, d) = (self.d, -self.b, -self.c, self.a);
        if self.reflect {
            Isometry::from_matrix(a.conj(), b.conj(), c.conj(), d.conj(), true)
        } else {
            Isometry::from_matrix(a, b, c, d, false)
        }
    }
}

/// Reflection across the complete geodesic carrying `g`.
pub fn reflect_across(g: &Geodesic) -> Isometry {
    match g.shape() {
        GeodesicShape::Diameter { direction } => Isometry::from_matrix(
            direction * direction,
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(1.0, 0.0),
            true,
        ),
        // inversion in the orthogonal circle: z ↦ (c z̄ - 1) / (z̄ - c̄)
        GeodesicShape::Arc { center, .. } => Isometry::from_matrix(
            center,
            C64::new(-1.0, 0.0),
            C64::new(1.0, 0.0),
            -center.conj(),
            true,
        ),
    }
}

/// Half-turn about the point `c`.
pub fn point_rotation_pi(c: DiskPoint) -> Isometry {
    let t = Isometry::translation_to(c);
    t.compose(&Isometry::rotation(PI)).compose(&t.inverse())
}

/// Horocycle based at an ideal point, parameterised by the signed distance
/// `s` from the origin: `s = 0` passes through the origin and increasing `s`
/// shrinks the horocycle toward its base point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Horocycle {
    base: IdealPoint,
    s: f64,
}

impl Horocycle {
    pub fn new(base: IdealPoint, s: f64) -> Result<Self, HyperbolicError> {
        if s.is_finite() {
            Ok(Horocycle { base, s })
        } else {
            Err(HyperbolicError::InvalidHorocycle(s))
        }
    }

    /// Horocycle with Euclidean diameter `d ∈ (0, 2)`.
    pub fn from_diameter(base: IdealPoint, d: f64) -> Result<Self, HyperbolicError> {
        if !(d > 0.0 && d < 2.0) {
            return Err(HyperbolicError::InvalidHorocycle(d));
        }
        Horocycle::new(base, ((2.0 - d) / d).ln())
    }

    pub fn base(&self) -> IdealPoint {
        self.base
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn diameter(&self) -> f64 {
        2.0 / (1.0 + self.s.exp())
    }

    pub fn center(&self) -> C64 {
        self.base.z() * (1.0 - 0.5 * self.diameter())
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.diameter()
    }

    pub fn nearest_point_to_origin(&self) -> C64 {
        self.base.z() * (1.0 - self.diameter())
    }

    /// The horocycle `δ` further toward the base point.
    pub fn shifted(&self, delta: f64) -> Horocycle {
        Horocycle {
            base: self.base,
            s: self.s + delta,
        }
    }

    /// Signed distance from `z` to the horocycle, positive outside the horodisk.
    pub fn signed_distance(&self, z: C64) -> f64 {
        self.s - poisson(z, self.base.z()).ln()
    }
}

/// Distance from a point outside the closed horodisk to the horocycle.
pub fn dist_point_horocycle(p: DiskPoint, h: &Horocycle) -> Result<f64, HyperbolicError> {
    let d = h.signed_distance(p.z());
    if d < 0.0 {
        Err(HyperbolicError::InsideHorodisk)
    } else {
        Ok(d)
    }
}

/// Signed length of the geodesic between two ideal points outside the two
/// horocycles; negative exactly when the horodisks overlap.
pub fn signed_truncated_length(a: IdealPoint, b: IdealPoint, sa: f64, sb: f64) -> f64 {
    sa + sb + 2.0 * (0.5 * (a.z() - b.z()).norm()).ln()
}

/// Length of an ideal geodesic between its intersections with horocycles at
/// its two ends.
pub fn truncated_length(g: &Geodesic, ha: &Horocycle, hb: &Horocycle) -> Result<f64, HyperbolicError> {
    let (a, b) = match (g.start(), g.end()) {
        (Endpoint::Ideal(a), Endpoint::Ideal(b)) => (a, b),
        _ => return Err(HyperbolicError::NotIdealGeodesic),
    };
    let (ha, hb) = if ha.base() == a && hb.base() == b {
        (ha, hb)
    } else if ha.base() == b && hb.base() == a {
        (hb, ha)
    } else {
        return Err(HyperbolicError::HorocycleNotAtEndpoint);
    };
    let len = signed_truncated_length(a, b, ha.s(), hb.s());
    if len <= 0.0 {
        Err(HyperbolicError::OverlappingHorodisks(len))
    } else {
        Ok(len)
    }
}
