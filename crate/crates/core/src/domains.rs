//! Labeled geodesic polygons and the Jenkins–Serrin solvability test.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hyperbolic::{
    poisson, reflect_across, DiskPoint, Endpoint, Geodesic, GeodesicShape, HyperbolicError, IdealPoint, C64,
};

/// Slack below which an inscribed-polygon inequality counts as an equality.
pub const JS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("a polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("{vertices} vertices but {labels} labels")]
    LabelCount { vertices: usize, labels: usize },
    #[error("vertices {0} and {1} coincide")]
    CoincidentVertices(usize, usize),
    #[error("label of edge {0} is not a finite number")]
    NonFiniteLabel(usize),
    #[error("edges meeting at ideal vertex {0} carry the same infinite label")]
    AdjacentInfinite(usize),
    #[error("edges {0} and {1} intersect")]
    NotSimple(usize, usize),
    #[error("polygon is degenerate")]
    Degenerate,
    #[error("expected an even number of at least 4 angles, got {0}")]
    OddCount(usize),
    #[error("angles are not strictly cyclically ordered")]
    NotCyclic,
    #[error("parameter {name} = {value} out of range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("polygon has no edge labeled with finite data 0")]
    NoZeroEdge,
    #[error("the zero-labeled edge is not contained in the reflecting geodesic")]
    NotOnGeodesic,
    #[error("polygon crosses the reflecting geodesic")]
    NotOneSide,
    #[error("horocycle list has {got} entries for {expected} vertices")]
    HorocycleCount { expected: usize, got: usize },
    #[error("ideal vertex {0} has no horocycle size")]
    MissingHorocycle(usize),
    #[error("horodisks at vertices {0} and {1} are not disjoint")]
    OverlappingHorocycles(usize, usize),
    #[error(transparent)]
    Hyperbolic(#[from] HyperbolicError),
    #[error("domain file: {0}")]
    Io(#[from] std::io::Error),
    #[error("domain file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Boundary data on one edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EdgeLabel {
    #[serde(rename = "+inf")]
    PlusInfinity,
    #[serde(rename = "-inf")]
    MinusInfinity,
    #[serde(rename = "finite")]
    Finite(f64),
}

impl EdgeLabel {
    pub fn is_infinite(self) -> bool {
        !matches!(self, EdgeLabel::Finite(_))
    }

    pub fn negated(self) -> EdgeLabel {
        match self {
            EdgeLabel::PlusInfinity => EdgeLabel::MinusInfinity,
            EdgeLabel::MinusInfinity => EdgeLabel::PlusInfinity,
            EdgeLabel::Finite(c) => EdgeLabel::Finite(-c),
        }
    }

    /// The boundary value with `±∞` replaced by `±cap`.
    pub fn capped(self, cap: f64) -> f64 {
        match self {
            EdgeLabel::PlusInfinity => cap,
            EdgeLabel::MinusInfinity => -cap,
            EdgeLabel::Finite(c) => c,
        }
    }
}

/// Beltrami–Klein image of a disk point; geodesics become straight chords.
fn klein(z: C64) -> [f64; 2] {
    let k = z * (2.0 / (1.0 + z.norm_sqr()));
    [k.re, k.im]
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    robust::orient2d(
        robust::Coord { x: a[0], y: a[1] },
        robust::Coord { x: b[0], y: b[1] },
        robust::Coord { x: c[0], y: c[1] },
    )
}

fn segments_touch(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    let within = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
    };
    (o1 == 0.0 && within(a, b, c))
        || (o2 == 0.0 && within(a, b, d))
        || (o3 == 0.0 && within(c, d, a))
        || (o4 == 0.0 && within(c, d, b))
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Cyclic sequence of finite or ideal vertices with one label per edge; edge
/// `i` joins vertex `i` to vertex `i + 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabeledPolygon {
    vertices: Vec<Endpoint>,
    labels: Vec<EdgeLabel>,
}

impl LabeledPolygon {
    pub fn new(vertices: Vec<Endpoint>, labels: Vec<EdgeLabel>) -> Result<Self, DomainError> {
        let n = vertices.len();
        if n < 3 {
            return Err(DomainError::TooFewVertices(n));
        }
        if labels.len() != n {
            return Err(DomainError::LabelCount {
                vertices: n,
                labels: labels.len(),
            });
        }
        for (i, l) in labels.iter().enumerate() {
            if let EdgeLabel::Finite(c) = l {
                if !c.is_finite() {
                    return Err(DomainError::NonFiniteLabel(i));
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if vertices[i] == vertices[j] {
                    return Err(DomainError::CoincidentVertices(i, j));
                }
            }
        }
        for i in 0..n {
            let prev = labels[(i + n - 1) % n];
            if vertices[i].is_ideal() && prev.is_infinite() && prev == labels[i] {
                return Err(DomainError::AdjacentInfinite(i));
            }
        }
        let poly = LabeledPolygon { vertices, labels };
        poly.check_simple()?;
        Ok(poly)
    }

    fn klein_vertices(&self) -> Vec<[f64; 2]> {
        self.vertices.iter().map(|v| klein(v.z())).collect()
    }

    fn check_simple(&self) -> Result<(), DomainError> {
        let k = self.klein_vertices();
        let n = k.len();
        for i in 0..n {
            let (a, b) = (k[i], k[(i + 1) % n]);
            for j in i + 1..n {
                let (c, d) = (k[j], k[(j + 1) % n]);
                if j == i + 1 || (i == 0 && j == n - 1) {
                    // adjacent: overlap only if the far ends are collinear on the same side
                    let (shared, p, q) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                    if orient(p, shared, q) == 0.0 {
                        let dot = (p[0] - shared[0]) * (q[0] - shared[0]) + (p[1] - shared[1]) * (q[1] - shared[1]);
                        if dot > 0.0 {
                            return Err(DomainError::NotSimple(i, j));
                        }
                    }
                } else if segments_touch(a, b, c, d) {
                    return Err(DomainError::NotSimple(i, j));
                }
            }
        }
        if self.signed_klein_area().abs() < 1e-14 {
            return Err(DomainError::Degenerate);
        }
        Ok(())
    }

    fn signed_klein_area(&self) -> f64 {
        let k = self.klein_vertices();
        let n = k.len();
        (0..n)
            .map(|i| {
                let (a, b) = (k[i], k[(i + 1) % n]);
                a[0] * b[1] - a[1] * b[0]
            })
            .sum::<f64>()
            * 0.5
    }

    /// Whether the vertices run counterclockwise.
    pub fn is_counterclockwise(&self) -> bool {
        self.signed_klein_area() > 0.0
    }

    pub fn vertices(&self) -> &[Endpoint] {
        &self.vertices
    }

    pub fn labels(&self) -> &[EdgeLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edge(&self, i: usize) -> Geodesic {
        let n = self.len();
        Geodesic::new(self.vertices[i % n], self.vertices[(i + 1) % n]).expect("validated polygon has distinct vertices")
    }

    /// Whether the geodesic chord between vertices `i` and `j` runs inside the
    /// polygon.
    pub fn chord_inside(&self, i: usize, j: usize) -> bool {
        let n = self.len();
        if (i + 1) % n == j || (j + 1) % n == i {
            return true;
        }
        let k = self.klein_vertices();
        let (a, b) = (k[i], k[j]);
        for e in 0..n {
            let f = (e + 1) % n;
            if e == i || e == j || f == i || f == j {
                continue;
            }
            if segments_touch(a, b, k[e], k[f]) {
                return false;
            }
        }
        // vertices lying on the chord also disqualify it
        for (v, &p) in k.iter().enumerate() {
            if v != i && v != j && orient(a, b, p) == 0.0 && segments_touch(a, b, p, p) {
                return false;
            }
        }
        point_in_polygon([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])], &k)
    }

    /// The polygon transported by an isometry (orientation may reverse).
    pub fn transformed(&self, phi: &crate::hyperbolic::Isometry) -> Result<Self, DomainError> {
        let vertices = self.vertices.iter().map(|&v| phi.apply_endpoint(v)).collect();
        LabeledPolygon::new(vertices, self.labels.clone())
    }
}

impl<'de> Deserialize<'de> for LabeledPolygon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            vertices: Vec<Endpoint>,
            labels: Vec<EdgeLabel>,
        }
        let raw = Raw::deserialize(d)?;
        LabeledPolygon::new(raw.vertices, raw.labels).map_err(serde::de::Error::custom)
    }
}

/// On-disk description of a domain: the polygon plus optional per-vertex
/// horocycle sizes (`null` at finite vertices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainFile {
    pub vertices: Vec<Endpoint>,
    pub labels: Vec<EdgeLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horocycles: Option<Vec<Option<f64>>>,
}

impl DomainFile {
    pub fn from_polygon(p: &LabeledPolygon, horocycles: Option<Vec<Option<f64>>>) -> Self {
        DomainFile {
            vertices: p.vertices.clone(),
            labels: p.labels.clone(),
            horocycles,
        }
    }

    pub fn polygon(&self) -> Result<LabeledPolygon, DomainError> {
        LabeledPolygon::new(self.vertices.clone(), self.labels.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("domain files always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, DomainError> {
        let f: DomainFile = serde_json::from_str(s)?;
        f.polygon()?;
        Ok(f)
    }

    pub fn read(path: &Path) -> Result<Self, DomainError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), DomainError> {
        let mut s = self.to_json();
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

fn range_err(name: &'static str, value: f64, range: &'static str) -> DomainError {
    DomainError::OutOfRange { name, value, range }
}

/// Ideal 2k-gon with alternating `+∞, −∞, …` labels starting on edge `p₁p₂`.
pub fn ideal_scherk_polygon(angles: &[f64]) -> Result<LabeledPolygon, DomainError> {
    let n = angles.len();
    if n < 4 || n % 2 != 0 {
        return Err(DomainError::OddCount(n));
    }
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(DomainError::NotCyclic);
    }
    let pts: Vec<IdealPoint> = angles.iter().map(|&a| IdealPoint::new(a)).collect();
    let mut turn = 0.0;
    for i in 0..n {
        let step = (pts[(i + 1) % n].angle() - pts[i].angle()).rem_euclid(TAU);
        if step <= 0.0 {
            return Err(DomainError::NotCyclic);
        }
        turn += step;
    }
    if (turn - TAU).abs() > 1e-9 {
        return Err(DomainError::NotCyclic);
    }
    let labels = (0..n)
        .map(|i| if i % 2 == 0 { EdgeLabel::PlusInfinity } else { EdgeLabel::MinusInfinity })
        .collect();
    LabeledPolygon::new(pts.into_iter().map(Endpoint::Ideal).collect(), labels)
}

/// The triangle with vertices `0, 1, e^{iθ}`: `+∞` on `0p₁`, `−∞` on `p₁p₂`
/// and `0` on `p₂0`.
pub fn triangle_domain(theta: f64) -> Result<LabeledPolygon, DomainError> {
    if !(theta > 0.0 && theta <= FRAC_PI_2) {
        return Err(range_err("theta", theta, "(0, pi/2]"));
    }
    LabeledPolygon::new(
        vec![
            DiskPoint::ORIGIN.into(),
            IdealPoint::new(0.0).into(),
            IdealPoint::new(theta).into(),
        ],
        vec![EdgeLabel::PlusInfinity, EdgeLabel::MinusInfinity, EdgeLabel::Finite(0.0)],
    )
}

/// `0, p₁, …, p_{k+1}` with `p_n = e^{i(n−1)θ}` for `n ≥ 2`; labels `+∞` on
/// `0p₁` and `p_{2i}p_{2i+1}`, `−∞` on `p_{2i−1}p_{2i}`, `0` on `p_{k+1}0`.
fn fan_polygon(k: usize, theta: f64, first_angle: f64) -> Result<LabeledPolygon, DomainError> {
    let mut vertices: Vec<Endpoint> = vec![DiskPoint::ORIGIN.into(), IdealPoint::new(first_angle).into()];
    for n in 2..=k + 1 {
        vertices.push(IdealPoint::new((n - 1) as f64 * theta).into());
    }
    let mut labels = vec![EdgeLabel::PlusInfinity];
    for n in 1..=k {
        labels.push(if n % 2 == 1 { EdgeLabel::MinusInfinity } else { EdgeLabel::PlusInfinity });
    }
    labels.push(EdgeLabel::Finite(0.0));
    LabeledPolygon::new(vertices, labels)
}

fn check_k_theta(k: usize, theta: f64) -> Result<(), DomainError> {
    if k < 2 {
        return Err(range_err("k", k as f64, "k >= 2"));
    }
    if !(theta > 0.0 && theta < PI / (2 * k) as f64) {
        return Err(range_err("theta", theta, "(0, pi/(2k))"));
    }
    Ok(())
}

/// The unperturbed fan with `p̃₁ = 1`; it fails the Jenkins–Serrin test with
/// an equality on `(0, p̃₁, p₂, p₃)`.
pub fn omega_theta(k: usize, theta: f64) -> Result<LabeledPolygon, DomainError> {
    check_k_theta(k, theta)?;
    fan_polygon(k, theta, 0.0)
}

/// The fan with `p₁` moved to `e^{−iβ}`.
pub fn omega_theta_beta(k: usize, theta: f64, beta: f64) -> Result<LabeledPolygon, DomainError> {
    check_k_theta(k, theta)?;
    let hi = FRAC_PI_2 - k as f64 * theta;
    if !(beta > 0.0 && beta <= hi) {
        return Err(range_err("beta", beta, "(0, pi/2 - k theta]"));
    }
    fan_polygon(k, theta, -beta)
}

/// Doubles a polygon across the geodesic carrying its zero-labeled edge. The
/// reflected copy carries negated labels, which is the boundary data of the
/// graph extended by the half-turn about that (horizontal) geodesic. The zero
/// edge becomes interior, so the result has `2·|P| − 2` vertices.
pub fn reflect_union(p: &LabeledPolygon, g: &Geodesic) -> Result<LabeledPolygon, DomainError> {
    let n = p.len();
    let zero_edges: Vec<usize> = (0..n)
        .filter(|&i| matches!(p.labels[i], EdgeLabel::Finite(c) if c == 0.0))
        .collect();
    let &[e] = zero_edges.as_slice() else {
        return Err(DomainError::NoZeroEdge);
    };
    let on = |v: Endpoint| g.carrier_distance(v.z()) <= 1e-12;
    if !on(p.vertices[e]) || !on(p.vertices[(e + 1) % n]) {
        return Err(DomainError::NotOnGeodesic);
    }
    // rotate so the zero edge runs from the last vertex back to the first
    let order: Vec<usize> = (0..n).map(|i| (e + 1 + i) % n).collect();
    let verts: Vec<Endpoint> = order.iter().map(|&i| p.vertices[i]).collect();
    let labels: Vec<EdgeLabel> = order[..n - 1].iter().map(|&i| p.labels[i]).collect();

    let side = |z: C64| match g.shape() {
        GeodesicShape::Diameter { direction } => direction.re * z.im - direction.im * z.re,
        GeodesicShape::Arc { center, radius } => (z - center).norm() - radius,
    };
    let signs: Vec<f64> = verts[1..n - 1].iter().map(|v| side(v.z())).collect();
    if !(signs.iter().all(|&s| s > 1e-12) || signs.iter().all(|&s| s < -1e-12)) {
        return Err(DomainError::NotOneSide);
    }

    let refl = reflect_across(g);
    let mirror = |v: Endpoint| -> Endpoint {
        match (v, g.shape()) {
            // exact angle arithmetic for reflections in a diameter
            (Endpoint::Ideal(q), GeodesicShape::Diameter { direction }) => {
                IdealPoint::new(2.0 * direction.arg() - q.angle()).into()
            }
            _ => refl.apply_endpoint(v),
        }
    };
    let mut out_v = verts.clone();
    let mut out_l = labels.clone();
    for i in (1..n - 1).rev() {
        out_v.push(mirror(verts[i]));
    }
    for i in (0..n - 1).rev() {
        out_l.push(labels[i].negated());
    }
    LabeledPolygon::new(out_v, out_l)
}

/// Which inequality a margin belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginKind {
    /// `|∂P| − 2α(P)`.
    Alpha,
    /// `|∂P| − 2β(P)`.
    Beta,
    /// `α(Ω) − β(Ω)` for a domain with only infinite data.
    Balance,
}

/// One inequality evaluated on one inscribed polygon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub vertices: Vec<usize>,
    pub kind: MarginKind,
    /// Value at the horocycles of the report.
    pub value: f64,
    /// The value when it does not depend on the horocycles; `None` when some
    /// horocycle enters with a positive coefficient, so that shrinking it makes
    /// the inequality hold.
    pub invariant: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Satisfied,
    FailsEquality,
    FailsStrict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JSReport {
    pub verdict: Verdict,
    pub witness: Option<Vec<usize>>,
    pub margins: Vec<Margin>,
    /// Busemann size used at each vertex (`None` at finite vertices).
    pub horocycles: Vec<Option<f64>>,
    pub tolerance: f64,
}

impl JSReport {
    /// Smallest horocycle-invariant strict margin.
    pub fn min_margin(&self) -> Option<f64> {
        self.margins
            .iter()
            .filter(|m| m.kind != MarginKind::Balance)
            .filter_map(|m| m.invariant)
            .min_by(f64::total_cmp)
    }

    /// The margin that decided a failing verdict.
    pub fn witness_margin(&self) -> Option<&Margin> {
        let w = self.witness.as_ref()?;
        let tol = self.tolerance;
        self.margins.iter().find(|m| {
            &m.vertices == w
                && match (self.verdict, m.kind, m.invariant) {
                    (Verdict::FailsStrict, MarginKind::Balance, _) => false,
                    (Verdict::FailsStrict, _, Some(v)) => v < -tol,
                    (Verdict::FailsEquality, MarginKind::Balance, Some(v)) => v.abs() > tol,
                    (Verdict::FailsEquality, _, Some(v)) => v.abs() <= tol,
                    _ => false,
                }
        })
    }
}

/// Affine function of the per-vertex horocycle parameters.
#[derive(Clone, Debug)]
struct Affine {
    constant: f64,
    coeff: Vec<f64>,
}

impl Affine {
    fn zero(n: usize) -> Self {
        Affine {
            constant: 0.0,
            coeff: vec![0.0; n],
        }
    }

    fn add(&mut self, other: &Affine, w: f64) {
        self.constant += w * other.constant;
        for (a, b) in self.coeff.iter_mut().zip(&other.coeff) {
            *a += w * b;
        }
    }

    fn eval(&self, s: &[Option<f64>]) -> f64 {
        self.constant
            + self
                .coeff
                .iter()
                .zip(s)
                .map(|(c, v)| if *c == 0.0 { 0.0 } else { c * v.unwrap_or(0.0) })
                .sum::<f64>()
    }
}

/// Truncated length of the geodesic between vertices `i` and `j`.
fn side_length(v: &[Endpoint], i: usize, j: usize) -> Affine {
    let mut a = Affine::zero(v.len());
    match (v[i], v[j]) {
        (Endpoint::Disk(p), Endpoint::Disk(q)) => a.constant = crate::hyperbolic::dist(p, q),
        (Endpoint::Ideal(p), Endpoint::Ideal(q)) => {
            a.constant = 2.0 * (0.5 * (p.z() - q.z()).norm()).ln();
            a.coeff[i] = 1.0;
            a.coeff[j] = 1.0;
        }
        (Endpoint::Ideal(p), Endpoint::Disk(q)) => {
            a.constant = -poisson(q.z(), p.z()).ln();
            a.coeff[i] = 1.0;
        }
        (Endpoint::Disk(q), Endpoint::Ideal(p)) => {
            a.constant = -poisson(q.z(), p.z()).ln();
            a.coeff[j] = 1.0;
        }
    }
    a
}

/// Common Busemann size making all horodisks disjoint from each other and
/// from the finite vertices, with the Euclidean diameter then halved.
pub fn default_horocycles(p: &LabeledPolygon) -> Vec<Option<f64>> {
    let v = p.vertices();
    let mut s_min = f64::NEG_INFINITY;
    for (i, a) in v.iter().enumerate() {
        let Endpoint::Ideal(a) = a else { continue };
        for (j, b) in v.iter().enumerate() {
            match b {
                Endpoint::Ideal(b) if j > i => {
                    s_min = s_min.max(-(0.5 * (a.z() - b.z()).norm()).ln());
                }
                Endpoint::Disk(q) => s_min = s_min.max(poisson(q.z(), a.z()).ln()),
                _ => {}
            }
        }
    }
    if s_min == f64::NEG_INFINITY {
        s_min = 0.0;
    }
    let d = 0.5 * 2.0 / (1.0 + s_min.exp());
    let s = ((2.0 - d) / d).ln();
    v.iter().map(|e| e.is_ideal().then_some(s)).collect()
}

fn validate_horocycles(p: &LabeledPolygon, s: &[Option<f64>]) -> Result<(), DomainError> {
    let v = p.vertices();
    if s.len() != v.len() {
        return Err(DomainError::HorocycleCount {
            expected: v.len(),
            got: s.len(),
        });
    }
    for (i, a) in v.iter().enumerate() {
        let Endpoint::Ideal(_) = a else { continue };
        if s[i].is_none_or(|x| !x.is_finite()) {
            return Err(DomainError::MissingHorocycle(i));
        }
    }
    for i in 0..v.len() {
        for j in 0..v.len() {
            if i == j || !v[i].is_ideal() || (v[j].is_ideal() && j < i) {
                continue;
            }
            if side_length(v, i, j).eval(s) <= 0.0 {
                return Err(DomainError::OverlappingHorocycles(i, j));
            }
        }
    }
    Ok(())
}

/// Checks the Jenkins–Serrin conditions on every inscribed polygon.
///
/// Each truncated length is affine in the Busemann sizes. For an inscribed
/// polygon `P` the margins `|∂P| − 2α(P)` and `|∂P| − 2β(P)` pick up `+2` per
/// unit of size at an ideal vertex of `P` with no side on a counted edge, and
/// `0` otherwise. A margin with a positive coefficient can always be made
/// positive by shrinking horocycles; otherwise it is a constant and decides the
/// verdict. When some edge carries finite data, `Ω` itself is included.
pub fn js_check(p: &LabeledPolygon, horocycles: Option<&[Option<f64>]>) -> Result<JSReport, DomainError> {
    let n = p.len();
    let s: Vec<Option<f64>> = match horocycles {
        Some(h) => h.to_vec(),
        None => default_horocycles(p),
    };
    validate_horocycles(p, &s)?;
    let v = p.vertices();
    let all_infinite = p.labels().iter().all(|l| l.is_infinite());
    let tol = JS_TOLERANCE;

    let mut margins = Vec::new();
    for mask in 1u64..(1u64 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let m = idx.len();
        if m < 3 || (m == n && all_infinite) {
            continue;
        }
        if !(0..m).all(|a| p.chord_inside(idx[a], idx[(a + 1) % m])) {
            continue;
        }
        let mut perimeter = Affine::zero(n);
        let mut alpha = Affine::zero(n);
        let mut beta = Affine::zero(n);
        for a in 0..m {
            let (i, j) = (idx[a], idx[(a + 1) % m]);
            let len = side_length(v, i, j);
            perimeter.add(&len, 1.0);
            if (i + 1) % n == j {
                match p.labels()[i] {
                    EdgeLabel::PlusInfinity => alpha.add(&len, 1.0),
                    EdgeLabel::MinusInfinity => beta.add(&len, 1.0),
                    EdgeLabel::Finite(_) => {}
                }
            }
        }
        for (kind, counted) in [(MarginKind::Alpha, &alpha), (MarginKind::Beta, &beta)] {
            let mut margin = perimeter.clone();
            margin.add(counted, -2.0);
            margins.push(Margin {
                vertices: idx.clone(),
                kind,
                value: margin.eval(&s),
                invariant: margin.coeff.iter().all(|c| c.abs() < 0.5).then_some(margin.constant),
            });
        }
    }
    if all_infinite {
        let mut balance = Affine::zero(n);
        for i in 0..n {
            let len = side_length(v, i, (i + 1) % n);
            match p.labels()[i] {
                EdgeLabel::PlusInfinity => balance.add(&len, 1.0),
                EdgeLabel::MinusInfinity => balance.add(&len, -1.0),
                EdgeLabel::Finite(_) => unreachable!(),
            }
        }
        margins.push(Margin {
            vertices: (0..n).collect(),
            kind: MarginKind::Balance,
            value: balance.eval(&s),
            invariant: balance.coeff.iter().all(|c| c.abs() < 0.5).then_some(balance.constant),
        });
    }

    let strict = margins
        .iter()
        .filter(|m| m.kind != MarginKind::Balance)
        .filter_map(|m| m.invariant.map(|x| (x, m)))
        .filter(|(x, _)| *x < -tol)
        .min_by(|a, b| a.0.total_cmp(&b.0));
    let (verdict, witness) = if let Some((_, m)) = strict {
        (Verdict::FailsStrict, Some(m.vertices.clone()))
    } else if let Some(m) = margins
        .iter()
        .filter(|m| match (m.kind, m.invariant) {
            (MarginKind::Balance, Some(x)) => x.abs() > tol,
            (MarginKind::Balance, None) => true,
            (_, Some(x)) => x.abs() <= tol,
            _ => false,
        })
        .min_by_key(|m| m.vertices.len())
    {
        (Verdict::FailsEquality, Some(m.vertices.clone()))
    } else {
        (Verdict::Satisfied, None)
    };
    Ok(JSReport {
        verdict,
        witness,
        margins,
        horocycles: s,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperbolic::{signed_truncated_length, Isometry};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_6;

    fn square() -> LabeledPolygon {
        ideal_scherk_polygon(&[0.0, FRAC_PI_2, PI, 1.5 * PI]).unwrap()
    }

    /// Geodesics as sampled polylines; simplicity checked by brute force.
    fn arcs_cross(g: &Geodesic, h: &Geodesic) -> bool {
        let m = 400;
        let pa: Vec<C64> = (0..=m).map(|i| g.point_at(i as f64 / m as f64)).collect();
        let pb: Vec<C64> = (0..=m).map(|i| h.point_at(i as f64 / m as f64)).collect();
        let seg = |a: C64, b: C64, c: C64, d: C64| {
            let cr = |o: C64, p: C64, q: C64| (p - o).re * (q - o).im - (p - o).im * (q - o).re;
            cr(a, b, c) * cr(a, b, d) < 0.0 && cr(c, d, a) * cr(c, d, b) < 0.0
        };
        for i in 0..m {
            for j in 0..m {
                if seg(pa[i], pa[i + 1], pb[j], pb[j + 1]) {
                    return true;
                }
            }
        }
        false
    }

    fn brute_simple(p: &LabeledPolygon) -> bool {
        let n = p.len();
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if arcs_cross(&p.edge(i), &p.edge(j)) {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn square_quadrilateral() {
        let p = square();
        use EdgeLabel::*;
        assert_eq!(p.labels(), &[PlusInfinity, MinusInfinity, PlusInfinity, MinusInfinity]);
        let r = js_check(&p, None).unwrap();
        assert_eq!(r.verdict, Verdict::Satisfied);
        let bal = r.margins.iter().find(|m| m.kind == MarginKind::Balance).unwrap();
        assert!(bal.invariant.unwrap().abs() < 1e-12);
    }

    #[test]
    fn hexagon_alternates() {
        let angles: Vec<f64> = (0..6).map(|i| i as f64 * PI / 3.0).collect();
        let p = ideal_scherk_polygon(&angles).unwrap();
        let plus = p.labels().iter().filter(|l| **l == EdgeLabel::PlusInfinity).count();
        assert_eq!(plus, 3);
        assert_eq!(js_check(&p, None).unwrap().verdict, Verdict::Satisfied);
    }

    #[test]
    fn skew_quadrilateral_is_simple() {
        let p = ideal_scherk_polygon(&[0.0, 0.1, PI, PI + 0.1]).unwrap();
        assert!(brute_simple(&p));
        // the two long sides are disjoint, the oracle agrees with the Klein test
        assert!(!arcs_cross(&p.edge(1), &p.edge(3)));
    }

    #[test]
    fn scherk_polygon_errors() {
        assert!(matches!(ideal_scherk_polygon(&[0.0, 1.0, 2.0]), Err(DomainError::OddCount(3))));
        assert!(matches!(ideal_scherk_polygon(&[0.0, 2.0, 1.0, 3.0]), Err(DomainError::NotCyclic)));
    }

    #[test]
    fn self_intersecting_polygon_rejected() {
        let v: Vec<Endpoint> = [0.0, PI, FRAC_PI_2, 1.5 * PI].iter().map(|&a| IdealPoint::new(a).into()).collect();
        use EdgeLabel::*;
        let r = LabeledPolygon::new(v, vec![PlusInfinity, MinusInfinity, PlusInfinity, MinusInfinity]);
        assert!(matches!(r, Err(DomainError::NotSimple(_, _))));
    }

    #[test]
    fn adjacent_equal_labels_rejected() {
        let v: Vec<Endpoint> = [0.0, 2.0, 4.0].iter().map(|&a| IdealPoint::new(a).into()).collect();
        use EdgeLabel::*;
        let r = LabeledPolygon::new(v, vec![PlusInfinity, PlusInfinity, MinusInfinity]);
        assert!(matches!(r, Err(DomainError::AdjacentInfinite(1))));
    }

    #[test]
    fn triangle_domain_shape() {
        let t = triangle_domain(FRAC_PI_2).unwrap();
        assert_eq!(t.vertices()[0], Endpoint::Disk(DiskPoint::ORIGIN));
        assert_eq!(t.vertices()[2], Endpoint::Ideal(IdealPoint::new(FRAC_PI_2)));
        assert!(triangle_domain(0.0).is_err());
        assert!(triangle_domain(1.6).is_err());
        for i in 1..=20 {
            let theta = FRAC_PI_2 * i as f64 / 20.0;
            let r = js_check(&triangle_domain(theta).unwrap(), None).unwrap();
            assert_eq!(r.verdict, Verdict::Satisfied, "theta {theta}");
        }
    }

    #[test]
    fn triangle_beta_margin_closed_form() {
        // |0p1| + |0p2| − |p1p2| with both horocycles at size s is −2 log sin(θ/2)
        let theta = 1.1;
        let r = js_check(&triangle_domain(theta).unwrap(), None).unwrap();
        let m = r
            .margins
            .iter()
            .find(|m| m.kind == MarginKind::Beta && m.vertices == vec![0, 1, 2])
            .unwrap();
        assert!((m.invariant.unwrap() + 2.0 * (theta / 2.0).sin().ln()).abs() < 1e-12);
    }

    #[test]
    fn omega_theta_fails_with_equality() {
        let p = omega_theta(2, FRAC_PI_6).unwrap();
        assert_eq!(p.len(), 4);
        let r = js_check(&p, None).unwrap();
        assert_eq!(r.verdict, Verdict::FailsEquality);
        assert_eq!(r.witness, Some(vec![0, 1, 2, 3]));
        assert!(r.witness_margin().unwrap().invariant.unwrap().abs() <= 1e-9);
        assert_eq!(js_check(&omega_theta(3, 0.4).unwrap(), None).unwrap().verdict, Verdict::FailsEquality);
    }

    #[test]
    fn omega_theta_witness_residual_by_hand() {
        // |0 H1| + |H2 H3| − |0 H3| − |H1 H2| for arbitrary sizes
        let theta = FRAC_PI_6;
        let (p1, p2, p3) = (IdealPoint::new(0.0), IdealPoint::new(theta), IdealPoint::new(2.0 * theta));
        for s in [[3.0, 4.0, 5.0], [2.5, 7.0, 3.3]] {
            let lhs = s[0] + signed_truncated_length(p2, p3, s[1], s[2]);
            let rhs = s[2] + signed_truncated_length(p1, p2, s[0], s[1]);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn omega_theta_beta_satisfied() {
        let p = omega_theta_beta(2, FRAC_PI_6, PI / 36.0).unwrap();
        assert!(p.vertices()[1..].iter().all(|v| v.is_ideal()));
        let r = js_check(&p, None).unwrap();
        assert_eq!(r.verdict, Verdict::Satisfied);
        let m = r.min_margin().unwrap();
        let expect = 2.0 * ((FRAC_PI_6 + PI / 36.0) / 2.0).sin().ln() - 2.0 * (FRAC_PI_6 / 2.0).sin().ln();
        assert!(m > 0.0);
        assert!((m - expect).abs() < 1e-12, "{m} {expect}");
    }

    #[test]
    fn beta_sweep_margin_decreases_to_zero() {
        let mut last = f64::INFINITY;
        for j in 0..12 {
            let beta = (PI / 36.0) * 0.5f64.powi(j);
            let r = js_check(&omega_theta_beta(2, FRAC_PI_6, beta).unwrap(), None).unwrap();
            let m = r.min_margin().unwrap();
            assert!(m > 0.0 && m < last);
            last = m;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn parameter_ranges() {
        assert!(omega_theta(1, 0.1).is_err());
        assert!(omega_theta(2, PI / 4.0).is_err());
        assert!(omega_theta_beta(2, FRAC_PI_6, 0.0).is_err());
        assert!(omega_theta_beta(2, FRAC_PI_6, FRAC_PI_2 - 2.0 * FRAC_PI_6 + 1e-9).is_err());
        assert!(omega_theta_beta(2, FRAC_PI_6, FRAC_PI_2 - 2.0 * FRAC_PI_6).is_ok());
    }

    #[test]
    fn reflect_union_fan() {
        let k = 2;
        let p = omega_theta_beta(k, FRAC_PI_6, PI / 36.0).unwrap();
        let g = Geodesic::new(DiskPoint::ORIGIN.into(), p.vertices()[k + 1]).unwrap();
        let u = reflect_union(&p, &g).unwrap();
        assert_eq!(u.len(), 2 * p.len() - 2);
        assert_eq!(u.vertices().iter().filter(|v| v.is_ideal()).count(), 2 * k + 1);
        assert!(u.labels().iter().all(|l| l.is_infinite()));
        assert!(u.is_counterclockwise());
        assert!(brute_simple(&u));
        // reflected ideal vertices mirror across the angle kθ
        let a = u.vertices()[k + 2].as_ideal().unwrap().angle();
        assert!((a - (2.0 * k as f64 * FRAC_PI_6 - FRAC_PI_6)).abs() < 1e-14);
        let r = js_check(&u, None).unwrap();
        assert_eq!(r.verdict, Verdict::Satisfied);
    }

    #[test]
    fn reflect_union_errors() {
        let p = omega_theta_beta(2, FRAC_PI_6, PI / 36.0).unwrap();
        let g = Geodesic::new(DiskPoint::ORIGIN.into(), IdealPoint::new(1.0).into()).unwrap();
        assert!(matches!(reflect_union(&p, &g), Err(DomainError::NotOnGeodesic)));
        assert!(matches!(reflect_union(&square(), &g), Err(DomainError::NoZeroEdge)));
    }

    #[test]
    fn horocycle_validation() {
        let p = square();
        assert!(matches!(js_check(&p, Some(&[Some(1.0); 3])), Err(DomainError::HorocycleCount { .. })));
        assert!(matches!(
            js_check(&p, Some(&[Some(1.0), None, Some(1.0), Some(1.0)])),
            Err(DomainError::MissingHorocycle(1))
        ));
        assert!(matches!(
            js_check(&p, Some(&[Some(-1.0); 4])),
            Err(DomainError::OverlappingHorocycles(_, _))
        ));
    }

    #[test]
    fn domain_file_round_trip_is_bit_exact() {
        let p = omega_theta_beta(3, 0.3, 0.17).unwrap();
        let f = DomainFile::from_polygon(&p, Some(default_horocycles(&p)));
        let text = f.to_json();
        let back = DomainFile::from_json(&text).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_json(), text);
        for (a, b) in back.vertices.iter().zip(&f.vertices) {
            assert_eq!(a.z().re.to_bits(), b.z().re.to_bits());
            assert_eq!(a.z().im.to_bits(), b.z().im.to_bits());
        }
    }

    #[test]
    fn domain_file_format() {
        let text = r#"{"vertices":[{"disk":[0.0,0.0]},{"ideal":0.0},{"ideal":1.0}],
                       "labels":["+inf","-inf",{"finite":0.0}]}"#;
        let f = DomainFile::from_json(text).unwrap();
        assert_eq!(f.polygon().unwrap(), triangle_domain(1.0).unwrap());
        let bad = r#"{"vertices":[],"labels":[],"extra":1}"#;
        assert!(DomainFile::from_json(bad).is_err());
        let outside = r#"{"vertices":[{"disk":[2.0,0.0]},{"ideal":0.0},{"ideal":1.0}],"labels":["+inf","-inf",{"finite":0.0}]}"#;
        assert!(DomainFile::from_json(outside).is_err());
    }

    fn random_resize(base: &[Option<f64>], deltas: &[f64]) -> Vec<Option<f64>> {
        base.iter().zip(deltas).map(|(s, d)| s.map(|x| x + d)).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn invariant_margins_ignore_horocycle_sizes(deltas in proptest::collection::vec(0.0f64..6.0, 6)) {
            let polys = [
                square(),
                omega_theta(2, FRAC_PI_6).unwrap(),
                omega_theta_beta(2, FRAC_PI_6, PI / 36.0).unwrap(),
                triangle_domain(1.2).unwrap(),
            ];
            for p in &polys {
                let r0 = js_check(p, None).unwrap();
                let s = random_resize(&r0.horocycles, &deltas[..p.len()]);
                let r1 = js_check(p, Some(&s)).unwrap();
                prop_assert_eq!(r0.verdict, r1.verdict);
                for (a, b) in r0.margins.iter().zip(&r1.margins) {
                    prop_assert_eq!(a.invariant.is_some(), b.invariant.is_some());
                    if let (Some(x), Some(y)) = (a.invariant, b.invariant) {
                        prop_assert!((x - y).abs() <= 1e-10);
                        prop_assert!((b.value - y).abs() <= 1e-10);
                    }
                }
            }
        }

        #[test]
        fn verdict_is_isometry_invariant(px in -0.6f64..0.6, py in -0.6f64..0.6, angle in 0.0f64..TAU, flip: bool) {
            let mut phi = Isometry::blaschke(DiskPoint::from_xy(px, py).unwrap(), angle);
            if flip {
                phi = phi.compose(&Isometry::conjugation());
            }
            for p in [square(), omega_theta(2, FRAC_PI_6).unwrap(), omega_theta_beta(2, FRAC_PI_6, PI / 36.0).unwrap()] {
                let q = p.transformed(&phi).unwrap();
                let a = js_check(&p, None).unwrap();
                let b = js_check(&q, None).unwrap();
                prop_assert_eq!(a.verdict, b.verdict);
                for (x, y) in a.margins.iter().zip(&b.margins) {
                    if let (Some(x), Some(y)) = (x.invariant, y.invariant) {
                        prop_assert!((x - y).abs() <= 1e-9);
                    }
                }
            }
        }
    }
}
