//! Radius truncation of ideal polygons and graded Delaunay refinement.
//!
//! Boundary edges are sampled on the true geodesic arcs; the interior is
//! refined Ruppert-style until every triangle meets the size function and the
//! angle bound. Near input corners sharper than 60° the triangles spanning the
//! corner cannot satisfy the bound and are exempt (see [`audit`]).

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{DomainError, EdgeLabel, LabeledPolygon};
use crate::hyperbolic::{dist_z, one_minus_norm_sqr, DiskPoint, Endpoint, Geodesic, GeodesicShape, C64};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("truncation radius {0} outside (0, 1)")]
    BadRadius(f64),
    #[error("truncated polygon is not simple: {0}")]
    NotSimple(DomainError),
    #[error("invalid mesh parameter {name} = {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("mesh exceeded {0} nodes")]
    TooManyNodes(usize),
    #[error("angle bound not met: {angle_deg:.2}° near ({x:.4}, {y:.4})")]
    AngleBound { angle_deg: f64, x: f64, y: f64 },
    #[error("mesh audit failed: {0}")]
    Audit(String),
    #[error("mesh file: {0}")]
    Io(#[from] std::io::Error),
    #[error("mesh file: {0}")]
    Json(#[from] serde_json::Error),
}

/// A polygon with its ideal vertices pulled in to radius `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedPolygon {
    pub source: LabeledPolygon,
    pub r: f64,
    pub vertices: Vec<DiskPoint>,
    pub labels: Vec<EdgeLabel>,
}

impl TruncatedPolygon {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edge(&self, i: usize) -> Geodesic {
        let n = self.len();
        Geodesic::new(self.vertices[i].into(), self.vertices[(i + 1) % n].into()).expect("distinct vertices")
    }

    /// Interior angle at vertex `i` (Euclidean, equal to the hyperbolic angle).
    pub fn corner_angle(&self, i: usize) -> f64 {
        let n = self.len();
        let out = self.edge(i).start_tangent();
        let back = self.edge((i + n - 1) % n).reversed().start_tangent();
        let a = (back / out).arg();
        let ccw = self.source.is_counterclockwise();
        let a = if ccw { a } else { -a };
        if a < 0.0 {
            a + std::f64::consts::TAU
        } else {
            a
        }
    }
}

/// Replaces every ideal vertex `e^{iθ}` by `r e^{iθ}`.
pub fn truncate(p: &LabeledPolygon, r: f64) -> Result<TruncatedPolygon, MeshError> {
    if !(r > 0.0 && r < 1.0) {
        return Err(MeshError::BadRadius(r));
    }
    let vertices: Vec<DiskPoint> = p
        .vertices()
        .iter()
        .map(|v| match v {
            Endpoint::Disk(q) => *q,
            Endpoint::Ideal(q) => DiskPoint::polar(r, q.angle()).expect("r < 1"),
        })
        .collect();
    // the adjacency rule concerns ideal vertices only, so finite copies validate
    // simplicity alone
    LabeledPolygon::new(vertices.iter().map(|&v| v.into()).collect(), p.labels().to_vec()).map_err(MeshError::NotSimple)?;
    Ok(TruncatedPolygon {
        source: p.clone(),
        r,
        vertices,
        labels: p.labels().to_vec(),
    })
}

/// How the target edge length varies over the disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sizing {
    /// Euclidean length `h (1 − |z|²)`: uniform hyperbolic length `2h`.
    Hyperbolic,
    /// Euclidean length `h` everywhere.
    Euclidean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshOptions {
    /// Euclidean edge scale at the origin.
    pub h: f64,
    /// Size reduction at `±∞` edges.
    pub grading: f64,
    /// Hyperbolic distance over which the grading relaxes back to 1.
    pub grading_width: f64,
    pub sizing: Sizing,
    pub min_angle_deg: f64,
    pub max_nodes: usize,
    /// Near a finite corner where the labels change, the size is at most this
    /// multiple of the Euclidean distance to the corner (0 disables).
    #[serde(default)]
    pub corner_ratio: f64,
}

pub const DEFAULT_CORNER_RATIO: f64 = 0.07;

impl MeshOptions {
    pub fn new(h: f64, grading: f64) -> Self {
        MeshOptions {
            h,
            grading,
            grading_width: 1.0,
            sizing: Sizing::Hyperbolic,
            min_angle_deg: 20.0,
            max_nodes: 1_000_000,
            corner_ratio: DEFAULT_CORNER_RATIO,
        }
    }
}

/// Boundary edge `a → b` (domain on the left) lying on polygon edge `tag`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub tag: usize,
}

/// Triangulation of a truncated polygon. Nodes `0..corners` are the polygon
/// vertices in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriMesh2D {
    pub nodes: Vec<DiskPoint>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<BoundaryEdge>,
    pub corners: usize,
    /// Interior angle of the polygon at each corner node.
    pub corner_angles: Vec<f64>,
}

/// Corners sharper than this get the angle exemption.
pub const SMALL_CORNER: f64 = std::f64::consts::FRAC_PI_3;

impl TriMesh2D {
    /// For each node, the polygon edges it lies on (two at corners, none inside).
    pub fn node_edges(&self) -> Vec<Vec<usize>> {
        let mut on = vec![Vec::new(); self.nodes.len()];
        for e in &self.boundary {
            for v in [e.a, e.b] {
                if !on[v].contains(&e.tag) {
                    on[v].push(e.tag);
                }
            }
        }
        for v in &mut on {
            v.sort_unstable();
        }
        on
    }

    pub fn is_boundary_node(&self) -> Vec<bool> {
        let mut b = vec![false; self.nodes.len()];
        for e in &self.boundary {
            b[e.a] = true;
            b[e.b] = true;
        }
        b
    }

    /// Euclidean area of triangle `t` (positive for valid meshes).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i].z());
        0.5 * ((b - a).re * (c - a).im - (b - a).im * (c - a).re)
    }

    /// Longest Euclidean edge.
    pub fn max_edge(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| (0..3).map(move |i| (t[i], t[(i + 1) % 3])))
            .map(|(a, b)| (self.nodes[a].z() - self.nodes[b].z()).norm())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("meshes always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, MeshError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), MeshError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

fn coord(p: [f64; 2]) -> robust::Coord<f64> {
    robust::Coord { x: p[0], y: p[1] }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    robust::orient2d(coord(a), coord(b), coord(c))
}

fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    robust::incircle(coord(a), coord(b), coord(c), coord(d))
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn to_c(p: [f64; 2]) -> C64 {
    C64::new(p[0], p[1])
}

fn circumcenter(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [f64; 2] {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    [a[0] + (cy * b2 - by * c2) / d, a[1] + (bx * c2 - cx * b2) / d]
}

fn circumradius(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let (x, y, z) = (norm(sub(a, b)), norm(sub(b, c)), norm(sub(c, a)));
    let area2 = ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
    x * y * z / (2.0 * area2)
}

/// Smallest interior angle of a triangle, in radians.
pub fn min_angle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let ang = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        let (u, v) = (sub(q, p), sub(r, p));
        (u[0] * v[1] - u[1] * v[0]).abs().atan2(dot(u, v))
    };
    ang(a, b, c).min(ang(b, c, a)).min(ang(c, a, b))
}

const NONE: usize = usize::MAX;

#[derive(Clone, Debug)]
struct Tri {
    v: [usize; 3],
    /// `nb[i]` is across the edge opposite `v[i]`.
    nb: [usize; 3],
    alive: bool,
}

/// Target size as a function of position.
struct SizeField {
    h: f64,
    sizing: Sizing,
    grading: f64,
    width: f64,
    walls: Vec<GeodesicShape>,
    hubs: Vec<C64>,
    ratio: f64,
}

impl SizeField {
    /// Hyperbolic distance from `z` to the complete geodesic carried by `g`.
    fn wall_distance(g: &GeodesicShape, z: C64) -> f64 {
        let denom = one_minus_norm_sqr(z);
        let sinh = match *g {
            GeodesicShape::Diameter { direction } => 2.0 * (direction.re * z.im - direction.im * z.re).abs() / denom,
            GeodesicShape::Arc { center, radius } => ((z - center).norm_sqr() - radius * radius).abs() / (radius * denom),
        };
        sinh.asinh()
    }

    fn at(&self, p: [f64; 2]) -> f64 {
        let z = to_c(p);
        let base = match self.sizing {
            Sizing::Hyperbolic => self.h * one_minus_norm_sqr(z).max(1e-12),
            Sizing::Euclidean => self.h,
        };
        let d = self.walls.iter().map(|g| Self::wall_distance(g, z)).fold(f64::INFINITY, f64::min);
        let g = 1.0 + (self.grading - 1.0) * (1.0 - d / self.width).max(0.0);
        let size = base / g;
        if self.ratio <= 0.0 {
            return size;
        }
        // radial grading keeps the fan around a jump corner resolved in angle
        let floor = size / 64.0;
        self.hubs
            .iter()
            .map(|&c| (self.ratio * (z - c).norm()).max(floor))
            .fold(size, f64::min)
    }
}

/// Point at hyperbolic distance `s` from `a` toward `b`.
fn geodesic_point(a: C64, b: C64, s: f64) -> C64 {
    let w = (b - a) / (C64::new(1.0, 0.0) - a.conj() * b);
    let u = w / w.norm() * (0.5 * s).tanh();
    (u + a) / (C64::new(1.0, 0.0) + a.conj() * u)
}

struct Builder {
    p: Vec<[f64; 2]>,
    t: Vec<Tri>,
    vt: Vec<usize>,
    /// Sorted endpoint pair of a boundary subsegment → polygon edge.
    seg: HashMap<(usize, usize), usize>,
    /// For each vertex: polygon corner index, or polygon edge it was placed on.
    corner_of: Vec<Option<usize>>,
    edge_of: Vec<Option<usize>>,
    hint: usize,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

enum Located {
    Inside(usize),
    /// The walk left the domain through the hull edge `i` of triangle `t`.
    Blocked(usize, usize),
}

impl Builder {
    fn add_point(&mut self, q: [f64; 2], corner: Option<usize>, edge: Option<usize>) -> usize {
        self.p.push(q);
        self.vt.push(NONE);
        self.corner_of.push(corner);
        self.edge_of.push(edge);
        self.p.len() - 1
    }

    fn tri_pts(&self, t: usize) -> [[f64; 2]; 3] {
        self.t[t].v.map(|i| self.p[i])
    }

    fn locate(&self, q: [f64; 2], start: usize) -> Located {
        let mut t = if self.t[start].alive { start } else { self.any_alive() };
        let mut steps = 0usize;
        'walk: loop {
            steps += 1;
            if steps > 10 * self.t.len() + 100 {
                // visibility walks cannot cycle on a Delaunay mesh; this is a guard only
                return Located::Inside(self.brute_locate(q).unwrap_or(t));
            }
            let tri = &self.t[t];
            for k in 0..3 {
                let i = (k + steps) % 3;
                let a = self.p[tri.v[(i + 1) % 3]];
                let b = self.p[tri.v[(i + 2) % 3]];
                if orient(a, b, q) < 0.0 {
                    if tri.nb[i] == NONE {
                        return Located::Blocked(t, i);
                    }
                    t = tri.nb[i];
                    continue 'walk;
                }
            }
            return Located::Inside(t);
        }
    }

    fn brute_locate(&self, q: [f64; 2]) -> Option<usize> {
        (0..self.t.len()).find(|&t| {
            self.t[t].alive && {
                let [a, b, c] = self.tri_pts(t);
                orient(a, b, q) >= 0.0 && orient(b, c, q) >= 0.0 && orient(c, a, q) >= 0.0
            }
        })
    }

    fn any_alive(&self) -> usize {
        (0..self.t.len()).rev().find(|&t| self.t[t].alive).expect("mesh has triangles")
    }

    /// Bowyer–Watson cavity of `q` grown from `start`; `None` if no
    /// star-shaped cavity exists.
    fn cavity(&self, q: [f64; 2], start: usize, skip: Option<(usize, usize)>) -> Option<(Vec<usize>, Vec<(usize, usize, usize)>)> {
        let mut in_cav: HashMap<usize, ()> = HashMap::new();
        let mut cav = vec![start];
        in_cav.insert(start, ());
        let mut i = 0;
        while i < cav.len() {
            let t = cav[i];
            i += 1;
            for k in 0..3 {
                let n = self.t[t].nb[k];
                if n == NONE || in_cav.contains_key(&n) {
                    continue;
                }
                let [a, b, c] = self.tri_pts(n);
                if incircle(a, b, c, q) > 0.0 {
                    in_cav.insert(n, ());
                    cav.push(n);
                }
            }
        }
        loop {
            let mut boundary = Vec::new();
            let mut grow = None;
            for &t in &cav {
                for k in 0..3 {
                    let n = self.t[t].nb[k];
                    if n != NONE && in_cav.contains_key(&n) {
                        continue;
                    }
                    let e0 = self.t[t].v[(k + 1) % 3];
                    let e1 = self.t[t].v[(k + 2) % 3];
                    if Some(key(e0, e1)) == skip {
                        continue;
                    }
                    if orient(self.p[e0], self.p[e1], q) <= 0.0 {
                        if n == NONE {
                            return None;
                        }
                        grow = Some(n);
                        break;
                    }
                    boundary.push((e0, e1, n));
                }
                if grow.is_some() {
                    break;
                }
            }
            match grow {
                Some(n) => {
                    in_cav.insert(n, ());
                    cav.push(n);
                }
                None => return Some((cav, boundary)),
            }
        }
    }

    fn fill(&mut self, v: usize, cav: &[usize], boundary: &[(usize, usize, usize)]) -> Vec<usize> {
        for &t in cav {
            self.t[t].alive = false;
        }
        let mut by_e0: HashMap<usize, usize> = HashMap::with_capacity(boundary.len());
        let mut by_e1: HashMap<usize, usize> = HashMap::with_capacity(boundary.len());
        let mut new = Vec::with_capacity(boundary.len());
        for &(e0, e1, out) in boundary {
            let id = self.t.len();
            self.t.push(Tri {
                v: [v, e0, e1],
                nb: [out, NONE, NONE],
                alive: true,
            });
            if out != NONE {
                let o = &mut self.t[out];
                for k in 0..3 {
                    let a = o.v[(k + 1) % 3];
                    let b = o.v[(k + 2) % 3];
                    if a == e1 && b == e0 {
                        o.nb[k] = id;
                    }
                }
            }
            by_e0.insert(e0, id);
            by_e1.insert(e1, id);
            new.push(id);
        }
        for &id in &new {
            let [_, e0, e1] = self.t[id].v;
            // across edge (e1, v) is the triangle starting at e1; across (v, e0) the one ending at e0
            self.t[id].nb[1] = by_e0.get(&e1).copied().unwrap_or(NONE);
            self.t[id].nb[2] = by_e1.get(&e0).copied().unwrap_or(NONE);
            for &w in &self.t[id].v {
                self.vt[w] = id;
            }
        }
        self.hint = *new.last().unwrap_or(&self.hint);
        new
    }

    /// Inserts `q` if a valid cavity exists.
    fn insert(&mut self, q: [f64; 2], start: usize, skip: Option<(usize, usize)>, edge: Option<usize>) -> Option<(usize, Vec<usize>)> {
        let (cav, boundary) = self.cavity(q, start, skip)?;
        let v = self.add_point(q, None, edge);
        let new = self.fill(v, &cav, &boundary);
        Some((v, new))
    }

    fn has_edge(&self, a: usize, b: usize) -> bool {
        let t0 = self.vt[a];
        if t0 == NONE {
            return false;
        }
        // scan the fan around a in both directions
        let mut stack = vec![t0];
        let mut seen: Vec<usize> = Vec::new();
        while let Some(t) = stack.pop() {
            if seen.contains(&t) {
                continue;
            }
            seen.push(t);
            let tri = &self.t[t];
            if tri.v.contains(&b) {
                return true;
            }
            let i = tri.v.iter().position(|&x| x == a).unwrap();
            for k in [(i + 1) % 3, (i + 2) % 3] {
                if tri.nb[k] != NONE {
                    stack.push(tri.nb[k]);
                }
            }
        }
        false
    }
}

struct Polygon<'a> {
    t: &'a TruncatedPolygon,
    shapes: Vec<GeodesicShape>,
    small: Vec<bool>,
}

impl Polygon<'_> {
    /// Point of polygon edge `e` between two points near it.
    fn split_point(&self, e: usize, a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        match self.shapes[e] {
            GeodesicShape::Diameter { .. } => mid,
            GeodesicShape::Arc { center, radius } => {
                let d = to_c(mid) - center;
                let z = center + d * (radius / d.norm());
                [z.re, z.im]
            }
        }
    }

    /// Polygon edges incident to a vertex of the mesh under construction.
    fn on_edges(&self, b: &Builder, v: usize) -> [Option<usize>; 2] {
        let n = self.t.len();
        if let Some(c) = b.corner_of[v] {
            [Some((c + n - 1) % n), Some(c)]
        } else {
            [b.edge_of[v], None]
        }
    }

    /// Small corner at which polygon edges `e` and `f` meet, if any.
    fn small_corner_between(&self, e: usize, f: usize) -> Option<usize> {
        let n = self.t.len();
        if (e + 1) % n == f && self.small[f] {
            Some(f)
        } else if (f + 1) % n == e && self.small[e] {
            Some(e)
        } else {
            None
        }
    }

    fn across_small_corner(&self, b: &Builder, u: usize, v: usize) -> bool {
        for e in self.on_edges(b, u).into_iter().flatten() {
            for f in self.on_edges(b, v).into_iter().flatten() {
                if e != f && self.small_corner_between(e, f).is_some() {
                    return true;
                }
            }
        }
        false
    }

    fn all_near_small_corner(&self, b: &Builder, vs: [usize; 3]) -> bool {
        let n = self.t.len();
        (0..n).filter(|&c| self.small[c]).any(|c| {
            let (e, f) = ((c + n - 1) % n, c);
            vs.iter().all(|&v| self.on_edges(b, v).into_iter().flatten().any(|x| x == e || x == f))
        })
    }
}

/// Triangulates with the default options for edge scale `h` and `grading`.
pub fn triangulate(t: &TruncatedPolygon, h: f64, grading: f64) -> Result<TriMesh2D, MeshError> {
    triangulate_with(t, &MeshOptions::new(h, grading))
}

pub fn triangulate_with(t: &TruncatedPolygon, opts: &MeshOptions) -> Result<TriMesh2D, MeshError> {
    if !(opts.h > 0.0 && opts.h.is_finite()) {
        return Err(MeshError::BadParameter { name: "h", value: opts.h });
    }
    if !(opts.grading >= 1.0 && opts.grading.is_finite()) {
        return Err(MeshError::BadParameter {
            name: "grading",
            value: opts.grading,
        });
    }
    if !(opts.min_angle_deg > 0.0 && opts.min_angle_deg <= 30.0) {
        return Err(MeshError::BadParameter {
            name: "min_angle_deg",
            value: opts.min_angle_deg,
        });
    }
    let n = t.len();
    let shapes: Vec<GeodesicShape> = (0..n).map(|i| t.edge(i).shape()).collect();
    let corner_angles: Vec<f64> = (0..n).map(|i| t.corner_angle(i)).collect();
    let poly = Polygon {
        t,
        shapes: shapes.clone(),
        small: corner_angles.iter().map(|&a| a < SMALL_CORNER).collect(),
    };
    let field = SizeField {
        h: opts.h,
        sizing: opts.sizing,
        grading: opts.grading,
        width: opts.grading_width,
        walls: (0..n).filter(|&i| t.labels[i].is_infinite()).map(|i| shapes[i]).collect(),
        hubs: (0..n)
            .filter(|&i| !t.source.vertices()[i].is_ideal() && t.labels[i] != t.labels[(i + n - 1) % n])
            .map(|i| t.vertices[i].z())
            .collect(),
        ratio: opts.corner_ratio,
    };

    // super triangle, then polygon corners, then boundary samples
    let mut b = Builder {
        p: Vec::new(),
        t: Vec::new(),
        vt: Vec::new(),
        seg: HashMap::new(),
        corner_of: Vec::new(),
        edge_of: Vec::new(),
        hint: 0,
    };
    for q in [[-50.0, -50.0], [50.0, -50.0], [0.0, 60.0]] {
        b.add_point(q, None, None);
    }
    b.t.push(Tri {
        v: [0, 1, 2],
        nb: [NONE; 3],
        alive: true,
    });
    b.vt = vec![0; 3];
    let corner_ids: Vec<usize> = (0..n)
        .map(|i| {
            let z = t.vertices[i].z();
            b.add_point([z.re, z.im], Some(i), None)
        })
        .collect();

    let mut chains: Vec<Vec<usize>> = Vec::new();
    for e in 0..n {
        let (za, zb) = (t.vertices[e].z(), t.vertices[(e + 1) % n].z());
        let len = dist_z(za, zb);
        let sag_radius = match shapes[e] {
            GeodesicShape::Arc { radius, .. } => Some(radius),
            GeodesicShape::Diameter { .. } => None,
        };
        // points per unit hyperbolic length, integrated along the edge
        let density = |s: f64| {
            let z = geodesic_point(za, zb, s);
            let lam = 2.0 / one_minus_norm_sqr(z);
            let mut step = field.at([z.re, z.im]);
            if let Some(rad) = sag_radius {
                step = step.min(2.0 * opts.h * rad.sqrt());
            }
            1.0 / (step * lam)
        };
        let m = 4000;
        let mut cum = vec![0.0; m + 1];
        for j in 0..m {
            let s0 = len * j as f64 / m as f64;
            let s1 = len * (j + 1) as f64 / m as f64;
            cum[j + 1] = cum[j] + 0.5 * (density(s0) + density(s1)) * (s1 - s0);
        }
        let count = (cum[m].ceil() as usize).max(1);
        let mut chain = vec![corner_ids[e]];
        let mut j = 0;
        for k in 1..count {
            let target = cum[m] * k as f64 / count as f64;
            while cum[j + 1] < target {
                j += 1;
            }
            let frac = (target - cum[j]) / (cum[j + 1] - cum[j]);
            let s = len * (j as f64 + frac) / m as f64;
            let z = geodesic_point(za, zb, s);
            chain.push(b.add_point([z.re, z.im], None, Some(e)));
        }
        chain.push(corner_ids[(e + 1) % n]);
        chains.push(chain);
    }
    if b.p.len() > opts.max_nodes {
        return Err(MeshError::TooManyNodes(opts.max_nodes));
    }

    // plain Delaunay of the boundary samples
    let total = b.p.len();
    for v in 3..total {
        let q = b.p[v];
        let start = match b.locate(q, b.hint) {
            Located::Inside(t) => t,
            Located::Blocked(..) => unreachable!("super triangle contains the disk"),
        };
        let (cav, boundary) = b.cavity(q, start, None).expect("unconstrained cavity is star-shaped");
        b.fill(v, &cav, &boundary);
    }
    let mut segs: VecDeque<(usize, usize, usize)> = VecDeque::new();
    for (e, chain) in chains.iter().enumerate() {
        for w in chain.windows(2) {
            segs.push_back((w[0], w[1], e));
        }
    }
    // recover missing boundary subsegments by splitting them
    let mut done = Vec::new();
    while let Some((a, c, e)) = segs.pop_front() {
        if b.has_edge(a, c) {
            done.push((a, c, e));
            continue;
        }
        let q = poly.split_point(e, b.p[a], b.p[c]);
        let start = match b.locate(q, b.vt[a]) {
            Located::Inside(t) => t,
            Located::Blocked(..) => unreachable!(),
        };
        let (cav, boundary) = b.cavity(q, start, None).expect("unconstrained cavity is star-shaped");
        let m = b.add_point(q, None, Some(e));
        b.fill(m, &cav, &boundary);
        segs.push_front((m, c, e));
        segs.push_front((a, m, e));
        if b.p.len() > opts.max_nodes {
            return Err(MeshError::TooManyNodes(opts.max_nodes));
        }
    }
    for &(a, c, e) in &done {
        b.seg.insert(key(a, c), e);
    }

    // carve away everything outside the boundary
    let mut outside = vec![false; b.t.len()];
    let mut stack: Vec<usize> = (0..b.t.len()).filter(|&i| b.t[i].alive && b.t[i].v.iter().any(|&v| v < 3)).collect();
    while let Some(i) = stack.pop() {
        if outside[i] {
            continue;
        }
        outside[i] = true;
        for k in 0..3 {
            let nb = b.t[i].nb[k];
            let e0 = b.t[i].v[(k + 1) % 3];
            let e1 = b.t[i].v[(k + 2) % 3];
            if nb != NONE && !outside[nb] && !b.seg.contains_key(&key(e0, e1)) {
                stack.push(nb);
            }
        }
    }
    for i in 0..b.t.len() {
        if b.t[i].alive && outside[i] {
            b.t[i].alive = false;
        }
    }
    for i in 0..b.t.len() {
        if !b.t[i].alive {
            continue;
        }
        for k in 0..3 {
            let nb = b.t[i].nb[k];
            if nb != NONE && !b.t[nb].alive {
                b.t[i].nb[k] = NONE;
            }
        }
        for &w in &b.t[i].v {
            b.vt[w] = i;
        }
    }
    b.hint = b.any_alive();

    refine(&mut b, &poly, &field, opts)?;
    Ok(compact(&b, &corner_ids, corner_angles))
}

fn refine(b: &mut Builder, poly: &Polygon, field: &SizeField, opts: &MeshOptions) -> Result<(), MeshError> {
    let min_ang = opts.min_angle_deg.to_radians();
    let min_split = 1e-7 * opts.h;
    let mut tri_queue: VecDeque<usize> = (0..b.t.len()).filter(|&i| b.t[i].alive).collect();
    let mut seg_queue: VecDeque<(usize, usize)> = VecDeque::new();
    let mut stuck: HashMap<usize, ()> = HashMap::new();

    let encroached = |b: &Builder, t: usize, k: usize| -> bool {
        let tri = &b.t[t];
        let (a, c, apex) = (tri.v[(k + 1) % 3], tri.v[(k + 2) % 3], tri.v[k]);
        if poly.across_small_corner(b, apex, a) && poly.across_small_corner(b, apex, c) {
            return false;
        }
        let (pa, pc, pv) = (b.p[a], b.p[c], b.p[apex]);
        dot(sub(pa, pv), sub(pc, pv)) < 0.0
    };
    for i in 0..b.t.len() {
        if b.t[i].alive {
            for k in 0..3 {
                if b.t[i].nb[k] == NONE && encroached(b, i, k) {
                    seg_queue.push_back((i, k));
                }
            }
        }
    }

    // returns the new triangles, or None if the segment could not be split
    let split_segment = |b: &mut Builder, t: usize, k: usize| -> Option<Vec<usize>> {
        let tri = b.t[t].clone();
        let (a, c) = (tri.v[(k + 1) % 3], tri.v[(k + 2) % 3]);
        let e = *b.seg.get(&key(a, c))?;
        let (pa, pc) = (b.p[a], b.p[c]);
        if norm(sub(pa, pc)) < 2.0 * min_split {
            return None;
        }
        let on_arc = poly.split_point(e, pa, pc);
        let [x, y, z] = b.tri_pts(t);
        let inside = orient(x, y, on_arc) > 0.0 && orient(y, z, on_arc) > 0.0 && orient(z, x, on_arc) > 0.0;
        let q = if inside { on_arc } else { [0.5 * (pa[0] + pc[0]), 0.5 * (pa[1] + pc[1])] };
        let (m, new) = b.insert(q, t, Some(key(a, c)), Some(e))?;
        b.seg.remove(&key(a, c));
        b.seg.insert(key(a, m), e);
        b.seg.insert(key(m, c), e);
        Some(new)
    };

    loop {
        if b.p.len() > opts.max_nodes {
            return Err(MeshError::TooManyNodes(opts.max_nodes));
        }
        if let Some((t, k)) = seg_queue.pop_front() {
            if !b.t[t].alive || b.t[t].nb[k] != NONE || !encroached(b, t, k) {
                continue;
            }
            if let Some(new) = split_segment(b, t, k) {
                for &i in &new {
                    tri_queue.push_back(i);
                    for kk in 0..3 {
                        if b.t[i].nb[kk] == NONE && encroached(b, i, kk) {
                            seg_queue.push_back((i, kk));
                        }
                    }
                }
            }
            continue;
        }
        let Some(t) = tri_queue.pop_front() else { break };
        if !b.t[t].alive || stuck.contains_key(&t) {
            continue;
        }
        let [pa, pb, pc] = b.tri_pts(t);
        let centroid = [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0];
        // an equilateral triangle of side h has circumradius h/√3
        let too_big = circumradius(pa, pb, pc) * 3f64.sqrt() > field.at(centroid);
        let skinny = min_angle(pa, pb, pc) < min_ang && !exempt(b, poly, t);
        if !too_big && !skinny {
            continue;
        }
        let cc = circumcenter(pa, pb, pc);
        let located = b.locate(cc, t);
        let target = match located {
            Located::Blocked(bt, bk) => {
                // the circumcentre lies beyond a boundary subsegment: split that instead
                match split_segment(b, bt, bk) {
                    Some(new) => {
                        tri_queue.extend(new.iter().copied());
                        for &i in &new {
                            for kk in 0..3 {
                                if b.t[i].nb[kk] == NONE && encroached(b, i, kk) {
                                    seg_queue.push_back((i, kk));
                                }
                            }
                        }
                        if b.t[t].alive {
                            tri_queue.push_back(t);
                        }
                    }
                    None => {
                        stuck.insert(t, ());
                    }
                }
                continue;
            }
            Located::Inside(it) => it,
        };
        let Some((cav, boundary)) = b.cavity(cc, target, None) else {
            stuck.insert(t, ());
            continue;
        };
        // boundary subsegments in the cavity that the circumcentre would encroach
        let mut enc = Vec::new();
        for &ct in &cav {
            for k in 0..3 {
                if b.t[ct].nb[k] != NONE {
                    continue;
                }
                let a = b.p[b.t[ct].v[(k + 1) % 3]];
                let c = b.p[b.t[ct].v[(k + 2) % 3]];
                if dot(sub(a, cc), sub(c, cc)) < 0.0 {
                    enc.push((ct, k));
                }
            }
        }
        if !enc.is_empty() {
            let mut progressed = false;
            for (ct, k) in enc {
                if !b.t[ct].alive || b.t[ct].nb[k] != NONE {
                    continue;
                }
                if let Some(new) = split_segment(b, ct, k) {
                    progressed = true;
                    tri_queue.extend(new.iter().copied());
                    for &i in &new {
                        for kk in 0..3 {
                            if b.t[i].nb[kk] == NONE && encroached(b, i, kk) {
                                seg_queue.push_back((i, kk));
                            }
                        }
                    }
                }
            }
            if !progressed {
                stuck.insert(t, ());
            } else if b.t[t].alive {
                tri_queue.push_back(t);
            }
            continue;
        }
        let v = b.add_point(cc, None, None);
        let new = b.fill(v, &cav, &boundary);
        for &i in &new {
            tri_queue.push_back(i);
            for kk in 0..3 {
                if b.t[i].nb[kk] == NONE && encroached(b, i, kk) {
                    seg_queue.push_back((i, kk));
                }
            }
        }
    }
    Ok(())
}

fn exempt(b: &Builder, poly: &Polygon, t: usize) -> bool {
    let v = b.t[t].v;
    if poly.all_near_small_corner(b, v) {
        return true;
    }
    let mut shortest = (f64::INFINITY, 0, 0);
    for k in 0..3 {
        let (x, y) = (v[k], v[(k + 1) % 3]);
        let l = norm(sub(b.p[x], b.p[y]));
        if l < shortest.0 {
            shortest = (l, x, y);
        }
    }
    poly.across_small_corner(b, shortest.1, shortest.2)
}

fn compact(b: &Builder, corner_ids: &[usize], corner_angles: Vec<f64>) -> TriMesh2D {
    let mut map = vec![NONE; b.p.len()];
    let mut nodes = Vec::new();
    for &c in corner_ids {
        map[c] = nodes.len();
        nodes.push(DiskPoint::new(to_c(b.p[c])).expect("inside disk"));
    }
    let mut used = vec![false; b.p.len()];
    for t in b.t.iter().filter(|t| t.alive) {
        for &v in &t.v {
            used[v] = true;
        }
    }
    for v in 0..b.p.len() {
        if used[v] && map[v] == NONE {
            map[v] = nodes.len();
            nodes.push(DiskPoint::new(to_c(b.p[v])).expect("inside disk"));
        }
    }
    let mut triangles = Vec::new();
    let mut boundary = Vec::new();
    for t in b.t.iter().filter(|t| t.alive) {
        triangles.push(t.v.map(|v| map[v]));
        for k in 0..3 {
            if t.nb[k] == NONE {
                let (a, c) = (t.v[(k + 1) % 3], t.v[(k + 2) % 3]);
                let tag = b.seg[&key(a, c)];
                boundary.push(BoundaryEdge {
                    a: map[a],
                    b: map[c],
                    tag,
                });
            }
        }
    }
    TriMesh2D {
        nodes,
        triangles,
        boundary,
        corners: corner_ids.len(),
        corner_angles,
    }
}

/// Summary of an independent mesh check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshAudit {
    pub nodes: usize,
    pub triangles: usize,
    pub boundary_edges: usize,
    /// Smallest angle over triangles subject to the bound, in degrees.
    pub min_angle_deg: f64,
    /// Triangles exempt from the bound because they span a sharp input corner.
    pub exempt: usize,
    pub euler_characteristic: i64,
}

/// Checks conformity, orientation, boundary tagging and the angle bound.
///
/// A triangle below `min_angle_deg` is accepted only when it spans a polygon
/// corner sharper than 60°: all of its vertices lie on the two polygon edges
/// meeting there, or its shortest edge joins those two edges.
pub fn audit(mesh: &TriMesh2D, polygon_edges: usize, min_angle_deg: f64) -> Result<MeshAudit, MeshError> {
    let fail = |s: String| Err(MeshError::Audit(s));
    let nv = mesh.nodes.len();
    // per undirected edge: number of uses and net orientation (+1 for a→b with a < b)
    let mut edges: HashMap<(usize, usize), (u32, i32)> = HashMap::new();
    let mut used = vec![false; nv];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        if t.iter().any(|&v| v >= nv) {
            return fail(format!("triangle {ti} has an out-of-range node"));
        }
        if mesh.signed_area(ti) <= 0.0 {
            return fail(format!("triangle {ti} is not positively oriented"));
        }
        for k in 0..3 {
            used[t[k]] = true;
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let e = edges.entry(key(a, b)).or_insert((0, 0));
            e.0 += 1;
            e.1 += if a < b { 1 } else { -1 };
        }
    }
    if let Some(v) = used.iter().position(|u| !u) {
        return fail(format!("node {v} belongs to no triangle"));
    }
    let mut boundary_set: HashMap<(usize, usize), ()> = HashMap::new();
    for (&(a, b), &(uses, net)) in &edges {
        match (uses, net) {
            (1, 1) => {
                boundary_set.insert((a, b), ());
            }
            (1, _) => {
                boundary_set.insert((b, a), ());
            }
            (2, 0) => {}
            _ => return fail(format!("edge ({a}, {b}) is used {uses} times with net orientation {net}")),
        }
    }
    let n_edges = edges.len();
    if boundary_set.len() != mesh.boundary.len() {
        return fail(format!("{} boundary edges found, {} tagged", boundary_set.len(), mesh.boundary.len()));
    }
    for e in &mesh.boundary {
        if !boundary_set.contains_key(&(e.a, e.b)) {
            return fail(format!("tagged edge ({}, {}) is not a boundary edge", e.a, e.b));
        }
        if e.tag >= polygon_edges {
            return fail(format!("boundary tag {} out of range", e.tag));
        }
    }
    let on = mesh.node_edges();
    let small: Vec<bool> = mesh.corner_angles.iter().map(|&a| a < SMALL_CORNER).collect();
    let np = polygon_edges;
    let spans = |vs: &[usize]| {
        (0..np).filter(|&c| small[c]).any(|c| {
            let (e, f) = ((c + np - 1) % np, c);
            vs.iter().all(|&v| on[v].iter().any(|&x| x == e || x == f))
        })
    };
    let across = |u: usize, v: usize| {
        on[u].iter().any(|&e| {
            on[v].iter().any(|&f| {
                e != f && (((e + 1) % np == f && small[f]) || ((f + 1) % np == e && small[e]))
            })
        })
    };
    let mut worst = 180.0f64;
    let mut exempt = 0;
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| {
            let z = mesh.nodes[i].z();
            [z.re, z.im]
        });
        let ang = min_angle(a, b, c).to_degrees();
        if ang >= min_angle_deg {
            worst = worst.min(ang);
            continue;
        }
        let mut sh = (f64::INFINITY, 0, 0);
        for k in 0..3 {
            let l = norm(sub(mesh.nodes[t[k]].z().to_array(), mesh.nodes[t[(k + 1) % 3]].z().to_array()));
            if l < sh.0 {
                sh = (l, t[k], t[(k + 1) % 3]);
            }
        }
        if spans(t) || across(sh.1, sh.2) {
            exempt += 1;
        } else {
            let cen = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
            return Err(MeshError::AngleBound {
                angle_deg: ang,
                x: cen[0],
                y: cen[1],
            });
        }
    }
    let chi = nv as i64 - n_edges as i64 + mesh.triangles.len() as i64;
    Ok(MeshAudit {
        nodes: nv,
        triangles: mesh.triangles.len(),
        boundary_edges: mesh.boundary.len(),
        min_angle_deg: worst,
        exempt,
        euler_characteristic: chi,
    })
}

trait ToArray {
    fn to_array(self) -> [f64; 2];
}

impl ToArray for C64 {
    fn to_array(self) -> [f64; 2] {
        [self.re, self.im]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{ideal_scherk_polygon, omega_theta_beta, reflect_union, triangle_domain};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    fn square_domain() -> LabeledPolygon {
        ideal_scherk_polygon(&[0.0, FRAC_PI_2, PI, 1.5 * PI]).unwrap()
    }

    /// Geodesic square with finite corners at `±a ± ai`, labelled with data 0.
    fn disk_square(a: f64) -> TruncatedPolygon {
        let v: Vec<Endpoint> = [(a, -a), (a, a), (-a, a), (-a, -a)]
            .iter()
            .map(|&(x, y)| DiskPoint::from_xy(x, y).unwrap().into())
            .collect();
        let p = LabeledPolygon::new(v, vec![EdgeLabel::Finite(0.0); 4]).unwrap();
        truncate(&p, 0.5).unwrap()
    }

    /// Area of the region bounded by the sampled boundary (shoelace).
    fn euclidean_area(m: &TriMesh2D) -> f64 {
        (0..m.triangles.len()).map(|t| m.signed_area(t)).sum()
    }

    #[test]
    fn truncating_the_right_triangle() {
        let t = truncate(&triangle_domain(FRAC_PI_2).unwrap(), 1.0 - 1.0 / 5.0).unwrap();
        let z: Vec<C64> = t.vertices.iter().map(|v| v.z()).collect();
        assert_eq!(z[0], C64::new(0.0, 0.0));
        assert!((z[1] - C64::new(0.8, 0.0)).norm() < 1e-15);
        assert!((z[2] - C64::new(0.0, 0.8)).norm() < 1e-15);
        assert_eq!(t.labels, triangle_domain(FRAC_PI_2).unwrap().labels());
        assert!(matches!(truncate(&square_domain(), 1.0), Err(MeshError::BadRadius(_))));
    }

    #[test]
    fn truncated_vertices_converge() {
        let p = square_domain();
        let mut last = f64::INFINITY;
        for n in [2, 4, 8, 16, 32] {
            let r = 1.0 - 1.0 / (n as f64 + 1.0);
            let t = truncate(&p, r).unwrap();
            let err = t
                .vertices
                .iter()
                .zip(p.vertices())
                .map(|(a, b)| (a.z() - b.z()).norm())
                .fold(0.0, f64::max);
            assert!(err < last);
            last = err;
        }
        assert!(last < 0.04);
    }

    #[test]
    fn corner_angles() {
        let t = truncate(&triangle_domain(FRAC_PI_2).unwrap(), 0.8).unwrap();
        assert!((t.corner_angle(0) - FRAC_PI_2).abs() < 1e-12);
        // angles of a hyperbolic triangle sum to less than π
        let s: f64 = (0..3).map(|i| t.corner_angle(i)).sum();
        assert!(s < PI && s > FRAC_PI_2);
        let sq = truncate(&square_domain(), 16.0 / 17.0).unwrap();
        for i in 0..4 {
            let a = sq.corner_angle(i).to_degrees();
            assert!(a > 1.0 && a < 15.0, "{a}");
        }
    }

    #[test]
    fn count_matches_area_oracle() {
        let t = disk_square(0.3);
        let mut opts = MeshOptions::new(0.1, 1.0);
        opts.sizing = Sizing::Euclidean;
        let m = triangulate_with(&t, &opts).unwrap();
        let area = euclidean_area(&m);
        let oracle = 2.0 * area / (0.1 * 0.1);
        let count = m.triangles.len() as f64;
        assert!(count > oracle / 2.0 && count < oracle * 2.0, "{count} vs {oracle}");

        opts.h = 0.05;
        let fine = triangulate_with(&t, &opts).unwrap();
        let ratio = fine.triangles.len() as f64 / count;
        assert!(ratio > 4.0 / 1.5 && ratio < 4.0 * 1.5, "ratio {ratio}");
    }

    #[test]
    fn meshes_pass_the_audit() {
        let k = 2;
        let fan = omega_theta_beta(k, FRAC_PI_6, PI / 36.0).unwrap();
        let g = Geodesic::new(DiskPoint::ORIGIN.into(), fan.vertices()[k + 1]).unwrap();
        let union = reflect_union(&fan, &g).unwrap();
        for (p, r) in [
            (square_domain(), 0.8),
            (square_domain(), 16.0 / 17.0),
            (triangle_domain(FRAC_PI_2).unwrap(), 16.0 / 17.0),
            (fan, 8.0 / 9.0),
            (union, 16.0 / 17.0),
        ] {
            let t = truncate(&p, r).unwrap();
            let m = triangulate(&t, 0.15, 8.0).unwrap();
            let a = audit(&m, t.len(), 20.0).unwrap();
            assert_eq!(a.euler_characteristic, 1);
            assert!(a.min_angle_deg >= 20.0);
            assert_eq!(m.corners, t.len());
            for (i, v) in t.vertices.iter().enumerate() {
                assert_eq!(m.nodes[i], *v);
            }
        }
    }

    #[test]
    fn boundary_follows_the_arcs() {
        let h = 0.1;
        let t = truncate(&square_domain(), 0.9).unwrap();
        let m = triangulate(&t, h, 1.0).unwrap();
        for e in &m.boundary {
            let g = t.edge(e.tag);
            let (a, b) = (m.nodes[e.a].z(), m.nodes[e.b].z());
            assert!(g.carrier_distance(a) < h * h / 2.0);
            // sagitta of the polyline segment against the true arc
            let mid = (a + b) * 0.5;
            assert!(g.carrier_distance(mid) <= h * h / 2.0, "{}", g.carrier_distance(mid));
        }
    }

    #[test]
    fn grading_refines_near_infinite_edges() {
        let t = truncate(&square_domain(), 0.9).unwrap();
        let flat = triangulate(&t, 0.1, 1.0).unwrap();
        let graded = triangulate(&t, 0.1, 8.0).unwrap();
        assert!(graded.triangles.len() > 4 * flat.triangles.len());
    }

    #[test]
    fn deterministic_and_round_trips() {
        let t = truncate(&square_domain(), 0.8).unwrap();
        let a = triangulate(&t, 0.2, 4.0).unwrap();
        let b = triangulate(&t, 0.2, 4.0).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(TriMesh2D::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn rejects_bad_parameters() {
        let t = truncate(&square_domain(), 0.8).unwrap();
        assert!(matches!(triangulate(&t, 0.0, 1.0), Err(MeshError::BadParameter { .. })));
        assert!(matches!(triangulate(&t, 0.1, 0.5), Err(MeshError::BadParameter { .. })));
        let mut o = MeshOptions::new(0.01, 8.0);
        o.max_nodes = 1000;
        assert!(matches!(triangulate_with(&t, &o), Err(MeshError::TooManyNodes(1000))));
    }
}
