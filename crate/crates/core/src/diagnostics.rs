//! Intrinsic measurements on triangulated surfaces in H²×R: angle-defect
//! curvature, Gauss–Bonnet bookkeeping, vertical flux, harmonicity of the
//! height and the vertical normal component.
//!
//! Edge lengths are exact product-metric distances. Angles inside a triangle
//! are those of the Euclidean triangle with the same side lengths. Angles
//! measured in the ambient tangent space use the exact logarithm map of H².

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hyperbolic::{dist_z, signed_truncated_length, IdealPoint, C64};
use crate::surface::SurfaceMesh;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("ideal points are not in counterclockwise cyclic order")]
    NotCyclic,
    #[error("horodisks at {0} and {1} overlap")]
    Overlap(usize, usize),
}

/// Horizontal log map at `base`: the tangent vector (in an orthonormal frame)
/// whose geodesic reaches `z` at time one.
pub fn log_map(base: C64, z: C64) -> [f64; 2] {
    let w = (z - base) / (C64::new(1.0, 0.0) - base.conj() * z);
    let n = w.norm();
    if n == 0.0 {
        return [0.0, 0.0];
    }
    let d = dist_z(base, z);
    [d * w.re / n, d * w.im / n]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm(cross(a, b)).atan2(dot(a, b))
}

/// Triangle in a local chart: log map at the Euclidean centroid, height as
/// the third coordinate.
fn local_triangle(s: &SurfaceMesh, t: [usize; 3]) -> [[f64; 3]; 3] {
    let c = (s.points[t[0]].z() + s.points[t[1]].z() + s.points[t[2]].z()) / 3.0;
    t.map(|v| {
        let [x, y] = log_map(c, s.points[v].z());
        [x, y, s.heights[v]]
    })
}

/// Side lengths opposite each corner, corner angles and area of the
/// comparison triangle.
fn comparison(s: &SurfaceMesh, t: [usize; 3]) -> Option<([f64; 3], f64)> {
    let l = [s.edge_length(t[1], t[2]), s.edge_length(t[2], t[0]), s.edge_length(t[0], t[1])];
    if l.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let mut ang = [0.0; 3];
    for i in 0..3 {
        let (a, b, c) = (l[i], l[(i + 1) % 3], l[(i + 2) % 3]);
        ang[i] = ((b * b + c * c - a * a) / (2.0 * b * c)).clamp(-1.0, 1.0).acos();
    }
    // Heron, in the stable ordering
    let mut x = l;
    x.sort_by(|a, b| b.total_cmp(a));
    let (a, b, c) = (x[0], x[1], x[2]);
    let p = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c));
    Some((ang, 0.25 * p.max(0.0).sqrt()))
}

/// Angle at `v` between the ambient geodesics towards `a` and `b`.
fn ambient_angle(s: &SurfaceMesh, v: usize, a: usize, b: usize) -> f64 {
    let z = s.points[v].z();
    let [xa, ya] = log_map(z, s.points[a].z());
    let [xb, yb] = log_map(z, s.points[b].z());
    angle_between([xa, ya, s.heights[a] - s.heights[v]], [xb, yb, s.heights[b] - s.heights[v]])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    /// Angle defect over a third of the incident area; `None` on the boundary.
    #[serde(skip)]
    pub vertex_k: Vec<Option<f64>>,
    /// `π − ambient angle sum` at boundary vertices, `None` inside.
    #[serde(skip)]
    pub vertex_turning: Vec<Option<f64>>,
    /// Sum of interior angle defects.
    pub total: f64,
    /// Boundary turning `Σ (π − ambient angle sum)` over boundary vertices:
    /// geodesic curvature and exterior angles together.
    pub boundary_turning: f64,
    pub euler_characteristic: i64,
    /// `total + boundary_turning − 2πχ`.
    pub gauss_bonnet_residual: f64,
    pub vertices: usize,
    pub triangles: usize,
    /// Longest edge in the product metric.
    pub max_edge: f64,
}

/// Angle-defect curvature and Gauss–Bonnet bookkeeping.
pub fn gauss_curvature(s: &SurfaceMesh) -> CurvatureReport {
    let nv = s.len();
    let per_tri: Vec<Option<([f64; 3], f64)>> = s.triangles.par_iter().map(|&t| comparison(s, t)).collect();
    let mut angle_sum = vec![0.0; nv];
    let mut area = vec![0.0; nv];
    for (t, c) in s.triangles.iter().zip(&per_tri) {
        if let Some((ang, a)) = c {
            for i in 0..3 {
                angle_sum[t[i]] += ang[i];
                area[t[i]] += a / 3.0;
            }
        }
    }
    let boundary = s.boundary_vertices();
    let mut used = vec![false; nv];
    for t in &s.triangles {
        for &v in t {
            used[v] = true;
        }
    }
    let vertex_k: Vec<Option<f64>> = (0..nv)
        .map(|v| (used[v] && !boundary[v]).then(|| (TAU - angle_sum[v]) / area[v]))
        .collect();
    let total: f64 = (0..nv).filter(|&v| used[v] && !boundary[v]).map(|v| TAU - angle_sum[v]).sum();

    let ambient: Vec<(usize, f64)> = s
        .triangles
        .par_iter()
        .flat_map_iter(|t| {
            (0..3)
                .filter(|&i| boundary[t[i]])
                .map(|i| (t[i], ambient_angle(s, t[i], t[(i + 1) % 3], t[(i + 2) % 3])))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut ambient_sum = vec![0.0; nv];
    for (v, a) in ambient {
        ambient_sum[v] += a;
    }
    let vertex_turning: Vec<Option<f64>> = (0..nv).map(|v| boundary[v].then(|| PI - ambient_sum[v])).collect();
    let boundary_turning: f64 = vertex_turning.iter().flatten().sum();
    let chi = s.euler_characteristic();
    let max_edge = s
        .triangles
        .par_iter()
        .map(|t| (0..3).map(|i| s.edge_length(t[i], t[(i + 1) % 3])).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max);
    CurvatureReport {
        vertex_k,
        vertex_turning,
        total,
        boundary_turning,
        euler_characteristic: chi,
        gauss_bonnet_residual: total + boundary_turning - TAU * chi as f64,
        vertices: nv,
        triangles: s.triangles.len(),
        max_edge,
    }
}

/// `∫K + ∮κ_g + Σ exterior angles − 2πχ`. Interior angles are comparison
/// angles and boundary angles ambient ones, so the residual measures the
/// discretization error rather than vanishing identically.
pub fn gauss_bonnet_residual(s: &SurfaceMesh) -> f64 {
    gauss_curvature(s).gauss_bonnet_residual
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxReport {
    pub r: f64,
    pub t: f64,
    /// `∫ ⟨ν, ∂_t⟩` over the boundary of the part of the surface inside the
    /// cylinder `|z| ≤ r, |t| ≤ T`.
    pub flux: f64,
    /// Length of that boundary.
    pub perimeter: f64,
    pub triangles: usize,
}

impl FluxReport {
    pub fn relative(&self) -> f64 {
        if self.perimeter > 0.0 {
            self.flux.abs() / self.perimeter
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: [f64; 3],
    f: [f64; 3],
}

/// Vertical flux through the boundary of `S ∩ {|z| ≤ r, |t| ≤ T}`, with the
/// outward conormal taken in each triangle's plane.
pub fn flux_vertical(s: &SurfaceMesh, r: f64, t_probe: f64) -> FluxReport {
    let boundary: std::collections::HashSet<(usize, usize)> = s.boundary_edges().into_iter().collect();
    let parts: Vec<(f64, f64)> = s
        .triangles
        .par_iter()
        .map(|&tri| {
            let local = local_triangle(s, tri);
            let f = |v: usize| {
                let z = s.points[v].z();
                [z.norm_sqr() - r * r, s.heights[v] - t_probe, -s.heights[v] - t_probe]
            };
            // polygon vertices; edge i runs from vertex i to i+1 and is a cut
            // edge, a surface-boundary edge, or neither
            let mut poly: Vec<ClipVertex> = (0..3).map(|i| ClipVertex { p: local[i], f: f(tri[i]) }).collect();
            let mut counted: Vec<bool> = (0..3).map(|i| boundary.contains(&(tri[i], tri[(i + 1) % 3]))).collect();
            for k in 0..3 {
                if poly.is_empty() {
                    break;
                }
                let mut np = Vec::with_capacity(poly.len() + 1);
                let mut nc = Vec::with_capacity(poly.len() + 1);
                let n = poly.len();
                for i in 0..n {
                    let a = poly[i];
                    let b = poly[(i + 1) % n];
                    let (ina, inb) = (a.f[k] <= 0.0, b.f[k] <= 0.0);
                    if ina {
                        np.push(a);
                        nc.push(counted[i]);
                    }
                    if ina != inb {
                        let s = a.f[k] / (a.f[k] - b.f[k]);
                        let x = ClipVertex {
                            p: std::array::from_fn(|j| a.p[j] + s * (b.p[j] - a.p[j])),
                            f: std::array::from_fn(|j| a.f[j] + s * (b.f[j] - a.f[j])),
                        };
                        np.push(x);
                        // leaving the half-space starts a cut edge; entering continues edge i
                        nc.push(if ina { true } else { counted[i] });
                    }
                }
                poly = np;
                counted = nc;
            }
            let n = poly.len();
            if n < 3 {
                return (0.0, 0.0);
            }
            let normal = cross(sub(local[1], local[0]), sub(local[2], local[0]));
            let nn = norm(normal);
            if nn == 0.0 {
                return (0.0, 0.0);
            }
            let normal = normal.map(|x| x / nn);
            let mut flux = 0.0;
            let mut len = 0.0;
            for i in 0..n {
                if counted[i] {
                    let e = sub(poly[(i + 1) % n].p, poly[i].p);
                    flux += cross(e, normal)[2];
                    len += norm(e);
                }
            }
            (flux, len)
        })
        .collect();
    let (flux, perimeter) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    FluxReport {
        r,
        t: t_probe,
        flux,
        perimeter,
        triangles: s.triangles.len(),
    }
}

/// `(|p₁p₂| + |p₃p₄|) − (|p₂p₃| + |p₄p₁|)` with truncated lengths, for four
/// ideal points in counterclockwise order and horocycle sizes `s`.
pub fn scherk_condition(quad: [IdealPoint; 4], s: [f64; 4]) -> Result<f64, DiagnosticsError> {
    let mut total = 0.0;
    for i in 0..4 {
        let j = (i + 1) % 4;
        let gap = (quad[j].angle() - quad[i].angle()).rem_euclid(TAU);
        total += gap;
        if gap == 0.0 {
            return Err(DiagnosticsError::NotCyclic);
        }
    }
    if (total - TAU).abs() > 1e-9 {
        return Err(DiagnosticsError::NotCyclic);
    }
    let len = |i: usize, j: usize| -> Result<f64, DiagnosticsError> {
        let l = signed_truncated_length(quad[i], quad[j], s[i], s[j]);
        if l <= 0.0 {
            Err(DiagnosticsError::Overlap(i, j))
        } else {
            Ok(l)
        }
    };
    Ok(len(0, 1)? + len(2, 3)? - len(1, 2)? - len(3, 0)?)
}

/// Cotangent Laplace–Beltrami of the height at interior vertices (weak form,
/// induced-metric lengths): root sum of squares divided by the number of
/// interior vertices.
pub fn harmonicity_residual(s: &SurfaceMesh) -> f64 {
    let nv = s.len();
    let mut lap = vec![0.0; nv];
    for &t in &s.triangles {
        let Some((ang, _)) = comparison(s, t) else { continue };
        for i in 0..3 {
            let (a, b) = (t[(i + 1) % 3], t[(i + 2) % 3]);
            let w = 0.5 / ang[i].tan();
            lap[a] += w * (s.heights[b] - s.heights[a]);
            lap[b] += w * (s.heights[a] - s.heights[b]);
        }
    }
    let boundary = s.boundary_vertices();
    let interior: Vec<usize> = (0..nv).filter(|&v| !boundary[v]).collect();
    if interior.is_empty() {
        return 0.0;
    }
    interior.iter().map(|&v| lap[v] * lap[v]).sum::<f64>().sqrt() / interior.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct N3Profile {
    /// Area-weighted mean of `|N₃|` over incident triangles.
    #[serde(skip)]
    pub vertex: Vec<f64>,
    /// Maximum over vertices whose distance from the origin is at least 90%
    /// of the largest such distance.
    pub collar_max: f64,
    pub collar_vertices: usize,
}

/// Vertical component of the unit normal, per vertex and over the outer collar.
pub fn n3_profile(s: &SurfaceMesh) -> N3Profile {
    let nv = s.len();
    let tri: Vec<(f64, f64)> = s
        .triangles
        .par_iter()
        .map(|&t| {
            let l = local_triangle(s, t);
            let n = cross(sub(l[1], l[0]), sub(l[2], l[0]));
            let a = norm(n);
            if a == 0.0 {
                (0.0, 0.0)
            } else {
                ((n[2] / a).abs(), 0.5 * a)
            }
        })
        .collect();
    let mut acc = vec![0.0; nv];
    let mut wsum = vec![0.0; nv];
    for (t, &(n3, a)) in s.triangles.iter().zip(&tri) {
        for &v in t {
            acc[v] += n3 * a;
            wsum[v] += a;
        }
    }
    let vertex: Vec<f64> = (0..nv).map(|v| if wsum[v] > 0.0 { acc[v] / wsum[v] } else { 0.0 }).collect();
    let d: Vec<f64> = s.points.iter().map(|p| dist_z(C64::new(0.0, 0.0), p.z())).collect();
    let dmax = d.iter().copied().fold(0.0, f64::max);
    let collar: Vec<usize> = (0..nv).filter(|&v| wsum[v] > 0.0 && d[v] >= 0.9 * dmax).collect();
    N3Profile {
        collar_max: collar.iter().map(|&v| vertex[v]).fold(0.0, f64::max),
        collar_vertices: collar.len(),
        vertex,
    }
}

/// Everything measured on one surface, with its resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceReport {
    pub curvature: CurvatureReport,
    pub harmonicity_residual: f64,
    pub n3: N3Profile,
    pub flux: Vec<FluxReport>,
}

/// Curvature, harmonicity, `|N₃|` and the flux through each probe `(r, T)`.
pub fn surface_report(s: &SurfaceMesh, probes: &[(f64, f64)]) -> SurfaceReport {
    SurfaceReport {
        curvature: gauss_curvature(s),
        harmonicity_residual: harmonicity_residual(s),
        n3: n3_profile(s),
        flux: probes.iter().map(|&(r, t)| flux_vertical(s, r, t)).collect(),
    }
}
