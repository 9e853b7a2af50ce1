#![allow(dead_code)]

use scherk::domains::{EdgeLabel, LabeledPolygon};
use scherk::hyperbolic::{DiskPoint, Endpoint, Isometry, C64};
use scherk::mesher::{triangulate_with, truncate, MeshOptions, TriMesh2D};
use std::f64::consts::{FRAC_PI_2, PI};

pub fn square() -> LabeledPolygon {
    scherk::domains::ideal_scherk_polygon(&[0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]).unwrap()
}

pub fn mesh(p: &LabeledPolygon, r: f64, h: f64, grading: f64) -> TriMesh2D {
    triangulate_with(&truncate(p, r).unwrap(), &MeshOptions::new(h, grading)).unwrap()
}

/// Compact polygon with the given disk vertices.
pub fn finite_polygon(pts: &[(f64, f64)], labels: Vec<EdgeLabel>) -> LabeledPolygon {
    let v: Vec<Endpoint> = pts.iter().map(|&(x, y)| DiskPoint::from_xy(x, y).unwrap().into()).collect();
    LabeledPolygon::new(v, labels).unwrap()
}

/// The same triangulation moved by `phi`, with every boundary tag `t` renamed
/// `tag_map(t)`. Orientation-reversing maps flip the triangles.
pub fn transport_mesh(m: &TriMesh2D, phi: &Isometry, tag_map: impl Fn(usize) -> usize) -> TriMesh2D {
    let mut out = m.clone();
    out.nodes = m.nodes.iter().map(|&p| phi.apply_point(p)).collect();
    for b in &mut out.boundary {
        b.tag = tag_map(b.tag);
    }
    if phi.is_orientation_reversing() {
        for t in &mut out.triangles {
            t.swap(1, 2);
        }
        for b in &mut out.boundary {
            std::mem::swap(&mut b.a, &mut b.b);
        }
    }
    out
}

/// Hyperbolic area of a compact geodesic polygon from its interior angles.
pub fn polygon_area(angles: &[f64]) -> f64 {
    (angles.len() as f64 - 2.0) * PI - angles.iter().sum::<f64>()
}

pub fn c(x: f64, y: f64) -> C64 {
    C64::new(x, y)
}
