//! Triangulated surfaces in H²×R: lifting graphs, half-turn symmetries,
//! assembly of the twisted Scherk surfaces and end counting.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{omega_theta_beta, reflect_union, triangle_domain, DomainError, LabeledPolygon};
use crate::hyperbolic::{dist_z, point_rotation_pi, reflect_across, DiskPoint, Endpoint, Geodesic, Isometry, C64};
use crate::solver::{exhaustion_solve, jump_corners, ExhaustionConfig, ExhaustionRun, GraphSolution, SolverError};

/// Distance within which a vertex counts as lying on a rotation axis.
pub const SEAM_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("no boundary vertices on the rotation axis (within {SEAM_TOL:e})")]
    NoSeam,
    #[error("probe height too low / insufficient resolution: {plus} curves at t = +{t}, {minus} at t = -{t}")]
    EndMismatch { t: f64, plus: usize, minus: usize },
    #[error("no divergent level curves at t = ±{t}")]
    NoEnds { t: f64 },
    #[error("surface has Euler characteristic {0}, which is not that of a once-punctured closed surface")]
    Topology(i64),
    #[error("k must be at least 1")]
    BadK,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rotation axis along which copies were glued.
#[derive(Clone, Debug, PartialEq)]
pub enum SeamKind {
    /// Horizontal geodesic at height 0.
    Horizontal(Geodesic),
    /// Vertical line over a point.
    Vertical(DiskPoint),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Seam {
    pub kind: SeamKind,
    pub vertices: Vec<usize>,
}

/// Triangulated surface with vertices `(z, t)` in disk coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMesh {
    pub points: Vec<DiskPoint>,
    pub heights: Vec<f64>,
    pub triangles: Vec<[usize; 3]>,
    /// Which symmetry image produced each vertex (seam vertices keep the
    /// lowest id).
    pub copy: Vec<u32>,
    pub seams: Vec<Seam>,
}

/// Product-metric distance between `(z₁, t₁)` and `(z₂, t₂)`.
pub fn product_dist(z1: C64, t1: f64, z2: C64, t2: f64) -> f64 {
    dist_z(z1, z2).hypot(t1 - t2)
}

impl SurfaceMesh {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        product_dist(self.points[a].z(), self.heights[a], self.points[b].z(), self.heights[b])
    }

    /// Directed boundary edges (edges used by exactly one triangle), as they
    /// appear in that triangle.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut count: HashMap<(usize, usize), (u32, (usize, usize))> = HashMap::new();
        for t in &self.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                let e = count.entry((a.min(b), a.max(b))).or_insert((0, (a, b)));
                e.0 += 1;
            }
        }
        let mut out: Vec<(usize, usize)> = count.into_values().filter(|(c, _)| *c == 1).map(|(_, e)| e).collect();
        out.sort_unstable();
        out
    }

    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut b = vec![false; self.len()];
        for (a, c) in self.boundary_edges() {
            b[a] = true;
            b[c] = true;
        }
        b
    }

    /// `V − E + F` over vertices used by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        let mut used = vec![false; self.len()];
        for t in &self.triangles {
            for i in 0..3 {
                used[t[i]] = true;
                let (a, b) = (t[i], t[(i + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        used.iter().filter(|&&u| u).count() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// True if every edge has at most two triangles and interior edges are
    /// traversed once in each direction.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut seen: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &self.triangles {
            for i in 0..3 {
                *seen.entry((t[i], t[(i + 1) % 3])).or_default() += 1;
            }
        }
        seen.values().all(|&c| c == 1)
    }

    /// Image under `(z, t) ↦ (φ(z), ±t)`, optionally with reversed triangle
    /// orientation. A half-turn about an axis in the boundary flips the
    /// normal, so glued images are reversed to keep the union oriented.
    pub fn mapped(&self, phi: &Isometry, negate_t: bool, reverse: bool) -> SurfaceMesh {
        SurfaceMesh {
            points: self.points.iter().map(|&p| phi.apply_point(p)).collect(),
            heights: self.heights.iter().map(|&t| if negate_t { -t } else { t }).collect(),
            triangles: self
                .triangles
                .iter()
                .map(|&[a, b, c]| if reverse { [a, c, b] } else { [a, b, c] })
                .collect(),
            copy: self.copy.clone(),
            seams: self.seams.clone(),
        }
    }

    fn max_copy(&self) -> u32 {
        self.copy.iter().copied().max().unwrap_or(0)
    }

    /// `self ∪ image`, identifying the listed seam vertices with themselves.
    fn glue(&self, image: &SurfaceMesh, seam: &[usize], kind: SeamKind) -> SurfaceMesh {
        let offset = self.max_copy() + 1;
        let mut out = self.clone();
        let mut is_seam = vec![false; self.len()];
        for &v in seam {
            is_seam[v] = true;
        }
        let mut map = vec![0usize; image.len()];
        for v in 0..image.len() {
            if is_seam[v] {
                map[v] = v;
            } else {
                map[v] = out.points.len();
                out.points.push(image.points[v]);
                out.heights.push(image.heights[v]);
                out.copy.push(image.copy[v] + offset);
            }
        }
        out.triangles.extend(image.triangles.iter().map(|t| t.map(|v| map[v])));
        for s in &image.seams {
            out.seams.push(Seam {
                kind: s.kind.clone(),
                vertices: s.vertices.iter().map(|&v| map[v]).collect(),
            });
        }
        out.seams.push(Seam {
            kind,
            vertices: seam.to_vec(),
        });
        out
    }

    /// Per-vertex `[x, y, t]`.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .zip(&self.heights)
            .map(|(p, &t)| [p.z().re, p.z().im, t])
            .collect()
    }

    /// Wavefront OBJ with positions `(x, y, t)`.
    pub fn write_obj(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "# vertices {} triangles {}", self.len(), self.triangles.len())?;
        for [x, y, t] in self.positions() {
            writeln!(w, "v {x:.17e} {y:.17e} {t:.17e}")?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }

    /// ASCII PLY with per-vertex copy id and a scalar (usually `|N₃|`).
    pub fn write_ply(&self, w: &mut impl Write, scalar: &[f64]) -> std::io::Result<()> {
        writeln!(w, "ply\nformat ascii 1.0")?;
        writeln!(w, "element vertex {}", self.len())?;
        writeln!(w, "property double x\nproperty double y\nproperty double t\nproperty int copy\nproperty double n3")?;
        writeln!(w, "element face {}", self.triangles.len())?;
        writeln!(w, "property list uchar int vertex_indices\nend_header")?;
        for (i, [x, y, t]) in self.positions().into_iter().enumerate() {
            let s = scalar.get(i).copied().unwrap_or(f64::NAN);
            writeln!(w, "{x:.17e} {y:.17e} {t:.17e} {} {s:.17e}", self.copy[i])?;
        }
        for t in &self.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn save_obj(&self, path: &Path) -> Result<(), SurfaceError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_obj(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn save_ply(&self, path: &Path, scalar: &[f64]) -> Result<(), SurfaceError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ply(&mut f, scalar)?;
        f.flush()?;
        Ok(())
    }
}

/// Graph surface of a solution. At corners where the boundary data jumps the
/// corner node is replaced by a vertical column joining the two boundary
/// values: each triangle of the corner's fan meets the column at the mean of
/// its other two heights (the value the solver uses there), and consecutive
/// fan triangles are joined by vertical wall triangles.
pub fn lift(sol: &GraphSolution) -> SurfaceMesh {
    let mesh = &sol.mesh;
    let nv = mesh.nodes.len();
    let mut side_value: HashMap<(usize, usize), f64> = HashMap::new();
    for e in &mesh.boundary {
        let v = sol.labels[e.tag].capped(sol.cap);
        side_value.insert((e.a, e.b), v);
        side_value.insert((e.b, e.a), v);
    }
    let jump = jump_corners(mesh, &sol.labels, sol.cap);

    let mut out = SurfaceMesh {
        points: Vec::with_capacity(nv),
        heights: Vec::with_capacity(nv),
        triangles: Vec::with_capacity(mesh.triangles.len() + 64),
        copy: Vec::new(),
        seams: Vec::new(),
    };
    let mut index = vec![usize::MAX; nv];
    for v in 0..nv {
        if !jump[v] {
            index[v] = out.points.len();
            out.points.push(mesh.nodes[v]);
            out.heights.push(sol.u[v]);
        }
    }

    let mut fans: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for t in &mesh.triangles {
        match (0..3).find(|&i| jump[t[i]]) {
            Some(i) => fans.entry(t[i]).or_default().push((t[(i + 1) % 3], t[(i + 2) % 3])),
            None => out.triangles.push(t.map(|v| index[v])),
        }
    }

    for (c, pairs) in fans {
        let next: HashMap<usize, usize> = pairs.iter().copied().collect();
        let targets: std::collections::HashSet<usize> = pairs.iter().map(|p| p.1).collect();
        let start = pairs.iter().map(|p| p.0).find(|a| !targets.contains(a)).expect("corner fans are open");
        let mut ring = vec![start];
        while let Some(&b) = next.get(ring.last().unwrap()) {
            ring.push(b);
        }
        let m = ring.len() - 1;
        let value = |w: usize| if jump[w] { sol.u[w] } else { out.heights[index[w]] };
        // column heights: boundary value, one per fan triangle, boundary value
        let mut heights = Vec::with_capacity(m + 2);
        heights.push(side_value[&(c, ring[0])]);
        for i in 0..m {
            heights.push(0.5 * (value(ring[i]) + value(ring[i + 1])));
        }
        heights.push(side_value[&(c, ring[m])]);
        let z = mesh.nodes[c];
        let mut col = Vec::with_capacity(m + 2);
        for (i, &h) in heights.iter().enumerate() {
            if i > 0 && h == heights[i - 1] {
                col.push(*col.last().unwrap());
            } else {
                col.push(out.points.len());
                out.points.push(z);
                out.heights.push(h);
            }
        }
        for i in 0..m {
            out.triangles.push([col[i + 1], index[ring[i]], index[ring[i + 1]]]);
        }
        // walls hinged at each fan vertex, including the two boundary ends
        for i in 0..=m {
            if col[i] != col[i + 1] {
                out.triangles.push([col[i], index[ring[i]], col[i + 1]]);
            }
        }
    }
    out.copy = vec![0; out.points.len()];
    out
}

fn seam_vertices(s: &SurfaceMesh, on_axis: impl Fn(C64, f64) -> bool) -> Vec<usize> {
    let boundary = s.boundary_vertices();
    (0..s.len())
        .filter(|&v| boundary[v] && on_axis(s.points[v].z(), s.heights[v]))
        .collect()
}

/// Image of `S` under the half-turn about the horizontal geodesic `g × {0}`,
/// without gluing.
pub fn horizontal_image(s: &SurfaceMesh, g: &Geodesic) -> SurfaceMesh {
    s.mapped(&reflect_across(g), true, true)
}

/// Image of `S` under the half-turn about `{c} × R`, without gluing.
pub fn vertical_image(s: &SurfaceMesh, c: DiskPoint) -> SurfaceMesh {
    s.mapped(&point_rotation_pi(c), false, true)
}

/// `S` together with its half-turn about the horizontal geodesic `g × {0}`,
/// glued along the boundary vertices lying on the axis.
pub fn rotate_pi_horizontal(s: &SurfaceMesh, g: &Geodesic) -> Result<SurfaceMesh, SurfaceError> {
    let seam = seam_vertices(s, |z, t| g.carrier_distance(z) <= SEAM_TOL && t.abs() <= SEAM_TOL);
    if seam.len() < 2 {
        return Err(SurfaceError::NoSeam);
    }
    let image = horizontal_image(s, g);
    Ok(s.glue(&image, &seam, SeamKind::Horizontal(*g)))
}

/// `S` together with its half-turn about the vertical line `{c} × R`.
pub fn rotate_pi_vertical(s: &SurfaceMesh, c: DiskPoint) -> Result<SurfaceMesh, SurfaceError> {
    let seam = seam_vertices(s, |z, _| (z - c.z()).norm() <= SEAM_TOL);
    if seam.len() < 2 {
        return Err(SurfaceError::NoSeam);
    }
    let image = vertical_image(s, c);
    Ok(s.glue(&image, &seam, SeamKind::Vertical(c)))
}

/// Result of [`assemble_twisted`].
#[derive(Clone, Debug)]
pub struct Assembly {
    pub k: usize,
    pub domain: LabeledPolygon,
    pub run: ExhaustionRun,
    pub piece: SurfaceMesh,
    pub surface: SurfaceMesh,
}

/// Solves the fundamental domain of the twisted Scherk surface `Σ_k` and
/// assembles it: four copies for `k = 1`, two copies of the graph over the
/// doubled domain for `k ≥ 2`.
pub fn assemble_twisted(k: usize, theta: f64, beta: f64, config: &ExhaustionConfig) -> Result<Assembly, SurfaceError> {
    let domain = twisted_domain(k, theta, beta)?;
    let run = exhaustion_solve(&domain, config)?;
    let piece = lift(run.last());
    let surface = if k == 1 {
        let g = Geodesic::new(DiskPoint::ORIGIN.into(), domain.vertices()[2])
            .expect("distinct endpoints");
        let half = rotate_pi_horizontal(&piece, &g)?;
        rotate_pi_vertical(&half, DiskPoint::ORIGIN)?
    } else {
        rotate_pi_vertical(&piece, DiskPoint::ORIGIN)?
    };
    Ok(Assembly {
        k,
        domain,
        run,
        piece,
        surface,
    })
}

/// The domain solved for `Σ_k`: the triangle for `k = 1`, otherwise the
/// perturbed fan doubled across its zero edge.
pub fn twisted_domain(k: usize, theta: f64, beta: f64) -> Result<LabeledPolygon, SurfaceError> {
    match k {
        0 => Err(SurfaceError::BadK),
        1 => Ok(triangle_domain(theta)?),
        _ => {
            let fan = omega_theta_beta(k, theta, beta)?;
            let apex: Endpoint = fan.vertices()[k + 1];
            let g = Geodesic::new(DiskPoint::ORIGIN.into(), apex).expect("distinct endpoints");
            Ok(reflect_union(&fan, &g)?)
        }
    }
}

/// Genus, number of ends and end degrees of a complete embedded surface.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndData {
    pub g: u32,
    pub n: u32,
    pub m: Vec<u32>,
}

/// `2π(2 − 2g − 2n − Σ mᵢ)`.
pub fn euler_total_curvature(e: &EndData) -> f64 {
    let k = 2 - 2 * e.g as i64 - 2 * e.n as i64 - e.m.iter().map(|&m| m as i64).sum::<i64>();
    k as f64 * TAU
}

/// Number of level curves of `t = level` ending on the boundary at both ends.
pub fn divergent_level_curves(s: &SurfaceMesh, level: f64) -> usize {
    let above = |v: usize| s.heights[v] > level;
    // the level set is a union of paths and loops through crossing edges;
    // paths end exactly at crossing boundary edges
    let mut edge_id: HashMap<(usize, usize), usize> = HashMap::new();
    let mut uses: Vec<u32> = Vec::new();
    for t in &s.triangles {
        for i in 0..3 {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            if above(a) != above(b) {
                let key = (a.min(b), a.max(b));
                let id = *edge_id.entry(key).or_insert_with(|| {
                    uses.push(0);
                    uses.len() - 1
                });
                uses[id] += 1;
            }
        }
    }
    // every path has two ends on boundary edges (used by one triangle)
    let ends = (0..uses.len()).filter(|&i| uses[i] == 1).count();
    ends / 2
}

/// Counts divergent level curves at `±T` and reads off the end data of a
/// one-ended surface: `m₁ = (curves at +T) − 1`, genus from the Euler
/// characteristic.
pub fn count_ends(s: &SurfaceMesh, t: f64) -> Result<EndData, SurfaceError> {
    let plus = divergent_level_curves(s, t);
    let minus = divergent_level_curves(s, -t);
    if plus != minus {
        return Err(SurfaceError::EndMismatch { t, plus, minus });
    }
    if plus == 0 {
        return Err(SurfaceError::NoEnds { t });
    }
    let chi = s.euler_characteristic();
    if chi > 1 || (1 - chi) % 2 != 0 {
        return Err(SurfaceError::Topology(chi));
    }
    Ok(EndData {
        g: ((1 - chi) / 2) as u32,
        n: 1,
        m: vec![plus as u32 - 1],
    })
}

/// Number of pairs of vertex-disjoint triangles that intersect, tested in
/// `(x, y, t)` coordinates with exact orientation predicates.
pub fn self_intersections(s: &SurfaceMesh) -> usize {
    let pos = s.positions();
    let nt = s.triangles.len();
    if nt == 0 {
        return 0;
    }
    let bbox: Vec<([f64; 3], [f64; 3])> = s
        .triangles
        .iter()
        .map(|t| {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for &v in t {
                for k in 0..3 {
                    lo[k] = lo[k].min(pos[v][k]);
                    hi[k] = hi[k].max(pos[v][k]);
                }
            }
            (lo, hi)
        })
        .collect();
    let mut ext: [Vec<f64>; 3] = Default::default();
    for (lo, hi) in &bbox {
        for k in 0..3 {
            ext[k].push(hi[k] - lo[k]);
        }
    }
    let mut cell = [0.0; 3];
    for k in 0..3 {
        ext[k].sort_by(f64::total_cmp);
        cell[k] = (2.0 * ext[k][ext[k].len() / 2]).max(1e-9);
    }
    let mut gmin = [f64::INFINITY; 3];
    for (lo, _) in &bbox {
        for k in 0..3 {
            gmin[k] = gmin[k].min(lo[k]);
        }
    }
    let cell_of = |p: &[f64; 3]| -> [i64; 3] { std::array::from_fn(|k| ((p[k] - gmin[k]) / cell[k]).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (t, (lo, hi)) in bbox.iter().enumerate() {
        let (a, b) = (cell_of(lo), cell_of(hi));
        for i in a[0]..=b[0] {
            for j in a[1]..=b[1] {
                for k in a[2]..=b[2] {
                    grid.entry([i, j, k]).or_default().push(t);
                }
            }
        }
    }
    let mut cells: Vec<(&[i64; 3], &Vec<usize>)> = grid.iter().collect();
    cells.sort_unstable_by_key(|c| *c.0);
    cells
        .par_iter()
        .map(|(key, list)| {
            let mut hits = 0;
            for (x, &a) in list.iter().enumerate() {
                for &b in &list[x + 1..] {
                    let ta = s.triangles[a];
                    let tb = s.triangles[b];
                    if ta.iter().any(|v| tb.contains(v)) {
                        continue;
                    }
                    // count each pair once: in the cell holding the low corner of the overlap
                    let lo: [f64; 3] = std::array::from_fn(|k| bbox[a].0[k].max(bbox[b].0[k]));
                    let hi: [f64; 3] = std::array::from_fn(|k| bbox[a].1[k].min(bbox[b].1[k]));
                    if (0..3).any(|k| lo[k] > hi[k]) || cell_of(&lo) != **key {
                        continue;
                    }
                    if triangles_intersect(&pos, ta, tb) {
                        hits += 1;
                    }
                }
            }
            hits
        })
        .sum()
}

fn c3(p: [f64; 3]) -> robust::Coord3D<f64> {
    robust::Coord3D { x: p[0], y: p[1], z: p[2] }
}

fn orient(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    robust::orient3d(c3(a), c3(b), c3(c), c3(d))
}

/// Proper crossing of segment `pq` with triangle `abc`.
fn segment_crosses(p: [f64; 3], q: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> bool {
    let sp = orient(a, b, c, p);
    let sq = orient(a, b, c, q);
    if sp == 0.0 || sq == 0.0 || (sp > 0.0) == (sq > 0.0) {
        return false;
    }
    let s1 = orient(p, q, a, b);
    let s2 = orient(p, q, b, c);
    let s3 = orient(p, q, c, a);
    (s1 > 0.0 && s2 > 0.0 && s3 > 0.0) || (s1 < 0.0 && s2 < 0.0 && s3 < 0.0)
}

fn triangles_intersect(pos: &[[f64; 3]], ta: [usize; 3], tb: [usize; 3]) -> bool {
    let a = ta.map(|v| pos[v]);
    let b = tb.map(|v| pos[v]);
    (0..3).any(|i| segment_crosses(a[i], a[(i + 1) % 3], b[0], b[1], b[2]))
        || (0..3).any(|i| segment_crosses(b[i], b[(i + 1) % 3], a[0], a[1], a[2]))
}
