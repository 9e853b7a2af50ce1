mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scherk::diagnostics::*;
use scherk::domains::{triangle_domain, EdgeLabel, LabeledPolygon};
use scherk::hyperbolic::{DiskPoint, IdealPoint, Isometry, C64};
use scherk::solver::*;
use scherk::surface::*;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

fn solved(p: &LabeledPolygon, r: f64, h: f64, grading: f64, cap: f64) -> GraphSolution {
    let m = mesh(p, r, h, grading);
    solve_dirichlet(&m, p.labels(), cap, &SolverOptions::default(), None).unwrap()
}

fn flat(p: &LabeledPolygon, r: f64, h: f64) -> SurfaceMesh {
    let zero = LabeledPolygon::new(p.vertices().to_vec(), vec![EdgeLabel::Finite(0.0); p.len()]).unwrap();
    lift(&solved(&zero, r, h, 1.0, 1.0))
}

fn small_quad() -> LabeledPolygon {
    finite_polygon(&[(-0.2, -0.15), (0.2, -0.1), (0.15, 0.2), (-0.15, 0.15)], vec![EdgeLabel::Finite(0.0); 4])
}

/// Grid on the vertical strip over a piece of the real diameter.
fn vertical_strip(nx: usize, nt: usize) -> SurfaceMesh {
    let mut s = SurfaceMesh {
        points: vec![],
        heights: vec![],
        triangles: vec![],
        copy: vec![],
        seams: vec![],
    };
    for j in 0..=nt {
        for i in 0..=nx {
            s.points.push(DiskPoint::from_xy(-0.5 + i as f64 / nx as f64, 0.0).unwrap());
            s.heights.push(-1.0 + 2.0 * j as f64 / nt as f64);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    for j in 0..nt {
        for i in 0..nx {
            s.triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            s.triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    s.copy = vec![0; s.len()];
    s
}

fn acosh_dist(a: C64, b: C64) -> f64 {
    (1.0 + 2.0 * (a - b).norm_sqr() / ((1.0 - a.norm_sqr()) * (1.0 - b.norm_sqr()))).acosh()
}

#[test]
fn vertex_defect_matches_law_of_cosines_oracle() {
    // one interior vertex with a ring of six neighbours at distance eps
    let center = c(0.3, -0.2);
    let to = Isometry::translation_to(DiskPoint::new(center).unwrap());
    let eps: f64 = 0.02;
    let rho = (eps / 2.0).tanh();
    let mut s = SurfaceMesh {
        points: vec![DiskPoint::new(center).unwrap()],
        heights: vec![0.0],
        triangles: vec![],
        copy: vec![0; 7],
        seams: vec![],
    };
    for i in 0..6 {
        s.points.push(to.apply_point(DiskPoint::polar(rho, i as f64 * PI / 3.0 + 0.1 * (i % 2) as f64).unwrap()));
        s.heights.push(0.0);
        s.triangles.push([0, 1 + i, 1 + (i + 1) % 6]);
    }
    let report = gauss_curvature(&s);
    let k = report.vertex_k[0].unwrap();
    let mut angles = 0.0;
    let mut area = 0.0;
    for t in &s.triangles {
        let z = t.map(|v| s.points[v].z());
        let (a, b, cc) = (acosh_dist(z[1], z[2]), acosh_dist(z[0], z[2]), acosh_dist(z[0], z[1]));
        angles += ((b * b + cc * cc - a * a) / (2.0 * b * cc)).acos();
        let sp = 0.5 * (a + b + cc);
        area += (sp * (sp - a) * (sp - b) * (sp - cc)).sqrt() / 3.0;
    }
    let oracle = (TAU - angles) / area;
    assert!((k - oracle).abs() < 1e-6 * oracle.abs(), "{k} vs {oracle}");
    assert!((k + 1.0).abs() < 0.01, "{k}");
}

#[test]
fn flat_slice_curvature_is_minus_one() {
    let s = flat(&small_quad(), 0.5, 0.02);
    let report = gauss_curvature(&s);
    let boundary = s.boundary_vertices();
    let mut checked = 0;
    for (v, k) in report.vertex_k.iter().enumerate() {
        if let Some(k) = k {
            assert!(!boundary[v]);
            assert!((k + 1.0).abs() < 0.05, "{k}");
            checked += 1;
        }
    }
    assert!(checked > 100);
}

/// Angles opposite each side from the Euclidean and the hyperbolic law of
/// cosines.
fn angle_pair(a: f64, b: f64, c: f64) -> (f64, f64) {
    let euclid = ((b * b + c * c - a * a) / (2.0 * b * c)).acos();
    let hyper = ((b.cosh() * c.cosh() - a.cosh()) / (b.sinh() * c.sinh())).acos();
    (euclid, hyper)
}

#[test]
fn flat_slice_residual_is_the_boundary_layer() {
    // on a flat slice the residual is Σ areas + Σ (hyperbolic − comparison)
    // angles at interior corners, which is the area the interior defects miss
    let s = flat(&small_quad(), 0.5, 0.02);
    let report = gauss_curvature(&s);
    let boundary = s.boundary_vertices();
    let mut oracle = 0.0;
    let mut layer = 0.0;
    for t in &s.triangles {
        let z = t.map(|v| s.points[v].z());
        let l = [acosh_dist(z[1], z[2]), acosh_dist(z[2], z[0]), acosh_dist(z[0], z[1])];
        let mut hyp = 0.0;
        let mut skew = 0.0;
        for i in 0..3 {
            let (e, h) = angle_pair(l[i], l[(i + 1) % 3], l[(i + 2) % 3]);
            hyp += h;
            if !boundary[t[i]] {
                skew += h - e;
            }
        }
        let area = PI - hyp;
        oracle += area + skew;
        layer += area * t.iter().filter(|&&v| boundary[v]).count() as f64 / 3.0;
    }
    let r = report.gauss_bonnet_residual;
    assert!((r - oracle).abs() < 1e-9, "{r} vs {oracle}");
    assert!((r - layer).abs() < 0.01 * layer, "{r} vs {layer}");
}

#[test]
fn flat_polygon_satisfies_gauss_bonnet() {
    let q = finite_polygon(
        &[(-0.03, -0.03), (0.03, -0.025), (0.027, 0.03), (-0.03, 0.03)],
        vec![EdgeLabel::Finite(0.0); 4],
    );
    let report = gauss_curvature(&flat(&q, 0.5, 0.0025));
    assert_eq!(report.euler_characteristic, 1);
    assert!(report.gauss_bonnet_residual.abs() <= 1e-3, "{}", report.gauss_bonnet_residual);
}

#[test]
fn truncated_ideal_triangle_slice_has_curvature_minus_pi() {
    let p = LabeledPolygon::new(
        [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0].iter().map(|&a| IdealPoint::new(a).into()).collect(),
        vec![EdgeLabel::Finite(0.0); 3],
    )
    .unwrap();
    let report = gauss_curvature(&flat(&p, 0.99, 0.005));
    assert!((report.total + PI).abs() < 0.05 * PI, "{}", report.total);
}

#[test]
fn curvature_report_is_isometry_invariant() {
    let s = lift(&solved(&triangle_domain(FRAC_PI_2).unwrap(), 0.75, 0.2, 4.0, 3.0));
    let base = gauss_curvature(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let p = DiskPoint::polar(rng.random_range(0.0..0.6), rng.random_range(0.0..TAU)).unwrap();
        let mut phi = Isometry::blaschke(p, rng.random_range(0.0..TAU));
        if rng.random_bool(0.5) {
            phi = phi.compose(&Isometry::conjugation());
        }
        let moved = gauss_curvature(&s.mapped(&phi, rng.random_bool(0.5), false));
        assert!((moved.total - base.total).abs() < 1e-8);
        assert!((moved.boundary_turning - base.boundary_turning).abs() < 1e-8);
        assert!((moved.max_edge - base.max_edge).abs() < 1e-8);
        for (a, b) in moved.vertex_k.iter().zip(&base.vertex_k) {
            assert!((a.unwrap_or(0.0) - b.unwrap_or(0.0)).abs() < 1e-8);
        }
    }
}

#[test]
fn gauss_bonnet_residual_is_first_order() {
    let p = triangle_domain(FRAC_PI_2).unwrap();
    let coarse = gauss_bonnet_residual(&lift(&solved(&p, 0.8, 0.1, 8.0, 4.0)));
    let fine = gauss_bonnet_residual(&lift(&solved(&p, 0.8, 0.05, 8.0, 4.0)));
    let ratio = coarse / fine;
    assert!((1.6..=2.4).contains(&ratio), "{coarse} {fine} {ratio}");
}

#[test]
fn vertical_strip_is_flat_harmonic_and_vertical() {
    let s = vertical_strip(10, 8);
    let report = gauss_curvature(&s);
    assert!(report.total.abs() < 1e-10);
    assert!(report.gauss_bonnet_residual.abs() < 1e-10);
    assert!(harmonicity_residual(&s) < 1e-10);
    let n3 = n3_profile(&s);
    assert!(n3.vertex.iter().all(|&x| x < 1e-12));
    assert!(n3.collar_vertices > 0);
}

#[test]
fn flat_slice_is_harmonic_and_horizontal() {
    let s = flat(&small_quad(), 0.5, 0.05);
    assert_eq!(harmonicity_residual(&s), 0.0);
    let n3 = n3_profile(&s);
    assert!(n3.vertex.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    assert!((n3.collar_max - 1.0).abs() < 1e-12);
}

#[test]
fn minimal_graph_height_is_nearly_harmonic() {
    let p = finite_polygon(
        &[(-0.4, -0.3), (0.45, -0.35), (0.35, 0.4), (-0.3, 0.3)],
        vec![EdgeLabel::Finite(1.0), EdgeLabel::Finite(-0.5), EdgeLabel::Finite(0.25), EdgeLabel::Finite(0.0)],
    );
    let coarse = harmonicity_residual(&lift(&solved(&p, 0.5, 0.1, 1.0, 1.0)));
    let fine = harmonicity_residual(&lift(&solved(&p, 0.5, 0.05, 1.0, 1.0)));
    assert!(fine < coarse && fine < 1e-3, "{coarse} {fine}");
}

#[test]
fn flux_vanishes_on_a_flat_slice_and_a_strip() {
    let f = flux_vertical(&flat(&small_quad(), 0.5, 0.05), 0.1, 1.0);
    assert!(f.perimeter > 0.0);
    assert!(f.flux.abs() < 1e-14);
    let f = flux_vertical(&vertical_strip(10, 8), 0.3, 0.5);
    // the cut is the segment at t = ±0.5 plus the sides at |x| = 0.3
    let side = acosh_dist(c(-0.3, 0.0), c(0.3, 0.0));
    assert!((f.perimeter - 2.0 * side - 2.0).abs() < 1e-9, "{}", f.perimeter);
    assert!(f.flux.abs() < 1e-12);
}

#[test]
fn flux_detects_a_non_minimal_graph() {
    let p = small_quad();
    let m = mesh(&p, 0.5, 0.02, 1.0);
    let u: Vec<f64> = m.nodes.iter().map(|z| 10.0 * z.z().norm_sqr()).collect();
    let s = lift(&GraphSolution {
        mesh: m,
        labels: p.labels().to_vec(),
        cap: 1.0,
        u,
        residual: 0.0,
        iterations: 0,
        area: 0.0,
        history: vec![],
    });
    assert!(flux_vertical(&s, 0.1, 5.0).relative() > 0.05);
}

#[test]
fn flux_is_small_on_a_solved_scherk_graph() {
    let s = lift(&solved(&square(), 0.9, 0.1, 8.0, 8.0));
    for (r, t) in [(0.3, 2.0), (0.5, 4.0)] {
        let f = flux_vertical(&s, r, t);
        assert!(f.relative() < 0.01, "{f:?}");
    }
}

/// Truncated length by quadrature of the disk metric along the geodesic arc
/// between the points where `ln P(z, ξ) = s` at each end.
fn quadrature_length(a: f64, b: f64, sa: f64, sb: f64) -> f64 {
    let (za, zb) = (C64::from_polar(1.0, a), C64::from_polar(1.0, b));
    let half = 0.5 * (b - a).rem_euclid(TAU);
    assert!(half < FRAC_PI_2);
    let center = C64::from_polar(1.0 / half.cos(), a + half);
    let radius = half.tan();
    let (pa, pb) = ((za - center).arg(), (zb - center).arg());
    let mut sweep = (pb - pa).rem_euclid(TAU);
    if sweep > PI {
        sweep -= TAU;
    }
    let at = |x: f64| center + C64::from_polar(radius, pa + x * sweep);
    let log_p = |z: C64, xi: C64| ((1.0 - z.norm_sqr()) / (xi - z).norm_sqr()).ln();
    let solve = |target: f64, xi: C64, from: f64, to: f64| {
        // ln P decreases monotonically leaving ξ
        let (mut lo, mut hi) = (from, to);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if log_p(at(mid), xi) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let x0 = solve(sa, za, 0.0, 0.5);
    let x1 = solve(sb, zb, 1.0, 0.5);
    let n = 200_000;
    let h = (x1 - x0) / n as f64;
    let f = |x: f64| 2.0 * radius * sweep.abs() / (1.0 - at(x).norm_sqr());
    let mut sum = f(x0) + f(x1);
    for i in 1..n {
        sum += f(x0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

#[test]
fn scherk_condition_of_the_square_vanishes() {
    let quad = [0.0, FRAC_PI_2, PI, 1.5 * PI].map(IdealPoint::new);
    assert!(scherk_condition(quad, [1.0; 4]).unwrap().abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let s: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.5..4.0));
        assert!(scherk_condition(quad, s).unwrap().abs() < 1e-10);
    }
}

#[test]
fn scherk_condition_matches_quadrature() {
    let angles = [0.0, 1.4, 3.3, 4.6];
    let quad = angles.map(IdealPoint::new);
    let s = [1.0, 1.5, 0.8, 2.0];
    let value = scherk_condition(quad, s).unwrap();
    let len = |i: usize, j: usize| quadrature_length(angles[i], angles[j], s[i], s[j]);
    let oracle = len(0, 1) + len(2, 3) - len(1, 2) - len(3, 0);
    assert!(value.abs() > 0.1);
    assert!((value - oracle).abs() < 1e-6, "{value} vs {oracle}");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let t: [f64; 4] = std::array::from_fn(|i| s[i] + rng.random_range(0.0..3.0));
        assert!((scherk_condition(quad, t).unwrap() - value).abs() < 1e-10);
    }
}

#[test]
fn scherk_condition_rejects_bad_input() {
    let quad = [0.0, 3.0, 1.0, 5.0].map(IdealPoint::new);
    assert_eq!(scherk_condition(quad, [1.0; 4]), Err(DiagnosticsError::NotCyclic));
    let quad = [0.0, FRAC_PI_2, PI, 1.5 * PI].map(IdealPoint::new);
    assert!(matches!(scherk_condition(quad, [-2.0; 4]), Err(DiagnosticsError::Overlap(..))));
}

proptest! {
    #[test]
    fn log_map_has_geodesic_length(
        bx in -0.6f64..0.6, by in -0.6f64..0.6, zx in -0.6f64..0.6, zy in -0.6f64..0.6,
    ) {
        let (b, z) = (c(bx, by), c(zx, zy));
        let v = log_map(b, z);
        prop_assert!((v[0].hypot(v[1]) - acosh_dist(b, z)).abs() < 1e-9);
        // at the origin the log map points along z
        let w = log_map(c(0.0, 0.0), z);
        prop_assert!((w[0] * z.im - w[1] * z.re).abs() < 1e-12);
    }
}

#[test]
fn surface_report_collects_everything() {
    let s = lift(&solved(&square(), 0.8, 0.2, 4.0, 4.0));
    let r = surface_report(&s, &[(0.3, 1.0), (0.5, 2.0)]);
    assert_eq!(r.flux.len(), 2);
    assert_eq!(r.curvature.vertices, s.len());
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("gauss_bonnet_residual"));
    assert!(!json.contains("vertex_k"));
}

