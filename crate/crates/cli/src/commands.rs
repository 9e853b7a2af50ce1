use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use scherk::diagnostics::{n3_profile, surface_report, SurfaceReport};
use scherk::domains::{
    ideal_scherk_polygon, js_check, omega_theta, omega_theta_beta, DomainError, DomainFile, EdgeLabel, LabeledPolygon,
    Verdict,
};
use scherk::hyperbolic::Endpoint;
use scherk::solver::{default_schedule, exhaustion_solve, ExhaustionConfig, SolverError, StepRecord};
use scherk::surface::{
    assemble_twisted, count_ends, euler_total_curvature, lift, self_intersections, twisted_domain, EndData, SurfaceError,
    SurfaceMesh,
};
use serde::{Deserialize, Serialize};

use crate::params::Params;
use crate::{DomainArgs, OutArgs, ScheduleArgs, OUT_DIR_ENV};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn verification(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<DomainError> for Failure {
    fn from(e: DomainError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let stalled = match &e {
            SolverError::NonConvergence { .. } => true,
            SolverError::Step { source, .. } => matches!(**source, SolverError::NonConvergence { .. }),
            _ => false,
        };
        Failure {
            code: if stalled { 3 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl From<SurfaceError> for Failure {
    fn from(e: SurfaceError) -> Self {
        match e {
            SurfaceError::Solver(s) => s.into(),
            other => Failure::usage(other.to_string()),
        }
    }
}

fn out_dir(o: &OutArgs) -> Result<PathBuf, Failure> {
    let dir = match &o.out_dir {
        Some(d) => d.clone(),
        None => std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&dir)?;
    Ok(std::path::absolute(&dir)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::usage(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn summary(p: &LabeledPolygon) -> String {
    let mut s = String::new();
    for (i, (v, l)) in p.vertices().iter().zip(p.labels()).enumerate() {
        let v = match v {
            Endpoint::Ideal(q) => format!("ideal angle {:.10}", q.angle()),
            Endpoint::Disk(q) => format!("disk ({:.10}, {:.10})", q.z().re, q.z().im),
        };
        let l = match l {
            EdgeLabel::PlusInfinity => "+inf".to_string(),
            EdgeLabel::MinusInfinity => "-inf".to_string(),
            EdgeLabel::Finite(c) => format!("{c}"),
        };
        let _ = writeln!(s, "p{i}: {v}; edge p{i}p{}: {l}", (i + 1) % p.len());
    }
    s
}

pub fn domain(a: &DomainArgs) -> Result<(), Failure> {
    let k = &a.kind;
    let p = if let Some(t) = &k.scherk {
        let angles = Params::parse(t, &["angles"])?.f64_list("angles")?;
        ideal_scherk_polygon(&angles).map_err(|e| Failure::usage(format!("angles: {e}")))?
    } else if let Some(t) = &k.twisted {
        let q = Params::parse(t, &["k", "theta", "beta"])?;
        let kk = q.usize("k")?;
        let beta = if kk >= 2 { q.f64("beta")? } else { 0.0 };
        if kk == 1 && q.has("beta") {
            return Err(Failure::usage("`beta` applies only to k >= 2"));
        }
        twisted_domain(kk, q.f64("theta")?, beta)?
    } else if let Some(t) = &k.fan {
        let q = Params::parse(t, &["k", "theta", "beta"])?;
        if q.has("beta") {
            omega_theta_beta(q.usize("k")?, q.f64("theta")?, q.f64("beta")?)?
        } else {
            omega_theta(q.usize("k")?, q.f64("theta")?)?
        }
    } else {
        unreachable!("clap requires one domain kind")
    };
    let path = match &a.out {
        Some(p) => std::path::absolute(p)?,
        None => out_dir(&OutArgs { out_dir: None })?.join("domain.json"),
    };
    DomainFile::from_polygon(&p, None).write(&path)?;
    print!("{}", summary(&p));
    println!("wrote {}", path.display());
    Ok(())
}

fn load_domain(path: &Path) -> Result<(DomainFile, LabeledPolygon), Failure> {
    let f = DomainFile::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let p = f.polygon()?;
    Ok((f, p))
}

pub fn check(domain: &Path, o: &OutArgs) -> Result<(), Failure> {
    let domain = std::path::absolute(domain)?;
    let dir = out_dir(o)?;
    let (f, p) = load_domain(&domain)?;
    let report = js_check(&p, f.horocycles.as_deref())?;
    write_json(&dir.join("check.json"), &report)?;
    println!("verdict: {:?} (tolerance {:e})", report.verdict, report.tolerance);
    if let Some(w) = &report.witness {
        println!("witness: vertices {w:?}");
    }
    if let Some(m) = report.witness_margin() {
        println!("witness margin: {:?} {:e}", m.kind, m.invariant.unwrap_or(m.value));
    }
    match report.min_margin() {
        Some(m) => println!("minimum invariant margin: {m:.12}"),
        None => println!("minimum invariant margin: none"),
    }
    if report.verdict == Verdict::Satisfied {
        Ok(())
    } else {
        Err(Failure::verification(format!("domain fails the Jenkins-Serrin conditions ({:?})", report.verdict)))
    }
}

fn schedule_config(s: &ScheduleArgs) -> Result<ExhaustionConfig, Failure> {
    let c = match &s.config {
        Some(path) => read_json::<ExhaustionConfig>(&std::path::absolute(path)?)?,
        None => ExhaustionConfig::new(default_schedule(s.steps, s.h1)),
    };
    c.validate()?;
    Ok(c)
}

/// Flux probes scaled with the final cap `n`: `(0.3, n/8)` and `(0.5, n/4)`.
fn flux_probes(c: &ExhaustionConfig) -> Vec<(f64, f64)> {
    let n = c.schedule.last().map_or(1.0, |s| s.n);
    vec![(0.3, n / 8.0), (0.5, n / 4.0)]
}

/// Everything `solve` records about a run.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArtifact {
    pub domain: DomainFile,
    pub config: ExhaustionConfig,
    pub verdict: Verdict,
    pub records: Vec<StepRecord>,
    /// Diagnostics of the final graph surface.
    pub surface: SurfaceReport,
}

fn export(s: &SurfaceMesh, dir: &Path, stem: &str) -> Result<(), Failure> {
    s.save_obj(&dir.join(format!("{stem}.obj")))?;
    s.save_ply(&dir.join(format!("{stem}.ply")), &n3_profile(s).vertex)?;
    Ok(())
}

fn print_records(records: &[StepRecord]) {
    println!("step        r     n        h  triangles   residual  integral K");
    for (j, r) in records.iter().enumerate() {
        println!(
            "{:>4} {:>8.5} {:>5} {:>8.5} {:>10} {:>10.3e} {:>11.6}",
            j + 1,
            r.r,
            r.n,
            r.h,
            r.triangles,
            r.residual,
            r.total_curvature
        );
    }
}

pub fn solve(domain: &Path, s: &ScheduleArgs, o: &OutArgs) -> Result<(), Failure> {
    let domain = std::path::absolute(domain)?;
    let dir = out_dir(o)?;
    let config = schedule_config(s)?;
    let (f, p) = load_domain(&domain)?;
    let run = exhaustion_solve(&p, &config)?;
    let graph = lift(run.last());
    let artifact = RunArtifact {
        domain: f,
        surface: surface_report(&graph, &flux_probes(&config)),
        config,
        verdict: run.verdict,
        records: run.records.clone(),
    };
    write_json(&dir.join("run.json"), &artifact)?;
    run.last()
        .mesh
        .write(&dir.join("mesh.json"))
        .map_err(|e| Failure::usage(e.to_string()))?;
    export(&graph, &dir, "surface")?;
    print_records(&artifact.records);
    let c = &artifact.surface.curvature;
    println!(
        "final: integral K = {:.6}, Gauss-Bonnet residual {:.3e}, max edge {:.4}, solver tolerance {:e}",
        c.total, c.gauss_bonnet_residual, c.max_edge, artifact.config.solver.tol
    );
    println!("wrote run.json, mesh.json, surface.obj, surface.ply to {}", dir.display());
    Ok(())
}

/// Result of `assemble`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyArtifact {
    pub k: usize,
    pub theta: f64,
    pub beta: f64,
    pub config: ExhaustionConfig,
    pub records: Vec<StepRecord>,
    /// Height of the level sets used to count ends.
    pub level: f64,
    pub end_data: Option<EndData>,
    /// `−4kπ`.
    pub target: f64,
    /// Total curvature from the end data, when counted.
    pub formula: Option<f64>,
    pub measured: f64,
    pub relative_error: f64,
    pub tolerance: f64,
    pub self_intersections: usize,
    pub surface: SurfaceReport,
}

pub fn assemble(tokens: &[String], s: &ScheduleArgs, o: &OutArgs) -> Result<(), Failure> {
    let q = Params::parse(tokens, &["k", "theta", "beta"])?;
    let k = q.usize("k")?;
    let theta = q.f64("theta")?;
    let beta = if k >= 2 { q.f64("beta")? } else { 0.0 };
    let dir = out_dir(o)?;
    let config = schedule_config(s)?;
    let a = assemble_twisted(k, theta, beta, &config)?;
    let level = 0.5 * config.schedule.last().expect("validated").n;
    let ends = count_ends(&a.surface, level);
    let report = surface_report(&a.surface, &[]);
    let target = -4.0 * k as f64 * std::f64::consts::PI;
    let measured = report.curvature.total;
    let tolerance = if k == 1 { 0.05 } else { 0.10 };
    let artifact = AssemblyArtifact {
        k,
        theta,
        beta,
        records: a.run.records.clone(),
        config,
        level,
        formula: ends.as_ref().ok().map(euler_total_curvature),
        end_data: ends.as_ref().ok().cloned(),
        target,
        measured,
        relative_error: (measured - target).abs() / target.abs(),
        tolerance,
        self_intersections: self_intersections(&a.surface),
        surface: report,
    };
    write_json(&dir.join("assembly.json"), &artifact)?;
    export(&a.surface, &dir, &format!("sigma_{k}"))?;
    print_records(&artifact.records);
    println!("   k     formula    measured   rel err  tolerance  ends  chi  self-intersections");
    println!(
        "{:>4} {:>11.6} {:>11.6} {:>9.2e} {:>10} {:>5} {:>4} {:>19}",
        k,
        artifact.formula.unwrap_or(f64::NAN),
        measured,
        artifact.relative_error,
        tolerance,
        artifact.end_data.as_ref().map_or("?".into(), |e| format!("{:?}", e.m)),
        artifact.surface.curvature.euler_characteristic,
        artifact.self_intersections
    );
    println!("wrote assembly.json, sigma_{k}.obj, sigma_{k}.ply to {}", dir.display());
    if let Err(e) = ends {
        return Err(Failure::verification(format!("end count failed at t = ±{level}: {e}")));
    }
    if artifact.formula != Some(target) {
        return Err(Failure::verification(format!(
            "end data give {:?}, expected {target}",
            artifact.formula
        )));
    }
    if artifact.relative_error > tolerance {
        return Err(Failure::verification(format!(
            "measured total curvature off by {:.2e} (tolerance {tolerance})",
            artifact.relative_error
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct CsvRow {
    step: usize,
    r: f64,
    n: f64,
    h: f64,
    nodes: usize,
    triangles: usize,
    residual: f64,
    tolerance: f64,
    newton_iterations: usize,
    area: f64,
    total_curvature: f64,
    probe_change: Option<f64>,
}

pub fn report(run: &Path, o: &OutArgs) -> Result<(), Failure> {
    let run = std::path::absolute(run)?;
    let artifact: RunArtifact = read_json(&run)?;
    let dir = out_dir(o)?;
    let mut w = csv::Writer::from_path(dir.join("convergence.csv")).map_err(|e| Failure::usage(e.to_string()))?;
    for (j, r) in artifact.records.iter().enumerate() {
        w.serialize(CsvRow {
            step: j + 1,
            r: r.r,
            n: r.n,
            h: r.h,
            nodes: r.nodes,
            triangles: r.triangles,
            residual: r.residual,
            tolerance: r.tolerance,
            newton_iterations: r.newton_iterations,
            area: r.area,
            total_curvature: r.total_curvature,
            probe_change: r.probe_change,
        })
        .map_err(|e| Failure::usage(e.to_string()))?;
    }
    w.flush()?;

    let mut s = String::new();
    let c = &artifact.surface.curvature;
    let last = artifact.records.last();
    let _ = writeln!(s, "domain: {} vertices, Jenkins-Serrin verdict {:?}", artifact.domain.vertices.len(), artifact.verdict);
    let _ = writeln!(s, "steps: {}", artifact.records.len());
    if let Some(r) = last {
        let _ = writeln!(
            s,
            "final step: r = {}, n = {}, h = {}, {} triangles, residual {:e} (tolerance {:e}), {} Newton iterations",
            r.r, r.n, r.h, r.triangles, r.residual, r.tolerance, r.newton_iterations
        );
    }
    let trace: Vec<String> = artifact.records.iter().map(|r| format!("{:.6}", r.total_curvature)).collect();
    let _ = writeln!(s, "integral K by step: {}", trace.join(", "));
    let _ = writeln!(
        s,
        "final surface: integral K = {:.6}, boundary turning {:.6}, chi {}, Gauss-Bonnet residual {:.3e}, max edge {:.4}",
        c.total, c.boundary_turning, c.euler_characteristic, c.gauss_bonnet_residual, c.max_edge
    );
    let _ = writeln!(s, "harmonicity residual: {:.3e}", artifact.surface.harmonicity_residual);
    let _ = writeln!(
        s,
        "|N3| outer collar maximum: {:.4} over {} vertices",
        artifact.surface.n3.collar_max, artifact.surface.n3.collar_vertices
    );
    for f in &artifact.surface.flux {
        let _ = writeln!(
            s,
            "flux through |z| <= {}, |t| <= {}: {:.3e} over perimeter {:.4} (ratio {:.3e})",
            f.r,
            f.t,
            f.flux,
            f.perimeter,
            f.relative()
        );
    }
    std::fs::write(dir.join("summary.txt"), &s)?;
    print!("{s}");
    Ok(())
}
