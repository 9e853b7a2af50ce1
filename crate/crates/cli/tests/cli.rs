use std::path::Path;
use std::process::{Command, Output};

const SQUARE: &str = "angles=0,1.5707963267948966,3.141592653589793,4.71238898038469";

fn scherk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scherk"))
        .args(args)
        .current_dir(dir)
        .env_remove("SCHERK_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn square_domain(dir: &Path) {
    let o = scherk(dir, &["domain", "--scherk", SQUARE]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn domain_writes_a_readable_file() {
    let d = tempfile::tempdir().unwrap();
    square_domain(d.path());
    let f = scherk::domains::DomainFile::read(&d.path().join("domain.json")).unwrap();
    assert_eq!(f.polygon().unwrap().len(), 4);

    let o = scherk(d.path(), &["domain", "--twisted", "k=2", "theta=0.5236", "beta=0.0873", "--out", "t.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let f = scherk::domains::DomainFile::read(&d.path().join("t.json")).unwrap();
    assert_eq!(f.polygon().unwrap().len(), 6);
}

#[test]
fn malformed_fields_are_usage_errors_naming_the_field() {
    let d = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &str); 5] = [
        (&["domain", "--scherk", "angles=0,abc,2,3"], "angles"),
        (&["domain", "--scherk", "angles=0,1,2"], "angles"),
        (&["domain", "--fan", "k=two", "theta=0.5"], "k"),
        (&["domain", "--fan", "k=2", "theta=0.5", "gamma=1"], "gamma"),
        (&["domain", "--twisted", "k=2", "theta=0.5"], "beta"),
    ];
    for (args, field) in cases {
        let o = scherk(d.path(), args);
        assert_eq!(code(&o), 1, "{args:?}");
        assert!(stderr(&o).contains(field), "{args:?}: {}", stderr(&o));
    }
    assert!(!d.path().join("domain.json").exists());
    assert_eq!(code(&scherk(d.path(), &["domain"])), 1);
    assert_eq!(code(&scherk(d.path(), &["frobnicate"])), 1);
    assert_eq!(code(&scherk(d.path(), &["--help"])), 0);
}

#[test]
fn check_exit_codes_follow_the_verdict() {
    let d = tempfile::tempdir().unwrap();
    scherk(d.path(), &["domain", "--fan", "k=2", "theta=0.5236", "--out", "fan.json"]);
    scherk(d.path(), &["domain", "--fan", "k=2", "theta=0.5236", "beta=0.0873", "--out", "fanb.json"]);
    let o = scherk(d.path(), &["check", "fan.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FailsEquality"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("check.json")).unwrap()).unwrap();
    assert_eq!(report["witness"], serde_json::json!([0, 1, 2, 3]));

    assert_eq!(code(&scherk(d.path(), &["check", "fanb.json"])), 0);
    assert_eq!(code(&scherk(d.path(), &["check", "nothing.json"])), 1);
}

#[test]
fn solve_writes_artifacts_and_report_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    square_domain(d.path());
    let o = scherk(d.path(), &["solve", "domain.json", "--steps", "1", "--h1", "0.4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["run.json", "mesh.json", "surface.obj", "surface.ply"] {
        assert!(d.path().join(f).exists(), "{f}");
    }

    assert_eq!(code(&scherk(d.path(), &["report", "run.json"])), 0);
    let csv1 = std::fs::read(d.path().join("convergence.csv")).unwrap();
    let txt1 = std::fs::read(d.path().join("summary.txt")).unwrap();
    assert_eq!(code(&scherk(d.path(), &["report", "run.json"])), 0);
    assert_eq!(std::fs::read(d.path().join("convergence.csv")).unwrap(), csv1);
    assert_eq!(std::fs::read(d.path().join("summary.txt")).unwrap(), txt1);

    let mut rows = csv::Reader::from_reader(csv1.as_slice());
    let header = rows.headers().unwrap().clone();
    assert_eq!(&header[0], "step");
    assert_eq!(&header[10], "total_curvature");
    assert_eq!(rows.records().count(), 1);

    assert_ne!(code(&scherk(d.path(), &["report", "missing.json"])), 0);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        square_domain(d.path());
        let o = scherk(d.path(), &["solve", "domain.json", "--steps", "2", "--h1", "0.4"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["run.json", "mesh.json", "surface.obj", "surface.ply"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn out_dir_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    let target = d.path().join("nested/out");
    let o = Command::new(env!("CARGO_BIN_EXE_scherk"))
        .args(["domain", "--scherk", SQUARE])
        .current_dir(d.path())
        .env("SCHERK_OUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(target.join("domain.json").exists());
    assert!(!d.path().join("domain.json").exists());

    let o = Command::new(env!("CARGO_BIN_EXE_scherk"))
        .args(["check", "nested/out/domain.json", "--out-dir", "flag"])
        .current_dir(d.path())
        .env("SCHERK_OUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(d.path().join("flag/check.json").exists());
    assert!(!target.join("check.json").exists());
}

#[test]
fn newton_budget_exhaustion_exits_3() {
    let d = tempfile::tempdir().unwrap();
    square_domain(d.path());
    std::fs::write(
        d.path().join("tight.json"),
        r#"{"schedule": [{"r": 0.8, "n": 4, "h": 0.2}], "solver": {"max_newton": 1}}"#,
    )
    .unwrap();
    let o = scherk(d.path(), &["solve", "domain.json", "--config", "tight.json"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("did not converge"));

    std::fs::write(d.path().join("typo.json"), r#"{"schedule": [], "solvr": {}}"#).unwrap();
    assert_eq!(code(&scherk(d.path(), &["solve", "domain.json", "--config", "typo.json"])), 1);
}

#[test]
fn coarse_assembly_exports_a_parseable_surface() {
    let d = tempfile::tempdir().unwrap();
    let o = scherk(d.path(), &["assemble", "k=1", "theta=0.5236", "--steps", "2", "--h1", "0.4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("assembly.json")).unwrap()).unwrap();
    assert_eq!(a["end_data"]["m"], serde_json::json!([2]));
    assert_eq!(a["self_intersections"], 0);

    let obj = std::fs::read_to_string(d.path().join("sigma_1.obj")).unwrap();
    let mut verts = 0;
    let mut faces = Vec::new();
    for line in obj.lines() {
        let mut w = line.split_whitespace();
        match w.next() {
            Some("v") => {
                let xyz: Vec<f64> = w.map(|x| x.parse().unwrap()).collect();
                assert_eq!(xyz.len(), 3);
                assert!(xyz[0].hypot(xyz[1]) < 1.0);
                verts += 1;
            }
            Some("f") => faces.push(w.map(|x| x.parse::<usize>().unwrap()).collect::<Vec<_>>()),
            _ => {}
        }
    }
    assert!(verts > 0 && !faces.is_empty());
    assert!(faces.iter().flatten().all(|&i| i >= 1 && i <= verts));
    assert_eq!(faces.len() as u64, a["surface"]["curvature"]["triangles"].as_u64().unwrap());

    let ply = std::fs::read(d.path().join("sigma_1.ply")).unwrap();
    assert!(ply.starts_with(b"ply\n"));
}
