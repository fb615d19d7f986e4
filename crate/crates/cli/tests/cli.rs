//! End-to-end tests of the study runner and the SVG renderer, driven
//! in-process through the library modules.

use std::path::{Path, PathBuf};

use lvflex_cli::config::StudyConfig;
use lvflex_cli::{plot, run};

fn case_path(name: &str) -> String {
    format!("{}/../../cases/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn config_json(case: &str, out: &Path, studies: &str) -> String {
    format!(
        r#"{{"case_path": "{case}", "output_dir": "{}", "studies": {studies}}}"#,
        out.display()
    )
}

fn load(text: &str) -> Result<StudyConfig, String> {
    let config: StudyConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
    config.validate()?;
    Ok(config)
}

#[test]
fn empty_studies_are_rejected() {
    let err = load(r#"{"case_path": "x", "output_dir": "y", "studies": []}"#).unwrap_err();
    assert_eq!(err, "no studies defined");
}

#[test]
fn duplicate_study_names_are_rejected() {
    let studies = r#"[
        {"name": "s", "ref_bus": "1", "ref_phases": ["a"], "k": 4, "coordination": "full"},
        {"name": "s", "ref_bus": "1", "ref_phases": ["a"], "k": 4, "coordination": "full"}
    ]"#;
    let err = load(&config_json("x", Path::new("y"), studies)).unwrap_err();
    assert!(err.contains("duplicate study name"), "{err}");
}

#[test]
fn unknown_compare_to_is_rejected() {
    let studies = r#"[
        {"name": "s", "ref_bus": "1", "ref_phases": ["a"], "k": 4,
         "coordination": "full", "compare_to": "missing"}
    ]"#;
    let err = load(&config_json("x", Path::new("y"), studies)).unwrap_err();
    assert!(err.contains("compare_to"), "{err}");
}

#[test]
fn bad_phase_and_coordination_are_rejected() {
    let studies = r#"[
        {"name": "s", "ref_bus": "1", "ref_phases": ["d"], "k": 4, "coordination": "full"}
    ]"#;
    let err = load(&config_json("x", Path::new("y"), studies)).unwrap_err();
    assert!(err.contains("unknown phase"), "{err}");

    let studies = r#"[
        {"name": "s", "ref_bus": "1", "ref_phases": ["a"], "k": 4, "coordination": "nope"}
    ]"#;
    let err = load(&config_json("x", Path::new("y"), studies)).unwrap_err();
    assert!(err.contains("unknown coordination"), "{err}");
}

#[test]
fn missing_case_maps_to_case_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let studies = r#"[
        {"name": "s", "ref_bus": "1", "ref_phases": ["a"], "k": 4, "coordination": "full"}
    ]"#;
    let config = load(&config_json("/nonexistent/case.json", dir.path(), studies)).unwrap();
    let err = run::run(&config, 1, false).unwrap_err();
    assert_eq!(err.code, run::EXIT_CASE);
}

#[test]
fn unknown_ref_bus_maps_to_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let studies = r#"[
        {"name": "s", "ref_bus": "99", "ref_phases": ["a"], "k": 4, "coordination": "full"}
    ]"#;
    let config = load(&config_json(
        &case_path("case5_bal_balflex.json"),
        dir.path(),
        studies,
    ))
    .unwrap();
    let err = run::run(&config, 1, false).unwrap_err();
    assert_eq!(err.code, run::EXIT_CONFIG);
    assert!(err.message.contains("s/a/none"), "{}", err.message);
}

fn small_grid(out: &Path) -> StudyConfig {
    let studies = r#"[
        {"name": "full", "ref_bus": "1", "ref_phases": ["a", "b"], "k": 4,
         "coordination": "full", "vuf_limits": [1.0]},
        {"name": "restricted", "ref_bus": "1", "ref_phases": ["a", "b"], "k": 4,
         "coordination": "phase_restricted", "compare_to": "full"}
    ]"#;
    load(&config_json(
        &case_path("case5_unbal_balflex.json"),
        out,
        studies,
    ))
    .unwrap()
}

#[test]
fn run_produces_expected_layout_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_grid(dir.path());
    let table = run::run(&config, 2, false).unwrap();

    for cell in [
        "full/a/none",
        "full/a/1.00",
        "full/b/none",
        "full/b/1.00",
        "restricted/a/none",
        "restricted/b/none",
    ] {
        assert!(dir.path().join(cell).join("boundary.csv").is_file(), "{cell}");
        assert!(dir.path().join(cell).join("boundary.json").is_file(), "{cell}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "study,phase,vuf,coordination,area_kvar2,reduction_pct,oracle_outside_kva,status"
    );
    // 2 phases × (2 vuf cells for `full` + 1 for `restricted`).
    assert_eq!(lines.len(), 1 + 6);
    assert!(table.contains("full") && table.contains("restricted"));

    // VUF-limited areas nest inside the unconstrained ones, and the summary
    // reduction column matches area_reduction of the recorded areas.
    let area = |study: &str, phase: &str, vuf: &str| -> f64 {
        lines
            .iter()
            .find(|l| l.starts_with(&format!("{study},{phase},{vuf},")))
            .unwrap()
            .split(',')
            .nth(4)
            .unwrap()
            .parse()
            .unwrap()
    };
    for phase in ["a", "b"] {
        // A 1.0% limit is slack on this case (base VUF ≈ 0.08%): areas agree
        // up to solver tolerance but never grow beyond it.
        let unconstrained = area("full", phase, "none");
        assert!(area("full", phase, "1.00") <= unconstrained * (1.0 + 1e-3));
        let row = lines
            .iter()
            .find(|l| l.starts_with(&format!("restricted,{phase},none,")))
            .unwrap();
        let reduction: f64 = row.split(',').nth(5).unwrap().parse().unwrap();
        let expected = 100.0 * (1.0 - area("restricted", phase, "none") / area("full", phase, "none"));
        assert!((reduction - expected).abs() < 0.02, "{reduction} vs {expected}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run::run(&small_grid(dir_a.path()), 3, false).unwrap();
    run::run(&small_grid(dir_b.path()), 1, false).unwrap();
    for file in ["summary.csv", "full/a/none/boundary.csv", "full/b/1.00/boundary.json"] {
        let a = std::fs::read(dir_a.path().join(file)).unwrap();
        let b = std::fs::read(dir_b.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn oracle_cells_emit_reports() {
    let dir = tempfile::tempdir().unwrap();
    let studies = r#"[
        {"name": "s", "ref_bus": "1", "ref_phases": ["a"], "k": 3, "coordination": "full"}
    ]"#;
    let mut config = load(&config_json(
        &case_path("case5_bal_balflex.json"),
        dir.path(),
        studies,
    ))
    .unwrap();
    config.oracle = Some(lvflex_cli::config::OracleConfig { n: 40, seed: 7 });
    run::run(&config, 1, false).unwrap();
    assert!(dir.path().join("s/a/none/oracle.json").is_file());
    assert!(dir.path().join("s/a/none/oracle.csv").is_file());
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let row = summary.lines().nth(1).unwrap();
    let outside = row.split(',').nth(6).unwrap();
    assert!(!outside.is_empty(), "oracle column empty: {row}");
}

fn boundary_fixture(dir: &Path, gap: bool) -> PathBuf {
    let points: Vec<serde_json::Value> = [
        (0usize, "max", 10.0, 5.0),
        (1, "max", 12.0, 6.0),
        (if gap { 3 } else { 2 }, "max", 14.0, 5.0),
        (if gap { 3 } else { 2 }, "min", 14.0, -5.0),
        (1, "min", 12.0, -6.0),
        (0, "min", 10.0, -5.0),
    ]
    .iter()
    .map(|(i, s, p, q)| {
        serde_json::json!({"interval": i, "side": s, "p_kw": p, "q_kvar": q, "status": "Optimal"})
    })
    .collect();
    let doc = serde_json::json!({
        "base_point_kw_kvar": [12.0, 0.0],
        "area_kvar2": 40.0,
        "infeasible_intervals": if gap { vec![2] } else { vec![] },
        "points": points,
    });
    let path = dir.join(if gap { "gap.json" } else { "solid.json" });
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

#[test]
fn single_boundary_plot_has_polygon_and_cross() {
    let dir = tempfile::tempdir().unwrap();
    let path = boundary_fixture(dir.path(), false);
    let out = dir.path().join("plot.svg");
    plot::plot(&[path], &out).unwrap();
    let svg = std::fs::read_to_string(&out).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("P (kW)") && svg.contains("Q (kVAr)"));
    // Six polygon edges plus the axis/cross lines; no dashed edges.
    assert!(!svg.contains("stroke-dasharray"));
    assert!(svg.contains("solid"), "legend label missing");
}

#[test]
fn recorded_gaps_render_dashed_edges() {
    let dir = tempfile::tempdir().unwrap();
    let path = boundary_fixture(dir.path(), true);
    let out = dir.path().join("plot.svg");
    plot::plot(&[path], &out).unwrap();
    let svg = std::fs::read_to_string(&out).unwrap();
    // The two edges skipping interval 2 are dashed; the rest are solid.
    assert_eq!(svg.matches("stroke-dasharray").count(), 2);
}

#[test]
fn plot_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = boundary_fixture(dir.path(), false);
    let b = boundary_fixture(dir.path(), true);
    let out1 = dir.path().join("p1.svg");
    let out2 = dir.path().join("p2.svg");
    plot::plot(&[a.clone(), b.clone()], &out1).unwrap();
    plot::plot(&[a, b], &out2).unwrap();
    assert_eq!(
        std::fs::read(&out1).unwrap(),
        std::fs::read(&out2).unwrap()
    );
}

#[test]
fn malformed_boundary_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"points\": 5}").unwrap();
    let err = plot::plot(&[path], &dir.path().join("out.svg")).unwrap_err();
    assert!(err.contains("malformed boundary file"), "{err}");
}
