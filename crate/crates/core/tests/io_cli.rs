use std::path::Path;

use dispersion_unmix::cli;
use dispersion_unmix::fixtures::load_fixture_params;
use dispersion_unmix::io::*;
use dispersion_unmix::spectral::{render, WavenumberGrid};

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("dispersion-unmix").chain(args.iter().copied()))
}

#[test]
fn hematite_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hem.csv");
    let s = render(
        &load_fixture_params("hematite").unwrap(),
        &WavenumberGrid::range(200.0, 1400.0, 2.0).unwrap(),
    );
    write_spectrum(&s, &path).unwrap();
    let back = read_spectrum(&path).unwrap();
    assert_eq!(back.grid(), s.grid());
    for (a, b) in back.values().iter().zip(s.values()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn params_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let p = load_fixture_params("biotite").unwrap();
    write_params(&p, &path).unwrap();
    assert_eq!(read_params(&path).unwrap(), p);
}

#[test]
fn missing_file_names_path() {
    let err = read_spectrum(Path::new("/no/such/file.csv")).unwrap_err();
    assert!(err.to_string().contains("/no/such/file.csv"));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["render", "--help"]), 0);
    assert_eq!(run(&[]), 1);
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(
        run(&[
            "render",
            "--fixture",
            "hematite",
            "--grid",
            "1:2:1",
            "--out",
            "x.csv",
            "--colour"
        ]),
        1
    );
    assert_eq!(
        run(&[
            "render",
            "--fixture",
            "quartz",
            "--grid",
            "200:300:10",
            "--out",
            "/tmp/never.csv"
        ]),
        1
    );
    assert_eq!(
        run(&[
            "render",
            "--fixture",
            "hematite",
            "--grid",
            "300:200:10",
            "--out",
            "/tmp/never.csv"
        ]),
        1
    );
}

#[test]
fn numerical_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = d.join("in.csv");
    std::fs::write(
        &input,
        "wavenumber,emissivity\n200,1e308\n210,-1e308\n220,1e308\n",
    )
    .unwrap();
    let out = d.join("fit.json");
    let code = run(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--k-init",
        "2",
        "--restarts",
        "1",
        "--steps",
        "5",
        "--refit-steps",
        "5",
        "--axes",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn render_then_unmix_pure_pixel() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |n: &str| d.join(n).to_str().unwrap().to_string();
    assert_eq!(
        run(&[
            "library",
            "--grid",
            "200:1400:4",
            "--fixture",
            "olivine_fo10",
            "--fixture",
            "biotite",
            "--fixture",
            "hematite",
            "--out",
            &p("lib.json")
        ]),
        0
    );
    let fixture = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../fixtures/olivine_fo10.json"
    );
    assert_eq!(
        run(&[
            "render",
            "--params",
            fixture,
            "--grid",
            "200:1400:4",
            "--out",
            &p("pure.csv")
        ]),
        0
    );
    assert_eq!(
        run(&[
            "unmix",
            "--library",
            &p("lib.json"),
            "--input",
            &p("pure.csv"),
            "--method",
            "fcls",
            "--out",
            &p("r.json")
        ]),
        0
    );
    let report: serde_json::Value = read_json(Path::new(&p("r.json"))).unwrap();
    let x: Vec<f64> = serde_json::from_value(report["abundances"].clone()).unwrap();
    assert!(
        (x[0] - 1.0).abs() < 1e-4 && x[1] < 1e-4 && x[2] < 1e-4,
        "{x:?}"
    );
    assert!(Path::new(&format!("{}.manifest.json", p("r.json"))).exists());
}

#[test]
fn batch_summary_layout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |n: &str| d.join(n).to_str().unwrap().to_string();
    assert_eq!(
        run(&[
            "library",
            "--grid",
            "200:1400:20",
            "--fixture",
            "biotite",
            "--fixture",
            "hematite",
            "--out",
            &p("lib.json")
        ]),
        0
    );
    assert_eq!(
        run(&[
            "synth",
            "--library",
            &p("lib.json"),
            "--count",
            "3",
            "--seed",
            "1",
            "--out",
            &p("mix")
        ]),
        0
    );
    assert_eq!(
        run(&[
            "unmix",
            "--library",
            &p("lib.json"),
            "--batch",
            &p("mix"),
            "--method",
            "fcls",
            "--out",
            &p("res")
        ]),
        0
    );
    let summary = std::fs::read_to_string(d.join("res/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "name,abundance_1,abundance_2,residual_rms");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("mix_0000,"));
    assert!(d.join("res/run_manifest.json").exists());
    assert!(d.join("mix/manifest.json").exists());
}

#[test]
fn unknown_library_field_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lib.json");
    std::fs::write(
        &path,
        r#"{"schema_version":"1","grid":[200,300],"entries":[],"extra":true}"#,
    )
    .unwrap();
    let err = read_library(&path).unwrap_err().to_string();
    assert!(err.contains("extra"), "{err}");
}
