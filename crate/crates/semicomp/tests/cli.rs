use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semicomp::fitfile::read_fit;
use semicomp::pipeline::effect_curve;
use semicomp::table::{read_dataset, read_sce, Schema};
use semicomp_core::datagen::{simulate, Scenario, SimSpec};

fn semicomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semicomp")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = semicomp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn path(dir: &Path, f: &str) -> PathBuf {
    dir.join(f)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulated_csv_matches_library_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "d.csv");
    ok(&["simulate", "--scenario", "Ex2", "--n", "300", "--tau", "0.6", "--seed", "9", "--out", s(&csv)]);
    let (back, report) = read_dataset(&csv, &Schema::default()).unwrap();
    assert_eq!(back, simulate(&SimSpec::new(Scenario::Ex2, 300, 0.6, 9)).unwrap());
    assert_eq!(report.rows, 300);
}

#[test]
fn fit_then_sce_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, fit, sce) = (path(dir.path(), "d.csv"), path(dir.path(), "f.json"), path(dir.path(), "s.csv"));
    ok(&["simulate", "--scenario", "Ex1", "--n", "400", "--seed", "3", "--out", s(&csv)]);
    ok(&["fit", "--data", s(&csv), "--out", s(&fit)]);
    ok(&["sce", "--fit", s(&fit), "--data", s(&csv), "--grid", "2,4,6", "--out", s(&sce)]);
    let (data, _) = read_dataset(&csv, &Schema::default()).unwrap();
    let lib = effect_curve(&read_fit(&fit).unwrap(), &data, &[2.0, 4.0, 6.0], 1, 0).unwrap();
    let cli = read_sce(&sce).unwrap();
    assert_eq!(cli.grid, lib.grid);
    assert_eq!(cli.ad_sce1, lib.ad_sce1);
    assert_eq!(cli.ad_sce2, lib.ad_sce2);
    assert_eq!(cli.nd_sce2, lib.nd_sce2);
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = semicomp(&["frobnicate"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_row_is_a_validation_error_citing_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "d.csv");
    ok(&["simulate", "--scenario", "Ex1", "--n", "50", "--seed", "1", "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // Line 7 of the file: swap x and y so that x > y.
    let mut cells: Vec<String> = lines[6].split(',').map(str::to_string).collect();
    cells[0] = "5".into();
    cells[1] = "1".into();
    lines[6] = cells.join(",");
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let out = semicomp(&["fit", "--data", s(&csv), "--out", s(&path(dir.path(), "f.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":7:"), "{err}");
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = semicomp(&["fit", "--data", s(&path(dir.path(), "absent.csv")), "--out", s(&path(dir.path(), "f.json"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn bootstrap_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "d.csv");
    ok(&["simulate", "--scenario", "Ex1", "--n", "300", "--seed", "4", "--out", s(&csv)]);
    let run = |name: &str, width: &str| {
        let out = path(dir.path(), name);
        ok(&[
            "bootstrap",
            "--data",
            s(&csv),
            "--B",
            "2",
            "--seed",
            "8",
            "--width",
            width,
            "--grid",
            "3,6",
            "--out",
            s(&out),
        ]);
        ["fit.json", "sce.csv", "parameters.csv"].map(|f| std::fs::read(out.join(f)).unwrap())
    };
    assert_eq!(run("a", "1"), run("b", "2"));
}

#[test]
fn study_summary_aggregates_its_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "study.csv");
    ok(&["study", "--scenario", "Ex1", "--reps", "2", "--n", "300", "--seed", "2", "--n-mc", "5000", "--out", s(&out)]);
    let mut summary = csv::Reader::from_path(&out).unwrap();
    let mut reps = csv::Reader::from_path(path(dir.path(), "study.replicates.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reps.records().map(Result::unwrap).collect();
    assert!(rows.iter().all(|r| &r[2] == "ok"));
    let mut count = 0;
    for rec in summary.records() {
        let rec = rec.unwrap();
        let (q, truth, bias): (&str, f64, f64) = (&rec[0], rec[1].parse().unwrap(), rec[2].parse().unwrap());
        assert!(truth.is_finite() && bias.is_finite() && rec[3].parse::<f64>().unwrap().is_finite());
        let est: Vec<f64> = rows.iter().filter(|r| &r[3] == q).map(|r| r[5].parse().unwrap()).collect();
        assert_eq!(est.len(), 2);
        let mean = est.iter().sum::<f64>() / 2.0;
        assert!((mean - truth - bias).abs() < 1e-12, "{q}");
        count += 1;
    }
    assert!(count >= 16);
}
