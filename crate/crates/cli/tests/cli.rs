use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_linescan"))
}

#[test]
fn scan_then_reconstruct_reproduces_location_map() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = bin().args(args).current_dir(d).output().unwrap();
        assert!(
            out.status.success(),
            "{:?} failed: {}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "generate", "--n", "48", "--k", "3", "--r", "2.5", "--ratio", "1.5", "--seed", "3", "-o",
        "X.csv",
    ]);
    run(&[
        "scan", "--sample", "X.csv", "--motif", "disc:2.5", "--angles",
        "0,25,50,75,100,125,150", "-o", "R.csv",
    ]);
    run(&[
        "reconstruct", "--scans", "R.csv", "--motif", "disc:2.5", "--K", "4", "--L", "60", "-o",
        "out",
    ]);
    for f in ["Xhat.csv", "Yhat.csv", "locmap.csv", "trace.csv"] {
        assert!(d.join("out").join(f).exists(), "missing {f}");
    }
    // The location map marks exactly the true motif centers.
    let x: Vec<Vec<f64>> = read_csv(&d.join("X.csv"));
    let loc: Vec<Vec<f64>> = read_csv(&d.join("out/locmap.csv"));
    let truth: Vec<(usize, usize)> = cells_where(&x, |v| v > 0.0);
    let marked: Vec<(usize, usize)> = cells_where(&loc, |v| v > 0.5);
    assert_eq!(truth, marked);
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn cells_where(grid: &[Vec<f64>], pred: impl Fn(f64) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, row) in grid.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if pred(v) {
                out.push((i, j));
            }
        }
    }
    out
}

#[test]
fn exit_codes() {
    // Usage error -> 1.
    let out = bin().arg("--bogus-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["scan", "--sample"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    // Data error (missing file) -> 2, with a one-line message.
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["scan", "--sample", "missing.csv", "--angles", "0", "-o", "r.csv"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    // Help -> 0.
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a.csv", "b.csv"] {
        let out = bin()
            .args(["generate", "--n", "40", "--k", "5", "--r", "2", "--seed", "9", "-o", name])
            .current_dir(d)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(d.join("a.csv")).unwrap(),
        std::fs::read(d.join("b.csv")).unwrap()
    );
}

#[test]
fn infeasible_density_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["generate", "--n", "32", "--k", "400", "--r", "2", "-o", "x.csv"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("infeasible density"), "stderr: {msg}");
}

#[test]
fn analyze_spectrum_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["analyze-spectrum", "--r", "2", "--angles", "36", "--n", "48", "-o", "s.csv"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(text.starts_with("freq,empirical,analytic\n"));
    assert!(text.lines().count() > 10);
}
