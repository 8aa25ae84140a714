use std::path::Path;
use std::process::{Command, Output};

fn ghostimg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghostimg"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GHOSTIMG_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn analytic_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = ghostimg(
        &["analytic", "-c", "paper_shifted", "--l1-mm", "482"],
        dir.path(),
    );
    assert!(o.status.success());
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "152");
    let v: f64 = row[3].parse().unwrap();
    assert!((v - 0.5728).abs() < 1e-4);

    let o = ghostimg(
        &[
            "analytic",
            "-c",
            "paper_shifted",
            "--l1-mm",
            "482",
            "--system-visibility",
            "1",
        ],
        dir.path(),
    );
    let v2: f64 = stdout(&o)
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();
    assert!((v2 / v - 1.0 / 0.65).abs() < 1e-9);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.json"), "{").unwrap();
    for args in [
        vec!["analytic", "-c", "broken.json"],
        vec!["analytic", "-c", "missing.json"],
        vec!["analytic", "--shift-mm", "1200"],
        vec!["analytic", "--l1-mm", "-5"],
        vec!["no-such-command"],
    ] {
        let o = ghostimg(&args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn campaign_with_failed_points_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = ghostimg(
        &[
            "campaign",
            "-c",
            "paper_shifted",
            "--center-mm",
            "50",
            "--l1-mm",
            "400",
            "482",
            "--output-dir",
            "bad",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bad/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["points"].as_array().unwrap().len(), 2);
    assert!(report["points"][0]["error"].is_string());
}

#[test]
fn campaign_then_alpha_fit() {
    let dir = tempfile::tempdir().unwrap();
    let o = ghostimg(
        &[
            "campaign",
            "-c",
            "paper_shifted",
            "--noiseless",
            "--output-dir",
            "camp",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "config.json", "points.csv"] {
        assert!(dir.path().join("camp").join(f).exists());
    }
    let o = ghostimg(
        &[
            "fit",
            "--campaign",
            "camp/points.csv",
            "--g",
            "paper_shifted=0.65",
            "-o",
            "camp/alpha.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((fit["alpha"].as_f64().unwrap() - 2.0).abs() < 0.05, "{fit}");
    assert!(std::fs::read_to_string(dir.path().join("camp/alpha.csv"))
        .unwrap()
        .starts_with("d_mm,V,sigma_V,V_model"));

    // Unknown configuration name in the ceilings.
    let o = ghostimg(
        &["fit", "--campaign", "camp/points.csv", "--g", "other=0.65"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_then_fit_scan() {
    let dir = tempfile::tempdir().unwrap();
    let o = ghostimg(
        &[
            "simulate",
            "-c",
            "paper_shifted",
            "--l1-mm",
            "482",
            "--seed",
            "9",
            "-o",
            "s.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let o = ghostimg(&["fit", "s.csv", "--background-cps", "0"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let v = r["visibility_corrected"].as_f64().unwrap();
    let se = r["visibility_corrected_error"].as_f64().unwrap();
    assert!((v - 0.5728).abs() < 4.0 * se, "{v} ± {se}");

    std::fs::write(
        dir.path().join("empty.csv"),
        "position_mm,counts,duration_s\n0,0,1\n0.1,0,1\n",
    )
    .unwrap();
    assert_eq!(
        ghostimg(&["fit", "empty.csv"], dir.path()).status.code(),
        Some(3)
    );
}

#[test]
fn kernel_and_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let o = ghostimg(&["kernel", "--l1-mm", "482", "-o", "k.csv"], dir.path());
    assert!(o.status.success());
    let k = std::fs::read_to_string(dir.path().join("k.csv")).unwrap();
    assert_eq!(k.lines().count(), 122);
    assert!(k.contains("\n0,1\n"));

    let o = ghostimg(&["reproduce", "fig5", "--out-dir", "figs"], dir.path());
    assert!(o.status.success());
    assert!(dir.path().join("figs/fig5_markers.csv").exists());
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "kernel",
        "--kernel",
        "monte-carlo",
        "--realizations",
        "5000",
        "--l1-mm",
        "482",
    ];
    let one = ghostimg(&[&["--workers", "1"], &args[..]].concat(), dir.path());
    let four = Command::new(env!("CARGO_BIN_EXE_ghostimg"))
        .args(args)
        .env("GHOSTIMG_WORKERS", "4")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
}
