use std::fs;
use std::process::Command;

const SMALL: [&str; 6] = [
    "--min-panel",
    "1e-6",
    "--panels",
    "6",
    "--nodes-per-panel",
    "12",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pearcey-lab"))
}

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn rows(csv_text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = csv_text.lines();
    let head: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| {
            head.iter()
                .map(|h| h.to_string())
                .zip(l.split(',').map(String::from))
                .collect()
        })
        .collect()
}

#[test]
fn genfun_with_vanishing_weights_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir,
        "z.json",
        r#"{"a": [-1, 1], "k": [0, 0, 0], "tau": 1, "s": 0}"#,
    );
    let out = bin()
        .args(["genfun", "--config", &cfg])
        .args(SMALL)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let r = rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(r.len(), 1);
    assert_eq!(r[0]["F"], "1.0");
    assert!(r[0].contains_key("config_hash") && r[0].contains_key("version"));
}

#[test]
fn degenerate_suite_passes_with_zero_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir,
        "z.json",
        r#"{"a": [-1, 1], "k": [0, 0, 0], "tau": 1, "s": 0}"#,
    );
    let out_path = dir.path().join("report.json");
    let status = bin()
        .args([
            "verify",
            "--suite",
            "all",
            "--config",
            &cfg,
            "--out",
            out_path.to_str().unwrap(),
        ])
        .args(SMALL)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_path).unwrap()).unwrap();
    let rows = report.as_array().unwrap();
    assert!(rows.len() >= 10);
    for r in rows {
        assert_eq!(r["pass"], true);
        assert!(r["residual"].as_f64().unwrap() <= 1e-12, "{r}");
    }
}

#[test]
fn scan_delta_column_matches_log_derivative() {
    let out = bin()
        .args(["scan", "--s-grid=-2:2:21", "--tau-grid", "1:1:1"])
        .args(SMALL)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let r = rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(r.len(), 21);
    let col = |k: &str| {
        r.iter()
            .map(|x| x[k].parse::<f64>().unwrap())
            .collect::<Vec<_>>()
    };
    let (s, logf, delta) = (col("s"), col("log_F"), col("delta"));
    let h = s[1] - s[0];
    let w = [
        -1.0 / 60.0,
        3.0 / 20.0,
        -0.75,
        0.0,
        0.75,
        -3.0 / 20.0,
        1.0 / 60.0,
    ];
    for i in 3..s.len() - 3 {
        let d: f64 = (0..7).map(|j| w[j] * logf[i + j - 3]).sum::<f64>() / h;
        assert!(
            (d + delta[i]).abs() < 1e-4,
            "s = {}: {} vs {}",
            s[i],
            -d,
            delta[i]
        );
    }
    for p in col("pde_relative") {
        assert!(p < 1e-3);
    }
}

#[test]
fn output_is_deterministic_across_thread_counts() {
    let run = |threads: &str| {
        bin()
            .env("PEARCEY_LAB_THREADS", threads)
            .args(["genfun", "--s-grid=-1:1:5", "--format", "json"])
            .args(SMALL)
            .output()
            .unwrap()
            .stdout
    };
    let a = run("1");
    assert!(!a.is_empty());
    assert_eq!(a, run("3"));
    assert_eq!(a, run("1"));
}

#[test]
fn invalid_config_exits_two_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir,
        "bad.json",
        "{\n  \"a\": [-1, 1],\n  \"k\": [0, 2, 0],\n  \"tau\": 1,\n  \"s\": 0\n}\n",
    );
    let out = bin().args(["genfun", "--config", &cfg]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 3"), "{err}");

    let cfg = write(
        &dir,
        "typo.json",
        "{\"a\": [-1, 1], \"kk\": [0, 0.5, 0], \"tau\": 1, \"s\": 0}",
    );
    let out = bin().args(["genfun", "--config", &cfg]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 1"));

    let out = bin().args(["genfun", "--threads-typo"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn short_contour_is_a_precision_failure() {
    let out = bin()
        .args(["special", "--s-grid", "0:1:2", "--truncation", "3"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("precision loss"));
}

#[test]
fn gamma_emits_residue_record() {
    let out = bin().args(["gamma"]).args(SMALL).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let r = &v[0];
    for key in [
        "delta",
        "p",
        "q",
        "Delta",
        "trace_residual",
        "config_hash",
        "version",
    ] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["p"].as_array().unwrap().len(), 2);
    assert!(r["trace_residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn special_table_has_derivatives() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("special.csv");
    let status = bin()
        .args(["special", "--s-grid=-1:1:3", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let r = rows(&fs::read_to_string(out).unwrap());
    assert_eq!(r.len(), 3);
    assert!(r[1]["Q_s"].parse::<f64>().unwrap().abs() < 1e-10);
    assert_eq!(r[0]["Q_asym"], "");
    assert!(!r[2]["Q_asym"].is_empty());
}

#[test]
fn occupancy_table_sums_to_one() {
    let out = bin()
        .args(["occupancy", "--m-max", "12"])
        .args(SMALL)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let r = rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(r.len(), 13);
    let total: f64 = r
        .iter()
        .map(|x| x["probability"].parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-4);
}
