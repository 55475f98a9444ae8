use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn busflux(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_busflux"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = busflux(args, cwd);
    assert!(
        out.status.success(),
        "busflux {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Scenario through featurization, in a temp dir.
fn featurized(days: &str) -> TempDir {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(&["synth", "--out-dir", "s", "--seed", "3", "--days", days], d);
    ok(&["clean", "--frames", "s/frames.csv", "--out-segments", "seg.csv", "--out-report", "rep.json"], d);
    ok(&["aggregate", "--segments", "seg.csv", "--out-hourly", "hourly.csv"], d);
    ok(&["join", "--counts", "hourly.csv", "--weather", "s/weather.json", "--out", "joined.csv"], d);
    ok(&["featurize", "--joined", "joined.csv", "--out-dir", "feat", "--seed", "3"], d);
    t
}

#[test]
fn clean_counters_match_planted_noise() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(&["synth", "--out-dir", "s", "--seed", "5", "--days", "2", "--noise", "0.2"], d);
    ok(&["clean", "--frames", "s/frames.csv", "--out-segments", "seg.csv", "--out-report", "rep.json"], d);
    let truth = json(d.join("s/truth.json"));
    let rep = json(d.join("rep.json"));
    let r = &rep["report"];
    let nf = &truth["noise_frames"];
    assert_eq!(r["dropped_randomized"], nf["randomized"]);
    assert_eq!(r["dropped_single_stop"], nf["single_stop"]);
    assert_eq!(r["dropped_rssi"], nf["rssi"]);
    assert_eq!(r["dropped_short"], nf["short_dwell"]);
    assert_eq!(r["dropped_long"], nf["long_dwell"]);
    assert_eq!(r["kept_frames"], truth["planted_frames"]);
    assert_eq!(rep["parse_errors"], 0);
    assert!(d.join("clean.manifest.json").exists());
}

#[test]
fn empty_frames_file_gives_empty_segments() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fs::write(d.join("frames.csv"), "").unwrap();
    ok(&["clean", "--frames", "frames.csv", "--out-segments", "seg.csv"], d);
    let text = fs::read_to_string(d.join("seg.csv")).unwrap();
    assert!(text.lines().count() <= 1, "{text}");
}

#[test]
fn bad_header_exits_two() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fs::write(d.join("frames.csv"), "a,b,c\n1,2,3\n").unwrap();
    let out = busflux(&["clean", "--frames", "frames.csv", "--out-segments", "seg.csv"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_names_the_path() {
    let t = tempfile::tempdir().unwrap();
    let out = busflux(&["clean", "--frames", "nowhere/frames.csv", "--out-segments", "seg.csv"], t.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/frames.csv"));
}

#[test]
fn training_is_reproducible() {
    let t = featurized("3");
    let d = t.path();
    for name in ["a", "b"] {
        ok(
            &[
                "train", "--model", "dnn", "--features", "feat", "--epochs", "100", "--seed", "7", "--out",
                &format!("{name}.json"), "--history", &format!("{name}.csv"),
            ],
            d,
        );
    }
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());

    ok(&["plot", "--history", "a.csv", "--out", "h.svg"], d);
    let svg = fs::read_to_string(d.join("h.svg")).unwrap();
    let lines: Vec<&str> = svg.lines().filter(|l| l.contains("<polyline")).collect();
    assert_eq!(lines.len(), 2);
    for l in lines {
        let pts = l.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split_whitespace().count(), 100);
    }
}

#[test]
fn evaluate_importance_and_plots() {
    let t = featurized("4");
    let d = t.path();
    for m in ["lr", "cart", "gbt"] {
        ok(&["train", "--model", m, "--features", "feat", "--out", &format!("{m}.json")], d);
    }
    ok(
        &[
            "evaluate", "--model", "lr.json", "--model", "cart.json", "--model", "gbt.json", "--test",
            "feat/test.csv", "--out", "eval.json",
        ],
        d,
    );
    let report = json(d.join("eval.json"));
    let ranking = report["comparison"]["ranking"].as_array().unwrap();
    assert_eq!(ranking.len(), 3);
    for r in ranking {
        assert!(r["mse"].as_f64().unwrap().is_finite());
    }

    ok(&["plot", "--mse-report", "eval.json", "--out", "mse.svg"], d);
    let svg = fs::read_to_string(d.join("mse.svg")).unwrap();
    assert_eq!(svg.matches("class=\"bar\"").count(), 3);

    ok(&["plot", "--counts", "hourly.csv", "--out", "counts.svg"], d);
    let svg = fs::read_to_string(d.join("counts.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 7);

    ok(&["importance", "--model", "gbt.json", "--out", "imp.csv"], d);
    let text = fs::read_to_string(d.join("imp.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rank,feature,importance"));
    let sum: f64 = lines.map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-9);

    let out = busflux(&["importance", "--model", "lr.json", "--out", "imp2.csv"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_plot_schema_exits_one() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    fs::write(d.join("x.csv"), "foo,bar\n1,2\n").unwrap();
    let out = busflux(&["plot", "--history", "x.csv", "--out", "x.svg"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn column_mismatch_exits_one() {
    let t = featurized("3");
    let d = t.path();
    ok(&["train", "--model", "lr", "--features", "feat", "--out", "lr.json"], d);
    let test: PathBuf = d.join("feat/test.csv");
    let text = fs::read_to_string(&test).unwrap();
    let (header, rest) = text.split_once('\n').unwrap();
    let renamed = header.replacen("hour_of_day", "hour_renamed", 1);
    assert_ne!(renamed, header);
    fs::write(d.join("bad.csv"), format!("{renamed}\n{rest}")).unwrap();
    let out = busflux(&["evaluate", "--model", "lr.json", "--test", "bad.csv", "--out", "e.json"], d);
    assert_ne!(out.status.code(), Some(0));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
