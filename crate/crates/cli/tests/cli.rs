use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lagcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lagcast"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(root: &Path, rel: &str) -> String {
    root.join(rel).to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth_two_years(root: &Path) {
    fs::write(root.join("synth.cfg"), "n_lat=4\nn_lon=8\nn_vars=2\nn_years=2\nseed=11\n").unwrap();
    let o = lagcast(&["synth", "--config", &path(root, "synth.cfg"), "--out", &path(root, "data")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_is_deterministic_and_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth_two_years(root);
    let again = lagcast(&["synth", "--config", &path(root, "synth.cfg"), "--out", &path(root, "data2")]);
    assert!(again.status.success());
    assert_eq!(
        fs::read(root.join("data/archive.grd")).unwrap(),
        fs::read(root.join("data2/archive.grd")).unwrap()
    );
    let missing = lagcast(&["synth", "--config", &path(root, "nope.cfg"), "--out", &path(root, "x")]);
    assert_eq!(missing.status.code(), Some(2));
    fs::write(root.join("bad.cfg"), "n_years=0\n").unwrap();
    let bad = lagcast(&["synth", "--config", &path(root, "bad.cfg"), "--out", &path(root, "y")]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn augment_reports_per_lag_counts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth_two_years(root);
    let input = path(root, "data/archive.grd");
    let one = lagcast(&["augment", "--input", &input, "--lags", "0", "--out", &path(root, "a0")]);
    assert!(one.status.success());
    assert!(stdout(&one).contains("lag  0h: 730 samples"));
    let four = lagcast(&["augment", "--input", &input, "--lags", "0,6,12,18", "--out", &path(root, "a4")]);
    assert!(four.status.success());
    assert!(stdout(&four).contains("total: 2917 samples, 2913 pairs"));
    let pairs = fs::read_to_string(root.join("a4/pairs.tsv")).unwrap();
    assert_eq!(pairs.lines().filter(|l| !l.starts_with('#') && !l.starts_with("lag")).count(), 2913);
    let bad = lagcast(&["augment", "--input", &input, "--lags", "5", "--out", &path(root, "a5")]);
    assert_eq!(bad.status.code(), Some(2));
    let corrupt = root.join("corrupt.grd");
    fs::write(&corrupt, b"GRD1 not really").unwrap();
    let o = lagcast(&["augment", "--input", &corrupt.to_string_lossy(), "--out", &path(root, "ac")]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn full_pipeline_emits_scores_and_comparisons() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth_two_years(root);
    let p = |s: &str| path(root, s);
    let steps = [
        vec!["augment", "--input", &p("data/archive.grd"), "--lags", "0,6,12,18", "--out", &p("aug")],
        vec![
            "train", "--shards", &p("aug"), "--static", &p("data/static.grd"), "--train-years", "2001",
            "--steps", "10", "--checkpoint-every", "5", "--out", &p("train"),
        ],
        vec![
            "infer", "--checkpoint", &p("train/checkpoint.afn"), "--analysis", &p("aug/lag_00.grd"),
            "--static", &p("data/static.grd"), "--year", "2002", "--out", &p("fc"),
        ],
    ]
    .map(|v| v.into_iter().map(String::from).collect::<Vec<_>>());
    for args in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = lagcast(&args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["manifest.txt", "loss.txt", "checkpoint.afn", "checkpoints/step_000005.afn", "checkpoints/step_000010.afn"] {
        assert!(root.join("train").join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(root.join("train/loss.txt")).unwrap().lines().count(), 10);
    let n_fc = fs::read_dir(root.join("fc")).unwrap().filter(|e| {
        e.as_ref().unwrap().file_name().to_string_lossy().starts_with("fc_")
    }).count();
    assert_eq!(n_fc, 104);

    let ev = lagcast(&[
        "eval", "--forecasts", &p("fc"), "--analysis", &p("aug/lag_00.grd"), "--clim-years", "2001",
        "--run", "tiny", "--reference", "paper", "--out", &p("eval"),
    ]);
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
    assert!(stdout(&ev).contains("465.39"));
    assert!(stdout(&ev).contains("published reference, not reproduced"));
    let scores = fs::read_to_string(root.join("eval/scores.csv")).unwrap();
    assert!(scores.starts_with("run,variable,lead_day,rmse,acc,n_cases"));
    assert_eq!(scores.lines().count(), 1 + 2 * 7);

    let cmp = lagcast(&["compare", "--a", &p("eval/scores.csv"), "--b", &p("eval/scores.csv"), "--out", &p("cmp")]);
    assert!(cmp.status.success());
    let text = fs::read_to_string(root.join("cmp/compare.csv")).unwrap();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[6].parse::<f64>().unwrap(), 0.0, "{line}");
    }

    let reuse = lagcast(&["compare", "--a", &p("eval/scores.csv"), "--b", &p("eval/scores.csv"), "--out", &p("train")]);
    assert_eq!(reuse.status.code(), Some(2));
}
