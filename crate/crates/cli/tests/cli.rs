use std::path::Path;
use std::process::{Command, Output};

fn mabr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mabr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn eval_of_identical_meshes_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let synth = mabr(&["--seed", "3", "synth", "--n", "2", "-o", "c"], dir.path());
    assert_eq!(code(&synth), 0, "{}", stderr(&synth));
    let out = mabr(&["eval", "c/body_0000.obj", "c/body_0000.obj", "--corresponding"], dir.path());
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("rms 0.000000e0"), "{text}");
    assert!(text.contains("chamfer 0.000000e0"), "{text}");
}

#[test]
fn missing_model_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = mabr(&["register", "nowhere.mabr", "scan.ply", "-o", "fit.obj"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere.mabr"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mabr(&[], dir.path())), 1);
    assert_eq!(code(&mabr(&["register"], dir.path())), 1);
    assert_eq!(code(&mabr(&["synth", "--n", "two", "-o", "x"], dir.path())), 1);
    let batch = mabr(&["register", "m.mabr", "a.ply", "b.ply", "-o", "out", "--report", "r.json"], dir.path());
    assert_eq!(code(&batch), 1);
    assert_eq!(code(&mabr(&["--help"], dir.path())), 0);
}

#[test]
fn unknown_spec_key_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mabr(&["synth", "--n", "2", "-o", "c"], dir.path())), 0);
    std::fs::write(dir.path().join("spec.toml"), "noise = 0.1\n").unwrap();
    let out = mabr(&["corrupt", "c/body_0000.obj", "--spec", "spec.toml", "-o", "s.ply"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_is_reproducible_under_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&mabr(&["--seed", "11", "synth", "--n", "2", "-o", out], dir.path())), 0);
    }
    for f in ["body_0001.obj", "labels.txt", "params.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let labels = std::fs::read_to_string(dir.path().join("a/labels.txt")).unwrap();
    assert!(labels.starts_with("# extremities: 6 9 12 15"));
}

#[test]
fn train_register_eval_walkthrough() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let o = mabr(args, d);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        o
    };
    run(&["--seed", "1", "synth", "--n", "8", "-o", "corpus"]);
    run(&["train", "corpus", "corpus/labels.txt", "-o", "model.mabr", "--k", "7", "--part-k", "7"]);
    run(&["--seed", "2", "synth", "--n", "2", "-o", "held"]);
    std::fs::write(
        d.join("spec.toml"),
        "noise_sigma = 0.001\n[[holes]]\nregion = \"head_top\"\nradius = 0.08\n",
    )
    .unwrap();
    run(&[
        "--seed", "5", "corrupt", "held/body_0000.obj", "--spec", "spec.toml", "--labels", "held/labels.txt", "-o",
        "scan.ply",
    ]);
    std::fs::write(d.join("cfg.toml"), "[fine]\nschedule = [20.0, 2.0]\n").unwrap();
    let reg = run(&[
        "register", "model.mabr", "scan.ply", "-o", "fit.obj", "--report", "report.json", "--trace", "trace.csv",
        "--config", "cfg.toml", "--truth", "held/body_0000.obj",
    ]);
    assert!(stdout(&reg).contains("rms"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["fine"]["schedule"], serde_json::json!([20.0, 2.0]));
    assert!(report["metrics"]["chamfer"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["extremities"].as_array().unwrap().len(), 4);
    let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert!(trace.starts_with("stage,part,iteration"));

    let eval = run(&[
        "eval", "fit.obj", "held/body_0000.obj", "--corresponding", "--labels", "held/labels.txt", "--report",
        "report.json", "--plot-data", "plots",
    ]);
    assert_eq!(stdout(&eval).lines().filter(|l| l.starts_with("rms part")).count(), 16);
    for f in ["vertex_error.csv", "error_cdf.csv", "trace.csv"] {
        assert!(d.join("plots").join(f).exists(), "{f} missing");
    }

    let batch = run(&["register", "model.mabr", "held/body_0000.obj", "held/body_0001.obj", "-o", "batch", "--jobs", "2"]);
    let lines: Vec<String> = stdout(&batch).lines().map(str::to_owned).collect();
    assert!(lines[0].starts_with("held/body_0000.obj") && lines[1].starts_with("held/body_0001.obj"));
    for f in ["body_0000.obj", "body_0001.report.json", "body_0001.trace.csv"] {
        assert!(d.join("batch").join(f).exists(), "{f} missing");
    }
}
