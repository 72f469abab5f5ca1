use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5

[trajectories]
calibration = { kind = "constant", duration_s = 130, speed_mps = 1.5 }
tail = { kind = "mixed", duration_s = 40, speed_mps = 1.5 }
test = [{ name = "T1", kind = "lawnmower", duration_s = 120, speed_mps = 1.2, leg_s = 40 }]
train = [{ kind = "maneuvering", duration_s = 60, speed_mps = 1.5 }]

[grid]
scale_pct = [1.0]
bias_cmps = [0.5]
noise_cmps = [0.05]

[dcnet]
epochs = 1
batch_size = 4

[evaluation]
window_sizes = [20, 40]
mc_iterations = 2
"#;

fn dvlcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvlcal"))
        .args(args)
        .output()
        .expect("spawn dvlcal")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

fn dir_listing(dir: &Path) -> Vec<String> {
    let mut out: Vec<String> = walk(dir)
        .into_iter()
        .map(|p| p.strip_prefix(dir).unwrap().display().to_string())
        .collect();
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn invalid_config_fails_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("window_sizes = [20, 40]", "window_sizes = []");
    let cfg = write_config(tmp.path(), &bad);
    let out = tmp.path().join("out");
    for cmd in ["simulate", "evaluate"] {
        let o = dvlcal(&["--config", &cfg, "--out", out.to_str().unwrap(), cmd]);
        assert_eq!(o.status.code(), Some(1), "{cmd}");
        assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
        assert!(!out.exists(), "{cmd} wrote output despite invalid config");
    }
    let unknown = write_config(tmp.path(), "sed = 3\n");
    let o = dvlcal(&["--config", &unknown, "--out", out.to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
    assert!(!out.exists());
}

#[test]
fn usage_errors_are_nonzero() {
    assert_ne!(dvlcal(&["train", "--em", "6"]).status.code(), Some(0));
    assert_ne!(dvlcal(&["frobnicate"]).status.code(), Some(0));
    assert_eq!(dvlcal(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_are_named() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = dvlcal(&["--out", out, "train", "--em", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).starts_with("error:") && stderr(&o).contains("dataset.toml"),
        "{}",
        stderr(&o)
    );

    let cfg = write_config(tmp.path(), SMALL);
    let o = dvlcal(&["--config", &cfg, "--out", out, "evaluate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("em1.model"), "{}", stderr(&o));

    let o = dvlcal(&[
        "--out",
        out,
        "report",
        "--input",
        tmp.path().join("nope.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn simulate_is_deterministic_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = dvlcal(&[
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
            "simulate",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b, c) = (run("a", "9"), run("b", "9"), run("c", "10"));
    let files = dir_listing(&a);
    assert_eq!(files, dir_listing(&b));
    for f in [
        "dataset.toml",
        "train/train_1.csv",
        "calibration_gt.csv",
        "tail_gt.csv",
        "T1_gt.csv",
        "DVL1/calibration_dvl.csv",
        "DVL2/T1_gnss.csv",
    ] {
        assert!(files.iter().any(|x| x == f), "missing {f} in {files:?}");
    }
    for f in &files {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    assert_ne!(
        fs::read(a.join("DVL2/T1_dvl.csv")).unwrap(),
        fs::read(c.join("DVL2/T1_dvl.csv")).unwrap()
    );
}

#[test]
fn baseline_only_evaluation_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("eval");
    let o = dvlcal(&[
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "evaluate",
        "--baseline-only",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("scenario,approach,trajectory,rmse_cmps,improvement_pct,t_conv_s,mc_mean,mc_std")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // Two scenarios × (calibration, T1, tail).
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[1], "baseline");
        assert_eq!(r[4].parse::<f64>().unwrap(), 0.0);
        assert!(["20", "40"].contains(&r[5]));
    }
    assert!(out.join("report.txt").is_file());

    let o = dvlcal(&["--out", out.to_str().unwrap(), "report"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("DVL1") && table.contains("DVL2") && table.contains("baseline"));
}

#[test]
fn full_workflow_with_tiny_training() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let o = |args: &[&str]| {
        let mut full = vec![
            "--config",
            cfg.as_str(),
            "--threads",
            "1",
            "--out",
            out.to_str().unwrap(),
        ];
        full.extend_from_slice(args);
        let r = dvlcal(&full);
        assert!(r.status.success(), "{args:?}: {}", stderr(&r));
        r
    };
    o(&["simulate"]);
    for em in 1..=5 {
        o(&["train", "--em", &em.to_string()]);
        assert!(out.join(format!("em{em}.model")).is_file());
        let log = fs::read_to_string(out.join(format!("em{em}_train.csv"))).unwrap();
        assert_eq!(log.lines().count(), 2);
    }
    o(&["evaluate"]);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    for a in ["baseline", "EM1", "EM2", "EM3", "EM4", "EM5"] {
        assert!(csv.lines().any(|l| l.split(',').nth(1) == Some(a)), "no {a} rows");
    }
}
