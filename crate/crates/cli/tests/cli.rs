use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_odocal");

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn odocal(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("ODOCAL_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Differential-drive experiment with a short profile.
fn small_config(noise: &str, extra: &str) -> String {
    format!(
        r#"
[vehicle]
drive_type = "differential_drive"
wheel_radius = 0.033
baseline = 0.16

[simulation]
seed = 3
landmark = [2.0, 1.0]
segments = [
    {{ duration = 1.0, left = 6.0, right = 6.0 }},
    {{ duration = 1.0, left = 4.0, right = 6.0 }},
]

[simulation.noise]
{noise}

[restarts]
restarts = 10
{extra}
"#
    )
}

const NOISELESS: &str = "encoder_std = 0.0\nlandmark_std = 0.0\npoint_std = 0.01\n";

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn turtlebot_config_gives_401_records_deterministically() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs_dir().join("turtlebot.toml");
    let cfg = cfg.to_str().unwrap();
    for out in ["a", "b"] {
        let o = odocal(&["simulate", "--config", cfg, "--out", out], tmp.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for file in ["dataset.csv", "trajectory.csv"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let text = fs::read_to_string(tmp.path().join("a/dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 402);
    assert!(!text.contains('\r'));
    let o = odocal(
        &["simulate", "--config", cfg, "--out", "c", "--seed", "9"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    assert_ne!(
        fs::read(tmp.path().join("c/dataset.csv")).unwrap(),
        fs::read(tmp.path().join("a/dataset.csv")).unwrap()
    );
}

#[test]
fn catvehicle_config_round_trips_into_calibration() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs_dir().join("catvehicle.toml");
    let cfg = cfg.to_str().unwrap();
    let o = odocal(&["simulate", "--config", cfg, "--out", "."], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("77 straight, 824 turn"));
    let o = odocal(
        &["calibrate", "dataset.csv", "--config", cfg, "--out", "."],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let result: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(result["runs"].as_array().unwrap().len(), 100);
    assert!(result["wheel_radius"]["relative_error"].as_f64().unwrap() < 0.08);
    assert!(result["geometry"]["relative_error"].as_f64().unwrap() < 0.02);
}

#[test]
fn config_errors_exit_1_with_line() {
    let tmp = TempDir::new().unwrap();
    let bad = write(tmp.path(), "bad.toml", &small_config(NOISELESS, "sead = 4"));
    let o = odocal(&["simulate", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("bad.toml:23:"), "{err}");
    assert!(err.contains("sead"), "{err}");

    let zero = small_config(NOISELESS, "").replace("duration = 1.0", "duration = 0.0");
    let zero = write(tmp.path(), "zero.toml", &zero);
    let o = odocal(
        &["simulate", "--config", zero.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("zero.toml:"), "{}", stderr(&o));

    let o = odocal(&["simulate"], tmp.path());
    assert_eq!(code(&o), 1);
    let o = odocal(&["frobnicate"], tmp.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn noiseless_calibration_and_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", &small_config(NOISELESS, ""));
    let cfg = cfg.to_str().unwrap();
    assert_eq!(
        code(&odocal(
            &["simulate", "--config", cfg, "--out", "."],
            tmp.path()
        )),
        0
    );
    let o = odocal(
        &["calibrate", "dataset.csv", "--config", cfg, "--out", "."],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let result: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("result.json")).unwrap()).unwrap();
    for key in ["wheel_radius", "geometry"] {
        assert!(result[key]["relative_error"].as_f64().unwrap() < 1e-6);
    }
    assert!(tmp.path().join("trace_baseline.csv").is_file());

    let o = odocal(&["report", "result.json", "--out", "rep"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let quart = read_csv(&tmp.path().join("rep/quartiles.csv"));
    assert_eq!(quart.len(), 2);
    assert!(quart.iter().all(|row| row[1] == "10"));
    assert_eq!(read_csv(&tmp.path().join("rep/distribution.csv")).len(), 10);

    // every curve of a parameter ends at the same value
    let curves = read_csv(&tmp.path().join("rep/curves.csv"));
    for name in ["wheel_radius", "baseline"] {
        let mut last = std::collections::BTreeMap::new();
        for row in curves.iter().filter(|r| r[1] == name) {
            last.insert(row[0].clone(), row[3].parse::<f64>().unwrap());
        }
        assert_eq!(last.len(), 10);
        let v: Vec<f64> = last.into_values().collect();
        let (lo, hi) = v
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(*x), b.max(*x)));
        assert!(hi - lo < 1e-6 * hi, "{name}: {lo} {hi}");
    }
}

#[test]
fn single_restart_report_has_one_curve_per_parameter() {
    let tmp = TempDir::new().unwrap();
    let text = small_config(NOISELESS, "").replace("restarts = 10", "restarts = 1");
    let cfg = write(tmp.path(), "c.toml", &text);
    let cfg = cfg.to_str().unwrap();
    assert_eq!(
        code(&odocal(
            &["simulate", "--config", cfg, "--out", "."],
            tmp.path()
        )),
        0
    );
    assert_eq!(
        code(&odocal(
            &["calibrate", "dataset.csv", "--config", cfg, "--out", "."],
            tmp.path()
        )),
        0
    );
    assert_eq!(code(&odocal(&["report", "result.json"], tmp.path())), 0);
    let curves = read_csv(&tmp.path().join("curves.csv"));
    assert!(curves.iter().all(|r| r[0] == "0"));
    assert!(curves.iter().any(|r| r[1] == "wheel_radius"));
    assert!(curves.iter().any(|r| r[1] == "baseline"));
}

#[test]
fn thread_cap_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", &small_config("", ""));
    let cfg = cfg.to_str().unwrap();
    assert_eq!(
        code(&odocal(
            &["simulate", "--config", cfg, "--out", "."],
            tmp.path()
        )),
        0
    );
    let mut dists = Vec::new();
    for threads in ["1", "3"] {
        let out = format!("t{threads}");
        let o = Command::new(BIN)
            .args(["calibrate", "dataset.csv", "--config", cfg, "--out", &out])
            .current_dir(tmp.path())
            .env("ODOCAL_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_eq!(
            code(&odocal(
                &["report", &format!("{out}/result.json")],
                tmp.path()
            )),
            0
        );
        dists.push(fs::read(tmp.path().join(&out).join("distribution.csv")).unwrap());
    }
    assert_eq!(dists[0], dists[1]);

    let o = Command::new(BIN)
        .args(["calibrate", "dataset.csv", "--config", cfg])
        .current_dir(tmp.path())
        .env("ODOCAL_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn data_and_stage_errors_have_their_codes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", &small_config(NOISELESS, ""));
    let cfg = cfg.to_str().unwrap();

    let o = odocal(&["calibrate", "missing.csv", "--config", cfg], tmp.path());
    assert_eq!(code(&o), 2);

    write(tmp.path(), "garbage.csv", "t,dt\n1,2,3\n");
    let o = odocal(&["calibrate", "garbage.csv", "--config", cfg], tmp.path());
    assert_eq!(code(&o), 2);

    let bike = configs_dir().join("catvehicle.toml");
    assert_eq!(
        code(&odocal(
            &[
                "simulate",
                "--config",
                bike.to_str().unwrap(),
                "--out",
                "bike"
            ],
            tmp.path()
        )),
        0
    );
    let o = odocal(
        &["calibrate", "bike/dataset.csv", "--config", cfg],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);

    // no straight records: the radius stage cannot run
    let turning =
        small_config(NOISELESS, "").replace("left = 6.0, right = 6.0", "left = 5.0, right = 6.0");
    let turning = write(tmp.path(), "turn.toml", &turning);
    let turning = turning.to_str().unwrap();
    assert_eq!(
        code(&odocal(
            &["simulate", "--config", turning, "--out", "turn"],
            tmp.path()
        )),
        0
    );
    let o = odocal(
        &["calibrate", "turn/dataset.csv", "--config", turning],
        tmp.path(),
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("radius"), "{}", stderr(&o));

    write(tmp.path(), "result.json", "{\"nominal\": 3}");
    let o = odocal(&["report", "result.json"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn extraction_from_simulated_frames() {
    let tmp = TempDir::new().unwrap();
    let text = format!(
        "{}\n[frames]\nenabled = true\nground_extent = 3.0\n",
        small_config(NOISELESS, "")
    );
    let cfg = write(tmp.path(), "c.toml", &text);
    let cfg = cfg.to_str().unwrap();
    let o = odocal(&["simulate", "--config", cfg, "--out", "."], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let frames = tmp.path().join("frames");
    assert_eq!(read_csv(&frames.join("manifest.csv")).len(), 21);

    let o = odocal(
        &[
            "extract",
            "frames",
            "--config",
            cfg,
            "--dataset",
            "dataset.csv",
            "--out",
            "ex",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let shortcut = read_csv(&tmp.path().join("dataset.csv"));
    let extracted = read_csv(&tmp.path().join("ex/landmarks.csv"));
    assert_eq!(extracted.len(), 21);
    for (s, e) in shortcut.iter().zip(&extracted) {
        assert_eq!(s[0], e[0]);
        let f = |v: &String| v.parse::<f64>().unwrap();
        let d = (f(&s[5]) - f(&e[1])).hypot(f(&s[6]) - f(&e[2]));
        assert!(d < 0.03, "t {}: {d}", s[0]);
    }
    assert_eq!(
        read_csv(&tmp.path().join("ex/dataset_extracted.csv")).len(),
        21
    );

    // one corrupted frame is skipped with a warning
    fs::write(frames.join("frame_000007.csv"), "x,y,z\n1.0,oops,2.0\n").unwrap();
    let o = odocal(
        &["extract", "frames", "--config", cfg, "--out", "ex2"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stderr(&o).matches("skipping").count(), 1, "{}", stderr(&o));
    assert_eq!(read_csv(&tmp.path().join("ex2/landmarks.csv")).len(), 20);

    // more than half unreadable is fatal
    for k in 0..11 {
        fs::write(frames.join(format!("frame_{k:06}.csv")), "garbage").unwrap();
    }
    let o = odocal(
        &["extract", "frames", "--config", cfg, "--out", "ex3"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);

    fs::create_dir(tmp.path().join("empty")).unwrap();
    let o = odocal(&["extract", "empty", "--config", cfg], tmp.path());
    assert_eq!(code(&o), 2);
}
