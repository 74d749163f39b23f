//! End-to-end checks of the `rowfollow` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rowfollow::simulation::TrialConfig;

const SHORT_FIELD: &str = "field.centerline=[[0.0, 0.0], [15.0, 0.0]]";

fn rowfollow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rowfollow"))
        .args(args)
        .env_remove("ROWFOLLOW_JOBS")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn empty_annotation_file_gives_empty_labels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let out = dir.path().join("out.jsonl");
    fs::write(&input, "").unwrap();
    let o = rowfollow(&["groundtruth", "--annotations", path(&input), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn degenerate_record_is_skipped_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let out = dir.path().join("out.jsonl");
    let errors = dir.path().join("errors.jsonl");
    // A level camera sees the rows converge; parallel image rows admit no
    // vanishing point and hence no heading.
    let bad = r#"{"image_id":"parallel","f_px":400,"width":640,"height":480,"left_row":[[100,0],[100,480]],"right_row":[[500,0],[500,480]],"horizon":[[0,240],[640,240]],"stalks":null}"#;
    fs::write(&input, format!("{bad}\n")).unwrap();
    let o = rowfollow(&[
        "groundtruth",
        "--annotations",
        path(&input),
        "--out",
        path(&out),
        "--errors",
        path(&errors),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
    assert!(fs::read_to_string(&errors).unwrap().contains("parallel"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("parallel"));
}

#[test]
fn missing_annotation_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = rowfollow(&[
        "groundtruth",
        "--annotations",
        path(&dir.path().join("absent.jsonl")),
        "--out",
        path(&dir.path().join("out.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn printed_defaults_parse_back() {
    let o = rowfollow(&["config", "--defaults"]);
    assert_eq!(o.status.code(), Some(0));
    let cfg = TrialConfig::from_toml_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg, TrialConfig::default());
}

#[test]
fn last_override_wins() {
    let o = rowfollow(&["config", "--override", "speed=0.8", "--override", "v=1.1"]);
    assert_eq!(o.status.code(), Some(0));
    let cfg = TrialConfig::from_toml_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.speed, 1.1);
}

#[test]
fn seeded_trials_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = rowfollow(&[
            "trial",
            "--override",
            SHORT_FIELD,
            "--override",
            "seed=7",
            "--out",
            path(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        (
            fs::read(out.join("record.csv")).unwrap(),
            fs::read(out.join("summary.json")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn noiseless_trial_reports_no_interventions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trial");
    let o = rowfollow(&[
        "trial",
        "--override",
        SHORT_FIELD,
        "--override",
        "perception.sigma_heading=0.0",
        "--override",
        "perception.sigma_ratio=0.0",
        "--override",
        "perception.outlier_prob=0.0",
        "--out",
        path(&out),
        "--plot",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("interventions=0"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["interventions"], 0);
    assert_eq!(summary["completed"], true);

    // Re-plotting the record reproduces the trial's own plot.
    let replot = dir.path().join("replot.svg");
    let o = rowfollow(&[
        "plot",
        "--record",
        path(&out.join("record.csv")),
        "--override",
        SHORT_FIELD,
        "--out",
        path(&replot),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        fs::read(replot).unwrap(),
        fs::read(out.join("trajectory.svg")).unwrap()
    );
}

#[test]
fn bad_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["speed=fast", "no_such_key=1", "speed"] {
        let o = rowfollow(&["trial", "--override", bad, "--out", path(dir.path())]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
    }
}

#[test]
fn sweep_covers_the_cross_product() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("sweep.csv");
    let agg = dir.path().join("aggregate.json");
    let o = rowfollow(&[
        "sweep",
        "--override",
        "field.centerline=[[0.0, 0.0], [3.0, 0.0]]",
        "--override",
        "use_imu=false",
        "--axis",
        "perception.update_rate=22,10,5,2.3",
        "--seeds",
        "1..20",
        "--out",
        path(&table),
        "--aggregate",
        path(&agg),
        "--jobs",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_path(&table).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(&headers[0], "config_index");
    assert_eq!(&headers[2], "perception.update_rate");
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 80);
    assert_eq!(&rows[0][2], "22");
    assert_eq!(&rows[79][2], "2.3");
    assert_eq!(&rows[79][1], "20");
    let aggregates: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(agg).unwrap()).unwrap();
    assert_eq!(aggregates.as_array().unwrap().len(), 4);
}

#[test]
fn malformed_axis_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["speed", "=1,2", "speed="] {
        let o = rowfollow(&[
            "sweep",
            "--axis",
            bad,
            "--out",
            path(&dir.path().join("t.csv")),
        ]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
    }
}

#[test]
fn selftest_passes() {
    let o = rowfollow(&["selftest", "--count", "200", "--stalks"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}
