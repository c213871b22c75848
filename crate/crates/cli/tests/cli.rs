use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sobar::runlog::{read_csv, read_events, COLUMNS};
use sobar::scenario::sha256_hex;

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn sobar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sobar")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Column `name` of the data rows of a tab-separated table.
fn table_column(text: &str, name: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.filter(|l| l.contains('\t')).map(|l| l.split('\t').nth(i).unwrap().to_string()).collect()
}

#[test]
fn drop_test_rigid_plus() {
    let o = sobar(&["drop-test", "--frame", "rigid", "--config", "plus", "--height", "0.25"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ms: f64 = table_column(&stdout(&o), "impact_time_ms")[0].parse().unwrap();
    assert!((ms / 8.0 - 1.0).abs() <= 0.2, "{ms}");
    let v: f64 = table_column(&stdout(&o), "impact_speed_mps")[0].parse().unwrap();
    assert!((v - 2.21).abs() <= 0.01);
}

#[test]
fn drop_test_soft_x_half_metre() {
    let o = sobar(&["drop-test", "--frame", "soft", "--pressure", "207kPa", "--config", "x", "--height", "0.50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ms: f64 = table_column(&stdout(&o), "impact_time_ms")[0].parse().unwrap();
    assert!((ms / 108.4 - 1.0).abs() <= 0.3, "{ms}");
}

#[test]
fn zero_trials_gives_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = sobar(&[
        "drop-test", "--frame", "soft", "--pressure", "207", "--height", "0.25", "--trials", "0", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 1);
    let csv = std::fs::read_to_string(out.join("drop_metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn unknown_frame_and_pressure_list_options() {
    let o = sobar(&["drop-test", "--frame", "foam", "--height", "0.25"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rigid, soft"));
    let o = sobar(&["drop-test", "--frame", "soft", "--pressure", "100", "--height", "0.25"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("available:") && stderr(&o).contains("207 kPa"), "{}", stderr(&o));
}

#[test]
fn perch_soft_succeeds_rigid_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("soft");
    let soft = repo("configs/perch/soft_207_55mm.toml");
    let o = sobar(&["perch", "--config", soft.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let n_soft = table_column(&stdout(&o), "verdict").iter().filter(|v| *v == "done").count();
    assert!(n_soft >= 4);

    // Config hash in the header matches the input file.
    let text = std::fs::read_to_string(out.join("perch_trial_000.csv")).unwrap();
    let log = read_csv(&text).unwrap();
    assert_eq!(log.header.config_sha256, sha256_hex(&std::fs::read(&soft).unwrap()));
    let t = log.column("t").unwrap();
    assert!(t.windows(2).all(|w| w[1] > w[0]));
    let events = read_events(std::fs::File::open(out.join("perch_trial_000.events.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    assert_eq!(sobar::mission::replay(&events).unwrap(), sobar::mission::Phase::Done);

    let rigid = repo("configs/perch/rigid_55mm.toml");
    let o = sobar(&["perch", "--config", rigid.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let n_rigid = table_column(&stdout(&o), "verdict").iter().filter(|v| *v == "done").count();
    assert!(n_rigid < n_soft);
}

#[test]
fn missing_config_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = sobar(&["perch", "--config", "/nonexistent/perch.toml", "--out", out.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
    assert!(!out.exists());
}

#[test]
fn invalid_config_enumerates_errors() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(repo("configs/perch/soft_207_55mm.toml")).unwrap();
    let bad = text.replace("wait_time = 2.0", "wait_time = -1.0").replace("trials = 5", "trials = 5\nbogus = 1");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, bad).unwrap();
    let o = sobar(&["perch", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn csv_schema_is_shared_across_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let soft = repo("configs/perch/soft_207_55mm.toml");
    sobar(&["drop-test", "--frame", "rigid", "--height", "0.25", "--out", d("a").to_str().unwrap()]);
    sobar(&["collide", "--frame", "soft", "--pressure", "207", "--out", d("b").to_str().unwrap()]);
    sobar(&["perch", "--config", soft.to_str().unwrap(), "--trials", "1", "--out", d("c").to_str().unwrap()]);
    for f in [d("a").join("drop_trial_000.csv"), d("b").join("collide_trial_000.csv"), d("c").join("perch_trial_000.csv")]
    {
        let log = read_csv(&std::fs::read_to_string(&f).unwrap()).unwrap();
        assert_eq!(log.columns, COLUMNS, "{}", f.display());
        assert!(log.records.iter().all(|r| r.len() == COLUMNS.len()));
    }
}

#[test]
fn perch_logs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let soft = repo("configs/perch/soft_207_55mm.toml");
    let run = |n: &str| {
        let out = dir.path().join(n);
        sobar(&["perch", "--config", soft.to_str().unwrap(), "--seed", "11", "--trials", "2", "--out", out.to_str().unwrap()]);
        ["perch_trial_001.csv", "perch_trial_001.events.jsonl"].map(|f| std::fs::read(out.join(f)).unwrap())
    };
    assert_eq!(run("x"), run("y"));
}

#[test]
fn wrench_hull_verdicts() {
    let o = sobar(&["wrench-hull", "--config", repo("configs/wrench/circle_115_two_finger.toml").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("verdict NotResistible"));
    let o = sobar(&["wrench-hull", "--config", repo("configs/wrench/rect_20x40.toml").to_str().unwrap()]);
    assert!(stdout(&o).contains("verdict Resistible"));
}

#[test]
fn beam_calib_table() {
    let o = sobar(&["beam-calib"]);
    assert!(o.status.success());
    let angles = table_column(&stdout(&o), "tip_angle_deg");
    let p = table_column(&stdout(&o), "pressure_kpa");
    let i = p.iter().position(|x| x == "207").unwrap();
    let theta: f64 = angles[i].parse().unwrap();
    assert!((theta - 5.8).abs() <= 0.1);
}

#[test]
fn calibrate_contact_writes_fit_with_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(sobar(&["calibrate-contact", "--config", empty.to_str().unwrap()]).status.code(), Some(2));

    let out = dir.path().join("cal.toml");
    let o = sobar(&[
        "calibrate-contact", "--config", repo("configs/table1_targets.toml").to_str().unwrap(), "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let errs: Vec<f64> = table_column(&stdout(&o), "relative_error").iter().map(|s| s.parse().unwrap()).collect();
    assert!(!errs.is_empty());
    let set = sobar::calibration::CalibrationSet::from_toml(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(set.models.iter().all(|m| !m.residuals.is_empty()));
    // The fitted file drives drop-test directly.
    let o = sobar(&["drop-test", "--frame", "rigid", "--height", "0.25", "--calibration", out.to_str().unwrap()]);
    assert!(o.status.success());
}
