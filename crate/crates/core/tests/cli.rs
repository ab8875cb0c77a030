use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden")
}

fn gridzones(args: &[&str], config_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridzones"))
        .args(args)
        .arg("--config")
        .arg(config_dir.join("config.toml"))
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

/// Copies the golden inputs into `dir`, with thermal limits replaced by
/// `pmax` (MW per generator).
fn golden_copy(dir: &Path, pmax: [u32; 3]) {
    for f in ["config.toml", "coords.csv", "farms.csv", "weather.csv"] {
        std::fs::copy(golden_dir().join(f), dir.join(f)).unwrap();
    }
    let case = std::fs::read_to_string(golden_dir().join("case5.m")).unwrap();
    let mut gens = 0;
    let case: Vec<String> = case
        .lines()
        .map(|line| {
            let cols: Vec<&str> = line.trim().trim_end_matches(';').split('\t').collect();
            // Generator rows have ten columns with status 1 in the eighth.
            if cols.len() == 10 && cols[7] == "1" && cols[6] == "100" {
                let mut cols: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
                cols[8] = pmax[gens].to_string();
                gens += 1;
                format!("\t{};", cols.join("\t"))
            } else {
                line.to_string()
            }
        })
        .collect();
    assert_eq!(gens, 3);
    std::fs::write(dir.join("case5.m"), case.join("\n")).unwrap();
}

fn manifest(out: &Path) -> serde_json::Value {
    let run = std::fs::read_dir(out).unwrap().next().unwrap().unwrap().path();
    serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn complete_run_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let res = gridzones(&["run", "--output-dir", out.to_str().unwrap()], &golden_dir());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("average nodal price ± std"));
    assert_eq!(manifest(&out)["partial"], false);

    let run = std::fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
    let report = Command::new(env!("CARGO_BIN_EXE_gridzones")).arg("report").arg(&run).output().unwrap();
    assert_eq!(report.status.code(), Some(0));
    assert!(stdout.starts_with(&*String::from_utf8_lossy(&report.stdout)));
}

#[test]
fn input_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = gridzones(&["validate"], tmp.path());
    assert_eq!(missing.status.code(), Some(1));
    assert!(!missing.stderr.is_empty());

    let bad_flag = gridzones(&["run", "--k", "two"], &golden_dir());
    assert_eq!(bad_flag.status.code(), Some(1));

    let too_many_zones = gridzones(&["validate", "--k", "7"], &golden_dir());
    assert_eq!(too_many_zones.status.code(), Some(1));

    let no_run = Command::new(env!("CARGO_BIN_EXE_gridzones"))
        .arg("report")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(no_run.status.code(), Some(1));
}

#[test]
fn calm_shortfall_makes_run_partial() {
    let tmp = tempfile::tempdir().unwrap();
    golden_copy(tmp.path(), [350, 150, 150]);
    let out = tmp.path().join("out");
    let res = gridzones(&["run", "--output-dir", out.to_str().unwrap()], tmp.path());
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert_eq!(m["partial"], true);
    assert_eq!(m["skipped"][0]["id"], "2011-12-01");
    assert_eq!(m["skipped_references"][0]["id"], "no_wind");

    // Tolerating a third of the dates turns the same run into a success.
    let out = tmp.path().join("tolerant");
    let res = gridzones(
        &["run", "--output-dir", out.to_str().unwrap(), "--max-skipped-fraction", "0.34"],
        tmp.path(),
    );
    assert_eq!(res.status.code(), Some(0));
    assert_eq!(manifest(&out)["partial"], false);
}

#[test]
fn no_feasible_scenario_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    golden_copy(tmp.path(), [10, 10, 10]);
    let out = tmp.path().join("out");
    let res = gridzones(&["run", "--output-dir", out.to_str().unwrap()], tmp.path());
    assert_eq!(res.status.code(), Some(2));
    let opf = gridzones(&["opf", "--scenario", "no_wind"], tmp.path());
    assert_eq!(opf.status.code(), Some(2));
}

#[test]
fn opf_prints_prices() {
    let res = gridzones(&["opf", "--scenario", "2011-12-02"], &golden_dir());
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8_lossy(&res.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bus_id,lmp"));
    assert_eq!(lines.count(), 6);
    let want = std::fs::read_to_string(golden_dir().join("expected/scenarios/2011-12-02/lmp.csv")).unwrap();
    assert_eq!(text, want);
}
