use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn corpus(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(rel)
}

fn aerovln(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aerovln")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn plan_writes_waypoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan.json");
    let ep = corpus("decoy/tram_depot.json");
    let o = aerovln(&["plan", "--episode", s(&ep), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let plan = read_json(&out);
    assert_eq!(plan["episode_id"], "decoy-tram-depot");
    let wps = plan["waypoints"].as_array().unwrap();
    assert_eq!(wps.len(), 2);
    assert_eq!(wps[0]["x"], -35.0);
    assert_eq!(wps[1]["x"], 35.0);
    assert!(plan["covered_fraction"].as_f64().unwrap() >= 0.95);
}

#[test]
fn run_dump_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let ep = corpus("decoy/tram_depot.json");
    let o = aerovln(&["run", "--episode", s(&ep), "--out", s(&runs), "--dump-images"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("SR%"));

    let trace = read_json(&runs.join("decoy-tram-depot.trace.json"));
    assert_eq!(trace["metrics"]["success"], true);
    assert_eq!(trace["result"]["confirmed_object"], "car-target");
    let steps = trace["result"]["trace"].as_array().unwrap().len();
    let dumped = std::fs::read_dir(runs.join("decoy-tram-depot")).unwrap().count();
    assert_eq!(dumped, steps);

    let summary = dir.path().join("summary");
    let o = aerovln(&["eval", "--traces", s(&runs), "--out", s(&summary)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(summary.join("summary.csv")).unwrap();
    assert!(csv.starts_with("group,count,mean_ne,sr,osr,spl\n"));
    assert!(csv.contains("all,1,"));
    assert!(csv.contains("hard,1,"));
    assert!(summary.join("summary.json").exists());
}

#[test]
fn annotate_marks_the_image() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let ep = corpus("decoy/tram_depot.json");
    let o = aerovln(&[
        "run",
        "--episode",
        s(&ep),
        "--out",
        s(&runs),
        "--dump-images",
        "--ablate",
        "v",
    ]);
    assert!(o.status.success());
    let image = runs.join("decoy-tram-depot/step_001.ppm");

    let out = dir.path().join("ann");
    let o = aerovln(&[
        "annotate",
        "--image",
        s(&image),
        "--prompt",
        "focus on red car",
        "--episode",
        s(&ep),
        "--pose",
        "-35,10,50,0",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mapping = read_json(&out.join("mapping.json"));
    let cands = mapping["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 1);
    assert_eq!(cands[0]["id"], 1);
    let before = std::fs::read(&image).unwrap();
    let after = std::fs::read(out.join("annotated.ppm")).unwrap();
    assert_eq!(before.len(), after.len());
    assert_ne!(before, after);
}

#[test]
fn exit_codes() {
    assert_eq!(aerovln(&["--help"]).status.code(), Some(0));
    assert_eq!(aerovln(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(aerovln(&["run", "--out", "x"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = aerovln(&["plan", "--episode", s(&missing), "--out", s(&dir.path().join("p.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, b"{\"instruction\": 3}").unwrap();
    let o = aerovln(&["run", "--episode", s(&bad), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("instruction"));
}

#[test]
fn api_key_is_not_a_flag() {
    let o = aerovln(&["run", "--episode", "x", "--out", "y", "--api-key", "secret"]);
    assert_eq!(o.status.code(), Some(1));
}
