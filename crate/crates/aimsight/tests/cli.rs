use std::path::Path;
use std::process::{Command, Output};

fn aimsight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aimsight")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn generate_then_fit_gaze() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("obs.csv");
    ok(&aimsight(&["generate-gaze", "--out", csv.to_str().unwrap(), "--looking", "600", "--pointing", "60", "--seed", "4"]));
    let header = std::fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "delta_phi_deg,error_deg,tracked,phase");

    let report: serde_json::Value = serde_json::from_str(&ok(&aimsight(&["fit-gaze", csv.to_str().unwrap(), "--seed", "3", "--folds", "5"]))).unwrap();
    for key in ["error_model", "pointing_error", "logistic", "threshold", "trackability", "trackable_limit_deg", "error_at_limit_deg"] {
        assert!(!report[key].is_null(), "{key} missing: {report}");
    }
    let b1 = report["trackability"]["beta1"].as_f64().unwrap();
    assert!(b1 < 0.0);
    let again = ok(&aimsight(&["fit-gaze", csv.to_str().unwrap(), "--seed", "3", "--folds", "5"]));
    assert_eq!(serde_json::from_str::<serde_json::Value>(&again).unwrap(), report);
}

#[test]
fn fit_gaze_reports_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "delta_phi_deg,error_deg,tracked,phase\n3,,true,looking\n").unwrap();
    let out = aimsight(&["fit-gaze", csv.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

fn write_plan(dir: &Path) -> std::path::PathBuf {
    let plan = dir.join("plan.toml");
    std::fs::write(&plan, "participants = 2\ntrials_per_mode = 1\nbase_seed = 5\n[game]\ntrial_duration = 30.0\n").unwrap();
    plan
}

#[test]
fn experiment_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path());
    let out = dir.path().join("out");
    let table = ok(&aimsight(&["experiment", "--plan", plan.to_str().unwrap(), "--out", out.to_str().unwrap(), "--logs"]));
    assert!(table.contains("cooperative"));
    for name in ["samples.jsonl", "report.csv", "pvalues_R1.csv", "pvalues_R2.csv", "pvalues_R3.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let log = out.join("logs/trial_0003.jsonl");
    let replayed = dir.path().join("replayed.jsonl");
    let text = ok(&aimsight(&["replay", log.to_str().unwrap(), "--samples", replayed.to_str().unwrap()]));
    assert!(text.contains("replay matches"), "{text}");

    let all = std::fs::read_to_string(out.join("samples.jsonl")).unwrap();
    let mine: String = all.lines().filter(|l| l.starts_with("{\"trial_id\":3,")).map(|l| format!("{l}\n")).collect();
    assert_eq!(std::fs::read_to_string(replayed).unwrap(), mine);
}

#[test]
fn replay_flags_tampered_log() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path());
    let out = dir.path().join("out");
    ok(&aimsight(&["experiment", "--plan", plan.to_str().unwrap(), "--out", out.to_str().unwrap(), "--logs"]));
    let log = out.join("logs/trial_0000.jsonl");
    let text = std::fs::read_to_string(&log).unwrap().replace("\"trigger\":true", "\"trigger\":false");
    std::fs::write(&log, text).unwrap();
    let res = aimsight(&["replay", log.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("DIFFERS"));
}

#[test]
fn defaults_parse_back() {
    let text = ok(&aimsight(&["defaults", "session"]));
    let config: aimsight::realtime::SessionConfig = aimsight::config::from_toml(&text).unwrap();
    assert_eq!(config, aimsight::realtime::SessionConfig::default());
    let text = ok(&aimsight(&["defaults", "plan"]));
    assert!(text.contains("participants = 15"));
}

#[test]
fn serve_rejects_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("session.toml");
    std::fs::write(&config, "snapshot_rate = 120.0\n").unwrap();
    let out = aimsight(&["serve", "--port", "0", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("snapshot rate"));
}
