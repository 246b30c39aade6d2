use std::fs;

use aimsight::runner::{run_plan, run_plan_logged, write_outputs};
use aimsight::trial_log::{read_log, read_samples, replay};
use aimsight_core::experiment::{run_experiment, ExperimentPlan};
use aimsight_core::game::GameConfig;

fn small_plan() -> ExperimentPlan {
    ExperimentPlan {
        participants: 3,
        trials_per_mode: 1,
        base_seed: 77,
        game: GameConfig { trial_duration: 30.0, ..GameConfig::default() },
        ..ExperimentPlan::default()
    }
}

#[test]
fn outputs_have_expected_shape() {
    let plan = small_plan();
    let dir = tempfile::tempdir().unwrap();
    let results = run_plan(&plan).unwrap();
    write_outputs(dir.path(), &plan, &results).unwrap();

    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "mode,R1,R2,R3");
    let modes: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(modes, ["manual", "slave", "autonomous", "cooperative"]);

    for r in ["R1", "R2", "R3"] {
        let text = fs::read_to_string(dir.path().join(format!("pvalues_{r}.csv"))).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["mode_a", "mode_b", "mean_a", "mean_b", "p", "p_corrected"]);
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 6);
        for row in rows {
            let p: f64 = row[4].parse().unwrap();
            let pc: f64 = row[5].parse().unwrap();
            assert!(pc >= p && pc <= 1.0);
        }
    }

    let samples = read_samples(fs::File::open(dir.path().join("samples.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    let total: usize = results.iter().map(|r| r.samples.len()).sum();
    assert_eq!(samples.len(), total);

    let trials = fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + plan.trials().len());
    let echoed: ExperimentPlan = aimsight::config::from_toml(&fs::read_to_string(dir.path().join("plan.toml")).unwrap()).unwrap();
    assert_eq!(echoed, plan);
}

#[test]
fn samples_file_is_byte_identical_across_runs_and_thread_counts() {
    let plan = small_plan();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_outputs(a.path(), &plan, &run_plan(&plan).unwrap()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let single = pool.install(|| run_plan(&plan).unwrap());
    assert_eq!(single, run_experiment(&plan).unwrap());
    write_outputs(b.path(), &plan, &single).unwrap();
    for name in ["samples.jsonl", "report.csv", "pvalues_R1.csv", "pvalues_R2.csv", "pvalues_R3.csv", "trials.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn every_trial_log_replays() {
    let plan = ExperimentPlan { participants: 1, ..small_plan() };
    let dir = tempfile::tempdir().unwrap();
    let results = run_plan_logged(&plan, dir.path()).unwrap();
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), results.len());
    for r in &results {
        let path = dir.path().join(format!("trial_{:04}.jsonl", r.spec.trial_id));
        let log = read_log(std::io::BufReader::new(fs::File::open(path).unwrap())).unwrap();
        assert_eq!(log.header.seed, r.spec.seed);
        assert_eq!(log.samples, r.samples);
        let out = replay(&log);
        assert!(out.matches);
        assert_eq!(out.score, r.score);
    }
}

#[test]
fn invalid_plan_is_rejected() {
    let plan = ExperimentPlan { participants: 0, ..small_plan() };
    assert!(run_plan(&plan).is_err());
}
