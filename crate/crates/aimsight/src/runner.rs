//! Parallel execution of an experiment plan and its output files.
//!
//! Trials run on the rayon pool; results come back in trial-id order, so
//! every output is independent of the thread count.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use aimsight_core::experiment::{report, run_trial, ExperimentPlan, SpeedRange, StatsReport, TrialResult, TrialSpec};
use aimsight_core::simulation::Rig;
use anyhow::Context;
use rayon::prelude::*;

use crate::trial_log::{write_samples, LogHeader, LogWriter, LOG_VERSION};

pub fn log_header(rig: &Rig, spec: &TrialSpec, source: &str) -> LogHeader {
    LogHeader {
        v: LOG_VERSION,
        seed: spec.seed,
        trial_id: spec.trial_id,
        mode: spec.mode,
        source: source.into(),
        game: rig.game.clone(),
        attention: rig.attention,
        robot: rig.robot,
    }
}

/// Runs one trial and returns it with its JSONL log.
pub fn run_trial_logged(plan: &ExperimentPlan, rig: &Rig, spec: &TrialSpec) -> anyhow::Result<(TrialResult, Vec<u8>)> {
    let mut writer = LogWriter::new(Vec::new(), log_header(rig, spec, "headless"))?;
    let mut failure = None;
    let result = run_trial(plan, rig, spec, |record, samples| {
        if failure.is_none() {
            failure = writer.tick(record, samples).err();
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let bytes = writer.finish(result.score, result.ticks)?;
    Ok((result, bytes))
}

pub fn run_plan(plan: &ExperimentPlan) -> anyhow::Result<Vec<TrialResult>> {
    plan.validate()?;
    let rig = plan.rig()?;
    let trials = plan.trials();
    trials.par_iter().map(|spec| Ok(run_trial(plan, &rig, spec, |_, _| {})?)).collect()
}

/// Like [`run_plan`], also writing `trial_NNNN.jsonl` logs into `log_dir`.
pub fn run_plan_logged(plan: &ExperimentPlan, log_dir: &Path) -> anyhow::Result<Vec<TrialResult>> {
    plan.validate()?;
    let rig = plan.rig()?;
    fs::create_dir_all(log_dir)?;
    plan.trials()
        .par_iter()
        .map(|spec| {
            let (result, bytes) = run_trial_logged(plan, &rig, spec)?;
            let path = log_dir.join(format!("trial_{:04}.jsonl", spec.trial_id));
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            Ok(result)
        })
        .collect()
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

/// Writes `samples.jsonl`, `trials.csv`, `report.csv`, `pvalues_R{1,2,3}.csv`,
/// `report.json` and the effective `plan.toml`.
pub fn write_outputs(dir: &Path, plan: &ExperimentPlan, results: &[TrialResult]) -> anyhow::Result<StatsReport> {
    fs::create_dir_all(dir)?;
    let samples: Vec<_> = results.iter().flat_map(|r| r.samples.iter().cloned()).collect();
    write_samples(create(dir, "samples.jsonl")?, &samples)?;

    let mut trials = csv::Writer::from_writer(create(dir, "trials.csv")?);
    trials.write_record(["trial_id", "participant", "mode", "repetition", "seed", "completed", "failed", "untracked_ticks"])?;
    for r in results {
        let s = &r.spec;
        trials.write_record([
            s.trial_id.to_string(),
            s.participant.to_string(),
            s.mode.to_string(),
            s.repetition.to_string(),
            s.seed.to_string(),
            r.score.completed.to_string(),
            r.score.failed.to_string(),
            r.untracked_ticks.to_string(),
        ])?;
    }
    trials.flush()?;

    let stats = report(&samples, &plan.modes)?;
    let mut means = csv::Writer::from_writer(create(dir, "report.csv")?);
    let mut head = vec!["mode".to_string()];
    head.extend(SpeedRange::ALL.iter().map(|r| r.label().to_string()));
    means.write_record(&head)?;
    for mode in &plan.modes {
        let mut row = vec![mode.to_string()];
        row.extend(SpeedRange::ALL.iter().map(|r| stats.mean(*r, *mode).map_or(String::new(), |m| m.to_string())));
        means.write_record(&row)?;
    }
    means.flush()?;

    for range in SpeedRange::ALL {
        let table = stats.range(range);
        let mut w = csv::Writer::from_writer(create(dir, &format!("pvalues_{}.csv", range.label()))?);
        w.write_record(["mode_a", "mode_b", "mean_a", "mean_b", "p", "p_corrected"])?;
        for i in 0..stats.modes.len() {
            for j in i + 1..stats.modes.len() {
                w.write_record([
                    stats.modes[i].to_string(),
                    stats.modes[j].to_string(),
                    table.cells[i].mean.to_string(),
                    table.cells[j].mean.to_string(),
                    table.raw_p[i][j].to_string(),
                    table.corrected_p[i][j].to_string(),
                ])?;
            }
        }
        w.flush()?;
    }

    let mut json = create(dir, "report.json")?;
    serde_json::to_writer_pretty(&mut json, &stats)?;
    json.flush()?;
    fs::write(dir.join("plan.toml"), crate::config::to_toml(plan)?)?;
    Ok(stats)
}

/// Plain-text mode × range table with corrected p-values.
pub fn summary_table(stats: &StatsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<12}", "mode"));
    for r in SpeedRange::ALL {
        out.push_str(&format!("{:>8}", r.label()));
    }
    out.push('\n');
    for mode in &stats.modes {
        out.push_str(&format!("{:<12}", mode.to_string()));
        for r in SpeedRange::ALL {
            out.push_str(&stats.mean(r, *mode).map_or(format!("{:>8}", "-"), |m| format!("{m:>8.3}")));
        }
        out.push('\n');
    }
    for r in SpeedRange::ALL {
        out.push_str(&format!("{} corrected p:", r.label()));
        for i in 0..stats.modes.len() {
            for j in i + 1..stats.modes.len() {
                let p = stats.range(r).corrected_p[i][j];
                out.push_str(&format!(" {}/{} {p:.4}", stats.modes[i], stats.modes[j]));
            }
        }
        out.push('\n');
    }
    for w in &stats.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}
