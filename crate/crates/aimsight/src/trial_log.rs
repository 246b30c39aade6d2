//! JSONL trial logs, shared by headless trials and live sessions.
//!
//! One record per line, tagged by `record`:
//! - `header`: schema version `v`, seed, trial id, mode and the full rig configuration
//! - `tick`: one [`TickRecord`] (the tick index plus every game input)
//! - `sample`: one [`TargetSample`], same field names
//! - `end`: final score and tick count
//!
//! Replaying the game from the `tick` records reproduces the samples and the
//! score exactly.

use std::io::{BufRead, Write};

use aimsight_core::attention::{AttentionParams, BehaviorMode, RobotParams};
use aimsight_core::game::{GameConfig, Score, TargetSample};
use aimsight_core::simulation::{replay_game, TickRecord};
use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub v: u32,
    pub seed: u64,
    pub trial_id: u32,
    pub mode: BehaviorMode,
    /// `headless` or `live`.
    pub source: String,
    pub game: GameConfig,
    pub attention: AttentionParams,
    pub robot: RobotParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    Tick(TickRecord),
    Sample(TargetSample),
    End { score: Score, ticks: u64 },
}

pub struct LogWriter<W: Write> {
    out: W,
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W, header: LogHeader) -> anyhow::Result<Self> {
        let mut w = Self { out };
        w.write(&LogRecord::Header(header))?;
        Ok(w)
    }

    pub fn write(&mut self, record: &LogRecord) -> anyhow::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn tick(&mut self, record: &TickRecord, samples: &[TargetSample]) -> anyhow::Result<()> {
        self.write(&LogRecord::Tick(record.clone()))?;
        for s in samples {
            self.write(&LogRecord::Sample(s.clone()))?;
        }
        Ok(())
    }

    pub fn finish(mut self, score: Score, ticks: u64) -> anyhow::Result<W> {
        self.write(&LogRecord::End { score, ticks })?;
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    pub samples: Vec<TargetSample>,
    pub end: Option<(Score, u64)>,
}

pub fn read_log(input: impl BufRead) -> anyhow::Result<TrialLog> {
    let mut header = None;
    let mut ticks = Vec::new();
    let mut samples = Vec::new();
    let mut end = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = serde_json::from_str(&line).with_context(|| format!("log line {}", i + 1))?;
        match record {
            LogRecord::Header(h) if header.is_none() && i == 0 => {
                if h.v != LOG_VERSION {
                    bail!("unsupported log version {}", h.v);
                }
                header = Some(h);
            }
            LogRecord::Header(_) => bail!("log line {}: header must be the first record", i + 1),
            _ if header.is_none() => bail!("log does not start with a header"),
            LogRecord::Tick(t) => {
                if t.tick != ticks.len() as u64 {
                    bail!("log line {}: expected tick {}, found {}", i + 1, ticks.len(), t.tick);
                }
                ticks.push(t);
            }
            LogRecord::Sample(s) => samples.push(s),
            LogRecord::End { score, ticks } => end = Some((score, ticks)),
        }
    }
    let header = header.context("empty log")?;
    Ok(TrialLog { header, ticks, samples, end })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub samples: Vec<TargetSample>,
    pub score: Score,
    /// Replayed samples and score equal the logged ones.
    pub matches: bool,
}

pub fn replay(log: &TrialLog) -> ReplayOutcome {
    let h = &log.header;
    let inputs: Vec<_> = log.ticks.iter().map(TickRecord::game_input).collect();
    let (game, samples) = replay_game(&h.game, h.seed, h.trial_id, h.mode, &inputs);
    let score_ok = match log.end {
        Some((score, ticks)) => score == game.score && ticks == game.tick,
        None => log.ticks.last().is_none_or(|t| t.score == game.score),
    };
    let matches = score_ok && samples == log.samples;
    ReplayOutcome { samples, score: game.score, matches }
}

/// One `TargetSample` per line.
pub fn write_samples(mut out: impl Write, samples: &[TargetSample]) -> anyhow::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples(input: impl BufRead) -> anyhow::Result<Vec<TargetSample>> {
    input
        .lines()
        .filter(|l| !l.as_ref().is_ok_and(|l| l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use aimsight_core::experiment::{run_trial, ExperimentPlan};

    fn logged_trial(duration: f64) -> Vec<u8> {
        let plan = ExperimentPlan {
            game: GameConfig { trial_duration: duration, ..GameConfig::default() },
            ..ExperimentPlan::default()
        };
        let rig = plan.rig().unwrap();
        let spec = plan.trials()[7];
        let header = LogHeader {
            v: LOG_VERSION,
            seed: spec.seed,
            trial_id: spec.trial_id,
            mode: spec.mode,
            source: "headless".into(),
            game: rig.game.clone(),
            attention: rig.attention.clone(),
            robot: rig.robot.clone(),
        };
        let mut w = LogWriter::new(Vec::new(), header).unwrap();
        let mut failed = None;
        let result = run_trial(&plan, &rig, &spec, |r, s| {
            if let Err(e) = w.tick(r, s) {
                failed.get_or_insert(e);
            }
        })
        .unwrap();
        assert!(failed.is_none());
        w.finish(result.score, result.ticks).unwrap()
    }

    #[test]
    fn log_replays_exactly() {
        let bytes = logged_trial(20.0);
        let log = read_log(bytes.as_slice()).unwrap();
        assert_eq!(log.ticks.len(), 1200);
        assert!(!log.samples.is_empty());
        let out = replay(&log);
        assert!(out.matches);
    }

    #[test]
    fn tampered_log_is_detected() {
        let bytes = logged_trial(20.0);
        let mut log = read_log(bytes.as_slice()).unwrap();
        for t in &mut log.ticks {
            t.trigger = false;
            t.laser_override = false;
        }
        assert!(!replay(&log).matches);
    }

    #[test]
    fn header_must_come_first() {
        let bytes = logged_trial(1.0);
        let text = String::from_utf8(bytes).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(0, 1);
        assert!(read_log(lines.join("\n").as_bytes()).is_err());
    }

    #[test]
    fn sample_lines_use_sample_field_names() {
        let bytes = logged_trial(20.0);
        let text = String::from_utf8(bytes).unwrap();
        let line = text.lines().find(|l| l.contains("\"record\":\"sample\"")).unwrap();
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["trial_id", "target_id", "speed", "mode", "completed", "timestamp"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }

    #[test]
    fn samples_round_trip_bit_exact() {
        let log = read_log(logged_trial(20.0).as_slice()).unwrap();
        let mut buf = Vec::new();
        write_samples(&mut buf, &log.samples).unwrap();
        let back = read_samples(buf.as_slice()).unwrap();
        assert_eq!(back, log.samples);
        for (a, b) in back.iter().zip(&log.samples) {
            assert_eq!(a.speed.to_bits(), b.speed.to_bits());
            assert_eq!(a.timestamp.to_bits(), b.timestamp.to_bits());
        }
    }
}
