//! Seeded mode-comparison experiments with synthetic participants, and
//! their statistics: performance per speed range, Welch t-tests, Bonferroni.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, BehaviorMode, RobotParams};
use crate::error::{Error, Result};
use crate::game::{GameConfig, Score, TargetSample};
use crate::simulation::{ControlInput, Rig, Simulation, TickRecord};
use crate::stats::{mean, sample_variance, student_t_two_sided_p};
use crate::synthetic_user::{user_step, UserParams, UserState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub modes: Vec<BehaviorMode>,
    pub participants: u32,
    pub trials_per_mode: u32,
    pub base_seed: u64,
    pub game: GameConfig,
    pub user: UserParams,
    pub attention: AttentionParams,
    pub robot: RobotParams,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            modes: BehaviorMode::ALL.to_vec(),
            participants: 15,
            trials_per_mode: 3,
            base_seed: 2019,
            game: GameConfig::default(),
            user: UserParams::default(),
            attention: AttentionParams::default(),
            robot: RobotParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub trial_id: u32,
    pub participant: u32,
    pub mode: BehaviorMode,
    pub repetition: u32,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one trial, a hash of the base seed, the participant and the
/// repetition. Every mode replays the same games for a given participant.
pub fn trial_seed(base_seed: u64, participant: u32, repetition: u32) -> u64 {
    let coords = ((participant as u64) << 32) | repetition as u64;
    splitmix64(splitmix64(base_seed) ^ coords)
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.participants == 0 || self.trials_per_mode == 0 {
            return Err(Error::InvalidConfig("plan needs at least one mode, participant and trial".into()));
        }
        self.user.validate()?;
        self.rig().map(|_| ())
    }

    pub fn rig(&self) -> Result<Rig> {
        Rig::new(self.game.clone(), self.attention, self.robot)
    }

    /// Trials ordered by participant, mode, repetition; ids are consecutive.
    pub fn trials(&self) -> Vec<TrialSpec> {
        let mut out = Vec::new();
        for participant in 0..self.participants {
            for &mode in &self.modes {
                for repetition in 0..self.trials_per_mode {
                    out.push(TrialSpec {
                        trial_id: out.len() as u32,
                        participant,
                        mode,
                        repetition,
                        seed: trial_seed(self.base_seed, participant, repetition),
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub spec: TrialSpec,
    pub samples: Vec<TargetSample>,
    pub score: Score,
    pub ticks: u64,
    pub untracked_ticks: u64,
}

/// Runs one trial; `observer` sees every tick record and the samples it produced.
pub fn run_trial(
    plan: &ExperimentPlan,
    rig: &Rig,
    spec: &TrialSpec,
    mut observer: impl FnMut(&TickRecord, &[TargetSample]),
) -> Result<TrialResult> {
    let mut sim = Simulation::new(rig, spec.seed, spec.trial_id, spec.mode);
    let mut user = UserState::new(spec.seed);
    let mut samples = Vec::new();
    let mut untracked_ticks = 0;
    let dt = rig.game.dt();
    while !sim.is_over(rig) {
        let out = user_step(&sim.game, sim.robot.tip, spec.mode, &rig.screen, &rig.game, &plan.user, &mut user, dt)?;
        if out.measured_gaze.is_none() {
            untracked_ticks += 1;
        }
        let input = ControlInput { handle_aim: out.handle_aim_point, gaze: out.measured_gaze, trigger: out.trigger };
        let (record, produced) = sim.step(rig, &input);
        observer(&record, &produced);
        samples.extend(produced);
    }
    Ok(TrialResult { spec: *spec, samples, score: sim.game.score, ticks: sim.game.tick, untracked_ticks })
}

/// Runs all trials of the plan in order.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<TrialResult>> {
    plan.validate()?;
    let rig = plan.rig()?;
    plan.trials().iter().map(|spec| run_trial(plan, &rig, spec, |_, _| {})).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpeedRange {
    R1,
    R2,
    R3,
}

impl SpeedRange {
    pub const ALL: [SpeedRange; 3] = [SpeedRange::R1, SpeedRange::R2, SpeedRange::R3];

    /// `[lo, hi)` for R1 and R2, `[lo, hi]` for R3, mm/s.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            SpeedRange::R1 => (70.0, 200.0),
            SpeedRange::R2 => (200.0, 330.0),
            SpeedRange::R3 => (330.0, 490.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SpeedRange::R1 => "R1",
            SpeedRange::R2 => "R2",
            SpeedRange::R3 => "R3",
        }
    }

    pub fn classify(speed: f64) -> Option<SpeedRange> {
        SpeedRange::ALL.into_iter().find(|r| {
            let (lo, hi) = r.bounds();
            speed >= lo && (speed < hi || (*r == SpeedRange::R3 && speed <= hi))
        })
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedBins<'a> {
    pub groups: [Vec<&'a TargetSample>; 3],
    pub discarded: usize,
    pub total: usize,
}

impl SpeedBins<'_> {
    pub fn discarded_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.discarded as f64 / self.total as f64
        }
    }
}

pub fn bin_by_speed(samples: &[TargetSample]) -> SpeedBins<'_> {
    let mut groups: [Vec<&TargetSample>; 3] = Default::default();
    let mut discarded = 0;
    for s in samples {
        match SpeedRange::classify(s.speed) {
            Some(r) => groups[r.index()].push(s),
            None => discarded += 1,
        }
    }
    SpeedBins { groups, discarded, total: samples.len() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    /// Both groups constant with equal means.
    EqualConstants,
    /// Both groups constant with different means.
    DistinctConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub degenerate: Option<Degenerate>,
}

/// Two-sided Welch t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    for g in [a, b] {
        if g.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: g.len() });
        }
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a) / a.len() as f64, sample_variance(b) / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            WelchResult { t: 0.0, df: f64::NAN, p: 1.0, degenerate: Some(Degenerate::EqualConstants) }
        } else {
            let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
            WelchResult { t, df: f64::NAN, p: 0.0, degenerate: Some(Degenerate::DistinctConstants) }
        });
    }
    let t = (ma - mb) / libm::sqrt(se2);
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    Ok(WelchResult { t, df, p: student_t_two_sided_p(t, df), degenerate: None })
}

pub fn bonferroni_p(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

pub fn bonferroni(p: &[Vec<f64>], m: usize) -> Vec<Vec<f64>> {
    p.iter().map(|row| row.iter().map(|&x| bonferroni_p(x, m)).collect()).collect()
}

/// Per-trial performance in each speed range (`None` without samples there).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPerformance {
    pub trial_id: u32,
    pub mode: BehaviorMode,
    pub performance: [Option<f64>; 3],
    pub counts: [usize; 3],
}

pub fn per_trial_performance(samples: &[TargetSample]) -> Vec<TrialPerformance> {
    let mut acc: BTreeMap<u32, (BehaviorMode, [usize; 3], [usize; 3])> = BTreeMap::new();
    for s in samples {
        let entry = acc.entry(s.trial_id).or_insert((s.mode, [0; 3], [0; 3]));
        if let Some(r) = SpeedRange::classify(s.speed) {
            entry.2[r.index()] += 1;
            if s.completed {
                entry.1[r.index()] += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(trial_id, (mode, done, total))| TrialPerformance {
            trial_id,
            mode,
            performance: core::array::from_fn(|i| (total[i] > 0).then(|| done[i] as f64 / total[i] as f64)),
            counts: total,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mode: BehaviorMode,
    pub mean: f64,
    pub n: usize,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    pub range: SpeedRange,
    pub cells: Vec<CellStats>,
    /// Indexed like `StatsReport::modes`; the diagonal is 1.
    pub raw_p: Vec<Vec<f64>>,
    pub corrected_p: Vec<Vec<f64>>,
}

impl RangeReport {
    pub fn cell(&self, mode: BehaviorMode) -> Option<&CellStats> {
        self.cells.iter().find(|c| c.mode == mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub modes: Vec<BehaviorMode>,
    pub comparisons: usize,
    pub ranges: Vec<RangeReport>,
    pub discarded: usize,
    pub total: usize,
    pub discarded_fraction: f64,
    pub warnings: Vec<String>,
}

impl StatsReport {
    pub fn range(&self, range: SpeedRange) -> &RangeReport {
        &self.ranges[range.index()]
    }

    pub fn corrected(&self, range: SpeedRange, a: BehaviorMode, b: BehaviorMode) -> Option<f64> {
        let i = self.modes.iter().position(|m| *m == a)?;
        let j = self.modes.iter().position(|m| *m == b)?;
        Some(self.range(range).corrected_p[i][j])
    }

    pub fn mean(&self, range: SpeedRange, mode: BehaviorMode) -> Option<f64> {
        self.range(range).cell(mode).map(|c| c.mean)
    }
}

/// Mode × range table of per-trial mean performance with pairwise
/// Bonferroni-corrected Welch tests in each range.
pub fn report(samples: &[TargetSample], modes: &[BehaviorMode]) -> Result<StatsReport> {
    let trials = per_trial_performance(samples);
    let bins = bin_by_speed(samples);
    let k = modes.len();
    let comparisons = (k * k.saturating_sub(1) / 2).max(1);
    let mut warnings = Vec::new();
    let mut ranges = Vec::new();
    for range in SpeedRange::ALL {
        let groups: Vec<Vec<f64>> = modes
            .iter()
            .map(|m| trials.iter().filter(|t| t.mode == *m).filter_map(|t| t.performance[range.index()]).collect())
            .collect();
        let mut cells = Vec::new();
        for (mode, g) in modes.iter().zip(&groups) {
            if g.len() < 2 {
                return Err(Error::InsufficientData { needed: 2, got: g.len() });
            }
            cells.push(CellStats {
                mode: *mode,
                mean: mean(g),
                n: g.len(),
                std_error: libm::sqrt(sample_variance(g) / g.len() as f64),
            });
        }
        let mut raw_p = alloc::vec![alloc::vec![1.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let w = welch_t_test(&groups[i], &groups[j])?;
                if w.degenerate == Some(Degenerate::DistinctConstants) {
                    warnings.push(alloc::format!(
                        "{}: {} vs {} have zero variance with different means; p set to 0",
                        range.label(),
                        modes[i],
                        modes[j]
                    ));
                }
                raw_p[i][j] = w.p;
                raw_p[j][i] = w.p;
            }
        }
        let corrected_p = bonferroni(&raw_p, comparisons);
        ranges.push(RangeReport { range, cells, raw_p, corrected_p });
    }
    Ok(StatsReport {
        modes: modes.to_vec(),
        comparisons,
        ranges,
        discarded: bins.discarded,
        total: bins.total,
        discarded_fraction: bins.discarded_fraction(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::TargetId;
    use approx::assert_abs_diff_eq;

    fn sample(trial_id: u32, mode: BehaviorMode, speed: f64, completed: bool) -> TargetSample {
        TargetSample { trial_id, target_id: TargetId(0), speed, mode, completed, timestamp: 0.0 }
    }

    #[test]
    fn plan_expansion() {
        let plan = ExperimentPlan::default();
        let trials = plan.trials();
        assert_eq!(trials.len(), 180);
        assert!(trials.iter().enumerate().all(|(i, t)| t.trial_id == i as u32));
        let mut seeds: Vec<u64> = trials.iter().map(|t| t.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 45);
        for t in &trials {
            assert_eq!(t.seed, trial_seed(plan.base_seed, t.participant, t.repetition));
        }
        assert_eq!(plan.trials(), trials);
    }

    #[test]
    fn speed_boundaries() {
        assert_eq!(SpeedRange::classify(200.0), Some(SpeedRange::R2));
        assert_eq!(SpeedRange::classify(199.999), Some(SpeedRange::R1));
        assert_eq!(SpeedRange::classify(330.0), Some(SpeedRange::R3));
        assert_eq!(SpeedRange::classify(490.0), Some(SpeedRange::R3));
        assert_eq!(SpeedRange::classify(70.0), Some(SpeedRange::R1));
        assert_eq!(SpeedRange::classify(500.0), None);
        assert_eq!(SpeedRange::classify(69.9), None);
    }

    #[test]
    fn bins_conserve_counts() {
        let s: Vec<_> = [50.0, 70.0, 200.0, 330.0, 490.0, 491.0]
            .iter()
            .map(|&v| sample(0, BehaviorMode::Manual, v, true))
            .collect();
        let b = bin_by_speed(&s);
        assert_eq!(b.groups.iter().map(Vec::len).sum::<usize>() + b.discarded, s.len());
        assert_eq!(b.discarded, 2);
        assert_abs_diff_eq!(b.discarded_fraction(), 2.0 / 6.0);
    }

    #[test]
    fn welch_reference_pair() {
        let a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4];
        let b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 30.0, 23.9];
        // scipy.stats.ttest_ind(a, b, equal_var=False)
        let w = welch_t_test(&a, &b).unwrap();
        assert_abs_diff_eq!(w.t, -2.835263800664482, epsilon = 1e-12);
        assert_abs_diff_eq!(w.df, 27.7136, epsilon = 1e-4);
        assert_abs_diff_eq!(w.p, 0.008452732437443437, epsilon = 1e-10);
        let r = welch_t_test(&b, &a).unwrap();
        assert_abs_diff_eq!(r.p, w.p, epsilon = 1e-15);
    }

    #[test]
    fn welch_degenerate_cases() {
        let same = welch_t_test(&[0.4, 0.6, 0.5], &[0.4, 0.6, 0.5]).unwrap();
        assert_eq!(same.t, 0.0);
        assert_abs_diff_eq!(same.p, 1.0, epsilon = 1e-12);
        let eq = welch_t_test(&[1.0, 1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!((eq.p, eq.degenerate), (1.0, Some(Degenerate::EqualConstants)));
        let ne = welch_t_test(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((ne.p, ne.degenerate), (0.0, Some(Degenerate::DistinctConstants)));
        assert!(welch_t_test(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        assert_abs_diff_eq!(bonferroni_p(0.01, 6), 0.06, epsilon = 1e-15);
        assert_eq!(bonferroni_p(0.5, 6), 1.0);
        assert_eq!(bonferroni_p(0.0123, 1), 0.0123);
    }

    #[test]
    fn identical_modes_have_unit_p() {
        let mut s = Vec::new();
        for trial in 0..6u32 {
            let mode = if trial % 2 == 0 { BehaviorMode::Manual } else { BehaviorMode::Slave };
            let k = trial / 2;
            for (i, v) in [100.0, 250.0, 400.0].iter().enumerate() {
                for j in 0..4 {
                    s.push(sample(trial, mode, *v, !(j + i as u32 + k).is_multiple_of(3)));
                }
            }
        }
        let r = report(&s, &[BehaviorMode::Manual, BehaviorMode::Slave]).unwrap();
        for range in SpeedRange::ALL {
            assert_eq!(r.corrected(range, BehaviorMode::Manual, BehaviorMode::Slave), Some(1.0));
        }
        assert_eq!(r.comparisons, 1);
    }

    #[test]
    fn empty_mode_is_insufficient() {
        let s: Vec<_> = (0..4).map(|t| sample(t, BehaviorMode::Manual, 100.0, true)).collect();
        assert!(matches!(
            report(&s, &[BehaviorMode::Manual, BehaviorMode::Autonomous]),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn zero_duration_trial() {
        let plan = ExperimentPlan {
            participants: 1,
            trials_per_mode: 1,
            modes: alloc::vec![BehaviorMode::Manual],
            game: GameConfig { trial_duration: 0.0, ..GameConfig::default() },
            ..ExperimentPlan::default()
        };
        let r = run_experiment(&plan).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].samples.is_empty());
        assert_eq!(r[0].ticks, 0);
    }

    #[test]
    fn single_trial_reproducible() {
        let plan = ExperimentPlan {
            participants: 1,
            trials_per_mode: 1,
            modes: alloc::vec![BehaviorMode::Cooperative],
            game: GameConfig { trial_duration: 20.0, ..GameConfig::default() },
            ..ExperimentPlan::default()
        };
        let a = run_experiment(&plan).unwrap();
        let b = run_experiment(&plan).unwrap();
        assert_eq!(a, b);
        assert!(!a[0].samples.is_empty());
    }
}
