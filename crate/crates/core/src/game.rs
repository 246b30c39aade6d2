//! The falling-target validation game.
//!
//! Screen coordinates are millimetres from the screen centre, `x` to the
//! right and `y` up. Targets enter at the upper edge and fall at constant
//! speed towards the bottom line. A virtual laser at the tool tip stops task
//! targets after a speed-dependent lasing time; distractors cannot be stopped.

use alloc::vec::Vec;

use libm::sqrt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::attention::BehaviorMode;
use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetId(pub u32);

impl core::fmt::Display for TargetId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Task,
    Distractor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetState {
    Falling,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    TriangleFormation,
    LineFormation,
    Overtake,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] =
        [ScenarioKind::TriangleFormation, ScenarioKind::LineFormation, ScenarioKind::Overtake];
}

/// Mean number of task targets per scripted scenario (3, 4 and 2, equally likely).
pub const MEAN_SCENARIO_SIZE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpawnOrigin {
    Random,
    Scenario(ScenarioKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: TargetId,
    pub kind: TargetKind,
    pub position: Vec2,
    /// Downward speed, mm/s.
    pub speed: f64,
    pub required_lase_time: f64,
    pub accumulated_lase: f64,
    pub state: TargetState,
    pub origin: SpawnOrigin,
}

impl Target {
    pub fn is_open_task(&self) -> bool {
        self.kind == TargetKind::Task && self.state == TargetState::Falling
    }

    pub fn remaining_lase(&self) -> f64 {
        (self.required_lase_time - self.accumulated_lase).max(0.0)
    }

    /// Seconds until the target crosses `bottom_y`.
    pub fn time_to_bottom(&self, bottom_y: f64) -> f64 {
        ((self.position.y - bottom_y) / self.speed).max(0.0)
    }

    pub fn progress(&self) -> f64 {
        if self.required_lase_time > 0.0 {
            self.accumulated_lase / self.required_lase_time
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameConfig {
    pub screen_width: f64,
    pub screen_height: f64,
    /// Seconds; zero is allowed and yields an empty trial.
    pub trial_duration: f64,
    pub tick_rate: f64,
    /// The laser only reaches targets strictly closer than this to the tip, mm.
    pub laser_range: f64,
    pub target_radius: f64,
    /// Mean seconds between task targets.
    pub task_spawn_interval: f64,
    /// Mean seconds between distractors.
    pub distractor_spawn_interval: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Lasing time at `lase_ref_speed`; scales inversely with speed.
    pub lase_ref_time: f64,
    pub lase_ref_speed: f64,
    pub lase_min_time: f64,
    pub lase_max_time: f64,
    /// Share of task targets that belong to scripted scenarios.
    pub scenario_fraction: f64,
}

/// Width and height of a 16:9 screen with the given diagonal.
pub fn screen_size_from_diagonal(diagonal: f64) -> (f64, f64) {
    let unit = diagonal / sqrt(16.0 * 16.0 + 9.0 * 9.0);
    (16.0 * unit, 9.0 * unit)
}

impl Default for GameConfig {
    fn default() -> Self {
        let (w, h) = screen_size_from_diagonal(1050.0);
        Self {
            screen_width: w,
            screen_height: h,
            trial_duration: 80.0,
            tick_rate: 60.0,
            laser_range: 100.0,
            target_radius: 30.0,
            task_spawn_interval: 2.2,
            distractor_spawn_interval: 3.0,
            speed_min: 70.0,
            speed_max: 490.0,
            lase_ref_time: 1.2,
            lase_ref_speed: 200.0,
            lase_min_time: 0.3,
            lase_max_time: 2.0,
            scenario_fraction: 0.5,
        }
    }
}

impl GameConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    pub fn top_y(&self) -> f64 {
        0.5 * self.screen_height
    }

    pub fn bottom_y(&self) -> f64 {
        -0.5 * self.screen_height
    }

    pub fn total_ticks(&self) -> u64 {
        (self.trial_duration * self.tick_rate + 1e-9) as u64
    }

    /// Usable spawn column range, keeping whole targets on screen.
    pub fn spawn_x_range(&self) -> (f64, f64) {
        let half = 0.5 * self.screen_width - self.target_radius;
        (-half, half)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("screen_width", self.screen_width),
            ("screen_height", self.screen_height),
            ("tick_rate", self.tick_rate),
            ("laser_range", self.laser_range),
            ("target_radius", self.target_radius),
            ("task_spawn_interval", self.task_spawn_interval),
            ("distractor_spawn_interval", self.distractor_spawn_interval),
            ("speed_min", self.speed_min),
            ("lase_ref_time", self.lase_ref_time),
            ("lase_ref_speed", self.lase_ref_speed),
            ("lase_min_time", self.lase_min_time),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(alloc::format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.trial_duration >= 0.0 && self.trial_duration.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "trial_duration must be non-negative, got {}",
                self.trial_duration
            )));
        }
        if !(self.speed_max >= self.speed_min) {
            return Err(Error::InvalidConfig("speed_max must be at least speed_min".into()));
        }
        if !(self.lase_max_time >= self.lase_min_time) {
            return Err(Error::InvalidConfig("lase_max_time must be at least lase_min_time".into()));
        }
        if !(0.0..=1.0).contains(&self.scenario_fraction) {
            return Err(Error::InvalidConfig(alloc::format!(
                "scenario_fraction must lie in [0, 1], got {}",
                self.scenario_fraction
            )));
        }
        if self.spawn_x_range().0 >= self.spawn_x_range().1 {
            return Err(Error::InvalidConfig("targets do not fit across the screen".into()));
        }
        // τ(v)·v is non-decreasing in v, so the fastest target is the binding case.
        let v = self.speed_max;
        if required_lase_time(v, self) * v > self.screen_height {
            return Err(Error::InvalidConfig(alloc::format!(
                "lasing time {:.3} s at {v} mm/s exceeds the fall time {:.3} s",
                required_lase_time(v, self),
                self.screen_height / v
            )));
        }
        Ok(())
    }
}

/// Lasing time needed to stop a target: `τ_ref · v_ref / v`, clamped.
pub fn required_lase_time(speed: f64, config: &GameConfig) -> f64 {
    debug_assert!(speed > 0.0);
    (config.lase_ref_time * config.lase_ref_speed / speed).clamp(config.lase_min_time, config.lase_max_time)
}

/// One scripted spawn, relative to the scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedSpawn {
    pub delay: f64,
    pub x: f64,
    pub speed: f64,
}

const FORMATION_SPACING: f64 = 140.0;
const TRIANGLE_HEIGHT: f64 = 110.0;

/// Generates the spawn script of a challenge scenario.
pub fn scenario_generate<R: Rng + ?Sized>(kind: ScenarioKind, rng: &mut R, config: &GameConfig) -> Vec<ScriptedSpawn> {
    let (x_lo, x_hi) = config.spawn_x_range();
    let usable = x_hi - x_lo;
    match kind {
        ScenarioKind::LineFormation => {
            let n: usize = rng.random_range(3..=5);
            let spacing = FORMATION_SPACING.min(usable / (n - 1) as f64);
            let span = spacing * (n - 1) as f64;
            let start = rng.random_range(x_lo..=x_hi - span);
            let speed = rng.random_range(config.speed_min..=config.speed_max);
            (0..n).map(|i| ScriptedSpawn { delay: 0.0, x: start + i as f64 * spacing, speed }).collect()
        }
        ScenarioKind::TriangleFormation => {
            let half = (0.5 * FORMATION_SPACING).min(0.5 * usable);
            let centre = rng.random_range(x_lo + half..=x_hi - half);
            let speed = rng.random_range(config.speed_min..=config.speed_max);
            alloc::vec![
                ScriptedSpawn { delay: 0.0, x: centre - half, speed },
                ScriptedSpawn { delay: 0.0, x: centre + half, speed },
                // Apex enters later, so it trails above the base.
                ScriptedSpawn { delay: TRIANGLE_HEIGHT / speed, x: centre, speed },
            ]
        }
        ScenarioKind::Overtake => {
            let slow_hi = (config.speed_min + 130.0).min(0.5 * (config.speed_min + config.speed_max));
            let slow = rng.random_range(config.speed_min..=slow_hi);
            let fast_lo = (slow + 150.0).min(config.speed_max);
            let fast = rng.random_range(fast_lo..=config.speed_max);
            let x = rng.random_range(x_lo..=x_hi);
            // The fast target catches up at v_f·Δ/(v_f − v_s); keep that before the
            // slow one's bottom arrival H/v_s.
            let max_delay = config.screen_height * (fast - slow) / (fast * slow);
            let delay = rng.random_range(0.3..=0.7) * max_delay;
            alloc::vec![
                ScriptedSpawn { delay: 0.0, x, speed: slow },
                ScriptedSpawn { delay, x, speed: fast },
            ]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PendingSpawn {
    at: f64,
    seq: u64,
    x: f64,
    speed: f64,
    kind: TargetKind,
    origin: SpawnOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Spawner {
    next_task_event: f64,
    next_distractor: f64,
    pending: Vec<PendingSpawn>,
    seq: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub completed: u32,
    pub failed: u32,
    /// Task targets spawned so far.
    pub total_spawned: u32,
    pub distractors_spawned: u32,
}

/// Emitted once per task target when it is completed or reaches the bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSample {
    pub trial_id: u32,
    pub target_id: TargetId,
    pub speed: f64,
    pub mode: BehaviorMode,
    pub completed: bool,
    pub timestamp: f64,
}

/// Controls applied to the game for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickInput {
    pub tip: Vec2,
    pub trigger: bool,
    pub laser_override: bool,
    pub locked_target: Option<TargetId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameState {
    pub tick: u64,
    pub time: f64,
    pub targets: Vec<Target>,
    pub score: Score,
    /// Target hit by the laser during the last tick.
    pub lased_target: Option<TargetId>,
    pub trial_id: u32,
    pub mode: BehaviorMode,
    next_id: u32,
    spawner: Spawner,
    rng: ChaCha8Rng,
}

impl GameState {
    pub fn new(config: &GameConfig, seed: u64, trial_id: u32, mode: BehaviorMode) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let event_rate = task_event_rate(config);
        let next_task_event = Exp::new(event_rate).map(|d| d.sample(&mut rng)).unwrap_or(f64::INFINITY);
        let next_distractor = Exp::new(1.0 / config.distractor_spawn_interval)
            .map(|d| d.sample(&mut rng))
            .unwrap_or(f64::INFINITY);
        Self {
            tick: 0,
            time: 0.0,
            targets: Vec::new(),
            score: Score::default(),
            lased_target: None,
            trial_id,
            mode,
            next_id: 0,
            spawner: Spawner { next_task_event, next_distractor, pending: Vec::new(), seq: 0 },
            rng,
        }
    }

    pub fn target(&self, id: TargetId) -> Option<&Target> {
        self.targets.iter().find(|t| t.id == id)
    }

    pub fn open_tasks(&self) -> impl Iterator<Item = &Target> {
        self.targets.iter().filter(|t| t.is_open_task())
    }

    pub fn falling_task_count(&self) -> u32 {
        self.open_tasks().count() as u32
    }

    pub fn is_over(&self, config: &GameConfig) -> bool {
        self.tick >= config.total_ticks()
    }

    /// Runs the spawn processes up to the current time and materializes due
    /// targets at the upper edge. Returns the ids of the new targets.
    pub fn spawn_step(&mut self, config: &GameConfig) -> Vec<TargetId> {
        let p_scenario = scenario_event_probability(config.scenario_fraction);
        if let Ok(gap) = Exp::new(task_event_rate(config)) {
            while self.spawner.next_task_event <= self.time {
                let at = self.spawner.next_task_event;
                if self.rng.random_bool(p_scenario) {
                    let kind = ScenarioKind::ALL[self.rng.random_range(0..ScenarioKind::ALL.len())];
                    for s in scenario_generate(kind, &mut self.rng, config) {
                        self.queue(at + s.delay, s.x, s.speed, TargetKind::Task, SpawnOrigin::Scenario(kind));
                    }
                } else {
                    let (x, speed) = self.random_column(config);
                    self.queue(at, x, speed, TargetKind::Task, SpawnOrigin::Random);
                }
                self.spawner.next_task_event = at + gap.sample(&mut self.rng);
            }
        }
        if let Ok(gap) = Exp::new(1.0 / config.distractor_spawn_interval) {
            while self.spawner.next_distractor <= self.time {
                let at = self.spawner.next_distractor;
                let (x, speed) = self.random_column(config);
                self.queue(at, x, speed, TargetKind::Distractor, SpawnOrigin::Random);
                self.spawner.next_distractor = at + gap.sample(&mut self.rng);
            }
        }

        let now = self.time;
        let mut due: Vec<PendingSpawn> = Vec::new();
        self.spawner.pending.retain(|p| {
            if p.at <= now {
                due.push(*p);
                false
            } else {
                true
            }
        });
        due.sort_by(|a, b| a.at.total_cmp(&b.at).then(a.seq.cmp(&b.seq)));
        due.into_iter()
            .map(|p| {
                let id = TargetId(self.next_id);
                self.next_id += 1;
                let required = match p.kind {
                    TargetKind::Task => {
                        self.score.total_spawned += 1;
                        required_lase_time(p.speed, config)
                    }
                    TargetKind::Distractor => {
                        self.score.distractors_spawned += 1;
                        0.0
                    }
                };
                self.targets.push(Target {
                    id,
                    kind: p.kind,
                    position: Vec2::new(p.x, config.top_y()),
                    speed: p.speed,
                    required_lase_time: required,
                    accumulated_lase: 0.0,
                    state: TargetState::Falling,
                    origin: p.origin,
                });
                id
            })
            .collect()
    }

    fn random_column(&mut self, config: &GameConfig) -> (f64, f64) {
        let (lo, hi) = config.spawn_x_range();
        let x = self.rng.random_range(lo..=hi);
        let speed = self.rng.random_range(config.speed_min..=config.speed_max);
        (x, speed)
    }

    fn queue(&mut self, at: f64, x: f64, speed: f64, kind: TargetKind, origin: SpawnOrigin) {
        let seq = self.spawner.seq;
        self.spawner.seq += 1;
        self.spawner.pending.push(PendingSpawn { at, seq, x, speed, kind, origin });
    }

    /// Index of the target the laser would hit from `tip` this tick.
    fn laser_target(&self, input: &TickInput, config: &GameConfig) -> Option<usize> {
        let in_range = |t: &Target| t.is_open_task() && (t.position - input.tip).norm() < config.laser_range;
        match input.locked_target {
            Some(id) => self.targets.iter().position(|t| t.id == id && in_range(t)),
            None => self
                .targets
                .iter()
                .enumerate()
                .filter(|(_, t)| in_range(t))
                .min_by(|(_, a), (_, b)| {
                    let da = (a.position - input.tip).norm();
                    let db = (b.position - input.tip).norm();
                    da.total_cmp(&db).then(a.id.cmp(&b.id))
                })
                .map(|(i, _)| i),
        }
    }

    /// Advances one fixed step: spawn, lase, fall. Returns the outcome samples
    /// of task targets that completed or failed during the step.
    pub fn tick(&mut self, input: &TickInput, config: &GameConfig) -> Vec<TargetSample> {
        let dt = config.dt();
        let end_time = (self.tick + 1) as f64 * dt;
        let mut samples = Vec::new();
        self.spawn_step(config);

        self.lased_target = None;
        if input.trigger || input.laser_override {
            if let Some(i) = self.laser_target(input, config) {
                let t = &mut self.targets[i];
                t.accumulated_lase = (t.accumulated_lase + dt).min(t.required_lase_time);
                self.lased_target = Some(t.id);
                if t.accumulated_lase >= t.required_lase_time - 1e-9 {
                    t.accumulated_lase = t.required_lase_time;
                    t.state = TargetState::Completed;
                    self.score.completed += 1;
                    samples.push(self.sample(i, true, end_time));
                }
            }
        }

        let bottom = config.bottom_y();
        for i in 0..self.targets.len() {
            if self.targets[i].state != TargetState::Falling {
                continue;
            }
            let t = &mut self.targets[i];
            t.position.y -= t.speed * dt;
            if t.position.y <= bottom {
                t.state = TargetState::Failed;
                if t.kind == TargetKind::Task {
                    self.score.failed += 1;
                    samples.push(self.sample(i, false, end_time));
                }
            }
        }
        self.targets.retain(|t| t.state == TargetState::Falling);

        self.tick += 1;
        self.time = end_time;
        samples
    }

    fn sample(&self, index: usize, completed: bool, timestamp: f64) -> TargetSample {
        let t = &self.targets[index];
        TargetSample { trial_id: self.trial_id, target_id: t.id, speed: t.speed, mode: self.mode, completed, timestamp }
    }
}

/// Probability that a task spawn event is a scenario, such that the expected
/// share of task targets coming from scenarios equals `fraction`.
pub fn scenario_event_probability(fraction: f64) -> f64 {
    if fraction >= 1.0 {
        return 1.0;
    }
    fraction / (fraction + MEAN_SCENARIO_SIZE * (1.0 - fraction))
}

/// Rate of task spawn events giving the configured mean task-target rate.
pub fn task_event_rate(config: &GameConfig) -> f64 {
    let p = scenario_event_probability(config.scenario_fraction);
    let per_event = p * MEAN_SCENARIO_SIZE + (1.0 - p);
    1.0 / (config.task_spawn_interval * per_event)
}

/// Completed over total task targets.
pub fn performance(samples: &[TargetSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let completed = samples.iter().filter(|s| s.completed).count();
    Ok(completed as f64 / samples.len() as f64)
}
