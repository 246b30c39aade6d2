//! Live sessions for human play. Transport free: the websocket server in
//! [`crate::server`] only moves messages in and out of these types.
//!
//! A session owns the authoritative simulation. Client input lands in a
//! one-slot mailbox (latest wins) that the next tick consumes; without new
//! input a tick reuses the last-known one, so input starvation never stalls
//! the loop.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use aimsight_core::attention::{AttentionParams, BehaviorMode, RobotParams};
use aimsight_core::game::{GameConfig, Score, TargetId, TargetKind, TargetSample, TargetState};
use aimsight_core::gaze_models::LinearErrorModel;
use aimsight_core::geometry::{GazeRay, Vec2};
use aimsight_core::simulation::{ControlInput, Rig, Simulation, TickRecord};
use aimsight_core::synthetic_user::{apply_gaze_noise, dropout_step, DropoutParams, UserParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::trial_log::{LogHeader, LogWriter, TrialLog, LOG_VERSION};

pub const PROTOCOL_VERSION: u32 = 1;
/// Inputs stamped this much older than the newest one seen are dropped, s.
pub const STALE_AFTER: f64 = 0.2;
/// Ticks run back-to-back with a snapshot each before snapshots are dropped.
pub const MAX_CATCH_UP: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub u64);

impl std::fmt::Display for SessionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Paused,
    Running,
    Ended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeSource {
    /// `gaze_point` of each input is the gaze; absent means untracked.
    PointerProxy,
    /// The gaze jumps to the proxy point only once it rested there for
    /// `dwell_time`. The proxy is `gaze_point`, or the pointer without one.
    DwellProxy,
}

/// Emulated eye-tracker imperfection applied to the proxy gaze.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerEmulation {
    pub enabled: bool,
    pub dropout: DropoutParams,
    pub noise_model: LinearErrorModel,
    pub noise_sd: f64,
}

impl Default for TrackerEmulation {
    fn default() -> Self {
        Self { enabled: false, dropout: DropoutParams::CALIBRATED, noise_model: LinearErrorModel::PAPER, noise_sd: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub mode: BehaviorMode,
    pub game: GameConfig,
    pub attention: AttentionParams,
    pub robot: RobotParams,
    pub gaze_source: GazeSource,
    /// Hz, at most the tick rate.
    pub snapshot_rate: f64,
    pub seed: u64,
    pub trial_id: u32,
    /// Distance of the virtual eye in front of the screen centre, mm.
    pub eye_distance: f64,
    pub dwell_time: f64,
    /// Movement that still counts as resting for the dwell proxy, mm.
    pub dwell_radius: f64,
    pub tracker: TrackerEmulation,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            mode: BehaviorMode::Cooperative,
            game: GameConfig::default(),
            attention: AttentionParams::default(),
            robot: RobotParams::default(),
            gaze_source: GazeSource::PointerProxy,
            snapshot_rate: 30.0,
            seed: 1,
            trial_id: 0,
            eye_distance: 700.0,
            dwell_time: 0.25,
            dwell_radius: 25.0,
            tracker: TrackerEmulation::default(),
        }
    }
}

impl SessionConfig {
    pub fn rig(&self) -> Result<Rig, SessionError> {
        Rig::new(self.game.clone(), self.attention, self.robot).map_err(|e| SessionError::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        self.rig()?;
        let bad = |m: &str| Err(SessionError::InvalidConfig(m.into()));
        if !(self.snapshot_rate > 0.0 && self.snapshot_rate <= self.game.tick_rate) {
            return bad("snapshot rate must be positive and at most the tick rate");
        }
        if !(self.eye_distance > 0.0) {
            return bad("eye distance must be positive");
        }
        if !(self.dwell_time >= 0.0 && self.dwell_radius >= 0.0) {
            return bad("dwell time and radius must be non-negative");
        }
        let t = &self.tracker;
        if !((0.0..=1.0).contains(&t.dropout.a) && (0.0..=1.0).contains(&t.dropout.b) && t.noise_sd >= 0.0) {
            return bad("tracker emulation parameters out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("session is not running")]
    NotRunning,
    #[error("session is running")]
    AlreadyRunning,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// One client input. Points are normalized screen coordinates, (0, 0) top
/// left and (1, 1) bottom right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputMessage {
    pub v: u32,
    /// Client clock, s.
    pub timestamp: f64,
    pub handle_point: [f64; 2],
    #[serde(default)]
    pub gaze_point: Option<[f64; 2]>,
    pub trigger: bool,
}

impl InputMessage {
    pub fn new(timestamp: f64, handle_point: [f64; 2], gaze_point: Option<[f64; 2]>, trigger: bool) -> Self {
        Self { v: PROTOCOL_VERSION, timestamp, handle_point, gaze_point, trigger }
    }

    /// Clamps every coordinate into [0, 1]; non-finite values are rejected.
    pub fn clamped(mut self) -> Result<Self, SessionError> {
        let finite = self.timestamp.is_finite()
            && self.handle_point.iter().all(|c| c.is_finite())
            && self.gaze_point.is_none_or(|g| g.iter().all(|c| c.is_finite()));
        if !finite {
            return Err(SessionError::InvalidInput("non-finite value".into()));
        }
        self.handle_point = self.handle_point.map(|c| c.clamp(0.0, 1.0));
        self.gaze_point = self.gaze_point.map(|g| g.map(|c| c.clamp(0.0, 1.0)));
        Ok(self)
    }
}

/// Normalized point to screen millimetres (origin at the centre, y up).
pub fn to_screen(p: [f64; 2], game: &GameConfig) -> Vec2 {
    Vec2::new((p[0] - 0.5) * game.screen_width, (0.5 - p[1]) * game.screen_height)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetView {
    pub id: TargetId,
    pub kind: TargetKind,
    pub position: Vec2,
    pub speed: f64,
    pub state: TargetState,
    pub accumulated_lase: f64,
    pub required_lase_time: f64,
    /// accumulated / required, in [0, 1].
    pub progress: f64,
}

/// Screen coordinates are millimetres, origin at the centre, y up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub v: u32,
    pub session_id: SessionId,
    pub tick: u64,
    pub time: f64,
    pub mode: BehaviorMode,
    pub status: SessionStatus,
    pub targets: Vec<TargetView>,
    pub tip: Vec2,
    pub handle: Vec2,
    pub locked_target: Option<TargetId>,
    pub lased_target: Option<TargetId>,
    /// Gaze marker; absent while untracked.
    pub gaze: Option<Vec2>,
    pub focused_target: Option<TargetId>,
    pub score: Score,
    pub stale_inputs: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct DwellProxy {
    anchor: Option<Vec2>,
    since: f64,
    fixation: Option<Vec2>,
}

impl DwellProxy {
    fn update(&mut self, p: Vec2, now: f64, dwell_time: f64, radius: f64) -> Option<Vec2> {
        match self.anchor {
            Some(a) if (p - a).norm() <= radius => {}
            _ => {
                self.anchor = Some(p);
                self.since = now;
            }
        }
        if now - self.since >= dwell_time - 1e-9 {
            self.fixation = self.anchor;
        }
        self.fixation
    }
}

#[derive(Debug, Clone)]
pub struct LiveSession {
    id: SessionId,
    config: SessionConfig,
    rig: Rig,
    sim: Simulation,
    status: SessionStatus,
    mailbox: Option<InputMessage>,
    current: Option<InputMessage>,
    newest_timestamp: f64,
    stale_inputs: u64,
    tracker_rng: ChaCha8Rng,
    tracked: bool,
    dwell: DwellProxy,
    consumed: Vec<Option<InputMessage>>,
    ticks: Vec<TickRecord>,
    samples: Vec<TargetSample>,
    samples_per_tick: Vec<usize>,
}

impl LiveSession {
    /// A new paused session.
    pub fn open(id: SessionId, config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let rig = config.rig()?;
        let sim = Simulation::new(&rig, config.seed, config.trial_id, config.mode);
        let mut tracker_rng = ChaCha8Rng::seed_from_u64(config.seed);
        tracker_rng.set_stream(2);
        Ok(Self {
            id,
            config,
            rig,
            sim,
            status: SessionStatus::Paused,
            mailbox: None,
            current: None,
            newest_timestamp: f64::NEG_INFINITY,
            stale_inputs: 0,
            tracker_rng,
            tracked: true,
            dwell: DwellProxy::default(),
            consumed: Vec::new(),
            ticks: Vec::new(),
            samples: Vec::new(),
            samples_per_tick: Vec::new(),
        })
    }

    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn score(&self) -> Score {
        self.sim.game.score
    }

    pub fn tick(&self) -> u64 {
        self.sim.game.tick
    }

    pub fn stale_inputs(&self) -> u64 {
        self.stale_inputs
    }

    pub fn samples(&self) -> &[TargetSample] {
        &self.samples
    }

    /// Input used by each tick so far, `None` before the first input arrived.
    pub fn consumed_inputs(&self) -> &[Option<InputMessage>] {
        &self.consumed
    }

    /// Replaces the configuration and resets to a fresh paused trial.
    pub fn reconfigure(&mut self, config: SessionConfig) -> Result<(), SessionError> {
        if self.status == SessionStatus::Running {
            return Err(SessionError::AlreadyRunning);
        }
        *self = Self::open(self.id, config)?;
        Ok(())
    }

    pub fn start(&mut self) -> Result<(), SessionError> {
        match self.status {
            SessionStatus::Running => Err(SessionError::AlreadyRunning),
            SessionStatus::Paused => {
                self.status = SessionStatus::Running;
                Ok(())
            }
            SessionStatus::Ended => {
                self.reconfigure(self.config.clone())?;
                self.status = SessionStatus::Running;
                Ok(())
            }
        }
    }

    pub fn end(&mut self) {
        self.status = SessionStatus::Ended;
    }

    /// Buffers `msg` for the next tick. Returns `false` when it was dropped as stale.
    pub fn ingest(&mut self, msg: InputMessage) -> Result<bool, SessionError> {
        if self.status != SessionStatus::Running {
            return Err(SessionError::NotRunning);
        }
        let msg = msg.clamped()?;
        if msg.timestamp < self.newest_timestamp - STALE_AFTER {
            self.stale_inputs += 1;
            return Ok(false);
        }
        self.newest_timestamp = self.newest_timestamp.max(msg.timestamp);
        self.mailbox = Some(msg);
        Ok(true)
    }

    fn gaze_ray(&mut self, input: Option<&InputMessage>) -> Option<GazeRay> {
        let game = &self.rig.game;
        let point = input.and_then(|m| match self.config.gaze_source {
            GazeSource::PointerProxy => m.gaze_point.map(|g| to_screen(g, game)),
            GazeSource::DwellProxy => {
                let p = to_screen(m.gaze_point.unwrap_or(m.handle_point), game);
                self.dwell.update(p, self.sim.game.time, self.config.dwell_time, self.config.dwell_radius)
            }
        })?;
        let screen = &self.rig.screen;
        let t = &self.config.tracker;
        if t.enabled {
            self.tracked = dropout_step(self.tracked, &t.dropout, &mut self.tracker_rng);
            if !self.tracked {
                return None;
            }
            let params = UserParams {
                gaze_noise_model: t.noise_model,
                gaze_noise_sd: t.noise_sd,
                eye_distance: self.config.eye_distance,
                ..UserParams::default()
            };
            return apply_gaze_noise(point, self.sim.robot.tip, screen, &params, &mut self.tracker_rng).ok().map(|n| n.ray);
        }
        let eye = screen.point_in_front(&Vec2::zeros(), self.config.eye_distance);
        GazeRay::through(eye, screen.to_parent(&point), screen.pose().parent().clone()).ok()
    }

    fn advance(&mut self) {
        let current = self.current;
        let handle_aim = current.map_or(Vec2::zeros(), |m| to_screen(m.handle_point, &self.rig.game));
        let gaze = self.gaze_ray(current.as_ref());
        let input = ControlInput { handle_aim, gaze, trigger: current.is_some_and(|m| m.trigger) };
        let (record, samples) = self.sim.step(&self.rig, &input);
        self.consumed.push(current);
        self.ticks.push(record);
        self.samples_per_tick.push(samples.len());
        self.samples.extend(samples);
        if self.sim.is_over(&self.rig) {
            self.status = SessionStatus::Ended;
        }
    }

    /// One tick: consumes the mailbox (or keeps the last-known input) and
    /// advances the simulation. The session ends on its own after the trial duration.
    pub fn step(&mut self) -> Result<(), SessionError> {
        if self.status != SessionStatus::Running {
            return Err(SessionError::NotRunning);
        }
        if let Some(m) = self.mailbox.take() {
            self.current = Some(m);
        }
        self.advance();
        Ok(())
    }

    fn snapshot_due(&self) -> bool {
        let n = self.sim.game.tick as f64;
        let per_tick = self.config.snapshot_rate / self.rig.game.tick_rate;
        self.status == SessionStatus::Ended || ((n * per_tick + 1e-9).floor() > ((n - 1.0) * per_tick + 1e-9).floor())
    }

    /// Steps once and returns a snapshot when one is due at the snapshot
    /// rate. The final tick always produces one.
    pub fn step_and_broadcast(&mut self) -> Result<Option<Snapshot>, SessionError> {
        self.step()?;
        Ok(self.snapshot_due().then(|| self.snapshot()))
    }

    pub fn snapshot(&self) -> Snapshot {
        let game = &self.sim.game;
        let last = self.ticks.last();
        Snapshot {
            v: PROTOCOL_VERSION,
            session_id: self.id,
            tick: game.tick,
            time: game.time,
            mode: self.config.mode,
            status: self.status,
            targets: game
                .targets
                .iter()
                .map(|t| TargetView {
                    id: t.id,
                    kind: t.kind,
                    position: t.position,
                    speed: t.speed,
                    state: t.state,
                    accumulated_lase: t.accumulated_lase,
                    required_lase_time: t.required_lase_time,
                    progress: t.progress(),
                })
                .collect(),
            tip: self.sim.robot.tip,
            handle: last.map_or(Vec2::zeros(), |r| r.handle_aim),
            locked_target: self.sim.command.locked_target,
            lased_target: game.lased_target,
            gaze: last.and_then(|r| r.gaze_point),
            focused_target: self.sim.attention.focused_target,
            score: game.score,
            stale_inputs: self.stale_inputs,
        }
    }

    pub fn log_header(&self) -> LogHeader {
        LogHeader {
            v: LOG_VERSION,
            seed: self.config.seed,
            trial_id: self.config.trial_id,
            mode: self.config.mode,
            source: "live".into(),
            game: self.rig.game.clone(),
            attention: self.rig.attention,
            robot: self.rig.robot,
        }
    }

    /// The session's trial log, in the same schema as headless logs.
    pub fn trial_log(&self) -> TrialLog {
        TrialLog {
            header: self.log_header(),
            ticks: self.ticks.clone(),
            samples: self.samples.clone(),
            end: (self.status == SessionStatus::Ended).then(|| (self.score(), self.tick())),
        }
    }

    pub fn log_bytes(&self) -> anyhow::Result<Vec<u8>> {
        let mut w = LogWriter::new(Vec::new(), self.log_header())?;
        let mut samples = self.samples.iter();
        for (record, n) in self.ticks.iter().zip(&self.samples_per_tick) {
            let produced: Vec<TargetSample> = samples.by_ref().take(*n).cloned().collect();
            w.tick(record, &produced)?;
        }
        w.finish(self.score(), self.tick())
    }
}

/// Re-runs a session headlessly from the inputs its ticks consumed.
pub fn replay_inputs(config: &SessionConfig, inputs: &[Option<InputMessage>]) -> Result<LiveSession, SessionError> {
    let mut session = LiveSession::open(SessionId(0), config.clone())?;
    session.start()?;
    for input in inputs {
        if session.status != SessionStatus::Running {
            break;
        }
        session.current = *input;
        session.advance();
    }
    Ok(session)
}

pub trait Clock: Send + Sync {
    /// Seconds since an arbitrary fixed origin.
    fn now(&self) -> f64;
}

pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// A clock moved by hand, for tests.
#[derive(Default)]
pub struct ManualClock(Mutex<f64>);

impl ManualClock {
    pub fn set(&self, t: f64) {
        *self.0.lock().unwrap() = t;
    }

    pub fn advance(&self, dt: f64) {
        *self.0.lock().unwrap() += dt;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PaceOutcome {
    pub ticks: u64,
    pub snapshots: Vec<Snapshot>,
    pub dropped_snapshots: u64,
}

/// Fixed-timestep pacing against wall-clock time.
#[derive(Debug, Clone, PartialEq)]
pub struct Pacer {
    tick_rate: f64,
    start: f64,
    done: u64,
}

impl Pacer {
    pub fn new(tick_rate: f64, start: f64) -> Self {
        Self { tick_rate, start, done: 0 }
    }

    pub fn due(&self, now: f64) -> u64 {
        let target = ((now - self.start) * self.tick_rate + 1e-9).floor().max(0.0) as u64;
        target.saturating_sub(self.done)
    }

    /// Runs every tick due by `now`. Simulation ticks are never skipped;
    /// past [`MAX_CATCH_UP`] back-to-back ticks only the last snapshot is kept.
    pub fn advance(&mut self, session: &mut LiveSession, now: f64) -> Result<PaceOutcome, SessionError> {
        let due = self.due(now);
        let mut out = PaceOutcome::default();
        for k in 0..due {
            if session.status() != SessionStatus::Running {
                break;
            }
            let snap = session.step_and_broadcast()?;
            self.done += 1;
            out.ticks += 1;
            if let Some(s) = snap {
                let last = k + 1 == due || s.status == SessionStatus::Ended;
                if k < MAX_CATCH_UP || last {
                    out.snapshots.push(s);
                } else {
                    out.dropped_snapshots += 1;
                }
            }
        }
        Ok(out)
    }
}

/// All open sessions, keyed by id.
#[derive(Debug, Default)]
pub struct SessionRegistry {
    next: u64,
    sessions: HashMap<SessionId, LiveSession>,
}

impl SessionRegistry {
    pub fn open(&mut self, config: SessionConfig) -> Result<SessionId, SessionError> {
        let id = SessionId(self.next + 1);
        let session = LiveSession::open(id, config)?;
        self.next += 1;
        self.sessions.insert(id, session);
        Ok(id)
    }

    pub fn get(&self, id: SessionId) -> Result<&LiveSession, SessionError> {
        self.sessions.get(&id).ok_or(SessionError::UnknownSession(id))
    }

    pub fn get_mut(&mut self, id: SessionId) -> Result<&mut LiveSession, SessionError> {
        self.sessions.get_mut(&id).ok_or(SessionError::UnknownSession(id))
    }

    pub fn ingest(&mut self, id: SessionId, msg: InputMessage) -> Result<bool, SessionError> {
        self.get_mut(id)?.ingest(msg)
    }

    pub fn close(&mut self, id: SessionId) -> Result<LiveSession, SessionError> {
        self.sessions.remove(&id).ok_or(SessionError::UnknownSession(id))
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(mode: BehaviorMode) -> SessionConfig {
        SessionConfig { mode, game: GameConfig { trial_duration: 5.0, ..GameConfig::default() }, ..SessionConfig::default() }
    }

    fn running(config: SessionConfig) -> LiveSession {
        let mut s = LiveSession::open(SessionId(1), config).unwrap();
        s.start().unwrap();
        s
    }

    #[test]
    fn open_starts_paused_with_unique_ids() {
        let mut reg = SessionRegistry::default();
        let a = reg.open(SessionConfig::default()).unwrap();
        let b = reg.open(SessionConfig::default()).unwrap();
        assert_ne!(a, b);
        assert_eq!(reg.get(a).unwrap().status(), SessionStatus::Paused);
    }

    #[test]
    fn snapshot_rate_above_tick_rate_is_invalid() {
        let config = SessionConfig { snapshot_rate: 61.0, ..SessionConfig::default() };
        let mut reg = SessionRegistry::default();
        assert!(matches!(reg.open(config), Err(SessionError::InvalidConfig(_))));
        assert!(reg.is_empty());
    }

    #[test]
    fn closed_session_is_unknown() {
        let mut reg = SessionRegistry::default();
        let id = reg.open(SessionConfig::default()).unwrap();
        reg.get_mut(id).unwrap().start().unwrap();
        reg.close(id).unwrap();
        let msg = InputMessage::new(0.0, [0.5, 0.5], None, false);
        assert_eq!(reg.ingest(id, msg), Err(SessionError::UnknownSession(id)));
    }

    #[test]
    fn input_needs_running_session() {
        let mut s = LiveSession::open(SessionId(1), SessionConfig::default()).unwrap();
        assert_eq!(s.ingest(InputMessage::new(0.0, [0.5, 0.5], None, false)), Err(SessionError::NotRunning));
    }

    #[test]
    fn latest_input_wins() {
        let mut s = running(short(BehaviorMode::Manual));
        s.ingest(InputMessage::new(0.00, [0.1, 0.5], None, false)).unwrap();
        s.ingest(InputMessage::new(0.01, [0.9, 0.5], None, false)).unwrap();
        s.step().unwrap();
        assert_eq!(s.consumed_inputs()[0].unwrap().handle_point, [0.9, 0.5]);
    }

    #[test]
    fn stale_input_is_counted_and_ignored() {
        let mut s = running(short(BehaviorMode::Manual));
        assert!(s.ingest(InputMessage::new(1.0, [0.2, 0.5], None, false)).unwrap());
        assert!(!s.ingest(InputMessage::new(0.7, [0.8, 0.5], None, false)).unwrap());
        assert!(s.ingest(InputMessage::new(0.9, [0.3, 0.5], None, false)).unwrap());
        assert_eq!(s.stale_inputs(), 1);
        s.step().unwrap();
        assert_eq!(s.consumed_inputs()[0].unwrap().handle_point, [0.3, 0.5]);
    }

    #[test]
    fn coordinates_are_clamped() {
        let m = InputMessage::new(0.0, [-0.5, 1.5], Some([2.0, -1.0]), true).clamped().unwrap();
        assert_eq!(m.handle_point, [0.0, 1.0]);
        assert_eq!(m.gaze_point, Some([1.0, 0.0]));
        assert!(InputMessage::new(0.0, [f64::NAN, 0.0], None, true).clamped().is_err());
    }

    #[test]
    fn normalized_mapping() {
        let g = GameConfig::default();
        assert_eq!(to_screen([0.5, 0.5], &g), Vec2::zeros());
        assert_eq!(to_screen([0.0, 0.0], &g), Vec2::new(-0.5 * g.screen_width, 0.5 * g.screen_height));
    }

    #[test]
    fn manual_tip_follows_handle_exactly() {
        let mut s = running(short(BehaviorMode::Manual));
        for k in 0..120 {
            let u = 0.2 + 0.005 * k as f64;
            s.ingest(InputMessage::new(k as f64 / 60.0, [u, 0.4], Some([u, 0.4]), k % 2 == 0)).unwrap();
            s.step().unwrap();
            assert_eq!(s.snapshot().tip, to_screen([u, 0.4], &s.config().game));
        }
    }

    #[test]
    fn starved_autonomous_session_still_plays() {
        let mut s = running(SessionConfig { mode: BehaviorMode::Autonomous, ..SessionConfig::default() });
        let mut last = None;
        while s.status() == SessionStatus::Running {
            if let Some(snap) = s.step_and_broadcast().unwrap() {
                last = Some(snap);
            }
        }
        let last = last.unwrap();
        assert_eq!(last.status, SessionStatus::Ended);
        assert_eq!(last.tick, 4800);
        assert!(last.score.completed > 0);
        assert!(last.gaze.is_none());
    }

    #[test]
    fn absent_gaze_is_untracked() {
        let mut s = running(short(BehaviorMode::Slave));
        s.ingest(InputMessage::new(0.0, [0.5, 0.5], None, false)).unwrap();
        s.step().unwrap();
        assert!(!s.ticks[0].tracked);
        s.ingest(InputMessage::new(0.1, [0.5, 0.5], Some([0.3, 0.3]), false)).unwrap();
        s.step().unwrap();
        assert!(s.ticks[1].tracked);
    }

    #[test]
    fn dwell_proxy_waits_for_rest() {
        let config = SessionConfig { gaze_source: GazeSource::DwellProxy, dwell_time: 0.25, ..short(BehaviorMode::Slave) };
        let mut s = running(config);
        for k in 0..30 {
            s.ingest(InputMessage::new(k as f64 / 60.0, [0.3, 0.5], None, false)).unwrap();
            s.step().unwrap();
            let tracked = s.ticks[k].tracked;
            assert_eq!(tracked, k >= 15, "tick {k}");
        }
    }

    #[test]
    fn snapshots_follow_the_rate() {
        let mut s = running(short(BehaviorMode::Autonomous));
        let mut n = 0;
        for _ in 0..60 {
            n += usize::from(s.step_and_broadcast().unwrap().is_some());
        }
        assert_eq!(n, 30);
    }

    #[test]
    fn configure_rejected_while_running_allowed_after_end() {
        let mut s = running(short(BehaviorMode::Manual));
        let next = short(BehaviorMode::Cooperative);
        assert_eq!(s.reconfigure(next.clone()), Err(SessionError::AlreadyRunning));
        s.end();
        s.reconfigure(next).unwrap();
        assert_eq!(s.status(), SessionStatus::Paused);
        assert_eq!(s.config().mode, BehaviorMode::Cooperative);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut s = running(SessionConfig { mode: BehaviorMode::Autonomous, ..SessionConfig::default() });
        s.step().unwrap();
        while s.snapshot().targets.len() < 2 {
            s.step().unwrap();
        }
        let snap = s.snapshot();
        let text = serde_json::to_string(&snap).unwrap();
        assert_eq!(serde_json::from_str::<Snapshot>(&text).unwrap(), snap);
    }

    #[test]
    fn pacer_catches_up_without_skipping_ticks() {
        let mut s = running(SessionConfig { snapshot_rate: 60.0, ..short(BehaviorMode::Autonomous) });
        let mut pacer = Pacer::new(60.0, 10.0);
        assert_eq!(pacer.advance(&mut s, 10.0).unwrap().ticks, 0);
        let out = pacer.advance(&mut s, 10.0 + 3.0 / 60.0).unwrap();
        assert_eq!((out.ticks, out.snapshots.len(), out.dropped_snapshots), (3, 3, 0));
        let out = pacer.advance(&mut s, 10.0 + 13.0 / 60.0).unwrap();
        assert_eq!((out.ticks, out.snapshots.len(), out.dropped_snapshots), (10, 6, 4));
        assert_eq!(out.snapshots.last().unwrap().tick, 13);
        assert_eq!(s.tick(), 13);
    }

    #[test]
    fn emulated_tracker_drops_about_half() {
        let mut config = SessionConfig { mode: BehaviorMode::Slave, ..SessionConfig::default() };
        config.tracker.enabled = true;
        let mut s = running(config);
        s.ingest(InputMessage::new(0.0, [0.5, 0.5], Some([0.4, 0.4]), false)).unwrap();
        while s.status() == SessionStatus::Running {
            s.step().unwrap();
        }
        let share = s.ticks.iter().filter(|t| !t.tracked).count() as f64 / s.ticks.len() as f64;
        assert!((share - 0.499).abs() < 0.05, "{share}");
    }
}
