//! Gaze-based attention estimation and the four robot behaviour modes.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::game::{GameConfig, GameState, Target, TargetId};
use crate::geometry::{ray_plane_intersection, GazeRay, ScreenPlane, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorMode {
    /// The tip is rigidly attached to the handle.
    Manual,
    /// The tip follows the estimated gaze point.
    Slave,
    /// The robot picks and lases targets on its own.
    Autonomous,
    /// Follows gaze, locks onto attended targets and finishes them.
    Cooperative,
}

impl BehaviorMode {
    pub const ALL: [BehaviorMode; 4] =
        [BehaviorMode::Manual, BehaviorMode::Slave, BehaviorMode::Autonomous, BehaviorMode::Cooperative];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorMode::Manual => "manual",
            BehaviorMode::Slave => "slave",
            BehaviorMode::Autonomous => "autonomous",
            BehaviorMode::Cooperative => "cooperative",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BehaviorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownMode;

impl fmt::Display for UnknownMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unknown behaviour mode (expected manual, slave, autonomous or cooperative)")
    }
}

impl FromStr for BehaviorMode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BehaviorMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or(UnknownMode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionParams {
    /// Extra slack around a target for gaze association, mm. The default is
    /// the expected pointing error at 27° seen from 700 mm.
    pub association_radius: f64,
    /// How long the last estimate survives a tracking gap, s.
    pub hold_window: f64,
}

impl Default for AttentionParams {
    fn default() -> Self {
        Self { association_radius: 700.0 * libm::tan(2.107f64.to_radians()), hold_window: 0.15 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionEstimate {
    pub gaze_screen_point: Option<Vec2>,
    pub focused_target: Option<TargetId>,
    /// Seconds the current focus has been held.
    pub focus_age: f64,
    /// Seconds since the last on-screen gaze sample.
    pub untracked_for: f64,
    /// The last sample was tracked but missed the screen.
    pub off_screen: bool,
}

/// Estimates the gaze point and the attended task target for this tick.
///
/// Without a usable sample the previous estimate is kept for `hold_window`
/// seconds, then dropped.
pub fn estimate_attention(
    gaze: Option<&GazeRay>,
    screen: &ScreenPlane,
    game: &GameState,
    config: &GameConfig,
    params: &AttentionParams,
    previous: &AttentionEstimate,
    dt: f64,
) -> AttentionEstimate {
    match gaze.and_then(|g| ray_plane_intersection(g, screen)) {
        Some(point) => {
            let reach = config.target_radius + params.association_radius;
            let focused_target = game
                .open_tasks()
                .map(|t| ((t.position - point).norm(), t.id))
                .filter(|(d, _)| *d <= reach)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, id)| id);
            let focus_age = match focused_target {
                Some(id) if previous.focused_target == Some(id) => previous.focus_age + dt,
                _ => 0.0,
            };
            AttentionEstimate { gaze_screen_point: Some(point), focused_target, focus_age, untracked_for: 0.0, off_screen: false }
        }
        None => {
            let untracked_for = previous.untracked_for + dt;
            let off_screen = gaze.is_some();
            if untracked_for <= params.hold_window + 1e-9 && previous.gaze_screen_point.is_some() {
                let focused_target =
                    previous.focused_target.filter(|id| game.target(*id).is_some_and(Target::is_open_task));
                let focus_age = if focused_target.is_some() { previous.focus_age + dt } else { 0.0 };
                AttentionEstimate { gaze_screen_point: previous.gaze_screen_point, focused_target, focus_age, untracked_for, off_screen }
            } else {
                AttentionEstimate { gaze_screen_point: None, focused_target: None, focus_age: 0.0, untracked_for, off_screen }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotParams {
    /// Maximum tip speed relative to the screen, mm/s.
    pub tip_speed_limit: f64,
    /// Maximum tip offset from the handle aim point, mm.
    pub workspace_radius: f64,
    /// How far a cooperative lock pulls the tip from the gaze point onto the
    /// target (1 snaps fully).
    pub aim_blend: f64,
    /// Continuous focus needed before Cooperative locks onto a target, s.
    pub lock_dwell: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self { tip_speed_limit: 1500.0, workspace_radius: 250.0, aim_blend: 1.0, lock_dwell: 0.4 }
    }
}

/// Tool state projected on the screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub tip: Vec2,
    pub handle_aim: Vec2,
    pub tip_speed_limit: f64,
    pub workspace_radius: f64,
}

impl RobotState {
    pub fn new(handle_aim: Vec2, params: &RobotParams) -> Self {
        Self { tip: handle_aim, handle_aim, tip_speed_limit: params.tip_speed_limit, workspace_radius: params.workspace_radius }
    }

    pub fn offset(&self) -> Vec2 {
        self.tip - self.handle_aim
    }

    /// Moves the handle; the tip is carried along, keeping its offset.
    pub fn carry(&mut self, handle_aim: Vec2) {
        let offset = self.offset();
        self.handle_aim = handle_aim;
        self.tip = handle_aim + offset;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotCommand {
    /// Desired tip position; `None` holds the current offset.
    pub tip_screen_target: Option<Vec2>,
    pub laser_override: bool,
    pub locked_target: Option<TargetId>,
    /// Target being approached before it is locked.
    pub pursuit: Option<TargetId>,
}

impl RobotCommand {
    pub fn hold() -> Self {
        Self::default()
    }
}

/// Whether a target can still be finished from the tip: its remaining lasing
/// time fits in the time left before the bottom, after travelling into range.
pub fn is_completable(target: &Target, tip: Vec2, speed_limit: f64, config: &GameConfig) -> bool {
    let distance = (target.position - tip).norm();
    let travel = (distance - config.laser_range).max(0.0) / speed_limit;
    target.is_open_task() && target.remaining_lase() <= target.time_to_bottom(config.bottom_y()) - travel
}

/// Earliest-deadline-first choice among completable targets; ties go to the
/// closest target, then the lowest id.
pub fn select_target_autonomous(game: &GameState, robot: &RobotState, config: &GameConfig) -> Option<TargetId> {
    earliest_deadline(game.open_tasks(), robot.tip, robot.tip_speed_limit, config)
}

pub(crate) fn earliest_deadline<'a>(
    targets: impl Iterator<Item = &'a Target>,
    from: Vec2,
    speed: f64,
    config: &GameConfig,
) -> Option<TargetId> {
    let bottom = config.bottom_y();
    targets
        .filter(|t| is_completable(t, from, speed, config))
        .map(|t| (t.time_to_bottom(bottom), (t.position - from).norm(), t.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
        .map(|(_, _, id)| id)
}

fn valid_lock<'a>(id: TargetId, game: &'a GameState, robot: &RobotState, config: &GameConfig) -> Option<&'a Target> {
    game.target(id).filter(|t| is_completable(t, robot.tip, robot.tip_speed_limit, config))
}

/// One step of the behaviour controller.
pub fn behavior_step(
    mode: BehaviorMode,
    attention: &AttentionEstimate,
    game: &GameState,
    robot: &RobotState,
    previous: &RobotCommand,
    config: &GameConfig,
    params: &RobotParams,
) -> RobotCommand {
    match mode {
        BehaviorMode::Manual => RobotCommand::hold(),
        BehaviorMode::Slave => RobotCommand { tip_screen_target: attention.gaze_screen_point, ..RobotCommand::hold() },
        BehaviorMode::Autonomous => {
            let kept = previous.locked_target.or(previous.pursuit);
            let goal = kept
                .and_then(|id| valid_lock(id, game, robot, config))
                .map(|t| t.id)
                .or_else(|| select_target_autonomous(game, robot, config));
            match goal.and_then(|id| game.target(id)) {
                Some(t) => {
                    let in_range = (t.position - robot.tip).norm() < config.laser_range;
                    RobotCommand {
                        tip_screen_target: Some(t.position),
                        laser_override: in_range,
                        locked_target: in_range.then_some(t.id),
                        pursuit: Some(t.id),
                    }
                }
                None => RobotCommand::hold(),
            }
        }
        BehaviorMode::Cooperative => {
            let lock = previous
                .locked_target
                .and_then(|id| valid_lock(id, game, robot, config))
                .or_else(|| {
                    attention
                        .focused_target
                        .filter(|_| attention.focus_age >= params.lock_dwell - 1e-9)
                        .and_then(|id| valid_lock(id, game, robot, config))
                });
            match lock {
                Some(t) => {
                    let aim = match attention.gaze_screen_point {
                        Some(g) => g + (t.position - g) * params.aim_blend,
                        None => t.position,
                    };
                    RobotCommand {
                        tip_screen_target: Some(aim),
                        laser_override: true,
                        locked_target: Some(t.id),
                        pursuit: Some(t.id),
                    }
                }
                None => RobotCommand { tip_screen_target: attention.gaze_screen_point, ..RobotCommand::hold() },
            }
        }
    }
}

/// Moves the tip towards the commanded target at the speed limit, keeping it
/// inside the workspace disc around the handle aim point.
pub fn move_tip(robot: &RobotState, command: &RobotCommand, dt: f64) -> RobotState {
    let Some(goal) = command.tip_screen_target else {
        return *robot;
    };
    let start = robot.tip;
    let delta = goal - start;
    let max_step = robot.tip_speed_limit * dt;
    let dist = delta.norm();
    let wanted = if dist <= max_step { goal } else { start + delta * (max_step / dist) };

    let centre = robot.handle_aim;
    let r = robot.workspace_radius;
    let tip = if (wanted - centre).norm() <= r {
        wanted
    } else if (start - centre).norm() > r {
        // Already outside (the handle jumped): pull back radially.
        centre + (start - centre).normalize() * r
    } else {
        // Largest s in [0, 1] with |start + s·d − centre| = r.
        let d = wanted - start;
        let f = start - centre;
        let a = d.dot(&d);
        let b = 2.0 * f.dot(&d);
        let c = f.dot(&f) - r * r;
        let disc = (b * b - 4.0 * a * c).max(0.0);
        let s = ((-b + libm::sqrt(disc)) / (2.0 * a)).clamp(0.0, 1.0);
        start + d * s
    };
    RobotState { tip, ..*robot }
}
