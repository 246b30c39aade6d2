//! The per-tick pipeline shared by headless trials and live sessions:
//! input → attention → behaviour → tip motion → game tick.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attention::{
    behavior_step, estimate_attention, move_tip, AttentionEstimate, AttentionParams, BehaviorMode, RobotCommand,
    RobotParams, RobotState,
};
use crate::error::Result;
use crate::game::{GameConfig, GameState, Score, TargetId, TargetSample, TickInput};
use crate::geometry::{GazeRay, ScreenPlane, Vec2};
use crate::synthetic_user::default_screen;

/// Fixed configuration of the setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub game: GameConfig,
    pub attention: AttentionParams,
    pub robot: RobotParams,
    pub screen: ScreenPlane,
}

impl Rig {
    pub fn new(game: GameConfig, attention: AttentionParams, robot: RobotParams) -> Result<Self> {
        game.validate()?;
        if !(robot.tip_speed_limit > 0.0 && robot.workspace_radius >= 0.0 && (0.0..=1.0).contains(&robot.aim_blend)) {
            return Err(crate::Error::InvalidConfig("robot limits out of range".into()));
        }
        let screen = default_screen(&game)?;
        Ok(Self { game, attention, robot, screen })
    }
}

/// What the operator supplies for one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub handle_aim: Vec2,
    pub gaze: Option<GazeRay>,
    pub trigger: bool,
}

/// Everything needed to audit, and replay, one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub handle_aim: Vec2,
    pub gaze_point: Option<Vec2>,
    pub tracked: bool,
    pub focused_target: Option<TargetId>,
    pub tip: Vec2,
    pub trigger: bool,
    pub laser_override: bool,
    pub locked_target: Option<TargetId>,
    pub lased_target: Option<TargetId>,
    pub score: Score,
}

impl TickRecord {
    pub fn game_input(&self) -> TickInput {
        TickInput { tip: self.tip, trigger: self.trigger, laser_override: self.laser_override, locked_target: self.locked_target }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub mode: BehaviorMode,
    pub game: GameState,
    pub robot: RobotState,
    pub attention: AttentionEstimate,
    pub command: RobotCommand,
}

impl Simulation {
    pub fn new(rig: &Rig, seed: u64, trial_id: u32, mode: BehaviorMode) -> Self {
        Self {
            mode,
            game: GameState::new(&rig.game, seed, trial_id, mode),
            robot: RobotState::new(Vec2::zeros(), &rig.robot),
            attention: AttentionEstimate::default(),
            command: RobotCommand::hold(),
        }
    }

    pub fn is_over(&self, rig: &Rig) -> bool {
        self.game.is_over(&rig.game)
    }

    pub fn step(&mut self, rig: &Rig, input: &ControlInput) -> (TickRecord, Vec<TargetSample>) {
        let dt = rig.game.dt();
        self.robot.carry(input.handle_aim);
        self.attention =
            estimate_attention(input.gaze.as_ref(), &rig.screen, &self.game, &rig.game, &rig.attention, &self.attention, dt);
        self.command = behavior_step(self.mode, &self.attention, &self.game, &self.robot, &self.command, &rig.game, &rig.robot);
        self.robot = move_tip(&self.robot, &self.command, dt);
        let game_input = TickInput {
            tip: self.robot.tip,
            trigger: input.trigger,
            laser_override: self.command.laser_override,
            locked_target: self.command.locked_target,
        };
        let tick = self.game.tick;
        let samples = self.game.tick(&game_input, &rig.game);
        let record = TickRecord {
            tick,
            handle_aim: input.handle_aim,
            gaze_point: self.attention.gaze_screen_point.filter(|_| self.attention.untracked_for == 0.0),
            tracked: input.gaze.is_some(),
            focused_target: self.attention.focused_target,
            tip: game_input.tip,
            trigger: game_input.trigger,
            laser_override: game_input.laser_override,
            locked_target: game_input.locked_target,
            lased_target: self.game.lased_target,
            score: self.game.score,
        };
        (record, samples)
    }
}

/// Re-runs the game alone from logged tick inputs and returns its samples.
pub fn replay_game<'a>(
    config: &GameConfig,
    seed: u64,
    trial_id: u32,
    mode: BehaviorMode,
    inputs: impl IntoIterator<Item = &'a TickInput>,
) -> (GameState, Vec<TargetSample>) {
    let mut game = GameState::new(config, seed, trial_id, mode);
    let mut samples = Vec::new();
    for input in inputs {
        samples.extend(game.tick(input, config));
    }
    (game, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FrameId, Vec3};

    fn rig() -> Rig {
        Rig::new(GameConfig::default(), AttentionParams::default(), RobotParams::default()).unwrap()
    }

    #[test]
    fn autonomous_plays_without_input() {
        let rig = rig();
        let mut sim = Simulation::new(&rig, 3, 0, BehaviorMode::Autonomous);
        let idle = ControlInput { handle_aim: Vec2::zeros(), gaze: None, trigger: false };
        while !sim.is_over(&rig) {
            sim.step(&rig, &idle);
        }
        assert!(sim.game.score.completed > 0);
    }

    #[test]
    fn manual_tip_tracks_handle() {
        let rig = rig();
        let mut sim = Simulation::new(&rig, 3, 0, BehaviorMode::Manual);
        for k in 0..300 {
            let h = Vec2::new(libm::sin(k as f64 * 0.05) * 300.0, -50.0);
            let gaze = GazeRay::through(Vec3::new(0.0, 0.0, 700.0), Vec3::new(100.0, 0.0, 0.0), FrameId::World).ok();
            let (rec, _) = sim.step(&rig, &ControlInput { handle_aim: h, gaze, trigger: true });
            assert_eq!(rec.tip, h);
        }
    }

    #[test]
    fn replay_reproduces_samples() {
        let rig = rig();
        let mut sim = Simulation::new(&rig, 21, 4, BehaviorMode::Cooperative);
        let mut inputs = Vec::new();
        let mut samples = Vec::new();
        for k in 0..3000u32 {
            let x = ((k * 37) % 800) as f64 - 400.0;
            let gaze = GazeRay::through(Vec3::new(0.0, 0.0, 700.0), Vec3::new(x, 0.0, 0.0), FrameId::World).ok();
            let (rec, s) = sim.step(&rig, &ControlInput { handle_aim: Vec2::new(x * 0.5, 0.0), gaze, trigger: k % 3 == 0 });
            inputs.push(rec.game_input());
            samples.extend(s);
        }
        let (game, replayed) = replay_game(&rig.game, 21, 4, BehaviorMode::Cooperative, &inputs);
        assert_eq!(replayed, samples);
        assert_eq!(game.score, sim.game.score);
    }
}
