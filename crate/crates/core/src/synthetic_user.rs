//! A simulated player: picks targets, looks at them, moves the handle and
//! pulls the trigger, while an imperfect tracker reports its gaze.

use alloc::collections::VecDeque;
use core::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{earliest_deadline, BehaviorMode};
use crate::error::{Error, Result};
use crate::game::{GameConfig, GameState, Target, TargetId};
use crate::gaze_models::LinearErrorModel;
use crate::geometry::{angular_shift, ray_plane_intersection, FrameId, GazeRay, Pose, ScreenPlane, Vec2, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutParams {
    /// Per-tick probability of losing track.
    pub a: f64,
    /// Per-tick probability of regaining track.
    pub b: f64,
}

impl DropoutParams {
    /// 49.9 % of ticks untracked, 5.1 % of the time inside gaps longer than
    /// nine ticks. Solved from `π·(1−b)⁹·(1+9b) = 0.051`, `π = a/(a+b) = 0.499`.
    pub const CALIBRATED: Self = Self { a: 0.3335836083255892, b: 0.33492061677579194 };
    pub const NONE: Self = Self { a: 0.0, b: 1.0 };

    pub fn stationary_untracked(&self) -> f64 {
        if self.a + self.b == 0.0 {
            0.0
        } else {
            self.a / (self.a + self.b)
        }
    }

    /// Expected share of time spent in untracked runs of at least `min_run` ticks.
    pub fn long_gap_share(&self, min_run: u32) -> f64 {
        let k = min_run.saturating_sub(1) as i32;
        self.stationary_untracked() * libm::pow(1.0 - self.b, k as f64) * (1.0 + k as f64 * self.b)
    }
}

impl Default for DropoutParams {
    fn default() -> Self {
        Self::CALIBRATED
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserParams {
    pub reaction_delay: f64,
    /// Gaze leaves for the next target this long before the current one completes.
    pub lookahead_lead: f64,
    pub handle_speed_limit: f64,
    /// Tip speed the user counts on when the robot helps to aim (cooperative),
    /// used to judge which targets are still reachable.
    pub assisted_reach_speed: f64,
    /// The hand aims where a moving target was this long ago.
    pub pursuit_lag: f64,
    /// Chance that a newly appeared object draws a brief glance.
    pub glance_probability: f64,
    pub glance_dwell: f64,
    /// Per-tick Gaussian hand tremor on the aim point, mm.
    pub aim_jitter: f64,
    pub gaze_noise_model: LinearErrorModel,
    /// Spread of the angular error around the model mean, degrees.
    pub gaze_noise_sd: f64,
    /// Eye distance in front of the screen centre, mm.
    pub eye_distance: f64,
    pub dropout: DropoutParams,
    /// In slave mode the gaze is drawn this far towards the moving tip.
    pub slave_gaze_pull: f64,
}

impl Default for UserParams {
    fn default() -> Self {
        Self {
            reaction_delay: 0.25,
            lookahead_lead: 0.4,
            handle_speed_limit: 500.0,
            assisted_reach_speed: 1500.0,
            pursuit_lag: 0.15,
            glance_probability: 1.0,
            glance_dwell: 0.3,
            aim_jitter: 4.0,
            gaze_noise_model: LinearErrorModel::PAPER,
            gaze_noise_sd: 0.5,
            eye_distance: 700.0,
            dropout: DropoutParams::CALIBRATED,
            slave_gaze_pull: 0.3,
        }
    }
}

impl UserParams {
    pub fn validate(&self) -> Result<()> {
        let p = [
            ("dropout.a", self.dropout.a), ("dropout.b", self.dropout.b), ("slave_gaze_pull", self.slave_gaze_pull),
            ("glance_probability", self.glance_probability),
        ];
        for (name, v) in p {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(alloc::format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        let non_negative = [
            ("reaction_delay", self.reaction_delay),
            ("lookahead_lead", self.lookahead_lead),
            ("aim_jitter", self.aim_jitter),
            ("gaze_noise_sd", self.gaze_noise_sd),
            ("pursuit_lag", self.pursuit_lag),
            ("glance_dwell", self.glance_dwell),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) {
                return Err(Error::InvalidConfig(alloc::format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.handle_speed_limit > 0.0 && self.assisted_reach_speed > 0.0 && self.eye_distance > 0.0) {
            return Err(Error::InvalidConfig("speeds and eye_distance must be positive".into()));
        }
        Ok(())
    }
}

/// One step of the tracker dropout chain.
pub fn dropout_step<R: Rng + ?Sized>(tracked: bool, params: &DropoutParams, rng: &mut R) -> bool {
    if tracked {
        !rng.random_bool(params.a)
    } else {
        rng.random_bool(params.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyGaze {
    pub ray: GazeRay,
    /// Angular error applied, degrees.
    pub error_deg: f64,
    /// Where the perturbed ray meets the screen.
    pub point: Option<Vec2>,
}

/// Perturbs the ray from the eye through `true_point` by an angle drawn from
/// `|N(predict_error(Δφ), σ)|` in a uniformly random direction, where Δφ is
/// the angle between the gaze and the tool tip.
pub fn apply_gaze_noise<R: Rng + ?Sized>(
    true_point: Vec2,
    tip: Vec2,
    screen: &ScreenPlane,
    params: &UserParams,
    rng: &mut R,
) -> Result<NoisyGaze> {
    let eye = screen.point_in_front(&Vec2::zeros(), params.eye_distance);
    let frame = screen.pose().parent().clone();
    let ray = GazeRay::through(eye, screen.to_parent(&true_point), frame.clone())?;
    let tip_ray = GazeRay::through(eye, screen.to_parent(&tip), frame)?;
    let mu = params.gaze_noise_model.predict_error(angular_shift(&ray, &tip_ray));
    let error_deg = if params.gaze_noise_sd > 0.0 {
        Normal::new(mu, params.gaze_noise_sd).map_err(|_| Error::InvalidConfig("gaze noise".into()))?.sample(rng).abs()
    } else {
        mu.abs()
    };
    let azimuth = rng.random_range(0.0..TAU);
    let ray = ray.deflected(error_deg, azimuth);
    let point = ray_plane_intersection(&ray, screen);
    Ok(NoisyGaze { ray, error_deg, point })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTickOutput {
    pub true_gaze_point: Vec2,
    /// `None` while the tracker has lost the eyes.
    pub measured_gaze: Option<GazeRay>,
    pub handle_aim_point: Vec2,
    pub trigger: bool,
    pub intent: Option<TargetId>,
    pub fixated: Option<TargetId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    rng: ChaCha8Rng,
    tracked: bool,
    handle: Vec2,
    intent: Option<TargetId>,
    intent_fixated: bool,
    last_progress: f64,
    last_progress_time: f64,
    gaze_goal: GazeGoal,
    goal_since: f64,
    fixated: Option<TargetId>,
    gaze_rest: Vec2,
    next_unseen: u32,
    glance: Option<Glance>,
    seen_tips: VecDeque<Vec2>,
}

/// What the eyes are heading for: the intended target, or past it to the next one.
#[derive(Debug, Clone, Copy, PartialEq)]
struct GazeGoal {
    intent: Option<TargetId>,
    ahead: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Glance {
    target: TargetId,
    from: f64,
    until: f64,
}

impl UserState {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            rng,
            tracked: true,
            handle: Vec2::zeros(),
            intent: None,
            intent_fixated: false,
            last_progress: 0.0,
            last_progress_time: 0.0,
            gaze_goal: GazeGoal { intent: None, ahead: false },
            goal_since: 0.0,
            fixated: None,
            gaze_rest: Vec2::zeros(),
            next_unseen: 0,
            glance: None,
            seen_tips: VecDeque::new(),
        }
    }

    pub fn tracked(&self) -> bool {
        self.tracked
    }

    pub fn handle(&self) -> Vec2 {
        self.handle
    }
}

fn hopeless(t: &Target, config: &GameConfig) -> bool {
    t.remaining_lase() > t.time_to_bottom(config.bottom_y())
}

fn reach_speed(mode: BehaviorMode, params: &UserParams) -> f64 {
    match mode {
        BehaviorMode::Cooperative => params.assisted_reach_speed,
        _ => params.handle_speed_limit,
    }
}

fn pick_intent(
    game: &GameState,
    from: Vec2,
    exclude: Option<TargetId>,
    mode: BehaviorMode,
    params: &UserParams,
    config: &GameConfig,
) -> Option<TargetId> {
    earliest_deadline(game.open_tasks().filter(|t| Some(t.id) != exclude), from, reach_speed(mode, params), config)
}

/// Advances the simulated user by one tick. `tip` is the tool tip as it was
/// left by the previous tick.
#[allow(clippy::too_many_arguments)]
pub fn user_step(
    game: &GameState,
    tip: Vec2,
    mode: BehaviorMode,
    screen: &ScreenPlane,
    config: &GameConfig,
    params: &UserParams,
    state: &mut UserState,
    dt: f64,
) -> Result<UserTickOutput> {
    let now = game.time;

    let current = state.intent.and_then(|id| game.target(id)).filter(|t| t.is_open_task() && !hopeless(t, config));
    let intent = match current {
        Some(t) => Some(t.id),
        None => {
            // A target already looked ahead to is taken over if still winnable.
            let looked_at = state
                .fixated
                .and_then(|id| game.target(id))
                .filter(|t| t.is_open_task() && !hopeless(t, config))
                .map(|t| t.id);
            let next = looked_at.or_else(|| pick_intent(game, state.handle, None, mode, params, config));
            state.intent_fixated = next.is_some() && next == state.fixated;
            state.last_progress = 0.0;
            state.last_progress_time = now;
            next
        }
    };
    state.intent = intent;
    let intent_target = intent.and_then(|id| game.target(id));

    if let Some(t) = intent_target {
        if t.accumulated_lase > state.last_progress {
            state.last_progress = t.accumulated_lase;
            state.last_progress_time = now;
        }
    }
    let progressing = now - state.last_progress_time <= params.reaction_delay + 1e-9;
    let ahead = intent_target
        .is_some_and(|t| state.intent_fixated && progressing && t.remaining_lase() <= params.lookahead_lead);
    let goal = GazeGoal { intent, ahead };
    if goal != state.gaze_goal {
        state.gaze_goal = goal;
        state.goal_since = now;
    }
    if now - state.goal_since >= params.reaction_delay - 1e-9 {
        state.fixated = if ahead {
            // Stay on the target already looked ahead to while it remains worth it.
            let kept = state
                .fixated
                .filter(|id| Some(*id) != intent)
                .and_then(|id| game.target(id))
                .filter(|t| t.is_open_task() && !hopeless(t, config))
                .map(|t| t.id);
            kept.or_else(|| pick_intent(game, state.handle, intent, mode, params, config)).or(intent)
        } else {
            intent
        };
    }
    if state.fixated.is_some() && state.fixated == intent {
        state.intent_fixated = true;
    }

    let unseen = state.next_unseen;
    for t in game.targets.iter().filter(|t| t.id.0 >= unseen) {
        state.next_unseen = state.next_unseen.max(t.id.0 + 1);
        let idle = state.glance.is_none_or(|g| g.until <= now);
        if idle && params.glance_probability > 0.0 && state.rng.random_bool(params.glance_probability) {
            let from = now + params.reaction_delay;
            state.glance = Some(Glance { target: t.id, from, until: from + params.glance_dwell });
        }
    }
    let glancing = state
        .glance
        .filter(|g| g.from <= now + 1e-9 && now < g.until - 1e-9)
        .and_then(|g| game.target(g.target))
        .map(|t| t.id);

    let fixated_id = glancing.or(state.fixated);
    let fixated_target = fixated_id.and_then(|id| game.target(id));
    let mut gaze = match fixated_target {
        Some(t) => t.position,
        None if fixated_id.is_none() => Vec2::zeros(),
        // The fixated target just vanished; the eyes stay put until the next saccade.
        None => state.gaze_rest,
    };
    // The eyes react to the tip as it was seen one reaction time ago.
    state.seen_tips.push_back(tip);
    let delay_ticks = libm::round(params.reaction_delay / dt) as usize;
    while state.seen_tips.len() > delay_ticks + 1 {
        state.seen_tips.pop_front();
    }
    if mode == BehaviorMode::Slave {
        let seen = state.seen_tips.front().copied().unwrap_or(tip);
        gaze += (seen - gaze) * params.slave_gaze_pull;
    }
    state.gaze_rest = gaze;

    state.tracked = dropout_step(state.tracked, &params.dropout, &mut state.rng);
    let measured_gaze = if state.tracked {
        Some(apply_gaze_noise(gaze, tip, screen, params, &mut state.rng)?.ray)
    } else {
        None
    };

    if let (Some(t), true) = (intent_target, state.intent_fixated) {
        let goal = t.position + Vec2::new(0.0, t.speed * params.pursuit_lag);
        let delta = goal - state.handle;
        let step = params.handle_speed_limit * dt;
        let dist = delta.norm();
        state.handle = if dist <= step { goal } else { state.handle + delta * (step / dist) };
    }
    let mut handle_aim_point = state.handle;
    if params.aim_jitter > 0.0 {
        let n = Normal::new(0.0, params.aim_jitter).map_err(|_| Error::InvalidConfig("aim jitter".into()))?;
        handle_aim_point += Vec2::new(n.sample(&mut state.rng), n.sample(&mut state.rng));
    }

    let trigger = state.intent_fixated
        && intent_target.is_some_and(|t| (t.position - tip).norm() < config.laser_range);

    Ok(UserTickOutput {
        true_gaze_point: gaze,
        measured_gaze,
        handle_aim_point,
        trigger,
        intent,
        fixated: fixated_id.filter(|_| fixated_target.is_some()),
    })
}

/// The screen frame used by headless trials: screen centre at the world origin.
pub fn default_screen(config: &GameConfig) -> Result<ScreenPlane> {
    let pose = Pose::translation_only(FrameId::World, FrameId::ScreenCentre, Vec3::zeros());
    ScreenPlane::new(pose, config.screen_width, config.screen_height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{required_lase_time, SpawnOrigin, TargetKind, TargetState, TickInput};
    use crate::geometry::angle_between;
    use approx::assert_abs_diff_eq;

    fn quiet() -> GameConfig {
        GameConfig { task_spawn_interval: 1e9, distractor_spawn_interval: 1e9, ..GameConfig::default() }
    }

    fn add(g: &mut GameState, c: &GameConfig, id: u32, x: f64, y: f64, speed: f64) {
        g.targets.push(Target {
            id: TargetId(id),
            kind: TargetKind::Task,
            position: Vec2::new(x, y),
            speed,
            required_lase_time: required_lase_time(speed, c),
            accumulated_lase: 0.0,
            state: TargetState::Falling,
            origin: SpawnOrigin::Random,
        });
    }

    fn ideal() -> UserParams {
        UserParams {
            reaction_delay: 0.0,
            handle_speed_limit: 1e9,
            aim_jitter: 0.0,
            gaze_noise_model: LinearErrorModel::new(0.0, 0.0),
            gaze_noise_sd: 0.0,
            dropout: DropoutParams::NONE,
            pursuit_lag: 0.0,
            glance_probability: 0.0,
            ..UserParams::default()
        }
    }

    #[test]
    fn calibrated_dropout_closed_form() {
        let d = DropoutParams::CALIBRATED;
        assert_abs_diff_eq!(d.stationary_untracked(), 0.499, epsilon = 1e-12);
        assert_abs_diff_eq!(d.long_gap_share(10), 0.051, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_chain_half_untracked() {
        let d = DropoutParams { a: 0.2, b: 0.2 };
        assert_eq!(d.stationary_untracked(), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tracked = true;
        let n = 200_000;
        let untracked = (0..n).filter(|_| {
            tracked = dropout_step(tracked, &d, &mut rng);
            !tracked
        });
        let share = untracked.count() as f64 / n as f64;
        assert!((share - 0.5).abs() < 0.01, "{share}");
    }

    #[test]
    fn zero_noise_is_identity() {
        let c = GameConfig::default();
        let s = default_screen(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Vec2::new(120.0, -40.0);
        let n = apply_gaze_noise(p, Vec2::zeros(), &s, &ideal(), &mut rng).unwrap();
        let hit = n.point.unwrap();
        assert_abs_diff_eq!(hit.x, p.x, epsilon = 1e-9);
        assert_abs_diff_eq!(hit.y, p.y, epsilon = 1e-9);
    }

    #[test]
    fn two_degree_displacement() {
        let c = GameConfig::default();
        let s = default_screen(&c).unwrap();
        let params = UserParams { gaze_noise_model: LinearErrorModel::new(2.0, 0.0), gaze_noise_sd: 0.0, ..ideal() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // From straight ahead, the displacement is d·tan(2°) = 24.44 mm in every direction.
        for _ in 0..20 {
            let n = apply_gaze_noise(Vec2::zeros(), Vec2::zeros(), &s, &params, &mut rng).unwrap();
            assert_abs_diff_eq!(n.point.unwrap().norm(), 700.0 * libm::tan(2f64.to_radians()), epsilon = 1e-9);
            assert_abs_diff_eq!(n.point.unwrap().norm(), 24.44, epsilon = 0.01);
        }
    }

    #[test]
    fn mean_angular_deviation_matches_model() {
        let c = GameConfig::default();
        let s = default_screen(&c).unwrap();
        let params = UserParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let true_point = Vec2::new(100.0, 50.0);
        let tip = Vec2::new(-200.0, -100.0);
        let eye = s.point_in_front(&Vec2::zeros(), params.eye_distance);
        let clean = s.to_parent(&true_point) - eye;
        let dphi = angle_between(&clean, &(s.to_parent(&tip) - eye));
        let expected = params.gaze_noise_model.predict_error(dphi);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| {
                let g = apply_gaze_noise(true_point, tip, &s, &params, &mut rng).unwrap();
                angle_between(&g.ray.direction, &clean)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean / expected - 1.0).abs() < 0.02, "mean {mean} vs {expected}");
    }

    #[test]
    fn empty_screen_idles_at_centre() {
        let c = quiet();
        let s = default_screen(&c).unwrap();
        let g = GameState::new(&c, 1, 0, BehaviorMode::Manual);
        let mut st = UserState::new(9);
        let out = user_step(&g, Vec2::zeros(), BehaviorMode::Manual, &s, &c, &UserParams::default(), &mut st, c.dt()).unwrap();
        assert_eq!(out.true_gaze_point, Vec2::zeros());
        assert!(!out.trigger);
        assert_eq!(out.intent, None);
    }

    fn play(game: &mut GameState, c: &GameConfig, params: &UserParams, ticks: usize, mode: BehaviorMode) -> alloc::vec::Vec<UserTickOutput> {
        let s = default_screen(c).unwrap();
        let mut st = UserState::new(5);
        let mut tip = Vec2::zeros();
        let mut outs = alloc::vec::Vec::new();
        for _ in 0..ticks {
            let out = user_step(game, tip, mode, &s, c, params, &mut st, c.dt()).unwrap();
            tip = out.handle_aim_point;
            game.tick(&TickInput { tip, trigger: out.trigger, laser_override: false, locked_target: None }, c);
            outs.push(out);
        }
        outs
    }

    #[test]
    fn ideal_manual_player_completes_single_target() {
        let c = quiet();
        let mut g = GameState::new(&c, 1, 0, BehaviorMode::Manual);
        add(&mut g, &c, 0, 300.0, 200.0, 300.0);
        play(&mut g, &c, &ideal(), 200, BehaviorMode::Manual);
        assert_eq!(g.score.completed, 1);
    }

    #[test]
    fn time_budget_with_finite_handle() {
        // Travel 400 mm at 600 mm/s less the 100 mm laser reach: 0.5 s; τ(150) = 1.6 s.
        let c = quiet();
        let params = UserParams { handle_speed_limit: 600.0, ..ideal() };
        let budget = |y: f64| (y - c.bottom_y()) / 150.0;
        let mut ok = GameState::new(&c, 1, 0, BehaviorMode::Manual);
        add(&mut ok, &c, 0, 400.0, c.bottom_y() + 150.0 * 2.3, 150.0);
        assert!(budget(ok.targets[0].position.y) > 0.5 + 1.6);
        play(&mut ok, &c, &params, 300, BehaviorMode::Manual);
        assert_eq!(ok.score.completed, 1);
        let mut late = GameState::new(&c, 1, 0, BehaviorMode::Manual);
        add(&mut late, &c, 0, 400.0, c.bottom_y() + 150.0 * 1.9, 150.0);
        play(&mut late, &c, &params, 300, BehaviorMode::Manual);
        assert_eq!(late.score.completed, 0);
    }

    #[test]
    fn gaze_leads_to_next_target_before_completion() {
        let c = quiet();
        let mut g = GameState::new(&c, 1, 0, BehaviorMode::Cooperative);
        add(&mut g, &c, 0, 0.0, 200.0, 200.0);
        add(&mut g, &c, 1, -300.0, 250.0, 100.0);
        let params = UserParams { reaction_delay: 0.1, ..ideal() };
        let outs = play(&mut g, &c, &params, 200, BehaviorMode::Cooperative);
        let first_switch = outs.iter().position(|o| o.fixated == Some(TargetId(1))).unwrap();
        assert_eq!(outs[first_switch].intent, Some(TargetId(0)), "gaze left before the first target was done");
    }

    #[test]
    fn gaze_precedes_trigger() {
        let c = GameConfig::default();
        let mut g = GameState::new(&c, 17, 0, BehaviorMode::Manual);
        let outs = play(&mut g, &c, &UserParams::default(), 3000, BehaviorMode::Manual);
        let mut first_fix = alloc::collections::BTreeMap::new();
        for (k, o) in outs.iter().enumerate() {
            if let Some(f) = o.fixated {
                first_fix.entry(f).or_insert(k);
            }
            if o.trigger {
                let id = o.intent.unwrap();
                assert!(first_fix.get(&id).is_some_and(|&f| f <= k), "trigger on {id} before fixation");
            }
        }
        assert!(g.score.completed > 0);
    }

    #[test]
    fn deterministic_given_seed() {
        let c = GameConfig::default();
        let run = || {
            let mut g = GameState::new(&c, 8, 0, BehaviorMode::Slave);
            play(&mut g, &c, &UserParams::default(), 600, BehaviorMode::Slave)
        };
        assert_eq!(run(), run());
    }
}
