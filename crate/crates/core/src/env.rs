//! Bounded 2D predator-navigation world.
//!
//! The agent steers with `(u, ω)`: heading turns by `turn_gain·tanh(ω)` and
//! the agent advances `agent_speed_scale·tanh(u)` along the new heading. A
//! predator pursues the agent at constant speed. Episodes end on reaching
//! food, colliding with an obstacle or the boundary, or after `max_steps`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OBS_DIM: usize = 10;
pub const ACTION_DIM: usize = 2;

/// Per-step time cost.
pub const STEP_COST: f64 = 0.01;
pub const FOOD_REWARD: f64 = 10.0;
pub const PREDATOR_CONTACT_PENALTY: f64 = 25.0;
pub const PREDATOR_PROXIMITY_SLOPE: f64 = 2.0;
pub const COLLISION_PENALTY: f64 = 10.0;
pub const OBSTACLE_PROXIMITY_SLOPE: f64 = 1.5;

/// Minimum centre distance between obstacles and the agent start, the food, and each other.
pub const OBSTACLE_SEPARATION: f64 = 2.5;
/// Minimum start distance from the agent to both predator and food.
pub const AGENT_START_CLEARANCE: f64 = 6.0;
pub const PLACEMENT_RETRIES: usize = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (o - self).norm()
    }

    /// Unit vector, or zero for a zero-length input.
    pub fn unit_or_zero(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 { Vec2::new(self.x / n, self.y / n) } else { Vec2::ZERO }
    }

    /// Expresses a world-frame vector in a frame rotated by `heading`.
    pub fn to_frame(self, heading: f64) -> Vec2 {
        let (s, c) = heading.sin_cos();
        Vec2::new(self.x * c + self.y * s, -self.x * s + self.y * c)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub world_half_extent: f64,
    pub n_obstacles: usize,
    pub obstacle_radius: f64,
    pub food_radius: f64,
    pub agent_radius: f64,
    pub predator_speed: f64,
    pub agent_speed_scale: f64,
    pub turn_gain: f64,
    pub max_steps: usize,
    pub predator_penalty_radius: f64,
    pub predator_proximity_radius: f64,
    pub obstacle_proximity_radius: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            world_half_extent: 10.0,
            n_obstacles: 5,
            obstacle_radius: 1.0,
            food_radius: 0.5,
            agent_radius: 0.3,
            predator_speed: 0.15,
            agent_speed_scale: 0.2,
            turn_gain: 0.15,
            max_steps: 256,
            predator_penalty_radius: 2.5,
            predator_proximity_radius: 3.0,
            obstacle_proximity_radius: 1.5,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("world_half_extent", self.world_half_extent),
            ("obstacle_radius", self.obstacle_radius),
            ("food_radius", self.food_radius),
            ("agent_radius", self.agent_radius),
            ("predator_speed", self.predator_speed),
            ("agent_speed_scale", self.agent_speed_scale),
            ("turn_gain", self.turn_gain),
            ("predator_penalty_radius", self.predator_penalty_radius),
            ("predator_proximity_radius", self.predator_proximity_radius),
            ("obstacle_proximity_radius", self.obstacle_proximity_radius),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("env.{name} must be finite and > 0, got {v}")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::Config("env.max_steps must be >= 1".into()));
        }
        if self.agent_radius >= self.world_half_extent {
            return Err(Error::Config("agent does not fit in the world".into()));
        }
        Ok(())
    }

    /// Largest coordinate magnitude the agent centre may take.
    pub fn agent_limit(&self) -> f64 {
        self.world_half_extent - self.agent_radius
    }

    /// Distance reported when there are no obstacles.
    pub fn no_obstacle_distance(&self) -> f64 {
        2.0 * self.world_half_extent
    }
}

/// Full simulator state. Dynamics are deterministic; `rng` is only used for placement.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub config: EnvConfig,
    pub agent_pos: Vec2,
    pub heading: f64,
    pub food_pos: Vec2,
    pub obstacles: Vec<Vec2>,
    pub predator_pos: Vec2,
    pub step_count: usize,
    pub terminated: bool,
    rng: ChaCha8Rng,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub values: [f64; OBS_DIM],
}

impl Observation {
    pub const FOOD_DIR: std::ops::Range<usize> = 0..2;
    pub const OBSTACLE_DIR: std::ops::Range<usize> = 2..4;
    pub const HEADING: std::ops::Range<usize> = 4..6;
    pub const FOOD_DIST: usize = 6;
    pub const OBSTACLE_DIST: usize = 7;
    pub const PREDATOR_DIR: std::ops::Range<usize> = 8..10;

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    Running,
    FoodReached,
    Collision,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub termination_reason: TerminationReason,
    /// Post-move agent–predator distance.
    pub d_pred: f64,
    /// Post-move distance from the agent centre to the nearest obstacle surface.
    pub d_obs: f64,
}

/// Instantaneous reward from post-move quantities.
pub fn reward(cfg: &EnvConfig, d_pred: f64, d_obs: f64, food_reached: bool, collision: bool) -> f64 {
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    -STEP_COST + FOOD_REWARD * ind(food_reached)
        - PREDATOR_CONTACT_PENALTY * ind(d_pred < cfg.predator_penalty_radius)
        - PREDATOR_PROXIMITY_SLOPE * (cfg.predator_proximity_radius - d_pred).max(0.0)
        - COLLISION_PENALTY * ind(collision)
        - OBSTACLE_PROXIMITY_SLOPE * (cfg.obstacle_proximity_radius - d_obs).max(0.0)
}

fn sample_point(rng: &mut ChaCha8Rng, limit: f64) -> Vec2 {
    Vec2::new(rng.gen_range(-limit..=limit), rng.gen_range(-limit..=limit))
}

fn place(
    rng: &mut ChaCha8Rng,
    limit: f64,
    what: &str,
    ok: impl Fn(Vec2) -> bool,
) -> Result<Vec2> {
    for _ in 0..PLACEMENT_RETRIES {
        let p = sample_point(rng, limit);
        if ok(p) {
            return Ok(p);
        }
    }
    Err(Error::Config(format!(
        "could not place {what} after {PLACEMENT_RETRIES} attempts; world too crowded"
    )))
}

/// Places agent, food, predator and obstacles for a new episode.
pub fn reset(config: &EnvConfig, seed: u64) -> Result<(EnvState, Observation)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = config.world_half_extent;
    // Keep starts clear of the walls so the first step cannot collide.
    let margin = (config.agent_radius + 2.0 * config.agent_speed_scale).min(0.5 * l);
    let agent = sample_point(&mut rng, l - margin);
    let heading = rng.gen_range(-PI..PI);
    let food = place(&mut rng, l - config.food_radius.min(0.5 * l), "food", |p| {
        p.dist(agent) >= AGENT_START_CLEARANCE
    })?;
    let predator = place(&mut rng, l, "predator", |p| p.dist(agent) >= AGENT_START_CLEARANCE)?;
    let mut obstacles: Vec<Vec2> = Vec::with_capacity(config.n_obstacles);
    for _ in 0..config.n_obstacles {
        let o = place(&mut rng, l - config.obstacle_radius.min(0.5 * l), "obstacle", |p| {
            p.dist(agent) >= OBSTACLE_SEPARATION
                && p.dist(food) >= OBSTACLE_SEPARATION
                && obstacles.iter().all(|q| p.dist(*q) >= OBSTACLE_SEPARATION)
        })?;
        obstacles.push(o);
    }
    let state = EnvState {
        config: config.clone(),
        agent_pos: agent,
        heading,
        food_pos: food,
        obstacles,
        predator_pos: predator,
        step_count: 0,
        terminated: false,
        rng,
    };
    let obs = observe(&state);
    Ok((state, obs))
}

impl EnvState {
    /// Nearest obstacle centre and the surface distance to it (clamped at 0).
    pub fn nearest_obstacle(&self) -> Option<(Vec2, f64)> {
        self.obstacles
            .iter()
            .map(|&o| (o, self.agent_pos.dist(o)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(o, d)| (o, (d - self.config.obstacle_radius).max(0.0)))
    }

    pub fn obstacle_distance(&self) -> f64 {
        self.nearest_obstacle().map_or(self.config.no_obstacle_distance(), |(_, d)| d)
    }

    pub fn predator_distance(&self) -> f64 {
        self.agent_pos.dist(self.predator_pos)
    }

    /// Draws a fresh episode seed from this state's placement stream.
    pub fn next_seed(&mut self) -> u64 {
        self.rng.gen()
    }

    /// Advances one step in place.
    pub fn step_mut(&mut self, action: [f64; ACTION_DIM]) -> Result<StepResult> {
        if self.terminated {
            return Err(Error::Usage("step called on a terminated episode; reset first".into()));
        }
        if !action.iter().all(|a| a.is_finite()) {
            return Err(Error::numeric("env", format!("non-finite action {action:?}")));
        }
        let cfg = &self.config;
        let [u, omega] = action;
        self.heading += cfg.turn_gain * omega.tanh();
        let (s, c) = self.heading.sin_cos();
        let moved = self.agent_pos + Vec2::new(c, s) * (cfg.agent_speed_scale * u.tanh());
        let lim = cfg.agent_limit();
        let hit_wall = moved.x.abs() >= lim || moved.y.abs() >= lim;
        self.agent_pos = Vec2::new(moved.x.clamp(-lim, lim), moved.y.clamp(-lim, lim));

        let to_agent = self.agent_pos - self.predator_pos;
        let gap = to_agent.norm();
        let stride = cfg.predator_speed.min(gap);
        let l = cfg.world_half_extent;
        let p = self.predator_pos + to_agent.unit_or_zero() * stride;
        self.predator_pos = Vec2::new(p.x.clamp(-l, l), p.y.clamp(-l, l));
        self.step_count += 1;

        let cfg = &self.config;
        let d_pred = self.predator_distance();
        let hit_obstacle = self
            .obstacles
            .iter()
            .any(|&o| self.agent_pos.dist(o) < cfg.agent_radius + cfg.obstacle_radius);
        let d_obs = self.obstacle_distance();
        let collision = hit_wall || hit_obstacle;
        let food = self.agent_pos.dist(self.food_pos) < cfg.food_radius;
        let r = reward(cfg, d_pred, d_obs, food, collision);

        let reason = if collision {
            TerminationReason::Collision
        } else if food {
            TerminationReason::FoodReached
        } else if self.step_count >= cfg.max_steps {
            TerminationReason::Timeout
        } else {
            TerminationReason::Running
        };
        self.terminated = reason != TerminationReason::Running;
        Ok(StepResult {
            observation: observe(self),
            reward: r,
            terminated: self.terminated,
            termination_reason: reason,
            d_pred,
            d_obs,
        })
    }
}

/// Functional step: returns the successor state and the transition result.
pub fn step(state: &EnvState, action: [f64; ACTION_DIM]) -> Result<(EnvState, StepResult)> {
    let mut next = state.clone();
    let r = next.step_mut(action)?;
    Ok((next, r))
}

/// Builds the 10-dim observation; direction vectors are in the agent frame.
pub fn observe(state: &EnvState) -> Observation {
    let h = state.heading;
    let mut v = [0.0; OBS_DIM];
    let to_food = state.food_pos - state.agent_pos;
    let food_dir = to_food.unit_or_zero().to_frame(h);
    v[0] = food_dir.x;
    v[1] = food_dir.y;
    match state.nearest_obstacle() {
        Some((o, d)) => {
            let dir = (o - state.agent_pos).unit_or_zero().to_frame(h);
            v[2] = dir.x;
            v[3] = dir.y;
            v[7] = d;
        }
        None => v[7] = state.config.no_obstacle_distance(),
    }
    v[4] = h.cos();
    v[5] = h.sin();
    v[6] = to_food.norm();
    let pred_dir = (state.predator_pos - state.agent_pos).unit_or_zero().to_frame(h);
    v[8] = pred_dir.x;
    v[9] = pred_dir.y;
    Observation { values: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fresh(seed: u64) -> EnvState {
        reset(&EnvConfig::default(), seed).unwrap().0
    }

    /// Places everything by hand: no obstacles nearby, predator far away.
    fn staged(agent: Vec2, heading: f64, food: Vec2, predator: Vec2, obstacles: Vec<Vec2>) -> EnvState {
        let mut s = fresh(0);
        s.agent_pos = agent;
        s.heading = heading;
        s.food_pos = food;
        s.predator_pos = predator;
        s.obstacles = obstacles;
        s
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let cfg = EnvConfig::default();
        let (a, oa) = reset(&cfg, 42).unwrap();
        let (b, ob) = reset(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa.values.map(f64::to_bits), ob.values.map(f64::to_bits));
        let (c, _) = reset(&cfg, 43).unwrap();
        assert!(a.agent_pos != c.agent_pos || a.food_pos != c.food_pos || a.obstacles != c.obstacles);
    }

    #[test]
    fn reset_respects_separations() {
        let cfg = EnvConfig::default();
        for seed in 0..200 {
            let (s, _) = reset(&cfg, seed).unwrap();
            assert_eq!(s.obstacles.len(), 5);
            assert!(s.agent_pos.dist(s.food_pos) >= AGENT_START_CLEARANCE);
            assert!(s.agent_pos.dist(s.predator_pos) >= AGENT_START_CLEARANCE);
            for (i, o) in s.obstacles.iter().enumerate() {
                assert!(o.dist(s.agent_pos) >= OBSTACLE_SEPARATION);
                assert!(o.dist(s.food_pos) >= OBSTACLE_SEPARATION);
                for q in &s.obstacles[..i] {
                    assert!(o.dist(*q) >= OBSTACLE_SEPARATION);
                }
            }
            for p in [s.agent_pos, s.food_pos, s.predator_pos].iter().chain(&s.obstacles) {
                assert!(p.x.abs() <= 10.0 && p.y.abs() <= 10.0);
            }
            assert!((-PI..PI).contains(&s.heading));
        }
    }

    #[test]
    fn crowded_world_is_a_configuration_error() {
        let cfg = EnvConfig { world_half_extent: 3.0, n_obstacles: 40, ..EnvConfig::default() };
        assert!(matches!(reset(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = EnvConfig { food_radius: 0.0, ..EnvConfig::default() };
        assert!(reset(&cfg, 0).is_err());
        let cfg = EnvConfig { max_steps: 0, ..EnvConfig::default() };
        assert!(reset(&cfg, 0).is_err());
    }

    #[test]
    fn no_obstacle_convention() {
        let cfg = EnvConfig { n_obstacles: 0, ..EnvConfig::default() };
        let (_, obs) = reset(&cfg, 5).unwrap();
        assert_eq!(&obs.values[2..4], &[0.0, 0.0]);
        assert_eq!(obs.values[7], 20.0);
    }

    #[test]
    fn zero_action_keeps_pose() {
        let s = staged(Vec2::new(0.0, 0.0), 0.7, Vec2::new(8.0, 8.0), Vec2::new(-8.0, -8.0), vec![Vec2::new(0.0, 2.0)]);
        let (n, r) = step(&s, [0.0, 0.0]).unwrap();
        assert_eq!(n.heading, 0.7);
        assert_eq!(n.agent_pos, s.agent_pos);
        let d_obs = 1.0; // centre distance 2, radius 1
        let want = -0.01 - 2.0 * (3.0 - n.predator_distance()).max(0.0) - 1.5 * (1.5f64 - d_obs).max(0.0);
        assert_abs_diff_eq!(r.reward, want, epsilon = 1e-12);
        assert_abs_diff_eq!(r.reward, -0.01 - 0.75, epsilon = 1e-12);
    }

    #[test]
    fn predator_inside_penalty_radius() {
        // Predator lands at distance 2.0 after its 0.15 pursuit stride.
        let s = staged(Vec2::new(0.0, 0.0), 0.0, Vec2::new(8.0, 8.0), Vec2::new(2.15, 0.0), vec![Vec2::new(-6.0, 0.0)]);
        let (_, r) = step(&s, [0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(r.d_pred, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.d_obs, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.reward, -27.01, epsilon = 1e-12);
        assert!(!r.terminated, "predator contact is not terminal");
    }

    #[test]
    fn reaching_food_terminates_with_bonus() {
        let s = staged(Vec2::new(0.0, 0.0), 0.0, Vec2::new(0.3, 0.0), Vec2::new(-9.0, -9.0), vec![]);
        let (_, r) = step(&s, [5.0, 0.0]).unwrap();
        assert_eq!(r.termination_reason, TerminationReason::FoodReached);
        assert!(r.terminated);
        assert!(r.reward > 9.0);
    }

    #[test]
    fn obstacle_and_wall_collisions() {
        let s = staged(Vec2::new(0.0, 0.0), 0.0, Vec2::new(8.0, 8.0), Vec2::new(-9.0, -9.0), vec![Vec2::new(1.4, 0.0)]);
        let (_, r) = step(&s, [5.0, 0.0]).unwrap();
        assert_eq!(r.termination_reason, TerminationReason::Collision);
        let s = staged(Vec2::new(9.65, 0.0), 0.0, Vec2::new(-8.0, 8.0), Vec2::new(-9.0, -9.0), vec![]);
        let (n, r) = step(&s, [5.0, 0.0]).unwrap();
        assert_eq!(r.termination_reason, TerminationReason::Collision);
        assert!(n.agent_pos.x <= 9.7);
        assert!(step(&n, [0.0, 0.0]).is_err(), "terminated state cannot be stepped");
    }

    #[test]
    fn timeout_after_max_steps() {
        let cfg = EnvConfig { max_steps: 3, ..EnvConfig::default() };
        let (mut s, _) = reset(&cfg, 9).unwrap();
        let mut last = TerminationReason::Running;
        for _ in 0..3 {
            if s.terminated {
                break;
            }
            last = s.step_mut([0.0, 0.0]).unwrap().termination_reason;
        }
        assert_eq!(last, TerminationReason::Timeout);
        assert_eq!(s.step_count, 3);
    }

    #[test]
    fn observation_frame_examples() {
        let mut s = staged(Vec2::new(1.0, 1.0), 0.0, Vec2::new(4.0, 1.0), Vec2::new(-9.0, -9.0), vec![]);
        let o = observe(&s);
        assert_abs_diff_eq!(o.values[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.values[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.values[6], 3.0, epsilon = 1e-12);
        s.heading = PI / 2.0;
        let o = observe(&s);
        assert_abs_diff_eq!(o.values[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.values[1], -1.0, epsilon = 1e-12);
        s.food_pos = s.agent_pos;
        let o = observe(&s);
        assert_eq!(&o.values[0..2], &[0.0, 0.0]);
        assert_eq!(o.values[6], 0.0);
    }
}
