use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffcore::gradcheck::GradCheckReport;
use crate::diffcore::suite::primitive_suite;
use crate::diffcore::ParamStore;
use crate::env::{self, EnvConfig, EnvState, Vec2};
use crate::policies::check::policy_gradcheck;
use crate::policies::{forward, ArchKind, ArchitectureSpec};
use crate::Result;

/// Primitive suite plus every architecture unrolled for three steps.
pub fn gradcheck_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut reports = primitive_suite(seed)?;
    for kind in ArchKind::ALL {
        reports.push(policy_gradcheck(&ArchitectureSpec::default_for(kind), seed, 3, Some(4))?);
    }
    Ok(reports)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnvCheckReport {
    pub pairs: usize,
    pub max_reward_error: f64,
    pub max_heading_change: f64,
    pub max_heading_error: f64,
    pub collisions: usize,
    pub food: usize,
    pub predator_contacts: usize,
}

impl EnvCheckReport {
    pub const REWARD_TOL: f64 = 1e-9;

    pub fn passed(&self) -> bool {
        self.max_reward_error <= Self::REWARD_TOL && self.max_heading_change <= 0.15 && self.max_heading_error <= 1e-12
    }
}

impl std::fmt::Display for EnvCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} pairs: max reward error {:.3e}, max |dheading| {:.6}, heading error {:.3e} ({} collisions, {} food, {} predator contacts) {}",
            self.pairs,
            self.max_reward_error,
            self.max_heading_change,
            self.max_heading_error,
            self.collisions,
            self.food,
            self.predator_contacts,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Reward recomputed from the post-step geometry alone.
pub fn reward_oracle(s: &EnvState) -> (f64, bool, bool) {
    let c = &s.config;
    let a = s.agent_pos;
    let d_pred = a.dist(s.predator_pos);
    let d_obs = s
        .obstacles
        .iter()
        .map(|&o| (a.dist(o) - c.obstacle_radius).max(0.0))
        .fold(2.0 * c.world_half_extent, f64::min);
    let lim = c.world_half_extent - c.agent_radius;
    let collision = a.x.abs() >= lim
        || a.y.abs() >= lim
        || s.obstacles.iter().any(|&o| a.dist(o) < c.agent_radius + c.obstacle_radius);
    let food = a.dist(s.food_pos) < c.food_radius;
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let r = -0.01 + 10.0 * ind(food) - 25.0 * ind(d_pred < 2.5) - 2.0 * (3.0 - d_pred).max(0.0) - 10.0 * ind(collision)
        - 1.5 * (1.5 - d_obs).max(0.0);
    (r, collision, food)
}

fn near(rng: &mut ChaCha8Rng, centre: Vec2, radius: f64, limit: f64) -> Vec2 {
    let ang = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let d = rng.gen_range(0.0..radius);
    let p = centre + Vec2::new(ang.cos(), ang.sin()) * d;
    Vec2::new(p.x.clamp(-limit, limit), p.y.clamp(-limit, limit))
}

/// Compares `step` against [`reward_oracle`] on random state-action pairs,
/// with predators, obstacles and food often moved next to the agent.
pub fn env_check(config: &EnvConfig, pairs: usize, seed: u64) -> Result<EnvCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = EnvCheckReport { pairs, ..Default::default() };
    let l = config.world_half_extent;
    for _ in 0..pairs {
        let (mut s, _) = env::reset(config, rng.gen())?;
        for _ in 0..rng.gen_range(0..40) {
            let a = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            if s.step_mut(a)?.terminated {
                s = env::reset(config, rng.gen())?.0;
            }
        }
        if rng.gen_bool(0.5) {
            s.predator_pos = near(&mut rng, s.agent_pos, 4.0, l);
        }
        if rng.gen_bool(0.3) && !s.obstacles.is_empty() {
            let reach = config.agent_radius + config.obstacle_radius + 1.6;
            s.obstacles[0] = near(&mut rng, s.agent_pos, reach, l);
        }
        if rng.gen_bool(0.2) {
            s.food_pos = near(&mut rng, s.agent_pos, 1.0, l);
        }
        let action = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        let (next, res) = env::step(&s, action)?;
        let (r, collision, food) = reward_oracle(&next);
        rep.max_reward_error = rep.max_reward_error.max((res.reward - r).abs());
        let dh = next.heading - s.heading;
        rep.max_heading_change = rep.max_heading_change.max(dh.abs());
        rep.max_heading_error = rep.max_heading_error.max((dh - 0.15 * action[1].tanh()).abs());
        rep.collisions += collision as usize;
        rep.food += food as usize;
        rep.predator_contacts += (res.d_pred < 2.5) as usize;
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub u: f64,
    pub omega: f64,
    pub reward: f64,
    pub d_pred: f64,
    pub d_obs: f64,
    pub terminated: u8,
}

/// Runs the deterministic (mean-action) policy for one episode.
pub fn greedy_trajectory(arch: &ArchitectureSpec, params: &ParamStore<f64>, env_cfg: &EnvConfig, seed: u64) -> Result<Vec<TrajectoryRow>> {
    let mut policy = arch.build::<f64>(0);
    policy.params_mut().assign_from(params)?;
    let (mut s, mut obs) = env::reset(env_cfg, seed)?;
    let mut state = policy.initial_state(1);
    let mut rows = Vec::new();
    loop {
        let (out, next) = forward(policy.as_ref(), &[obs], &state)?;
        state = next;
        let action = out[0].action_mean;
        let r = s.step_mut(action)?;
        rows.push(TrajectoryRow {
            step: s.step_count,
            x: s.agent_pos.x,
            y: s.agent_pos.y,
            heading: s.heading,
            u: action[0],
            omega: action[1],
            reward: r.reward,
            d_pred: r.d_pred,
            d_obs: r.d_obs,
            terminated: r.terminated as u8,
        });
        if r.terminated {
            return Ok(rows);
        }
        obs = r.observation;
    }
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
