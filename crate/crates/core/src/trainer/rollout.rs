use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{Real, Tape};
use crate::env::{self, EnvConfig, EnvState, Observation, ACTION_DIM};
use crate::policies::{observation_batch, ActorCritic, PolicyOutput, RecurrentState};
use crate::{Error, Result};

/// Deterministic per-stream seed derived from a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.gen()
}

/// A batch of independent environments that reset themselves on termination.
#[derive(Clone, Debug)]
pub struct VecEnv {
    config: EnvConfig,
    envs: Vec<EnvState>,
    obs: Vec<Observation>,
    running_returns: Vec<f64>,
}

/// An automatic reset performed after a terminal step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResetEvent {
    pub step: usize,
    pub env: usize,
    pub seed: u64,
}

/// Result of stepping every environment once.
#[derive(Clone, Debug)]
pub struct VecStep {
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    /// Returns of the episodes that ended on this step.
    pub finished: Vec<f64>,
    /// `(env, seed)` of each automatic reset.
    pub resets: Vec<(usize, u64)>,
}

impl VecEnv {
    /// Environment `i` starts from `derive_seed(seed, i)`.
    pub fn new(config: &EnvConfig, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("at least one environment is required".into()));
        }
        let mut envs = Vec::with_capacity(n);
        let mut obs = Vec::with_capacity(n);
        for i in 0..n {
            let (s, o) = env::reset(config, derive_seed(seed, i as u64))?;
            envs.push(s);
            obs.push(o);
        }
        Ok(VecEnv { config: config.clone(), envs, obs, running_returns: vec![0.0; n] })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn states(&self) -> &[EnvState] {
        &self.envs
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Returns accumulated so far by the episodes currently in progress.
    pub fn running_returns(&self) -> &[f64] {
        &self.running_returns
    }

    /// Steps every environment; terminated ones are reset with a seed drawn
    /// from their own placement stream.
    pub fn step(&mut self, actions: &[[f64; ACTION_DIM]]) -> Result<VecStep> {
        if actions.len() != self.envs.len() {
            return Err(Error::shape("VecEnv::step", format!("{} actions for {} envs", actions.len(), self.envs.len())));
        }
        let n = self.envs.len();
        let mut out = VecStep {
            rewards: Vec::with_capacity(n),
            terminated: Vec::with_capacity(n),
            finished: Vec::new(),
            resets: Vec::new(),
        };
        for (i, &a) in actions.iter().enumerate() {
            let r = self.envs[i].step_mut(a)?;
            if !r.reward.is_finite() {
                return Err(Error::numeric("rollout", format!("env {i}: non-finite reward for action {a:?}")));
            }
            self.running_returns[i] += r.reward;
            out.rewards.push(r.reward);
            out.terminated.push(r.terminated);
            if r.terminated {
                out.finished.push(self.running_returns[i]);
                self.running_returns[i] = 0.0;
                let seed = self.envs[i].next_seed();
                let (s, o) = env::reset(&self.config, seed)?;
                self.envs[i] = s;
                self.obs[i] = o;
                out.resets.push((i, seed));
            } else {
                self.obs[i] = r.observation;
            }
        }
        Ok(out)
    }
}

/// On-policy experience from one rollout, stored time-major (`t * n_envs + env`).
#[derive(Clone, Debug)]
pub struct RolloutBuffer<F> {
    pub n_envs: usize,
    pub len: usize,
    pub observations: Vec<Observation>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminated: Vec<bool>,
    /// Recurrent state at the first step of the rollout.
    pub initial_state: RecurrentState<F>,
    /// `V` of the observation after the last step, zero where that step terminated.
    pub bootstrap_values: Vec<f64>,
    /// Insect diagnostics, one row per sample.
    pub mode_probs: Option<Vec<Vec<f64>>>,
    pub arbiter_weights: Option<Vec<Vec<f64>>>,
    pub commands: Option<Vec<Vec<f64>>>,
    /// Returns of episodes that ended during this rollout.
    pub completed_returns: Vec<f64>,
    /// Mean return-so-far of the episodes still running at the end.
    pub partial_return_mean: f64,
    pub resets: Vec<ResetEvent>,
}

impl<F: Real> RolloutBuffer<F> {
    pub fn index(&self, t: usize, env: usize) -> usize {
        t * self.n_envs + env
    }

    pub fn samples(&self) -> usize {
        self.n_envs * self.len
    }

    /// Per-environment column of a time-major field.
    pub fn column<T: Copy>(&self, field: &[T], env: usize) -> Vec<T> {
        (0..self.len).map(|t| field[self.index(t, env)]).collect()
    }

    /// Actions of step `t` flattened for the tape.
    pub fn step_actions(&self, t: usize) -> Vec<F> {
        self.actions[t * self.n_envs..(t + 1) * self.n_envs]
            .iter()
            .flat_map(|a| a.iter().map(|&x| F::lit(x)))
            .collect()
    }

    /// Keep-mask for the recurrent state entering step `t`.
    pub fn keep_mask(&self, t: usize) -> Vec<bool> {
        if t == 0 {
            return vec![true; self.n_envs];
        }
        self.terminated[(t - 1) * self.n_envs..t * self.n_envs].iter().map(|&d| !d).collect()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.samples();
        let lens = [self.observations.len(), self.actions.len(), self.log_probs.len(), self.rewards.len(), self.values.len(), self.terminated.len()];
        if lens.iter().any(|&l| l != n) || self.bootstrap_values.len() != self.n_envs {
            return Err(Error::shape("RolloutBuffer", format!("expected {n} samples, field lengths {lens:?}")));
        }
        if !self.log_probs.iter().chain(&self.values).all(|v| v.is_finite()) {
            return Err(Error::numeric("rollout", "non-finite log-probability or value"));
        }
        Ok(())
    }
}

/// Draws an action from `N(mean, diag(exp(log_std)^2))`, rounded to `F`.
fn sample_action<F: Real>(out: &PolicyOutput, rng: &mut ChaCha8Rng) -> [f64; ACTION_DIM] {
    let mut a = [0.0; ACTION_DIM];
    for j in 0..ACTION_DIM {
        let eps: f64 = rng.sample(StandardNormal);
        a[j] = F::lit(out.action_mean[j] + out.action_log_std[j].exp() * eps).f64();
    }
    a
}

/// Runs `len` batched steps, advancing `envs` and `state` in place.
///
/// Recurrent rows of environments that terminate are re-initialised before the
/// next step, exactly as the update pass replays them.
pub fn collect_rollout<F: Real>(
    envs: &mut VecEnv,
    policy: &dyn ActorCritic<F>,
    state: &mut RecurrentState<F>,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBuffer<F>> {
    let n = envs.len();
    let insect = policy.kind() == crate::policies::ArchKind::Insect;
    let mut buf = RolloutBuffer {
        n_envs: n,
        len,
        observations: Vec::with_capacity(n * len),
        actions: Vec::with_capacity(n * len),
        log_probs: Vec::with_capacity(n * len),
        rewards: Vec::with_capacity(n * len),
        values: Vec::with_capacity(n * len),
        terminated: Vec::with_capacity(n * len),
        initial_state: state.clone(),
        bootstrap_values: vec![0.0; n],
        mode_probs: insect.then(Vec::new),
        arbiter_weights: insect.then(Vec::new),
        commands: insect.then(Vec::new),
        completed_returns: Vec::new(),
        partial_return_mean: 0.0,
        resets: Vec::new(),
    };
    let fill = policy.state_fill();
    let mut tape = Tape::new();
    for t in 0..len {
        tape.reset();
        let bound = tape.bind(policy.params());
        let obs = envs.observations().to_vec();
        let o = tape.constant(observation_batch(&obs));
        let s = state.to_tape(&mut tape);
        let (vars, next) = policy.step(&mut tape, &bound, o, &s)?;
        let outs = PolicyOutput::from_step(&tape, &vars);
        let actions: Vec<[f64; ACTION_DIM]> = outs.iter().map(|o| sample_action::<F>(o, rng)).collect();
        if let Some(bad) = actions.iter().find(|a| !a.iter().all(|x| x.is_finite())) {
            return Err(Error::numeric("rollout", format!("step {t}: non-finite action {bad:?}")));
        }
        let flat: Vec<F> = actions.iter().flat_map(|a| a.iter().map(|&x| F::lit(x))).collect();
        let lp = tape.gaussian_log_prob(vars.mean, vars.log_std, &flat)?;
        let lp = tape.value(lp).to_f64();

        let res = envs.step(&actions)?;
        *state = RecurrentState::from_tape(policy.kind(), &tape, &next);
        for &(i, seed) in &res.resets {
            state.set_row(i, &fill);
            buf.resets.push(ResetEvent { step: t, env: i, seed });
        }
        buf.completed_returns.extend(&res.finished);
        buf.observations.extend(obs);
        buf.actions.extend(&actions);
        buf.log_probs.extend(lp);
        buf.rewards.extend(&res.rewards);
        buf.terminated.extend(&res.terminated);
        for o in outs {
            buf.values.push(o.value);
            if insect {
                buf.mode_probs.as_mut().unwrap().push(o.mode_probs.unwrap_or_default());
                buf.arbiter_weights.as_mut().unwrap().push(o.arbiter_weights.unwrap_or_default());
                buf.commands.as_mut().unwrap().push(o.command.unwrap_or_default());
            }
        }
    }
    if len > 0 {
        tape.reset();
        let bound = tape.bind(policy.params());
        let o = tape.constant(observation_batch(envs.observations()));
        let s = state.to_tape(&mut tape);
        let (vars, _) = policy.step(&mut tape, &bound, o, &s)?;
        let v = tape.value(vars.value).to_f64();
        for i in 0..n {
            let done = buf.terminated[(len - 1) * n + i];
            buf.bootstrap_values[i] = if done { 0.0 } else { v[i] };
        }
    }
    buf.partial_return_mean = envs.running_returns().iter().sum::<f64>() / n as f64;
    buf.check()?;
    Ok(buf)
}
