mod gae;
mod ppo;
mod rollout;

pub use gae::{compute_gae, normalize};
pub use ppo::{clip_fraction, compute_targets, ppo_gradients, ppo_loss, ppo_update, LossStats, Targets, UpdateStats};
pub use rollout::{collect_rollout, derive_seed, ResetEvent, RolloutBuffer, VecEnv, VecStep};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamState, Real};
use crate::env::EnvConfig;
use crate::policies::{ActorCritic, ArchitectureSpec, RecurrentState};
use crate::{Error, Result};

const POLICY_STREAM: u64 = 1 << 40;
const ENV_STREAM: u64 = (1 << 40) + 1;
const SAMPLE_STREAM: u64 = (1 << 40) + 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_envs: usize,
    pub rollout_len: usize,
    pub n_updates: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub n_epochs: usize,
    pub c_v: f64,
    pub c_h: f64,
    pub lambda_1: f64,
    pub lambda_m: f64,
    pub lambda_a: f64,
    /// Global gradient-norm bound, applied when `clip_grad` is set.
    pub max_grad_norm: f64,
    pub clip_grad: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_envs: 16,
            rollout_len: 256,
            n_updates: 75,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            lr: 3e-4,
            n_epochs: 4,
            c_v: 0.5,
            c_h: 0.01,
            lambda_1: 0.01,
            lambda_m: 0.01,
            lambda_a: 0.01,
            max_grad_norm: 0.5,
            clip_grad: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn grad_clip(&self) -> Option<f64> {
        self.clip_grad.then_some(self.max_grad_norm)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if self.n_envs == 0 || self.rollout_len == 0 || self.n_epochs == 0 {
            return bad("n_envs, rollout_len and n_epochs must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) || !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("clip_eps must be positive and lr non-negative");
        }
        if self.clip_grad && !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        let coefs = [self.c_v, self.c_h, self.lambda_1, self.lambda_m, self.lambda_a];
        if coefs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return bad("loss coefficients must be finite and non-negative");
        }
        Ok(())
    }
}

/// Diagnostics for one PPO update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 1-based.
    pub update: usize,
    pub mean_return: f64,
    /// No episode finished during the rollout; `mean_return` is the mean partial return.
    pub return_provisional: bool,
    pub value_loss: f64,
    pub policy_entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub command_l1: Option<f64>,
    pub mode_entropy: Option<f64>,
    pub module_entropy: Option<f64>,
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn categorical_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Entropy of a diagonal Gaussian with the given log standard deviations.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|l| crate::diffcore::HALF_LN_2PI_E + l).sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Mean absolute command component.
    pub command_l1: Option<f64>,
    pub mode_entropy: Option<f64>,
    pub module_entropy: Option<f64>,
}

/// Rollout-level modular diagnostics; all absent for the baselines.
pub fn diagnostics<F: Real>(buf: &RolloutBuffer<F>) -> Diagnostics {
    let mean_entropy = |rows: &Option<Vec<Vec<f64>>>| {
        rows.as_ref()
            .filter(|r| !r.is_empty())
            .map(|r| r.iter().map(|p| categorical_entropy(p)).sum::<f64>() / r.len() as f64)
    };
    let command_l1 = buf.commands.as_ref().filter(|c| !c.is_empty()).map(|c| {
        let n: usize = c.iter().map(Vec::len).sum();
        c.iter().flatten().map(|x| x.abs()).sum::<f64>() / n.max(1) as f64
    });
    Diagnostics {
        command_l1,
        mode_entropy: mean_entropy(&buf.mode_probs),
        module_entropy: mean_entropy(&buf.arbiter_weights),
    }
}

/// One training run: environments, policy, optimiser and sampling stream.
pub struct Trainer<F: Real> {
    config: TrainConfig,
    policy: Box<dyn ActorCritic<F>>,
    adam: AdamState<F>,
    envs: VecEnv,
    state: RecurrentState<F>,
    rng: ChaCha8Rng,
    updates: usize,
}

impl<F: Real> Trainer<F> {
    pub fn new(arch: &ArchitectureSpec, env: &EnvConfig, config: &TrainConfig) -> Result<Self> {
        let policy = arch.build::<F>(derive_seed(config.seed, POLICY_STREAM));
        Self::with_policy(policy, env, config)
    }

    pub fn with_policy(policy: Box<dyn ActorCritic<F>>, env: &EnvConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        let env_seed = derive_seed(config.seed, ENV_STREAM) ^ env.seed;
        let envs = VecEnv::new(env, config.n_envs, env_seed)?;
        let state = policy.initial_state(config.n_envs);
        Ok(Trainer {
            config: config.clone(),
            adam: AdamState::new(policy.params()),
            policy,
            envs,
            state,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SAMPLE_STREAM)),
            updates: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn policy(&self) -> &dyn ActorCritic<F> {
        self.policy.as_ref()
    }

    pub fn updates_done(&self) -> usize {
        self.updates
    }

    pub fn collect(&mut self) -> Result<RolloutBuffer<F>> {
        collect_rollout(&mut self.envs, self.policy.as_ref(), &mut self.state, self.config.rollout_len, &mut self.rng)
    }

    /// Collects a rollout and optimises on it.
    pub fn update(&mut self) -> Result<MetricsRecord> {
        let buf = self.collect()?;
        let stats = ppo_update(self.policy.as_mut(), &mut self.adam, &buf, &self.config)?;
        self.updates += 1;
        let diag = diagnostics(&buf);
        let provisional = buf.completed_returns.is_empty();
        let mean_return = if provisional {
            buf.partial_return_mean
        } else {
            buf.completed_returns.iter().sum::<f64>() / buf.completed_returns.len() as f64
        };
        let s = stats.last_epoch;
        Ok(MetricsRecord {
            update: self.updates,
            mean_return,
            return_provisional: provisional,
            value_loss: s.value_loss,
            policy_entropy: s.policy_entropy,
            approx_kl: s.approx_kl,
            clip_fraction: s.clip_fraction,
            command_l1: diag.command_l1,
            mode_entropy: diag.mode_entropy,
            module_entropy: diag.module_entropy,
        })
    }
}

#[cfg(test)]
mod tests;
