use crate::diffcore::{adam_step, clip_grad_norm, AdamState, Gradients, Real, Tape, Tensor, Var, HALF_LN_2PI_E};
use crate::policies::{observation_batch, reset_state_rows, ActorCritic};
use crate::{Error, Result};

use super::gae::{compute_gae, normalize};
use super::rollout::RolloutBuffer;
use super::TrainConfig;

/// Normalised advantages and value targets, time-major like the buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

pub fn compute_targets<F: Real>(buf: &RolloutBuffer<F>, cfg: &TrainConfig) -> Result<Targets> {
    buf.check()?;
    let n = buf.samples();
    let mut advantages = vec![0.0; n];
    let mut returns = vec![0.0; n];
    for i in 0..buf.n_envs {
        let (a, r) = compute_gae(
            &buf.column(&buf.rewards, i),
            &buf.column(&buf.values, i),
            &buf.column(&buf.terminated, i),
            buf.bootstrap_values[i],
            cfg.gamma,
            cfg.gae_lambda,
        )?;
        for t in 0..buf.len {
            advantages[buf.index(t, i)] = a[t];
            returns[buf.index(t, i)] = r[t];
        }
    }
    normalize(&mut advantages);
    Ok(Targets { advantages, returns })
}

/// Scalar pieces of one pass over the buffer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossStats {
    pub loss: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub policy_entropy: f64,
    pub command_l1: Option<f64>,
    pub mode_entropy: Option<f64>,
    pub module_entropy: Option<f64>,
    /// Probability ratios, time-major.
    pub ratios: Vec<f64>,
    pub new_log_probs: Vec<f64>,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

fn column<F: Real>(xs: &[f64]) -> Tensor<F> {
    Tensor::matrix(xs.len(), 1, xs.iter().map(|&x| F::lit(x)).collect()).expect("column")
}

fn accumulate<F: Real>(tape: &mut Tape<F>, acc: &mut Option<Var>, x: Var) -> Result<()> {
    *acc = Some(match *acc {
        Some(a) => tape.add(a, x)?,
        None => x,
    });
    Ok(())
}

/// Fraction of ratios outside `[1 - eps, 1 + eps]`.
pub fn clip_fraction(ratios: &[f64], eps: f64) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.iter().filter(|r| (*r - 1.0).abs() > eps).count() as f64 / ratios.len() as f64
}

/// Records the full-sequence loss on `tape`, replaying every environment from
/// the buffer's initial recurrent state.
pub fn ppo_loss<F: Real>(
    policy: &dyn ActorCritic<F>,
    buf: &RolloutBuffer<F>,
    targets: &Targets,
    cfg: &TrainConfig,
    tape: &mut Tape<F>,
) -> Result<(Var, LossStats)> {
    let n = buf.n_envs;
    if buf.len == 0 {
        return Err(Error::Usage("empty rollout".into()));
    }
    let bound = tape.bind(policy.params());
    let mut state = buf.initial_state.to_tape(tape);
    let (mut surr, mut vsq, mut l1, mut mode_plogp, mut arb_plogp) = (None, None, None, None, None);
    let mut log_std = None;
    let mut new_lp = Vec::with_capacity(buf.samples());
    let mut ratios = Vec::with_capacity(buf.samples());
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    for t in 0..buf.len {
        let rows = t * n..(t + 1) * n;
        state = reset_state_rows(policy, tape, &state, &buf.keep_mask(t))?;
        let o = tape.constant(observation_batch(&buf.observations[rows.clone()]));
        let (out, next) = policy.step(tape, &bound, o, &state)?;
        state = next;
        log_std = Some(out.log_std);

        let lp = tape.gaussian_log_prob(out.mean, out.log_std, &buf.step_actions(t))?;
        let old = tape.constant(column(&buf.log_probs[rows.clone()]));
        let adv = tape.constant(column(&targets.advantages[rows.clone()]));
        let diff = tape.sub(lp, old)?;
        let ratio = tape.exp(diff);
        new_lp.extend(tape.value(lp).to_f64());
        ratios.extend(tape.value(ratio).to_f64());
        let unclipped = tape.mul(ratio, adv)?;
        let clipped = tape.clamp(ratio, lo, hi);
        let clipped = tape.mul(clipped, adv)?;
        let s = tape.minimum(unclipped, clipped)?;
        let s = tape.sum(s);
        accumulate(tape, &mut surr, s)?;

        let ret = tape.constant(column(&targets.returns[rows]));
        let err = tape.sub(out.value, ret)?;
        let sq = tape.square(err);
        let sq = tape.sum(sq);
        accumulate(tape, &mut vsq, sq)?;

        if let Some(c) = out.command {
            let a = tape.abs(c);
            let a = tape.sum(a);
            accumulate(tape, &mut l1, a)?;
        }
        for (p, lp, acc) in [
            (out.mode_probs, out.mode_log_probs, &mut mode_plogp),
            (out.arbiter_weights, out.arbiter_log_weights, &mut arb_plogp),
        ] {
            if let (Some(p), Some(lp)) = (p, lp) {
                let pl = tape.mul(p, lp)?;
                let pl = tape.sum(pl);
                accumulate(tape, acc, pl)?;
            }
        }
    }
    let inv_n = 1.0 / buf.samples() as f64;
    let surr = surr.expect("non-empty");
    let vsq = vsq.expect("non-empty");
    let log_std = log_std.expect("non-empty");
    let ls_sum = tape.sum(log_std);
    let dims = tape.value(log_std).numel() as f64;

    let mut total = tape.scale(surr, -inv_n);
    let v_term = tape.scale(vsq, cfg.c_v * inv_n);
    total = tape.add(total, v_term)?;
    let h_term = tape.scale(ls_sum, -cfg.c_h);
    total = tape.add(total, h_term)?;
    // Mode entropy is rewarded, arbiter entropy penalised.
    for (acc, coef) in [(l1, cfg.lambda_1), (mode_plogp, cfg.lambda_m), (arb_plogp, -cfg.lambda_a)] {
        if let Some(v) = acc {
            let term = tape.scale(v, coef * inv_n);
            total = tape.add(total, term)?;
        }
    }

    let scalar = |tape: &Tape<F>, v: Var| tape.value(v).item().f64();
    let old = &buf.log_probs;
    let stats = LossStats {
        loss: scalar(tape, total),
        surrogate: scalar(tape, surr) * inv_n,
        value_loss: scalar(tape, vsq) * inv_n,
        policy_entropy: scalar(tape, ls_sum) + dims * HALF_LN_2PI_E,
        command_l1: l1.map(|v| scalar(tape, v) * inv_n),
        mode_entropy: mode_plogp.map(|v| -scalar(tape, v) * inv_n),
        module_entropy: arb_plogp.map(|v| -scalar(tape, v) * inv_n),
        approx_kl: old.iter().zip(&new_lp).map(|(o, n)| o - n).sum::<f64>() * inv_n,
        clip_fraction: clip_fraction(&ratios, cfg.clip_eps),
        ratios,
        new_log_probs: new_lp,
    };
    Ok((total, stats))
}

/// Loss statistics and parameter gradients of one pass.
pub fn ppo_gradients<F: Real>(
    policy: &dyn ActorCritic<F>,
    buf: &RolloutBuffer<F>,
    targets: &Targets,
    cfg: &TrainConfig,
) -> Result<(Gradients<F>, LossStats)> {
    let mut tape = Tape::new();
    let (loss, stats) = ppo_loss(policy, buf, targets, cfg, &mut tape)?;
    if !stats.loss.is_finite() {
        return Err(Error::numeric("trainer", format!("non-finite loss {}", stats.loss)));
    }
    let grads = tape.backward(loss)?;
    Ok((grads, stats))
}

/// Outcome of [`ppo_update`]; statistics are from the last epoch's forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub last_epoch: LossStats,
    pub grad_norms: Vec<f64>,
}

/// `n_epochs` full-batch optimisation steps on one rollout.
pub fn ppo_update<F: Real>(
    policy: &mut dyn ActorCritic<F>,
    adam: &mut AdamState<F>,
    buf: &RolloutBuffer<F>,
    cfg: &TrainConfig,
) -> Result<UpdateStats> {
    let targets = compute_targets(buf, cfg)?;
    let mut last = None;
    let mut grad_norms = Vec::with_capacity(cfg.n_epochs);
    for _ in 0..cfg.n_epochs {
        let (mut grads, stats) = ppo_gradients(&*policy, buf, &targets, cfg)?;
        let norm = match cfg.grad_clip() {
            Some(max) => clip_grad_norm(&mut grads, max),
            None => crate::diffcore::grad_norm(&grads),
        };
        if !norm.is_finite() {
            return Err(Error::numeric("trainer", format!("non-finite gradient norm {norm}")));
        }
        grad_norms.push(norm);
        adam_step(policy.params_mut(), &grads, adam, cfg.lr)?;
        last = Some(stats);
    }
    let last_epoch = last.ok_or_else(|| Error::Config("n_epochs must be at least 1".into()))?;
    Ok(UpdateStats { last_epoch, grad_norms })
}
