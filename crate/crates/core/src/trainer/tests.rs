use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::Tape;
use crate::env::{self, EnvConfig};
use crate::policies::{observation_batch, reset_state_rows, ArchKind, ArchitectureSpec};

fn small(seed: u64) -> TrainConfig {
    TrainConfig { n_envs: 3, rollout_len: 12, n_updates: 2, n_epochs: 2, seed, ..TrainConfig::default() }
}

/// Direct double-loop sum of discounted TD errors with terminal masking.
fn gae_oracle(r: &[f64], v: &[f64], done: &[bool], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if t + 1 < n { v[t + 1] } else { boot };
            let live = if done[t] { 0.0 } else { 1.0 };
            r[t] + gamma * live * next - v[t]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for k in 0..n - t {
                if (t..t + k).any(|j| done[j]) {
                    break;
                }
                total += (gamma * lambda).powi(k as i32) * delta[t + k];
            }
            total
        })
        .collect()
}

#[test]
fn gae_examples() {
    let (a, r) = compute_gae(&[1.0], &[0.0], &[false], 0.0, 0.99, 0.95).unwrap();
    assert_eq!(a, vec![1.0]);
    assert_eq!(r, vec![1.0]);
    let (a, _) = compute_gae(&[1.0, 1.0], &[0.0, 0.0], &[false, false], 0.0, 0.99, 0.95).unwrap();
    assert_abs_diff_eq!(a[0], 1.9405, epsilon = 1e-12);
    assert_eq!(a[1], 1.0);
    // A terminal cuts the recursion.
    let (a, _) = compute_gae(&[1.0, 5.0, 7.0], &[0.5, 2.0, 3.0], &[false, true, false], 9.0, 0.9, 0.8).unwrap();
    assert_abs_diff_eq!(a[1], 5.0 - 2.0, epsilon = 1e-12);
    assert!(compute_gae(&[1.0], &[0.0, 0.0], &[false], 0.0, 0.99, 0.95).is_err());
}

proptest! {
    #[test]
    fn gae_matches_bruteforce(
        steps in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, prop::bool::weighted(0.2)), 1..=32),
        boot in -5.0f64..5.0,
        gamma in 0.5f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let v: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let d: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let (a, ret) = compute_gae(&r, &v, &d, boot, gamma, lambda).unwrap();
        let o = gae_oracle(&r, &v, &d, boot, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((a[t] - o[t]).abs() <= 1e-8);
            prop_assert!((ret[t] - (o[t] + v[t])).abs() <= 1e-8);
        }
    }

    #[test]
    fn normalized_batch_is_standardized(xs in prop::collection::vec(-100.0f64..100.0, 2..64)) {
        prop_assume!(xs.iter().any(|&x| (x - xs[0]).abs() > 1e-3));
        let mut ys = xs.clone();
        normalize(&mut ys);
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }
}

#[test]
fn entropy_closed_forms() {
    assert_abs_diff_eq!(categorical_entropy(&[0.25; 4]), 4f64.ln(), epsilon = 1e-15);
    assert_abs_diff_eq!(categorical_entropy(&[1.0 / 6.0; 6]), 1.791_759_469_228_055, epsilon = 1e-12);
    assert_eq!(categorical_entropy(&[0.0, 1.0, 0.0, 0.0]), 0.0);
    assert_abs_diff_eq!(gaussian_entropy(&[0.0, 0.0]), 2.837_877_066_409_345_5, epsilon = 1e-12);
    assert_abs_diff_eq!(gaussian_entropy(&[-1.0, 0.5]), 2.837_877_066_409_345_5 - 0.5, epsilon = 1e-12);
}

#[test]
fn default_config_and_validation() {
    let c = TrainConfig::default();
    assert_eq!((c.n_envs, c.rollout_len, c.n_updates, c.n_epochs), (16, 256, 75, 4));
    assert_eq!((c.gamma, c.gae_lambda, c.clip_eps, c.lr), (0.99, 0.95, 0.2, 3e-4));
    assert_eq!(c.grad_clip(), Some(0.5));
    assert!(c.validate().is_ok());
    let parsed: TrainConfig = toml::from_str("lr = 1e-3\nclip_grad = false").unwrap();
    assert_eq!(parsed.lr, 1e-3);
    assert_eq!(parsed.grad_clip(), None);
    assert!(toml::from_str::<TrainConfig>("learning_rate = 1.0").is_err());
    assert!(TrainConfig { n_envs: 0, ..c.clone() }.validate().is_err());
    assert!(TrainConfig { clip_eps: 0.0, ..c.clone() }.validate().is_err());
    assert!(TrainConfig { lambda_a: -1.0, ..c }.validate().is_err());
}

fn rollout(kind: ArchKind, cfg: &TrainConfig) -> (Box<dyn ActorCritic<f64>>, RolloutBuffer<f64>) {
    let policy = ArchitectureSpec::default_for(kind).build::<f64>(cfg.seed);
    let mut envs = VecEnv::new(&EnvConfig::default(), cfg.n_envs, cfg.seed).unwrap();
    let mut state = policy.initial_state(cfg.n_envs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let buf = collect_rollout(&mut envs, policy.as_ref(), &mut state, cfg.rollout_len, &mut rng).unwrap();
    (policy, buf)
}

#[test]
fn rollout_shape_and_determinism() {
    let cfg = small(4);
    let (_, a) = rollout(ArchKind::Insect, &cfg);
    let (_, b) = rollout(ArchKind::Insect, &cfg);
    assert_eq!((a.n_envs, a.len, a.samples()), (3, 12, 36));
    assert_eq!(a.observations, b.observations);
    assert_eq!(a.actions, b.actions);
    assert_eq!(a.log_probs, b.log_probs);
    assert_eq!(a.values, b.values);
    assert_eq!(a.mode_probs.as_ref().unwrap().len(), 36);
    assert!(a.log_probs.iter().all(|v| v.is_finite()));
    let (_, g) = rollout(ArchKind::Gru, &cfg);
    assert!(g.mode_probs.is_none() && g.commands.is_none());
    let d = diagnostics(&g);
    assert_eq!(d, Diagnostics::default());
}

#[test]
fn terminations_are_followed_by_fresh_episodes() {
    // A tiny world forces wall collisions and frequent resets.
    let env_cfg = EnvConfig { world_half_extent: 4.5, n_obstacles: 0, ..EnvConfig::default() };
    let policy = ArchitectureSpec::default_for(ArchKind::Insect).build::<f64>(0);
    let mut envs = VecEnv::new(&env_cfg, 4, 1).unwrap();
    let mut state = policy.initial_state(4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let buf = collect_rollout(&mut envs, policy.as_ref(), &mut state, 64, &mut rng).unwrap();
    let done: Vec<(usize, usize)> = (0..64).flat_map(|t| (0..4).map(move |i| (t, i))).filter(|&(t, i)| buf.terminated[t * 4 + i]).collect();
    assert!(!done.is_empty());
    assert_eq!(done.len(), buf.resets.len());
    for ev in &buf.resets {
        assert!(buf.terminated[ev.step * 4 + ev.env]);
        let (_, fresh) = env::reset(&env_cfg, ev.seed).unwrap();
        if ev.step + 1 < 64 {
            assert_eq!(buf.observations[(ev.step + 1) * 4 + ev.env], fresh);
        } else {
            assert_eq!(envs.observations()[ev.env], fresh);
            assert_eq!(buf.bootstrap_values[ev.env], 0.0);
            assert_eq!(state.row(ev.env), policy.initial_state(1));
        }
    }
    let total_reward: f64 = buf.rewards.iter().sum();
    let accounted: f64 = buf.completed_returns.iter().sum::<f64>() + envs.running_returns().iter().sum::<f64>();
    assert_abs_diff_eq!(total_reward, accounted, epsilon = 1e-9);
}

#[test]
fn zero_update_keeps_ratios_at_one_and_params_unchanged() {
    for kind in ArchKind::ALL {
        let cfg = TrainConfig { lr: 0.0, ..small(2) };
        let (mut policy, buf) = rollout(kind, &cfg);
        let before: Vec<Vec<u64>> = policy
            .params()
            .ids()
            .map(|id| policy.params().get(id).data().iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut adam = AdamState::new(policy.params());
        let stats = ppo_update(policy.as_mut(), &mut adam, &buf, &cfg).unwrap();
        let after: Vec<Vec<u64>> = policy
            .params()
            .ids()
            .map(|id| policy.params().get(id).data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(before, after, "{kind}");
        let s = stats.last_epoch;
        assert!(s.ratios.iter().all(|&r| r == 1.0), "{kind}");
        assert_eq!(s.clip_fraction, 0.0);
        assert_eq!(s.approx_kl, 0.0);
        assert!(s.value_loss >= 0.0);
        let ls = policy.params().get(policy.params().id("log_std").unwrap()).to_f64();
        assert_abs_diff_eq!(s.policy_entropy, gaussian_entropy(&ls), epsilon = 1e-9);
    }
}

#[test]
fn loss_diagnostics_match_rollout_diagnostics() {
    let cfg = small(6);
    let (policy, buf) = rollout(ArchKind::Insect, &cfg);
    let targets = compute_targets(&buf, &cfg).unwrap();
    let mut tape = Tape::new();
    let (_, s) = ppo_loss(policy.as_ref(), &buf, &targets, &cfg, &mut tape).unwrap();
    let d = diagnostics(&buf);
    let l1_full = s.command_l1.unwrap();
    assert_abs_diff_eq!(l1_full / 16.0, d.command_l1.unwrap(), epsilon = 1e-12);
    assert_abs_diff_eq!(s.mode_entropy.unwrap(), d.mode_entropy.unwrap(), epsilon = 1e-12);
    assert_abs_diff_eq!(s.module_entropy.unwrap(), d.module_entropy.unwrap(), epsilon = 1e-12);
    assert!(d.module_entropy.unwrap() <= 4f64.ln() + 1e-12);
    assert!(d.mode_entropy.unwrap() <= 6f64.ln() + 1e-12);
}

/// `-mean(A * log pi)` replayed by hand over the buffer.
fn vanilla_pg_gradients(policy: &dyn ActorCritic<f64>, buf: &RolloutBuffer<f64>, adv: &[f64]) -> crate::diffcore::Gradients<f64> {
    let mut tape = Tape::new();
    let bound = tape.bind(policy.params());
    let mut state = buf.initial_state.to_tape(&mut tape);
    let mut terms = Vec::new();
    for t in 0..buf.len {
        state = reset_state_rows(policy, &mut tape, &state, &buf.keep_mask(t)).unwrap();
        let rows = t * buf.n_envs..(t + 1) * buf.n_envs;
        let o = tape.constant(observation_batch(&buf.observations[rows.clone()]));
        let (out, next) = policy.step(&mut tape, &bound, o, &state).unwrap();
        state = next;
        let lp = tape.gaussian_log_prob(out.mean, out.log_std, &buf.step_actions(t)).unwrap();
        let a = tape.constant(crate::diffcore::Tensor::matrix(buf.n_envs, 1, adv[rows].to_vec()).unwrap());
        let w = tape.mul(lp, a).unwrap();
        terms.push(tape.sum(w));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t).unwrap();
    }
    let loss = tape.scale(total, -1.0 / buf.samples() as f64);
    tape.backward(loss).unwrap()
}

#[test]
fn unclipped_single_epoch_equals_vanilla_policy_gradient() {
    for kind in ArchKind::ALL {
        let cfg = TrainConfig {
            clip_eps: 1e12,
            n_epochs: 1,
            c_v: 0.0,
            c_h: 0.0,
            lambda_1: 0.0,
            lambda_m: 0.0,
            lambda_a: 0.0,
            ..small(8)
        };
        let (policy, buf) = rollout(kind, &cfg);
        let targets = compute_targets(&buf, &cfg).unwrap();
        let (g_ppo, _) = ppo_gradients(policy.as_ref(), &buf, &targets, &cfg).unwrap();
        let g_pg = vanilla_pg_gradients(policy.as_ref(), &buf, &targets.advantages);
        let mut checked = 0;
        for id in policy.params().ids() {
            let a = g_ppo.param(id).map(|t| t.to_f64());
            let b = g_pg.param(id).map(|t| t.to_f64());
            match (a, b) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.iter().zip(&b) {
                        assert!((x - y).abs() <= 1e-6, "{kind} {}: {x} vs {y}", policy.params().name(id));
                        checked += 1;
                    }
                }
                (Some(a), None) => assert!(a.iter().all(|&x| x.abs() <= 1e-6)),
                (None, Some(b)) => assert!(b.iter().all(|&x| x.abs() <= 1e-6)),
                (None, None) => {}
            }
        }
        assert!(checked > 0);
    }
}

#[test]
fn zero_advantages_leave_only_regularizer_gradients() {
    let cfg = TrainConfig { c_v: 0.0, c_h: 0.0, lambda_1: 0.0, lambda_m: 0.0, lambda_a: 0.0, ..small(3) };
    let (policy, buf) = rollout(ArchKind::Mlp, &cfg);
    let targets = compute_targets(&buf, &cfg).unwrap();
    let zero = Targets { advantages: vec![0.0; targets.advantages.len()], ..targets };
    let (g, s) = ppo_gradients(policy.as_ref(), &buf, &zero, &cfg).unwrap();
    assert_eq!(s.surrogate, 0.0);
    assert!(g.params().all(|(_, t)| t.data().iter().all(|&x| x == 0.0)));
}

#[test]
fn clip_fraction_matches_recount() {
    let cfg = TrainConfig { lr: 3e-3, n_epochs: 3, ..small(5) };
    let (mut policy, buf) = rollout(ArchKind::Gru, &cfg);
    let mut adam = AdamState::new(policy.params());
    let stats = ppo_update(policy.as_mut(), &mut adam, &buf, &cfg).unwrap();
    let s = &stats.last_epoch;
    let recount = s.ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip_eps).count() as f64 / s.ratios.len() as f64;
    assert_eq!(s.clip_fraction, recount);
    assert!((0.0..=1.0).contains(&s.clip_fraction));
    assert!(s.ratios.iter().any(|&r| r != 1.0));
    let kl = buf.log_probs.iter().zip(&s.new_log_probs).map(|(o, n)| o - n).sum::<f64>() / buf.samples() as f64;
    assert_eq!(s.approx_kl, kl);
    assert_eq!(stats.grad_norms.len(), 3);
}

#[test]
fn training_is_deterministic() {
    let env_cfg = EnvConfig::default();
    for kind in [ArchKind::Insect, ArchKind::Mlp] {
        let arch = ArchitectureSpec::default_for(kind);
        let run = || {
            let mut tr = Trainer::<f32>::new(&arch, &env_cfg, &small(9)).unwrap();
            (0..2).map(|_| tr.update().unwrap()).collect::<Vec<_>>()
        };
        let a = run();
        let b = run();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert_eq!(a[1].update, 2);
        assert!(a.iter().all(|m| m.value_loss >= 0.0 && (0.0..=1.0).contains(&m.clip_fraction)));
        assert_eq!(a[0].module_entropy.is_some(), kind == ArchKind::Insect);
    }
}
