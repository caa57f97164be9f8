//! Whole-policy gradient checks on short unrolled sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{reset_state_rows, ActorCritic, ArchitectureSpec};
use crate::diffcore::gradcheck::{check_params, GradCheckReport, Tolerance};
use crate::diffcore::{ParamStore, Tape, Tensor, Var};
use crate::env::{reset, EnvConfig, Observation};
use crate::error::Result;
use crate::policies::observation_batch;

/// Observations from real episodes driven by random actions, `[steps][batch]`.
pub fn sample_sequence(batch: usize, steps: usize, seed: u64) -> Result<Vec<Vec<Observation>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EnvConfig::default();
    let mut states = Vec::with_capacity(batch);
    let mut obs = Vec::with_capacity(batch);
    for b in 0..batch {
        let (s, o) = reset(&cfg, seed.wrapping_mul(31).wrapping_add(b as u64))?;
        states.push(s);
        obs.push(o);
    }
    let mut seq = vec![obs.clone()];
    for _ in 1..steps {
        for (s, o) in states.iter_mut().zip(obs.iter_mut()) {
            if s.terminated {
                let seed = s.next_seed();
                *s = reset(&cfg, seed)?.0;
            }
            *o = s.step_mut([rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)])?.observation;
        }
        seq.push(obs.clone());
    }
    Ok(seq)
}

/// Scalar touching every policy output over an unrolled sequence: action
/// log-likelihood, value, and (for the modular policy) mode/arbiter
/// entropies, command L1, and memory readout. Row 1 is reset before the
/// last step so episode boundaries are exercised.
pub fn unrolled_probe_loss(
    policy: &dyn ActorCritic<f64>,
    tape: &mut Tape<f64>,
    params: &ParamStore<f64>,
    seq: &[Vec<Observation>],
    actions: &[Vec<f64>],
) -> Result<Var> {
    let bound = tape.bind(params);
    let batch = seq[0].len();
    let mut state = policy.initial_state(batch).to_tape(tape);
    let mut terms = Vec::new();
    for (t, obs) in seq.iter().enumerate() {
        if t + 1 == seq.len() && batch > 1 {
            let keep: Vec<bool> = (0..batch).map(|b| b != 1).collect();
            state = reset_state_rows(policy, tape, &state, &keep)?;
        }
        let o = tape.constant(observation_batch(obs));
        let (out, next) = policy.step(tape, &bound, o, &state)?;
        state = next;
        let lp = tape.gaussian_log_prob(out.mean, out.log_std, &actions[t])?;
        terms.push(tape.mean(lp));
        let v2 = tape.square(out.value);
        let v2 = tape.mean(v2);
        terms.push(tape.scale(v2, 0.1));
        for (p, lp) in [(out.mode_probs, out.mode_log_probs), (out.arbiter_weights, out.arbiter_log_weights)] {
            if let (Some(p), Some(lp)) = (p, lp) {
                let plp = tape.mul(p, lp)?;
                terms.push(tape.mean(plp));
            }
        }
        if let Some(c) = out.command {
            let a = tape.abs(c);
            terms.push(tape.mean(a));
        }
        if let Some(m) = out.memory_readout {
            let sq = tape.square(m);
            terms.push(tape.mean(sq));
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

fn random_actions(batch: usize, steps: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11CE);
    (0..steps).map(|_| (0..batch * 2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Central-difference check of a full policy unrolled `steps` steps, in double precision.
pub fn policy_gradcheck(
    spec: &ArchitectureSpec,
    seed: u64,
    steps: usize,
    coords_per_tensor: Option<usize>,
) -> Result<GradCheckReport> {
    let policy = spec.build::<f64>(seed);
    let seq = sample_sequence(2, steps, seed)?;
    let actions = random_actions(2, steps, seed);
    let params = perturbed(policy.params(), seed);
    check_params(
        &format!("{} policy x{steps} steps", spec.kind()),
        &params,
        coords_per_tensor,
        seed,
        Tolerance::default(),
        |tape, p| unrolled_probe_loss(policy.as_ref(), tape, p, &seq, &actions),
    )
}

/// Adds a small random offset to every tensor so zero-initialised biases and
/// identity heads do not hide wiring errors behind symmetric values.
fn perturbed(p: &ParamStore<f64>, seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBEEF);
    let mut out = p.clone();
    for id in p.ids() {
        let t = p.get(id);
        let data = t.data().iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
        *out.get_mut(id) = Tensor::new(t.shape().to_vec(), data).expect("shape");
    }
    out
}

/// Names of parameter tensors that receive no nonzero gradient from the
/// unrolled probe loss.
pub fn dead_parameters(spec: &ArchitectureSpec, seed: u64, steps: usize) -> Result<Vec<String>> {
    let policy = spec.build::<f64>(seed);
    let seq = sample_sequence(2, steps, seed)?;
    let actions = random_actions(2, steps, seed);
    let params = policy.params().clone();
    let mut tape = Tape::new();
    let loss = unrolled_probe_loss(policy.as_ref(), &mut tape, &params, &seq, &actions)?;
    let grads = tape.backward(loss)?;
    Ok(params
        .ids()
        .filter(|&id| grads.param(id).is_none_or(|g| g.data().iter().all(|&v| v == 0.0)))
        .map(|id| params.name(id).to_string())
        .collect())
}
