//! Distributed modular controller.
//!
//! Per step, in order:
//!
//! 1. three stream encoders and a fusion layer produce `s`;
//! 2. a ring-kernel heading state `h = LN(tanh(W_s[s, o_p] + h_prev·K + W_t c_prev))`;
//! 3. a sparse memory code `k = TopK(ReLU(W_m s))` and readout
//!    `m = tanh(W_r k + W_v[c_prev, π_prev])`;
//! 4. a GRU command centre `z = GRU([s, h, m], z_prev)`;
//! 5. heads `π = softmax(W_π z)`, `c = tanh(W_c z)`, `V = W_V z`;
//! 6. four local controllers propose `ã_j = tanh g_j([q_j, c, π])` with
//!    priorities `p_j = u_j([q_j, c, π])`;
//! 7. an arbiter mixes proposals with `α = softmax(p)`;
//! 8. an affine head maps the mixed proposal to the Gaussian mean.
//!
//! The command and mode signals consumed in steps 2 and 3 are the previous
//! step's outputs, which keeps the step acyclic.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Linear, Mlp};
use super::rnn::init_gru;
use super::{clamped_log_std, ensure_finite, ActorCritic, ArchKind, StepVars, STREAM_P, STREAM_V, STREAM_X};
use crate::diffcore::{
    gru_cell, Activation, Bindings, GruParams, ParamId, ParamStore, Real, Tape, Tensor, Var, POLICY_HEAD_GAIN,
    RELU_GAIN, TANH_GAIN,
};
use crate::env::{Observation, ACTION_DIM};
use crate::error::Result;

pub const N_CONTROLLERS: usize = 4;
pub const CONTROLLERS: [&str; N_CONTROLLERS] = ["stabilize", "avoid", "approach", "explore"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModularWidths {
    pub stream_hidden: usize,
    pub vision_out: usize,
    pub proprio_out: usize,
    pub task_out: usize,
    pub fused: usize,
    pub heading: usize,
    pub memory_units: usize,
    pub memory_k: usize,
    pub memory_out: usize,
    pub command: usize,
    pub modes: usize,
    pub command_center: usize,
    pub controller_hidden: usize,
    pub ring_init_scale: f64,
}

impl Default for ModularWidths {
    fn default() -> Self {
        ModularWidths {
            stream_hidden: 128,
            vision_out: 96,
            proprio_out: 48,
            task_out: 96,
            fused: 192,
            heading: 32,
            memory_units: 512,
            memory_k: 32,
            memory_out: 64,
            command: 16,
            modes: 6,
            command_center: 160,
            controller_hidden: 64,
            ring_init_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
struct LocalController {
    propose: Mlp,
    priority: Mlp,
}

/// Context slice of controller `j`, as column ranges of the observation or `s`.
#[derive(Clone, Copy, Debug)]
enum Context {
    Obs(&'static [(usize, usize)]),
    Fused,
}

const CONTEXTS: [Context; N_CONTROLLERS] = [
    // stabilize: heading features
    Context::Obs(&[(Observation::HEADING.start, 2)]),
    // avoid: obstacle direction, obstacle distance, predator direction
    Context::Obs(&[(Observation::OBSTACLE_DIR.start, 2), (Observation::OBSTACLE_DIST, 1), (Observation::PREDATOR_DIR.start, 2)]),
    // approach: food direction, food distance
    Context::Obs(&[(Observation::FOOD_DIR.start, 2), (Observation::FOOD_DIST, 1)]),
    // explore: the fused representation
    Context::Fused,
];

fn context_dim(c: Context, fused: usize) -> usize {
    match c {
        Context::Obs(parts) => parts.iter().map(|p| p.1).sum(),
        Context::Fused => fused,
    }
}

pub struct ModularPolicy<F> {
    params: ParamStore<F>,
    widths: ModularWidths,
    f_v: Mlp,
    f_p: Mlp,
    f_x: Mlp,
    fuse: Linear,
    heading_in: Linear,
    ring: ParamId,
    turn: Linear,
    ln_gain: ParamId,
    ln_offset: ParamId,
    mem_in: Linear,
    mem_read: Linear,
    mem_value: Linear,
    center: GruParams,
    mode_head: Linear,
    command_head: Linear,
    value_head: Linear,
    controllers: Vec<LocalController>,
    action_head: Linear,
    log_std: ParamId,
}

/// Circulant ring kernel `K[i][j] = scale·cos(2π(i − j)/n)`.
pub fn ring_kernel<F: Real>(n: usize, scale: f64) -> Tensor<F> {
    let data = (0..n * n)
        .map(|k| {
            let (i, j) = ((k / n) as f64, (k % n) as f64);
            F::lit(scale * (2.0 * PI * (i - j) / n as f64).cos())
        })
        .collect();
    Tensor::matrix(n, n, data).expect("square")
}

impl<F: Real> ModularPolicy<F> {
    pub fn new(w: ModularWidths, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let relu = Some(Activation::Relu);
        let sh = w.stream_hidden;
        let f_v = Mlp::new(&mut p, &mut rng, "enc_vision", &[STREAM_V.1, sh, w.vision_out], Activation::Relu, relu, RELU_GAIN);
        let f_p = Mlp::new(&mut p, &mut rng, "enc_proprio", &[STREAM_P.1, sh, w.proprio_out], Activation::Relu, relu, RELU_GAIN);
        let f_x = Mlp::new(&mut p, &mut rng, "enc_task", &[STREAM_X.1, sh, w.task_out], Activation::Relu, relu, RELU_GAIN);
        let streams = w.vision_out + w.proprio_out + w.task_out;
        let fuse = Linear::new(&mut p, &mut rng, "fuse", streams, w.fused, TANH_GAIN, true);

        let heading_in = Linear::new(&mut p, &mut rng, "heading.input", w.fused + STREAM_P.1, w.heading, TANH_GAIN, true);
        let ring = p.add("heading.ring", ring_kernel(w.heading, w.ring_init_scale));
        let turn = Linear::new(&mut p, &mut rng, "heading.turn", w.command, w.heading, TANH_GAIN, false);
        let ln_gain = p.add("heading.ln_gain", Tensor::full(&[w.heading], F::one()));
        let ln_offset = p.add("heading.ln_offset", Tensor::zeros(&[w.heading]));

        let mem_in = Linear::new(&mut p, &mut rng, "memory.expand", w.fused, w.memory_units, RELU_GAIN, true);
        let mem_read = Linear::new(&mut p, &mut rng, "memory.readout", w.memory_units, w.memory_out, TANH_GAIN, true);
        let mem_value = Linear::new(&mut p, &mut rng, "memory.value", w.command + w.modes, w.memory_out, TANH_GAIN, false);

        let center_in = w.fused + w.heading + w.memory_out;
        let center = init_gru(&mut p, &mut rng, "command_center", center_in, w.command_center);
        let mode_head = Linear::new(&mut p, &mut rng, "head.mode", w.command_center, w.modes, POLICY_HEAD_GAIN, true);
        let command_head = Linear::new(&mut p, &mut rng, "head.command", w.command_center, w.command, TANH_GAIN, true);
        let value_head = Linear::new(&mut p, &mut rng, "head.value", w.command_center, 1, TANH_GAIN, true);

        let controllers = CONTEXTS
            .iter()
            .zip(CONTROLLERS)
            .map(|(&ctx, name)| {
                let input = context_dim(ctx, w.fused) + w.command + w.modes;
                let hid = w.controller_hidden;
                LocalController {
                    propose: Mlp::new(&mut p, &mut rng, &format!("ctrl.{name}.propose"), &[input, hid, ACTION_DIM], Activation::Tanh, Some(Activation::Tanh), POLICY_HEAD_GAIN),
                    priority: Mlp::new(&mut p, &mut rng, &format!("ctrl.{name}.priority"), &[input, hid, 1], Activation::Tanh, None, POLICY_HEAD_GAIN),
                }
            })
            .collect();

        let action_head = Linear::new(&mut p, &mut rng, "action_head", ACTION_DIM, ACTION_DIM, 1.0, true);
        *p.get_mut(action_head.w) = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).expect("eye");
        let log_std = p.add("log_std", Tensor::zeros(&[ACTION_DIM]));

        ModularPolicy {
            params: p,
            widths: w,
            f_v,
            f_p,
            f_x,
            fuse,
            heading_in,
            ring,
            turn,
            ln_gain,
            ln_offset,
            mem_in,
            mem_read,
            mem_value,
            center,
            mode_head,
            command_head,
            value_head,
            controllers,
            action_head,
            log_std,
        }
    }

    pub fn widths(&self) -> &ModularWidths {
        &self.widths
    }

    fn context(&self, tape: &mut Tape<F>, ctx: Context, obs: Var, s: Var) -> Result<Var> {
        match ctx {
            Context::Fused => Ok(s),
            Context::Obs(parts) => {
                let cols = parts.iter().map(|&(a, n)| tape.slice_cols(obs, a, n)).collect::<Result<Vec<_>>>()?;
                if cols.len() == 1 { Ok(cols[0]) } else { tape.concat(&cols) }
            }
        }
    }
}

impl<F: Real> ActorCritic<F> for ModularPolicy<F> {
    fn kind(&self) -> ArchKind {
        ArchKind::Insect
    }

    fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    fn state_fill(&self) -> Vec<Vec<F>> {
        let w = &self.widths;
        vec![
            vec![F::zero(); w.heading],
            vec![F::zero(); w.command_center],
            vec![F::zero(); w.command],
            vec![F::lit(1.0 / w.modes as f64); w.modes],
        ]
    }

    fn step(&self, tape: &mut Tape<F>, b: &Bindings, obs: Var, state: &[Var]) -> Result<(StepVars, Vec<Var>)> {
        let (h_prev, z_prev, c_prev, pi_prev) = (state[0], state[1], state[2], state[3]);

        let o_v = tape.slice_cols(obs, STREAM_V.0, STREAM_V.1)?;
        let o_p = tape.slice_cols(obs, STREAM_P.0, STREAM_P.1)?;
        let o_x = tape.slice_cols(obs, STREAM_X.0, STREAM_X.1)?;
        let v = self.f_v.apply(tape, b, o_v)?;
        let p = self.f_p.apply(tape, b, o_p)?;
        let x = self.f_x.apply(tape, b, o_x)?;
        let vpx = tape.concat(&[v, p, x])?;
        let s = self.fuse.apply(tape, b, vpx)?;
        let s = tape.tanh(s);
        ensure_finite(tape, s, "insect.sensory")?;

        let sp = tape.concat(&[s, o_p])?;
        let drive = self.heading_in.apply(tape, b, sp)?;
        let recur = tape.dense(h_prev, b[self.ring], None)?;
        let turn = self.turn.apply(tape, b, c_prev)?;
        let pre = tape.add(drive, recur)?;
        let pre = tape.add(pre, turn)?;
        let pre = tape.tanh(pre);
        let h = tape.layer_norm(pre, b[self.ln_gain], b[self.ln_offset])?;
        ensure_finite(tape, h, "insect.heading")?;

        let expand = self.mem_in.apply(tape, b, s)?;
        let expand = tape.relu(expand);
        let code = tape.top_k(expand, self.widths.memory_k)?;
        let read = self.mem_read.apply(tape, b, code)?;
        let cpi = tape.concat(&[c_prev, pi_prev])?;
        let val = self.mem_value.apply(tape, b, cpi)?;
        let m = tape.add(read, val)?;
        let m = tape.tanh(m);
        ensure_finite(tape, m, "insect.memory")?;

        let center_in = tape.concat(&[s, h, m])?;
        let z = gru_cell(tape, &self.center, b, center_in, z_prev)?;
        ensure_finite(tape, z, "insect.command_center")?;

        let mode_logits = self.mode_head.apply(tape, b, z)?;
        let pi = tape.softmax(mode_logits);
        let log_pi = tape.log_softmax(mode_logits);
        let c = self.command_head.apply(tape, b, z)?;
        let c = tape.tanh(c);
        let value = self.value_head.apply(tape, b, z)?;

        let mut proposals = Vec::with_capacity(N_CONTROLLERS);
        let mut priorities = Vec::with_capacity(N_CONTROLLERS);
        for (ctrl, &ctx) in self.controllers.iter().zip(&CONTEXTS) {
            let q = self.context(tape, ctx, obs, s)?;
            let input = tape.concat(&[q, c, pi])?;
            proposals.push(ctrl.propose.apply(tape, b, input)?);
            priorities.push(ctrl.priority.apply(tape, b, input)?);
        }
        let prio = tape.concat(&priorities)?;
        let alpha = tape.softmax(prio);
        let log_alpha = tape.log_softmax(prio);
        let mut mixed = None;
        for (j, &a) in proposals.iter().enumerate() {
            let w = tape.slice_cols(alpha, j, 1)?;
            let term = tape.mul(a, w)?;
            mixed = Some(match mixed {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let mixed = mixed.expect("at least one controller");
        let mean = self.action_head.apply(tape, b, mixed)?;
        ensure_finite(tape, mean, "insect.arbiter")?;
        let log_std = clamped_log_std(tape, b[self.log_std]);

        let out = StepVars {
            mean,
            log_std,
            value,
            mode_probs: Some(pi),
            mode_log_probs: Some(log_pi),
            arbiter_weights: Some(alpha),
            arbiter_log_weights: Some(log_alpha),
            command: Some(c),
            memory_code: Some(code),
            memory_readout: Some(m),
            proposals,
        };
        Ok((out, vec![h, z, c, pi]))
    }
}
