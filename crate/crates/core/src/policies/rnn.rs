use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Linear, Mlp};
use super::{clamped_log_std, ensure_finite, ActorCritic, ArchKind, StepVars};
use crate::diffcore::{
    gru_cell, orthogonal, Activation, Bindings, GruParams, ParamId, ParamStore, Real, Tape, Tensor, Var,
    POLICY_HEAD_GAIN, RELU_GAIN, TANH_GAIN,
};
use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GruWidths {
    pub encoder: Vec<usize>,
    pub hidden: usize,
}

impl Default for GruWidths {
    fn default() -> Self {
        GruWidths { encoder: vec![192, 256], hidden: 256 }
    }
}

/// Observation encoder feeding one recurrent hidden state shared by actor and critic.
pub struct GruPolicy<F> {
    params: ParamStore<F>,
    encoder: Mlp,
    gru: GruParams,
    mean: Linear,
    value: Linear,
    log_std: ParamId,
    hidden: usize,
}

pub(crate) fn init_gru<F: Real>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize) -> GruParams {
    let p = GruParams::register(store, name, input, hidden);
    *store.get_mut(p.w_ih) = orthogonal(3 * hidden, input, TANH_GAIN, rng);
    *store.get_mut(p.w_hh) = orthogonal(3 * hidden, hidden, TANH_GAIN, rng);
    p
}

impl<F: Real> GruPolicy<F> {
    pub fn new(widths: GruWidths, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut dims = vec![OBS_DIM];
        dims.extend(&widths.encoder);
        let enc_out = *dims.last().unwrap();
        let encoder = Mlp::new(&mut params, &mut rng, "encoder", &dims, Activation::Relu, Some(Activation::Relu), RELU_GAIN);
        let gru = init_gru(&mut params, &mut rng, "gru", enc_out, widths.hidden);
        let mean = Linear::new(&mut params, &mut rng, "actor_mean", widths.hidden, ACTION_DIM, POLICY_HEAD_GAIN, true);
        let value = Linear::new(&mut params, &mut rng, "critic", widths.hidden, 1, TANH_GAIN, true);
        let log_std = params.add("log_std", Tensor::zeros(&[ACTION_DIM]));
        GruPolicy { params, encoder, gru, mean, value, log_std, hidden: widths.hidden }
    }
}

impl<F: Real> ActorCritic<F> for GruPolicy<F> {
    fn kind(&self) -> ArchKind {
        ArchKind::Gru
    }

    fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    fn state_fill(&self) -> Vec<Vec<F>> {
        vec![vec![F::zero(); self.hidden]]
    }

    fn step(&self, tape: &mut Tape<F>, bound: &Bindings, obs: Var, state: &[Var]) -> Result<(StepVars, Vec<Var>)> {
        let e = self.encoder.apply(tape, bound, obs)?;
        let h = gru_cell(tape, &self.gru, bound, e, state[0])?;
        ensure_finite(tape, h, "gru.hidden")?;
        let mean = self.mean.apply(tape, bound, h)?;
        let value = self.value.apply(tape, bound, h)?;
        let log_std = clamped_log_std(tape, bound[self.log_std]);
        let out = StepVars {
            mean,
            log_std,
            value,
            mode_probs: None,
            mode_log_probs: None,
            arbiter_weights: None,
            arbiter_log_weights: None,
            command: None,
            memory_code: None,
            memory_readout: None,
            proposals: Vec::new(),
        };
        Ok((out, vec![h]))
    }
}
