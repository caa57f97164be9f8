use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Linear, Mlp};
use super::{clamped_log_std, ensure_finite, ActorCritic, ArchKind, StepVars};
use crate::diffcore::{Activation, Bindings, ParamId, ParamStore, Real, Tape, Tensor, Var, POLICY_HEAD_GAIN, RELU_GAIN, TANH_GAIN};
use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpWidths {
    pub trunk: Vec<usize>,
}

impl Default for MlpWidths {
    fn default() -> Self {
        MlpWidths { trunk: vec![512, 512, 256] }
    }
}

/// Stateless feed-forward actor-critic with a shared ReLU trunk.
pub struct MlpPolicy<F> {
    params: ParamStore<F>,
    trunk: Mlp,
    mean: Linear,
    value: Linear,
    log_std: ParamId,
}

impl<F: Real> MlpPolicy<F> {
    pub fn new(widths: MlpWidths, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut dims = vec![OBS_DIM];
        dims.extend(&widths.trunk);
        let top = *dims.last().unwrap();
        let trunk = Mlp::new(&mut params, &mut rng, "trunk", &dims, Activation::Relu, Some(Activation::Relu), RELU_GAIN);
        let mean = Linear::new(&mut params, &mut rng, "actor_mean", top, ACTION_DIM, POLICY_HEAD_GAIN, true);
        let value = Linear::new(&mut params, &mut rng, "critic", top, 1, TANH_GAIN, true);
        let log_std = params.add("log_std", Tensor::zeros(&[ACTION_DIM]));
        MlpPolicy { params, trunk, mean, value, log_std }
    }
}

impl<F: Real> ActorCritic<F> for MlpPolicy<F> {
    fn kind(&self) -> ArchKind {
        ArchKind::Mlp
    }

    fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    fn state_fill(&self) -> Vec<Vec<F>> {
        Vec::new()
    }

    fn step(&self, tape: &mut Tape<F>, bound: &Bindings, obs: Var, _state: &[Var]) -> Result<(StepVars, Vec<Var>)> {
        let h = self.trunk.apply(tape, bound, obs)?;
        ensure_finite(tape, h, "mlp.trunk")?;
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
        Ok((out, Vec::new()))
    }
}
