//! Three actor-critic architectures behind one interface: the modular
//! controller, a centralized GRU, and a centralized MLP.
//!
//! All forward passes are batched: observations are `[B, 10]` and every
//! recurrent tensor is `[B, dim]`, one row per environment.

pub mod check;
mod layers;
mod modular;
mod rnn;
mod mlp;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Bindings, ParamStore, Real, Tape, Tensor, Var};
use crate::env::{Observation, OBS_DIM};
use crate::error::{Error, Result};

pub use modular::{ModularPolicy, ModularWidths, CONTROLLERS, N_CONTROLLERS};
pub use mlp::{MlpPolicy, MlpWidths};
pub use rnn::{GruPolicy, GruWidths};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Insect,
    Gru,
    Mlp,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::Insect, ArchKind::Gru, ArchKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Insect => "insect",
            ArchKind::Gru => "gru",
            ArchKind::Mlp => "mlp",
        }
    }

    /// Trainable-parameter budget this architecture is sized against.
    pub fn target_param_count(self) -> usize {
        match self {
            ArchKind::Insect => 476_063,
            ArchKind::Gru => 464_133,
            ArchKind::Mlp => 438_021,
        }
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "insect" | "modular" => Ok(ArchKind::Insect),
            "gru" | "centralized_gru" => Ok(ArchKind::Gru),
            "mlp" | "centralized_mlp" => Ok(ArchKind::Mlp),
            other => Err(Error::Config(format!("unknown architecture {other:?} (insect|gru|mlp)"))),
        }
    }
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture kind plus its width settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ArchitectureSpec {
    Insect(ModularWidths),
    Gru(GruWidths),
    Mlp(MlpWidths),
}

impl ArchitectureSpec {
    pub fn default_for(kind: ArchKind) -> Self {
        match kind {
            ArchKind::Insect => ArchitectureSpec::Insect(ModularWidths::default()),
            ArchKind::Gru => ArchitectureSpec::Gru(GruWidths::default()),
            ArchKind::Mlp => ArchitectureSpec::Mlp(MlpWidths::default()),
        }
    }

    pub fn kind(&self) -> ArchKind {
        match self {
            ArchitectureSpec::Insect(_) => ArchKind::Insect,
            ArchitectureSpec::Gru(_) => ArchKind::Gru,
            ArchitectureSpec::Mlp(_) => ArchKind::Mlp,
        }
    }

    pub fn target_param_count(&self) -> usize {
        self.kind().target_param_count()
    }

    /// Builds a freshly initialised policy.
    pub fn build<F: Real>(&self, seed: u64) -> Box<dyn ActorCritic<F>> {
        match self {
            ArchitectureSpec::Insect(w) => Box::new(ModularPolicy::new(w.clone(), seed)),
            ArchitectureSpec::Gru(w) => Box::new(GruPolicy::new(w.clone(), seed)),
            ArchitectureSpec::Mlp(w) => Box::new(MlpPolicy::new(w.clone(), seed)),
        }
    }
}

/// Exact number of trainable scalars.
pub fn count_parameters<F: Real>(params: &ParamStore<F>) -> usize {
    params.count()
}

/// Fractional deviation of a realised count from its target.
pub fn param_deviation(count: usize, target: usize) -> f64 {
    (count as f64 - target as f64) / target as f64
}

/// Observation streams: vision-like `[food dir, obstacle dir]`, proprioceptive
/// `[cos θ, sin θ]`, and task variables `[food dist, obstacle dist, predator dir]`.
pub fn split_observation(obs: &[f64]) -> Result<([f64; 4], [f64; 2], [f64; 4])> {
    if obs.len() != OBS_DIM {
        return Err(Error::shape("split_observation", format!("expected {OBS_DIM} values, got {}", obs.len())));
    }
    let mut v = [0.0; 4];
    let mut p = [0.0; 2];
    let mut x = [0.0; 4];
    v.copy_from_slice(&obs[0..4]);
    p.copy_from_slice(&obs[4..6]);
    x.copy_from_slice(&obs[6..10]);
    Ok((v, p, x))
}

/// Column ranges of the three streams inside a batched observation.
pub(crate) const STREAM_V: (usize, usize) = (0, 4);
pub(crate) const STREAM_P: (usize, usize) = (4, 2);
pub(crate) const STREAM_X: (usize, usize) = (6, 4);

/// Recurrent state of a batch of environments.
///
/// Insect: `[heading_state, command_state, prev_command, prev_mode_probs]`;
/// GRU: `[hidden]`; MLP: empty.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState<F> {
    pub kind: ArchKind,
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Real> RecurrentState<F> {
    pub fn heading_state(&self) -> Option<&Tensor<F>> {
        (self.kind == ArchKind::Insect).then(|| &self.tensors[0])
    }

    pub fn command_state(&self) -> Option<&Tensor<F>> {
        (self.kind == ArchKind::Insect).then(|| &self.tensors[1])
    }

    pub fn prev_command(&self) -> Option<&Tensor<F>> {
        (self.kind == ArchKind::Insect).then(|| &self.tensors[2])
    }

    pub fn prev_mode_probs(&self) -> Option<&Tensor<F>> {
        (self.kind == ArchKind::Insect).then(|| &self.tensors[3])
    }

    pub fn hidden(&self) -> Option<&Tensor<F>> {
        (self.kind == ArchKind::Gru).then(|| &self.tensors[0])
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_tape(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    pub fn from_tape(kind: ArchKind, tape: &Tape<F>, vars: &[Var]) -> Self {
        RecurrentState { kind, tensors: vars.iter().map(|&v| tape.value(v).clone()).collect() }
    }

    /// Copy of one batch row as a batch of one.
    pub fn row(&self, r: usize) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|t| Tensor::matrix(1, t.cols(), t.row(r).to_vec()).expect("row"))
            .collect();
        RecurrentState { kind: self.kind, tensors }
    }

    /// Overwrites batch row `r` with the given per-tensor rows.
    pub fn set_row(&mut self, r: usize, rows: &[Vec<F>]) {
        for (t, fill) in self.tensors.iter_mut().zip(rows) {
            let c = t.cols();
            t.data_mut()[r * c..(r + 1) * c].copy_from_slice(fill);
        }
    }
}

/// Tape handles produced by one batched policy step.
#[derive(Clone, Debug)]
pub struct StepVars {
    /// `[B, 2]`
    pub mean: Var,
    /// `[1, 2]`, state independent
    pub log_std: Var,
    /// `[B, 1]`
    pub value: Var,
    /// `[B, 6]` mode probabilities and their logs
    pub mode_probs: Option<Var>,
    pub mode_log_probs: Option<Var>,
    /// `[B, 4]` arbiter weights and their logs
    pub arbiter_weights: Option<Var>,
    pub arbiter_log_weights: Option<Var>,
    /// `[B, 16]`
    pub command: Option<Var>,
    /// `[B, 512]` sparse memory code
    pub memory_code: Option<Var>,
    /// `[B, 64]` memory readout
    pub memory_readout: Option<Var>,
    /// `[B, 2]` per controller
    pub proposals: Vec<Var>,
}

/// Plain per-environment view of one policy step.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub action_mean: [f64; 2],
    pub action_log_std: [f64; 2],
    pub value: f64,
    pub mode_probs: Option<Vec<f64>>,
    pub arbiter_weights: Option<Vec<f64>>,
    pub command: Option<Vec<f64>>,
}

impl PolicyOutput {
    /// Extracts one row per environment from the tape.
    pub fn from_step<F: Real>(tape: &Tape<F>, out: &StepVars) -> Vec<PolicyOutput> {
        let mean = tape.value(out.mean);
        let ls = tape.value(out.log_std).to_f64();
        let value = tape.value(out.value);
        let row = |v: Option<Var>, r: usize| {
            v.map(|v| tape.value(v).row(r).iter().map(|x| x.f64()).collect::<Vec<f64>>())
        };
        (0..mean.rows())
            .map(|r| PolicyOutput {
                action_mean: [mean.row(r)[0].f64(), mean.row(r)[1].f64()],
                action_log_std: [ls[0], ls[1]],
                value: value.row(r)[0].f64(),
                mode_probs: row(out.mode_probs, r),
                arbiter_weights: row(out.arbiter_weights, r),
                command: row(out.command, r),
            })
            .collect()
    }
}

/// Common interface of the three architectures.
pub trait ActorCritic<F: Real>: Send + Sync {
    fn kind(&self) -> ArchKind;

    fn params(&self) -> &ParamStore<F>;

    fn params_mut(&mut self) -> &mut ParamStore<F>;

    /// Per-tensor row values of a freshly initialised recurrent state.
    fn state_fill(&self) -> Vec<Vec<F>>;

    /// One batched step on `tape`. `state` holds one `[B, dim]` var per
    /// recurrent tensor; returns the outputs and the successor state vars.
    fn step(&self, tape: &mut Tape<F>, bound: &Bindings, obs: Var, state: &[Var]) -> Result<(StepVars, Vec<Var>)>;

    fn initial_state(&self, batch: usize) -> RecurrentState<F> {
        let tensors = self
            .state_fill()
            .into_iter()
            .map(|row| {
                let cols = row.len();
                let data = (0..batch).flat_map(|_| row.iter().copied()).collect();
                Tensor::matrix(batch, cols, data).expect("state shape")
            })
            .collect();
        RecurrentState { kind: self.kind(), tensors }
    }

    fn param_count(&self) -> usize {
        self.params().count()
    }
}

/// Replaces the recurrent rows of environments whose previous step ended an episode.
pub fn reset_state_rows<F: Real>(
    policy: &dyn ActorCritic<F>,
    tape: &mut Tape<F>,
    state: &[Var],
    keep: &[bool],
) -> Result<Vec<Var>> {
    if keep.iter().all(|&k| k) {
        return Ok(state.to_vec());
    }
    let fill = policy.state_fill();
    state.iter().zip(&fill).map(|(&v, f)| tape.reset_rows(v, keep, f)).collect()
}

/// Stacks observations into a `[B, 10]` tensor.
pub fn observation_batch<F: Real>(obs: &[Observation]) -> Tensor<F> {
    let data = obs.iter().flat_map(|o| o.values.iter().map(|&v| F::lit(v))).collect();
    Tensor::matrix(obs.len(), OBS_DIM, data).expect("observation batch")
}

/// Convenience forward pass on a fresh tape.
pub fn forward<F: Real>(
    policy: &dyn ActorCritic<F>,
    obs: &[Observation],
    state: &RecurrentState<F>,
) -> Result<(Vec<PolicyOutput>, RecurrentState<F>)> {
    let mut tape = Tape::new();
    let bound = tape.bind(policy.params());
    let o = tape.constant(observation_batch(obs));
    let s = state.to_tape(&mut tape);
    let (out, next) = policy.step(&mut tape, &bound, o, &s)?;
    Ok((PolicyOutput::from_step(&tape, &out), RecurrentState::from_tape(policy.kind(), &tape, &next)))
}

pub(crate) fn ensure_finite<F: Real>(tape: &Tape<F>, v: Var, module: &'static str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(module, "non-finite activation"))
    }
}

/// Clamped state-independent log standard deviation, `[1, 2]`.
pub(crate) fn clamped_log_std<F: Real>(tape: &mut Tape<F>, raw: Var) -> Var {
    tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)
}

#[cfg(test)]
mod tests;
