use rand::Rng;

use crate::diffcore::{orthogonal, Activation, Bindings, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::Result;

/// Affine layer `x·Wᵀ + b`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        input: usize,
        output: usize,
        gain: f64,
        bias: bool,
    ) -> Self {
        let w = store.add(format!("{name}.w"), orthogonal(output, input, gain, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[output])));
        Linear { w, b }
    }

    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, bound: &Bindings, x: Var) -> Result<Var> {
        tape.dense(x, bound[self.w], self.b.map(|b| bound[b]))
    }
}

/// Stack of linear layers; `hidden_act` after every layer but the last,
/// `out_act` (if any) after the last.
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    layers: Vec<Linear>,
    hidden_act: Activation,
    out_act: Option<Activation>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`; the output layer uses `out_gain`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        dims: &[usize],
        hidden_act: Activation,
        out_act: Option<Activation>,
        out_gain: f64,
    ) -> Self {
        let gain_for = |a: Activation| match a {
            Activation::Relu => crate::diffcore::RELU_GAIN,
            _ => crate::diffcore::TANH_GAIN,
        };
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { out_gain } else { gain_for(hidden_act) };
                Linear::new(store, rng, &format!("{name}.{i}"), dims[i], dims[i + 1], gain, true)
            })
            .collect();
        Mlp { layers, hidden_act, out_act }
    }

    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, bound: &Bindings, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            x = l.apply(tape, bound, x)?;
            let act = if i + 1 == n { self.out_act } else { Some(self.hidden_act) };
            if let Some(a) = act {
                x = tape.activation(x, a);
            }
        }
        Ok(x)
    }
}
