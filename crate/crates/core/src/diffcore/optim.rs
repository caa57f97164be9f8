use super::params::{ParamId, ParamStore};
use super::tape::Gradients;
use super::tensor::Real;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment estimates for one parameter store.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros = |id: ParamId| vec![F::zero(); store.get(id).numel()];
        AdamState { m: store.ids().map(zeros).collect(), v: store.ids().map(zeros).collect(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam step (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
///
/// Parameters without a gradient entry are treated as having zero gradient.
pub fn adam_step<F: Real>(
    store: &mut ParamStore<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
    lr: f64,
) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::shape("adam_step", format!("{} moment slots for {} params", state.m.len(), store.len())));
    }
    for (id, g) in grads.params() {
        if g.numel() != store.get(id).numel() {
            return Err(Error::shape("adam_step", format!("gradient for {} has {} entries", store.name(id), g.numel())));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (F::lit(ADAM_BETA1), F::lit(ADAM_BETA2));
    let one = F::one();
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let lr = F::lit(lr);
    let eps = F::lit(ADAM_EPS);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let Some(g) = grads.param(id) else {
            // Zero gradient: moments still decay, parameters still move.
            let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
            if m.iter().all(|x| *x == F::zero()) {
                continue;
            }
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = b1 * m[k];
                v[k] = b2 * v[k];
                p[k] = p[k] - lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
            continue;
        };
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        let p = store.get_mut(id).data_mut();
        for (k, &gk) in g.data().iter().enumerate() {
            m[k] = b1 * m[k] + (one - b1) * gk;
            v[k] = b2 * v[k] + (one - b2) * gk * gk;
            p[k] = p[k] - lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm over all parameter gradients, accumulated in f64.
pub fn grad_norm<F: Real>(grads: &Gradients<F>) -> f64 {
    let mut ids: Vec<_> = grads.params().map(|(id, _)| id).collect();
    ids.sort();
    ids.iter()
        .flat_map(|&id| grads.param(id).unwrap().data().iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Real>(grads: &mut Gradients<F>, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm.is_finite() {
        grads.scale_params(F::lit(max_norm / (norm + 1e-6)));
    }
    norm
}
