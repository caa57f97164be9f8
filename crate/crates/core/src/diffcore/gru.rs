use super::params::{ParamId, ParamStore};
use super::tape::{Bindings, Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::Result;

/// Parameter ids of one gated recurrent unit.
///
/// Gate rows are stacked `[reset; update; candidate]`, each `hidden` tall.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    /// Registers zero-initialised tensors under `prefix`.
    pub fn register<F: Real>(store: &mut ParamStore<F>, prefix: &str, input: usize, hidden: usize) -> Self {
        GruParams {
            w_ih: store.add(format!("{prefix}.w_ih"), Tensor::zeros(&[3 * hidden, input])),
            w_hh: store.add(format!("{prefix}.w_hh"), Tensor::zeros(&[3 * hidden, hidden])),
            b_ih: store.add(format!("{prefix}.b_ih"), Tensor::zeros(&[3 * hidden])),
            b_hh: store.add(format!("{prefix}.b_hh"), Tensor::zeros(&[3 * hidden])),
            input,
            hidden,
        }
    }
}

/// One GRU step:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// u  = σ(W_iu x + b_iu + W_hu h + b_hu)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − u) ⊙ n + u ⊙ h
/// ```
pub fn gru_cell<F: Real>(tape: &mut Tape<F>, p: &GruParams, bound: &Bindings, x: Var, h: Var) -> Result<Var> {
    let hd = p.hidden;
    let gi = tape.dense(x, bound[p.w_ih], Some(bound[p.b_ih]))?;
    let gh = tape.dense(h, bound[p.w_hh], Some(bound[p.b_hh]))?;
    let (ir, iu, in_) = (tape.slice_cols(gi, 0, hd)?, tape.slice_cols(gi, hd, hd)?, tape.slice_cols(gi, 2 * hd, hd)?);
    let (hr, hu, hn) = (tape.slice_cols(gh, 0, hd)?, tape.slice_cols(gh, hd, hd)?, tape.slice_cols(gh, 2 * hd, hd)?);
    let r = tape.add(ir, hr)?;
    let r = tape.sigmoid(r);
    let u = tape.add(iu, hu)?;
    let u = tape.sigmoid(u);
    let rn = tape.mul(hn, r)?;
    let n = tape.add(in_, rn)?;
    let n = tape.tanh(n);
    // n + u ⊙ (h − n)
    let d = tape.sub(h, n)?;
    let ud = tape.mul(d, u)?;
    tape.add(n, ud)
}
