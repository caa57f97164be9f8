//! Central finite-difference checks of tape gradients (double precision).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { step: 1e-5, rel: 1e-4, abs: 1e-6 }
    }
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let err = (analytic - numeric).abs();
        err <= self.abs || err / analytic.abs().max(numeric.abs()) <= self.rel
    }
}

/// Worst disagreement found by a check.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    pub max_abs_err: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} {:>6} coords  max|err| {:.2e}  {}",
            self.name,
            self.checked,
            self.max_abs_err,
            if self.passed() { "ok" } else { "FAIL" }
        )?;
        if let (false, Some(w)) = (self.passed(), &self.worst) {
            write!(f, "  ({}[{}]: analytic {:.6e} numeric {:.6e})", w.tensor, w.index, w.analytic, w.numeric)?;
        }
        Ok(())
    }
}

struct Acc {
    report: GradCheckReport,
    tol: Tolerance,
    worst_err: f64,
}

impl Acc {
    fn new(name: &str, tol: Tolerance) -> Self {
        Acc {
            report: GradCheckReport { name: name.into(), checked: 0, failures: 0, max_abs_err: 0.0, worst: None },
            tol,
            worst_err: -1.0,
        }
    }

    fn record(&mut self, tensor: &str, index: usize, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs();
        let r = &mut self.report;
        r.checked += 1;
        r.max_abs_err = r.max_abs_err.max(err);
        let ok = self.tol.accepts(analytic, numeric);
        if !ok {
            r.failures += 1;
        }
        // Track the worst failing coordinate, or the worst overall if none fail.
        let score = if ok { err } else { f64::INFINITY };
        if score > self.worst_err || (!ok && r.failures == 1) {
            self.worst_err = score;
            r.worst = Some(Mismatch { tensor: tensor.into(), index, analytic, numeric });
        }
    }
}

/// Checks `d f / d inputs` for a function of explicit leaf tensors.
pub fn check_inputs(
    name: &str,
    inputs: &[Tensor<f64>],
    tol: Tolerance,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut acc = Acc::new(name, tol);
    let mut xs = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        for k in 0..inputs[i].numel() {
            let analytic = grads.wrt(*v).map_or(0.0, |g| g.data()[k]);
            let x0 = xs[i].data()[k];
            xs[i].data_mut()[k] = x0 + tol.step;
            let up = eval(&xs)?;
            xs[i].data_mut()[k] = x0 - tol.step;
            let down = eval(&xs)?;
            xs[i].data_mut()[k] = x0;
            acc.record(&format!("input{i}"), k, analytic, (up - down) / (2.0 * tol.step));
        }
    }
    Ok(acc.report)
}

/// Checks `d loss / d params`.
///
/// With `per_tensor = Some(n)` at most `n` randomly chosen coordinates of
/// each tensor are perturbed; `None` checks every coordinate.
pub fn check_params(
    name: &str,
    store: &ParamStore<f64>,
    per_tensor: Option<usize>,
    seed: u64,
    tol: Tolerance,
    loss: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    let grads = tape.backward(out)?;
    drop(tape);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = loss(&mut tape, s)?;
        Ok(tape.value(out).item())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Acc::new(name, tol);
    let mut work = store.clone();
    for id in store.ids() {
        let n = store.get(id).numel();
        let coords: Vec<usize> = match per_tensor {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for k in coords {
            let analytic = grads.param(id).map_or(0.0, |g| g.data()[k]);
            let x0 = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = x0 + tol.step;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = x0 - tol.step;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = x0;
            acc.record(store.name(id), k, analytic, (up - down) / (2.0 * tol.step));
        }
    }
    Ok(acc.report)
}
