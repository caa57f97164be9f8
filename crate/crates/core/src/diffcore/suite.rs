//! Finite-difference suite over every tape primitive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_inputs, check_params, GradCheckReport, Tolerance};
use super::{gru_cell, GruParams, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Random values bounded away from zero, so kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Weighted sum so every output coordinate carries a distinct gradient.
fn probe(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let n = tape.value(y).numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

pub fn primitive_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let tol = Tolerance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let (x, w, b) = (random(&mut rng, 3, 5), random(&mut rng, 4, 5), random(&mut rng, 1, 4));
    out.push(check_inputs("dense", &[x, w, b], tol, |t, v| {
        let y = t.dense(v[0], v[1], Some(v[2]))?;
        probe(t, y, 1)
    })?);

    let x = random(&mut rng, 3, 4).map(|v| 2.0 * v);
    out.push(check_inputs("tanh", &[x.clone()], tol, |t, v| {
        let y = t.tanh(v[0]);
        probe(t, y, 2)
    })?);
    out.push(check_inputs("sigmoid", &[x.clone()], tol, |t, v| {
        let y = t.sigmoid(v[0]);
        probe(t, y, 3)
    })?);
    out.push(check_inputs("exp", &[x.clone()], tol, |t, v| {
        let y = t.exp(v[0]);
        probe(t, y, 4)
    })?);
    out.push(check_inputs("square", &[x], tol, |t, v| {
        let y = t.square(v[0]);
        probe(t, y, 5)
    })?);
    let x = away_from_zero(&mut rng, 3, 4);
    out.push(check_inputs("relu", &[x.clone()], tol, |t, v| {
        let y = t.relu(v[0]);
        probe(t, y, 6)
    })?);
    out.push(check_inputs("abs", &[x.clone()], tol, |t, v| {
        let y = t.abs(v[0]);
        probe(t, y, 7)
    })?);
    out.push(check_inputs("clamp", &[x], tol, |t, v| {
        let y = t.clamp(v[0], -0.55, 0.45);
        probe(t, y, 8)
    })?);

    let (a, b) = (random(&mut rng, 3, 4), random(&mut rng, 3, 4));
    out.push(check_inputs("minimum", &[a.clone(), b.clone()], tol, |t, v| {
        let y = t.minimum(v[0], v[1])?;
        probe(t, y, 9)
    })?);
    let (row, col) = (random(&mut rng, 1, 4), random(&mut rng, 3, 1));
    out.push(check_inputs("broadcast add/sub/mul", &[a, b, row, col], tol, |t, v| {
        let s = t.add(v[0], v[2])?;
        let d = t.sub(s, v[1])?;
        let m = t.mul(d, v[3])?;
        let m = t.mul(m, v[1])?;
        probe(t, m, 10)
    })?);

    let (x, g, o) = (random(&mut rng, 3, 6), random(&mut rng, 1, 6), random(&mut rng, 1, 6));
    out.push(check_inputs("layer_norm", &[x, g, o], tol, |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2])?;
        probe(t, y, 11)
    })?);

    // Distinct, well-separated entries keep the selected set fixed under the probe step.
    let mut vals: Vec<f64> = (0..16).map(|i| i as f64 * 0.1 - 0.75).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let x = Tensor::matrix(2, 8, vals)?;
    out.push(check_inputs("top_k", &[x], tol, |t, v| {
        let y = t.top_k(v[0], 3)?;
        probe(t, y, 12)
    })?);

    let x = random(&mut rng, 3, 5).map(|v| 3.0 * v);
    out.push(check_inputs("softmax", &[x.clone()], tol, |t, v| {
        let y = t.softmax(v[0]);
        probe(t, y, 13)
    })?);
    out.push(check_inputs("log_softmax", &[x], tol, |t, v| {
        let y = t.log_softmax(v[0]);
        probe(t, y, 14)
    })?);

    let (a, b) = (random(&mut rng, 2, 3), random(&mut rng, 2, 4));
    out.push(check_inputs("concat/slice/sum_cols", &[a, b], tol, |t, v| {
        let c = t.concat(&[v[0], v[1]])?;
        let s = t.slice_cols(c, 2, 4)?;
        let r = t.sum_cols(s);
        let sq = t.square(r);
        let m = t.mean(sq);
        let p = probe(t, s, 15)?;
        t.add(m, p)
    })?);

    let x = random(&mut rng, 3, 4);
    out.push(check_inputs("reset_rows", &[x], tol, |t, v| {
        let y = t.reset_rows(v[0], &[true, false, true], &[0.5, 0.5, 0.5, 0.5])?;
        let y = t.tanh(y);
        probe(t, y, 16)
    })?);

    let (mu, ls) = (random(&mut rng, 3, 2), random(&mut rng, 1, 2));
    let act: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
    out.push(check_inputs("gaussian_log_prob", &[mu, ls], tol, |t, v| {
        let y = t.gaussian_log_prob(v[0], v[1], &act)?;
        probe(t, y, 17)
    })?);

    // Three chained GRU steps, gradients w.r.t. every gate parameter.
    let mut store = ParamStore::<f64>::new();
    let p = GruParams::register(&mut store, "gru", 3, 4);
    for id in store.ids().collect::<Vec<_>>() {
        let s = store.get(id).shape().to_vec();
        let n = store.get(id).numel();
        *store.get_mut(id) = Tensor::new(s, (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect())?;
    }
    let xs: Vec<Tensor<f64>> = (0..3).map(|_| random(&mut rng, 2, 3)).collect();
    let h0 = random(&mut rng, 2, 4);
    out.push(check_params("gru_cell x3 (params)", &store, None, seed, tol, |t, s| {
        let bound = t.bind(s);
        let mut h = t.constant(h0.clone());
        for x in &xs {
            let x = t.constant(x.clone());
            h = gru_cell(t, &p, &bound, x, h)?;
        }
        probe(t, h, 18)
    })?);
    let mut inputs = xs.clone();
    inputs.push(h0.clone());
    out.push(check_inputs("gru_cell x3 (inputs)", &inputs, tol, |t, v| {
        let bound = t.bind(&store);
        let mut h = v[3];
        for &x in &v[..3] {
            h = gru_cell(t, &p, &bound, x, h)?;
        }
        probe(t, h, 19)
    })?);

    Ok(out)
}
