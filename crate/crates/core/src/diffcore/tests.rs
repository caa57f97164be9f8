use approx::assert_abs_diff_eq;

use super::*;

fn row(v: &[f64]) -> Tensor<f64> {
    Tensor::from_rows(&[v.to_vec()]).unwrap()
}

#[test]
fn dense_identity_and_hand_product() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(row(&[0.3, -2.0]));
    let eye = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let zero = tape.constant(Tensor::vector(&[0.0, 0.0]));
    let y = tape.dense(x, eye, Some(zero)).unwrap();
    assert_eq!(tape.value(y).data(), &[0.3, -2.0]);

    let x = tape.constant(row(&[1.0, 1.0]));
    let w = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let b = tape.constant(Tensor::vector(&[0.5, -0.5]));
    let y = tape.dense(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[3.5, 6.5]);
}

#[test]
fn dense_input_gradient_is_column_sums() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(row(&[0.7, -0.2]));
    let w = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let y = tape.dense(x, w, None).unwrap();
    let l = tape.sum(y);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[4.0, 6.0]);
}

#[test]
fn dense_shape_mismatch_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(row(&[1.0, 2.0, 3.0]));
    let w = tape.constant(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.dense(x, w, None), Err(crate::Error::Shape { .. })));
}

#[test]
fn activations_values_and_slopes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(row(&[0.0, 1.0, -1.0]));
    let t = tape.activation(x, Activation::Tanh);
    let r = tape.activation(x, Activation::Relu);
    assert_eq!(tape.value(t).data()[0], 0.0);
    assert_abs_diff_eq!(tape.value(t).data()[1], 0.761_594_155_955_764_9, epsilon = 1e-12);
    assert_eq!(tape.value(r).data()[2], 0.0);
    let s = tape.add(t, r).unwrap();
    let l = tape.sum(s);
    let g = tape.backward(l).unwrap();
    let g = g.wrt(x).unwrap().data();
    // d tanh/dx at 0 is 1 (relu contributes 0 there), d relu/dx at 1 is 1.
    assert_eq!(g[0], 1.0);
    assert_abs_diff_eq!(g[1], 1.0 + (1.0 - 1f64.tanh().powi(2)), epsilon = 1e-12);
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::<f64>::new();
    let gain = tape.constant(Tensor::vector(&[1.0, 1.0]));
    let off = tape.constant(Tensor::vector(&[0.0, 0.0]));
    let x = tape.constant(row(&[1.0, -1.0]));
    let y = tape.layer_norm(x, gain, off).unwrap();
    let want = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert_abs_diff_eq!(tape.value(y).data()[0], want, epsilon = 1e-12);
    assert_abs_diff_eq!(tape.value(y).data()[1], -want, epsilon = 1e-12);

    let gain = tape.constant(Tensor::full(&[5], 1.0));
    let off = tape.constant(Tensor::zeros(&[5]));
    let c = tape.constant(row(&[2.5; 5]));
    let y = tape.layer_norm(c, gain, off).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let x = tape.constant(row(&[0.3, -1.7, 2.2, 0.9, -0.4]));
    let y = tape.layer_norm(x, gain, off).unwrap();
    let v = tape.value(y).data();
    let mean = v.iter().sum::<f64>() / 5.0;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 5.0;
    assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);

    let one = tape.constant(row(&[1.0]));
    let g1 = tape.constant(Tensor::vector(&[1.0]));
    assert!(tape.layer_norm(one, g1, g1).is_err());
}

#[test]
fn top_k_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(row(&[3.0, 1.0, 2.0, 0.0]));
    let all = tape.top_k(x, 4).unwrap();
    assert_eq!(tape.value(all).data(), &[3.0, 1.0, 2.0, 0.0]);
    let two = tape.top_k(x, 2).unwrap();
    assert_eq!(tape.value(two).data(), &[3.0, 0.0, 2.0, 0.0]);
    let ties = tape.constant(row(&[1.0, 1.0, 1.0]));
    let one = tape.top_k(ties, 1).unwrap();
    assert_eq!(tape.value(one).data(), &[1.0, 0.0, 0.0]);
    assert!(tape.top_k(x, 0).is_err());
    assert!(tape.top_k(x, 5).is_err());

    let l = tape.sum(two);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let u = tape.constant(row(&[0.7; 4]));
    let y = tape.softmax(u);
    assert!(tape.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    let x = tape.constant(row(&[0.0, 3f64.ln()]));
    let y = tape.softmax(x);
    assert_abs_diff_eq!(tape.value(y).data()[0], 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(tape.value(y).data()[1], 0.75, epsilon = 1e-12);
    let a = tape.constant(row(&[0.1, -2.0, 5.0]));
    let b = tape.constant(row(&[1000.1, 998.0, 1005.0]));
    let (ya, yb) = (tape.softmax(a), tape.softmax(b));
    for (p, q) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
        assert_abs_diff_eq!(p, q, epsilon = 1e-9);
    }
}

#[test]
fn gaussian_log_prob_and_entropy_closed_forms() {
    let mut tape = Tape::<f64>::new();
    let mu = tape.leaf(row(&[0.2, -0.4]));
    let ls = tape.leaf(row(&[0.0, 0.0]));
    let lp = tape.gaussian_log_prob(mu, ls, &[0.2, -0.4]).unwrap();
    assert_abs_diff_eq!(tape.value(lp).item(), -(2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
    assert_abs_diff_eq!(tape.value(lp).item(), -1.837_877_066_4, epsilon = 1e-10);
    assert_abs_diff_eq!(2.0 * HALF_LN_2PI_E, 2.837_877_066_4, epsilon = 1e-10);

    let mut last = f64::INFINITY;
    for d in [0.0, 0.1, 0.5, 1.0, 3.0] {
        let lp = tape.gaussian_log_prob(mu, ls, &[0.2 + d, -0.4]).unwrap();
        let v = tape.value(lp).item();
        assert!(v < last || d == 0.0);
        last = v;
    }
}

#[test]
fn backward_requires_scalar_and_runs_once() {
    let mut tape = Tape::<f64>::new();
    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::vector(&[1.0, 2.0]));
    let p = tape.param(&store, id);
    assert!(tape.backward(p).is_err());
    let sq = tape.square(p);
    let l = tape.sum(sq);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.param(id).unwrap().data(), &[2.0, 4.0]);
    assert!(matches!(tape.backward(l), Err(crate::Error::Usage(_))));

    tape.reset();
    let p = tape.param(&store, id);
    let l = tape.sum(p);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.param(id).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut tape = Tape::<f64>::new();
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_rows(&[vec![0.3, -0.7, 1.1], vec![0.2, 0.5, -0.9]]).unwrap());
        let w = tape.param(&store, id);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.25]]).unwrap());
        let y = tape.dense(x, w, None).unwrap();
        let y = tape.softmax(y);
        let y = tape.log_softmax(y);
        let l = tape.mean(y);
        tape.backward(l).unwrap().param(id).unwrap().clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn primitive_suite_passes() {
    for report in suite::primitive_suite(7).unwrap() {
        assert!(report.passed(), "{report}");
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_is_a_shift_invariant_simplex(
            logits in proptest::collection::vec(-30.0f64..30.0, 2..12),
            shift in -50.0f64..50.0,
        ) {
            let mut tape = Tape::<f64>::new();
            let a = tape.constant(row(&logits));
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let b = tape.constant(row(&shifted));
            let (ya, yb) = (tape.softmax(a), tape.softmax(b));
            let pa = tape.value(ya).data();
            let pb = tape.value(yb).data();
            prop_assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(pa.iter().all(|&p| p >= 0.0));
            for (p, q) in pa.iter().zip(pb) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn top_k_after_relu_has_at_most_k_nonzeros(
            xs in proptest::collection::vec(-5.0f64..5.0, 4..64),
            k_frac in 0.0f64..1.0,
        ) {
            let n = xs.len();
            let k = 1 + ((n - 1) as f64 * k_frac) as usize;
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(row(&xs));
            let r = tape.relu(x);
            let y = tape.top_k(r, k).unwrap();
            let nz = tape.value(y).data().iter().filter(|&&v| v != 0.0).count();
            let positives = xs.iter().filter(|&&v| v > 0.0).count();
            prop_assert_eq!(nz, positives.min(k));
        }

        #[test]
        fn gru_output_stays_in_open_unit_interval(
            h in proptest::collection::vec(-0.999f64..0.999, 4),
            x in proptest::collection::vec(-3.0f64..3.0, 3),
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new();
            let p = GruParams::register(&mut store, "g", 3, 4);
            for id in store.ids().collect::<Vec<_>>() {
                let s = store.get(id).shape().to_vec();
                let n = store.get(id).numel();
                *store.get_mut(id) = Tensor::new(s, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            }
            let mut tape = Tape::new();
            let bound = tape.bind(&store);
            let xv = tape.constant(row(&x));
            let hv = tape.constant(row(&h));
            let y = gru_cell(&mut tape, &p, &bound, xv, hv).unwrap();
            prop_assert!(tape.value(y).data().iter().all(|v| v.abs() < 1.0));
        }
    }
}
