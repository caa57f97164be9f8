use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::{Real, Tensor};

/// Gain for layers followed by ReLU.
pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
/// Gain for layers followed by tanh or used linearly.
pub const TANH_GAIN: f64 = 1.0;
/// Gain for action-mean output layers.
pub const POLICY_HEAD_GAIN: f64 = 0.01;

/// Orthogonal init for a `[rows, cols]` weight matrix, scaled by `gain`.
///
/// Rows are orthonormal when `rows <= cols`, columns otherwise.
pub fn orthogonal<F: Real>(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Tensor<F> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // `short` column vectors of length `tall`, orthonormalised in place.
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for j in 0..short {
        for i in 0..j {
            let dot: f64 = q[j].iter().zip(&q[i]).map(|(a, b)| a * b).sum();
            let (head, tail) = q.split_at_mut(j);
            tail[0].iter_mut().zip(&head[i]).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = q[j].iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        q[j].iter_mut().for_each(|a| *a /= norm);
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = if rows >= cols { q[c][r] } else { q[r][c] };
            data.push(F::lit(gain * v));
        }
    }
    Tensor::matrix(rows, cols, data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gram(t: &Tensor<f64>, by_rows: bool) -> Vec<Vec<f64>> {
        let (r, c) = (t.rows(), t.cols());
        let vecs: Vec<Vec<f64>> = if by_rows {
            (0..r).map(|i| t.row(i).to_vec()).collect()
        } else {
            (0..c).map(|j| (0..r).map(|i| t.row(i)[j]).collect()).collect()
        };
        vecs.iter().map(|a| vecs.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect()).collect()
    }

    #[test]
    fn wide_and_tall_matrices_are_orthonormal_up_to_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (r, c, by_rows) in [(4, 9, true), (9, 4, false)] {
            let w = orthogonal::<f64>(r, c, 2.0, &mut rng);
            let g = gram(&w, by_rows);
            for (i, row) in g.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let want = if i == j { 4.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-9);
                }
            }
        }
    }
}
