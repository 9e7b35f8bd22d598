mod common;

use common::{random_adjacency, random_matrix};
use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resgcnn::graph::{normalized_laplacian, scale_laplacian, ScaledLaplacian};
use resgcnn::layers::{
    leaky_relu, softmax, softmax_cross_entropy, BatchLoss, ChebConvParams, DenseParams, GraphBatch,
    GraphNormParams,
};

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> ScaledLaplacian {
    let a = random_adjacency(rng, n, 0.5);
    scale_laplacian(normalized_laplacian(a.view()).unwrap(), 2.0).unwrap()
}

fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn chebconv_with_identity_operator_sums_orders() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_matrix(&mut rng, 4, 3);
    let theta = Array3::from_shape_fn((2, 3, 5), |_| rng.random_range(-1.0..1.0));
    let lt = ScaledLaplacian {
        matrix: Array2::eye(4),
        lambda_max: 2.0,
    };
    let conv = ChebConvParams { theta: theta.clone() };
    let (y, _) = conv.forward(&GraphBatch::single(&lt), x.view()).unwrap();
    let summed = &theta.index_axis(ndarray::Axis(0), 0) + &theta.index_axis(ndarray::Axis(0), 1);
    assert!(max_diff(&y, &x.dot(&summed)) < 1e-12);
}

#[test]
fn chebconv_is_linear_in_its_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let n = rng.random_range(2..=8);
        let lt = random_graph(&mut rng, n);
        let conv = ChebConvParams {
            theta: Array3::from_shape_fn((3, 4, 2), |_| rng.random_range(-1.0..1.0)),
        };
        let batch = GraphBatch::single(&lt);
        let x1 = random_matrix(&mut rng, n, 4);
        let x2 = random_matrix(&mut rng, n, 4);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let combined = &x1 * a + &x2 * b;
        let (y, _) = conv.forward(&batch, combined.view()).unwrap();
        let (y1, _) = conv.forward(&batch, x1.view()).unwrap();
        let (y2, _) = conv.forward(&batch, x2.view()).unwrap();
        assert!(max_diff(&y, &(&y1 * a + &y2 * b)) < 1e-12);
    }
}

#[test]
fn graphnorm_matches_explicit_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let f = 5;
    let sizes = [3usize, 1, 6];
    let graphs: Vec<ScaledLaplacian> = sizes.iter().map(|&n| random_graph(&mut rng, n)).collect();
    let batch = GraphBatch::from_laplacians(graphs);
    let x = random_matrix(&mut rng, sizes.iter().sum(), f).mapv(|v| 4.0 * v + 1.0);
    let mut norm = GraphNormParams::new(f);
    norm.alpha.mapv_inplace(|_| rng.random_range(0.0..1.5));
    norm.gamma.mapv_inplace(|_| rng.random_range(-2.0..2.0));
    norm.beta.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    let (y, _) = norm.forward(&batch, x.view()).unwrap();
    for rows in batch.segments() {
        let n = rows.len() as f64;
        for j in 0..f {
            let mean = rows.clone().map(|i| x[[i, j]]).sum::<f64>() / n;
            let shift = norm.alpha[j] * mean;
            let var = rows.clone().map(|i| (x[[i, j]] - shift).powi(2)).sum::<f64>() / n;
            for i in rows.clone() {
                let want = norm.gamma[j] * (x[[i, j]] - shift) / (var + norm.epsilon).sqrt() + norm.beta[j];
                assert!((y[[i, j]] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn graphnorm_with_zero_gamma_emits_beta_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let lt = random_graph(&mut rng, 5);
    let mut norm = GraphNormParams::new(3);
    norm.gamma.fill(0.0);
    norm.beta = Array1::from(vec![0.5, -1.0, 2.0]);
    let x = random_matrix(&mut rng, 5, 3);
    let (y, _) = norm.forward(&GraphBatch::single(&lt), x.view()).unwrap();
    for row in y.outer_iter() {
        assert_eq!(row, norm.beta);
    }
}

#[test]
fn dense_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let dense = DenseParams {
        weight: random_matrix(&mut rng, 6, 4),
        bias: Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0)),
    };
    let x = random_matrix(&mut rng, 3, 6);
    let (y, _) = dense.forward(x.view()).unwrap();
    for b in 0..3 {
        for o in 0..4 {
            let mut acc = dense.bias[o];
            for i in 0..6 {
                acc += x[[b, i]] * dense.weight[[i, o]];
            }
            assert!((y[[b, o]] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn leaky_relu_examples() {
    let x = Array1::from(vec![-2.0, -0.0, 0.0, 3.0]);
    assert_eq!(leaky_relu(x.view(), 0.01), Array1::from(vec![-0.02, 0.0, 0.0, 3.0]));
}

#[test]
fn softmax_examples() {
    let (loss, p) = softmax_cross_entropy(Array1::zeros(4).view(), 2).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-15);
    assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    let (loss, p) = softmax_cross_entropy(Array1::from(vec![1000.0, 0.0]).view(), 0).unwrap();
    assert!(loss.abs() < 1e-300 || loss == 0.0);
    assert!(p.iter().all(|v| v.is_finite()));
    let batch = BatchLoss::compute(Array2::zeros((3, 5)).view(), &[0, 1, 4]).unwrap();
    assert!((batch.loss - 5f64.ln()).abs() < 1e-15);
}

/// `ln sum_j exp(z_j - z_y)` with sorted Kahan summation.
fn careful_cross_entropy(z: &[f64], y: usize) -> f64 {
    let mut terms: Vec<f64> = z.iter().map(|v| (v - z[y]).exp()).collect();
    terms.sort_by(f64::total_cmp);
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for t in terms {
        let adj = t - carry;
        let next = sum + adj;
        carry = (next - sum) - adj;
        sum = next;
    }
    sum.ln()
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-500.0..500.0f64, 1..16)) {
        let p = softmax(Array1::from(z).view());
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_careful_oracle(
        (z, y) in (2usize..12).prop_flat_map(|c| (prop::collection::vec(-30.0..30.0f64, c), 0..c)),
    ) {
        let (loss, _) = softmax_cross_entropy(Array1::from(z.clone()).view(), y).unwrap();
        let want = careful_cross_entropy(&z, y);
        prop_assert!((loss - want).abs() <= 1e-10 * want.abs().max(1.0), "{} vs {}", loss, want);
    }
}
