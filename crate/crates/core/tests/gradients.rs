mod common;

use common::{random_matrix, random_sample, small_arch};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resgcnn::graph::LambdaMax;
use resgcnn::layers::{
    leaky_relu, leaky_relu_backward, softmax_cross_entropy, softmax_cross_entropy_backward, ChebConvParams,
    DenseParams, GraphBatch, GraphNormParams,
};
use resgcnn::model::ModelParams;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences of `f` w.r.t. every entry of `values`, compared to `analytic`.
fn fd_check(values: &mut [f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + STEP;
        let plus = f(values);
        values[i] = orig - STEP;
        let minus = f(values);
        values[i] = orig;
        worst = worst.max(rel(analytic[i], (plus - minus) / (2.0 * STEP)));
    }
    worst
}

fn batch(rng: &mut ChaCha8Rng, f: usize) -> (GraphBatch, Array2<f64>) {
    let (na, nb) = (rng.random_range(1..=5), rng.random_range(2..=5));
    let a = random_sample(rng, na, f, 0);
    let b = random_sample(rng, nb, f, 0);
    let graphs = GraphBatch::from_samples(&[&a, &b], LambdaMax::Bound).unwrap();
    let mut x = Array2::zeros((a.num_nodes() + b.num_nodes(), f));
    x.slice_mut(ndarray::s![..a.num_nodes(), ..]).assign(&a.node_features);
    x.slice_mut(ndarray::s![a.num_nodes().., ..]).assign(&b.node_features);
    (graphs, x)
}

fn weighted_sum(out: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (out * r).sum()
}

#[test]
fn chebconv_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fin, fout, k) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=4));
        let (graphs, mut x) = batch(&mut rng, fin);
        let mut p = ChebConvParams::zeros(k, fin, fout);
        p.theta.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let r = random_matrix(&mut rng, x.nrows(), fout);
        let (_, cache) = p.forward(&graphs, x.view()).unwrap();
        let g = p.backward(&graphs, &cache, r.view()).unwrap();

        let x0 = x.clone();
        let mut theta = p.theta.clone();
        let err_theta = fd_check(theta.as_slice_mut().unwrap(), g.theta.as_slice().unwrap(), |t| {
            let q = ChebConvParams {
                theta: ndarray::Array3::from_shape_vec(p.theta.raw_dim(), t.to_vec()).unwrap(),
            };
            weighted_sum(&q.forward(&graphs, x0.view()).unwrap().0, &r)
        });
        let shape = x.raw_dim();
        let err_x = fd_check(x.as_slice_mut().unwrap(), g.input.as_slice().unwrap(), |v| {
            let xv = Array2::from_shape_vec(shape, v.to_vec()).unwrap();
            weighted_sum(&p.forward(&graphs, xv.view()).unwrap().0, &r)
        });
        assert!(err_theta < TOL && err_x < TOL, "seed {seed}: {err_theta} {err_x}");
    }
}

#[test]
fn graphnorm_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let f = rng.random_range(1..=8);
        let (graphs, mut x) = batch(&mut rng, f);
        let mut p = GraphNormParams::new(f);
        p.alpha.mapv_inplace(|_| rng.random_range(0.2..1.5));
        p.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        p.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let r = random_matrix(&mut rng, x.nrows(), f);
        let (_, cache) = p.forward(&graphs, x.view()).unwrap();
        let g = p.backward(&graphs, &cache, r.view()).unwrap();

        let x0 = x.clone();
        let mut worst: f64 = 0.0;
        for which in 0..3 {
            let mut v = match which {
                0 => p.alpha.to_vec(),
                1 => p.gamma.to_vec(),
                _ => p.beta.to_vec(),
            };
            let analytic = match which {
                0 => g.alpha.to_vec(),
                1 => g.gamma.to_vec(),
                _ => g.beta.to_vec(),
            };
            worst = worst.max(fd_check(&mut v, &analytic, |vals| {
                let mut q = p.clone();
                let arr = Array1::from(vals.to_vec());
                match which {
                    0 => q.alpha = arr,
                    1 => q.gamma = arr,
                    _ => q.beta = arr,
                }
                weighted_sum(&q.forward(&graphs, x0.view()).unwrap().0, &r)
            }));
        }
        let shape = x.raw_dim();
        worst = worst.max(fd_check(x.as_slice_mut().unwrap(), g.input.as_slice().unwrap(), |v| {
            let xv = Array2::from_shape_vec(shape, v.to_vec()).unwrap();
            weighted_sum(&p.forward(&graphs, xv.view()).unwrap().0, &r)
        }));
        assert!(worst < TOL, "seed {seed}: {worst}");
    }
}

#[test]
fn dense_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (b, fin, fout) = (rng.random_range(1..=4), rng.random_range(1..=8), rng.random_range(1..=8));
        let mut p = DenseParams::zeros(fin, fout);
        p.weight = random_matrix(&mut rng, fin, fout);
        p.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let mut x = random_matrix(&mut rng, b, fin);
        let r = random_matrix(&mut rng, b, fout);
        let (_, cache) = p.forward(x.view()).unwrap();
        let g = p.backward(&cache, r.view()).unwrap();
        let x0 = x.clone();
        let mut w = p.weight.clone();
        let e1 = fd_check(w.as_slice_mut().unwrap(), g.weight.as_slice().unwrap(), |v| {
            let mut q = p.clone();
            q.weight = Array2::from_shape_vec((fin, fout), v.to_vec()).unwrap();
            weighted_sum(&q.forward(x0.view()).unwrap().0, &r)
        });
        let mut bias = p.bias.to_vec();
        let e2 = fd_check(&mut bias, g.bias.as_slice().unwrap(), |v| {
            let mut q = p.clone();
            q.bias = Array1::from(v.to_vec());
            weighted_sum(&q.forward(x0.view()).unwrap().0, &r)
        });
        let e3 = fd_check(x.as_slice_mut().unwrap(), &g.input.iter().copied().collect::<Vec<_>>(), |v| {
            let xv = Array2::from_shape_vec((b, fin), v.to_vec()).unwrap();
            weighted_sum(&p.forward(xv.view()).unwrap().0, &r)
        });
        assert!(e1.max(e2).max(e3) < TOL, "seed {seed}");
    }
}

#[test]
fn leaky_relu_and_softmax_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        // keep inputs away from the kink
        let mut x = Array2::from_shape_fn((3, 5), |_| {
            let v: f64 = rng.random_range(0.01..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let r = random_matrix(&mut rng, 3, 5);
        let g = leaky_relu_backward(x.view(), r.view(), 0.01).unwrap();
        let e = fd_check(x.as_slice_mut().unwrap(), g.as_slice().unwrap(), |v| {
            let xv = Array2::from_shape_vec((3, 5), v.to_vec()).unwrap();
            weighted_sum(&leaky_relu(xv.view(), 0.01), &r)
        });
        assert!(e < TOL, "leaky seed {seed}: {e}");

        let c = rng.random_range(2..=10);
        let label = rng.random_range(0..c);
        let mut logits: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, probs) = softmax_cross_entropy(Array1::from(logits.clone()).view(), label).unwrap();
        let probs2 = probs.insert_axis(ndarray::Axis(0));
        let g = softmax_cross_entropy_backward(probs2.view(), &[label]);
        let e = fd_check(&mut logits, g.as_slice().unwrap(), |v| {
            softmax_cross_entropy(Array1::from(v.to_vec()).view(), label).unwrap().0
        });
        assert!(e < TOL, "softmax seed {seed}: {e}");
    }
}

/// Moves GraphNorm scales and the classifier off their initial values; the
/// zero head would otherwise hide every gradient below it.
fn randomize_norms(model: &mut ModelParams, rng: &mut ChaCha8Rng) {
    for block in &mut model.blocks {
        for layer in &mut block.layers {
            layer.norm.alpha.mapv_inplace(|_| rng.random_range(0.3..1.3));
            layer.norm.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            layer.norm.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
    }
    model.fc.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    model.head.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    model.head.weight.mapv_inplace(|_| rng.random_range(-0.5..0.5));
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut total_checked = 0usize;
    let mut total_skipped = 0usize;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let f = rng.random_range(2..=8);
        let c = rng.random_range(2..=4);
        let mut model = ModelParams::new(small_arch(f), c, seed).unwrap();
        randomize_norms(&mut model, &mut rng);
        // GraphNorm over one or two nodes saturates (outputs collapse to beta
        // or +-gamma), leaving gradients below the resolution of a 1e-5 step
        let samples: Vec<_> = (0..2)
            .map(|_| {
                let n = rng.random_range(3..=5);
                let label = rng.random_range(0..c);
                random_sample(&mut rng, n, f, label)
            })
            .collect();
        let refs: Vec<_> = samples.iter().collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let (_, grads) = model.loss_and_gradients(&refs, true).unwrap();
        let analytic: Vec<Vec<f64>> = grads.params.tensors().iter().map(|(_, t)| t.to_vec()).collect();

        let mut probe = model.clone();
        for (ti, tensor) in analytic.iter().enumerate() {
            for (ei, &g) in tensor.iter().enumerate() {
                let orig = probe.tensors()[ti].1[ei];
                let mut central = |h: f64| {
                    let mut at = |v: f64| {
                        probe.tensors_mut()[ti].1[ei] = v;
                        let t = probe.forward_batch(&refs).unwrap();
                        (t.loss(&labels).unwrap(), t.activation_pattern())
                    };
                    let (lp, pp) = at(orig + h);
                    let (lm, pm) = at(orig - h);
                    probe.tensors_mut()[ti].1[ei] = orig;
                    ((lp - lm) / (2.0 * h), pp == pm)
                };
                let (fd, smooth) = central(STEP);
                if !smooth {
                    total_skipped += 1;
                    continue;
                }
                if rel(g, fd) >= TOL {
                    // a wrong gradient disagrees with a self-consistent oracle;
                    // an oracle that disagrees with itself cannot judge this point
                    let (wide, _) = central(2.0 * STEP);
                    let (narrow, _) = central(0.5 * STEP);
                    let spread = rel(wide, narrow).max(rel(fd, wide)).max(rel(fd, narrow));
                    assert!(
                        spread >= 0.5 * TOL,
                        "seed {seed}, tensor {ti}, element {ei}: analytic {g}, fd {fd} (oracle spread {spread:e})"
                    );
                    total_skipped += 1;
                    continue;
                }
                total_checked += 1;
            }
        }
    }
    assert!(
        total_skipped * 100 < total_checked,
        "too many unresolvable points: {total_skipped} of {total_checked}"
    );
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut model = ModelParams::new(small_arch(6), 3, 5).unwrap();
    randomize_norms(&mut model, &mut rng);
    let sample = random_sample(&mut rng, 4, 6, 2);
    let (_, grads) = model.loss_and_gradients(&[&sample], true).unwrap();
    let analytic = grads.input.unwrap();
    for i in 0..4 {
        for j in 0..6 {
            let mut s = sample.clone();
            s.node_features[[i, j]] += STEP;
            let lp = model.loss(&[&s]).unwrap();
            s.node_features[[i, j]] -= 2.0 * STEP;
            let lm = model.loss(&[&s]).unwrap();
            let fd = (lp - lm) / (2.0 * STEP);
            assert!(rel(analytic[[i, j]], fd) < TOL, "({i},{j}): {} vs {fd}", analytic[[i, j]]);
        }
    }
}

#[test]
fn frozen_backward_zeroes_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = ModelParams::new(small_arch(5), 3, 1).unwrap();
    randomize_norms(&mut model, &mut rng);
    let sample = random_sample(&mut rng, 4, 5, 1);
    let (_, frozen) = model.loss_and_gradients(&[&sample], false).unwrap();
    let (_, full) = model.loss_and_gradients(&[&sample], true).unwrap();
    assert!(frozen.input.is_none());
    assert_eq!(frozen.params.fc, full.params.fc);
    assert_eq!(frozen.params.head, full.params.head);
    assert!(full.params.tensors().iter().any(|(g, t)| *g == resgcnn::model::ParamGroup::Blocks && t.iter().any(|&v| v != 0.0)));
    for (g, _) in frozen.params.tensors().iter().zip(0..) {
        if g.0 == resgcnn::model::ParamGroup::Blocks {
            assert!(g.1.iter().all(|&v| v == 0.0));
        }
    }
}
