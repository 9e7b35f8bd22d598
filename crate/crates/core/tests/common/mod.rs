#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use resgcnn::data::DatasetId;
use resgcnn::graph::{GraphSample, SampleMeta};
use resgcnn::model::{Architecture, LayerShape};

pub fn meta() -> SampleMeta {
    SampleMeta {
        dataset: DatasetId::Synthetic,
        subject: 0,
    }
}

/// Symmetric 0/1 matrix with unit diagonal and roughly `density` off-diagonal fill.
pub fn random_adjacency(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Array2<u8> {
    let mut a = Array2::<u8>::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                a[[i, j]] = 1;
                a[[j, i]] = 1;
            }
        }
    }
    a
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn random_sample(rng: &mut ChaCha8Rng, n: usize, f: usize, label: usize) -> GraphSample {
    let x = random_matrix(rng, n, f);
    let a = random_adjacency(rng, n, 0.5);
    GraphSample::new(x, a, label, meta()).unwrap()
}

/// Narrow network for gradient checks: every width at most 8.
pub fn small_arch(f: usize) -> Architecture {
    Architecture {
        in_features: f,
        block_layers: [
            LayerShape { out_features: 7, order: 2 },
            LayerShape { out_features: 8, order: 3 },
            LayerShape { out_features: 6, order: 3 },
            LayerShape { out_features: f, order: 2 },
        ],
        fc_features: 5,
        ..Architecture::default()
    }
}
