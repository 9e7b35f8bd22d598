//! Numerical self-test battery: gradients against finite differences,
//! Chebyshev filtering against eigendecomposition filtering, GraphNorm
//! standardization and metric identities.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resgcnn::data::DatasetId;
use resgcnn::eval::{f1_score, MetricsReport};
use resgcnn::gradcheck::check_model_gradients;
use resgcnn::graph::{normalized_laplacian, scale_laplacian, GraphSample, SampleMeta};
use resgcnn::layers::{ChebConvParams, GraphBatch, GraphNormParams};
use resgcnn::model::{Architecture, LayerShape, ModelParams};

pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const SPECTRAL_TOLERANCE: f64 = 1e-8;
pub const GRAPHNORM_TOLERANCE: f64 = 1e-9;
pub const METRIC_TOLERANCE: f64 = 1e-12;

/// Knobs for exercising the harness itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelfCheckOptions {
    /// Added to every analytic gradient before comparison.
    pub gradient_bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub passed: bool,
    pub note: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<6} {:<28} max error {:.3e} (tolerance {:.0e}, {} cases){}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance,
            self.cases,
            if self.note.is_empty() { String::new() } else { format!("; {}", self.note) }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SelfCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(f, "{}", if self.passed() { "all checks passed" } else { "self-check FAILED" })
    }
}

pub fn run_selfcheck(options: SelfCheckOptions) -> SelfCheckReport {
    SelfCheckReport {
        checks: vec![
            gradient_check(20, options.gradient_bias),
            spectral_check(50),
            graphnorm_check(50),
            metric_check(1000),
        ],
    }
}

fn failed(name: &'static str, tolerance: f64, err: impl fmt::Display) -> CheckResult {
    CheckResult {
        name,
        max_error: f64::NAN,
        tolerance,
        cases: 0,
        passed: false,
        note: err.to_string(),
    }
}

fn meta() -> SampleMeta {
    SampleMeta {
        dataset: DatasetId::Synthetic,
        subject: 0,
    }
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Array2<u8> {
    let mut a = Array2::<u8>::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.5) {
                a[[i, j]] = 1;
                a[[j, i]] = 1;
            }
        }
    }
    a
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn small_arch(f: usize) -> Architecture {
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

/// Full-model gradients of small random networks (N <= 5, F <= 8, C <= 4).
pub fn gradient_check(instances: u64, bias: f64) -> CheckResult {
    const NAME: &str = "gradients vs central FD";
    let mut total = None;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let f = rng.random_range(2..=8);
        let c = rng.random_range(2..=4);
        let mut model = match ModelParams::new(small_arch(f), c, seed) {
            Ok(m) => m,
            Err(e) => return failed(NAME, GRADIENT_TOLERANCE, e),
        };
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
        let samples: Vec<GraphSample> = (0..2)
            .map(|_| {
                let n = rng.random_range(3..=5);
                let x = random_matrix(&mut rng, n, f);
                let a = random_adjacency(&mut rng, n);
                GraphSample::new(x, a, rng.random_range(0..c), meta()).expect("valid random sample")
            })
            .collect();
        let refs: Vec<&GraphSample> = samples.iter().collect();
        let outcome = match check_model_gradients(&model, &refs, GRADIENT_STEP, GRADIENT_TOLERANCE, bias) {
            Ok(o) => o,
            Err(e) => return failed(NAME, GRADIENT_TOLERANCE, e),
        };
        total = Some(match total {
            None => outcome,
            Some(t) => outcome.merge(t),
        });
    }
    let Some(t) = total else {
        return failed(NAME, GRADIENT_TOLERANCE, "no instances");
    };
    CheckResult {
        name: NAME,
        max_error: t.max_relative_error,
        tolerance: GRADIENT_TOLERANCE,
        cases: instances as usize,
        passed: t.passed(),
        note: format!(
            "{} elements, {} at kinks, {} unresolved, {} failures",
            t.checked, t.skipped_kinks, t.unresolved, t.failures
        ),
    }
}

/// `T_k(x)` by the scalar three-term recursion.
fn chebyshev(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return prev;
    }
    for _ in 1..k {
        (prev, cur) = (cur, 2.0 * x * cur - prev);
    }
    cur
}

/// Chebyshev recursion output against `U T_k(Lambda) U^T X Theta_k` summed
/// over orders, on random graphs with up to 12 nodes.
pub fn spectral_check(graphs: u64) -> CheckResult {
    const NAME: &str = "Chebyshev vs eigen filter";
    let mut worst = 0.0f64;
    for seed in 0..graphs {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let n = rng.random_range(1..=12);
        let f_in = rng.random_range(1..=8);
        let f_out = rng.random_range(1..=8);
        let k = rng.random_range(1..=4);
        let a = random_adjacency(&mut rng, n);
        let x = random_matrix(&mut rng, n, f_in);
        let lambda_max = rng.random_range(1.0..2.0);
        let lt = match normalized_laplacian(a.view()).and_then(|l| scale_laplacian(l, lambda_max)) {
            Ok(lt) => lt,
            Err(e) => return failed(NAME, SPECTRAL_TOLERANCE, e),
        };
        let theta = Array3::from_shape_fn((k, f_in, f_out), |_| rng.random_range(-1.0..1.0));
        let conv = ChebConvParams { theta: theta.clone() };
        let fast = match conv.forward(&GraphBatch::single(&lt), x.view()) {
            Ok((y, _)) => y,
            Err(e) => return failed(NAME, SPECTRAL_TOLERANCE, e),
        };

        let l = DMatrix::from_fn(n, n, |i, j| lt.matrix[[i, j]]);
        let eig = SymmetricEigen::new(l);
        let xm = DMatrix::from_fn(n, f_in, |i, j| x[[i, j]]);
        let mut reference = DMatrix::<f64>::zeros(n, f_out);
        for order in 0..k {
            let cheb = |lambda: f64| chebyshev(order, lambda);
            let diag = DMatrix::from_diagonal(&eig.eigenvalues.map(cheb));
            let filter = &eig.eigenvectors * diag * eig.eigenvectors.transpose();
            let t = DMatrix::from_fn(f_in, f_out, |i, j| theta[[order, i, j]]);
            reference += filter * &xm * t;
        }
        for i in 0..n {
            for j in 0..f_out {
                worst = worst.max((fast[[i, j]] - reference[(i, j)]).abs());
            }
        }
    }
    CheckResult {
        name: NAME,
        max_error: worst,
        tolerance: SPECTRAL_TOLERANCE,
        cases: graphs as usize,
        passed: worst < SPECTRAL_TOLERANCE,
        note: String::new(),
    }
}

/// With unit scales and zero shift, every graph's features leave GraphNorm
/// with zero mean and variance `v / (v + eps)`.
pub fn graphnorm_check(batches: u64) -> CheckResult {
    const NAME: &str = "GraphNorm standardization";
    let mut worst = 0.0f64;
    for seed in 0..batches {
        let mut rng = ChaCha8Rng::seed_from_u64(8000 + seed);
        let f = rng.random_range(1..=8);
        let sizes: Vec<usize> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..=10)).collect();
        let samples: Vec<GraphSample> = sizes
            .iter()
            .map(|&n| {
                let scale = rng.random_range(0.1..10.0);
                let x = random_matrix(&mut rng, n, f).mapv(|v| scale * v + 3.0);
                let a = random_adjacency(&mut rng, n);
                GraphSample::new(x, a, 0, meta()).expect("valid random sample")
            })
            .collect();
        let refs: Vec<&GraphSample> = samples.iter().collect();
        let batch = match GraphBatch::from_samples(&refs, Default::default()) {
            Ok(b) => b,
            Err(e) => return failed(NAME, GRAPHNORM_TOLERANCE, e),
        };
        let views: Vec<_> = samples.iter().map(|s| s.node_features.view()).collect();
        let x = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths");
        let norm = GraphNormParams::new(f);
        let y = match norm.forward(&batch, x.view()) {
            Ok((y, _)) => y,
            Err(e) => return failed(NAME, GRAPHNORM_TOLERANCE, e),
        };
        for rows in batch.segments() {
            let n = rows.len() as f64;
            for j in 0..f {
                let xs: Vec<f64> = rows.clone().map(|i| x[[i, j]]).collect();
                let ys: Vec<f64> = rows.clone().map(|i| y[[i, j]]).collect();
                let mx = xs.iter().sum::<f64>() / n;
                let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
                worst = worst.max(my.abs()).max((vy - vx / (vx + norm.epsilon)).abs());
            }
        }
    }
    CheckResult {
        name: NAME,
        max_error: worst,
        tolerance: GRAPHNORM_TOLERANCE,
        cases: batches as usize,
        passed: worst < GRAPHNORM_TOLERANCE,
        note: String::new(),
    }
}

/// Accuracy, precision, recall and F1 recomputed from raw counts on random
/// confusion matrices, plus the two-class worked example.
pub fn metric_check(matrices: u64) -> CheckResult {
    const NAME: &str = "metric identities";
    let mut worst = 0.0f64;
    let mut violations = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    let mut cases = 0;
    while cases < matrices {
        let c = rng.random_range(1..=8);
        let m: Vec<Vec<u64>> = (0..c)
            .map(|_| (0..c).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..50) }).collect())
            .collect();
        let total: u64 = m.iter().flatten().sum();
        if total == 0 {
            continue;
        }
        cases += 1;
        let r = match MetricsReport::from_confusion(m.clone()) {
            Ok(r) => r,
            Err(e) => return failed(NAME, METRIC_TOLERANCE, e),
        };
        let trace: u64 = (0..c).map(|k| m[k][k]).sum();
        worst = worst.max((r.overall_accuracy - 100.0 * trace as f64 / total as f64).abs());
        for k in 0..c {
            let col: u64 = m.iter().map(|row| row[k]).sum();
            let row: u64 = m[k].iter().sum();
            let p = if col == 0 { 0.0 } else { 100.0 * m[k][k] as f64 / col as f64 };
            let q = if row == 0 { 0.0 } else { 100.0 * m[k][k] as f64 / row as f64 };
            let f1 = if p + q == 0.0 { 0.0 } else { 2.0 * p * q / (p + q) };
            let got = r.per_class[k];
            worst = worst
                .max((got.precision - p).abs())
                .max((got.recall - q).abs())
                .max((got.f1 - f1).abs());
            let lo = got.precision.min(got.recall);
            let hi = got.precision.max(got.recall);
            if !(got.f1 >= lo - METRIC_TOLERANCE && got.f1 <= hi + METRIC_TOLERANCE) {
                violations += 1;
            }
        }
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / c as f64;
        worst = worst
            .max((r.macro_f1 - mean(r.per_class.iter().map(|m| m.f1).collect())).abs())
            .max((r.macro_precision - mean(r.per_class.iter().map(|m| m.precision).collect())).abs())
            .max((r.macro_recall - mean(r.per_class.iter().map(|m| m.recall).collect())).abs());
        if r.sample_count != total || !(0.0..=100.0).contains(&r.overall_accuracy) {
            violations += 1;
        }
    }
    match MetricsReport::from_confusion(vec![vec![8, 2], vec![3, 7]]) {
        Ok(r) => {
            let expected = [
                (r.overall_accuracy, 75.0),
                (r.per_class[0].precision, 800.0 / 11.0),
                (r.per_class[0].recall, 80.0),
                (r.per_class[1].precision, 700.0 / 9.0),
                (r.per_class[1].recall, 70.0),
                (r.per_class[0].f1, f1_score(800.0 / 11.0, 80.0)),
            ];
            for (got, want) in expected {
                worst = worst.max((got - want).abs());
            }
        }
        Err(e) => return failed(NAME, METRIC_TOLERANCE, e),
    }
    CheckResult {
        name: NAME,
        max_error: worst,
        tolerance: METRIC_TOLERANCE,
        cases: cases as usize + 1,
        passed: worst <= METRIC_TOLERANCE && violations == 0,
        note: if violations == 0 { String::new() } else { format!("{violations} bound violations") },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_build_passes() {
        let report = run_selfcheck(SelfCheckOptions::default());
        assert!(report.passed(), "{report}");
        assert_eq!(report.checks.len(), 4);
        assert!(report.checks.iter().all(|c| c.max_error.is_finite()));
    }

    #[test]
    fn perturbed_gradients_fail() {
        let check = gradient_check(2, 1e-2);
        assert!(!check.passed, "{check}");
        assert!(check.max_error > GRADIENT_TOLERANCE);
    }
}
