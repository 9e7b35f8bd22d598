//! The residual Chebyshev graph network.
//!
//! Four blocks of four ChebNet layers (Chebyshev convolution, GraphNorm,
//! leaky ReLU). Each block adds its input to the output of its last layer;
//! the final node features are the sum of all four block inputs and the last
//! block's output. Node features are mean-pooled per graph and classified by
//! a dense layer with leaky ReLU followed by a softmax head.

mod archive;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use archive::{export_blocks, import_blocks, import_blocks_with, BlockParamsArchive, ModelArchive};

use crate::error::{Error, Result};
use crate::graph::{GraphSample, LambdaMax};
use crate::layers::{
    leaky_relu, leaky_relu_backward, mean_pool, mean_pool_backward, softmax_cross_entropy_backward, BatchLoss,
    ChebConvCache, ChebConvParams, DenseCache, DenseParams, GraphBatch, GraphNormCache, GraphNormParams,
    LEAKY_RELU_SLOPE,
};

pub const NUM_BLOCKS: usize = 4;
pub const LAYERS_PER_BLOCK: usize = 4;

const BLOCK_STREAM: u64 = 0;
const CLASSIFIER_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub out_features: usize,
    pub order: usize,
}

/// Layer widths and graph settings. Parameter shapes depend only on these,
/// never on the node count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_features: usize,
    pub block_layers: [LayerShape; LAYERS_PER_BLOCK],
    pub fc_features: usize,
    pub lambda_max: LambdaMax,
    pub leaky_slope: f64,
}

impl Default for Architecture {
    /// 128 -> 256 (K=2) -> 512 (K=3) -> 256 (K=3) -> 128 (K=2) per block; FC 128 -> 64.
    fn default() -> Self {
        Self {
            in_features: 128,
            block_layers: [
                LayerShape { out_features: 256, order: 2 },
                LayerShape { out_features: 512, order: 3 },
                LayerShape { out_features: 256, order: 3 },
                LayerShape { out_features: 128, order: 2 },
            ],
            fc_features: 64,
            lambda_max: LambdaMax::Bound,
            leaky_slope: LEAKY_RELU_SLOPE,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.in_features == 0 || self.fc_features == 0 {
            return Err(Error::invalid("feature widths must be positive"));
        }
        if self.block_layers.iter().any(|l| l.out_features == 0 || l.order == 0) {
            return Err(Error::invalid("layer widths and Chebyshev orders must be positive"));
        }
        if self.block_layers[LAYERS_PER_BLOCK - 1].out_features != self.in_features {
            return Err(Error::invalid(
                "the last layer of a block must return to the block input width",
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::invalid("leaky ReLU slope must lie in (0, 1)"));
        }
        Ok(())
    }

    /// `(order, in, out)` for each of the four layers of a block.
    pub fn layer_dims(&self) -> [(usize, usize, usize); LAYERS_PER_BLOCK] {
        let mut dims = [(0, 0, 0); LAYERS_PER_BLOCK];
        let mut fin = self.in_features;
        for (d, l) in dims.iter_mut().zip(&self.block_layers) {
            *d = (l.order, fin, l.out_features);
            fin = l.out_features;
        }
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChebNetLayerParams {
    pub conv: ChebConvParams,
    pub norm: GraphNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub layers: Vec<ChebNetLayerParams>,
}

/// Which part of the network a tensor belongs to; transfer freezes `Blocks`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Blocks,
    Classifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub blocks: Vec<BlockParams>,
    pub fc: DenseParams,
    pub head: DenseParams,
    /// Set when the blocks come from a transferred archive.
    pub blocks_frozen: bool,
}

fn uniform_fill(values: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in values {
        *v = rng.random_range(-bound..bound);
    }
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn init_blocks(arch: &Architecture, seed: u64) -> Vec<BlockParams> {
    let mut rng = seeded(seed, BLOCK_STREAM);
    (0..NUM_BLOCKS)
        .map(|_| BlockParams {
            layers: arch
                .layer_dims()
                .iter()
                .map(|&(k, fin, fout)| {
                    let mut conv = ChebConvParams::zeros(k, fin, fout);
                    uniform_fill(conv.theta.as_slice_mut().expect("standard layout"), k * fin, fout, &mut rng);
                    ChebNetLayerParams {
                        conv,
                        norm: GraphNormParams::new(fout),
                    }
                })
                .collect(),
        })
        .collect()
}

pub(crate) fn init_classifier(arch: &Architecture, num_classes: usize, seed: u64) -> (DenseParams, DenseParams) {
    let mut rng = seeded(seed, CLASSIFIER_STREAM);
    let mut fc = DenseParams::zeros(arch.in_features, arch.fc_features);
    uniform_fill(
        fc.weight.as_slice_mut().expect("standard layout"),
        arch.in_features,
        arch.fc_features,
        &mut rng,
    );
    // a zero head starts every graph at the uniform distribution
    let head = DenseParams::zeros(arch.fc_features, num_classes);
    (fc, head)
}

/// Default architecture, randomly initialized from `seed`.
pub fn build_model(num_classes: usize, seed: u64) -> Result<ModelParams> {
    ModelParams::new(Architecture::default(), num_classes, seed)
}

impl ModelParams {
    /// Blocks draw from one seeded stream and the classifier from another, so
    /// two models built with the same seed share their classifier
    /// initialization even when one of them receives transferred blocks.
    pub fn new(arch: Architecture, num_classes: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        if num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        let blocks = init_blocks(&arch, seed);
        let (fc, head) = init_classifier(&arch, num_classes, seed);
        Ok(Self {
            arch,
            blocks,
            fc,
            head,
            blocks_frozen: false,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_features()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, t| t.fill(0.0));
        z
    }

    pub fn unfreeze_blocks(&mut self) {
        self.blocks_frozen = false;
    }

    /// Learnable tensors in a fixed order: block layers (theta, alpha, gamma,
    /// beta), then FC weight/bias, then head weight/bias.
    pub fn tensors(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out: Vec<(ParamGroup, &[f64])> = Vec::new();
        for block in &self.blocks {
            for layer in &block.layers {
                out.push((ParamGroup::Blocks, layer.conv.theta.as_slice().expect("standard layout")));
                out.push((ParamGroup::Blocks, layer.norm.alpha.as_slice().expect("standard layout")));
                out.push((ParamGroup::Blocks, layer.norm.gamma.as_slice().expect("standard layout")));
                out.push((ParamGroup::Blocks, layer.norm.beta.as_slice().expect("standard layout")));
            }
        }
        for dense in [&self.fc, &self.head] {
            out.push((ParamGroup::Classifier, dense.weight.as_slice().expect("standard layout")));
            out.push((ParamGroup::Classifier, dense.bias.as_slice().expect("standard layout")));
        }
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::new();
        for block in &mut self.blocks {
            for layer in &mut block.layers {
                out.push((ParamGroup::Blocks, layer.conv.theta.as_slice_mut().expect("standard layout")));
                out.push((ParamGroup::Blocks, layer.norm.alpha.as_slice_mut().expect("standard layout")));
                out.push((ParamGroup::Blocks, layer.norm.gamma.as_slice_mut().expect("standard layout")));
                out.push((ParamGroup::Blocks, layer.norm.beta.as_slice_mut().expect("standard layout")));
            }
        }
        for dense in [&mut self.fc, &mut self.head] {
            out.push((ParamGroup::Classifier, dense.weight.as_slice_mut().expect("standard layout")));
            out.push((ParamGroup::Classifier, dense.bias.as_slice_mut().expect("standard layout")));
        }
        out
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(ParamGroup, &mut [f64])) {
        for (group, t) in self.tensors_mut() {
            f(group, t);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Forward pass on one graph.
    pub fn forward(&self, sample: &GraphSample) -> Result<(Array1<f64>, ForwardTrace)> {
        let trace = self.forward_batch(&[sample])?;
        Ok((trace.probabilities.row(0).to_owned(), trace))
    }

    pub fn forward_batch(&self, samples: &[&GraphSample]) -> Result<ForwardTrace> {
        if samples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let graphs = GraphBatch::from_samples(samples, self.arch.lambda_max)?;
        let mut x = Array2::<f64>::zeros((graphs.total_nodes(), self.arch.in_features));
        for (sample, rows) in samples.iter().zip(graphs.segments()) {
            if sample.num_features() != self.arch.in_features {
                return Err(Error::shape(format!(
                    "model expects {} node features, sample has {}",
                    self.arch.in_features,
                    sample.num_features()
                )));
            }
            x.slice_mut(ndarray::s![rows.clone(), ..]).assign(&sample.node_features);
        }
        self.forward_stacked(graphs, x)
    }

    /// Class probabilities for a batch, without keeping intermediates.
    pub fn predict_batch(&self, samples: &[&GraphSample]) -> Result<Array2<f64>> {
        Ok(self.forward_batch(samples)?.probabilities)
    }

    fn forward_stacked(&self, graphs: GraphBatch, x: Array2<f64>) -> Result<ForwardTrace> {
        let slope = self.arch.leaky_slope;
        let mut block_inputs = Vec::with_capacity(NUM_BLOCKS);
        let mut layers = Vec::with_capacity(NUM_BLOCKS * LAYERS_PER_BLOCK);
        let mut residual_sum = Array2::<f64>::zeros(x.raw_dim());
        let mut h = x;
        for block in &self.blocks {
            residual_sum += &h;
            let mut z = h.clone();
            for layer in &block.layers {
                let (conv_out, conv) = layer.conv.forward(&graphs, z.view())?;
                let (pre_activation, norm) = layer.norm.forward(&graphs, conv_out.view())?;
                z = leaky_relu(pre_activation.view(), slope);
                layers.push(LayerTrace {
                    conv,
                    norm,
                    pre_activation,
                });
            }
            block_inputs.push(std::mem::replace(&mut h, Array2::zeros((0, 0))));
            h = &block_inputs[block_inputs.len() - 1] + &z;
        }
        let final_features = residual_sum + &h;
        let pooled = mean_pool(&graphs, final_features.view())?;
        let (fc_pre, fc_cache) = self.fc.forward(pooled.view())?;
        let fc_out = leaky_relu(fc_pre.view(), slope);
        let (logits, head_cache) = self.head.forward(fc_out.view())?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model logits".into()));
        }
        let probabilities = Array2::from_shape_fn(logits.raw_dim(), |_| 0.0);
        let mut trace = ForwardTrace {
            graphs,
            layers,
            block_inputs,
            final_features,
            pooled,
            fc_cache,
            fc_pre,
            head_cache,
            logits,
            probabilities,
        };
        for (mut p, row) in trace.probabilities.outer_iter_mut().zip(trace.logits.outer_iter()) {
            p.assign(&crate::layers::softmax(row));
        }
        Ok(trace)
    }

    /// Mean cross-entropy over `labels` and its gradient. With
    /// `blocks == false` the block tensors get zero gradient and the
    /// backward pass stops at the pooled features.
    pub fn backward(&self, trace: &ForwardTrace, labels: &[usize], blocks: bool) -> Result<ModelGradients> {
        if labels.len() != trace.graphs.len() {
            return Err(Error::shape(format!(
                "{} labels for a batch of {} graphs",
                labels.len(),
                trace.graphs.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes()) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                self.num_classes()
            )));
        }
        let slope = self.arch.leaky_slope;
        let mut grads = self.zeros_like();

        let d_logits = softmax_cross_entropy_backward(trace.probabilities.view(), labels);
        let head = self.head.backward(&trace.head_cache, d_logits.view())?;
        grads.head.weight = head.weight;
        grads.head.bias = head.bias;
        let d_fc_pre = leaky_relu_backward(trace.fc_pre.view(), head.input.view(), slope)?;
        let fc = self.fc.backward(&trace.fc_cache, d_fc_pre.view())?;
        grads.fc.weight = fc.weight;
        grads.fc.bias = fc.bias;

        if !blocks {
            return Ok(ModelGradients { params: grads, input: None });
        }

        let d_final = mean_pool_backward(&trace.graphs, fc.input.view());
        // gradient w.r.t. the current block's output
        let mut d_out = d_final.clone();
        for (bi, block) in self.blocks.iter().enumerate().rev() {
            let mut dz = d_out.clone();
            for (li, layer) in block.layers.iter().enumerate().rev() {
                let t = &trace.layers[bi * LAYERS_PER_BLOCK + li];
                let d_pre = leaky_relu_backward(t.pre_activation.view(), dz.view(), slope)?;
                let norm = layer.norm.backward(&trace.graphs, &t.norm, d_pre.view())?;
                let conv = layer.conv.backward(&trace.graphs, &t.conv, norm.input.view())?;
                let g = &mut grads.blocks[bi].layers[li];
                g.norm.alpha = norm.alpha;
                g.norm.gamma = norm.gamma;
                g.norm.beta = norm.beta;
                g.conv.theta = conv.theta;
                dz = conv.input;
            }
            // block input feeds the intra-block skip, the layer stack, and the final sum
            d_out = d_out + dz + &d_final;
        }
        Ok(ModelGradients {
            params: grads,
            input: Some(d_out),
        })
    }

    /// Batch-mean loss and gradients in one call.
    pub fn loss_and_gradients(&self, samples: &[&GraphSample], blocks: bool) -> Result<(f64, ModelGradients)> {
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let trace = self.forward_batch(samples)?;
        let loss = trace.loss(&labels)?;
        let grads = self.backward(&trace, &labels, blocks)?;
        Ok((loss, grads))
    }

    /// Batch-mean loss only.
    pub fn loss(&self, samples: &[&GraphSample]) -> Result<f64> {
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        self.forward_batch(samples)?.loss(&labels)
    }
}

#[derive(Debug, Clone)]
struct LayerTrace {
    conv: ChebConvCache,
    norm: GraphNormCache,
    pre_activation: Array2<f64>,
}

/// Intermediates of one forward pass, consumed by [`ModelParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    graphs: GraphBatch,
    layers: Vec<LayerTrace>,
    block_inputs: Vec<Array2<f64>>,
    final_features: Array2<f64>,
    pooled: Array2<f64>,
    fc_cache: DenseCache,
    fc_pre: Array2<f64>,
    head_cache: DenseCache,
    logits: Array2<f64>,
    pub probabilities: Array2<f64>,
}

impl ForwardTrace {
    pub fn block_inputs(&self) -> &[Array2<f64>] {
        &self.block_inputs
    }

    /// Sum of the four block inputs and the last block's output.
    pub fn final_features(&self) -> ArrayView2<'_, f64> {
        self.final_features.view()
    }

    pub fn pooled(&self) -> ArrayView2<'_, f64> {
        self.pooled.view()
    }

    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.logits.view()
    }

    pub fn loss(&self, labels: &[usize]) -> Result<f64> {
        Ok(BatchLoss::compute(self.logits.view(), labels)?.loss)
    }

    /// Sign of every leaky ReLU input (`true` when positive). Finite
    /// differences are only meaningful between traces whose patterns agree.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.layers
            .iter()
            .flat_map(|l| l.pre_activation.iter())
            .chain(self.fc_pre.iter())
            .map(|&v| v > 0.0)
            .collect()
    }

    /// Predicted classes by argmax; ties go to the lowest index.
    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(self.probabilities.view())
    }
}

pub fn argmax_rows(p: ArrayView2<f64>) -> Vec<usize> {
    p.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Parameter gradients plus, when blocks were differentiated, the gradient
/// w.r.t. the stacked input node features.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub params: ModelParams,
    pub input: Option<Array2<f64>>,
}
