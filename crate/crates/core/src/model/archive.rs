//! Little-endian binary archives for trained parameters.
//!
//! Block archive layout:
//!
//! ```text
//! magic "RGCNBLK\0" | u32 version | u32 channels | u32 source_classes
//! u32 in_features | u32 blocks | u32 layers_per_block
//! per layer (16): u32 order, u32 in, u32 out
//! u8 lambda mode | f64 leaky slope | per layer: f64 epsilon
//! 16 x theta (row-major K x in x out)
//! 16 x (alpha, gamma, beta)
//! ```

use std::path::Path;

use ndarray::{Array1, Array3};

use super::{
    init_classifier, Architecture, BlockParams, ChebNetLayerParams, LayerShape, ModelParams, LAYERS_PER_BLOCK,
    NUM_BLOCKS,
};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::graph::LambdaMax;
use crate::layers::{ChebConvParams, DenseParams, GraphNormParams};

const BLOCK_MAGIC: &[u8; 8] = b"RGCNBLK\0";
const MODEL_MAGIC: &[u8; 8] = b"RGCNMDL\0";
const VERSION: u32 = 1;

/// The 4 x 4 block parameter sets of a trained model plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParamsArchive {
    pub channels: u32,
    pub source_classes: u32,
    pub in_features: usize,
    pub block_layers: [LayerShape; LAYERS_PER_BLOCK],
    pub lambda_max: LambdaMax,
    pub leaky_slope: f64,
    pub blocks: Vec<BlockParams>,
}

pub fn export_blocks(params: &ModelParams, channels: usize) -> BlockParamsArchive {
    BlockParamsArchive {
        channels: channels as u32,
        source_classes: params.num_classes() as u32,
        in_features: params.arch.in_features,
        block_layers: params.arch.block_layers,
        lambda_max: params.arch.lambda_max,
        leaky_slope: params.arch.leaky_slope,
        blocks: params.blocks.clone(),
    }
}

/// Default architecture with the archive's blocks and a fresh classifier.
pub fn import_blocks(archive: &BlockParamsArchive, num_target_classes: usize, seed: u64) -> Result<ModelParams> {
    import_blocks_with(archive, &Architecture::default(), num_target_classes, seed)
}

/// Like [`import_blocks`] but checks the archive against `arch`.
/// The classifier matches `ModelParams::new(arch, classes, seed)` exactly.
pub fn import_blocks_with(
    archive: &BlockParamsArchive,
    arch: &Architecture,
    num_target_classes: usize,
    seed: u64,
) -> Result<ModelParams> {
    arch.validate()?;
    if archive.in_features != arch.in_features || archive.block_layers != arch.block_layers {
        return Err(Error::shape(format!(
            "archive layer table (in {}, {:?}) does not match the model ({}, {:?})",
            archive.in_features, archive.block_layers, arch.in_features, arch.block_layers
        )));
    }
    if archive.lambda_max != arch.lambda_max || archive.leaky_slope.to_bits() != arch.leaky_slope.to_bits() {
        return Err(Error::invalid(
            "archive graph settings differ from the target architecture",
        ));
    }
    if num_target_classes < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 classes, got {num_target_classes}"
        )));
    }
    check_block_shapes(&archive.blocks, arch)?;
    let (fc, head) = init_classifier(arch, num_target_classes, seed);
    Ok(ModelParams {
        arch: arch.clone(),
        blocks: archive.blocks.clone(),
        fc,
        head,
        blocks_frozen: true,
    })
}

fn check_block_shapes(blocks: &[BlockParams], arch: &Architecture) -> Result<()> {
    if blocks.len() != NUM_BLOCKS {
        return Err(Error::shape(format!("expected {NUM_BLOCKS} blocks, found {}", blocks.len())));
    }
    for block in blocks {
        if block.layers.len() != LAYERS_PER_BLOCK {
            return Err(Error::shape(format!(
                "expected {LAYERS_PER_BLOCK} layers per block, found {}",
                block.layers.len()
            )));
        }
        for (layer, &(k, fin, fout)) in block.layers.iter().zip(arch.layer_dims().iter()) {
            if layer.conv.theta.dim() != (k, fin, fout)
                || layer.norm.alpha.len() != fout
                || layer.norm.gamma.len() != fout
                || layer.norm.beta.len() != fout
            {
                return Err(Error::shape(format!(
                    "layer tensor shapes do not match ({k}, {fin}, {fout})"
                )));
            }
        }
    }
    Ok(())
}

impl BlockParamsArchive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(BLOCK_MAGIC);
        w.u32(VERSION);
        w.u32(self.channels);
        w.u32(self.source_classes);
        w.u32(self.in_features as u32);
        w.u32(NUM_BLOCKS as u32);
        w.u32(LAYERS_PER_BLOCK as u32);
        let mut fin = self.in_features;
        for _ in 0..NUM_BLOCKS {
            for l in &self.block_layers {
                w.u32(l.order as u32);
                w.u32(fin as u32);
                w.u32(l.out_features as u32);
                fin = l.out_features;
            }
        }
        w.u8(match self.lambda_max {
            LambdaMax::Bound => 0,
            LambdaMax::PowerIteration => 1,
        });
        w.f64(self.leaky_slope);
        for layer in self.layers() {
            w.f64(layer.norm.epsilon);
        }
        for layer in self.layers() {
            w.f64s(layer.conv.theta.iter());
        }
        for layer in self.layers() {
            w.f64s(layer.norm.alpha.iter());
            w.f64s(layer.norm.gamma.iter());
            w.f64s(layer.norm.beta.iter());
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != BLOCK_MAGIC {
            return Err(Error::Archive("not a block archive".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Archive(format!("unsupported version {version}")));
        }
        let channels = r.u32()?;
        let source_classes = r.u32()?;
        let in_features = r.u32()? as usize;
        if r.u32()? as usize != NUM_BLOCKS || r.u32()? as usize != LAYERS_PER_BLOCK {
            return Err(Error::Archive("unexpected block layout".into()));
        }
        let mut dims = Vec::with_capacity(NUM_BLOCKS * LAYERS_PER_BLOCK);
        for _ in 0..NUM_BLOCKS * LAYERS_PER_BLOCK {
            dims.push((r.u32()? as usize, r.u32()? as usize, r.u32()? as usize));
        }
        let mut block_layers = [LayerShape { out_features: 0, order: 0 }; LAYERS_PER_BLOCK];
        for (slot, &(k, _, fout)) in block_layers.iter_mut().zip(&dims) {
            *slot = LayerShape { out_features: fout, order: k };
        }
        let mut fin = in_features;
        for (i, &(k, din, fout)) in dims.iter().enumerate() {
            let expected = block_layers[i % LAYERS_PER_BLOCK];
            if din != fin || k != expected.order || fout != expected.out_features {
                return Err(Error::Archive(format!("inconsistent shape table at layer {i}")));
            }
            fin = fout;
        }
        if fin != in_features {
            return Err(Error::Archive("blocks do not return to the input width".into()));
        }
        let lambda_max = match r.u8()? {
            0 => LambdaMax::Bound,
            1 => LambdaMax::PowerIteration,
            other => return Err(Error::Archive(format!("unknown lambda mode {other}"))),
        };
        let leaky_slope = r.f64()?;
        let epsilons = (0..dims.len()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mut thetas = Vec::with_capacity(dims.len());
        for &(k, din, fout) in &dims {
            let values = r.f64s(k * din * fout)?;
            thetas.push(Array3::from_shape_vec((k, din, fout), values).expect("length checked"));
        }
        let mut layers = Vec::with_capacity(dims.len());
        for ((theta, &(_, _, fout)), epsilon) in thetas.into_iter().zip(&dims).zip(epsilons) {
            let alpha = Array1::from(r.f64s(fout)?);
            let gamma = Array1::from(r.f64s(fout)?);
            let beta = Array1::from(r.f64s(fout)?);
            layers.push(ChebNetLayerParams {
                conv: ChebConvParams { theta },
                norm: GraphNormParams {
                    alpha,
                    gamma,
                    beta,
                    epsilon,
                },
            });
        }
        r.finish()?;
        let mut it = layers.into_iter();
        let blocks = (0..NUM_BLOCKS)
            .map(|_| BlockParams {
                layers: it.by_ref().take(LAYERS_PER_BLOCK).collect(),
            })
            .collect();
        Ok(Self {
            channels,
            source_classes,
            in_features,
            block_layers,
            lambda_max,
            leaky_slope,
            blocks,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn num_cheb_tensors(&self) -> usize {
        self.layers().count()
    }

    fn layers(&self) -> impl Iterator<Item = &ChebNetLayerParams> {
        self.blocks.iter().flat_map(|b| b.layers.iter())
    }
}

/// A complete trained model: block archive, classifier and freeze flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub params: ModelParams,
    pub channels: u32,
}

impl ModelArchive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let blocks = export_blocks(&self.params, self.channels as usize).to_bytes();
        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        w.u32(VERSION);
        w.u64(blocks.len() as u64);
        w.bytes(&blocks);
        w.u32(self.params.arch.fc_features as u32);
        w.u32(self.params.num_classes() as u32);
        for dense in [&self.params.fc, &self.params.head] {
            w.f64s(dense.weight.iter());
            w.f64s(dense.bias.iter());
        }
        w.u8(self.params.blocks_frozen as u8);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MODEL_MAGIC {
            return Err(Error::Archive("not a model archive".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Archive(format!("unsupported version {version}")));
        }
        let len = r.u64()? as usize;
        let blocks = BlockParamsArchive::from_bytes(r.take(len)?)?;
        let fc_features = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let arch = Architecture {
            in_features: blocks.in_features,
            block_layers: blocks.block_layers,
            fc_features,
            lambda_max: blocks.lambda_max,
            leaky_slope: blocks.leaky_slope,
        };
        arch.validate()?;
        let mut dense = |fin: usize, fout: usize| -> Result<DenseParams> {
            let weight = ndarray::Array2::from_shape_vec((fin, fout), r.f64s(fin * fout)?).expect("length checked");
            let bias = Array1::from(r.f64s(fout)?);
            Ok(DenseParams { weight, bias })
        };
        let fc = dense(arch.in_features, fc_features)?;
        let head = dense(fc_features, classes)?;
        let blocks_frozen = r.u8()? != 0;
        r.finish()?;
        Ok(Self {
            channels: blocks.channels,
            params: ModelParams {
                arch,
                blocks: blocks.blocks,
                fc,
                head,
                blocks_frozen,
            },
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
