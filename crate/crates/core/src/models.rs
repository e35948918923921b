//! The three network architectures, their output heads and composite losses.
//!
//! A [`ModelBundle`] is the serialisable description (layer specs plus `f32`
//! parameters and metadata); a [`Network`] is its runtime form with `f64`
//! parameters, used for both inference and training.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureConfig, FeatureKind, N_CHANNELS};
use crate::error::invalid;
use crate::eval::PcaBasis;
use crate::nn::loss::{mse_grad, softmax_ce_grad};
use crate::nn::{
    init_layer_params, kld_gaussian_standard, reparameterize, softmax_in_place, LatentDistribution, LayerSpec,
    Sequential, Workspace, PROB_CLAMP,
};
use crate::{Error, Result};

/// Width of the embedding bottleneck.
pub const N_EMB: usize = 2;
pub const N_LOCATIONS: usize = 5;
pub const MAX_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureId {
    TablaCnn,
    PercCnn,
    PercVae,
}

impl ArchitectureId {
    pub const ALL: [ArchitectureId; 3] = [ArchitectureId::TablaCnn, ArchitectureId::PercCnn, ArchitectureId::PercVae];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchitectureId::TablaCnn => "tabla_cnn",
            ArchitectureId::PercCnn => "perc_cnn",
            ArchitectureId::PercVae => "perc_vae",
        }
    }

    /// TablaCNN reads 80-band mel features; the Perc* networks decimated FFT bins.
    pub fn feature_kind(self) -> FeatureKind {
        match self {
            ArchitectureId::TablaCnn => FeatureKind::Mel80,
            ArchitectureId::PercCnn | ArchitectureId::PercVae => FeatureKind::Fft64,
        }
    }

    pub fn input_shape(self) -> [usize; 2] {
        [N_CHANNELS, self.feature_kind().bins()]
    }
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| invalid!("unknown architecture '{s}' (expected tabla_cnn, perc_cnn or perc_vae)"))
    }
}

/// Output head configuration: hand-part classes, location classes, embedding width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub n_cl: usize,
    pub n_loc: usize,
    pub n_emb: usize,
}

impl HeadConfig {
    pub const TWO_CLASS: HeadConfig = HeadConfig { n_cl: 2, n_loc: 0, n_emb: N_EMB };
    pub const FOUR_CLASS: HeadConfig = HeadConfig { n_cl: 4, n_loc: 0, n_emb: N_EMB };
    pub const HIERARCHICAL: HeadConfig = HeadConfig { n_cl: 4, n_loc: N_LOCATIONS, n_emb: N_EMB };

    pub fn new(n_cl: usize, n_loc: usize) -> Result<Self> {
        let head = HeadConfig { n_cl, n_loc, n_emb: N_EMB };
        head.validate()?;
        Ok(head)
    }

    pub fn is_hierarchical(&self) -> bool {
        self.n_loc > 0
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!((self.n_cl, self.n_loc), (2, 0) | (4, 0) | (4, N_LOCATIONS)) {
            return Err(invalid!(
                "head (n_cl={}, n_loc={}) is not one of (2,0), (4,0), (4,5)",
                self.n_cl,
                self.n_loc
            ));
        }
        if self.n_emb != N_EMB {
            return Err(invalid!("embedding width must be {N_EMB}, got {}", self.n_emb));
        }
        Ok(())
    }

    pub fn validate_for(&self, arch: ArchitectureId) -> Result<()> {
        self.validate()?;
        if arch == ArchitectureId::PercVae && self.is_hierarchical() {
            return Err(Error::Unsupported("the hierarchical head is not available on perc_vae".into()));
        }
        Ok(())
    }
}

/// How the squared reconstruction error of one sample is reduced over its elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Mean,
    #[default]
    Sum,
}

/// Weights of the composite VAE loss `cls + gamma * (mse + beta * kld)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLossConfig {
    pub gamma: f64,
    pub beta: f64,
    #[serde(default)]
    pub reduction: Reduction,
}

impl Default for VaeLossConfig {
    fn default() -> Self {
        Self { gamma: 0.001, beta: 3.0, reduction: Reduction::Sum }
    }
}

impl VaeLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.beta >= 0.0) {
            return Err(invalid!("gamma and beta must be non-negative"));
        }
        Ok(())
    }
}

pub fn vae_loss(classification: f64, mse: f64, kld: f64, cfg: &VaeLossConfig) -> f64 {
    classification + cfg.gamma * (mse + cfg.beta * kld)
}

/// Layer widths for the default architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchOptions {
    pub conv_channels: [usize; 3],
    pub conv_stride: usize,
    pub tabla_channels: [usize; 2],
    pub tabla_stride: usize,
    pub tabla_dense: usize,
    pub location_hidden: usize,
}

impl Default for ArchOptions {
    fn default() -> Self {
        Self {
            conv_channels: [16, 32, 64],
            conv_stride: 2,
            tabla_channels: [16, 32],
            tabla_stride: 2,
            tabla_dense: 128,
            location_hidden: 16,
        }
    }
}

/// Named layer stack with its input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Feature pipeline the network expects, including input standardisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub config: FeatureConfig,
    /// Inputs are fed as `(x - offset) / scale`.
    pub offset: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub selection: String,
    pub selected_epoch: usize,
    pub selection_accuracy: f64,
    pub dataset_hash: String,
    pub augmentation: String,
    pub vae: Option<VaeLossConfig>,
}

/// Architecture, heads, layer specs, parameters and metadata of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub architecture: ArchitectureId,
    pub head: HeadConfig,
    pub options: ArchOptions,
    pub blocks: Vec<BlockSpec>,
    /// All parameters, block by block and layer by layer (weights then bias).
    pub params: Vec<f32>,
    pub features: FeatureMeta,
    pub training: Option<TrainingMeta>,
    /// 2-D projection of the 128-d TablaCNN embedding, fitted after training.
    pub projection: Option<PcaBasis>,
}

pub mod block {
    pub const ENCODER: &str = "encoder";
    pub const BOTTLENECK: &str = "bottleneck";
    pub const LOG_VAR: &str = "log_var";
    pub const CLASS_HEAD: &str = "class_head";
    pub const LOCATION_HEAD: &str = "location_head";
    pub const DECODER: &str = "decoder";
}

fn conv1d(cin: usize, cout: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv1d { in_channels: cin, out_channels: cout, kernel, stride, padding: 0 }
}

fn dense(i: usize, o: usize) -> LayerSpec {
    LayerSpec::Dense { in_features: i, out_features: o }
}

fn block(name: &str, input_shape: &[usize], layers: Vec<LayerSpec>) -> BlockSpec {
    BlockSpec { name: name.to_string(), input_shape: input_shape.to_vec(), layers }
}

/// Kernel sizes of the three 1-D encoder convolutions.
pub const PERC_KERNELS: [usize; 3] = [6, 5, 5];
/// Kernel widths of the two TablaCNN convolutions (height 1).
pub const TABLA_KERNELS: [usize; 2] = [7, 3];

fn output_shape(input: &[usize], layers: &[LayerSpec]) -> Result<Vec<usize>> {
    let mut shape = input.to_vec();
    for l in layers {
        shape = l.output_shape(&shape)?;
    }
    Ok(shape)
}

/// Transposed convolutions mirroring `conv_layers`, with output padding chosen
/// so each stage restores the length its matching convolution consumed.
fn mirror_decoder(conv_layers: &[(usize, usize, usize, usize)], lengths: &[usize]) -> Vec<LayerSpec> {
    let mut out = Vec::new();
    for (i, &(cin, cout, kernel, stride)) in conv_layers.iter().enumerate().rev() {
        let (len_in, len_out) = (lengths[i], lengths[i + 1]);
        let op = len_in - ((len_out - 1) * stride + kernel);
        out.push(LayerSpec::TransposedConv1d {
            in_channels: cout,
            out_channels: cin,
            kernel,
            stride,
            padding: 0,
            output_padding: op,
        });
        if i > 0 {
            out.push(LayerSpec::Relu);
        }
    }
    out
}

fn perc_blocks(arch: ArchitectureId, head: HeadConfig, opts: &ArchOptions) -> Result<Vec<BlockSpec>> {
    let [c1, c2, c3] = opts.conv_channels;
    let s = opts.conv_stride;
    let input = arch.input_shape();
    let convs = [
        (N_CHANNELS, c1, PERC_KERNELS[0], s),
        (c1, c2, PERC_KERNELS[1], s),
        (c2, c3, PERC_KERNELS[2], s),
    ];
    let mut enc = Vec::new();
    for &(cin, cout, k, st) in &convs {
        enc.push(conv1d(cin, cout, k, st));
        enc.push(LayerSpec::Relu);
    }
    let conv_out = output_shape(&input, &enc)?;
    enc.push(LayerSpec::Flatten);
    let flat = conv_out[0] * conv_out[1];

    let mut blocks = vec![
        block(block::ENCODER, &input, enc.clone()),
        block(block::BOTTLENECK, &[flat], vec![dense(flat, head.n_emb)]),
    ];
    if arch == ArchitectureId::PercVae {
        blocks.push(block(block::LOG_VAR, &[flat], vec![dense(flat, head.n_emb)]));
    }
    blocks.push(block(block::CLASS_HEAD, &[head.n_emb], vec![dense(head.n_emb, head.n_cl)]));
    if head.is_hierarchical() {
        blocks.push(block(
            block::LOCATION_HEAD,
            &[flat],
            vec![dense(flat, opts.location_hidden), LayerSpec::Relu, dense(opts.location_hidden, head.n_loc)],
        ));
    }
    if arch == ArchitectureId::PercVae {
        let mut lengths = vec![input[1]];
        let mut shape = input.to_vec();
        for l in &enc[..6] {
            shape = l.output_shape(&shape)?;
            if matches!(l, LayerSpec::Conv1d { .. }) {
                lengths.push(shape[1]);
            }
        }
        let mut dec = vec![dense(head.n_emb, flat), LayerSpec::Relu, LayerSpec::Reshape { shape: conv_out.clone() }];
        dec.extend(mirror_decoder(&convs, &lengths));
        let recon = output_shape(&[head.n_emb], &dec)?;
        if recon != input {
            return Err(invalid!("decoder reconstructs {recon:?}, expected {input:?}"));
        }
        blocks.push(block(block::DECODER, &[head.n_emb], dec));
    }
    Ok(blocks)
}

fn tabla_blocks(head: HeadConfig, opts: &ArchOptions) -> Result<Vec<BlockSpec>> {
    let input = ArchitectureId::TablaCnn.input_shape();
    let [c1, c2] = opts.tabla_channels;
    let s = opts.tabla_stride;
    let mut enc = vec![
        LayerSpec::Reshape { shape: vec![1, input[0], input[1]] },
        LayerSpec::Conv2d { in_channels: 1, out_channels: c1, kernel: [1, TABLA_KERNELS[0]], stride: [1, s], padding: [0, 0] },
        LayerSpec::Relu,
        LayerSpec::Conv2d { in_channels: c1, out_channels: c2, kernel: [1, TABLA_KERNELS[1]], stride: [1, s], padding: [0, 0] },
        LayerSpec::Relu,
        LayerSpec::Flatten,
    ];
    let flat = output_shape(&input, &enc)?[0];
    enc.push(dense(flat, opts.tabla_dense));
    enc.push(LayerSpec::Relu);
    let mut blocks = vec![
        block(block::ENCODER, &input, enc),
        block(block::CLASS_HEAD, &[opts.tabla_dense], vec![dense(opts.tabla_dense, head.n_cl)]),
    ];
    if head.is_hierarchical() {
        blocks.push(block(block::LOCATION_HEAD, &[opts.tabla_dense], vec![dense(opts.tabla_dense, head.n_loc)]));
    }
    Ok(blocks)
}

pub fn build_model(arch: ArchitectureId, head: HeadConfig, seed: u64) -> Result<ModelBundle> {
    build_model_with(arch, head, ArchOptions::default(), seed)
}

/// Builds the layer stacks and draws initial parameters block by block, so
/// PercCNN and PercVAE with the same seed start from identical encoders.
pub fn build_model_with(arch: ArchitectureId, head: HeadConfig, options: ArchOptions, seed: u64) -> Result<ModelBundle> {
    head.validate_for(arch)?;
    let blocks = match arch {
        ArchitectureId::TablaCnn => tabla_blocks(head, &options)?,
        ArchitectureId::PercCnn | ArchitectureId::PercVae => perc_blocks(arch, head, &options)?,
    };
    let params = init_params(&blocks, seed)?;
    Ok(ModelBundle {
        architecture: arch,
        head,
        options,
        blocks,
        params,
        features: FeatureMeta { config: FeatureConfig::new(arch.feature_kind()), offset: 0.0, scale: 1.0 },
        training: None,
        projection: None,
    })
}

fn init_params(blocks: &[BlockSpec], seed: u64) -> Result<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for b in blocks {
        Sequential::new(&b.layers, &b.input_shape, 0)?;
        for l in &b.layers {
            let mut p = vec![0.0; l.param_len()];
            init_layer_params(l, &mut rng, &mut p);
            out.extend(p.iter().map(|&v| v as f32));
        }
    }
    Ok(out)
}

impl ModelBundle {
    pub fn block(&self, name: &str) -> Option<&BlockSpec> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Parameter count per layer, in payload order.
    pub fn layer_param_counts(&self) -> impl Iterator<Item = (&str, usize, &LayerSpec, usize)> + '_ {
        self.blocks
            .iter()
            .flat_map(|b| b.layers.iter().enumerate().map(move |(i, l)| (b.name.as_str(), i, l, l.param_len())))
    }

    pub fn expected_param_len(&self) -> usize {
        self.blocks.iter().flat_map(|b| &b.layers).map(LayerSpec::param_len).sum()
    }

    pub fn embedding_mode(&self) -> EmbeddingMode {
        match self.architecture {
            ArchitectureId::PercCnn => EmbeddingMode::Bottleneck,
            ArchitectureId::PercVae => EmbeddingMode::LatentMean,
            ArchitectureId::TablaCnn => EmbeddingMode::PcaOfDense,
        }
    }
}

/// How a network's 2-D embedding is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Bottleneck,
    LatentMean,
    PcaOfDense,
}

/// Training target for one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub class: usize,
    pub location: Option<usize>,
}

/// Output of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    probs: [f64; MAX_CLASSES],
    n_cl: usize,
    loc_probs: [f64; N_LOCATIONS],
    has_loc: bool,
    pub embedding: Option<[f64; N_EMB]>,
}

impl Prediction {
    pub fn class_probs(&self) -> &[f64] {
        &self.probs[..self.n_cl]
    }

    pub fn location_probs(&self) -> Option<&[f64]> {
        self.has_loc.then_some(&self.loc_probs[..])
    }

    pub fn class(&self) -> usize {
        argmax(self.class_probs())
    }

    pub fn location(&self) -> Option<usize> {
        self.location_probs().map(argmax)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Which loss the classification term uses, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationLoss {
    Bce,
    Ce,
}

/// Mean loss over a batch, with each term reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    pub location: Option<f64>,
    pub mse: Option<f64>,
    pub kld: Option<f64>,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.classification += other.classification;
        let add = |a: &mut Option<f64>, b: Option<f64>| {
            if let Some(b) = b {
                *a = Some(a.unwrap_or(0.0) + b);
            }
        };
        add(&mut self.location, other.location);
        add(&mut self.mse, other.mse);
        add(&mut self.kld, other.kld);
    }

    fn scaled(mut self, k: f64) -> Self {
        self.total *= k;
        self.classification *= k;
        self.location = self.location.map(|v| v * k);
        self.mse = self.mse.map(|v| v * k);
        self.kld = self.kld.map(|v| v * k);
        self
    }
}

/// Runtime network: resolved layer stacks over one flat `f64` parameter vector.
#[derive(Debug, Clone)]
pub struct Network {
    arch: ArchitectureId,
    head: HeadConfig,
    features: FeatureMeta,
    projection: Option<PcaBasis>,
    encoder: Sequential,
    bottleneck: Option<Sequential>,
    log_var: Option<Sequential>,
    class_head: Sequential,
    location_head: Option<Sequential>,
    decoder: Option<Sequential>,
    params: Vec<f64>,
}

/// Scratch buffers for one thread of inference or training.
#[derive(Debug, Clone)]
pub struct NetworkWorkspace {
    input: Vec<f64>,
    encoder: Workspace,
    bottleneck: Option<Workspace>,
    log_var: Option<Workspace>,
    class_head: Workspace,
    location_head: Option<Workspace>,
    decoder: Option<Workspace>,
    hidden_grad: Vec<f64>,
    class_grad: Vec<f64>,
    loc_grad: Vec<f64>,
    recon_grad: Vec<f64>,
    z: [f64; N_EMB],
}

fn take_block(bundle_blocks: &[BlockSpec], name: &str, base: &mut usize) -> Result<Option<Sequential>> {
    let mut offset = 0;
    for b in bundle_blocks {
        let len: usize = b.layers.iter().map(LayerSpec::param_len).sum();
        if b.name == name {
            let seq = Sequential::new(&b.layers, &b.input_shape, offset)?;
            *base += len;
            return Ok(Some(seq));
        }
        offset += len;
    }
    Ok(None)
}

fn require(seq: Option<Sequential>, name: &str) -> Result<Sequential> {
    seq.ok_or_else(|| invalid!("model is missing the '{name}' block"))
}

fn expect_shape(seq: &Sequential, name: &str, input: &[usize], output: &[usize]) -> Result<()> {
    let out_len: usize = seq.output_shape().iter().product();
    let in_len: usize = seq.input_shape().iter().product();
    if in_len != input.iter().product::<usize>() || out_len != output.iter().product::<usize>() {
        return Err(invalid!(
            "block '{name}' maps {:?} -> {:?}, expected {input:?} -> {output:?}",
            seq.input_shape(),
            seq.output_shape()
        ));
    }
    Ok(())
}

impl Network {
    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        Self::from_parts(
            bundle.architecture,
            bundle.head,
            &bundle.blocks,
            bundle.params.iter().map(|&p| f64::from(p)).collect(),
            bundle.features,
            bundle.projection.clone(),
        )
    }

    /// Assembles a network from explicit block specs. Block roles are taken
    /// from their names; the stacks must be shape-compatible.
    pub fn from_parts(
        arch: ArchitectureId,
        head: HeadConfig,
        blocks: &[BlockSpec],
        params: Vec<f64>,
        features: FeatureMeta,
        projection: Option<PcaBasis>,
    ) -> Result<Self> {
        head.validate_for(arch)?;
        let mut used = 0;
        let encoder = require(take_block(blocks, block::ENCODER, &mut used)?, block::ENCODER)?;
        let bottleneck = take_block(blocks, block::BOTTLENECK, &mut used)?;
        let log_var = take_block(blocks, block::LOG_VAR, &mut used)?;
        let class_head = require(take_block(blocks, block::CLASS_HEAD, &mut used)?, block::CLASS_HEAD)?;
        let location_head = take_block(blocks, block::LOCATION_HEAD, &mut used)?;
        let decoder = take_block(blocks, block::DECODER, &mut used)?;
        let total: usize = blocks.iter().flat_map(|b| &b.layers).map(LayerSpec::param_len).sum();
        if used != total {
            return Err(invalid!("model has blocks with unknown roles"));
        }
        if params.len() != total {
            return Err(invalid!("model declares {total} parameters, got {}", params.len()));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric(alloc::format!("parameter {i} is not finite")));
        }
        let hidden: Vec<usize> = encoder.output_shape().to_vec();
        let embed_in: Vec<usize> = match arch {
            ArchitectureId::TablaCnn => {
                if bottleneck.is_some() || log_var.is_some() || decoder.is_some() {
                    return Err(invalid!("tabla_cnn has no bottleneck or decoder blocks"));
                }
                hidden.clone()
            }
            ArchitectureId::PercCnn | ArchitectureId::PercVae => {
                let b = bottleneck.as_ref().ok_or_else(|| invalid!("missing bottleneck block"))?;
                expect_shape(b, block::BOTTLENECK, &hidden, &[head.n_emb])?;
                if arch == ArchitectureId::PercVae {
                    let lv = log_var.as_ref().ok_or_else(|| invalid!("perc_vae requires a log_var block"))?;
                    expect_shape(lv, block::LOG_VAR, &hidden, &[head.n_emb])?;
                    let d = decoder.as_ref().ok_or_else(|| invalid!("perc_vae requires a decoder block"))?;
                    expect_shape(d, block::DECODER, &[head.n_emb], encoder.input_shape())?;
                } else if log_var.is_some() || decoder.is_some() {
                    return Err(invalid!("perc_cnn has no log_var or decoder blocks"));
                }
                vec![head.n_emb]
            }
        };
        expect_shape(&class_head, block::CLASS_HEAD, &embed_in, &[head.n_cl])?;
        match (&location_head, head.is_hierarchical()) {
            (Some(l), true) => expect_shape(l, block::LOCATION_HEAD, &hidden, &[head.n_loc])?,
            (None, false) => {}
            _ => return Err(invalid!("location head presence does not match head config")),
        }
        Ok(Self { arch, head, features, projection, encoder, bottleneck, log_var, class_head, location_head, decoder, params })
    }

    pub fn architecture(&self) -> ArchitectureId {
        self.arch
    }

    pub fn head(&self) -> HeadConfig {
        self.head
    }

    pub fn features(&self) -> &FeatureMeta {
        &self.features
    }

    pub fn set_features(&mut self, features: FeatureMeta) {
        self.features = features;
    }

    pub fn projection(&self) -> Option<&PcaBasis> {
        self.projection.as_ref()
    }

    pub fn set_projection(&mut self, projection: Option<PcaBasis>) {
        self.projection = projection;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.encoder.input_shape().iter().product()
    }

    /// Width of the raw embedding activation (2, or 128 for TablaCNN).
    pub fn embedding_width(&self) -> usize {
        match self.arch {
            ArchitectureId::TablaCnn => self.encoder.output_shape().iter().product(),
            _ => self.head.n_emb,
        }
    }

    /// Writes the current parameters (rounded to `f32`) into `bundle`.
    pub fn export_params(&self, bundle: &mut ModelBundle) {
        bundle.params = self.params.iter().map(|&p| p as f32).collect();
        bundle.features = self.features;
        bundle.projection = self.projection.clone();
    }

    pub fn workspace(&self) -> NetworkWorkspace {
        NetworkWorkspace {
            input: vec![0.0; self.input_len()],
            encoder: self.encoder.workspace(),
            bottleneck: self.bottleneck.as_ref().map(Sequential::workspace),
            log_var: self.log_var.as_ref().map(Sequential::workspace),
            class_head: self.class_head.workspace(),
            location_head: self.location_head.as_ref().map(Sequential::workspace),
            decoder: self.decoder.as_ref().map(Sequential::workspace),
            hidden_grad: vec![0.0; self.encoder.output_shape().iter().product()],
            class_grad: vec![0.0; self.head.n_cl],
            loc_grad: vec![0.0; self.head.n_loc],
            recon_grad: vec![0.0; self.input_len()],
            z: [0.0; N_EMB],
        }
    }

    fn normalise(&self, features: &[f64], ws: &mut NetworkWorkspace) -> Result<()> {
        if features.len() != ws.input.len() {
            return Err(invalid!("expected {} feature values, got {}", ws.input.len(), features.len()));
        }
        let FeatureMeta { offset, scale, .. } = self.features;
        for (d, &x) in ws.input.iter_mut().zip(features) {
            *d = (x - offset) / scale;
        }
        Ok(())
    }

    /// Runs the encoder and returns the latent distribution (if any). `noise`
    /// selects sampling; `None` uses the mean.
    fn encode(&self, ws: &mut NetworkWorkspace, noise: Option<[f64; N_EMB]>) -> Result<Option<LatentDistribution>> {
        let p = &self.params;
        self.encoder.forward(p, &ws.input, &mut ws.encoder)?;
        let hidden = ws.encoder.output();
        let mut latent = None;
        match self.arch {
            ArchitectureId::TablaCnn => {
                self.class_head.forward(p, hidden, &mut ws.class_head)?;
            }
            ArchitectureId::PercCnn => {
                let (b, bws) = (self.bottleneck.as_ref().expect("validated"), ws.bottleneck.as_mut().expect("validated"));
                b.forward(p, hidden, bws)?;
                self.class_head.forward(p, bws.output(), &mut ws.class_head)?;
            }
            ArchitectureId::PercVae => {
                let (b, bws) = (self.bottleneck.as_ref().expect("validated"), ws.bottleneck.as_mut().expect("validated"));
                let (l, lws) = (self.log_var.as_ref().expect("validated"), ws.log_var.as_mut().expect("validated"));
                b.forward(p, hidden, bws)?;
                l.forward(p, hidden, lws)?;
                let lat = LatentDistribution {
                    mu: [bws.output()[0], bws.output()[1]],
                    log_var: [lws.output()[0], lws.output()[1]],
                };
                ws.z = match noise {
                    Some(n) => reparameterize(&lat, n),
                    None => lat.mu,
                };
                self.class_head.forward(p, &ws.z, &mut ws.class_head)?;
                latent = Some(lat);
            }
        }
        if let (Some(l), Some(lws)) = (&self.location_head, ws.location_head.as_mut()) {
            l.forward(p, ws.encoder.output(), lws)?;
        }
        Ok(latent)
    }

    fn read_prediction(&self, ws: &NetworkWorkspace) -> Prediction {
        let mut probs = [0.0; MAX_CLASSES];
        probs[..self.head.n_cl].copy_from_slice(ws.class_head.output());
        softmax_in_place(&mut probs[..self.head.n_cl]);
        let mut loc_probs = [0.0; N_LOCATIONS];
        let has_loc = if let Some(lws) = &ws.location_head {
            loc_probs.copy_from_slice(lws.output());
            softmax_in_place(&mut loc_probs);
            true
        } else {
            false
        };
        let embedding = match self.arch {
            ArchitectureId::PercCnn | ArchitectureId::PercVae => {
                let e = ws.bottleneck.as_ref().expect("validated").output();
                Some([e[0], e[1]])
            }
            ArchitectureId::TablaCnn => self.projection.as_ref().and_then(|p| p.project(ws.encoder.output()).ok()),
        };
        Prediction { probs, n_cl: self.head.n_cl, loc_probs, has_loc, embedding }
    }

    /// Deterministic inference: class (and location) probabilities plus the
    /// 2-D embedding. Does not allocate.
    pub fn forward_classify(&self, features: &[f64], ws: &mut NetworkWorkspace) -> Result<Prediction> {
        self.normalise(features, ws)?;
        self.encode(ws, None)?;
        Ok(self.read_prediction(ws))
    }

    /// Raw embedding activation of the last forward pass (2-D bottleneck or μ,
    /// or the 128-d dense layer of TablaCNN).
    pub fn embedding_activation<'a>(&self, ws: &'a NetworkWorkspace) -> &'a [f64] {
        match self.arch {
            ArchitectureId::TablaCnn => ws.encoder.output(),
            _ => ws.bottleneck.as_ref().expect("validated").output(),
        }
    }

    /// Last decoder output (PercVAE only), in standardised feature units.
    pub fn reconstruction<'a>(&self, ws: &'a NetworkWorkspace) -> Option<&'a [f64]> {
        ws.decoder.as_ref().map(Workspace::output)
    }

    pub fn classification_loss(&self) -> ClassificationLoss {
        if self.head.n_cl == 2 {
            ClassificationLoss::Bce
        } else {
            ClassificationLoss::Ce
        }
    }

    fn check_target(&self, t: &Target) -> Result<()> {
        if t.class >= self.head.n_cl {
            return Err(invalid!("class target {} outside {} classes", t.class, self.head.n_cl));
        }
        match (t.location, self.head.is_hierarchical()) {
            (Some(l), true) if l < self.head.n_loc => Ok(()),
            (None, false) => Ok(()),
            (Some(l), true) => Err(invalid!("location target {l} outside {} locations", self.head.n_loc)),
            (None, true) => Err(invalid!("hierarchical head requires a location target")),
            (Some(_), false) => Err(invalid!("location target given for a non-hierarchical head")),
        }
    }

    /// Loss for one example; with `grads` it also back-propagates
    /// `scale * d loss / d params` into `grads`.
    pub fn sample_loss(
        &self,
        features: &[f64],
        target: &Target,
        noise: Option<[f64; N_EMB]>,
        vae: &VaeLossConfig,
        ws: &mut NetworkWorkspace,
        grads: Option<(&mut [f64], f64)>,
    ) -> Result<LossBreakdown> {
        self.check_target(target)?;
        vae.validate()?;
        self.normalise(features, ws)?;
        let latent = self.encode(ws, noise)?;
        let pred = self.read_prediction(ws);
        let clamp = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let mut out = LossBreakdown { classification: -clamp(pred.class_probs()[target.class]).ln(), ..Default::default() };
        out.total = out.classification;
        if let (Some(loc), Some(probs)) = (target.location, pred.location_probs()) {
            let l = -clamp(probs[loc]).ln();
            out.location = Some(l);
            out.total += l;
        }
        if let Some(lat) = latent {
            let dec = self.decoder.as_ref().expect("validated");
            let dws = ws.decoder.as_mut().expect("validated");
            dec.forward(&self.params, &ws.z, dws)?;
            let recon = dws.output();
            // Reconstruction error is measured in feature units, not standardised ones.
            let k = self.recon_weight(vae, recon.len());
            let mse = k * recon.iter().zip(&ws.input).map(|(r, x)| (r - x) * (r - x)).sum::<f64>() / recon.len() as f64;
            let kld = kld_gaussian_standard(&lat);
            out.mse = Some(mse);
            out.kld = Some(kld);
            out.total = vae_loss(out.classification, mse, kld, vae);
        }
        if !out.total.is_finite() {
            return Err(Error::Numeric(alloc::format!("non-finite loss {}", out.total)));
        }
        if let Some((grads, scale)) = grads {
            self.backward(target, &pred, latent, noise, vae, ws, grads, scale)?;
        }
        Ok(out)
    }

    /// Multiplier turning the element mean of squared standardised errors into the
    /// reconstruction term: squared errors are in feature units, reduced per `vae.reduction`.
    fn recon_weight(&self, vae: &VaeLossConfig, n: usize) -> f64 {
        let s2 = self.features.scale * self.features.scale;
        match vae.reduction {
            Reduction::Mean => s2,
            Reduction::Sum => s2 * n as f64,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        target: &Target,
        pred: &Prediction,
        latent: Option<LatentDistribution>,
        noise: Option<[f64; N_EMB]>,
        vae: &VaeLossConfig,
        ws: &mut NetworkWorkspace,
        grads: &mut [f64],
        scale: f64,
    ) -> Result<()> {
        let p = &self.params;
        softmax_ce_grad(pred.class_probs(), target.class, scale, &mut ws.class_grad);
        self.class_head.backward(p, &mut ws.class_head, &ws.class_grad, grads)?;
        ws.hidden_grad.fill(0.0);
        match self.arch {
            ArchitectureId::TablaCnn => {
                for (h, g) in ws.hidden_grad.iter_mut().zip(ws.class_head.input_grad()) {
                    *h += g;
                }
            }
            ArchitectureId::PercCnn => {
                let (b, bws) = (self.bottleneck.as_ref().expect("validated"), ws.bottleneck.as_mut().expect("validated"));
                b.backward(p, bws, ws.class_head.input_grad(), grads)?;
                for (h, g) in ws.hidden_grad.iter_mut().zip(bws.input_grad()) {
                    *h += g;
                }
            }
            ArchitectureId::PercVae => {
                let lat = latent.expect("vae forward yields a latent");
                let dec = self.decoder.as_ref().expect("validated");
                let dws = ws.decoder.as_mut().expect("validated");
                let k = self.recon_weight(vae, dws.output().len());
                mse_grad(dws.output(), &ws.input, scale * vae.gamma * k, &mut ws.recon_grad);
                dec.backward(p, dws, &ws.recon_grad, grads)?;
                let mut dz = [0.0; N_EMB];
                for (d, dzv) in dz.iter_mut().enumerate() {
                    *dzv = ws.class_head.input_grad()[d] + dws.input_grad()[d];
                }
                let k = scale * vae.gamma * vae.beta;
                let sigma = lat.sigma();
                let eps = noise.unwrap_or([0.0; N_EMB]);
                let mut dmu = [0.0; N_EMB];
                let mut dlv = [0.0; N_EMB];
                for d in 0..N_EMB {
                    dmu[d] = dz[d] + k * lat.mu[d];
                    dlv[d] = dz[d] * eps[d] * 0.5 * sigma[d] + k * 0.5 * (lat.log_var[d].exp() - 1.0);
                }
                let (b, bws) = (self.bottleneck.as_ref().expect("validated"), ws.bottleneck.as_mut().expect("validated"));
                b.backward(p, bws, &dmu, grads)?;
                for (h, g) in ws.hidden_grad.iter_mut().zip(bws.input_grad()) {
                    *h += g;
                }
                let (l, lws) = (self.log_var.as_ref().expect("validated"), ws.log_var.as_mut().expect("validated"));
                l.backward(p, lws, &dlv, grads)?;
                for (h, g) in ws.hidden_grad.iter_mut().zip(lws.input_grad()) {
                    *h += g;
                }
            }
        }
        if let (Some(loc), Some(lt)) = (&self.location_head, target.location) {
            let lws = ws.location_head.as_mut().expect("validated");
            let mut probs = [0.0; N_LOCATIONS];
            probs.copy_from_slice(lws.output());
            softmax_in_place(&mut probs);
            softmax_ce_grad(&probs, lt, scale, &mut ws.loc_grad);
            loc.backward(p, lws, &ws.loc_grad, grads)?;
            for (h, g) in ws.hidden_grad.iter_mut().zip(lws.input_grad()) {
                *h += g;
            }
        }
        self.encoder.backward(p, &mut ws.encoder, &ws.hidden_grad, grads)?;
        Ok(())
    }

    /// Mean loss over a batch. `noise` supplies one latent draw per example
    /// for PercVAE; without it the latent mean is used.
    pub fn compute_loss(
        &self,
        batch: &[&[f64]],
        targets: &[Target],
        noise: Option<&[[f64; N_EMB]]>,
        vae: &VaeLossConfig,
    ) -> Result<LossBreakdown> {
        if batch.len() != targets.len() || batch.is_empty() {
            return Err(invalid!("{} examples for {} targets", batch.len(), targets.len()));
        }
        if let Some(n) = noise {
            if n.len() != batch.len() {
                return Err(invalid!("{} noise draws for {} examples", n.len(), batch.len()));
            }
        }
        let mut ws = self.workspace();
        let mut acc = LossBreakdown::default();
        for (i, (x, t)) in batch.iter().zip(targets).enumerate() {
            let l = self.sample_loss(x, t, noise.map(|n| n[i]), vae, &mut ws, None)?;
            acc.accumulate(&l);
        }
        Ok(acc.scaled(1.0 / batch.len() as f64))
    }
}

/// Convenience wrapper building a throwaway [`Network`] from a bundle.
pub fn forward_classify(bundle: &ModelBundle, features: &[f64]) -> Result<Prediction> {
    let net = Network::from_bundle(bundle)?;
    let mut ws = net.workspace();
    net.forward_classify(features, &mut ws)
}

/// Raw (un-normalised) embedding activation for one example.
pub fn embedding_activation(net: &Network, features: &[f64], ws: &mut NetworkWorkspace) -> Result<Vec<f64>> {
    net.forward_classify(features, ws)?;
    Ok(net.embedding_activation(ws).to_vec())
}

impl fmt::Display for ModelBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (n_cl={}, n_loc={}, n_emb={})", self.architecture, self.head.n_cl, self.head.n_loc, self.head.n_emb)?;
        for b in &self.blocks {
            write!(f, "  {}:", b.name)?;
            for l in &b.layers {
                write!(f, " {}", crate::nn::describe(l))?;
            }
            writeln!(f)?;
        }
        write!(f, "  parameters: {}", self.params.len())
    }
}

#[cfg(test)]
mod tests;
