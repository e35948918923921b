//! A small, deterministic neural-network kernel: layer specs, forward and
//! hand-derived backward passes, losses, reparameterisation and Adam.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::Result;

mod adam;
pub mod layers;
pub mod loss;
mod sequential;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{
    bce_loss, ce_loss, kld_gaussian_standard, kld_grad, mse_loss, reparameterize, softmax_in_place, LatentDistribution,
    PROB_CLAMP,
};
pub use sequential::{Sequential, Workspace};

/// Dense row-major tensor of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(invalid!("shape {shape:?} holds {n} values, got {}", values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid!("tensor value {i} is not finite"));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, values: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// One layer of a sequential stack.
///
/// Activation layouts: 1-D convolutions take `[channels, length]`, 2-D
/// convolutions `[channels, height, width]`, dense layers a flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    },
    TransposedConv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::TransposedConv1d { .. } => "transposed_conv1d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    pub fn weight_len(&self) -> usize {
        match *self {
            LayerSpec::Conv1d { in_channels, out_channels, kernel, .. }
            | LayerSpec::TransposedConv1d { in_channels, out_channels, kernel, .. } => in_channels * out_channels * kernel,
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                in_channels * out_channels * kernel[0] * kernel[1]
            }
            LayerSpec::Dense { in_features, out_features } => in_features * out_features,
            _ => 0,
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerSpec::Conv1d { out_channels, .. }
            | LayerSpec::Conv2d { out_channels, .. }
            | LayerSpec::TransposedConv1d { out_channels, .. } => out_channels,
            LayerSpec::Dense { out_features, .. } => out_features,
            _ => 0,
        }
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.bias_len()
    }

    pub fn has_params(&self) -> bool {
        self.param_len() > 0
    }

    /// `(fan_in, fan_out)` used by the uniform Glorot initialiser.
    pub fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv1d { in_channels, out_channels, kernel, .. }
            | LayerSpec::TransposedConv1d { in_channels, out_channels, kernel, .. } => {
                (in_channels * kernel, out_channels * kernel)
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                let k = kernel[0] * kernel[1];
                (in_channels * k, out_channels * k)
            }
            LayerSpec::Dense { in_features, out_features } => (in_features, out_features),
            _ => (0, 0),
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(invalid!("{} {what} must be positive", self.name()))
            } else {
                Ok(())
            }
        };
        match self {
            LayerSpec::Conv1d { in_channels, out_channels, kernel, stride, .. } => {
                positive(*in_channels, "in_channels")?;
                positive(*out_channels, "out_channels")?;
                positive(*kernel, "kernel")?;
                positive(*stride, "stride")
            }
            LayerSpec::TransposedConv1d { in_channels, out_channels, kernel, stride, output_padding, .. } => {
                positive(*in_channels, "in_channels")?;
                positive(*out_channels, "out_channels")?;
                positive(*kernel, "kernel")?;
                positive(*stride, "stride")?;
                if output_padding >= stride {
                    return Err(invalid!("output_padding {output_padding} must be smaller than stride {stride}"));
                }
                Ok(())
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, .. } => {
                positive(*in_channels, "in_channels")?;
                positive(*out_channels, "out_channels")?;
                positive(kernel[0], "kernel height")?;
                positive(kernel[1], "kernel width")?;
                positive(stride[0], "stride height")?;
                positive(stride[1], "stride width")
            }
            LayerSpec::Dense { in_features, out_features } => {
                positive(*in_features, "in_features")?;
                positive(*out_features, "out_features")
            }
            LayerSpec::Reshape { shape } if shape.is_empty() => Err(invalid!("reshape target must not be empty")),
            _ => Ok(()),
        }
    }

    /// Output shape for a given input shape, validating compatibility.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let total: usize = input.iter().product();
        let conv_len = |len: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            if len + 2 * p < k {
                return Err(invalid!("{}: input length {len} shorter than kernel {k}", self.name()));
            }
            Ok((len + 2 * p - k) / s + 1)
        };
        match *self {
            LayerSpec::Conv1d { in_channels, out_channels, kernel, stride, padding } => match input {
                [c, len] if *c == in_channels => Ok(vec![out_channels, conv_len(*len, kernel, stride, padding)?]),
                _ => Err(invalid!("conv1d expects [{in_channels}, L], got {input:?}")),
            },
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => match input {
                [c, h, w] if *c == in_channels => Ok(vec![
                    out_channels,
                    conv_len(*h, kernel[0], stride[0], padding[0])?,
                    conv_len(*w, kernel[1], stride[1], padding[1])?,
                ]),
                _ => Err(invalid!("conv2d expects [{in_channels}, H, W], got {input:?}")),
            },
            LayerSpec::TransposedConv1d { in_channels, out_channels, kernel, stride, padding, output_padding } => {
                match input {
                    [c, len] if *c == in_channels && *len > 0 => {
                        let full = (len - 1) * stride + kernel + output_padding;
                        if full <= 2 * padding {
                            return Err(invalid!("transposed_conv1d padding {padding} consumes the whole output"));
                        }
                        Ok(vec![out_channels, full - 2 * padding])
                    }
                    _ => Err(invalid!("transposed_conv1d expects [{in_channels}, L], got {input:?}")),
                }
            }
            LayerSpec::Dense { in_features, out_features } => {
                if total == in_features && !input.is_empty() {
                    Ok(vec![out_features])
                } else {
                    Err(invalid!("dense expects {in_features} inputs, got shape {input:?}"))
                }
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![total]),
            LayerSpec::Reshape { ref shape } => {
                if shape.iter().product::<usize>() == total {
                    Ok(shape.clone())
                } else {
                    Err(invalid!("cannot reshape {input:?} into {shape:?}"))
                }
            }
        }
    }
}

/// Uniform initialisation in `+/- sqrt(6 / (fan_in + fan_out))`, zero bias.
pub fn init_layer_params<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R, out: &mut [f64]) {
    let (fan_in, fan_out) = spec.fans();
    let wlen = spec.weight_len();
    let bound = if fan_in + fan_out > 0 {
        num_traits::Float::sqrt(6.0 / (fan_in + fan_out) as f64)
    } else {
        0.0
    };
    for w in out[..wlen].iter_mut() {
        *w = rng.random_range(-bound..=bound);
    }
    out[wlen..].fill(0.0);
}

fn single_layer(spec: &LayerSpec, input: &Tensor, weights: &[f64], bias: &[f64]) -> Result<Tensor> {
    if weights.len() != spec.weight_len() || bias.len() != spec.bias_len() {
        return Err(invalid!(
            "{} expects {} weights and {} biases, got {} and {}",
            spec.name(),
            spec.weight_len(),
            spec.bias_len(),
            weights.len(),
            bias.len()
        ));
    }
    let seq = Sequential::new(core::slice::from_ref(spec), input.shape(), 0)?;
    let mut params = Vec::with_capacity(weights.len() + bias.len());
    params.extend_from_slice(weights);
    params.extend_from_slice(bias);
    let mut ws = seq.workspace();
    seq.forward(&params, input.values(), &mut ws)?;
    Tensor::new(seq.output_shape().to_vec(), ws.output().to_vec())
}

fn expect_kind(spec: &LayerSpec, kind: &str) -> Result<()> {
    if spec.name() == kind {
        Ok(())
    } else {
        Err(invalid!("expected a {kind} layer spec, got {}", spec.name()))
    }
}

/// Cross-correlation over `[C_in, L]` with bias.
pub fn conv1d_forward(input: &Tensor, spec: &LayerSpec, weights: &[f64], bias: &[f64]) -> Result<Tensor> {
    expect_kind(spec, "conv1d")?;
    single_layer(spec, input, weights, bias)
}

pub fn conv2d_forward(input: &Tensor, spec: &LayerSpec, weights: &[f64], bias: &[f64]) -> Result<Tensor> {
    expect_kind(spec, "conv2d")?;
    single_layer(spec, input, weights, bias)
}

pub fn transposed_conv1d_forward(input: &Tensor, spec: &LayerSpec, weights: &[f64], bias: &[f64]) -> Result<Tensor> {
    expect_kind(spec, "transposed_conv1d")?;
    single_layer(spec, input, weights, bias)
}

pub fn dense_forward(input: &Tensor, spec: &LayerSpec, weights: &[f64], bias: &[f64]) -> Result<Tensor> {
    expect_kind(spec, "dense")?;
    single_layer(spec, input, weights, bias)
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        values: input.values.iter().map(|&v| v.max(0.0)).collect(),
    }
}

pub fn flatten(input: &Tensor) -> Tensor {
    Tensor { shape: vec![input.values.len()], values: input.values.clone() }
}

/// Human-readable summary, e.g. `conv1d(6->16, k=6, s=2)`.
pub fn describe(spec: &LayerSpec) -> alloc::string::String {
    match spec {
        LayerSpec::Conv1d { in_channels, out_channels, kernel, stride, .. } => {
            format!("conv1d({in_channels}->{out_channels}, k={kernel}, s={stride})")
        }
        LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, .. } => format!(
            "conv2d({in_channels}->{out_channels}, k={}x{}, s={}x{})",
            kernel[0], kernel[1], stride[0], stride[1]
        ),
        LayerSpec::TransposedConv1d { in_channels, out_channels, kernel, stride, .. } => {
            format!("tconv1d({in_channels}->{out_channels}, k={kernel}, s={stride})")
        }
        LayerSpec::Dense { in_features, out_features } => format!("dense({in_features}->{out_features})"),
        other => other.name().into(),
    }
}

#[cfg(test)]
mod tests;
