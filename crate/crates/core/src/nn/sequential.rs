use alloc::vec;
use alloc::vec::Vec;

use super::layers::{self, Conv1dGeom, Conv2dGeom, TransposedConv1dGeom};
use super::LayerSpec;
use crate::error::invalid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Op {
    Conv1d(Conv1dGeom),
    Conv2d(Conv2dGeom),
    TransposedConv1d(TransposedConv1dGeom),
    Dense,
    Relu,
    Copy,
}

#[derive(Debug, Clone)]
struct Plan {
    spec: LayerSpec,
    op: Op,
    offset: usize,
}

/// A resolved stack of layers whose parameters live in an external flat vector.
///
/// `param_base` is where this stack's parameters start in that vector, so
/// several stacks can share one parameter buffer and one optimiser state.
#[derive(Debug, Clone)]
pub struct Sequential {
    plans: Vec<Plan>,
    shapes: Vec<Vec<usize>>,
    param_base: usize,
    param_len: usize,
}

/// Per-thread activations and gradients for one [`Sequential`].
#[derive(Debug, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    forward_done: bool,
}

impl Workspace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least the input activation")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }

    /// Activation after layer `i` (index 0 is the input).
    pub fn activation(&self, i: usize) -> &[f64] {
        &self.acts[i]
    }

    /// Gradient with respect to the stack input, valid after `backward`.
    pub fn input_grad(&self) -> &[f64] {
        &self.grads[0]
    }
}

impl Sequential {
    pub fn new(specs: &[LayerSpec], input_shape: &[usize], param_base: usize) -> Result<Self> {
        let mut shapes = vec![input_shape.to_vec()];
        let mut plans = Vec::with_capacity(specs.len());
        let mut offset = param_base;
        for spec in specs {
            let in_shape = shapes.last().expect("non-empty").clone();
            let out_shape = spec.output_shape(&in_shape)?;
            let op = match *spec {
                LayerSpec::Conv1d { in_channels, out_channels, kernel, stride, padding } => Op::Conv1d(Conv1dGeom {
                    in_channels,
                    out_channels,
                    in_len: in_shape[1],
                    out_len: out_shape[1],
                    kernel,
                    stride,
                    padding,
                }),
                LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => Op::Conv2d(Conv2dGeom {
                    in_channels,
                    out_channels,
                    in_hw: [in_shape[1], in_shape[2]],
                    out_hw: [out_shape[1], out_shape[2]],
                    kernel,
                    stride,
                    padding,
                }),
                LayerSpec::TransposedConv1d { in_channels, out_channels, kernel, stride, padding, .. } => {
                    Op::TransposedConv1d(TransposedConv1dGeom {
                        in_channels,
                        out_channels,
                        in_len: in_shape[1],
                        out_len: out_shape[1],
                        kernel,
                        stride,
                        padding,
                    })
                }
                LayerSpec::Dense { .. } => Op::Dense,
                LayerSpec::Relu => Op::Relu,
                LayerSpec::Flatten | LayerSpec::Reshape { .. } => Op::Copy,
            };
            plans.push(Plan { spec: spec.clone(), op, offset });
            offset += spec.param_len();
            shapes.push(out_shape);
        }
        Ok(Self { plans, shapes, param_base, param_len: offset - param_base })
    }

    pub fn specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.plans.iter().map(|p| &p.spec)
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    /// Shape after each layer, starting with the input.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn param_base(&self) -> usize {
        self.param_base
    }

    pub fn param_len(&self) -> usize {
        self.param_len
    }

    /// Parameter range (absolute) of each layer, including parameter-free ones.
    pub fn layer_param_ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.plans.iter().map(|p| (p.offset, p.offset + p.spec.param_len()))
    }

    pub fn workspace(&self) -> Workspace {
        let sizes: Vec<usize> = self.shapes.iter().map(|s| s.iter().product()).collect();
        Workspace {
            acts: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            grads: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            forward_done: false,
        }
    }

    fn check_workspace(&self, ws: &Workspace) -> Result<()> {
        if ws.acts.len() != self.shapes.len()
            || ws.acts.iter().zip(&self.shapes).any(|(a, s)| a.len() != s.iter().product::<usize>())
        {
            return Err(invalid!("workspace was not created for this layer stack"));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &[f64], ws: &mut Workspace) -> Result<()> {
        self.check_workspace(ws)?;
        if input.len() != ws.acts[0].len() {
            return Err(invalid!("input has {} values, expected shape {:?}", input.len(), self.shapes[0]));
        }
        if params.len() < self.param_base + self.param_len {
            return Err(invalid!("parameter vector too short for layer stack"));
        }
        ws.acts[0].copy_from_slice(input);
        for (i, plan) in self.plans.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(i + 1);
            let x = &head[i];
            let y = &mut tail[0];
            let wl = plan.spec.weight_len();
            let w = &params[plan.offset..plan.offset + wl];
            let b = &params[plan.offset + wl..plan.offset + plan.spec.param_len()];
            match &plan.op {
                Op::Conv1d(g) => layers::conv1d_forward(g, x, w, b, y),
                Op::Conv2d(g) => layers::conv2d_forward(g, x, w, b, y),
                Op::TransposedConv1d(g) => layers::transposed_conv1d_forward(g, x, w, b, y),
                Op::Dense => layers::dense_forward(x, w, b, y),
                Op::Relu => layers::relu_forward(x, y),
                Op::Copy => y.copy_from_slice(x),
            }
        }
        ws.forward_done = true;
        Ok(())
    }

    /// Back-propagates `grad_out` through the stack recorded by the last
    /// `forward`, accumulating parameter gradients into `grads` (same indexing
    /// as `params`). The input gradient is left in [`Workspace::input_grad`].
    pub fn backward(&self, params: &[f64], ws: &mut Workspace, grad_out: &[f64], grads: &mut [f64]) -> Result<()> {
        self.check_workspace(ws)?;
        if !ws.forward_done {
            return Err(Error::State("backward called before forward".into()));
        }
        let n = self.plans.len();
        if grad_out.len() != ws.grads[n].len() {
            return Err(invalid!("upstream gradient has {} values, expected {}", grad_out.len(), ws.grads[n].len()));
        }
        if grads.len() < self.param_base + self.param_len {
            return Err(invalid!("gradient vector too short for layer stack"));
        }
        ws.grads[n].copy_from_slice(grad_out);
        for (i, plan) in self.plans.iter().enumerate().rev() {
            let x = &ws.acts[i];
            let (head, tail) = ws.grads.split_at_mut(i + 1);
            let gx = &mut head[i];
            let gy = &tail[0];
            let wl = plan.spec.weight_len();
            let pl = plan.spec.param_len();
            let w = &params[plan.offset..plan.offset + wl];
            let (gw, gb) = grads[plan.offset..plan.offset + pl].split_at_mut(wl);
            match &plan.op {
                Op::Conv1d(g) => layers::conv1d_backward(g, x, w, gy, gx, gw, gb),
                Op::Conv2d(g) => layers::conv2d_backward(g, x, w, gy, gx, gw, gb),
                Op::TransposedConv1d(g) => layers::transposed_conv1d_backward(g, x, w, gy, gx, gw, gb),
                Op::Dense => layers::dense_backward(x, w, gy, gx, gw, gb),
                Op::Relu => layers::relu_backward(x, gy, gx),
                Op::Copy => gx.copy_from_slice(gy),
            }
        }
        Ok(())
    }
}
