//! Slice-level forward and backward kernels.
//!
//! Backward kernels overwrite `grad_in` and accumulate into `grad_w`/`grad_b`,
//! so a batch is reduced by calling them once per example in a fixed order.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Input index feeding output position `t` through kernel tap `j`, if in range.
#[inline]
fn tap(t: usize, j: usize, stride: usize, padding: usize, len: usize) -> Option<usize> {
    (t * stride + j).checked_sub(padding).filter(|&i| i < len)
}

/// `weights` layout: `[out, in, kernel]`.
pub fn conv1d_forward(g: &Conv1dGeom, input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let k = g.kernel;
    for co in 0..g.out_channels {
        let orow = &mut out[co * g.out_len..(co + 1) * g.out_len];
        orow.fill(bias[co]);
        for ci in 0..g.in_channels {
            let x = &input[ci * g.in_len..(ci + 1) * g.in_len];
            let w = &weights[(co * g.in_channels + ci) * k..(co * g.in_channels + ci + 1) * k];
            for (t, o) in orow.iter_mut().enumerate() {
                let base = t * g.stride;
                if base >= g.padding && base - g.padding + k <= g.in_len {
                    let xs = &x[base - g.padding..base - g.padding + k];
                    *o += w.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                } else {
                    for (j, wj) in w.iter().enumerate() {
                        if let Some(i) = tap(t, j, g.stride, g.padding, g.in_len) {
                            *o += wj * x[i];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv1d_backward(
    g: &Conv1dGeom,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_in: &mut [f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let k = g.kernel;
    grad_in.fill(0.0);
    for co in 0..g.out_channels {
        let go = &grad_out[co * g.out_len..(co + 1) * g.out_len];
        grad_b[co] += go.iter().sum::<f64>();
        for ci in 0..g.in_channels {
            let x = &input[ci * g.in_len..(ci + 1) * g.in_len];
            let gx = &mut grad_in[ci * g.in_len..(ci + 1) * g.in_len];
            let off = (co * g.in_channels + ci) * k;
            let w = &weights[off..off + k];
            let gw = &mut grad_w[off..off + k];
            for (t, &d) in go.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for j in 0..k {
                    if let Some(i) = tap(t, j, g.stride, g.padding, g.in_len) {
                        gw[j] += d * x[i];
                        gx[i] += d * w[j];
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_hw: [usize; 2],
    pub out_hw: [usize; 2],
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

/// `weights` layout: `[out, in, kh, kw]`.
pub fn conv2d_forward(g: &Conv2dGeom, input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let [ih, iw] = g.in_hw;
    let [oh, ow] = g.out_hw;
    let [kh, kw] = g.kernel;
    for co in 0..g.out_channels {
        let oplane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        oplane.fill(bias[co]);
        for ci in 0..g.in_channels {
            let x = &input[ci * ih * iw..(ci + 1) * ih * iw];
            let w = &weights[(co * g.in_channels + ci) * kh * kw..(co * g.in_channels + ci + 1) * kh * kw];
            for oy in 0..oh {
                for dy in 0..kh {
                    let Some(y) = tap(oy, dy, g.stride[0], g.padding[0], ih) else { continue };
                    let xrow = &x[y * iw..(y + 1) * iw];
                    let wrow = &w[dy * kw..(dy + 1) * kw];
                    let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                    for (ox, o) in orow.iter_mut().enumerate() {
                        let base = ox * g.stride[1];
                        if base >= g.padding[1] && base - g.padding[1] + kw <= iw {
                            let xs = &xrow[base - g.padding[1]..base - g.padding[1] + kw];
                            *o += wrow.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                        } else {
                            for (dx, wv) in wrow.iter().enumerate() {
                                if let Some(xi) = tap(ox, dx, g.stride[1], g.padding[1], iw) {
                                    *o += wv * xrow[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_backward(
    g: &Conv2dGeom,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_in: &mut [f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let [ih, iw] = g.in_hw;
    let [oh, ow] = g.out_hw;
    let [kh, kw] = g.kernel;
    grad_in.fill(0.0);
    for co in 0..g.out_channels {
        let go = &grad_out[co * oh * ow..(co + 1) * oh * ow];
        grad_b[co] += go.iter().sum::<f64>();
        for ci in 0..g.in_channels {
            let x = &input[ci * ih * iw..(ci + 1) * ih * iw];
            let gx = &mut grad_in[ci * ih * iw..(ci + 1) * ih * iw];
            let off = (co * g.in_channels + ci) * kh * kw;
            let w = &weights[off..off + kh * kw];
            let gw = &mut grad_w[off..off + kh * kw];
            for oy in 0..oh {
                for ox in 0..ow {
                    let d = go[oy * ow + ox];
                    if d == 0.0 {
                        continue;
                    }
                    for dy in 0..kh {
                        let Some(y) = tap(oy, dy, g.stride[0], g.padding[0], ih) else { continue };
                        for dx in 0..kw {
                            let Some(xi) = tap(ox, dx, g.stride[1], g.padding[1], iw) else { continue };
                            gw[dy * kw + dx] += d * x[y * iw + xi];
                            gx[y * iw + xi] += d * w[dy * kw + dx];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransposedConv1dGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Output position written by input position `i` through tap `j`, if in range.
#[inline]
fn scatter(i: usize, j: usize, stride: usize, padding: usize, len: usize) -> Option<usize> {
    (i * stride + j).checked_sub(padding).filter(|&o| o < len)
}

/// `weights` layout: `[in, out, kernel]`.
pub fn transposed_conv1d_forward(g: &TransposedConv1dGeom, input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let k = g.kernel;
    for co in 0..g.out_channels {
        out[co * g.out_len..(co + 1) * g.out_len].fill(bias[co]);
    }
    for ci in 0..g.in_channels {
        let x = &input[ci * g.in_len..(ci + 1) * g.in_len];
        for co in 0..g.out_channels {
            let w = &weights[(ci * g.out_channels + co) * k..(ci * g.out_channels + co + 1) * k];
            let orow = &mut out[co * g.out_len..(co + 1) * g.out_len];
            for (i, &xv) in x.iter().enumerate() {
                for (j, &wv) in w.iter().enumerate() {
                    if let Some(o) = scatter(i, j, g.stride, g.padding, g.out_len) {
                        orow[o] += xv * wv;
                    }
                }
            }
        }
    }
}

pub fn transposed_conv1d_backward(
    g: &TransposedConv1dGeom,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_in: &mut [f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let k = g.kernel;
    grad_in.fill(0.0);
    for co in 0..g.out_channels {
        grad_b[co] += grad_out[co * g.out_len..(co + 1) * g.out_len].iter().sum::<f64>();
    }
    for ci in 0..g.in_channels {
        let x = &input[ci * g.in_len..(ci + 1) * g.in_len];
        let gx = &mut grad_in[ci * g.in_len..(ci + 1) * g.in_len];
        for co in 0..g.out_channels {
            let off = (ci * g.out_channels + co) * k;
            let w = &weights[off..off + k];
            let gw = &mut grad_w[off..off + k];
            let go = &grad_out[co * g.out_len..(co + 1) * g.out_len];
            for (i, &xv) in x.iter().enumerate() {
                for j in 0..k {
                    if let Some(o) = scatter(i, j, g.stride, g.padding, g.out_len) {
                        gw[j] += xv * go[o];
                        gx[i] += w[j] * go[o];
                    }
                }
            }
        }
    }
}

/// `out = W x + b` with `W` of shape `[out, in]`.
pub fn dense_forward(input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for ((o, row), b) in out.iter_mut().zip(weights.chunks_exact(n_in)).zip(bias) {
        *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

pub fn dense_backward(
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_in: &mut [f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let n_in = input.len();
    grad_in.fill(0.0);
    for (r, &d) in grad_out.iter().enumerate() {
        grad_b[r] += d;
        if d == 0.0 {
            continue;
        }
        let row = &weights[r * n_in..(r + 1) * n_in];
        let grow = &mut grad_w[r * n_in..(r + 1) * n_in];
        for ((gw, gx), (&w, &x)) in grow.iter_mut().zip(grad_in.iter_mut()).zip(row.iter().zip(input)) {
            *gw += d * x;
            *gx += d * w;
        }
    }
}

pub fn relu_forward(input: &[f64], out: &mut [f64]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = x.max(0.0);
    }
}

/// Gradient is passed through where the pre-activation is positive, zero elsewhere.
pub fn relu_backward(input: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    for ((g, &x), &d) in grad_in.iter_mut().zip(input).zip(grad_out) {
        *g = if x > 0.0 { d } else { 0.0 };
    }
}
