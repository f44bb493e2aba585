use rand::Rng;

use crate::error::{Error, Result};

/// Per-sample activation shape flowing between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Spatial { c: usize, h: usize, w: usize },
}

impl Shape {
    pub fn from_dims(dims: &[usize]) -> Result<Shape> {
        match *dims {
            [d] if d > 0 => Ok(Shape::Flat(d)),
            [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Shape::Spatial { c, h, w }),
            _ => Err(Error::shape(format!(
                "input dims must be [d] or [c, h, w] with positive entries, got {dims:?}"
            ))),
        }
    }

    pub fn size(&self) -> usize {
        match *self {
            Shape::Flat(d) => d,
            Shape::Spatial { c, h, w } => c * h * w,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Flat(d) => vec![d],
            Shape::Spatial { c, h, w } => vec![c, h, w],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[outputs][inputs]`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Row-major `[out_channels][in_channels][kernel][kernel]`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    /// 2x2 window, stride 2, no padding.
    MaxPool,
    Flatten,
}

fn glorot<R: Rng>(rng: &mut R, n: usize, fan_in: usize, fan_out: usize) -> Vec<f32> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n)
        .map(|_| rng.random_range(-limit..limit) as f32)
        .collect()
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Dense {
        Dense {
            inputs,
            outputs,
            weight: glorot(rng, inputs * outputs, inputs, outputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Dense {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }
}

impl Conv2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Conv2d {
        let kk = kernel * kernel;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: glorot(
                rng,
                out_channels * in_channels * kk,
                in_channels * kk,
                out_channels * kk,
            ),
            bias: vec![0.0; out_channels],
        }
    }

    /// Output spatial size for an `h x w` input, or `None` if it collapses.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        conv_output_hw(h, w, self.kernel, self.stride, self.padding)
    }
}

pub(crate) fn conv_output_hw(
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<(usize, usize)> {
    if kernel == 0 || stride == 0 {
        return None;
    }
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if ph < kernel || pw < kernel {
        return None;
    }
    Some(((ph - kernel) / stride + 1, (pw - kernel) / stride + 1))
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool => "pool",
            Layer::Flatten => "flatten",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
            _ => 0,
        }
    }

    pub fn params(&self) -> Option<(&[f32], &[f32])> {
        match self {
            Layer::Dense(d) => Some((&d.weight, &d.bias)),
            Layer::Conv2d(c) => Some((&c.weight, &c.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<f32>, &mut Vec<f32>)> {
        match self {
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            Layer::Conv2d(c) => Some((&mut c.weight, &mut c.bias)),
            _ => None,
        }
    }

    /// Output shape for the given input shape.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match (self, input) {
            (Layer::Dense(d), s) => {
                if s != Shape::Flat(d.inputs) {
                    return Err(Error::shape(format!(
                        "dense expects flat input of {}, got {s:?}",
                        d.inputs
                    )));
                }
                Ok(Shape::Flat(d.outputs))
            }
            (Layer::Conv2d(cv), Shape::Spatial { c, h, w }) => {
                if c != cv.in_channels {
                    return Err(Error::shape(format!(
                        "conv expects {} input channels, got {c}",
                        cv.in_channels
                    )));
                }
                let (oh, ow) = cv.output_hw(h, w).ok_or_else(|| {
                    Error::shape(format!("conv k={} collapses {h}x{w} input", cv.kernel))
                })?;
                Ok(Shape::Spatial {
                    c: cv.out_channels,
                    h: oh,
                    w: ow,
                })
            }
            (Layer::Conv2d(_), s) => Err(Error::shape(format!("conv needs spatial input, got {s:?}"))),
            (Layer::Relu, s) => Ok(s),
            (Layer::MaxPool, Shape::Spatial { c, h, w }) if h >= 2 && w >= 2 => {
                Ok(Shape::Spatial { c, h: h / 2, w: w / 2 })
            }
            (Layer::MaxPool, s) => Err(Error::shape(format!("max-pool needs spatial >= 2x2, got {s:?}"))),
            (Layer::Flatten, s) => Ok(Shape::Flat(s.size())),
        }
    }

    /// Forward for a whole batch. `pool_index` receives the argmax source
    /// offsets for max-pool layers (needed by `backward`).
    pub(crate) fn forward(
        &self,
        input: &[f32],
        batch: usize,
        in_shape: Shape,
        out_shape: Shape,
        pool_index: &mut Vec<usize>,
    ) -> Vec<f32> {
        match self {
            Layer::Dense(d) => dense_forward(d, input, batch),
            Layer::Conv2d(c) => conv_forward(c, input, batch, in_shape, out_shape),
            Layer::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
            Layer::MaxPool => pool_forward(input, batch, in_shape, out_shape, pool_index),
            Layer::Flatten => input.to_vec(),
        }
    }

    /// Backward for a whole batch. Returns the gradient w.r.t. the layer
    /// input; parameter gradients are written into `grad` when the layer
    /// has parameters.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        input: &[f32],
        grad_out: &[f32],
        batch: usize,
        in_shape: Shape,
        out_shape: Shape,
        pool_index: &[usize],
        grad: Option<&mut ParamGrad>,
    ) -> Vec<f32> {
        match self {
            Layer::Dense(d) => dense_backward(d, input, grad_out, batch, grad.expect("dense grad")),
            Layer::Conv2d(c) => conv_backward(
                c,
                input,
                grad_out,
                batch,
                in_shape,
                out_shape,
                grad.expect("conv grad"),
            ),
            Layer::Relu => input
                .iter()
                .zip(grad_out)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            Layer::MaxPool => {
                let mut gin = vec![0.0f32; input.len()];
                for (&src, &g) in pool_index.iter().zip(grad_out) {
                    gin[src] += g;
                }
                gin
            }
            Layer::Flatten => grad_out.to_vec(),
        }
    }
}

/// Gradient of one parametric layer, laid out like its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

fn dense_forward(d: &Dense, input: &[f32], batch: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; batch * d.outputs];
    for b in 0..batch {
        let x = &input[b * d.inputs..(b + 1) * d.inputs];
        for o in 0..d.outputs {
            let row = &d.weight[o * d.inputs..(o + 1) * d.inputs];
            let mut acc = d.bias[o] as f64;
            for (w, v) in row.iter().zip(x) {
                acc += *w as f64 * *v as f64;
            }
            out[b * d.outputs + o] = acc as f32;
        }
    }
    out
}

fn dense_backward(d: &Dense, input: &[f32], grad_out: &[f32], batch: usize, grad: &mut ParamGrad) -> Vec<f32> {
    let (ni, no) = (d.inputs, d.outputs);
    for o in 0..no {
        let mut gb = 0.0f64;
        for b in 0..batch {
            gb += grad_out[b * no + o] as f64;
        }
        grad.bias[o] = gb as f32;
        for i in 0..ni {
            let mut acc = 0.0f64;
            for b in 0..batch {
                acc += grad_out[b * no + o] as f64 * input[b * ni + i] as f64;
            }
            grad.weight[o * ni + i] = acc as f32;
        }
    }
    let mut gin = vec![0.0f32; batch * ni];
    for b in 0..batch {
        let g = &grad_out[b * no..(b + 1) * no];
        for i in 0..ni {
            let mut acc = 0.0f64;
            for (o, &go) in g.iter().enumerate() {
                acc += go as f64 * d.weight[o * ni + i] as f64;
            }
            gin[b * ni + i] = acc as f32;
        }
    }
    gin
}

fn spatial(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Spatial { c, h, w } => (c, h, w),
        Shape::Flat(_) => unreachable!("shape checked at network construction"),
    }
}

/// Output columns `ox` whose input column `ox * s + kx - p` lies in
/// `0..w`.
fn valid_cols(ow: usize, w: usize, s: usize, kx: usize, p: usize) -> std::ops::Range<usize> {
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    let hi = if w + p > kx { ((w + p - kx - 1) / s + 1).min(ow) } else { 0 };
    lo..hi.max(lo)
}

fn conv_forward(cv: &Conv2d, input: &[f32], batch: usize, in_shape: Shape, out_shape: Shape) -> Vec<f32> {
    let (ic, h, w) = spatial(in_shape);
    let (oc, oh, ow) = spatial(out_shape);
    let (k, s, p) = (cv.kernel, cv.stride, cv.padding);
    let mut out = vec![0.0f32; batch * oc * oh * ow];
    let mut acc = vec![0.0f64; oh * ow];
    for b in 0..batch {
        let x = &input[b * ic * h * w..(b + 1) * ic * h * w];
        for o in 0..oc {
            acc.fill(cv.bias[o] as f64);
            for c in 0..ic {
                let plane = &x[c * h * w..(c + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = cv.weight[((o * ic + c) * k + ky) * k + kx] as f64;
                        let cols = valid_cols(ow, w, s, kx, p);
                        for oy in 0..oh {
                            let iy = oy * s + ky;
                            if iy < p || iy - p >= h {
                                continue;
                            }
                            let row = &plane[(iy - p) * w..(iy - p + 1) * w];
                            let a = &mut acc[oy * ow..(oy + 1) * ow];
                            for ox in cols.clone() {
                                a[ox] += wv * row[ox * s + kx - p] as f64;
                            }
                        }
                    }
                }
            }
            let dst = &mut out[(b * oc + o) * oh * ow..(b * oc + o + 1) * oh * ow];
            for (d, v) in dst.iter_mut().zip(&acc) {
                *d = *v as f32;
            }
        }
    }
    out
}

fn conv_backward(
    cv: &Conv2d,
    input: &[f32],
    grad_out: &[f32],
    batch: usize,
    in_shape: Shape,
    out_shape: Shape,
    grad: &mut ParamGrad,
) -> Vec<f32> {
    let (ic, h, w) = spatial(in_shape);
    let (oc, oh, ow) = spatial(out_shape);
    let (k, s, p) = (cv.kernel, cv.stride, cv.padding);
    let mut gw = vec![0.0f64; cv.weight.len()];
    let mut gb = vec![0.0f64; oc];
    let mut gin = vec![0.0f64; input.len()];
    for b in 0..batch {
        for o in 0..oc {
            let g = &grad_out[(b * oc + o) * oh * ow..(b * oc + o + 1) * oh * ow];
            gb[o] += g.iter().map(|&v| v as f64).sum::<f64>();
            for c in 0..ic {
                let off = (b * ic + c) * h * w;
                let plane = &input[off..off + h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = ((o * ic + c) * k + ky) * k + kx;
                        let wv = cv.weight[wi] as f64;
                        let cols = valid_cols(ow, w, s, kx, p);
                        let mut gsum = 0.0f64;
                        for oy in 0..oh {
                            let iy = oy * s + ky;
                            if iy < p || iy - p >= h {
                                continue;
                            }
                            let rbase = (iy - p) * w;
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            for ox in cols.clone() {
                                let gv = grow[ox] as f64;
                                let xi = rbase + ox * s + kx - p;
                                gsum += gv * plane[xi] as f64;
                                gin[off + xi] += gv * wv;
                            }
                        }
                        gw[wi] += gsum;
                    }
                }
            }
        }
    }
    grad.weight = gw.into_iter().map(|v| v as f32).collect();
    grad.bias = gb.into_iter().map(|v| v as f32).collect();
    gin.into_iter().map(|v| v as f32).collect()
}

fn pool_forward(
    input: &[f32],
    batch: usize,
    in_shape: Shape,
    out_shape: Shape,
    pool_index: &mut Vec<usize>,
) -> Vec<f32> {
    let (c, h, w) = spatial(in_shape);
    let (_, oh, ow) = spatial(out_shape);
    let mut out = Vec::with_capacity(batch * c * oh * ow);
    pool_index.clear();
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                    out.push(input[best]);
                    pool_index.push(best);
                }
            }
        }
    }
    out
}
