use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        kernel: usize,
    },
    PixelShuffle {
        input: usize,
        factor: usize,
    },
    /// (h, w, d) channel-last layout to (d, h, w) channel-first.
    ChannelsFirst {
        input: usize,
    },
    Gelu {
        input: usize,
    },
    Sigmoid {
        input: usize,
    },
    Lerp {
        lower: usize,
        upper: usize,
        w_lower: f64,
        w_upper: f64,
    },
    Sum {
        input: usize,
    },
    MseLoss {
        pred: usize,
        target: usize,
    },
}

#[derive(Debug)]
struct Node {
    data: Vec<f32>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
    /// 64-bit result for reduction ops, so losses are not truncated to f32.
    scalar: Option<f64>,
}

/// Record of a single forward pass.
///
/// One tape serves one training step: record the forward computation, call
/// [`Tape::backward`] once, read gradients off the leaves, drop the tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

const GELU_COEFF: f64 = 0.044715;

fn gelu_f64(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEFF * x * x * x)).tanh())
}

fn gelu_grad_f64(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = c * (x + GELU_COEFF * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let d_inner = c * (1.0 + 3.0 * GELU_COEFF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}

fn sigmoid_f64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Copy a tensor onto the tape as a leaf. Gradients accumulate on the
    /// leaf when the tensor requires them.
    pub fn leaf(&mut self, tensor: &Tensor) -> Value {
        self.push(
            tensor.data().to_vec(),
            tensor.shape().to_vec(),
            tensor.requires_grad(),
            Op::Leaf,
            None,
        )
    }

    /// Leaf that never receives gradients (targets, fixed inputs).
    pub fn constant(&mut self, tensor: &Tensor) -> Value {
        self.push(
            tensor.data().to_vec(),
            tensor.shape().to_vec(),
            false,
            Op::Leaf,
            None,
        )
    }

    pub fn data(&self, v: Value) -> &[f32] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Gradient of the most recent backward pass with respect to `v`.
    pub fn grad(&self, v: Value) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Scalar value of a reduction node at full accumulation precision.
    pub fn scalar(&self, v: Value) -> Result<f64, AutodiffError> {
        let node = self.node(v)?;
        if node.data.len() != 1 {
            return Err(AutodiffError::NotScalar(node.shape.clone()));
        }
        Ok(node.scalar.unwrap_or(node.data[0] as f64))
    }

    pub fn to_tensor(&self, v: Value) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("tape nodes hold consistent shapes")
    }

    fn node(&self, v: Value) -> Result<&Node, AutodiffError> {
        self.nodes.get(v.0).ok_or(AutodiffError::UnknownValue(v.0))
    }

    fn push(
        &mut self,
        data: Vec<f32>,
        shape: Vec<usize>,
        needs_grad: bool,
        op: Op,
        scalar: Option<f64>,
    ) -> Value {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            data,
            shape,
            grad: None,
            needs_grad,
            op,
            scalar,
        });
        Value(self.nodes.len() - 1)
    }

    fn check_open(&self) -> Result<(), AutodiffError> {
        if self.consumed {
            Err(AutodiffError::TapeConsumed)
        } else {
            Ok(())
        }
    }

    /// Stride-1 cross-correlation with same padding. Kernel 1 uses no
    /// padding, kernel 3 uses zero padding 1, so spatial size is preserved.
    pub fn conv2d(
        &mut self,
        input: Value,
        weight: Value,
        bias: Value,
        kernel: usize,
    ) -> Result<Value, AutodiffError> {
        self.check_open()?;
        if kernel != 1 && kernel != 3 {
            return Err(AutodiffError::KernelSize(kernel));
        }
        let in_shape = &self.node(input)?.shape;
        let w_shape = &self.node(weight)?.shape;
        let b_shape = &self.node(bias)?.shape;
        if in_shape.len() != 3 {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input must be C x h x w, got {in_shape:?}"),
            });
        }
        if w_shape.len() != 4 || w_shape[2] != kernel || w_shape[3] != kernel {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                detail: format!("weight must be C_out x C_in x {kernel} x {kernel}, got {w_shape:?}"),
            });
        }
        let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let (c_out, w_cin) = (w_shape[0], w_shape[1]);
        if w_cin != c_in {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "input has {c_in} channels but weight expects {w_cin} (weight {w_shape:?}, input {in_shape:?})"
                ),
            });
        }
        if b_shape.len() != 1 || b_shape[0] != c_out {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias must have {c_out} elements, got {b_shape:?}"),
            });
        }

        let pad = kernel / 2;
        let x = &self.nodes[input.0].data;
        let k = &self.nodes[weight.0].data;
        let b = &self.nodes[bias.0].data;
        let mut out = vec![0.0f32; c_out * h * w];
        for co in 0..c_out {
            for y in 0..h {
                for xw in 0..w {
                    let mut acc = b[co] as f64;
                    for ci in 0..c_in {
                        for ky in 0..kernel {
                            let iy = y + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let iy = iy - pad;
                            for kx in 0..kernel {
                                let ix = xw + kx;
                                if ix < pad || ix - pad >= w {
                                    continue;
                                }
                                let ix = ix - pad;
                                let xv = x[(ci * h + iy) * w + ix] as f64;
                                let kv = k[((co * c_in + ci) * kernel + ky) * kernel + kx] as f64;
                                acc += xv * kv;
                            }
                        }
                    }
                    out[(co * h + y) * w + xw] = acc as f32;
                }
            }
        }
        let needs = self.needs_any(&[input, weight, bias]);
        Ok(self.push(
            out,
            vec![c_out, h, w],
            needs,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
                kernel,
            },
            None,
        ))
    }

    /// Rearrange `(C*S^2, h, w)` into `(C, h*S, w*S)` with the channel-major
    /// sub-pixel layout: `out[c][y][x] = in[c*S^2 + (y%S)*S + x%S][y/S][x/S]`.
    pub fn pixel_shuffle(&mut self, input: Value, factor: usize) -> Result<Value, AutodiffError> {
        self.check_open()?;
        let in_shape = &self.node(input)?.shape;
        if in_shape.len() != 3 {
            return Err(AutodiffError::ShapeMismatch {
                op: "pixel_shuffle",
                detail: format!("input must be C x h x w, got {in_shape:?}"),
            });
        }
        let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let s2 = factor * factor;
        if factor == 0 || c_in % s2 != 0 {
            return Err(AutodiffError::ChannelsNotDivisible {
                channels: c_in,
                factor,
            });
        }
        let c_out = c_in / s2;
        let (oh, ow) = (h * factor, w * factor);
        let x = &self.nodes[input.0].data;
        let mut out = vec![0.0f32; c_out * oh * ow];
        for c in 0..c_out {
            for y in 0..oh {
                for xw in 0..ow {
                    let ci = c * s2 + (y % factor) * factor + (xw % factor);
                    out[(c * oh + y) * ow + xw] = x[(ci * h + y / factor) * w + xw / factor];
                }
            }
        }
        let needs = self.nodes[input.0].needs_grad;
        Ok(self.push(
            out,
            vec![c_out, oh, ow],
            needs,
            Op::PixelShuffle {
                input: input.0,
                factor,
            },
            None,
        ))
    }

    /// Transpose a channel-last `(h, w, d)` tensor to channel-first `(d, h, w)`.
    pub fn to_channels_first(&mut self, input: Value) -> Result<Value, AutodiffError> {
        self.check_open()?;
        let in_shape = &self.node(input)?.shape;
        if in_shape.len() != 3 {
            return Err(AutodiffError::ShapeMismatch {
                op: "to_channels_first",
                detail: format!("input must be h x w x d, got {in_shape:?}"),
            });
        }
        let (h, w, d) = (in_shape[0], in_shape[1], in_shape[2]);
        let x = &self.nodes[input.0].data;
        let mut out = vec![0.0f32; d * h * w];
        for y in 0..h {
            for xw in 0..w {
                for c in 0..d {
                    out[(c * h + y) * w + xw] = x[(y * w + xw) * d + c];
                }
            }
        }
        let needs = self.nodes[input.0].needs_grad;
        Ok(self.push(
            out,
            vec![d, h, w],
            needs,
            Op::ChannelsFirst { input: input.0 },
            None,
        ))
    }

    /// Elementwise tanh-approximation GELU.
    pub fn gelu(&mut self, input: Value) -> Result<Value, AutodiffError> {
        self.check_open()?;
        let node = self.node(input)?;
        let out: Vec<f32> = node
            .data
            .iter()
            .map(|&v| gelu_f64(v as f64) as f32)
            .collect();
        let shape = node.shape.clone();
        let needs = node.needs_grad;
        Ok(self.push(out, shape, needs, Op::Gelu { input: input.0 }, None))
    }

    /// Elementwise logistic function, squashing into (0, 1).
    pub fn sigmoid(&mut self, input: Value) -> Result<Value, AutodiffError> {
        self.check_open()?;
        let node = self.node(input)?;
        let out: Vec<f32> = node
            .data
            .iter()
            .map(|&v| sigmoid_f64(v as f64) as f32)
            .collect();
        let shape = node.shape.clone();
        let needs = node.needs_grad;
        Ok(self.push(out, shape, needs, Op::Sigmoid { input: input.0 }, None))
    }

    /// `w_lower * lower + w_upper * upper` with constant weights summing to 1.
    /// The backward pass routes `grad * w_lower` to `lower` and
    /// `grad * w_upper` to `upper`; the weights themselves are not trainable.
    pub fn lerp_combine(
        &mut self,
        lower: Value,
        upper: Value,
        w_lower: f64,
        w_upper: f64,
    ) -> Result<Value, AutodiffError> {
        self.check_open()?;
        if (w_lower + w_upper - 1.0).abs() > 1e-9 {
            return Err(AutodiffError::WeightsNotAffine(w_lower + w_upper));
        }
        let a = self.node(lower)?;
        let b = self.node(upper)?;
        if a.shape != b.shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "lerp_combine",
                detail: format!("{:?} vs {:?}", a.shape, b.shape),
            });
        }
        let out: Vec<f32> = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&va, &vb)| (w_lower * va as f64 + w_upper * vb as f64) as f32)
            .collect();
        let shape = a.shape.clone();
        let needs = self.needs_any(&[lower, upper]);
        Ok(self.push(
            out,
            shape,
            needs,
            Op::Lerp {
                lower: lower.0,
                upper: upper.0,
                w_lower,
                w_upper,
            },
            None,
        ))
    }

    /// Sum of all elements, accumulated in 64-bit.
    pub fn sum(&mut self, input: Value) -> Result<Value, AutodiffError> {
        self.check_open()?;
        let node = self.node(input)?;
        let total: f64 = node.data.iter().map(|&v| v as f64).sum();
        let needs = node.needs_grad;
        Ok(self.push(
            vec![total as f32],
            vec![1],
            needs,
            Op::Sum { input: input.0 },
            Some(total),
        ))
    }

    /// Mean of squared elementwise differences, accumulated in 64-bit.
    pub fn mse_loss(&mut self, pred: Value, target: Value) -> Result<Value, AutodiffError> {
        self.check_open()?;
        let p = self.node(pred)?;
        let t = self.node(target)?;
        if p.shape != t.shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "mse_loss",
                detail: format!("{:?} vs {:?}", p.shape, t.shape),
            });
        }
        let n = p.data.len() as f64;
        let total: f64 = p
            .data
            .iter()
            .zip(&t.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        let mean = total / n;
        let needs = self.needs_any(&[pred, target]);
        Ok(self.push(
            vec![mean as f32],
            vec![1],
            needs,
            Op::MseLoss {
                pred: pred.0,
                target: target.0,
            },
            Some(mean),
        ))
    }

    fn needs_any(&self, values: &[Value]) -> bool {
        values.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Reverse sweep from a scalar loss. Populates gradients on every
    /// recorded value that requires them, then closes the tape: a second
    /// backward (or further op recording) is rejected.
    pub fn backward(&mut self, loss: Value) -> Result<(), AutodiffError> {
        self.check_open()?;
        let loss_node = self.node(loss)?;
        if loss_node.data.len() != 1 {
            return Err(AutodiffError::NotScalar(loss_node.shape.clone()));
        }
        for node in &mut self.nodes {
            if node.needs_grad {
                node.grad = Some(vec![0.0; node.data.len()]);
            }
        }
        if self.nodes[loss.0].grad.is_none() {
            // Loss does not depend on any trainable value; nothing to do.
            self.consumed = true;
            return Ok(());
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    kernel,
                } => self.backward_conv2d(i, input, weight, bias, kernel),
                Op::PixelShuffle { input, factor } => {
                    if self.nodes[input].needs_grad {
                        let (c_out, oh, ow) = dims3(&self.nodes[i].shape);
                        let (_, h, w) = dims3(&self.nodes[input].shape);
                        let g = self.nodes[i].grad.take().unwrap();
                        let gi = self.nodes[input].grad.as_mut().unwrap();
                        let s2 = factor * factor;
                        for c in 0..c_out {
                            for y in 0..oh {
                                for xw in 0..ow {
                                    let ci = c * s2 + (y % factor) * factor + (xw % factor);
                                    gi[(ci * h + y / factor) * w + xw / factor] +=
                                        g[(c * oh + y) * ow + xw];
                                }
                            }
                        }
                        self.nodes[i].grad = Some(g);
                    }
                }
                Op::ChannelsFirst { input } => {
                    if self.nodes[input].needs_grad {
                        let (d, h, w) = dims3(&self.nodes[i].shape);
                        let g = self.nodes[i].grad.take().unwrap();
                        let gi = self.nodes[input].grad.as_mut().unwrap();
                        for y in 0..h {
                            for xw in 0..w {
                                for c in 0..d {
                                    gi[(y * w + xw) * d + c] += g[(c * h + y) * w + xw];
                                }
                            }
                        }
                        self.nodes[i].grad = Some(g);
                    }
                }
                Op::Gelu { input } => {
                    if self.nodes[input].needs_grad {
                        let g = self.nodes[i].grad.take().unwrap();
                        let x: Vec<f64> =
                            self.nodes[input].data.iter().map(|&v| v as f64).collect();
                        let gi = self.nodes[input].grad.as_mut().unwrap();
                        for (j, gv) in g.iter().enumerate() {
                            gi[j] += gv * gelu_grad_f64(x[j]);
                        }
                        self.nodes[i].grad = Some(g);
                    }
                }
                Op::Sigmoid { input } => {
                    if self.nodes[input].needs_grad {
                        let g = self.nodes[i].grad.take().unwrap();
                        let s: Vec<f64> = self.nodes[i].data.iter().map(|&v| v as f64).collect();
                        let gi = self.nodes[input].grad.as_mut().unwrap();
                        for (j, gv) in g.iter().enumerate() {
                            gi[j] += gv * s[j] * (1.0 - s[j]);
                        }
                        self.nodes[i].grad = Some(g);
                    }
                }
                Op::Lerp {
                    lower,
                    upper,
                    w_lower,
                    w_upper,
                } => {
                    let g = self.nodes[i].grad.take().unwrap();
                    if self.nodes[lower].needs_grad {
                        let gl = self.nodes[lower].grad.as_mut().unwrap();
                        for (j, gv) in g.iter().enumerate() {
                            gl[j] += gv * w_lower;
                        }
                    }
                    if self.nodes[upper].needs_grad {
                        let gu = self.nodes[upper].grad.as_mut().unwrap();
                        for (j, gv) in g.iter().enumerate() {
                            gu[j] += gv * w_upper;
                        }
                    }
                    self.nodes[i].grad = Some(g);
                }
                Op::Sum { input } => {
                    if self.nodes[input].needs_grad {
                        let g = self.nodes[i].grad.as_ref().unwrap()[0];
                        let gi = self.nodes[input].grad.as_mut().unwrap();
                        for gv in gi.iter_mut() {
                            *gv += g;
                        }
                    }
                }
                Op::MseLoss { pred, target } => {
                    let g = self.nodes[i].grad.as_ref().unwrap()[0];
                    let n = self.nodes[pred].data.len() as f64;
                    let diffs: Vec<f64> = self.nodes[pred]
                        .data
                        .iter()
                        .zip(&self.nodes[target].data)
                        .map(|(&a, &b)| a as f64 - b as f64)
                        .collect();
                    if self.nodes[pred].needs_grad {
                        let gp = self.nodes[pred].grad.as_mut().unwrap();
                        for (j, d) in diffs.iter().enumerate() {
                            gp[j] += g * 2.0 * d / n;
                        }
                    }
                    if self.nodes[target].needs_grad {
                        let gt = self.nodes[target].grad.as_mut().unwrap();
                        for (j, d) in diffs.iter().enumerate() {
                            gt[j] -= g * 2.0 * d / n;
                        }
                    }
                }
            }
        }
        self.consumed = true;
        Ok(())
    }

    fn backward_conv2d(&mut self, out: usize, input: usize, weight: usize, bias: usize, kernel: usize) {
        let (c_out, h, w) = dims3(&self.nodes[out].shape);
        let c_in = self.nodes[input].shape[0];
        let pad = kernel / 2;
        let g = self.nodes[out].grad.take().unwrap();

        if self.nodes[bias].needs_grad {
            let gb = self.nodes[bias].grad.as_mut().unwrap();
            for co in 0..c_out {
                let mut acc = 0.0f64;
                for y in 0..h {
                    for xw in 0..w {
                        acc += g[(co * h + y) * w + xw];
                    }
                }
                gb[co] += acc;
            }
        }

        if self.nodes[weight].needs_grad {
            let x: Vec<f64> = self.nodes[input].data.iter().map(|&v| v as f64).collect();
            let gw = self.nodes[weight].grad.as_mut().unwrap();
            for co in 0..c_out {
                for ci in 0..c_in {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let mut acc = 0.0f64;
                            for y in 0..h {
                                let iy = y + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let iy = iy - pad;
                                for xw in 0..w {
                                    let ix = xw + kx;
                                    if ix < pad || ix - pad >= w {
                                        continue;
                                    }
                                    let ix = ix - pad;
                                    acc += g[(co * h + y) * w + xw] * x[(ci * h + iy) * w + ix];
                                }
                            }
                            gw[((co * c_in + ci) * kernel + ky) * kernel + kx] += acc;
                        }
                    }
                }
            }
        }

        if self.nodes[input].needs_grad {
            let k: Vec<f64> = self.nodes[weight].data.iter().map(|&v| v as f64).collect();
            let gi = self.nodes[input].grad.as_mut().unwrap();
            for ci in 0..c_in {
                for iy in 0..h {
                    for ix in 0..w {
                        let mut acc = 0.0f64;
                        for co in 0..c_out {
                            for ky in 0..kernel {
                                // iy = y + ky - pad  =>  y = iy + pad - ky
                                let y = iy + pad;
                                if y < ky || y - ky >= h {
                                    continue;
                                }
                                let y = y - ky;
                                for kx in 0..kernel {
                                    let xw = ix + pad;
                                    if xw < kx || xw - kx >= w {
                                        continue;
                                    }
                                    let xw = xw - kx;
                                    acc += g[(co * h + y) * w + xw]
                                        * k[((co * c_in + ci) * kernel + ky) * kernel + kx];
                                }
                            }
                        }
                        gi[(ci * h + iy) * w + ix] += acc;
                    }
                }
            }
        }

        self.nodes[out].grad = Some(g);
    }
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_from(tape: &mut Tape, shape: Vec<usize>, data: Vec<f32>, grad: bool) -> Value {
        let t = Tensor::new(shape, data).unwrap().with_requires_grad(grad);
        tape.leaf(&t)
    }

    #[test]
    fn conv2d_identity_kernel_is_identity() {
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], false);
        let w = leaf_from(&mut tape, vec![1, 1, 1, 1], vec![1.0], false);
        let b = leaf_from(&mut tape, vec![1], vec![0.0], false);
        let y = tape.conv2d(x, w, b, 1).unwrap();
        assert_eq!(tape.data(y), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv2d_ones_counts_padded_window() {
        // 3x3 ones through a 3x3 ones kernel: center sees all nine inputs,
        // corners see four (zero padding).
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![1, 3, 3], vec![1.0; 9], false);
        let w = leaf_from(&mut tape, vec![1, 1, 3, 3], vec![1.0; 9], false);
        let b = leaf_from(&mut tape, vec![1], vec![0.0], false);
        let y = tape.conv2d(x, w, b, 3).unwrap();
        let out = tape.data(y);
        assert_eq!(out[4], 9.0);
        assert_eq!(out[0], 4.0);
        assert_eq!(out[2], 4.0);
        assert_eq!(out[6], 4.0);
        assert_eq!(out[8], 4.0);
        assert_eq!(out[1], 6.0);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![2, 2, 2], vec![0.0; 8], false);
        let w = leaf_from(&mut tape, vec![1, 3, 1, 1], vec![0.0; 3], false);
        let b = leaf_from(&mut tape, vec![1], vec![0.0], false);
        let err = tape.conv2d(x, w, b, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2 channels") && msg.contains("expects 3"), "{msg}");
    }

    #[test]
    fn conv2d_rejects_bad_kernel() {
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![1, 2, 2], vec![0.0; 4], false);
        let w = leaf_from(&mut tape, vec![1, 1, 2, 2], vec![0.0; 4], false);
        let b = leaf_from(&mut tape, vec![1], vec![0.0], false);
        assert!(matches!(
            tape.conv2d(x, w, b, 2),
            Err(AutodiffError::KernelSize(2))
        ));
    }

    #[test]
    fn pixel_shuffle_layout_matches_definition() {
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![4, 1, 1], vec![1.0, 2.0, 3.0, 4.0], false);
        let y = tape.pixel_shuffle(x, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 2]);
        assert_eq!(tape.data(y), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pixel_shuffle_factor_one_is_identity() {
        let mut tape = Tape::new();
        let data: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let x = leaf_from(&mut tape, vec![3, 2, 2], data.clone(), false);
        let y = tape.pixel_shuffle(x, 1).unwrap();
        assert_eq!(tape.shape(y), &[3, 2, 2]);
        assert_eq!(tape.data(y), &data[..]);
    }

    #[test]
    fn pixel_shuffle_rejects_indivisible_channels() {
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![3, 1, 1], vec![0.0; 3], false);
        assert!(matches!(
            tape.pixel_shuffle(x, 2),
            Err(AutodiffError::ChannelsNotDivisible { channels: 3, factor: 2 })
        ));
    }

    #[test]
    fn pixel_shuffle_backward_is_inverse_permutation() {
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![8, 2, 3], vec![0.25; 48], true);
        let y = tape.pixel_shuffle(x, 2).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn gelu_center_and_asymptote() {
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![2], vec![0.0, 10.0], false);
        let y = tape.gelu(x).unwrap();
        assert_eq!(tape.data(y)[0], 0.0);
        assert!((tape.data(y)[1] - 10.0).abs() < 1e-4);
    }

    #[test]
    fn lerp_endpoint_returns_lower_exactly() {
        let mut tape = Tape::new();
        let a = leaf_from(&mut tape, vec![3], vec![1.0, 2.0, 3.0], false);
        let b = leaf_from(&mut tape, vec![3], vec![9.0, 9.0, 9.0], false);
        let y = tape.lerp_combine(a, b, 1.0, 0.0).unwrap();
        assert_eq!(tape.data(y), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn lerp_midpoint_averages() {
        let mut tape = Tape::new();
        let a = leaf_from(&mut tape, vec![4], vec![0.0; 4], false);
        let b = leaf_from(&mut tape, vec![4], vec![1.0; 4], false);
        let y = tape.lerp_combine(a, b, 0.5, 0.5).unwrap();
        assert_eq!(tape.data(y), &[0.5; 4]);
    }

    #[test]
    fn lerp_rejects_non_affine_weights() {
        let mut tape = Tape::new();
        let a = leaf_from(&mut tape, vec![1], vec![0.0], false);
        let b = leaf_from(&mut tape, vec![1], vec![1.0], false);
        assert!(matches!(
            tape.lerp_combine(a, b, 0.5, 0.6),
            Err(AutodiffError::WeightsNotAffine(_))
        ));
    }

    #[test]
    fn mse_identical_is_zero_and_nonnegative() {
        let mut tape = Tape::new();
        let a = leaf_from(&mut tape, vec![3], vec![0.5, -1.0, 2.0], false);
        let b = leaf_from(&mut tape, vec![3], vec![0.5, -1.0, 2.0], false);
        let loss = tape.mse_loss(a, b).unwrap();
        assert_eq!(tape.scalar(loss).unwrap(), 0.0);
    }

    #[test]
    fn mse_hand_value() {
        let mut tape = Tape::new();
        let p = leaf_from(&mut tape, vec![2], vec![0.0, 0.0], false);
        let t = leaf_from(&mut tape, vec![2], vec![1.0, 1.0], false);
        let loss = tape.mse_loss(p, t).unwrap();
        assert_eq!(tape.scalar(loss).unwrap(), 1.0);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let mut tape = Tape::new();
        let p = leaf_from(&mut tape, vec![2], vec![0.0; 2], false);
        let t = leaf_from(&mut tape, vec![3], vec![0.0; 3], false);
        assert!(tape.mse_loss(p, t).is_err());
    }

    #[test]
    fn backward_of_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![2, 3], vec![0.5; 6], true);
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn grads_accumulate_over_multiple_uses() {
        // p feeds the loss through two paths; the chain rule sums them.
        let mut tape = Tape::new();
        let p = leaf_from(&mut tape, vec![2], vec![0.3, -0.7], true);
        let c = leaf_from(&mut tape, vec![2], vec![0.0, 0.0], false);
        let a = tape.lerp_combine(p, c, 1.0, 0.0).unwrap();
        let b = tape.lerp_combine(p, c, 1.0, 0.0).unwrap();
        let y = tape.lerp_combine(a, b, 0.5, 0.5).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![2], vec![1.0, 2.0], true);
        assert!(matches!(
            tape.backward(x),
            Err(AutodiffError::NotScalar(_))
        ));
    }

    #[test]
    fn backward_consumes_tape() {
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![1], vec![2.0], true);
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(
            tape.backward(loss),
            Err(AutodiffError::TapeConsumed)
        ));
        assert!(matches!(tape.sum(x), Err(AutodiffError::TapeConsumed)));
    }

    #[test]
    fn backward_rejects_unknown_value() {
        let mut tape = Tape::new();
        assert!(matches!(
            tape.backward(Value(3)),
            Err(AutodiffError::UnknownValue(3))
        ));
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = leaf_from(&mut tape, vec![1], vec![0.0], false);
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.data(y), &[0.5]);
    }
}
