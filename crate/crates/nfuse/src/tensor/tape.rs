use super::ops::{self, NormStats, Shape5};
use super::{conv_out_extent, pool_out_extent, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

enum Op {
    Leaf,
    Conv3d {
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        padding: usize,
        stride: usize,
        dilation: usize,
    },
    MaxPool3d {
        input: TensorId,
        argmax: Vec<usize>,
    },
    InstanceNorm3d {
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        stats: NormStats,
    },
    Relu {
        input: TensorId,
    },
    Linear {
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
    },
    Softmax {
        input: TensorId,
    },
    SoftmaxCrossEntropy {
        logits: TensorId,
        probs: Vec<f32>,
        targets: Vec<usize>,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Concat {
        a: TensorId,
        b: TensorId,
        width_a: usize,
    },
    Sum {
        input: TensorId,
    },
    Reshape {
        input: TensorId,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    tracked: bool,
    op: Op,
}

/// Wengert tape: records operations during the forward pass and replays
/// them in reverse to accumulate gradients. Rebuilt per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Insert a leaf tensor. `tracked` leaves receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor, tracked: bool) -> TensorId {
        self.push(value, tracked, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, tracked: bool, op: Op) -> TensorId {
        self.nodes.push(Node {
            value,
            grad: None,
            tracked,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn tracked_any(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tracked)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn data(&self, id: TensorId) -> &[f32] {
        self.nodes[id.0].value.data()
    }

    /// Gradient of a node, populated by [`Tape::backward`].
    pub fn grad(&self, id: TensorId) -> Option<&[f32]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn shape5(&self, id: TensorId, context: &str) -> Result<Shape5> {
        let s = self.shape(id);
        if s.len() != 5 {
            return Err(Error::shape_mismatch(context, "rank-5 [N,C,D,H,W]", s));
        }
        Ok([s[0], s[1], s[2], s[3], s[4]])
    }

    pub fn conv3d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        padding: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<TensorId> {
        if stride < 1 || dilation < 1 {
            return Err(Error::InvalidArgument(
                "conv3d stride and dilation must be >= 1".into(),
            ));
        }
        let in_shape = self.shape5(input, "conv3d input")?;
        let w_shape = self.shape5(weight, "conv3d weight")?;
        let [_, c_in, k, k2, k3] = w_shape;
        if k != k2 || k != k3 {
            return Err(Error::shape_mismatch("conv3d kernel (must be cubic)", k, (k2, k3)));
        }
        if in_shape[1] != c_in {
            return Err(Error::ShapeMismatch {
                context: "conv3d channels".into(),
                expected: format!("input channels {} (weight shape {:?})", c_in, w_shape),
                actual: format!("input shape {:?}", in_shape),
            });
        }
        if self.shape(bias) != [w_shape[0]] {
            return Err(Error::shape_mismatch("conv3d bias", [w_shape[0]], self.shape(bias)));
        }
        let od = conv_out_extent(in_shape[2], k, padding, stride, dilation)?;
        let oh = conv_out_extent(in_shape[3], k, padding, stride, dilation)?;
        let ow = conv_out_extent(in_shape[4], k, padding, stride, dilation)?;
        let out_shape = [in_shape[0], w_shape[0], od, oh, ow];
        let mut out = vec![0.0f32; out_shape.iter().product()];
        ops::conv3d_forward(
            self.data(input),
            &in_shape,
            self.data(weight),
            &w_shape,
            self.data(bias),
            padding,
            stride,
            dilation,
            &mut out,
            &out_shape,
        );
        let tracked = self.tracked_any(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(out_shape.to_vec(), out)?,
            tracked,
            Op::Conv3d {
                input,
                weight,
                bias,
                padding,
                stride,
                dilation,
            },
        ))
    }

    pub fn maxpool3d(&mut self, input: TensorId, k: usize, stride: usize) -> Result<TensorId> {
        let in_shape = self.shape5(input, "maxpool3d input")?;
        let od = pool_out_extent(in_shape[2], k, stride)?;
        let oh = pool_out_extent(in_shape[3], k, stride)?;
        let ow = pool_out_extent(in_shape[4], k, stride)?;
        let out_shape = [in_shape[0], in_shape[1], od, oh, ow];
        let numel = out_shape.iter().product();
        let mut out = vec![0.0f32; numel];
        let mut argmax = vec![0usize; numel];
        ops::maxpool3d_forward(self.data(input), &in_shape, k, stride, &mut out, &out_shape, &mut argmax);
        let tracked = self.tracked_any(&[input]);
        Ok(self.push(
            Tensor::new(out_shape.to_vec(), out)?,
            tracked,
            Op::MaxPool3d { input, argmax },
        ))
    }

    pub fn instance_norm3d(
        &mut self,
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f32,
    ) -> Result<TensorId> {
        let in_shape = self.shape5(input, "instance_norm3d input")?;
        let c = in_shape[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape_mismatch(
                "instance_norm3d gamma/beta",
                [c],
                (self.shape(gamma), self.shape(beta)),
            ));
        }
        if in_shape[2] * in_shape[3] * in_shape[4] < 2 {
            return Err(Error::InvalidArgument(
                "instance_norm3d needs at least 2 spatial elements".into(),
            ));
        }
        let mut out = vec![0.0f32; in_shape.iter().product()];
        let stats = ops::instance_norm3d_forward(
            self.data(input),
            &in_shape,
            self.data(gamma),
            self.data(beta),
            eps,
            &mut out,
        );
        let tracked = self.tracked_any(&[input, gamma, beta]);
        Ok(self.push(
            Tensor::new(in_shape.to_vec(), out)?,
            tracked,
            Op::InstanceNorm3d {
                input,
                gamma,
                beta,
                stats,
            },
        ))
    }

    pub fn relu(&mut self, input: TensorId) -> TensorId {
        let out: Vec<f32> = self.data(input).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(input).to_vec();
        let tracked = self.tracked_any(&[input]);
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            tracked,
            Op::Relu { input },
        )
    }

    pub fn linear(&mut self, input: TensorId, weight: TensorId, bias: TensorId) -> Result<TensorId> {
        let in_shape = self.shape(input);
        let w_shape = self.shape(weight);
        if in_shape.len() != 2 || w_shape.len() != 2 {
            return Err(Error::shape_mismatch("linear", "rank-2 input and weight", (in_shape, w_shape)));
        }
        let (n, f_in) = (in_shape[0], in_shape[1]);
        let (f_out, wf_in) = (w_shape[0], w_shape[1]);
        if f_in != wf_in {
            return Err(Error::shape_mismatch("linear features", wf_in, f_in));
        }
        if self.shape(bias) != [f_out] {
            return Err(Error::shape_mismatch("linear bias", [f_out], self.shape(bias)));
        }
        let mut out = vec![0.0f32; n * f_out];
        ops::linear_forward(self.data(input), n, f_in, self.data(weight), f_out, self.data(bias), &mut out);
        let tracked = self.tracked_any(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(vec![n, f_out], out)?,
            tracked,
            Op::Linear { input, weight, bias },
        ))
    }

    pub fn softmax(&mut self, input: TensorId) -> Result<TensorId> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape_mismatch("softmax", "rank-2 logits", &shape));
        }
        let (n, classes) = (shape[0], shape[1]);
        let mut out = vec![0.0f32; n * classes];
        ops::softmax_rows(self.data(input), n, classes, &mut out);
        let tracked = self.tracked_any(&[input]);
        Ok(self.push(Tensor::new(shape, out)?, tracked, Op::Softmax { input }))
    }

    /// Returns the scalar mean cross-entropy loss node plus the (detached)
    /// probability rows.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: TensorId,
        targets: &[usize],
    ) -> Result<(TensorId, Tensor)> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[1] != 3 {
            return Err(Error::shape_mismatch("softmax_cross_entropy", "[N, 3] logits", &shape));
        }
        let n = shape[0];
        if targets.len() != n {
            return Err(Error::shape_mismatch("softmax_cross_entropy targets", n, targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t > 2) {
            return Err(Error::InvalidArgument(format!(
                "class index {bad} out of range 0..3"
            )));
        }
        let mut probs = vec![0.0f32; n * 3];
        ops::softmax_rows(self.data(logits), n, 3, &mut probs);
        let mut loss = 0.0f32;
        for (i, &t) in targets.iter().enumerate() {
            loss -= probs[i * 3 + t].max(f32::MIN_POSITIVE).ln();
        }
        loss /= n as f32;
        let tracked = self.tracked_any(&[logits]);
        let probs_tensor = Tensor::new(vec![n, 3], probs.clone())?;
        let id = self.push(
            Tensor::scalar(loss),
            tracked,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
            },
        );
        Ok((id, probs_tensor))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape_mismatch("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<f32> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, tracked, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape_mismatch("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<f32> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, tracked, Op::Mul { a, b }))
    }

    /// Juxtaposition along the feature axis of two [N, F] tensors, a first.
    pub fn concat(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::shape_mismatch("concat leading extents", &sa, &sb));
        }
        let (n, fa, fb) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0f32; n * (fa + fb)];
        for i in 0..n {
            out[i * (fa + fb)..i * (fa + fb) + fa].copy_from_slice(&self.data(a)[i * fa..(i + 1) * fa]);
            out[i * (fa + fb) + fa..(i + 1) * (fa + fb)]
                .copy_from_slice(&self.data(b)[i * fb..(i + 1) * fb]);
        }
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![n, fa + fb], out)?,
            tracked,
            Op::Concat { a, b, width_a: fa },
        ))
    }

    pub fn sum(&mut self, input: TensorId) -> TensorId {
        let mut acc = 0.0f32;
        for &v in self.data(input) {
            acc += v;
        }
        let tracked = self.tracked_any(&[input]);
        self.push(Tensor::scalar(acc), tracked, Op::Sum { input })
    }

    pub fn reshape(&mut self, input: TensorId, new_shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = new_shape.iter().product();
        if numel != self.value(input).numel() {
            return Err(Error::shape_mismatch("reshape", self.value(input).numel(), numel));
        }
        let data = self.data(input).to_vec();
        let tracked = self.tracked_any(&[input]);
        Ok(self.push(Tensor::new(new_shape, data)?, tracked, Op::Reshape { input }))
    }

    fn grad_buf(&mut self, id: TensorId) -> &mut Vec<f32> {
        let numel = self.nodes[id.0].value.numel();
        self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; numel])
    }

    /// Reverse pass from a scalar loss. Populates `grad` on every tracked
    /// node reachable from the loss.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.tracked {
            return Err(Error::InvalidArgument(
                "backward on an untracked tensor (no tracked leaves feed it)".into(),
            ));
        }
        self.grad_buf(loss)[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracked || self.nodes[i].grad.is_none() {
                continue;
            }
            let grad_out = self.nodes[i].grad.take().unwrap();
            self.step_backward(i, &grad_out)?;
            self.nodes[i].grad = Some(grad_out);
        }
        Ok(())
    }

    fn wants(&self, id: TensorId) -> bool {
        self.nodes[id.0].tracked
    }

    /// Take the grad buffer of `id` out (creating it if absent), so kernels
    /// can accumulate into it without aliasing `self`.
    fn take_grad(&mut self, id: TensorId) -> Vec<f32> {
        let numel = self.nodes[id.0].value.numel();
        self.nodes[id.0]
            .grad
            .take()
            .unwrap_or_else(|| vec![0.0; numel])
    }

    fn put_grad(&mut self, id: TensorId, g: Vec<f32>) {
        self.nodes[id.0].grad = Some(g);
    }

    fn step_backward(&mut self, i: usize, grad_out: &[f32]) -> Result<()> {
        // The op is moved out and back to satisfy the borrow checker.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv3d {
                input,
                weight,
                bias,
                padding,
                stride,
                dilation,
            } => {
                let in_shape = self.shape5(*input, "conv3d")?;
                let w_shape = self.shape5(*weight, "conv3d")?;
                let out_shape = {
                    let s = self.nodes[i].value.shape();
                    [s[0], s[1], s[2], s[3], s[4]]
                };
                let mut gi = self.wants(*input).then(|| self.take_grad(*input));
                let mut gw = self.wants(*weight).then(|| self.take_grad(*weight));
                let mut gb = self.wants(*bias).then(|| self.take_grad(*bias));
                ops::conv3d_backward(
                    self.data(*input),
                    &in_shape,
                    self.data(*weight),
                    &w_shape,
                    *padding,
                    *stride,
                    *dilation,
                    grad_out,
                    &out_shape,
                    gi.as_mut(),
                    gw.as_mut(),
                    gb.as_mut(),
                );
                if let Some(g) = gi {
                    self.put_grad(*input, g);
                }
                if let Some(g) = gw {
                    self.put_grad(*weight, g);
                }
                if let Some(g) = gb {
                    self.put_grad(*bias, g);
                }
            }
            Op::MaxPool3d { input, argmax } => {
                if self.wants(*input) {
                    let mut gi = self.take_grad(*input);
                    for (o, &src) in argmax.iter().enumerate() {
                        gi[src] += grad_out[o];
                    }
                    self.put_grad(*input, gi);
                }
            }
            Op::InstanceNorm3d {
                input,
                gamma,
                beta,
                stats,
            } => {
                let in_shape = self.shape5(*input, "instance_norm3d")?;
                let mut gi = self.wants(*input).then(|| self.take_grad(*input));
                let mut gg = self.wants(*gamma).then(|| self.take_grad(*gamma));
                let mut gb = self.wants(*beta).then(|| self.take_grad(*beta));
                ops::instance_norm3d_backward(
                    self.data(*input),
                    &in_shape,
                    self.data(*gamma),
                    stats,
                    grad_out,
                    gi.as_mut(),
                    gg.as_mut(),
                    gb.as_mut(),
                );
                if let Some(g) = gi {
                    self.put_grad(*input, g);
                }
                if let Some(g) = gg {
                    self.put_grad(*gamma, g);
                }
                if let Some(g) = gb {
                    self.put_grad(*beta, g);
                }
            }
            Op::Relu { input } => {
                if self.wants(*input) {
                    let mut gi = self.take_grad(*input);
                    let x = self.data(*input);
                    for j in 0..gi.len() {
                        if x[j] > 0.0 {
                            gi[j] += grad_out[j];
                        }
                    }
                    self.put_grad(*input, gi);
                }
            }
            Op::Linear { input, weight, bias } => {
                let (n, f_in) = {
                    let s = self.shape(*input);
                    (s[0], s[1])
                };
                let f_out = self.shape(*weight)[0];
                let mut gi = self.wants(*input).then(|| self.take_grad(*input));
                let mut gw = self.wants(*weight).then(|| self.take_grad(*weight));
                let mut gb = self.wants(*bias).then(|| self.take_grad(*bias));
                ops::linear_backward(
                    self.data(*input),
                    n,
                    f_in,
                    self.data(*weight),
                    f_out,
                    grad_out,
                    gi.as_mut(),
                    gw.as_mut(),
                    gb.as_mut(),
                );
                if let Some(g) = gi {
                    self.put_grad(*input, g);
                }
                if let Some(g) = gw {
                    self.put_grad(*weight, g);
                }
                if let Some(g) = gb {
                    self.put_grad(*bias, g);
                }
            }
            Op::Softmax { input } => {
                if self.wants(*input) {
                    let (n, classes) = {
                        let s = self.shape(*input);
                        (s[0], s[1])
                    };
                    let p = self.nodes[i].value.data().to_vec();
                    let mut gi = self.take_grad(*input);
                    for r in 0..n {
                        let pr = &p[r * classes..(r + 1) * classes];
                        let gr = &grad_out[r * classes..(r + 1) * classes];
                        let dot: f32 = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for c in 0..classes {
                            gi[r * classes + c] += pr[c] * (gr[c] - dot);
                        }
                    }
                    self.put_grad(*input, gi);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
            } => {
                if self.wants(*logits) {
                    let n = targets.len();
                    let scale = grad_out[0] / n as f32;
                    let mut gi = self.take_grad(*logits);
                    for r in 0..n {
                        for c in 0..3 {
                            let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                            gi[r * 3 + c] += scale * (probs[r * 3 + c] - onehot);
                        }
                    }
                    self.put_grad(*logits, gi);
                }
            }
            Op::Add { a, b } => {
                for &side in &[*a, *b] {
                    if self.wants(side) {
                        let mut g = self.take_grad(side);
                        for j in 0..g.len() {
                            g[j] += grad_out[j];
                        }
                        self.put_grad(side, g);
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.wants(*a) {
                    let other = self.data(*b).to_vec();
                    let mut g = self.take_grad(*a);
                    for j in 0..g.len() {
                        g[j] += grad_out[j] * other[j];
                    }
                    self.put_grad(*a, g);
                }
                if self.wants(*b) {
                    let other = self.data(*a).to_vec();
                    let mut g = self.take_grad(*b);
                    for j in 0..g.len() {
                        g[j] += grad_out[j] * other[j];
                    }
                    self.put_grad(*b, g);
                }
            }
            Op::Concat { a, b, width_a } => {
                let n = self.shape(*a)[0];
                let fb = self.shape(*b)[1];
                let ftot = width_a + fb;
                if self.wants(*a) {
                    let mut g = self.take_grad(*a);
                    for r in 0..n {
                        for c in 0..*width_a {
                            g[r * width_a + c] += grad_out[r * ftot + c];
                        }
                    }
                    self.put_grad(*a, g);
                }
                if self.wants(*b) {
                    let mut g = self.take_grad(*b);
                    for r in 0..n {
                        for c in 0..fb {
                            g[r * fb + c] += grad_out[r * ftot + width_a + c];
                        }
                    }
                    self.put_grad(*b, g);
                }
            }
            Op::Sum { input } => {
                if self.wants(*input) {
                    let mut g = self.take_grad(*input);
                    for v in g.iter_mut() {
                        *v += grad_out[0];
                    }
                    self.put_grad(*input, g);
                }
            }
            Op::Reshape { input } => {
                if self.wants(*input) {
                    let mut g = self.take_grad(*input);
                    for j in 0..g.len() {
                        g[j] += grad_out[j];
                    }
                    self.put_grad(*input, g);
                }
            }
        }
        self.nodes[i].op = op;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn scalar_conv_is_affine() {
        // 1x1x1x1x1 input v, weight w, bias b, k=1 -> v*w + b
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 1, 1, 1], &[2.0]), false);
        let w = tape.leaf(t(&[1, 1, 1, 1, 1], &[3.0]), false);
        let b = tape.leaf(t(&[1], &[5.0]), false);
        let y = tape.conv3d(x, w, b, 0, 1, 1).unwrap();
        assert_eq!(tape.data(y), &[11.0]);
    }

    #[test]
    fn conv_channel_mismatch_diagnostic_names_both_shapes() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 2, 4, 4, 4]), false);
        let w = tape.leaf(Tensor::zeros(vec![3, 1, 1, 1, 1]), false);
        let b = tape.leaf(Tensor::zeros(vec![3]), false);
        let err = tape.conv3d(x, w, b, 0, 1, 1).unwrap_err().to_string();
        assert!(err.contains("[3, 1, 1, 1, 1]") && err.contains("[1, 2, 4, 4, 4]"), "{err}");
    }

    #[test]
    fn relu_values_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]), true);
        let y = tape.relu(x);
        assert_eq!(tape.data(y), &[0.0, 0.0, 2.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[-1.0, 2.0]), true);
        let y = tape.relu(x);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative_is_all_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &[-3.0, -0.5, -1e-6, -100.0]), false);
        let y = tape.relu(x);
        assert!(tape.data(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_hand_arithmetic() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[1.0, 2.0]), false);
        let w = tape.leaf(t(&[1, 2], &[3.0, 4.0]), false);
        let b = tape.leaf(t(&[1], &[5.0]), false);
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.data(y), &[16.0]);
    }

    #[test]
    fn linear_identity_weight_passthrough() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let w = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
        let b = tape.leaf(Tensor::zeros(vec![2]), false);
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.data(y), tape.data(x));
    }

    #[test]
    fn linear_dimension_mismatch_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 3]), false);
        let w = tape.leaf(Tensor::zeros(vec![2, 4]), false);
        let b = tape.leaf(Tensor::zeros(vec![2]), false);
        assert!(tape.linear(x, w, b).is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut tape = Tape::new();
        let logits = tape.leaf(t(&[1, 3], &[0.5, 0.5, 0.5]), false);
        let (loss, _) = tape.softmax_cross_entropy(logits, &[1]).unwrap();
        assert!((tape.data(loss)[0] - 3.0f32.ln()).abs() < 1e-6);

        let mut tape = Tape::new();
        let logits = tape.leaf(t(&[1, 3], &[30.0, -30.0, -30.0]), false);
        let (loss, _) = tape.softmax_cross_entropy(logits, &[0]).unwrap();
        assert!(tape.data(loss)[0] < 1e-6);
    }

    #[test]
    fn cross_entropy_direct_evaluation() {
        // logits [1,2,3], target 2 -> -ln(e^3 / (e+e^2+e^3)) ~= 0.4076
        let mut tape = Tape::new();
        let logits = tape.leaf(t(&[1, 3], &[1.0, 2.0, 3.0]), false);
        let (loss, probs) = tape.softmax_cross_entropy(logits, &[2]).unwrap();
        let expected = -((3.0f64.exp()) / (1.0f64.exp() + 2.0f64.exp() + 3.0f64.exp())).ln();
        assert!((tape.data(loss)[0] as f64 - expected).abs() < 1e-6);
        let row_sum: f32 = probs.data().iter().sum();
        assert!((row_sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(vec![1, 3]), false);
        assert!(tape.softmax_cross_entropy(logits, &[3]).is_err());
    }

    #[test]
    fn backward_sum_and_square() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1.0, -1.0, 0.5, 3.0]), true);
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, -2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn backward_on_untracked_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), false);
        let loss = tape.sum(x);
        assert!(tape.backward(loss).is_err());
    }

    #[test]
    fn backward_on_non_scalar_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let y = tape.relu(x);
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn add_and_concat_basics() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[1.0, 2.0]), false);
        let b = tape.leaf(t(&[2], &[3.0, 4.0]), false);
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.data(s), &[4.0, 6.0]);

        let z = tape.leaf(Tensor::zeros(vec![2]), false);
        let s2 = tape.add(a, z).unwrap();
        assert_eq!(tape.data(s2), tape.data(a));

        let a2 = tape.leaf(t(&[1, 2], &[1.0, 2.0]), false);
        let b2 = tape.leaf(t(&[1, 2], &[3.0, 4.0]), false);
        let c = tape.concat(a2, b2).unwrap();
        assert_eq!(tape.shape(c), &[1, 4]);
        assert_eq!(tape.data(c), &[1.0, 2.0, 3.0, 4.0]);

        let bad = tape.leaf(Tensor::zeros(vec![3]), false);
        assert!(tape.add(a, bad).is_err());
    }

    #[test]
    fn maxpool_routes_gradient_to_first_argmax_on_ties() {
        let mut tape = Tape::new();
        // 1x1x1x1x4 input, pool k=2 s=2: windows [5,5] and [1,3]
        let x = tape.leaf(t(&[1, 1, 1, 1, 4], &[5.0, 5.0, 1.0, 3.0]), true);
        let y = tape.maxpool3d(x, 1, 1).unwrap(); // identity pool to exercise path
        assert_eq!(tape.data(y), tape.data(x));

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 2, 2, 2], &[7.0, 7.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let y = tape.maxpool3d(x, 2, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1, 1]);
        assert_eq!(tape.data(y), &[7.0]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        // tie between positions 0 and 1: first in row-major order wins
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_window_larger_than_extent_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 1, 2, 2, 2]), false);
        assert!(tape.maxpool3d(x, 3, 2).is_err());
    }

    #[test]
    fn instance_norm_constant_channel_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 1, 2, 2], &[4.0; 4]), false);
        let g = tape.leaf(t(&[1], &[1.0]), false);
        let b = tape.leaf(t(&[1], &[0.0]), false);
        let y = tape.instance_norm3d(x, g, b, 1e-5).unwrap();
        assert!(tape.data(y).iter().all(|&v| v.abs() < 1e-2));
    }

    #[test]
    fn instance_norm_already_standardized() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 1, 1, 2], &[-1.0, 1.0]), false);
        let g = tape.leaf(t(&[1], &[1.0]), false);
        let b = tape.leaf(t(&[1], &[0.0]), false);
        let y = tape.instance_norm3d(x, g, b, 0.0).unwrap();
        assert!((tape.data(y)[0] + 1.0).abs() < 1e-6);
        assert!((tape.data(y)[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn instance_norm_standardizes_random_input() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let shape = vec![2, 2, 4, 4, 4];
        let data: Vec<f32> = (0..2 * 2 * 64).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(shape, data).unwrap(), false);
        let g = tape.leaf(t(&[2], &[1.0, 1.0]), false);
        let b = tape.leaf(t(&[2], &[0.0, 0.0]), false);
        let y = tape.instance_norm3d(x, g, b, 1e-5).unwrap();
        let out = tape.data(y);
        for n in 0..2 {
            for c in 0..2 {
                let s = &out[(n * 2 + c) * 64..(n * 2 + c + 1) * 64];
                let mean: f32 = s.iter().sum::<f32>() / 64.0;
                let var: f32 = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / 64.0;
                assert!(mean.abs() < 1e-5, "mean {mean}");
                assert!((var - 1.0).abs() < 1e-3, "var {var}");
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let data: Vec<f32> = (0..12).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![4, 3], data).unwrap(), false);
            let y = tape.softmax(x).unwrap();
            for r in 0..4 {
                let s: f32 = tape.data(y)[r * 3..(r + 1) * 3].iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn conv_linearity_in_input() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x_data: Vec<f32> = (0..2 * 125).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w_data: Vec<f32> = (0..3 * 2 * 27).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = 2.5f32;

        let run = |scale: f32| -> Vec<f32> {
            let scaled: Vec<f32> = x_data.iter().map(|&v| v * scale).collect();
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![1, 2, 5, 5, 5], scaled).unwrap(), false);
            let w = tape.leaf(Tensor::new(vec![3, 2, 3, 3, 3], w_data.clone()).unwrap(), false);
            let b = tape.leaf(Tensor::zeros(vec![3]), false);
            let y = tape.conv3d(x, w, b, 1, 1, 2).unwrap();
            tape.data(y).to_vec()
        };
        let y1 = run(1.0);
        let ya = run(alpha);
        for (a, b) in y1.iter().zip(&ya) {
            let expect = a * alpha;
            assert!((b - expect).abs() <= 1e-5 * expect.abs().max(1e-3), "{b} vs {expect}");
        }
    }

    #[test]
    fn backward_is_deterministic() {
        use rand::{Rng, SeedableRng};
        let run = || -> Vec<f32> {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
            let x_data: Vec<f32> = (0..2 * 216).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w_data: Vec<f32> = (0..4 * 2 * 27).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![1, 2, 6, 6, 6], x_data).unwrap(), false);
            let w = tape.leaf(Tensor::new(vec![4, 2, 3, 3, 3], w_data).unwrap(), true);
            let b = tape.leaf(Tensor::zeros(vec![4]), true);
            let y = tape.conv3d(x, w, b, 0, 1, 1).unwrap();
            let r = tape.relu(y);
            let p = tape.maxpool3d(r, 2, 2).unwrap();
            let loss = tape.sum(p);
            tape.backward(loss).unwrap();
            let mut g = tape.grad(w).unwrap().to_vec();
            g.extend_from_slice(tape.grad(b).unwrap());
            g
        };
        let g1 = run();
        let g2 = run();
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
