//! Independent f64 reference implementations of every layer plus
//! central-finite-difference utilities. Deliberately written in the naive
//! bounds-checked style (no loop-reordering tricks) so they share no code
//! with the production kernels.

#![allow(dead_code)]

use nfuse::arch::NetworkSpec;

/// out_extent for conv; mirrors the standard formula.
pub fn conv_out(inp: usize, k: usize, pad: usize, stride: usize, dil: usize) -> usize {
    (inp + 2 * pad - dil * (k - 1) - 1) / stride + 1
}

pub fn pool_out(inp: usize, k: usize, stride: usize) -> usize {
    (inp - k) / stride + 1
}

fn at5(c1: usize, c2: usize, c3: usize, c4: usize, s: &[usize; 5], n: usize) -> usize {
    (((n * s[1] + c1) * s[2] + c2) * s[3] + c3) * s[4] + c4
}

/// Cross-correlation with zero padding; input [N,Ci,D,H,W], weight
/// [Co,Ci,k,k,k]. Returns (output, output shape).
#[allow(clippy::too_many_arguments)]
pub fn ref_conv3d(
    input: &[f64],
    in_shape: [usize; 5],
    weight: &[f64],
    w_shape: [usize; 5],
    bias: &[f64],
    pad: usize,
    stride: usize,
    dil: usize,
) -> (Vec<f64>, [usize; 5]) {
    let [n_batch, c_in, id, ih, iw] = in_shape;
    let [c_out, _, k, _, _] = w_shape;
    let od = conv_out(id, k, pad, stride, dil);
    let oh = conv_out(ih, k, pad, stride, dil);
    let ow = conv_out(iw, k, pad, stride, dil);
    let out_shape = [n_batch, c_out, od, oh, ow];
    let mut out = vec![0.0; n_batch * c_out * od * oh * ow];
    let mut idx = 0;
    for n in 0..n_batch {
        for co in 0..c_out {
            for z in 0..od {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = bias[co];
                        for ci in 0..c_in {
                            for kd in 0..k {
                                let zi = (z * stride + kd * dil) as isize - pad as isize;
                                if zi < 0 || zi >= id as isize {
                                    continue;
                                }
                                for kh in 0..k {
                                    let yi = (y * stride + kh * dil) as isize - pad as isize;
                                    if yi < 0 || yi >= ih as isize {
                                        continue;
                                    }
                                    for kw in 0..k {
                                        let xi =
                                            (x * stride + kw * dil) as isize - pad as isize;
                                        if xi < 0 || xi >= iw as isize {
                                            continue;
                                        }
                                        let iv = input[at5(
                                            ci,
                                            zi as usize,
                                            yi as usize,
                                            xi as usize,
                                            &in_shape,
                                            n,
                                        )];
                                        let wv = weight[at5(ci, kd, kh, kw, &w_shape, co)];
                                        acc += iv * wv;
                                    }
                                }
                            }
                        }
                        out[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
    }
    (out, out_shape)
}

pub fn ref_maxpool3d(
    input: &[f64],
    in_shape: [usize; 5],
    k: usize,
    stride: usize,
) -> (Vec<f64>, [usize; 5]) {
    let [n_batch, c, id, ih, iw] = in_shape;
    let od = pool_out(id, k, stride);
    let oh = pool_out(ih, k, stride);
    let ow = pool_out(iw, k, stride);
    let out_shape = [n_batch, c, od, oh, ow];
    let mut out = Vec::with_capacity(n_batch * c * od * oh * ow);
    for n in 0..n_batch {
        for ci in 0..c {
            for z in 0..od {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut m = f64::NEG_INFINITY;
                        for kd in 0..k {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let v = input[at5(
                                        ci,
                                        z * stride + kd,
                                        y * stride + kh,
                                        x * stride + kw,
                                        &in_shape,
                                        n,
                                    )];
                                    if v > m {
                                        m = v;
                                    }
                                }
                            }
                        }
                        out.push(m);
                    }
                }
            }
        }
    }
    (out, out_shape)
}

/// Per-(sample, channel) normalization with biased variance.
pub fn ref_instance_norm3d(
    input: &[f64],
    in_shape: [usize; 5],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Vec<f64> {
    let [n_batch, c, d, h, w] = in_shape;
    let m = d * h * w;
    let mut out = vec![0.0; input.len()];
    for n in 0..n_batch {
        for ci in 0..c {
            let base = at5(ci, 0, 0, 0, &in_shape, n);
            let slice = &input[base..base + m];
            let mean: f64 = slice.iter().sum::<f64>() / m as f64;
            let var: f64 = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for i in 0..m {
                out[base + i] = gamma[ci] * (slice[i] - mean) * inv + beta[ci];
            }
        }
    }
    out
}

pub fn ref_relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// y = x W^T + b with x [N, In], W [Out, In].
pub fn ref_linear(x: &[f64], n: usize, w: &[f64], out_dim: usize, in_dim: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * out_dim];
    for i in 0..n {
        for o in 0..out_dim {
            let mut acc = b[o];
            for j in 0..in_dim {
                acc += x[i * in_dim + j] * w[o * in_dim + j];
            }
            out[i * out_dim + o] = acc;
        }
    }
    out
}

pub fn ref_softmax_rows(logits: &[f64], n: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        let row = &logits[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for j in 0..c {
            let e = (row[j] - m).exp();
            out[i * c + j] = e;
            s += e;
        }
        for j in 0..c {
            out[i * c + j] /= s;
        }
    }
    out
}

/// Mean cross-entropy of softmaxed logits against class indices.
pub fn ref_softmax_ce(logits: &[f64], n: usize, c: usize, targets: &[usize]) -> f64 {
    let probs = ref_softmax_rows(logits, n, c);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        loss -= probs[i * c + t].ln();
    }
    loss / n as f64
}

/// Full-network scalar loss in f64, mirroring the production forward:
/// 4 x (conv, instance norm, relu, maxpool), flatten, fc1+relu, fc2, mean CE.
/// `params` are the network parameters in declaration order, as f64.
pub fn ref_network_loss(
    spec: &NetworkSpec,
    params: &[Vec<f64>],
    input: &[f64],
    in_shape: [usize; 5],
    targets: &[usize],
    eps: f64,
) -> f64 {
    let mut x = input.to_vec();
    let mut shape = in_shape;
    let mut pi = 0;
    let mut c_in = shape[1];
    for b in &spec.blocks {
        let w_shape = [b.channels, c_in, b.conv_k, b.conv_k, b.conv_k];
        let (conv, conv_shape) = ref_conv3d(
            &x, shape, &params[pi], w_shape, &params[pi + 1], b.padding, b.stride, b.dilation,
        );
        let normed = ref_instance_norm3d(&conv, conv_shape, &params[pi + 2], &params[pi + 3], eps);
        let active = ref_relu(&normed);
        let (pooled, pooled_shape) = ref_maxpool3d(&active, conv_shape, b.pool_k, b.pool_stride);
        x = pooled;
        shape = pooled_shape;
        c_in = b.channels;
        pi += 4;
    }
    let n = shape[0];
    let flat = shape[1] * shape[2] * shape[3] * shape[4];
    let enc_dim = params[pi].len() / flat;
    let fc1 = ref_linear(&x, n, &params[pi], enc_dim, flat, &params[pi + 1]);
    let enc = ref_relu(&fc1);
    let classes = params[pi + 3].len();
    let logits = ref_linear(&enc, n, &params[pi + 2], classes, enc_dim, &params[pi + 3]);
    ref_softmax_ce(&logits, n, classes, targets)
}

/// Central finite difference d loss / d params[pi][ei] with step h.
pub fn central_fd(
    mut loss: impl FnMut(&[Vec<f64>]) -> f64,
    params: &[Vec<f64>],
    pi: usize,
    ei: usize,
    h: f64,
) -> f64 {
    let mut p = params.to_vec();
    let orig = p[pi][ei];
    p[pi][ei] = orig + h;
    let plus = loss(&p);
    p[pi][ei] = orig - h;
    let minus = loss(&p);
    (plus - minus) / (2.0 * h)
}

/// Relative error with a magnitude floor so near-zero entries compare on
/// an absolute scale.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// True when `v` is within `margin` of a ReLU/max kink (used to resample
/// inputs so the FD step never crosses a nondifferentiable point).
pub fn near_kink(v: f64, margin: f64) -> bool {
    v.abs() < margin
}
