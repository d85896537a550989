//! Forward and backward kernels. Single-threaded with fixed loop order, so
//! repeated runs on identical inputs are bitwise identical.

/// 5-d shape [N, C, D, H, W].
pub type Shape5 = [usize; 5];

#[inline]
fn idx5(s: &Shape5, n: usize, c: usize, d: usize, h: usize, w: usize) -> usize {
    (((n * s[1] + c) * s[2] + d) * s[3] + h) * s[4] + w
}

/// Valid output range [lo, hi) along one axis for a given kernel tap, so that
/// `ow * stride + tap_offset - padding` stays inside [0, in_extent).
#[inline]
fn tap_range(
    out_extent: usize,
    in_extent: usize,
    tap: usize,
    dilation: usize,
    padding: usize,
    stride: usize,
) -> (usize, usize, isize) {
    // input index = ow*stride + tap*dilation - padding
    let off = tap as isize * dilation as isize - padding as isize;
    let lo = if off < 0 {
        // need ow*stride >= -off
        let need = (-off) as usize;
        need.div_ceil(stride)
    } else {
        0
    };
    // need ow*stride + off <= in_extent - 1
    let max_in = in_extent as isize - 1 - off;
    let hi = if max_in < 0 {
        lo
    } else {
        (max_in as usize / stride + 1).min(out_extent)
    };
    (lo, hi.max(lo), off)
}

// the kernel geometry is irreducible: data, weights, bias, geometry, output
#[allow(clippy::too_many_arguments)]
pub fn conv3d_forward(
    input: &[f32],
    in_shape: &Shape5,
    weight: &[f32],
    w_shape: &Shape5, // [C_out, C_in, k, k, k]
    bias: &[f32],
    padding: usize,
    stride: usize,
    dilation: usize,
    out: &mut [f32],
    out_shape: &Shape5,
) {
    let [n_batch, c_in, _, ih, iw] = *in_shape;
    let [c_out, _, k, _, _] = *w_shape;
    let [_, _, od, oh, ow] = *out_shape;
    for n in 0..n_batch {
        for co in 0..c_out {
            let base = idx5(out_shape, n, co, 0, 0, 0);
            out[base..base + od * oh * ow].fill(bias[co]);
            for ci in 0..c_in {
                for kd in 0..k {
                    let (dlo, dhi, doff) = tap_range(od, in_shape[2], kd, dilation, padding, stride);
                    for kh in 0..k {
                        let (hlo, hhi, hoff) = tap_range(oh, ih, kh, dilation, padding, stride);
                        for kw in 0..k {
                            let (wlo, whi, woff) = tap_range(ow, iw, kw, dilation, padding, stride);
                            let wv = weight[idx5(w_shape, co, ci, kd, kh, kw)];
                            if wv == 0.0 {
                                continue;
                            }
                            for zo in dlo..dhi {
                                let zi = (zo * stride) as isize + doff;
                                for yo in hlo..hhi {
                                    let yi = (yo * stride) as isize + hoff;
                                    let orow = idx5(out_shape, n, co, zo, yo, wlo);
                                    let irow = idx5(
                                        in_shape,
                                        n,
                                        ci,
                                        zi as usize,
                                        yi as usize,
                                        wlo * stride,
                                    );
                                    let irow = (irow as isize + woff) as usize;
                                    if stride == 1 {
                                        let olen = whi - wlo;
                                        let (os, is) =
                                            (&mut out[orow..orow + olen], &input[irow..irow + olen]);
                                        for x in 0..olen {
                                            os[x] += wv * is[x];
                                        }
                                    } else {
                                        for x in 0..(whi - wlo) {
                                            out[orow + x] += wv * input[irow + x * stride];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv3d_backward(
    input: &[f32],
    in_shape: &Shape5,
    weight: &[f32],
    w_shape: &Shape5,
    padding: usize,
    stride: usize,
    dilation: usize,
    grad_out: &[f32],
    out_shape: &Shape5,
    grad_input: Option<&mut Vec<f32>>,
    grad_weight: Option<&mut Vec<f32>>,
    grad_bias: Option<&mut Vec<f32>>,
) {
    let [n_batch, c_in, _, ih, iw] = *in_shape;
    let [c_out, _, k, _, _] = *w_shape;
    let [_, _, od, oh, ow] = *out_shape;

    if let Some(gb) = grad_bias {
        for n in 0..n_batch {
            for (co, g) in gb.iter_mut().enumerate() {
                let base = idx5(out_shape, n, co, 0, 0, 0);
                let mut acc = 0.0f32;
                for v in &grad_out[base..base + od * oh * ow] {
                    acc += v;
                }
                *g += acc;
            }
        }
    }

    if let Some(gw) = grad_weight {
        for n in 0..n_batch {
            for co in 0..c_out {
                for ci in 0..c_in {
                    for kd in 0..k {
                        let (dlo, dhi, doff) =
                            tap_range(od, in_shape[2], kd, dilation, padding, stride);
                        for kh in 0..k {
                            let (hlo, hhi, hoff) = tap_range(oh, ih, kh, dilation, padding, stride);
                            for kw in 0..k {
                                let (wlo, whi, woff) = tap_range(ow, iw, kw, dilation, padding, stride);
                                let mut acc = 0.0f32;
                                for zo in dlo..dhi {
                                    let zi = ((zo * stride) as isize + doff) as usize;
                                    for yo in hlo..hhi {
                                        let yi = ((yo * stride) as isize + hoff) as usize;
                                        let orow = idx5(out_shape, n, co, zo, yo, wlo);
                                        let irow = (idx5(in_shape, n, ci, zi, yi, wlo * stride)
                                            as isize
                                            + woff) as usize;
                                        for x in 0..(whi - wlo) {
                                            acc += grad_out[orow + x] * input[irow + x * stride];
                                        }
                                    }
                                }
                                gw[idx5(w_shape, co, ci, kd, kh, kw)] += acc;
                            }
                        }
                    }
                }
            }
        }
    }

    if let Some(gi) = grad_input {
        for n in 0..n_batch {
            for co in 0..c_out {
                for ci in 0..c_in {
                    for kd in 0..k {
                        let (dlo, dhi, doff) =
                            tap_range(od, in_shape[2], kd, dilation, padding, stride);
                        for kh in 0..k {
                            let (hlo, hhi, hoff) = tap_range(oh, ih, kh, dilation, padding, stride);
                            for kw in 0..k {
                                let (wlo, whi, woff) = tap_range(ow, iw, kw, dilation, padding, stride);
                                let wv = weight[idx5(w_shape, co, ci, kd, kh, kw)];
                                if wv == 0.0 {
                                    continue;
                                }
                                for zo in dlo..dhi {
                                    let zi = ((zo * stride) as isize + doff) as usize;
                                    for yo in hlo..hhi {
                                        let yi = ((yo * stride) as isize + hoff) as usize;
                                        let orow = idx5(out_shape, n, co, zo, yo, wlo);
                                        let irow = (idx5(in_shape, n, ci, zi, yi, wlo * stride)
                                            as isize
                                            + woff) as usize;
                                        for x in 0..(whi - wlo) {
                                            gi[irow + x * stride] += wv * grad_out[orow + x];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Max pooling; fills `argmax` with the flat input index of each window max
/// (first maximal element in row-major order on ties).
pub fn maxpool3d_forward(
    input: &[f32],
    in_shape: &Shape5,
    k: usize,
    stride: usize,
    out: &mut [f32],
    out_shape: &Shape5,
    argmax: &mut [usize],
) {
    let [n_batch, channels, _, _, _] = *in_shape;
    let [_, _, od, oh, ow] = *out_shape;
    for n in 0..n_batch {
        for c in 0..channels {
            for zo in 0..od {
                for yo in 0..oh {
                    for xo in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for kd in 0..k {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let i = idx5(
                                        in_shape,
                                        n,
                                        c,
                                        zo * stride + kd,
                                        yo * stride + kh,
                                        xo * stride + kw,
                                    );
                                    if input[i] > best {
                                        best = input[i];
                                        best_idx = i;
                                    }
                                }
                            }
                        }
                        let o = idx5(out_shape, n, c, zo, yo, xo);
                        out[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
    }
}

/// Per (sample, channel) statistics over the spatial elements.
pub struct NormStats {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
}

pub fn instance_norm3d_forward(
    input: &[f32],
    in_shape: &Shape5,
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
    out: &mut [f32],
) -> NormStats {
    let [n_batch, channels, d, h, w] = *in_shape;
    let m = d * h * w;
    let mut mean = vec![0.0f32; n_batch * channels];
    let mut inv_std = vec![0.0f32; n_batch * channels];
    for n in 0..n_batch {
        for c in 0..channels {
            let base = idx5(in_shape, n, c, 0, 0, 0);
            let slice = &input[base..base + m];
            let mut sum = 0.0f32;
            for v in slice {
                sum += v;
            }
            let mu = sum / m as f32;
            let mut var = 0.0f32;
            for v in slice {
                let dv = v - mu;
                var += dv * dv;
            }
            let var = var / m as f32; // biased
            let istd = 1.0 / (var + eps).sqrt();
            mean[n * channels + c] = mu;
            inv_std[n * channels + c] = istd;
            let (g, b) = (gamma[c], beta[c]);
            let dst = &mut out[base..base + m];
            for (o, v) in dst.iter_mut().zip(slice) {
                *o = g * (v - mu) * istd + b;
            }
        }
    }
    NormStats { mean, inv_std }
}

#[allow(clippy::too_many_arguments)]
pub fn instance_norm3d_backward(
    input: &[f32],
    in_shape: &Shape5,
    gamma: &[f32],
    stats: &NormStats,
    grad_out: &[f32],
    grad_input: Option<&mut Vec<f32>>,
    grad_gamma: Option<&mut Vec<f32>>,
    grad_beta: Option<&mut Vec<f32>>,
) {
    let [n_batch, channels, d, h, w] = *in_shape;
    let m = d * h * w;
    let mut gi = grad_input;
    let mut gg = grad_gamma;
    let mut gb = grad_beta;
    for n in 0..n_batch {
        for c in 0..channels {
            let base = idx5(in_shape, n, c, 0, 0, 0);
            let x = &input[base..base + m];
            let dy = &grad_out[base..base + m];
            let mu = stats.mean[n * channels + c];
            let istd = stats.inv_std[n * channels + c];
            let mut sum_dy = 0.0f32;
            let mut sum_dy_xhat = 0.0f32;
            for i in 0..m {
                let xhat = (x[i] - mu) * istd;
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xhat;
            }
            if let Some(gg) = gg.as_deref_mut() {
                gg[c] += sum_dy_xhat;
            }
            if let Some(gb) = gb.as_deref_mut() {
                gb[c] += sum_dy;
            }
            if let Some(gi) = gi.as_deref_mut() {
                let mean_dy = sum_dy / m as f32;
                let mean_dy_xhat = sum_dy_xhat / m as f32;
                let scale = gamma[c] * istd;
                for i in 0..m {
                    let xhat = (x[i] - mu) * istd;
                    gi[base + i] += scale * (dy[i] - mean_dy - xhat * mean_dy_xhat);
                }
            }
        }
    }
}

/// y = x W^T + b for x: [N, F_in], w: [F_out, F_in].
pub fn linear_forward(
    input: &[f32],
    n: usize,
    f_in: usize,
    weight: &[f32],
    f_out: usize,
    bias: &[f32],
    out: &mut [f32],
) {
    for i in 0..n {
        let x = &input[i * f_in..(i + 1) * f_in];
        for o in 0..f_out {
            let wrow = &weight[o * f_in..(o + 1) * f_in];
            let mut acc = bias[o];
            for j in 0..f_in {
                acc += x[j] * wrow[j];
            }
            out[i * f_out + o] = acc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    input: &[f32],
    n: usize,
    f_in: usize,
    weight: &[f32],
    f_out: usize,
    grad_out: &[f32],
    grad_input: Option<&mut Vec<f32>>,
    grad_weight: Option<&mut Vec<f32>>,
    grad_bias: Option<&mut Vec<f32>>,
) {
    if let Some(gb) = grad_bias {
        for i in 0..n {
            for o in 0..f_out {
                gb[o] += grad_out[i * f_out + o];
            }
        }
    }
    if let Some(gw) = grad_weight {
        for i in 0..n {
            let x = &input[i * f_in..(i + 1) * f_in];
            for o in 0..f_out {
                let g = grad_out[i * f_out + o];
                if g == 0.0 {
                    continue;
                }
                let wrow = &mut gw[o * f_in..(o + 1) * f_in];
                for j in 0..f_in {
                    wrow[j] += g * x[j];
                }
            }
        }
    }
    if let Some(gi) = grad_input {
        for i in 0..n {
            let gx = &mut gi[i * f_in..(i + 1) * f_in];
            for o in 0..f_out {
                let g = grad_out[i * f_out + o];
                if g == 0.0 {
                    continue;
                }
                let wrow = &weight[o * f_in..(o + 1) * f_in];
                for j in 0..f_in {
                    gx[j] += g * wrow[j];
                }
            }
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &[f32], n: usize, classes: usize, out: &mut [f32]) {
    for i in 0..n {
        let row = &logits[i * classes..(i + 1) * classes];
        let mut mx = f32::NEG_INFINITY;
        for &v in row {
            mx = mx.max(v);
        }
        let dst = &mut out[i * classes..(i + 1) * classes];
        let mut sum = 0.0f32;
        for (o, &v) in dst.iter_mut().zip(row) {
            let e = (v - mx).exp();
            *o = e;
            sum += e;
        }
        for o in dst.iter_mut() {
            *o /= sum;
        }
    }
}
