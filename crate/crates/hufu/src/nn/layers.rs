//! Layer definitions and their forward/backward kernels.
//!
//! Reduction order in conv and fully-connected layers is fixed (innermost:
//! kernel column, kernel row, then input channel, ascending) so results are
//! reproducible across runs and machines. The integer simulator mirrors the
//! same order.

use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// One layer of a sequential CNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kernel_w: usize,
        kernel_h: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        zero_pad: usize,
        #[serde(default)]
        bias: bool,
    },
    BatchNorm {
        channels: usize,
        momentum: f64,
        epsilon: f64,
    },
    Relu,
    AvgPool {
        window: usize,
        stride: usize,
    },
    FullyConnected {
        n_in: usize,
        n_out: usize,
    },
    /// Terminal marker: the network emits logits and the softmax
    /// cross-entropy loss consumes them.
    SoftmaxCe,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm { .. } => "bn",
            LayerSpec::Relu => "relu",
            LayerSpec::AvgPool { .. } => "pool",
            LayerSpec::FullyConnected { .. } => "fc",
            LayerSpec::SoftmaxCe => "softmax_ce",
        }
    }
}

/// [N, C, H, W] output dims for a conv with the given geometry.
pub fn conv_out_dims(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> (usize, usize) {
    ((h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1)
}

/// Valid output range [lo, hi) along one axis for a fixed kernel offset:
/// positions where in = out*stride + k - pad lands inside [0, extent).
fn tap_range(out_len: usize, extent: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if extent + pad > k {
        (((extent + pad - k - 1) / stride) + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Convolution forward. Input [N,CI,H,W], weight [CO,CI,KH,KW], output
/// [N,CO,OH,OW]. Per output element, accumulation starts at the bias and
/// adds products with kw innermost, then kh, then ci; the loop nest hoists
/// the output coordinates inward so the innermost walk is contiguous, but
/// each output's addition sequence is exactly that fixed order.
pub fn conv_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let [n, ci, h, w]: [usize; 4] = input.shape().try_into().expect("conv input rank 4");
    let [co, ci_w, kh, kw]: [usize; 4] = weight.shape().try_into().expect("conv weight rank 4");
    debug_assert_eq!(ci, ci_w);
    let (oh, ow) = conv_out_dims(h, w, kh, kw, stride, pad);

    let x = input.data();
    let wt = weight.data();
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    let o = out.data_mut();

    for in_idx in 0..n {
        let x_img = &x[in_idx * ci * h * w..(in_idx + 1) * ci * h * w];
        for f in 0..co {
            let out_plane = &mut o[((in_idx * co + f) * oh) * ow..((in_idx * co + f) * oh + oh) * ow];
            if let Some(bt) = bias {
                out_plane.fill(bt.data()[f]);
            }
            let w_f = &wt[f * ci * kh * kw..(f + 1) * ci * kh * kw];
            for c in 0..ci {
                let x_ch = &x_img[c * h * w..(c + 1) * h * w];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = tap_range(oh, h, ky, stride, pad);
                    for kx in 0..kw {
                        let wv = w_f[(c * kh + ky) * kw + kx];
                        let (ox_lo, ox_hi) = tap_range(ow, w, kx, stride, pad);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let ix0 = ox_lo * stride + kx - pad;
                            let out_row = &mut out_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                            if stride == 1 {
                                let x_row = &x_ch[iy * w + ix0..iy * w + ix0 + out_row.len()];
                                for (ov, &xv) in out_row.iter_mut().zip(x_row) {
                                    *ov += wv * xv;
                                }
                            } else {
                                let x_row = &x_ch[iy * w..(iy + 1) * w];
                                for (j, ov) in out_row.iter_mut().enumerate() {
                                    *ov += wv * x_row[ix0 + j * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Convolution backward: gradients w.r.t. input, weight, and bias.
pub fn conv_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    has_bias: bool,
    grad_out: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> (Tensor<S>, Tensor<S>, Option<Tensor<S>>) {
    let [n, ci, h, w]: [usize; 4] = input.shape().try_into().unwrap();
    let [co, _, kh, kw]: [usize; 4] = weight.shape().try_into().unwrap();
    let [_, _, oh, ow]: [usize; 4] = grad_out.shape().try_into().unwrap();

    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();

    let mut gx = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = has_bias.then(|| Tensor::<S>::zeros(&[co]));

    let gx_d = gx.data_mut();
    let gw_d = gw.data_mut();

    for in_idx in 0..n {
        let x_img = &x[in_idx * ci * h * w..(in_idx + 1) * ci * h * w];
        let gx_img = &mut gx_d[in_idx * ci * h * w..(in_idx + 1) * ci * h * w];
        for f in 0..co {
            let g_plane = &g[((in_idx * co + f) * oh) * ow..((in_idx * co + f) * oh + oh) * ow];
            if let Some(b) = gb.as_mut() {
                let mut acc = b.data()[f];
                for &gv in g_plane {
                    acc += gv;
                }
                b.data_mut()[f] = acc;
            }
            for c in 0..ci {
                let x_ch = &x_img[c * h * w..(c + 1) * h * w];
                let gx_ch = &mut gx_img[c * h * w..(c + 1) * h * w];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = tap_range(oh, h, ky, stride, pad);
                    for kx in 0..kw {
                        let wi = ((f * ci + c) * kh + ky) * kw + kx;
                        let wv = wt[wi];
                        let (ox_lo, ox_hi) = tap_range(ow, w, kx, stride, pad);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        // Deterministic 8-lane accumulator for the weight
                        // gradient so the reduction vectorizes.
                        let mut lanes = [S::ZERO; 8];
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let ix0 = ox_lo * stride + kx - pad;
                            let g_row = &g_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                            if stride == 1 {
                                let x_row = &x_ch[iy * w + ix0..iy * w + ix0 + g_row.len()];
                                let gx_row = &mut gx_ch[iy * w + ix0..iy * w + ix0 + g_row.len()];
                                let chunks = g_row.len() / 8;
                                for ch in 0..chunks {
                                    for j in 0..8 {
                                        let idx = ch * 8 + j;
                                        lanes[j] += g_row[idx] * x_row[idx];
                                    }
                                }
                                for idx in chunks * 8..g_row.len() {
                                    lanes[0] += g_row[idx] * x_row[idx];
                                }
                                for (gxv, &gv) in gx_row.iter_mut().zip(g_row) {
                                    *gxv += wv * gv;
                                }
                            } else {
                                for (j, &gv) in g_row.iter().enumerate() {
                                    let ix = ix0 + j * stride;
                                    lanes[0] += gv * x_row_at(x_ch, iy, w, ix);
                                    gx_ch[iy * w + ix] += wv * gv;
                                }
                            }
                        }
                        let mut acc = gw_d[wi];
                        for lane in lanes {
                            acc += lane;
                        }
                        gw_d[wi] = acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

#[inline]
fn x_row_at<S: Scalar>(x_ch: &[S], iy: usize, w: usize, ix: usize) -> S {
    x_ch[iy * w + ix]
}

/// Cached values from a batch-norm forward needed by its backward.
#[derive(Debug, Clone)]
pub struct BnCache<S> {
    /// Normalized activations (before gamma/beta).
    pub xhat: Tensor<S>,
    /// 1/sqrt(var + eps) per channel, for the statistics actually used.
    pub inv_std: Vec<S>,
    /// True when normalization used batch statistics.
    pub batch_stats: bool,
}

/// Batch-norm forward. `batch_stats = true` normalizes with the current
/// batch's per-channel mean/variance (biased) and returns updated running
/// statistics; `false` normalizes with the stored running statistics and
/// returns no update (frozen/eval behavior).
#[allow(clippy::too_many_arguments)]
pub fn bn_forward<S: Scalar>(
    input: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running_mean: &Tensor<S>,
    running_var: &Tensor<S>,
    momentum: f64,
    epsilon: f64,
    batch_stats: bool,
) -> (Tensor<S>, BnCache<S>, Option<(Tensor<S>, Tensor<S>)>) {
    let [n, c, h, w]: [usize; 4] = input.shape().try_into().expect("bn input rank 4");
    let x = input.data();
    let plane = h * w;
    let count = n * plane;
    let eps = S::from_f64(epsilon);

    let (mean, var): (Vec<S>, Vec<S>) = if batch_stats {
        let mut mean = vec![S::ZERO; c];
        let mut var = vec![S::ZERO; c];
        for ch in 0..c {
            let mut sum = S::ZERO;
            for in_idx in 0..n {
                let base = (in_idx * c + ch) * plane;
                for i in 0..plane {
                    sum += x[base + i];
                }
            }
            let m = sum / S::from_f64(count as f64);
            let mut sq = S::ZERO;
            for in_idx in 0..n {
                let base = (in_idx * c + ch) * plane;
                for i in 0..plane {
                    let d = x[base + i] - m;
                    sq += d * d;
                }
            }
            mean[ch] = m;
            var[ch] = sq / S::from_f64(count as f64);
        }
        (mean, var)
    } else {
        (running_mean.data().to_vec(), running_var.data().to_vec())
    };

    let inv_std: Vec<S> = var.iter().map(|&v| S::ONE / (v + eps).sqrt()).collect();

    let mut xhat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    {
        let xh = xhat.data_mut();
        let o = out.data_mut();
        for in_idx in 0..n {
            for ch in 0..c {
                let base = (in_idx * c + ch) * plane;
                let (m, is, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
                for i in 0..plane {
                    let v = (x[base + i] - m) * is;
                    xh[base + i] = v;
                    o[base + i] = g * v + b;
                }
            }
        }
    }

    let updates = batch_stats.then(|| {
        let mom = S::from_f64(momentum);
        let keep = S::ONE - mom;
        let new_mean: Vec<S> = running_mean
            .data()
            .iter()
            .zip(&mean)
            .map(|(&r, &b)| keep * r + mom * b)
            .collect();
        let new_var: Vec<S> = running_var
            .data()
            .iter()
            .zip(&var)
            .map(|(&r, &b)| keep * r + mom * b)
            .collect();
        (
            Tensor::from_vec(&[c], new_mean).unwrap(),
            Tensor::from_vec(&[c], new_var).unwrap(),
        )
    });

    (
        out,
        BnCache {
            xhat,
            inv_std,
            batch_stats,
        },
        updates,
    )
}

/// Batch-norm backward for both statistics modes.
pub fn bn_backward<S: Scalar>(
    cache: &BnCache<S>,
    gamma: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let [n, c, h, w]: [usize; 4] = grad_out.shape().try_into().unwrap();
    let plane = h * w;
    let count = n * plane;
    let g = grad_out.data();
    let xh = cache.xhat.data();

    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut dg = S::ZERO;
        let mut db = S::ZERO;
        for in_idx in 0..n {
            let base = (in_idx * c + ch) * plane;
            for i in 0..plane {
                dg += g[base + i] * xh[base + i];
                db += g[base + i];
            }
        }
        dgamma.data_mut()[ch] = dg;
        dbeta.data_mut()[ch] = db;
    }

    let mut dx = Tensor::zeros(grad_out.shape());
    let dxd = dx.data_mut();
    if cache.batch_stats {
        // Gradient through the batch statistics.
        let m = S::from_f64(count as f64);
        for ch in 0..c {
            let scale = gamma.data()[ch] * cache.inv_std[ch] / m;
            let (dg, db) = (dgamma.data()[ch], dbeta.data()[ch]);
            for in_idx in 0..n {
                let base = (in_idx * c + ch) * plane;
                for i in 0..plane {
                    dxd[base + i] = scale * (m * g[base + i] - db - xh[base + i] * dg);
                }
            }
        }
    } else {
        // Frozen statistics: a per-channel affine map.
        for ch in 0..c {
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            for in_idx in 0..n {
                let base = (in_idx * c + ch) * plane;
                for i in 0..plane {
                    dxd[base + i] = scale * g[base + i];
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_forward<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.maximum(S::ZERO);
    }
    out
}

pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let mut dx = grad_out.clone();
    for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
        if x <= S::ZERO {
            *d = S::ZERO;
        }
    }
    dx
}

pub fn avgpool_forward<S: Scalar>(input: &Tensor<S>, window: usize, stride: usize) -> Tensor<S> {
    let [n, c, h, w]: [usize; 4] = input.shape().try_into().expect("pool input rank 4");
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let area = S::from_f64((window * window) as f64);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let o = out.data_mut();
    for in_idx in 0..n {
        for ch in 0..c {
            let base = (in_idx * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = S::ZERO;
                    for ky in 0..window {
                        let row = base + (oy * stride + ky) * w + ox * stride;
                        for kx in 0..window {
                            acc += x[row + kx];
                        }
                    }
                    o[((in_idx * c + ch) * oh + oy) * ow + ox] = acc / area;
                }
            }
        }
    }
    out
}

pub fn avgpool_backward<S: Scalar>(
    input_shape: &[usize],
    window: usize,
    stride: usize,
    grad_out: &Tensor<S>,
) -> Tensor<S> {
    let [n, c, h, w]: [usize; 4] = input_shape.try_into().unwrap();
    let [_, _, oh, ow]: [usize; 4] = grad_out.shape().try_into().unwrap();
    let g = grad_out.data();
    let area = S::from_f64((window * window) as f64);
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for in_idx in 0..n {
        for ch in 0..c {
            let base = (in_idx * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = g[((in_idx * c + ch) * oh + oy) * ow + ox] / area;
                    for ky in 0..window {
                        let row = base + (oy * stride + ky) * w + ox * stride;
                        for kx in 0..window {
                            d[row + kx] += go;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Fully-connected forward: weight [OUT, IN], input flattened to [N, IN].
pub fn fc_forward<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Tensor<S> {
    let n = input.shape()[0];
    let n_in: usize = input.shape()[1..].iter().product();
    let [n_out, n_in_w]: [usize; 2] = weight.shape().try_into().expect("fc weight rank 2");
    debug_assert_eq!(n_in, n_in_w);
    let x = input.data();
    let wt = weight.data();
    let mut out = Tensor::zeros(&[n, n_out]);
    let o = out.data_mut();
    for in_idx in 0..n {
        let xi = &x[in_idx * n_in..(in_idx + 1) * n_in];
        for j in 0..n_out {
            let wr = &wt[j * n_in..(j + 1) * n_in];
            let mut acc = bias.data()[j];
            for (wv, xv) in wr.iter().zip(xi) {
                acc += *wv * *xv;
            }
            o[in_idx * n_out + j] = acc;
        }
    }
    out
}

pub fn fc_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let n = input.shape()[0];
    let n_in: usize = input.shape()[1..].iter().product();
    let [n_out, _]: [usize; 2] = weight.shape().try_into().unwrap();
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();

    let mut gx = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[n_out]);
    {
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        let gbd = gb.data_mut();
        for in_idx in 0..n {
            let xi = &x[in_idx * n_in..(in_idx + 1) * n_in];
            for j in 0..n_out {
                let go = g[in_idx * n_out + j];
                gbd[j] += go;
                let wr = &wt[j * n_in..(j + 1) * n_in];
                let gwr = &mut gwd[j * n_in..(j + 1) * n_in];
                for k in 0..n_in {
                    gwr[k] += go * xi[k];
                    gxd[in_idx * n_in + k] += go * wr[k];
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Row-wise softmax with max subtraction.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let [n, c]: [usize; 2] = logits.shape().try_into().expect("logits rank 2");
    let x = logits.data();
    let mut out = Tensor::zeros(&[n, c]);
    let o = out.data_mut();
    for i in 0..n {
        let row = &x[i * c..(i + 1) * c];
        let mut mx = row[0];
        for &v in row {
            mx = mx.maximum(v);
        }
        let mut sum = S::ZERO;
        for j in 0..c {
            let e = (row[j] - mx).exp();
            o[i * c + j] = e;
            sum += e;
        }
        for j in 0..c {
            o[i * c + j] = o[i * c + j] / sum;
        }
    }
    out
}
