//! Forward and backward passes of the fixed two-convolution network.
//!
//! conv(3->8, 3x3, pad 1) + ReLU + maxpool 2
//! conv(8->16, 3x3, pad 1) + ReLU + maxpool 2
//! flatten (16x8x8 = 1024) -> affine -> softmax

use super::ModelParams;
use crate::dataset::{CHANNELS, SIDE};

pub const CONV1_OUT: usize = 8;
pub const CONV2_OUT: usize = 16;
pub const KERNEL: usize = 3;
const SIDE2: usize = SIDE / 2;
const SIDE3: usize = SIDE / 4;
pub const FEATURES: usize = CONV2_OUT * SIDE3 * SIDE3;

/// Intermediate values kept for the backward pass.
pub(crate) struct Activations {
    conv1: Vec<f64>,
    pool1: Vec<f64>,
    arg1: Vec<usize>,
    conv2: Vec<f64>,
    pool2: Vec<f64>,
    arg2: Vec<usize>,
    pub probs: Vec<f64>,
}

/// Range of output coordinates whose tap at kernel offset `k` lands inside
/// the input (padding 1).
#[inline]
fn valid(k: usize, side: usize) -> (usize, usize) {
    (1usize.saturating_sub(k), (side + 1 - k).min(side))
}

fn conv_forward(
    input: &[f64],
    in_ch: usize,
    side: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
) -> Vec<f64> {
    let ss = side * side;
    let mut out = vec![0.0; out_ch * ss];
    for o in 0..out_ch {
        let plane = &mut out[o * ss..(o + 1) * ss];
        plane.fill(bias[o]);
        for i in 0..in_ch {
            let src = &input[i * ss..(i + 1) * ss];
            for ky in 0..KERNEL {
                let (y0, y1) = valid(ky, side);
                for kx in 0..KERNEL {
                    let w = weights[((o * in_ch + i) * KERNEL + ky) * KERNEL + kx];
                    let (x0, x1) = valid(kx, side);
                    for y in y0..y1 {
                        let dst = &mut plane[y * side + x0..y * side + x1];
                        let row = (y + ky - 1) * side;
                        let s = &src[row + x0 + kx - 1..row + x1 + kx - 1];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += w * v;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_ch: usize,
    side: usize,
    weights: &[f64],
    out_ch: usize,
    d_out: &[f64],
    mut grads: Option<(&mut [f64], &mut [f64])>,
    mut d_in: Option<&mut [f64]>,
) {
    let ss = side * side;
    for o in 0..out_ch {
        let g = &d_out[o * ss..(o + 1) * ss];
        if let Some((_, d_b)) = grads.as_mut() {
            d_b[o] += g.iter().sum::<f64>();
        }
        for i in 0..in_ch {
            let src = &input[i * ss..(i + 1) * ss];
            for ky in 0..KERNEL {
                let (y0, y1) = valid(ky, side);
                for kx in 0..KERNEL {
                    let widx = ((o * in_ch + i) * KERNEL + ky) * KERNEL + kx;
                    let (x0, x1) = valid(kx, side);
                    if let Some((d_w, _)) = grads.as_mut() {
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let row = (y + ky - 1) * side;
                            let gs = &g[y * side + x0..y * side + x1];
                            let s = &src[row + x0 + kx - 1..row + x1 + kx - 1];
                            acc += gs.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        }
                        d_w[widx] += acc;
                    }
                    if let Some(d_in) = d_in.as_mut() {
                        let w = weights[widx];
                        let plane = &mut d_in[i * ss..(i + 1) * ss];
                        for y in y0..y1 {
                            let row = (y + ky - 1) * side;
                            let gs = &g[y * side + x0..y * side + x1];
                            let d = &mut plane[row + x0 + kx - 1..row + x1 + kx - 1];
                            for (dv, &gv) in d.iter_mut().zip(gs) {
                                *dv += w * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// ReLU followed by 2x2 max pooling. Returns pooled values and, for each,
/// the index of the winning pre-activation (first maximum in scan order).
fn relu_pool(pre: &[f64], ch: usize, side: usize) -> (Vec<f64>, Vec<usize>) {
    let half = side / 2;
    let mut out = Vec::with_capacity(ch * half * half);
    let mut arg = Vec::with_capacity(ch * half * half);
    for c in 0..ch {
        let base = c * side * side;
        for y in 0..half {
            for x in 0..half {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * side + 2 * x + dx;
                    let v = pre[i].max(0.0);
                    if v > best {
                        best = v;
                        best_i = i;
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

fn relu_pool_backward(pre: &[f64], arg: &[usize], d_pooled: &[f64]) -> Vec<f64> {
    let mut d_pre = vec![0.0; pre.len()];
    for (&i, &g) in arg.iter().zip(d_pooled) {
        if pre[i] > 0.0 {
            d_pre[i] += g;
        }
    }
    d_pre
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn forward(params: &ModelParams, input: &[f64]) -> Activations {
    let conv1 = conv_forward(
        input,
        CHANNELS,
        SIDE,
        &params.conv1_w,
        &params.conv1_b,
        CONV1_OUT,
    );
    let (pool1, arg1) = relu_pool(&conv1, CONV1_OUT, SIDE);
    let conv2 = conv_forward(
        &pool1,
        CONV1_OUT,
        SIDE2,
        &params.conv2_w,
        &params.conv2_b,
        CONV2_OUT,
    );
    let (pool2, arg2) = relu_pool(&conv2, CONV2_OUT, SIDE2);
    let logits: Vec<f64> = params
        .fc_w
        .chunks_exact(FEATURES)
        .zip(&params.fc_b)
        .map(|(row, &b)| b + row.iter().zip(&pool2).map(|(w, f)| w * f).sum::<f64>())
        .collect();
    let probs = softmax(&logits);
    Activations {
        conv1,
        pool1,
        arg1,
        conv2,
        pool2,
        arg2,
        probs,
    }
}

/// Backpropagates `d_logits`. Parameter gradients are accumulated into
/// `grads` when given; the input gradient is returned when requested.
pub(crate) fn backward(
    params: &ModelParams,
    input: &[f64],
    act: &Activations,
    d_logits: &[f64],
    mut grads: Option<&mut ModelParams>,
    want_input: bool,
) -> Option<Vec<f64>> {
    let mut d_feat = vec![0.0; FEATURES];
    for (c, &g) in d_logits.iter().enumerate() {
        let row = &params.fc_w[c * FEATURES..(c + 1) * FEATURES];
        for (d, &w) in d_feat.iter_mut().zip(row) {
            *d += w * g;
        }
        if let Some(gr) = grads.as_mut() {
            gr.fc_b[c] += g;
            let grow = &mut gr.fc_w[c * FEATURES..(c + 1) * FEATURES];
            for (d, &f) in grow.iter_mut().zip(&act.pool2) {
                *d += g * f;
            }
        }
    }

    let d_conv2 = relu_pool_backward(&act.conv2, &act.arg2, &d_feat);
    let mut d_pool1 = vec![0.0; act.pool1.len()];
    conv_backward(
        &act.pool1,
        CONV1_OUT,
        SIDE2,
        &params.conv2_w,
        CONV2_OUT,
        &d_conv2,
        grads
            .as_mut()
            .map(|g| (&mut g.conv2_w[..], &mut g.conv2_b[..])),
        Some(&mut d_pool1),
    );

    let d_conv1 = relu_pool_backward(&act.conv1, &act.arg1, &d_pool1);
    let mut d_input = want_input.then(|| vec![0.0; input.len()]);
    conv_backward(
        input,
        CHANNELS,
        SIDE,
        &params.conv1_w,
        CONV1_OUT,
        &d_conv1,
        grads.map(|g| (&mut g.conv1_w[..], &mut g.conv1_b[..])),
        d_input.as_deref_mut(),
    );
    d_input
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_naive_definition() {
        // 2 input channels, 5x5, 3 outputs.
        let side = 5;
        let input: Vec<f64> = (0..2 * 25).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let weights: Vec<f64> = (0..3 * 2 * 9)
            .map(|i| ((i * 13) % 7) as f64 * 0.25 - 0.75)
            .collect();
        let bias = [0.5, -1.0, 2.0];
        let out = conv_forward(&input, 2, side, &weights, &bias, 3);
        for o in 0..3 {
            for y in 0..side as isize {
                for x in 0..side as isize {
                    let mut s = bias[o];
                    for i in 0..2 {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (yy, xx) = (y + ky - 1, x + kx - 1);
                                if (0..side as isize).contains(&yy)
                                    && (0..side as isize).contains(&xx)
                                {
                                    s += weights[((o * 2 + i) * 3 + ky as usize) * 3 + kx as usize]
                                        * input[i * 25 + yy as usize * side + xx as usize];
                                }
                            }
                        }
                    }
                    let got = out[o * 25 + y as usize * side + x as usize];
                    assert!((got - s).abs() < 1e-12, "o={o} y={y} x={x}");
                }
            }
        }
    }

    #[test]
    fn one_by_one_layers_by_hand() {
        // A 1x1 "image" with a single channel: only the kernel center taps.
        let out = conv_forward(
            &[2.0],
            1,
            1,
            &[9.0, 9.0, 9.0, 9.0, 3.0, 9.0, 9.0, 9.0, 9.0],
            &[0.5],
            1,
        );
        assert_eq!(out, vec![6.5]);

        let (pooled, arg) = relu_pool(&[-1.0, 3.0, 3.0, 2.0], 1, 2);
        assert_eq!(pooled, vec![3.0]);
        assert_eq!(arg, vec![1], "ties go to the first maximum");
        let (pooled, arg) = relu_pool(&[-1.0, -3.0, -2.0, -0.5], 1, 2);
        assert_eq!(pooled, vec![0.0]);
        assert_eq!(arg, vec![0]);

        let d = relu_pool_backward(&[-1.0, 3.0, 3.0, 2.0], &[1], &[4.0]);
        assert_eq!(d, vec![0.0, 4.0, 0.0, 0.0]);

        let p = softmax(&[0.0, (2.0f64).ln()]);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn conv_backward_matches_adjoint() {
        // <conv(x), g> = <x, conv^T(g)> for the zero-bias convolution.
        let side = 4;
        let x: Vec<f64> = (0..2 * 16).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..3 * 2 * 9).map(|i| (i as f64 * 0.91).cos()).collect();
        let g: Vec<f64> = (0..3 * 16).map(|i| (i as f64 * 1.3).sin()).collect();
        let y = conv_forward(&x, 2, side, &w, &[0.0; 3], 3);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; x.len()];
        conv_backward(&x, 2, side, &w, 3, &g, None, Some(&mut dx));
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
