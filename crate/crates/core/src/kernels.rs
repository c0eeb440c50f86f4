// Dense kernels over HWC feature maps. Conv weights are laid out as
// [ky][kx][in][out] so the innermost loop runs over contiguous output
// channels; fully-connected weights are [out][in].

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    /// Same padding of one pixel when true, valid otherwise.
    pub pad: bool,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        if self.pad {
            (self.h, self.w)
        } else {
            (self.h - 2, self.w - 2)
        }
    }
}

pub(crate) fn conv3x3_forward(g: ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (oh, ow) = g.out_hw();
    let off = usize::from(g.pad);
    let mut out = vec![0.0; oh * ow * g.cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut out[(oy * ow + ox) * g.cout..][..g.cout];
            o.copy_from_slice(bias);
            for ky in 0..3 {
                let Some(iy) = (oy + ky).checked_sub(off).filter(|&y| y < g.h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(ix) = (ox + kx).checked_sub(off).filter(|&x| x < g.w) else {
                        continue;
                    };
                    let px = &input[(iy * g.w + ix) * g.cin..][..g.cin];
                    let wk = &weight[(ky * 3 + kx) * g.cin * g.cout..][..g.cin * g.cout];
                    for (ci, &v) in px.iter().enumerate() {
                        let row = &wk[ci * g.cout..][..g.cout];
                        for (acc, &wv) in o.iter_mut().zip(row) {
                            *acc += v * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient.
pub(crate) fn conv3x3_backward(
    g: ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let (oh, ow) = g.out_hw();
    let off = usize::from(g.pad);
    let mut grad_in = vec![0.0; g.h * g.w * g.cin];
    for oy in 0..oh {
        for ox in 0..ow {
            let go = &grad_out[(oy * ow + ox) * g.cout..][..g.cout];
            for (b, &v) in grad_bias.iter_mut().zip(go) {
                *b += v;
            }
            for ky in 0..3 {
                let Some(iy) = (oy + ky).checked_sub(off).filter(|&y| y < g.h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(ix) = (ox + kx).checked_sub(off).filter(|&x| x < g.w) else {
                        continue;
                    };
                    let base = (iy * g.w + ix) * g.cin;
                    let koff = (ky * 3 + kx) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let v = input[base + ci];
                        let row = &weight[koff + ci * g.cout..][..g.cout];
                        let grow = &mut grad_weight[koff + ci * g.cout..][..g.cout];
                        let mut acc = 0.0;
                        for ((gw, &wv), &gv) in grow.iter_mut().zip(row).zip(go) {
                            *gw += v * gv;
                            acc += wv * gv;
                        }
                        grad_in[base + ci] += acc;
                    }
                }
            }
        }
    }
    grad_in
}

/// 2x2 max pooling with stride 2. Returns the output and, for every output
/// element, the flat input index that won (first maximum on ties).
pub(crate) fn maxpool_forward(h: usize, w: usize, c: usize, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    let mut arg = vec![0usize; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = (2 * oy * w + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = input[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(input_len: usize, argmax: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let mut grad_in = vec![0.0; input_len];
    for (&i, &g) in argmax.iter().zip(grad_out) {
        grad_in[i] += g;
    }
    grad_in
}

pub(crate) fn relu_forward(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Gradient through a relu given its output.
pub(crate) fn relu_backward(output: &[f64], grad_out: &[f64]) -> Vec<f64> {
    output
        .iter()
        .zip(grad_out)
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect()
}

pub(crate) fn fc_forward(input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weight[o * n..][..n];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}

pub(crate) fn fc_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let n = input.len();
    let mut grad_in = vec![0.0; n];
    for (o, &g) in grad_out.iter().enumerate() {
        grad_bias[o] += g;
        let row = &weight[o * n..][..n];
        let grow = &mut grad_weight[o * n..][..n];
        for ((gi, gw), (&w, &x)) in grad_in.iter_mut().zip(grow).zip(row.iter().zip(input)) {
            *gi += w * g;
            *gw += x * g;
        }
    }
    grad_in
}

pub(crate) fn scale_forward(channels: usize, input: &[f64], w: &[f64]) -> Vec<f64> {
    input
        .chunks_exact(channels)
        .flat_map(|px| px.iter().zip(w).map(|(x, s)| x * s))
        .collect()
}

pub(crate) fn scale_backward(
    channels: usize,
    input: &[f64],
    w: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
) -> Vec<f64> {
    let mut grad_in = Vec::with_capacity(input.len());
    for (px, go) in input.chunks_exact(channels).zip(grad_out.chunks_exact(channels)) {
        for c in 0..channels {
            grad_w[c] += px[c] * go[c];
            grad_in.push(w[c] * go[c]);
        }
    }
    grad_in
}

/// `out[p, i] = sum_j in[p, j] * m[i, j]` with `m` row-major C x C.
pub(crate) fn project_forward(channels: usize, input: &[f64], m: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(input.len());
    for px in input.chunks_exact(channels) {
        for i in 0..channels {
            let row = &m[i * channels..][..channels];
            let mut acc = 0.0;
            for (x, w) in px.iter().zip(row) {
                acc += x * w;
            }
            out.push(acc);
        }
    }
    out
}

pub(crate) fn project_backward(
    channels: usize,
    input: &[f64],
    m: &[f64],
    grad_out: &[f64],
    grad_m: &mut [f64],
) -> Vec<f64> {
    let mut grad_in = vec![0.0; input.len()];
    for ((px, go), gi) in input
        .chunks_exact(channels)
        .zip(grad_out.chunks_exact(channels))
        .zip(grad_in.chunks_exact_mut(channels))
    {
        for i in 0..channels {
            let row = &m[i * channels..][..channels];
            let grow = &mut grad_m[i * channels..][..channels];
            let g = go[i];
            for j in 0..channels {
                grow[j] += px[j] * g;
                gi[j] += row[j] * g;
            }
        }
    }
    grad_in
}
