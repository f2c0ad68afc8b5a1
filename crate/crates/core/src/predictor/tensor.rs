//! Dense `[channel][row][col]` feature maps and the layer kernels used by the
//! encoder-decoder: 'same'-padded convolution, 2x2 max-pooling, nearest 2x
//! upsampling and channel concatenation, each with its backward pass.

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.channels, self.height, self.width)
    }
}

/// Row-overlap bounds for a kernel tap offset `d` along an axis of length `n`:
/// output indices `lo..hi` read input at `i + d`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi.max(lo))
}

/// Square 'same' convolution with odd kernel size. Weights are laid out
/// `[out][in][ky][kx]`, followed by one bias per output channel.
pub fn conv_forward(input: &FeatureMap, weights: &[f64], bias: &[f64], cout: usize, kernel: usize) -> FeatureMap {
    let (cin, h, w) = (input.channels, input.height, input.width);
    debug_assert_eq!(weights.len(), cout * cin * kernel * kernel);
    let half = (kernel / 2) as isize;
    let mut out = FeatureMap::zeros(cout, h, w);
    for co in 0..cout {
        let out_plane = out.plane_mut(co);
        out_plane.fill(bias[co]);
        for ci in 0..cin {
            let in_plane = input.plane(ci);
            for ky in 0..kernel {
                let dy = ky as isize - half;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..kernel {
                    let dx = kx as isize - half;
                    let (x0, x1) = tap_range(dx, w);
                    let wv = weights[((co * cin + ci) * kernel + ky) * kernel + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let src_row = (y as isize + dy) as usize * w;
                        let src = &in_plane[(src_row as isize + x0 as isize + dx) as usize
                            ..(src_row as isize + x1 as isize + dx) as usize];
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        for (o, &i) in dst.iter_mut().zip(src) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of [`conv_forward`]. Accumulates into `grad_w`/`grad_b` and
/// returns the gradient with respect to the input.
pub fn conv_backward(
    input: &FeatureMap,
    weights: &[f64],
    grad_out: &FeatureMap,
    kernel: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input_grad: bool,
) -> Option<FeatureMap> {
    let (cin, h, w) = (input.channels, input.height, input.width);
    let cout = grad_out.channels;
    let half = (kernel / 2) as isize;
    let mut grad_in = need_input_grad.then(|| input.same_shape());
    for (co, gb) in grad_b.iter_mut().enumerate().take(cout) {
        let g_plane = grad_out.plane(co);
        *gb += g_plane.iter().sum::<f64>();
        for ci in 0..cin {
            let in_plane = input.plane(ci);
            for ky in 0..kernel {
                let dy = ky as isize - half;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..kernel {
                    let dx = kx as isize - half;
                    let (x0, x1) = tap_range(dx, w);
                    let widx = ((co * cin + ci) * kernel + ky) * kernel + kx;
                    let wv = weights[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src_start = ((y as isize + dy) * w as isize + x0 as isize + dx) as usize;
                        let g = &g_plane[y * w + x0..y * w + x1];
                        let src = &in_plane[src_start..src_start + (x1 - x0)];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gi) = grad_in.as_mut() {
                            if wv != 0.0 {
                                let dst = &mut gi.plane_mut(ci)[src_start..src_start + (x1 - x0)];
                                for (d, &gv) in dst.iter_mut().zip(g) {
                                    *d += wv * gv;
                                }
                            }
                        }
                    }
                    grad_w[widx] += acc;
                }
            }
        }
    }
    grad_in
}

pub fn relu_inplace(map: &mut FeatureMap) {
    for v in &mut map.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the (post-activation) output was clamped.
pub fn relu_backward_inplace(grad: &mut FeatureMap, activated: &FeatureMap) {
    for (g, &a) in grad.data.iter_mut().zip(&activated.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 stride-2 max pooling. Returns the pooled map and, per output cell, the
/// flat input index that won (first maximum in scan order).
pub fn max_pool2(input: &FeatureMap) -> (FeatureMap, Vec<u32>) {
    let (c, h, w) = (input.channels, input.height, input.width);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = FeatureMap::zeros(c, oh, ow);
    let mut argmax = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + 2 * oy * w + 2 * ox;
                let mut best = input.data[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input.data[i] > best {
                        best = input.data[i];
                        best_i = i;
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out.data[o] = best;
                argmax[o] = best_i as u32;
            }
        }
    }
    (out, argmax)
}

pub fn max_pool2_backward(grad_out: &FeatureMap, argmax: &[u32], input_shape: (usize, usize, usize)) -> FeatureMap {
    let (c, h, w) = input_shape;
    let mut grad_in = FeatureMap::zeros(c, h, w);
    for (&g, &i) in grad_out.data.iter().zip(argmax) {
        grad_in.data[i as usize] += g;
    }
    grad_in
}

pub fn upsample2(input: &FeatureMap) -> FeatureMap {
    let (c, h, w) = (input.channels, input.height, input.width);
    let mut out = FeatureMap::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        let src = input.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..2 * h {
            for x in 0..2 * w {
                dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &FeatureMap) -> FeatureMap {
    let (c, h, w) = (grad_out.channels, grad_out.height / 2, grad_out.width / 2);
    let mut grad_in = FeatureMap::zeros(c, h, w);
    for ch in 0..c {
        let src = grad_out.plane(ch);
        let dst = grad_in.plane_mut(ch);
        for y in 0..2 * h {
            for x in 0..2 * w {
                dst[(y / 2) * w + x / 2] += src[y * 2 * w + x];
            }
        }
    }
    grad_in
}

pub fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    debug_assert_eq!((a.height, a.width), (b.height, b.width));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    FeatureMap {
        channels: a.channels + b.channels,
        height: a.height,
        width: a.width,
        data,
    }
}

pub fn split_channels(map: FeatureMap, first: usize) -> (FeatureMap, FeatureMap) {
    let n = first * map.plane_len();
    let FeatureMap {
        channels,
        height,
        width,
        mut data,
    } = map;
    let rest = data.split_off(n);
    (
        FeatureMap {
            channels: first,
            height,
            width,
            data,
        },
        FeatureMap {
            channels: channels - first,
            height,
            width,
            data: rest,
        },
    )
}
