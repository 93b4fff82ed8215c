//! 3x3 strided convolution with ReLU, hand-written forward and backward.
//!
//! Tensors are channel-major flat vectors: `idx(ch, y, x) = ch*h*w + y*w + x`.
//! Padding is fixed at 1, so `h_out = (h_in - 1) / stride + 1`.

pub const KERNEL: usize = 3;
pub const PADDING: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn conv_output(&self, out_channels: usize, stride: usize) -> Shape3 {
        Shape3 {
            channels: out_channels,
            height: (self.height - 1) / stride + 1,
            width: (self.width - 1) / stride + 1,
        }
    }
}

/// Forward pass of one conv stage. Returns the pre-activation map; apply
/// ReLU separately so the backward pass can reuse it as the mask.
pub fn conv_forward(
    input: &[f64],
    in_shape: Shape3,
    weights: &[f64],
    bias: &[f64],
    out_channels: usize,
    stride: usize,
) -> Vec<f64> {
    let out_shape = in_shape.conv_output(out_channels, stride);
    debug_assert_eq!(input.len(), in_shape.len());
    debug_assert_eq!(
        weights.len(),
        out_channels * in_shape.channels * KERNEL * KERNEL
    );
    debug_assert_eq!(bias.len(), out_channels);
    let (h_in, w_in) = (in_shape.height as isize, in_shape.width as isize);
    let mut out = vec![0.0; out_shape.len()];
    for o in 0..out_channels {
        for y in 0..out_shape.height {
            for x in 0..out_shape.width {
                let mut acc = bias[o];
                for ci in 0..in_shape.channels {
                    for ky in 0..KERNEL {
                        let iy = (y * stride + ky) as isize - PADDING as isize;
                        if iy < 0 || iy >= h_in {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (x * stride + kx) as isize - PADDING as isize;
                            if ix < 0 || ix >= w_in {
                                continue;
                            }
                            let w_idx = ((o * in_shape.channels + ci) * KERNEL + ky) * KERNEL + kx;
                            let i_idx = ci * in_shape.height * in_shape.width
                                + iy as usize * in_shape.width
                                + ix as usize;
                            acc += weights[w_idx] * input[i_idx];
                        }
                    }
                }
                out[o * out_shape.height * out_shape.width + y * out_shape.width + x] = acc;
            }
        }
    }
    out
}

pub fn relu(pre: &[f64]) -> Vec<f64> {
    pre.iter().map(|&x| x.max(0.0)).collect()
}

/// Backward pass of conv + ReLU. `d_out` is the gradient on the
/// post-activation output; `pre` is the cached pre-activation (the ReLU
/// mask). Accumulates into `d_weights` / `d_bias` and returns the gradient
/// w.r.t. the input.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    input: &[f64],
    in_shape: Shape3,
    weights: &[f64],
    pre: &[f64],
    d_out: &[f64],
    out_channels: usize,
    stride: usize,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) -> Vec<f64> {
    let out_shape = in_shape.conv_output(out_channels, stride);
    debug_assert_eq!(d_out.len(), out_shape.len());
    let (h_in, w_in) = (in_shape.height as isize, in_shape.width as isize);
    let mut d_in = vec![0.0; in_shape.len()];
    for o in 0..out_channels {
        for y in 0..out_shape.height {
            for x in 0..out_shape.width {
                let out_idx = o * out_shape.height * out_shape.width + y * out_shape.width + x;
                if pre[out_idx] <= 0.0 {
                    continue;
                }
                let g = d_out[out_idx];
                if g == 0.0 {
                    continue;
                }
                d_bias[o] += g;
                for ci in 0..in_shape.channels {
                    for ky in 0..KERNEL {
                        let iy = (y * stride + ky) as isize - PADDING as isize;
                        if iy < 0 || iy >= h_in {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (x * stride + kx) as isize - PADDING as isize;
                            if ix < 0 || ix >= w_in {
                                continue;
                            }
                            let w_idx = ((o * in_shape.channels + ci) * KERNEL + ky) * KERNEL + kx;
                            let i_idx = ci * in_shape.height * in_shape.width
                                + iy as usize * in_shape.width
                                + ix as usize;
                            d_weights[w_idx] += g * input[i_idx];
                            d_in[i_idx] += g * weights[w_idx];
                        }
                    }
                }
            }
        }
    }
    d_in
}
