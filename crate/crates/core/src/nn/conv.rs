//! 2-D convolution via im2col + GEMM, with explicit backward passes.

use super::gemm;
use super::tensor::BatchTensor;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Row-major `[c_out, c_in * kernel * kernel]`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Cached forward state needed by the backward pass.
pub struct ConvContext {
    /// im2col matrix `[c_in*k*k, n*h_out*w_out]`; empty for 1x1/stride-1
    /// convolutions where the input itself serves as the column matrix.
    col: Vec<f32>,
    in_shape: (usize, usize, usize, usize),
    out_shape: (usize, usize, usize, usize),
}

pub struct ConvGrads {
    pub d_weight: Vec<f32>,
    pub d_bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        Conv2d {
            c_in,
            c_out,
            kernel,
            stride,
            pad,
            weight: super::he_normal(rng, fan_in, c_out * fan_in),
            bias: vec![0.0; c_out],
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    /// Zero-padded im2col in the `[C, N, H, W]` batch layout.
    fn build_col(&self, x: &BatchTensor, ho: usize, wo: usize) -> Vec<f32> {
        let cols = x.n * ho * wo;
        let rows = self.c_in * self.kernel * self.kernel;
        let mut col = vec![0.0f32; rows * cols];
        let (h, w, n) = (x.h, x.w, x.n);
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        col.par_chunks_mut(cols).enumerate().for_each(|(row, out_row)| {
            let ci = row / (k * k);
            let ky = (row / k) % k;
            let kx = row % k;
            for i in 0..n {
                let plane = x.plane(ci, i);
                for y in 0..ho {
                    let sy = (y * s + ky) as isize - p as isize;
                    let base = (i * ho + y) * wo;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    for xo in 0..wo {
                        let sx = (xo * s + kx) as isize - p as isize;
                        if sx >= 0 && sx < w as isize {
                            out_row[base + xo] = plane[sy * w + sx as usize];
                        }
                    }
                }
            }
        });
        col
    }

    fn scatter_col(&self, dcol: &[f32], dx: &mut BatchTensor, ho: usize, wo: usize) {
        let cols = dx.n * ho * wo;
        let (h, w, n) = (dx.h, dx.w, dx.n);
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let hw = h * w;
        // Each task owns one input channel, so scatter-adds never collide.
        dx.data
            .par_chunks_mut(n * hw)
            .enumerate()
            .for_each(|(ci, ch_planes)| {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let src = &dcol[row * cols..(row + 1) * cols];
                        for i in 0..n {
                            let plane = &mut ch_planes[i * hw..(i + 1) * hw];
                            for y in 0..ho {
                                let sy = (y * s + ky) as isize - p as isize;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let sy = sy as usize;
                                let base = (i * ho + y) * wo;
                                for xo in 0..wo {
                                    let sx = (xo * s + kx) as isize - p as isize;
                                    if sx >= 0 && sx < w as isize {
                                        plane[sy * w + sx as usize] += src[base + xo];
                                    }
                                }
                            }
                        }
                    }
                }
            });
    }

    pub fn forward(&self, x: &BatchTensor) -> BatchTensor {
        self.forward_impl(x, false).0
    }

    pub fn forward_train(&self, x: &BatchTensor) -> (BatchTensor, ConvContext) {
        let (out, ctx) = self.forward_impl(x, true);
        (out, ctx.expect("training forward returns a context"))
    }

    fn forward_impl(&self, x: &BatchTensor, keep_ctx: bool) -> (BatchTensor, Option<ConvContext>) {
        debug_assert_eq!(x.c, self.c_in);
        let (ho, wo) = self.out_hw(x.h, x.w);
        let cols = x.n * ho * wo;
        let rows = self.c_in * self.kernel * self.kernel;
        let mut out = BatchTensor::new(self.c_out, x.n, ho, wo);
        if self.is_pointwise() {
            gemm::matmul(&self.weight, &x.data, &mut out.data, self.c_out, rows, cols);
        } else {
            let col = self.build_col(x, ho, wo);
            gemm::matmul(&self.weight, &col, &mut out.data, self.c_out, rows, cols);
            if keep_ctx {
                let ctx = ConvContext {
                    col,
                    in_shape: (x.c, x.n, x.h, x.w),
                    out_shape: (self.c_out, x.n, ho, wo),
                };
                add_bias(&mut out, &self.bias);
                return (out, Some(ctx));
            }
        }
        add_bias(&mut out, &self.bias);
        let ctx = keep_ctx.then(|| ConvContext {
            col: Vec::new(),
            in_shape: (x.c, x.n, x.h, x.w),
            out_shape: (self.c_out, x.n, ho, wo),
        });
        (out, ctx)
    }

    /// Backward pass. `x` is the forward input (used directly for pointwise
    /// convolutions instead of a cached column matrix).
    pub fn backward(
        &self,
        ctx: &ConvContext,
        x: &BatchTensor,
        d_out: &BatchTensor,
    ) -> (BatchTensor, ConvGrads) {
        let (_, n, ho, wo) = ctx.out_shape;
        let cols = n * ho * wo;
        let rows = self.c_in * self.kernel * self.kernel;
        debug_assert_eq!(d_out.data.len(), self.c_out * cols);

        let col: &[f32] = if self.is_pointwise() { &x.data } else { &ctx.col };

        // dW = dOut * col^T  -> [c_out, rows]
        let mut d_weight = vec![0.0f32; self.c_out * rows];
        gemm::matmul_bt(&d_out.data, col, &mut d_weight, self.c_out, cols, rows);

        let d_bias: Vec<f32> = (0..self.c_out)
            .map(|co| d_out.data[co * cols..(co + 1) * cols].iter().sum())
            .collect();

        // dcol = W^T * dOut -> [rows, cols]
        let (ci, nn, h, w) = ctx.in_shape;
        let mut dx = BatchTensor::new(ci, nn, h, w);
        if self.is_pointwise() {
            gemm::matmul_at(&self.weight, &d_out.data, &mut dx.data, rows, self.c_out, cols);
        } else {
            let mut dcol = vec![0.0f32; rows * cols];
            gemm::matmul_at(&self.weight, &d_out.data, &mut dcol, rows, self.c_out, cols);
            self.scatter_col(&dcol, &mut dx, ho, wo);
        }
        (dx, ConvGrads { d_weight, d_bias })
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

fn add_bias(out: &mut BatchTensor, bias: &[f32]) {
    let per_channel = out.n * out.h * out.w;
    for (co, b) in bias.iter().enumerate() {
        for v in &mut out.data[co * per_channel..(co + 1) * per_channel] {
            *v += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn rand_tensor(seed: u64, c: usize, n: usize, h: usize, w: usize) -> BatchTensor {
        let mut rng = stream(seed, &[1]);
        let mut t = BatchTensor::new(c, n, h, w);
        for v in &mut t.data {
            *v = rng.gen_range(-1.0..=1.0);
        }
        t
    }

    fn naive_conv(conv: &Conv2d, x: &BatchTensor) -> BatchTensor {
        let (ho, wo) = conv.out_hw(x.h, x.w);
        let mut out = BatchTensor::new(conv.c_out, x.n, ho, wo);
        let k = conv.kernel;
        for co in 0..conv.c_out {
            for i in 0..x.n {
                for y in 0..ho {
                    for xo in 0..wo {
                        let mut acc = conv.bias[co];
                        for ci in 0..conv.c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = (y * conv.stride + ky) as isize - conv.pad as isize;
                                    let sx = (xo * conv.stride + kx) as isize - conv.pad as isize;
                                    if sy >= 0 && sy < x.h as isize && sx >= 0 && sx < x.w as isize
                                    {
                                        let wv =
                                            conv.weight[co * conv.c_in * k * k + (ci * k + ky) * k + kx];
                                        acc += wv * x.plane(ci, i)[sy as usize * x.w + sx as usize];
                                    }
                                }
                            }
                        }
                        out.plane_mut(co, i)[y * wo + xo] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive() {
        for &(k, s, p) in &[(3usize, 1usize, 1usize), (3, 2, 1), (1, 1, 0)] {
            let mut rng = stream(5, &[k as u64, s as u64]);
            let conv = Conv2d::new(3, 4, k, s, p, &mut rng);
            let x = rand_tensor(9, 3, 2, 8, 8);
            let got = conv.forward(&x);
            let want = naive_conv(&conv, &x);
            assert_eq!(got.h, want.h);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for &(k, s, p) in &[(3usize, 2usize, 1usize), (1, 1, 0)] {
            let mut rng = stream(11, &[k as u64]);
            let mut conv = Conv2d::new(2, 3, k, s, p, &mut rng);
            let x = rand_tensor(13, 2, 1, 6, 6);
            // Loss = sum of outputs weighted by fixed pseudo-random coefs.
            let (out, ctx) = conv.forward_train(&x);
            let coef: Vec<f32> = (0..out.data.len())
                .map(|i| ((i * 37 % 19) as f32 - 9.0) / 10.0)
                .collect();
            let mut d_out = out.clone();
            d_out.data.copy_from_slice(&coef);
            let (dx, grads) = conv.backward(&ctx, &x, &d_out);

            let loss = |conv: &Conv2d, x: &BatchTensor| -> f64 {
                let out = conv.forward(x);
                out.data
                    .iter()
                    .zip(&coef)
                    .map(|(o, c)| *o as f64 * *c as f64)
                    .sum()
            };
            let eps = 1e-2f32;
            // Check a scattering of weight coordinates.
            for idx in (0..conv.weight.len()).step_by(conv.weight.len() / 7 + 1) {
                let orig = conv.weight[idx];
                conv.weight[idx] = orig + eps;
                let up = loss(&conv, &x);
                conv.weight[idx] = orig - eps;
                let down = loss(&conv, &x);
                conv.weight[idx] = orig;
                let fd = (up - down) / (2.0 * eps as f64);
                let an = grads.d_weight[idx] as f64;
                assert!(
                    (fd - an).abs() < 1e-2 * fd.abs().max(an.abs()).max(1e-2),
                    "weight {idx}: fd {fd} vs analytic {an}"
                );
            }
            // And input coordinates.
            let mut xp = x.clone();
            for idx in (0..xp.data.len()).step_by(xp.data.len() / 7 + 1) {
                let orig = xp.data[idx];
                xp.data[idx] = orig + eps;
                let up = loss(&conv, &xp);
                xp.data[idx] = orig - eps;
                let down = loss(&conv, &xp);
                xp.data[idx] = orig;
                let fd = (up - down) / (2.0 * eps as f64);
                let an = dx.data[idx] as f64;
                assert!(
                    (fd - an).abs() < 1e-2 * fd.abs().max(an.abs()).max(1e-2),
                    "input {idx}: fd {fd} vs analytic {an}"
                );
            }
        }
    }
}
