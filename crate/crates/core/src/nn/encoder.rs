//! Three-stage residual convolutional encoder with per-stage feature taps.
//!
//! Stage layout: 3x3 stride-2 downsample conv, ReLU, then a residual
//! refinement conv (`y = relu(h + refine(h))`). The stage outputs are the
//! taps `F^1..F^3` consumed by the feature readout and by Grad-CAM.

use super::conv::{Conv2d, ConvContext, ConvGrads};
use super::tensor::BatchTensor;
use super::weights::{TensorArchive, TensorEntry};
use super::STAGES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub widths: [usize; STAGES],
    /// Kernel size of each stage's residual refinement conv.
    pub refine_kernels: [usize; STAGES],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 3,
            widths: [16, 32, 64],
            refine_kernels: [1, 1, 3],
        }
    }
}

struct Stage {
    down: Conv2d,
    refine: Conv2d,
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    stages: Vec<Stage>,
}

/// Forward state for one training step.
pub struct EncoderContext {
    input: BatchTensor,
    down_ctx: Vec<ConvContext>,
    refine_ctx: Vec<ConvContext>,
    /// Post-ReLU downsample output per stage (refine input).
    hidden: Vec<BatchTensor>,
    /// Stage outputs (the taps), post residual add + ReLU.
    pub taps: Vec<BatchTensor>,
}

pub struct EncoderGrads {
    /// Per stage: (down grads, refine grads).
    pub stages: Vec<(ConvGrads, ConvGrads)>,
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig, mut rng: rand_chacha::ChaCha8Rng) -> Self {
        let mut stages = Vec::with_capacity(STAGES);
        let mut c_in = cfg.in_channels;
        for s in 0..STAGES {
            let c_out = cfg.widths[s];
            let rk = cfg.refine_kernels[s];
            let down = Conv2d::new(c_in, c_out, 3, 2, 1, &mut rng);
            let refine = Conv2d::new(c_out, c_out, rk, 1, rk / 2, &mut rng);
            stages.push(Stage { down, refine });
            c_in = c_out;
        }
        Encoder {
            cfg: cfg.clone(),
            stages,
        }
    }

    /// Inference forward; returns the per-stage taps.
    pub fn forward(&self, x: &BatchTensor) -> Vec<BatchTensor> {
        let mut cur = x.clone();
        let mut taps = Vec::with_capacity(STAGES);
        for stage in &self.stages {
            let mut h = stage.down.forward(&cur);
            h.relu();
            let r = stage.refine.forward(&h);
            let mut y = h;
            y.add_assign(&r);
            y.relu();
            taps.push(y.clone());
            cur = y;
        }
        taps
    }

    pub fn forward_train(&self, x: &BatchTensor) -> EncoderContext {
        let mut cur = x.clone();
        let mut down_ctx = Vec::new();
        let mut refine_ctx = Vec::new();
        let mut hidden = Vec::new();
        let mut taps = Vec::new();
        for stage in &self.stages {
            let (mut h, dctx) = stage.down.forward_train(&cur);
            h.relu();
            let (r, rctx) = stage.refine.forward_train(&h);
            let mut y = h.clone();
            y.add_assign(&r);
            y.relu();
            down_ctx.push(dctx);
            refine_ctx.push(rctx);
            hidden.push(h);
            taps.push(y.clone());
            cur = y;
        }
        EncoderContext {
            input: x.clone(),
            down_ctx,
            refine_ctx,
            hidden,
            taps,
        }
    }

    /// Backward from per-tap gradient contributions. `d_taps[s]` is added to
    /// whatever flows back from deeper stages before stage `s` is processed.
    pub fn backward(&self, ctx: &EncoderContext, d_taps: Vec<Option<BatchTensor>>) -> EncoderGrads {
        debug_assert_eq!(d_taps.len(), STAGES);
        let mut grads: Vec<Option<(ConvGrads, ConvGrads)>> = (0..STAGES).map(|_| None).collect();
        let mut flow: Option<BatchTensor> = None;
        let mut d_taps = d_taps;
        for s in (0..STAGES).rev() {
            let stage = &self.stages[s];
            let mut dy = match (flow.take(), d_taps[s].take()) {
                (Some(mut f), Some(d)) => {
                    f.add_assign(&d);
                    f
                }
                (Some(f), None) => f,
                (None, Some(d)) => d,
                (None, None) => BatchTensor::new(
                    ctx.taps[s].c,
                    ctx.taps[s].n,
                    ctx.taps[s].h,
                    ctx.taps[s].w,
                ),
            };
            // Through the output ReLU: gate by the tap itself.
            dy.mask_by_positive(&ctx.taps[s]);
            // y = relu(h + refine(h)): d(h + r) = dy; split into both paths.
            let (d_refine_in, refine_grads) =
                stage.refine.backward(&ctx.refine_ctx[s], &ctx.hidden[s], &dy);
            let mut dh = dy;
            dh.add_assign(&d_refine_in);
            dh.mask_by_positive(&ctx.hidden[s]);
            let prev: &BatchTensor = if s == 0 { &ctx.input } else { &ctx.taps[s - 1] };
            let (dx, down_grads) = stage.down.backward(&ctx.down_ctx[s], prev, &dh);
            grads[s] = Some((down_grads, refine_grads));
            flow = Some(dx);
        }
        EncoderGrads {
            stages: grads.into_iter().map(|g| g.expect("filled")).collect(),
        }
    }

    /// Parameter tensors in canonical order, paired with their names.
    pub fn named_params(&self) -> Vec<(String, &Vec<f32>, Vec<usize>)> {
        let mut out = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            out.push((
                format!("stage{s}.down.weight"),
                &stage.down.weight,
                vec![stage.down.c_out, stage.down.c_in, stage.down.kernel, stage.down.kernel],
            ));
            out.push((format!("stage{s}.down.bias"), &stage.down.bias, vec![stage.down.c_out]));
            out.push((
                format!("stage{s}.refine.weight"),
                &stage.refine.weight,
                vec![
                    stage.refine.c_out,
                    stage.refine.c_in,
                    stage.refine.kernel,
                    stage.refine.kernel,
                ],
            ));
            out.push((format!("stage{s}.refine.bias"), &stage.refine.bias, vec![stage.refine.c_out]));
        }
        out
    }

    /// Mutable parameter slices in the same canonical order as `named_params`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for stage in &mut self.stages {
            out.push(&mut stage.down.weight);
            out.push(&mut stage.down.bias);
            out.push(&mut stage.refine.weight);
            out.push(&mut stage.refine.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| s.down.param_count() + s.refine.param_count())
            .sum()
    }

    pub fn to_archive(&self, prefix: &str) -> TensorArchive {
        let mut entries = Vec::new();
        for (name, data, shape) in self.named_params() {
            entries.push(TensorEntry {
                name: format!("{prefix}.{name}"),
                shape,
                data: data.clone(),
            });
        }
        TensorArchive { entries }
    }

    pub fn from_archive(cfg: &EncoderConfig, archive: &TensorArchive, prefix: &str) -> Result<Self> {
        let mut enc = Encoder::new(cfg, crate::rng::stream(0, &[0]));
        for (s, stage) in enc.stages.iter_mut().enumerate() {
            for (field, conv) in [("down", &mut stage.down), ("refine", &mut stage.refine)] {
                let wname = format!("{prefix}.stage{s}.{field}.weight");
                let bname = format!("{prefix}.stage{s}.{field}.bias");
                let w = archive.get(&wname)?;
                let b = archive.get(&bname)?;
                if w.data.len() != conv.weight.len() || b.data.len() != conv.bias.len() {
                    return Err(Error::config(format!(
                        "weights file shape mismatch for `{wname}`: got {}, expected {}",
                        w.data.len(),
                        conv.weight.len()
                    )));
                }
                conv.weight.copy_from_slice(&w.data);
                conv.bias.copy_from_slice(&b.data);
            }
        }
        Ok(enc)
    }
}

impl EncoderGrads {
    /// Gradient slices in the canonical parameter order.
    pub fn slices(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for (down, refine) in &self.stages {
            out.push(&down.d_weight);
            out.push(&down.d_bias);
            out.push(&refine.d_weight);
            out.push(&refine.d_bias);
        }
        out
    }
}
