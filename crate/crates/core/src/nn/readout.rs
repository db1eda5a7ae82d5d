//! Feature readout: per-stage spatial mean pooling, per-block L2
//! normalization, and concatenation with the normalized binary-head block.

use super::heads::{BinaryHead, HeadGrads};
use super::tensor::BatchTensor;

const NORM_EPS: f32 = 1e-12;
/// Below this, a block is considered zero-norm and the sample gets flagged.
const DEGENERATE_NORM: f32 = 1e-12;

/// Concatenated per-sample feature vectors with recorded block boundaries.
#[derive(Debug, Clone)]
pub struct Features {
    pub n: usize,
    pub block_dims: Vec<usize>,
    /// Row-major `[n, dim]` where `dim = sum(block_dims)`.
    pub data: Vec<f32>,
    /// Per-sample flag: some block had (near-)zero norm before normalization.
    pub degenerate: Vec<bool>,
}

impl Features {
    pub fn dim(&self) -> usize {
        self.block_dims.iter().sum()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn block(&self, i: usize, b: usize) -> &[f32] {
        let d = self.dim();
        let off: usize = self.block_dims[..b].iter().sum();
        &self.data[i * d + off..i * d + off + self.block_dims[b]]
    }

    pub fn blocks(&self) -> usize {
        self.block_dims.len()
    }
}

/// What the backward pass needs: raw pooled blocks and their norms.
pub struct ReadoutContext {
    /// Per stage: pooled `[n, d_s]` before normalization.
    pooled: Vec<Vec<f32>>,
    norms: Vec<Vec<f32>>,
    /// Raw head logits `[n, 2]` and their norms, when a head participates.
    head_logits: Option<Vec<f32>>,
    head_norms: Option<Vec<f32>>,
    tap_shapes: Vec<(usize, usize, usize, usize)>,
}

pub struct ReadoutGrads {
    pub d_taps: Vec<BatchTensor>,
    pub d_head: Option<HeadGrads>,
}

fn normalize_block(p: &[f32], out: &mut [f32]) -> (f32, bool) {
    let norm = p.iter().map(|v| v * v).sum::<f32>().sqrt();
    let denom = norm + NORM_EPS;
    for (o, v) in out.iter_mut().zip(p) {
        *o = v / denom;
    }
    (norm, norm < DEGENERATE_NORM)
}

/// Read features for a whole batch from precomputed encoder taps.
pub fn feature_readout_batch(
    taps: &[BatchTensor],
    head: Option<&BinaryHead>,
) -> (Features, ReadoutContext) {
    let n = taps[0].n;
    let mut block_dims: Vec<usize> = taps.iter().map(|t| t.c).collect();
    if head.is_some() {
        block_dims.push(2);
    }
    let dim: usize = block_dims.iter().sum();
    let mut data = vec![0.0f32; n * dim];
    let mut degenerate = vec![false; n];

    let pooled: Vec<Vec<f32>> = taps.iter().map(|t| t.spatial_mean()).collect();
    let mut norms: Vec<Vec<f32>> = Vec::with_capacity(taps.len());
    let mut off = 0usize;
    for (s, t) in taps.iter().enumerate() {
        let d = t.c;
        let mut stage_norms = vec![0.0f32; n];
        for i in 0..n {
            let p = &pooled[s][i * d..(i + 1) * d];
            let out = &mut data[i * dim + off..i * dim + off + d];
            let (norm, degen) = normalize_block(p, out);
            stage_norms[i] = norm;
            degenerate[i] |= degen;
        }
        norms.push(stage_norms);
        off += d;
    }

    let (head_logits, head_norms) = if let Some(h) = head {
        let last = taps.len() - 1;
        let logits = h.forward(&pooled[last], n);
        let mut hnorms = vec![0.0f32; n];
        for i in 0..n {
            let p = &logits[i * 2..(i + 1) * 2];
            let out = &mut data[i * dim + off..i * dim + off + 2];
            let (norm, degen) = normalize_block(p, out);
            hnorms[i] = norm;
            degenerate[i] |= degen;
        }
        (Some(logits), Some(hnorms))
    } else {
        (None, None)
    };

    let ctx = ReadoutContext {
        pooled,
        norms,
        head_logits,
        head_norms,
        tap_shapes: taps.iter().map(|t| (t.c, t.n, t.h, t.w)).collect(),
    };
    (
        Features {
            n,
            block_dims,
            data,
            degenerate,
        },
        ctx,
    )
}

/// d(normalized)/d(raw) transpose-apply: from dL/du to dL/dp.
fn normalize_backward(p: &[f32], norm: f32, du: &[f32], dp: &mut [f32]) {
    let denom = norm + NORM_EPS;
    let dot: f32 = du.iter().zip(p).map(|(a, b)| a * b).sum();
    let scale = if norm > 0.0 {
        dot / (norm * denom * denom)
    } else {
        0.0
    };
    for j in 0..p.len() {
        dp[j] = du[j] / denom - p[j] * scale;
    }
}

/// Backward from dL/dFeatures to tap gradients and head parameter gradients.
/// `head` must match the forward call's head argument.
pub fn readout_backward(
    ctx: &ReadoutContext,
    features: &Features,
    d_features: &[f32],
    head: Option<&BinaryHead>,
) -> ReadoutGrads {
    let n = features.n;
    let dim = features.dim();
    debug_assert_eq!(d_features.len(), n * dim);
    let stages = ctx.pooled.len();

    // Pooled-space gradients per stage.
    let mut d_pooled: Vec<Vec<f32>> = ctx
        .pooled
        .iter()
        .map(|p| vec![0.0f32; p.len()])
        .collect();

    let mut off = 0usize;
    for s in 0..stages {
        let d = ctx.tap_shapes[s].0;
        for i in 0..n {
            let p = &ctx.pooled[s][i * d..(i + 1) * d];
            let du = &d_features[i * dim + off..i * dim + off + d];
            let dp = &mut d_pooled[s][i * d..(i + 1) * d];
            normalize_backward(p, ctx.norms[s][i], du, dp);
        }
        off += d;
    }

    let mut d_head = None;
    if let Some(h) = head {
        let logits = ctx.head_logits.as_ref().expect("head context");
        let hnorms = ctx.head_norms.as_ref().expect("head context");
        let mut d_logits = vec![0.0f32; n * 2];
        for i in 0..n {
            let p = &logits[i * 2..(i + 1) * 2];
            let du = &d_features[i * dim + off..i * dim + off + 2];
            normalize_backward(p, hnorms[i], du, &mut d_logits[i * 2..(i + 1) * 2]);
        }
        let last = stages - 1;
        let (d_pooled_head, grads) = h.backward(&ctx.pooled[last], n, &d_logits);
        for (acc, g) in d_pooled[last].iter_mut().zip(&d_pooled_head) {
            *acc += g;
        }
        d_head = Some(grads);
    }

    // Spread pooled gradients uniformly over spatial positions.
    let mut d_taps = Vec::with_capacity(stages);
    for s in 0..stages {
        let (c, nn, h, w) = ctx.tap_shapes[s];
        let mut t = BatchTensor::new(c, nn, h, w);
        let inv = 1.0 / (h * w) as f32;
        for ci in 0..c {
            for i in 0..nn {
                let g = d_pooled[s][i * c + ci] * inv;
                for v in t.plane_mut(ci, i) {
                    *v = g;
                }
            }
        }
        d_taps.push(t);
    }

    ReadoutGrads { d_taps, d_head }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_student, EncoderConfig};
    use crate::rng::stream;
    use rand::Rng;

    fn rand_batch(seed: u64, c: usize, n: usize, h: usize, w: usize) -> BatchTensor {
        let mut rng = stream(seed, &[17]);
        let mut t = BatchTensor::new(c, n, h, w);
        for v in &mut t.data {
            *v = rng.gen_range(0.0..=1.0);
        }
        t
    }

    #[test]
    fn blocks_are_unit_norm() {
        let cfg = EncoderConfig::default();
        let student = build_student(&cfg, 3);
        let x = rand_batch(1, 3, 4, 32, 32);
        let taps = student.encoder.forward(&x);
        let (f, _) = feature_readout_batch(&taps, Some(&student.head));
        assert_eq!(f.dim(), 16 + 32 + 64 + 2);
        for i in 0..f.n {
            for b in 0..f.blocks() {
                let norm: f32 = f.block(i, b).iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((norm - 1.0).abs() < 1e-6, "block {b} norm {norm}");
            }
        }
    }

    #[test]
    fn concatenated_length_matches_widths() {
        let cfg = EncoderConfig::default();
        let student = build_student(&cfg, 1);
        let x = rand_batch(2, 3, 1, 32, 32);
        let taps = student.encoder.forward(&x);
        let (f, _) = feature_readout_batch(&taps, Some(&student.head));
        // widths (16, 32, 64) + head block of 2
        assert_eq!(f.vector(0).len(), 114);
    }

    #[test]
    fn stage_scaling_leaves_block_unchanged() {
        let cfg = EncoderConfig::default();
        let student = build_student(&cfg, 5);
        let x = rand_batch(3, 3, 1, 32, 32);
        let mut taps = student.encoder.forward(&x);
        let (f1, _) = feature_readout_batch(&taps, None);
        for v in &mut taps[1].data {
            *v *= 7.5;
        }
        let (f2, _) = feature_readout_batch(&taps, None);
        for (a, b) in f1.block(0, 1).iter().zip(f2.block(0, 1)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_block_is_flagged_not_nan() {
        let taps = vec![
            BatchTensor::new(4, 1, 2, 2), // all zeros
            rand_batch(4, 5, 1, 2, 2),
            rand_batch(5, 6, 1, 2, 2),
        ];
        let (f, _) = feature_readout_batch(&taps, None);
        assert!(f.degenerate[0]);
        assert!(f.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn readout_backward_matches_finite_differences() {
        // Directly over synthetic taps: perturb tap entries and compare.
        let taps = vec![rand_batch(6, 3, 2, 4, 4), rand_batch(7, 4, 2, 2, 2)];
        let (f, ctx) = feature_readout_batch(&taps, None);
        let coef: Vec<f32> = (0..f.data.len())
            .map(|i| ((i * 11 % 7) as f32 - 3.0) / 3.0)
            .collect();
        let grads = readout_backward(&ctx, &f, &coef, None);

        let loss = |taps: &[BatchTensor]| -> f64 {
            let (f, _) = feature_readout_batch(taps, None);
            f.data
                .iter()
                .zip(&coef)
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum()
        };
        let eps = 1e-3f32;
        let mut taps2 = taps.clone();
        for s in 0..taps.len() {
            for idx in (0..taps[s].data.len()).step_by(taps[s].data.len() / 5 + 1) {
                let orig = taps2[s].data[idx];
                taps2[s].data[idx] = orig + eps;
                let up = loss(&taps2);
                taps2[s].data[idx] = orig - eps;
                let down = loss(&taps2);
                taps2[s].data[idx] = orig;
                let fd = (up - down) / (2.0 * eps as f64);
                let an = grads.d_taps[s].data[idx] as f64;
                assert!(
                    (fd - an).abs() < 1e-2 * fd.abs().max(an.abs()).max(1e-2),
                    "stage {s} idx {idx}: fd {fd} vs {an}"
                );
            }
        }
    }
}
