//! Grad-CAM saliency maps and the style-agnostic saliency product used to
//! locate core regions.

use crate::error::{Error, Result};
use crate::image_data::Image;
use crate::nn::{batch_from_images, BatchTensor, SaliencyModel};
use crate::transforms::{apply, inverse_warp_grid, Family, TransformSpec};

/// Per-pixel non-negative importance, max-normalized to [0, 1].
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    /// Row-major H x W, all in [0, 1]; max is 1 unless `uniform_fallback`.
    pub values: Vec<f32>,
    pub source_layer: String,
    /// Set when the rectified map was identically zero and was replaced by
    /// the uniform map (all values equal).
    pub uniform_fallback: bool,
}

impl SaliencyMap {
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Bilinear upsample with corner alignment; a 1x1 source broadcasts.
fn upsample_bilinear(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; dh * dw];
    for y in 0..dh {
        for x in 0..dw {
            let fy = if dh > 1 && sh > 1 {
                y as f32 * (sh - 1) as f32 / (dh - 1) as f32
            } else {
                0.0
            };
            let fx = if dw > 1 && sw > 1 {
                x as f32 * (sw - 1) as f32 / (dw - 1) as f32
            } else {
                0.0
            };
            let y0 = fy.floor() as usize;
            let x0 = fx.floor() as usize;
            let y1 = (y0 + 1).min(sh - 1);
            let x1 = (x0 + 1).min(sw - 1);
            let (ry, rx) = (fy - y0 as f32, fx - x0 as f32);
            out[y * dw + x] = src[y0 * sw + x0] * (1.0 - ry) * (1.0 - rx)
                + src[y0 * sw + x1] * (1.0 - ry) * rx
                + src[y1 * sw + x0] * ry * (1.0 - rx)
                + src[y1 * sw + x1] * ry * rx;
        }
    }
    out
}

/// Max-normalize; an identically-zero map becomes the uniform fallback.
fn finish_map(mut values: Vec<f32>, h: usize, w: usize, source_layer: String) -> SaliencyMap {
    let max = values.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return SaliencyMap {
            height: h,
            width: w,
            values: vec![1.0; h * w],
            source_layer,
            uniform_fallback: true,
        };
    }
    for v in &mut values {
        *v /= max;
    }
    SaliencyMap {
        height: h,
        width: w,
        values,
        source_layer,
        uniform_fallback: false,
    }
}

/// Rectified channel-weighted activation sum, upsampled and normalized.
/// `acts` holds the final-stage activations for one image.
pub fn weighted_cam(
    acts: &BatchTensor,
    alphas: &[f32],
    out_h: usize,
    out_w: usize,
) -> SaliencyMap {
    debug_assert_eq!(acts.n, 1);
    debug_assert_eq!(alphas.len(), acts.c);
    let hw = acts.h * acts.w;
    let mut cam = vec![0.0f32; hw];
    for (k, &a) in alphas.iter().enumerate() {
        let plane = acts.plane(k, 0);
        for i in 0..hw {
            cam[i] += a * plane[i];
        }
    }
    for v in &mut cam {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let up = upsample_bilinear(&cam, acts.h, acts.w, out_h, out_w);
    finish_map(up, out_h, out_w, "stage3".to_string())
}

/// Grad-CAM over the final convolutional stage. `target = None` uses the
/// head's argmax class.
pub fn grad_cam(model: &SaliencyModel, img: &Image, target: Option<usize>) -> Result<SaliencyMap> {
    let batch = batch_from_images(&[img])?;
    let taps = model.encoder.forward(&batch);
    let final_tap = taps.last().expect("encoder has stages");
    let pooled = final_tap.spatial_mean();
    let logits = model.head.forward(&pooled, 1);
    let target = match target {
        Some(t) => {
            if t >= model.head.classes {
                return Err(Error::input(format!(
                    "target class {t} out of range (head has {} classes)",
                    model.head.classes
                )));
            }
            t
        }
        None => argmax(&logits),
    };
    let (_score, d_pooled) = model.head.score_and_input_grad(&pooled, target);
    if d_pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite gradients in grad-cam"));
    }
    // Channel weight = spatial mean of d(score)/d(activation); pooling makes
    // that d(score)/d(pooled_k) / (h*w) at every cell.
    let hw = (final_tap.h * final_tap.w) as f32;
    let alphas: Vec<f32> = d_pooled.iter().map(|g| g / hw).collect();
    Ok(weighted_cam(final_tap, &alphas, img.height(), img.width()))
}

/// Element-wise product of the Grad-CAM maps of `img` and `apply(light, img)`,
/// max-normalized. Geometric light transforms are inverse-warped back to the
/// original frame before the product.
pub fn style_agnostic_saliency(
    model: &SaliencyModel,
    img: &Image,
    light: &TransformSpec,
) -> Result<SaliencyMap> {
    if light.family() != Family::Light {
        return Err(Error::input(
            "style-agnostic saliency requires a light transform",
        ));
    }
    let m1 = grad_cam(model, img, None)?;
    let transformed = apply(light, img)?;
    let m2 = grad_cam(model, &transformed, None)?;
    let m2_values = match inverse_warp_grid(light, &m2.values, m2.height, m2.width) {
        Some(warped) => warped,
        None => m2.values,
    };
    let product: Vec<f32> = m1
        .values
        .iter()
        .zip(&m2_values)
        .map(|(a, b)| a * b)
        .collect();
    Ok(finish_map(
        product,
        img.height(),
        img.width(),
        m1.source_layer,
    ))
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ClassifierHead, Encoder, EncoderConfig, SaliencyModel};
    use crate::rng::stream;
    use crate::transforms::TransformOp;
    use rand::Rng;

    fn toy_model() -> SaliencyModel {
        let cfg = EncoderConfig::default();
        let encoder = Encoder::new(&cfg, stream(31, &[1]));
        let head = ClassifierHead::new(64, 16, 4, stream(31, &[2]));
        SaliencyModel { encoder, head }
    }

    fn random_image(seed: u64) -> Image {
        let mut rng = stream(seed, &[7]);
        let mut img = Image::new(3, 32, 32);
        for v in img.data_mut() {
            *v = rng.gen_range(0.0..=1.0);
        }
        img
    }

    #[test]
    fn single_cell_positive_map_is_all_ones() {
        let mut acts = BatchTensor::new(1, 1, 1, 1);
        acts.data[0] = 0.7;
        let map = weighted_cam(&acts, &[2.0], 8, 8);
        assert!(!map.uniform_fallback);
        assert!(map.values.iter().all(|v| (*v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn nonpositive_weighted_sum_falls_back_to_uniform() {
        let mut acts = BatchTensor::new(2, 1, 3, 3);
        for v in &mut acts.data {
            *v = 1.0;
        }
        let map = weighted_cam(&acts, &[-1.0, -0.5], 6, 6);
        assert!(map.uniform_fallback);
        let v0 = map.values[0];
        assert!(map.values.iter().all(|v| *v == v0));
    }

    #[test]
    fn toy_two_channel_map_matches_hand_computation() {
        // Head: hidden = pooled (w1 = I, b1 = 1 keeps ReLU in its linear
        // region), class-0 row of w2 = [2, -1]. Then d(score)/d(pooled) =
        // [2, -1] and alpha = [2/16, -1/16].
        let head = ClassifierHead {
            in_dim: 2,
            hidden: 2,
            classes: 2,
            w1: vec![1.0, 0.0, 0.0, 1.0],
            b1: vec![1.0, 1.0],
            w2: vec![2.0, -1.0, 0.0, 0.0],
            b2: vec![0.0, 0.0],
        };
        let mut acts = BatchTensor::new(2, 1, 4, 4);
        for (i, v) in acts.data.iter_mut().enumerate() {
            *v = (i % 5) as f32 / 4.0;
        }
        let pooled = acts.spatial_mean();
        let (_s, g) = head.score_and_input_grad(&pooled, 0);
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] + 1.0).abs() < 1e-6);
        let alphas: Vec<f32> = g.iter().map(|v| v / 16.0).collect();
        let map = weighted_cam(&acts, &alphas, 4, 4);
        // Independent per-pixel recomputation.
        let mut expected = vec![0.0f32; 16];
        for i in 0..16 {
            let raw = (2.0 * acts.plane(0, 0)[i] - acts.plane(1, 0)[i]) / 16.0;
            expected[i] = raw.max(0.0);
        }
        let max = expected.iter().cloned().fold(0.0f32, f32::max);
        for (got, want) in map.values.iter().zip(expected.iter().map(|v| v / max)) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn maps_are_normalized() {
        let model = toy_model();
        for s in 0..8u64 {
            let img = random_image(s);
            let map = grad_cam(&model, &img, None).unwrap();
            assert_eq!(map.height, 32);
            assert_eq!(map.width, 32);
            assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
            let max = map.values.iter().cloned().fold(0.0f32, f32::max);
            let first = map.values[0];
            assert!(
                (max - 1.0).abs() < 1e-6 || map.values.iter().all(|v| *v == first),
                "map neither max-normalized nor uniform"
            );
        }
    }

    #[test]
    fn target_out_of_range_is_input_error() {
        let model = toy_model();
        let img = random_image(3);
        assert!(grad_cam(&model, &img, Some(99)).is_err());
    }

    #[test]
    fn identity_jitter_product_is_normalized_square() {
        let model = toy_model();
        let img = random_image(11);
        let light = TransformSpec {
            op: TransformOp::ColorJitter {
                brightness: 1.0,
                contrast: 1.0,
                saturation: 1.0,
            },
        };
        let base = grad_cam(&model, &img, None).unwrap();
        let prod = style_agnostic_saliency(&model, &img, &light).unwrap();
        let mut expected: Vec<f32> = base.values.iter().map(|v| v * v).collect();
        let max = expected.iter().cloned().fold(0.0f32, f32::max);
        if max > 0.0 {
            for v in &mut expected {
                *v /= max;
            }
            for (a, b) in prod.values.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn product_oracle_matches_direct_loop() {
        // The product path must equal an independent multiply-then-normalize.
        let model = toy_model();
        let img = random_image(13);
        let light = TransformSpec {
            op: TransformOp::Blur { sigma: 0.6 },
        };
        let prod = style_agnostic_saliency(&model, &img, &light).unwrap();
        let m1 = grad_cam(&model, &img, None).unwrap();
        let blurred = apply(&light, &img).unwrap();
        let m2 = grad_cam(&model, &blurred, None).unwrap();
        let mut expected: Vec<f64> = m1
            .values
            .iter()
            .zip(&m2.values)
            .map(|(a, b)| *a as f64 * *b as f64)
            .collect();
        let max = expected.iter().cloned().fold(0.0f64, f64::max);
        assert!(max > 0.0);
        for v in &mut expected {
            *v /= max;
        }
        for (a, b) in prod.values.iter().zip(&expected) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn hflip_geometric_consistency() {
        let model = toy_model();
        let img = random_image(17);
        let light = TransformSpec {
            op: TransformOp::HorizontalFlip,
        };
        let a = style_agnostic_saliency(&model, &img, &light).unwrap();
        let flipped = apply(&light, &img).unwrap();
        let b = style_agnostic_saliency(&model, &flipped, &light).unwrap();
        // b flipped back equals a.
        for y in 0..32 {
            for x in 0..32 {
                let got = b.at(y, 31 - x);
                assert!(
                    (a.at(y, x) - got).abs() < 1e-6,
                    "mismatch at ({y},{x}): {} vs {got}",
                    a.at(y, x)
                );
            }
        }
    }

    #[test]
    fn backbone_gradient_matches_finite_differences() {
        // Perturb final-stage activations; d(score)/d(act) = d(score)/d(pooled) / (h*w).
        let model = toy_model();
        let img = random_image(23);
        let batch = batch_from_images(&[&img]).unwrap();
        let taps = model.encoder.forward(&batch);
        let tap = taps.last().unwrap();
        let pooled = tap.spatial_mean();
        let target = 1usize;
        let (_s, d_pooled) = model.head.score_and_input_grad(&pooled, target);
        let hw = (tap.h * tap.w) as f64;

        let pooled64: Vec<f64> = pooled.iter().map(|v| *v as f64).collect();
        let eps = 1e-3f64;
        let mut checked = 0;
        let mut ok = 0;
        for k in 0..tap.c {
            let analytic = d_pooled[k] as f64 / hw;
            if analytic.abs() <= 1e-4 {
                continue;
            }
            // Perturbing one activation cell changes pooled[k] by eps / hw.
            let mut up = pooled64.clone();
            up[k] += eps / hw;
            let mut down = pooled64.clone();
            down[k] -= eps / hw;
            let fd = (model.head.score_f64(&up, target) - model.head.score_f64(&down, target))
                / (2.0 * eps);
            checked += 1;
            if (fd - analytic).abs() <= 1e-3 * analytic.abs().max(fd.abs()) {
                ok += 1;
            }
        }
        assert!(checked > 0);
        assert!(
            ok as f64 >= 0.95 * checked as f64,
            "only {ok}/{checked} gradient coordinates matched"
        );
    }
}
