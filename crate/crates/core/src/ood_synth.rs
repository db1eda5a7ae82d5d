//! Auxiliary-OOD generation G(.): square core-mask selection over the
//! saliency map and hard-transform compositing of the selected region.

use crate::error::{Error, Result};
use crate::image_data::Image;
use crate::nn::SaliencyModel;
use crate::rng::{stream, tag};
use crate::saliency::{style_agnostic_saliency, SaliencyMap};
use crate::transforms::{apply, TransformRegistry, TransformSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Axis-aligned square core mask with area fraction `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreMask {
    pub height: usize,
    pub width: usize,
    /// Top-left corner of the selected window.
    pub anchor: (usize, usize),
    /// Window side; `side == 0` encodes the degenerate empty mask.
    pub side: usize,
    pub alpha: f32,
}

impl CoreMask {
    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.anchor.0
            && y < self.anchor.0 + self.side
            && x >= self.anchor.1
            && x < self.anchor.1 + self.side
    }

    pub fn covered_area(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    /// Dense 0/1 grid, row-major H x W.
    pub fn to_grid(&self) -> Vec<u8> {
        let mut grid = vec![0u8; self.height * self.width];
        for y in self.anchor.0..self.anchor.0 + self.side {
            for x in self.anchor.1..self.anchor.1 + self.side {
                grid[y * self.width + x] = 1;
            }
        }
        grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodStrategy {
    /// Saliency-guided core window (the default pipeline).
    Core,
    /// Whole-image hard transform, no mask (ablation baseline).
    Global,
    /// Uniformly random window anchor (CutPaste-like ablation).
    RandomRegion,
}

impl OodStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "core" => OodStrategy::Core,
            "global" => OodStrategy::Global,
            "random_region" => OodStrategy::RandomRegion,
            other => return Err(Error::config(format!("unknown ood strategy `{other}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            OodStrategy::Core => "core",
            OodStrategy::Global => "global",
            OodStrategy::RandomRegion => "random_region",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OodConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// How many hard transforms to compose (1 or 2).
    pub hard_count: usize,
    pub strategy: OodStrategy,
}

impl Default for OodConfig {
    fn default() -> Self {
        OodConfig {
            alpha_min: 0.20,
            alpha_max: 0.50,
            hard_count: 2,
            strategy: OodStrategy::Core,
        }
    }
}

/// Window side for an area fraction: `round(sqrt(alpha * H * W))`, clipped.
pub fn window_side(alpha: f64, height: usize, width: usize) -> usize {
    let side = (alpha * (height * width) as f64).sqrt().round() as usize;
    side.min(height.min(width))
}

/// Best square window over the saliency map: maximal sum of values inside,
/// ties broken by the smallest row-major anchor index. Dense stride-1 search
/// over a 2-D prefix-sum table.
pub fn select_core_mask(sm: &SaliencyMap, alpha: f64) -> Result<CoreMask> {
    if alpha <= 0.0 || alpha > 1.0 {
        return Err(Error::input(format!("alpha {alpha} outside (0, 1]")));
    }
    let (h, w) = (sm.height, sm.width);
    if alpha * ((h * w) as f64) < 1.0 {
        return Err(Error::input("alpha * H * W must be at least 1"));
    }
    let side = window_side(alpha, h, w);
    // Inclusive-exclusive prefix table: p[y][x] = sum over [0,y) x [0,x).
    let mut prefix = vec![0.0f64; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            prefix[(y + 1) * (w + 1) + (x + 1)] = sm.values[y * w + x] as f64
                + prefix[y * (w + 1) + (x + 1)]
                + prefix[(y + 1) * (w + 1) + x]
                - prefix[y * (w + 1) + x];
        }
    }
    let window_sum = |y0: usize, x0: usize| -> f64 {
        let (y1, x1) = (y0 + side, x0 + side);
        prefix[y1 * (w + 1) + x1] - prefix[y0 * (w + 1) + x1] - prefix[y1 * (w + 1) + x0]
            + prefix[y0 * (w + 1) + x0]
    };
    let mut best = (0usize, 0usize);
    let mut best_sum = f64::NEG_INFINITY;
    for y0 in 0..=(h - side) {
        for x0 in 0..=(w - side) {
            let s = window_sum(y0, x0);
            if s > best_sum {
                best_sum = s;
                best = (y0, x0);
            }
        }
    }
    Ok(CoreMask {
        height: h,
        width: w,
        anchor: best,
        side,
        alpha: alpha as f32,
    })
}

fn compose_hard(crop: &Image, first: &TransformSpec, second: Option<&TransformSpec>) -> Result<Image> {
    // x_ood = tau1(tau2(crop)): the second-drawn transform runs first.
    let inner = match second {
        Some(t2) => apply(t2, crop)?,
        None => crop.clone(),
    };
    apply(first, &inner)
}

/// Composite a crafted window back into the image. Pixels outside the mask
/// are bit-identical to the input.
fn composite(img: &Image, mask: &CoreMask, crafted_crop: &Image) -> Result<Image> {
    let mut out = img.clone();
    out.paste(crafted_crop, mask.anchor.0, mask.anchor.1)?;
    Ok(out)
}

fn draw_alpha(cfg: &OodConfig, rng: &mut ChaCha8Rng) -> f64 {
    if cfg.alpha_max <= cfg.alpha_min {
        cfg.alpha_min
    } else {
        rng.gen_range(cfg.alpha_min..=cfg.alpha_max)
    }
}

/// Distort the masked window of `img` with sampled hard transforms. The crop
/// is cut out first, transformed, then pasted back, so pixels outside the
/// window never change.
pub fn craft_with_mask(
    img: &Image,
    mask: &CoreMask,
    registry: &TransformRegistry,
    cfg: &OodConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Image> {
    if mask.is_empty() {
        return Ok(img.clone());
    }
    let (first, second) = registry.sample_hard_pair_for_side(rng, mask.side)?;
    let crop = img.crop(mask.anchor.0, mask.anchor.1, mask.side, mask.side)?;
    let crafted = compose_hard(
        &crop,
        &first,
        (cfg.hard_count >= 2).then_some(&second),
    )?;
    composite(img, mask, &crafted)
}

/// Saliency-guided auxiliary-OOD crafting: draws alpha, computes the
/// style-agnostic saliency map, selects the core window, distorts it.
pub fn craft_ood(
    img: &Image,
    model: &SaliencyModel,
    registry: &TransformRegistry,
    cfg: &OodConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Image, CoreMask)> {
    let light = registry.sample_light(rng)?;
    let sm = style_agnostic_saliency(model, img, &light)?;
    craft_ood_from_saliency(img, &sm, registry, cfg, rng)
}

/// Crafting against a precomputed (cached) saliency map.
pub fn craft_ood_from_saliency(
    img: &Image,
    sm: &SaliencyMap,
    registry: &TransformRegistry,
    cfg: &OodConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Image, CoreMask)> {
    let alpha = draw_alpha(cfg, rng);
    if window_side(alpha, img.height(), img.width()) == 0 {
        // Degenerate test hook: an empty mask leaves the input untouched.
        let mask = CoreMask {
            height: img.height(),
            width: img.width(),
            anchor: (0, 0),
            side: 0,
            alpha: alpha as f32,
        };
        return Ok((img.clone(), mask));
    }
    let mask = select_core_mask(sm, alpha)?;
    let out = craft_with_mask(img, &mask, registry, cfg, rng)?;
    Ok((out, mask))
}

/// Ablation baseline: hard-transform the whole image, no mask.
pub fn craft_ood_global(
    img: &Image,
    registry: &TransformRegistry,
    cfg: &OodConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Image> {
    let side = img.height().min(img.width());
    let (first, second) = registry.sample_hard_pair_for_side(rng, side)?;
    compose_hard(img, &first, (cfg.hard_count >= 2).then_some(&second))
}

/// Ablation baseline: same compositing but a uniformly random window anchor.
pub fn craft_ood_random_region(
    img: &Image,
    registry: &TransformRegistry,
    cfg: &OodConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Image, CoreMask)> {
    let alpha = draw_alpha(cfg, rng);
    let (h, w) = (img.height(), img.width());
    let side = window_side(alpha, h, w);
    if side == 0 {
        let mask = CoreMask {
            height: h,
            width: w,
            anchor: (0, 0),
            side: 0,
            alpha: alpha as f32,
        };
        return Ok((img.clone(), mask));
    }
    let y0 = rng.gen_range(0..=(h - side));
    let x0 = rng.gen_range(0..=(w - side));
    let mask = CoreMask {
        height: h,
        width: w,
        anchor: (y0, x0),
        side,
        alpha: alpha as f32,
    };
    let out = craft_with_mask(img, &mask, registry, cfg, rng)?;
    Ok((out, mask))
}

/// Seeded stream for one sample's crafting in one epoch.
pub fn craft_stream(base_seed: u64, epoch: usize, sample: usize) -> ChaCha8Rng {
    stream(base_seed, &[tag::AOOD, epoch as u64, sample as u64])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn map_from(values: Vec<f32>, h: usize, w: usize) -> SaliencyMap {
        SaliencyMap {
            height: h,
            width: w,
            values,
            source_layer: "test".into(),
            uniform_fallback: false,
        }
    }

    fn random_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = stream(seed, &[55]);
        let mut img = Image::new(3, h, w);
        for v in img.data_mut() {
            *v = rng.gen_range(0.0..=1.0);
        }
        img
    }

    /// Exhaustive direct-summation oracle for window selection.
    fn oracle_select(sm: &SaliencyMap, alpha: f64) -> CoreMask {
        let side = window_side(alpha, sm.height, sm.width);
        let mut best = (0usize, 0usize);
        let mut best_sum = f64::NEG_INFINITY;
        for y0 in 0..=(sm.height - side) {
            for x0 in 0..=(sm.width - side) {
                let mut s = 0.0f64;
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        s += sm.values[y * sm.width + x] as f64;
                    }
                }
                if s > best_sum {
                    best_sum = s;
                    best = (y0, x0);
                }
            }
        }
        CoreMask {
            height: sm.height,
            width: sm.width,
            anchor: best,
            side,
            alpha: alpha as f32,
        }
    }

    #[test]
    fn full_alpha_covers_everything() {
        let sm = map_from(vec![1.0; 16], 4, 4);
        let mask = select_core_mask(&sm, 1.0).unwrap();
        assert_eq!(mask.anchor, (0, 0));
        assert_eq!(mask.side, 4);
        assert!(mask.to_grid().iter().all(|v| *v == 1));
    }

    #[test]
    fn hot_block_is_found() {
        let mut values = vec![0.0f32; 16];
        for y in 1..3 {
            for x in 1..3 {
                values[y * 4 + x] = 1.0;
            }
        }
        let sm = map_from(values, 4, 4);
        let mask = select_core_mask(&sm, 0.25).unwrap();
        assert_eq!(mask.side, 2);
        assert_eq!(mask.anchor, (1, 1));
    }

    #[test]
    fn uniform_map_tie_breaks_to_origin() {
        let sm = map_from(vec![1.0; 16], 4, 4);
        let mask = select_core_mask(&sm, 0.25).unwrap();
        assert_eq!(mask.anchor, (0, 0));
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        let sm = map_from(vec![1.0; 16], 4, 4);
        assert!(select_core_mask(&sm, 0.0).is_err());
        assert!(select_core_mask(&sm, -0.2).is_err());
        assert!(select_core_mask(&sm, 1.2).is_err());
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_maps() {
        for seed in 0..60u64 {
            let mut rng = stream(seed, &[66]);
            let h = rng.gen_range(5..=32);
            let w = rng.gen_range(5..=32);
            let values: Vec<f32> = (0..h * w).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let sm = map_from(values, h, w);
            for &alpha in &[0.1, 0.25, 0.5, 0.9] {
                if alpha * ((h * w) as f64) < 1.0 {
                    continue;
                }
                let got = select_core_mask(&sm, alpha).unwrap();
                let want = oracle_select(&sm, alpha);
                assert_eq!(got.anchor, want.anchor, "seed {seed} alpha {alpha}");
                assert_eq!(got.side, want.side);
            }
        }
    }

    #[test]
    fn craft_with_empty_mask_is_identity() {
        let img = random_image(1, 32, 32);
        let registry = TransformRegistry::default();
        let cfg = OodConfig {
            alpha_min: 0.0,
            alpha_max: 0.0,
            ..OodConfig::default()
        };
        let sm = map_from(vec![1.0; 32 * 32], 32, 32);
        let mut rng = stream(2, &[1]);
        let (out, mask) = craft_ood_from_saliency(&img, &sm, &registry, &cfg, &mut rng).unwrap();
        assert!(mask.is_empty());
        assert_eq!(out, img);
    }

    #[test]
    fn full_mask_equals_global_composition() {
        let img = random_image(3, 32, 32);
        let registry = TransformRegistry::default();
        let cfg = OodConfig {
            alpha_min: 1.0,
            alpha_max: 1.0,
            ..OodConfig::default()
        };
        let sm = map_from(vec![1.0; 32 * 32], 32, 32);
        // Same rng stream: the mask-based path must equal tau1(tau2(img)).
        let mut rng1 = stream(4, &[2]);
        let (out, mask) = craft_ood_from_saliency(&img, &sm, &registry, &cfg, &mut rng1).unwrap();
        assert_eq!(mask.side, 32);
        let mut rng2 = stream(4, &[2]);
        let _alpha = super::draw_alpha(&cfg, &mut rng2);
        let expected = craft_ood_global(&img, &registry, &cfg, &mut rng2).unwrap();
        assert_eq!(out, expected);
    }

    #[test]
    fn outside_mask_pixels_unchanged_and_formula_holds() {
        let registry = TransformRegistry::default();
        let cfg = OodConfig::default();
        for seed in 0..25u64 {
            let img = random_image(seed, 32, 32);
            let sm = {
                let mut rng = stream(seed, &[77]);
                map_from((0..32 * 32).map(|_| rng.gen_range(0.0..=1.0)).collect(), 32, 32)
            };
            let mut rng = stream(seed, &[5]);
            let (out, mask) = craft_ood_from_saliency(&img, &sm, &registry, &cfg, &mut rng).unwrap();
            // Independent per-pixel compositing oracle: replay the transform
            // draw, craft the crop separately, compare every pixel.
            let mut rng2 = stream(seed, &[5]);
            let _alpha = super::draw_alpha(&cfg, &mut rng2);
            let (first, second) = registry
                .sample_hard_pair_for_side(&mut rng2, mask.side)
                .unwrap();
            let crop = img
                .crop(mask.anchor.0, mask.anchor.1, mask.side, mask.side)
                .unwrap();
            let crafted = apply(&first, &apply(&second, &crop).unwrap()).unwrap();
            for c in 0..3 {
                for y in 0..32 {
                    for x in 0..32 {
                        let expected = if mask.contains(y, x) {
                            crafted.get(c, y - mask.anchor.0, x - mask.anchor.1)
                        } else {
                            img.get(c, y, x)
                        };
                        assert_eq!(out.get(c, y, x), expected, "pixel ({c},{y},{x})");
                    }
                }
            }
        }
    }

    #[test]
    fn global_on_constant_channel_shuffle_is_invariant() {
        let mut img = Image::new(3, 16, 16);
        for v in img.data_mut() {
            *v = 0.5;
        }
        // Channel shuffles are exact permutations: a constant image is
        // bit-identical under any composition of them.
        let registry = TransformRegistry::new(
            vec![],
            vec![crate::transforms::TransformKind::ChannelShuffle],
        )
        .unwrap();
        let cfg = OodConfig::default();
        for seed in 0..10u64 {
            let mut rng = stream(seed, &[6]);
            let out = craft_ood_global(&img, &registry, &cfg, &mut rng).unwrap();
            assert_eq!(out, img);
        }
    }

    #[test]
    fn global_changes_random_images() {
        let registry = TransformRegistry::default();
        let cfg = OodConfig::default();
        for seed in 0..10u64 {
            let img = random_image(seed + 100, 32, 32);
            let mut rng = stream(seed, &[7]);
            let out = craft_ood_global(&img, &registry, &cfg, &mut rng).unwrap();
            assert_ne!(out, img);
        }
    }

    #[test]
    fn random_region_anchor_is_roughly_uniform() {
        let registry = TransformRegistry::default();
        let cfg = OodConfig {
            alpha_min: 0.25,
            alpha_max: 0.25,
            ..OodConfig::default()
        };
        let img = random_image(9, 16, 16);
        // side = round(sqrt(0.25 * 256)) = 8 -> anchors in 0..=8 per axis.
        let bins = 9 * 9;
        let draws = 10_000;
        let mut counts = vec![0usize; bins];
        for i in 0..draws {
            let mut rng = stream(1234, &[8, i as u64]);
            let (_out, mask) = craft_ood_random_region(&img, &registry, &cfg, &mut rng).unwrap();
            counts[mask.anchor.0 * 9 + mask.anchor.1] += 1;
        }
        // Chi-squared against uniform; df = 80, p = 0.01 threshold ~ 112.3.
        let expected = draws as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 112.3, "chi2 = {chi2}");
    }

    #[test]
    fn crafting_is_deterministic() {
        let registry = TransformRegistry::default();
        let cfg = OodConfig::default();
        let img = random_image(10, 32, 32);
        let sm = map_from(vec![0.5; 32 * 32], 32, 32);
        let a = craft_ood_from_saliency(&img, &sm, &registry, &cfg, &mut stream(3, &[9])).unwrap();
        let b = craft_ood_from_saliency(&img, &sm, &registry, &cfg, &mut stream(3, &[9])).unwrap();
        assert_eq!(a, b);
    }
}
