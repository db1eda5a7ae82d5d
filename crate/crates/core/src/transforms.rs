//! Light (semantics-preserving) and hard (semantics-destroying) image
//! transformations. Every transform is a pure function of its sampled
//! parameters, so re-applying a spec to the same image is bit-identical.

use crate::error::{Error, Result};
use crate::image_data::Image;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Light,
    Hard,
}

/// Registered transform names. Each kind belongs to exactly one family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    ColorJitter,
    HorizontalFlip,
    Grayscale,
    Blur,
    Translate,
    Rotation,
    Elastic,
    GridDistortion,
    ChannelShuffle,
    PatchShuffle,
}

impl TransformKind {
    pub fn family(self) -> Family {
        match self {
            TransformKind::ColorJitter
            | TransformKind::HorizontalFlip
            | TransformKind::Grayscale
            | TransformKind::Blur
            | TransformKind::Translate => Family::Light,
            TransformKind::Rotation
            | TransformKind::Elastic
            | TransformKind::GridDistortion
            | TransformKind::ChannelShuffle
            | TransformKind::PatchShuffle => Family::Hard,
        }
    }

    /// Smallest square side the transform is defined on.
    pub fn min_side(self) -> usize {
        match self {
            TransformKind::Elastic | TransformKind::GridDistortion => 8,
            TransformKind::Blur | TransformKind::Translate | TransformKind::PatchShuffle => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::ColorJitter => "color-jitter",
            TransformKind::HorizontalFlip => "horizontal-flip",
            TransformKind::Grayscale => "grayscale",
            TransformKind::Blur => "blur",
            TransformKind::Translate => "translate",
            TransformKind::Rotation => "rotation",
            TransformKind::Elastic => "elastic",
            TransformKind::GridDistortion => "grid-distortion",
            TransformKind::ChannelShuffle => "channel-shuffle",
            TransformKind::PatchShuffle => "patch-shuffle",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "color-jitter" => TransformKind::ColorJitter,
            "horizontal-flip" => TransformKind::HorizontalFlip,
            "grayscale" => TransformKind::Grayscale,
            "blur" => TransformKind::Blur,
            "translate" => TransformKind::Translate,
            "rotation" => TransformKind::Rotation,
            "elastic" => TransformKind::Elastic,
            "grid-distortion" => TransformKind::GridDistortion,
            "channel-shuffle" => TransformKind::ChannelShuffle,
            "patch-shuffle" => TransformKind::PatchShuffle,
            other => return Err(Error::config(format!("unknown transform kind `{other}`"))),
        })
    }
}

/// A transform kind with concrete sampled parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformOp {
    /// Multiplicative brightness, mean-anchored contrast, luminance-anchored
    /// saturation; a factor of 1.0 is the identity for each component.
    ColorJitter {
        brightness: f32,
        contrast: f32,
        saturation: f32,
    },
    HorizontalFlip,
    Grayscale,
    /// Separable Gaussian, radius 2 px, edge-clamped.
    Blur { sigma: f32 },
    /// Integer-pixel shift with replicated borders; fractions of image size.
    Translate { dx_frac: f32, dy_frac: f32 },
    /// Quarter turns counterclockwise in {1, 2, 3}; exact index permutation.
    Rotation { quarter_turns: u8 },
    /// Coarse random displacement field, bilinearly upsampled and sampled
    /// with edge clamping. `amplitude` is a fraction of min(H, W).
    Elastic { amplitude: f32, seed: u64 },
    /// Separable piecewise-linear axis remap over `cells` segments whose
    /// widths are jittered by `magnitude`.
    GridDistortion { cells: u8, magnitude: f32, seed: u64 },
    /// Non-identity permutation of the three color planes.
    ChannelShuffle { perm: [u8; 3] },
    /// Non-identity permutation of the four image quadrants.
    PatchShuffle { perm: [u8; 4] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    pub op: TransformOp,
}

impl TransformSpec {
    pub fn kind(&self) -> TransformKind {
        match self.op {
            TransformOp::ColorJitter { .. } => TransformKind::ColorJitter,
            TransformOp::HorizontalFlip => TransformKind::HorizontalFlip,
            TransformOp::Grayscale => TransformKind::Grayscale,
            TransformOp::Blur { .. } => TransformKind::Blur,
            TransformOp::Translate { .. } => TransformKind::Translate,
            TransformOp::Rotation { .. } => TransformKind::Rotation,
            TransformOp::Elastic { .. } => TransformKind::Elastic,
            TransformOp::GridDistortion { .. } => TransformKind::GridDistortion,
            TransformOp::ChannelShuffle { .. } => TransformKind::ChannelShuffle,
            TransformOp::PatchShuffle { .. } => TransformKind::PatchShuffle,
        }
    }

    pub fn family(&self) -> Family {
        self.kind().family()
    }

    /// True for transforms that move pixels by a coordinate map and therefore
    /// need a warp-back when comparing saliency across the transform.
    pub fn is_geometric(&self) -> bool {
        matches!(
            self.op,
            TransformOp::HorizontalFlip | TransformOp::Translate { .. }
        )
    }
}

/// Which kinds are available to each family's sampler.
#[derive(Debug, Clone)]
pub struct TransformRegistry {
    light: Vec<TransformKind>,
    hard: Vec<TransformKind>,
}

impl Default for TransformRegistry {
    fn default() -> Self {
        TransformRegistry {
            light: vec![
                TransformKind::ColorJitter,
                TransformKind::HorizontalFlip,
                TransformKind::Grayscale,
                TransformKind::Blur,
                TransformKind::Translate,
            ],
            hard: vec![
                TransformKind::Rotation,
                TransformKind::Elastic,
                TransformKind::GridDistortion,
                TransformKind::ChannelShuffle,
                TransformKind::PatchShuffle,
            ],
        }
    }
}

impl TransformRegistry {
    pub fn new(light: Vec<TransformKind>, hard: Vec<TransformKind>) -> Result<Self> {
        for &k in &light {
            if k.family() != Family::Light {
                return Err(Error::config(format!(
                    "`{}` is a hard transform and cannot join the light family",
                    k.name()
                )));
            }
        }
        for &k in &hard {
            if k.family() != Family::Hard {
                return Err(Error::config(format!(
                    "`{}` is a light transform and cannot join the hard family",
                    k.name()
                )));
            }
        }
        Ok(TransformRegistry { light, hard })
    }

    pub fn light_kinds(&self) -> &[TransformKind] {
        &self.light
    }
    pub fn hard_kinds(&self) -> &[TransformKind] {
        &self.hard
    }

    /// Draw a light transform with parameters uniform over its range.
    pub fn sample_light(&self, rng: &mut ChaCha8Rng) -> Result<TransformSpec> {
        if self.light.is_empty() {
            return Err(Error::config("light transform registry is empty"));
        }
        let kind = self.light[rng.gen_range(0..self.light.len())];
        Ok(sample_params(kind, rng))
    }

    /// Draw two hard transforms; the pair may repeat a kind with fresh params.
    pub fn sample_hard_pair(&self, rng: &mut ChaCha8Rng) -> Result<(TransformSpec, TransformSpec)> {
        if self.hard.len() < 2 {
            return Err(Error::config(
                "hard transform registry needs at least two members",
            ));
        }
        let a = self.hard[rng.gen_range(0..self.hard.len())];
        let b = self.hard[rng.gen_range(0..self.hard.len())];
        Ok((sample_params(a, rng), sample_params(b, rng)))
    }

    /// Like `sample_hard_pair` but restricted to kinds defined on crops of
    /// side `min_side` (small crops exclude the warp-based transforms).
    pub fn sample_hard_pair_for_side(
        &self,
        rng: &mut ChaCha8Rng,
        side: usize,
    ) -> Result<(TransformSpec, TransformSpec)> {
        let valid: Vec<TransformKind> = self
            .hard
            .iter()
            .copied()
            .filter(|k| k.min_side() <= side)
            .collect();
        if valid.is_empty() {
            return Err(Error::config(format!(
                "no hard transform is defined on side {side}"
            )));
        }
        let a = valid[rng.gen_range(0..valid.len())];
        let b = valid[rng.gen_range(0..valid.len())];
        Ok((sample_params(a, rng), sample_params(b, rng)))
    }
}

const NON_IDENTITY_PERM3: [[u8; 3]; 5] = [
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

fn sample_params(kind: TransformKind, rng: &mut ChaCha8Rng) -> TransformSpec {
    let op = match kind {
        TransformKind::ColorJitter => TransformOp::ColorJitter {
            brightness: rng.gen_range(0.6..=1.4),
            contrast: rng.gen_range(0.6..=1.4),
            saturation: rng.gen_range(0.6..=1.4),
        },
        TransformKind::HorizontalFlip => TransformOp::HorizontalFlip,
        TransformKind::Grayscale => TransformOp::Grayscale,
        TransformKind::Blur => TransformOp::Blur {
            sigma: rng.gen_range(0.3..=1.0),
        },
        TransformKind::Translate => TransformOp::Translate {
            dx_frac: rng.gen_range(-0.1..=0.1),
            dy_frac: rng.gen_range(-0.1..=0.1),
        },
        TransformKind::Rotation => TransformOp::Rotation {
            quarter_turns: rng.gen_range(1..=3),
        },
        TransformKind::Elastic => TransformOp::Elastic {
            amplitude: rng.gen_range(0.10..=0.20),
            seed: rng.gen(),
        },
        TransformKind::GridDistortion => TransformOp::GridDistortion {
            cells: rng.gen_range(3..=5),
            magnitude: rng.gen_range(0.2..=0.4),
            seed: rng.gen(),
        },
        TransformKind::ChannelShuffle => TransformOp::ChannelShuffle {
            perm: NON_IDENTITY_PERM3[rng.gen_range(0..NON_IDENTITY_PERM3.len())],
        },
        TransformKind::PatchShuffle => {
            // Rejection-sample a non-identity permutation of 4 quadrants.
            let perm = loop {
                let mut p = [0u8, 1, 2, 3];
                for i in (1..4).rev() {
                    p.swap(i, rng.gen_range(0..=i));
                }
                if p != [0, 1, 2, 3] {
                    break p;
                }
            };
            TransformOp::PatchShuffle { perm }
        }
    };
    TransformSpec { op }
}

/// Apply a transform. Output has the input's shape and values in [0, 1].
pub fn apply(spec: &TransformSpec, img: &Image) -> Result<Image> {
    let side = img.height().min(img.width());
    let min = spec.kind().min_side();
    if side < min {
        return Err(Error::input(format!(
            "`{}` needs at least {min}x{min} pixels, got {}x{}",
            spec.kind().name(),
            img.height(),
            img.width()
        )));
    }
    let mut out = match &spec.op {
        TransformOp::ColorJitter {
            brightness,
            contrast,
            saturation,
        } => color_jitter(img, *brightness, *contrast, *saturation),
        TransformOp::HorizontalFlip => hflip(img),
        TransformOp::Grayscale => grayscale(img),
        TransformOp::Blur { sigma } => blur(img, *sigma),
        TransformOp::Translate { dx_frac, dy_frac } => {
            let dx = (dx_frac * img.width() as f32).round() as isize;
            let dy = (dy_frac * img.height() as f32).round() as isize;
            translate(img, dy, dx)
        }
        TransformOp::Rotation { quarter_turns } => rotate(img, *quarter_turns)?,
        TransformOp::Elastic { amplitude, seed } => elastic(img, *amplitude, *seed),
        TransformOp::GridDistortion {
            cells,
            magnitude,
            seed,
        } => grid_distortion(img, *cells, *magnitude, *seed),
        TransformOp::ChannelShuffle { perm } => channel_shuffle(img, perm)?,
        TransformOp::PatchShuffle { perm } => patch_shuffle(img, perm),
    };
    out.clip01();
    Ok(out)
}

/// Undo the coordinate map of a geometric light transform on a scalar grid.
/// Returns `None` for transforms that do not move pixels.
pub fn inverse_warp_grid(
    spec: &TransformSpec,
    grid: &[f32],
    height: usize,
    width: usize,
) -> Option<Vec<f32>> {
    match spec.op {
        TransformOp::HorizontalFlip => {
            let mut out = vec![0.0; grid.len()];
            for y in 0..height {
                for x in 0..width {
                    out[y * width + x] = grid[y * width + (width - 1 - x)];
                }
            }
            Some(out)
        }
        TransformOp::Translate { dx_frac, dy_frac } => {
            let dx = (dx_frac * width as f32).round() as isize;
            let dy = (dy_frac * height as f32).round() as isize;
            let mut out = vec![0.0; grid.len()];
            for y in 0..height {
                for x in 0..width {
                    // Forward shifted by (+dy, +dx); pull back by sampling at (+dy, +dx).
                    let sy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                    let sx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                    out[y * width + x] = grid[sy * width + sx];
                }
            }
            Some(out)
        }
        _ => None,
    }
}

fn color_jitter(img: &Image, brightness: f32, contrast: f32, saturation: f32) -> Image {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v *= brightness;
    }
    let lum = out.luminance();
    let mean: f32 = lum.iter().sum::<f32>() / lum.len() as f32;
    for v in out.data_mut() {
        *v = mean + (*v - mean) * contrast;
    }
    if img.channels() == 3 {
        let lum = out.luminance();
        let hw = img.height() * img.width();
        for c in 0..3 {
            let plane = out.plane_mut(c);
            for i in 0..hw {
                plane[i] = lum[i] + (plane[i] - lum[i]) * saturation;
            }
        }
    }
    out
}

fn hflip(img: &Image) -> Image {
    let (c_n, h, w) = (img.channels(), img.height(), img.width());
    let mut out = Image::new(c_n, h, w);
    for c in 0..c_n {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, img.get(c, y, w - 1 - x));
            }
        }
    }
    out
}

fn grayscale(img: &Image) -> Image {
    let lum = img.luminance();
    let (c_n, h, w) = (img.channels(), img.height(), img.width());
    let mut out = Image::new(c_n, h, w);
    for c in 0..c_n {
        out.plane_mut(c).copy_from_slice(&lum);
    }
    out
}

fn gaussian_kernel(sigma: f32, radius: usize) -> Vec<f32> {
    let mut k: Vec<f32> = (0..=2 * radius)
        .map(|i| {
            let d = i as f32 - radius as f32;
            (-0.5 * (d / sigma).powi(2)).exp()
        })
        .collect();
    let s: f32 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

fn blur(img: &Image, sigma: f32) -> Image {
    let radius = 2usize;
    let k = gaussian_kernel(sigma.max(1e-3), radius);
    let (c_n, h, w) = (img.channels(), img.height(), img.width());
    let mut tmp = Image::new(c_n, h, w);
    // Horizontal pass, edge-clamped.
    for c in 0..c_n {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sx = (x as isize + i as isize - radius as isize).clamp(0, w as isize - 1);
                    acc += kv * img.get(c, y, sx as usize);
                }
                tmp.set(c, y, x, acc);
            }
        }
    }
    let mut out = Image::new(c_n, h, w);
    for c in 0..c_n {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sy = (y as isize + i as isize - radius as isize).clamp(0, h as isize - 1);
                    acc += kv * tmp.get(c, sy as usize, x);
                }
                out.set(c, y, x, acc);
            }
        }
    }
    out
}

fn translate(img: &Image, dy: isize, dx: isize) -> Image {
    let (c_n, h, w) = (img.channels(), img.height(), img.width());
    let mut out = Image::new(c_n, h, w);
    for c in 0..c_n {
        for y in 0..h {
            for x in 0..w {
                let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
                let sx = (x as isize - dx).clamp(0, w as isize - 1) as usize;
                out.set(c, y, x, img.get(c, sy, sx));
            }
        }
    }
    out
}

fn rotate(img: &Image, quarter_turns: u8) -> Result<Image> {
    let (c_n, h, w) = (img.channels(), img.height(), img.width());
    if quarter_turns % 2 == 1 && h != w {
        return Err(Error::input(
            "rotation by 90/270 degrees requires a square image",
        ));
    }
    let mut out = Image::new(c_n, h, w);
    for c in 0..c_n {
        for y in 0..h {
            for x in 0..w {
                let v = match quarter_turns % 4 {
                    1 => img.get(c, x, w - 1 - y),
                    2 => img.get(c, h - 1 - y, w - 1 - x),
                    3 => img.get(c, h - 1 - x, y),
                    _ => img.get(c, y, x),
                };
                out.set(c, y, x, v);
            }
        }
    }
    Ok(out)
}

#[inline]
fn bilinear(plane: &[f32], h: usize, w: usize, yf: f32, xf: f32) -> f32 {
    let yf = yf.clamp(0.0, (h - 1) as f32);
    let xf = xf.clamp(0.0, (w - 1) as f32);
    let y0 = yf.floor() as usize;
    let x0 = xf.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = yf - y0 as f32;
    let fx = xf - x0 as f32;
    let v00 = plane[y0 * w + x0];
    let v01 = plane[y0 * w + x1];
    let v10 = plane[y1 * w + x0];
    let v11 = plane[y1 * w + x1];
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}

/// Warp by a per-pixel displacement field, bilinear with edge clamping.
fn warp(img: &Image, dy: &[f32], dx: &[f32]) -> Image {
    let (c_n, h, w) = (img.channels(), img.height(), img.width());
    let mut out = Image::new(c_n, h, w);
    for c in 0..c_n {
        let plane = img.plane(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let v = bilinear(plane, h, w, y as f32 + dy[i], x as f32 + dx[i]);
                out.set(c, y, x, v);
            }
        }
    }
    out
}

fn elastic(img: &Image, amplitude: f32, seed: u64) -> Image {
    let (h, w) = (img.height(), img.width());
    let amp = amplitude * h.min(w) as f32;
    let grid = 4usize;
    let mut rng = crate::rng::stream(seed, &[0x51a5]);
    let mut coarse_dy = vec![0.0f32; grid * grid];
    let mut coarse_dx = vec![0.0f32; grid * grid];
    for i in 0..grid * grid {
        coarse_dy[i] = rng.gen_range(-1.0f32..=1.0) * amp;
        coarse_dx[i] = rng.gen_range(-1.0f32..=1.0) * amp;
    }
    let mut dy = vec![0.0f32; h * w];
    let mut dx = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let gy = y as f32 / (h - 1) as f32 * (grid - 1) as f32;
            let gx = x as f32 / (w - 1) as f32 * (grid - 1) as f32;
            dy[y * w + x] = bilinear(&coarse_dy, grid, grid, gy, gx);
            dx[y * w + x] = bilinear(&coarse_dx, grid, grid, gy, gx);
        }
    }
    warp(img, &dy, &dx)
}

fn grid_distortion(img: &Image, cells: u8, magnitude: f32, seed: u64) -> Image {
    let (h, w) = (img.height(), img.width());
    let cells = cells.max(2) as usize;
    let mut rng = crate::rng::stream(seed, &[0x921d]);
    // Jittered monotone breakpoints per axis, normalized to [0, 1].
    let mut axis_map = |n: usize| -> Vec<f32> {
        let mut widths: Vec<f32> = (0..cells)
            .map(|_| 1.0 + rng.gen_range(-magnitude..=magnitude))
            .collect();
        let total: f32 = widths.iter().sum();
        for v in &mut widths {
            *v /= total;
        }
        let mut bounds = vec![0.0f32; cells + 1];
        for i in 0..cells {
            bounds[i + 1] = bounds[i] + widths[i];
        }
        // Source coordinate for each destination pixel: piecewise-linear map
        // from uniform destination cells onto the jittered source cells.
        (0..n)
            .map(|p| {
                let t = p as f32 / (n - 1) as f32;
                let cell = ((t * cells as f32).floor() as usize).min(cells - 1);
                let local = t * cells as f32 - cell as f32;
                let src = bounds[cell] + local * (bounds[cell + 1] - bounds[cell]);
                src * (n - 1) as f32
            })
            .collect()
    };
    let ys = axis_map(h);
    let xs = axis_map(w);
    let (c_n, _, _) = (img.channels(), h, w);
    let mut out = Image::new(c_n, h, w);
    for c in 0..c_n {
        let plane = img.plane(c);
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, bilinear(plane, h, w, ys[y], xs[x]));
            }
        }
    }
    out
}

fn channel_shuffle(img: &Image, perm: &[u8; 3]) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::input("channel shuffle expects 3 channels"));
    }
    let mut out = Image::new(3, img.height(), img.width());
    for c in 0..3 {
        out.plane_mut(c).copy_from_slice(img.plane(perm[c] as usize));
    }
    Ok(out)
}

fn patch_shuffle(img: &Image, perm: &[u8; 4]) -> Image {
    let (h, w) = (img.height(), img.width());
    let (h1, w1) = (h / 2, w / 2);
    let anchors = [(0, 0), (0, w1), (h1, 0), (h1, w1)];
    let mut out = img.clone();
    for (dst, &src) in perm.iter().enumerate() {
        let (sy, sx) = anchors[src as usize];
        let (dy, dx) = anchors[dst];
        let patch = img.crop(sy, sx, h1, w1).expect("quadrant fits");
        out.paste(&patch, dy, dx).expect("quadrant fits");
    }
    out
}
