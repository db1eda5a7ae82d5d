//! Executable structural causal model: a confounder U couples the core
//! latent C (which alone determines the label) with the style latent E
//! (which only dresses the background). Rendering is ψ(X_C, X_E): a
//! parametric shape composited over a parametric background, with Main and
//! Shifted domains using disjoint style ranges.

use crate::error::{Error, Result};
use crate::image_data::Image;
use crate::rng::{stream, stream_key, tag};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Id,
    Ood,
}

impl Label {
    pub fn name(&self) -> &'static str {
        match self {
            Label::Id => "id",
            Label::Ood => "ood",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "id" => Ok(Label::Id),
            "ood" => Ok(Label::Ood),
            other => Err(Error::input(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Main,
    Shifted,
}

impl Domain {
    pub fn name(&self) -> &'static str {
        match self {
            Domain::Main => "main",
            Domain::Shifted => "shifted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(Domain::Main),
            "shifted" => Ok(Domain::Shifted),
            other => Err(Error::input(format!("unknown domain `{other}`"))),
        }
    }
}

/// Shape families. The label is a deterministic function of the core latent,
/// realized as family selection: blobs are ID, crosses are OOD. The four
/// remaining families exist only for teacher pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Blob,
    Cross,
    Ring,
    Diamond,
    HollowSquare,
    Stripes,
}

pub const AUX_FAMILIES: [Family; 4] = [
    Family::Ring,
    Family::Diamond,
    Family::HollowSquare,
    Family::Stripes,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latents {
    pub u: f64,
    pub c: f64,
    pub e: f64,
}

#[derive(Debug, Clone)]
pub struct ScmSample {
    pub id: String,
    pub image: Image,
    pub label: Label,
    pub domain: Domain,
    /// Class index for auxiliary-pretraining samples.
    pub aux_class: Option<usize>,
    /// Present for freshly generated samples; absent after disk round-trips.
    pub latents: Option<Latents>,
    /// Per-sample stream seed recorded for provenance.
    pub sample_seed: u64,
}

#[derive(Debug, Clone)]
pub struct ScmConfig {
    pub seed: u64,
    pub image_size: usize,
    /// ID training samples (exposure ratio splits them across domains).
    pub train_id: usize,
    /// Per-class counts in each test split.
    pub test_id: usize,
    pub test_ood: usize,
    /// Auxiliary pretraining samples per class (4 classes).
    pub aux_per_class: usize,
    /// Coupling strength between style and core through the confounder U.
    pub confounder_strength: f64,
    /// Percentage of shifted-domain samples mixed into the training set.
    pub exposure_percent: u32,
}

impl Default for ScmConfig {
    fn default() -> Self {
        ScmConfig {
            seed: 0,
            image_size: 32,
            train_id: 2000,
            test_id: 400,
            test_ood: 400,
            aux_per_class: 250,
            confounder_strength: 0.9,
            exposure_percent: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<ScmSample>,
    pub test_main: Vec<ScmSample>,
    pub test_shifted: Vec<ScmSample>,
    pub aux_pretrain: Vec<ScmSample>,
}

/// U -> C, U -> E with mixing weight = confounder strength; independent at 0.
pub fn sample_latents(confounder_strength: f64, rng: &mut ChaCha8Rng) -> Latents {
    let u: f64 = rng.gen_range(0.0..1.0);
    let vc: f64 = rng.gen_range(0.0..1.0);
    let ve: f64 = rng.gen_range(0.0..1.0);
    let rho = confounder_strength;
    Latents {
        u,
        c: (1.0 - rho) * vc + rho * u,
        e: (1.0 - rho) * ve + rho * u,
    }
}

/// The label is caused by the core latent alone.
pub fn label_for_core(c: f64) -> Label {
    if c < 0.5 {
        Label::Id
    } else {
        Label::Ood
    }
}

fn family_for_label(label: Label) -> Family {
    match label {
        Label::Id => Family::Blob,
        Label::Ood => Family::Cross,
    }
}

/// Family-local core coordinate in [0, 1].
fn core_t(label: Label, c: f64) -> f64 {
    match label {
        Label::Id => (c / 0.5).clamp(0.0, 1.0),
        Label::Ood => ((c - 0.5) / 0.5).clamp(0.0, 1.0),
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.fract() + 1.0).fract() * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Style rendering: hue band, texture frequency, and brightness are all set
/// by `e` inside disjoint per-domain ranges.
fn background(size: usize, e: f64, domain: Domain) -> Image {
    let (hue_lo, hue_hi, freq_lo, freq_hi) = match domain {
        Domain::Main => (0.04, 0.34, 1.0, 3.0),
        Domain::Shifted => (0.55, 0.85, 4.0, 8.0),
    };
    let hue = hue_lo + e * (hue_hi - hue_lo);
    let freq = freq_lo + e * (freq_hi - freq_lo);
    let value = 0.5 + 0.3 * e;
    let base = hsv_to_rgb(hue, 0.45, value);
    let phase = e * std::f64::consts::TAU;
    let mut img = Image::new(3, size, size);
    for y in 0..size {
        for x in 0..size {
            let u = (y + x) as f64 / size as f64;
            let tex = 1.0 + 0.15 * (std::f64::consts::TAU * freq * u + phase).sin();
            for ch in 0..3 {
                img.set(ch, y, x, (base[ch] * tex).clamp(0.0, 1.0) as f32);
            }
        }
    }
    img
}

fn smoothstep(edge: f64, width: f64, x: f64) -> f64 {
    ((edge - x) / width + 0.5).clamp(0.0, 1.0)
}

/// Foreground coverage mask for a family at a pixel, in shape-local
/// coordinates (rotated, centered, scaled).
fn coverage(family: Family, t: f64, uy: f64, ux: f64) -> f64 {
    let w = 0.08; // soft edge width in shape units
    match family {
        Family::Blob => {
            let ry = 1.0;
            let rx = 0.55 + 0.45 * t;
            let d = ((uy / ry).powi(2) + (ux / rx).powi(2)).sqrt();
            smoothstep(1.0, w, d)
        }
        Family::Cross => {
            let bar = 0.22 + 0.10 * t;
            let a = smoothstep(bar, w, uy.abs()).min(smoothstep(1.0, w, ux.abs()));
            let b = smoothstep(bar, w, ux.abs()).min(smoothstep(1.0, w, uy.abs()));
            a.max(b)
        }
        Family::Ring => {
            let d = (uy * uy + ux * ux).sqrt();
            let thick = 0.18 + 0.12 * t;
            smoothstep(thick, w, (d - 0.75).abs())
        }
        Family::Diamond => {
            let d = uy.abs() + ux.abs();
            smoothstep(0.9 + 0.1 * t, w, d)
        }
        Family::HollowSquare => {
            let d = uy.abs().max(ux.abs());
            let thick = 0.16 + 0.10 * t;
            smoothstep(thick, w, (d - 0.7).abs())
        }
        Family::Stripes => {
            let inside = smoothstep(0.85, w, uy.abs().max(ux.abs()));
            let stripe_phase = ((ux + uy) * (3.0 + 2.0 * t)).sin();
            let stripes = if stripe_phase > 0.0 { 1.0 } else { 0.0 };
            inside * stripes
        }
    }
}

/// Render ψ(X_C, X_E): foreground geometry/color from the core channel only,
/// background purely from the style channel. Output is 8-bit quantized so
/// in-memory and on-disk pipelines see identical pixels.
pub fn render(
    size: usize,
    family: Family,
    t: f64,
    core_seed: u64,
    e: f64,
    domain: Domain,
) -> Image {
    let mut img = background(size, e, domain);
    let mut geo = stream(core_seed, &[0xc0de]);
    let cy = size as f64 * (0.5 + geo.gen_range(-0.12..=0.12));
    let cx = size as f64 * (0.5 + geo.gen_range(-0.12..=0.12));
    let radius = size as f64 * (0.20 + 0.10 * t);
    let theta: f64 = geo.gen_range(0.0..std::f64::consts::PI);
    let (sin_t, cos_t) = theta.sin_cos();
    // Foreground color depends on the core channel only.
    let shade = 0.88 - 0.18 * t;
    let fg = [shade, shade, 0.92 - 0.10 * t];
    for y in 0..size {
        for x in 0..size {
            let dy = (y as f64 - cy) / radius;
            let dx = (x as f64 - cx) / radius;
            let uy = cos_t * dy - sin_t * dx;
            let ux = sin_t * dy + cos_t * dx;
            let m = coverage(family, t, uy, ux);
            if m > 0.0 {
                for ch in 0..3 {
                    let bg = img.get(ch, y, x) as f64;
                    img.set(ch, y, x, (m * fg[ch] + (1.0 - m) * bg) as f32);
                }
            }
        }
    }
    img.quantize_u8();
    img
}

/// Render a labeled SCM sample from explicit latents.
pub fn render_sample(
    cfg: &ScmConfig,
    latents: Latents,
    core_seed: u64,
    domain: Domain,
) -> (Image, Label) {
    let label = label_for_core(latents.c);
    let family = family_for_label(label);
    let t = core_t(label, latents.c);
    let img = render(cfg.image_size, family, t, core_seed, latents.e, domain);
    (img, label)
}

/// Draw latents in a per-sample stream until the requested label comes up.
fn draw_for_label(cfg: &ScmConfig, rng: &mut ChaCha8Rng, want: Label) -> Latents {
    loop {
        let l = sample_latents(cfg.confounder_strength, rng);
        if label_for_core(l.c) == want {
            return l;
        }
    }
}

fn make_sample(
    cfg: &ScmConfig,
    split_tag: u64,
    index: usize,
    want: Label,
    domain: Domain,
    id_prefix: &str,
) -> ScmSample {
    let sample_seed = stream_key(cfg.seed, &[tag::DATASET, split_tag, index as u64]);
    let mut rng = stream(sample_seed, &[]);
    let latents = draw_for_label(cfg, &mut rng, want);
    let core_seed: u64 = rng.gen();
    let (image, label) = render_sample(cfg, latents, core_seed, domain);
    ScmSample {
        id: format!("{id_prefix}_{index}"),
        image,
        label,
        domain,
        aux_class: None,
        latents: Some(latents),
        sample_seed,
    }
}

/// Exact rounded exposure split: how many main/shifted samples make `total`.
pub fn exposure_counts(total: usize, shifted_percent: u32) -> Result<(usize, usize)> {
    if shifted_percent > 100 {
        return Err(Error::input(format!(
            "exposure {shifted_percent}% exceeds the training budget"
        )));
    }
    let shifted = ((total as f64) * (shifted_percent as f64) / 100.0).round() as usize;
    Ok((total - shifted, shifted))
}

/// Mix two ID pools at the requested exposure ratio. The shifted subset is a
/// seed-deterministic choice from its pool.
pub fn mix_exposure(
    main_pool: &[ScmSample],
    shifted_pool: &[ScmSample],
    shifted_percent: u32,
    total: usize,
    seed: u64,
) -> Result<Vec<ScmSample>> {
    let (n_main, n_shifted) = exposure_counts(total, shifted_percent)?;
    if n_main > main_pool.len() || n_shifted > shifted_pool.len() {
        return Err(Error::input(format!(
            "exposure {shifted_percent}% needs {n_main}+{n_shifted} samples but pools hold {}+{}",
            main_pool.len(),
            shifted_pool.len()
        )));
    }
    let pick = |pool: &[ScmSample], k: usize, salt: u64| -> Vec<ScmSample> {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let mut rng = stream(seed, &[tag::SHUFFLE, salt]);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        order[..k].iter().map(|&i| pool[i].clone()).collect()
    };
    let mut out = pick(main_pool, n_main, 0);
    out.extend(pick(shifted_pool, n_shifted, 1));
    Ok(out)
}

const SPLIT_TRAIN_MAIN: u64 = 1;
const SPLIT_TRAIN_SHIFTED: u64 = 2;
const SPLIT_TEST_MAIN: u64 = 3;
const SPLIT_TEST_SHIFTED: u64 = 4;
const SPLIT_AUX: u64 = 5;

/// Generate all splits. Training data is ID-only with the configured
/// exposure of shifted-domain samples; test splits carry both labels.
pub fn generate_dataset(cfg: &ScmConfig) -> Result<DatasetSplits> {
    if cfg.train_id == 0 || cfg.test_id == 0 || cfg.test_ood == 0 {
        return Err(Error::input("split counts must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.confounder_strength) {
        return Err(Error::input("confounder_strength must lie in [0, 1]"));
    }
    let (n_main, n_shifted) = exposure_counts(cfg.train_id, cfg.exposure_percent)?;

    let gen_range = |split_tag: u64, count: usize, want: Label, domain: Domain, prefix: &str| {
        (0..count)
            .into_par_iter()
            .map(|i| make_sample(cfg, split_tag, i, want, domain, prefix))
            .collect::<Vec<_>>()
    };

    let mut train = gen_range(SPLIT_TRAIN_MAIN, n_main, Label::Id, Domain::Main, "tr_main");
    train.extend(gen_range(
        SPLIT_TRAIN_SHIFTED,
        n_shifted,
        Label::Id,
        Domain::Shifted,
        "tr_shift",
    ));

    let mut test_main = gen_range(SPLIT_TEST_MAIN, cfg.test_id, Label::Id, Domain::Main, "tm_id");
    {
        let mut ood = (0..cfg.test_ood)
            .into_par_iter()
            .map(|i| {
                make_sample(
                    cfg,
                    SPLIT_TEST_MAIN,
                    cfg.test_id + i,
                    Label::Ood,
                    Domain::Main,
                    "tm_ood",
                )
            })
            .collect::<Vec<_>>();
        test_main.append(&mut ood);
    }

    let mut test_shifted = gen_range(
        SPLIT_TEST_SHIFTED,
        cfg.test_id,
        Label::Id,
        Domain::Shifted,
        "ts_id",
    );
    {
        let mut ood = (0..cfg.test_ood)
            .into_par_iter()
            .map(|i| {
                make_sample(
                    cfg,
                    SPLIT_TEST_SHIFTED,
                    cfg.test_id + i,
                    Label::Ood,
                    Domain::Shifted,
                    "ts_ood",
                )
            })
            .collect::<Vec<_>>();
        test_shifted.append(&mut ood);
    }

    // Aux pretraining: four disjoint families, styles from the full space.
    let aux_pretrain: Vec<ScmSample> = (0..cfg.aux_per_class * AUX_FAMILIES.len())
        .into_par_iter()
        .map(|i| {
            let class = i % AUX_FAMILIES.len();
            let sample_seed = stream_key(cfg.seed, &[tag::DATASET, SPLIT_AUX, i as u64]);
            let mut rng = stream(sample_seed, &[]);
            let t: f64 = rng.gen_range(0.0..1.0);
            let e: f64 = rng.gen_range(0.0..1.0);
            let domain = if rng.gen_bool(0.5) {
                Domain::Main
            } else {
                Domain::Shifted
            };
            let core_seed: u64 = rng.gen();
            let image = render(cfg.image_size, AUX_FAMILIES[class], t, core_seed, e, domain);
            ScmSample {
                id: format!("aux_c{class}_{i}"),
                image,
                label: Label::Id,
                domain,
                aux_class: Some(class),
                latents: None,
                sample_seed,
            }
        })
        .collect();

    Ok(DatasetSplits {
        train,
        test_main,
        test_shifted,
        aux_pretrain,
    })
}

/// Pixel-wise Gaussian noise images clipped to [0, 1], for far-OOD checks.
pub fn noise_ood(count: usize, size: usize, mean: f64, std: f64, seed: u64) -> Vec<Image> {
    use rand_distr::{Distribution, Normal};
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[tag::NOISE, i as u64]);
            let normal = Normal::new(mean, std).expect("valid noise params");
            let mut img = Image::new(3, size, size);
            for v in img.data_mut() {
                *v = (normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
            }
            img
        })
        .collect()
}

/// Directory layout: `images/*.png` plus `manifest.tsv` with columns
/// `path, split, label, domain, seed`; the SCM config is echoed alongside.
pub fn save_dataset(splits: &DatasetSplits, dir: &Path, config_echo: &str) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    let mut manifest = String::from("path\tsplit\tlabel\tdomain\tseed\n");
    let mut write_split = |name: &str, samples: &[ScmSample]| -> Result<()> {
        for s in samples {
            let rel = format!("images/{}.png", s.id);
            s.image.save_png(&dir.join(&rel))?;
            manifest.push_str(&format!(
                "{rel}\t{name}\t{}\t{}\t{}\n",
                s.label.name(),
                s.domain.name(),
                s.sample_seed
            ));
        }
        Ok(())
    };
    write_split("train", &splits.train)?;
    write_split("test_main", &splits.test_main)?;
    write_split("test_shifted", &splits.test_shifted)?;
    write_split("aux", &splits.aux_pretrain)?;
    std::fs::write(dir.join("manifest.tsv"), manifest)?;
    std::fs::write(dir.join("scm_config.txt"), config_echo)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<DatasetSplits> {
    let manifest = std::fs::read_to_string(dir.join("manifest.tsv"))
        .map_err(|_| Error::input(format!("no manifest.tsv under {}", dir.display())))?;
    let mut splits = DatasetSplits {
        train: Vec::new(),
        test_main: Vec::new(),
        test_shifted: Vec::new(),
        aux_pretrain: Vec::new(),
    };
    for (ln, line) in manifest.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::input(format!("manifest line {} malformed", ln + 1)));
        }
        let image = Image::load_png(&dir.join(cols[0]))?;
        let id = Path::new(cols[0])
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("sample")
            .to_string();
        let aux_class = id
            .strip_prefix("aux_c")
            .and_then(|rest| rest.split('_').next())
            .and_then(|c| c.parse::<usize>().ok());
        let sample = ScmSample {
            id,
            image,
            label: Label::parse(cols[2])?,
            domain: Domain::parse(cols[3])?,
            aux_class,
            latents: None,
            sample_seed: cols[4]
                .parse()
                .map_err(|_| Error::input(format!("bad seed on line {}", ln + 1)))?,
        };
        match cols[1] {
            "train" => splits.train.push(sample),
            "test_main" => splits.test_main.push(sample),
            "test_shifted" => splits.test_shifted.push(sample),
            "aux" => splits.aux_pretrain.push(sample),
            other => return Err(Error::input(format!("unknown split `{other}`"))),
        }
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ScmConfig {
        ScmConfig {
            seed: 11,
            image_size: 32,
            train_id: 40,
            test_id: 20,
            test_ood: 20,
            aux_per_class: 8,
            confounder_strength: 0.9,
            exposure_percent: 0,
        }
    }

    #[test]
    fn zero_exposure_train_is_main_only() {
        let splits = generate_dataset(&small_cfg()).unwrap();
        assert_eq!(splits.train.len(), 40);
        assert!(splits.train.iter().all(|s| s.domain == Domain::Main));
        assert!(splits.train.iter().all(|s| s.label == Label::Id));
    }

    #[test]
    fn exposure_arithmetic_matches_published_counts() {
        assert_eq!(exposure_counts(3600, 5).unwrap(), (3420, 180));
        assert_eq!(exposure_counts(1000, 10).unwrap(), (900, 100));
        assert_eq!(exposure_counts(1000, 20).unwrap(), (800, 200));
        assert_eq!(exposure_counts(1000, 0).unwrap(), (1000, 0));
        assert!(exposure_counts(100, 150).is_err());
    }

    #[test]
    fn exposure_split_is_exact_and_deterministic() {
        let cfg = ScmConfig {
            exposure_percent: 20,
            ..small_cfg()
        };
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        let shifted = a
            .train
            .iter()
            .filter(|s| s.domain == Domain::Shifted)
            .count();
        assert_eq!(shifted, 8);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.image, y.image);
        }
    }

    #[test]
    fn mix_exposure_picks_seed_deterministic_subset() {
        let cfg = small_cfg();
        let splits = generate_dataset(&cfg).unwrap();
        let main_pool = &splits.train;
        let shifted_cfg = ScmConfig {
            exposure_percent: 100,
            ..small_cfg()
        };
        let shifted_pool = generate_dataset(&shifted_cfg).unwrap().train;
        let m1 = mix_exposure(main_pool, &shifted_pool, 20, 30, 7).unwrap();
        let m2 = mix_exposure(main_pool, &shifted_pool, 20, 30, 7).unwrap();
        assert_eq!(m1.len(), 30);
        assert_eq!(
            m1.iter().filter(|s| s.domain == Domain::Shifted).count(),
            6
        );
        let ids1: Vec<&str> = m1.iter().map(|s| s.id.as_str()).collect();
        let ids2: Vec<&str> = m2.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids1, ids2);
        assert!(mix_exposure(main_pool, &shifted_pool[..2], 50, 30, 7).is_err());
    }

    #[test]
    fn label_is_function_of_core_alone() {
        // Re-render train samples with style latents replaced by
        // shifted-domain draws; the label never moves.
        let cfg = small_cfg();
        let splits = generate_dataset(&cfg).unwrap();
        for s in splits.train.iter().take(10) {
            let l = s.latents.unwrap();
            let swapped = Latents { e: 0.97, ..l };
            let (_img, label) = render_sample(&cfg, swapped, 123, Domain::Shifted);
            assert_eq!(label, s.label);
        }
    }

    #[test]
    fn style_swap_changes_background_not_foreground_label() {
        let cfg = small_cfg();
        let a = render(32, Family::Blob, 0.4, 42, 0.2, Domain::Main);
        let b = render(32, Family::Blob, 0.4, 42, 0.9, Domain::Main);
        // Same geometry, different style: images differ yet share the shape.
        assert_ne!(a, b);
    }

    #[test]
    fn confounder_strength_controls_style_label_dependence() {
        // Threshold probe on the style latent predicting the label.
        let probe = |rho: f64| -> f64 {
            let mut rng = stream(5, &[99, (rho * 10.0) as u64]);
            let mut pts: Vec<(f64, bool)> = Vec::new();
            for _ in 0..4000 {
                let l = sample_latents(rho, &mut rng);
                pts.push((l.e, label_for_core(l.c) == Label::Ood));
            }
            // Best threshold accuracy over a grid.
            let mut best = 0.5f64;
            for k in 0..=100 {
                let thr = k as f64 / 100.0;
                let acc = pts
                    .iter()
                    .filter(|(e, is_ood)| (*e >= thr) == *is_ood)
                    .count() as f64
                    / pts.len() as f64;
                best = best.max(acc.max(1.0 - acc));
            }
            best
        };
        assert!(probe(1.0) > 0.9, "rho=1 probe {}", probe(1.0));
        let p0 = probe(0.0);
        assert!((p0 - 0.5).abs() < 0.05, "rho=0 probe {p0}");
    }

    #[test]
    fn noise_ood_statistics_and_determinism() {
        let a = noise_ood(3, 16, 0.5, 0.25, 9);
        let b = noise_ood(3, 16, 0.5, 0.25, 9);
        assert_eq!(a, b);
        assert!(a
            .iter()
            .all(|img| img.data().iter().all(|v| (0.0..=1.0).contains(v))));
        let big = noise_ood(40, 16, 0.5, 0.25, 10);
        let mean: f64 = big
            .iter()
            .flat_map(|img| img.data().iter().map(|v| *v as f64))
            .sum::<f64>()
            / (40.0 * 3.0 * 256.0);
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn disk_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScmConfig {
            train_id: 6,
            test_id: 3,
            test_ood: 3,
            aux_per_class: 2,
            ..small_cfg()
        };
        let splits = generate_dataset(&cfg).unwrap();
        save_dataset(&splits, dir.path(), "seed = 11\n").unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.train.len(), splits.train.len());
        for (a, b) in splits.train.iter().zip(&back.train) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.label, b.label);
            assert_eq!(a.domain, b.domain);
        }
        assert_eq!(back.aux_pretrain.len(), splits.aux_pretrain.len());
        for (a, b) in splits.aux_pretrain.iter().zip(&back.aux_pretrain) {
            assert_eq!(a.aux_class, b.aux_class);
        }
    }
}
