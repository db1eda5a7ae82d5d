//! Desk-scale convolutional encoder, binary heads, feature readout, and the
//! supporting tensor/GEMM machinery. Activations use a channel-major batch
//! layout `[C, N, H, W]` so convolutions reduce to one GEMM per layer.

mod conv;
mod encoder;
mod gemm;
mod heads;
mod optim;
mod readout;
mod tensor;
mod weights;

pub use conv::Conv2d;
pub use encoder::{Encoder, EncoderConfig, EncoderContext, EncoderGrads};
pub use heads::{BinaryHead, ClassifierGrads, ClassifierHead, HeadGrads};
pub use optim::AdamW;
pub use readout::{feature_readout_batch, readout_backward, Features, ReadoutContext, ReadoutGrads};
pub use tensor::BatchTensor;
pub use weights::{TensorArchive, TensorEntry};

use crate::error::{Error, Result};
use crate::image_data::Image;
use crate::rng::{stream, tag};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Number of encoder stages exposed as feature taps.
pub const STAGES: usize = 3;

/// Teacher: frozen pretrained encoder plus a trainable binary (ID / A-OOD) head.
pub struct Teacher {
    pub encoder: Encoder,
    pub head: BinaryHead,
    /// Byte-exact copy of the encoder tensors as loaded, for freeze audits.
    pub frozen_snapshot: TensorArchive,
}

/// Student: encoder and binary head, all trainable, randomly initialized.
pub struct Student {
    pub encoder: Encoder,
    pub head: BinaryHead,
}

/// Load pretrained weights, freeze the encoder, attach a fresh binary head.
pub fn build_teacher(archive: &TensorArchive, cfg: &EncoderConfig, head_seed: u64) -> Result<Teacher> {
    let encoder = Encoder::from_archive(cfg, archive, "encoder")?;
    let head = BinaryHead::new(cfg.widths[STAGES - 1], stream(head_seed, &[tag::INIT, 20]));
    let frozen_snapshot = encoder.to_archive("encoder");
    Ok(Teacher {
        encoder,
        head,
        frozen_snapshot,
    })
}

/// Fresh student with seed-determined initialization.
pub fn build_student(cfg: &EncoderConfig, seed: u64) -> Student {
    let encoder = Encoder::new(cfg, stream(seed, &[tag::INIT, 1]));
    let head = BinaryHead::new(cfg.widths[STAGES - 1], stream(seed, &[tag::INIT, 2]));
    Student { encoder, head }
}

/// Aux-classification model used for saliency: the teacher's encoder with the
/// classification head it was pretrained with.
pub struct SaliencyModel {
    pub encoder: Encoder,
    pub head: ClassifierHead,
}

impl SaliencyModel {
    pub fn from_archive(cfg: &EncoderConfig, archive: &TensorArchive) -> Result<SaliencyModel> {
        let encoder = Encoder::from_archive(cfg, archive, "encoder")?;
        let head = ClassifierHead::from_archive(archive, "aux_head")?;
        if head.in_dim() != cfg.widths[STAGES - 1] {
            return Err(Error::config(format!(
                "aux head expects {} inputs but encoder's final width is {}",
                head.in_dim(),
                cfg.widths[STAGES - 1]
            )));
        }
        Ok(SaliencyModel { encoder, head })
    }
}

pub(crate) fn he_normal(rng: &mut rand_chacha::ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    (0..n).map(|_| dist.sample(rng) as f32).collect()
}

pub(crate) fn uniform_init(rng: &mut rand_chacha::ChaCha8Rng, bound: f64, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-bound..=bound) as f32).collect()
}

/// Pack images (all same shape) into a `[C, N, H, W]` batch tensor.
pub fn batch_from_images(images: &[&Image]) -> Result<BatchTensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::input("empty image batch"))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut t = BatchTensor::new(c, images.len(), h, w);
    for (i, img) in images.iter().enumerate() {
        if img.channels() != c || img.height() != h || img.width() != w {
            return Err(Error::input("mixed image shapes in one batch"));
        }
        for ch in 0..c {
            t.plane_mut(ch, i).copy_from_slice(img.plane(ch));
        }
    }
    Ok(t)
}
