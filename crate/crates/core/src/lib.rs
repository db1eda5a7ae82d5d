//! Robust novelty detection at desk scale: saliency-guided auxiliary-OOD
//! synthesis, a task-based teacher-student model trained with an OOD-aware
//! contrastive loss plus a binary classification task, discrepancy-based
//! OOD scoring, a synthetic causal style-shift benchmark generator, and an
//! evaluation/ablation harness.

pub mod error;
// pub mod eval;
pub mod image_data;
pub mod nn;
pub mod objectives;
pub mod ood_synth;
pub mod rng;
pub mod saliency;
pub mod scm_data;
// pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
pub use image_data::Image;
