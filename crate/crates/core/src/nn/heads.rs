//! Linear binary head (ID vs. A-OOD) and the MLP classification head used
//! for teacher pretraining and Grad-CAM.

use super::weights::{TensorArchive, TensorEntry};
use crate::error::Result;

/// Linear map from the pooled final-stage feature to exactly 2 logits.
#[derive(Debug, Clone)]
pub struct BinaryHead {
    pub in_dim: usize,
    /// Row-major `[2, in_dim]`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

pub struct HeadGrads {
    pub d_weight: Vec<f32>,
    pub d_bias: Vec<f32>,
}

impl BinaryHead {
    pub fn new(in_dim: usize, mut rng: rand_chacha::ChaCha8Rng) -> Self {
        let bound = (1.0 / in_dim as f64).sqrt();
        BinaryHead {
            in_dim,
            weight: super::uniform_init(&mut rng, bound, 2 * in_dim),
            bias: vec![0.0; 2],
        }
    }

    /// `pooled` is row-major `[n, in_dim]`; returns logits `[n, 2]`.
    pub fn forward(&self, pooled: &[f32], n: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; n * 2];
        for i in 0..n {
            let p = &pooled[i * self.in_dim..(i + 1) * self.in_dim];
            for o in 0..2 {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                out[i * 2 + o] = self.bias[o] + dot(w, p);
            }
        }
        out
    }

    /// Backward from `d_logits [n, 2]`; returns gradient w.r.t. pooled inputs.
    pub fn backward(&self, pooled: &[f32], n: usize, d_logits: &[f32]) -> (Vec<f32>, HeadGrads) {
        let d = self.in_dim;
        let mut d_weight = vec![0.0f32; 2 * d];
        let mut d_bias = vec![0.0f32; 2];
        let mut d_pooled = vec![0.0f32; n * d];
        for i in 0..n {
            let p = &pooled[i * d..(i + 1) * d];
            for o in 0..2 {
                let g = d_logits[i * 2 + o];
                d_bias[o] += g;
                for j in 0..d {
                    d_weight[o * d + j] += g * p[j];
                    d_pooled[i * d + j] += g * self.weight[o * d + j];
                }
            }
        }
        (d_pooled, HeadGrads { d_weight, d_bias })
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn to_entries(&self, prefix: &str) -> Vec<TensorEntry> {
        vec![
            TensorEntry {
                name: format!("{prefix}.weight"),
                shape: vec![2, self.in_dim],
                data: self.weight.clone(),
            },
            TensorEntry {
                name: format!("{prefix}.bias"),
                shape: vec![2],
                data: self.bias.clone(),
            },
        ]
    }
}

/// Two-layer MLP head: `logits = W2 * relu(W1 * pooled + b1) + b2`.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub in_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

pub struct ClassifierGrads {
    pub d_w1: Vec<f32>,
    pub d_b1: Vec<f32>,
    pub d_w2: Vec<f32>,
    pub d_b2: Vec<f32>,
}

impl ClassifierHead {
    pub fn new(in_dim: usize, hidden: usize, classes: usize, mut rng: rand_chacha::ChaCha8Rng) -> Self {
        ClassifierHead {
            in_dim,
            hidden,
            classes,
            w1: super::he_normal(&mut rng, in_dim, hidden * in_dim),
            b1: vec![0.0; hidden],
            w2: super::he_normal(&mut rng, hidden, classes * hidden),
            b2: vec![0.0; classes],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    fn hidden_pre(&self, p: &[f32]) -> Vec<f32> {
        (0..self.hidden)
            .map(|hh| self.b1[hh] + dot(&self.w1[hh * self.in_dim..(hh + 1) * self.in_dim], p))
            .collect()
    }

    /// Logits for a batch of pooled vectors `[n, in_dim]`.
    pub fn forward(&self, pooled: &[f32], n: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; n * self.classes];
        for i in 0..n {
            let p = &pooled[i * self.in_dim..(i + 1) * self.in_dim];
            let mut h = self.hidden_pre(p);
            for v in &mut h {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            for o in 0..self.classes {
                out[i * self.classes + o] =
                    self.b2[o] + dot(&self.w2[o * self.hidden..(o + 1) * self.hidden], &h);
            }
        }
        out
    }

    /// Backward from `d_logits [n, classes]`.
    pub fn backward(
        &self,
        pooled: &[f32],
        n: usize,
        d_logits: &[f32],
    ) -> (Vec<f32>, ClassifierGrads) {
        let (d, hd, k) = (self.in_dim, self.hidden, self.classes);
        let mut g = ClassifierGrads {
            d_w1: vec![0.0; hd * d],
            d_b1: vec![0.0; hd],
            d_w2: vec![0.0; k * hd],
            d_b2: vec![0.0; k],
        };
        let mut d_pooled = vec![0.0f32; n * d];
        for i in 0..n {
            let p = &pooled[i * d..(i + 1) * d];
            let pre = self.hidden_pre(p);
            let h: Vec<f32> = pre.iter().map(|v| v.max(0.0)).collect();
            let mut dh = vec![0.0f32; hd];
            for o in 0..k {
                let gl = d_logits[i * k + o];
                g.d_b2[o] += gl;
                for j in 0..hd {
                    g.d_w2[o * hd + j] += gl * h[j];
                    dh[j] += gl * self.w2[o * hd + j];
                }
            }
            for j in 0..hd {
                if pre[j] <= 0.0 {
                    dh[j] = 0.0;
                }
                g.d_b1[j] += dh[j];
                for q in 0..d {
                    g.d_w1[j * d + q] += dh[j] * p[q];
                    d_pooled[i * d + q] += dh[j] * self.w1[j * d + q];
                }
            }
        }
        (d_pooled, g)
    }

    /// Class score and its gradient w.r.t. the pooled input, for one sample.
    pub fn score_and_input_grad(&self, p: &[f32], target: usize) -> (f32, Vec<f32>) {
        let pre = self.hidden_pre(p);
        let h: Vec<f32> = pre.iter().map(|v| v.max(0.0)).collect();
        let w2row = &self.w2[target * self.hidden..(target + 1) * self.hidden];
        let score = self.b2[target] + dot(w2row, &h);
        let mut grad = vec![0.0f32; self.in_dim];
        for j in 0..self.hidden {
            if pre[j] > 0.0 {
                let coef = w2row[j];
                for q in 0..self.in_dim {
                    grad[q] += coef * self.w1[j * self.in_dim + q];
                }
            }
        }
        (score, grad)
    }

    /// f64 score path for finite-difference verification.
    pub fn score_f64(&self, p: &[f64], target: usize) -> f64 {
        let mut h = vec![0.0f64; self.hidden];
        for j in 0..self.hidden {
            let mut acc = self.b1[j] as f64;
            for q in 0..self.in_dim {
                acc += self.w1[j * self.in_dim + q] as f64 * p[q];
            }
            h[j] = acc.max(0.0);
        }
        let mut score = self.b2[target] as f64;
        for j in 0..self.hidden {
            score += self.w2[target * self.hidden + j] as f64 * h[j];
        }
        score
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn to_entries(&self, prefix: &str) -> Vec<TensorEntry> {
        vec![
            TensorEntry {
                name: format!("{prefix}.w1"),
                shape: vec![self.hidden, self.in_dim],
                data: self.w1.clone(),
            },
            TensorEntry {
                name: format!("{prefix}.b1"),
                shape: vec![self.hidden],
                data: self.b1.clone(),
            },
            TensorEntry {
                name: format!("{prefix}.w2"),
                shape: vec![self.classes, self.hidden],
                data: self.w2.clone(),
            },
            TensorEntry {
                name: format!("{prefix}.b2"),
                shape: vec![self.classes],
                data: self.b2.clone(),
            },
        ]
    }

    pub fn from_archive(archive: &TensorArchive, prefix: &str) -> Result<Self> {
        let w1 = archive.get(&format!("{prefix}.w1"))?;
        let b1 = archive.get(&format!("{prefix}.b1"))?;
        let w2 = archive.get(&format!("{prefix}.w2"))?;
        let b2 = archive.get(&format!("{prefix}.b2"))?;
        Ok(ClassifierHead {
            in_dim: w1.shape[1],
            hidden: w1.shape[0],
            classes: w2.shape[0],
            w1: w1.data.clone(),
            b1: b1.data.clone(),
            w2: w2.data.clone(),
            b2: b2.data.clone(),
        })
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ClassifierGrads {
    pub fn slices(&self) -> Vec<&[f32]> {
        vec![&self.d_w1, &self.d_b1, &self.d_w2, &self.d_b2]
    }
}
