//! Channel-major batch activations: `data[((c * n + i) * h + y) * w + x]`.

#[derive(Debug, Clone, PartialEq)]
pub struct BatchTensor {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl BatchTensor {
    pub fn new(c: usize, n: usize, h: usize, w: usize) -> Self {
        BatchTensor {
            c,
            n,
            h,
            w,
            data: vec![0.0; c * n * h * w],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Spatial plane of one channel for one image.
    #[inline]
    pub fn plane(&self, c: usize, i: usize) -> &[f32] {
        let hw = self.h * self.w;
        let off = (c * self.n + i) * hw;
        &self.data[off..off + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize, i: usize) -> &mut [f32] {
        let hw = self.h * self.w;
        let off = (c * self.n + i) * hw;
        &mut self.data[off..off + hw]
    }

    /// In-place ReLU.
    pub fn relu(&mut self) {
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Zero `self` where `gate` is not strictly positive (ReLU backward).
    pub fn mask_by_positive(&mut self, gate: &BatchTensor) {
        debug_assert_eq!(self.data.len(), gate.data.len());
        for (v, g) in self.data.iter_mut().zip(gate.data.iter()) {
            if *g <= 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn add_assign(&mut self, other: &BatchTensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (v, o) in self.data.iter_mut().zip(other.data.iter()) {
            *v += o;
        }
    }

    /// Per-image, per-channel spatial mean: `[n][c]` row-major `n x c`.
    pub fn spatial_mean(&self) -> Vec<f32> {
        let hw = (self.h * self.w) as f32;
        let mut out = vec![0.0f32; self.n * self.c];
        for c in 0..self.c {
            for i in 0..self.n {
                let s: f32 = self.plane(c, i).iter().sum();
                out[i * self.c + c] = s / hw;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
