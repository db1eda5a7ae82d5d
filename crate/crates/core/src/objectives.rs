//! Training objectives: the OOD-aware contrastive loss, the teacher's binary
//! cross-entropy task, and the ablation loss variants.
//!
//! Batch layout: 2n samples (n ID followed by their n A-OOD counterparts),
//! two light views each, 4n view rows total. View `v` of sample `j` under
//! view slot `t` sits at row `t * 2n + j`, so
//! `P(v) = (v + 2n) mod 4n` is the positive-pair involution and
//! `G(v) = v + n` (within the same slot) maps an ID view to its A-OOD
//! counterpart's matching view.

use crate::error::{Error, Result};
use crate::nn::Features;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    /// The full symmetric OOD-aware contrastive loss.
    Ocl,
    /// Plain teacher-student alignment: negative mean cosine over ID views.
    Ts,
    /// Cosine-difference baseline: sim(ID) - sim(A-OOD), negated.
    GSetupA,
    /// Two-term contrastive with subtracted A-OOD term.
    GSetupB,
    /// Single-direction OCL (student-anchored only).
    GSetupD,
}

impl LossVariant {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ocl" => LossVariant::Ocl,
            "ts" => LossVariant::Ts,
            "g_setup_a" => LossVariant::GSetupA,
            "g_setup_b" => LossVariant::GSetupB,
            "g_setup_d" => LossVariant::GSetupD,
            other => return Err(Error::config(format!("unknown loss variant `{other}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::Ocl => "ocl",
            LossVariant::Ts => "ts",
            LossVariant::GSetupA => "g_setup_a",
            LossVariant::GSetupB => "g_setup_b",
            LossVariant::GSetupD => "g_setup_d",
        }
    }

    /// Whether the variant contrasts against crafted A-OOD views at all.
    pub fn uses_aood(&self) -> bool {
        !matches!(self, LossVariant::Ts)
    }
}

/// Pairing structure of one training batch.
#[derive(Debug, Clone, Copy)]
pub struct PairedBatch {
    /// ID samples per side; the batch holds 2n samples and 4n views.
    pub n: usize,
    /// Softmax temperature of the contrastive loss.
    pub gamma: f64,
}

impl PairedBatch {
    pub fn views(&self) -> usize {
        4 * self.n
    }

    pub fn samples(&self) -> usize {
        2 * self.n
    }

    /// The other light view of the same sample.
    pub fn pair_view(&self, v: usize) -> usize {
        (v + 2 * self.n) % (4 * self.n)
    }

    /// The matching view of the sample's A-OOD counterpart (ID views only).
    pub fn ood_view(&self, v: usize) -> usize {
        debug_assert!(self.is_id_view(v));
        v + self.n
    }

    pub fn is_id_view(&self, v: usize) -> bool {
        v % (2 * self.n) < self.n
    }

    /// Binary label per view row: ID = 0, A-OOD = 1.
    pub fn labels(&self) -> Vec<u8> {
        (0..self.views())
            .map(|v| u8::from(!self.is_id_view(v)))
            .collect()
    }

    fn validate(&self, rows: usize) -> Result<()> {
        if self.n == 0 {
            return Err(Error::input("batch needs at least one ID sample"));
        }
        if self.gamma <= 0.0 {
            return Err(Error::input(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if rows != self.views() {
            return Err(Error::input(format!(
                "expected {} feature rows, got {rows}",
                self.views()
            )));
        }
        Ok(())
    }
}

/// Cosine-similarity matrix `S[i][j] = cos(f_s[i], f_t[j])` with the pieces
/// needed to push a gradient in S back onto the student features.
pub struct SimContext {
    pub n4: usize,
    dim: usize,
    /// Row-major 4n x 4n in f64.
    pub sims: Vec<f64>,
    student: Vec<f64>,
    teacher: Vec<f64>,
    s_norms: Vec<f64>,
    t_norms: Vec<f64>,
}

impl SimContext {
    pub fn new(student: &Features, teacher: &Features) -> Result<SimContext> {
        if student.n != teacher.n || student.dim() != teacher.dim() {
            return Err(Error::input("student/teacher feature shapes differ"));
        }
        let n4 = student.n;
        let dim = student.dim();
        let s: Vec<f64> = student.data.iter().map(|v| *v as f64).collect();
        let t: Vec<f64> = teacher.data.iter().map(|v| *v as f64).collect();
        let norm = |rows: &[f64], i: usize| -> f64 {
            rows[i * dim..(i + 1) * dim]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(1e-30)
        };
        let s_norms: Vec<f64> = (0..n4).map(|i| norm(&s, i)).collect();
        let t_norms: Vec<f64> = (0..n4).map(|i| norm(&t, i)).collect();
        let mut sims = vec![0.0f64; n4 * n4];
        for i in 0..n4 {
            let si = &s[i * dim..(i + 1) * dim];
            for j in 0..n4 {
                let tj = &t[j * dim..(j + 1) * dim];
                let dot: f64 = si.iter().zip(tj).map(|(a, b)| a * b).sum();
                sims[i * n4 + j] = dot / (s_norms[i] * t_norms[j]);
            }
        }
        if sims.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite similarity"));
        }
        Ok(SimContext {
            n4,
            dim,
            sims,
            student: s,
            teacher: t,
            s_norms,
            t_norms,
        })
    }

    /// Chain a gradient in the similarity matrix onto the student features.
    pub fn student_grad(&self, d_sims: &[f64]) -> Vec<f32> {
        let (n4, dim) = (self.n4, self.dim);
        let mut grad = vec![0.0f64; n4 * dim];
        for i in 0..n4 {
            let si = &self.student[i * dim..(i + 1) * dim];
            let gi = &mut grad[i * dim..(i + 1) * dim];
            for j in 0..n4 {
                let g = d_sims[i * n4 + j];
                if g == 0.0 {
                    continue;
                }
                let tj = &self.teacher[j * dim..(j + 1) * dim];
                let cos = self.sims[i * n4 + j];
                let inv = 1.0 / (self.s_norms[i] * self.t_norms[j]);
                let self_scale = cos / (self.s_norms[i] * self.s_norms[i]);
                for k in 0..dim {
                    gi[k] += g * (tj[k] * inv - self_scale * si[k]);
                }
            }
        }
        grad.iter().map(|v| *v as f32).collect()
    }
}

/// Loss and similarity-space gradient for any variant.
pub fn loss_from_sims(
    variant: LossVariant,
    sims: &[f64],
    batch: &PairedBatch,
) -> Result<(f64, Vec<f64>)> {
    let n4 = batch.views();
    debug_assert_eq!(sims.len(), n4 * n4);
    let g = 1.0 / batch.gamma;
    let at = |i: usize, j: usize| sims[i * n4 + j];
    let mut d = vec![0.0f64; n4 * n4];

    // Anchors: both views of every ID sample.
    let id_anchors: Vec<usize> = (0..batch.n)
        .flat_map(|j| [j, j + 2 * batch.n])
        .collect();

    let mut loss = 0.0f64;
    match variant {
        LossVariant::Ts => {
            // Negative mean cosine over ID views only.
            let m = id_anchors.len() as f64;
            for &a in &id_anchors {
                loss -= at(a, a) / m;
                d[a * n4 + a] -= 1.0 / m;
            }
        }
        LossVariant::GSetupA => {
            // mean sim over A-OOD views minus mean sim over ID views.
            let m = id_anchors.len() as f64;
            for &a in &id_anchors {
                let o = batch.ood_view(a);
                loss += (at(o, o) - at(a, a)) / m;
                d[o * n4 + o] += 1.0 / m;
                d[a * n4 + a] -= 1.0 / m;
            }
        }
        LossVariant::Ocl | LossVariant::GSetupD => {
            for &a in &id_anchors {
                directional_term(&mut loss, &mut d, sims, batch, a, g, Direction::StudentAnchor);
                if variant == LossVariant::Ocl {
                    directional_term(&mut loss, &mut d, sims, batch, a, g, Direction::TeacherAnchor);
                }
            }
        }
        LossVariant::GSetupB => {
            for &a in &id_anchors {
                // Attract term on the ID anchor, plain denominator.
                contrastive_term(&mut loss, &mut d, sims, batch, a, g, 1.0);
                // Repel term on the A-OOD anchor, added with positive sign.
                contrastive_term(&mut loss, &mut d, sims, batch, batch.ood_view(a), g, -1.0);
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::numerical("non-finite loss"));
    }
    Ok((loss, d))
}

enum Direction {
    StudentAnchor,
    TeacherAnchor,
}

/// One directional OCL term for anchor view `a`:
/// -log[(e^{S(a,a)/g} + e^{S(a,P(a))/g}) /
///       (sum_x' e^{S(a,x')/g} + sum_x' e^{S(G(a),x')/g})].
/// The teacher-anchored direction reads the transposed matrix.
fn directional_term(
    loss: &mut f64,
    d: &mut [f64],
    sims: &[f64],
    batch: &PairedBatch,
    a: usize,
    g: f64,
    dir: Direction,
) {
    let n4 = batch.views();
    let idx = |i: usize, j: usize| -> usize {
        match dir {
            Direction::StudentAnchor => i * n4 + j,
            Direction::TeacherAnchor => j * n4 + i,
        }
    };
    let p = batch.pair_view(a);
    let ga = batch.ood_view(a);
    let e_self = (sims[idx(a, a)] * g).exp();
    let e_pair = (sims[idx(a, p)] * g).exp();
    let num = e_self + e_pair;
    let mut den = 0.0f64;
    for x in 0..n4 {
        den += (sims[idx(a, x)] * g).exp() + (sims[idx(ga, x)] * g).exp();
    }
    *loss -= (num / den).ln();
    // d(-ln num)/dS and d(ln den)/dS.
    d[idx(a, a)] -= g * e_self / num;
    d[idx(a, p)] -= g * e_pair / num;
    for x in 0..n4 {
        d[idx(a, x)] += g * (sims[idx(a, x)] * g).exp() / den;
        d[idx(ga, x)] += g * (sims[idx(ga, x)] * g).exp() / den;
    }
}

/// Plain InfoNCE-style term with sign, used by the G-Setup-B ablation:
/// sign * -log[(e^{S(a,a)/g} + e^{S(a,P(a))/g}) / sum_x' e^{S(a,x')/g}].
fn contrastive_term(
    loss: &mut f64,
    d: &mut [f64],
    sims: &[f64],
    batch: &PairedBatch,
    a: usize,
    g: f64,
    sign: f64,
) {
    let n4 = batch.views();
    let p = batch.pair_view(a);
    let e_self = (sims[a * n4 + a] * g).exp();
    let e_pair = (sims[a * n4 + p] * g).exp();
    let num = e_self + e_pair;
    let mut den = 0.0f64;
    for x in 0..n4 {
        den += (sims[a * n4 + x] * g).exp();
    }
    *loss -= sign * (num / den).ln();
    d[a * n4 + a] -= sign * g * e_self / num;
    d[a * n4 + p] -= sign * g * e_pair / num;
    for x in 0..n4 {
        d[a * n4 + x] += sign * g * (sims[a * n4 + x] * g).exp() / den;
    }
}

/// Full loss with gradient w.r.t. the student feature rows. Teacher features
/// are treated as constants: gradients flow to the student only.
pub fn ocl_loss(
    student: &Features,
    teacher: &Features,
    batch: &PairedBatch,
) -> Result<(f64, Vec<f32>)> {
    variant_loss(LossVariant::Ocl, student, teacher, batch)
}

pub fn variant_loss(
    variant: LossVariant,
    student: &Features,
    teacher: &Features,
    batch: &PairedBatch,
) -> Result<(f64, Vec<f32>)> {
    batch.validate(student.n)?;
    let ctx = SimContext::new(student, teacher)?;
    let (loss, d_sims) = loss_from_sims(variant, &ctx.sims, batch)?;
    Ok((loss, ctx.student_grad(&d_sims)))
}

/// Mean softmax cross-entropy over all views; labels are 0 (ID) or 1 (A-OOD).
/// Returns the loss and d(loss)/d(logits).
pub fn ce_loss(logits: &[f32], labels: &[u8]) -> Result<(f64, Vec<f32>)> {
    if logits.len() != labels.len() * 2 {
        return Err(Error::input("logits must be [n, 2]"));
    }
    if labels.iter().any(|l| *l > 1) {
        return Err(Error::input("labels must be 0 or 1"));
    }
    let n = labels.len();
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f32; logits.len()];
    for (i, &label) in labels.iter().enumerate() {
        let a = logits[i * 2] as f64;
        let b = logits[i * 2 + 1] as f64;
        let m = a.max(b);
        let za = (a - m).exp();
        let zb = (b - m).exp();
        let z = za + zb;
        let (pa, pb) = (za / z, zb / z);
        loss -= if label == 0 { pa.ln() } else { pb.ln() };
        let scale = 1.0 / n as f64;
        grad[i * 2] = ((pa - if label == 0 { 1.0 } else { 0.0 }) * scale) as f32;
        grad[i * 2 + 1] = ((pb - if label == 1 { 1.0 } else { 0.0 }) * scale) as f32;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::numerical("non-finite cross-entropy"));
    }
    Ok((loss, grad))
}
