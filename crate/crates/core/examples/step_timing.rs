//! Rough timing of one training-step-sized forward/backward workload.

use rnd_core::nn::{build_student, feature_readout_batch, readout_backward, BatchTensor, EncoderConfig};
use std::time::Instant;

fn main() {
    let n = 128; // 4n views with n = 32 per side
    for refine in [[1usize, 1, 1], [1, 1, 3], [3, 3, 3]] {
        let cfg = EncoderConfig {
            in_channels: 3,
            widths: [16, 32, 64],
            refine_kernels: refine,
        };
        let student = build_student(&cfg, 1);
        let teacher = build_student(&cfg, 2);
        let mut x = BatchTensor::new(3, n, 32, 32);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = (i % 251) as f32 / 251.0;
        }
        // Warm up.
        let _ = teacher.encoder.forward(&x);
        let t0 = Instant::now();
        let iters = 10;
        for _ in 0..iters {
            let t_taps = teacher.encoder.forward(&x);
            let (_tf, _) = feature_readout_batch(&t_taps, Some(&teacher.head));
            let ctx = student.encoder.forward_train(&x);
            let (sf, rctx) = feature_readout_batch(&ctx.taps, Some(&student.head));
            let dfeat = vec![1e-3f32; sf.data.len()];
            let rg = readout_backward(&rctx, &sf, &dfeat, Some(&student.head));
            let _eg = student.encoder.backward(&ctx, rg.d_taps.into_iter().map(Some).collect());
        }
        let dt = t0.elapsed().as_secs_f64() / iters as f64;
        println!(
            "refine {:?}: {:.1} ms/step  -> {:.1} s per 63-step epoch, {:.1} min per 50-epoch run",
            refine,
            dt * 1e3,
            dt * 63.0,
            dt * 63.0 * 50.0 / 60.0
        );
    }
}
