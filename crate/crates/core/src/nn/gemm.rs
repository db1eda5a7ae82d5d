//! Thin parallel wrapper over `matrixmultiply::sgemm`, splitting output rows
//! across the rayon pool. Chunking is fixed by thread count, so accumulation
//! order (and therefore the result) is deterministic for a given build.

use rayon::prelude::*;

/// `out[m x n] = a[m x k] * b[k x n]`, all row-major contiguous.
pub fn matmul(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let threads = rayon::current_num_threads().max(1);
    let rows_per = m.div_ceil(threads).max(1);
    out.par_chunks_mut(rows_per * n)
        .zip(a.par_chunks(rows_per * k))
        .for_each(|(oc, ac)| {
            let rows = ac.len() / k;
            unsafe {
                matrixmultiply::sgemm(
                    rows,
                    k,
                    n,
                    1.0,
                    ac.as_ptr(),
                    k as isize,
                    1,
                    b.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    oc.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}

/// `out[m x n] = a[m x k] * b^T` where `b` is stored row-major `[n x k]`.
pub fn matmul_bt(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let threads = rayon::current_num_threads().max(1);
    let rows_per = m.div_ceil(threads).max(1);
    out.par_chunks_mut(rows_per * n)
        .zip(a.par_chunks(rows_per * k))
        .for_each(|(oc, ac)| {
            let rows = ac.len() / k;
            unsafe {
                matrixmultiply::sgemm(
                    rows,
                    k,
                    n,
                    1.0,
                    ac.as_ptr(),
                    k as isize,
                    1,
                    b.as_ptr(),
                    1,
                    k as isize,
                    0.0,
                    oc.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}

/// `out[m x n] = a^T * b` where `a` is stored row-major `[k x m]`.
pub fn matmul_at(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let threads = rayon::current_num_threads().max(1);
    let rows_per = m.div_ceil(threads).max(1);
    // Row chunks of out correspond to column chunks of a; strides handle it.
    let chunks: Vec<(usize, usize)> = (0..m.div_ceil(rows_per))
        .map(|ci| (ci * rows_per, ((ci + 1) * rows_per).min(m)))
        .collect();
    out.par_chunks_mut(rows_per * n)
        .zip(chunks)
        .for_each(|(oc, (r0, r1))| {
            let rows = r1 - r0;
            unsafe {
                matrixmultiply::sgemm(
                    rows,
                    k,
                    n,
                    1.0,
                    a.as_ptr().add(r0),
                    1,
                    m as isize,
                    b.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    oc.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}
