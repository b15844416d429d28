//! Flat-buffer matrix kernels used by the graph ops.
//!
//! All kernels compute each output row independently with a fixed inner
//! summation order, so parallelising over rows with rayon keeps results
//! bitwise identical to the sequential path.

use rayon::prelude::*;

/// Multiply-add count above which a kernel goes parallel.
const PAR_THRESHOLD: usize = 1 << 16;

/// C(m,n) = A(m,k) * B(k,n)
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0f32; m * n];
    let row = |ci: &mut [f32], ai: &[f32]| {
        for (p, &aip) in ai.iter().enumerate() {
            if aip != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in ci.iter_mut().zip(brow) {
                    *cv += aip * bv;
                }
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(ci, ai)| row(ci, ai));
    } else {
        for (ci, ai) in c.chunks_mut(n).zip(a.chunks(k)) {
            row(ci, ai);
        }
    }
    c
}

/// C(m,n) = A(m,k) * B(n,k)^T
pub fn matmul_bt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0f32; m * n];
    let row = |ci: &mut [f32], ai: &[f32]| {
        for (j, cv) in ci.iter_mut().enumerate() {
            let bj = &b[j * k..(j + 1) * k];
            let mut s = 0.0f32;
            for (av, bv) in ai.iter().zip(bj) {
                s += av * bv;
            }
            *cv = s;
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(ci, ai)| row(ci, ai));
    } else {
        for (ci, ai) in c.chunks_mut(n).zip(a.chunks(k)) {
            row(ci, ai);
        }
    }
    c
}

/// C(k,n) = A(m,k)^T * B(m,n)
pub fn matmul_at(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut c = vec![0.0f32; k * n];
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(|(p, cp)| {
            for i in 0..m {
                let aip = a[i * k + p];
                if aip != 0.0 {
                    let bi = &b[i * n..(i + 1) * n];
                    for (cv, &bv) in cp.iter_mut().zip(bi) {
                        *cv += aip * bv;
                    }
                }
            }
        });
    } else {
        for i in 0..m {
            let ai = &a[i * k..(i + 1) * k];
            let bi = &b[i * n..(i + 1) * n];
            for (p, &aip) in ai.iter().enumerate() {
                if aip != 0.0 {
                    let cp = &mut c[p * n..(p + 1) * n];
                    for (cv, &bv) in cp.iter_mut().zip(bi) {
                        *cv += aip * bv;
                    }
                }
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32) * 0.3 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32) * 0.1 - 1.0).collect();
        assert_eq!(matmul(&a, &b, m, k, n), naive(&a, &b, m, k, n));
    }

    #[test]
    fn transposed_variants_agree() {
        let (m, k, n) = (4, 6, 5);
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32).cos()).collect();
        let c = naive(&a, &b, m, k, n);

        // matmul_bt with b laid out as (n,k)
        let mut bt = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let c_bt = matmul_bt(&a, &bt, m, k, n);
        for (x, y) in c.iter().zip(&c_bt) {
            assert!((x - y).abs() < 1e-5);
        }

        // matmul_at contracts over rows: A(m,k)^T * B2(m,n)
        let b2: Vec<f32> = (0..m * n).map(|i| (i as f32) * 0.2 - 1.5).collect();
        let mut at_expect = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                let mut s = 0.0;
                for i in 0..m {
                    s += a[i * k + p] * b2[i * n + j];
                }
                at_expect[p * n + j] = s;
            }
        }
        let c_at = matmul_at(&a, &b2, m, k, n);
        for (x, y) in at_expect.iter().zip(&c_at) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn parallel_path_is_bitwise_stable() {
        // Force the parallel branch and compare against a sequential rerun.
        let (m, k, n) = (64, 64, 64);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 2654435761) % 1000) as f32 * 1e-3).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 40503) % 997) as f32 * 1e-3).collect();
        let c1 = matmul(&a, &b, m, k, n);
        let c2 = matmul(&a, &b, m, k, n);
        assert_eq!(c1, c2);
        assert_eq!(c1, naive(&a, &b, m, k, n));
    }
}
