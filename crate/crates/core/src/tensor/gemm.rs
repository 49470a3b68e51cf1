//! Small dense matrix kernels backing the convolution layers.
//!
//! Row-major throughout. Two shapes cover every use: `gemm_nn` streams
//! whole rows of `b` (good when `n` is the spatial extent), `gemm_nt`
//! reduces long contiguous dot products (good for weight gradients).

/// c[m x n] += a[m x k] * b[k x n]
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut i = 0;
    // 4-row blocks keep the b row in cache across four accumulators.
    while i + 4 <= m {
        let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            let brow = &b[p * n..p * n + n];
            for j in 0..n {
                let bj = brow[j];
                c0[j] += a0 * bj;
                c1[j] += a1 * bj;
                c2[j] += a2 * bj;
                c3[j] += a3 * bj;
            }
        }
        i += 4;
    }
    while i < m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let ai = a[i * k + p];
            let brow = &b[p * n..p * n + n];
            for j in 0..n {
                crow[j] += ai * brow[j];
            }
        }
        i += 1;
    }
}

/// c[m x n] += a[m x l] * b[n x l]^T  (dot-product form, `l` contiguous in both)
pub fn gemm_nt(m: usize, n: usize, l: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * l);
    debug_assert_eq!(b.len(), n * l);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * l..(i + 1) * l];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * l..(j + 1) * l];
            crow[j] += dot(arow, brow);
        }
    }
}

/// Unrolled dot product; four lanes so LLVM vectorizes the reduction.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let len = a.len().min(b.len());
    let mut acc = [0.0f32; 4];
    let chunks = len / 4;
    for q in 0..chunks {
        let i = q * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..len {
        s += a[i] * b[i];
    }
    s
}
