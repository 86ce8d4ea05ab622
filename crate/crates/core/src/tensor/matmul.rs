use super::Scalar;

const MR: usize = 4;
const NR: usize = 32;

/// `c = a · b` (or `c += a · b` when `accumulate`), all row-major:
/// `a` is `m × k`, `b` is `k × n`, `c` is `m × n`.
///
/// Every output element sums its products in ascending `k`, starting from
/// zero (or from the existing value of `c` when accumulating). Register
/// tiling only changes which elements are computed together, never the order
/// of additions into any one element.
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if !accumulate {
        c.iter_mut().for_each(|v| *v = T::zero());
    }
    if m == 0 || n == 0 || k == 0 {
        return;
    }

    let n_full = n - n % NR;
    let m_full = m - m % MR;
    let mut i = 0;
    while i < m_full {
        let mut j = 0;
        while j < n_full {
            tile::<T, MR, NR>(i, j, k, n, a, b, c);
            j += NR;
        }
        while j + 8 <= n {
            tile::<T, MR, 8>(i, j, k, n, a, b, c);
            j += 8;
        }
        while j < n {
            tile::<T, MR, 1>(i, j, k, n, a, b, c);
            j += 1;
        }
        i += MR;
    }
    while i < m {
        let mut j = 0;
        while j < n_full {
            tile::<T, 1, NR>(i, j, k, n, a, b, c);
            j += NR;
        }
        while j + 8 <= n {
            tile::<T, 1, 8>(i, j, k, n, a, b, c);
            j += 8;
        }
        while j < n {
            tile::<T, 1, 1>(i, j, k, n, a, b, c);
            j += 1;
        }
        i += 1;
    }
}

#[inline(always)]
fn tile<T: Scalar, const R: usize, const C: usize>(
    i: usize,
    j: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
) {
    let mut acc = [[T::zero(); C]; R];
    for r in 0..R {
        acc[r].copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + C]);
    }
    let a_rows: [&[T]; R] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
    for p in 0..k {
        let brow: &[T; C] = b[p * n + j..p * n + j + C].try_into().unwrap();
        for r in 0..R {
            let av = a_rows[r][p];
            for col in 0..C {
                acc[r][col] += av * brow[col];
            }
        }
    }
    for r in 0..R {
        c[(i + r) * n + j..(i + r) * n + j + C].copy_from_slice(&acc[r]);
    }
}

/// Plain triple loop with the same per-element summation order as [`gemm`].
/// Kept for benchmarks and as a readable statement of the contract.
pub fn matmul_naive_order<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = T::zero();
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}
