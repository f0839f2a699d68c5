//! Row-major dense products on top of `matrixmultiply::dgemm`.

/// `c (m×n) = a (m×k) · b (k×n)`.
pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    // SAFETY: the slice lengths match the dimensions and strides passed.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c (k×n) += aᵀ · b` for `a (m×k)` and `b (m×n)`.
pub fn matmul_at_b_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // SAFETY: `a` is read transposed through its strides; lengths checked above.
    unsafe {
        matrixmultiply::dgemm(
            k, m, n, 1.0,
            a.as_ptr(), 1, k as isize,
            b.as_ptr(), n as isize, 1,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c (m×k) = a (m×n) · bᵀ` for `b (k×n)`.
pub fn matmul_a_bt(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    if m == 0 || k == 0 {
        return;
    }
    if n == 0 {
        c.fill(0.0);
        return;
    }
    // SAFETY: `b` is read transposed through its strides; lengths checked above.
    unsafe {
        matrixmultiply::dgemm(
            m, n, k, 1.0,
            a.as_ptr(), n as isize, 1,
            b.as_ptr(), 1, n as isize,
            0.0,
            c.as_mut_ptr(), k as isize, 1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    fn filled(len: usize, seed: f64) -> Vec<f64> {
        (0..len).map(|i| ((i as f64 + seed) * 0.37).sin()).collect()
    }

    #[test]
    fn products_match_naive() {
        let (m, k, n) = (7, 5, 3);
        let a = filled(m * k, 1.0);
        let b = filled(k * n, 2.0);
        let mut c = vec![0.0; m * n];
        matmul(m, k, n, &a, &b, &mut c);
        for (x, y) in c.iter().zip(naive(m, k, n, &a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ·b with a (m×k), b (m×n), accumulated onto ones.
        let b2 = filled(m * n, 3.0);
        let mut acc = vec![1.0; k * n];
        matmul_at_b_acc(m, k, n, &a, &b2, &mut acc);
        let expected = naive(k, m, n, &transpose(m, k, &a), &b2);
        for (x, y) in acc.iter().zip(expected) {
            assert!((x - 1.0 - y).abs() < 1e-12);
        }

        // a (m×n) · bᵀ with b (k×n).
        let a3 = filled(m * n, 4.0);
        let b3 = filled(k * n, 5.0);
        let mut c3 = vec![0.0; m * k];
        matmul_a_bt(m, n, k, &a3, &b3, &mut c3);
        let expected = naive(m, n, k, &a3, &transpose(k, n, &b3));
        for (x, y) in c3.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
