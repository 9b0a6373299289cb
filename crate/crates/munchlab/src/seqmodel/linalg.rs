//! Thin safe wrappers over the sgemm kernel for the three matmul forms the
//! model needs. All matrices are dense row-major slices.

/// y[m,n] = x[m,k] · wᵀ, where w is [n,k]. The forward projection form.
pub fn matmul_nt(m: usize, k: usize, n: usize, x: &[f32], w: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(w.len(), n * k);
    debug_assert_eq!(y.len(), m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            x.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            0.0,
            y.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// y[m,n] += x[m,k] · w, where w is [k,n]. The input-gradient form.
pub fn matmul_nn_acc(m: usize, k: usize, n: usize, x: &[f32], w: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(w.len(), k * n);
    debug_assert_eq!(y.len(), m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            x.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            n as isize,
            1,
            1.0,
            y.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// y[m,n] += aᵀ · b, where a is [k,m] and b is [k,n]. The weight-gradient
/// form (a = upstream gradient, b = forward input).
pub fn matmul_tn_acc(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], y: &mut [f32]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(y.len(), m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            y.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_nt(m: usize, k: usize, n: usize, x: &[f32], w: &[f32]) -> Vec<f32> {
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for p in 0..k {
                    acc += x[i * k + p] as f64 * w[j * k + p] as f64;
                }
                y[i * n + j] = acc as f32;
            }
        }
        y
    }

    #[test]
    fn forms_agree_with_naive_loops() {
        let (m, k, n) = (5, 7, 3);
        let x: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.37).sin()).collect();
        let w: Vec<f32> = (0..n * k).map(|i| (i as f32 * 0.11).cos()).collect();

        let mut y = vec![0.0; m * n];
        matmul_nt(m, k, n, &x, &w, &mut y);
        let want = naive_nt(m, k, n, &x, &w);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }

        // x·wᵀ computed via the nn form against w transposed manually.
        let mut wt = vec![0.0; k * n];
        for j in 0..n {
            for p in 0..k {
                wt[p * n + j] = w[j * k + p];
            }
        }
        let mut y2 = vec![0.0; m * n];
        matmul_nn_acc(m, k, n, &x, &wt, &mut y2);
        for (a, b) in y2.iter().zip(&want) {
            assert!((a - b).abs() < 1e-5);
        }

        // (xᵀ)ᵀ·wt through the tn form: aᵀ·b with a = x laid out as [k,m].
        let mut xt = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                xt[p * m + i] = x[i * k + p];
            }
        }
        let mut y3 = vec![0.0; m * n];
        matmul_tn_acc(m, k, n, &xt, &wt, &mut y3);
        for (a, b) in y3.iter().zip(&want) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn acc_forms_accumulate() {
        let mut y = vec![1.0f32; 4];
        matmul_nn_acc(2, 1, 2, &[1.0, 2.0], &[3.0, 4.0], &mut y);
        assert_eq!(y, vec![4.0, 5.0, 7.0, 9.0]);
    }
}
