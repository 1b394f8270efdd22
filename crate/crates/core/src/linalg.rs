//! Dense row-major kernels used by the networks. Sizes are small enough that
//! straightforward loops in cache-friendly order are sufficient.

/// `out[m x n] += a[m x k] * b[k x n]`
pub fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k x n] += a[m x k]^T * b[m x n]`
pub fn gemm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x k] += a[m x n] * b[k x n]^T`
pub fn gemm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(arow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `out[r] = bias[r] + sum_c w[r x c] * x[c]`
pub fn matvec(w: &[f64], x: &[f64], bias: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = bias[r] + dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out[c] += sum_r w[r x c] * y[r]`
pub fn matvec_t_acc(w: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &yv) in y.iter().enumerate() {
        if yv == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += wv * yv;
        }
    }
}

/// `w[r x c] += y[r] * x[c]`
pub fn outer_acc(w: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &yv) in y.iter().enumerate() {
        if yv == 0.0 {
            continue;
        }
        for (wv, &xv) in w[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *wv += yv * xv;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax, in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.5, -1.0, 2.0, 0.0, 1.0]; // 3x2
        let mut c = [0.0; 4];
        gemm_acc(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [-1.0, 7.5, -1.0, 18.0]);

        // a^T (3x2) * c (2x2)
        let mut t = [0.0; 6];
        gemm_tn_acc(&a, &c, &mut t, 2, 3, 2);
        assert_eq!(t, [-5.0, 79.5, -7.0, 105.0, -9.0, 130.5]);

        // a (2x3) * a^T (3x2)
        let mut g = [0.0; 4];
        gemm_nt_acc(&a, &a, &mut g, 2, 3, 2);
        assert_eq!(g, [14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut v = [1000.0, 1000.0, 999.0];
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(v[0], v[1]);
    }
}
