use crate::scalar::Scalar;

/// `out += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (ov, &bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
}

/// `out += a[m,n] * b[k,n]^T`, giving `[m,k]`.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let br = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&x, &y) in ar.iter().zip(br) {
                s += x * y;
            }
            out[i * k + p] += s;
        }
    }
}

/// `out += a[m,k]^T * b[m,n]`, giving `[k,n]`.
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let o = &mut out[p * n..(p + 1) * n];
            for (ov, &bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}
