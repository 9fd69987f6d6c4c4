// Row-major matrix kernels. Every output row depends only on the matching
// input row, so results are independent of how many rows share a call.

use crate::float::Float;

/// out[r×c] += a[r×k] · b[k×c]
pub(crate) fn matmul_acc<T: Float>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[kk * c..(kk + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// out[k×c] += aᵀ · g  with a[r×k], g[r×c]
pub(crate) fn matmul_at_b_acc<T: Float>(a: &[T], g: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let g_row = &g[i * c..(i + 1) * c];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let out_row = &mut out[kk * c..(kk + 1) * c];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aik * gv;
            }
        }
    }
}

/// out[r×k] += g · bᵀ  with g[r×c], b[k×c]
pub(crate) fn matmul_a_bt_acc<T: Float>(g: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let g_row = &g[i * c..(i + 1) * c];
        for kk in 0..k {
            let b_row = &b[kk * c..(kk + 1) * c];
            let mut s = T::zero();
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                s += gv * bv;
            }
            out[i * k + kk] += s;
        }
    }
}

pub(crate) fn transpose<T: Float>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
    const B: [f64; 6] = [1.0, -1.0, 0.5, 2.0, 0.0, 1.0]; // 3×2

    #[test]
    fn plain_product() {
        let mut ab = [0.0; 4];
        matmul_acc(&A, &B, &mut ab, 2, 3, 2);
        assert_eq!(ab, [2.0, 6.0, 6.5, 12.0]);
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let g = [1.0, 0.5, -2.0, 3.0]; // 2×2

        let mut atg = [0.0; 6];
        matmul_at_b_acc(&A, &g, &mut atg, 2, 3, 2);
        let mut expect = [0.0; 6];
        matmul_acc(&transpose(&A, 2, 3), &g, &mut expect, 3, 2, 2);
        assert_eq!(atg, expect);

        // g[2×2] · Bᵀ where B is viewed as k×c = 3×2
        let mut gbt = [0.0; 6];
        matmul_a_bt_acc(&g, &B, &mut gbt, 2, 3, 2);
        let mut expect = [0.0; 6];
        matmul_acc(&g, &transpose(&B, 3, 2), &mut expect, 2, 2, 3);
        assert_eq!(gbt, expect);
    }
}
