//! Raw f32 kernels shared by the autodiff graph and the inference paths.
//!
//! Everything here is single-threaded with a fixed, sequential reduction
//! order, so results are bit-identical between runs on one platform. The
//! training and inference code paths both call these, which keeps their
//! forward passes bitwise equal.

/// C = A @ B with A: [m,k], B: [k,n]. `out` is overwritten.
pub fn matmul_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// C = A @ B^T with A: [m,k], B: [n,k].
pub fn matmul_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
}

/// C = A^T @ B with A: [k,m], B: [k,n].
pub fn matmul_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aval = a_row[i];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aval * bv;
            }
        }
    }
}

pub fn transpose(x: &[f32], rows: usize, cols: usize, out: &mut [f32]) {
    debug_assert_eq!(x.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
}

/// Unfolds an image [C,H,W] into columns [C*9, H*W] for a 3x3 kernel with
/// stride 1 and zero padding 1.
pub fn im2col_3x3(x: &[f32], c: usize, h: usize, w: usize, out: &mut [f32]) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(out.len(), c * 9 * h * w);
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = &mut out[(ch * 9 + ky * 3 + kx) * hw..(ch * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col_3x3`: folds columns [C*9, H*W] back into [C,H,W],
/// accumulating into `out`.
pub fn col2im_3x3(cols: &[f32], c: usize, h: usize, w: usize, out: &mut [f32]) {
    debug_assert_eq!(cols.len(), c * 9 * h * w);
    debug_assert_eq!(out.len(), c * h * w);
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = &cols[(ch * 9 + ky * 3 + kx) * hw..(ch * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => {
                            for i in 1..w {
                                dst[i - 1] += src[i];
                            }
                        }
                        1 => {
                            for i in 0..w {
                                dst[i] += src[i];
                            }
                        }
                        _ => {
                            for i in 0..w - 1 {
                                dst[i + 1] += src[i];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Max-subtracted softmax over contiguous rows of length `cols`, in place.
pub fn softmax_rows(x: &mut [f32], cols: usize) {
    debug_assert_eq!(x.len() % cols, 0);
    for row in x.chunks_mut(cols) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Layer norm over rows of length `cols` with population variance.
/// Writes the normalized-then-affine output and returns per-row
/// `(mean, inv_std)` for the backward pass.
pub fn layer_norm_rows(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
    cols: usize,
    out: &mut [f32],
) -> (Vec<f32>, Vec<f32>) {
    debug_assert_eq!(x.len() % cols, 0);
    debug_assert_eq!(gamma.len(), cols);
    debug_assert_eq!(beta.len(), cols);
    let rows = x.len() / cols;
    let mut means = Vec::with_capacity(rows);
    let mut inv_stds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mut mean = 0.0f32;
        for &v in row {
            mean += v;
        }
        mean /= cols as f32;
        let mut var = 0.0f32;
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var /= cols as f32;
        let inv_std = 1.0 / (var + eps).sqrt();
        let dst = &mut out[r * cols..(r + 1) * cols];
        for i in 0..cols {
            dst[i] = (row[i] - mean) * inv_std * gamma[i] + beta[i];
        }
        means.push(mean);
        inv_stds.push(inv_std);
    }
    (means, inv_stds)
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU activation x * sigmoid(x), elementwise into `out`.
pub fn silu(x: &[f32], out: &mut [f32]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v * sigmoid(v);
    }
}

/// 2x2 average pooling: [C,H,W] -> [C,H/2,W/2].
pub fn avg_pool2(x: &[f32], c: usize, h: usize, w: usize, out: &mut [f32]) {
    let (oh, ow) = (h / 2, w / 2);
    debug_assert_eq!(out.len(), c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            for xw in 0..ow {
                let i = 2 * y * w + 2 * xw;
                dst[y * ow + xw] = 0.25 * (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]);
            }
        }
    }
}

/// Nearest-neighbor 2x upsampling: [C,H,W] -> [C,2H,2W].
pub fn upsample2(x: &[f32], c: usize, h: usize, w: usize, out: &mut [f32]) {
    let (oh, ow) = (h * 2, w * 2);
    debug_assert_eq!(out.len(), c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            for xw in 0..ow {
                dst[y * ow + xw] = plane[(y / 2) * w + xw / 2];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0f32];
        let mut out = [0.0f32; 9];
        matmul_nn(&eye, &eye, 3, 3, 3, &mut out);
        assert_eq!(out, eye);
    }

    #[test]
    fn matmul_annihilator() {
        let a = [1.0, 2.0, 3.0, 4.0f32];
        let zero = [0.0f32; 4];
        let mut out = [9.0f32; 4];
        matmul_nn(&a, &zero, 2, 2, 2, &mut out);
        assert_eq!(out, zero);
    }

    #[test]
    fn matmul_variants_agree() {
        // nt and tn must match nn applied to explicitly transposed inputs.
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.71).cos()).collect();
        let mut c_ref = vec![0.0; m * n];
        matmul_nn(&a, &b, m, k, n, &mut c_ref);

        let mut bt = vec![0.0; k * n];
        transpose(&b, k, n, &mut bt); // bt: [n,k]
        let mut c_nt = vec![0.0; m * n];
        matmul_nt(&a, &bt, m, k, n, &mut c_nt);
        for (x, y) in c_ref.iter().zip(&c_nt) {
            assert!((x - y).abs() < 1e-5);
        }

        let mut at = vec![0.0; m * k];
        transpose(&a, m, k, &mut at); // at: [k,m]
        let mut c_tn = vec![0.0; m * n];
        matmul_tn(&at, &b, m, k, n, &mut c_tn);
        for (x, y) in c_ref.iter().zip(&c_tn) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_is_stable_and_normalized() {
        let mut x = vec![1000.0, 0.0];
        softmax_rows(&mut x, 2);
        assert!((x[0] - 1.0).abs() < 1e-6);
        assert!(x[1].abs() < 1e-6);

        let mut y = vec![0.0, 0.0];
        softmax_rows(&mut y, 2);
        assert!((y[0] - 0.5).abs() < 1e-6 && (y[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let (c, h, w) = (2, 4, 4);
        let x: Vec<f32> = (0..c * h * w).map(|i| ((i * 7 % 13) as f32 - 6.0) * 0.3).collect();
        let y: Vec<f32> = (0..c * 9 * h * w).map(|i| ((i * 5 % 11) as f32 - 5.0) * 0.2).collect();
        let mut cx = vec![0.0; c * 9 * h * w];
        im2col_3x3(&x, c, h, w, &mut cx);
        let mut cty = vec![0.0; c * h * w];
        col2im_3x3(&y, c, h, w, &mut cty);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.iter().zip(&cty).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let x: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let mut pooled = vec![0.0; 4];
        avg_pool2(&x, 1, 4, 4, &mut pooled);
        assert_eq!(pooled, vec![2.5, 4.5, 10.5, 12.5]);
        let mut up = vec![0.0; 16];
        upsample2(&pooled, 1, 2, 2, &mut up);
        assert_eq!(up[0], 2.5);
        assert_eq!(up[1], 2.5);
        assert_eq!(up[4], 2.5);
        assert_eq!(up[15], 12.5);
    }
}
