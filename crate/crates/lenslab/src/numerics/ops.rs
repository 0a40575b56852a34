//! Tensor-level operations with checked shapes.
//!
//! These are the pure, inference-side entry points; the autodiff graph in
//! [`super::graph`] records the same kernels when gradients are needed.

use super::kernels as k;
use super::tensor::{Tensor, TensorError};

/// Standard matrix product. a: [m,k], b: [k,n] -> [m,n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(TensorError::ShapeMismatch(format!("matmul {sa:?} x {sb:?}")));
    }
    let (m, kk, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![0.0; m * n];
    k::matmul_nn(a.data(), b.data(), m, kk, n, &mut out);
    Ok(Tensor::from_op(vec![m, n], out))
}

/// Row-wise layer norm with population variance followed by the affine map.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor, TensorError> {
    let cols = *x
        .shape()
        .last()
        .ok_or_else(|| TensorError::ShapeMismatch("layer_norm on 0-d tensor".into()))?;
    if gamma.shape() != [cols] || beta.shape() != [cols] {
        return Err(TensorError::ShapeMismatch(format!(
            "layer_norm affine params must be [{cols}], got {:?} / {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    if eps <= 0.0 {
        return Err(TensorError::Contract("layer_norm eps must be positive".into()));
    }
    let mut out = vec![0.0; x.numel()];
    k::layer_norm_rows(x.data(), gamma.data(), beta.data(), eps, cols, &mut out);
    Ok(Tensor::from_op(x.shape().to_vec(), out))
}

/// Max-subtracted softmax along the last axis.
pub fn softmax(x: &Tensor) -> Result<Tensor, TensorError> {
    let cols = *x
        .shape()
        .last()
        .ok_or_else(|| TensorError::ShapeMismatch("softmax on 0-d tensor".into()))?;
    let mut out = x.data().to_vec();
    k::softmax_rows(&mut out, cols);
    Ok(Tensor::from_op(x.shape().to_vec(), out))
}

/// Scaled dot-product attention: softmax(q k^T / sqrt(d_h) + mask) v.
/// q,k,v: [T,d_h]; mask (optional): [T,T] with entries 0 or -inf.
pub fn attention(q: &Tensor, key: &Tensor, v: &Tensor, mask: Option<&Tensor>) -> Result<Tensor, TensorError> {
    let (sq, sk, sv) = (q.shape(), key.shape(), v.shape());
    if sq.len() != 2 || sq != sk || sq != sv {
        return Err(TensorError::ShapeMismatch(format!("attention q{sq:?} k{sk:?} v{sv:?}")));
    }
    let (t, d_h) = (sq[0], sq[1]);
    if let Some(m) = mask {
        if m.shape() != [t, t] {
            return Err(TensorError::ShapeMismatch(format!("mask {:?} for T={t}", m.shape())));
        }
    }
    let mut scores = vec![0.0; t * t];
    k::matmul_nt(q.data(), key.data(), t, d_h, t, &mut scores);
    let scale = 1.0 / (d_h as f32).sqrt();
    for (i, s) in scores.iter_mut().enumerate() {
        *s *= scale;
        if let Some(m) = mask {
            *s += m.data()[i];
        }
    }
    k::softmax_rows(&mut scores, t);
    let mut out = vec![0.0; t * d_h];
    k::matmul_nn(&scores, v.data(), t, t, d_h, &mut out);
    Ok(Tensor::from_op(vec![t, d_h], out))
}

/// 3x3 convolution (cross-correlation), stride 1, zero padding 1.
/// x: [C,H,W], w: [C',C,3,3] -> [C',H,W].
pub fn conv2d(x: &Tensor, w: &Tensor) -> Result<Tensor, TensorError> {
    let (sx, sw) = (x.shape(), w.shape());
    if sx.len() != 3 || sw.len() != 4 || sw[2] != 3 || sw[3] != 3 {
        return Err(TensorError::ShapeMismatch(format!("conv2d x{sx:?} w{sw:?}")));
    }
    if sw[1] != sx[0] {
        return Err(TensorError::ShapeMismatch(format!(
            "conv2d channel mismatch: input has {}, weight expects {}",
            sx[0], sw[1]
        )));
    }
    let (c, h, w_px) = (sx[0], sx[1], sx[2]);
    let c_out = sw[0];
    let hw = h * w_px;
    let mut cols = vec![0.0; c * 9 * hw];
    k::im2col_3x3(x.data(), c, h, w_px, &mut cols);
    let mut out = vec![0.0; c_out * hw];
    k::matmul_nn(w.data(), &cols, c_out, c * 9, hw, &mut out);
    Ok(Tensor::from_op(vec![c_out, h, w_px], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    #[test]
    fn matmul_shape_error() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn layer_norm_constant_row_maps_to_beta() {
        let x = Tensor::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let gamma = Tensor::full(vec![3], 1.0);
        let beta = Tensor::full(vec![3], 0.25);
        let y = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        for v in y.data() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_symmetric_pair() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap();
        let gamma = Tensor::full(vec![2], 1.0);
        let beta = Tensor::zeros(vec![2]);
        let y = layer_norm(&x, &gamma, &beta, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-3);
        assert!((y.data()[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn layer_norm_output_moments() {
        let mut rng = Rng::new(21, 0);
        let x = Tensor::randn(vec![3, 8], 2.0, &mut rng);
        let gamma = Tensor::full(vec![8], 1.0);
        let beta = Tensor::zeros(vec![8]);
        let y = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        for row in y.data().chunks(8) {
            let mean: f32 = row.iter().sum::<f32>() / 8.0;
            let var: f32 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 8.0;
            assert!(mean.abs() <= 1e-5, "row mean {mean}");
            assert!((var - 1.0).abs() <= 1e-3, "row var {var}");
        }
    }

    #[test]
    fn conv2d_delta_kernel_is_identity() {
        let mut rng = Rng::new(22, 0);
        let x = Tensor::randn(vec![1, 4, 4], 1.0, &mut rng);
        let mut w = vec![0.0f32; 9];
        w[4] = 1.0; // center tap
        let w = Tensor::new(vec![1, 1, 3, 3], w).unwrap();
        let y = conv2d(&x, &w).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_zero_kernel_is_zero() {
        let mut rng = Rng::new(23, 0);
        let x = Tensor::randn(vec![2, 4, 4], 1.0, &mut rng);
        let w = Tensor::zeros(vec![3, 2, 3, 3]);
        let y = conv2d(&x, &w).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_channel_mismatch_error() {
        let x = Tensor::zeros(vec![2, 4, 4]);
        let w = Tensor::zeros(vec![3, 5, 3, 3]);
        assert!(conv2d(&x, &w).is_err());
    }

    #[test]
    fn softmax_row_sums_to_one() {
        let mut rng = Rng::new(24, 0);
        let x = Tensor::randn(vec![5, 7], 3.0, &mut rng);
        let y = softmax(&x).unwrap();
        for row in y.data().chunks(7) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "sum {s}");
        }
    }
}
