//! Convolution, dense, activation, pooling, dropout and softmax layers with
//! their hand-derived backward passes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::shape;
use crate::math::{exp, ln};
use crate::Result;

/// Filters, kernel size and stride of a 1D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(filters: usize, kernel: usize, stride: usize) -> Self {
        Self {
            filters,
            kernel,
            stride,
        }
    }

    /// Output length for a valid (unpadded) convolution, if any.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        (self.stride > 0 && self.kernel > 0 && len >= self.kernel)
            .then(|| (len - self.kernel) / self.stride + 1)
    }
}

/// Valid 1D cross-correlation plus bias.
///
/// `x` is `[c_in, len]`, `weights` is `[c_out, c_in, k]`, `bias` is `[c_out]`.
/// Returns `[c_out, (len − k) / stride + 1]`.
pub fn conv1d(x: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (c_in, len) = x.dims2()?;
    let [c_out, wc_in, k] = weights.shape()[..] else {
        return Err(shape!("conv weights must be rank 3, got {:?}", weights.shape()));
    };
    if wc_in != c_in || bias.len() != c_out {
        return Err(shape!(
            "conv weights {:?} / bias {:?} do not match input {:?}",
            weights.shape(),
            bias.shape(),
            x.shape()
        ));
    }
    if stride == 0 || k == 0 || len < k {
        return Err(shape!("input length {len} shorter than kernel {k} (stride {stride})"));
    }
    let out_len = (len - k) / stride + 1;
    let xd = x.data();
    let wd = weights.data();
    let mut out = vec![0.0; c_out * out_len];
    for o in 0..c_out {
        let row = &mut out[o * out_len..(o + 1) * out_len];
        row.fill(bias.data()[o]);
        for i in 0..c_in {
            let wrow = &wd[(o * c_in + i) * k..(o * c_in + i + 1) * k];
            let xrow = &xd[i * len..(i + 1) * len];
            for (t, acc) in row.iter_mut().enumerate() {
                let xs = &xrow[t * stride..t * stride + k];
                *acc += wrow.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Tensor::from_vec(&[c_out, out_len], out)
}

/// Gradients of [`conv1d`]: `(dx, dweights, dbias)`.
pub fn conv1d_backward(
    x: &Tensor,
    weights: &Tensor,
    stride: usize,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c_in, len) = x.dims2()?;
    let [c_out, _, k] = weights.shape()[..] else {
        return Err(shape!("conv weights must be rank 3"));
    };
    let (dc, out_len) = dy.dims2()?;
    if dc != c_out {
        return Err(shape!("conv upstream gradient has {dc} channels, expected {c_out}"));
    }
    let xd = x.data();
    let wd = weights.data();
    let dyd = dy.data();
    let mut dx = vec![0.0; c_in * len];
    let mut dw = vec![0.0; c_out * c_in * k];
    let mut db = vec![0.0; c_out];
    for o in 0..c_out {
        let g = &dyd[o * out_len..(o + 1) * out_len];
        db[o] = g.iter().sum();
        for i in 0..c_in {
            let base = (o * c_in + i) * k;
            let xrow = &xd[i * len..(i + 1) * len];
            let dxrow = &mut dx[i * len..(i + 1) * len];
            for (t, gt) in g.iter().enumerate() {
                if *gt == 0.0 {
                    continue;
                }
                let s = t * stride;
                for j in 0..k {
                    dw[base + j] += gt * xrow[s + j];
                    dxrow[s + j] += gt * wd[base + j];
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[c_in, len], dx)?,
        Tensor::from_vec(&[c_out, c_in, k], dw)?,
        Tensor::vector(db),
    ))
}

/// Rectifier in place.
pub fn relu_inplace(x: &mut Tensor) {
    for v in x.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `dy` where the rectifier output was zero.
pub fn relu_backward_inplace(out: &Tensor, dy: &mut Tensor) {
    for (g, y) in dy.data_mut().iter_mut().zip(out.data()) {
        if *y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Affine map `W·x + b`, `weights` is `[out, in]`.
pub fn dense(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n_out, n_in) = weights.dims2()?;
    if x.len() != n_in || bias.len() != n_out {
        return Err(shape!(
            "dense {:?} cannot take input of {} values / bias {}",
            weights.shape(),
            x.len(),
            bias.len()
        ));
    }
    let wd = weights.data();
    let xd = x.data();
    let out = (0..n_out)
        .map(|o| {
            bias.data()[o]
                + wd[o * n_in..(o + 1) * n_in]
                    .iter()
                    .zip(xd)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect();
    Ok(Tensor::vector(out))
}

/// Gradients of [`dense`]: `(dx, dweights, dbias)`.
pub fn dense_backward(x: &Tensor, weights: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n_out, n_in) = weights.dims2()?;
    if dy.len() != n_out || x.len() != n_in {
        return Err(shape!("dense backward shape mismatch"));
    }
    let wd = weights.data();
    let xd = x.data();
    let mut dx = vec![0.0; n_in];
    let mut dw = vec![0.0; n_out * n_in];
    for (o, g) in dy.data().iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        let row = &wd[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for j in 0..n_in {
            drow[j] = g * xd[j];
            dx[j] += g * row[j];
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), dx)?,
        Tensor::from_vec(&[n_out, n_in], dw)?,
        Tensor::vector(dy.data().to_vec()),
    ))
}

/// Numerically stable softmax over all elements.
pub fn softmax(x: &Tensor) -> Tensor {
    Tensor::vector(softmax_slice(x.data()))
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of probabilities `p` against class `target`.
pub fn cross_entropy(p: &Tensor, target: usize) -> f64 {
    -ln(p.data()[target].max(f64::MIN_POSITIVE))
}

/// Gradient of cross-entropy with respect to the softmax logits: `p − y`.
pub fn softmax_cross_entropy_backward(p: &Tensor, target: usize) -> Tensor {
    let mut g = p.clone();
    g.data_mut()[target] -= 1.0;
    g
}

/// Inverted dropout mask: kept entries are `1 / (1 − rate)`, dropped are 0.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Dropout. Identity at inference or when `rate == 0`.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, rate: f64, rng: &mut R, training: bool) -> Tensor {
    if !training || rate <= 0.0 {
        return x.clone();
    }
    let mask = dropout_mask(x.len(), rate, rng);
    let mut out = x.clone();
    for (v, m) in out.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
    out
}

/// Mean over the rows of an `[len, d]` tensor.
pub fn temporal_pool(x: &Tensor) -> Result<Tensor> {
    let (len, d) = x.dims2()?;
    if len == 0 {
        return Err(shape!("cannot pool an empty sequence"));
    }
    let mut out = vec![0.0; d];
    for row in x.data().chunks_exact(d) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let inv = 1.0 / len as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(Tensor::vector(out))
}

/// Gradient of [`temporal_pool`] for an input of `len` rows.
pub fn temporal_pool_backward(dy: &Tensor, len: usize) -> Tensor {
    let d = dy.len();
    let inv = 1.0 / len as f64;
    let mut out = Vec::with_capacity(len * d);
    for _ in 0..len {
        out.extend(dy.data().iter().map(|g| g * inv));
    }
    Tensor::from_vec(&[len, d], out).expect("pool gradient shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let y = conv1d(&x, &t(&[1, 1, 1], &[1.0]), &t(&[1], &[0.0]), 1).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_hand_example() {
        let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let y = conv1d(&x, &t(&[1, 1, 2], &[1.0, 1.0]), &t(&[1], &[0.0]), 2).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn conv_length_formula_and_errors() {
        let x = Tensor::zeros(&[1, 300]);
        let y = conv1d(&x, &Tensor::zeros(&[8, 1, 8]), &Tensor::zeros(&[8]), 2).unwrap();
        assert_eq!(y.shape(), &[8, 147]);
        assert_eq!(ConvSpec::new(8, 8, 2).output_len(300), Some(147));
        let short = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            conv1d(&short, &Tensor::zeros(&[1, 1, 4]), &Tensor::zeros(&[1]), 1),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&Tensor::vector(vec![0.0, 0.0]));
        assert_eq!(p.data(), &[0.5, 0.5]);
        let a = softmax(&Tensor::vector(vec![0.3, -1.2, 2.0]));
        let b = softmax(&Tensor::vector(vec![100.3, 98.8, 102.0]));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_identity() {
        let x = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(dense(&x, &w, &Tensor::zeros(&[3])).unwrap(), x);
        assert!(dense(&x, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn softmax_ce_gradient_closed_form() {
        let p = softmax(&Tensor::vector(vec![0.0, 0.0]));
        let g = softmax_cross_entropy_backward(&p, 1);
        assert_eq!(g.data(), &[0.5, -0.5]);
        assert!((cross_entropy(&p, 1) - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn dropout_modes() {
        let x = Tensor::vector((0..50).map(f64::from).collect());
        let mut r = rng::stream(1, &[]);
        assert_eq!(dropout(&x, 0.4, &mut r, false), x);
        assert_eq!(dropout(&x, 0.0, &mut r, true), x);
        let y = dropout(&x, 0.4, &mut r, true);
        assert!(y
            .data()
            .iter()
            .zip(x.data())
            .all(|(a, b)| *a == 0.0 || (a - b / 0.6).abs() < 1e-12));
    }

    #[test]
    fn dropout_preserves_mean() {
        let n = 100_000;
        let x = Tensor::vector((0..n).map(|i| 1.0 + (i % 7) as f64).collect());
        let mean_in = x.data().iter().sum::<f64>() / n as f64;
        let y = dropout(&x, 0.4, &mut rng::stream(2, &[]), true);
        let mean_out = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean_out / mean_in - 1.0).abs() < 0.02);
    }

    #[test]
    fn pooling_examples() {
        let c = t(&[3, 2], &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(temporal_pool(&c).unwrap().data(), &[1.0, 2.0]);
        let one = t(&[1, 3], &[4.0, 5.0, 6.0]);
        assert_eq!(temporal_pool(&one).unwrap().data(), &[4.0, 5.0, 6.0]);
        let two = t(&[2, 2], &[1.0, 1.0, 3.0, 3.0]);
        assert_eq!(temporal_pool(&two).unwrap().data(), &[2.0, 2.0]);
        assert!(temporal_pool(&Tensor::zeros(&[0, 2])).is_err());
    }
}
