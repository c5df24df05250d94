//! Multi-head scaled dot-product self-attention over an `[len, d]` sequence.
//!
//! Per head `h`: `softmax(Q_h K_hᵀ / √d_key) V_h`. Heads are concatenated to
//! `[len, heads·d_key]` and projected to `[len, d_out]`. The query, value and
//! output projections carry a bias. A key bias would add the same term to
//! every score of a query row, which the softmax cancels, so it is omitted.

use alloc::vec;
use alloc::vec::Vec;

use super::layers::softmax_slice;
use super::Tensor;
use crate::error::shape;
use crate::math::sqrt;
use crate::Result;

/// Borrowed projection weights. `wq`, `wk`, `wv` are `[d, heads·d_key]`,
/// `wo` is `[heads·d_key, d_out]`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams<'a> {
    pub wq: &'a Tensor,
    pub bq: &'a Tensor,
    pub wk: &'a Tensor,
    pub wv: &'a Tensor,
    pub bv: &'a Tensor,
    pub wo: &'a Tensor,
    pub bo: &'a Tensor,
}

/// Parameter gradients in the same order as [`AttentionParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    len: usize,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[heads, len, len]` attention weights.
    weights: Vec<f64>,
    concat: Vec<f64>,
}

impl AttentionCache {
    /// Attention weights of head `h` as `[len, len]`, row-stochastic.
    pub fn head_weights(&self, h: usize) -> &[f64] {
        let n = self.len * self.len;
        &self.weights[h * n..(h + 1) * n]
    }
}

/// `x[len, d] · w[d, m] + b` into a fresh `[len, m]` buffer.
fn project(x: &[f64], len: usize, d: usize, w: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * m];
    for l in 0..len {
        let row = &mut out[l * m..(l + 1) * m];
        row.copy_from_slice(b);
        for i in 0..d {
            let xi = x[l * d + i];
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * m..(i + 1) * m];
            for (o, wv) in row.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
    }
    out
}

/// Backward of [`project`]: accumulates `dw`, `db` and `dx`.
fn project_backward(
    x: &[f64],
    len: usize,
    d: usize,
    w: &[f64],
    m: usize,
    dy: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    for l in 0..len {
        let g = &dy[l * m..(l + 1) * m];
        for (a, b) in db.iter_mut().zip(g) {
            *a += b;
        }
        for i in 0..d {
            let xi = x[l * d + i];
            let wrow = &w[i * m..(i + 1) * m];
            let dwrow = &mut dw[i * m..(i + 1) * m];
            let mut acc = 0.0;
            for j in 0..m {
                dwrow[j] += xi * g[j];
                acc += wrow[j] * g[j];
            }
            dx[l * d + i] += acc;
        }
    }
}

fn check_shapes(x: &Tensor, p: &AttentionParams<'_>, heads: usize, d_key: usize) -> Result<(usize, usize, usize)> {
    let (len, d) = x.dims2()?;
    if len == 0 {
        return Err(shape!("attention over an empty sequence"));
    }
    let hk = heads * d_key;
    for (name, w) in [("wq", p.wq), ("wk", p.wk), ("wv", p.wv)] {
        if w.shape() != [d, hk] {
            return Err(shape!("{name} is {:?}, expected [{d}, {hk}]", w.shape()));
        }
    }
    for b in [p.bq, p.bv] {
        if b.len() != hk {
            return Err(shape!("projection bias has {} values, expected {hk}", b.len()));
        }
    }
    let (wo_in, d_out) = p.wo.dims2()?;
    if wo_in != hk || p.bo.len() != d_out {
        return Err(shape!("output projection {:?} does not take {hk} inputs", p.wo.shape()));
    }
    Ok((len, d, d_out))
}

pub fn mhsa_forward(
    x: &Tensor,
    p: &AttentionParams<'_>,
    heads: usize,
    d_key: usize,
) -> Result<(Tensor, AttentionCache)> {
    let (len, d, d_out) = check_shapes(x, p, heads, d_key)?;
    let hk = heads * d_key;
    let xd = x.data();
    let q = project(xd, len, d, p.wq.data(), p.bq.data(), hk);
    let k = project(xd, len, d, p.wk.data(), &vec![0.0; hk], hk);
    let v = project(xd, len, d, p.wv.data(), p.bv.data(), hk);
    let scale = 1.0 / sqrt(d_key as f64);
    let mut weights = vec![0.0; heads * len * len];
    let mut concat = vec![0.0; len * hk];
    let mut scores = vec![0.0; len];
    for h in 0..heads {
        let off = h * d_key;
        for l in 0..len {
            let ql = &q[l * hk + off..l * hk + off + d_key];
            for (m, s) in scores.iter_mut().enumerate() {
                let km = &k[m * hk + off..m * hk + off + d_key];
                *s = ql.iter().zip(km).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let a = softmax_slice(&scores);
            let out = &mut concat[l * hk + off..l * hk + off + d_key];
            for (m, am) in a.iter().enumerate() {
                let vm = &v[m * hk + off..m * hk + off + d_key];
                for (o, vv) in out.iter_mut().zip(vm) {
                    *o += am * vv;
                }
            }
            weights[(h * len + l) * len..(h * len + l + 1) * len].copy_from_slice(&a);
        }
    }
    let y = project(&concat, len, hk, p.wo.data(), p.bo.data(), d_out);
    Ok((
        Tensor::from_vec(&[len, d_out], y)?,
        AttentionCache {
            len,
            q,
            k,
            v,
            weights,
            concat,
        },
    ))
}

pub fn mhsa_backward(
    x: &Tensor,
    p: &AttentionParams<'_>,
    heads: usize,
    d_key: usize,
    cache: &AttentionCache,
    dy: &Tensor,
) -> Result<(Tensor, AttentionGrads)> {
    let (len, d, d_out) = check_shapes(x, p, heads, d_key)?;
    if dy.shape() != [len, d_out] {
        return Err(shape!("attention upstream gradient is {:?}", dy.shape()));
    }
    let hk = heads * d_key;
    let scale = 1.0 / sqrt(d_key as f64);

    let mut dwo = vec![0.0; hk * d_out];
    let mut dbo = vec![0.0; d_out];
    let mut dconcat = vec![0.0; len * hk];
    project_backward(
        &cache.concat,
        len,
        hk,
        p.wo.data(),
        d_out,
        dy.data(),
        &mut dconcat,
        &mut dwo,
        &mut dbo,
    );

    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let mut dq = vec![0.0; len * hk];
    let mut dk = vec![0.0; len * hk];
    let mut dv = vec![0.0; len * hk];
    let mut da = vec![0.0; len];
    for h in 0..heads {
        let off = h * d_key;
        for l in 0..len {
            let a = &cache.weights[(h * len + l) * len..(h * len + l + 1) * len];
            let go = &dconcat[l * hk + off..l * hk + off + d_key];
            for m in 0..len {
                let vm = &v[m * hk + off..m * hk + off + d_key];
                da[m] = go.iter().zip(vm).map(|(x, y)| x * y).sum();
                let dvm = &mut dv[m * hk + off..m * hk + off + d_key];
                for (t, g) in dvm.iter_mut().zip(go) {
                    *t += a[m] * g;
                }
            }
            let dot: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
            for m in 0..len {
                let ds = a[m] * (da[m] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for j in 0..d_key {
                    dq[l * hk + off + j] += ds * k[m * hk + off + j];
                    dk[m * hk + off + j] += ds * q[l * hk + off + j];
                }
            }
        }
    }

    let xd = x.data();
    let mut dx = vec![0.0; len * d];
    let mut grads = AttentionGrads {
        wq: Tensor::zeros(&[d, hk]),
        bq: Tensor::zeros(&[hk]),
        wk: Tensor::zeros(&[d, hk]),
        wv: Tensor::zeros(&[d, hk]),
        bv: Tensor::zeros(&[hk]),
        wo: Tensor::from_vec(&[hk, d_out], dwo)?,
        bo: Tensor::vector(dbo),
    };
    // The key projection has no bias; its bias gradient lands in scratch.
    let mut scratch = vec![0.0; hk];
    for (w, g, dw, db) in [
        (p.wq, &dq, &mut grads.wq, grads.bq.data_mut()),
        (p.wk, &dk, &mut grads.wk, &mut scratch[..]),
        (p.wv, &dv, &mut grads.wv, grads.bv.data_mut()),
    ] {
        project_backward(xd, len, d, w.data(), hk, g, &mut dx, dw.data_mut(), db);
    }
    Ok((Tensor::from_vec(&[len, d], dx)?, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::exp;

    struct Owned {
        wq: Tensor,
        bq: Tensor,
        wk: Tensor,
        wv: Tensor,
        bv: Tensor,
        wo: Tensor,
        bo: Tensor,
    }

    impl Owned {
        fn view(&self) -> AttentionParams<'_> {
            AttentionParams {
                wq: &self.wq,
                bq: &self.bq,
                wk: &self.wk,
                wv: &self.wv,
                bv: &self.bv,
                wo: &self.wo,
                bo: &self.bo,
            }
        }
    }

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    fn identity(n: usize) -> Tensor {
        let mut w = Tensor::zeros(&[n, n]);
        for i in 0..n {
            w.data_mut()[i * n + i] = 1.0;
        }
        w
    }

    #[test]
    fn zero_query_key_gives_uniform_weights() {
        let x = t(&[3, 2], &[1.0, 2.0, -1.0, 0.5, 3.0, 0.0]);
        let p = Owned {
            wq: Tensor::zeros(&[2, 2]),
            bq: Tensor::zeros(&[2]),
            wk: Tensor::zeros(&[2, 2]),
            wv: identity(2),
            bv: Tensor::zeros(&[2]),
            wo: identity(2),
            bo: Tensor::zeros(&[2]),
        };
        let (y, cache) = mhsa_forward(&x, &p.view(), 2, 1).unwrap();
        for w in cache.head_weights(0) {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        for row in y.data().chunks(2) {
            assert!((row[0] - 1.0).abs() < 1e-12);
            assert!((row[1] - 2.5 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_is_projected_value() {
        let x = t(&[1, 2], &[0.7, -1.3]);
        let p = Owned {
            wq: t(&[2, 2], &[0.3, -0.1, 0.2, 0.5]),
            bq: t(&[2], &[0.1, 0.1]),
            wk: t(&[2, 2], &[-0.4, 0.6, 0.9, 0.2]),
            wv: t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]),
            bv: t(&[2], &[0.5, -0.5]),
            wo: t(&[2, 1], &[0.25, -1.0]),
            bo: t(&[1], &[0.125]),
        };
        let (y, cache) = mhsa_forward(&x, &p.view(), 1, 2).unwrap();
        assert_eq!(cache.head_weights(0), &[1.0]);
        let v0 = 0.7 * 1.0 + -1.3 * 3.0 + 0.5;
        let v1 = 0.7 * 2.0 + -1.3 * 4.0 - 0.5;
        assert!((y.data()[0] - (0.25 * v0 - v1 + 0.125)).abs() < 1e-12);
    }

    // Scalar oracle: one head, d_key = 1, two time steps.
    #[test]
    fn two_by_two_hand_computation() {
        let x = t(&[2, 2], &[1.0, 0.0, 0.0, 2.0]);
        let p = Owned {
            wq: t(&[2, 1], &[1.0, 0.5]),
            bq: t(&[1], &[0.0]),
            wk: t(&[2, 1], &[2.0, -1.0]),
            wv: t(&[2, 1], &[3.0, 1.0]),
            bv: t(&[1], &[0.0]),
            wo: t(&[1, 1], &[2.0]),
            bo: t(&[1], &[1.0]),
        };
        // q = [1, 1], k = [2, -2], v = [3, 2]
        // row 0 scores: [2, -2]; row 1 scores: [2, -2]
        let a0 = exp(2.0) / (exp(2.0) + exp(-2.0));
        let o = a0 * 3.0 + (1.0 - a0) * 2.0;
        let expected = 2.0 * o + 1.0;
        let (y, _) = mhsa_forward(&x, &p.view(), 1, 1).unwrap();
        assert!((y.data()[0] - expected).abs() < 1e-12);
        assert!((y.data()[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence_rejected() {
        let p = Owned {
            wq: Tensor::zeros(&[2, 2]),
            bq: Tensor::zeros(&[2]),
            wk: Tensor::zeros(&[2, 2]),
            wv: Tensor::zeros(&[2, 2]),
            bv: Tensor::zeros(&[2]),
            wo: Tensor::zeros(&[2, 2]),
            bo: Tensor::zeros(&[2]),
        };
        let x = Tensor::zeros(&[0, 2]);
        assert!(matches!(mhsa_forward(&x, &p.view(), 2, 1), Err(crate::Error::Shape(_))));
    }
}
