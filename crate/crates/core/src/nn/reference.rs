//! Straight-line scalar forward pass of the detector over its named
//! parameters, generic in the arithmetic type.
//!
//! It shares no code with the tensor layers. With [`Dd`](super::real::Dd)
//! arithmetic it resolves logit changes far below one `f64` ulp, which the
//! finite-difference gradient check relies on.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;
use super::{Model, Tensor, Variant};
use crate::dataset::WindowSample;
use crate::error::shape;
use crate::Result;

/// Logits plus the sign of every rectifier input, in evaluation order.
#[derive(Debug, Clone)]
pub struct ReferencePass<T> {
    pub logits: Vec<T>,
    pub relu_active: Vec<bool>,
}

struct Params<'a> {
    map: BTreeMap<&'a str, &'a Tensor>,
}

impl<'a> Params<'a> {
    fn get(&self, name: &str) -> Result<&'a Tensor> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| shape!("model has no parameter {name}"))
    }
}

fn at<T: Real>(t: &Tensor, i: usize) -> T {
    T::from_f64(t.data()[i])
}

/// `x[c][t]` → `[c_out][t_out]`, rectified.
fn conv<T: Real>(x: &[Vec<T>], w: &Tensor, b: &Tensor, stride: usize, active: &mut Vec<bool>) -> Result<Vec<Vec<T>>> {
    let [c_out, c_in, k] = w.shape()[..] else {
        return Err(shape!("conv weight rank"));
    };
    let len = x[0].len();
    if c_in != x.len() || len < k {
        return Err(shape!("conv input {}×{len} for weight {:?}", x.len(), w.shape()));
    }
    let out_len = (len - k) / stride + 1;
    let mut out = vec![vec![T::zero(); out_len]; c_out];
    for (o, row) in out.iter_mut().enumerate() {
        for (t, y) in row.iter_mut().enumerate() {
            let mut acc: T = at(b, o);
            for (c, xc) in x.iter().enumerate() {
                for j in 0..k {
                    acc = acc + at::<T>(w, (o * c_in + c) * k + j) * xc[t * stride + j];
                }
            }
            active.push(acc > T::zero());
            *y = acc.relu();
        }
    }
    Ok(out)
}

/// Row-wise `x · w + b` with `w: [in, out]`.
fn project<T: Real>(x: &[Vec<T>], w: &Tensor, b: Option<&Tensor>) -> Vec<Vec<T>> {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            (0..n_out)
                .map(|j| {
                    let mut acc = b.map_or(T::zero(), |b| at(b, j));
                    for i in 0..n_in {
                        acc = acc + row[i] * at::<T>(w, i * n_out + j);
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// `w · x + b` with `w: [out, in]`.
fn affine<T: Real>(x: &[T], w: &Tensor, b: &Tensor) -> Vec<T> {
    let n_in = w.shape()[1];
    (0..w.shape()[0])
        .map(|o| {
            let mut acc: T = at(b, o);
            for (i, xi) in x.iter().enumerate().take(n_in) {
                acc = acc + at::<T>(w, o * n_in + i) * *xi;
            }
            acc
        })
        .collect()
}

fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    let m = v.iter().copied().fold(v[0], |a, b| if b > a { b } else { a });
    let e: Vec<T> = v.iter().map(|x| (*x - m).exp()).collect();
    let s = e.iter().copied().fold(T::zero(), |a, b| a + b);
    e.into_iter().map(|x| x / s).collect()
}

fn head<T: Real>(model: &Model, p: &Params<'_>, prefix: &str, x: &[f64], active: &mut Vec<bool>) -> Result<Vec<T>> {
    let arch = &model.arch;
    let mut h = vec![x.iter().map(|v| T::from_f64(*v)).collect::<Vec<T>>()];
    for (i, spec) in arch.head_convs.iter().enumerate() {
        let w = p.get(&format!("{prefix}.conv{}.weight", i + 1))?;
        let b = p.get(&format!("{prefix}.conv{}.bias", i + 1))?;
        h = conv(&h, w, b, spec.stride, active)?;
    }
    let len = h[0].len();
    let seq: Vec<Vec<T>> = (0..len).map(|t| h.iter().map(|c| c[t]).collect()).collect();
    match arch.variant {
        Variant::Attention => {
            let g = |n: &str| p.get(&format!("{prefix}.attention.{n}"));
            let q = project(&seq, g("query.weight")?, Some(g("query.bias")?));
            let k = project(&seq, g("key.weight")?, None);
            let v = project(&seq, g("value.weight")?, Some(g("value.bias")?));
            let dk = arch.key_dim;
            let scale = T::one() / T::from_f64(dk as f64).sqrt();
            let mut concat = vec![vec![T::zero(); arch.attention_heads * dk]; len];
            for hd in 0..arch.attention_heads {
                let cols = hd * dk..(hd + 1) * dk;
                for l in 0..len {
                    let scores: Vec<T> = (0..len)
                        .map(|m| {
                            cols.clone()
                                .fold(T::zero(), |acc, j| acc + q[l][j] * k[m][j])
                                * scale
                        })
                        .collect();
                    let a = softmax(&scores);
                    for j in cols.clone() {
                        concat[l][j] = (0..len).fold(T::zero(), |acc, m| acc + a[m] * v[m][j]);
                    }
                }
            }
            let y = project(&concat, g("output.weight")?, Some(g("output.bias")?));
            let inv = T::one() / T::from_f64(len as f64);
            Ok((0..arch.embed_dim)
                .map(|j| y.iter().fold(T::zero(), |acc, r| acc + r[j]) * inv)
                .collect())
        }
        Variant::Lstm => {
            let w = p.get(&format!("{prefix}.lstm.input_weight"))?;
            let u = p.get(&format!("{prefix}.lstm.recurrent_weight"))?;
            let b = p.get(&format!("{prefix}.lstm.bias"))?;
            let units = arch.embed_dim;
            let mut hs = vec![T::zero(); units];
            let mut cs = vec![T::zero(); units];
            for xt in &seq {
                let zx = affine(xt, w, b);
                let zero_bias = Tensor::zeros(&[4 * units]);
                let zh = affine(&hs, u, &zero_bias);
                let z: Vec<T> = zx.iter().zip(&zh).map(|(a, b)| *a + *b).collect();
                for j in 0..units {
                    let i = z[j].sigmoid();
                    let f = z[units + j].sigmoid();
                    let gg = z[2 * units + j].tanh();
                    let o = z[3 * units + j].sigmoid();
                    cs[j] = f * cs[j] + i * gg;
                    hs[j] = o * cs[j].tanh();
                }
            }
            Ok(hs)
        }
    }
}

/// Inference-mode logits of `sample`.
pub fn reference_forward<T: Real>(model: &Model, sample: &WindowSample) -> Result<ReferencePass<T>> {
    let arch = &model.arch;
    if sample.rssi.len() != arch.w || sample.sinr.len() != arch.w {
        return Err(shape!("window length does not match the model"));
    }
    let p = Params {
        map: model.params().iter().collect(),
    };
    let mut active = Vec::new();
    let mut joined = head::<T>(model, &p, "rssi", &sample.rssi, &mut active)?;
    joined.extend(head::<T>(model, &p, "sinr", &sample.sinr, &mut active)?);
    let mut h = vec![joined];
    for (i, spec) in arch.body_convs.iter().enumerate() {
        let w = p.get(&format!("body.conv{}.weight", i + 1))?;
        let b = p.get(&format!("body.conv{}.bias", i + 1))?;
        h = conv(&h, w, b, spec.stride, &mut active)?;
    }
    let flat: Vec<T> = h.into_iter().flatten().collect();
    let hidden: Vec<T> = affine(&flat, p.get("dense.weight")?, p.get("dense.bias")?)
        .into_iter()
        .map(|v| {
            active.push(v > T::zero());
            v.relu()
        })
        .collect();
    let logits = affine(&hidden, p.get("output.weight")?, p.get("output.bias")?);
    Ok(ReferencePass {
        logits,
        relu_active: active,
    })
}

/// Cross-entropy from logits in the reference arithmetic.
pub fn reference_cross_entropy<T: Real>(logits: &[T], target: usize) -> T {
    let m = logits.iter().copied().fold(logits[0], |a, b| if b > a { b } else { a });
    let s = logits.iter().fold(T::zero(), |acc, z| acc + (*z - m).exp());
    s.ln() + m - logits[target]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Label, Origin};
    use crate::nn::real::Dd;
    use crate::nn::ArchConfig;

    fn sample(w: usize) -> WindowSample {
        WindowSample {
            rssi: (0..w).map(|i| libm::sin(i as f64 * 0.37)).collect(),
            sinr: (0..w).map(|i| libm::cos(i as f64 * 0.11) - 0.2).collect(),
            label: Label::Attack,
            origin: Origin { run: 0, start: 0 },
        }
    }

    #[test]
    fn matches_tensor_forward() {
        for v in [Variant::Attention, Variant::Lstm] {
            for seed in 0..3 {
                let m = Model::new(ArchConfig::reference(v, 40), seed).unwrap();
                let s = sample(40);
                let fast = m.logits(&s).unwrap();
                let slow = reference_forward::<f64>(&m, &s).unwrap();
                let precise = reference_forward::<Dd>(&m, &s).unwrap();
                for i in 0..2 {
                    assert!((fast.data()[i] - slow.logits[i]).abs() < 1e-12, "{v:?}");
                    assert!((fast.data()[i] - precise.logits[i].to_f64()).abs() < 1e-12, "{v:?}");
                }
                let ce = reference_cross_entropy(&precise.logits, 1).to_f64();
                assert!((ce - m.loss(&s).unwrap()).abs() < 1e-12);
            }
        }
    }
}
