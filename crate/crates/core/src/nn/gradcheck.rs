//! Central finite-difference verification of the analytic gradients.
//!
//! The error measure is `max |a − n| / max(|a|, |n|, 1e-8)` over the checked
//! coordinates. Dropout is never active during a check: a fresh mask per
//! evaluation would make the finite differences meaningless.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;

use super::{
    conv1d, conv1d_backward, cross_entropy, dense, dense_backward, lstm_backward, lstm_forward, mhsa_backward,
    mhsa_forward, softmax, softmax_cross_entropy_backward, temporal_pool, temporal_pool_backward, AttentionParams,
    LstmParams, Model, Tensor,
};
use super::real::{Dd, Real};
use super::reference::{reference_cross_entropy, reference_forward};
use crate::dataset::WindowSample;
use crate::error::config;
use crate::rng;
use crate::Result;

pub const DEFAULT_EPS: f64 = 1e-5;
const FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Outcome of a full-model check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates drawn but skipped because a rectifier changed state
    /// inside `[θ − eps, θ + eps]`, where the loss is not differentiable.
    pub kinks_skipped: usize,
    /// Parameter name, offset, analytic and numeric value of the worst
    /// coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Checks `coords` randomly chosen parameters of the full model on the
/// single-sample cross-entropy; see [`grad_check_report`].
pub fn grad_check(model: &Model, sample_: &WindowSample, eps: f64, coords: usize, seed: u64) -> Result<f64> {
    Ok(grad_check_report(model, sample_, eps, coords, seed)?.max_rel_error)
}

/// Compares the analytic gradient with central differences on `coords`
/// randomly drawn parameters (all of them if fewer exist).
///
/// The loss at `θ ± eps` is evaluated by the double-double reference forward
/// pass: with plain `f64` the subtraction leaves about one ulp of the loss,
/// which swamps coordinates whose gradient is near 1e-8. Coordinates whose
/// step crosses a rectifier kink are skipped, counted, and replaced by
/// further draws.
pub fn grad_check_report(
    model: &Model,
    sample_: &WindowSample,
    eps: f64,
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(config!("finite-difference step must be positive"));
    }
    let (_, grads) = model.backward(core::slice::from_ref(sample_))?;
    let target = sample_.label.index();
    let base = reference_forward::<Dd>(model, sample_)?.relu_active;
    let total = model.param_count();
    let mut r = rng::stream(seed, &[0x4743]);
    let order = sample(&mut r, total, total);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        kinks_skipped: 0,
        worst: None,
    };
    for i in order {
        if report.checked == coords {
            break;
        }
        let (t, off) = model.params().locate(i).expect("index in range");
        let orig = model.params().tensors()[t].data()[off];
        let (hi, lo) = (orig + eps, orig - eps);
        probe.params_mut().tensors_mut()[t].data_mut()[off] = hi;
        let plus = reference_forward::<Dd>(&probe, sample_)?;
        probe.params_mut().tensors_mut()[t].data_mut()[off] = lo;
        let minus = reference_forward::<Dd>(&probe, sample_)?;
        probe.params_mut().tensors_mut()[t].data_mut()[off] = orig;
        if plus.relu_active != base || minus.relu_active != base {
            report.kinks_skipped += 1;
            continue;
        }
        let diff = reference_cross_entropy(&plus.logits, target) - reference_cross_entropy(&minus.logits, target);
        let numeric = diff.to_f64() / (hi - lo);
        let analytic = grads.get(t, off);
        let e = relative_error(analytic, numeric);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(e);
            report.worst = Some((model.params().names()[t].clone(), off, analytic, numeric));
        }
    }
    Ok(report)
}

/// Layer families with an isolated check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv1d,
    Attention,
    Lstm,
    Dense,
    TemporalPool,
    SoftmaxCrossEntropy,
}

pub const LAYER_KINDS: [LayerKind; 6] = [
    LayerKind::Conv1d,
    LayerKind::Attention,
    LayerKind::Lstm,
    LayerKind::Dense,
    LayerKind::TemporalPool,
    LayerKind::SoftmaxCrossEntropy,
];

/// Splits a flat variable vector into tensors of the given shapes.
fn unpack(vars: &[f64], shapes: &[&[usize]]) -> Vec<Tensor> {
    let mut at = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::from_vec(s, vars[at..at + n].to_vec()).expect("shape");
            at += n;
            t
        })
        .collect()
}

fn pack(ts: &[&Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn dot(a: &Tensor, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compares an analytic gradient of `f` at `vars` against central differences
/// on every coordinate.
fn compare(vars: &[f64], analytic: &[f64], eps: f64, f: impl Fn(&[f64]) -> Result<f64>) -> Result<f64> {
    let mut v = vars.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        let orig = v[i];
        v[i] = orig + eps;
        let plus = f(&v)?;
        v[i] = orig - eps;
        let minus = f(&v)?;
        v[i] = orig;
        worst = worst.max(relative_error(analytic[i], (plus - minus) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Gradient check of one layer on a random linear read-out `Σ rᵢ yᵢ`, over
/// both its inputs and its parameters.
pub fn check_layer(kind: LayerKind, seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, &[0x4c4b, kind as u64]);
    let mut rand_vec = |n: usize| -> Vec<f64> { (0..n).map(|_| 2.0 * r.random::<f64>() - 1.0).collect() };
    let eps = DEFAULT_EPS;
    match kind {
        LayerKind::Conv1d => {
            let shapes: [&[usize]; 3] = [&[2, 11], &[3, 2, 3], &[3]];
            let stride = 2;
            let vars = rand_vec(22 + 18 + 3);
            let ro = rand_vec(3 * 5);
            let t = unpack(&vars, &shapes);
            let dy = Tensor::from_vec(&[3, 5], ro.clone())?;
            let (dx, dw, db) = conv1d_backward(&t[0], &t[1], stride, &dy)?;
            compare(&vars, &pack(&[&dx, &dw, &db]), eps, |v| {
                let t = unpack(v, &shapes);
                Ok(dot(&conv1d(&t[0], &t[1], &t[2], stride)?, &ro))
            })
        }
        LayerKind::Attention => {
            let (len, d, heads, dk, d_out) = (4, 3, 2, 2, 3);
            let hk = heads * dk;
            let shapes: [&[usize]; 8] = [
                &[len, d],
                &[d, hk],
                &[hk],
                &[d, hk],
                &[d, hk],
                &[hk],
                &[hk, d_out],
                &[d_out],
            ];
            let n: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
            let vars = rand_vec(n);
            let ro = rand_vec(len * d_out);
            let eval = |v: &[f64]| -> Result<(Vec<Tensor>, f64)> {
                let t = unpack(v, &shapes);
                let p = AttentionParams {
                    wq: &t[1],
                    bq: &t[2],
                    wk: &t[3],
                    wv: &t[4],
                    bv: &t[5],
                    wo: &t[6],
                    bo: &t[7],
                };
                let (y, _) = mhsa_forward(&t[0], &p, heads, dk)?;
                let out = dot(&y, &ro);
                Ok((t, out))
            };
            let t = unpack(&vars, &shapes);
            let p = AttentionParams {
                wq: &t[1],
                bq: &t[2],
                wk: &t[3],
                wv: &t[4],
                bv: &t[5],
                wo: &t[6],
                bo: &t[7],
            };
            let (_, cache) = mhsa_forward(&t[0], &p, heads, dk)?;
            let dy = Tensor::from_vec(&[len, d_out], ro.clone())?;
            let (dx, g) = mhsa_backward(&t[0], &p, heads, dk, &cache, &dy)?;
            let analytic = pack(&[&dx, &g.wq, &g.bq, &g.wk, &g.wv, &g.bv, &g.wo, &g.bo]);
            compare(&vars, &analytic, eps, |v| Ok(eval(v)?.1))
        }
        LayerKind::Lstm => {
            let (len, d, u) = (4, 3, 2);
            let shapes: [&[usize]; 4] = [&[len, d], &[4 * u, d], &[4 * u, u], &[4 * u]];
            let vars = rand_vec(len * d + 4 * u * d + 4 * u * u + 4 * u);
            let ro = rand_vec(u);
            let t = unpack(&vars, &shapes);
            let p = LstmParams {
                w: &t[1],
                u: &t[2],
                b: &t[3],
            };
            let (_, cache) = lstm_forward(&t[0], &p)?;
            let (dx, g) = lstm_backward(&t[0], &p, &cache, &Tensor::vector(ro.clone()))?;
            compare(&vars, &pack(&[&dx, &g.w, &g.u, &g.b]), eps, |v| {
                let t = unpack(v, &shapes);
                let p = LstmParams {
                    w: &t[1],
                    u: &t[2],
                    b: &t[3],
                };
                Ok(dot(&lstm_forward(&t[0], &p)?.0, &ro))
            })
        }
        LayerKind::Dense => {
            let shapes: [&[usize]; 3] = [&[5], &[3, 5], &[3]];
            let vars = rand_vec(5 + 15 + 3);
            let ro = rand_vec(3);
            let t = unpack(&vars, &shapes);
            let (dx, dw, db) = dense_backward(&t[0], &t[1], &Tensor::vector(ro.clone()))?;
            compare(&vars, &pack(&[&dx, &dw, &db]), eps, |v| {
                let t = unpack(v, &shapes);
                Ok(dot(&dense(&t[0], &t[1], &t[2])?, &ro))
            })
        }
        LayerKind::TemporalPool => {
            let vars = rand_vec(12);
            let ro = rand_vec(3);
            let dx = temporal_pool_backward(&Tensor::vector(ro.clone()), 4);
            compare(&vars, dx.data(), eps, |v| {
                Ok(dot(&temporal_pool(&Tensor::from_vec(&[4, 3], v.to_vec())?)?, &ro))
            })
        }
        LayerKind::SoftmaxCrossEntropy => {
            let vars = rand_vec(3);
            let target = 1;
            let p = softmax(&Tensor::vector(vars.clone()));
            let dz = softmax_cross_entropy_backward(&p, target);
            compare(&vars, dz.data(), eps, |v| {
                Ok(cross_entropy(&softmax(&Tensor::vector(v.to_vec())), target))
            })
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Label, Origin};
    use crate::nn::{ArchConfig, Variant};

    #[test]
    fn every_layer_passes() {
        for kind in LAYER_KINDS {
            for seed in 0..3 {
                let e = check_layer(kind, seed).unwrap();
                assert!(e < 1e-4, "{kind:?} seed {seed}: {e:e}");
            }
        }
    }

    #[test]
    fn full_models_pass() {
        for v in [Variant::Attention, Variant::Lstm] {
            let m = Model::new(ArchConfig::reference(v, 50), 11).unwrap();
            let s = WindowSample {
                rssi: (0..50).map(|i| libm::sin(i as f64 * 0.3)).collect(),
                sinr: (0..50).map(|i| libm::cos(i as f64 * 0.17) * 1.5).collect(),
                label: Label::Attack,
                origin: Origin { run: 0, start: 0 },
            };
            let e = grad_check(&m, &s, DEFAULT_EPS, 200, 1).unwrap();
            assert!(e < 1e-4, "{v:?}: {e:e}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
