//! Gaussian naive Bayes and logistic regression on flattened windows.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::dataset::{Label, WindowSample};
use crate::error::{config, domain, shape};
use crate::math::{exp, ln, sigmoid};
use crate::{Error, Result};

/// Per-feature variance floor for naive Bayes.
pub const VAR_FLOOR: f64 = 1e-9;

/// A window flattened to `rssi ++ sinr`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatFeatures(pub Vec<f64>);

impl FlatFeatures {
    pub fn from_sample(s: &WindowSample) -> Self {
        let mut v = Vec::with_capacity(s.rssi.len() + s.sinr.len());
        v.extend_from_slice(&s.rssi);
        v.extend_from_slice(&s.sinr);
        Self(v)
    }
}

fn features(samples: &[WindowSample]) -> (Vec<Vec<f64>>, Vec<Label>) {
    samples
        .iter()
        .map(|s| (FlatFeatures::from_sample(s).0, s.label))
        .unzip()
}

fn check_rows(x: &[Vec<f64>], y: &[Label]) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(shape!("{} feature rows for {} labels", x.len(), y.len()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(shape!("ragged feature rows"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(domain!("non-finite feature value"));
    }
    Ok(d)
}

/// Per-class, per-feature Gaussian likelihoods with class priors.
/// Class arrays are indexed by [`Label::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub vars: [Vec<f64>; 2],
}

impl GaussianNb {
    pub fn fit(x: &[Vec<f64>], y: &[Label]) -> Result<Self> {
        let d = check_rows(x, y)?;
        let mut counts = [0usize; 2];
        let mut means = [vec![0.0; d], vec![0.0; d]];
        for (row, l) in x.iter().zip(y) {
            let c = l.index();
            counts[c] += 1;
            for (m, v) in means[c].iter_mut().zip(row) {
                *m += v;
            }
        }
        if counts.contains(&0) {
            return Err(domain!("naive Bayes needs both classes, got counts {counts:?}"));
        }
        for c in 0..2 {
            means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
        }
        let mut vars = [vec![0.0; d], vec![0.0; d]];
        for (row, l) in x.iter().zip(y) {
            let c = l.index();
            for ((s, v), m) in vars[c].iter_mut().zip(row).zip(&means[c]) {
                *s += (v - m) * (v - m);
            }
        }
        for c in 0..2 {
            vars[c]
                .iter_mut()
                .for_each(|s| *s = (*s / counts[c] as f64).max(VAR_FLOOR));
        }
        let n = x.len() as f64;
        Ok(Self {
            priors: [counts[0] as f64 / n, counts[1] as f64 / n],
            means,
            vars,
        })
    }

    /// Posterior `[p(no attack | x), p(attack | x)]`.
    pub fn posterior(&self, x: &[f64]) -> Result<[f64; 2]> {
        if x.len() != self.means[0].len() {
            return Err(shape!("{} features, model expects {}", x.len(), self.means[0].len()));
        }
        let log_joint = |c: usize| -> f64 {
            let mut acc = ln(self.priors[c]);
            for ((v, m), s) in x.iter().zip(&self.means[c]).zip(&self.vars[c]) {
                acc -= 0.5 * (ln(2.0 * core::f64::consts::PI * s) + (v - m) * (v - m) / s);
            }
            acc
        };
        let (a, b) = (log_joint(0), log_joint(1));
        let top = a.max(b);
        let (ea, eb) = (exp(a - top), exp(b - top));
        Ok([ea / (ea + eb), eb / (ea + eb)])
    }
}

pub fn gnb_fit(samples: &[WindowSample]) -> Result<GaussianNb> {
    let (x, y) = features(samples);
    GaussianNb::fit(&x, &y)
}

/// Attack-class posterior.
pub fn gnb_predict(model: &GaussianNb, x: &[f64]) -> Result<f64> {
    Ok(model.posterior(x)?[Label::Attack.index()])
}

impl Classifier for GaussianNb {
    fn attack_probability(&self, sample: &WindowSample) -> Result<f64> {
        gnb_predict(self, &FlatFeatures::from_sample(sample).0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub lr: f64,
    pub epochs: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self { lr: 0.1, epochs: 200 }
    }
}

/// `p(attack | x) = σ(w·x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogReg {
    pub fn zeros(d: usize) -> Self {
        Self {
            weights: vec![0.0; d],
            bias: 0.0,
        }
    }

    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(shape!("{} features, model expects {}", x.len(), self.weights.len()));
        }
        Ok(sigmoid(self.logit(x)))
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Mean logistic loss and its gradient; the bias derivative comes last.
    pub fn loss_and_grad(&self, x: &[Vec<f64>], y: &[Label]) -> Result<(f64, Vec<f64>)> {
        let d = check_rows(x, y)?;
        if d != self.weights.len() {
            return Err(shape!("{d} features, model expects {}", self.weights.len()));
        }
        let mut grad = vec![0.0; d + 1];
        let mut loss = 0.0;
        for (row, l) in x.iter().zip(y) {
            let z = self.logit(row);
            let t = if l.is_attack() { 1.0 } else { 0.0 };
            // log(1 + e^z) − t·z, evaluated without overflow.
            loss += z.max(0.0) + ln(1.0 + exp(-z.abs())) - t * z;
            let g = sigmoid(z) - t;
            for (gi, v) in grad.iter_mut().zip(row) {
                *gi += g * v;
            }
            grad[d] += g;
        }
        let n = x.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }

    /// Full-batch gradient descent from zero weights. Returns the model and
    /// the loss before each step.
    pub fn fit(x: &[Vec<f64>], y: &[Label], cfg: &LogRegConfig) -> Result<(Self, Vec<f64>)> {
        let d = check_rows(x, y)?;
        if !(cfg.lr > 0.0) {
            return Err(config!("learning rate must be positive, got {}", cfg.lr));
        }
        let mut m = Self::zeros(d);
        let mut curve = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let (loss, g) = m.loss_and_grad(x, y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            curve.push(loss);
            for (w, gi) in m.weights.iter_mut().zip(&g) {
                *w -= cfg.lr * gi;
            }
            m.bias -= cfg.lr * g[d];
        }
        if !m.bias.is_finite() || m.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged {
                epoch: cfg.epochs,
                loss: f64::NAN,
            });
        }
        Ok((m, curve))
    }
}

pub fn logreg_fit(samples: &[WindowSample], cfg: &LogRegConfig) -> Result<LogReg> {
    let (x, y) = features(samples);
    Ok(LogReg::fit(&x, &y, cfg)?.0)
}

pub fn logreg_predict(model: &LogReg, x: &[f64]) -> Result<f64> {
    model.probability(x)
}

impl Classifier for LogReg {
    fn attack_probability(&self, sample: &WindowSample) -> Result<f64> {
        logreg_predict(self, &FlatFeatures::from_sample(sample).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut r = rng::stream(seed, &[]);
        let nd = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|i| {
                let attack = i % 2 == 0;
                let mu = if attack { 5.0 } else { -5.0 };
                (vec![mu + nd.sample(&mut r)], Label::from_attack(attack))
            })
            .unzip()
    }

    #[test]
    fn gnb_separates_blobs() {
        let (x, y) = blobs(200, 1);
        let m = GaussianNb::fit(&x, &y).unwrap();
        let (tx, ty) = blobs(200, 2);
        for (row, l) in tx.iter().zip(&ty) {
            let p = m.posterior(row).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            assert_eq!(Label::from_attack(p[1] >= 0.5), *l);
        }
    }

    #[test]
    fn gnb_midpoint_returns_priors() {
        let m = GaussianNb {
            priors: [0.7, 0.3],
            means: [vec![-1.0], vec![1.0]],
            vars: [vec![1.0], vec![1.0]],
        };
        let p = m.posterior(&[0.0]).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-12 && (p[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn gnb_hand_case() {
        let x = vec![vec![-1.0], vec![1.0], vec![1.0], vec![3.0]];
        let y = [Label::NoAttack, Label::NoAttack, Label::Attack, Label::Attack];
        let m = GaussianNb::fit(&x, &y).unwrap();
        assert_eq!(m.means, [vec![0.0], vec![2.0]]);
        assert_eq!(m.vars, [vec![1.0], vec![1.0]]);
        let p = m.posterior(&[1.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gnb_rejects_one_class() {
        let x = vec![vec![1.0], vec![2.0]];
        let y = [Label::Attack, Label::Attack];
        assert!(matches!(GaussianNb::fit(&x, &y), Err(Error::Domain(_))));
    }

    #[test]
    fn gnb_floors_variance() {
        let x = vec![vec![1.0], vec![1.0], vec![2.0], vec![2.0]];
        let y = [Label::NoAttack, Label::NoAttack, Label::Attack, Label::Attack];
        let m = GaussianNb::fit(&x, &y).unwrap();
        assert_eq!(m.vars[0][0], VAR_FLOOR);
        assert!(m.posterior(&[1.5]).unwrap().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn logreg_zero_weights_half() {
        let m = LogReg::zeros(3);
        assert_eq!(m.probability(&[4.0, -2.0, 9.0]).unwrap(), 0.5);
        assert!(m.probability(&[1.0]).is_err());
    }

    #[test]
    fn logreg_loss_decreases_on_separable() {
        let (x, y) = blobs(100, 3);
        let x: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] / 5.0]).collect();
        let (m, curve) = LogReg::fit(&x, &y, &LogRegConfig { lr: 0.5, epochs: 50 }).unwrap();
        assert!(curve.windows(2).all(|w| w[1] < w[0]));
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(r, l)| Label::from_attack(m.probability(r).unwrap() >= 0.5) == **l)
            .count();
        assert_eq!(acc, 100);
    }

    #[test]
    fn logreg_gradient_matches_differences() {
        let x = vec![vec![0.3, -1.2], vec![1.5, 0.2], vec![-0.7, 0.9]];
        let y = [Label::Attack, Label::NoAttack, Label::Attack];
        let m = LogReg {
            weights: vec![0.4, -0.8],
            bias: 0.1,
        };
        let (_, g) = m.loss_and_grad(&x, &y).unwrap();
        let eps = 1e-6;
        for i in 0..3 {
            let bump = |k: f64| {
                let mut p = m.clone();
                if i < 2 {
                    p.weights[i] += k;
                } else {
                    p.bias += k;
                }
                p.loss_and_grad(&x, &y).unwrap().0
            };
            let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
            assert!((numeric - g[i]).abs() < 1e-6, "{i}: {numeric} vs {}", g[i]);
        }
    }

    #[test]
    fn logreg_divergence_reported() {
        let x = vec![vec![1e200], vec![-1e200]];
        let y = [Label::Attack, Label::NoAttack];
        let r = LogReg::fit(&x, &y, &LogRegConfig { lr: 1e200, epochs: 5 });
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn fits_are_deterministic() {
        let (x, y) = blobs(50, 4);
        let a = LogReg::fit(&x, &y, &LogRegConfig::default()).unwrap();
        let b = LogReg::fit(&x, &y, &LogRegConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(GaussianNb::fit(&x, &y).unwrap(), GaussianNb::fit(&x, &y).unwrap());
    }
}
