//! Single-layer LSTM returning the final hidden state.
//!
//! Gate order in the stacked weights is input, forget, candidate, output:
//! `z_t = W·x_t + U·h_{t−1} + b`, with `W: [4u, d]`, `U: [4u, u]`, `b: [4u]`.

use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::shape;
use crate::math::{sigmoid, tanh};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct LstmParams<'a> {
    pub w: &'a Tensor,
    pub u: &'a Tensor,
    pub b: &'a Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

/// Per-step activations for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    units: usize,
    /// `[len, 4u]` activated gates (i, f, g, o).
    gates: Vec<f64>,
    /// `[len + 1, u]` cell states, row 0 is the zero initial state.
    cells: Vec<f64>,
    /// `[len + 1, u]` hidden states, row 0 is the zero initial state.
    hidden: Vec<f64>,
}

fn dims(x: &Tensor, p: &LstmParams<'_>) -> Result<(usize, usize, usize)> {
    let (len, d) = x.dims2()?;
    if len == 0 {
        return Err(shape!("LSTM over an empty sequence"));
    }
    let (g4, wd) = p.w.dims2()?;
    if g4 % 4 != 0 || wd != d {
        return Err(shape!("LSTM input weights {:?} do not take {d} features", p.w.shape()));
    }
    let units = g4 / 4;
    if p.u.shape() != [g4, units] || p.b.len() != g4 {
        return Err(shape!("LSTM recurrent weights {:?} / bias mismatch", p.u.shape()));
    }
    Ok((len, d, units))
}

pub fn lstm_forward(x: &Tensor, p: &LstmParams<'_>) -> Result<(Tensor, LstmCache)> {
    let (len, d, u) = dims(x, p)?;
    let g4 = 4 * u;
    let (wd, ud, bd, xd) = (p.w.data(), p.u.data(), p.b.data(), x.data());
    let mut gates = vec![0.0; len * g4];
    let mut cells = vec![0.0; (len + 1) * u];
    let mut hidden = vec![0.0; (len + 1) * u];
    let mut z = vec![0.0; g4];
    for t in 0..len {
        let xt = &xd[t * d..(t + 1) * d];
        let hp = &hidden[t * u..(t + 1) * u];
        for (r, zr) in z.iter_mut().enumerate() {
            let wr = &wd[r * d..(r + 1) * d];
            let ur = &ud[r * u..(r + 1) * u];
            *zr = bd[r]
                + wr.iter().zip(xt).map(|(a, b)| a * b).sum::<f64>()
                + ur.iter().zip(hp).map(|(a, b)| a * b).sum::<f64>();
        }
        let gt = &mut gates[t * g4..(t + 1) * g4];
        for j in 0..u {
            gt[j] = sigmoid(z[j]);
            gt[u + j] = sigmoid(z[u + j]);
            gt[2 * u + j] = tanh(z[2 * u + j]);
            gt[3 * u + j] = sigmoid(z[3 * u + j]);
        }
        for j in 0..u {
            let c = gt[u + j] * cells[t * u + j] + gt[j] * gt[2 * u + j];
            cells[(t + 1) * u + j] = c;
            hidden[(t + 1) * u + j] = gt[3 * u + j] * tanh(c);
        }
    }
    let h = Tensor::vector(hidden[len * u..].to_vec());
    Ok((
        h,
        LstmCache {
            units: u,
            gates,
            cells,
            hidden,
        },
    ))
}

/// Backpropagation through time from a gradient on the final hidden state.
pub fn lstm_backward(
    x: &Tensor,
    p: &LstmParams<'_>,
    cache: &LstmCache,
    dh_last: &Tensor,
) -> Result<(Tensor, LstmGrads)> {
    let (len, d, u) = dims(x, p)?;
    if u != cache.units || dh_last.len() != u {
        return Err(shape!("LSTM gradient has {} values, expected {u}", dh_last.len()));
    }
    let g4 = 4 * u;
    let (wd, ud, xd) = (p.w.data(), p.u.data(), x.data());
    let mut dw = vec![0.0; g4 * d];
    let mut du = vec![0.0; g4 * u];
    let mut db = vec![0.0; g4];
    let mut dx = vec![0.0; len * d];
    let mut dh = dh_last.data().to_vec();
    let mut dc = vec![0.0; u];
    let mut dz = vec![0.0; g4];
    for t in (0..len).rev() {
        let gt = &cache.gates[t * g4..(t + 1) * g4];
        let c_prev = &cache.cells[t * u..(t + 1) * u];
        let c = &cache.cells[(t + 1) * u..(t + 2) * u];
        for j in 0..u {
            let (i, f, g, o) = (gt[j], gt[u + j], gt[2 * u + j], gt[3 * u + j]);
            let tc = tanh(c[j]);
            dc[j] += dh[j] * o * (1.0 - tc * tc);
            dz[j] = dc[j] * g * i * (1.0 - i);
            dz[u + j] = dc[j] * c_prev[j] * f * (1.0 - f);
            dz[2 * u + j] = dc[j] * i * (1.0 - g * g);
            dz[3 * u + j] = dh[j] * tc * o * (1.0 - o);
            dc[j] *= f;
        }
        let xt = &xd[t * d..(t + 1) * d];
        let hp = &cache.hidden[t * u..(t + 1) * u];
        dh.fill(0.0);
        let dxt = &mut dx[t * d..(t + 1) * d];
        for (r, g) in dz.iter().enumerate() {
            db[r] += g;
            let wr = &wd[r * d..(r + 1) * d];
            let dwr = &mut dw[r * d..(r + 1) * d];
            for k in 0..d {
                dwr[k] += g * xt[k];
                dxt[k] += g * wr[k];
            }
            let ur = &ud[r * u..(r + 1) * u];
            let dur = &mut du[r * u..(r + 1) * u];
            for k in 0..u {
                dur[k] += g * hp[k];
                dh[k] += g * ur[k];
            }
        }
    }
    Ok((
        Tensor::from_vec(&[len, d], dx)?,
        LstmGrads {
            w: Tensor::from_vec(&[g4, d], dw)?,
            u: Tensor::from_vec(&[g4, u], du)?,
            b: Tensor::vector(db),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_state() {
        let x = Tensor::from_vec(&[5, 3], (0..15).map(f64::from).collect()).unwrap();
        let (w, u, b) = (Tensor::zeros(&[8, 3]), Tensor::zeros(&[8, 2]), Tensor::zeros(&[8]));
        let (h, cache) = lstm_forward(&x, &LstmParams { w: &w, u: &u, b: &b }).unwrap();
        assert!(h.data().iter().all(|v| *v == 0.0));
        assert!(cache.cells.iter().all(|v| *v == 0.0));
    }

    // Scalar oracle for one unit, one feature, one step.
    #[test]
    fn single_step_hand_computation() {
        let x = Tensor::from_vec(&[1, 1], alloc::vec![0.8]).unwrap();
        let w = Tensor::from_vec(&[4, 1], alloc::vec![0.5, -0.3, 1.2, 0.7]).unwrap();
        let u = Tensor::from_vec(&[4, 1], alloc::vec![0.9, 0.1, -0.4, 0.2]).unwrap();
        let b = Tensor::from_vec(&[4], alloc::vec![0.1, 0.2, -0.1, 0.0]).unwrap();
        let (h, _) = lstm_forward(&x, &LstmParams { w: &w, u: &u, b: &b }).unwrap();
        let s = |v: f64| 1.0 / (1.0 + libm::exp(-v));
        let i = s(0.5 * 0.8 + 0.1);
        let g = libm::tanh(1.2 * 0.8 - 0.1);
        let o = s(0.7 * 0.8);
        let c = i * g;
        assert!((h.data()[0] - o * libm::tanh(c)).abs() < 1e-15);
    }

    #[test]
    fn parameter_shapes_independent_of_length() {
        let (w, u, b) = (Tensor::zeros(&[64, 8]), Tensor::zeros(&[64, 16]), Tensor::zeros(&[64]));
        for len in [1, 7, 70] {
            let x = Tensor::zeros(&[len, 8]);
            let (h, _) = lstm_forward(&x, &LstmParams { w: &w, u: &u, b: &b }).unwrap();
            assert_eq!(h.len(), 16);
        }
        assert!(lstm_forward(&Tensor::zeros(&[0, 8]), &LstmParams { w: &w, u: &u, b: &b }).is_err());
    }
}
