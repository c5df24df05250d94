//! Scalar abstraction for the reference forward pass: plain `f64` and a
//! double-double type carrying about 106 bits of significand.

use core::cmp::Ordering;
use core::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn relu(self) -> Self {
        if self > Self::zero() {
            self
        } else {
            Self::zero()
        }
    }

    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }

    fn tanh(self) -> Self {
        let two = Self::from_f64(2.0);
        Self::one() - two / ((two * self).exp() + Self::one())
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        libm::exp(self)
    }
    fn ln(self) -> Self {
        libm::log(self)
    }
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    fn sigmoid(self) -> Self {
        crate::math::sigmoid(self)
    }
    fn tanh(self) -> Self {
        libm::tanh(self)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Dd = Dd {
    hi: core::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn split(a: f64) -> (f64, f64) {
    let t = 134_217_729.0 * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

impl Dd {
    pub const fn new(hi: f64, lo: f64) -> Self {
        Self { hi, lo }
    }

    fn scale_pow2(self, k: i32) -> Self {
        Self::new(libm::scalbn(self.hi, k), libm::scalbn(self.lo, k))
    }
}

impl Add for Dd {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Self { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.hi, -self.lo)
    }
}

impl Sub for Dd {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + -b
    }
}

impl Mul for Dd {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        let (hi, lo) = quick_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi));
        Self { hi, lo }
    }
}

impl Div for Dd {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo } + Dd::from_f64(q3)
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Real for Dd {
    fn from_f64(x: f64) -> Self {
        Self::new(x, 0.0)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::zero();
        }
        // exp(x) = 2^k · (exp(r / 1024))^1024 with |r| ≤ ln2 / 2.
        let k = libm::round(self.hi / LN2.hi);
        let r = (self - LN2 * Self::from_f64(k)).scale_pow2(-10);
        let mut term = Self::one();
        let mut sum = Self::one();
        for n in 1..=14 {
            term = term * r / Self::from_f64(n as f64);
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.scale_pow2(k as i32)
    }

    fn ln(self) -> Self {
        // Newton on exp(y) = x.
        let mut y = Self::from_f64(libm::log(self.hi));
        for _ in 0..2 {
            y = y + self * (-y).exp() - Self::one();
        }
        y
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::zero();
        }
        let s = Self::from_f64(libm::sqrt(self.hi));
        s + (self - s * s) / (Self::from_f64(2.0) * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, b: f64, tol: f64) -> bool {
        (a.to_f64() - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn arithmetic_keeps_extra_bits() {
        let tiny = Dd::from_f64(1e-20);
        let x = Dd::one() + tiny;
        assert_eq!((x - Dd::one()).to_f64(), 1e-20);
        let third = Dd::one() / Dd::from_f64(3.0);
        let back = third * Dd::from_f64(3.0) - Dd::one();
        assert!(back.to_f64().abs() < 1e-31);
    }

    #[test]
    fn transcendental_agree_with_f64() {
        for x in [-3.0, -0.5, 0.0, 1e-3, 0.7, 2.0, 10.0] {
            let d = Dd::from_f64(x);
            assert!(close(d.exp(), libm::exp(x), 1e-15), "exp {x}");
            assert!(close(d.tanh(), libm::tanh(x), 1e-15), "tanh {x}");
            assert!(close(d.sigmoid(), 1.0 / (1.0 + libm::exp(-x)), 1e-15));
            if x > 0.0 {
                assert!(close(d.ln(), libm::log(x), 1e-15), "ln {x}");
                assert!(close(d.sqrt(), libm::sqrt(x), 1e-15));
            }
        }
    }

    #[test]
    fn exp_ln_round_trip_beyond_f64() {
        let x = Dd::new(0.3, 1e-18);
        let y = x.exp().ln() - x;
        // Ten squarings in exp cost about ten bits of the ~106.
        assert!(y.to_f64().abs() < 1e-28, "{y:?}");
        let two = Dd::from_f64(2.0).sqrt();
        assert!((two * two - Dd::from_f64(2.0)).to_f64().abs() < 1e-31);
    }
}
