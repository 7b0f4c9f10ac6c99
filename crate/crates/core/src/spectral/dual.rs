//! Forward-mode dual numbers.
//!
//! `Dual { re, du }` carries a value and its derivative along one tangent
//! direction. The dispersion pipeline is written once against [`Real`] and
//! evaluated either on plain `f64` or on `Dual` to get exact derivatives.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + PartialOrd
{
    fn cst(v: f64) -> Self;
    fn re(self) -> f64;
    fn sqrt(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }

    #[inline]
    fn re(self) -> f64 {
        self
    }

    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Dual {
    pub re: f64,
    pub du: f64,
}

impl Dual {
    #[inline]
    pub fn new(re: f64, du: f64) -> Self {
        Self { re, du }
    }

    /// A variable: derivative seed 1.
    #[inline]
    pub fn var(re: f64) -> Self {
        Self { re, du: 1.0 }
    }
}

impl Real for Dual {
    #[inline]
    fn cst(v: f64) -> Self {
        Self { re: v, du: 0.0 }
    }

    #[inline]
    fn re(self) -> f64 {
        self.re
    }

    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        // d√x at x = 0 is unbounded; report zero rather than inf/NaN.
        let du = if s > 0.0 { self.du / (2.0 * s) } else { 0.0 };
        Self { re: s, du }
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.du + o.du)
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.du - o.du)
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.du * o.re + self.re * o.du)
    }
}

impl Div for Dual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        Self::new(self.re * inv, (self.du * o.re - self.re * o.du) * inv * inv)
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.du)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<T: Real>(x: T) -> T {
        (x * x + T::cst(3.0)).sqrt() / (x - T::cst(0.5))
    }

    #[test]
    fn matches_hand_derivative() {
        let x = 1.7;
        let d = f(Dual::var(x));
        let s = (x * x + 3.0f64).sqrt();
        let expected = (x / s) / (x - 0.5) - s / (x - 0.5).powi(2);
        assert!((d.re - f(x)).abs() < 1e-15);
        assert!((d.du - expected).abs() < 1e-14);
    }

    #[test]
    fn sqrt_at_zero_is_finite() {
        let d = Dual::var(0.0).sqrt();
        assert_eq!(d.re, 0.0);
        assert_eq!(d.du, 0.0);
    }
}
