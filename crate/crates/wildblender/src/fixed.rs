//! Binary fixed-point numbers with directed rounding.
//!
//! A [`Fixed`] stores `m / 2^prec` with an arbitrary-size integer mantissa.
//! Every model constant is an `f64`, hence a dyadic rational, so additions
//! and multiplications by constants are exact up to the final shift; only the
//! shift and the divisions round, in the direction the caller asks for.

use crate::ext::Ext;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Round {
    Down,
    Up,
    Nearest,
}

impl Round {
    pub fn flip(self) -> Round {
        match self {
            Round::Down => Round::Up,
            Round::Up => Round::Down,
            Round::Nearest => Round::Nearest,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fixed {
    m: BigInt,
    prec: u32,
}

/// Exact decomposition `x = mant * 2^exp`.
pub fn decompose(x: f64) -> (i64, i32) {
    assert!(x.is_finite(), "non-finite constant in fixed-point arithmetic");
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1 } else { 1 };
    let e = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i64;
    let (mut mant, mut exp) = if e == 0 { (frac, -1074) } else { (frac | (1i64 << 52), e - 1075) };
    while mant & 1 == 0 {
        mant >>= 1;
        exp += 1;
    }
    (sign * mant, exp)
}

fn shr_round(m: &BigInt, s: u32, r: Round) -> BigInt {
    if s == 0 {
        return m.clone();
    }
    match r {
        Round::Down => m >> s,
        Round::Up => -((-m) >> s),
        Round::Nearest => (m + (BigInt::one() << (s - 1))) >> s,
    }
}

fn div_round(a: &BigInt, b: &BigInt, r: Round) -> BigInt {
    debug_assert!(b.is_positive());
    match r {
        Round::Down => a.div_floor(b),
        Round::Up => -((-a).div_floor(b)),
        Round::Nearest => {
            let two = BigInt::from(2);
            (a * &two + b).div_floor(&(b * &two))
        }
    }
}

impl Fixed {
    pub fn zero(prec: u32) -> Fixed {
        Fixed { m: BigInt::zero(), prec }
    }

    pub fn prec(&self) -> u32 {
        self.prec
    }

    pub fn from_f64(x: f64, prec: u32, r: Round) -> Fixed {
        let (mant, exp) = decompose(x);
        let m = BigInt::from(mant);
        let shift = exp as i64 + prec as i64;
        let m = if shift >= 0 { m << (shift as u32) } else { shr_round(&m, (-shift) as u32, r) };
        Fixed { m, prec }
    }

    pub fn half(prec: u32) -> Fixed {
        Fixed { m: BigInt::one() << (prec - 1), prec }
    }

    /// Change precision, rounding when bits are dropped.
    pub fn with_prec(&self, prec: u32, r: Round) -> Fixed {
        let m = if prec >= self.prec { &self.m << (prec - self.prec) } else { shr_round(&self.m, self.prec - prec, r) };
        Fixed { m, prec }
    }

    pub fn add(&self, o: &Fixed) -> Fixed {
        assert_eq!(self.prec, o.prec);
        Fixed { m: &self.m + &o.m, prec: self.prec }
    }

    pub fn sub(&self, o: &Fixed) -> Fixed {
        assert_eq!(self.prec, o.prec);
        Fixed { m: &self.m - &o.m, prec: self.prec }
    }

    pub fn neg(&self) -> Fixed {
        Fixed { m: -&self.m, prec: self.prec }
    }

    pub fn abs(&self) -> Fixed {
        Fixed { m: self.m.abs(), prec: self.prec }
    }

    pub fn add_f64(&self, c: f64, r: Round) -> Fixed {
        self.add(&Fixed::from_f64(c, self.prec, r))
    }

    pub fn mul_f64(&self, c: f64, r: Round) -> Fixed {
        let (cm, ce) = decompose(c);
        let prod = &self.m * cm;
        let m = if ce >= 0 { prod << (ce as u32) } else { shr_round(&prod, (-ce) as u32, r) };
        Fixed { m, prec: self.prec }
    }

    pub fn div_f64(&self, c: f64, r: Round) -> Fixed {
        assert!(c != 0.0, "division by zero");
        let (mut cm, ce) = decompose(c);
        let mut num = self.m.clone();
        if cm < 0 {
            cm = -cm;
            num = -num;
        }
        let m = if ce <= 0 {
            div_round(&(num << ((-ce) as u32)), &BigInt::from(cm), r)
        } else {
            div_round(&num, &(BigInt::from(cm) << (ce as u32)), r)
        };
        Fixed { m, prec: self.prec }
    }

    pub fn mul(&self, o: &Fixed, r: Round) -> Fixed {
        assert_eq!(self.prec, o.prec);
        Fixed { m: shr_round(&(&self.m * &o.m), self.prec, r), prec: self.prec }
    }

    pub fn square(&self, r: Round) -> Fixed {
        self.mul(self, r)
    }

    pub fn is_negative(&self) -> bool {
        self.m.is_negative()
    }

    pub fn is_zero(&self) -> bool {
        self.m.is_zero()
    }

    pub fn to_ext(&self) -> Ext {
        let bits = self.m.bits();
        if bits == 0 {
            return Ext::ZERO;
        }
        let sh = bits.saturating_sub(62);
        let top = (&self.m >> sh).to_i64().expect("top bits fit in i64");
        Ext::from_parts(top as f64, sh as i64 - self.prec as i64)
    }

    pub fn to_f64(&self) -> f64 {
        self.to_ext().to_f64()
    }

    /// Distance in units of the last place, useful for tolerance checks.
    pub fn ulp(&self) -> Ext {
        Ext::from_parts(1.0, -(self.prec as i64))
    }
}

impl PartialOrd for Fixed {
    fn partial_cmp(&self, o: &Fixed) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Fixed {
    fn cmp(&self, o: &Fixed) -> Ordering {
        if self.prec == o.prec {
            self.m.cmp(&o.m)
        } else if self.prec > o.prec {
            self.m.cmp(&(&o.m << (self.prec - o.prec)))
        } else {
            (&self.m << (o.prec - self.prec)).cmp(&o.m)
        }
    }
}

/// Closed interval with outward-rounded endpoints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FxInterval {
    pub lo: Fixed,
    pub hi: Fixed,
}

impl FxInterval {
    pub fn new(lo: Fixed, hi: Fixed) -> FxInterval {
        assert!(lo <= hi, "empty interval");
        FxInterval { lo, hi }
    }

    pub fn from_f64(lo: f64, hi: f64, prec: u32) -> FxInterval {
        FxInterval::new(Fixed::from_f64(lo, prec, Round::Down), Fixed::from_f64(hi, prec, Round::Up))
    }

    pub fn point(x: &Fixed) -> FxInterval {
        FxInterval { lo: x.clone(), hi: x.clone() }
    }

    pub fn prec(&self) -> u32 {
        self.lo.prec()
    }

    /// `a*x + b` applied to every point, rounded outward.
    pub fn affine(&self, a: f64, b: f64) -> FxInterval {
        let (l, h) = if a >= 0.0 { (&self.lo, &self.hi) } else { (&self.hi, &self.lo) };
        let lo = l.mul_f64(a, Round::Down).add_f64(b, Round::Down);
        let hi = h.mul_f64(a, Round::Up).add_f64(b, Round::Up);
        FxInterval { lo, hi }
    }

    /// `(x - b) / a` applied to every point, rounded outward.
    pub fn affine_inv(&self, a: f64, b: f64) -> FxInterval {
        let (l, h, rn) = if a >= 0.0 { (&self.lo, &self.hi, Round::Down) } else { (&self.hi, &self.lo, Round::Up) };
        let lo = l.add_f64(-b, rn).div_f64(a, Round::Down);
        let hi = h.add_f64(-b, rn.flip()).div_f64(a, Round::Up);
        FxInterval { lo, hi }
    }

    pub fn contains(&self, o: &FxInterval) -> bool {
        self.lo <= o.lo && o.hi <= self.hi
    }

    pub fn contains_point(&self, x: &Fixed) -> bool {
        &self.lo <= x && x <= &self.hi
    }

    pub fn disjoint(&self, o: &FxInterval) -> bool {
        self.hi < o.lo || o.hi < self.lo
    }

    pub fn width(&self) -> Ext {
        self.hi.sub(&self.lo).to_ext()
    }

    pub fn mid(&self) -> Fixed {
        let s = self.lo.add(&self.hi);
        Fixed { m: shr_round(&s.m, 1, Round::Nearest), prec: s.prec }
    }

    pub fn to_f64(&self) -> (f64, f64) {
        (self.lo.to_f64(), self.hi.to_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decompose_is_exact() {
        for &x in &[1.0, 0.1, -2.5, 0.92, 1e-300, 3.0e-320, 12345.678] {
            let (m, e) = decompose(x);
            assert_eq!((m as f64) * 2f64.powi(e), x);
        }
    }

    #[test]
    fn directed_division_brackets_value() {
        let p = 200;
        let one = Fixed::from_f64(1.0, p, Round::Nearest);
        let lo = one.div_f64(2.5, Round::Down);
        let hi = one.div_f64(2.5, Round::Up);
        assert!(lo < hi);
        assert!((lo.to_f64() - 0.4).abs() < 1e-16);
        // 1/2.5 is not dyadic, so the two roundings differ by one ulp
        assert_eq!(hi.sub(&lo), Fixed { m: BigInt::one(), prec: p });
    }

    #[test]
    fn negative_rounding_directions() {
        let p = 64;
        let x = Fixed::from_f64(-1.0, p, Round::Nearest);
        let d = x.div_f64(3.0, Round::Down);
        let u = x.div_f64(3.0, Round::Up);
        assert!(d < u);
        assert!(d.to_f64() <= -1.0 / 3.0 + 1e-15);
    }

    #[test]
    fn affine_inverse_round_trip_contains() {
        let iv = FxInterval::from_f64(0.2, 0.3, 256);
        let back = iv.affine(0.92, 0.08).affine_inv(0.92, 0.08);
        assert!(back.contains(&iv));
        assert!(back.width().to_f64() - 0.1 < 1e-60);
    }

    #[test]
    fn mul_matches_f64() {
        let a = Fixed::from_f64(0.375, 128, Round::Nearest);
        let b = Fixed::from_f64(-1.25, 128, Round::Nearest);
        assert_eq!(a.mul(&b, Round::Nearest).to_f64(), -0.46875);
    }

    #[test]
    fn tiny_differences_survive_in_ext() {
        let p = 4000;
        let a = Fixed::from_f64(0.5, p, Round::Nearest);
        let b = a.add(&Fixed { m: BigInt::from(3) << 900u32, prec: p });
        let d = b.sub(&a).to_ext();
        assert!((d.log2() - (900.0 + 3f64.log2() - p as f64)).abs() < 1e-12);
        assert_eq!(d.to_f64(), 0.0);
    }
}
