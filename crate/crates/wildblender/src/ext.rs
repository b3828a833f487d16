//! Floating point with an `i64` binary exponent.
//!
//! Domain sizes along the wandering chain go far below `f64::MIN_POSITIVE`
//! (exponents of several thousand), while 53 bits of relative precision are
//! plenty. `Ext` keeps an `f64` mantissa in `[0.5, 1)` and a separate exponent.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ext {
    m: f64,
    e: i64,
}

fn frexp(x: f64) -> (f64, i64) {
    if x == 0.0 || !x.is_finite() {
        return (x, 0);
    }
    let bits = x.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    if exp_bits == 0 {
        // subnormal: scale into the normal range first
        let (m, e) = frexp(x * 2f64.powi(64));
        return (m, e - 64);
    }
    let m = f64::from_bits((bits & !(0x7ffu64 << 52)) | (1022u64 << 52));
    (m, exp_bits - 1022)
}

/// `x * 2^e` without intermediate overflow, flushing to zero or infinity.
pub fn ldexp(x: f64, e: i64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if e > 2100 {
        return x * f64::INFINITY;
    }
    if e < -2200 {
        return 0.0 * x;
    }
    let mut r = x;
    let mut e = e;
    while e > 1000 {
        r *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        r *= 2f64.powi(-1000);
        e += 1000;
    }
    r * 2f64.powi(e as i32)
}

impl Ext {
    pub const ZERO: Ext = Ext { m: 0.0, e: 0 };
    pub const ONE: Ext = Ext { m: 0.5, e: 1 };

    pub fn from_parts(m: f64, e: i64) -> Ext {
        let (mm, me) = frexp(m);
        if mm == 0.0 {
            Ext::ZERO
        } else {
            Ext { m: mm, e: e + me }
        }
    }

    pub fn from_f64(x: f64) -> Ext {
        Ext::from_parts(x, 0)
    }

    /// `exp(l)` for arbitrarily large negative or positive `l`.
    pub fn from_ln(l: f64) -> Ext {
        let e = (l / std::f64::consts::LN_2).floor();
        let r = l - e * std::f64::consts::LN_2;
        Ext::from_parts(r.exp(), e as i64)
    }

    /// `base^p` for positive base.
    pub fn powf(base: f64, p: f64) -> Ext {
        assert!(base > 0.0);
        Ext::from_ln(p * base.ln())
    }

    pub fn to_f64(self) -> f64 {
        ldexp(self.m, self.e)
    }

    pub fn is_zero(self) -> bool {
        self.m == 0.0
    }

    pub fn abs(self) -> Ext {
        Ext { m: self.m.abs(), e: self.e }
    }

    pub fn signum(self) -> f64 {
        if self.m == 0.0 {
            0.0
        } else {
            self.m.signum()
        }
    }

    /// Natural log of the absolute value.
    pub fn ln(self) -> f64 {
        self.m.abs().ln() + self.e as f64 * std::f64::consts::LN_2
    }

    pub fn log2(self) -> f64 {
        self.m.abs().log2() + self.e as f64
    }

    pub fn log10(self) -> f64 {
        self.log2() * std::f64::consts::LOG10_2
    }

    pub fn sqrt(self) -> Ext {
        assert!(self.m >= 0.0, "sqrt of negative Ext");
        if self.m == 0.0 {
            return Ext::ZERO;
        }
        if self.e % 2 == 0 {
            Ext::from_parts(self.m.sqrt(), self.e / 2)
        } else {
            Ext::from_parts((2.0 * self.m).sqrt(), (self.e - 1) / 2)
        }
    }

    pub fn scale(self, c: f64) -> Ext {
        Ext::from_parts(self.m * c, self.e)
    }

    pub fn mul2k(self, k: i64) -> Ext {
        if self.m == 0.0 {
            self
        } else {
            Ext { m: self.m, e: self.e + k }
        }
    }

    pub fn max(self, o: Ext) -> Ext {
        if self >= o {
            self
        } else {
            o
        }
    }

    pub fn min(self, o: Ext) -> Ext {
        if self <= o {
            self
        } else {
            o
        }
    }

    /// Ratio `self / o` as an ordinary float (may saturate).
    pub fn ratio(self, o: Ext) -> f64 {
        (self / o).to_f64()
    }

    /// Mantissa and exponent, for serialization into reports.
    pub fn parts(self) -> (f64, i64) {
        (self.m, self.e)
    }
}

impl Mul for Ext {
    type Output = Ext;
    fn mul(self, o: Ext) -> Ext {
        if self.m == 0.0 || o.m == 0.0 {
            return Ext::ZERO;
        }
        Ext::from_parts(self.m * o.m, self.e + o.e)
    }
}

impl Div for Ext {
    type Output = Ext;
    fn div(self, o: Ext) -> Ext {
        assert!(o.m != 0.0, "Ext division by zero");
        if self.m == 0.0 {
            return Ext::ZERO;
        }
        Ext::from_parts(self.m / o.m, self.e - o.e)
    }
}

impl Add for Ext {
    type Output = Ext;
    fn add(self, o: Ext) -> Ext {
        if self.m == 0.0 {
            return o;
        }
        if o.m == 0.0 {
            return self;
        }
        let (big, small) = if self.e >= o.e { (self, o) } else { (o, self) };
        let d = big.e - small.e;
        if d > 64 {
            return big;
        }
        Ext::from_parts(big.m + small.m * 2f64.powi(-(d as i32)), big.e)
    }
}

impl Sub for Ext {
    type Output = Ext;
    fn sub(self, o: Ext) -> Ext {
        self + (-o)
    }
}

impl Neg for Ext {
    type Output = Ext;
    fn neg(self) -> Ext {
        Ext { m: -self.m, e: self.e }
    }
}

impl PartialOrd for Ext {
    fn partial_cmp(&self, o: &Ext) -> Option<Ordering> {
        let (sa, sb) = (self.signum(), o.signum());
        if sa != sb {
            return sa.partial_cmp(&sb);
        }
        if sa == 0.0 {
            return Some(Ordering::Equal);
        }
        let mag = if self.e != o.e { self.e.cmp(&o.e) } else { self.m.abs().partial_cmp(&o.m.abs())? };
        Some(if sa > 0.0 { mag } else { mag.reverse() })
    }
}
