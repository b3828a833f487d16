//! The piecewise affine horseshoe with a quadratic fold.
//!
//! On the vertical blocks `V0`, `V1` the map is diagonal affine; on the strip
//! `H` only the square of the map is given, as the fold
//! `(x, y, z) -> (-a1 (x-1/2)^2 + a2 z + mu, a3 (y-1/2) + 1/2, a4 (x-1/2) + 1/2)`.

use crate::fixed::{Fixed, Round};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub lambda_ss: f64,
    pub lambda_cs0: f64,
    pub lambda_cs1: f64,
    pub lambda_u: f64,
    pub eps0: f64,
    pub eps: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub mu: f64,
    /// Generation of the first bridge; `None` selects the smallest one.
    #[serde(default)]
    pub n0: Option<usize>,
    #[serde(rename = "L")]
    pub l: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            lambda_ss: 0.05,
            lambda_cs0: 0.1,
            lambda_cs1: 0.92,
            lambda_u: 2.5,
            eps0: 0.01,
            eps: 1e-4,
            a1: 1.0,
            a2: 0.1,
            a3: -0.5,
            a4: 1.0,
            mu: 0.15,
            n0: None,
            l: 4,
        }
    }
}

impl ModelParams {
    pub fn lambda_cs(&self, b: u8) -> f64 {
        if b == 0 {
            self.lambda_cs0
        } else {
            self.lambda_cs1
        }
    }

    /// Upper rate `lambda + eps`.
    pub fn bar(&self, lambda: f64) -> f64 {
        lambda + self.eps
    }

    /// Lower rate `lambda - eps`.
    pub fn under(&self, lambda: f64) -> f64 {
        lambda - self.eps
    }

    pub fn v0_interval(&self) -> (f64, f64) {
        (-self.eps0, 1.0 / self.lambda_u + self.eps0)
    }

    pub fn v1_interval(&self) -> (f64, f64) {
        (1.0 - 1.0 / self.lambda_u - self.eps0, 1.0 + self.eps0)
    }

    pub fn h_interval(&self) -> (f64, f64) {
        (0.5 - self.eps0, 0.5 + self.eps0)
    }

    pub fn block(&self) -> (f64, f64) {
        (-self.eps0, 1.0 + self.eps0)
    }

    /// `I(eta) = [1 - lambda_cs1 + eta, lambda_cs0 - eta]`.
    pub fn overlap(&self, eta: f64) -> (f64, f64) {
        (1.0 - self.lambda_cs1 + eta, self.lambda_cs0 - eta)
    }

    /// Saddle fixed point in `V0`.
    pub fn fixed_p(&self) -> Point {
        Point::new(0.0, 0.0, 0.0)
    }

    /// Saddle fixed point in `V1`.
    pub fn fixed_q(&self) -> Point {
        Point::new(self.lambda_u / (1.0 + self.lambda_u), 1.0 / (1.0 + self.lambda_ss), 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub inequality: String,
    pub message: String,
}

fn fmt_num(x: f64) -> String {
    let s = format!("{:.6}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn require_lt(out: &mut Vec<Violation>, name: &str, lhs: f64, rhs: f64, show_rhs: bool) {
    if !(lhs < rhs) {
        let vals = if show_rhs { format!("{} vs {}", fmt_num(lhs), fmt_num(rhs)) } else { fmt_num(lhs) };
        out.push(Violation { inequality: name.into(), message: format!("{name} fails ({vals})") });
    }
}

fn require_gt(out: &mut Vec<Violation>, name: &str, lhs: f64, rhs: f64) {
    if !(lhs > rhs) {
        out.push(Violation { inequality: name.into(), message: format!("{name} fails ({})", fmt_num(lhs)) });
    }
}

/// Every violated inequality of the admissible parameter region, with both
/// sides evaluated. Empty iff the parameters are valid.
pub fn validate_params(p: &ModelParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let fields = [p.lambda_ss, p.lambda_cs0, p.lambda_cs1, p.lambda_u, p.eps0, p.eps, p.a1, p.a2, p.a3, p.a4, p.mu];
    if fields.iter().any(|v| !v.is_finite()) {
        out.push(Violation { inequality: "finite".into(), message: "all parameters finite fails".into() });
        return out;
    }
    let o = &mut out;
    require_lt(o, "λss<λcs0", p.lambda_ss, p.lambda_cs0, true);
    require_lt(o, "λcs0<1/2", p.lambda_cs0, 0.5, false);
    require_gt(o, "λcs1>1/2", p.lambda_cs1, 0.5);
    require_lt(o, "λcs1<1", p.lambda_cs1, 1.0, false);
    require_gt(o, "λcs0+λcs1>1", p.lambda_cs0 + p.lambda_cs1, 1.0);
    require_gt(o, "λu>2", p.lambda_u, 2.0);
    require_lt(o, "λcs0·λcs1·λu²<1", p.lambda_cs0 * p.lambda_cs1 * p.lambda_u * p.lambda_u, 1.0, false);
    require_lt(o, "λcs1(1+ε0)<1", p.lambda_cs1 * (1.0 + p.eps0), 1.0, false);
    require_gt(o, "ε0>0", p.eps0, 0.0);
    require_gt(o, "ε>0", p.eps, 0.0);
    require_lt(o, "14ε<λcs0+λcs1−1", 14.0 * p.eps, p.lambda_cs0 + p.lambda_cs1 - 1.0, true);
    require_gt(o, "a1>0", p.a1, 0.0);
    require_lt(o, "|a3|<1−2λss", p.a3.abs(), 1.0 - 2.0 * p.lambda_ss, true);
    require_lt(o, "a2a3a4<0", p.a2 * p.a3 * p.a4, 0.0, false);
    if p.a2 > 0.0 {
        require_lt(o, "a1ε0²+a2ε0<μ", p.a1 * p.eps0 * p.eps0 + p.a2 * p.eps0, p.mu, true);
        require_lt(o, "μ<λu⁻¹−a2(1+ε0)", p.mu, 1.0 / p.lambda_u - p.a2 * (1.0 + p.eps0), true);
    } else if p.a2 < 0.0 {
        let b = -p.a2;
        require_lt(o, "a1ε0²+|a2|(1+ε0)<μ", p.a1 * p.eps0 * p.eps0 + b * (1.0 + p.eps0), p.mu, true);
        require_lt(o, "μ<λu⁻¹−|a2|ε0", p.mu, 1.0 / p.lambda_u - b * p.eps0, true);
    }
    if p.l < 4 {
        o.push(Violation { inequality: "L≥4".into(), message: format!("L≥4 fails ({})", p.l) });
    }
    if p.n0 == Some(0) {
        o.push(Violation { inequality: "n0≥1".into(), message: "n0≥1 fails (0)".into() });
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Point {
        Point { x, y, z }
    }

    pub fn dist(&self, o: &Point) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2) + (self.z - o.z).powi(2)).sqrt()
    }

    pub fn coord(&self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    V0,
    V1,
    H,
    Outside,
}

impl Region {
    pub fn symbol(self) -> Option<u8> {
        match self {
            Region::V0 => Some(0),
            Region::V1 => Some(1),
            _ => None,
        }
    }
}

fn inside(v: f64, (lo, hi): (f64, f64)) -> bool {
    lo <= v && v <= hi
}

pub fn classify(p: &ModelParams, pt: &Point) -> Region {
    let b = p.block();
    if !inside(pt.y, b) || !inside(pt.z, b) {
        return Region::Outside;
    }
    if inside(pt.x, p.v0_interval()) {
        Region::V0
    } else if inside(pt.x, p.v1_interval()) {
        Region::V1
    } else if inside(pt.x, p.h_interval()) {
        Region::H
    } else {
        Region::Outside
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub point: Point,
    pub steps_consumed: u32,
    pub branch: Region,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ModelError {
    #[error("point {0:?} left V0 ∪ V1 ∪ H")]
    EscapedDomain(Point),
    #[error("point {0:?} is not in the image of branch {1:?}")]
    NotInBranchImage(Point, Region),
}

pub fn zeta(p: &ModelParams, b: u8, z: f64) -> f64 {
    if b == 0 {
        p.lambda_cs0 * z
    } else {
        p.lambda_cs1 * z + 1.0 - p.lambda_cs1
    }
}

pub fn zeta_inv(p: &ModelParams, b: u8, z: f64) -> f64 {
    if b == 0 {
        z / p.lambda_cs0
    } else {
        (z - 1.0 + p.lambda_cs1) / p.lambda_cs1
    }
}

/// Affine coefficients `(a, b)` of `zeta_b(z) = a z + b`.
pub fn zeta_coeffs(p: &ModelParams, b: u8) -> (f64, f64) {
    if b == 0 {
        (p.lambda_cs0, 0.0)
    } else {
        (p.lambda_cs1, 1.0 - p.lambda_cs1)
    }
}

/// Composition along a word: the leftmost symbol is applied first, matching
/// the order in which an orbit visits the blocks.
pub fn zeta_apply(p: &ModelParams, w: &[u8], z: f64) -> f64 {
    w.iter().fold(z, |z, &b| zeta(p, b, z))
}

/// Branch of the 1-D expanding map on the x-axis.
pub fn x_map(p: &ModelParams, b: u8, x: f64) -> f64 {
    if b == 0 {
        p.lambda_u * x
    } else {
        p.lambda_u * (1.0 - x)
    }
}

pub fn x_map_inv(p: &ModelParams, b: u8, x: f64) -> f64 {
    if b == 0 {
        x / p.lambda_u
    } else {
        1.0 - x / p.lambda_u
    }
}

pub fn y_map(p: &ModelParams, b: u8, y: f64) -> f64 {
    if b == 0 {
        p.lambda_ss * y
    } else {
        1.0 - p.lambda_ss * y
    }
}

pub fn fold(p: &ModelParams, pt: &Point) -> Point {
    let t = pt.x - 0.5;
    Point::new(-p.a1 * t * t + p.a2 * pt.z + p.mu, p.a3 * (pt.y - 0.5) + 0.5, p.a4 * t + 0.5)
}

pub fn step(p: &ModelParams, pt: &Point) -> Result<StepResult, ModelError> {
    match classify(p, pt) {
        Region::V0 => Ok(StepResult {
            point: Point::new(x_map(p, 0, pt.x), y_map(p, 0, pt.y), zeta(p, 0, pt.z)),
            steps_consumed: 1,
            branch: Region::V0,
        }),
        Region::V1 => Ok(StepResult {
            point: Point::new(x_map(p, 1, pt.x), y_map(p, 1, pt.y), zeta(p, 1, pt.z)),
            steps_consumed: 1,
            branch: Region::V1,
        }),
        Region::H => Ok(StepResult { point: fold(p, pt), steps_consumed: 2, branch: Region::H }),
        Region::Outside => Err(ModelError::EscapedDomain(*pt)),
    }
}

/// Which branch produced `pt`, read off the y-coordinate: the three branch
/// images occupy disjoint horizontal slabs.
pub fn preimage_branch(p: &ModelParams, pt: &Point) -> Region {
    let (lo, hi) = p.block();
    let s = p.lambda_ss;
    let y0 = (s * lo, s * hi);
    let y1 = (1.0 - s * hi, 1.0 - s * lo);
    let a = p.a3.abs();
    let yh = (0.5 - a * (0.5 - lo), 0.5 + a * (hi - 0.5));
    if inside(pt.y, y0) {
        Region::V0
    } else if inside(pt.y, y1) {
        Region::V1
    } else if inside(pt.y, yh) {
        Region::H
    } else {
        Region::Outside
    }
}

pub fn step_inverse(p: &ModelParams, pt: &Point, branch: Region) -> Result<Point, ModelError> {
    let pre = match branch {
        Region::V0 => Point::new(x_map_inv(p, 0, pt.x), pt.y / p.lambda_ss, zeta_inv(p, 0, pt.z)),
        Region::V1 => Point::new(x_map_inv(p, 1, pt.x), (1.0 - pt.y) / p.lambda_ss, zeta_inv(p, 1, pt.z)),
        Region::H => {
            let t = (pt.z - 0.5) / p.a4;
            let x = 0.5 + t;
            let z = (pt.x + p.a1 * t * t - p.mu) / p.a2;
            let y = (pt.y - 0.5) / p.a3 + 0.5;
            Point::new(x, y, z)
        }
        Region::Outside => return Err(ModelError::NotInBranchImage(*pt, branch)),
    };
    if classify(p, &pre) == branch {
        Ok(pre)
    } else {
        Err(ModelError::NotInBranchImage(*pt, branch))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitPoint {
    pub index: usize,
    /// `None` at the synthetic middle index of a fold.
    pub point: Option<Point>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub points: Vec<OrbitPoint>,
    pub escaped: bool,
}

impl Orbit {
    pub fn landing_points(&self) -> impl Iterator<Item = (usize, Point)> + '_ {
        self.points.iter().filter_map(|o| o.point.map(|p| (o.index, p)))
    }
}

/// Iterate until `n_steps` indices are consumed or the orbit escapes.
pub fn orbit(p: &ModelParams, pt: &Point, n_steps: usize) -> Orbit {
    let mut points = vec![OrbitPoint { index: 0, point: Some(*pt) }];
    let mut cur = *pt;
    let mut idx = 0;
    while idx < n_steps {
        match step(p, &cur) {
            Ok(r) => {
                if r.steps_consumed == 2 {
                    points.push(OrbitPoint { index: idx + 1, point: None });
                }
                idx += r.steps_consumed as usize;
                cur = r.point;
                points.push(OrbitPoint { index: idx, point: Some(cur) });
            }
            Err(_) => return Orbit { points, escaped: true },
        }
    }
    Orbit { points, escaped: false }
}

/// High-precision point for routes that must not lose bits.
#[derive(Clone, Debug, PartialEq)]
pub struct HpPoint {
    pub x: Fixed,
    pub y: Fixed,
    pub z: Fixed,
}

impl HpPoint {
    pub fn from_point(pt: &Point, prec: u32) -> HpPoint {
        HpPoint {
            x: Fixed::from_f64(pt.x, prec, Round::Nearest),
            y: Fixed::from_f64(pt.y, prec, Round::Nearest),
            z: Fixed::from_f64(pt.z, prec, Round::Nearest),
        }
    }

    pub fn to_point(&self) -> Point {
        Point::new(self.x.to_f64(), self.y.to_f64(), self.z.to_f64())
    }
}

pub fn x_map_hp(p: &ModelParams, b: u8, x: &Fixed) -> Fixed {
    if b == 0 {
        x.mul_f64(p.lambda_u, Round::Nearest)
    } else {
        x.neg().add_f64(1.0, Round::Nearest).mul_f64(p.lambda_u, Round::Nearest)
    }
}

pub fn x_map_inv_hp(p: &ModelParams, b: u8, x: &Fixed) -> Fixed {
    let q = x.div_f64(p.lambda_u, Round::Nearest);
    if b == 0 {
        q
    } else {
        q.neg().add_f64(1.0, Round::Nearest)
    }
}

pub fn y_map_hp(p: &ModelParams, b: u8, y: &Fixed) -> Fixed {
    let s = y.mul_f64(p.lambda_ss, Round::Nearest);
    if b == 0 {
        s
    } else {
        s.neg().add_f64(1.0, Round::Nearest)
    }
}

pub fn y_map_inv_hp(p: &ModelParams, b: u8, y: &Fixed) -> Fixed {
    let s = if b == 0 { y.clone() } else { y.neg().add_f64(1.0, Round::Nearest) };
    s.div_f64(p.lambda_ss, Round::Nearest)
}

pub fn zeta_hp(p: &ModelParams, b: u8, z: &Fixed) -> Fixed {
    let (a, c) = zeta_coeffs(p, b);
    z.mul_f64(a, Round::Nearest).add_f64(c, Round::Nearest)
}

pub fn zeta_inv_hp(p: &ModelParams, b: u8, z: &Fixed) -> Fixed {
    let (a, c) = zeta_coeffs(p, b);
    z.add_f64(-c, Round::Nearest).div_f64(a, Round::Nearest)
}

pub fn fold_hp(p: &ModelParams, pt: &HpPoint) -> HpPoint {
    let t = pt.x.add_f64(-0.5, Round::Nearest);
    let x = t.square(Round::Nearest).mul_f64(-p.a1, Round::Nearest).add(&pt.z.mul_f64(p.a2, Round::Nearest)).add_f64(p.mu, Round::Nearest);
    let y = pt.y.add_f64(-0.5, Round::Nearest).mul_f64(p.a3, Round::Nearest).add_f64(0.5, Round::Nearest);
    let z = t.mul_f64(p.a4, Round::Nearest).add_f64(0.5, Round::Nearest);
    HpPoint { x, y, z }
}

pub fn classify_hp(p: &ModelParams, pt: &HpPoint) -> Region {
    classify(p, &pt.to_point())
}

pub fn step_hp(p: &ModelParams, pt: &HpPoint) -> Result<(HpPoint, Region), ModelError> {
    match classify_hp(p, pt) {
        Region::V0 => Ok((HpPoint { x: x_map_hp(p, 0, &pt.x), y: y_map_hp(p, 0, &pt.y), z: zeta_hp(p, 0, &pt.z) }, Region::V0)),
        Region::V1 => Ok((HpPoint { x: x_map_hp(p, 1, &pt.x), y: y_map_hp(p, 1, &pt.y), z: zeta_hp(p, 1, &pt.z) }, Region::V1)),
        Region::H => Ok((fold_hp(p, pt), Region::H)),
        Region::Outside => Err(ModelError::EscapedDomain(pt.to_point())),
    }
}

/// Inverse of a V-branch step in high precision.
pub fn step_inverse_hp(p: &ModelParams, pt: &HpPoint, b: u8) -> HpPoint {
    HpPoint { x: x_map_inv_hp(p, b, &pt.x), y: y_map_inv_hp(p, b, &pt.y), z: zeta_inv_hp(p, b, &pt.z) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn defaults_are_valid() {
        assert!(validate_params(&ModelParams::default()).is_empty());
    }

    #[test]
    fn fold_example() {
        let p = ModelParams::default();
        let r = step(&p, &Point::new(0.5, 0.5, 0.5)).unwrap();
        assert_eq!(r.steps_consumed, 2);
        assert!((r.point.x - 0.2).abs() < 1e-15);
        assert_eq!(r.point.y, 0.5);
        assert_eq!(r.point.z, 0.5);
    }

    #[test]
    fn fixed_points() {
        let p = ModelParams::default();
        let q = p.fixed_q();
        let r = step(&p, &q).unwrap().point;
        assert!(r.dist(&q) < 1e-15);
        assert_eq!(step(&p, &p.fixed_p()).unwrap().point, p.fixed_p());
        let back = step_inverse(&p, &q, Region::V1).unwrap();
        assert!(back.dist(&q) < 1e-13);
    }

    #[test]
    fn classify_table() {
        let p = ModelParams::default();
        assert_eq!(classify(&p, &Point::new(0.0, 0.0, 0.0)), Region::V0);
        assert_eq!(classify(&p, &Point::new(0.5, 0.5, 0.5)), Region::H);
        assert_eq!(classify(&p, &Point::new(0.47, 0.0, 0.0)), Region::Outside);
    }

    #[test]
    fn zeta_word_order() {
        let p = ModelParams::default();
        // leftmost first: zeta_1(zeta_0(1))
        let lhs = zeta_apply(&p, &[0, 1], 1.0);
        assert!((lhs - (0.92 * 0.1 + 0.08)).abs() < 1e-15);
        assert!((lhs - 0.172).abs() < 1e-15);
        assert!((zeta(&p, 1, 0.0) - 0.08).abs() < 1e-15);
    }

    #[test]
    fn step_inverse_round_trip() {
        let p = ModelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut n = 0;
        while n < 1000 {
            let pt = Point::new(rng.gen_range(-0.01..1.01), rng.gen_range(-0.01..1.01), rng.gen_range(-0.01..1.01));
            let Ok(r) = step(&p, &pt) else { continue };
            let back = step_inverse(&p, &r.point, r.branch).unwrap();
            assert!(back.dist(&pt) < 1e-12, "{pt:?} -> {back:?}");
            assert_eq!(preimage_branch(&p, &r.point), r.branch);
            n += 1;
        }
    }

    #[test]
    fn orbit_marks_synthetic_fold_index() {
        let p = ModelParams::default();
        let o = orbit(&p, &Point::new(0.5, 0.5, 0.5), 3);
        assert!(!o.escaped);
        assert_eq!(o.points[1], OrbitPoint { index: 1, point: None });
        let (i, q) = o.landing_points().nth(1).unwrap();
        assert_eq!(i, 2);
        assert!((q.x - 0.2).abs() < 1e-15);
        let (i3, q3) = o.landing_points().nth(2).unwrap();
        assert_eq!(i3, 3);
        assert!((q3.x - 0.5).abs() < 1e-14);
        assert!(orbit(&p, &Point::new(0.45, 0.0, 0.0), 5).escaped);
    }

    #[test]
    fn hp_step_matches_f64() {
        let p = ModelParams::default();
        let pt = Point::new(0.3, 0.2, 0.7);
        let (hp, _) = step_hp(&p, &HpPoint::from_point(&pt, 256)).unwrap();
        let lo = step(&p, &pt).unwrap().point;
        assert!(hp.to_point().dist(&lo) < 1e-15);
        let back = step_inverse_hp(&p, &hp, 0);
        assert!(back.to_point().dist(&pt) < 1e-15);
    }
}
