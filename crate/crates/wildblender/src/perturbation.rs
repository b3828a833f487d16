//! Bump perturbation `psi` and the perturbed map `g = f o psi`.
//!
//! At the affine model the pseudo-orbit has a closed form. With
//! `x_hat_k = (x_c(w_k), y_k, 1/2)` where `x_c(w) = F_w^{-1}(1/2)`, the block
//! orbit lands at `c_k = (1/2, G_w(y_k), zeta_w(1/2))` on the fold vertex
//! line, and a pure z-translation `u_k` moves it onto the fold preimage of
//! `x_hat_{k+1}`. Cubes and translations live in that frame.
//!
//! Points of later generations are pushed as offsets from the reference
//! orbit, in [`Ext`] so that offsets far below `f64` range stay meaningful.

use crate::bridges::precision_for;
use crate::ext::Ext;
use crate::fixed::{Fixed, Round};
use crate::model::{
    step, step_hp, x_map_inv, x_map_inv_hp, y_map, zeta, zeta_hp, HpPoint, ModelError, ModelParams, Point, Region, StepResult,
};
use crate::schedule::CodeSchedule;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PerturbationError {
    #[error("schedule ends at generation {have}, generation {need} required")]
    ScheduleTooShort { have: usize, need: usize },
    #[error("cubes {0} and {1} overlap")]
    CubesOverlap(usize, usize),
    #[error("no generation satisfies the cube separation inequality")]
    NoSeparation,
    #[error("pushed point of generation {k} left the {stage}")]
    LeftFrame { k: usize, stage: &'static str },
}

/// Degree `2r+1` smoothstep on `[-1, 0]`: 0 below, 1 above, `C^r` joins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub r: u32,
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl Mollifier {
    pub fn new(r: u32) -> Mollifier {
        assert!(r >= 2, "mollifier order must be at least 2");
        Mollifier { r }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 0.0 {
            return 1.0;
        }
        let s = x + 1.0;
        let r = self.r;
        let poly: f64 = (0..=r).map(|i| binom(r + i, i) * binom(2 * r + 1, r - i) * (-s).powi(i as i32)).sum();
        (s.powi(r as i32 + 1) * poly).clamp(0.0, 1.0)
    }
}

/// `beta((x-a)/(c|J|)) + beta(-(x-a')/(c|J|)) - 1` for `J = [a, a']`.
pub fn bump_1d(m: Mollifier, c: f64, a: f64, a2: f64) -> impl Fn(f64) -> f64 {
    assert!(c > 0.0 && a < a2);
    let w = c * (a2 - a);
    move |x| m.eval((x - a) / w) + m.eval(-(x - a2) / w) - 1.0
}

/// Bump of a cube in units of its half-width: with `s = offset / d`, the
/// 1-D factor is 1 for `|s| <= 1/2` and 0 for `|s| >= 1`.
fn bump_unit(m: Mollifier, s: f64) -> f64 {
    m.eval(2.0 * s + 1.0) + m.eval(1.0 - 2.0 * s) - 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpCube {
    pub k: usize,
    pub center: Point,
    pub half_width: Ext,
}

/// Product of the three 1-D bumps, evaluated on an offset from the centre.
pub fn bump_3d(m: Mollifier, cube: &BumpCube) -> impl Fn(&Offset) -> f64 + '_ {
    move |o| {
        let d = cube.half_width;
        [o.x, o.y, o.z].iter().map(|&c| bump_unit(m, c.ratio(d))).product()
    }
}

/// Displacement from a reference point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    pub x: Ext,
    pub y: Ext,
    pub z: Ext,
}

impl Offset {
    pub const ZERO: Offset = Offset { x: Ext::ZERO, y: Ext::ZERO, z: Ext::ZERO };

    pub fn new(x: Ext, y: Ext, z: Ext) -> Offset {
        Offset { x, y, z }
    }

    pub fn from_f64(x: f64, y: f64, z: f64) -> Offset {
        Offset::new(Ext::from_f64(x), Ext::from_f64(y), Ext::from_f64(z))
    }

    pub fn sup(&self) -> Ext {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn norm(&self) -> Ext {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn apply(&self, pt: &Point) -> Point {
        Point::new(pt.x + self.x.to_f64(), pt.y + self.y.to_f64(), pt.z + self.z.to_f64())
    }
}

/// One link of the pseudo-orbit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub k: usize,
    pub n_hat: usize,
    pub x_hat: Point,
    /// `c_k = f^{n_hat}(x_hat_k)`, centre of cube `k`.
    pub landing: Point,
    /// z-component of the translation `u_k`.
    pub u: Ext,
    pub d: Ext,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoOrbit {
    pub links: Vec<ChainLink>,
    /// High-precision z of each landing point, for exact cube tests.
    pub landing_z: Vec<Fixed>,
    /// High-precision translation of each link.
    pub u_hp: Vec<Fixed>,
    /// Measured constant `max |u_k| / under(lambda_u)^{-(n0+L(k+1))}`.
    pub u_const: f64,
}

impl PseudoOrbit {
    pub fn k_start(&self) -> usize {
        self.links[0].k
    }

    pub fn k_end(&self) -> usize {
        self.links.last().unwrap().k
    }

    pub fn link(&self, k: usize) -> &ChainLink {
        &self.links[k - self.k_start()]
    }
}

/// `F_w^{-1}(1/2)` in high precision.
pub fn section_x_hp(p: &ModelParams, w: &[u8], prec: u32) -> Fixed {
    w.iter().rev().fold(Fixed::half(prec), |x, &b| x_map_inv_hp(p, b, &x))
}

pub fn section_x(p: &ModelParams, w: &[u8]) -> f64 {
    w.iter().rev().fold(0.5, |x, &b| x_map_inv(p, b, x))
}

fn cube_half_width(p: &ModelParams, n0: usize, k: usize) -> Ext {
    Ext::powf(p.under(p.lambda_u), -((n0 + 3 * k) as f64))
}

/// Links `k_start..=k_end`; needs hat words through `k_end + 1`.
pub fn build_pseudo_orbit(p: &ModelParams, s: &CodeSchedule, k_end: usize) -> Result<PseudoOrbit, PerturbationError> {
    if s.k_max() < k_end + 1 {
        return Err(PerturbationError::ScheduleTooShort { have: s.k_max(), need: k_end + 1 });
    }
    let ks: Vec<usize> = (s.k_start..=k_end).collect();
    let words: Vec<Vec<u8>> = (s.k_start..=k_end + 1).map(|k| s.hat(k).word()).collect();
    // the HP parts are independent per k
    let hp: Vec<(Fixed, Fixed)> = ks
        .par_iter()
        .map(|&k| {
            let prec = precision_for(p, s.n0, k) + 64;
            let w = &words[k - s.k_start];
            let zc = w.iter().fold(Fixed::half(prec), |z, &b| zeta_hp(p, b, &z));
            let xt = section_x_hp(p, &words[k + 1 - s.k_start], prec);
            let zt = xt.add_f64(-p.mu, Round::Nearest).div_f64(p.a2, Round::Nearest);
            (zc.clone(), zt.sub(&zc))
        })
        .collect();
    let mut links = Vec::with_capacity(ks.len());
    let mut y = 0.5;
    let mut u_const: f64 = 0.0;
    for (i, &k) in ks.iter().enumerate() {
        let w = &words[i];
        let x_hat = Point::new(section_x(p, w), y, 0.5);
        let big_y = w.iter().fold(y, |y, &b| y_map(p, b, y));
        let zc = w.iter().fold(0.5, |z, &b| zeta(p, b, z));
        let u = hp[i].1.to_ext();
        let scale = Ext::powf(p.under(p.lambda_u), -((s.n0 + p.l * (k + 1)) as f64));
        u_const = u_const.max(u.abs().ratio(scale));
        links.push(ChainLink { k, n_hat: w.len(), x_hat, landing: Point::new(0.5, big_y, zc), u, d: cube_half_width(p, s.n0, k) });
        y = p.a3 * (big_y - 0.5) + 0.5;
    }
    let (landing_z, u_hp) = hp.into_iter().unzip();
    Ok(PseudoOrbit { links, landing_z, u_hp, u_const })
}

/// Translations and cubes from generation `n_start` on.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationField {
    pub mollifier: Mollifier,
    pub n_start: usize,
    pub cubes: Vec<BumpCube>,
    pub orbit: PseudoOrbit,
    /// Bound on the C^0 size of the translations left out beyond the chain.
    pub tail_bound: Ext,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub n_start: usize,
    pub mollifier_order: u32,
    pub u_const: f64,
    pub tail_bound_log10: f64,
    pub cubes: Vec<BumpCube>,
    pub translations: Vec<Ext>,
}

fn cubes_disjoint(o: &PseudoOrbit, i: usize, j: usize) -> bool {
    let (a, b) = (&o.links[i], &o.links[j]);
    let reach = a.d + b.d;
    let dy = Ext::from_f64(a.landing.y - b.landing.y).abs();
    let dz = o.landing_z[i].with_prec(o.landing_z[j].prec(), Round::Nearest).sub(&o.landing_z[j]).to_ext().abs();
    // the f64 y-difference carries a rounding error of a few ulps
    dy > reach + Ext::from_f64(1e-15) || dz > reach
}

/// Least `k0` with `3|u_k| <= d_k` and pairwise disjoint cubes from `k0` on.
pub fn build_field(p: &ModelParams, orbit: PseudoOrbit, mollifier: Mollifier) -> Result<PerturbationField, PerturbationError> {
    let n = orbit.links.len();
    let sep_ok = |i: usize| orbit.links[i].u.abs().scale(3.0) <= orbit.links[i].d;
    let mut first = None;
    'outer: for i0 in 0..n {
        if !(i0..n).all(sep_ok) {
            continue;
        }
        for i in i0..n {
            for j in i + 1..n {
                if !cubes_disjoint(&orbit, i, j) {
                    continue 'outer;
                }
            }
        }
        first = Some(i0);
        break;
    }
    let i0 = first.ok_or(PerturbationError::NoSeparation)?;
    let cubes = orbit.links[i0..].iter().map(|l| BumpCube { k: l.k, center: l.landing, half_width: l.d }).collect();
    let last = orbit.links.last().unwrap();
    let ratio = Ext::powf(p.under(p.lambda_u), -(p.l as f64));
    let tail_bound =
        Ext::from_f64(orbit.u_const) * Ext::powf(p.under(p.lambda_u), -((last.k + 2) as f64 * p.l as f64)) / (Ext::ONE - ratio);
    Ok(PerturbationField { mollifier, n_start: orbit.links[i0].k, cubes, orbit, tail_bound })
}

impl PerturbationField {
    pub fn k_end(&self) -> usize {
        self.orbit.k_end()
    }

    pub fn cube(&self, k: usize) -> Option<&BumpCube> {
        k.checked_sub(self.n_start).and_then(|i| self.cubes.get(i))
    }

    pub fn summary(&self) -> FieldSummary {
        FieldSummary {
            n_start: self.n_start,
            mollifier_order: self.mollifier.r,
            u_const: self.orbit.u_const,
            tail_bound_log10: self.tail_bound.log10(),
            cubes: self.cubes.clone(),
            translations: self.cubes.iter().map(|c| self.orbit.link(c.k).u).collect(),
        }
    }

    /// `psi(pt)` in double precision; adequate while cube sizes are well
    /// above `f64` resolution.
    pub fn psi(&self, pt: &Point) -> Point {
        let mut out = *pt;
        for c in &self.cubes {
            let d = c.half_width.to_f64();
            let o = Offset::from_f64(pt.x - c.center.x, pt.y - c.center.y, pt.z - c.center.z);
            if d == 0.0 || o.sup().to_f64() >= d {
                continue;
            }
            let b = bump_3d(self.mollifier, c)(&o);
            out.z += b * self.orbit.link(c.k).u.to_f64();
        }
        out
    }

    /// `psi` in high precision, with exact offsets from the cube centres.
    pub fn psi_hp(&self, pt: &HpPoint) -> HpPoint {
        let mut out = pt.clone();
        let prec = pt.z.prec();
        for c in &self.cubes {
            let i = c.k - self.orbit.k_start();
            let zc = self.orbit.landing_z[i].with_prec(prec, Round::Nearest);
            let o = Offset::new(
                pt.x.add_f64(-c.center.x, Round::Nearest).to_ext(),
                pt.y.add_f64(-c.center.y, Round::Nearest).to_ext(),
                pt.z.sub(&zc).to_ext(),
            );
            if o.sup() >= c.half_width {
                continue;
            }
            let b = bump_3d(self.mollifier, c)(&o);
            let u = self.orbit.u_hp[i].with_prec(prec, Round::Nearest);
            out.z = out.z.add(&u.mul_f64(b, Round::Nearest));
        }
        out
    }
}

/// `g = f o psi`.
pub fn apply_g(p: &ModelParams, field: &PerturbationField, pt: &Point) -> Result<StepResult, ModelError> {
    step(p, &field.psi(pt))
}

pub fn apply_g_hp(p: &ModelParams, field: &PerturbationField, pt: &HpPoint) -> Result<(HpPoint, Region), ModelError> {
    step_hp(p, &field.psi_hp(pt))
}

/// High-precision `x_hat_k` with enough bits to survive `n_hat_k` expanding
/// steps.
pub fn x_hat_hp(p: &ModelParams, s: &CodeSchedule, orbit: &PseudoOrbit, k: usize) -> HpPoint {
    let n_hat = s.n_hat(k);
    let prec = ((n_hat as f64 * p.lambda_u.log2()).ceil() as u32 + precision_for(p, s.n0, k) + 64).div_ceil(64) * 64;
    let l = orbit.link(k);
    HpPoint { x: section_x_hp(p, &s.hat(k).word(), prec), y: Fixed::from_f64(l.x_hat.y, prec, Round::Nearest), z: Fixed::half(prec) }
}

/// Sup-norm gap between `g^{n_hat_k + 2}(x_hat_k)` and `x_hat_{k+1}`,
/// iterating the actual map in high precision.
pub fn chain_link_gap(p: &ModelParams, s: &CodeSchedule, field: &PerturbationField, k: usize) -> Result<f64, PerturbationError> {
    let orbit = &field.orbit;
    let mut pt = x_hat_hp(p, s, orbit, k);
    let w = s.hat(k).word();
    for &b in &w {
        let (next, region) = apply_g_hp(p, field, &pt).map_err(|_| PerturbationError::LeftFrame { k, stage: "block orbit" })?;
        if region.symbol() != Some(b) {
            return Err(PerturbationError::LeftFrame { k, stage: "block orbit" });
        }
        pt = next;
    }
    let (landed, region) = apply_g_hp(p, field, &pt).map_err(|_| PerturbationError::LeftFrame { k, stage: "fold" })?;
    if region != Region::H {
        return Err(PerturbationError::LeftFrame { k, stage: "fold" });
    }
    let next = orbit.link(k + 1).x_hat;
    let prec = landed.x.prec();
    let nx = section_x_hp(p, &s.hat(k + 1).word(), prec);
    let gap = [landed.x.sub(&nx).to_ext().abs().to_f64(), (landed.y.to_f64() - next.y).abs(), (landed.z.to_f64() - next.z).abs()];
    Ok(gap.iter().cloned().fold(0.0, f64::max))
}

/// Reference orbit and cumulative linear parts along one generation.
#[derive(Clone, Debug)]
pub struct Frame {
    pub k: usize,
    pub word: Vec<u8>,
    /// `refs[j] = f^j(x_hat_k)` for `j <= n_hat`; `refs[n_hat] = c_k`.
    pub refs: Vec<Point>,
    /// Diagonal of `Df^j` at the reference orbit.
    pub cum: Vec<[Ext; 3]>,
}

pub fn frame(p: &ModelParams, s: &CodeSchedule, orbit: &PseudoOrbit, k: usize) -> Frame {
    let word = s.hat(k).word();
    let n = word.len();
    let mut xs = vec![0.5; n + 1];
    for j in (0..n).rev() {
        xs[j] = x_map_inv(p, word[j], xs[j + 1]);
    }
    let l = orbit.link(k);
    let mut refs = Vec::with_capacity(n + 1);
    let mut cum = Vec::with_capacity(n + 1);
    let (mut y, mut z) = (l.x_hat.y, l.x_hat.z);
    let mut c = [Ext::ONE; 3];
    for j in 0..=n {
        refs.push(Point::new(xs[j], y, z));
        cum.push(c);
        if j < n {
            let b = word[j];
            let sgn = if b == 0 { 1.0 } else { -1.0 };
            c = [c[0].scale(sgn * p.lambda_u), c[1].scale(sgn * p.lambda_ss), c[2].scale(p.lambda_cs(b))];
            y = y_map(p, b, y);
            z = zeta(p, b, z);
        }
    }
    Frame { k, word, refs, cum }
}

impl Frame {
    pub fn n_hat(&self) -> usize {
        self.word.len()
    }

    pub fn offset_at(&self, j: usize, d0: &Offset) -> Offset {
        let c = &self.cum[j];
        Offset::new(c[0] * d0.x, c[1] * d0.y, c[2] * d0.z)
    }

    pub fn point_at(&self, j: usize, d0: &Offset) -> Point {
        self.offset_at(j, d0).apply(&self.refs[j])
    }
}

/// Diagonal of `Df^{n_hat_k}` along generation `k`.
pub fn generation_linear(p: &ModelParams, hat: &crate::bridges::HatWord) -> [Ext; 3] {
    let n = hat.n_hat as f64;
    let sgn = if hat.ones.is_multiple_of(2) { 1.0 } else { -1.0 };
    [
        Ext::powf(p.lambda_u, n).scale(sgn),
        Ext::powf(p.lambda_ss, n).scale(sgn),
        Ext::powf(p.lambda_cs0, hat.zeros as f64) * Ext::powf(p.lambda_cs1, hat.ones as f64),
    ]
}

/// Offset from `x_hat_{k+1}` of `g^{n_hat_k+2}(x_hat_k + d0)`, given the
/// generation's linear part from [`generation_linear`].
pub fn push_generation(
    p: &ModelParams,
    field: &PerturbationField,
    k: usize,
    lin: &[Ext; 3],
    d0: &Offset,
) -> Result<Offset, PerturbationError> {
    let o = Offset::new(lin[0] * d0.x, lin[1] * d0.y, lin[2] * d0.z);
    let cube = field.cube(k).ok_or(PerturbationError::LeftFrame { k, stage: "perturbed range" })?;
    if o.sup() >= cube.half_width {
        return Err(PerturbationError::LeftFrame { k, stage: "bump cube" });
    }
    let b = bump_3d(field.mollifier, cube)(&o);
    let u = field.orbit.link(k).u;
    // relative to c_k + u_k, the point sits at o + (b - 1) u
    let dz = o.z + u.scale(b - 1.0);
    Ok(Offset::new((o.x * o.x).scale(-p.a1) + dz.scale(p.a2), o.y.scale(p.a3), o.x.scale(p.a4)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::FreeWords;
    use crate::schedule::gen_quadratic_schedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(k_end: usize) -> (ModelParams, CodeSchedule, PerturbationField) {
        let p = ModelParams::default();
        let s = gen_quadratic_schedule(&p, &FreeWords::Dirac, k_end + 1, 1).unwrap();
        let o = build_pseudo_orbit(&p, &s, k_end).unwrap();
        let f = build_field(&p, o, Mollifier::new(3)).unwrap();
        (p, s, f)
    }

    #[test]
    fn mollifier_shape() {
        let m = Mollifier::new(3);
        assert_eq!(m.eval(-1.0), 0.0);
        assert_eq!(m.eval(0.0), 1.0);
        assert!((m.eval(-0.5) - 0.5).abs() < 1e-12);
        let grid: Vec<f64> = (0..=1000).map(|i| m.eval(-1.0 + i as f64 / 1000.0)).collect();
        assert!(grid.windows(2).all(|w| w[0] <= w[1]));
        // derivatives up to order r vanish at both joins, so r-th differences
        // across a join scale like h^{r+1}
        let d3 = |x0: f64, h: f64| {
            let f = |i: i32| m.eval(x0 + i as f64 * h);
            f(2) - 3.0 * f(1) + 3.0 * f(0) - f(-1)
        };
        for &x0 in &[-1.0, 0.0] {
            let ratio = d3(x0, 2e-3) / d3(x0, 1e-3);
            assert!((12.0..20.0).contains(&ratio), "{x0}: {ratio}");
        }
    }

    #[test]
    fn bump_1d_profile() {
        let m = Mollifier::new(2);
        let b = bump_1d(m, 0.5, 1.0, 2.0);
        assert_eq!(b(1.5), 1.0);
        assert_eq!(b(1.0), 1.0);
        assert_eq!(b(1.0 - 2.0 * 0.5), 0.0);
        assert_eq!(b(4.0), 0.0);
        let ramp: Vec<f64> = (0..=100).map(|i| b(0.5 + 0.5 * i as f64 / 100.0)).collect();
        assert!(ramp.windows(2).all(|w| w[0] <= w[1]));
        assert!(ramp[50] > 0.0 && ramp[50] < 1.0);
    }

    #[test]
    fn bump_3d_support() {
        let m = Mollifier::new(3);
        let cube = BumpCube { k: 1, center: Point::new(0.5, 0.5, 0.5), half_width: Ext::from_f64(0.01) };
        let b = bump_3d(m, &cube);
        assert_eq!(b(&Offset::ZERO), 1.0);
        assert_eq!(b(&Offset::from_f64(0.01, 0.01, 0.01)), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let o = Offset::from_f64(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
            let v = b(&o);
            if o.sup().to_f64() >= 0.01 {
                assert_eq!(v, 0.0);
            }
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn translations_are_small() {
        let (p, s, f) = setup(25);
        for l in &f.orbit.links {
            let scale = Ext::powf(p.under(p.lambda_u), -((s.n0 + p.l * (l.k + 1)) as f64));
            assert!(l.u.abs() <= scale.scale(f.orbit.u_const * (1.0 + 1e-12)));
            if l.k >= f.n_start {
                assert!(l.u.abs() < l.d.scale(0.5));
            }
        }
        assert!(f.orbit.u_const < 20.0, "C = {}", f.orbit.u_const);
    }

    #[test]
    fn landing_matches_zeta_oracle() {
        let (p, s, f) = setup(10);
        for l in &f.orbit.links {
            let w = s.hat(l.k).word();
            let z = crate::model::zeta_apply(&p, &w, 0.5);
            assert!((z - l.landing.z).abs() < 1e-10);
            // the landing lies in the generation k+1 target window
            let t = s.hat(l.k).target;
            assert!(t.0 - 1e-12 <= l.landing.z && l.landing.z <= t.1 + 1e-12);
        }
    }

    #[test]
    fn psi_outside_and_at_centres() {
        let (_, _, f) = setup(8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let pt = Point::new(rng.gen_range(-0.01..0.4), rng.gen(), rng.gen());
            assert_eq!(f.psi(&pt), pt);
        }
        let c = &f.cubes[0];
        let moved = f.psi(&c.center);
        assert_eq!(moved.z, c.center.z + f.orbit.link(c.k).u.to_f64());
    }

    #[test]
    fn g_is_continuous_across_cube_boundary() {
        let (p, _, f) = setup(6);
        let c = f.cubes[0];
        let d = c.half_width.to_f64();
        let mut worst: f64 = 0.0;
        for i in -50..50 {
            let x = c.center.x + d * (1.0 + i as f64 * 1e-3);
            let a = apply_g(&p, &f, &Point::new(x, c.center.y, c.center.z)).unwrap().point;
            let b = apply_g(&p, &f, &Point::new(x + 1e-8, c.center.y, c.center.z)).unwrap().point;
            worst = worst.max(a.dist(&b));
        }
        assert!(worst < 1e-6, "jump {worst}");
    }

    #[test]
    fn chain_is_an_orbit_of_g() {
        let (p, s, f) = setup(12);
        for k in f.n_start..f.k_end() {
            let gap = chain_link_gap(&p, &s, &f, k).unwrap();
            assert!(gap < 1e-9, "k = {k}: {gap}");
        }
    }

    #[test]
    fn offset_push_matches_high_precision() {
        let (p, s, f) = setup(10);
        let k = f.n_start;
        let fr = frame(&p, &s, &f.orbit, k);
        let start = x_hat_hp(&p, &s, &f.orbit, k);
        let prec = start.x.prec();
        let scale = (f.cube(k).unwrap().half_width * Ext::powf(p.lambda_u, -(fr.n_hat() as f64))).to_f64() * 0.1;
        let d0 = Offset::from_f64(0.7 * scale, 1e-6, -2e-6);
        let mut pt = HpPoint {
            x: start.x.add_f64(d0.x.to_f64(), Round::Nearest),
            y: start.y.add_f64(d0.y.to_f64(), Round::Nearest),
            z: start.z.add_f64(d0.z.to_f64(), Round::Nearest),
        };
        for _ in 0..=fr.n_hat() {
            pt = apply_g_hp(&p, &f, &pt).unwrap().0;
        }
        let lin = generation_linear(&p, s.hat(k));
        for (a, b) in fr.cum[fr.n_hat()].iter().zip(&lin) {
            assert!(((*a / *b).to_f64() - 1.0).abs() < 1e-12);
        }
        let local = push_generation(&p, &f, k, &generation_linear(&p, s.hat(k)), &d0).unwrap();
        let nx = section_x_hp(&p, &s.hat(k + 1).word(), prec);
        let ex = pt.x.sub(&nx).to_ext();
        assert!((ex - local.x).abs() <= local.x.abs().scale(1e-9) + Ext::from_f64(1e-300));
        let next = f.orbit.link(k + 1).x_hat;
        assert!((pt.y.to_f64() - next.y - local.y.to_f64()).abs() < 1e-12);
        assert!((pt.z.to_f64() - next.z - local.z.to_f64()).abs() < 1e-12);
    }
}
