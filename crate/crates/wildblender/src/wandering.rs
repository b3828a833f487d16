//! Thin cylinders `D_k` around the pseudo-orbit and the checks run on them:
//! nesting under `g^{n_hat_k+2}`, pairwise disjointness of forward images,
//! separation from the horseshoe, and the fold-image curvature.

use crate::bridges::u_bridge_hp;
use crate::coding::{decode_hp, BiCode, Word};
use crate::ext::Ext;
use crate::fixed::{Fixed, FxInterval, Round};
use crate::model::{x_map_inv_hp, y_map_hp, zeta_hp, ModelParams, Point};
use crate::perturbation::{frame, generation_linear, push_generation, section_x_hp, Offset, PerturbationField};
use crate::schedule::CodeSchedule;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum WanderingError {
    #[error("schedule too short for generation {k}: exponent tail {tail:e}")]
    ScheduleTooShort { k: usize, tail: f64 },
    #[error("axis of D_{0} does not fit in its leaf; decrease sigma")]
    XiTooLarge(usize),
    #[error("no sigma gives a nesting run of {0} generations")]
    NoSigma(usize),
}

/// `xi_k = sigma * bar(lambda_u)^{-S_k}` with `S_k = sum_i n_hat_{k+i} / 2^i`,
/// and `rho_k = xi_k^{1/2} / sigma`, stored as logarithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSizes {
    pub sigma: f64,
    pub k_lo: usize,
    pub exponent: Vec<f64>,
    /// Bound on the neglected part of each exponent.
    pub tail: Vec<f64>,
    ln_lbar: f64,
}

impl DomainSizes {
    pub fn k_hi(&self) -> usize {
        self.k_lo + self.exponent.len() - 1
    }

    pub fn ln_xi(&self, k: usize) -> f64 {
        self.sigma.ln() - self.exponent[k - self.k_lo] * self.ln_lbar
    }

    pub fn xi(&self, k: usize) -> Ext {
        Ext::from_ln(self.ln_xi(k))
    }

    pub fn rho(&self, k: usize) -> Ext {
        Ext::from_ln(0.5 * self.ln_xi(k) - self.sigma.ln())
    }
}

/// Sizes for `k_lo..=k_hi`; fails when the schedule is too short for the
/// dyadic tail of the exponent to drop below `tail_tol`.
pub fn domain_sizes(
    p: &ModelParams,
    s: &CodeSchedule,
    sigma: f64,
    k_lo: usize,
    k_hi: usize,
    tail_tol: f64,
) -> Result<DomainSizes, WanderingError> {
    let km = s.k_max();
    // n_hat_j <= a j^2 beyond the schedule, with a measured on its second half
    let a = (km / 2..=km).filter(|&j| j >= s.k_start).map(|j| s.n_hat(j) as f64 / (j * j) as f64).fold(0.0, f64::max) * 1.25;
    let mut exponent = Vec::new();
    let mut tail = Vec::new();
    for k in k_lo..=k_hi {
        let mut e = 0.0;
        for (i, j) in (k..=km).enumerate() {
            e += s.n_hat(j) as f64 / 2f64.powi(i as i32);
        }
        let i0 = km + 1 - k;
        let t: f64 = (i0..i0 + 400).map(|i| a * ((k + i) as f64).powi(2) / 2f64.powi(i as i32)).sum();
        if t > tail_tol {
            return Err(WanderingError::ScheduleTooShort { k, tail: t });
        }
        exponent.push(e);
        tail.push(t);
    }
    Ok(DomainSizes { sigma, k_lo, exponent, tail, ln_lbar: p.bar(p.lambda_u).ln() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub k: usize,
    pub log10_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub rows: Vec<RatioRow>,
    pub decreasing: bool,
    pub log10_drop: f64,
    pub pass: bool,
}

/// `r_k = bar(lcs0)^{n0_k} bar(lcs1)^{n1_k} rho_k / xi_{k+1}`: the z-spread a
/// disk picks up along a generation, against the next axis length.
pub fn verify_size_ratio(p: &ModelParams, s: &CodeSchedule, sizes: &DomainSizes, k_lo: usize, k_hi: usize) -> RatioReport {
    let rows: Vec<RatioRow> = (k_lo..=k_hi.min(sizes.k_hi() - 1))
        .map(|k| {
            let h = s.hat(k);
            let ln = h.zeros as f64 * p.bar(p.lambda_cs0).ln() + h.ones as f64 * p.bar(p.lambda_cs1).ln() + sizes.rho(k).ln()
                - sizes.ln_xi(k + 1);
            RatioRow { k, log10_ratio: ln / std::f64::consts::LN_10 }
        })
        .collect();
    let decreasing = rows.windows(2).all(|w| w[1].log10_ratio < w[0].log10_ratio);
    let log10_drop = rows.first().map_or(0.0, |f| f.log10_ratio - rows.last().unwrap().log10_ratio);
    RatioReport { pass: decreasing && log10_drop >= 1.0, rows, decreasing, log10_drop }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderDomain {
    pub k: usize,
    pub center: Point,
    pub xi: Ext,
    pub rho: Ext,
}

/// Cylinders for `k_lo..=k_hi`, after checking that each axis fits in the
/// leaf of its hat-word block and that the blocks are pairwise disjoint.
pub fn build_domains(
    p: &ModelParams,
    field: &PerturbationField,
    s: &CodeSchedule,
    sizes: &DomainSizes,
    k_lo: usize,
    k_hi: usize,
) -> Result<Vec<CylinderDomain>, WanderingError> {
    let mut out = Vec::new();
    for k in k_lo..=k_hi {
        let leaf = Ext::powf(p.lambda_u, -(s.n_hat(k) as f64)).scale(p.eps0);
        if sizes.xi(k).scale(0.5) >= leaf {
            return Err(WanderingError::XiTooLarge(k));
        }
        out.push(CylinderDomain { k, center: field.orbit.link(k).x_hat, xi: sizes.xi(k), rho: sizes.rho(k) });
    }
    Ok(out)
}

/// Prefix bridges `B^u(w^(n0+Lk))` of the given generations are pairwise disjoint.
pub fn domains_disjoint(p: &ModelParams, s: &CodeSchedule, ks: &[usize]) -> bool {
    let chain = crate::bridges::bridge_chain(p, s.n0, &s.b0, *ks.iter().max().unwrap_or(&1));
    let prec = crate::bridges::precision_for(p, s.n0, chain.k_max());
    let bridges: Vec<FxInterval> = ks.iter().map(|&k| u_bridge_hp(p, &chain.prefix(k), prec)).collect();
    (0..bridges.len()).all(|i| (i + 1..bridges.len()).all(|j| bridges[i].disjoint(&bridges[j])))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub axial: usize,
    pub angular: usize,
    pub disk: usize,
}

impl Default for SampleGrid {
    fn default() -> Self {
        SampleGrid { axial: 16, angular: 64, disk: 256 }
    }
}

impl SampleGrid {
    pub fn doubled(self) -> SampleGrid {
        SampleGrid { axial: self.axial * 2, angular: self.angular * 2, disk: self.disk * 2 }
    }

    pub fn count(&self) -> usize {
        self.axial * self.angular + 2 * self.disk
    }
}

/// Boundary points in cylinder units `(t, r cos th, r sin th)`, `|t| <= 1`,
/// `r <= 1`; lateral surface first, then both end disks.
pub fn boundary_unit_samples(g: SampleGrid) -> Vec<(f64, f64, f64, bool)> {
    let mut out = Vec::with_capacity(g.count());
    for i in 0..g.axial {
        let t = -1.0 + 2.0 * i as f64 / (g.axial - 1) as f64;
        for j in 0..g.angular {
            let th = std::f64::consts::TAU * j as f64 / g.angular as f64;
            out.push((t, th.cos(), th.sin(), true));
        }
    }
    let rings = (g.disk as f64).sqrt().round().max(1.0) as usize;
    let per = g.disk / rings;
    for &t in &[-1.0, 1.0] {
        for i in 0..rings {
            let r = ((i as f64 + 0.5) / rings as f64).sqrt();
            for j in 0..per {
                let th = std::f64::consts::TAU * (j as f64 + 0.5 * (i % 2) as f64) / per as f64;
                out.push((t, r * th.cos(), r * th.sin(), false));
            }
        }
    }
    out
}

fn unit_to_offset(d: &CylinderDomain, u: (f64, f64, f64)) -> Offset {
    Offset::new(d.xi.scale(0.5 * u.0), d.rho.scale(u.1), d.rho.scale(u.2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestingRow {
    pub k: usize,
    /// `min(1 - |dx| / (xi'/2), 1 - |dyz| / rho')` over the samples.
    pub margin: f64,
    /// Smallest signed distance to the boundary of `D_{k+1}`, log10 of its size.
    pub margin_abs_log10: f64,
    pub margin_abs_positive: bool,
    pub worst_face: String,
    pub samples: usize,
    /// `|pi^u(g^{n_hat+2}(J_k))| / xi_{k+1}`.
    pub axis_ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestingReport {
    pub sigma: f64,
    pub rows: Vec<NestingRow>,
    /// First generation of the longest run with margin at least `target`.
    pub run_start: usize,
    pub run_len: usize,
    pub target: f64,
}

impl NestingReport {
    pub fn row(&self, k: usize) -> Option<&NestingRow> {
        self.rows.iter().find(|r| r.k == k)
    }
}

fn nest_one(p: &ModelParams, field: &PerturbationField, s: &CodeSchedule, sizes: &DomainSizes, k: usize, grid: SampleGrid) -> NestingRow {
    let lin = generation_linear(p, s.hat(k));
    let d = CylinderDomain { k, center: field.orbit.link(k).x_hat, xi: sizes.xi(k), rho: sizes.rho(k) };
    let (xn, rn) = (sizes.xi(k + 1).scale(0.5), sizes.rho(k + 1));
    let mut grid = grid;
    for attempt in 0..3 {
        let samples = boundary_unit_samples(grid);
        let mut margins = Vec::with_capacity(samples.len());
        let mut worst = (f64::INFINITY, Ext::ONE, String::new());
        let mut failed = false;
        for &(t, a, b, lateral) in &samples {
            match push_generation(p, field, k, &lin, &unit_to_offset(&d, (t, a, b))) {
                Ok(e) => {
                    let yz = (e.y * e.y + e.z * e.z).sqrt();
                    let mx = 1.0 - e.x.abs().ratio(xn);
                    let myz = 1.0 - yz.ratio(rn);
                    let (m, abs) = if mx <= myz { (mx, xn - e.x.abs()) } else { (myz, rn - yz) };
                    margins.push(m);
                    if m < worst.0 {
                        let face = if lateral {
                            "lateral"
                        } else if t < 0.0 {
                            "disk -"
                        } else {
                            "disk +"
                        };
                        worst = (m, abs, face.to_string());
                    }
                }
                Err(_) => {
                    failed = true;
                    worst = (f64::NEG_INFINITY, -Ext::ONE, "left frame".into());
                    break;
                }
            }
        }
        // sample spacing bound: largest jump between neighbouring lateral samples
        let spacing = margins.windows(2).take(grid.axial * grid.angular).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        if !failed && worst.0 < 2.0 * spacing && attempt < 2 {
            grid = grid.doubled();
            continue;
        }
        let axis: Vec<Ext> = (0..=32)
            .filter_map(|i| push_generation(p, field, k, &lin, &unit_to_offset(&d, (-1.0 + i as f64 / 16.0, 0.0, 0.0))).ok())
            .map(|e| e.x)
            .collect();
        let axis_ratio = match (axis.iter().cloned().reduce(Ext::max), axis.iter().cloned().reduce(Ext::min)) {
            (Some(hi), Some(lo)) => (hi - lo).ratio(sizes.xi(k + 1)),
            _ => f64::INFINITY,
        };
        return NestingRow {
            k,
            margin: worst.0,
            margin_abs_log10: if worst.1.is_zero() { f64::NEG_INFINITY } else { worst.1.log10() },
            margin_abs_positive: worst.1.signum() > 0.0,
            worst_face: worst.2,
            samples: samples.len(),
            axis_ratio,
            pass: !failed && worst.0 > 0.0,
        };
    }
    unreachable!()
}

fn longest_run(rows: &[NestingRow], target: f64) -> (usize, usize) {
    let mut best = (rows.first().map_or(0, |r| r.k), 0);
    let mut cur = (0, 0);
    for r in rows {
        if r.pass && r.margin >= target {
            if cur.1 == 0 {
                cur.0 = r.k;
            }
            cur.1 += 1;
            if cur.1 > best.1 {
                best = cur;
            }
        } else {
            cur.1 = 0;
        }
    }
    best
}

/// Push the boundary of each `D_k`, `k in k_lo..=k_hi`, through one generation.
pub fn verify_nesting(
    p: &ModelParams,
    field: &PerturbationField,
    s: &CodeSchedule,
    sizes: &DomainSizes,
    k_lo: usize,
    k_hi: usize,
    grid: SampleGrid,
) -> NestingReport {
    let rows: Vec<NestingRow> = (k_lo..=k_hi).into_par_iter().map(|k| nest_one(p, field, s, sizes, k, grid)).collect();
    let target = 0.1;
    let (run_start, run_len) = longest_run(&rows, target);
    NestingReport { sigma: sizes.sigma, rows, run_start, run_len, target }
}

/// Largest `sigma = 2^e`, `e <= 4`, whose nesting margins stay at least 0.1
/// over `min_run` consecutive generations.
pub fn auto_sigma(
    p: &ModelParams,
    field: &PerturbationField,
    s: &CodeSchedule,
    k_lo: usize,
    k_hi: usize,
    grid: SampleGrid,
    tail_tol: f64,
    min_run: usize,
) -> Result<(DomainSizes, NestingReport), WanderingError> {
    for e in (-20..=4).rev() {
        let sigma = 2f64.powi(e);
        let sizes = domain_sizes(p, s, sigma, k_lo, k_hi + 1, tail_tol)?;
        let rep = verify_nesting(p, field, s, &sizes, k_lo, k_hi, grid);
        if rep.run_len >= min_run {
            return Ok((sizes, rep));
        }
    }
    Err(WanderingError::NoSigma(min_run))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WanderingReport {
    pub k_first: usize,
    pub generations: usize,
    pub horizon: u64,
    pub boxes: usize,
    pub pairs_checked: u64,
    pub overlaps: u64,
    pub first_overlap: Option<(u64, u64)>,
    /// log10 of the image diameter at each generation landing.
    pub diameters_log10: Vec<(usize, f64)>,
    pub diameters_decreasing: bool,
    pub samples: usize,
    pub pass: bool,
}

struct ImageBox {
    time: u64,
    reference: [Fixed; 3],
    lo: [Ext; 3],
    hi: [Ext; 3],
}

fn box_pair_disjoint(a: &ImageBox, b: &ImageBox) -> bool {
    (0..3).any(|c| {
        let diff = b.reference[c].sub(&a.reference[c]).to_ext();
        a.hi[c] < diff + b.lo[c] || diff + b.hi[c] < a.lo[c]
    })
}

fn interior_unit_samples(n: usize) -> Vec<(f64, f64, f64)> {
    (0..n)
        .map(|i| {
            let t = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
            let th = 2.399963 * i as f64;
            let r = ((i as f64 + 0.5) / n as f64).sqrt();
            (t, r * th.cos(), r * th.sin())
        })
        .collect()
}

fn image_boxes(
    p: &ModelParams,
    field: &PerturbationField,
    s: &CodeSchedule,
    k_first: usize,
    gens: usize,
    offs0: Vec<Offset>,
) -> Result<(Vec<ImageBox>, Vec<(usize, f64)>), crate::perturbation::PerturbationError> {
    let mut boxes = Vec::new();
    let mut diams = Vec::new();
    let mut offs = offs0;
    let t0 = s.start(k_first);
    let n_max = (k_first..k_first + gens).map(|k| s.n_hat(k)).max().unwrap_or(0);
    let prec = ((n_max as f64 * p.lambda_u.log2()) as u32 + 256).div_ceil(64) * 64;
    for k in k_first..k_first + gens {
        let fr = frame(p, s, &field.orbit, k);
        let n = fr.n_hat();
        let word = &fr.word;
        let mut xs = vec![Fixed::half(prec); n + 1];
        for j in (0..n).rev() {
            xs[j] = x_map_inv_hp(p, word[j], &xs[j + 1]);
        }
        let mut y = Fixed::from_f64(fr.refs[0].y, prec, Round::Nearest);
        let mut z = Fixed::half(prec);
        for j in 0..=n {
            let mut lo = [Ext::ZERO; 3];
            let mut hi = [Ext::ZERO; 3];
            for (i, d0) in offs.iter().enumerate() {
                let o = fr.offset_at(j, d0);
                let v = [o.x, o.y, o.z];
                for c in 0..3 {
                    if i == 0 || v[c] < lo[c] {
                        lo[c] = v[c];
                    }
                    if i == 0 || v[c] > hi[c] {
                        hi[c] = v[c];
                    }
                }
            }
            if j == 0 {
                let diag = Offset::new(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]).norm();
                diams.push((k, diag.log10()));
            }
            boxes.push(ImageBox { time: s.start(k) - t0 + j as u64, reference: [xs[j].clone(), y.clone(), z.clone()], lo, hi });
            if j < n {
                y = y_map_hp(p, word[j], &y);
                z = zeta_hp(p, word[j], &z);
            }
        }
        let lin = generation_linear(p, s.hat(k));
        offs = offs.iter().map(|d| push_generation(p, field, k, &lin, d)).collect::<Result<_, _>>()?;
    }
    Ok((boxes, diams))
}

/// Bounding boxes of sampled images `g^i(D)` over `gens` generations from
/// `D_{k_first}`, tested pairwise; an overlap triggers one refinement with
/// four times the samples before it counts.
pub fn verify_wandering(
    p: &ModelParams,
    field: &PerturbationField,
    s: &CodeSchedule,
    d: &CylinderDomain,
    gens: usize,
    grid: SampleGrid,
) -> WanderingReport {
    let mut grid = grid;
    let mut result = None;
    for _ in 0..2 {
        let mut units: Vec<(f64, f64, f64)> = boundary_unit_samples(grid).into_iter().map(|(t, a, b, _)| (t, a, b)).collect();
        units.extend(interior_unit_samples(64));
        let offs: Vec<Offset> = units.iter().map(|&u| unit_to_offset(d, u)).collect();
        let n_samples = offs.len();
        let (boxes, diams) = match image_boxes(p, field, s, d.k, gens, offs) {
            Ok(b) => b,
            Err(_) => {
                return WanderingReport {
                    k_first: d.k,
                    generations: gens,
                    horizon: 0,
                    boxes: 0,
                    pairs_checked: 0,
                    overlaps: 0,
                    first_overlap: None,
                    diameters_log10: vec![],
                    diameters_decreasing: false,
                    samples: n_samples,
                    pass: false,
                }
            }
        };
        let overlaps: Vec<(u64, u64)> = (0..boxes.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let boxes = &boxes;
                (i + 1..boxes.len()).filter(move |&j| !box_pair_disjoint(&boxes[i], &boxes[j])).map(move |j| (boxes[i].time, boxes[j].time))
            })
            .collect();
        let n = boxes.len() as u64;
        let decreasing = diams.windows(2).all(|w| w[1].1 < w[0].1);
        let rep = WanderingReport {
            k_first: d.k,
            generations: gens,
            horizon: boxes.last().map_or(0, |b| b.time),
            boxes: boxes.len(),
            pairs_checked: n * (n - 1) / 2,
            overlaps: overlaps.len() as u64,
            first_overlap: overlaps.iter().min().copied(),
            diameters_log10: diams,
            diameters_decreasing: decreasing,
            samples: n_samples,
            pass: overlaps.is_empty() && decreasing,
        };
        let done = rep.overlaps == 0;
        result = Some(rep);
        if done {
            break;
        }
        grid = grid.doubled().doubled();
    }
    result.unwrap()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub k: usize,
    pub codes: usize,
    /// `min dist(D_k, Lambda points) / rho_k`, as log10.
    pub log10_min_ratio: f64,
    pub pass: bool,
}

/// Distance from `D_k` to decoded points of the horseshoe: half of the
/// codes are random, the other half follow the hat word `w_k` first.
pub fn lambda_separation<R: Rng>(p: &ModelParams, s: &CodeSchedule, d: &CylinderDomain, n_codes: usize, rng: &mut R) -> SeparationRow {
    let hat = s.hat(d.k).word();
    let depth = hat.len() + 40;
    let prec = ((depth as f64 * p.lambda_u.log2()) as u32 + 128).div_ceil(64) * 64;
    let cx = section_x_hp(p, &hat, prec);
    let mut best: Option<Ext> = None;
    for i in 0..n_codes {
        let rand_word = |rng: &mut R, n: usize| -> Word { (0..n).map(|_| rng.gen_range(0..2u8)).collect() };
        let mut forward = if i % 2 == 1 { hat.clone() } else { Vec::new() };
        let fill = depth - forward.len();
        forward.extend(rand_word(rng, fill));
        let code = BiCode { backward: rand_word(rng, depth), forward };
        let pt = decode_hp(p, &code, depth, prec).expect("code has full depth");
        let dx = pt.x.sub(&cx).to_ext().abs() - d.xi.scale(0.5);
        let dy = pt.y.to_f64() - d.center.y;
        let dz = pt.z.to_f64() - d.center.z;
        let dyz = Ext::from_f64((dy * dy + dz * dz).sqrt()) - d.rho;
        let gx = if dx.signum() > 0.0 { dx } else { Ext::ZERO };
        let gyz = if dyz.signum() > 0.0 { dyz } else { Ext::ZERO };
        let dist = (gx * gx + gyz * gyz).sqrt();
        best = Some(best.map_or(dist, |b| b.min(dist)));
    }
    let ratio = best.unwrap_or(Ext::ZERO) / d.rho;
    SeparationRow {
        k: d.k,
        codes: n_codes,
        log10_min_ratio: if ratio.is_zero() { f64::NEG_INFINITY } else { ratio.log10() },
        pass: ratio > Ext::from_f64(0.5),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub k: usize,
    pub step: f64,
    pub kappa: f64,
    pub kappa_formula: f64,
    pub normal: [f64; 3],
    pub kappa_ok: bool,
    pub normal_ok: bool,
}

fn cross(a: [Ext; 3], b: [Ext; 3]) -> [Ext; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm3(a: [Ext; 3]) -> Ext {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Curvature and principal normal of `g^{n_hat_k+2}(J_k)` at the fold
/// vertex, by central differences in the image parameter `t = x - 1/2` on `H`.
pub fn curvature_check(p: &ModelParams, field: &PerturbationField, s: &CodeSchedule, k: usize) -> CurvatureReport {
    let lin = generation_linear(p, s.hat(k));
    let d = field.cube(k).map_or(Ext::ZERO, |c| c.half_width);
    let h = Ext::from_f64(1e-5).min(d.scale(1.0 / 16.0));
    let at = |t: f64| -> [Ext; 3] {
        let o =
            push_generation(p, field, k, &lin, &Offset::new(h.scale(t) / lin[0], Ext::ZERO, Ext::ZERO)).expect("axis stays in the cube");
        [o.x, o.y, o.z]
    };
    let (m, z, q) = (at(-1.0), at(0.0), at(1.0));
    let two_h = h.scale(2.0);
    let hh = h * h;
    let d1: [Ext; 3] = std::array::from_fn(|c| (q[c] - m[c]) / two_h);
    let d2: [Ext; 3] = std::array::from_fn(|c| (q[c] - z[c].scale(2.0) + m[c]) / hh);
    let speed = norm3(d1);
    let kappa = (norm3(cross(d1, d2)) / (speed * speed * speed)).to_f64();
    let tdot = (0..3).fold(Ext::ZERO, |acc, c| acc + d2[c] * d1[c]) / (speed * speed);
    let perp: [Ext; 3] = std::array::from_fn(|c| d2[c] - tdot * d1[c]);
    let pn = norm3(perp);
    let normal: [f64; 3] = std::array::from_fn(|c| (perp[c] / pn).to_f64());
    let kappa_formula = 2.0 * p.a1 * p.a4.abs() / (p.a4 * p.a4).powf(1.5);
    let dn = ((normal[0] + 1.0).powi(2) + normal[1].powi(2) + normal[2].powi(2)).sqrt();
    CurvatureReport {
        k,
        step: h.to_f64(),
        kappa,
        kappa_formula,
        normal,
        kappa_ok: (kappa - kappa_formula).abs() < 1e-4,
        normal_ok: dn < 1e-3,
    }
}
