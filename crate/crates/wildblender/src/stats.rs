//! Birkhoff averages, describability counts and the orbit-tracking engine
//! behind the Dirac, historic and code-pair experiments.

use crate::coding::{CodeInterval, Word};
use crate::model::{step, x_map_inv, y_map, zeta, ModelParams, Point};
use crate::perturbation::{frame, generation_linear, push_generation, Offset, PerturbationError, PerturbationField};
use crate::schedule::CodeSchedule;
use crate::transport::w1;
use crate::wandering::CylinderDomain;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Test functions of the bounded-Lipschitz class: Lipschitz constant at
/// most 1 and values in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Observable {
    X,
    Y,
    Z,
    /// `min(dist(., center), 1)`.
    ClippedDist {
        center: Point,
    },
}

impl Observable {
    pub fn eval(&self, pt: &Point) -> f64 {
        match self {
            Observable::X => pt.x.clamp(-1.0, 1.0),
            Observable::Y => pt.y.clamp(-1.0, 1.0),
            Observable::Z => pt.z.clamp(-1.0, 1.0),
            Observable::ClippedDist { center } => pt.dist(center).min(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffSeries {
    pub checkpoints: Vec<u64>,
    pub averages: Vec<f64>,
    pub escaped: bool,
}

impl BirkhoffSeries {
    pub fn liminf(&self) -> f64 {
        self.averages.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn limsup(&self) -> f64 {
        self.averages.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Running averages of `phi` along the unperturbed orbit of `x0`; averages
/// are over landing indices, the fold's middle index carries no point.
pub fn birkhoff(p: &ModelParams, x0: &Point, phi: &Observable, n: u64, checkpoints: &[u64]) -> BirkhoffSeries {
    let mut sum = 0.0;
    let mut count = 0u64;
    let mut t = 0u64;
    let mut cur = *x0;
    let mut out = BirkhoffSeries { checkpoints: vec![], averages: vec![], escaped: false };
    let mut cps = checkpoints.iter().peekable();
    while t < n {
        sum += phi.eval(&cur);
        count += 1;
        let r = match step(p, &cur) {
            Ok(r) => r,
            Err(_) => {
                out.escaped = true;
                break;
            }
        };
        t += r.steps_consumed as u64;
        cur = r.point;
        while let Some(&&c) = cps.peek() {
            if c > t {
                break;
            }
            out.checkpoints.push(c);
            out.averages.push(sum / count as f64);
            cps.next();
        }
    }
    out
}

/// Exact `#{0 <= n < N : n in some [a, a+b]} / N`.
pub fn dei_fraction(intervals: &[CodeInterval], n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut iv: Vec<(u64, u64)> =
        intervals.iter().filter(|i| i.start < n).map(|i| (i.start, i.end.map_or(n - 1, |e| e.min(n - 1)))).collect();
    iv.sort();
    let mut covered = 0u64;
    let mut reach: Option<u64> = None;
    for (a, b) in iv {
        let lo = match reach {
            Some(r) if a <= r => r + 1,
            _ => a,
        };
        if b >= lo {
            covered += b - lo + 1;
        }
        reach = Some(reach.map_or(b, |r| r.max(b)));
    }
    covered as f64 / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoricReport {
    pub liminf: f64,
    pub limsup: f64,
    pub gap: f64,
    pub historic: bool,
}

/// Oscillation of a series over the last half of its checkpoints.
pub fn detect_historic(averages: &[f64], threshold: f64) -> HistoricReport {
    assert!(averages.len() >= 12, "need at least 12 checkpoints");
    let tail = &averages[averages.len() / 2..];
    let liminf = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let limsup = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    HistoricReport { liminf, limsup, gap: limsup - liminf, historic: limsup - liminf > threshold }
}

/// Stratified points of a cylinder in unit coordinates: axial strata times
/// radial strata, jittered inside each stratum.
pub fn stratified_samples<R: Rng>(n: usize, rng: &mut R) -> Vec<(f64, f64, f64)> {
    let na = (n as f64).sqrt().ceil() as usize;
    let nr = n.div_ceil(na);
    let mut out = Vec::with_capacity(n);
    'outer: for i in 0..na {
        for j in 0..nr {
            if out.len() == n {
                break 'outer;
            }
            let t = -1.0 + 2.0 * (i as f64 + rng.gen::<f64>()) / na as f64;
            let r = ((j as f64 + rng.gen::<f64>()) / nr as f64).sqrt();
            let th = std::f64::consts::TAU * rng.gen::<f64>();
            out.push((0.999 * t, 0.999 * r * th.cos(), 0.999 * r * th.sin()));
        }
    }
    out
}

pub fn domain_offsets(d: &CylinderDomain, units: &[(f64, f64, f64)]) -> Vec<Offset> {
    units.iter().map(|&(t, a, b)| Offset::new(d.xi.scale(0.5 * t), d.rho.scale(a), d.rho.scale(b))).collect()
}

/// Orbit of the horseshoe point coded by `code`: `x` by the backward pass
/// from the end of the word, `y` and `z` forward from `(1/2, 1/2)` pushed
/// through `pre`.
pub fn reference_orbit(p: &ModelParams, pre: &[u8], code: &[u8]) -> Vec<Point> {
    let n = code.len();
    let mut xs = vec![0.5; n + 1];
    for i in (0..n).rev() {
        xs[i] = x_map_inv(p, code[i], xs[i + 1]);
    }
    let (mut y, mut z) = (0.5, 0.5);
    for &b in pre {
        y = y_map(p, b, y);
        z = zeta(p, b, z);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(Point::new(xs[i], y, z));
        y = y_map(p, code[i], y);
        z = zeta(p, code[i], z);
    }
    out
}

/// Cell size of the histograms behind the multiscale transport bound.
const CELL_BITS: i32 = 8;
const DUAL_CENTRES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Default)]
struct MeasureAcc {
    count: u64,
    sum: [f64; 3],
    dual: [f64; 15],
    hist: HashMap<[i32; 3], u32>,
    first: Vec<Point>,
}

impl MeasureAcc {
    fn add(&mut self, pt: &Point, keep: usize) {
        self.count += 1;
        let c = [pt.x, pt.y, pt.z];
        for i in 0..3 {
            self.sum[i] += c[i];
            for (j, c0) in DUAL_CENTRES.iter().enumerate() {
                self.dual[i * 5 + j] += (c[i] - c0).clamp(-1.0, 1.0);
            }
        }
        let s = (1 << CELL_BITS) as f64;
        *self.hist.entry([(pt.x * s).floor() as i32, (pt.y * s).floor() as i32, (pt.z * s).floor() as i32]).or_insert(0) += 1;
        if self.first.len() < keep {
            self.first.push(*pt);
        }
    }

    fn mean(&self) -> [f64; 3] {
        let n = self.count as f64;
        [self.sum[0] / n, self.sum[1] / n, self.sum[2] / n]
    }
}

/// Lower bound on `d_W` from the clipped-coordinate test functions.
fn dual_bound(a: &MeasureAcc, b: &MeasureAcc) -> f64 {
    (0..15).map(|i| (a.dual[i] / a.count as f64 - b.dual[i] / b.count as f64).abs()).fold(0.0, f64::max)
}

/// Upper bound on `d_W` for two histograms: mass matched inside a dyadic
/// cell of side `h` moves at most `h sqrt 3`; whatever is left after the
/// coarsest level moves at most 2.
pub fn multiscale_bound(a: &HashMap<[i32; 3], u32>, na: u64, b: &HashMap<[i32; 3], u32>, nb: u64) -> f64 {
    let mut res: HashMap<[i32; 3], (f64, f64)> = HashMap::with_capacity(a.len() + b.len());
    for (k, &v) in a {
        res.entry(*k).or_default().0 += v as f64 / na as f64;
    }
    for (k, &v) in b {
        res.entry(*k).or_default().1 += v as f64 / nb as f64;
    }
    let mut total = 0.0;
    let mut side = 1.0 / (1 << CELL_BITS) as f64;
    for _ in 0..=CELL_BITS + 2 {
        let diam = (side * 3f64.sqrt()).min(2.0);
        let mut next: HashMap<[i32; 3], (f64, f64)> = HashMap::with_capacity(res.len() / 2 + 1);
        for (k, (x, y)) in res {
            let m = x.min(y);
            total += m * diam;
            let e = next.entry([k[0] >> 1, k[1] >> 1, k[2] >> 1]).or_default();
            e.0 += x - m;
            e.1 += y - m;
        }
        res = next;
        side *= 2.0;
    }
    let left: f64 = res.values().map(|(x, _)| x).sum();
    total + 2.0 * left
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    /// Steps since the start of `D`.
    pub t: u64,
    /// Orbit points summed so far.
    pub count: u64,
    /// Birkhoff averages of the coordinates, per sample.
    pub sample_means: Vec<[f64; 3]>,
    pub reference_mean: [f64; 3],
    /// `(1/n) sum_i max_y dist(g^i y, g^i x_g)`.
    pub avg_sup: f64,
    /// `(1/n) sum_i min_y dist(g^i y, g^i x_g)`.
    pub avg_min: f64,
    /// Per-sample upper bound on `d_W(delta^n_y, delta^n_{x_g})`.
    pub dw_upper: Vec<f64>,
    pub dw_lower: Vec<f64>,
    /// Exact per-sample `d_W` while the measures have at most 512 atoms.
    pub dw_exact: Option<Vec<f64>>,
}

impl TrackRow {
    pub fn sup_dw(&self) -> f64 {
        self.dw_upper.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcdFailure {
    pub t: u64,
    pub sample: usize,
    pub expected: u8,
    pub x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub k_first: usize,
    pub k_last: usize,
    pub horizon: u64,
    pub samples: usize,
    pub rows: Vec<TrackRow>,
    pub ocd_checked: u64,
    pub ocd_failures: Vec<OcdFailure>,
    pub ocd_failure_count: u64,
}

/// What to check for observable containment: on each `[start, end]` (times
/// relative to `D`), the sample's `x` must lie in the slack-widened
/// V-interval of `code[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OcdSpec {
    pub intervals: Vec<(u64, u64)>,
    pub code: Word,
}

pub struct TrackInput<'a> {
    pub p: &'a ModelParams,
    pub field: &'a PerturbationField,
    pub schedule: &'a CodeSchedule,
    pub domain: &'a CylinderDomain,
    pub samples: Vec<Offset>,
    /// Generations followed: `domain.k ..= k_last`.
    pub k_last: usize,
    /// Reference orbit indexed like the samples, at least up to the horizon.
    pub reference: &'a [Point],
    pub checkpoints: Vec<u64>,
    pub ocd: Option<OcdSpec>,
}

/// Follow every sample of `D` through generations `domain.k..=k_last` in the
/// local frames and accumulate the statistics at each checkpoint. The
/// middle index of every fold is skipped.
pub fn track(inp: &TrackInput) -> Result<TrackReport, PerturbationError> {
    let (p, s) = (inp.p, inp.schedule);
    let k0 = inp.domain.k;
    let t0 = s.start(k0);
    let horizon = s.start(inp.k_last) - t0 + s.n_hat(inp.k_last) as u64 + 1;
    assert!(inp.reference.len() as u64 >= horizon, "reference orbit too short");
    let ns = inp.samples.len();
    let keep = 512;
    let mut acc = vec![MeasureAcc::default(); ns];
    let mut racc = MeasureAcc::default();
    let (mut sum_sup, mut sum_min) = (0.0, 0.0);
    let mut coupling = vec![0.0; ns];
    let mut rows = Vec::new();
    let mut cps = inp.checkpoints.iter().cloned().filter(|&c| c <= horizon).peekable();
    let mut offs = inp.samples.clone();
    let mut ocd_iv = inp.ocd.as_ref().map(|o| o.intervals.iter().cloned().peekable());
    let (mut ocd_checked, mut ocd_fail) = (0u64, 0u64);
    let mut fails = Vec::new();
    let eps = p.eps;
    let vint = [p.v0_interval(), p.v1_interval()];
    let mut pts = vec![Point::new(0.0, 0.0, 0.0); ns];

    let snapshot = |t: u64, acc: &[MeasureAcc], racc: &MeasureAcc, sum_sup: f64, sum_min: f64, coupling: &[f64]| -> TrackRow {
        let n = racc.count as f64;
        let hist: Vec<(f64, f64)> =
            acc.par_iter().map(|a| (multiscale_bound(&a.hist, a.count, &racc.hist, racc.count), dual_bound(a, racc))).collect();
        let exact = (racc.count as usize <= keep).then(|| acc.par_iter().map(|a| w1(&a.first, &racc.first).value).collect());
        TrackRow {
            t,
            count: racc.count,
            sample_means: acc.iter().map(|a| a.mean()).collect(),
            reference_mean: racc.mean(),
            avg_sup: sum_sup / n,
            avg_min: sum_min / n,
            dw_upper: hist.iter().zip(coupling).map(|(h, c)| h.0.min(c / n)).collect(),
            dw_lower: hist.iter().map(|h| h.1).collect(),
            dw_exact: exact,
        }
    };

    for k in k0..=inp.k_last {
        let fr = frame(p, s, &inp.field.orbit, k);
        let base = s.start(k) - t0;
        let n = fr.n_hat();
        for j in 0..=n {
            let t = base + j as u64;
            // checkpoint c covers indices < c
            while let Some(&c) = cps.peek() {
                if c > t {
                    break;
                }
                rows.push(snapshot(c, &acc, &racc, sum_sup, sum_min, &coupling));
                cps.next();
            }
            let r = inp.reference[t as usize];
            let (mut dmax, mut dmin) = (0.0f64, f64::INFINITY);
            for (i, d0) in offs.iter().enumerate() {
                let o = fr.offset_at(j, d0);
                let q = &fr.refs[j];
                pts[i] = Point::new(q.x + o.x.to_f64(), q.y + o.y.to_f64(), q.z + o.z.to_f64());
                let d = pts[i].dist(&r);
                dmax = dmax.max(d);
                dmin = dmin.min(d);
                coupling[i] += d.min(2.0);
                acc[i].add(&pts[i], keep);
            }
            racc.add(&r, keep);
            sum_sup += dmax;
            sum_min += dmin;
            if let (Some(iv), Some(spec)) = (ocd_iv.as_mut(), inp.ocd.as_ref()) {
                while iv.peek().is_some_and(|&(_, e)| e < t) {
                    iv.next();
                }
                if iv.peek().is_some_and(|&(a, _)| a <= t) {
                    let b = spec.code[t as usize];
                    let (lo, hi) = vint[b as usize];
                    for (i, q) in pts.iter().enumerate() {
                        ocd_checked += 1;
                        if q.x < lo - eps || q.x > hi + eps {
                            ocd_fail += 1;
                            if fails.len() < 100 {
                                fails.push(OcdFailure { t, sample: i, expected: b, x: q.x });
                            }
                        }
                    }
                }
            }
        }
        if k < inp.k_last {
            let lin = generation_linear(p, s.hat(k));
            offs = offs.iter().map(|d| push_generation(p, inp.field, k, &lin, d)).collect::<Result<_, _>>()?;
        }
    }
    for c in cps {
        rows.push(snapshot(c, &acc, &racc, sum_sup, sum_min, &coupling));
    }
    Ok(TrackReport {
        k_first: k0,
        k_last: inp.k_last,
        horizon,
        samples: ns,
        rows,
        ocd_checked,
        ocd_failures: fails,
        ocd_failure_count: ocd_fail,
    })
}

/// Free-block intervals `[alpha_k, alpha_k + beta_k]` of generations
/// `k0..=k_last`, relative to `T_{k0}`, shifted by `shift`.
pub fn relative_intervals(s: &CodeSchedule, k0: usize, k_last: usize, shift: u64) -> Vec<(u64, u64)> {
    let t0 = s.start(k0);
    (k0..=k_last).map(|k| (s.alpha(k) - t0 + shift, s.alpha(k) + s.beta(k) - t0 + shift)).collect()
}

/// Mean over samples of one coordinate's Birkhoff averages.
pub fn sample_mean_series(rep: &TrackReport, coord: usize) -> Vec<f64> {
    rep.rows.iter().map(|r| r.sample_means.iter().map(|m| m[coord]).sum::<f64>() / r.sample_means.len() as f64).collect()
}

/// Largest deviation over samples of the final Birkhoff averages from `target`.
pub fn final_deviation(rep: &TrackReport, target: [f64; 3]) -> f64 {
    let last = rep.rows.last().expect("no checkpoints");
    last.sample_means.iter().flat_map(|m| (0..3).map(move |c| (m[c] - target[c]).abs())).fold(0.0, f64::max)
}

/// `code` delayed by `k` symbols, padded with zeros in front.
pub fn shift_code(code: &[u8], k: usize) -> Word {
    let mut v = vec![0; k];
    v.extend_from_slice(&code[..code.len().saturating_sub(k)]);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::checkpoint_grid;
    use crate::coding::FreeWords;
    use crate::perturbation::{build_field, build_pseudo_orbit, Mollifier};
    use crate::schedule::gen_quadratic_schedule;
    use crate::wandering::{auto_sigma, build_domains, SampleGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn birkhoff_fixed_points() {
        let p = ModelParams::default();
        let cps: Vec<u64> = checkpoint_grid(10, 1000, 1.3).into_iter().map(|c| c as u64).collect();
        let s = birkhoff(&p, &p.fixed_p(), &Observable::X, 1000, &cps);
        assert!(s.averages.iter().all(|&a| a == 0.0) && !s.escaped);
        let s = birkhoff(&p, &p.fixed_q(), &Observable::Z, 1000, &cps);
        assert!(s.averages.iter().all(|&a| (a - 1.0).abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x0 = Point::new(rng.gen(), rng.gen(), rng.gen());
            let s = birkhoff(&p, &x0, &Observable::Y, 200, &cps);
            assert!(s.averages.iter().all(|a| (-1.0..=1.0).contains(a)));
        }
    }

    #[test]
    fn dei_counting_matches_bitmap() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(1..5000u64);
            let iv: Vec<CodeInterval> = (0..rng.gen_range(0..20))
                .map(|_| {
                    let a = rng.gen_range(0..n + 100);
                    CodeInterval { start: a, end: if rng.gen_bool(0.1) { None } else { Some(a + rng.gen_range(0..300)) } }
                })
                .collect();
            let mut bits = vec![false; n as usize];
            for i in &iv {
                let e = i.end.unwrap_or(u64::MAX).min(n - 1);
                for t in i.start..=e {
                    if t < n {
                        bits[t as usize] = true;
                    }
                }
            }
            let exact = bits.iter().filter(|&&b| b).count() as f64 / n as f64;
            assert_eq!(dei_fraction(&iv, n), exact);
        }
        assert_eq!(dei_fraction(&[], 100), 0.0);
    }

    #[test]
    fn historic_detector() {
        let flat = vec![0.3; 20];
        assert_eq!(detect_historic(&flat, 0.2).gap, 0.0);
        let osc: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 0.2 } else { 0.6 }).collect();
        assert!(detect_historic(&osc, 0.2).historic);
    }

    #[test]
    fn multiscale_bound_brackets_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a: Vec<Point> = (0..40).map(|_| Point::new(rng.gen(), rng.gen(), rng.gen())).collect();
            let b: Vec<Point> = (0..40).map(|_| Point::new(rng.gen::<f64>() * 0.5, rng.gen(), rng.gen())).collect();
            let (mut ha, mut hb) = (MeasureAcc::default(), MeasureAcc::default());
            a.iter().for_each(|q| ha.add(q, 0));
            b.iter().for_each(|q| hb.add(q, 0));
            let exact = w1(&a, &b).value;
            assert!(multiscale_bound(&ha.hist, 40, &hb.hist, 40) >= exact - 1e-12);
            assert!(dual_bound(&ha, &hb) <= exact + 1e-12);
        }
        let mut h = MeasureAcc::default();
        h.add(&Point::new(0.1, 0.2, 0.3), 0);
        assert!(multiscale_bound(&h.hist, 1, &h.hist, 1) <= 3f64.sqrt() / 256.0 + 1e-15);
    }

    #[test]
    fn short_dirac_track() {
        let p = ModelParams::default();
        let s = gen_quadratic_schedule(&p, &FreeWords::Dirac, 70, 1).unwrap();
        let o = build_pseudo_orbit(&p, &s, 24).unwrap();
        let f = build_field(&p, o, Mollifier::new(3)).unwrap();
        let (sz, nest) = auto_sigma(&p, &f, &s, f.n_start, 16, SampleGrid::default(), 1e-9, 6).unwrap();
        let d = build_domains(&p, &f, &s, &sz, nest.run_start, nest.run_start).unwrap()[0];
        let k_last = 24;
        let code = s.code(d.k, k_last);
        let pre = s.code(s.k_start, d.k - 1);
        let reference = reference_orbit(&p, &pre, &code);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let units = stratified_samples(20, &mut rng);
        let horizon = s.start(k_last) - s.start(d.k);
        let cps: Vec<u64> = checkpoint_grid(100, horizon as usize, 1.3).into_iter().map(|c| c as u64).collect();
        let iv = relative_intervals(&s, d.k, k_last, 0);
        let rep = track(&TrackInput {
            p: &p,
            field: &f,
            schedule: &s,
            domain: &d,
            samples: domain_offsets(&d, &units),
            k_last,
            reference: &reference,
            checkpoints: cps,
            ocd: Some(OcdSpec { intervals: iv, code: code.clone() }),
        })
        .unwrap();
        assert_eq!(rep.ocd_failure_count, 0);
        assert!(rep.ocd_checked > 0);
        for r in &rep.rows {
            for (i, &u) in r.dw_upper.iter().enumerate() {
                assert!(u <= r.avg_sup + 1e-12);
                assert!(r.dw_lower[i] <= u + 1e-12);
                if let Some(e) = &r.dw_exact {
                    assert!(e[i] <= u + 1e-9 && r.dw_lower[i] <= e[i] + 1e-9);
                }
            }
        }
        let last = rep.rows.last().unwrap();
        assert!(last.avg_sup < 0.2, "{}", last.avg_sup);
        let shifted = track(&TrackInput {
            p: &p,
            field: &f,
            schedule: &s,
            domain: &d,
            samples: domain_offsets(&d, &units),
            k_last,
            reference: &reference,
            checkpoints: vec![],
            ocd: Some(OcdSpec { intervals: relative_intervals(&s, d.k, k_last, 1), code: shift_code(&code, 1) }),
        })
        .unwrap();
        assert!(shifted.ocd_failure_count > 0);
    }
}
