//! Binary itineraries, the coding map and its inverse, the majority
//! statistic, and the free-word generators used by the scenarios.

use crate::fixed::Fixed;
use crate::model::{
    classify, classify_hp, preimage_branch, step, step_hp, step_inverse_hp, x_map_inv, x_map_inv_hp, y_map, y_map_hp, zeta, zeta_hp,
    HpPoint, ModelParams, Point, Region,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Word = Vec<u8>;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CodingError {
    #[error("orbit escaped after {} symbols", partial.len())]
    Escaped { partial: Word },
    #[error("code has {have} symbols on one side, {need} requested")]
    InsufficientDepth { have: usize, need: usize },
    #[error("era condition fails at s = {0}")]
    EraConditionViolated(usize),
    #[error("bad code text: {0}")]
    Parse(String),
}

pub fn word_string(w: &[u8]) -> String {
    w.iter().map(|&b| if b == 0 { '0' } else { '1' }).collect()
}

pub fn parse_word(s: &str) -> Result<Word, CodingError> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            _ => Err(CodingError::Parse(format!("unexpected '{c}'"))),
        })
        .collect()
}

/// Run-length text such as `0^12 1^4 0^7`.
pub fn rle_encode(w: &[u8]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < w.len() {
        let j = w[i..].iter().position(|&b| b != w[i]).map_or(w.len(), |d| i + d);
        parts.push(format!("{}^{}", w[i], j - i));
        i = j;
    }
    parts.join(" ")
}

pub fn rle_decode(s: &str) -> Result<Word, CodingError> {
    let mut out = Vec::new();
    for tok in s.split_whitespace() {
        let (sym, count) = tok.split_once('^').ok_or_else(|| CodingError::Parse(tok.into()))?;
        let b = match sym {
            "0" => 0,
            "1" => 1,
            _ => return Err(CodingError::Parse(tok.into())),
        };
        let n: usize = count.parse().map_err(|_| CodingError::Parse(tok.into()))?;
        out.extend(std::iter::repeat_n(b, n));
    }
    Ok(out)
}

/// Two-sided code: `backward[i]` is `v_{-1-i}`, `forward[j]` is `v_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiCode {
    pub backward: Word,
    pub forward: Word,
}

impl BiCode {
    pub fn constant(b: u8, len: usize) -> BiCode {
        BiCode { backward: vec![b; len], forward: vec![b; len] }
    }
}

/// Upper bound for the distance between the depth-limited decode and the
/// coded point.
pub fn decode_radius(p: &ModelParams, depth: usize) -> f64 {
    let r = (1.0 / p.lambda_u).max(p.lambda_cs1).max(p.lambda_ss);
    r.powi(depth as i32) * (1.0 + 2.0 * p.eps0)
}

fn check_depth(code: &BiCode, depth: usize) -> Result<(), CodingError> {
    let have = code.forward.len().min(code.backward.len());
    if have < depth {
        Err(CodingError::InsufficientDepth { have, need: depth })
    } else {
        Ok(())
    }
}

/// Point of the horseshoe with the given code: x by nested inverse branches
/// of the forward word, y and z by contracting along the backward word.
pub fn decode(p: &ModelParams, code: &BiCode, depth: usize) -> Result<(Point, f64), CodingError> {
    check_depth(code, depth)?;
    let x = code.forward[..depth].iter().rev().fold(0.5, |x, &b| x_map_inv(p, b, x));
    let (mut y, mut z) = (0.5, 0.5);
    for &b in code.backward[..depth].iter().rev() {
        y = y_map(p, b, y);
        z = zeta(p, b, z);
    }
    Ok((Point::new(x, y, z), decode_radius(p, depth)))
}

pub fn decode_hp(p: &ModelParams, code: &BiCode, depth: usize, prec: u32) -> Result<HpPoint, CodingError> {
    check_depth(code, depth)?;
    let half = Fixed::half(prec);
    let x = code.forward[..depth].iter().rev().fold(half.clone(), |x, &b| x_map_inv_hp(p, b, &x));
    let (mut y, mut z) = (half.clone(), half);
    for &b in code.backward[..depth].iter().rev() {
        y = y_map_hp(p, b, &y);
        z = zeta_hp(p, b, &z);
    }
    Ok(HpPoint { x, y, z })
}

/// Symbols of the V-block visited at each landing index; fold indices carry
/// no symbol.
pub fn itinerary(p: &ModelParams, pt: &Point, n_symbols: usize) -> Result<Word, CodingError> {
    let mut out = Vec::with_capacity(n_symbols);
    let mut cur = *pt;
    while out.len() < n_symbols {
        let region = classify(p, &cur);
        if let Some(b) = region.symbol() {
            out.push(b);
        }
        match step(p, &cur) {
            Ok(r) => cur = r.point,
            Err(_) => return Err(CodingError::Escaped { partial: out }),
        }
    }
    Ok(out)
}

/// Forward symbols `v_0..v_{n_fwd-1}` and backward symbols
/// `v_{-1}..v_{-n_bwd}` of a high-precision point of the horseshoe.
pub fn itinerary_hp(p: &ModelParams, pt: &HpPoint, n_fwd: usize, n_bwd: usize) -> Result<(Word, Word), CodingError> {
    let mut fwd = Vec::with_capacity(n_fwd);
    let mut cur = pt.clone();
    while fwd.len() < n_fwd {
        match classify_hp(p, &cur).symbol() {
            Some(b) => fwd.push(b),
            None => return Err(CodingError::Escaped { partial: fwd }),
        }
        cur = step_hp(p, &cur).map_err(|_| CodingError::Escaped { partial: fwd.clone() })?.0;
    }
    let mut bwd = Vec::with_capacity(n_bwd);
    let mut cur = pt.clone();
    while bwd.len() < n_bwd {
        let b = match preimage_branch(p, &cur.to_point()) {
            Region::V0 => 0,
            Region::V1 => 1,
            _ => return Err(CodingError::Escaped { partial: bwd }),
        };
        bwd.push(b);
        cur = step_inverse_hp(p, &cur, b);
    }
    Ok((fwd, bwd))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajorityStats {
    pub n: usize,
    pub window: usize,
    pub zeros_in_window: usize,
    pub p_n: f64,
}

/// Zero density over `j in (n - (3n)^{2/3}, n]`, divided by the real
/// window length `(3n)^{2/3}`; `v[j]` is `v_j`.
pub fn majority_p(v: &[u8], n: usize) -> MajorityStats {
    assert!(n >= 1);
    let w = (3.0 * n as f64).cbrt().powi(2);
    let lo = (n as f64 - w).floor() as i64 + 1;
    let lo = lo.max(0) as usize;
    let hi = n.min(v.len().saturating_sub(1));
    let zeros = if lo > hi { 0 } else { v[lo..=hi].iter().filter(|&&b| b == 0).count() };
    MajorityStats { n, window: w.ceil() as usize, zeros_in_window: zeros, p_n: zeros as f64 / w }
}

/// Geometric checkpoint grid `start, start*ratio, ...` (rounded, deduplicated)
/// ending with `end`.
pub fn checkpoint_grid(start: usize, end: usize, ratio: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut x = start as f64;
    while (x.round() as usize) < end {
        let n = x.round() as usize;
        if out.last() != Some(&n) {
            out.push(n);
        }
        x *= ratio;
    }
    out.push(end);
    out
}

/// Running minimum of `p_n` over the checkpoint grid.
pub fn majority_liminf(v: &[u8], n_min: usize, n_max: usize, ratio: f64) -> (f64, Vec<(usize, f64)>) {
    let mut series = Vec::new();
    let mut run = f64::INFINITY;
    for n in checkpoint_grid(n_min, n_max, ratio) {
        run = run.min(majority_p(v, n).p_n);
        series.push((n, run));
    }
    (run, series)
}

/// Source of the free words `u_k`, each of length `k^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FreeWords {
    Dirac,
    AllOnes,
    /// Era starts `k_2 < k_3 < ...`; era `s` covers `k_s..k_{s+1}`.
    Historic {
        eras: Vec<usize>,
    },
    CodePairZ,
    CodePairX,
    Explicit {
        words: Vec<Word>,
    },
}

impl FreeWords {
    pub fn word(&self, k: usize) -> Word {
        let n = k * k;
        match self {
            FreeWords::Dirac => vec![0; n],
            FreeWords::AllOnes => vec![1; n],
            FreeWords::Historic { eras } => {
                let zeros = if era_of(eras, k).is_multiple_of(2) { 3 * n / 4 } else { 7 * n / 8 };
                block(zeros, n - zeros, 0)
            }
            FreeWords::CodePairZ => block(n / 2, n - n / 2, 0),
            FreeWords::CodePairX => block(n / 2, n - n / 2, 1),
            FreeWords::Explicit { words } => words[k - 1].clone(),
        }
    }
}

fn block(first: usize, second: usize, first_sym: u8) -> Word {
    let mut w = vec![first_sym; first];
    w.extend(std::iter::repeat_n(1 - first_sym, second));
    w
}

pub fn gen_dirac_code() -> FreeWords {
    FreeWords::Dirac
}

/// Era index `s` of generation `k`; generations before `k_2` use era 2.
pub fn era_of(eras: &[usize], k: usize) -> usize {
    let idx = eras.iter().rposition(|&ks| ks <= k).unwrap_or(0);
    idx + 2
}

fn sum_sq(a: usize, b: usize) -> u128 {
    (a..b).map(|k| (k * k) as u128).sum()
}

/// Smallest admissible era starts, greedily, covering generations up to `k_max`.
pub fn default_era_seq(k2: usize, k_max: usize) -> Vec<usize> {
    let mut eras = vec![k2];
    while *eras.last().unwrap() <= k_max {
        let s = eras.len() + 1;
        let ks = *eras.last().unwrap();
        let past = sum_sq(k2, ks);
        let mut next = ks + 1;
        while sum_sq(ks, next) <= s as u128 * past {
            next += 1;
        }
        eras.push(next);
    }
    eras
}

/// Era-coded free words after checking the era dominance condition.
pub fn gen_historic_code(eras: Vec<usize>) -> Result<FreeWords, CodingError> {
    for i in 0..eras.len().saturating_sub(1) {
        let s = i + 2;
        if eras[i + 1] <= eras[i] || sum_sq(eras[i], eras[i + 1]) <= s as u128 * sum_sq(eras[0], eras[i]) {
            return Err(CodingError::EraConditionViolated(s));
        }
    }
    Ok(FreeWords::Historic { eras })
}

/// Integer interval `[start, end]`; `end = None` means unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeInterval {
    pub start: u64,
    pub end: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedIntervals {
    pub intervals: Vec<(u64, u64)>,
    /// Fraction of `[0, horizon)` inside intervals with `end - start >= l_min`.
    pub long_fraction: f64,
}

/// Merge intervals separated by a gap of one index and split an unbounded
/// last interval into `[a, a+2]`, `[a+2^{i+1}, a+2^{i+2}-2]` (`i >= 1`), up to
/// `horizon`.
pub fn normalize_intervals(input: &[CodeInterval], l_min: u64, horizon: u64) -> NormalizedIntervals {
    let mut sorted = input.to_vec();
    sorted.sort_by_key(|iv| iv.start);
    let mut merged: Vec<CodeInterval> = Vec::new();
    for iv in sorted {
        if let Some(last) = merged.last_mut() {
            if let Some(e) = last.end {
                if iv.start <= e + 1 {
                    last.end = iv.end.map(|e2| e.max(e2));
                    continue;
                }
            } else {
                continue;
            }
        }
        merged.push(iv);
    }
    let mut out = Vec::new();
    for iv in merged {
        match iv.end {
            Some(e) => out.push((iv.start, e)),
            None => {
                let a = iv.start;
                out.push((a, a + 2));
                let mut i = 1u32;
                while i < 62 && a + (1u64 << (i + 1)) < horizon {
                    out.push((a + (1u64 << (i + 1)), a + (1u64 << (i + 2)) - 2));
                    i += 1;
                }
            }
        }
    }
    let mut covered = 0u64;
    for &(s, e) in &out {
        if e - s >= l_min && s < horizon {
            covered += e.min(horizon - 1) - s + 1;
        }
    }
    let long_fraction = if horizon == 0 { 0.0 } else { covered as f64 / horizon as f64 };
    NormalizedIntervals { intervals: out, long_fraction }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_round_trip() {
        let w = parse_word("000011100").unwrap();
        assert_eq!(rle_encode(&w), "0^4 1^3 0^2");
        assert_eq!(rle_decode("0^4 1^3 0^2").unwrap(), w);
        assert_eq!(rle_encode(&[]), "");
    }

    #[test]
    fn decode_fixed_points() {
        let p = ModelParams::default();
        let (pt, r) = decode(&p, &BiCode::constant(0, 40), 40).unwrap();
        assert!(pt.dist(&p.fixed_p()) <= r);
        let (q, r) = decode(&p, &BiCode::constant(1, 200), 200).unwrap();
        assert!(q.dist(&p.fixed_q()) <= r + 1e-15);
        assert!(matches!(decode(&p, &BiCode::constant(0, 5), 6), Err(CodingError::InsufficientDepth { .. })));
    }

    #[test]
    fn itinerary_of_fixed_points() {
        let p = ModelParams::default();
        assert_eq!(itinerary(&p, &p.fixed_p(), 5).unwrap(), vec![0; 5]);
        assert_eq!(itinerary(&p, &p.fixed_q(), 5).unwrap(), vec![1; 5]);
    }

    #[test]
    fn alternating_round_trip() {
        let p = ModelParams::default();
        let alt: Word = (0..40).map(|i| (i % 2) as u8).collect();
        let code = BiCode { backward: alt.iter().map(|b| 1 - b).collect(), forward: alt.clone() };
        let (pt, _) = decode(&p, &code, 30).unwrap();
        assert_eq!(word_string(&itinerary(&p, &pt, 10).unwrap()), "0101010101");
    }

    #[test]
    fn majority_window_example() {
        // v_1..v_9 = 010101010, v_0 is outside the window (0, 9]
        let v = vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let m = majority_p(&v, 9);
        assert_eq!(m.zeros_in_window, 5);
        assert!((m.p_n - 5.0 / 9.0).abs() < 1e-15);
        // all zeros: the count is the number of integers in (50 - w, 50]
        let w = 150f64.cbrt().powi(2);
        let m = majority_p(&[0; 100], 50);
        assert_eq!(m.zeros_in_window, 29);
        assert!((m.p_n - 29.0 / w).abs() < 1e-15);
    }

    #[test]
    fn generators() {
        assert_eq!(gen_dirac_code().word(2), vec![0, 0, 0, 0]);
        assert_eq!(gen_dirac_code().word(1), vec![0]);
        let eras = default_era_seq(2, 40);
        assert_eq!(&eras[..3], &[2, 3, 5]);
        let h = gen_historic_code(eras).unwrap();
        assert_eq!(word_string(&h.word(2)), "0001");
        let w4 = h.word(4);
        assert_eq!(w4.iter().filter(|&&b| b == 0).count(), 14);
        assert_eq!(w4.len(), 16);
        assert_eq!(word_string(&FreeWords::CodePairZ.word(3)), "000011111");
        assert_eq!(word_string(&FreeWords::CodePairX.word(3)), "111100000");
        assert!(gen_historic_code(vec![2, 3, 4]).is_err());
    }

    #[test]
    fn normalize_cases() {
        let ok = [CodeInterval { start: 0, end: Some(3) }, CodeInterval { start: 6, end: Some(9) }];
        let n = normalize_intervals(&ok, 1, 10);
        assert_eq!(n.intervals, vec![(0, 3), (6, 9)]);
        let gap1 = [CodeInterval { start: 0, end: Some(3) }, CodeInterval { start: 4, end: Some(9) }];
        assert_eq!(normalize_intervals(&gap1, 1, 10).intervals, vec![(0, 9)]);
        let inf = [CodeInterval { start: 10, end: None }];
        let n = normalize_intervals(&inf, 1, 100);
        assert_eq!(&n.intervals[..4], &[(10, 12), (14, 16), (18, 24), (26, 40)]);
    }
}
