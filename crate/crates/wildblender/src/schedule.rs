//! Quadratic code schedules: the hat words of consecutive generations laid
//! end to end, each followed by the two fold indices.
//!
//! Time is counted from the start of the first hat word. Generation `k`
//! starts at `T_k = sum_{i<k} (n_hat_i + 2)` and its free word occupies
//! `[alpha_k, alpha_k + k^2)` with `alpha_k = T_k + n0 + L k`.

use crate::bridges::{bridge_chain, build_hatword, connector_consts, select_b0, BridgeChain, BridgeError, ConnectorConsts, HatWord};
use crate::coding::{CodeInterval, FreeWords, Word};
use crate::model::ModelParams;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How many generations to try when looking for `k_start`.
const K_SEARCH: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeSchedule {
    pub n0: usize,
    pub l: usize,
    pub b0: Word,
    pub k_start: usize,
    pub tie: u8,
    pub connector: ConnectorConsts,
    pub free: FreeWords,
    pub hatwords: Vec<HatWord>,
    #[serde(skip)]
    starts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub k: usize,
    pub start: u64,
    pub alpha: u64,
    pub beta: u64,
    pub n_hat: usize,
    pub iota: usize,
    pub m: usize,
}

/// Build hat words for `k_start..=k_max`, where `k_start` is the first
/// generation whose hat word passes verification.
pub fn gen_quadratic_schedule(p: &ModelParams, free: &FreeWords, k_max: usize, tie: u8) -> Result<CodeSchedule, BridgeError> {
    let (n0, b0) = select_b0(p)?;
    let connector = connector_consts(p)?;
    let chain = bridge_chain(p, n0, &b0, k_max + 1);
    let mut k_start = None;
    let mut last_err = None;
    for k in 1..=K_SEARCH.min(k_max) {
        match build_hatword(p, &chain, k, &free.word(k), tie) {
            Ok(_) => {
                k_start = Some(k);
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let k_start = match (k_start, last_err) {
        (Some(k), _) => k,
        (None, Some(e)) => return Err(e),
        (None, None) => return Err(BridgeError::Verification { k: k_max, stage: "empty range" }),
    };
    let hatwords = build_range(p, &chain, free, k_start, k_max, tie)?;
    let mut s = CodeSchedule { n0, l: p.l, b0, k_start, tie, connector, free: free.clone(), hatwords, starts: vec![] };
    s.index();
    Ok(s)
}

fn build_range(p: &ModelParams, chain: &BridgeChain, free: &FreeWords, lo: usize, hi: usize, tie: u8) -> Result<Vec<HatWord>, BridgeError> {
    (lo..=hi).into_par_iter().map(|k| build_hatword(p, chain, k, &free.word(k), tie)).collect()
}

impl CodeSchedule {
    fn index(&mut self) {
        let mut t = 0u64;
        self.starts = Vec::with_capacity(self.hatwords.len() + 1);
        for h in &self.hatwords {
            self.starts.push(t);
            t += h.n_hat as u64 + 2;
        }
        self.starts.push(t);
    }

    /// Rebuild the time index after deserialization.
    pub fn reindex(&mut self) {
        self.index();
    }

    /// Append generations up to `k_max` (used for the tail of the domain sizes).
    pub fn extend(&mut self, p: &ModelParams, k_max: usize) -> Result<(), BridgeError> {
        if k_max <= self.k_max() {
            return Ok(());
        }
        let chain = bridge_chain(p, self.n0, &self.b0, k_max + 1);
        let more = build_range(p, &chain, &self.free, self.k_max() + 1, k_max, self.tie)?;
        self.hatwords.extend(more);
        self.index();
        Ok(())
    }

    pub fn k_max(&self) -> usize {
        self.k_start + self.hatwords.len() - 1
    }

    pub fn hat(&self, k: usize) -> &HatWord {
        &self.hatwords[k - self.k_start]
    }

    pub fn n_hat(&self, k: usize) -> usize {
        self.hat(k).n_hat
    }

    /// Start time `T_k` of generation `k`.
    pub fn start(&self, k: usize) -> u64 {
        self.starts[k - self.k_start]
    }

    /// End of the stream covered by the schedule.
    pub fn end(&self) -> u64 {
        *self.starts.last().unwrap()
    }

    pub fn alpha(&self, k: usize) -> u64 {
        self.start(k) + (self.n0 + self.l * k) as u64
    }

    pub fn beta(&self, k: usize) -> u64 {
        (k * k) as u64
    }

    /// Generation and offset within it of global time `t`.
    pub fn locate(&self, t: u64) -> Option<(usize, usize)> {
        if t >= self.end() {
            return None;
        }
        let i = self.starts.partition_point(|&s| s <= t) - 1;
        Some((self.k_start + i, (t - self.starts[i]) as usize))
    }

    /// Scheduled code on `[start(k_from), start(k_to + 1))`; fold indices
    /// read `00`.
    pub fn code(&self, k_from: usize, k_to: usize) -> Word {
        let mut v = Vec::new();
        for k in k_from..=k_to {
            v.extend(self.hat(k).word());
            v.extend([0, 0]);
        }
        v
    }

    /// Encoded intervals `[alpha_k, alpha_k + beta_k]`.
    pub fn intervals(&self) -> Vec<CodeInterval> {
        (self.k_start..=self.k_max()).map(|k| CodeInterval { start: self.alpha(k), end: Some(self.alpha(k) + self.beta(k)) }).collect()
    }

    /// Largest `k` with `alpha_k + beta_k <= n_max`.
    pub fn k_for_horizon(&self, n_max: u64) -> Option<usize> {
        (self.k_start..=self.k_max()).rev().find(|&k| self.alpha(k) + self.beta(k) <= n_max)
    }

    pub fn rows(&self) -> Vec<ScheduleRow> {
        (self.k_start..=self.k_max())
            .map(|k| {
                let h = self.hat(k);
                ScheduleRow {
                    k,
                    start: self.start(k),
                    alpha: self.alpha(k),
                    beta: self.beta(k),
                    n_hat: h.n_hat,
                    iota: h.connector.len(),
                    m: h.m(),
                }
            })
            .collect()
    }
}

/// Forward code of a schedule built from `FreeWords::CodePairZ`, and the same
/// code with every free block complemented.
pub fn gen_code_pair(s: &CodeSchedule) -> (Word, Word) {
    let z = s.code(s.k_start, s.k_max());
    let mut x = z.clone();
    for k in s.k_start..=s.k_max() {
        let a = s.alpha(k) as usize;
        for b in &mut x[a..a + k * k] {
            *b = 1 - *b;
        }
    }
    (z, x)
}

/// Least-squares polynomial fit of degree `deg`; coefficients lowest first.
pub fn polyfit(xs: &[f64], ys: &[f64], deg: usize) -> Vec<f64> {
    let n = deg + 1;
    let mut a = vec![vec![0.0; n + 1]; n];
    for (&x, &y) in xs.iter().zip(ys) {
        let pw: Vec<f64> = (0..=2 * deg).map(|i| x.powi(i as i32)).collect();
        for r in 0..n {
            for c in 0..n {
                a[r][c] += pw[r + c];
            }
            a[r][n] += pw[r] * y;
        }
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}
