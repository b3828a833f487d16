//! u-bridges, the z-connector, the backtracking back end and assembly of the
//! hat words `w^(n0+Lk) u_k iota_k gamma_k`.
//!
//! Deep bridges have widths far below `f64` resolution, so everything that
//! touches generation-`k` targets runs on [`FxInterval`]s.

use crate::coding::Word;
use crate::fixed::{Fixed, FxInterval, Round};
use crate::model::{zeta_apply, zeta_coeffs, ModelParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum BridgeError {
    #[error("no suitable bridge up to generation {0}")]
    NoBridge(usize),
    #[error("connector not found: {0}")]
    NoConnector(String),
    #[error("back end for generation {k} ends with {lo}..{hi}, which misses I(3eps)")]
    BackendContainment { k: usize, lo: f64, hi: f64 },
    #[error("hat word {k}: {stage} check failed")]
    Verification { k: usize, stage: &'static str },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UBridge {
    pub word: Word,
    pub lo: f64,
    pub hi: f64,
}

/// `B(w) = F_{w_1}^{-1} o ... o F_{w_n}^{-1}([0, 1])` in double precision.
pub fn u_bridge(p: &ModelParams, word: &[u8]) -> UBridge {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for &b in word.iter().rev() {
        let (a, c) = if b == 0 { (lo / p.lambda_u, hi / p.lambda_u) } else { (1.0 - hi / p.lambda_u, 1.0 - lo / p.lambda_u) };
        lo = a;
        hi = c;
    }
    UBridge { word: word.to_vec(), lo, hi }
}

/// The same bridge with outward-rounded fixed-point endpoints.
pub fn u_bridge_hp(p: &ModelParams, word: &[u8], prec: u32) -> FxInterval {
    let mut iv = FxInterval::from_f64(0.0, 1.0, prec);
    for &b in word.iter().rev() {
        iv = if b == 0 { iv.affine_inv(p.lambda_u, 0.0) } else { iv.affine_inv(-p.lambda_u, p.lambda_u) };
    }
    iv
}

/// x-window that the fold maps into bridges usable as targets.
pub fn b0_window(p: &ModelParams) -> (f64, f64) {
    let (a, b) = (p.mu + p.a2 * p.eps, p.mu + p.a2 * (1.0 - p.eps));
    (a.min(b), a.max(b))
}

/// Smallest generation with a bridge inside [`b0_window`]; ties go to the
/// bridge with the smallest left end. A fixed `p.n0` restricts the search
/// to that generation.
pub fn select_b0(p: &ModelParams) -> Result<(usize, Word), BridgeError> {
    const CAP: usize = 30;
    let (wlo, whi) = b0_window(p);
    let gens: Vec<usize> = match p.n0 {
        Some(n) => vec![n],
        None => (1..=CAP).collect(),
    };
    for n in gens {
        let mut best: Option<UBridge> = None;
        let mut stack: Vec<Word> = vec![vec![]];
        while let Some(w) = stack.pop() {
            let br = u_bridge(p, &w);
            if br.hi < wlo || br.lo > whi {
                continue;
            }
            if w.len() == n {
                if br.lo > wlo && br.hi < whi && best.as_ref().is_none_or(|b| br.lo < b.lo) {
                    best = Some(br);
                }
                continue;
            }
            for b in [0u8, 1] {
                // extend at the back: children of B(w) are B(w0), B(w1)
                let mut c = w.clone();
                c.push(b);
                stack.push(c);
            }
        }
        if let Some(b) = best {
            return Ok((n, b.word));
        }
    }
    Err(BridgeError::NoBridge(p.n0.unwrap_or(CAP)))
}

/// Nested bridges: `tilde[k]` is the left child of `tilde[k-1]` and
/// `main[k]` the right child (`main[0]` is unused and equals `tilde[0]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeChain {
    pub n0: usize,
    pub l: usize,
    pub tilde: Vec<Word>,
    pub main: Vec<Word>,
}

/// Symbol whose child bridge is the left one: `F_w^{-1}` preserves order
/// iff `w` has an even number of ones.
fn left_child_symbol(w: &[u8]) -> u8 {
    (w.iter().filter(|&&b| b == 1).count() % 2) as u8
}

pub fn bridge_chain(p: &ModelParams, n0: usize, b0: &[u8], k_max: usize) -> BridgeChain {
    let mut tilde = vec![b0.to_vec()];
    let mut main = vec![b0.to_vec()];
    for k in 1..=k_max {
        let parent = &tilde[k - 1];
        let left = left_child_symbol(parent);
        let mut t = parent.clone();
        t.push(left);
        let mut m = parent.clone();
        m.push(1 - left);
        tilde.push(t);
        main.push(m);
    }
    BridgeChain { n0, l: p.l, tilde, main }
}

impl BridgeChain {
    pub fn k_max(&self) -> usize {
        self.main.len() - 1
    }

    /// `w^(n0+Lk)`: the code of `B_k` padded with `(L-1)k` zeros.
    pub fn prefix(&self, k: usize) -> Word {
        let mut w = self.main[k].clone();
        w.extend(std::iter::repeat_n(0, (self.l - 1) * k));
        w
    }

    pub fn extend_to(&mut self, k_max: usize) {
        while self.k_max() < k_max {
            let parent = self.tilde.last().unwrap().clone();
            let left = left_child_symbol(&parent);
            let mut t = parent.clone();
            t.push(left);
            let mut m = parent;
            m.push(1 - left);
            self.tilde.push(t);
            self.main.push(m);
        }
    }
}

/// Working precision for generation `k`: enough bits for the generation
/// `k+1` target plus headroom.
pub fn precision_for(p: &ModelParams, n0: usize, k: usize) -> u32 {
    let gen = n0 + p.l * (k + 1);
    let bits = (gen as f64 * p.lambda_u.log2()).ceil() as u32 + 128;
    bits.div_ceil(64) * 64
}

/// z-interval whose fold image lands in `B^u(w^(n0+Lk))` on the vertex line.
pub fn z_target(p: &ModelParams, chain: &BridgeChain, k: usize, prec: u32) -> FxInterval {
    u_bridge_hp(p, &chain.prefix(k), prec).affine_inv(p.a2, p.mu)
}

/// Half-width in `t = x - 1/2` of the part of `H` folded into the target
/// bridge `[blo, bhi]` for some admissible z.
pub fn x_window(p: &ModelParams, blo: f64, bhi: f64) -> f64 {
    let room = if p.a2 > 0.0 { p.a2 * (1.0 + p.eps0) - (bhi - p.mu) } else { -p.a2 * (1.0 + p.eps0) + (blo - p.mu) };
    (room.max(0.0) / p.a1).sqrt().min(p.eps0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectorConsts {
    pub mu1: usize,
    pub mu2: usize,
    pub mu0: usize,
}

/// Exponents of the constructive connector.
pub fn connector_consts(p: &ModelParams) -> Result<ConnectorConsts, BridgeError> {
    let (l0, l1, e) = (p.lambda_cs0, p.lambda_cs1, p.eps);
    let rhs = (l0 + l1 - 1.0 - 7.0 * e) / l1;
    if rhs <= 0.0 {
        return Err(BridgeError::NoConnector("I(7eps) is empty".into()));
    }
    let least = |f: &dyn Fn(i32) -> bool| (1..200).find(|&m| f(m)).map(|m| m as usize);
    let mu1 = least(&|m| l0.powi(m) * (1.0 - l1.powi(3)) < rhs).ok_or_else(|| BridgeError::NoConnector("mu1".into()))?;
    let mu2 = least(&|m| l0.powi(m) * (1.0 + p.eps0) < 1.0 - l1).ok_or_else(|| BridgeError::NoConnector("mu2".into()))?;
    if l0.powi(mu1 as i32) * (1.0 - l1) <= 7.0 * e / l1 {
        return Err(BridgeError::NoConnector(format!("eps = {e} too large: the first leg of the connector overshoots I(7eps)")));
    }
    Ok(ConnectorConsts { mu1, mu2, mu0: mu1 + mu2 + 2 })
}

fn in_overlap(p: &ModelParams, eta: f64, z: f64) -> bool {
    let (a, b) = p.overlap(eta);
    a <= z && z <= b
}

/// Word `iota` (leftmost applied first) with `zeta_iota(z)` in `I(7eps)`.
pub fn connector(p: &ModelParams, z: f64) -> Result<Word, BridgeError> {
    if in_overlap(p, 7.0 * p.eps, z) {
        return Ok(Vec::new());
    }
    let c = connector_consts(p)?;
    let core = |w: &mut Word| {
        w.push(1);
        w.extend(std::iter::repeat_n(0, c.mu1));
        w.push(1);
    };
    let mut w = Vec::with_capacity(c.mu0);
    let (lo, _) = p.overlap(7.0 * p.eps);
    if (-p.eps0..0.0).contains(&z) {
        w.push(1);
        core(&mut w);
    } else if (0.0..=lo).contains(&z) {
        core(&mut w);
    } else if z >= p.lambda_cs0 - 7.0 * p.eps && z <= 1.0 + p.eps0 {
        w.extend(std::iter::repeat_n(0, c.mu2));
        core(&mut w);
    } else {
        return Err(BridgeError::NoConnector(format!("z = {z} outside the block")));
    }
    if in_overlap(p, 7.0 * p.eps, zeta_apply(p, &w, z)) {
        Ok(w)
    } else {
        Err(BridgeError::NoConnector(format!("image of z = {z} misses I(7eps)")))
    }
}

/// Inner-rounded interval: a window is a requirement, not a set to enclose.
fn window(lo: f64, hi: f64, prec: u32) -> FxInterval {
    FxInterval::new(Fixed::from_f64(lo, prec, Round::Up), Fixed::from_f64(hi, prec, Round::Down))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backend {
    /// `gamma`, leftmost applied first.
    pub word: Word,
    pub start: FxInterval,
}

/// Pull `target` back through forced inverse branches while the interval
/// stays inside `[eps, lcs0-eps]` (branch 0) or `[1-lcs1+eps, 1-eps]`
/// (branch 1). `tie` picks the branch when both apply.
pub fn backend_section(p: &ModelParams, target: &FxInterval, tie: u8, k: usize) -> Result<Backend, BridgeError> {
    let prec = target.prec();
    let w0 = window(p.eps, p.lambda_cs0 - p.eps, prec);
    let w1 = window(1.0 - p.lambda_cs1 + p.eps, 1.0 - p.eps, prec);
    let mut j = target.clone();
    let mut gen_order = Vec::new();
    loop {
        let c0 = w0.contains(&j);
        let c1 = w1.contains(&j);
        let b = match (c0, c1) {
            (true, true) => tie,
            (true, false) => 0,
            (false, true) => 1,
            (false, false) => break,
        };
        let (a, c) = zeta_coeffs(p, b);
        j = j.affine_inv(a, c);
        gen_order.push(b);
    }
    let (lo, hi) = p.overlap(3.0 * p.eps);
    if !j.contains(&FxInterval::from_f64(lo, hi, prec)) {
        let (l, h) = j.to_f64();
        return Err(BridgeError::BackendContainment { k, lo: l, hi: h });
    }
    gen_order.reverse();
    Ok(Backend { word: gen_order, start: j })
}

/// Outer image of `iv` under `zeta_w`.
pub fn zeta_interval(p: &ModelParams, w: &[u8], iv: &FxInterval) -> FxInterval {
    w.iter().fold(iv.clone(), |acc, &b| {
        let (a, c) = zeta_coeffs(p, b);
        acc.affine(a, c)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HatWord {
    pub k: usize,
    pub prefix: Word,
    pub free: Word,
    pub connector: Word,
    pub backend: Word,
    pub n_hat: usize,
    pub zeros: usize,
    pub ones: usize,
    /// Generation `k+1` z-target, rounded to `f64` for reporting.
    pub target: (f64, f64),
    pub prec: u32,
}

impl HatWord {
    pub fn word(&self) -> Word {
        let mut w = Vec::with_capacity(self.n_hat);
        w.extend_from_slice(&self.prefix);
        w.extend_from_slice(&self.free);
        w.extend_from_slice(&self.connector);
        w.extend_from_slice(&self.backend);
        w
    }

    pub fn m(&self) -> usize {
        self.backend.len()
    }
}

/// Assemble and verify `w^(n0+Lk) u_k iota_k gamma_k`: the z-image of
/// `[-eps0, 1+eps0]` must land in the generation `k+1` target.
pub fn build_hatword(p: &ModelParams, chain: &BridgeChain, k: usize, u: &[u8], tie: u8) -> Result<HatWord, BridgeError> {
    let prec = precision_for(p, chain.n0, k);
    let prefix = chain.prefix(k);
    let target = z_target(p, chain, k + 1, prec);
    let backend = backend_section(p, &target, tie, k)?;

    let mut head = prefix.clone();
    head.extend_from_slice(u);
    let z_ref = zeta_apply(p, &head, 0.5);
    let iota = connector(p, z_ref)?;

    let block = FxInterval::from_f64(-p.eps0, 1.0 + p.eps0, prec);
    let mut mid = zeta_interval(p, &head, &block);
    mid = zeta_interval(p, &iota, &mid);
    let (lo, hi) = p.overlap(4.0 * p.eps);
    if !window(lo, hi, prec).contains(&mid) {
        return Err(BridgeError::Verification { k, stage: "connector" });
    }
    let end = zeta_interval(p, &backend.word, &mid);
    if !target.contains(&end) {
        return Err(BridgeError::Verification { k, stage: "back end" });
    }

    let n_hat = prefix.len() + u.len() + iota.len() + backend.word.len();
    let ones = [&prefix[..], u, &iota[..], &backend.word[..]].iter().map(|w| w.iter().filter(|&&b| b == 1).count()).sum();
    Ok(HatWord {
        k,
        prefix,
        free: u.to_vec(),
        connector: iota,
        backend: backend.word,
        n_hat,
        zeros: n_hat - ones,
        ones,
        target: target.to_f64(),
        prec,
    })
}
