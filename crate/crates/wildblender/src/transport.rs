//! Bounded-Lipschitz distance between uniform empirical measures, as an
//! optimal transport problem with ground cost `min(dist, 2)`.

use crate::model::Point;
use num_integer::Integer;
use serde::{Deserialize, Serialize};

/// Problems up to this many atoms (after equalising sizes) are solved exactly.
pub const EXACT_MAX: usize = 512;
/// Between `EXACT_MAX` and this size the auction is used; beyond it only bounds.
pub const AUCTION_MAX: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Exact,
    Auction,
    Bounds,
}

/// Value of `d_W`: `lower <= d_W <= upper`, equal in the exact regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct W1 {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub solver: Solver,
}

impl W1 {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

pub fn cost(a: &Point, b: &Point) -> f64 {
    a.dist(b).min(2.0)
}

/// Minimum-cost perfect assignment of a square cost matrix (row-major),
/// by shortest augmenting paths with potentials. Returns the column of each row.
pub fn hungarian(n: usize, c: &[f64]) -> Vec<usize> {
    const INF: f64 = f64::INFINITY;
    // 1-based arrays, column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c[(i0 - 1) * n + j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Epsilon-scaling auction for the same problem. Returns the assignment and
/// a dual lower bound on the optimal cost.
pub fn auction(n: usize, c: &[f64], eps_final: f64) -> (Vec<usize>, f64) {
    // maximise benefit -c
    let mut price = vec![0.0; n];
    let mut owner = vec![usize::MAX; n];
    let mut assign = vec![usize::MAX; n];
    let mut eps = 0.25;
    loop {
        owner.iter_mut().for_each(|o| *o = usize::MAX);
        assign.iter_mut().for_each(|a| *a = usize::MAX);
        let mut free: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = free.pop() {
            let row = &c[i * n..(i + 1) * n];
            let (mut best, mut second, mut bj) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for j in 0..n {
                let val = -row[j] - price[j];
                if val > best {
                    second = best;
                    best = val;
                    bj = j;
                } else if val > second {
                    second = val;
                }
            }
            let bid = if second.is_finite() { best - second + eps } else { eps };
            price[bj] += bid;
            if owner[bj] != usize::MAX {
                assign[owner[bj]] = usize::MAX;
                free.push(owner[bj]);
            }
            owner[bj] = i;
            assign[i] = bj;
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / 5.0).max(eps_final);
    }
    // dual of min sum c: sum_i min_j (c_ij + p_j) - sum_j p_j
    let lower: f64 =
        (0..n).map(|i| (0..n).map(|j| c[i * n + j] + price[j]).fold(f64::INFINITY, f64::min)).sum::<f64>() - price.iter().sum::<f64>();
    (assign, lower)
}

/// Atoms of two uniform measures repeated to a common count.
fn equalise<'a>(mu: &'a [Point], nu: &'a [Point]) -> (Vec<&'a Point>, Vec<&'a Point>) {
    let l = mu.len().lcm(&nu.len());
    let rep = |m: &'a [Point]| m.iter().flat_map(|p| std::iter::repeat_n(p, l / m.len())).collect::<Vec<_>>();
    (rep(mu), rep(nu))
}

/// `max |E_mu phi - E_nu phi|` over clipped coordinate observables, all in the
/// test class of `d_W`; a lower bound for it.
pub fn dual_lower_bound(mu: &[Point], nu: &[Point]) -> f64 {
    let mut best: f64 = 0.0;
    for c in 0..3 {
        let mut centres: Vec<f64> = mu.iter().chain(nu).map(|p| p.coord(c)).collect();
        centres.sort_by(f64::total_cmp);
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let c0 = centres[((centres.len() - 1) as f64 * q) as usize];
            let phi = |p: &Point| (p.coord(c) - c0).clamp(-1.0, 1.0);
            let a: f64 = mu.iter().map(phi).sum::<f64>() / mu.len() as f64;
            let b: f64 = nu.iter().map(phi).sum::<f64>() / nu.len() as f64;
            best = best.max((a - b).abs());
        }
    }
    best
}

/// `d_W(mu, nu)` for uniform measures on the given atoms.
pub fn w1(mu: &[Point], nu: &[Point]) -> W1 {
    assert!(!mu.is_empty() && !nu.is_empty(), "empty measure");
    let (a, b) = equalise(mu, nu);
    let n = a.len();
    if n > AUCTION_MAX {
        // sorted matching along x is a feasible plan
        let mut sa: Vec<&Point> = a.clone();
        let mut sb: Vec<&Point> = b.clone();
        sa.sort_by(|p, q| p.x.total_cmp(&q.x));
        sb.sort_by(|p, q| p.x.total_cmp(&q.x));
        let upper = sa.iter().zip(&sb).map(|(p, q)| cost(p, q)).sum::<f64>() / n as f64;
        let lower = dual_lower_bound(mu, nu);
        return W1 { value: 0.5 * (lower + upper), lower, upper, solver: Solver::Bounds };
    }
    let c: Vec<f64> = a.iter().flat_map(|p| b.iter().map(move |q| cost(p, q))).collect();
    if n <= EXACT_MAX {
        let asg = hungarian(n, &c);
        let v = asg.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum::<f64>() / n as f64;
        return W1 { value: v, lower: v, upper: v, solver: Solver::Exact };
    }
    let (asg, dual) = auction(n, &c, 1e-7 / n as f64);
    let upper = asg.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum::<f64>() / n as f64;
    let lower = (dual / n as f64).max(dual_lower_bound(mu, nu)).min(upper);
    W1 { value: upper, lower, upper, solver: Solver::Auction }
}
