//! Approximants of the order-`r` lengths and the exact combinatorics behind them.
//!
//! Notation follows the simulator: `X_k` block counts, `Δ_k = X_{k-1} - X_k`,
//! `τ_n` the number of jumps, `γ = 1/(α-1)`, `a_p = r_p (α-1)` and
//! `u_l = 1 - γ l / n`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rates::{limit_jump_law, ln_choose, AlphaModel, RateTable};
use crate::simulator::{order_r_lengths, rescaled_walk, CoalescentPath, LengthMode, RescaledWalk};

/// Largest order accepted by the enumerated conditional expectation.
pub const MAX_ENUMERATED_ORDER: usize = 6;

/// Default number of level tuples the enumerated formula may visit.
pub const DEFAULT_TUPLE_BUDGET: u64 = 50_000_000;

/// An ordered composition `(r_1, …, r_m)` of `r - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Composition {
    parts: Vec<usize>,
}

impl Composition {
    /// Parts must be positive; the empty composition stands for `r = 1`.
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        if parts.contains(&0) {
            return Err(Error::domain("composition parts must be positive"));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// The order `r = 1 + Σ r_p`.
    pub fn order(&self) -> usize {
        1 + self.parts.iter().sum::<usize>()
    }

    /// `(1/m!) Π_p (r - Σ_{i<=p} r_i) P(V = r_p)`
    pub fn prefactor(&self, model: &AlphaModel) -> f64 {
        let r = self.order();
        let mut left = r;
        let mut w = 1.0;
        for (i, &p) in self.parts.iter().enumerate() {
            left -= p;
            w *= left as f64 * limit_jump_law(p as u64, model) / (i + 1) as f64;
        }
        w
    }

    /// `∫_b^1 Π_p (1 - x^{a_p}) dx`, expanded over subsets of parts.
    pub fn integral_from(&self, b: f64, model: &AlphaModel) -> f64 {
        self.subset_sum(model, |sign, a| sign * (1.0 - b.powf(a + 1.0)) / (a + 1.0))
    }

    /// `∫_0^b Π_p (1 - x^{a_p}) dx`
    pub fn integral_to(&self, b: f64, model: &AlphaModel) -> f64 {
        self.subset_sum(model, |sign, a| sign * b.powf(a + 1.0) / (a + 1.0))
    }

    /// `Π_p 1/r_p`
    pub fn inverse_part_product(&self) -> f64 {
        self.parts.iter().map(|&p| 1.0 / p as f64).product()
    }

    /// Leading constant `(1/γ) Π_p (1/r_p) ∫_0^1 Π_p (1 - x^{a_p}) dx`.
    pub fn deterministic_constant(&self, model: &AlphaModel) -> f64 {
        self.inverse_part_product() * self.integral_from(0.0, model) / model.gamma()
    }

    fn subset_sum(&self, model: &AlphaModel, f: impl Fn(f64, f64) -> f64) -> f64 {
        let am1 = model.alpha() - 1.0;
        let m = self.parts.len();
        (0u32..1 << m)
            .map(|mask| {
                let mut a = 0.0;
                let mut sign = 1.0;
                for (p, &rp) in self.parts.iter().enumerate() {
                    if mask & (1 << p) != 0 {
                        a += rp as f64 * am1;
                        sign = -sign;
                    }
                }
                f(sign, a)
            })
            .sum()
    }
}

/// All ordered compositions of `r - 1` (the empty one when `r = 1`).
pub fn compositions(r: usize) -> Vec<Composition> {
    fn rec(left: usize, cur: &mut Vec<usize>, out: &mut Vec<Composition>) {
        if left == 0 {
            out.push(Composition { parts: cur.clone() });
            return;
        }
        for p in 1..=left {
            cur.push(p);
            rec(left - p, cur, out);
            cur.pop();
        }
    }
    assert!(r >= 1, "order must be at least 1");
    let mut out = Vec::new();
    rec(r - 1, &mut Vec::new(), &mut out);
    out
}

/// Level `K_n = ⌊n/γ - n^δ⌋` separating the two parts of the length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffConfig {
    delta: f64,
}

impl CutoffConfig {
    pub const DEFAULT_DELTA: f64 = 0.8;

    pub fn new(delta: f64, model: &AlphaModel) -> Result<Self> {
        if !(delta > model.one_over_alpha() && delta < 1.0) {
            return Err(Error::domain(format!(
                "cutoff exponent must lie in (1/alpha, 1) = ({}, 1), got {delta}",
                model.one_over_alpha()
            )));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn level(&self, n: usize, model: &AlphaModel) -> usize {
        let nf = n as f64;
        (nf / model.gamma() - nf.powf(self.delta)).floor().max(0.0) as usize
    }
}

/// Prefix products of `1 - a / X_i` for `a = 1..=a_max`, tracked as
/// (log magnitude, zero count, negative count) so that any
/// `Π_j^k(a)` is an `O(1)` lookup.
#[derive(Debug, Clone)]
pub struct PiTable {
    a_max: usize,
    // index [a-1][k] over k = 0..=τ
    log_abs: Vec<Vec<f64>>,
    zeros: Vec<Vec<u32>>,
    negatives: Vec<Vec<u32>>,
}

impl PiTable {
    pub fn new(path: &CoalescentPath, a_max: usize) -> Self {
        let tau = path.tau();
        let mut log_abs = Vec::with_capacity(a_max);
        let mut zeros = Vec::with_capacity(a_max);
        let mut negatives = Vec::with_capacity(a_max);
        for a in 1..=a_max {
            let mut la = Vec::with_capacity(tau + 1);
            let mut z = Vec::with_capacity(tau + 1);
            let mut ng = Vec::with_capacity(tau + 1);
            let (mut s, mut zc, mut nc) = (0.0, 0u32, 0u32);
            la.push(s);
            z.push(zc);
            ng.push(nc);
            for i in 1..=tau {
                let f = 1.0 - a as f64 / path.blocks(i) as f64;
                if f == 0.0 {
                    zc += 1;
                } else {
                    if f < 0.0 {
                        nc += 1;
                    }
                    s += f.abs().ln();
                }
                la.push(s);
                z.push(zc);
                ng.push(nc);
            }
            log_abs.push(la);
            zeros.push(z);
            negatives.push(ng);
        }
        Self {
            a_max,
            log_abs,
            zeros,
            negatives,
        }
    }

    /// Signed `Π_{i=j+1}^k (1 - a/X_i)`; empty when `j >= k`.
    pub fn signed(&self, a: usize, j: usize, k: usize) -> f64 {
        if j >= k {
            return 1.0;
        }
        let i = a - 1;
        if self.zeros[i][k] != self.zeros[i][j] {
            return 0.0;
        }
        let mag = (self.log_abs[i][k] - self.log_abs[i][j]).exp();
        if (self.negatives[i][k] - self.negatives[i][j]) % 2 == 1 {
            -mag
        } else {
            mag
        }
    }

    /// `ln Π_{i=j+1}^k (1 - a/X_i)`, or `None` if a factor is not positive.
    pub fn ln_positive(&self, a: usize, j: usize, k: usize) -> Option<f64> {
        if j >= k {
            return Some(0.0);
        }
        let i = a - 1;
        if self.zeros[i][k] != self.zeros[i][j] || self.negatives[i][k] != self.negatives[i][j] {
            return None;
        }
        Some(self.log_abs[i][k] - self.log_abs[i][j])
    }

    pub fn a_max(&self) -> usize {
        self.a_max
    }
}

/// `Π_j^k(r) = Π_{i=j+1}^k (1 - r/X_i)`, evaluated in the log domain.
pub fn pi_product(path: &CoalescentPath, j: usize, k: usize, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::domain("pi_product needs r >= 1"));
    }
    if k > path.tau() {
        return Err(Error::domain(format!(
            "level {k} beyond tau_n = {}",
            path.tau()
        )));
    }
    let mut s = 0.0;
    for i in j + 1..=k {
        let f = 1.0 - r as f64 / path.blocks(i) as f64;
        if f <= 0.0 {
            return Err(Error::domain(format!(
                "factor 1 - {r}/X_{i} = {f} is not positive"
            )));
        }
        s += f.ln();
    }
    Ok(s.exp())
}

/// Displayed-formula evaluation of `E[Z_{r,k} | X]`.
///
/// Only levels whose jump equals a remaining part are visited; `budget`
/// caps the number of level tuples.
#[derive(Debug, Clone)]
pub struct CondExpectation<'a> {
    path: &'a CoalescentPath,
    r: usize,
    pi: PiTable,
    // levels[d-1] = sorted levels l with Δ_l = d
    levels: Vec<Vec<usize>>,
    budget: u64,
}

impl<'a> CondExpectation<'a> {
    pub fn new(path: &'a CoalescentPath, r: usize, budget: u64) -> Result<Self> {
        if r == 0 || r > MAX_ENUMERATED_ORDER {
            return Err(Error::domain(format!(
                "enumerated conditional expectation supports 1 <= r <= {MAX_ENUMERATED_ORDER}, got {r}"
            )));
        }
        let mut levels = vec![Vec::new(); r.saturating_sub(1)];
        for (i, &d) in path.deltas().iter().enumerate() {
            if d < r {
                levels[d - 1].push(i + 1);
            }
        }
        Ok(Self {
            path,
            r,
            pi: PiTable::new(path, r),
            levels,
            budget,
        })
    }

    /// `E[Z_{r,k} | X]` for `0 <= k <= τ_n`.
    pub fn at(&self, k: usize) -> Result<f64> {
        if k > self.path.tau() {
            return Err(Error::domain(format!(
                "level {k} beyond tau_n = {}",
                self.path.tau()
            )));
        }
        let mut visited = 0u64;
        let s = self.rec(self.r, 0, k, &mut visited)?;
        Ok(self.path.blocks(k) as f64 * s)
    }

    fn rec(&self, a: usize, prev: usize, k: usize, visited: &mut u64) -> Result<f64> {
        if a == 1 {
            *visited += 1;
            if *visited > self.budget {
                return Err(Error::Budget(format!(
                    "more than {} level tuples for r={} at k={k}",
                    self.budget, self.r
                )));
            }
            return Ok(self.pi.signed(1, prev, k));
        }
        let mut total = 0.0;
        for d in 1..a {
            let lv = &self.levels[d - 1];
            let start = lv.partition_point(|&l| l <= prev);
            for &l in lv[start..].iter().take_while(|&&l| l <= k) {
                let w = (a - d) as f64 / self.path.blocks(l) as f64 * self.pi.signed(a, prev, l - 1);
                if w == 0.0 {
                    continue;
                }
                total += w * self.rec(a - d, l, k, visited)?;
            }
        }
        Ok(total)
    }
}

/// `E[Z_{r,k} | X]` from the displayed formula with the default budget.
pub fn cond_expect_z(path: &CoalescentPath, r: usize, k: usize) -> Result<f64> {
    CondExpectation::new(path, r, DEFAULT_TUPLE_BUDGET)?.at(k)
}

/// `E[Z_{r,k} | X]` for every level `k = 0..=τ_n` and every `r = 1..=s`.
///
/// For a fixed set `A` of `r` leaves, let `q` be the number of blocks
/// holding the leaves of `A` while no block mixes `A` with other leaves.
/// A merger of `Δ+1` out of `x` blocks keeps `q` with probability
/// `C(x-q, Δ+1)/C(x, Δ+1)`, sends it to `q - Δ` with probability
/// `C(q, Δ+1)/C(x, Δ+1)` and otherwise destroys `A`. Summing over `A`
/// starts the recursion at `C(n, r)` in state `q = r`.
///
/// Returned as `out[r-1][k]`.
pub fn cond_expect_z_all(path: &CoalescentPath, s: usize) -> Vec<Vec<f64>> {
    let n = path.leaves_n();
    let tau = path.tau();
    let mut out = Vec::with_capacity(s);
    for r in 1..=s.min(n) {
        let mut v = vec![0.0; r + 1];
        v[r] = ln_choose(n as f64, r as f64).exp();
        let mut row = Vec::with_capacity(tau + 1);
        row.push(v[1]);
        for k in 1..=tau {
            let x = path.blocks(k - 1) as f64;
            let d = path.delta(k);
            let take = (d + 1) as f64;
            let mut next = vec![0.0; r + 1];
            // C(q, Δ+1)/C(x, Δ+1) built up incrementally in q
            for q in 1..=r {
                if v[q] == 0.0 {
                    continue;
                }
                let mut stay = 1.0;
                for i in 0..q {
                    stay *= (x - take - i as f64).max(0.0) / (x - i as f64);
                }
                next[q] += v[q] * stay;
                if q > d {
                    let mut merge = 1.0;
                    for i in 0..=d {
                        merge *= (q - i) as f64 / (x - i as f64);
                    }
                    next[q - d] += v[q] * merge;
                }
            }
            v = next;
            row.push(v[1]);
        }
        out.push(row);
    }
    out
}

/// `ℓ̃_r = αΓ(α) Σ_{k<τ_n} Z_{r,k} / X_k^α`
pub fn ell_tilde(path: &CoalescentPath, r: usize) -> Result<f64> {
    check_order(path, r)?;
    let model = AlphaModel::new(path.alpha())?;
    let a = model.alpha();
    let s: f64 = (0..path.tau())
        .map(|k| path.z(r, k) as f64 * (path.blocks(k) as f64).powf(-a))
        .sum();
    Ok(model.alpha_gamma_alpha() * s)
}

/// `ℓ̄_r = αΓ(α) Σ_{k<τ_n} E[Z_{r,k}|X] / X_k^α`, exact for every `r <= s`.
pub fn ell_bar_all(path: &CoalescentPath, s: usize) -> Result<Vec<f64>> {
    let model = AlphaModel::new(path.alpha())?;
    let a = model.alpha();
    let ez = cond_expect_z_all(path, s);
    Ok(ez
        .iter()
        .map(|row| {
            model.alpha_gamma_alpha()
                * (0..path.tau())
                    .map(|k| row[k] * (path.blocks(k) as f64).powf(-a))
                    .sum::<f64>()
        })
        .collect())
}

pub fn ell_bar(path: &CoalescentPath, r: usize) -> Result<f64> {
    if r == 0 || r > path.leaves_n() {
        return Err(Error::domain(format!("order {r} outside 1..=n")));
    }
    Ok(ell_bar_all(path, r)?[r - 1])
}

/// `ℓ̄_r` with `E[Z_{r,k}|X]` taken from the displayed formula (budgeted).
pub fn ell_bar_enumerated(path: &CoalescentPath, r: usize, budget: u64) -> Result<f64> {
    let model = AlphaModel::new(path.alpha())?;
    let ce = CondExpectation::new(path, r, budget)?;
    let mut s = 0.0;
    for k in 0..path.tau() {
        s += ce.at(k)? * (path.blocks(k) as f64).powf(-model.alpha());
    }
    Ok(model.alpha_gamma_alpha() * s)
}

fn check_order(path: &CoalescentPath, r: usize) -> Result<()> {
    if r == 0 || r > path.s() {
        return Err(Error::domain(format!(
            "order {r} not tracked by the path (s = {})",
            path.s()
        )));
    }
    Ok(())
}

/// Denominator used for the diagonal-symmetrised approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiagonalDenominator {
    /// `1/(X_{l-1} + r_p)`
    #[default]
    Shifted,
    /// `1/X_{l-1}`
    Plain,
}

/// `αΓ(α) Σ_comp Π_p(r - Σ_{i<=p} r_i) Σ_{k=1}^{τ-1} X_k^{1-α} Π_0^k
/// (1/m!) Π_p Σ_{l<=k} (Π_0^l)^{r_p} 1{Δ_l = r_p} / den_{l,p}`
pub fn ell_bar_symmetrised(path: &CoalescentPath, r: usize, den: DiagonalDenominator) -> Result<f64> {
    let model = AlphaModel::new(path.alpha())?;
    let ln_pi = ln_pi_prefix(path);
    let tau = path.tau();
    let mut total = 0.0;
    for comp in compositions(r) {
        let m = comp.len();
        let mut left = r;
        let mut weight = 1.0;
        for (i, &p) in comp.parts().iter().enumerate() {
            left -= p;
            weight *= left as f64 / (i + 1) as f64;
        }
        let mut acc = vec![0.0; m];
        let mut sum = 0.0;
        for k in 1..tau {
            let d = path.delta(k);
            for (a, &p) in acc.iter_mut().zip(comp.parts()) {
                if d == p {
                    let x = path.blocks(k - 1) as f64;
                    let den = match den {
                        DiagonalDenominator::Shifted => x + p as f64,
                        DiagonalDenominator::Plain => x,
                    };
                    *a += (p as f64 * ln_pi[k]).exp() / den;
                }
            }
            let xk = path.blocks(k) as f64;
            sum += xk.powf(1.0 - model.alpha()) * ln_pi[k].exp() * acc.iter().product::<f64>();
        }
        total += weight * sum;
    }
    Ok(model.alpha_gamma_alpha() * total)
}

/// `ln Π_0^k` for `k = 0..τ_n - 1` (positive factors there); `-∞` at `τ_n`.
fn ln_pi_prefix(path: &CoalescentPath) -> Vec<f64> {
    let mut out = Vec::with_capacity(path.tau() + 1);
    let mut s = 0.0;
    out.push(s);
    for i in 1..=path.tau() {
        s += (1.0 - 1.0 / path.blocks(i) as f64).ln();
        out.push(s);
    }
    out
}

/// `L^{(1)}` and `L^{(2)}` of one composition on one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitLengths {
    pub l1: f64,
    pub l2: f64,
    pub cutoff_level: usize,
}

/// `L^{(i)} = Σ_k X_k^{1-α} Π_0^k Π_p Σ_{l=0}^{k-1} (Π_0^l)^{r_p} / X_l`,
/// over `1 <= k <= K_n` for `i = 1` and `K_n < k < τ_n` for `i = 2`.
pub fn split_lengths(path: &CoalescentPath, composition: &Composition, cutoff: &CutoffConfig) -> Result<SplitLengths> {
    let model = AlphaModel::new(path.alpha())?;
    let kn = cutoff.level(path.leaves_n(), &model);
    let ln_pi = ln_pi_prefix(path);
    let tau = path.tau();
    let mut acc = vec![0.0; composition.len()];
    let (mut l1, mut l2) = (0.0, 0.0);
    for k in 1..tau {
        let xl = path.blocks(k - 1) as f64;
        for (a, &p) in acc.iter_mut().zip(composition.parts()) {
            *a += (p as f64 * ln_pi[k - 1]).exp() / xl;
        }
        let term = (path.blocks(k) as f64).powf(1.0 - model.alpha())
            * ln_pi[k].exp()
            * acc.iter().product::<f64>();
        if k <= kn {
            l1 += term;
        } else {
            l2 += term;
        }
    }
    Ok(SplitLengths {
        l1,
        l2,
        cutoff_level: kn,
    })
}

/// Terms of the right-hand side of the `L^{(2)}` expansion:
/// `(1/γ) Π 1/r_p (n^{2-α} ∫_0^{γ n^{δ-1}} Π (1-x^{a_p}) dx + n^{1-α+1/α} S^{(n)}_{1/γ})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Expansion {
    pub deterministic: f64,
    /// `(1/γ) Π 1/r_p · n^{1-α+1/α} S^{(n)}_{1/γ}`
    pub walk_term: f64,
}

pub fn l2_expansion(path: &CoalescentPath, composition: &Composition, cutoff: &CutoffConfig) -> Result<L2Expansion> {
    let model = AlphaModel::new(path.alpha())?;
    let walk = rescaled_walk(path);
    let n = path.leaves_n() as f64;
    let g = model.gamma();
    let pre = composition.inverse_part_product() / g;
    let b = g * n.powf(cutoff.delta() - 1.0);
    Ok(L2Expansion {
        deterministic: pre * n.powf(model.centering_exponent()) * composition.integral_to(b.min(1.0), &model),
        walk_term: pre * n.powf(model.fluct_exponent()) * walk.at(1.0 / g),
    })
}

/// Deterministic term of the `L^{(1)}` expansion:
/// `(1/γ) n^{2-α} Π 1/r_p ∫_{γ n^{δ-1}}^1 Π (1-x^{a_p}) dx`.
pub fn l1_deterministic(n: usize, composition: &Composition, cutoff: &CutoffConfig, model: &AlphaModel) -> f64 {
    let nf = n as f64;
    let g = model.gamma();
    let b = (g * nf.powf(cutoff.delta() - 1.0)).min(1.0);
    composition.inverse_part_product() / g * nf.powf(model.centering_exponent()) * composition.integral_from(b, model)
}

/// Walk quantities shared by the fluctuation functionals.
struct WalkSums<'a> {
    walk: RescaledWalk,
    path: &'a CoalescentPath,
    n: f64,
    g: f64,
    kn: usize,
    am1: f64,
}

impl<'a> WalkSums<'a> {
    fn new(path: &'a CoalescentPath, cutoff: &CutoffConfig, model: &AlphaModel) -> Self {
        Self {
            walk: rescaled_walk(path),
            path,
            n: path.leaves_n() as f64,
            g: model.gamma(),
            kn: cutoff.level(path.leaves_n(), model),
            am1: model.alpha() - 1.0,
        }
    }

    fn u(&self, l: usize) -> f64 {
        1.0 - self.g * l as f64 / self.n
    }

    /// `(1/n) Σ_{l=0}^{K_n} u_l^e S^{(n)}_{l/n}`
    fn riemann(&self, e: f64) -> f64 {
        (0..=self.kn)
            .map(|l| self.u(l).powf(e) * self.walk.at_level(l))
            .sum::<f64>()
            / self.n
    }

    /// `Σ_{j=1}^{K_n} u_j^e (Δ_j - γ) / n^{1/α}`; increments vanish past `τ_n`.
    fn increments(&self, e: f64) -> f64 {
        (1..=self.kn.min(self.path.tau()))
            .map(|j| self.u(j).powf(e) * (self.path.delta(j) as f64 - self.g))
            .sum::<f64>()
            / self.walk.scale()
    }
}

fn signed_reciprocal(a: f64, i: u32) -> f64 {
    if i.is_multiple_of(2) {
        1.0 / (a + 1.0)
    } else {
        -1.0 / (a + 1.0)
    }
}

/// `c^i_{p_1..p_h} = (-1)^i / ((r_{p_1}+…+r_{p_h})(α-1) + 1)`
pub fn coefficient(i: u32, part_sum: usize, model: &AlphaModel) -> f64 {
    signed_reciprocal(part_sum as f64 * (model.alpha() - 1.0), i)
}

fn subsets_excluding(m: usize, j: Option<usize>) -> impl Iterator<Item = u32> {
    (1u32..1 << m).filter(move |mask| j.is_none_or(|j| mask & (1 << j) == 0))
}

fn subset_exponent(parts: &[usize], mask: u32, am1: f64) -> f64 {
    parts
        .iter()
        .enumerate()
        .filter(|(p, _)| mask & (1 << p) != 0)
        .map(|(_, &rp)| rp as f64 * am1)
        .sum()
}

/// `F^{(n)}(r_1, …, r_m)` exactly as displayed in the `L^{(1)}` expansion.
///
/// Index sums `p_1 ≠ … ≠ p_i` run over unordered sets of distinct parts,
/// with the coefficient `c^i` evaluated inside the sum.
pub fn fluctuation_functional(path: &CoalescentPath, composition: &Composition, cutoff: &CutoffConfig) -> Result<f64> {
    let model = AlphaModel::new(path.alpha())?;
    let ws = WalkSums::new(path, cutoff, &model);
    let parts = composition.parts();
    let m = parts.len();
    let am1 = ws.am1;
    let c = |a: f64, i: u32| signed_reciprocal(a, i);
    let mut t1 = 0.0;
    let mut t2 = 0.0;
    for (j, &rj) in parts.iter().enumerate() {
        let aj = rj as f64 * am1;
        let mut inner1 = ws.riemann(aj);
        let mut inner2 = aj / (aj + 1.0) * ws.increments(aj);
        for mask in subsets_excluding(m, Some(j)) {
            let i = mask.count_ones();
            if i as usize > m - 1 {
                continue;
            }
            let ap = subset_exponent(parts, mask, am1);
            inner1 += c(ap, i) * ws.riemann(ap + aj);
            let d = c(ap, i) - c(ap + aj, i);
            inner2 += d * ws.increments(ap + aj);
        }
        t1 -= (aj - 1.0) / ws.g * inner1;
        t2 += rj as f64 * inner2;
    }
    let mut inner3 = ws.increments(0.0);
    for mask in subsets_excluding(m, None) {
        let i = mask.count_ones();
        let ap = subset_exponent(parts, mask, am1);
        inner3 += c(ap, i) * ws.increments(ap);
    }
    let t3 = composition.inverse_part_product() / ws.g * inner3;
    Ok(t1 + t2 + t3)
}

/// First-order fluctuation of `L^{(1)} + L^{(2)}` obtained by linearising the
/// summands around `X_k ≈ n u_k` directly on the path:
///
/// * `X_k^{1-α} Π_0^k ≈ n^{1-α} (1 + (α-1) Σ_{j<=k} (Δ_j-γ)/(n u_j))`,
/// * `Σ_{l<k} (Π_0^l)^{r_p}/X_l ≈ Σ_{l<k} u_l^{a_p}/(n u_l) (1 + (1-a_p) n^{1/α} S_l/(n u_l)
///   + a_p Σ_{j<=l} (Δ_j-γ)/(n u_j))`,
/// * past `K_n` the summand depends on the path through `X_{K_n}` only, which
///   gives `-(1/γ) Π_p (1 - b^{a_p})/r_p · S^{(n)}_{K_n/n}` with `b = γ n^{δ-1}`.
///
/// Returned on the scale of `F^{(n)}`, i.e. divided by `n^{1-α+1/α}`.
pub fn linearized_fluctuation(path: &CoalescentPath, composition: &Composition, cutoff: &CutoffConfig) -> Result<f64> {
    let model = AlphaModel::new(path.alpha())?;
    let ws = WalkSums::new(path, cutoff, &model);
    let parts = composition.parts();
    let m = parts.len();
    let n = ws.n;
    let scale = ws.walk.scale();
    let kn = ws.kn.min(path.tau().saturating_sub(1));
    let mut base = vec![0.0; m];
    let mut var = vec![0.0; m];
    // Σ_{j<=l} (Δ_j - γ)/(n u_j)
    let mut drift = 0.0;
    let mut total = 0.0;
    for k in 1..=kn {
        let l = k - 1;
        let ul = ws.u(l);
        let sl = ws.walk.at_level(l) * scale / (n * ul);
        for (p, &rp) in parts.iter().enumerate() {
            let ap = rp as f64 * ws.am1;
            let w = ul.powf(ap) / (n * ul);
            base[p] += w;
            var[p] += w * ((1.0 - ap) * sl + ap * drift);
        }
        drift += (path.delta(k) as f64 - ws.g) / (n * ws.u(k));
        let prod: f64 = base.iter().product();
        let mut lin = ws.am1 * drift * prod;
        for j in 0..m {
            let others: f64 = (0..m).filter(|&p| p != j).map(|p| base[p]).product();
            lin += var[j] * others;
        }
        total += lin;
    }
    let l1 = n.powf(1.0 - model.alpha()) * total / n.powf(model.fluct_exponent());
    let b = ws.g * n.powf(cutoff.delta() - 1.0);
    let edge: f64 = parts.iter().map(|&rp| 1.0 - b.powf(rp as f64 * ws.am1)).product();
    let tail = -composition.inverse_part_product() * edge / ws.g * ws.walk.at_level(ws.kn);
    Ok(l1 + tail)
}

/// Which fluctuation functional enters the assembled formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FluctuationForm {
    /// `F^{(n)}` as displayed
    #[default]
    Displayed,
    /// [`linearized_fluctuation`]
    Linearized,
}

/// `ℓ̄_r ≈ αΓ(α) Σ_comp prefactor · (n^{2-α} (1/γ) Π 1/r_p I_comp + n^{1-α+1/α} F)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalFormula {
    /// `c_r n^{2-α}` (integral `I_comp` kept)
    pub deterministic: f64,
    /// same with `I_comp` replaced by 1
    pub deterministic_without_integral: f64,
    /// `αΓ(α) Σ prefactor · F`, not yet multiplied by `n^{1-α+1/α}`
    pub fluctuation: f64,
}

impl FinalFormula {
    pub fn value(&self, n: usize, model: &AlphaModel) -> f64 {
        self.deterministic + (n as f64).powf(model.fluct_exponent()) * self.fluctuation
    }
}

pub fn final_formula(path: &CoalescentPath, r: usize, cutoff: &CutoffConfig, form: FluctuationForm) -> Result<FinalFormula> {
    let model = AlphaModel::new(path.alpha())?;
    let n = path.leaves_n() as f64;
    let agg = model.alpha_gamma_alpha();
    let lead = n.powf(model.centering_exponent()) / model.gamma();
    let mut out = FinalFormula {
        deterministic: 0.0,
        deterministic_without_integral: 0.0,
        fluctuation: 0.0,
    };
    for comp in compositions(r) {
        let w = agg * comp.prefactor(&model);
        out.deterministic += w * lead * comp.inverse_part_product() * comp.integral_from(0.0, &model);
        out.deterministic_without_integral += w * lead * comp.inverse_part_product();
        let f = match form {
            FluctuationForm::Displayed => fluctuation_functional(path, &comp, cutoff)?,
            FluctuationForm::Linearized => linearized_fluctuation(path, &comp, cutoff)?,
        };
        out.fluctuation += w * f;
    }
    Ok(out)
}

/// `c_r` as assembled from compositions: `αΓ(α) Σ prefactor (1/γ) Π 1/r_p I_comp`.
pub fn assembled_centering_constant(r: usize, model: &AlphaModel) -> f64 {
    model.alpha_gamma_alpha()
        * compositions(r)
            .iter()
            .map(|c| c.prefactor(model) * c.deterministic_constant(model))
            .sum::<f64>()
}

/// One row of the approximation-chain table.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LengthRow {
    pub n: usize,
    pub replicate: u64,
    pub r: usize,
    pub ell: f64,
    pub ell_tilde: f64,
    pub ell_bar: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "F")]
    pub f: f64,
}

/// Rows for `r = 1..=s` of one path. `L1`, `L2` and `F` are aggregated over
/// compositions with weight `αΓ(α) · prefactor`.
pub fn length_rows(
    path: &CoalescentPath,
    table: &RateTable,
    replicate: u64,
    cutoff: &CutoffConfig,
    mode: LengthMode,
) -> Result<Vec<LengthRow>> {
    let model = table.model();
    let ells = order_r_lengths(path, table, mode);
    let bars = ell_bar_all(path, path.s())?;
    let mut cache: HashMap<Composition, (SplitLengths, f64)> = HashMap::new();
    let mut rows = Vec::with_capacity(path.s());
    for r in 1..=path.s() {
        let (mut l1, mut l2, mut f) = (0.0, 0.0, 0.0);
        for comp in compositions(r) {
            let w = model.alpha_gamma_alpha() * comp.prefactor(model);
            let (sl, fv) = match cache.get(&comp) {
                Some(v) => *v,
                None => {
                    let v = (
                        split_lengths(path, &comp, cutoff)?,
                        fluctuation_functional(path, &comp, cutoff)?,
                    );
                    cache.insert(comp.clone(), v);
                    v
                }
            };
            l1 += w * sl.l1;
            l2 += w * sl.l2;
            f += w * fv;
        }
        rows.push(LengthRow {
            n: path.leaves_n(),
            replicate,
            r,
            ell: ells.get(r),
            ell_tilde: ell_tilde(path, r)?,
            ell_bar: bars[r - 1],
            l1,
            l2,
            f,
        });
    }
    Ok(rows)
}

pub fn write_length_rows<W: std::io::Write>(rows: &[LengthRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for row in rows {
        wtr.serialize(row).map_err(|e| Error::csv("<lengths>", e))?;
    }
    wtr.flush().map_err(|e| Error::io("<lengths>", e))?;
    Ok(())
}
