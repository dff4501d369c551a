//! Merger rates of the Beta(2-α, α) coalescent.
//!
//! From `m` blocks every particular set of `k` blocks merges at rate
//!
//! ```text
//! λ_{m,k} = Γ(k-α) Γ(m-k+α) / (Γ(m) Γ(2-α) Γ(α)),   2 ≤ k ≤ m,
//! ```
//!
//! so the block counting chain leaves state `m` at total rate
//! `λ_m = Σ_k C(m,k) λ_{m,k}` and jumps down by `d = k - 1` with probability
//! `C(m,d+1) λ_{m,d+1} / λ_m`. Everything is evaluated in the log-gamma
//! domain and exponentiated only at the end.

use std::io::Write;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::error::{Error, Result};

#[inline]
pub(crate) fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

#[inline]
pub(crate) fn ln_choose(m: f64, k: f64) -> f64 {
    ln_gamma(m + 1.0) - ln_gamma(k + 1.0) - ln_gamma(m - k + 1.0)
}

/// Parameter bundle for a Beta(2-α, α) coalescent with `1 < α < 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaModel {
    alpha: f64,
    gamma: f64,
    one_over_alpha: f64,
    fluct_exponent: f64,
    centering_exponent: f64,
    // ln Γ(2-α) + ln Γ(α), the Beta(2-α, α) normaliser
    ln_beta_norm: f64,
    ln_gamma_two_minus_alpha: f64,
}

impl AlphaModel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        let g2a = ln_gamma(2.0 - alpha);
        Ok(Self {
            alpha,
            gamma: 1.0 / (alpha - 1.0),
            one_over_alpha: 1.0 / alpha,
            fluct_exponent: 1.0 - alpha + 1.0 / alpha,
            centering_exponent: 2.0 - alpha,
            ln_beta_norm: g2a + ln_gamma(alpha),
            ln_gamma_two_minus_alpha: g2a,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Asymptotic mean jump size `1/(α-1)`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn one_over_alpha(&self) -> f64 {
        self.one_over_alpha
    }

    /// Fluctuation scale exponent `1 - α + 1/α`.
    pub fn fluct_exponent(&self) -> f64 {
        self.fluct_exponent
    }

    /// Centering exponent `2 - α`.
    pub fn centering_exponent(&self) -> f64 {
        self.centering_exponent
    }

    /// `α Γ(α)`, the constant in `λ_m ~ m^α / (α Γ(α))`.
    pub fn alpha_gamma_alpha(&self) -> f64 {
        self.alpha * libm::tgamma(self.alpha)
    }
}

fn check_mk(m: usize, k: usize) -> Result<()> {
    if m < 2 || k < 2 || k > m {
        return Err(Error::domain(format!(
            "merger rate needs 2 <= k <= m, got m={m}, k={k}"
        )));
    }
    Ok(())
}

/// `ln λ_{m,k}`.
pub fn log_merger_rate(m: usize, k: usize, model: &AlphaModel) -> Result<f64> {
    check_mk(m, k)?;
    Ok(log_merger_rate_unchecked(m as f64, k as f64, model))
}

#[inline]
fn log_merger_rate_unchecked(m: f64, k: f64, model: &AlphaModel) -> f64 {
    let a = model.alpha;
    ln_gamma(k - a) + ln_gamma(m - k + a) - ln_gamma(m) - model.ln_beta_norm
}

/// Rate `λ_{m,k}` at which one particular set of `k` out of `m` blocks merges.
pub fn merger_rate(m: usize, k: usize, model: &AlphaModel) -> Result<f64> {
    log_merger_rate(m, k, model).map(f64::exp)
}

/// `ln C(m,k) + ln λ_{m,k}` for `k = 2..=m`, i.e. the log rate of a jump by `k-1`.
fn log_jump_weights(m: usize, model: &AlphaModel) -> Vec<f64> {
    let mf = m as f64;
    (2..=m)
        .map(|k| {
            let kf = k as f64;
            ln_choose(mf, kf) + log_merger_rate_unchecked(mf, kf, model)
        })
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Total coalescence rate `λ_m = Σ_{k=2}^m C(m,k) λ_{m,k}`, summed in the log domain.
///
/// This is `O(m)`; [`total_rate_closed_form`] gives the same number in `O(1)`.
pub fn total_rate(m: usize, model: &AlphaModel) -> Result<f64> {
    if m < 2 {
        return Err(Error::domain(format!("total rate needs m >= 2, got {m}")));
    }
    Ok(log_sum_exp(&log_jump_weights(m, model)).exp())
}

/// `ln λ_m` from the telescoped sum `λ_m = Γ(m+α-1) / (α Γ(α) Γ(m-1))`.
pub fn log_total_rate_closed_form(m: usize, model: &AlphaModel) -> f64 {
    let mf = m as f64;
    let a = model.alpha;
    ln_gamma(mf + a - 1.0) - ln_gamma(mf - 1.0) - a.ln() - ln_gamma(a)
}

pub fn total_rate_closed_form(m: usize, model: &AlphaModel) -> f64 {
    log_total_rate_closed_form(m, model).exp()
}

/// Distribution of the next jump size from `m` blocks; entry `d-1` is `P(Δ = d)`.
pub fn jump_distribution(m: usize, model: &AlphaModel) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::domain(format!(
            "jump distribution needs m >= 2, got {m}"
        )));
    }
    let w = log_jump_weights(m, model);
    let lse = log_sum_exp(&w);
    Ok(w.iter().map(|x| (x - lse).exp()).collect())
}

/// Limit law of the first jump as `m → ∞`, which is also the law of the
/// coupling variable `V`: `P(V=j) = α/Γ(2-α) · Γ(j+1-α)/Γ(j+2)`.
pub fn limit_jump_law(j: u64, model: &AlphaModel) -> f64 {
    if j == 0 {
        return 0.0;
    }
    let jf = j as f64;
    let a = model.alpha;
    (a.ln() - model.ln_gamma_two_minus_alpha + ln_gamma(jf + 1.0 - a) - ln_gamma(jf + 2.0)).exp()
}

/// `P(V >= j) = Γ(j+1-α) / (Γ(2-α) Γ(j+1))`.
pub fn limit_jump_tail(j: u64, model: &AlphaModel) -> f64 {
    if j <= 1 {
        return 1.0;
    }
    let jf = j as f64;
    (ln_gamma(jf + 1.0 - model.alpha) - model.ln_gamma_two_minus_alpha - ln_gamma(jf + 1.0)).exp()
}

/// Centering constant `c_k = α (α-1)² Γ(k+α-2) / k!`.
pub fn centering_constant(k: u64, model: &AlphaModel) -> f64 {
    let a = model.alpha;
    let kf = k as f64;
    (a.ln() + 2.0 * (a - 1.0).ln() + ln_gamma(kf + a - 2.0) - ln_gamma(kf + 1.0)).exp()
}

/// Inverse-tail sampler for the limit jump law `V`.
#[derive(Debug, Clone)]
pub struct LimitJumpSampler {
    model: AlphaModel,
    // tail[d] = P(V >= d) for d = 0..=TABLE+1 (tail[0] unused)
    tail: Vec<f64>,
}

impl LimitJumpSampler {
    const TABLE: usize = 1024;

    pub fn new(model: &AlphaModel) -> Self {
        let mut tail = vec![1.0; Self::TABLE + 2];
        for (d, t) in tail.iter_mut().enumerate().skip(2) {
            *t = limit_jump_tail(d as u64, model);
        }
        Self {
            model: *model,
            tail,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        // u in (0, 1]; V = max{d : P(V >= d) >= u}
        let u = 1.0 - rng.random::<f64>();
        let mut d = 1;
        while d <= Self::TABLE && self.tail[d + 1] >= u {
            d += 1;
        }
        if d <= Self::TABLE {
            return d as u64;
        }
        self.search_beyond_table(u)
    }

    fn search_beyond_table(&self, u: f64) -> u64 {
        let mut lo = (Self::TABLE + 1) as u64;
        let mut hi = lo * 2;
        while limit_jump_tail(hi, &self.model) >= u {
            lo = hi;
            if hi >= 1 << 60 {
                return hi;
            }
            hi *= 2;
        }
        // tail(lo) >= u > tail(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if limit_jump_tail(mid, &self.model) >= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Precomputed rates for the block counting chain up to `max_blocks`.
///
/// Rows `m <= dense_cap` are stored densely (log rates, jump CDF and an alias
/// table for O(1) sampling). Above the cap a jump is drawn exactly by
/// rejection from the limit law `V`: the ratio `P(Δ=d | m) / P(V=d)` is
/// proportional to `Γ(m-d-1+α)/Γ(m-d)`, which is largest at `d = 1`.
#[derive(Debug, Clone)]
pub struct RateTable {
    model: AlphaModel,
    max_blocks: usize,
    dense_cap: usize,
    log_lambda_mk: Vec<f64>,
    jump_cdf: Vec<f64>,
    alias: Vec<WeightedAliasIndex<f64>>,
    log_lambda_m: Vec<f64>,
    lambda_m: Vec<f64>,
    limit: LimitJumpSampler,
}

impl RateTable {
    pub const DEFAULT_DENSE_CAP: usize = 1024;

    pub fn new(model: &AlphaModel, max_blocks: usize) -> Result<Self> {
        Self::with_dense_cap(model, max_blocks, Self::DEFAULT_DENSE_CAP)
    }

    pub fn with_dense_cap(model: &AlphaModel, max_blocks: usize, dense_cap: usize) -> Result<Self> {
        if max_blocks < 2 {
            return Err(Error::domain(format!(
                "rate table needs max_blocks >= 2, got {max_blocks}"
            )));
        }
        let dense_cap = dense_cap.clamp(2, max_blocks);
        let row_len_total = (dense_cap - 1) * dense_cap / 2;
        let mut log_lambda_mk = Vec::with_capacity(row_len_total);
        let mut jump_cdf = Vec::with_capacity(row_len_total);
        let mut alias = Vec::with_capacity(dense_cap - 1);
        for m in 2..=dense_cap {
            let mf = m as f64;
            let lr: Vec<f64> = (2..=m)
                .map(|k| log_merger_rate_unchecked(mf, k as f64, model))
                .collect();
            let probs = jump_distribution(m, model)?;
            let mut acc = 0.0;
            for p in &probs {
                acc += p;
                jump_cdf.push(acc.min(1.0));
            }
            log_lambda_mk.extend_from_slice(&lr);
            alias.push(
                WeightedAliasIndex::new(probs)
                    .map_err(|e| Error::domain(format!("alias table for m={m}: {e}")))?,
            );
        }
        let mut log_lambda_m = vec![f64::NEG_INFINITY; max_blocks + 1];
        let mut lambda_m = vec![0.0; max_blocks + 1];
        for m in 2..=max_blocks {
            let l = log_total_rate_closed_form(m, model);
            log_lambda_m[m] = l;
            lambda_m[m] = l.exp();
        }
        Ok(Self {
            model: *model,
            max_blocks,
            dense_cap,
            log_lambda_mk,
            jump_cdf,
            alias,
            log_lambda_m,
            lambda_m,
            limit: LimitJumpSampler::new(model),
        })
    }

    pub fn model(&self) -> &AlphaModel {
        &self.model
    }

    pub fn max_blocks(&self) -> usize {
        self.max_blocks
    }

    pub fn dense_cap(&self) -> usize {
        self.dense_cap
    }

    fn row_offset(m: usize) -> usize {
        (m - 1) * (m - 2) / 2
    }

    /// Stored `ln λ_{m,k}`; falls back to direct evaluation outside the dense rows.
    pub fn log_merger_rate(&self, m: usize, k: usize) -> Result<f64> {
        check_mk(m, k)?;
        if m <= self.dense_cap {
            Ok(self.log_lambda_mk[Self::row_offset(m) + k - 2])
        } else {
            log_merger_rate(m, k, &self.model)
        }
    }

    /// Cumulative jump distribution for a dense row, entry `d-1` is `P(Δ <= d)`.
    pub fn jump_cdf(&self, m: usize) -> Option<&[f64]> {
        if (2..=self.dense_cap).contains(&m) {
            let off = Self::row_offset(m);
            Some(&self.jump_cdf[off..off + m - 1])
        } else {
            None
        }
    }

    /// `λ_m`; values above `max_blocks` are computed on demand.
    #[inline]
    pub fn total_rate(&self, m: usize) -> f64 {
        if m <= self.max_blocks {
            self.lambda_m[m]
        } else {
            total_rate_closed_form(m, &self.model)
        }
    }

    #[inline]
    pub fn log_total_rate(&self, m: usize) -> f64 {
        if m <= self.max_blocks {
            self.log_lambda_m[m]
        } else {
            log_total_rate_closed_form(m, &self.model)
        }
    }

    pub fn limit_sampler(&self) -> &LimitJumpSampler {
        &self.limit
    }

    /// Draw the next jump size `Δ ∈ {1, …, m-1}` from state `m >= 2`.
    #[inline]
    pub fn sample_jump<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> usize {
        debug_assert!(m >= 2);
        if m <= self.dense_cap {
            return self.alias[m - 2].sample(rng) + 1;
        }
        loop {
            let d = self.limit.sample(rng);
            if d >= m as u64 {
                continue;
            }
            let d = d as usize;
            if d == 1 {
                return 1;
            }
            let accept = self.acceptance(m, d);
            if rng.random::<f64>() < accept {
                return d;
            }
        }
    }

    /// `g(m-d-1) / g(m-2)` with `g(j) = Γ(j+α)/Γ(j+1)`.
    fn acceptance(&self, m: usize, d: usize) -> f64 {
        let a = self.model.alpha;
        if d <= 64 {
            let mut ratio = 1.0;
            for j in (m - d - 1)..=(m - 3) {
                let jf = j as f64;
                ratio *= (jf + 1.0) / (jf + a);
            }
            ratio
        } else {
            let lo = (m - d - 1) as f64;
            let hi = (m - 2) as f64;
            (ln_gamma(lo + a) - ln_gamma(lo + 1.0) - ln_gamma(hi + a) + ln_gamma(hi + 1.0)).exp()
        }
    }
}

/// Write the `m,k,lambda_mk` rows of one rate row as CSV.
pub fn write_rate_row_csv<W: Write>(m: usize, model: &AlphaModel, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::csv("<rate row>", e);
    wtr.write_record(["m", "k", "lambda_mk"]).map_err(to_err)?;
    for k in 2..=m {
        let v = merger_rate(m, k, model)?;
        wtr.write_record([m.to_string(), k.to_string(), format!("{v:.17e}")])
            .map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<rate row>", e))?;
    Ok(())
}
