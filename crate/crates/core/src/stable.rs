//! Totally right-skewed α-stable laws, paths and weighted integrals.
//!
//! Draws come from the Chambers-Mallows-Stuck transform, which yields the
//! `S_α(1, 1, 0)` law: mean zero and `P(X > x) ~ C_ST x^{-α}` with
//! `C_ST = (1-α) / (Γ(2-α) cos(πα/2))`. A law with right-tail constant `C`
//! is then `σ X` for `σ = (C / C_ST)^{1/α}`; the left tail is `o(x^{-α})`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::rates::{AlphaModel, LimitJumpSampler};

/// Right-tail constant of the unit-scale `S_α(1, 1, 0)` law.
pub fn unit_tail_constant(model: &AlphaModel) -> f64 {
    let a = model.alpha();
    (1.0 - a) / (libm::tgamma(2.0 - a) * (PI * a / 2.0).cos())
}

/// `C_α = (α(2-α)Γ(α))^α (α-1)^{α+1} / Γ(2-α)`
pub fn theorem_tail_constant(model: &AlphaModel) -> f64 {
    let a = model.alpha();
    (a * (2.0 - a) * libm::tgamma(a)).powf(a) * (a - 1.0).powf(a + 1.0) / libm::tgamma(2.0 - a)
}

/// Tail constant `1/Γ(2-α)` of the jump law per unit of rescaled time.
pub fn walk_tail_constant(model: &AlphaModel) -> f64 {
    1.0 / libm::tgamma(2.0 - model.alpha())
}

/// A centred, totally right-skewed α-stable law fixed by its right-tail constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableSpec {
    model: AlphaModel,
    tail_constant: f64,
    sigma: f64,
    beta_cms: f64,
    scale_cms: f64,
}

impl StableSpec {
    pub fn with_tail_constant(model: &AlphaModel, tail_constant: f64) -> Result<Self> {
        if !(tail_constant > 0.0 && tail_constant.is_finite()) {
            return Err(Error::domain(format!(
                "tail constant must be positive, got {tail_constant}"
            )));
        }
        let a = model.alpha();
        let t = (PI * a / 2.0).tan();
        Ok(Self {
            model: *model,
            tail_constant,
            sigma: (tail_constant / unit_tail_constant(model)).powf(1.0 / a),
            beta_cms: t.atan() / a,
            scale_cms: (1.0 + t * t).powf(1.0 / (2.0 * a)),
        })
    }

    /// The law of `S_1` in the limit theorem for the order-`r` lengths.
    pub fn theorem(model: &AlphaModel) -> Self {
        Self::with_tail_constant(model, theorem_tail_constant(model)).expect("positive constant")
    }

    /// The law of the limit of the rescaled jump walk at time 1.
    pub fn walk_limit(model: &AlphaModel) -> Self {
        Self::with_tail_constant(model, walk_tail_constant(model)).expect("positive constant")
    }

    pub fn model(&self) -> &AlphaModel {
        &self.model
    }

    pub fn tail_constant(&self) -> f64 {
        self.tail_constant
    }

    /// Scale in the `S_α(σ, 1, 0)` parametrisation.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// One draw of `S_1`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sigma * self.sample_standard(rng)
    }

    /// One draw of `S_t = t^{1/α} S_1`.
    pub fn sample_at<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        t.powf(self.model.one_over_alpha()) * self.sample(rng)
    }

    /// `S_α(1, 1, 0)` draw.
    fn sample_standard<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a = self.model.alpha();
        let v = loop {
            let v = PI * (rng.random::<f64>() - 0.5);
            if v > -FRAC_PI_2 {
                break v;
            }
        };
        let w: f64 = loop {
            let w: f64 = Exp1.sample(rng);
            if w > 0.0 {
                break w;
            }
        };
        let ab = a * (v + self.beta_cms);
        self.scale_cms * ab.sin() / v.cos().powf(1.0 / a) * ((v - ab).cos() / w).powf((1.0 - a) / a)
    }
}

/// `sample_stable_unit`: one draw of `S_1` for `spec`.
pub fn sample_stable_unit<R: Rng + ?Sized>(spec: &StableSpec, rng: &mut R) -> f64 {
    spec.sample(rng)
}

/// Independent stable increments on a uniform grid of `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StablePathSample {
    horizon: f64,
    increments: Vec<f64>,
}

impl StablePathSample {
    pub fn sample<R: Rng + ?Sized>(spec: &StableSpec, horizon: f64, cells: usize, rng: &mut R) -> Result<Self> {
        if cells == 0 || !(horizon > 0.0) {
            return Err(Error::domain("a stable path needs a positive horizon and at least one cell"));
        }
        let step = (horizon / cells as f64).powf(spec.model.one_over_alpha());
        let increments = (0..cells).map(|_| step * spec.sample(rng)).collect();
        Ok(Self { horizon, increments })
    }

    /// Path on `[0, 1/γ]`, the range of the limit theorem.
    pub fn sample_theorem_range<R: Rng + ?Sized>(spec: &StableSpec, cells: usize, rng: &mut R) -> Result<Self> {
        Self::sample(spec, spec.model.gamma().recip(), cells, rng)
    }

    pub fn from_increments(horizon: f64, increments: Vec<f64>) -> Result<Self> {
        if increments.is_empty() || !(horizon > 0.0) {
            return Err(Error::domain("a stable path needs a positive horizon and at least one cell"));
        }
        Ok(Self { horizon, increments })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `t_i = i · horizon / N` for `i = 0..=N`.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.increments.len();
        (0..=n).map(|i| self.horizon * i as f64 / n as f64).collect()
    }

    /// Value of the path at the end of the horizon.
    pub fn terminal(&self) -> f64 {
        self.increments.iter().sum()
    }

    /// Coarsen by summing consecutive pairs of cells.
    pub fn coarsen(&self) -> Result<Self> {
        if !self.increments.len().is_multiple_of(2) {
            return Err(Error::domain("coarsening needs an even number of cells"));
        }
        Ok(Self {
            horizon: self.horizon,
            increments: self.increments.chunks(2).map(|c| c[0] + c[1]).collect(),
        })
    }
}

/// `Σ_i (1 - γ t_i)^β ΔS_i` with left endpoints `t_i`.
pub fn weighted_integral(path: &StablePathSample, gamma: f64, beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::domain(format!("weight exponent must be >= 0, got {beta}")));
    }
    let n = path.increments.len() as f64;
    Ok(path
        .increments
        .iter()
        .enumerate()
        .map(|(i, inc)| {
            let t = path.horizon * i as f64 / n;
            (1.0 - gamma * t).max(0.0).powf(beta) * inc
        })
        .sum())
}

/// Tail constant of `∫_0^{1/γ} (1-γt)^β dS_t` when `S_1` has tail constant `c`:
/// `c ∫_0^{1/γ} (1-γt)^{αβ} dt = c / (γ(αβ + 1))`.
pub fn weighted_integral_tail_constant(c: f64, model: &AlphaModel, beta: f64) -> f64 {
    c / (model.gamma() * (model.alpha() * beta + 1.0))
}

/// `(∫_0^{1/γ} (1-γt)^{(α-1)(r-1)} dS_t)_{r=1..s}` from one shared path.
pub fn limit_vector<R: Rng + ?Sized>(spec: &StableSpec, s: usize, cells: usize, rng: &mut R) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(Error::domain("limit vector needs s >= 1"));
    }
    let path = StablePathSample::sample_theorem_range(spec, cells, rng)?;
    limit_vector_from_path(&path, spec.model(), s)
}

pub fn limit_vector_from_path(path: &StablePathSample, model: &AlphaModel, s: usize) -> Result<Vec<f64>> {
    let am1 = model.alpha() - 1.0;
    (1..=s)
        .map(|r| weighted_integral(path, model.gamma(), am1 * (r - 1) as f64))
        .collect()
}

/// `(1/n) Σ_{i<=m} f(i/n) Σ_{j<=i} V_j` and `Σ_{i<=m} f(i/n) V_i`, both divided
/// by `n^{1/α}`, with `m = ⌊n · horizon⌋`.
pub fn functional_limit_sums<F, R, V>(f: F, mut sampler: V, n: usize, horizon: f64, alpha: f64, rng: &mut R) -> (f64, f64)
where
    F: Fn(f64) -> f64,
    R: Rng + ?Sized,
    V: FnMut(&mut R) -> f64,
{
    let nf = n as f64;
    let m = (nf * horizon).floor() as usize;
    let (mut partial, mut a, mut b) = (0.0, 0.0, 0.0);
    for i in 1..=m {
        let v = sampler(rng);
        let w = f(i as f64 / nf);
        partial += v;
        a += w * partial;
        b += w * v;
    }
    let scale = nf.powf(1.0 / alpha);
    (a / nf / scale, b / scale)
}

/// Draws of `V - γ` with `V` the limiting jump law.
pub fn centred_jump_sampler<R: Rng + ?Sized>(sampler: &LimitJumpSampler, gamma: f64) -> impl FnMut(&mut R) -> f64 + '_ {
    move |rng: &mut R| sampler.sample(rng) as f64 - gamma
}

/// CSV dump with columns `replicate,coord_1..coord_s`.
pub fn write_samples_csv<W: Write>(rows: &[Vec<f64>], out: W) -> Result<()> {
    let to_err = |e: csv::Error| Error::csv("<stable samples>", e);
    let mut wtr = csv::Writer::from_writer(out);
    let s = rows.first().map_or(0, Vec::len);
    let mut header = vec!["replicate".to_string()];
    header.extend((1..=s).map(|i| format!("coord_{i}")));
    wtr.write_record(&header).map_err(to_err)?;
    for (i, row) in rows.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|x| format!("{x:.17e}")));
        wtr.write_record(&rec).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<stable samples>", e))?;
    Ok(())
}
