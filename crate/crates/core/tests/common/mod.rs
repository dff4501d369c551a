#![allow(dead_code)]

use betacoal::rng::{SeedRoot, Stream};
use betacoal::simulator::{resample_spectrum_given_jumps, PathVisitor};

/// `∫_0^1 t^a (1-t)^b dt` for `a > -1`, `b >= 0`, by tanh-sinh quadrature on
/// 64 equal pieces; on the first piece `t = h u^{1/(a+1)}` removes the
/// singularity at 0.
pub fn beta_integral(a: f64, b: f64) -> f64 {
    const PIECES: usize = 64;
    let h = 1.0 / PIECES as f64;
    let q = 1.0 / (a + 1.0);
    let first = |u: f64| h.powf(a + 1.0) * q * (1.0 - h * u.powf(q)).powf(b);
    let body = |t: f64| t.powf(a) * (1.0 - t).max(0.0).powf(b);
    let tol = 1e-300;
    let head = quadrature::double_exponential::integrate(first, 0.0, 1.0, tol).integral;
    head + (1..PIECES)
        .map(|i| quadrature::double_exponential::integrate(body, i as f64 * h, (i + 1) as f64 * h, tol).integral)
        .sum::<f64>()
}

/// `λ_{m,k}` as a ratio of two quadratures, with no gamma function involved.
pub fn merger_rate_quadrature(m: usize, k: usize, alpha: f64) -> f64 {
    let num = beta_integral(k as f64 - alpha - 1.0, (m - k) as f64 + alpha - 1.0);
    let den = beta_integral(1.0 - alpha, alpha - 1.0);
    num / den
}

/// Running sums of `Z_{r,k}` and `Z_{r,k}^2` over repeated block choices.
pub struct CondMc {
    pub s: usize,
    pub sum: Vec<Vec<f64>>,
    pub sumsq: Vec<Vec<f64>>,
}

impl CondMc {
    pub fn new(s: usize, tau: usize) -> Self {
        Self {
            s,
            sum: vec![vec![0.0; tau]; s],
            sumsq: vec![vec![0.0; tau]; s],
        }
    }
}

impl PathVisitor for CondMc {
    fn level(&mut self, k: usize, _blocks: usize, small_counts: &[usize], _hold: f64) {
        for (r, &z) in small_counts.iter().enumerate().take(self.s) {
            let z = z as f64;
            self.sum[r][k] += z;
            self.sumsq[r][k] += z * z;
        }
    }
}

/// Monte Carlo mean and standard error of `E[Z_{r,k} | Δ]` for `r = 1..=s` and
/// every level `k < τ`, resampling block choices with the jumps frozen.
pub fn conditional_mc(n: usize, s: usize, deltas: &[usize], reps: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut acc = CondMc::new(s, deltas.len());
    let mut rng = SeedRoot(seed).stream(0, Stream::Coupling);
    for _ in 0..reps {
        resample_spectrum_given_jumps(n, s, deltas, &mut rng, &mut acc).unwrap();
    }
    let rf = reps as f64;
    let mean: Vec<Vec<f64>> = acc.sum.iter().map(|row| row.iter().map(|x| x / rf).collect()).collect();
    let se = acc
        .sumsq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| {
            sq.iter()
                .zip(mu)
                .map(|(q, m)| ((q / rf - m * m).max(0.0) * rf / (rf - 1.0) / rf).sqrt())
                .collect()
        })
        .collect();
    (mean, se)
}

/// Mean and standard error of a sample.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// `E[ℓ_1^{(n)}] = n g(n)` from `g(m) = 1/λ_m + Σ_d P(Δ = d | m) (m-d-1)/m · g(m-d)`,
/// since a singleton survives a merger of `d+1` out of `m` blocks with probability `(m-d-1)/m`.
pub fn expected_external_length(n: usize, model: &betacoal::rates::AlphaModel) -> f64 {
    let mut g = vec![0.0f64; n + 1];
    for m in 2..=n {
        let p = betacoal::rates::jump_distribution(m, model).unwrap();
        g[m] = betacoal::rates::total_rate(m, model).unwrap().recip()
            + p.iter()
                .enumerate()
                .map(|(i, pd)| pd * (m - i - 2) as f64 / m as f64 * g[m - i - 1])
                .sum::<f64>();
    }
    n as f64 * g[n]
}
