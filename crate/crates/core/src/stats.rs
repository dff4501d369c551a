//! Robust summaries and heavy-tail estimators.

use crate::error::{Error, Result};

/// Minimum sample size accepted by [`hill_tail_index`].
pub const HILL_MIN_SAMPLES: usize = 1000;

/// Hill estimate of the right-tail index from the top `⌈k_frac · N⌉` order statistics.
pub fn hill_tail_index(samples: &[f64], k_frac: f64) -> Result<f64> {
    if !(k_frac > 0.0 && k_frac <= 0.1) {
        return Err(Error::domain(format!("k_frac must lie in (0, 0.1], got {k_frac}")));
    }
    if samples.len() < HILL_MIN_SAMPLES {
        return Err(Error::InsufficientSamples(format!(
            "Hill estimator needs at least {HILL_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let k = (k_frac * samples.len() as f64).ceil() as usize;
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k];
    if !(threshold > 0.0) {
        return Err(Error::InsufficientSamples(format!(
            "fewer than {} positive samples in the upper tail",
            k + 1
        )));
    }
    let ln_t = threshold.ln();
    let mean = sorted[..k].iter().map(|x| x.ln() - ln_t).sum::<f64>() / k as f64;
    Ok(1.0 / mean)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples("KS distance needs two nonempty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Linear-interpolation quantile of sorted data (`p` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    quantile_sorted(&s, p)
}

pub fn median(samples: &[f64]) -> f64 {
    quantile(samples, 0.5)
}

pub fn iqr(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Means of `batches` consecutive, equally sized batches (remainder dropped).
pub fn batch_means(samples: &[f64], batches: usize) -> Result<Vec<f64>> {
    if batches < 2 || samples.len() < batches {
        return Err(Error::InsufficientSamples(format!(
            "need at least {batches} >= 2 samples for batching, got {}",
            samples.len()
        )));
    }
    let size = samples.len() / batches;
    Ok(samples.chunks_exact(size).take(batches).map(mean).collect())
}

/// Grand mean and its standard error from batch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEstimate {
    pub mean: f64,
    pub se: f64,
    pub median_of_batches: f64,
}

pub fn batch_estimate(samples: &[f64], batches: usize) -> Result<BatchEstimate> {
    let bm = batch_means(samples, batches)?;
    let m = mean(&bm);
    let var = bm.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (bm.len() - 1) as f64;
    Ok(BatchEstimate {
        mean: m,
        se: (var / bm.len() as f64).sqrt(),
        median_of_batches: median(&bm),
    })
}

/// `x^α P(X > x)` estimated from a sample.
pub fn upper_tail_constant(samples: &[f64], x: f64, alpha: f64) -> f64 {
    let count = samples.iter().filter(|&&v| v > x).count();
    x.powf(alpha) * count as f64 / samples.len() as f64
}

/// `x^α P(X < -x)` estimated from a sample.
pub fn lower_tail_constant(samples: &[f64], x: f64, alpha: f64) -> f64 {
    let count = samples.iter().filter(|&&v| v < -x).count();
    x.powf(alpha) * count as f64 / samples.len() as f64
}

/// Mass above the `1-q` quantile of `|X - median|` split by side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailMasses {
    pub threshold: f64,
    pub upper: usize,
    pub lower: usize,
}

/// Count samples whose distance from the median exceeds the `q`-quantile
/// of those distances, separately above and below the median.
pub fn tail_masses(samples: &[f64], q: f64) -> TailMasses {
    let med = median(samples);
    let dev: Vec<f64> = samples.iter().map(|x| (x - med).abs()).collect();
    let threshold = quantile(&dev, q);
    let upper = samples.iter().filter(|&&x| x - med > threshold).count();
    let lower = samples.iter().filter(|&&x| med - x > threshold).count();
    TailMasses { threshold, upper, lower }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_unstable_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InsufficientSamples("rank correlation needs two equal samples of size >= 2".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        return Ok(0.0);
    }
    Ok(num / (da * db).sqrt())
}

/// Total-variation distance between two probability vectors on a common support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1};

    #[test]
    fn ks_trivial_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_distance(&a, &[10.0, 11.0]).unwrap(), 1.0);
        assert!(ks_distance(&a, &[]).is_err());
        assert!((ks_distance(&[1.0, 2.0], &[1.5]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hill_on_pareto_and_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pareto: Vec<f64> = (0..1_000_000).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / 1.5)).collect();
        let h = hill_tail_index(&pareto, 0.01).unwrap();
        assert!((h - 1.5).abs() < 0.05, "{h}");
        let expo: Vec<f64> = (0..100_000).map(|_| Exp1.sample(&mut rng)).collect();
        assert!(hill_tail_index(&expo, 0.01).unwrap() > 5.0);
    }

    #[test]
    fn hill_guards() {
        assert!(hill_tail_index(&[1.0; 10], 0.05).is_err());
        assert!(hill_tail_index(&vec![-1.0; 2000], 0.05).is_err());
        assert!(hill_tail_index(&vec![1.0; 2000], 0.5).is_err());
    }

    #[test]
    fn quantiles_and_spread() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(median(&v), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(iqr(&v), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn batching() {
        let v: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(batch_means(&v, 2).unwrap(), vec![2.0, 7.0]);
        let e = batch_estimate(&v, 5).unwrap();
        assert!((e.mean - 4.5).abs() < 1e-15);
        assert!(batch_means(&v, 1).is_err());
    }

    #[test]
    fn rank_correlation() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
    }

    #[test]
    fn tails_and_tv() {
        let v = [-100.0, 0.0, 0.0, 0.0, 200.0];
        assert_eq!(upper_tail_constant(&v, 100.0, 1.0), 100.0 / 5.0);
        assert_eq!(lower_tail_constant(&v, 50.0, 1.0), 50.0 / 5.0);
        assert_eq!(total_variation(&[0.5, 0.5], &[1.0]), 0.5);
        let tm = tail_masses(&v, 0.5);
        assert_eq!((tm.upper, tm.lower), (1, 1));
    }
}
