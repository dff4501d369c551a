//! Replicated experiments: the fluctuation statistics of the order-`r`
//! lengths and the approximation-chain table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lengths::{length_rows, CutoffConfig, LengthRow};
use crate::rates::{centering_constant, AlphaModel, RateTable};
use crate::rng::{SeedRoot, Stream};
use crate::simulator::{simulate_path, simulate_spectrum, LengthAccumulator, LengthMode};
use crate::stable::StableSpec;
use crate::stats;

/// Settings of a replicated experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    #[serde(default = "default_s")]
    pub s: usize,
    #[serde(default)]
    pub seed_root: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Cells of the discretised stable paths.
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_hill_k_frac")]
    pub hill_k_frac: f64,
    /// Draws of the reference stable law for KS comparisons.
    #[serde(default = "default_reference")]
    pub reference_samples: usize,
    #[serde(default)]
    pub rao_blackwell: bool,
}

fn default_s() -> usize {
    3
}
fn default_delta() -> f64 {
    CutoffConfig::DEFAULT_DELTA
}
fn default_grid_n() -> usize {
    1000
}
fn default_batches() -> usize {
    20
}
fn default_hill_k_frac() -> f64 {
    0.1
}
fn default_reference() -> usize {
    100_000
}

impl ExperimentConfig {
    pub fn new(alpha: f64, n_grid: Vec<usize>, replicates: usize, s: usize, seed_root: u64) -> Self {
        Self {
            alpha,
            n_grid,
            replicates,
            s,
            seed_root,
            delta: default_delta(),
            grid_n: default_grid_n(),
            output_path: None,
            batches: default_batches(),
            hill_k_frac: default_hill_k_frac(),
            reference_samples: default_reference(),
            rao_blackwell: false,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let model = AlphaModel::new(self.alpha)?;
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 2) {
            return Err(Error::Config("n_grid must be nonempty with every n >= 2".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if self.s == 0 || self.n_grid.iter().any(|&n| self.s > n) {
            return Err(Error::Config("s must satisfy 1 <= s <= n for every n".into()));
        }
        if self.grid_n == 0 || self.reference_samples == 0 {
            return Err(Error::Config("grid_n and reference_samples must be positive".into()));
        }
        if !(self.hill_k_frac > 0.0 && self.hill_k_frac <= 0.1) {
            return Err(Error::Config("hill_k_frac must lie in (0, 0.1]".into()));
        }
        CutoffConfig::new(self.delta, &model).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn mode(&self) -> LengthMode {
        if self.rao_blackwell {
            LengthMode::RaoBlackwell
        } else {
            LengthMode::Exponential
        }
    }
}

/// Replicate id of replicate `rep` at the `i`-th grid point.
pub fn replicate_id(grid_index: usize, rep: usize) -> u64 {
    ((grid_index as u64) << 32) | rep as u64
}

/// Order-`r` lengths `ℓ_1..ℓ_s` for every replicate at one `n`.
pub fn replicate_lengths(
    table: &RateTable,
    n: usize,
    s: usize,
    replicates: usize,
    seed: SeedRoot,
    grid_index: usize,
    mode: LengthMode,
) -> Result<Vec<Vec<f64>>> {
    (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut streams = seed.path_streams(replicate_id(grid_index, rep));
            let mut acc = LengthAccumulator::new(table, s);
            simulate_spectrum(n, s, table, &mut streams, &mut acc)?;
            Ok(match mode {
                LengthMode::Exponential => acc.exponential,
                LengthMode::RaoBlackwell => acc.rao_blackwell,
            })
        })
        .collect()
}

/// `(c_r n^{2-α} - ℓ_r) / n^{1-α+1/α}`
pub fn fluctuation_statistic(ell: f64, r: usize, n: usize, model: &AlphaModel) -> f64 {
    let nf = n as f64;
    (centering_constant(r as u64, model) * nf.powf(model.centering_exponent()) - ell) / nf.powf(model.fluct_exponent())
}

/// One row per `(n, r)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub r: usize,
    pub replicates: usize,
    pub c_r: f64,
    /// mean of `ℓ_r / n^{2-α}`
    pub mean_ratio: f64,
    pub batch_se_ratio: f64,
    /// statistics of `T = (c_r n^{2-α} - ℓ_r)/n^{1-α+1/α}`
    pub median: f64,
    pub iqr: f64,
    pub hill_index: Option<f64>,
    /// KS distance to a median/IQR-matched stable reference
    pub ks_stable: f64,
    pub upper_tail: usize,
    pub lower_tail: usize,
    /// Spearman correlation of `T_r` with `T_1`
    pub rank_corr_r1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub crate_version: String,
    pub config: ExperimentConfig,
    pub flags: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub provenance: Provenance,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        for row in &self.rows {
            wtr.serialize(row).map_err(|e| Error::csv(path, e))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Normalise by median and IQR.
fn standardise(v: &[f64]) -> Vec<f64> {
    let med = stats::median(v);
    let spread = stats::iqr(v);
    let spread = if spread > 0.0 { spread } else { 1.0 };
    v.iter().map(|x| (x - med) / spread).collect()
}

pub fn run_theorem1_experiment(config: &ExperimentConfig, flags: BTreeMap<String, String>) -> Result<SummaryTable> {
    config.validate()?;
    let model = AlphaModel::new(config.alpha)?;
    let seed = SeedRoot(config.seed_root);
    let reference = {
        let spec = StableSpec::theorem(&model);
        let mut rng = seed.stream(u64::MAX >> 4, Stream::Stable);
        let draws: Vec<f64> = (0..config.reference_samples).map(|_| spec.sample(&mut rng)).collect();
        standardise(&draws)
    };
    let mut rows = Vec::with_capacity(config.n_grid.len() * config.s);
    for (gi, &n) in config.n_grid.iter().enumerate() {
        let table = RateTable::new(&model, n)?;
        let lengths = replicate_lengths(&table, n, config.s, config.replicates, seed, gi, config.mode())?;
        let nf = n as f64;
        let stat = |r: usize| -> Vec<f64> {
            lengths.iter().map(|l| fluctuation_statistic(l[r - 1], r, n, &model)).collect()
        };
        let t1 = stat(1);
        for r in 1..=config.s {
            let t = stat(r);
            let ratios: Vec<f64> = lengths.iter().map(|l| l[r - 1] / nf.powf(model.centering_exponent())).collect();
            let batches = config.batches.min(config.replicates);
            let (mean_ratio, batch_se) = if batches >= 2 {
                let b = stats::batch_estimate(&ratios, batches)?;
                (b.mean, b.se)
            } else {
                (stats::mean(&ratios), f64::NAN)
            };
            let tails = stats::tail_masses(&t, 0.99);
            rows.push(SummaryRow {
                n,
                r,
                replicates: config.replicates,
                c_r: centering_constant(r as u64, &model),
                mean_ratio,
                batch_se_ratio: batch_se,
                median: stats::median(&t),
                iqr: stats::iqr(&t),
                hill_index: stats::hill_tail_index(&t, config.hill_k_frac).ok(),
                ks_stable: stats::ks_distance(&standardise(&t), &reference)?,
                upper_tail: tails.upper,
                lower_tail: tails.lower,
                rank_corr_r1: if config.replicates >= 2 { stats::spearman(&t, &t1)? } else { f64::NAN },
            });
        }
    }
    Ok(SummaryTable {
        provenance: Provenance {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            flags,
        },
        rows,
    })
}

/// Approximation-chain rows for every `n` in the grid and every replicate.
pub fn run_approx_suite(config: &ExperimentConfig) -> Result<Vec<LengthRow>> {
    config.validate()?;
    let model = AlphaModel::new(config.alpha)?;
    let cutoff = CutoffConfig::new(config.delta, &model)?;
    let seed = SeedRoot(config.seed_root);
    let mut rows = Vec::new();
    for (gi, &n) in config.n_grid.iter().enumerate() {
        let table = RateTable::new(&model, n)?;
        let per_rep: Vec<Vec<LengthRow>> = (0..config.replicates)
            .into_par_iter()
            .map(|rep| {
                let id = replicate_id(gi, rep);
                let path = simulate_path(n, config.s, &table, seed, id)?;
                length_rows(&path, &table, rep as u64, &cutoff, config.mode())
            })
            .collect::<Result<_>>()?;
        rows.extend(per_rep.into_iter().flatten());
    }
    Ok(rows)
}

/// Medians of `|ℓ - ℓ̃|` and `|ℓ̃ - ℓ̄|` divided by `n^{1-α+1/α}`, per `(n, r)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub n: usize,
    pub r: usize,
    pub median_ell_tilde_gap: f64,
    pub median_tilde_bar_gap: f64,
}

pub fn summarise_chain(rows: &[LengthRow], alpha: f64) -> Result<Vec<ChainSummary>> {
    let model = AlphaModel::new(alpha)?;
    let mut keys: Vec<(usize, usize)> = rows.iter().map(|r| (r.n, r.r)).collect();
    keys.sort_unstable();
    keys.dedup();
    Ok(keys
        .into_iter()
        .map(|(n, r)| {
            let scale = (n as f64).powf(model.fluct_exponent());
            let sel: Vec<&LengthRow> = rows.iter().filter(|x| x.n == n && x.r == r).collect();
            let g1: Vec<f64> = sel.iter().map(|x| (x.ell - x.ell_tilde).abs() / scale).collect();
            let g2: Vec<f64> = sel.iter().map(|x| (x.ell_tilde - x.ell_bar).abs() / scale).collect();
            ChainSummary {
                n,
                r,
                median_ell_tilde_gap: stats::median(&g1),
                median_tilde_bar_gap: stats::median(&g2),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_validation() {
        let cfg = ExperimentConfig::from_toml_str("alpha = 1.5\nn_grid = [100, 200]\nreplicates = 10\n").unwrap();
        assert_eq!(cfg.s, 3);
        assert_eq!(cfg.delta, 0.8);
        assert!(ExperimentConfig::from_toml_str("alpha = 2.5\nn_grid = [100]\nreplicates = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("alpha = 1.5\nn_grid = [1]\nreplicates = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("alpha = 1.5\nn_grid = [10]\nreplicates = 1\nbogus = 3\n").is_err());
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn summary_shape_and_determinism() {
        let mut cfg = ExperimentConfig::new(1.5, vec![200, 400], 40, 2, 9);
        cfg.reference_samples = 2000;
        cfg.batches = 4;
        let a = run_theorem1_experiment(&cfg, BTreeMap::new()).unwrap();
        let b = run_theorem1_experiment(&cfg, BTreeMap::new()).unwrap();
        assert_eq!(a.rows.len(), 4);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.rows.iter().all(|r| r.hill_index.is_none()));
        assert!((a.rows[0].rank_corr_r1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn approx_suite_rows() {
        let cfg = ExperimentConfig::new(1.5, vec![100], 3, 2, 1);
        let rows = run_approx_suite(&cfg).unwrap();
        assert_eq!(rows.len(), 6);
        let sum = summarise_chain(&rows, 1.5).unwrap();
        assert_eq!(sum.len(), 2);
    }
}
