//! Command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig};
use crate::lengths::{write_length_rows, CutoffConfig};
use crate::rates::{merger_rate, total_rate, write_rate_row_csv, AlphaModel, RateTable};
use crate::rng::{SeedRoot, Stream};
use crate::simulator::{order_r_lengths, simulate_path, LengthMode};
use crate::stable::{limit_vector, write_samples_csv, StableSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn parse_alpha(s: &str) -> std::result::Result<f64, String> {
    let a: f64 = s.parse().map_err(|e| format!("{e}"))?;
    AlphaModel::new(a).map(|m| m.alpha()).map_err(|e| e.to_string())
}

fn parse_delta(s: &str) -> std::result::Result<f64, String> {
    let d: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if d > 0.0 && d < 1.0 {
        Ok(d)
    } else {
        Err(format!("delta must lie in (0, 1), got {d}"))
    }
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "betacoal", version, about = "Beta(2-alpha, alpha) coalescent: rates, simulation, order-r branch lengths")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads for replicate loops [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overwrite existing output files
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Print the merger rates lambda_{m,k} for k = 2..m and the total rate lambda_m
    Rates(RatesArgs),
    /// Simulate one coalescent path and report tau_n and the order-r lengths
    Simulate(SimulateArgs),
    /// Approximation chain (ell, ell_tilde, ell_bar, L1, L2, F) for replicates at one n
    Lengths(LengthsArgs),
    /// Approximation chain over a grid of n with median normalised gaps
    ApproxSuite(ApproxSuiteArgs),
    /// Draw samples of the limiting stable vector
    StableSample(StableSampleArgs),
    /// Replicated fluctuation experiment for the order-r lengths
    Theorem1(Theorem1Args),
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RatesArgs {
    /// Stability index, strictly inside (1, 2)
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: f64,
    /// Number of blocks m >= 2
    #[arg(long)]
    pub m: usize,
    /// Emit CSV with columns m,k,lambda_mk instead of text
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// Stability index, strictly inside (1, 2)
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: f64,
    /// Number of leaves
    #[arg(long)]
    pub n: usize,
    /// Largest tracked block size, 1 <= s <= n
    #[arg(long, default_value_t = 3)]
    pub s: usize,
    /// Root seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replicate index within the seed
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    /// Write the per-level table k,X_k,Delta_k,Z_1..Z_s,W_k to path.csv
    #[arg(long)]
    pub record_full: bool,
    /// Output directory [default: print to stdout only]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct LengthsArgs {
    /// Stability index, strictly inside (1, 2)
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: f64,
    /// Number of leaves
    #[arg(long)]
    pub n: usize,
    /// Largest order r, 1 <= s <= min(n, 6)
    #[arg(long, default_value_t = 3)]
    pub s: usize,
    /// Number of replicates
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Root seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cutoff exponent delta, with 1/alpha < delta < 1
    #[arg(long, default_value_t = CutoffConfig::DEFAULT_DELTA, value_parser = parse_delta)]
    pub delta: f64,
    /// Replace holding times by their mean in ell
    #[arg(long)]
    pub rao_blackwell: bool,
    /// Output directory [default: CSV on stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ApproxSuiteArgs {
    /// Stability index, strictly inside (1, 2)
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: f64,
    /// Comma-separated grid of leaf counts
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    /// Largest order r, 1 <= s <= min(n, 6)
    #[arg(long, default_value_t = 3)]
    pub s: usize,
    /// Replicates per grid point
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    /// Root seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cutoff exponent delta, with 1/alpha < delta < 1
    #[arg(long, default_value_t = CutoffConfig::DEFAULT_DELTA, value_parser = parse_delta)]
    pub delta: f64,
    /// Replace holding times by their mean in ell
    #[arg(long)]
    pub rao_blackwell: bool,
    /// Output directory [default: summary CSV on stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct StableSampleArgs {
    /// Stability index, strictly inside (1, 2)
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: f64,
    /// Vector length s
    #[arg(long, default_value_t = 3)]
    pub s: usize,
    /// Number of vectors
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Cells of the discretised path on [0, 1/gamma]
    #[arg(long, default_value_t = 1000)]
    pub cells: usize,
    /// Root seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the tail constant of the jump-walk limit instead of the length limit
    #[arg(long)]
    pub walk: bool,
    /// Output directory [default: CSV on stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Theorem1Args {
    /// TOML config file; flags given on the command line override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stability index, strictly inside (1, 2)
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    /// Comma-separated grid of leaf counts
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Replicates per grid point [default: 1000]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Largest order r [default: 3]
    #[arg(long)]
    pub s: Option<usize>,
    /// Root seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cutoff exponent delta, with 1/alpha < delta < 1 [default: 0.8]
    #[arg(long, value_parser = parse_delta)]
    pub delta: Option<f64>,
    /// Cells of discretised stable paths [default: 1000]
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Batches for the standard error of the mean ratio [default: 20]
    #[arg(long)]
    pub batches: Option<usize>,
    /// Fraction of upper order statistics in the Hill estimate, in (0, 0.1] [default: 0.1]
    #[arg(long)]
    pub hill_k_frac: Option<f64>,
    /// Stable draws in the KS reference sample [default: 100000]
    #[arg(long)]
    pub reference_samples: Option<usize>,
    /// Replace holding times by their mean
    #[arg(long)]
    pub rao_blackwell: bool,
    /// Output directory [default: JSON on stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Theorem1Args {
    fn to_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => {
                let alpha = self
                    .alpha
                    .ok_or_else(|| Error::Config("--alpha is required without --config".into()))?;
                if self.n.is_empty() {
                    return Err(Error::Config("--n is required without --config".into()));
                }
                ExperimentConfig::new(alpha, self.n.clone(), 1000, 3, 0)
            }
        };
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if !self.n.is_empty() {
            cfg.n_grid = self.n.clone();
        }
        macro_rules! over {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$target = v; })*
            };
        }
        over!(reps => replicates, s => s, seed => seed_root, delta => delta, grid_n => grid_n,
              batches => batches, hill_k_frac => hill_k_frac, reference_samples => reference_samples);
        if self.rao_blackwell {
            cfg.rao_blackwell = true;
        }
        if self.out.is_some() {
            cfg.output_path = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flat `flag -> value` map of everything that was parsed.
pub fn provenance_flags(cli: &Cli) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let render = |v: &serde_json::Value| match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if let Ok(serde_json::Value::Object(top)) = serde_json::to_value(cli) {
        for (k, v) in top {
            match (k.as_str(), v) {
                ("command", serde_json::Value::Object(cmd)) => {
                    for (name, args) in cmd {
                        out.insert("command".into(), name);
                        if let serde_json::Value::Object(fields) = args {
                            for (f, fv) in fields {
                                out.insert(f, render(&fv));
                            }
                        }
                    }
                }
                (_, v) => {
                    out.insert(k.replace('_', "-"), render(&v));
                }
            }
        }
    }
    out
}

fn fmt_num(x: f64) -> String {
    let rounded: f64 = format!("{x:.12e}").parse().unwrap_or(x);
    format!("{rounded}")
}

/// Create `dir` and refuse to clobber any of `files` unless `force`.
fn prepare_outputs(dir: &Path, files: &[&str], force: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(Error::Config(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    Ok(paths)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn provenance_block(flags: &BTreeMap<String, String>) -> serde_json::Value {
    json!({ "crate_version": env!("CARGO_PKG_VERSION"), "flags": flags })
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn cmd_rates(a: &RatesArgs, out: &mut dyn Write) -> Result<()> {
    let model = AlphaModel::new(a.alpha)?;
    if a.m < 2 {
        return Err(Error::domain(format!("rates need m >= 2, got {}", a.m)));
    }
    if a.csv {
        return write_rate_row_csv(a.m, &model, out);
    }
    for k in 2..=a.m {
        writeln!(out, "lambda_{{{},{}}} = {}", a.m, k, fmt_num(merger_rate(a.m, k, &model)?)).map_err(stdout_err)?;
    }
    writeln!(out, "lambda_{} = {}", a.m, fmt_num(total_rate(a.m, &model)?)).map_err(stdout_err)
}

fn cmd_simulate(a: &SimulateArgs, force: bool, flags: &BTreeMap<String, String>, out: &mut dyn Write) -> Result<()> {
    let model = AlphaModel::new(a.alpha)?;
    let table = RateTable::new(&model, a.n)?;
    let path = simulate_path(a.n, a.s, &table, SeedRoot(a.seed), a.replicate)?;
    let ells = order_r_lengths(&path, &table, LengthMode::Exponential);
    writeln!(out, "tau_n = {}", path.tau()).map_err(stdout_err)?;
    for (r, v) in ells.values.iter().enumerate() {
        writeln!(out, "ell_{} = {}", r + 1, fmt_num(*v)).map_err(stdout_err)?;
    }
    if let Some(dir) = &a.out {
        let names: &[&str] = if a.record_full { &["simulate.json", "path.csv"] } else { &["simulate.json"] };
        let paths = prepare_outputs(dir, names, force)?;
        if a.record_full {
            let f = fs::File::create(&paths[1]).map_err(|e| Error::io(&paths[1], e))?;
            path.write_csv(std::io::BufWriter::new(f))?;
        }
        write_json(
            &paths[0],
            &json!({ "provenance": provenance_block(flags), "tau": path.tau(), "lengths": ells.values }),
        )?;
    }
    Ok(())
}

fn cmd_lengths(a: &LengthsArgs, force: bool, flags: &BTreeMap<String, String>, out: &mut dyn Write) -> Result<()> {
    let cfg = ExperimentConfig {
        delta: a.delta,
        rao_blackwell: a.rao_blackwell,
        ..ExperimentConfig::new(a.alpha, vec![a.n], a.reps, a.s, a.seed)
    };
    let rows = experiment::run_approx_suite(&cfg)?;
    match &a.out {
        None => write_length_rows(&rows, out),
        Some(dir) => {
            let paths = prepare_outputs(dir, &["lengths.csv", "lengths.json"], force)?;
            let f = fs::File::create(&paths[0]).map_err(|e| Error::io(&paths[0], e))?;
            write_length_rows(&rows, std::io::BufWriter::new(f))?;
            write_json(&paths[1], &json!({ "provenance": provenance_block(flags), "rows": rows.len() }))
        }
    }
}

fn cmd_approx_suite(a: &ApproxSuiteArgs, force: bool, flags: &BTreeMap<String, String>, out: &mut dyn Write) -> Result<()> {
    let cfg = ExperimentConfig {
        delta: a.delta,
        rao_blackwell: a.rao_blackwell,
        ..ExperimentConfig::new(a.alpha, a.n.clone(), a.reps, a.s, a.seed)
    };
    let rows = experiment::run_approx_suite(&cfg)?;
    let summary = experiment::summarise_chain(&rows, a.alpha)?;
    let write_summary = |w: &mut dyn Write| -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for s in &summary {
            wtr.serialize(s).map_err(|e| Error::csv("<approx summary>", e))?;
        }
        wtr.flush().map_err(|e| Error::io("<approx summary>", e))
    };
    match &a.out {
        None => write_summary(out),
        Some(dir) => {
            let paths = prepare_outputs(dir, &["approx_rows.csv", "approx_summary.csv", "approx_suite.json"], force)?;
            let f = fs::File::create(&paths[0]).map_err(|e| Error::io(&paths[0], e))?;
            write_length_rows(&rows, std::io::BufWriter::new(f))?;
            let mut f = fs::File::create(&paths[1]).map_err(|e| Error::io(&paths[1], e))?;
            write_summary(&mut f)?;
            write_json(&paths[2], &json!({ "provenance": provenance_block(flags), "summary": summary }))
        }
    }
}

fn cmd_stable_sample(a: &StableSampleArgs, force: bool, flags: &BTreeMap<String, String>, out: &mut dyn Write) -> Result<()> {
    use rayon::prelude::*;
    let model = AlphaModel::new(a.alpha)?;
    let spec = if a.walk { StableSpec::walk_limit(&model) } else { StableSpec::theorem(&model) };
    let seed = SeedRoot(a.seed);
    let rows: Vec<Vec<f64>> = (0..a.count as u64)
        .into_par_iter()
        .map(|i| limit_vector(&spec, a.s, a.cells, &mut seed.stream(i, Stream::Stable)))
        .collect::<Result<_>>()?;
    match &a.out {
        None => write_samples_csv(&rows, out),
        Some(dir) => {
            let paths = prepare_outputs(dir, &["stable_samples.csv", "stable_samples.json"], force)?;
            let f = fs::File::create(&paths[0]).map_err(|e| Error::io(&paths[0], e))?;
            write_samples_csv(&rows, std::io::BufWriter::new(f))?;
            write_json(
                &paths[1],
                &json!({ "provenance": provenance_block(flags), "sigma": spec.sigma(), "tail_constant": spec.tail_constant() }),
            )
        }
    }
}

fn cmd_theorem1(a: &Theorem1Args, force: bool, flags: &BTreeMap<String, String>, out: &mut dyn Write) -> Result<()> {
    let cfg = a.to_config()?;
    let outputs = match &cfg.output_path {
        Some(dir) => Some(prepare_outputs(dir, &["theorem1_summary.csv", "theorem1_summary.json"], force)?),
        None => None,
    };
    let table = experiment::run_theorem1_experiment(&cfg, flags.clone())?;
    match outputs {
        None => {
            let text = serde_json::to_string_pretty(&table)?;
            writeln!(out, "{text}").map_err(stdout_err)
        }
        Some(paths) => {
            table.write_csv(&paths[0])?;
            table.write_json(&paths[1])
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let flags = provenance_flags(cli);
    match &cli.command {
        Command::Rates(a) => cmd_rates(a, out),
        Command::Simulate(a) => cmd_simulate(a, cli.force, &flags, out),
        Command::Lengths(a) => cmd_lengths(a, cli.force, &flags, out),
        Command::ApproxSuite(a) => cmd_approx_suite(a, cli.force, &flags, out),
        Command::StableSample(a) => cmd_stable_sample(a, cli.force, &flags, out),
        Command::Theorem1(a) => cmd_theorem1(a, cli.force, &flags, out),
    }
}

/// Parse `argv`, run the command and return the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let pool = match cli.threads {
        Some(0) => {
            let _ = writeln!(err, "error: --threads must be >= 1");
            return EXIT_USAGE;
        }
        Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_RUNTIME;
        }
    };
    let mut buf = Vec::new();
    let res = pool.install(|| dispatch(&cli, &mut buf));
    if let Err(e) = out.write_all(&buf) {
        let _ = writeln!(err, "error: {e}");
        return EXIT_RUNTIME;
    }
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

/// Long flag names accepted by `subcommand`, without the leading dashes.
pub fn subcommand_flags(subcommand: &str) -> Vec<String> {
    let cmd = Cli::command();
    let mut names: Vec<String> = cmd
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .filter(|l| l != "help" && l != "version")
        .collect();
    if let Some(sub) = cmd.find_subcommand(subcommand) {
        names.extend(
            sub.get_arguments()
                .filter_map(|a| a.get_long().map(str::to_string))
                .filter(|l| l != "help" && l != "version"),
        );
    }
    names
}
