//! Trajectories of the Beta-coalescent block counting chain.
//!
//! Two exact simulators share the same jump and holding-time streams:
//!
//! * spectrum mode keeps only the counts `Z_1..Z_s` of blocks of size
//!   `r <= s` plus the number of larger blocks, so one jump costs `O(s)`;
//! * partition mode keeps labelled blocks and is meant for small `n`.
//!
//! A block larger than `s` can never shrink back, so spectrum mode is exact
//! for every `Z_{r,k}` with `r <= s`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Hypergeometric};

use crate::error::{Error, Result};
use crate::rates::{AlphaModel, RateTable};
use crate::rng::{PathStreams, SeedRoot};

/// Observer of one trajectory, fed level by level.
pub trait PathVisitor {
    /// State after `k` jumps (`k < τ_n`): block count, `Z_1..Z_s`, holding factor `W_k`.
    fn level(&mut self, k: usize, blocks: usize, small_counts: &[usize], hold: f64);

    /// The `k`-th jump (1-based) had size `Δ_k = delta`.
    fn jump(&mut self, _k: usize, _delta: usize) {}

    /// Called once with `τ_n` and the terminal spectrum.
    fn finish(&mut self, _tau: usize, _small_counts: &[usize], _big_count: usize) {}
}

/// Size-spectrum state: counts of blocks of size `1..=s` plus the larger ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpectrumState {
    small_counts: Vec<usize>,
    big_count: usize,
    block_count: usize,
    leaves_n: usize,
    // scratch: per-category draws (len s + 1)
    drawn: Vec<usize>,
}

impl SpectrumState {
    pub fn new(n: usize, s: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain(format!("need n >= 2 leaves, got {n}")));
        }
        if s == 0 || s > n {
            return Err(Error::domain(format!("need 1 <= s <= n, got s={s}, n={n}")));
        }
        let mut small_counts = vec![0; s];
        small_counts[0] = n;
        Ok(Self {
            small_counts,
            big_count: 0,
            block_count: n,
            leaves_n: n,
            drawn: vec![0; s + 1],
        })
    }

    pub fn small_counts(&self) -> &[usize] {
        &self.small_counts
    }

    pub fn big_count(&self) -> usize {
        self.big_count
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn leaves_n(&self) -> usize {
        self.leaves_n
    }

    /// Merge `delta + 1` blocks chosen uniformly among the current ones.
    pub fn merge<R: Rng + ?Sized>(&mut self, delta: usize, rng: &mut R) {
        let take = delta + 1;
        debug_assert!(take <= self.block_count);
        let s = self.small_counts.len();
        self.drawn.iter_mut().for_each(|x| *x = 0);
        draw_categories(
            &self.small_counts,
            self.big_count,
            self.block_count,
            take,
            rng,
            &mut self.drawn,
        );
        let mut size = 0usize;
        for (i, (c, x)) in self.small_counts.iter_mut().zip(&self.drawn).enumerate() {
            *c -= x;
            size += (i + 1) * x;
        }
        let big_drawn = self.drawn[s];
        self.big_count -= big_drawn;
        if big_drawn == 0 && size <= s {
            self.small_counts[size - 1] += 1;
        } else {
            self.big_count += 1;
        }
        self.block_count -= delta;
    }
}

/// Multivariate hypergeometric draw of `take` blocks over the categories
/// `small_counts[0..s]` and `big`; result accumulated into `out` (len s + 1).
fn draw_categories<R: Rng + ?Sized>(
    small: &[usize],
    big: usize,
    total: usize,
    take: usize,
    rng: &mut R,
    out: &mut [usize],
) {
    let count = |i: usize| if i < small.len() { small[i] } else { big };
    let ncat = small.len() + 1;
    if take == total {
        for (i, o) in out.iter_mut().enumerate().take(ncat) {
            *o = count(i);
        }
        return;
    }
    if take <= 8 {
        // few draws: pick blocks one at a time
        let mut remaining = total;
        for _ in 0..take {
            let mut u = rng.random_range(0..remaining);
            for (i, o) in out.iter_mut().enumerate().take(ncat) {
                let left = count(i) - *o;
                if u < left {
                    *o += 1;
                    break;
                }
                u -= left;
            }
            remaining -= 1;
        }
        return;
    }
    // category by category: conditional hypergeometric draws
    let mut population = total;
    let mut left = take;
    for (i, o) in out.iter_mut().enumerate().take(ncat) {
        if left == 0 {
            break;
        }
        let c = count(i);
        let x = if i + 1 == ncat || c == population {
            left
        } else if c == 0 {
            0
        } else {
            match Hypergeometric::new(population as u64, c as u64, left as u64) {
                Ok(h) => h.sample(rng) as usize,
                // the inversion sampler underflows on some large populations
                Err(_) => {
                    let mut x = 0;
                    for i in 0..left {
                        if rng.random_range(0..population - i) < c - x {
                            x += 1;
                        }
                    }
                    x
                }
            }
        };
        *o = x;
        left -= x;
        population -= c;
    }
}

/// Run one spectrum-mode trajectory, feeding `visitor`. Returns `τ_n`.
pub fn simulate_spectrum<V: PathVisitor>(
    n: usize,
    s: usize,
    table: &RateTable,
    streams: &mut PathStreams,
    visitor: &mut V,
) -> Result<usize> {
    let mut state = SpectrumState::new(n, s)?;
    let mut k = 0;
    while state.block_count > 1 {
        let w: f64 = Exp1.sample(&mut streams.holding);
        visitor.level(k, state.block_count, &state.small_counts, w);
        let delta = table.sample_jump(state.block_count, &mut streams.jumps);
        state.merge(delta, &mut streams.blocks);
        k += 1;
        visitor.jump(k, delta);
    }
    visitor.finish(k, &state.small_counts, state.big_count);
    Ok(k)
}

/// Re-run the block choices of a trajectory with its jump sizes held fixed.
pub fn resample_spectrum_given_jumps<R: Rng + ?Sized, V: PathVisitor>(
    n: usize,
    s: usize,
    deltas: &[usize],
    rng: &mut R,
    visitor: &mut V,
) -> Result<()> {
    let mut state = SpectrumState::new(n, s)?;
    for (i, &d) in deltas.iter().enumerate() {
        if d == 0 || d >= state.block_count {
            return Err(Error::domain(format!(
                "jump {} of size {d} impossible from {} blocks",
                i + 1,
                state.block_count
            )));
        }
        visitor.level(i, state.block_count, &state.small_counts, 1.0);
        state.merge(d, rng);
        visitor.jump(i + 1, d);
    }
    if state.block_count != 1 {
        return Err(Error::domain("jump sizes do not end in a single block"));
    }
    visitor.finish(deltas.len(), &state.small_counts, state.big_count);
    Ok(())
}

/// Jump sizes `Δ_1..Δ_{τ_n}` of the block counting chain alone.
pub fn simulate_jump_chain<R: Rng + ?Sized>(n: usize, table: &RateTable, rng: &mut R) -> Vec<usize> {
    let mut deltas = Vec::with_capacity(n / 2 + 1);
    let mut x = n;
    while x > 1 {
        let d = table.sample_jump(x, rng);
        deltas.push(d);
        x -= d;
    }
    deltas
}

/// Number of jumps `τ_n` until a single block is left.
pub fn count_jumps<R: Rng + ?Sized>(n: usize, table: &RateTable, rng: &mut R) -> usize {
    let mut x = n;
    let mut tau = 0;
    while x > 1 {
        x -= table.sample_jump(x, rng);
        tau += 1;
    }
    tau
}

/// A fully materialised trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalescentPath {
    alpha: f64,
    leaves_n: usize,
    s: usize,
    tau: usize,
    /// `deltas[k-1] = Δ_k`
    deltas: Vec<usize>,
    /// `X_0..X_τ`
    block_counts: Vec<usize>,
    /// row-major `(τ+1) × s`, row `k` holds `Z_{1,k}..Z_{s,k}`
    spectrum: Vec<usize>,
    /// `W_0..W_{τ-1}`
    hold: Vec<f64>,
}

impl CoalescentPath {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn leaves_n(&self) -> usize {
        self.leaves_n
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn deltas(&self) -> &[usize] {
        &self.deltas
    }

    /// `Δ_k` for `1 <= k <= τ_n`, and 0 beyond `τ_n`.
    pub fn delta(&self, k: usize) -> usize {
        if k == 0 || k > self.tau {
            0
        } else {
            self.deltas[k - 1]
        }
    }

    pub fn block_counts(&self) -> &[usize] {
        &self.block_counts
    }

    /// `X_k`, with `X_k = 1` for `k > τ_n`.
    pub fn blocks(&self, k: usize) -> usize {
        self.block_counts.get(k).copied().unwrap_or(1)
    }

    pub fn hold(&self) -> &[f64] {
        &self.hold
    }

    pub fn spectrum_row(&self, k: usize) -> &[usize] {
        &self.spectrum[k * self.s..(k + 1) * self.s]
    }

    /// `Z_{r,k}` for `1 <= r <= s`.
    pub fn z(&self, r: usize, k: usize) -> usize {
        self.spectrum[k * self.s + r - 1]
    }

    /// Dump as CSV with columns `k,X_k,Delta_k,Z_1..Z_s,W_k`.
    ///
    /// `Delta_0` is written as 0 and `W_τ` is left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let to_err = |e: csv::Error| Error::csv("<path>", e);
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string(), "X_k".into(), "Delta_k".into()];
        header.extend((1..=self.s).map(|r| format!("Z_{r}")));
        header.push("W_k".into());
        wtr.write_record(&header).map_err(to_err)?;
        for k in 0..=self.tau {
            let mut row = vec![
                k.to_string(),
                self.block_counts[k].to_string(),
                self.delta(k).to_string(),
            ];
            row.extend(self.spectrum_row(k).iter().map(|z| z.to_string()));
            row.push(self.hold.get(k).map(|w| format!("{w:.17e}")).unwrap_or_default());
            wtr.write_record(&row).map_err(to_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<path>", e))?;
        Ok(())
    }
}

/// Visitor that materialises a [`CoalescentPath`].
#[derive(Debug)]
pub struct PathRecorder {
    path: CoalescentPath,
}

impl PathRecorder {
    pub fn new(model: &AlphaModel, n: usize, s: usize) -> Self {
        Self {
            path: CoalescentPath {
                alpha: model.alpha(),
                leaves_n: n,
                s,
                tau: 0,
                deltas: Vec::new(),
                block_counts: Vec::new(),
                spectrum: Vec::new(),
                hold: Vec::new(),
            },
        }
    }

    pub fn into_path(self) -> CoalescentPath {
        self.path
    }
}

impl PathVisitor for PathRecorder {
    fn level(&mut self, _k: usize, blocks: usize, small_counts: &[usize], hold: f64) {
        self.path.block_counts.push(blocks);
        self.path.spectrum.extend_from_slice(small_counts);
        self.path.hold.push(hold);
    }

    fn jump(&mut self, _k: usize, delta: usize) {
        self.path.deltas.push(delta);
    }

    fn finish(&mut self, tau: usize, small_counts: &[usize], _big_count: usize) {
        self.path.tau = tau;
        self.path.block_counts.push(1);
        self.path.spectrum.extend_from_slice(small_counts);
    }
}

/// Simulate and materialise one spectrum-mode trajectory for `replicate`.
pub fn simulate_path(
    n: usize,
    s: usize,
    table: &RateTable,
    seed: SeedRoot,
    replicate: u64,
) -> Result<CoalescentPath> {
    let mut streams = seed.path_streams(replicate);
    let mut rec = PathRecorder::new(table.model(), n, s);
    simulate_spectrum(n, s, table, &mut streams, &mut rec)?;
    Ok(rec.into_path())
}

/// A partition of the leaf labels `1..=n` into blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPartition {
    blocks: Vec<Vec<u32>>,
}

impl LabeledPartition {
    pub fn singletons(n: usize) -> Self {
        Self {
            blocks: (1..=n as u32).map(|i| vec![i]).collect(),
        }
    }

    pub fn blocks(&self) -> &[Vec<u32>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Counts of blocks of size `1..=s`.
    pub fn spectrum(&self, s: usize) -> Vec<usize> {
        let mut z = vec![0; s];
        for b in &self.blocks {
            if b.len() <= s {
                z[b.len() - 1] += 1;
            }
        }
        z
    }

    /// Blocks pairwise disjoint and covering `1..=n`.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n + 1];
        for b in &self.blocks {
            for &l in b {
                let l = l as usize;
                if l == 0 || l > n || seen[l] {
                    return false;
                }
                seen[l] = true;
            }
        }
        seen[1..].iter().all(|&x| x)
    }

    fn merge<R: Rng + ?Sized>(&mut self, take: usize, rng: &mut R) {
        let mut idx = rand::seq::index::sample(rng, self.blocks.len(), take).into_vec();
        idx.sort_unstable_by(|a, b| b.cmp(a));
        let mut merged = Vec::new();
        for i in idx {
            merged.extend(self.blocks.swap_remove(i));
        }
        merged.sort_unstable();
        self.blocks.push(merged);
    }
}

pub const DEFAULT_PARTITION_CAP: usize = 1000;

/// Exact labelled simulation for small `n`: the partition after every jump
/// together with the induced path (spectrum restricted to sizes `<= s`).
pub fn simulate_partition(
    n: usize,
    s: usize,
    table: &RateTable,
    seed: SeedRoot,
    replicate: u64,
    cap: usize,
) -> Result<(Vec<LabeledPartition>, CoalescentPath)> {
    if n > cap {
        return Err(Error::domain(format!(
            "partition mode is limited to n <= {cap}, got {n}"
        )));
    }
    let mut streams = seed.path_streams(replicate);
    let mut rec = PathRecorder::new(table.model(), n, s);
    SpectrumState::new(n, s)?;
    let mut part = LabeledPartition::singletons(n);
    let mut chain = vec![part.clone()];
    let mut k = 0;
    while part.len() > 1 {
        let w: f64 = Exp1.sample(&mut streams.holding);
        rec.level(k, part.len(), &part.spectrum(s), w);
        let delta = table.sample_jump(part.len(), &mut streams.jumps);
        part.merge(delta + 1, &mut streams.blocks);
        k += 1;
        rec.jump(k, delta);
        chain.push(part.clone());
    }
    let last = part.spectrum(s);
    rec.finish(k, &last, usize::from(n > s));
    Ok((chain, rec.into_path()))
}

/// How holding times enter the order-`r` lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthMode {
    /// `Σ Z_{r,k} W_k / λ_{X_k}`
    Exponential,
    /// `Σ Z_{r,k} / λ_{X_k}` (holding factors replaced by their mean)
    RaoBlackwell,
}

/// `(ℓ_1, …, ℓ_s)` for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthVector {
    pub values: Vec<f64>,
}

impl LengthVector {
    pub fn get(&self, r: usize) -> f64 {
        self.values[r - 1]
    }
}

/// Order-`r` branch lengths `ℓ_1..ℓ_s` of a materialised path.
pub fn order_r_lengths(path: &CoalescentPath, table: &RateTable, mode: LengthMode) -> LengthVector {
    let mut values = vec![0.0; path.s];
    for k in 0..path.tau {
        let w = match mode {
            LengthMode::Exponential => path.hold[k],
            LengthMode::RaoBlackwell => 1.0,
        };
        let f = w / table.total_rate(path.block_counts[k]);
        for (v, &z) in values.iter_mut().zip(path.spectrum_row(k)) {
            *v += z as f64 * f;
        }
    }
    LengthVector { values }
}

/// Streaming lengths for large `n`: exponential, Rao-Blackwell and
/// `ℓ̃_r = αΓ(α) Σ_k Z_{r,k} / X_k^α`, all accumulated in one pass.
#[derive(Debug, Clone)]
pub struct LengthAccumulator<'a> {
    table: &'a RateTable,
    alpha: f64,
    pub exponential: Vec<f64>,
    pub rao_blackwell: Vec<f64>,
    pub tilde: Vec<f64>,
    pub tau: usize,
}

impl<'a> LengthAccumulator<'a> {
    pub fn new(table: &'a RateTable, s: usize) -> Self {
        Self {
            table,
            alpha: table.model().alpha(),
            exponential: vec![0.0; s],
            rao_blackwell: vec![0.0; s],
            tilde: vec![0.0; s],
            tau: 0,
        }
    }
}

impl PathVisitor for LengthAccumulator<'_> {
    fn level(&mut self, _k: usize, blocks: usize, small_counts: &[usize], hold: f64) {
        let inv_rate = 1.0 / self.table.total_rate(blocks);
        let inv_pow = (blocks as f64).powf(-self.alpha);
        for (r, &z) in small_counts.iter().enumerate() {
            if z == 0 {
                continue;
            }
            let z = z as f64;
            self.rao_blackwell[r] += z * inv_rate;
            self.exponential[r] += z * hold * inv_rate;
            self.tilde[r] += z * inv_pow;
        }
    }

    fn finish(&mut self, tau: usize, _small: &[usize], _big: usize) {
        self.tau = tau;
        let c = self.table.model().alpha_gamma_alpha();
        self.tilde.iter_mut().for_each(|t| *t *= c);
    }
}

/// The centred, rescaled walk `S^{(n)}_{k/n} = n^{-1/α} Σ_{i<=k} (Δ_i - γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledWalk {
    n: usize,
    gamma: f64,
    scale: f64,
    values: Vec<f64>,
}

impl RescaledWalk {
    /// `n^{1/α}`
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn tau(&self) -> usize {
        self.values.len() - 1
    }

    /// `S^{(n)}` at level `k`; frozen at `τ_n` beyond it.
    pub fn at_level(&self, k: usize) -> f64 {
        self.values[k.min(self.values.len() - 1)]
    }

    /// `S^{(n)}_t = S^{(n)}` at level `⌊nt⌋ ∧ τ_n`.
    pub fn at(&self, t: f64) -> f64 {
        let k = (self.n as f64 * t).floor().max(0.0) as usize;
        self.at_level(k)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

pub fn rescaled_walk(path: &CoalescentPath) -> RescaledWalk {
    rescaled_walk_from_jumps(path.leaves_n, path.alpha, &path.deltas)
}

pub fn rescaled_walk_from_jumps(n: usize, alpha: f64, deltas: &[usize]) -> RescaledWalk {
    let gamma = 1.0 / (alpha - 1.0);
    let scale = (n as f64).powf(1.0 / alpha);
    let mut values = Vec::with_capacity(deltas.len() + 1);
    values.push(0.0);
    let mut merged: u64 = 0;
    for (i, &d) in deltas.iter().enumerate() {
        merged += d as u64;
        values.push((merged as f64 - gamma * (i + 1) as f64) / scale);
    }
    RescaledWalk {
        n,
        gamma,
        scale,
        values,
    }
}
