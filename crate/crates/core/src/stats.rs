//! Estimators: sample ACF, aggregated metaorder-length distributions and
//! log-log power-law fits.

use std::collections::BTreeMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::engine::{Observer, Population, SimulationOutput};
use crate::error::{Error, Result};
use crate::theory::{AcfCurve, CurveKind};

/// Exact lagged product sums `sum_t x_t x_{t+tau}`, `tau = 0..=max_lag`, of an
/// integer-valued stream.
///
/// Values are consumed in overlapping FFT blocks. Every block sum is an
/// integer, so rounding it makes the result exact and independent of how the
/// stream was chunked.
struct LaggedSums {
    max_lag: usize,
    block: usize,
    size: usize,
    pending: Vec<f64>,
    sums: Vec<i64>,
    total: u64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    xa: Vec<Complex64>,
    ya: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl LaggedSums {
    fn new(max_lag: usize) -> Self {
        let size = (4 * (max_lag + 1)).next_power_of_two().max(4096);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        LaggedSums {
            max_lag,
            block: size - max_lag,
            size,
            pending: Vec::with_capacity(size),
            sums: vec![0; max_lag + 1],
            total: 0,
            fwd,
            inv,
            xa: vec![Complex64::default(); size],
            ya: vec![Complex64::default(); size],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    fn push(&mut self, values: impl IntoIterator<Item = f64>) {
        let window = self.block + self.max_lag;
        for v in values {
            self.pending.push(v);
            self.total += 1;
            if self.pending.len() == window {
                self.process(self.block);
            }
        }
    }

    /// Adds the products whose left element is in `pending[..nx]`, then drops those elements.
    fn process(&mut self, nx: usize) {
        let ny = self.pending.len();
        if nx * self.max_lag.min(ny) < 50_000 {
            for t in 0..nx {
                let a = self.pending[t];
                let hi = (t + self.max_lag).min(ny - 1);
                for (tau, &b) in self.pending[t..=hi].iter().enumerate() {
                    self.sums[tau] += (a * b) as i64;
                }
            }
        } else {
            for (i, c) in self.xa.iter_mut().enumerate() {
                *c = Complex64::new(if i < nx { self.pending[i] } else { 0.0 }, 0.0);
            }
            for (i, c) in self.ya.iter_mut().enumerate() {
                *c = Complex64::new(if i < ny { self.pending[i] } else { 0.0 }, 0.0);
            }
            self.fwd.process_with_scratch(&mut self.xa, &mut self.scratch);
            self.fwd.process_with_scratch(&mut self.ya, &mut self.scratch);
            for (x, y) in self.xa.iter_mut().zip(&self.ya) {
                *x = x.conj() * y;
            }
            self.inv.process_with_scratch(&mut self.xa, &mut self.scratch);
            let norm = 1.0 / self.size as f64;
            for (s, c) in self.sums.iter_mut().zip(&self.xa) {
                *s += (c.re * norm).round() as i64;
            }
        }
        self.pending.drain(..nx);
    }

    fn finish(mut self) -> (Vec<i64>, u64) {
        while !self.pending.is_empty() {
            let nx = self.block.min(self.pending.len());
            self.process(nx);
        }
        (self.sums, self.total)
    }
}

/// Streaming sample ACF of a +1/-1 series, `C_tau = sum eps_t eps_{t+tau} / (T - tau)`.
pub struct AcfAccumulator {
    inner: LaggedSums,
}

impl AcfAccumulator {
    pub fn new(max_lag: usize) -> Self {
        AcfAccumulator {
            inner: LaggedSums::new(max_lag),
        }
    }

    pub fn max_lag(&self) -> usize {
        self.inner.max_lag
    }

    pub fn len(&self) -> u64 {
        self.inner.total
    }

    pub fn is_empty(&self) -> bool {
        self.inner.total == 0
    }

    pub fn push(&mut self, signs: &[i8]) {
        self.inner.push(signs.iter().map(|&s| s as f64));
    }

    /// Raw lagged product sums for `tau = 0..=max_lag`, and the series length.
    pub fn finish_sums(self) -> (Vec<i64>, u64) {
        self.inner.finish()
    }

    /// The ACF on lags `1..=max_lag` with per-lag standard errors `1/sqrt(T - tau)`.
    pub fn finish(self) -> Result<AcfCurve> {
        let max_lag = self.inner.max_lag;
        let (sums, total) = self.finish_sums();
        if total as u128 <= 10 * max_lag as u128 {
            return Err(Error::SeriesTooShort {
                len: total as usize,
                max_lag,
            });
        }
        let lags: Vec<u64> = (1..=max_lag as u64).collect();
        let values = lags.iter().map(|&l| sums[l as usize] as f64 / (total - l) as f64).collect();
        let stderr = lags.iter().map(|&l| 1.0 / ((total - l) as f64).sqrt()).collect();
        AcfCurve::new(lags, values, CurveKind::Simulated, Some(stderr))
    }
}

impl Observer for AcfAccumulator {
    fn on_signs(&mut self, signs: &[i8]) {
        self.push(signs);
    }
}

/// Large-lag ACF from the series of sums over consecutive blocks of `width` signs.
///
/// The lag-`k` product mean of the block sums, divided by `width^2`, is the
/// triangular-kernel average of `C` over `k*width +- width`. At lags much larger
/// than `width` this equals `C(k*width)` up to smoothing, at a cost set by
/// `T / width` instead of `T`.
pub struct CoarseAcfAccumulator {
    width: u64,
    partial: i64,
    filled: u64,
    inner: LaggedSums,
}

impl CoarseAcfAccumulator {
    /// Lags `width, 2 width, ..., max_blocks * width`.
    pub fn new(width: u64, max_blocks: usize) -> Self {
        assert!(width >= 1);
        CoarseAcfAccumulator {
            width,
            partial: 0,
            filled: 0,
            inner: LaggedSums::new(max_blocks),
        }
    }

    pub fn push(&mut self, signs: &[i8]) {
        let mut out = Vec::with_capacity(signs.len() / self.width as usize + 1);
        for &s in signs {
            self.partial += s as i64;
            self.filled += 1;
            if self.filled == self.width {
                out.push(self.partial as f64);
                self.partial = 0;
                self.filled = 0;
            }
        }
        self.inner.push(out);
    }

    pub fn finish(self) -> Result<AcfCurve> {
        let w = self.width;
        let max_blocks = self.inner.max_lag;
        let (sums, n) = self.inner.finish();
        if n as u128 <= 10 * max_blocks as u128 {
            return Err(Error::SeriesTooShort {
                len: (n * w) as usize,
                max_lag: max_blocks * w as usize,
            });
        }
        let wf = (w * w) as f64;
        let lags: Vec<u64> = (1..=max_blocks as u64).map(|k| k * w).collect();
        let values = (1..=max_blocks)
            .map(|k| sums[k] as f64 / (n - k as u64) as f64 / wf)
            .collect();
        let stderr = (1..=max_blocks as u64)
            .map(|k| 1.0 / (((n - k) * w) as f64).sqrt())
            .collect();
        AcfCurve::new(lags, values, CurveKind::Simulated, Some(stderr))
    }
}

impl Observer for CoarseAcfAccumulator {
    fn on_signs(&mut self, signs: &[i8]) {
        self.push(signs);
    }
}

/// Sample ACF of a stored sign series.
pub fn acf_estimate(signs: &[i8], max_lag: usize) -> Result<AcfCurve> {
    if signs.len() <= 10 * max_lag {
        return Err(Error::SeriesTooShort {
            len: signs.len(),
            max_lag,
        });
    }
    let mut acc = AcfAccumulator::new(max_lag);
    acc.push(signs);
    acc.finish()
}

/// Mean-subtracted, variance-normalised ACF for general real data.
pub fn acf_estimate_centered(data: &[f64], max_lag: usize) -> Result<AcfCurve> {
    let n = data.len();
    if n <= 10 * max_lag {
        return Err(Error::SeriesTooShort { len: n, max_lag });
    }
    let mean = data.iter().sum::<f64>() / n as f64;
    let size = (n + max_lag + 1).next_power_of_two();
    let mut buf: Vec<Complex64> = (0..size)
        .map(|i| Complex64::new(if i < n { data[i] - mean } else { 0.0 }, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex64::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re / size as f64 / n as f64;
    if !(c0 > 0.0) {
        return Err(Error::Numerical("series has zero variance".into()));
    }
    let lags: Vec<u64> = (1..=max_lag as u64).collect();
    let values = lags
        .iter()
        .map(|&l| buf[l as usize].re / size as f64 / (n as u64 - l) as f64 / c0)
        .collect();
    let stderr = lags.iter().map(|&l| 1.0 / ((n as u64 - l) as f64).sqrt()).collect();
    AcfCurve::new(lags, values, CurveKind::Simulated, Some(stderr))
}

/// Mean over replicas; the error is the replica spread `sd / sqrt(K)` for `K >= 2`.
pub fn average_curves(curves: &[AcfCurve]) -> Result<AcfCurve> {
    let first = curves.first().ok_or_else(|| Error::domain("no curves to average"))?;
    if curves.iter().any(|c| c.lags != first.lags) {
        return Err(Error::domain("replica curves have different lag grids"));
    }
    let k = curves.len();
    if k == 1 {
        return Ok(first.clone());
    }
    let kf = k as f64;
    let n = first.len();
    let mut mean = vec![0.0; n];
    for c in curves {
        for (m, v) in mean.iter_mut().zip(&c.values) {
            *m += v / kf;
        }
    }
    let mut var = vec![0.0; n];
    for c in curves {
        for ((s, v), m) in var.iter_mut().zip(&c.values).zip(&mean) {
            *s += (v - m).powi(2) / (kf - 1.0);
        }
    }
    let se = var.iter().map(|v| (v / kf).sqrt()).collect();
    AcfCurve::new(first.lags.clone(), mean, first.kind, Some(se))
}

/// Averages a dense curve over `[g / sqrt(r), g sqrt(r)]` around each grid lag `g`.
///
/// The reported error is the mean per-lag error in the band (neighbouring
/// lags of a long-memory series are strongly correlated).
pub fn smooth_on_grid(dense: &AcfCurve, grid: &[u64], ratio: f64) -> Result<AcfCurve> {
    let half = ratio.sqrt();
    let mut lags = Vec::new();
    let mut values = Vec::new();
    let mut errs = Vec::new();
    for &g in grid {
        let lo = ((g as f64 / half).ceil() as u64).max(1);
        let hi = (g as f64 * half).floor() as u64;
        let a = dense.lags.partition_point(|&l| l < lo.min(g));
        let b = dense.lags.partition_point(|&l| l <= hi.max(g));
        if a >= b {
            continue;
        }
        let cnt = (b - a) as f64;
        lags.push(g);
        values.push(dense.values[a..b].iter().sum::<f64>() / cnt);
        if let Some(se) = &dense.stderr {
            errs.push(se[a..b].iter().sum::<f64>() / cnt);
        }
    }
    let stderr = dense.stderr.as_ref().map(|_| errs);
    AcfCurve::new(lags, values, dense.kind, stderr)
}

/// Histogram of metaorder lengths with PDF and CCDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub support: Vec<u64>,
    pub counts: Vec<u64>,
    pub pdf: Vec<f64>,
    /// `ccdf[j] = P(L >= support[j])`.
    pub ccdf: Vec<f64>,
    pub total: u64,
}

impl EmpiricalDistribution {
    pub fn from_counts(counts: impl IntoIterator<Item = (u64, u64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (l, c) in counts {
            if c > 0 {
                *map.entry(l).or_insert(0u64) += c;
            }
        }
        let total: u64 = map.values().sum();
        if total == 0 {
            return Err(Error::EmptyLog);
        }
        let support: Vec<u64> = map.keys().copied().collect();
        let counts: Vec<u64> = map.values().copied().collect();
        let pdf: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let mut ccdf = vec![0.0; counts.len()];
        let mut above = 0u64;
        for j in (0..counts.len()).rev() {
            above += counts[j];
            ccdf[j] = above as f64 / total as f64;
        }
        Ok(EmpiricalDistribution {
            support,
            counts,
            pdf,
            ccdf,
            total,
        })
    }

    pub fn from_samples(samples: impl IntoIterator<Item = u64>) -> Result<Self> {
        EmpiricalDistribution::from_counts(samples.into_iter().map(|l| (l, 1)))
    }

    /// `P(L >= len)`.
    pub fn ccdf_at(&self, len: u64) -> f64 {
        let j = self.support.partition_point(|&s| s < len);
        self.ccdf.get(j).copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> u64 {
        *self.support.last().expect("nonempty")
    }

    /// Density per unit length on logarithmic bins (`per_decade` bins per decade),
    /// as `(geometric bin centre, density)`; empty bins are omitted.
    pub fn log_binned_pdf(&self, per_decade: usize) -> Vec<(f64, f64)> {
        let step = 10f64.powf(1.0 / per_decade as f64);
        let mut out = Vec::new();
        let mut j = 0;
        let mut k = 0i32;
        let max = self.max();
        loop {
            let lo = step.powi(k);
            let hi = step.powi(k + 1);
            if lo > max as f64 {
                break;
            }
            // integers in [lo, hi)
            let ilo = lo.ceil() as u64;
            let ihi = hi.ceil() as u64;
            k += 1;
            if ihi <= ilo {
                continue;
            }
            let mut c = 0u64;
            while j < self.support.len() && self.support[j] < ihi {
                if self.support[j] >= ilo {
                    c += self.counts[j];
                }
                j += 1;
            }
            if c > 0 {
                let width = (ihi - ilo) as f64;
                let centre = (ilo as f64 * (ihi - 1) as f64).sqrt();
                out.push((centre, c as f64 / self.total as f64 / width));
            }
        }
        out
    }
}

/// Streams metaorder completions of selected traders into a histogram.
#[derive(Debug, Clone)]
pub struct LengthHistogram {
    selected: Vec<bool>,
    dense: Vec<u64>,
    sparse: BTreeMap<u64, u64>,
}

const DENSE_LENGTHS: usize = 1 << 20;

impl LengthHistogram {
    pub fn new(population_size: usize, ids: &[usize]) -> Self {
        let mut selected = vec![false; population_size];
        for &i in ids {
            if i < population_size {
                selected[i] = true;
            }
        }
        LengthHistogram {
            selected,
            dense: vec![0; 64],
            sparse: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, length: u64) {
        let l = length as usize;
        if l < DENSE_LENGTHS {
            if l >= self.dense.len() {
                self.dense.resize((l + 1).next_power_of_two(), 0);
            }
            self.dense[l] += 1;
        } else {
            *self.sparse.entry(length).or_insert(0) += 1;
        }
    }

    pub fn merge(&mut self, other: &LengthHistogram) {
        if other.dense.len() > self.dense.len() {
            self.dense.resize(other.dense.len(), 0);
        }
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            *a += b;
        }
        for (l, c) in &other.sparse {
            *self.sparse.entry(*l).or_insert(0) += c;
        }
    }

    pub fn distribution(&self) -> Result<EmpiricalDistribution> {
        let dense = self.dense.iter().enumerate().map(|(l, &c)| (l as u64, c));
        EmpiricalDistribution::from_counts(dense.chain(self.sparse.iter().map(|(&l, &c)| (l, c))))
    }
}

impl Observer for LengthHistogram {
    fn on_metaorder(&mut self, trader: usize, length: u64) {
        if self.selected.get(trader).copied().unwrap_or(false) {
            self.add(length);
        }
    }
}

/// Pooled distribution of completed metaorder lengths over `ids`.
pub fn aggregate_metaorder_distribution(output: &SimulationOutput, ids: &[usize]) -> Result<EmpiricalDistribution> {
    let mut hist = LengthHistogram::new(output.metaorder_log.len(), ids);
    for &i in ids {
        if let Some(log) = output.metaorder_log.get(i) {
            for &l in log {
                hist.add(l);
            }
        }
    }
    hist.distribution()
}

/// Share of each trader in the pooled metaorder log: `(lambda_i/<L_i>) / sum_j (lambda_j/<L_j>)`.
pub fn aggregated_weights(population: &Population, ids: &[usize]) -> Result<Vec<f64>> {
    let traders = population.traders();
    let mut rates = Vec::with_capacity(ids.len());
    for &i in ids {
        let t = traders.get(i).ok_or_else(|| Error::domain(format!("no trader {i}")))?;
        rates.push(t.intensity / t.law.mean_length()?);
    }
    let total: f64 = rates.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("selected traders have zero total intensity"));
    }
    Ok(rates.into_iter().map(|r| r / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub window: [f64; 2],
    /// Residual root-mean-square in natural-log space.
    pub rms: f64,
    pub n_points: usize,
    /// Points in the window dropped for being nonpositive.
    #[serde(default)]
    pub excluded: usize,
}

pub const MIN_FIT_POINTS: usize = 5;

/// Least-squares fit of `log y = log c - exponent * log x` over `x in [lo, hi]`.
pub fn fit_powerlaw(points: impl IntoIterator<Item = (f64, f64)>, window: (f64, f64)) -> Result<PowerLawFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::domain(format!("fit window [{lo}, {hi}] is not a positive interval")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = 0;
    for (x, y) in points {
        if x < lo || x > hi {
            continue;
        }
        if y > 0.0 && y.is_finite() {
            xs.push(x.ln());
            ys.push(y.ln());
        } else {
            excluded += 1;
        }
    }
    let n = xs.len();
    if n < MIN_FIT_POINTS {
        return Err(Error::InsufficientPoints {
            found: n,
            required: MIN_FIT_POINTS,
        });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(PowerLawFit {
        exponent: -slope,
        prefactor: intercept.exp(),
        window: [lo, hi],
        rms: (rss / nf).sqrt(),
        n_points: n,
        excluded,
    })
}

/// Prefactor of `c x^{-exponent}` with the exponent held fixed: the geometric
/// mean of `y x^{exponent}` over the positive points in the window.
pub fn fit_prefactor(points: impl IntoIterator<Item = (f64, f64)>, window: (f64, f64), exponent: f64) -> Result<f64> {
    let logs: Vec<f64> = points
        .into_iter()
        .filter(|&(x, y)| x >= window.0 && x <= window.1 && y > 0.0 && y.is_finite())
        .map(|(x, y)| y.ln() + exponent * x.ln())
        .collect();
    if logs.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientPoints {
            found: logs.len(),
            required: MIN_FIT_POINTS,
        });
    }
    Ok((logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

pub fn fit_curve(curve: &AcfCurve, window: (f64, f64)) -> Result<PowerLawFit> {
    fit_powerlaw(curve.points(), window)
}

/// Tail fit of a length distribution on its log-binned density.
pub fn fit_distribution(dist: &EmpiricalDistribution, window: (f64, f64)) -> Result<PowerLawFit> {
    fit_powerlaw(dist.log_binned_pdf(LOG_BINS_PER_DECADE), window)
}

pub const LOG_BINS_PER_DECADE: usize = 8;

/// `[10^2, min(10^4, T/100)]`.
pub fn default_acf_window(steps: u64) -> (f64, f64) {
    (1e2, (steps as f64 / 100.0).min(1e4))
}

/// `[10, 0.1 L_max]`.
pub fn default_distribution_window(dist: &EmpiricalDistribution) -> (f64, f64) {
    (10.0, 0.1 * dist.max() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::MetaorderLaw;
    use crate::engine::{simulate, InitMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn direct(signs: &[i8], lag: usize) -> f64 {
        let s: i64 = (0..signs.len() - lag).map(|t| (signs[t] * signs[t + lag]) as i64).sum();
        s as f64 / (signs.len() - lag) as f64
    }

    fn random_signs(n: usize, seed: u64) -> Vec<i8> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
    }

    #[test]
    fn acf_examples() {
        let c = acf_estimate(&vec![1i8; 2000], 50).unwrap();
        assert!(c.values.iter().all(|&v| v == 1.0));
        let alt: Vec<i8> = (0..2000).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        assert_eq!(acf_estimate(&alt, 10).unwrap().values[0], -1.0);
        let iid = random_signs(1_000_000, 1);
        let c = acf_estimate(&iid, 100).unwrap();
        assert!(c.values.iter().all(|v| v.abs() < 4e-3));
        assert!(matches!(acf_estimate(&iid[..1000], 100), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn fft_matches_direct_sum_exhaustively() {
        let signs = random_signs(100_000, 2);
        let max_lag = 3000;
        let c = acf_estimate(&signs, max_lag).unwrap();
        for lag in 1..=max_lag {
            assert!((c.values[lag - 1] - direct(&signs, lag)).abs() < 1e-10, "lag {lag}");
        }
    }

    #[test]
    fn streaming_is_chunking_invariant() {
        let signs = random_signs(300_000, 3);
        let whole = acf_estimate(&signs, 5000).unwrap();
        let mut acc = AcfAccumulator::new(5000);
        for chunk in signs.chunks(777) {
            acc.push(chunk);
        }
        assert_eq!(acc.finish().unwrap(), whole);
        for &lag in &[1usize, 17, 4096, 5000] {
            assert!((whole.values[lag - 1] - direct(&signs, lag)).abs() < 1e-10);
        }
    }

    #[test]
    fn coarse_acf_matches_block_sums() {
        let signs = random_signs(60_000, 5);
        let w = 7usize;
        let blocks: Vec<f64> = signs.chunks_exact(w).map(|c| c.iter().map(|&s| s as f64).sum()).collect();
        let mut acc = CoarseAcfAccumulator::new(w as u64, 300);
        for chunk in signs.chunks(999) {
            acc.push(chunk);
        }
        let c = acc.finish().unwrap();
        assert_eq!(c.lags[0], 7);
        assert_eq!(*c.lags.last().unwrap(), 2100);
        let n = blocks.len();
        for k in [1usize, 2, 50, 300] {
            let direct: f64 = (0..n - k).map(|j| blocks[j] * blocks[j + k]).sum::<f64>() / (n - k) as f64 / (w * w) as f64;
            assert!((c.values[k - 1] - direct).abs() < 1e-12, "k={k}");
        }
        // Width 1 is the ordinary estimator.
        let mut one = CoarseAcfAccumulator::new(1, 100);
        one.push(&signs);
        let dense = acf_estimate(&signs, 100).unwrap();
        assert_eq!(one.finish().unwrap().values, dense.values);
        let mut short = CoarseAcfAccumulator::new(10, 100);
        short.push(&signs[..5000]);
        assert!(matches!(short.finish(), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn coarse_acf_tracks_exact_theory() {
        let pop = crate::engine::Population::homogeneous(10, MetaorderLaw::exponential(20.0).unwrap()).unwrap();
        let mut acc = CoarseAcfAccumulator::new(10, 50);
        crate::engine::run_observed(&pop, 4_000_000, 2, &crate::engine::SimOptions::default(), &mut acc).unwrap();
        let c = acc.finish().unwrap();
        let exact = crate::theory::exact_acf_market(&pop, &c.lags).unwrap();
        for i in [0, 9, 19] {
            // The block estimator is a triangular average, nearly linear here.
            assert!((c.values[i] - exact.values[i]).abs() < 0.1 * exact.values[i], "lag {}", c.lags[i]);
        }
    }

    #[test]
    fn fixed_exponent_prefactor() {
        let pts: Vec<(f64, f64)> = (1..=50).map(|i| (i as f64 * 10.0, 0.3 * (i as f64 * 10.0).powf(-0.7))).collect();
        assert!((fit_prefactor(pts.iter().copied(), (1.0, 1e4), 0.7).unwrap() - 0.3).abs() < 1e-12);
        assert!(fit_prefactor(pts.iter().copied(), (1e5, 1e6), 0.7).is_err());
    }

    #[test]
    fn centered_variant() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let mut x = 0.0;
        let data: Vec<f64> = (0..20_000)
            .map(|_| {
                x = 0.8 * x + rng.random::<f64>() - 0.5;
                x + 3.0
            })
            .collect();
        let c = acf_estimate_centered(&data, 20).unwrap();
        let m = data.iter().sum::<f64>() / data.len() as f64;
        let c0 = data.iter().map(|v| (v - m).powi(2)).sum::<f64>() / data.len() as f64;
        let direct1: f64 = (0..data.len() - 1).map(|t| (data[t] - m) * (data[t + 1] - m)).sum::<f64>()
            / (data.len() - 1) as f64
            / c0;
        assert!((c.values[0] - direct1).abs() < 1e-10);
        assert!((c.values[0] - 0.8).abs() < 0.05);
    }

    #[test]
    fn averaging_and_smoothing() {
        let a = AcfCurve::new(vec![1, 2], vec![1.0, 2.0], CurveKind::Simulated, Some(vec![0.1, 0.1])).unwrap();
        let b = AcfCurve::new(vec![1, 2], vec![3.0, 2.0], CurveKind::Simulated, Some(vec![0.1, 0.1])).unwrap();
        let m = average_curves(&[a, b]).unwrap();
        assert_eq!(m.values, vec![2.0, 2.0]);
        assert!((m.stderr.as_ref().unwrap()[0] - 1.0).abs() < 1e-15);
        assert_eq!(m.stderr.as_ref().unwrap()[1], 0.0);
        let dense = AcfCurve::new((1..=100).collect(), (1..=100).map(|l| l as f64).collect(), CurveKind::Simulated, None).unwrap();
        let s = smooth_on_grid(&dense, &[1, 10, 100], 1.25).unwrap();
        assert_eq!(s.lags, vec![1, 10, 100]);
        assert_eq!(s.values[0], 1.0);
        assert!((s.values[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn distribution_examples() {
        let law = MetaorderLaw::tabulated(&[(3, 1.0)]).unwrap();
        let pop = Population::homogeneous(1, law).unwrap();
        let out = simulate(&pop, 3000, 1, InitMode::FreshDraw).unwrap();
        let d = aggregate_metaorder_distribution(&out, &[0]).unwrap();
        assert_eq!(d.support, vec![3]);
        assert_eq!(d.pdf, vec![1.0]);

        let pop = Population::homogeneous(1, MetaorderLaw::pareto(1.5).unwrap()).unwrap();
        let out = simulate(&pop, 3_000_000, 2, InitMode::Stationary).unwrap();
        let d = aggregate_metaorder_distribution(&out, &[0]).unwrap();
        assert!(d.total >= 1_000_000);
        let n = d.total as f64;
        let target = 10f64.powf(-1.5);
        assert!((d.ccdf_at(10) - target).abs() < 4.0 * (target * (1.0 - target) / n).sqrt());
        assert!((d.pdf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.ccdf[0], 1.0);
        for j in 0..d.support.len() {
            let tail: f64 = d.pdf[j..].iter().sum();
            assert!((tail - d.ccdf[j]).abs() < 1e-12);
        }

        let empty = simulate(&pop, 10, 3, InitMode::Stationary).unwrap();
        assert!(matches!(aggregate_metaorder_distribution(&empty, &[]), Err(Error::EmptyLog)));
    }

    #[test]
    fn weights_examples() {
        let e = |l: f64| MetaorderLaw::exponential(l).unwrap();
        let pop = Population::homogeneous(2, e(3.0)).unwrap();
        assert_eq!(aggregated_weights(&pop, &[0, 1]).unwrap(), vec![0.5, 0.5]);
        let pop = Population::new(vec![(0.8, e(3.0)), (0.2, e(3.0))]).unwrap();
        let w = aggregated_weights(&pop, &[0, 1]).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-15 && (w[1] - 0.2).abs() < 1e-15);
        let two = MetaorderLaw::tabulated(&[(2, 1.0)]).unwrap();
        let four = MetaorderLaw::tabulated(&[(4, 1.0)]).unwrap();
        let pop = Population::new(vec![(0.5, two), (0.5, four)]).unwrap();
        let w = aggregated_weights(&pop, &[0, 1]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        let bad = Population::homogeneous(1, MetaorderLaw::pareto(0.8).unwrap()).unwrap();
        assert!(matches!(aggregated_weights(&bad, &[0]), Err(Error::NonconvergentMean { .. })));
    }

    #[test]
    fn fit_examples() {
        let pts: Vec<(f64, f64)> = (10..=1000).map(|x| (x as f64, 2.0 * (x as f64).powf(-0.5))).collect();
        let f = fit_powerlaw(pts.iter().copied(), (10.0, 1000.0)).unwrap();
        assert!((f.exponent - 0.5).abs() < 1e-9);
        assert!((f.prefactor - 2.0).abs() < 1e-9);
        assert_eq!(f.n_points, 991);
        let with_zero = [(1.0, 1.0), (2.0, 0.0), (3.0, 0.5), (4.0, 0.2), (5.0, 0.1), (6.0, 0.1)];
        let f = fit_powerlaw(with_zero, (1.0, 6.0)).unwrap();
        assert_eq!((f.n_points, f.excluded), (5, 1));
        assert!(matches!(
            fit_powerlaw(with_zero, (1.0, 3.0)),
            Err(Error::InsufficientPoints { found: 2, .. })
        ));
        let json = serde_json::to_value(&f).unwrap();
        for k in ["exponent", "prefactor", "window", "rms", "n_points"] {
            assert!(json.get(k).is_some());
        }
    }

    #[test]
    fn fit_exact_powerlaw_acf() {
        use crate::theory::{default_lags, exact_acf_value};
        let law = MetaorderLaw::pareto(1.5).unwrap();
        let pts: Vec<(f64, f64)> = default_lags(10_000)
            .into_iter()
            .map(|t| (t as f64, exact_acf_value(0.1, &law, t).unwrap()))
            .collect();
        let f = fit_powerlaw(pts, (1e2, 1e4)).unwrap();
        assert!((f.exponent - 0.5).abs() < 0.05, "{}", f.exponent);
    }

    #[test]
    fn superposed_lengths_have_power_law_density() {
        use crate::distributions::allocate_decay_lengths;
        use crate::engine::{run_observed, SimOptions};
        let members = allocate_decay_lengths(1000, 1.5)
            .unwrap()
            .into_iter()
            .map(|l| (1e-3, MetaorderLaw::exponential(l).unwrap()))
            .collect();
        let pop = Population::new(members).unwrap();
        let ids: Vec<usize> = (0..1000).collect();
        let mut hist = LengthHistogram::new(1000, &ids);
        run_observed(&pop, 20_000_000, 5, &SimOptions::new(InitMode::Stationary), &mut hist).unwrap();
        let d = hist.distribution().unwrap();
        let f = fit_distribution(&d, (10.0, 1e3)).unwrap();
        assert!((f.exponent - 2.5).abs() < 0.2, "{}", f.exponent);
    }

    proptest! {
        #[test]
        fn fit_is_scale_equivariant(k in 1e-3f64..1e3, g in 0.1f64..2.0, noise in proptest::collection::vec(-0.1f64..0.1, 20)) {
            let pts: Vec<(f64, f64)> = noise.iter().enumerate().map(|(i, e)| {
                let x = 10f64.powf(1.0 + i as f64 / 10.0);
                (x, x.powf(-g) * e.exp())
            }).collect();
            let a = fit_powerlaw(pts.iter().copied(), (1.0, 1e4)).unwrap();
            let b = fit_powerlaw(pts.iter().map(|&(x, y)| (x, k * y)), (1.0, 1e4)).unwrap();
            prop_assert!((a.exponent - b.exponent).abs() < 1e-12);
            prop_assert!((b.prefactor / a.prefactor / k - 1.0).abs() < 1e-12);
        }

        #[test]
        fn spot_lags_match_direct(seed in 0u64..1000, lag in 1usize..2000) {
            let signs = random_signs(50_000, seed);
            let c = acf_estimate(&signs, 2000).unwrap();
            prop_assert!((c.values[lag - 1] - direct(&signs, lag)).abs() < 1e-10);
        }
    }
}
