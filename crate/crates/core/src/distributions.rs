//! Metaorder-length laws and deterministic parameter allocation for
//! heterogeneous populations.

use rand::Rng;
use rand_distr::{Distribution, Zeta};
use serde::{Deserialize, Serialize};

use crate::alias::AliasTable;
use crate::error::{Error, Result};
use crate::special::{hurwitz_zeta, zeta};

/// Largest metaorder length a tabulated law may carry.
pub const TABULATED_MAX_SUPPORT: u64 = 1_000_000;

/// Distribution of a trader's metaorder length `L >= 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "LawSpec", into = "LawSpec")]
pub enum MetaorderLaw {
    /// Every metaorder has length one (a random trader).
    Degenerate,
    /// CCDF `exp(-(L - 1) / decay_length)`.
    Exponential { decay_length: f64 },
    /// CCDF `L^{-alpha}`.
    DiscretePareto { alpha: f64 },
    /// Finite-support law given by its PMF.
    Tabulated(TabulatedLaw),
}

#[derive(Debug, Clone)]
pub struct TabulatedLaw {
    /// `pmf[L - 1]`.
    pmf: Vec<f64>,
    /// `ccdf[L - 1]`, with one trailing zero at `L = max + 1`.
    ccdf: Vec<f64>,
    /// `ccdf_tail[R - 1] = sum_{L >= R} ccdf(L)`.
    ccdf_tail: Vec<f64>,
    lengths: AliasTable,
    remaining: AliasTable,
}

impl TabulatedLaw {
    pub fn new(entries: &[(u64, f64)]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidLaw("tabulated pmf is empty".into()));
        }
        let max = entries.iter().map(|e| e.0).max().unwrap_or(0);
        if entries.iter().any(|e| e.0 == 0) || max > TABULATED_MAX_SUPPORT {
            return Err(Error::InvalidLaw(format!(
                "tabulated support must lie in [1, {TABULATED_MAX_SUPPORT}]"
            )));
        }
        let mut pmf = vec![0.0; max as usize];
        for &(l, p) in entries {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::InvalidLaw(format!("probability {p} at L={l} is not a finite nonnegative number")));
            }
            pmf[l as usize - 1] += p;
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidLaw(format!("tabulated pmf sums to {total}, not 1")));
        }
        for p in &mut pmf {
            *p /= total;
        }
        while pmf.last() == Some(&0.0) {
            pmf.pop();
        }
        let n = pmf.len();
        let mut ccdf = vec![0.0; n + 1];
        for l in (0..n).rev() {
            ccdf[l] = ccdf[l + 1] + pmf[l];
        }
        let mut ccdf_tail = vec![0.0; n + 1];
        for r in (0..n).rev() {
            ccdf_tail[r] = ccdf_tail[r + 1] + ccdf[r];
        }
        let lengths = AliasTable::new(&pmf);
        let remaining = AliasTable::new(&ccdf[..n]);
        Ok(TabulatedLaw {
            pmf,
            ccdf,
            ccdf_tail,
            lengths,
            remaining,
        })
    }

    pub fn max_length(&self) -> u64 {
        self.pmf.len() as u64
    }

    pub fn entries(&self) -> Vec<(u64, f64)> {
        self.pmf
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| (i as u64 + 1, *p))
            .collect()
    }
}

/// Wire form of a law, e.g. `{"kind":"pareto","alpha":1.5}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LawSpec {
    Degenerate,
    Exponential { decay_length: f64 },
    Pareto { alpha: f64 },
    Tabulated { pmf: Vec<(u64, f64)> },
}

impl TryFrom<LawSpec> for MetaorderLaw {
    type Error = Error;

    fn try_from(spec: LawSpec) -> Result<Self> {
        match spec {
            LawSpec::Degenerate => Ok(MetaorderLaw::Degenerate),
            LawSpec::Exponential { decay_length } => MetaorderLaw::exponential(decay_length),
            LawSpec::Pareto { alpha } => MetaorderLaw::pareto(alpha),
            LawSpec::Tabulated { pmf } => MetaorderLaw::tabulated(&pmf),
        }
    }
}

impl From<MetaorderLaw> for LawSpec {
    fn from(law: MetaorderLaw) -> Self {
        match law {
            MetaorderLaw::Degenerate => LawSpec::Degenerate,
            MetaorderLaw::Exponential { decay_length } => LawSpec::Exponential { decay_length },
            MetaorderLaw::DiscretePareto { alpha } => LawSpec::Pareto { alpha },
            MetaorderLaw::Tabulated(t) => LawSpec::Tabulated { pmf: t.entries() },
        }
    }
}

impl MetaorderLaw {
    pub fn exponential(decay_length: f64) -> Result<Self> {
        if !(decay_length > 0.0 && decay_length.is_finite()) {
            return Err(Error::InvalidLaw(format!("decay length must be positive and finite, got {decay_length}")));
        }
        Ok(MetaorderLaw::Exponential { decay_length })
    }

    /// Discrete Pareto law. Any `alpha > 0` is a valid law; the mean exists only for `alpha > 1`.
    pub fn pareto(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidLaw(format!("tail exponent must be positive and finite, got {alpha}")));
        }
        Ok(MetaorderLaw::DiscretePareto { alpha })
    }

    pub fn tabulated(entries: &[(u64, f64)]) -> Result<Self> {
        Ok(MetaorderLaw::Tabulated(TabulatedLaw::new(entries)?))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MetaorderLaw::Degenerate => "degenerate",
            MetaorderLaw::Exponential { .. } => "exponential",
            MetaorderLaw::DiscretePareto { .. } => "pareto",
            MetaorderLaw::Tabulated(_) => "tabulated",
        }
    }

    /// Largest length with positive probability, if the support is finite.
    pub fn max_support(&self) -> Option<u64> {
        match self {
            MetaorderLaw::Degenerate => Some(1),
            MetaorderLaw::Tabulated(t) => Some(t.max_length()),
            _ => None,
        }
    }

    /// `rho(L)`; zero for `L = 0`.
    pub fn pmf(&self, len: u64) -> f64 {
        if len == 0 {
            return 0.0;
        }
        match self {
            MetaorderLaw::Degenerate => (len == 1) as u8 as f64,
            MetaorderLaw::Exponential { decay_length } => {
                let k = 1.0 / decay_length;
                (-((len - 1) as f64) * k).exp() * -(-k).exp_m1()
            }
            MetaorderLaw::DiscretePareto { alpha } => {
                // L^{-a} - (L+1)^{-a} = L^{-a} (1 - (1 + 1/L)^{-a})
                let l = len as f64;
                l.powf(-alpha) * -(-alpha * (1.0 / l).ln_1p()).exp_m1()
            }
            MetaorderLaw::Tabulated(t) => t.pmf.get(len as usize - 1).copied().unwrap_or(0.0),
        }
    }

    /// `rho_>=(L) = sum_{L' >= L} rho(L')`; one for `L <= 1`.
    pub fn ccdf(&self, len: u64) -> f64 {
        if len <= 1 {
            return 1.0;
        }
        match self {
            MetaorderLaw::Degenerate => 0.0,
            MetaorderLaw::Exponential { decay_length } => (-((len - 1) as f64) / decay_length).exp(),
            MetaorderLaw::DiscretePareto { alpha } => (len as f64).powf(-alpha),
            MetaorderLaw::Tabulated(t) => t.ccdf.get(len as usize - 1).copied().unwrap_or(0.0),
        }
    }

    /// Mean length `L_avg = sum_{L >= 1} rho_>=(L)`.
    pub fn mean_length(&self) -> Result<f64> {
        self.ccdf_tail_sum(1)
    }

    /// `sum_{R >= from} rho_>=(R)` for `from >= 1`.
    pub fn ccdf_tail_sum(&self, from: u64) -> Result<f64> {
        let from = from.max(1);
        Ok(match self {
            MetaorderLaw::Degenerate => (from == 1) as u8 as f64,
            MetaorderLaw::Exponential { decay_length } => {
                let k = 1.0 / decay_length;
                (-((from - 1) as f64) * k).exp() / -(-k).exp_m1()
            }
            MetaorderLaw::DiscretePareto { alpha } => {
                if *alpha <= 1.0 {
                    return Err(Error::NonconvergentMean { alpha: *alpha });
                }
                if from == 1 {
                    zeta(*alpha)
                } else {
                    hurwitz_zeta(*alpha, from as f64)
                }
            }
            MetaorderLaw::Tabulated(t) => t.ccdf_tail.get(from as usize - 1).copied().unwrap_or(0.0),
        })
    }

    /// Stationary remaining-length probability `P_st(R) = rho_>=(R) / L_avg`.
    pub fn stationary_remaining_pdf(&self, remaining: u64) -> Result<f64> {
        let mean = self.mean_length()?;
        if remaining == 0 {
            return Ok(0.0);
        }
        Ok(self.ccdf(remaining) / mean)
    }

    /// Draws a metaorder length.
    pub fn sample_length<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            MetaorderLaw::Degenerate => 1,
            MetaorderLaw::Exponential { decay_length } => sample_geometric(*decay_length, rng),
            MetaorderLaw::DiscretePareto { alpha } => {
                // P(floor(U^{-1/a}) >= l) = P(U <= l^{-a}) = l^{-a}
                let u = open_unit(rng);
                let x = u.powf(-1.0 / alpha);
                (x as u64).max(1)
            }
            MetaorderLaw::Tabulated(t) => t.lengths.sample(rng) as u64 + 1,
        }
    }

    /// Draws a remaining length from the stationary law `P_st`.
    pub fn sample_stationary_remaining<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64> {
        Ok(match self {
            MetaorderLaw::Degenerate => 1,
            // The geometric law is its own size-biased residual.
            MetaorderLaw::Exponential { decay_length } => sample_geometric(*decay_length, rng),
            MetaorderLaw::DiscretePareto { alpha } => {
                // P_st(R) is proportional to R^{-alpha}: the zeta distribution.
                let dist = Zeta::new(*alpha).map_err(|_| Error::NonconvergentMean { alpha: *alpha })?;
                let x: f64 = dist.sample(rng);
                (x as u64).max(1)
            }
            MetaorderLaw::Tabulated(t) => t.remaining.sample(rng) as u64 + 1,
        })
    }
}

/// Uniform on (0, 1].
#[inline]
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// `1 + floor(-L* ln U)`, so that `P(L >= l) = exp(-(l - 1) / L*)`.
#[inline]
fn sample_geometric<R: Rng + ?Sized>(decay_length: f64, rng: &mut R) -> u64 {
    let u = open_unit(rng);
    let x = -decay_length * u.ln();
    1u64.saturating_add(x as u64)
}

/// Deterministic parameter allocation for a heterogeneous population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum AllocationScheme {
    /// Exponential decay lengths with CCDF `(L*)^{-(theta - 1)}`.
    DecayLengthPareto { theta: f64 },
    /// Intensities at mid-point quantiles of a density proportional to
    /// `lambda^{-beta - 1}` on `[lambda_cut, 1]`, rescaled to `total_mass`.
    IntensityTruncatedPareto { beta: f64, lambda_cut: f64, total_mass: f64 },
}

impl AllocationScheme {
    pub fn allocate(&self, count: usize) -> Result<Vec<f64>> {
        match *self {
            AllocationScheme::DecayLengthPareto { theta } => allocate_decay_lengths(count, theta),
            AllocationScheme::IntensityTruncatedPareto {
                beta,
                lambda_cut,
                total_mass,
            } => allocate_intensities(count, beta, lambda_cut, total_mass),
        }
    }
}

/// `L*_i = (1 / (1 - (i - 1)/M))^{1/(theta - 1)}` for `i = 1..=M`.
pub fn allocate_decay_lengths(count: usize, theta: f64) -> Result<Vec<f64>> {
    if !(theta > 1.0 && theta.is_finite()) {
        return Err(Error::InvalidExponent {
            value: theta,
            reason: "decay-length tail exponent must exceed 1",
        });
    }
    if count == 0 {
        return Err(Error::domain("allocation needs at least one trader"));
    }
    let m = count as f64;
    let power = 1.0 / (theta - 1.0);
    Ok((0..count)
        .map(|i| (m / (m - i as f64)).powf(power))
        .collect())
}

/// Mid-point quantiles `(i - 1/2)/M` of the truncated density
/// `lambda^{-beta-1}` on `[lambda_cut, 1]`, before any rescaling.
pub fn intensity_quantiles(count: usize, beta: f64, lambda_cut: f64) -> Result<Vec<f64>> {
    if !(lambda_cut > 0.0 && lambda_cut < 1.0) {
        return Err(Error::InvalidSupport(format!(
            "intensity cutoff must lie in (0, 1), got {lambda_cut}"
        )));
    }
    if !beta.is_finite() {
        return Err(Error::domain("intensity tail exponent must be finite"));
    }
    if count == 0 {
        return Err(Error::domain("allocation needs at least one trader"));
    }
    let m = count as f64;
    let quantile = |p: f64| -> f64 {
        if beta.abs() < 1e-12 {
            lambda_cut.powf(1.0 - p)
        } else {
            let a = lambda_cut.powf(-beta);
            (a - p * (a - 1.0)).powf(-1.0 / beta)
        }
    };
    Ok((0..count).map(|i| quantile((i as f64 + 0.5) / m)).collect())
}

/// Intensity quantiles rescaled so that they sum to `total_mass`.
pub fn allocate_intensities(count: usize, beta: f64, lambda_cut: f64, total_mass: f64) -> Result<Vec<f64>> {
    if !(total_mass > 0.0 && total_mass <= 1.0) {
        return Err(Error::domain(format!("total intensity mass must lie in (0, 1], got {total_mass}")));
    }
    let raw = intensity_quantiles(count, beta, lambda_cut)?;
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|x| x * total_mass / sum).collect())
}
