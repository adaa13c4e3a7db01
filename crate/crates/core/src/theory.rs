//! Exact and asymptotic order-sign autocorrelations, prefactor formulas and
//! their inequalities, calibration bounds, and a brute-force Markov-chain oracle.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::MetaorderLaw;
use crate::engine::{Population, TraderSpec};
use crate::error::{Error, Result};
use crate::special::{binomial_pmf_raw, gamma, BinomialRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Simulated,
    Exact,
    Asymptotic,
    Oracle,
}

impl CurveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::Simulated => "simulated",
            CurveKind::Exact => "exact",
            CurveKind::Asymptotic => "asymptotic",
            CurveKind::Oracle => "oracle",
        }
    }
}

/// Autocorrelation values on a strictly increasing grid of positive lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfCurve {
    pub lags: Vec<u64>,
    pub values: Vec<f64>,
    pub kind: CurveKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<Vec<f64>>,
}

impl AcfCurve {
    pub fn new(lags: Vec<u64>, values: Vec<f64>, kind: CurveKind, stderr: Option<Vec<f64>>) -> Result<Self> {
        if lags.len() != values.len() || stderr.as_ref().is_some_and(|s| s.len() != lags.len()) {
            return Err(Error::domain("curve columns have different lengths"));
        }
        if lags.first() == Some(&0) || lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("curve lags must be positive and strictly increasing"));
        }
        Ok(AcfCurve {
            lags,
            values,
            kind,
            stderr,
        })
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    pub fn value_at(&self, lag: u64) -> Option<f64> {
        self.lags.binary_search(&lag).ok().map(|i| self.values[i])
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lags.iter().zip(&self.values).map(|(&l, &v)| (l as f64, v))
    }

    /// `lag,value,stderr` for curves with errors, `lag,value,kind` otherwise.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        match &self.stderr {
            Some(se) => {
                s.push_str("lag,value,stderr\n");
                for ((l, v), e) in self.lags.iter().zip(&self.values).zip(se) {
                    let _ = writeln!(s, "{l},{v:e},{e:e}");
                }
            }
            None => {
                s.push_str("lag,value,kind\n");
                for (l, v) in self.lags.iter().zip(&self.values) {
                    let _ = writeln!(s, "{l},{v:e},{}", self.kind.as_str());
                }
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses any CSV with `lag` and `value` columns (and optionally `stderr`).
    pub fn parse_csv(text: &str, kind: CurveKind) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::config("acf csv", "file is empty"))?
            .split(',')
            .map(str::trim)
            .collect();
        let col = |name: &str| header.iter().position(|h| *h == name);
        let (li, vi) = match (col("lag"), col("value")) {
            (Some(l), Some(v)) => (l, v),
            _ => return Err(Error::config("acf csv header", "needs `lag` and `value` columns")),
        };
        let si = col("stderr");
        let (mut lags, mut values, mut errs) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let loc = format!("acf csv line {}", n + 2);
            let get = |i: usize| f.get(i).copied().ok_or_else(|| Error::config(loc.clone(), "missing column"));
            lags.push(get(li)?.parse::<u64>().map_err(|e| Error::config(loc.clone(), e.to_string()))?);
            values.push(get(vi)?.parse::<f64>().map_err(|e| Error::config(loc.clone(), e.to_string()))?);
            if let Some(si) = si {
                errs.push(get(si)?.parse::<f64>().map_err(|e| Error::config(loc.clone(), e.to_string()))?);
            }
        }
        let stderr = si.map(|_| errs);
        AcfCurve::new(lags, values, kind, stderr).map_err(|e| Error::config("acf csv", e.to_string()))
    }

    pub fn read_csv(path: &Path, kind: CurveKind) -> Result<Self> {
        AcfCurve::parse_csv(&std::fs::read_to_string(path)?, kind)
    }
}

/// Lags `round(ratio^k)`, deduplicated, from 1 up to and including `max_lag`.
pub fn geometric_lags(max_lag: u64, ratio: f64) -> Vec<u64> {
    assert!(ratio > 1.0);
    let mut out = Vec::new();
    let mut x = 1.0f64;
    while x.round() as u64 <= max_lag {
        let l = x.round() as u64;
        if out.last() != Some(&l) {
            out.push(l);
        }
        x *= ratio;
    }
    if out.last() != Some(&max_lag) && max_lag > 0 {
        out.push(max_lag);
    }
    out
}

/// Default theory grid: powers of 1.25.
pub fn default_lags(max_lag: u64) -> Vec<u64> {
    geometric_lags(max_lag, 1.25)
}

/// Binomial probability `B_{t,lambda}(n)`.
pub fn binomial_pmf(t: u64, lambda: f64, n: u64) -> Result<f64> {
    if n > t {
        return Err(Error::domain(format!("binomial count {n} exceeds trials {t}")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::domain(format!("probability {lambda} outside [0, 1]")));
    }
    Ok(binomial_pmf_raw(t, lambda, n))
}

/// Probability that a trader whose metaorder has `r0` child orders left at
/// lag zero is still inside it at lag `tau`: `P(Bin(tau - 1, lambda) <= r0 - 2)`.
pub fn survival_cdf(lambda: f64, tau: u64, r0: u64) -> Result<f64> {
    if r0 < 2 {
        return Err(Error::domain(format!("initial remaining length {r0} must be at least 2")));
    }
    if tau < 1 {
        return Err(Error::domain("lag must be at least 1"));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::domain(format!("intensity {lambda} outside (0, 1]")));
    }
    if tau < r0 {
        return Ok(1.0);
    }
    let n = tau - 1;
    Ok((0..=r0 - 2).map(|k| binomial_pmf_raw(n, lambda, k)).sum::<f64>().min(1.0))
}

/// `sum_{R0 >= 2} ccdf(R0) * P(Bin(tau - 1, lambda) <= R0 - 2)`.
///
/// Exchanging the order of summation gives `sum_k B(k) * tail(k + 2)` with
/// `tail(r) = sum_{R >= r} ccdf(R)`, so only the non-negligible window of the
/// binomial row contributes.
fn same_metaorder_sum(lambda: f64, law: &MetaorderLaw, tau: u64) -> Result<f64> {
    let row = BinomialRow::new(tau - 1, lambda);
    let mut acc = 0.0;
    for (j, b) in row.values.iter().enumerate() {
        let k = row.first + j as u64;
        let t = law.ccdf_tail_sum(k + 2)?;
        if t == 0.0 {
            break;
        }
        acc += b * t;
    }
    // Below the window every binomial term is tiny, but a fast-decaying tail
    // weights low counts much more heavily; continue while terms still matter.
    if lambda < 1.0 && row.first > 0 {
        let n = tau - 1;
        let odds = lambda / (1.0 - lambda);
        let mut b = row.values[0];
        let mut prev = f64::INFINITY;
        let mut k = row.first;
        while k > 0 {
            b *= k as f64 / ((n - k + 1) as f64 * odds);
            k -= 1;
            let term = b * law.ccdf_tail_sum(k + 2)?;
            acc += term;
            if term <= prev && term < 1e-17 * acc {
                break;
            }
            prev = term;
        }
    }
    Ok(acc)
}

fn check_lag(tau: u64) -> Result<()> {
    if tau == 0 {
        return Err(Error::domain("lags start at 1"));
    }
    Ok(())
}

fn check_intensity(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::domain(format!("intensity {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// One trader's contribution `C_tau^{(i)}` for intensity `lambda` and law `law`.
pub fn exact_acf_value(lambda: f64, law: &MetaorderLaw, tau: u64) -> Result<f64> {
    check_lag(tau)?;
    check_intensity(lambda)?;
    let mean = law.mean_length()?;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    Ok(lambda * lambda / mean * same_metaorder_sum(lambda, law, tau)?)
}

pub fn exact_acf_trader(trader: &TraderSpec, lags: &[u64]) -> Result<AcfCurve> {
    let values = lags
        .iter()
        .map(|&t| exact_acf_value(trader.intensity, &trader.law, t))
        .collect::<Result<Vec<_>>>()?;
    AcfCurve::new(lags.to_vec(), values, CurveKind::Exact, None)
}

pub fn exact_acf_market(population: &Population, lags: &[u64]) -> Result<AcfCurve> {
    let mut total = vec![0.0; lags.len()];
    for t in population.traders() {
        let c = exact_acf_trader(t, lags)?;
        for (a, v) in total.iter_mut().zip(c.values) {
            *a += v;
        }
    }
    AcfCurve::new(lags.to_vec(), total, CurveKind::Exact, None)
}

/// Total ACF of a homogeneous market of `1/lambda` identical traders.
pub fn homogeneous_exact_acf(lambda: f64, law: &MetaorderLaw, tau: u64) -> Result<f64> {
    check_lag(tau)?;
    check_intensity(lambda)?;
    let mean = law.mean_length()?;
    Ok(lambda / mean * same_metaorder_sum(lambda, law, tau)?)
}

/// The heuristic homogeneous formula, whose same-metaorder sum starts at `R0 = 3`.
///
/// Evaluated by a direct sweep over `R0` with an incrementally accumulated
/// binomial CDF, independently of the windowed evaluation used for the exact ACF.
pub fn lmf_heuristic_acf(lambda: f64, law: &MetaorderLaw, tau: u64) -> Result<f64> {
    check_lag(tau)?;
    check_intensity(lambda)?;
    let mean = law.mean_length()?;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let row = BinomialRow::new(tau - 1, lambda);
    let pmf = |k: u64| -> f64 {
        if k < row.first || k > row.last() {
            0.0
        } else {
            row.values[(k - row.first) as usize]
        }
    };
    // cdf = P(Bin <= R0 - 2), advanced one R0 at a time
    let mut cdf = pmf(0);
    let mut acc = 0.0;
    let sweep_end = tau.min(row.last() + 2);
    for r0 in 3..=sweep_end {
        cdf += pmf(r0 - 2);
        acc += law.ccdf(r0) * cdf;
    }
    // Past the window the CDF is saturated.
    let saturated_from = sweep_end.max(2) + 1;
    if saturated_from <= tau {
        acc += cdf * (law.ccdf_tail_sum(saturated_from)? - law.ccdf_tail_sum(tau + 1)?);
    }
    acc += law.ccdf_tail_sum((tau + 1).max(3))?;
    Ok(lambda / mean * acc)
}

/// `c_ET e^{-tau/tau*}` for an exponential splitter.
pub fn exponential_acf_closed_form(lambda: f64, decay_length: f64, tau: u64) -> Result<f64> {
    check_lag(tau)?;
    check_intensity(lambda)?;
    if !(decay_length > 0.0) {
        return Err(Error::domain("decay length must be positive"));
    }
    let (c, inv_tau_star) = exponential_acf_parameters(lambda, decay_length);
    Ok(c * (-(tau as f64) * inv_tau_star).exp())
}

/// `(c_ET, 1/tau*)` with `c_ET = lambda^2 q / (1 - lambda (1 - q))`, `q = e^{-1/L*}`.
pub fn exponential_acf_parameters(lambda: f64, decay_length: f64) -> (f64, f64) {
    let one_minus_q = -(-1.0 / decay_length).exp_m1();
    let q = 1.0 - one_minus_q;
    let base = -lambda * one_minus_q;
    let c = lambda * lambda * q / (1.0 + base);
    (c, -base.ln_1p())
}

/// An asymptotic value together with whether it is evaluated outside the
/// regime where the approximation is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Asymptote {
    pub value: f64,
    pub outside_validity: bool,
}

/// `(lambda^{3-alpha} / alpha) tau^{-(alpha-1)}`.
pub fn powerlaw_acf_asymptote(lambda: f64, alpha: f64, tau: u64) -> Result<Asymptote> {
    check_lag(tau)?;
    check_intensity(lambda)?;
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::InvalidExponent {
            value: alpha,
            reason: "power-law asymptote needs alpha > 1",
        });
    }
    let value = lambda.powf(3.0 - alpha) / alpha * (tau as f64).powf(1.0 - alpha);
    Ok(Asymptote {
        value,
        outside_validity: alpha >= 2.0 || (tau as f64) < 1.0 / lambda,
    })
}

/// Sum of exponential and power-law asymptotes over a population.
pub fn hetero_acf_asymptote(population: &Population, tau: u64) -> Result<Asymptote> {
    let mut value = 0.0;
    let mut outside = false;
    for t in population.traders() {
        match t.law {
            MetaorderLaw::Degenerate => {}
            MetaorderLaw::Exponential { decay_length } => {
                value += exponential_acf_closed_form(t.intensity, decay_length, tau)?;
            }
            MetaorderLaw::DiscretePareto { alpha } => {
                if t.intensity > 0.0 {
                    let a = powerlaw_acf_asymptote(t.intensity, alpha, tau)?;
                    value += a.value;
                    outside |= a.outside_validity;
                }
            }
            MetaorderLaw::Tabulated(_) => return Err(Error::UnsupportedLaw("tabulated")),
        }
    }
    Ok(Asymptote {
        value,
        outside_validity: outside,
    })
}

pub fn hetero_acf_asymptote_curve(population: &Population, lags: &[u64]) -> Result<AcfCurve> {
    let values = lags
        .iter()
        .map(|&t| hetero_acf_asymptote(population, t).map(|a| a.value))
        .collect::<Result<Vec<_>>>()?;
    AcfCurve::new(lags.to_vec(), values, CurveKind::Asymptotic, None)
}

fn check_alpha_open(alpha: f64) -> Result<()> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::domain(format!("exponent {alpha} outside (1, 2)")));
    }
    Ok(())
}

fn check_intensity_list(intensities: &[f64]) -> Result<()> {
    if intensities.is_empty() {
        return Err(Error::domain("intensity list is empty"));
    }
    if let Some(bad) = intensities.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
        return Err(Error::domain(format!("intensity {bad} outside (0, 1]")));
    }
    Ok(())
}

/// Heterogeneous power-law prefactor `(1/alpha) sum lambda_i^{3-alpha}`.
pub fn prefactor_sk(intensities: &[f64], alpha: f64) -> Result<f64> {
    check_alpha_open(alpha)?;
    check_intensity_list(intensities)?;
    Ok(intensities.iter().map(|l| l.powf(3.0 - alpha)).sum::<f64>() / alpha)
}

/// Homogeneous prefactor `mu^{3-alpha} / (alpha M^{2-alpha})`.
pub fn prefactor_lmf(mu: f64, count: usize, alpha: f64) -> Result<f64> {
    check_alpha_open(alpha)?;
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::domain(format!("total mass {mu} outside (0, 1]")));
    }
    if count == 0 {
        return Err(Error::domain("need at least one power-law splitter"));
    }
    Ok(mu.powf(3.0 - alpha) / (alpha * (count as f64).powf(2.0 - alpha)))
}

/// Prefactor `Gamma(theta) sum lambda_i^{3-theta}` of a superposition of exponential splitters.
pub fn superposition_prefactor_q0(intensities: &[f64], theta: f64) -> Result<f64> {
    check_alpha_open(theta)?;
    check_intensity_list(intensities)?;
    Ok(gamma(theta) * intensities.iter().map(|l| l.powf(3.0 - theta)).sum::<f64>())
}

/// Homogeneous analogue `Gamma(theta) mu^{3-theta} / M^{2-theta}`.
pub fn superposition_prefactor_q0_homogeneous(mu: f64, count: usize, theta: f64) -> Result<f64> {
    Ok(theta * gamma(theta) * prefactor_lmf(mu, count, theta)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefactorReport {
    pub alpha: f64,
    pub intensities: Vec<f64>,
    pub mu: f64,
    pub m_pt: usize,
    pub c0_sk: f64,
    pub c0_lmf: f64,
    pub c0_upper: f64,
    pub q0_sk: f64,
    pub q0_bbdg: f64,
    pub q0_upper: f64,
    /// `alpha Gamma(alpha)`.
    pub ratio: f64,
    /// `c0_sk - c0_lmf`.
    pub lower_slack: f64,
    /// `c0_upper - c0_sk`.
    pub upper_slack: f64,
    pub q0_lower_slack: f64,
    pub q0_upper_slack: f64,
    /// `q0_sk / c0_sk`, which should equal `ratio`.
    pub observed_ratio: f64,
}

/// Evaluates both prefactor families and checks the two-sided inequalities.
pub fn prefactor_bounds(intensities: &[f64], alpha: f64) -> Result<PrefactorReport> {
    let c0_sk = prefactor_sk(intensities, alpha)?;
    let mu: f64 = intensities.iter().sum();
    if mu > 1.0 + 1e-12 {
        return Err(Error::domain(format!("intensities sum to {mu} > 1")));
    }
    let mu = mu.min(1.0);
    let m = intensities.len();
    let c0_lmf = prefactor_lmf(mu, m, alpha)?;
    let c0_upper = mu.powf(3.0 - alpha) / alpha;
    let g = gamma(alpha);
    let q0_sk = superposition_prefactor_q0(intensities, alpha)?;
    let q0_bbdg = superposition_prefactor_q0_homogeneous(mu, m, alpha)?;
    let q0_upper = g * mu.powf(3.0 - alpha);
    let report = PrefactorReport {
        alpha,
        intensities: intensities.to_vec(),
        mu,
        m_pt: m,
        c0_sk,
        c0_lmf,
        c0_upper,
        q0_sk,
        q0_bbdg,
        q0_upper,
        ratio: alpha * g,
        lower_slack: c0_sk - c0_lmf,
        upper_slack: c0_upper - c0_sk,
        q0_lower_slack: q0_sk - q0_bbdg,
        q0_upper_slack: q0_upper - q0_sk,
        observed_ratio: q0_sk / c0_sk,
    };
    let tol = 1e-12 * c0_upper;
    if report.lower_slack < -tol || report.upper_slack < -tol {
        return Err(Error::InequalityViolation(format!(
            "c0_lmf={c0_lmf} c0_sk={c0_sk} upper={c0_upper}"
        )));
    }
    let qtol = 1e-12 * q0_upper;
    if report.q0_lower_slack < -qtol || report.q0_upper_slack < -qtol {
        return Err(Error::InequalityViolation(format!(
            "q0_bbdg={q0_bbdg} q0_sk={q0_sk} upper={q0_upper}"
        )));
    }
    Ok(report)
}

/// Smallest number of power-law splitters compatible with an observed prefactor.
pub fn lower_bound_pt_count(mu: f64, alpha: f64, c0_observed: f64) -> Result<f64> {
    check_alpha_open(alpha)?;
    if alpha > 1.95 {
        return Err(Error::DegenerateExponent { alpha });
    }
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::domain(format!("total mass {mu} outside (0, 1]")));
    }
    if !(c0_observed > 0.0 && c0_observed.is_finite()) {
        return Err(Error::domain(format!("observed prefactor {c0_observed} must be positive")));
    }
    Ok((mu.powf(3.0 - alpha) / (alpha * c0_observed)).powf(1.0 / (2.0 - alpha)))
}

/// ACF exponent `2 - beta` produced by a power-law distribution of intensities.
pub fn intensity_superposition_exponent(beta: f64) -> Result<f64> {
    let g = 2.0 - beta;
    if !(g > 0.0 && g < 2.0) {
        return Err(Error::domain(format!("2 - beta = {g} outside (0, 2)")));
    }
    Ok(g)
}

/// State-count limit of the matrix oracle.
pub const ORACLE_STATE_LIMIT: usize = 100_000;

/// Exact ACF from the full transition matrix of the market chain.
///
/// States are `(market sign, (sign_i, R_i) for every trader)`; the stationary
/// law comes from power iteration on the lazy chain `(I + P)/2` and
/// `C_tau = pi diag(eps) P^tau eps`.
pub fn oracle_acf_small_chain(population: &Population, lags: &[u64]) -> Result<AcfCurve> {
    let traders = population.traders();
    let mut lmax = Vec::with_capacity(traders.len());
    for t in traders {
        match t.law {
            MetaorderLaw::Degenerate | MetaorderLaw::Tabulated(_) => lmax.push(t.law.max_support().unwrap() as usize),
            _ => return Err(Error::UnsupportedLaw(t.law.kind())),
        }
    }
    let mut states: usize = 2;
    let mut strides = Vec::with_capacity(lmax.len());
    for &l in &lmax {
        strides.push(states);
        states = states.saturating_mul(2 * l);
        if states > ORACLE_STATE_LIMIT {
            return Err(Error::StateSpaceTooLarge {
                states,
                limit: ORACLE_STATE_LIMIT,
            });
        }
    }

    // Decode: index = m + sum_i stride_i * (e_i + 2 (R_i - 1)), bit 1 meaning +1.
    let decode = |x: usize, i: usize| -> (usize, usize) {
        let d = (x / strides[i]) % (2 * lmax[i]);
        (d % 2, d / 2 + 1)
    };
    let supports: Vec<Vec<(usize, f64)>> = traders
        .iter()
        .zip(&lmax)
        .map(|(t, &l)| (1..=l).map(|r| (r, t.law.pmf(r as u64))).filter(|p| p.1 > 0.0).collect())
        .collect();

    // CSR out-edges.
    let mut offsets = Vec::with_capacity(states + 1);
    let mut to = Vec::new();
    let mut prob = Vec::new();
    offsets.push(0);
    for x in 0..states {
        let base = x & !1usize;
        for (i, t) in traders.iter().enumerate() {
            let lam = t.intensity;
            if lam == 0.0 {
                continue;
            }
            let (e, r) = decode(x, i);
            let own = strides[i] * (e + 2 * (r - 1));
            let rest = base - own;
            if r > 1 {
                to.push(rest + strides[i] * (e + 2 * (r - 2)) + e);
                prob.push(lam);
            } else {
                for &(len, p) in &supports[i] {
                    for ne in 0..2 {
                        to.push(rest + strides[i] * (ne + 2 * (len - 1)) + e);
                        prob.push(lam * p * 0.5);
                    }
                }
            }
        }
        offsets.push(to.len());
    }

    let mut pi = vec![1.0 / states as f64; states];
    let mut next = vec![0.0; states];
    let mut converged = false;
    let tol = (states as f64 * 1e-17).max(1e-14);
    for _ in 0..1_000_000 {
        next.iter_mut().zip(&pi).for_each(|(n, p)| *n = 0.5 * p);
        for x in 0..states {
            let w = 0.5 * pi[x];
            for k in offsets[x]..offsets[x + 1] {
                next[to[k]] += w * prob[k];
            }
        }
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("oracle power iteration did not converge".into()));
    }

    let eps: Vec<f64> = (0..states).map(|x| if x & 1 == 1 { 1.0 } else { -1.0 }).collect();
    let weight: Vec<f64> = pi.iter().zip(&eps).map(|(p, e)| p * e).collect();
    let mut v = eps.clone();
    let mut values = Vec::with_capacity(lags.len());
    let mut at = 0u64;
    for &lag in lags {
        while at < lag {
            for x in 0..states {
                next[x] = (offsets[x]..offsets[x + 1]).map(|k| prob[k] * v[to[k]]).sum();
            }
            std::mem::swap(&mut v, &mut next);
            at += 1;
        }
        values.push(weight.iter().zip(&v).map(|(w, y)| w * y).sum());
    }
    AcfCurve::new(lags.to_vec(), values, CurveKind::Oracle, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exp(l: f64) -> MetaorderLaw {
        MetaorderLaw::exponential(l).unwrap()
    }

    fn tab(p: &[(u64, f64)]) -> MetaorderLaw {
        MetaorderLaw::tabulated(p).unwrap()
    }

    /// The defining R0 sum, with survival probabilities summed term by term.
    fn exact_by_definition(lambda: f64, law: &MetaorderLaw, tau: u64) -> f64 {
        let mean = law.mean_length().unwrap();
        let mut acc = 0.0;
        for r0 in 2..=tau {
            acc += law.ccdf(r0) * survival_cdf(lambda, tau, r0).unwrap();
        }
        acc += law.ccdf_tail_sum(tau + 1).unwrap();
        lambda * lambda / mean * acc
    }

    #[test]
    fn binomial_examples() {
        assert_eq!(binomial_pmf(0, 0.3, 0).unwrap(), 1.0);
        assert!((binomial_pmf(2, 0.5, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((binomial_pmf(10, 0.1, 0).unwrap() - 0.9f64.powi(10)).abs() < 1e-15);
        assert!(binomial_pmf(3, 0.5, 4).is_err());
    }

    #[test]
    fn binomial_master_equation() {
        for &lam in &[0.01, 0.1, 0.37, 0.5, 0.9] {
            let mut prev: Vec<f64> = vec![1.0];
            for t in 0..1000u64 {
                let row: Vec<f64> = (0..=t + 1).map(|n| binomial_pmf(t + 1, lam, n).unwrap()).collect();
                for (n, &v) in row.iter().enumerate() {
                    let p = |k: usize| prev.get(k).copied().unwrap_or(0.0);
                    let pm1 = if n == 0 { 0.0 } else { p(n - 1) };
                    let rhs = p(n) + lam * (pm1 - p(n));
                    assert!((v - rhs).abs() < 1e-12, "t={t} n={n}");
                }
                prev = row;
            }
        }
    }

    #[test]
    fn survival_examples() {
        assert_eq!(survival_cdf(0.3, 3, 5).unwrap(), 1.0);
        assert!((survival_cdf(0.5, 2, 2).unwrap() - 0.5).abs() < 1e-15);
        assert!((survival_cdf(0.1, 100, 2).unwrap() - 0.9f64.powi(99)).abs() < 1e-17);
        assert!((survival_cdf(0.1, 100, 2).unwrap() - 2.951e-5).abs() < 1e-8);
        assert!(survival_cdf(0.5, 2, 1).is_err());
    }

    #[test]
    fn survival_monotone_and_matches_beta() {
        use crate::special::regularized_incomplete_beta;
        for &lam in &[0.05, 0.3, 0.8] {
            for r0 in 2..30u64 {
                let mut prev = 1.0;
                for tau in 1..120u64 {
                    let s = survival_cdf(lam, tau, r0).unwrap();
                    assert!(s <= prev + 1e-15);
                    prev = s;
                    assert!(survival_cdf(lam, tau, r0 + 1).unwrap() >= s - 1e-15);
                    if tau > r0 - 1 {
                        let b = regularized_incomplete_beta(1.0 - lam, (tau - r0 + 1) as f64, (r0 - 1) as f64);
                        assert!((s - b).abs() < 1e-10, "lam={lam} tau={tau} r0={r0}: {s} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn exact_trader_examples() {
        for tau in 1..50 {
            assert_eq!(exact_acf_value(0.4, &MetaorderLaw::Degenerate, tau).unwrap(), 0.0);
        }
        let v = exact_acf_value(0.1, &exp(2.0), 1).unwrap();
        assert!((v - 0.01 * (-0.5f64).exp()).abs() < 1e-16);
        assert!((v - 6.06531e-3).abs() < 1e-8);
        let pop = Population::homogeneous(10, exp(5.0)).unwrap();
        let c = exact_acf_market(&pop, &[1]).unwrap();
        assert!((c.values[0] - 0.1 * (-0.2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn windowed_sum_matches_definition() {
        let laws = [exp(0.5), exp(7.0), MetaorderLaw::pareto(1.5).unwrap(), MetaorderLaw::pareto(2.5).unwrap(), tab(&[(1, 0.2), (4, 0.5), (9, 0.3)])];
        for law in &laws {
            for &lam in &[0.01, 0.2, 0.5, 1.0] {
                for tau in (1..300).step_by(7) {
                    let a = exact_acf_value(lam, law, tau).unwrap();
                    let b = exact_by_definition(lam, law, tau);
                    assert!((a - b).abs() <= 1e-13 * b.abs().max(1e-300) + 1e-17, "{} lam={lam} tau={tau}: {a} vs {b}", law.kind());
                }
            }
        }
    }

    #[test]
    fn closed_form_examples() {
        let c1 = exponential_acf_closed_form(0.1, 2.0, 1).unwrap();
        assert!((c1 - 0.01 * (-0.5f64).exp()).abs() < 1e-16);
        let c2 = exponential_acf_closed_form(0.1, 2.0, 2).unwrap();
        assert!((c2 - c1 * (1.0 - 0.1 * (1.0 - (-0.5f64).exp()))).abs() < 1e-16);
        assert!((c2 - 5.82666e-3).abs() < 1e-8);
    }

    #[test]
    fn closed_form_equals_exact() {
        for &lam in &[0.01, 0.1, 0.5] {
            for &ls in &[1.0, 2.0, 5.0, 10.0, 100.0] {
                let law = exp(ls);
                for tau in 1..=200 {
                    let a = exponential_acf_closed_form(lam, ls, tau).unwrap();
                    let b = exact_acf_value(lam, &law, tau).unwrap();
                    assert!((a - b).abs() < 1e-12 * a, "lam={lam} L*={ls} tau={tau}");
                }
            }
        }
    }

    #[test]
    fn heuristic_identity() {
        let laws = [exp(1.0), exp(5.0), exp(100.0), MetaorderLaw::pareto(1.5).unwrap(), tab(&[(1, 0.5), (2, 0.3), (3, 0.2)]), MetaorderLaw::Degenerate];
        for law in &laws {
            let mean = law.mean_length().unwrap();
            for &lam in &[0.01, 0.1, 0.5, 1.0] {
                for tau in 1..=200u64 {
                    let exact = homogeneous_exact_acf(lam, law, tau).unwrap();
                    let heur = lmf_heuristic_acf(lam, law, tau).unwrap();
                    let predicted = lam / mean * law.ccdf(2) * (1.0 - lam).powi(tau as i32 - 1);
                    assert!((exact - heur - predicted).abs() < 1e-12, "{} lam={lam} tau={tau}", law.kind());
                    let per_trader = exact_acf_value(lam, law, tau).unwrap();
                    assert!((per_trader - lam * exact).abs() < 1e-15);
                }
            }
        }
        assert_eq!(lmf_heuristic_acf(0.3, &MetaorderLaw::Degenerate, 4).unwrap(), 0.0);
    }

    #[test]
    fn powerlaw_asymptote_examples() {
        let a = powerlaw_acf_asymptote(1.0, 1.5, 1).unwrap();
        assert!((a.value - 2.0 / 3.0).abs() < 1e-15);
        let a = powerlaw_acf_asymptote(0.1, 1.5, 100).unwrap();
        assert!((a.value - 0.1f64.powf(1.5) / 1.5 / 10.0).abs() < 1e-16);
        assert!((a.value - 2.10819e-3).abs() < 1e-8);
        assert!(!a.outside_validity);
        assert!(powerlaw_acf_asymptote(0.1, 1.5, 5).unwrap().outside_validity);
        assert!(powerlaw_acf_asymptote(0.1, 2.5, 500).unwrap().outside_validity);
        let law = MetaorderLaw::pareto(1.5).unwrap();
        let exact = exact_acf_value(0.1, &law, 10_000).unwrap();
        let asym = powerlaw_acf_asymptote(0.1, 1.5, 10_000).unwrap().value;
        assert!(((exact - asym) / asym).abs() < 0.15, "{exact} vs {asym}");
    }

    #[test]
    fn hetero_asymptote_examples() {
        let m = 10;
        let pop = Population::homogeneous(m, MetaorderLaw::pareto(1.5).unwrap()).unwrap();
        for tau in [10u64, 100, 1000] {
            let a = hetero_acf_asymptote(&pop, tau).unwrap().value;
            let target = 1.0 / (1.5 * (m as f64).powf(0.5)) * (tau as f64).powf(-0.5);
            assert!((a - target).abs() < 1e-14);
        }
        let mut members = Vec::new();
        for i in 0..5 {
            members.push((0.1, exp(2.0 + i as f64)));
            members.push((0.1, MetaorderLaw::pareto(1.2 + 0.1 * i as f64).unwrap()));
        }
        let mixed = Population::new(members).unwrap();
        let tau = 50;
        let mut et = 0.0;
        let mut pt = 0.0;
        for t in mixed.traders() {
            match t.law {
                MetaorderLaw::Exponential { decay_length } => et += exponential_acf_closed_form(t.intensity, decay_length, tau).unwrap(),
                MetaorderLaw::DiscretePareto { alpha } => pt += powerlaw_acf_asymptote(t.intensity, alpha, tau).unwrap().value,
                _ => unreachable!(),
            }
        }
        assert!((hetero_acf_asymptote(&mixed, tau).unwrap().value - et - pt).abs() < 1e-15);
        let tabbed = Population::homogeneous(2, tab(&[(2, 1.0)])).unwrap();
        assert!(matches!(hetero_acf_asymptote(&tabbed, 3), Err(Error::UnsupportedLaw(_))));
    }

    #[test]
    fn prefactor_examples() {
        assert!((prefactor_sk(&[1.0], 1.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let v = prefactor_sk(&[0.9, 0.1], 1.5).unwrap();
        assert!((v - (0.9f64.powf(1.5) + 0.1f64.powf(1.5)) / 1.5).abs() < 1e-15);
        assert!((v - 0.590292).abs() < 1e-6);
        for m in [1usize, 3, 10, 77] {
            for &a in &[1.1, 1.5, 1.9] {
                let sk = prefactor_sk(&vec![1.0 / m as f64; m], a).unwrap();
                assert!((sk - 1.0 / (a * (m as f64).powf(2.0 - a))).abs() < 1e-12);
            }
        }
        assert!(prefactor_sk(&[1.0], 2.0).is_err());
        assert!((prefactor_lmf(1.0, 1, 1.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((prefactor_lmf(1.0, 10, 1.5).unwrap() - 0.210819).abs() < 1e-6);
        assert!((prefactor_lmf(0.8, 10, 1.5).unwrap() - 0.150849).abs() < 1e-6);
        assert!(prefactor_lmf(1.2, 10, 1.5).is_err());
    }

    #[test]
    fn q0_examples() {
        let spi = std::f64::consts::PI.sqrt() / 2.0;
        assert!((superposition_prefactor_q0(&[1.0], 1.5).unwrap() - spi).abs() < 1e-14);
        let mu = 0.6;
        let m = 12;
        let q = superposition_prefactor_q0(&vec![mu / m as f64; m], 1.3).unwrap();
        let bbdg = gamma(1.3) * mu.powf(1.7) / (m as f64).powf(0.7);
        assert!((q - bbdg).abs() < 1e-14);
        assert!((superposition_prefactor_q0_homogeneous(mu, m, 1.3).unwrap() - bbdg).abs() < 1e-14);
    }

    #[test]
    fn bounds_equalities() {
        let r = prefactor_bounds(&[0.1; 8], 1.5).unwrap();
        assert!(r.lower_slack.abs() < 1e-12);
        assert!(r.q0_lower_slack.abs() < 1e-12);
        let r = prefactor_bounds(&[0.7], 1.3).unwrap();
        assert!(r.upper_slack.abs() < 1e-12);
        assert!(r.q0_upper_slack.abs() < 1e-12);
        assert!((r.observed_ratio - r.ratio).abs() < 1e-12);
        let json = serde_json::to_value(&r).unwrap();
        for key in ["c0_sk", "c0_lmf", "c0_upper", "q0_sk", "q0_bbdg", "q0_upper", "ratio", "lower_slack", "upper_slack"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    fn dirichlet(weights: &[f64]) -> Vec<f64> {
        let s: f64 = weights.iter().sum();
        weights.iter().map(|w| w / s).collect()
    }

    proptest! {
        #[test]
        fn bounds_hold_for_random_vectors(
            raw in proptest::collection::vec(0.001f64..1.0, 1..100),
            mu in 0.05f64..=1.0,
            ai in 0usize..3,
        ) {
            let alpha = [1.1, 1.5, 1.9][ai];
            let lams: Vec<f64> = dirichlet(&raw).into_iter().map(|x| x * mu).collect();
            let r = prefactor_bounds(&lams, alpha).unwrap();
            prop_assert!(r.c0_lmf <= r.c0_sk * (1.0 + 1e-12));
            prop_assert!(r.c0_sk <= r.c0_upper * (1.0 + 1e-12));
            prop_assert!((r.observed_ratio - r.ratio).abs() < 1e-12);
            prop_assert!((1.0..=2.0).contains(&r.ratio));
            let lb = lower_bound_pt_count(mu, alpha, r.c0_sk).unwrap();
            prop_assert!(lb <= lams.len() as f64 * (1.0 + 1e-9));
        }

        #[test]
        fn power_sum_superadditive(xs in proptest::collection::vec(0.0f64..10.0, 1..50), a in 1.0f64..=2.0) {
            let lhs = xs.iter().sum::<f64>().powf(a);
            let rhs: f64 = xs.iter().map(|x| x.powf(a)).sum();
            prop_assert!(lhs >= rhs * (1.0 - 1e-12));
        }

        #[test]
        fn holder_lower_bound(xs in proptest::collection::vec(0.001f64..1.0, 1..50), a in 1.0f64..2.0) {
            // M^{a-1} sum x^a >= (sum x)^a
            let m = xs.len() as f64;
            let lhs = m.powf(a - 1.0) * xs.iter().map(|x| x.powf(a)).sum::<f64>();
            prop_assert!(lhs >= xs.iter().sum::<f64>().powf(a) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn lower_bound_examples() {
        for m in [1usize, 7, 50, 1000] {
            let c0 = prefactor_lmf(0.8, m, 1.5).unwrap();
            let back = lower_bound_pt_count(0.8, 1.5, c0).unwrap();
            assert!((back / m as f64 - 1.0).abs() < 1e-9);
        }
        let v = lower_bound_pt_count(0.8, 1.5, 0.01).unwrap();
        let expected = (0.8f64.powf(1.5) / 0.015).powi(2);
        assert!((v - expected).abs() < 1e-9);
        assert!((v - 2275.56).abs() < 0.01);
        assert!(matches!(lower_bound_pt_count(0.8, 1.96, 0.01), Err(Error::DegenerateExponent { .. })));
        assert!(lower_bound_pt_count(0.8, 1.5, 0.0).is_err());
    }

    #[test]
    fn intensity_exponent_examples() {
        assert_eq!(intensity_superposition_exponent(0.5).unwrap(), 1.5);
        assert_eq!(intensity_superposition_exponent(1.0).unwrap(), 1.0);
        assert_eq!(intensity_superposition_exponent(1.5).unwrap(), 0.5);
        assert!(intensity_superposition_exponent(2.0).is_err());
        assert!(intensity_superposition_exponent(0.0).is_err());
    }

    #[test]
    fn oracle_examples() {
        let lags: Vec<u64> = (1..=20).collect();
        let pop = Population::homogeneous(1, MetaorderLaw::Degenerate).unwrap();
        let c = oracle_acf_small_chain(&pop, &lags).unwrap();
        assert!(c.values.iter().all(|v| v.abs() < 1e-14));
        let pop = Population::homogeneous(1, tab(&[(2, 1.0)])).unwrap();
        let c = oracle_acf_small_chain(&pop, &lags).unwrap();
        assert!((c.values[0] - 0.5).abs() < 1e-13);
        assert!(c.values[1..].iter().all(|v| v.abs() < 1e-13));
        let pop = Population::new(vec![(0.5, tab(&[(2, 1.0)])), (0.5, MetaorderLaw::Degenerate)]).unwrap();
        let a = oracle_acf_small_chain(&pop, &[1]).unwrap().values[0];
        let b = exact_acf_market(&pop, &[1]).unwrap().values[0];
        assert!((a - b).abs() < 1e-10);
        let law = tab(&[(1, 0.2), (2, 0.5), (3, 0.3)]);
        let pop = Population::new(vec![(0.7, law.clone()), (0.3, law)]).unwrap();
        let lags: Vec<u64> = (1..=50).collect();
        let a = oracle_acf_small_chain(&pop, &lags).unwrap();
        let b = exact_acf_market(&pop, &lags).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
        let big = Population::homogeneous(4, tab(&[(40, 1.0)])).unwrap();
        assert!(matches!(oracle_acf_small_chain(&big, &[1]), Err(Error::StateSpaceTooLarge { .. })));
        let e = Population::homogeneous(1, exp(2.0)).unwrap();
        assert!(oracle_acf_small_chain(&e, &[1]).is_err());
    }

    #[test]
    fn exact_acf_bounds() {
        let pops = [
            Population::new(vec![(0.3, exp(4.0)), (0.5, MetaorderLaw::pareto(1.4).unwrap()), (0.2, MetaorderLaw::Degenerate)]).unwrap(),
            Population::homogeneous(3, tab(&[(1, 0.1), (5, 0.9)])).unwrap(),
        ];
        for pop in &pops {
            let c = exact_acf_market(pop, &default_lags(5000)).unwrap();
            assert!(c.values.iter().all(|&v| v >= 0.0));
            let s2: f64 = pop.intensities().iter().map(|l| l * l).sum();
            assert!(c.values[0] <= s2);
        }
    }

    #[test]
    fn curve_csv_round_trip() {
        let c = AcfCurve::new(vec![1, 2, 5], vec![0.5, 0.25, 0.125], CurveKind::Exact, None).unwrap();
        let text = c.to_csv();
        assert!(text.starts_with("lag,value,kind\n1,"));
        let back = AcfCurve::parse_csv(&text, CurveKind::Exact).unwrap();
        assert_eq!(back, c);
        assert!(AcfCurve::new(vec![2, 1], vec![0.0, 0.0], CurveKind::Exact, None).is_err());
        assert!(AcfCurve::parse_csv("x,y\n1,2\n", CurveKind::Exact).is_err());
        let g = default_lags(10_000);
        assert_eq!(g[0], 1);
        assert_eq!(*g.last().unwrap(), 10_000);
        assert!(g.len() < 45);
    }
}
