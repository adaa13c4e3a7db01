//! Special functions: gamma, Hurwitz zeta, regularised incomplete beta and
//! saddle-point binomial probabilities.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_sum(z: f64) -> f64 {
    let mut a = LANCZOS_COEF[0];
    for (k, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (z + k as f64);
    }
    a
}

/// Gamma function for positive arguments (Lanczos, g = 7, nine terms).
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * lanczos_sum(z)
}

/// Natural log of the gamma function for positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        return (PI / (PI * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + lanczos_sum(z).ln()
}

/// B_{2j} / (2j)! for j = 1..=8.
const EM_COEF: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30_240.0,
    -1.0 / 1_209_600.0,
    1.0 / 47_900_160.0,
    -691.0 / 1_307_674_368_000.0,
    1.0 / 74_724_249_600.0,
    -3617.0 / 10_670_622_842_880_000.0,
];

/// Hurwitz zeta `sum_{k>=0} (k + a)^{-s}` for `s > 1`, `a > 0`.
///
/// Direct summation until the shifted argument reaches 10, then an
/// Euler-Maclaurin tail with eight Bernoulli corrections.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    debug_assert!(s > 1.0 && a > 0.0);
    let mut head = 0.0;
    let mut x = a;
    while x < 10.0 {
        head += x.powf(-s);
        x += 1.0;
    }
    let xs = x.powf(-s);
    let mut tail = x * xs / (s - 1.0) + 0.5 * xs;
    // term_j = C_j * s (s+1) ... (s+2j-2) * x^{-s-2j+1}
    let mut poch = s * xs / x;
    let inv_x2 = 1.0 / (x * x);
    for (j, c) in EM_COEF.iter().enumerate() {
        tail += c * poch;
        let k = 2.0 * j as f64 + 1.0;
        poch *= (s + k) * (s + k + 1.0) * inv_x2;
    }
    head + tail
}

/// Riemann zeta for `s > 1`.
pub fn zeta(s: f64) -> f64 {
    hurwitz_zeta(s, 1.0)
}

/// Regularised incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    if x > (a + 1.0) / (a + b + 2.0) {
        1.0 - ln_front.exp() * beta_cf(1.0 - x, b, a) / b
    } else {
        ln_front.exp() * beta_cf(x, a, b) / a
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..100_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// ln(n!) - ln(sqrt(2 pi n) (n/e)^n) for integer n.
fn stirlerr(n: u64) -> f64 {
    const TABLE: [f64; 16] = [
        0.0,
        0.081_061_466_795_327_258,
        0.041_340_695_955_409_294,
        0.027_677_925_684_998_339,
        0.020_790_672_103_765_093,
        0.016_644_691_189_821_192,
        0.013_876_128_823_070_748,
        0.011_896_709_945_891_770,
        0.010_411_265_261_972_096,
        0.009_255_462_182_712_733,
        0.008_330_563_433_362_871,
        0.007_573_675_487_951_841,
        0.006_942_840_107_209_530,
        0.006_408_994_188_004_207,
        0.005_951_370_112_758_848,
        0.005_554_733_551_962_801,
    ];
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n < 16 {
        return TABLE[n as usize];
    }
    let n = n as f64;
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, evaluated without cancellation.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// Binomial probability `C(n, k) p^k (1-p)^(n-k)` in saddle-point log form.
///
/// Accurate to a few ulps in relative terms for any `n` that fits in `u64`.
pub fn binomial_pmf_raw(n: u64, p: f64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let q = 1.0 - p;
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if q == 0.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    if k == 0 {
        if n == 0 {
            return 1.0;
        }
        let lc = if p < 0.1 { -bd0(nf, nf * q) - nf * p } else { nf * (-p).ln_1p() };
        return lc.exp();
    }
    if k == n {
        let lc = if q < 0.1 { -bd0(nf, nf * p) - nf * q } else { nf * p.ln() };
        return lc.exp();
    }
    let kf = k as f64;
    let lc = stirlerr(n) - stirlerr(k) - stirlerr(n - k) - bd0(kf, nf * p) - bd0(nf - kf, nf * q);
    let lf = (2.0 * PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// The non-negligible part of a binomial row `Bin(n, p)`.
///
/// `values[j]` is the probability of `first + j` successes; the mass outside
/// the returned window is below `1e-19` on each side.
#[derive(Debug, Clone)]
pub struct BinomialRow {
    pub first: u64,
    pub values: Vec<f64>,
}

impl BinomialRow {
    pub fn new(n: u64, p: f64) -> Self {
        if p <= 0.0 {
            return BinomialRow { first: 0, values: vec![1.0] };
        }
        if p >= 1.0 {
            return BinomialRow { first: n, values: vec![1.0] };
        }
        const CUT: f64 = 1e-19;
        let odds = p / (1.0 - p);
        let mode = (((n + 1) as f64 * p).floor() as u64).min(n);
        let peak = binomial_pmf_raw(n, p, mode);

        let mut right = Vec::new();
        let mut b = peak;
        let mut k = mode;
        while k < n {
            let ratio = (n - k) as f64 / (k + 1) as f64 * odds;
            b *= ratio;
            k += 1;
            right.push(b);
            let next_ratio = if k < n { (n - k) as f64 / (k + 1) as f64 * odds } else { 0.0 };
            if next_ratio < 1.0 && b * next_ratio / (1.0 - next_ratio) < CUT * peak {
                break;
            }
        }

        let mut left = Vec::new();
        let mut b = peak;
        let mut k = mode;
        while k > 0 {
            let ratio = k as f64 / (n - k + 1) as f64 / odds;
            b *= ratio;
            k -= 1;
            left.push(b);
            let next_ratio = if k > 0 { k as f64 / (n - k + 1) as f64 / odds } else { 0.0 };
            if next_ratio < 1.0 && b * next_ratio / (1.0 - next_ratio) < CUT * peak {
                break;
            }
        }

        let first = mode - left.len() as u64;
        let mut values = Vec::with_capacity(left.len() + 1 + right.len());
        values.extend(left.into_iter().rev());
        values.push(peak);
        values.extend(right);
        BinomialRow { first, values }
    }

    pub fn last(&self) -> u64 {
        self.first + self.values.len() as u64 - 1
    }
}
