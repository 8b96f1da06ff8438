//! Compensated summation, order-statistic quantiles, tie-tolerant
//! comparisons and the Student t / normal distribution functions.

use statrs::function::beta::beta_reg;

/// Relative tolerance used when deciding whether a reference statistic
/// weakly exceeds the observed one.
pub const TIE_RTOL: f64 = 1e-10;

/// Neumaier-compensated sum.
pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            comp += (s - t) + x;
        } else {
            comp += (x - t) + s;
        }
        s = t;
    }
    s + comp
}

/// Compensated mean; NaN for an empty input.
pub fn mean(xs: &[f64]) -> f64 {
    sum(xs.iter().copied()) / xs.len() as f64
}

/// Mean of squared deviations from `center`, normalized by the count.
pub fn mean_sq_dev(xs: &[f64], center: f64) -> f64 {
    sum(xs.iter().map(|x| (x - center) * (x - center))) / xs.len() as f64
}

/// Sample variance with the n - 1 normalization.
pub fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    sum(xs.iter().map(|x| (x - m) * (x - m))) / (xs.len() as f64 - 1.0)
}

/// Index (1-based) of the order statistic used as the `u` quantile of `n`
/// values: `ceil(u * n)` clamped to `1..=n`.
pub fn order_stat_rank(u: f64, n: usize) -> usize {
    // guard against products like 0.3 * 10 = 3.0000000000000004
    let k = (u * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Order-statistic quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], u: f64) -> f64 {
    sorted[order_stat_rank(u, sorted.len()) - 1]
}

pub(crate) fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Weak exceedance test with a small relative slack so that two
/// algebraically equal statistics computed by different routes compare
/// as ties.
#[derive(Debug, Clone, Copy)]
pub struct Exceed {
    threshold: f64,
}

impl Exceed {
    /// `observed` is the magnitude to beat; `scale` is a magnitude typical
    /// of the data, used so that an observed value of (numerically) zero
    /// is still a tie with reference values at rounding level.
    pub fn new(observed: f64, scale: f64) -> Self {
        let obs = observed.abs();
        let slack = TIE_RTOL * obs.max(scale.abs());
        Exceed { threshold: obs - slack }
    }

    #[inline]
    pub fn hit(&self, reference: f64) -> bool {
        reference.abs() >= self.threshold
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

pub(crate) fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided normal p-value `2 * (1 - Phi(|z|))`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// Two-sided Student t p-value `P(|T_df| >= |t|)`.
///
/// Integer degrees of freedom use the classical trigonometric series,
/// switching to the complementary tail series when the p-value is small
/// so that no cancellation occurs. Other values fall back to the
/// regularized incomplete beta `I_{df/(df+t^2)}(df/2, 1/2)`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    let t = t.abs();
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    if df.fract() != 0.0 || df > 1e6 {
        return beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0);
    }
    let nu = df as u64;
    let r = (df + t * t).sqrt();
    let sin = t / r;
    let cos = df.sqrt() / r;
    let x = cos * cos;
    let odd = nu % 2 == 1;
    // central probability A = 1 - p from the finite series
    let mut term = 1.0;
    let mut acc = 1.0;
    let (last, start) = if odd { ((nu - 1) / 2, (nu - 1) / 2) } else { (nu / 2, nu / 2) };
    for k in 1..last {
        let k = k as f64;
        term *= if odd { 2.0 * k / (2.0 * k + 1.0) } else { (2.0 * k - 1.0) / (2.0 * k) } * x;
        acc += term;
    }
    let central = if odd {
        let theta = t.atan2(df.sqrt());
        let s = if nu == 1 { 0.0 } else { sin * cos * acc };
        std::f64::consts::FRAC_2_PI * (theta + s)
    } else {
        sin * acc
    };
    let p = 1.0 - central;
    if p >= 0.05 {
        return p.min(1.0);
    }
    // tail series: coefficient of x^k for k >= start
    let mut coef = 1.0;
    for k in 1..=start {
        let k = k as f64;
        coef *= if odd { 2.0 * k / (2.0 * k + 1.0) } else { (2.0 * k - 1.0) / (2.0 * k) } * x;
    }
    let mut tail = 0.0;
    let mut k = start as f64;
    loop {
        tail += coef;
        k += 1.0;
        coef *= if odd { 2.0 * k / (2.0 * k + 1.0) } else { (2.0 * k - 1.0) / (2.0 * k) } * x;
        if coef <= 1e-17 * tail || coef == 0.0 {
            break;
        }
    }
    if odd {
        std::f64::consts::FRAC_2_PI * sin * cos * tail
    } else {
        sin * tail
    }
}

/// Student t CDF.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let half_tail = 0.5 * t_two_sided_p(t, df);
    if t < 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// Student t quantile, found by bisection on the upper-tail probability
/// until the bracket is a few ulps wide.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if p == 0.5 {
        return 0.0;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let upper = if p > 0.5 { 1.0 - p } else { p };
    let target = 2.0 * upper;
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while t_two_sided_p(hi, df) > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if t_two_sided_p(mid, df) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    if p > 0.5 {
        q
    } else {
        -q
    }
}

/// Upper `1 - alpha/2` critical value of `sqrt(g / (g - 1)) * t_{g-1}`.
pub fn scaled_t_critical(g: usize, alpha: f64) -> f64 {
    let g = g as f64;
    (g / (g - 1.0)).sqrt() * t_quantile(1.0 - alpha / 2.0, g - 1.0)
}
