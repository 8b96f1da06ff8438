//! Tests that borrow the distribution of the treated unit's error from the
//! cross-section of controls, plus design-based randomization tests.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::numeric::{max_abs, mean, quantile_sorted, sorted_copy, sum, TIE_RTOL};
use crate::panel::{estimate_effect, null_residuals, CollapsedSample};
use crate::result::{frac, IntervalResult, TestResult};
use crate::rng::{binomial, for_each_assignment, next_combination, rng_from, RefInfo, Resampling, Tail};

fn tol(observed: f64, scale: f64) -> f64 {
    TIE_RTOL * observed.abs().max(scale)
}

/// Asymptotic Conley-Taber p-value: share of demeaned control values at
/// least as large in magnitude as `tau_hat - c`.
pub fn ct_pvalue(sample: &CollapsedSample, c: f64) -> TestResult {
    ct_pvalue_tail(sample, c, Tail::Both)
}

pub fn ct_pvalue_tail(sample: &CollapsedSample, c: f64, tail: Tail) -> TestResult {
    let stat = estimate_effect(sample).tau_hat - c;
    let resid = sample.control_residuals();
    let eps = tol(stat, max_abs(&sample.w));
    let hits = resid.iter().filter(|&&r| tail.extreme(r, stat, eps)).count();
    let mut out = TestResult::new("ct", frac(hits, resid.len()), stat, c);
    out.ref_size = Some(resid.len());
    out
}

/// Conley-Taber interval `[tau - Q(1 - g/2), tau - Q(g/2)]` from the order
/// statistics of the demeaned control values; coverage `1 - gamma`.
pub fn ct_confint(sample: &CollapsedSample, gamma: f64) -> Result<IntervalResult> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return invalid(format!("gamma must lie in (0,1), got {gamma}"));
    }
    if sample.n0() < 2 {
        return invalid("interval needs at least 2 controls");
    }
    let tau = estimate_effect(sample).tau_hat;
    let sorted = sorted_copy(&sample.control_residuals());
    Ok(IntervalResult {
        method: "ct-ci".into(),
        lower: tau - quantile_sorted(&sorted, 1.0 - gamma / 2.0),
        upper: tau - quantile_sorted(&sorted, gamma / 2.0),
        level: 1.0 - gamma,
        estimate: tau,
        warnings: Vec::new(),
    })
}

/// Difference in means of `e` between a subset of size `n1` with sum `s`
/// and its complement, given the total.
#[inline]
fn split_diff(s: f64, total: f64, n1: usize, n0: usize) -> f64 {
    s / n1 as f64 - (total - s) / n0 as f64
}

/// Permutation reference for the difference in means of `z`.
fn diff_in_means_test(
    method: &str,
    z: &[f64],
    treated: &[usize],
    observed: f64,
    c: f64,
    res: &Resampling,
) -> Result<TestResult> {
    res.check()?;
    let n = z.len();
    let n1 = treated.len();
    let n0 = n - n1;
    let centre = mean(z);
    let e: Vec<f64> = z.iter().map(|v| v - centre).collect();
    let total = sum(e.iter().copied());
    let eps = tol(observed, max_abs(z));
    let mut hits = 0usize;
    let info = for_each_assignment(n, treated, res, |a| {
        let s: f64 = a.iter().map(|&i| e[i]).sum();
        if res.tail.extreme(split_diff(s, total, n1, n0), observed, eps) {
            hits += 1;
        }
    });
    Ok(TestResult::new(method, frac(hits, info.size), observed, c).with_ref(info, res.seed))
}

/// Exact permutation version of Conley-Taber: the treated-minus-control
/// mean of the null-imposed residuals, recomputed over assignments.
pub fn ct_exact_permutation(sample: &CollapsedSample, c: f64, res: &Resampling) -> Result<TestResult> {
    let stat = estimate_effect(sample).tau_hat - c;
    let z = sample.null_imposed(c);
    diff_in_means_test("ct-exact", &z, &sample.treated_idx(), stat, c, res)
}

fn design_with_intercept(x: &[Vec<f64>], extra: Option<&[f64]>) -> DMatrix<f64> {
    let n = x.len();
    let k = x.first().map_or(0, Vec::len);
    let cols = 1 + k + usize::from(extra.is_some());
    let mut m = DMatrix::zeros(n, cols);
    for i in 0..n {
        m[(i, 0)] = 1.0;
        let mut col = 1;
        if let Some(d) = extra {
            m[(i, 1)] = d[i];
            col = 2;
        }
        for (j, &v) in x[i].iter().enumerate() {
            m[(i, col + j)] = v;
        }
    }
    m
}

fn full_column_rank(m: &DMatrix<f64>) -> bool {
    if m.nrows() < m.ncols() {
        return false;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    smax > 0.0 && sv.min() > 1e-10 * smax * (m.nrows().max(m.ncols()) as f64)
}

/// Permutation test of the treatment coefficient in a regression of `w` on
/// an intercept, the treatment dummy and the unit covariates (if any). Each
/// assignment reruns the regression of `w - c*D` on the permuted dummy;
/// assignments whose design is singular are skipped and counted.
pub fn ct_exact_permutation_cov(sample: &CollapsedSample, c: f64, res: &Resampling) -> Result<TestResult> {
    res.check()?;
    let no_cov = vec![Vec::new(); sample.len()];
    let rows = sample.covariates.as_ref().map_or(&no_cov, |cv| &cv.rows);
    let n = sample.len();
    let d: Vec<f64> = sample.treated.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    if !full_column_rank(&design_with_intercept(rows, Some(&d))) {
        return Err(Error::SingularDesign);
    }
    // residual maker of [1, X]
    let zx = design_with_intercept(rows, None);
    let q = zx.qr().q();
    let hat = &q * q.transpose();
    let z = DVector::from_vec(sample.null_imposed(c));
    let rz = &z - &hat * &z;
    let treated = sample.treated_idx();
    let n1 = treated.len();
    let coef = |a: &[usize]| -> Option<f64> {
        let num: f64 = a.iter().map(|&i| rz[i]).sum();
        let mut h = 0.0;
        for &i in a {
            for &k in a {
                h += hat[(i, k)];
            }
        }
        let den = n1 as f64 - h;
        (den > 1e-10 * n1 as f64).then(|| num / den)
    };
    let stat = coef(&treated).ok_or(Error::SingularDesign)?;
    let eps = tol(stat, max_abs(z.as_slice()));
    let (mut hits, mut skipped) = (0usize, 0usize);
    let info = for_each_assignment(n, &treated, res, |a| match coef(a) {
        Some(b) => hits += usize::from(res.tail.extreme(b, stat, eps)),
        None => skipped += 1,
    });
    let valid = info.size - skipped;
    Ok(TestResult::new("ct-exact-cov", frac(hits, valid), stat, c)
        .with_ref(RefInfo { size: valid, enumerated: info.enumerated }, res.seed)
        .meta("skipped_singular", skipped as f64))
}

/// Welch-type t statistic of a subset against its complement, computed from
/// centred values.
struct Studentizer<'a> {
    e: &'a [f64],
    total: f64,
    total_sq: f64,
    n1: usize,
    n0: usize,
    zero_ss: f64,
}

impl<'a> Studentizer<'a> {
    fn new(e: &'a [f64], n1: usize) -> Self {
        let total_sq = sum(e.iter().map(|v| v * v));
        Studentizer {
            e,
            total: sum(e.iter().copied()),
            total_sq,
            n1,
            n0: e.len() - n1,
            zero_ss: 1e-12 * total_sq,
        }
    }

    fn t(&self, a: &[usize]) -> f64 {
        let (n1, n0) = (self.n1 as f64, self.n0 as f64);
        let (mut s, mut sq) = (0.0, 0.0);
        for &i in a {
            s += self.e[i];
            sq += self.e[i] * self.e[i];
        }
        let sc = self.total - s;
        let sqc = self.total_sq - sq;
        let mut ss1 = sq - s * s / n1;
        let mut ss0 = sqc - sc * sc / n0;
        if ss1 <= self.zero_ss {
            ss1 = 0.0;
        }
        if ss0 <= self.zero_ss {
            ss0 = 0.0;
        }
        let num = s / n1 - sc / n0;
        let den = (ss1 / (n1 * (n1 - 1.0)) + ss0 / (n0 * (n0 - 1.0))).sqrt();
        if den > 0.0 {
            num / den
        } else if num.abs() <= 1e-12 * self.total_sq.sqrt() {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Studentized permutation test: unequal-variance t of `w - c*D`,
/// recomputed (including the within-group spreads) for each assignment.
pub fn permutation_tstat(sample: &CollapsedSample, c: f64, res: &Resampling) -> Result<TestResult> {
    res.check()?;
    if sample.n1() < 2 || sample.n0() < 2 {
        return invalid("studentized permutation test needs at least 2 treated and 2 controls");
    }
    let e = null_residuals(sample, c);
    let treated = sample.treated_idx();
    let st = Studentizer::new(&e, treated.len());
    let stat = st.t(&treated);
    let eps = if stat.is_finite() { TIE_RTOL * stat.abs() } else { 0.0 };
    let mut hits = 0usize;
    let info = for_each_assignment(e.len(), &treated, res, |a| {
        let t = st.t(a);
        let hit = if stat.is_infinite() {
            match res.tail {
                Tail::Both => t.is_infinite(),
                _ => t == stat,
            }
        } else {
            t.is_infinite() && res.tail == Tail::Both || res.tail.extreme(t, stat, eps)
        };
        hits += usize::from(hit);
    });
    Ok(TestResult::new("perm-t", frac(hits, info.size), stat, c).with_ref(info, res.seed))
}

/// Control values rescaled to the variance implied for the treated unit.
#[derive(Debug, Clone)]
pub struct FpRescaled {
    pub sample: CollapsedSample,
    /// Intercept and slope of the fitted variance `A + B / X`.
    pub a: f64,
    pub b: f64,
    /// Per-control multipliers `sqrt(V(X_treated) / V(X_j))`.
    pub ratios: Vec<f64>,
    pub clamped: bool,
}

/// Heteroskedasticity correction for a single treated unit whose error
/// variance depends on a known unit size `X`: fit squared control
/// residuals on `[1, 1/X]`, scale each control residual to the treated
/// unit's fitted variance, and recentre so the estimate is unchanged.
pub fn fp_rescale(sample: &CollapsedSample) -> Result<FpRescaled> {
    let sizes = match &sample.unit_sizes {
        Some(s) => s,
        None => return invalid("rescaling needs unit sizes"),
    };
    if sample.n1() != 1 {
        return invalid("rescaling supports exactly one treated unit");
    }
    let controls = sample.control_idx();
    if controls.len() < 3 {
        return invalid("rescaling needs at least 3 controls");
    }
    let resid = sample.control_residuals();
    let inv: Vec<f64> = controls.iter().map(|&j| 1.0 / sizes[j]).collect();
    let sq: Vec<f64> = resid.iter().map(|r| r * r).collect();
    let (mi, ms) = (mean(&inv), mean(&sq));
    let sxx = sum(inv.iter().map(|v| (v - mi) * (v - mi)));
    if sxx <= 1e-24 * mi * mi * inv.len() as f64 {
        return Err(Error::Collinear);
    }
    let b = sum(inv.iter().zip(&sq).map(|(x, y)| (x - mi) * (y - ms))) / sxx;
    let a = ms - b * mi;
    let floor = 1e-10 * ms;
    let mut clamped = false;
    let mut fitted = |x: f64| {
        let v = a + b / x;
        if v < floor {
            clamped = true;
            floor
        } else {
            v
        }
    };
    let treated = sample.treated_idx()[0];
    let vt = fitted(sizes[treated]);
    let ratios: Vec<f64> = controls
        .iter()
        .map(|&j| {
            let vj = fitted(sizes[j]);
            if vj > 0.0 {
                (vt / vj).sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled: Vec<f64> = resid.iter().zip(&ratios).map(|(r, k)| r * k).collect();
    let shift = mean(&scaled);
    let control_mean = mean(&sample.control_w());
    let mut out = sample.clone();
    for (pos, &j) in controls.iter().enumerate() {
        out.w[j] = control_mean + scaled[pos] - shift;
    }
    Ok(FpRescaled { sample: out, a, b, ratios, clamped })
}

/// Fisher randomization test of the sharp null `Y(1) = Y(0) + c` using the
/// difference in means over assignments of the same number of treated.
pub fn design_randomization_test(
    outcomes: &[f64],
    treated: &[bool],
    c: f64,
    res: &Resampling,
) -> Result<TestResult> {
    let sample = CollapsedSample::new(outcomes.to_vec(), treated.to_vec())?;
    let stat = estimate_effect(&sample).tau_hat - c;
    let z = sample.null_imposed(c);
    diff_in_means_test("randomization", &z, &sample.treated_idx(), stat, c, res)
}

/// Randomization test restricted to assignments that put as many units
/// with `balance = true` in the treated group as the observed one.
pub fn conditional_randomization_test(
    outcomes: &[f64],
    treated: &[bool],
    balance: &[bool],
    c: f64,
    res: &Resampling,
) -> Result<TestResult> {
    res.check()?;
    let sample = CollapsedSample::new(outcomes.to_vec(), treated.to_vec())?;
    if balance.len() != outcomes.len() {
        return invalid("balance flags must have one entry per unit");
    }
    let stat = estimate_effect(&sample).tau_hat - c;
    let z = sample.null_imposed(c);
    let centre = mean(&z);
    let e: Vec<f64> = z.iter().map(|v| v - centre).collect();
    let total = sum(e.iter().copied());
    let eps = tol(stat, max_abs(&z));
    let n1 = sample.n1();
    let n0 = sample.n0();
    let on: Vec<usize> = (0..e.len()).filter(|&i| balance[i]).collect();
    let off: Vec<usize> = (0..e.len()).filter(|&i| !balance[i]).collect();
    let k = sample.treated_idx().iter().filter(|&&i| balance[i]).count();
    let count = binomial(on.len(), k).zip(binomial(off.len(), n1 - k)).and_then(|(a, b)| a.checked_mul(b));
    let mut hits = 0usize;
    let mut visit = |s: f64| {
        if res.tail.extreme(split_diff(s, total, n1, n0), stat, eps) {
            hits += 1;
        }
    };
    let info = match count {
        Some(cnt) if cnt <= res.budget as u64 => {
            let mut a: Vec<usize> = (0..k).collect();
            loop {
                let sa: f64 = a.iter().map(|&i| e[on[i]]).sum();
                let mut b: Vec<usize> = (0..n1 - k).collect();
                loop {
                    let sb: f64 = b.iter().map(|&i| e[off[i]]).sum();
                    visit(sa + sb);
                    if !next_combination(&mut b, off.len()) {
                        break;
                    }
                }
                if !next_combination(&mut a, on.len()) {
                    break;
                }
            }
            RefInfo { size: cnt as usize, enumerated: true }
        }
        _ => {
            visit(sample.treated_idx().iter().map(|&i| e[i]).sum());
            let mut rng = rng_from(res.seed);
            for _ in 1..res.budget {
                let sa: f64 = rand::seq::index::sample(&mut rng, on.len(), k).into_iter().map(|i| e[on[i]]).sum();
                let sb: f64 =
                    rand::seq::index::sample(&mut rng, off.len(), n1 - k).into_iter().map(|i| e[off[i]]).sum();
                visit(sa + sb);
            }
            RefInfo { size: res.budget, enumerated: false }
        }
    };
    let mut out =
        TestResult::new("conditional-randomization", frac(hits, info.size), stat, c).with_ref(info, res.seed);
    if info.enumerated && info.size == 1 {
        out.p_value = 1.0;
        out = out.warn("SINGLETON: only the observed assignment matches the balance pattern");
    }
    Ok(out.meta("balanced_treated", k as f64))
}
