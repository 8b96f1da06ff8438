//! Residual-based tests for designs with many pre-treatment periods.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numeric::{max_abs, mean, quantile_sorted, sorted_copy, sum, TIE_RTOL};
use crate::panel::{did_imputation_series, Panel};
use crate::result::{frac, IntervalResult, TestResult};

/// Prediction errors of one unit; the last `n_post` entries are post
/// treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    values: Vec<f64>,
    n_post: usize,
}

impl ResidualSeries {
    pub fn new(values: Vec<f64>, n_post: usize) -> Result<Self> {
        if values.len() < 2 {
            return invalid("residual series needs at least 2 periods");
        }
        if n_post == 0 || n_post >= values.len() {
            return invalid(format!("n_post must lie in 1..{}, got {n_post}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite residual");
        }
        Ok(ResidualSeries { values, n_post })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_post(&self) -> usize {
        self.n_post
    }

    pub fn pre(&self) -> &[f64] {
        &self.values[..self.values.len() - self.n_post]
    }
}

/// End-of-sample instability p-value: rank of the last residual's
/// magnitude among all residuals. With several post periods the
/// benchmark is the mean post residual, ranked among the means of every
/// window of the same length.
pub fn eos_pvalue(resid: &ResidualSeries) -> TestResult {
    let v = &resid.values;
    let m = resid.n_post;
    let windows: Vec<f64> = if m == 1 {
        v.clone()
    } else {
        v.windows(m).map(mean).collect()
    };
    let stat = *windows.last().expect("non-empty");
    let eps = TIE_RTOL * stat.abs().max(max_abs(v));
    let hits = windows.iter().filter(|w| w.abs() >= stat.abs() - eps).count();
    let mut out = TestResult::new("eos", frac(hits, windows.len()), stat, 0.0);
    out.ref_size = Some(windows.len());
    out.enumerated = true;
    if m > 1 {
        out = out
            .meta("rolling_window_extension", 1.0)
            .warn("several post periods: rolling-window generalization of the end-of-sample test");
    }
    out
}

/// A mean predictor for one unit: fitted values for every period.
pub trait CounterfactualFn {
    fn fitted(&self, panel: &Panel, unit: usize) -> Result<Vec<f64>>;
}

impl<F> CounterfactualFn for F
where
    F: Fn(&Panel, usize) -> Result<Vec<f64>>,
{
    fn fitted(&self, panel: &Panel, unit: usize) -> Result<Vec<f64>> {
        self(panel, unit)
    }
}

/// Leave-one-period-out DiD imputation (the default predictor).
#[derive(Debug, Clone, Copy, Default)]
pub struct DidImputation;

impl CounterfactualFn for DidImputation {
    fn fitted(&self, panel: &Panel, unit: usize) -> Result<Vec<f64>> {
        did_imputation_series(panel, unit)
    }
}

/// The unit's own mean over all periods.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitMean;

impl CounterfactualFn for UnitMean {
    fn fitted(&self, panel: &Panel, unit: usize) -> Result<Vec<f64>> {
        let m = mean(panel.row(unit));
        Ok(vec![m; panel.n_periods()])
    }
}

/// A precomputed fitted series supplied by the user.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedSeries(pub Vec<f64>);

impl CounterfactualFn for FittedSeries {
    fn fitted(&self, panel: &Panel, _unit: usize) -> Result<Vec<f64>> {
        if self.0.len() != panel.n_periods() {
            return invalid(format!(
                "fitted series has {} values for {} periods",
                self.0.len(),
                panel.n_periods()
            ));
        }
        Ok(self.0.clone())
    }
}

/// Residuals `Y - M` of `unit` under predictor `cf`.
pub fn residual_series(panel: &Panel, unit: usize, cf: &dyn CounterfactualFn) -> Result<ResidualSeries> {
    let fit = cf.fitted(panel, unit)?;
    if fit.len() != panel.n_periods() {
        return invalid("predictor returned the wrong number of periods");
    }
    let r = panel.row(unit).iter().zip(&fit).map(|(y, m)| y - m).collect();
    ResidualSeries::new(r, panel.n_post())
}

/// Conformal test of `Y(1) = Y(0) + c` for the first treated unit: impose
/// the null, fit the predictor on all periods, then apply
/// [`eos_pvalue`] to the residuals.
pub fn conformal_test(panel: &Panel, c: f64, cf: &dyn CounterfactualFn) -> Result<TestResult> {
    let unit = panel.treated_units()[0];
    conformal_test_unit(panel, unit, c, cf)
}

pub fn conformal_test_unit(panel: &Panel, unit: usize, c: f64, cf: &dyn CounterfactualFn) -> Result<TestResult> {
    if !panel.is_treated(unit) {
        return invalid(format!("unit {unit} is not treated"));
    }
    let imposed = panel.impose_null(c);
    let resid = residual_series(&imposed, unit, cf)?;
    let mut out = eos_pvalue(&resid);
    out.method = "conformal".into();
    out.c0 = c;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PupAdjustment {
    pub tau_pup: f64,
    pub rho: f64,
}

/// Subtract the AR(1)-predictable part of the post error:
/// `tau - rho * eps_last`, with `rho` from a no-intercept regression of
/// each pre residual on its lag.
pub fn pup_adjust(resid_pre: &[f64], tau_hat: f64, eps_last_pre: f64) -> Result<PupAdjustment> {
    if resid_pre.len() < 3 {
        return invalid("AR(1) correction needs at least 3 pre residuals");
    }
    let num = sum(resid_pre.windows(2).map(|p| p[1] * p[0]));
    let den = sum(resid_pre[..resid_pre.len() - 1].iter().map(|e| e * e));
    if den == 0.0 {
        return Err(Error::Degenerate("lagged residuals are all zero".into()));
    }
    let rho = num / den;
    Ok(PupAdjustment { tau_pup: tau_hat - rho * eps_last_pre, rho })
}

/// Interval for the effect `Y - Y(0)` built from order statistics of the
/// pre-period residuals: `[y - m - Q(1 - a/2), y - m - Q(a/2)]`.
pub fn prediction_interval(resid_pre: &[f64], y_obs: f64, m_hat: f64, alpha: f64) -> Result<IntervalResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0,1), got {alpha}"));
    }
    let need = (2.0 / alpha - 1e-9).ceil() as usize;
    if resid_pre.len() < need {
        return invalid(format!(
            "prediction interval at level {} needs at least {need} residuals, got {}",
            1.0 - alpha,
            resid_pre.len()
        ));
    }
    let sorted = sorted_copy(resid_pre);
    let gap = y_obs - m_hat;
    Ok(IntervalResult {
        method: "prediction-interval".into(),
        lower: gap - quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        upper: gap - quantile_sorted(&sorted, alpha / 2.0),
        level: 1.0 - alpha,
        estimate: gap,
        warnings: Vec::new(),
    })
}
