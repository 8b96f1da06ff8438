//! Panel data model, validation, the post-minus-pre reduction and the
//! textbook estimators.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numeric::{mean, mean_sq_dev, sum};

/// Unit-level covariates, one row per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Covariates {
    pub fn k(&self) -> usize {
        self.names.len()
    }
}

/// Unvalidated panel input. `None` marks a missing cell.
#[derive(Debug, Clone, Default)]
pub struct RawPanel {
    pub outcomes: Vec<Vec<Option<f64>>>,
    pub treated_units: Vec<usize>,
    pub post_periods: Vec<usize>,
    pub covariates: Option<Covariates>,
    pub unit_sizes: Option<Vec<f64>>,
}

/// Balanced N x T panel with block treatment: the treated units are
/// treated in the last `n_post` periods and never before.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    n: usize,
    t: usize,
    y: Vec<f64>,
    treated: Vec<bool>,
    n_post: usize,
    covariates: Option<Covariates>,
    unit_sizes: Option<Vec<f64>>,
}

/// Check every panel invariant and build a [`Panel`].
pub fn validate_panel(raw: RawPanel) -> Result<Panel> {
    let n = raw.outcomes.len();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 units, got {n}")));
    }
    let t = raw.outcomes.iter().map(Vec::len).max().unwrap_or(0);
    if t == 0 {
        return Err(Error::Input("need at least 1 period".into()));
    }
    let mut y = Vec::with_capacity(n * t);
    for (unit, row) in raw.outcomes.iter().enumerate() {
        for period in 0..t {
            match row.get(period).copied().flatten() {
                Some(v) if v.is_finite() => y.push(v),
                Some(v) => {
                    return Err(Error::Input(format!(
                        "non-finite outcome {v} for unit {unit}, period {period}"
                    )))
                }
                None => return Err(Error::Unbalanced { unit, period }),
            }
        }
    }
    let mut treated = vec![false; n];
    for &u in &raw.treated_units {
        if u >= n {
            return Err(Error::Input(format!("treated unit {u} out of range")));
        }
        treated[u] = true;
    }
    let n1 = treated.iter().filter(|&&d| d).count();
    if n1 == 0 {
        return Err(Error::NoTreated);
    }
    if n1 == n {
        return Err(Error::NoControls);
    }
    let mut post = raw.post_periods.clone();
    post.sort_unstable();
    post.dedup();
    let n_post = post.len();
    if n_post == 0 || post.iter().enumerate().any(|(i, &p)| p != t - n_post + i) {
        return Err(Error::NonSuffixPost);
    }
    if let Some(cov) = &raw.covariates {
        if cov.rows.len() != n || cov.rows.iter().any(|r| r.len() != cov.k()) {
            return Err(Error::Input("covariate matrix must be N x k".into()));
        }
        if cov.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite covariate".into()));
        }
    }
    if let Some(sizes) = &raw.unit_sizes {
        if sizes.len() != n {
            return Err(Error::Input("unit sizes must have one entry per unit".into()));
        }
        if sizes.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Input("unit sizes must be strictly positive".into()));
        }
    }
    Ok(Panel {
        n,
        t,
        y,
        treated,
        n_post,
        covariates: raw.covariates,
        unit_sizes: raw.unit_sizes,
    })
}

impl Panel {
    /// Build from complete rows; `treated_units` are treated in the last
    /// `n_post` periods.
    pub fn from_rows(rows: Vec<Vec<f64>>, treated_units: &[usize], n_post: usize) -> Result<Panel> {
        let t = rows.first().map_or(0, Vec::len);
        validate_panel(RawPanel {
            outcomes: rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
            treated_units: treated_units.to_vec(),
            post_periods: (t.saturating_sub(n_post)..t).collect(),
            covariates: None,
            unit_sizes: None,
        })
    }

    pub fn with_covariates(mut self, cov: Covariates) -> Result<Panel> {
        if cov.rows.len() != self.n || cov.rows.iter().any(|r| r.len() != cov.k()) {
            return Err(Error::Input("covariate matrix must be N x k".into()));
        }
        self.covariates = Some(cov);
        Ok(self)
    }

    pub fn with_unit_sizes(mut self, sizes: Vec<f64>) -> Result<Panel> {
        if sizes.len() != self.n || sizes.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Input("unit sizes must be N strictly positive values".into()));
        }
        self.unit_sizes = Some(sizes);
        Ok(self)
    }

    pub fn n_units(&self) -> usize {
        self.n
    }

    pub fn n_periods(&self) -> usize {
        self.t
    }

    pub fn n_post(&self) -> usize {
        self.n_post
    }

    pub fn n_pre(&self) -> usize {
        self.t - self.n_post
    }

    pub fn n_treated(&self) -> usize {
        self.treated.iter().filter(|&&d| d).count()
    }

    pub fn is_treated(&self, unit: usize) -> bool {
        self.treated[unit]
    }

    pub fn treated_flags(&self) -> &[bool] {
        &self.treated
    }

    pub fn treated_units(&self) -> Vec<usize> {
        (0..self.n).filter(|&j| self.treated[j]).collect()
    }

    pub fn control_units(&self) -> Vec<usize> {
        (0..self.n).filter(|&j| !self.treated[j]).collect()
    }

    /// Outcome series of one unit.
    pub fn row(&self, unit: usize) -> &[f64] {
        &self.y[unit * self.t..(unit + 1) * self.t]
    }

    pub fn y(&self, unit: usize, period: usize) -> f64 {
        self.y[unit * self.t + period]
    }

    /// Treatment indicator of a cell.
    pub fn d(&self, unit: usize, period: usize) -> bool {
        self.treated[unit] && period >= self.t - self.n_post
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    pub fn unit_sizes(&self) -> Option<&[f64]> {
        self.unit_sizes.as_deref()
    }

    /// Copy with `c` subtracted from every treated cell (imposes the sharp
    /// null `Y(1) = Y(0) + c`).
    pub fn impose_null(&self, c: f64) -> Panel {
        let mut out = self.clone();
        let first_post = self.t - self.n_post;
        for j in self.treated_units() {
            for s in first_post..self.t {
                out.y[j * self.t + s] -= c;
            }
        }
        out
    }

    /// Copy with `f(unit, period)` added to every cell.
    pub fn shifted(&self, f: impl Fn(usize, usize) -> f64) -> Panel {
        let mut out = self.clone();
        for j in 0..self.n {
            for s in 0..self.t {
                out.y[j * self.t + s] += f(j, s);
            }
        }
        out
    }
}

/// One value per unit plus treatment flags: the reduction most tests use.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedSample {
    pub w: Vec<f64>,
    pub treated: Vec<bool>,
    pub covariates: Option<Covariates>,
    pub unit_sizes: Option<Vec<f64>>,
}

impl CollapsedSample {
    pub fn new(w: Vec<f64>, treated: Vec<bool>) -> Result<Self> {
        if w.len() != treated.len() {
            return invalid("w and treated flags differ in length");
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite value in collapsed sample".into()));
        }
        if !treated.iter().any(|&d| d) {
            return Err(Error::NoTreated);
        }
        if treated.iter().all(|&d| d) {
            return Err(Error::NoControls);
        }
        Ok(CollapsedSample { w, treated, covariates: None, unit_sizes: None })
    }

    /// Sample whose first `n1` entries are treated.
    pub fn treated_first(w: Vec<f64>, n1: usize) -> Result<Self> {
        let treated = (0..w.len()).map(|j| j < n1).collect();
        Self::new(w, treated)
    }

    pub fn with_unit_sizes(mut self, sizes: Vec<f64>) -> Result<Self> {
        if sizes.len() != self.w.len() || sizes.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Input("unit sizes must be N strictly positive values".into()));
        }
        self.unit_sizes = Some(sizes);
        Ok(self)
    }

    pub fn with_covariates(mut self, cov: Covariates) -> Result<Self> {
        if cov.rows.len() != self.w.len() || cov.rows.iter().any(|r| r.len() != cov.k()) {
            return Err(Error::Input("covariate matrix must be N x k".into()));
        }
        self.covariates = Some(cov);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn n1(&self) -> usize {
        self.treated.iter().filter(|&&d| d).count()
    }

    pub fn n0(&self) -> usize {
        self.len() - self.n1()
    }

    pub fn treated_idx(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.treated[j]).collect()
    }

    pub fn control_idx(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| !self.treated[j]).collect()
    }

    pub fn treated_w(&self) -> Vec<f64> {
        self.treated_idx().into_iter().map(|j| self.w[j]).collect()
    }

    pub fn control_w(&self) -> Vec<f64> {
        self.control_idx().into_iter().map(|j| self.w[j]).collect()
    }

    /// Control values minus the control mean.
    pub fn control_residuals(&self) -> Vec<f64> {
        let wc = self.control_w();
        let m = mean(&wc);
        wc.into_iter().map(|v| v - m).collect()
    }

    /// `w - c * D`.
    pub fn null_imposed(&self, c: f64) -> Vec<f64> {
        self.w.iter().zip(&self.treated).map(|(&w, &d)| if d { w - c } else { w }).collect()
    }
}

/// Post-mean minus pre-mean of each unit.
pub fn collapse_prepost(panel: &Panel) -> Result<CollapsedSample> {
    if panel.n_pre() == 0 {
        return Err(Error::NoPre);
    }
    let t0 = panel.n_pre();
    let w = (0..panel.n_units())
        .map(|j| {
            let r = panel.row(j);
            mean(&r[t0..]) - mean(&r[..t0])
        })
        .collect();
    carry(panel, w)
}

/// Cross-section reduction for panels without pre periods: the mean of
/// each unit's (post) outcomes.
pub fn collapse_cross_section(panel: &Panel) -> Result<CollapsedSample> {
    let w = (0..panel.n_units()).map(|j| mean(panel.row(j))).collect();
    carry(panel, w)
}

/// [`collapse_prepost`] when pre periods exist, else the cross-section
/// reduction.
pub fn collapse(panel: &Panel) -> Result<CollapsedSample> {
    if panel.n_pre() == 0 {
        collapse_cross_section(panel)
    } else {
        collapse_prepost(panel)
    }
}

fn carry(panel: &Panel, w: Vec<f64>) -> Result<CollapsedSample> {
    let mut s = CollapsedSample::new(w, panel.treated_flags().to_vec())?;
    s.covariates = panel.covariates().cloned();
    s.unit_sizes = panel.unit_sizes().map(<[f64]>::to_vec);
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub tau_hat: f64,
    pub method: String,
    pub n_treated: usize,
    pub n_control: usize,
}

/// Treated mean minus control mean.
pub fn estimate_effect(sample: &CollapsedSample) -> EffectEstimate {
    EffectEstimate {
        tau_hat: mean(&sample.treated_w()) - mean(&sample.control_w()),
        method: "diff-in-means".into(),
        n_treated: sample.n1(),
        n_control: sample.n0(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceKind {
    Heteroskedastic,
    Homoskedastic,
    Jackknife,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub kind: VarianceKind,
}

/// `s1/N1 + s0/N0` with `s_a` the mean squared deviation within group a.
pub fn var_heteroskedastic(sample: &CollapsedSample) -> VarianceEstimate {
    let wt = sample.treated_w();
    let wc = sample.control_w();
    let s1 = if wt.len() == 1 { 0.0 } else { mean_sq_dev(&wt, mean(&wt)) };
    let s0 = mean_sq_dev(&wc, mean(&wc));
    VarianceEstimate {
        value: s1 / wt.len() as f64 + s0 / wc.len() as f64,
        kind: VarianceKind::Heteroskedastic,
    }
}

/// Pooled within-group variance `s2` (normalized by N) times `1/N1 + 1/N0`.
pub fn var_homoskedastic(sample: &CollapsedSample) -> VarianceEstimate {
    let s2 = pooled_within_ss(sample) / sample.len() as f64;
    VarianceEstimate {
        value: s2 * (1.0 / sample.n1() as f64 + 1.0 / sample.n0() as f64),
        kind: VarianceKind::Homoskedastic,
    }
}

/// Within-group sum of squared deviations, both groups pooled.
pub(crate) fn pooled_within_ss(sample: &CollapsedSample) -> f64 {
    let wt = sample.treated_w();
    let wc = sample.control_w();
    let (mt, mc) = (mean(&wt), mean(&wc));
    sum(wt.iter().map(|v| (v - mt) * (v - mt)).chain(wc.iter().map(|v| (v - mc) * (v - mc))))
}

/// `(w - c*D)` minus its grand mean.
pub fn null_residuals(sample: &CollapsedSample, c: f64) -> Vec<f64> {
    let z = sample.null_imposed(c);
    let m = mean(&z);
    z.into_iter().map(|v| v - m).collect()
}

/// Counterfactual mean for a treated unit and period: the unit's average
/// over the other periods plus the control average of each control's
/// deviation from its own other-period average.
pub fn impute_counterfactual_did(panel: &Panel, unit: usize, t: usize) -> Result<f64> {
    if unit >= panel.n_units() || !panel.is_treated(unit) {
        return invalid(format!("unit {unit} is not a treated unit"));
    }
    if t >= panel.n_periods() {
        return invalid(format!("period {t} out of range"));
    }
    if panel.n_periods() < 2 {
        return invalid("counterfactual imputation needs at least 2 periods");
    }
    let denom = (panel.n_periods() - 1) as f64;
    let loo = |j: usize| sum(panel.row(j).iter().enumerate().filter(|&(s, _)| s != t).map(|(_, &v)| v)) / denom;
    let controls = panel.control_units();
    let dev = sum(controls.iter().map(|&j| panel.y(j, t) - loo(j))) / controls.len() as f64;
    Ok(loo(unit) + dev)
}

/// [`impute_counterfactual_did`] for every period, in O(N T).
pub fn did_imputation_series(panel: &Panel, unit: usize) -> Result<Vec<f64>> {
    impute_counterfactual_did(panel, unit, 0)?;
    let tt = panel.n_periods();
    let denom = (tt - 1) as f64;
    let controls = panel.control_units();
    let totals: Vec<f64> = (0..panel.n_units()).map(|j| sum(panel.row(j).iter().copied())).collect();
    let own = totals[unit];
    Ok((0..tt)
        .map(|t| {
            let dev = sum(controls.iter().map(|&j| {
                let y = panel.y(j, t);
                y - (totals[j] - y) / denom
            })) / controls.len() as f64;
            (own - panel.y(unit, t)) / denom + dev
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(rows: Vec<Vec<f64>>, treated: &[usize], n_post: usize) -> Panel {
        Panel::from_rows(rows, treated, n_post).unwrap()
    }

    #[test]
    fn minimal_panel_accepted() {
        let p = panel(vec![vec![0.0, 1.0], vec![0.0, 0.0]], &[0], 1);
        assert_eq!(p.n_units(), 2);
        assert!(p.d(0, 1));
        assert!(!p.d(0, 0));
    }

    #[test]
    fn validation_errors_have_codes() {
        let raw = RawPanel {
            outcomes: vec![vec![Some(1.0), None], vec![Some(0.0), Some(0.0)]],
            treated_units: vec![0],
            post_periods: vec![1],
            ..Default::default()
        };
        assert_eq!(validate_panel(raw).unwrap_err().code(), "UNBALANCED");
        let e = Panel::from_rows(vec![vec![0.0, 1.0]; 2], &[0, 1], 1).unwrap_err();
        assert_eq!(e.code(), "NO_CONTROLS");
        let e = Panel::from_rows(vec![vec![0.0, 1.0]; 2], &[], 1).unwrap_err();
        assert_eq!(e.code(), "NO_TREATED");
        let raw = RawPanel {
            outcomes: vec![vec![Some(0.0); 3]; 2],
            treated_units: vec![0],
            post_periods: vec![1],
            ..Default::default()
        };
        assert_eq!(validate_panel(raw).unwrap_err().code(), "NON_SUFFIX_POST");
    }

    #[test]
    fn collapse_examples() {
        let p = panel(vec![vec![1.0, 3.0, 5.0, 7.0], vec![2.0; 4]], &[0], 2);
        let s = collapse_prepost(&p).unwrap();
        assert_eq!(s.w, vec![4.0, 0.0]);
        let p = panel(vec![vec![0.0, 0.0, 2.0], vec![1.0; 3]], &[0], 2);
        assert_eq!(collapse_prepost(&p).unwrap().w[0], 1.0);
        let p = panel(vec![vec![1.0], vec![2.0]], &[0], 1);
        assert_eq!(collapse_prepost(&p).unwrap_err().code(), "NO_PRE");
        assert_eq!(collapse(&p).unwrap().w, vec![1.0, 2.0]);
    }

    #[test]
    fn effect_examples() {
        let s = CollapsedSample::treated_first(vec![4.0, 1.0, 1.0, 1.0], 1).unwrap();
        assert_eq!(estimate_effect(&s).tau_hat, 3.0);
        let s = CollapsedSample::treated_first(vec![2.0, 4.0, 0.0, 2.0], 2).unwrap();
        assert_eq!(estimate_effect(&s).tau_hat, 2.0);
        let s = CollapsedSample::treated_first(vec![5.0; 4], 2).unwrap();
        assert_eq!(estimate_effect(&s).tau_hat, 0.0);
    }

    #[test]
    fn variance_examples() {
        let s = CollapsedSample::treated_first(vec![0.0, 2.0, 0.0, 2.0], 2).unwrap();
        assert_eq!(var_heteroskedastic(&s).value, 1.0);
        assert_eq!(var_homoskedastic(&s).value, 1.0);
        let s = CollapsedSample::treated_first(vec![9.0, 0.0, 2.0, 4.0], 1).unwrap();
        // controls: mean 2, mean squared deviation 8/3
        assert_eq!(var_heteroskedastic(&s).value, (8.0 / 3.0) / 3.0);
        let v = var_homoskedastic(&s).value;
        assert!((v - (8.0 / 4.0) * (1.0 + 1.0 / 3.0)).abs() < 1e-15);
        let s = CollapsedSample::treated_first(vec![1.0; 5], 2).unwrap();
        assert_eq!(var_heteroskedastic(&s).value, 0.0);
        assert_eq!(var_homoskedastic(&s).value, 0.0);
    }

    #[test]
    fn null_residual_examples() {
        let s = CollapsedSample::treated_first(vec![4.0, 0.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(null_residuals(&s, 0.0), vec![3.0, -1.0, -1.0, -1.0]);
        let shifted = CollapsedSample::treated_first(vec![14.0, 10.0, 10.0, 10.0], 1).unwrap();
        assert_eq!(null_residuals(&shifted, 0.0), vec![3.0, -1.0, -1.0, -1.0]);
        // c = tau_hat with no within-group spread: all residuals vanish
        let s = CollapsedSample::treated_first(vec![5.0, 5.0, 1.0, 1.0], 2).unwrap();
        let e = null_residuals(&s, 4.0);
        assert!(e.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn did_imputation_hand_panel() {
        // unit 0 treated: [1, 2, 6]; unit 1 control: [0, 1, 5]
        let p = panel(vec![vec![1.0, 2.0, 6.0], vec![0.0, 1.0, 5.0]], &[0], 1);
        // t = 2: own loo mean (1+2)/2 = 1.5; control 5 - (0+1)/2 = 4.5
        assert_eq!(impute_counterfactual_did(&p, 0, 2).unwrap(), 6.0);
        // t = 0: own (2+6)/2 = 4; control 0 - 3 = -3
        assert_eq!(impute_counterfactual_did(&p, 0, 0).unwrap(), 1.0);
        let series = did_imputation_series(&p, 0).unwrap();
        for t in 0..3 {
            assert!((series[t] - impute_counterfactual_did(&p, 0, t).unwrap()).abs() < 1e-14);
        }
        let p = panel(vec![vec![0.0; 3]; 3], &[0], 1);
        assert_eq!(impute_counterfactual_did(&p, 0, 1).unwrap(), 0.0);
        let p = panel(vec![vec![1.0], vec![2.0]], &[0], 1);
        assert!(impute_counterfactual_did(&p, 0, 0).is_err());
        let p = panel(vec![vec![1.0, 2.0], vec![2.0, 3.0]], &[0], 1);
        assert!(impute_counterfactual_did(&p, 1, 0).is_err());
    }

    #[test]
    fn treated_equal_to_control_average_is_reproduced() {
        let rows = vec![
            vec![1.0, 3.0, 2.0, 5.0],
            vec![0.0, 2.0, 1.0, 4.0],
            vec![2.0, 4.0, 3.0, 6.0],
        ];
        let p = panel(rows, &[0], 1);
        for t in 0..4 {
            assert!((impute_counterfactual_did(&p, 0, t).unwrap() - p.y(0, t)).abs() < 1e-14);
        }
    }
}
