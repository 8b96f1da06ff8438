//! Named procedures runnable on a panel, shared by the command line and
//! the Monte Carlo engine.

use std::fmt;
use std::str::FromStr;

use crate::crosssec::{
    conditional_randomization_test, ct_confint, ct_exact_permutation, ct_exact_permutation_cov, ct_pvalue,
    design_randomization_test, fp_rescale, permutation_tstat,
};
use crate::error::{invalid, Result};
use crate::normal::{
    bester_aggregate, bester_ttest, donald_lang, im_ttest, jackknife_ttest, leung_default_r, leung_resampled_t,
    robust_ttest, ClusterEstimates,
};
use crate::panel::{collapse, impute_counterfactual_did, CollapsedSample, Panel};
use crate::result::{EstimateResult, Outcome};
use crate::rng::{derive_seed, Resampling, Tail};
use crate::signchange::{
    aggregate_partitions, cluster_contrasts, min_feasible_alpha, partition_controls, signchange_partitioned,
    signchange_test, wildboot_null, wildboot_null_clustered, Partition, PerUnitEstimates,
};
use crate::timeseries::{conformal_test, eos_pvalue, prediction_interval, pup_adjust, DidImputation, FittedSeries, ResidualSeries};

/// Stream used to derive the coarse partition from a run seed.
pub const PARTITION_STREAM: u64 = 1;
/// Stream used to derive resampling draws from a run seed.
pub const RESAMPLE_STREAM: u64 = 2;

macro_rules! methods {
    ($($variant:ident => $id:literal),* $(,)?) => {
        /// Every procedure exposed by name.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum Method { $($variant),* }

        impl Method {
            pub const ALL: &'static [Method] = &[$(Method::$variant),*];

            pub fn id(self) -> &'static str {
                match self { $(Method::$variant => $id),* }
            }
        }
    };
}

methods! {
    RobustT => "robust-t",
    DonaldLang => "donald-lang",
    Ct => "ct",
    CtCi => "ct-ci",
    CtExact => "ct-exact",
    CtExactCov => "ct-exact-cov",
    PermT => "perm-t",
    Fp => "fp",
    Randomization => "randomization",
    ConditionalRandomization => "conditional-randomization",
    Eos => "eos",
    Conformal => "conformal",
    Pup => "pup",
    PredictionInterval => "prediction-interval",
    Signchange => "signchange",
    SignchangePartitioned => "signchange-partitioned",
    SignchangeAgg => "signchange-agg",
    Wildboot => "wildboot",
    WildbootCluster => "wildboot-cluster",
    Im => "im",
    Bester => "bester",
    BesterAgg => "bester-agg",
    Jackknife => "jackknife",
    JackknifeUnit => "jackknife-unit",
    Leung => "leung",
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.id() == s)
            .ok_or_else(|| crate::Error::Invalid(format!("unknown method '{s}'")))
    }
}

/// Settings shared by all methods in one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub alpha: f64,
    /// Null value of the effect.
    pub c: f64,
    pub budget: usize,
    /// Base seed; partitions and resampling draws use derived streams.
    pub seed: u64,
    pub tail: Tail,
    pub partitions: usize,
    /// Per-unit flags for the conditional randomization test.
    pub balance: Option<Vec<bool>>,
    /// Externally fitted counterfactual for the first treated unit.
    pub m_hat: Option<Vec<f64>>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            alpha: 0.05,
            c: 0.0,
            budget: 10_000,
            seed: 0,
            tail: Tail::Both,
            partitions: 100,
            balance: None,
            m_hat: None,
        }
    }
}

impl MethodConfig {
    pub fn resampling(&self) -> Resampling {
        Resampling { budget: self.budget, seed: derive_seed(self.seed, RESAMPLE_STREAM), tail: self.tail }
    }

    pub fn partition_seed(&self) -> u64 {
        derive_seed(self.seed, PARTITION_STREAM)
    }
}

fn coarse_partition(sample: &CollapsedSample, cfg: &MethodConfig) -> Result<Partition> {
    partition_controls(&sample.treated_idx(), &sample.control_idx(), cfg.partition_seed())
}

/// Pre-period residuals of the first treated unit from leave-one-out DiD
/// imputation on the pre periods, and the prediction gap for the first
/// post period.
struct PrePost {
    pre: Vec<f64>,
    y: f64,
    m: f64,
}

fn pre_post(panel: &Panel) -> Result<PrePost> {
    let t0 = panel.n_pre();
    if t0 < 2 {
        return invalid("need at least 2 pre periods");
    }
    let unit = panel.treated_units()[0];
    let rows_for = |periods: &[usize]| -> Vec<Vec<f64>> {
        (0..panel.n_units()).map(|j| periods.iter().map(|&s| panel.y(j, s)).collect()).collect()
    };
    let pre_periods: Vec<usize> = (0..t0).collect();
    let treated = panel.treated_units();
    let pre_panel = Panel::from_rows(rows_for(&pre_periods), &treated, 1)?;
    let pre = (0..t0)
        .map(|s| impute_counterfactual_did(&pre_panel, unit, s).map(|m| pre_panel.y(unit, s) - m))
        .collect::<Result<Vec<f64>>>()?;
    let mut with_post = pre_periods.clone();
    with_post.push(t0);
    let pp = Panel::from_rows(rows_for(&with_post), &treated, 1)?;
    let m = impute_counterfactual_did(&pp, unit, t0)?;
    Ok(PrePost { pre, y: panel.y(unit, t0), m })
}

impl Method {
    /// Run on a panel.
    pub fn run(self, panel: &Panel, cfg: &MethodConfig) -> Result<Outcome> {
        let sample = collapse(panel)?;
        let res = cfg.resampling();
        let c = cfg.c;
        let test = |r: crate::TestResult| Ok(Outcome::Test(r));
        match self {
            Method::RobustT => test(robust_ttest(&sample, c)?),
            Method::DonaldLang => test(donald_lang(&sample, c)?),
            Method::Ct => test(ct_pvalue(&sample, c)),
            Method::CtCi => Ok(Outcome::Interval(ct_confint(&sample, cfg.alpha)?)),
            Method::CtExact => test(ct_exact_permutation(&sample, c, &res)?),
            Method::CtExactCov => test(ct_exact_permutation_cov(&sample, c, &res)?),
            Method::PermT => test(permutation_tstat(&sample, c, &res)?),
            Method::Fp => {
                let fp = fp_rescale(&sample)?;
                let mut r = ct_pvalue(&fp.sample, c);
                r.method = "fp".into();
                r.meta.insert("a".into(), fp.a);
                r.meta.insert("b".into(), fp.b);
                if fp.clamped {
                    r.warnings.push("fitted variance clamped at its floor".into());
                }
                test(r)
            }
            Method::Randomization => test(design_randomization_test(&sample.w, &sample.treated, c, &res)?),
            Method::ConditionalRandomization => {
                let bal = cfg.balance.as_ref().ok_or_else(|| crate::Error::Invalid("no balance variable given".into()))?;
                test(conditional_randomization_test(&sample.w, &sample.treated, bal, c, &res)?)
            }
            Method::Eos => {
                let unit = panel.treated_units()[0];
                let fit = crate::did_imputation_series(panel, unit)?;
                let r: Vec<f64> = panel.row(unit).iter().zip(&fit).map(|(y, m)| y - m).collect();
                test(eos_pvalue(&ResidualSeries::new(r, panel.n_post())?))
            }
            Method::Conformal => match &cfg.m_hat {
                Some(m) => test(conformal_test(panel, c, &FittedSeries(m.clone()))?),
                None => test(conformal_test(panel, c, &DidImputation)?),
            },
            Method::Pup => {
                let pp = pre_post(panel)?;
                let tau = pp.y - pp.m;
                let adj = pup_adjust(&pp.pre, tau, *pp.pre.last().expect("non-empty"))?;
                let mut meta = std::collections::BTreeMap::new();
                meta.insert("rho".into(), adj.rho);
                Ok(Outcome::Estimate(EstimateResult { method: "pup".into(), estimate: tau, adjusted: adj.tau_pup, meta }))
            }
            Method::PredictionInterval => {
                let pp = pre_post(panel)?;
                Ok(Outcome::Interval(prediction_interval(&pp.pre, pp.y, pp.m, cfg.alpha)?))
            }
            Method::Signchange => {
                let mut r = signchange_test(&PerUnitEstimates::from_sample(&sample), c, &res)?;
                let floor = min_feasible_alpha(sample.n1());
                if floor > cfg.alpha {
                    r.warnings.push(format!(
                        "with {} treated units the smallest attainable p-value is {floor}, above alpha = {}",
                        sample.n1(),
                        cfg.alpha
                    ));
                }
                test(r)
            }
            Method::SignchangePartitioned => test(signchange_partitioned(&sample, &coarse_partition(&sample, cfg)?, c, &res)?),
            Method::SignchangeAgg => test(aggregate_partitions(&sample, c, cfg.partitions, &res)?),
            Method::Wildboot => test(wildboot_null(&sample, c, &res)?),
            Method::WildbootCluster => test(wildboot_null_clustered(&sample, &coarse_partition(&sample, cfg)?, c, &res)?),
            Method::Im => {
                let part = coarse_partition(&sample, cfg)?;
                let est = ClusterEstimates::new(cluster_contrasts(&sample, &part)?)?;
                let mut r = im_ttest(&est, c, cfg.alpha)?;
                r.seed = Some(cfg.seed);
                test(r)
            }
            Method::Bester => test(bester_ttest(&sample, &coarse_partition(&sample, cfg)?, c, cfg.alpha)?),
            Method::BesterAgg => test(bester_aggregate(&sample, c, cfg.partitions, cfg.alpha, cfg.partition_seed())?),
            Method::Jackknife => test(jackknife_ttest(&sample, &coarse_partition(&sample, cfg)?, c, cfg.alpha)?),
            Method::JackknifeUnit => {
                let mut r = jackknife_ttest(&sample, &Partition::singletons(sample.len()), c, cfg.alpha)?;
                r.method = "jackknife-unit".into();
                test(r)
            }
            Method::Leung => {
                let (a, b) = (sample.treated_w(), sample.control_w());
                let o = leung_resampled_t(&a, &b, leung_default_r(a.len()), leung_default_r(b.len()), c, res.seed)?;
                test(o.result)
            }
        }
    }
}
