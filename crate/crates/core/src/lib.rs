//! Inference for treatment effects when only one or a few units are
//! treated: cross-sectional extrapolation tests, residual-based time
//! series tests, sign-change and wild bootstrap tests, normal-theory
//! cluster tests, and a seeded Monte Carlo lab.

pub mod error;
pub mod mc;
pub mod methods;
pub mod normal;
pub mod numeric;
pub mod crosssec;
pub mod panel;
pub mod result;
pub mod rng;
pub mod signchange;
pub mod timeseries;

pub use error::{Error, Result};
pub use panel::{
    collapse, collapse_cross_section, collapse_prepost, did_imputation_series, estimate_effect,
    impute_counterfactual_did, null_residuals, validate_panel, var_heteroskedastic,
    var_homoskedastic, CollapsedSample, Covariates, EffectEstimate, Panel, RawPanel,
    VarianceEstimate, VarianceKind,
};
pub use result::{EstimateResult, IntervalResult, Outcome, TestResult};
pub use methods::{Method, MethodConfig};
pub use rng::{FlipDraws, Resampling, Tail};
