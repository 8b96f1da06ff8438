use std::collections::BTreeMap;

use serde::Serialize;

use crate::rng::RefInfo;

/// Outcome of a hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub method: String,
    pub p_value: f64,
    pub statistic: f64,
    /// Hypothesized effect under the null.
    pub c0: f64,
    /// Number of reference draws, identity included; `None` for analytic
    /// reference distributions.
    pub ref_size: Option<usize>,
    pub enumerated: bool,
    pub seed: Option<u64>,
    pub critical_value: Option<f64>,
    pub df: Option<f64>,
    pub warnings: Vec<String>,
    pub meta: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
}

impl TestResult {
    pub fn new(method: &str, p_value: f64, statistic: f64, c0: f64) -> Self {
        TestResult {
            method: method.to_string(),
            p_value,
            statistic,
            c0,
            ref_size: None,
            enumerated: false,
            seed: None,
            critical_value: None,
            df: None,
            warnings: Vec::new(),
            meta: BTreeMap::new(),
            series: BTreeMap::new(),
        }
    }

    pub(crate) fn with_ref(mut self, info: RefInfo, seed: u64) -> Self {
        self.ref_size = Some(info.size);
        self.enumerated = info.enumerated;
        self.seed = if info.enumerated { None } else { Some(seed) };
        self
    }

    pub(crate) fn meta(mut self, key: &str, value: f64) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    pub(crate) fn warn(mut self, msg: impl Into<String>) -> Self {
        self.warnings.push(msg.into());
        self
    }

    /// Reject at level `alpha`.
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// A confidence or prediction interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalResult {
    pub method: String,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub estimate: f64,
    pub warnings: Vec<String>,
}

/// p-value from `count` weak exceedances among `size` reference draws.
pub(crate) fn frac(count: usize, size: usize) -> f64 {
    count as f64 / size as f64
}

/// A point estimate with an adjustment, e.g. the AR(1)-corrected effect.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub method: String,
    pub estimate: f64,
    pub adjusted: f64,
    pub meta: BTreeMap<String, f64>,
}

/// Any record a method can produce.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Outcome {
    Test(TestResult),
    Interval(IntervalResult),
    Estimate(EstimateResult),
}

impl Outcome {
    pub fn method(&self) -> &str {
        match self {
            Outcome::Test(t) => &t.method,
            Outcome::Interval(i) => &i.method,
            Outcome::Estimate(e) => &e.method,
        }
    }

    /// Rejection of the null at `alpha`; intervals reject when they exclude
    /// `c`, estimates never reject.
    pub fn rejects(&self, alpha: f64, c: f64) -> bool {
        match self {
            Outcome::Test(t) => t.rejects(alpha),
            Outcome::Interval(i) => c < i.lower || c > i.upper,
            Outcome::Estimate(_) => false,
        }
    }
}
