//! Seeded, parallel Monte Carlo rejection studies.
//!
//! Replication `r` of a study with seed `s` draws its data from
//! `derive_seed(s, r)`, so results do not depend on scheduling. Counts are
//! integers and are reduced after the parallel map, which keeps the output
//! bitwise identical for any number of worker threads.

mod dgp;
mod reproduce;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use dgp::{ar1_series, gen_ar1_panel, gen_table1_sample};
pub use reproduce::{
    figure1_checks, reproduce_figure1, reproduce_table1, table1_checks, table1_n1_analytic, Check, Figure1Options,
    Table1Row, FIGURE1_EFFECTS, FIGURE1_METHODS, FIGURE1_N1, FIGURE1_REPS_FLOOR, TABLE1_REPS_FLOOR,
};

use crate::error::{invalid, Error, Result};
use crate::methods::{Method, MethodConfig};
use crate::panel::Panel;
use crate::rng::derive_seed;

/// Data-generating process and test settings of one study cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub n0: usize,
    pub n1: usize,
    pub t0: usize,
    pub t1: usize,
    pub rho: f64,
    /// Constant effect in units of the outcome's standard deviation.
    pub effect: f64,
    pub alpha: f64,
    pub methods: Vec<String>,
    pub reps: usize,
    pub seed: u64,
    pub budget: usize,
    pub partitions: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            n0: 30,
            n1: 2,
            t0: 5,
            t1: 5,
            rho: 0.5,
            effect: 0.0,
            alpha: 0.05,
            methods: vec!["ct-exact".into()],
            reps: 1000,
            seed: 1,
            budget: 1000,
            partitions: 100,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return invalid("reps must be at least 1");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return invalid(format!("rho must lie in [0,1), got {}", self.rho));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if self.n1 < 1 || self.n0 < 1 || self.t1 < 1 {
            return invalid("n1, n0 and t1 must be at least 1");
        }
        if !self.effect.is_finite() {
            return invalid("effect must be finite");
        }
        if self.methods.is_empty() {
            return invalid("no methods listed");
        }
        Ok(())
    }

    /// Apply `key=value` lines (blank lines and `#` comments ignored).
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Input(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value '{v}' for {key}"))
        }
        match key {
            "n0" => self.n0 = num(key, value)?,
            "n1" => self.n1 = num(key, value)?,
            "t0" => self.t0 = num(key, value)?,
            "t1" => self.t1 = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "effect" => self.effect = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "reps" => self.reps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "budget" => self.budget = num(key, value)?,
            "partitions" => self.partitions = num(key, value)?,
            "methods" => {
                self.methods = value.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect()
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    fn method_config(&self, rep_seed: u64) -> MethodConfig {
        MethodConfig {
            alpha: self.alpha,
            c: 0.0,
            budget: self.budget,
            seed: rep_seed,
            partitions: self.partitions,
            ..MethodConfig::default()
        }
    }
}

/// A test that can be run inside a study.
pub trait Procedure: Sync {
    fn id(&self) -> String;
    fn rejects(&self, panel: &Panel, cfg: &MethodConfig) -> Result<bool>;
}

impl Procedure for Method {
    fn id(&self) -> String {
        Method::id(*self).to_string()
    }

    fn rejects(&self, panel: &Panel, cfg: &MethodConfig) -> Result<bool> {
        Ok(self.run(panel, cfg)?.rejects(cfg.alpha, cfg.c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRate {
    pub method: String,
    pub rejections: u64,
    pub errors: u64,
    /// Replications that produced a decision.
    pub valid_reps: u64,
    pub rejection_rate: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCResult {
    pub scenario: Scenario,
    pub rates: Vec<MethodRate>,
    /// Wall-clock seconds; left out of serialized output so reruns compare equal.
    #[serde(skip)]
    pub elapsed_secs: f64,
}

/// One line of the plot-ready output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub method: String,
    pub n1: usize,
    pub effect: f64,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub reps: usize,
    pub seed: u64,
}

impl MCResult {
    pub fn rows(&self) -> Vec<RateRow> {
        self.rates
            .iter()
            .map(|r| RateRow {
                method: r.method.clone(),
                n1: self.scenario.n1,
                effect: self.scenario.effect,
                rejection_rate: r.rejection_rate,
                mc_se: r.mc_se,
                reps: self.scenario.reps,
                seed: self.scenario.seed,
            })
            .collect()
    }

    pub fn rate(&self, method: &str) -> Option<f64> {
        self.rates.iter().find(|r| r.method == method).map(|r| r.rejection_rate)
    }
}

/// Run every listed method on `scen.reps` simulated panels.
pub fn run_rejection_study(scen: &Scenario) -> Result<MCResult> {
    run_rejection_study_with_progress(scen, &|_, _| {})
}

pub fn run_rejection_study_with_progress(scen: &Scenario, progress: &(dyn Fn(usize, usize) + Sync)) -> Result<MCResult> {
    let methods = scen.methods.iter().map(|m| m.parse::<Method>()).collect::<Result<Vec<_>>>()?;
    let procs: Vec<&dyn Procedure> = methods.iter().map(|m| m as &dyn Procedure).collect();
    run_study_with(scen, &procs, progress)
}

/// Study driver for arbitrary procedures. Each replication's panel comes
/// from [`gen_ar1_panel`] with seed `derive_seed(scen.seed, rep)`.
pub fn run_study_with(scen: &Scenario, procs: &[&dyn Procedure], progress: &(dyn Fn(usize, usize) + Sync)) -> Result<MCResult> {
    scen.validate()?;
    let start = Instant::now();
    let done = AtomicUsize::new(0);
    let step = (scen.reps / 100).max(1);
    // 0 = accept, 1 = reject, 2 = error
    let outcomes: Vec<Vec<u8>> = (0..scen.reps)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(scen.seed, rep as u64);
            let panel = gen_ar1_panel(scen, rep_seed);
            let cfg = scen.method_config(rep_seed);
            let row = procs
                .iter()
                .map(|p| match p.rejects(&panel, &cfg) {
                    Ok(true) => 1,
                    Ok(false) => 0,
                    Err(_) => 2,
                })
                .collect();
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            if k % step == 0 || k == scen.reps {
                progress(k, scen.reps);
            }
            row
        })
        .collect();
    let mut rates = Vec::with_capacity(procs.len());
    for (i, p) in procs.iter().enumerate() {
        let rejections = outcomes.iter().filter(|o| o[i] == 1).count() as u64;
        let errors = outcomes.iter().filter(|o| o[i] == 2).count() as u64;
        if errors as f64 > 0.01 * scen.reps as f64 {
            return Err(Error::StudyFailed { method: p.id(), failed: errors, reps: scen.reps as u64 });
        }
        let valid = scen.reps as u64 - errors;
        let rate = if valid > 0 { rejections as f64 / valid as f64 } else { f64::NAN };
        rates.push(MethodRate {
            method: p.id(),
            rejections,
            errors,
            valid_reps: valid,
            rejection_rate: rate,
            mc_se: (rate * (1.0 - rate) / valid as f64).sqrt(),
        });
    }
    Ok(MCResult { scenario: scen.clone(), rates, elapsed_secs: start.elapsed().as_secs_f64() })
}
