use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::mc::{run_rejection_study, RateRow, Scenario};
use crate::numeric::{mean, normal_cdf, sample_var};
use crate::panel::{estimate_effect, var_heteroskedastic};
use crate::rng::derive_seed;

use super::gen_table1_sample;

pub const TABLE1_REPS_FLOOR: usize = 10_000;
pub const FIGURE1_REPS_FLOOR: usize = 2_000;

/// Published rejection rates of the robust t-test for N1 = 1..5.
const TABLE1_TARGETS: [f64; 5] = [0.84, 0.35, 0.22, 0.16, 0.15];
const TABLE1_TOL: f64 = 0.02;
const TABLE1_N0: usize = 100;

pub const FIGURE1_N1: [usize; 4] = [2, 5, 6, 10];
pub const FIGURE1_EFFECTS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const FIGURE1_METHODS: [&str; 4] = ["im", "ct-exact", "signchange-agg", "jackknife"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub n1: usize,
    pub rejection_rate: f64,
    pub mc_se: f64,
    /// Empirical variance of the estimator over the mean robust variance.
    pub ratio_of_expectations: f64,
    /// Mean over replications of the empirical variance over each robust variance.
    pub mean_of_ratios: f64,
    pub target: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Named pass/fail outcome against a tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

/// Closed-form rejection probability of the robust t-test with one treated
/// unit when the control variance is replaced by its expectation.
pub fn table1_n1_analytic() -> f64 {
    let n0 = TABLE1_N0 as f64;
    let e_s0 = (n0 - 1.0) / n0;
    2.0 * normal_cdf(-1.96 * (e_s0 / n0).sqrt() / (1.0 + 1.0 / n0).sqrt())
}

/// Robust t-test rejection rates with 100 iid N(0,1) controls and
/// `n1 = 1..=5` treated units.
pub fn reproduce_table1(reps: usize, seed: u64) -> Result<Vec<Table1Row>> {
    if reps < TABLE1_REPS_FLOOR {
        return invalid(format!("table1 needs at least {TABLE1_REPS_FLOOR} reps, got {reps}"));
    }
    let mut rows = Vec::with_capacity(5);
    for n1 in 1..=5 {
        let base = derive_seed(seed, n1 as u64);
        let draws: Vec<(f64, f64)> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let s = gen_table1_sample(n1, derive_seed(base, rep as u64));
                (estimate_effect(&s).tau_hat, var_heteroskedastic(&s).value)
            })
            .collect();
        let rejections = draws.iter().filter(|(tau, v)| tau.abs() > 1.96 * v.sqrt()).count();
        let rate = rejections as f64 / reps as f64;
        let taus: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let vhats: Vec<f64> = draws.iter().map(|d| d.1).collect();
        let v_emp = sample_var(&taus);
        rows.push(Table1Row {
            n1,
            rejection_rate: rate,
            mc_se: (rate * (1.0 - rate) / reps as f64).sqrt(),
            ratio_of_expectations: v_emp / mean(&vhats),
            mean_of_ratios: mean(&vhats.iter().map(|v| v_emp / v).collect::<Vec<_>>()),
            target: TABLE1_TARGETS[n1 - 1],
            reps,
            seed,
        });
    }
    Ok(rows)
}

pub fn table1_checks(rows: &[Table1Row]) -> Vec<Check> {
    let mut out: Vec<Check> = rows
        .iter()
        .map(|r| {
            let d = (r.rejection_rate - r.target).abs();
            Check::new(
                format!("table1 n1={}", r.n1),
                d <= TABLE1_TOL,
                format!("rate {:.4} target {:.2} tol {TABLE1_TOL}", r.rejection_rate, r.target),
            )
        })
        .collect();
    if let Some(r) = rows.iter().find(|r| r.n1 == 1) {
        let a = table1_n1_analytic();
        out.push(Check::new(
            "table1 n1=1 closed form",
            (r.rejection_rate - a).abs() <= 0.01,
            format!("rate {:.4} closed form {a:.4} tol 0.01", r.rejection_rate),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure1Options {
    pub reps: usize,
    pub seed: u64,
    pub budget: usize,
    pub partitions: usize,
    pub n1_grid: Vec<usize>,
    pub effects: Vec<f64>,
    pub methods: Vec<String>,
}

impl Figure1Options {
    pub fn new(reps: usize, seed: u64) -> Self {
        Figure1Options {
            reps,
            seed,
            budget: 1000,
            partitions: 100,
            n1_grid: FIGURE1_N1.to_vec(),
            effects: FIGURE1_EFFECTS.to_vec(),
            methods: FIGURE1_METHODS.iter().map(|m| m.to_string()).collect(),
        }
    }
}

/// Power curves on the AR(1) design. Every effect size for a given `n1`
/// reuses the same error draws.
pub fn reproduce_figure1(opts: &Figure1Options, progress: &dyn Fn(usize, f64)) -> Result<Vec<RateRow>> {
    if opts.reps < FIGURE1_REPS_FLOOR {
        return invalid(format!("figure1 needs at least {FIGURE1_REPS_FLOOR} reps, got {}", opts.reps));
    }
    let mut rows = Vec::new();
    for &n1 in &opts.n1_grid {
        for &effect in &opts.effects {
            progress(n1, effect);
            let scen = Scenario {
                n1,
                effect,
                methods: opts.methods.clone(),
                reps: opts.reps,
                seed: derive_seed(opts.seed, n1 as u64),
                budget: opts.budget,
                partitions: opts.partitions,
                ..Scenario::default()
            };
            let mut r = run_rejection_study(&scen)?.rows();
            for row in &mut r {
                row.seed = opts.seed;
            }
            rows.extend(r);
        }
    }
    Ok(rows)
}

fn find<'a>(rows: &'a [RateRow], method: &str, n1: usize, effect: f64) -> Option<&'a RateRow> {
    rows.iter().find(|r| r.method == method && r.n1 == n1 && r.effect == effect)
}

/// Trivial sign-change power, size control at effect 0, and the power
/// ordering of the exact permutation test.
pub fn figure1_checks(rows: &[RateRow]) -> Vec<Check> {
    let mut out = Vec::new();
    let mut grid: Vec<(usize, f64)> = rows.iter().map(|r| (r.n1, r.effect)).collect();
    grid.dedup();
    let max_effect = rows.iter().map(|r| r.effect).fold(f64::NEG_INFINITY, f64::max);
    for r in rows.iter().filter(|r| r.method == "signchange-agg") {
        if r.n1 <= 5 {
            out.push(Check::new(
                format!("signchange-agg zero power n1={} effect={}", r.n1, r.effect),
                r.rejection_rate == 0.0,
                format!("rate {:.4}", r.rejection_rate),
            ));
        } else if r.effect == max_effect {
            out.push(Check::new(
                format!("signchange-agg positive power n1={}", r.n1),
                r.rejection_rate > 0.0,
                format!("rate {:.4}", r.rejection_rate),
            ));
        }
    }
    for r in rows.iter().filter(|r| r.effect == 0.0) {
        out.push(Check::new(
            format!("size {} n1={}", r.method, r.n1),
            (0.03..=0.07).contains(&r.rejection_rate),
            format!("rate {:.4} band [0.03, 0.07]", r.rejection_rate),
        ));
    }
    for &(n1, effect) in grid.iter().filter(|g| g.1 > 0.0) {
        let Some(ct) = find(rows, "ct-exact", n1, effect) else { continue };
        for r in rows.iter().filter(|r| r.n1 == n1 && r.effect == effect && r.method != "ct-exact") {
            out.push(Check::new(
                format!("power ct-exact vs {} n1={n1} effect={effect}", r.method),
                ct.rejection_rate >= r.rejection_rate - 0.02,
                format!("ct-exact {:.4} {} {:.4}", ct.rejection_rate, r.method, r.rejection_rate),
            ));
        }
    }
    out
}
