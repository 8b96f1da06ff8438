use rand::Rng;
use rand_distr::StandardNormal;

use crate::mc::Scenario;
use crate::panel::{CollapsedSample, Panel};
use crate::rng::rng_from;

/// Stationary Gaussian AR(1) series with unit marginal variance.
pub fn ar1_series(rng: &mut impl Rng, rho: f64, len: usize) -> Vec<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(len);
    let mut e: f64 = rng.sample(StandardNormal);
    out.push(e);
    for _ in 1..len {
        let z: f64 = rng.sample(StandardNormal);
        e = rho * e + innov * z;
        out.push(e);
    }
    out
}

/// Panel of `n1 + n0` units (treated first) over `t0 + t1` periods with
/// independent AR(1) errors, zero fixed effects, and the constant effect
/// added to treated post cells.
pub fn gen_ar1_panel(scen: &Scenario, rep_seed: u64) -> Panel {
    let mut rng = rng_from(rep_seed);
    let t = scen.t0 + scen.t1;
    let rows: Vec<Vec<f64>> = (0..scen.n1 + scen.n0)
        .map(|j| {
            let mut r = ar1_series(&mut rng, scen.rho, t);
            if j < scen.n1 {
                for v in &mut r[scen.t0..] {
                    *v += scen.effect;
                }
            }
            r
        })
        .collect();
    let treated: Vec<usize> = (0..scen.n1).collect();
    Panel::from_rows(rows, &treated, scen.t1).expect("scenario validated")
}

/// `100 + n1` iid standard normal values, the first `n1` treated.
pub fn gen_table1_sample(n1: usize, rep_seed: u64) -> CollapsedSample {
    let mut rng = rng_from(rep_seed);
    let w: Vec<f64> = (0..100 + n1).map(|_| rng.sample(StandardNormal)).collect();
    CollapsedSample::treated_first(w, n1).expect("n1 >= 1")
}
