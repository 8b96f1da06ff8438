//! Super-uniformity of enumerated p-values, checked over the whole
//! transformation group on small instances.

use proptest::prelude::*;

use fewtreated::crosssec::{ct_exact_permutation, design_randomization_test, permutation_tstat};
use fewtreated::rng::next_combination;
use fewtreated::signchange::{signchange_test, PerUnitEstimates};
use fewtreated::timeseries::{conformal_test, eos_pvalue, DidImputation, ResidualSeries};
use fewtreated::{CollapsedSample, Panel, Resampling};

/// `#{p <= a} <= a * len` at every level `a` that is attained, and at the
/// conventional levels.
fn assert_super_uniform(ps: &[f64]) -> Result<(), TestCaseError> {
    let n = ps.len() as f64;
    let mut levels: Vec<f64> = ps.to_vec();
    levels.extend([0.01, 0.05, 0.1, 0.2, 0.5]);
    for &a in &levels {
        let k = ps.iter().filter(|&&p| p <= a).count() as f64;
        prop_assert!(k <= a * n + 1e-9, "P(p <= {a}) = {} over {n}", k / n);
    }
    Ok(())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                go(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// p-value of `f` with every size-`n1` subset of `w` playing the treated
/// group.
fn over_assignments(w: &[f64], n1: usize, f: impl Fn(&CollapsedSample) -> f64) -> Vec<f64> {
    let n = w.len();
    let mut idx: Vec<usize> = (0..n1).collect();
    let mut ps = Vec::new();
    loop {
        let mut flags = vec![false; n];
        for &i in &idx {
            flags[i] = true;
        }
        ps.push(f(&CollapsedSample::new(w.to_vec(), flags).unwrap()));
        if !next_combination(&mut idx, n) {
            break;
        }
    }
    ps
}

fn small_sample(min_n1: usize) -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2 * min_n1.max(1)..=8).prop_flat_map(move |n| {
        // integer-valued draws make ties common
        let vals = prop_oneof![
            prop::collection::vec(-3.0..3.0f64, n),
            prop::collection::vec((-2i32..3).prop_map(f64::from), n),
        ];
        (vals, min_n1.max(1)..=n - min_n1.max(1))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ct_exact_is_super_uniform((w, n1) in small_sample(1), c in -1.0..1.0f64) {
        let res = Resampling::default();
        // sharp null Y(1) = Y(0) + c: treated outcomes carry the shift
        let ps = over_assignments(&w, n1, |s| {
            let shifted: Vec<f64> = s.w.iter().zip(&s.treated).map(|(v, &d)| if d { v + c } else { *v }).collect();
            let s = CollapsedSample::new(shifted, s.treated.clone()).unwrap();
            let r = ct_exact_permutation(&s, c, &res).unwrap();
            assert!(r.enumerated);
            r.p_value
        });
        assert_super_uniform(&ps)?;
    }

    #[test]
    fn design_randomization_is_super_uniform((w, n1) in small_sample(1)) {
        let res = Resampling::default();
        let ps = over_assignments(&w, n1, |s| design_randomization_test(&s.w, &s.treated, 0.0, &res).unwrap().p_value);
        assert_super_uniform(&ps)?;
    }

    #[test]
    fn studentized_permutation_is_super_uniform((w, n1) in small_sample(2)) {
        let res = Resampling::default();
        let ps = over_assignments(&w, n1, |s| permutation_tstat(s, 0.0, &res).unwrap().p_value);
        assert_super_uniform(&ps)?;
    }

    #[test]
    fn signchange_is_super_uniform(
        tau in prop::collection::vec(prop_oneof![-3.0..3.0f64, (-2i32..3).prop_map(f64::from)], 1..=8),
        c in -1.0..1.0f64,
    ) {
        let n = tau.len();
        let res = Resampling::default();
        let ps: Vec<f64> = (0..1u32 << n)
            .map(|k| {
                let flipped: Vec<f64> =
                    tau.iter().enumerate().map(|(j, t)| c + if (k >> j) & 1 == 1 { -t } else { *t }).collect();
                signchange_test(&PerUnitEstimates::new(flipped).unwrap(), c, &res).unwrap().p_value
            })
            .collect();
        assert_super_uniform(&ps)?;
    }

    #[test]
    fn eos_is_super_uniform(v in prop::collection::vec(prop_oneof![-3.0..3.0f64, (-2i32..3).prop_map(f64::from)], 2..=8)) {
        let ps: Vec<f64> = permutations(v.len())
            .iter()
            .map(|p| eos_pvalue(&ResidualSeries::new(p.iter().map(|&i| v[i]).collect(), 1).unwrap()).p_value)
            .collect();
        assert_super_uniform(&ps)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Reordering the periods of the whole panel permutes the DiD
    /// imputation residuals, so the conformal p-value is super-uniform over
    /// the period permutations when the null holds.
    #[test]
    fn conformal_is_super_uniform(
        n in 3usize..=5,
        t in 3usize..=7,
        vals in prop::collection::vec(-3.0..3.0f64, 35),
        c in -1.0..1.0f64,
    ) {
        let rows: Vec<Vec<f64>> = (0..n).map(|j| vals[j * 7..j * 7 + t].to_vec()).collect();
        let ps: Vec<f64> = permutations(t)
            .iter()
            .map(|perm| {
                let mut r: Vec<Vec<f64>> = rows.iter().map(|row| perm.iter().map(|&s| row[s]).collect()).collect();
                // the treated unit's post cell carries the hypothesized effect
                r[0][t - 1] += c;
                let panel = Panel::from_rows(r, &[0], 1).unwrap();
                conformal_test(&panel, c, &DidImputation).unwrap().p_value
            })
            .collect();
        assert_super_uniform(&ps)?;
    }
}

#[test]
fn ct_exact_ties_when_null_residuals_vanish() {
    // constant null-imposed outcomes: the observed statistic is pure roundoff
    let c = -0.984660479434895;
    let res = Resampling::default();
    for t in 0..2 {
        let mut w = vec![-2.0, -2.0];
        w[t] += c;
        let flags = (0..2).map(|i| i == t).collect();
        let r = ct_exact_permutation(&CollapsedSample::new(w, flags).unwrap(), c, &res).unwrap();
        assert_eq!(r.p_value, 1.0);
    }
}
