//! Sign-change randomization tests, the wild bootstrap with the null
//! imposed, and coarse partitions of the controls.

use rand::seq::SliceRandom;

use crate::error::{invalid, Result};
use crate::numeric::{max_abs, mean, sum, TIE_RTOL};
use crate::panel::{estimate_effect, CollapsedSample};
use crate::result::{frac, TestResult};
use crate::rng::{derive_seed, rng_from, FlipDraws, RefInfo, Resampling, Tail};

/// One effect estimate per treated unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PerUnitEstimates {
    pub tau: Vec<f64>,
}

impl PerUnitEstimates {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if tau.is_empty() {
            return invalid("need at least one per-unit estimate");
        }
        if tau.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite per-unit estimate");
        }
        Ok(PerUnitEstimates { tau })
    }

    /// Each treated value minus the control mean.
    pub fn from_sample(sample: &CollapsedSample) -> Self {
        let mc = mean(&sample.control_w());
        PerUnitEstimates { tau: sample.treated_w().into_iter().map(|w| w - mc).collect() }
    }

    pub fn n1(&self) -> usize {
        self.tau.len()
    }
}

/// Smallest p-value a two-sided sign-change test can attain with `n1`
/// treated units and generic data.
pub fn min_feasible_alpha(n1: usize) -> f64 {
    0.5_f64.powi(n1.max(1) as i32 - 1)
}

/// All `2^n` signed sums of `d`, built by Gray-code updates.
fn signed_sums(d: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(1 << d.len());
    let mut s = sum(d.iter().copied());
    let mut signs = vec![1.0; d.len()];
    out.push(s);
    for k in 1usize..(1 << d.len()) {
        let j = k.trailing_zeros() as usize;
        s -= 2.0 * signs[j] * d[j];
        signs[j] = -signs[j];
        out.push(s);
    }
    out
}

/// Number of sign vectors `g` in `{-1,1}^n` whose signed sum is at least
/// as extreme as the all-plus sum, by splitting the coordinates in two
/// halves and counting pairs on sorted half-sums.
fn count_extreme_signs(d: &[f64], tail: Tail) -> usize {
    let total: usize = 1 << d.len();
    let observed = sum(d.iter().copied());
    let eps = TIE_RTOL * observed.abs().max(max_abs(d));
    let half = d.len() / 2;
    let mut lo = signed_sums(&d[..half]);
    let hi = signed_sums(&d[half..]);
    lo.sort_by(f64::total_cmp);
    let at_least = |v: f64| lo.len() - lo.partition_point(|&a| a < v);
    let at_most = |v: f64| lo.partition_point(|&a| a <= v);
    match tail {
        Tail::Both => {
            let thr = observed.abs() - eps;
            if thr <= 0.0 {
                return total;
            }
            hi.iter().map(|&b| at_least(thr - b) + at_most(-thr - b)).sum()
        }
        Tail::Right => hi.iter().map(|&b| at_least(observed - eps - b)).sum(),
        Tail::Left => hi.iter().map(|&b| at_most(observed + eps - b)).sum(),
    }
}

fn sign_p(method: &str, d: &[f64], c: f64, res: &Resampling) -> Result<TestResult> {
    res.check()?;
    let n = d.len();
    let stat = sum(d.iter().copied()) / n as f64;
    if n < 63 && (1u64 << n) <= res.budget as u64 {
        let hits = count_extreme_signs(d, res.tail);
        let info = RefInfo { size: 1 << n, enumerated: true };
        return Ok(TestResult::new(method, frac(hits, info.size), stat, c).with_ref(info, res.seed));
    }
    let flips = FlipDraws::new(n, res)?;
    let coords: Vec<usize> = (0..n).collect();
    Ok(sign_p_with(method, d, c, &flips, &coords, res.tail, res.seed))
}

fn sign_p_with(method: &str, d: &[f64], c: f64, flips: &FlipDraws, coords: &[usize], tail: Tail, seed: u64) -> TestResult {
    let n = d.len() as f64;
    let stat = sum(d.iter().copied()) / n;
    let eps = TIE_RTOL * stat.abs().max(max_abs(d));
    let hits = (0..flips.len())
        .filter(|&k| {
            let s: f64 = d.iter().zip(coords).map(|(v, &j)| flips.sign(k, j) * v).sum();
            tail.extreme(s / n, stat, eps)
        })
        .count();
    TestResult::new(method, frac(hits, flips.len()), stat, c).with_ref(flips.info(), seed)
}

/// Sign-change test of `tau_j = c` for all j: compares `|mean(tau - c)|`
/// with `|mean(g * (tau - c))|` over sign vectors `g`.
pub fn signchange_test(est: &PerUnitEstimates, c: f64, res: &Resampling) -> Result<TestResult> {
    let d: Vec<f64> = est.tau.iter().map(|t| t - c).collect();
    sign_p("signchange", &d, c, res)
}

/// [`signchange_test`] driven by an external flip sequence; estimate `j`
/// uses coordinate `coords[j]` of each draw.
pub fn signchange_test_shared(est: &PerUnitEstimates, c: f64, flips: &FlipDraws, coords: &[usize]) -> Result<TestResult> {
    if coords.len() != est.n1() || coords.iter().any(|&j| j >= flips.n()) {
        return invalid("flip coordinates do not match the estimates");
    }
    let d: Vec<f64> = est.tau.iter().map(|t| t - c).collect();
    Ok(sign_p_with("signchange", &d, c, flips, coords, Tail::Both, 0))
}

/// Controls split into one cluster per treated unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Unit indices; each cluster starts with its treated unit.
    pub clusters: Vec<Vec<usize>>,
    /// Controls left out so that clusters have equal size.
    pub discarded: Vec<usize>,
    pub seed: u64,
}

impl Partition {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Every unit as its own cluster, treated or not.
    pub fn singletons(n: usize) -> Partition {
        Partition { clusters: (0..n).map(|j| vec![j]).collect(), discarded: Vec::new(), seed: 0 }
    }

    /// Check the one-treated-unit-per-cluster structure against `treated`.
    pub fn check_coarse(&self, treated: &[bool]) -> Result<()> {
        let size = self.clusters.first().map_or(0, Vec::len);
        let mut seen = vec![false; treated.len()];
        for cl in &self.clusters {
            if cl.len() != size || size < 2 {
                return invalid("clusters must have equal size with at least one control");
            }
            for (pos, &j) in cl.iter().enumerate() {
                if j >= treated.len() || seen[j] {
                    return invalid("partition repeats or exceeds unit indices");
                }
                seen[j] = true;
                if treated[j] != (pos == 0) {
                    return invalid("each cluster must hold exactly one treated unit, listed first");
                }
            }
        }
        if treated.iter().zip(&seen).any(|(&d, &s)| d && !s) {
            return invalid("partition misses a treated unit");
        }
        Ok(())
    }
}

/// Random equal-size partition of the controls, one cluster per treated
/// unit. Controls are shuffled and dealt out in blocks; any remainder is
/// discarded.
pub fn partition_controls(treated_ids: &[usize], control_ids: &[usize], seed: u64) -> Result<Partition> {
    let n1 = treated_ids.len();
    if n1 == 0 {
        return invalid("need at least one treated unit");
    }
    if control_ids.len() < n1 {
        return invalid(format!("{} controls cannot be split among {n1} treated units", control_ids.len()));
    }
    let mut shuffled = control_ids.to_vec();
    shuffled.shuffle(&mut rng_from(seed));
    let per = shuffled.len() / n1;
    let clusters = treated_ids
        .iter()
        .enumerate()
        .map(|(g, &t)| std::iter::once(t).chain(shuffled[g * per..(g + 1) * per].iter().copied()).collect())
        .collect();
    Ok(Partition { clusters, discarded: shuffled[n1 * per..].to_vec(), seed })
}

/// Within-cluster treated value minus the cluster's control mean.
pub fn cluster_contrasts(sample: &CollapsedSample, part: &Partition) -> Result<Vec<f64>> {
    part.check_coarse(&sample.treated)?;
    Ok(part
        .clusters
        .iter()
        .map(|cl| {
            let wc: Vec<f64> = cl[1..].iter().map(|&j| sample.w[j]).collect();
            sample.w[cl[0]] - mean(&wc)
        })
        .collect())
}

/// Sign-change test over cluster-level contrasts of a coarse partition.
pub fn signchange_partitioned(sample: &CollapsedSample, part: &Partition, c: f64, res: &Resampling) -> Result<TestResult> {
    let d: Vec<f64> = cluster_contrasts(sample, part)?.into_iter().map(|t| t - c).collect();
    let mut out = sign_p("signchange-partitioned", &d, c, res)?;
    out.meta.insert("partition_seed".into(), part.seed as f64);
    out.meta.insert("discarded".into(), part.discarded.len() as f64);
    Ok(out)
}

/// Wild bootstrap with the null imposed at the unit level: residuals from
/// the intercept-only fit of `w - c*D` are sign-flipped, added back to the
/// restricted fit, and the treatment coefficient is re-estimated.
pub fn wildboot_null(sample: &CollapsedSample, c: f64, res: &Resampling) -> Result<TestResult> {
    let flips = FlipDraws::new(sample.len(), res)?;
    let mut out = wildboot_null_shared(sample, c, &flips)?;
    if !flips.enumerated() {
        out.seed = Some(res.seed);
    }
    Ok(out)
}

pub fn wildboot_null_shared(sample: &CollapsedSample, c: f64, flips: &FlipDraws) -> Result<TestResult> {
    if flips.n() != sample.len() {
        return invalid("flip draws must cover every unit");
    }
    let stat = estimate_effect(sample).tau_hat - c;
    let z = sample.null_imposed(c);
    let fit = mean(&z);
    let e: Vec<f64> = z.iter().map(|v| v - fit).collect();
    let eps = TIE_RTOL * stat.abs().max(max_abs(&z));
    let (n1, n0) = (sample.n1() as f64, sample.n0() as f64);
    let d = &sample.treated;
    let mut hits = 0usize;
    for k in 0..flips.len() {
        let (mut st, mut sc) = (0.0, 0.0);
        for (i, &ei) in e.iter().enumerate() {
            // artificial outcome c*D + fit + g*e
            let y = fit + flips.sign(k, i) * ei;
            if d[i] {
                st += y + c;
            } else {
                sc += y;
            }
        }
        let beta = st / n1 - sc / n0;
        hits += usize::from((beta - c).abs() >= stat.abs() - eps);
    }
    Ok(TestResult::new("wildboot", frac(hits, flips.len()), stat, c).with_ref(flips.info(), 0))
}

/// Wild bootstrap with the null imposed and signs drawn per cluster of a
/// coarse partition; the effect is re-estimated with cluster fixed effects.
pub fn wildboot_null_clustered(sample: &CollapsedSample, part: &Partition, c: f64, res: &Resampling) -> Result<TestResult> {
    part.check_coarse(&sample.treated)?;
    let flips = FlipDraws::new(part.n_clusters(), res)?;
    let z = sample.null_imposed(c);
    let dflag = |j: usize| if sample.treated[j] { 1.0 } else { 0.0 };
    let fits: Vec<f64> = part.clusters.iter().map(|cl| mean(&cl.iter().map(|&j| z[j]).collect::<Vec<_>>())).collect();
    let dbar: Vec<f64> = part.clusters.iter().map(|cl| 1.0 / cl.len() as f64).collect();
    let sxx = sum(part.clusters.iter().zip(&dbar).flat_map(|(cl, &m)| cl.iter().map(move |&j| (dflag(j) - m).powi(2))));
    let within = |y: &dyn Fn(usize, usize) -> f64| -> f64 {
        let mut num = 0.0;
        for (g, cl) in part.clusters.iter().enumerate() {
            let ybar = cl.iter().map(|&j| y(g, j)).sum::<f64>() / cl.len() as f64;
            for &j in cl {
                num += (dflag(j) - dbar[g]) * (y(g, j) - ybar);
            }
        }
        num / sxx
    };
    let stat = within(&|_, j| sample.w[j]) - c;
    let scale = max_abs(&z);
    let eps = TIE_RTOL * stat.abs().max(scale);
    let mut hits = 0usize;
    for k in 0..flips.len() {
        let beta = within(&|g, j| c * dflag(j) + fits[g] + flips.sign(k, g) * (z[j] - fits[g]));
        hits += usize::from((beta - c).abs() >= stat.abs() - eps);
    }
    let mut out = TestResult::new("wildboot-cluster", frac(hits, flips.len()), stat, c).with_ref(flips.info(), res.seed);
    out.meta.insert("partition_seed".into(), part.seed as f64);
    Ok(out)
}

/// Average of partitioned sign-change p-values over `n_partitions`
/// independent random partitions.
pub fn aggregate_partitions(sample: &CollapsedSample, c: f64, n_partitions: usize, res: &Resampling) -> Result<TestResult> {
    if n_partitions == 0 {
        return invalid("need at least one partition");
    }
    let treated = sample.treated_idx();
    let controls = sample.control_idx();
    let mut ps = Vec::with_capacity(n_partitions);
    for s in 0..n_partitions {
        let part = partition_controls(&treated, &controls, derive_seed(res.seed, s as u64))?;
        let inner = Resampling { seed: derive_seed(res.seed ^ 0xA5A5, s as u64), ..*res };
        ps.push(signchange_partitioned(sample, &part, c, &inner)?.p_value);
    }
    let stat = estimate_effect(sample).tau_hat - c;
    let mut out = TestResult::new("signchange-agg", mean(&ps), stat, c);
    out.seed = Some(res.seed);
    out.meta.insert("partitions".into(), n_partitions as f64);
    out.series.insert("partition_p".into(), ps);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(v: &[f64]) -> PerUnitEstimates {
        PerUnitEstimates::new(v.to_vec()).unwrap()
    }

    fn brute(d: &[f64]) -> f64 {
        let n = d.len();
        let obs: f64 = d.iter().sum::<f64>().abs();
        let mut hits = 0;
        for k in 0..(1usize << n) {
            let s: f64 = (0..n).map(|j| if (k >> j) & 1 == 1 { -d[j] } else { d[j] }).sum();
            if s.abs() >= obs * (1.0 - 1e-12) {
                hits += 1;
            }
        }
        hits as f64 / (1 << n) as f64
    }

    #[test]
    fn signchange_examples() {
        let r = signchange_test(&est(&[1.0, 2.0]), 0.0, &Resampling::default()).unwrap();
        assert_eq!(r.p_value, 0.5);
        assert_eq!(r.ref_size, Some(4));
        assert_eq!(signchange_test(&est(&[3.7]), 0.0, &Resampling::default()).unwrap().p_value, 1.0);
        for v in [[0.3, -2.0], [5.0, 5.0], [1.0, -1.0]] {
            let p = signchange_test(&est(&v), 0.0, &Resampling::default()).unwrap().p_value;
            assert!(p == 0.5 || p == 1.0);
        }
        assert_eq!(signchange_test(&est(&[2.0, 2.0, 2.0]), 2.0, &Resampling::default()).unwrap().p_value, 1.0);
    }

    #[test]
    fn split_enumeration_matches_brute_force() {
        let d = [0.3, -1.2, 2.5, 0.7, 0.7, -0.1, 1.9, 0.05, -3.0];
        for len in 1..=d.len() {
            let r = signchange_test(&est(&d[..len]), 0.0, &Resampling::default()).unwrap();
            assert_eq!(r.p_value, brute(&d[..len]), "len {len}");
        }
    }

    #[test]
    fn one_sided_sign_tests() {
        let right = Resampling::default().with_tail(Tail::Right);
        let left = Resampling::default().with_tail(Tail::Left);
        // sums over 4 sign vectors: 3, 1, -1, -3
        assert_eq!(signchange_test(&est(&[1.0, 2.0]), 0.0, &right).unwrap().p_value, 0.25);
        assert_eq!(signchange_test(&est(&[1.0, 2.0]), 0.0, &left).unwrap().p_value, 1.0);
    }

    #[test]
    fn min_feasible_alpha_values() {
        assert_eq!(min_feasible_alpha(5), 0.0625);
        assert_eq!(min_feasible_alpha(6), 0.03125);
        assert_eq!(min_feasible_alpha(1), 1.0);
    }

    #[test]
    fn sampled_sign_test_includes_identity() {
        let tau: Vec<f64> = (0..30).map(|i| 1.0 + (i as f64).cos()).collect();
        let r = signchange_test(&est(&tau), 0.0, &Resampling::new(200, 4)).unwrap();
        assert!(!r.enumerated);
        assert!(r.p_value >= 1.0 / 200.0);
    }

    #[test]
    fn partition_rules() {
        let p = partition_controls(&[0, 1], &[2, 3, 4, 5], 1).unwrap();
        assert_eq!(p.clusters.len(), 2);
        assert!(p.clusters.iter().all(|c| c.len() == 3));
        assert!(p.discarded.is_empty());
        let p = partition_controls(&[0, 1], &[2, 3, 4, 5, 6], 1).unwrap();
        assert_eq!(p.discarded.len(), 1);
        assert_eq!(p, partition_controls(&[0, 1], &[2, 3, 4, 5, 6], 1).unwrap());
        assert!(partition_controls(&[0, 1, 2], &[3, 4], 1).is_err());
    }

    #[test]
    fn partitioned_identical_clusters_reduce() {
        // every cluster has the same contrast 1.5
        let w = vec![2.0, 2.0, 0.5, 0.5, 0.5, 0.5];
        let s = CollapsedSample::treated_first(w, 2).unwrap();
        let part = Partition { clusters: vec![vec![0, 2, 3], vec![1, 4, 5]], discarded: vec![], seed: 0 };
        let a = signchange_partitioned(&s, &part, 0.0, &Resampling::default()).unwrap();
        let b = signchange_test(&est(&[1.5, 1.5]), 0.0, &Resampling::default()).unwrap();
        assert_eq!(a.p_value, b.p_value);
    }

    #[test]
    fn partitioned_hand_instance_and_label_invariance() {
        let w = vec![3.0, -1.0, 1.0, 0.0, 2.0, 4.0];
        let s = CollapsedSample::treated_first(w, 2).unwrap();
        let part = Partition { clusters: vec![vec![0, 2, 3], vec![1, 4, 5]], discarded: vec![], seed: 0 };
        // contrasts 3 - 0.5 = 2.5 and -1 - 3 = -4: sums 6.5, 1.5, -1.5, -6.5 in magnitude
        let r = signchange_partitioned(&s, &part, 0.0, &Resampling::default()).unwrap();
        assert_eq!(r.p_value, brute(&[2.5, -4.0]));
        let swapped = Partition { clusters: vec![vec![0, 3, 2], vec![1, 5, 4]], discarded: vec![], seed: 0 };
        assert_eq!(signchange_partitioned(&s, &swapped, 0.0, &Resampling::default()).unwrap().p_value, r.p_value);
        let bad = Partition { clusters: vec![vec![2, 0, 3], vec![1, 4, 5]], discarded: vec![], seed: 0 };
        assert!(signchange_partitioned(&s, &bad, 0.0, &Resampling::default()).is_err());
    }

    #[test]
    fn wildboot_identity_and_degenerate_cases() {
        let s = CollapsedSample::treated_first(vec![4.0, 1.0, 1.0, 1.0], 1).unwrap();
        // c = tau_hat: every residual vanishes and the reference is a point
        assert_eq!(wildboot_null(&s, 3.0, &Resampling::default()).unwrap().p_value, 1.0);
        // c = 0: only the two flips with all signs equal reach |tau_hat|
        let r = wildboot_null(&s, 0.0, &Resampling::default()).unwrap();
        assert_eq!(r.ref_size, Some(16));
        assert_eq!(r.p_value, 2.0 / 16.0);
        assert!(wildboot_null(&s, 0.0, &Resampling::new(1, 0)).is_err());
    }

    #[test]
    fn clustered_wild_matches_partitioned_sign() {
        let w = vec![3.0, -1.0, 0.4, 1.0, 0.0, 2.0, 4.0, -0.3];
        let s = CollapsedSample::treated_first(w, 3).unwrap();
        let part = partition_controls(&[0, 1, 2], &[3, 4, 5, 6, 7], 5).unwrap();
        for c in [0.0, 0.7, -2.0] {
            let a = signchange_partitioned(&s, &part, c, &Resampling::default()).unwrap();
            let b = wildboot_null_clustered(&s, &part, c, &Resampling::default()).unwrap();
            assert_eq!(a.p_value, b.p_value);
            assert!((a.statistic - b.statistic).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_single_partition() {
        let w = vec![3.0, -1.0, 0.4, 1.0, 0.0, 2.0, 4.0, -0.3, 0.8];
        let s = CollapsedSample::treated_first(w, 3).unwrap();
        let res = Resampling::new(10_000, 12);
        let agg = aggregate_partitions(&s, 0.0, 1, &res).unwrap();
        let part = partition_controls(&[0, 1, 2], &s.control_idx(), derive_seed(12, 0)).unwrap();
        let one = signchange_partitioned(&s, &part, 0.0, &res).unwrap();
        assert_eq!(agg.p_value, one.p_value);
        assert_eq!(agg.series["partition_p"].len(), 1);
    }

    #[test]
    fn aggregate_identical_partitions() {
        // all controls equal: every partition gives the same contrasts
        let w = vec![3.0, -1.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let s = CollapsedSample::treated_first(w, 3).unwrap();
        let agg = aggregate_partitions(&s, 0.0, 7, &Resampling::default()).unwrap();
        let common = signchange_test(&est(&[2.0, -2.0, -0.5]), 0.0, &Resampling::default()).unwrap();
        assert_eq!(agg.p_value, common.p_value);
    }
}
