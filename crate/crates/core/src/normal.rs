//! Normal-theory procedures: cluster t-tests, Donald-Lang, the coarse
//! cluster-robust t, the jackknife variance and the resampled two-sample t.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::numeric::{mean, normal_two_sided_p, sample_var, scaled_t_critical, t_quantile, t_two_sided_p};
use crate::panel::{estimate_effect, pooled_within_ss, var_heteroskedastic, CollapsedSample, VarianceEstimate, VarianceKind};
use crate::result::TestResult;
use crate::rng::{derive_seed, rng_from};
use crate::signchange::{partition_controls, Partition};

/// Independent per-cluster effect estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEstimates {
    pub values: Vec<f64>,
}

impl ClusterEstimates {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return invalid("need at least 2 cluster estimates");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite cluster estimate");
        }
        Ok(ClusterEstimates { values })
    }

    pub fn g(&self) -> usize {
        self.values.len()
    }
}

/// One-sample t over cluster estimates with `G - 1` degrees of freedom.
pub fn im_ttest(est: &ClusterEstimates, c: f64, alpha: f64) -> Result<TestResult> {
    let g = est.g();
    let m = mean(&est.values);
    let s2 = sample_var(&est.values);
    let scale = est.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if s2 <= 1e-28 * scale * scale || s2 == 0.0 {
        return Err(Error::Degenerate("cluster estimates have zero spread".into()));
    }
    let t = (m - c) / (s2 / g as f64).sqrt();
    let df = (g - 1) as f64;
    let mut out = TestResult::new("im", t_two_sided_p(t, df), t, c);
    out.df = Some(df);
    out.critical_value = Some(t_quantile(1.0 - alpha / 2.0, df));
    out.meta.insert("estimate".into(), m);
    if g < 3 {
        out.warnings.push(format!("only {g} clusters; the t approximation is fragile"));
    }
    Ok(out)
}

/// t statistic with the degrees-of-freedom corrected homoskedastic
/// variance, referred to `t_{N-2}`.
pub fn donald_lang(sample: &CollapsedSample, c: f64) -> Result<TestResult> {
    let n = sample.len();
    if n < 3 {
        return invalid("need at least 3 units");
    }
    let s2 = pooled_within_ss(sample) / (n - 2) as f64;
    let v = s2 * (1.0 / sample.n1() as f64 + 1.0 / sample.n0() as f64);
    if v <= 0.0 {
        return Err(Error::Degenerate("zero residual variance".into()));
    }
    let t = (estimate_effect(sample).tau_hat - c) / v.sqrt();
    let df = (n - 2) as f64;
    let mut out = TestResult::new("donald-lang", t_two_sided_p(t, df), t, c);
    out.df = Some(df);
    Ok(out)
}

/// Heteroskedasticity-robust t with a standard normal reference.
pub fn robust_ttest(sample: &CollapsedSample, c: f64) -> Result<TestResult> {
    let v = var_heteroskedastic(sample).value;
    if v <= 0.0 {
        return Err(Error::Degenerate("zero robust variance".into()));
    }
    let t = (estimate_effect(sample).tau_hat - c) / v.sqrt();
    Ok(TestResult::new("robust-t", normal_two_sided_p(t), t, c).meta("variance", v))
}

struct ClusterSums {
    st: f64,
    nt: usize,
    sc: f64,
    nc: usize,
}

fn cluster_sums(sample: &CollapsedSample, part: &Partition) -> Result<Vec<ClusterSums>> {
    let mut seen = vec![false; sample.len()];
    let mut out = Vec::with_capacity(part.n_clusters());
    for cl in &part.clusters {
        let mut s = ClusterSums { st: 0.0, nt: 0, sc: 0.0, nc: 0 };
        for &j in cl {
            if j >= sample.len() || seen[j] {
                return invalid("clusters repeat or exceed unit indices");
            }
            seen[j] = true;
            if sample.treated[j] {
                s.st += sample.w[j];
                s.nt += 1;
            } else {
                s.sc += sample.w[j];
                s.nc += 1;
            }
        }
        out.push(s);
    }
    Ok(out)
}

/// Cluster-robust t over the units of a balanced partition: regression of
/// `w` on an intercept and the treatment dummy, sandwich variance summed
/// over clusters, critical value `sqrt(G/(G-1)) t_{G-1}(1 - alpha/2)`.
pub fn bester_ttest(sample: &CollapsedSample, part: &Partition, c: f64, alpha: f64) -> Result<TestResult> {
    let g = part.n_clusters();
    if g < 2 {
        return Err(Error::BesterBalance("need at least 2 clusters".into()));
    }
    let sums = cluster_sums(sample, part)?;
    let size = part.clusters[0].len();
    if part.clusters.iter().any(|cl| cl.len() != size) {
        return Err(Error::BesterBalance("cluster sizes differ".into()));
    }
    if sums.iter().any(|s| s.nt != sums[0].nt) {
        return Err(Error::BesterBalance("treated counts differ across clusters".into()));
    }
    let n1: usize = sums.iter().map(|s| s.nt).sum();
    let n0: usize = sums.iter().map(|s| s.nc).sum();
    if n1 == 0 || n0 == 0 {
        return Err(Error::BesterBalance("clusters need treated and control units".into()));
    }
    let mt = sums.iter().map(|s| s.st).sum::<f64>() / n1 as f64;
    let mc = sums.iter().map(|s| s.sc).sum::<f64>() / n0 as f64;
    let beta = mt - mc;
    // score of unit i for the slope: (D_i/N1 - (1-D_i)/N0) * residual_i
    let mut crve = 0.0;
    for cl in &part.clusters {
        let mut score = 0.0;
        for &j in cl {
            if sample.treated[j] {
                score += (sample.w[j] - mt) / n1 as f64;
            } else {
                score -= (sample.w[j] - mc) / n0 as f64;
            }
        }
        crve += score * score;
    }
    if crve <= 0.0 {
        return Err(Error::Degenerate("cluster-robust variance is zero".into()));
    }
    let t = (beta - c) / crve.sqrt();
    let gf = g as f64;
    let shrink = ((gf - 1.0) / gf).sqrt();
    let df = gf - 1.0;
    let mut out = TestResult::new("bester", t_two_sided_p(t * shrink, df), t, c);
    out.df = Some(df);
    out.critical_value = Some(scaled_t_critical(g, alpha));
    out.meta.insert("t_df_corrected".into(), t * shrink);
    out.meta.insert("critical_unscaled".into(), t_quantile(1.0 - alpha / 2.0, df));
    out.meta.insert("crve".into(), crve);
    out.meta.insert("estimate".into(), beta);
    Ok(out)
}

/// Share of `S` random coarse partitions on which [`bester_ttest`] does
/// not reject; the aggregate rejects when that share is at most `alpha`.
pub fn bester_aggregate(sample: &CollapsedSample, c: f64, n_partitions: usize, alpha: f64, seed: u64) -> Result<TestResult> {
    if n_partitions == 0 {
        return invalid("need at least one partition");
    }
    let treated = sample.treated_idx();
    let controls = sample.control_idx();
    let mut accept = 0usize;
    let mut ts = Vec::with_capacity(n_partitions);
    for s in 0..n_partitions {
        let part = partition_controls(&treated, &controls, derive_seed(seed, s as u64))?;
        let r = bester_ttest(sample, &part, c, alpha)?;
        let crit = r.critical_value.expect("set by bester_ttest");
        accept += usize::from(r.statistic.abs() <= crit);
        ts.push(r.statistic);
    }
    let share = accept as f64 / n_partitions as f64;
    let mut out = TestResult::new("bester-agg", share, estimate_effect(sample).tau_hat - c, c);
    out.seed = Some(seed);
    out.meta.insert("partitions".into(), n_partitions as f64);
    out.meta.insert("alpha".into(), alpha);
    out.series.insert("partition_t".into(), ts);
    Ok(out)
}

/// Jackknife variance `((G-1)/G) sum_g (b_(-g) - mean b_(-g))^2`. The full
/// sample estimate is accepted for interface symmetry but does not enter.
pub fn jackknife_variance(_est_full: f64, leave_one_out: &[f64]) -> Result<VarianceEstimate> {
    let g = leave_one_out.len();
    if g < 2 {
        return invalid("jackknife needs at least 2 clusters");
    }
    let m = mean(leave_one_out);
    let ss = crate::numeric::sum(leave_one_out.iter().map(|b| (b - m) * (b - m)));
    Ok(VarianceEstimate { value: (g as f64 - 1.0) / g as f64 * ss, kind: VarianceKind::Jackknife })
}

/// Leave-one-cluster-out difference-in-means estimates over the units of
/// `part`, with the full estimate.
pub fn leave_one_cluster_out(sample: &CollapsedSample, part: &Partition) -> Result<(f64, Vec<f64>)> {
    let sums = cluster_sums(sample, part)?;
    let st: f64 = sums.iter().map(|s| s.st).sum();
    let sc: f64 = sums.iter().map(|s| s.sc).sum();
    let nt: usize = sums.iter().map(|s| s.nt).sum();
    let nc: usize = sums.iter().map(|s| s.nc).sum();
    if nt == 0 || nc == 0 {
        return invalid("clusters hold no treated or no control units");
    }
    let full = st / nt as f64 - sc / nc as f64;
    let mut loo = Vec::with_capacity(sums.len());
    for s in &sums {
        let (kt, kc) = (nt - s.nt, nc - s.nc);
        if kt == 0 || kc == 0 {
            return Err(Error::Degenerate("dropping a cluster removes a whole group".into()));
        }
        loo.push((st - s.st) / kt as f64 - (sc - s.sc) / kc as f64);
    }
    Ok((full, loo))
}

/// Jackknife t over the clusters of `part` (use [`Partition::singletons`]
/// for unit-level clustering), critical value
/// `sqrt(G/(G-1)) t_{G-1}(1 - alpha/2)`.
pub fn jackknife_ttest(sample: &CollapsedSample, part: &Partition, c: f64, alpha: f64) -> Result<TestResult> {
    let g = part.n_clusters();
    let (full, loo) = leave_one_cluster_out(sample, part)?;
    let v = jackknife_variance(full, &loo)?.value;
    if v <= 0.0 {
        return Err(Error::Degenerate("jackknife variance is zero".into()));
    }
    let t = (full - c) / v.sqrt();
    let gf = g as f64;
    let mut out = TestResult::new("jackknife", t_two_sided_p(t * ((gf - 1.0) / gf).sqrt(), gf - 1.0), t, c);
    out.df = Some(gf - 1.0);
    out.critical_value = Some(scaled_t_critical(g, alpha));
    out.meta.insert("variance".into(), v);
    out.meta.insert("estimate".into(), full);
    Ok(out)
}

/// Default resample size `ceil(n^(2/3))`.
pub fn leung_default_r(n: usize) -> usize {
    ((n as f64).powf(2.0 / 3.0) - 1e-9).ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeungOutcome {
    pub result: TestResult,
    pub idx_a: Vec<usize>,
    pub idx_b: Vec<usize>,
}

/// Draw `r_a` and `r_b` units with replacement from the two clusters and
/// form the unequal-variance t of `mean_a - mean_b - c`, referred to the
/// standard normal.
pub fn leung_resampled_t(a: &[f64], b: &[f64], r_a: usize, r_b: usize, c: f64, seed: u64) -> Result<LeungOutcome> {
    for (r, len, name) in [(r_a, a.len(), "a"), (r_b, b.len(), "b")] {
        if r < 2 || r > len {
            return invalid(format!("resample size for cluster {name} must lie in 2..={len}, got {r}"));
        }
    }
    let mut rng_a = rng_from(derive_seed(seed, 0));
    let mut rng_b = rng_from(derive_seed(seed, 1));
    let idx_a: Vec<usize> = (0..r_a).map(|_| rng_a.random_range(0..a.len())).collect();
    let idx_b: Vec<usize> = (0..r_b).map(|_| rng_b.random_range(0..b.len())).collect();
    let xa: Vec<f64> = idx_a.iter().map(|&i| a[i]).collect();
    let xb: Vec<f64> = idx_b.iter().map(|&i| b[i]).collect();
    let t = welch_t(&xa, &xb, c)?;
    let mut result = TestResult::new("leung", normal_two_sided_p(t), t, c);
    result.seed = Some(seed);
    result.meta.insert("r_a".into(), r_a as f64);
    result.meta.insert("r_b".into(), r_b as f64);
    Ok(LeungOutcome { result, idx_a, idx_b })
}

/// Unequal-variance two-sample t of `mean(a) - mean(b) - c`.
pub fn welch_t(a: &[f64], b: &[f64], c: f64) -> Result<f64> {
    let num = mean(a) - mean(b) - c;
    let se2 = sample_var(a) / a.len() as f64 + sample_var(b) / b.len() as f64;
    if se2 <= 0.0 {
        if num == 0.0 {
            return Err(Error::Degenerate("both resamples are constant with equal means".into()));
        }
        return Ok(num.signum() * f64::INFINITY);
    }
    Ok(num / se2.sqrt())
}
