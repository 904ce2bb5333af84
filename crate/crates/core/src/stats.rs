//! Rank-based group comparison: Kruskal-Wallis omnibus test, Conover-Iman
//! pairwise post-hoc tests, and Holm-Bonferroni correction.

use serde::Serialize;
use thiserror::Error;

use crate::dist::{chi_square_sf, student_t_two_sided};
use crate::num::Real;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("alpha must be in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("p-value out of [0, 1]: {0}")]
    BadP(f64),
}

/// Omnibus test result.
#[derive(Debug, Clone, Serialize)]
pub struct TestResult<R> {
    pub statistic: R,
    pub degrees_of_freedom: usize,
    pub p_value: R,
    pub group_sizes: Vec<usize>,
}

/// Midranks of the pooled sample, ties sharing their average rank.
/// Returned in the input's order.
pub fn midranks<R: Real>(values: &[R]) -> Vec<R> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN in ranks"));
    let mut ranks = vec![R::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // average of ranks i+1 ..= j+1
        let avg = R::from_f64_lossy((i + j + 2) as f64 / 2.0);
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn check_groups<R>(groups: &[Vec<R>]) -> Result<(), StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(StatsError::EmptyGroup(i));
        }
    }
    Ok(())
}

/// Kruskal-Wallis H test with tie correction. If every pooled value is
/// identical, H = 0 and p = 1.
pub fn kruskal_wallis<R: Real>(groups: &[Vec<R>]) -> Result<TestResult<R>, StatsError> {
    check_groups(groups)?;
    let group_sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let k = groups.len();
    let pooled: Vec<R> = groups.iter().flatten().copied().collect();
    let n = pooled.len();
    let ranks = midranks(&pooled);

    let nf = R::from_f64_lossy(n as f64);
    let mut h = R::zero();
    let mut offset = 0;
    for size in &group_sizes {
        let sum: R = ranks[offset..offset + size].iter().copied().sum();
        let ni = R::from_f64_lossy(*size as f64);
        h += sum * sum / ni;
        offset += size;
    }
    let twelve = R::from_f64_lossy(12.0);
    let three = R::from_f64_lossy(3.0);
    h = twelve / (nf * (nf + R::one())) * h - three * (nf + R::one());

    // tie correction: 1 - sum(t^3 - t) / (n^3 - n)
    let correction = tie_correction(&pooled);
    let statistic = if correction == R::zero() {
        R::zero() // all values identical
    } else {
        h / correction
    };
    let p_value = if correction == R::zero() {
        R::one()
    } else {
        chi_square_sf(statistic, k - 1)
    };
    Ok(TestResult {
        statistic,
        degrees_of_freedom: k - 1,
        p_value,
        group_sizes,
    })
}

fn tie_correction<R: Real>(pooled: &[R]) -> R {
    let mut sorted: Vec<R> = pooled.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let n = sorted.len() as f64;
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    R::from_f64_lossy(1.0 - tie_sum / (n * n * n - n))
}

/// One raw pairwise comparison.
#[derive(Debug, Clone, Serialize)]
pub struct PairwisePValue<R> {
    pub group_a: usize,
    pub group_b: usize,
    pub statistic: R,
    pub p_value: R,
}

/// Conover-Iman post-hoc t tests on pooled ranks, two-sided, with
/// `N - k` degrees of freedom. When the pooled rank variance is zero
/// (every value identical) all p-values are 1; when complete separation
/// drives the within variance to zero, pairs with different mean ranks get
/// p = 0.
pub fn conover_posthoc<R: Real>(groups: &[Vec<R>]) -> Result<Vec<PairwisePValue<R>>, StatsError> {
    check_groups(groups)?;
    let k = groups.len();
    let pooled: Vec<R> = groups.iter().flatten().copied().collect();
    let n = pooled.len();
    let ranks = midranks(&pooled);

    let mut mean_ranks = Vec::with_capacity(k);
    let mut offset = 0;
    for g in groups {
        let sum: R = ranks[offset..offset + g.len()].iter().copied().sum();
        mean_ranks.push(sum / R::from_f64_lossy(g.len() as f64));
        offset += g.len();
    }

    let nf = R::from_f64_lossy(n as f64);
    let mean_rank = (nf + R::one()) / R::from_f64_lossy(2.0);
    let sq_sum: R = ranks.iter().map(|r| *r * *r).sum();
    // pooled rank variance
    let s2 = (sq_sum - nf * mean_rank * mean_rank) / (nf - R::one());

    let h = kruskal_wallis(groups)?.statistic;
    let df = R::from_f64_lossy((n - k) as f64);
    // within-groups scaling of the rank variance
    let factor = s2 * ((nf - R::one() - h) / R::from_f64_lossy((n - k) as f64));

    let mut out = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let inv = R::one() / R::from_f64_lossy(groups[a].len() as f64)
                + R::one() / R::from_f64_lossy(groups[b].len() as f64);
            let diff = mean_ranks[a] - mean_ranks[b];
            let (stat, p) = if s2 <= R::zero() {
                // no rank variation at all
                (R::zero(), R::one())
            } else if factor <= R::zero() {
                // complete separation: the t statistic diverges
                if diff == R::zero() {
                    (R::zero(), R::one())
                } else {
                    (R::infinity() * diff.signum(), R::zero())
                }
            } else {
                let t = diff / (factor * inv).sqrt();
                (t, student_t_two_sided(t, df))
            };
            out.push(PairwisePValue {
                group_a: a,
                group_b: b,
                statistic: stat,
                p_value: p,
            });
        }
    }
    Ok(out)
}

/// One entry of a Holm-Bonferroni report, in the input's order.
#[derive(Debug, Clone, Serialize)]
pub struct HolmEntry<R> {
    pub raw_p: R,
    pub adjusted_p: R,
    pub reject: bool,
}

/// Holm-Bonferroni step-down correction. Sorted ascending, `p(i)` is
/// compared against `alpha / (m - i)` (0-based), rejecting until the first
/// failure; adjusted p-values are the running maxima of `(m - i) * p(i)`
/// capped at 1.
pub fn holm_bonferroni<R: Real>(p_values: &[R], alpha: R) -> Result<Vec<HolmEntry<R>>, StatsError> {
    let af = alpha.to_f64().unwrap_or(f64::NAN);
    if !(0.0..1.0).contains(&af) || af == 0.0 {
        return Err(StatsError::BadAlpha(af));
    }
    for p in p_values {
        let pf = p.to_f64().unwrap_or(f64::NAN);
        if !(0.0..=1.0).contains(&pf) {
            return Err(StatsError::BadP(pf));
        }
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).expect("no NaN"));

    let mut entries: Vec<HolmEntry<R>> = p_values
        .iter()
        .map(|&p| HolmEntry {
            raw_p: p,
            adjusted_p: p,
            reject: false,
        })
        .collect();

    let mut running_max = R::zero();
    let mut still_rejecting = true;
    for (i, &idx) in order.iter().enumerate() {
        let mult = R::from_f64_lossy((m - i) as f64);
        let mut adj = mult * p_values[idx];
        if adj > R::one() {
            adj = R::one();
        }
        if adj > running_max {
            running_max = adj;
        }
        entries[idx].adjusted_p = running_max;
        if still_rejecting && p_values[idx] <= alpha / mult {
            entries[idx].reject = true;
        } else {
            still_rejecting = false;
        }
    }
    Ok(entries)
}

/// Significance stars at the conventional thresholds.
pub fn stars(p: f64) -> &'static str {
    if p < 1e-4 {
        "****"
    } else if p < 1e-3 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// One pairwise row of a full group comparison.
#[derive(Debug, Clone, Serialize)]
pub struct PairwiseEntry<R> {
    pub group_a: String,
    pub group_b: String,
    pub raw_p: R,
    pub adjusted_p: R,
    pub reject: bool,
    pub stars: String,
}

/// Omnibus plus corrected post-hoc comparison over named groups.
#[derive(Debug, Clone, Serialize)]
pub struct GroupComparison<R> {
    pub omnibus: TestResult<R>,
    pub pairwise: Vec<PairwiseEntry<R>>,
}

/// Kruskal-Wallis omnibus, Conover post-hoc, Holm-Bonferroni adjusted, with
/// significance stars on the adjusted p-values.
pub fn compare_groups<R: Real>(
    names: &[String],
    groups: &[Vec<R>],
    alpha: R,
) -> Result<GroupComparison<R>, StatsError> {
    assert_eq!(names.len(), groups.len());
    let omnibus = kruskal_wallis(groups)?;
    let raw = conover_posthoc(groups)?;
    let ps: Vec<R> = raw.iter().map(|r| r.p_value).collect();
    let holm = holm_bonferroni(&ps, alpha)?;
    let pairwise = raw
        .iter()
        .zip(holm)
        .map(|(r, h)| PairwiseEntry {
            group_a: names[r.group_a].clone(),
            group_b: names[r.group_b].clone(),
            raw_p: r.p_value,
            adjusted_p: h.adjusted_p,
            reject: h.reject,
            stars: stars(h.adjusted_p.to_f64().unwrap_or(1.0)).to_string(),
        })
        .collect();
    Ok(GroupComparison { omnibus, pairwise })
}
