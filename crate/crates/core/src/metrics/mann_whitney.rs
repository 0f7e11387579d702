//! One-sided Mann-Whitney U test (alternative: `a` tends to exceed `b`).
//!
//! Ties get midranks. Small samples use the exact permutation distribution
//! of the rank sum, computed by dynamic programming over doubled midranks so
//! tied ranks stay integral. Larger samples use the normal approximation with
//! tie-corrected variance and a continuity correction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::MetricsError;

/// Exact p-values are used while the smaller sample is below this size.
pub const EXACT_THRESHOLD: usize = 8;

/// Work budget (table cells times items) for the exact recursion; beyond it
/// the normal approximation is used even for small samples.
const EXACT_BUDGET: usize = 400_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of `a`: pairs (x in a, y in b) with x > y, ties counting
    /// one half.
    pub u: f64,
    pub p: f64,
    pub method: PMethod,
}

pub fn mann_whitney_u_one_sided(a: &[f64], b: &[f64]) -> Result<MannWhitney, MetricsError> {
    let ranks = Ranked::new(a, b)?;
    let small = a.len().min(b.len());
    let (p, method) = if small < EXACT_THRESHOLD && ranks.exact_cost() <= EXACT_BUDGET {
        (ranks.exact_p(), PMethod::Exact)
    } else {
        (ranks.normal_p(), PMethod::Normal)
    };
    Ok(MannWhitney {
        u: ranks.u(),
        p: clamp_p(p),
        method,
    })
}

/// Exact one-sided p regardless of sample size.
pub fn mann_whitney_exact_p(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    Ok(clamp_p(Ranked::new(a, b)?.exact_p()))
}

/// Normal-approximation one-sided p regardless of sample size.
pub fn mann_whitney_normal_p(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    Ok(clamp_p(Ranked::new(a, b)?.normal_p()))
}

/// Null distribution of U for `a` as (U, probability) pairs in increasing U.
pub fn exact_u_distribution(a: &[f64], b: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    let ranks = Ranked::new(a, b)?;
    let m = ranks.na;
    let offset = (m * (m + 1)) as f64 / 2.0;
    let ways = subset_sums(&ranks.doubled, m);
    let total: f64 = ways.iter().sum();
    Ok(ways
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(s, w)| (s as f64 / 2.0 - offset, w / total))
        .collect())
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

struct Ranked {
    na: usize,
    nb: usize,
    /// Twice the midrank of every observation, `a` first.
    doubled: Vec<usize>,
    /// Sum over tie groups of t^3 - t.
    tie_term: f64,
}

impl Ranked {
    fn new(a: &[f64], b: &[f64]) -> Result<Self, MetricsError> {
        if a.is_empty() || b.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        if a.iter().chain(b).any(|x| !x.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        let values: Vec<f64> = a.iter().chain(b).copied().collect();
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let mut doubled = vec![0; values.len()];
        let mut tie_term = 0.0;
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && values[order[end]] == values[order[start]] {
                end += 1;
            }
            // 1-based ranks start+1..=end; twice their mean is start+1+end
            for &i in &order[start..end] {
                doubled[i] = start + 1 + end;
            }
            let t = (end - start) as f64;
            tie_term += t * t * t - t;
            start = end;
        }
        Ok(Self {
            na: a.len(),
            nb: b.len(),
            doubled,
            tie_term,
        })
    }

    fn doubled_rank_sum_a(&self) -> usize {
        self.doubled[..self.na].iter().sum()
    }

    fn u(&self) -> f64 {
        self.doubled_rank_sum_a() as f64 / 2.0 - (self.na * (self.na + 1)) as f64 / 2.0
    }

    fn exact_cost(&self) -> usize {
        let n = self.na + self.nb;
        let m = self.na.min(self.nb);
        n.saturating_mul(m + 1).saturating_mul(2 * n * m + 1)
    }

    /// P(R_a >= observed) over all equally likely splits. The recursion runs
    /// over the smaller group; when that is `b`, R_a = total - R_b.
    fn exact_p(&self) -> f64 {
        let observed = self.doubled_rank_sum_a();
        let total_sum: usize = self.doubled.iter().sum();
        if self.na <= self.nb {
            let ways = subset_sums(&self.doubled, self.na);
            let all: f64 = ways.iter().sum();
            ways[observed..].iter().sum::<f64>() / all
        } else {
            let ways = subset_sums(&self.doubled, self.nb);
            let all: f64 = ways.iter().sum();
            let bound = total_sum - observed;
            ways[..=bound.min(ways.len() - 1)].iter().sum::<f64>() / all
        }
    }

    fn normal_p(&self) -> f64 {
        let (na, nb) = (self.na as f64, self.nb as f64);
        let n = na + nb;
        let mean = na * nb / 2.0;
        let var = if n > 1.0 {
            na * nb / 12.0 * ((n + 1.0) - self.tie_term / (n * (n - 1.0)))
        } else {
            0.0
        };
        if var <= 0.0 {
            return 1.0;
        }
        let z = (self.u() - mean - 0.5) / var.sqrt();
        Normal::standard().sf(z)
    }
}

/// `ways[s]` = number of `m`-element subsets of `items` whose sum is `s`.
fn subset_sums(items: &[usize], m: usize) -> Vec<f64> {
    let mut sorted = items.to_vec();
    sorted.sort_unstable_by(|x, y| y.cmp(x));
    let max_sum: usize = sorted[..m].iter().sum();
    let width = max_sum + 1;
    // table[j * width + s]
    let mut table = vec![0.0f64; (m + 1) * width];
    table[0] = 1.0;
    for (seen, &r) in items.iter().enumerate() {
        for j in (1..=m.min(seen + 1)).rev() {
            let (lower, upper) = table.split_at_mut(j * width);
            let from = &lower[(j - 1) * width..];
            let to = &mut upper[..width];
            for s in (r..width).rev() {
                to[s] += from[s - r];
            }
        }
    }
    table[m * width..].to_vec()
}
