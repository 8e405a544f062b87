//! Statistics over attention profiles: distribution summaries, top-k
//! log-ratios, top-10 shares, fact-check-count buckets, relative attention at
//! the k-th fact-check, rank correlation and covariance analysis.

mod linear;
mod report;
mod special;

use std::borrow::Borrow;
use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{relative_attention_at, AttentionProfile};

pub use linear::{ancova, least_squares_rss, AncovaResult};
pub use report::{
    build_report, write_plot_series, write_tables_csv, AnalysisParams, AnalysisReport, BucketRow, Counts, Estimate,
    GroupRow, KthEstimate, Outcome, Rq1, Rq2, Scenario, SummaryRow, Table2Row, TopkRow,
};
pub use special::{beta_inc, f_sf, ln_gamma, t_cdf, t_quantile, t_two_sided_p};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("no values to summarize")]
    Empty,
    #[error("input lengths differ")]
    LengthMismatch,
    #[error("{n} observations, need at least {needed}")]
    TooFewObservations { n: usize, needed: usize },
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("rank-deficient design; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("{0} is constant; rank correlation undefined")]
    Constant(&'static str),
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(String),
    #[error("non-finite input value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub mean: f64,
    pub standard_error: f64,
    pub p5: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p95: f64,
}

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Quantile of sorted data, interpolating linearly between the closest ranks
/// (position `q·(n−1)`).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and sample standard error. Inputs are summed in sorted order so any
/// permutation of the same values gives bit-identical results.
fn mean_se_sorted(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    if sorted.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = sorted.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt() / n.sqrt())
}

pub fn summarize(values: &[f64]) -> Result<DistributionSummary, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let s = sorted_finite(values)?;
    let (mean, standard_error) = mean_se_sorted(&s);
    Ok(DistributionSummary {
        n: s.len(),
        mean,
        standard_error,
        p5: quantile_sorted(&s, 0.05),
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        p95: quantile_sorted(&s, 0.95),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub standard_error: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean with a t-based confidence interval at `level`.
pub fn mean_ci(values: &[f64], level: f64) -> Result<MeanCi, AnalysisError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(AnalysisError::InvalidLevel(level.to_string()));
    }
    if values.len() < 2 {
        return Err(AnalysisError::TooFewObservations { n: values.len(), needed: 2 });
    }
    let s = sorted_finite(values)?;
    let (mean, se) = mean_se_sorted(&s);
    let half = t_quantile(0.5 + level / 2.0, (s.len() - 1) as f64) * se;
    Ok(MeanCi { n: s.len(), mean, standard_error: se, lower: mean - half, upper: mean + half })
}

/// Why a per-country log-ratio could not be computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RatioSkip {
    TooFewNumerator { have: usize, need: usize },
    TooFewDenominator { have: usize, need: usize },
    ZeroDenominator,
    ZeroNumerator,
}

/// A claim's identity and total attention, the unit top-k selection works on.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranked<'a> {
    pub entity_id: &'a str,
    pub total: f64,
    pub fc_count: usize,
}

impl<'a> Ranked<'a> {
    pub fn of(p: &'a AttentionProfile) -> Self {
        Ranked { entity_id: &p.entity.entity_id, total: p.total, fc_count: p.fc_count() }
    }
}

fn by_total(a: &Ranked, b: &Ranked) -> Ordering {
    b.total.total_cmp(&a.total).then_with(|| a.entity_id.cmp(b.entity_id))
}

/// Sum of the `k` largest totals under `order`, summed largest first.
fn topk_sum(items: &[Ranked], k: usize, order: impl Fn(&Ranked, &Ranked) -> Ordering) -> f64 {
    let mut v: Vec<&Ranked> = items.iter().collect();
    v.sort_by(|a, b| order(a, b));
    let mut totals: Vec<f64> = v[..k].iter().map(|r| r.total).collect();
    totals.sort_by(|a, b| b.total_cmp(a));
    totals.iter().sum()
}

fn log2_ratio(num: f64, den: f64) -> Result<f64, RatioSkip> {
    if !(den > 0.0) {
        return Err(RatioSkip::ZeroDenominator);
    }
    if !(num > 0.0) {
        return Err(RatioSkip::ZeroNumerator);
    }
    // A difference of logs, so swapping the groups negates the result exactly.
    Ok(num.log2() - den.log2())
}

/// `log2(Σ top-k of numerator / Σ top-k of denominator)` for two arbitrary
/// groups, each ranked by total descending with ties broken by entity id.
pub fn topk_group_log_ratio(numerator: &[Ranked], denominator: &[Ranked], k: usize) -> Result<f64, RatioSkip> {
    if numerator.len() < k {
        return Err(RatioSkip::TooFewNumerator { have: numerator.len(), need: k });
    }
    if denominator.len() < k {
        return Err(RatioSkip::TooFewDenominator { have: denominator.len(), need: k });
    }
    log2_ratio(topk_sum(numerator, k, by_total), topk_sum(denominator, k, by_total))
}

/// Top-k log-ratio of fact-checked over non-fact-checked claims in one country.
pub fn topk_log_ratio<P: Borrow<AttentionProfile>>(profiles: &[P], k: usize) -> Result<f64, RatioSkip> {
    let (fc, non): (Vec<Ranked>, Vec<Ranked>) =
        profiles.iter().map(|p| Ranked::of(p.borrow())).partition(|r| r.fc_count > 0);
    topk_group_log_ratio(&fc, &non, k)
}

/// Log-ratio of the total attention of the `k` most fact-checked claims to
/// that of the `k` fact-checked claims with the most attention. Never positive.
pub fn most_fc_vs_most_attention_ratio<P: Borrow<AttentionProfile>>(profiles: &[P], k: usize) -> Result<f64, RatioSkip> {
    let fc: Vec<Ranked> = profiles.iter().map(|p| Ranked::of(p.borrow())).filter(|r| r.fc_count > 0).collect();
    if fc.len() < k {
        return Err(RatioSkip::TooFewNumerator { have: fc.len(), need: k });
    }
    let most_fc = topk_sum(&fc, k, |a, b| b.fc_count.cmp(&a.fc_count).then_with(|| by_total(a, b)));
    let most_attention = topk_sum(&fc, k, by_total);
    log2_ratio(most_fc, most_attention)
}

/// Share of fact-checked claims among a country's top 10 by total attention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table2Pct {
    pub pct: f64,
    pub fact_checked: usize,
    /// Claims actually ranked; below 10 when fewer have positive totals.
    pub used: usize,
}

pub const TABLE2_TOP: usize = 10;

pub fn table2_pct<P: Borrow<AttentionProfile>>(profiles: &[P]) -> Table2Pct {
    let mut v: Vec<Ranked> = profiles.iter().map(|p| Ranked::of(p.borrow())).filter(|r| r.total > 0.0).collect();
    v.sort_by(by_total);
    v.truncate(TABLE2_TOP);
    let fact_checked = v.iter().filter(|r| r.fc_count > 0).count();
    let used = v.len();
    let pct = if used == 0 { 0.0 } else { 100.0 * fact_checked as f64 / used as f64 };
    Table2Pct { pct, fact_checked, used }
}

/// Fact-check-count buckets, in display order.
pub const BUCKETS: [&str; 4] = ["0", "1", "2-5", "6+"];

pub fn fc_bucket(count: usize) -> &'static str {
    match count {
        0 => BUCKETS[0],
        1 => BUCKETS[1],
        2..=5 => BUCKETS[2],
        _ => BUCKETS[3],
    }
}

/// Total-attention summary per bucket; empty buckets map to `None`.
pub fn bucket_by_fc_count<P: Borrow<AttentionProfile>>(profiles: &[P]) -> Vec<(&'static str, Option<DistributionSummary>)> {
    BUCKETS
        .iter()
        .map(|&b| {
            let totals: Vec<f64> =
                profiles.iter().map(|p| p.borrow()).filter(|p| fc_bucket(p.fc_count()) == b).map(|p| p.total).collect();
            (b, summarize(&totals).ok())
        })
        .collect()
}

/// Relative attention of each eligible profile at its k-th fact-check date.
/// Eligible: at least `k` fact-checks and positive total.
pub fn rel_attention_values<P: Borrow<AttentionProfile>>(profiles: &[P], k: usize) -> Vec<f64> {
    assert!(k >= 1, "k counts from 1");
    profiles
        .iter()
        .map(|p| p.borrow())
        .filter(|p| p.fc_count() >= k && p.total > 0.0)
        .map(|p| relative_attention_at(p, p.factcheck_dates[k - 1]).expect("total checked positive"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KthRow {
    pub k: usize,
    pub n: usize,
    pub mean: Option<f64>,
    pub standard_error: Option<f64>,
}

pub fn rel_attention_at_kth<P: Borrow<AttentionProfile>>(profiles: &[P], k: usize) -> KthRow {
    let values = rel_attention_values(profiles, k);
    match summarize(&values) {
        Ok(s) => KthRow { k, n: s.n, mean: Some(s.mean), standard_error: Some(s.standard_error) },
        Err(_) => KthRow { k, n: 0, mean: None, standard_error: None },
    }
}

/// Ranks starting at 1, ties sharing the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub n: usize,
    pub rho: f64,
    pub p_value: f64,
}

/// Spearman's rank correlation with a two-sided t-approximation p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch);
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalysisError::TooFewObservations { n, needed: 3 });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    if sxx == 0.0 {
        return Err(AnalysisError::Constant("x"));
    }
    if syy == 0.0 {
        return Err(AnalysisError::Constant("y"));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        t_two_sided_p(rho * (df / (1.0 - rho * rho)).sqrt(), df)
    };
    Ok(SpearmanResult { n, rho, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_examples() {
        let s = summarize(&[5.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3, s.mean), (2.0, 3.0, 4.0, 3.0));
        assert!((s.p5 - 1.2).abs() < 1e-12 && (s.p95 - 4.8).abs() < 1e-12);
        let c = summarize(&[7.0; 4]).unwrap();
        assert_eq!((c.standard_error, c.p5, c.p95), (0.0, 7.0, 7.0));
        let one = summarize(&[2.5]).unwrap();
        assert_eq!((one.n, one.mean, one.standard_error, one.median), (1, 2.5, 0.0, 2.5));
        assert_eq!(summarize(&[]), Err(AnalysisError::Empty));
    }

    #[test]
    fn ci_examples() {
        let c = mean_ci(&[0.0, 2.0], 0.95).unwrap();
        assert_eq!(c.mean, 1.0);
        assert!((c.upper - 1.0 - 12.706_204_736_174_7).abs() < 1e-9);
        let z = mean_ci(&[3.0; 5], 0.95).unwrap();
        assert_eq!((z.lower, z.upper), (3.0, 3.0));
        assert!(mean_ci(&[1.0], 0.95).is_err());
    }

    #[test]
    fn paper_multipliers() {
        assert!((2f64.powf(-0.81) - 0.566).abs() < 0.005);
        assert!((2f64.powf(-1.12) - 0.46).abs() < 0.005);
    }

    #[test]
    fn buckets() {
        assert_eq!(fc_bucket(0), "0");
        assert_eq!(fc_bucket(1), "1");
        assert_eq!(fc_bucket(5), "2-5");
        assert_eq!(fc_bucket(6), "6+");
        assert_eq!(fc_bucket(23), "6+");
    }

    #[test]
    fn spearman_hand_case() {
        // Rank differences (−1, 1, −1, 1, 0): 1 − 6·4/(5·24) = 0.8.
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r.rho - 0.8).abs() < 1e-12);
        let inc = spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!((inc.rho, inc.p_value), (1.0, 0.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().rho, -1.0);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(AnalysisError::Constant("x")));
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
