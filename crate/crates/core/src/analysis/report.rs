use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{NaiveDate, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    ancova, bucket_by_fc_count, mean_ci, most_fc_vs_most_attention_ratio, rel_attention_values, spearman, summarize,
    t_quantile, table2_pct, topk_log_ratio, AncovaResult, AnalysisError, DistributionSummary, RatioSkip,
    SpearmanResult,
};
use crate::attention::{relative_attention_at, AttentionProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisParams {
    /// A country enters the restricted scenario with at least this many fact-checked claims.
    pub min_fc_claims: usize,
    /// A claim gets a per-claim row when fact-checked in at least this many countries.
    pub min_fc_countries: usize,
    pub kmax: usize,
    pub ci_level: f64,
    /// Day 0 for the first-fact-check day covariate.
    pub day_origin: NaiveDate,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            min_fc_claims: 10,
            min_fc_countries: 10,
            kmax: 10,
            ci_level: 0.95,
            day_origin: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        }
    }
}

/// Country scenarios for the per-country statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    All,
    MinFcClaims,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::All, Scenario::MinFcClaims];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::All => "all",
            Scenario::MinFcClaims => "min_fc_claims",
        }
    }
}

/// A statistic or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome<T> {
    Ok(T),
    Unavailable { n: usize, reason: String },
}

impl<T> Outcome<T> {
    fn from_result(r: Result<T, AnalysisError>, n: usize) -> Self {
        match r {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Unavailable { n, reason: e.to_string() },
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok(v) => Some(v),
            Outcome::Unavailable { .. } => None,
        }
    }
}

/// Mean of a sample with its standard error and, for n ≥ 2, a t interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub n: usize,
    pub mean: f64,
    pub standard_error: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

impl Estimate {
    fn of(values: &[f64], level: f64) -> Option<Self> {
        let s = summarize(values).ok()?;
        let (ci_lo, ci_hi) = match mean_ci(values, level) {
            Ok(c) => (Some(c.lower), Some(c.upper)),
            Err(_) => (None, None),
        };
        Some(Estimate { n: s.n, mean: s.mean, standard_error: s.standard_error, ci_lo, ci_hi })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub n: usize,
    pub summary: Option<DistributionSummary>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

impl SummaryRow {
    fn new(name: &str, summary: Option<DistributionSummary>, level: f64) -> Self {
        let ci = summary.filter(|s| s.n >= 2).map(|s| {
            let half = t_quantile(0.5 + level / 2.0, (s.n - 1) as f64) * s.standard_error;
            (s.mean - half, s.mean + half)
        });
        SummaryRow {
            name: name.to_string(),
            n: summary.map_or(0, |s| s.n),
            summary,
            ci_lo: ci.map(|c| c.0),
            ci_hi: ci.map(|c| c.1),
        }
    }
}

pub type BucketRow = SummaryRow;

/// One k of a per-country log-ratio curve, averaged over countries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkRow {
    pub k: usize,
    pub n: usize,
    pub estimate: Option<Estimate>,
    pub per_country: BTreeMap<String, f64>,
    pub skipped: BTreeMap<String, RatioSkip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub country: String,
    pub fact_checked_claims: usize,
    pub pct: f64,
    pub fact_checked_in_top: usize,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KthEstimate {
    pub k: usize,
    pub n: usize,
    pub estimate: Option<Estimate>,
}

/// First-fact-check aggregates for one claim or one country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub label: String,
    /// Fact-checked pairs in the group, including those with zero total.
    pub fact_checked: usize,
    pub n: usize,
    pub relative_attention: Estimate,
    pub total: Estimate,
    pub first_fc_day: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1 {
    pub fc_vs_nonfc: Vec<SummaryRow>,
    pub topk_log_ratios: BTreeMap<String, Vec<TopkRow>>,
    pub table2: Vec<Table2Row>,
    pub buckets: Vec<SummaryRow>,
    pub most_fc_vs_most_attention: BTreeMap<String, Vec<TopkRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq2 {
    pub relative_attention_at_k: Vec<KthEstimate>,
    pub per_claim: Vec<GroupRow>,
    pub per_country: Vec<GroupRow>,
    pub spearman: BTreeMap<String, Outcome<SpearmanResult>>,
    pub ancova: BTreeMap<String, Outcome<AncovaResult>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub profiles: usize,
    pub countries: usize,
    pub claims: usize,
    pub fact_checked_pairs: usize,
    pub factchecks: usize,
    pub positive_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub generated_at: String,
    /// Free-form context supplied by the caller (for example the pipeline configuration).
    pub provenance: BTreeMap<String, serde_json::Value>,
    pub parameters: AnalysisParams,
    pub counts: Counts,
    pub scenario_countries: BTreeMap<String, Vec<String>>,
    pub rq1: Rq1,
    pub rq2: Rq2,
}

/// One fact-checked pair with positive total: its first-fact-check statistics.
struct FirstFc<'a> {
    profile: &'a AttentionProfile,
    rel: f64,
    day: f64,
}

fn first_fc_rows<'a>(profiles: impl Iterator<Item = &'a AttentionProfile>, origin: NaiveDate) -> Vec<FirstFc<'a>> {
    profiles
        .filter(|p| p.is_fact_checked() && p.total > 0.0)
        .map(|p| {
            let date = p.factcheck_dates[0];
            FirstFc {
                profile: p,
                rel: relative_attention_at(p, date).expect("total checked positive"),
                day: (date - origin).num_days() as f64,
            }
        })
        .collect()
}

fn topk_rows<P: Borrow<AttentionProfile> + Sync>(
    by_country: &BTreeMap<&str, Vec<P>>,
    countries: &[String],
    kmax: usize,
    level: f64,
    ratio: impl Fn(&[P], usize) -> Result<f64, RatioSkip> + Sync,
) -> Vec<TopkRow> {
    (1..=kmax)
        .map(|k| {
            let results: Vec<(String, Result<f64, RatioSkip>)> =
                countries.par_iter().map(|c| (c.clone(), ratio(&by_country[c.as_str()], k))).collect();
            let mut per_country = BTreeMap::new();
            let mut skipped = BTreeMap::new();
            for (c, r) in results {
                match r {
                    Ok(v) => {
                        per_country.insert(c, v);
                    }
                    Err(s) => {
                        skipped.insert(c, s);
                    }
                }
            }
            let values: Vec<f64> = per_country.values().copied().collect();
            TopkRow { k, n: values.len(), estimate: Estimate::of(&values, level), per_country, skipped }
        })
        .collect()
}

/// Groups first-fact-check rows, keeps groups passing `qualifies`, and runs
/// the aggregate, correlation and covariance analyses over them.
fn group_analysis(
    name: &str,
    rows: &[FirstFc],
    key: impl Fn(&AttentionProfile) -> (String, String),
    fact_checked: &BTreeMap<String, usize>,
    qualifies: impl Fn(&str) -> bool,
    level: f64,
    spearman_out: &mut BTreeMap<String, Outcome<SpearmanResult>>,
    ancova_out: &mut BTreeMap<String, Outcome<AncovaResult>>,
) -> Vec<GroupRow> {
    let mut groups: BTreeMap<String, (String, Vec<&FirstFc>)> = BTreeMap::new();
    for r in rows {
        let (g, label) = key(r.profile);
        if qualifies(&g) {
            groups.entry(g).or_insert_with(|| (label, Vec::new())).1.push(r);
        }
    }
    let out: Vec<GroupRow> = groups
        .iter()
        .map(|(g, (label, members))| {
            let col = |f: fn(&FirstFc) -> f64| -> Estimate {
                let v: Vec<f64> = members.iter().map(|m| f(m)).collect();
                Estimate::of(&v, level).expect("groups are non-empty")
            };
            GroupRow {
                group: g.clone(),
                label: label.clone(),
                fact_checked: fact_checked.get(g).copied().unwrap_or(0),
                n: members.len(),
                relative_attention: col(|m| m.rel),
                total: col(|m| m.profile.total),
                first_fc_day: col(|m| m.day),
            }
        })
        .collect();

    let rel: Vec<f64> = out.iter().map(|r| r.relative_attention.mean).collect();
    let total: Vec<f64> = out.iter().map(|r| r.total.mean).collect();
    let day: Vec<f64> = out.iter().map(|r| r.first_fc_day.mean).collect();
    spearman_out.insert(
        format!("{name}.relative_attention_vs_total"),
        Outcome::from_result(spearman(&rel, &total), rel.len()),
    );
    spearman_out.insert(
        format!("{name}.relative_attention_vs_first_fc_day"),
        Outcome::from_result(spearman(&rel, &day), rel.len()),
    );

    let members: Vec<(&String, &&FirstFc)> = groups.iter().flat_map(|(g, (_, m))| m.iter().map(move |r| (g, r))).collect();
    let y: Vec<f64> = members.iter().map(|(_, r)| r.rel).collect();
    let labels: Vec<String> = members.iter().map(|(g, _)| (*g).clone()).collect();
    let covariates = vec![
        members.iter().map(|(_, r)| r.profile.total).collect::<Vec<f64>>(),
        members.iter().map(|(_, r)| r.day).collect::<Vec<f64>>(),
    ];
    ancova_out.insert(name.to_string(), Outcome::from_result(ancova(&y, &labels, &covariates), y.len()));
    out
}

/// Computes every statistic of the report over `profiles`.
/// `generated_at` is set to the current time; everything else is a pure function of the inputs.
pub fn build_report(profiles: &[AttentionProfile], params: &AnalysisParams) -> AnalysisReport {
    let level = params.ci_level;
    let mut by_country: BTreeMap<&str, Vec<&AttentionProfile>> = BTreeMap::new();
    for p in profiles {
        by_country.entry(p.country.as_str()).or_default().push(p);
    }
    let fc_claims_per_country: BTreeMap<String, usize> =
        by_country.iter().map(|(c, ps)| (c.to_string(), ps.iter().filter(|p| p.is_fact_checked()).count())).collect();
    let mut fc_countries_per_claim: BTreeMap<String, usize> = BTreeMap::new();
    for p in profiles.iter().filter(|p| p.is_fact_checked()) {
        *fc_countries_per_claim.entry(p.entity.entity_id.clone()).or_default() += 1;
    }

    let all: Vec<String> = by_country.keys().map(|c| c.to_string()).collect();
    let restricted: Vec<String> =
        all.iter().filter(|c| fc_claims_per_country[c.as_str()] >= params.min_fc_claims).cloned().collect();
    let scenario_countries: BTreeMap<Scenario, &Vec<String>> =
        [(Scenario::All, &all), (Scenario::MinFcClaims, &restricted)].into_iter().collect();

    // Distributions of total attention.
    let totals = |fc: bool| -> Vec<f64> {
        profiles.iter().filter(|p| p.is_fact_checked() == fc).map(|p| p.total).collect()
    };
    let fc_vs_nonfc = vec![
        SummaryRow::new("fact_checked", summarize(&totals(true)).ok(), level),
        SummaryRow::new("not_fact_checked", summarize(&totals(false)).ok(), level),
    ];
    let buckets = bucket_by_fc_count(profiles).into_iter().map(|(b, s)| SummaryRow::new(b, s, level)).collect();

    let mut topk_log_ratios = BTreeMap::new();
    let mut most_fc = BTreeMap::new();
    for (scenario, countries) in &scenario_countries {
        topk_log_ratios.insert(
            scenario.name().to_string(),
            topk_rows(&by_country, countries, params.kmax, level, |ps, k| topk_log_ratio(ps, k)),
        );
        most_fc.insert(
            scenario.name().to_string(),
            topk_rows(&by_country, countries, params.kmax, level, |ps, k| most_fc_vs_most_attention_ratio(ps, k)),
        );
    }

    let table2 = restricted
        .iter()
        .map(|c| {
            let t = table2_pct(&by_country[c.as_str()]);
            Table2Row {
                country: c.clone(),
                fact_checked_claims: fc_claims_per_country[c],
                pct: t.pct,
                fact_checked_in_top: t.fact_checked,
                used: t.used,
            }
        })
        .collect();

    let relative_attention_at_k = (1..=params.kmax)
        .into_par_iter()
        .map(|k| {
            let v = rel_attention_values(profiles, k);
            KthEstimate { k, n: v.len(), estimate: Estimate::of(&v, level) }
        })
        .collect();

    let rows = first_fc_rows(profiles.iter(), params.day_origin);
    let mut spearman_out = BTreeMap::new();
    let mut ancova_out = BTreeMap::new();
    let restricted_set: BTreeSet<&str> = restricted.iter().map(String::as_str).collect();
    let per_claim = group_analysis(
        "per_claim",
        &rows,
        |p| (p.entity.entity_id.clone(), p.entity.display_name.clone()),
        &fc_countries_per_claim,
        |g| fc_countries_per_claim.get(g).copied().unwrap_or(0) >= params.min_fc_countries,
        level,
        &mut spearman_out,
        &mut ancova_out,
    );
    let per_country = group_analysis(
        "per_country",
        &rows,
        |p| (p.country.clone(), p.country.clone()),
        &fc_claims_per_country,
        |g| restricted_set.contains(g),
        level,
        &mut spearman_out,
        &mut ancova_out,
    );

    let claims: BTreeSet<&str> = profiles.iter().map(|p| p.entity.entity_id.as_str()).collect();
    AnalysisReport {
        generated_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        provenance: BTreeMap::new(),
        parameters: params.clone(),
        counts: Counts {
            profiles: profiles.len(),
            countries: all.len(),
            claims: claims.len(),
            fact_checked_pairs: profiles.iter().filter(|p| p.is_fact_checked()).count(),
            factchecks: profiles.iter().map(|p| p.fc_count()).sum(),
            positive_total: profiles.iter().filter(|p| p.total > 0.0).count(),
        },
        scenario_countries: scenario_countries.iter().map(|(s, c)| (s.name().to_string(), (*c).clone())).collect(),
        rq1: Rq1 { fc_vs_nonfc, topk_log_ratios, table2, buckets, most_fc_vs_most_attention: most_fc },
        rq2: Rq2 { relative_attention_at_k, per_claim, per_country, spearman: spearman_out, ancova: ancova_out },
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv<H: AsRef<str>>(dir: &Path, name: &str, header: &[H], rows: Vec<Vec<String>>) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(header.iter().map(|h| h.as_ref()))?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn estimate_cells(e: Option<&Estimate>) -> Vec<String> {
    vec![
        opt(e.map(|e| e.mean)),
        opt(e.map(|e| e.standard_error)),
        opt(e.and_then(|e| e.ci_lo)),
        opt(e.and_then(|e| e.ci_hi)),
    ]
}

/// Writes the report's tables as CSV files into `dir`.
pub fn write_tables_csv(report: &AnalysisReport, dir: &Path) -> Result<(), csv::Error> {
    std::fs::create_dir_all(dir)?;
    let dist = |section: &str, r: &SummaryRow| -> Vec<String> {
        let s = r.summary.as_ref();
        let mut row = vec![section.to_string(), r.name.clone(), r.n.to_string()];
        row.extend(
            [s.map(|s| s.mean), s.map(|s| s.standard_error), s.map(|s| s.p5), s.map(|s| s.q1)]
                .into_iter()
                .chain([s.map(|s| s.median), s.map(|s| s.q3), s.map(|s| s.p95)])
                .map(opt),
        );
        row
    };
    let mut rows: Vec<Vec<String>> = report.rq1.fc_vs_nonfc.iter().map(|r| dist("fc_vs_nonfc", r)).collect();
    rows.extend(report.rq1.buckets.iter().map(|r| dist("fc_count_bucket", r)));
    write_csv(dir, "distributions.csv", &["section", "name", "n", "mean", "standard_error", "p5", "q1", "median", "q3", "p95"], rows)?;

    write_csv(
        dir,
        "table2.csv",
        &["country", "fact_checked_claims", "pct_top10_fact_checked", "fact_checked_in_top", "used"],
        report
            .rq1
            .table2
            .iter()
            .map(|r| {
                vec![r.country.clone(), r.fact_checked_claims.to_string(), r.pct.to_string(), r.fact_checked_in_top.to_string(), r.used.to_string()]
            })
            .collect(),
    )?;

    for (file, map) in [
        ("topk_log_ratio.csv", &report.rq1.topk_log_ratios),
        ("most_fc_vs_most_attention.csv", &report.rq1.most_fc_vs_most_attention),
    ] {
        let rows = map
            .iter()
            .flat_map(|(s, rows)| {
                rows.iter().map(move |r| {
                    let mut v = vec![s.clone(), r.k.to_string(), r.n.to_string(), r.skipped.len().to_string()];
                    v.extend(estimate_cells(r.estimate.as_ref()));
                    v
                })
            })
            .collect();
        write_csv(dir, file, &["scenario", "k", "n", "skipped", "mean", "standard_error", "ci_lo", "ci_hi"], rows)?;
    }

    let rows = report
        .rq2
        .relative_attention_at_k
        .iter()
        .map(|r| {
            let mut v = vec![r.k.to_string(), r.n.to_string()];
            v.extend(estimate_cells(r.estimate.as_ref()));
            v
        })
        .collect();
    write_csv(dir, "relative_attention_at_k.csv", &["k", "n", "mean", "standard_error", "ci_lo", "ci_hi"], rows)?;

    for (file, groups) in [("per_claim.csv", &report.rq2.per_claim), ("per_country.csv", &report.rq2.per_country)] {
        let rows = groups
            .iter()
            .map(|g| {
                let mut v = vec![g.group.clone(), g.label.clone(), g.fact_checked.to_string(), g.n.to_string()];
                for e in [&g.relative_attention, &g.total, &g.first_fc_day] {
                    v.extend(estimate_cells(Some(e)));
                }
                v
            })
            .collect();
        let mut header: Vec<String> = ["group", "label", "fact_checked", "n"].map(String::from).to_vec();
        for p in ["relative_attention", "total", "first_fc_day"] {
            for s in ["mean", "standard_error", "ci_lo", "ci_hi"] {
                header.push(format!("{p}_{s}"));
            }
        }
        write_csv(dir, file, &header, rows)?;
    }

    let rows = report
        .rq2
        .spearman
        .iter()
        .map(|(name, o)| match o {
            Outcome::Ok(s) => vec![name.clone(), "ok".into(), s.n.to_string(), s.rho.to_string(), s.p_value.to_string(), String::new()],
            Outcome::Unavailable { n, reason } => {
                vec![name.clone(), "unavailable".into(), n.to_string(), String::new(), String::new(), reason.clone()]
            }
        })
        .collect();
    write_csv(dir, "spearman.csv", &["name", "status", "n", "rho", "p_value", "reason"], rows)?;

    let rows = report
        .rq2
        .ancova
        .iter()
        .map(|(name, o)| match o {
            Outcome::Ok(a) => vec![
                name.clone(),
                "ok".into(),
                a.n.to_string(),
                a.groups.to_string(),
                a.f.to_string(),
                a.p_value.to_string(),
                a.df_between.to_string(),
                a.df_resid.to_string(),
                a.saturated.to_string(),
                String::new(),
            ],
            Outcome::Unavailable { n, reason } => {
                let mut v = vec![name.clone(), "unavailable".into(), n.to_string()];
                v.extend(std::iter::repeat_n(String::new(), 6));
                v.push(reason.clone());
                v
            }
        })
        .collect();
    write_csv(
        dir,
        "ancova.csv",
        &["name", "status", "n", "groups", "f", "p_value", "df_between", "df_resid", "saturated", "reason"],
        rows,
    )
}

/// Writes one `x,y,ci_lo,ci_hi` CSV per figure series into `dir`.
pub fn write_plot_series(report: &AnalysisReport, dir: &Path) -> Result<(), csv::Error> {
    std::fs::create_dir_all(dir)?;
    const HEADER: [&str; 4] = ["x", "y", "ci_lo", "ci_hi"];
    let summary_rows = |rows: &[SummaryRow]| -> Vec<Vec<String>> {
        rows.iter()
            .map(|r| vec![r.name.clone(), opt(r.summary.map(|s| s.mean)), opt(r.ci_lo), opt(r.ci_hi)])
            .collect()
    };
    let est = |x: String, e: Option<&Estimate>| {
        vec![x, opt(e.map(|e| e.mean)), opt(e.and_then(|e| e.ci_lo)), opt(e.and_then(|e| e.ci_hi))]
    };
    write_csv(dir, "total_attention_fc_vs_nonfc.csv", &HEADER, summary_rows(&report.rq1.fc_vs_nonfc))?;
    write_csv(dir, "total_attention_by_fc_count.csv", &HEADER, summary_rows(&report.rq1.buckets))?;
    for (prefix, map) in [
        ("topk_log_ratio", &report.rq1.topk_log_ratios),
        ("most_fc_vs_most_attention", &report.rq1.most_fc_vs_most_attention),
    ] {
        for (scenario, rows) in map {
            let rows = rows.iter().map(|r| est(r.k.to_string(), r.estimate.as_ref())).collect();
            write_csv(dir, &format!("{prefix}_{scenario}.csv"), &HEADER, rows)?;
        }
    }
    let rows =
        report.rq2.relative_attention_at_k.iter().map(|r| est(r.k.to_string(), r.estimate.as_ref())).collect();
    write_csv(dir, "relative_attention_at_k.csv", &HEADER, rows)?;
    for (prefix, groups) in [("per_claim", &report.rq2.per_claim), ("per_country", &report.rq2.per_country)] {
        let rel = groups.iter().map(|g| est(g.label.clone(), Some(&g.relative_attention))).collect();
        write_csv(dir, &format!("{prefix}_relative_attention.csv"), &HEADER, rel)?;
        let tot = groups.iter().map(|g| est(g.label.clone(), Some(&g.total))).collect();
        write_csv(dir, &format!("{prefix}_total.csv"), &HEADER, tot)?;
    }
    Ok(())
}
