//! Misinformation-induced attention.
//!
//! For one ⟨entity, country⟩ with calibrated weekly volumes `v_k` in the
//! attention year, baseline `b` (mean volume of the baseline year) and
//! reference volume `r` (mean attention-year volume of the reference entity in
//! the same country), attention up to week `i` is
//! `Σ_{k≤i} max(v_k − b, 0) / r`. Total attention is the value at the last
//! week and relative attention at a date is attention at that date's week
//! divided by the total.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claimcluster::ClaimCluster;
use crate::ingest::FactCheckRecord;
use crate::kglink::EntityRef;
use crate::trendscal::{CacheError, CacheKey, CalibratedSeries, Calibration, Period, TrendsCache, Week};

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("no baseline-year data")]
    EmptyBaseline,
    #[error("reference volume must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("total attention is zero; relative attention is undefined")]
    ZeroTotal,
    #[error("no usable reference series for country {country}")]
    MissingReference { country: String },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Mean of the baseline-year series.
pub fn baseline(series: &[f64]) -> Result<f64, AttentionError> {
    if series.is_empty() {
        return Err(AttentionError::EmptyBaseline);
    }
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

pub fn attention_curve(series: &[f64], b: f64, r: f64) -> Result<Vec<f64>, AttentionError> {
    if !(r > 0.0) {
        return Err(AttentionError::NonPositiveReference(r));
    }
    let mut acc = 0.0;
    Ok(series
        .iter()
        .map(|v| {
            acc += (v - b).max(0.0);
            acc / r
        })
        .collect())
}

/// Which weeks form the baseline and which the attention year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionYears {
    pub baseline: Period,
    pub attention: Period,
}

impl Default for AttentionYears {
    fn default() -> Self {
        AttentionYears { baseline: Period::iso_years(2019, 2019), attention: Period::iso_years(2020, 2020) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionProfile {
    pub entity: EntityRef,
    pub country: String,
    pub cluster_id: String,
    pub b: f64,
    pub r: f64,
    /// First week of the attention year; `curve[i]` covers week `first_week + i`.
    pub first_week: Week,
    pub curve: Vec<f64>,
    pub total: f64,
    /// Interval guaranteed to contain the true total given rounding and calibration error.
    pub total_bounds: (f64, f64),
    pub factcheck_dates: Vec<NaiveDate>,
}

impl AttentionProfile {
    pub fn fc_count(&self) -> usize {
        self.factcheck_dates.len()
    }

    pub fn is_fact_checked(&self) -> bool {
        !self.factcheck_dates.is_empty()
    }
}

/// Attention at `date` divided by total attention. Dates before the first
/// week give 0 and dates after the last week give 1.
pub fn relative_attention_at(profile: &AttentionProfile, date: NaiveDate) -> Result<f64, AttentionError> {
    if !(profile.total > 0.0) {
        return Err(AttentionError::ZeroTotal);
    }
    let week = Week::containing(date);
    if week < profile.first_week {
        return Ok(0.0);
    }
    let i = profile.first_week.weeks_until(week) as usize;
    match profile.curve.get(i) {
        Some(c) => Ok((c / profile.total).min(1.0)),
        None => Ok(1.0),
    }
}

/// Values of `series` for each week of `period`; weeks the series lacks are
/// zero-filled. Returns the values and the number of filled weeks.
pub fn align_to_period(series: &CalibratedSeries, period: &Period) -> (Vec<f64>, usize) {
    let by_week: HashMap<Week, f64> = series.weeks.iter().copied().zip(series.values.iter().copied()).collect();
    let mut missing = 0;
    let values = period
        .weeks()
        .into_iter()
        .map(|w| {
            by_week.get(&w).copied().unwrap_or_else(|| {
                missing += 1;
                0.0
            })
        })
        .collect();
    (values, missing)
}

fn covered(series: &CalibratedSeries, period: &Period) -> bool {
    series.weeks.iter().any(|w| period.contains(*w))
}

/// Mean reference volume of the attention year and its guaranteed interval.
fn reference_volume(reference: &CalibratedSeries, years: &AttentionYears) -> (f64, (f64, f64)) {
    let (values, _) = align_to_period(reference, &years.attention);
    let r = values.iter().sum::<f64>() / values.len() as f64;
    let half = reference.quantum / 2.0;
    let lo = (r - half).max(0.0) * reference.error_bound.lo;
    let hi = (r + half) * reference.error_bound.hi;
    (r, (lo, hi))
}

/// Interval for the true total attention. Every observed integer hides up to
/// half a quantum of rounding, in each week and in the baseline mean, and the
/// whole series carries the calibration error of its scale.
pub fn total_bounds(entity2020: &[f64], b: f64, quantum: f64, error: (f64, f64), r_bounds: (f64, f64)) -> (f64, f64) {
    let a_lo: f64 = entity2020.iter().map(|v| (v - b - quantum).max(0.0)).sum();
    let a_hi: f64 = entity2020.iter().map(|v| (v - b + quantum).max(0.0)).sum();
    let lo = if r_bounds.1 > 0.0 { a_lo * error.0 / r_bounds.1 } else { 0.0 };
    let hi = if r_bounds.0 > 0.0 { a_hi * error.1 / r_bounds.0 } else { f64::INFINITY };
    (lo, hi)
}

/// Builds a profile from calibrated entity and reference series.
///
/// Returns `Ok(None)` when the entity series has no baseline-year weeks.
pub fn profile_from_series(
    entity: &EntityRef,
    cluster_id: &str,
    series: &CalibratedSeries,
    reference: &CalibratedSeries,
    years: &AttentionYears,
    factcheck_dates: Vec<NaiveDate>,
) -> Result<Option<AttentionProfile>, AttentionError> {
    if !covered(series, &years.baseline) {
        log::warn!("{} in {}: no baseline-year data, pair excluded", entity.entity_id, series.country);
        return Ok(None);
    }
    let (base, missing_base) = align_to_period(series, &years.baseline);
    let (att, missing_att) = align_to_period(series, &years.attention);
    if missing_base + missing_att > 0 {
        log::warn!(
            "{} in {}: {} missing weeks treated as zero",
            entity.entity_id,
            series.country,
            missing_base + missing_att
        );
    }
    let b = baseline(&base)?;
    let (r, r_bounds) = reference_volume(reference, years);
    let curve = attention_curve(&att, b, r)?;
    let total = curve.last().copied().unwrap_or(0.0);
    let bounds = total_bounds(
        &att,
        b,
        series.quantum,
        (series.error_bound.lo, series.error_bound.hi),
        r_bounds,
    );
    let mut dates = factcheck_dates;
    dates.sort();
    Ok(Some(AttentionProfile {
        entity: entity.clone(),
        country: series.country.clone(),
        cluster_id: cluster_id.to_string(),
        b,
        r,
        first_week: years.attention.start,
        curve,
        total,
        total_bounds: bounds,
        factcheck_dates: dates,
    }))
}

/// Pairs that produced no profile, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub entity_id: String,
    pub country: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub profiles: Vec<AttentionProfile>,
    pub skipped: Vec<SkippedPair>,
}

/// Fact-check dates per (entity id, country) from the records of linked clusters.
pub fn factcheck_index(
    clusters: &[ClaimCluster],
    records: &[FactCheckRecord],
) -> BTreeMap<(String, String), Vec<NaiveDate>> {
    let by_id: HashMap<u32, &FactCheckRecord> = records.iter().map(|r| (r.id, r)).collect();
    let mut out: BTreeMap<(String, String), Vec<NaiveDate>> = BTreeMap::new();
    for c in clusters {
        let Some(entity) = &c.entity else { continue };
        for id in &c.member_ids {
            if let Some(r) = by_id.get(id) {
                out.entry((entity.entity_id.clone(), r.country_code.clone())).or_default().push(r.date);
            }
        }
    }
    for dates in out.values_mut() {
        dates.sort();
    }
    out
}

/// Countries present in the cache (one directory each).
pub fn cached_countries(cache: &TrendsCache) -> Result<Vec<String>, AttentionError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(cache.root())? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

/// One profile per ⟨linked entity, country⟩ with a calibrated series.
///
/// A country without a usable reference series fails the whole build with an
/// error naming it.
pub fn build_profiles(
    cache: &TrendsCache,
    clusters: &[ClaimCluster],
    records: &[FactCheckRecord],
    reference_entity: &str,
    countries: &[String],
    period: &Period,
    years: &AttentionYears,
) -> Result<ProfileSet, AttentionError> {
    let fc = factcheck_index(clusters, records);
    let linked: Vec<(&EntityRef, &str)> =
        clusters.iter().filter_map(|c| c.entity.as_ref().map(|e| (e, c.cluster_id.as_str()))).collect();
    let entity_ids: BTreeSet<&str> = linked.iter().map(|(e, _)| e.entity_id.as_str()).collect();

    let per_country: Vec<Result<ProfileSet, AttentionError>> = countries
        .par_iter()
        .map(|country| {
            let missing = || AttentionError::MissingReference { country: country.clone() };
            let reference = match cache.get(&CacheKey::new(reference_entity, country, *period))? {
                Some(hit) => match hit.calibration {
                    Calibration::Series(s) => s,
                    Calibration::NoSignal => return Err(missing()),
                },
                None => return Err(missing()),
            };
            let (r, _) = reference_volume(&reference, years);
            if !(r > 0.0) {
                return Err(missing());
            }
            let mut set = ProfileSet { profiles: Vec::new(), skipped: Vec::new() };
            for (entity, cluster_id) in &linked {
                let skip = |reason: &str| SkippedPair {
                    entity_id: entity.entity_id.clone(),
                    country: country.clone(),
                    reason: reason.to_string(),
                };
                let key = CacheKey::new(&entity.entity_id, country, *period);
                let series = match cache.get(&key)? {
                    Some(hit) => match hit.calibration {
                        Calibration::Series(s) => s,
                        Calibration::NoSignal => {
                            set.skipped.push(skip("no signal"));
                            continue;
                        }
                    },
                    None => {
                        set.skipped.push(skip("not fetched"));
                        continue;
                    }
                };
                let dates = fc.get(&(entity.entity_id.clone(), country.clone())).cloned().unwrap_or_default();
                match profile_from_series(entity, cluster_id, &series, &reference, years, dates)? {
                    Some(p) => set.profiles.push(p),
                    None => set.skipped.push(skip("no baseline-year data")),
                }
            }
            Ok(set)
        })
        .collect();

    let mut out = ProfileSet { profiles: Vec::new(), skipped: Vec::new() };
    for r in per_country {
        let set = r?;
        out.profiles.extend(set.profiles);
        out.skipped.extend(set.skipped);
    }
    debug_assert!(out.profiles.iter().all(|p| entity_ids.contains(p.entity.entity_id.as_str())));
    out.profiles.sort_by(|a, b| (&a.country, &a.entity.entity_id).cmp(&(&b.country, &b.entity.entity_id)));
    Ok(out)
}
