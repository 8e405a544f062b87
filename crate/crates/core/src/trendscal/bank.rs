use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{fetch_group, Period, TrendsError, TrendsProvider, Week};
use crate::net::RetryPolicy;

/// Multiplicative uncertainty: `true / estimate` lies in `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub lo: f64,
    pub hi: f64,
}

/// Half-width of the rounding interval around an observed integer.
const HALF: f64 = 0.5;

impl ErrorBound {
    pub const EXACT: ErrorBound = ErrorBound { lo: 1.0, hi: 1.0 };

    /// Bound for the ratio estimate `num / den` of two rounded observations.
    pub fn ratio(num: u32, den: u32) -> Self {
        let (n, d) = (num as f64, den as f64);
        let est = n / d;
        ErrorBound { lo: ((n - HALF) / (d + HALF)) / est, hi: ((n + HALF) / (d - HALF)) / est }
    }

    /// Bound for a scale estimated as `c / m` from a rounded observation `m`.
    pub fn reciprocal(m: u32) -> Self {
        let m = m as f64;
        ErrorBound { lo: m / (m + HALF), hi: m / (m - HALF) }
    }

    pub fn compose(self, other: ErrorBound) -> Self {
        ErrorBound { lo: self.lo * other.lo, hi: self.hi * other.hi }
    }

    /// Largest relative deviation allowed by the bound.
    pub fn relative(self) -> f64 {
        (self.hi - 1.0).max(1.0 - self.lo)
    }

    /// Whether `truth` is consistent with `estimate` (with a few ulps of slack).
    pub fn contains(self, truth: f64, estimate: f64) -> bool {
        let slack = 1e-12;
        truth >= estimate * self.lo * (1.0 - slack) && truth <= estimate * self.hi * (1.0 + slack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    /// Observed maxima below this carry too much rounding error to be used.
    pub lo_band: u32,
    pub retry: RetryPolicy,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { lo_band: 10, retry: RetryPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub query: String,
    /// Peak popularity relative to the reference query's peak.
    pub ratio: f64,
    pub error: ErrorBound,
    /// Anchor this one was co-queried with; `None` for the reference.
    pub parent: Option<String>,
    /// Number of co-query links between this anchor and the reference.
    pub chain: usize,
    /// Smallest observed maximum along the chain.
    pub min_value: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCandidate {
    pub query: String,
    pub reason: String,
}

/// Per-country ladder of anchors; the reference comes first with ratio 1 and
/// ratios strictly decrease along the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorBank {
    pub country: String,
    pub period: Period,
    pub reference: String,
    pub anchors: Vec<Anchor>,
    #[serde(default)]
    pub excluded: Vec<ExcludedCandidate>,
}

impl AnchorBank {
    pub fn find(&self, query: &str) -> Option<&Anchor> {
        self.anchors.iter().find(|a| a.query == query)
    }

    pub fn validate(&self) -> Result<(), String> {
        let first = self.anchors.first().ok_or("bank has no anchors")?;
        if first.query != self.reference || first.ratio != 1.0 || first.error != ErrorBound::EXACT {
            return Err("reference must come first with ratio 1 and no error".into());
        }
        for w in self.anchors.windows(2) {
            if !(w[1].ratio < w[0].ratio) {
                return Err(format!("ratio of {} does not decrease", w[1].query));
            }
        }
        for a in &self.anchors[1..] {
            if !(a.error.lo.is_finite() && a.error.hi.is_finite() && a.error.relative() > 0.0) {
                return Err(format!("anchor {} has a degenerate error bound", a.query));
            }
        }
        Ok(())
    }
}

fn pair_maxima(
    provider: &dyn TrendsProvider,
    a: &str,
    b: &str,
    country: &str,
    period: &Period,
    retry: &RetryPolicy,
) -> Result<(Option<u32>, Option<u32>), TrendsError> {
    let queries = [a.to_string(), b.to_string()];
    match fetch_group(provider, &queries, country, period, retry) {
        Ok(r) => Ok((r.series[0].max(), r.series[1].max())),
        Err(TrendsError::NoSignal { .. }) => Ok((None, None)),
        Err(e) => Err(e),
    }
}

/// Builds the anchor bank for `country`. `candidates[0]` is the reference;
/// the rest should be roughly ordered by decreasing popularity.
///
/// Each candidate is co-queried with the most recently accepted anchor, then
/// with earlier ones, until both maxima land in `[lo_band, 100]`; its ratio is
/// the parent's ratio times the observed pair ratio. Candidates with no usable
/// pairing are excluded. Fails when candidates were given but none could be
/// linked.
pub fn build_anchor_bank(
    provider: &dyn TrendsProvider,
    candidates: &[String],
    country: &str,
    period: &Period,
    cfg: &CalibrationConfig,
) -> Result<AnchorBank, TrendsError> {
    let failed = |reason: String| TrendsError::BankFailed { country: country.to_string(), reason };
    let reference = candidates.first().ok_or_else(|| failed("no candidates".into()))?;
    match fetch_group(provider, std::slice::from_ref(reference), country, period, &cfg.retry) {
        Ok(_) => {}
        Err(TrendsError::NoSignal { .. }) => return Err(failed(format!("reference {reference} is empty"))),
        Err(e) => return Err(e),
    }

    let mut accepted = vec![Anchor {
        query: reference.clone(),
        ratio: 1.0,
        error: ErrorBound::EXACT,
        parent: None,
        chain: 0,
        min_value: 100,
    }];
    let mut excluded = Vec::new();
    for cand in &candidates[1..] {
        if accepted.iter().any(|a| &a.query == cand) {
            excluded.push(ExcludedCandidate { query: cand.clone(), reason: "duplicate".into() });
            continue;
        }
        let mut best = None;
        for parent in accepted.iter().rev() {
            let (mp, mc) = pair_maxima(provider, &parent.query, cand, country, period, &cfg.retry)?;
            let (Some(mp), Some(mc)) = (mp, mc) else { continue };
            if mp < cfg.lo_band || mc < cfg.lo_band {
                continue;
            }
            best = Some(Anchor {
                query: cand.clone(),
                ratio: parent.ratio * mc as f64 / mp as f64,
                error: parent.error.compose(ErrorBound::ratio(mc, mp)),
                parent: Some(parent.query.clone()),
                chain: parent.chain + 1,
                min_value: parent.min_value.min(mp).min(mc),
            });
            break;
        }
        match best {
            Some(a) if a.ratio < 1.0 => accepted.push(a),
            Some(_) => excluded.push(ExcludedCandidate {
                query: cand.clone(),
                reason: "not less popular than the reference".into(),
            }),
            None => excluded.push(ExcludedCandidate {
                query: cand.clone(),
                reason: "every pairing saturated or came back empty".into(),
            }),
        }
    }

    let reference_anchor = accepted.remove(0);
    accepted.sort_by(|a, b| b.ratio.total_cmp(&a.ratio));
    let mut anchors = vec![reference_anchor];
    for a in accepted {
        if a.ratio < anchors.last().map_or(f64::INFINITY, |l| l.ratio) {
            anchors.push(a);
        } else {
            excluded.push(ExcludedCandidate { query: a.query, reason: "ties a more popular anchor".into() });
        }
    }
    if candidates.len() >= 2 && anchors.len() == 1 {
        return Err(failed("no candidate could be linked to the reference".into()));
    }
    Ok(AnchorBank {
        country: country.to_string(),
        period: *period,
        reference: reference.clone(),
        anchors,
        excluded,
    })
}

/// Weekly values of one query in reference units (the reference query's peak
/// over the period is 100).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedSeries {
    pub entity_id: String,
    pub country: String,
    pub period: Period,
    pub weeks: Vec<Week>,
    pub values: Vec<f64>,
    /// Uncertainty of the series scale.
    pub error_bound: ErrorBound,
    /// Size of one observed integer step in reference units.
    pub quantum: f64,
    pub anchor: String,
    pub chain_len: usize,
    pub min_co_value: u32,
}

impl CalibratedSeries {
    pub fn validate(&self) -> Result<(), String> {
        if self.weeks.len() != self.values.len() {
            return Err(format!("{} weeks but {} values", self.weeks.len(), self.values.len()));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("negative or non-finite value".into());
        }
        if self.weeks.windows(2).any(|w| w[0].next() != w[1]) {
            return Err("weeks are not contiguous".into());
        }
        Ok(())
    }

    /// Interval guaranteed to contain the true value of week `k`.
    pub fn value_bounds(&self, k: usize) -> (f64, f64) {
        let v = self.values[k];
        let half = self.quantum * HALF;
        (self.error_bound.lo * (v - half).max(0.0), self.error_bound.hi * (v + half))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Calibration {
    Series(CalibratedSeries),
    NoSignal,
}

#[derive(Debug, Clone, Copy)]
struct Probe {
    entity: Option<u32>,
    anchor: Option<u32>,
}

fn build_series(
    entity: &str,
    bank: &AnchorBank,
    anchor: &Anchor,
    observed: &[u32],
    anchor_max: u32,
    entity_max: u32,
    period: &Period,
) -> CalibratedSeries {
    let scale = anchor.ratio * 100.0 / anchor_max as f64;
    CalibratedSeries {
        entity_id: entity.to_string(),
        country: bank.country.clone(),
        period: *period,
        weeks: period.weeks(),
        values: observed.iter().map(|&o| o as f64 * scale).collect(),
        error_bound: anchor.error.compose(ErrorBound::reciprocal(anchor_max)),
        quantum: scale,
        anchor: anchor.query.clone(),
        chain_len: anchor.chain + 1,
        min_co_value: anchor.min_value.min(anchor_max).min(entity_max),
    }
}

/// Expresses `entity` in reference units via the bank.
///
/// A binary search over the ladder finds where the entity stops being less
/// popular than the anchor; of the two anchors around that point the one
/// giving the larger smaller-maximum is used (both maxima must be in the
/// informative band when possible). Returns [`Calibration::NoSignal`] when
/// the entity is empty even against the least popular anchor.
pub fn calibrate(
    provider: &dyn TrendsProvider,
    bank: &AnchorBank,
    entity: &str,
    country: &str,
    period: &Period,
    cfg: &CalibrationConfig,
) -> Result<Calibration, TrendsError> {
    if bank.country != country {
        return Err(TrendsError::CountryMismatch { bank: bank.country.clone(), country: country.to_string() });
    }
    if let Some(anchor) = bank.find(entity) {
        let q = [entity.to_string()];
        return match fetch_group(provider, &q, country, period, &cfg.retry) {
            Ok(r) => {
                let values = r.series[0].values.as_deref().unwrap_or_default();
                Ok(Calibration::Series(build_series(entity, bank, anchor, values, 100, 100, period)))
            }
            Err(TrendsError::NoSignal { .. }) => Ok(Calibration::NoSignal),
            Err(e) => Err(e),
        };
    }

    let mut probes: HashMap<usize, (Probe, Option<Vec<u32>>)> = HashMap::new();
    let mut probe = |j: usize| -> Result<Probe, TrendsError> {
        if let Some((p, _)) = probes.get(&j) {
            return Ok(*p);
        }
        let q = [entity.to_string(), bank.anchors[j].query.clone()];
        let (p, values) = match fetch_group(provider, &q, country, period, &cfg.retry) {
            Ok(r) => (
                Probe { entity: r.series[0].max(), anchor: r.series[1].max() },
                r.series[0].values.clone(),
            ),
            Err(TrendsError::NoSignal { .. }) => (Probe { entity: None, anchor: None }, None),
            Err(e) => return Err(e),
        };
        probes.insert(j, (p, values));
        Ok(p)
    };

    // First anchor the entity dominates (entity max == 100).
    let n = bank.anchors.len();
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if probe(mid)?.entity == Some(100) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut candidates = Vec::new();
    if lo > 0 {
        candidates.push(lo - 1);
    }
    if lo < n {
        candidates.push(lo);
    }
    let mut scored = Vec::new();
    for &j in &candidates {
        let p = probe(j)?;
        if let (Some(e), Some(a)) = (p.entity, p.anchor) {
            scored.push((j, e, a));
        }
    }
    let in_band = |&(_, e, a): &(usize, u32, u32)| e >= cfg.lo_band && a >= cfg.lo_band;
    let pick = scored
        .iter()
        .filter(|s| in_band(s))
        .max_by_key(|(j, e, a)| ((*e).min(*a), std::cmp::Reverse(*j)))
        .or_else(|| scored.iter().max_by_key(|(j, e, a)| ((*e).min(*a), std::cmp::Reverse(*j))))
        .copied();

    match pick {
        Some((j, e, a)) => {
            if !(e >= cfg.lo_band && a >= cfg.lo_band) {
                log::warn!("{entity} in {country}: calibrated outside the informative band ({e}, {a})");
            }
            let values = probes[&j].1.clone().unwrap_or_default();
            Ok(Calibration::Series(build_series(entity, bank, &bank.anchors[j], &values, a, e, period)))
        }
        None if lo == 0 => Err(TrendsError::AboveBank { entity: entity.to_string(), country: country.to_string() }),
        None => Ok(Calibration::NoSignal),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trendscal::{QuerySeries, RawGroupResponse};
    use std::collections::BTreeMap;

    /// Provider over fixed true series applying group-max normalization.
    struct Table {
        series: BTreeMap<String, Vec<f64>>,
    }

    impl TrendsProvider for Table {
        fn fetch_group(&self, queries: &[String], country: &str, period: &Period) -> Result<RawGroupResponse, TrendsError> {
            let n = period.len();
            let max = queries
                .iter()
                .filter_map(|q| self.series.get(q))
                .flat_map(|s| s.iter().copied())
                .fold(0.0, f64::max);
            Ok(RawGroupResponse {
                country: country.into(),
                period: *period,
                series: queries
                    .iter()
                    .map(|q| QuerySeries {
                        query: q.clone(),
                        values: self.series.get(q).and_then(|s| {
                            let v: Vec<u32> = s.iter().map(|x| (100.0 * x / max).round() as u32).collect();
                            (s.iter().sum::<f64>() / n as f64 >= 0.01 * max).then_some(v)
                        }),
                    })
                    .collect(),
            })
        }
    }

    fn flat(level: f64) -> Vec<f64> {
        vec![level; Period::study().len()]
    }

    fn cfg() -> CalibrationConfig {
        CalibrationConfig { lo_band: 10, retry: RetryPolicy::no_wait(1) }
    }

    #[test]
    fn error_bound_interval_arithmetic() {
        let b = ErrorBound::ratio(20, 100);
        assert!((b.lo * 0.2 - 19.5 / 100.5).abs() < 1e-15);
        assert!((b.hi * 0.2 - 20.5 / 99.5).abs() < 1e-15);
        let r = ErrorBound::reciprocal(50);
        assert!((r.lo - 50.0 / 50.5).abs() < 1e-15 && (r.hi - 50.0 / 49.5).abs() < 1e-15);
        assert_eq!(ErrorBound::EXACT.compose(b), b);
        assert!(b.contains(0.2 * 1.01, 0.2) && !b.contains(0.2 * 1.1, 0.2));
    }

    #[test]
    fn two_candidate_bank() {
        let p = Table { series: BTreeMap::from([("ref".into(), flat(500.0)), ("a".into(), flat(100.0))]) };
        let bank = build_anchor_bank(&p, &["ref".into(), "a".into()], "BR", &Period::study(), &cfg()).unwrap();
        bank.validate().unwrap();
        let a = bank.find("a").unwrap();
        assert_eq!(a.ratio, 0.2);
        assert_eq!(a.error, ErrorBound::ratio(20, 100));
        assert_eq!((a.chain, a.parent.as_deref()), (1, Some("ref")));
    }

    #[test]
    fn degenerate_and_failing_banks() {
        let p = Table {
            series: BTreeMap::from([("ref".into(), flat(1000.0)), ("tiny".into(), flat(1.0))]),
        };
        let only = build_anchor_bank(&p, &["ref".into()], "BR", &Period::study(), &cfg()).unwrap();
        assert_eq!(only.anchors.len(), 1);
        only.validate().unwrap();

        let err = build_anchor_bank(&p, &["ref".into(), "tiny".into()], "BR", &Period::study(), &cfg());
        assert!(matches!(err, Err(TrendsError::BankFailed { .. })));
    }

    #[test]
    fn unlinkable_candidate_is_excluded() {
        let p = Table {
            series: BTreeMap::from([
                ("ref".into(), flat(1000.0)),
                ("a".into(), flat(500.0)),
                ("ghost".into(), flat(0.5)),
            ]),
        };
        let bank =
            build_anchor_bank(&p, &["ref".into(), "ghost".into(), "a".into()], "BR", &Period::study(), &cfg()).unwrap();
        assert_eq!(bank.anchors.iter().map(|a| a.query.as_str()).collect::<Vec<_>>(), vec!["ref", "a"]);
        assert_eq!(bank.excluded.len(), 1);
        assert_eq!(bank.excluded[0].query, "ghost");
    }

    #[test]
    fn direct_reference_calibration() {
        let mut e = flat(100.0);
        e[60] = 250.0;
        let p = Table { series: BTreeMap::from([("ref".into(), flat(500.0)), ("e".into(), e)]) };
        let period = Period::study();
        let bank = build_anchor_bank(&p, &["ref".into()], "BR", &period, &cfg()).unwrap();
        let Calibration::Series(s) = calibrate(&p, &bank, "e", "BR", &period, &cfg()).unwrap() else {
            panic!("expected series")
        };
        // reference max 100, entity max 50: entity values are half the reference scale
        assert_eq!(s.anchor, "ref");
        assert_eq!(s.values[60], 50.0);
        assert_eq!(s.values[0], 20.0);
        assert_eq!(s.quantum, 1.0);

        let Calibration::Series(r) = calibrate(&p, &bank, "ref", "BR", &period, &cfg()).unwrap() else {
            panic!("expected series")
        };
        assert!(r.values.iter().all(|&v| v == 100.0));
        s.validate().unwrap();
    }

    #[test]
    fn no_signal_below_every_anchor() {
        let p = Table {
            series: BTreeMap::from([
                ("ref".into(), flat(1000.0)),
                ("a".into(), flat(300.0)),
                ("mute".into(), flat(0.01)),
            ]),
        };
        let period = Period::study();
        let bank = build_anchor_bank(&p, &["ref".into(), "a".into()], "BR", &period, &cfg()).unwrap();
        assert_eq!(calibrate(&p, &bank, "mute", "BR", &period, &cfg()).unwrap(), Calibration::NoSignal);
        assert!(matches!(
            calibrate(&p, &bank, "mute", "AR", &period, &cfg()),
            Err(TrendsError::CountryMismatch { .. })
        ));
    }
}
