//! Weekly search interest on a country-universal scale.
//!
//! Trends providers answer *groups* of up to five queries; every answer is
//! normalized so the largest weekly value across the group is 100 and then
//! rounded to integers, and low-volume queries come back empty. Anchor banks
//! (chains of queries with measured popularity ratios to a reference query)
//! undo that normalization: an entity co-queried with a suitable anchor can
//! be expressed in reference units, together with a rigorous multiplicative
//! error interval that accounts for integer rounding.

mod bank;
mod cache;
mod live;
mod week;

pub use bank::{
    build_anchor_bank, calibrate, Anchor, AnchorBank, CalibratedSeries, Calibration, CalibrationConfig, ErrorBound,
    ExcludedCandidate,
};
pub use cache::{CacheError, CacheKey, CachedResult, TrendsCache};
pub use live::{parse_group_response, LiveTrendsProvider, TRENDS_API_KEY_VAR};
pub use week::{Period, Week, WeekParseError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::RetryPolicy;

/// Largest group a provider accepts in one request.
pub const MAX_GROUP: usize = 5;

#[derive(Debug, Error)]
pub enum TrendsError {
    #[error("a group must hold 1..=5 queries, got {0}")]
    GroupSize(usize),
    #[error("transport error: {message}")]
    Transport { message: String, retriable: bool },
    #[error("no signal for {queries:?} in {country}")]
    NoSignal { country: String, queries: Vec<String> },
    #[error("provider response violates the group contract: {0}")]
    Contract(String),
    #[error("anchor bank for {country} could not be built: {reason}")]
    BankFailed { country: String, reason: String },
    #[error("entity {entity} is more popular than every anchor in {country}")]
    AboveBank { entity: String, country: String },
    #[error("bank for {bank} used for country {country}")]
    CountryMismatch { bank: String, country: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl TrendsError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, TrendsError::Transport { retriable: true, .. })
    }
}

/// One query's weekly values within a group response; `None` when the
/// provider withheld it for low volume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySeries {
    pub query: String,
    pub values: Option<Vec<u32>>,
}

impl QuerySeries {
    pub fn max(&self) -> Option<u32> {
        self.values.as_ref().and_then(|v| v.iter().copied().max())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawGroupResponse {
    pub country: String,
    pub period: Period,
    pub series: Vec<QuerySeries>,
}

impl RawGroupResponse {
    pub fn get(&self, query: &str) -> Option<&QuerySeries> {
        self.series.iter().find(|s| s.query == query)
    }

    pub fn is_all_empty(&self) -> bool {
        self.series.iter().all(|s| s.values.is_none())
    }

    /// Checks the group contract: one series per query, the period's length,
    /// values within 0..=100 and a group maximum of exactly 100.
    pub fn validate(&self, queries: &[String]) -> Result<(), TrendsError> {
        if self.series.len() != queries.len() {
            return Err(TrendsError::Contract(format!(
                "{} series for {} queries",
                self.series.len(),
                queries.len()
            )));
        }
        let n = self.period.len();
        let mut group_max = None;
        for (s, q) in self.series.iter().zip(queries) {
            if &s.query != q {
                return Err(TrendsError::Contract(format!("series for `{}` where `{q}` was asked", s.query)));
            }
            if let Some(v) = &s.values {
                if v.len() != n {
                    return Err(TrendsError::Contract(format!("`{q}` has {} weeks, expected {n}", v.len())));
                }
                if v.iter().any(|&x| x > 100) {
                    return Err(TrendsError::Contract(format!("`{q}` has a value above 100")));
                }
                group_max = group_max.max(s.max());
            }
        }
        match group_max {
            None | Some(100) => Ok(()),
            Some(m) => Err(TrendsError::Contract(format!("group maximum is {m}, not 100"))),
        }
    }
}

/// Source of group-normalized weekly search interest.
pub trait TrendsProvider: Send + Sync {
    fn fetch_group(&self, queries: &[String], country: &str, period: &Period) -> Result<RawGroupResponse, TrendsError>;
}

/// Fetches one group with retries, validates the response, and turns an
/// all-empty answer into [`TrendsError::NoSignal`].
pub fn fetch_group(
    provider: &dyn TrendsProvider,
    queries: &[String],
    country: &str,
    period: &Period,
    retry: &RetryPolicy,
) -> Result<RawGroupResponse, TrendsError> {
    if queries.is_empty() || queries.len() > MAX_GROUP {
        return Err(TrendsError::GroupSize(queries.len()));
    }
    let resp = retry.run(|| provider.fetch_group(queries, country, period), TrendsError::is_retriable)?;
    resp.validate(queries)?;
    if resp.is_all_empty() {
        return Err(TrendsError::NoSignal { country: country.to_string(), queries: queries.to_vec() });
    }
    Ok(resp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        fails: AtomicUsize,
    }

    impl TrendsProvider for Flaky {
        fn fetch_group(&self, queries: &[String], country: &str, period: &Period) -> Result<RawGroupResponse, TrendsError> {
            if self.fails.load(Ordering::SeqCst) > 0 {
                self.fails.fetch_sub(1, Ordering::SeqCst);
                return Err(TrendsError::Transport { message: "timeout".into(), retriable: true });
            }
            let n = period.len();
            Ok(RawGroupResponse {
                country: country.into(),
                period: *period,
                series: queries
                    .iter()
                    .enumerate()
                    .map(|(i, q)| QuerySeries {
                        query: q.clone(),
                        values: if q == "empty" { None } else { Some(vec![100 / (i as u32 + 1); n]) },
                    })
                    .collect(),
            })
        }
    }

    #[test]
    fn fetch_group_retries_and_validates() {
        let p = Flaky { fails: AtomicUsize::new(2) };
        let period = Period::study();
        let q = vec!["a".to_string(), "b".to_string()];
        let r = fetch_group(&p, &q, "BR", &period, &RetryPolicy::no_wait(3)).unwrap();
        assert_eq!(r.get("a").unwrap().max(), Some(100));
        assert_eq!(r.get("b").unwrap().max(), Some(50));

        let p = Flaky { fails: AtomicUsize::new(5) };
        assert!(matches!(
            fetch_group(&p, &q, "BR", &period, &RetryPolicy::no_wait(3)),
            Err(TrendsError::Transport { .. })
        ));
    }

    #[test]
    fn group_size_and_no_signal() {
        let p = Flaky { fails: AtomicUsize::new(0) };
        let period = Period::study();
        let six: Vec<String> = (0..6).map(|i| i.to_string()).collect();
        assert!(matches!(fetch_group(&p, &six, "BR", &period, &RetryPolicy::no_wait(1)), Err(TrendsError::GroupSize(6))));
        assert!(matches!(fetch_group(&p, &[], "BR", &period, &RetryPolicy::no_wait(1)), Err(TrendsError::GroupSize(0))));
        let r = fetch_group(&p, &["empty".to_string()], "BR", &period, &RetryPolicy::no_wait(1));
        assert!(matches!(r, Err(TrendsError::NoSignal { .. })));
    }

    #[test]
    fn contract_violations_are_caught() {
        let period = Period::study();
        let n = period.len();
        let resp = RawGroupResponse {
            country: "BR".into(),
            period,
            series: vec![QuerySeries { query: "a".into(), values: Some(vec![80; n]) }],
        };
        assert!(matches!(resp.validate(&["a".into()]), Err(TrendsError::Contract(_))));
        let short = RawGroupResponse {
            series: vec![QuerySeries { query: "a".into(), values: Some(vec![100; 3]) }],
            ..resp
        };
        assert!(short.validate(&["a".into()]).is_err());
    }
}
